//! Multi-view domain prompts: learnable context rows prepended to frozen
//! word-embedding rows, in an image, a positive and a negative view.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::{hash_into, Graph, Tensor, Var};
use crate::rng::{stream, DetRng};
use crate::stubclip::{ClipStub, TemplateBank};

/// Standard deviation of context-row initialization.
pub const CONTEXT_STD: f64 = 0.02;

/// Default context length.
pub const DEFAULT_CONTEXT_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    StaticKeyword,
    StaticComplete,
    LearnableKeyword,
    LearnableShared,
    LearnableComplete,
}

impl PromptMode {
    pub fn is_learnable(self) -> bool {
        !matches!(self, Self::StaticKeyword | Self::StaticComplete)
    }

    pub fn is_complete(self) -> bool {
        !matches!(self, Self::StaticKeyword | Self::LearnableKeyword)
    }
}

impl Default for PromptMode {
    fn default() -> Self {
        Self::LearnableComplete
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Image,
    Positive,
    Negative,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [Self::Image, Self::Positive, Self::Negative];

    fn slot(self) -> usize {
        match self {
            Self::Image => 0,
            Self::Positive => 1,
            Self::Negative => 2,
        }
    }
}

/// Context matrices `u`, `v`, `w`.
///
/// The three views index into `blocks`; in shared mode they all point at
/// block 0, so a write through any view is seen by the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptParams {
    mode: PromptMode,
    context_len: usize,
    d_tok: usize,
    blocks: Vec<Tensor>,
    views: [usize; 3],
}

impl PromptParams {
    pub fn init(mode: PromptMode, context_len: usize, d_tok: usize, seed: u64) -> Result<Self> {
        if context_len == 0 || d_tok == 0 {
            return Err(Error::config("context length and token width must be positive"));
        }
        let mut rng = DetRng::derive(seed, stream::PROMPT_INIT);
        let n_blocks = if mode == PromptMode::LearnableShared { 1 } else { 3 };
        let blocks = (0..n_blocks)
            .map(|_| {
                Tensor::new(
                    vec![context_len, d_tok],
                    rng.gaussian_vec(context_len * d_tok, CONTEXT_STD),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let views = if n_blocks == 1 { [0, 0, 0] } else { [0, 1, 2] };
        Ok(Self {
            mode,
            context_len,
            d_tok,
            blocks,
            views,
        })
    }

    pub fn mode(&self) -> PromptMode {
        self.mode
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn d_tok(&self) -> usize {
        self.d_tok
    }

    /// Context rows the assemblies actually carry (0 in static modes).
    pub fn active_rows(&self) -> usize {
        if self.mode.is_learnable() {
            self.context_len
        } else {
            0
        }
    }

    /// Index of the storage block behind `kind`.
    pub fn block_id(&self, kind: PromptKind) -> usize {
        self.views[kind.slot()]
    }

    pub fn context(&self, kind: PromptKind) -> &Tensor {
        &self.blocks[self.block_id(kind)]
    }

    pub fn context_mut(&mut self, kind: PromptKind) -> &mut Tensor {
        let i = self.block_id(kind);
        &mut self.blocks[i]
    }

    pub fn u(&self) -> &Tensor {
        self.context(PromptKind::Image)
    }

    pub fn v(&self) -> &Tensor {
        self.context(PromptKind::Positive)
    }

    pub fn w(&self) -> &Tensor {
        self.context(PromptKind::Negative)
    }

    pub fn blocks(&self) -> &[Tensor] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Tensor] {
        &mut self.blocks
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}/{}/{}/{:?}", self.mode, self.context_len, self.d_tok, self.views));
        for b in &self.blocks {
            hash_into(&mut h, b.shape(), b.values());
        }
        hex::encode(h.finalize())
    }

    /// Rebuilds params from stored blocks, validating their layout.
    pub fn from_parts(mode: PromptMode, context_len: usize, d_tok: usize, blocks: Vec<Tensor>) -> Result<Self> {
        let want = if mode == PromptMode::LearnableShared { 1 } else { 3 };
        if blocks.len() != want || blocks.iter().any(|b| b.shape() != [context_len, d_tok]) {
            return Err(Error::Format(format!(
                "prompt blocks do not match mode {mode:?} with shape ({context_len}, {d_tok})"
            )));
        }
        let views = if want == 1 { [0, 0, 0] } else { [0, 1, 2] };
        Ok(Self {
            mode,
            context_len,
            d_tok,
            blocks,
            views,
        })
    }
}

/// Context rows followed by frozen word rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptAssembly {
    pub kind: PromptKind,
    pub domain: String,
    pub category: Option<String>,
    /// Storage block supplying the context rows (`None` in static modes).
    pub context_block: Option<usize>,
    pub context_rows: usize,
    /// `(context_rows + suffix_len) x d_tok`
    pub rows: Tensor,
    pub suffix_len: usize,
}

/// Builds the three prompt views against a frozen text stub.
#[derive(Debug, Clone)]
pub struct PromptBuilder<'a> {
    clip: &'a ClipStub,
    templates: TemplateBank,
    template_index: usize,
    categories: Vec<String>,
}

/// Text standing in for the background class.
pub const BACKGROUND_TEXT: &str = "unknown class";

impl<'a> PromptBuilder<'a> {
    pub fn new(clip: &'a ClipStub, categories: &[String]) -> Self {
        Self {
            clip,
            templates: TemplateBank::builtin(),
            template_index: 0,
            categories: categories.to_vec(),
        }
    }

    pub fn with_templates(mut self, bank: TemplateBank, index: usize) -> Result<Self> {
        if index >= bank.len() {
            return Err(Error::config(format!("template index {index} out of range")));
        }
        self.templates = bank;
        self.template_index = index;
        Ok(self)
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn clip(&self) -> &ClipStub {
        self.clip
    }

    /// Frozen suffix text for an assembly.
    pub fn suffix_text(
        &self,
        mode: PromptMode,
        kind: PromptKind,
        domain: &str,
        category: Option<&str>,
    ) -> Result<String> {
        let complete = mode.is_complete();
        Ok(match (kind, complete) {
            (PromptKind::Image, true) => self.templates.fill(self.template_index, domain)?,
            (PromptKind::Image, false) => domain.to_string(),
            (PromptKind::Positive, c) => {
                let cat = category.ok_or_else(|| Error::input("positive prompt needs a category"))?;
                if !self.categories.iter().any(|k| k == cat) {
                    return Err(Error::input(format!("unknown category {cat:?}")));
                }
                if c {
                    format!("a {domain} photo of a {cat}")
                } else {
                    format!("{domain} {cat}")
                }
            }
            (PromptKind::Negative, true) => format!("a {domain} photo of an {BACKGROUND_TEXT}"),
            (PromptKind::Negative, false) => format!("{domain} {BACKGROUND_TEXT}"),
        })
    }

    fn assemble(
        &self,
        params: &PromptParams,
        kind: PromptKind,
        domain: &str,
        category: Option<&str>,
    ) -> Result<PromptAssembly> {
        if params.d_tok() != self.clip.d_tok() {
            return Err(Error::shape(format!(
                "prompt width {} vs encoder width {}",
                params.d_tok(),
                self.clip.d_tok()
            )));
        }
        let text = self.suffix_text(params.mode(), kind, domain, category)?;
        let ids = self.clip.vocab().tokenize_strict(&text)?;
        let suffix = self.clip.vocab().embed(&ids)?;
        let n = params.active_rows();
        let mut values = Vec::with_capacity((n + ids.len()) * params.d_tok());
        if n > 0 {
            values.extend_from_slice(params.context(kind).values());
        }
        values.extend_from_slice(suffix.values());
        Ok(PromptAssembly {
            kind,
            domain: domain.to_string(),
            category: category.map(str::to_string),
            context_block: (n > 0).then(|| params.block_id(kind)),
            context_rows: n,
            rows: Tensor::new(vec![n + ids.len(), params.d_tok()], values)?,
            suffix_len: ids.len(),
        })
    }

    pub fn image(&self, params: &PromptParams, domain: &str) -> Result<PromptAssembly> {
        self.assemble(params, PromptKind::Image, domain, None)
    }

    pub fn positive(&self, params: &PromptParams, domain: &str, category: &str) -> Result<PromptAssembly> {
        self.assemble(params, PromptKind::Positive, domain, Some(category))
    }

    pub fn negative(&self, params: &PromptParams, domain: &str) -> Result<PromptAssembly> {
        self.assemble(params, PromptKind::Negative, domain, None)
    }

    pub fn encode(&self, assembly: &PromptAssembly) -> Result<Vec<f64>> {
        self.clip.text_encode(&assembly.rows)
    }

    /// Encodes `assembly` in `g`, routing its context rows through `ctx`
    /// (the graph node of the assembly's context block).
    pub fn encode_var(&self, g: &mut Graph, assembly: &PromptAssembly, ctx: Option<Var>) -> Result<Var> {
        let d = assembly.rows.shape()[1];
        let suffix_start = assembly.context_rows * d;
        let suffix = g.constant_vec(
            vec![assembly.suffix_len, d],
            assembly.rows.values()[suffix_start..].to_vec(),
        )?;
        let rows = match (assembly.context_rows, ctx) {
            (0, _) => suffix,
            (_, Some(c)) => g.concat(&[c, suffix])?,
            (_, None) => {
                let c = g.constant_vec(
                    vec![assembly.context_rows, d],
                    assembly.rows.values()[..suffix_start].to_vec(),
                )?;
                g.concat(&[c, suffix])?
            }
        };
        self.clip.text_encode_var(g, rows)
    }
}

/// Graph handles for every prompt block, created once per graph.
#[derive(Debug, Clone)]
pub struct PromptVars {
    pub blocks: Vec<Var>,
    pub views: [usize; 3],
    pub trainable: bool,
}

impl PromptVars {
    /// Blocks enter as tracked params when `trainable`, constants otherwise.
    pub fn new(g: &mut Graph, params: &PromptParams, trainable: bool) -> Self {
        let trainable = trainable && params.mode().is_learnable();
        let blocks = params
            .blocks()
            .iter()
            .map(|b| if trainable { g.param(b) } else { g.constant(b) })
            .collect();
        Self {
            blocks,
            views: params.views,
            trainable,
        }
    }

    pub fn get(&self, kind: PromptKind) -> Var {
        self.blocks[self.views[kind.slot()]]
    }
}

/// Encoded prompt table for one domain: categories, then background.
#[derive(Debug, Clone)]
pub struct PromptTable {
    pub positives: Vec<Var>,
    pub negative: Var,
}

impl PromptBuilder<'_> {
    pub fn image_var(&self, g: &mut Graph, params: &PromptParams, vars: &PromptVars, domain: &str) -> Result<Var> {
        let a = self.image(params, domain)?;
        self.encode_var(g, &a, Some(vars.get(PromptKind::Image)))
    }

    pub fn table_var(
        &self,
        g: &mut Graph,
        params: &PromptParams,
        vars: &PromptVars,
        domain: &str,
    ) -> Result<PromptTable> {
        let v = vars.get(PromptKind::Positive);
        let positives = self
            .categories
            .iter()
            .map(|c| {
                let a = self.positive(params, domain, c)?;
                self.encode_var(g, &a, Some(v))
            })
            .collect::<Result<Vec<_>>>()?;
        let a = self.negative(params, domain)?;
        let negative = self.encode_var(g, &a, Some(vars.get(PromptKind::Negative)))?;
        Ok(PromptTable { positives, negative })
    }

    /// Plain-value prompt table (categories then background).
    pub fn table(&self, params: &PromptParams, domain: &str) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.categories.len() + 1);
        for c in &self.categories {
            out.push(self.encode(&self.positive(params, domain, c)?)?);
        }
        out.push(self.encode(&self.negative(params, domain)?)?);
        Ok(out)
    }
}
