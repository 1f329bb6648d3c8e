use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use zsda_core::pipeline::{
    initial_params, preamble, run_ablation, run_gradient_suite, sig, stage1_train, stage2_finetune, warmup_head,
    zero_shot_eval, AblationSpec, BlobKind, Checkpoint, Context, DetectorHead, DomainMetrics, ExperimentConfig,
    PoolWeights, RunReport,
};
use zsda_core::rng::{stream, DetRng};

use crate::config::{CliConfig, ReportFormat};
use crate::exit::Failure;

fn write(dir: &Path, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Checkpoint::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))
}

fn write_reports(cfg: &CliConfig, stem: &str, report: &RunReport) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let dir = &cfg.output.dir;
    if cfg.output.formats.contains(&ReportFormat::Json) {
        out.push(write(dir, &format!("{stem}_report.json"), report.to_json()?.as_bytes())?);
    }
    if cfg.output.formats.contains(&ReportFormat::Csv) {
        out.push(write(dir, &format!("{stem}_loss.csv"), report.loss_csv().as_bytes())?);
    }
    Ok(out)
}

/// Warm-up plus stage 1; writes `stage1.ckpt` and the stage-1 reports.
pub fn train_prompt(cfg: &CliConfig) -> anyhow::Result<Vec<PathBuf>> {
    let exp = &cfg.experiment;
    let train = &exp.train;
    let ctx = Context::new(exp)?;
    let mut report = ctx.report(train);
    let init = initial_params(&ctx, train)?;
    let (head, warm) = warmup_head(&ctx, train, &init.prompts, DetectorHead::from_clip(&ctx.clip))?;
    report.absorb(warm);
    let frozen = if train.toggles.any_loss() {
        let s1 = stage1_train(&ctx, train, &head)?;
        report.absorb(s1.report);
        s1.frozen
    } else {
        init
    };
    let hashes = ctx.hashes(&frozen.prompts, &frozen.enhance, Some(&head));
    report.hashes = Some(hashes.clone());
    let ck = Checkpoint {
        kind: BlobKind::Stage1,
        experiment: exp.clone(),
        frozen,
        head,
        hashes,
    };
    let mut out = vec![write(&cfg.output.dir, "stage1.ckpt", &ck.to_bytes()?)?];
    out.extend(write_reports(cfg, "stage1", &report)?);
    Ok(out)
}

/// The experiment stage 2 runs under: the checkpoint's, with the stage-2
/// schedule and seed taken from `--config` when one is given. The stage-1
/// schedule always comes from the checkpoint, so `--preset` is harmless here.
fn finetune_experiment(ck: &Checkpoint, cfg: Option<&CliConfig>) -> anyhow::Result<ExperimentConfig> {
    let Some(cfg) = cfg else {
        return Ok(ck.experiment.clone());
    };
    let mut want = cfg.experiment.clone();
    let mut have = ck.experiment.clone();
    have.train.stage1 = want.train.stage1.clone();
    have.train.stage2 = want.train.stage2.clone();
    have.train.seed = want.train.seed;
    if have != want {
        return Err(Failure::config(
            "config disagrees with the checkpoint outside the stage-2 schedule and seed",
        ));
    }
    want.train.stage1 = ck.experiment.train.stage1.clone();
    Ok(want)
}

pub fn finetune(cfg: &CliConfig, explicit: bool, checkpoint: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let ck = load_checkpoint(checkpoint)?;
    if ck.kind != BlobKind::Stage1 {
        return Err(Failure::config(format!("{} is not a stage-1 checkpoint", checkpoint.display())));
    }
    let exp = finetune_experiment(&ck, explicit.then_some(cfg))?;
    exp.validate()?;
    let ctx = Context::new(&exp)?;
    let train = &exp.train;
    let mut report = ctx.report(train);
    let s2 = stage2_finetune(&ctx, train, Some(&ck.frozen), ck.head.clone())?;
    report.absorb(s2.report);
    let hashes = report.hashes.clone().expect("stage 2 records hashes");
    let model = Checkpoint {
        kind: BlobKind::Model,
        experiment: exp.clone(),
        frozen: ck.frozen,
        head: s2.head,
        hashes,
    };
    let mut out = vec![write(&cfg.output.dir, "model.ckpt", &model.to_bytes()?)?];
    out.extend(write_reports(cfg, "finetune", &report)?);
    Ok(out)
}

fn check_domains(exp: &ExperimentConfig, domains: &[String]) -> anyhow::Result<()> {
    for d in domains {
        if !exp.world.domains.contains(d) {
            return Err(Failure::config(format!(
                "unknown domain {d:?}; known: {}",
                exp.world.domains.join(", ")
            )));
        }
    }
    Ok(())
}

fn metrics_table(categories: &[String], rows: &[DomainMetrics]) -> String {
    let width = rows.iter().map(|m| m.domain.len()).max().unwrap_or(6).max(6);
    let mut s = format!("{:<width$}", "domain");
    for c in categories {
        let _ = write!(s, " {c:>7}");
    }
    s.push_str("     mAP  enhance\n");
    for m in rows {
        let _ = write!(s, "{:<width$}", m.domain);
        for ap in &m.per_category_ap {
            match ap {
                Some(v) => {
                    let _ = write!(s, " {:>7.2}", 100.0 * v);
                }
                None => s.push_str("       -"),
            }
        }
        let _ = writeln!(s, " {:>7.2} {:>8}", 100.0 * m.map, m.enhance_invocations);
    }
    s
}

fn metrics_csv(hash: &str, seed: u64, categories: &[String], rows: &[DomainMetrics]) -> String {
    let mut s = preamble(hash, seed);
    s.push_str("domain");
    for c in categories {
        let _ = write!(s, ",ap_{}", c.replace(' ', "_"));
    }
    s.push_str(",map,enhance_invocations\n");
    for m in rows {
        s.push_str(&m.domain);
        for ap in &m.per_category_ap {
            s.push(',');
            if let Some(v) = ap {
                s.push_str(&sig(*v));
            }
        }
        let _ = writeln!(s, ",{},{}", sig(m.map), m.enhance_invocations);
    }
    s
}

/// Zero-shot evaluation; returns the printed table and the CSV path.
pub fn eval(checkpoint: &Path, domains: &[String], out: &Path) -> anyhow::Result<(String, PathBuf)> {
    let ck = load_checkpoint(checkpoint)?;
    let exp = &ck.experiment;
    let domains = if domains.is_empty() { exp.eval_domains() } else { domains.to_vec() };
    check_domains(exp, &domains)?;
    let ctx = Context::new(exp)?;
    let rows = domains
        .iter()
        .map(|d| zero_shot_eval(&ctx, &exp.train, &ck.head, &ck.frozen, d))
        .collect::<zsda_core::Result<Vec<_>>>()?;
    let cats = ctx.world.categories();
    let csv = metrics_csv(&ck.config_hash(), exp.train.seed, cats, &rows);
    let path = write(out, "eval.csv", csv.as_bytes())?;
    Ok((metrics_table(cats, &rows), path))
}

fn threads_from_env() -> anyhow::Result<Option<usize>> {
    match std::env::var("ZSDA_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::config(format!("ZSDA_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

pub fn ablate(spec: &AblationSpec, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let table = run_ablation(spec, threads_from_env()?)?;
    let csv = write(out, "ablation.csv", table.to_csv().as_bytes())?;
    let json = write(out, "ablation_report.json", serde_json::to_string_pretty(&table)?.as_bytes())?;
    Ok(vec![csv, json])
}

/// Image embeddings under the fine-tuned projection, one row per
/// `(domain, scene)`. Scene `i` has the same layout in every domain.
pub fn export_embeddings(checkpoint: &Path, domains: &[String], scenes: usize, out: &Path) -> anyhow::Result<PathBuf> {
    if domains.is_empty() {
        return Err(Failure::config("export-embeddings needs at least one domain"));
    }
    let ck = load_checkpoint(checkpoint)?;
    let exp = &ck.experiment;
    check_domains(exp, domains)?;
    let ctx = Context::new(exp)?;
    let cfg = &exp.world;
    let pool = PoolWeights::image(cfg.height, cfg.width)?;
    let dim = ck.head.projection.shape()[0];
    let mut s = preamble(&ck.config_hash(), exp.train.seed);
    s.push_str("domain,scene_index");
    for k in 0..dim {
        let _ = write!(s, ",e{k}");
    }
    s.push('\n');
    for d in domains {
        for i in 0..scenes {
            let mut rng = DetRng::indexed(exp.train.seed, stream::EXPORT, i as u64);
            let scene = ctx.world.sample_scene(d, &mut rng)?;
            let e = ck.head.embed(&pool.pool(&scene.features)?)?;
            let _ = write!(s, "{d},{i}");
            for v in e {
                let _ = write!(s, ",{}", sig(v));
            }
            s.push('\n');
        }
    }
    write(out, "embeddings.csv", s.as_bytes())
}

/// Runs the gradient suite; the summary is returned even on failure.
pub fn gradcheck(seeds: usize, fault: f64) -> anyhow::Result<String> {
    let report = run_gradient_suite(seeds, fault)?;
    let mut s = String::new();
    for e in &report.entries {
        let _ = writeln!(
            s,
            "{:<28} {:>4} seeds  max rel err {:.3e}  {}",
            e.name,
            e.seeds,
            e.max_rel_error,
            if e.passed { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<String> = report
        .entries
        .iter()
        .filter(|e| !e.passed)
        .map(|e| format!("{} ({:.3e})", e.name, e.max_rel_error))
        .collect();
    let _ = writeln!(s, "{} checks, {} failed", report.entries.len(), failed.len());
    if failed.is_empty() {
        Ok(s)
    } else {
        print!("{s}");
        Err(Failure::verification(format!("gradient check failed: {}", failed.join(", "))))
    }
}
