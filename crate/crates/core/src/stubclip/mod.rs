//! Frozen stand-ins for a pretrained vision-language model: tokenizer and
//! vocabulary, domain template bank, and linear text/image encoders.

mod encoder;
mod templates;
mod vocab;

pub use encoder::{ClipConfig, ClipStub, IMAGE_SIDE, POOLED_SIDE, ROI_SIDE};
pub use templates::{TemplateBank, BANK_SIZE, SLOT};
pub use vocab::{normalize_tokens, Vocabulary, UNK, WORD_STD};
