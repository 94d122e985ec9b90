//! Prompt assembly, embedding injection, losses, task heads, and the three
//! training procedures: contrastive stage 1, alignment stage 2, and
//! few-shot adaptation with the compressor and backbone frozen.

mod fewshot;
mod head;
mod loss;
mod prompt;
mod stage1;
mod stage2;

pub use fewshot::{fewshot_adapt, FewshotOutcome};
pub use head::{apply_head, TaskHead, TaskHeadVars, TaskKind};
pub use loss::{info_nce, info_nce_value};
pub use prompt::{
    assemble_prompt, inject_embeddings, AssembledPrompt, Prompt, PromptTemplate,
};
pub use stage1::{train_stage1, Stage1Model, Stage1Outcome};
pub use stage2::{train_stage2, Stage2Model, Stage2Outcome};

use thiserror::Error;

#[derive(Error, Debug)]
pub enum PipelineError {
    #[error("instruction does not reference <|graph|>")]
    MissingGraphToken,
    #[error("prompt places a placeholder more than once")]
    DuplicatePlaceholder,
    #[error("row {row} of a similarity batch has norm {norm}, expected 1")]
    NotNormalized { row: usize, norm: f64 },
    #[error("frozen parameters changed during {0}")]
    FrozenViolation(String),
    #[error("task `{0}` is not known to this model")]
    UnknownTask(String),
    #[error("no labeled examples for task `{0}`")]
    NoLabeledExamples(String),
    #[error("template error: {0}")]
    Template(String),
    #[error(transparent)]
    Parse(#[from] crate::molgraph::ParseError),
    #[error(transparent)]
    Numerics(#[from] crate::tensor::NumericsError),
    #[error(transparent)]
    Encoder(#[from] crate::encoders::EncoderError),
    #[error(transparent)]
    Backbone(#[from] crate::backbone::BackboneError),
    #[error(transparent)]
    Aligner(#[from] crate::aligner::AlignerError),
    #[error(transparent)]
    Vocab(#[from] crate::vocab::VocabError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
}
