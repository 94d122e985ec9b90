//! Prompt construction and embedding injection.
//!
//! A prompt has four parts: the IUPAC name, the graph token slot, the
//! domain task, and the instruction. The instruction text references the
//! molecule with one `<|graph|>` marker; the layout template decides where
//! the graph token actually sits (right after the IUPAC name by default),
//! and the instruction's marker is consumed by that slot. Regression
//! instructions carry one `<|value|>` placeholder, tokenized in place.

use super::PipelineError;
use crate::aligner::value_placeholder_embedding;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::vocab::{Vocab, BOS, EOS, GRAPH, GRAPH_LITERAL, VALUE, VALUE_LITERAL};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    /// May be empty when the dataset has no name for the molecule.
    pub iupac: String,
    pub domain_task: String,
    /// Must mention `<|graph|>` exactly once; mentions `<|value|>` iff the
    /// task is a regression.
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

pub const DEFAULT_TEMPLATE: &str = "{iupac} <|graph|> {task} {instruction}";

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            text: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

fn count(haystack: &str, needle: &str) -> usize {
    haystack.matches(needle).count()
}

impl PromptTemplate {
    pub fn new(text: &str) -> Result<Self, PipelineError> {
        for slot in ["{iupac}", "{task}", "{instruction}"] {
            if count(text, slot) != 1 {
                return Err(PipelineError::Template(format!(
                    "template must contain `{slot}` exactly once"
                )));
            }
        }
        if count(text, GRAPH_LITERAL) > 1 || count(text, VALUE_LITERAL) > 0 {
            return Err(PipelineError::Template(
                "template may place <|graph|> at most once and never <|value|>".into(),
            ));
        }
        Ok(PromptTemplate {
            text: text.to_string(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Template(format!("{}: {e}", path.display())))?;
        Self::new(text.trim_end())
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitutes the prompt fields into the layout. When the template
    /// sites the graph token itself, the instruction's marker is consumed;
    /// otherwise the marker stays inside the instruction text.
    pub fn render(&self, p: &Prompt) -> Result<String, PipelineError> {
        match count(&p.instruction, GRAPH_LITERAL) {
            0 => return Err(PipelineError::MissingGraphToken),
            1 => {}
            _ => return Err(PipelineError::DuplicatePlaceholder),
        }
        if count(&p.iupac, GRAPH_LITERAL) + count(&p.domain_task, GRAPH_LITERAL) > 0 {
            return Err(PipelineError::DuplicatePlaceholder);
        }
        let value_mentions = count(&p.iupac, VALUE_LITERAL)
            + count(&p.domain_task, VALUE_LITERAL)
            + count(&p.instruction, VALUE_LITERAL);
        if value_mentions > 1 {
            return Err(PipelineError::DuplicatePlaceholder);
        }

        let instruction = if count(&self.text, GRAPH_LITERAL) == 1 {
            p.instruction.replacen(GRAPH_LITERAL, "", 1)
        } else {
            p.instruction.clone()
        };
        Ok(self
            .text
            .replace("{iupac}", &p.iupac)
            .replace("{task}", &p.domain_task)
            .replace("{instruction}", &instruction))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledPrompt {
    pub ids: Vec<usize>,
    pub graph_pos: usize,
    pub value_pos: Option<usize>,
}

/// Tokenized prompt layout `[BOS] iupac GRAPH task instruction [EOS]`
/// (under the default template), with the placeholder positions reported.
pub fn assemble_prompt(
    p: &Prompt,
    vocab: &Vocab,
    template: &PromptTemplate,
) -> Result<AssembledPrompt, PipelineError> {
    let text = template.render(p)?;
    let mut ids = vec![BOS];
    ids.extend(vocab.tokenize(&text));
    ids.push(EOS);

    let graph_positions: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == GRAPH)
        .map(|(i, _)| i)
        .collect();
    let graph_pos = match graph_positions.as_slice() {
        [] => return Err(PipelineError::MissingGraphToken),
        [one] => *one,
        _ => return Err(PipelineError::DuplicatePlaceholder),
    };
    let value_positions: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == VALUE)
        .map(|(i, _)| i)
        .collect();
    let value_pos = match value_positions.as_slice() {
        [] => None,
        [one] => Some(*one),
        _ => return Err(PipelineError::DuplicatePlaceholder),
    };
    Ok(AssembledPrompt {
        ids,
        graph_pos,
        value_pos,
    })
}

/// Builds the `L x D` input sequence on the tape: embedding rows
/// everywhere except the graph slot (replaced by the graph token, keeping
/// its gradient path) and the value slot (the constant vocabulary mean).
pub fn inject_on_tape(
    tape: &mut Tape,
    m: Var,
    prompt: &AssembledPrompt,
    token_row: Var,
) -> Result<Var, PipelineError> {
    let base = tape.embedding_lookup(m, &prompt.ids)?;
    let with_graph = tape.set_row(base, prompt.graph_pos, token_row)?;
    match prompt.value_pos {
        Some(vp) => {
            let mean = value_placeholder_embedding(tape.value(m));
            let mean_row = tape.constant(mean.reshaped(vec![1, tape.value(m).ncols()])?);
            Ok(tape.set_row(with_graph, vp, mean_row)?)
        }
        None => Ok(with_graph),
    }
}

/// Value-level injection over a finished graph token.
pub fn inject_embeddings(
    prompt: &AssembledPrompt,
    token: &crate::aligner::GraphToken,
    m: &Tensor,
) -> Result<Tensor, PipelineError> {
    let mut tape = Tape::new();
    let mv = tape.frozen(m.clone());
    let row = tape.constant(
        token
            .embedding
            .reshaped(vec![1, token.embedding.numel()])?,
    );
    let injected = inject_on_tape(&mut tape, mv, prompt, row)?;
    Ok(tape.value(injected).clone())
}
