//! ConvTransE scoring of candidate entities and relations.
//!
//! The two query embeddings are stacked into a `2×d` input, convolved with
//! `K` kernels of width `w` (same-length padding), passed through RReLU,
//! flattened, dropped out and projected back to `d`. Candidate scores are
//! dot products of that vector with the candidate embedding table, squashed
//! by a sigmoid.

use crate::evolution::{EvolutionState, StateVars};
use crate::model::{DecoderParams, DecoderVars, ModelError, ModelParams, Result};
use crate::tensor::{Mode, Tape, Tensor, Var};

/// Decoder trunk for a batch: `e1`, `e2` are `[Q×d]`, the result `[Q×d]`.
pub fn convtranse_core(tape: &mut Tape, e1: Var, e2: Var, dec: &DecoderVars, dropout: f64) -> Result<Var> {
    let (q, d) = match tape.shape(e1) {
        [q, d] => (*q, *d),
        s => {
            return Err(ModelError::Config(format!(
                "decoder input must be [Q×d], got {s:?}"
            )))
        }
    };
    let kshape = tape.shape(dec.kernels).to_vec();
    let (k, w) = (kshape[0], kshape[2]);
    if d < w {
        return Err(ModelError::Config(format!(
            "dimension {d} is narrower than the kernel width {w}"
        )));
    }
    let joined = tape.concat_cols(e1, e2)?;
    let stacked = tape.reshape(joined, vec![q, 2, d])?;
    let conv = tape.conv1d(stacked, dec.kernels, (w - 1) / 2)?;
    let act = tape.rrelu(conv);
    let flat = tape.reshape(act, vec![q, k * d])?;
    let flat = tape.dropout(flat, dropout)?;
    Ok(tape.matmul(flat, dec.fc)?)
}

fn check_ids(ids: impl Iterator<Item = usize>, size: usize, kind: &'static str) -> Result<()> {
    for id in ids {
        if id >= size {
            return Err(ModelError::IdOutOfRange { kind, id, size });
        }
    }
    Ok(())
}

/// Pre-sigmoid entity scores `H_t · core(h_s, r)` for `(s, r)` queries.
pub fn entity_logits(
    tape: &mut Tape,
    state: StateVars,
    queries: &[(u32, u32)],
    dec: &DecoderVars,
    dropout: f64,
) -> Result<Var> {
    let n = tape.shape(state.entities)[0];
    let nr = tape.shape(state.relations)[0];
    check_ids(queries.iter().map(|q| q.0 as usize), n, "entity")?;
    check_ids(queries.iter().map(|q| q.1 as usize), nr, "relation")?;
    let subjects: Vec<usize> = queries.iter().map(|q| q.0 as usize).collect();
    let relations: Vec<usize> = queries.iter().map(|q| q.1 as usize).collect();
    let e1 = tape.gather_rows(state.entities, &subjects)?;
    let e2 = tape.gather_rows(state.relations, &relations)?;
    let core = convtranse_core(tape, e1, e2, dec, dropout)?;
    Ok(tape.matmul_nt(core, state.entities)?)
}

/// Pre-sigmoid relation scores `R_t · core(h_s, h_o)` for `(s, o)` queries.
pub fn relation_logits(
    tape: &mut Tape,
    state: StateVars,
    queries: &[(u32, u32)],
    dec: &DecoderVars,
    dropout: f64,
) -> Result<Var> {
    let n = tape.shape(state.entities)[0];
    check_ids(
        queries.iter().flat_map(|q| [q.0 as usize, q.1 as usize]),
        n,
        "entity",
    )?;
    let subjects: Vec<usize> = queries.iter().map(|q| q.0 as usize).collect();
    let objects: Vec<usize> = queries.iter().map(|q| q.1 as usize).collect();
    let e1 = tape.gather_rows(state.entities, &subjects)?;
    let e2 = tape.gather_rows(state.entities, &objects)?;
    let core = convtranse_core(tape, e1, e2, dec, dropout)?;
    Ok(tape.matmul_nt(core, state.relations)?)
}

/// Probabilities over all entities for each `(s, r)` query, `[Q×|V|]`.
pub fn score_entity_batch(
    tape: &mut Tape,
    state: StateVars,
    queries: &[(u32, u32)],
    dec: &DecoderVars,
    dropout: f64,
) -> Result<Var> {
    let logits = entity_logits(tape, state, queries, dec, dropout)?;
    Ok(tape.sigmoid(logits))
}

/// Probabilities over all relations for each `(s, o)` query, `[Q×2|R|]`.
pub fn score_relation_batch(
    tape: &mut Tape,
    state: StateVars,
    queries: &[(u32, u32)],
    dec: &DecoderVars,
    dropout: f64,
) -> Result<Var> {
    let logits = relation_logits(tape, state, queries, dec, dropout)?;
    Ok(tape.sigmoid(logits))
}

fn bind_decoder(tape: &mut Tape, dec: &DecoderParams) -> DecoderVars {
    DecoderVars {
        kernels: tape.constant(dec.kernels.clone()),
        fc: tape.constant(dec.fc.clone()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Entity,
    Relation,
}

/// Queries scored per tape in [`score_queries`]; keeps the `[Q×K·d]`
/// intermediates cache-sized.
pub const SCORE_CHUNK: usize = 128;

/// Scores a batch of queries against a fixed state without recording
/// gradients. Returns `[Q×candidates]` probabilities.
pub fn score_queries(
    params: &ModelParams,
    state: &EvolutionState,
    task: Task,
    queries: &[(u32, u32)],
    mode: Mode,
    seed: u64,
) -> Result<Tensor> {
    let candidates = match task {
        Task::Entity => state.entities.rows(),
        Task::Relation => state.relations.rows(),
    };
    let decoder = match task {
        Task::Entity => &params.entity_decoder,
        Task::Relation => &params.relation_decoder,
    };
    let mut tape = Tape::new(mode, seed);
    let sv = StateVars::from_state(state, &mut tape);
    let dec = bind_decoder(&mut tape, decoder);
    let mut out = Vec::with_capacity(queries.len() * candidates);
    for chunk in queries.chunks(SCORE_CHUNK) {
        // the tape only grows; values of finished chunks are dropped below
        let mark = tape.len();
        let p = match task {
            Task::Entity => score_entity_batch(&mut tape, sv, chunk, &dec, params.config.decoder_dropout)?,
            Task::Relation => {
                score_relation_batch(&mut tape, sv, chunk, &dec, params.config.decoder_dropout)?
            }
        };
        out.extend_from_slice(tape.value(p).data());
        tape.truncate(mark);
    }
    Ok(Tensor::new(vec![queries.len(), candidates], out)?)
}

/// `p(o | s, r)` for every entity `o`.
pub fn score_entities(
    params: &ModelParams,
    state: &EvolutionState,
    subject: u32,
    relation: u32,
    mode: Mode,
) -> Result<Tensor> {
    let p = score_queries(params, state, Task::Entity, &[(subject, relation)], mode, 0)?;
    Ok(Tensor::vector(p.into_data()))
}

/// `p(r | s, o)` for every relation `r`.
pub fn score_relations(
    params: &ModelParams,
    state: &EvolutionState,
    subject: u32,
    object: u32,
    mode: Mode,
) -> Result<Tensor> {
    let p = score_queries(params, state, Task::Relation, &[(subject, object)], mode, 0)?;
    Ok(Tensor::vector(p.into_data()))
}
