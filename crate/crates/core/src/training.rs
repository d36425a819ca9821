//! Multi-task loss, Adam and the epoch loop.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, FactStore, Quadruple, Split, StaticGraph};
use crate::decoder::{entity_logits, relation_logits, Task};
use crate::eval::{evaluate, EvalError, EvalMode, EvalOptions};
use crate::evolution::{
    evolve, evolve_state, initial_state, static_constraint_loss, static_embeddings, EvolutionState, StateVars,
};
use crate::model::{DecoderVars, ModelConfig, ModelError, ModelParams, StaticShape};
use crate::tensor::{Mode, Tape, Tensor, TensorError, Var};

/// Probability clamp inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no gradient for trainable tensor '{0}'")]
    MissingGradient(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite {what} at epoch {epoch}")]
    NonFinite { what: &'static str, epoch: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSelector {
    Entity,
    Relation,
    Both,
}

impl TaskSelector {
    pub fn entity(self) -> bool {
        matches!(self, TaskSelector::Entity | TaskSelector::Both)
    }

    pub fn relation(self) -> bool {
        matches!(self, TaskSelector::Relation | TaskSelector::Both)
    }

    pub fn tasks(self) -> Vec<Task> {
        match self {
            TaskSelector::Entity => vec![Task::Entity],
            TaskSelector::Relation => vec![Task::Relation],
            TaskSelector::Both => vec![Task::Entity, Task::Relation],
        }
    }
}

impl FromStr for TaskSelector {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "entity" => Ok(TaskSelector::Entity),
            "relation" => Ok(TaskSelector::Relation),
            "both" => Ok(TaskSelector::Both),
            other => Err(format!(
                "unknown task '{other}' (expected entity, relation or both)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub history: usize,
    /// Angle step of the static constraint, in degrees.
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    pub task: TaskSelector,
    pub static_constraint: bool,
    pub time_gate: bool,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub kernels: usize,
    pub kernel_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 200,
            layers: 2,
            history: 3,
            gamma: 10.0,
            lambda1: 0.7,
            lambda2: 0.3,
            lr: 0.001,
            dropout: 0.2,
            epochs: 30,
            seed: 0,
            task: TaskSelector::Both,
            static_constraint: false,
            time_gate: true,
            grad_clip: Some(1.0),
            patience: 5,
            kernels: 50,
            kernel_width: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 {
            return Err(TrainError::Config("history length must be at least 1".into()));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(TrainError::Config("loss weights must be non-negative".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 || self.lr.is_infinite() {
            return Err(TrainError::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if self.gamma.is_nan() || self.gamma < 0.0 {
            return Err(TrainError::Config("gamma must be non-negative".into()));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(TrainError::Config("gradient clip must be positive".into()));
            }
        }
        Ok(())
    }

    /// Model architecture for a store of `num_entities` entities and an
    /// augmented relation vocabulary.
    pub fn model_config(
        &self,
        num_entities: usize,
        relation_vocab: usize,
        static_graph: Option<&StaticGraph>,
    ) -> ModelConfig {
        let mut c = ModelConfig::new(num_entities, relation_vocab, self.dim);
        c.layers = self.layers;
        c.gcn_dropout = self.dropout;
        c.decoder_dropout = self.dropout;
        c.kernels = self.kernels;
        c.kernel_width = self.kernel_width;
        c.time_gate = self.time_gate;
        c.static_graph = static_graph
            .filter(|_| self.static_constraint)
            .map(|g| StaticShape {
                num_properties: g.num_properties(),
                num_relations: g.num_static_relations,
            });
        c
    }
}

/// Multi-hot label rows, one per fact: row `i` marks every true object of
/// the query `(s_i, r_i)` among `facts`.
pub fn entity_labels(facts: &[Quadruple], num_entities: usize) -> Vec<f64> {
    let mut answers: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
    for f in facts {
        answers.entry((f.subject, f.relation)).or_default().push(f.object);
    }
    let mut labels = vec![0.0; facts.len() * num_entities];
    for (i, f) in facts.iter().enumerate() {
        for &o in &answers[&(f.subject, f.relation)] {
            labels[i * num_entities + o as usize] = 1.0;
        }
    }
    labels
}

/// As [`entity_labels`] for `(s, o)` queries over the relation vocabulary.
pub fn relation_labels(facts: &[Quadruple], num_relations: usize) -> Vec<f64> {
    let mut answers: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
    for f in facts {
        answers.entry((f.subject, f.object)).or_default().push(f.relation);
    }
    let mut labels = vec![0.0; facts.len() * num_relations];
    for (i, f) in facts.iter().enumerate() {
        for &r in &answers[&(f.subject, f.object)] {
            labels[i * num_relations + r as usize] = 1.0;
        }
    }
    labels
}

/// Mean over facts of the summed binary cross-entropy across all entities.
pub fn entity_loss(
    tape: &mut Tape,
    state: StateVars,
    facts: &[Quadruple],
    dec: &DecoderVars,
    dropout: f64,
) -> Result<Var> {
    if facts.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let n = tape.shape(state.entities)[0];
    let queries: Vec<(u32, u32)> = facts.iter().map(|f| (f.subject, f.relation)).collect();
    let logits = entity_logits(tape, state, &queries, dec, dropout)?;
    let probs = tape.sigmoid(logits);
    Ok(tape.bce(probs, entity_labels(facts, n), BCE_EPS)?)
}

/// Mean over facts of the summed binary cross-entropy across all relations.
pub fn relation_loss(
    tape: &mut Tape,
    state: StateVars,
    facts: &[Quadruple],
    dec: &DecoderVars,
    dropout: f64,
) -> Result<Var> {
    if facts.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let nr = tape.shape(state.relations)[0];
    let queries: Vec<(u32, u32)> = facts.iter().map(|f| (f.subject, f.object)).collect();
    let logits = relation_logits(tape, state, &queries, dec, dropout)?;
    let probs = tape.sigmoid(logits);
    Ok(tape.bce(probs, relation_labels(facts, nr), BCE_EPS)?)
}

/// `λ1·Le + λ2·Lr + Lst`; absent terms count as zero.
pub fn total_loss(
    tape: &mut Tape,
    le: Option<Var>,
    lr: Option<Var>,
    lst: Option<Var>,
    lambda1: f64,
    lambda2: f64,
) -> Result<Var> {
    let mut total = tape.constant(Tensor::scalar(0.0));
    for (term, w) in [(le, lambda1), (lr, lambda2), (lst, 1.0)] {
        if let Some(v) = term {
            let scaled = tape.affine(v, w, 0.0);
            total = tape.add(total, scaled)?;
        }
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl OptimizerState {
    /// Zeroed moments for tensors of the given sizes.
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_model(params: &ModelParams) -> Self {
        let sizes: Vec<usize> = params.named_tensors().iter().map(|(_, t)| t.numel()).collect();
        Self::new(&sizes)
    }
}

/// Scales every gradient so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .filter_map(|t| t.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in params.iter_mut() {
            if let Some(g) = t.grad() {
                let g: Vec<f64> = g.iter().map(|v| v * scale).collect();
                t.set_grad(g).expect("same length");
            }
        }
    }
    norm
}

/// One bias-corrected Adam update from the gradients stored on each tensor.
pub fn adam_step(
    params: &mut [&mut Tensor],
    names: &[String],
    opt: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if params.len() != opt.first.len() || params.len() != names.len() {
        return Err(TrainError::Config(format!(
            "optimizer tracks {} tensors, got {}",
            opt.first.len(),
            params.len()
        )));
    }
    for (t, name) in params.iter().zip(names) {
        if t.requires_grad() && t.grad().is_none() {
            return Err(TrainError::MissingGradient(name.clone()));
        }
    }
    opt.step += 1;
    let (b1, b2) = (opt.beta1, opt.beta2);
    let c1 = 1.0 - b1.powi(opt.step as i32);
    let c2 = 1.0 - b2.powi(opt.step as i32);
    for (i, t) in params.iter_mut().enumerate() {
        if !t.requires_grad() {
            continue;
        }
        let g = t.grad().expect("checked above").to_vec();
        let (m, v) = (&mut opt.first[i], &mut opt.second[i]);
        if m.len() != g.len() {
            return Err(TrainError::Config(format!(
                "moment size {} differs from tensor '{}' size {}",
                m.len(),
                names[i],
                g.len()
            )));
        }
        let data = t.data_mut();
        for j in 0..g.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            data[j] -= lr * m_hat / (v_hat.sqrt() + opt.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub entity_loss: f64,
    pub relation_loss: f64,
    pub static_loss: f64,
    pub total_loss: f64,
    pub grad_norm: f64,
}

/// Total loss, trainable leaves in `named_tensors` order, statistics, and
/// the entity, relation and static loss nodes when present.
pub type StepOutput = (Var, Vec<Var>, StepStats, [Option<Var>; 3]);

/// Forward pass and loss for predicting snapshot `target` from the window
/// ending at `target - 1`. The tape is left ready for `backward`.
pub fn step_loss(
    tape: &mut Tape,
    params: &ModelParams,
    store: &FactStore,
    static_graph: Option<&StaticGraph>,
    cfg: &TrainConfig,
    target: usize,
) -> Result<StepOutput> {
    if target == 0 {
        return Err(TrainError::Config("target snapshot 0 has no history".into()));
    }
    let window = store.history_window(target - 1, cfg.history)?;
    let vars = params.bind(tape);
    let init = initial_state(tape, &vars.evolution)?;
    let out = evolve(tape, window, init, &vars.evolution, &params.config)?;
    let facts = &store
        .snapshot(target)
        .ok_or(DataError::TimestampOutOfRange {
            t: target,
            len: store.len(),
        })?
        .facts;
    let dropout = params.config.decoder_dropout;
    let le = if cfg.task.entity() {
        Some(entity_loss(
            tape,
            out.state,
            facts,
            &vars.entity_decoder,
            dropout,
        )?)
    } else {
        None
    };
    let lr = if cfg.task.relation() {
        Some(relation_loss(
            tape,
            out.state,
            facts,
            &vars.relation_decoder,
            dropout,
        )?)
    } else {
        None
    };
    let lst = match (cfg.static_constraint, static_graph, &vars.evolution.static_vars) {
        (true, Some(graph), Some(sv)) => {
            let hs = static_embeddings(tape, graph, sv)?;
            Some(static_constraint_loss(tape, hs, &out.entity_seq, cfg.gamma)?)
        }
        (true, _, _) => {
            return Err(TrainError::Config(
                "static constraint requested without a static graph".into(),
            ))
        }
        _ => None,
    };
    let total = total_loss(tape, le, lr, lst, cfg.lambda1, cfg.lambda2)?;
    let val = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
    let stats = StepStats {
        entity_loss: val(le),
        relation_loss: val(lr),
        static_loss: val(lst),
        total_loss: tape.value(total).item(),
        grad_norm: 0.0,
    };
    Ok((total, vars.all, stats, [le, lr, lst]))
}

/// One optimizer step on target snapshot `target`.
pub fn train_step(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    store: &FactStore,
    static_graph: Option<&StaticGraph>,
    cfg: &TrainConfig,
    target: usize,
    seed: u64,
) -> Result<StepStats> {
    let mut tape = Tape::new(Mode::Train, seed);
    let (total, leaves, mut stats, _) = step_loss(&mut tape, params, store, static_graph, cfg, target)?;
    let mut grads = tape.backward(total)?;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let mut tensors = params.tensors_mut();
    for (t, v) in tensors.iter_mut().zip(&leaves) {
        let g = grads.take(*v).unwrap_or_else(|| vec![0.0; t.numel()]);
        t.set_grad(g)?;
    }
    stats.grad_norm = match cfg.grad_clip {
        Some(c) => clip_grad_norm(&mut tensors, c),
        None => clip_grad_norm(&mut tensors, f64::INFINITY),
    };
    adam_step(&mut tensors, &names, opt, cfg.lr)?;
    for t in tensors.iter_mut() {
        t.clear_grad();
    }
    Ok(stats)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub entity_loss: f64,
    pub relation_loss: f64,
    pub static_loss: f64,
    pub total_loss: f64,
    pub grad_norm: f64,
    pub seconds: f64,
    /// Frozen-mode validation MRR when a validation split exists.
    pub valid_mrr: Option<f64>,
}

/// Target snapshots used for training: every training snapshot with a
/// predecessor and at least one fact.
pub fn training_targets(store: &FactStore) -> Vec<usize> {
    (1..store.num_train_timestamps())
        .filter(|&t| store.snapshot(t).is_some_and(|s| !s.is_empty()))
        .collect()
}

/// One pass over the training targets in a seed-shuffled order.
pub fn train_epoch(
    store: &FactStore,
    static_graph: Option<&StaticGraph>,
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    let start = Instant::now();
    let mut targets = training_targets(store);
    if targets.is_empty() {
        log::warn!("training split offers no (history, target) pair; epoch {epoch} takes no steps");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    targets.shuffle(&mut rng);
    let mut acc = EpochStats {
        epoch,
        ..Default::default()
    };
    for (i, &t) in targets.iter().enumerate() {
        let step_seed = rand::Rng::gen::<u64>(&mut rng) ^ i as u64;
        let s = train_step(params, opt, store, static_graph, cfg, t, step_seed)?;
        if !s.total_loss.is_finite() {
            return Err(TrainError::NonFinite { what: "loss", epoch });
        }
        acc.entity_loss += s.entity_loss;
        acc.relation_loss += s.relation_loss;
        acc.static_loss += s.static_loss;
        acc.total_loss += s.total_loss;
        acc.grad_norm += s.grad_norm;
        acc.steps += 1;
    }
    if acc.steps > 0 {
        let n = acc.steps as f64;
        acc.entity_loss /= n;
        acc.relation_loss /= n;
        acc.static_loss /= n;
        acc.total_loss /= n;
        acc.grad_norm /= n;
    }
    acc.seconds = start.elapsed().as_secs_f64();
    Ok(acc)
}

/// State reached by evolving over the last `history` training snapshots;
/// the frozen-mode scoring state.
pub fn final_training_state(
    params: &ModelParams,
    store: &FactStore,
    history: usize,
) -> Result<EvolutionState> {
    let n = store.num_train_timestamps();
    if n == 0 {
        return Err(DataError::EmptySplit("train").into());
    }
    let window = store.history_window(n - 1, history)?;
    Ok(evolve_state(params, window, Mode::Eval, 0)?)
}

pub struct FitOutcome {
    /// Parameters of the selected epoch.
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub final_state: EvolutionState,
    pub curve: Vec<EpochStats>,
    /// 1-based epoch of the selected parameters; 0 means the initial model.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Runs up to `cfg.epochs` epochs, selecting the epoch with the best
/// frozen-mode validation MRR and stopping after `cfg.patience` epochs
/// without improvement. Without validation facts the last epoch is kept.
pub fn fit(
    store: &FactStore,
    static_graph: Option<&StaticGraph>,
    mut params: ModelParams,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<FitOutcome> {
    cfg.validate()?;
    if !store.is_augmented() {
        return Err(TrainError::Config(
            "store must be augmented with inverse quadruples".into(),
        ));
    }
    let mut opt = OptimizerState::for_model(&params);
    let has_valid = store.split_fact_count(Split::Valid) > 0;
    let select_task = if cfg.task == TaskSelector::Relation {
        Task::Relation
    } else {
        Task::Entity
    };
    let mut best: Option<(f64, ModelParams, OptimizerState, usize)> = None;
    let mut curve = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        let mut stats = train_epoch(store, static_graph, &mut params, &mut opt, cfg, epoch)?;
        if has_valid {
            let state = final_training_state(&params, store, cfg.history)?;
            let report = evaluate(
                store,
                &params,
                &state,
                EvalOptions {
                    mode: EvalMode::Frozen,
                    split: Split::Valid,
                    task: select_task,
                    history: cfg.history,
                    filtered: false,
                },
            )?;
            let mrr = report.overall.mrr;
            stats.valid_mrr = Some(mrr);
            if best.as_ref().is_none_or(|b| mrr > b.0) {
                best = Some((mrr, params.clone(), opt.clone(), epoch));
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        log::info!(
            "epoch {epoch}: loss {:.5} (entity {:.5}, relation {:.5}, static {:.5}) valid mrr {:?}",
            stats.total_loss,
            stats.entity_loss,
            stats.relation_loss,
            stats.static_loss,
            stats.valid_mrr
        );
        on_epoch(&stats);
        curve.push(stats);
        if has_valid && cfg.patience > 0 && since_best >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    let last_epoch = curve.len();
    let (params, optimizer, best_epoch) = match best {
        Some((_, p, o, e)) => (p, o, e),
        None => (params, opt, last_epoch),
    };
    let final_state = final_training_state(&params, store, cfg.history)?;
    Ok(FitOutcome {
        params,
        optimizer,
        final_state,
        curve,
        best_epoch,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_rows_aggregate_answers() {
        let facts = vec![
            Quadruple::new(0, 0, 1, 0),
            Quadruple::new(0, 0, 2, 0),
            Quadruple::new(1, 1, 0, 0),
        ];
        let y = entity_labels(&facts, 3);
        assert_eq!(&y[0..3], &[0.0, 1.0, 1.0]);
        assert_eq!(&y[3..6], &[0.0, 1.0, 1.0]);
        assert_eq!(&y[6..9], &[1.0, 0.0, 0.0]);
        let y = relation_labels(&facts, 2);
        assert_eq!(y, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    }

    fn scalar_total(le: f64, lr: f64, lst: f64, l1: f64, l2: f64) -> f64 {
        let mut tape = Tape::new(Mode::Eval, 0);
        let a = tape.constant(Tensor::scalar(le));
        let b = tape.constant(Tensor::scalar(lr));
        let c = tape.constant(Tensor::scalar(lst));
        let t = total_loss(&mut tape, Some(a), Some(b), Some(c), l1, l2).unwrap();
        tape.value(t).item()
    }

    #[test]
    fn total_loss_examples() {
        assert!((scalar_total(1.0, 1.0, 0.0, 0.7, 0.3) - 1.0).abs() < 1e-15);
        assert_eq!(scalar_total(2.5, 9.0, 0.0, 1.0, 0.0), 2.5);
        assert_eq!(scalar_total(0.0, 0.0, 0.0, 0.7, 0.3), 0.0);
        // linear in (Le, Lr)
        let base = scalar_total(0.0, 0.0, 0.4, 0.7, 0.3);
        let a = scalar_total(1.3, 0.0, 0.4, 0.7, 0.3) - base;
        let b = scalar_total(0.0, 2.1, 0.4, 0.7, 0.3) - base;
        let ab = scalar_total(1.3, 2.1, 0.4, 0.7, 0.3) - base;
        assert!((ab - a - b).abs() < 1e-12);
    }

    #[test]
    fn uniform_probabilities_cost_ln2_per_candidate() {
        let mut params = ModelParams::init(ModelConfig::new(4, 2, 4), 0).unwrap();
        for d in [&mut params.entity_decoder, &mut params.relation_decoder] {
            d.fc.data_mut().fill(0.0);
        }
        let state = crate::evolution::initial_evolution_state(&params).unwrap();
        let facts = vec![Quadruple::new(0, 1, 3, 0), Quadruple::new(2, 0, 1, 0)];
        let mut tape = Tape::new(Mode::Eval, 0);
        let sv = StateVars::from_state(&state, &mut tape);
        let vars = params.bind(&mut tape);
        let le = entity_loss(&mut tape, sv, &facts, &vars.entity_decoder, 0.0).unwrap();
        let lr = relation_loss(&mut tape, sv, &facts, &vars.relation_decoder, 0.0).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((tape.value(le).item() - 4.0 * ln2).abs() < 1e-12);
        assert!((tape.value(lr).item() - 2.0 * ln2).abs() < 1e-12);
        let empty = entity_loss(&mut tape, sv, &[], &vars.entity_decoder, 0.0).unwrap();
        assert_eq!(tape.value(empty).item(), 0.0);
    }

    #[test]
    fn two_entity_loss_matches_scalar_formula() {
        let params = ModelParams::init(ModelConfig::new(2, 2, 4), 3).unwrap();
        let state = crate::evolution::initial_evolution_state(&params).unwrap();
        let facts = vec![Quadruple::new(0, 1, 1, 0)];
        let probs = crate::decoder::score_entities(&params, &state, 0, 1, Mode::Eval).unwrap();
        let (p0, p1) = (probs.data()[0], probs.data()[1]);
        let want = -(1.0 - p0).ln() - p1.ln();
        let mut tape = Tape::new(Mode::Eval, 0);
        let sv = StateVars::from_state(&state, &mut tape);
        let vars = params.bind(&mut tape);
        let le = entity_loss(&mut tape, sv, &facts, &vars.entity_decoder, 0.0).unwrap();
        assert!((tape.value(le).item() - want).abs() < 1e-12);
    }

    #[test]
    fn perfect_fit_is_near_zero() {
        let mut tape = Tape::new(Mode::Eval, 0);
        let p = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap());
        let l = tape.bce(p, vec![1.0, 0.0, 0.0], BCE_EPS).unwrap();
        assert!(tape.value(l).item() < 1e-9);
    }

    fn scalar_adam(g: f64, steps: usize, lr: f64) -> f64 {
        let (mut m, mut v, mut w) = (0.0, 0.0, 0.0);
        for k in 1..=steps {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(k as i32));
            let vh = v / (1.0 - 0.999f64.powi(k as i32));
            w -= lr * mh / (vh.sqrt() + 1e-8);
        }
        w
    }

    #[test]
    fn adam_matches_scalar_reference() {
        for g in [0.5, -3.0, 1e-4] {
            let mut t = Tensor::zeros(vec![1]).trainable();
            let mut opt = OptimizerState::new(&[1]);
            let names = vec!["w".to_string()];
            for _ in 0..3 {
                t.set_grad(vec![g]).unwrap();
                adam_step(&mut [&mut t], &names, &mut opt, 0.001).unwrap();
            }
            assert!((t.data()[0] - scalar_adam(g, 3, 0.001)).abs() < 1e-15);
        }
        // step one moves by about lr against the gradient sign
        let mut t = Tensor::zeros(vec![1]).trainable();
        let mut opt = OptimizerState::new(&[1]);
        t.set_grad(vec![2.0]).unwrap();
        adam_step(&mut [&mut t], &["w".into()], &mut opt, 0.001).unwrap();
        assert!((t.data()[0] + 0.001).abs() < 1e-10);
    }

    #[test]
    fn adam_zero_gradient_and_missing_gradient() {
        let mut t = Tensor::vector(vec![1.0, -2.0]).trainable();
        let mut opt = OptimizerState::new(&[2]);
        t.set_grad(vec![0.0, 0.0]).unwrap();
        adam_step(&mut [&mut t], &["w".into()], &mut opt, 0.1).unwrap();
        assert_eq!(t.data(), &[1.0, -2.0]);
        t.clear_grad();
        let err = adam_step(&mut [&mut t], &["w".into()], &mut opt, 0.1).unwrap_err();
        assert!(matches!(err, TrainError::MissingGradient(n) if n == "w"));
    }

    #[test]
    fn adam_descends_quadratic_bowl() {
        let mut w = Tensor::vector(vec![1.0, 1.0]).trainable();
        let mut opt = OptimizerState::new(&[2]);
        for _ in 0..500 {
            let g: Vec<f64> = w.data().iter().map(|x| 2.0 * x).collect();
            w.set_grad(g).unwrap();
            adam_step(&mut [&mut w], &["w".into()], &mut opt, 0.01).unwrap();
        }
        let norm = w.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "norm {norm}");
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut a = Tensor::vector(vec![3.0]).trainable();
        let mut b = Tensor::vector(vec![4.0]).trainable();
        a.set_grad(vec![3.0]).unwrap();
        b.set_grad(vec![4.0]).unwrap();
        let n = clip_grad_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(n, 5.0);
        assert!((a.grad().unwrap()[0] - 0.6).abs() < 1e-15);
        assert!((b.grad().unwrap()[0] - 0.8).abs() < 1e-15);
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            dim: 8,
            history: 2,
            kernels: 4,
            epochs: 1,
            ..Default::default()
        }
    }

    fn store(timeline: Vec<Vec<(u32, u32, u32)>>) -> FactStore {
        let n = timeline.len();
        FactStore::from_timeline(4, 2, timeline, n, 0)
            .unwrap()
            .add_inverse_quadruples()
            .unwrap()
    }

    fn params_for(store: &FactStore, cfg: &TrainConfig) -> ModelParams {
        ModelParams::init(
            cfg.model_config(store.num_entities, store.relation_vocab(), None),
            1,
        )
        .unwrap()
    }

    #[test]
    fn step_counts() {
        let cfg = tiny_cfg();
        let one = store(vec![vec![(0, 0, 1)]]);
        let mut p = params_for(&one, &cfg);
        let mut opt = OptimizerState::for_model(&p);
        assert_eq!(
            train_epoch(&one, None, &mut p, &mut opt, &cfg, 1).unwrap().steps,
            0
        );
        let two = store(vec![vec![(0, 0, 1)], vec![(1, 1, 2)]]);
        let mut p = params_for(&two, &cfg);
        let mut opt = OptimizerState::for_model(&p);
        let s = train_epoch(&two, None, &mut p, &mut opt, &cfg, 1).unwrap();
        assert_eq!((s.steps, opt.step), (1, 1));
    }

    #[test]
    fn epochs_are_reproducible() {
        let cfg = tiny_cfg();
        let st = store(vec![
            vec![(0, 0, 1)],
            vec![(1, 1, 2)],
            vec![(2, 0, 3)],
            vec![(3, 1, 0)],
        ]);
        let run = || {
            let mut p = params_for(&st, &cfg);
            let mut opt = OptimizerState::for_model(&p);
            let s = train_epoch(&st, None, &mut p, &mut opt, &cfg, 1).unwrap();
            (s.total_loss, p)
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }

    #[test]
    fn losses_are_non_negative() {
        let cfg = tiny_cfg();
        let st = store(vec![vec![(0, 0, 1)], vec![(1, 1, 2), (0, 0, 2)]]);
        let p = params_for(&st, &cfg);
        let mut tape = Tape::new(Mode::Train, 5);
        let (_, _, s, _) = step_loss(&mut tape, &p, &st, None, &cfg, 1).unwrap();
        assert!(s.entity_loss >= 0.0 && s.relation_loss >= 0.0 && s.static_loss >= 0.0);
    }

    #[test]
    fn config_rejects_bad_values() {
        let c = TrainConfig {
            history: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            lambda2: -0.1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
