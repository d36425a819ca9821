//! Raw-setting ranking and MRR / Hits@k reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, FactStore, Split};
use crate::decoder::{score_queries, Task};
use crate::evolution::{evolve_state, initial_evolution_state, EvolutionState};
use crate::model::{ModelError, ModelParams};
use crate::tensor::Mode;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("answer {answer} out of range for {candidates} candidates")]
    AnswerOutOfRange { answer: usize, candidates: usize },
    #[error("no candidates to rank")]
    NoCandidates,
    #[error("no ranks to summarize")]
    EmptyRanks,
    #[error("split '{0}' has no facts to evaluate")]
    EmptySplit(&'static str),
    #[error("store must be augmented with inverse quadruples")]
    NotAugmented,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Evolve through the true snapshots before each scored timestamp.
    GroundTruth,
    /// Score every timestamp with the state reached at the end of training.
    Frozen,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::GroundTruth => "gt",
            EvalMode::Frozen => "frozen",
        }
    }
}

impl FromStr for EvalMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gt" | "ground_truth" | "ground-truth" => Ok(EvalMode::GroundTruth),
            "frozen" => Ok(EvalMode::Frozen),
            other => Err(format!("unknown mode '{other}' (expected gt or frozen)")),
        }
    }
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Entity => "entity",
            Task::Relation => "relation",
        }
    }
}

/// 1-based rank of `answer`: one plus the candidates scored strictly higher,
/// plus half the other exact ties rounded up.
pub fn rank_query(scores: &[f64], answer: usize) -> Result<usize, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::NoCandidates);
    }
    let target = *scores.get(answer).ok_or(EvalError::AnswerOutOfRange {
        answer,
        candidates: scores.len(),
    })?;
    let mut greater = 0;
    let mut ties = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        if s > target {
            greater += 1;
        } else if s == target && i != answer {
            ties += 1;
        }
    }
    Ok(1 + greater + ties.div_ceil(2))
}

/// Like [`rank_query`] but ignores candidates listed in `other_answers`
/// (the answer itself is never removed). Diagnostics only.
pub fn rank_query_filtered(
    scores: &[f64],
    answer: usize,
    other_answers: &BTreeSet<usize>,
) -> Result<usize, EvalError> {
    if answer >= scores.len() {
        return Err(EvalError::AnswerOutOfRange {
            answer,
            candidates: scores.len(),
        });
    }
    let kept: Vec<f64> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| *i == answer || !other_answers.contains(i))
        .map(|(_, &s)| s)
        .collect();
    let pos = (0..answer).filter(|i| !other_answers.contains(i)).count();
    rank_query(&kept, pos)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub count: usize,
}

pub fn compute_metrics(ranks: &[usize]) -> Result<Metrics, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::EmptyRanks);
    }
    let n = ranks.len() as f64;
    let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(Metrics {
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        hits1: hits(1),
        hits3: hits(3),
        hits10: hits(10),
        count: ranks.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimestampMetrics {
    /// Snapshot index.
    pub index: usize,
    /// Raw time value as found in the data files.
    pub time: u64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub split: String,
    pub mode: String,
    pub filtered: bool,
    pub overall: Metrics,
    pub per_timestamp: Vec<TimestampMetrics>,
}

pub const CSV_HEADER: &str = "task,split,mode,filtered,queries,mrr,hits1,hits3,hits10";

impl MetricReport {
    pub fn csv_row(&self) -> String {
        let m = &self.overall;
        format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            self.task, self.split, self.mode, self.filtered, m.count, m.mrr, m.hits1, m.hits3, m.hits10
        )
    }
}

/// Renders reports as CSV with a header line.
pub fn reports_to_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub split: Split,
    pub task: Task,
    /// History length for ground-truth evolution.
    pub history: usize,
    pub filtered: bool,
}

/// `(query, answer)` pairs of one snapshot: `((s, r), o)` for the entity
/// task and `((s, o), r)` for the relation task, inverse facts included.
pub fn snapshot_queries(store: &FactStore, t: usize, task: Task) -> Vec<((u32, u32), usize)> {
    store
        .snapshot(t)
        .map(|snap| {
            snap.facts
                .iter()
                .map(|f| match task {
                    Task::Entity => ((f.subject, f.relation), f.object as usize),
                    Task::Relation => ((f.subject, f.object), f.relation as usize),
                })
                .collect()
        })
        .unwrap_or_default()
}

fn known_answers(store: &FactStore, task: Task) -> BTreeMap<(u32, u32), BTreeSet<usize>> {
    let mut out: BTreeMap<(u32, u32), BTreeSet<usize>> = BTreeMap::new();
    for (s, r, o) in store.all_triples() {
        let (key, ans) = match task {
            Task::Entity => ((s, r), o as usize),
            Task::Relation => ((s, o), r as usize),
        };
        out.entry(key).or_default().insert(ans);
    }
    out
}

/// State used to score snapshot `t` under `mode`.
pub fn state_for(
    store: &FactStore,
    params: &ModelParams,
    frozen: &EvolutionState,
    mode: EvalMode,
    t: usize,
    history: usize,
) -> Result<EvolutionState, EvalError> {
    match mode {
        EvalMode::Frozen => Ok(frozen.clone()),
        EvalMode::GroundTruth if t == 0 => Ok(initial_evolution_state(params)?),
        EvalMode::GroundTruth => {
            let window = store.history_window(t - 1, history)?;
            Ok(evolve_state(params, window, Mode::Eval, 0)?)
        }
    }
}

/// Ranks every query of `split` under the raw setting (or filtered when
/// asked) and summarizes overall and per timestamp.
pub fn evaluate(
    store: &FactStore,
    params: &ModelParams,
    frozen: &EvolutionState,
    opts: EvalOptions,
) -> Result<MetricReport, EvalError> {
    if !store.is_augmented() {
        return Err(EvalError::NotAugmented);
    }
    let known = opts.filtered.then(|| known_answers(store, opts.task));
    let mut all_ranks = Vec::new();
    let mut per_timestamp = Vec::new();
    for t in store.split_range(opts.split) {
        let queries = snapshot_queries(store, t, opts.task);
        if queries.is_empty() {
            continue;
        }
        let state = state_for(store, params, frozen, opts.mode, t, opts.history)?;
        let q: Vec<(u32, u32)> = queries.iter().map(|x| x.0).collect();
        let probs = score_queries(params, &state, opts.task, &q, Mode::Eval, 0)?;
        let mut ranks = Vec::with_capacity(queries.len());
        for (i, (key, answer)) in queries.iter().enumerate() {
            let row = probs.row(i);
            let rank = match &known {
                Some(k) => {
                    let mut others = k.get(key).cloned().unwrap_or_default();
                    others.remove(answer);
                    rank_query_filtered(row, *answer, &others)?
                }
                None => rank_query(row, *answer)?,
            };
            ranks.push(rank);
        }
        per_timestamp.push(TimestampMetrics {
            index: t,
            time: store.time_origin() + t as u64 * store.time_interval(),
            metrics: compute_metrics(&ranks)?,
        });
        all_ranks.extend(ranks);
    }
    if all_ranks.is_empty() {
        return Err(EvalError::EmptySplit(opts.split.name()));
    }
    Ok(MetricReport {
        task: opts.task.name().into(),
        split: opts.split.name().into(),
        mode: opts.mode.name().into(),
        filtered: opts.filtered,
        overall: compute_metrics(&all_ranks)?,
        per_timestamp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_query(&[0.9, 0.1, 0.5], 0).unwrap(), 1);
        assert_eq!(rank_query(&[0.5, 0.5], 1).unwrap(), 2);
        assert_eq!(rank_query(&[0.5, 0.5], 0).unwrap(), 2);
        assert_eq!(rank_query(&[0.5, 0.5, 0.5], 0).unwrap(), 2);
        assert!(matches!(
            rank_query(&[0.5], 1),
            Err(EvalError::AnswerOutOfRange { .. })
        ));
        assert!(matches!(rank_query(&[], 0), Err(EvalError::NoCandidates)));
    }

    #[test]
    fn metric_examples() {
        let m = compute_metrics(&[1, 2, 4]).unwrap();
        assert!((m.mrr - 1.75 / 3.0).abs() < 1e-15);
        let m = compute_metrics(&[1, 1, 1]).unwrap();
        assert_eq!((m.mrr, m.hits1), (1.0, 1.0));
        assert_eq!(compute_metrics(&[1, 5, 2, 10]).unwrap().hits3, 0.5);
        assert!(matches!(compute_metrics(&[]), Err(EvalError::EmptyRanks)));
    }

    #[test]
    fn filtered_drops_other_answers() {
        let scores = [0.9, 0.8, 0.1, 0.7];
        assert_eq!(rank_query(&scores, 3).unwrap(), 3);
        let others: BTreeSet<usize> = [0].into_iter().collect();
        assert_eq!(rank_query_filtered(&scores, 3, &others).unwrap(), 2);
    }

    #[test]
    fn modes_parse() {
        assert_eq!("gt".parse::<EvalMode>().unwrap(), EvalMode::GroundTruth);
        assert_eq!("frozen".parse::<EvalMode>().unwrap(), EvalMode::Frozen);
        assert!("live".parse::<EvalMode>().is_err());
    }

    /// Pessimistic rank from a full descending sort where ties put the
    /// answer in the middle of its group, rounded down the list.
    fn sort_rank(scores: &[f64], answer: usize) -> usize {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        let first = idx.iter().position(|&i| scores[i] == scores[answer]).unwrap();
        let group = idx.iter().filter(|&&i| scores[i] == scores[answer]).count();
        first + 1 + (group - 1).div_ceil(2)
    }

    proptest! {
        #[test]
        fn rank_matches_sort(scores in prop::collection::vec(0u8..6, 1..20), pick in 0usize..100) {
            let scores: Vec<f64> = scores.into_iter().map(|v| v as f64 / 5.0).collect();
            let answer = pick % scores.len();
            let r = rank_query(&scores, answer).unwrap();
            prop_assert_eq!(r, sort_rank(&scores, answer));
            prop_assert!(r >= 1 && r <= scores.len());
            // a strictly increasing map leaves ranks unchanged
            let logits: Vec<f64> = scores.iter().map(|p| (p * 3.0).exp() - 7.0).collect();
            prop_assert_eq!(rank_query(&logits, answer).unwrap(), r);
        }

        #[test]
        fn hits_are_ordered(ranks in prop::collection::vec(1usize..30, 1..50)) {
            let m = compute_metrics(&ranks).unwrap();
            prop_assert!(m.hits1 <= m.hits3 && m.hits3 <= m.hits10);
            prop_assert!(m.mrr > 0.0 && m.mrr <= 1.0);
        }
    }
}
