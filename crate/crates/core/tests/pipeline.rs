//! End-to-end behaviour of training, checkpointing and evaluation.

mod common;

use tkg_core::checkpoint::{Checkpoint, CheckpointHeader};
use tkg_core::data::{FactStore, Split};
use tkg_core::decoder::Task;
use tkg_core::eval::{evaluate, EvalMode, EvalOptions, MetricReport};
use tkg_core::evolution::EvolutionState;
use tkg_core::model::ModelParams;
use tkg_core::training::{final_training_state, fit, train_epoch, OptimizerState, TaskSelector, TrainConfig};

fn opts(mode: EvalMode, split: Split, task: Task, history: usize) -> EvalOptions {
    EvalOptions {
        mode,
        split,
        task,
        history,
        filtered: false,
    }
}

fn init(store: &FactStore, cfg: &TrainConfig) -> ModelParams {
    ModelParams::init(
        cfg.model_config(store.num_entities, store.relation_vocab(), None),
        cfg.seed,
    )
    .unwrap()
}

/// Hits@1 over the timestamps that have history; the first training
/// snapshot has none and is never a training target.
fn hits1_with_history(r: &MetricReport) -> f64 {
    let (hits, count) = r
        .per_timestamp
        .iter()
        .filter(|t| t.index > 0)
        .fold((0.0, 0), |(h, c), t| {
            (h + t.metrics.hits1 * t.metrics.count as f64, c + t.metrics.count)
        });
    hits / count as f64
}

#[test]
fn overfits_the_repeating_set() {
    let store = common::repeating_store(8, 1);
    let cfg = TrainConfig {
        dim: 32,
        history: 2,
        task: TaskSelector::Entity,
        kernels: 8,
        dropout: 0.0,
        lr: 0.01,
        ..Default::default()
    };
    let mut params = init(&store, &cfg);
    let mut opt = OptimizerState::for_model(&params);
    let mut reached = None;
    for epoch in 1..=200 {
        train_epoch(&store, None, &mut params, &mut opt, &cfg, epoch).unwrap();
        let frozen = final_training_state(&params, &store, cfg.history).unwrap();
        let r = evaluate(
            &store,
            &params,
            &frozen,
            opts(EvalMode::GroundTruth, Split::Train, Task::Entity, 2),
        )
        .unwrap();
        if hits1_with_history(&r) == 1.0 {
            reached = Some(epoch);
            break;
        }
    }
    assert!(reached.is_some(), "training Hits@1 never reached 1.0");
    let frozen = final_training_state(&params, &store, cfg.history).unwrap();
    let r = evaluate(
        &store,
        &params,
        &frozen,
        opts(EvalMode::GroundTruth, Split::Valid, Task::Entity, 2),
    )
    .unwrap();
    assert_eq!(r.overall.mrr, 1.0);
}

fn same_numbers(a: &MetricReport, b: &MetricReport) {
    assert_eq!(a.overall, b.overall);
    assert_eq!(a.per_timestamp, b.per_timestamp);
}

#[test]
fn history_adds_nothing_when_facts_repeat() {
    let store = common::repeating_store(6, 2);
    let cfg = TrainConfig {
        dim: 8,
        kernels: 4,
        history: 3,
        ..Default::default()
    };
    let params = init(&store, &cfg);
    let frozen = final_training_state(&params, &store, 3).unwrap();
    for task in [Task::Entity, Task::Relation] {
        for split in [Split::Valid, Split::Test] {
            let gt = evaluate(
                &store,
                &params,
                &frozen,
                opts(EvalMode::GroundTruth, split, task, 3),
            )
            .unwrap();
            let fr = evaluate(&store, &params, &frozen, opts(EvalMode::Frozen, split, task, 3)).unwrap();
            same_numbers(&gt, &fr);
            assert_eq!((gt.mode.as_str(), fr.mode.as_str()), ("gt", "frozen"));
        }
    }
}

#[test]
fn every_fact_is_queried_in_both_directions() {
    let store = common::random_store(4, 12, 3, 9, 7);
    let cfg = TrainConfig {
        dim: 6,
        kernels: 2,
        ..Default::default()
    };
    let params = init(&store, &cfg);
    let frozen = final_training_state(&params, &store, 3).unwrap();
    for task in [Task::Entity, Task::Relation] {
        let r = evaluate(
            &store,
            &params,
            &frozen,
            opts(EvalMode::GroundTruth, Split::Train, task, 3),
        )
        .unwrap();
        assert_eq!(r.overall.count, 2 * store.base_fact_count(Split::Train));
        let per: usize = r.per_timestamp.iter().map(|t| t.metrics.count).sum();
        assert_eq!(per, r.overall.count);
    }
}

/// With a zeroed decoder every candidate scores 0.5, so each answer ties
/// with all candidates: rank 2 of 3 entities and rank 3 of 4 relations.
#[test]
fn all_ties_give_hand_computed_ranks() {
    let timeline = vec![vec![(0, 0, 1)], vec![(1, 1, 2), (2, 0, 0)], vec![(0, 1, 2)]];
    let store = FactStore::from_timeline(3, 2, timeline, 2, 0)
        .unwrap()
        .add_inverse_quadruples()
        .unwrap();
    let cfg = TrainConfig {
        dim: 4,
        kernels: 2,
        ..Default::default()
    };
    let mut params = init(&store, &cfg);
    for dec in [&mut params.entity_decoder, &mut params.relation_decoder] {
        dec.fc.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let frozen = final_training_state(&params, &store, 2).unwrap();
    let e = evaluate(
        &store,
        &params,
        &frozen,
        opts(EvalMode::Frozen, Split::Test, Task::Entity, 2),
    )
    .unwrap();
    assert_eq!(e.overall.count, 2);
    assert_eq!((e.overall.mrr, e.overall.hits1, e.overall.hits3), (0.5, 0.0, 1.0));
    let r = evaluate(
        &store,
        &params,
        &frozen,
        opts(EvalMode::Frozen, Split::Test, Task::Relation, 2),
    )
    .unwrap();
    assert_eq!(
        (r.overall.mrr, r.overall.hits1, r.overall.hits3),
        (1.0 / 3.0, 0.0, 1.0)
    );
}

#[test]
fn entity_loss_falls_over_thirty_epochs() {
    let store = common::random_store(11, 15, 3, 20, 12);
    let cfg = TrainConfig {
        dim: 16,
        kernels: 4,
        history: 2,
        task: TaskSelector::Entity,
        ..Default::default()
    };
    let mut params = init(&store, &cfg);
    let mut opt = OptimizerState::for_model(&params);
    let first = train_epoch(&store, None, &mut params, &mut opt, &cfg, 1)
        .unwrap()
        .entity_loss;
    let mut last = first;
    for epoch in 2..=30 {
        last = train_epoch(&store, None, &mut params, &mut opt, &cfg, epoch)
            .unwrap()
            .entity_loss;
    }
    assert!(last < first, "epoch 1 {first}, epoch 30 {last}");
}

#[test]
fn early_stopping_keeps_the_best_epoch() {
    let store = common::repeating_store(6, 2);
    let cfg = TrainConfig {
        dim: 8,
        kernels: 4,
        history: 2,
        epochs: 10,
        patience: 2,
        lr: 1e-14,
        ..Default::default()
    };
    let out = fit(&store, None, init(&store, &cfg), &cfg, |_| {}).unwrap();
    assert!(out.stopped_early);
    assert_eq!(out.curve.len(), 3);
    assert_eq!(out.best_epoch, 1);
    assert!(out.curve.iter().all(|e| e.valid_mrr.is_some()));
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let store = common::random_store(2, 10, 2, 8, 6);
    let cfg = TrainConfig {
        dim: 8,
        kernels: 3,
        epochs: 2,
        ..Default::default()
    };
    let out = fit(&store, None, init(&store, &cfg), &cfg, |_| {}).unwrap();
    let ckpt = Checkpoint {
        header: CheckpointHeader {
            model: out.params.config.clone(),
            train: cfg.clone(),
            run_id: Some("r".into()),
            epoch: out.best_epoch,
        },
        params: out.params,
        optimizer: out.optimizer,
        final_state: Some(out.final_state),
    };
    let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
    let state: &EvolutionState = back.final_state.as_ref().unwrap();
    for mode in [EvalMode::GroundTruth, EvalMode::Frozen] {
        let o = opts(mode, Split::Train, Task::Entity, 3);
        let a = evaluate(&store, &ckpt.params, ckpt.final_state.as_ref().unwrap(), o).unwrap();
        let b = evaluate(&store, &back.params, state, o).unwrap();
        assert_eq!(a, b);
    }
}
