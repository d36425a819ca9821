//! Recurrent encoder mapping a history window of snapshots to entity and
//! relation embedding matrices.
//!
//! One step over snapshot `G_t`:
//!
//! 1. relation GRU input: mean of the previous entity rows touched by each
//!    relation, joined with the initial relation row (zero for relations
//!    absent at `t`);
//! 2. `R_t = normalize(GRU(R_{t-1}, input))`;
//! 3. `ω` relation-aware GCN layers starting from `H_{t-1}`;
//! 4. `H_t = normalize(U ⊙ H^ω + (1 − U) ⊙ H_{t-1})` with
//!    `U = σ(H_{t-1} W4 + b)`.
//!
//! Every function here records onto a caller-provided [`Tape`].

use crate::data::{Snapshot, StaticGraph};
use crate::model::{
    EvolutionVars, GcnLayerVars, GruVars, ModelConfig, ModelError, ModelParams, Result, StaticVars,
};
use crate::tensor::{Mode, Tape, Tensor, Var};

/// Tolerance on row norms accepted by the static constraint.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Entity and relation embeddings at one timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionState {
    pub entities: Tensor,
    pub relations: Tensor,
    /// Snapshot index the state reflects; `None` for the initial state.
    pub timestamp: Option<usize>,
}

/// Tape handles of an entity/relation state pair.
#[derive(Clone, Copy, Debug)]
pub struct StateVars {
    pub entities: Var,
    pub relations: Var,
}

impl StateVars {
    pub fn to_state(self, tape: &Tape, timestamp: Option<usize>) -> EvolutionState {
        EvolutionState {
            entities: tape.value(self.entities).clone(),
            relations: tape.value(self.relations).clone(),
            timestamp,
        }
    }

    pub fn from_state(state: &EvolutionState, tape: &mut Tape) -> Self {
        Self {
            entities: tape.constant(state.entities.clone()),
            relations: tape.constant(state.relations.clone()),
        }
    }
}

/// One relation-aware GCN layer over `snapshot`.
///
/// Objects of at least one fact receive the degree-normalized sum of
/// `(h_s + r)` over their incoming facts, projected by `W1`, plus the
/// self-loop `W2 h_o`. Entities in no fact get only `W3 h_o`. RReLU and
/// dropout follow.
pub fn rgcn_layer(
    tape: &mut Tape,
    snapshot: &Snapshot,
    entities: Var,
    relations: Var,
    layer: &GcnLayerVars,
    dropout: f64,
) -> Result<Var> {
    let n = tape.shape(entities)[0];
    if snapshot.num_entities() != n {
        return Err(ModelError::Inconsistent(format!(
            "snapshot indexes {} entities, embeddings have {n}",
            snapshot.num_entities()
        )));
    }
    let isolated = tape.matmul(entities, layer.w_isolated)?;
    let pre = if snapshot.is_empty() {
        isolated
    } else {
        let mut ent_entries = Vec::with_capacity(snapshot.facts.len());
        let mut rel_entries = Vec::with_capacity(snapshot.facts.len());
        for f in &snapshot.facts {
            let c = snapshot.in_degree[f.object as usize];
            if c == 0 {
                return Err(ModelError::Inconsistent(format!(
                    "entity {} is an object at t={} but has zero in-degree",
                    f.object, snapshot.timestamp
                )));
            }
            let w = 1.0 / c as f64;
            ent_entries.push((f.object as usize, f.subject as usize, w));
            rel_entries.push((f.object as usize, f.relation as usize, w));
        }
        let agg_h = tape.spmm(entities, ent_entries, n)?;
        let agg_r = tape.spmm(relations, rel_entries, n)?;
        let msg = tape.add(agg_h, agg_r)?;
        let neighbor = tape.matmul(msg, layer.w_neighbor)?;
        let self_loop = tape.matmul(entities, layer.w_self)?;
        let (active, inactive): (Vec<f64>, Vec<f64>) = (0..n as u32)
            .map(|e| {
                if snapshot.is_active(e) {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            })
            .unzip();
        let self_loop = tape.row_scale(self_loop, active)?;
        let isolated = tape.row_scale(isolated, inactive)?;
        let sum = tape.add(neighbor, self_loop)?;
        tape.add(sum, isolated)?
    };
    let act = tape.rrelu(pre);
    Ok(tape.dropout(act, dropout)?)
}

/// Gate mix `U ⊙ H^ω + (1 − U) ⊙ H_prev` before row normalization.
pub fn time_gate_mix(
    tape: &mut Tape,
    h_omega: Var,
    h_prev: Var,
    gate_weight: Var,
    gate_bias: Var,
) -> Result<Var> {
    if tape.shape(h_omega) != tape.shape(h_prev) {
        return Err(crate::tensor::TensorError::Shape {
            op: "time_gate",
            left: tape.shape(h_omega).to_vec(),
            right: tape.shape(h_prev).to_vec(),
        }
        .into());
    }
    let lin = tape.matmul(h_prev, gate_weight)?;
    let lin = tape.add_row_bias(lin, gate_bias)?;
    let gate = tape.sigmoid(lin);
    let keep = tape.affine(gate, -1.0, 1.0);
    let new_part = tape.mul(gate, h_omega)?;
    let old_part = tape.mul(keep, h_prev)?;
    Ok(tape.add(new_part, old_part)?)
}

pub fn time_gate_update(
    tape: &mut Tape,
    h_omega: Var,
    h_prev: Var,
    gate_weight: Var,
    gate_bias: Var,
) -> Result<Var> {
    let mixed = time_gate_mix(tape, h_omega, h_prev, gate_weight, gate_bias)?;
    Ok(tape.normalize_rows(mixed)?)
}

/// GRU input per relation: `[mean of h_prev over V_{r,t} ; R_init[r]]`,
/// or a zero row when the relation has no fact at this timestamp.
pub fn relation_input(tape: &mut Tape, h_prev: Var, snapshot: &Snapshot, relation_init: Var) -> Result<Var> {
    let num_rel = tape.shape(relation_init)[0];
    let mut entries = Vec::new();
    let mut present = vec![0.0; num_rel];
    for (&r, ents) in &snapshot.rel_entities {
        let r = r as usize;
        if r >= num_rel {
            return Err(ModelError::IdOutOfRange {
                kind: "relation",
                id: r,
                size: num_rel,
            });
        }
        present[r] = 1.0;
        let w = 1.0 / ents.len() as f64;
        entries.extend(ents.iter().map(|&e| (r, e as usize, w)));
    }
    let pooled = tape.spmm(h_prev, entries, num_rel)?;
    let init = tape.row_scale(relation_init, present)?;
    Ok(tape.concat_cols(pooled, init)?)
}

/// GRU cell before normalization:
///
/// ```text
/// z = σ(x Wz + h Uz + bz)
/// g = σ(x Wr + h Ur + br)
/// n = tanh(x Wn + (g ⊙ h) Un + bn)
/// h' = (1 − z) ⊙ h + z ⊙ n
/// ```
pub fn gru_cell(tape: &mut Tape, hidden: Var, input: Var, gru: &GruVars) -> Result<Var> {
    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var, h: Var| -> Result<Var> {
        let xi = tape.matmul(input, w)?;
        let hh = tape.matmul(h, u)?;
        let s = tape.add(xi, hh)?;
        Ok(tape.add_row_bias(s, b)?)
    };
    let z = gate(tape, gru.w_update, gru.u_update, gru.b_update, hidden)?;
    let z = tape.sigmoid(z);
    let g = gate(tape, gru.w_reset, gru.u_reset, gru.b_reset, hidden)?;
    let g = tape.sigmoid(g);
    let gated = tape.mul(g, hidden)?;
    let n = gate(tape, gru.w_cand, gru.u_cand, gru.b_cand, gated)?;
    let n = tape.tanh(n);
    let keep = tape.affine(z, -1.0, 1.0);
    let old = tape.mul(keep, hidden)?;
    let new = tape.mul(z, n)?;
    Ok(tape.add(old, new)?)
}

pub fn gru_update(tape: &mut Tape, hidden: Var, input: Var, gru: &GruVars) -> Result<Var> {
    let h = gru_cell(tape, hidden, input, gru)?;
    Ok(tape.normalize_rows(h)?)
}

/// Static entity embeddings from a one-layer R-GCN without self-loop:
/// `h^s_i = ReLU((1/c_i) Σ_{(i, r, j)} h'_j W_r)`, rows scaled to unit norm.
pub fn static_embeddings(tape: &mut Tape, graph: &StaticGraph, vars: &StaticVars) -> Result<Var> {
    let n = graph.num_entities;
    let weights = tape.shape(vars.relation_weights).to_vec();
    let (num_rel, d) = (weights[0], weights[1]);
    if num_rel < graph.num_static_relations {
        return Err(ModelError::Config(format!(
            "static graph has {} relations, parameters hold {num_rel}",
            graph.num_static_relations
        )));
    }
    if tape.shape(vars.input_embeddings)[0] != n + graph.num_properties() {
        return Err(ModelError::Config(format!(
            "static input table has {} rows, graph needs {}",
            tape.shape(vars.input_embeddings)[0],
            n + graph.num_properties()
        )));
    }
    if let Some(i) = graph.neighbor_count.iter().position(|&c| c == 0) {
        return Err(ModelError::Config(format!("entity {i} has no static edge")));
    }
    let flat = tape.reshape(vars.relation_weights, vec![num_rel, d * d])?;
    let mut total: Option<Var> = None;
    for rel in 0..graph.num_static_relations {
        let entries: Vec<(usize, usize, f64)> = graph
            .edges
            .iter()
            .filter(|e| e.1 as usize == rel)
            .map(|&(i, _, j)| {
                (
                    i as usize,
                    n + j as usize,
                    1.0 / graph.neighbor_count[i as usize] as f64,
                )
            })
            .collect();
        if entries.is_empty() {
            continue;
        }
        let agg = tape.spmm(vars.input_embeddings, entries, n)?;
        let w = tape.gather_rows(flat, &[rel])?;
        let w = tape.reshape(w, vec![d, d])?;
        let term = tape.matmul(agg, w)?;
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    let total = total.ok_or_else(|| ModelError::Config("static graph has no edges".into()))?;
    let act = tape.relu(total);
    Ok(tape.normalize_rows(act)?)
}

/// Angle threshold `min(γ·x, 90°)` in degrees for window position `x`.
pub fn angle_threshold(gamma_deg: f64, x: usize) -> f64 {
    (gamma_deg * x as f64).min(90.0)
}

fn cos_threshold(gamma_deg: f64, x: usize) -> f64 {
    let theta = angle_threshold(gamma_deg, x);
    if theta >= 90.0 {
        0.0
    } else {
        theta.to_radians().cos()
    }
}

fn check_unit_rows(t: &Tensor, what: &'static str) -> Result<()> {
    for i in 0..t.rows() {
        let norm = t.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        // rows left at zero by the normalization policy are exempt
        if norm >= crate::tensor::ZERO_NORM && (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(ModelError::NonUnitRow { what, row: i, norm });
        }
    }
    Ok(())
}

/// `Σ_x Σ_i max(cos θ_x − ⟨h^s_i, h_{x,i}⟩, 0)` over the window states,
/// where `h_seq[0]` is the input state and `h_seq[k]` the state after the
/// `k`-th snapshot.
pub fn static_constraint_loss(tape: &mut Tape, h_static: Var, h_seq: &[Var], gamma_deg: f64) -> Result<Var> {
    check_unit_rows(tape.value(h_static), "static embeddings")?;
    let mut total: Option<Var> = None;
    for (x, &h) in h_seq.iter().enumerate() {
        check_unit_rows(tape.value(h), "evolved embeddings")?;
        let prod = tape.mul(h_static, h)?;
        let cos = tape.row_sum(prod)?;
        let gap = tape.affine(cos, -1.0, cos_threshold(gamma_deg, x));
        let hinge = tape.relu(gap);
        let s = tape.sum(hinge);
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    Ok(match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(0.0)),
    })
}

/// Normalized initial state built from the trainable initial tables.
pub fn initial_state(tape: &mut Tape, vars: &EvolutionVars) -> Result<StateVars> {
    Ok(StateVars {
        entities: tape.normalize_rows(vars.entity_init)?,
        relations: tape.normalize_rows(vars.relation_init)?,
    })
}

#[derive(Clone, Debug)]
pub struct EvolveOutput {
    pub state: StateVars,
    /// Entity states `[input, after step 1, …, after step m]`.
    pub entity_seq: Vec<Var>,
}

/// Runs the recurrence over `window` in temporal order starting at `init`.
/// `init.relations` doubles as the initial relation table fed to the GRU.
pub fn evolve(
    tape: &mut Tape,
    window: &[Snapshot],
    init: StateVars,
    vars: &EvolutionVars,
    config: &ModelConfig,
) -> Result<EvolveOutput> {
    if window.is_empty() {
        return Err(ModelError::Config("history window is empty".into()));
    }
    let mut h = init.entities;
    let mut r = init.relations;
    let mut entity_seq = Vec::with_capacity(window.len() + 1);
    entity_seq.push(h);
    for snap in window {
        let input = relation_input(tape, h, snap, init.relations)?;
        r = gru_update(tape, r, input, &vars.gru)?;
        let mut hl = h;
        for layer in &vars.layers {
            hl = rgcn_layer(tape, snap, hl, r, layer, config.gcn_dropout)?;
        }
        h = if config.time_gate {
            time_gate_update(tape, hl, h, vars.gate_weight, vars.gate_bias)?
        } else {
            tape.normalize_rows(hl)?
        };
        entity_seq.push(h);
    }
    Ok(EvolveOutput {
        state: StateVars {
            entities: h,
            relations: r,
        },
        entity_seq,
    })
}

/// Evaluates the evolved state for `window` outside any training step.
pub fn evolve_state(
    params: &ModelParams,
    window: &[Snapshot],
    mode: Mode,
    seed: u64,
) -> Result<EvolutionState> {
    let mut tape = Tape::new(mode, seed);
    let vars = params.bind(&mut tape);
    let init = initial_state(&mut tape, &vars.evolution)?;
    let out = evolve(&mut tape, window, init, &vars.evolution, &params.config)?;
    Ok(out.state.to_state(&tape, window.last().map(|s| s.timestamp)))
}

/// The normalized initial tables as a state.
pub fn initial_evolution_state(params: &ModelParams) -> Result<EvolutionState> {
    let mut tape = Tape::new(Mode::Eval, 0);
    let vars = params.bind(&mut tape);
    let init = initial_state(&mut tape, &vars.evolution)?;
    Ok(init.to_state(&tape, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Quadruple;
    use crate::tensor::Mode;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn eye(d: usize) -> Tensor {
        let mut t = Tensor::zeros(vec![d, d]);
        for i in 0..d {
            t.data_mut()[i * d + i] = 1.0;
        }
        t
    }

    fn layer_vars(tape: &mut Tape, w1: Tensor, w2: Tensor, w3: Tensor) -> GcnLayerVars {
        GcnLayerVars {
            w_neighbor: tape.leaf(w1),
            w_self: tape.leaf(w2),
            w_isolated: tape.leaf(w3),
        }
    }

    #[test]
    fn single_edge_layer() {
        let snap = Snapshot::new(0, vec![Quadruple::new(0, 0, 1, 0)], 2);
        let mut tape = Tape::new(Mode::Eval, 0);
        let h = tape.leaf(t2(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let r = tape.leaf(t2(&[&[0.0, 1.0]]));
        let lv = layer_vars(&mut tape, eye(2), eye(2), eye(2));
        let out = rgcn_layer(&mut tape, &snap, h, r, &lv, 0.0).unwrap();
        assert_eq!(tape.value(out).row(1), &[1.0, 2.0]);
        // entity 0 is a subject, so it is active but receives no message
        assert_eq!(tape.value(out).row(0), &[1.0, 0.0]);
    }

    #[test]
    fn empty_snapshot_uses_isolated_weight() {
        let snap = Snapshot::new(0, vec![], 2);
        let mut tape = Tape::new(Mode::Eval, 0);
        let h = tape.leaf(t2(&[&[1.0, -2.0], &[0.5, 1.0]]));
        let r = tape.leaf(t2(&[&[0.0, 1.0]]));
        let w3 = t2(&[&[2.0, 0.0], &[0.0, 3.0]]);
        let lv = layer_vars(&mut tape, eye(2), eye(2), w3);
        let out = rgcn_layer(&mut tape, &snap, h, r, &lv, 0.0).unwrap();
        let s = 11.0 / 48.0;
        assert_eq!(tape.value(out).data(), &[2.0, -6.0 * s, 1.0, 3.0]);
    }

    #[test]
    fn gate_limits() {
        let mut tape = Tape::new(Mode::Eval, 0);
        let h_omega = tape.leaf(t2(&[&[3.0, 4.0], &[1.0, 0.0]]));
        let h_prev = tape.leaf(t2(&[&[0.0, 2.0], &[0.0, -5.0]]));
        let w = tape.leaf(Tensor::zeros(vec![2, 2]));
        let closed = tape.leaf(Tensor::vector(vec![-40.0; 2]));
        let open = tape.leaf(Tensor::vector(vec![40.0; 2]));
        let c = time_gate_update(&mut tape, h_omega, h_prev, w, closed).unwrap();
        assert!(tape.value(c).max_abs_diff(&t2(&[&[0.0, 1.0], &[0.0, -1.0]])) < 1e-15);
        let o = time_gate_update(&mut tape, h_omega, h_prev, w, open).unwrap();
        assert!(tape.value(o).max_abs_diff(&t2(&[&[0.6, 0.8], &[1.0, 0.0]])) < 1e-15);
    }

    #[test]
    fn relation_input_pooling() {
        let facts = vec![Quadruple::new(0, 1, 1, 0), Quadruple::new(2, 2, 2, 0)];
        let snap = Snapshot::new(0, facts, 3);
        let mut tape = Tape::new(Mode::Eval, 0);
        let h = tape.leaf(t2(&[&[1.0, 0.0], &[0.0, 1.0], &[0.3, 0.7]]));
        let r0 = tape.leaf(t2(&[&[9.0, 9.0], &[5.0, 6.0], &[7.0, 8.0]]));
        let x = relation_input(&mut tape, h, &snap, r0).unwrap();
        let v = tape.value(x);
        assert_eq!(v.shape(), &[3, 4]);
        assert_eq!(v.row(0), &[0.0; 4]);
        assert_eq!(v.row(1), &[0.5, 0.5, 5.0, 6.0]);
        assert_eq!(v.row(2), &[0.3, 0.7, 7.0, 8.0]);
    }

    fn gru_const(tape: &mut Tape, d: usize, z_bias: f64) -> GruVars {
        let mut leaf = |shape: Vec<usize>, v: f64| {
            let n = shape.iter().product();
            tape.leaf(Tensor::new(shape, vec![v; n]).unwrap())
        };
        GruVars {
            w_update: leaf(vec![2 * d, d], 0.0),
            u_update: leaf(vec![d, d], 0.0),
            b_update: leaf(vec![d], z_bias),
            w_reset: leaf(vec![2 * d, d], 0.3),
            u_reset: leaf(vec![d, d], 0.1),
            b_reset: leaf(vec![d], 0.0),
            w_cand: leaf(vec![2 * d, d], 0.0),
            u_cand: leaf(vec![d, d], 0.0),
            b_cand: leaf(vec![d], 0.0),
        }
    }

    #[test]
    fn gru_carry_through_and_degenerate_candidate() {
        let mut tape = Tape::new(Mode::Eval, 0);
        let h = tape.leaf(t2(&[&[3.0, 4.0], &[0.0, 2.0]]));
        let x = tape.leaf(Tensor::zeros(vec![2, 4]));
        let carry = gru_const(&mut tape, 2, -40.0);
        let out = gru_update(&mut tape, h, x, &carry).unwrap();
        assert!(tape.value(out).max_abs_diff(&t2(&[&[0.6, 0.8], &[0.0, 1.0]])) < 1e-15);

        let mut tape = Tape::new(Mode::Eval, 0);
        let h = tape.leaf(t2(&[&[3.0, 4.0], &[0.0, 2.0]]));
        let x = tape.leaf(Tensor::zeros(vec![2, 4]));
        let replace = gru_const(&mut tape, 2, 800.0);
        let out = gru_update(&mut tape, h, x, &replace).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0; 4]);
        assert_eq!(tape.zero_norm_rows(), 2);
    }

    #[test]
    fn static_single_edge_and_relu_kill() {
        let g = StaticGraph::from_names(&["Navy".to_string()]);
        let mut tape = Tape::new(Mode::Eval, 0);
        let mut w = Tensor::zeros(vec![2, 2, 2]);
        w.data_mut()[..4].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let vars = StaticVars {
            relation_weights: tape.leaf(w),
            input_embeddings: tape.leaf(t2(&[&[0.0, 0.0], &[3.0, 4.0]])),
        };
        let hs = static_embeddings(&mut tape, &g, &vars).unwrap();
        assert!(tape.value(hs).max_abs_diff(&t2(&[&[0.6, 0.8]])) < 1e-15);

        let mut tape = Tape::new(Mode::Eval, 0);
        let mut w = Tensor::zeros(vec![2, 2, 2]);
        w.data_mut()[..4].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let vars = StaticVars {
            relation_weights: tape.leaf(w),
            input_embeddings: tape.leaf(t2(&[&[0.0, 0.0], &[-3.0, -4.0]])),
        };
        let hs = static_embeddings(&mut tape, &g, &vars).unwrap();
        assert_eq!(tape.value(hs).data(), &[0.0, 0.0]);
        assert_eq!(tape.zero_norm_rows(), 1);
    }

    #[test]
    fn static_requires_an_edge_per_entity() {
        let mut g = StaticGraph::from_names(&["A".to_string(), "B".to_string()]);
        g.edges.retain(|e| e.0 == 0);
        g.neighbor_count[1] = 0;
        let mut tape = Tape::new(Mode::Eval, 0);
        let vars = StaticVars {
            relation_weights: tape.leaf(Tensor::zeros(vec![2, 2, 2])),
            input_embeddings: tape.leaf(Tensor::zeros(vec![4, 2])),
        };
        assert!(matches!(
            static_embeddings(&mut tape, &g, &vars),
            Err(ModelError::Config(_))
        ));
    }

    #[test]
    fn angle_thresholds() {
        assert_eq!(angle_threshold(10.0, 5), 50.0);
        assert_eq!(angle_threshold(10.0, 12), 90.0);
        assert_eq!(cos_threshold(10.0, 12), 0.0);
        assert_eq!(cos_threshold(10.0, 0), 1.0);
    }

    #[test]
    fn constraint_loss_cases() {
        let mut tape = Tape::new(Mode::Eval, 0);
        let hs = tape.leaf(t2(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let same = tape.leaf(t2(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let l = static_constraint_loss(&mut tape, hs, &[same, same, same], 10.0).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        // orthogonal rows at x ≥ 9 sit exactly on the 90° cap
        let orth = tape.leaf(t2(&[&[0.0, 1.0], &[1.0, 0.0]]));
        let seq = vec![orth; 12];
        let l = static_constraint_loss(&mut tape, hs, &seq, 10.0).unwrap();
        let expected: f64 = (0..9).map(|x| 2.0 * cos_threshold(10.0, x)).sum();
        assert!((tape.value(l).item() - expected).abs() < 1e-12);

        let bad = tape.leaf(t2(&[&[2.0, 0.0], &[0.0, 1.0]]));
        assert!(matches!(
            static_constraint_loss(&mut tape, hs, &[bad], 10.0),
            Err(ModelError::NonUnitRow { row: 0, .. })
        ));
    }
}
