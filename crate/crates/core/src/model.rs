//! Trainable parameter set, its initialization, and binding onto a tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{kind} id {id} out of range ({size})")]
    IdOutOfRange {
        kind: &'static str,
        id: usize,
        size: usize,
    },
    #[error("internal consistency error: {0}")]
    Inconsistent(String),
    #[error("row {row} of {what} has norm {norm}, expected 1")]
    NonUnitRow {
        what: &'static str,
        row: usize,
        norm: f64,
    },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticShape {
    pub num_properties: usize,
    pub num_relations: usize,
}

/// Architecture hyperparameters fixed at construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_entities: usize,
    /// Relation vocabulary including inverse relations.
    pub num_relations: usize,
    pub dim: usize,
    pub layers: usize,
    pub gcn_dropout: f64,
    pub decoder_dropout: f64,
    pub kernels: usize,
    pub kernel_width: usize,
    pub time_gate: bool,
    pub static_graph: Option<StaticShape>,
}

impl ModelConfig {
    pub fn new(num_entities: usize, num_relations: usize, dim: usize) -> Self {
        Self {
            num_entities,
            num_relations,
            dim,
            layers: 2,
            gcn_dropout: 0.2,
            decoder_dropout: 0.2,
            kernels: 50,
            kernel_width: 3,
            time_gate: true,
            static_graph: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(ModelError::Config("at least one GCN layer is required".into()));
        }
        if self.dim == 0 || self.num_entities == 0 || self.num_relations == 0 {
            return Err(ModelError::Config("empty vocabulary or zero dimension".into()));
        }
        if self.kernel_width.is_multiple_of(2) {
            return Err(ModelError::Config(format!(
                "kernel width {} must be odd to keep the length",
                self.kernel_width
            )));
        }
        if self.dim < self.kernel_width {
            return Err(ModelError::Config(format!(
                "dimension {} is narrower than the decoder kernel {}",
                self.dim, self.kernel_width
            )));
        }
        for p in [self.gcn_dropout, self.decoder_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(TensorError::DropoutRate(p).into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnLayerParams {
    pub w_neighbor: Tensor,
    pub w_self: Tensor,
    pub w_isolated: Tensor,
}

/// Update gate, reset gate and candidate, each with an input weight
/// `[2d×d]`, a hidden weight `[d×d]` and a bias `[d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_update: Tensor,
    pub u_update: Tensor,
    pub b_update: Tensor,
    pub w_reset: Tensor,
    pub u_reset: Tensor,
    pub b_reset: Tensor,
    pub w_cand: Tensor,
    pub u_cand: Tensor,
    pub b_cand: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StaticParams {
    /// `[|R^s|×d×d]`, one matrix per static relation.
    pub relation_weights: Tensor,
    /// `[(|V| + |V^s|)×d]`; property `j` lives in row `|V| + j`.
    pub input_embeddings: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionParams {
    pub entity_init: Tensor,
    pub relation_init: Tensor,
    pub layers: Vec<GcnLayerParams>,
    pub gate_weight: Tensor,
    pub gate_bias: Tensor,
    pub gru: GruParams,
    pub static_params: Option<StaticParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    /// `[K×2×w]`
    pub kernels: Tensor,
    /// `[(K·d)×d]`
    pub fc: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub evolution: EvolutionParams,
    pub entity_decoder: DecoderParams,
    pub relation_decoder: DecoderParams,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape matches").trainable()
}

fn xavier(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, bound)
}

fn zeros(shape: Vec<usize>) -> Tensor {
    Tensor::zeros(shape).trainable()
}

/// Embedding table with rows drawn from `U(-1/√d, 1/√d)` and then scaled
/// to unit length.
fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Tensor {
    let mut t = uniform(rng, vec![rows, d], 1.0 / (d as f64).sqrt());
    for i in 0..rows {
        let row = t.row_mut(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    t
}

impl ModelParams {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        let layers = (0..config.layers)
            .map(|_| GcnLayerParams {
                w_neighbor: xavier(&mut rng, vec![d, d], d, d),
                w_self: xavier(&mut rng, vec![d, d], d, d),
                w_isolated: xavier(&mut rng, vec![d, d], d, d),
            })
            .collect();
        let gru = GruParams {
            w_update: xavier(&mut rng, vec![2 * d, d], 2 * d, d),
            u_update: xavier(&mut rng, vec![d, d], d, d),
            b_update: zeros(vec![d]),
            w_reset: xavier(&mut rng, vec![2 * d, d], 2 * d, d),
            u_reset: xavier(&mut rng, vec![d, d], d, d),
            b_reset: zeros(vec![d]),
            w_cand: xavier(&mut rng, vec![2 * d, d], 2 * d, d),
            u_cand: xavier(&mut rng, vec![d, d], d, d),
            b_cand: zeros(vec![d]),
        };
        let static_params = config.static_graph.map(|s| StaticParams {
            relation_weights: xavier(&mut rng, vec![s.num_relations, d, d], d, d),
            input_embeddings: unit_rows(&mut rng, config.num_entities + s.num_properties, d),
        });
        let evolution = EvolutionParams {
            entity_init: unit_rows(&mut rng, config.num_entities, d),
            relation_init: unit_rows(&mut rng, config.num_relations, d),
            layers,
            gate_weight: xavier(&mut rng, vec![d, d], d, d),
            gate_bias: zeros(vec![d]),
            gru,
            static_params,
        };
        let (k, w) = (config.kernels, config.kernel_width);
        let mut decoder = || DecoderParams {
            kernels: xavier(&mut rng, vec![k, 2, w], 2 * w, k * w),
            fc: xavier(&mut rng, vec![k * d, d], k * d, d),
        };
        let entity_decoder = decoder();
        let relation_decoder = decoder();
        Ok(Self {
            config,
            evolution,
            entity_decoder,
            relation_decoder,
        })
    }

    /// Every trainable tensor with a stable dotted name, in binding order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let e = &self.evolution;
        let mut out: Vec<(String, &Tensor)> = vec![
            ("evolution.entity_init".into(), &e.entity_init),
            ("evolution.relation_init".into(), &e.relation_init),
        ];
        for (i, l) in e.layers.iter().enumerate() {
            out.push((format!("evolution.layer{i}.w_neighbor"), &l.w_neighbor));
            out.push((format!("evolution.layer{i}.w_self"), &l.w_self));
            out.push((format!("evolution.layer{i}.w_isolated"), &l.w_isolated));
        }
        out.push(("evolution.gate_weight".into(), &e.gate_weight));
        out.push(("evolution.gate_bias".into(), &e.gate_bias));
        let g = &e.gru;
        for (n, t) in [
            ("w_update", &g.w_update),
            ("u_update", &g.u_update),
            ("b_update", &g.b_update),
            ("w_reset", &g.w_reset),
            ("u_reset", &g.u_reset),
            ("b_reset", &g.b_reset),
            ("w_cand", &g.w_cand),
            ("u_cand", &g.u_cand),
            ("b_cand", &g.b_cand),
        ] {
            out.push((format!("evolution.gru.{n}"), t));
        }
        if let Some(s) = &e.static_params {
            out.push(("evolution.static.relation_weights".into(), &s.relation_weights));
            out.push(("evolution.static.input_embeddings".into(), &s.input_embeddings));
        }
        for (prefix, dec) in [
            ("entity_decoder", &self.entity_decoder),
            ("relation_decoder", &self.relation_decoder),
        ] {
            out.push((format!("{prefix}.kernels"), &dec.kernels));
            out.push((format!("{prefix}.fc"), &dec.fc));
        }
        out
    }

    /// Mutable view in the same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let e = &mut self.evolution;
        let mut out: Vec<&mut Tensor> = vec![&mut e.entity_init, &mut e.relation_init];
        for l in &mut e.layers {
            out.push(&mut l.w_neighbor);
            out.push(&mut l.w_self);
            out.push(&mut l.w_isolated);
        }
        out.push(&mut e.gate_weight);
        out.push(&mut e.gate_bias);
        let g = &mut e.gru;
        out.extend([
            &mut g.w_update,
            &mut g.u_update,
            &mut g.b_update,
            &mut g.w_reset,
            &mut g.u_reset,
            &mut g.b_reset,
            &mut g.w_cand,
            &mut g.u_cand,
            &mut g.b_cand,
        ]);
        if let Some(s) = &mut e.static_params {
            out.push(&mut s.relation_weights);
            out.push(&mut s.input_embeddings);
        }
        for dec in [&mut self.entity_decoder, &mut self.relation_decoder] {
            out.push(&mut dec.kernels);
            out.push(&mut dec.fc);
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        let mut leaves: Vec<Var> = self
            .named_tensors()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();
        let all = leaves.clone();
        leaves.reverse();
        let mut next = || leaves.pop().expect("binding order matches named_tensors");
        let entity_init = next();
        let relation_init = next();
        let layers = (0..self.evolution.layers.len())
            .map(|_| GcnLayerVars {
                w_neighbor: next(),
                w_self: next(),
                w_isolated: next(),
            })
            .collect();
        let gate_weight = next();
        let gate_bias = next();
        let gru = GruVars {
            w_update: next(),
            u_update: next(),
            b_update: next(),
            w_reset: next(),
            u_reset: next(),
            b_reset: next(),
            w_cand: next(),
            u_cand: next(),
            b_cand: next(),
        };
        let static_vars = self.evolution.static_params.as_ref().map(|_| StaticVars {
            relation_weights: next(),
            input_embeddings: next(),
        });
        let entity_decoder = DecoderVars {
            kernels: next(),
            fc: next(),
        };
        let relation_decoder = DecoderVars {
            kernels: next(),
            fc: next(),
        };
        ModelVars {
            evolution: EvolutionVars {
                entity_init,
                relation_init,
                layers,
                gate_weight,
                gate_bias,
                gru,
                static_vars,
            },
            entity_decoder,
            relation_decoder,
            all,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GcnLayerVars {
    pub w_neighbor: Var,
    pub w_self: Var,
    pub w_isolated: Var,
}

#[derive(Clone, Debug)]
pub struct GruVars {
    pub w_update: Var,
    pub u_update: Var,
    pub b_update: Var,
    pub w_reset: Var,
    pub u_reset: Var,
    pub b_reset: Var,
    pub w_cand: Var,
    pub u_cand: Var,
    pub b_cand: Var,
}

#[derive(Clone, Debug)]
pub struct StaticVars {
    pub relation_weights: Var,
    pub input_embeddings: Var,
}

#[derive(Clone, Debug)]
pub struct EvolutionVars {
    pub entity_init: Var,
    pub relation_init: Var,
    pub layers: Vec<GcnLayerVars>,
    pub gate_weight: Var,
    pub gate_bias: Var,
    pub gru: GruVars,
    pub static_vars: Option<StaticVars>,
}

#[derive(Clone, Debug)]
pub struct DecoderVars {
    pub kernels: Var,
    pub fc: Var,
}

/// Tape handles for a bound [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub evolution: EvolutionVars,
    pub entity_decoder: DecoderVars,
    pub relation_decoder: DecoderVars,
    /// Every leaf, in [`ModelParams::named_tensors`] order.
    pub all: Vec<Var>,
}
