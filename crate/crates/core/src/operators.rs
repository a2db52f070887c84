//! Post-training mutation operators.
//!
//! Every operator is a pure function `(instance, config, seed) -> instance`.
//! Random choices are split into two independent streams of the seed:
//! stream 0 decides *what* is mutated (weights or neurons), stream 1 draws
//! the mutation itself (GF noise, WS permutations). Because the selection
//! stream never depends on parameter values other than the ratio, a fixed
//! seed mutates the same weights for every inhibition factor, which makes the
//! inhibitors' impact monotone in `λ`.
//!
//! Neuron granularity: a dense unit is an output column, a conv unit is an
//! output channel. Incoming parameters are the unit's kernel slice (plus its
//! bias); outgoing parameters are the slice of the next parametric layer's
//! kernel that reads the unit, looking through pooling/flatten/activation
//! layers.

use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerSpec, ModelGraph, ModelInstance, Provenance};
use crate::rng::rng_stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperatorKind {
    /// Gaussian fuzzing: `clip(w * (1 + ε), -1, 1)`.
    GF,
    /// Weight shuffle of a neuron's incoming weights.
    WS,
    /// Neuron effect block: zero the outgoing weights.
    NEB,
    /// Neuron activation inverse: negate the outgoing weights.
    NAI,
    /// Neuron switch: exchange incoming weights and biases of neuron pairs.
    NS,
    /// Weight inhibitor: `w * (1 - λ)` on a random subset of weights.
    WI,
    /// Neuron inhibitor: `w * (1 - λ)` on the outgoing weights of random neurons.
    NI,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 7] = [
        OperatorKind::GF,
        OperatorKind::WS,
        OperatorKind::NEB,
        OperatorKind::NAI,
        OperatorKind::NS,
        OperatorKind::WI,
        OperatorKind::NI,
    ];

    pub fn is_weight_level(self) -> bool {
        matches!(self, OperatorKind::GF | OperatorKind::WI)
    }

    /// Operators that rewrite outgoing weights and so cannot act on the
    /// final parametric layer.
    pub fn needs_outgoing(self) -> bool {
        matches!(
            self,
            OperatorKind::NEB | OperatorKind::NAI | OperatorKind::NI
        )
    }

    pub fn uses_inhibition(self) -> bool {
        matches!(self, OperatorKind::WI | OperatorKind::NI)
    }

    pub fn default_searched_param(self) -> SearchedParam {
        if self.uses_inhibition() {
            SearchedParam::Inhibition
        } else {
            SearchedParam::Ratio
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OperatorKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown operator `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchedParam {
    Ratio,
    Inhibition,
    NoiseSigma,
}

pub const DEFAULT_RATIO: f64 = 0.05;
pub const DEFAULT_INHIBITION: f64 = 0.5;
pub const DEFAULT_GF_SIGMA: f64 = 0.5;

/// An operator plus its parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    pub operator: OperatorKind,
    /// Fraction of weights (GF, WI) or neurons (the rest) to mutate.
    pub ratio: f64,
    /// Inhibition factor, WI/NI only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inhibition: Option<f64>,
    /// Standard deviation of the multiplicative noise, GF only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    /// Mutable layer indices; `None` means every parametric layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_scope: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub searched_param: Option<SearchedParam>,
}

impl OperatorConfig {
    /// Default configuration of `operator` (ratio 0.05, λ 0.5, σ 0.5).
    pub fn new(operator: OperatorKind) -> Self {
        OperatorConfig {
            operator,
            ratio: DEFAULT_RATIO,
            inhibition: operator.uses_inhibition().then_some(DEFAULT_INHIBITION),
            noise_sigma: (operator == OperatorKind::GF).then_some(DEFAULT_GF_SIGMA),
            layer_scope: None,
            searched_param: Some(operator.default_searched_param()),
        }
    }

    pub fn with_ratio(mut self, ratio: f64) -> Self {
        self.ratio = ratio;
        self
    }

    pub fn with_inhibition(mut self, inhibition: f64) -> Self {
        self.inhibition = Some(inhibition);
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.noise_sigma = Some(sigma);
        self
    }

    pub fn with_param(mut self, param: SearchedParam, value: f64) -> Self {
        match param {
            SearchedParam::Ratio => self.ratio = value,
            SearchedParam::Inhibition => self.inhibition = Some(value),
            SearchedParam::NoiseSigma => self.noise_sigma = Some(value),
        }
        self
    }

    pub fn param(&self, param: SearchedParam) -> Option<f64> {
        match param {
            SearchedParam::Ratio => Some(self.ratio),
            SearchedParam::Inhibition => self.inhibition,
            SearchedParam::NoiseSigma => self.noise_sigma,
        }
    }

    fn lambda(&self) -> f64 {
        self.inhibition.unwrap_or(DEFAULT_INHIBITION)
    }

    fn sigma(&self) -> f64 {
        self.noise_sigma.unwrap_or(DEFAULT_GF_SIGMA)
    }

    /// Stable textual id, used in provenance records and archive paths.
    pub fn id(&self) -> String {
        let mut s = format!("{}(ratio={}", self.operator, self.ratio);
        if self.operator.uses_inhibition() {
            s.push_str(&format!(",inhibition={}", self.lambda()));
        }
        if self.operator == OperatorKind::GF {
            s.push_str(&format!(",sigma={}", self.sigma()));
        }
        if let Some(scope) = &self.layer_scope {
            s.push_str(&format!(",layers={scope:?}"));
        }
        s.push(')');
        s
    }

    pub fn validate(&self, graph: &ModelGraph) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::Config(format!(
                "ratio {} outside [0, 1]",
                self.ratio
            )));
        }
        if self.operator.uses_inhibition() && !(0.0..=1.0).contains(&self.lambda()) {
            return Err(Error::Config(format!(
                "inhibition {} outside [0, 1]",
                self.lambda()
            )));
        }
        if self.operator == OperatorKind::GF && !(self.sigma() > 0.0 && self.sigma().is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma {} must be > 0",
                self.sigma()
            )));
        }
        if let Some(scope) = &self.layer_scope {
            for &l in scope {
                if !graph.layers.get(l).is_some_and(LayerSpec::is_parametric) {
                    return Err(Error::Config(format!(
                        "layer_scope entry {l} is not a dense/conv layer"
                    )));
                }
            }
        }
        if let Some(p) = self.searched_param {
            let ok = match p {
                SearchedParam::Ratio => true,
                SearchedParam::Inhibition => self.operator.uses_inhibition(),
                SearchedParam::NoiseSigma => self.operator == OperatorKind::GF,
            };
            if !ok {
                return Err(Error::Config(format!(
                    "{} has no parameter {p:?}",
                    self.operator
                )));
            }
        }
        Ok(())
    }

    fn scoped_layers(&self, graph: &ModelGraph) -> Vec<usize> {
        let all = graph.parametric_layers();
        match &self.layer_scope {
            Some(scope) => all.into_iter().filter(|l| scope.contains(l)).collect(),
            None => all,
        }
    }
}

/// A unit of a dense or conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronAddress {
    pub layer_index: usize,
    pub unit_index: usize,
}

/// One kernel entry: `layer` index and flat offset into its kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WeightRef {
    pub layer: usize,
    pub index: usize,
}

/// What an application of an operator touches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selection {
    Weights(Vec<WeightRef>),
    /// In sampling order (NS pairs consecutive same-layer entries).
    Neurons(Vec<NeuronAddress>),
}

impl Selection {
    pub fn len(&self) -> usize {
        match self {
            Selection::Weights(w) => w.len(),
            Selection::Neurons(n) => n.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat kernel offsets of the weights feeding unit `unit` of `layer`.
pub fn incoming_slots(layer: &LayerSpec, unit: usize) -> Vec<usize> {
    match layer {
        LayerSpec::Dense {
            kernel_shape: [fi, fo],
            ..
        } => (0..*fi).map(|i| i * fo + unit).collect(),
        LayerSpec::Conv2d {
            kernel_shape: [kh, kw, ci, co],
            ..
        } => (0..kh * kw * ci).map(|i| i * co + unit).collect(),
        _ => Vec::new(),
    }
}

/// The next parametric layer after `addr.layer_index` and the flat kernel
/// offsets in it that read `addr`'s output. `None` for final-layer neurons.
pub fn outgoing_slots(
    graph: &ModelGraph,
    addr: NeuronAddress,
) -> Result<Option<(usize, Vec<usize>)>> {
    let shapes = graph.layer_shapes()?;
    let src_shape = &shapes[addr.layer_index];
    let channels = *src_shape.last().expect("non-empty shape");
    let Some(next) =
        (addr.layer_index + 1..graph.layers.len()).find(|&i| graph.layers[i].is_parametric())
    else {
        return Ok(None);
    };
    let u = addr.unit_index;
    let slots = match &graph.layers[next] {
        LayerSpec::Dense {
            kernel_shape: [fi, fo],
            ..
        } => {
            let rows: Vec<usize> = if src_shape.len() == 1 {
                vec![u]
            } else {
                (u..*fi).step_by(channels).collect()
            };
            rows.into_iter()
                .flat_map(|r| r * fo..(r + 1) * fo)
                .collect()
        }
        LayerSpec::Conv2d {
            kernel_shape: [kh, kw, ci, co],
            ..
        } => {
            if *ci != channels {
                return Err(Error::Unsupported(format!(
                    "cannot map units of layer {} onto conv layer {next}",
                    addr.layer_index
                )));
            }
            (0..kh * kw)
                .flat_map(|p| {
                    let base = (p * ci + u) * co;
                    base..base + co
                })
                .collect()
        }
        _ => unreachable!("parametric"),
    };
    Ok(Some((next, slots)))
}

fn neuron_pool(instance: &ModelInstance, cfg: &OperatorConfig) -> Vec<NeuronAddress> {
    let graph = &instance.graph;
    let last = *graph.parametric_layers().last().expect("validated graph");
    cfg.scoped_layers(graph)
        .into_iter()
        .filter(|&l| !(cfg.operator.needs_outgoing() && l == last))
        .flat_map(|l| {
            let units = graph.layers[l].units().expect("parametric");
            (0..units).map(move |u| NeuronAddress {
                layer_index: l,
                unit_index: u,
            })
        })
        .collect()
}

fn weight_pool_size(instance: &ModelInstance, cfg: &OperatorConfig) -> usize {
    cfg.scoped_layers(&instance.graph)
        .into_iter()
        .map(|l| {
            instance.graph.layers[l]
                .param_sizes()
                .expect("parametric")
                .0
        })
        .sum()
}

fn neuron_count(ratio: f64, pool: usize) -> usize {
    if ratio <= 0.0 || pool == 0 {
        return 0;
    }
    ((ratio * pool as f64).round() as usize).clamp(1, pool)
}

/// How many weights (GF, WI; expected value, rounded) or neurons (exact)
/// an application of `cfg` touches.
pub fn selection_count(cfg: &OperatorConfig, instance: &ModelInstance) -> usize {
    if cfg.operator.is_weight_level() {
        (cfg.ratio * weight_pool_size(instance, cfg) as f64).round() as usize
    } else {
        neuron_count(cfg.ratio, neuron_pool(instance, cfg).len())
    }
}

/// The weights or neurons that `apply(instance, cfg, seed)` mutates.
pub fn select(instance: &ModelInstance, cfg: &OperatorConfig, seed: u64) -> Result<Selection> {
    cfg.validate(&instance.graph)?;
    let mut rng = rng_stream(seed, 0);
    if cfg.operator.is_weight_level() {
        let mut picked = Vec::new();
        for l in cfg.scoped_layers(&instance.graph) {
            let n = instance.graph.layers[l]
                .param_sizes()
                .expect("parametric")
                .0;
            for index in 0..n {
                if rng.random::<f64>() < cfg.ratio {
                    picked.push(WeightRef { layer: l, index });
                }
            }
        }
        return Ok(Selection::Weights(picked));
    }
    let pool = neuron_pool(instance, cfg);
    if pool.is_empty() {
        return Err(Error::OperatorInapplicable(format!(
            "{} has no eligible neurons in scope",
            cfg.operator
        )));
    }
    let count = neuron_count(cfg.ratio, pool.len());
    let picked = index::sample(&mut rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    Ok(Selection::Neurons(picked))
}

/// Apply `cfg` to `instance` with all random choices fixed by `seed`.
pub fn apply(instance: &ModelInstance, cfg: &OperatorConfig, seed: u64) -> Result<ModelInstance> {
    let selection = select(instance, cfg, seed)?;
    let graph = instance.graph.clone();
    let mut params = instance.to_params();
    let mut rng = rng_stream(seed, 1);
    match (cfg.operator, &selection) {
        (OperatorKind::GF, Selection::Weights(ws)) => {
            let noise = Normal::new(0.0, cfg.sigma()).expect("validated sigma");
            for w in ws {
                let k = &mut params[w.layer].as_mut().expect("parametric").kernel;
                let eps: f64 = noise.sample(&mut rng);
                k[w.index] = gf_mutate(k[w.index], eps);
            }
        }
        (OperatorKind::WI, Selection::Weights(ws)) => {
            let keep = 1.0 - cfg.lambda();
            for w in ws {
                let k = &mut params[w.layer].as_mut().expect("parametric").kernel;
                k[w.index] = inhibit(k[w.index], keep);
            }
        }
        (OperatorKind::WS, Selection::Neurons(ns)) => {
            for n in ns {
                let slots = incoming_slots(&graph.layers[n.layer_index], n.unit_index);
                let k = &mut params[n.layer_index].as_mut().expect("parametric").kernel;
                let mut values: Vec<f32> = slots.iter().map(|&s| k[s]).collect();
                values.shuffle(&mut rng);
                for (&s, v) in slots.iter().zip(values) {
                    k[s] = v;
                }
            }
        }
        (OperatorKind::NS, Selection::Neurons(ns)) => {
            for (a, b) in pair_within_layers(ns) {
                let layer = &graph.layers[a.layer_index];
                let p = params[a.layer_index].as_mut().expect("parametric");
                for (sa, sb) in incoming_slots(layer, a.unit_index)
                    .into_iter()
                    .zip(incoming_slots(layer, b.unit_index))
                {
                    p.kernel.swap(sa, sb);
                }
                if let Some(bias) = p.bias.as_mut() {
                    bias.swap(a.unit_index, b.unit_index);
                }
            }
        }
        (OperatorKind::NEB | OperatorKind::NAI | OperatorKind::NI, Selection::Neurons(ns)) => {
            let keep = 1.0 - cfg.lambda();
            for &n in ns {
                let (next, slots) = outgoing_slots(&graph, n)?.ok_or_else(|| {
                    Error::OperatorInapplicable(format!("neuron {n:?} has no outgoing weights"))
                })?;
                let k = &mut params[next].as_mut().expect("parametric").kernel;
                for s in slots {
                    k[s] = match cfg.operator {
                        OperatorKind::NEB => 0.0,
                        OperatorKind::NAI => -k[s],
                        _ => inhibit(k[s], keep),
                    };
                }
            }
        }
        _ => unreachable!("selection kind follows operator kind"),
    }
    instance.with_params(
        params,
        Provenance::Mutant {
            source_original: None,
            operator_config: cfg.id(),
            seed,
            application_index: 0,
        },
    )
}

/// `clip(w * (1 + eps), -1, 1)`, computed in f64.
pub fn gf_mutate(w: f32, eps: f64) -> f32 {
    (w as f64 * (1.0 + eps)).clamp(-1.0, 1.0) as f32
}

/// `w * keep` rounded once to f32. Never flips the sign and never grows |w|.
pub fn inhibit(w: f32, keep: f64) -> f32 {
    (w as f64 * keep) as f32
}

/// Consecutive same-layer pairs, in sampling order; an odd neuron out in a
/// layer is left untouched.
fn pair_within_layers(ns: &[NeuronAddress]) -> Vec<(NeuronAddress, NeuronAddress)> {
    let mut layers: Vec<usize> = ns.iter().map(|n| n.layer_index).collect();
    layers.sort_unstable();
    layers.dedup();
    let mut pairs = Vec::new();
    for l in layers {
        let units: Vec<NeuronAddress> = ns.iter().copied().filter(|n| n.layer_index == l).collect();
        for c in units.chunks_exact(2) {
            pairs.push((c[0], c[1]));
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::{Activation, LayerParams, Matrix, Task};
    use crate::train::init_instance;

    fn mlp() -> ModelInstance {
        let g = Arc::new(
            ModelGraph::mlp(3, &[5, 4], 3, Activation::Relu, Task::Classification).unwrap(),
        );
        init_instance(g, 1)
    }

    #[test]
    fn wi_full_blocks_every_weight() {
        let m = mlp();
        let cfg = OperatorConfig::new(OperatorKind::WI)
            .with_ratio(1.0)
            .with_inhibition(1.0);
        let out = apply(&m, &cfg, 3).unwrap();
        for p in out.params().iter().flatten() {
            assert!(p.kernel.iter().all(|&w| w == 0.0));
        }
    }

    #[test]
    fn zero_lambda_and_zero_ratio_are_identities() {
        let m = mlp();
        for cfg in [
            OperatorConfig::new(OperatorKind::WI)
                .with_ratio(1.0)
                .with_inhibition(0.0),
            OperatorConfig::new(OperatorKind::NI)
                .with_ratio(1.0)
                .with_inhibition(0.0),
        ] {
            assert_eq!(apply(&m, &cfg, 9).unwrap().params(), m.params());
        }
        for kind in OperatorKind::ALL {
            let cfg = OperatorConfig::new(kind).with_ratio(0.0);
            assert_eq!(apply(&m, &cfg, 9).unwrap().params(), m.params(), "{kind}");
        }
    }

    #[test]
    fn gf_clip_and_sign_flip() {
        assert_eq!(gf_mutate(0.9, 0.5), 1.0);
        assert!((gf_mutate(0.5, -1.2) - -0.1).abs() < 1e-7);
    }

    #[test]
    fn ws_permutes_a_column() {
        let g = Arc::new(
            ModelGraph::mlp(3, &[1], 2, Activation::Linear, Task::Classification).unwrap(),
        );
        let m = ModelInstance::new(
            g,
            vec![
                Some(LayerParams {
                    kernel: vec![0.1, 0.2, 0.3],
                    bias: Some(vec![0.7]),
                }),
                Some(LayerParams {
                    kernel: vec![1.0, -1.0],
                    bias: Some(vec![0.0, 0.0]),
                }),
            ],
            Provenance::Unspecified,
        )
        .unwrap();
        let cfg = OperatorConfig::new(OperatorKind::WS)
            .with_ratio(1.0)
            .with_ratio(0.5);
        let out = apply(&m, &cfg, 4).unwrap();
        let mut col = out.layer(0).unwrap().kernel.clone();
        col.sort_by(f32::total_cmp);
        assert_eq!(col, vec![0.1, 0.2, 0.3]);
        assert_eq!(out.layer(0).unwrap().bias, Some(vec![0.7]));
    }

    #[test]
    fn ns_exchanges_unit_outputs() {
        // 2 -> 3 linear layer followed by a 3 -> 2 head; swapping units j, k of
        // the hidden layer exchanges their pre-head outputs.
        let g = Arc::new(
            ModelGraph::mlp(2, &[3], 2, Activation::Linear, Task::Classification).unwrap(),
        );
        let m = init_instance(g, 5);
        let cfg = OperatorConfig::new(OperatorKind::NS)
            .with_ratio(1.0)
            .with_ratio(0.67);
        cfg.validate(&m.graph).unwrap();
        let mut cfg = cfg;
        cfg.layer_scope = Some(vec![0]);
        let Selection::Neurons(sel) = select(&m, &cfg, 8).unwrap() else {
            panic!()
        };
        assert_eq!(sel.len(), 2);
        let (j, k) = (sel[0].unit_index, sel[1].unit_index);
        let out = apply(&m, &cfg, 8).unwrap();
        let x = Matrix::from_vec(3, 2, vec![0.3, -0.2, 1.0, 2.0, -0.5, 0.25]).unwrap();
        let before = m.forward_trace(&x).unwrap().outputs[0].clone();
        let after = out.forward_trace(&x).unwrap().outputs[0].clone();
        for r in 0..3 {
            assert_eq!(before.row(r)[j], after.row(r)[k]);
            assert_eq!(before.row(r)[k], after.row(r)[j]);
        }
    }

    #[test]
    fn selection_counts() {
        let g = Arc::new(
            ModelGraph::mlp(2, &[100], 2, Activation::Relu, Task::Classification).unwrap(),
        );
        let m = init_instance(g, 0);
        let ni = OperatorConfig::new(OperatorKind::NI).with_ratio(0.05);
        assert_eq!(selection_count(&ni, &m), 5);
        assert_eq!(selection_count(&ni.clone().with_ratio(1.0), &m), 100);
        assert_eq!(selection_count(&ni.clone().with_ratio(0.0), &m), 0);
        assert_eq!(selection_count(&ni.with_ratio(0.001), &m), 1);
        let Selection::Neurons(n) = select(&m, &OperatorConfig::new(OperatorKind::NI), 1).unwrap()
        else {
            panic!()
        };
        assert_eq!(n.len(), 5);
        assert!(n.iter().all(|a| a.layer_index == 0));
    }

    #[test]
    fn outgoing_ops_need_a_next_layer() {
        let g =
            Arc::new(ModelGraph::mlp(2, &[], 2, Activation::Linear, Task::Classification).unwrap());
        let m = init_instance(g, 0);
        for kind in [OperatorKind::NEB, OperatorKind::NAI, OperatorKind::NI] {
            let err = apply(&m, &OperatorConfig::new(kind), 0).unwrap_err();
            assert!(err.to_string().contains("operator inapplicable"), "{err}");
        }
        // neurons of the output layer can still be shuffled or switched
        assert!(apply(&m, &OperatorConfig::new(OperatorKind::WS), 0).is_ok());
    }

    #[test]
    fn conv_outgoing_slots_follow_channels() {
        let g = ModelGraph::new(
            vec![4, 4, 1],
            Task::Classification,
            vec![
                LayerSpec::Conv2d {
                    kernel_shape: [3, 3, 1, 2],
                    has_bias: true,
                    activation: Activation::Relu,
                    stride: 1,
                },
                LayerSpec::Conv2d {
                    kernel_shape: [1, 1, 2, 3],
                    has_bias: true,
                    activation: Activation::Relu,
                    stride: 1,
                },
                LayerSpec::Flatten,
                LayerSpec::dense(12, 2, Activation::Softmax),
            ],
        )
        .unwrap();
        let (next, slots) = outgoing_slots(
            &g,
            NeuronAddress {
                layer_index: 0,
                unit_index: 1,
            },
        )
        .unwrap()
        .unwrap();
        assert_eq!(next, 1);
        assert_eq!(slots, vec![3, 4, 5]);
        // conv channel 2 of layer 1 feeds flattened positions 2, 5, 8, 11
        let (next, slots) = outgoing_slots(
            &g,
            NeuronAddress {
                layer_index: 1,
                unit_index: 2,
            },
        )
        .unwrap()
        .unwrap();
        assert_eq!(next, 3);
        assert_eq!(slots, vec![4, 5, 10, 11, 16, 17, 22, 23]);
        assert_eq!(incoming_slots(&g.layers[1], 2), vec![2, 5]);
    }

    #[test]
    fn invalid_parameters_rejected() {
        let m = mlp();
        assert!(apply(
            &m,
            &OperatorConfig::new(OperatorKind::WI).with_ratio(1.5),
            0
        )
        .is_err());
        assert!(apply(
            &m,
            &OperatorConfig::new(OperatorKind::NI).with_inhibition(-0.1),
            0
        )
        .is_err());
        assert!(apply(
            &m,
            &OperatorConfig::new(OperatorKind::GF).with_sigma(0.0),
            0
        )
        .is_err());
        let mut cfg = OperatorConfig::new(OperatorKind::WI);
        cfg.searched_param = Some(SearchedParam::NoiseSigma);
        assert!(apply(&m, &cfg, 0).is_err());
    }

    #[test]
    fn operator_names_parse() {
        assert_eq!("wi".parse::<OperatorKind>().unwrap(), OperatorKind::WI);
        assert!("LR".parse::<OperatorKind>().is_err());
    }
}
