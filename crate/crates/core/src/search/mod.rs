//! Binary search for the weakest killable configuration of one operator
//! parameter, with repeated mutant generation until the accuracy sample is
//! stable.

mod bisect;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::population_metrics;
use crate::model::{ModelInstance, Provenance};
use crate::operators::{apply, OperatorConfig, SearchedParam};
use crate::rng::derive_seed;
use crate::stats::{
    is_killed, EvaluationSample, KillDecision, KillSet, KillThresholds, StabilityReport,
};
use crate::train::OriginalPopulation;

pub use bisect::{
    bisect, stabilize, Bisection, BisectionStep, ProbeOutcome, Stabilized, Termination,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Operator template; the searched parameter is overwritten per probe.
    pub operator: OperatorConfig,
    pub searched_param: SearchedParam,
    #[serde(default)]
    pub lb: f64,
    #[serde(default = "one")]
    pub ub: f64,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_rse_threshold")]
    pub rse_threshold: f64,
    #[serde(default = "default_precision")]
    pub precision: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<f64>,
    #[serde(default)]
    pub thresholds: KillThresholds,
    #[serde(default)]
    pub base_seed: u64,
    /// Correctness tolerance for regression metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f32>,
}

fn one() -> f64 {
    1.0
}

fn default_k_max() -> usize {
    5
}

fn default_rse_threshold() -> f64 {
    crate::stats::DEFAULT_RSE_THRESHOLD
}

fn default_precision() -> f64 {
    5e-4
}

impl SearchConfig {
    /// Defaults: `[0, 1]`, `k_max = 5`, RSE threshold 0.05, precision 5e-4.
    pub fn new(operator: OperatorConfig, searched_param: SearchedParam) -> Self {
        SearchConfig {
            operator,
            searched_param,
            lb: 0.0,
            ub: 1.0,
            k_max: default_k_max(),
            rse_threshold: default_rse_threshold(),
            precision: default_precision(),
            timeout_secs: None,
            thresholds: KillThresholds::default(),
            base_seed: 0,
            tau: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lb < self.ub) {
            return Err(Error::Config(format!(
                "lb {} must be < ub {}",
                self.lb, self.ub
            )));
        }
        if self.k_max < 1 {
            return Err(Error::Config("k_max must be >= 1".into()));
        }
        if !(self.precision > 0.0) {
            return Err(Error::Config("precision must be > 0".into()));
        }
        if !(self.rse_threshold > 0.0) {
            return Err(Error::Config("rse_threshold must be > 0".into()));
        }
        if self.timeout_secs.is_some_and(|t| !(t >= 0.0)) {
            return Err(Error::Config("timeout_secs must be >= 0".into()));
        }
        self.thresholds.validate()?;
        let mut probe = self.operator.clone();
        probe.searched_param = Some(self.searched_param);
        for v in [self.lb, self.ub] {
            let cfg = probe.clone().with_param(self.searched_param, v);
            if self.searched_param == SearchedParam::NoiseSigma && v <= 0.0 {
                continue;
            }
            if let Some(e) = check_range(&cfg) {
                return Err(e);
            }
        }
        Ok(())
    }

    fn config_at(&self, value: f64) -> OperatorConfig {
        let mut cfg = self.operator.clone().with_param(self.searched_param, value);
        cfg.searched_param = Some(self.searched_param);
        cfg
    }
}

fn check_range(cfg: &OperatorConfig) -> Option<Error> {
    let bad = |name: &str, v: f64| Some(Error::Config(format!("{name} bound {v} outside [0, 1]")));
    if !(0.0..=1.0).contains(&cfg.ratio) {
        return bad("ratio", cfg.ratio);
    }
    if let Some(l) = cfg.inhibition {
        if !(0.0..=1.0).contains(&l) {
            return bad("inhibition", l);
        }
    }
    None
}

/// Seed of the mutant of original `original` in iteration `k`.
pub fn instance_seed(base_seed: u64, original: usize, k: usize) -> u64 {
    derive_seed(base_seed, &[original as u64, k as u64])
}

/// One fresh application of `cfg` to every original (iteration `k`).
pub fn generate_batch(
    originals: &OriginalPopulation,
    cfg: &OperatorConfig,
    k: usize,
    base_seed: u64,
) -> Result<Vec<ModelInstance>> {
    if k < 1 {
        return Err(Error::Precondition("iteration index starts at 1".into()));
    }
    originals
        .instances
        .par_iter()
        .enumerate()
        .map(|(i, orig)| {
            let seed = instance_seed(base_seed, i, k);
            let mut m = apply(orig, cfg, seed)?;
            m.provenance = Provenance::Mutant {
                source_original: Some(i),
                operator_config: cfg.id(),
                seed,
                application_index: k as u32,
            };
            Ok(m)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSeed {
    pub original: usize,
    pub k: usize,
    pub seed: u64,
}

/// A stable, killed configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MutantArchiveEntry {
    /// Discovery order; the last entry is the hardest (smallest value).
    pub index: usize,
    pub config: OperatorConfig,
    pub config_id: String,
    pub param_value: f64,
    pub seeds: Vec<InstanceSeed>,
    pub sample: EvaluationSample,
    pub stability: StabilityReport,
    pub kill: KillDecision,
    /// Mutant instances in `seeds` order.
    #[serde(skip)]
    pub instances: Vec<ModelInstance>,
}

impl MutantArchiveEntry {
    /// Rebuild the mutant instances from the recorded seeds.
    pub fn regenerate(&self, originals: &OriginalPopulation) -> Result<Vec<ModelInstance>> {
        self.seeds
            .par_iter()
            .map(|s| {
                let orig = originals.instances.get(s.original).ok_or_else(|| {
                    Error::Precondition(format!(
                        "entry refers to original {} of {}",
                        s.original,
                        originals.len()
                    ))
                })?;
                let mut m = apply(orig, &self.config, s.seed)?;
                m.provenance = Provenance::Mutant {
                    source_original: Some(s.original),
                    operator_config: self.config_id.clone(),
                    seed: s.seed,
                    application_index: s.k as u32,
                };
                Ok(m)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub step: usize,
    pub lb: f64,
    pub ub: f64,
    pub midpoint: f64,
    pub outcome: ProbeOutcome,
    pub instances: usize,
    /// Batches taken from an earlier search instead of regenerated.
    pub reused_batches: usize,
    pub mean: f64,
    pub rse: Option<f64>,
    pub rse_trace: Vec<Option<f64>>,
    /// Present when the sample was stable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kill: Option<KillDecision>,
}

/// Kill status on this dataset of a configuration archived by an earlier search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reevaluation {
    pub config_id: String,
    pub param_value: f64,
    pub stable: bool,
    pub killed: bool,
    pub kill: Option<KillDecision>,
    pub instances: usize,
    pub reused_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub operator: String,
    pub searched_param: SearchedParam,
    pub dataset: String,
    pub lb: f64,
    pub ub: f64,
    pub original_mean: f64,
    /// Earlier archive re-evaluated on this dataset before probing.
    pub reevaluated: Vec<Reevaluation>,
    pub probes: Vec<ProbeRecord>,
    pub final_lb: f64,
    pub final_ub: f64,
    pub termination: Termination,
    pub instances_generated: usize,
}

impl SearchTrace {
    /// Killed configurations on this dataset: the archive plus re-evaluated
    /// earlier configurations that were killed here.
    pub fn kill_set(&self, archive: &[MutantArchiveEntry]) -> KillSet {
        let mut configs = BTreeSet::new();
        let mut boundary: Option<f64> = None;
        let hits = archive.iter().map(|e| (&e.config_id, e.param_value)).chain(
            self.reevaluated
                .iter()
                .filter(|r| r.killed)
                .map(|r| (&r.config_id, r.param_value)),
        );
        for (id, v) in hits {
            configs.insert(id.clone());
            boundary = Some(boundary.map_or(v, |b| b.min(v)));
        }
        KillSet { configs, boundary }
    }
}

/// Wall-clock figures, kept apart from the deterministic trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTiming {
    pub total_secs: f64,
    pub probe_secs: Vec<f64>,
    pub instances_generated: usize,
}

pub struct SearchResult {
    pub archive: Vec<MutantArchiveEntry>,
    pub trace: SearchTrace,
    pub timing: SearchTiming,
}

struct ProbeRun {
    config: OperatorConfig,
    stabilized: Stabilized,
    batches: Vec<Vec<ModelInstance>>,
    kill: Option<KillDecision>,
    generated: usize,
    reused: usize,
}

impl ProbeRun {
    fn outcome(&self) -> ProbeOutcome {
        match self.kill {
            None => ProbeOutcome::Unstable,
            Some(k) if k.killed => ProbeOutcome::Killed,
            Some(_) => ProbeOutcome::Survived,
        }
    }
}

struct Searcher<'a> {
    originals: &'a OriginalPopulation,
    sc: &'a SearchConfig,
    data: &'a Dataset,
    original_sample: EvaluationSample,
    /// Batches from earlier searches keyed by (param bits, k).
    cache: BTreeMap<(u64, usize), Vec<ModelInstance>>,
}

impl Searcher<'_> {
    fn run_probe(&self, value: f64) -> Result<ProbeRun> {
        let cfg = self.sc.config_at(value);
        let mut batches = Vec::new();
        let (mut generated, mut reused) = (0, 0);
        let stabilized = stabilize(self.sc.k_max, self.sc.rse_threshold, |k| {
            let batch = match self.cache.get(&(value.to_bits(), k)) {
                Some(b) => {
                    reused += 1;
                    b.clone()
                }
                None => {
                    let b = generate_batch(self.originals, &cfg, k, self.sc.base_seed)?;
                    generated += b.len();
                    b
                }
            };
            let values = population_metrics(&batch, self.data, self.sc.tau)?;
            batches.push(batch);
            Ok(values)
        })?;
        let kill = if stabilized.report.stable {
            let sample = self.sample(&stabilized)?;
            Some(is_killed(
                &sample,
                &self.original_sample,
                &self.sc.thresholds,
            ))
        } else {
            None
        };
        Ok(ProbeRun {
            config: cfg,
            stabilized,
            batches,
            kill,
            generated,
            reused,
        })
    }

    fn sample(&self, s: &Stabilized) -> Result<EvaluationSample> {
        EvaluationSample::new(
            s.values(),
            self.data.name.clone(),
            self.sc.operator.operator.to_string(),
            s.batches.len(),
            self.originals.len(),
        )
    }

    fn archive_entry(&self, index: usize, value: f64, run: ProbeRun) -> Result<MutantArchiveEntry> {
        let sample = self.sample(&run.stabilized)?;
        let n = run.batches.len();
        // order by (original, k)
        let mut seeds = Vec::with_capacity(n * self.originals.len());
        let mut instances = Vec::with_capacity(seeds.capacity());
        let mut columns: Vec<_> = run.batches.into_iter().map(|b| b.into_iter()).collect();
        for i in 0..self.originals.len() {
            for (k0, col) in columns.iter_mut().enumerate() {
                let inst = col.next().expect("one instance per original");
                seeds.push(InstanceSeed {
                    original: i,
                    k: k0 + 1,
                    seed: instance_seed(self.sc.base_seed, i, k0 + 1),
                });
                instances.push(inst);
            }
        }
        Ok(MutantArchiveEntry {
            index,
            config_id: run.config.id(),
            config: run.config,
            param_value: value,
            seeds,
            sample,
            stability: run.stabilized.report,
            kill: run.kill.expect("archived probes are stable"),
            instances,
        })
    }
}

/// Search on `data`, seeding the mutant cache from `prior` (an archive from
/// an earlier search with the same config and base seed). Every prior entry
/// is first re-evaluated on `data`; probes at a prior value reuse its mutants.
pub fn binary_search_with_prior(
    originals: &OriginalPopulation,
    sc: &SearchConfig,
    data: &Dataset,
    prior: &[MutantArchiveEntry],
) -> Result<SearchResult> {
    let started = Instant::now();
    sc.validate()?;
    sc.operator.validate(&originals.graph)?;
    if originals.len() < 2 {
        return Err(Error::Precondition(
            "search needs at least two originals".into(),
        ));
    }
    let original_values = population_metrics(&originals.instances, data, sc.tau)?;
    let original_sample = EvaluationSample::new(
        original_values,
        data.name.clone(),
        "originals",
        1,
        originals.len(),
    )?;
    let mut cache = BTreeMap::new();
    for e in prior {
        let m = originals.len();
        for (pos, (s, inst)) in e.seeds.iter().zip(&e.instances).enumerate() {
            debug_assert_eq!(pos / (e.seeds.len() / m), s.original);
            cache
                .entry((e.param_value.to_bits(), s.k))
                .or_insert_with(|| Vec::with_capacity(m))
                .push((s.original, inst.clone()));
        }
    }
    let cache = cache
        .into_iter()
        .filter_map(|(key, mut v): (_, Vec<(usize, ModelInstance)>)| {
            v.sort_by_key(|(i, _)| *i);
            (v.len() == originals.len()).then(|| (key, v.into_iter().map(|(_, m)| m).collect()))
        })
        .collect();
    let searcher = Searcher {
        originals,
        sc,
        data,
        original_sample,
        cache,
    };

    let mut generated = 0;
    let mut reevaluated = Vec::with_capacity(prior.len());
    for e in prior {
        let run = searcher.run_probe(e.param_value)?;
        generated += run.generated;
        reevaluated.push(Reevaluation {
            config_id: e.config_id.clone(),
            param_value: e.param_value,
            stable: run.kill.is_some(),
            killed: run.kill.is_some_and(|k| k.killed),
            kill: run.kill,
            instances: run.stabilized.report.n_instances,
            reused_batches: run.reused,
        });
    }

    let deadline = sc
        .timeout_secs
        .map(|t| started + Duration::from_secs_f64(t));
    let mut archive = Vec::new();
    let mut probes = Vec::new();
    let mut probe_secs = Vec::new();
    let bisection = bisect(sc.lb, sc.ub, sc.precision, deadline, |value| {
        let t0 = Instant::now();
        let run = searcher.run_probe(value)?;
        let outcome = run.outcome();
        generated += run.generated;
        probes.push(ProbeRecord {
            step: probes.len(),
            lb: 0.0,
            ub: 0.0,
            midpoint: value,
            outcome,
            instances: run.stabilized.report.n_instances,
            reused_batches: run.reused,
            mean: run.stabilized.report.mu,
            rse: run.stabilized.report.rse,
            rse_trace: run.stabilized.report.trace.clone(),
            kill: run.kill,
        });
        if outcome == ProbeOutcome::Killed {
            archive.push(searcher.archive_entry(archive.len(), value, run)?);
        }
        probe_secs.push(t0.elapsed().as_secs_f64());
        Ok(outcome)
    })?;
    for (rec, step) in probes.iter_mut().zip(&bisection.steps) {
        rec.lb = step.lb;
        rec.ub = step.ub;
    }
    let trace = SearchTrace {
        operator: sc.operator.operator.to_string(),
        searched_param: sc.searched_param,
        dataset: data.name.clone(),
        lb: sc.lb,
        ub: sc.ub,
        original_mean: searcher.original_sample.mean(),
        reevaluated,
        probes,
        final_lb: bisection.final_lb,
        final_ub: bisection.final_ub,
        termination: bisection.termination,
        instances_generated: generated,
    };
    Ok(SearchResult {
        archive,
        trace,
        timing: SearchTiming {
            total_secs: started.elapsed().as_secs_f64(),
            probe_secs,
            instances_generated: generated,
        },
    })
}

/// Search on `data` from scratch.
pub fn binary_search(
    originals: &OriginalPopulation,
    sc: &SearchConfig,
    data: &Dataset,
) -> Result<SearchResult> {
    binary_search_with_prior(originals, sc, data, &[])
}

#[cfg(test)]
mod tests {
    use std::sync::{Arc, OnceLock};

    use super::*;
    use crate::data::{make_synthetic_classification, Labels, Split};
    use crate::model::{Activation, LayerParams, LayerSpec, Matrix, ModelGraph, Task};
    use crate::operators::OperatorKind;
    use crate::train::{train_population, TrainingConfig};

    fn fixture() -> &'static (OriginalPopulation, Dataset, Dataset) {
        static F: OnceLock<(OriginalPopulation, Dataset, Dataset)> = OnceLock::new();
        F.get_or_init(|| {
            let (train, test) = make_synthetic_classification(4, 60, 0.2, 5).unwrap();
            let graph = Arc::new(
                ModelGraph::mlp(2, &[16], 4, Activation::Relu, Task::Classification).unwrap(),
            );
            let cfg = TrainingConfig {
                epochs: 15,
                ..TrainingConfig::default()
            };
            (
                train_population(graph, &train, &cfg, 4, 1).unwrap(),
                train,
                test,
            )
        })
    }

    fn search_config() -> SearchConfig {
        let mut sc =
            SearchConfig::new(OperatorConfig::new(OperatorKind::NAI), SearchedParam::Ratio);
        sc.base_seed = 99;
        sc.precision = 1e-2;
        sc
    }

    #[test]
    fn batch_links_provenance_and_is_deterministic() {
        let (pop, _, _) = fixture();
        let cfg = OperatorConfig::new(OperatorKind::GF).with_ratio(0.3);
        let a = generate_batch(pop, &cfg, 1, 7).unwrap();
        let b = generate_batch(pop, &cfg, 1, 7).unwrap();
        let c = generate_batch(pop, &cfg, 2, 7).unwrap();
        assert_eq!(a.len(), pop.len());
        for (i, m) in a.iter().enumerate() {
            match &m.provenance {
                Provenance::Mutant {
                    source_original,
                    application_index,
                    ..
                } => assert_eq!((*source_original, *application_index), (Some(i), 1)),
                p => panic!("unexpected provenance {p:?}"),
            }
            assert_eq!(m.flat_params(), b[i].flat_params());
            assert_ne!(m.flat_params(), c[i].flat_params());
        }
        assert!(generate_batch(pop, &cfg, 0, 7).is_err());
    }

    #[test]
    fn archive_entries_are_stable_kills_ordered_easy_to_hard() {
        let (pop, train, _) = fixture();
        let res = binary_search(pop, &search_config(), train).unwrap();
        assert!(!res.archive.is_empty());
        for w in res.archive.windows(2) {
            assert!(w[1].param_value < w[0].param_value);
        }
        for e in &res.archive {
            assert!(e.stability.stable && e.kill.killed);
            assert_eq!(e.instances.len(), e.sample.values.len());
            assert_eq!(e.seeds.len(), e.instances.len());
            for (a, b) in e.regenerate(pop).unwrap().iter().zip(&e.instances) {
                assert_eq!(a.flat_params(), b.flat_params());
                assert_eq!(a.provenance, b.provenance);
            }
        }
        for p in &res.trace.probes {
            assert_eq!(p.midpoint, (p.lb + p.ub) / 2.0);
            assert!(p.instances <= 5 * pop.len());
        }
        assert!(res.trace.probes.len() <= 8);
        assert_eq!(res.trace.termination, Termination::Precision);
    }

    #[test]
    fn search_is_reproducible() {
        let (pop, train, _) = fixture();
        let a = binary_search(pop, &search_config(), train).unwrap();
        let b = binary_search(pop, &search_config(), train).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.archive.len(), b.archive.len());
        for (x, y) in a.archive.iter().zip(&b.archive) {
            assert_eq!(x.sample, y.sample);
            for (p, q) in x.instances.iter().zip(&y.instances) {
                assert_eq!(p.flat_params(), q.flat_params());
            }
        }
    }

    #[test]
    fn prior_archive_is_reevaluated_and_reused() {
        let (pop, train, test) = fixture();
        let sc = search_config();
        let first = binary_search(pop, &sc, train).unwrap();
        let second = binary_search_with_prior(pop, &sc, test, &first.archive).unwrap();
        assert_eq!(second.trace.reevaluated.len(), first.archive.len());
        assert!(second
            .trace
            .reevaluated
            .iter()
            .all(|r| r.reused_batches > 0));
        let fresh = binary_search(pop, &sc, test).unwrap();
        // reuse changes where mutants come from, not what they are
        assert_eq!(
            second
                .trace
                .probes
                .iter()
                .map(|p| (p.midpoint, p.outcome))
                .collect::<Vec<_>>(),
            fresh
                .trace
                .probes
                .iter()
                .map(|p| (p.midpoint, p.outcome))
                .collect::<Vec<_>>()
        );
        let ks = second.trace.kill_set(&second.archive);
        if let Some(b) = ks.boundary {
            assert!(ks.configs.len() >= second.archive.len());
            assert!(
                b <= second
                    .archive
                    .last()
                    .map_or(f64::INFINITY, |e| e.param_value)
            );
        }
    }

    #[test]
    fn always_wrong_model_is_unstable_everywhere() {
        // the head always prefers class 0; every label is 1
        let graph = Arc::new(
            ModelGraph::new(
                vec![1],
                Task::Classification,
                vec![
                    LayerSpec::dense(1, 3, Activation::Relu),
                    LayerSpec::dense(3, 2, Activation::Softmax),
                ],
            )
            .unwrap(),
        );
        let inst = |s| {
            ModelInstance::new(
                graph.clone(),
                vec![
                    Some(LayerParams {
                        kernel: vec![0.0; 3],
                        bias: Some(vec![0.0; 3]),
                    }),
                    Some(LayerParams {
                        kernel: vec![0.0; 6],
                        bias: Some(vec![5.0, 0.0]),
                    }),
                ],
                Provenance::TrainedOriginal { seed: s },
            )
            .unwrap()
        };
        let pop = OriginalPopulation::from_instances(
            vec![inst(0), inst(1), inst(2), inst(3)],
            vec![0, 1, 2, 3],
        )
        .unwrap();
        let data = Dataset::new(
            "ones",
            Split::Train,
            vec![1],
            Matrix::from_vec(4, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            Labels::Classes(vec![1; 4]),
        )
        .unwrap();
        let mut sc = SearchConfig::new(OperatorConfig::new(OperatorKind::WS), SearchedParam::Ratio);
        sc.precision = 0.05;
        let res = binary_search(&pop, &sc, &data).unwrap();
        assert!(res.archive.is_empty());
        assert_eq!(res.trace.final_lb, 0.0);
        for p in &res.trace.probes {
            assert_eq!(p.outcome, ProbeOutcome::Unstable);
            assert_eq!(p.instances, 5 * 4);
        }
    }

    #[test]
    fn config_validation() {
        let mut sc = search_config();
        sc.lb = 0.6;
        sc.ub = 0.4;
        assert!(sc.validate().is_err());
        let mut sc = search_config();
        sc.ub = 1.5;
        assert!(sc.validate().is_err());
        let mut sc = search_config();
        sc.k_max = 0;
        assert!(sc.validate().is_err());
        let json = serde_json::to_string(&search_config()).unwrap();
        let back: SearchConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, search_config());
    }
}
