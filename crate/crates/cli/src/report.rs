//! Scoring, spectra and the consolidated report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use nnmut_core::io::{read_json, write_atomic, write_json};
use nnmut_core::rng::{derive_seed, tag_seed};
use nnmut_core::search::{MutantArchiveEntry, ProbeOutcome, SearchTrace};
use nnmut_core::spectral::{
    calibrate_binning, compare_groups, default_layers, extract_spectrum, sample_inputs, Binning,
    DistanceMatrix, SpectrumProfile, Summary,
};
use nnmut_core::stats::{
    mutation_score_boundary, mutation_score_classlevel, mutation_score_discrete, sensitivity,
    KillSet, KillabilityRecord, Score, Undefined,
};
use nnmut_core::SearchedParam;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::layout::{Layout, DATASETS};
use crate::pipeline::{
    disagreement_for, is_classification, load_search, mean_metric, originals_disagreement,
    search_config, Disagreement, State,
};

const TESTS: [&str; 2] = ["strong_test", "weak_test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub dataset: String,
    pub step: usize,
    pub midpoint: f64,
    pub outcome: ProbeOutcome,
    pub instances: usize,
    /// Instances charged to the probe: a probe that never stabilized counts
    /// as `(k_max + 1) * m`.
    pub counted_instances: usize,
    pub rse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub rows: Vec<StabilityRow>,
    /// Mean of `counted_instances` over the train-search probes.
    pub mean_instances: Option<f64>,
    pub stable_probes: usize,
    pub probes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorScore {
    pub operator: String,
    pub searched_param: SearchedParam,
    pub search_seed: u64,
    pub record: KillabilityRecord,
    pub archive_sizes: BTreeMap<String, usize>,
    pub ms_boundary: BTreeMap<String, Score>,
    pub ms_discrete: BTreeMap<String, Score>,
    pub sensitivity_boundary: Score,
    pub sensitivity_discrete: Score,
    /// Class-level score of the hardest train-archived configuration.
    pub ms_classlevel: BTreeMap<String, Score>,
    pub hardest_train_config: Option<String>,
    pub disagreement: Option<Disagreement>,
    pub stability: StabilitySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginalsSummary {
    pub m: usize,
    pub mean_metric: BTreeMap<String, f64>,
    pub disagreement_train: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub originals: OriginalsSummary,
    pub operators: Vec<OperatorScore>,
}

fn kill_set(search: &crate::pipeline::StoredSearch) -> KillSet {
    search.trace.kill_set(&search.archive)
}

fn stability(
    cfg: &RunConfig,
    m: usize,
    traces: &BTreeMap<String, SearchTrace>,
) -> StabilitySummary {
    let mut rows = Vec::new();
    for ds in DATASETS {
        for p in &traces[ds].probes {
            let counted = if p.outcome == ProbeOutcome::Unstable {
                (cfg.search.k_max + 1) * m
            } else {
                p.instances
            };
            rows.push(StabilityRow {
                dataset: ds.to_string(),
                step: p.step,
                midpoint: p.midpoint,
                outcome: p.outcome,
                instances: p.instances,
                counted_instances: counted,
                rse: p.rse,
            });
        }
    }
    let train: Vec<&StabilityRow> = rows.iter().filter(|r| r.dataset == "train").collect();
    let mean_instances = (!train.is_empty()).then(|| {
        train
            .iter()
            .map(|r| r.counted_instances as f64)
            .sum::<f64>()
            / train.len() as f64
    });
    StabilitySummary {
        stable_probes: train
            .iter()
            .filter(|r| r.outcome != ProbeOutcome::Unstable)
            .count(),
        probes: train.len(),
        mean_instances,
        rows,
    }
}

/// Kill boundaries, both mutation scores, sensitivity, class-level scores,
/// disagreement and stability for every operator; written to `score.json`.
pub fn cmd_score(cfg: &RunConfig, state: &State) -> CliResult<ScoreFile> {
    let layout = Layout::new(&cfg.out_dir);
    let tau = cfg.subject.tau;
    let mut operators = Vec::new();
    for op in &cfg.operators {
        let name = op.name();
        let sc = search_config(cfg, op);
        let mut searches = BTreeMap::new();
        for ds in DATASETS {
            searches.insert(ds.to_string(), load_search(&layout, &name, ds)?);
        }
        let train = &searches["train"];
        let mut per_dataset = BTreeMap::new();
        per_dataset.insert("train".to_string(), kill_set(train));
        for ds in TESTS {
            per_dataset.insert(ds.to_string(), kill_set(&searches[ds]));
        }
        let record = KillabilityRecord {
            operator: name.clone(),
            lb: sc.lb,
            ub: sc.ub,
            monotone: true,
            per_dataset,
        };
        let k_train = &record.per_dataset["train"];
        let mut ms_boundary = BTreeMap::new();
        let mut ms_discrete = BTreeMap::new();
        for ds in TESTS {
            let k = &record.per_dataset[ds];
            ms_boundary.insert(
                ds.to_string(),
                mutation_score_boundary(sc.ub, k_train.boundary, k.boundary),
            );
            ms_discrete.insert(
                ds.to_string(),
                mutation_score_discrete(&k_train.configs, &k.configs),
            );
        }
        let hardest: Option<&MutantArchiveEntry> = train.archive.last();
        let mut ms_classlevel = BTreeMap::new();
        let mut disagreement = None;
        match hardest {
            Some(e) => {
                let instances = e.regenerate(&state.originals)?;
                for ds in TESTS {
                    let s = if is_classification(state) {
                        Score::Value(mutation_score_classlevel(
                            &state.originals,
                            &instances,
                            state.dataset(ds),
                        )?)
                    } else {
                        Score::Undefined(Undefined::NotApplicable)
                    };
                    ms_classlevel.insert(ds.to_string(), s);
                }
                disagreement = Some(disagreement_for(state, e, sc.base_seed, tau)?);
            }
            None => {
                for ds in TESTS {
                    ms_classlevel.insert(ds.to_string(), Score::Undefined(Undefined::NoTrainKills));
                }
            }
        }
        let traces: BTreeMap<String, SearchTrace> = searches
            .iter()
            .map(|(k, v)| (k.clone(), v.trace.clone()))
            .collect();
        operators.push(OperatorScore {
            operator: name,
            searched_param: sc.searched_param,
            search_seed: sc.base_seed,
            archive_sizes: searches
                .iter()
                .map(|(k, v)| (k.clone(), v.archive.len()))
                .collect(),
            sensitivity_boundary: sensitivity(ms_boundary["strong_test"], ms_boundary["weak_test"]),
            sensitivity_discrete: sensitivity(ms_discrete["strong_test"], ms_discrete["weak_test"]),
            ms_boundary,
            ms_discrete,
            ms_classlevel,
            hardest_train_config: hardest.map(|e| e.config_id.clone()),
            disagreement,
            stability: stability(cfg, state.originals.len(), &traces),
            record,
        });
    }
    let mut mean = BTreeMap::new();
    for ds in DATASETS {
        mean.insert(ds.to_string(), mean_metric(state, ds, tau)?);
    }
    let score = ScoreFile {
        originals: OriginalsSummary {
            m: state.originals.len(),
            mean_metric: mean,
            disagreement_train: originals_disagreement(state, tau)?,
        },
        operators,
    };
    write_json(&layout.score_file(), &score)?;
    Ok(score)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileInfo {
    pub label: String,
    pub operator: Option<String>,
    pub config_id: Option<String>,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub a: String,
    pub b: String,
    pub within_a: Summary,
    pub within_b: Summary,
    pub cross: Summary,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectraSummary {
    pub binning: Binning,
    pub sample_seed: u64,
    pub sample_inputs: usize,
    pub profiles: Vec<ProfileInfo>,
    pub distances: DistanceMatrix,
    pub comparisons: Vec<PairComparison>,
}

/// Spectra of every train-archived configuration (one group per operator)
/// and of the originals, on a seeded sample of the strong test set.
pub fn cmd_spectra(cfg: &RunConfig, state: &State) -> CliResult<SpectraSummary> {
    let layout = Layout::new(&cfg.out_dir);
    let sample_seed = derive_seed(cfg.base_seed, &[tag_seed("spectral")]);
    let sample = sample_inputs(
        state.dataset("strong_test"),
        cfg.spectral.sample_fraction,
        sample_seed,
    )?;
    let layers = match &cfg.spectral.layers {
        Some(l) => l.clone(),
        None => default_layers(&state.originals.graph)?,
    };
    let binning = calibrate_binning(
        &state.originals.instances,
        &sample,
        layers,
        cfg.spectral.bins,
        cfg.spectral.upper_percentile,
    )?;
    let mut profiles = vec![extract_spectrum(
        "originals",
        &state.originals.instances,
        &sample,
        &binning,
    )?];
    let mut info = vec![ProfileInfo {
        label: "originals".into(),
        operator: None,
        config_id: None,
        instances: state.originals.len(),
    }];
    let mut groups: Vec<(String, Vec<SpectrumProfile>)> = Vec::new();
    for op in &cfg.operators {
        let name = op.name();
        let search = load_search(&layout, &name, "train")?;
        let mut group = Vec::new();
        for e in &search.archive {
            let instances = e.regenerate(&state.originals)?;
            let label = format!("{name}:{}", e.config_id);
            let p = extract_spectrum(label.clone(), &instances, &sample, &binning)?;
            info.push(ProfileInfo {
                label,
                operator: Some(name.clone()),
                config_id: Some(e.config_id.clone()),
                instances: instances.len(),
            });
            group.push(p.clone());
            profiles.push(p);
        }
        groups.push((name, group));
    }
    let distances = DistanceMatrix::compute(&profiles)?;
    let mut comparisons = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let (a, ga) = &groups[i];
            let (b, gb) = &groups[j];
            let c = compare_groups(ga, gb)?;
            let csv = format!("compare_{a}_{b}.csv");
            c.write_csv(&layout.spectra().join(&csv), a, b)?;
            comparisons.push(PairComparison {
                a: a.clone(),
                b: b.clone(),
                within_a: c.summary_within_a,
                within_b: c.summary_within_b,
                cross: c.summary_cross,
                csv,
            });
        }
    }
    write_json(&layout.spectra().join("profiles.json"), &profiles)?;
    let summary = SpectraSummary {
        binning,
        sample_seed,
        sample_inputs: sample.len(),
        profiles: info,
        distances,
        comparisons,
    };
    write_json(&layout.spectra_summary(), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub base_seed: u64,
    pub originals: Vec<u64>,
    pub search: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorReport {
    #[serde(flatten)]
    pub score: OperatorScore,
    pub traces: BTreeMap<String, SearchTrace>,
}

/// The consolidated, deterministic results document. Wall-clock figures
/// live in `timings.json` so reruns can be compared byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// The run configuration, without the output directory.
    pub config: Value,
    pub seeds: Seeds,
    pub datasets: BTreeMap<String, usize>,
    pub originals: OriginalsSummary,
    pub operators: Vec<OperatorReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral: Option<SpectraSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub operator: String,
    pub dataset: String,
    pub total_secs: f64,
    pub instances_generated: usize,
    /// `None` when the search generated no mutants.
    pub secs_per_mutant: Option<f64>,
}

fn csv_bytes<R: Serialize>(rows: &[R]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Csv(e.into_error().into()))
}

fn write_csv<R: Serialize>(layout: &Layout, name: &str, rows: &[R]) -> CliResult<()> {
    Ok(write_atomic(&layout.file(name), &csv_bytes(rows)?)?)
}

fn cell(s: Score) -> String {
    s.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |v| format!("{v:.6}"))
}

#[derive(Serialize)]
struct SensitivityCsv {
    operator: String,
    boundary_train: String,
    boundary_strong: String,
    boundary_weak: String,
    ms_strong_boundary: String,
    ms_weak_boundary: String,
    sensitivity_boundary: String,
    ms_strong_discrete: String,
    ms_weak_discrete: String,
    sensitivity_discrete: String,
}

#[derive(Serialize)]
struct StabilityCsv<'a> {
    operator: &'a str,
    dataset: &'a str,
    step: usize,
    midpoint: f64,
    outcome: &'a str,
    instances: usize,
    counted_instances: usize,
    rse: String,
}

#[derive(Serialize)]
struct DisagreementCsv {
    operator: String,
    config: String,
    single_original: String,
    multi_original: String,
}

/// Assemble `report.json` and the CSV tables from the step outputs.
pub fn cmd_report(cfg: &RunConfig) -> CliResult<RunReport> {
    let layout = Layout::new(&cfg.out_dir);
    let mut missing = Vec::new();
    let mut need = |p: std::path::PathBuf| {
        if !p.is_file() {
            missing.push(p.display().to_string());
        }
    };
    need(layout.population_file());
    need(layout.score_file());
    for op in &cfg.operators {
        for ds in DATASETS {
            need(layout.trace_file(&op.name(), ds));
        }
    }
    if cfg.spectral.enabled {
        need(layout.spectra_summary());
    }
    if !missing.is_empty() {
        return Err(CliError::Missing(missing));
    }

    let population: crate::pipeline::PopulationRecord = read_json(&layout.population_file())?;
    let score: ScoreFile = read_json(&layout.score_file())?;
    let spectral: Option<SpectraSummary> = if cfg.spectral.enabled {
        Some(read_json(&layout.spectra_summary())?)
    } else {
        None
    };
    let mut operators = Vec::new();
    let mut timings = Vec::new();
    for s in &score.operators {
        let mut traces = BTreeMap::new();
        for ds in DATASETS {
            let stored = load_search(&layout, &s.operator, ds)?;
            let t = &stored.timing;
            timings.push(TimingRow {
                operator: s.operator.clone(),
                dataset: ds.to_string(),
                total_secs: t.total_secs,
                instances_generated: t.instances_generated,
                secs_per_mutant: (t.instances_generated > 0)
                    .then(|| t.total_secs / t.instances_generated as f64),
            });
            traces.insert(ds.to_string(), stored.trace);
        }
        operators.push(OperatorReport {
            score: s.clone(),
            traces,
        });
    }
    let mut config = serde_json::to_value(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    if let Value::Object(map) = &mut config {
        map.remove("out_dir");
    }
    let mut datasets = BTreeMap::new();
    for ds in DATASETS {
        let d: Value = read_json(&layout.data(ds).join("data.json"))?;
        datasets.insert(ds.to_string(), d["n"].as_u64().unwrap_or(0) as usize);
    }
    let report = RunReport {
        config,
        seeds: Seeds {
            base_seed: cfg.base_seed,
            originals: population.seeds,
            search: score
                .operators
                .iter()
                .map(|s| (s.operator.clone(), s.search_seed))
                .collect(),
        },
        datasets,
        originals: score.originals.clone(),
        operators,
        spectral,
    };
    write_json(&layout.report_file(), &report)?;

    let sens: Vec<SensitivityCsv> = score
        .operators
        .iter()
        .map(|s| SensitivityCsv {
            operator: s.operator.clone(),
            boundary_train: opt(s.record.per_dataset["train"].boundary),
            boundary_strong: opt(s.record.per_dataset["strong_test"].boundary),
            boundary_weak: opt(s.record.per_dataset["weak_test"].boundary),
            ms_strong_boundary: cell(s.ms_boundary["strong_test"]),
            ms_weak_boundary: cell(s.ms_boundary["weak_test"]),
            sensitivity_boundary: cell(s.sensitivity_boundary),
            ms_strong_discrete: cell(s.ms_discrete["strong_test"]),
            ms_weak_discrete: cell(s.ms_discrete["weak_test"]),
            sensitivity_discrete: cell(s.sensitivity_discrete),
        })
        .collect();
    write_csv(&layout, "sensitivity.csv", &sens)?;

    let outcome = |o: ProbeOutcome| match o {
        ProbeOutcome::Unstable => "unstable",
        ProbeOutcome::Killed => "killed",
        ProbeOutcome::Survived => "survived",
    };
    let stab: Vec<StabilityCsv> = score
        .operators
        .iter()
        .flat_map(|s| {
            s.stability.rows.iter().map(move |r| StabilityCsv {
                operator: &s.operator,
                dataset: &r.dataset,
                step: r.step,
                midpoint: r.midpoint,
                outcome: outcome(r.outcome),
                instances: r.instances,
                counted_instances: r.counted_instances,
                rse: opt(r.rse),
            })
        })
        .collect();
    write_csv(&layout, "stability.csv", &stab)?;

    let mut dis = vec![DisagreementCsv {
        operator: "originals".into(),
        config: String::new(),
        single_original: "N/A".into(),
        multi_original: format!("{:.2}", score.originals.disagreement_train),
    }];
    for s in &score.operators {
        dis.push(match (&s.hardest_train_config, s.disagreement) {
            (Some(c), Some(d)) => DisagreementCsv {
                operator: s.operator.clone(),
                config: c.clone(),
                single_original: format!("{:.2}", d.single_original),
                multi_original: format!("{:.2}", d.multi_original),
            },
            _ => DisagreementCsv {
                operator: s.operator.clone(),
                config: String::new(),
                single_original: "U/NK".into(),
                multi_original: "U/NK".into(),
            },
        });
    }
    write_csv(&layout, "disagreement.csv", &dis)?;
    write_csv(&layout, "timings.csv", &timings)?;
    write_json(&layout.file("timings.json"), &timings)?;
    Ok(report)
}

/// Every step in order. An empty train archive does not stop the run: the
/// remaining steps still write their outputs and the error is returned last.
pub fn run_all(cfg: &RunConfig) -> CliResult<RunReport> {
    let state = crate::pipeline::cmd_train(cfg)?;
    let pending = match crate::pipeline::cmd_search(cfg, &state, &[]) {
        Ok(_) => None,
        Err(e @ CliError::EmptyArchive(_)) => Some(e),
        Err(e) => return Err(e),
    };
    cmd_score(cfg, &state)?;
    if cfg.spectral.enabled {
        cmd_spectra(cfg, &state)?;
    }
    let report = cmd_report(cfg)?;
    match pending {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
