//! Pipeline steps. Each step reads what earlier steps wrote under the run
//! directory, so they can run as separate invocations.

use std::collections::BTreeMap;
use std::fs;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use nnmut_core::data::{load_idx, make_synthetic_classification, make_synthetic_regression};
use nnmut_core::eval::{correctness_matrix, population_metrics};
use nnmut_core::io::{read_json, write_json};
use nnmut_core::model::{save_model, MANIFEST_FILE};
use nnmut_core::rng::{derive_seed, tag_seed};
use nnmut_core::search::{
    binary_search, binary_search_with_prior, instance_seed, MutantArchiveEntry, SearchConfig,
    SearchResult, SearchTiming, SearchTrace,
};
use nnmut_core::stats::{build_weak_set, mean};
use nnmut_core::train::{train_population, OriginalPopulation, TrainingConfig};
use nnmut_core::{Dataset, ModelGraph, ModelInstance, Provenance, Split, Task};

use crate::config::{DataSource, OperatorRun, Persist, RunConfig};
use crate::error::{CliError, CliResult};
use crate::layout::{Layout, DATASETS};

/// Written next to the original instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationRecord {
    pub m: usize,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingConfig>,
    pub instances: Vec<String>,
    /// Per-instance metric on each dataset.
    pub metrics: BTreeMap<String, Vec<f64>>,
}

/// Everything the search and later steps need, loaded from disk.
pub struct State {
    pub originals: OriginalPopulation,
    pub datasets: BTreeMap<String, Dataset>,
}

impl State {
    pub fn dataset(&self, name: &str) -> &Dataset {
        &self.datasets[name]
    }
}

fn seed_for(cfg: &RunConfig, tag: &str) -> u64 {
    derive_seed(cfg.base_seed, &[tag_seed(tag)])
}

/// Base seed of one operator's searches, shared by its three datasets so
/// that probes at the same value regenerate the same mutants.
pub fn search_seed(cfg: &RunConfig, op: &str) -> u64 {
    derive_seed(cfg.base_seed, &[tag_seed("search"), tag_seed(op)])
}

pub fn search_config(cfg: &RunConfig, op: &OperatorRun) -> SearchConfig {
    let mut sc = op.search_config(&cfg.search, cfg.thresholds, cfg.subject.tau);
    sc.base_seed = search_seed(cfg, &op.name());
    sc
}

fn named(mut d: Dataset, name: &str, split: Split) -> Dataset {
    d.name = name.to_string();
    d.split = split;
    d
}

fn load_subject_data(cfg: &RunConfig, graph: &ModelGraph) -> CliResult<(Dataset, Dataset)> {
    let (train, test) = match &cfg.subject.data {
        DataSource::Blobs {
            classes,
            per_class,
            spread,
        } => make_synthetic_classification(*classes, *per_class, *spread, seed_for(cfg, "data"))?,
        DataSource::Regression { n, noise } => {
            make_synthetic_regression(*n, *noise, seed_for(cfg, "data"))?
        }
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => (
            load_idx(train_images, train_labels, "train", Split::Train)?,
            load_idx(test_images, test_labels, "strong_test", Split::StrongTest)?,
        ),
        DataSource::Directory { train, test } => (Dataset::load(train)?, Dataset::load(test)?),
    };
    for d in [&train, &test] {
        if d.input_shape != graph.input_shape {
            return Err(CliError::Config(format!(
                "dataset `{}` has input shape {:?}, model expects {:?}",
                d.name, d.input_shape, graph.input_shape
            )));
        }
        if d.task() != graph.task {
            return Err(CliError::Config(format!(
                "dataset `{}` does not match the model task",
                d.name
            )));
        }
    }
    Ok((
        named(train, "train", Split::Train),
        named(test, "strong_test", Split::StrongTest),
    ))
}

fn load_original_dir(cfg: &RunConfig, graph: &ModelGraph) -> CliResult<OriginalPopulation> {
    let dir = cfg.originals.directory.as_ref().expect("validated");
    let mut dirs: Vec<_> = fs::read_dir(dir)
        .map_err(|e| nnmut_core::Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.len() != cfg.originals.m {
        return Err(CliError::Config(format!(
            "m = {} but {} holds {} models",
            cfg.originals.m,
            dir.display(),
            dirs.len()
        )));
    }
    let instances = nnmut_core::model::load_population(&dirs)?;
    if *instances[0].graph != *graph {
        return Err(CliError::Config(
            "pre-trained models do not match the configured model".into(),
        ));
    }
    let seeds = instances
        .iter()
        .enumerate()
        .map(|(i, m)| match m.provenance {
            Provenance::TrainedOriginal { seed } => seed,
            _ => i as u64,
        })
        .collect();
    Ok(OriginalPopulation::from_instances(instances, seeds)?)
}

/// Prepare datasets, train (or load) the originals, build the weak set and
/// write everything under the run directory.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<State> {
    let layout = Layout::new(&cfg.out_dir);
    let graph = cfg
        .subject
        .model
        .graph()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let (train, strong) = load_subject_data(cfg, &graph)?;
    let originals = match &cfg.originals.training {
        Some(t) => train_population(
            Arc::new(graph),
            &train,
            t,
            cfg.originals.m,
            seed_for(cfg, "originals"),
        )?,
        None => load_original_dir(cfg, &graph)?,
    };
    let weak = named(
        build_weak_set(
            &strong,
            &originals,
            cfg.weak.keep_fraction,
            cfg.weak.direction,
        )?,
        "weak_test",
        Split::WeakTest,
    );
    let mut datasets = BTreeMap::new();
    for d in [train, strong, weak] {
        d.save(&layout.data(&d.name))?;
        datasets.insert(d.name.clone(), d);
    }
    let mut names = Vec::with_capacity(originals.len());
    for (i, inst) in originals.instances.iter().enumerate() {
        let mut inst = inst.clone();
        inst.provenance = Provenance::TrainedOriginal {
            seed: originals.seeds[i],
        };
        save_model(&inst, &layout.original(i))?;
        names.push(format!("instance_{i:02}"));
    }
    let mut metrics = BTreeMap::new();
    for (name, d) in &datasets {
        metrics.insert(
            name.clone(),
            population_metrics(&originals.instances, d, cfg.subject.tau)?,
        );
    }
    let record = PopulationRecord {
        m: originals.len(),
        seeds: originals.seeds.clone(),
        training: cfg.originals.training.clone(),
        instances: names,
        metrics,
    };
    write_json(&layout.population_file(), &record)?;
    Ok(State {
        originals,
        datasets,
    })
}

/// Load the artifacts written by [`cmd_train`].
pub fn load_state(cfg: &RunConfig) -> CliResult<State> {
    let layout = Layout::new(&cfg.out_dir);
    let mut missing = Vec::new();
    if !layout.population_file().is_file() {
        missing.push(layout.population_file().display().to_string());
    }
    for name in DATASETS {
        if !layout.data(name).is_dir() {
            missing.push(layout.data(name).display().to_string());
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Missing(missing));
    }
    let record: PopulationRecord = read_json(&layout.population_file())?;
    let dirs: Vec<_> = record
        .instances
        .iter()
        .map(|n| layout.originals().join(n))
        .collect();
    let instances = nnmut_core::model::load_population(&dirs)?;
    let mut originals = OriginalPopulation::from_instances(instances, record.seeds)?;
    originals.training = record.training;
    let mut datasets = BTreeMap::new();
    for name in DATASETS {
        datasets.insert(name.to_string(), Dataset::load(&layout.data(name))?);
    }
    Ok(State {
        originals,
        datasets,
    })
}

/// The three searches of one operator.
pub struct OperatorSearch {
    pub operator: String,
    pub results: BTreeMap<String, SearchResult>,
}

fn persist_search(
    cfg: &RunConfig,
    layout: &Layout,
    op: &str,
    dataset: &str,
    res: &SearchResult,
) -> CliResult<()> {
    let dir = layout.search(op, dataset);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| nnmut_core::Error::io(&dir, e))?;
    }
    write_json(&layout.trace_file(op, dataset), &res.trace)?;
    write_json(&layout.timing_file(op, dataset), &res.timing)?;
    let last = res.archive.len().saturating_sub(1);
    for e in &res.archive {
        write_json(&layout.entry_file(op, dataset, e.index), e)?;
        let keep = match cfg.persist {
            Persist::All => true,
            Persist::Hardest => e.index == last,
            Persist::None => false,
        };
        if keep {
            for (y, inst) in e.instances.iter().enumerate() {
                save_model(
                    inst,
                    &layout
                        .entry(op, dataset, e.index)
                        .join(format!("instance_{y:03}")),
                )?;
            }
        }
    }
    Ok(())
}

/// Search every configured operator (or those named in `only`) on the
/// train set, then on the strong and weak sets reusing the train archive.
/// Fails with [`CliError::EmptyArchive`] after writing all results when an
/// operator has no killable stable configuration on the train set.
pub fn cmd_search(
    cfg: &RunConfig,
    state: &State,
    only: &[String],
) -> CliResult<Vec<OperatorSearch>> {
    let layout = Layout::new(&cfg.out_dir);
    let mut out = Vec::new();
    let mut empty = Vec::new();
    for op in &cfg.operators {
        let name = op.name();
        if !only.is_empty() && !only.contains(&name) {
            continue;
        }
        let sc = search_config(cfg, op);
        let train = binary_search(&state.originals, &sc, state.dataset("train"))?;
        let mut results = BTreeMap::new();
        for ds in ["strong_test", "weak_test"] {
            let r =
                binary_search_with_prior(&state.originals, &sc, state.dataset(ds), &train.archive)?;
            persist_search(cfg, &layout, &name, ds, &r)?;
            results.insert(ds.to_string(), r);
        }
        persist_search(cfg, &layout, &name, "train", &train)?;
        if train.archive.is_empty() {
            empty.push(name.clone());
        }
        results.insert("train".to_string(), train);
        out.push(OperatorSearch {
            operator: name,
            results,
        });
    }
    if !only.is_empty() && out.is_empty() {
        return Err(CliError::Config(format!(
            "no configured operator among {only:?}"
        )));
    }
    if !empty.is_empty() {
        return Err(CliError::EmptyArchive(empty));
    }
    Ok(out)
}

/// Trace and archive of one search, as persisted.
pub struct StoredSearch {
    pub trace: SearchTrace,
    pub timing: SearchTiming,
    pub archive: Vec<MutantArchiveEntry>,
}

pub fn load_search(layout: &Layout, op: &str, dataset: &str) -> CliResult<StoredSearch> {
    let trace_file = layout.trace_file(op, dataset);
    if !trace_file.is_file() {
        return Err(CliError::Missing(vec![trace_file.display().to_string()]));
    }
    let trace = read_json(&trace_file)?;
    let timing = read_json(&layout.timing_file(op, dataset))?;
    let archive = (0..layout.entry_count(op, dataset))
        .map(|i| read_json(&layout.entry_file(op, dataset, i)))
        .collect::<nnmut_core::Result<Vec<MutantArchiveEntry>>>()?;
    Ok(StoredSearch {
        trace,
        timing,
        archive,
    })
}

/// Disagreement rates of one configuration on the train set: `m` instances
/// generated from the first original alone, and one instance from each of
/// the `m` originals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub single_original: f64,
    pub multi_original: f64,
}

pub fn disagreement_for(
    state: &State,
    entry: &MutantArchiveEntry,
    base_seed: u64,
    tau: Option<f32>,
) -> CliResult<Disagreement> {
    let m = state.originals.len();
    let from_first: Vec<ModelInstance> = (1..=m)
        .map(|k| {
            nnmut_core::operators::apply(
                &state.originals.instances[0],
                &entry.config,
                instance_seed(base_seed, 0, k),
            )
        })
        .collect::<nnmut_core::Result<_>>()?;
    let from_each: Vec<ModelInstance> = (0..m)
        .map(|i| {
            nnmut_core::operators::apply(
                &state.originals.instances[i],
                &entry.config,
                instance_seed(base_seed, i, 1),
            )
        })
        .collect::<nnmut_core::Result<_>>()?;
    let train = state.dataset("train");
    let rate = |pop: &[ModelInstance]| -> CliResult<f64> {
        Ok(nnmut_core::stats::disagreement_rate(&correctness_matrix(
            pop, train, tau,
        )?)?)
    };
    Ok(Disagreement {
        single_original: rate(&from_first)?,
        multi_original: rate(&from_each)?,
    })
}

pub fn originals_disagreement(state: &State, tau: Option<f32>) -> CliResult<f64> {
    let c = correctness_matrix(&state.originals.instances, state.dataset("train"), tau)?;
    Ok(nnmut_core::stats::disagreement_rate(&c)?)
}

pub fn mean_metric(state: &State, dataset: &str, tau: Option<f32>) -> CliResult<f64> {
    Ok(mean(&population_metrics(
        &state.originals.instances,
        state.dataset(dataset),
        tau,
    )?))
}

pub fn is_classification(state: &State) -> bool {
    state.originals.graph.task == Task::Classification
}
