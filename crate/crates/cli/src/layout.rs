//! Paths inside a run directory.

use std::path::PathBuf;

pub const DATASETS: [&str; 3] = ["train", "strong_test", "weak_test"];

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }

    pub fn originals(&self) -> PathBuf {
        self.root.join("originals")
    }

    pub fn population_file(&self) -> PathBuf {
        self.originals().join("population.json")
    }

    pub fn original(&self, i: usize) -> PathBuf {
        self.originals().join(format!("instance_{i:02}"))
    }

    pub fn search(&self, op: &str, dataset: &str) -> PathBuf {
        self.root.join("search").join(op).join(dataset)
    }

    pub fn trace_file(&self, op: &str, dataset: &str) -> PathBuf {
        self.search(op, dataset).join("trace.json")
    }

    pub fn timing_file(&self, op: &str, dataset: &str) -> PathBuf {
        self.search(op, dataset).join("timing.json")
    }

    pub fn entry(&self, op: &str, dataset: &str, index: usize) -> PathBuf {
        self.search(op, dataset)
            .join("archive")
            .join(format!("entry_{index:03}"))
    }

    pub fn entry_file(&self, op: &str, dataset: &str, index: usize) -> PathBuf {
        self.entry(op, dataset, index).join("entry.json")
    }

    pub fn score_file(&self) -> PathBuf {
        self.root.join("score.json")
    }

    pub fn spectra(&self) -> PathBuf {
        self.root.join("spectra")
    }

    pub fn spectra_summary(&self) -> PathBuf {
        self.spectra().join("summary.json")
    }

    pub fn report_file(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Entries `entry_000..` present on disk for one search.
    pub fn entry_count(&self, op: &str, dataset: &str) -> usize {
        (0..)
            .take_while(|&i| self.entry_file(op, dataset, i).is_file())
            .count()
    }
}
