use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use subsort_core::io::dataset_file::{read_dataset, write_dataset};
use subsort_core::io::features::extract_features;
use subsort_core::io::manifest::{manifest_to_string, write_labels};
use subsort_core::io::mrc::read_mrc_stack;
use subsort_core::io::synthetic::generate_synthetic;
use subsort_core::{run_sort_observed, spca_sort, Dataset, SortManifest};

use crate::config::{InputSource, RunConfig};
use crate::dump::{ModelDump, PlantedDump};
use crate::error::{CliError, Result};

pub const DATASET_FILE: &str = "dataset.uosd";
pub const LABELS_FILE: &str = "labels.csv";
pub const PLANTED_FILE: &str = "planted.json";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const SUMMARY_FILE: &str = "summary.json";

fn create_output_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes dataset, labels and planted-model sidecar for a synthetic input.
pub fn simulate(cfg: &RunConfig) -> Result<PathBuf> {
    let InputSource::Synthetic(spec) = &cfg.input else {
        return Err(CliError::Usage("simulate needs a synthetic input".into()));
    };
    let synth = generate_synthetic(spec)?;
    let dir = &cfg.output_dir;
    create_output_dir(dir)?;
    write_dataset(dir.join(DATASET_FILE), &synth.dataset)?;
    let labels = synth.dataset.labels().expect("synthetic data is labeled");
    write_labels(dir.join(LABELS_FILE), synth.dataset.original_index(), labels)?;
    write_json(&dir.join(PLANTED_FILE), &PlantedDump::from(&synth.planted))?;
    log::info!(
        "wrote {} vectors of dimension {} to {}",
        synth.dataset.len(),
        synth.dataset.dim(),
        dir.display()
    );
    Ok(dir.clone())
}

/// The dataset a configuration points at, with labels when it is synthetic.
pub fn load_input(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.input {
        InputSource::Mrc { path } => {
            let stack = read_mrc_stack(path).map_err(subsort_core::Error::from)?;
            Ok(extract_features(&stack, &cfg.feature)?)
        }
        InputSource::Dataset { path } => Ok(read_dataset(path)?),
        InputSource::Synthetic(spec) => Ok(generate_synthetic(spec)?.dataset),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SortSummary {
    pub method: &'static str,
    pub input_count: usize,
    pub kept: usize,
    pub removed: usize,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub runtime_seconds: f64,
    pub seed: u64,
    pub threads: usize,
    pub manifest_sha256: String,
    /// Effective configuration; rerunning it reproduces the manifest.
    pub config: RunConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct TraceSink {
    path: PathBuf,
    out: BufWriter<File>,
    error: Option<std::io::Error>,
}

impl TraceSink {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(TraceSink {
            path,
            out: BufWriter::new(file),
            error: None,
        })
    }

    fn push(&mut self, record: &impl Serialize) {
        if self.error.is_some() {
            return;
        }
        let line = serde_json::to_string(record).expect("trace records serialize");
        let res = writeln!(self.out, "{line}").and_then(|_| self.out.flush());
        if let Err(e) = res {
            self.error = Some(e);
        }
    }

    fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(CliError::io(&self.path, e));
        }
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

/// Sorts the configured input and writes manifest, trace, model and summary
/// into the output directory. `threads` caps the worker pool.
pub fn sort(cfg: &RunConfig, threads: Option<usize>) -> Result<SortSummary> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let workers = pool.current_num_threads();
    pool.install(|| sort_in_pool(cfg, workers))
}

fn sort_in_pool(cfg: &RunConfig, workers: usize) -> Result<SortSummary> {
    let start = Instant::now();
    let data = load_input(cfg)?;
    let dir = &cfg.output_dir;
    create_output_dir(dir)?;
    let (m, k_total) = (cfg.model.components, cfg.model.total_dim);

    let (manifest, iterations, converged, method): (SortManifest, _, _, _) = if cfg.baseline {
        let Some(keep) = cfg.sort.target_keep else {
            return Err(CliError::Usage("--baseline needs a keep count (--target-keep or sort.target_keep)".into()));
        };
        (spca_sort(&data, k_total, keep)?, None, None, "spca")
    } else {
        let mut sink = TraceSink::create(dir.join(TRACE_FILE))?;
        let outcome = run_sort_observed(&data, m, k_total, &cfg.em, &cfg.sort, &mut |r| sink.push(r))?;
        sink.finish()?;
        write_json(&dir.join(MODEL_FILE), &ModelDump::from(&outcome.model))?;
        let iterations = outcome.trace.records.last().map(|r| r.iteration);
        (outcome.manifest, iterations, Some(outcome.trace.converged), "union")
    };

    let text = manifest_to_string(&manifest);
    let manifest_path = dir.join(MANIFEST_FILE);
    std::fs::write(&manifest_path, &text).map_err(|e| CliError::io(&manifest_path, e))?;
    if let (InputSource::Synthetic(_), Some(labels)) = (&cfg.input, data.labels()) {
        write_labels(dir.join(LABELS_FILE), data.original_index(), labels)?;
    }

    let summary = SortSummary {
        method,
        input_count: data.len(),
        kept: manifest.kept_count(),
        removed: manifest.len() - manifest.kept_count(),
        iterations,
        converged,
        runtime_seconds: start.elapsed().as_secs_f64(),
        seed: cfg.em.seed,
        threads: workers,
        manifest_sha256: sha256_hex(text.as_bytes()),
        config: cfg.clone(),
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    log::info!(
        "kept {} of {} images in {:.1} s",
        summary.kept,
        summary.input_count,
        summary.runtime_seconds
    );
    Ok(summary)
}
