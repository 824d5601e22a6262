//! The offline commands: `train`, `eval` and `synth-gen`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::PipelineConfig;
use super::train::{build_store, evaluate, extract_samples, train, EvalReport, TrainOutcome};
use super::PipelineError;
use crate::frame::{load_pgm, preprocess, Frame};
use crate::synth::{generate_dataset, load_dataset, DatasetManifest, Phantom, DATASET_MANIFEST};
use crate::templates::{GestureLabel, TemplateStore};

const SUBJECT: &str = "subject-0";

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let context = context.into();
    move |source| PipelineError::Io { context, source }
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        context: format!("loading dataset {}", path.display()),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Labelled frames from `config.dataset`, or rendered from `config.synth`
/// when no dataset is configured, preprocessed to the pipeline size.
///
/// A dataset path may be a manifest, a directory holding one, or a directory
/// with one sub-directory of PGM files per gesture (`rest/`, `power_grip/`, ...).
/// Rendered frames go through the same 8-bit quantization as files on disk,
/// so both routes give identical results.
pub fn load_training_set(config: &PipelineConfig) -> Result<Vec<(GestureLabel, Frame)>, PipelineError> {
    let raw = match &config.dataset {
        Some(path) => load_labelled(path)?,
        None => Phantom::new(config.synth)
            .and_then(|p| p.dataset_frames(config.per_class))
            .map_err(|e| data_err(Path::new("<synthetic>"), e))?
            .into_iter()
            .map(|(label, f)| {
                let q = Frame::from_u8(f.width(), f.height(), &f.to_u8()).expect("dims unchanged");
                (label, q.with_meta(f.timestamp_us(), f.seq()))
            })
            .collect(),
    };
    raw.into_iter()
        .map(|(label, f)| {
            let seq = f.seq();
            preprocess(&f, config.roi, config.width, config.height)
                .map(|p| (label, p))
                .map_err(|e| PipelineError::Preprocess {
                    seq,
                    reason: e.to_string(),
                })
        })
        .collect()
}

fn load_labelled(path: &Path) -> Result<Vec<(GestureLabel, Frame)>, PipelineError> {
    if path.is_file() || path.join(DATASET_MANIFEST).is_file() {
        return load_dataset(path).map_err(|e| data_err(path, e));
    }
    let mut out = Vec::new();
    for label in GestureLabel::ALL {
        let dir = path.join(label.name());
        if !dir.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(format!("listing {}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
            .collect();
        files.sort();
        for file in files {
            let seq = out.len() as u64;
            let frame = load_pgm(&file).map_err(|e| data_err(&file, e))?;
            out.push((label, frame.with_meta(0, seq)));
        }
    }
    if out.is_empty() {
        return Err(data_err(path, "no manifest and no per-gesture PGM directories"));
    }
    Ok(out)
}

/// Builds and saves templates and model; returns what was saved.
pub fn run_train(config: &PipelineConfig) -> Result<TrainOutcome, PipelineError> {
    config.validate()?;
    let data = load_training_set(config)?;
    let outcome = train(&data, config.templates_per_gesture, config.k, SUBJECT)?;
    outcome
        .store
        .save(&config.template_dir)
        .map_err(|e| PipelineError::Templates {
            path: config.template_dir.display().to_string(),
            source: e,
        })?;
    if let Some(dir) = config.model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    }
    outcome
        .model
        .save(&config.model_path)
        .map_err(|e| PipelineError::Model {
            path: config.model_path.display().to_string(),
            source: e,
        })?;
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalOutcome {
    pub report: EvalReport,
    /// Whether the templates came from `template_dir` rather than the evaluation data.
    pub stored_templates: bool,
    pub out_dir: Option<PathBuf>,
}

/// Cross-validates on the configured dataset, with and without rest.
///
/// Uses the template store in `template_dir` when one exists there,
/// otherwise builds templates from the evaluation frames.
pub fn run_eval(config: &PipelineConfig) -> Result<EvalOutcome, PipelineError> {
    config.validate()?;
    let data = load_training_set(config)?;
    let (store, stored_templates) = match TemplateStore::load(&config.template_dir) {
        Ok(store) => (store, true),
        Err(_) if !config.template_dir.join("manifest.json").exists() => {
            (build_store(&data, config.templates_per_gesture)?, false)
        }
        Err(e) => {
            return Err(PipelineError::Templates {
                path: config.template_dir.display().to_string(),
                source: e,
            })
        }
    };
    if store.dims() != (config.width, config.height) {
        return Err(PipelineError::Dims {
            got: store.dims(),
            want: (config.width, config.height),
        });
    }
    let samples = extract_samples(&data, &store, SUBJECT)?;
    let report = evaluate(&samples, config.k, config.folds, config.seed)?;
    if let Some(dir) = &config.eval_out {
        write_eval(&report, dir)?;
    }
    Ok(EvalOutcome {
        report,
        stored_templates,
        out_dir: config.eval_out.clone(),
    })
}

/// `report_full.json`, `report_rest_excluded.json` and the matching
/// `confusion_*.csv` files.
pub fn write_eval(report: &EvalReport, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    for (name, cv) in [("full", &report.full), ("rest_excluded", &report.rest_excluded)] {
        let json = serde_json::to_string_pretty(cv).expect("report serializes") + "\n";
        let path = dir.join(format!("report_{name}.json"));
        fs::write(&path, json).map_err(io_err(format!("writing {}", path.display())))?;
        let path = dir.join(format!("confusion_{name}.csv"));
        fs::write(&path, cv.confusion.to_csv()).map_err(io_err(format!("writing {}", path.display())))?;
    }
    Ok(())
}

/// Writes the synthetic dataset described by `config.synth` and `config.per_class`.
pub fn run_synth_gen(config: &PipelineConfig, out_dir: &Path) -> Result<DatasetManifest, PipelineError> {
    config.validate()?;
    generate_dataset(&config.synth, config.per_class, out_dir).map_err(|e| PipelineError::Io {
        context: format!("writing dataset to {}", out_dir.display()),
        source: std::io::Error::other(e.to_string()),
    })
}
