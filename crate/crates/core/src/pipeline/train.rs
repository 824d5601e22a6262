//! Offline phases: template building, feature extraction, model fitting and
//! cross-validated evaluation.

use serde::Serialize;

use crate::classifier::{cross_validate, exclude_class, ClassifierError, CvReport, KnnModel, LabeledSample};
use crate::features::{FeatureError, PreparedTemplates};
use crate::frame::Frame;
use crate::templates::{build_template, GestureLabel, TemplateError, TemplateStore};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("no training frames for {0}")]
    MissingGesture(GestureLabel),
    #[error("training frame {seq} ({label}): {source}")]
    BadFrame {
        seq: u64,
        label: GestureLabel,
        source: FeatureError,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// One template per gesture from that gesture's frames.
pub fn build_store(dataset: &[(GestureLabel, Frame)], per_template: usize) -> Result<TemplateStore, TrainError> {
    let mut templates = Vec::with_capacity(4);
    for label in GestureLabel::ALL {
        let frames: Vec<Frame> = dataset
            .iter()
            .filter(|(l, _)| *l == label)
            .map(|(_, f)| f.clone())
            .collect();
        if frames.is_empty() {
            return Err(TrainError::MissingGesture(label));
        }
        templates.push(build_template(&frames, label, per_template)?);
    }
    Ok(TemplateStore::new(templates)?)
}

/// Correlation features of every frame against the store, in dataset order.
pub fn extract_samples(
    dataset: &[(GestureLabel, Frame)],
    store: &TemplateStore,
    subject_id: &str,
) -> Result<Vec<LabeledSample>, TrainError> {
    let prepared = PreparedTemplates::new(store)?;
    dataset
        .iter()
        .map(|(label, frame)| {
            let v = prepared.extract(frame).map_err(|source| TrainError::BadFrame {
                seq: frame.seq(),
                label: *label,
                source,
            })?;
            Ok(LabeledSample {
                features: v.r,
                label: *label,
                subject_id: subject_id.to_string(),
                trial_id: format!("frame-{}", frame.seq()),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub store: TemplateStore,
    pub model: KnnModel,
    pub class_counts: [usize; 4],
}

/// Templates from the labelled frames, features of every frame against them,
/// then a kNN fit over all samples.
pub fn train(
    dataset: &[(GestureLabel, Frame)],
    per_template: usize,
    k: usize,
    subject_id: &str,
) -> Result<TrainOutcome, TrainError> {
    let store = build_store(dataset, per_template)?;
    let samples = extract_samples(dataset, &store, subject_id)?;
    let mut class_counts = [0; 4];
    for s in &samples {
        class_counts[s.label.ordinal()] += 1;
    }
    let model = KnnModel::fit(samples, k)?;
    Ok(TrainOutcome {
        store,
        model,
        class_counts,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub full: CvReport,
    pub rest_excluded: CvReport,
}

/// Cross-validation on all samples and again with rest removed.
pub fn evaluate(samples: &[LabeledSample], k: usize, folds: usize, seed: u64) -> Result<EvalReport, TrainError> {
    let full = cross_validate(samples, k, folds, seed)?;
    let without_rest = exclude_class(samples, GestureLabel::Rest)?;
    let rest_excluded = cross_validate(&without_rest, k, folds, seed)?;
    Ok(EvalReport { full, rest_excluded })
}
