//! k-nearest-neighbour classification over correlation vectors, with
//! stratified cross-validation and confusion matrices.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::templates::GestureLabel;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("no samples")]
    Empty,
    #[error("k = {k} must lie in 1..={n}")]
    BadK { k: usize, n: usize },
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("class {label} has {count} samples, fewer than {folds} folds")]
    ClassTooSmall {
        label: GestureLabel,
        count: usize,
        folds: usize,
    },
    #[error("feature {index} = {value} lies outside [-1, 1]")]
    FeatureOutOfRange { index: usize, value: f64 },
    #[error("model file: {0}")]
    Format(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledSample {
    pub features: [f64; 4],
    pub label: GestureLabel,
    pub subject_id: String,
    pub trial_id: String,
}

impl LabeledSample {
    pub fn new(features: [f64; 4], label: GestureLabel) -> Self {
        Self {
            features,
            label,
            subject_id: String::new(),
            trial_id: String::new(),
        }
    }

    fn validate(&self) -> Result<(), ClassifierError> {
        match self.features.iter().position(|v| !(-1.0..=1.0).contains(v)) {
            Some(index) => Err(ClassifierError::FeatureOutOfRange {
                index,
                value: self.features[index],
            }),
            None => Ok(()),
        }
    }
}

/// Euclidean distance on the 4-vector, summed in index order.
#[inline]
pub fn euclidean(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let mut s = 0.0;
    for i in 0..4 {
        let d = a[i] - b[i];
        s += d * d;
    }
    s.sqrt()
}

/// Stored samples plus `k`. Fitting only validates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnModel {
    k: usize,
    samples: Vec<LabeledSample>,
}

impl KnnModel {
    pub fn fit(samples: Vec<LabeledSample>, k: usize) -> Result<Self, ClassifierError> {
        if samples.is_empty() {
            return Err(ClassifierError::Empty);
        }
        if k == 0 || k > samples.len() {
            return Err(ClassifierError::BadK { k, n: samples.len() });
        }
        for s in &samples {
            s.validate()?;
        }
        Ok(Self { k, samples })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    /// Majority label among the `k` nearest samples.
    ///
    /// Equal distances favour the earlier sample. A tied vote goes to the class
    /// whose nearest selected member is closest, then to the lowest ordinal.
    pub fn predict(&self, features: &[f64; 4]) -> GestureLabel {
        let mut ranked: Vec<(f64, usize)> = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| (euclidean(&s.features, features), i))
            .collect();
        let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < ranked.len() {
            ranked.select_nth_unstable_by(self.k - 1, by_key);
            ranked.truncate(self.k);
        }

        let mut votes = [0usize; 4];
        let mut nearest = [f64::INFINITY; 4];
        for &(d, i) in &ranked {
            let c = self.samples[i].label.ordinal();
            votes[c] += 1;
            nearest[c] = nearest[c].min(d);
        }
        let mut best = 0;
        for c in 1..4 {
            let better = votes[c] > votes[best] || (votes[c] == votes[best] && nearest[c] < nearest[best]);
            if better {
                best = c;
            }
        }
        GestureLabel::ALL[best]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassifierError> {
        Self::from_json(&fs::read(path)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ClassifierError> {
        let raw: KnnModel = serde_json::from_slice(bytes)?;
        Self::fit(raw.samples, raw.k)
    }
}

pub fn knn_fit(samples: Vec<LabeledSample>, k: usize) -> Result<KnnModel, ClassifierError> {
    KnnModel::fit(samples, k)
}

pub fn knn_predict(model: &KnnModel, features: &[f64; 4]) -> GestureLabel {
    model.predict(features)
}

/// Counts indexed `[true][predicted]` by gesture ordinal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: GestureLabel, predicted: GestureLabel) {
        self.counts[truth.ordinal()][predicted.ordinal()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..4).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, truth: GestureLabel) -> u64 {
        self.counts[truth.ordinal()].iter().sum()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    /// Header row of predicted labels, then one row per true label.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for l in GestureLabel::ALL {
            out.push(',');
            out.push_str(l.name());
        }
        out.push('\n');
        for t in GestureLabel::ALL {
            out.push_str(t.name());
            for p in GestureLabel::ALL {
                let _ = write!(out, ",{}", self.counts[t.ordinal()][p.ordinal()]);
            }
            out.push('\n');
        }
        out
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(mut self, rhs: ConfusionMatrix) -> ConfusionMatrix {
        for i in 0..4 {
            for j in 0..4 {
                self.counts[i][j] += rhs.counts[i][j];
            }
        }
        self
    }
}

pub fn aggregate_confusion<'a>(matrices: impl IntoIterator<Item = &'a ConfusionMatrix>) -> ConfusionMatrix {
    matrices.into_iter().fold(ConfusionMatrix::default(), |acc, m| acc + *m)
}

/// Drops every sample of `label`, keeping the others in order.
pub fn exclude_class(samples: &[LabeledSample], label: GestureLabel) -> Result<Vec<LabeledSample>, ClassifierError> {
    let kept: Vec<LabeledSample> = samples.iter().filter(|s| s.label != label).cloned().collect();
    if kept.is_empty() {
        return Err(ClassifierError::Empty);
    }
    Ok(kept)
}

/// Seeded stratified partition into `folds` disjoint index sets.
///
/// Each class is shuffled independently and dealt round-robin, continuing
/// the fold cursor across classes so fold sizes stay within one of each
/// other. Fold contents are returned in ascending index order.
pub fn stratified_folds(
    samples: &[LabeledSample],
    folds: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, ClassifierError> {
    if folds < 2 {
        return Err(ClassifierError::TooFewFolds(folds));
    }
    if samples.is_empty() {
        return Err(ClassifierError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new(); folds];
    let mut cursor = 0;
    for label in GestureLabel::ALL {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == label).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < folds {
            return Err(ClassifierError::ClassTooSmall {
                label,
                count: idx.len(),
                folds,
            });
        }
        idx.shuffle(&mut rng);
        for i in idx {
            out[cursor].push(i);
            cursor = (cursor + 1) % folds;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub k: usize,
    pub seed: u64,
    pub fold_accuracy: Vec<f64>,
    pub fold_confusion: Vec<ConfusionMatrix>,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

pub fn cross_validate(
    samples: &[LabeledSample],
    k: usize,
    folds: usize,
    seed: u64,
) -> Result<CvReport, ClassifierError> {
    let partition = stratified_folds(samples, folds, seed)?;
    let mut fold_confusion = Vec::with_capacity(folds);
    for held_out in &partition {
        let mut is_held = vec![false; samples.len()];
        for &i in held_out {
            is_held[i] = true;
        }
        let train: Vec<LabeledSample> = samples
            .iter()
            .zip(&is_held)
            .filter(|(_, &h)| !h)
            .map(|(s, _)| s.clone())
            .collect();
        let model = KnnModel::fit(train, k)?;
        let mut m = ConfusionMatrix::default();
        for &i in held_out {
            m.record(samples[i].label, model.predict(&samples[i].features));
        }
        fold_confusion.push(m);
    }
    let confusion = aggregate_confusion(&fold_confusion);
    Ok(CvReport {
        folds,
        k,
        seed,
        fold_accuracy: fold_confusion.iter().map(ConfusionMatrix::accuracy).collect(),
        accuracy: confusion.accuracy(),
        confusion,
        fold_confusion,
    })
}
