//! Gesture labels and averaged per-gesture template images.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{pearson, FeatureError};
use crate::frame::{load_pgm, save_pgm, Frame, FrameError};

/// The four gestures, with ordinals fixed at 0..=3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GestureLabel {
    Rest = 0,
    PowerGrip = 1,
    WristPronation = 2,
    Point = 3,
}

impl GestureLabel {
    pub const ALL: [GestureLabel; 4] = [
        GestureLabel::Rest,
        GestureLabel::PowerGrip,
        GestureLabel::WristPronation,
        GestureLabel::Point,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Wire and file name.
    pub fn name(self) -> &'static str {
        match self {
            GestureLabel::Rest => "rest",
            GestureLabel::PowerGrip => "power_grip",
            GestureLabel::WristPronation => "wrist_pronation",
            GestureLabel::Point => "point",
        }
    }
}

impl fmt::Display for GestureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown gesture {0:?}")]
pub struct UnknownGesture(pub String);

impl FromStr for GestureLabel {
    type Err = UnknownGesture;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| UnknownGesture(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("no frames given")]
    Empty,
    #[error("frame dims {got:?} differ from {expected:?}")]
    DimMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("n must be at least 1")]
    ZeroCount,
    #[error("every candidate frame has zero pixel variance")]
    AllDegenerate,
    #[error("template store has no {0} template")]
    MissingLabel(GestureLabel),
    #[error("template for {0} is listed more than once")]
    DuplicateLabel(GestureLabel),
    #[error("template {label}: {reason}")]
    Inconsistent { label: GestureLabel, reason: String },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-pixel arithmetic mean. Metadata is taken from the last frame.
///
/// Each pixel's values are summed in ascending order, so the result depends
/// only on which frames are given, not on their order.
pub fn mean_image(frames: &[Frame]) -> Result<Frame, TemplateError> {
    let last = frames.last().ok_or(TemplateError::Empty)?;
    let dims = frames[0].dims();
    if let Some(f) = frames.iter().find(|f| f.dims() != dims) {
        return Err(TemplateError::DimMismatch {
            expected: dims,
            got: f.dims(),
        });
    }
    let n = frames.len() as f64;
    let mut column = Vec::with_capacity(frames.len());
    let pixels = (0..dims.0 * dims.1)
        .map(|i| {
            column.clear();
            column.extend(frames.iter().map(|f| f.pixels()[i]));
            column.sort_unstable_by(f64::total_cmp);
            let sum: f64 = column.iter().sum();
            // Clamping to the input range removes rounding overshoot, so
            // identical inputs average back to themselves exactly.
            (sum / n).clamp(column[0], column[column.len() - 1])
        })
        .collect();
    Ok(Frame::new(dims.0, dims.1, pixels)?.with_meta(last.timestamp_us(), last.seq()))
}

fn is_degenerate(f: &Frame) -> bool {
    let p = f.pixels();
    p.iter().all(|&v| v == p[0])
}

/// Stability score of every non-degenerate frame: its mean correlation with
/// all other non-degenerate candidates. Degenerate frames score `None`.
pub fn stability_scores(frames: &[Frame]) -> Result<Vec<Option<f64>>, TemplateError> {
    let Some(first) = frames.first() else {
        return Err(TemplateError::Empty);
    };
    if let Some(f) = frames.iter().find(|f| f.dims() != first.dims()) {
        return Err(TemplateError::DimMismatch {
            expected: first.dims(),
            got: f.dims(),
        });
    }
    let valid: Vec<usize> = (0..frames.len()).filter(|&i| !is_degenerate(&frames[i])).collect();
    let mut sums = vec![0.0; frames.len()];
    for (a, &i) in valid.iter().enumerate() {
        for &j in &valid[a + 1..] {
            let r = pearson(&frames[i], &frames[j])?;
            sums[i] += r;
            sums[j] += r;
        }
    }
    let others = valid.len().saturating_sub(1).max(1) as f64;
    let mut scores = vec![None; frames.len()];
    for &i in &valid {
        scores[i] = Some(if valid.len() == 1 { 1.0 } else { sums[i] / others });
    }
    Ok(scores)
}

/// The `n` most mutually consistent frames, returned in seq order.
///
/// Ranking is by stability score, ties going to the lower seq. Frames with
/// zero pixel variance are never selected.
pub fn select_stable_frames(frames: &[Frame], n: usize) -> Result<Vec<Frame>, TemplateError> {
    if n == 0 {
        return Err(TemplateError::ZeroCount);
    }
    let scores = stability_scores(frames)?;
    let mut ranked: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (i, s)))
        .collect();
    if ranked.is_empty() {
        return Err(TemplateError::AllDegenerate);
    }
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| frames[a.0].seq().cmp(&frames[b.0].seq()))
            .then_with(|| a.0.cmp(&b.0))
    });
    ranked.truncate(n);
    let mut picked: Vec<usize> = ranked.into_iter().map(|(i, _)| i).collect();
    picked.sort_by_key(|&i| (frames[i].seq(), i));
    Ok(picked.into_iter().map(|i| frames[i].clone()).collect())
}

/// One gesture's representative image and the frames it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureTemplate {
    pub label: GestureLabel,
    pub image: Frame,
    pub n_frames: usize,
    pub source_ids: Vec<u64>,
}

pub fn build_template(frames: &[Frame], label: GestureLabel, n: usize) -> Result<GestureTemplate, TemplateError> {
    let chosen = select_stable_frames(frames, n)?;
    Ok(GestureTemplate {
        label,
        image: mean_image(&chosen)?,
        n_frames: chosen.len(),
        source_ids: chosen.iter().map(Frame::seq).collect(),
    })
}

/// Exactly one template per gesture, all sharing the same dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateStore {
    templates: [GestureTemplate; 4],
}

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct StoreManifest {
    width: usize,
    height: usize,
    templates: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    label: GestureLabel,
    file: String,
    n_frames: usize,
    source_ids: Vec<u64>,
}

impl TemplateStore {
    /// Accepts templates in any order; each label must appear exactly once.
    pub fn new(templates: Vec<GestureTemplate>) -> Result<Self, TemplateError> {
        let mut slots: [Option<GestureTemplate>; 4] = [None, None, None, None];
        for t in templates {
            if t.n_frames == 0 || t.n_frames != t.source_ids.len() {
                return Err(TemplateError::Inconsistent {
                    label: t.label,
                    reason: format!("n_frames {} vs {} source ids", t.n_frames, t.source_ids.len()),
                });
            }
            let slot = &mut slots[t.label.ordinal()];
            if slot.is_some() {
                return Err(TemplateError::DuplicateLabel(t.label));
            }
            *slot = Some(t);
        }
        let mut out = Vec::with_capacity(4);
        for (i, slot) in slots.into_iter().enumerate() {
            out.push(slot.ok_or(TemplateError::MissingLabel(GestureLabel::ALL[i]))?);
        }
        let dims = out[0].image.dims();
        if let Some(t) = out.iter().find(|t| t.image.dims() != dims) {
            return Err(TemplateError::DimMismatch {
                expected: dims,
                got: t.image.dims(),
            });
        }
        Ok(Self {
            templates: out.try_into().expect("four templates"),
        })
    }

    pub fn get(&self, label: GestureLabel) -> &GestureTemplate {
        &self.templates[label.ordinal()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &GestureTemplate> {
        self.templates.iter()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.templates[0].image.dims()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), TemplateError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let (width, height) = self.dims();
        let mut entries = Vec::new();
        for t in &self.templates {
            let file = format!("{}.pgm", t.label.name());
            save_pgm(&t.image, dir.join(&file))?;
            entries.push(ManifestEntry {
                label: t.label,
                file,
                n_frames: t.n_frames,
                source_ids: t.source_ids.clone(),
            });
        }
        let manifest = StoreManifest {
            width,
            height,
            templates: entries,
        };
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let manifest: StoreManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
        let mut templates = BTreeMap::new();
        for entry in manifest.templates {
            let image = load_pgm(dir.join(&entry.file))?;
            if image.dims() != (manifest.width, manifest.height) {
                return Err(TemplateError::Inconsistent {
                    label: entry.label,
                    reason: format!(
                        "{} is {}x{}, manifest says {}x{}",
                        entry.file,
                        image.width(),
                        image.height(),
                        manifest.width,
                        manifest.height
                    ),
                });
            }
            let t = GestureTemplate {
                label: entry.label,
                image,
                n_frames: entry.n_frames,
                source_ids: entry.source_ids,
            };
            if templates.insert(entry.label, t).is_some() {
                return Err(TemplateError::DuplicateLabel(entry.label));
            }
        }
        Self::new(templates.into_values().collect())
    }
}

/// Save a store under `dir` (free-function form of [`TemplateStore::save`]).
pub fn save_store(store: &TemplateStore, dir: impl AsRef<Path>) -> Result<(), TemplateError> {
    store.save(dir)
}

pub fn load_store(dir: impl AsRef<Path>) -> Result<TemplateStore, TemplateError> {
    TemplateStore::load(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_frame(seed: u64, w: usize, h: usize) -> Frame {
        let rng = crate::rng::CounterRng::new(seed, 99, 0);
        Frame::new(w, h, (0..w * h).map(|i| rng.uniform_at(i as u64)).collect()).unwrap()
    }

    fn blend(base: &Frame, other: &Frame, amount: f64) -> Frame {
        let p = base
            .pixels()
            .iter()
            .zip(other.pixels())
            .map(|(a, b)| a * (1.0 - amount) + b * amount)
            .collect();
        Frame::new(base.width(), base.height(), p).unwrap()
    }

    #[test]
    fn labels_round_trip_names_and_ordinals() {
        for (i, l) in GestureLabel::ALL.into_iter().enumerate() {
            assert_eq!(l.ordinal(), i);
            assert_eq!(GestureLabel::from_ordinal(i), Some(l));
            assert_eq!(l.name().parse::<GestureLabel>().unwrap(), l);
            assert_eq!(serde_json::to_string(&l).unwrap(), format!("\"{}\"", l.name()));
        }
        assert!("fist".parse::<GestureLabel>().is_err());
        assert_eq!(GestureLabel::from_ordinal(4), None);
    }

    #[test]
    fn mean_of_identical_frames_is_exact() {
        let f = noise_frame(1, 5, 4);
        let m = mean_image(&vec![f.clone(); 7]).unwrap();
        assert_eq!(m.pixels(), f.pixels());
    }

    #[test]
    fn mean_midpoint_and_metadata() {
        let a = Frame::constant(3, 3, 0.0).unwrap().with_meta(5, 1);
        let b = Frame::constant(3, 3, 1.0).unwrap().with_meta(9, 2);
        let m = mean_image(&[a, b]).unwrap();
        assert!(m.pixels().iter().all(|&v| v == 0.5));
        assert_eq!((m.timestamp_us(), m.seq()), (9, 2));
    }

    #[test]
    fn mean_matches_scalar_loop() {
        let frames: Vec<Frame> = (0..3).map(|s| noise_frame(s, 8, 8)).collect();
        let m = mean_image(&frames).unwrap();
        for i in 0..64 {
            let mut acc = 0.0;
            for f in &frames {
                acc += f.pixels()[i];
            }
            assert!((m.pixels()[i] - acc / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_errors() {
        assert!(matches!(mean_image(&[]), Err(TemplateError::Empty)));
        let a = Frame::constant(2, 2, 0.1).unwrap();
        let b = Frame::constant(2, 3, 0.1).unwrap();
        assert!(matches!(mean_image(&[a, b]), Err(TemplateError::DimMismatch { .. })));
    }

    #[test]
    fn identical_frames_select_by_seq() {
        let f = noise_frame(3, 6, 6);
        let frames: Vec<Frame> = [4u64, 2, 7, 1, 9].iter().map(|&s| f.clone().with_meta(0, s)).collect();
        let picked = select_stable_frames(&frames, 3).unwrap();
        assert_eq!(picked.iter().map(Frame::seq).collect::<Vec<_>>(), vec![1, 2, 4]);
    }

    #[test]
    fn outlier_is_never_selected() {
        let base = noise_frame(10, 16, 16);
        let mut frames: Vec<Frame> = (0..9)
            .map(|i| blend(&base, &noise_frame(100 + i, 16, 16), 0.1).with_meta(0, i))
            .collect();
        frames.insert(4, noise_frame(555, 16, 16).with_meta(0, 1000));

        // Brute-force the scores independently and confirm the outlier ranks last.
        let mut brute = Vec::new();
        for i in 0..frames.len() {
            let mut s = 0.0;
            for j in 0..frames.len() {
                if i != j {
                    s += pearson(&frames[i], &frames[j]).unwrap();
                }
            }
            brute.push(s / (frames.len() - 1) as f64);
        }
        let worst = (0..brute.len()).min_by(|&a, &b| brute[a].total_cmp(&brute[b])).unwrap();
        assert_eq!(frames[worst].seq(), 1000);

        let picked = select_stable_frames(&frames, 5).unwrap();
        assert_eq!(picked.len(), 5);
        assert!(picked.iter().all(|f| f.seq() != 1000));
    }

    #[test]
    fn selection_clamps_and_skips_blank_frames() {
        let frames: Vec<Frame> = (0..3).map(|i| noise_frame(i, 4, 4).with_meta(0, i)).collect();
        assert_eq!(select_stable_frames(&frames, 10).unwrap().len(), 3);

        let mut with_blank = frames.clone();
        with_blank.push(Frame::constant(4, 4, 0.3).unwrap().with_meta(0, 3));
        let picked = select_stable_frames(&with_blank, 10).unwrap();
        assert_eq!(picked.len(), 3);

        let blanks = vec![Frame::constant(4, 4, 0.3).unwrap(); 2];
        assert!(matches!(
            select_stable_frames(&blanks, 1),
            Err(TemplateError::AllDegenerate)
        ));
        assert!(matches!(
            select_stable_frames(&frames, 0),
            Err(TemplateError::ZeroCount)
        ));
    }

    #[test]
    fn build_template_from_single_or_identical_frames() {
        let f = noise_frame(4, 6, 5).with_meta(3, 8);
        let t = build_template(std::slice::from_ref(&f), GestureLabel::Point, 10).unwrap();
        assert_eq!(t.image.pixels(), f.pixels());
        assert_eq!((t.n_frames, t.source_ids.clone()), (1, vec![8]));

        let copies: Vec<Frame> = (0..6).map(|i| f.clone().with_meta(0, i)).collect();
        let t = build_template(&copies, GestureLabel::Rest, 4).unwrap();
        assert_eq!(t.image.pixels(), f.pixels());
        assert_eq!(t.source_ids, vec![0, 1, 2, 3]);
    }

    fn store() -> TemplateStore {
        TemplateStore::new(
            GestureLabel::ALL
                .iter()
                .map(|&l| GestureTemplate {
                    label: l,
                    image: noise_frame(l.ordinal() as u64, 7, 5),
                    n_frames: 2,
                    source_ids: vec![l.ordinal() as u64, 10],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn store_requires_complete_homogeneous_set() {
        let s = store();
        let mut ts: Vec<GestureTemplate> = s.iter().cloned().collect();
        ts.pop();
        assert!(matches!(
            TemplateStore::new(ts.clone()),
            Err(TemplateError::MissingLabel(GestureLabel::Point))
        ));
        ts.push(ts[0].clone());
        assert!(matches!(
            TemplateStore::new(ts),
            Err(TemplateError::DuplicateLabel(GestureLabel::Rest))
        ));

        let mut ts: Vec<GestureTemplate> = s.iter().cloned().collect();
        ts[2].image = noise_frame(0, 5, 7);
        assert!(matches!(TemplateStore::new(ts), Err(TemplateError::DimMismatch { .. })));
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = store();
        s.save(dir.path()).unwrap();
        for l in GestureLabel::ALL {
            assert!(dir.path().join(format!("{}.pgm", l.name())).exists());
        }
        let back = TemplateStore::load(dir.path()).unwrap();
        for (a, b) in s.iter().zip(back.iter()) {
            assert_eq!(
                (a.label, a.n_frames, &a.source_ids),
                (b.label, b.n_frames, &b.source_ids)
            );
            for (x, y) in a.image.pixels().iter().zip(b.image.pixels()) {
                assert!((x - y).abs() <= 1.0 / 510.0 + 1e-15);
            }
        }
    }

    #[test]
    fn load_rejects_incomplete_or_inconsistent_manifest() {
        let dir = tempfile::tempdir().unwrap();
        store().save(dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let original: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();

        let mut missing = original.clone();
        missing["templates"]
            .as_array_mut()
            .unwrap()
            .retain(|e| e["label"] != "point");
        fs::write(&path, missing.to_string()).unwrap();
        assert!(matches!(
            TemplateStore::load(dir.path()),
            Err(TemplateError::MissingLabel(GestureLabel::Point))
        ));

        let mut dims = original.clone();
        dims["width"] = serde_json::json!(8);
        fs::write(&path, dims.to_string()).unwrap();
        assert!(matches!(
            TemplateStore::load(dir.path()),
            Err(TemplateError::Inconsistent { .. })
        ));

        let mut count = original;
        count["templates"][1]["n_frames"] = serde_json::json!(5);
        fs::write(&path, count.to_string()).unwrap();
        assert!(matches!(
            TemplateStore::load(dir.path()),
            Err(TemplateError::Inconsistent { .. })
        ));
    }
}
