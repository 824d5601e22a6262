//! Seeded speckle phantom standing in for forearm ultrasound.
//!
//! The base image is a stack of horizontal tissue bands with wavy,
//! echogenic boundaries, multiplied by exponential speckle and min-max
//! normalized. A gesture warps the image vertically: each band gets its own
//! shift and compression, blended smoothly between band centres, and the
//! warp is scaled by a phase in `[0, 1]`. Rest is the identity warp.
//! Additive Gaussian noise is drawn fresh per frame.
//!
//! Every random value comes from [`CounterRng`] keyed by `(seed, domain,
//! draw)`, so output is a pure function of its arguments.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{load_pgm, save_pgm, Frame, FrameError};
use crate::rng::CounterRng;
use crate::templates::GestureLabel;

const DOMAIN_GEOMETRY: u64 = 1;
const DOMAIN_SPECKLE: u64 = 2;
const DOMAIN_NOISE: u64 = 3;

pub const MIN_DIM: usize = 32;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("phantom must be at least {MIN_DIM}x{MIN_DIM}, got {0}x{1}")]
    TooSmall(usize, usize),
    #[error("invalid phantom parameter: {0}")]
    BadParameter(&'static str),
    #[error("phase {0} outside [0, 1]")]
    BadPhase(f64),
    #[error("base image is {got:?}, spec says {expected:?}")]
    BaseMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("per_class must be at least 1")]
    EmptyDataset,
    #[error("dataset manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Simulated muscle compartments.
    pub n_bands: usize,
    pub speckle_strength: f64,
    /// Additive Gaussian noise, in normalized pixel units.
    pub noise_sigma: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            width: 480,
            height: 480,
            n_bands: 4,
            speckle_strength: 0.6,
            noise_sigma: 0.02,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.width < MIN_DIM || self.height < MIN_DIM {
            return Err(SynthError::TooSmall(self.width, self.height));
        }
        if self.n_bands == 0 {
            return Err(SynthError::BadParameter("n_bands must be positive"));
        }
        if !(self.speckle_strength >= 0.0 && self.speckle_strength.is_finite()) {
            return Err(SynthError::BadParameter("speckle_strength must be finite and >= 0"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SynthError::BadParameter("noise_sigma must be finite and >= 0"));
        }
        Ok(())
    }

    fn band_height(&self) -> f64 {
        self.height as f64 / self.n_bands as f64
    }

    fn band_center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.band_height()
    }
}

/// Per-band shift (fraction of band height) and compression for each
/// gesture, indexed by band modulo 4. Point is deliberately a weaker
/// version of the power-grip warp on the same compartments.
const DEFORMATION_TABLE: [[(f64, f64); 4]; 4] = [
    // rest
    [(0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0)],
    // power grip
    [(0.012, 1.0), (0.0216, 0.988), (0.0144, 0.9904), (0.0, 1.0)],
    // wrist pronation
    [(-0.0144, 1.0), (-0.0072, 1.0), (0.006, 1.0048), (0.018, 1.0)],
    // point
    [(0.0072, 1.0), (0.0144, 0.9928), (0.0, 1.0), (0.0, 1.0)],
];

/// Per-band vertical shift (pixels) and compression factor for one gesture.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureDeformation {
    pub shifts: Vec<f64>,
    pub compressions: Vec<f64>,
}

impl GestureDeformation {
    pub fn for_label(label: GestureLabel, spec: &PhantomSpec) -> Self {
        let row = &DEFORMATION_TABLE[label.ordinal()];
        let bh = spec.band_height();
        let (shifts, compressions) = (0..spec.n_bands).map(|k| (row[k % 4].0 * bh, row[k % 4].1)).unzip();
        Self { shifts, compressions }
    }

    pub fn is_identity(&self) -> bool {
        self.shifts.iter().all(|&s| s == 0.0) && self.compressions.iter().all(|&c| c == 1.0)
    }

    /// Vertical displacement at row `y`: band-local affine maps blended with
    /// Gaussian weights centred on each band.
    fn displacement(&self, y: f64, spec: &PhantomSpec) -> f64 {
        let sigma = 0.5 * spec.band_height();
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..spec.n_bands {
            let c = spec.band_center(k);
            let w = (-0.5 * ((y - c) / sigma).powi(2)).exp();
            let local = self.shifts[k] + (1.0 - 1.0 / self.compressions[k]) * (y - c);
            num += w * local;
            den += w;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

struct Boundary {
    base: f64,
    amplitude: f64,
    cycles: f64,
    phase: f64,
}

impl Boundary {
    fn at(&self, x: f64, width: f64) -> f64 {
        self.base + self.amplitude * (std::f64::consts::TAU * self.cycles * x / width + self.phase).sin()
    }
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Speckled band phantom for `spec`; bit-identical for identical specs.
pub fn make_phantom(spec: &PhantomSpec) -> Result<Frame, SynthError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let geo = CounterRng::new(spec.seed, DOMAIN_GEOMETRY, 0);
    let bh = spec.band_height();
    let levels: Vec<f64> = (0..spec.n_bands)
        .map(|k| 0.2 + 0.6 * geo.uniform_at(k as u64))
        .collect();
    let boundaries: Vec<Boundary> = (1..spec.n_bands)
        .map(|k| {
            let c = 100 + 4 * k as u64;
            Boundary {
                base: k as f64 * bh,
                amplitude: bh * (0.06 + 0.10 * geo.uniform_at(c)),
                cycles: 1.0 + 2.0 * geo.uniform_at(c + 1),
                phase: std::f64::consts::TAU * geo.uniform_at(c + 2),
            }
        })
        .collect();

    const SOFTNESS: f64 = 1.5;
    const FASCIA: f64 = 0.5;
    let speckle = CounterRng::new(spec.seed, DOMAIN_SPECKLE, 0);
    let s = spec.speckle_strength;
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        let yf = y as f64;
        for x in 0..w {
            let mut v = levels[0];
            for (k, b) in boundaries.iter().enumerate() {
                let t = (yf - b.at(x as f64, w as f64)) / SOFTNESS;
                v += (levels[k + 1] - levels[k]) * sigmoid(t);
                v += FASCIA * (-t * t).exp();
            }
            if s > 0.0 {
                let e = speckle.exponential_at((y * w + x) as u64);
                v *= (1.0 + s * (e - 1.0)).max(0.0);
            }
            pixels.push(v);
        }
    }
    let lo = pixels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span > 0.0 {
        for p in &mut pixels {
            *p = ((*p - lo) / span).clamp(0.0, 1.0);
        }
    }
    Ok(Frame::new(w, h, pixels)?)
}

/// Source row and interpolation weight for every output row.
fn row_map(label: GestureLabel, phase: f64, spec: &PhantomSpec) -> Vec<(usize, usize, f64)> {
    let deform = GestureDeformation::for_label(label, spec);
    let last = spec.height - 1;
    (0..spec.height)
        .map(|y| {
            if phase == 0.0 || deform.is_identity() {
                return (y, y, 0.0);
            }
            let src = (y as f64 - phase * deform.displacement(y as f64, spec)).clamp(0.0, last as f64);
            let y0 = (src.floor() as usize).min(last);
            let y1 = (y0 + 1).min(last);
            (y0, y1, src - y0 as f64)
        })
        .collect()
}

fn check_inputs(base: &Frame, phase: f64, spec: &PhantomSpec) -> Result<(), SynthError> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&phase) {
        return Err(SynthError::BadPhase(phase));
    }
    if base.dims() != (spec.width, spec.height) {
        return Err(SynthError::BaseMismatch {
            expected: (spec.width, spec.height),
            got: base.dims(),
        });
    }
    Ok(())
}

/// Noise-free warp of `base` toward `label`'s configuration.
pub fn render_clean(base: &Frame, label: GestureLabel, phase: f64, spec: &PhantomSpec) -> Result<Frame, SynthError> {
    check_inputs(base, phase, spec)?;
    let w = spec.width;
    let src = base.pixels();
    let mut pixels = Vec::with_capacity(src.len());
    for (y0, y1, f) in row_map(label, phase, spec) {
        let r0 = &src[y0 * w..(y0 + 1) * w];
        if f == 0.0 {
            pixels.extend_from_slice(r0);
        } else {
            let r1 = &src[y1 * w..(y1 + 1) * w];
            pixels.extend(r0.iter().zip(r1).map(|(a, b)| (a + (b - a) * f).clamp(0.0, 1.0)));
        }
    }
    Ok(Frame::new(w, spec.height, pixels)?)
}

/// Adds `noise_sigma` Gaussian noise keyed by `draw`, clamped to `[0, 1]`.
pub fn add_noise(clean: &Frame, spec: &PhantomSpec, draw: u64) -> Result<Frame, SynthError> {
    if spec.noise_sigma == 0.0 {
        return Ok(clean.clone());
    }
    let mut noise = vec![0.0; clean.pixels().len()];
    CounterRng::new(spec.seed, DOMAIN_NOISE, draw).fill_normal(&mut noise);
    let sigma = spec.noise_sigma;
    let pixels = clean
        .pixels()
        .iter()
        .zip(&noise)
        .map(|(p, z)| (p + sigma * z).clamp(0.0, 1.0))
        .collect();
    Ok(Frame::new(clean.width(), clean.height(), pixels)?)
}

/// Warped and noisy gesture frame; `draw` selects the noise realization.
pub fn render_gesture(
    base: &Frame,
    label: GestureLabel,
    phase: f64,
    spec: &PhantomSpec,
    draw: u64,
) -> Result<Frame, SynthError> {
    add_noise(&render_clean(base, label, phase, spec)?, spec, draw)
}

/// A spec with its base image computed once.
#[derive(Debug, Clone)]
pub struct Phantom {
    spec: PhantomSpec,
    base: Frame,
}

impl Phantom {
    pub fn new(spec: PhantomSpec) -> Result<Self, SynthError> {
        Ok(Self {
            base: make_phantom(&spec)?,
            spec,
        })
    }

    pub fn spec(&self) -> &PhantomSpec {
        &self.spec
    }

    pub fn base(&self) -> &Frame {
        &self.base
    }

    pub fn render_clean(&self, label: GestureLabel, phase: f64) -> Result<Frame, SynthError> {
        render_clean(&self.base, label, phase, &self.spec)
    }

    pub fn add_noise(&self, clean: &Frame, draw: u64) -> Result<Frame, SynthError> {
        add_noise(clean, &self.spec, draw)
    }

    pub fn render(&self, label: GestureLabel, phase: f64, draw: u64) -> Result<Frame, SynthError> {
        render_gesture(&self.base, label, phase, &self.spec, draw)
    }

    /// `per_class` full-phase frames per gesture, grouped by label in ordinal
    /// order. Frame `i` of label `L` uses noise draw `ordinal(L) * per_class + i`
    /// and carries that number as its seq.
    pub fn dataset_frames(&self, per_class: usize) -> Result<Vec<(GestureLabel, Frame)>, SynthError> {
        if per_class == 0 {
            return Err(SynthError::EmptyDataset);
        }
        let mut out = Vec::with_capacity(4 * per_class);
        for label in GestureLabel::ALL {
            let clean = self.render_clean(label, 1.0)?;
            for i in 0..per_class {
                let draw = (label.ordinal() * per_class + i) as u64;
                out.push((label, self.add_noise(&clean, draw)?.with_meta(0, draw)));
            }
        }
        Ok(out)
    }
}

pub const DATASET_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub file: String,
    pub label: GestureLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: Option<PhantomSpec>,
    pub per_class: Option<usize>,
    pub entries: Vec<DatasetEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Loads every listed frame relative to `dir`; seq is the entry index.
    pub fn load_frames(&self, dir: impl AsRef<Path>) -> Result<Vec<(GestureLabel, Frame)>, SynthError> {
        let dir = dir.as_ref();
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| Ok((e.label, load_pgm(dir.join(&e.file))?.with_meta(0, i as u64))))
            .collect()
    }
}

/// Loads a dataset given either its directory or its manifest path.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<(GestureLabel, Frame)>, SynthError> {
    let path = path.as_ref();
    let (dir, manifest): (PathBuf, PathBuf) = if path.is_dir() {
        (path.to_path_buf(), path.join(DATASET_MANIFEST))
    } else {
        (
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
            path.to_path_buf(),
        )
    };
    DatasetManifest::load(manifest)?.load_frames(dir)
}

/// Writes `per_class` PGM frames per gesture plus `manifest.json` to `out_dir`.
pub fn generate_dataset(
    spec: &PhantomSpec,
    per_class: usize,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest, SynthError> {
    let out_dir = out_dir.as_ref();
    let frames = Phantom::new(*spec)?.dataset_frames(per_class)?;
    fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(frames.len());
    for (n, (label, frame)) in frames.iter().enumerate() {
        let file = format!("{:04}_{}.pgm", n, label.name());
        save_pgm(frame, out_dir.join(&file))?;
        entries.push(DatasetEntry { file, label: *label });
    }
    let manifest = DatasetManifest {
        spec: Some(*spec),
        per_class: Some(per_class),
        entries,
    };
    fs::write(
        out_dir.join(DATASET_MANIFEST),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}
