//! Reference implementations and fixtures shared by the integration tests.
//!
//! The oracles here are written independently of the library: plain indexed
//! loops, full sorts, no precomputation.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use sonopipe::classifier::{KnnModel, LabeledSample};
use sonopipe::frame::Frame;
use sonopipe::pipeline::train::train;
use sonopipe::synth::{Phantom, PhantomSpec};
use sonopipe::templates::{GestureLabel, TemplateStore};

/// Two-pass sample correlation. `None` when either input has no spread.
pub fn oracle_pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mut ma = 0.0;
    let mut mb = 0.0;
    for i in 0..a.len() {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        let da = a[i] - ma;
        let db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Exhaustive kNN: sort every sample by (distance, index), take `k`, vote.
/// Tied votes go to the class with the closest selected member, then the
/// lowest ordinal.
pub fn oracle_knn(samples: &[([f64; 4], usize)], k: usize, q: &[f64; 4]) -> usize {
    let mut all: Vec<(f64, usize)> = samples
        .iter()
        .enumerate()
        .map(|(i, (x, _))| {
            let mut s = 0.0;
            for j in 0..4 {
                s += (x[j] - q[j]) * (x[j] - q[j]);
            }
            (s.sqrt(), i)
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let chosen = &all[..k.min(all.len())];
    let mut votes = [0usize; 4];
    let mut closest = [f64::MAX; 4];
    for &(d, i) in chosen {
        let c = samples[i].1;
        votes[c] += 1;
        if d < closest[c] {
            closest[c] = d;
        }
    }
    let top = *votes.iter().max().unwrap();
    let mut winner = None;
    for c in 0..4 {
        if votes[c] != top {
            continue;
        }
        winner = match winner {
            None => Some(c),
            Some(w) if closest[c] < closest[w] => Some(c),
            keep => keep,
        };
    }
    winner.unwrap()
}

pub fn random_frame(rng: &mut impl Rng, w: usize, h: usize) -> Frame {
    Frame::new(w, h, (0..w * h).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

pub fn to_samples(raw: &[([f64; 4], usize)]) -> Vec<LabeledSample> {
    raw.iter()
        .map(|(f, c)| LabeledSample::new(*f, GestureLabel::from_ordinal(*c).unwrap()))
        .collect()
}

pub fn square_spec(seed: u64, size: usize, sigma: f64) -> PhantomSpec {
    PhantomSpec {
        seed,
        width: size,
        height: size,
        noise_sigma: sigma,
        ..PhantomSpec::default()
    }
}

/// Phantom dataset frames after the 8-bit round trip a PGM file imposes.
pub fn quantized_dataset(spec: PhantomSpec, per_class: usize) -> Vec<(GestureLabel, Frame)> {
    Phantom::new(spec)
        .unwrap()
        .dataset_frames(per_class)
        .unwrap()
        .into_iter()
        .map(|(l, f)| {
            let q = Frame::from_u8(f.width(), f.height(), &f.to_u8()).unwrap();
            (l, q.with_meta(f.timestamp_us(), f.seq()))
        })
        .collect()
}

/// Templates and model trained on a phantom dataset.
pub fn trained(spec: PhantomSpec, per_class: usize, per_template: usize, k: usize) -> (TemplateStore, KnnModel) {
    let outcome = train(&quantized_dataset(spec, per_class), per_template, k, "test").unwrap();
    (outcome.store, outcome.model)
}

const LATTICE: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

fn knn_point(rng: &mut impl Rng, lattice: bool) -> [f64; 4] {
    if lattice {
        [0; 4].map(|_| *LATTICE.choose(rng).unwrap())
    } else {
        [0; 4].map(|_| rng.gen_range(-1.0..=1.0))
    }
}

pub struct KnnInstance {
    pub samples: Vec<([f64; 4], usize)>,
    pub k: usize,
    pub query: [f64; 4],
}

/// Random kNN problem. Half of them live on a coarse lattice and a fifth of
/// the samples repeat an earlier point under another label, so distance and
/// vote ties are common.
pub fn knn_instance(rng: &mut impl Rng) -> KnnInstance {
    let k = *[1usize, 3, 5].choose(rng).unwrap();
    let n = rng.gen_range(k..=100);
    let lattice = rng.gen_bool(0.5);
    let n_classes = rng.gen_range(2..=4);
    let mut samples: Vec<([f64; 4], usize)> = Vec::with_capacity(n);
    for _ in 0..n {
        let x = if !samples.is_empty() && rng.gen_bool(0.2) {
            samples[rng.gen_range(0..samples.len())].0
        } else {
            knn_point(rng, lattice)
        };
        samples.push((x, rng.gen_range(0..n_classes)));
    }
    let query = match rng.gen_range(0..3) {
        0 => samples[rng.gen_range(0..n)].0,
        1 => knn_point(rng, true),
        _ => knn_point(rng, false),
    };
    KnnInstance { samples, k, query }
}
