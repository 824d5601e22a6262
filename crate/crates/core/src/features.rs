//! Pixel-wise Pearson correlation against the gesture templates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::Frame;
use crate::templates::{GestureLabel, TemplateStore};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("frame dims {a:?} and {b:?} differ")]
    DimMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("image has zero pixel variance")]
    ZeroVariance,
}

/// Correlation of one frame with each template, indexed by gesture ordinal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationVector {
    pub r: [f64; 4],
    pub frame_seq: u64,
    pub timestamp_us: u64,
}

impl CorrelationVector {
    pub fn get(&self, label: GestureLabel) -> f64 {
        self.r[label.ordinal()]
    }
}

fn mean(p: &[f64]) -> f64 {
    p.iter().sum::<f64>() / p.len() as f64
}

fn is_constant(p: &[f64]) -> bool {
    p.iter().all(|&v| v == p[0])
}

/// Pearson correlation over corresponding pixels, in `[-1, 1]`.
///
/// Means first, then centered moments. The value is taken as
/// `±(1 - |x̂ ∓ ŷ|² / 2)` over the unit-normalized centered images, which
/// equals the moment ratio but lands exactly on 1 for an image against
/// itself and exactly on -1 for an image against its negative. Constant
/// images are an error, not `r = 0`.
pub fn pearson(a: &Frame, b: &Frame) -> Result<f64, FeatureError> {
    if a.dims() != b.dims() {
        return Err(FeatureError::DimMismatch {
            a: a.dims(),
            b: b.dims(),
        });
    }
    let (x, y) = (a.pixels(), b.pixels());
    if is_constant(x) || is_constant(y) {
        return Err(FeatureError::ZeroVariance);
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(FeatureError::ZeroVariance);
    }
    let (nx, ny) = (sxx.sqrt(), syy.sqrt());
    let sign = if sxy < 0.0 { -1.0 } else { 1.0 };
    let mut gap = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let d = (xi - mx) / nx - sign * ((yi - my) / ny);
        gap += d * d;
    }
    Ok((sign * (1.0 - 0.5 * gap)).clamp(-1.0, 1.0))
}

/// Templates with their means and centered energies precomputed, so each live
/// frame costs one mean pass plus one fused pass per template.
#[derive(Debug, Clone)]
pub struct PreparedTemplates {
    dims: (usize, usize),
    centered: [Vec<f64>; 4],
    energy: [f64; 4],
}

impl PreparedTemplates {
    pub fn new(store: &TemplateStore) -> Result<Self, FeatureError> {
        let mut centered: [Vec<f64>; 4] = Default::default();
        let mut energy = [0.0; 4];
        for t in store.iter() {
            let p = t.image.pixels();
            if is_constant(p) {
                return Err(FeatureError::ZeroVariance);
            }
            let m = mean(p);
            let c: Vec<f64> = p.iter().map(|v| v - m).collect();
            energy[t.label.ordinal()] = c.iter().map(|v| v * v).sum();
            centered[t.label.ordinal()] = c;
        }
        Ok(Self {
            dims: store.dims(),
            centered,
            energy,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn extract(&self, frame: &Frame) -> Result<CorrelationVector, FeatureError> {
        if frame.dims() != self.dims {
            return Err(FeatureError::DimMismatch {
                a: frame.dims(),
                b: self.dims,
            });
        }
        let x = frame.pixels();
        if is_constant(x) {
            return Err(FeatureError::ZeroVariance);
        }
        let mx = mean(x);
        let mut sxx = 0.0;
        let mut sxy = [0.0; 4];
        let [t0, t1, t2, t3] = &self.centered;
        for i in 0..x.len() {
            let dx = x[i] - mx;
            sxx += dx * dx;
            sxy[0] += dx * t0[i];
            sxy[1] += dx * t1[i];
            sxy[2] += dx * t2[i];
            sxy[3] += dx * t3[i];
        }
        if sxx == 0.0 {
            return Err(FeatureError::ZeroVariance);
        }
        let mut r = [0.0; 4];
        for k in 0..4 {
            r[k] = (sxy[k] / (sxx * self.energy[k]).sqrt()).clamp(-1.0, 1.0);
        }
        Ok(CorrelationVector {
            r,
            frame_seq: frame.seq(),
            timestamp_us: frame.timestamp_us(),
        })
    }
}

/// `r[ordinal(L)] = pearson(frame, template(L))` for all four gestures.
pub fn extract_features(frame: &Frame, store: &TemplateStore) -> Result<CorrelationVector, FeatureError> {
    let mut r = [0.0; 4];
    for t in store.iter() {
        r[t.label.ordinal()] = pearson(frame, &t.image)?;
    }
    Ok(CorrelationVector {
        r,
        frame_seq: frame.seq(),
        timestamp_us: frame.timestamp_us(),
    })
}

/// Highest-correlation gesture; ties go to the lowest ordinal.
pub fn argmax_classify(v: &CorrelationVector) -> (GestureLabel, f64) {
    let mut best = 0;
    for k in 1..4 {
        if v.r[k] > v.r[best] {
            best = k;
        }
    }
    (GestureLabel::ALL[best], v.r[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::GestureTemplate;

    fn noise(seed: u64, w: usize, h: usize) -> Frame {
        let rng = crate::rng::CounterRng::new(seed, 5, 5);
        Frame::new(w, h, (0..w * h).map(|i| rng.uniform_at(i as u64)).collect()).unwrap()
    }

    fn cv(r: [f64; 4]) -> CorrelationVector {
        CorrelationVector {
            r,
            frame_seq: 0,
            timestamp_us: 0,
        }
    }

    #[test]
    fn self_and_anti_correlation() {
        let f = noise(1, 9, 7);
        assert_eq!(pearson(&f, &f).unwrap(), 1.0);
        let inv = Frame::new(9, 7, f.pixels().iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!((pearson(&f, &inv).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_hand_example() {
        let a = Frame::new(2, 2, vec![0.1, 0.4, 0.5, 0.8]).unwrap();
        let b = Frame::new(2, 2, vec![0.2, 0.3, 0.6, 0.7]).unwrap();
        // means 0.45 and 0.45; deviations (-.35,-.05,.05,.35) and (-.25,-.15,.15,.25)
        let sxy = 0.35 * 0.25 + 0.05 * 0.15 + 0.05 * 0.15 + 0.35 * 0.25;
        let sxx = 2.0 * (0.35f64 * 0.35 + 0.05 * 0.05);
        let syy = 2.0 * (0.25f64 * 0.25 + 0.15 * 0.15);
        let expected = sxy / (sxx * syy).sqrt();
        assert!((pearson(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert_eq!(pearson(&a, &b).unwrap(), pearson(&b, &a).unwrap());
    }

    #[test]
    fn degenerate_inputs() {
        let f = noise(2, 4, 4);
        let c = Frame::constant(4, 4, 0.1).unwrap();
        assert_eq!(pearson(&f, &c), Err(FeatureError::ZeroVariance));
        assert_eq!(pearson(&c, &f), Err(FeatureError::ZeroVariance));
        assert!(matches!(
            pearson(&f, &noise(2, 2, 8)),
            Err(FeatureError::DimMismatch { .. })
        ));
    }

    fn store(w: usize, h: usize) -> TemplateStore {
        TemplateStore::new(
            GestureLabel::ALL
                .iter()
                .map(|&l| GestureTemplate {
                    label: l,
                    image: noise(10 + l.ordinal() as u64, w, h),
                    n_frames: 1,
                    source_ids: vec![0],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn features_of_a_template_hit_its_own_slot() {
        let s = store(12, 10);
        let f = s.get(GestureLabel::PowerGrip).image.clone().with_meta(42, 7);
        let v = extract_features(&f, &s).unwrap();
        assert_eq!(v.get(GestureLabel::PowerGrip), 1.0);
        assert_eq!((v.frame_seq, v.timestamp_us), (7, 42));
        assert_eq!(argmax_classify(&v).0, GestureLabel::PowerGrip);

        let c = Frame::constant(12, 10, 0.4).unwrap();
        assert_eq!(extract_features(&c, &s), Err(FeatureError::ZeroVariance));
        assert!(matches!(
            extract_features(&noise(1, 10, 12), &s),
            Err(FeatureError::DimMismatch { .. })
        ));
    }

    #[test]
    fn prepared_path_agrees_with_direct_path() {
        let s = store(20, 16);
        let prepared = PreparedTemplates::new(&s).unwrap();
        for seed in 0..20 {
            let f = noise(100 + seed, 20, 16);
            let a = extract_features(&f, &s).unwrap();
            let b = prepared.extract(&f).unwrap();
            for k in 0..4 {
                assert!((a.r[k] - b.r[k]).abs() < 1e-12);
            }
        }
        assert_eq!(
            prepared.extract(&Frame::constant(20, 16, 0.5).unwrap()),
            Err(FeatureError::ZeroVariance)
        );
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(
            argmax_classify(&cv([0.2, 0.9, 0.1, 0.3])),
            (GestureLabel::PowerGrip, 0.9)
        );
        assert_eq!(argmax_classify(&cv([0.5, 0.5, 0.1, 0.2])), (GestureLabel::Rest, 0.5));
        assert_eq!(
            argmax_classify(&cv([-0.9, -0.8, -0.95, -0.99])),
            (GestureLabel::PowerGrip, -0.8)
        );
        assert_eq!(
            argmax_classify(&cv([0.1, 0.1, 0.7, 0.7])),
            (GestureLabel::WristPronation, 0.7)
        );
    }
}
