//! 14-joint hand states, per-gesture pose presets, and joint-space interpolation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::templates::GestureLabel;

pub const N_JOINTS: usize = 14;

/// Frozen joint ordering shared by presets, messages and the console.
pub const JOINT_NAMES: [&str; N_JOINTS] = [
    "thumb_abduction",
    "thumb_mcp",
    "thumb_ip",
    "index_mcp",
    "index_pip",
    "middle_mcp",
    "middle_pip",
    "ring_mcp",
    "ring_pip",
    "little_mcp",
    "little_pip",
    "wrist_pronation",
    "wrist_flexion",
    "base_roll",
];

/// Shipped preset file.
pub const DEFAULT_POSES_JSON: &str = include_str!("../config/poses.json");

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("interpolation parameter {0} outside [0, 1]")]
    BadParameter(f64),
    #[error("duration and rate must be positive, got {duration_s} s at {rate_hz} Hz")]
    BadTiming { duration_s: f64, rate_hz: f64 },
    #[error("joint {index} ({name}) has min {min} >= max {max}")]
    BadLimit {
        index: usize,
        name: &'static str,
        min: f64,
        max: f64,
    },
    #[error("{section}: unknown joint {name:?}")]
    UnknownJoint { section: String, name: String },
    #[error("{section}: missing joint {name}")]
    MissingJoint { section: String, name: &'static str },
    #[error("{label} preset violates limits at joints {joints:?}")]
    PresetOutOfLimits { label: GestureLabel, joints: Vec<usize> },
    #[error("pose config: {0}")]
    Format(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Joint angles in radians, indexed by [`JOINT_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub angles: [f64; N_JOINTS],
}

impl JointState {
    pub fn new(angles: [f64; N_JOINTS]) -> Self {
        Self { angles }
    }

    pub fn zeros() -> Self {
        Self::new([0.0; N_JOINTS])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub min: [f64; N_JOINTS],
    pub max: [f64; N_JOINTS],
}

impl JointLimits {
    pub fn new(min: [f64; N_JOINTS], max: [f64; N_JOINTS]) -> Result<Self, KinematicsError> {
        for i in 0..N_JOINTS {
            if min[i].partial_cmp(&max[i]) != Some(std::cmp::Ordering::Less) {
                return Err(KinematicsError::BadLimit {
                    index: i,
                    name: JOINT_NAMES[i],
                    min: min[i],
                    max: max[i],
                });
            }
        }
        Ok(Self { min, max })
    }

    pub fn symmetric(bound: f64) -> Result<Self, KinematicsError> {
        Self::new([-bound; N_JOINTS], [bound; N_JOINTS])
    }
}

/// Indices of every joint outside its limits; empty means the state is valid.
pub fn validate_limits(state: &JointState, limits: &JointLimits) -> Vec<usize> {
    (0..N_JOINTS)
        .filter(|&i| {
            let a = state.angles[i];
            !(limits.min[i] <= a && a <= limits.max[i])
        })
        .collect()
}

/// Componentwise `from + t (to - from)`; the endpoints are returned exactly.
pub fn interpolate(from: &JointState, to: &JointState, t: f64) -> Result<JointState, KinematicsError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(KinematicsError::BadParameter(t));
    }
    if t == 0.0 {
        return Ok(*from);
    }
    if t == 1.0 {
        return Ok(*to);
    }
    let mut angles = [0.0; N_JOINTS];
    for (i, a) in angles.iter_mut().enumerate() {
        *a = from.angles[i] + t * (to.angles[i] - from.angles[i]);
    }
    Ok(JointState { angles })
}

/// `ceil(duration * rate) + 1` uniformly spaced samples from `from` to `to`,
/// as (offset in seconds, state).
pub fn trajectory(
    from: &JointState,
    to: &JointState,
    duration_s: f64,
    rate_hz: f64,
) -> Result<Vec<(f64, JointState)>, KinematicsError> {
    if !(duration_s > 0.0 && rate_hz > 0.0 && duration_s.is_finite() && rate_hz.is_finite()) {
        return Err(KinematicsError::BadTiming { duration_s, rate_hz });
    }
    // 0.6 * 50 must give 30 steps even if the product lands a hair above 30.
    let steps = ((duration_s * rate_hz) - 1e-9).ceil().max(1.0) as usize;
    let mut out = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let t = if i == steps { 1.0 } else { i as f64 / steps as f64 };
        out.push((t * duration_s, interpolate(from, to, t)?));
    }
    Ok(out)
}

/// One validated pose per gesture, plus the limits they were checked against.
#[derive(Debug, Clone, PartialEq)]
pub struct PosePreset {
    poses: [JointState; 4],
    limits: JointLimits,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    limits: BTreeMap<String, [f64; 2]>,
    rest: BTreeMap<String, f64>,
    power_grip: BTreeMap<String, f64>,
    wrist_pronation: BTreeMap<String, f64>,
    point: BTreeMap<String, f64>,
}

fn named<T: Copy>(section: &str, map: &BTreeMap<String, T>) -> Result<[T; N_JOINTS], KinematicsError> {
    if let Some(name) = map.keys().find(|k| !JOINT_NAMES.contains(&k.as_str())) {
        return Err(KinematicsError::UnknownJoint {
            section: section.to_string(),
            name: name.clone(),
        });
    }
    let mut out = Vec::with_capacity(N_JOINTS);
    for name in JOINT_NAMES {
        out.push(*map.get(name).ok_or(KinematicsError::MissingJoint {
            section: section.to_string(),
            name,
        })?);
    }
    Ok(out.try_into().ok().expect("fourteen joints"))
}

impl PosePreset {
    pub fn new(poses: [JointState; 4], limits: JointLimits) -> Result<Self, KinematicsError> {
        for label in GestureLabel::ALL {
            let bad = validate_limits(&poses[label.ordinal()], &limits);
            if !bad.is_empty() {
                return Err(KinematicsError::PresetOutOfLimits { label, joints: bad });
            }
        }
        Ok(Self { poses, limits })
    }

    /// Parses the JSON preset format: angles and limits in degrees, keyed by
    /// joint name.
    pub fn from_json(text: &str) -> Result<Self, KinematicsError> {
        let file: PoseFile = serde_json::from_str(text)?;
        let lim = named("limits", &file.limits)?;
        let limits = JointLimits::new(lim.map(|l| l[0].to_radians()), lim.map(|l| l[1].to_radians()))?;
        let state = |section: &str, map: &BTreeMap<String, f64>| -> Result<JointState, KinematicsError> {
            Ok(JointState::new(named(section, map)?.map(f64::to_radians)))
        };
        Self::new(
            [
                state("rest", &file.rest)?,
                state("power_grip", &file.power_grip)?,
                state("wrist_pronation", &file.wrist_pronation)?,
                state("point", &file.point)?,
            ],
            limits,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KinematicsError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn limits(&self) -> &JointLimits {
        &self.limits
    }

    pub fn pose_for(&self, label: GestureLabel) -> JointState {
        self.poses[label.ordinal()]
    }
}

impl Default for PosePreset {
    fn default() -> Self {
        Self::from_json(DEFAULT_POSES_JSON).expect("shipped pose config is valid")
    }
}

pub fn pose_for(label: GestureLabel, presets: &PosePreset) -> JointState {
    presets.pose_for(label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn default_presets_are_valid_and_distinct() {
        let p = PosePreset::default();
        for l in GestureLabel::ALL {
            assert!(validate_limits(&p.pose_for(l), p.limits()).is_empty());
            assert_eq!(pose_for(l, &p), pose_for(l, &p));
        }
        let rest = p.pose_for(GestureLabel::Rest);
        let grip = p.pose_for(GestureLabel::PowerGrip);
        let differing = (0..N_JOINTS).filter(|&i| rest.angles[i] != grip.angles[i]).count();
        assert!(differing >= 8, "{differing}");
        assert!((p.pose_for(GestureLabel::WristPronation).angles[11] - 80f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn config_errors() {
        let mut v: serde_json::Value = serde_json::from_str(DEFAULT_POSES_JSON).unwrap();
        v["point"].as_object_mut().unwrap().remove("base_roll");
        assert!(matches!(
            PosePreset::from_json(&v.to_string()),
            Err(KinematicsError::MissingJoint { .. })
        ));

        let mut v: serde_json::Value = serde_json::from_str(DEFAULT_POSES_JSON).unwrap();
        v["rest"]["pinky_dip"] = 3.into();
        assert!(matches!(
            PosePreset::from_json(&v.to_string()),
            Err(KinematicsError::UnknownJoint { .. })
        ));

        let mut v: serde_json::Value = serde_json::from_str(DEFAULT_POSES_JSON).unwrap();
        v["power_grip"]["index_pip"] = 150.into();
        assert!(matches!(
            PosePreset::from_json(&v.to_string()),
            Err(KinematicsError::PresetOutOfLimits {
                label: GestureLabel::PowerGrip,
                ..
            })
        ));

        let mut v: serde_json::Value = serde_json::from_str(DEFAULT_POSES_JSON).unwrap();
        v["limits"]["base_roll"] = serde_json::json!([10, 10]);
        assert!(matches!(
            PosePreset::from_json(&v.to_string()),
            Err(KinematicsError::BadLimit { index: 13, .. })
        ));
    }

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let a = JointState::zeros();
        let b = JointState::new([1.0; N_JOINTS]);
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), b);
        assert_eq!(interpolate(&a, &b, 0.5).unwrap(), JointState::new([0.5; N_JOINTS]));
        assert!(matches!(
            interpolate(&a, &b, 1.01),
            Err(KinematicsError::BadParameter(_))
        ));
        assert!(interpolate(&a, &b, f64::NAN).is_err());
    }

    #[test]
    fn trajectory_counts_and_endpoints() {
        let p = PosePreset::default();
        let from = p.pose_for(GestureLabel::Rest);
        let to = p.pose_for(GestureLabel::PowerGrip);
        let traj = trajectory(&from, &to, 0.6, 50.0).unwrap();
        assert_eq!(traj.len(), 31);
        assert_eq!(traj[0].1, from);
        assert_eq!(traj[30].1, to);
        assert_eq!(traj[30].0, 0.6);
        for w in traj.windows(2) {
            assert!(w[1].0 > w[0].0);
            for j in 0..N_JOINTS {
                assert!(w[1].1.angles[j] >= w[0].1.angles[j]);
            }
        }
        assert_eq!(trajectory(&from, &to, 0.61, 50.0).unwrap().len(), 32);

        let same = trajectory(&from, &from, 1.0, 10.0).unwrap();
        assert!(same.iter().all(|(_, s)| *s == from));

        assert!(trajectory(&from, &to, 0.0, 50.0).is_err());
        assert!(trajectory(&from, &to, 0.5, -1.0).is_err());
    }

    #[test]
    fn limit_checks() {
        let lim = JointLimits::symmetric(PI).unwrap();
        assert!(validate_limits(&JointState::zeros(), &lim).is_empty());
        let mut s = JointState::zeros();
        s.angles[5] = PI + 0.01;
        assert_eq!(validate_limits(&s, &lim), vec![5]);
        s.angles[5] = f64::NAN;
        assert_eq!(validate_limits(&s, &lim), vec![5]);
    }
}
