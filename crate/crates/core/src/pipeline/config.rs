use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::frame::Roi;
use crate::synth::PhantomSpec;
use crate::templates::GestureLabel;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("bad --source value {0:?}: expected synthetic[:gesture=frames,...], dir:<path> or tcp:<addr>")]
    Source(String),
}

/// One step of a scripted synthetic session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub gesture: GestureLabel,
    pub frames: usize,
}

/// Where frames come from during `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    /// Phantom frames. Without a script the gesture follows the command socket.
    Synthetic {
        #[serde(default)]
        script: Option<Vec<Segment>>,
        /// Frames per second; 0 renders as fast as possible.
        #[serde(default = "default_rate")]
        rate_hz: f64,
        /// Seconds for a new gesture to reach full deformation. Defaults to
        /// 0 for scripts and 0.5 when driven.
        #[serde(default)]
        ramp_s: Option<f64>,
    },
    /// Sorted `*.pgm` files from a directory.
    Directory {
        path: PathBuf,
        #[serde(default = "default_rate")]
        rate_hz: f64,
    },
    /// Binary frame stream from a single TCP client.
    Tcp { bind: String },
}

fn default_rate() -> f64 {
    30.0
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig::Synthetic {
            script: None,
            rate_hz: default_rate(),
            ramp_s: None,
        }
    }
}

impl SourceConfig {
    pub fn is_driven(&self) -> bool {
        matches!(self, SourceConfig::Synthetic { script: None, .. })
    }
}

impl FromStr for SourceConfig {
    type Err = ConfigError;

    /// `synthetic`, `synthetic:rest=50,power_grip=50`, `dir:<path>`, `tcp:<addr>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConfigError::Source(s.to_string());
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        match (kind, arg) {
            ("synthetic", None) => Ok(SourceConfig::default()),
            ("synthetic", Some(script)) => {
                let mut segments = Vec::new();
                for part in script.split(',').filter(|p| !p.is_empty()) {
                    let (g, n) = part.split_once('=').ok_or_else(bad)?;
                    segments.push(Segment {
                        gesture: g.trim().parse().map_err(|_| bad())?,
                        frames: n.trim().parse().map_err(|_| bad())?,
                    });
                }
                if segments.is_empty() {
                    return Err(bad());
                }
                Ok(SourceConfig::Synthetic {
                    script: Some(segments),
                    rate_hz: default_rate(),
                    ramp_s: None,
                })
            }
            ("dir", Some(path)) if !path.is_empty() => Ok(SourceConfig::Directory {
                path: path.into(),
                rate_hz: default_rate(),
            }),
            ("tcp", Some(addr)) if !addr.is_empty() => Ok(SourceConfig::Tcp { bind: addr.into() }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for SourceConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceConfig::Synthetic { script: None, .. } => write!(f, "synthetic (driven)"),
            SourceConfig::Synthetic { script: Some(s), .. } => {
                write!(f, "synthetic:")?;
                for (i, seg) in s.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{}={}", seg.gesture, seg.frames)?;
                }
                Ok(())
            }
            SourceConfig::Directory { path, .. } => write!(f, "dir:{}", path.display()),
            SourceConfig::Tcp { bind } => write!(f, "tcp:{bind}"),
        }
    }
}

/// Everything the four commands need. Every field has a default, so an empty
/// JSON object is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub source: SourceConfig,
    /// Crop applied before resizing; `None` uses the whole frame.
    pub roi: Option<Roi>,
    pub width: usize,
    pub height: usize,
    pub template_dir: PathBuf,
    pub model_path: PathBuf,
    /// Pose presets; `None` uses the built-in table.
    pub poses_path: Option<PathBuf>,
    /// Training or evaluation data: a dataset directory or its manifest.
    /// `None` generates one from `synth`.
    pub dataset: Option<PathBuf>,
    pub synth: PhantomSpec,
    pub per_class: usize,
    pub templates_per_gesture: usize,
    pub k: usize,
    pub folds: usize,
    pub seed: u64,
    /// Debounce window; 1 publishes raw predictions.
    pub debounce: usize,
    pub transition_s: f64,
    pub bind_host: String,
    /// `None` disables the listener; `Some(0)` picks a free port.
    pub tcp_port: Option<u16>,
    pub ws_port: Option<u16>,
    pub command_port: u16,
    pub allow_commands: bool,
    pub queue_capacity: usize,
    pub subscriber_capacity: usize,
    pub max_frames: Option<u64>,
    pub metrics_out: Option<PathBuf>,
    /// Directory for evaluation reports.
    pub eval_out: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            source: SourceConfig::default(),
            roi: None,
            width: 480,
            height: 480,
            template_dir: "artifacts/templates".into(),
            model_path: "artifacts/model.json".into(),
            poses_path: None,
            dataset: None,
            synth: PhantomSpec::default(),
            per_class: 20,
            templates_per_gesture: 10,
            k: 3,
            folds: 5,
            seed: 42,
            debounce: 5,
            transition_s: 0.6,
            bind_host: "127.0.0.1".into(),
            tcp_port: Some(7071),
            ws_port: Some(7072),
            command_port: 7073,
            allow_commands: false,
            queue_capacity: 4,
            subscriber_capacity: 64,
            max_frames: None,
            metrics_out: None,
            eval_out: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.into(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.into(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        if self.width == 0 || self.height == 0 {
            return fail(format!("frame size {}x{} is empty", self.width, self.height));
        }
        if self.debounce == 0 {
            return fail("debounce window must be at least 1".into());
        }
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if self.folds < 2 {
            return fail(format!("need at least 2 folds, got {}", self.folds));
        }
        if self.templates_per_gesture == 0 || self.per_class == 0 {
            return fail("templates_per_gesture and per_class must be positive".into());
        }
        if !(self.transition_s.is_finite() && self.transition_s > 0.0) {
            return fail(format!("transition_s must be positive, got {}", self.transition_s));
        }
        if self.queue_capacity == 0 || self.subscriber_capacity == 0 {
            return fail("queue capacities must be positive".into());
        }
        if let Some(roi) = &self.roi {
            if roi.w == 0 || roi.h == 0 {
                return fail("roi must be non-empty".into());
            }
        }
        match &self.source {
            SourceConfig::Synthetic {
                script,
                rate_hz,
                ramp_s,
            } => {
                if !(rate_hz.is_finite() && *rate_hz >= 0.0) {
                    return fail(format!("source rate {rate_hz} is invalid"));
                }
                if ramp_s.is_some_and(|r| !(r.is_finite() && r >= 0.0)) {
                    return fail("ramp_s must be non-negative".into());
                }
                if script.as_ref().is_some_and(|s| s.iter().all(|seg| seg.frames == 0)) {
                    return fail("synthetic script has no frames".into());
                }
            }
            SourceConfig::Directory { rate_hz, .. } if !(rate_hz.is_finite() && *rate_hz >= 0.0) => {
                return fail(format!("source rate {rate_hz} is invalid"));
            }
            _ => {}
        }
        if self.allow_commands && !self.source.is_driven() {
            return fail("--allow-commands needs the driven synthetic source".into());
        }
        self.synth.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
