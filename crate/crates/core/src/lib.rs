//! Real-time ultrasound gesture pipeline.
//!
//! Grayscale frames are correlated pixel by pixel against one averaged
//! template per gesture. The four correlation values form a feature vector
//! that a k-nearest-neighbour classifier maps to a gesture, which in turn
//! selects a 14-joint hand pose streamed to subscribers as NDJSON.
//!
//! Module map:
//! - [`frame`]: frames, preprocessing, PGM persistence, frame sources.
//! - [`templates`]: gesture labels, stable-frame selection, averaged templates.
//! - [`features`]: Pearson correlation and the argmax baseline.
//! - [`classifier`]: kNN model, stratified cross-validation, confusion matrices.
//! - [`kinematics`]: joint states, pose presets, interpolation.
//! - [`streamwire`]: pose message codec and the fan-out streaming server.
//! - [`synth`]: deterministic speckle phantom generator.
//! - [`pipeline`]: configuration, debounce, metrics and the orchestrated run.

pub mod classifier;
pub mod features;
pub mod frame;
pub mod kinematics;
pub mod pipeline;
pub mod queue;
pub mod rng;
pub mod streamwire;
pub mod synth;
pub mod templates;

pub use classifier::{ConfusionMatrix, CvReport, KnnModel, LabeledSample};
pub use features::{argmax_classify, extract_features, pearson, CorrelationVector};
pub use frame::{Frame, FrameSource, Roi};
pub use kinematics::{JointLimits, JointState, PosePreset};
pub use streamwire::PoseMessage;
pub use synth::PhantomSpec;
pub use templates::{GestureLabel, GestureTemplate, TemplateStore};
