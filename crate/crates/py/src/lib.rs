//! Python bindings: frames, correlation features, the kNN classifier, the
//! phantom generator, the debouncer and the wire codec.
//!
//! Gestures cross the boundary as their wire names (`"rest"`, `"power_grip"`,
//! `"wrist_pronation"`, `"point"`).

use std::fmt::Display;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use sonopipe::classifier::{cross_validate as cv, LabeledSample};
use sonopipe::features::PreparedTemplates;
use sonopipe::kinematics::N_JOINTS;
use sonopipe::pipeline::Debouncer as CoreDebouncer;
use sonopipe::streamwire::{decode_message as decode, encode_message as encode, PoseMessage};
use sonopipe::synth::Phantom as CorePhantom;
use sonopipe::{Frame as CoreFrame, GestureLabel, KnnModel as CoreKnn, PhantomSpec as CoreSpec, TemplateStore};

fn value_err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn label(name: &str) -> PyResult<GestureLabel> {
    name.parse().map_err(value_err)
}

fn four(v: Vec<f64>, what: &str) -> PyResult<[f64; 4]> {
    v.try_into()
        .map_err(|v: Vec<f64>| PyValueError::new_err(format!("{what} needs 4 values, got {}", v.len())))
}

fn samples(features: Vec<Vec<f64>>, labels: Vec<String>) -> PyResult<Vec<LabeledSample>> {
    if features.len() != labels.len() {
        return Err(PyValueError::new_err(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    features
        .into_iter()
        .zip(labels)
        .map(|(f, l)| Ok(LabeledSample::new(four(f, "feature row")?, label(&l)?)))
        .collect()
}

/// Names of the four gestures in class order.
#[pyfunction]
fn gestures() -> Vec<&'static str> {
    GestureLabel::ALL.iter().map(|l| l.name()).collect()
}

/// Grayscale frame, row-major, intensities in [0, 1].
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Frame(CoreFrame);

#[pymethods]
impl Frame {
    #[new]
    #[pyo3(signature = (width, height, pixels, timestamp_us=0, seq=0))]
    fn new(width: usize, height: usize, pixels: Vec<f64>, timestamp_us: u64, seq: u64) -> PyResult<Self> {
        Ok(Self(
            CoreFrame::new(width, height, pixels)
                .map_err(value_err)?
                .with_meta(timestamp_us, seq),
        ))
    }

    #[staticmethod]
    fn from_bytes(width: usize, height: usize, data: &[u8]) -> PyResult<Self> {
        CoreFrame::from_u8(width, height, data).map(Self).map_err(value_err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.to_u8())
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn seq(&self) -> u64 {
        self.0.seq()
    }

    #[getter]
    fn timestamp_us(&self) -> u64 {
        self.0.timestamp_us()
    }

    fn pixels(&self) -> Vec<f64> {
        self.0.pixels().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Frame({}x{}, seq={})", self.0.width(), self.0.height(), self.0.seq())
    }
}

/// Sample correlation of two equally sized frames.
#[pyfunction]
fn pearson(a: &Frame, b: &Frame) -> PyResult<f64> {
    sonopipe::pearson(&a.0, &b.0).map_err(value_err)
}

/// Gesture templates loaded from a directory written by `sonopipe train`.
#[pyclass(frozen)]
struct Templates {
    prepared: PreparedTemplates,
}

#[pymethods]
impl Templates {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let store = TemplateStore::load(path).map_err(io_err)?;
        Ok(Self {
            prepared: PreparedTemplates::new(&store).map_err(value_err)?,
        })
    }

    #[getter]
    fn dims(&self) -> (usize, usize) {
        self.prepared.dims()
    }

    /// Correlation against each template, in class order.
    fn features(&self, frame: &Frame) -> PyResult<Vec<f64>> {
        Ok(self.prepared.extract(&frame.0).map_err(value_err)?.r.to_vec())
    }
}

#[pyclass(frozen)]
struct KnnModel(CoreKnn);

#[pymethods]
impl KnnModel {
    #[staticmethod]
    fn fit(features: Vec<Vec<f64>>, labels: Vec<String>, k: usize) -> PyResult<Self> {
        CoreKnn::fit(samples(features, labels)?, k).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        CoreKnn::load(path).map(Self).map_err(io_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(io_err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k()
    }

    fn __len__(&self) -> usize {
        self.0.samples().len()
    }

    fn predict(&self, features: Vec<f64>) -> PyResult<&'static str> {
        Ok(self.0.predict(&four(features, "features")?).name())
    }
}

/// Stratified k-fold cross-validation. Returns accuracy, per-fold accuracy and
/// the aggregate confusion matrix (rows true, columns predicted).
#[pyfunction]
#[pyo3(signature = (features, labels, k=3, folds=5, seed=42))]
fn cross_validate<'py>(
    py: Python<'py>,
    features: Vec<Vec<f64>>,
    labels: Vec<String>,
    k: usize,
    folds: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let report = cv(&samples(features, labels)?, k, folds, seed).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("accuracy", report.accuracy)?;
    out.set_item("fold_accuracy", report.fold_accuracy)?;
    out.set_item(
        "confusion",
        report.confusion.counts.iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
    )?;
    Ok(out)
}

#[pyclass(get_all, set_all, from_py_object)]
#[derive(Clone)]
struct PhantomSpec {
    seed: u64,
    width: usize,
    height: usize,
    n_bands: usize,
    speckle_strength: f64,
    noise_sigma: f64,
}

#[pymethods]
impl PhantomSpec {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let d = CoreSpec::default();
        let mut s = Self {
            seed: d.seed,
            width: d.width,
            height: d.height,
            n_bands: d.n_bands,
            speckle_strength: d.speckle_strength,
            noise_sigma: d.noise_sigma,
        };
        if let Some(kwargs) = kwargs {
            for (key, value) in kwargs.iter() {
                match key.extract::<String>()?.as_str() {
                    "seed" => s.seed = value.extract()?,
                    "width" => s.width = value.extract()?,
                    "height" => s.height = value.extract()?,
                    "n_bands" => s.n_bands = value.extract()?,
                    "speckle_strength" => s.speckle_strength = value.extract()?,
                    "noise_sigma" => s.noise_sigma = value.extract()?,
                    other => return Err(PyValueError::new_err(format!("unknown field {other}"))),
                }
            }
        }
        Ok(s)
    }

    fn __repr__(&self) -> String {
        format!(
            "PhantomSpec(seed={}, width={}, height={}, n_bands={}, speckle_strength={}, noise_sigma={})",
            self.seed, self.width, self.height, self.n_bands, self.speckle_strength, self.noise_sigma
        )
    }
}

impl From<&PhantomSpec> for CoreSpec {
    fn from(s: &PhantomSpec) -> Self {
        CoreSpec {
            seed: s.seed,
            width: s.width,
            height: s.height,
            n_bands: s.n_bands,
            speckle_strength: s.speckle_strength,
            noise_sigma: s.noise_sigma,
        }
    }
}

/// Synthetic forearm cross-section for one simulated subject.
#[pyclass(frozen)]
struct Phantom(CorePhantom);

#[pymethods]
impl Phantom {
    #[new]
    #[pyo3(signature = (spec=None))]
    fn new(spec: Option<PhantomSpec>) -> PyResult<Self> {
        let spec = spec.as_ref().map(CoreSpec::from).unwrap_or_default();
        CorePhantom::new(spec).map(Self).map_err(value_err)
    }

    /// Noisy frame of `gesture` at deformation `phase`; `draw` selects the noise.
    #[pyo3(signature = (gesture, phase=1.0, draw=0))]
    fn render(&self, gesture: &str, phase: f64, draw: u64) -> PyResult<Frame> {
        self.0
            .render(label(gesture)?, phase, draw)
            .map(Frame)
            .map_err(value_err)
    }

    #[pyo3(signature = (gesture, phase=1.0))]
    fn render_clean(&self, gesture: &str, phase: f64) -> PyResult<Frame> {
        self.0
            .render_clean(label(gesture)?, phase)
            .map(Frame)
            .map_err(value_err)
    }

    /// `per_class` labelled frames per gesture, as `(gesture, frame)` pairs.
    fn dataset(&self, per_class: usize) -> PyResult<Vec<(&'static str, Frame)>> {
        Ok(self
            .0
            .dataset_frames(per_class)
            .map_err(value_err)?
            .into_iter()
            .map(|(l, f)| (l.name(), Frame(f)))
            .collect())
    }
}

/// Majority-window smoothing of per-frame predictions.
#[pyclass]
struct Debouncer(CoreDebouncer);

#[pymethods]
impl Debouncer {
    #[new]
    #[pyo3(signature = (window=5))]
    fn new(window: usize) -> PyResult<Self> {
        if window == 0 {
            return Err(PyValueError::new_err("window must be at least 1"));
        }
        Ok(Self(CoreDebouncer::new(window)))
    }

    /// Feeds one prediction; returns the new output gesture when it changes.
    fn push(&mut self, gesture: &str) -> PyResult<Option<&'static str>> {
        Ok(self.0.push(label(gesture)?).map(|l| l.name()))
    }

    #[getter]
    fn current(&self) -> &'static str {
        self.0.current().name()
    }

    #[getter]
    fn changes(&self) -> u64 {
        self.0.changes()
    }
}

/// One NDJSON line for a joint-state message.
#[pyfunction]
fn encode_message<'py>(
    py: Python<'py>,
    seq: u64,
    timestamp_us: u64,
    gesture: &str,
    confidence: f64,
    features: Vec<f64>,
    joints: Vec<f64>,
) -> PyResult<Bound<'py, PyBytes>> {
    let got = joints.len();
    let joints: [f64; N_JOINTS] = joints
        .try_into()
        .map_err(|_| PyValueError::new_err(format!("joints needs {N_JOINTS} values, got {got}")))?;
    let message = PoseMessage {
        seq,
        timestamp_us,
        gesture: label(gesture)?,
        confidence,
        features: four(features, "features")?,
        joints,
    };
    Ok(PyBytes::new(py, &encode(&message).map_err(value_err)?))
}

#[pyfunction]
fn decode_message<'py>(py: Python<'py>, line: &[u8]) -> PyResult<Bound<'py, PyDict>> {
    let m = decode(line).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("seq", m.seq)?;
    out.set_item("timestamp_us", m.timestamp_us)?;
    out.set_item("gesture", m.gesture.name())?;
    out.set_item("confidence", m.confidence)?;
    out.set_item("features", m.features.to_vec())?;
    out.set_item("joints", m.joints.to_vec())?;
    Ok(out)
}

#[pymodule]
pub fn pysonopipe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("N_JOINTS", N_JOINTS)?;
    m.add_function(wrap_pyfunction!(gestures, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(encode_message, m)?)?;
    m.add_function(wrap_pyfunction!(decode_message, m)?)?;
    m.add_class::<Frame>()?;
    m.add_class::<Templates>()?;
    m.add_class::<KnnModel>()?;
    m.add_class::<PhantomSpec>()?;
    m.add_class::<Phantom>()?;
    m.add_class::<Debouncer>()?;
    Ok(())
}
