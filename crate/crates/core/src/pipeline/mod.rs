//! Pipeline orchestration.
//!
//! `run` wires three threads together with drop-oldest queues:
//!
//! ```text
//! source ──q1──▶ preprocess + features + classify ──q2──▶ debounce + joints + publish
//! ```
//!
//! The model and templates are shared read-only. Every frame that reaches the
//! publisher becomes exactly one [`PoseMessage`] carrying the frame's `seq`, so
//! gaps in `seq` correspond to counted drops or invalid frames.

pub mod command;
pub mod commands;
pub mod config;
pub mod debounce;
pub mod metrics;
pub mod train;

use std::io;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

pub use command::CommandServer;
pub use commands::{load_training_set, run_eval, run_synth_gen, run_train, EvalOutcome};
pub use config::{ConfigError, PipelineConfig, Segment, SourceConfig};
pub use debounce::Debouncer;
pub use metrics::{LatencyRecorder, LatencySummary, Metrics};

use crate::classifier::{ClassifierError, KnnModel};
use crate::features::{CorrelationVector, PreparedTemplates};
use crate::frame::{
    preprocess, DirectoryReplaySource, DriveHandle, Frame, FrameSource, Pacing, SourceError, SyntheticSource,
    TcpFrameSource,
};
use crate::kinematics::{interpolate, JointState, KinematicsError, PosePreset};
use crate::queue::DropOldestQueue;
use crate::streamwire::{PoseMessage, ServerConfig, StreamServer};
use crate::templates::{GestureLabel, TemplateError, TemplateStore};

/// How long shutdown waits for queued frames after a stop request.
pub const DRAIN_TIMEOUT: Duration = Duration::from_secs(1);

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("loading templates from {path}: {source}")]
    Templates { path: String, source: TemplateError },
    #[error("loading model from {path}: {source}")]
    Model { path: String, source: ClassifierError },
    #[error("loading poses: {0}")]
    Poses(#[from] KinematicsError),
    #[error("templates are {got:?} but the pipeline is configured for {want:?}")]
    Dims { got: (usize, usize), want: (usize, usize) },
    #[error("binding {what} on {addr}: {source}")]
    Bind {
        what: &'static str,
        addr: String,
        source: io::Error,
    },
    #[error("frame source: {0}")]
    Source(#[from] SourceError),
    #[error("preprocessing frame {seq}: {reason}")]
    Preprocess { seq: u64, reason: String },
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl PipelineError {
    /// 2 for configuration problems, 1 for faults at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Templates { .. }
            | PipelineError::Model { .. }
            | PipelineError::Poses(_)
            | PipelineError::Dims { .. } => 2,
            _ => 1,
        }
    }
}

/// Where frame timestamps come from. Latency is measured against the
/// pipeline clock when timestamps share it, otherwise from frame arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceClock {
    Pipeline,
    External,
}

struct Ingested {
    frame: Frame,
    arrived: Instant,
}

#[derive(Clone, Copy)]
struct StageTimes {
    preprocess: u64,
    features: u64,
    classify: u64,
}

struct Classified {
    seq: u64,
    timestamp_us: u64,
    arrived: Instant,
    features: CorrelationVector,
    prediction: GestureLabel,
    times: StageTimes,
}

#[derive(Default)]
struct Recorders {
    preprocess: LatencyRecorder,
    features: LatencyRecorder,
    classify: LatencyRecorder,
    publish: LatencyRecorder,
    end_to_end: LatencyRecorder,
    compute_us: u64,
    published: u64,
    invalid: u64,
    changes: u64,
}

/// A configured pipeline with its sockets bound and artifacts loaded, ready to [`run`](Pipeline::run).
pub struct Pipeline {
    config: PipelineConfig,
    templates: Arc<PreparedTemplates>,
    model: Arc<KnnModel>,
    poses: PosePreset,
    source: Box<dyn FrameSource>,
    clock: SourceClock,
    epoch: Instant,
    drive: Option<DriveHandle>,
    source_addr: Option<SocketAddr>,
    server: StreamServer,
    commands: Option<CommandServer>,
    stop: Arc<AtomicBool>,
}

fn load_poses(config: &PipelineConfig) -> Result<PosePreset, PipelineError> {
    Ok(match &config.poses_path {
        Some(p) => PosePreset::load(p)?,
        None => PosePreset::default(),
    })
}

impl Pipeline {
    /// Validates `config`, loads templates, model and poses, opens the
    /// configured source and binds the stream and command sockets.
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let store = TemplateStore::load(&config.template_dir).map_err(|source| PipelineError::Templates {
            path: config.template_dir.display().to_string(),
            source,
        })?;
        let model = KnnModel::load(&config.model_path).map_err(|source| PipelineError::Model {
            path: config.model_path.display().to_string(),
            source,
        })?;
        Self::with_artifacts(config, store, model)
    }

    /// Like [`new`](Pipeline::new) with templates and model supplied directly.
    pub fn with_artifacts(
        config: PipelineConfig,
        store: TemplateStore,
        model: KnnModel,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let epoch = Instant::now();
        let (source, clock, drive, source_addr) = open_source(&config, epoch)?;
        Self::assemble(config, store, model, source, clock, drive, source_addr, epoch)
    }

    /// Runs a caller-provided source instead of the configured one.
    pub fn with_source(
        config: PipelineConfig,
        store: TemplateStore,
        model: KnnModel,
        source: Box<dyn FrameSource>,
        clock: SourceClock,
        epoch: Instant,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        Self::assemble(config, store, model, source, clock, None, None, epoch)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: PipelineConfig,
        store: TemplateStore,
        model: KnnModel,
        source: Box<dyn FrameSource>,
        clock: SourceClock,
        drive: Option<DriveHandle>,
        source_addr: Option<SocketAddr>,
        epoch: Instant,
    ) -> Result<Self, PipelineError> {
        let want = (config.width, config.height);
        if store.dims() != want {
            return Err(PipelineError::Dims {
                got: store.dims(),
                want,
            });
        }
        let templates = PreparedTemplates::new(&store).map_err(|e| PipelineError::Templates {
            path: config.template_dir.display().to_string(),
            source: TemplateError::Feature(e),
        })?;
        let poses = load_poses(&config)?;

        let host = &config.bind_host;
        let server_config = ServerConfig {
            tcp_addr: config.tcp_port.map(|p| format!("{host}:{p}")),
            ws_addr: config.ws_port.map(|p| format!("{host}:{p}")),
            queue_capacity: config.subscriber_capacity,
        };
        let server = StreamServer::start(server_config).map_err(|source| PipelineError::Bind {
            what: "stream server",
            addr: format!("{host} ports {:?}/{:?}", config.tcp_port, config.ws_port),
            source,
        })?;
        let commands = match (&drive, config.allow_commands) {
            (Some(handle), true) => {
                let addr = format!("{host}:{}", config.command_port);
                Some(
                    CommandServer::start(&addr, handle.clone()).map_err(|source| PipelineError::Bind {
                        what: "command socket",
                        addr,
                        source,
                    })?,
                )
            }
            _ => None,
        };

        Ok(Self {
            config,
            templates: Arc::new(templates),
            model: Arc::new(model),
            poses,
            source,
            clock,
            epoch,
            drive,
            source_addr,
            server,
            commands,
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn server(&self) -> &StreamServer {
        &self.server
    }

    /// Present for the driven synthetic source.
    pub fn drive_handle(&self) -> Option<DriveHandle> {
        self.drive.clone()
    }

    pub fn command_addr(&self) -> Option<SocketAddr> {
        self.commands.as_ref().map(|c| c.local_addr())
    }

    /// Listening address of a TCP frame source.
    pub fn source_addr(&self) -> Option<SocketAddr> {
        self.source_addr
    }

    /// Setting this flag stops the source; queued frames drain for up to
    /// [`DRAIN_TIMEOUT`].
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    /// Processes frames until the source ends or the stop flag is set.
    ///
    /// Metrics are written to `metrics_out` (if configured) even when the run
    /// ends in a source fault; the fault is then returned as the error.
    pub fn run(self) -> Result<Metrics, PipelineError> {
        let Pipeline {
            config,
            templates,
            model,
            poses,
            mut source,
            clock,
            epoch,
            drive: _drive,
            source_addr: _,
            server,
            commands,
            stop,
        } = self;

        let started = Instant::now();
        let q1: Arc<DropOldestQueue<Ingested>> = Arc::new(DropOldestQueue::new(config.queue_capacity));
        let q2: Arc<DropOldestQueue<Classified>> = Arc::new(DropOldestQueue::new(config.queue_capacity));
        let recorders = Arc::new(Mutex::new(Recorders::default()));
        let frames_in = Arc::new(AtomicU64::new(0));
        let fault: Arc<Mutex<Option<PipelineError>>> = Arc::new(Mutex::new(None));
        let server = Arc::new(server);

        let source_thread = {
            let (q1, stop, frames_in, fault) = (q1.clone(), stop.clone(), frames_in.clone(), fault.clone());
            let max_frames = config.max_frames;
            thread::spawn(move || {
                while !stop.load(Ordering::Acquire) {
                    if max_frames.is_some_and(|m| frames_in.load(Ordering::Relaxed) >= m) {
                        break;
                    }
                    match source.next_frame() {
                        Ok(Some(frame)) => {
                            frames_in.fetch_add(1, Ordering::Relaxed);
                            q1.push(Ingested {
                                frame,
                                arrived: Instant::now(),
                            });
                        }
                        Ok(None) => break,
                        Err(e) => {
                            fault.lock().unwrap().get_or_insert(PipelineError::Source(e));
                            break;
                        }
                    }
                }
                q1.close();
            })
        };

        let worker = {
            let (q1, q2, recorders, fault, stop) =
                (q1.clone(), q2.clone(), recorders.clone(), fault.clone(), stop.clone());
            let (roi, w, h) = (config.roi, config.width, config.height);
            thread::spawn(move || {
                while let Some(Ingested { frame, arrived }) = q1.pop() {
                    let t0 = Instant::now();
                    let pre = match preprocess(&frame, roi, w, h) {
                        Ok(f) => f,
                        Err(e) => {
                            fault.lock().unwrap().get_or_insert(PipelineError::Preprocess {
                                seq: frame.seq(),
                                reason: e.to_string(),
                            });
                            stop.store(true, Ordering::Release);
                            q1.close();
                            break;
                        }
                    };
                    let t1 = Instant::now();
                    let features = match templates.extract(&pre) {
                        Ok(v) => v,
                        Err(_) => {
                            recorders.lock().unwrap().invalid += 1;
                            continue;
                        }
                    };
                    let t2 = Instant::now();
                    let prediction = model.predict(&features.r);
                    let t3 = Instant::now();
                    q2.push(Classified {
                        seq: frame.seq(),
                        timestamp_us: frame.timestamp_us(),
                        arrived,
                        features,
                        prediction,
                        times: StageTimes {
                            preprocess: micros(t1 - t0),
                            features: micros(t2 - t1),
                            classify: micros(t3 - t2),
                        },
                    });
                }
                q2.close();
            })
        };

        let publisher = {
            let (q2, recorders, server) = (q2.clone(), recorders.clone(), server.clone());
            let mut debouncer = Debouncer::new(config.debounce);
            let mut motion = Motion::new(&poses, config.transition_s);
            thread::spawn(move || {
                while let Some(item) = q2.pop() {
                    let t0 = Instant::now();
                    if let Some(next) = debouncer.push(item.prediction) {
                        motion.retarget(poses.pose_for(next), item.timestamp_us);
                    }
                    let gesture = debouncer.current();
                    let message = PoseMessage {
                        seq: item.seq,
                        timestamp_us: item.timestamp_us,
                        gesture,
                        confidence: item.features.get(gesture),
                        features: item.features.r,
                        joints: motion.at(item.timestamp_us).angles,
                    };
                    let ok = server.publish(&message).is_ok();
                    let done = Instant::now();
                    let e2e = match clock {
                        SourceClock::Pipeline => micros(done - epoch).saturating_sub(item.timestamp_us),
                        SourceClock::External => micros(done - item.arrived),
                    };
                    let mut r = recorders.lock().unwrap();
                    r.changes = debouncer.changes();
                    if !ok {
                        r.invalid += 1;
                        continue;
                    }
                    r.published += 1;
                    r.preprocess.record(item.times.preprocess);
                    r.features.record(item.times.features);
                    r.classify.record(item.times.classify);
                    r.compute_us += item.times.preprocess + item.times.features + item.times.classify;
                    r.publish.record(micros(done - t0));
                    r.end_to_end.record(e2e);
                }
            })
        };

        let mut stop_seen: Option<Instant> = None;
        while !publisher.is_finished() {
            if stop.load(Ordering::Acquire) {
                let since = *stop_seen.get_or_insert_with(|| {
                    q1.close();
                    Instant::now()
                });
                if since.elapsed() > DRAIN_TIMEOUT {
                    q1.close();
                    q2.close();
                    break;
                }
            }
            thread::sleep(Duration::from_millis(2));
        }
        if publisher.is_finished() {
            let _ = publisher.join();
            let _ = worker.join();
            if source_thread.is_finished() {
                let _ = source_thread.join();
            }
        }
        let wall = started.elapsed().as_secs_f64();
        if let Some(c) = commands {
            c.stop();
        }
        let subscriber_drops = server.stats().dropped;
        server.stop();

        let r = recorders.lock().unwrap();
        let compute_s = r.compute_us as f64 / 1e6;
        let metrics = Metrics {
            frames_in: frames_in.load(Ordering::Relaxed),
            frames_processed: r.published,
            frames_dropped: q1.dropped() + q2.dropped(),
            frames_invalid: r.invalid,
            messages_published: r.published,
            prediction_changes: r.changes,
            wall_s: wall,
            fps: if wall > 0.0 { r.published as f64 / wall } else { 0.0 },
            compute_fps: if compute_s > 0.0 {
                r.published as f64 / compute_s
            } else {
                0.0
            },
            stage_latency: metrics::StageLatencies {
                preprocess: r.preprocess.summary(),
                features: r.features.summary(),
                classify: r.classify.summary(),
                publish: r.publish.summary(),
            },
            end_to_end: r.end_to_end.summary(),
            subscriber_drops,
        };
        drop(r);

        if let Some(path) = &config.metrics_out {
            write_metrics(&metrics, path)?;
        }
        let fault = fault.lock().unwrap().take();
        match fault {
            Some(e) => Err(e),
            None => Ok(metrics),
        }
    }
}

/// Builds a pipeline from `config` and runs it to completion.
pub fn run(config: PipelineConfig) -> Result<Metrics, PipelineError> {
    Pipeline::new(config)?.run()
}

pub fn write_metrics(metrics: &Metrics, path: &Path) -> Result<(), PipelineError> {
    metrics.write_json(path).map_err(|source| PipelineError::Io {
        context: format!("writing metrics to {}", path.display()),
        source,
    })
}

fn micros(d: Duration) -> u64 {
    d.as_micros().min(u64::MAX as u128) as u64
}

type OpenedSource = (
    Box<dyn FrameSource>,
    SourceClock,
    Option<DriveHandle>,
    Option<SocketAddr>,
);

fn open_source(config: &PipelineConfig, epoch: Instant) -> Result<OpenedSource, PipelineError> {
    let pacing = |rate: f64| {
        if rate > 0.0 {
            Pacing::new(epoch, rate)
        } else {
            Pacing::unpaced(epoch)
        }
    };
    Ok(match &config.source {
        SourceConfig::Synthetic {
            script,
            rate_hz,
            ramp_s,
        } => {
            let spec = config.synth;
            match script {
                Some(segments) => {
                    let segments = segments.iter().map(|s| (s.gesture, s.frames)).collect();
                    let src =
                        SyntheticSource::scripted(spec, segments, pacing(*rate_hz))?.with_ramp(ramp_s.unwrap_or(0.0));
                    (Box::new(src), SourceClock::Pipeline, None, None)
                }
                None => {
                    let handle = DriveHandle::new(GestureLabel::Rest);
                    let src = SyntheticSource::driven(spec, handle.clone(), pacing(*rate_hz))?
                        .with_ramp(ramp_s.unwrap_or(0.5));
                    (Box::new(src), SourceClock::Pipeline, Some(handle), None)
                }
            }
        }
        SourceConfig::Directory { path, rate_hz } => {
            let src = DirectoryReplaySource::open(path, pacing(*rate_hz))?;
            (Box::new(src), SourceClock::Pipeline, None, None)
        }
        SourceConfig::Tcp { bind } => {
            let src = TcpFrameSource::listen(bind.as_str()).map_err(|e| match e {
                SourceError::Io(source) => PipelineError::Bind {
                    what: "frame source",
                    addr: bind.clone(),
                    source,
                },
                other => PipelineError::Source(other),
            })?;
            let addr = src.local_addr();
            (Box::new(src), SourceClock::External, None, addr)
        }
    })
}

/// Joint targets over time: a straight-line move from the pose at the last
/// gesture change to the new gesture's preset, completed after the
/// transition time.
struct Motion {
    from: JointState,
    to: JointState,
    since_us: Option<u64>,
    duration_us: f64,
}

impl Motion {
    fn new(poses: &PosePreset, transition_s: f64) -> Self {
        let rest = poses.pose_for(GestureLabel::Rest);
        Self {
            from: rest,
            to: rest,
            since_us: None,
            duration_us: transition_s * 1e6,
        }
    }

    fn at(&self, t_us: u64) -> JointState {
        match self.since_us {
            None => self.to,
            Some(t0) => {
                let t = (t_us.saturating_sub(t0) as f64 / self.duration_us).clamp(0.0, 1.0);
                interpolate(&self.from, &self.to, t).expect("t is clamped to [0, 1]")
            }
        }
    }

    fn retarget(&mut self, target: JointState, t_us: u64) {
        self.from = self.at(t_us);
        self.to = target;
        self.since_us = Some(t_us);
    }
}
