//! Frame sources: directory replay, synthetic phantom, and TCP ingestion.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::{load_pgm, Frame, FrameError};
use crate::synth::{Phantom, PhantomSpec, SynthError};
use crate::templates::GestureLabel;

#[derive(Debug, Error)]
pub enum SourceError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("no frames found in {0}")]
    EmptyDirectory(PathBuf),
    #[error("frame timestamp went backwards: {prev} -> {next}")]
    TimestampRegression { prev: u64, next: u64 },
    #[error("frame header declares zero-sized {0}x{1} frame")]
    BadHeader(u32, u32),
}

/// Single-consumer producer of frames.
///
/// `Ok(None)` marks end of stream; once returned, every later call returns
/// `Ok(None)` again.
pub trait FrameSource: Send {
    fn next_frame(&mut self) -> Result<Option<Frame>, SourceError>;
}

/// Assigns timestamps relative to a shared epoch and optionally paces
/// delivery to a fixed rate.
#[derive(Debug, Clone, Copy)]
pub struct Pacing {
    epoch: Instant,
    rate_hz: f64,
}

impl Pacing {
    /// `rate_hz <= 0` means unpaced: frames are stamped with their actual
    /// production time.
    pub fn new(epoch: Instant, rate_hz: f64) -> Self {
        Self { epoch, rate_hz }
    }

    pub fn unpaced(epoch: Instant) -> Self {
        Self::new(epoch, 0.0)
    }

    pub fn epoch(&self) -> Instant {
        self.epoch
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn now_us(&self) -> u64 {
        self.epoch.elapsed().as_micros() as u64
    }

    /// Timestamp for frame `seq`, sleeping until it is due when paced.
    pub fn stamp(&self, seq: u64) -> u64 {
        if self.rate_hz <= 0.0 {
            return self.now_us();
        }
        let due = (seq as f64 * 1e6 / self.rate_hz).round() as u64;
        let now = self.now_us();
        if due > now {
            std::thread::sleep(Duration::from_micros(due - now));
        }
        due
    }
}

/// Replays `*.pgm` files from a directory in lexicographic order.
pub struct DirectoryReplaySource {
    files: Vec<PathBuf>,
    next: usize,
    pacing: Pacing,
}

impl DirectoryReplaySource {
    pub fn open(dir: impl AsRef<Path>, pacing: Pacing) -> Result<Self, SourceError> {
        let dir = dir.as_ref();
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
            .collect();
        if files.is_empty() {
            return Err(SourceError::EmptyDirectory(dir.to_path_buf()));
        }
        files.sort();
        Ok(Self { files, next: 0, pacing })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

impl FrameSource for DirectoryReplaySource {
    fn next_frame(&mut self) -> Result<Option<Frame>, SourceError> {
        let Some(path) = self.files.get(self.next) else {
            return Ok(None);
        };
        let frame = load_pgm(path)?;
        let seq = self.next as u64;
        self.next += 1;
        let ts = self.pacing.stamp(seq);
        Ok(Some(frame.with_meta(ts, seq)))
    }
}

/// Shared handle for switching the gesture a driven [`SyntheticSource`] renders.
#[derive(Debug, Clone)]
pub struct DriveHandle(Arc<Mutex<GestureLabel>>);

impl DriveHandle {
    pub fn new(initial: GestureLabel) -> Self {
        Self(Arc::new(Mutex::new(initial)))
    }

    pub fn set(&self, label: GestureLabel) {
        *self.0.lock().unwrap() = label;
    }

    pub fn get(&self) -> GestureLabel {
        *self.0.lock().unwrap()
    }
}

enum Script {
    Segments {
        segments: Vec<(GestureLabel, usize)>,
        index: usize,
        used: usize,
    },
    Driven(DriveHandle),
}

/// Renders phantom frames, either from a fixed script of gesture segments or
/// following a [`DriveHandle`].
///
/// On a gesture change the new gesture's deformation phase ramps from 0 to 1
/// over `ramp_s` seconds of frame time.
pub struct SyntheticSource {
    phantom: Phantom,
    script: Script,
    pacing: Pacing,
    ramp_s: f64,
    seq: u64,
    max_frames: Option<u64>,
    current: Option<(GestureLabel, u64)>,
    clean_full: [Option<Frame>; 4],
    done: bool,
}

impl SyntheticSource {
    pub fn scripted(
        spec: PhantomSpec,
        segments: Vec<(GestureLabel, usize)>,
        pacing: Pacing,
    ) -> Result<Self, SourceError> {
        Self::build(
            spec,
            Script::Segments {
                segments,
                index: 0,
                used: 0,
            },
            pacing,
        )
    }

    pub fn driven(spec: PhantomSpec, handle: DriveHandle, pacing: Pacing) -> Result<Self, SourceError> {
        Self::build(spec, Script::Driven(handle), pacing)
    }

    fn build(spec: PhantomSpec, script: Script, pacing: Pacing) -> Result<Self, SourceError> {
        Ok(Self {
            phantom: Phantom::new(spec)?,
            script,
            pacing,
            ramp_s: 0.0,
            seq: 0,
            max_frames: None,
            current: None,
            clean_full: [None, None, None, None],
            done: false,
        })
    }

    pub fn with_ramp(mut self, ramp_s: f64) -> Self {
        self.ramp_s = ramp_s.max(0.0);
        self
    }

    pub fn with_max_frames(mut self, max_frames: Option<u64>) -> Self {
        self.max_frames = max_frames;
        self
    }

    fn target(&mut self) -> Option<GestureLabel> {
        match &mut self.script {
            Script::Driven(h) => Some(h.get()),
            Script::Segments { segments, index, used } => loop {
                let (label, count) = *segments.get(*index)?;
                if *used < count {
                    *used += 1;
                    return Some(label);
                }
                *index += 1;
                *used = 0;
            },
        }
    }
}

impl FrameSource for SyntheticSource {
    fn next_frame(&mut self) -> Result<Option<Frame>, SourceError> {
        if self.done || self.max_frames.is_some_and(|m| self.seq >= m) {
            self.done = true;
            return Ok(None);
        }
        let Some(label) = self.target() else {
            self.done = true;
            return Ok(None);
        };
        let seq = self.seq;
        let ts = self.pacing.stamp(seq);
        let since = match self.current {
            Some((l, t0)) if l == label => t0,
            _ => {
                self.current = Some((label, ts));
                ts
            }
        };
        let phase = if self.ramp_s > 0.0 {
            ((ts - since) as f64 / (self.ramp_s * 1e6)).min(1.0)
        } else {
            1.0
        };
        let frame = if phase >= 1.0 {
            let slot = &mut self.clean_full[label.ordinal()];
            if slot.is_none() {
                *slot = Some(self.phantom.render_clean(label, 1.0)?);
            }
            self.phantom.add_noise(slot.as_ref().unwrap(), seq)?
        } else {
            self.phantom.render(label, phase, seq)?
        };
        self.seq += 1;
        Ok(Some(frame.with_meta(ts, seq)))
    }
}

/// Length of the little-endian frame header: u32 width, u32 height, u64 timestamp_us.
pub const WIRE_HEADER_LEN: usize = 16;

pub fn write_wire_frame<W: Write>(out: &mut W, frame: &Frame) -> io::Result<()> {
    let mut header = [0u8; WIRE_HEADER_LEN];
    header[0..4].copy_from_slice(&(frame.width() as u32).to_le_bytes());
    header[4..8].copy_from_slice(&(frame.height() as u32).to_le_bytes());
    header[8..16].copy_from_slice(&frame.timestamp_us().to_le_bytes());
    out.write_all(&header)?;
    out.write_all(&frame.to_u8())
}

/// Reads one wire frame. A clean EOF before the header yields `Ok(None)`.
pub fn read_wire_frame<R: Read>(input: &mut R) -> Result<Option<Frame>, SourceError> {
    let mut header = [0u8; WIRE_HEADER_LEN];
    let mut filled = 0;
    while filled < WIRE_HEADER_LEN {
        match input.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let width = u32::from_le_bytes(header[0..4].try_into().unwrap());
    let height = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let ts = u64::from_le_bytes(header[8..16].try_into().unwrap());
    if width == 0 || height == 0 {
        return Err(SourceError::BadHeader(width, height));
    }
    let mut payload = vec![0u8; width as usize * height as usize];
    input.read_exact(&mut payload)?;
    Ok(Some(
        Frame::from_u8(width as usize, height as usize, &payload)?.with_meta(ts, 0),
    ))
}

/// Accepts one sender and reads back-to-back wire frames until it disconnects.
pub struct TcpFrameSource {
    listener: Option<TcpListener>,
    stream: Option<io::BufReader<TcpStream>>,
    seq: u64,
    last_ts: Option<u64>,
    done: bool,
}

impl TcpFrameSource {
    pub fn listen(addr: impl ToSocketAddrs) -> Result<Self, SourceError> {
        Ok(Self {
            listener: Some(TcpListener::bind(addr)?),
            stream: None,
            seq: 0,
            last_ts: None,
            done: false,
        })
    }

    pub fn from_stream(stream: TcpStream) -> Self {
        Self {
            listener: None,
            stream: Some(io::BufReader::new(stream)),
            seq: 0,
            last_ts: None,
            done: false,
        }
    }

    pub fn local_addr(&self) -> Option<std::net::SocketAddr> {
        self.listener.as_ref().and_then(|l| l.local_addr().ok())
    }
}

impl FrameSource for TcpFrameSource {
    fn next_frame(&mut self) -> Result<Option<Frame>, SourceError> {
        if self.done {
            return Ok(None);
        }
        if self.stream.is_none() {
            let listener = self.listener.as_ref().expect("listener or stream present");
            let (stream, _) = listener.accept()?;
            stream.set_nodelay(true).ok();
            self.stream = Some(io::BufReader::new(stream));
        }
        let reader = self.stream.as_mut().unwrap();
        let Some(frame) = read_wire_frame(reader)? else {
            self.done = true;
            return Ok(None);
        };
        let ts = frame.timestamp_us();
        if let Some(prev) = self.last_ts {
            if ts < prev {
                return Err(SourceError::TimestampRegression { prev, next: ts });
            }
        }
        self.last_ts = Some(ts);
        let seq = self.seq;
        self.seq += 1;
        Ok(Some(frame.with_meta(ts, seq)))
    }
}
