use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Raw latency samples in microseconds.
#[derive(Debug, Clone, Default)]
pub struct LatencyRecorder {
    samples: Vec<u64>,
}

impl LatencyRecorder {
    pub fn record(&mut self, us: u64) {
        self.samples.push(us);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn summary(&self) -> LatencySummary {
        LatencySummary::from_samples(&self.samples)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: u64,
    pub mean_us: f64,
    pub p50_us: u64,
    pub p90_us: u64,
    pub p99_us: u64,
    pub max_us: u64,
}

impl LatencySummary {
    /// Nearest-rank percentiles.
    pub fn from_samples(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let rank = |p: f64| sorted[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
        Self {
            count: n as u64,
            mean_us: sorted.iter().map(|&x| x as f64).sum::<f64>() / n as f64,
            p50_us: rank(0.50),
            p90_us: rank(0.90),
            p99_us: rank(0.99),
            max_us: sorted[n - 1],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLatencies {
    pub preprocess: LatencySummary,
    pub features: LatencySummary,
    pub classify: LatencySummary,
    pub publish: LatencySummary,
}

/// Counters and timings of one `run`, written as JSON on shutdown.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub frames_in: u64,
    pub frames_processed: u64,
    pub frames_dropped: u64,
    /// Frames rejected by feature extraction (zero variance).
    pub frames_invalid: u64,
    pub messages_published: u64,
    pub prediction_changes: u64,
    pub wall_s: f64,
    /// Processed frames per second of wall time.
    pub fps: f64,
    /// Frames per second the preprocess, features and classify stages
    /// sustain back to back.
    pub compute_fps: f64,
    pub stage_latency: StageLatencies,
    /// Frame timestamp to message publication.
    pub end_to_end: LatencySummary,
    pub subscriber_drops: u64,
}

impl Metrics {
    pub fn write_json(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(path, text)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "frames: {} in, {} processed, {} dropped, {} invalid",
            self.frames_in, self.frames_processed, self.frames_dropped, self.frames_invalid
        );
        let _ = writeln!(
            s,
            "messages: {} published, {} gesture changes, {} subscriber drops",
            self.messages_published, self.prediction_changes, self.subscriber_drops
        );
        let _ = writeln!(
            s,
            "rate: {:.1} fps over {:.2} s, compute {:.1} fps",
            self.fps, self.wall_s, self.compute_fps
        );
        let st = &self.stage_latency;
        for (name, l) in [
            ("preprocess", &st.preprocess),
            ("features", &st.features),
            ("classify", &st.classify),
            ("publish", &st.publish),
            ("end-to-end", &self.end_to_end),
        ] {
            let _ = writeln!(
                s,
                "{name:>10}: mean {:.0} us, p50 {} us, p99 {} us, max {} us",
                l.mean_us, l.p50_us, l.p99_us, l.max_us
            );
        }
        s
    }
}
