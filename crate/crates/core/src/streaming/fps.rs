//! Per-emitted-frame timing records as CSV.

use std::collections::VecDeque;
use std::io::{self, Write};
use std::time::Instant;

pub const CSV_HEADER: &str = "timestamp_s,frame_index,received,processed,dropped,fps";
pub const DEFAULT_WINDOW: usize = 10;

/// Seconds since some fixed origin.
pub trait Clock: Send {
    fn now(&self) -> f64;
}

pub struct SystemClock(Instant);

impl SystemClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Frames per second over the last `window` emit times:
/// `(k - 1) / (t_last - t_first)` for the `k` stored times.
#[derive(Debug, Clone)]
pub struct FpsWindow {
    window: usize,
    times: VecDeque<f64>,
}

impl FpsWindow {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(2),
            times: VecDeque::new(),
        }
    }

    /// Records an emit and returns the windowed rate, `None` until two
    /// emits are known.
    pub fn tick(&mut self, t: f64) -> Option<f64> {
        if self.times.len() == self.window {
            self.times.pop_front();
        }
        self.times.push_back(t);
        let span = self.times.back()? - self.times.front()?;
        (self.times.len() >= 2 && span > 0.0).then(|| (self.times.len() - 1) as f64 / span)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpsRecord {
    pub timestamp_s: f64,
    pub frame_index: u64,
    pub received: u64,
    pub processed: u64,
    pub fps: Option<f64>,
}

impl FpsRecord {
    pub fn dropped(&self) -> u64 {
        self.received.saturating_sub(self.processed)
    }

    pub fn to_csv_line(&self) -> String {
        let fps = self.fps.map(|f| format!("{f:.3}")).unwrap_or_default();
        format!(
            "{:.6},{},{},{},{},{fps}",
            self.timestamp_s,
            self.frame_index,
            self.received,
            self.processed,
            self.dropped()
        )
    }

    pub fn parse_csv_line(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return None;
        }
        Some(Self {
            timestamp_s: f[0].parse().ok()?,
            frame_index: f[1].parse().ok()?,
            received: f[2].parse().ok()?,
            processed: f[3].parse().ok()?,
            fps: if f[5].is_empty() { None } else { Some(f[5].parse().ok()?) },
        })
    }
}

/// Writes the header on creation and one line per record.
pub struct FpsLog<W: Write> {
    out: W,
    window: FpsWindow,
}

impl<W: Write> FpsLog<W> {
    pub fn new(mut out: W, window: usize) -> io::Result<Self> {
        writeln!(out, "{CSV_HEADER}")?;
        out.flush()?;
        Ok(Self {
            out,
            window: FpsWindow::new(window),
        })
    }

    pub fn record(&mut self, t: f64, frame_index: u64, received: u64, processed: u64) -> io::Result<FpsRecord> {
        let rec = FpsRecord {
            timestamp_s: t,
            frame_index,
            received,
            processed,
            fps: self.window.tick(t),
        };
        writeln!(self.out, "{}", rec.to_csv_line())?;
        self.out.flush()?;
        Ok(rec)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Parses a whole CSV written by [`FpsLog`].
pub fn parse_fps_csv(text: &str) -> Option<Vec<FpsRecord>> {
    let mut lines = text.lines();
    if lines.next()? != CSV_HEADER {
        return None;
    }
    lines.filter(|l| !l.trim().is_empty()).map(FpsRecord::parse_csv_line).collect()
}
