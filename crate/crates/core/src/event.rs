//! Event records, stream file formats, and windowed accumulation.
//!
//! Window indices are 1-based and inclusive: `(1, N)` covers a whole stream
//! of `N` events. An empty window is written `(k, k - 1)`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn from_sign(p: i64) -> Option<Self> {
        match p {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    /// Nanoseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Self { t, x, y, p }
    }
}

/// Time-ordered events from a sensor of fixed resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    width: u32,
    height: u32,
}

impl EventStream {
    /// Validates ordering and bounds.
    pub fn new(events: Vec<Event>, width: u32, height: u32) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if e.x as u32 >= width || e.y as u32 >= height {
                return Err(Error::OutOfBounds {
                    index: i,
                    x: e.x as u32,
                    y: e.y as u32,
                    width,
                    height,
                });
            }
            if i > 0 && events[i - 1].t > e.t {
                return Err(Error::NonMonotone {
                    index: i,
                    prev: events[i - 1].t,
                    next: e.t,
                });
            }
        }
        Ok(Self {
            events,
            width,
            height,
        })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            events: Vec::new(),
            width,
            height,
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn resolution(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Event at 1-based index `k`.
    pub fn at(&self, k: usize) -> Option<&Event> {
        k.checked_sub(1).and_then(|i| self.events.get(i))
    }

    pub fn full_window(&self) -> EventWindow {
        EventWindow::new(1, self.len())
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastThresholds {
    pub positive: f64,
    pub negative: f64,
}

impl ContrastThresholds {
    pub fn new(positive: f64, negative: f64) -> Result<Self> {
        if !(positive > 0.0 && negative > 0.0) || !positive.is_finite() || !negative.is_finite() {
            return Err(Error::Invalid(format!(
                "contrast thresholds must be positive, got ({positive}, {negative})"
            )));
        }
        Ok(Self { positive, negative })
    }

    pub fn symmetric(delta: f64) -> Result<Self> {
        Self::new(delta, delta)
    }

    /// Signed log-intensity step carried by one event of polarity `p`.
    #[inline]
    pub fn step(&self, p: Polarity) -> f64 {
        match p {
            Polarity::Positive => self.positive,
            Polarity::Negative => -self.negative,
        }
    }
}

impl Default for ContrastThresholds {
    fn default() -> Self {
        Self {
            positive: 0.25,
            negative: 0.25,
        }
    }
}

/// 1-based inclusive index range into an [`EventStream`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EventWindow {
    pub start: usize,
    pub end: usize,
}

impl EventWindow {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        (self.end + 1).saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, stream_len: usize) -> Result<()> {
        if self.start >= 1 && self.start <= self.end + 1 && self.end <= stream_len {
            Ok(())
        } else {
            Err(Error::InvalidWindow {
                start: self.start,
                end: self.end,
                len: stream_len,
            })
        }
    }

    /// Zero-based slice range.
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start - 1..self.end
    }
}

/// Nearest-pixel remap from raw sensor coordinates to rectified coordinates.
/// `None` entries map outside the rectified frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelRemap {
    pub width: u32,
    pub height: u32,
    pub targets: Vec<Option<(u16, u16)>>,
}

impl PixelRemap {
    pub fn identity(width: u32, height: u32) -> Self {
        let targets = (0..height)
            .flat_map(|y| (0..width).map(move |x| Some((x as u16, y as u16))))
            .collect();
        Self {
            width,
            height,
            targets,
        }
    }

    #[inline]
    pub fn lookup(&self, x: u16, y: u16) -> Option<(u16, u16)> {
        if x as u32 >= self.width || y as u32 >= self.height {
            return None;
        }
        self.targets[y as usize * self.width as usize + x as usize]
    }
}

/// Per-pixel signed sum of threshold steps over a window of events.
#[derive(Clone, Debug, PartialEq)]
pub struct AccumulatedImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    /// Positive and negative event counts per pixel.
    pub positive_counts: Vec<u32>,
    pub negative_counts: Vec<u32>,
    pub window: EventWindow,
    pub color: bool,
    /// Events whose remapped position fell outside the frame.
    pub dropped: usize,
}

impl AccumulatedImage {
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn covered(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn coverage(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn to_image(&self) -> crate::image::Image {
        crate::image::Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.values.clone(),
        }
    }
}

/// Sums `±threshold` per event over `window`, in event order.
pub fn accumulate(
    stream: &EventStream,
    window: EventWindow,
    thresholds: &ContrastThresholds,
    undistort: Option<&PixelRemap>,
) -> Result<AccumulatedImage> {
    window.validate(stream.len())?;
    let (w, h) = (stream.width as usize, stream.height as usize);
    if let Some(remap) = undistort {
        if remap.width != stream.width || remap.height != stream.height {
            return Err(Error::Shape(format!(
                "remap is {}x{}, stream is {w}x{h}",
                remap.width, remap.height
            )));
        }
    }
    let mut out = AccumulatedImage {
        width: w,
        height: h,
        values: vec![0.0; w * h],
        mask: vec![false; w * h],
        positive_counts: vec![0; w * h],
        negative_counts: vec![0; w * h],
        window,
        color: false,
        dropped: 0,
    };
    for e in &stream.events[window.range()] {
        let (x, y) = match undistort {
            Some(remap) => match remap.lookup(e.x, e.y) {
                Some(xy) => xy,
                None => {
                    out.dropped += 1;
                    continue;
                }
            },
            None => (e.x, e.y),
        };
        let i = y as usize * w + x as usize;
        out.values[i] += thresholds.step(e.p);
        out.mask[i] = true;
        match e.p {
            Polarity::Positive => out.positive_counts[i] += 1,
            Polarity::Negative => out.negative_counts[i] += 1,
        }
    }
    Ok(out)
}

/// Draws a random window whose length is uniform over
/// `[round(min_frac * N), round(max_frac * N)]` (at least one event) and whose
/// start is uniform over all positions that fit.
pub fn sample_window<R: Rng + ?Sized>(
    stream: &EventStream,
    rng: &mut R,
    min_frac: f64,
    max_frac: f64,
) -> Result<EventWindow> {
    if !(min_frac > 0.0 && min_frac <= max_frac && max_frac <= 1.0) {
        return Err(Error::Invalid(format!(
            "window fractions must satisfy 0 < min <= max <= 1, got ({min_frac}, {max_frac})"
        )));
    }
    let n = stream.len();
    if n == 0 {
        return Err(Error::EmptyStream);
    }
    let lo = ((min_frac * n as f64).round() as usize).clamp(1, n);
    let hi = ((max_frac * n as f64).round() as usize).clamp(lo, n);
    let len = rng.random_range(lo..=hi);
    let start = rng.random_range(1..=n - len + 1);
    Ok(EventWindow::new(start, start + len - 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventFormat {
    /// `t_ns,x,y,p` lines.
    Csv,
    /// Little-endian 16-byte records.
    Binary,
}

impl EventFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") | Some("txt") => EventFormat::Csv,
            _ => EventFormat::Binary,
        }
    }
}

pub const BINARY_RECORD_SIZE: usize = 16;

/// Reads a stream, choosing the format from the extension (`.csv`/`.txt` are
/// text, everything else binary). When `resolution` is `None` it is inferred
/// as one past the largest coordinate seen.
pub fn read_events(path: impl AsRef<Path>, resolution: Option<(u32, u32)>) -> Result<EventStream> {
    let path = path.as_ref();
    let events = match EventFormat::from_path(path) {
        EventFormat::Csv => read_csv(path)?,
        EventFormat::Binary => read_binary(path)?,
    };
    let (w, h) = resolution.unwrap_or_else(|| {
        events.iter().fold((0, 0), |(w, h), e| {
            (w.max(e.x as u32 + 1), h.max(e.y as u32 + 1))
        })
    });
    EventStream::new(events, w, h)
}

pub fn write_events(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match EventFormat::from_path(path) {
        EventFormat::Csv => encode_csv(stream.events()),
        EventFormat::Binary => encode_binary(stream.events()),
    };
    crate::image::write_atomic(path, &bytes)
}

pub fn encode_csv(events: &[Event]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + events.len() * 20);
    out.extend_from_slice(b"t_ns,x,y,p\n");
    for e in events {
        writeln!(out, "{},{},{},{}", e.t, e.x, e.y, e.p.sign()).unwrap();
    }
    out
}

pub fn encode_binary(events: &[Event]) -> Vec<u8> {
    let mut out = Vec::with_capacity(events.len() * BINARY_RECORD_SIZE);
    for e in events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p.sign() as u8);
        out.extend_from_slice(&[0, 0, 0]);
    }
    out
}

/// Parses one `t_ns,x,y,p` line.
pub fn parse_csv_line(line: &str) -> std::result::Result<Event, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 fields, found {}", fields.len()));
    }
    let t = fields[0]
        .parse::<u64>()
        .map_err(|e| format!("timestamp {:?}: {e}", fields[0]))?;
    let x = fields[1]
        .parse::<u16>()
        .map_err(|e| format!("x {:?}: {e}", fields[1]))?;
    let y = fields[2]
        .parse::<u16>()
        .map_err(|e| format!("y {:?}: {e}", fields[2]))?;
    let p = fields[3]
        .parse::<i64>()
        .ok()
        .and_then(Polarity::from_sign)
        .ok_or_else(|| format!("polarity {:?} is not -1 or 1", fields[3]))?;
    Ok(Event { t, x, y, p })
}

fn read_csv(path: &Path) -> Result<Vec<Event>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut events = Vec::new();
    let mut seen_data = false;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match parse_csv_line(trimmed) {
            Ok(e) => {
                events.push(e);
                seen_data = true;
            }
            // a single leading header line is allowed
            Err(_) if !seen_data && trimmed.chars().next().is_some_and(|c| c.is_alphabetic()) => {
                seen_data = true;
            }
            Err(reason) => {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason,
                })
            }
        }
    }
    Ok(events)
}

fn read_binary(path: &Path) -> Result<Vec<Event>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_binary(&bytes).map_err(|(offset, reason)| Error::Malformed {
        path: path.to_path_buf(),
        line: offset,
        reason,
    })
}

/// Decodes binary records; errors carry the byte offset of the bad record.
pub fn decode_binary(bytes: &[u8]) -> std::result::Result<Vec<Event>, (usize, String)> {
    if !bytes.len().is_multiple_of(BINARY_RECORD_SIZE) {
        return Err((
            bytes.len() - bytes.len() % BINARY_RECORD_SIZE,
            format!("trailing {} bytes", bytes.len() % BINARY_RECORD_SIZE),
        ));
    }
    bytes
        .chunks_exact(BINARY_RECORD_SIZE)
        .enumerate()
        .map(|(i, r)| {
            let offset = i * BINARY_RECORD_SIZE;
            let t = u64::from_le_bytes(r[0..8].try_into().unwrap());
            let x = u16::from_le_bytes([r[8], r[9]]);
            let y = u16::from_le_bytes([r[10], r[11]]);
            let p = Polarity::from_sign(r[12] as i8 as i64)
                .ok_or_else(|| (offset, format!("polarity byte {:#04x}", r[12])))?;
            if r[13..16] != [0, 0, 0] {
                return Err((offset, "non-zero padding".to_string()));
            }
            Ok(Event { t, x, y, p })
        })
        .collect()
}
