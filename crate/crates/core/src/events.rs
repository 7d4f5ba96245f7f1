//! Event streams, fixed-window stacking into event frames, and a
//! log-intensity threshold event synthesizer.
//!
//! Streams serialize to the `EVS1` record format (little-endian):
//! `"EVS1"`, `u16` width, `u16` height, then per event `u16 x`, `u16 y`,
//! `f64 t`, `i8 p`.

use std::io::{self, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{invalid_arg, Error, Result};
use crate::io::{read_file, write_atomic};
use crate::tensor::{Real, Tensor};

/// Window length giving the 8 Hz frame rate of the sensor rig.
pub const DEFAULT_WINDOW: f64 = 0.125;

/// Contrast threshold for triggering an event.
pub const DEFAULT_THRESHOLD: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    #[inline]
    pub fn sign(self) -> i32 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    pub fn from_sign(p: i8) -> Option<Self> {
        match p {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::On => Polarity::Off,
            Polarity::Off => Polarity::On,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// Seconds.
    pub t: f64,
    pub p: Polarity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub width: usize,
    pub height: usize,
    pub t_start: f64,
    pub t_end: f64,
}

impl EventStream {
    /// Validates ordering, bounds and the time range.
    pub fn new(events: Vec<Event>, (width, height): (usize, usize), t_start: f64, t_end: f64) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) || t_end < t_start || t_start < 0.0 {
            return Err(invalid_arg!("bad stream time range [{t_start}, {t_end}]"));
        }
        if width == 0 || height == 0 || width > u16::MAX as usize || height > u16::MAX as usize {
            return Err(invalid_arg!("bad sensor resolution {width}×{height}"));
        }
        let stream = EventStream {
            events,
            width,
            height,
            t_start,
            t_end,
        };
        stream.check_bounds()?;
        if stream.events.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::InvalidData("events are not sorted by time".into()));
        }
        if let Some(e) = stream.events.iter().find(|e| e.t < t_start || e.t > t_end) {
            return Err(Error::InvalidData(format!(
                "event at t={} outside [{t_start}, {t_end}]",
                e.t
            )));
        }
        Ok(stream)
    }

    pub fn empty((width, height): (usize, usize), t_start: f64, t_end: f64) -> Result<Self> {
        Self::new(Vec::new(), (width, height), t_start, t_end)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    fn check_bounds(&self) -> Result<()> {
        match self
            .events
            .iter()
            .find(|e| e.x as usize >= self.width || e.y as usize >= self.height)
        {
            Some(e) => Err(Error::InvalidData(format!(
                "event at ({}, {}) outside {}×{} sensor",
                e.x, e.y, self.width, self.height
            ))),
            None => Ok(()),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(b"EVS1")?;
        w.write_u16::<LittleEndian>(self.width as u16)?;
        w.write_u16::<LittleEndian>(self.height as u16)?;
        for e in &self.events {
            w.write_u16::<LittleEndian>(e.x)?;
            w.write_u16::<LittleEndian>(e.y)?;
            w.write_f64::<LittleEndian>(e.t)?;
            w.write_i8(e.p.sign() as i8)?;
        }
        Ok(())
    }

    /// Reads an `EVS1` stream. The format carries no time window, so the
    /// caller supplies it.
    pub fn read_from<R: Read>(mut r: R, t_start: f64, t_end: f64) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"EVS1" {
            return Err(Error::InvalidData("not an EVS1 event file".into()));
        }
        let width = r.read_u16::<LittleEndian>()? as usize;
        let height = r.read_u16::<LittleEndian>()? as usize;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if rest.len() % 13 != 0 {
            return Err(Error::InvalidData("truncated EVS1 record".into()));
        }
        let mut events = Vec::with_capacity(rest.len() / 13);
        let mut cur = &rest[..];
        while !cur.is_empty() {
            let x = cur.read_u16::<LittleEndian>()?;
            let y = cur.read_u16::<LittleEndian>()?;
            let t = cur.read_f64::<LittleEndian>()?;
            let p = cur.read_i8()?;
            let p = Polarity::from_sign(p).ok_or_else(|| Error::InvalidData(format!("bad polarity byte {p}")))?;
            events.push(Event { x, y, t, p });
        }
        Self::new(events, (width, height), t_start, t_end)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(8 + 13 * self.events.len());
        self.write_to(&mut buf)?;
        write_atomic(path, &buf)
    }

    pub fn load(path: &Path, t_start: f64, t_end: f64) -> Result<Self> {
        Self::read_from(&read_file(path)?[..], t_start, t_end)
    }
}

/// One stacking window. `on`/`off` hold per-pixel event counts by polarity;
/// `data` is their signed difference scaled by the frame's maximum absolute
/// value into `[-1, 1]` (all zero when the window is empty).
#[derive(Clone, Debug, PartialEq)]
pub struct EventFrame {
    pub width: usize,
    pub height: usize,
    pub window: (f64, f64),
    pub on: Vec<u32>,
    pub off: Vec<u32>,
    pub data: Vec<f32>,
}

impl EventFrame {
    fn empty(width: usize, height: usize, window: (f64, f64)) -> Self {
        let n = width * height;
        EventFrame {
            width,
            height,
            window,
            on: vec![0; n],
            off: vec![0; n],
            data: vec![0.0; n],
        }
    }

    /// Signed polarity sum per pixel, before normalization.
    pub fn raw(&self) -> Vec<i64> {
        self.on
            .iter()
            .zip(&self.off)
            .map(|(&a, &b)| a as i64 - b as i64)
            .collect()
    }

    /// Number of events accumulated into the frame.
    pub fn event_count(&self) -> u64 {
        self.on.iter().chain(&self.off).map(|&v| v as u64).sum()
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    fn normalize(&mut self) {
        let raw = self.raw();
        let max = raw.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0);
        self.data = if max == 0 {
            vec![0.0; raw.len()]
        } else {
            raw.iter().map(|&v| v as f32 / max as f32).collect()
        };
    }
}

/// Number of windows of length `delta_t` covering `[t_start, t_end]`, at least one.
pub fn window_count(t_start: f64, t_end: f64, delta_t: f64) -> usize {
    let ratio = (t_end - t_start) / delta_t;
    // absorb representation error such as 1.0 / 0.125 landing a hair above 8
    ((ratio - 1e-9).ceil().max(1.0)) as usize
}

/// Window index for time `t`; windows are `(t0, t1]`, the first one also
/// containing `t_start` itself.
pub fn window_index(t: f64, t_start: f64, delta_t: f64, n: usize) -> usize {
    let n = n as i64;
    let mut i = (((t - t_start) / delta_t).ceil() as i64 - 1).clamp(0, n - 1);
    while i + 1 < n && t > t_start + (i + 1) as f64 * delta_t {
        i += 1;
    }
    while i > 0 && t <= t_start + i as f64 * delta_t {
        i -= 1;
    }
    i as usize
}

/// Stacks the stream into consecutive `delta_t` windows of signed polarity sums.
pub fn stack_events(stream: &EventStream, delta_t: f64) -> Result<Vec<EventFrame>> {
    if !(delta_t > 0.0 && delta_t.is_finite()) {
        return Err(invalid_arg!("delta_t must be positive, got {delta_t}"));
    }
    stream.check_bounds()?;
    let n = window_count(stream.t_start, stream.t_end, delta_t);
    let mut frames: Vec<EventFrame> = (0..n)
        .map(|i| {
            let t0 = stream.t_start + i as f64 * delta_t;
            EventFrame::empty(stream.width, stream.height, (t0, t0 + delta_t))
        })
        .collect();
    for e in &stream.events {
        let i = window_index(e.t, stream.t_start, delta_t, n);
        let px = e.y as usize * stream.width + e.x as usize;
        match e.p {
            Polarity::On => frames[i].on[px] += 1,
            Polarity::Off => frames[i].off[px] += 1,
        }
    }
    for f in &mut frames {
        f.normalize();
    }
    Ok(frames)
}

/// Emits `⌊|Δ|/threshold⌋` events per pixel with polarity `sign(Δ)`, where
/// `Δ = next − prev` in log intensity, spread evenly over `(t0, t1]`.
pub fn synthesize_events<T: Real>(
    log_prev: &Tensor<T>,
    log_next: &Tensor<T>,
    threshold: f64,
    t0: f64,
    t1: f64,
) -> Result<EventStream> {
    if !log_prev.same_shape(log_next) || log_prev.c != 1 {
        return Err(invalid_arg!(
            "log-intensity shapes differ or are not single-channel: {:?} vs {:?}",
            log_prev.shape(),
            log_next.shape()
        ));
    }
    if !(threshold > 0.0) {
        return Err(invalid_arg!("threshold must be positive, got {threshold}"));
    }
    if !(t1 > t0) {
        return Err(invalid_arg!("empty synthesis window ({t0}, {t1}]"));
    }
    let (h, w) = (log_prev.h, log_prev.w);
    let span = t1 - t0;
    let mut events = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let d = log_next.at(0, y, x).as_f64() - log_prev.at(0, y, x).as_f64();
            let n = (d.abs() / threshold).floor() as usize;
            if n == 0 {
                continue;
            }
            let p = if d > 0.0 { Polarity::On } else { Polarity::Off };
            for j in 0..n {
                let t = if j + 1 == n {
                    t1
                } else {
                    t0 + span * (j + 1) as f64 / n as f64
                };
                events.push(Event {
                    x: x as u16,
                    y: y as u16,
                    t,
                    p,
                });
            }
        }
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    EventStream::new(events, (w, h), t0, t1)
}

/// Replicates a normalized frame into a `channels × H × W` network input.
pub fn event_frame_to_input(frame: &EventFrame, channels: usize) -> Result<Tensor<f32>> {
    if channels != 1 && channels != 3 {
        return Err(invalid_arg!("event input supports 1 or 3 channels, got {channels}"));
    }
    let plane = Tensor::from_vec(1, frame.height, frame.width, frame.data.clone())?;
    Ok(plane.replicate_channels(channels))
}
