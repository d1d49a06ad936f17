//! Asynchronous event streams and their voxel-grid encoding.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BINS: usize = 4;
/// Half width of the event window around a frame timestamp, in seconds.
pub const DEFAULT_HALF_WINDOW: f64 = 0.015;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub x: u16,
    pub y: u16,
    pub polarity: i8,
}

/// Time-sorted events over an `height x width` sensor within `[t0, t1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    height: u16,
    width: u16,
    t0: f64,
    t1: f64,
}

impl EventStream {
    pub fn new(height: u16, width: u16, t0: f64, t1: f64, events: Vec<Event>) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite()) || t1 < t0 {
            return Err(Error::InvalidArgument(format!("invalid window [{t0}, {t1}]")));
        }
        for (i, e) in events.iter().enumerate() {
            if e.x >= width || e.y >= height {
                return Err(Error::InvalidArgument(format!(
                    "event {i} at (x={}, y={}) outside {height}x{width} sensor",
                    e.x, e.y
                )));
            }
            if e.polarity != 1 && e.polarity != -1 {
                return Err(Error::InvalidArgument(format!("event {i} has polarity {}", e.polarity)));
            }
            if !(t0..=t1).contains(&e.t) {
                return Err(Error::InvalidArgument(format!("event {i} at t={} outside [{t0}, {t1}]", e.t)));
            }
            if i > 0 && events[i - 1].t > e.t {
                return Err(Error::InvalidArgument(format!("event {i} breaks time order")));
            }
        }
        Ok(EventStream { events, height, width, t0, t1 })
    }

    pub fn empty(height: u16, width: u16, t0: f64, t1: f64) -> Result<Self> {
        Self::new(height, width, t0, t1, Vec::new())
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

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn window(&self) -> (f64, f64) {
        (self.t0, self.t1)
    }

    /// Temporal bin of time `t` among `bins` equal slices of the window.
    pub fn bin_of(&self, t: f64, bins: usize) -> usize {
        let frac = (t - self.t0) / (self.t1 - self.t0);
        ((bins as f64 * frac).floor().max(0.0) as usize).min(bins - 1)
    }

    /// Signed-count voxel grid `[bins, H, W]`: each event adds its polarity to
    /// the cell of its temporal bin.
    pub fn voxelize(&self, bins: usize) -> Result<Tensor> {
        if bins == 0 {
            return Err(Error::InvalidArgument("voxelize needs at least one bin".into()));
        }
        if self.t1 <= self.t0 {
            return Err(Error::InvalidArgument(format!("empty window [{}, {}]", self.t0, self.t1)));
        }
        let (h, w) = (self.height as usize, self.width as usize);
        let mut grid = Tensor::zeros(&[bins, h, w]);
        let cells = grid.data_mut();
        for e in &self.events {
            let b = self.bin_of(e.t, bins);
            cells[(b * h + e.y as usize) * w + e.x as usize] += e.polarity as f64;
        }
        Ok(grid)
    }

    /// Events with `t` in the closed interval `[t_center - half_width, t_center + half_width]`.
    pub fn window_select(&self, t_center: f64, half_width: f64) -> Result<EventStream> {
        if half_width.is_nan() || half_width <= 0.0 {
            return Err(Error::InvalidArgument(format!("half width must be positive, got {half_width}")));
        }
        let (lo, hi) = (t_center - half_width, t_center + half_width);
        let events = self.events.iter().filter(|e| e.t >= lo && e.t <= hi).copied().collect();
        Ok(EventStream { events, height: self.height, width: self.width, t0: lo, t1: hi })
    }
}
