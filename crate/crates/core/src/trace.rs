//! Uniformly sampled time series and their CSV representation.
//!
//! A [`Trace`] stores a uniform time grid as `(t0, dt, n)` so that
//! uniformity holds by construction. The on-disk format is a two-column
//! CSV with header `t_s,value`; the reader accepts up to 1% jitter in the
//! time stamps and resamples by linear interpolation otherwise.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Relative jitter in `dt` tolerated by the CSV reader before it resamples.
const GRID_JITTER_TOLERANCE: f64 = 0.01;

/// A uniform time grid: samples at `t0 + i * dt` for `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    dt: f64,
    n: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::parameter(format!("grid step must be positive, got {dt}")));
        }
        if n < 2 {
            return Err(Error::parameter(format!("grid needs at least 2 samples, got {n}")));
        }
        if !t0.is_finite() {
            return Err(Error::parameter(format!("grid origin must be finite, got {t0}")));
        }
        Ok(TimeGrid { t0, dt, n })
    }

    /// Grid covering `[0, t_end]` with step `dt` (last point at or just past `t_end`).
    pub fn from_span(dt: f64, t_end: f64) -> Result<Self> {
        if !(t_end > 0.0) {
            return Err(Error::parameter(format!("span end must be positive, got {t_end}")));
        }
        let n = (t_end / dt).round() as usize + 1;
        TimeGrid::new(0.0, dt, n.max(2))
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false // n >= 2 by construction
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.n - 1)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.time(i))
    }
}

/// A uniformly sampled, unit-tagged time series.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    grid: TimeGrid,
    values: Vec<f64>,
    unit_label: String,
}

impl Trace {
    pub fn new(grid: TimeGrid, values: Vec<f64>, unit_label: impl Into<String>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::parameter(format!(
                "trace has {} values for a grid of {} samples",
                values.len(),
                grid.len()
            )));
        }
        Ok(Trace { grid, values, unit_label: unit_label.into() })
    }

    /// Build a trace from explicit sample times.
    ///
    /// Times must be strictly increasing. If the step jitter exceeds 1% of
    /// the mean step, the values are resampled onto a uniform grid spanning
    /// the same interval by linear interpolation.
    pub fn from_points(t: &[f64], y: &[f64], unit_label: impl Into<String>) -> Result<Self> {
        if t.len() != y.len() {
            return Err(Error::data(format!(
                "time and value columns differ in length ({} vs {})",
                t.len(),
                y.len()
            )));
        }
        if t.len() < 2 {
            return Err(Error::data(format!("trace needs at least 2 samples, got {}", t.len())));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::data("time stamps are not strictly increasing"));
        }
        let n = t.len();
        let mean_dt = (t[n - 1] - t[0]) / (n - 1) as f64;
        let max_jitter = t
            .windows(2)
            .map(|w| ((w[1] - w[0]) - mean_dt).abs())
            .fold(0.0_f64, f64::max);

        let grid = TimeGrid::new(t[0], mean_dt, n)?;
        if max_jitter <= GRID_JITTER_TOLERANCE * mean_dt {
            return Trace::new(grid, y.to_vec(), unit_label);
        }

        // Non-uniform input: resample by linear interpolation.
        let mut resampled = Vec::with_capacity(n);
        let mut seg = 0usize;
        for i in 0..n {
            let ti = grid.time(i).min(t[n - 1]);
            while seg + 2 < n && t[seg + 1] < ti {
                seg += 1;
            }
            let (ta, tb) = (t[seg], t[seg + 1]);
            let frac = ((ti - ta) / (tb - ta)).clamp(0.0, 1.0);
            resampled.push(y[seg] + frac * (y[seg + 1] - y[seg]));
        }
        Trace::new(grid, resampled, unit_label)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn t0(&self) -> f64 {
        self.grid.t0
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.grid.time(i)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn unit_label(&self) -> &str {
        &self.unit_label
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().enumerate().map(move |(i, &v)| (self.grid.time(i), v))
    }

    /// Read a trace from `t_s,value` CSV.
    pub fn read_csv<R: Read>(reader: R, unit_label: impl Into<String>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        {
            let headers = rdr.headers().map_err(|e| Error::data(format!("bad CSV header: {e}")))?;
            if headers.len() < 2 || &headers[0] != "t_s" || &headers[1] != "value" {
                return Err(Error::data(format!(
                    "expected CSV header `t_s,value`, got `{}`",
                    headers.iter().collect::<Vec<_>>().join(",")
                )));
            }
        }
        let mut t = Vec::new();
        let mut y = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::data(format!("bad CSV row {}: {e}", row + 2)))?;
            let parse = |field: &str, name: &str| {
                field.trim().parse::<f64>().map_err(|_| {
                    Error::data(format!("row {}: cannot parse {name} `{field}`", row + 2))
                })
            };
            t.push(parse(&record[0], "t_s")?);
            y.push(parse(&record[1], "value")?);
        }
        Trace::from_points(&t, &y, unit_label)
    }

    /// Write the trace as `t_s,value` CSV. Floats use the shortest
    /// round-trip representation, so output is byte-stable.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["t_s", "value"]).map_err(io_err)?;
        for (t, v) in self.iter() {
            wtr.write_record(&[fmt_f64(t), fmt_f64(v)]).map_err(io_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn io_err(e: csv::Error) -> Error {
    Error::Data(format!("CSV write failed: {e}"))
}

/// Centered moving average with half-width `(window - 1) / 2`, truncated
/// symmetrically near the ends so linear signals pass through unchanged.
pub(crate) fn moving_average_symmetric(y: &[f64], window: usize) -> Vec<f64> {
    let n = y.len();
    let h0 = window.saturating_sub(1) / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let h = h0.min(i).min(n - 1 - i);
        let slice = &y[i - h..=i + h];
        out.push(slice.iter().sum::<f64>() / slice.len() as f64);
    }
    out
}
