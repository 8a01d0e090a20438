//! Observation sequences, decoded state paths, and posterior matrices.

use crate::error::{Error, Result};
use crate::model::StateSpace;

/// Relative tolerance for timestamp uniformity when constructing from
/// explicit instants.
const SPACING_RTOL: f64 = 1e-9;

/// A uniformly sampled excess-CO2 sequence `y[0..=T]` (ppm above ambient).
///
/// Timestamps are `start_min + i * dt_min`. The series owns `T + 1` values;
/// decoding assigns one hidden state per transition, so a decoded path over
/// this series has length `T = len() - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    start_min: f64,
    dt_min: f64,
    y: Vec<f64>,
}

impl ObservationSeries {
    /// Builds a series on the exact uniform grid `start_min + i * dt_min`.
    pub fn new(start_min: f64, dt_min: f64, y: Vec<f64>) -> Result<Self> {
        if y.len() < 2 {
            return Err(Error::SeriesTooShort {
                need: 2,
                got: y.len(),
            });
        }
        if !(dt_min.is_finite() && dt_min > 0.0) {
            return Err(Error::validation(
                "series.dt",
                format!("must be finite and > 0, got {dt_min}"),
            ));
        }
        if !start_min.is_finite() {
            return Err(Error::validation("series.start", "must be finite"));
        }
        for (i, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::validation(
                    "series.y",
                    format!("value at index {i} is not finite ({v})"),
                ));
            }
        }
        Ok(ObservationSeries {
            start_min,
            dt_min,
            y,
        })
    }

    /// Builds a series from explicit timestamps, requiring uniform spacing
    /// within a 1e-9 relative tolerance.
    pub fn from_timestamps(timestamps: &[f64], y: Vec<f64>) -> Result<Self> {
        if timestamps.len() != y.len() {
            return Err(Error::Mismatch {
                what: format!(
                    "{} timestamps vs {} values",
                    timestamps.len(),
                    y.len()
                ),
            });
        }
        if timestamps.len() < 2 {
            return Err(Error::SeriesTooShort {
                need: 2,
                got: timestamps.len(),
            });
        }
        let dt = timestamps[1] - timestamps[0];
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::validation(
                "series.timestamps",
                format!("first spacing must be > 0, got {dt}"),
            ));
        }
        for (i, w) in timestamps.windows(2).enumerate() {
            let gap = w[1] - w[0];
            if (gap - dt).abs() > SPACING_RTOL * dt.abs() {
                return Err(Error::validation(
                    "series.timestamps",
                    format!(
                        "non-uniform spacing at index {}: gap {gap} vs expected {dt}",
                        i + 1
                    ),
                ));
            }
        }
        Self::new(timestamps[0], dt, y)
    }

    /// Number of observations `T + 1`.
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of decoded transitions `T = len() - 1`.
    pub fn num_steps(&self) -> usize {
        self.y.len() - 1
    }

    pub fn dt_min(&self) -> f64 {
        self.dt_min
    }

    pub fn start_min(&self) -> f64 {
        self.start_min
    }

    pub fn timestamp(&self, i: usize) -> f64 {
        self.start_min + i as f64 * self.dt_min
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    /// Returns a copy with every value shifted by `delta` ppm.
    pub fn shifted(&self, delta: f64) -> ObservationSeries {
        ObservationSeries {
            start_min: self.start_min,
            dt_min: self.dt_min,
            y: self.y.iter().map(|v| v + delta).collect(),
        }
    }
}

/// Hard state assignment `S_1..S_T`, one state per observed transition.
///
/// `states[t-1]` explains the transition `y[t-1] -> y[t]`; occupancy and
/// regime are the state-space lookup of each index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedPath {
    pub states: Vec<usize>,
    pub occupancy: Vec<usize>,
    pub regime: Vec<usize>,
}

impl DecodedPath {
    pub fn from_states(states: Vec<usize>, space: &StateSpace) -> Result<Self> {
        let n = space.len();
        for (t, &s) in states.iter().enumerate() {
            if s >= n {
                return Err(Error::validation(
                    "path.states",
                    format!("state index {s} at step {t} out of range (N = {n})"),
                ));
            }
        }
        let occupancy = states.iter().map(|&s| space.occupancy(s)).collect();
        let regime = states.iter().map(|&s| space.regime(s)).collect();
        Ok(DecodedPath {
            states,
            occupancy,
            regime,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Smoothed state posteriors `q[t][i] = P(S_t = i | Y, theta)`, stored
/// row-major with `T` rows of `N` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    n_states: usize,
    q: Vec<f64>,
}

impl PosteriorMatrix {
    /// Wraps a row-major `T x N` buffer, checking that each row is a
    /// probability distribution (sum within 1e-9 of one).
    pub fn new(n_states: usize, q: Vec<f64>) -> Result<Self> {
        if n_states == 0 || q.len() % n_states != 0 || q.is_empty() {
            return Err(Error::validation(
                "posterior",
                format!("buffer of {} entries is not T x {n_states}", q.len()),
            ));
        }
        let m = PosteriorMatrix { n_states, q };
        for t in 0..m.num_steps() {
            let row = m.row(t);
            let mut sum = 0.0;
            for &p in row {
                if !(p.is_finite() && (-1e-12..=1.0 + 1e-9).contains(&p)) {
                    return Err(Error::validation(
                        "posterior",
                        format!("entry out of [0, 1] at step {t}: {p}"),
                    ));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::validation(
                    "posterior",
                    format!("row {t} sums to {sum}, expected 1 within 1e-9"),
                ));
            }
        }
        Ok(m)
    }

    pub fn num_steps(&self) -> usize {
        self.q.len() / self.n_states
    }

    pub fn num_states(&self) -> usize {
        self.n_states
    }

    /// Posterior row for transition `t` (0-based over `0..T`).
    pub fn row(&self, t: usize) -> &[f64] {
        &self.q[t * self.n_states..(t + 1) * self.n_states]
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.q[t * self.n_states + i]
    }

    /// Largest posterior value in row `t`.
    pub fn row_max(&self, t: usize) -> f64 {
        self.row(t).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_rejects_short_and_nonfinite_input() {
        assert!(matches!(
            ObservationSeries::new(0.0, 1.0, vec![1.0]),
            Err(Error::SeriesTooShort { .. })
        ));
        assert!(ObservationSeries::new(0.0, 1.0, vec![1.0, f64::NAN]).is_err());
        assert!(ObservationSeries::new(0.0, 0.0, vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn from_timestamps_enforces_uniform_spacing() {
        let y = vec![1.0, 2.0, 3.0];
        let s = ObservationSeries::from_timestamps(&[0.0, 1.0, 2.0], y.clone()).unwrap();
        assert_eq!(s.dt_min(), 1.0);
        assert_eq!(s.timestamp(2), 2.0);

        assert!(ObservationSeries::from_timestamps(&[0.0, 1.0, 2.5], y.clone()).is_err());
        assert!(ObservationSeries::from_timestamps(&[0.0, 0.0, 1.0], y).is_err());
    }

    #[test]
    fn decoded_path_checks_range_and_derives_labels() {
        let space = StateSpace::enumerate(2, 2);
        let path = DecodedPath::from_states(vec![0, 3, 5], &space).unwrap();
        assert_eq!(path.occupancy, vec![0, 1, 2]);
        assert_eq!(path.regime, vec![0, 1, 1]);
        assert!(DecodedPath::from_states(vec![6], &space).is_err());
    }

    #[test]
    fn posterior_rows_must_normalize() {
        assert!(PosteriorMatrix::new(2, vec![0.5, 0.5, 0.9, 0.1]).is_ok());
        assert!(PosteriorMatrix::new(2, vec![0.5, 0.6]).is_err());
        assert!(PosteriorMatrix::new(2, vec![0.5]).is_err());
        let m = PosteriorMatrix::new(2, vec![0.25, 0.75]).unwrap();
        assert_eq!(m.row_max(0), 0.75);
    }
}
