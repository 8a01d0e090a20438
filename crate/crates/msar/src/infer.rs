//! Decoding and probability computations for a fixed model.
//!
//! Everything here is generic over [`SequenceModel`] so the switching-AR
//! model and the memoryless Gaussian baseline share one Viterbi and one
//! forward-backward implementation; only the per-step emission density
//! differs. All recursions run in the log domain, so underflow cannot occur
//! regardless of sequence length.
//!
//! The first observation `y[0]` is treated as a conditioning constant (the
//! AR model has no marginal for it); hidden states are decoded for the
//! transitions `t = 1..=T`.

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::model::SwitchingARModel;
use crate::series::{DecodedPath, ObservationSeries, PosteriorMatrix};

/// A hidden-Markov sequence model with one emission per observed transition.
pub trait SequenceModel {
    fn num_states(&self) -> usize;

    fn log_init(&self, i: usize) -> f64;

    fn log_trans(&self, from: usize, to: usize) -> f64;

    /// Log density of observing `y_cur` after `y_prev` while in state `i`.
    fn step_logdensity(&self, i: usize, y_prev: f64, y_cur: f64) -> f64;

    /// (occupancy, regime) interpretation of state `i`, used to label
    /// decoded paths.
    fn state_label(&self, i: usize) -> (usize, usize);
}

impl SequenceModel for SwitchingARModel {
    fn num_states(&self) -> usize {
        self.space.len()
    }

    fn log_init(&self, i: usize) -> f64 {
        self.initial(i).ln()
    }

    fn log_trans(&self, from: usize, to: usize) -> f64 {
        self.transition(from, to).ln()
    }

    fn step_logdensity(&self, i: usize, y_prev: f64, y_cur: f64) -> f64 {
        self.emission_logdensity(i, y_prev, y_cur)
    }

    fn state_label(&self, i: usize) -> (usize, usize) {
        self.space.state(i)
    }
}

/// Per-transition emission table `logb[t][i]`, t in `0..T` for transitions
/// `y[t] -> y[t+1]`.
fn emission_table<M: SequenceModel>(model: &M, series: &ObservationSeries) -> Vec<f64> {
    let n = model.num_states();
    let y = series.values();
    let steps = series.num_steps();
    let mut logb = vec![0.0; steps * n];
    for t in 0..steps {
        for i in 0..n {
            logb[t * n + i] = model.step_logdensity(i, y[t], y[t + 1]);
        }
    }
    logb
}

fn check_series<M: SequenceModel>(model: &M, series: &ObservationSeries) -> Result<()> {
    if series.len() < 2 {
        return Err(Error::SeriesTooShort {
            need: 2,
            got: series.len(),
        });
    }
    if model.num_states() == 0 {
        return Err(Error::validation("model", "no states"));
    }
    Ok(())
}

/// Most likely state sequence and its joint log-probability.
///
/// Maximizes `log pi(S_1) + sum log b(S_t) + sum log Lambda(S_{t-1}, S_t)`.
/// Ties are broken toward the lowest state index, making the output
/// deterministic.
pub fn viterbi<M: SequenceModel>(
    model: &M,
    series: &ObservationSeries,
) -> Result<(DecodedPath, f64)> {
    check_series(model, series)?;
    let n = model.num_states();
    let steps = series.num_steps();
    let logb = emission_table(model, series);

    let mut delta = vec![f64::NEG_INFINITY; n];
    let mut delta_next = vec![f64::NEG_INFINITY; n];
    let mut backptr = vec![0usize; steps * n];

    for i in 0..n {
        delta[i] = model.log_init(i) + logb[i];
    }
    for t in 1..steps {
        for j in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0usize;
            for i in 0..n {
                let score = delta[i] + model.log_trans(i, j);
                if score > best {
                    best = score;
                    arg = i;
                }
            }
            delta_next[j] = best + logb[t * n + j];
            backptr[t * n + j] = arg;
        }
        std::mem::swap(&mut delta, &mut delta_next);
    }

    let mut best = f64::NEG_INFINITY;
    let mut last = 0usize;
    for (i, &score) in delta.iter().enumerate() {
        if score > best {
            best = score;
            last = i;
        }
    }
    if !best.is_finite() {
        return Err(Error::Numerical(
            "no admissible state sequence (all paths have zero probability)".into(),
        ));
    }

    let mut states = vec![0usize; steps];
    states[steps - 1] = last;
    for t in (1..steps).rev() {
        states[t - 1] = backptr[t * n + states[t]];
    }

    let occupancy = states.iter().map(|&s| model.state_label(s).0).collect();
    let regime = states.iter().map(|&s| model.state_label(s).1).collect();
    Ok((
        DecodedPath {
            states,
            occupancy,
            regime,
        },
        best,
    ))
}

/// Smoothed posteriors and pairwise transition statistics from one
/// forward-backward sweep.
pub struct Smoothed {
    pub posterior: PosteriorMatrix,
    pub log_evidence: f64,
    /// Expected transition counts `xi[i][j] = sum_t P(S_t = i, S_{t+1} = j | Y)`,
    /// row-major N x N.
    pub expected_transitions: Vec<f64>,
}

/// Exact smoothed state posteriors `q_t(i) = P(S_t = i | Y, theta)` and the
/// log evidence `log P(Y | theta)`.
pub fn forward_backward<M: SequenceModel>(
    model: &M,
    series: &ObservationSeries,
) -> Result<(PosteriorMatrix, f64)> {
    let s = smooth(model, series)?;
    Ok((s.posterior, s.log_evidence))
}

/// Forward-backward with pairwise expected transition counts, as needed by
/// the soft (Baum-Welch) parameter updates.
pub fn smooth<M: SequenceModel>(model: &M, series: &ObservationSeries) -> Result<Smoothed> {
    check_series(model, series)?;
    let n = model.num_states();
    let steps = series.num_steps();
    let logb = emission_table(model, series);

    // log-domain forward/backward
    let mut log_alpha = vec![f64::NEG_INFINITY; steps * n];
    for i in 0..n {
        log_alpha[i] = model.log_init(i) + logb[i];
    }
    let mut work = vec![0.0; n];
    for t in 1..steps {
        for j in 0..n {
            for (i, w) in work.iter_mut().enumerate() {
                *w = log_alpha[(t - 1) * n + i] + model.log_trans(i, j);
            }
            log_alpha[t * n + j] = log_sum_exp(&work) + logb[t * n + j];
        }
    }
    let log_evidence = log_sum_exp(&log_alpha[(steps - 1) * n..steps * n]);
    if !log_evidence.is_finite() {
        return Err(Error::Numerical(
            "zero total evidence: the model assigns no probability to the series".into(),
        ));
    }

    let mut log_beta = vec![0.0; steps * n];
    for t in (0..steps - 1).rev() {
        for i in 0..n {
            for (j, w) in work.iter_mut().enumerate() {
                *w = model.log_trans(i, j) + logb[(t + 1) * n + j] + log_beta[(t + 1) * n + j];
            }
            log_beta[t * n + i] = log_sum_exp(&work);
        }
    }

    let mut q = vec![0.0; steps * n];
    for t in 0..steps {
        for i in 0..n {
            q[t * n + i] = (log_alpha[t * n + i] + log_beta[t * n + i] - log_evidence).exp();
        }
        // kill residual round-off so each row is an exact distribution
        let sum: f64 = q[t * n..(t + 1) * n].iter().sum();
        for v in &mut q[t * n..(t + 1) * n] {
            *v /= sum;
        }
    }

    let mut xi = vec![0.0; n * n];
    for t in 0..steps - 1 {
        for i in 0..n {
            let a = log_alpha[t * n + i];
            if a == f64::NEG_INFINITY {
                continue;
            }
            for j in 0..n {
                let v = a
                    + model.log_trans(i, j)
                    + logb[(t + 1) * n + j]
                    + log_beta[(t + 1) * n + j]
                    - log_evidence;
                xi[i * n + j] += v.exp();
            }
        }
    }

    Ok(Smoothed {
        posterior: PosteriorMatrix::new(n, q)?,
        log_evidence,
        expected_transitions: xi,
    })
}

/// Complete-data log-likelihood of a (path, observations) pair, including
/// the initial-state term.
pub fn path_loglikelihood<M: SequenceModel>(
    model: &M,
    series: &ObservationSeries,
    path: &DecodedPath,
) -> Result<f64> {
    check_series(model, series)?;
    let steps = series.num_steps();
    if path.len() != steps {
        return Err(Error::Mismatch {
            what: format!("path length {} vs {} transitions", path.len(), steps),
        });
    }
    let y = series.values();
    let mut total = model.log_init(path.states[0]);
    for t in 0..steps {
        let s = path.states[t];
        total += model.step_logdensity(s, y[t], y[t + 1]);
        if t > 0 {
            total += model.log_trans(path.states[t - 1], s);
        }
    }
    Ok(total)
}
