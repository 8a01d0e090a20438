//! Parameter learning: single-segment AR estimates, posterior-weighted least
//! squares, hard (segmental) updates, and the EM-Viterbi outer loop.
//!
//! The headline fitting path alternates a hard Viterbi decode (E-step) with
//! exact maximum-likelihood updates on the decoded segmentation (M-step), so
//! the complete-data log-likelihood never decreases. A soft Baum-Welch step
//! built on forward-backward posteriors is provided alongside; cross-checking
//! the two paths on the same data is one of the strongest tests of both.

use crate::error::{Error, Result};
use crate::infer::{path_loglikelihood, smooth, viterbi, SequenceModel, Smoothed};
use crate::model::SwitchingARModel;
use crate::series::{DecodedPath, ObservationSeries, PosteriorMatrix};

/// Smallest admissible noise standard deviation (ppm).
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Clamp bounds keeping fitted AR coefficients physical.
const C_MIN: f64 = 1e-6;
const C_MAX: f64 = 1.0 - 1e-9;

/// Condition-number limit for the 2x2 normal equations.
const COND_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iters: usize,
    /// Relative complete-data log-likelihood improvement below which the fit
    /// is declared converged.
    pub tol: f64,
    /// Pool the AR-coefficient regression across all states sharing a
    /// ventilation regime (c depends only on the regime).
    pub tie_c_by_regime: bool,
    /// Pool the residual variance across all states.
    pub tie_sigma_global: bool,
    /// Effective-count floor below which a state keeps its previous
    /// parameters instead of being re-estimated.
    pub min_state_weight: f64,
    /// Pseudo-count added to every transition when re-estimating the
    /// transition matrix. Zero keeps the M-step an exact maximizer.
    pub transition_smoothing: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iters: 50,
            tol: 1e-6,
            tie_c_by_regime: true,
            tie_sigma_global: true,
            min_state_weight: 1e-6,
            transition_smoothing: 0.0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::validation("fit.max_iters", "must be >= 1"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::validation(
                "fit.tol",
                format!("must be > 0, got {}", self.tol),
            ));
        }
        if !(self.min_state_weight.is_finite() && self.min_state_weight >= 0.0) {
            return Err(Error::validation(
                "fit.min_state_weight",
                format!("must be >= 0, got {}", self.min_state_weight),
            ));
        }
        if !(self.transition_smoothing.is_finite() && self.transition_smoothing >= 0.0) {
            return Err(Error::validation(
                "fit.transition_smoothing",
                format!("must be >= 0, got {}", self.transition_smoothing),
            ));
        }
        Ok(())
    }
}

/// Outcome of an EM-Viterbi fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub iterations: usize,
    /// Complete-data log-likelihood after each accepted iteration, starting
    /// with the initial model's own decode. Non-decreasing.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub final_model: SwitchingARModel,
    pub final_path: DecodedPath,
    /// States that kept some previous parameters for lack of data in the
    /// last M-step.
    pub starved_states: Vec<usize>,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// Weighted pair sums
// ---------------------------------------------------------------------------

/// Running sums over weighted (prev, cur) pairs for one state.
#[derive(Debug, Clone, Copy, Default)]
struct PairSums {
    w: f64,
    wx: f64,
    wy: f64,
    wxx: f64,
    wxy: f64,
}

impl PairSums {
    fn add(&mut self, prev: f64, cur: f64, weight: f64) {
        self.w += weight;
        self.wx += weight * prev;
        self.wy += weight * cur;
        self.wxx += weight * prev * prev;
        self.wxy += weight * prev * cur;
    }

    fn mass(&self) -> f64 {
        self.w
    }

    fn mean_prev(&self) -> f64 {
        self.wx / self.w
    }

    fn mean_cur(&self) -> f64 {
        self.wy / self.w
    }

    /// Weighted centered sum of squares of the lagged values.
    fn centered_xx(&self) -> f64 {
        self.wxx - self.wx * self.wx / self.w
    }

    /// Weighted centered cross-sum.
    fn centered_xy(&self) -> f64 {
        self.wxy - self.wx * self.wy / self.w
    }

    /// Solves the 2x2 weighted normal equations for (c, mu), rejecting
    /// ill-conditioned systems by eigenvalue ratio.
    fn solve(&self) -> Option<(f64, f64)> {
        // E = [[wxx, wx], [wx, w]], D = [wxy, wy]
        let (a, b, d) = (self.wxx, self.wx, self.w);
        let tr = a + d;
        let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
        let lo = 0.5 * (tr - disc);
        let hi = 0.5 * (tr + disc);
        if !(lo > 0.0) || hi / lo > COND_LIMIT {
            return None;
        }
        let det = a * d - b * b;
        let c = (d * self.wxy - b * self.wy) / det;
        let mu = (a * self.wy - b * self.wxy) / det;
        if c.is_finite() && mu.is_finite() {
            Some((c, mu))
        } else {
            None
        }
    }
}

fn clamp_c(c: f64) -> f64 {
    c.clamp(C_MIN, C_MAX)
}

// ---------------------------------------------------------------------------
// Public estimators
// ---------------------------------------------------------------------------

/// Ordinary least-squares AR(1)-with-drift estimate on one contiguous
/// segment: `c = Cov(y_t, y_{t-1}) / Var(y_{t-1})`, `mu = mean(y_t) - c * mean(y_{t-1})`.
///
/// The estimates are raw (unclamped). Errors on segments shorter than three
/// observations or with zero lag-variance.
pub fn estimate_ar_single(segment: &[f64]) -> Result<(f64, f64)> {
    if segment.len() < 3 {
        return Err(Error::DegenerateSegment {
            why: format!("need at least 3 observations, got {}", segment.len()),
        });
    }
    let pairs = segment.len() - 1;
    let mean_prev: f64 = segment[..pairs].iter().sum::<f64>() / pairs as f64;
    let mean_cur: f64 = segment[1..].iter().sum::<f64>() / pairs as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..pairs {
        let dx = segment[t] - mean_prev;
        let dy = segment[t + 1] - mean_cur;
        num += dy * dx;
        den += dx * dx;
    }
    if den <= 0.0 {
        return Err(Error::DegenerateSegment {
            why: "zero lag-variance (constant segment)".into(),
        });
    }
    let c = num / den;
    Ok((c, mean_cur - c * mean_prev))
}

/// Posterior-weighted least-squares update for state `i`: solves the 2x2
/// normal equations with weights `q_t(i)` over all transitions.
///
/// Returns the raw weighted estimates. Errors when the weighted system is
/// numerically singular (condition number above 1e12), in which case the
/// caller should keep the previous parameters and flag the state as starved.
pub fn weighted_ls_update(
    series: &ObservationSeries,
    q: &PosteriorMatrix,
    i: usize,
) -> Result<(f64, f64)> {
    let steps = series.num_steps();
    if q.num_steps() != steps {
        return Err(Error::Mismatch {
            what: format!("{} posterior rows vs {} transitions", q.num_steps(), steps),
        });
    }
    if i >= q.num_states() {
        return Err(Error::validation(
            "state index",
            format!("{i} out of range (N = {})", q.num_states()),
        ));
    }
    let y = series.values();
    let mut sums = PairSums::default();
    for t in 0..steps {
        sums.add(y[t], y[t + 1], q.get(t, i));
    }
    sums.solve().ok_or(Error::StarvedState {
        state: i,
        weight: sums.mass(),
    })
}

/// State-weight source for residual-variance updates.
#[derive(Debug, Clone, Copy)]
pub enum StateAssignment<'a> {
    Hard(&'a DecodedPath),
    Soft(&'a PosteriorMatrix),
}

/// Re-estimates per-state noise from weighted mean squared residuals under
/// the model's (c, mu). With `tie_global` the variance is pooled across all
/// states. States with no weight keep the model's current sigma. The result
/// is floored at [`SIGMA_FLOOR`].
pub fn update_sigma(
    series: &ObservationSeries,
    assignment: StateAssignment<'_>,
    model: &SwitchingARModel,
    tie_global: bool,
) -> Result<Vec<f64>> {
    sigma_from_residuals(
        series,
        assignment,
        &model.c,
        &model.mu,
        &model.sigma,
        tie_global,
    )
}

pub(crate) fn sigma_from_residuals(
    series: &ObservationSeries,
    assignment: StateAssignment<'_>,
    c: &[f64],
    mu: &[f64],
    old_sigma: &[f64],
    tie_global: bool,
) -> Result<Vec<f64>> {
    let n = c.len();
    let steps = series.num_steps();
    let y = series.values();
    let mut rss = vec![0.0; n];
    let mut mass = vec![0.0; n];
    match assignment {
        StateAssignment::Hard(path) => {
            if path.len() != steps {
                return Err(Error::Mismatch {
                    what: format!("path length {} vs {} transitions", path.len(), steps),
                });
            }
            for t in 0..steps {
                let i = path.states[t];
                let r = y[t + 1] - c[i] * y[t] - mu[i];
                rss[i] += r * r;
                mass[i] += 1.0;
            }
        }
        StateAssignment::Soft(q) => {
            if q.num_steps() != steps || q.num_states() != n {
                return Err(Error::Mismatch {
                    what: format!(
                        "posterior {}x{} vs {} transitions and {} states",
                        q.num_steps(),
                        q.num_states(),
                        steps,
                        n
                    ),
                });
            }
            for t in 0..steps {
                for i in 0..n {
                    let w = q.get(t, i);
                    if w == 0.0 {
                        continue;
                    }
                    let r = y[t + 1] - c[i] * y[t] - mu[i];
                    rss[i] += w * r * r;
                    mass[i] += w;
                }
            }
        }
    }

    let sigma = if tie_global {
        let total: f64 = mass.iter().sum();
        let pooled = (rss.iter().sum::<f64>() / total).sqrt().max(SIGMA_FLOOR);
        vec![pooled; n]
    } else {
        (0..n)
            .map(|i| {
                if mass[i] > 0.0 {
                    (rss[i] / mass[i]).sqrt().max(SIGMA_FLOOR)
                } else {
                    old_sigma[i].max(SIGMA_FLOOR)
                }
            })
            .collect()
    };
    Ok(sigma)
}

/// Transition-matrix estimate from a hard path: `(count(i->j) + alpha) /
/// (sum_j count(i->j) + N * alpha)`. Rows with no mass fall back to uniform.
pub fn update_transitions(path: &DecodedPath, n_states: usize, alpha: f64) -> Result<Vec<f64>> {
    if path.len() < 2 {
        return Err(Error::SeriesTooShort {
            need: 2,
            got: path.len(),
        });
    }
    let mut counts = vec![0.0; n_states * n_states];
    for w in path.states.windows(2) {
        counts[w[0] * n_states + w[1]] += 1.0;
    }
    let mut trans = vec![0.0; n_states * n_states];
    for i in 0..n_states {
        let row_total: f64 =
            counts[i * n_states..(i + 1) * n_states].iter().sum::<f64>() + n_states as f64 * alpha;
        if row_total > 0.0 {
            for j in 0..n_states {
                trans[i * n_states + j] = (counts[i * n_states + j] + alpha) / row_total;
            }
        } else {
            for j in 0..n_states {
                trans[i * n_states + j] = 1.0 / n_states as f64;
            }
        }
    }
    Ok(trans)
}

// ---------------------------------------------------------------------------
// M-steps
// ---------------------------------------------------------------------------

/// Per-state pair sums under either hard or soft assignment.
fn accumulate_sums(
    series: &ObservationSeries,
    assignment: StateAssignment<'_>,
    n: usize,
) -> Vec<PairSums> {
    let y = series.values();
    let steps = series.num_steps();
    let mut acc = vec![PairSums::default(); n];
    match assignment {
        StateAssignment::Hard(path) => {
            for t in 0..steps {
                acc[path.states[t]].add(y[t], y[t + 1], 1.0);
            }
        }
        StateAssignment::Soft(q) => {
            for t in 0..steps {
                for (i, a) in acc.iter_mut().enumerate() {
                    let w = q.get(t, i);
                    if w > 0.0 {
                        a.add(y[t], y[t + 1], w);
                    }
                }
            }
        }
    }
    acc
}

/// Re-estimates (c, mu) from per-state pair sums, honoring the tying options.
/// Returns the new coefficient vectors plus the starved-state flags.
fn update_coefficients(
    model: &SwitchingARModel,
    acc: &[PairSums],
    opts: &FitOptions,
    weight_floor: f64,
) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let n = model.num_states();
    let mut c = model.c.clone();
    let mut mu = model.mu.clone();
    let mut starved = vec![false; n];

    if opts.tie_c_by_regime {
        for k in 0..model.space.n_regimes() {
            let members: Vec<usize> = (0..n).filter(|&i| model.space.regime(i) == k).collect();
            let mut num = 0.0;
            let mut den = 0.0;
            for &i in &members {
                if acc[i].mass() <= weight_floor {
                    continue;
                }
                // per-state means profiled out; group weight from the
                // current noise level when sigma is per-state
                let g = if opts.tie_sigma_global {
                    1.0
                } else {
                    1.0 / (model.sigma[i] * model.sigma[i])
                };
                num += g * acc[i].centered_xy();
                den += g * acc[i].centered_xx();
            }
            let pooled_c = if den > 0.0 {
                Some(clamp_c(num / den))
            } else {
                None
            };
            for &i in &members {
                match pooled_c {
                    Some(ck) => {
                        c[i] = ck;
                        if acc[i].mass() > weight_floor {
                            mu[i] = acc[i].mean_cur() - ck * acc[i].mean_prev();
                        } else {
                            starved[i] = true;
                        }
                    }
                    None => {
                        // no usable lag-variance anywhere in this regime
                        starved[i] = true;
                        if acc[i].mass() > weight_floor {
                            mu[i] = acc[i].mean_cur() - c[i] * acc[i].mean_prev();
                        }
                    }
                }
            }
        }
    } else {
        for i in 0..n {
            if acc[i].mass() <= weight_floor {
                starved[i] = true;
                continue;
            }
            match acc[i].solve() {
                Some((raw_c, raw_mu)) => {
                    if (C_MIN..=C_MAX).contains(&raw_c) {
                        c[i] = raw_c;
                        mu[i] = raw_mu;
                    } else {
                        // constrained maximum: clamp c, then re-solve mu
                        c[i] = clamp_c(raw_c);
                        mu[i] = acc[i].mean_cur() - c[i] * acc[i].mean_prev();
                    }
                }
                None => starved[i] = true,
            }
        }
    }
    (c, mu, starved)
}

fn starved_indices(starved: &[bool]) -> Vec<usize> {
    starved
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| s.then_some(i))
        .collect()
}

/// Hard (segmental) M-step on a decoded path.
fn m_step_hard(
    model: &SwitchingARModel,
    series: &ObservationSeries,
    path: &DecodedPath,
    opts: &FitOptions,
) -> Result<(SwitchingARModel, Vec<usize>)> {
    let n = model.num_states();
    let acc = accumulate_sums(series, StateAssignment::Hard(path), n);
    let (c, mu, starved) = update_coefficients(model, &acc, opts, 0.0);
    if starved.iter().all(|&s| s) {
        return Err(Error::AllStatesStarved);
    }
    let sigma = sigma_from_residuals(
        series,
        StateAssignment::Hard(path),
        &c,
        &mu,
        &model.sigma,
        opts.tie_sigma_global,
    )?;
    let trans = update_transitions(path, n, opts.transition_smoothing)?;
    let next = SwitchingARModel::new(
        model.physics.clone(),
        model.space.clone(),
        c,
        mu,
        sigma,
        trans,
        model.initial_distribution().to_vec(),
    )?;
    Ok((next, starved_indices(&starved)))
}

/// Soft M-step on forward-backward posteriors.
fn m_step_soft(
    model: &SwitchingARModel,
    series: &ObservationSeries,
    smoothed: &Smoothed,
    opts: &FitOptions,
) -> Result<(SwitchingARModel, Vec<usize>)> {
    let n = model.num_states();
    let q = &smoothed.posterior;
    let acc = accumulate_sums(series, StateAssignment::Soft(q), n);
    let (c, mu, starved) = update_coefficients(model, &acc, opts, opts.min_state_weight);
    if starved.iter().all(|&s| s) {
        return Err(Error::AllStatesStarved);
    }
    let sigma = sigma_from_residuals(
        series,
        StateAssignment::Soft(q),
        &c,
        &mu,
        &model.sigma,
        opts.tie_sigma_global,
    )?;

    // expected-count transition update; rows with negligible mass keep the
    // previous distribution
    let alpha = opts.transition_smoothing;
    let mut trans = vec![0.0; n * n];
    for i in 0..n {
        let xi_row = &smoothed.expected_transitions[i * n..(i + 1) * n];
        let row_total: f64 = xi_row.iter().sum::<f64>() + n as f64 * alpha;
        if row_total > opts.min_state_weight.max(f64::MIN_POSITIVE) {
            for j in 0..n {
                trans[i * n + j] = (xi_row[j] + alpha) / row_total;
            }
        } else {
            trans[i * n..(i + 1) * n].copy_from_slice(model.transition_row(i));
        }
    }

    let next = SwitchingARModel::new(
        model.physics.clone(),
        model.space.clone(),
        c,
        mu,
        sigma,
        trans,
        model.initial_distribution().to_vec(),
    )?;
    Ok((next, starved_indices(&starved)))
}

// ---------------------------------------------------------------------------
// Outer loops
// ---------------------------------------------------------------------------

/// Segmental k-means fit: alternates Viterbi decoding with exact
/// maximum-likelihood updates on the decoded segmentation.
///
/// Stops when the complete-data log-likelihood improves by less than
/// `opts.tol` (relative) or after `opts.max_iters` iterations. The initial
/// state distribution is kept fixed.
pub fn fit_em_viterbi(
    model0: &SwitchingARModel,
    series: &ObservationSeries,
    opts: &FitOptions,
) -> Result<FitReport> {
    opts.validate()?;
    let n = model0.num_states();
    let mut warnings = Vec::new();
    if series.num_steps() < 3 * n {
        warnings.push(format!(
            "series has {} transitions for {} states; at least {} recommended",
            series.num_steps(),
            n,
            3 * n
        ));
    }

    let (mut path, mut loglik) = viterbi(model0, series)?;
    let mut model = model0.clone();
    let mut trace = vec![loglik];
    let mut converged = false;
    let mut iterations = 0;
    let mut starved = Vec::new();

    for iter in 1..=opts.max_iters {
        let (next_model, next_starved) = m_step_hard(&model, series, &path, opts)?;
        let (next_path, next_loglik) = viterbi(&next_model, series)?;

        if next_loglik < loglik - 1e-9 {
            // the exact M-step cannot lower the objective; a drop here means
            // a starved-state interaction, so keep the previous iterate
            warnings.push(format!(
                "stopped at iteration {iter}: log-likelihood would decrease ({next_loglik:.6} < {loglik:.6})"
            ));
            converged = true;
            break;
        }

        let gain = next_loglik - loglik;
        model = next_model;
        path = next_path;
        starved = next_starved;
        trace.push(next_loglik);
        iterations = iter;

        if gain <= opts.tol * loglik.abs().max(1.0) {
            loglik = next_loglik;
            converged = true;
            break;
        }
        loglik = next_loglik;
    }

    Ok(FitReport {
        iterations,
        loglik_trace: trace,
        converged,
        final_model: model,
        final_path: path,
        starved_states: starved,
        warnings,
    })
}

/// One soft EM (Baum-Welch) iteration: forward-backward posteriors, weighted
/// least-squares coefficient updates, soft noise and transition updates.
/// The model evidence `log P(Y | theta)` is non-decreasing under this step.
pub fn fit_baum_welch_step(
    model: &SwitchingARModel,
    series: &ObservationSeries,
    opts: &FitOptions,
) -> Result<SwitchingARModel> {
    opts.validate()?;
    let smoothed = smooth(model, series)?;
    let (next, _) = m_step_soft(model, series, &smoothed, opts)?;
    Ok(next)
}

/// Complete-data log-likelihood of a model/path pair; thin convenience
/// wrapper used when monitoring fits.
pub fn complete_data_loglik(
    model: &SwitchingARModel,
    series: &ObservationSeries,
    path: &DecodedPath,
) -> Result<f64> {
    path_loglikelihood(model, series, path)
}
