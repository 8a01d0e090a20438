//! Core model types: physical configuration, hidden-state space, and the
//! switching AR(1) model itself.
//!
//! The hidden state combines an occupancy level with a ventilation regime.
//! For regime `k` with ventilation time `tau_k` and time step `dt`, one step
//! of the excess-CO2 dynamics integrates exactly to
//!
//! ```text
//! y[t+1] = c_k * y[t] + (1 - c_k) * tau_k * r * n,    c_k = exp(-dt / tau_k)
//! ```
//!
//! so the AR coefficient `c` depends only on the regime while the drift
//! `mu = (1 - c) * tau * r * n` is proportional to the occupancy `n`. The
//! fixed point of the noise-free recursion is the physical steady state
//! `y = tau * r * n`.

use crate::error::{Error, Result};
use crate::math::gaussian_logpdf;

/// Row-sum tolerance for stochastic vectors and matrix rows.
const PROB_TOL: f64 = 1e-12;

/// Physical room parameters.
///
/// `regimes` lists one ventilation time (minutes) per discrete ventilation
/// regime; `person_rate` is the per-person CO2 generation rate in ppm/minute;
/// `dt_min` is the sampling interval in minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsConfig {
    pub ambient_co2: f64,
    pub regimes: Vec<f64>,
    pub person_rate: f64,
    pub dt_min: f64,
    pub max_occupancy: usize,
}

impl PhysicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ambient_co2.is_finite() && self.ambient_co2 >= 0.0) {
            return Err(Error::validation(
                "physics.ambient_co2",
                format!("must be finite and >= 0, got {}", self.ambient_co2),
            ));
        }
        if self.regimes.is_empty() {
            return Err(Error::validation("physics.tau", "regime list is empty"));
        }
        for (k, &tau) in self.regimes.iter().enumerate() {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(Error::validation(
                    "physics.tau",
                    format!("tau[{k}] must be finite and > 0, got {tau}"),
                ));
            }
        }
        for (a, &ta) in self.regimes.iter().enumerate() {
            for &tb in self.regimes.iter().skip(a + 1) {
                if ta == tb {
                    return Err(Error::validation(
                        "physics.tau",
                        format!("regime ventilation times must be distinct, found {ta} twice"),
                    ));
                }
            }
        }
        if !(self.person_rate.is_finite() && self.person_rate > 0.0) {
            return Err(Error::validation(
                "physics.person_rate",
                format!("must be finite and > 0, got {}", self.person_rate),
            ));
        }
        if !(self.dt_min.is_finite() && self.dt_min > 0.0) {
            return Err(Error::validation(
                "physics.dt",
                format!("must be finite and > 0, got {}", self.dt_min),
            ));
        }
        if self.max_occupancy < 1 {
            return Err(Error::validation(
                "physics.max_occupancy",
                "must be >= 1 (use occupancy levels 0..=max_occupancy)",
            ));
        }
        Ok(())
    }

    /// AR coefficient for regime `k`: `exp(-dt / tau_k)`.
    pub fn ar_coefficient(&self, regime: usize) -> f64 {
        (-self.dt_min / self.regimes[regime]).exp()
    }

    /// Drift for occupancy `n` under regime `k`: `(1 - c) * tau * r * n`.
    pub fn drift(&self, occupancy: usize, regime: usize) -> f64 {
        let tau = self.regimes[regime];
        let c = self.ar_coefficient(regime);
        (1.0 - c) * tau * self.person_rate * occupancy as f64
    }

    /// Steady-state excess concentration for constant occupancy `n`: `tau * r * n`.
    pub fn steady_state(&self, occupancy: usize, regime: usize) -> f64 {
        self.regimes[regime] * self.person_rate * occupancy as f64
    }
}

/// Enumeration of hidden states as (occupancy, regime) pairs.
///
/// States are ordered occupancy-major: index `i = occupancy * n_regimes + regime`.
/// The ordering is fixed so serialized models are portable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    states: Vec<(usize, usize)>,
    max_occupancy: usize,
    n_regimes: usize,
}

/// Builds the full state space of a physics configuration:
/// `(max_occupancy + 1) * n_regimes` states, occupancy-major.
pub fn build_state_space(physics: &PhysicsConfig) -> Result<StateSpace> {
    physics.validate()?;
    Ok(StateSpace::enumerate(
        physics.max_occupancy,
        physics.regimes.len(),
    ))
}

impl StateSpace {
    /// Enumerates states for occupancy levels `0..=max_occupancy` and
    /// `n_regimes` regimes, without physics validation.
    pub fn enumerate(max_occupancy: usize, n_regimes: usize) -> Self {
        let mut states = Vec::with_capacity((max_occupancy + 1) * n_regimes);
        for n in 0..=max_occupancy {
            for k in 0..n_regimes {
                states.push((n, k));
            }
        }
        StateSpace {
            states,
            max_occupancy,
            n_regimes,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn max_occupancy(&self) -> usize {
        self.max_occupancy
    }

    pub fn n_regimes(&self) -> usize {
        self.n_regimes
    }

    /// (occupancy, regime) of state `index`. Panics if out of range.
    pub fn state(&self, index: usize) -> (usize, usize) {
        self.states[index]
    }

    pub fn occupancy(&self, index: usize) -> usize {
        self.states[index].0
    }

    pub fn regime(&self, index: usize) -> usize {
        self.states[index].1
    }

    /// State index of an (occupancy, regime) pair, if in range.
    pub fn index_of(&self, occupancy: usize, regime: usize) -> Option<usize> {
        if occupancy <= self.max_occupancy && regime < self.n_regimes {
            Some(occupancy * self.n_regimes + regime)
        } else {
            None
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, (usize, usize))> + '_ {
        self.states.iter().copied().enumerate()
    }
}

/// Switching auto-regressive model of order one with Markov regime.
///
/// Per state `i`: AR coefficient `c[i]`, drift `mu[i]` (ppm) and noise
/// standard deviation `sigma[i]` (ppm). `trans` is the row-stochastic N x N
/// transition matrix stored row-major; `init` the initial state distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingARModel {
    pub physics: PhysicsConfig,
    pub space: StateSpace,
    pub c: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    trans: Vec<f64>,
    init: Vec<f64>,
}

impl SwitchingARModel {
    /// Builds a model from explicit parameters, checking every invariant.
    pub fn new(
        physics: PhysicsConfig,
        space: StateSpace,
        c: Vec<f64>,
        mu: Vec<f64>,
        sigma: Vec<f64>,
        trans: Vec<f64>,
        init: Vec<f64>,
    ) -> Result<Self> {
        physics.validate()?;
        let n = space.len();
        if space.max_occupancy() != physics.max_occupancy
            || space.n_regimes() != physics.regimes.len()
        {
            return Err(Error::validation(
                "model.space",
                "state space does not match the physics configuration",
            ));
        }
        for (name, v) in [("c", &c), ("mu", &mu), ("sigma", &sigma)] {
            if v.len() != n {
                return Err(Error::validation(
                    format!("model.{name}"),
                    format!("expected {n} entries, got {}", v.len()),
                ));
            }
        }
        for (i, &ci) in c.iter().enumerate() {
            if !(ci.is_finite() && ci > 0.0 && ci < 1.0) {
                return Err(Error::validation(
                    "model.c",
                    format!("c[{i}] must lie strictly in (0, 1), got {ci}"),
                ));
            }
        }
        for (i, &m) in mu.iter().enumerate() {
            if !m.is_finite() {
                return Err(Error::validation("model.mu", format!("mu[{i}] = {m}")));
            }
        }
        for (i, &s) in sigma.iter().enumerate() {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::validation(
                    "model.sigma",
                    format!("sigma[{i}] must be > 0, got {s}"),
                ));
            }
        }
        check_stochastic_matrix(&trans, n)?;
        check_stochastic_vector(&init, n, "model.init")?;
        Ok(SwitchingARModel {
            physics,
            space,
            c,
            mu,
            sigma,
            trans,
            init,
        })
    }

    pub fn num_states(&self) -> usize {
        self.space.len()
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.trans[from * self.space.len() + to]
    }

    pub fn transition_row(&self, from: usize) -> &[f64] {
        let n = self.space.len();
        &self.trans[from * n..(from + 1) * n]
    }

    pub fn transition_matrix(&self) -> &[f64] {
        &self.trans
    }

    pub fn initial(&self, i: usize) -> f64 {
        self.init[i]
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.init
    }

    /// Replaces the transition matrix, re-checking row stochasticity.
    pub fn set_transitions(&mut self, trans: Vec<f64>) -> Result<()> {
        check_stochastic_matrix(&trans, self.space.len())?;
        self.trans = trans;
        Ok(())
    }

    /// Log Gaussian density of `y_cur` given state `i` and previous value
    /// `y_prev`: mean `c[i] * y_prev + mu[i]`, standard deviation `sigma[i]`.
    pub fn emission_logdensity(&self, i: usize, y_prev: f64, y_cur: f64) -> f64 {
        gaussian_logpdf(y_cur, self.c[i] * y_prev + self.mu[i], self.sigma[i])
    }

    /// Ventilation time implied by the fitted AR coefficient of state `i`:
    /// `tau = -dt / ln(c)`.
    pub fn implied_tau(&self, i: usize) -> f64 {
        -self.physics.dt_min / self.c[i].ln()
    }
}

/// Seeds a model directly from the physics: `c = exp(-dt/tau_k)` and
/// `mu = (1 - c) * tau_k * r * n` per state, noise `sigma0` everywhere, a
/// diagonally dominant transition matrix with `self_stay` on the diagonal,
/// and a uniform initial distribution.
pub fn init_from_physics(
    physics: &PhysicsConfig,
    space: &StateSpace,
    sigma0: f64,
    self_stay: f64,
) -> Result<SwitchingARModel> {
    physics.validate()?;
    if !(sigma0.is_finite() && sigma0 > 0.0) {
        return Err(Error::validation(
            "init.sigma0",
            format!("must be > 0, got {sigma0}"),
        ));
    }
    if !(self_stay > 0.0 && self_stay < 1.0) {
        return Err(Error::validation(
            "init.self_stay",
            format!("must lie strictly in (0, 1), got {self_stay}"),
        ));
    }
    let n = space.len();
    let mut c = Vec::with_capacity(n);
    let mut mu = Vec::with_capacity(n);
    for (_, (occ, reg)) in space.iter() {
        c.push(physics.ar_coefficient(reg));
        mu.push(physics.drift(occ, reg));
    }
    let sigma = vec![sigma0; n];
    let trans = diagonal_dominant_transitions(n, self_stay);
    let init = vec![1.0 / n as f64; n];
    SwitchingARModel::new(
        physics.clone(),
        space.clone(),
        c,
        mu,
        sigma,
        trans,
        init,
    )
}

/// Row-stochastic matrix with `self_stay` on the diagonal and the remaining
/// mass spread uniformly off-diagonal. A single state gets a 1x1 identity.
pub fn diagonal_dominant_transitions(n: usize, self_stay: f64) -> Vec<f64> {
    let mut trans = vec![0.0; n * n];
    if n == 1 {
        trans[0] = 1.0;
        return trans;
    }
    let off = (1.0 - self_stay) / (n - 1) as f64;
    for i in 0..n {
        for j in 0..n {
            trans[i * n + j] = if i == j { self_stay } else { off };
        }
    }
    trans
}

pub(crate) fn check_stochastic_vector(v: &[f64], n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::validation(
            what,
            format!("expected {n} entries, got {}", v.len()),
        ));
    }
    let mut sum = 0.0;
    for (i, &p) in v.iter().enumerate() {
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::validation(
                what,
                format!("entry {i} must be a finite probability, got {p}"),
            ));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::validation(
            what,
            format!("entries must sum to 1 within {PROB_TOL:e}, got {sum:.17}"),
        ));
    }
    Ok(())
}

pub(crate) fn check_stochastic_matrix(trans: &[f64], n: usize) -> Result<()> {
    if trans.len() != n * n {
        return Err(Error::validation(
            "model.trans",
            format!("expected {n}x{n} entries, got {}", trans.len()),
        ));
    }
    for i in 0..n {
        check_stochastic_vector(&trans[i * n..(i + 1) * n], n, &format!("model.trans row {i}"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_regime_physics() -> PhysicsConfig {
        PhysicsConfig {
            ambient_co2: 400.0,
            regimes: vec![70.0, 100.0],
            person_rate: 5.0,
            dt_min: 1.0,
            max_occupancy: 4,
        }
    }

    #[test]
    fn state_space_size_matches_product() {
        // 5 occupancy levels x 2 regimes
        let space = build_state_space(&two_regime_physics()).unwrap();
        assert_eq!(space.len(), 10);

        let single = build_state_space(&PhysicsConfig {
            ambient_co2: 0.0,
            regimes: vec![50.0],
            person_rate: 1.0,
            dt_min: 1.0,
            max_occupancy: 1,
        })
        .unwrap();
        assert_eq!(single.len(), 2);

        // degenerate single state: enumerate directly, max_occupancy = 0 is
        // rejected by physics validation but fine as a raw enumeration
        let degenerate = StateSpace::enumerate(0, 1);
        assert_eq!(degenerate.len(), 1);
        assert_eq!(degenerate.state(0), (0, 0));
    }

    #[test]
    fn lookup_round_trips_both_directions() {
        // max_occupancy = 2, 3 regimes -> 9 states, occupancy-major:
        // index 5 = (occupancy 1, regime 2) by hand enumeration
        let space = StateSpace::enumerate(2, 3);
        assert_eq!(space.len(), 9);
        assert_eq!(space.state(5), (1, 2));
        assert_eq!(space.index_of(1, 2), Some(5));
        for (i, (n, k)) in space.iter() {
            assert_eq!(space.index_of(n, k), Some(i));
        }
        assert_eq!(space.index_of(3, 0), None);
        assert_eq!(space.index_of(0, 3), None);
    }

    #[test]
    fn physics_validation_names_the_failing_field() {
        let mut p = two_regime_physics();
        p.regimes = vec![70.0, -1.0];
        let err = build_state_space(&p).unwrap_err().to_string();
        assert!(err.contains("physics.tau"), "{err}");

        let mut p = two_regime_physics();
        p.regimes = vec![70.0, 70.0];
        assert!(build_state_space(&p).is_err());

        let mut p = two_regime_physics();
        p.person_rate = 0.0;
        assert!(p.validate().is_err());

        let mut p = two_regime_physics();
        p.max_occupancy = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn physics_init_matches_closed_forms() {
        let physics = two_regime_physics();
        let space = build_state_space(&physics).unwrap();
        let model = init_from_physics(&physics, &space, 5.0, 0.95).unwrap();

        // dt = 1, tau = 100 -> c = exp(-0.01)
        let i100 = space.index_of(0, 1).unwrap();
        assert!((model.c[i100] - (-0.01f64).exp()).abs() < 1e-15);
        assert!((model.c[i100] - 0.990050).abs() < 1e-6);

        // zero occupancy -> zero drift in every regime
        for k in 0..2 {
            assert_eq!(model.mu[space.index_of(0, k).unwrap()], 0.0);
        }

        // dt = 1, tau = 70, r = 5, n = 3: direct evaluation of
        // (1 - exp(-1/70)) * 70 * 5 * 3 = 14.89318...
        let i = space.index_of(3, 0).unwrap();
        let expected = (1.0 - (-1.0f64 / 70.0).exp()) * 70.0 * 5.0 * 3.0;
        assert!((model.mu[i] - expected).abs() < 1e-12);
        assert!((model.mu[i] - 14.8932).abs() < 1e-3);
    }

    #[test]
    fn physics_init_is_monotone_in_occupancy_and_dt_over_tau() {
        let physics = two_regime_physics();
        let space = build_state_space(&physics).unwrap();
        let model = init_from_physics(&physics, &space, 2.0, 0.9).unwrap();
        for k in 0..2 {
            for n in 1..=4usize {
                let lo = space.index_of(n - 1, k).unwrap();
                let hi = space.index_of(n, k).unwrap();
                assert!(model.mu[hi] > model.mu[lo]);
                assert_eq!(model.mu[lo] == 0.0, n - 1 == 0);
            }
        }
        // c strictly decreasing in dt/tau: tau = 70 has larger dt/tau than 100
        let c70 = model.c[space.index_of(0, 0).unwrap()];
        let c100 = model.c[space.index_of(0, 1).unwrap()];
        assert!(c70 < c100);
    }

    #[test]
    fn constructor_rejects_broken_invariants() {
        let physics = two_regime_physics();
        let space = build_state_space(&physics).unwrap();
        let model = init_from_physics(&physics, &space, 5.0, 0.95).unwrap();
        let n = space.len();

        let mut bad_c = model.c.clone();
        bad_c[3] = 1.0;
        assert!(SwitchingARModel::new(
            physics.clone(),
            space.clone(),
            bad_c,
            model.mu.clone(),
            model.sigma.clone(),
            model.transition_matrix().to_vec(),
            model.initial_distribution().to_vec(),
        )
        .is_err());

        let mut bad_trans = model.transition_matrix().to_vec();
        bad_trans[0] += 1e-6;
        assert!(SwitchingARModel::new(
            physics.clone(),
            space.clone(),
            model.c.clone(),
            model.mu.clone(),
            model.sigma.clone(),
            bad_trans,
            model.initial_distribution().to_vec(),
        )
        .is_err());

        let mut bad_sigma = model.sigma.clone();
        bad_sigma[n - 1] = 0.0;
        assert!(SwitchingARModel::new(
            physics,
            space,
            model.c.clone(),
            model.mu.clone(),
            bad_sigma,
            model.transition_matrix().to_vec(),
            model.initial_distribution().to_vec(),
        )
        .is_err());
    }

    #[test]
    fn implied_tau_inverts_the_coefficient() {
        let physics = two_regime_physics();
        let space = build_state_space(&physics).unwrap();
        let model = init_from_physics(&physics, &space, 5.0, 0.95).unwrap();
        for (i, (_, k)) in space.iter() {
            assert!((model.implied_tau(i) - physics.regimes[k]).abs() < 1e-9);
        }
    }
}
