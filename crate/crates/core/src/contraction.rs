//! Tabular laboratory for the sampled Bellman-style operator
//! U Q = Q + alpha * D_rho (T* Q - Q)
//! and its contraction rate: envelopes from the per-entry minimum and maximum
//! sampling mass, plus a uniform-vs-prioritized convergence-rate experiment.

use crate::scalar::{cast, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContractionError {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("invalid sampling distribution: {0}")]
    InvalidDist(String),
    #[error("step too large: alpha * rho_max = {0} exceeds 1")]
    StepTooLarge(f64),
}

/// Finite MDP: transition tensor T(s'|s,a), reward table r(s,a), discount.
#[derive(Clone, Debug)]
pub struct TabularMdp<S> {
    n_states: usize,
    n_actions: usize,
    /// Row-stochastic, indexed [s][a][s'].
    trans: Vec<S>,
    /// Indexed [s][a].
    reward: Vec<S>,
    gamma: S,
}

impl<S: Scalar> TabularMdp<S> {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        trans: Vec<S>,
        reward: Vec<S>,
        gamma: S,
    ) -> Result<Self, ContractionError> {
        if trans.len() != n_states * n_actions * n_states {
            return Err(ContractionError::InvalidMdp("transition tensor size".into()));
        }
        if reward.len() != n_states * n_actions {
            return Err(ContractionError::InvalidMdp("reward table size".into()));
        }
        if gamma < S::zero() || gamma >= S::one() {
            return Err(ContractionError::InvalidMdp("gamma must be in [0, 1)".into()));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(ContractionError::InvalidMdp("non-finite reward".into()));
        }
        let tol = cast::<S>(1e-12);
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &trans[(s * n_actions + a) * n_states..(s * n_actions + a + 1) * n_states];
                let sum: S = row.iter().copied().sum();
                if (sum - S::one()).abs() > tol || row.iter().any(|p| *p < S::zero()) {
                    return Err(ContractionError::InvalidMdp(format!(
                        "row ({s},{a}) sums to {sum}"
                    )));
                }
            }
        }
        Ok(Self { n_states, n_actions, trans, reward, gamma })
    }

    /// Random MDP: Dirichlet(1) transition rows, rewards uniform in [0, 1].
    pub fn random(n_states: usize, n_actions: usize, gamma: S, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trans = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            // Dirichlet(1) row via normalized Exp(1) draws.
            let draws: Vec<f64> =
                (0..n_states).map(|_| -(1.0 - rng.random_range(0.0..1.0f64)).ln()).collect();
            let total: f64 = draws.iter().sum();
            trans.extend(draws.iter().map(|&d| cast::<S>(d / total)));
        }
        let reward: Vec<S> =
            (0..n_states * n_actions).map(|_| cast::<S>(rng.random_range(0.0..1.0f64))).collect();
        Self::new(n_states, n_actions, trans, reward, gamma).expect("generator output valid")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> S {
        self.gamma
    }
}

/// Probability table over state-action pairs.
#[derive(Clone, Debug)]
pub struct SamplingDist<S> {
    p: Vec<S>,
}

impl<S: Scalar> SamplingDist<S> {
    pub fn new(p: Vec<S>) -> Result<Self, ContractionError> {
        if p.is_empty() || p.iter().any(|v| *v < S::zero() || !v.is_finite()) {
            return Err(ContractionError::InvalidDist("entries must be nonnegative".into()));
        }
        let sum: S = p.iter().copied().sum();
        if (sum - S::one()).abs() > cast::<S>(1e-9) {
            return Err(ContractionError::InvalidDist(format!("sums to {sum}")));
        }
        Ok(Self { p })
    }

    pub fn uniform(n: usize) -> Self {
        Self { p: vec![S::one() / cast::<S>(n as f64); n] }
    }

    /// Normalizes arbitrary nonnegative weights.
    pub fn from_weights(w: &[S]) -> Result<Self, ContractionError> {
        let sum: S = w.iter().copied().sum();
        if sum <= S::zero() {
            return Err(ContractionError::InvalidDist("zero total mass".into()));
        }
        Self::new(w.iter().map(|&v| v / sum).collect())
    }

    /// Fixed skewed visitation profile: pair masses proportional to
    /// `decay^i`, so the last pairs are sampled rarely. Deterministic per
    /// seed only through the caller's pair ordering; the profile itself is
    /// fixed.
    pub fn skewed(n: usize, decay: f64) -> Self {
        assert!(n > 0 && decay > 0.0 && decay < 1.0);
        let w: Vec<S> = (0..n).map(|i| cast::<S>(decay.powi(i as i32))).collect();
        Self::from_weights(&w).expect("positive weights")
    }

    pub fn probs(&self) -> &[S] {
        &self.p
    }

    pub fn min(&self) -> S {
        self.p.iter().copied().fold(S::infinity(), S::min)
    }

    pub fn max(&self) -> S {
        self.p.iter().copied().fold(S::zero(), S::max)
    }

    pub fn strictly_positive(&self) -> bool {
        self.p.iter().all(|v| *v > S::zero())
    }
}

/// max |a - b| over entries.
pub fn sup_dist<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).fold(S::zero(), S::max)
}

/// Optimal Bellman operator:
/// (T* Q)(s,a) = r(s,a) + gamma * sum_s' T(s'|s,a) max_a' Q(s',a').
pub fn bellman_opt<S: Scalar>(mdp: &TabularMdp<S>, q: &[S]) -> Vec<S> {
    assert_eq!(q.len(), mdp.n_pairs(), "Q table shape");
    let maxes: Vec<S> = (0..mdp.n_states)
        .map(|s| {
            q[s * mdp.n_actions..(s + 1) * mdp.n_actions]
                .iter()
                .copied()
                .fold(S::neg_infinity(), S::max)
        })
        .collect();
    let mut out = Vec::with_capacity(mdp.n_pairs());
    for sa in 0..mdp.n_pairs() {
        let row = &mdp.trans[sa * mdp.n_states..(sa + 1) * mdp.n_states];
        let mut exp = S::zero();
        for (p, m) in row.iter().zip(&maxes) {
            exp += *p * *m;
        }
        out.push(mdp.reward[sa] + mdp.gamma * exp);
    }
    out
}

/// Fixed point Q* via value iteration to within `tol` in sup norm.
pub fn q_star<S: Scalar>(mdp: &TabularMdp<S>, tol: S) -> Vec<S> {
    let mut q = vec![S::zero(); mdp.n_pairs()];
    let gamma = mdp.gamma;
    let threshold = if gamma > S::zero() {
        tol * (S::one() - gamma) / (cast::<S>(2.0) * gamma)
    } else {
        tol
    };
    for _ in 0..1_000_000 {
        let next = bellman_opt(mdp, &q);
        let delta = sup_dist(&next, &q);
        q = next;
        if delta < threshold {
            break;
        }
    }
    q
}

/// One application of the sampled operator:
/// (U Q)(s,a) = Q(s,a) + alpha * rho(s,a) * (T* Q - Q)(s,a).
pub fn apply_u<S: Scalar>(
    q: &[S],
    mdp: &TabularMdp<S>,
    rho: &SamplingDist<S>,
    alpha: S,
) -> Result<Vec<S>, ContractionError> {
    let rho_max = rho.max();
    if (alpha * rho_max).to_f64() > 1.0 {
        return Err(ContractionError::StepTooLarge((alpha * rho_max).to_f64()));
    }
    let target = bellman_opt(mdp, q);
    Ok(q.iter()
        .zip(rho.probs())
        .zip(&target)
        .map(|((&qi, &ri), &ti)| qi + alpha * ri * (ti - qi))
        .collect())
}

/// Contraction factor beta = 1 - (1 - gamma) * alpha * rho.
pub fn beta<S: Scalar>(gamma: S, alpha: S, rho: S) -> S {
    S::one() - (S::one() - gamma) * alpha * rho
}

/// Empirical contraction measurement over random Q tables.
#[derive(Clone, Debug)]
pub struct ContractionReport<S> {
    /// Largest observed ||U Q - Q*|| / ||Q - Q*||.
    pub max_ratio: S,
    /// Guaranteed envelope factor, from the per-entry minimum mass.
    pub beta_min_mass: S,
    /// Stated rate factor, from the maximum mass.
    pub beta_max_mass: S,
    /// Trials where the ratio exceeded the guaranteed factor.
    pub violations: usize,
}

/// Applies U once to `trials` random Q tables and compares the observed
/// sup-norm contraction toward Q* with the analytic factors.
pub fn contraction_check<S: Scalar>(
    mdp: &TabularMdp<S>,
    rho: &SamplingDist<S>,
    alpha: S,
    trials: usize,
    seed: u64,
) -> Result<ContractionReport<S>, ContractionError> {
    let qstar = q_star(mdp, cast::<S>(1e-13));
    let beta_min_mass = beta(mdp.gamma, alpha, rho.min());
    let beta_max_mass = beta(mdp.gamma, alpha, rho.max());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio = S::zero();
    let mut violations = 0;
    let tol = cast::<S>(1e-12);
    for _ in 0..trials {
        let q: Vec<S> =
            (0..mdp.n_pairs()).map(|_| cast::<S>(rng.random_range(-5.0..5.0f64))).collect();
        let dist = sup_dist(&q, &qstar);
        if dist == S::zero() {
            continue;
        }
        let next = apply_u(&q, mdp, rho, alpha)?;
        let ratio = sup_dist(&next, &qstar) / dist;
        max_ratio = max_ratio.max(ratio);
        if ratio > beta_min_mass + tol {
            violations += 1;
        }
    }
    Ok(ContractionReport { max_ratio, beta_min_mass, beta_max_mass, violations })
}

/// Sampling schedule for [`rate_experiment`].
#[derive(Clone, Debug)]
pub enum RateSchedule<S> {
    /// Constant distribution (e.g. a skewed visitation profile).
    Fixed(SamplingDist<S>),
    /// Priorities follow the current Bellman residual:
    /// rho_t proportional to (|T* Q_t - Q_t| + eps)^alpha_per.
    Prioritized { alpha_per: f64, eps: f64 },
}

/// Error trajectory of iterating U under a sampling schedule.
#[derive(Clone, Debug)]
pub struct RateCurve<S> {
    /// ||Q_t - Q*||_inf for t = 0..=iters.
    pub errors: Vec<S>,
    /// Product of per-iteration beta factors from the minimum mass.
    pub envelope_min_mass: Vec<S>,
    /// Product of per-iteration beta factors from the maximum mass.
    pub envelope_max_mass: Vec<S>,
}

impl<S: Scalar> RateCurve<S> {
    /// First iteration at which the error falls to `frac` of the initial
    /// error, if it does.
    pub fn iterations_to_fraction(&self, frac: f64) -> Option<usize> {
        let target = self.errors[0] * cast::<S>(frac);
        self.errors.iter().position(|&e| e <= target)
    }
}

/// Iterates U from a seeded random Q_0, with the step size alpha_t chosen as
/// `step_scale / rho_t^max` each iteration.
pub fn rate_experiment<S: Scalar>(
    mdp: &TabularMdp<S>,
    schedule: &RateSchedule<S>,
    iters: usize,
    step_scale: f64,
    seed: u64,
) -> Result<RateCurve<S>, ContractionError> {
    assert!(step_scale > 0.0 && step_scale <= 1.0, "step scale must be in (0, 1]");
    let qstar = q_star(mdp, cast::<S>(1e-13));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<S> =
        (0..mdp.n_pairs()).map(|_| cast::<S>(rng.random_range(-1.0..1.0f64))).collect();
    let mut errors = vec![sup_dist(&q, &qstar)];
    let mut envelope_min_mass = vec![errors[0]];
    let mut envelope_max_mass = vec![errors[0]];
    for _ in 0..iters {
        let rho = match schedule {
            RateSchedule::Fixed(dist) => dist.clone(),
            RateSchedule::Prioritized { alpha_per, eps } => {
                let residual = bellman_opt(mdp, &q);
                let weights: Vec<S> = residual
                    .iter()
                    .zip(&q)
                    .map(|(&t, &qi)| {
                        cast::<S>(((t - qi).abs().to_f64() + eps).powf(*alpha_per))
                    })
                    .collect();
                SamplingDist::from_weights(&weights)?
            }
        };
        let alpha = cast::<S>(step_scale) / rho.max();
        q = apply_u(&q, mdp, &rho, alpha)?;
        errors.push(sup_dist(&q, &qstar));
        envelope_min_mass
            .push(*envelope_min_mass.last().unwrap() * beta(mdp.gamma, alpha, rho.min()));
        envelope_max_mass
            .push(*envelope_max_mass.last().unwrap() * beta(mdp.gamma, alpha, rho.max()));
    }
    Ok(RateCurve { errors, envelope_min_mass, envelope_max_mass })
}
