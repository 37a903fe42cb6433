//! Closed-form sample-complexity quantities for Q-learning with replay.
//!
//! Where a bound is only stated up to Ω / Ω̃, the explicit proof-constant
//! version is evaluated instead (constants 4287, 24, 2500, 1.73, 3/δ). Every
//! reported `T` is therefore a proof-constant bound: astronomically
//! conservative, but exactly reproducible.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("gamma {0} not in (0,1)")]
    Gamma(f64),
    #[error("delta {0} not in (0,1)")]
    Delta(f64),
    #[error("covering constant {0} not in (0,1]")]
    Covering(f64),
    #[error("target accuracy eps1 = {0} must be positive")]
    Accuracy(f64),
    #[error("replay parameters must satisfy M >= 1 and K >= 1 (got M = {m}, K = {k})")]
    Replay { m: u64, k: u64 },
    #[error("state and action counts must be positive")]
    Size,
    #[error("visit frequency p = {0} outside (0.00009, 1)")]
    Frequency(f64),
    #[error("{0} must be nonnegative")]
    Negative(&'static str),
}

/// Lower end of the admissible visit frequency for the rare-experience bound.
pub const RARE_MIN_FREQUENCY: f64 = 0.00009;
/// Constant in the rare-bridge probability: `eps * p * T' = 1.73`.
pub const RARE_BRIDGE_RATE: f64 = 1.73;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub n_states: u64,
    pub n_actions: u64,
    pub gamma: f64,
    pub r_max: f64,
    /// `||Q_0||_inf`.
    pub q0_norm: f64,
    pub eps1: f64,
    pub delta: f64,
    /// Covering constant.
    pub c: f64,
    pub m: u64,
    pub k: u64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<(), BoundsError> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(BoundsError::Size);
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(BoundsError::Gamma(self.gamma));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(BoundsError::Delta(self.delta));
        }
        if !(self.c > 0.0 && self.c <= 1.0) {
            return Err(BoundsError::Covering(self.c));
        }
        if !(self.eps1 > 0.0) {
            return Err(BoundsError::Accuracy(self.eps1));
        }
        if self.m == 0 || self.k == 0 {
            return Err(BoundsError::Replay { m: self.m, k: self.k });
        }
        if !(self.r_max >= 0.0) {
            return Err(BoundsError::Negative("r_max"));
        }
        if !(self.q0_norm >= 0.0) {
            return Err(BoundsError::Negative("q0_norm"));
        }
        Ok(())
    }

    fn pairs(&self) -> f64 {
        (self.n_states * self.n_actions) as f64
    }

    /// `max(M, K) / (M + K)`.
    fn replay_ratio(&self) -> f64 {
        self.m.max(self.k) as f64 / (self.m + self.k) as f64
    }

    /// `(4 R_max + 4 gamma V_max)^2`.
    fn noise_scale(&self, v_max: f64) -> f64 {
        (4.0 * self.r_max + 4.0 * self.gamma * v_max).powi(2)
    }
}

/// All evaluated quantities for one parameter set. `log10_*` entries stay
/// finite where the direct values overflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub params: BoundParams,
    pub v_max: f64,
    pub d0: f64,
    pub epsilon: f64,
    pub n_epochs: u64,
    pub t0_sync: f64,
    pub t_sync: f64,
    pub log10_t_sync: f64,
    pub t0_async: f64,
    pub t_async: f64,
    pub log10_t_async: f64,
    pub relaxed: RelaxedBound,
    /// Set when `eps1 >= D0`, making zero epochs sufficient.
    pub note: Option<String>,
    pub label: String,
}

/// `R_max / (1 - gamma)`.
pub fn v_max(r_max: f64, gamma: f64) -> Result<f64, BoundsError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(BoundsError::Gamma(gamma));
    }
    Ok(r_max / (1.0 - gamma))
}

/// `V_max + max(||Q_0||, V_max)`.
pub fn d0(q0_norm: f64, v_max: f64) -> f64 {
    v_max + q0_norm.max(v_max)
}

/// `D_k = ((1 + gamma) / 2)^k * D_0` for `k = 0..=k_max`.
pub fn dk_sequence(d0: f64, gamma: f64, k_max: usize) -> Vec<f64> {
    let ratio = (1.0 + gamma) / 2.0;
    std::iter::successors(Some(d0), |d| Some(d * ratio))
        .take(k_max + 1)
        .collect()
}

/// `ceil(2 / (1 - gamma) * ln(D_0 / eps1))`, floored at zero.
pub fn n_epochs(d0: f64, eps1: f64, gamma: f64) -> u64 {
    if eps1 >= d0 {
        return 0;
    }
    let raw = 2.0 / (1.0 - gamma) * (d0 / eps1).ln();
    raw.ceil().max(0.0) as u64
}

/// Initial epoch length of the synchronous schedule, floored at 1:
///
/// `4287 |S||A| max(M,K) (4R + 4γV)^2 ln(|S||A| N / δ) / (c ε^2 ε1^2 (M+K)) + 24`
/// with `ε = (1 - γ) / 2`. `N` enters the logarithm as `max(N, 1)`.
pub fn t0_sync(params: &BoundParams, n: u64) -> f64 {
    let vm = params.r_max / (1.0 - params.gamma);
    let eps = (1.0 - params.gamma) / 2.0;
    let log_term = (params.pairs() * n.max(1) as f64 / params.delta).ln();
    let main = 4287.0 * params.pairs() * params.replay_ratio() * params.noise_scale(vm) * log_term
        / (params.c * eps * eps * params.eps1 * params.eps1);
    (main + 24.0).max(1.0)
}

/// Initial epoch length of the asynchronous schedule:
///
/// `X + L + 2 + 2 sqrt(X + L + 1)` where
/// `X = 2500 |S||A| max(M,K) (4R + 4γV)^2 ln(|S||A|^3 N / δ) / (c ε^2 ε1^2 (M+K))`
/// and `L = ln(172 |S||A| / c^3 * M / (M+K) + 37 / c^2)`.
pub fn t0_async(params: &BoundParams, n: u64) -> f64 {
    let vm = params.r_max / (1.0 - params.gamma);
    let eps = (1.0 - params.gamma) / 2.0;
    let pairs = params.pairs();
    let c = params.c;
    let log_term = (pairs.powi(3) * n.max(1) as f64 / params.delta).ln();
    let x = 2500.0 * pairs * params.replay_ratio() * params.noise_scale(vm) * log_term
        / (c * eps * eps * params.eps1 * params.eps1);
    let replay_share = params.m as f64 / (params.m + params.k) as f64;
    let l = (172.0 * pairs / c.powi(3) * replay_share + 37.0 / (c * c)).ln();
    (x + l + 2.0 + 2.0 * (x + l + 1.0).sqrt()).max(1.0)
}

/// Full report for `params`.
pub fn theorem1_t(params: &BoundParams) -> Result<BoundReport, BoundsError> {
    params.validate()?;
    let vm = v_max(params.r_max, params.gamma)?;
    let d = d0(params.q0_norm, vm);
    let n = n_epochs(d, params.eps1, params.gamma);
    let t0s = t0_sync(params, n);
    let t0a = t0_async(params, n);
    let async_growth = 3.0 * params.pairs() / params.c;
    let relaxed = relaxed_t(params, None)?;
    Ok(BoundReport {
        params: *params,
        v_max: vm,
        d0: d,
        epsilon: (1.0 - params.gamma) / 2.0,
        n_epochs: n,
        t0_sync: t0s,
        t_sync: t0s * 3f64.powf(n as f64),
        log10_t_sync: t0s.log10() + n as f64 * 3f64.log10(),
        t0_async: t0a,
        t_async: t0a * async_growth.powf(n as f64),
        log10_t_async: t0a.log10() + n as f64 * async_growth.log10(),
        relaxed,
        note: (params.eps1 >= d).then(|| {
            format!(
                "eps1 = {} >= D0 = {d}: the initial table is already accurate",
                params.eps1
            )
        }),
        label: "proof-constant bound".into(),
    })
}

/// Synchronous horizon `t0 * 3^N`.
pub fn sync_t(params: &BoundParams) -> Result<f64, BoundsError> {
    Ok(theorem1_t(params)?.t_sync)
}

/// Asynchronous horizon `t0_async * (3 |S||A| / c)^N`.
pub fn corollary1_t(params: &BoundParams) -> Result<f64, BoundsError> {
    Ok(theorem1_t(params)?.t_async)
}

/// Bound under the probabilistic covering assumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxedBound {
    pub b: f64,
    pub c: f64,
    /// `B^2 + sqrt(B^4 + B^2 C) + C`.
    pub t: f64,
    /// Whether a supplied horizon satisfies `T >= B log2(T / δ)`.
    pub horizon_ok: Option<bool>,
}

/// `B = 3^N |S||A| max(M,K) (R + γV)^2 ln(|S||A| N / δ) / (c ε^2 ε1^2 (M+K))`,
/// `C = B log2(1/δ)`.
pub fn relaxed_t(params: &BoundParams, horizon: Option<f64>) -> Result<RelaxedBound, BoundsError> {
    params.validate()?;
    let vm = v_max(params.r_max, params.gamma)?;
    let n = n_epochs(d0(params.q0_norm, vm), params.eps1, params.gamma);
    let eps = (1.0 - params.gamma) / 2.0;
    let log_term = (params.pairs() * n.max(1) as f64 / params.delta).ln();
    let b = 3f64.powf(n as f64)
        * params.pairs()
        * params.replay_ratio()
        * (params.r_max + params.gamma * vm).powi(2)
        * log_term
        / (params.c * eps * eps * params.eps1 * params.eps1);
    let c = b * (1.0 / params.delta).log2();
    Ok(RelaxedBound {
        b,
        c,
        t: relaxed_total(b, c),
        horizon_ok: horizon.map(|h| h >= b * (h / params.delta).log2()),
    })
}

/// `B^2 + sqrt(B^4 + B^2 C) + C`, with the root taken as `B sqrt(B^2 + C)`.
pub fn relaxed_total(b: f64, c: f64) -> f64 {
    b * b + b * (b * b + c).sqrt() + c
}

/// `Y_t = γ D_k + (1 - γ) D_k (t_k - 1) / (t - 1)` for `t = t_k..=t_end`.
pub fn y_trajectory(d_k: f64, gamma: f64, t_k: u64, t_end: u64) -> Vec<f64> {
    assert!(t_k >= 2, "t_k must be at least 2");
    (t_k..=t_end)
        .map(|t| gamma * d_k + (1.0 - gamma) * d_k * (t_k - 1) as f64 / (t - 1) as f64)
        .collect()
}

/// `ε = 1.73 / (T' p)`.
pub fn rare_epsilon(t_prime: u64, p: f64) -> Result<f64, BoundsError> {
    if !(p > RARE_MIN_FREQUENCY && p < 1.0) {
        return Err(BoundsError::Frequency(p));
    }
    Ok(RARE_BRIDGE_RATE / (t_prime as f64 * p))
}

/// Distribution of the bridge count `N ~ Binomial(T', ε p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeProbabilities {
    pub p_n0: f64,
    pub p_n1: f64,
    pub p_n2: f64,
    pub p_n_ge2: f64,
}

pub fn prob_bridge_counts(t_prime: u64, eps: f64, p: f64) -> BridgeProbabilities {
    let x = eps * p;
    let tp = t_prime as f64;
    // (1 - x)^k via log1p for accuracy at tiny x
    let pow = |k: f64| if k <= 0.0 { 1.0 } else { (k * (-x).ln_1p()).exp() };
    let p_n0 = pow(tp);
    let p_n1 = tp * x * pow(tp - 1.0);
    let p_n2 = tp * (tp - 1.0) / 2.0 * x * x * pow(tp - 2.0);
    BridgeProbabilities {
        p_n0,
        p_n1,
        p_n2,
        p_n_ge2: 1.0 - p_n0 - p_n1,
    }
}

/// `T' = max(20000, 100 T)`.
pub fn rare_horizon(t: u64) -> u64 {
    (100 * t).max(20_000)
}

/// `K = ceil(3 / δ)`.
pub fn rare_k(delta: f64) -> Result<u64, BoundsError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(BoundsError::Delta(delta));
    }
    // 3 / 0.03 evaluates to 100.00000000000001
    Ok((3.0 / delta - 1e-9).ceil() as u64)
}
