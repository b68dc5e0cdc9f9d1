//! Sequential entanglement detection with unsharp quadrature probes.
//!
//! Round `n` is run by a fresh pair of observers on the state handed down
//! by round `n − 1`. Each observer couples a probe of readout variance `ω²`
//! to one quadrature, which leaves back-action `u / ω²` on the conjugate one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gaussian::{duan_zeta_from_cov, GaussianState, Quadrature};
use crate::measurement::{couple_pair, unsharp_readout_moments, Combination, UnsharpProbe};

/// Ancilla uncertainty product used throughout the closed forms.
pub const DEFAULT_U: f64 = 0.25;

/// Coefficient on the accumulated back-action in the closed forms.
pub const CLOSED_FORM_KAPPA: f64 = 0.5;

pub const DEFAULT_MAX_COMPONENTS: usize = 1024;

/// Rounds are capped here when iterating chains.
const CHAIN_CAP: usize = 64;

const SETTINGS: [(Quadrature, Quadrature); 4] = [
    (Quadrature::X, Quadrature::X),
    (Quadrature::X, Quadrature::P),
    (Quadrature::P, Quadrature::X),
    (Quadrature::P, Quadrature::P),
];

fn check_omega(omega_sq: f64) -> Result<()> {
    if omega_sq.is_finite() && omega_sq > 0.0 {
        Ok(())
    } else {
        Err(invalid("omega_sq", "must be finite and positive"))
    }
}

fn check_r(r: f64) -> Result<()> {
    if r.is_finite() && r >= 0.0 {
        Ok(())
    } else {
        Err(invalid("r", "must be finite and non-negative"))
    }
}

/// `2e^{−2r} + ω²_A + ω²_B`.
pub fn zeta_round1(r: f64, omega_sq_a: f64, omega_sq_b: f64) -> Result<f64> {
    check_r(r)?;
    check_omega(omega_sq_a)?;
    check_omega(omega_sq_b)?;
    Ok(2.0 * (-2.0 * r).exp() + omega_sq_a + omega_sq_b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnsharpSchedule {
    r: f64,
    u: f64,
    rounds: Vec<(f64, f64)>,
}

impl UnsharpSchedule {
    pub fn new(r: f64, rounds: Vec<(f64, f64)>) -> Result<Self> {
        Self::with_u(r, rounds, DEFAULT_U)
    }

    pub fn with_u(r: f64, rounds: Vec<(f64, f64)>, u: f64) -> Result<Self> {
        check_r(r)?;
        if !(u.is_finite() && u > 0.0) {
            return Err(invalid("u", "must be finite and positive"));
        }
        for &(a, b) in &rounds {
            check_omega(a)?;
            check_omega(b)?;
        }
        Ok(UnsharpSchedule { r, u, rounds })
    }

    /// Same `ω²` for both observers in every round.
    pub fn equal(r: f64, omegas: &[f64]) -> Result<Self> {
        Self::new(r, omegas.iter().map(|&w| (w, w)).collect())
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn rounds(&self) -> &[(f64, f64)] {
        &self.rounds
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    fn check_round(&self, n: usize) -> Result<()> {
        if n >= 1 && n <= self.rounds.len() {
            Ok(())
        } else {
            Err(Error::RoundOutOfRange {
                round: n,
                len: self.rounds.len(),
            })
        }
    }

    /// `½ Σ_{i<n} (u/ω²_{A,i} + u/ω²_{B,i}) + 2e^{−2r} + ω²_{A,n} + ω²_{B,n}`.
    pub fn zeta(&self, n: usize) -> Result<f64> {
        self.check_round(n)?;
        let back: f64 = self.rounds[..n - 1]
            .iter()
            .map(|&(a, b)| self.u / a + self.u / b)
            .sum();
        let (a, b) = self.rounds[n - 1];
        Ok(CLOSED_FORM_KAPPA * back + 2.0 * (-2.0 * self.r).exp() + a + b)
    }

    /// Leading rounds with `ζ < 2`.
    pub fn detections(&self) -> usize {
        (1..=self.len())
            .take_while(|&n| self.zeta(n).map(|z| z < 2.0).unwrap_or(false))
            .count()
    }

    /// Same quantity through explicit mixture propagation.
    pub fn oracle_zeta(&self, n: usize) -> Result<f64> {
        self.check_round(n)?;
        let mut mix = MixtureState::single(GaussianState::tmsv(self.r)?);
        for &(a, b) in &self.rounds[..n - 1] {
            mix = propagate_unsharp_round(&mix, a, b, self.u, DEFAULT_MAX_COMPONENTS)?;
        }
        let (a, b) = self.rounds[n - 1];
        mixture_readout_zeta(&mix, a, b, self.u)
    }
}

/// `1 − 8ω²(ω² − (1 − e^{−2r}))`: with equal `ω²` every round, round `n`
/// detects iff `n` is below this value.
pub fn equal_omega_bound(r: f64, omega_sq: f64) -> Result<f64> {
    check_r(r)?;
    check_omega(omega_sq)?;
    Ok(1.0 - 8.0 * omega_sq * (omega_sq - (1.0 - (-2.0 * r).exp())))
}

/// Detections with the same `ω²` in every round.
pub fn equal_omega_detections(r: f64, omega_sq: f64) -> Result<usize> {
    let bound = equal_omega_bound(r, omega_sq)?;
    Ok((bound.ceil() - 1.0).max(0.0) as usize)
}

/// `ω²` maximizing the equal-`ω` bound: `e^{−r} sinh r`.
pub fn optimal_omega_sq(r: f64) -> Result<f64> {
    check_r(r)?;
    Ok((-r).exp() * r.sinh())
}

/// `√(e^{−r} sinh r)`.
pub fn optimal_omega(r: f64) -> Result<f64> {
    Ok(optimal_omega_sq(r)?.sqrt())
}

/// Bound at the optimal `ω`: `3 − 2e^{−2r}(2 − e^{−2r})`.
pub fn dnmax_equal_bound(r: f64) -> Result<f64> {
    check_r(r)?;
    let x = (-2.0 * r).exp();
    Ok(3.0 - 2.0 * x * (2.0 - x))
}

/// Most detections with equal `ω²`, optimized over `ω`.
pub fn dnmax_equal(r: f64) -> Result<usize> {
    Ok((dnmax_equal_bound(r)?.ceil() - 1.0).max(0.0) as usize)
}

/// Suprema of `ω²_n` when every earlier round sits at its own supremum:
/// `ω²_n = (2 − 2e^{−2r} − Σ_{i<n} 1/(4ω²_i)) / 2`. The first non-positive
/// entry is kept and ends the chain.
pub fn greedy_omega_chain(r: f64, max_rounds: usize) -> Result<Vec<f64>> {
    check_r(r)?;
    let mut chain = Vec::new();
    let mut inv_sum = 0.0;
    while chain.len() < max_rounds {
        let w = (2.0 - 2.0 * (-2.0 * r).exp() - 0.25 * inv_sum) / 2.0;
        chain.push(w);
        if w <= 0.0 {
            break;
        }
        inv_sum += 1.0 / w;
    }
    Ok(chain)
}

/// Result of solving for the next round's probe variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NextOmega {
    Unsharp { omega_sq: f64 },
    /// `ω² = 0`: a sharp measurement detects once and leaves nothing behind.
    Projective,
    /// `value` is the non-positive `ω²` the equation demanded.
    Infeasible { value: f64 },
}

/// `ω²_{n+1} = (ζ − 2e^{−2r})/2 − (1/8) Σ_j 1/ω²_j`, so that round `n + 1`
/// sees exactly `ζ`.
pub fn omega_next_equal_zeta(r: f64, zeta_target: f64, prior_omegas: &[f64]) -> Result<NextOmega> {
    check_r(r)?;
    if !zeta_target.is_finite() {
        return Err(invalid("zeta_target", "must be finite"));
    }
    for &w in prior_omegas {
        check_omega(w)?;
    }
    let floor = 2.0 * (-2.0 * r).exp();
    let inv_sum: f64 = prior_omegas.iter().map(|w| 1.0 / w).sum();
    let value = (zeta_target - floor) / 2.0 - 0.125 * inv_sum;
    Ok(if value > 0.0 {
        NextOmega::Unsharp { omega_sq: value }
    } else if value == 0.0 {
        NextOmega::Projective
    } else {
        NextOmega::Infeasible { value }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Infeasible,
    Projective,
    Cap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub r: f64,
    pub zeta_target: f64,
    pub u: f64,
    /// Probe variances of the detecting rounds (0 for a projective round).
    pub omegas: Vec<f64>,
    /// Closed-form `ζ` of each round.
    pub zetas: Vec<f64>,
    /// Whether each round detects (`ζ < 2`).
    pub detected: Vec<bool>,
    pub detections: usize,
    pub termination: Termination,
    pub closed_form_kappa: f64,
    /// Back-action coefficient measured by the mixture oracle at this `r`.
    pub oracle_kappa: Option<f64>,
}

fn equal_zeta_chain(r: f64, zeta_target: f64) -> Result<(Vec<f64>, Termination)> {
    let mut omegas = Vec::new();
    loop {
        if omegas.len() >= CHAIN_CAP {
            return Ok((omegas, Termination::Cap));
        }
        match omega_next_equal_zeta(r, zeta_target, &omegas)? {
            NextOmega::Unsharp { omega_sq } => omegas.push(omega_sq),
            NextOmega::Projective => {
                omegas.push(0.0);
                return Ok((omegas, Termination::Projective));
            }
            NextOmega::Infeasible { .. } => return Ok((omegas, Termination::Infeasible)),
        }
    }
}

/// Detection count when every round is tuned to the same `ζ`.
pub fn detection_count(r: f64, zeta_target: f64) -> Result<usize> {
    let (omegas, _) = equal_zeta_chain(r, zeta_target)?;
    Ok(if zeta_target < 2.0 { omegas.len() } else { 0 })
}

/// Full report for one `(r, ζ)`, including the oracle's back-action
/// coefficient when the first round is unsharp.
pub fn detection_report(r: f64, zeta_target: f64) -> Result<DetectionReport> {
    let (omegas, termination) = equal_zeta_chain(r, zeta_target)?;
    let floor = 2.0 * (-2.0 * r).exp();
    let mut zetas = Vec::with_capacity(omegas.len());
    let mut inv_sum = 0.0;
    for &w in &omegas {
        zetas.push(DEFAULT_U * inv_sum + floor + 2.0 * w);
        if w > 0.0 {
            inv_sum += 1.0 / w;
        }
    }
    let detected: Vec<bool> = zetas.iter().map(|&z| z < 2.0).collect();
    let detections = detected.iter().take_while(|&&d| d).count();
    let oracle_kappa = match omegas.first() {
        Some(&w) if w > 0.0 => Some(backaction_coefficient(r, w, w, DEFAULT_U)?),
        _ => None,
    };
    Ok(DetectionReport {
        r,
        zeta_target,
        u: DEFAULT_U,
        omegas,
        zetas,
        detected,
        detections,
        termination,
        closed_form_kappa: CLOSED_FORM_KAPPA,
        oracle_kappa,
    })
}

/// One row per detection count `k`: the `r` interval on which the
/// equal-`ζ` chain gives exactly `k` detections.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionBand {
    pub detections: usize,
    pub r_from: f64,
    /// `f64::INFINITY` for the last band.
    pub r_to: f64,
}

/// `D(r)` is nondecreasing in `r`; each band edge is found by bisection.
pub fn detection_bands(zeta_target: f64, r_max: f64) -> Result<Vec<DetectionBand>> {
    if !(zeta_target > 0.0 && zeta_target < 2.0) {
        return Err(invalid("zeta_target", "must lie in (0, 2)"));
    }
    check_r(r_max)?;
    let top = detection_count(r_max, zeta_target)?;
    let mut edges = Vec::with_capacity(top);
    for k in 1..=top {
        let (mut lo, mut hi) = (0.0, r_max);
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if detection_count(mid, zeta_target)? >= k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        edges.push(hi);
    }
    Ok((1..=top)
        .map(|k| DetectionBand {
            detections: k,
            r_from: edges[k - 1],
            r_to: edges.get(k).copied().unwrap_or(f64::INFINITY),
        })
        .collect())
}

/// Convex combination of Gaussian states on a common number of modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    components: Vec<(f64, GaussianState)>,
}

impl MixtureState {
    pub fn new(components: Vec<(f64, GaussianState)>) -> Result<Self> {
        let first = components.first().ok_or(Error::EmptyMixture)?;
        let n = first.1.n_modes();
        let mut total = 0.0;
        for (w, s) in &components {
            if !(w.is_finite() && *w > 0.0) {
                return Err(invalid("weight", "must be finite and positive"));
            }
            if s.n_modes() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: s.n_modes(),
                });
            }
            total += w;
        }
        let components = components.into_iter().map(|(w, s)| (w / total, s)).collect();
        Ok(MixtureState { components })
    }

    pub fn single(state: GaussianState) -> Self {
        MixtureState {
            components: vec![(1.0, state)],
        }
    }

    pub fn components(&self) -> &[(f64, GaussianState)] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn n_modes(&self) -> usize {
        self.components[0].1.n_modes()
    }

    /// Mixture mean and covariance (identity-vacuum convention).
    pub fn moments(&self) -> (nalgebra::DVector<f64>, nalgebra::DMatrix<f64>) {
        let dim = 2 * self.n_modes();
        let mut mean = nalgebra::DVector::zeros(dim);
        let mut second = nalgebra::DMatrix::zeros(dim, dim);
        for (w, s) in &self.components {
            mean += s.mean() * *w;
            // second moments in CM units: cov + 2 m mᵀ
            second += (s.cov() + s.mean() * s.mean().transpose() * 2.0) * *w;
        }
        let cov = second - &mean * mean.transpose() * 2.0;
        (mean, cov)
    }
}

/// Appends the four equally likely probe settings to every component and
/// discards the probes; components are ordered `(parent, setting)` with
/// settings `xx, xp, px, pp`.
pub fn propagate_unsharp_round(
    state: &MixtureState,
    omega_sq_a: f64,
    omega_sq_b: f64,
    u: f64,
    max_components: usize,
) -> Result<MixtureState> {
    if state.n_modes() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: state.n_modes(),
        });
    }
    let requested = state.len() * SETTINGS.len();
    if requested > max_components {
        return Err(Error::ComponentLimit {
            requested,
            limit: max_components,
        });
    }
    let children: Vec<Vec<(f64, GaussianState)>> = state
        .components
        .par_iter()
        .map(|(w, s)| {
            SETTINGS
                .iter()
                .map(|&(qa, qb)| {
                    let a = UnsharpProbe { mode: 0, quadrature: qa, omega_sq: omega_sq_a };
                    let b = UnsharpProbe { mode: 1, quadrature: qb, omega_sq: omega_sq_b };
                    let post = couple_pair(s, &a, &b, u)?.partial_trace(&[0, 1])?;
                    Ok((w / 4.0, post))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(MixtureState {
        components: children.into_iter().flatten().collect(),
    })
}

/// Duan `ζ` of the mixture's moments, plus `ω²_A + ω²_B` when fresh
/// readout probes are given.
pub fn mixture_zeta(state: &MixtureState, readout: Option<(f64, f64)>) -> Result<f64> {
    if state.n_modes() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: state.n_modes(),
        });
    }
    let (_, cov) = state.moments();
    let extra = match readout {
        Some((a, b)) => {
            check_omega(a)?;
            check_omega(b)?;
            a + b
        }
        None => 0.0,
    };
    Ok(duan_zeta_from_cov(&cov, 0, 1) + extra)
}

/// `ζ` read out through explicit probe couplings on every component:
/// `Var(χ_A − χ_B)` from the `x` probes plus `Var(χ_A + χ_B)` from the `p`
/// probes, each combined across components by the law of total variance.
pub fn mixture_readout_zeta(state: &MixtureState, omega_sq_a: f64, omega_sq_b: f64, u: f64) -> Result<f64> {
    let mut total = 0.0;
    for (q, comb) in [(Quadrature::X, Combination::Difference), (Quadrature::P, Combination::Sum)] {
        let a = UnsharpProbe { mode: 0, quadrature: q, omega_sq: omega_sq_a };
        let b = UnsharpProbe { mode: 1, quadrature: q, omega_sq: omega_sq_b };
        let (mut m1, mut m2) = (0.0, 0.0);
        for (w, s) in &state.components {
            let (m, v) = unsharp_readout_moments(s, &a, &b, comb, u)?;
            m1 += w * m;
            m2 += w * (v + m * m);
        }
        total += m2 - m1 * m1;
    }
    Ok(total)
}

/// Increase of the sharp `ζ` of a TMSV after one unsharp round, per unit of
/// injected back-action `u/ω²_A + u/ω²_B`.
pub fn backaction_coefficient(r: f64, omega_sq_a: f64, omega_sq_b: f64, u: f64) -> Result<f64> {
    let start = MixtureState::single(GaussianState::tmsv(r)?);
    let after = propagate_unsharp_round(&start, omega_sq_a, omega_sq_b, u, DEFAULT_MAX_COMPONENTS)?;
    let dz = mixture_zeta(&after, None)? - mixture_zeta(&start, None)?;
    Ok(dz / (u / omega_sq_a + u / omega_sq_b))
}

/// Least-squares line through `(u/ω²_A + u/ω²_B, Δζ)` pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackactionFit {
    pub kappa: f64,
    pub intercept: f64,
    pub max_residual: f64,
}

pub fn fit_backaction(r: f64, omega_pairs: &[(f64, f64)], u: f64) -> Result<BackactionFit> {
    if omega_pairs.len() < 2 {
        return Err(invalid("omega_pairs", "need at least two points"));
    }
    let start = MixtureState::single(GaussianState::tmsv(r)?);
    let z0 = mixture_zeta(&start, None)?;
    let points = omega_pairs
        .iter()
        .map(|&(a, b)| {
            let after = propagate_unsharp_round(&start, a, b, u, DEFAULT_MAX_COMPONENTS)?;
            Ok((u / a + u / b, mixture_zeta(&after, None)? - z0))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("omega_pairs", "back-action values are all equal"));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let kappa = sxy / sxx;
    let intercept = my - kappa * mx;
    let max_residual = points
        .iter()
        .map(|p| (p.1 - intercept - kappa * p.0).abs())
        .fold(0.0, f64::max);
    Ok(BackactionFit {
        kappa,
        intercept,
        max_residual,
    })
}
