//! Sequential teleportation with a split resource.
//!
//! Each round mixes the sender's half of the current resource with vacuum
//! on a beam splitter. The transmitted copy is consumed by a coherent-state
//! teleportation attempt; the reflected copy is kept for the next round.
//! After `n` rounds the consumed copy carries the fraction
//! `τ_t = (1 − τ₁)…(1 − τ_{n−1}) τ_n` of the original sender mode.

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gaussian::{GaussianState, SymplecticTransform};
use crate::measurement::{gaussian_overlap, overlap_with_coherent, ConditionalMap, GeneralDyneSpec};
use crate::rng::{mean_and_variance, stream};
use crate::sampling::EstimatorResult;

/// Bisection stopping width on transmissivities.
pub const BISECTION_TOL: f64 = 1e-10;

/// Draws per independent RNG stream in [`simulate_round`].
const SIM_CHUNK: usize = 2048;

const ROUND_CAP: usize = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Sender,
    Receiver,
}

/// Splits one half of a two-mode resource on a beam splitter with vacuum.
///
/// The resource is ordered `(receiver, sender)`. With `Side::Sender` the
/// output is `(receiver, sender_T, sender_R)`; with `Side::Receiver` it is
/// `(sender, receiver_T, receiver_R)`.
pub fn split_resource(resource: &GaussianState, tau: f64, side: Side) -> Result<GaussianState> {
    if resource.n_modes() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: resource.n_modes(),
        });
    }
    let ordered = match side {
        Side::Sender => resource.clone(),
        Side::Receiver => resource.partial_trace(&[1, 0])?,
    };
    let joint = ordered.tensor(&GaussianState::vacuum(1)?);
    SymplecticTransform::beam_splitter(tau, 3, 1, 2)?.apply(&joint)
}

/// `F = 2 / (3 − τ_t + (1 + τ_t) cosh 2r − 2 √τ_t sinh 2r)`.
pub fn fidelity_from_fraction(r: f64, t: f64) -> f64 {
    let (c, s) = ((2.0 * r).cosh(), (2.0 * r).sinh());
    2.0 / (3.0 - t + (1.0 + t) * c - 2.0 * t.sqrt() * s)
}

/// `ζ = 2 − 2 sinh r (2 √τ_t cosh r − (1 + τ_t) sinh r)`.
pub fn zeta_from_fraction(r: f64, t: f64) -> f64 {
    let (c, s) = (r.cosh(), r.sinh());
    2.0 - 2.0 * s * (2.0 * t.sqrt() * c - (1.0 + t) * s)
}

fn check_r(r: f64) -> Result<()> {
    if r.is_finite() && r >= 0.0 {
        Ok(())
    } else {
        Err(invalid("r", "must be finite and non-negative"))
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(invalid("tau", format!("{tau} is outside [0, 1]")))
    }
}

/// Resource squeezing and per-round transmissivities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSchedule {
    r: f64,
    taus: Vec<f64>,
}

impl SplitSchedule {
    pub fn new(r: f64, taus: Vec<f64>) -> Result<Self> {
        check_r(r)?;
        for &t in &taus {
            check_tau(t)?;
        }
        Ok(SplitSchedule { r, taus })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    fn check_round(&self, n: usize) -> Result<()> {
        if n >= 1 && n <= self.taus.len() {
            Ok(())
        } else {
            Err(Error::RoundOutOfRange {
                round: n,
                len: self.taus.len(),
            })
        }
    }

    /// Product of reflectivities of rounds before `n` (1-based).
    pub fn carried_fraction(&self, n: usize) -> Result<f64> {
        if n == 0 || n > self.taus.len() + 1 {
            return Err(Error::RoundOutOfRange {
                round: n,
                len: self.taus.len(),
            });
        }
        Ok(self.taus[..n - 1].iter().map(|t| 1.0 - t).product())
    }

    /// `τ_t^{(n)}` for round `n` (1-based).
    pub fn transmitted_fraction(&self, n: usize) -> Result<f64> {
        self.check_round(n)?;
        Ok(self.carried_fraction(n)? * self.taus[n - 1])
    }

    /// Closed-form teleportation fidelity of round `n`.
    pub fn fidelity(&self, n: usize) -> Result<f64> {
        Ok(fidelity_from_fraction(self.r, self.transmitted_fraction(n)?))
    }

    /// Closed-form nonclassicality of the consumed copy in round `n`.
    pub fn zeta(&self, n: usize) -> Result<f64> {
        Ok(zeta_from_fraction(self.r, self.transmitted_fraction(n)?))
    }

    /// Phase-space route to the consumed resource of round `n`: modes
    /// `(receiver, sender_T)` after keeping the reflected copy `n − 1` times.
    pub fn round_state(&self, n: usize) -> Result<GaussianState> {
        self.check_round(n)?;
        let mut resource = GaussianState::tmsv(self.r)?;
        for &tau in &self.taus[..n - 1] {
            resource = split_resource(&resource, tau, Side::Sender)?.partial_trace(&[0, 2])?;
        }
        split_resource(&resource, self.taus[n - 1], Side::Sender)?.partial_trace(&[0, 1])
    }
}

/// Outcome of a transmissivity search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Transmissivity {
    Feasible { tau: f64 },
    /// Even `τ = 1` misses the target; `best` is the value reached there.
    Infeasible { best: f64 },
}

impl Transmissivity {
    pub fn tau(self) -> Option<f64> {
        match self {
            Transmissivity::Feasible { tau } => Some(tau),
            Transmissivity::Infeasible { .. } => None,
        }
    }
}

/// Smallest `x ∈ [0, 1]` with `pred(x)`, for a predicate monotone in `x`.
fn bisect(mut pred: impl FnMut(f64) -> bool) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Smallest `τ_n` reaching `target_f` in the round after `prior_taus`.
pub fn min_transmissivity(r: f64, prior_taus: &[f64], target_f: f64) -> Result<Transmissivity> {
    if !(target_f > 0.5 && target_f < 1.0) {
        return Err(invalid("target_f", "must lie in (0.5, 1)"));
    }
    let carried = SplitSchedule::new(r, prior_taus.to_vec())?.carried_fraction(prior_taus.len() + 1)?;
    let best = fidelity_from_fraction(r, carried);
    if best < target_f {
        return Ok(Transmissivity::Infeasible { best });
    }
    let tau = bisect(|tau| fidelity_from_fraction(r, carried * tau) >= target_f);
    Ok(Transmissivity::Feasible { tau })
}

/// Smallest `τ_n` with `ζ_n ≤ 2` after `prior_taus` (the classical boundary).
pub fn threshold_transmissivity(r: f64, prior_taus: &[f64]) -> Result<Transmissivity> {
    let carried = SplitSchedule::new(r, prior_taus.to_vec())?.carried_fraction(prior_taus.len() + 1)?;
    let best = zeta_from_fraction(r, carried);
    if best >= 2.0 {
        return Ok(Transmissivity::Infeasible { best });
    }
    let tau = bisect(|tau| zeta_from_fraction(r, carried * tau) <= 2.0);
    Ok(Transmissivity::Feasible { tau })
}

/// Per-round minimum transmissivities, each round fixing the earlier ones at
/// their minima, until the target becomes unreachable.
pub fn min_transmissivity_sequence(r: f64, target_f: f64) -> Result<Vec<f64>> {
    let mut taus = Vec::new();
    while let Transmissivity::Feasible { tau } = min_transmissivity(r, &taus, target_f)? {
        taus.push(tau);
        if tau >= 1.0 || taus.len() >= ROUND_CAP {
            break;
        }
    }
    Ok(taus)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanMode {
    EqualFidelity,
    EqualTransmissivity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeleportPlan {
    pub mode: PlanMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub r: f64,
    pub n_max: usize,
    pub taus: Vec<f64>,
    pub fidelities: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_opt: Option<f64>,
}

fn check_f_min(f_min: f64) -> Result<()> {
    if f_min > 0.5 && f_min < 1.0 {
        Ok(())
    } else {
        Err(invalid("f_min", "must lie in (0.5, 1)"))
    }
}

/// `⌊F / (2F − 1)⌋`, the most rounds any schedule can hold at fidelity `F`.
pub fn equal_fidelity_n_max(f_min: f64) -> Result<usize> {
    check_f_min(f_min)?;
    Ok((f_min / (2.0 * f_min - 1.0) + 1e-9).floor() as usize)
}

/// Squeezing that maximizes the round count at fidelity `F`.
pub fn equal_fidelity_r_opt(f_min: f64) -> Result<f64> {
    check_f_min(f_min)?;
    let (a, b) = (f_min.sqrt(), (2.0 * f_min - 1.0).sqrt());
    Ok(0.5 * ((a + b) / (a - b)).ln())
}

/// `τ₁ = 1/n`, `τ_i = τ_{i−1} / (1 − τ_{i−1})`, in exact arithmetic.
/// Every round then transmits the fraction `1/n` and `τ_n = 1`.
pub fn equal_fidelity_taus(n: usize) -> Result<Vec<Ratio<i64>>> {
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    let one = Ratio::from_integer(1i64);
    let mut taus = vec![Ratio::new(1, n as i64)];
    for _ in 1..n {
        let prev = *taus.last().expect("non-empty");
        taus.push(prev / (one - prev));
    }
    Ok(taus)
}

/// Floating-point version of the same recursion for an arbitrary `τ₁`;
/// stops early once a transmissivity reaches 1.
pub fn recursion_taus(tau1: f64, n: usize) -> Result<Vec<f64>> {
    check_tau(tau1)?;
    let mut taus = Vec::with_capacity(n);
    let mut tau = tau1;
    for _ in 0..n {
        taus.push(tau);
        if tau >= 1.0 {
            break;
        }
        tau /= 1.0 - tau;
        tau = tau.min(1.0);
    }
    Ok(taus)
}

pub fn equal_fidelity_plan(f_min: f64) -> Result<TeleportPlan> {
    let n_max = equal_fidelity_n_max(f_min)?;
    let r_opt = equal_fidelity_r_opt(f_min)?;
    let taus: Vec<f64> = equal_fidelity_taus(n_max)?
        .iter()
        .map(|t| *t.numer() as f64 / *t.denom() as f64)
        .collect();
    let schedule = SplitSchedule::new(r_opt, taus.clone())?;
    let fidelities = (1..=n_max).map(|n| schedule.fidelity(n)).collect::<Result<_>>()?;
    Ok(TeleportPlan {
        mode: PlanMode::EqualFidelity,
        f_min: Some(f_min),
        tau: None,
        r: r_opt,
        n_max,
        taus,
        fidelities,
        r_opt: Some(r_opt),
    })
}

/// Most rounds an equal-fidelity schedule sustains at fixed `r`: the largest
/// `n` whose uniform share `1/n` still reaches `f_min`.
pub fn equal_fidelity_rounds(r: f64, f_min: f64) -> Result<usize> {
    check_r(r)?;
    check_f_min(f_min)?;
    let t_min = match min_transmissivity(r, &[], f_min)? {
        Transmissivity::Feasible { tau } => tau,
        Transmissivity::Infeasible { .. } => return Ok(0),
    };
    let ok = |n: usize| fidelity_from_fraction(r, 1.0 / n as f64) >= f_min;
    let mut n = ((1.0 / t_min).floor() as usize).max(1);
    while ok(n + 1) {
        n += 1;
    }
    while n > 0 && !ok(n) {
        n -= 1;
    }
    Ok(n)
}

fn equal_transmissivity_count(r: f64, tau: f64, accept: impl Fn(f64) -> bool) -> Result<usize> {
    check_r(r)?;
    check_tau(tau)?;
    let mut carried = 1.0;
    let mut n = 0;
    while n < ROUND_CAP {
        let t = carried * tau;
        if !accept(fidelity_from_fraction(r, t)) {
            break;
        }
        n += 1;
        carried *= 1.0 - tau;
    }
    Ok(n)
}

/// Leading rounds with `F_n > 1/2` when every round uses the same `τ`.
pub fn equal_transmissivity_max_rounds(r: f64, tau: f64) -> Result<usize> {
    equal_transmissivity_count(r, tau, |f| f > 0.5)
}

/// Leading rounds with `F_n ≥ f_min` when every round uses the same `τ`.
pub fn equal_transmissivity_rounds_at(r: f64, tau: f64, f_min: f64) -> Result<usize> {
    check_f_min(f_min)?;
    equal_transmissivity_count(r, tau, |f| f >= f_min)
}

pub fn equal_transmissivity_plan(r: f64, tau: f64) -> Result<TeleportPlan> {
    let n_max = equal_transmissivity_max_rounds(r, tau)?;
    let taus = vec![tau; n_max];
    let schedule = SplitSchedule::new(r, taus.clone())?;
    let fidelities = (1..=n_max).map(|n| schedule.fidelity(n)).collect::<Result<_>>()?;
    Ok(TeleportPlan {
        mode: PlanMode::EqualTransmissivity,
        f_min: None,
        tau: Some(tau),
        r,
        n_max,
        taus,
        fidelities,
        r_opt: None,
    })
}

/// Phase-space teleportation of a coherent input through round `n`.
///
/// Modes `(receiver, sender_T, input)`; a Bell measurement on the last two
/// yields `y = (x_T − x_in, p_T + p_in)` and the receiver displaces by
/// `(−y₀, +y₁)` (unit gain).
struct RoundPipeline {
    map: ConditionalMap,
    feed_forward: DMatrix<f64>,
    input: GaussianState,
}

impl RoundPipeline {
    fn new(schedule: &SplitSchedule, n: usize, input: &GaussianState) -> Result<Self> {
        if input.n_modes() != 1 {
            return Err(invalid("input", "must be a single-mode state"));
        }
        let joint = schedule.round_state(n)?.tensor(input);
        let map = ConditionalMap::new(&joint, &GeneralDyneSpec::bell(1, 2))?;
        Ok(RoundPipeline {
            map,
            feed_forward: DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0])),
            input: input.clone(),
        })
    }

    fn fidelity_for(&self, y: &DVector<f64>) -> Result<f64> {
        let bob = self.map.state_given(y)?;
        let shift = &self.feed_forward * y;
        let out = crate::measurement::displace(&bob, 0, shift[0], shift[1])?;
        overlap_with_coherent(&out, &self.input)
    }

    /// Outcome-averaged overlap as one Gaussian integral.
    ///
    /// The displaced mean is affine in `y`: `m(y) = offset + (G + D) y`.
    /// Averaging the overlap kernel over `y ~ N(μ, Σ)` adds `2 (G+D) Σ (G+D)ᵀ`
    /// to the covariance sum.
    fn average_fidelity(&self) -> f64 {
        let a = self.map.gain() + &self.feed_forward;
        let m = self.map.offset() + &a * self.map.outcome_mean() - self.input.mean();
        let k = &a * self.map.outcome_cov() * a.transpose();
        let total = self.input.cov() + self.map.conditional_cov() + k * 2.0;
        gaussian_overlap(&total, &m)
    }
}

/// Deterministic outcome-averaged fidelity of round `n` (vacuum input; the
/// result is independent of the coherent amplitude).
pub fn analytic_average_fidelity(schedule: &SplitSchedule, n: usize) -> Result<f64> {
    analytic_average_fidelity_for(schedule, n, &GaussianState::coherent(0.0, 0.0)?)
}

pub fn analytic_average_fidelity_for(schedule: &SplitSchedule, n: usize, input: &GaussianState) -> Result<f64> {
    Ok(RoundPipeline::new(schedule, n, input)?.average_fidelity())
}

/// Monte-Carlo teleportation fidelity of round `n`: sample Bell outcomes,
/// condition, feed forward, and average the overlap with the input.
///
/// Draws are split into fixed-size chunks, chunk `i` using stream `i` of
/// `seed`, so results do not depend on the thread count.
pub fn simulate_round(
    schedule: &SplitSchedule,
    n: usize,
    input: &GaussianState,
    samples: usize,
    seed: u64,
) -> Result<EstimatorResult> {
    if samples == 0 {
        return Err(invalid("samples", "must be at least 1"));
    }
    let pipeline = RoundPipeline::new(schedule, n, input)?;
    let chunks = samples.div_ceil(SIM_CHUNK);
    let values: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let len = SIM_CHUNK.min(samples - c * SIM_CHUNK);
            (0..len)
                .map(|_| pipeline.fidelity_for(&pipeline.map.sample(&mut rng)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = values.into_iter().flatten().collect();
    let (mean, var) = mean_and_variance(&flat);
    Ok(EstimatorResult {
        estimate: mean,
        stderr: (var / samples as f64).sqrt(),
        n_samples: samples,
        seed,
    })
}
