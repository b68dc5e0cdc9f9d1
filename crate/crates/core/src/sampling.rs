//! Finite-sample estimation of `ζ` and the `1/√N` error law.

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entanglement::MixtureState;
use crate::error::{invalid, Result};
use crate::gaussian::{quadrature_index, GaussianState, Quadrature};
use crate::measurement::{unsharp_readout_moments, Combination, UnsharpProbe};
use crate::rng::{derive_seed, mean_and_variance, pairwise_sum, stream, Stream};

/// Largest sample count `required_samples` reports before flagging a cap.
pub const SAMPLE_CAP: u64 = 1_000_000_000_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub estimate: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug)]
pub enum ZetaSource<'a> {
    Gaussian(&'a GaussianState),
    Mixture(&'a MixtureState),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Readout {
    Sharp,
    Unsharp { omega_sq_a: f64, omega_sq_b: f64, u: f64 },
}

/// Per-component mean and variance of one scalar readout.
fn readout_moments(
    state: &GaussianState,
    quadrature: Quadrature,
    combination: Combination,
    readout: Readout,
) -> Result<(f64, f64)> {
    match readout {
        Readout::Sharp => {
            let mut row = DVector::zeros(2 * state.n_modes());
            row[quadrature_index(0, quadrature)] = 1.0;
            row[quadrature_index(1, quadrature)] = combination.sign();
            Ok((row.dot(state.mean()), 0.5 * (row.transpose() * state.cov() * &row)[(0, 0)]))
        }
        Readout::Unsharp { omega_sq_a, omega_sq_b, u } => {
            let a = UnsharpProbe { mode: 0, quadrature, omega_sq: omega_sq_a };
            let b = UnsharpProbe { mode: 1, quadrature, omega_sq: omega_sq_b };
            unsharp_readout_moments(state, &a, &b, combination, u)
        }
    }
}

/// Scalar Gaussian-mixture law of one readout.
struct ReadoutLaw {
    weights: Vec<f64>,
    moments: Vec<(f64, f64)>,
}

impl ReadoutLaw {
    fn new(source: ZetaSource<'_>, quadrature: Quadrature, combination: Combination, readout: Readout) -> Result<Self> {
        let components: Vec<(f64, &GaussianState)> = match source {
            ZetaSource::Gaussian(s) => vec![(1.0, s)],
            ZetaSource::Mixture(m) => m.components().iter().map(|(w, s)| (*w, s)).collect(),
        };
        for (_, s) in &components {
            if s.n_modes() != 2 {
                return Err(crate::Error::DimensionMismatch {
                    expected: 2,
                    found: s.n_modes(),
                });
            }
        }
        let moments = components
            .iter()
            .map(|(_, s)| readout_moments(s, quadrature, combination, readout))
            .collect::<Result<_>>()?;
        Ok(ReadoutLaw {
            weights: components.iter().map(|c| c.0).collect(),
            moments,
        })
    }

    fn draw(&self, n: usize, rng: &mut Stream) -> Vec<f64> {
        let normal = |rng: &mut Stream, (m, v): (f64, f64)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal);
        if self.weights.len() == 1 {
            return (0..n).map(|_| normal(rng, self.moments[0])).collect();
        }
        let pick = WeightedIndex::new(&self.weights).expect("weights are positive");
        (0..n)
            .map(|_| {
                let k = pick.sample(rng);
                normal(rng, self.moments[k])
            })
            .collect()
    }
}

/// Unbiased sample variance and its delete-1 jackknife standard error.
///
/// Leaving out `d_i = x_i − x̄` gives `s²_(i) = (SS − N d_i²/(N−1)) / (N−2)`.
pub fn jackknife_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let (mean, var) = mean_and_variance(values);
    if n < 3 {
        return (var, f64::INFINITY);
    }
    let nf = n as f64;
    let d2: Vec<f64> = values.iter().map(|x| (x - mean).powi(2)).collect();
    let ss = pairwise_sum(&d2);
    let loo: Vec<f64> = d2.iter().map(|d| (ss - nf * d / (nf - 1.0)) / (nf - 2.0)).collect();
    let loo_mean = pairwise_sum(&loo) / nf;
    let dev: Vec<f64> = loo.iter().map(|s| (s - loo_mean).powi(2)).collect();
    (var, ((nf - 1.0) / nf * pairwise_sum(&dev)).sqrt())
}

/// `ζ̂ = s²(χ_A − χ_B) + s²(χ_A + χ_B)` from `n` draws of each readout
/// (`x` probes for the difference on stream 0, `p` probes for the sum on
/// stream 1).
pub fn estimate_zeta(source: ZetaSource<'_>, readout: Readout, n: usize, seed: u64) -> Result<EstimatorResult> {
    if n < 2 {
        return Err(invalid("n", "need at least two samples"));
    }
    let mut estimate = 0.0;
    let mut se2 = 0.0;
    for (idx, (q, comb)) in [(Quadrature::X, Combination::Difference), (Quadrature::P, Combination::Sum)]
        .into_iter()
        .enumerate()
    {
        let law = ReadoutLaw::new(source, q, comb, readout)?;
        let draws = law.draw(n, &mut stream(seed, idx as u64));
        let (var, se) = jackknife_variance(&draws);
        estimate += var;
        se2 += se * se;
    }
    Ok(EstimatorResult {
        estimate,
        stderr: se2.sqrt(),
        n_samples: n,
        seed,
    })
}

/// `c₀ = stderr · √N` of the sharp estimator on a TMSV.
pub fn calibrate_c0(r: f64, n: usize, seed: u64) -> Result<f64> {
    let res = estimate_zeta(ZetaSource::Gaussian(&GaussianState::tmsv(r)?), Readout::Sharp, n, seed)?;
    Ok(res.stderr * (n as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequiredSamples {
    pub n: u64,
    /// True when the exact count exceeds [`SAMPLE_CAP`]; `n` is then the cap.
    pub capped: bool,
}

/// `N = ⌈(k c₀ / (2 − ζ))²⌉`: samples for the `k`-sigma interval around
/// `ζ` to stay below 2.
pub fn required_samples(zeta: f64, confidence_k: f64, c0: f64) -> Result<RequiredSamples> {
    if !(0.0..2.0).contains(&zeta) {
        return Err(invalid("zeta", "must lie in [0, 2)"));
    }
    if !(confidence_k.is_finite() && confidence_k > 0.0) {
        return Err(invalid("confidence_k", "must be finite and positive"));
    }
    if !(c0.is_finite() && c0 > 0.0) {
        return Err(invalid("c0", "must be finite and positive"));
    }
    let exact = (confidence_k * c0 / (2.0 - zeta)).powi(2).ceil();
    Ok(if exact.is_finite() && exact <= SAMPLE_CAP as f64 {
        RequiredSamples {
            n: exact as u64,
            capped: false,
        }
    } else {
        RequiredSamples {
            n: SAMPLE_CAP,
            capped: true,
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub mean_zeta: f64,
    /// Spread of `ζ̂` across trials.
    pub std_zeta: f64,
    /// Mean jackknife standard error reported by the individual trials.
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub r: f64,
    pub trials: usize,
    pub seed: u64,
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `ln std` against `ln N`.
    pub slope: f64,
    pub intercept: f64,
    /// Mean of `std · √N` over the rows.
    pub c0: f64,
}

/// Runs `trials` sharp TMSV estimates at every `N` and fits the error law.
/// Trial `t` at `N` uses seed `derive_seed(derive_seed(seed, N), t)`.
pub fn error_scaling_experiment(r: f64, n_list: &[usize], trials: usize, seed: u64) -> Result<ScalingReport> {
    let mut distinct = n_list.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(invalid("n_list", "need at least three distinct sample sizes"));
    }
    if distinct[0] < 2 {
        return Err(invalid("n_list", "sample sizes must be at least 2"));
    }
    if trials < 30 {
        return Err(invalid("trials", "need at least 30 trials"));
    }
    let state = GaussianState::tmsv(r)?;
    let rows = n_list
        .iter()
        .map(|&n| {
            let base = derive_seed(seed, n as u64);
            let results: Vec<EstimatorResult> = (0..trials)
                .into_par_iter()
                .map(|t| estimate_zeta(ZetaSource::Gaussian(&state), Readout::Sharp, n, derive_seed(base, t as u64)))
                .collect::<Result<_>>()?;
            let est: Vec<f64> = results.iter().map(|e| e.estimate).collect();
            let se: Vec<f64> = results.iter().map(|e| e.stderr).collect();
            let (mean_zeta, var) = mean_and_variance(&est);
            Ok(ScalingRow {
                n,
                mean_zeta,
                std_zeta: var.sqrt(),
                stderr: pairwise_sum(&se) / trials as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|row| (row.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|row| row.std_zeta.ln()).collect();
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(invalid("n_list", "zero spread across trials"));
    }
    let (slope, intercept) = least_squares(&xs, &ys);
    let c0 = rows.iter().map(|row| row.std_zeta * (row.n as f64).sqrt()).sum::<f64>() / rows.len() as f64;
    Ok(ScalingReport {
        r,
        trials,
        seed,
        rows,
        slope,
        intercept,
        c0,
    })
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
