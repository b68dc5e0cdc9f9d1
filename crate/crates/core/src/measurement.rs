//! Gaussian measurements and conditional dynamics.
//!
//! A measurement reads out `k` linear combinations `y = M r` of the measured
//! modes' quadratures, optionally blurred by a Gaussian POVM with finite
//! seed covariance. Sharp measurements (homodyne, Bell/double homodyne)
//! are the exact zero-noise limit: the conjugate directions of an infinitely
//! squeezed POVM drop out, leaving a Schur complement over the measured
//! combinations only.
//!
//! Outcome vectors are expressed in quadrature units, so the outcome
//! covariance is half of `M σ Mᵀ (+ σ_m)`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gaussian::{check_modes, phase_space_indices, quadrature_index, GaussianState, Quadrature, SymplecticTransform};

#[derive(Clone, Debug, PartialEq)]
enum Noise {
    /// Exact sharp limit.
    None,
    /// Seed covariance of a finite Gaussian POVM, in covariance-matrix units.
    Finite(DMatrix<f64>),
}

/// A Gaussian measurement on a subset of modes.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralDyneSpec {
    modes: Vec<usize>,
    /// `k x 2m` rows over the measured modes' quadratures.
    combos: DMatrix<f64>,
    noise: Noise,
}

impl GeneralDyneSpec {
    /// Sharp homodyne of one quadrature.
    pub fn homodyne(mode: usize, quadrature: Quadrature) -> Self {
        let mut combos = DMatrix::zeros(1, 2);
        combos[(0, quadrature.offset())] = 1.0;
        GeneralDyneSpec {
            modes: vec![mode],
            combos,
            noise: Noise::None,
        }
    }

    /// Joint sharp homodyne of one quadrature on each listed mode.
    pub fn homodyne_many(targets: &[(usize, Quadrature)]) -> Self {
        let m = targets.len();
        let mut combos = DMatrix::zeros(m, 2 * m);
        for (i, &(_, q)) in targets.iter().enumerate() {
            combos[(i, 2 * i + q.offset())] = 1.0;
        }
        GeneralDyneSpec {
            modes: targets.iter().map(|t| t.0).collect(),
            combos,
            noise: Noise::None,
        }
    }

    /// Bell (double-homodyne) measurement in the EPR limit.
    ///
    /// Outcome is `(x_a − x_b, p_a + p_b)`: the two directions left sharp by
    /// the EPR covariance `cc [[I, σ_z], [σ_z, I]]` as `cc → ∞`.
    pub fn bell(mode_a: usize, mode_b: usize) -> Self {
        #[rustfmt::skip]
        let combos = DMatrix::from_row_slice(2, 4, &[
            1.0, 0.0, -1.0, 0.0,
            0.0, 1.0, 0.0, 1.0,
        ]);
        GeneralDyneSpec {
            modes: vec![mode_a, mode_b],
            combos,
            noise: Noise::None,
        }
    }

    /// Sharp readout of arbitrary combinations (`k x 2m`, full row rank).
    pub fn sharp(modes: Vec<usize>, combos: DMatrix<f64>) -> Result<Self> {
        if combos.ncols() != 2 * modes.len() {
            return Err(Error::DimensionMismatch {
                expected: 2 * modes.len(),
                found: combos.ncols(),
            });
        }
        if combos.nrows() == 0 {
            return Err(invalid("combos", "must have at least one row"));
        }
        Ok(GeneralDyneSpec {
            modes,
            combos,
            noise: Noise::None,
        })
    }

    /// General-dyne with finite symmetric seed covariance `noise_cov` (2m x 2m).
    /// The outcome is a full phase-space vector for the measured modes.
    pub fn finite(modes: Vec<usize>, noise_cov: DMatrix<f64>) -> Result<Self> {
        let d = 2 * modes.len();
        if noise_cov.nrows() != d || noise_cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: noise_cov.nrows(),
            });
        }
        if (&noise_cov - noise_cov.transpose()).amax() > 1e-12 * noise_cov.amax().max(1.0) {
            return Err(invalid("noise_cov", "must be symmetric"));
        }
        Ok(GeneralDyneSpec {
            modes,
            combos: DMatrix::identity(d, d),
            noise: Noise::Finite(noise_cov),
        })
    }

    /// Finite-`cc` EPR projector seed, `cc [[I, σ_z], [σ_z, I]]`.
    pub fn epr_finite(mode_a: usize, mode_b: usize, cc: f64) -> Result<Self> {
        #[rustfmt::skip]
        let seed = DMatrix::from_row_slice(4, 4, &[
            cc, 0.0, cc, 0.0,
            0.0, cc, 0.0, -cc,
            cc, 0.0, cc, 0.0,
            0.0, -cc, 0.0, cc,
        ]);
        Self::finite(vec![mode_a, mode_b], seed)
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn outcome_dim(&self) -> usize {
        self.combos.nrows()
    }

    pub fn is_sharp(&self) -> bool {
        self.noise == Noise::None
    }
}

/// A sampled measurement record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementOutcome {
    pub values: Vec<f64>,
    /// Natural log of the outcome probability density.
    pub log_density: f64,
}

/// Affine dependence of the post-measurement state on the outcome.
///
/// The conditional covariance does not depend on the outcome; the
/// conditional mean is `offset + gain · y`.
#[derive(Clone, Debug)]
pub struct ConditionalMap {
    remaining_modes: Vec<usize>,
    cov: DMatrix<f64>,
    gain: DMatrix<f64>,
    offset: DVector<f64>,
    outcome_mean: DVector<f64>,
    /// In quadrature units.
    outcome_cov: DMatrix<f64>,
    outcome_chol: Cholesky<f64, Dyn>,
}

impl ConditionalMap {
    pub fn new(state: &GaussianState, spec: &GeneralDyneSpec) -> Result<Self> {
        let n = state.n_modes();
        check_modes(&spec.modes, n)?;
        if spec.modes.len() >= n {
            return Err(invalid("spec", "at least one mode must remain unmeasured"));
        }
        let remaining_modes: Vec<usize> = (0..n).filter(|m| !spec.modes.contains(m)).collect();
        let meas_idx = phase_space_indices(&spec.modes);
        let rest_idx = phase_space_indices(&remaining_modes);

        let sigma = state.cov();
        let mean = state.mean();
        let combos = &spec.combos;

        let s_mm = sigma.select_rows(meas_idx.iter()).select_columns(meas_idx.iter());
        let s_rm = sigma.select_rows(rest_idx.iter()).select_columns(meas_idx.iter());
        let s_rr = sigma.select_rows(rest_idx.iter()).select_columns(rest_idx.iter());

        let mut s_yy = combos * &s_mm * combos.transpose();
        if let Noise::Finite(noise) = &spec.noise {
            s_yy += noise;
        }
        let s_yy = (&s_yy + s_yy.transpose()) * 0.5;
        let c = &s_rm * combos.transpose();

        let chol = s_yy.clone().cholesky().ok_or_else(|| Error::SingularConditioning {
            matrix: s_yy.row_iter().map(|r| r.iter().copied().collect()).collect(),
        })?;
        // gain = C Σ_yy⁻¹
        let gain = chol.solve(&c.transpose()).transpose();
        let cov = &s_rr - &gain * c.transpose();

        let outcome_mean = combos * mean.select_rows(meas_idx.iter());
        let offset = mean.select_rows(rest_idx.iter()) - &gain * &outcome_mean;

        let outcome_cov = &s_yy * 0.5;
        let outcome_chol = outcome_cov
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?;

        Ok(ConditionalMap {
            remaining_modes,
            cov: (&cov + cov.transpose()) * 0.5,
            gain,
            offset,
            outcome_mean,
            outcome_cov,
            outcome_chol,
        })
    }

    /// Original indices of the unmeasured modes, in output order.
    pub fn remaining_modes(&self) -> &[usize] {
        &self.remaining_modes
    }

    pub fn conditional_cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn outcome_mean(&self) -> &DVector<f64> {
        &self.outcome_mean
    }

    pub fn outcome_cov(&self) -> &DMatrix<f64> {
        &self.outcome_cov
    }

    pub fn conditional_mean(&self, outcome: &DVector<f64>) -> DVector<f64> {
        &self.offset + &self.gain * outcome
    }

    pub fn state_given(&self, outcome: &DVector<f64>) -> Result<GaussianState> {
        if outcome.len() != self.outcome_mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.outcome_mean.len(),
                found: outcome.len(),
            });
        }
        Ok(GaussianState::from_parts(
            self.conditional_mean(outcome),
            self.cov.clone(),
        ))
    }

    pub fn log_density(&self, outcome: &DVector<f64>) -> f64 {
        let k = outcome.len() as f64;
        let diff = outcome - &self.outcome_mean;
        let z = self.outcome_chol.l().solve_lower_triangular(&diff).expect("triangular solve");
        let log_det: f64 = self.outcome_chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        -0.5 * (z.norm_squared() + log_det + k * (2.0 * PI).ln())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let k = self.outcome_mean.len();
        let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.outcome_mean + self.outcome_chol.l() * z
    }
}

/// Post-measurement state of the unmeasured modes and the log density of
/// `outcome`.
pub fn condition(
    state: &GaussianState,
    spec: &GeneralDyneSpec,
    outcome: &DVector<f64>,
) -> Result<(GaussianState, f64)> {
    let map = ConditionalMap::new(state, spec)?;
    let post = map.state_given(outcome)?;
    Ok((post, map.log_density(outcome)))
}

/// Draws one outcome from the measurement's outcome distribution.
pub fn sample_outcome<R: Rng + ?Sized>(
    state: &GaussianState,
    spec: &GeneralDyneSpec,
    rng: &mut R,
) -> Result<MeasurementOutcome> {
    let map = ConditionalMap::new(state, spec)?;
    let y = map.sample(rng);
    Ok(MeasurementOutcome {
        log_density: map.log_density(&y),
        values: y.iter().copied().collect(),
    })
}

pub fn displace(state: &GaussianState, mode: usize, dx: f64, dp: f64) -> Result<GaussianState> {
    check_modes(&[mode], state.n_modes())?;
    if !dx.is_finite() || !dp.is_finite() {
        return Err(invalid("displacement", "must be finite"));
    }
    let mut shift = DVector::zeros(2 * state.n_modes());
    shift[2 * mode] = dx;
    shift[2 * mode + 1] = dp;
    Ok(state.shifted(&shift))
}

/// `Tr[ρ_a ρ_b] = 2ⁿ / √det(σ_a + σ_b) · exp(−δᵀ (σ_a + σ_b)⁻¹ δ)`.
pub fn overlap(a: &GaussianState, b: &GaussianState) -> Result<f64> {
    if a.n_modes() != b.n_modes() {
        return Err(Error::DimensionMismatch {
            expected: a.n_modes(),
            found: b.n_modes(),
        });
    }
    Ok(gaussian_overlap(
        &(a.cov() + b.cov()),
        &(a.mean() - b.mean()),
    ))
}

pub(crate) fn gaussian_overlap(sum_cov: &DMatrix<f64>, delta: &DVector<f64>) -> f64 {
    let n = sum_cov.nrows() / 2;
    let chol = sum_cov.clone().cholesky().expect("sum of covariances is positive definite");
    let det = chol.determinant();
    let quad = delta.dot(&chol.solve(delta));
    2f64.powi(n as i32) / det.sqrt() * (-quad).exp()
}

/// Overlap of a single-mode state with a coherent target (identity covariance).
pub fn overlap_with_coherent(state: &GaussianState, target: &GaussianState) -> Result<f64> {
    for s in [state, target] {
        if s.n_modes() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: s.n_modes(),
            });
        }
    }
    if (target.cov() - DMatrix::<f64>::identity(2, 2)).amax() > 1e-12 {
        return Err(invalid("target", "must be a coherent state"));
    }
    overlap(state, target)
}

/// Quadrature-coupling symplectic between a system mode and its probe.
///
/// On `(η₁, η₂, χ₁, χ₂)`:
/// - `X`: `χ₁ → χ₁ + η₁`, `η₂ → η₂ − χ₂`
/// - `P`: `χ₁ → χ₁ + η₂`, `η₁ → η₁ + χ₂`
pub fn unsharp_coupling(
    n_modes: usize,
    system: usize,
    ancilla: usize,
    quadrature: Quadrature,
) -> Result<SymplecticTransform> {
    #[rustfmt::skip]
    let local = match quadrature {
        Quadrature::X => DMatrix::from_row_slice(4, 4, &[
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, -1.0,
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ]),
        Quadrature::P => DMatrix::from_row_slice(4, 4, &[
            1.0, 0.0, 0.0, 1.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 1.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ]),
    };
    SymplecticTransform::embed(&local, n_modes, &[system, ancilla])
}

/// Appends `ancilla` as the last mode and couples it to `mode`.
pub fn unsharp_couple(
    state: &GaussianState,
    mode: usize,
    quadrature: Quadrature,
    ancilla: &GaussianState,
) -> Result<GaussianState> {
    if ancilla.n_modes() != 1 {
        return Err(invalid("ancilla", "must be a single mode"));
    }
    check_modes(&[mode], state.n_modes())?;
    let joint = state.tensor(ancilla);
    let n = joint.n_modes();
    unsharp_coupling(n, mode, n - 1, quadrature)?.apply(&joint)
}

/// One party's unsharp probe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnsharpProbe {
    pub mode: usize,
    pub quadrature: Quadrature,
    /// Readout-quadrature variance of the probe ancilla.
    pub omega_sq: f64,
}

/// How the two probe readouts are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Combination {
    Difference,
    Sum,
}

impl Combination {
    pub fn sign(self) -> f64 {
        match self {
            Combination::Difference => -1.0,
            Combination::Sum => 1.0,
        }
    }
}

/// Couples a probe ancilla to each of two modes (A's then B's, appended in
/// that order). Returns the coupled state.
pub fn couple_pair(
    state: &GaussianState,
    a: &UnsharpProbe,
    b: &UnsharpProbe,
    u: f64,
) -> Result<GaussianState> {
    if a.mode == b.mode {
        return Err(Error::DuplicateMode(a.mode));
    }
    let anc_a = GaussianState::squeezed_ancilla(a.omega_sq, u)?;
    let anc_b = GaussianState::squeezed_ancilla(b.omega_sq, u)?;
    let s = unsharp_couple(state, a.mode, a.quadrature, &anc_a)?;
    unsharp_couple(&s, b.mode, b.quadrature, &anc_b)
}

/// Mean and variance (quadrature units) of the joint probe readout
/// `χ₁A ± χ₁B` after coupling both probes.
pub fn unsharp_readout_moments(
    state: &GaussianState,
    a: &UnsharpProbe,
    b: &UnsharpProbe,
    combination: Combination,
    u: f64,
) -> Result<(f64, f64)> {
    let coupled = couple_pair(state, a, b, u)?;
    let n = coupled.n_modes();
    let (ia, ib) = (
        quadrature_index(n - 2, Quadrature::X),
        quadrature_index(n - 1, Quadrature::X),
    );
    let mut row = DVector::zeros(2 * n);
    row[ia] = 1.0;
    row[ib] = combination.sign();
    let mean = row.dot(coupled.mean());
    let var = 0.5 * (row.transpose() * coupled.cov() * &row)[(0, 0)];
    Ok((mean, var))
}

/// Variance of `χ₁A ± χ₁B` after coupling both probes, in quadrature units.
pub fn unsharp_readout_variance(
    state: &GaussianState,
    a: &UnsharpProbe,
    b: &UnsharpProbe,
    combination: Combination,
    u: f64,
) -> Result<f64> {
    Ok(unsharp_readout_moments(state, a, b, combination, u)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::PHYSICALITY_TOL;
    use crate::rng::stream;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn mixed_three_mode(seed: u64) -> GaussianState {
        let mut rng = stream(seed, 0);
        let mut st = GaussianState::thermal(1.0 + rng.random::<f64>())
            .unwrap()
            .tensor(&GaussianState::thermal(1.0 + 2.0 * rng.random::<f64>()).unwrap())
            .tensor(&GaussianState::thermal(1.0 + rng.random::<f64>()).unwrap());
        for k in 0..4 {
            let s = SymplecticTransform::beam_splitter(rng.random(), 3, k % 3, (k + 1) % 3)
                .unwrap()
                .compose(&SymplecticTransform::squeezer(rng.random::<f64>() - 0.5, 3, k % 3).unwrap())
                .unwrap()
                .compose(&SymplecticTransform::phase_rotation(6.0 * rng.random::<f64>(), 3, (k + 2) % 3).unwrap())
                .unwrap();
            st = s.apply(&st).unwrap();
        }
        let shift = DVector::from_fn(6, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        st.shifted(&shift)
    }

    #[test]
    fn product_vacuum_is_unaffected_by_bell_outcomes() {
        let vac = GaussianState::vacuum(3).unwrap();
        let spec = GeneralDyneSpec::bell(1, 2);
        for y in [[0.0, 0.0], [1.5, -2.0], [-3.0, 0.2]] {
            let (post, _) = condition(&vac, &spec, &DVector::from_row_slice(&y)).unwrap();
            assert_eq!(post, GaussianState::vacuum(1).unwrap());
        }
    }

    #[test]
    fn homodyne_on_tmsv_gives_schur_complement() {
        for r in [0.2f64, 0.8, 1.5] {
            let s = GaussianState::tmsv(r).unwrap();
            let (post, _) = condition(&s, &GeneralDyneSpec::homodyne(1, Quadrature::X), &DVector::from_element(1, 0.3)).unwrap();
            assert!(close(post.cov()[(0, 0)], 1.0 / (2.0 * r).cosh(), 1e-12));
            assert!(close(post.cov()[(1, 1)], (2.0 * r).cosh(), 1e-12));
            // mean follows the correlation: tanh 2r · y
            assert!(close(post.mean()[0], (2.0 * r).tanh() * 0.3, 1e-12));
            assert!(post.is_physical(PHYSICALITY_TOL));
        }
    }

    #[test]
    fn condition_errors() {
        let s = GaussianState::vacuum(2).unwrap();
        assert!(condition(&s, &GeneralDyneSpec::homodyne(2, Quadrature::X), &DVector::zeros(1)).is_err());
        assert!(condition(&s, &GeneralDyneSpec::homodyne(0, Quadrature::X), &DVector::zeros(2)).is_err());
        // combination with zero variance
        let spec = GeneralDyneSpec::sharp(vec![0], DMatrix::zeros(1, 2)).unwrap();
        let err = condition(&s, &spec, &DVector::zeros(1)).unwrap_err();
        assert!(matches!(err, Error::SingularConditioning { .. }));
    }

    #[test]
    fn log_density_matches_hand_formula() {
        // vacuum Bell outcome ~ N(0, I) in quadrature units
        let vac = GaussianState::vacuum(3).unwrap();
        let y = DVector::from_row_slice(&[0.7, -1.1]);
        let (_, ld) = condition(&vac, &GeneralDyneSpec::bell(1, 2), &y).unwrap();
        let expected = -(2.0 * PI).ln() - 0.5 * (0.49 + 1.21);
        assert!(close(ld, expected, 1e-12));
    }

    #[test]
    fn sampled_outcomes_are_deterministic() {
        let s = GaussianState::tmsv(0.5).unwrap().tensor(&GaussianState::coherent(1.0, 2.0).unwrap());
        let spec = GeneralDyneSpec::bell(1, 2);
        let a: Vec<_> = {
            let mut rng = stream(11, 3);
            (0..5).map(|_| sample_outcome(&s, &spec, &mut rng).unwrap()).collect()
        };
        let b: Vec<_> = {
            let mut rng = stream(11, 3);
            (0..5).map(|_| sample_outcome(&s, &spec, &mut rng).unwrap()).collect()
        };
        assert_eq!(a, b);
        let map = ConditionalMap::new(&s, &spec).unwrap();
        for o in &a {
            let y = DVector::from_vec(o.values.clone());
            assert!(close(o.log_density, map.log_density(&y), 1e-12));
        }
    }

    #[test]
    fn vacuum_bell_sample_moments() {
        let vac = GaussianState::vacuum(2).unwrap().tensor(&GaussianState::coherent(0.4, -0.2).unwrap());
        let spec = GeneralDyneSpec::bell(1, 2);
        let map = ConditionalMap::new(&vac, &spec).unwrap();
        let n = 100_000;
        let mut rng = stream(5, 0);
        let ys: Vec<DVector<f64>> = (0..n).map(|_| map.sample(&mut rng)).collect();
        let nf = n as f64;
        let m0 = ys.iter().map(|y| y[0]).sum::<f64>() / nf;
        let m1 = ys.iter().map(|y| y[1]).sum::<f64>() / nf;
        // analytic: mean (0 - 0.4, 0 + (-0.2)), cov = I
        assert!(close(m0, -0.4, 3.0 / nf.sqrt()));
        assert!(close(m1, -0.2, 3.0 / nf.sqrt()));
        let v00 = ys.iter().map(|y| (y[0] - m0).powi(2)).sum::<f64>() / (nf - 1.0);
        let v11 = ys.iter().map(|y| (y[1] - m1).powi(2)).sum::<f64>() / (nf - 1.0);
        let v01 = ys.iter().map(|y| (y[0] - m0) * (y[1] - m1)).sum::<f64>() / (nf - 1.0);
        // se of a variance ≈ √(2/n) σ², of a covariance ≈ √(1/n)
        let se = (2.0 / nf).sqrt();
        assert!(close(v00, 1.0, 5.0 * se));
        assert!(close(v11, 1.0, 5.0 * se));
        assert!(close(v01, 0.0, 5.0 / nf.sqrt()));
    }

    #[test]
    fn outcome_averaged_state_is_the_reduced_state() {
        let s = mixed_three_mode(42);
        let spec = GeneralDyneSpec::homodyne_many(&[(0, Quadrature::X), (2, Quadrature::P)]);
        let map = ConditionalMap::new(&s, &spec).unwrap();
        let n = 100_000;
        let mut rng = stream(9, 0);
        let means: Vec<DVector<f64>> = (0..n).map(|_| map.conditional_mean(&map.sample(&mut rng))).collect();
        let nf = n as f64;
        let avg = means.iter().fold(DVector::zeros(2), |acc, m| acc + m) / nf;
        let spread = means
            .iter()
            .fold(DMatrix::zeros(2, 2), |acc, m| acc + (m - &avg) * (m - &avg).transpose())
            / (nf - 1.0);
        // averaged second moments in covariance units: σ_c + 2 Cov(mean)
        let averaged = map.conditional_cov() + spread * 2.0;
        let reduced = s.partial_trace(&[1]).unwrap();
        let scale = reduced.cov().amax();
        assert!((averaged - reduced.cov()).amax() < 0.03 * scale);
        assert!((avg - reduced.mean()).amax() < 0.03 * scale.sqrt());
    }

    #[test]
    fn chain_rule_of_conditioning() {
        for seed in 0..20 {
            let s = mixed_three_mode(seed);
            let y_a = 0.37 * seed as f64 - 2.0;
            let y_b = 1.1 - 0.13 * seed as f64;
            let joint = GeneralDyneSpec::homodyne_many(&[(2, Quadrature::X), (0, Quadrature::P)]);
            let (one_shot, ld_joint) = condition(&s, &joint, &DVector::from_row_slice(&[y_a, y_b])).unwrap();
            let (step1, ld1) = condition(&s, &GeneralDyneSpec::homodyne(2, Quadrature::X), &DVector::from_element(1, y_a)).unwrap();
            let (step2, ld2) = condition(&step1, &GeneralDyneSpec::homodyne(0, Quadrature::P), &DVector::from_element(1, y_b)).unwrap();
            assert!((one_shot.cov() - step2.cov()).amax() < 1e-10);
            assert!((one_shot.mean() - step2.mean()).amax() < 1e-10);
            assert!(close(ld_joint, ld1 + ld2, 1e-10));
        }
    }

    #[test]
    fn epr_limit_matches_large_finite_cc() {
        for seed in 100..120 {
            let s = mixed_three_mode(seed);
            let rm = DVector::from_row_slice(&[0.3, -0.2, -1.0, 0.8]);
            let (finite, _) = condition(&s, &GeneralDyneSpec::epr_finite(1, 2, 1e8).unwrap(), &rm).unwrap();
            let y = DVector::from_row_slice(&[rm[0] - rm[2], rm[1] + rm[3]]);
            let (sharp, _) = condition(&s, &GeneralDyneSpec::bell(1, 2), &y).unwrap();
            let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).amax() / b.amax();
            assert!(rel(finite.cov(), sharp.cov()) < 1e-6);
            let dm = (finite.mean() - sharp.mean()).amax() / sharp.mean().amax().max(1.0);
            assert!(dm < 1e-6, "mean deviation {dm}");
        }
    }

    #[test]
    fn displacement() {
        let v = GaussianState::vacuum(1).unwrap();
        assert_eq!(displace(&v, 0, 1.2, -0.3).unwrap(), GaussianState::coherent(1.2, -0.3).unwrap());
        let s = GaussianState::tmsv(0.6).unwrap();
        let d = displace(&s, 1, 0.5, 0.25).unwrap();
        let back = displace(&d, 1, -0.5, -0.25).unwrap();
        assert!((back.mean() - s.mean()).amax() < 1e-15);
        assert_eq!(d.duan_zeta(0, 1).unwrap(), s.duan_zeta(0, 1).unwrap());
        assert!(displace(&s, 2, 0.0, 0.0).is_err());
    }

    #[test]
    fn coherent_overlaps() {
        let a = GaussianState::coherent(0.3, -1.2).unwrap();
        assert!(close(overlap_with_coherent(&a, &a).unwrap(), 1.0, 1e-15));
        let v = GaussianState::vacuum(1).unwrap();
        for d in [0.0, 0.5, 1.0, 2.5] {
            let t = GaussianState::coherent(d, 0.0).unwrap();
            assert!(close(overlap_with_coherent(&v, &t).unwrap(), (-d * d / 2.0).exp(), 1e-14));
            assert_eq!(overlap(&v, &t).unwrap(), overlap(&t, &v).unwrap());
        }
        let two = GaussianState::vacuum(2).unwrap();
        assert!(overlap_with_coherent(&two, &a).is_err());
        let thermal = GaussianState::thermal(2.0).unwrap();
        assert!(overlap_with_coherent(&v, &thermal).is_err());
    }

    #[test]
    fn couplings_are_symplectic() {
        for q in [Quadrature::X, Quadrature::P] {
            let s = unsharp_coupling(2, 0, 1, q).unwrap();
            assert!(s.symplectic_deviation() <= 1e-12);
        }
    }

    #[test]
    fn x_probe_readout_adds_ancilla_noise() {
        let s = GaussianState::tmsv(0.7).unwrap().partial_trace(&[0]).unwrap();
        let anc = GaussianState::squeezed_ancilla(0.3, 0.25).unwrap();
        let c = unsharp_couple(&s, 0, Quadrature::X, &anc).unwrap();
        // readout χ₁' = χ₁ + η₁ on mode 1
        assert!(close(c.cov()[(2, 2)], s.cov()[(0, 0)] + 0.3, 1e-12));
        // back-action u/ω² on the conjugate system quadrature
        assert!(close(c.cov()[(1, 1)], s.cov()[(1, 1)] + 0.25 / 0.3, 1e-12));
    }

    #[test]
    fn no_back_action_without_conjugate_noise() {
        let s = GaussianState::tmsv(0.9).unwrap();
        let anc = GaussianState::squeezed_ancilla(0.4, 1e-300).unwrap();
        for q in [Quadrature::X, Quadrature::P] {
            let c = unsharp_couple(&s, 1, q, &anc).unwrap();
            let sys = c.partial_trace(&[0, 1]).unwrap();
            assert!((sys.cov() - s.cov()).amax() < 1e-12);
        }
        assert!(unsharp_couple(&s, 0, Quadrature::X, &GaussianState::vacuum(2).unwrap()).is_err());
        assert!(unsharp_couple(&s, 3, Quadrature::X, &anc).is_err());
    }

    #[test]
    fn readout_sum_reproduces_round_one_formula() {
        for r in [0.1f64, 0.8, 1.4] {
            for w in [0.05, 0.2, 0.9] {
                let s = GaussianState::tmsv(r).unwrap();
                let xa = UnsharpProbe { mode: 0, quadrature: Quadrature::X, omega_sq: w };
                let xb = UnsharpProbe { mode: 1, ..xa };
                let pa = UnsharpProbe { quadrature: Quadrature::P, ..xa };
                let pb = UnsharpProbe { quadrature: Quadrature::P, ..xb };
                let vx = unsharp_readout_variance(&s, &xa, &xb, Combination::Difference, 0.25).unwrap();
                let vp = unsharp_readout_variance(&s, &pa, &pb, Combination::Sum, 0.25).unwrap();
                let zeta = vx + vp;
                assert!(close(zeta, 2.0 * (-2.0 * r).exp() + 2.0 * w, 1e-12));
                assert_eq!(zeta < 2.0, w < 1.0 - (-2.0 * r).exp());
            }
        }
    }

    #[test]
    fn readout_sharp_limit_is_duan_zeta() {
        let s = GaussianState::tmsv(0.6).unwrap();
        let w = 1e-12;
        let xa = UnsharpProbe { mode: 0, quadrature: Quadrature::X, omega_sq: w };
        let xb = UnsharpProbe { mode: 1, ..xa };
        let pa = UnsharpProbe { quadrature: Quadrature::P, ..xa };
        let pb = UnsharpProbe { quadrature: Quadrature::P, ..xb };
        let zeta = unsharp_readout_variance(&s, &xa, &xb, Combination::Difference, 0.25).unwrap()
            + unsharp_readout_variance(&s, &pa, &pb, Combination::Sum, 0.25).unwrap();
        assert!(close(zeta, s.duan_zeta(0, 1).unwrap(), 1e-10));
        assert!(unsharp_readout_variance(&s, &xa, &xa, Combination::Sum, 0.25).is_err());
        let bad = UnsharpProbe { omega_sq: -1.0, ..xb };
        assert!(unsharp_readout_variance(&s, &xa, &bad, Combination::Sum, 0.25).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn conditioning_keeps_states_physical(seed in 0u64..10_000, y0 in -3.0f64..3.0, y1 in -3.0f64..3.0) {
            let s = mixed_three_mode(seed);
            let (post, ld) = condition(&s, &GeneralDyneSpec::bell(0, 2), &DVector::from_row_slice(&[y0, y1])).unwrap();
            prop_assert!(post.is_physical(PHYSICALITY_TOL));
            prop_assert!(ld.is_finite());
        }
    }
}
