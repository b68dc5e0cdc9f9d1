//! Gaussian states and symplectic maps in phase space.
//!
//! Quadratures are ordered `(x_1, p_1, ..., x_n, p_n)`. Covariance matrices
//! follow the convention in which the vacuum covariance is the identity, so
//! a physical state has every symplectic eigenvalue `>= 1`. The variance of
//! an individual quadrature operator is half the corresponding covariance
//! entry (vacuum quadrature variance 1/2); [`GaussianState::duan_zeta`] and
//! every sampled outcome are expressed in those variance units.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Tolerance on symplectic eigenvalues when checking physicality.
pub const PHYSICALITY_TOL: f64 = 1e-9;

/// Tolerance on `S Ω Sᵀ = Ω` for constructed transforms.
pub const SYMPLECTIC_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    X,
    P,
}

impl Quadrature {
    pub fn offset(self) -> usize {
        match self {
            Quadrature::X => 0,
            Quadrature::P => 1,
        }
    }

    pub fn conjugate(self) -> Quadrature {
        match self {
            Quadrature::X => Quadrature::P,
            Quadrature::P => Quadrature::X,
        }
    }
}

/// Phase-space index of `quadrature` on `mode`.
pub fn quadrature_index(mode: usize, quadrature: Quadrature) -> usize {
    2 * mode + quadrature.offset()
}

/// Block-diagonal symplectic form with per-mode blocks `[[0, 1], [-1, 0]]`.
pub fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for k in 0..n_modes {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    omega
}

fn check_finite(name: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(name, "contains a non-finite entry"))
    }
}

fn check_mode(index: usize, n_modes: usize) -> Result<()> {
    if index < n_modes {
        Ok(())
    } else {
        Err(Error::InvalidMode { index, n_modes })
    }
}

/// Checks that `modes` are valid and pairwise distinct.
pub(crate) fn check_modes(modes: &[usize], n_modes: usize) -> Result<()> {
    for (i, &m) in modes.iter().enumerate() {
        check_mode(m, n_modes)?;
        if modes[..i].contains(&m) {
            return Err(Error::DuplicateMode(m));
        }
    }
    Ok(())
}

/// An n-mode Gaussian state: first moments and covariance matrix.
///
/// Values are immutable; every operation returns a new state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "StateDump", try_from = "StateDump")]
pub struct GaussianState {
    n_modes: usize,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianState {
    /// Builds a state, symmetrizing `cov` and rejecting unphysical moments.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let state = Self::from_moments_unchecked(mean, cov)?;
        let min = state.min_symplectic_eigenvalue()?;
        if min < 1.0 - PHYSICALITY_TOL {
            return Err(Error::Unphysical {
                min_eigenvalue: min,
            });
        }
        Ok(state)
    }

    /// Builds a state without the uncertainty-principle check.
    ///
    /// Shapes and finiteness are still validated and `cov` is symmetrized.
    /// Needed for probe ancillas specified with an uncertainty product below
    /// the vacuum bound of this convention.
    pub fn from_moments_unchecked(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if mean.is_empty() || !mean.len().is_multiple_of(2) {
            return Err(invalid("mean", "length must be a positive even number"));
        }
        if cov.nrows() != cov.ncols() {
            return Err(invalid("cov", "must be square"));
        }
        if cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: cov.nrows(),
            });
        }
        check_finite("mean", mean.as_slice())?;
        check_finite("cov", cov.as_slice())?;
        Ok(Self::from_parts(mean, cov))
    }

    pub(crate) fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        let sym = (&cov + cov.transpose()) * 0.5;
        GaussianState {
            n_modes: mean.len() / 2,
            mean,
            cov: sym,
        }
    }

    pub fn vacuum(n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(invalid("n_modes", "must be at least 1"));
        }
        let dim = 2 * n_modes;
        Ok(Self::from_parts(DVector::zeros(dim), DMatrix::identity(dim, dim)))
    }

    /// Single-mode thermal state with symplectic eigenvalue `nu >= 1`.
    pub fn thermal(nu: f64) -> Result<Self> {
        if !nu.is_finite() || nu < 1.0 {
            return Err(invalid("nu", "must be finite and at least 1"));
        }
        Ok(Self::from_parts(
            DVector::zeros(2),
            DMatrix::identity(2, 2) * nu,
        ))
    }

    /// Two-mode squeezed vacuum with squeezing strength `r`.
    ///
    /// Diagonal blocks are `cosh 2r · I`, off-diagonal blocks
    /// `sinh 2r · diag(1, -1)`, so x-quadratures correlate and
    /// p-quadratures anticorrelate.
    pub fn tmsv(r: f64) -> Result<Self> {
        if !r.is_finite() || r < 0.0 {
            return Err(invalid("r", "must be finite and non-negative"));
        }
        let c = (2.0 * r).cosh();
        let s = (2.0 * r).sinh();
        #[rustfmt::skip]
        let cov = DMatrix::from_row_slice(4, 4, &[
            c, 0.0, s, 0.0,
            0.0, c, 0.0, -s,
            s, 0.0, c, 0.0,
            0.0, -s, 0.0, c,
        ]);
        Ok(Self::from_parts(DVector::zeros(4), cov))
    }

    pub fn coherent(x: f64, p: f64) -> Result<Self> {
        if !x.is_finite() || !p.is_finite() {
            return Err(invalid("displacement", "must be finite"));
        }
        Ok(Self::from_parts(
            DVector::from_vec(vec![x, p]),
            DMatrix::identity(2, 2),
        ))
    }

    /// Probe ancilla with covariance `diag(omega_sq, u / omega_sq)`.
    ///
    /// With the conventional `u = 1/4` this sits below the vacuum
    /// uncertainty bound of the identity-vacuum convention, so it bypasses
    /// the physicality check.
    pub fn squeezed_ancilla(omega_sq: f64, u: f64) -> Result<Self> {
        if !omega_sq.is_finite() || omega_sq <= 0.0 {
            return Err(invalid("omega_sq", "must be finite and positive"));
        }
        if !u.is_finite() || u <= 0.0 {
            return Err(invalid("u", "must be finite and positive"));
        }
        Ok(Self::from_parts(
            DVector::zeros(2),
            DMatrix::from_diagonal(&DVector::from_vec(vec![omega_sq, u / omega_sq])),
        ))
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Direct sum: modes of `self` followed by modes of `other`.
    pub fn tensor(&self, other: &GaussianState) -> GaussianState {
        let (d1, d2) = (2 * self.n_modes, 2 * other.n_modes);
        let mut cov = DMatrix::zeros(d1 + d2, d1 + d2);
        cov.view_mut((0, 0), (d1, d1)).copy_from(&self.cov);
        cov.view_mut((d1, d1), (d2, d2)).copy_from(&other.cov);
        let mean = DVector::from_iterator(
            d1 + d2,
            self.mean.iter().chain(other.mean.iter()).copied(),
        );
        GaussianState::from_parts(mean, cov)
    }

    /// Reduced state on `keep`, with modes in the order listed.
    ///
    /// Listing every mode in a different order is a pure permutation.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<GaussianState> {
        if keep.is_empty() {
            return Err(invalid("keep", "must list at least one mode"));
        }
        check_modes(keep, self.n_modes)?;
        let idx = phase_space_indices(keep);
        Ok(GaussianState::from_parts(
            self.mean.select_rows(idx.iter()),
            self.cov.select_rows(idx.iter()).select_columns(idx.iter()),
        ))
    }

    /// Symplectic eigenvalues in ascending order (one per mode).
    pub fn symplectic_eigenvalues(&self) -> Result<Vec<f64>> {
        symplectic_eigenvalues(&self.cov)
    }

    pub fn min_symplectic_eigenvalue(&self) -> Result<f64> {
        Ok(self.symplectic_eigenvalues()?[0])
    }

    /// True when every symplectic eigenvalue is at least `1 - tol`.
    pub fn is_physical(&self, tol: f64) -> bool {
        self.min_symplectic_eigenvalue()
            .map(|m| m >= 1.0 - tol)
            .unwrap_or(false)
    }

    /// Duan-type sum `Var(x_a - x_b) + Var(p_a + p_b)` in quadrature-variance
    /// units. Equals 2 on the vacuum; values below 2 witness entanglement
    /// of a Gaussian state.
    pub fn duan_zeta(&self, mode_a: usize, mode_b: usize) -> Result<f64> {
        check_modes(&[mode_a, mode_b], self.n_modes)?;
        Ok(duan_zeta_from_cov(&self.cov, mode_a, mode_b))
    }

    /// The same state with `mean` shifted by `shift`.
    pub(crate) fn shifted(&self, shift: &DVector<f64>) -> GaussianState {
        GaussianState {
            n_modes: self.n_modes,
            mean: &self.mean + shift,
            cov: self.cov.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("state serializes")
    }
}

pub(crate) fn duan_zeta_from_cov(cov: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    let (xa, pa, xb, pb) = (2 * a, 2 * a + 1, 2 * b, 2 * b + 1);
    let x_diff = cov[(xa, xa)] + cov[(xb, xb)] - 2.0 * cov[(xa, xb)];
    let p_sum = cov[(pa, pa)] + cov[(pb, pb)] + 2.0 * cov[(pa, pb)];
    0.5 * (x_diff + p_sum)
}

pub(crate) fn phase_space_indices(modes: &[usize]) -> Vec<usize> {
    modes.iter().flat_map(|&m| [2 * m, 2 * m + 1]).collect()
}

/// Symplectic spectrum of a positive-definite covariance matrix.
///
/// With `σ = L Lᵀ`, the matrix `Lᵀ Ωᵀ σ Ω L` is symmetric and shares its
/// spectrum with `-(Ωσ)²`, whose eigenvalues are the squared symplectic
/// eigenvalues, each appearing twice.
pub fn symplectic_eigenvalues(cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = cov.nrows() / 2;
    let chol = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let omega = symplectic_form(n);
    let m = l.transpose() * omega.transpose() * cov * &omega * &l;
    let m = (&m + m.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    Ok(eig.chunks(2).map(|pair| 0.5 * (pair[0] + pair[1])).collect())
}

#[derive(Serialize, Deserialize)]
struct StateDump {
    n_modes: usize,
    mean: Vec<f64>,
    /// Row-major.
    cov: Vec<Vec<f64>>,
}

impl From<GaussianState> for StateDump {
    fn from(s: GaussianState) -> Self {
        StateDump {
            n_modes: s.n_modes,
            mean: s.mean.iter().copied().collect(),
            cov: s
                .cov
                .row_iter()
                .map(|row| row.iter().copied().collect())
                .collect(),
        }
    }
}

impl TryFrom<StateDump> for GaussianState {
    type Error = Error;

    fn try_from(d: StateDump) -> Result<Self> {
        let dim = d.mean.len();
        if d.n_modes * 2 != dim {
            return Err(Error::DimensionMismatch {
                expected: d.n_modes * 2,
                found: dim,
            });
        }
        if d.cov.len() != dim || d.cov.iter().any(|row| row.len() != dim) {
            return Err(invalid("cov", "must be a square matrix matching the mean"));
        }
        let cov = DMatrix::from_row_iterator(dim, dim, d.cov.into_iter().flatten());
        GaussianState::from_moments_unchecked(DVector::from_vec(d.mean), cov)
    }
}

/// A linear phase-space map `S` with `S Ω Sᵀ = Ω`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymplecticTransform {
    n_modes: usize,
    matrix: DMatrix<f64>,
}

impl SymplecticTransform {
    /// Wraps `matrix`, checking symplecticity relative to its scale.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || !matrix.nrows().is_multiple_of(2) || matrix.nrows() == 0 {
            return Err(invalid("matrix", "must be square with positive even size"));
        }
        check_finite("matrix", matrix.as_slice())?;
        let n_modes = matrix.nrows() / 2;
        let t = SymplecticTransform { n_modes, matrix };
        let scale = t.matrix.amax().max(1.0).powi(2);
        let dev = t.symplectic_deviation();
        if dev > SYMPLECTIC_TOL * scale {
            return Err(Error::NotSymplectic { deviation: dev });
        }
        Ok(t)
    }

    pub fn identity(n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(invalid("n_modes", "must be at least 1"));
        }
        Ok(SymplecticTransform {
            n_modes,
            matrix: DMatrix::identity(2 * n_modes, 2 * n_modes),
        })
    }

    /// Beam splitter of transmissivity `tau` acting on `(mode_a, mode_b)`:
    ///
    /// ```text
    /// a' =  √τ a + √(1-τ) b
    /// b' = √(1-τ) a − √τ b
    /// ```
    ///
    /// applied identically to both quadratures. At `τ = 1` the first port
    /// passes through unchanged and the second picks up a sign.
    pub fn beam_splitter(tau: f64, n_modes: usize, mode_a: usize, mode_b: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(invalid("tau", format!("{tau} is outside [0, 1]")));
        }
        if mode_a == mode_b {
            return Err(Error::DuplicateMode(mode_a));
        }
        check_modes(&[mode_a, mode_b], n_modes)?;
        let t = tau.sqrt();
        let s = (1.0 - tau).sqrt();
        #[rustfmt::skip]
        let local = DMatrix::from_row_slice(4, 4, &[
            t, 0.0, s, 0.0,
            0.0, t, 0.0, s,
            s, 0.0, -t, 0.0,
            0.0, s, 0.0, -t,
        ]);
        Self::embed(&local, n_modes, &[mode_a, mode_b])
    }

    /// Single-mode squeezer `diag(e^{-r}, e^{r})` on `mode`.
    pub fn squeezer(r: f64, n_modes: usize, mode: usize) -> Result<Self> {
        if !r.is_finite() {
            return Err(invalid("r", "must be finite"));
        }
        let local = DMatrix::from_diagonal(&DVector::from_vec(vec![(-r).exp(), r.exp()]));
        Self::embed(&local, n_modes, &[mode])
    }

    pub fn phase_rotation(theta: f64, n_modes: usize, mode: usize) -> Result<Self> {
        if !theta.is_finite() {
            return Err(invalid("theta", "must be finite"));
        }
        let (s, c) = theta.sin_cos();
        let local = DMatrix::from_row_slice(2, 2, &[c, s, -s, c]);
        Self::embed(&local, n_modes, &[mode])
    }

    /// Embeds a `2k x 2k` symplectic block acting on `modes`; identity elsewhere.
    pub fn embed(local: &DMatrix<f64>, n_modes: usize, modes: &[usize]) -> Result<Self> {
        if local.nrows() != 2 * modes.len() || local.ncols() != 2 * modes.len() {
            return Err(Error::DimensionMismatch {
                expected: 2 * modes.len(),
                found: local.nrows(),
            });
        }
        if n_modes == 0 {
            return Err(invalid("n_modes", "must be at least 1"));
        }
        check_modes(modes, n_modes)?;
        let idx = phase_space_indices(modes);
        let mut matrix = DMatrix::identity(2 * n_modes, 2 * n_modes);
        for (i, &gi) in idx.iter().enumerate() {
            for (j, &gj) in idx.iter().enumerate() {
                matrix[(gi, gj)] = local[(i, j)];
            }
        }
        Self::new(matrix)
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `max |S Ω Sᵀ − Ω|`.
    pub fn symplectic_deviation(&self) -> f64 {
        let omega = symplectic_form(self.n_modes);
        (&self.matrix * &omega * self.matrix.transpose() - omega).amax()
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &SymplecticTransform) -> Result<Self> {
        if self.n_modes != other.n_modes {
            return Err(Error::DimensionMismatch {
                expected: self.n_modes,
                found: other.n_modes,
            });
        }
        Ok(SymplecticTransform {
            n_modes: self.n_modes,
            matrix: &self.matrix * &other.matrix,
        })
    }

    /// `σ → S σ Sᵀ`, `r → S r`.
    pub fn apply(&self, state: &GaussianState) -> Result<GaussianState> {
        if state.n_modes != self.n_modes {
            return Err(Error::DimensionMismatch {
                expected: self.n_modes,
                found: state.n_modes,
            });
        }
        let cov = &self.matrix * &state.cov * self.matrix.transpose();
        Ok(GaussianState::from_parts(&self.matrix * &state.mean, cov))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn vacuum_has_identity_cov() {
        let v = GaussianState::vacuum(1).unwrap();
        assert_eq!(v.mean().as_slice(), &[0.0, 0.0]);
        assert_eq!(v.cov(), &DMatrix::<f64>::identity(2, 2));
        assert_eq!(GaussianState::vacuum(2).unwrap().cov(), &DMatrix::<f64>::identity(4, 4));
        for nu in GaussianState::vacuum(3).unwrap().symplectic_eigenvalues().unwrap() {
            assert_close(nu, 1.0, 1e-12);
        }
        assert!(GaussianState::vacuum(0).is_err());
    }

    #[test]
    fn tmsv_entries() {
        let s = GaussianState::tmsv(0.8).unwrap();
        for i in 0..4 {
            assert_close(s.cov()[(i, i)], 2.577_464_471_194_885, 1e-12);
        }
        assert_close(s.cov()[(1, 3)], -(1.6f64).sinh(), 1e-15);
        assert_eq!(GaussianState::tmsv(0.0).unwrap(), GaussianState::vacuum(2).unwrap());
        assert!(GaussianState::tmsv(-0.1).is_err());
        assert!(GaussianState::tmsv(f64::NAN).is_err());
    }

    #[test]
    fn tmsv_zeta_on_grid() {
        for k in 0..=60 {
            let r = 0.05 * k as f64;
            let z = GaussianState::tmsv(r).unwrap().duan_zeta(0, 1).unwrap();
            assert_close(z, 2.0 * (-2.0 * r).exp(), 1e-12);
        }
        let z = GaussianState::tmsv(0.8).unwrap().duan_zeta(0, 1).unwrap();
        assert_close(z, 0.403_793_035_989_311_6, 1e-12);
    }

    #[test]
    fn tmsv_is_pure() {
        for r in [0.0, 0.3, 1.5, 3.0] {
            for nu in GaussianState::tmsv(r).unwrap().symplectic_eigenvalues().unwrap() {
                assert_close(nu, 1.0, 1e-9);
            }
        }
    }

    #[test]
    fn coherent_states() {
        assert_eq!(GaussianState::coherent(0.0, 0.0).unwrap(), GaussianState::vacuum(1).unwrap());
        let c = GaussianState::coherent(1.5, -0.7).unwrap();
        assert_eq!(c.mean().as_slice(), &[1.5, -0.7]);
        assert_eq!(c.cov(), &DMatrix::<f64>::identity(2, 2));
        assert!(GaussianState::coherent(f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn ancilla_variances() {
        let a = GaussianState::squeezed_ancilla(0.5, 0.25).unwrap();
        assert_eq!(a.cov()[(0, 0)], 0.5);
        assert_eq!(a.cov()[(1, 1)], 0.5);
        let b = GaussianState::squeezed_ancilla(1.0, 0.25).unwrap();
        assert_eq!(b.cov()[(1, 1)], 0.25);
        for k in 1..=50 {
            let w = 0.037 * k as f64;
            let s = GaussianState::squeezed_ancilla(w, 0.25).unwrap();
            assert_close(s.cov()[(0, 0)] * s.cov()[(1, 1)], 0.25, 1e-15);
        }
        // u = 1 is a pure squeezed vacuum in this convention.
        let pure = GaussianState::squeezed_ancilla(0.3, 1.0).unwrap();
        assert_close(pure.min_symplectic_eigenvalue().unwrap(), 1.0, 1e-12);
        assert!(GaussianState::squeezed_ancilla(0.0, 0.25).is_err());
        assert!(GaussianState::squeezed_ancilla(-1.0, 0.25).is_err());
    }

    #[test]
    fn new_rejects_unphysical() {
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5]));
        assert!(matches!(
            GaussianState::new(DVector::zeros(2), cov),
            Err(Error::Unphysical { .. })
        ));
    }

    #[test]
    fn new_symmetrizes() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.1 + 1e-13, 0.1, 2.0]);
        let s = GaussianState::new(DVector::zeros(2), cov).unwrap();
        assert_eq!(s.cov()[(0, 1)], s.cov()[(1, 0)]);
    }

    #[test]
    fn beam_splitter_transmits_at_unity() {
        let bs = SymplecticTransform::beam_splitter(1.0, 2, 0, 1).unwrap();
        let m = bs.matrix();
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(1, 1)], 1.0);
        assert_eq!(m[(2, 2)], -1.0);
        assert_eq!(m[(0, 2)], 0.0);
    }

    #[test]
    fn beam_splitter_errors() {
        assert!(SymplecticTransform::beam_splitter(1.2, 2, 0, 1).is_err());
        assert!(SymplecticTransform::beam_splitter(-0.1, 2, 0, 1).is_err());
        assert!(SymplecticTransform::beam_splitter(0.5, 2, 1, 1).is_err());
        assert!(SymplecticTransform::beam_splitter(0.5, 2, 0, 2).is_err());
    }

    #[test]
    fn beam_splitter_is_symplectic() {
        for tau in [0.0, 0.3, 0.7, 1.0] {
            let bs = SymplecticTransform::beam_splitter(tau, 3, 2, 0).unwrap();
            assert!(bs.symplectic_deviation() <= SYMPLECTIC_TOL);
        }
    }

    #[test]
    fn beam_splitter_keeps_vacuum() {
        let vac = GaussianState::vacuum(2).unwrap();
        let out = SymplecticTransform::beam_splitter(0.5, 2, 0, 1).unwrap().apply(&vac).unwrap();
        assert!((out.cov() - vac.cov()).amax() < 1e-15);
    }

    #[test]
    fn split_of_tmsv_matches_hand_computation() {
        // (B, A, v) -> (B, A_T, A_R)
        let r: f64 = 0.8;
        let tau: f64 = 0.4;
        let state = GaussianState::tmsv(r).unwrap().tensor(&GaussianState::vacuum(1).unwrap());
        let out = SymplecticTransform::beam_splitter(tau, 3, 1, 2).unwrap().apply(&state).unwrap();
        let (c, s) = ((2.0 * r).cosh(), (2.0 * r).sinh());
        let cov = out.cov();
        assert_close(cov[(2, 2)], tau * c + 1.0 - tau, 1e-12);
        assert_close(cov[(4, 4)], (1.0 - tau) * c + tau, 1e-12);
        assert_close(cov[(0, 2)], tau.sqrt() * s, 1e-12);
        assert_close(cov[(1, 3)], -tau.sqrt() * s, 1e-12);
        assert_close(cov[(0, 4)], (1.0 - tau).sqrt() * s, 1e-12);
        assert_close(cov[(2, 4)], (tau * (1.0 - tau)).sqrt() * (c - 1.0), 1e-12);
    }

    #[test]
    fn tensor_and_trace_round_trip() {
        let v = GaussianState::vacuum(1).unwrap();
        assert_eq!(v.tensor(&v), GaussianState::vacuum(2).unwrap());
        let a = GaussianState::tmsv(0.4).unwrap();
        let b = GaussianState::coherent(1.0, 2.0).unwrap();
        let ab = a.tensor(&b);
        assert_eq!(ab.cov().nrows(), 6);
        assert_eq!(ab.cov().view((0, 4), (4, 2)).amax(), 0.0);
        assert_eq!(ab.partial_trace(&[0, 1]).unwrap(), a);
        assert_eq!(ab.partial_trace(&[2]).unwrap(), b);
        assert_eq!(ab.partial_trace(&[0, 1, 2]).unwrap(), ab);
    }

    #[test]
    fn partial_trace_of_tmsv_is_thermal() {
        let r = 0.7f64;
        let m = GaussianState::tmsv(r).unwrap().partial_trace(&[0]).unwrap();
        let c = (2.0 * r).cosh();
        assert_close(m.cov()[(0, 0)], c, 1e-15);
        assert_close(m.cov()[(1, 1)], c, 1e-15);
        assert_eq!(m.cov()[(0, 1)], 0.0);
    }

    #[test]
    fn partial_trace_errors() {
        let s = GaussianState::vacuum(2).unwrap();
        assert!(s.partial_trace(&[]).is_err());
        assert!(s.partial_trace(&[2]).is_err());
        assert!(matches!(s.partial_trace(&[1, 1]), Err(Error::DuplicateMode(1))));
    }

    #[test]
    fn zeta_ignores_means_and_checks_modes() {
        let s = GaussianState::tmsv(0.8).unwrap();
        let d = s.shifted(&DVector::from_vec(vec![1.3, -0.4, 1.3, -0.4]));
        assert_eq!(s.duan_zeta(0, 1).unwrap(), d.duan_zeta(0, 1).unwrap());
        assert_eq!(GaussianState::vacuum(2).unwrap().duan_zeta(0, 1).unwrap(), 2.0);
        assert!(s.duan_zeta(0, 2).is_err());
        assert!(s.duan_zeta(1, 1).is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = GaussianState::tmsv(0.3).unwrap().tensor(&GaussianState::coherent(0.5, 1.0).unwrap());
        let json = s.to_json();
        assert!(json.starts_with("{\"n_modes\":3,\"mean\":["));
        let back: GaussianState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<GaussianState>(
            r#"{"n_modes":2,"mean":[0,0],"cov":[[1,0],[0,1]]}"#
        )
        .is_err());
    }

    #[test]
    fn non_symplectic_matrix_rejected() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0]));
        assert!(matches!(SymplecticTransform::new(m), Err(Error::NotSymplectic { .. })));
    }

    fn random_transform(params: &[(f64, f64, f64, f64)], n: usize) -> SymplecticTransform {
        let mut s = SymplecticTransform::identity(n).unwrap();
        for (k, &(tau, sq, th, _)) in params.iter().enumerate() {
            let a = k % n;
            let b = (k + 1) % n;
            let step = SymplecticTransform::beam_splitter(tau, n, a, b)
                .unwrap()
                .compose(&SymplecticTransform::squeezer(sq, n, a).unwrap())
                .unwrap()
                .compose(&SymplecticTransform::phase_rotation(th, n, b).unwrap())
                .unwrap();
            s = step.compose(&s).unwrap();
        }
        s
    }

    fn thermal_product(nus: &[f64]) -> GaussianState {
        nus.iter()
            .map(|&nu| GaussianState::thermal(nu).unwrap())
            .reduce(|a, b| a.tensor(&b))
            .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn apply_preserves_symplectic_spectrum(
            params in prop::collection::vec((0.0f64..=1.0, -1.0f64..1.0, -3.2f64..3.2, 0.0f64..1.0), 1..5),
            nus in prop::collection::vec(1.0f64..4.0, 3),
        ) {
            let s = random_transform(&params, 3);
            prop_assert!(s.symplectic_deviation() <= 1e-12 * s.matrix().amax().max(1.0).powi(2));
            let state = thermal_product(&nus);
            let out = s.apply(&state).unwrap();
            let mut expected = nus.clone();
            expected.sort_by(|a, b| a.total_cmp(b));
            let got = out.symplectic_eigenvalues().unwrap();
            for (g, e) in got.iter().zip(expected) {
                prop_assert!((g - e).abs() < 1e-8 * e.max(1.0));
            }
            prop_assert!(out.is_physical(PHYSICALITY_TOL));
            for keep in [vec![0], vec![2, 0], vec![1, 2]] {
                prop_assert!(out.partial_trace(&keep).unwrap().is_physical(PHYSICALITY_TOL));
            }
            prop_assert!(out.tensor(&GaussianState::tmsv(0.5).unwrap()).is_physical(PHYSICALITY_TOL));
        }

        #[test]
        fn identity_apply_is_noop(r in 0.0f64..2.0, x in -3.0f64..3.0) {
            let s = GaussianState::tmsv(r).unwrap().shifted(&DVector::from_vec(vec![x, 0.0, 0.0, x]));
            let out = SymplecticTransform::identity(2).unwrap().apply(&s).unwrap();
            prop_assert_eq!(out, s);
        }
    }
}
