//! Truncated Fock-space primitives: bosonic operators, canonical states,
//! and phase-space observables.
//!
//! All operators live on the levels 0..d-1. Displacements are built as
//! the exact matrix exponential of the truncated generator, so they are
//! exactly unitary on the truncated space; the top `SUPPORT_MARGIN`
//! levels are treated as a validation margin, never as trusted support.

use crate::{C64, Error, Result};
use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};

use crate::util;

/// Levels reserved at the top of the truncation as a support margin.
pub const SUPPORT_MARGIN: usize = 15;

/// Annihilation operator b on d levels: <n-1|b|n> = sqrt(n).
pub fn annihilation(d: usize) -> Array2<C64> {
    let mut b = Array2::zeros((d, d));
    for n in 1..d {
        b[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    b
}

pub fn creation(d: usize) -> Array2<C64> {
    util::adjoint(&annihilation(d))
}

/// Number operator b^dagger b (diagonal).
pub fn number_op(d: usize) -> Array2<C64> {
    Array2::from_diag(&Array1::from_iter(
        (0..d).map(|n| C64::new(n as f64, 0.0)),
    ))
}

/// Diagonal of the free rotation exp(-i b^dagger b t).
pub fn rotation_diag(d: usize, t: f64) -> Array1<C64> {
    Array1::from_iter((0..d).map(|n| (-C64::i() * (n as f64) * t).exp()))
}

pub fn rotation_matrix(d: usize, t: f64) -> Array2<C64> {
    Array2::from_diag(&rotation_diag(d, t))
}

/// Shared eigenbasis for all displacements along a fixed complex
/// direction mu: diagonalizes H = i(mu b^dagger - mu^* b) once, after
/// which D[c mu] = V exp(-i c w) V^dagger for any real c.
///
/// Every displacement the protocol needs has amplitude (2n-N) lambda eta
/// or m lambda eta, i.e. a real multiple of eta, so one factorization
/// serves a whole spin-sector family.
pub struct DisplacementFamily {
    dim: usize,
    mu: C64,
    vectors: Array2<C64>,
    freqs: Array1<f64>,
}

impl DisplacementFamily {
    pub fn new(mu: C64, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::Domain(format!("Fock dimension {d} < 2")));
        }
        let b = annihilation(d);
        let bdag = util::adjoint(&b);
        // H = i(mu b^dagger - mu^* b) is Hermitian.
        let h = (bdag.mapv(|z| z * mu) - b.mapv(|z| z * mu.conj())).mapv(|z| z * C64::i());
        let (w, v) = h.eigh(UPLO::Lower)?;
        Ok(Self {
            dim: d,
            mu,
            vectors: v,
            freqs: w,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Phase diagonal exp(-i c w) in the family eigenbasis.
    pub fn phase_diag(&self, c: f64) -> Array1<C64> {
        self.freqs.mapv(|w| (-C64::i() * c * w).exp())
    }

    /// D[c mu] as a dense matrix.
    pub fn displacement(&self, c: f64) -> Array2<C64> {
        let phases = self.phase_diag(c);
        let scaled = &self.vectors * &phases;
        scaled.dot(&util::adjoint(&self.vectors))
    }

    /// V (sum of caller-provided diagonals) V^dagger; used to assemble
    /// weighted sums of same-direction displacements in one sandwich.
    pub fn assemble(&self, diag: &Array1<C64>) -> Array2<C64> {
        let scaled = &self.vectors * diag;
        scaled.dot(&util::adjoint(&self.vectors))
    }

    /// Transform a matrix into the family eigenbasis: V^dagger m V.
    pub fn to_eigenbasis(&self, m: &Array2<C64>) -> Array2<C64> {
        util::adjoint(&self.vectors).dot(m).dot(&self.vectors)
    }

    pub fn direction(&self) -> C64 {
        self.mu
    }
}

/// Matrix of exp(alpha b^dagger - alpha^* b) on d levels.
///
/// The support guard |alpha|^2 <= d/4 keeps the displaced vacuum well
/// inside the truncation.
pub fn displacement_matrix(alpha: C64, d: usize) -> Result<Array2<C64>> {
    if d < 2 {
        return Err(Error::Domain(format!("Fock dimension {d} < 2")));
    }
    let amp_sq = alpha.norm_sqr();
    if amp_sq > d as f64 / 4.0 {
        return Err(Error::AmplitudeTooLarge {
            amp_sq,
            required_dim: (4.0 * amp_sq).ceil() as usize,
        });
    }
    if amp_sq == 0.0 {
        return Ok(util::identity(d));
    }
    Ok(DisplacementFamily::new(alpha, d)?.displacement(1.0))
}

/// Dense mechanical density matrix with explicit truncation bookkeeping.
///
/// `trace_deficit` is the probability mass lost to the truncation; it is
/// carried, never silently renormalized, and all observables divide by
/// the current trace.
#[derive(Debug, Clone)]
pub struct MechState {
    pub rho: Array2<C64>,
    pub trace_deficit: f64,
}

impl MechState {
    pub fn from_density(rho: Array2<C64>, trace_deficit: f64) -> Self {
        Self { rho, trace_deficit }
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> f64 {
        util::trace(&self.rho).re
    }

    pub fn vacuum(d: usize) -> Self {
        let mut rho = Array2::zeros((d, d));
        rho[(0, 0)] = C64::new(1.0, 0.0);
        Self {
            rho,
            trace_deficit: 0.0,
        }
    }

    /// Coherent state |beta><beta| via displacement of the vacuum.
    pub fn coherent(beta: C64, d: usize) -> Result<Self> {
        let dm = displacement_matrix(beta, d)?;
        let vac = Self::vacuum(d);
        Ok(Self {
            rho: util::sandwich(&dm, &vac.rho),
            trace_deficit: 0.0,
        })
    }

    /// Normalized copy with the trace folded back to 1.
    pub fn normalized(&self) -> Result<Self> {
        let tr = self.trace();
        if tr <= 0.0 {
            return Err(Error::DegenerateState);
        }
        Ok(Self {
            rho: self.rho.mapv(|z| z / tr),
            trace_deficit: 0.0,
        })
    }

    /// Diagonal Fock distribution, normalized by the current trace.
    pub fn fock_distribution(&self) -> Result<Vec<f64>> {
        let tr = self.trace();
        if tr <= 0.0 {
            return Err(Error::DegenerateState);
        }
        Ok(self.rho.diag().iter().map(|z| z.re / tr).collect())
    }

    /// Structural checks used by tests: Hermiticity, positivity, trace
    /// bookkeeping.
    pub fn validate(&self) -> Result<()> {
        let herm = util::hermiticity_deviation(&self.rho);
        if herm >= 1e-10 {
            return Err(Error::Domain(format!("Hermiticity deviation {herm:.3e}")));
        }
        let tr = self.trace();
        let min = util::min_eigenvalue(&self.rho)?;
        if min <= -1e-8 * tr {
            return Err(Error::Domain(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(())
    }
}

/// Thermal state with mean occupancy nbar: p_n = nbar^n/(nbar+1)^(n+1).
pub fn thermal_density(nbar: f64, d: usize) -> Result<MechState> {
    if nbar < 0.0 {
        return Err(Error::Domain(format!("negative occupancy nbar = {nbar}")));
    }
    if d < 2 {
        return Err(Error::Domain(format!("Fock dimension {d} < 2")));
    }
    let mut rho = Array2::zeros((d, d));
    if nbar == 0.0 {
        rho[(0, 0)] = C64::new(1.0, 0.0);
        return Ok(MechState {
            rho,
            trace_deficit: 0.0,
        });
    }
    let q = nbar / (nbar + 1.0);
    let mut p = 1.0 / (nbar + 1.0);
    for n in 0..d {
        rho[(n, n)] = C64::new(p, 0.0);
        p *= q;
    }
    Ok(MechState {
        rho,
        trace_deficit: q.powi(d as i32),
    })
}

/// tr(n rho)/tr(rho).
pub fn mean_phonon(state: &MechState) -> Result<f64> {
    let tr = state.trace();
    if tr <= 0.0 {
        return Err(Error::DegenerateState);
    }
    let num: f64 = state
        .rho
        .diag()
        .iter()
        .enumerate()
        .map(|(n, z)| n as f64 * z.re)
        .sum();
    Ok(num / tr)
}

/// Standard deviations of x = (b + b^dagger)/sqrt(2) and
/// y = i(b^dagger - b)/sqrt(2). The vacuum gives (sqrt(1/2), sqrt(1/2)).
pub fn quadrature_variances(state: &MechState) -> Result<(f64, f64)> {
    let tr = state.trace();
    if tr <= 0.0 {
        return Err(Error::DegenerateState);
    }
    let d = state.dim();
    // <b> and <b^2> from the first two off-diagonals, <n> from the diagonal.
    let mut b1 = C64::new(0.0, 0.0);
    let mut b2 = C64::new(0.0, 0.0);
    let mut nbar = 0.0;
    for n in 0..d {
        nbar += n as f64 * state.rho[(n, n)].re;
        if n + 1 < d {
            // tr(b rho) = sum_n sqrt(n+1) rho[n+1, n]
            b1 += ((n + 1) as f64).sqrt() * state.rho[(n + 1, n)];
        }
        if n + 2 < d {
            b2 += (((n + 1) * (n + 2)) as f64).sqrt() * state.rho[(n + 2, n)];
        }
    }
    b1 /= tr;
    b2 /= tr;
    nbar /= tr;
    let x_mean = 2f64.sqrt() * b1.re;
    let y_mean = 2f64.sqrt() * b1.im;
    let x_sq = b2.re + nbar + 0.5;
    let y_sq = -b2.re + nbar + 0.5;
    let var_x = x_sq - x_mean * x_mean;
    let var_y = y_sq - y_mean * y_mean;
    Ok((var_x.max(0.0).sqrt(), var_y.max(0.0).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn annihilation_entries() {
        let b = annihilation(5);
        for n in 1..5 {
            assert_abs_diff_eq!(b[(n - 1, n)].re, (n as f64).sqrt(), epsilon = 1e-15);
        }
        assert_eq!(b[(0, 0)], C64::new(0.0, 0.0));
        assert_eq!(b[(3, 2)], C64::new(0.0, 0.0));
    }

    #[test]
    fn zero_displacement_is_identity() {
        let d = displacement_matrix(C64::new(0.0, 0.0), 10).unwrap();
        assert!(util::max_abs_diff(&d, &util::identity(10)) < 1e-14);
    }

    #[test]
    fn displaced_vacuum_is_coherent() {
        let st = MechState::coherent(C64::new(0.5, 0.0), 40).unwrap();
        assert_abs_diff_eq!(mean_phonon(&st).unwrap(), 0.25, epsilon = 1e-8);
    }

    #[test]
    fn composition_law_real_amplitudes() {
        // D[0.3] D[0.2] = D[0.5] (real amplitudes give zero phase factor).
        let d = 60;
        let a = displacement_matrix(C64::new(0.3, 0.0), d).unwrap();
        let b = displacement_matrix(C64::new(0.2, 0.0), d).unwrap();
        let c = displacement_matrix(C64::new(0.5, 0.0), d).unwrap();
        let prod = a.dot(&b);
        // Compare on the well-supported subspace (margin at the top).
        let keep = d - SUPPORT_MARGIN;
        let diff = util::max_abs_diff(
            &prod.slice(ndarray::s![..keep, ..keep]).to_owned(),
            &c.slice(ndarray::s![..keep, ..keep]).to_owned(),
        );
        assert!(diff < 1e-8, "diff = {diff:.3e}");
    }

    #[test]
    fn composition_law_complex_phase() {
        let d = 60;
        let a1 = C64::new(0.2, 0.4);
        let a2 = C64::new(-0.3, 0.1);
        let da = displacement_matrix(a1, d).unwrap();
        let db = displacement_matrix(a2, d).unwrap();
        let dc = displacement_matrix(a1 + a2, d).unwrap();
        let phase = ((a1 * a2.conj() - a1.conj() * a2) / 2.0).exp();
        let keep = d - SUPPORT_MARGIN;
        let prod = da.dot(&db);
        let rhs = dc.mapv(|z| z * phase);
        let diff = util::max_abs_diff(
            &prod.slice(ndarray::s![..keep, ..keep]).to_owned(),
            &rhs.slice(ndarray::s![..keep, ..keep]).to_owned(),
        );
        assert!(diff < 1e-8, "diff = {diff:.3e}");
    }

    #[test]
    fn displacement_unitary_on_subspace() {
        for &amp in &[0.5, 1.0, 1.5] {
            let d = 60;
            let dm = displacement_matrix(C64::new(amp, 0.3), d).unwrap();
            let prod = util::adjoint(&dm).dot(&dm);
            let keep = d - SUPPORT_MARGIN;
            let diff = util::max_abs_diff(
                &prod.slice(ndarray::s![..keep, ..keep]).to_owned(),
                &util::identity(keep),
            );
            assert!(diff < 1e-8, "amp {amp}: diff = {diff:.3e}");
        }
    }

    #[test]
    fn support_guard() {
        let err = displacement_matrix(C64::new(4.0, 0.0), 20).unwrap_err();
        match err {
            Error::AmplitudeTooLarge { required_dim, .. } => assert_eq!(required_dim, 64),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn thermal_zero_temperature() {
        let st = thermal_density(0.0, 20).unwrap();
        assert_eq!(st.rho[(0, 0)], C64::new(1.0, 0.0));
        assert_eq!(st.trace_deficit, 0.0);
        assert_abs_diff_eq!(mean_phonon(&st).unwrap(), 0.0);
    }

    #[test]
    fn thermal_geometric_weights() {
        let st = thermal_density(1.0, 40).unwrap();
        assert_abs_diff_eq!(st.rho[(0, 0)].re, 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(st.rho[(1, 1)].re, 0.25, epsilon = 1e-14);
    }

    #[test]
    fn thermal_mean_and_deficit() {
        let st = thermal_density(10.0, 150).unwrap();
        assert_abs_diff_eq!(mean_phonon(&st).unwrap(), 10.0, epsilon = 1e-3);
        let expected = (10.0f64 / 11.0).powi(150);
        assert_abs_diff_eq!(st.trace_deficit, expected, epsilon = 1e-12);
        assert!((expected - 6.3e-7).abs() < 1e-7);
        assert_abs_diff_eq!(st.trace() + st.trace_deficit, 1.0, epsilon = 1e-8);
        st.validate().unwrap();
    }

    #[test]
    fn negative_occupancy_rejected() {
        assert!(thermal_density(-0.1, 20).is_err());
    }

    #[test]
    fn mean_phonon_coherent() {
        let st = MechState::coherent(C64::new(1.0, 0.0), 40).unwrap();
        assert_abs_diff_eq!(mean_phonon(&st).unwrap(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn quadratures_vacuum() {
        let (dx, dy) = quadrature_variances(&MechState::vacuum(20)).unwrap();
        assert_abs_diff_eq!(dx, 0.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(dy, 0.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn quadratures_thermal() {
        let st = thermal_density(10.0, 150).unwrap();
        let (dx, dy) = quadrature_variances(&st).unwrap();
        assert_abs_diff_eq!(dx, 10.5f64.sqrt(), epsilon = 1e-2);
        assert_abs_diff_eq!(dy, 10.5f64.sqrt(), epsilon = 1e-2);
    }

    #[test]
    fn quadratures_coherent_are_vacuum_like() {
        let st = MechState::coherent(C64::new(2.0, 0.0), 60).unwrap();
        let (dx, dy) = quadrature_variances(&st).unwrap();
        assert_abs_diff_eq!(dx, 0.5f64.sqrt(), epsilon = 1e-8);
        assert_abs_diff_eq!(dy, 0.5f64.sqrt(), epsilon = 1e-8);
    }

    #[test]
    fn displaced_thermal_energy() {
        // mean_phonon(D rho_th D^dagger) = nbar + |alpha|^2
        // nbar low enough that the truncated tail (~(3/4)^150) is far
        // below the tolerance.
        let d = 150;
        let alpha = C64::new(0.9, 0.4);
        let th = thermal_density(3.0, d).unwrap();
        let dm = displacement_matrix(alpha, d).unwrap();
        let shifted = MechState::from_density(util::sandwich(&dm, &th.rho), th.trace_deficit);
        let n0 = mean_phonon(&th).unwrap();
        let n1 = mean_phonon(&shifted).unwrap();
        assert_abs_diff_eq!(n1, n0 + alpha.norm_sqr(), epsilon = 1e-6);
    }

    #[test]
    fn degenerate_state_rejected() {
        let zero = MechState::from_density(Array2::zeros((5, 5)), 1.0);
        assert!(matches!(mean_phonon(&zero), Err(Error::DegenerateState)));
    }
}
