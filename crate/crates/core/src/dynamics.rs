//! Exact closed-system evolution of the spin-oscillator system.
//!
//! The evolution operator is block diagonal in the spin z-basis (product
//! case) or the S_z eigenbasis (collective case): each spin sector picks
//! up a scalar phase, a displacement along eta = 1 - exp(-i t), and the
//! free rotation exp(-i b^dagger b t).
//!
//! Conventions: in the product basis a sector with n up-spins out of N is
//! displaced by (2n - N) lambda eta with phase exp(4 i lambda^2 n(n-N)
//! (t - sin t)). In the collective basis the label m runs over -N/2..N/2
//! in unit steps, the displacement is lambda m eta and the phase
//! exp(i lambda^2 m^2 (t - sin t)); the two engines agree under
//! lambda_collective = 2 lambda_product up to a global phase.

use ndarray::{Array2, s};

use crate::fockspace::{self, DisplacementFamily, MechState};
use crate::util;
use crate::{C64, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinBasis {
    /// Full 2^N product basis; spin index bits read left-to-right with
    /// 0 = up, 1 = down (so index 0 is |up..up>).
    Product,
    /// Symmetric Dicke sector s = N/2; index j = m + N/2, j = 0..N.
    Collective,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelParams {
    /// Scaled spin-mechanical coupling (lambda_collective when
    /// `basis == Collective`).
    pub lambda: f64,
    /// Evolution time per step, in units where the mechanical frequency
    /// is 1.
    pub t: f64,
    /// Initial thermal occupancy.
    pub nbar: f64,
    pub n_spins: usize,
    /// Fock truncation.
    pub dim: usize,
    pub basis: SpinBasis,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Domain(format!("lambda = {} < 0", self.lambda)));
        }
        if !(self.t > 0.0 && self.t <= 2.0 * std::f64::consts::PI) {
            return Err(Error::Domain(format!(
                "step time t = {} outside (0, 2 pi]",
                self.t
            )));
        }
        if self.nbar < 0.0 {
            return Err(Error::Domain(format!("nbar = {} < 0", self.nbar)));
        }
        if self.n_spins < 1 {
            return Err(Error::Domain("need at least one spin".into()));
        }
        if self.dim < 2 {
            return Err(Error::Domain(format!("Fock dimension {} < 2", self.dim)));
        }
        Ok(())
    }

    /// eta = 1 - exp(-i t).
    pub fn eta(&self) -> C64 {
        C64::new(1.0, 0.0) - (-C64::i() * self.t).exp()
    }

    pub fn spin_dim(&self) -> usize {
        match self.basis {
            SpinBasis::Product => 1 << self.n_spins,
            SpinBasis::Collective => self.n_spins + 1,
        }
    }

    /// Number of distinct displacement sectors (N + 1 in both bases).
    pub fn sector_count(&self) -> usize {
        self.n_spins + 1
    }

    /// Sector label of a spin basis index: the number of up-spins in the
    /// product basis, or the index itself in the collective basis.
    pub fn sector_of(&self, spin_index: usize) -> usize {
        match self.basis {
            SpinBasis::Product => self.n_spins - (spin_index.count_ones() as usize),
            SpinBasis::Collective => spin_index,
        }
    }

    /// Real displacement multiplier of sector s: the displacement
    /// amplitude is `sector_scale(s) * eta`.
    pub fn sector_scale(&self, sector: usize) -> f64 {
        match self.basis {
            SpinBasis::Product => (2.0 * sector as f64 - self.n_spins as f64) * self.lambda,
            SpinBasis::Collective => (sector as f64 - self.n_spins as f64 / 2.0) * self.lambda,
        }
    }

    /// Entangling phase of sector s.
    pub fn sector_phase(&self, sector: usize) -> C64 {
        let kernel = self.t - self.t.sin();
        let arg = match self.basis {
            SpinBasis::Product => {
                let n = sector as f64;
                let nn = self.n_spins as f64;
                4.0 * self.lambda * self.lambda * n * (n - nn) * kernel
            }
            SpinBasis::Collective => {
                let m = sector as f64 - self.n_spins as f64 / 2.0;
                self.lambda * self.lambda * m * m * kernel
            }
        };
        (C64::i() * arg).exp()
    }
}

/// Joint spin (x) Fock density matrix, spin-major layout: joint index
/// a * dim + k for spin index a and Fock level k.
#[derive(Debug, Clone)]
pub struct QuantumState {
    pub basis: SpinBasis,
    pub n_spins: usize,
    pub fock_dim: usize,
    pub rho: Array2<C64>,
}

impl QuantumState {
    pub fn spin_dim(&self) -> usize {
        match self.basis {
            SpinBasis::Product => 1 << self.n_spins,
            SpinBasis::Collective => self.n_spins + 1,
        }
    }

    /// Separable pure-spin (x) mechanical state.
    pub fn separable(
        spin_coeffs: &[C64],
        mech: &MechState,
        basis: SpinBasis,
        n_spins: usize,
    ) -> Result<Self> {
        let sd = match basis {
            SpinBasis::Product => 1 << n_spins,
            SpinBasis::Collective => n_spins + 1,
        };
        if spin_coeffs.len() != sd {
            return Err(Error::DimensionMismatch(format!(
                "spin vector length {} != spin dimension {sd}",
                spin_coeffs.len()
            )));
        }
        let d = mech.dim();
        let mut rho = Array2::zeros((sd * d, sd * d));
        for a in 0..sd {
            for b in 0..sd {
                let w = spin_coeffs[a] * spin_coeffs[b].conj();
                if w.norm_sqr() == 0.0 {
                    continue;
                }
                rho.slice_mut(s![a * d..(a + 1) * d, b * d..(b + 1) * d])
                    .assign(&mech.rho.mapv(|z| z * w));
            }
        }
        Ok(Self {
            basis,
            n_spins,
            fock_dim: d,
            rho,
        })
    }

    pub fn trace(&self) -> f64 {
        util::trace(&self.rho).re
    }

    pub fn mech_block(&self, a: usize, b: usize) -> Array2<C64> {
        let d = self.fock_dim;
        self.rho
            .slice(s![a * d..(a + 1) * d, b * d..(b + 1) * d])
            .to_owned()
    }

    /// Partial trace over the spins.
    pub fn trace_out_spins(&self) -> MechState {
        let d = self.fock_dim;
        let mut rho = Array2::zeros((d, d));
        for a in 0..self.spin_dim() {
            rho = rho + self.rho.slice(s![a * d..(a + 1) * d, a * d..(a + 1) * d]);
        }
        MechState::from_density(rho, 0.0)
    }
}

/// Block-diagonal evolution operator: one mechanical factor per spin
/// sector, phase included.
pub struct SpinBlockUnitary {
    params: ModelParams,
    /// sector_ops[s] = phase_s * D[scale_s eta] * exp(-i n t).
    sector_ops: Vec<Array2<C64>>,
}

impl SpinBlockUnitary {
    pub fn sector_op(&self, sector: usize) -> &Array2<C64> {
        &self.sector_ops[sector]
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }
}

/// Build the per-sector evolution factors for one step.
pub fn build_evolution(params: &ModelParams) -> Result<SpinBlockUnitary> {
    params.validate()?;
    let d = params.dim;
    let eta = params.eta();
    let max_scale = (0..params.sector_count())
        .map(|s| params.sector_scale(s).abs())
        .fold(0.0, f64::max);
    let max_amp_sq = (max_scale * eta.norm()).powi(2);
    if max_amp_sq > d as f64 / 4.0 {
        return Err(Error::AmplitudeTooLarge {
            amp_sq: max_amp_sq,
            required_dim: (4.0 * max_amp_sq).ceil() as usize,
        });
    }
    let rot = fockspace::rotation_diag(d, params.t);
    let family = if eta.norm() > 0.0 && max_scale > 0.0 {
        Some(DisplacementFamily::new(eta, d)?)
    } else {
        None
    };
    let mut sector_ops = Vec::with_capacity(params.sector_count());
    for sct in 0..params.sector_count() {
        let phase = params.sector_phase(sct);
        let disp = match &family {
            Some(f) => f.displacement(params.sector_scale(sct)),
            None => util::identity(d),
        };
        // (phase * D) * R, with R diagonal applied columnwise.
        let op = disp.mapv(|z| z * phase) * &rot;
        sector_ops.push(op);
    }
    Ok(SpinBlockUnitary {
        params: *params,
        sector_ops,
    })
}

/// U rho U^dagger applied blockwise.
pub fn evolve_closed(state: &QuantumState, params: &ModelParams) -> Result<QuantumState> {
    if state.fock_dim != params.dim
        || state.n_spins != params.n_spins
        || state.basis != params.basis
    {
        return Err(Error::DimensionMismatch(
            "state dimensions do not match params".into(),
        ));
    }
    let unitary = build_evolution(params)?;
    evolve_with(state, &unitary)
}

pub fn evolve_with(state: &QuantumState, unitary: &SpinBlockUnitary) -> Result<QuantumState> {
    let params = &unitary.params;
    let d = state.fock_dim;
    let sd = state.spin_dim();
    let mut rho = Array2::zeros(state.rho.dim());
    for a in 0..sd {
        let ua = unitary.sector_op(params.sector_of(a));
        for b in 0..sd {
            let ub = unitary.sector_op(params.sector_of(b));
            let block = state.mech_block(a, b);
            if util::max_abs(&block) == 0.0 {
                continue;
            }
            let evolved = ua.dot(&block).dot(&util::adjoint(ub));
            rho.slice_mut(s![a * d..(a + 1) * d, b * d..(b + 1) * d])
                .assign(&evolved);
        }
    }
    Ok(QuantumState {
        basis: state.basis,
        n_spins: state.n_spins,
        fock_dim: d,
        rho,
    })
}

/// Ratio (1 - 2 lambda / beta)^2 of the postselected coherent-state
/// phonon number to the initial one at t = pi.
pub fn coherent_ratio_closed_form(lambda: f64, beta: f64) -> Result<f64> {
    if beta <= 0.0 {
        return Err(Error::Domain(format!("beta = {beta} must be positive")));
    }
    Ok((1.0 - 2.0 * lambda / beta).powi(2))
}

/// Spin-traced mechanical energy nbar + 2 lambda^2 (1 - cos t)
/// (single-spin semantics).
pub fn traced_mean_phonon(t: f64, lambda: f64, nbar: f64) -> f64 {
    nbar + 2.0 * lambda * lambda * (1.0 - t.cos())
}

/// Joint Hamiltonian b^dagger b - lambda sum_i sigma_z,i (b + b^dagger)
/// in the product basis (spin-major layout).
pub fn joint_hamiltonian(params: &ModelParams) -> Result<Array2<C64>> {
    if params.basis != SpinBasis::Product {
        return Err(Error::UnsupportedBasis(
            "joint Hamiltonian is built in the product basis".into(),
        ));
    }
    let d = params.dim;
    let sd = params.spin_dim();
    let n_op = fockspace::number_op(d);
    let b = fockspace::annihilation(d);
    let x_op = &b + &util::adjoint(&b);
    let mut h = Array2::zeros((sd * d, sd * d));
    for a in 0..sd {
        let sz_sum = 2.0 * params.sector_of(a) as f64 - params.n_spins as f64;
        let block = &n_op - &x_op.mapv(|z| z * params.lambda * sz_sum);
        h.slice_mut(s![a * d..(a + 1) * d, a * d..(a + 1) * d])
            .assign(&block);
    }
    Ok(h)
}

/// Fixed-step RK4 integration of the von Neumann equation; oracle for
/// the blockwise closed-form evolution. Limited to small joint
/// dimensions.
pub fn evolve_brute_force(
    state: &QuantumState,
    params: &ModelParams,
    steps: usize,
) -> Result<QuantumState> {
    params.validate()?;
    if params.n_spins > 2 || params.dim > 60 {
        return Err(Error::Domain(
            "brute-force integration limited to N <= 2, d <= 60".into(),
        ));
    }
    if steps == 0 {
        return Err(Error::ConvergenceFailure {
            residual: f64::INFINITY,
            steps,
        });
    }
    let h = joint_hamiltonian(params)?;
    let rhs = |rho: &Array2<C64>| util::commutator(&h, rho).mapv(|z| -C64::i() * z);
    let dt = params.t / steps as f64;
    let mut rho = state.rho.clone();
    for _ in 0..steps {
        let k1 = rhs(&rho);
        let k2 = rhs(&(&rho + &k1.mapv(|z| z * (dt / 2.0))));
        let k3 = rhs(&(&rho + &k2.mapv(|z| z * (dt / 2.0))));
        let k4 = rhs(&(&rho + &k3.mapv(|z| z * dt)));
        rho = &rho
            + &(k1 + k2.mapv(|z| z * 2.0) + k3.mapv(|z| z * 2.0) + k4).mapv(|z| z * (dt / 6.0));
    }
    Ok(QuantumState {
        basis: state.basis,
        n_spins: state.n_spins,
        fock_dim: state.fock_dim,
        rho,
    })
}

/// Coherent-branch closed forms ("phi_n", "theta_n", "C_{n,m}" of the
/// analytic postselected density matrix); used as validation oracles.
pub mod branch {
    use super::*;

    /// Displaced amplitude beta e^{-it} + lambda (2n - N) eta of the
    /// sector with n up-spins.
    pub fn amplitude(n: usize, params: &ModelParams, beta: C64) -> C64 {
        let eta = params.eta();
        beta * (-C64::i() * params.t).exp()
            + params.lambda * (2.0 * n as f64 - params.n_spins as f64) * eta
    }

    /// Accumulated phase 2 lambda (2n - N) r cos(phi - t/2) sin(t/2)
    /// for beta = r e^{i phi}.
    pub fn phase(n: usize, params: &ModelParams, beta: C64) -> f64 {
        let (r, phi) = (beta.norm(), beta.arg());
        2.0 * params.lambda
            * (2.0 * n as f64 - params.n_spins as f64)
            * r
            * (phi - params.t / 2.0).cos()
            * (params.t / 2.0).sin()
    }

    /// Pair weight binom(N, N-n) binom(N, N-m)
    /// exp(4 i lambda^2 (t - sin t) [n(n-N) - m(m-N)]).
    ///
    /// The lambda^2 in the exponent follows directly from the
    /// evolution operator the kernel is derived from.
    pub fn pair_weight(n: usize, m: usize, params: &ModelParams) -> C64 {
        let nn = params.n_spins;
        let kernel = params.t - params.t.sin();
        let arg = 4.0
            * params.lambda
            * params.lambda
            * kernel
            * ((n as f64) * (n as f64 - nn as f64) - (m as f64) * (m as f64 - nn as f64));
        util::binomial(nn, nn - n) * util::binomial(nn, nn - m) * (C64::i() * arg).exp()
    }
}
