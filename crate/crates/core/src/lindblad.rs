//! Open-system evolution of the joint spin-mechanical density matrix.
//!
//! rhs = -i[H, rho] + gamma(1+nb) D[b] + gamma nb D[b^dagger]
//!       + sum_i { Gamma(1+nb) D[sigma^-_i] + Gamma nb D[sigma^+_i]
//!                 + (gamma_phi/2) D[sigma_z,i] },
//! with D[O]rho = O rho O^dagger - (O^dagger O rho + rho O^dagger O)/2.
//!
//! Everything is evaluated structurally: the anticommutator half of the
//! generator is diagonal in the joint basis, the Hamiltonian is
//! tridiagonal within each spin block, and the jump terms are index
//! shifts or sign flips, so one rhs evaluation is O(D^2) for joint
//! dimension D.

use ndarray::Array2;

use crate::dynamics::{ModelParams, QuantumState, SpinBasis};
use crate::fockspace::{mean_phonon, quadrature_variances, thermal_density};
use crate::postselect::postselect;
use crate::protocol::{IterationRecord, Strategy};
use crate::util;
use crate::{C64, Error, Result};

/// Default integrator step, 10^-3 of a mechanical period.
pub const DEFAULT_OPEN_DT: f64 = 1e-3 * std::f64::consts::TAU;

/// Decay rates in units of the mechanical frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LindbladRates {
    /// Mechanical damping gamma (inverse quality factor).
    pub gamma: f64,
    /// Spin relaxation Gamma.
    pub spin_relaxation: f64,
    /// Spin pure dephasing gamma_phi.
    pub dephasing: f64,
    /// Reservoir occupancy, shared by the mechanical and spin baths.
    pub nbar_bath: f64,
}

impl LindbladRates {
    pub fn closed() -> Self {
        Self {
            gamma: 0.0,
            spin_relaxation: 0.0,
            dephasing: 0.0,
            nbar_bath: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("spin_relaxation", self.spin_relaxation),
            ("dephasing", self.dephasing),
            ("nbar_bath", self.nbar_bath),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Domain(format!("{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.gamma == 0.0 && self.spin_relaxation == 0.0 && self.dephasing == 0.0
    }

    /// True when the rates sit inside the regime where the protocol is
    /// expected to survive: spin rates within {1e-3, 1e-2} and a
    /// mechanical quality factor of at least 10^3.
    pub fn within_feasibility_envelope(&self) -> bool {
        self.spin_relaxation <= 1e-3 && self.dephasing <= 1e-2 && self.gamma <= 1e-3
    }
}

/// Precomputed structural pieces of the generator for fixed
/// (params, rates).
pub struct Liouvillian {
    d: usize,
    spin_dim: usize,
    n_spins: usize,
    rates: LindbladRates,
    /// Diagonal of G = -iH - (anticommutator half); G rho + rho G^dagger
    /// plus the jump terms is the full rhs.
    g_diag: Vec<C64>,
    /// Per-spin-index coefficient of the x = b + b^dagger term of -iH.
    x_coeff: Vec<f64>,
    sqrt_n: Vec<f64>,
}

impl Liouvillian {
    pub fn new(params: &ModelParams, rates: &LindbladRates) -> Result<Self> {
        params.validate()?;
        rates.validate()?;
        if params.basis != SpinBasis::Product {
            return Err(Error::UnsupportedBasis(
                "per-spin dissipators need the product basis".into(),
            ));
        }
        let d = params.dim;
        let sd = params.spin_dim();
        let n = params.n_spins;
        let nb = rates.nbar_bath;
        let mut g_diag = Vec::with_capacity(sd * d);
        let mut x_coeff = Vec::with_capacity(sd);
        for a in 0..sd {
            let ups = params.sector_of(a) as f64;
            let downs = n as f64 - ups;
            let spin_decay = rates.spin_relaxation * ((1.0 + nb) * ups + nb * downs)
                + (rates.dephasing / 2.0) * n as f64;
            for k in 0..d {
                // The heating channel uses the truncated b^dagger, whose
                // top level annihilates; this keeps the generator exactly
                // trace-free on the truncated space.
                let heat = if k + 1 < d { k as f64 + 1.0 } else { 0.0 };
                let mech_decay = rates.gamma * ((1.0 + nb) * k as f64 + nb * heat);
                g_diag.push(C64::new(
                    -0.5 * (mech_decay + spin_decay),
                    -(k as f64),
                ));
            }
            x_coeff.push(params.lambda * (2.0 * ups - n as f64));
        }
        let sqrt_n: Vec<f64> = (0..=d).map(|k| (k as f64).sqrt()).collect();
        Ok(Self {
            d,
            spin_dim: sd,
            n_spins: n,
            rates: *rates,
            g_diag,
            x_coeff,
            sqrt_n,
        })
    }

    /// One evaluation of the master-equation right-hand side.
    pub fn apply(&self, rho: &Array2<C64>) -> Array2<C64> {
        let d = self.d;
        let sd = self.spin_dim;
        let total = sd * d;
        debug_assert_eq!(rho.dim(), (total, total));
        let mut out = Array2::<C64>::zeros((total, total));
        let nb = self.rates.nbar_bath;

        for r in 0..total {
            let (a, k) = (r / d, r % d);
            // i lambda m_a x acting from the left (rows).
            let ca = self.x_coeff[a];
            for c in 0..total {
                let (b, l) = (c / d, c % d);
                // Diagonal generator halves.
                let mut v = (self.g_diag[r] + self.g_diag[c].conj()) * rho[(r, c)];
                // Hamiltonian off-diagonal, left then right.
                if ca != 0.0 {
                    let mut x = C64::new(0.0, 0.0);
                    if k > 0 {
                        x += self.sqrt_n[k] * rho[(r - 1, c)];
                    }
                    if k + 1 < d {
                        x += self.sqrt_n[k + 1] * rho[(r + 1, c)];
                    }
                    v += C64::i() * ca * x;
                }
                let cb = self.x_coeff[b];
                if cb != 0.0 {
                    let mut x = C64::new(0.0, 0.0);
                    if l > 0 {
                        x += self.sqrt_n[l] * rho[(r, c - 1)];
                    }
                    if l + 1 < d {
                        x += self.sqrt_n[l + 1] * rho[(r, c + 1)];
                    }
                    v -= C64::i() * cb * x;
                }
                // Mechanical jumps: b rho b^dagger and b^dagger rho b.
                if self.rates.gamma > 0.0 {
                    if k + 1 < d && l + 1 < d {
                        v += self.rates.gamma
                            * (1.0 + nb)
                            * self.sqrt_n[k + 1]
                            * self.sqrt_n[l + 1]
                            * rho[(r + 1, c + 1)];
                    }
                    if k > 0 && l > 0 {
                        v += self.rates.gamma * nb * self.sqrt_n[k] * self.sqrt_n[l]
                            * rho[(r - 1, c - 1)];
                    }
                }
                // Dephasing jump: (gamma_phi/2) sum_i s_i(a) s_i(b).
                if self.rates.dephasing > 0.0 {
                    let agree = self.n_spins as i32 - 2 * (a ^ b).count_ones() as i32;
                    v += (self.rates.dephasing / 2.0) * agree as f64 * rho[(r, c)];
                }
                out[(r, c)] = v;
            }
        }

        // Spin relaxation jumps: block moves between spin sectors.
        if self.rates.spin_relaxation > 0.0 {
            let gp = self.rates.spin_relaxation * (1.0 + nb); // sigma^- rho sigma^+
            let gm = self.rates.spin_relaxation * nb; // sigma^+ rho sigma^-
            for i in 0..self.n_spins {
                let mask = 1usize << (self.n_spins - 1 - i);
                for a in 0..sd {
                    for b in 0..sd {
                        // Jump output lives where spin i agrees on both
                        // sides; bit set (down) for decay, clear for
                        // excitation.
                        let (rate, src_a, src_b) = if a & mask != 0 && b & mask != 0 {
                            (gp, a ^ mask, b ^ mask)
                        } else if a & mask == 0 && b & mask == 0 {
                            (gm, a | mask, b | mask)
                        } else {
                            continue;
                        };
                        if rate == 0.0 {
                            continue;
                        }
                        for k in 0..d {
                            for l in 0..d {
                                out[(a * d + k, b * d + l)] +=
                                    rate * rho[(src_a * d + k, src_b * d + l)];
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Convenience one-shot rhs evaluation.
pub fn liouvillian_apply(
    state: &QuantumState,
    params: &ModelParams,
    rates: &LindbladRates,
) -> Result<Array2<C64>> {
    check_state(state, params)?;
    Ok(Liouvillian::new(params, rates)?.apply(&state.rho))
}

fn check_state(state: &QuantumState, params: &ModelParams) -> Result<()> {
    if state.basis != SpinBasis::Product {
        return Err(Error::UnsupportedBasis(
            "open evolution needs a product-basis state".into(),
        ));
    }
    if state.fock_dim != params.dim || state.n_spins != params.n_spins {
        return Err(Error::DimensionMismatch(
            "state dimensions do not match params".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct OpenEvolutionStats {
    /// Largest Hermiticity deviation seen before symmetrization.
    pub hermiticity_deviation: f64,
    pub steps: usize,
}

/// Fixed-step RK4 integration over t = params.t, symmetrizing each step.
pub fn evolve_open_report(
    state: &QuantumState,
    params: &ModelParams,
    rates: &LindbladRates,
    dt: f64,
) -> Result<(QuantumState, OpenEvolutionStats)> {
    check_state(state, params)?;
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("dt = {dt} must be positive")));
    }
    let liou = Liouvillian::new(params, rates)?;
    let steps = (params.t / dt).ceil() as usize;
    let h = params.t / steps as f64;
    let mut rho = state.rho.clone();
    let mut max_dev: f64 = 0.0;
    for _ in 0..steps {
        let k1 = liou.apply(&rho);
        let k2 = liou.apply(&(&rho + &k1.mapv(|z| z * (h / 2.0))));
        let k3 = liou.apply(&(&rho + &k2.mapv(|z| z * (h / 2.0))));
        let k4 = liou.apply(&(&rho + &k3.mapv(|z| z * h)));
        rho = &rho
            + &(k1 + k2.mapv(|z| z * 2.0) + k3.mapv(|z| z * 2.0) + k4).mapv(|z| z * (h / 6.0));
        let (sym, dev) = util::hermitize(&rho);
        max_dev = max_dev.max(dev);
        rho = sym;
    }
    let trace = util::trace(&rho).re;
    let min_eig = util::min_eigenvalue(&rho)?;
    if min_eig < -1e-6 * trace.max(1e-12) {
        return Err(Error::StepSize {
            min_eigenvalue: min_eig,
        });
    }
    Ok((
        QuantumState {
            basis: state.basis,
            n_spins: state.n_spins,
            fock_dim: state.fock_dim,
            rho,
        },
        OpenEvolutionStats {
            hermiticity_deviation: max_dev,
            steps,
        },
    ))
}

pub fn evolve_open(
    state: &QuantumState,
    params: &ModelParams,
    rates: &LindbladRates,
    dt: f64,
) -> Result<QuantumState> {
    evolve_open_report(state, params, rates, dt).map(|(s, _)| s)
}

/// Cooling loop with open evolution inside each step. The mechanical
/// state is never re-thermalized between iterations; the bath acts only
/// through gamma during the evolution.
pub fn run_protocol_open(
    params: &ModelParams,
    strategy: &Strategy,
    rates: &LindbladRates,
    iterations: usize,
    dt: f64,
) -> Result<Vec<IterationRecord>> {
    if !matches!(strategy, Strategy::Independent) {
        return Err(Error::Domain(
            "open protocol supports the independent strategy only".into(),
        ));
    }
    if !(1..=4).contains(&params.n_spins) {
        return Err(Error::Domain(
            "open protocol limited to 1..=4 spins".into(),
        ));
    }
    if iterations < 1 {
        return Err(Error::Domain("need at least one iteration".into()));
    }
    params.validate()?;
    let mut mech = thermal_density(params.nbar, params.dim)?.normalized()?;
    let n0 = mean_phonon(&mech)?;
    let pre = strategy.preselection(params.n_spins);
    let target = strategy.target(params.n_spins);
    let mut records = Vec::with_capacity(iterations);
    let mut cumulative = 1.0;
    for index in 1..=iterations {
        // A successful postselection collapses the spins exactly onto
        // the target, which for the independent strategy equals the
        // preselection, so rebuilding the separable state is exact.
        let joint = QuantumState::separable(&pre, &mech, params.basis, params.n_spins)?;
        let evolved = evolve_open(&joint, params, rates, dt)?;
        let sel = postselect(&evolved, &target).map_err(|e| match e {
            Error::VanishingBranch { probability, .. } => Error::VanishingBranch {
                probability,
                iteration: Some(index),
            },
            other => other,
        })?;
        mech = sel.state;
        cumulative *= sel.probability;
        let n = mean_phonon(&mech)?;
        let (dx, dy) = quadrature_variances(&mech)?;
        records.push(IterationRecord {
            index,
            mean_phonon: n,
            ratio: n / n0,
            dx,
            dy,
            step_probability: sel.probability,
            cumulative_probability: cumulative,
        });
    }
    Ok(records)
}
