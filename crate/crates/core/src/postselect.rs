//! Target spin states and the conditional collapse.
//!
//! Product-basis coefficient ordering: index bits read left-to-right,
//! 0 = up and 1 = down, so for two spins the order is
//! (up up, up down, down up, down down).

use ndarray::Array2;

use crate::dynamics::{QuantumState, SpinBasis};
use crate::fockspace::MechState;
use crate::util;
use crate::{C64, Error, PROBABILITY_FLOOR, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetBasis {
    Product { n_spins: usize },
    Collective { n_spins: usize },
    Bell,
}

impl TargetBasis {
    pub fn len(&self) -> usize {
        match self {
            TargetBasis::Product { n_spins } => 1 << n_spins,
            TargetBasis::Collective { n_spins } => n_spins + 1,
            TargetBasis::Bell => 4,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Normalized, gauge-fixed coefficient vector defining a postselection
/// projector.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    basis: TargetBasis,
    coeffs: Vec<C64>,
}

impl TargetState {
    /// Normalizes and fixes the gauge so the first nonzero coefficient
    /// is real positive.
    pub fn new(basis: TargetBasis, coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::DimensionMismatch(format!(
                "target length {} != basis dimension {}",
                coeffs.len(),
                basis.len()
            )));
        }
        let norm: f64 = coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return Err(Error::Domain("target state has zero norm".into()));
        }
        let mut coeffs: Vec<C64> = coeffs.iter().map(|z| z / norm).collect();
        if let Some(first) = coeffs.iter().find(|z| z.norm() > 1e-14) {
            let phase = first / first.norm();
            for z in coeffs.iter_mut() {
                *z /= phase;
            }
        }
        Ok(Self { basis, coeffs })
    }

    pub fn basis(&self) -> TargetBasis {
        self.basis
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    /// Coefficients in the basis the joint state uses; Bell targets are
    /// expanded over the two-spin product basis.
    pub fn resolve_for(&self, state: &QuantumState) -> Result<Vec<C64>> {
        match (self.basis, state.basis) {
            (TargetBasis::Product { n_spins }, SpinBasis::Product) if n_spins == state.n_spins => {
                Ok(self.coeffs.clone())
            }
            (TargetBasis::Collective { n_spins }, SpinBasis::Collective)
                if n_spins == state.n_spins =>
            {
                Ok(self.coeffs.clone())
            }
            (TargetBasis::Bell, SpinBasis::Product) if state.n_spins == 2 => {
                Ok(bell_to_product(&[
                    self.coeffs[0],
                    self.coeffs[1],
                    self.coeffs[2],
                    self.coeffs[3],
                ])
                .to_vec())
            }
            _ => Err(Error::BasisMismatch(format!(
                "target basis {:?} does not match state basis {:?} with {} spins",
                self.basis, state.basis, state.n_spins
            ))),
        }
    }
}

/// Uniform product target (|up> + |down>)^N / 2^(N/2).
pub fn target_independent(n_spins: usize) -> TargetState {
    let dim = 1usize << n_spins;
    let c = C64::new(1.0 / (dim as f64).sqrt(), 0.0);
    TargetState::new(TargetBasis::Product { n_spins }, vec![c; dim]).expect("uniform target")
}

/// Bloch-sphere target cos(theta/2)|up> + sin(theta/2) e^{i delta}|down>.
pub fn target_bloch(theta: f64, delta: f64) -> TargetState {
    let coeffs = vec![
        C64::new((theta / 2.0).cos(), 0.0),
        C64::new((theta / 2.0).sin(), 0.0) * (C64::i() * delta).exp(),
    ];
    TargetState::new(TargetBasis::Product { n_spins: 1 }, coeffs).expect("bloch target")
}

/// Optimal two-spin correlated target
/// (|down down> + |up up>)/2 + |down up>/sqrt(2).
pub fn target_corr2() -> TargetState {
    let coeffs = vec![
        C64::new(0.5, 0.0),                // up up
        C64::new(0.0, 0.0),                // up down
        C64::new(1.0 / 2f64.sqrt(), 0.0),  // down up
        C64::new(0.5, 0.0),                // down down
    ];
    TargetState::new(TargetBasis::Product { n_spins: 2 }, coeffs).expect("corr2 target")
}

/// Optimal three-spin correlated target: a on the six configurations
/// uuu, uud, udu, udd, ddu, ddd and 1/5 on duu, dud, with
/// a = -sqrt((1 - 2/25)/6).
pub fn target_corr3() -> TargetState {
    let a = -((1.0_f64 - 2.0 / 25.0) / 6.0).sqrt();
    let fifth = 1.0 / 5.0;
    // index bits: 0 = up, 1 = down, leftmost spin is the high bit.
    let mut coeffs = vec![C64::new(0.0, 0.0); 8];
    for idx in [0b000, 0b001, 0b010, 0b011, 0b110, 0b111] {
        coeffs[idx] = C64::new(a, 0.0);
    }
    coeffs[0b100] = C64::new(fifth, 0.0); // down up up
    coeffs[0b101] = C64::new(fifth, 0.0); // down up down
    TargetState::new(TargetBasis::Product { n_spins: 3 }, coeffs).expect("corr3 target")
}

/// Flat collective target: N+1 equal weights over m = -N/2..N/2.
pub fn target_collective_flat(n_spins: usize) -> TargetState {
    let c = C64::new(1.0 / ((n_spins + 1) as f64).sqrt(), 0.0);
    TargetState::new(TargetBasis::Collective { n_spins }, vec![c; n_spins + 1])
        .expect("flat collective target")
}

/// Bell coefficients (Phi-, Phi+, Psi+, Psi-) to product coefficients
/// (up up, up down, down up, down down).
pub fn bell_to_product(b: &[C64; 4]) -> [C64; 4] {
    let s = 1.0 / 2f64.sqrt();
    [
        (b[1] - b[0]) * s, // up up
        (b[2] - b[3]) * s, // up down
        (b[2] + b[3]) * s, // down up
        (b[1] + b[0]) * s, // down down
    ]
}

/// Product coefficients (c1..c4 over up up, up down, down up, down down)
/// to Bell coefficients (Phi-, Phi+, Psi+, Psi-).
pub fn product_to_bell(c: &[C64; 4]) -> [C64; 4] {
    let s = 1.0 / 2f64.sqrt();
    [
        (c[3] - c[0]) * s,
        (c[3] + c[0]) * s,
        (c[2] + c[1]) * s,
        (c[2] - c[1]) * s,
    ]
}

#[derive(Debug, Clone)]
pub struct PostselectionOutcome {
    /// Normalized mechanical state after the collapse.
    pub state: MechState,
    /// Trace of the unnormalized collapsed state.
    pub probability: f64,
}

/// Conditional collapse: mechanical state <psi_target| rho |psi_target>
/// as an exact partial inner product over the spins.
pub fn postselect(state: &QuantumState, target: &TargetState) -> Result<PostselectionOutcome> {
    let tr = state.trace();
    if tr <= 0.0 {
        return Err(Error::DegenerateState);
    }
    let c = target.resolve_for(state)?;
    let d = state.fock_dim;
    let mut rho = Array2::<C64>::zeros((d, d));
    for a in 0..state.spin_dim() {
        if c[a].norm_sqr() == 0.0 {
            continue;
        }
        for b in 0..state.spin_dim() {
            let w = c[a].conj() * c[b];
            if w.norm_sqr() == 0.0 {
                continue;
            }
            rho = rho + state.mech_block(a, b).mapv(|z| z * w);
        }
    }
    let probability = util::trace(&rho).re / tr;
    if probability < PROBABILITY_FLOOR {
        return Err(Error::VanishingBranch {
            probability,
            iteration: None,
        });
    }
    let mech = MechState::from_density(rho, 0.0).normalized()?;
    Ok(PostselectionOutcome {
        state: mech,
        probability,
    })
}

/// Same collapse via explicit projector and partial trace; kept as a
/// self-test path for small spin spaces.
pub fn postselect_via_projector(
    state: &QuantumState,
    target: &TargetState,
) -> Result<PostselectionOutcome> {
    let tr = state.trace();
    if tr <= 0.0 {
        return Err(Error::DegenerateState);
    }
    let c = target.resolve_for(state)?;
    let sd = state.spin_dim();
    let mut proj = Array2::<C64>::zeros((sd, sd));
    for a in 0..sd {
        for b in 0..sd {
            proj[(a, b)] = c[a] * c[b].conj();
        }
    }
    let full = util::kron(&proj, &util::identity(state.fock_dim));
    let collapsed = util::sandwich(&full, &state.rho);
    let joint = QuantumState {
        basis: state.basis,
        n_spins: state.n_spins,
        fock_dim: state.fock_dim,
        rho: collapsed,
    };
    let mech = joint.trace_out_spins();
    let probability = mech.trace() / tr;
    if probability < PROBABILITY_FLOOR {
        return Err(Error::VanishingBranch {
            probability,
            iteration: None,
        });
    }
    Ok(PostselectionOutcome {
        state: mech.normalized()?,
        probability,
    })
}

/// Complement branch: project with I - |psi><psi| and trace out spins.
pub fn failed_branch(state: &QuantumState, target: &TargetState) -> Result<PostselectionOutcome> {
    let tr = state.trace();
    if tr <= 0.0 {
        return Err(Error::DegenerateState);
    }
    let c = target.resolve_for(state)?;
    let sd = state.spin_dim();
    let mut proj = Array2::<C64>::zeros((sd, sd));
    for a in 0..sd {
        for b in 0..sd {
            proj[(a, b)] = -c[a] * c[b].conj();
        }
        proj[(a, a)] += C64::new(1.0, 0.0);
    }
    let full = util::kron(&proj, &util::identity(state.fock_dim));
    let collapsed = util::sandwich(&full, &state.rho);
    let joint = QuantumState {
        basis: state.basis,
        n_spins: state.n_spins,
        fock_dim: state.fock_dim,
        rho: collapsed,
    };
    let mech = joint.trace_out_spins();
    let probability = mech.trace() / tr;
    if probability < PROBABILITY_FLOOR {
        return Err(Error::VanishingBranch {
            probability,
            iteration: None,
        });
    }
    Ok(PostselectionOutcome {
        state: mech.normalized()?,
        probability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ModelParams, SpinBasis, evolve_closed};
    use crate::fockspace::{MechState, mean_phonon, thermal_density};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn independent_targets() {
        let t1 = target_independent(1);
        assert_abs_diff_eq!(t1.coeffs()[0].re, 0.5f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(t1.coeffs()[1].re, 0.5f64.sqrt(), epsilon = 1e-14);
        let t2 = target_independent(2);
        for c in t2.coeffs() {
            assert_abs_diff_eq!(c.re, 0.5, epsilon = 1e-14);
        }
        let t10 = target_independent(10);
        let norm: f64 = t10.coeffs().iter().map(|z| z.norm_sqr()).sum();
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bloch_targets() {
        let up = target_bloch(0.0, 0.0);
        assert_abs_diff_eq!(up.coeffs()[0].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(up.coeffs()[1].norm(), 0.0, epsilon = 1e-14);
        let plus = target_bloch(PI / 2.0, 0.0);
        assert_abs_diff_eq!(plus.coeffs()[0].re, 0.5f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(plus.coeffs()[1].re, 0.5f64.sqrt(), epsilon = 1e-14);
        let minus = target_bloch(PI / 2.0, PI);
        let norm: f64 = minus.coeffs().iter().map(|z| z.norm_sqr()).sum();
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(minus.coeffs()[1].re, -0.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn corr_target_norms() {
        let c2 = target_corr2();
        let norm: f64 = c2.coeffs().iter().map(|z| z.norm_sqr()).sum();
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-14);

        let c3 = target_corr3();
        let norm3: f64 = c3.coeffs().iter().map(|z| z.norm_sqr()).sum();
        assert_abs_diff_eq!(norm3, 1.0, epsilon = 1e-14);
        let a = ((1.0_f64 - 2.0 / 25.0) / 6.0).sqrt();
        assert_abs_diff_eq!(6.0 * a * a + 2.0 / 25.0, 1.0, epsilon = 1e-14);
        // Gauge fixing flips the overall sign so the first nonzero
        // coefficient (a < 0 in the defining expression) becomes positive.
        assert_abs_diff_eq!(c3.coeffs()[0].re, a, epsilon = 1e-14);
        assert_abs_diff_eq!(c3.coeffs()[0b100].re, -0.2, epsilon = 1e-14);
    }

    #[test]
    fn corr2_in_bell_basis() {
        let c2 = target_corr2();
        let b = product_to_bell(&[
            c2.coeffs()[0],
            c2.coeffs()[1],
            c2.coeffs()[2],
            c2.coeffs()[3],
        ]);
        // (1/sqrt(2)) Phi+ + (1/2)(Psi+ + Psi-)
        assert_abs_diff_eq!(b[0].norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b[1].re, 1.0 / 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(b[2].re, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b[3].re, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn bell_roundtrip() {
        let c = [
            C64::new(0.3, 0.1),
            C64::new(-0.2, 0.4),
            C64::new(0.5, 0.0),
            C64::new(0.1, -0.6),
        ];
        let back = bell_to_product(&product_to_bell(&c));
        for (x, y) in c.iter().zip(back.iter()) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn collective_flat_targets() {
        let t1 = target_collective_flat(1);
        assert_abs_diff_eq!(t1.coeffs()[0].re, 0.5f64.sqrt(), epsilon = 1e-14);
        let t50 = target_collective_flat(50);
        assert_eq!(t50.coeffs().len(), 51);
        let norm: f64 = t50.coeffs().iter().map(|z| z.norm_sqr()).sum();
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
        // Collective flat at N=2 weights the m=0 Dicke state by
        // 1/sqrt(3); the independent product target weights it by
        // sqrt(2)/2. They are different states.
        let flat_m0 = 1.0 / 3f64.sqrt();
        let independent_m0 = 2f64.sqrt() / 2.0; // two configs of weight 1/2
        assert!((flat_m0 - independent_m0).abs() > 0.1);
    }

    fn plus_thermal(lambda: f64, t: f64, nbar: f64, dim: usize) -> (QuantumState, ModelParams) {
        let p = ModelParams {
            lambda,
            t,
            nbar,
            n_spins: 1,
            dim,
            basis: SpinBasis::Product,
        };
        let mech = thermal_density(nbar, dim).unwrap();
        let plus = [C64::new(0.5f64.sqrt(), 0.0); 2];
        let st = QuantumState::separable(&plus, &mech, SpinBasis::Product, 1).unwrap();
        (st, p)
    }

    #[test]
    fn coherent_up_postselection_matches_closed_form() {
        // beta real, t = pi, target |up>: mean phonon (beta - 2 lambda)^2,
        // probability 1/2.
        let lambda = 0.25;
        let beta = 1.0;
        let p = ModelParams {
            lambda,
            t: PI,
            nbar: 0.0,
            n_spins: 1,
            dim: 40,
            basis: SpinBasis::Product,
        };
        let mech = MechState::coherent(C64::new(beta, 0.0), 40).unwrap();
        let plus = [C64::new(0.5f64.sqrt(), 0.0); 2];
        let st = QuantumState::separable(&plus, &mech, SpinBasis::Product, 1).unwrap();
        let out = evolve_closed(&st, &p).unwrap();
        let sel = postselect(&out, &target_bloch(0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(sel.probability, 0.5, epsilon = 1e-10);
        let n = mean_phonon(&sel.state).unwrap();
        assert_abs_diff_eq!(n, (beta - 2.0 * lambda).powi(2), epsilon = 1e-8);
    }

    #[test]
    fn decoupled_postselection_is_overlap() {
        let (st, p) = plus_thermal(0.0, 1.0, 2.0, 60);
        let out = evolve_closed(&st, &p).unwrap();
        let tgt = target_bloch(1.0, 0.4);
        let sel = postselect(&out, &tgt).unwrap();
        // probability = |<target|+>|^2
        let plus = [C64::new(0.5f64.sqrt(), 0.0); 2];
        let ov: C64 = tgt
            .coeffs()
            .iter()
            .zip(plus.iter())
            .map(|(c, p)| c.conj() * p)
            .sum();
        assert_abs_diff_eq!(sel.probability, ov.norm_sqr(), epsilon = 1e-10);
        let n = mean_phonon(&sel.state).unwrap();
        let mech = thermal_density(2.0, 60).unwrap();
        assert_abs_diff_eq!(n, mean_phonon(&mech).unwrap(), epsilon = 1e-8);
    }

    #[test]
    fn single_spin_cooling_ratio_at_optimal_coupling() {
        let (st, p) = plus_thermal(0.12, PI / 2.0, 10.0, 150);
        let out = evolve_closed(&st, &p).unwrap();
        let sel = postselect(&out, &target_bloch(PI / 2.0, 0.0)).unwrap();
        let n0 = mean_phonon(&thermal_density(10.0, 150).unwrap()).unwrap();
        let ratio = mean_phonon(&sel.state).unwrap() / n0;
        assert!((0.65..0.75).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn projector_path_agrees() {
        let (st, p) = plus_thermal(0.12, PI / 2.0, 1.0, 60);
        let out = evolve_closed(&st, &p).unwrap();
        let tgt = target_bloch(PI / 2.0, 0.0);
        let fast = postselect(&out, &tgt).unwrap();
        let slow = postselect_via_projector(&out, &tgt).unwrap();
        assert_abs_diff_eq!(fast.probability, slow.probability, epsilon = 1e-12);
        let dist = util::trace_distance(&fast.state.rho, &slow.state.rho).unwrap();
        assert!(dist < 1e-10, "trace distance {dist:.3e}");
    }

    #[test]
    fn branch_probabilities_sum_to_one() {
        let (st, p) = plus_thermal(0.2, 1.1, 2.0, 80);
        let out = evolve_closed(&st, &p).unwrap();
        let tgt = target_bloch(0.9, 0.3);
        let ok = postselect(&out, &tgt).unwrap();
        let fail = failed_branch(&out, &tgt).unwrap();
        assert_abs_diff_eq!(ok.probability + fail.probability, 1.0, epsilon = 1e-10);
        assert!(ok.probability >= 0.0 && ok.probability <= 1.0 + 1e-10);
    }

    #[test]
    fn failed_branch_heats() {
        let (st, p) = plus_thermal(0.12, PI / 2.0, 10.0, 150);
        let out = evolve_closed(&st, &p).unwrap();
        let tgt = target_bloch(PI / 2.0, 0.0);
        let fail = failed_branch(&out, &tgt).unwrap();
        let n = mean_phonon(&fail.state).unwrap();
        assert!(n > 10.0, "failure branch mean phonon {n}");
    }

    #[test]
    fn zero_coupling_matched_target_never_fails() {
        let (st, p) = plus_thermal(0.0, 1.0, 1.0, 40);
        let out = evolve_closed(&st, &p).unwrap();
        let err = failed_branch(&out, &target_bloch(PI / 2.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::VanishingBranch { .. }));
    }

    #[test]
    fn diagonal_targets_never_cool() {
        // Postselecting |up> or |down> on a thermal input never drops
        // below nbar (lambda, t grid).
        let nbar = 2.0;
        for &lambda in &[0.05, 0.12, 0.25] {
            for &t in &[0.6, PI / 2.0, 2.5, PI] {
                let (st, p) = plus_thermal(lambda, t, nbar, 80);
                let out = evolve_closed(&st, &p).unwrap();
                for theta in [0.0, PI] {
                    let sel = postselect(&out, &target_bloch(theta, 0.0)).unwrap();
                    let n = mean_phonon(&sel.state).unwrap();
                    assert!(
                        n >= nbar - 1e-6,
                        "lambda {lambda}, t {t}, theta {theta}: n {n}"
                    );
                }
            }
        }
    }

    #[test]
    fn collapse_linearity() {
        let (st1, p) = plus_thermal(0.15, 1.2, 1.0, 60);
        let mech2 = MechState::coherent(C64::new(0.5, 0.0), 60).unwrap();
        let plus = [C64::new(0.5f64.sqrt(), 0.0); 2];
        let st2 = QuantumState::separable(&plus, &mech2, SpinBasis::Product, 1).unwrap();
        let alpha = 0.3;
        let mixed = QuantumState {
            basis: st1.basis,
            n_spins: 1,
            fock_dim: 60,
            rho: st1.rho.mapv(|z| z * alpha) + st2.rho.mapv(|z| z * (1.0 - alpha)),
        };
        let tgt = target_bloch(PI / 2.0, 0.0);
        let e1 = evolve_closed(&st1, &p).unwrap();
        let e2 = evolve_closed(&st2, &p).unwrap();
        let em = evolve_closed(&mixed, &p).unwrap();
        let s1 = postselect(&e1, &tgt).unwrap();
        let s2 = postselect(&e2, &tgt).unwrap();
        let sm = postselect(&em, &tgt).unwrap();
        // Unnormalized collapses combine convexly.
        let u1 = s1.state.rho.mapv(|z| z * s1.probability * alpha);
        let u2 = s2.state.rho.mapv(|z| z * s2.probability * (1.0 - alpha));
        let um = sm.state.rho.mapv(|z| z * sm.probability);
        let dist = util::trace_distance(&(u1 + u2), &um).unwrap();
        assert!(dist < 1e-10, "trace distance {dist:.3e}");
    }
}
