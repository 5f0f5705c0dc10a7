//! The iterative cooling loop: evolve one step, postselect, record,
//! repeat.
//!
//! Between iterations the spin-mechanical state is exactly separable (a
//! success collapses the spins onto the target; the correlated and
//! collective strategies re-prepare them), so the loop carries only the
//! d x d mechanical matrix. The per-step conditional map factorizes into
//! a single Kraus operator
//!
//!   K = sum_s v_s chi_s D_s,    rho -> K R rho R^dagger K^dagger,
//!
//! with v_s = (target weight)^* x (preselection weight) summed over the
//! spin configurations of sector s. This is what makes N = 50 cheap.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{ModelParams, QuantumState, SpinBasis, evolve_closed};
use crate::fockspace::{
    self, DisplacementFamily, MechState, mean_phonon, quadrature_variances, thermal_density,
};
use crate::postselect::{TargetBasis, TargetState, postselect, target_collective_flat,
    target_independent};
use crate::util;
use crate::{C64, Error, PROBABILITY_FLOOR, Result};

#[derive(Debug, Clone)]
pub enum Strategy {
    /// Every spin postselected onto |+> individually; the successful
    /// collapse leaves the spins in the preselection state, so no
    /// reinitialization is needed.
    Independent,
    /// Joint-basis target; spins are restarted in the equiprobable
    /// superposition before every step.
    Correlated(TargetState),
    /// Flat symmetric Dicke pre- and postselection; spins re-prepared
    /// each step.
    Collective,
}

impl Strategy {
    pub fn reinitializes_spins(&self) -> bool {
        !matches!(self, Strategy::Independent)
    }

    pub fn spin_basis(&self) -> SpinBasis {
        match self {
            Strategy::Collective => SpinBasis::Collective,
            _ => SpinBasis::Product,
        }
    }

    /// Target state the strategy postselects with.
    pub fn target(&self, n_spins: usize) -> TargetState {
        match self {
            Strategy::Independent => target_independent(n_spins),
            Strategy::Correlated(t) => t.clone(),
            Strategy::Collective => target_collective_flat(n_spins),
        }
    }

    /// Preselection coefficients in the strategy's spin basis.
    pub fn preselection(&self, n_spins: usize) -> Vec<C64> {
        match self {
            Strategy::Collective => {
                vec![C64::new(1.0 / ((n_spins + 1) as f64).sqrt(), 0.0); n_spins + 1]
            }
            _ => {
                let dim = 1usize << n_spins;
                vec![C64::new(1.0 / (dim as f64).sqrt(), 0.0); dim]
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub index: usize,
    pub mean_phonon: f64,
    /// Mean phonon relative to the initial thermal occupancy.
    pub ratio: f64,
    pub dx: f64,
    pub dy: f64,
    pub step_probability: f64,
    pub cumulative_probability: f64,
}

/// One protocol step as a map on mechanical states.
pub struct StepKernel {
    /// Combined operator M = K R; the step is rho -> M rho M^dagger.
    op: Array2<C64>,
    dim: usize,
}

impl StepKernel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unnormalized image of the (trace-one) input.
    pub fn apply_raw(&self, rho: &Array2<C64>) -> Array2<C64> {
        util::sandwich(&self.op, rho)
    }

    /// Normalized post-step state and the step probability.
    pub fn apply(&self, state: &MechState) -> Result<(MechState, f64)> {
        let tr = state.trace();
        if tr <= 0.0 {
            return Err(Error::DegenerateState);
        }
        let raw = self.apply_raw(&state.rho);
        let p = util::trace(&raw).re / tr;
        if p < PROBABILITY_FLOOR {
            return Err(Error::VanishingBranch {
                probability: p,
                iteration: None,
            });
        }
        let mech = MechState::from_density(raw, 0.0).normalized()?;
        Ok((mech, p))
    }
}

/// Per-sector weights v_s = sum over sector configurations of
/// (target coefficient)^* x (preselection coefficient).
pub fn sector_weights(params: &ModelParams, strategy: &Strategy) -> Result<Vec<C64>> {
    let n = params.n_spins;
    match strategy {
        Strategy::Independent => {
            // Uniform preselection and target: v_n = binom(N, n)/2^N.
            let scale = 1.0 / (1u64 << n.min(63)) as f64;
            Ok((0..=n)
                .map(|k| C64::new(util::binomial(n, k) * scale, 0.0))
                .collect())
        }
        Strategy::Correlated(target) => {
            if params.basis != SpinBasis::Product {
                return Err(Error::BasisMismatch(
                    "correlated strategies use the product basis".into(),
                ));
            }
            if n > 16 {
                return Err(Error::Domain(
                    "correlated sector weights limited to N <= 16".into(),
                ));
            }
            let coeffs = match target.basis() {
                TargetBasis::Product { n_spins } if n_spins == n => target.coeffs().to_vec(),
                TargetBasis::Bell if n == 2 => {
                    let c = target.coeffs();
                    crate::postselect::bell_to_product(&[c[0], c[1], c[2], c[3]]).to_vec()
                }
                _ => {
                    return Err(Error::BasisMismatch(
                        "correlated target does not match the spin count".into(),
                    ));
                }
            };
            // Equiprobable preselection: 2^{-N/2} per configuration.
            let pre = 1.0 / ((1u64 << n) as f64).sqrt();
            let mut v = vec![C64::new(0.0, 0.0); n + 1];
            for (idx, c) in coeffs.iter().enumerate() {
                let sector = n - idx.count_ones() as usize;
                v[sector] += c.conj() * pre;
            }
            Ok(v)
        }
        Strategy::Collective => {
            if params.basis != SpinBasis::Collective {
                return Err(Error::BasisMismatch(
                    "collective strategy uses the collective basis".into(),
                ));
            }
            Ok(vec![C64::new(1.0 / (n + 1) as f64, 0.0); n + 1])
        }
    }
}

/// Build the mechanical-only step map for one evolve-and-postselect
/// round.
pub fn build_step_superoperator(params: &ModelParams, strategy: &Strategy) -> Result<StepKernel> {
    params.validate()?;
    if params.basis != strategy.spin_basis() {
        return Err(Error::BasisMismatch(format!(
            "params basis {:?} does not match strategy basis {:?}",
            params.basis,
            strategy.spin_basis()
        )));
    }
    let weights = sector_weights(params, strategy)?;
    build_step_kernel(params, &weights)
}

/// Step kernel from explicit sector weights; also the optimizer's entry
/// point, which supplies weights for arbitrary targets.
pub fn build_step_kernel(params: &ModelParams, weights: &[C64]) -> Result<StepKernel> {
    if weights.len() != params.sector_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} sector weights for {} sectors",
            weights.len(),
            params.sector_count()
        )));
    }
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
    let k = if eta.norm() > 0.0 && max_scale > 0.0 {
        let family = DisplacementFamily::new(eta, d)?;
        let mut diag = Array1::<C64>::zeros(d);
        for (s, w) in weights.iter().enumerate() {
            if w.norm_sqr() == 0.0 {
                continue;
            }
            let phases = family.phase_diag(params.sector_scale(s));
            let chi = params.sector_phase(s);
            diag = diag + phases.mapv(|z| z * (w * chi));
        }
        family.assemble(&diag)
    } else {
        // No displacement: K is a scalar multiple of the identity.
        let w: C64 = weights
            .iter()
            .enumerate()
            .map(|(s, w)| w * params.sector_phase(s))
            .sum();
        util::identity(d).mapv(|z| z * w)
    };
    let op = k * &rot;
    Ok(StepKernel { op, dim: d })
}

/// Records plus the final mechanical state of a protocol run.
pub struct ProtocolRun {
    pub records: Vec<IterationRecord>,
    pub final_state: MechState,
}

pub fn run_protocol_full(
    params: &ModelParams,
    strategy: &Strategy,
    iterations: usize,
) -> Result<ProtocolRun> {
    if iterations < 1 {
        return Err(Error::Domain("need at least one iteration".into()));
    }
    let kernel = build_step_superoperator(params, strategy)?;
    let mut state = thermal_density(params.nbar, params.dim)?.normalized()?;
    let n0 = mean_phonon(&state)?;
    let mut records = Vec::with_capacity(iterations);
    let mut cumulative = 1.0;
    for index in 1..=iterations {
        let (next, p) = kernel.apply(&state).map_err(|e| match e {
            Error::VanishingBranch { probability, .. } => Error::VanishingBranch {
                probability,
                iteration: Some(index),
            },
            other => other,
        })?;
        state = next;
        cumulative *= p;
        let n = mean_phonon(&state)?;
        let (dx, dy) = quadrature_variances(&state)?;
        records.push(IterationRecord {
            index,
            mean_phonon: n,
            ratio: n / n0,
            dx,
            dy,
            step_probability: p,
            cumulative_probability: cumulative,
        });
    }
    Ok(ProtocolRun {
        records,
        final_state: state,
    })
}

/// Iterate the cooling loop; the mechanical state threads through the
/// success branch only.
pub fn run_protocol(
    params: &ModelParams,
    strategy: &Strategy,
    iterations: usize,
) -> Result<Vec<IterationRecord>> {
    run_protocol_full(params, strategy, iterations).map(|run| run.records)
}

/// Same loop through the full joint space (evolve + postselect each
/// step); the oracle the kernel path is validated against.
pub fn run_protocol_joint(
    params: &ModelParams,
    strategy: &Strategy,
    iterations: usize,
) -> Result<Vec<IterationRecord>> {
    let mut mech = thermal_density(params.nbar, params.dim)?.normalized()?;
    let n0 = mean_phonon(&mech)?;
    let pre = strategy.preselection(params.n_spins);
    let target = strategy.target(params.n_spins);
    let mut records = Vec::with_capacity(iterations);
    let mut cumulative = 1.0;
    for index in 1..=iterations {
        let joint = QuantumState::separable(&pre, &mech, params.basis, params.n_spins)?;
        let evolved = evolve_closed(&joint, params)?;
        let sel = postselect(&evolved, &target)?;
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

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub t: f64,
    pub lambda: f64,
    pub ratio: f64,
    /// dx_post / dy_post after the single step.
    pub var_ratio: f64,
    pub step_probability: f64,
}

/// Single-step observables over a (lambda, t) grid.
pub fn sweep_ratio(
    params: &ModelParams,
    strategy: &Strategy,
    lambdas: &[f64],
    times: &[f64],
) -> Result<Vec<SweepPoint>> {
    if lambdas.is_empty() || times.is_empty() {
        return Err(Error::Domain("sweep grids must be nonempty".into()));
    }
    let initial = thermal_density(params.nbar, params.dim)?.normalized()?;
    let n0 = mean_phonon(&initial)?;
    let grid: Vec<(f64, f64)> = times
        .iter()
        .flat_map(|&t| lambdas.iter().map(move |&l| (t, l)))
        .collect();
    grid.par_iter()
        .map(|&(t, lambda)| {
            let p = ModelParams {
                lambda,
                t,
                ..*params
            };
            let kernel = build_step_superoperator(&p, strategy)?;
            let (state, prob) = kernel.apply(&initial)?;
            let n = mean_phonon(&state)?;
            let (dx, dy) = quadrature_variances(&state)?;
            Ok(SweepPoint {
                t,
                lambda,
                ratio: n / n0,
                var_ratio: dx / dy,
                step_probability: prob,
            })
        })
        .collect()
}

/// Best (minimum) single-step ratio over a lambda scan at the params'
/// step time, for the independent strategy with `n_spins` spins.
pub fn best_single_step_ratio(
    params: &ModelParams,
    n_spins: usize,
    lambdas: &[f64],
) -> Result<(f64, f64)> {
    let p = ModelParams {
        n_spins,
        basis: SpinBasis::Product,
        ..*params
    };
    let points = sweep_ratio(&p, &Strategy::Independent, lambdas, &[p.t])?;
    let best = points
        .iter()
        .min_by(|a, b| a.ratio.total_cmp(&b.ratio))
        .expect("nonempty sweep");
    Ok((best.lambda, best.ratio))
}

/// Ratio of the optimal single-step cooling ratios of N = n_hi and
/// N = n_hi - 1 at t as configured (diminishing-returns metric).
pub fn enhancement_ratio(n_hi: usize, params: &ModelParams) -> Result<f64> {
    if n_hi < 2 {
        return Err(Error::Domain("enhancement ratio needs n_hi >= 2".into()));
    }
    let lambdas = util::linspace(0.02, 0.3, 57);
    let (_, hi) = best_single_step_ratio(params, n_hi, &lambdas)?;
    let (_, lo) = best_single_step_ratio(params, n_hi - 1, &lambdas)?;
    Ok(hi / lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn params(lambda: f64, nbar: f64, n_spins: usize, dim: usize) -> ModelParams {
        ModelParams {
            lambda,
            t: PI / 2.0,
            nbar,
            n_spins,
            dim,
            basis: SpinBasis::Product,
        }
    }

    #[test]
    fn kernel_matches_joint_path_single_spin() {
        let p = params(0.12, 1.0, 1, 60);
        let fast = run_protocol(&p, &Strategy::Independent, 3).unwrap();
        let slow = run_protocol_joint(&p, &Strategy::Independent, 3).unwrap();
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert_abs_diff_eq!(a.mean_phonon, b.mean_phonon, epsilon = 1e-8);
            assert_abs_diff_eq!(a.step_probability, b.step_probability, epsilon = 1e-8);
        }
    }

    #[test]
    fn kernel_matches_joint_path_correlated() {
        let p = params(0.12, 1.0, 2, 60);
        let strat = Strategy::Correlated(crate::postselect::target_corr2());
        let fast = run_protocol(&p, &strat, 2).unwrap();
        let slow = run_protocol_joint(&p, &strat, 2).unwrap();
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert_abs_diff_eq!(a.mean_phonon, b.mean_phonon, epsilon = 1e-8);
            assert_abs_diff_eq!(a.step_probability, b.step_probability, epsilon = 1e-8);
        }
    }

    #[test]
    fn kernel_matches_joint_path_collective() {
        let p = ModelParams {
            basis: SpinBasis::Collective,
            ..params(0.12, 1.0, 3, 60)
        };
        let fast = run_protocol(&p, &Strategy::Collective, 2).unwrap();
        let slow = run_protocol_joint(&p, &Strategy::Collective, 2).unwrap();
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert_abs_diff_eq!(a.mean_phonon, b.mean_phonon, epsilon = 1e-8);
            assert_abs_diff_eq!(a.step_probability, b.step_probability, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_coupling_kernel_is_overlap_probability() {
        let p = params(0.0, 2.0, 2, 60);
        let strat = Strategy::Correlated(crate::postselect::target_corr2());
        let records = run_protocol(&p, &strat, 1).unwrap();
        // probability = |<target|preselect>|^2
        let target = crate::postselect::target_corr2();
        let pre = strat.preselection(2);
        let ov: C64 = target
            .coeffs()
            .iter()
            .zip(pre.iter())
            .map(|(c, w)| c.conj() * w)
            .sum();
        assert_abs_diff_eq!(records[0].step_probability, ov.norm_sqr(), epsilon = 1e-10);
        assert_abs_diff_eq!(records[0].ratio, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn ratio_decreases_and_probability_bookkeeping() {
        let p = params(0.12, 10.0, 1, 150);
        let records = run_protocol(&p, &Strategy::Independent, 8).unwrap();
        let mut prod = 1.0;
        let mut last_ratio = f64::INFINITY;
        let mut last_cum = 1.0;
        for r in &records {
            prod *= r.step_probability;
            assert_abs_diff_eq!(r.cumulative_probability, prod, epsilon = 1e-10);
            assert!(r.cumulative_probability <= last_cum + 1e-12);
            if last_ratio > 0.05 {
                assert!(r.ratio < last_ratio, "ratio not decreasing at {}", r.index);
            }
            assert!(r.ratio > 0.0);
            last_ratio = r.ratio;
            last_cum = r.cumulative_probability;
        }
    }

    #[test]
    fn variances_approach_vacuum() {
        // Cooling at t = pi/2 is thermal: dx stays equal to dy while
        // both shrink toward the vacuum value.
        let p = params(0.12, 10.0, 1, 150);
        let records = run_protocol(&p, &Strategy::Independent, 30).unwrap();
        let vac = 0.5f64.sqrt();
        let mut last_dx = f64::INFINITY;
        for r in &records {
            assert!((r.dx - r.dy).abs() < 1e-6, "squeezing at {}", r.index);
            assert!(r.dx < last_dx, "dx not shrinking at {}", r.index);
            assert!(r.dx >= vac - 1e-3);
            last_dx = r.dx;
        }
        assert!(last_dx - vac < 0.25, "dx excess {}", last_dx - vac);
    }

    #[test]
    fn four_spins_converts_iterations() {
        let p1 = params(0.12, 10.0, 1, 150);
        let p4 = params(0.12, 10.0, 4, 150);
        let r1 = run_protocol(&p1, &Strategy::Independent, 8).unwrap();
        let r4 = run_protocol(&p4, &Strategy::Independent, 2).unwrap();
        let a = r1.last().unwrap().ratio;
        let b = r4.last().unwrap().ratio;
        assert!((a - b).abs() / a < 0.1, "ratios {a} vs {b}");
    }

    #[test]
    fn sweep_locates_optimal_coupling() {
        // The minimum-ratio valley is nearly flat in t; at the t = pi/2
        // slice the optimum sits at lambda = 0.12 with symmetric
        // quadratures, and shorter/longer slices are asymmetric.
        let p = params(0.12, 10.0, 1, 150);
        let lambdas = util::linspace(0.0, 0.3, 61);
        let times = [PI / 4.0, PI / 2.0, 3.0 * PI / 4.0];
        let points = sweep_ratio(&p, &Strategy::Independent, &lambdas, &times).unwrap();
        let slice_best = |t: f64| {
            points
                .iter()
                .filter(|q| (q.t - t).abs() < 1e-12)
                .min_by(|a, b| a.ratio.total_cmp(&b.ratio))
                .unwrap()
        };
        let best = slice_best(PI / 2.0);
        assert!((best.lambda - 0.12).abs() <= 0.011, "lambda {}", best.lambda);
        assert!((0.65..0.75).contains(&best.ratio), "ratio {}", best.ratio);
        assert!((0.9..1.1).contains(&best.var_ratio), "var ratio {}", best.var_ratio);
        assert!(slice_best(PI / 4.0).var_ratio < 0.9);
        assert!(slice_best(3.0 * PI / 4.0).var_ratio > 1.1);
    }

    #[test]
    fn enhancement_ratio_trend() {
        let p = params(0.12, 10.0, 1, 150);
        let e2 = enhancement_ratio(2, &p).unwrap();
        assert!(e2 < 1.0);
        let e6 = enhancement_ratio(6, &p).unwrap();
        assert!((e6 - 0.98).abs() <= 0.02, "enhancement(6) = {e6}");
    }
}
