//! Derivative-free search over real unit-norm target coefficients,
//! minimizing the single-step postselected mean phonon number.
//!
//! The search runs Nelder-Mead in unconstrained ambient coordinates and
//! normalizes inside the objective; multi-start with seeded simplices
//! makes the result deterministic for a given seed.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{ModelParams, SpinBasis};
use crate::fockspace::{DisplacementFamily, mean_phonon, number_op, thermal_density};
use crate::postselect::{TargetBasis, TargetState};
use crate::protocol::{Strategy, build_step_kernel};
use crate::{C64, Error, PROBABILITY_FLOOR, Result};

#[derive(Debug, Clone)]
pub struct OptimizeConfig {
    pub n_spins: usize,
    pub basis: SpinBasis,
    pub restarts: usize,
    pub max_evals: usize,
    pub tol: f64,
    pub probability_floor: Option<f64>,
    pub seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            n_spins: 2,
            basis: SpinBasis::Product,
            restarts: 32,
            max_evals: 4000,
            tol: 1e-10,
            probability_floor: None,
            seed: 7,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts < 1 {
            return Err(Error::Domain("restarts must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Domain("tol must be positive".into()));
        }
        Ok(())
    }

    fn coeff_dim(&self) -> usize {
        match self.basis {
            SpinBasis::Product => 1 << self.n_spins,
            SpinBasis::Collective => self.n_spins + 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub target: TargetState,
    pub ratio: f64,
    pub probability: f64,
    pub converged: bool,
    pub evaluations: usize,
}

/// Single evolve-and-postselect step from the strategy's standard
/// preselection; returns (ratio, probability).
pub fn evaluate_target(target: &TargetState, params: &ModelParams) -> Result<(f64, f64)> {
    let weights = target_sector_weights(target, params)?;
    let kernel = build_step_kernel(params, &weights)?;
    let initial = thermal_density(params.nbar, params.dim)?.normalized()?;
    let n0 = mean_phonon(&initial)?;
    match kernel.apply(&initial) {
        Ok((state, p)) => Ok((mean_phonon(&state)? / n0, p)),
        Err(Error::VanishingBranch { .. }) => Ok((f64::INFINITY, 0.0)),
        Err(e) => Err(e),
    }
}

fn target_sector_weights(target: &TargetState, params: &ModelParams) -> Result<Vec<C64>> {
    match (target.basis(), params.basis) {
        (TargetBasis::Collective { n_spins }, SpinBasis::Collective)
            if n_spins == params.n_spins =>
        {
            let flat = 1.0 / ((params.n_spins + 1) as f64).sqrt();
            Ok(target
                .coeffs()
                .iter()
                .map(|c| c.conj() * flat)
                .collect())
        }
        (_, SpinBasis::Product) => {
            crate::protocol::sector_weights(params, &Strategy::Correlated(target.clone()))
        }
        _ => Err(Error::BasisMismatch(
            "target basis does not match params basis".into(),
        )),
    }
}

/// Precomputed quantities making one objective evaluation O(d^2).
struct Objective {
    params: ModelParams,
    /// Thermal state in the displacement-family eigenbasis.
    rho_eig: Array2<C64>,
    /// Number operator in the same eigenbasis.
    n_eig: Array2<C64>,
    /// Per-sector diagonal phases exp(-i scale_s w) in that basis.
    sector_diags: Vec<Vec<C64>>,
    /// Per-sector entangling phases.
    sector_chis: Vec<C64>,
    n0: f64,
    floor: f64,
    evals: std::cell::Cell<usize>,
}

impl Objective {
    fn new(params: &ModelParams, floor: f64) -> Result<Self> {
        params.validate()?;
        let d = params.dim;
        let eta = params.eta();
        if eta.norm() == 0.0 || params.lambda == 0.0 {
            return Err(Error::Domain(
                "optimizer objective needs a nonzero displacement per step".into(),
            ));
        }
        let family = DisplacementFamily::new(eta, d)?;
        let thermal = thermal_density(params.nbar, d)?.normalized()?;
        let n0 = mean_phonon(&thermal)?;
        let rho_eig = family.to_eigenbasis(&thermal.rho);
        let n_eig = family.to_eigenbasis(&number_op(d));
        let sector_diags = (0..params.sector_count())
            .map(|s| family.phase_diag(params.sector_scale(s)).to_vec())
            .collect();
        let sector_chis = (0..params.sector_count())
            .map(|s| params.sector_phase(s))
            .collect();
        Ok(Self {
            params: *params,
            rho_eig,
            n_eig,
            sector_diags,
            sector_chis,
            n0,
            floor,
            evals: std::cell::Cell::new(0),
        })
    }

    /// Sector weights for ambient coordinates x (normalized inside).
    fn weights(&self, x: &[f64]) -> Option<Vec<C64>> {
        let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return None;
        }
        let n = self.params.n_spins;
        match self.params.basis {
            SpinBasis::Product => {
                let pre = 1.0 / ((1u64 << n) as f64).sqrt();
                let mut v = vec![C64::new(0.0, 0.0); n + 1];
                for (idx, &c) in x.iter().enumerate() {
                    let sector = n - idx.count_ones() as usize;
                    v[sector] += C64::new(c / norm * pre, 0.0);
                }
                Some(v)
            }
            SpinBasis::Collective => {
                let pre = 1.0 / ((n + 1) as f64).sqrt();
                Some(
                    x.iter()
                        .map(|&c| C64::new(c / norm * pre, 0.0))
                        .collect(),
                )
            }
        }
    }

    /// (ratio, probability) for ambient coordinates, or +inf sentinel.
    fn evaluate(&self, x: &[f64]) -> (f64, f64) {
        self.evals.set(self.evals.get() + 1);
        let Some(v) = self.weights(x) else {
            return (f64::INFINITY, 0.0);
        };
        let d = self.params.dim;
        // Combined diagonal Delta = sum_s v_s chi_s exp(-i scale_s w).
        let mut delta = vec![C64::new(0.0, 0.0); d];
        for (s, vs) in v.iter().enumerate() {
            if vs.norm_sqr() == 0.0 {
                continue;
            }
            let w = vs * self.sector_chis[s];
            for (dj, pj) in delta.iter_mut().zip(self.sector_diags[s].iter()) {
                *dj += w * pj;
            }
        }
        // probability = sum_j |Delta_j|^2 rho_jj
        let mut prob = 0.0;
        for j in 0..d {
            prob += delta[j].norm_sqr() * self.rho_eig[(j, j)].re;
        }
        if prob < self.floor {
            return (f64::INFINITY, prob.max(0.0));
        }
        // <n> * p = sum_{j,k} n_jk Delta_k rho_kj Delta_j^*
        let mut num = C64::new(0.0, 0.0);
        for j in 0..d {
            let dj = delta[j].conj();
            for k in 0..d {
                num += self.n_eig[(j, k)] * delta[k] * self.rho_eig[(k, j)] * dj;
            }
        }
        (num.re / prob / self.n0, prob)
    }
}

/// Plain Nelder-Mead on the ambient coordinates.
fn nelder_mead(
    obj: &Objective,
    start: &[f64],
    tol: f64,
    max_evals: usize,
) -> (Vec<f64>, f64, bool) {
    let dim = start.len();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(start.to_vec());
    for i in 0..dim {
        let mut v = start.to_vec();
        v[i] += 0.25;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| obj.evaluate(x).0).collect();
    let budget_start = obj.evals.get();
    let mut converged = false;
    loop {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];
        if values[worst] - values[best] < tol {
            converged = true;
            break;
        }
        if obj.evals.get() - budget_start >= max_evals {
            break;
        }
        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; dim];
        for &i in order.iter().take(dim) {
            for (c, v) in centroid.iter_mut().zip(simplex[i].iter()) {
                *c += v / dim as f64;
            }
        }
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(simplex[worst].iter())
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        let f_r = obj.evaluate(&reflect).0;
        if f_r < values[best] {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(reflect.iter())
                .map(|(c, r)| c + gamma * (r - c))
                .collect();
            let f_e = obj.evaluate(&expand).0;
            if f_e < f_r {
                simplex[worst] = expand;
                values[worst] = f_e;
            } else {
                simplex[worst] = reflect;
                values[worst] = f_r;
            }
        } else if f_r < values[second_worst] {
            simplex[worst] = reflect;
            values[worst] = f_r;
        } else {
            let contract: Vec<f64> = if f_r < values[worst] {
                centroid
                    .iter()
                    .zip(reflect.iter())
                    .map(|(c, r)| c + rho * (r - c))
                    .collect()
            } else {
                centroid
                    .iter()
                    .zip(simplex[worst].iter())
                    .map(|(c, w)| c + rho * (w - c))
                    .collect()
            };
            let f_c = obj.evaluate(&contract).0;
            if f_c < values[worst].min(f_r) {
                simplex[worst] = contract;
                values[worst] = f_c;
            } else {
                // Shrink toward the best vertex.
                let best_point = simplex[best].clone();
                for i in 0..=dim {
                    if i == best {
                        continue;
                    }
                    let shrunk: Vec<f64> = best_point
                        .iter()
                        .zip(simplex[i].iter())
                        .map(|(b, v)| b + sigma * (v - b))
                        .collect();
                    values[i] = obj.evaluate(&shrunk).0;
                    simplex[i] = shrunk;
                }
            }
        }
    }
    let (mut best_idx, mut best_val) = (0, values[0]);
    for (i, &v) in values.iter().enumerate() {
        if v < best_val {
            best_idx = i;
            best_val = v;
        }
    }
    (simplex[best_idx].clone(), best_val, converged)
}

/// Multi-start search for the optimal real target state.
pub fn optimize_target(config: &OptimizeConfig, params: &ModelParams) -> Result<OptimizeResult> {
    config.validate()?;
    let params = ModelParams {
        n_spins: config.n_spins,
        basis: config.basis,
        ..*params
    };
    let floor = config.probability_floor.unwrap_or(PROBABILITY_FLOOR);
    let obj = Objective::new(&params, floor)?;
    let dim = config.coeff_dim();
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for restart in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(restart as u64 * 0x9e37));
        let mut start: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm: f64 = start.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-6 {
            start[0] = 1.0;
        } else {
            for v in start.iter_mut() {
                *v /= norm;
            }
        }
        let (x, f, conv) = nelder_mead(&obj, &start, config.tol, config.max_evals);
        let better = match &best {
            Some((_, fb, _)) => f < *fb,
            None => true,
        };
        if better {
            best = Some((x, f, conv));
        }
    }
    let (x, ratio, converged) = best.expect("at least one restart");
    let (check_ratio, probability) = obj.evaluate(&x);
    debug_assert!((check_ratio - ratio).abs() < 1e-9 || !check_ratio.is_finite());
    let basis = match config.basis {
        SpinBasis::Product => TargetBasis::Product {
            n_spins: config.n_spins,
        },
        SpinBasis::Collective => TargetBasis::Collective {
            n_spins: config.n_spins,
        },
    };
    let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let coeffs: Vec<C64> = x.iter().map(|&v| C64::new(v / norm, 0.0)).collect();
    let target = TargetState::new(basis, coeffs)?;
    let target = match config.basis {
        SpinBasis::Product => canonical_product_gauge(&target, config.n_spins)?,
        SpinBasis::Collective => target,
    };
    Ok(OptimizeResult {
        target,
        ratio,
        probability,
        converged,
        evaluations: obj.evals.get(),
    })
}

/// Canonical representative of a product-basis target under spin-label
/// permutations: gauge-fix each permuted copy and pick the
/// lexicographically largest real-part sequence.
pub fn canonical_product_gauge(target: &TargetState, n_spins: usize) -> Result<TargetState> {
    let coeffs = target.coeffs();
    let dim = 1usize << n_spins;
    if coeffs.len() != dim {
        return Err(Error::DimensionMismatch(
            "canonical gauge needs a product-basis target".into(),
        ));
    }
    let mut best: Option<Vec<C64>> = None;
    for perm in permutations(n_spins) {
        let mut permuted = vec![C64::new(0.0, 0.0); dim];
        for (idx, &c) in coeffs.iter().enumerate() {
            permuted[permute_bits(idx, &perm, n_spins)] = c;
        }
        let candidate = TargetState::new(TargetBasis::Product { n_spins }, permuted)?;
        let cand = candidate.coeffs().to_vec();
        let better = match &best {
            None => true,
            Some(b) => lex_greater(&cand, b),
        };
        if better {
            best = Some(cand);
        }
    }
    TargetState::new(
        TargetBasis::Product { n_spins },
        best.expect("at least the identity permutation"),
    )
}

fn lex_greater(a: &[C64], b: &[C64]) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        if (x.re - y.re).abs() > 1e-12 {
            return x.re > y.re;
        }
    }
    false
}

/// Move bit for spin i to the position of spin perm[i]
/// (bit N-1-i holds spin i).
fn permute_bits(idx: usize, perm: &[usize], n: usize) -> usize {
    let mut out = 0usize;
    for (i, &p) in perm.iter().enumerate() {
        let bit = (idx >> (n - 1 - i)) & 1;
        out |= bit << (n - 1 - p);
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    heap_permute(&mut items, n, &mut out);
    out
}

fn heap_permute(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == 1 {
        out.push(items.clone());
        return;
    }
    for i in 0..k {
        heap_permute(items, k - 1, out);
        if k % 2 == 0 {
            items.swap(i, k - 1);
        } else {
            items.swap(0, k - 1);
        }
    }
}
