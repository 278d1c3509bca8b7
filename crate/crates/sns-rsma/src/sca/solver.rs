//! Inner solver for the concave surrogate problems.
//!
//! The inner problem is `max F(Q) = S(Q) + c * min_i r_i(Q)` over PSD blocks
//! under a total-power budget, with `S` and every `r_i` smooth and concave.
//! By the minimax theorem this equals `min_{lambda in simplex} Phi(lambda)`
//! with `Phi(lambda) = max_Q S(Q) + c * sum_i lambda_i r_i(Q)`, so the solver
//! runs a Polyak subgradient descent over `lambda` (dimension = number of
//! users) around a smooth concave maximization in `Q`; the difference
//! between the best dual value `Phi` and the best primal value `F` certifies
//! the solution quality.
//!
//! The smooth subproblems are solved by a spectral projected gradient
//! method: Barzilai-Borwein steps, a nonmonotone (windowed) Armijo test, and
//! exact Euclidean projection onto the feasible set. The projection
//! eigendecomposes every block, shifts all eigenvalues by the water-filling
//! multiplier of the trace budget, and clamps at zero. Nonmonotone steps
//! never fall below the starting value's running window minimum, so a
//! warm-started solve always returns at least its starting objective.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{hermitian_eigen_desc, CMat};

use super::problem::{
    restrict_diag, SurrogateGradient, SurrogateModel, SurrogateValue, VarKind, VarSet, WsrGeometry,
};

/// Inner-solver tuning knobs.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Cap on total gradient-step iterations across all dual rounds.
    pub max_iter: usize,
    /// Stationarity tolerance, relative: the projected-gradient residual of
    /// the final smooth solve must fall below `stat_tol * (1 + |objective|)`.
    pub stat_tol: f64,
    /// Relative duality-gap (and final-step improvement) tolerance.
    pub impr_tol: f64,
    /// Armijo sufficient-increase coefficient.
    pub armijo_c: f64,
    /// Dual (min-weight) rounds cap.
    pub max_dual_rounds: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 40_000,
            stat_tol: 1e-6,
            impr_tol: 1e-8,
            armijo_c: 1e-4,
            max_dual_rounds: 120,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
}

/// KKT residual diagnostics at the returned iterate.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    /// Projected-gradient residual of the active smooth problem combined
    /// with the primal-dual gap of the min structure.
    pub stationarity: f64,
    /// Budget violation, `max(0, used - P_T)` (zero by projection).
    pub primal_feasibility: f64,
    /// `|nu * (P_T - used)|` with `nu` the projection's multiplier estimate.
    pub complementary_slackness: f64,
}

/// Solution of one inner convex problem.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub vars: VarSet,
    /// Achieved surrogate value (bits).
    pub value: f64,
    pub kkt: KktResiduals,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Final dual weights of the common-rate minimum (empty for smooth
    /// problems); a warm start for the next expansion's inner solve.
    pub lambda: Vec<f64>,
}

/// Exact projection onto `{blocks PSD, sum of traces <= budget}`.
///
/// Returns the projected variables and the trace multiplier `nu`.
pub fn project_onto_feasible(geo: &WsrGeometry, vars: &VarSet) -> (VarSet, f64) {
    struct Block {
        vals: Vec<f64>,
        vecs: Option<CMat>, // None for diagonal blocks
    }
    let mut blocks = Vec::new();
    let mut collect = |m: &CMat, diag: bool| {
        if diag {
            let vals = (0..m.nrows()).map(|i| m[(i, i)].re).collect();
            blocks.push(Block { vals, vecs: None });
        } else {
            let (vals, vecs) = hermitian_eigen_desc(m);
            blocks.push(Block {
                vals,
                vecs: Some(vecs),
            });
        }
    };
    for (x, kind) in vars.x.iter().zip(&geo.var_kind) {
        collect(x, matches!(kind, VarKind::Diag));
    }
    if let Some(qc) = &vars.q_c {
        collect(qc, false);
    }

    // Water-filling for the shift: the smallest nu >= 0 with
    // sum max(lambda - nu, 0) <= budget.
    let mut all: Vec<f64> = blocks.iter().flat_map(|b| b.vals.iter().cloned()).collect();
    all.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let clamped_sum: f64 = all.iter().filter(|&&v| v > 0.0).sum();
    let mut nu = 0.0;
    if clamped_sum > geo.p_budget {
        let mut prefix = 0.0;
        for (t, &lam) in all.iter().enumerate() {
            prefix += lam;
            let candidate = (prefix - geo.p_budget) / (t + 1) as f64;
            let next = all.get(t + 1).copied().unwrap_or(f64::NEG_INFINITY);
            if candidate >= next && candidate >= 0.0 {
                nu = candidate;
                break;
            }
        }
    }

    let rebuild = |b: &Block| -> CMat {
        let n = b.vals.len();
        let shifted: Vec<f64> = b.vals.iter().map(|&v| (v - nu).max(0.0)).collect();
        match &b.vecs {
            Some(vecs) => {
                let d = CMat::from_diagonal(&crate::numerics::CVec::from_iterator(
                    n,
                    shifted.iter().map(|&v| Complex64::new(v, 0.0)),
                ));
                let m = vecs * d * vecs.adjoint();
                crate::numerics::hermitian_part(&m)
            }
            None => {
                let mut m = CMat::zeros(n, n);
                for (i, &v) in shifted.iter().enumerate() {
                    m[(i, i)] = Complex64::new(v, 0.0);
                }
                m
            }
        }
    };

    let k = vars.x.len();
    let x: Vec<CMat> = blocks[..k].iter().map(&rebuild).collect();
    let q_c = vars.q_c.as_ref().map(|_| rebuild(&blocks[k]));
    (VarSet { x, q_c }, nu)
}

/// `F_lambda` value from the parts of a surrogate evaluation.
fn lambda_value(sv: &SurrogateValue, coeff: f64, lambda: &[f64]) -> f64 {
    let cm: f64 = lambda.iter().zip(&sv.common).map(|(l, r)| l * r).sum();
    sv.smooth + coeff * cm
}

/// True (min-form) objective from the parts of a surrogate evaluation.
fn true_value(sv: &SurrogateValue, coeff: f64, has_min: bool) -> f64 {
    if has_min {
        sv.smooth + coeff * sv.common_min
    } else {
        sv.smooth
    }
}

/// Combines the smooth gradient with a convex combination of the common-rate
/// gradients.
fn combine(grad: &SurrogateGradient, lambda: &[f64]) -> VarSet {
    let mut g = grad.smooth.clone();
    for (l, cg) in lambda.iter().zip(&grad.common) {
        if *l != 0.0 {
            g.axpy(grad.common_coeff * l, cg);
        }
    }
    g
}

/// Euclidean projection onto the probability simplex (breakpoint scan).
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut theta = sorted[0] - 1.0;
    for (i, &s) in sorted.iter().enumerate() {
        acc += s;
        let t = (acc - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

struct SmoothSolve {
    vars: VarSet,
    sv: SurrogateValue,
    value_lambda: f64,
    residual: f64,
    iterations: usize,
    nu: f64,
}

/// Spectral projected gradient (Barzilai-Borwein + nonmonotone Armijo) for
/// `max F_lambda` over the feasible set.
fn spg_max(
    model: &SurrogateModel<'_>,
    lambda: &[f64],
    start: VarSet,
    opts: &SolverOptions,
    iter_budget: usize,
) -> Result<SmoothSolve> {
    let geo = model.geo;
    let coeff = geo.weights.common_coeff();
    let (mut vars, mut nu) = project_onto_feasible(geo, &start);
    restrict_diag(geo, &mut vars);
    let (mut sv, mut grad) = model.eval_with_grad(&vars)?;
    let mut f = lambda_value(&sv, coeff, lambda);
    let mut g = combine(&grad, lambda);

    let mut step = {
        let gn = g.norm();
        if gn > 0.0 {
            (geo.p_budget.max(1e-9) / gn).min(1e6)
        } else {
            1.0
        }
    };
    let window = 8usize;
    let mut recent: Vec<f64> = vec![f];
    let mut residual = f64::INFINITY;
    let mut iterations = 0usize;

    while iterations < iter_budget {
        iterations += 1;
        // Projected-gradient direction at the BB step.
        let mut probe = vars.clone();
        probe.axpy(step, &g);
        let (projected, nu_probe) = project_onto_feasible(geo, &probe);
        let d = projected.diff(&vars);
        let dnorm = d.norm();
        // Residual at unit step for the stopping test.
        if iterations % 4 == 1 || dnorm <= 1e-300 {
            let mut unit = vars.clone();
            unit.axpy(1.0, &g);
            let (pu, _) = project_onto_feasible(geo, &unit);
            residual = pu.diff(&vars).norm();
            if residual <= opts.stat_tol * (1.0 + f.abs()) {
                break;
            }
        }
        if dnorm <= 1e-300 {
            break;
        }
        let slope = g.dot(&d);
        if slope <= 0.0 {
            // BB step unusable; shrink and retry.
            step *= 0.1;
            if step < 1e-16 {
                break;
            }
            continue;
        }
        let f_ref = recent.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut cand = vars.clone();
            cand.axpy(alpha, &d);
            let cand_sv = model.eval(&cand)?;
            let cand_f = lambda_value(&cand_sv, coeff, lambda);
            if cand_f >= f_ref + opts.armijo_c * alpha * slope {
                let (_, cand_grad) = model.eval_with_grad(&cand)?;
                let mut gnew = combine(&cand_grad, lambda);
                restrict_diag(geo, &mut gnew);
                // BB1 step from the accepted displacement.
                let s = cand.diff(&vars);
                let y = gnew.diff(&g);
                let sy = s.dot(&y);
                let ss = s.dot(&s);
                step = if sy < -1e-300 {
                    (-ss / sy).clamp(1e-12, 1e10)
                } else {
                    (step * 2.0).min(1e10)
                };
                vars = cand;
                sv = cand_sv;
                grad = cand_grad;
                f = cand_f;
                g = gnew;
                nu = if alpha == 1.0 { nu_probe } else { nu };
                recent.push(f);
                if recent.len() > window {
                    recent.remove(0);
                }
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // The direction gave no nonmonotone ascent: declare local
            // stationarity at numerical precision.
            let mut unit = vars.clone();
            unit.axpy(1.0, &g);
            let (pu, _) = project_onto_feasible(geo, &unit);
            residual = pu.diff(&vars).norm();
            break;
        }
    }

    let _ = grad;
    Ok(SmoothSolve {
        value_lambda: f,
        vars,
        sv,
        residual,
        iterations,
        nu,
    })
}

/// Maximizes a concave surrogate over the feasible set; `warm` seeds the
/// iterate (projected if needed), zero variables otherwise.
pub fn solve_inner(
    model: &SurrogateModel<'_>,
    warm: Option<&VarSet>,
    warm_lambda: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<InnerSolution> {
    let geo = model.geo;
    let coeff = geo.weights.common_coeff();
    let k = geo.num_positions();
    let has_min = geo.has_common() && coeff > 0.0 && k > 1;
    let start = match warm {
        Some(v) => v.clone(),
        None => geo.zero_vars(),
    };

    if !has_min {
        // Smooth problem (single user, no common message, or zero common
        // weight): one SPG solve; with a common message and one user the
        // min is that user's rate, lambda = [1].
        let lambda = if geo.has_common() && coeff > 0.0 {
            vec![1.0; k.max(1)]
        } else {
            vec![0.0; k]
        };
        let sol = spg_max(model, &lambda, start, opts, opts.max_iter)?;
        let value = true_value(&sol.sv, coeff, geo.has_common() && coeff > 0.0);
        let used = sol.vars.total_power();
        let status = if sol.residual <= opts.stat_tol * (1.0 + value.abs()) {
            SolveStatus::Converged
        } else {
            SolveStatus::MaxIterations
        };
        let solution = InnerSolution {
            kkt: KktResiduals {
                stationarity: sol.residual,
                primal_feasibility: (used - geo.p_budget).max(0.0),
                complementary_slackness: (sol.nu * (geo.p_budget - used)).abs(),
            },
            vars: sol.vars,
            value,
            status,
            iterations: sol.iterations,
            lambda: Vec::new(),
        };
        return match solution.status {
            SolveStatus::Converged => Ok(solution),
            SolveStatus::MaxIterations => Err(Error::MaxIterations {
                iterations: solution.iterations,
                best: Box::new(solution),
            }),
        };
    }

    // Dual descent over the min weights: minimize Phi(lambda) = max_Q
    // F_lambda over the simplex. Phi is convex and differentiable wherever
    // the smooth maximizer is unique, with gradient c * r(Q*(lambda)), so a
    // projected gradient with a Barzilai-Borwein step and a monotone
    // safeguard converges in a handful of rounds; the duality gap against
    // the best primal value certifies the result. The (projected) warm
    // point itself is the first primal candidate, so the returned value
    // never falls below the true objective at the warm start.
    let mut lambda = match warm_lambda {
        Some(l) if l.len() == k => project_simplex(l),
        _ => vec![1.0 / k as f64; k],
    };
    let mut iterations = 0usize;
    let (warm_proj, warm_nu) = project_onto_feasible(geo, &start);
    let warm_sv = model.eval(&warm_proj)?;
    let mut best_primal = true_value(&warm_sv, coeff, true);
    let mut best_vars = warm_proj.clone();
    let mut best_nu = warm_nu;
    let mut best_lambda = lambda.clone();
    let mut phi_best = f64::INFINITY;
    let mut current = warm_proj;
    let mut gap = f64::INFINITY;
    let mut residual = f64::INFINITY;

    let mut dual_step = 1.0_f64;
    let mut prev: Option<(Vec<f64>, Vec<f64>, f64)> = None; // (lambda, grad, phi)

    for _ in 0..opts.max_dual_rounds {
        let budget = (opts.max_iter.saturating_sub(iterations)).min(6_000);
        if budget == 0 {
            break;
        }
        let sol = spg_max(model, &lambda, current.clone(), opts, budget)?;
        iterations += sol.iterations;
        let phi = sol.value_lambda;
        let grad_phi: Vec<f64> = sol.sv.common.iter().map(|&ri| coeff * ri).collect();
        let primal = true_value(&sol.sv, coeff, true);
        residual = sol.residual;
        if primal > best_primal {
            best_primal = primal;
            best_vars = sol.vars.clone();
            best_nu = sol.nu;
            best_lambda = lambda.clone();
        }

        if let Some((plam, pgrad, pphi)) = &prev {
            if phi > *pphi + 1e-12 * (1.0 + pphi.abs()) {
                // Overshot the dual minimizer: back off toward the previous
                // point and retry with a smaller step.
                dual_step *= 0.25;
                let moved: Vec<f64> = plam
                    .iter()
                    .zip(pgrad)
                    .map(|(&l, &g)| l - dual_step * g)
                    .collect();
                lambda = project_simplex(&moved);
                continue;
            }
            // BB step from the dual displacement.
            let s: Vec<f64> = lambda.iter().zip(plam).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = grad_phi.iter().zip(pgrad).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            let ss: f64 = s.iter().map(|a| a * a).sum();
            if sy > 1e-300 {
                dual_step = (ss / sy).clamp(1e-6, 1e6);
            } else {
                dual_step = (dual_step * 2.0).min(1e6);
            }
        }
        phi_best = phi_best.min(phi);
        current = sol.vars.clone();
        gap = phi_best - best_primal;
        if gap <= opts.impr_tol * (1.0 + best_primal.abs()) {
            break;
        }
        prev = Some((lambda.clone(), grad_phi.clone(), phi));
        let moved: Vec<f64> = lambda
            .iter()
            .zip(&grad_phi)
            .map(|(&l, &g)| l - dual_step * g)
            .collect();
        let next = project_simplex(&moved);
        if next
            .iter()
            .zip(&lambda)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max)
            <= 1e-14
        {
            break;
        }
        lambda = next;
    }

    let value = best_primal;
    let used = best_vars.total_power();
    let stat = residual.max(gap);
    let status = if gap <= opts.impr_tol * (1.0 + value.abs()) * 10.0
        || stat <= opts.stat_tol * (1.0 + value.abs())
    {
        SolveStatus::Converged
    } else {
        SolveStatus::MaxIterations
    };
    let solution = InnerSolution {
        kkt: KktResiduals {
            stationarity: stat,
            primal_feasibility: (used - geo.p_budget).max(0.0),
            complementary_slackness: (best_nu * (geo.p_budget - used)).abs(),
        },
        vars: best_vars,
        value,
        status,
        iterations,
        lambda: best_lambda,
    };
    match solution.status {
        SolveStatus::Converged => Ok(solution),
        SolveStatus::MaxIterations => Err(Error::MaxIterations {
            iterations: solution.iterations,
            best: Box::new(solution),
        }),
    }
}
