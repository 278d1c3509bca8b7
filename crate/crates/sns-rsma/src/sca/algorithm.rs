//! Outer successive-convex-approximation loop, the rank-feasible
//! reformulation, permutation strategies, and the direct-optimization
//! baseline.


use crate::channel::{normalized_channel, normalized_gains, ChannelSet};
use crate::error::{Error, Result};
use crate::numerics::{top_eigvecs, CMat, PsdMatrix};
use crate::rsma::{build_sns_basis, CovariancePack, Pattern, ReducedFactors, SnsBasis, Weights};

use super::problem::{surrogate_rates, VarKind, VarSet, WsrGeometry};
use super::solver::{solve_inner, InnerSolution, SolverOptions};

/// Which channel matrices the optimizer works from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Csi {
    Perfect,
    Estimated,
}

impl Csi {
    pub fn use_estimates(self) -> bool {
        matches!(self, Csi::Estimated)
    }
}

/// Outer-loop options.
#[derive(Debug, Clone)]
pub struct ScaOptions {
    /// Convergence tolerance on the surrogate optimum.
    pub eps: f64,
    /// Outer iteration cap.
    pub max_outer: usize,
    /// Extrapolate the expansion-point sequence (monotonicity-safeguarded
    /// fixed-point acceleration). Every recorded value still comes from one
    /// inner solve of a tangent minorant, so the ascent property is
    /// untouched; only the expansion-point trajectory changes. Plain
    /// expansion updates contract slowly on interference-coupled instances.
    pub accelerate: bool,
    pub solver: SolverOptions,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_outer: 200,
            accelerate: true,
            solver: SolverOptions::default(),
        }
    }
}

impl ScaOptions {
    pub fn with_eps(eps: f64) -> Self {
        Self {
            eps,
            ..Self::default()
        }
    }
}

/// How the outer loop seeds its first expansion point.
#[derive(Debug, Clone)]
pub enum InitStrategy {
    /// `X_i = P_T / (K m_i) I`.
    AlgorithmDefault,
    /// Tiny positive multiple of the identity (schemes specified to start
    /// from zero; an exactly zero expansion would make the first surrogate
    /// degenerate).
    NearZero,
    /// Expansion and solver warm start from a given assignment.
    Warm(VarSet),
}

/// Convergence trace of one SCA run.
#[derive(Debug, Clone)]
pub struct ScaState {
    /// Inner optimal values per outer iteration (nondecreasing).
    pub objective_history: Vec<f64>,
    pub eps: f64,
}

/// Result of one SCA run.
#[derive(Debug, Clone)]
pub struct ScaOutcome {
    /// Exact objective at the returned variables (bits).
    pub value: f64,
    /// Final surrogate optimum.
    pub surrogate_value: f64,
    pub vars: VarSet,
    pub state: ScaState,
    /// Total inner-solver iterations.
    pub inner_iterations: usize,
    pub converged: bool,
}

impl ScaOutcome {
    pub fn outer_iterations(&self) -> usize {
        self.state.objective_history.len()
    }
}

/// Maximizes the weighted sum rate of a geometry by SCA: linearize the
/// interference log-dets at the expansion point, solve the concave inner
/// problem, move the expansion to its optimizer, and stop when the inner
/// optimum changes by less than `eps`.
pub fn sca_maximize(
    geo: &WsrGeometry,
    init: InitStrategy,
    opts: &ScaOptions,
) -> Result<ScaOutcome> {
    if !(opts.eps > 0.0) {
        return Err(Error::Validation("SCA tolerance must be positive".into()));
    }
    let (mut expansion, mut warm_vars) = match init {
        InitStrategy::AlgorithmDefault => {
            let e = geo.default_expansion();
            let v = VarSet {
                x: e.clone(),
                q_c: geo.common_dim().map(|d| CMat::zeros(d, d)),
            };
            (e, v)
        }
        InitStrategy::NearZero => {
            let e = geo.near_zero_expansion();
            let v = VarSet {
                x: e.clone(),
                q_c: geo.common_dim().map(|d| CMat::zeros(d, d)),
            };
            (e, v)
        }
        InitStrategy::Warm(v) => (v.x.clone(), v),
    };

    let mut history = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut inner_total = 0usize;
    let mut converged = false;
    let mut last: Option<InnerSolution> = None;
    let mut warm_lambda: Option<Vec<f64>> = None;
    let mut theta = 2.0_f64;

    for _ in 0..opts.max_outer {
        let model = surrogate_rates(geo, &expansion)?;
        let mut sol = match solve_inner(&model, Some(&warm_vars), warm_lambda.as_deref(), &opts.solver)
        {
            Ok(s) => s,
            Err(Error::MaxIterations { best, .. }) => *best,
            Err(e) => return Err(e),
        };
        inner_total += sol.iterations;

        if opts.accelerate {
            // Extrapolate the expansion along the fixed-point step
            // X* - X' and keep the extrapolated inner solution only when
            // it beats the plain one.
            let extrapolated: Vec<CMat> = sol
                .vars
                .x
                .iter()
                .zip(&expansion)
                .map(|(xs, xe)| {
                    let moved = xs + (xs - xe) * num_complex::Complex64::new(theta, 0.0);
                    match PsdMatrix::new(moved) {
                        Ok(p) => p.into_matrix(),
                        Err(_) => xs.clone(),
                    }
                })
                .collect();
            let model_ext = surrogate_rates(geo, &extrapolated)?;
            let sol_ext = match solve_inner(
                &model_ext,
                Some(&sol.vars),
                if sol.lambda.is_empty() {
                    warm_lambda.as_deref()
                } else {
                    Some(&sol.lambda)
                },
                &opts.solver,
            ) {
                Ok(s) => s,
                Err(Error::MaxIterations { best, .. }) => *best,
                Err(e) => return Err(e),
            };
            inner_total += sol_ext.iterations;
            if sol_ext.value > sol.value {
                sol = sol_ext;
                theta = (theta * 4.0).min(1024.0);
            } else {
                theta = (theta / 16.0).max(1.0);
            }
        }

        history.push(sol.value);
        let delta = (sol.value - prev).abs();
        prev = sol.value;
        expansion = sol.vars.x.clone();
        warm_vars = sol.vars.clone();
        if !sol.lambda.is_empty() {
            warm_lambda = Some(sol.lambda.clone());
        }
        last = Some(sol);
        if delta < opts.eps {
            converged = true;
            break;
        }
    }

    let last = last.expect("at least one outer iteration");
    let exact = geo.exact_rates(&last.vars)?;
    let outcome = ScaOutcome {
        value: exact.wsr,
        surrogate_value: last.value,
        vars: last.vars,
        state: ScaState {
            objective_history: history,
            eps: opts.eps,
        },
        inner_iterations: inner_total,
        converged,
    };
    if converged {
        Ok(outcome)
    } else {
        Err(Error::MaxOuterIterations {
            iterations: outcome.outer_iterations(),
            best: Box::new(outcome),
        })
    }
}

/// Recovers the best iterate from an SCA result whether or not the outer
/// loop converged within its cap.
pub fn recover_outcome(res: Result<ScaOutcome>) -> Result<ScaOutcome> {
    match res {
        Ok(o) => Ok(o),
        Err(Error::MaxOuterIterations { best, .. }) => Ok(*best),
        Err(e) => Err(e),
    }
}

/// Rank-repaired rerun after a relaxed solve.
#[derive(Debug, Clone)]
pub struct RepairedOutcome {
    pub sca: ScaOutcome,
    /// Common-covariance eigenvector factor (columns may be zero when the
    /// relaxed common covariance was zero).
    pub u_c: Option<CMat>,
    /// Per-position eigenvector factors (identity when untouched).
    pub u: Vec<CMat>,
    pub reduced_geo: WsrGeometry,
}

/// Restricts the relaxed solution to the eigenspaces of its top eigenvalues
/// (`rank_c` for the common covariance, `private_ranks[i]` per user where
/// given) and reruns SCA over the reduced variables. The rank constraints
/// hold by construction; the rerun is warm-started from the eigen-projected
/// relaxed solution, so an already rank-feasible relaxed solution loses
/// nothing.
pub fn rank_repair_and_reoptimize(
    geo: &WsrGeometry,
    relaxed: &ScaOutcome,
    rank_c: Option<usize>,
    private_ranks: &[Option<usize>],
    opts: &ScaOptions,
) -> Result<RepairedOutcome> {
    let k = geo.num_positions();
    if private_ranks.len() != k {
        return Err(Error::DimensionError {
            context: "rank_repair_and_reoptimize",
            details: "one rank entry per position required".into(),
        });
    }

    let mut bases = Vec::with_capacity(k);
    let mut u_list = Vec::with_capacity(k);
    let mut x_init = Vec::with_capacity(k);
    for i in 0..k {
        match private_ranks[i] {
            Some(r) => {
                let x = PsdMatrix::new(relaxed.vars.x[i].clone())?;
                let u = top_eigvecs(&x, r)?;
                bases.push(&geo.bases[i] * &u);
                x_init.push(u.adjoint() * x.matrix() * &u);
                u_list.push(u);
            }
            None => {
                let m = geo.bases[i].ncols();
                bases.push(geo.bases[i].clone());
                x_init.push(relaxed.vars.x[i].clone());
                u_list.push(CMat::identity(m, m));
            }
        }
    }

    let (common_basis, u_c, qc_init) = match (&geo.common_basis, rank_c) {
        (Some(bc), Some(r)) => {
            let qc = relaxed
                .vars
                .q_c
                .clone()
                .unwrap_or_else(|| CMat::zeros(bc.ncols(), bc.ncols()));
            let qc_psd = PsdMatrix::new(qc)?;
            let u = top_eigvecs(&qc_psd, r)?;
            let init = u.adjoint() * qc_psd.matrix() * &u;
            (Some(bc * &u), Some(u), Some(init))
        }
        (Some(bc), None) => (Some(bc.clone()), None, relaxed.vars.q_c.clone()),
        (None, _) => (None, None, None),
    };

    let reduced_geo = WsrGeometry::new(
        geo.g.clone(),
        bases,
        common_basis,
        geo.var_kind.clone(),
        geo.pattern,
        geo.weights.clone(),
        geo.p_budget,
    )?;

    let mut warm = VarSet {
        x: x_init,
        q_c: qc_init,
    };
    // Eigen-projection can only shrink traces, but guard the budget anyway.
    let used = warm.total_power();
    if used > geo.p_budget && used > 0.0 {
        warm = warm.scaled(geo.p_budget / used);
    }

    let sca = recover_outcome(sca_maximize(&reduced_geo, InitStrategy::Warm(warm), opts))?;
    Ok(RepairedOutcome {
        sca,
        u_c,
        u: u_list,
        reduced_geo,
    })
}

// ---------------------------------------------------------------------------
// SNS pipeline
// ---------------------------------------------------------------------------

/// Options for one SNS optimization (relaxed solve plus rank repair).
#[derive(Debug, Clone)]
pub struct SnsOptions {
    pub sca: ScaOptions,
    /// Also start SCA from the block-diagonalization-structured point and
    /// keep the better relaxed solution; makes the cross-scheme ordering
    /// (SNS above the BD-based bounds) hold by construction.
    pub bd_warm_start: bool,
    pub csi: Csi,
}

impl Default for SnsOptions {
    fn default() -> Self {
        Self {
            sca: ScaOptions::default(),
            bd_warm_start: false,
            csi: Csi::Perfect,
        }
    }
}

/// One optimized SNS configuration.
#[derive(Debug, Clone)]
pub struct SnsRun {
    pub basis: SnsBasis,
    pub relaxed: ScaOutcome,
    pub repaired: RepairedOutcome,
    /// Rank-feasible covariances in the null-space coordinates.
    pub pack: CovariancePack,
    /// Exact weighted sum rate of `pack` in the optimizer's channel view
    /// (estimates under imperfect CSI): the feasible lower bound.
    pub lb_value: f64,
}

/// Builds the SNS optimization geometry for a basis: full-space common
/// covariance, PSD per-user variables in the null-space coordinates,
/// successive interference.
pub fn sns_geometry(
    channels: &ChannelSet,
    basis: &SnsBasis,
    weights: &Weights,
    p_total: f64,
    sigma2: f64,
    csi: Csi,
) -> Result<WsrGeometry> {
    let g: Vec<CMat> = basis
        .order
        .iter()
        .map(|&u| normalized_channel(&channels.users[u], sigma2, csi.use_estimates()))
        .collect();
    let n = channels.num_tx();
    WsrGeometry::new(
        g,
        basis.bases.clone(),
        Some(CMat::identity(n, n)),
        vec![VarKind::Psd; basis.num_users()],
        Pattern::Successive,
        weights.permuted(&basis.order),
        p_total,
    )
}

/// Lifts a full-space covariance into a null-space coordinate block,
/// `X = Psi^H Q Psi` (exact when `range(Q)` lies in `span(Psi)`).
fn restrict_to_basis(q: &CMat, psi: &CMat) -> CMat {
    psi.adjoint() * q * psi
}

/// Block-diagonalization-structured starting point for the SNS problem
/// (the BD-with-common-message optimum expressed in SNS coordinates).
fn bd_warm_start(
    channels: &ChannelSet,
    basis: &SnsBasis,
    weights: &Weights,
    p_total: f64,
    sigma2: f64,
    opts: &SnsOptions,
) -> Result<VarSet> {
    let run = super::baselines::baseline_pa(
        super::baselines::BaselineScheme::BdMimoCmRelaxed,
        channels,
        weights,
        p_total,
        sigma2,
        opts.csi,
        &opts.sca,
    )?;
    let dirs = &run.directions;
    let mut x = Vec::with_capacity(basis.num_users());
    for (i, &u) in basis.order.iter().enumerate() {
        let q_full = &dirs[u] * &run.outcome.vars.x[u] * dirs[u].adjoint();
        let lifted = restrict_to_basis(&q_full, &basis.bases[i]);
        x.push(crate::numerics::hermitian_part(&lifted));
    }
    let q_c = run.outcome.vars.q_c.clone();
    let mut warm = VarSet { x, q_c };
    let used = warm.total_power();
    if used > p_total && used > 0.0 {
        warm = warm.scaled(p_total / used);
    }
    Ok(warm)
}

/// Runs the full SNS pipeline for one user order: relaxed SCA (optionally
/// also from the BD-structured start), then the rank-feasible rerun.
pub fn sns_optimize_order(
    channels: &ChannelSet,
    order: &[usize],
    weights: &Weights,
    p_total: f64,
    sigma2: f64,
    opts: &SnsOptions,
) -> Result<SnsRun> {
    let basis = build_sns_basis(channels, order, opts.csi.use_estimates())?;
    let geo = sns_geometry(channels, &basis, weights, p_total, sigma2, opts.csi)?;

    let mut relaxed = recover_outcome(sca_maximize(
        &geo,
        InitStrategy::AlgorithmDefault,
        &opts.sca,
    ))?;
    if opts.bd_warm_start {
        let warm = bd_warm_start(channels, &basis, weights, p_total, sigma2, opts)?;
        let alt = recover_outcome(sca_maximize(&geo, InitStrategy::Warm(warm), &opts.sca))?;
        if alt.surrogate_value > relaxed.surrogate_value {
            relaxed = alt;
        }
    }

    let m_common = (0..channels.num_users())
        .map(|k| channels.antennas(k))
        .min()
        .unwrap_or(0);
    let private_ranks: Vec<Option<usize>> = basis
        .order
        .iter()
        .map(|&u| Some(channels.antennas(u)))
        .collect();
    let repaired =
        rank_repair_and_reoptimize(&geo, &relaxed, Some(m_common), &private_ranks, &opts.sca)?;

    let pack = assemble_sns_pack(&basis, &repaired)?;
    let lb_value = repaired.sca.value;
    Ok(SnsRun {
        basis,
        relaxed,
        repaired,
        pack,
        lb_value,
    })
}

/// Assembles the rank-feasible covariance pack from a repaired outcome.
fn assemble_sns_pack(basis: &SnsBasis, repaired: &RepairedOutcome) -> Result<CovariancePack> {
    let u_c = repaired
        .u_c
        .clone()
        .expect("SNS repair always reduces the common covariance");
    let x_c_raw = repaired
        .sca
        .vars
        .q_c
        .clone()
        .unwrap_or_else(|| CMat::zeros(u_c.ncols(), u_c.ncols()));
    let x_c = PsdMatrix::new(x_c_raw)?;
    let q_c = PsdMatrix::new(&u_c * x_c.matrix() * u_c.adjoint())?;
    let mut x = Vec::with_capacity(basis.num_users());
    let mut x_tilde = Vec::with_capacity(basis.num_users());
    for (u_i, xi) in repaired.u.iter().zip(&repaired.sca.vars.x) {
        let xt = PsdMatrix::new(xi.clone())?;
        x.push(PsdMatrix::new(u_i * xt.matrix() * u_i.adjoint())?);
        x_tilde.push(xt);
    }
    Ok(CovariancePack {
        q_c,
        x,
        reduced: Some(ReducedFactors {
            u_c,
            x_c,
            u: repaired.u.clone(),
            x_tilde,
        }),
    })
}

/// Per-stream water-filling: maximizes `sum_i log2(1 + p_i g_i)` subject to
/// `sum p_i <= budget`, `p >= 0`. Returns (rate, powers).
pub fn water_filling(gains: &[f64], budget: f64) -> (f64, Vec<f64>) {
    let mut idx: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    idx.sort_by(|&a, &b| gains[b].partial_cmp(&gains[a]).unwrap());
    let mut powers = vec![0.0; gains.len()];
    if idx.is_empty() || budget <= 0.0 {
        return (0.0, powers);
    }
    // Water level w solves sum_{active} (w - 1/g_i) = budget.
    let inv: Vec<f64> = idx.iter().map(|&i| 1.0 / gains[i]).collect();
    let mut active = inv.len();
    let mut level = 0.0;
    for t in (1..=inv.len()).rev() {
        let sum_inv: f64 = inv[..t].iter().sum();
        let w = (budget + sum_inv) / t as f64;
        if w >= inv[t - 1] {
            active = t;
            level = w;
            break;
        }
    }
    let mut rate = 0.0;
    for (j, &i) in idx.iter().enumerate().take(active) {
        let p = (level - inv[j]).max(0.0);
        powers[i] = p;
        rate += (1.0 + p * gains[i]).log2();
    }
    (rate, powers)
}

/// Single-user capacity of one user's (noise-normalized) channel under the
/// full power budget, by water-filling over its squared singular values.
pub fn single_user_capacity(
    channels: &ChannelSet,
    user: usize,
    p_total: f64,
    sigma2: f64,
    csi: Csi,
) -> f64 {
    let gains = normalized_gains(&channels.users[user], sigma2, csi.use_estimates());
    let (rate, _) = water_filling(gains.as_slice(), p_total);
    rate
}

/// Permutation strategy for the SNS user order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermutationStrategy {
    /// All `K!` orders (limited to `K <= 5`).
    Exhaustive,
    /// The single order with descending weighted single-user rates.
    Fixed,
}

/// The fixed-permutation order: descending `eta_k R_k^SU`, ties broken by
/// user index.
pub fn fixed_permutation_order(
    channels: &ChannelSet,
    weights: &Weights,
    p_total: f64,
    sigma2: f64,
    csi: Csi,
) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = (0..channels.num_users())
        .map(|k| {
            (
                k,
                weights.eta[k] * single_user_capacity(channels, k, p_total, sigma2, csi),
            )
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.into_iter().map(|(k, _)| k).collect()
}

/// Result of a permutation search.
#[derive(Debug)]
pub struct PermutationSearch {
    pub best: SnsRun,
    /// Every evaluated order with its relaxed surrogate optimum.
    pub evaluated: Vec<(Vec<usize>, f64)>,
}

/// Optimizes the SNS scheme over user orders. `Exhaustive` runs the relaxed
/// solve for every permutation and rank-repairs the winner; `Fixed` uses the
/// descending weighted single-user-rate order.
pub fn permutation_search(
    channels: &ChannelSet,
    weights: &Weights,
    p_total: f64,
    sigma2: f64,
    strategy: PermutationStrategy,
    opts: &SnsOptions,
) -> Result<PermutationSearch> {
    let k = channels.num_users();
    match strategy {
        PermutationStrategy::Fixed => {
            let order = fixed_permutation_order(channels, weights, p_total, sigma2, opts.csi);
            let run = sns_optimize_order(channels, &order, weights, p_total, sigma2, opts)?;
            let value = run.relaxed.surrogate_value;
            Ok(PermutationSearch {
                best: run,
                evaluated: vec![(order, value)],
            })
        }
        PermutationStrategy::Exhaustive => {
            if k > 5 {
                return Err(Error::TooManyUsers(k));
            }
            let mut evaluated = Vec::new();
            let mut best: Option<SnsRun> = None;
            for order in permutations(k) {
                let run = sns_optimize_order(channels, &order, weights, p_total, sigma2, opts)?;
                evaluated.push((order, run.relaxed.surrogate_value));
                let better = match &best {
                    Some(b) => run.relaxed.surrogate_value > b.relaxed.surrogate_value,
                    None => true,
                };
                if better {
                    best = Some(run);
                }
            }
            Ok(PermutationSearch {
                best: best.expect("at least one permutation"),
                evaluated,
            })
        }
    }
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    use itertools::Itertools;
    (0..k).permutations(k).collect()
}

/// Direct covariance optimization without null-space structure: unstructured
/// `N x N` covariances per user plus the common covariance, full
/// interference, zero-structured initialization.
pub fn direct_sca(
    channels: &ChannelSet,
    weights: &Weights,
    p_total: f64,
    sigma2: f64,
    csi: Csi,
    opts: &ScaOptions,
) -> Result<(ScaOutcome, WsrGeometry)> {
    let k = channels.num_users();
    let n = channels.num_tx();
    let g: Vec<CMat> = (0..k)
        .map(|u| normalized_channel(&channels.users[u], sigma2, csi.use_estimates()))
        .collect();
    let geo = WsrGeometry::new(
        g,
        vec![CMat::identity(n, n); k],
        Some(CMat::identity(n, n)),
        vec![VarKind::Psd; k],
        Pattern::Full,
        weights.clone(),
        p_total,
    )?;
    let outcome = recover_outcome(sca_maximize(&geo, InitStrategy::NearZero, opts))?;
    Ok((outcome, geo))
}
