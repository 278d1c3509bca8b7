//! Successive null-space precoder structure and exact rate evaluation.
//!
//! User `k`'s private precoder is `Psi_k X_k^{1/2}`, where the columns of
//! `Psi_k` span the null space of the stacked channels of the users that
//! precede `k` in the chosen order (`Psi_1 = I_N`). Symbols precoded this way
//! cause no interference to earlier users, so under perfect CSI user `k`'s
//! private stream sees interference only from users before it; the common
//! stream is decoded first at every user and sees all private streams up to
//! and including the user's own.
//!
//! Under imperfect CSI the bases are built from the channel estimates, every
//! user interferes with every other, and the same covariances can be
//! evaluated either against the true channels (deployed performance) or
//! against the estimates (the optimizer's surrogate objective).
//!
//! Rates are in bits per channel use (base-2 logs throughout the public
//! surface; solver-internal gradients are in nats with a single `ln 2`
//! conversion).

use num_complex::Complex64;

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::numerics::{
    ensure_finite, hermitian_part, log2_det_hpd, null_space_basis, CMat, PsdMatrix,
};

/// Which channel matrices an evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalChannel {
    /// The true channels: deployed performance under imperfect CSI.
    TrueH,
    /// The estimates: the objective the base station can actually compute.
    EstimatedH,
}

/// Interference structure of a rate evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// Perfect-CSI successive structure: user at position `i` sees private
    /// interference from positions `< i` and common-decode interference from
    /// positions `<= i`.
    Successive,
    /// All cross terms: private interference from every other user, common
    /// interference from everyone (imperfect CSI, or baselines without
    /// null-space structure).
    Full,
}

/// Rate weights: per-user weights `eta_k` and common-message shares
/// `eta_{c,k}`, each on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub eta: Vec<f64>,
    pub eta_c: Vec<f64>,
}

const SIMPLEX_TOL: f64 = 1e-12;

impl Weights {
    pub fn new(eta: Vec<f64>, eta_c: Vec<f64>) -> Result<Self> {
        if eta.len() != eta_c.len() {
            return Err(Error::WeightError(format!(
                "eta has {} entries, eta_c has {}",
                eta.len(),
                eta_c.len()
            )));
        }
        for (name, v) in [("eta", &eta), ("eta_c", &eta_c)] {
            if v.iter().any(|&w| !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&w)) {
                return Err(Error::WeightError(format!("{name} entries must lie in [0, 1]")));
            }
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::WeightError(format!("{name} sums to {sum}, expected 1")));
            }
        }
        Ok(Self { eta, eta_c })
    }

    /// Equal weights with the convention `eta_{c,k} = eta_k`.
    pub fn equal(k: usize) -> Self {
        let w = vec![1.0 / k as f64; k];
        Self {
            eta: w.clone(),
            eta_c: w,
        }
    }

    /// Weights with the default common-share convention `eta_{c,k} = eta_k`.
    pub fn from_eta(eta: Vec<f64>) -> Result<Self> {
        let eta_c = eta.clone();
        Self::new(eta, eta_c)
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    /// Coefficient of the common rate in the weighted sum rate,
    /// `sum_k eta_k eta_{c,k}`.
    pub fn common_coeff(&self) -> f64 {
        self.eta.iter().zip(&self.eta_c).map(|(a, b)| a * b).sum()
    }

    /// Reorders both weight vectors into position space for a user order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            eta: order.iter().map(|&k| self.eta[k]).collect(),
            eta_c: order.iter().map(|&k| self.eta_c[k]).collect(),
        }
    }
}

/// Successive null-space basis for one user order.
///
/// Position `i` (0-based) holds the augmented matrix `F_i` stacking the
/// channels of positions `0..i` and the orthonormal basis `Psi_i` of its
/// null space (`Psi_0 = I_N`).
#[derive(Debug, Clone, PartialEq)]
pub struct SnsBasis {
    /// User ids by position: `order[i]` is the `i`-th precoded user.
    pub order: Vec<usize>,
    /// `F_i`, size `(sum_{j<i} M_j) x N`.
    pub augmented: Vec<CMat>,
    /// `Psi_i`, size `N x N_i` with `N_i = N - sum_{j<i} M_j`.
    pub bases: Vec<CMat>,
    /// Whether the basis was built from channel estimates.
    pub from_estimates: bool,
}

impl SnsBasis {
    pub fn num_users(&self) -> usize {
        self.order.len()
    }

    /// Null-space dimension `N_i` at position `i`.
    pub fn dim_at(&self, i: usize) -> usize {
        self.bases[i].ncols()
    }
}

/// Validates that `order` is a permutation of `0..k`.
pub fn validate_order(order: &[usize], k: usize) -> Result<()> {
    if order.len() != k {
        return Err(Error::Validation(format!(
            "order has {} entries for {k} users",
            order.len()
        )));
    }
    let mut seen = vec![false; k];
    for &u in order {
        if u >= k || seen[u] {
            return Err(Error::Validation(format!("order is not a permutation: {order:?}")));
        }
        seen[u] = true;
    }
    Ok(())
}

/// Builds the successive null-space basis for a user order, from the true
/// channels or from the estimates.
pub fn build_sns_basis(
    channels: &ChannelSet,
    order: &[usize],
    use_estimates: bool,
) -> Result<SnsBasis> {
    let k = channels.num_users();
    validate_order(order, k)?;
    let mut augmented = Vec::with_capacity(k);
    let mut bases = Vec::with_capacity(k);
    for i in 0..k {
        let f = channels.stack(&order[..i], use_estimates);
        let psi = null_space_basis(&f)?;
        augmented.push(f);
        bases.push(psi);
    }
    Ok(SnsBasis {
        order: order.to_vec(),
        augmented,
        bases,
        from_estimates: use_estimates,
    })
}

/// Optimization variables: the common covariance and per-position combining
/// matrices, optionally with the rank-constrained factors they were
/// assembled from.
#[derive(Debug, Clone)]
pub struct CovariancePack {
    /// Common covariance `Q_c`, `N x N`.
    pub q_c: PsdMatrix,
    /// `X_i`, `N_i x N_i`, by position.
    pub x: Vec<PsdMatrix>,
    /// Present iff the pack came from the rank-feasible reformulation; then
    /// `q_c = u_c x_c u_c^H` and `x[i] = u[i] x_tilde[i] u[i]^H` exactly.
    pub reduced: Option<ReducedFactors>,
}

/// Eigenvector factors of the rank-feasible reformulation.
#[derive(Debug, Clone)]
pub struct ReducedFactors {
    pub u_c: CMat,
    pub x_c: PsdMatrix,
    pub u: Vec<CMat>,
    pub x_tilde: Vec<PsdMatrix>,
}

impl CovariancePack {
    /// Total allocated power `tr(Q_c) + sum_i tr(X_i)`.
    pub fn total_power(&self) -> f64 {
        self.q_c.trace() + self.x.iter().map(PsdMatrix::trace).sum::<f64>()
    }

    /// Checks the power budget within a relative slack of 1e-8.
    pub fn check_budget(&self, p_total: f64) -> Result<()> {
        let used = self.total_power();
        if used <= p_total * (1.0 + 1e-8) + 1e-15 {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "covariance pack uses {used} mW of a {p_total} mW budget"
            )))
        }
    }

    pub fn zeros(n: usize, dims: &[usize]) -> Self {
        Self {
            q_c: PsdMatrix::zeros(n),
            x: dims.iter().map(|&d| PsdMatrix::zeros(d)).collect(),
            reduced: None,
        }
    }
}

/// Achieved rates for one covariance pack, reported per user id.
#[derive(Debug, Clone)]
pub struct RateReport {
    /// The user order the pack was built for.
    pub order: Vec<usize>,
    /// Private rates `R_k`, indexed by user id, bits/channel use.
    pub private: Vec<f64>,
    /// Per-user common-message rates `R_{k,c}`, indexed by user id.
    pub common_per_user: Vec<f64>,
    /// `R_c = min_k R_{k,c}`.
    pub common: f64,
    /// Weighted sum rate.
    pub wsr: f64,
    pub weights: Weights,
}

impl RateReport {
    /// Total rate of user `k`: private plus its share of the common message.
    pub fn user_total(&self, k: usize) -> f64 {
        self.private[k] + self.weights.eta_c[k] * self.common
    }

    pub fn sum_rate(&self) -> f64 {
        self.private.iter().sum::<f64>() + self.common
    }
}

// ---------------------------------------------------------------------------
// Rate engine
// ---------------------------------------------------------------------------

/// Shared exact-rate evaluator, in position space.
///
/// `g[i]` is the noise-normalized channel of the user at position `i`
/// (`H / sqrt(L sigma2)`); `basis[i]` maps that position's variable into the
/// transmit space; the optional common basis does the same for the common
/// covariance. All rate formulas reduce to `log2 det(B + S) - log2 det(B)`
/// with `B = I + (interference)` and `S` the signal term; the evaluation
/// order is fixed: form the interference covariance, Cholesky it, whiten the
/// signal term, and take the log-det of the whitened matrix via Cholesky.
#[derive(Debug, Clone)]
pub struct RateEngine {
    /// `E[i][j] = G_i * basis_j`: position `i`'s view of position `j`'s
    /// signal space.
    e: Vec<Vec<CMat>>,
    /// `G_i * common_basis`, when a common message exists.
    e_c: Option<Vec<CMat>>,
    pattern: Pattern,
    rx: Vec<usize>,
}

impl RateEngine {
    pub fn new(g: Vec<CMat>, bases: &[CMat], common_basis: Option<&CMat>, pattern: Pattern) -> Self {
        let k = g.len();
        assert_eq!(bases.len(), k);
        let e: Vec<Vec<CMat>> = g
            .iter()
            .map(|gi| bases.iter().map(|b| gi * b).collect())
            .collect();
        let e_c = common_basis.map(|bc| g.iter().map(|gi| gi * bc).collect());
        let rx = g.iter().map(|gi| gi.nrows()).collect();
        Self { e, e_c, pattern, rx }
    }

    pub fn num_positions(&self) -> usize {
        self.e.len()
    }

    pub fn has_common(&self) -> bool {
        self.e_c.is_some()
    }

    pub fn pattern(&self) -> Pattern {
        self.pattern
    }

    pub fn effective(&self, i: usize, j: usize) -> &CMat {
        &self.e[i][j]
    }

    pub fn effective_common(&self, i: usize) -> &CMat {
        &self.e_c.as_ref().expect("engine has no common basis")[i]
    }

    fn private_interferers(&self, i: usize) -> Vec<usize> {
        match self.pattern {
            Pattern::Successive => (0..i).collect(),
            Pattern::Full => (0..self.num_positions()).filter(|&j| j != i).collect(),
        }
    }

    fn common_interferers(&self, i: usize) -> Vec<usize> {
        match self.pattern {
            Pattern::Successive => (0..=i).collect(),
            Pattern::Full => (0..self.num_positions()).collect(),
        }
    }

    /// `I + sum_{j in set} E_ij X_j E_ij^H`.
    pub fn interference_matrix(&self, i: usize, set: &[usize], x: &[CMat]) -> CMat {
        let m = self.rx[i];
        let mut b = CMat::identity(m, m);
        for &j in set {
            let eij = &self.e[i][j];
            b += eij * &x[j] * eij.adjoint();
        }
        b
    }

    fn rate_term(&self, signal: &CMat, b: &CMat, context: &'static str) -> Result<f64> {
        let m = b.nrows();
        let herm_b = hermitian_part(b);
        let chol = match herm_b.clone().cholesky() {
            Some(c) => c,
            None => {
                let jitter = 1e-12 * herm_b.trace().re.abs().max(1e-300);
                (herm_b + CMat::identity(m, m) * Complex64::new(jitter, 0.0))
                    .cholesky()
                    .ok_or(Error::NumericalFailure(context))?
            }
        };
        let l = chol.l();
        let y = l
            .solve_lower_triangular(signal)
            .ok_or(Error::NumericalFailure(context))?;
        let w = l
            .solve_lower_triangular(&y.adjoint())
            .ok_or(Error::NumericalFailure(context))?;
        let inner = CMat::identity(m, m) + hermitian_part(&w);
        log2_det_hpd(&inner, context)
    }

    /// Private rate at position `i` for raw covariance matrices `x`.
    pub fn private_rate_raw(&self, i: usize, x: &[CMat]) -> Result<f64> {
        let eii = &self.e[i][i];
        let signal = eii * &x[i] * eii.adjoint();
        let b = self.interference_matrix(i, &self.private_interferers(i), x);
        self.rate_term(&signal, &b, "private_rate")
    }

    /// Common-message rate at position `i`.
    pub fn common_rate_raw(&self, i: usize, x: &[CMat], q_c: &CMat) -> Result<f64> {
        let Some(e_c) = &self.e_c else {
            return Ok(0.0);
        };
        let ec = &e_c[i];
        let signal = ec * q_c * ec.adjoint();
        let b = self.interference_matrix(i, &self.common_interferers(i), x);
        self.rate_term(&signal, &b, "common_rate")
    }

    /// All rates plus the weighted sum rate, with weights in position space.
    pub fn evaluate(&self, x: &[CMat], q_c: &CMat, weights: &Weights) -> Result<PositionRates> {
        let k = self.num_positions();
        let mut private = Vec::with_capacity(k);
        let mut common = Vec::with_capacity(k);
        for i in 0..k {
            private.push(self.private_rate_raw(i, x)?);
            common.push(self.common_rate_raw(i, x, q_c)?);
        }
        let r_c = if self.has_common() {
            common.iter().cloned().fold(f64::INFINITY, f64::min)
        } else {
            0.0
        };
        let wsr = weights.common_coeff() * r_c
            + weights
                .eta
                .iter()
                .zip(&private)
                .map(|(w, r)| w * r)
                .sum::<f64>();
        Ok(PositionRates {
            private,
            common,
            r_c,
            wsr,
        })
    }
}

/// Rates in position space (before mapping back to user ids).
#[derive(Debug, Clone)]
pub struct PositionRates {
    pub private: Vec<f64>,
    pub common: Vec<f64>,
    pub r_c: f64,
    pub wsr: f64,
}

/// Builds the engine for the perfect-CSI successive structure of a basis.
fn engine_for(
    channels: &ChannelSet,
    basis: &SnsBasis,
    sigma2: f64,
    eval: EvalChannel,
    pattern: Pattern,
) -> RateEngine {
    let g: Vec<CMat> = basis
        .order
        .iter()
        .map(|&k| {
            crate::channel::normalized_channel(
                &channels.users[k],
                sigma2,
                matches!(eval, EvalChannel::EstimatedH),
            )
        })
        .collect();
    let n = channels.num_tx();
    let common = CMat::identity(n, n);
    RateEngine::new(g, &basis.bases, Some(&common), pattern)
}

fn raw_x(pack: &CovariancePack) -> Vec<CMat> {
    pack.x.iter().map(|x| x.matrix().clone()).collect()
}

fn check_pack_dims(basis: &SnsBasis, pack: &CovariancePack) -> Result<()> {
    if pack.x.len() != basis.num_users() {
        return Err(Error::DimensionError {
            context: "rates",
            details: format!(
                "pack has {} covariances for {} users",
                pack.x.len(),
                basis.num_users()
            ),
        });
    }
    for (i, x) in pack.x.iter().enumerate() {
        if x.dim() != basis.dim_at(i) {
            return Err(Error::DimensionError {
                context: "rates",
                details: format!(
                    "X at position {i} is {}x{} but the basis has {} columns",
                    x.dim(),
                    x.dim(),
                    basis.dim_at(i)
                ),
            });
        }
    }
    Ok(())
}

/// Private rate of the user at position `k` of the order (bits/channel use),
/// under the perfect-CSI successive structure.
pub fn private_rate(
    channels: &ChannelSet,
    basis: &SnsBasis,
    pack: &CovariancePack,
    k: usize,
    sigma2: f64,
) -> Result<f64> {
    check_pack_dims(basis, pack)?;
    ensure_finite(pack.q_c.matrix(), "private_rate")?;
    let engine = engine_for(channels, basis, sigma2, EvalChannel::TrueH, Pattern::Successive);
    engine.private_rate_raw(k, &raw_x(pack))
}

/// Common-message rate achievable at position `k` (bits/channel use).
pub fn common_rate_per_user(
    channels: &ChannelSet,
    basis: &SnsBasis,
    pack: &CovariancePack,
    k: usize,
    sigma2: f64,
) -> Result<f64> {
    check_pack_dims(basis, pack)?;
    let engine = engine_for(channels, basis, sigma2, EvalChannel::TrueH, Pattern::Successive);
    engine.common_rate_raw(k, &raw_x(pack), pack.q_c.matrix())
}

fn assemble_report(
    basis: &SnsBasis,
    weights: &Weights,
    pos: PositionRates,
) -> RateReport {
    let k = basis.num_users();
    let mut private = vec![0.0; k];
    let mut common_per_user = vec![0.0; k];
    for (i, &u) in basis.order.iter().enumerate() {
        private[u] = pos.private[i];
        common_per_user[u] = pos.common[i];
    }
    RateReport {
        order: basis.order.clone(),
        private,
        common_per_user,
        common: pos.r_c,
        wsr: pos.wsr,
        weights: weights.clone(),
    }
}

/// Exact perfect-CSI rates and weighted sum rate for a covariance pack.
pub fn wsr(
    channels: &ChannelSet,
    basis: &SnsBasis,
    pack: &CovariancePack,
    sigma2: f64,
    weights: &Weights,
) -> Result<RateReport> {
    if weights.len() != basis.num_users() {
        return Err(Error::WeightError(format!(
            "{} weights for {} users",
            weights.len(),
            basis.num_users()
        )));
    }
    check_pack_dims(basis, pack)?;
    let engine = engine_for(channels, basis, sigma2, EvalChannel::TrueH, Pattern::Successive);
    let pos = engine.evaluate(&raw_x(pack), pack.q_c.matrix(), &weights.permuted(&basis.order))?;
    Ok(assemble_report(basis, weights, pos))
}

/// Rates under imperfect CSI: the precoders come from an estimated basis and
/// every user interferes with every other. `TrueH` evaluates deployed
/// performance; `EstimatedH` evaluates the surrogate the optimizer sees
/// (identical formulas with the estimates in place of the true channels).
pub fn imperfect_rates(
    channels: &ChannelSet,
    basis: &SnsBasis,
    pack: &CovariancePack,
    sigma2: f64,
    evaluate_with: EvalChannel,
    weights: &Weights,
) -> Result<RateReport> {
    if !basis.from_estimates {
        return Err(Error::Validation(
            "imperfect_rates requires a basis built from channel estimates".into(),
        ));
    }
    check_pack_dims(basis, pack)?;
    let engine = engine_for(channels, basis, sigma2, evaluate_with, Pattern::Full);
    let pos = engine.evaluate(&raw_x(pack), pack.q_c.matrix(), &weights.permuted(&basis.order))?;
    Ok(assemble_report(basis, weights, pos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_iid_gaussian, trial_seed, UserGeometry};
    use crate::numerics::spectral_norm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn geoms(ms: &[usize], d: f64) -> Vec<UserGeometry> {
        ms.iter()
            .map(|&m| UserGeometry::new(d, 0.0, m).unwrap())
            .collect()
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> PsdMatrix {
        let g = CMat::from_fn(n, n, |_, _| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re, im)
        });
        PsdMatrix::new(&g * g.adjoint() * Complex64::new(scale, 0.0)).unwrap()
    }

    fn random_pack(rng: &mut ChaCha8Rng, basis: &SnsBasis, n: usize, p_total: f64) -> CovariancePack {
        let k = basis.num_users();
        let mut q_c = random_psd(rng, n, 1.0);
        let mut x: Vec<PsdMatrix> = (0..k)
            .map(|i| random_psd(rng, basis.dim_at(i), 1.0))
            .collect();
        let used = q_c.trace() + x.iter().map(PsdMatrix::trace).sum::<f64>();
        let scale = p_total / used;
        q_c = PsdMatrix::new(q_c.matrix() * Complex64::new(scale, 0.0)).unwrap();
        for xi in &mut x {
            *xi = PsdMatrix::new(xi.matrix() * Complex64::new(scale, 0.0)).unwrap();
        }
        CovariancePack { q_c, x, reduced: None }
    }

    /// Naive-inverse oracle for the rate formulas: forms the interference
    /// matrix explicitly, inverts it, and takes `log2 det` directly.
    fn rate_naive(signal: &CMat, interference: &CMat) -> f64 {
        let binv = interference.clone().try_inverse().unwrap();
        let m = signal.nrows();
        (CMat::identity(m, m) + signal * binv)
            .determinant()
            .re
            .log2()
    }

    fn naive_private(
        channels: &ChannelSet,
        basis: &SnsBasis,
        pack: &CovariancePack,
        i: usize,
        sigma2: f64,
        pattern: Pattern,
        eval: EvalChannel,
    ) -> f64 {
        let engine = engine_for(channels, basis, sigma2, eval, pattern);
        let x = raw_x(pack);
        let set = engine.private_interferers(i);
        let eii = engine.effective(i, i).clone();
        let signal = &eii * &x[i] * eii.adjoint();
        let b = engine.interference_matrix(i, &set, &x);
        rate_naive(&signal, &b)
    }

    fn naive_common(
        channels: &ChannelSet,
        basis: &SnsBasis,
        pack: &CovariancePack,
        i: usize,
        sigma2: f64,
        pattern: Pattern,
        eval: EvalChannel,
    ) -> f64 {
        let engine = engine_for(channels, basis, sigma2, eval, pattern);
        let x = raw_x(pack);
        let set = engine.common_interferers(i);
        let ec = engine.effective_common(i).clone();
        let signal = &ec * pack.q_c.matrix() * ec.adjoint();
        let b = engine.interference_matrix(i, &set, &x);
        rate_naive(&signal, &b)
    }

    #[test]
    fn basis_convention_k1_identity() {
        let g = geoms(&[2], 10.0);
        let ch = draw_iid_gaussian(&g, 4, &[0.0], 1).unwrap();
        let basis = build_sns_basis(&ch, &[0], false).unwrap();
        assert_eq!(basis.bases[0], CMat::identity(4, 4));
    }

    #[test]
    fn later_users_cause_no_iui_to_earlier() {
        let g = geoms(&[1, 1, 1], 10.0);
        let ch = draw_iid_gaussian(&g, 3, &[0.0, 0.0, 0.0], 2).unwrap();
        let basis = build_sns_basis(&ch, &[0, 1, 2], false).unwrap();
        for later in 0..3usize {
            for earlier in 0..later {
                let h = &ch.users[basis.order[earlier]].h;
                let leak = spectral_norm(&(h * &basis.bases[later]));
                assert!(leak <= 1e-9 * spectral_norm(h).max(1.0));
            }
        }
    }

    #[test]
    fn estimated_basis_leaks_against_true_channel() {
        let g = geoms(&[2, 2], 10.0);
        let ch = draw_iid_gaussian(&g, 6, &[0.3, 0.3], 3).unwrap();
        let basis = build_sns_basis(&ch, &[0, 1], true).unwrap();
        let h0 = &ch.users[0].h;
        assert!(spectral_norm(&(h0 * &basis.bases[1])) > 1e-6);
    }

    #[test]
    fn zero_covariance_gives_zero_rate() {
        let g = geoms(&[2, 2], 50.0);
        let ch = draw_iid_gaussian(&g, 5, &[0.0, 0.0], 4).unwrap();
        let basis = build_sns_basis(&ch, &[0, 1], false).unwrap();
        let dims: Vec<usize> = (0..2).map(|i| basis.dim_at(i)).collect();
        let pack = CovariancePack::zeros(5, &dims);
        for i in 0..2 {
            assert_eq!(private_rate(&ch, &basis, &pack, i, 1.0).unwrap(), 0.0);
            assert_eq!(common_rate_per_user(&ch, &basis, &pack, i, 1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn identity_channel_closed_form() {
        // K=1, L=1, H = I_M, X = p I, sigma2 = 1 -> M log2(1+p).
        let m = 3;
        let mut ch = draw_iid_gaussian(&geoms(&[m], 1.0), m, &[0.0], 5).unwrap();
        ch.users[0].h = CMat::identity(m, m);
        ch.users[0].h_est = CMat::identity(m, m);
        ch.users[0].path_loss = 1.0;
        let basis = build_sns_basis(&ch, &[0], false).unwrap();
        let p = 2.5;
        let pack = CovariancePack {
            q_c: PsdMatrix::zeros(m),
            x: vec![PsdMatrix::scaled_identity(m, p)],
            reduced: None,
        };
        let r = private_rate(&ch, &basis, &pack, 0, 1.0).unwrap();
        let expected = m as f64 * (1.0 + p).log2();
        assert!((r - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn rates_match_naive_inverse_oracle() {
        let g = geoms(&[1, 1], 10.0);
        for trial in 0..20u64 {
            let ch = draw_iid_gaussian(&g, 3, &[0.0, 0.0], trial_seed(6, trial)).unwrap();
            let basis = build_sns_basis(&ch, &[0, 1], false).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(trial + 500);
            let pack = random_pack(&mut rng, &basis, 3, 4.0);
            for i in 0..2 {
                let r = private_rate(&ch, &basis, &pack, i, 1.0).unwrap();
                let o = naive_private(&ch, &basis, &pack, i, 1.0, Pattern::Successive, EvalChannel::TrueH);
                assert!((r - o).abs() <= 1e-10 * o.abs().max(1.0), "private {r} vs {o}");
                let rc = common_rate_per_user(&ch, &basis, &pack, i, 1.0).unwrap();
                let oc = naive_common(&ch, &basis, &pack, i, 1.0, Pattern::Successive, EvalChannel::TrueH);
                assert!((rc - oc).abs() <= 1e-10 * oc.abs().max(1.0), "common {rc} vs {oc}");
            }
        }
    }

    #[test]
    fn imperfect_rates_match_oracle_and_reduce_at_zero_error() {
        let g = geoms(&[2, 1], 30.0);
        // mu = 0: both evaluation modes equal the perfect-CSI report.
        let ch = draw_iid_gaussian(&g, 4, &[0.0, 0.0], 8).unwrap();
        let basis_est = build_sns_basis(&ch, &[0, 1], true).unwrap();
        let basis_true = build_sns_basis(&ch, &[0, 1], false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pack = random_pack(&mut rng, &basis_est, 4, 10.0);
        let w = Weights::equal(2);
        let perfect = wsr(&ch, &basis_true, &pack, 1e-3, &w).unwrap();
        for eval in [EvalChannel::TrueH, EvalChannel::EstimatedH] {
            let rep = imperfect_rates(&ch, &basis_est, &pack, 1e-3, eval, &w).unwrap();
            assert!((rep.wsr - perfect.wsr).abs() <= 1e-10 * perfect.wsr.max(1.0));
        }

        // mu > 0: oracle agreement for the full-interference formulas.
        let ch = draw_iid_gaussian(&g, 4, &[0.2, 0.1], 9).unwrap();
        let basis_est = build_sns_basis(&ch, &[0, 1], true).unwrap();
        let pack = random_pack(&mut rng, &basis_est, 4, 10.0);
        let rep = imperfect_rates(&ch, &basis_est, &pack, 1e-3, EvalChannel::TrueH, &w).unwrap();
        for (i, &u) in basis_est.order.iter().enumerate() {
            let o = naive_private(&ch, &basis_est, &pack, i, 1e-3, Pattern::Full, EvalChannel::TrueH);
            assert!((rep.private[u] - o).abs() <= 1e-10 * o.abs().max(1.0));
            let oc = naive_common(&ch, &basis_est, &pack, i, 1e-3, Pattern::Full, EvalChannel::TrueH);
            assert!((rep.common_per_user[u] - oc).abs() <= 1e-10 * oc.abs().max(1.0));
        }
        // Private interference includes later users under imperfect CSI.
        assert!(rep.private[basis_est.order[0]] > 0.0);
    }

    #[test]
    fn power_trace_identity() {
        // tr(Psi X Psi^H) = tr(X) for orthonormal Psi.
        let g = geoms(&[2, 2], 10.0);
        let ch = draw_iid_gaussian(&g, 6, &[0.0, 0.0], 10).unwrap();
        let basis = build_sns_basis(&ch, &[1, 0], false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..2 {
            let x = random_psd(&mut rng, basis.dim_at(i), 1.0);
            let psi = &basis.bases[i];
            let lifted = psi * x.matrix() * psi.adjoint();
            assert!((lifted.trace().re - x.trace()).abs() <= 1e-10 * x.trace());
        }
    }

    #[test]
    fn scaling_down_never_increases_rates() {
        let g = geoms(&[1, 2], 20.0);
        let w = Weights::equal(2);
        for trial in 0..100u64 {
            let ch = draw_iid_gaussian(&g, 4, &[0.0, 0.0], trial_seed(13, trial)).unwrap();
            let basis = build_sns_basis(&ch, &[0, 1], false).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let pack = random_pack(&mut rng, &basis, 4, 5.0);
            let full = wsr(&ch, &basis, &pack, 1e-2, &w).unwrap();
            let t = 0.1 + 0.8 * (trial as f64 / 100.0);
            let scaled = CovariancePack {
                q_c: PsdMatrix::new(pack.q_c.matrix() * Complex64::new(t, 0.0)).unwrap(),
                x: pack
                    .x
                    .iter()
                    .map(|x| PsdMatrix::new(x.matrix() * Complex64::new(t, 0.0)).unwrap())
                    .collect(),
                reduced: None,
            };
            let small = wsr(&ch, &basis, &scaled, 1e-2, &w).unwrap();
            for k in 0..2 {
                assert!(small.private[k] <= full.private[k] + 1e-9);
                assert!(small.common_per_user[k] <= full.common_per_user[k] + 1e-9);
            }
        }
    }

    #[test]
    fn causality_interference_free_rate() {
        // With zero earlier covariances, R_k equals the interference-free
        // log-det.
        let g = geoms(&[1, 1, 1], 10.0);
        let ch = draw_iid_gaussian(&g, 3, &[0.0; 3], 14).unwrap();
        let basis = build_sns_basis(&ch, &[0, 1, 2], false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut pack = random_pack(&mut rng, &basis, 3, 6.0);
        pack.x[0] = PsdMatrix::zeros(basis.dim_at(0));
        pack.x[1] = PsdMatrix::zeros(basis.dim_at(1));
        let r = private_rate(&ch, &basis, &pack, 2, 1.0).unwrap();
        let engine = engine_for(&ch, &basis, 1.0, EvalChannel::TrueH, Pattern::Successive);
        let e22 = engine.effective(2, 2).clone();
        let s = &e22 * pack.x[2].matrix() * e22.adjoint();
        let m = s.nrows();
        let free = (CMat::identity(m, m) + s).determinant().re.log2();
        assert!((r - free).abs() <= 1e-12 * free.max(1.0));
    }

    #[test]
    fn wsr_assembly_and_min_structure() {
        let g = geoms(&[1, 1], 10.0);
        let ch = draw_iid_gaussian(&g, 2, &[0.0, 0.0], 16).unwrap();
        let basis = build_sns_basis(&ch, &[0, 1], false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pack = random_pack(&mut rng, &basis, 2, 3.0);
        let w = Weights::equal(2);
        let rep = wsr(&ch, &basis, &pack, 1.0, &w).unwrap();
        let expected = w.common_coeff() * rep.common
            + 0.5 * (rep.private[0] + rep.private[1]);
        assert!((rep.wsr - expected).abs() <= 1e-12);
        assert!(rep.common <= rep.common_per_user[0] + 1e-12);
        assert!(rep.common <= rep.common_per_user[1] + 1e-12);
        assert_eq!(
            rep.common,
            rep.common_per_user
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min)
        );
    }

    #[test]
    fn weight_validation() {
        assert!(Weights::new(vec![0.5, 0.6], vec![0.5, 0.5]).is_err());
        assert!(Weights::new(vec![0.5, 0.5], vec![1.2, -0.2]).is_err());
        assert!(Weights::new(vec![0.5, 0.5], vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn rank_feasible_pack_eigencounts() {
        // Reduced-form packs satisfy the rank constraints by construction.
        let g = geoms(&[2, 2], 10.0);
        let ch = draw_iid_gaussian(&g, 6, &[0.0, 0.0], 18).unwrap();
        let basis = build_sns_basis(&ch, &[0, 1], false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let m_c = 2;
        let u_c = {
            let big = random_psd(&mut rng, 6, 1.0);
            crate::numerics::top_eigvecs(&big, m_c).unwrap()
        };
        let x_c = random_psd(&mut rng, m_c, 1.0);
        let q_c = PsdMatrix::new(&u_c * x_c.matrix() * u_c.adjoint()).unwrap();
        let (vals, _) = crate::numerics::hermitian_eigen_desc(q_c.matrix());
        let rank = vals.iter().filter(|&&v| v > 1e-9 * vals[0].max(1e-300)).count();
        assert!(rank <= m_c);
        let _ = basis;
    }
}
