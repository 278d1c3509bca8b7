//! Optimization geometry and the concave first-order surrogate of the
//! weighted sum rate.
//!
//! Every scheme this crate optimizes is an instance of the same template:
//! per-user covariance variables mapped through fixed basis matrices into the
//! transmit space, an optional common covariance, a total-power budget, and
//! either the successive interference pattern (null-space structure) or the
//! full one (baselines, imperfect CSI). The non-concavity of every rate term
//! sits in a subtracted `log det` of the interference covariance; the
//! surrogate keeps the joint log-det exact and replaces the subtracted term
//! by its first-order expansion around the current expansion point, which
//! makes the surrogate concave, tangent at the expansion point, and a global
//! lower bound on the true rate.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{hermitian_part, trace_product_re, CMat, PsdMatrix};
use crate::rsma::{Pattern, PositionRates, RateEngine, Weights};

const LN2: f64 = std::f64::consts::LN_2;

/// Shape of one variable block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    /// Full Hermitian PSD matrix.
    Psd,
    /// Real nonnegative diagonal (per-stream power allocation).
    Diag,
}

/// One problem instance: channels, signal bases, variable shapes, weights,
/// and the power budget.
#[derive(Debug, Clone)]
pub struct WsrGeometry {
    /// Noise-normalized channels per position, `H / sqrt(L sigma2)`.
    pub g: Vec<CMat>,
    /// Per-position signal bases `B_i` (`N x m_i`).
    pub bases: Vec<CMat>,
    /// Common-covariance basis (`N x M_c`); `None` disables the common
    /// message entirely.
    pub common_basis: Option<CMat>,
    pub var_kind: Vec<VarKind>,
    pub pattern: Pattern,
    /// Weights in position space.
    pub weights: Weights,
    /// Total-power budget `P_T` (mW).
    pub p_budget: f64,
    pub(crate) engine: RateEngine,
}

impl WsrGeometry {
    pub fn new(
        g: Vec<CMat>,
        bases: Vec<CMat>,
        common_basis: Option<CMat>,
        var_kind: Vec<VarKind>,
        pattern: Pattern,
        weights: Weights,
        p_budget: f64,
    ) -> Result<Self> {
        let k = g.len();
        if bases.len() != k || var_kind.len() != k || weights.len() != k {
            return Err(Error::DimensionError {
                context: "WsrGeometry::new",
                details: "per-user lists must have equal length".into(),
            });
        }
        if !(p_budget >= 0.0) {
            return Err(Error::Validation("power budget must be >= 0".into()));
        }
        let engine = RateEngine::new(g.clone(), &bases, common_basis.as_ref(), pattern);
        Ok(Self {
            g,
            bases,
            common_basis,
            var_kind,
            pattern,
            weights,
            p_budget,
            engine,
        })
    }

    pub fn num_positions(&self) -> usize {
        self.g.len()
    }

    pub fn var_dims(&self) -> Vec<usize> {
        self.bases.iter().map(|b| b.ncols()).collect()
    }

    pub fn common_dim(&self) -> Option<usize> {
        self.common_basis.as_ref().map(|b| b.ncols())
    }

    pub fn has_common(&self) -> bool {
        self.common_basis.is_some()
    }

    /// The same geometry evaluated against different channels (same bases,
    /// shapes, and weights): used to score covariances optimized on channel
    /// estimates against the true channels.
    pub fn with_channels(&self, g: Vec<CMat>) -> Result<Self> {
        Self::new(
            g,
            self.bases.clone(),
            self.common_basis.clone(),
            self.var_kind.clone(),
            self.pattern,
            self.weights.clone(),
            self.p_budget,
        )
    }

    /// Exact rates and weighted sum rate at a variable assignment.
    pub fn exact_rates(&self, vars: &VarSet) -> Result<PositionRates> {
        let qc = self.common_qc(vars);
        self.engine.evaluate(&vars.x, &qc, &self.weights)
    }

    fn common_qc(&self, vars: &VarSet) -> CMat {
        match (&vars.q_c, self.common_dim()) {
            (Some(q), _) => q.clone(),
            (None, Some(d)) => CMat::zeros(d, d),
            (None, None) => CMat::zeros(0, 0),
        }
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

    /// Feasible default expansion point of the outer loop:
    /// `X_i = P_T / (K m_i) I`.
    pub fn default_expansion(&self) -> Vec<CMat> {
        let k = self.num_positions();
        self.var_dims()
            .iter()
            .map(|&m| CMat::identity(m, m) * Complex64::new(self.p_budget / (k * m) as f64, 0.0))
            .collect()
    }

    /// Near-zero expansion (`1e-6 P_T / m_i I`) for schemes initialized at
    /// zero: keeps the first surrogate non-degenerate.
    pub fn near_zero_expansion(&self) -> Vec<CMat> {
        self.var_dims()
            .iter()
            .map(|&m| CMat::identity(m, m) * Complex64::new(1e-6 * self.p_budget / m as f64, 0.0))
            .collect()
    }

    /// All-zero variables (always feasible).
    pub fn zero_vars(&self) -> VarSet {
        VarSet {
            x: self.var_dims().iter().map(|&m| CMat::zeros(m, m)).collect(),
            q_c: self.common_dim().map(|d| CMat::zeros(d, d)),
        }
    }
}

/// One variable assignment: per-position covariances plus the optional
/// common covariance, in the geometry's basis coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct VarSet {
    pub x: Vec<CMat>,
    pub q_c: Option<CMat>,
}

impl VarSet {
    pub fn total_power(&self) -> f64 {
        let xq: f64 = self.x.iter().map(|m| m.trace().re).sum();
        xq + self.q_c.as_ref().map_or(0.0, |q| q.trace().re)
    }

    /// Real inner product `sum_i Re tr(A_i^H B_i)`.
    pub fn dot(&self, other: &Self) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.x.iter().zip(&other.x) {
            acc += a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum::<f64>();
        }
        if let (Some(a), Some(b)) = (&self.q_c, &other.q_c) {
            acc += a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum::<f64>();
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        let a = Complex64::new(alpha, 0.0);
        for (x, y) in self.x.iter_mut().zip(&other.x) {
            *x += y * a;
        }
        if let (Some(x), Some(y)) = (&mut self.q_c, &other.q_c) {
            *x += y * a;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let a = Complex64::new(alpha, 0.0);
        Self {
            x: self.x.iter().map(|m| m * a).collect(),
            q_c: self.q_c.as_ref().map(|q| q * a),
        }
    }

    pub fn diff(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }
}

/// Affine model of `f(Y) = ln det(I + A Y A^H)` around an expansion point:
/// `f~(Y) = f(X0) + tr(G (Y - X0))` with `G = A^H (I + A X0 A^H)^{-1} A`.
/// Values and the gradient are in nats.
#[derive(Debug, Clone)]
pub struct AffineLogDet {
    pub value_at_x0: f64,
    pub gradient: CMat,
    pub x0: CMat,
}

impl AffineLogDet {
    pub fn eval(&self, y: &CMat) -> f64 {
        self.value_at_x0 + trace_product_re(&self.gradient, &(y - &self.x0))
    }
}

/// First-order model of `ln det(I + A Y A^H)` at `x0` (nats).
pub fn fo_logdet(a: &CMat, x0: &PsdMatrix) -> Result<AffineLogDet> {
    let m = a.nrows();
    if x0.dim() != a.ncols() {
        return Err(Error::DimensionError {
            context: "fo_logdet",
            details: format!("A has {} columns, X0 is {}-dimensional", a.ncols(), x0.dim()),
        });
    }
    let inner = CMat::identity(m, m) + a * x0.matrix() * a.adjoint();
    let value = crate::numerics::log2_det_hpd(&inner, "fo_logdet")? * LN2;
    let inv = crate::numerics::hpd_solve(&inner, &CMat::identity(m, m), "fo_logdet")?;
    let gradient = hermitian_part(&(a.adjoint() * inv * a));
    Ok(AffineLogDet {
        value_at_x0: value,
        gradient,
        x0: x0.matrix().clone(),
    })
}

/// Concave surrogate of the weighted sum rate at one expansion point.
///
/// For the private rate at position `i` with interferer set `I_i`,
///
/// ```text
/// R~_i = log2 det(I + sum_{j in I_i + {i}} E_ij X_j E_ij^H)
///        - log2 det(I + sum_{j in I_i} E_ij X'_j E_ij^H)
///        - (1/ln 2) sum_{j in I_i} tr(T_ij (X_j - X'_j)),
/// T_ij = E_ij^H (I + sum_{j' in I_i} E_ij' X'_j' E_ij'^H)^{-1} E_ij,
/// ```
///
/// where primes mark the expansion point; the common-rate surrogate is the
/// analogous expression with the common term added to the joint log-det and
/// the interferer set of the common decode. The common covariance enters
/// only concavely and needs no linearization.
#[derive(Debug)]
pub struct SurrogateModel<'a> {
    pub geo: &'a WsrGeometry,
    /// Expansion point (private variables only).
    pub expansion: Vec<CMat>,
    priv_sets: Vec<Vec<usize>>,
    comm_sets: Vec<Vec<usize>>,
    /// Gradient constants `T_ij`, aligned with `priv_sets[i]`.
    t_priv: Vec<Vec<CMat>>,
    t_comm: Vec<Vec<CMat>>,
    /// Scalar offsets folding the constant log-det and the expansion part of
    /// the trace terms.
    off_priv: Vec<f64>,
    off_comm: Vec<f64>,
}

/// Values of the surrogate at one variable assignment.
#[derive(Debug, Clone)]
pub struct SurrogateValue {
    pub private: Vec<f64>,
    pub common: Vec<f64>,
    /// Weighted private part, `sum_i eta_i private[i]`.
    pub smooth: f64,
    /// `min_i common[i]` (0 when the geometry has no common message).
    pub common_min: f64,
    /// Full surrogate objective (bits).
    pub value: f64,
}

/// Gradient bundle: the smooth part (weighted private rates) plus one
/// gradient per common-rate term so the solver can handle the min.
#[derive(Debug)]
pub struct SurrogateGradient {
    pub smooth: VarSet,
    pub common: Vec<VarSet>,
    pub common_coeff: f64,
}

impl<'a> SurrogateModel<'a> {
    pub fn num_positions(&self) -> usize {
        self.geo.num_positions()
    }

    fn joint_matrix(&self, i: usize, set: &[usize], x: &[CMat], with_self: Option<usize>) -> CMat {
        let mut b = self.geo.engine.interference_matrix(i, set, x);
        if let Some(s) = with_self {
            if !set.contains(&s) {
                let e = self.geo.engine.effective(i, s);
                b += e * &x[s] * e.adjoint();
            }
        }
        b
    }

    /// Surrogate values only (used heavily by the line search).
    pub fn eval(&self, vars: &VarSet) -> Result<SurrogateValue> {
        let k = self.num_positions();
        let mut private = Vec::with_capacity(k);
        let mut common = Vec::with_capacity(k);
        for i in 0..k {
            let joint = self.joint_matrix(i, &self.priv_sets[i], &vars.x, Some(i));
            let ld = crate::numerics::log2_det_hpd(&joint, "surrogate private")?;
            let mut lin = 0.0;
            for (t, &j) in self.t_priv[i].iter().zip(&self.priv_sets[i]) {
                lin += trace_product_re(t, &vars.x[j]);
            }
            private.push(ld - self.off_priv[i] - lin / LN2);

            if self.geo.has_common() {
                let mut joint_c = self.joint_matrix(i, &self.comm_sets[i], &vars.x, None);
                if let Some(qc) = &vars.q_c {
                    let ec = self.geo.engine.effective_common(i);
                    joint_c += ec * qc * ec.adjoint();
                }
                let ld_c = crate::numerics::log2_det_hpd(&joint_c, "surrogate common")?;
                let mut lin_c = 0.0;
                for (t, &j) in self.t_comm[i].iter().zip(&self.comm_sets[i]) {
                    lin_c += trace_product_re(t, &vars.x[j]);
                }
                common.push(ld_c - self.off_comm[i] - lin_c / LN2);
            } else {
                common.push(0.0);
            }
        }
        let common_min = if self.geo.has_common() {
            common.iter().cloned().fold(f64::INFINITY, f64::min)
        } else {
            0.0
        };
        let w = &self.geo.weights;
        let smooth: f64 = w.eta.iter().zip(&private).map(|(a, b)| a * b).sum();
        let value = w.common_coeff() * common_min + smooth;
        Ok(SurrogateValue {
            private,
            common,
            smooth,
            common_min,
            value,
        })
    }

    /// Values plus gradients.
    pub fn eval_with_grad(&self, vars: &VarSet) -> Result<(SurrogateValue, SurrogateGradient)> {
        let k = self.num_positions();
        let value = self.eval(vars)?;
        let dims = self.geo.var_dims();
        let zero_vars = || VarSet {
            x: dims.iter().map(|&m| CMat::zeros(m, m)).collect(),
            q_c: self.geo.common_dim().map(|d| CMat::zeros(d, d)),
        };

        let mut smooth = zero_vars();
        let mut common_grads: Vec<VarSet> = Vec::new();
        for i in 0..k {
            // Private term gradient, weighted by eta_i.
            let joint = self.joint_matrix(i, &self.priv_sets[i], &vars.x, Some(i));
            let minv = crate::numerics::hpd_solve(
                &joint,
                &CMat::identity(joint.nrows(), joint.nrows()),
                "surrogate gradient",
            )?;
            let eta = self.geo.weights.eta[i];
            let mut members: Vec<usize> = self.priv_sets[i].clone();
            if !members.contains(&i) {
                members.push(i);
            }
            for &j in &members {
                let e = self.geo.engine.effective(i, j);
                let g = hermitian_part(&(e.adjoint() * &minv * e));
                smooth.x[j] += g * Complex64::new(eta / LN2, 0.0);
            }
            for (t, &j) in self.t_priv[i].iter().zip(&self.priv_sets[i]) {
                smooth.x[j] -= t * Complex64::new(eta / LN2, 0.0);
            }

            // Common term gradient (unweighted; the solver applies the
            // common coefficient and the min structure).
            if self.geo.has_common() {
                let mut joint_c = self.joint_matrix(i, &self.comm_sets[i], &vars.x, None);
                if let Some(qc) = &vars.q_c {
                    let ec = self.geo.engine.effective_common(i);
                    joint_c += ec * qc * ec.adjoint();
                }
                let minv_c = crate::numerics::hpd_solve(
                    &joint_c,
                    &CMat::identity(joint_c.nrows(), joint_c.nrows()),
                    "surrogate gradient",
                )?;
                let mut grad = zero_vars();
                for &j in &self.comm_sets[i] {
                    let e = self.geo.engine.effective(i, j);
                    let g = hermitian_part(&(e.adjoint() * &minv_c * e));
                    grad.x[j] += g * Complex64::new(1.0 / LN2, 0.0);
                }
                for (t, &j) in self.t_comm[i].iter().zip(&self.comm_sets[i]) {
                    grad.x[j] -= t * Complex64::new(1.0 / LN2, 0.0);
                }
                if let Some(qc_grad) = &mut grad.q_c {
                    let ec = self.geo.engine.effective_common(i);
                    *qc_grad = hermitian_part(&(ec.adjoint() * &minv_c * ec))
                        * Complex64::new(1.0 / LN2, 0.0);
                }
                common_grads.push(grad);
            }
        }

        restrict_diag(self.geo, &mut smooth);
        for g in &mut common_grads {
            restrict_diag(self.geo, g);
        }
        Ok((
            value,
            SurrogateGradient {
                smooth,
                common: common_grads,
                common_coeff: self.geo.weights.common_coeff(),
            },
        ))
    }
}

/// Zeroes gradient components outside a diagonal variable's feasible
/// directions.
pub fn restrict_diag(geo: &WsrGeometry, v: &mut VarSet) {
    for (kind, x) in geo.var_kind.iter().zip(&mut v.x) {
        if matches!(kind, VarKind::Diag) {
            let n = x.nrows();
            for r in 0..n {
                for c in 0..n {
                    if r != c {
                        x[(r, c)] = Complex64::new(0.0, 0.0);
                    } else {
                        x[(r, c)] = Complex64::new(x[(r, c)].re, 0.0);
                    }
                }
            }
        }
    }
}

/// Builds the concave surrogate of the weighted sum rate around an expansion
/// point for the private variables (the common covariance needs none).
pub fn surrogate_rates<'a>(geo: &'a WsrGeometry, expansion: &[CMat]) -> Result<SurrogateModel<'a>> {
    let k = geo.num_positions();
    if expansion.len() != k {
        return Err(Error::DimensionError {
            context: "surrogate_rates",
            details: "expansion point count mismatch".into(),
        });
    }
    for (b, x) in geo.bases.iter().zip(expansion) {
        if x.nrows() != b.ncols() || x.ncols() != b.ncols() {
            return Err(Error::DimensionError {
                context: "surrogate_rates",
                details: "expansion point dimension mismatch".into(),
            });
        }
    }
    let mut priv_sets = Vec::with_capacity(k);
    let mut comm_sets = Vec::with_capacity(k);
    let mut t_priv = Vec::with_capacity(k);
    let mut t_comm = Vec::with_capacity(k);
    let mut off_priv = Vec::with_capacity(k);
    let mut off_comm = Vec::with_capacity(k);

    for i in 0..k {
        let pset = geo.private_interferers(i);
        let cset = geo.common_interferers(i);

        let b_p = geo.engine.interference_matrix(i, &pset, expansion);
        let ld_p = crate::numerics::log2_det_hpd(&b_p, "surrogate build")?;
        let w_p = crate::numerics::hpd_solve(
            &b_p,
            &CMat::identity(b_p.nrows(), b_p.nrows()),
            "surrogate build",
        )?;
        let mut ts = Vec::with_capacity(pset.len());
        let mut off = ld_p;
        for &j in &pset {
            let e = geo.engine.effective(i, j);
            let t = hermitian_part(&(e.adjoint() * &w_p * e));
            off -= trace_product_re(&t, &expansion[j]) / LN2;
            ts.push(t);
        }
        t_priv.push(ts);
        off_priv.push(off);

        if geo.has_common() {
            let b_c = geo.engine.interference_matrix(i, &cset, expansion);
            let ld_c = crate::numerics::log2_det_hpd(&b_c, "surrogate build")?;
            let w_c = crate::numerics::hpd_solve(
                &b_c,
                &CMat::identity(b_c.nrows(), b_c.nrows()),
                "surrogate build",
            )?;
            let mut ts = Vec::with_capacity(cset.len());
            let mut off = ld_c;
            for &j in &cset {
                let e = geo.engine.effective(i, j);
                let t = hermitian_part(&(e.adjoint() * &w_c * e));
                off -= trace_product_re(&t, &expansion[j]) / LN2;
                ts.push(t);
            }
            t_comm.push(ts);
            off_comm.push(off);
        } else {
            t_comm.push(Vec::new());
            off_comm.push(0.0);
        }

        priv_sets.push(pset);
        comm_sets.push(cset);
    }

    Ok(SurrogateModel {
        geo,
        expansion: expansion.to_vec(),
        priv_sets,
        comm_sets,
        t_priv,
        t_comm,
        off_priv,
        off_comm,
    })
}
