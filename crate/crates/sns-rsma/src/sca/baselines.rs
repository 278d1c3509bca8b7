//! Power allocation for the fixed-direction baseline precoders, expressed as
//! instances of the shared optimization geometry.
//!
//! ZF and BD yield interference-free parallel streams, so their power
//! allocation is a concave problem the inner solver handles directly (the
//! outer loop settles in two iterations). RZF streams interfere and the
//! BD-based rate-splitting variants add a common covariance, so those run
//! the full SCA from a near-zero start. The BD-with-MIMO-common-message
//! upper bound is the rank-relaxed problem, which is concave for equal user
//! weights.

use crate::channel::{normalized_channel, ChannelSet};
use crate::error::{Error, Result};
use crate::numerics::CMat;
use crate::precoders::{bd_rsma_structure, rzf_alpha, rzf_directions};
use crate::rsma::{Pattern, Weights};

use super::algorithm::{
    rank_repair_and_reoptimize, recover_outcome, sca_maximize, Csi, InitStrategy, ScaOptions,
    ScaOutcome,
};
use super::problem::{VarKind, WsrGeometry};

/// Baseline schemes with fixed precoding directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineScheme {
    Zf,
    Rzf,
    Bd,
    /// BD private streams plus a rank-1 (scalar-symbol) common covariance.
    BdRsmaSiso,
    /// BD private streams plus a rank-`min M_k` common covariance
    /// (rank-repaired, feasible).
    BdRsmaMimo,
    /// Rank-relaxed BD-with-common-message problem; a true upper bound for
    /// equal user weights (validated).
    BdMimoCmUb,
    /// The same relaxed problem without the equal-weight validation; used
    /// internally as a structured warm start.
    BdMimoCmRelaxed,
}

impl BaselineScheme {
    pub fn label(self) -> &'static str {
        match self {
            Self::Zf => "ZF",
            Self::Rzf => "RZF",
            Self::Bd => "BD",
            Self::BdRsmaSiso => "BD_RSMA_SISO",
            Self::BdRsmaMimo => "BD_RSMA_MIMO",
            Self::BdMimoCmUb => "BD_MIMO_CM_UB",
            Self::BdMimoCmRelaxed => "BD_MIMO_CM_RELAXED",
        }
    }
}

/// Optimized power allocation for one baseline.
#[derive(Debug)]
pub struct BaselineRun {
    pub scheme: BaselineScheme,
    /// Per-user direction matrices (user order, not permuted).
    pub directions: Vec<CMat>,
    /// Final optimization outcome (post rank repair where applicable).
    pub outcome: ScaOutcome,
    /// Relaxed value before rank repair (equals the final value for schemes
    /// without repair).
    pub relaxed_value: f64,
    /// Final geometry in the optimizer's channel view.
    pub geo: WsrGeometry,
}

impl BaselineRun {
    /// Exact weighted sum rate of the optimized variables against the true
    /// channels (deployed performance under imperfect CSI).
    pub fn deployed_wsr(&self, channels: &ChannelSet, sigma2: f64) -> Result<f64> {
        let g_true: Vec<CMat> = (0..channels.num_users())
            .map(|u| normalized_channel(&channels.users[u], sigma2, false))
            .collect();
        let eval_geo = self.geo.with_channels(g_true)?;
        Ok(eval_geo.exact_rates(&self.outcome.vars)?.wsr)
    }
}

fn weights_are_equal(weights: &Weights) -> bool {
    let k = weights.len() as f64;
    weights
        .eta
        .iter()
        .chain(weights.eta_c.iter())
        .all(|&w| (w - 1.0 / k).abs() <= 1e-12)
}

/// Optimizes the power allocation (and common covariance, where the scheme
/// has one) for a baseline precoder.
pub fn baseline_pa(
    scheme: BaselineScheme,
    channels: &ChannelSet,
    weights: &Weights,
    p_total: f64,
    sigma2: f64,
    csi: Csi,
    opts: &ScaOptions,
) -> Result<BaselineRun> {
    let k = channels.num_users();
    if weights.len() != k {
        return Err(Error::WeightError(format!(
            "{} weights for {k} users",
            weights.len()
        )));
    }
    let n = channels.num_tx();
    let use_est = csi.use_estimates();
    let g: Vec<CMat> = (0..k)
        .map(|u| normalized_channel(&channels.users[u], sigma2, use_est))
        .collect();

    let (directions, var_kind, common, init): (Vec<CMat>, Vec<VarKind>, Option<CMat>, InitStrategy) =
        match scheme {
            BaselineScheme::Zf => {
                let set = rzf_directions(channels, 0.0, use_est)?;
                (
                    set.directions,
                    vec![VarKind::Diag; k],
                    None,
                    InitStrategy::AlgorithmDefault,
                )
            }
            BaselineScheme::Rzf => {
                let alpha = rzf_alpha(channels, sigma2, p_total);
                let set = rzf_directions(channels, alpha, use_est)?;
                (
                    set.directions,
                    vec![VarKind::Diag; k],
                    None,
                    InitStrategy::NearZero,
                )
            }
            BaselineScheme::Bd => {
                let set = bd_rsma_structure(channels, use_est)?;
                (
                    set.directions,
                    vec![VarKind::Diag; k],
                    None,
                    InitStrategy::AlgorithmDefault,
                )
            }
            BaselineScheme::BdRsmaSiso
            | BaselineScheme::BdRsmaMimo
            | BaselineScheme::BdMimoCmUb
            | BaselineScheme::BdMimoCmRelaxed => {
                if scheme == BaselineScheme::BdMimoCmUb && !weights_are_equal(weights) {
                    return Err(Error::Validation(
                        "the BD+MIMO-CM upper bound is only valid for equal user weights".into(),
                    ));
                }
                let set = bd_rsma_structure(channels, use_est)?;
                (
                    set.directions,
                    vec![VarKind::Diag; k],
                    Some(CMat::identity(n, n)),
                    InitStrategy::NearZero,
                )
            }
        };

    let geo = WsrGeometry::new(
        g,
        directions.clone(),
        common,
        var_kind,
        Pattern::Full,
        weights.clone(),
        p_total,
    )?;
    let relaxed = recover_outcome(sca_maximize(&geo, init, opts))?;
    let relaxed_value = relaxed.value;

    // Rank repair of the common covariance for the feasible RSMA variants.
    let rank_c = match scheme {
        BaselineScheme::BdRsmaSiso => Some(1),
        BaselineScheme::BdRsmaMimo => Some(
            (0..k)
                .map(|u| channels.antennas(u))
                .min()
                .expect("at least one user"),
        ),
        _ => None,
    };
    let (outcome, geo) = match rank_c {
        Some(r) => {
            let ranks = vec![None; k];
            let repaired = rank_repair_and_reoptimize(&geo, &relaxed, Some(r), &ranks, opts)?;
            (repaired.sca, repaired.reduced_geo)
        }
        None => (relaxed, geo),
    };

    Ok(BaselineRun {
        scheme,
        directions,
        outcome,
        relaxed_value,
        geo,
    })
}
