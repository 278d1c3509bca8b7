//! Closed-form baseline precoders: (regularized) zero forcing, block
//! diagonalization, and the BD-based rate-splitting structure.
//!
//! Each constructor returns unit-power direction columns with power
//! allocation deferred, so the optimizer's diagonal power variables carry
//! all the power. ZF at nearly singular `H H^H` raises [`Error::Singular`]
//! rather than regularizing silently: ill-conditioning is a genuine ZF
//! failure mode that must stay visible.

use num_complex::Complex64;

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::numerics::{check_full_row_rank, null_space_basis, CMat};

/// Which baseline produced a precoder set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeTag {
    Zf,
    Rzf,
    Bd,
    BdRsma,
}

/// Fixed precoding directions for one baseline scheme.
#[derive(Debug, Clone)]
pub struct LinearPrecoderSet {
    pub tag: SchemeTag,
    /// Per-user direction matrices, `N x M_k`, unit-norm columns
    /// (orthonormal for BD).
    pub directions: Vec<CMat>,
    /// BD detection matrices `(U_k^BD)^H`; `None` for ZF/RZF.
    pub detection: Vec<Option<CMat>>,
    /// BD per-stream singular values of `H_k Psi_k^BD`; empty for ZF/RZF.
    pub stream_gains: Vec<Vec<f64>>,
    /// Common-precoder width `M = min_k M_k` for the RSMA structure;
    /// 0 when the scheme has no common message.
    pub common_dim: usize,
}

impl LinearPrecoderSet {
    pub fn num_users(&self) -> usize {
        self.directions.len()
    }

    /// Scales direction columns by per-stream amplitudes `sqrt(p)` and
    /// checks the power budget `sum_k tr(P_k P_k^H) <= p_total`.
    pub fn apply_power(&self, powers: &[Vec<f64>], p_total: f64) -> Result<Vec<CMat>> {
        if powers.len() != self.directions.len() {
            return Err(Error::DimensionError {
                context: "apply_power",
                details: "per-user power list length mismatch".into(),
            });
        }
        let mut out = Vec::with_capacity(powers.len());
        let mut used = 0.0;
        for (dirs, p) in self.directions.iter().zip(powers) {
            if p.len() != dirs.ncols() {
                return Err(Error::DimensionError {
                    context: "apply_power",
                    details: "per-stream power count mismatch".into(),
                });
            }
            let mut scaled = dirs.clone();
            for (j, &pj) in p.iter().enumerate() {
                if pj < 0.0 {
                    return Err(Error::Validation("stream powers must be >= 0".into()));
                }
                let col = scaled.column(j) * Complex64::new(pj.sqrt(), 0.0);
                scaled.set_column(j, &col);
                // Unit-norm columns make tr(P P^H) the plain power sum.
                used += pj * dirs.column(j).norm_squared();
            }
            out.push(scaled);
        }
        if used > p_total * (1.0 + 1e-8) {
            return Err(Error::Validation(format!(
                "power allocation uses {used} of {p_total} mW"
            )));
        }
        Ok(out)
    }
}

/// The received-SNR-optimal RZF regularizer `alpha = sum_k M_k sigma2 / P_T`.
pub fn rzf_alpha(channels: &ChannelSet, sigma2: f64, p_total: f64) -> f64 {
    channels.total_rx() as f64 * sigma2 / p_total
}

/// Regularized zero-forcing directions
/// `H^H (H H^H + alpha I)^{-1}`, column-normalized; `alpha = 0` is plain ZF.
pub fn rzf_directions(
    channels: &ChannelSet,
    alpha: f64,
    use_estimates: bool,
) -> Result<LinearPrecoderSet> {
    if alpha < 0.0 {
        return Err(Error::Validation("alpha must be >= 0".into()));
    }
    let all: Vec<usize> = (0..channels.num_users()).collect();
    let h = channels.stack(&all, use_estimates);
    let sum_m = h.nrows();
    if alpha == 0.0 {
        check_full_row_rank(&h, "rzf_directions").map_err(|_| Error::Singular("rzf_directions"))?;
    }
    let gram = &h * h.adjoint() + CMat::identity(sum_m, sum_m) * Complex64::new(alpha, 0.0);
    let inv = gram.try_inverse().ok_or(Error::Singular("rzf_directions"))?;
    let raw = h.adjoint() * inv;

    let mut directions = Vec::with_capacity(channels.num_users());
    let mut at = 0;
    for k in 0..channels.num_users() {
        let m = channels.antennas(k);
        let mut dirs = raw.columns(at, m).into_owned();
        for j in 0..m {
            let norm = dirs.column(j).norm();
            if norm <= 1e-300 {
                return Err(Error::Singular("rzf_directions"));
            }
            let col = dirs.column(j) / Complex64::new(norm, 0.0);
            dirs.set_column(j, &col);
        }
        directions.push(dirs);
        at += m;
    }
    let tag = if alpha == 0.0 { SchemeTag::Zf } else { SchemeTag::Rzf };
    Ok(LinearPrecoderSet {
        tag,
        detection: vec![None; channels.num_users()],
        stream_gains: vec![Vec::new(); channels.num_users()],
        directions,
        common_dim: 0,
    })
}

/// Block-diagonalization directions: for each user, an orthonormal basis of
/// the null space of every other user's (stacked) channel, rotated by the
/// right singular vectors of the user's effective channel so the
/// post-detection channel is diagonal.
pub fn bd_precoder(channels: &ChannelSet, use_estimates: bool) -> Result<LinearPrecoderSet> {
    let k_users = channels.num_users();
    let n = channels.num_tx();
    let sum_m = channels.total_rx();
    if n < sum_m {
        return Err(Error::Overloaded { n, sum_m });
    }
    let mut directions = Vec::with_capacity(k_users);
    let mut detection = Vec::with_capacity(k_users);
    let mut stream_gains = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let others: Vec<usize> = (0..k_users).filter(|&j| j != k).collect();
        let f_bd = channels.stack(&others, use_estimates);
        let null = null_space_basis(&f_bd)?;
        let h_k = if use_estimates {
            &channels.users[k].h_est
        } else {
            &channels.users[k].h
        };
        let m_k = h_k.nrows();
        let eff = h_k * &null;
        let svd = eff.clone().svd(true, true);
        let u = svd.u.as_ref().expect("svd u");
        let vt = svd.v_t.as_ref().expect("svd v_t");
        let v = vt.adjoint();
        directions.push(&null * v.columns(0, m_k).into_owned());
        detection.push(Some(u.columns(0, m_k).adjoint()));
        stream_gains.push(svd.singular_values.iter().take(m_k).cloned().collect());
    }
    Ok(LinearPrecoderSet {
        tag: SchemeTag::Bd,
        directions,
        detection,
        stream_gains,
        common_dim: 0,
    })
}

/// BD private structure plus a free common-precoder slot of width
/// `M = min_k M_k` for the rate-splitting extension.
pub fn bd_rsma_structure(channels: &ChannelSet, use_estimates: bool) -> Result<LinearPrecoderSet> {
    let mut set = bd_precoder(channels, use_estimates)?;
    set.tag = SchemeTag::BdRsma;
    set.common_dim = (0..channels.num_users())
        .map(|k| channels.antennas(k))
        .min()
        .unwrap_or(0);
    Ok(set)
}
