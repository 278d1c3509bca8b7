//! Channel realization generators: i.i.d. Gaussian small-scale fading and a
//! parametric uniform-linear-array (ULA) model, with quadratic path loss and
//! an additive CSI estimation error.
//!
//! All powers are linear milliwatts internally; dBm appears only at the
//! configuration boundary. Generators are pure functions of their seed, so
//! trials can run in parallel with per-trial derived seeds (see
//! [`trial_seed`]).

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{check_full_row_rank, spectral_norm, CMat, CVec};

/// Position and antenna count of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserGeometry {
    /// Distance from the base station in meters (> 0).
    pub distance_m: f64,
    /// Azimuth angle in degrees, `[0, 360)`; used by the ULA model only.
    pub angle_deg: f64,
    /// Number of receive antennas `M_k` (>= 1).
    pub num_antennas: usize,
}

impl UserGeometry {
    pub fn new(distance_m: f64, angle_deg: f64, num_antennas: usize) -> Result<Self> {
        if !(distance_m > 0.0) {
            return Err(Error::Validation(format!(
                "user distance must be positive, got {distance_m}"
            )));
        }
        if !(0.0..360.0).contains(&angle_deg) {
            return Err(Error::Validation(format!(
                "user angle must lie in [0, 360), got {angle_deg}"
            )));
        }
        if num_antennas == 0 {
            return Err(Error::Validation("users need at least one antenna".into()));
        }
        Ok(Self {
            distance_m,
            angle_deg,
            num_antennas,
        })
    }

    /// Quadratic path loss `L_k = d_k^2`.
    pub fn path_loss(&self) -> f64 {
        self.distance_m * self.distance_m
    }
}

/// One user's channel matrices within a realization.
#[derive(Debug, Clone, PartialEq)]
pub struct UserChannel {
    /// Small-scale fading matrix `H_k`, `M_k x N`.
    pub h: CMat,
    /// Estimation error `Delta H_k`, `M_k x N` (zero when `mu_k = 0`).
    pub delta_h: CMat,
    /// Estimate available at the base station, `H_k + Delta H_k`.
    pub h_est: CMat,
    /// Path loss `L_k`.
    pub path_loss: f64,
    /// CSI error variance `mu_k`.
    pub error_var: f64,
    /// Whether `||Delta H_k|| < ||H_est_k||` holds for this realization;
    /// a violation is flagged, not fatal.
    pub csi_error_small: bool,
}

/// One channel realization for all users.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// Number of transmit antennas `N`.
    pub num_tx: usize,
    pub users: Vec<UserChannel>,
}

impl ChannelSet {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_tx(&self) -> usize {
        self.num_tx
    }

    /// Receive antennas of user `k`.
    pub fn antennas(&self, k: usize) -> usize {
        self.users[k].h.nrows()
    }

    pub fn total_rx(&self) -> usize {
        self.users.iter().map(|u| u.h.nrows()).sum()
    }

    /// Stacks the (true or estimated) channel matrices of `user_ids` in the
    /// given order into one tall matrix.
    pub fn stack(&self, user_ids: &[usize], use_estimates: bool) -> CMat {
        let rows: usize = user_ids.iter().map(|&k| self.users[k].h.nrows()).sum();
        let mut out = CMat::zeros(rows, self.num_tx);
        let mut at = 0;
        for &k in user_ids {
            let h = if use_estimates {
                &self.users[k].h_est
            } else {
                &self.users[k].h
            };
            out.rows_mut(at, h.nrows()).copy_from(h);
            at += h.nrows();
        }
        out
    }
}

/// Receiver noise power per antenna, linear milliwatts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma2_mw: f64,
}

impl NoiseModel {
    pub fn new(sigma2_mw: f64) -> Result<Self> {
        if !(sigma2_mw > 0.0) {
            return Err(Error::Validation(format!(
                "noise power must be positive, got {sigma2_mw}"
            )));
        }
        Ok(Self { sigma2_mw })
    }

    pub fn from_dbm(sigma2_dbm: f64) -> Result<Self> {
        Self::new(dbm_to_mw(sigma2_dbm))
    }
}

/// Converts dBm to linear milliwatts: `10^(p/10)`.
pub fn dbm_to_mw(p_dbm: f64) -> f64 {
    10.0_f64.powf(p_dbm / 10.0)
}

/// Derives a per-trial seed from a master seed and trial index
/// (SplitMix64 over the combined words), so trial results do not depend on
/// scheduling order.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    let mut z = master
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(trial.wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add(0x94d049bb133111eb);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn complex_gaussian(rng: &mut ChaCha8Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

fn validate_load(geoms: &[UserGeometry], n: usize) -> Result<()> {
    if geoms.is_empty() {
        return Err(Error::Validation("at least one user is required".into()));
    }
    let sum_m: usize = geoms.iter().map(|g| g.num_antennas).sum();
    if n < sum_m {
        return Err(Error::Overloaded { n, sum_m });
    }
    Ok(())
}

/// Full stacked (true and estimated) channels must have full row rank; any
/// row subset of a full-row-rank matrix keeps that property, so this one
/// check covers every augmented matrix built downstream.
fn realization_ok(set: &ChannelSet) -> bool {
    let all: Vec<usize> = (0..set.num_users()).collect();
    let stacked = set.stack(&all, false);
    let stacked_est = set.stack(&all, true);
    check_full_row_rank(&stacked, "draw").is_ok() && check_full_row_rank(&stacked_est, "draw").is_ok()
}

fn assemble(
    geoms: &[UserGeometry],
    n: usize,
    mu: &[f64],
    hs: Vec<CMat>,
    rng: &mut ChaCha8Rng,
) -> ChannelSet {
    let mut users = Vec::with_capacity(geoms.len());
    for (k, geom) in geoms.iter().enumerate() {
        let m = geom.num_antennas;
        // Error entries are always drawn so the RNG stream (and hence H) is
        // identical across different mu configurations for the same seed.
        let delta = CMat::from_fn(m, n, |_, _| complex_gaussian(rng, 1.0))
            * Complex64::new(mu[k].sqrt(), 0.0);
        let h = hs[k].clone();
        let h_est = &h + &delta;
        let csi_error_small = spectral_norm(&delta) < spectral_norm(&h_est);
        users.push(UserChannel {
            h,
            delta_h: delta,
            h_est,
            path_loss: geom.path_loss(),
            error_var: mu[k],
            csi_error_small,
        });
    }
    ChannelSet { num_tx: n, users }
}

const MAX_REDRAWS: usize = 100;

/// Draws a realization with i.i.d. `CN(0,1)` small-scale fading and
/// independent `CN(0, mu_k)` estimation errors. Reproducible per seed;
/// rank-deficient realizations (probability zero for this model) are
/// redrawn.
pub fn draw_iid_gaussian(
    geoms: &[UserGeometry],
    n: usize,
    mu: &[f64],
    seed: u64,
) -> Result<ChannelSet> {
    validate_load(geoms, n)?;
    if mu.len() != geoms.len() {
        return Err(Error::Validation(format!(
            "mu has {} entries for {} users",
            mu.len(),
            geoms.len()
        )));
    }
    if mu.iter().any(|&m| m < 0.0) {
        return Err(Error::Validation("error variances must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_REDRAWS {
        let hs: Vec<CMat> = geoms
            .iter()
            .map(|g| CMat::from_fn(g.num_antennas, n, |_, _| complex_gaussian(&mut rng, 1.0)))
            .collect();
        let set = assemble(geoms, n, mu, hs, &mut rng);
        if realization_ok(&set) {
            return Ok(set);
        }
    }
    Err(Error::RankDeficient {
        context: "draw_iid_gaussian",
        ratio: 0.0,
    })
}

/// Transmit steering vector of an `n`-element half-wavelength ULA,
/// `a(phi)[i] = exp(j pi i sin phi) / sqrt(n)`.
pub fn steering_vector(n: usize, angle_deg: f64) -> CVec {
    let s = angle_deg.to_radians().sin();
    let scale = 1.0 / (n as f64).sqrt();
    CVec::from_fn(n, |i, _| {
        Complex64::from_polar(scale, std::f64::consts::PI * i as f64 * s)
    })
}

/// Draws a realization from a parametric ULA model: one deterministic
/// dominant path at the user's configured angle plus `paths - 1` scatter
/// paths with `CN(0, 0.1)` gains and uniform random angles. Entries are
/// scaled so a single path has unit average entry power.
pub fn draw_ula(geoms: &[UserGeometry], n: usize, paths: usize, seed: u64) -> Result<ChannelSet> {
    validate_load(geoms, n)?;
    if paths == 0 {
        return Err(Error::Validation("at least one path is required".into()));
    }
    let mu = vec![0.0; geoms.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_REDRAWS {
        let hs: Vec<CMat> = geoms
            .iter()
            .map(|g| {
                let m = g.num_antennas;
                let entry_scale = Complex64::new(((n * m) as f64).sqrt(), 0.0);
                let a_t = steering_vector(n, g.angle_deg);
                let a_r = steering_vector(m, 0.0);
                let mut h = &a_r * a_t.adjoint() * entry_scale;
                for _ in 1..paths {
                    let gain = complex_gaussian(&mut rng, 0.1);
                    let phi: f64 = rng.random_range(0.0..360.0);
                    let theta: f64 = rng.random_range(0.0..360.0);
                    let at = steering_vector(n, phi);
                    let ar = steering_vector(m, theta);
                    h += &ar * at.adjoint() * entry_scale * gain;
                }
                h
            })
            .collect();
        let set = assemble(geoms, n, &mu, hs, &mut rng);
        if realization_ok(&set) {
            return Ok(set);
        }
        if paths == 1 {
            // Single-path channels are deterministic; redrawing cannot help.
            break;
        }
    }
    Err(Error::RankDeficient {
        context: "draw_ula",
        ratio: 0.0,
    })
}

/// Effective channel seen by the rate formulas: `H_k / sqrt(L_k)` scaled by
/// `1 / sqrt(sigma2)` so noise has unit power.
pub fn normalized_channel(user: &UserChannel, sigma2: f64, use_estimates: bool) -> CMat {
    let h = if use_estimates { &user.h_est } else { &user.h };
    h * Complex64::new(1.0 / (user.path_loss * sigma2).sqrt(), 0.0)
}

/// Per-user squared singular values of the normalized channel
/// (`sigma_i^2(H_k) / (L_k sigma2)`), used by water-filling.
pub fn normalized_gains(user: &UserChannel, sigma2: f64, use_estimates: bool) -> DVector<f64> {
    let g = normalized_channel(user, sigma2, use_estimates);
    let sv = g.singular_values();
    DVector::from_iterator(sv.len(), sv.iter().map(|s| s * s))
}
