//! Derivative-based sensitivity of the successive null-space structure to
//! CSI errors: the residual inter-user interference a user receives from
//! later-ordered users (whose estimated bases are no longer orthogonal to
//! its true channel) and from earlier-ordered users (whose bases moved),
//! together with the analytical upper bounds on both.
//!
//! For the user at position `k` with unit-normalized transmitted vectors
//! `v_j = X_j^{1/2} s_j`:
//!
//! ```text
//! Xi_up_k   = (1/sqrt(L_k)) H_k sum_{j>k} PsiBar_j v_j
//! Xi_down_k = (1/sqrt(L_k)) H_k sum_{j<k} (PsiBar_j - Psi_j) v_j
//! ```
//!
//! and the bounds
//!
//! ```text
//! |Xi_up_k|   <= (1/sqrt(L_k)) |dH_k| sum_{j>k} |v_j|
//! |Xi_down_k| <= (1/sqrt(L_k)) |H_k|
//!                sum_{j<k} [ |FBar_j^+| |dF_j| - ln(1 - |C_j|) ] |v_j|,
//! C_j = Psi_j^H dF_j^H (FBar_j FBar_j^H)^{-1} dF_j Psi_j,
//! ```
//!
//! with the natural logarithm (the bound's series expansion is in nats).
//! The second bound requires `|C_j| < 1`; draws violating it are flagged,
//! not fatal. Norms are computed both for worst-case-aligned unit vectors
//! (induced operator norms, deterministic) and for sampled unit vectors
//! (the Monte-Carlo methodology of the aggregate experiments); the bounds
//! hold for either by norm submultiplicativity.

use num_complex::Complex64;

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::numerics::{pseudo_inverse, spectral_norm, CMat, CVec};
use crate::rsma::SnsBasis;

/// How the per-user transmitted vectors enter the interference norms.
#[derive(Debug, Clone)]
pub enum IuiProbe {
    /// Worst-case-aligned unit vectors: per-term induced operator norms.
    WorstCase,
    /// Explicit unit vectors per position (`v_j` with `|v_j| = 1`), as in a
    /// Monte-Carlo draw.
    Sample(Vec<CVec>),
}

/// Empirical interference amplitudes per position.
#[derive(Debug, Clone)]
pub struct IuiEmpirical {
    /// `|Xi_up_k|`: interference from later-ordered users.
    pub xi_up: Vec<f64>,
    /// `|Xi_down_k|`: interference from earlier-ordered users' basis shift.
    pub xi_down: Vec<f64>,
}

/// Analytical bound values per position.
#[derive(Debug, Clone)]
pub struct IuiBounds {
    pub bound_up: Vec<f64>,
    /// Infinite where some required `|C_j| >= 1`.
    pub bound_down: Vec<f64>,
    /// `|C_j|` per position (position 0 has no augmented matrix; entry 0).
    pub c_norms: Vec<f64>,
    /// All `|C_j| < 1`.
    pub valid: bool,
}

/// One draw's empirical values and bounds together.
#[derive(Debug, Clone)]
pub struct IuiSample {
    pub empirical: IuiEmpirical,
    pub bounds: IuiBounds,
}

fn check_pair(basis_true: &SnsBasis, basis_est: &SnsBasis) -> Result<()> {
    if basis_true.order != basis_est.order {
        return Err(Error::OrderMismatch);
    }
    if basis_true.from_estimates || !basis_est.from_estimates {
        return Err(Error::Validation(
            "expected one true-channel basis and one estimate-built basis".into(),
        ));
    }
    Ok(())
}

fn norms_or_default(symbol_norms: Option<&[f64]>, k: usize) -> Result<Vec<f64>> {
    match symbol_norms {
        Some(s) => {
            if s.len() != k {
                return Err(Error::DimensionError {
                    context: "sensitivity",
                    details: "one symbol norm per user required".into(),
                });
            }
            if s.iter().any(|&v| v < 0.0) {
                return Err(Error::Validation("symbol norms must be >= 0".into()));
            }
            Ok(s.to_vec())
        }
        None => Ok(vec![1.0; k]),
    }
}

/// Empirical residual-interference amplitudes of one realization pair.
pub fn empirical_iui(
    channels: &ChannelSet,
    basis_true: &SnsBasis,
    basis_est: &SnsBasis,
    symbol_norms: Option<&[f64]>,
    probe: &IuiProbe,
) -> Result<IuiEmpirical> {
    check_pair(basis_true, basis_est)?;
    let k = basis_true.num_users();
    let snorm = norms_or_default(symbol_norms, k)?;
    if let IuiProbe::Sample(vs) = probe {
        if vs.len() != k {
            return Err(Error::DimensionError {
                context: "empirical_iui",
                details: "one probe vector per user required".into(),
            });
        }
        for (i, v) in vs.iter().enumerate() {
            if v.len() != basis_true.dim_at(i) {
                return Err(Error::DimensionError {
                    context: "empirical_iui",
                    details: format!("probe vector {i} has wrong dimension"),
                });
            }
        }
    }

    let mut xi_up = Vec::with_capacity(k);
    let mut xi_down = Vec::with_capacity(k);
    for i in 0..k {
        let user = &channels.users[basis_true.order[i]];
        let scale = 1.0 / user.path_loss.sqrt();
        match probe {
            IuiProbe::WorstCase => {
                let mut up = 0.0;
                for j in (i + 1)..k {
                    up += spectral_norm(&(&user.h * &basis_est.bases[j])) * snorm[j];
                }
                let mut down = 0.0;
                for j in 0..i {
                    let dpsi = &basis_est.bases[j] - &basis_true.bases[j];
                    down += spectral_norm(&(&user.h * dpsi)) * snorm[j];
                }
                xi_up.push(scale * up);
                xi_down.push(scale * down);
            }
            IuiProbe::Sample(vs) => {
                let m = user.h.nrows();
                let mut up = CVec::zeros(m);
                for j in (i + 1)..k {
                    up += &user.h * (&basis_est.bases[j] * &vs[j]) * Complex64::new(snorm[j], 0.0);
                }
                let mut down = CVec::zeros(m);
                for j in 0..i {
                    let dpsi = &basis_est.bases[j] - &basis_true.bases[j];
                    down += &user.h * (dpsi * &vs[j]) * Complex64::new(snorm[j], 0.0);
                }
                xi_up.push(scale * up.norm());
                xi_down.push(scale * down.norm());
            }
        }
    }
    Ok(IuiEmpirical { xi_up, xi_down })
}

/// Analytical bounds on the residual-interference amplitudes.
pub fn iui_bounds(
    channels: &ChannelSet,
    basis_true: &SnsBasis,
    basis_est: &SnsBasis,
    symbol_norms: Option<&[f64]>,
) -> Result<IuiBounds> {
    check_pair(basis_true, basis_est)?;
    let k = basis_true.num_users();
    let snorm = norms_or_default(symbol_norms, k)?;

    // Per-position basis-shift bound terms
    // |FBar^+||dF| - ln(1 - |C|), with term 0 for the identity basis.
    let mut terms = Vec::with_capacity(k);
    let mut c_norms = Vec::with_capacity(k);
    let mut valid = true;
    for j in 0..k {
        if basis_true.augmented[j].nrows() == 0 {
            terms.push(0.0);
            c_norms.push(0.0);
            continue;
        }
        let f_true = &basis_true.augmented[j];
        let f_est = &basis_est.augmented[j];
        let df = f_est - f_true;
        let df_norm = spectral_norm(&df);
        if df_norm == 0.0 {
            terms.push(0.0);
            c_norms.push(0.0);
            continue;
        }
        let pinv = pseudo_inverse(f_est)?;
        let gram = f_est * f_est.adjoint();
        let rows = gram.nrows();
        let inv = crate::numerics::hpd_solve(&gram, &CMat::identity(rows, rows), "iui_bounds")?;
        let c = basis_true.bases[j].adjoint() * df.adjoint() * inv * &df * &basis_true.bases[j];
        let c_norm = spectral_norm(&c);
        c_norms.push(c_norm);
        if c_norm < 1.0 {
            terms.push(pinv_norm_times(&pinv, df_norm) - (1.0 - c_norm).ln());
        } else {
            valid = false;
            terms.push(f64::INFINITY);
        }
    }

    let mut bound_up = Vec::with_capacity(k);
    let mut bound_down = Vec::with_capacity(k);
    for i in 0..k {
        let user = &channels.users[basis_true.order[i]];
        let scale = 1.0 / user.path_loss.sqrt();
        let dh_norm = spectral_norm(&user.delta_h);
        let up: f64 = ((i + 1)..k).map(|j| snorm[j]).sum::<f64>() * dh_norm * scale;
        bound_up.push(up);
        let h_norm = spectral_norm(&user.h);
        let down: f64 = (0..i).map(|j| terms[j] * snorm[j]).sum::<f64>() * h_norm * scale;
        bound_down.push(down);
    }
    Ok(IuiBounds {
        bound_up,
        bound_down,
        c_norms,
        valid,
    })
}

fn pinv_norm_times(pinv: &CMat, df_norm: f64) -> f64 {
    spectral_norm(pinv) * df_norm
}

/// Empirical values and bounds of one realization in one call.
pub fn iui_sample(
    channels: &ChannelSet,
    basis_true: &SnsBasis,
    basis_est: &SnsBasis,
    symbol_norms: Option<&[f64]>,
    probe: &IuiProbe,
) -> Result<IuiSample> {
    Ok(IuiSample {
        empirical: empirical_iui(channels, basis_true, basis_est, symbol_norms, probe)?,
        bounds: iui_bounds(channels, basis_true, basis_est, symbol_norms)?,
    })
}

/// Null-space perturbation check for a single matrix pair.
#[derive(Debug, Clone)]
pub struct Lemma2Report {
    /// `|A PsiBar|`: the leakage of the perturbed basis through the
    /// unperturbed matrix.
    pub a_psi_bar_norm: f64,
    /// Its bound, `|dA|`.
    pub bound_leakage: f64,
    /// `|PsiBar - Psi|` for the bases as computed (no rotation).
    pub delta_psi_computed: f64,
    /// Minimum of `|PsiBar Z - Psi|` over the sampled rotation candidates.
    pub min_delta_psi: f64,
    /// `|ABar^+||dA| - ln(1 - |C|)`; infinite when `|C| >= 1`.
    pub bound_rotation: f64,
    pub c_norm: f64,
    pub valid: bool,
}

/// Verifies the null-space perturbation bounds for one `(A, dA)` pair.
///
/// The leakage bound holds for any orthonormal bases. The basis-shift bound
/// holds for a suitable rotation of the perturbed basis; the minimum is
/// estimated over the aligned (orthogonal-Procrustes) rotation, the
/// identity, and 32 seeded random unitary candidates.
pub fn lemma2_check(a: &CMat, da: &CMat, seed: u64) -> Result<Lemma2Report> {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    let a_bar = a + da;
    let psi = crate::numerics::null_space_basis(a)?;
    let psi_bar = crate::numerics::null_space_basis(&a_bar)?;
    let dim = psi.ncols();

    let a_psi_bar_norm = spectral_norm(&(a * &psi_bar));
    let bound_leakage = spectral_norm(da);

    let delta_psi_computed = spectral_norm(&(&psi_bar - &psi));

    // Rotation candidates.
    let mut candidates: Vec<CMat> = vec![CMat::identity(dim, dim)];
    let overlap = psi_bar.adjoint() * &psi;
    let svd = overlap.clone().svd(true, true);
    let procrustes = svd.u.as_ref().unwrap() * svd.v_t.as_ref().unwrap();
    candidates.push(procrustes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..32 {
        let g = CMat::from_fn(dim, dim, |_, _| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im)
        });
        candidates.push(g.qr().q());
    }
    let min_delta_psi = candidates
        .iter()
        .map(|z| spectral_norm(&(&psi_bar * z - &psi)))
        .fold(f64::INFINITY, f64::min);

    let pinv = pseudo_inverse(&a_bar)?;
    let gram = &a_bar * a_bar.adjoint();
    let rows = gram.nrows();
    let inv = crate::numerics::hpd_solve(&gram, &CMat::identity(rows, rows), "lemma2_check")?;
    let c = psi.adjoint() * da.adjoint() * inv * da * &psi;
    let c_norm = spectral_norm(&c);
    let valid = c_norm < 1.0;
    let bound_rotation = if valid {
        spectral_norm(&pinv) * spectral_norm(da) - (1.0 - c_norm).ln()
    } else {
        f64::INFINITY
    };

    Ok(Lemma2Report {
        a_psi_bar_norm,
        bound_leakage,
        delta_psi_computed,
        min_delta_psi,
        bound_rotation,
        c_norm,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_iid_gaussian, trial_seed, UserGeometry};
    use crate::rsma::build_sns_basis;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn fig_setup(mu2: f64, seed: u64) -> (ChannelSet, SnsBasis, SnsBasis) {
        let geoms: Vec<UserGeometry> = (0..6)
            .map(|_| UserGeometry::new(50.0, 0.0, 2).unwrap())
            .collect();
        let mut mu = vec![0.0; 6];
        mu[1] = mu2; // user 2 of the experiment (0-based index 1)
        let ch = draw_iid_gaussian(&geoms, 12, &mu, seed).unwrap();
        let order: Vec<usize> = (0..6).collect();
        let bt = build_sns_basis(&ch, &order, false).unwrap();
        let be = build_sns_basis(&ch, &order, true).unwrap();
        (ch, bt, be)
    }

    #[test]
    fn perfect_csi_gives_zero_iui() {
        let (ch, bt, be) = fig_setup(0.0, 1);
        let s = iui_sample(&ch, &bt, &be, None, &IuiProbe::WorstCase).unwrap();
        for i in 0..6 {
            assert!(s.empirical.xi_up[i] <= 1e-12);
            assert!(s.empirical.xi_down[i] <= 1e-12);
            assert!(s.bounds.bound_up[i] <= 1e-12);
            assert!(s.bounds.bound_down[i] <= 1e-12);
        }
        assert!(s.bounds.valid);
    }

    #[test]
    fn single_error_user_zero_pattern() {
        // Error only on the second-ordered user: no upstream interference
        // except at that user, and no basis shift before position 3.
        let (ch, bt, be) = fig_setup(0.05, 2);
        let s = iui_sample(&ch, &bt, &be, None, &IuiProbe::WorstCase).unwrap();
        for i in 0..6 {
            if i == 1 {
                assert!(s.empirical.xi_up[i] > 1e-8);
            } else {
                assert!(s.empirical.xi_up[i] <= 1e-9, "xi_up[{i}] = {}", s.empirical.xi_up[i]);
            }
            if i <= 2 {
                assert!(s.empirical.xi_down[i] <= 1e-9);
            } else {
                assert!(s.empirical.xi_down[i] > 1e-12);
            }
        }
    }

    #[test]
    fn bounds_hold_on_random_draws() {
        let mut excluded = 0;
        for trial in 0..50u64 {
            let (ch, bt, be) = fig_setup(0.05, trial_seed(3, trial));
            let s = iui_sample(&ch, &bt, &be, None, &IuiProbe::WorstCase).unwrap();
            for i in 0..6 {
                assert!(
                    s.empirical.xi_up[i] <= s.bounds.bound_up[i] + 1e-12,
                    "up bound violated at {i}"
                );
                if s.bounds.c_norms.iter().all(|&c| c <= 0.5) {
                    assert!(
                        s.empirical.xi_down[i] <= s.bounds.bound_down[i] + 1e-12,
                        "down bound violated at {i}: {} > {}",
                        s.empirical.xi_down[i],
                        s.bounds.bound_down[i]
                    );
                } else {
                    excluded += 1;
                }
            }
        }
        // The loose-bound regime should be rare at this error level.
        assert!(excluded < 30, "excluded {excluded}");
    }

    #[test]
    fn sampled_probe_matches_naive_summation() {
        let (ch, bt, be) = fig_setup(0.1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vs: Vec<CVec> = (0..6)
            .map(|i| {
                let mut v = CVec::from_fn(bt.dim_at(i), |_, _| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    Complex64::new(re, im)
                });
                let n = v.norm();
                v /= Complex64::new(n, 0.0);
                v
            })
            .collect();
        let s = empirical_iui(&ch, &bt, &be, None, &IuiProbe::Sample(vs.clone())).unwrap();
        // Naive summation oracle.
        for i in 0..6 {
            let user = &ch.users[bt.order[i]];
            let mut down = CVec::zeros(user.h.nrows());
            for j in 0..i {
                let dpsi = &be.bases[j] - &bt.bases[j];
                let contrib = &user.h * dpsi * &vs[j];
                down += contrib;
            }
            let expected = down.norm() / user.path_loss.sqrt();
            assert!((s.xi_down[i] - expected).abs() <= 1e-10 * expected.max(1.0));
        }
    }

    #[test]
    fn worst_case_dominates_samples() {
        let (ch, bt, be) = fig_setup(0.05, 6);
        let worst = empirical_iui(&ch, &bt, &be, None, &IuiProbe::WorstCase).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let vs: Vec<CVec> = (0..6)
                .map(|i| {
                    let mut v = CVec::from_fn(bt.dim_at(i), |_, _| {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        Complex64::new(re, im)
                    });
                    let n = v.norm();
                    v /= Complex64::new(n, 0.0);
                    v
                })
                .collect();
            let s = empirical_iui(&ch, &bt, &be, None, &IuiProbe::Sample(vs)).unwrap();
            for i in 0..6 {
                assert!(s.xi_up[i] <= worst.xi_up[i] + 1e-10);
                assert!(s.xi_down[i] <= worst.xi_down[i] + 1e-10);
            }
        }
    }

    #[test]
    fn scalar_leakage_bound_by_hand() {
        // A = [1 0], dA = [0, delta]: |A PsiBar| <= delta.
        let delta = 1e-3;
        let mut a = CMat::zeros(1, 2);
        a[(0, 0)] = Complex64::new(1.0, 0.0);
        let mut da = CMat::zeros(1, 2);
        da[(0, 1)] = Complex64::new(delta, 0.0);
        let rep = lemma2_check(&a, &da, 1).unwrap();
        assert!(rep.a_psi_bar_norm <= delta + 1e-15);
        assert!((rep.bound_leakage - delta).abs() <= 1e-18);
        // Analytically: PsiBar spans (delta, -1)/sqrt(1+delta^2) (up to
        // phase), so |A PsiBar| = delta/sqrt(1+delta^2).
        let expected = delta / (1.0 + delta * delta).sqrt();
        assert!((rep.a_psi_bar_norm - expected).abs() <= 1e-12);
    }

    #[test]
    fn lemma2_zero_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = CMat::from_fn(2, 5, |_, _| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im)
        });
        let rep = lemma2_check(&a, &CMat::zeros(2, 5), 2).unwrap();
        assert!(rep.min_delta_psi <= 1e-12);
        assert!(rep.a_psi_bar_norm <= 1e-12);
        assert!(rep.c_norm <= 1e-12);
    }

    #[test]
    fn lemma2_small_perturbation_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let a = CMat::from_fn(2, 5, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            });
            let da = CMat::from_fn(2, 5, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            }) * Complex64::new(1e-4 * spectral_norm(&a), 0.0);
            let rep = lemma2_check(&a, &da, trial).unwrap();
            assert!(rep.valid);
            assert!(rep.a_psi_bar_norm <= rep.bound_leakage + 1e-15);
            assert!(
                rep.min_delta_psi <= rep.bound_rotation + 1e-12,
                "min {} bound {}",
                rep.min_delta_psi,
                rep.bound_rotation
            );
            // The bound is tight within an order of magnitude for small
            // perturbations.
            assert!(rep.bound_rotation <= 50.0 * rep.min_delta_psi.max(1e-12));
        }
    }

    #[test]
    fn lemma2_large_perturbation_flags_invalid() {
        // A perturbation that nearly annihilates one row of A while pushing
        // it into the null direction makes |C| >= 1: the perturbed matrix is
        // close to singular exactly where the error points at null(A).
        let mut a = CMat::zeros(2, 3);
        a[(0, 0)] = Complex64::new(1.0, 0.0);
        a[(1, 1)] = Complex64::new(1.0, 0.0);
        let mut da = CMat::zeros(2, 3);
        da[(1, 1)] = Complex64::new(-0.999, 0.0);
        da[(1, 2)] = Complex64::new(0.5, 0.0);
        let rep = lemma2_check(&a, &da, 1).unwrap();
        assert!(!rep.valid, "expected |C| >= 1, got {}", rep.c_norm);
        assert!(rep.bound_rotation.is_infinite());
        // The leakage bound needs no validity assumption.
        assert!(rep.a_psi_bar_norm <= rep.bound_leakage + 1e-15);
    }
}
