//! Analytic operation-count estimates for precoder computation and power
//! allocation, per scheme, as functions of the system dimensions.
//!
//! The estimates are the arguments of the asymptotic complexity bounds:
//! QR-based null-space computation costs `2 N^3`, matrix inversion
//! `(3/2) N^3`, per-user SVDs `sum M_k^3`, and an interior-point solve over
//! `v` real variables to tolerance `eps` costs `n_iter * v^{3/2} log(1/eps)`
//! (one outer SCA iteration each). `V = N^2 + sum_k N_k^2` counts the real
//! degrees of freedom of the null-space-structured problem.

/// One scheme's estimated operation counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityEntry {
    pub scheme: &'static str,
    /// Precoder-construction cost.
    pub precoder: f64,
    /// Total power-allocation cost (all SCA iterations).
    pub pa_total: f64,
}

/// Real optimization-variable count of the null-space-structured problem,
/// `V = N^2 + sum_k N_k^2` with `N_k = N - sum_{j<k} M_j`.
pub fn variable_count(n: usize, m: &[usize]) -> f64 {
    let mut v = (n * n) as f64;
    let mut used = 0usize;
    for &mk in m {
        let nk = n - used;
        v += (nk * nk) as f64;
        used += mk;
    }
    v
}

/// Operation-count table for every scheme at one configuration.
///
/// `n_iter` is the SCA iteration count to use for the iterative schemes and
/// `eps` the numerical tolerance (the log factor is natural).
pub fn complexity_report(n: usize, m: &[usize], eps: f64, n_iter: usize) -> Vec<ComplexityEntry> {
    let nf = n as f64;
    let k = m.len() as f64;
    let log_eps = (1.0 / eps).ln();
    let sum_m3: f64 = m.iter().map(|&mk| (mk * mk * mk) as f64).sum();
    let v = variable_count(n, m);
    let iters = n_iter as f64;

    vec![
        ComplexityEntry {
            scheme: "SNS",
            precoder: 2.0 * nf.powi(3) + k * nf.powf(1.5) * log_eps,
            pa_total: iters * v.powf(1.5) * log_eps,
        },
        ComplexityEntry {
            scheme: "DIRECT_SCA",
            precoder: 0.0,
            pa_total: iters * nf.powi(3) * k.powf(1.5) * log_eps,
        },
        ComplexityEntry {
            scheme: "BD_RSMA",
            precoder: 2.0 * nf.powi(3) + sum_m3,
            pa_total: iters * nf.powi(3) * log_eps,
        },
        ComplexityEntry {
            scheme: "RZF",
            precoder: 1.5 * nf.powi(3),
            pa_total: iters * nf.powf(1.5) * log_eps,
        },
        ComplexityEntry {
            scheme: "BD",
            precoder: 2.0 * nf.powi(3) + sum_m3,
            pa_total: nf.powf(1.5) * log_eps,
        },
        ComplexityEntry {
            scheme: "ZF",
            precoder: 1.5 * nf.powi(3),
            pa_total: nf.powf(1.5) * log_eps,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variable_count_example() {
        // N = 4, M = (2, 2): N_1 = 4, N_2 = 2 -> V = 16 + 16 + 4.
        assert_eq!(variable_count(4, &[2, 2]), 36.0);
    }

    #[test]
    fn zf_and_bd_pa_identical() {
        let rows = complexity_report(8, &[2, 2, 2, 2], 1e-5, 20);
        let zf = rows.iter().find(|r| r.scheme == "ZF").unwrap();
        let bd = rows.iter().find(|r| r.scheme == "BD").unwrap();
        assert_eq!(zf.pa_total, bd.pa_total);
    }

    #[test]
    fn direct_sca_dominates_at_scale() {
        // K = 8 critically loaded two-antenna users: direct optimization is
        // the costliest overall.
        let m = vec![2usize; 8];
        let rows = complexity_report(16, &m, 1e-5, 20);
        let total = |s: &str| {
            let r = rows.iter().find(|r| r.scheme == s).unwrap();
            r.precoder + r.pa_total
        };
        assert!(total("DIRECT_SCA") > total("SNS"));
        assert!(total("DIRECT_SCA") > total("BD_RSMA"));
        assert!(total("DIRECT_SCA") > total("RZF"));
    }
}
