use sns_rsma::channel::{draw_iid_gaussian, UserGeometry};
use sns_rsma::rsma::{build_sns_basis, Weights};
use sns_rsma::sca::*;
use std::time::Instant;

fn main() {
    let geoms: Vec<UserGeometry> = (0..3)
        .map(|_| UserGeometry::new(50.0, 0.0, 2).unwrap())
        .collect();

    for (stat_tol, impr_tol) in [(1e-6, 1e-8), (1e-8, 1e-9)] {
        let mut outers = Vec::new();
        let mut secs = 0.0;
        let mut inners = 0usize;
        let mut values = Vec::new();
        let mut conv = 0;
        for seed in 0..10u64 {
            let ch = draw_iid_gaussian(&geoms, 6, &[0.0; 3], 14 + seed).unwrap();
            let basis = build_sns_basis(&ch, &[0, 1, 2], false).unwrap();
            let geo =
                sns_geometry(&ch, &basis, &Weights::equal(3), 100.0, 3.1623e-4, Csi::Perfect)
                    .unwrap();
            let mut opts = ScaOptions::default();
            opts.solver.stat_tol = stat_tol;
            opts.solver.impr_tol = impr_tol;
            let t0 = Instant::now();
            let outcome =
                recover_outcome(sca_maximize(&geo, InitStrategy::AlgorithmDefault, &opts)).unwrap();
            secs += t0.elapsed().as_secs_f64();
            outers.push(outcome.outer_iterations());
            inners += outcome.inner_iterations;
            values.push((outcome.value * 1e4).round() / 1e4);
            conv += outcome.converged as usize;
        }
        println!(
            "stat={stat_tol:.0e} impr={impr_tol:.0e}: conv={conv}/10 outers={outers:?} inner_total={inners} time={secs:.2}s"
        );
        println!("   values={values:?}");
    }
}
