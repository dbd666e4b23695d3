//! One recurrent net that approximates a different past-dependent target at
//! every step simultaneously. Grid sup-errors are printed per step.

use std::sync::Arc;

use rnn_surgery::approx::{
    assemble_sequence_approximator, sup_error_on_grid, ApproxBudget, PastDependentTarget,
};

fn main() {
    // step 1 depends on x1, step 2 on (x1, x2); both bounded by k = 1
    let targets = vec![
        PastDependentTarget::new(
            1,
            1,
            1,
            1.0,
            1.0,
            Arc::new(|x: &[f64]| vec![0.8 * x[0] * (1.0 - x[0])]),
        )
        .unwrap(),
        PastDependentTarget::new(
            2,
            1,
            1,
            1.0,
            1.0,
            Arc::new(|x: &[f64]| vec![0.5 * (x[0] - x[1]) * (x[0] - x[1])]),
        )
        .unwrap(),
    ];
    for tg in &targets {
        tg.spot_check_bound(9).unwrap();
    }

    let budget = ApproxBudget::new(2, 5).unwrap();
    for resolution in [2usize, 4, 8] {
        let net = assemble_sequence_approximator(&targets, &budget, resolution).unwrap();
        let errs: Vec<f64> = targets
            .iter()
            .map(|tg| sup_error_on_grid(&net, tg, 33).unwrap())
            .collect();
        println!(
            "resolution {resolution}: width {} depth {} | step errors {:?}",
            net.width(),
            net.depth(),
            errs.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>()
        );
    }
}
