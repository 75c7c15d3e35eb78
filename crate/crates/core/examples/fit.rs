//! Solve the fair SVM at a few tolerances on a synthetic instance and print
//! the loss, the price of tightening and the fitted hyperplane.
//!
//! cargo run --example fit

use fairpath::synth::{two_gaussians, GaussianSpec};
use fairpath::{group_stats, recover_primal, standardize, FairSvm, SolverOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = GaussianSpec {
        n: 60,
        ..Default::default()
    };
    let ds = standardize(&two_gaussians(&spec, 1)?)?;
    let stats = group_stats(&ds)?;
    let svm = FairSvm::new(&ds, 1.0, SolverOptions::default())?;
    println!("eps_max = {:.6}", svm.eps_max());
    for frac in [0.0, 0.25, 0.5, 1.0] {
        let eps = frac * svm.eps_max();
        let sol = svm.solve(eps)?;
        let primal = recover_primal(&sol, &ds, &stats)?;
        println!(
            "eps {eps:.5}  p {:.6}  gamma {:>9.4}  theta {:?}  b {:.4}  cov gap {:.2e}",
            sol.objective,
            sol.gamma,
            primal
                .theta
                .iter()
                .map(|v| (v * 1e4).round() / 1e4)
                .collect::<Vec<_>>(),
            primal.b,
            primal.cov_gap
        );
    }
    Ok(())
}
