//! Recover the welfare weights under which a classifier's allocation is
//! optimal, and compare them with utilitarian and max-min weights.
//!
//! cargo run --example implied_weights

use fairpath::synth::{two_gaussians, GaussianSpec};
use fairpath::welfare::{
    binary_implied_weights, reference_weights, QuadraticUtility, ReferenceKind,
};
use fairpath::{group_stats, recover_primal, standardize, FairSvm, SolverOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = GaussianSpec {
        n: 20,
        ..Default::default()
    };
    let ds = standardize(&two_gaussians(&spec, 3)?)?;
    let svm = FairSvm::new(&ds, 1.0, SolverOptions::default())?;
    let sol = svm.solve(0.5 * svm.eps_max())?;
    let primal = recover_primal(&sol, &ds, &group_stats(&ds)?)?;
    let chosen: Vec<bool> = primal.predictions(&ds).iter().map(|&p| p > 0).collect();
    let budget = chosen.iter().filter(|&&c| c).count();

    let utility = QuadraticUtility::from_dataset(&ds, 1.0)?;
    let profile = binary_implied_weights(&utility, budget)?;
    let gains: Vec<f64> = (0..ds.n()).map(|i| utility.binary_gain(i)).collect();
    let bentham = reference_weights(ReferenceKind::Benthamite, &gains);
    let rawls = reference_weights(ReferenceKind::Rawlsian, &gains);
    println!("B = {budget}, k = {:.6}", profile.k);
    println!(
        "{:>4} {:>6} {:>8} {:>8} {:>8} {:>8}",
        "i", "pos", "gain", "w", "bentham", "rawls"
    );
    for i in 0..ds.n() {
        println!(
            "{i:>4} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            chosen[i], gains[i], profile.w[i], bentham[i], rawls[i]
        );
    }
    Ok(())
}
