//! Look for breakpoints where relaxing the fairness tolerance makes a group
//! better off and lowers the loss, i.e. where the tighter solution is
//! Pareto dominated.
//!
//! cargo run --example pareto_witness

use fairpath::synth::{two_gaussians, GaussianSpec};
use fairpath::{standardize, trace_path, ParetoTag};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for seed in 0..10 {
        let spec = GaussianSpec {
            n: 30,
            ..Default::default()
        };
        let ds = standardize(&two_gaussians(&spec, seed)?)?;
        let path = trace_path(&ds, 1.0)?;
        for bp in path
            .interior_breakpoints()
            .filter(|b| b.tag == ParetoTag::Dominated)
        {
            let (b, a) = (bp.welfare_before, bp.welfare_after);
            println!(
                "seed {seed}: eps {:.5}  W0 {:.3} -> {:.3}  W1 {:.3} -> {:.3}  ({})",
                bp.eps,
                b.w0,
                a.w0,
                b.w1,
                a.w1,
                bp.events
                    .iter()
                    .map(|e| e.kind.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            );
        }
    }
    Ok(())
}
