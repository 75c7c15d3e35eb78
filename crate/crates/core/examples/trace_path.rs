//! Trace the whole solution path of a synthetic instance and list its
//! breakpoints.
//!
//! cargo run --example trace_path

use fairpath::synth::{two_gaussians, GaussianSpec};
use fairpath::{standardize, trace_path};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = GaussianSpec {
        n: 40,
        ..Default::default()
    };
    let ds = standardize(&two_gaussians(&spec, 7)?)?;
    let path = trace_path(&ds, 1.0)?;
    println!(
        "eps_max = {:.6}, {} segments",
        path.eps_max,
        path.segments.len()
    );
    for bp in &path.breakpoints {
        let events: Vec<String> = bp
            .events
            .iter()
            .map(|e| match e.index {
                Some(i) => format!("{} #{i}", e.kind.as_str()),
                None => e.kind.as_str().to_string(),
            })
            .collect();
        println!(
            "{:>10.6}  p {:>10.5}  gamma {:>9.4}  {}",
            bp.eps,
            bp.objective,
            bp.gamma,
            events.join(", ")
        );
    }
    Ok(())
}
