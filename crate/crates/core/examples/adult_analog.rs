//! Trace the full path on the 500-row Adult subsample and print how the
//! price of fairness and the group welfare evolve.
//!
//! cargo run --release --example adult_analog

use std::fs::File;
use std::path::Path;
use std::time::Instant;

use fairpath::path::trace_path;
use fairpath::{load_dataset, standardize, Schema};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let schema = Schema::from_file(&dir.join("adult.schema"))?;
    let ds = standardize(&load_dataset(
        File::open(dir.join("adult_500.csv"))?,
        &schema,
    )?)?;

    let t = Instant::now();
    let path = trace_path(&ds, 1.0)?;
    println!(
        "n = {}, eps_max = {:.6}, {} breakpoints in {:.2?}",
        ds.n(),
        path.eps_max,
        path.breakpoints.len(),
        t.elapsed()
    );
    let stride = (path.segments.len() / 12).max(1);
    println!(
        "{:>12} {:>12} {:>10} {:>8} {:>8}",
        "eps", "objective", "gamma", "W0", "W1"
    );
    for seg in path.segments.iter().step_by(stride) {
        println!(
            "{:>12.6} {:>12.6} {:>10.4} {:>8.3} {:>8.3}",
            seg.eps_start, seg.objective_start, seg.gamma_start, seg.welfare.w0, seg.welfare.w1
        );
    }
    let d = &path.diagnostics;
    println!(
        "cold solves {}, face pivots {}, max KKT residual {:.2e}",
        d.cold_solves, d.face_pivots, d.max_kkt_residual
    );
    Ok(())
}
