//! Enumerate every labeling a hyperplane can produce on a small random
//! cloud and compare the count with the closed form.
//!
//! cargo run --example enumerate_labelings

use fairpath::labeling::{cover_count, enumerate_labelings, PointCloud};
use fairpath::synth::uniform_cloud;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (n, d) in [(6, 1), (6, 2), (8, 2), (8, 3)] {
        let pc = PointCloud::from_rows(&uniform_cloud(n, d, 42))?;
        let e = enumerate_labelings(&pc)?;
        println!(
            "n {n} d {d}: {} labelings (closed form {}), {} pivots",
            e.count(),
            cover_count(n, d),
            e.work
        );
    }
    let pc = PointCloud::from_rows(&uniform_cloud(5, 2, 1))?;
    for w in enumerate_labelings(&pc)?.labelings.iter().take(6) {
        let signs: String = w
            .signs
            .iter()
            .map(|&s| if s > 0 { '+' } else { '-' })
            .collect();
        println!(
            "{signs}  theta {:?}  b {:.3}  margin {:.3}",
            w.theta, w.b, w.margin
        );
    }
    Ok(())
}
