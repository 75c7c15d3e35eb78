mod common;

use common::{grid_compare, midpoint_check, synthetic};
use fairpath::{trace_path, FairSvm, SolverOptions};

#[test]
fn path_agrees_with_grid_and_reference() {
    for seed in [11u64, 12, 13] {
        let ds = synthetic(seed, 30, 2);
        let path = trace_path(&ds, 1.0).unwrap();
        let svm = FairSvm::new(&ds, 1.0, SolverOptions::default()).unwrap();
        let report = grid_compare(&ds, &svm, &path, 1e-3, 2e-3);
        assert!(report.ok(), "seed {seed}: {report:?}");
        let (worst, checked, _) = midpoint_check(&ds, 1.0, &path);
        assert!(checked > 0);
        assert!(worst < 1e-5, "seed {seed}: midpoint gap {worst}");
        eprintln!("seed {seed}: {report:?} eps_max {}", path.eps_max);
    }
}
