//! Prints every non-passing ledger entry for the measure catalog, or for the specs given
//! on the command line.

use std::time::Instant;

use hitgap::bounds::{run_ledger, LedgerOptions, Status};
use hitgap::{Measure1D, PotentialSpec};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let specs: Vec<String> = if args.is_empty() {
        [
            "gaussian:sigma=1",
            "exp_power:p=1",
            "exp_power:p=1.5",
            "exp_power:p=4",
            "double_well:a=1,h=1",
            "uniform:r=1",
            "heavy_tail:alpha=3",
            "heavy_tail:alpha=4",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    } else {
        args
    };
    for s in &specs {
        let t = Instant::now();
        let m = Measure1D::build(&PotentialSpec::parse(s).unwrap(), 4096).unwrap();
        let entries = run_ledger(&m, &LedgerOptions::default());
        let fails = entries.iter().filter(|e| e.status == Status::Fail).count();
        println!("{s}: {} entries, {fails} fail ({:.1}s)", entries.len(), t.elapsed().as_secs_f64());
        for e in entries.iter().filter(|e| e.status != Status::Pass) {
            println!("  {:<20} {:?} lhs={:.4e} rhs={:.4e} {}", e.id, e.status, e.lhs, e.rhs, e.notes);
        }
    }
}
