//! Plots success rate against steps for the training logs given as arguments.
//!
//! `cargo run --example plot_logs -- runs/a/train_log.csv runs/b/train_log.csv`

use std::path::PathBuf;

fn main() -> cannav::Result<()> {
    let logs: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    if logs.is_empty() {
        eprintln!("usage: plot_logs <train_log.csv>...");
        std::process::exit(2);
    }
    let summary = cannav::harness::plot_cmd(&logs, &PathBuf::from("sr.svg"))?;
    println!(
        "sr.svg: {:?} points per series, {} rows skipped",
        summary.vertices, summary.skipped
    );
    Ok(())
}
