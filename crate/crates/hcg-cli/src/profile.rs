//! `hcg profile-k`: sweep D-ReLU keep widths per edge type, write the raw
//! sweep CSV and the chosen-width JSON, and print the winners.

use crate::{ensure_out_dir, load_graph_arg, write_file, write_json, CliError};
use clap::Args;
use hcg_core::scheduler::profile_k;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Args)]
pub struct ProfileArgs {
    /// Graph file to profile on.
    graph: PathBuf,
    /// Comma-separated candidate keep widths.
    #[arg(long, default_value = "2,4,8,16,32,64")]
    candidates: String,
    /// Timed repetitions per candidate (median taken, minimum 3).
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Output directory for k_profile.json and k_sweep.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn parse_candidates(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("bad candidate width {tok:?}")))
        })
        .collect()
}

pub fn run(args: ProfileArgs, workers: usize) -> Result<(), CliError> {
    let g = load_graph_arg(&args.graph)?;
    let candidates = parse_candidates(&args.candidates)?;
    let (profile, samples) = profile_k(&g, &candidates, args.reps, workers)?;

    ensure_out_dir(&args.out)?;
    write_json(&args.out.join("k_profile.json"), &profile)?;

    let mut csv = String::from("edge_type,k,rep,init_nanos,fwd_nanos,bwd_nanos\n");
    for s in &samples {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            s.edge_type, s.k, s.rep, s.init_nanos, s.fwd_nanos, s.bwd_nanos
        )
        .expect("string write");
    }
    write_file(&args.out.join("k_sweep.csv"), &csv)?;

    for e in &profile.edges {
        let medians: Vec<String> = e
            .runtimes
            .iter()
            .map(|r| format!("k={} {:.3}ms", r.k, r.median_total_nanos as f64 / 1e6))
            .collect();
        println!("{}: chose k={} ({})", e.edge_type, e.chosen_k, medians.join(", "));
    }
    Ok(())
}
