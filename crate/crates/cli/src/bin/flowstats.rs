use std::path::PathBuf;

use anyhow::{ensure, Result};
use clap::{Parser, Subcommand, ValueEnum};
use scramblesuit::flowstats::{
    emit_report, run_trial, HandshakeMode, RunReport, SimOptions, TrialSummary,
};
use scramblesuit::morphing::derive_seed;

#[derive(Parser)]
#[command(name = "flowstats", version, about = "Measure wire shapes and overhead of simulated transfers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run echo transfers and write traces, ECDF tables and a report.
    Run {
        /// Application bytes per transfer (each echoed back).
        #[arg(long, default_value_t = 1_000_000)]
        size: usize,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Ticket)]
        handshake: Mode,
        /// Significance level of the pairwise K-S tests.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Disable inter-arrival delays.
        #[arg(long)]
        no_delays: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ticket,
    Uniformdh,
}

fn main() -> Result<()> {
    let Command::Run { size, trials, seed, out, handshake, alpha, no_delays } = Cli::parse().command;
    ensure!(trials > 0, "--trials must be positive");
    let opts = SimOptions {
        handshake: match handshake {
            Mode::Ticket => HandshakeMode::Ticket,
            Mode::Uniformdh => HandshakeMode::UniformDh,
        },
        delays: !no_delays,
        ..SimOptions::default()
    };
    let base = derive_seed(&[0u8; 32], "flowstats", seed);

    let mut summaries = Vec::new();
    let mut traces = Vec::new();
    for trial in 0..trials {
        let trial_seed = derive_seed(&base, "trial", trial as u64);
        let outcome = run_trial(trial_seed, size, &opts)?;
        let r = &outcome.report;
        println!(
            "trial {trial}: overhead {:.1}%  goodput {:.1} KB/s  segments {}",
            r.total_overhead * 100.0,
            r.goodput / 1000.0,
            r.segments
        );
        summaries.push(TrialSummary {
            trial,
            seed: trial_seed.iter().map(|b| format!("{b:02x}")).collect(),
            size: size as u64,
            overhead: *r,
            mean_delay_ms: outcome.mean_delay().as_secs_f64() * 1000.0,
        });
        traces.push(outcome.trace);
    }
    let report = RunReport::new(summaries, &traces, alpha)?;
    emit_report(&report, &traces, &out)?;
    println!(
        "mean overhead {:.1}% (sd {:.1}%), {} K-S rejections of {} comparisons; wrote {}",
        report.mean_overhead * 100.0,
        report.sd_overhead * 100.0,
        report.ks.iter().filter(|k| k.outcome.reject).count(),
        report.ks.len(),
        out.display()
    );
    Ok(())
}
