use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};

use sfcsim::experiment::{self, Axis, PresetOutput, RunReport};
use sfcsim::theory::{self, TheoryInputs};
use sfcsim::{Error, ExperimentConfig, Result};

/// Packet-level simulator for datacenter flow control.
///
/// Set SFCSIM_LOG (error, warn, info, debug, trace) for log output.
#[derive(Parser)]
#[command(name = "sfcsim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write CSVs plus a manifest.
    #[command(group(ArgGroup::new("src").required(true).args(["config", "preset"])))]
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in scenario instead of a config file.
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(experiment::PRESETS))]
        preset: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a config once per value of one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// incast_degree, sync_window (us), q_tg (bytes) or rtt (us).
        #[arg(long)]
        axis: String,
        #[arg(long, num_args = 1.., required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the closed-form buffer bounds.
    #[command(group(ArgGroup::new("src").required(true).args(["preset", "inputs"])))]
    Theory {
        #[arg(long, value_parser = ["appendix"])]
        preset: Option<String>,
        /// key=value pairs over the appendix defaults: r_gbps, t_a_us,
        /// t_b_us, t_tor_us, t_s_us, mtu, k, n, m.
        #[arg(long, num_args = 1..)]
        inputs: Vec<String>,
        /// Print the bounds as TOML instead of a table.
        #[arg(long)]
        toml: bool,
    },
}

fn parse_inputs(pairs: &[String]) -> Result<TheoryInputs> {
    let mut i = TheoryInputs::appendix();
    let mut mtu = None;
    for p in pairs {
        let bad = || Error::InvalidConfig(format!("bad theory input '{p}'"));
        let (k, v) = p.split_once('=').ok_or_else(bad)?;
        let x: f64 = v.trim().parse().map_err(|_| bad())?;
        match k.trim() {
            "r_gbps" => i.r_bps = x * 1e9,
            "t_a_us" => i.t_a_us = x,
            "t_b_us" => i.t_b_us = x,
            "t_tor_us" => i.t_tor_us = x,
            "t_s_us" => i.t_s_us = x,
            "mtu" => mtu = Some(x),
            "k" => i.k = x as u32,
            "n" => i.n = x as u32,
            "m" => i.m = x,
            _ => return Err(bad()),
        }
    }
    if let Some(m) = mtu {
        i.t_s_us = m * 8.0 / i.r_bps * 1e6;
    }
    i.validate().map_err(Error::InvalidConfig)?;
    Ok(i)
}

fn print_report(r: &RunReport) {
    let pct = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.2}"));
    println!(
        "{}: {} events, {}/{} flows done, peak buffer {:.3} MB, slowdown p50/p95/p99 {}/{}/{}, BTS {} ({:.0}% suppressed)",
        r.name,
        r.events,
        r.flows_finished,
        r.flows,
        r.peak_buffer_bytes as f64 / 1e6,
        pct(r.p50_slowdown),
        pct(r.p95_slowdown),
        pct(r.p99_slowdown),
        r.bts_triggered,
        100.0 * r.bts_suppressed_fraction
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run { config, preset, out, seed } => {
            if let Some(name) = preset {
                match experiment::run_preset(&name, &out, seed)? {
                    PresetOutput::Runs(rs) => rs.iter().for_each(print_report),
                    PresetOutput::Oracle(rows) => {
                        println!("{:<10} {:>4} {:>12} {:>12} {:>10}", "mode", "k", "bound_B", "peak_B", "excess_MTU");
                        for r in rows {
                            println!(
                                "{:<10} {:>4} {:>12.0} {:>12} {:>10.2}",
                                format!("{:?}", r.mode),
                                r.k,
                                r.bound_bytes,
                                r.peak_bytes,
                                r.excess_mtu
                            );
                        }
                    }
                }
                return Ok(());
            }
            let path = config.expect("clap enforces one source");
            let mut cfg = ExperimentConfig::load(&path)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            print_report(&experiment::run_to_dir(&cfg, &out)?);
        }
        Cmd::Sweep { config, axis, values, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let axis: Axis = axis.parse()?;
            for row in experiment::sweep(&cfg, axis, &values, &out)? {
                if let Some(r) = &row.report {
                    print!("{}={} ", axis.name(), row.value);
                    print_report(r);
                }
            }
        }
        Cmd::Theory { preset: _, inputs, toml } => {
            let i = if inputs.is_empty() { TheoryInputs::appendix() } else { parse_inputs(&inputs)? };
            if toml {
                print!("{}", bounds_toml(&i));
            } else {
                print!("{}", theory::render_table(&i));
            }
        }
    }
    Ok(())
}

fn bounds_toml(i: &TheoryInputs) -> String {
    #[derive(serde::Serialize)]
    struct Out {
        inputs: TheoryInputs,
        b_ack_bytes: f64,
        b_bts_bytes: f64,
        b_incast_bytes: f64,
        cache: theory::CacheBounds,
    }
    toml::to_string(&Out {
        inputs: *i,
        b_ack_bytes: theory::b_ack(i),
        b_bts_bytes: theory::b_bts(i),
        b_incast_bytes: theory::b_incast(i),
        cache: theory::cache_bounds(i),
    })
    .expect("bounds serialize")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SFCSIM_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
