use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use netvi::consensus::QEnsemble;
use netvi::env::EnvKind;
use netvi::features::RffMap;
use netvi::graph::{Graph, Spectrum, Topology};
use netvi::harness::{self, RunConfig, RunOptions, CONFIG_KEYS};
use netvi::io;
use netvi::{Error, Result};

fn config_help() -> String {
    let mut s = String::from("Config keys (file `key = value` under `[section]`, or --set section.key=value):\n");
    for (key, default, what) in CONFIG_KEYS {
        s.push_str(&format!("  {key:<24} {what} [default: {default}]\n"));
    }
    s.push_str("\nExit codes: 0 success, 1 runtime failure, 2 usage or configuration error.");
    s
}

#[derive(Parser)]
#[command(name = "netvi", version, about = "Distributed value iteration over agent networks", after_help = config_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment, overrides `env`
    #[arg(long)]
    env: Option<EnvKind>,
    /// Topology, overrides `topology`
    #[arg(long)]
    topology: Option<String>,
    /// Master seed, overrides `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Extra overrides, `key=value`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl RunArgs {
    fn load(&self, env_default: Option<EnvKind>) -> Result<RunConfig> {
        let mut overrides = Vec::new();
        if let Some(t) = &self.topology {
            overrides.push(format!("topology={t}"));
        }
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        overrides.extend(self.overrides.iter().cloned());
        let env = self.env.or_else(|| {
            let in_file = self
                .config
                .as_deref()
                .and_then(|p| fs::read_to_string(p).ok())
                .and_then(|t| harness::parse_config(&t).ok())
                .is_some_and(|m| m.contains_key("env"));
            if in_file {
                None
            } else {
                env_default
            }
        });
        RunConfig::load(self.config.as_deref(), env, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Laplacian spectrum, optimal learning rate and rate table
    #[command(after_help = config_help())]
    Spectrum {
        #[arg(long, default_value = "grid:5x5")]
        topology: Topology,
        #[arg(long, default_value_t = 0.5)]
        varpi: f64,
    },
    /// Synthetic Q-consensus run with a rate fit
    #[command(after_help = config_help())]
    Consensus {
        #[command(flatten)]
        run: RunArgs,
        /// Payload dimension per node
        #[arg(long, default_value_t = 16)]
        dim: usize,
    },
    /// Centralized fixed point by Banach-Picard iteration
    #[command(after_help = config_help())]
    Centralized {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Distributed value iteration
    #[command(after_help = config_help())]
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Also write per-round consensus losses
        #[arg(long)]
        trace_consensus: bool,
        /// Skip the centralized fixed point and distance reporting
        #[arg(long)]
        no_fixed_point: bool,
    },
    /// Greedy episodes of a stored Q checkpoint
    #[command(after_help = config_help())]
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Q ensemble or Q function checkpoint
        #[arg(long)]
        checkpoint: PathBuf,
        /// Feature map file; regenerated from the seed when omitted
        #[arg(long)]
        rff: Option<PathBuf>,
    },
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), text)?;
    info!("wrote {}", dir.join(name).display());
    Ok(())
}

fn cmd_spectrum(topology: &Topology, varpi: f64) -> Result<()> {
    let graph = Graph::build(topology)?;
    let s = Spectrum::of(&graph)?;
    let opt = s.optimal_eta();
    println!("topology      {topology}");
    println!("nodes         {}", graph.node_count());
    println!("edges         {}", graph.edge_count());
    println!("lambda_1      {:.9}", s.lambda_max());
    println!("lambda_N-1    {:.9}", s.fiedler);
    println!("b_N-1         {:.9}", s.fiedler_ratio());
    println!("gamma         {:.9}", s.gamma);
    println!(
        "eta*          {:.6} ({})",
        opt.eta,
        if opt.closed_form { "closed form" } else { "grid search" }
    );
    println!("rho(eta*)     {:.6}", s.rate(opt.eta, 0.5)?);
    println!("eigenvalues   {}", s.eigenvalues.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" "));
    println!();
    println!("eta,rho (varpi = {varpi})");
    let upper = 2.0 * (1.0 - varpi);
    let steps = 20;
    for i in 1..steps {
        let eta = upper * i as f64 / steps as f64;
        println!("{eta:.4},{:.6}", s.rate(eta, varpi)?);
    }
    Ok(())
}

fn cmd_consensus(args: &RunArgs, dim: usize) -> Result<()> {
    let cfg = args.load(Some(EnvKind::Pendulum))?;
    let graph = Graph::build(&cfg.topology)?;
    let spectrum = Spectrum::of(&graph)?;
    let params = cfg.consensus_params(&spectrum)?;
    let report = harness::consensus_experiment(&graph, &params, dim, cfg.synthetic_seed())?;
    let mut csv = String::from("m,error\n");
    for (m, e) in report.errors.iter().enumerate() {
        csv.push_str(&format!("{m},{e}\n"));
    }
    write(&args.out, "consensus_errors.csv", &csv)?;
    println!("topology        {}", cfg.topology);
    println!("eta             {:.6}", params.eta);
    println!("rounds M        {}", params.inner_steps);
    println!("fitted slope    {:.6}", report.slope);
    println!("log rho(eta)    {:.6}", report.log_rate);
    println!("|difference|    {:.6}", (report.slope - report.log_rate).abs());
    println!("scalar oracle   {}", if report.reference_match { "bitwise match" } else { "MISMATCH" });
    println!("bytes           {}", report.traffic.bytes());
    Ok(())
}

fn cmd_centralized(args: &RunArgs) -> Result<()> {
    let cfg = args.load(None)?;
    let report = harness::run_centralized(&cfg)?;
    write(&args.out, "q_star.csv", &io::q_function_to_csv(&report.q))?;
    write(&args.out, "residuals.csv", &harness::residuals_csv(&report.residuals))?;
    write(&args.out, "config.txt", &cfg.to_config_text())?;
    println!("iterations      {}", report.iterations);
    println!("episodic loss   {:.6}", report.episodic_loss);
    println!("random policy   {:.6}", report.baseline);
    Ok(())
}

fn cmd_train(args: &RunArgs, trace: bool, no_fixed_point: bool) -> Result<()> {
    let cfg = args.load(None)?;
    let opts = RunOptions {
        trace_rounds: trace,
        track_fixed_point: !no_fixed_point,
    };
    let metrics = harness::run_distributed(&cfg, opts)?;
    write(&args.out, "metrics.csv", &harness::metrics_csv(&metrics))?;
    if trace {
        write(&args.out, "rounds.csv", &harness::rounds_csv(&metrics))?;
    }
    write(&args.out, "q_ensemble.csv", &io::q_ensemble_to_csv(&metrics.final_q))?;
    write(&args.out, "cov_ensemble.csv", &io::cov_ensemble_to_csv(&metrics.final_c))?;
    let rff = RffMap::sample(cfg.env.input_dim(), cfg.feature_dim, cfg.bandwidth, cfg.rff_seed())?;
    write(&args.out, "rff.csv", &rff.to_csv())?;
    if let Some(q) = &metrics.fixed_point {
        write(&args.out, "q_star.csv", &io::q_function_to_csv(q))?;
    }
    write(&args.out, "config.txt", &cfg.to_config_text())?;
    if let Some(last) = metrics.records.last() {
        println!("k               {}", last.k);
        println!("bytes           {}", last.cum_bytes);
        if let Some(e) = last.episodic_loss {
            println!("episodic loss   {e:.6}");
        }
        println!("random policy   {:.6}", metrics.baseline);
        println!("consensus loss  {:.3e}", last.consensus_loss);
        if let Some(d) = last.dist_fp {
            println!("distance to Q*  {d:.6e}");
        }
    }
    Ok(())
}

fn cmd_evaluate(args: &RunArgs, checkpoint: &Path, rff_path: Option<&Path>) -> Result<()> {
    let cfg = args.load(None)?;
    let text = fs::read_to_string(checkpoint)?;
    let nodes = Graph::build(&cfg.topology)?.node_count();
    let ens = if text.starts_with(io::Q_FUNCTION_ID) {
        QEnsemble::consensual(&io::q_function_from_csv(&text)?, nodes)?
    } else {
        io::q_ensemble_from_csv(&text)?
    };
    let rff = match rff_path {
        Some(p) => RffMap::from_csv(&fs::read_to_string(p)?)?,
        None => RffMap::sample(cfg.env.input_dim(), ens.dim(), cfg.bandwidth, cfg.rff_seed())?,
    };
    let report = harness::evaluate(&cfg, &ens, &rff)?;
    let mut csv = String::from("node,episodic_loss\n");
    for (n, v) in report.per_node.iter().enumerate() {
        csv.push_str(&format!("{n},{v}\n"));
    }
    write(&args.out, "evaluation.csv", &csv)?;
    println!("episodic loss   {:.6}", report.episodic_loss);
    println!("random policy   {:.6}", report.baseline);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Spectrum { topology, varpi } => cmd_spectrum(topology, *varpi),
        Command::Consensus { run, dim } => cmd_consensus(run, *dim),
        Command::Centralized { run } => cmd_centralized(run),
        Command::Train {
            run,
            trace_consensus,
            no_fixed_point,
        } => cmd_train(run, *trace_consensus, *no_fixed_point),
        Command::Evaluate { run, checkpoint, rff } => cmd_evaluate(run, checkpoint, rff.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_usage_error() {
        2
    } else {
        1
    }
}
