use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use asmdt::experiment::{self, build_policy, derive_seed, ecdf, ExperimentConfig};
use asmdt::threshold::{closed_forms, compare, default_grid, numeric_oracle};
use asmdt::traffic::{fit_ipp, generate_arrivals, ingest_trace, slot_statistics};
use asmdt::twin::{evaluate, solve_spec};

#[derive(Parser)]
#[command(name = "asmdt", version, about = "Sleep-mode simulator, digital twin and risk gate")]
struct Cli {
    /// TOML experiment configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parent directory for run outputs, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    Alpha,
    Lambda,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-slot traffic parameters to an operator trace.
    Fit {
        /// CSV of `timestamp,avg_rate_bps`; falls back to the configured trace.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Generate an arrival stream from the configured traffic model.
    Generate,
    /// Train (if needed) and evaluate the configured policy.
    Simulate,
    /// Evaluate the digital twin for the configured chain.
    Twin {
        /// ON arrival rate, overriding the configured spec.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Threshold-N closed forms next to the numerical chain.
    Threshold {
        /// Compare over the built-in 27-point grid instead of one point.
        #[arg(long)]
        grid: bool,
    },
    /// Sweep the reward weight or the arrival rate.
    Sweep {
        #[arg(long, value_enum)]
        parameter: SweepParam,
    },
    /// Inject a traffic burst and run the risk gate against it.
    RiskDemo,
    /// Train the recurrent agent and save a checkpoint.
    Train,
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<asmdt::Error> for Failure {
    fn from(e: asmdt::Error) -> Self {
        match e {
            asmdt::Error::InvalidParameter(_) => Failure::Config(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(Failure::Config)?;
            toml::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .map_err(Failure::Config)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate().map_err(|e| Failure::Config(e.into()))?;
    Ok(cfg)
}

/// Creates `<parent>/<command>-s<seed>-<millis>`, adding a counter if taken.
fn run_dir(parent: &Path, command: &str, seed: u64) -> Result<PathBuf, Failure> {
    fs::create_dir_all(parent)?;
    let millis = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis());
    let stem = format!("{command}-s{seed}-{millis}");
    for k in 0.. {
        let dir = if k == 0 { parent.join(&stem) } else { parent.join(format!("{stem}-{k}")) };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.into()))?;
    fs::write(dir.join(name), text + "\n")?;
    Ok(())
}

fn write_lines<T: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = T>) -> Result<(), Failure> {
    let mut f = std::io::BufWriter::new(fs::File::create(dir.join(name))?);
    for row in rows {
        serde_json::to_writer(&mut f, &row).map_err(|e| Failure::Runtime(e.into()))?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct FitRow {
    slot: usize,
    lambda: Option<f64>,
    mean_demand: Option<f64>,
    feasible: bool,
}

fn cmd_fit(cfg: &ExperimentConfig, trace: Option<PathBuf>, dir: &Path) -> Result<(), Failure> {
    let path = trace
        .or_else(|| cfg.traffic.trace.clone())
        .ok_or_else(|| Failure::Config(anyhow!("fit needs --trace or traffic.trace")))?;
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let t = &cfg.traffic;
    let report = ingest_trace(&text, t.slot_duration)?;
    let rows: Vec<FitRow> = slot_statistics(&report.trace)
        .iter()
        .map(|s| match fit_ipp(s, t.ipp.tau, t.ipp.zeta, t.slot_duration, t.fit) {
            Ok(p) => FitRow { slot: s.slot_index, lambda: Some(p.lambda_on), mean_demand: Some(p.mean_demand), feasible: true },
            Err(_) => FitRow { slot: s.slot_index, lambda: None, mean_demand: None, feasible: false },
        })
        .collect();
    let feasible = rows.iter().filter(|r| r.feasible).count();
    write_lines(dir, "fit.jsonl", &rows)?;
    println!("{} slots fitted, {} feasible, {} rows dropped", rows.len(), feasible, report.dropped);
    Ok(())
}

fn cmd_generate(cfg: &ExperimentConfig, dir: &Path) -> Result<(), Failure> {
    let params = cfg.traffic_params()?;
    let stream = generate_arrivals(&params, cfg.traffic.duration, derive_seed(cfg.seed, 1));
    write_json(dir, "params.json", &params)?;
    write_lines(dir, "arrivals.jsonl", &stream.arrivals)?;
    write_lines(dir, "on_intervals.jsonl", &stream.on_intervals)?;
    println!("{} arrivals over {} s", stream.arrivals.len(), stream.duration);
    Ok(())
}

fn cmd_simulate(cfg: &ExperimentConfig, dir: &Path) -> Result<(), Failure> {
    let report = experiment::simulate(cfg)?;
    write_json(dir, "summary.json", &report.summary)?;
    write_lines(dir, "delayed_ratio_per_hour.jsonl", &report.delayed_ratio_per_hour)?;
    write_lines(dir, "timeline.jsonl", &report.timeline.intervals)?;
    write_lines(dir, "learning_curve.jsonl", &report.curve)?;
    let s = &report.summary;
    println!(
        "{}: saving {:.4}, delayed {}/{} users",
        s.policy, s.saving_fraction, s.delayed_users, s.arrivals
    );
    Ok(())
}

fn cmd_twin(cfg: &ExperimentConfig, lambda: Option<f64>, dir: &Path) -> Result<(), Failure> {
    let spec = match lambda {
        Some(l) => cfg.twin.spec.with_lambda(l, cfg.twin.exit_rule),
        None => cfg.twin.spec.clone(),
    };
    let report = evaluate(&spec)?;
    let (used, steady) = solve_spec(&spec)?;
    write_json(dir, "spec.json", &used)?;
    write_json(dir, "steady_state.json", &steady)?;
    write_json(dir, "report.json", &report)?;
    println!(
        "V_s {:.6}  U_s {:.6}  F_m {:.6}  RDM {:.6}",
        report.v_sleep, report.u_sleep, report.f_m, report.rdm
    );
    Ok(())
}

fn cmd_threshold(cfg: &ExperimentConfig, grid: bool, dir: &Path) -> Result<(), Failure> {
    let t = &cfg.threshold;
    if grid {
        let rows = default_grid()
            .iter()
            .map(|p| compare(p, t.max_users, t.sleep_arrivals))
            .collect::<asmdt::Result<Vec<_>>>()?;
        write_lines(dir, "comparison.jsonl", &rows)?;
        println!("{:>5} {:>5} {:>3} {:>12} {:>12}", "lam", "lam2", "N", "dev V_s", "dev U_s");
        for r in &rows {
            println!(
                "{:>5} {:>5} {:>3} {:>12.3e} {:>12.3e}",
                r.params.lambda, r.params.lambda2, r.params.n, r.rel_dev_v_sleep, r.rel_dev_u_sleep
            );
        }
    } else {
        let closed = closed_forms(&t.params)?;
        let oracle = numeric_oracle(&t.params, t.max_users, t.sleep_arrivals)?;
        write_json(dir, "closed_forms.json", &closed)?;
        write_json(dir, "oracle.json", &oracle)?;
        println!("{}", serde_json::to_string_pretty(&closed).map_err(|e| Failure::Runtime(e.into()))?);
    }
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, param: SweepParam, dir: &Path) -> Result<(), Failure> {
    match param {
        SweepParam::Alpha => {
            let sweep = experiment::alpha_sweep(cfg)?;
            write_lines(dir, "alpha_sweep.jsonl", &sweep.rows)?;
            write_lines(dir, "only_sm1.jsonl", &sweep.only_sm1)?;
            write_json(dir, "obs.json", &sweep.obs)?;
            for r in &sweep.rows {
                println!("alpha {:.3}: saving {:.4}, delayed ratio {:.4}", r.alpha, r.saving_fraction, r.delayed_ratio);
            }
            println!("obs saving {:.4}", sweep.obs.saving_fraction);
        }
        SweepParam::Lambda => {
            let points = experiment::lambda_sweep(&cfg.twin, &cfg.sweep.lambda_grid)?;
            write_lines(dir, "lambda_sweep.jsonl", &points)?;
            for p in &points {
                println!("lambda {:.3}: U_s {:.4}, RDM {:.4}", p.lambda, p.report.u_sleep, p.report.rdm);
            }
        }
    }
    Ok(())
}

fn cmd_risk_demo(cfg: &ExperimentConfig, dir: &Path) -> Result<(), Failure> {
    let train = cfg.train_stream()?;
    let mut built = build_policy(cfg, &cfg.reward, &train, derive_seed(cfg.seed, 3))?;
    let report = experiment::risk_demo(cfg, built.policy.as_mut())?;
    write_lines(dir, "gate_log.jsonl", &report.gated.log)?;
    write_lines(dir, "gate_log_ungated.jsonl", &report.ungated.log)?;
    write_lines(dir, "cdf_normal.jsonl", ecdf(&report.gated.delays_normal))?;
    write_lines(dir, "cdf_burst.jsonl", ecdf(&report.gated.delays_burst))?;
    write_lines(dir, "cdf_burst_ungated.jsonl", ecdf(&report.ungated.delays_burst))?;
    write_json(dir, "summary.json", &[&report.gated.summary, &report.ungated.summary])?;
    println!(
        "delayed in burst: gated {}, ungated {}",
        report.gated.delayed_in_burst, report.ungated.delayed_in_burst
    );
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig, dir: &Path) -> Result<(), Failure> {
    let train = cfg.train_stream()?;
    let seed = derive_seed(cfg.seed, 3);
    let dqn_cfg = asmdt::policy::dqn::DqnConfig { seed, ..cfg.agent.dqn.clone() };
    let mut net = dqn_cfg.build_network();
    let curve = asmdt::policy::dqn::train(&mut net, &train, &cfg.power, &cfg.reward, &cfg.sim, &dqn_cfg)?;
    fs::write(dir.join("checkpoint.json"), net.to_checkpoint()?)?;
    write_lines(dir, "learning_curve.jsonl", &curve)?;
    if let Some(last) = curve.last() {
        println!("episode {}: accuracy {:.3}, loss {:.5}", last.episode, last.accuracy, last.loss);
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<PathBuf, Failure> {
    let cfg = load_config(&cli)?;
    let name = match &cli.command {
        Command::Fit { .. } => "fit",
        Command::Generate => "generate",
        Command::Simulate => "simulate",
        Command::Twin { .. } => "twin",
        Command::Threshold { .. } => "threshold",
        Command::Sweep { .. } => "sweep",
        Command::RiskDemo => "risk-demo",
        Command::Train => "train",
    };
    let dir = run_dir(&cfg.output_dir, name, cfg.seed)?;
    fs::write(
        dir.join("config.toml"),
        toml::to_string(&cfg).map_err(|e| Failure::Runtime(e.into()))?,
    )?;
    match cli.command {
        Command::Fit { trace } => cmd_fit(&cfg, trace, &dir)?,
        Command::Generate => cmd_generate(&cfg, &dir)?,
        Command::Simulate => cmd_simulate(&cfg, &dir)?,
        Command::Twin { lambda } => cmd_twin(&cfg, lambda, &dir)?,
        Command::Threshold { grid } => cmd_threshold(&cfg, grid, &dir)?,
        Command::Sweep { parameter } => cmd_sweep(&cfg, parameter, &dir)?,
        Command::RiskDemo => cmd_risk_demo(&cfg, &dir)?,
        Command::Train => cmd_train(&cfg, &dir)?,
    }
    Ok(dir)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(dir) => {
            println!("outputs in {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
