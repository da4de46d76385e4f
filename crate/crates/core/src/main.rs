use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rlempc::agents::AgentKind;
use rlempc::harness::{
    calibrate_threshold, evaluate, load_agent, run_episode, save_agent, train, write_learning_curve, write_metrics, write_trace, AgentPolicy,
    EvalSummary, MetricsRow, RunConfig, ThresholdPolicy,
};
use rlempc::nn::{grad_check, GradCheckOptions, Network, SeqBatch, Topology};
use rlempc::ocp::{cost_gradient, VehicleOcp};
use rlempc::{Error, Result};

#[derive(Parser)]
#[command(name = "rlempc", version, about = "Event-triggered MPC with learned trigger policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with [vehicle], [ocp], [empc], [agent] and [train] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rho_c: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(r) = self.rho_c {
            c.train.rho_c = r;
        }
        if let Some(s) = self.seed {
            c.train.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a trigger policy, then evaluate it.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_kind)]
        agent: Option<AgentKind>,
        /// Environment-step budget.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Evaluate a saved agent with its deterministic policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the metrics and first-episode trace CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the deviation-threshold baseline.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "calibrate_af")]
        threshold: Option<f64>,
        /// Bisect the threshold towards this trigger frequency.
        #[arg(long)]
        calibrate_af: Option<f64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of the network and OCP gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and evaluate over rho_c in {0, 0.001, 0.01} and write a summary table.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_kind)]
        agent: Option<AgentKind>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
    },
}

fn parse_kind(s: &str) -> std::result::Result<AgentKind, String> {
    AgentKind::parse(s).ok_or_else(|| format!("unknown agent `{s}`; expected one of ddqn, ddqn-lstm-per, ppo, ppo-lstm, sac"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}

fn print_summary(label: &str, s: &EvalSummary) {
    println!(
        "{label}: R {:.4}  E_mpc {:.4}  A_f {:.3}  forced {:.1}  solve {:.1} ms  failures {}",
        s.ret, s.e_mpc, s.a_f, s.forced, s.solve_ms, s.failures
    );
}

fn metrics_rows(s: &EvalSummary) -> Vec<MetricsRow> {
    s.episodes.iter().enumerate().map(|(i, m)| MetricsRow::new(i as u64, m)).collect()
}

fn train_and_save(config: &RunConfig, out: &Path) -> Result<EvalSummary> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), config.to_toml())?;
    let outcome = train(config, |e| {
        if e.episode % 10 == 0 {
            log::info!("episode {} step {}: R {:.4} A_f {:.3} loss {:.3e}", e.episode, e.end_step, e.metrics.ret, e.metrics.a_f, e.loss);
        }
    })?;
    write_learning_curve(out.join("learning_curve.csv"), &outcome.log)?;
    let train_rows: Vec<MetricsRow> = outcome.log.iter().map(|e| MetricsRow::new(e.episode, &e.metrics)).collect();
    write_metrics(out.join("train_metrics.csv"), &train_rows)?;
    save_agent(&outcome.agent, config, out.join("agent.ck"))?;
    let seed = config.train.seed;
    let summary = evaluate(config, config.train.eval_episodes, || AgentPolicy::new(&outcome.agent, seed))?;
    write_metrics(out.join("eval_metrics.csv"), &metrics_rows(&summary))?;
    Ok(summary)
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train { common, agent, steps, out } => {
            let mut config = common.load()?;
            if let Some(k) = agent {
                config.agent.kind = k;
            }
            if steps.is_some() {
                config.train.steps = steps;
            }
            let summary = train_and_save(&config, &out)?;
            print_summary(&format!("{} rho_c={}", config.agent.kind, config.train.rho_c), &summary);
        }
        Command::Eval { checkpoint, episodes, seed, out } => {
            let (agent, config) = load_agent(&checkpoint)?;
            let n = episodes.unwrap_or(config.train.eval_episodes);
            let summary = evaluate(&config, n, || AgentPolicy::new(&agent, seed))?;
            print_summary(&format!("{} rho_c={}", config.agent.kind, config.train.rho_c), &summary);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                write_metrics(dir.join("eval_metrics.csv"), &metrics_rows(&summary))?;
                let (_, trace) = run_episode(&mut config.env()?, &mut AgentPolicy::new(&agent, seed), true)?;
                write_trace(dir.join("trace.csv"), &trace)?;
            }
        }
        Command::Baseline { common, threshold, calibrate_af, episodes, out } => {
            let config = common.load()?;
            let threshold = match (threshold, calibrate_af) {
                (Some(t), _) => t,
                (None, Some(target)) => {
                    let c = calibrate_threshold(&config, target, 40)?;
                    println!("calibrated threshold {:.6} m gives A_f {:.4} (target {target})", c.threshold, c.a_f);
                    c.threshold
                }
                (None, None) => config.empc.threshold,
            };
            let summary = evaluate(&config, episodes.unwrap_or(config.train.eval_episodes), || ThresholdPolicy(threshold))?;
            print_summary(&format!("threshold {threshold} rho_c={}", config.train.rho_c), &summary);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                write_metrics(dir.join("baseline_metrics.csv"), &metrics_rows(&summary))?;
                let (_, trace) = run_episode(&mut config.env()?, &mut ThresholdPolicy(threshold), true)?;
                write_trace(dir.join("trace.csv"), &trace)?;
            }
        }
        Command::Gradcheck { seed } => return gradcheck(seed),
        Command::Sweep { common, agent, steps, out } => {
            let mut base = common.load()?;
            if let Some(k) = agent {
                base.agent.kind = k;
            }
            if steps.is_some() {
                base.train.steps = steps;
            }
            std::fs::create_dir_all(&out)?;
            let mut table = csv::Writer::from_path(out.join("table.csv"))?;
            table.write_record(["method", "rho_c", "R", "E_mpc", "A_f", "forced", "solve_ms"])?;
            let cal = calibrate_threshold(&base, base.empc.calibration_target, 40)?;
            for rho in [0.0, 0.001, 0.01] {
                let mut config = base.clone();
                config.train.rho_c = rho;
                let learned = train_and_save(&config, &out.join(format!("{}-rho{rho}", config.agent.kind)))?;
                let baseline = evaluate(&config, config.train.eval_episodes, || ThresholdPolicy(cal.threshold))?;
                for (method, s) in [(config.agent.kind.to_string(), &learned), ("threshold".to_string(), &baseline)] {
                    print_summary(&format!("{method} rho_c={rho}"), s);
                    table.write_record([method, rho.to_string(), s.ret.to_string(), s.e_mpc.to_string(), s.a_f.to_string(), s.forced.to_string(), s.solve_ms.to_string()])?;
                }
            }
            table.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(seed: u64) -> Result<ExitCode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = true;
    for (name, recurrent, steps, limit) in [("mlp", false, 1, 1e-5), ("lstm", true, 3, 1e-4)] {
        let mut net = Network::new(Topology::trigger_net(12, 2, recurrent), &mut rng);
        let mut x = SeqBatch::zeros(steps, 2, 12);
        x.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let mut c = SeqBatch::zeros(steps, 2, 2);
        c.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let loss = |out: &SeqBatch| (out.data.iter().zip(&c.data).map(|(o, w)| o * w).sum::<f64>(), c.clone());
        let report = grad_check(&mut net, &x, loss, &GradCheckOptions { coordinates: 400, seed, ..Default::default() })?;
        let pass = report.max_rel_error < limit;
        ok &= pass;
        println!("{name}: max relative error {:.3e} over {} parameters ({})", report.max_rel_error, report.parameters_checked, if pass { "ok" } else { "FAIL" });
    }
    let config = RunConfig::default();
    let model = VehicleOcp { params: &config.vehicle, config: &config.ocp };
    let x0 = config.empc.initial_state;
    let u: Vec<f64> = (0..config.ocp.horizon).flat_map(|_| [rng.gen_range(-50.0..50.0), rng.gen_range(-0.1..0.1)]).collect();
    let (_, g) = cost_gradient(&model, &x0, &u)?;
    let mut worst: f64 = 0.0;
    for i in 0..u.len() {
        let h = 1e-6 * u[i].abs().max(1.0);
        let (mut up, mut dn) = (u.clone(), u.clone());
        up[i] += h;
        dn[i] -= h;
        let fd = (cost_gradient(&model, &x0, &up)?.0 - cost_gradient(&model, &x0, &dn)?.0) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6));
    }
    let pass = worst < 1e-5;
    ok &= pass;
    println!("ocp: max relative error {worst:.3e} ({})", if pass { "ok" } else { "FAIL" });
    if !ok {
        return Err(Error::Config("gradient check failed".into()));
    }
    Ok(ExitCode::SUCCESS)
}
