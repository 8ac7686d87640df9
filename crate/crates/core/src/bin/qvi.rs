use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use genqvi::experiment::{run_experiment, ExperimentConfig};
use genqvi::hard::{adversarial_pair, build_hard_mdp, closed_form_qstar, HardFamilyParams};
use genqvi::mdp::{exact_optimal_q, greedy_policy, load_mdp, sup_norm_diff};
use genqvi::qvi::{iteration_count, run_qvi, sample_budget, QviConfig};
use genqvi::variance::VarianceReport;
use genqvi::{Error, Mdp, Policy, QFunction};

#[derive(Parser)]
#[command(name = "qvi", version, about = "Q-value iteration with a generative model")]
struct Cli {
    /// Worker threads for seed-parallel work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Output {
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an MDP exactly and print Q* as CSV.
    Solve {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Run QVI from samples, either with explicit n and k or with the
    /// budget implied by epsilon and delta.
    QviRun {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long, requires = "k", conflicts_with_all = ["epsilon", "delta"])]
        n: Option<u64>,
        #[arg(long, requires = "n")]
        k: Option<usize>,
        #[arg(long, requires = "delta")]
        epsilon: Option<f64>,
        #[arg(long, requires = "epsilon")]
        delta: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Evaluate return variances of a policy and check the occupancy bounds.
    VarianceCheck {
        #[arg(long)]
        mdp: PathBuf,
        /// Comma-separated action per state; the optimal policy when absent.
        #[arg(long)]
        policy: Option<String>,
        /// Exit with status 3 when a bound fails.
        #[arg(long)]
        assert: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Write a hard-family MDP (or an adversarial pair with --epsilon)
    /// plus a `.meta.json` sidecar.
    HardGen {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        l: usize,
        #[arg(long)]
        gamma: f64,
        /// Self-loop probability; adversarial when absent.
        #[arg(long, conflicts_with = "epsilon")]
        p: Option<f64>,
        /// Build the adversarial pair separated by this epsilon.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment described by a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Exit with status 3 when the experiment's check fails.
        #[arg(long)]
        assert: bool,
        #[command(flatten)]
        output: Output,
    },
}

enum Failure {
    Error(Error),
    Assertion(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .expect("thread pool is configured once");
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assertion(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Solve { mdp, tol, output } => {
            let mdp = load_mdp(&mdp)?;
            let q = exact_optimal_q(&mdp, tol)?;
            emit(&output.out, &q_csv(&mdp, &q))?;
        }
        Command::QviRun { mdp, n, k, epsilon, delta, seed, output } => {
            let mdp = load_mdp(&mdp)?;
            let (n, k) = match (n, k, epsilon, delta) {
                (Some(n), Some(k), _, _) => (n, k),
                (_, _, Some(eps), Some(delta)) => {
                    let cfg = QviConfig::new(eps, delta)?;
                    let budget = sample_budget(mdp.num_pairs(), &cfg, mdp.discount())?;
                    (budget.per_pair, iteration_count(eps, mdp.discount())?)
                }
                _ => {
                    return Err(Error::InvalidArgument(
                        "give either --n and --k or --epsilon and --delta".into(),
                    )
                    .into())
                }
            };
            let run = run_qvi(&mdp, n, k, &QFunction::zeros_like(&mdp), seed)?;
            let q_star = exact_optimal_q(&mdp, 1e-12)?;
            let err = sup_norm_diff(&run.q, &q_star)?;
            let mut csv = q_csv(&mdp, &run.q);
            let _ = writeln!(
                csv,
                "# n={n} k={k} seed={seed} total_samples={} sup_error={err}",
                run.ledger.total()
            );
            emit(&output.out, &csv)?;
        }
        Command::VarianceCheck { mdp, policy, assert, output } => {
            let mdp = load_mdp(&mdp)?;
            let pi = match policy {
                Some(text) => parse_policy(&text, &mdp)?,
                None => greedy_policy(&exact_optimal_q(&mdp, 1e-12)?),
            };
            let report = VarianceReport::compute(&mdp, &pi)?;
            let mut csv = String::from("state,action,sigma,v_total,occ_sqrt_sigma,occ_sigma\n");
            for x in 0..mdp.num_states() {
                for a in 0..mdp.num_actions() {
                    let z = mdp.pair(x, a);
                    let _ = writeln!(
                        csv,
                        "{x},{a},{},{},{},{}",
                        report.sigma_pi[z], report.v_total[z], report.occ_sqrt_sigma[z], report.occ_sigma[z]
                    );
                }
            }
            let checks = [
                ("occ_sigma<=beta^2", report.occ_sigma_max(), report.occ_sigma_bound(), report.occ_sigma_holds()),
                (
                    "occ_sigma<=beta^2/4",
                    report.occ_sigma_max(),
                    report.occ_sigma_sharp_bound(),
                    report.occ_sigma_sharp_holds(),
                ),
                (
                    "occ_sqrt_sigma<=2log2*beta^1.5",
                    report.occ_sqrt_sigma_max(),
                    report.occ_sqrt_sigma_bound(),
                    report.occ_sqrt_sigma_holds(),
                ),
            ];
            let mut failed = Vec::new();
            for (name, value, bound, holds) in checks {
                let _ = writeln!(csv, "# {name} value={value} bound={bound} holds={holds}");
                if !holds {
                    failed.push(name);
                }
            }
            let _ = writeln!(csv, "# recursion_residual={:e}", report.recursion_residual);
            emit(&output.out, &csv)?;
            if assert && !failed.is_empty() {
                return Err(Failure::Assertion(failed.join(", ")));
            }
        }
        Command::HardGen { k, l, gamma, p, epsilon, out } => hard_gen(k, l, gamma, p, epsilon, &out)?,
        Command::Experiment { config, seed, assert, output } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.master_seed = seed;
            }
            if output.out.is_some() {
                cfg.output = output.out;
            }
            let result = run_experiment(&cfg)?;
            emit(&cfg.output, &result.csv)?;
            eprintln!("{}", result.summary);
            if assert && result.verdict == Some(false) {
                return Err(Failure::Assertion(result.summary));
            }
        }
    }
    Ok(())
}

fn q_csv(mdp: &Mdp, q: &QFunction) -> String {
    let mut csv = String::from("state,action,q\n");
    for x in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let _ = writeln!(csv, "{x},{a},{}", q.get(x, a));
        }
    }
    csv
}

fn parse_policy(text: &str, mdp: &Mdp) -> Result<Policy, Error> {
    let actions = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad action `{s}` in --policy")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if actions.len() != mdp.num_states() {
        return Err(Error::InvalidArgument(format!(
            "--policy has {} actions, the MDP has {} states",
            actions.len(),
            mdp.num_states()
        )));
    }
    Policy::new(actions, mdp.num_actions())
}

#[derive(Serialize)]
struct HardMeta {
    k: usize,
    l: usize,
    gamma: f64,
    p: f64,
    alpha: Option<f64>,
    epsilon: Option<f64>,
    qstar0: f64,
    qstar1: Option<f64>,
    num_states: usize,
    logical_pairs: usize,
    files: Vec<String>,
}

fn hard_gen(
    k: usize,
    l: usize,
    gamma: f64,
    p: Option<f64>,
    epsilon: Option<f64>,
    out: &Path,
) -> Result<(), Error> {
    let sibling = |suffix: &str| {
        let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.with_file_name(format!("{stem}{suffix}"))
    };
    let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let meta = match epsilon {
        Some(eps) => {
            let pair = adversarial_pair(k, l, gamma, eps)?;
            let m1_path = sibling(".m1.json");
            pair.m0.save(out)?;
            pair.m1.save(&m1_path)?;
            HardMeta {
                k,
                l,
                gamma,
                p: pair.p,
                alpha: Some(pair.alpha),
                epsilon: Some(eps),
                qstar0: pair.qstar0,
                qstar1: Some(pair.qstar1),
                num_states: pair.m0.num_states(),
                logical_pairs: 3 * k * l,
                files: vec![name(out), name(&m1_path)],
            }
        }
        None => {
            let params = match p {
                Some(p) => HardFamilyParams::new(k, l, gamma, p)?,
                None => HardFamilyParams::adversarial(k, l, gamma)?,
            };
            let mdp = build_hard_mdp(&params)?;
            mdp.save(out)?;
            HardMeta {
                k,
                l,
                gamma,
                p: params.p,
                alpha: None,
                epsilon: None,
                qstar0: closed_form_qstar(gamma, params.p)?,
                qstar1: None,
                num_states: mdp.num_states(),
                logical_pairs: params.logical_pairs(),
                files: vec![name(out)],
            }
        }
    };
    let meta_path = sibling(".meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("metadata serialises") + "\n";
    std::fs::write(&meta_path, text).map_err(|e| Error::Io { path: meta_path, source: e })
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io { path: path.clone(), source: e }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
