//! Experiment runner: evaluation, learning, composition, foraging and oracle
//! agreement, each emitting CSV artifacts plus a run manifest.
//!
//! Exit codes: 0 ok, 2 usage, 3 bad configuration, 4 acceptance failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::{Array1, Array2};

use lambdar::acceptance;
use lambdar::compose::{mean_and_se, run_gpe_gpi, PolicySet};
use lambdar::episode::EpisodeOptions;
use lambdar::export::{self, RunManifest};
use lambdar::forage::{agent_vs_mvt, base_policy_library, run_foraging_agent, LambdaMode};
use lambdar::grid::{EnvConfig, GridWorld};
use lambdar::mdp::Policy;
use lambdar::oracle;
use lambdar::rep::solve_lambda_r;
use lambdar::reward::RewardScheme;
use lambdar::td::{
    lambda_f_policy_evaluation, q_lambda_learning, td_policy_evaluation_logged, LearnerConfig,
    LinearLambdaF,
};
use lambdar::Error;

#[derive(Parser)]
#[command(
    name = "lambdar",
    version,
    about = "Tabular RL under diminishing rewards"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Base RNG seed for the whole run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output directory for CSV artifacts and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override the environment config's discount factor.
    #[arg(long, global = true)]
    gamma: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMethod {
    Dp,
    Td,
    Lf,
}

#[derive(Subcommand)]
enum Command {
    /// Solve or learn a policy's representation and values.
    Eval {
        #[arg(long)]
        env: PathBuf,
        /// Policy file (JSON map state -> action probabilities).
        #[arg(long)]
        policy: PathBuf,
        /// Decay rate assumed at the goal states.
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, value_enum, default_value = "dp")]
        method: EvalMethod,
        /// DP stopping tolerance (max Bellman residual).
        #[arg(long, default_value_t = 5e-2)]
        tol: f64,
        /// Sample-based methods: number of episodes.
        #[arg(long, default_value_t = 1500)]
        episodes: usize,
        #[arg(long, default_value_t = 10)]
        horizon: usize,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
    },
    /// Online Q-learning on the representation over a decay-rate grid.
    Learn {
        #[arg(long)]
        env: PathBuf,
        /// Comma-separated agent decay rates.
        #[arg(long, default_value = "0,0.5,1")]
        lambdas: String,
        #[arg(long, default_value_t = 500)]
        episodes: usize,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long, default_value_t = 100)]
        horizon: usize,
        /// Final exploration rate of the linear anneal.
        #[arg(long, default_value_t = 0.2)]
        epsilon_final: f64,
    },
    /// Composition over a policy library with per-step reward refresh.
    Gpi {
        #[arg(long)]
        env: PathBuf,
        /// Directory of policy JSON files; defaults to shortest-path
        /// policies to each goal and waypoint.
        #[arg(long)]
        policies: Option<PathBuf>,
        #[arg(long, default_value = "0,0.5,1")]
        lambdas: String,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        /// Override the config's move noise.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 40)]
        horizon: usize,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
    },
    /// Composition agent that estimates the decay rate online, plus a
    /// patch-leaving report.
    Forage {
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        /// Estimate the decay rate from self-transition rewards.
        #[arg(long, conflicts_with = "lambda_hat")]
        learn_lambda: bool,
        /// Fixed decay rate used when not learning.
        #[arg(long, default_value_t = 1.0)]
        lambda_hat: f64,
        #[arg(long, default_value_t = 40)]
        horizon: usize,
    },
    /// Compare exact dynamic programming against Monte-Carlo simulation.
    Oracle {
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = 10_000)]
        rollouts: usize,
        /// Start cell "r,c"; defaults to the middle state.
        #[arg(long)]
        start: Option<String>,
    },
    /// Run the acceptance suite.
    Check {
        /// Comma-separated criterion ids (default: all).
        #[arg(long)]
        only: Option<String>,
    },
}

fn main() -> ExitCode {
    if let Ok(workers) = std::env::var("LAMBDAR_WORKERS") {
        if let Ok(n) = workers.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) | Error::Structural(_) => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}

struct LoadedEnv {
    world: GridWorld,
    config_text: String,
    name: String,
}

fn load_env(path: &Path, gamma: Option<f64>, noise: Option<f64>) -> Result<LoadedEnv, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = EnvConfig::from_json(&text)?;
    if let Some(g) = gamma {
        cfg.gamma = g;
    }
    if let Some(p) = noise {
        cfg.noise_prob = p;
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(LoadedEnv {
        world: cfg.build()?,
        config_text: text,
        name,
    })
}

fn write(out: &Path, file: &str, contents: &str) -> Result<(), Error> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(file), contents)?;
    Ok(())
}

fn parse_lambdas(text: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad decay rate '{tok}'")))
        })
        .collect()
}

fn manifest(cli: &Cli, command: &str, config_text: &str) -> RunManifest {
    let argv: Vec<String> = std::env::args().collect();
    RunManifest::new(command, argv, cli.seed, config_text)
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    match &cli.command {
        Command::Eval {
            env,
            policy,
            lambda,
            method,
            tol,
            episodes,
            horizon,
            alpha,
        } => {
            let loaded = load_env(env, cli.gamma, None)?;
            let world = &loaded.world;
            let policy_text = std::fs::read_to_string(policy)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", policy.display())))?;
            let pi = Policy::from_json(&policy_text)?;
            if pi.n_states() != world.mdp.n_states || pi.n_actions() != world.mdp.n_actions {
                return Err(Error::Structural(format!(
                    "policy is {}x{}, environment needs {}x{}",
                    pi.n_states(),
                    pi.n_actions(),
                    world.mdp.n_states,
                    world.mdp.n_actions
                )));
            }
            let lambda_vec = world.lambda_vector_with(*lambda);
            let spec = world.reward_spec(RewardScheme::PureDiminish);
            match method {
                EvalMethod::Dp => {
                    let (rep, log) = solve_lambda_r(&world.mdp, &pi, &lambda_vec, *tol, 1_000_000)?;
                    let values = rep.phi.dot(&spec.r_bar);
                    write(&cli.out, "lambda_r.csv", &export::matrix_csv(&rep.phi))?;
                    write(
                        &cli.out,
                        "values.csv",
                        &export::vector_csv("value", &values),
                    )?;
                    write(
                        &cli.out,
                        "iteration_log.csv",
                        &export::iteration_log_csv(&log.residuals),
                    )?;
                    println!(
                        "solved in {} sweeps (residual < {tol}, error bound {:.3e})",
                        log.iterations, log.error_bound
                    );
                }
                EvalMethod::Td => {
                    let (phi, log) = td_policy_evaluation_logged(
                        world,
                        &pi,
                        &lambda_vec,
                        *episodes,
                        *horizon,
                        *alpha,
                        cli.seed,
                    );
                    let q = q_table(&phi, &spec.r_bar);
                    let values = state_values(&q, &pi);
                    write(
                        &cli.out,
                        "lambda_r.csv",
                        &export::matrix_csv(&policy_mixed(&phi, &pi)),
                    )?;
                    write(&cli.out, "q_values.csv", &export::matrix_csv(&q))?;
                    write(
                        &cli.out,
                        "values.csv",
                        &export::vector_csv("value", &values),
                    )?;
                    write(
                        &cli.out,
                        "iteration_log.csv",
                        &export::iteration_log_csv(&log),
                    )?;
                    println!("learned over {episodes} episodes (alpha {alpha})");
                }
                EvalMethod::Lf => {
                    let mut model = LinearLambdaF::one_hot(
                        world.mdp.n_states,
                        world.mdp.n_actions,
                        spec.r_bar.clone(),
                    )?;
                    let log = lambda_f_policy_evaluation(
                        world, &pi, &mut model, *lambda, *episodes, *horizon, *alpha, cli.seed,
                    );
                    let mut q = Array2::zeros((world.mdp.n_states, world.mdp.n_actions));
                    for s in 0..world.mdp.n_states {
                        for a in 0..world.mdp.n_actions {
                            q[[s, a]] = model.q_value(s, a);
                        }
                    }
                    let values = state_values(&q, &pi);
                    write(
                        &cli.out,
                        "lambda_r.csv",
                        &export::matrix_csv(&policy_mixed(&model.table, &pi)),
                    )?;
                    write(&cli.out, "q_values.csv", &export::matrix_csv(&q))?;
                    write(
                        &cli.out,
                        "values.csv",
                        &export::vector_csv("value", &values),
                    )?;
                    write(
                        &cli.out,
                        "iteration_log.csv",
                        &export::iteration_log_csv(&log),
                    )?;
                    println!("learned feature table over {episodes} episodes");
                }
            }
            write(
                &cli.out,
                "manifest.json",
                &manifest(cli, "eval", &loaded.config_text).to_json(),
            )?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Learn {
            env,
            lambdas,
            episodes,
            alpha,
            seeds,
            horizon,
            epsilon_final,
        } => {
            let loaded = load_env(env, cli.gamma, None)?;
            let world = &loaded.world;
            let spec = world.reward_spec(RewardScheme::PureDiminish);
            let grid = parse_lambdas(lambdas)?;
            let mut rows = Vec::new();
            let mut summary = Vec::new();
            for &lam in &grid {
                let mut finals = Vec::new();
                for s in 0..*seeds {
                    let mut config =
                        LearnerConfig::new(lam, *episodes, *horizon, cli.seed + s as u64);
                    config.alpha = *alpha;
                    config.epsilon_final = *epsilon_final;
                    let run = q_lambda_learning(world, &spec, &config)?;
                    for (e, ret) in run.returns.iter().enumerate() {
                        rows.push(format!("{lam},{s},{e},{ret}"));
                    }
                    let tail = &run.returns[episodes.saturating_sub(100)..];
                    finals.push(tail.iter().sum::<f64>() / tail.len().max(1) as f64);
                }
                let (mean, se) = mean_and_se(&finals);
                summary.push(format!("{lam},{mean},{se}"));
                println!("agent rate {lam}: final-100 mean return {mean:.3} (se {se:.3})");
            }
            write(
                &cli.out,
                "return_curves.csv",
                &export::rows_csv("lambda,seed,episode,return", &rows),
            )?;
            write(
                &cli.out,
                "summary.csv",
                &export::rows_csv("lambda,mean_final_return,se", &summary),
            )?;
            write(
                &cli.out,
                "manifest.json",
                &manifest(cli, "learn", &loaded.config_text).to_json(),
            )?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Gpi {
            env,
            policies,
            lambdas,
            episodes,
            noise,
            horizon,
            seeds,
        } => {
            let loaded = load_env(env, cli.gamma, *noise)?;
            let world = &loaded.world;
            let spec = world.reward_spec(RewardScheme::PureDiminish);
            let library = match policies {
                Some(dir) => load_policy_dir(dir)?,
                None => base_policy_library(world)?,
            };
            let grid = parse_lambdas(lambdas)?;
            let mut rows = Vec::new();
            let mut summary = Vec::new();
            let mut trajectories = Vec::new();
            for &lam in &grid {
                let set = PolicySet::build(
                    &world.mdp,
                    library.clone(),
                    &world.lambda_vector_with(lam),
                    1e-8,
                )?;
                let mut returns = Vec::new();
                for s in 0..*seeds {
                    let options = EpisodeOptions::new(*horizon, cli.seed + s as u64);
                    let run = run_gpe_gpi(world, &spec, &set, *episodes, &options)?;
                    for (e, st) in run.episodes.iter().enumerate() {
                        rows.push(format!(
                            "{lam},{e},{},{},{}",
                            st.undiscounted, st.discounted, st.steps
                        ));
                        returns.push(st.undiscounted);
                    }
                    if s == 0 {
                        let paths: Vec<Vec<[usize; 2]>> = run
                            .traces
                            .iter()
                            .take(3)
                            .map(|t| {
                                t.steps
                                    .iter()
                                    .map(|rec| {
                                        let (r, c) = world.coords(rec.state);
                                        [r, c]
                                    })
                                    .collect()
                            })
                            .collect();
                        trajectories.push(serde_json::json!({
                            "agent_lambda": lam,
                            "paths": paths,
                        }));
                    }
                }
                let (mean, se) = mean_and_se(&returns);
                summary.push(format!("{lam},{mean},{se}"));
                println!("agent rate {lam}: mean return {mean:.3} (se {se:.3})");
            }
            write(
                &cli.out,
                "gpi_returns.csv",
                &export::rows_csv(
                    "agent_lambda,episode,return_undiscounted,return_discounted,steps",
                    &rows,
                ),
            )?;
            write(
                &cli.out,
                "summary.csv",
                &export::rows_csv("agent_lambda,mean_return,se", &summary),
            )?;
            write(
                &cli.out,
                "trajectories.json",
                &serde_json::to_string_pretty(&trajectories).expect("serializable"),
            )?;
            write(
                &cli.out,
                "manifest.json",
                &manifest(cli, "gpi", &loaded.config_text).to_json(),
            )?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Forage {
            env,
            episodes,
            learn_lambda,
            lambda_hat,
            horizon,
        } => {
            let loaded = load_env(env, cli.gamma, None)?;
            let world = &loaded.world;
            let spec = world.reward_spec(RewardScheme::PureDiminish);
            let library = base_policy_library(world)?;
            let mode = if *learn_lambda {
                LambdaMode::Learn
            } else {
                LambdaMode::Fixed(*lambda_hat)
            };
            let mut options = EpisodeOptions::new(*horizon, cli.seed);
            options.record_vectors = true;
            let run = run_foraging_agent(world, &spec, &library, mode, *episodes, &options)?;
            if let Some(first) = run.traces.first() {
                write(
                    &cli.out,
                    "trace0.csv",
                    &export::trace_csv(first, &world.goal_states),
                )?;
            }

            let rows: Vec<String> = run
                .episodes
                .iter()
                .map(|e| {
                    format!(
                        "{},{},{},{}",
                        e.episode, e.lambda_hat, e.undiscounted, e.steps
                    )
                })
                .collect();
            write(
                &cli.out,
                "forage_lambda.csv",
                &export::rows_csv("episode,lambda_hat,return,steps", &rows),
            )?;

            // Patch-leaving report against the average-rate rule, calibrated
            // on this run's own episodes.
            let undisc: Vec<f64> = run.episodes.iter().map(|e| e.undiscounted).collect();
            let (r_undisc, _) = mean_and_se(&undisc);
            let disc99: Vec<f64> = run
                .traces
                .iter()
                .map(|t| {
                    t.steps
                        .iter()
                        .map(|s| 0.99f64.powi(s.t as i32) * s.reward)
                        .sum()
                })
                .collect();
            let (r_disc, _) = mean_and_se(&disc99);
            let mut report_rows = Vec::new();
            for (e, trace) in run.traces.iter().enumerate() {
                if trace.is_empty() {
                    continue;
                }
                let disc =
                    lambdar::forage::mvt_leave_times(trace, &spec, r_disc, *horizon, true, 0.99)?;
                let undr =
                    lambdar::forage::mvt_leave_times(trace, &spec, r_undisc, *horizon, false, 1.0)?;
                for (idx, (d, u)) in disc.patches.iter().zip(undr.patches.iter()).enumerate() {
                    report_rows.push(format!(
                        "{},{},{},{},{}",
                        loaded.name,
                        e,
                        idx,
                        d.leave_t as i64 - d.rule_leave_t as i64,
                        u.leave_t as i64 - u.rule_leave_t as i64
                    ));
                }
            }
            write(
                &cli.out,
                "mvt_report.csv",
                &export::rows_csv(
                    "environment_id,seed,patch_idx,leave_diff_discounted,leave_diff_undiscounted",
                    &report_rows,
                ),
            )?;
            let summary_d = agent_vs_mvt(&run.traces, &spec, r_disc, *horizon, true, 0.99)?;
            let summary_u = agent_vs_mvt(&run.traces, &spec, r_undisc, *horizon, false, 1.0)?;
            println!(
                "final rate estimate {:.4}; leave-time diff discounted {:.2}+/-{:.2}, undiscounted {:.2}+/-{:.2} over {} patches",
                run.final_lambda,
                summary_d.mean_diff,
                summary_d.se,
                summary_u.mean_diff,
                summary_u.se,
                summary_u.n_patches
            );
            write(
                &cli.out,
                "manifest.json",
                &manifest(cli, "forage", &loaded.config_text).to_json(),
            )?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Oracle {
            env,
            lambda,
            rollouts,
            start,
        } => {
            let loaded = load_env(env, cli.gamma, None)?;
            let world = &loaded.world;
            let n = world.mdp.n_states;
            let pi = Policy::uniform(n, world.mdp.n_actions);
            let lambda_vec = world.lambda_vector_with(*lambda);
            let start_state = match start {
                Some(text) => {
                    let mut it = text.split(',');
                    let bad = || Error::Config(format!("bad start '{text}', expected r,c"));
                    let r: usize = it
                        .next()
                        .ok_or_else(bad)?
                        .trim()
                        .parse()
                        .map_err(|_| bad())?;
                    let c: usize = it
                        .next()
                        .ok_or_else(bad)?
                        .trim()
                        .parse()
                        .map_err(|_| bad())?;
                    world.state_at(r, c).ok_or_else(|| {
                        Error::Config(format!("start ({r},{c}) is not a walkable cell"))
                    })?
                }
                None => n / 2,
            };
            let (rep, _) = solve_lambda_r(&world.mdp, &pi, &lambda_vec, 1e-10, 1_000_000)?;
            let lambda_max = lambda_vec.iter().cloned().fold(0.0, f64::max);
            let horizon = oracle::truncation_horizon(world.mdp.gamma, lambda_max, 1e-7);
            let est = oracle::mc_lambda_r(
                &world.mdp,
                &pi,
                &lambda_vec,
                start_state,
                *rollouts,
                horizon,
                cli.seed,
            );
            let mut rows = Vec::new();
            let mut agreed = 0usize;
            for s2 in 0..n {
                let dp = rep.phi[[start_state, s2]];
                let diff = (dp - est.mean[s2]).abs();
                let allow = 3.0 * est.se[s2] + est.bias_bound + 1e-9;
                let within = diff <= allow;
                agreed += within as usize;
                rows.push(format!(
                    "{s2},{dp},{},{},{diff},{allow},{within}",
                    est.mean[s2], est.se[s2]
                ));
            }
            write(
                &cli.out,
                "oracle_agreement.csv",
                &export::rows_csv("target_state,dp,mc,se,abs_diff,allowance,within", &rows),
            )?;
            write(
                &cli.out,
                "manifest.json",
                &manifest(cli, "oracle", &loaded.config_text).to_json(),
            )?;
            println!(
                "{agreed}/{n} entries within 3 SE + bias ({} rollouts, horizon {horizon})",
                est.n_rollouts
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Check { only } => {
            let ids: Vec<usize> = match only {
                Some(text) => text
                    .split(',')
                    .map(|tok| {
                        tok.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::Config(format!("bad criterion id '{tok}'")))
                    })
                    .collect::<Result<_, _>>()?,
                None => (1..=acceptance::CRITERION_COUNT).collect(),
            };
            if ids
                .iter()
                .any(|&id| id == 0 || id > acceptance::CRITERION_COUNT)
            {
                return Err(Error::Config(format!(
                    "criterion ids must lie in 1..={}",
                    acceptance::CRITERION_COUNT
                )));
            }
            let mut rows = Vec::new();
            let mut all_passed = true;
            for id in ids {
                let result = acceptance::run_criterion(id);
                println!("{}", result.line());
                all_passed &= result.passed;
                rows.push(format!(
                    "{},{},{},\"{}\"",
                    result.id,
                    result.name,
                    result.passed,
                    result.details.replace('"', "'")
                ));
            }
            write(
                &cli.out,
                "acceptance_report.csv",
                &export::rows_csv("criterion,name,passed,details", &rows),
            )?;
            write(
                &cli.out,
                "manifest.json",
                &manifest(cli, "check", "builtin").to_json(),
            )?;
            Ok(if all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(4)
            })
        }
    }
}

/// Policy-mixed state-conditioned view of an action-conditioned table.
fn policy_mixed(phi: &ndarray::Array3<f64>, pi: &Policy) -> Array2<f64> {
    let (ns, na, d) = phi.dim();
    Array2::from_shape_fn((ns, d), |(s, c)| {
        (0..na).map(|a| pi.probs[[s, a]] * phi[[s, a, c]]).sum()
    })
}

fn q_table(phi: &ndarray::Array3<f64>, r: &Array1<f64>) -> Array2<f64> {
    let (ns, na, _) = phi.dim();
    Array2::from_shape_fn((ns, na), |(s, a)| {
        (0..r.len()).map(|sp| phi[[s, a, sp]] * r[sp]).sum()
    })
}

fn state_values(q: &Array2<f64>, pi: &Policy) -> Array1<f64> {
    Array1::from_shape_fn(q.nrows(), |s| {
        (0..q.ncols()).map(|a| pi.probs[[s, a]] * q[[s, a]]).sum()
    })
}

fn load_policy_dir(dir: &Path) -> Result<Vec<(String, Policy)>, Error> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::Config(format!(
            "no policy files in {}",
            dir.display()
        )));
    }
    let mut out = Vec::new();
    for path in entries {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.push((name, Policy::from_json(&text)?));
    }
    Ok(out)
}
