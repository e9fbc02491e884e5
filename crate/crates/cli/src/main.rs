//! `ctm`: solve, evaluate and sample with an interleaved reasoning/code
//! runtime, and inspect the resulting rollouts.
//!
//! Exit status is 0 on full success, 2 when any problem ended unscored
//! because of infrastructure, and 1 on a fatal error.

mod fixture;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ctm_core::harness::{
    load_dataset, read_rollouts, read_trajectories, rollout_group, run_eval, write_eval, write_rollouts, EvalOptions,
    HarnessError, RolloutOptions, RolloutStats, REPORT_JSON,
};
use ctm_core::policy::{ConversationKey, Policy, RemoteConfig, RemotePolicy};
use ctm_core::reasoner::{Reasoner, ReasonerLimits, TrajectoryStatus};
use ctm_core::rlcore::{
    build_loss_mask, build_sft_trace, compute_advantages, dapo_objective, dynamic_filter, retained, token_mask,
    DapoConfig, SftWorkflowStep,
};
use ctm_core::sandbox::{ExecutionResult, ExecutorBinding, SandboxConfig, SandboxManager, WorkerCommand};
use ctm_core::tagproto::{TagSet, Transcript};
use fixture::FixtureFile;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "ctm", version, about = "Interleaved reasoning and code execution runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one prompt and print the transcript.
    Solve {
        prompt_file: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        limits: LimitArgs,
        #[command(flatten)]
        sandbox: SandboxArgs,
        #[arg(long, default_value_t = 0.0)]
        temperature: f64,
        /// Print the full trajectory as JSON instead of the transcript.
        #[arg(long)]
        json: bool,
    },
    /// Solve and score every problem of a JSONL dataset once.
    Eval {
        dataset: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        limits: LimitArgs,
        #[command(flatten)]
        sandbox: SandboxArgs,
        #[arg(long, default_value_t = 16)]
        parallelism: usize,
        #[arg(long, default_value_t = 0.0)]
        temperature: f64,
        /// Directory for trajectories.jsonl, report.csv and report.json.
        #[arg(long, default_value = "ctm-eval")]
        out: PathBuf,
        /// Leave loss masks out of the trajectory lines.
        #[arg(long)]
        no_mask: bool,
    },
    /// Sample a group of trajectories per problem for policy optimization.
    Rollout {
        dataset: PathBuf,
        #[arg(long, default_value_t = 16)]
        group_size: usize,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        limits: LimitArgs,
        #[command(flatten)]
        sandbox: SandboxArgs,
        #[arg(long, default_value_t = 16)]
        parallelism: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        /// Directory for rollouts.jsonl and rollout_stats.csv.
        #[arg(long, default_value = "ctm-rollouts")]
        out: PathBuf,
    },
    /// Advantage and filtering statistics of saved rollout groups.
    DapoStats {
        rollouts_file: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        eps_low: f64,
        #[arg(long, default_value_t = 0.28)]
        eps_high: f64,
    },
    /// Assemble a supervised trace from a staged workflow file.
    TraceBuild {
        steps_file: PathBuf,
        #[command(flatten)]
        sandbox: SandboxArgs,
        #[arg(long)]
        json: bool,
    },
    /// Print the loss mask of each saved trajectory.
    Mask {
        trajectory_file: PathBuf,
        /// One line per token instead of byte spans.
        #[arg(long)]
        tokens: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    Scripted,
    Remote,
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long, value_enum, default_value = "scripted")]
    policy: PolicyKind,
    /// Turn fixture for the scripted policy.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Completions URL for the remote policy.
    #[arg(long, env = "CTM_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, default_value = "default")]
    model: String,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 120.0)]
    request_timeout: f64,
    #[arg(long, default_value_t = 3)]
    retries: u32,
    /// Ask the server for per-token log-probabilities.
    #[arg(long)]
    logprobs: bool,
}

#[derive(Args)]
struct LimitArgs {
    #[arg(long, default_value_t = 16)]
    max_turns: usize,
    #[arg(long, default_value_t = 65536)]
    max_history_chars: usize,
    #[arg(long, default_value_t = 1024)]
    answer_max_tokens: usize,
    #[arg(long, default_value_t = 4096)]
    turn_max_tokens: usize,
}

#[derive(Args)]
struct SandboxArgs {
    /// Seconds one cell may run.
    #[arg(long, default_value_t = 10.0)]
    cell_timeout: f64,
    #[arg(long, default_value_t = 8192)]
    output_cap: usize,
    #[arg(long, default_value_t = 64)]
    max_cells: usize,
    /// Concurrently executing cells.
    #[arg(long, default_value_t = 16)]
    pool_limit: usize,
    /// Run cells in this worker program instead of the built-in interpreter.
    #[arg(long)]
    worker: Option<PathBuf>,
    #[arg(long = "worker-arg", allow_hyphen_values = true)]
    worker_args: Vec<String>,
}

fn seconds(s: f64, what: &str) -> Result<Duration> {
    Duration::try_from_secs_f64(s).with_context(|| format!("{what} must be a non-negative number of seconds"))
}

impl PolicyArgs {
    fn build(&self) -> Result<Box<dyn Policy>> {
        match self.policy {
            PolicyKind::Scripted => {
                let Some(path) = &self.fixture else {
                    bail!("--policy scripted needs --fixture <file>");
                };
                Ok(Box::new(FixtureFile::load(path)?.into_policy()?))
            }
            PolicyKind::Remote => {
                let Some(endpoint) = &self.endpoint else {
                    bail!("--policy remote needs --endpoint or CTM_ENDPOINT");
                };
                let mut c = RemoteConfig::new(endpoint.clone(), self.model.clone());
                c.timeout = seconds(self.request_timeout, "--request-timeout")?;
                c.retries = self.retries;
                c.logprobs = self.logprobs;
                Ok(Box::new(RemotePolicy::new(c)))
            }
        }
    }
}

impl LimitArgs {
    fn build(&self) -> ReasonerLimits {
        ReasonerLimits {
            max_turns: self.max_turns,
            max_history_chars: self.max_history_chars,
            answer_max_tokens: self.answer_max_tokens,
            turn_max_tokens: self.turn_max_tokens,
        }
    }
}

impl SandboxArgs {
    fn build(&self) -> Result<(SandboxManager, SandboxConfig)> {
        let executor_binding = match &self.worker {
            None => ExecutorBinding::Mock,
            Some(program) => {
                let mut cmd = WorkerCommand::new(program);
                cmd.args.clone_from(&self.worker_args);
                ExecutorBinding::Worker(cmd)
            }
        };
        let config = SandboxConfig {
            cell_timeout: seconds(self.cell_timeout, "--cell-timeout")?,
            output_byte_cap: self.output_cap,
            max_cells_per_session: self.max_cells,
            executor_binding,
        };
        config.validate()?;
        Ok((SandboxManager::new(self.pool_limit), config))
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

/// Exit status for a run that finished.
fn status(unscored: bool) -> ExitCode {
    if unscored {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn solve(
    prompt_file: &Path,
    policy: &PolicyArgs,
    limits: &LimitArgs,
    sandbox: &SandboxArgs,
    temperature: f64,
    json: bool,
) -> Result<ExitCode> {
    let prompt = std::fs::read_to_string(prompt_file).with_context(|| format!("reading {}", prompt_file.display()))?;
    let policy = policy.build()?;
    let (manager, config) = sandbox.build()?;
    let tags = TagSet::default();
    let session = manager.open_session(&config)?;
    let run = Reasoner::new(policy.as_ref(), &manager).with_limits(limits.build()).with_temperature(temperature).solve(
        &ConversationKey::new("solve", 0),
        &prompt,
        session,
    );
    let _ = manager.close_session(session);
    let t = run?;
    if json {
        print_json(&t)?;
    } else {
        println!("{}", t.transcript.serialize(&tags)?);
    }
    log::info!("status {:?} after {} turns, {} cells", t.status, t.turns_used, t.code_cells);
    Ok(status(matches!(t.status, TrajectoryStatus::PolicyError | TrajectoryStatus::SandboxDead)))
}

#[allow(clippy::too_many_arguments)]
fn eval(
    dataset: &Path,
    policy: &PolicyArgs,
    limits: &LimitArgs,
    sandbox: &SandboxArgs,
    parallelism: usize,
    temperature: f64,
    out: &Path,
    no_mask: bool,
) -> Result<ExitCode> {
    let problems = load_dataset(dataset)?;
    let policy = policy.build()?;
    let (manager, config) = sandbox.build()?;
    let opts = EvalOptions {
        limits: limits.build(),
        parallelism,
        temperature,
        sandbox: config,
        with_mask: !no_mask,
        ..EvalOptions::default()
    };
    let report = run_eval(&problems, policy.as_ref(), &manager, &opts)?;
    write_eval(&report, out)?;
    print_json(&report.summary)?;
    log::info!("wrote {}", out.join(REPORT_JSON).display());
    Ok(status(report.has_unscored()))
}

#[allow(clippy::too_many_arguments)]
fn rollout(
    dataset: &Path,
    group_size: usize,
    policy: &PolicyArgs,
    limits: &LimitArgs,
    sandbox: &SandboxArgs,
    parallelism: usize,
    temperature: f64,
    out: &Path,
) -> Result<ExitCode> {
    let problems = load_dataset(dataset)?;
    let policy = policy.build()?;
    let (manager, config) = sandbox.build()?;
    let opts = RolloutOptions {
        group_size,
        limits: limits.build(),
        parallelism,
        temperature,
        sandbox: config,
        ..RolloutOptions::default()
    };
    let mut groups = Vec::new();
    let mut unscored = false;
    for p in &problems {
        match rollout_group(p, policy.as_ref(), &manager, &opts) {
            Ok(g) => groups.push(g),
            Err(e @ HarnessError::Infrastructure { .. }) => {
                log::warn!("dropping group: {e}");
                unscored = true;
            }
            Err(e) => return Err(e.into()),
        }
    }
    write_rollouts(&groups, out)?;
    for g in &groups {
        println!("{}", serde_json::to_string(&RolloutStats::of(g))?);
    }
    Ok(status(unscored))
}

#[derive(Serialize)]
struct GroupStats {
    question_id: String,
    group_size: usize,
    correct: usize,
    retained: bool,
    reward_mean: f64,
    reward_std: Option<f64>,
    advantages: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct DapoStats {
    groups: usize,
    retained: usize,
    eps_low: f64,
    eps_high: f64,
    /// Objective at ratio 1 over retained groups, where each term is its
    /// advantage: the length-weighted mean advantage.
    objective_at_identity: Option<f64>,
    per_group: Vec<GroupStats>,
}

fn dapo_stats(path: &Path, eps_low: f64, eps_high: f64) -> Result<ExitCode> {
    let groups = read_rollouts(path)?;
    let cfg = DapoConfig { eps_low, eps_high, ..DapoConfig::default() };
    cfg.validate()?;
    let per_group: Vec<GroupStats> = groups
        .iter()
        .map(|g| {
            let adv = compute_advantages(g).ok();
            GroupStats {
                question_id: g.question_id.clone(),
                group_size: g.rewards.len(),
                correct: g.correct(),
                retained: retained(&g.rewards),
                reward_mean: g.rewards.iter().sum::<f64>() / g.rewards.len().max(1) as f64,
                reward_std: adv.as_ref().map(|a| a.std),
                advantages: adv.map(|a| a.advantages),
            }
        })
        .collect();
    let kept = dynamic_filter(groups);
    let objective_at_identity = if kept.is_empty() {
        None
    } else {
        let views: Vec<_> = kept.iter().map(|g| g.view()).collect();
        let lp: Vec<Vec<Vec<f64>>> = kept.iter().map(|g| g.lengths.iter().map(|n| vec![0.0; *n]).collect()).collect();
        Some(dapo_objective(&views, &lp, &lp, &cfg)?)
    };
    print_json(&DapoStats {
        groups: per_group.len(),
        retained: kept.len(),
        eps_low,
        eps_high,
        objective_at_identity,
        per_group,
    })?;
    Ok(ExitCode::SUCCESS)
}

/// Input of `trace-build`. When `results` is absent the code steps are run
/// in one fresh session, in order.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepsFile {
    prompt: String,
    steps: Vec<SftWorkflowStep>,
    #[serde(default)]
    results: Option<Vec<ExecutionResult>>,
}

fn trace_build(path: &Path, sandbox: &SandboxArgs, json: bool) -> Result<ExitCode> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let input: StepsFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let results = match input.results {
        Some(r) => r,
        None => {
            let (manager, config) = sandbox.build()?;
            let session = manager.open_session(&config)?;
            let run: Result<Vec<_>, _> =
                input.steps.iter().filter(|s| s.is_code).map(|s| manager.execute_cell(session, &s.content)).collect();
            let _ = manager.close_session(session);
            run?
        }
    };
    let tags = TagSet::default();
    let t = build_sft_trace(&input.prompt, &input.steps, &results, &tags)?;
    if json {
        print_json(&t)?;
    } else {
        println!("{}", t.serialize(&tags)?);
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct MaskLine<'a> {
    id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    sample: Option<u32>,
    trainable_bytes: usize,
    total_bytes: usize,
    spans: Vec<(usize, usize, bool)>,
}

fn mask(path: &Path, tokens: bool) -> Result<ExitCode> {
    let tags = TagSet::default();
    for rec in read_trajectories(path)? {
        if rec.transcript.is_empty() {
            continue;
        }
        let t = Transcript::parse(&rec.transcript, &tags).with_context(|| format!("transcript of {}", rec.id))?;
        if tokens {
            for (tok, trainable) in token_mask(&t, &tags)? {
                println!("{}", serde_json::to_string(&(&rec.id, tok, trainable))?);
            }
            continue;
        }
        let m = build_loss_mask(&t, &tags)?;
        let line = MaskLine {
            id: &rec.id,
            sample: rec.sample,
            trainable_bytes: m.trainable_bytes(),
            total_bytes: m.len(),
            spans: m.spans.iter().map(|s| (s.start, s.end, s.trainable)).collect(),
        };
        println!("{}", serde_json::to_string(&line)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve { prompt_file, policy, limits, sandbox, temperature, json } => {
            solve(&prompt_file, &policy, &limits, &sandbox, temperature, json)
        }
        Command::Eval { dataset, policy, limits, sandbox, parallelism, temperature, out, no_mask } => {
            eval(&dataset, &policy, &limits, &sandbox, parallelism, temperature, &out, no_mask)
        }
        Command::Rollout { dataset, group_size, policy, limits, sandbox, parallelism, temperature, out } => {
            rollout(&dataset, group_size, &policy, &limits, &sandbox, parallelism, temperature, &out)
        }
        Command::DapoStats { rollouts_file, eps_low, eps_high } => dapo_stats(&rollouts_file, eps_low, eps_high),
        Command::TraceBuild { steps_file, sandbox, json } => trace_build(&steps_file, &sandbox, json),
        Command::Mask { trajectory_file, tokens } => mask(&trajectory_file, tokens),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
