use super::metrics::{Annotator, KeywordAnnotator};
use super::persist::{EvalReport, TrajectoryRecord};
use super::{HarnessError, Problem, Task};
use crate::judge::{extract_program, judge_code, judge_math, JudgeError, Verdict, FAIL_REWARD};
use crate::policy::{tokenize, ConversationKey, Policy};
use crate::reasoner::{Reasoner, ReasonerLimits, Trajectory, TrajectoryStatus};
use crate::rlcore::{build_loss_mask, token_mask, RolloutGroup};
use crate::sandbox::{SandboxConfig, SandboxManager};
use crate::tagproto::TagSet;
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub limits: ReasonerLimits,
    /// Problems solved at once.
    pub parallelism: usize,
    pub temperature: f64,
    pub sandbox: SandboxConfig,
    pub tags: TagSet,
    /// Store the loss mask with every persisted trajectory.
    pub with_mask: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            limits: ReasonerLimits::default(),
            parallelism: 16,
            temperature: 0.0,
            sandbox: SandboxConfig::default(),
            tags: TagSet::default(),
            with_mask: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOptions {
    pub group_size: usize,
    pub limits: ReasonerLimits,
    /// Samples solved at once.
    pub parallelism: usize,
    pub temperature: f64,
    pub sandbox: SandboxConfig,
    pub tags: TagSet,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            group_size: 16,
            limits: ReasonerLimits::default(),
            parallelism: 16,
            temperature: 1.0,
            sandbox: SandboxConfig::default(),
            tags: TagSet::default(),
        }
    }
}

fn check(limits: &ReasonerLimits, parallelism: usize, sandbox: &SandboxConfig) -> Result<(), HarnessError> {
    if parallelism == 0 {
        return Err(HarnessError::InvalidOptions("parallelism must be at least 1".into()));
    }
    limits.validate().map_err(|e| HarnessError::InvalidOptions(e.to_string()))?;
    sandbox.validate().map_err(|e| HarnessError::InvalidOptions(e.to_string()))
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .thread_name(|i| format!("ctm-solve-{i}"))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))
}

struct Solver<'a> {
    policy: &'a dyn Policy,
    sandbox: &'a SandboxManager,
    limits: ReasonerLimits,
    temperature: f64,
    config: &'a SandboxConfig,
    tags: &'a TagSet,
}

enum Score {
    Reward(f64, Option<Verdict>),
    Unscored(String),
}

impl Solver<'_> {
    /// One solve on its own session. `Err` carries an infrastructure reason.
    fn solve(&self, problem: &Problem, key: &ConversationKey) -> Result<Trajectory, String> {
        let session = self.sandbox.open_session(self.config).map_err(|e| e.to_string())?;
        let run = Reasoner::new(self.policy, self.sandbox)
            .with_limits(self.limits)
            .with_temperature(self.temperature)
            .with_tags(self.tags.clone())
            .solve(key, &problem.prompt, session);
        let _ = self.sandbox.close_session(session);
        run.map_err(|e| e.to_string())
    }

    fn score(&self, problem: &Problem, t: &Trajectory) -> Score {
        match t.status {
            TrajectoryStatus::Answered => {}
            TrajectoryStatus::TurnLimit | TrajectoryStatus::HistoryLimit | TrajectoryStatus::ProtocolViolation => {
                return Score::Reward(FAIL_REWARD, None)
            }
            TrajectoryStatus::PolicyError | TrajectoryStatus::SandboxDead => {
                return Score::Unscored(t.detail.clone().unwrap_or_else(|| format!("{:?}", t.status)))
            }
        }
        let answer = t.answer.as_deref().unwrap_or("");
        let verdict = match &problem.task {
            Task::Code(tests) => judge_code(&extract_program(answer), tests, self.sandbox, self.config),
            Task::Math { answer: truth } => judge_math(answer, truth),
        };
        match verdict {
            Ok(v) => Score::Reward(v.reward, Some(v)),
            Err(JudgeError::EmptyProgram) => Score::Reward(FAIL_REWARD, None),
            Err(e) => Score::Unscored(e.to_string()),
        }
    }
}

/// [`run_eval_with`] using the keyword fallback annotator.
pub fn run_eval(
    dataset: &[Problem],
    policy: &dyn Policy,
    sandbox: &SandboxManager,
    opts: &EvalOptions,
) -> Result<EvalReport, HarnessError> {
    run_eval_with(dataset, policy, sandbox, opts, &KeywordAnnotator)
}

/// Solves and scores every problem once. Records come back in dataset
/// order whatever the completion order.
pub fn run_eval_with(
    dataset: &[Problem],
    policy: &dyn Policy,
    sandbox: &SandboxManager,
    opts: &EvalOptions,
    annotator: &dyn Annotator,
) -> Result<EvalReport, HarnessError> {
    if dataset.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    check(&opts.limits, opts.parallelism, &opts.sandbox)?;
    let solver = Solver {
        policy,
        sandbox,
        limits: opts.limits,
        temperature: opts.temperature,
        config: &opts.sandbox,
        tags: &opts.tags,
    };
    let records = pool(opts.parallelism)?.install(|| {
        dataset
            .par_iter()
            .map(|problem| {
                let key = ConversationKey::new(&problem.id, 0);
                let rec = match solver.solve(problem, &key) {
                    Ok(t) => {
                        let score = solver.score(problem, &t);
                        let label = annotator.annotate(&t).ok();
                        let mut rec = TrajectoryRecord::from_trajectory(problem, None, &t, &opts.tags, opts.with_mask);
                        if let Some(l) = label {
                            rec.behavior = Some(l.category.to_string());
                            rec.code_inspired = l.code_inspired;
                        }
                        match score {
                            Score::Reward(r, v) => {
                                rec.reward = Some(r);
                                rec.verdict = v.map(|v| v.detail);
                            }
                            Score::Unscored(why) => rec.unscored = Some(why),
                        }
                        rec
                    }
                    Err(why) => TrajectoryRecord::unsolved(problem, None, why),
                };
                if rec.unscored.is_some() {
                    log::warn!("{} unscored: {}", problem.id, rec.unscored.as_deref().unwrap_or_default());
                }
                rec
            })
            .collect::<Vec<_>>()
    });
    Ok(EvalReport::from_records(records))
}

/// Token count of one trajectory under the policy partition: the reported
/// per-call tokens when every call had them, otherwise the trainable tokens
/// of the transcript.
fn trajectory_length(t: &Trajectory, tags: &TagSet) -> usize {
    let reported: usize = t.token_logprobs.as_ref().map(|rs| rs.iter().map(|r| r.tokens.len()).sum()).unwrap_or(0);
    if reported > 0 {
        return reported;
    }
    let by_mask = token_mask(&t.transcript, tags).map(|ts| ts.iter().filter(|(_, tr)| *tr).count()).unwrap_or(0);
    if by_mask > 0 {
        return by_mask;
    }
    tokenize(&t.transcript.serialize(tags).unwrap_or_default(), tags).len().max(1)
}

/// Samples `group_size` independent trajectories for one problem, each on
/// its own session under conversation key `(problem id, sample index)`.
/// Model-caused failures earn -1; any infrastructure failure aborts the
/// whole group.
pub fn rollout_group(
    problem: &Problem,
    policy: &dyn Policy,
    sandbox: &SandboxManager,
    opts: &RolloutOptions,
) -> Result<RolloutGroup, HarnessError> {
    if opts.group_size < 2 {
        return Err(HarnessError::GroupTooSmall(opts.group_size));
    }
    check(&opts.limits, opts.parallelism, &opts.sandbox)?;
    let solver = Solver {
        policy,
        sandbox,
        limits: opts.limits,
        temperature: opts.temperature,
        config: &opts.sandbox,
        tags: &opts.tags,
    };
    let infra =
        |sample: u32, reason: String| HarnessError::Infrastructure { problem: problem.id.clone(), sample, reason };
    let samples = pool(opts.parallelism)?.install(|| {
        (0..opts.group_size as u32)
            .into_par_iter()
            .map(|i| {
                let t = solver.solve(problem, &ConversationKey::new(&problem.id, i)).map_err(|r| infra(i, r))?;
                match solver.score(problem, &t) {
                    Score::Reward(r, _) => Ok((t, r)),
                    Score::Unscored(why) => Err(infra(i, why)),
                }
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let lengths = samples.iter().map(|(t, _)| trajectory_length(t, &opts.tags)).collect();
    let (trajectories, rewards) = samples.into_iter().unzip();
    Ok(RolloutGroup::new(problem.id.clone(), trajectories, rewards, lengths)?)
}

/// Loss mask of a trajectory as `[start, end, trainable]` triples.
pub(crate) fn mask_triples(t: &Trajectory, tags: &TagSet) -> Option<Vec<(usize, usize, bool)>> {
    build_loss_mask(&t.transcript, tags).ok().map(|m| m.spans.iter().map(|s| (s.start, s.end, s.trainable)).collect())
}
