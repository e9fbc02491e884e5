//! Generators shared by the property suites.
#![allow(dead_code)]

use ctm_core::tagproto::{Phase, Segment, TagSet, Transcript};
use proptest::prelude::*;

/// Short strings over an alphabet rich in marker fragments, with any
/// accidental marker removed.
pub fn text(min: usize) -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![
            Just("<"),
            Just(">"),
            Just("/"),
            Just("code"),
            Just("think"),
            Just("out"),
            Just("a"),
            Just(" "),
            Just("\n"),
            Just("é"),
            Just("x=1"),
            Just("print(x)")
        ],
        min..8,
    )
    .prop_map(|parts| parts.concat())
    .prop_filter("no markers", |s| !TagSet::default().contains_marker(s))
}

#[derive(Debug, Clone)]
enum Step {
    Reason(String),
    Cell(String, Option<String>),
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        text(1).prop_map(Step::Reason),
        (text(0), proptest::option::of(text(0))).prop_map(|(c, o)| Step::Cell(c, o)),
    ]
}

/// Any transcript satisfying the structural invariants.
pub fn transcript() -> impl Strategy<Value = Transcript> {
    (proptest::option::of(text(1)), proptest::collection::vec(step(), 0..7), 0..3u8, text(0))
        .prop_map(|(prompt, steps, end, answer)| {
            let mut segs = Vec::new();
            if let Some(p) = prompt {
                segs.push(Segment::prompt(p));
            }
            for s in steps {
                match s {
                    Step::Reason(r) => {
                        let merge = matches!(segs.last(), Some(l) if l.kind == ctm_core::SegmentKind::Reasoning
                            && l.origin == ctm_core::Origin::Model);
                        if merge {
                            segs.last_mut().unwrap().text.push_str(&r);
                        } else {
                            segs.push(Segment::reasoning(r));
                        }
                    }
                    Step::Cell(c, o) => {
                        segs.push(Segment::code(c));
                        if let Some(o) = o {
                            segs.push(Segment::output(o));
                        }
                    }
                }
            }
            let phase = match end {
                0 => Phase::Thinking,
                1 => Phase::ThinkClosed,
                _ => {
                    segs.push(Segment::answer(answer));
                    Phase::Answered
                }
            };
            Transcript::from_parts(segs, phase).expect("generator keeps the structure")
        })
        // merged reasoning can join two fragments into a marker
        .prop_filter("marker free", |t| t.validate(&TagSet::default()).is_ok())
}

use ctm_core::harness::Problem;
use ctm_core::judge::TestCase;

pub const DOUBLE_OK: &str = "n = int(input())\nprint(n * 2)";
pub const DOUBLE_WRONG: &str = "n = int(input())\nprint(n + 2)";

/// Reads an integer and prints its double.
pub fn doubling(id: &str) -> Problem {
    let case = |i: &str, o: &str| TestCase { stdin: i.into(), expected_stdout: o.into() };
    Problem::code(id, "Read n and print 2n.", vec![case("21\n", "42\n"), case("-3\n", "-6\n"), case("2\n", "4\n")])
}

/// Scripted turns that optionally run one scratch cell and then answer
/// with `program` in a fenced block.
pub fn code_turns(program: &str, with_cell: bool) -> Vec<String> {
    let mut turns = Vec::new();
    if with_cell {
        turns.push("Let me check the arithmetic first.<code>print(21 * 2)</code>".to_string());
        turns.push("The check prints 42.</think>".to_string());
    } else {
        turns.push("Doubling is direct.</think>".to_string());
    }
    turns.push(format!("```python\n{program}\n```</answer>"));
    turns
}

pub fn math_turns(answer: &str, with_cell: bool) -> Vec<String> {
    let mut turns = Vec::new();
    if with_cell {
        turns.push("Compute it.<code>print(3 / 4)</code>".to_string());
        turns.push("So that is the value.</think>".to_string());
    } else {
        turns.push("Known result.</think>".to_string());
    }
    turns.push(format!("{answer}</answer>"));
    turns
}

use ctm_core::judge::CodeTests;
use std::time::Duration;

#[derive(serde::Deserialize)]
pub struct CorpusCase {
    pub stdin: String,
    pub stdout: String,
}

/// One program of the judge corpus with the label CPython gave it.
#[derive(serde::Deserialize)]
pub struct CorpusEntry {
    pub name: String,
    pub program: String,
    pub cases: Vec<CorpusCase>,
    pub passes: bool,
}

impl CorpusEntry {
    pub fn tests(&self) -> CodeTests {
        CodeTests {
            cases: self
                .cases
                .iter()
                .map(|c| TestCase { stdin: c.stdin.clone(), expected_stdout: c.stdout.clone() })
                .collect(),
            per_case_timeout: Duration::from_secs(5),
        }
    }
}

pub fn judge_corpus() -> Vec<CorpusEntry> {
    let path = format!("{}/tests/fixtures/judge_corpus.json", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn python3_available() -> bool {
    std::process::Command::new("python3").arg("--version").output().map(|o| o.status.success()).unwrap_or(false)
}

/// Label of a corpus entry from running it under CPython directly, with
/// comparison written independently of the judge.
pub fn cpython_label(e: &CorpusEntry) -> bool {
    use std::io::Write;
    use std::process::{Command, Stdio};
    let norm = |s: &str| {
        let mut lines: Vec<String> = s.split('\n').map(|l| l.trim_end().to_string()).collect();
        while lines.last().is_some_and(|l| l.is_empty()) {
            lines.pop();
        }
        lines
    };
    e.cases.iter().all(|c| {
        let mut child = Command::new("python3")
            .args(["-c", &e.program])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        child.stdin.take().unwrap().write_all(c.stdin.as_bytes()).unwrap();
        let out = child.wait_with_output().unwrap();
        out.status.success() && norm(&String::from_utf8_lossy(&out.stdout)) == norm(&c.stdout)
    })
}

use ctm_core::rlcore::{toy_policy_logprob, toy_policy_objective, DapoConfig, GroupView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Advantages through the raw-moment formula, independent of the crate's
/// two-pass computation.
pub fn oracle_adv(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len() as f64;
    let s1: f64 = rewards.iter().sum();
    let s2: f64 = rewards.iter().map(|r| r * r).sum();
    let mean = s1 / n;
    let sd = (s2 / n - mean * mean).sqrt();
    rewards.iter().map(|r| (r - mean) / sd).collect()
}

/// Three groups, four-symbol vocabulary, ratios spread on both sides of
/// the clip range.
#[allow(clippy::type_complexity)]
pub fn toy_fixture(
    seed: u64,
) -> (Vec<(Vec<f64>, Vec<usize>)>, Vec<Vec<Vec<Vec<f64>>>>, Vec<Vec<Vec<usize>>>, Vec<Vec<Vec<f64>>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = vec![
        (vec![1.0, -1.0, -1.0], vec![3, 2, 4]),
        (vec![-1.0, 1.0], vec![2, 5]),
        (vec![1.0, 1.0, -1.0, 1.0], vec![1, 3, 2, 2]),
    ];
    let mut logits = Vec::new();
    let mut chosen = Vec::new();
    let mut old = Vec::new();
    for (_, lens) in &groups {
        let (mut lg, mut cg, mut og) = (Vec::new(), Vec::new(), Vec::new());
        for &n in lens {
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let picks: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let new = toy_policy_logprob(&rows, &picks);
            og.push(new.iter().map(|x| x + rng.gen_range(-0.5..0.5)).collect());
            lg.push(rows);
            cg.push(picks);
        }
        logits.push(lg);
        chosen.push(cg);
        old.push(og);
    }
    (groups, logits, chosen, old)
}

/// Worst per-component relative error between the analytic toy-policy
/// gradient and central differences with h = 1e-5, and the number of
/// components compared.
pub fn fd_gradient_check(seed: u64) -> (f64, usize) {
    let cfg = DapoConfig::default();
    let h = 1e-5;
    let (groups, mut logits, chosen, old) = toy_fixture(seed);
    let views: Vec<GroupView> = groups.iter().map(|(r, l)| GroupView { rewards: r, lengths: l }).collect();
    let (_, grad) = toy_policy_objective(&views, &logits, &chosen, &old, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for g in 0..logits.len() {
        for i in 0..logits[g].len() {
            for t in 0..logits[g][i].len() {
                for m in 0..logits[g][i][t].len() {
                    let x = logits[g][i][t][m];
                    logits[g][i][t][m] = x + h;
                    let up = toy_policy_objective(&views, &logits, &chosen, &old, &cfg).unwrap().0;
                    logits[g][i][t][m] = x - h;
                    let down = toy_policy_objective(&views, &logits, &chosen, &old, &cfg).unwrap().0;
                    logits[g][i][t][m] = x;
                    let fd = (up - down) / (2.0 * h);
                    let an = grad[g][i][t][m];
                    let scale = fd.abs().max(an.abs());
                    if scale > 0.0 {
                        worst = worst.max((fd - an).abs() / scale);
                    }
                    compared += 1;
                }
            }
        }
    }
    (worst, compared)
}

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

/// Exact value of an integer, decimal or fraction literal.
pub fn exact(s: &str) -> Option<BigRational> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let s = s.trim_matches('$');
    let s = s.strip_prefix("answer:").unwrap_or(s);
    if let Some((a, b)) = s.split_once('/') {
        let (a, b) = (exact(a)?, exact(b)?);
        return (!b.is_zero()).then(|| a / b);
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() || !(int.bytes().chain(frac.bytes())).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits: BigInt = format!("{int}{frac}").parse().ok()?;
    let v = BigRational::new(digits, BigInt::from(10).pow(frac.len() as u32));
    Some(if neg { -v } else { v })
}

/// |a - b| <= 1e-9 * max(|a|, |b|) in exact arithmetic.
pub fn exact_close(a: &BigRational, b: &BigRational) -> bool {
    let tol = BigRational::new(BigInt::from(1), BigInt::from(1_000_000_000));
    let scale = if a.abs() > b.abs() { a.abs() } else { b.abs() };
    (a - b).abs() <= tol * scale
}

/// Candidate, truth, expected verdict.
pub const MATH_VECTORS: &[(&str, &str, bool)] = &[
    ("4", "4", true),
    ("1/2", "0.5", true),
    ("0.5", "1/2", true),
    ("2/4", "1/2", true),
    ("-3", "-3.0", true),
    ("-1/3", "-0.3333333333333", true),
    ("1/3", "0.333", false),
    ("$12$", "12", true),
    ("Answer: 7", "7", true),
    ("  42 ", "42", true),
    ("+5", "5", true),
    ("5", "-5", false),
    ("0", "-0", true),
    ("0.0", "0", true),
    ("10/4", "2.5", true),
    ("3/0", "3", false),
    ("1e3", "1000", false),
    ("x+1", "x+1", true),
    ("x + 1", "x+1", false),
    ("\\frac{1}{2}", "1/2", false),
    ("7/8", "0.875", true),
    ("-7/8", "0.875", false),
    ("100000000001", "100000000000", true),
    ("1000001", "1000000", false),
    ("0.1", "1/10", true),
    ("22/7", "3.14159", false),
    ("-0.25", "-1/4", true),
    ("6/-3", "-2", true),
    ("3.", "3", true),
    (".5", "1/2", true),
    ("1 / 2", "0.5", true),
    ("12", "12.000000000001", true),
    ("abc", "12", false),
    ("", "12", false),
];

use ctm_core::harness::{rollout_group, RolloutOptions};
use ctm_core::policy::{ConversationKey, ScriptedPolicy};
use ctm_core::sandbox::SandboxManager;
use ctm_core::SegmentKind;

/// 20 problems mixing kinds, right and wrong answers, cells and errors.
pub fn twenty() -> (Vec<Problem>, ScriptedPolicy) {
    let mut ds = Vec::new();
    let mut p = ScriptedPolicy::keyed();
    for i in 0..20 {
        let id = format!("p{i:02}");
        let turns = match i % 5 {
            0 => code_turns(DOUBLE_OK, true),
            1 => code_turns(DOUBLE_WRONG, i % 2 == 0),
            2 => math_turns("3/4", i % 3 == 0),
            3 => math_turns("0.7", true),
            _ => {
                vec!["Try <code>print(undefined_name)</code>".to_string(), "Stuck.</think>".into(), "0</answer>".into()]
            }
        };
        ds.push(if matches!(i % 5, 0 | 1) { doubling(&id) } else { Problem::math(&id, "What is 3/4?", "0.75") });
        p = p.with_problem(id, turns).unwrap();
    }
    (ds, p)
}

/// Every sample defines its own secret, then looks for a neighbour's.
pub fn probe_policy(id: &str, names: &[String], values: &[u64]) -> ScriptedPolicy {
    let g = names.len();
    let mut p = ScriptedPolicy::keyed();
    for i in 0..g {
        let other = &names[(i + 1) % g];
        let turns = vec![
            format!("Store it.<code>{} = {}</code>", names[i], values[i]),
            format!(
                "Read back.<code>print({})\ntry:\n    print({other})\nexcept NameError:\n    print('isolated')</code>",
                names[i]
            ),
            "Done.</think>".to_string(),
            "0</answer>".to_string(),
        ];
        p = p.with_conversation(ConversationKey::new(id, i as u32), turns).unwrap();
    }
    p
}

/// Runs `probes` 16-way parallel rollouts where every sample stores a
/// random secret and then tries to read its neighbour's. Returns the number
/// of clean probes, or the first leak.
pub fn isolation_probes(probes: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sandbox = SandboxManager::new(16);
    let o = RolloutOptions { group_size: 16, parallelism: 16, ..Default::default() };
    for probe in 0..probes {
        let id = format!("probe{probe}");
        let names: Vec<String> = (0..16).map(|i| format!("s{}_{i}", rng.gen_range(0..1_000_000u32))).collect();
        let values: Vec<u64> = (0..16).map(|_| rng.gen_range(0..1_000_000_000)).collect();
        let p = probe_policy(&id, &names, &values);
        let problem = Problem::math(&id, "probe", "0");
        let g = rollout_group(&problem, &p, &sandbox, &o).map_err(|e| e.to_string())?;
        for (i, t) in g.trajectories.iter().enumerate() {
            let outputs: Vec<&str> = t
                .transcript
                .segments()
                .iter()
                .filter(|s| s.kind == SegmentKind::ExecutionOutput)
                .map(|s| s.text.as_str())
                .collect();
            let want = format!("{}\nisolated\n", values[i]);
            if outputs != ["", want.as_str()] {
                return Err(format!("probe {probe} sample {i}: {outputs:?}"));
            }
        }
    }
    if sandbox.live_sessions() != 0 {
        return Err(format!("{} sessions left open", sandbox.live_sessions()));
    }
    Ok(probes)
}
