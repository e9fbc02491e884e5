use serde_json::{json, Value};
use std::path::Path;
use std::process::{Command, Output};

fn ctm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctm"))
        .args(args)
        .current_dir(dir)
        .env_remove("CTM_ENDPOINT")
        .env_remove("CTM_API_KEY")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const DOUBLE_OK: &str = "n = int(input())\\nprint(n * 2)";
const DOUBLE_WRONG: &str = "n = int(input())\\nprint(n + 2)";

fn dataset() -> String {
    let code = json!({"id": "dbl", "kind": "code", "prompt": "Read n and print 2n.",
        "tests": [{"stdin": "21\n", "stdout": "42\n"}, {"stdin": "2\n", "stdout": "4\n"}]});
    let math = json!({"id": "frac", "kind": "math", "prompt": "What is 3/4?", "answer": "0.75"});
    format!("{code}\n{math}\n")
}

fn answer(program: &str) -> String {
    format!("\"```python\\n{program}\\n```</answer>\"")
}

#[test]
fn solve_prints_the_transcript() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "prompt.txt", "What is 2+2?");
    write(d.path(), "fx.json", r#"{"default": ["plan<code>print(2+2)</code>", "done</think>", "4</answer>"]}"#);
    let o = ctm(d.path(), &["solve", "prompt.txt", "--fixture", "fx.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        stdout(&o),
        "What is 2+2?<think>plan<code>print(2+2)</code><output>4\n</output>done</think><answer>4</answer>\n"
    );
}

#[test]
fn eval_writes_reports_and_masks() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "ds.jsonl", &dataset());
    let fx = format!(
        r#"{{"problems": {{"dbl": ["Check.<code>print(21 * 2)</code>", "</think>", {}], "frac": ["</think>", "3/4</answer>"]}}}}"#,
        answer(DOUBLE_OK)
    );
    write(d.path(), "fx.json", &fx);
    let o = ctm(d.path(), &["eval", "ds.jsonl", "--fixture", "fx.json", "--parallelism", "2", "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["pass_rate"], json!(1.0));
    assert_eq!(summary["accuracy"], json!(1.0));
    assert_eq!(summary["code_reasoning_ratio"], json!(0.5));
    for f in ["trajectories.jsonl", "report.csv", "report.json"] {
        assert!(d.path().join("out").join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(d.path().join("out/report.csv")).unwrap();
    assert!(csv.starts_with("problem_id,kind,reward,turns,code_cells,behavior,code_inspired\ndbl,code,1.0,"));

    let o = ctm(d.path(), &["mask", "out/trajectories.jsonl"]);
    assert_eq!(o.status.code(), Some(0));
    let traj: Vec<Value> = std::fs::read_to_string(d.path().join("out/trajectories.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let lines: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for (line, rec) in lines.iter().zip(&traj) {
        let len = rec["transcript"].as_str().unwrap().len();
        assert_eq!(line["total_bytes"], json!(len));
        // the CLI recomputes the mask that eval stored
        assert_eq!(line["spans"], rec["mask"]);
    }
}

#[test]
fn unscored_problem_exits_2() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "ds.jsonl", &dataset());
    // no fixture for "frac": its policy call fails, which is not the model's fault
    let fx = format!(r#"{{"problems": {{"dbl": ["</think>", {}]}}}}"#, answer(DOUBLE_WRONG));
    write(d.path(), "fx.json", &fx);
    let o = ctm(d.path(), &["eval", "ds.jsonl", "--fixture", "fx.json", "--out", "out"]);
    assert_eq!(o.status.code(), Some(2));
    let summary: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["unscored"], json!(1));
    assert_eq!(summary["pass_rate"], json!(0.0));
    assert_eq!(summary["accuracy"], Value::Null);
}

#[test]
fn fatal_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    let o = ctm(d.path(), &["eval", "missing.jsonl", "--fixture", "fx.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    write(d.path(), "ds.jsonl", &dataset());
    let o = ctm(d.path(), &["eval", "ds.jsonl", "--policy", "remote"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("CTM_ENDPOINT"));
    let o = ctm(d.path(), &["rollout", "ds.jsonl", "--group-size", "1", "--fixture", "fx.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn rollout_then_dapo_stats() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "ds.jsonl", &dataset());
    let fx = format!(
        r#"{{"problems": {{"frac": ["</think>", "0.75</answer>"]}},
            "conversations": {{"dbl#0": ["</think>", {ok}], "dbl#1": ["Try.<code>print(1)</code>", "</think>", {bad}],
                               "frac#1": ["</think>", "0.7</answer>"]}}}}"#,
        ok = answer(DOUBLE_OK),
        bad = answer(DOUBLE_WRONG)
    );
    write(d.path(), "fx.json", &fx);
    let o = ctm(d.path(), &["rollout", "ds.jsonl", "--group-size", "2", "--fixture", "fx.json", "--out", "ro"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stats: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(stats[0]["correct"], json!(1));
    assert_eq!(stats[0]["code_reasoning_ratio"], json!(0.5));
    assert!(d.path().join("ro/rollout_stats.csv").exists());

    let o = ctm(d.path(), &["dapo-stats", "ro/rollouts.jsonl"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(s["groups"], json!(2));
    assert_eq!(s["retained"], json!(2));
    // both groups are one right, one wrong: advantages +1 and -1, so J at
    // ratio 1 is the mean over groups of (len_right - len_wrong) / total
    let groups: Vec<Value> = std::fs::read_to_string(d.path().join("ro/rollouts.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let mut want = 0.0;
    for g in &groups {
        let r: Vec<f64> = serde_json::from_value(g["rewards"].clone()).unwrap();
        let n: Vec<f64> = serde_json::from_value(g["lengths"].clone()).unwrap();
        let signed: f64 = r.iter().zip(&n).map(|(r, n)| r * n).sum();
        want += signed / n.iter().sum::<f64>() / groups.len() as f64;
    }
    let got = s["objective_at_identity"].as_f64().unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert_eq!(s["per_group"][0]["advantages"], json!([1.0, -1.0]));
}

#[test]
fn trace_build_runs_code_steps() {
    let d = tempfile::tempdir().unwrap();
    let steps = json!({"prompt": "Q", "steps": [
        {"stage": "Understand", "content": "Sum of 1..10.", "is_code": false},
        {"stage": "Plan", "content": "Compute it.", "is_code": false},
        {"stage": "Code", "content": "print(sum(range(11)))", "is_code": true},
        {"stage": "Validate", "content": "Matches n(n+1)/2.", "is_code": false},
        {"stage": "Finalize", "content": "55", "is_code": false}
    ]});
    write(d.path(), "steps.json", &steps.to_string());
    let o = ctm(d.path(), &["trace-build", "steps.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        stdout(&o),
        "Q<think>Sum of 1..10.\nCompute it.<code>print(sum(range(11)))</code><output>55\n</output>\
         Matches n(n+1)/2.</think><answer>55</answer>\n"
    );
}
