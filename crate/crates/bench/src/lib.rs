//! Shared fixtures for the criterion benches.

use ctm_core::rlcore::RolloutGroup;
use ctm_core::tagproto::Transcript;

/// A transcript with `cells` code/output rounds and some reasoning between.
pub fn transcript(cells: usize) -> Transcript {
    let mut t = Transcript::with_prompt("Find the sum of the first n squares for n = 1..100.");
    for i in 0..cells {
        t.push_reasoning(&format!("Step {i}: try the closed form and compare with a loop. "));
        t.push_code(&format!("s = sum(k * k for k in range({i} + 1))\nprint(s)"));
        t.push_output(&format!("{}\n", (0..=i).map(|k| k * k).sum::<usize>())).expect("output after code");
    }
    t.close_think().expect("open think");
    t.set_answer("338350").expect("closed think");
    t
}

/// Groups plus per-token log-probabilities under the new and old policies.
pub struct Batch {
    pub groups: Vec<RolloutGroup>,
    pub new: Vec<Vec<Vec<f64>>>,
    pub old: Vec<Vec<Vec<f64>>>,
}

/// `n` groups of `g` samples with mixed rewards and varied lengths.
pub fn groups(n: usize, g: usize, len: usize) -> Batch {
    let mut out = Vec::new();
    let mut new = Vec::new();
    let mut old = Vec::new();
    for q in 0..n {
        let lengths: Vec<usize> = (0..g).map(|i| len + (i * 7 + q) % len).collect();
        let rewards = (0..g).map(|i| if (i + q) % 3 == 0 { 1.0 } else { -1.0 }).collect();
        new.push(lengths.iter().map(|l| (0..*l).map(|t| -((t % 11) as f64) * 0.1).collect()).collect());
        old.push(lengths.iter().map(|l| (0..*l).map(|t| -((t % 13) as f64) * 0.1).collect()).collect());
        out.push(RolloutGroup { question_id: format!("q{q}"), trajectories: Vec::new(), rewards, lengths });
    }
    Batch { groups: out, new, old }
}
