use ctm_core::policy::{ConversationKey, GenerationRequest, GenerationResult, Policy, PolicyError, ScriptedPolicy};
use ctm_core::reasoner::{escape_markers, Reasoner, ReasonerLimits};
use ctm_core::sandbox::{SandboxConfig, SandboxManager};
use ctm_core::tagproto::{SegmentKind, TagSet};
use ctm_core::TrajectoryStatus;
use proptest::prelude::*;
use std::sync::atomic::{AtomicUsize, Ordering};

const CELLS: [&str; 6] = [
    "c += 1\nprint(c)",
    "c += 1\nprint(c * 10)\n1/0",
    "c += 1\nprint('<think>', c)",
    "c += 1\nundefined_name",
    "c += 1\nfor i in range(c):\n    print(i)",
    "c += 1\ndef f(:",
];

fn turn() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => (0..CELLS.len()).prop_map(|i| format!("step<code>{}</code>", CELLS[i])),
        1 => Just("thinking aloud".to_string()),
        1 => Just("done</think>".to_string()),
        1 => Just("cut off <code>c += 100".to_string()),
        1 => Just("broken </output> text".to_string()),
    ]
}

fn answer() -> impl Strategy<Value = String> {
    prop_oneof![Just("42</answer>".to_string()), Just("```\nc += 1000\n```</answer>".to_string())]
}

struct Counting<'a> {
    inner: &'a ScriptedPolicy,
    calls: AtomicUsize,
}

impl Policy for Counting<'_> {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, PolicyError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(req)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn loop_invariants(turns in proptest::collection::vec(turn(), 1..12), ans in answer(), max_turns in 1usize..10) {
        let mut fixture = turns.clone();
        fixture.push(ans);
        let scripted = ScriptedPolicy::from_fixture(fixture).unwrap();
        let policy = Counting { inner: &scripted, calls: AtomicUsize::new(0) };
        let m = SandboxManager::default();
        let cfg = SandboxConfig::default();
        let s = m.open_session(&cfg).unwrap();
        m.execute_cell(s, "c = 0").unwrap();
        let limits = ReasonerLimits { max_turns, ..Default::default() };
        let t = Reasoner::new(&policy, &m).with_limits(limits).solve(&ConversationKey::new("p", 0), "Count.", s).unwrap();

        // termination
        prop_assert!(policy.calls.load(Ordering::SeqCst) <= max_turns + 1);
        prop_assert!(t.turns_used <= max_turns);

        // only thinking-phase cells ever ran: the counter equals the cells
        // that parse (a syntax error runs nothing)
        let runnable = t
            .transcript
            .segments()
            .iter()
            .filter(|g| g.kind == SegmentKind::Code && g.text != CELLS[5])
            .count();
        let r = m.execute_cell(s, "print(c)").unwrap();
        prop_assert_eq!(r.stdout, format!("{runnable}\n"));

        // replaying the cells reproduces every recorded output
        let tags = TagSet::default();
        let replay = m.open_session(&cfg).unwrap();
        m.execute_cell(replay, "c = 0").unwrap();
        let segs = t.transcript.segments();
        for (i, seg) in segs.iter().enumerate() {
            if seg.kind == SegmentKind::Code {
                let out = &segs[i + 1];
                prop_assert_eq!(out.kind, SegmentKind::ExecutionOutput);
                let r = m.execute_cell(replay, &seg.text).unwrap();
                prop_assert_eq!(&escape_markers(&r.feedback(), &tags), &out.text);
            }
        }
        if t.status == TrajectoryStatus::Answered {
            prop_assert!(t.answer.is_some());
        }
    }
}
