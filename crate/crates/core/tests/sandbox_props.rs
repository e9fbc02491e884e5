use ctm_core::sandbox::{ErrorKind, SandboxConfig, SandboxManager};
use proptest::prelude::*;
use std::thread;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Cell k defines `v{k}` from an earlier name; the last cell prints a
    /// value computed independently here.
    #[test]
    fn names_persist_across_cells(steps in proptest::collection::vec((0usize..1000, -50i64..50), 10..20)) {
        let m = SandboxManager::default();
        let s = m.open_session(&SandboxConfig::default()).unwrap();
        let mut vals: Vec<i64> = vec![1];
        m.execute_cell(s, "v0 = 1").unwrap();
        for (k, (pick, add)) in steps.iter().enumerate() {
            let src = pick % vals.len();
            let r = m.execute_cell(s, &format!("v{} = v{src} + ({add})", k + 1)).unwrap();
            prop_assert_eq!(r.error_kind, ErrorKind::None, "{}", r.error_summary);
            vals.push(vals[src] + add);
        }
        let total: i64 = vals.iter().sum();
        let names: Vec<String> = (0..vals.len()).map(|i| format!("v{i}")).collect();
        let r = m.execute_cell(s, &format!("print({})", names.join(" + "))).unwrap();
        prop_assert_eq!(r.stdout, format!("{total}\n"));
    }

    #[test]
    fn oversized_output_is_cut_to_the_cap(cap in 1usize..300, extra in 1usize..200) {
        let m = SandboxManager::default();
        let cfg = SandboxConfig { output_byte_cap: cap, ..SandboxConfig::default() };
        let s = m.open_session(&cfg).unwrap();
        let r = m.execute_cell(s, &format!("print('ab' * {})", cap + extra)).unwrap();
        prop_assert!(r.output_truncated);
        prop_assert_eq!(r.stdout.len(), cap);
        prop_assert!(r.stdout.bytes().zip(b"ab".iter().cycle()).all(|(x, y)| x == *y));
    }
}

#[test]
fn concurrent_sessions_are_pairwise_isolated() {
    let m = SandboxManager::new(16);
    let cfg = SandboxConfig { max_cells_per_session: 1000, ..SandboxConfig::default() };
    let sessions: Vec<_> = (0..16).map(|_| m.open_session(&cfg).unwrap()).collect();
    thread::scope(|scope| {
        for (i, s) in sessions.iter().enumerate() {
            let m = &m;
            scope.spawn(move || {
                for round in 0..20 {
                    let r = m.execute_cell(*s, &format!("only_{i} = {round}")).unwrap();
                    assert_eq!(r.error_kind, ErrorKind::None);
                    for j in (0..16).filter(|j| *j != i) {
                        let probe = format!("try:\n    print(only_{j})\nexcept NameError:\n    print('none')");
                        assert_eq!(m.execute_cell(*s, &probe).unwrap().stdout, "none\n", "{i} saw {j}");
                    }
                }
            });
        }
    });
    let r = m.execute_cell(sessions[3], "print(only_3)").unwrap();
    assert_eq!(r.stdout, "19\n");
}
