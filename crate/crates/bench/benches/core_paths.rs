use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ctm_bench::{groups, transcript};
use ctm_core::policy::{ConversationKey, ScriptedPolicy};
use ctm_core::reasoner::Reasoner;
use ctm_core::rlcore::{build_loss_mask, dapo_objective, dapo_objective_grad, DapoConfig};
use ctm_core::sandbox::{SandboxConfig, SandboxManager};
use ctm_core::tagproto::{Parser, TagSet, Transcript};
use std::hint::black_box;

fn parsing(c: &mut Criterion) {
    let tags = TagSet::default();
    let mut g = c.benchmark_group("parse");
    for cells in [4, 64] {
        let text = transcript(cells).serialize(&tags).unwrap();
        g.throughput(Throughput::Bytes(text.len() as u64));
        g.bench_with_input(BenchmarkId::new("whole", cells), &text, |b, s| {
            b.iter(|| Transcript::parse(black_box(s), &tags).unwrap())
        });
        // streaming in 7-byte pieces, like small generation chunks
        let chunks: Vec<&str> = text.as_bytes().chunks(7).map(|c| std::str::from_utf8(c).unwrap()).collect();
        g.bench_with_input(BenchmarkId::new("streamed", cells), &chunks, |b, chunks| {
            b.iter(|| {
                let mut p = Parser::new(tags.clone());
                let mut n = 0;
                for c in chunks {
                    n += p.feed(c).len();
                }
                n + p.finish().len()
            })
        });
    }
    g.finish();
}

fn masking(c: &mut Criterion) {
    let tags = TagSet::default();
    let t = transcript(64);
    c.bench_function("loss_mask/64", |b| b.iter(|| build_loss_mask(black_box(&t), &tags).unwrap()));
}

fn objective(c: &mut Criterion) {
    let cfg = DapoConfig::default();
    let ctm_bench::Batch { groups: gs, new, old } = groups(8, 16, 256);
    let views: Vec<_> = gs.iter().map(|g| g.view()).collect();
    let tokens: usize = gs.iter().flat_map(|g| &g.lengths).sum();
    let mut g = c.benchmark_group("dapo");
    g.throughput(Throughput::Elements(tokens as u64));
    g.bench_function("objective", |b| b.iter(|| dapo_objective(&views, black_box(&new), &old, &cfg).unwrap()));
    g.bench_function("gradient", |b| b.iter(|| dapo_objective_grad(&views, black_box(&new), &old, &cfg).unwrap()));
    g.finish();
}

fn solving(c: &mut Criterion) {
    let turns = [
        "Set up.<code>x = [k * k for k in range(101)]</code>",
        "<code>print(sum(x))</code>",
        "That is the total.</think>",
        "338350</answer>",
    ];
    let manager = SandboxManager::default();
    let cfg = SandboxConfig::default();
    c.bench_function("solve/two_cells", |b| {
        b.iter(|| {
            let p = ScriptedPolicy::from_fixture(turns).unwrap();
            let s = manager.open_session(&cfg).unwrap();
            let t = Reasoner::new(&p, &manager).solve(&ConversationKey::new("b", 0), "Sum of squares?", s).unwrap();
            manager.close_session(s).unwrap();
            t
        })
    });
}

criterion_group!(benches, parsing, masking, objective, solving);
criterion_main!(benches);
