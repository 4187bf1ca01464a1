use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use engnn_bench::{instances, instances_of, params};
use engnn_core::chansim::{ScenarioConfig, ScenarioKind};
use engnn_core::engnn::{infer, COOP_REFERENCE_WIDTH};

fn coop_inference(c: &mut Criterion) {
    let data = instances(ScenarioKind::Coop, 16);
    let mut group = c.benchmark_group("coop_inference");
    for width in [16, 32, COOP_REFERENCE_WIDTH] {
        let p = params(ScenarioKind::Coop, 2, Some(width));
        group.bench_with_input(BenchmarkId::new("width", width), &p, |b, p| {
            let mut i = 0;
            b.iter(|| {
                let (inst, _) = &data[i % data.len()];
                i += 1;
                black_box(infer(p, inst, &inst.graph().unwrap()).unwrap())
            })
        });
    }
    group.finish();
}

fn ic_inference_by_size(c: &mut Criterion) {
    let p = params(ScenarioKind::Ic, 2, None);
    let mut group = c.benchmark_group("ic_inference");
    for k in [4, 8, 16] {
        let mut cfg = ScenarioConfig::default_for(ScenarioKind::Ic);
        cfg.n_bs = k;
        cfg.n_ue = k;
        let data = instances_of(&cfg, 8);
        group.bench_with_input(BenchmarkId::new("pairs", k), &data, |b, data| {
            let mut i = 0;
            b.iter(|| {
                let (inst, g) = &data[i % data.len()];
                i += 1;
                black_box(infer(&p, inst, g).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, coop_inference, ic_inference_by_size);
criterion_main!(benches);
