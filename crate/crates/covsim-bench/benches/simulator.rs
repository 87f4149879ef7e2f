use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use covsim::channel::{achievable_rate, classify_link, fading_gain, ChannelParams, LinkClass};
use covsim::perception::{build_topology, line_of_sight, PerceptionParams};
use covsim::scheduling::Policy;
use covsim::world::{build_scenario, candidates_in_range, step_world, ScenarioConfig};
use covsim::{ExperimentConfig, Simulation};

fn bench_world(c: &mut Criterion) {
    let cfg = ScenarioConfig::default();
    let w = build_scenario(&cfg, 1).unwrap();
    c.bench_function("world/step", |b| b.iter(|| step_world(black_box(&w))));
    c.bench_function("world/candidates_in_range", |b| {
        b.iter(|| candidates_in_range(black_box(&w)))
    });
}

fn bench_channel(c: &mut Criterion) {
    let cfg = ScenarioConfig::default();
    let w = build_scenario(&cfg, 2).unwrap();
    let params = ChannelParams::default();
    let cands = candidates_in_range(&w);
    if cands.len() >= 2 {
        c.bench_function("channel/classify_link", |b| {
            b.iter(|| classify_link(black_box(&w), cands[0], cands[1]).unwrap())
        });
    }
    let mut rng = covsim::rng::stream(3, "bench", &[]);
    c.bench_function("channel/fading_gain", |b| {
        b.iter(|| fading_gain(black_box(&params), LinkClass::Los, &mut rng))
    });
    c.bench_function("channel/achievable_rate", |b| {
        b.iter(|| achievable_rate(black_box(&params), 0.15e6, 95.0, 0.8))
    });
}

fn bench_perception(c: &mut Criterion) {
    let cfg = ScenarioConfig::default();
    let w = build_scenario(&cfg, 3).unwrap();
    let params = PerceptionParams::default();
    let a = w.ego().position();
    let b2 = covsim::Vec2::new(a.x + 60.0, a.y + 30.0);
    c.bench_function("perception/line_of_sight", |b| {
        b.iter(|| line_of_sight(black_box(&w), a, b2, &[w.ego_id]))
    });
    c.bench_function("perception/build_topology", |b| {
        b.iter(|| build_topology(black_box(&w), &params))
    });
}

fn bench_frames(c: &mut Criterion) {
    for policy in [Policy::Closest, Policy::Cmass, Policy::Coverage] {
        let mut cfg = ExperimentConfig::default();
        cfg.scheduling.policy = policy;
        cfg.scheduling.n = 4;
        cfg.frames = 1;
        cfg.seed = 5;
        c.bench_function(&format!("engine/run_frame/{policy}"), |b| {
            let mut sim = Simulation::new(cfg.clone()).unwrap();
            b.iter(|| sim.run_frame().unwrap())
        });
    }
}

criterion_group!(
    benches,
    bench_world,
    bench_channel,
    bench_perception,
    bench_frames
);
criterion_main!(benches);
