use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use iovmesh::rng::{stream, ORDERING};
use iovmesh::routing::build_tables;
use iovmesh::{build_topology, run, step_node, ChannelParams, SimConfig};
use iovmesh_bench::{node_queue, placement};

fn bench_step_node(c: &mut Criterion) {
    let mut group = c.benchmark_group("step_node");
    for n in [4usize, 16, 64] {
        let queue = node_queue(n, 4, 200, 7);
        group.bench_with_input(BenchmarkId::from_parameter(n), &queue, |b, q| {
            let mut rng = stream(7, ORDERING, 0, 0);
            b.iter(|| step_node(200, 200, black_box(q), |_| 120, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn bench_topology(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_topology");
    for vehicles in [20usize, 32, 64] {
        let mut config = SimConfig::default();
        config.scenario.n_vehicles = vehicles;
        let params = ChannelParams::from_config(&config);
        let (nodes, positions) = placement(&config, 1, 120);
        group.bench_with_input(BenchmarkId::from_parameter(vehicles), &vehicles, |b, _| {
            b.iter(|| {
                build_topology(
                    120,
                    &nodes,
                    black_box(&positions),
                    &params,
                    config.scenario.slot_length_s,
                    config.scenario.packet_size_bits,
                )
            })
        });
    }
    group.finish();
}

fn bench_routing(c: &mut Criterion) {
    let config = SimConfig::default();
    let params = ChannelParams::from_config(&config);
    let (nodes, positions) = placement(&config, 1, 120);
    let snapshot = build_topology(
        120,
        &nodes,
        &positions,
        &params,
        config.scenario.slot_length_s,
        config.scenario.packet_size_bits,
    );
    c.bench_function("build_tables", |b| {
        b.iter(|| build_tables(black_box(&snapshot), config.routing.weight))
    });
}

fn bench_run(c: &mut Criterion) {
    let mut group = c.benchmark_group("run");
    group.sample_size(20);
    for vehicles in [20usize, 32] {
        let mut config = SimConfig::default();
        config.scenario.n_vehicles = vehicles;
        group.bench_with_input(BenchmarkId::from_parameter(vehicles), &config, |b, cfg| {
            b.iter(|| run(black_box(cfg), 1).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_step_node, bench_topology, bench_routing, bench_run);
criterion_main!(benches);
