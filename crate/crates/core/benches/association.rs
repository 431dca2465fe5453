//! Sequential vs parallel complaint association and neighbour counting.

use std::fs::File;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use canopy_core::enrich::{associate_complaints, join_taxonomy, position_index, AssociationOptions};
use canopy_core::ingest::{parse_complaints, parse_taxonomy, parse_trees};
use canopy_core::pipeline::{gen_fixture, FixtureSizes};
use canopy_core::Parallelism;

fn bench(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let sizes = FixtureSizes { trees: 10_000, complaints: 5_000, ..FixtureSizes::default() };
    gen_fixture(42, &sizes, dir.path()).unwrap();
    let open = |name: &str| File::open(dir.path().join(name)).unwrap();
    let trees = parse_trees(open("trees.csv")).unwrap().records;
    let complaints = parse_complaints(open("complaints.csv")).unwrap().records;
    let taxonomy = parse_taxonomy(open("taxonomy.csv")).unwrap().records;
    let (joined, _) = join_taxonomy(&trees, &taxonomy).unwrap();
    let opts = AssociationOptions { by_period: true, ..AssociationOptions::default() };
    let index = position_index(&complaints, |c| c.location, opts.radius_m).unwrap();
    let tree_index = position_index(&trees, |t| t.location, 50.0).unwrap();
    let centers: Vec<_> = trees.iter().map(|t| t.location).collect();

    let mut group = c.benchmark_group("association");
    group.sample_size(10);
    for mode in [Parallelism::Sequential, Parallelism::Parallel] {
        let label = format!("{mode:?}").to_lowercase();
        group.bench_with_input(BenchmarkId::new("complaints_per_tree", &label), &mode, |b, &mode| {
            b.iter(|| associate_complaints(&joined, &complaints, &index, &opts, mode).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("trees_within_50m", &label), &mode, |b, &mode| {
            b.iter(|| tree_index.count_many(&centers, 50.0, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
