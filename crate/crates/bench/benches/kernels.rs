use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kdey_bench::{random_posteriors, round_robin_labels};
use kdey_core::density::Kde;
use kdey_core::divergence::CsTrainStats;
use kdey_core::quantifiers::{Aggregation, KdeyCs, KdeyHd, KdeyMl};
use kdey_core::OptimizerConfig;
use ndarray::Array2;

fn kde_log_density(c: &mut Criterion) {
    let mut group = c.benchmark_group("kde_log_densities");
    for refs in [100, 1_000] {
        let kde = Kde::from_posteriors(&random_posteriors(refs, 3, 1), 0.1).unwrap();
        let queries = random_posteriors(500, 3, 2);
        group.bench_with_input(BenchmarkId::from_parameter(refs), &refs, |b, _| {
            b.iter(|| kde.log_densities(queries.view()).unwrap())
        });
    }
    group.finish();
}

fn cs_precompute(c: &mut Criterion) {
    let train = random_posteriors(900, 3, 3);
    let labels = round_robin_labels(900, 3);
    let classes: Vec<Array2<f64>> = kdey_core::data::class_split(&labels, 3)
        .iter()
        .map(|rows| train.select(rows).into_inner())
        .collect();
    c.bench_function("cs_train_stats_900x3", |b| {
        b.iter(|| CsTrainStats::new(classes.clone(), 0.1).unwrap())
    });
    let stats = CsTrainStats::new(classes, 0.1).unwrap();
    let test = random_posteriors(500, 3, 4);
    c.bench_function("cs_with_test_500", |b| b.iter(|| stats.with_test(test.view()).unwrap()));
}

fn quantify(c: &mut Criterion) {
    let train = random_posteriors(900, 3, 5);
    let labels = round_robin_labels(900, 3);
    let bag = random_posteriors(500, 3, 6);
    let opt = OptimizerConfig::default();

    let mut ml = KdeyMl::new(0.1, opt);
    ml.fit(&train, &labels, 3).unwrap();
    let mut cs = KdeyCs::new(0.1, opt);
    cs.fit(&train, &labels, 3).unwrap();
    let mut hd = KdeyHd::new(0.1, 10_000, 0, opt);
    hd.fit(&train, &labels, 3).unwrap();

    let mut group = c.benchmark_group("aggregate_500");
    group.sample_size(10);
    group.bench_function("KDEy-ML", |b| b.iter(|| ml.aggregate(&bag).unwrap()));
    group.bench_function("KDEy-CS", |b| b.iter(|| cs.aggregate(&bag).unwrap()));
    group.bench_function("KDEy-HD", |b| b.iter(|| hd.aggregate(&bag).unwrap()));
    group.finish();
}

criterion_group!(benches, kde_log_density, cs_precompute, quantify);
criterion_main!(benches);
