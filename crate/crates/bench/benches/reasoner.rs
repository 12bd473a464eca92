use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use kbqa_core::{
    build_dual_graph, focal_loss, generate, index_examples, DualEdgeMode, ModelConfig,
    ParameterStore, PreparedExample, Reasoner, SubGraph, SynthConfig, Tape, Vocabularies,
    VocabSizes,
};

fn prepared_question(hidden: usize) -> (Reasoner, ParameterStore, PreparedExample) {
    let scfg = SynthConfig {
        train: 1,
        dev: 1,
        test: 1,
        seed: 1234,
        ..SynthConfig::default()
    };
    let data = generate(&scfg).unwrap();
    let mut vocab = Vocabularies::default();
    let indexed = index_examples(&data.train, &mut vocab);
    let cfg = ModelConfig {
        hidden,
        ..ModelConfig::default()
    };
    let sizes = VocabSizes {
        tokens: vocab.tokens.len(),
        entities: vocab.entities.len(),
        relations: vocab.relations.len(),
    };
    let reasoner = Reasoner::new(cfg, sizes).unwrap();
    let params = reasoner.init_params(5).unwrap();
    let ex = reasoner.prepare(&indexed[0]).unwrap();
    (reasoner, params, ex)
}

fn bench_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    for hidden in [32usize, 128] {
        let (reasoner, params, ex) = prepared_question(hidden);
        group.bench_with_input(BenchmarkId::from_parameter(hidden), &hidden, |b, _| {
            b.iter(|| {
                let tape = Tape::new();
                let bound = tape.bind(&params);
                reasoner.forward(&tape, &bound, &ex).unwrap().p_final().value()
            })
        });
    }
    group.finish();
}

fn bench_forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward");
    for hidden in [32usize, 128] {
        let (reasoner, params, ex) = prepared_question(hidden);
        group.bench_with_input(BenchmarkId::from_parameter(hidden), &hidden, |b, _| {
            b.iter(|| {
                let tape = Tape::new();
                let bound = tape.bind(&params);
                let state = reasoner.forward(&tape, &bound, &ex).unwrap();
                let loss = focal_loss(state.p_final(), &ex.answers, 2.0).unwrap();
                tape.backward(loss).named(&bound)
            })
        });
    }
    group.finish();
}

fn bench_dual_graph(c: &mut Criterion) {
    let (_, _, ex) = prepared_question(32);
    let sg: &SubGraph = &ex.sg;
    c.bench_function("build_dual_graph", |b| {
        b.iter(|| build_dual_graph(sg, DualEdgeMode::Pooled).unwrap())
    });
}

criterion_group!(benches, bench_forward, bench_forward_backward, bench_dual_graph);
criterion_main!(benches);
