use std::time::Instant;
use kbqa_core::*;

fn run_probe(facts: usize, clip: f64, epochs: usize, seed: u64) {
    let scfg = SynthConfig { facts, ..SynthConfig::default() };
    let data = generate(&scfg).unwrap();
    let mut vocab = Vocabularies::default();
    let train_x = index_examples(&data.train, &mut vocab);
    let dev_x = index_examples(&data.dev, &mut vocab);
    let test_x = index_examples(&data.test, &mut vocab);
    println!("train stats: {:?}", dataset_stats(&train_x));
    // constraint questions contain the conjunction token "and"
    let and_tok = vocab.tokens.get("and");
    let dataset = Dataset { vocab, train: train_x, dev: dev_x, test: test_x };

    let mcfg = ModelConfig::default();
    let tcfg = TrainConfig { epochs, seed, patience: 500, clip_norm: Some(clip), ..TrainConfig::default() };
    let t = Instant::now();
    let outcome = train(&dataset, &mcfg, &tcfg).unwrap();
    println!("training took {:?} ({} epochs)", t.elapsed(), outcome.report.len());
    for r in outcome.report.iter().step_by(4) {
        println!("epoch {} loss {:.4} dev_hits {:?} dev_f1 {:.3?}", r.epoch, r.train_loss, r.dev_hits_at_1, r.dev_f1);
    }
    let last = outcome.report.last().unwrap();
    println!("last epoch {} loss {:.4} dev_hits {:?}", last.epoch, last.train_loss, last.dev_hits_at_1);

    // breakdown: constraint vs plain questions on dev
    let sizes = model::VocabSizes {
        tokens: dataset.vocab.tokens.len(),
        entities: dataset.vocab.entities.len(),
        relations: dataset.vocab.relations.len(),
    };
    let reasoner = Reasoner::new(mcfg, sizes).unwrap();
    let (mut c_hit, mut c_n, mut p_hit, mut p_n) = (0.0, 0, 0.0, 0);
    for ex in &dataset.dev {
        let prepared = reasoner.prepare(ex).unwrap();
        let tape = Tape::new();
        let bound = tape.bind(&outcome.best_params);
        let state = reasoner.forward(&tape, &bound, &prepared).unwrap();
        let p = state.p_final().value();
        let hit = if prepared.answers.is_empty() { 0 } else { hits_at_1(p.data(), &prepared.answers).unwrap() };
        let is_constraint = and_tok.map_or(false, |t| ex.tokens.contains(&t));
        if is_constraint { c_hit += hit as f64; c_n += 1; } else { p_hit += hit as f64; p_n += 1; }
    }
    println!("dev constraint questions: {}/{} hits", c_hit, c_n);
    println!("dev plain questions: {}/{} hits", p_hit, p_n);
    let test_report = evaluate_split(&dataset, &mcfg, &outcome.best_params, "test", 0.5).unwrap();
    println!("test hits {:.3} f1 {:.3} transe {:.3}", test_report.hits_at_1, test_report.f1, test_report.transe_score);
}

#[test]
#[ignore]
fn probe_a() {
    run_probe(80, 5.0, 60, 7);
}

#[test]
#[ignore]
fn probe_b() {
    run_probe(60, 1.0, 60, 7);
}
