use mkgc::alignment::TextEmbeddingStore;
use mkgc::encoder::encode;
use mkgc::graph::{generate_synthetic, SyntheticSpec, Triple};
use mkgc::kgc::triple_score;
use mkgc::trainer::{
    eval_graph, evaluate_state, train_epoch, EvalSplit, Mode, ModelState, TrainConfig, TrainData,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn make_data() -> TrainData {
    let spec = SyntheticSpec {
        languages: 3,
        base_entities: 300,
        base_relations: 12,
        base_triples: 900,
        coverage: vec![1.0, 0.6, 0.3],
        seed_alignment_ratio: 0.5,
        noise_ratio: 0.0,
        split: (0.7, 0.1, 0.2),
    };
    let synth = generate_synthetic(&spec, &mut ChaCha8Rng::seed_from_u64(0xC7)).unwrap();
    TrainData::new(
        Arc::clone(&synth.corpus),
        synth.seed_pairs.clone(),
        TextEmbeddingStore::empty(),
    )
}

fn mrr_mapped(
    triples: &[Triple],
    n_candidates: usize,
    map: impl Fn(usize) -> usize,
    emb: &mkgc::encoder::ContextEmbeddings,
    state: &ModelState,
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for t in triples {
        for predict_tail in [true, false] {
            let (known_local, answer_local) = if predict_tail {
                (t.head.local_id, t.tail.local_id)
            } else {
                (t.tail.local_id, t.head.local_id)
            };
            let known = emb.get(map(known_local)).unwrap();
            let score_of = |cand_local: usize| {
                let cand = emb.get(map(cand_local)).unwrap();
                if predict_tail {
                    triple_score(known, t.relation, cand, &state.decoder, &state.tensors).unwrap()
                } else {
                    triple_score(cand, t.relation, known, &state.decoder, &state.tensors).unwrap()
                }
            };
            let answer_score = score_of(answer_local);
            let rank = 1 + (0..n_candidates)
                .filter(|&c| c != answer_local && score_of(c) > answer_score)
                .count();
            total += 1.0 / rank as f64;
            count += 1;
        }
    }
    total / count as f64
}

fn run(data: &TrainData, mode: Mode, share: bool, lambda: f64) {
    let corpus = &data.corpus;
    let cfg = TrainConfig {
        dim: 32,
        layers: 2,
        lr: 0.015,
        margin: 1.0,
        negatives_per_positive: 4,
        epochs: 120,
        patience: 0,
        batch_size: 256,
        mode,
        share_encoders: share,
        lambda,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut state = ModelState::new(data, &cfg).unwrap();
    let mut last_active = 0usize;
    for _ in 0..cfg.epochs {
        let rep = train_epoch(&mut state, data, &cfg).unwrap();
        last_active = rep.pairs_active;
    }
    let m = evaluate_state(&state, data, EvalSplit::Test).unwrap();
    let graph = eval_graph(&state, data).unwrap();
    let emb = encode(&graph, &state.encoder_k, &state.tensors, None).unwrap();

    let r0 = corpus.global_range(0);
    let r2 = corpus.global_range(2);
    let n = corpus.language(2).entity_count();
    let l2_test = &corpus.language(2).test;

    let ceiling = mrr_mapped(l2_test, n, |l| r0.start + l, &emb, &state);
    let l0_train: Vec<Triple> = corpus.language(0).train.iter().take(100).cloned().collect();
    let memo = mrr_mapped(&l0_train, n, |l| r0.start + l, &emb, &state);

    let mut cos = 0.0;
    for i in 0..n {
        let a = emb.get(r0.start + i).unwrap();
        let b = emb.get(r2.start + i).unwrap();
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        cos += dot / (na * nb);
    }
    cos /= n as f64;

    println!(
        "sh {share} λ{lambda}  {:9}  l2 mrr {:.4} h10 {:.3}  l1 mrr {:.4}  l0 mrr {:.4}  | ceil {ceiling:.4} memo {memo:.4} cos {cos:.3} gen {last_active}",
        mode.label(),
        m.per_language["l2"].mrr,
        m.per_language["l2"].hits10,
        m.per_language["l1"].mrr,
        m.per_language["l0"].mrr,
    );
}

#[test]
fn probe_sparse() {
    let data = make_data();
    for (share, lambda) in [(true, 1.0), (true, 4.0)] {
        for mode in [Mode::PlainGnn, Mode::RGnn, Mode::Full] {
            run(&data, mode, share, lambda);
        }
    }
}
