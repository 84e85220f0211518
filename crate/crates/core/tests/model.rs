use avcoop_core::model::{
    assemble_input, extract_mask_embeddings, AvModel, ModalityFeatures, ModelConfig, QueryCompressor, Vocabulary,
};
use avcoop_core::lora::RouterTrace;
use avcoop_core::tensor::gradcheck::{finite_diff_check, GradCheckConfig};
use avcoop_core::tensor::{AdamW, AdamWConfig, ParamStore, Tape, Tensor};
use avcoop_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> ModelConfig {
    ModelConfig {
        hidden: 8,
        blocks: 1,
        mlp_hidden: 8,
        rank: 2,
        n_heads: 3,
        num_tokens: 4,
        frames: 2,
        visual_dim: 3,
        audio_dim: 2,
        k_visual: 2,
        k_audio: 2,
        key_dim: 4,
        max_len: 32,
        mask_feat_dim: 4,
        categories: 1,
    }
}

fn features(cfg: &ModelConfig, seed: u64) -> ModalityFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ModalityFeatures::new(
        Tensor::randn(&[cfg.frames, 5, cfg.visual_dim], 1.0, &mut rng),
        Tensor::randn(&[cfg.frames, 3, cfg.audio_dim], 1.0, &mut rng),
    )
    .unwrap()
}

fn perturb_adapters(model: &mut AvModel, seed: u64, std: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.lm.layers().iter().flat_map(|l| l.trainable_params()).collect();
    for id in ids {
        let shape = model.params.tensor(id).shape().to_vec();
        let v = Tensor::randn(&shape, std, &mut rng).into_data();
        model.params.set_values(id, &v).unwrap();
    }
}

fn logits(model: &AvModel, feats: &ModalityFeatures, ids: &[usize]) -> Tensor {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, feats, ids).unwrap();
    tape.value(out.logits).clone()
}

// ---- compressor -------------------------------------------------------

fn hand_compressor() -> (ParamStore, QueryCompressor) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let c = QueryCompressor::new(&mut store, "c", 2, 2, 2, 2, &mut rng);
    let set = |s: &mut ParamStore, id, v: &[f64]| s.set_values(id, v).unwrap();
    set(&mut store, c.queries, &[1.0, 0.0, 0.0, 1.0]);
    set(&mut store, c.w_key, &[1.0, 0.5, -0.5, 1.0]);
    set(&mut store, c.w_value, &[0.2, 0.1, 0.3, -0.4]);
    set(&mut store, c.mlp_in, &[1.0, -1.0, 0.5, 2.0]);
    set(&mut store, c.mlp_in_bias, &[0.1, -0.2]);
    set(&mut store, c.mlp_out, &[0.3, 0.7, -1.0, 0.2]);
    set(&mut store, c.mlp_out_bias, &[0.0, 0.05]);
    (store, c)
}

fn mat(rows: usize, cols: usize, v: &[f64]) -> Vec<Vec<f64>> {
    (0..rows).map(|i| v[i * cols..(i + 1) * cols].to_vec()).collect()
}

fn mm_bt(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|r| b.iter().map(|c| r.iter().zip(c).map(|(x, y)| x * y).sum()).collect())
        .collect()
}

/// Attention then MLP, one primitive at a time on nested vectors.
fn compressor_oracle(store: &ParamStore, c: &QueryCompressor, feats: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = |id| {
        let t: &Tensor = store.tensor(id);
        mat(t.shape()[0], t.len() / t.shape()[0], t.data())
    };
    let keys = mm_bt(feats, &p(c.w_key));
    let values = mm_bt(feats, &p(c.w_value));
    let scores = mm_bt(&p(c.queries), &keys);
    let scale = 1.0 / (c.key_dim as f64).sqrt();
    let pooled: Vec<Vec<f64>> = scores
        .iter()
        .map(|row| {
            let w: Vec<f64> = row.iter().map(|s| (s * scale).exp()).collect();
            let z: f64 = w.iter().sum();
            (0..c.key_dim)
                .map(|j| w.iter().zip(&values).map(|(wi, v)| wi / z * v[j]).sum())
                .collect()
        })
        .collect();
    let b1 = store.tensor(c.mlp_in_bias).data().to_vec();
    let b2 = store.tensor(c.mlp_out_bias).data().to_vec();
    let h: Vec<Vec<f64>> = mm_bt(&pooled, &p(c.mlp_in))
        .into_iter()
        .map(|r| r.iter().zip(&b1).map(|(x, b)| { let z = x + b; z / (1.0 + (-z).exp()) }).collect())
        .collect();
    mm_bt(&h, &p(c.mlp_out))
        .into_iter()
        .map(|r| r.iter().zip(&b2).map(|(x, b)| x + b).collect())
        .collect()
}

fn compress(store: &ParamStore, c: &QueryCompressor, feats: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let f = tape.constant(feats.clone());
    let out = c.compress(&mut tape, store, f).unwrap();
    tape.value(out).clone()
}

#[test]
fn compressor_hand_case() {
    let (store, c) = hand_compressor();
    let feats = vec![vec![1.0, 2.0], vec![0.0, -1.0], vec![3.0, 0.5]];
    let out = compress(&store, &c, &Tensor::from_rows(&feats).unwrap());
    let frozen = [0.4220687876335313, -0.011713161397734049, 0.01184909333405169, -0.45527106445457227];
    for (a, b) in out.data().iter().zip(frozen) {
        assert!((a - b).abs() < 1e-13, "{a} vs {b}");
    }
    let oracle: Vec<f64> = compressor_oracle(&store, &c, &feats).concat();
    assert!(out.data().iter().zip(&oracle).all(|(a, b)| (a - b).abs() < 1e-13));
}

#[test]
fn compressor_random_case_matches_step_by_step_oracle() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = QueryCompressor::new(&mut store, "c", 5, 4, 6, 3, &mut rng);
        let feats = Tensor::randn(&[7, 5], 1.0, &mut rng);
        let out = compress(&store, &c, &feats);
        let oracle = compressor_oracle(&store, &c, &mat(7, 5, feats.data())).concat();
        assert_eq!(out.shape(), &[3, 6]);
        assert!(out.data().iter().zip(&oracle).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn zero_queries_attend_uniformly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let c = QueryCompressor::new(&mut store, "c", 4, 3, 5, 2, &mut rng);
    store.set_values(c.queries, &[0.0; 6]).unwrap();
    let feats = Tensor::randn(&[6, 4], 1.0, &mut rng);
    let out = compress(&store, &c, &feats);

    let wv = mat(3, 4, store.tensor(c.w_value).data());
    let values = mm_bt(&mat(6, 4, feats.data()), &wv);
    let mean: Vec<f64> = (0..3).map(|j| values.iter().map(|r| r[j]).sum::<f64>() / 6.0).collect();
    let mut tape = Tape::new();
    let m = tape.constant(Tensor::new(&[1, 3], mean).unwrap());
    let expected = c.mlp(&mut tape, &store, m).unwrap();
    let expected = tape.value(expected).data().to_vec();
    for row in 0..2 {
        for (a, b) in out.row(row).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn single_feature_row_is_attended_by_every_query() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let c = QueryCompressor::new(&mut store, "c", 4, 3, 5, 3, &mut rng);
    let feats = Tensor::randn(&[1, 4], 1.0, &mut rng);
    let out = compress(&store, &c, &feats);
    for row in 1..3 {
        assert_eq!(out.row(row), out.row(0));
    }
}

#[test]
fn compressor_rejects_wrong_width() {
    let (store, c) = hand_compressor();
    let mut tape = Tape::new();
    let f = tape.constant(Tensor::zeros(&[3, 5]));
    assert!(matches!(c.compress(&mut tape, &store, f), Err(Error::Shape { .. })));
}

// ---- assembly ---------------------------------------------------------

#[test]
fn assemble_orders_visual_audio_text() {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::filled(&[1, 2], 1.0));
    let a = tape.constant(Tensor::filled(&[1, 2], 2.0));
    let t = tape.constant(Tensor::filled(&[1, 2], 3.0));
    let h0 = assemble_input(&mut tape, v, a, Some(t)).unwrap();
    assert_eq!(tape.value(h0).data(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);

    let h0 = assemble_input(&mut tape, v, a, None).unwrap();
    assert_eq!(tape.shape(h0), &[2, 2]);

    let bad = tape.constant(Tensor::zeros(&[1, 3]));
    assert!(matches!(assemble_input(&mut tape, v, a, Some(bad)), Err(Error::Shape { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn token_count_law(frames in 1usize..4, kv in 1usize..4, ka in 1usize..4, text in 0usize..6, seed in any::<u64>()) {
        let cfg = ModelConfig { frames, k_visual: kv, k_audio: ka, ..small_config() };
        let model = AvModel::new(cfg, seed).unwrap();
        let feats = features(&cfg, seed);
        let ids: Vec<usize> = (0..text).map(|i| 1 + i % 4).collect();
        let mut tape = Tape::new();
        let (hv, ha) = model.encode_modalities(&mut tape, &feats).unwrap();
        let h0 = model.embed_inputs(&mut tape, &feats, &ids).unwrap();
        prop_assert_eq!(tape.shape(h0)[0], frames * kv + frames * ka + text);
        let (nv, na) = (frames * kv, frames * ka);
        let h0v = tape.value(h0).clone();
        for r in 0..nv {
            prop_assert_eq!(h0v.row(r), tape.value(hv).row(r));
        }
        for r in 0..na {
            prop_assert_eq!(h0v.row(nv + r), tape.value(ha).row(r));
        }
        let table = model.params.tensor(model.lm.embedding);
        for (i, &id) in ids.iter().enumerate() {
            prop_assert_eq!(h0v.row(nv + na + i), table.row(id));
        }
    }
}

// ---- LM ---------------------------------------------------------------

#[test]
fn zero_blocks_project_embeddings() {
    let cfg = ModelConfig { blocks: 0, ..small_config() };
    let mut model = AvModel::new(cfg, 5).unwrap();
    perturb_adapters(&mut model, 9, 0.3);
    let feats = features(&cfg, 1);
    let ids = [Vocabulary::BOS, Vocabulary::TASK_SPATIAL];
    let mut tape = Tape::new();
    let h0 = model.embed_inputs(&mut tape, &feats, &ids).unwrap();
    let out = model.forward_lm(&mut tape, h0).unwrap();

    let len = tape.shape(h0)[0];
    let pos = model.params.tensor(model.lm.positions);
    let x: Vec<f64> = tape.value(h0).data().iter().zip(pos.data()).map(|(a, b)| a + b).collect();
    let x = tape.constant(Tensor::new(&[len, cfg.hidden], x).unwrap());
    let expected = model.lm.head.forward(&mut tape, &model.params, x).unwrap().output;
    let diff = tape.value(out.logits).max_abs_diff(tape.value(expected));
    assert_eq!(diff, 0.0);
    assert_eq!(out.scores.len(), 1);
}

#[test]
fn forward_is_bit_deterministic() {
    let cfg = small_config();
    let mut model = AvModel::new(cfg, 11).unwrap();
    perturb_adapters(&mut model, 2, 0.2);
    let feats = features(&cfg, 3);
    let ids = [1, 5, 2, 9];
    let a = logits(&model, &feats, &ids);
    let b = logits(&model, &feats, &ids);
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let other = AvModel::new(cfg, 11).unwrap();
    let mut other = other;
    perturb_adapters(&mut other, 2, 0.2);
    let c = logits(&other, &feats, &ids);
    assert!(a.data().iter().zip(c.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn fresh_model_matches_bypass_free_model_bitwise() {
    for seed in 0..5 {
        let cfg = ModelConfig::default();
        let model = AvModel::new(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let feats = ModalityFeatures::new(
            Tensor::randn(&[cfg.frames, 64, cfg.visual_dim], 1.0, &mut rng),
            Tensor::randn(&[cfg.frames, 4, cfg.audio_dim], 1.0, &mut rng),
        )
        .unwrap();
        let ids = [1, 6, 3, 12, 14, 2];
        let mut tape = Tape::new();
        let h0 = model.embed_inputs(&mut tape, &feats, &ids).unwrap();
        let full = model.forward_lm(&mut tape, h0).unwrap();
        let base = model.forward_base(&mut tape, h0).unwrap();
        let (a, b) = (tape.value(full.logits), tape.value(base.logits));
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn dropping_every_head_recovers_base_model() {
    let cfg = small_config();
    let mut model = AvModel::new(cfg, 8).unwrap();
    perturb_adapters(&mut model, 1, 0.3);
    let feats = features(&cfg, 2);
    let ids = [1, 5, 2];
    let adapted = logits(&model, &feats, &ids);
    model.drop_heads(&[0, 1, 2]).unwrap();
    let dropped = logits(&model, &feats, &ids);
    let mut tape = Tape::new();
    let h0 = model.embed_inputs(&mut tape, &feats, &ids).unwrap();
    let base = model.forward_base(&mut tape, h0).unwrap();
    assert!(dropped.max_abs_diff(tape.value(base.logits)) <= 1e-12);
    assert!(adapted.max_abs_diff(&dropped) > 1e-6);
    model.reset_drops();
    assert_eq!(logits(&model, &feats, &ids), adapted);
    assert!(matches!(model.drop_heads(&[3]), Err(Error::Index { .. })));
}

#[test]
fn lm_cross_entropy_gradients() {
    let cfg = small_config();
    for seed in 0..3 {
        let mut model = AvModel::new(cfg, seed).unwrap();
        perturb_adapters(&mut model, seed + 50, 0.3);
        let feats = features(&cfg, seed);
        let ids = [1, 5, 9, 10, 0];
        let prefix = cfg.prefix_len();
        let targets: Vec<Option<usize>> = (0..prefix + ids.len())
            .map(|p| (p >= prefix && p + 1 < prefix + ids.len()).then(|| ids[p + 1 - prefix]))
            .collect();
        let trainable = model.trainable_ids();
        let decoder = model.decoder.params();
        let ids_to_check: Vec<_> = trainable.into_iter().filter(|id| !decoder.contains(id)).collect();
        let structure = model.clone();
        let gc = GradCheckConfig { max_entries: Some(6), seed, ..GradCheckConfig::default() };
        let report = finite_diff_check(
            &mut model.params,
            &ids_to_check,
            |store, tape| {
                let mut m = structure.clone();
                m.params = store.clone();
                let out = m.forward(tape, &feats, &ids)?;
                tape.cross_entropy(out.logits, &targets)
            },
            &gc,
        )
        .unwrap();
        assert!(report.passed(), "seed {seed}: {:?}", report.max_rel_error());
        assert!(report.params.iter().any(|p| p.name.starts_with("visual.")));
        assert!(report.params.iter().any(|p| p.name.ends_with(".router")));
    }
}

#[test]
fn training_step_touches_only_trainable_parameters() {
    let cfg = small_config();
    let mut model = AvModel::new(cfg, 21).unwrap();
    let before = model.params.clone();
    let feats = features(&cfg, 0);
    let ids = [1, 5, 9, 0];
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &feats, &ids).unwrap();
    let n = tape.shape(out.logits)[0];
    let targets: Vec<Option<usize>> = (0..n).map(|p| (p + 1 >= n - 3 && p + 1 < n).then(|| ids[p + 4 - n])).collect();
    let loss = tape.cross_entropy(out.logits, &targets).unwrap();
    let grads = tape.backward(loss).unwrap();
    tape.accumulate_param_grads(&grads, &mut model.params);
    let mut opt = AdamW::new(AdamWConfig::default());
    opt.step(&mut model.params, 1e-2);

    let mut changed_b = false;
    for (id, p) in model.params.iter() {
        let old = before.get(id);
        if p.frozen {
            assert_eq!(p.tensor.data(), old.tensor.data(), "{} moved", p.name);
        } else if p.name.contains("lora_b") && p.tensor.data() != old.tensor.data() {
            changed_b = true;
        }
    }
    assert!(changed_b);
    for (_, p) in model.params.iter() {
        let frozen_kind = p.name.ends_with(".base") || p.name.starts_with("lm.embedding") || p.name == "lm.positions";
        assert_eq!(p.frozen, frozen_kind, "{}", p.name);
    }
}

// ---- decoding ---------------------------------------------------------

#[test]
fn flat_logits_decode_to_eos() {
    let cfg = small_config();
    let mut model = AvModel::new(cfg, 1).unwrap();
    let n = model.params.tensor(model.lm.head.base).len();
    model.params.set_values(model.lm.head.base, &vec![0.0; n]).unwrap();
    let feats = features(&cfg, 1);
    assert_eq!(model.greedy_decode(&feats, &[1, 5], 10).unwrap(), vec![Vocabulary::EOS]);
}

#[test]
fn max_len_one_yields_one_token() {
    let cfg = small_config();
    let mut model = AvModel::new(cfg, 2).unwrap();
    perturb_adapters(&mut model, 3, 0.5);
    let feats = features(&cfg, 4);
    assert_eq!(model.greedy_decode(&feats, &[1, 5], 1).unwrap().len(), 1);
    assert!(model.greedy_decode(&feats, &[1, 5], 0).is_err());
}

#[test]
fn decoding_is_stable_across_runs() {
    let cfg = small_config();
    let run = || {
        let mut model = AvModel::new(cfg, 77).unwrap();
        perturb_adapters(&mut model, 78, 1.0);
        model.greedy_decode(&features(&cfg, 79), &[1, 6], 12).unwrap()
    };
    let a = run();
    assert!(!a.is_empty());
    assert_eq!(a, run());
}

// ---- mask embeddings --------------------------------------------------

#[test]
fn mask_embeddings_read_positions_by_token_id() {
    let vocab = Vocabulary::new(4);
    let mut ids: Vec<usize> = vec![1, 8];
    ids.extend(vocab.mask_ids());
    ids.push(0);
    let len = ids.len();
    let mut tape = Tape::new();
    let states = tape.constant(Tensor::new(&[len, len], Tensor::identity(len).into_data()).unwrap());
    let [g0, g1] = extract_mask_embeddings(&mut tape, states, &ids, &vocab).unwrap();
    for s in 0..3 {
        assert_eq!(tape.value(g0).row(s)[2 + s], 1.0);
        assert_eq!(tape.value(g1).row(s)[5 + s], 1.0);
    }

    // Reverse the generation order: grouping follows ids, not positions.
    let mut rev = ids.clone();
    rev[2..8].reverse();
    let [g0, g1] = extract_mask_embeddings(&mut tape, states, &rev, &vocab).unwrap();
    for s in 0..3 {
        assert_eq!(tape.value(g0).row(s)[7 - s], 1.0);
        assert_eq!(tape.value(g1).row(s)[4 - s], 1.0);
    }
}

#[test]
fn mask_extraction_names_missing_and_duplicated_ids() {
    let vocab = Vocabulary::new(4);
    let masks = vocab.mask_ids();
    let mut ids = vec![1];
    ids.extend(&masks[..4]);
    ids.push(masks[0]);
    let mut tape = Tape::new();
    let states = tape.constant(Tensor::zeros(&[ids.len(), 3]));
    match extract_mask_embeddings(&mut tape, states, &ids, &vocab) {
        Err(Error::MaskTokens { missing, duplicated }) => {
            assert_eq!(missing, vec![masks[4], masks[5]]);
            assert_eq!(duplicated, vec![masks[0]]);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn end_to_end_mask_embeddings_match_direct_indexing() {
    let cfg = small_config();
    let mut model = AvModel::new(cfg, 13).unwrap();
    perturb_adapters(&mut model, 14, 0.2);
    let feats = features(&cfg, 15);
    let mut ids = vec![1, 8];
    ids.extend(model.vocab.mask_ids().into_iter().rev());
    ids.push(0);
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &feats, &ids).unwrap();
    let groups = extract_mask_embeddings(&mut tape, out.hidden, &ids, &model.vocab).unwrap();
    let hidden = tape.value(out.hidden).clone();
    let prefix = cfg.prefix_len();
    for (g, group) in groups.iter().enumerate() {
        for s in 0..3 {
            let pos = ids.iter().position(|&t| t == model.vocab.mask(g, s)).unwrap();
            assert_eq!(tape.value(*group).row(s), hidden.row(prefix + pos));
        }
    }
}

// ---- tracing and checkpoints ------------------------------------------

#[test]
fn trace_collection_requires_tracing() {
    let cfg = small_config();
    let mut model = AvModel::new(cfg, 3).unwrap();
    let feats = features(&cfg, 3);
    let ids = [1usize, 5, 2];
    let batch = [(&feats, &ids[..])];
    assert!(matches!(model.collect_trace(&batch, "t"), Err(Error::Contract(_))));
    model.set_tracing(true);
    let trace: RouterTrace = model.collect_trace(&batch, "t").unwrap();
    let layers = model.lm.layers().len();
    assert_eq!(trace.rows.len(), layers * (cfg.prefix_len() + ids.len()));
    let p = trace.profile().unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn checkpoint_round_trip() {
    let cfg = small_config();
    let mut model = AvModel::new(cfg, 31).unwrap();
    perturb_adapters(&mut model, 32, 0.1);
    let json = model.save_json().unwrap();
    let loaded = AvModel::load_json(&json).unwrap();
    assert_eq!(loaded.params, model.params);
    assert_eq!(loaded.save_json().unwrap(), json);
    let feats = features(&cfg, 0);
    assert_eq!(logits(&loaded, &feats, &[1, 2]), logits(&model, &feats, &[1, 2]));

    let mut ckpt = model.to_checkpoint();
    ckpt.version = 99;
    assert!(matches!(AvModel::from_checkpoint(&ckpt), Err(Error::Checkpoint(_))));
    let mut ckpt = model.to_checkpoint();
    ckpt.params[0].frozen = !ckpt.params[0].frozen;
    assert!(AvModel::from_checkpoint(&ckpt).is_err());
    let extra = json.replacen('{', "{\"extra\":1,", 1);
    assert!(AvModel::load_json(&extra).is_err());
}
