use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::{grad_check, GradCheckOptions, LstmState};
use crate::tensor::Dims;

fn small_config(dims: Dims) -> ModelConfig {
    ModelConfig {
        embedding: 2,
        steps: 2,
        hidden_state: 3,
        hidden_widths: vec![3, 2],
        hidden_activation: Activation::Tanh,
        ..ModelConfig::new(dims)
    }
}

fn random_model(config: ModelConfig, seed: u64) -> NtfModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = NtfModel::init(config, &mut rng, None).unwrap();
    // larger embeddings so the encoder and decoder are far from linear
    for t in [
        &mut model.params.users,
        &mut model.params.items,
        &mut model.params.time,
    ] {
        for x in t.as_mut_slice() {
            *x = rng.random_range(-1.0..1.0);
        }
    }
    model
}

#[test]
fn cp_predict_examples() {
    assert_eq!(
        cp_predict(&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]).unwrap(),
        2.0
    );
    assert_eq!(
        cp_predict(&[0.0, 0.0], &[3.0, 4.0], &[5.0, 6.0]).unwrap(),
        0.0
    );
    assert_eq!(
        cp_predict(&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]).unwrap(),
        63.0
    );
    assert!(matches!(
        cp_predict(&[1.0], &[1.0, 2.0], &[1.0]),
        Err(NtfError::ShapeMismatch { .. })
    ));
}

proptest! {
    #[test]
    fn cp_predict_symmetric_and_trilinear(
        u in prop::collection::vec(-3.0..3.0f64, 4),
        v in prop::collection::vec(-3.0..3.0f64, 4),
        t in prop::collection::vec(-3.0..3.0f64, 4),
        alpha in -4.0..4.0f64,
    ) {
        let base = cp_predict(&u, &v, &t).unwrap();
        for perm in [cp_predict(&v, &u, &t), cp_predict(&t, &v, &u), cp_predict(&u, &t, &v)] {
            prop_assert!((perm.unwrap() - base).abs() < 1e-12);
        }
        let scaled: Vec<f64> = u.iter().map(|x| alpha * x).collect();
        prop_assert!((cp_predict(&scaled, &v, &t).unwrap() - alpha * base).abs() < 1e-10);
    }
}

#[test]
fn zero_model_encodes_zero() {
    let mut config = ModelConfig::new(Dims::new(2, 2, 6));
    config.projection_activation = Activation::Identity;
    let model = NtfModel::zeros(config).unwrap();
    for k in 0..=6 {
        assert!(model.encode_time(k).unwrap().iter().all(|&x| x == 0.0));
    }
    assert!(matches!(
        model.encode_time(7),
        Err(NtfError::SlotOutOfRange { k: 7, max: 6 })
    ));
}

#[test]
fn early_slots_are_zero_padded() {
    // k = 2 with s = 5 sees (0, 0, 0, T_0, T_1): identical to a model whose
    // earlier rows are irrelevant, and unchanged by rows 2 and later.
    let mut config = ModelConfig::new(Dims::new(1, 1, 8));
    config.embedding = 3;
    config.hidden_state = 4;
    config.batch_norm = false;
    let model = random_model(config, 5);
    let base = model.encode_time(2).unwrap();

    let mut by_hand = LstmState::zeros(4);
    let zero = vec![0.0; 3];
    for x in [
        &zero,
        &zero,
        &zero,
        &model.params.time.row(0).to_vec(),
        &model.params.time.row(1).to_vec(),
    ] {
        by_hand = crate::nn::lstm_step(&model.params.lstm, x, &by_hand, None).unwrap();
    }
    let mut expected = crate::nn::dense_forward(&model.params.projection, &by_hand.h).unwrap();
    Activation::Tanh.apply_slice(&mut expected);
    for (a, b) in base.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn scalar_encoder_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let mut config = ModelConfig::new(Dims::new(1, 1, 4));
        config.embedding = 1;
        config.hidden_state = 1;
        config.steps = 2;
        config.batch_norm = false;
        let mut model = NtfModel::zeros(config).unwrap();
        let mut r = || rng.random_range(-2.0..2.0);
        for x in model.params.tensors_mut().into_iter().flatten() {
            *x = r();
        }
        let p = &model.params;
        let (w, v, b) = (
            |g: usize| p.lstm.w[g][(0, 0)],
            |g: usize| p.lstm.v[g][(0, 0)],
            |g: usize| p.lstm.b[g][0],
        );
        for k in 0..=4usize {
            let xs: Vec<f64> = [k as isize - 2, k as isize - 1]
                .iter()
                .map(|&s| if s < 0 { 0.0 } else { p.time[(s as usize, 0)] })
                .collect();
            let (mut h, mut c) = (0.0, 0.0);
            for x in xs {
                let i = sig(w(0) * h + v(0) * x + b(0));
                let o = sig(w(1) * h + v(1) * x + b(1));
                let f = sig(w(2) * h + v(2) * x + b(2));
                let cand = (w(3) * h + v(3) * x + b(3)).tanh();
                c = f * c + i * cand;
                h = o * c.tanh();
            }
            let expected = (p.projection.w[(0, 0)] * h + p.projection.b[0]).tanh();
            let got = model.encode_time(k).unwrap()[0];
            assert!((got - expected).abs() < 1e-12, "k={k}: {got} vs {expected}");
        }
    }
}

#[test]
fn decode_examples() {
    let dims = Dims::new(1, 1, 1);
    let mut config = ModelConfig::new(dims);
    config.embedding = 2;
    let mut model = NtfModel::zeros(config.clone()).unwrap();
    model.params.head.b[0] = 0.7;
    assert_eq!(
        model
            .decode(&[3.0, -1.0], &[0.5, 9.0], &[1.0, 1.0])
            .unwrap(),
        0.7
    );
    assert!(matches!(
        model.decode(&[1.0], &[0.0, 0.0], &[0.0, 0.0]),
        Err(NtfError::ShapeMismatch { .. })
    ));

    config.hidden_widths.clear();
    let mut linear = NtfModel::zeros(config).unwrap();
    linear
        .params
        .head
        .w
        .as_mut_slice()
        .copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    linear.params.head.b[0] = -1.0;
    let y = linear
        .decode(&[1.0, 0.0], &[0.0, 1.0], &[2.0, -1.0])
        .unwrap();
    assert_eq!(y, 1.0 + 4.0 + 10.0 - 6.0 - 1.0);
}

#[test]
fn scalar_decoder_oracle() {
    let mut config = ModelConfig::new(Dims::new(1, 1, 1));
    config.embedding = 1;
    config.hidden_widths = vec![1];
    let mut model = NtfModel::zeros(config).unwrap();
    model.params.hidden[0]
        .w
        .as_mut_slice()
        .copy_from_slice(&[0.5, -1.5, 2.0]);
    model.params.hidden[0].b[0] = 0.25;
    model.params.head.w[(0, 0)] = -3.0;
    model.params.head.b[0] = 0.1;
    // z = relu(0.5·2 − 1.5·0.4 + 2·0.3 + 0.25) = 1.25
    let y = model.decode(&[2.0], &[0.4], &[0.3]).unwrap();
    assert!((y - (-3.0 * 1.25 + 0.1)).abs() < 1e-12);
    // negative pre-activation is clipped by relu
    let y = model.decode(&[-2.0], &[0.4], &[0.3]).unwrap();
    assert!((y - 0.1).abs() < 1e-12);
}

#[test]
fn zero_model_predicts_head_bias() {
    let mut model = NtfModel::zeros(ModelConfig::new(Dims::new(3, 4, 5))).unwrap();
    model.params.head.b[0] = 3.6;
    for (i, j, k) in [(0, 0, 0), (2, 3, 5), (1, 2, 3)] {
        assert_eq!(model.predict(i, j, k).unwrap(), 3.6);
    }
    assert!(matches!(
        model.predict(3, 0, 0),
        Err(NtfError::IndexOutOfRange { .. })
    ));
    assert!(matches!(
        model.predict(0, 0, 6),
        Err(NtfError::IndexOutOfRange { .. })
    ));
}

#[test]
fn dot_variant_with_zero_time_is_zero() {
    let mut config = small_config(Dims::new(3, 3, 4));
    config.variant = Variant::Dot;
    let mut model = random_model(config, 3);
    model.params.time.fill(0.0);
    model.params.projection.w.fill(0.0);
    model.params.projection.b.fill(0.0);
    if let Some(bn) = &mut model.params.projection_bn {
        bn.beta.fill(0.0);
    }
    for k in 0..=4 {
        assert_eq!(model.predict(1, 2, k).unwrap(), 0.0);
    }
}

#[test]
fn predict_composes_encoder_and_decoder() {
    let mut config = small_config(Dims::new(3, 3, 4));
    config.hidden_widths = vec![4];
    let model = random_model(config.clone(), 21);
    for k in 0..=4 {
        let t_hat = model.encode_time(k).unwrap();
        let expected = model
            .decode(model.params.users.row(2), model.params.items.row(1), &t_hat)
            .unwrap();
        assert!((model.predict(2, 1, k).unwrap() - expected).abs() < 1e-12);
    }

    config.variant = Variant::Dot;
    let dot = random_model(config, 21);
    let t_hat = dot.encode_time(3).unwrap();
    let expected = cp_predict(dot.params.users.row(0), dot.params.items.row(2), &t_hat).unwrap();
    assert!((dot.predict(0, 2, 3).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn predict_batch_matches_predict_bitwise() {
    let model = random_model(small_config(Dims::new(4, 5, 6)), 8);
    let triples = vec![
        (0, 0, 0),
        (3, 4, 6),
        (1, 2, 3),
        (1, 2, 3),
        (2, 1, 0),
        (0, 4, 5),
    ];
    let batch = model.predict_batch(&triples).unwrap();
    assert_eq!(batch.len(), triples.len());
    for (&(i, j, k), &y) in triples.iter().zip(&batch) {
        assert_eq!(y.to_bits(), model.predict(i, j, k).unwrap().to_bits());
    }
    assert_eq!(batch[2], batch[3]);
    assert!(model.predict_batch(&[]).unwrap().is_empty());
    assert!(model.predict_batch(&[(0, 0, 7)]).is_err());
}

#[test]
fn sigmoid_head_stays_in_range() {
    let mut config = small_config(Dims::new(3, 3, 5));
    config.output_activation = Activation::Sigmoid;
    config.value_range = (1.0, 5.0);
    let mut model = random_model(config, 2);
    model
        .params
        .head
        .w
        .as_mut_slice()
        .iter_mut()
        .for_each(|w| *w *= 40.0);
    for i in 0..3 {
        for k in 0..=5 {
            let y = model.predict(i, 2 - i, k).unwrap();
            assert!(y > 1.0 && y < 5.0, "{y}");
        }
    }
}

#[test]
fn encoding_is_causal() {
    let model = random_model(small_config(Dims::new(2, 2, 7)), 17);
    for k in 0..=7 {
        let base = model.encode_time(k).unwrap();
        let mut perturbed = model.clone();
        for slot in k..7 {
            for x in perturbed.params.time.row_mut(slot) {
                *x += 10.0;
            }
        }
        assert_eq!(perturbed.encode_time(k).unwrap(), base, "slot {k}");
        if k > 0 {
            let mut earlier = model.clone();
            earlier.params.time[(k - 1, 0)] += 1.0;
            assert_ne!(earlier.encode_time(k).unwrap(), base);
        }
    }
}

fn batch(dims: Dims, seed: u64, n: usize) -> Vec<Entry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            Entry::new(
                rng.random_range(0..dims.users),
                rng.random_range(0..dims.items),
                rng.random_range(0..dims.slots),
                rng.random_range(0.0..1.0),
            )
        })
        .collect()
}

fn check_gradients(model: &NtfModel, entries: &[Entry]) {
    let analytic = model.loss_and_grad(entries).unwrap();
    let grads: Vec<Vec<f64>> = analytic
        .grads
        .tensors()
        .iter()
        .map(|t| t.to_vec())
        .collect();
    let mut probe = model.clone();
    let report = grad_check(
        |blocks| {
            probe.params.load_blocks(blocks);
            probe.batch_loss(entries)
        },
        &model.params.blocks(),
        &grads,
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed, "{:#?}", report.blocks);
}

#[test]
fn full_model_gradients() {
    let dims = Dims::new(3, 4, 5);
    let model = random_model(small_config(dims), 1);
    check_gradients(&model, &batch(dims, 2, 12));
}

#[test]
fn gradients_without_batch_norm_and_relu() {
    let dims = Dims::new(3, 4, 5);
    let mut config = small_config(dims);
    config.batch_norm = false;
    config.hidden_activation = Activation::Sigmoid;
    config.steps = 3;
    check_gradients(&random_model(config, 4), &batch(dims, 5, 9));
}

#[test]
fn gradients_sigmoid_head_and_dot_variant() {
    let dims = Dims::new(3, 3, 4);
    let mut config = small_config(dims);
    config.output_activation = Activation::Sigmoid;
    config.value_range = (0.0, 2.0);
    check_gradients(&random_model(config.clone(), 6), &batch(dims, 7, 8));
    config.variant = Variant::Dot;
    config.output_activation = Activation::Identity;
    check_gradients(&random_model(config, 8), &batch(dims, 9, 8));
}

#[test]
fn gradients_last_row_encoder() {
    let dims = Dims::new(2, 3, 4);
    let mut config = small_config(dims);
    config.encoder = TimeEncoder::LastRow;
    let model = random_model(config, 10);
    assert!(model.params.lstm_bn.is_empty() && model.params.projection_bn.is_none());
    check_gradients(&model, &batch(dims, 11, 7));
}

#[test]
fn loss_and_grad_is_pure_and_validates() {
    let dims = Dims::new(2, 2, 3);
    let mut model = random_model(small_config(dims), 12);
    let entries = batch(dims, 13, 5);
    let before = model.clone();
    let g = model.loss_and_grad(&entries).unwrap();
    assert_eq!(model, before);
    assert_eq!(g.bn_stats.len(), model.config.steps + 1);
    model.apply_bn_stats(&g.bn_stats);
    assert_ne!(model.params.projection_bn, before.params.projection_bn);
    let names = model.params.tensor_names();
    assert!(
        !names.contains(&"lstm.b_c".to_string()) && !names.contains(&"projection.b".to_string())
    );
    assert!(matches!(
        model.loss_and_grad(&[]),
        Err(NtfError::EmptyBatch)
    ));
    assert!(model.loss_and_grad(&[Entry::new(2, 0, 0, 1.0)]).is_err());
}

#[test]
fn init_sets_output_bias_to_mean() {
    let dims = Dims::new(2, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let m = NtfModel::init(ModelConfig::new(dims), &mut rng, Some(3.5)).unwrap();
    assert_eq!(m.params.head.b[0], 3.5);
    let mut config = ModelConfig::new(dims);
    config.output_activation = Activation::Sigmoid;
    config.value_range = (1.0, 5.0);
    let m = NtfModel::init(config, &mut rng, Some(3.0)).unwrap();
    assert!(m.params.head.b[0].abs() < 1e-12);
}

#[test]
fn checkpoint_round_trip() {
    let dims = Dims::new(3, 4, 5);
    let mut model = random_model(small_config(dims), 14);
    let g = model.loss_and_grad(&batch(dims, 15, 6)).unwrap();
    model.apply_bn_stats(&g.bn_stats);
    let mut opt = crate::optim::AdamState::for_tensors(&model.params.tensors());
    opt.t = 7;
    opt.m[0][1] = 0.25;
    opt.v[2][0] = 1.5;
    let ckpt = Checkpoint {
        model,
        optimizer: Some(opt),
        epochs_done: 3,
    };
    let mut buf = Vec::new();
    write_checkpoint_to(&ckpt, &mut buf).unwrap();
    assert_eq!(&buf[..4], CHECKPOINT_MAGIC);
    assert_eq!(buf[4], CHECKPOINT_VERSION);
    let back = read_checkpoint_from(buf.as_slice()).unwrap();
    assert_eq!(back, ckpt);
    for (a, b) in [(0, 0, 0), (2, 3, 5)].iter().map(|&(i, j, k)| {
        (
            back.model.predict(i, j, k).unwrap(),
            ckpt.model.predict(i, j, k).unwrap(),
        )
    }) {
        assert_eq!(a.to_bits(), b.to_bits());
    }

    let without = Checkpoint {
        optimizer: None,
        ..ckpt.clone()
    };
    let mut buf2 = Vec::new();
    write_checkpoint_to(&without, &mut buf2).unwrap();
    assert_eq!(read_checkpoint_from(buf2.as_slice()).unwrap(), without);

    assert!(matches!(
        read_checkpoint_from(&buf[..buf.len() - 3]),
        Err(NtfError::CorruptFile(_))
    ));
    let mut bad = buf.clone();
    bad[4] = 9;
    assert!(matches!(
        read_checkpoint_from(bad.as_slice()),
        Err(NtfError::VersionMismatch(_))
    ));
    bad[0] = b'X';
    assert!(matches!(
        read_checkpoint_from(bad.as_slice()),
        Err(NtfError::VersionMismatch(_))
    ));
    buf.push(0);
    assert!(matches!(
        read_checkpoint_from(buf.as_slice()),
        Err(NtfError::CorruptFile(_))
    ));
}
