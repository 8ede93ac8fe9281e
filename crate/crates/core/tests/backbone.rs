use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiftkt_core::backbone::{
    bce_loss, mean_bce_loss, train, Backbone, BackboneConfig, DynamicLayerParams,
};
use shiftkt_core::checkpoint::Checkpoint;
use shiftkt_core::data::Window;
use shiftkt_core::numcore::{grad_check, Matrix};
use shiftkt_core::train::TrainConfig;
use shiftkt_core::Error;

fn small_config(concepts: usize) -> BackboneConfig {
    BackboneConfig {
        num_concepts: concepts,
        embed_dim: 6,
        hidden: 5,
    }
}

fn random_window(rng: &mut ChaCha8Rng, concepts: usize, len: usize, cap: usize) -> Window {
    let c: Vec<usize> = (0..len).map(|_| rng.random_range(0..concepts)).collect();
    let r: Vec<u8> = (0..len).map(|_| rng.random_range(0..2)).collect();
    let t: Vec<i64> = (0..len as i64).collect();
    Window::from_parts(1, &c, &r, &t, cap).unwrap()
}

/// Response is 1 exactly when the concept id is even.
fn parity_windows(rng: &mut ChaCha8Rng, n: usize, concepts: usize, len: usize) -> Vec<Window> {
    (0..n)
        .map(|i| {
            let c: Vec<usize> = (0..len).map(|_| rng.random_range(0..concepts)).collect();
            let r: Vec<u8> = c.iter().map(|&x| (x % 2 == 0) as u8).collect();
            let t: Vec<i64> = (0..len as i64).collect();
            Window::from_parts(i as u64, &c, &r, &t, len).unwrap()
        })
        .collect()
}

#[test]
fn proficiencies_are_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = Backbone::new(BackboneConfig::new(7), 3).unwrap();
    let w = random_window(&mut rng, 7, 9, 12);
    let states = model.forward(&w, None).unwrap();
    assert_eq!(states.len(), 9);
    for (i, s) in states.iter().enumerate() {
        assert_eq!(s.step, i + 1);
        assert_eq!(s.proficiency.len(), 7);
        assert!(s.proficiency.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn stored_weights_as_override_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Backbone::new(BackboneConfig::new(5), 4).unwrap();
    let w = random_window(&mut rng, 5, 10, 10);
    let layer = model.dynamic_layer();
    let a = model.forward(&w, None).unwrap();
    let b = model.forward(&w, Some(&layer)).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!(x.proficiency.iter().zip(&y.proficiency).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    let ws: Vec<Window> = (0..3).map(|_| random_window(&mut rng, 5, 8, 10)).collect();
    let refs: Vec<&Window> = ws.iter().collect();
    let layers = vec![&layer; 3];
    let plain = model.predict(&refs, None, &[1, 1, 1]).unwrap();
    let over = model.predict(&refs, Some(&layers), &[1, 1, 1]).unwrap();
    assert_eq!(plain, over);
}

#[test]
fn zero_output_layer_gives_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut model = Backbone::new(BackboneConfig::new(4), 0).unwrap();
    model.out_weight.fill(0.0);
    model.out_bias.fill(0.0);
    let states = model.forward(&random_window(&mut rng, 4, 6, 6), None).unwrap();
    assert!(states.iter().all(|s| s.proficiency.iter().all(|&p| p == 0.5)));
}

#[test]
fn override_shape_mismatch_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = Backbone::new(BackboneConfig::new(4), 0).unwrap();
    let bad = DynamicLayerParams {
        weight: Matrix::zeros(3, 4),
        bias: vec![0.0; 4],
    };
    let w = random_window(&mut rng, 4, 5, 5);
    assert!(matches!(model.forward(&w, Some(&bad)), Err(Error::Dimension { .. })));
}

#[test]
fn out_of_range_concept_is_an_index_error() {
    let model = Backbone::new(BackboneConfig::new(3), 0).unwrap();
    let w = Window::from_parts(1, &[0, 3], &[1, 0], &[0, 1], 2).unwrap();
    assert!(matches!(model.forward(&w, None), Err(Error::Index(_))));
}

#[test]
fn bce_hand_values() {
    let loss = bce_loss(&[0.9, 0.2], &[1.0, 0.0], &[true, true]).unwrap();
    assert!((loss - 0.328_504_066_972_034_6).abs() < 1e-12);
    let half = bce_loss(&[0.5; 6], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0], &[true, true, true, true, false, false]).unwrap();
    assert!((half - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
    let perfect = bce_loss(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0], &[true; 3]).unwrap();
    assert!(perfect <= 3.0 * 1e-6);
    let mean = mean_bce_loss(&[0.5; 4], &[1.0; 4], &[true, true, false, false]).unwrap();
    assert!((mean - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(matches!(
        bce_loss(&[0.5, 0.5], &[1.0, 0.0], &[false, false]),
        Err(Error::Degenerate(_))
    ));
}

#[test]
fn loss_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = Backbone::new(small_config(4), 7).unwrap();
    let windows = [
        random_window(&mut rng, 4, 8, 8),
        random_window(&mut rng, 4, 5, 8),
    ];
    let refs: Vec<&Window> = windows.iter().collect();
    let params: Vec<Matrix> = model.tensors().iter().map(|(_, _, m)| (*m).clone()).collect();
    let err = grad_check(
        |tape, p| {
            let vars = model.vars_from(p);
            let enc = model.encode(tape, &vars, &refs)?;
            let layer = model.stored_layer(tape, &vars)?;
            let logits = model.logits(tape, enc, layer)?;
            let mut idx = vec![0; 16];
            let mut targets = vec![0.0; 16];
            let mut mask = vec![false; 16];
            for (b, w) in refs.iter().enumerate() {
                for i in 1..w.len {
                    let r = b * 8 + i - 1;
                    idx[r] = w.concepts[i] - 1;
                    targets[r] = w.responses[i] as f64;
                    mask[r] = true;
                }
            }
            let picked = tape.pick_cols(logits, idx)?;
            let probs = tape.sigmoid(picked);
            tape.bce(probs, targets, mask)
        },
        &params,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn states_are_causal_and_match_prefix_recompute() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = Backbone::new(BackboneConfig::new(6), 1).unwrap();
    let w = random_window(&mut rng, 6, 12, 14);
    let full = model.forward(&w, None).unwrap();
    for t in 1..=w.len {
        let at = model.knowledge_state_at(&w, t).unwrap();
        let oracle = model.forward(&w.prefix(t), None).unwrap();
        assert_eq!(at, oracle[t - 1]);
        assert_eq!(at.proficiency, full[t - 1].proficiency);

        let mut altered = w.clone();
        for i in t..w.len {
            altered.concepts[i] = 1 + (altered.concepts[i] % 6);
            altered.responses[i] ^= 1;
        }
        assert_eq!(model.knowledge_state_at(&altered, t).unwrap(), at);
    }
    assert_eq!(model.knowledge_state_at(&w, w.len).unwrap(), *full.last().unwrap());
    assert!(matches!(model.knowledge_state_at(&w, 0), Err(Error::Index(_))));
    assert!(matches!(model.knowledge_state_at(&w, 13), Err(Error::Index(_))));
}

#[test]
fn learns_concept_parity() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let train_w = parity_windows(&mut rng, 64, 10, 20);
    let valid_w = parity_windows(&mut rng, 16, 10, 20);
    let tr: Vec<&Window> = train_w.iter().collect();
    let va: Vec<&Window> = valid_w.iter().collect();
    let mut model = Backbone::new(BackboneConfig::new(10), 0).unwrap();
    let config = TrainConfig {
        max_epochs: 30,
        patience: 30,
        batch_size: 16,
        lr: 1e-2,
        seed: 0,
    };
    let log = train(&mut model, &tr, &va, &config).unwrap();
    assert!(model.trained);
    assert!(log.best_score > 0.9, "valid AUC {}", log.best_score);
    assert!(log.epochs.len() <= 30);
}

#[test]
fn zero_patience_runs_one_epoch_and_training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let train_w = parity_windows(&mut rng, 20, 6, 10);
    let valid_w = parity_windows(&mut rng, 6, 6, 10);
    let tr: Vec<&Window> = train_w.iter().collect();
    let va: Vec<&Window> = valid_w.iter().collect();
    let config = TrainConfig {
        max_epochs: 5,
        patience: 0,
        batch_size: 8,
        lr: 1e-3,
        seed: 3,
    };
    let mut a = Backbone::new(BackboneConfig::new(6), 3).unwrap();
    let log = train(&mut a, &tr, &va, &config).unwrap();
    assert_eq!(log.epochs.len(), 1);

    let config = TrainConfig { patience: 2, ..config };
    let mut b = Backbone::new(BackboneConfig::new(6), 3).unwrap();
    let mut c = Backbone::new(BackboneConfig::new(6), 3).unwrap();
    let lb = train(&mut b, &tr, &va, &config).unwrap();
    let lc = train(&mut c, &tr, &va, &config).unwrap();
    assert_eq!(lb, lc);
    assert_eq!(b, c);
}

#[test]
fn empty_splits_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = parity_windows(&mut rng, 2, 4, 6);
    let refs: Vec<&Window> = w.iter().collect();
    let mut model = Backbone::new(BackboneConfig::new(4), 0).unwrap();
    let config = TrainConfig::default();
    assert!(train(&mut model, &[], &refs, &config).is_err());
    assert!(train(&mut model, &refs, &[], &config).is_err());
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let model = Backbone::new(BackboneConfig::new(9), 12).unwrap();
    let text = model.to_checkpoint().to_text();
    let back = Backbone::from_checkpoint(&Checkpoint::from_text(&text).unwrap()).unwrap();
    for ((_, _, a), (_, _, b)) in model.tensors().iter().zip(back.tensors().iter()) {
        assert!(a.bit_eq(b));
    }
    assert_eq!(back.config, model.config);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    model.to_checkpoint().save(&path).unwrap();
    let loaded = Backbone::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(loaded, model);
}
