//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiftkt_core::backbone::{self, Backbone, BackboneConfig};
use shiftkt_core::data::{context_window, Interaction, InteractionSequence, Window};
use shiftkt_core::generator::{ContextBatch, Generator, GeneratorConfig, GeneratorVariant};
use shiftkt_core::numcore::{grad_check, AttentionSpec, Matrix, Tape, Var};
use shiftkt_core::train::TrainConfig;
use shiftkt_core::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Window with uniform concepts in `0..concepts`, fair-coin responses and
/// nondecreasing timestamps.
pub fn random_window(rng: &mut ChaCha8Rng, learner: u64, concepts: usize, len: usize, cap: usize) -> Window {
    let c: Vec<usize> = (0..len).map(|_| rng.random_range(0..concepts)).collect();
    let r: Vec<u8> = (0..len).map(|_| rng.random_range(0..2)).collect();
    let mut t = 0;
    let ts: Vec<i64> = (0..len)
        .map(|_| {
            t += rng.random_range(0..5);
            t
        })
        .collect();
    Window::from_parts(learner, &c, &r, &ts, cap).unwrap()
}

pub fn sequence(learner: u64, concepts: &[u64], responses: &[u8], start: i64) -> InteractionSequence {
    InteractionSequence {
        learner,
        interactions: concepts
            .iter()
            .zip(responses)
            .enumerate()
            .map(|(i, (&c, &r))| Interaction {
                question: c,
                concepts: vec![c],
                response: r,
                timestamp: start + 10 * i as i64,
            })
            .collect(),
    }
}

// ---------------------------------------------------------------- oracles

/// Difficulty factor by rescanning every prefix.
pub fn dist_d_oracle<C: PartialEq>(c: &[C], r: &[u8], len: usize) -> Vec<f64> {
    (0..c.len())
        .map(|i| {
            if i == 0 || i >= len {
                return 1.0;
            }
            let prior: Vec<usize> = (0..i).filter(|&j| c[j] == c[i]).collect();
            if prior.is_empty() {
                return 1.0;
            }
            let s_prev: f64 = prior.iter().map(|&j| r[j] as f64).sum();
            let n_prev = prior.len() as f64;
            (s_prev + r[i] as f64) / (n_prev + 1.0) - s_prev / n_prev + 1.0
        })
        .collect()
}

/// Interval factor by scanning back for the latest same-concept step.
pub fn dist_t_oracle<C: PartialEq>(c: &[C], t: &[i64], len: usize) -> Vec<f64> {
    (0..c.len())
        .map(|i| {
            if i >= len {
                return 1.0;
            }
            match (0..i).rev().find(|&j| c[j] == c[i]) {
                None => 1.0,
                Some(_) if t[i] == t[0] => 1.0,
                Some(j) => (t[i] - t[j]) as f64 / (t[i] - t[0]) as f64,
            }
        })
        .collect()
}

/// `1 + Σ p ln(p/q)` with both vectors floored at 1e-12 and normalized.
pub fn kl_factor_oracle(full: &[f64], half: &[f64]) -> f64 {
    let norm = |v: &[f64]| {
        let f: Vec<f64> = v.iter().map(|&x| if x < 1e-12 { 1e-12 } else { x }).collect();
        let s: f64 = f.iter().sum();
        f.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let (p, q) = (norm(full), norm(half));
    let mut kl = 0.0;
    for i in 0..p.len() {
        kl += p[i] * (p[i] / q[i]).ln();
    }
    1.0 + kl
}

/// Rate-change factor with padding counted as incorrect and divisors `k`
/// and `max(1, ⌊k/2⌋)`.
pub fn zpd_oracle(r: &[u8], k: usize, len: usize) -> f64 {
    let half = if k / 2 == 0 { 1 } else { k / 2 };
    let mut full_sum = 0.0;
    let mut half_sum = 0.0;
    for i in 0..k {
        let v = if i < len { r[i] as f64 } else { 0.0 };
        full_sum += v;
        if i < half {
            half_sum += v;
        }
    }
    let mean_full = full_sum / k as f64;
    let mean_half = half_sum / half as f64;
    (mean_full - mean_half).abs() * len as f64 / (mean_half + 1.0) + 1.0
}

/// Probability that a random positive outranks a random negative, ties
/// counted half, by enumerating every pair.
pub fn pair_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

/// Causal multi-head self-attention written out with loops (queries, keys
/// and values are the head's column block of `x`, scaled by the square root
/// of the head width); `weights` rescale the normalized attention at each
/// key position and `skip` drops one key.
pub fn reference_attention(x: &Matrix, heads: usize, weights: &[f64], skip: Option<usize>) -> Matrix {
    let (k, width) = x.shape();
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Matrix::zeros(k, width);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..k {
            let scores: Vec<f64> = (0..=i)
                .map(|j| cols.clone().map(|c| x.get(i, c) * x.get(j, c)).sum::<f64>() * scale)
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                let v: f64 = (0..=i)
                    .filter(|&j| Some(j) != skip)
                    .map(|j| e[j] / z * weights[j] * x.get(j, c))
                    .sum();
                out.set(i, c, v);
            }
        }
    }
    out
}

/// Plain matrix product by triple loop.
pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|t| a.get(i, t) * b.get(t, j)).sum())
}

// ----------------------------------------------------- gradient checking

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-3;
/// Window capacity used throughout the gradient suite.
pub const GRAD_K: usize = 8;

/// `Σ out ⊙ R` for a fixed pseudo-random `R`, so that every output entry
/// carries a distinct upstream gradient.
fn reduce(tape: &mut Tape, v: Var) -> Result<Var> {
    let (r, c) = tape.value(v).shape();
    let w = Matrix::from_fn(r, c, |i, j| ((i * 31 + j * 17) % 13) as f64 / 6.5 - 0.9);
    let w = tape.constant(w);
    let m = tape.mul(v, w)?;
    Ok(tape.sum(m))
}

type Case = (&'static str, Vec<Matrix>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

/// Every differentiable tape primitive on `GRAD_K`-row inputs, as
/// `(name, max relative error)`.
pub fn op_grad_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut g = rng(seed);
    let k = GRAD_K;
    let mut m = |r: usize, c: usize| random_matrix(&mut g, r, c);
    let probs = Matrix::from_fn(k, 1, |i, _| 0.1 + 0.1 * i as f64);
    let targets: Vec<f64> = (0..k).map(|i| (i % 2) as f64).collect();
    let mask: Vec<bool> = (0..k).map(|i| i != 3).collect();
    let attn = move |causal: bool, batch: usize, lengths: Vec<usize>| AttentionSpec {
        batch,
        seq: k,
        heads: 2,
        key_weights: (0..batch * k).map(|i| 0.5 + (i % 5) as f64 * 0.3).collect(),
        lengths,
        causal,
    };
    let cases: Vec<Case> = vec![
        ("matmul", vec![m(k, 4), m(4, 3)], Box::new(|t, p| { let v = t.matmul(p[0], p[1])?; reduce(t, v) })),
        ("matmul_t", vec![m(k, 4), m(3, 4)], Box::new(|t, p| { let v = t.matmul_t(p[0], p[1])?; reduce(t, v) })),
        ("matmul_tn", vec![m(4, k), m(4, 3)], Box::new(|t, p| { let v = t.matmul_ex(p[0], true, p[1], false)?; reduce(t, v) })),
        ("matmul_tt", vec![m(4, k), m(3, 4)], Box::new(|t, p| { let v = t.matmul_ex(p[0], true, p[1], true)?; reduce(t, v) })),
        ("add", vec![m(k, 3), m(k, 3)], Box::new(|t, p| { let v = t.add(p[0], p[1])?; reduce(t, v) })),
        ("add_row", vec![m(k, 3), m(1, 3)], Box::new(|t, p| { let v = t.add_row(p[0], p[1])?; reduce(t, v) })),
        ("sub", vec![m(k, 3), m(k, 3)], Box::new(|t, p| { let v = t.sub(p[0], p[1])?; reduce(t, v) })),
        ("mul", vec![m(k, 3), m(k, 3)], Box::new(|t, p| { let v = t.mul(p[0], p[1])?; reduce(t, v) })),
        ("scale", vec![m(k, 3)], Box::new(|t, p| { let v = t.scale(p[0], -1.7); reduce(t, v) })),
        ("tanh", vec![m(k, 3)], Box::new(|t, p| { let v = t.tanh(p[0]); reduce(t, v) })),
        ("sigmoid", vec![m(k, 3)], Box::new(|t, p| { let v = t.sigmoid(p[0]); reduce(t, v) })),
        ("softmax_rows", vec![m(k, 5)], Box::new(|t, p| { let v = t.softmax_rows(p[0], false); reduce(t, v) })),
        ("softmax_rows_causal", vec![m(k, k)], Box::new(|t, p| { let v = t.softmax_rows(p[0], true); reduce(t, v) })),
        ("scale_cols", vec![m(k, 3)], Box::new(|t, p| { let v = t.scale_cols(p[0], vec![0.5, -2.0, 1.5])?; reduce(t, v) })),
        ("concat_cols", vec![m(k, 2), m(k, 3)], Box::new(|t, p| { let v = t.concat_cols(&[p[0], p[1], p[0]])?; reduce(t, v) })),
        ("slice_cols", vec![m(k, 5)], Box::new(|t, p| { let v = t.slice_cols(p[0], 1, 3)?; reduce(t, v) })),
        ("slice_rows", vec![m(k, 3)], Box::new(|t, p| { let v = t.slice_rows(p[0], 2, 4)?; reduce(t, v) })),
        ("stack_steps", vec![m(2, 3), m(2, 3), m(2, 3)], Box::new(|t, p| { let v = t.stack_steps(&[p[0], p[1], p[2]])?; reduce(t, v) })),
        ("gather_rows", vec![m(5, 3)], Box::new(|t, p| {
            let v = t.gather_rows(p[0], vec![Some(0), None, Some(4), Some(0), Some(2), None, Some(1), Some(4)])?;
            reduce(t, v)
        })),
        ("pick_cols", vec![m(k, 4)], Box::new(|t, p| { let v = t.pick_cols(p[0], vec![0, 3, 1, 1, 2, 0, 3, 2])?; reduce(t, v) })),
        ("reshape", vec![m(k, 6)], Box::new(|t, p| { let v = t.reshape(p[0], 12, 4)?; reduce(t, v) })),
        ("sum", vec![m(k, 3)], Box::new(|t, p| { let s = t.sum(p[0]); let sq = t.mul(s, s)?; Ok(t.sum(sq)) })),
        ("bce", vec![probs], Box::new(move |t, p| t.bce(p[0], targets.clone(), mask.clone()))),
        ("row_vec_mat", vec![m(k, 3), m(4, 3 * 2)], Box::new(|t, p| { let v = t.row_vec_mat(p[0], p[1], 2, 2)?; reduce(t, v) })),
        ("attention", vec![m(k, 4)], Box::new(move |t, p| { let v = t.attention(p[0], attn(false, 1, vec![k]))?; reduce(t, v) })),
        ("attention_causal_padded", vec![m(2 * k, 4)], Box::new(move |t, p| {
            let v = t.attention(p[0], attn(true, 2, vec![k, 5]))?;
            reduce(t, v)
        })),
    ];
    cases
        .into_iter()
        .map(|(name, params, f)| {
            let err = grad_check(|t, p| f(t, p), &params, GRAD_STEP).unwrap_or(f64::INFINITY);
            (name, err)
        })
        .collect()
}

pub fn grad_backbone(concepts: usize) -> Backbone {
    let mut b = Backbone::new(
        BackboneConfig {
            num_concepts: concepts,
            embed_dim: 6,
            hidden: 8,
        },
        11,
    )
    .unwrap();
    b.trained = true;
    b
}

/// Next-step targets over the steps `from..len` of each window, laid out
/// for the backbone's `(batch·k) × concepts` logits.
fn targets(ws: &[&Window], from: impl Fn(&Window) -> usize) -> (Vec<usize>, Vec<f64>, Vec<bool>) {
    let n = ws.len() * GRAD_K;
    let (mut idx, mut target, mut mask) = (vec![0; n], vec![0.0; n], vec![false; n]);
    for (b, w) in ws.iter().enumerate() {
        for i in from(w)..w.len {
            let r = b * GRAD_K + i - 1;
            idx[r] = w.concepts[i] - 1;
            target[r] = w.responses[i] as f64;
            mask[r] = true;
        }
    }
    (idx, target, mask)
}

/// Backbone loss and the full generator pipeline (each variant, full and
/// low-rank synthesis) on `GRAD_K`-step windows.
pub fn model_grad_errors(seed: u64) -> Vec<(String, f64)> {
    const C: usize = 5;
    let b = grad_backbone(C);
    let mut g = rng(seed);
    let windows = vec![random_window(&mut g, 0, C, GRAD_K, GRAD_K), random_window(&mut g, 1, C, 6, GRAD_K)];
    let refs: Vec<&Window> = windows.iter().collect();
    let mut out = Vec::new();

    let params: Vec<Matrix> = b.tensors().iter().map(|(_, _, m)| (*m).clone()).collect();
    let err = grad_check(
        |tape, p| {
            let vars = b.vars_from(p);
            let enc = b.encode(tape, &vars, &refs)?;
            let layer = b.stored_layer(tape, &vars)?;
            let logits = b.logits(tape, enc, layer)?;
            let (idx, target, mask) = targets(&refs, |_| 1);
            let picked = tape.pick_cols(logits, idx)?;
            let probs = tape.sigmoid(picked);
            tape.bce(probs, target, mask)
        },
        &params,
        GRAD_STEP,
    )
    .unwrap_or(f64::INFINITY);
    out.push(("backbone loss".to_string(), err));

    let contexts: Vec<Window> = windows.iter().map(context_window).collect();
    let crefs: Vec<&Window> = contexts.iter().collect();
    for variant in GeneratorVariant::ALL {
        for rank in [0, 2] {
            let mut c = GeneratorConfig::new(C, 8).with_variant(variant);
            c.embed_dim = 6;
            c.heads = 2;
            c.rank = rank;
            let gen = Generator::new(c, 14).unwrap();
            let cb = ContextBatch::new(&crefs, C, c.attention).unwrap();
            let params: Vec<Matrix> = gen.tensors().iter().map(|(_, m)| (*m).clone()).collect();
            let err = grad_check(
                |tape, p| {
                    let vars = gen.vars_from(p);
                    let layer = gen.run(tape, &vars, &cb)?;
                    let bv = b.bind(tape, |_, _| false);
                    let enc = b.encode(tape, &bv, &refs)?;
                    let logits = b.logits(tape, enc, layer)?;
                    let (idx, target, mask) = targets(&refs, |w| (w.len / 2).max(1));
                    let picked = tape.pick_cols(logits, idx)?;
                    let probs = tape.sigmoid(picked);
                    tape.bce(probs, target, mask)
                },
                &params,
                GRAD_STEP,
            )
            .unwrap_or(f64::INFINITY);
            out.push((format!("generator {} rank {rank}", variant.name()), err));
        }
    }
    out
}

// ------------------------------------------------------ controller cohort

/// Number of learners in the ranking cohort and how many of them flip.
pub const COHORT: usize = 20;
pub const FLIPPERS: usize = 2;
/// Window capacity of the cohort.
pub const COHORT_K: usize = 20;
pub const COHORT_CONCEPTS: usize = 5;

/// A backbone briefly trained on stationary learners, and a cohort whose
/// first `FLIPPERS` learners answer everything wrong in the first half of
/// their window and everything right in the second; the rest answer with a
/// fixed personal accuracy throughout.
pub fn flipper_cohort(seed: u64) -> (Backbone, Vec<Window>) {
    let mut g = rng(1000 + seed);
    let stationary = |g: &mut ChaCha8Rng, learner: u64| {
        let p: f64 = g.random_range(0.2..0.8);
        let c: Vec<usize> = (0..COHORT_K).map(|_| g.random_range(0..COHORT_CONCEPTS)).collect();
        let r: Vec<u8> = (0..COHORT_K).map(|_| g.random_bool(p) as u8).collect();
        let t: Vec<i64> = (0..COHORT_K as i64).map(|i| 60 * i).collect();
        Window::from_parts(learner, &c, &r, &t, COHORT_K).unwrap()
    };
    let pool: Vec<Window> = (0..120).map(|i| stationary(&mut g, 1000 + i)).collect();
    let (train, valid) = pool.split_at(100);
    let mut model = Backbone::new(
        BackboneConfig {
            num_concepts: COHORT_CONCEPTS,
            embed_dim: 8,
            hidden: 16,
        },
        seed,
    )
    .unwrap();
    let tc = TrainConfig {
        max_epochs: 5,
        patience: 5,
        batch_size: 16,
        lr: 1e-2,
        seed,
    };
    let tr: Vec<&Window> = train.iter().collect();
    let va: Vec<&Window> = valid.iter().collect();
    backbone::train(&mut model, &tr, &va, &tc).unwrap();

    let cohort = (0..COHORT as u64)
        .map(|i| {
            if (i as usize) < FLIPPERS {
                let c: Vec<usize> = (0..COHORT_K).map(|_| g.random_range(0..COHORT_CONCEPTS)).collect();
                let r: Vec<u8> = (0..COHORT_K).map(|s| (s >= COHORT_K / 2) as u8).collect();
                let t: Vec<i64> = (0..COHORT_K as i64).map(|s| 60 * s).collect();
                Window::from_parts(i, &c, &r, &t, COHORT_K).unwrap()
            } else {
                stationary(&mut g, i)
            }
        })
        .collect();
    (model, cohort)
}
