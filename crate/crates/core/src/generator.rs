//! Hypernetwork that turns a learner's recent interactions into output-layer
//! parameters for the backbone, with no gradient step at adaptation time.
//!
//! Pipeline for a context window:
//!
//! ```text
//! concepts ─ q_emb ─ tanh(·W1ᵀ+b1) ─ GRU ─ attention·W_h ─┐
//!                                                          + ─ last row ─ S ─ weight, bias
//! responses ─ r_emb ─ tanh(·W2ᵀ+b2) ─ GRU ─ attention·W_h ─┘
//! ```
//!
//! Attention weights are rescaled per key position by the difficulty-change
//! and elapsed-time factors from [`dist_d`] and [`dist_t`].

use std::collections::HashMap;
use std::str::FromStr;

use crate::backbone::{next_step_targets, validation_score, Backbone, DynamicLayerParams, Encoded};
use crate::checkpoint::Checkpoint;
use crate::data::{context_window, Window};
use crate::error::{Error, Result};
use crate::nn::{normal, uniform, Gru, GruVars};
use crate::numcore::{AttentionSpec, Matrix, Tape, Var};
use crate::rng::substream;
use crate::train::{fit, BatchResult, TrainConfig, TrainLog};

const ADAPT_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    /// Softmax weights scaled by `dist_d · dist_t`.
    StateAdaptive,
    /// Plain multi-head attention (all key weights 1).
    Standard,
}

impl AttentionKind {
    pub fn name(self) -> &'static str {
        match self {
            AttentionKind::StateAdaptive => "saa",
            AttentionKind::Standard => "sha",
        }
    }
}

impl FromStr for AttentionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saa" => Ok(AttentionKind::StateAdaptive),
            "sha" => Ok(AttentionKind::Standard),
            _ => Err(Error::Config(format!("unknown attention kind {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub num_concepts: usize,
    /// Embedding width `d`.
    pub embed_dim: usize,
    /// Input width of the dynamic layer; equals the backbone hidden size.
    pub hidden: usize,
    pub heads: usize,
    /// 0 selects the undecomposed weight map.
    pub rank: usize,
    /// Separate question and response towers.
    pub dual: bool,
    pub use_sfe: bool,
    pub use_saa: bool,
    pub attention: AttentionKind,
    pub causal: bool,
}

impl GeneratorConfig {
    pub fn new(num_concepts: usize, hidden: usize) -> Self {
        GeneratorConfig {
            num_concepts,
            embed_dim: 32,
            hidden,
            heads: 4,
            rank: 1,
            dual: true,
            use_sfe: true,
            use_saa: true,
            attention: AttentionKind::StateAdaptive,
            causal: true,
        }
    }

    pub fn for_backbone(backbone: &Backbone) -> Self {
        let mut c = GeneratorConfig::new(backbone.num_concepts(), backbone.hidden());
        c.embed_dim = backbone.config.embed_dim;
        c
    }

    pub fn out_dim(&self) -> usize {
        self.num_concepts
    }

    pub fn towers(&self) -> usize {
        if self.dual {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_concepts == 0 || self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::Config(format!("degenerate generator dimensions {self:?}")));
        }
        if self.use_saa && (self.heads == 0 || self.hidden % self.heads != 0) {
            return Err(Error::Config(format!(
                "{} heads do not divide width {}",
                self.heads, self.hidden
            )));
        }
        if self.rank > self.hidden / 2 {
            return Err(Error::Config(format!(
                "rank {} exceeds half the width {}",
                self.rank, self.hidden
            )));
        }
        Ok(())
    }

    pub fn with_variant(mut self, variant: GeneratorVariant) -> Self {
        match variant {
            GeneratorVariant::Full => {}
            GeneratorVariant::NoDual => self.dual = false,
            GeneratorVariant::NoSfe => self.use_sfe = false,
            GeneratorVariant::NoSaa => self.use_saa = false,
            GeneratorVariant::StandardAttention => self.attention = AttentionKind::Standard,
        }
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorVariant {
    Full,
    NoDual,
    NoSfe,
    NoSaa,
    StandardAttention,
}

impl GeneratorVariant {
    pub const ALL: [GeneratorVariant; 5] = [
        GeneratorVariant::Full,
        GeneratorVariant::NoDual,
        GeneratorVariant::NoSfe,
        GeneratorVariant::NoSaa,
        GeneratorVariant::StandardAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GeneratorVariant::Full => "full",
            GeneratorVariant::NoDual => "no-dual",
            GeneratorVariant::NoSfe => "no-sfe",
            GeneratorVariant::NoSaa => "no-saa",
            GeneratorVariant::StandardAttention => "sha",
        }
    }
}

impl FromStr for GeneratorVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        GeneratorVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown generator variant {s:?}")))
    }
}

/// Learnable parameter count of a generator with this configuration.
pub fn param_count(config: &GeneratorConfig) -> usize {
    let (c, d, h, o) = (
        config.num_concepts,
        config.embed_dim,
        config.hidden,
        config.out_dim(),
    );
    let towers = config.towers();
    let mut n = (c + 1) * d + 2 * d;
    n += towers * (h * d + h);
    if config.use_sfe {
        n += towers * Gru::param_count(h, h);
    }
    if config.use_saa {
        n += towers * h * h;
    }
    n += if config.rank == 0 {
        h * o * h
    } else {
        config.rank * h + h * o * config.rank
    };
    n + h * o + o * h + o
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tower {
    /// `hidden × embed_dim`
    pub proj_w: Matrix,
    pub proj_b: Matrix,
    pub sfe: Option<Gru>,
    /// Attention output projection, `hidden × hidden`.
    pub w_h: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum WeightMap {
    /// `w1: rank × hidden`, `w2: (hidden·out) × rank`.
    LowRank { w1: Matrix, w2: Matrix },
    /// `w: (hidden·out) × hidden`.
    Full { w: Matrix },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    /// `(num_concepts + 1) × embed_dim`, row 0 unused (padding).
    pub q_emb: Matrix,
    /// `2 × embed_dim`.
    pub r_emb: Matrix,
    pub towers: Vec<Tower>,
    pub weight_map: WeightMap,
    /// Flattened `hidden × out` weight offset, `1 × hidden·out`.
    pub b_w: Matrix,
    /// `out × hidden`
    pub w_b: Matrix,
    pub b_b: Matrix,
}

#[derive(Clone, Debug)]
pub struct TowerVars {
    pub proj_w: Var,
    pub proj_b: Var,
    pub sfe: Option<GruVars>,
    pub w_h: Option<Var>,
}

#[derive(Clone, Debug)]
pub enum WeightMapVars {
    LowRank { w1: Var, w2: Var },
    Full { w: Var },
}

/// Tape handles in [`Generator::tensors`] order.
#[derive(Clone, Debug)]
pub struct GeneratorVars {
    pub all: Vec<Var>,
    pub q_emb: Var,
    pub r_emb: Var,
    pub towers: Vec<TowerVars>,
    pub weight_map: WeightMapVars,
    pub b_w: Var,
    pub w_b: Var,
    pub b_b: Var,
}

/// A batch of context windows laid out for the tape: row `b·steps + t`.
#[derive(Clone, Debug)]
pub struct ContextBatch {
    pub batch: usize,
    pub steps: usize,
    pub lengths: Vec<usize>,
    pub concepts: Vec<Option<usize>>,
    pub responses: Vec<Option<usize>>,
    /// `dist_d · dist_t` per row, 1 on padding.
    pub attn_w: Vec<f64>,
}

impl ContextBatch {
    pub fn new(contexts: &[&Window], num_concepts: usize, kind: AttentionKind) -> Result<Self> {
        let steps = contexts.iter().map(|w| w.len).max().unwrap_or(0);
        if contexts.is_empty() || contexts.iter().any(|w| w.len == 0) {
            return Err(Error::Degenerate("adaptation needs a nonempty context".into()));
        }
        let n = contexts.len() * steps;
        let mut cb = ContextBatch {
            batch: contexts.len(),
            steps,
            lengths: contexts.iter().map(|w| w.len).collect(),
            concepts: vec![None; n],
            responses: vec![None; n],
            attn_w: vec![1.0; n],
        };
        for (b, w) in contexts.iter().enumerate() {
            let dd = dist_d(&w.concepts[..w.len], &w.responses[..w.len], w.len);
            let dt = dist_t(&w.concepts[..w.len], &w.timestamps[..w.len], w.len)?;
            for t in 0..w.len {
                let tok = w.concepts[t];
                if tok == 0 || tok > num_concepts {
                    return Err(Error::Index(format!(
                        "concept token {tok} at step {t} outside 1..={num_concepts}"
                    )));
                }
                let r = b * steps + t;
                cb.concepts[r] = Some(tok);
                cb.responses[r] = Some(w.responses[t] as usize);
                if kind == AttentionKind::StateAdaptive {
                    cb.attn_w[r] = dd[t] * dt[t];
                }
            }
        }
        Ok(cb)
    }
}

/// Difficulty-change factor per position: the change in the running
/// correct rate of the position's concept, plus 1. Positions with no prior
/// attempt at the same concept, and padding, get 1.
pub fn dist_d<C: Eq + std::hash::Hash + Copy>(concepts: &[C], responses: &[u8], len: usize) -> Vec<f64> {
    let mut out = vec![1.0; concepts.len()];
    let mut seen: HashMap<C, (f64, f64)> = HashMap::new();
    for i in 0..len.min(concepts.len()) {
        let r = responses[i] as f64;
        let entry = seen.entry(concepts[i]).or_insert((0.0, 0.0));
        let (n, s) = *entry;
        if i > 0 && n > 0.0 {
            out[i] = (s + r) / (n + 1.0) - s / n + 1.0;
        }
        *entry = (n + 1.0, s + r);
    }
    out
}

/// Elapsed-time factor per position: time since the last attempt at the
/// same concept over time since the first interaction. No prior attempt,
/// zero denominator and padding give 1.
pub fn dist_t<C: Eq + std::hash::Hash + Copy>(concepts: &[C], timestamps: &[i64], len: usize) -> Result<Vec<f64>> {
    let len = len.min(concepts.len());
    if let Some(i) = (1..len).find(|&i| timestamps[i] < timestamps[i - 1]) {
        return Err(Error::Validation(format!(
            "timestamps decrease at step {}: {} after {}",
            i + 1,
            timestamps[i],
            timestamps[i - 1]
        )));
    }
    let mut out = vec![1.0; concepts.len()];
    let mut last: HashMap<C, i64> = HashMap::new();
    for i in 0..len {
        if let Some(&tj) = last.get(&concepts[i]) {
            let denom = timestamps[i] - timestamps[0];
            if denom != 0 {
                out[i] = (timestamps[i] - tj) as f64 / denom as f64;
            }
        }
        last.insert(concepts[i], timestamps[i]);
    }
    Ok(out)
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(seed, "generator-init");
        let (c, d, h, o) = (config.num_concepts, config.embed_dim, config.hidden, config.out_dim());
        let mut q_emb = normal(c + 1, d, 1.0, &mut rng);
        q_emb.row_mut(0).fill(0.0);
        let r_emb = normal(2, d, 1.0, &mut rng);
        let towers = (0..config.towers())
            .map(|_| Tower {
                proj_w: uniform(h, d, 1.0 / (d as f64).sqrt(), &mut rng),
                proj_b: uniform(1, h, 1.0 / (d as f64).sqrt(), &mut rng),
                sfe: config.use_sfe.then(|| Gru::new(h, h, &mut rng)),
                w_h: config
                    .use_saa
                    .then(|| uniform(h, h, 1.0 / (h as f64).sqrt(), &mut rng)),
            })
            .collect();
        let bound = 1.0 / (h as f64).sqrt();
        let weight_map = if config.rank == 0 {
            WeightMap::Full {
                w: uniform(h * o, h, bound, &mut rng),
            }
        } else {
            WeightMap::LowRank {
                w1: uniform(config.rank, h, bound, &mut rng),
                w2: uniform(h * o, config.rank, 1.0 / (config.rank as f64).sqrt(), &mut rng),
            }
        };
        Ok(Generator {
            config,
            q_emb,
            r_emb,
            towers,
            weight_map,
            b_w: uniform(1, h * o, bound, &mut rng),
            w_b: uniform(o, h, bound, &mut rng),
            b_b: uniform(1, o, bound, &mut rng),
        })
    }

    /// A generator whose output starts as the backbone's own output layer:
    /// offsets copied from the backbone, weight-path output maps zeroed.
    pub fn warm_start(config: GeneratorConfig, backbone: &Backbone, seed: u64) -> Result<Self> {
        let mut g = Generator::new(config, seed)?;
        g.check_backbone(backbone)?;
        g.b_w = Matrix::row_vector(backbone.out_weight.as_slice().to_vec());
        g.b_b = backbone.out_bias.clone();
        g.w_b.fill(0.0);
        match &mut g.weight_map {
            WeightMap::LowRank { w2, .. } => w2.fill(0.0),
            WeightMap::Full { w } => w.fill(0.0),
        }
        Ok(g)
    }

    pub fn check_backbone(&self, backbone: &Backbone) -> Result<()> {
        if backbone.hidden() != self.config.hidden || backbone.num_concepts() != self.config.out_dim() {
            return Err(Error::dim(
                "generator",
                format!(
                    "generates ({}, {}) layers, backbone needs ({}, {})",
                    self.config.hidden,
                    self.config.out_dim(),
                    backbone.hidden(),
                    backbone.num_concepts()
                ),
            ));
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("q_emb".to_string(), &self.q_emb), ("r_emb".to_string(), &self.r_emb)];
        for (i, t) in self.towers.iter().enumerate() {
            out.push((format!("tower{i}.proj_w"), &t.proj_w));
            out.push((format!("tower{i}.proj_b"), &t.proj_b));
            if let Some(g) = &t.sfe {
                for (n, _, m) in g.tensors() {
                    out.push((format!("tower{i}.sfe.{n}"), m));
                }
            }
            if let Some(w) = &t.w_h {
                out.push((format!("tower{i}.w_h"), w));
            }
        }
        match &self.weight_map {
            WeightMap::LowRank { w1, w2 } => {
                out.push(("w_w1".into(), w1));
                out.push(("w_w2".into(), w2));
            }
            WeightMap::Full { w } => out.push(("w_w".into(), w)),
        }
        out.push(("b_w".into(), &self.b_w));
        out.push(("w_b".into(), &self.w_b));
        out.push(("b_b".into(), &self.b_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.q_emb, &mut self.r_emb];
        for t in &mut self.towers {
            out.push(&mut t.proj_w);
            out.push(&mut t.proj_b);
            if let Some(g) = &mut t.sfe {
                out.extend(g.tensors_mut());
            }
            if let Some(w) = &mut t.w_h {
                out.push(w);
            }
        }
        match &mut self.weight_map {
            WeightMap::LowRank { w1, w2 } => out.extend([w1, w2]),
            WeightMap::Full { w } => out.push(w),
        }
        out.extend([&mut self.b_w, &mut self.w_b, &mut self.b_b]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape, tracked: bool) -> GeneratorVars {
        let all: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|(_, m)| {
                if tracked {
                    tape.param(m.clone())
                } else {
                    tape.constant(m.clone())
                }
            })
            .collect();
        self.vars_from(&all)
    }

    pub fn vars_from(&self, all: &[Var]) -> GeneratorVars {
        let mut it = all.iter().copied();
        let mut next = || it.next().expect("one handle per tensor");
        let q_emb = next();
        let r_emb = next();
        let towers = self
            .towers
            .iter()
            .map(|t| {
                let proj_w = next();
                let proj_b = next();
                let sfe = t.sfe.as_ref().map(|_| {
                    let v = [next(), next(), next(), next()];
                    Gru::from_vars(&v)
                });
                let w_h = t.w_h.as_ref().map(|_| next());
                TowerVars {
                    proj_w,
                    proj_b,
                    sfe,
                    w_h,
                }
            })
            .collect();
        let weight_map = match self.weight_map {
            WeightMap::LowRank { .. } => WeightMapVars::LowRank {
                w1: next(),
                w2: next(),
            },
            WeightMap::Full { .. } => WeightMapVars::Full { w: next() },
        };
        GeneratorVars {
            q_emb,
            r_emb,
            towers,
            weight_map,
            b_w: next(),
            w_b: next(),
            b_b: next(),
            all: all.to_vec(),
        }
    }

    /// Question and response embeddings, `(batch·steps) × embed_dim` each;
    /// padding rows are zero.
    pub fn embed_dual(&self, tape: &mut Tape, vars: &GeneratorVars, cb: &ContextBatch) -> Result<(Var, Var)> {
        let q = tape.gather_rows(vars.q_emb, cb.concepts.clone())?;
        let r = tape.gather_rows(vars.r_emb, cb.responses.clone())?;
        Ok((q, r))
    }

    /// `tanh(X·Wᵀ + b)` fed through the tower's recurrent extractor (or
    /// returned directly when the extractor is disabled).
    pub fn sfe(&self, tape: &mut Tape, tower: &TowerVars, x: Var, cb: &ContextBatch) -> Result<Var> {
        let p = tape.matmul_t(x, tower.proj_w)?;
        let p = tape.add_row(p, tower.proj_b)?;
        let p = tape.tanh(p);
        let Some(gru) = &tower.sfe else {
            return Ok(p);
        };
        let mut inputs = Vec::with_capacity(cb.steps);
        for t in 0..cb.steps {
            let idx = (0..cb.batch).map(|b| Some(b * cb.steps + t)).collect();
            inputs.push(tape.gather_rows(p, idx)?);
        }
        let hs = gru.run(tape, &inputs)?;
        tape.stack_steps(&hs)
    }

    /// Multi-head self-attention with key weights, then the `W_h`
    /// projection. Identity when attention is disabled.
    pub fn saa(&self, tape: &mut Tape, tower: &TowerVars, x: Var, cb: &ContextBatch) -> Result<Var> {
        let Some(w_h) = tower.w_h else {
            return Ok(x);
        };
        let a = tape.attention(
            x,
            AttentionSpec {
                batch: cb.batch,
                seq: cb.steps,
                heads: self.config.heads,
                key_weights: cb.attn_w.clone(),
                lengths: cb.lengths.clone(),
                causal: self.config.causal,
            },
        )?;
        tape.matmul(a, w_h)
    }

    /// Sum of the tower outputs read out at each learner's last unpadded
    /// step, `batch × hidden`.
    pub fn fuse(&self, tape: &mut Tape, streams: &[Var], cb: &ContextBatch) -> Result<Var> {
        let mut s = streams[0];
        for &o in &streams[1..] {
            s = tape.add(s, o)?;
        }
        let idx = cb
            .lengths
            .iter()
            .enumerate()
            .map(|(b, &len)| Some(b * cb.steps + len - 1))
            .collect();
        tape.gather_rows(s, idx)
    }

    /// Flattened weights (`batch × hidden·out`, row-major over
    /// `(hidden, out)`) and biases (`batch × out`).
    pub fn generate_params(&self, tape: &mut Tape, vars: &GeneratorVars, s: Var) -> Result<(Var, Var)> {
        let w = match vars.weight_map {
            WeightMapVars::LowRank { w1, w2 } => {
                let u = tape.matmul_t(s, w1)?;
                tape.matmul_t(u, w2)?
            }
            WeightMapVars::Full { w } => tape.matmul_t(s, w)?,
        };
        let w = tape.add_row(w, vars.b_w)?;
        let b = tape.matmul_t(s, vars.w_b)?;
        let b = tape.add_row(b, vars.b_b)?;
        Ok((w, b))
    }

    /// Full pipeline on the tape for a batch of contexts.
    pub fn run(&self, tape: &mut Tape, vars: &GeneratorVars, cb: &ContextBatch) -> Result<(Var, Var)> {
        let (q, r) = self.embed_dual(tape, vars, cb)?;
        let inputs = if self.config.dual {
            vec![q, r]
        } else {
            vec![tape.add(q, r)?]
        };
        let mut streams = Vec::with_capacity(inputs.len());
        for (x, tower) in inputs.into_iter().zip(&vars.towers) {
            let h = self.sfe(tape, tower, x, cb)?;
            streams.push(self.saa(tape, tower, h, cb)?);
        }
        let s = self.fuse(tape, &streams, cb)?;
        self.generate_params(tape, vars, s)
    }

    /// Generated output layers for a batch of contexts. Pure: neither model
    /// is modified.
    pub fn adapt_batch(&self, backbone: &Backbone, contexts: &[&Window]) -> Result<Vec<DynamicLayerParams>> {
        self.check_backbone(backbone)?;
        let (h, o) = (self.config.hidden, self.config.out_dim());
        let mut out = Vec::with_capacity(contexts.len());
        for chunk in contexts.chunks(ADAPT_CHUNK) {
            let cb = ContextBatch::new(chunk, self.config.num_concepts, self.config.attention)?;
            let mut tape = Tape::new();
            let vars = self.bind(&mut tape, false);
            let (w, b) = self.run(&mut tape, &vars, &cb)?;
            let (wv, bv) = (tape.value(w), tape.value(b));
            for i in 0..chunk.len() {
                out.push(DynamicLayerParams {
                    weight: Matrix::from_vec(h, o, wv.row(i).to_vec())?,
                    bias: bv.row(i).to_vec(),
                });
            }
        }
        Ok(out)
    }

    pub fn adapt(&self, backbone: &Backbone, context: &Window) -> Result<DynamicLayerParams> {
        Ok(self.adapt_batch(backbone, &[context])?.remove(0))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.config;
        let mut ck = Checkpoint::new("generator")
            .with_meta("num_concepts", c.num_concepts)
            .with_meta("embed_dim", c.embed_dim)
            .with_meta("hidden", c.hidden)
            .with_meta("heads", c.heads)
            .with_meta("rank", c.rank)
            .with_meta("dual", c.dual)
            .with_meta("use_sfe", c.use_sfe)
            .with_meta("use_saa", c.use_saa)
            .with_meta("attention", c.attention.name())
            .with_meta("causal", c.causal);
        for (name, m) in self.tensors() {
            ck.push(name, m);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("generator")?;
        let flag = |k: &str| -> Result<bool> {
            match ck.meta_str(k)? {
                "true" => Ok(true),
                "false" => Ok(false),
                v => Err(Error::Checkpoint(format!("meta {k} = {v:?} is not a boolean"))),
            }
        };
        let config = GeneratorConfig {
            num_concepts: ck.meta_usize("num_concepts")?,
            embed_dim: ck.meta_usize("embed_dim")?,
            hidden: ck.meta_usize("hidden")?,
            heads: ck.meta_usize("heads")?,
            rank: ck.meta_usize("rank")?,
            dual: flag("dual")?,
            use_sfe: flag("use_sfe")?,
            use_saa: flag("use_saa")?,
            attention: ck
                .meta_str("attention")?
                .parse()
                .map_err(|_| Error::Checkpoint("bad attention kind".into()))?,
            causal: flag("causal")?,
        };
        let mut g = Generator::new(config, 0)?;
        let shapes: Vec<(String, (usize, usize))> =
            g.tensors().iter().map(|(n, m)| (n.clone(), m.shape())).collect();
        for ((name, (r, c)), slot) in shapes.into_iter().zip(g.tensors_mut()) {
            *slot = ck.tensor(&name, r, c)?;
        }
        Ok(g)
    }
}

/// Contexts and prediction start steps for generator training and scoring:
/// each window's context is its first `⌊len/2⌋` steps and predictions cover
/// steps `⌊len/2⌋ + 1..=len`.
pub fn split_halves(windows: &[&Window]) -> (Vec<Window>, Vec<usize>) {
    let contexts = windows.iter().map(|w| context_window(w)).collect();
    let from = windows.iter().map(|w| (w.len / 2).max(1)).collect();
    (contexts, from)
}

/// Adapted next-step predictions on the second half of each window.
pub fn score_adapted(
    generator: &Generator,
    backbone: &Backbone,
    windows: &[&Window],
) -> Result<crate::backbone::Scored> {
    let usable: Vec<&Window> = windows.iter().copied().filter(|w| w.len >= 2).collect();
    let (contexts, from) = split_halves(&usable);
    let crefs: Vec<&Window> = contexts.iter().collect();
    let params = generator.adapt_batch(backbone, &crefs)?;
    let prefs: Vec<&DynamicLayerParams> = params.iter().collect();
    backbone.predict(&usable, Some(&prefs), &from)
}

/// Trains the generator against a frozen backbone. For each window the
/// generator reads the first half and the backbone, with the generated
/// output layer, predicts the second half. Early stopping on validation
/// AUC of those predictions.
pub fn train_generator(
    generator: &mut Generator,
    backbone: &Backbone,
    train: &[&Window],
    valid: &[&Window],
    config: &TrainConfig,
) -> Result<TrainLog> {
    generator.check_backbone(backbone)?;
    let train: Vec<&Window> = train.iter().copied().filter(|w| w.len >= 2).collect();
    let valid: Vec<&Window> = valid.iter().copied().filter(|w| w.len >= 2).collect();
    if valid.is_empty() {
        return Err(Error::EmptyDataset("validation split"));
    }
    let hidden = backbone.hidden_states(&train)?;
    let (contexts, from) = split_halves(&train);
    let kind = generator.config.attention;
    let num_concepts = generator.config.num_concepts;
    fit(
        generator,
        train.len(),
        config,
        "generator-shuffle",
        |g, idx| {
            let ws: Vec<&Window> = idx.iter().map(|&i| train[i]).collect();
            let cs: Vec<&Window> = idx.iter().map(|&i| &contexts[i]).collect();
            let fr: Vec<usize> = idx.iter().map(|&i| from[i]).collect();
            let steps = ws.iter().map(|w| w.len).max().unwrap_or(1);
            let mut z = Matrix::zeros(ws.len() * steps, backbone.hidden());
            for (b, &i) in idx.iter().enumerate() {
                let hm = &hidden[i];
                let start = b * steps * hm.cols();
                z.as_mut_slice()[start..start + hm.len()].copy_from_slice(hm.as_slice());
            }
            let cb = ContextBatch::new(&cs, num_concepts, kind)?;
            let mut tape = Tape::new();
            let vars = g.bind(&mut tape, true);
            let layer = g.run(&mut tape, &vars, &cb)?;
            let z = tape.constant(z);
            let enc = Encoded {
                z,
                batch: ws.len(),
                steps,
            };
            let logits = backbone.logits(&mut tape, enc, layer)?;
            let t = next_step_targets(&ws, steps, &fr);
            let picked = tape.pick_cols(logits, t.concept)?;
            let probs = tape.sigmoid(picked);
            let loss = tape.bce(probs, t.target, t.mask)?;
            tape.backward(loss)?;
            let grads = g
                .tensors()
                .iter()
                .zip(&vars.all)
                .map(|((_, m), v)| tape.grad(*v).cloned().unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols())))
                .collect();
            Ok(BatchResult {
                loss_sum: tape.value(loss).item().unwrap_or(f64::NAN),
                count: t.count,
                grads,
            })
        },
        |g| g.tensors_mut(),
        |g| validation_score(&score_adapted(g, backbone, &valid)?),
    )
}

/// Trains the generator and the backbone together on the same objective as
/// [`train_generator`]. Backbone adapter tensors, if any, stay fixed.
pub fn train_joint(
    generator: &mut Generator,
    backbone: &mut Backbone,
    train: &[&Window],
    valid: &[&Window],
    config: &TrainConfig,
) -> Result<TrainLog> {
    generator.check_backbone(backbone)?;
    let train: Vec<&Window> = train.iter().copied().filter(|w| w.len >= 2).collect();
    let valid: Vec<&Window> = valid.iter().copied().filter(|w| w.len >= 2).collect();
    if valid.is_empty() {
        return Err(Error::EmptyDataset("validation split"));
    }
    let (contexts, from) = split_halves(&train);
    let track = |name: &str, _| !name.starts_with("adapter.");
    let selected: Vec<bool> = backbone.tensors().iter().map(|(n, k, _)| track(n, *k)).collect();
    let mut pair = (generator.clone(), backbone.clone());
    let log = fit(
        &mut pair,
        train.len(),
        config,
        "joint-shuffle",
        |(g, bb), idx| {
            let ws: Vec<&Window> = idx.iter().map(|&i| train[i]).collect();
            let cs: Vec<&Window> = idx.iter().map(|&i| &contexts[i]).collect();
            let fr: Vec<usize> = idx.iter().map(|&i| from[i]).collect();
            let cb = ContextBatch::new(&cs, g.config.num_concepts, g.config.attention)?;
            let mut tape = Tape::new();
            let gv = g.bind(&mut tape, true);
            let bv = bb.bind(&mut tape, track);
            let enc = bb.encode(&mut tape, &bv, &ws)?;
            let layer = g.run(&mut tape, &gv, &cb)?;
            let logits = bb.logits(&mut tape, enc, layer)?;
            let t = next_step_targets(&ws, enc.steps, &fr);
            let picked = tape.pick_cols(logits, t.concept)?;
            let probs = tape.sigmoid(picked);
            let loss = tape.bce(probs, t.target, t.mask)?;
            tape.backward(loss)?;
            let grad = |v: &Var, m: &Matrix| tape.grad(*v).cloned().unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()));
            let mut grads: Vec<Matrix> = g.tensors().iter().zip(&gv.all).map(|((_, m), v)| grad(v, m)).collect();
            grads.extend(
                bb.tensors()
                    .iter()
                    .zip(&bv.all)
                    .zip(&selected)
                    .filter(|(_, &s)| s)
                    .map(|(((_, _, m), v), _)| grad(v, m)),
            );
            Ok(BatchResult {
                loss_sum: tape.value(loss).item().unwrap_or(f64::NAN),
                count: t.count,
                grads,
            })
        },
        |(g, bb)| {
            let mut out = g.tensors_mut();
            out.extend(bb.tensors_mut().into_iter().zip(&selected).filter(|(_, &s)| s).map(|(t, _)| t));
            out
        },
        |(g, bb)| validation_score(&score_adapted(g, bb, &valid)?),
    )?;
    (*generator, *backbone) = pair;
    Ok(log)
}
