//! DKT-style recurrent knowledge-tracing model with a replaceable output
//! layer.

use crate::checkpoint::Checkpoint;
use crate::data::{InteractionSequence, StateEncoder, Window};
use crate::error::{Error, Result};
use crate::eval::metrics::auc;
use crate::nn::{normal, uniform, Gru, GruVars, ParamKind};
use crate::numcore::{bce_sum, Matrix, Tape, Var, PROB_CLAMP};
use crate::rng::substream;
use crate::train::{fit, BatchResult, TrainConfig, TrainLog};

/// Windows per forward pass when only predicting.
const PREDICT_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub num_concepts: usize,
    /// Embedding width `d`.
    pub embed_dim: usize,
    /// Recurrent hidden size `d_in`.
    pub hidden: usize,
}

impl BackboneConfig {
    pub fn new(num_concepts: usize) -> Self {
        BackboneConfig {
            num_concepts,
            embed_dim: 32,
            hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_concepts == 0 || self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::Config(format!("degenerate backbone dimensions {self:?}")));
        }
        Ok(())
    }
}

/// Proficiency over all concepts after a given number of interactions.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeState {
    /// 1-based count of interactions consumed.
    pub step: usize,
    pub proficiency: Vec<f64>,
}

/// Weight (`hidden × num_concepts`) and bias of the output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicLayerParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl DynamicLayerParams {
    pub fn bit_eq(&self, other: &DynamicLayerParams) -> bool {
        self.weight.bit_eq(&other.weight)
            && self.bias.len() == other.bias.len()
            && self
                .bias
                .iter()
                .zip(&other.bias)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Residual bottleneck after the recurrent cell:
/// `h + tanh(h·down + b_down)·up + b_up`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adapter {
    pub down: Matrix,
    pub b_down: Matrix,
    pub up: Matrix,
    pub b_up: Matrix,
}

impl Adapter {
    /// Up-projection starts at zero, so a fresh adapter is the identity.
    pub fn new(hidden: usize, bottleneck: usize, seed: u64) -> Self {
        let mut rng = substream(seed, "adapter-init");
        Adapter {
            down: uniform(hidden, bottleneck, 1.0 / (hidden as f64).sqrt(), &mut rng),
            b_down: Matrix::zeros(1, bottleneck),
            up: Matrix::zeros(bottleneck, hidden),
            b_up: Matrix::zeros(1, hidden),
        }
    }

    pub fn bottleneck(&self) -> usize {
        self.down.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
    /// `(num_concepts + 1) × embed_dim`, row 0 is padding and stays zero.
    pub concept_emb: Matrix,
    /// `2 × embed_dim`, added to the concept row.
    pub response_emb: Matrix,
    pub gru: Gru,
    pub out_weight: Matrix,
    pub out_bias: Matrix,
    pub adapter: Option<Adapter>,
    pub trained: bool,
}

/// Tape handles for every backbone tensor, in [`Backbone::tensors`] order.
#[derive(Clone, Debug)]
pub struct BackboneVars {
    pub all: Vec<Var>,
    pub concept_emb: Var,
    pub response_emb: Var,
    pub gru: GruVars,
    pub out_weight: Var,
    pub out_bias: Var,
    pub adapter: Option<[Var; 4]>,
}

/// Output of the recurrent encoder for a batch: rows `b·steps + t` of `z`
/// hold learner `b`'s representation after step `t`.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub z: Var,
    pub batch: usize,
    pub steps: usize,
}

/// Which next-step predictions a loss or evaluation covers.
///
/// Step `i` (0-based) of window `b` is predicted from the state after step
/// `i - 1`; steps `i < from[b]` and `i = 0` are skipped.
pub(crate) struct Targets {
    pub concept: Vec<usize>,
    pub target: Vec<f64>,
    pub mask: Vec<bool>,
    pub count: usize,
}

pub(crate) fn next_step_targets(windows: &[&Window], steps: usize, from: &[usize]) -> Targets {
    let n = windows.len() * steps;
    let mut t = Targets {
        concept: vec![0; n],
        target: vec![0.0; n],
        mask: vec![false; n],
        count: 0,
    };
    for (b, w) in windows.iter().enumerate() {
        for i in from[b].max(1)..w.len {
            let r = b * steps + i - 1;
            t.concept[r] = w.concepts[i] - 1;
            t.target[r] = w.responses[i] as f64;
            t.mask[r] = true;
            t.count += 1;
        }
    }
    t
}

/// Summed binary cross-entropy over unmasked steps, predictions clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(predictions: &[f64], targets: &[f64], mask: &[bool]) -> Result<f64> {
    if predictions.len() != targets.len() || mask.len() != targets.len() {
        return Err(Error::dim(
            "bce_loss",
            format!(
                "{} predictions, {} targets, {} mask",
                predictions.len(),
                targets.len(),
                mask.len()
            ),
        ));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Degenerate("bce over an all-masked window".into()));
    }
    Ok(bce_sum(predictions, targets, mask))
}

/// Mean-per-step variant of [`bce_loss`], for reporting.
pub fn mean_bce_loss(predictions: &[f64], targets: &[f64], mask: &[bool]) -> Result<f64> {
    let n = mask.iter().filter(|&&m| m).count();
    Ok(bce_loss(predictions, targets, mask)? / n as f64)
}

/// Next-step predictions paired with the observed responses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scored {
    pub predictions: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Scored {
    pub fn extend(&mut self, other: Scored) {
        self.predictions.extend(other.predictions);
        self.labels.extend(other.labels);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Backbone {
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(seed, "backbone-init");
        let (c, d, h) = (config.num_concepts, config.embed_dim, config.hidden);
        let mut concept_emb = normal(c + 1, d, 1.0, &mut rng);
        concept_emb.row_mut(0).fill(0.0);
        let response_emb = normal(2, d, 1.0, &mut rng);
        let gru = Gru::new(d, h, &mut rng);
        let bound = 1.0 / (h as f64).sqrt();
        let out_weight = uniform(h, c, bound, &mut rng);
        let out_bias = uniform(1, c, bound, &mut rng);
        Ok(Backbone {
            config,
            concept_emb,
            response_emb,
            gru,
            out_weight,
            out_bias,
            adapter: None,
            trained: false,
        })
    }

    pub fn num_concepts(&self) -> usize {
        self.config.num_concepts
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    /// Named tensors with their roles, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ParamKind, &Matrix)> {
        let mut out = vec![
            ("concept_emb".to_string(), ParamKind::Embedding, &self.concept_emb),
            ("response_emb".to_string(), ParamKind::Embedding, &self.response_emb),
        ];
        for (n, k, m) in self.gru.tensors() {
            out.push((format!("gru.{n}"), k, m));
        }
        out.push(("out.weight".into(), ParamKind::Weight, &self.out_weight));
        out.push(("out.bias".into(), ParamKind::Bias, &self.out_bias));
        if let Some(a) = &self.adapter {
            out.push(("adapter.down".into(), ParamKind::Weight, &a.down));
            out.push(("adapter.b_down".into(), ParamKind::Bias, &a.b_down));
            out.push(("adapter.up".into(), ParamKind::Weight, &a.up));
            out.push(("adapter.b_up".into(), ParamKind::Bias, &a.b_up));
        }
        out
    }

    /// Mutable tensors in [`Backbone::tensors`] order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.concept_emb, &mut self.response_emb];
        out.extend(self.gru.tensors_mut());
        out.push(&mut self.out_weight);
        out.push(&mut self.out_bias);
        if let Some(a) = &mut self.adapter {
            out.extend([&mut a.down, &mut a.b_down, &mut a.up, &mut a.b_up]);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, m)| m.len()).sum()
    }

    /// Puts every tensor on the tape; `track` decides which get gradients.
    pub fn bind(&self, tape: &mut Tape, track: impl Fn(&str, ParamKind) -> bool) -> BackboneVars {
        let all: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|(name, kind, m)| {
                if track(&name, kind) {
                    tape.param(m.clone())
                } else {
                    tape.constant(m.clone())
                }
            })
            .collect();
        self.vars_from(&all)
    }

    /// Wraps handles already on a tape, one per tensor in
    /// [`Backbone::tensors`] order.
    pub fn vars_from(&self, all: &[Var]) -> BackboneVars {
        BackboneVars {
            concept_emb: all[0],
            response_emb: all[1],
            gru: Gru::from_vars(&all[2..6]),
            out_weight: all[6],
            out_bias: all[7],
            adapter: self.adapter.as_ref().map(|_| [all[8], all[9], all[10], all[11]]),
            all: all.to_vec(),
        }
    }

    /// Runs embedding, recurrence and (if present) the adapter over a batch,
    /// padded to the longest window in it.
    pub fn encode(&self, tape: &mut Tape, vars: &BackboneVars, windows: &[&Window]) -> Result<Encoded> {
        let steps = windows.iter().map(|w| w.len).max().unwrap_or(0).max(1);
        let c = self.num_concepts();
        let mut inputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut cidx = Vec::with_capacity(windows.len());
            let mut ridx = Vec::with_capacity(windows.len());
            for w in windows {
                if t < w.len {
                    let tok = w.concepts[t];
                    if tok == 0 || tok > c {
                        return Err(Error::Index(format!(
                            "concept token {tok} at step {t} outside 1..={c}"
                        )));
                    }
                    cidx.push(Some(tok));
                    ridx.push(Some(w.responses[t] as usize));
                } else {
                    cidx.push(None);
                    ridx.push(None);
                }
            }
            let ce = tape.gather_rows(vars.concept_emb, cidx)?;
            let re = tape.gather_rows(vars.response_emb, ridx)?;
            inputs.push(tape.add(ce, re)?);
        }
        let hs = vars.gru.run(tape, &inputs)?;
        let mut z = tape.stack_steps(&hs)?;
        if let Some([down, b_down, up, b_up]) = vars.adapter {
            let a = tape.matmul(z, down)?;
            let a = tape.add_row(a, b_down)?;
            let a = tape.tanh(a);
            let a = tape.matmul(a, up)?;
            let a = tape.add_row(a, b_up)?;
            z = tape.add(z, a)?;
        }
        Ok(Encoded {
            z,
            batch: windows.len(),
            steps,
        })
    }

    /// Output-layer logits. `layer` is `(weight, bias)` with one row per
    /// learner: weight rows are flattened `hidden × num_concepts` matrices
    /// (row-major), bias rows have `num_concepts` entries. A single row is
    /// shared by the whole batch.
    pub fn logits(&self, tape: &mut Tape, enc: Encoded, layer: (Var, Var)) -> Result<Var> {
        let (w, b) = layer;
        let c = self.num_concepts();
        let rows = enc.batch * enc.steps;
        let learners = tape.value(w).rows();
        let group = if learners == 1 { rows } else { enc.steps };
        if learners != 1 && learners != enc.batch {
            return Err(Error::dim(
                "output layer",
                format!("{learners} parameter rows for a batch of {}", enc.batch),
            ));
        }
        let out = tape.row_vec_mat(enc.z, w, c, group)?;
        let bias = tape.gather_rows(b, (0..rows).map(|r| Some(r / group)).collect())?;
        tape.add(out, bias)
    }

    /// The stored output layer in the flattened layout [`Backbone::logits`] takes.
    pub fn stored_layer(&self, tape: &mut Tape, vars: &BackboneVars) -> Result<(Var, Var)> {
        let (h, c) = (self.hidden(), self.num_concepts());
        let w = tape.reshape(vars.out_weight, 1, h * c)?;
        Ok((w, vars.out_bias))
    }

    fn check_override(&self, p: &DynamicLayerParams) -> Result<()> {
        let (h, c) = (self.hidden(), self.num_concepts());
        if p.weight.shape() != (h, c) || p.bias.len() != c {
            return Err(Error::dim(
                "dynamic layer",
                format!(
                    "weight {:?} and bias {} for a ({h}, {c}) layer",
                    p.weight.shape(),
                    p.bias.len()
                ),
            ));
        }
        Ok(())
    }

    /// Per-learner override parameters as tape constants.
    pub fn override_layer(&self, tape: &mut Tape, params: &[&DynamicLayerParams]) -> Result<(Var, Var)> {
        let (h, c) = (self.hidden(), self.num_concepts());
        let mut w = Matrix::zeros(params.len(), h * c);
        let mut b = Matrix::zeros(params.len(), c);
        for (i, p) in params.iter().enumerate() {
            self.check_override(p)?;
            w.row_mut(i).copy_from_slice(p.weight.as_slice());
            b.row_mut(i).copy_from_slice(&p.bias);
        }
        Ok((tape.constant(w), tape.constant(b)))
    }

    pub fn dynamic_layer(&self) -> DynamicLayerParams {
        DynamicLayerParams {
            weight: self.out_weight.clone(),
            bias: self.out_bias.as_slice().to_vec(),
        }
    }

    /// Per-step knowledge states for one window (one state per unpadded step).
    pub fn forward(
        &self,
        window: &Window,
        override_layer: Option<&DynamicLayerParams>,
    ) -> Result<Vec<KnowledgeState>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, |_, _| false);
        let enc = self.encode(&mut tape, &vars, &[window])?;
        let layer = match override_layer {
            Some(p) => self.override_layer(&mut tape, &[p])?,
            None => self.stored_layer(&mut tape, &vars)?,
        };
        let logits = self.logits(&mut tape, enc, layer)?;
        let probs = tape.sigmoid(logits);
        let pv = tape.value(probs);
        Ok((0..window.len)
            .map(|t| KnowledgeState {
                step: t + 1,
                proficiency: pv.row(t).to_vec(),
            })
            .collect())
    }

    /// State after consuming interactions `1..=t`.
    pub fn knowledge_state_at(&self, window: &Window, t: usize) -> Result<KnowledgeState> {
        if t == 0 || t > window.len {
            return Err(Error::Index(format!(
                "step {t} outside 1..={} of the window",
                window.len
            )));
        }
        let mut states = self.forward(&window.prefix(t), None)?;
        Ok(states.swap_remove(t - 1))
    }

    /// Encoder output (after the adapter) for each window, `len × hidden`.
    pub fn hidden_states(&self, windows: &[&Window]) -> Result<Vec<Matrix>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(PREDICT_CHUNK) {
            let mut tape = Tape::new();
            let vars = self.bind(&mut tape, |_, _| false);
            let enc = self.encode(&mut tape, &vars, chunk)?;
            let z = tape.value(enc.z);
            for (b, w) in chunk.iter().enumerate() {
                let start = b * enc.steps;
                let data = z.as_slice()[start * z.cols()..(start + w.len) * z.cols()].to_vec();
                out.push(Matrix::from_vec(w.len, z.cols(), data)?);
            }
        }
        Ok(out)
    }

    /// Next-step predictions for steps `from[b]..len` of each window
    /// (never step 0), optionally through per-window output layers.
    pub fn predict(
        &self,
        windows: &[&Window],
        overrides: Option<&[&DynamicLayerParams]>,
        from: &[usize],
    ) -> Result<Scored> {
        if from.len() != windows.len() || overrides.is_some_and(|o| o.len() != windows.len()) {
            return Err(Error::dim(
                "predict",
                format!("{} windows, {} start steps", windows.len(), from.len()),
            ));
        }
        let mut scored = Scored::default();
        for (ci, chunk) in windows.chunks(PREDICT_CHUNK).enumerate() {
            let lo = ci * PREDICT_CHUNK;
            let mut tape = Tape::new();
            let vars = self.bind(&mut tape, |_, _| false);
            let enc = self.encode(&mut tape, &vars, chunk)?;
            let layer = match overrides {
                Some(o) => self.override_layer(&mut tape, &o[lo..lo + chunk.len()])?,
                None => self.stored_layer(&mut tape, &vars)?,
            };
            let logits = self.logits(&mut tape, enc, layer)?;
            let t = next_step_targets(chunk, enc.steps, &from[lo..lo + chunk.len()]);
            let lv = tape.value(logits);
            for r in 0..t.mask.len() {
                if t.mask[r] {
                    let p = crate::numcore::sigmoid(lv.get(r, t.concept[r]));
                    scored.predictions.push(p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP));
                    scored.labels.push(t.target[r] as u8);
                }
            }
        }
        Ok(scored)
    }

    /// Summed next-step loss of a batch and gradients for tracked tensors.
    pub(crate) fn batch_loss(
        &self,
        windows: &[&Window],
        track: impl Fn(&str, ParamKind) -> bool,
    ) -> Result<BatchResult> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, &track);
        let enc = self.encode(&mut tape, &vars, windows)?;
        let layer = self.stored_layer(&mut tape, &vars)?;
        let logits = self.logits(&mut tape, enc, layer)?;
        let t = next_step_targets(windows, enc.steps, &vec![1; windows.len()]);
        if t.count == 0 {
            return Ok(BatchResult {
                loss_sum: 0.0,
                count: 0,
                grads: vec![],
            });
        }
        let picked = tape.pick_cols(logits, t.concept)?;
        let probs = tape.sigmoid(picked);
        let loss = tape.bce(probs, t.target, t.mask)?;
        tape.backward(loss)?;
        let grads = self
            .tensors()
            .iter()
            .zip(&vars.all)
            .filter(|((name, kind, _), _)| track(name, *kind))
            .map(|((_, _, m), v)| {
                tape.grad(*v)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()))
            })
            .collect();
        Ok(BatchResult {
            loss_sum: tape.value(loss).item().unwrap_or(f64::NAN),
            count: t.count,
            grads,
        })
    }

    /// Validation score: AUC over every next-step prediction, or the negated
    /// mean loss when the labels are single-class.
    pub fn validation_score(&self, windows: &[&Window]) -> Result<f64> {
        let s = self.predict(windows, None, &vec![1; windows.len()])?;
        validation_score(&s)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("backbone")
            .with_meta("num_concepts", self.config.num_concepts)
            .with_meta("embed_dim", self.config.embed_dim)
            .with_meta("hidden", self.config.hidden)
            .with_meta("trained", self.trained);
        if let Some(a) = &self.adapter {
            ck = ck.with_meta("adapter_bottleneck", a.bottleneck());
        }
        for (name, _, m) in self.tensors() {
            ck.push(name, m);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("backbone")?;
        let config = BackboneConfig {
            num_concepts: ck.meta_usize("num_concepts")?,
            embed_dim: ck.meta_usize("embed_dim")?,
            hidden: ck.meta_usize("hidden")?,
        };
        config.validate()?;
        let (c, d, h) = (config.num_concepts, config.embed_dim, config.hidden);
        let adapter = match ck.meta.get("adapter_bottleneck") {
            Some(_) => {
                let b = ck.meta_usize("adapter_bottleneck")?;
                Some(Adapter {
                    down: ck.tensor("adapter.down", h, b)?,
                    b_down: ck.tensor("adapter.b_down", 1, b)?,
                    up: ck.tensor("adapter.up", b, h)?,
                    b_up: ck.tensor("adapter.b_up", 1, h)?,
                })
            }
            None => None,
        };
        Ok(Backbone {
            config,
            concept_emb: ck.tensor("concept_emb", c + 1, d)?,
            response_emb: ck.tensor("response_emb", 2, d)?,
            gru: Gru {
                w_input: ck.tensor("gru.w_input", d, 3 * h)?,
                w_hidden: ck.tensor("gru.w_hidden", h, 3 * h)?,
                b_input: ck.tensor("gru.b_input", 1, 3 * h)?,
                b_hidden: ck.tensor("gru.b_hidden", 1, 3 * h)?,
            },
            out_weight: ck.tensor("out.weight", h, c)?,
            out_bias: ck.tensor("out.bias", 1, c)?,
            adapter,
            trained: ck.meta_str("trained")? == "true",
        })
    }
}

pub(crate) fn validation_score(s: &Scored) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::EmptyDataset("validation predictions"));
    }
    match auc(&s.predictions, &s.labels) {
        Ok(a) => Ok(a),
        Err(Error::UndefinedMetric(_)) => {
            let targets: Vec<f64> = s.labels.iter().map(|&l| l as f64).collect();
            Ok(-mean_bce_loss(&s.predictions, &targets, &vec![true; s.len()])?)
        }
        Err(e) => Err(e),
    }
}

/// Trains every tensor for which `track` holds; used by [`train`] and by
/// the retraining baselines.
pub(crate) fn train_subset(
    model: &mut Backbone,
    train: &[&Window],
    valid: &[&Window],
    config: &TrainConfig,
    stream: &str,
    track: impl Fn(&str, ParamKind) -> bool + Copy,
) -> Result<TrainLog> {
    if valid.is_empty() {
        return Err(Error::EmptyDataset("validation split"));
    }
    let selected: Vec<bool> = model.tensors().iter().map(|(n, k, _)| track(n, *k)).collect();
    fit(
        model,
        train.len(),
        config,
        stream,
        |m, idx| {
            let batch: Vec<&Window> = idx.iter().map(|&i| train[i]).collect();
            m.batch_loss(&batch, track)
        },
        |m| {
            m.tensors_mut()
                .into_iter()
                .zip(&selected)
                .filter(|(_, &s)| s)
                .map(|(t, _)| t)
                .collect()
        },
        |m| m.validation_score(valid),
    )
}

/// Adam over shuffled minibatches with early stopping on validation AUC;
/// the best epoch's parameters are kept.
pub fn train(
    model: &mut Backbone,
    train: &[&Window],
    valid: &[&Window],
    config: &TrainConfig,
) -> Result<TrainLog> {
    let log = train_subset(model, train, valid, config, "backbone-shuffle", |name, _| {
        !name.starts_with("adapter.")
    })?;
    model.trained = true;
    Ok(log)
}

impl StateEncoder for Backbone {
    fn is_trained(&self) -> bool {
        self.trained
    }

    /// Whole sequence as one window; `steps` are 1-based interaction counts.
    fn states_at(&self, sequence: &InteractionSequence, steps: &[usize]) -> Result<Vec<Vec<f64>>> {
        let concepts: Vec<usize> = sequence.interactions.iter().map(|x| x.concepts[0] as usize).collect();
        let responses: Vec<u8> = sequence.responses().collect();
        let timestamps: Vec<i64> = sequence.interactions.iter().map(|x| x.timestamp).collect();
        let w = Window::from_parts(sequence.learner, &concepts, &responses, &timestamps, concepts.len())?;
        let states = self.forward(&w, None)?;
        steps
            .iter()
            .map(|&t| {
                if t == 0 || t > states.len() {
                    Err(Error::Index(format!("step {t} outside 1..={}", states.len())))
                } else {
                    Ok(states[t - 1].proficiency.clone())
                }
            })
            .collect()
    }
}
