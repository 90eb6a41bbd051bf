//! Pre-norm transformer encoder with individually maskable attention heads
//! and the answer / span-start / span-end output layers.
//!
//! Forward and backward passes are written out by hand. The forward pass
//! keeps every intermediate needed by the backward pass in a [`Cache`].

mod attention;
mod checkpoint;
mod config;
mod mask;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

pub use attention::{attention_head, HeadOutput};
pub use checkpoint::{checkpoint_id, load_checkpoint, save_checkpoint, Manifest, TensorEntry, FORMAT_VERSION};
pub use config::{count_heads, ModelConfig, Regime};
pub use mask::HeadMask;

use crate::data::EncodedSample;
use crate::error::{Error, Result};
use crate::numerics::{softmax_slice, Matrix, Parameter, Rng};
use crate::tokenizer::TokenId;

const INIT_STD: f64 = 0.02;
const EMBED_INIT_STD: f64 = 1.0;
const LN_EPS: f64 = 1e-5;

// Slot offsets of one layer's tensors inside the flat parameter list.
const LN1_GAIN: usize = 0;
const LN1_BIAS: usize = 1;
const Q_WEIGHT: usize = 2;
const Q_BIAS: usize = 3;
const K_WEIGHT: usize = 4;
const K_BIAS: usize = 5;
const V_WEIGHT: usize = 6;
const V_BIAS: usize = 7;
const OUT_WEIGHT: usize = 8;
const OUT_BIAS: usize = 9;
const LN2_GAIN: usize = 10;
const LN2_BIAS: usize = 11;
const FFN_IN_WEIGHT: usize = 12;
const FFN_IN_BIAS: usize = 13;
const FFN_OUT_WEIGHT: usize = 14;
const FFN_OUT_BIAS: usize = 15;
const PER_LAYER: usize = 16;

const TOKEN_EMBED: usize = 0;
const POS_EMBED: usize = 1;
const EMBED_LN_GAIN: usize = 2;
const EMBED_LN_BIAS: usize = 3;
const FIRST_LAYER: usize = 4;

/// Prefix shared by every task-specific output tensor.
pub const HEAD_PREFIX: &str = "head.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Token sequence plus the region the span scorers are allowed to pick from.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub tokens: &'a [TokenId],
    /// `[start, end)` of the context; required when span heads are enabled.
    pub context: Option<(usize, usize)>,
}

impl<'a> From<&'a EncodedSample> for ModelInput<'a> {
    fn from(s: &'a EncodedSample) -> Self {
        ModelInput {
            tokens: &s.encoding.token_ids,
            context: Some((s.encoding.context_start, s.encoding.context_end)),
        }
    }
}

/// Supervision for one input, in model category indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Target {
    pub category: usize,
    /// Inclusive start and end token when the answer is a span.
    pub span: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutputs {
    /// Distribution over the regime's answer categories.
    pub f_a: Vec<f64>,
    /// Start distribution over all positions; zero outside the context.
    pub f_s: Option<Vec<f64>>,
    /// End distribution over all positions; zero outside the context.
    pub f_e: Option<Vec<f64>>,
    /// `trace[layer][head]` is that head's attention probability matrix.
    pub trace: Option<Vec<Vec<Matrix>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    params: Vec<Parameter>,
}

fn layer_slot(layer: usize, slot: usize) -> usize {
    FIRST_LAYER + layer * PER_LAYER + slot
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Matrix {
    let dist = Normal::new(0.0, std).expect("valid std");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

/// Names and shapes of every tensor, in canonical order.
fn layout(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
    let d = config.hidden_dim;
    let f = config.ffn_dim;
    let mut out = vec![
        ("embeddings.token".to_string(), (config.vocab_size, d)),
        ("embeddings.position".to_string(), (config.max_seq_len, d)),
        ("embeddings.ln.gain".to_string(), (1, d)),
        ("embeddings.ln.bias".to_string(), (1, d)),
    ];
    for l in 0..config.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        out.extend([
            (p("ln1.gain"), (1, d)),
            (p("ln1.bias"), (1, d)),
            (p("attn.query.weight"), (d, d)),
            (p("attn.query.bias"), (1, d)),
            (p("attn.key.weight"), (d, d)),
            (p("attn.key.bias"), (1, d)),
            (p("attn.value.weight"), (d, d)),
            (p("attn.value.bias"), (1, d)),
            (p("attn.output.weight"), (d, d)),
            (p("attn.output.bias"), (1, d)),
            (p("ln2.gain"), (1, d)),
            (p("ln2.bias"), (1, d)),
            (p("ffn.in.weight"), (d, f)),
            (p("ffn.in.bias"), (1, f)),
            (p("ffn.out.weight"), (f, d)),
            (p("ffn.out.bias"), (1, d)),
        ]);
    }
    out.push(("final_ln.gain".into(), (1, d)));
    out.push(("final_ln.bias".into(), (1, d)));
    out.push(("head.answer.weight".into(), (d, config.answer_categories)));
    out.push(("head.answer.bias".into(), (1, config.answer_categories)));
    if config.span_heads_enabled {
        out.push(("head.span_start.weight".into(), (d, 1)));
        out.push(("head.span_start.bias".into(), (1, 1)));
        out.push(("head.span_end.weight".into(), (d, 1)));
        out.push(("head.span_end.bias".into(), (1, 1)));
    }
    out
}

fn initial_value(name: &str, shape: (usize, usize), rng: &mut Rng) -> Matrix {
    if name.ends_with(".gain") {
        Matrix::filled(shape.0, shape.1, 1.0)
    } else if name.ends_with(".bias") {
        Matrix::zeros(shape.0, shape.1)
    } else if name.starts_with("embeddings.") {
        normal_matrix(shape.0, shape.1, EMBED_INIT_STD, rng)
    } else {
        normal_matrix(shape.0, shape.1, INIT_STD, rng)
    }
}

struct LnCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix) -> (Matrix, LnCache) {
    let (n, d) = x.shape();
    let mut xhat = Matrix::zeros(n, d);
    let mut out = Matrix::zeros(n, d);
    let mut rstd = Vec::with_capacity(n);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(rs);
        let xh = xhat.row_mut(r);
        for (h, &v) in xh.iter_mut().zip(row) {
            *h = (v - mean) * rs;
        }
        let xh = xhat.row(r);
        for (j, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = xh[j] * gain.data()[j] + bias.data()[j];
        }
    }
    (out, LnCache { xhat, rstd })
}

/// Returns `(dx, dgain, dbias)`.
fn layer_norm_backward(dy: &Matrix, cache: &LnCache, gain: &Matrix) -> (Matrix, Matrix, Matrix) {
    let (n, d) = dy.shape();
    let mut dx = Matrix::zeros(n, d);
    let mut dgain = Matrix::zeros(1, d);
    let mut dbias = Matrix::zeros(1, d);
    let mut dxhat = vec![0.0; d];
    for r in 0..n {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        for j in 0..d {
            dxhat[j] = dyr[j] * gain.data()[j];
            dgain.data_mut()[j] += dyr[j] * xh[j];
            dbias.data_mut()[j] += dyr[j];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let rs = cache.rstd[r];
        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = rs * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    (dx, dgain, dbias)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_K * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_K * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * u * u)
}

/// Inverted dropout scales (`0` or `1/(1-p)`), or `None` when inactive.
fn dropout_scales(len: usize, rate: f64, rng: Option<&mut Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate == 0.0 {
        return None;
    }
    let keep_scale = 1.0 / (1.0 - rate);
    Some(
        (0..len)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep_scale })
            .collect(),
    )
}

fn apply_scales(m: &mut Matrix, scales: &Option<Vec<f64>>) {
    if let Some(s) = scales {
        for (v, k) in m.data_mut().iter_mut().zip(s) {
            *v *= k;
        }
    }
}

struct LayerCache {
    ln1: LnCache,
    a: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// `None` for masked heads.
    probs: Vec<Option<Matrix>>,
    o: Matrix,
    drop_attn: Option<Vec<f64>>,
    ln2: LnCache,
    b: Matrix,
    u: Matrix,
    g: Matrix,
    drop_ffn: Option<Vec<f64>>,
}

/// Intermediates of one forward pass.
pub struct Cache {
    tokens: Vec<TokenId>,
    ln_embed: LnCache,
    drop_embed: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    hidden: Matrix,
    context: Option<(usize, usize)>,
}

impl Model {
    /// Randomly initialised model.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let params = layout(&config)
            .into_iter()
            .map(|(name, shape)| {
                let value = initial_value(&name, shape, rng);
                Parameter::new(name, value)
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Builds a model from named tensors in canonical order.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Matrix)>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != tensors.len() {
            return Err(Error::Schema(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(tensors.len());
        for ((name, shape), (got_name, value)) in expected.into_iter().zip(tensors) {
            if name != got_name || shape != value.shape() {
                return Err(Error::Schema(format!(
                    "tensor {got_name} {:?} does not match expected {name} {shape:?}",
                    value.shape()
                )));
            }
            params.push(Parameter::new(name, value));
        }
        Ok(Self { config, params })
    }

    pub fn regime(&self) -> Regime {
        self.config.regime().expect("validated at construction")
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    fn w(&self, idx: usize) -> &Matrix {
        &self.params[idx].value
    }

    fn head_base(&self) -> usize {
        FIRST_LAYER + self.config.n_layers * PER_LAYER + 2
    }

    /// Keeps the backbone of `source` and re-initialises the task heads when
    /// the answer space changes. Returns the model and the names of the
    /// re-initialised tensors.
    pub fn transfer_from(source: &Model, regime: Regime, rng: &mut Rng) -> Result<(Model, Vec<String>)> {
        let config = source.config.with_regime(regime);
        let mut model = Model::new(config, rng)?;
        let same_heads = source.regime() == regime;
        let mut fresh = Vec::new();
        for p in model.params.iter_mut() {
            let is_head = p.name.starts_with(HEAD_PREFIX);
            if is_head && !same_heads {
                fresh.push(p.name.clone());
                continue;
            }
            let src = source
                .param(&p.name)
                .ok_or_else(|| Error::Schema(format!("source checkpoint lacks {}", p.name)))?;
            p.value = src.value.clone();
        }
        Ok((model, fresh))
    }

    pub fn forward(
        &self,
        sample: &EncodedSample,
        mask: Option<&HeadMask>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<ModelOutputs> {
        self.forward_input(sample.into(), mask, mode, rng)
    }

    pub fn forward_input(
        &self,
        input: ModelInput<'_>,
        mask: Option<&HeadMask>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<ModelOutputs> {
        let rng = (mode == Mode::Train).then_some(rng);
        self.run(input, mask, rng, false).map(|(o, _)| o)
    }

    /// Eval-mode forward pass that also records every attention matrix.
    pub fn forward_traced(&self, input: ModelInput<'_>, mask: Option<&HeadMask>) -> Result<ModelOutputs> {
        self.run(input, mask, None, true).map(|(o, _)| o)
    }

    /// Eval-mode forward pass without any randomness.
    pub fn predict(&self, input: ModelInput<'_>, mask: Option<&HeadMask>) -> Result<ModelOutputs> {
        self.run(input, mask, None, false).map(|(o, _)| o)
    }

    /// Forward pass followed by the gradient of the per-sample loss.
    /// Gradients come back in the order of [`Model::params`].
    pub fn forward_backward(
        &self,
        input: ModelInput<'_>,
        target: &Target,
        mask: Option<&HeadMask>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(ModelOutputs, Vec<Matrix>)> {
        let rng = (mode == Mode::Train).then_some(rng);
        let (outputs, cache) = self.run(input, mask, rng, false)?;
        let grads = self.backward(&cache, &outputs, target)?;
        Ok((outputs, grads))
    }

    fn run(
        &self,
        input: ModelInput<'_>,
        mask: Option<&HeadMask>,
        mut rng: Option<&mut Rng>,
        want_trace: bool,
    ) -> Result<(ModelOutputs, Cache)> {
        let cfg = &self.config;
        let tokens = input.tokens;
        let n = tokens.len();
        let d = cfg.hidden_dim;
        let dh = cfg.head_dim();
        if n == 0 || n > cfg.max_seq_len {
            return Err(Error::Dimension {
                op: "forward",
                lhs: (n, 1),
                rhs: (cfg.max_seq_len, 1),
            });
        }
        if let Some(m) = mask {
            if !m.matches(cfg) {
                return Err(Error::Dimension {
                    op: "head mask",
                    lhs: m.shape(),
                    rhs: (cfg.n_layers, cfg.n_heads),
                });
            }
        }
        let context = match (cfg.span_heads_enabled, input.context) {
            (true, None) => return Err(Error::Usage("span heads need a context region".into())),
            (_, Some((s, e))) if !(s < e && e <= n) => {
                return Err(Error::Usage(format!("context [{s}, {e}) invalid for {n} tokens")))
            }
            (_, c) => c,
        };

        let mut x = Matrix::zeros(n, d);
        let tok = self.w(TOKEN_EMBED);
        let pos = self.w(POS_EMBED);
        for (i, &t) in tokens.iter().enumerate() {
            let t = t as usize;
            if t >= cfg.vocab_size {
                return Err(Error::Usage(format!("token id {t} outside vocabulary")));
            }
            for ((o, &a), &b) in x.row_mut(i).iter_mut().zip(tok.row(t)).zip(pos.row(i)) {
                *o = a + b;
            }
        }
        let (mut x, ln_embed) = layer_norm(&x, self.w(EMBED_LN_GAIN), self.w(EMBED_LN_BIAS));
        let drop_embed = dropout_scales(n * d, cfg.dropout_rate, rng.as_deref_mut());
        apply_scales(&mut x, &drop_embed);

        let mut layers = Vec::with_capacity(cfg.n_layers);
        let mut trace = want_trace.then(Vec::new);
        for l in 0..cfg.n_layers {
            let w = |slot| self.w(layer_slot(l, slot));
            let (a, ln1) = layer_norm(&x, w(LN1_GAIN), w(LN1_BIAS));
            let mut q = a.matmul(w(Q_WEIGHT))?;
            q.add_row_broadcast(w(Q_BIAS))?;
            let mut k = a.matmul(w(K_WEIGHT))?;
            k.add_row_broadcast(w(K_BIAS))?;
            let mut v = a.matmul(w(V_WEIGHT))?;
            v.add_row_broadcast(w(V_BIAS))?;

            let mut o = Matrix::zeros(n, d);
            let mut probs = Vec::with_capacity(cfg.n_heads);
            let mut layer_trace = Vec::new();
            for h in 0..cfg.n_heads {
                let keep = mask.map_or(true, |m| m.is_kept(l, h));
                let out = attention_head(
                    &q.columns(h * dh, dh),
                    &k.columns(h * dh, dh),
                    &v.columns(h * dh, dh),
                    keep,
                    None,
                )?;
                o.set_columns(h * dh, &out.output);
                if want_trace {
                    layer_trace.push(out.probs.clone());
                }
                probs.push(keep.then_some(out.probs));
            }
            if let Some(t) = trace.as_mut() {
                t.push(layer_trace);
            }

            let mut z = o.matmul(w(OUT_WEIGHT))?;
            z.add_row_broadcast(w(OUT_BIAS))?;
            let drop_attn = dropout_scales(n * d, cfg.dropout_rate, rng.as_deref_mut());
            apply_scales(&mut z, &drop_attn);
            let mut hres = x;
            hres.add_assign(&z)?;

            let (b, ln2) = layer_norm(&hres, w(LN2_GAIN), w(LN2_BIAS));
            let mut u = b.matmul(w(FFN_IN_WEIGHT))?;
            u.add_row_broadcast(w(FFN_IN_BIAS))?;
            let mut g = u.clone();
            g.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
            let mut y = g.matmul(w(FFN_OUT_WEIGHT))?;
            y.add_row_broadcast(w(FFN_OUT_BIAS))?;
            let drop_ffn = dropout_scales(n * d, cfg.dropout_rate, rng.as_deref_mut());
            apply_scales(&mut y, &drop_ffn);
            hres.add_assign(&y)?;
            x = hres;
            if !x.is_finite() {
                return Err(Error::Numeric(format!("non-finite activation in layer {l}")));
            }

            layers.push(LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                o,
                drop_attn,
                ln2,
                b,
                u,
                g,
                drop_ffn,
            });
        }

        let hb = self.head_base();
        let (hidden, lnf) = layer_norm(&x, self.w(hb - 2), self.w(hb - 1));

        let ans_w = self.w(hb);
        let ans_b = self.w(hb + 1);
        let logits: Vec<f64> = (0..cfg.answer_categories)
            .map(|c| {
                let mut acc = ans_b.data()[c];
                for (j, &hv) in hidden.row(0).iter().enumerate() {
                    acc += hv * ans_w.get(j, c);
                }
                acc
            })
            .collect();
        let mut f_a = vec![0.0; logits.len()];
        softmax_slice(&logits, None, &mut f_a)?;

        let (f_s, f_e) = if cfg.span_heads_enabled {
            let (cs, ce) = context.expect("checked above");
            let support: Vec<bool> = (0..n).map(|i| i >= cs && i < ce).collect();
            let scorer = |w_idx: usize| -> Result<Vec<f64>> {
                let w = self.w(w_idx);
                let b = self.w(w_idx + 1).data()[0];
                let logits: Vec<f64> = (0..n)
                    .map(|i| {
                        let mut acc = b;
                        for (&hv, &wv) in hidden.row(i).iter().zip(w.data()) {
                            acc += hv * wv;
                        }
                        acc
                    })
                    .collect();
                let mut p = vec![0.0; n];
                softmax_slice(&logits, Some(&support), &mut p)?;
                Ok(p)
            };
            (Some(scorer(hb + 2)?), Some(scorer(hb + 4)?))
        } else {
            (None, None)
        };

        if !f_a.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite answer distribution".into()));
        }

        let outputs = ModelOutputs {
            f_a,
            f_s,
            f_e,
            trace,
        };
        let cache = Cache {
            tokens: tokens.to_vec(),
            ln_embed,
            drop_embed,
            layers,
            lnf,
            hidden,
            context,
        };
        Ok((outputs, cache))
    }

    fn backward(&self, cache: &Cache, outputs: &ModelOutputs, target: &Target) -> Result<Vec<Matrix>> {
        let cfg = &self.config;
        let n = cache.tokens.len();
        let d = cfg.hidden_dim;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        if target.category >= cfg.answer_categories {
            return Err(Error::Regime(format!(
                "target category {} outside {} categories",
                target.category, cfg.answer_categories
            )));
        }
        if target.span.is_some() && !cfg.span_heads_enabled {
            return Err(Error::Regime("span target for a model without span heads".into()));
        }

        let mut grads: Vec<Matrix> = self
            .params
            .iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        let hb = self.head_base();
        let hidden = &cache.hidden;
        let mut dhidden = Matrix::zeros(n, d);

        // answer classifier on position 0
        let dlogits: Vec<f64> = outputs
            .f_a
            .iter()
            .enumerate()
            .map(|(c, &p)| p - if c == target.category { 1.0 } else { 0.0 })
            .collect();
        {
            let ans_w = self.w(hb);
            let (gw, rest) = grads[hb..].split_at_mut(1);
            for j in 0..d {
                let hv = hidden.get(0, j);
                let mut acc = 0.0;
                for (c, &dl) in dlogits.iter().enumerate() {
                    gw[0].data_mut()[j * cfg.answer_categories + c] = hv * dl;
                    acc += ans_w.get(j, c) * dl;
                }
                dhidden.data_mut()[j] += acc;
            }
            rest[0].data_mut().copy_from_slice(&dlogits);
        }

        // span scorers, gated by answerability and weighted by one half
        if let Some((ys, ye)) = target.span {
            let (cs, ce) = cache.context.expect("span heads imply context");
            if !(cs <= ys && ys <= ye && ye < ce) {
                return Err(Error::Regime(format!("span ({ys}, {ye}) outside context [{cs}, {ce})")));
            }
            let dists = [
                (outputs.f_s.as_ref().expect("span heads"), ys, hb + 2),
                (outputs.f_e.as_ref().expect("span heads"), ye, hb + 4),
            ];
            for (probs, t, w_idx) in dists {
                let w = self.w(w_idx).data().to_vec();
                let mut gw = vec![0.0; d];
                let mut gb = 0.0;
                for i in cs..ce {
                    let dl = 0.5 * (probs[i] - if i == t { 1.0 } else { 0.0 });
                    gb += dl;
                    let hrow = hidden.row(i);
                    for j in 0..d {
                        gw[j] += hrow[j] * dl;
                    }
                    for (dhv, &wv) in dhidden.row_mut(i).iter_mut().zip(&w) {
                        *dhv += dl * wv;
                    }
                }
                grads[w_idx].data_mut().copy_from_slice(&gw);
                grads[w_idx + 1].data_mut()[0] = gb;
            }
        }

        let (mut dx, dg, db) = layer_norm_backward(&dhidden, &cache.lnf, self.w(hb - 2));
        grads[hb - 2] = dg;
        grads[hb - 1] = db;

        for l in (0..cfg.n_layers).rev() {
            let lc = &cache.layers[l];
            let w = |slot| self.w(layer_slot(l, slot));
            let gi = |slot| layer_slot(l, slot);

            // x_out = h + dropout(ffn(ln2(h)))
            let mut dh_res = dx.clone();
            let mut dy = dx;
            apply_scales(&mut dy, &lc.drop_ffn);
            grads[gi(FFN_OUT_WEIGHT)] = lc.g.matmul_tn(&dy)?;
            grads[gi(FFN_OUT_BIAS)] = dy.col_sums();
            let mut du = dy.matmul_nt(w(FFN_OUT_WEIGHT))?;
            for (dv, &u) in du.data_mut().iter_mut().zip(lc.u.data()) {
                *dv *= gelu_grad(u);
            }
            grads[gi(FFN_IN_WEIGHT)] = lc.b.matmul_tn(&du)?;
            grads[gi(FFN_IN_BIAS)] = du.col_sums();
            let db_ln = du.matmul_nt(w(FFN_IN_WEIGHT))?;
            let (dh_ln, dg2, db2) = layer_norm_backward(&db_ln, &lc.ln2, w(LN2_GAIN));
            grads[gi(LN2_GAIN)] = dg2;
            grads[gi(LN2_BIAS)] = db2;
            dh_res.add_assign(&dh_ln)?;

            // h = x + dropout(attn(ln1(x)))
            let mut dz = dh_res.clone();
            apply_scales(&mut dz, &lc.drop_attn);
            grads[gi(OUT_WEIGHT)] = lc.o.matmul_tn(&dz)?;
            grads[gi(OUT_BIAS)] = dz.col_sums();
            let d_o = dz.matmul_nt(w(OUT_WEIGHT))?;

            let mut dq = Matrix::zeros(n, d);
            let mut dk = Matrix::zeros(n, d);
            let mut dv = Matrix::zeros(n, d);
            for h in 0..cfg.n_heads {
                let Some(p) = &lc.probs[h] else { continue };
                let cols = h * dh;
                let doh = d_o.columns(cols, dh);
                let vh = lc.v.columns(cols, dh);
                let qh = lc.q.columns(cols, dh);
                let kh = lc.k.columns(cols, dh);
                let dp = doh.matmul_nt(&vh)?;
                dv.set_columns(cols, &p.matmul_tn(&doh)?);
                let mut ds = Matrix::zeros(n, n);
                for r in 0..n {
                    let pr = p.row(r);
                    let dpr = dp.row(r);
                    let dot: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
                    for (c, o) in ds.row_mut(r).iter_mut().enumerate() {
                        *o = pr[c] * (dpr[c] - dot) * scale;
                    }
                }
                dq.set_columns(cols, &ds.matmul(&kh)?);
                dk.set_columns(cols, &ds.matmul_tn(&qh)?);
            }
            grads[gi(Q_WEIGHT)] = lc.a.matmul_tn(&dq)?;
            grads[gi(Q_BIAS)] = dq.col_sums();
            grads[gi(K_WEIGHT)] = lc.a.matmul_tn(&dk)?;
            grads[gi(K_BIAS)] = dk.col_sums();
            grads[gi(V_WEIGHT)] = lc.a.matmul_tn(&dv)?;
            grads[gi(V_BIAS)] = dv.col_sums();
            let mut da = dq.matmul_nt(w(Q_WEIGHT))?;
            da.add_assign(&dk.matmul_nt(w(K_WEIGHT))?)?;
            da.add_assign(&dv.matmul_nt(w(V_WEIGHT))?)?;
            let (dx_ln, dg1, db1) = layer_norm_backward(&da, &lc.ln1, w(LN1_GAIN));
            grads[gi(LN1_GAIN)] = dg1;
            grads[gi(LN1_BIAS)] = db1;
            dh_res.add_assign(&dx_ln)?;
            dx = dh_res;
        }

        apply_scales(&mut dx, &cache.drop_embed);
        let (dx, dg, db) = layer_norm_backward(&dx, &cache.ln_embed, self.w(EMBED_LN_GAIN));
        grads[EMBED_LN_GAIN] = dg;
        grads[EMBED_LN_BIAS] = db;
        for (i, &t) in cache.tokens.iter().enumerate() {
            let row = dx.row(i);
            for (g, &v) in grads[TOKEN_EMBED].row_mut(t as usize).iter_mut().zip(row) {
                *g += v;
            }
            for (g, &v) in grads[POS_EMBED].row_mut(i).iter_mut().zip(row) {
                *g += v;
            }
        }

        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for {}",
                self.params[bad].name
            )));
        }
        Ok(grads)
    }

    /// Adds `grads` (in parameter order) into the accumulated gradients.
    pub fn accumulate(&mut self, grads: &[Matrix]) -> Result<()> {
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.grad.add_assign(g)?;
        }
        Ok(())
    }

    /// Query, key and value weight/bias entries owned by one head, as
    /// `(parameter index, flat index)` pairs.
    pub fn head_qkv_entries(&self, layer: usize, head: usize) -> Vec<(usize, usize)> {
        let d = self.config.hidden_dim;
        let dh = self.config.head_dim();
        let cols = head * dh..(head + 1) * dh;
        let mut out = Vec::new();
        for (w_slot, b_slot) in [(Q_WEIGHT, Q_BIAS), (K_WEIGHT, K_BIAS), (V_WEIGHT, V_BIAS)] {
            let wi = layer_slot(layer, w_slot);
            let bi = layer_slot(layer, b_slot);
            for r in 0..d {
                for c in cols.clone() {
                    out.push((wi, r * d + c));
                }
            }
            for c in cols.clone() {
                out.push((bi, c));
            }
        }
        out
    }

    /// Index of the value-projection weight of `layer`.
    pub fn value_weight_index(&self, layer: usize) -> usize {
        layer_slot(layer, V_WEIGHT)
    }

    pub fn value_bias_index(&self, layer: usize) -> usize {
        layer_slot(layer, V_BIAS)
    }
}
