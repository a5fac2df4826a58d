//! Encoder-decoder forward pass, cross-entropy loss and backpropagation.
//!
//! A batch is packed into one matrix of `total_len × d_model` rows.
//! Position-wise layers run on the whole matrix; attention runs per sequence
//! and head on row ranges, so sequences never see each other.

use std::borrow::Borrow;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use trajmatch_core::seed::Rng as SeedRng;

use crate::input::{Example, NormalizedTrajectory};
use crate::ops::{attention, layer_norm_backward, layer_norm_forward, linear, linear_backward, LnCache};
use crate::params::{AttnIds, FfnIds, Layout, NormIds, Transformer};
use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    EncoderSelf,
    DecoderSelf,
    DecoderCross,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::EncoderSelf => "encoder_self",
            Stage::DecoderSelf => "decoder_self",
            Stage::DecoderCross => "decoder_cross",
        }
    }
}

/// Attention weights of one head, rows are queries and columns keys.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub stage: Stage,
    pub layer: usize,
    pub head: usize,
    pub weights: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Array2<f64>,
    pub records: Vec<AttentionRecord>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Span {
    start: usize,
    len: usize,
}

impl Span {
    fn rows(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

pub(crate) struct Packed {
    coords: Array2<f64>,
    positions: Vec<usize>,
    spans: Vec<Span>,
    valid: Vec<bool>,
}

impl Packed {
    pub(crate) fn new(inputs: &[&NormalizedTrajectory], max_len: usize) -> Result<Self, ModelError> {
        let total: usize = inputs.iter().map(|t| t.len()).sum();
        let mut coords = Array2::zeros((total, 2));
        let mut positions = Vec::with_capacity(total);
        let mut spans = Vec::with_capacity(inputs.len());
        let mut valid = Vec::with_capacity(total);
        let mut row = 0;
        for t in inputs {
            if t.len() > max_len {
                return Err(ModelError::TooLong {
                    len: t.len(),
                    max: max_len,
                });
            }
            if t.is_empty() || t.pad_mask.len() != t.len() {
                return Err(ModelError::EmptyInput);
            }
            spans.push(Span {
                start: row,
                len: t.len(),
            });
            for (i, (v, &pad)) in t.values.iter().zip(&t.pad_mask).enumerate() {
                coords[[row, 0]] = v[0];
                coords[[row, 1]] = v[1];
                positions.push(i);
                valid.push(!pad);
                row += 1;
            }
        }
        Ok(Self {
            coords,
            positions,
            spans,
            valid,
        })
    }

    fn rows(&self) -> usize {
        self.positions.len()
    }
}

struct AttnCache {
    xq: Array2<f64>,
    /// Key/value source for cross-attention; `None` for self-attention.
    xkv: Option<Array2<f64>>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// One matrix per (sequence, head), sequence-major.
    weights: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

struct FfnCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

struct EncoderTape {
    attn: AttnCache,
    drop1: Option<Array2<f64>>,
    ln1: LnCache,
    ffn: FfnCache,
    drop2: Option<Array2<f64>>,
    ln2: LnCache,
}

struct DecoderTape {
    self_attn: AttnCache,
    drop1: Option<Array2<f64>>,
    ln1: LnCache,
    cross: AttnCache,
    drop2: Option<Array2<f64>>,
    ln2: LnCache,
    ffn: FfnCache,
    drop3: Option<Array2<f64>>,
    ln3: LnCache,
}

pub(crate) struct Tape {
    spatial_pre: Array2<f64>,
    spatial_hidden: Array2<f64>,
    embed_drop: Option<Array2<f64>>,
    encoder: Vec<EncoderTape>,
    memory: Array2<f64>,
    query_drop: Option<Array2<f64>>,
    decoder: Vec<DecoderTape>,
    top: Array2<f64>,
    pub(crate) logits: Array2<f64>,
}

/// Inverted-dropout scale mask, or `None` in evaluation mode.
fn dropout_mask(shape: (usize, usize), p: f64, rng: &mut Option<&mut SeedRng>) -> Option<Array2<f64>> {
    let rng = rng.as_mut()?;
    if p == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < p {
            0.0
        } else {
            keep
        }
    }))
}

fn apply(mut x: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    if let Some(m) = mask {
        x *= m;
    }
    x
}

struct Ctx<'a> {
    layout: &'a Layout,
    data: &'a [f64],
    heads: usize,
    packed: &'a Packed,
}

impl Ctx<'_> {
    fn attn_forward(&self, ids: &AttnIds, xq: Array2<f64>, xkv: Option<Array2<f64>>) -> (Array2<f64>, AttnCache) {
        let (l, d) = (self.layout, self.data);
        let q = linear(xq.view(), l.mat(d, ids.wq), l.vec(d, ids.bq));
        let src = xkv.as_ref().unwrap_or(&xq);
        let k = linear(src.view(), l.mat(d, ids.wk), l.vec(d, ids.bk));
        let v = linear(src.view(), l.mat(d, ids.wv), l.vec(d, ids.bv));
        let dh = q.ncols() / self.heads;
        let mut concat = Array2::zeros(q.raw_dim());
        let mut weights = Vec::with_capacity(self.packed.spans.len() * self.heads);
        for span in &self.packed.spans {
            let valid = &self.packed.valid[span.rows()];
            for h in 0..self.heads {
                let blk = s![span.rows(), h * dh..(h + 1) * dh];
                let (o, a) = attention(q.slice(blk), k.slice(blk), v.slice(blk), valid);
                concat.slice_mut(blk).assign(&o);
                weights.push(a);
            }
        }
        let out = linear(concat.view(), l.mat(d, ids.wo), l.vec(d, ids.bo));
        let cache = AttnCache {
            xq,
            xkv,
            q,
            k,
            v,
            weights,
            concat,
        };
        (out, cache)
    }

    fn ffn_forward(&self, ids: &FfnIds, x: Array2<f64>) -> (Array2<f64>, FfnCache) {
        let (l, d) = (self.layout, self.data);
        let pre = linear(x.view(), l.mat(d, ids.w1), l.vec(d, ids.b1));
        let hidden = pre.mapv(|v| v.max(0.0));
        let out = linear(hidden.view(), l.mat(d, ids.w2), l.vec(d, ids.b2));
        (out, FfnCache { x, pre, hidden })
    }

    fn norm_forward(&self, ids: &NormIds, x: &Array2<f64>) -> (Array2<f64>, LnCache) {
        layer_norm_forward(
            x.view(),
            self.layout.vec(self.data, ids.gain),
            self.layout.vec(self.data, ids.bias),
        )
    }
}

pub(crate) fn forward_tape(model: &Transformer, packed: &Packed, mut rng: Option<&mut SeedRng>) -> Tape {
    let cfg = model.config();
    let layout = model.layout();
    let data = model.params();
    let ids = &layout.ids;
    let ctx = Ctx {
        layout,
        data,
        heads: cfg.n_heads,
        packed,
    };
    let shape = (packed.rows(), cfg.d_model);
    let p = cfg.dropout;

    let spatial_pre = linear(
        packed.coords.view(),
        layout.mat(data, ids.spatial_w1),
        layout.vec(data, ids.spatial_b1),
    );
    let spatial_hidden = spatial_pre.mapv(|v| v.max(0.0));
    let mut x = linear(
        spatial_hidden.view(),
        layout.mat(data, ids.spatial_w2),
        layout.vec(data, ids.spatial_b2),
    );
    let table = layout.mat(data, ids.position);
    for (mut row, &pos) in x.rows_mut().into_iter().zip(&packed.positions) {
        row += &table.row(pos);
    }
    let embed_drop = dropout_mask(shape, p, &mut rng);
    x = apply(x, &embed_drop);

    let mut encoder = Vec::with_capacity(cfg.n_layers);
    for e in &ids.encoder {
        let (a, attn) = ctx.attn_forward(&e.attn, x.clone(), None);
        let drop1 = dropout_mask(shape, p, &mut rng);
        let r1 = x + apply(a, &drop1);
        let (x1, ln1) = ctx.norm_forward(&e.norm1, &r1);
        let (f, ffn) = ctx.ffn_forward(&e.ffn, x1.clone());
        let drop2 = dropout_mask(shape, p, &mut rng);
        let r2 = x1 + apply(f, &drop2);
        let (x2, ln2) = ctx.norm_forward(&e.norm2, &r2);
        x = x2;
        encoder.push(EncoderTape {
            attn,
            drop1,
            ln1,
            ffn,
            drop2,
            ln2,
        });
    }
    let memory = x;

    let queries = layout.mat(data, ids.query);
    let mut y = Array2::zeros(shape);
    for (mut row, &pos) in y.rows_mut().into_iter().zip(&packed.positions) {
        row.assign(&queries.row(pos));
    }
    let query_drop = dropout_mask(shape, p, &mut rng);
    y = apply(y, &query_drop);

    let mut decoder = Vec::with_capacity(cfg.n_layers);
    for dl in &ids.decoder {
        let (s1, self_attn) = ctx.attn_forward(&dl.self_attn, y.clone(), None);
        let drop1 = dropout_mask(shape, p, &mut rng);
        let r1 = y + apply(s1, &drop1);
        let (y1, ln1) = ctx.norm_forward(&dl.norm1, &r1);
        let (c, cross) = ctx.attn_forward(&dl.cross, y1.clone(), Some(memory.clone()));
        let drop2 = dropout_mask(shape, p, &mut rng);
        let r2 = y1 + apply(c, &drop2);
        let (y2, ln2) = ctx.norm_forward(&dl.norm2, &r2);
        let (f, ffn) = ctx.ffn_forward(&dl.ffn, y2.clone());
        let drop3 = dropout_mask(shape, p, &mut rng);
        let r3 = y2 + apply(f, &drop3);
        let (y3, ln3) = ctx.norm_forward(&dl.norm3, &r3);
        y = y3;
        decoder.push(DecoderTape {
            self_attn,
            drop1,
            ln1,
            cross,
            drop2,
            ln2,
            ffn,
            drop3,
            ln3,
        });
    }
    let logits = linear(y.view(), layout.mat(data, ids.out_w), layout.vec(data, ids.out_b));
    Tape {
        spatial_pre,
        spatial_hidden,
        embed_drop,
        encoder,
        memory,
        query_drop,
        decoder,
        top: y,
        logits,
    }
}

fn records_for(tape: &Tape, seq: usize, heads: usize) -> Vec<AttentionRecord> {
    let mut out = Vec::new();
    let mut push = |stage: Stage, layer: usize, cache: &AttnCache| {
        for head in 0..heads {
            out.push(AttentionRecord {
                stage,
                layer,
                head,
                weights: cache.weights[seq * heads + head].clone(),
            });
        }
    };
    for (l, e) in tape.encoder.iter().enumerate() {
        push(Stage::EncoderSelf, l, &e.attn);
    }
    for (l, d) in tape.decoder.iter().enumerate() {
        push(Stage::DecoderSelf, l, &d.self_attn);
        push(Stage::DecoderCross, l, &d.cross);
    }
    out
}

/// Evaluation-mode forward pass on one input.
pub fn forward(model: &Transformer, input: &NormalizedTrajectory, capture: bool) -> Result<ForwardOutput, ModelError> {
    let packed = Packed::new(&[input], model.config().max_len)?;
    let tape = forward_tape(model, &packed, None);
    let records = if capture {
        records_for(&tape, 0, model.config().n_heads)
    } else {
        Vec::new()
    };
    Ok(ForwardOutput {
        logits: tape.logits,
        records,
    })
}

/// Evaluation-mode logits for several inputs in one packed pass.
pub fn forward_batch(model: &Transformer, inputs: &[&NormalizedTrajectory]) -> Result<Vec<Array2<f64>>, ModelError> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let packed = Packed::new(inputs, model.config().max_len)?;
    let tape = forward_tape(model, &packed, None);
    Ok(packed
        .spans
        .iter()
        .map(|sp| tape.logits.slice(s![sp.rows(), ..]).to_owned())
        .collect())
}

/// Mean cross-entropy over non-padded positions and the gradient of every
/// parameter, flat in layout order. Dropout is active iff `rng` is given.
pub fn loss_and_gradients<E: Borrow<Example>>(
    model: &Transformer,
    batch: &[E],
    rng: Option<&mut SeedRng>,
) -> Result<(f64, Vec<f64>), ModelError> {
    let n_classes = model.config().n_classes;
    let mut targets = Vec::new();
    for ex in batch {
        let ex = ex.borrow();
        if ex.labels.len() != ex.input.len() {
            return Err(ModelError::LabelLength {
                labels: ex.labels.len(),
                points: ex.input.len(),
            });
        }
        for (&label, &pad) in ex.labels.iter().zip(&ex.input.pad_mask) {
            let ok = if pad {
                label == 0
            } else {
                label >= 1 && label < n_classes
            };
            if !ok {
                return Err(ModelError::LabelOutOfRange { label, n_classes });
            }
            targets.push(if pad { None } else { Some(label) });
        }
    }
    let counted = targets.iter().filter(|t| t.is_some()).count();
    if counted == 0 {
        return Err(ModelError::EmptyInput);
    }
    let inputs: Vec<&NormalizedTrajectory> = batch.iter().map(|e| &e.borrow().input).collect();
    let packed = Packed::new(&inputs, model.config().max_len)?;
    let tape = forward_tape(model, &packed, rng);

    let mut dlogits = Array2::zeros(tape.logits.raw_dim());
    let mut loss = 0.0;
    let inv = 1.0 / counted as f64;
    for ((row, mut grad), target) in tape.logits.rows().into_iter().zip(dlogits.rows_mut()).zip(&targets) {
        let Some(label) = *target else { continue };
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss += z.ln() + max - row[label];
        for (g, &v) in grad.iter_mut().zip(row) {
            *g = (v - max).exp() / z * inv;
        }
        grad[label] -= inv;
    }
    let grads = backward(model, &packed, &tape, dlogits);
    Ok((loss * inv, grads))
}

struct Back<'a> {
    layout: &'a Layout,
    data: &'a [f64],
    grads: Vec<f64>,
    heads: usize,
    packed: &'a Packed,
}

impl Back<'_> {
    fn norm(&mut self, ids: &NormIds, cache: &LnCache, dy: &Array2<f64>) -> Array2<f64> {
        let gain = self.layout.vec(self.data, ids.gain);
        let (gs, bs) = (
            self.layout.specs()[ids.gain].range(),
            self.layout.specs()[ids.bias].range(),
        );
        // gain and bias are adjacent in the layout
        debug_assert_eq!(gs.end, bs.start);
        let (ga, gb) = self.grads[gs.start..bs.end].split_at_mut(gs.len());
        layer_norm_backward(cache, gain, dy, ga.into(), gb.into())
    }

    fn linear(&mut self, w: usize, b: usize, x: ArrayView2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
        let wv = self.layout.mat(self.data, w);
        let (ws, bs) = (self.layout.specs()[w].clone(), self.layout.specs()[b].range());
        let (lo, hi) = if ws.offset < bs.start {
            let (a, rest) = self.grads.split_at_mut(bs.start);
            (&mut a[ws.range()], &mut rest[..bs.len()])
        } else {
            let (a, rest) = self.grads.split_at_mut(ws.offset);
            (&mut rest[..ws.len()], &mut a[bs])
        };
        let dw = ndarray::ArrayViewMut2::from_shape((ws.shape[0], ws.shape[1]), lo).expect("matrix tensor");
        linear_backward(x, wv, dy, dw, hi.into())
    }

    fn ffn(&mut self, ids: &FfnIds, cache: &FfnCache, dy: &Array2<f64>) -> Array2<f64> {
        let mut dpre = self.linear(ids.w2, ids.b2, cache.hidden.view(), dy.view());
        ndarray::Zip::from(&mut dpre).and(&cache.pre).for_each(|g, &p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
        self.linear(ids.w1, ids.b1, cache.x.view(), dpre.view())
    }

    /// Returns the gradient for the query input and, for cross-attention,
    /// the gradient for the key/value source.
    fn attn(&mut self, ids: &AttnIds, cache: &AttnCache, dout: &Array2<f64>) -> (Array2<f64>, Option<Array2<f64>>) {
        let dconcat = self.linear(ids.wo, ids.bo, cache.concat.view(), dout.view());
        let width = cache.q.ncols();
        let dh = width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (si, span) in self.packed.spans.iter().enumerate() {
            for h in 0..self.heads {
                let a = &cache.weights[si * self.heads + h];
                let blk = s![span.rows(), h * dh..(h + 1) * dh];
                let d_o = dconcat.slice(blk);
                let mut ds = d_o.dot(&cache.v.slice(blk).t());
                dv.slice_mut(blk).assign(&a.t().dot(&d_o));
                for (mut row, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
                    let dot: f64 = row.iter().zip(arow).map(|(x, y)| x * y).sum();
                    ndarray::Zip::from(&mut row)
                        .and(arow)
                        .for_each(|g, &w| *g = w * (*g - dot) * scale);
                }
                dq.slice_mut(blk).assign(&ds.dot(&cache.k.slice(blk)));
                dk.slice_mut(blk).assign(&ds.t().dot(&cache.q.slice(blk)));
            }
        }
        let mut dxq = self.linear(ids.wq, ids.bq, cache.xq.view(), dq.view());
        let src = cache.xkv.as_ref().unwrap_or(&cache.xq);
        let mut dsrc = self.linear(ids.wk, ids.bk, src.view(), dk.view());
        dsrc += &self.linear(ids.wv, ids.bv, src.view(), dv.view());
        if cache.xkv.is_some() {
            (dxq, Some(dsrc))
        } else {
            dxq += &dsrc;
            (dxq, None)
        }
    }
}

fn unmask(mut g: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    if let Some(m) = mask {
        g *= m;
    }
    g
}

fn backward(model: &Transformer, packed: &Packed, tape: &Tape, dlogits: Array2<f64>) -> Vec<f64> {
    let layout = model.layout();
    let ids = &layout.ids;
    let mut b = Back {
        layout,
        data: model.params(),
        grads: vec![0.0; layout.total()],
        heads: model.config().n_heads,
        packed,
    };

    let mut dy = b.linear(ids.out_w, ids.out_b, tape.top.view(), dlogits.view());
    let mut dmem = Array2::zeros(tape.memory.raw_dim());
    for (dl, t) in ids.decoder.iter().zip(&tape.decoder).rev() {
        let dr3 = b.norm(&dl.norm3, &t.ln3, &dy);
        let mut dy2 = b.ffn(&dl.ffn, &t.ffn, &unmask(dr3.clone(), &t.drop3));
        dy2 += &dr3;
        let dr2 = b.norm(&dl.norm2, &t.ln2, &dy2);
        let (mut dy1, dm) = b.attn(&dl.cross, &t.cross, &unmask(dr2.clone(), &t.drop2));
        dmem += &dm.expect("cross-attention source gradient");
        dy1 += &dr2;
        let dr1 = b.norm(&dl.norm1, &t.ln1, &dy1);
        let (mut dy0, _) = b.attn(&dl.self_attn, &t.self_attn, &unmask(dr1.clone(), &t.drop1));
        dy0 += &dr1;
        dy = dy0;
    }
    let dquery = unmask(dy, &tape.query_drop);
    {
        let mut g = layout.mat_mut(&mut b.grads, ids.query);
        for (row, &pos) in dquery.rows().into_iter().zip(&packed.positions) {
            let mut dst = g.row_mut(pos);
            dst += &row;
        }
    }

    let mut dx = dmem;
    for (el, t) in ids.encoder.iter().zip(&tape.encoder).rev() {
        let dr2 = b.norm(&el.norm2, &t.ln2, &dx);
        let mut dx1 = b.ffn(&el.ffn, &t.ffn, &unmask(dr2.clone(), &t.drop2));
        dx1 += &dr2;
        let dr1 = b.norm(&el.norm1, &t.ln1, &dx1);
        let (mut dx0, _) = b.attn(&el.attn, &t.attn, &unmask(dr1.clone(), &t.drop1));
        dx0 += &dr1;
        dx = dx0;
    }
    let de = unmask(dx, &tape.embed_drop);
    {
        let mut g = layout.mat_mut(&mut b.grads, ids.position);
        for (row, &pos) in de.rows().into_iter().zip(&packed.positions) {
            let mut dst = g.row_mut(pos);
            dst += &row;
        }
    }
    let mut dpre = b.linear(ids.spatial_w2, ids.spatial_b2, tape.spatial_hidden.view(), de.view());
    ndarray::Zip::from(&mut dpre).and(&tape.spatial_pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    b.linear(ids.spatial_w1, ids.spatial_b1, packed.coords.view(), dpre.view());
    b.grads
}

/// Row-wise softmax over all classes.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    p
}

/// Sign of every ReLU pre-activation at non-padded positions of `batch`,
/// in evaluation mode.
/// Finite-difference checks use it to detect stencils that cross a kink.
#[doc(hidden)]
pub fn relu_pattern<E: Borrow<Example>>(model: &Transformer, batch: &[E]) -> Result<Vec<bool>, ModelError> {
    let inputs: Vec<&NormalizedTrajectory> = batch.iter().map(|e| &e.borrow().input).collect();
    let packed = Packed::new(&inputs, model.config().max_len)?;
    let tape = forward_tape(model, &packed, None);
    let ffns = tape
        .encoder
        .iter()
        .map(|e| &e.ffn.pre)
        .chain(tape.decoder.iter().map(|d| &d.ffn.pre));
    Ok(std::iter::once(&tape.spatial_pre)
        .chain(ffns)
        .flat_map(|m| {
            m.rows()
                .into_iter()
                .zip(&packed.valid)
                .filter(|(_, &ok)| ok)
                .flat_map(|(row, _)| row.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        })
        .collect())
}
