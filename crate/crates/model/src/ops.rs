//! Attention, layer norm and feed-forward primitives with their gradients.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};

pub const LN_EPS: f64 = 1e-5;

/// Softmax over the entries of `row` whose key is valid; the rest become 0.
/// A row with no valid key is all zeros.
pub fn masked_softmax(mut row: ArrayViewMut1<f64>, valid: &[bool]) {
    let max = row
        .iter()
        .zip(valid)
        .filter(|(_, &ok)| ok)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.fill(0.0);
        return;
    }
    let mut sum = 0.0;
    for (x, &ok) in row.iter_mut().zip(valid) {
        *x = if ok { (*x - max).exp() } else { 0.0 };
        sum += *x;
    }
    row.mapv_inplace(|x| x / sum);
}

/// Scaled dot-product attention. Returns the output and the weight matrix.
pub fn attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    valid: &[bool],
) -> (Array2<f64>, Array2<f64>) {
    assert_eq!(q.ncols(), k.ncols(), "query and key width differ");
    assert_eq!(k.nrows(), v.nrows(), "key and value count differ");
    assert_eq!(k.nrows(), valid.len(), "mask length differs from key count");
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let mut a = q.dot(&k.t());
    a.mapv_inplace(|x| x * scale);
    for row in a.rows_mut() {
        masked_softmax(row, valid);
    }
    (a.dot(&v), a)
}

/// Projection weights of one multi-head attention block.
#[derive(Debug, Clone, Copy)]
pub struct AttnWeights<'a> {
    pub wq: ArrayView2<'a, f64>,
    pub bq: ArrayView1<'a, f64>,
    pub wk: ArrayView2<'a, f64>,
    pub bk: ArrayView1<'a, f64>,
    pub wv: ArrayView2<'a, f64>,
    pub bv: ArrayView1<'a, f64>,
    pub wo: ArrayView2<'a, f64>,
    pub bo: ArrayView1<'a, f64>,
}

pub(crate) fn linear(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

/// Accumulates weight and bias gradients and returns the input gradient.
pub(crate) fn linear_backward(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    dy: ArrayView2<f64>,
    mut dw: ArrayViewMut2<f64>,
    mut db: ArrayViewMut1<f64>,
) -> Array2<f64> {
    general_mat_mul(1.0, &x.t(), &dy, 1.0, &mut dw);
    db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

/// Multi-head attention on a single sequence.
pub fn multi_head_attention(
    w: &AttnWeights,
    q_in: ArrayView2<f64>,
    k_in: ArrayView2<f64>,
    v_in: ArrayView2<f64>,
    valid: &[bool],
    n_heads: usize,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let q = linear(q_in, w.wq, w.bq);
    let k = linear(k_in, w.wk, w.bk);
    let v = linear(v_in, w.wv, w.bv);
    let width = q.ncols();
    assert_eq!(width % n_heads, 0, "width not divisible by head count");
    let dh = width / n_heads;
    let mut concat = Array2::zeros((q.nrows(), width));
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let (o, a) = attention(q.slice(cols), k.slice(cols), v.slice(cols), valid);
        concat.slice_mut(cols).assign(&o);
        heads.push(a);
    }
    (linear(concat.view(), w.wo, w.bo), heads)
}

/// Per-row standardization followed by an affine map.
pub fn layer_norm(x: ArrayView2<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>) -> Array2<f64> {
    layer_norm_forward(x, gain, bias).0
}

pub(crate) struct LnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub(crate) fn layer_norm_forward(
    x: ArrayView2<f64>,
    gain: ArrayView1<f64>,
    bias: ArrayView1<f64>,
) -> (Array2<f64>, LnCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        *is = 1.0 / (var + LN_EPS).sqrt();
        let s = *is;
        row.mapv_inplace(|v| (v - mean) * s);
    }
    let mut y = &xhat * &gain;
    y += &bias;
    (y, LnCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    cache: &LnCache,
    gain: ArrayView1<f64>,
    dy: &Array2<f64>,
    mut dgain: ArrayViewMut1<f64>,
    mut dbias: ArrayViewMut1<f64>,
) -> Array2<f64> {
    dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    dbias += &dy.sum_axis(Axis(0));
    let n = dy.ncols() as f64;
    let mut dx = dy * &gain;
    for ((mut row, xh), &is) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
        let mean_d = row.sum() / n;
        let mean_dx = row.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
        Zip::from(&mut row)
            .and(xh)
            .for_each(|d, &h| *d = is * (*d - mean_d - h * mean_dx));
    }
    dx
}

/// Position-wise two-layer ReLU network.
pub fn ffn(
    x: ArrayView2<f64>,
    w1: ArrayView2<f64>,
    b1: ArrayView1<f64>,
    w2: ArrayView2<f64>,
    b2: ArrayView1<f64>,
) -> Array2<f64> {
    let h = linear(x, w1, b1).mapv_into(|v| v.max(0.0));
    linear(h.view(), w2, b2)
}
