// Slice-level kernels behind the graph ops. Inner loops are written as
// axpy updates or fixed-lane dot products so they vectorize without
// reassociating float sums behind the compiler's back.

use alloc::vec;
use alloc::vec::Vec;

use super::graph::Var;
use crate::error::{bail, Result};
use crate::math;

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0f64; LANES];
    let xc = x.chunks_exact(LANES);
    let yc = y.chunks_exact(LANES);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..LANES {
            acc[l] += a[l] * b[l];
        }
    }
    let mut s = acc.iter().sum::<f64>();
    for (a, b) in xr.iter().zip(yr) {
        s += a * b;
    }
    s
}

/// `out[c] += sum_j coef(j) * m[j * width + c]` for `j` in `rows`, in that
/// order, with each block of output columns held in registers.
#[inline]
fn accumulate_rows<F, I>(rows: I, coef: F, m: &[f64], width: usize, out: &mut [f64])
where
    F: Fn(usize) -> f64,
    I: Iterator<Item = usize> + Clone,
{
    const BLOCK: usize = 32;
    let mut c0 = 0;
    while c0 + BLOCK <= width {
        let mut acc = [0.0f64; BLOCK];
        acc.copy_from_slice(&out[c0..c0 + BLOCK]);
        for j in rows.clone() {
            let a = coef(j);
            let row = &m[j * width + c0..j * width + c0 + BLOCK];
            for l in 0..BLOCK {
                acc[l] += a * row[l];
            }
        }
        out[c0..c0 + BLOCK].copy_from_slice(&acc);
        c0 += BLOCK;
    }
    for c in c0..width {
        let mut acc = out[c];
        for j in rows.clone() {
            acc += coef(j) * m[j * width + c];
        }
        out[c] = acc;
    }
}

/// `out[m, n] += a[m, k] * b[k, n]`, accumulating over `k` in ascending order.
pub(super) fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a[i * k + p], &b[p * n..(p + 1) * n], row);
        }
    }
}

pub(super) fn matmul_grad_lhs(g: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            da[i * k + p] += dot(gi, &b[p * n..(p + 1) * n]);
        }
    }
}

pub(super) fn matmul_grad_rhs(a: &[f64], g: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a[i * k + p], gi, &mut db[p * n..(p + 1) * n]);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(super) struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    pub(super) fn new(
        input: &[usize],
        kernel: &[usize],
        bias: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if input.len() != 3 || kernel.len() != 4 || bias.len() != 1 {
            bail!(
                Shape,
                "conv2d expects [C,H,W], [O,C,kh,kw], [O]; got {:?}, {:?}, {:?}",
                input,
                kernel,
                bias
            );
        }
        if kernel[1] != input[0] || bias[0] != kernel[0] {
            bail!(Shape, "conv2d channel mismatch: {:?}, {:?}, {:?}", input, kernel, bias);
        }
        if stride == 0 {
            bail!(Shape, "conv2d stride must be positive");
        }
        let extent = |size: usize, k: usize| -> Result<usize> {
            let span = size + 2 * pad;
            if span < k || !(span - k).is_multiple_of(stride) {
                bail!(
                    Shape,
                    "conv2d output extent ({} + 2*{} - {})/{} + 1 is not a positive integer",
                    size,
                    pad,
                    k,
                    stride
                );
            }
            Ok((span - k) / stride + 1)
        };
        let oh = extent(input[1], kernel[2])?;
        let ow = extent(input[2], kernel[3])?;
        Ok(Self {
            c_in: input[0],
            h: input[1],
            w: input[2],
            c_out: kernel[0],
            kh: kernel[2],
            kw: kernel[3],
            stride,
            pad,
            oh,
            ow,
        })
    }

    pub(super) fn out_shape(&self) -> Vec<usize> {
        vec![self.c_out, self.oh, self.ow]
    }

    /// Calls `f(out_index, in_index, kernel_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for o in 0..self.c_out {
            for y in 0..self.oh {
                for x in 0..self.ow {
                    let oi = (o * self.oh + y) * self.ow + x;
                    for c in 0..self.c_in {
                        for u in 0..self.kh {
                            let iy = (y * self.stride + u) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            for v in 0..self.kw {
                                let ix = (x * self.stride + v) as isize - self.pad as isize;
                                if ix < 0 || ix >= self.w as isize {
                                    continue;
                                }
                                let ii = (c * self.h + iy as usize) * self.w + ix as usize;
                                let ki = ((o * self.c_in + c) * self.kh + u) * self.kw + v;
                                f(oi, ii, ki);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(super) fn conv2d_forward(g: &ConvGeom, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; g.c_out * plane];
    for (o, chunk) in out.chunks_exact_mut(plane).enumerate() {
        chunk.iter_mut().for_each(|v| *v = bias[o]);
    }
    g.for_each_tap(|oi, ii, ki| out[oi] += input[ii] * kernel[ki]);
    out
}

pub(super) fn conv2d_grad_input(g: &ConvGeom, up: &[f64], kernel: &[f64], d: &mut [f64]) {
    g.for_each_tap(|oi, ii, ki| d[ii] += up[oi] * kernel[ki]);
}

pub(super) fn conv2d_grad_kernel(g: &ConvGeom, up: &[f64], input: &[f64], d: &mut [f64]) {
    g.for_each_tap(|oi, ii, ki| d[ki] += up[oi] * input[ii]);
}

pub(super) fn conv2d_grad_bias(g: &ConvGeom, up: &[f64], d: &mut [f64]) {
    let plane = g.oh * g.ow;
    for (o, chunk) in up.chunks_exact(plane).enumerate() {
        d[o] += chunk.iter().sum::<f64>();
    }
}

/// 2x2/stride-2 max over the trailing two axes. Ties keep the first element
/// in row-major order.
pub(super) fn max_pool_2x2(x: &[f64], shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let planes = x.len() / (h * w);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let cands = [
                    base + (2 * y) * w + 2 * xx,
                    base + (2 * y) * w + 2 * xx + 1,
                    base + (2 * y + 1) * w + 2 * xx,
                    base + (2 * y + 1) * w + 2 * xx + 1,
                ];
                let mut best = cands[0];
                for &c in &cands[1..] {
                    if x[c] > x[best] {
                        best = c;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Activations saved by the fused LSTM forward pass.
#[derive(Debug)]
pub(super) struct LstmTape {
    pub(super) w: [Var; 4],
    pub(super) b: [Var; 4],
    pub(super) x: Var,
    hidden: usize,
    steps: usize,
    /// `[T, 4L]` post-activation gates (i, f, g, o).
    gates: Vec<f64>,
    /// `[T + 1, L]` cell states, row 0 is the zero initial state.
    cells: Vec<f64>,
    /// `[T, L]` tanh of the cell state.
    cell_tanh: Vec<f64>,
    /// `[T + 1, L]` hidden states, row 0 is zero.
    hiddens: Vec<f64>,
}

pub(super) struct LstmGrads {
    pub(super) w: [Vec<f64>; 4],
    pub(super) b: [Vec<f64>; 4],
    pub(super) x: Vec<f64>,
}

/// Gate weights laid out as `[1 + L, 4L]`: row 0 multiplies `x_t`, row `1 + j`
/// multiplies `h_{t-1}[j]`.
fn stacked_columns(w: [&[f64]; 4], hidden: usize) -> Vec<f64> {
    let (cols, width) = (hidden + 1, 4 * hidden);
    let mut wt = vec![0.0; cols * width];
    for (q, wq) in w.iter().enumerate() {
        for r in 0..hidden {
            for c in 0..cols {
                wt[c * width + q * hidden + r] = wq[r * cols + c];
            }
        }
    }
    wt
}

pub(super) fn lstm_forward(
    w: [&[f64]; 4],
    b: [&[f64]; 4],
    xs: &[f64],
    wv: [Var; 4],
    bv: [Var; 4],
    xv: Var,
) -> (Vec<f64>, LstmTape) {
    let hidden = b[0].len();
    let width = 4 * hidden;
    let steps = xs.len();
    let wt = stacked_columns(w, hidden);
    let mut bias = Vec::with_capacity(width);
    for bq in b {
        bias.extend_from_slice(bq);
    }

    let mut gates = vec![0.0; steps * width];
    let mut cells = vec![0.0; (steps + 1) * hidden];
    let mut cell_tanh = vec![0.0; steps * hidden];
    let mut hiddens = vec![0.0; (steps + 1) * hidden];

    for t in 0..steps {
        let a = &mut gates[t * width..(t + 1) * width];
        a.copy_from_slice(&bias);
        let h_prev = &hiddens[t * hidden..(t + 1) * hidden];
        let input = |j: usize| if j == 0 { xs[t] } else { h_prev[j - 1] };
        accumulate_rows(0..hidden + 1, input, &wt, width, a);
        let (ifg, o) = a.split_at_mut(3 * hidden);
        for v in ifg[..2 * hidden].iter_mut() {
            *v = math::sigmoid_lane(*v);
        }
        for v in ifg[2 * hidden..].iter_mut() {
            *v = math::tanh_lane(*v);
        }
        for v in o.iter_mut() {
            *v = math::sigmoid_lane(*v);
        }
        let (past, now) = cells.split_at_mut((t + 1) * hidden);
        let c_prev = &past[t * hidden..];
        let c = &mut now[..hidden];
        let tc = &mut cell_tanh[t * hidden..(t + 1) * hidden];
        let h = &mut hiddens[(t + 1) * hidden..(t + 2) * hidden];
        for r in 0..hidden {
            let (ig, fg, gg) = (a[r], a[hidden + r], a[2 * hidden + r]);
            c[r] = fg * c_prev[r] + ig * gg;
        }
        for r in 0..hidden {
            tc[r] = math::tanh_lane(c[r]);
            h[r] = a[3 * hidden + r] * tc[r];
        }
    }

    let h_last = hiddens[steps * hidden..].to_vec();
    let tape = LstmTape {
        w: wv,
        b: bv,
        x: xv,
        hidden,
        steps,
        gates,
        cells,
        cell_tanh,
        hiddens,
    };
    (h_last, tape)
}

pub(super) fn lstm_backward(tape: &LstmTape, w: [&[f64]; 4], xs: &[f64], dh_last: &[f64]) -> LstmGrads {
    let hidden = tape.hidden;
    let width = 4 * hidden;
    let cols = hidden + 1;
    let wt = stacked_columns(w, hidden);
    // recurrent weights as `[4L, L]`: row `q * L + r` is gate `q`, unit `r`
    let mut wh = Vec::with_capacity(width * hidden);
    for wq in w {
        for r in 0..hidden {
            wh.extend_from_slice(&wq[r * cols + 1..(r + 1) * cols]);
        }
    }
    let mut dx = vec![0.0; tape.steps];

    let mut dh = dh_last.to_vec();
    let mut dc = vec![0.0; hidden];
    // `[T, 4L]` pre-activation gate gradients
    let mut das = vec![0.0; tape.steps * width];
    let mut dh_prev = vec![0.0; hidden];

    for t in (0..tape.steps).rev() {
        let a = &tape.gates[t * width..(t + 1) * width];
        let da = &mut das[t * width..(t + 1) * width];
        let c_prev = &tape.cells[t * hidden..(t + 1) * hidden];
        let tc = &tape.cell_tanh[t * hidden..(t + 1) * hidden];
        for r in 0..hidden {
            let (ig, fg, gg, og) = (a[r], a[hidden + r], a[2 * hidden + r], a[3 * hidden + r]);
            let d_o = dh[r] * tc[r];
            let dcr = dc[r] + dh[r] * og * (1.0 - tc[r] * tc[r]);
            let d_i = dcr * gg;
            let d_g = dcr * ig;
            let d_f = dcr * c_prev[r];
            dc[r] = dcr * fg;
            da[r] = d_i * ig * (1.0 - ig);
            da[hidden + r] = d_f * fg * (1.0 - fg);
            da[2 * hidden + r] = d_g * (1.0 - gg * gg);
            da[3 * hidden + r] = d_o * og * (1.0 - og);
        }
        dx[t] = dot(&wt[..width], da);
        dh_prev.fill(0.0);
        accumulate_rows(0..width, |c| da[c], &wh, hidden, &mut dh_prev);
        core::mem::swap(&mut dh, &mut dh_prev);
    }

    // weight and bias gradients summed over steps, latest step first
    let mut dbias = vec![0.0; width];
    accumulate_rows((0..tape.steps).rev(), |_| 1.0, &das, width, &mut dbias);
    let mut dwt = vec![0.0; cols * width];
    for c in 0..cols {
        let input = |t: usize| if c == 0 { xs[t] } else { tape.hiddens[t * hidden + c - 1] };
        accumulate_rows((0..tape.steps).rev(), input, &das, width, &mut dwt[c * width..(c + 1) * width]);
    }

    let mut gw: [Vec<f64>; 4] = Default::default();
    let mut gb: [Vec<f64>; 4] = Default::default();
    for q in 0..4 {
        let mut wq = vec![0.0; hidden * cols];
        for r in 0..hidden {
            for c in 0..cols {
                wq[r * cols + c] = dwt[c * width + q * hidden + r];
            }
        }
        gw[q] = wq;
        gb[q] = dbias[q * hidden..(q + 1) * hidden].to_vec();
    }
    LstmGrads { w: gw, b: gb, x: dx }
}
