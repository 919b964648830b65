//! Raw loops behind the tape primitives. Everything here works on slices and
//! knows nothing about graph bookkeeping.

use super::Real;

/// Samples per im2col chunk; bounds the scratch buffer for large eval batches.
const CONV_CHUNK: usize = 64;

/// Output extent of a valid, stride-1 convolution.
pub fn conv2d_output_dims(h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
    if kh == 0 || kw == 0 || kh > h || kw > w {
        None
    } else {
        Some((h - kh + 1, w - kw + 1))
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub h: usize,
    pub w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn out_hw(&self) -> usize {
        self.oh * self.ow
    }

    fn chunks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.batch)
            .step_by(CONV_CHUNK)
            .map(|start| (start, CONV_CHUNK.min(self.batch - start)))
    }
}

/// Unfolds `count` samples starting at `start` into `[patch, count * oh * ow]`.
fn im2col<T: Real>(g: &ConvGeom, input: &[T], start: usize, count: usize, cols: &mut Vec<T>) {
    let hw = g.out_hw();
    let width = count * hw;
    cols.clear();
    cols.resize(g.patch() * width, T::zero());
    for c in 0..g.in_ch {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let dst_row = &mut cols[r * width..(r + 1) * width];
                for b in 0..count {
                    let plane = ((start + b) * g.in_ch + c) * g.h * g.w;
                    for oy in 0..g.oh {
                        let src = plane + (oy + ki) * g.w + kj;
                        let dst = b * hw + oy * g.ow;
                        dst_row[dst..dst + g.ow].copy_from_slice(&input[src..src + g.ow]);
                    }
                }
            }
        }
    }
}

/// Folds column gradients back onto the input gradient (accumulating).
fn col2im<T: Real>(g: &ConvGeom, dcols: &[T], start: usize, count: usize, dinput: &mut [T]) {
    let hw = g.out_hw();
    let width = count * hw;
    for c in 0..g.in_ch {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let src_row = &dcols[r * width..(r + 1) * width];
                for b in 0..count {
                    let plane = ((start + b) * g.in_ch + c) * g.h * g.w;
                    for oy in 0..g.oh {
                        let dst = plane + (oy + ki) * g.w + kj;
                        let src = b * hw + oy * g.ow;
                        for (d, &s) in dinput[dst..dst + g.ow]
                            .iter_mut()
                            .zip(&src_row[src..src + g.ow])
                        {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// Valid cross-correlation. Returns the output and, when `keep_cols`, the
/// unfolded input of every chunk for reuse in the backward pass.
pub(crate) fn conv2d_forward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    bias: &[T],
    keep_cols: bool,
) -> (Vec<T>, Vec<Vec<T>>) {
    let hw = g.out_hw();
    let mut out = vec![T::zero(); g.batch * g.out_ch * hw];
    let mut kept = Vec::new();
    let mut cols = Vec::new();
    let mut tmp = Vec::new();
    for (start, count) in g.chunks() {
        im2col(g, input, start, count, &mut cols);
        let width = count * hw;
        tmp.clear();
        tmp.resize(g.out_ch * width, T::zero());
        T::gemm(g.out_ch, g.patch(), width, kernel, false, &cols, false, T::zero(), &mut tmp);
        for b in 0..count {
            for (o, &bo) in bias.iter().enumerate().take(g.out_ch) {
                let dst = ((start + b) * g.out_ch + o) * hw;
                let src = o * width + b * hw;
                for (d, &s) in out[dst..dst + hw].iter_mut().zip(&tmp[src..src + hw]) {
                    *d = s + bo;
                }
            }
        }
        if keep_cols {
            kept.push(std::mem::take(&mut cols));
        }
    }
    (out, kept)
}

/// Accumulates kernel, bias and (optionally) input gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    grad_out: &[T],
    kernel: &[T],
    cols: &[Vec<T>],
    dkernel: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
    dinput: Option<&mut [T]>,
) {
    let hw = g.out_hw();
    let mut dkernel = dkernel;
    let mut dinput = dinput;
    if let Some(db) = dbias {
        for (o, dbo) in db.iter_mut().enumerate().take(g.out_ch) {
            let mut acc = 0.0f64;
            for b in 0..g.batch {
                let off = (b * g.out_ch + o) * hw;
                acc += grad_out[off..off + hw].iter().map(|v| v.as_f64()).sum::<f64>();
            }
            *dbo += T::from_f64(acc);
        }
    }
    let mut gperm = Vec::new();
    let mut dcols = Vec::new();
    for ((start, count), chunk_cols) in g.chunks().zip(cols) {
        let width = count * hw;
        gperm.clear();
        gperm.resize(g.out_ch * width, T::zero());
        for b in 0..count {
            for o in 0..g.out_ch {
                let src = ((start + b) * g.out_ch + o) * hw;
                let dst = o * width + b * hw;
                gperm[dst..dst + hw].copy_from_slice(&grad_out[src..src + hw]);
            }
        }
        if let Some(dk) = dkernel.as_deref_mut() {
            T::gemm(g.out_ch, width, g.patch(), &gperm, false, chunk_cols, true, T::one(), dk);
        }
        if let Some(di) = dinput.as_deref_mut() {
            dcols.clear();
            dcols.resize(g.patch() * width, T::zero());
            T::gemm(g.patch(), g.out_ch, width, kernel, true, &gperm, false, T::zero(), &mut dcols);
            col2im(g, &dcols, start, count, di);
        }
    }
}

/// 2x2 max pooling with stride 2. Returns values and flat argmax indices
/// (first maximum in scan order).
pub(crate) fn maxpool2x2<T: Real>(input: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Numerically stable logistic function, clamped so the result stays strictly
/// inside (0, 1) even where the exact value rounds to an endpoint.
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let hi = T::one() - T::epsilon() / (T::one() + T::one());
    s.max(T::min_positive_value()).min(hi)
}

/// Row-wise softmax over the trailing extent, max-subtracted, summed in f64.
pub fn softmax_rows<T: Real>(data: &[T], cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(cols) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v)).as_f64();
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| T::from_f64(e / total)));
    }
    out
}

/// `ln Σ exp(row)` per row, in f64.
pub(crate) fn logsumexp_rows<T: Real>(data: &[T], cols: usize) -> Vec<f64> {
    data.chunks(cols)
        .map(|row| {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln()
        })
        .collect()
}
