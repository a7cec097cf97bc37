// Raw slice kernels shared by the forward and backward passes.

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `da[m×k] += dc[m×n] · bᵀ`
pub(crate) fn matmul_grad_lhs(dc: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let s: f64 = drow.iter().zip(brow).map(|(x, y)| x * y).sum();
            da[i * k + p] += s;
        }
    }
}

/// `db[k×n] += aᵀ · dc[m×n]`
pub(crate) fn matmul_grad_rhs(a: &[f64], dc: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (d, g) in dbrow.iter_mut().zip(drow) {
                *d += av * g;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len_in: usize,
    pub width: usize,
    pub padding: usize,
    pub len_out: usize,
}

impl ConvDims {
    // Valid output positions j for tap t: 0 <= j + t - padding < len_in.
    fn span(&self, t: usize) -> (usize, usize) {
        let lo = self.padding.saturating_sub(t);
        let hi = (self.len_in + self.padding)
            .saturating_sub(t)
            .min(self.len_out);
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv1d_forward(x: &[f64], k: &[f64], out: &mut [f64], d: ConvDims) {
    for b in 0..d.batch {
        for o in 0..d.c_out {
            let orow = &mut out[(b * d.c_out + o) * d.len_out..][..d.len_out];
            for c in 0..d.c_in {
                let xrow = &x[(b * d.c_in + c) * d.len_in..][..d.len_in];
                for t in 0..d.width {
                    let w = k[(o * d.c_in + c) * d.width + t];
                    let (lo, hi) = d.span(t);
                    for j in lo..hi {
                        orow[j] += w * xrow[j + t - d.padding];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv1d_backward(
    x: &[f64],
    k: &[f64],
    g: &[f64],
    dx: Option<&mut [f64]>,
    dk: Option<&mut [f64]>,
    d: ConvDims,
) {
    if let Some(dx) = dx {
        for b in 0..d.batch {
            for o in 0..d.c_out {
                let grow = &g[(b * d.c_out + o) * d.len_out..][..d.len_out];
                for c in 0..d.c_in {
                    let dxrow = &mut dx[(b * d.c_in + c) * d.len_in..][..d.len_in];
                    for t in 0..d.width {
                        let w = k[(o * d.c_in + c) * d.width + t];
                        let (lo, hi) = d.span(t);
                        for j in lo..hi {
                            dxrow[j + t - d.padding] += w * grow[j];
                        }
                    }
                }
            }
        }
    }
    if let Some(dk) = dk {
        for b in 0..d.batch {
            for o in 0..d.c_out {
                let grow = &g[(b * d.c_out + o) * d.len_out..][..d.len_out];
                for c in 0..d.c_in {
                    let xrow = &x[(b * d.c_in + c) * d.len_in..][..d.len_in];
                    for t in 0..d.width {
                        let (lo, hi) = d.span(t);
                        let mut s = 0.0;
                        for j in lo..hi {
                            s += grow[j] * xrow[j + t - d.padding];
                        }
                        dk[(o * d.c_in + c) * d.width + t] += s;
                    }
                }
            }
        }
    }
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gathers `src` (shape `shape`) into the axis order `axes`.
pub(crate) fn permute(src: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mapped: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..src.len() {
        let off: usize = idx.iter().zip(&mapped).map(|(i, s)| i * s).sum();
        out.push(src[off]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// Scaled dot-product attention for one (batch, head) slice.
/// Returns the output rows and stores the softmax weights in `probs`.
pub(crate) fn attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &mut [f64],
    out: &mut [f64],
    t: usize,
    d: usize,
) {
    let scale = 1.0 / (d as f64).sqrt();
    for i in 0..t {
        let qi = &q[i * d..(i + 1) * d];
        let row = &mut probs[i * t..(i + 1) * t];
        for j in 0..t {
            let kj = &k[j * d..(j + 1) * d];
            row[j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            z += *r;
        }
        for r in row.iter_mut() {
            *r /= z;
        }
        let orow = &mut out[i * d..(i + 1) * d];
        for j in 0..t {
            let p = row[j];
            for (o, vv) in orow.iter_mut().zip(&v[j * d..(j + 1) * d]) {
                *o += p * vv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    g: &[f64],
    dq: &mut [f64],
    dk: &mut [f64],
    dv: &mut [f64],
    t: usize,
    d: usize,
) {
    let scale = 1.0 / (d as f64).sqrt();
    let mut dp = vec![0.0; t];
    let mut ds = vec![0.0; t];
    for i in 0..t {
        let gi = &g[i * d..(i + 1) * d];
        let pi = &probs[i * t..(i + 1) * t];
        for j in 0..t {
            let vj = &v[j * d..(j + 1) * d];
            dp[j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
            for (dvv, gg) in dv[j * d..(j + 1) * d].iter_mut().zip(gi) {
                *dvv += pi[j] * gg;
            }
        }
        let dot: f64 = dp.iter().zip(pi).map(|(a, b)| a * b).sum();
        for j in 0..t {
            ds[j] = pi[j] * (dp[j] - dot) * scale;
        }
        let qi = &q[i * d..(i + 1) * d];
        for j in 0..t {
            let s = ds[j];
            if s == 0.0 {
                continue;
            }
            let kj = &k[j * d..(j + 1) * d];
            for (dqq, kk) in dq[i * d..(i + 1) * d].iter_mut().zip(kj) {
                *dqq += s * kk;
            }
            for (dkk, qq) in dk[j * d..(j + 1) * d].iter_mut().zip(qi) {
                *dkk += s * qq;
            }
        }
    }
}
