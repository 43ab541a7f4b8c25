//! Naive double-precision forwards used as oracles.

pub struct ConvArgs {
    pub x_shape: [usize; 4],
    pub w_shape: [usize; 4],
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvArgs {
    pub fn out_shape(&self) -> [usize; 4] {
        let [n, _, h, w] = self.x_shape;
        let [o, _, kh, kw] = self.w_shape;
        [
            n,
            o,
            (h + 2 * self.pad - kh) / self.stride + 1,
            (w + 2 * self.pad - kw) / self.stride + 1,
        ]
    }
}

pub fn conv2d(x: &[f64], w: &[f64], b: Option<&[f64]>, a: &ConvArgs) -> Vec<f64> {
    let [n, c, h, wd] = a.x_shape;
    let [o, cg, kh, kw] = a.w_shape;
    let [_, _, oh, ow] = a.out_shape();
    let og = o / a.groups;
    let mut out = vec![0.0; n * o * oh * ow];
    for bi in 0..n {
        for oc in 0..o {
            let g = oc / og;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut s = b.map_or(0.0, |b| b[oc]);
                    for ic in 0..cg {
                        let cin = g * cg + ic;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * a.stride + ky) as isize - a.pad as isize;
                                let ix = (xo * a.stride + kx) as isize - a.pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x[((bi * c + cin) * h + iy as usize) * wd + ix as usize];
                                s += xv * w[((oc * cg + ic) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((bi * o + oc) * oh + y) * ow + xo] = s;
                }
            }
        }
    }
    out
}

/// Batch normalization with batch statistics (biased variance).
pub fn batch_norm_train(x: &[f64], shape: &[usize], g: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
    let (n, c) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let idx = || (0..n).flat_map(move |bi| (0..inner).map(move |i| (bi * c + ch) * inner + i));
        let m = (n * inner) as f64;
        let mean = idx().map(|i| x[i]).sum::<f64>() / m;
        let var = idx().map(|i| (x[i] - mean).powi(2)).sum::<f64>() / m;
        for i in idx() {
            out[i] = g[ch] * (x[i] - mean) / (var + eps).sqrt() + b[ch];
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn batch_norm_eval(
    x: &[f64],
    shape: &[usize],
    g: &[f64],
    b: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Vec<f64> {
    let c = shape[1];
    let inner: usize = shape[2..].iter().product();
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = (i / inner) % c;
            g[ch] * (v - mean[ch]) / (var[ch] + eps).sqrt() + b[ch]
        })
        .collect()
}

pub fn linear(x: &[f64], n: usize, i: usize, w: &[f64], o: usize, b: Option<&[f64]>) -> Vec<f64> {
    let mut out = vec![0.0; n * o];
    for r in 0..n {
        for j in 0..o {
            let mut s = b.map_or(0.0, |b| b[j]);
            for k in 0..i {
                s += x[r * i + k] * w[k * o + j];
            }
            out[r * o + j] = s;
        }
    }
    out
}

pub fn global_avg_pool(x: &[f64], n: usize, c: usize, inner: usize) -> Vec<f64> {
    (0..n * c)
        .map(|r| x[r * inner..(r + 1) * inner].iter().sum::<f64>() / inner as f64)
        .collect()
}

pub fn softmax(x: &[f64], k: usize, tau: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(k) {
        let e: Vec<f64> = row.iter().map(|v| (v / tau).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

/// Batch-mean `λ·CE + (1−λ)·τ²·KL(teacher ‖ student)` written out directly.
pub fn kd_loss(zs: &[f64], zt: &[f64], k: usize, labels: &[usize], lambda: f64, tau: f64) -> f64 {
    let n = labels.len();
    let p1 = softmax(zs, k, 1.0);
    let ps = softmax(zs, k, tau);
    let pt = softmax(zt, k, tau);
    let mut total = 0.0;
    for r in 0..n {
        let ce = -p1[r * k + labels[r]].ln();
        let mut kl = 0.0;
        for j in 0..k {
            let (t, s) = (pt[r * k + j], ps[r * k + j]);
            kl += t * (t / s).ln();
        }
        total += lambda * ce + (1.0 - lambda) * tau * tau * kl;
    }
    total / n as f64
}

/// Direct time-domain convolution truncated to the signal length.
pub fn direct_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            (0..h.len().min(i + 1)).map(|k| h[k] * x[i - k]).sum::<f64>()
        })
        .collect()
}
