//! Raw f32 kernels behind the taped ops. Everything here works on flat
//! row-major slices; shape validation happens in the tape layer.

/// `c = beta * c + a · b` with optional transposition of the stored operands.
///
/// `a` is `m × k` (stored `k × m` when `ta`), `b` is `k × n` (stored `n × k`
/// when `tb`), `c` is `m × n` row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    ta: bool,
    b: &[f32],
    tb: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slice lengths were checked above against the strides used.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn cg(&self) -> usize {
        self.c / self.groups
    }
    fn og(&self) -> usize {
        self.o / self.groups
    }
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
    fn is_depthwise(&self) -> bool {
        self.groups == self.c && self.groups > 1
    }
}

fn im2col(g: &ConvGeom, img: &[f32], cols: &mut [f32]) {
    let cg = g.cg();
    let ohw = g.oh * g.ow;
    for ci in 0..cg {
        let plane = &img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let seg = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, cols: &[f32], img: &mut [f32]) {
    let cg = g.cg();
    let ohw = g.oh * g.ow;
    for ci in 0..cg {
        let plane = &mut img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Valid output index range `[lo, hi)` along one axis for kernel tap `k`.
fn tap_range(k: usize, pad: usize, stride: usize, len_in: usize, len_out: usize) -> (usize, usize) {
    // need 0 <= o*stride + k - pad < len_in
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if len_in + pad > k {
        ((len_in + pad - k - 1) / stride + 1).min(len_out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn depthwise_forward(g: &ConvGeom, input: &[f32], weight: &[f32], out: &mut [f32]) {
    let mult = g.og();
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    for n in 0..g.n {
        for oc in 0..g.o {
            let ic = oc / mult;
            let src = &input[(n * g.c + ic) * hw..(n * g.c + ic + 1) * hw];
            let dst = &mut out[(n * g.o + oc) * ohw..(n * g.o + oc + 1) * ohw];
            let w = &weight[oc * kk..(oc + 1) * kk];
            for ky in 0..g.kh {
                let (ylo, yhi) = tap_range(ky, g.pad, g.stride, g.h, g.oh);
                for kx in 0..g.kw {
                    let (xlo, xhi) = tap_range(kx, g.pad, g.stride, g.w, g.ow);
                    let wv = w[ky * g.kw + kx];
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky - g.pad;
                        let srow = &src[iy * g.w..];
                        let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                        for ox in xlo..xhi {
                            drow[ox] += wv * srow[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward(
    g: &ConvGeom,
    input: &[f32],
    weight: &[f32],
    dout: &[f32],
    dinput: Option<&mut [f32]>,
    dweight: Option<&mut [f32]>,
) {
    let mult = g.og();
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    let mut dinput = dinput;
    let mut dweight = dweight;
    for n in 0..g.n {
        for oc in 0..g.o {
            let ic = oc / mult;
            let src = &input[(n * g.c + ic) * hw..(n * g.c + ic + 1) * hw];
            let dy = &dout[(n * g.o + oc) * ohw..(n * g.o + oc + 1) * ohw];
            let w = &weight[oc * kk..(oc + 1) * kk];
            for ky in 0..g.kh {
                let (ylo, yhi) = tap_range(ky, g.pad, g.stride, g.h, g.oh);
                for kx in 0..g.kw {
                    let (xlo, xhi) = tap_range(kx, g.pad, g.stride, g.w, g.ow);
                    let wv = w[ky * g.kw + kx];
                    let mut acc = 0.0f32;
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky - g.pad;
                        let dyrow = &dy[oy * g.ow..(oy + 1) * g.ow];
                        let srow = &src[iy * g.w..(iy + 1) * g.w];
                        for ox in xlo..xhi {
                            acc += dyrow[ox] * srow[ox * g.stride + kx - g.pad];
                        }
                        if let Some(di) = dinput.as_deref_mut() {
                            let base = (n * g.c + ic) * hw + iy * g.w;
                            let dirow = &mut di[base..base + g.w];
                            for ox in xlo..xhi {
                                dirow[ox * g.stride + kx - g.pad] += wv * dyrow[ox];
                            }
                        }
                    }
                    if let Some(dw) = dweight.as_deref_mut() {
                        dw[oc * kk + ky * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
}

/// Grouped 2-D cross-correlation. `out` must be zeroed, shape `[n, o, oh, ow]`.
pub(crate) fn conv2d_forward(
    g: &ConvGeom,
    input: &[f32],
    weight: &[f32],
    bias: Option<&[f32]>,
    out: &mut [f32],
) {
    let ohw = g.oh * g.ow;
    if g.is_depthwise() {
        depthwise_forward(g, input, weight, out);
    } else {
        let (cg, og) = (g.cg(), g.og());
        let kdim = cg * g.kh * g.kw;
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; kdim * ohw]
        };
        for n in 0..g.n {
            for grp in 0..g.groups {
                let img = &input[(n * g.c + grp * cg) * g.h * g.w..];
                let b: &[f32] = if g.is_pointwise() {
                    &img[..kdim * ohw]
                } else {
                    im2col(g, img, &mut cols);
                    &cols
                };
                let w = &weight[grp * og * kdim..(grp + 1) * og * kdim];
                let dst = &mut out[(n * g.o + grp * og) * ohw..(n * g.o + (grp + 1) * og) * ohw];
                gemm(og, kdim, ohw, w, false, b, false, 0.0, dst);
            }
        }
    }
    if let Some(bias) = bias {
        for n in 0..g.n {
            for (oc, &bv) in bias.iter().enumerate() {
                for v in &mut out[(n * g.o + oc) * ohw..(n * g.o + oc + 1) * ohw] {
                    *v += bv;
                }
            }
        }
    }
}

/// Accumulates input, weight and bias gradients for a grouped convolution.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    input: &[f32],
    weight: &[f32],
    dout: &[f32],
    dinput: Option<&mut [f32]>,
    dweight: Option<&mut [f32]>,
    dbias: Option<&mut [f32]>,
) {
    let ohw = g.oh * g.ow;
    if let Some(db) = dbias {
        for n in 0..g.n {
            for (oc, d) in db.iter_mut().enumerate() {
                *d += dout[(n * g.o + oc) * ohw..(n * g.o + oc + 1) * ohw]
                    .iter()
                    .sum::<f32>();
            }
        }
    }
    if g.is_depthwise() {
        depthwise_backward(g, input, weight, dout, dinput, dweight);
        return;
    }
    let (cg, og) = (g.cg(), g.og());
    let kdim = cg * g.kh * g.kw;
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![0.0; kdim * ohw]
    };
    let mut dcols = if pointwise {
        Vec::new()
    } else {
        vec![0.0; kdim * ohw]
    };
    let mut dinput = dinput;
    let mut dweight = dweight;
    for n in 0..g.n {
        for grp in 0..g.groups {
            let img_off = (n * g.c + grp * cg) * g.h * g.w;
            let dy = &dout[(n * g.o + grp * og) * ohw..(n * g.o + (grp + 1) * og) * ohw];
            let w = &weight[grp * og * kdim..(grp + 1) * og * kdim];
            if let Some(dw) = dweight.as_deref_mut() {
                let b: &[f32] = if pointwise {
                    &input[img_off..img_off + kdim * ohw]
                } else {
                    im2col(g, &input[img_off..], &mut cols);
                    &cols
                };
                let dwg = &mut dw[grp * og * kdim..(grp + 1) * og * kdim];
                gemm(og, ohw, kdim, dy, false, b, true, 1.0, dwg);
            }
            if let Some(di) = dinput.as_deref_mut() {
                if pointwise {
                    let dst = &mut di[img_off..img_off + kdim * ohw];
                    gemm(kdim, og, ohw, w, true, dy, false, 1.0, dst);
                } else {
                    gemm(kdim, og, ohw, w, true, dy, false, 0.0, &mut dcols);
                    col2im_add(g, &dcols, &mut di[img_off..]);
                }
            }
        }
    }
}
