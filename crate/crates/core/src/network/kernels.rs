//! Raw numeric kernels on flat slices. Layouts are row-major: feature maps
//! are `(C, H, W)`, conv weights `(O, C, K, K)`, FC weights `(out, in)`.

use super::config::ConvSpec;

/// Geometry of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub spec: ConvSpec,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(spec: ConvSpec, in_h: usize, in_w: usize) -> Option<Self> {
        let (out_h, out_w) = spec.output_size(in_h, in_w)?;
        Some(Self {
            spec,
            in_h,
            in_w,
            out_h,
            out_w,
        })
    }

    fn patch_len(&self) -> usize {
        self.spec.in_channels * self.spec.kernel * self.spec.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds the padded input into a `(C·K·K, OH·OW)` column matrix.
pub fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let k = g.spec.kernel;
    let (s, p) = (g.spec.stride as isize, g.spec.padding as isize);
    let n = g.positions();
    let mut cols = vec![0.0; g.patch_len() * n];
    for c in 0..g.spec.in_channels {
        let plane = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = oy as isize * s + ky as isize - p;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = ox as isize * s + kx as isize - p;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[oy * g.out_w + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub fn col2im(cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let k = g.spec.kernel;
    let (s, p) = (g.spec.stride as isize, g.spec.padding as isize);
    let n = g.positions();
    let mut out = vec![0.0; g.spec.in_channels * g.in_h * g.in_w];
    for c in 0..g.spec.in_channels {
        let plane = &mut out[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = oy as isize * s + ky as isize - p;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = ox as isize * s + kx as isize - p;
                        if ix >= 0 && ix < g.in_w as isize {
                            plane[iy as usize * g.in_w + ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `c += a · b` with `a: (m, k)`, `b: (k, n)`, `c: (m, n)`.
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
}

/// `c += a · bᵀ` with `a: (m, k)`, `b: (n, k)`, `c: (m, n)`.
pub fn matmul_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c += aᵀ · b` with `a: (k, m)`, `b: (k, n)`, `c: (m, n)`.
pub fn matmul_at_acc(a: &[f64], b: &[f64], c: &mut [f64], k: usize, m: usize, n: usize) {
    for kk in 0..k {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * n..(kk + 1) * n];
        for (i, &aki) in arow.iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aki * bv;
            }
        }
    }
}

/// Forward convolution; returns the output and the column matrix for backward.
pub fn conv2d_forward(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    g: &ConvGeometry,
) -> (Vec<f64>, Vec<f64>) {
    let cols = im2col(input, g);
    let n = g.positions();
    let o = g.spec.out_channels;
    let mut out = vec![0.0; o * n];
    for (ch, b) in bias.iter().enumerate() {
        out[ch * n..(ch + 1) * n].fill(*b);
    }
    matmul_acc(weight, &cols, &mut out, o, g.patch_len(), n);
    (out, cols)
}

/// Gradients of a convolution: `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward(
    grad_out: &[f64],
    cols: &[f64],
    weight: &[f64],
    g: &ConvGeometry,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = g.positions();
    let o = g.spec.out_channels;
    let patch = g.patch_len();
    let d_bias = (0..o)
        .map(|ch| grad_out[ch * n..(ch + 1) * n].iter().sum())
        .collect();
    let mut d_weight = vec![0.0; o * patch];
    matmul_bt_acc(grad_out, cols, &mut d_weight, o, n, patch);
    let mut d_cols = vec![0.0; patch * n];
    matmul_at_acc(weight, grad_out, &mut d_cols, o, patch, n);
    (col2im(&d_cols, g), d_weight, d_bias)
}

/// `y = W x + b`.
pub fn linear_forward(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| {
            b + weight[o * n_in..(o + 1) * n_in]
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>()
        })
        .collect()
}

/// Gradients of `y = W x + b`: `(d_x, d_weight, d_bias)`.
pub fn linear_backward(
    grad_out: &[f64],
    x: &[f64],
    weight: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n_in = x.len();
    let mut d_x = vec![0.0; n_in];
    let mut d_w = vec![0.0; grad_out.len() * n_in];
    for (o, &go) in grad_out.iter().enumerate() {
        if go == 0.0 {
            continue;
        }
        let wrow = &weight[o * n_in..(o + 1) * n_in];
        for (dx, w) in d_x.iter_mut().zip(wrow) {
            *dx += go * w;
        }
        for (dw, v) in d_w[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
            *dw = go * v;
        }
    }
    (d_x, d_w, grad_out.to_vec())
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}
