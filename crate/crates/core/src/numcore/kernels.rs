//! Raw slice kernels behind the differentiable ops.
//!
//! Every kernel accumulates each output element in a fixed order so results
//! are reproducible bit-for-bit across runs.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }
}

/// Zero-pads every `H×W` plane of an `N×C×H×W` buffer.
fn pad_planes(x: &[f64], planes: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    if pad == 0 {
        return x.to_vec();
    }
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; planes * hp * wp];
    for p in 0..planes {
        for r in 0..h {
            let src = &x[(p * h + r) * w..(p * h + r + 1) * w];
            let dst = (p * hp + r + pad) * wp + pad;
            out[dst..dst + w].copy_from_slice(src);
        }
    }
    out
}

fn crop_planes(xp: &[f64], planes: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    if pad == 0 {
        return xp.to_vec();
    }
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        for r in 0..h {
            let src = (p * hp + r + pad) * wp + pad;
            out[(p * h + r) * w..(p * h + r + 1) * w].copy_from_slice(&xp[src..src + w]);
        }
    }
    out
}

/// Unfolds one sample into a `(cin·k·k) × (oh·ow)` patch matrix, rows in
/// `(ci, kh, kw)` order.
fn im2col(xs: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let (oh, ow, k, s, pad) = (g.out_h(), g.out_w(), g.k, g.stride, g.pad as isize);
    let (h, w) = (g.h as isize, g.w as isize);
    for ci in 0..g.cin {
        let plane = &xs[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..k {
            for kw in 0..k {
                let row = &mut col[((ci * k + kh) * k + kw) * oh * ow..((ci * k + kh) * k + kw + 1) * oh * ow];
                for r in 0..oh {
                    let y = (r * s + kh) as isize - pad;
                    let dst = &mut row[r * ow..(r + 1) * ow];
                    if y < 0 || y >= h {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[y as usize * g.w..(y as usize + 1) * g.w];
                    for (c, d) in dst.iter_mut().enumerate() {
                        let x = (c * s + kw) as isize - pad;
                        *d = if x < 0 || x >= w { 0.0 } else { src[x as usize] };
                    }
                }
            }
        }
    }
}

/// Folds a patch-matrix gradient back onto one sample's input planes.
fn col2im(col: &[f64], g: &ConvGeom, gx: &mut [f64]) {
    let (oh, ow, k, s, pad) = (g.out_h(), g.out_w(), g.k, g.stride, g.pad as isize);
    let (h, w) = (g.h as isize, g.w as isize);
    for ci in 0..g.cin {
        let plane = &mut gx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..k {
            for kw in 0..k {
                let row = &col[((ci * k + kh) * k + kw) * oh * ow..((ci * k + kh) * k + kw + 1) * oh * ow];
                for r in 0..oh {
                    let y = (r * s + kh) as isize - pad;
                    if y < 0 || y >= h {
                        continue;
                    }
                    let dst = &mut plane[y as usize * g.w..(y as usize + 1) * g.w];
                    for (c, &v) in row[r * ow..(r + 1) * ow].iter().enumerate() {
                        let x = (c * s + kw) as isize - pad;
                        if x >= 0 && x < w {
                            dst[x as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation. Per output element the sum runs bias first, then
/// `(ci, kh, kw)` in lexicographic order.
pub fn conv2d_forward(x: &[f64], kernel: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.out_h() * g.out_w();
    let q = g.cin * g.k * g.k;
    let mut col = vec![0.0; q * p];
    let mut out = vec![0.0; g.n * g.cout * p];
    for n in 0..g.n {
        im2col(&x[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w], g, &mut col);
        let block = &mut out[n * g.cout * p..(n + 1) * g.cout * p];
        for (co, b) in bias.iter().enumerate() {
            block[co * p..(co + 1) * p].fill(*b);
        }
        gemm_acc(&kernel[..g.cout * q], &col, block, g.cout, q, p);
    }
    out
}

/// `out[m×p] += a[m×q] · b[q×p]`, each output summed over `q` in order.
/// Rows are processed four at a time so every `b` row is loaded once per block.
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, q: usize, p: usize) {
    let mut rows = out.chunks_exact_mut(p);
    let mut i = 0;
    while i + 4 <= m {
        let (r0, r1, r2, r3) = (
            rows.next().expect("row"),
            rows.next().expect("row"),
            rows.next().expect("row"),
            rows.next().expect("row"),
        );
        for qi in 0..q {
            let (w0, w1, w2, w3) = (a[i * q + qi], a[(i + 1) * q + qi], a[(i + 2) * q + qi], a[(i + 3) * q + qi]);
            let brow = &b[qi * p..(qi + 1) * p];
            for j in 0..p {
                let c = brow[j];
                r0[j] += w0 * c;
                r1[j] += w1 * c;
                r2[j] += w2 * c;
                r3[j] += w3 * c;
            }
        }
        i += 4;
    }
    for row in rows {
        for qi in 0..q {
            let wv = a[i * q + qi];
            for (o, &c) in row.iter_mut().zip(&b[qi * p..(qi + 1) * p]) {
                *o += wv * c;
            }
        }
        i += 1;
    }
}

/// Gradient of `conv2d_forward` with respect to its input.
pub fn conv2d_grad_input(grad_out: &[f64], kernel: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.out_h() * g.out_w();
    let q = g.cin * g.k * g.k;
    let plane = g.cin * g.h * g.w;
    let mut gx = vec![0.0; g.n * plane];
    let mut gcol = vec![0.0; q * p];
    let mut kernel_t = vec![0.0; q * g.cout];
    for co in 0..g.cout {
        for qi in 0..q {
            kernel_t[qi * g.cout + co] = kernel[co * q + qi];
        }
    }
    for n in 0..g.n {
        gcol.fill(0.0);
        gemm_acc(&kernel_t, &grad_out[n * g.cout * p..(n + 1) * g.cout * p], &mut gcol, q, g.cout, p);
        col2im(&gcol, g, &mut gx[n * plane..(n + 1) * plane]);
    }
    gx
}

/// Dot product with four interleaved partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            lanes[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// Gradients of `conv2d_forward` with respect to kernel and bias.
pub fn conv2d_grad_params(grad_out: &[f64], x: &[f64], g: &ConvGeom) -> (Vec<f64>, Vec<f64>) {
    let p = g.out_h() * g.out_w();
    let q = g.cin * g.k * g.k;
    let mut col = vec![0.0; q * p];
    let mut gk = vec![0.0; g.cout * q];
    let mut gb = vec![0.0; g.cout];
    for n in 0..g.n {
        im2col(&x[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w], g, &mut col);
        for co in 0..g.cout {
            let grow = &grad_out[(n * g.cout + co) * p..(n * g.cout + co + 1) * p];
            gb[co] += grow.iter().sum::<f64>();
            for (qi, acc) in gk[co * q..(co + 1) * q].iter_mut().enumerate() {
                *acc += dot(grow, &col[qi * p..(qi + 1) * p]);
            }
        }
    }
    (gk, gb)
}

/// Per-sample depthwise cross-correlation, stride one: channel `c` of sample
/// `n` is filtered only by `kernels[n, c]`.
pub fn depthwise_forward(
    x: &[f64],
    kernels: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
) -> Vec<f64> {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let (oh, ow) = (hp - k + 1, wp - k + 1);
    let xp = pad_planes(x, n * c, h, w, pad);
    let mut out = vec![0.0; n * c * oh * ow];
    for p in 0..n * c {
        let xin = &xp[p * hp * wp..(p + 1) * hp * wp];
        let kk = &kernels[p * k * k..(p + 1) * k * k];
        let plane = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for kh in 0..k {
            for kw in 0..k {
                let wv = kk[kh * k + kw];
                for r in 0..oh {
                    let row = &xin[(r + kh) * wp + kw..(r + kh) * wp + kw + ow];
                    for (o, &xv) in plane[r * ow..(r + 1) * ow].iter_mut().zip(row) {
                        *o += wv * xv;
                    }
                }
            }
        }
    }
    out
}

/// Gradients of `depthwise_forward` with respect to input and kernels.
#[allow(clippy::too_many_arguments)]
pub fn depthwise_backward(
    grad_out: &[f64],
    x: &[f64],
    kernels: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let (oh, ow) = (hp - k + 1, wp - k + 1);
    let xp = pad_planes(x, n * c, h, w, pad);
    let mut gxp = vec![0.0; n * c * hp * wp];
    let mut gk = vec![0.0; n * c * k * k];
    for p in 0..n * c {
        let xin = &xp[p * hp * wp..(p + 1) * hp * wp];
        let gin = &mut gxp[p * hp * wp..(p + 1) * hp * wp];
        let kk = &kernels[p * k * k..(p + 1) * k * k];
        let gplane = &grad_out[p * oh * ow..(p + 1) * oh * ow];
        for kh in 0..k {
            for kw in 0..k {
                let wv = kk[kh * k + kw];
                let mut acc = 0.0;
                for r in 0..oh {
                    let grow = &gplane[r * ow..(r + 1) * ow];
                    let base = (r + kh) * wp + kw;
                    for (i, &gv) in grow.iter().enumerate() {
                        acc += gv * xin[base + i];
                        gin[base + i] += wv * gv;
                    }
                }
                gk[p * k * k + kh * k + kw] = acc;
            }
        }
    }
    (crop_planes(&gxp, n * c, h, w, pad), gk)
}

/// Instance normalization over each of `planes` contiguous blocks of `hw`
/// values. Returns the normalized values and the per-plane inverse std.
pub fn instance_norm_forward(x: &[f64], planes: usize, hw: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; planes];
    for p in 0..planes {
        let seg = &x[p * hw..(p + 1) * hw];
        let mean = seg.iter().sum::<f64>() / hw as f64;
        let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std[p] = inv;
        for (o, &v) in y[p * hw..(p + 1) * hw].iter_mut().zip(seg) {
            *o = (v - mean) * inv;
        }
    }
    (y, inv_std)
}

pub fn instance_norm_backward(grad_out: &[f64], y: &[f64], inv_std: &[f64], hw: usize) -> Vec<f64> {
    let mut gx = vec![0.0; y.len()];
    for (p, &inv) in inv_std.iter().enumerate() {
        let gs = &grad_out[p * hw..(p + 1) * hw];
        let ys = &y[p * hw..(p + 1) * hw];
        let mean_g = gs.iter().sum::<f64>() / hw as f64;
        let mean_gy = gs.iter().zip(ys).map(|(g, y)| g * y).sum::<f64>() / hw as f64;
        for ((o, &g), &yv) in gx[p * hw..(p + 1) * hw].iter_mut().zip(gs).zip(ys) {
            *o = inv * (g - mean_g - yv * mean_gy);
        }
    }
    gx
}

/// `out[n] = x[n] · x[n]ᵀ / hw` for each `c×hw` sample matrix.
pub fn gram_forward(x: &[f64], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c * c];
    let scale = 1.0 / hw as f64;
    for s in 0..n {
        let xs = &x[s * c * hw..(s + 1) * c * hw];
        let os = &mut out[s * c * c..(s + 1) * c * c];
        for i in 0..c {
            let ri = &xs[i * hw..(i + 1) * hw];
            for j in i..c {
                let rj = &xs[j * hw..(j + 1) * hw];
                let v = ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>() * scale;
                os[i * c + j] = v;
                os[j * c + i] = v;
            }
        }
    }
    out
}

pub fn gram_backward(grad_out: &[f64], x: &[f64], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut gx = vec![0.0; x.len()];
    let scale = 1.0 / hw as f64;
    for s in 0..n {
        let xs = &x[s * c * hw..(s + 1) * c * hw];
        let gs = &grad_out[s * c * c..(s + 1) * c * c];
        let gxs = &mut gx[s * c * hw..(s + 1) * c * hw];
        for i in 0..c {
            for j in 0..c {
                let coef = (gs[i * c + j] + gs[j * c + i]) * scale;
                if coef == 0.0 {
                    continue;
                }
                let rj = &xs[j * hw..(j + 1) * hw];
                for (o, &v) in gxs[i * hw..(i + 1) * hw].iter_mut().zip(rj) {
                    *o += coef * v;
                }
            }
        }
    }
    gx
}

/// `a[m×k] · b[k×n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[m×k] · b[n×k]ᵀ`.
pub fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = ar.iter().zip(&b[j * k..(j + 1) * k]).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[k×m]ᵀ · b[k×n]`.
pub fn matmul_at(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], kern: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut out = vec![0.0; g.n * g.cout * oh * ow];
        for n in 0..g.n {
            for co in 0..g.cout {
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = bias[co];
                        for ci in 0..g.cin {
                            for kh in 0..g.k {
                                for kw in 0..g.k {
                                    let ih = (r * g.stride + kh) as isize - g.pad as isize;
                                    let iw = (c * g.stride + kw) as isize - g.pad as isize;
                                    let xv = if ih < 0 || iw < 0 || ih >= g.h as isize || iw >= g.w as isize {
                                        0.0
                                    } else {
                                        x[((n * g.cin + ci) * g.h + ih as usize) * g.w + iw as usize]
                                    };
                                    acc += xv * kern[((co * g.cin + ci) * g.k + kh) * g.k + kw];
                                }
                            }
                        }
                        out[((n * g.cout + co) * oh + r) * ow + c] = acc;
                    }
                }
            }
        }
        out
    }

    fn lcg(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn conv_matches_naive_loops_exactly() {
        for (seed, &(h, w, k, s, p)) in [(3, 3, 3, 1, 0), (4, 4, 3, 2, 1), (8, 5, 3, 1, 1), (7, 8, 1, 1, 0), (8, 8, 3, 2, 1), (6, 7, 5, 1, 2)]
            .iter()
            .enumerate()
        {
            let g = ConvGeom { n: 2, cin: 3, h, w, cout: 2, k, stride: s, pad: p };
            let x = lcg(seed as u64, g.n * g.cin * h * w);
            let kern = lcg(100 + seed as u64, g.cout * g.cin * k * k);
            let bias = lcg(200 + seed as u64, g.cout);
            assert_eq!(conv2d_forward(&x, &kern, &bias, &g), naive_conv(&x, &kern, &bias, &g));
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x), g> is linear in x and in the kernel, so the adjoint identity
        // checks both gradients without finite differences.
        let g = ConvGeom { n: 2, cin: 2, h: 5, w: 6, cout: 3, k: 3, stride: 2, pad: 1 };
        let x = lcg(1, g.n * g.cin * g.h * g.w);
        let kern = lcg(2, g.cout * g.cin * 9);
        let zero_bias = vec![0.0; g.cout];
        let go = lcg(3, g.n * g.cout * g.out_h() * g.out_w());
        let y = conv2d_forward(&x, &kern, &zero_bias, &g);
        let lhs: f64 = y.iter().zip(&go).map(|(a, b)| a * b).sum();
        let gx = conv2d_grad_input(&go, &kern, &g);
        let (gk, gb) = conv2d_grad_params(&go, &x, &g);
        let via_x: f64 = gx.iter().zip(&x).map(|(a, b)| a * b).sum();
        let via_k: f64 = gk.iter().zip(&kern).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-12);
        assert!((lhs - via_k).abs() < 1e-12);
        let total: f64 = go.iter().sum();
        assert!((gb.iter().sum::<f64>() - total).abs() < 1e-12);
    }

    #[test]
    fn depthwise_matches_grouped_conv() {
        let (n, c, h, w) = (2, 3, 5, 4);
        let x = lcg(9, n * c * h * w);
        let kern = lcg(10, n * c * 9);
        let out = depthwise_forward(&x, &kern, n, c, h, w, 3, 1);
        for s in 0..n {
            for ch in 0..c {
                let g = ConvGeom { n: 1, cin: 1, h, w, cout: 1, k: 3, stride: 1, pad: 1 };
                let plane = &x[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
                let kk = &kern[(s * c + ch) * 9..(s * c + ch + 1) * 9];
                let expect = conv2d_forward(plane, kk, &[0.0], &g);
                assert_eq!(&out[(s * c + ch) * h * w..(s * c + ch + 1) * h * w], &expect[..]);
            }
        }
    }

    #[test]
    fn matmul_variants_agree() {
        let a = lcg(4, 6);
        let b = lcg(5, 12);
        let ab = matmul(&a, &b, 2, 3, 4);
        let mut bt = vec![0.0; 12];
        for i in 0..3 {
            for j in 0..4 {
                bt[j * 3 + i] = b[i * 4 + j];
            }
        }
        let mut at = vec![0.0; 6];
        for i in 0..2 {
            for j in 0..3 {
                at[j * 2 + i] = a[i * 3 + j];
            }
        }
        for (x, y) in ab.iter().zip(matmul_bt(&a, &bt, 2, 3, 4)) {
            assert!((x - y).abs() < 1e-15);
        }
        for (x, y) in ab.iter().zip(matmul_at(&at, &b, 3, 2, 4)) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}
