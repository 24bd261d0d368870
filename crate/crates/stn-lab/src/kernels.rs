//! Re-entrant math kernels behind the graph operations.
//!
//! Everything here is a pure function over its inputs: no RNG, no
//! global state, deterministic accumulation order. Convolution and the
//! fully connected layer are written as im2col plus an accumulating
//! matrix product whose inner loop is a saxpy, which the compiler
//! vectorizes without reassociating reductions.

use crate::real::Real;
use crate::warp::BoundaryPolicy;

/// c[m x n] += a[m x kd] * b[kd x n]
pub fn matmul_acc<T: Real>(c: &mut [T], a: &[T], b: &[T], m: usize, kd: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * kd);
    debug_assert_eq!(b.len(), kd * n);
    for (a_row, c_row) in a.chunks_exact(kd).zip(c.chunks_exact_mut(n)) {
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::ZERO {
                continue; // post-ReLU activations are ~half zeros
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv += a_ip * bv;
            }
        }
    }
}

/// dst[j, i] = src[i, j] for src of rows x cols.
pub fn transpose<T: Real>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

pub fn conv_out_dim(input: usize, kernel: usize) -> usize {
    input - kernel + 1
}

/// Unfolds one CHW sample into a [c*kh*kw x oh*ow] patch matrix.
pub fn im2col<T: Real>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    col: &mut [T],
) {
    let oh = conv_out_dim(h, kh);
    let ow = conv_out_dim(w, kw);
    let positions = oh * ow;
    debug_assert_eq!(col.len(), c * kh * kw * positions);
    let mut k_idx = 0;
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let dst = &mut col[k_idx * positions..(k_idx + 1) * positions];
                for oi in 0..oh {
                    let row = (oi + ki) * w + kj;
                    dst[oi * ow..oi * ow + ow].copy_from_slice(&plane[row..row + ow]);
                }
                k_idx += 1;
            }
        }
    }
}

/// Scatter-adds a patch-matrix gradient back onto the CHW sample.
pub fn col2im_acc<T: Real>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    grad_input: &mut [T],
) {
    let oh = conv_out_dim(h, kh);
    let ow = conv_out_dim(w, kw);
    let positions = oh * ow;
    let mut k_idx = 0;
    for ci in 0..c {
        let plane = &mut grad_input[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let src = &col[k_idx * positions..(k_idx + 1) * positions];
                for oi in 0..oh {
                    let row = (oi + ki) * w + kj;
                    for (dst, &v) in plane[row..row + ow].iter_mut().zip(&src[oi * ow..oi * ow + ow]) {
                        *dst += v;
                    }
                }
                k_idx += 1;
            }
        }
    }
}

/// Valid convolution, stride 1. input NCHW, kernel O x C x KH x KW,
/// bias O. Output N x O x (H-KH+1) x (W-KW+1).
pub fn conv2d_forward<T: Real>(
    input: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kernel: &[T],
    o: usize,
    kh: usize,
    kw: usize,
    bias: &[T],
    out: &mut [T],
) {
    let oh = conv_out_dim(h, kh);
    let ow = conv_out_dim(w, kw);
    let positions = oh * ow;
    let k_len = c * kh * kw;
    let mut col = vec![T::ZERO; k_len * positions];
    for ni in 0..n {
        im2col(&input[ni * c * h * w..(ni + 1) * c * h * w], c, h, w, kh, kw, &mut col);
        let out_n = &mut out[ni * o * positions..(ni + 1) * o * positions];
        for (oi, out_row) in out_n.chunks_exact_mut(positions).enumerate() {
            out_row.iter_mut().for_each(|v| *v = bias[oi]);
        }
        matmul_acc(out_n, kernel, &col, o, k_len, positions);
    }
}

/// Accumulates conv gradients. `grad_out` is N x O x OH x OW; the three
/// grad buffers are added into (callers zero them per backward pass).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    input: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kernel: &[T],
    o: usize,
    kh: usize,
    kw: usize,
    grad_out: &[T],
    grad_input: Option<&mut [T]>,
    grad_kernel: &mut [T],
    grad_bias: &mut [T],
) {
    let oh = conv_out_dim(h, kh);
    let ow = conv_out_dim(w, kw);
    let positions = oh * ow;
    let k_len = c * kh * kw;
    let mut col = vec![T::ZERO; k_len * positions];
    let mut col_t = vec![T::ZERO; k_len * positions];
    let mut kernel_t = vec![T::ZERO; o * k_len];
    transpose(kernel, o, k_len, &mut kernel_t);
    let mut grad_col = vec![T::ZERO; k_len * positions];
    let mut grad_input = grad_input;

    for ni in 0..n {
        let sample = &input[ni * c * h * w..(ni + 1) * c * h * w];
        let g_out = &grad_out[ni * o * positions..(ni + 1) * o * positions];

        im2col(sample, c, h, w, kh, kw, &mut col);
        transpose(&col, k_len, positions, &mut col_t);
        matmul_acc(grad_kernel, g_out, &col_t, o, positions, k_len);

        for (oi, g_row) in g_out.chunks_exact(positions).enumerate() {
            let mut s = T::ZERO;
            for &g in g_row {
                s += g;
            }
            grad_bias[oi] += s;
        }

        if let Some(gi) = grad_input.as_deref_mut() {
            grad_col.iter_mut().for_each(|v| *v = T::ZERO);
            matmul_acc(&mut grad_col, &kernel_t, g_out, k_len, o, positions);
            col2im_acc(
                &grad_col,
                c,
                h,
                w,
                kh,
                kw,
                &mut gi[ni * c * h * w..(ni + 1) * c * h * w],
            );
        }
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns dropped.
/// Ties go to the first element in row-major window order. Returns the
/// flat input index of each selected element for backward routing.
pub fn maxpool2x2_forward<T: Real>(
    input: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    out: &mut [T],
    argmax: &mut [u32],
) {
    let oh = h / 2;
    let ow = w / 2;
    let mut oidx = 0;
    for ni in 0..n {
        for ci in 0..c {
            let plane_base = (ni * c + ci) * h * w;
            for oi in 0..oh {
                for oj in 0..ow {
                    let base = plane_base + (2 * oi) * w + 2 * oj;
                    let mut best = input[base];
                    let mut best_at = base;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let at = base + di * w + dj;
                        if input[at] > best {
                            best = input[at];
                            best_at = at;
                        }
                    }
                    out[oidx] = best;
                    argmax[oidx] = best_at as u32;
                    oidx += 1;
                }
            }
        }
    }
}

pub fn maxpool2x2_backward<T: Real>(grad_out: &[T], argmax: &[u32], grad_input: &mut [T]) {
    for (&g, &at) in grad_out.iter().zip(argmax.iter()) {
        grad_input[at as usize] += g;
    }
}

/// 2x2 average pooling with stride 2 (the fixed downsample in front of
/// the scale-variant localization network). Odd trailing dims dropped.
pub fn avgpool2x2_forward<T: Real>(input: &[T], n: usize, c: usize, h: usize, w: usize, out: &mut [T]) {
    let oh = h / 2;
    let ow = w / 2;
    let quarter = T::from_f64(0.25);
    let mut oidx = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oi in 0..oh {
            let r0 = base + 2 * oi * w;
            let r1 = r0 + w;
            for oj in 0..ow {
                let j = 2 * oj;
                out[oidx] = (input[r0 + j] + input[r0 + j + 1] + input[r1 + j] + input[r1 + j + 1]) * quarter;
                oidx += 1;
            }
        }
    }
}

pub fn avgpool2x2_backward<T: Real>(grad_out: &[T], n: usize, c: usize, h: usize, w: usize, grad_input: &mut [T]) {
    let oh = h / 2;
    let ow = w / 2;
    let quarter = T::from_f64(0.25);
    let mut oidx = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oi in 0..oh {
            let r0 = base + 2 * oi * w;
            let r1 = r0 + w;
            for oj in 0..ow {
                let g = grad_out[oidx] * quarter;
                let j = 2 * oj;
                grad_input[r0 + j] += g;
                grad_input[r0 + j + 1] += g;
                grad_input[r1 + j] += g;
                grad_input[r1 + j + 1] += g;
                oidx += 1;
            }
        }
    }
}

/// out[n x m] = input[n x d] * weight[d x m] + bias[m]
pub fn fully_connected_forward<T: Real>(
    input: &[T],
    n: usize,
    d: usize,
    weight: &[T],
    m: usize,
    bias: &[T],
    out: &mut [T],
) {
    for row in out.chunks_exact_mut(m) {
        row.copy_from_slice(bias);
    }
    matmul_acc(out, input, weight, n, d, m);
}

#[allow(clippy::too_many_arguments)]
pub fn fully_connected_backward<T: Real>(
    input: &[T],
    n: usize,
    d: usize,
    weight: &[T],
    m: usize,
    grad_out: &[T],
    grad_input: Option<&mut [T]>,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) {
    // grad_weight[d x m] += input^T [d x n] * grad_out [n x m]
    for ni in 0..n {
        let g_row = &grad_out[ni * m..(ni + 1) * m];
        for di in 0..d {
            let x = input[ni * d + di];
            if x == T::ZERO {
                continue;
            }
            let w_row = &mut grad_weight[di * m..(di + 1) * m];
            for (gw, &g) in w_row.iter_mut().zip(g_row.iter()) {
                *gw += x * g;
            }
        }
    }
    for g_row in grad_out.chunks_exact(m) {
        for (gb, &g) in grad_bias.iter_mut().zip(g_row.iter()) {
            *gb += g;
        }
    }
    if let Some(gi) = grad_input {
        // grad_input[n x d] += grad_out [n x m] * weight^T [m x d]
        let mut weight_t = vec![T::ZERO; d * m];
        transpose(weight, d, m, &mut weight_t);
        matmul_acc(gi, grad_out, &weight_t, n, m, d);
    }
}

/// Mean cross-entropy of softmax(logits) against integer labels.
/// Stabilized by max subtraction. Also writes the softmax
/// probabilities, which backward reuses.
pub fn softmax_xent_forward<T: Real>(
    logits: &[T],
    n: usize,
    k: usize,
    labels: &[usize],
    probs: &mut [T],
) -> T {
    let mut total = T::ZERO;
    for (ni, row) in logits.chunks_exact(k).enumerate() {
        let mut m = row[0];
        for &v in row.iter() {
            m = m.maximum(v);
        }
        let mut z = T::ZERO;
        let p_row = &mut probs[ni * k..(ni + 1) * k];
        for (p, &v) in p_row.iter_mut().zip(row.iter()) {
            *p = (v - m).exp();
            z += *p;
        }
        let inv_z = T::ONE / z;
        p_row.iter_mut().for_each(|p| *p *= inv_z);
        total += z.ln() - (row[labels[ni]] - m);
    }
    total / T::from_f64(n as f64)
}

pub fn softmax_xent_backward<T: Real>(
    probs: &[T],
    n: usize,
    k: usize,
    labels: &[usize],
    grad_loss: T,
    grad_logits: &mut [T],
) {
    let scale = grad_loss / T::from_f64(n as f64);
    for ni in 0..n {
        for ki in 0..k {
            let idx = ni * k + ki;
            let indicator = if ki == labels[ni] { T::ONE } else { T::ZERO };
            grad_logits[idx] += (probs[idx] - indicator) * scale;
        }
    }
}

/// Base (untransformed) normalized coordinate of output index `i` along
/// an axis of length `len`: edge pixels sit exactly at -1 and +1, a
/// single-pixel axis sits at 0.
#[inline]
pub fn base_coord<T: Real>(i: usize, len: usize) -> T {
    if len <= 1 {
        T::ZERO
    } else {
        T::from_f64(-1.0 + 2.0 * i as f64 / (len - 1) as f64)
    }
}

/// Maps matrix rows [a11 a12 a13 a21 a22 a23] (one per sample) over the
/// base grid: grid[n,i,j] = (a11*x + a12*y + a13, a21*x + a22*y + a23).
pub fn affine_grid_forward<T: Real>(params: &[T], n: usize, oh: usize, ow: usize, grid: &mut [T]) {
    for ni in 0..n {
        let m = &params[ni * 6..(ni + 1) * 6];
        let mut g = ni * oh * ow * 2;
        for i in 0..oh {
            let yb = base_coord::<T>(i, oh);
            for j in 0..ow {
                let xb = base_coord::<T>(j, ow);
                grid[g] = m[0] * xb + m[1] * yb + m[2];
                grid[g + 1] = m[3] * xb + m[4] * yb + m[5];
                g += 2;
            }
        }
    }
}

pub fn affine_grid_backward<T: Real>(
    grad_grid: &[T],
    n: usize,
    oh: usize,
    ow: usize,
    grad_params: &mut [T],
) {
    for ni in 0..n {
        let gp = &mut grad_params[ni * 6..(ni + 1) * 6];
        let mut g = ni * oh * ow * 2;
        for i in 0..oh {
            let yb = base_coord::<T>(i, oh);
            for j in 0..ow {
                let xb = base_coord::<T>(j, ow);
                let gx = grad_grid[g];
                let gy = grad_grid[g + 1];
                gp[0] += gx * xb;
                gp[1] += gx * yb;
                gp[2] += gx;
                gp[3] += gy * xb;
                gp[4] += gy * yb;
                gp[5] += gy;
                g += 2;
            }
        }
    }
}

/// Snaps a source coordinate onto the pixel lattice when it is within
/// a few rounding errors of an integer. Normalized-to-pixel coordinate
/// conversion cannot be exact for general image widths; without the
/// snap, an identity transform would blend neighbouring pixels with
/// weight ~1e-16 instead of copying. Deterministic: the threshold
/// scales with the coordinate span and the value type's epsilon.
#[inline]
fn snap_lattice<T: Real>(v: T, span: T) -> T {
    let half = T::from_f64(0.5);
    let r = (v + half).floor();
    if (v - r).abs() <= span * T::EPSILON * T::from_f64(8.0) {
        r
    } else {
        v
    }
}

#[inline]
fn fetch<T: Real>(plane: &[T], h: isize, w: isize, y: isize, x: isize, policy: BoundaryPolicy) -> T {
    match policy {
        BoundaryPolicy::ClampNearest => {
            let yc = y.clamp(0, h - 1);
            let xc = x.clamp(0, w - 1);
            plane[(yc * w + xc) as usize]
        }
        BoundaryPolicy::ZeroFill => {
            if y < 0 || y >= h || x < 0 || x >= w {
                T::ZERO
            } else {
                plane[(y * w + x) as usize]
            }
        }
    }
}

/// Bilinear resampling of NCHW input at the normalized grid locations.
/// Under `ClampNearest` the source coordinates are clamped to the image
/// rectangle before blending; under `ZeroFill` out-of-range pixels read
/// as zero. Exactly integral source coordinates degenerate to a copy.
#[allow(clippy::too_many_arguments)]
pub fn bilinear_sample_forward<T: Real>(
    input: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    grid: &[T],
    oh: usize,
    ow: usize,
    policy: BoundaryPolicy,
    out: &mut [T],
) {
    let half = T::from_f64(0.5);
    let sx_span = T::from_f64((w - 1) as f64);
    let sy_span = T::from_f64((h - 1) as f64);
    let (hi, wi) = (h as isize, w as isize);
    for ni in 0..n {
        let g_base = ni * oh * ow * 2;
        for p in 0..oh * ow {
            let mut sx = (grid[g_base + 2 * p] + T::ONE) * half * sx_span;
            let mut sy = (grid[g_base + 2 * p + 1] + T::ONE) * half * sy_span;
            if policy == BoundaryPolicy::ClampNearest {
                sx = sx.maximum(T::ZERO).minimum(sx_span);
                sy = sy.maximum(T::ZERO).minimum(sy_span);
            }
            sx = snap_lattice(sx, sx_span);
            sy = snap_lattice(sy, sy_span);
            let x0f = sx.floor();
            let y0f = sy.floor();
            let fx = sx - x0f;
            let fy = sy - y0f;
            let x0 = x0f.to_f64() as isize;
            let y0 = y0f.to_f64() as isize;
            let w00 = (T::ONE - fx) * (T::ONE - fy);
            let w01 = fx * (T::ONE - fy);
            let w10 = (T::ONE - fx) * fy;
            let w11 = fx * fy;
            for ci in 0..c {
                let plane = &input[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                let v00 = fetch(plane, hi, wi, y0, x0, policy);
                let v01 = fetch(plane, hi, wi, y0, x0 + 1, policy);
                let v10 = fetch(plane, hi, wi, y0 + 1, x0, policy);
                let v11 = fetch(plane, hi, wi, y0 + 1, x0 + 1, policy);
                out[(ni * c + ci) * oh * ow + p] = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11;
            }
        }
    }
}

#[inline]
fn scatter<T: Real>(
    plane: &mut [T],
    h: isize,
    w: isize,
    y: isize,
    x: isize,
    v: T,
    policy: BoundaryPolicy,
) {
    match policy {
        BoundaryPolicy::ClampNearest => {
            let yc = y.clamp(0, h - 1);
            let xc = x.clamp(0, w - 1);
            plane[(yc * w + xc) as usize] += v;
        }
        BoundaryPolicy::ZeroFill => {
            if y >= 0 && y < h && x >= 0 && x < w {
                plane[(y * w + x) as usize] += v;
            }
        }
    }
}

/// Backward of bilinear sampling. Gradients at exactly integral source
/// coordinates use the sub-cell to the right/below (the cell the
/// floor-based blend already lives in); coordinates saturated by the
/// clamp get zero positional gradient.
#[allow(clippy::too_many_arguments)]
pub fn bilinear_sample_backward<T: Real>(
    input: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    grid: &[T],
    oh: usize,
    ow: usize,
    policy: BoundaryPolicy,
    grad_out: &[T],
    grad_input: Option<&mut [T]>,
    grad_grid: &mut [T],
) {
    let half = T::from_f64(0.5);
    let sx_span = T::from_f64((w - 1) as f64);
    let sy_span = T::from_f64((h - 1) as f64);
    let (hi, wi) = (h as isize, w as isize);
    let mut grad_input = grad_input;
    for ni in 0..n {
        let g_base = ni * oh * ow * 2;
        for p in 0..oh * ow {
            let raw_sx = (grid[g_base + 2 * p] + T::ONE) * half * sx_span;
            let raw_sy = (grid[g_base + 2 * p + 1] + T::ONE) * half * sy_span;
            let (sx, sy, x_sat, y_sat) = if policy == BoundaryPolicy::ClampNearest {
                let sx = raw_sx.maximum(T::ZERO).minimum(sx_span);
                let sy = raw_sy.maximum(T::ZERO).minimum(sy_span);
                (sx, sy, raw_sx < T::ZERO || raw_sx > sx_span, raw_sy < T::ZERO || raw_sy > sy_span)
            } else {
                (raw_sx, raw_sy, false, false)
            };
            let sx = snap_lattice(sx, sx_span);
            let sy = snap_lattice(sy, sy_span);
            let x0f = sx.floor();
            let y0f = sy.floor();
            let fx = sx - x0f;
            let fy = sy - y0f;
            let x0 = x0f.to_f64() as isize;
            let y0 = y0f.to_f64() as isize;
            let mut dsx = T::ZERO;
            let mut dsy = T::ZERO;
            for ci in 0..c {
                let plane_idx = (ni * c + ci) * h * w;
                let plane = &input[plane_idx..plane_idx + h * w];
                let g = grad_out[(ni * c + ci) * oh * ow + p];
                if g == T::ZERO {
                    continue;
                }
                let v00 = fetch(plane, hi, wi, y0, x0, policy);
                let v01 = fetch(plane, hi, wi, y0, x0 + 1, policy);
                let v10 = fetch(plane, hi, wi, y0 + 1, x0, policy);
                let v11 = fetch(plane, hi, wi, y0 + 1, x0 + 1, policy);
                dsx += g * ((T::ONE - fy) * (v01 - v00) + fy * (v11 - v10));
                dsy += g * ((T::ONE - fx) * (v10 - v00) + fx * (v11 - v01));
                if let Some(gi) = grad_input.as_deref_mut() {
                    let gplane = &mut gi[plane_idx..plane_idx + h * w];
                    scatter(gplane, hi, wi, y0, x0, g * (T::ONE - fx) * (T::ONE - fy), policy);
                    scatter(gplane, hi, wi, y0, x0 + 1, g * fx * (T::ONE - fy), policy);
                    scatter(gplane, hi, wi, y0 + 1, x0, g * (T::ONE - fx) * fy, policy);
                    scatter(gplane, hi, wi, y0 + 1, x0 + 1, g * fx * fy, policy);
                }
            }
            if x_sat {
                dsx = T::ZERO;
            }
            if y_sat {
                dsy = T::ZERO;
            }
            grad_grid[g_base + 2 * p] += dsx * half * sx_span;
            grad_grid[g_base + 2 * p + 1] += dsy * half * sy_span;
        }
    }
}

/// Homogeneous 2x3 product per sample: out = a . b, both given as rows
/// [a11 a12 a13 a21 a22 a23].
pub fn compose_params_forward<T: Real>(a: &[T], b: &[T], n: usize, out: &mut [T]) {
    for ni in 0..n {
        let a = &a[ni * 6..(ni + 1) * 6];
        let b = &b[ni * 6..(ni + 1) * 6];
        let o = &mut out[ni * 6..(ni + 1) * 6];
        o[0] = a[0] * b[0] + a[1] * b[3];
        o[1] = a[0] * b[1] + a[1] * b[4];
        o[2] = a[0] * b[2] + a[1] * b[5] + a[2];
        o[3] = a[3] * b[0] + a[4] * b[3];
        o[4] = a[3] * b[1] + a[4] * b[4];
        o[5] = a[3] * b[2] + a[4] * b[5] + a[5];
    }
}

pub fn compose_params_backward<T: Real>(
    a: &[T],
    b: &[T],
    n: usize,
    grad_out: &[T],
    grad_a: &mut [T],
    grad_b: &mut [T],
) {
    for ni in 0..n {
        let a = &a[ni * 6..(ni + 1) * 6];
        let b = &b[ni * 6..(ni + 1) * 6];
        let g = &grad_out[ni * 6..(ni + 1) * 6];
        let ga = &mut grad_a[ni * 6..(ni + 1) * 6];
        ga[0] += g[0] * b[0] + g[1] * b[1] + g[2] * b[2];
        ga[1] += g[0] * b[3] + g[1] * b[4] + g[2] * b[5];
        ga[2] += g[2];
        ga[3] += g[3] * b[0] + g[4] * b[1] + g[5] * b[2];
        ga[4] += g[3] * b[3] + g[4] * b[4] + g[5] * b[5];
        ga[5] += g[5];
        let gb = &mut grad_b[ni * 6..(ni + 1) * 6];
        gb[0] += g[0] * a[0] + g[3] * a[3];
        gb[1] += g[1] * a[0] + g[4] * a[3];
        gb[2] += g[2] * a[0] + g[5] * a[3];
        gb[3] += g[0] * a[1] + g[3] * a[4];
        gb[4] += g[1] * a[1] + g[4] * a[4];
        gb[5] += g[2] * a[1] + g[5] * a[4];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    /// Direct quadruple-loop convolution, the independent oracle.
    fn conv_oracle(
        input: &[f64],
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        kernel: &[f64],
        o: usize,
        kh: usize,
        kw: usize,
        bias: &[f64],
    ) -> Vec<f64> {
        let oh = h - kh + 1;
        let ow = w - kw + 1;
        let mut out = vec![0.0; n * o * oh * ow];
        for ni in 0..n {
            for oi in 0..o {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = bias[oi];
                        for ci in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    acc += input[((ni * c + ci) * h + y + ky) * w + x + kx]
                                        * kernel[((oi * c + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((ni * o + oi) * oh + y) * ow + x] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_all_ones_sums_window() {
        let input = vec![1.0f64; 9];
        let kernel = vec![1.0f64; 9];
        let mut out = vec![0.0f64; 1];
        conv2d_forward(&input, 1, 1, 3, 3, &kernel, 1, 3, 3, &[0.0], &mut out);
        assert_eq!(out[0], 9.0);
    }

    #[test]
    fn conv_matches_direct_oracle() {
        let mut rng = StreamRng::new(5);
        for case in 0..6 {
            let (c, o, h, w, kh, kw) = match case % 3 {
                0 => (1, 1, 5, 5, 3, 3),
                1 => (2, 3, 8, 7, 3, 2),
                _ => (3, 2, 6, 8, 4, 3),
            };
            let n = 2;
            let input: Vec<f64> = (0..n * c * h * w).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let kernel: Vec<f64> = (0..o * c * kh * kw).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let bias: Vec<f64> = (0..o).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let oh = h - kh + 1;
            let ow = w - kw + 1;
            let mut out = vec![0.0; n * o * oh * ow];
            conv2d_forward(&input, n, c, h, w, &kernel, o, kh, kw, &bias, &mut out);
            let want = conv_oracle(&input, n, c, h, w, &kernel, o, kh, kw, &bias);
            for (a, b) in out.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12, "conv mismatch {a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_output_dim_28_9_is_20() {
        assert_eq!(conv_out_dim(28, 9), 20);
        let input = vec![0.5f64; 28 * 28];
        let kernel = vec![0.1f64; 81];
        let mut out = vec![0.0f64; 20 * 20];
        conv2d_forward(&input, 1, 1, 28, 28, &kernel, 1, 9, 9, &[0.0], &mut out);
        assert!((out[0] - 0.5 * 0.1 * 81.0).abs() < 1e-12);
    }

    #[test]
    fn maxpool_matches_windowed_max_oracle() {
        let mut rng = StreamRng::new(9);
        let (n, c, h, w) = (2, 2, 6, 6);
        let input: Vec<f64> = (0..n * c * h * w).map(|_| rng.uniform(-5.0, 5.0)).collect();
        let mut out = vec![0.0; n * c * 9];
        let mut argmax = vec![0u32; n * c * 9];
        maxpool2x2_forward(&input, n, c, h, w, &mut out, &mut argmax);
        let mut oidx = 0;
        for plane in 0..n * c {
            for oi in 0..3 {
                for oj in 0..3 {
                    let mut m = f64::NEG_INFINITY;
                    for di in 0..2 {
                        for dj in 0..2 {
                            m = m.max(input[plane * 36 + (2 * oi + di) * 6 + 2 * oj + dj]);
                        }
                    }
                    assert_eq!(out[oidx], m);
                    oidx += 1;
                }
            }
        }
    }

    #[test]
    fn maxpool_simple_and_tie_break() {
        let input = vec![1.0f64, 2.0, 3.0, 4.0];
        let mut out = vec![0.0];
        let mut argmax = vec![0u32];
        maxpool2x2_forward(&input, 1, 1, 2, 2, &mut out, &mut argmax);
        assert_eq!(out[0], 4.0);

        // all-equal window: gradient routed to the first element
        let input = vec![7.0f64; 4];
        maxpool2x2_forward(&input, 1, 1, 2, 2, &mut out, &mut argmax);
        assert_eq!(argmax[0], 0);
        let mut grad_in = vec![0.0f64; 4];
        maxpool2x2_backward(&[1.0], &argmax, &mut grad_in);
        assert_eq!(grad_in, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_drops_odd_edges() {
        let input: Vec<f64> = (0..5 * 5).map(|i| i as f64).collect();
        let mut out = vec![0.0; 4];
        let mut argmax = vec![0u32; 4];
        maxpool2x2_forward(&input, 1, 1, 5, 5, &mut out, &mut argmax);
        assert_eq!(out, vec![6.0, 8.0, 16.0, 18.0]);
    }

    #[test]
    fn fc_matches_triple_loop_oracle() {
        let mut rng = StreamRng::new(2);
        let (n, d, m) = (3, 7, 4);
        let input: Vec<f64> = (0..n * d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let weight: Vec<f64> = (0..d * m).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let bias: Vec<f64> = (0..m).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut out = vec![0.0; n * m];
        fully_connected_forward(&input, n, d, &weight, m, &bias, &mut out);
        for ni in 0..n {
            for mi in 0..m {
                let mut want = bias[mi];
                for di in 0..d {
                    want += input[ni * d + di] * weight[di * m + mi];
                }
                assert!((out[ni * m + mi] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fc_identity_passthrough() {
        let input = vec![1.0f64, 2.0];
        let weight = vec![1.0, 0.0, 0.0, 1.0];
        let mut out = vec![0.0; 2];
        fully_connected_forward(&input, 1, 2, &weight, 2, &[3.0, 3.0], &mut out);
        assert_eq!(out, vec![4.0, 5.0]);
    }

    #[test]
    fn softmax_xent_uniform_and_saturated() {
        let logits = vec![0.25f64; 10];
        let mut probs = vec![0.0; 10];
        let loss = softmax_xent_forward(&logits, 1, 10, &[3], &mut probs);
        assert!((loss - 10f64.ln()).abs() < 1e-12, "uniform loss {loss}");

        let mut logits = vec![0.0f64; 10];
        logits[3] = 1000.0;
        let loss = softmax_xent_forward(&logits, 1, 10, &[3], &mut probs);
        assert!(loss.abs() < 1e-9, "saturated loss {loss}");
        assert!(loss.is_finite());
    }

    #[test]
    fn softmax_xent_matches_direct_formula() {
        let mut rng = StreamRng::new(17);
        let (n, k) = (3, 4);
        let logits: Vec<f64> = (0..n * k).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let labels = [2usize, 0, 3];
        let mut probs = vec![0.0; n * k];
        let loss = softmax_xent_forward(&logits, n, k, &labels, &mut probs);
        let mut want = 0.0;
        for ni in 0..n {
            let row = &logits[ni * k..(ni + 1) * k];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            want += -(row[labels[ni]].exp() / z).ln();
        }
        want /= n as f64;
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn bilinear_midpoint_blends() {
        // Two pixels 0 and 2; sampling the midpoint must give 1.
        let input = vec![0.0f64, 2.0];
        let grid = vec![0.0f64, 0.0]; // center of a 1x2 image: x normalized 0 -> sx 0.5
        let mut out = vec![0.0f64];
        bilinear_sample_forward(&input, 1, 1, 1, 2, &grid, 1, 1, BoundaryPolicy::ClampNearest, &mut out);
        assert_eq!(out[0], 1.0);
    }

    #[test]
    fn bilinear_identity_grid_is_exact_copy() {
        let mut rng = StreamRng::new(8);
        let (h, w) = (5, 4);
        let input: Vec<f64> = (0..h * w).map(|_| rng.uniform(0.0, 1.0)).collect();
        let mut grid = vec![0.0; h * w * 2];
        affine_grid_forward(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 1, h, w, &mut grid);
        for policy in [BoundaryPolicy::ClampNearest, BoundaryPolicy::ZeroFill] {
            let mut out = vec![0.0; h * w];
            bilinear_sample_forward(&input, 1, 1, h, w, &grid, h, w, policy, &mut out);
            assert_eq!(out, input, "identity warp must be bit-exact under {policy:?}");
        }
    }

    #[test]
    fn affine_grid_identity_3x3() {
        let mut grid = vec![0.0f64; 9 * 2];
        affine_grid_forward(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 1, 3, 3, &mut grid);
        let xs: Vec<f64> = grid.iter().step_by(2).copied().collect();
        let ys: Vec<f64> = grid.iter().skip(1).step_by(2).copied().collect();
        assert_eq!(xs, vec![-1.0, 0.0, 1.0, -1.0, 0.0, 1.0, -1.0, 0.0, 1.0]);
        assert_eq!(ys, vec![-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn affine_grid_2x2_corners_at_unit() {
        let mut grid = vec![0.0f64; 4 * 2];
        affine_grid_forward(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 1, 2, 2, &mut grid);
        assert_eq!(grid, vec![-1.0, -1.0, 1.0, -1.0, -1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn compose_params_is_matrix_product() {
        // translate(1,0) . translate(0,1) = translate(1,1)
        let a = [1.0f64, 0.0, 1.0, 0.0, 1.0, 0.0];
        let b = [1.0f64, 0.0, 0.0, 0.0, 1.0, 1.0];
        let mut out = [0.0f64; 6];
        compose_params_forward(&a, &b, 1, &mut out);
        assert_eq!(out, [1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
    }
}
