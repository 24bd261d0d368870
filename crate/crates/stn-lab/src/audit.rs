//! Numerical audits of feature-map alignment: can a purely spatial
//! transform of CNN feature maps reproduce the feature maps of the
//! untransformed image? Integer translations align exactly; rotations
//! and scalings do not, unless the filters themselves are rotation
//! invariant. Lattice-exact cases (integer shifts, multiples of 90
//! degrees) are computed by pure data movement so the zero residuals
//! are exact at 64-bit.

use crate::error::{Error, Result};
use crate::kernels;
use crate::rng::StreamRng;
use crate::tensor::Tensor;
use crate::warp::{warp_pixels, BoundaryPolicy, PixelMap};

/// An image transformation, acting about the image center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformGroupElement {
    /// Integer pixel shift (dx right, dy down).
    TranslationInt(i64, i64),
    /// Degrees.
    Rotation(f64),
    /// Uniform scale factor > 0.
    UniformScale(f64),
    /// Arbitrary invertible linear part.
    GeneralAffine([[f64; 2]; 2]),
}

impl TransformGroupElement {
    pub fn inverse(&self) -> Result<TransformGroupElement> {
        Ok(match *self {
            TransformGroupElement::TranslationInt(dx, dy) => {
                TransformGroupElement::TranslationInt(-dx, -dy)
            }
            TransformGroupElement::Rotation(deg) => TransformGroupElement::Rotation(-deg),
            TransformGroupElement::UniformScale(s) => {
                if s <= 0.0 {
                    return Err(Error::Data(format!("scale {s} must be positive")));
                }
                TransformGroupElement::UniformScale(1.0 / s)
            }
            TransformGroupElement::GeneralAffine(m) => {
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                if det.abs() < 1e-12 {
                    return Err(Error::SingularMatrix { det });
                }
                TransformGroupElement::GeneralAffine([
                    [m[1][1] / det, -m[0][1] / det],
                    [-m[1][0] / det, m[0][0] / det],
                ])
            }
        })
    }

    /// Linear part (identity for translations).
    pub fn linear(&self) -> [[f64; 2]; 2] {
        match *self {
            TransformGroupElement::TranslationInt(..) => [[1.0, 0.0], [0.0, 1.0]],
            TransformGroupElement::Rotation(deg) => {
                let (s, c) = deg.to_radians().sin_cos();
                [[c, -s], [s, c]]
            }
            TransformGroupElement::UniformScale(f) => [[f, 0.0], [0.0, f]],
            TransformGroupElement::GeneralAffine(m) => m,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            TransformGroupElement::TranslationInt(..) => "translation",
            TransformGroupElement::Rotation(_) => "rotation",
            TransformGroupElement::UniformScale(_) => "scale",
            TransformGroupElement::GeneralAffine(_) => "affine",
        }
    }

    pub fn magnitude(&self) -> f64 {
        match *self {
            TransformGroupElement::TranslationInt(dx, dy) => {
                ((dx * dx + dy * dy) as f64).sqrt()
            }
            TransformGroupElement::Rotation(deg) => deg,
            TransformGroupElement::UniformScale(s) => s,
            TransformGroupElement::GeneralAffine(m) => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        }
    }

}

fn shift_plane(src: &[f64], h: usize, w: usize, dx: i64, dy: i64, dst: &mut [f64]) {
    for i in 0..h as i64 {
        for j in 0..w as i64 {
            let (si, sj) = (i - dy, j - dx);
            dst[(i * w as i64 + j) as usize] =
                if si >= 0 && si < h as i64 && sj >= 0 && sj < w as i64 {
                    src[(si * w as i64 + sj) as usize]
                } else {
                    0.0
                };
        }
    }
}

/// Lattice rotation by a multiple of 90 degrees (square planes only):
/// pure data movement, no arithmetic.
fn rotate_lattice(src: &[f64], n: usize, quarter_turns: i64, dst: &mut [f64]) {
    let q = quarter_turns.rem_euclid(4);
    for i in 0..n {
        for j in 0..n {
            let (si, sj) = match q {
                0 => (i, j),
                1 => (n - 1 - j, i),
                2 => (n - 1 - i, n - 1 - j),
                _ => (j, n - 1 - i),
            };
            dst[i * n + j] = src[si * n + sj];
        }
    }
}

fn lattice_quarter_turns(deg: f64) -> Option<i64> {
    let q = deg / 90.0;
    if (q - q.round()).abs() < 1e-12 {
        Some(q.round() as i64)
    } else {
        None
    }
}

/// Applies a group element to every channel of a C x H x W tensor,
/// with translations scaled down by `stride` (feature-map cells cover
/// `stride` input pixels). Lattice cases move data exactly; everything
/// else goes through the bilinear sampler with zero fill.
pub fn apply_element(input: &Tensor<f64>, elem: &TransformGroupElement, stride: usize) -> Result<Tensor<f64>> {
    let (c, h, w) = match input.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::shape(format!("expected C x H x W, got {s:?}"))),
    };
    let mut out = Tensor::zeros(vec![c, h, w]);
    match *elem {
        TransformGroupElement::TranslationInt(dx, dy) => {
            if dx % stride as i64 != 0 || dy % stride as i64 != 0 {
                return Err(Error::Data(format!(
                    "translation ({dx}, {dy}) is not commensurate with stride {stride}"
                )));
            }
            let (fx, fy) = (dx / stride as i64, dy / stride as i64);
            for ci in 0..c {
                shift_plane(
                    &input.values()[ci * h * w..(ci + 1) * h * w],
                    h,
                    w,
                    fx,
                    fy,
                    &mut out.values_mut()[ci * h * w..(ci + 1) * h * w],
                );
            }
            return Ok(out);
        }
        TransformGroupElement::Rotation(deg) if h == w => {
            if let Some(q) = lattice_quarter_turns(deg) {
                for ci in 0..c {
                    rotate_lattice(
                        &input.values()[ci * h * w..(ci + 1) * h * w],
                        h,
                        q,
                        &mut out.values_mut()[ci * h * w..(ci + 1) * h * w],
                    );
                }
                return Ok(out);
            }
        }
        _ => {}
    }
    // general path: out(x) = in(L^-1 (x - c)) + c, bilinear
    let inv = elem.inverse()?.linear();
    let (cx, cy) = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
    let map = PixelMap([
        [inv[0][0], inv[0][1], cx - inv[0][0] * cx - inv[0][1] * cy],
        [inv[1][0], inv[1][1], cy - inv[1][0] * cx - inv[1][1] * cy],
    ]);
    for ci in 0..c {
        let plane = Tensor::new(vec![1, h, w], input.values()[ci * h * w..(ci + 1) * h * w].to_vec())?;
        let warped = warp_pixels(&plane, h, w, &map, BoundaryPolicy::ZeroFill)?;
        out.values_mut()[ci * h * w..(ci + 1) * h * w].copy_from_slice(warped.values());
    }
    Ok(out)
}

enum AuditLayer {
    /// O x C x K x K filter bank, optional bias.
    Conv(Tensor<f64>),
    Relu,
}

/// A fixed-weight translation-covariant feature extractor with a known
/// receptive field.
pub struct FeatureExtractor {
    layers: Vec<AuditLayer>,
    pub channels: usize,
    /// Receptive field side length in input pixels.
    pub support: usize,
    /// Cumulative stride (1 for the conv-only stacks used here).
    pub stride: usize,
    pub name: String,
}

impl FeatureExtractor {
    /// Random conv stack: `depth` conv layers of `kernel` x `kernel`
    /// filters with ReLU in between (not after the last, keeping the
    /// output sign-rich).
    pub fn random(seed: u64, channels: usize, depth: usize, kernel: usize) -> Self {
        let mut rng = StreamRng::new(seed).split(0xA0D1);
        let mut layers = Vec::new();
        let mut c_in = 1;
        for d in 0..depth {
            let fan = c_in * kernel * kernel;
            let bound = (2.0 / fan as f64).sqrt();
            let k = Tensor::from_fn(vec![channels, c_in, kernel, kernel], |_| rng.uniform(-bound, bound));
            layers.push(AuditLayer::Conv(k));
            if d + 1 < depth {
                layers.push(AuditLayer::Relu);
            }
            c_in = channels;
        }
        FeatureExtractor {
            layers,
            channels,
            support: depth * (kernel - 1) + 1,
            stride: 1,
            name: format!("random-{seed}"),
        }
    }

    /// Two point-reflected integer filters (a "W" and its 180-degree
    /// rotation, an "M"): a single linear layer, so rotating the image
    /// by 180 degrees swaps the channel responses exactly.
    pub fn mirrored_pair() -> Self {
        const W: [[i8; 5]; 5] = [
            [1, 0, 0, 0, 1],
            [1, 0, 0, 0, 1],
            [1, 0, 1, 0, 1],
            [1, 1, 0, 1, 1],
            [0, 0, 0, 0, 0],
        ];
        let mut k = Tensor::zeros(vec![2, 1, 5, 5]);
        for i in 0..5 {
            for j in 0..5 {
                let v = if W[i][j] == 1 { 1.0 } else { -1.0 };
                k.values_mut()[i * 5 + j] = v;
                // point reflection
                k.values_mut()[25 + (4 - i) * 5 + (4 - j)] = v;
            }
        }
        FeatureExtractor {
            layers: vec![AuditLayer::Conv(k)],
            channels: 2,
            support: 5,
            stride: 1,
            name: "mirrored-pair".into(),
        }
    }

    /// Rotation-invariant filters: sampled Gaussians, one channel per
    /// sigma. Each filter equals its own 90/180-degree rotation
    /// exactly (the sampled values are symmetric by construction).
    pub fn isotropic(sigmas: &[f64], kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "isotropic kernel must be odd");
        let c = (kernel / 2) as f64;
        let mut k = Tensor::zeros(vec![sigmas.len(), 1, kernel, kernel]);
        for (ci, &sigma) in sigmas.iter().enumerate() {
            let mut sum = 0.0;
            for i in 0..kernel {
                for j in 0..kernel {
                    let r2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
                    let v = (-r2 / (2.0 * sigma * sigma)).exp();
                    k.values_mut()[ci * kernel * kernel + i * kernel + j] = v;
                    sum += v;
                }
            }
            for v in &mut k.values_mut()[ci * kernel * kernel..(ci + 1) * kernel * kernel] {
                *v /= sum;
            }
        }
        FeatureExtractor {
            layers: vec![AuditLayer::Conv(k)],
            channels: sigmas.len(),
            support: kernel,
            stride: 1,
            name: "isotropic".into(),
        }
    }

    /// 1 x H x W image in, C x H' x W' features out.
    pub fn forward(&self, image: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (mut c, mut h, mut w) = match image.shape() {
            [c, h, w] => (*c, *h, *w),
            s => return Err(Error::shape(format!("expected C x H x W image, got {s:?}"))),
        };
        let mut cur = image.values().to_vec();
        for layer in &self.layers {
            match layer {
                AuditLayer::Conv(k) => {
                    let (o, kc, kh, kw) = k.dims4()?;
                    if kc != c {
                        return Err(Error::shape(format!("extractor expects {kc} channels, image has {c}")));
                    }
                    let (oh, ow) = (kernels::conv_out_dim(h, kh), kernels::conv_out_dim(w, kw));
                    let mut next = vec![0.0f64; o * oh * ow];
                    let bias = vec![0.0f64; o];
                    kernels::conv2d_forward(&cur, 1, c, h, w, k.values(), o, kh, kw, &bias, &mut next);
                    cur = next;
                    c = o;
                    h = oh;
                    w = ow;
                }
                AuditLayer::Relu => {
                    for v in cur.iter_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![c, h, w], cur)
    }

    /// Checks the point-reflection relation filter2(x) = filter1(-x).
    pub fn is_mirrored_pair_exact(&self) -> bool {
        let AuditLayer::Conv(k) = &self.layers[0] else { return false };
        if k.shape() != [2, 1, 5, 5] {
            return false;
        }
        let v = k.values();
        for i in 0..5 {
            for j in 0..5 {
                if v[i * 5 + j] != v[25 + (4 - i) * 5 + (4 - j)] {
                    return false;
                }
            }
        }
        true
    }
}

/// Result of one alignment experiment.
#[derive(Debug, Clone)]
pub struct AuditReport {
    /// Normalized interior mean absolute difference, channel c vs c.
    pub residual_same_channel: f64,
    /// Same metric under the best channel permutation (or the explicit
    /// one, when given).
    pub residual_best_permutation: f64,
    pub best_permutation: Vec<usize>,
    /// Interior margin in feature cells.
    pub margin: usize,
    /// Full pairwise table: entry [orig][aligned] is the normalized
    /// residual of aligned channel `aligned` against original `orig`.
    pub per_channel: Vec<Vec<f64>>,
}

fn best_assignment(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    if n <= 8 {
        // exhaustive search over permutations
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best_perm = perm.clone();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p| {
            let total: f64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            if total < best {
                best = total;
                best_perm = p.to_vec();
            }
        });
        (best_perm, best / n as f64)
    } else {
        // greedy matching: repeatedly take the globally cheapest pair
        let mut used_row = vec![false; n];
        let mut used_col = vec![false; n];
        let mut perm = vec![0usize; n];
        let mut total = 0.0;
        for _ in 0..n {
            let mut best = (0, 0, f64::INFINITY);
            for (i, row) in cost.iter().enumerate() {
                if used_row[i] {
                    continue;
                }
                for (j, &v) in row.iter().enumerate() {
                    if !used_col[j] && v < best.2 {
                        best = (i, j, v);
                    }
                }
            }
            used_row[best.0] = true;
            used_col[best.1] = true;
            perm[best.0] = best.1;
            total += best.2;
        }
        (perm, total / n as f64)
    }
}

fn permute(perm: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        f(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, f);
        perm.swap(k, i);
    }
}

/// Core alignment measurement with an explicit aligning transform
/// (what `necessity_check` sweeps over). `alignment_residual` passes
/// the inverse of the image transform here.
pub fn alignment_residual_with(
    extractor: &FeatureExtractor,
    image: &Tensor<f64>,
    h: &TransformGroupElement,
    align_with: &TransformGroupElement,
    permutation: Option<&[usize]>,
) -> Result<AuditReport> {
    let feats_orig = extractor.forward(image)?;
    let transformed = apply_element(image, h, 1)?;
    let feats_t = extractor.forward(&transformed)?;
    let aligned = apply_element(&feats_t, align_with, extractor.stride)?;

    let (c, fh, fw) = match feats_orig.shape() {
        [c, h, w] => (*c, *h, *w),
        _ => unreachable!(),
    };

    // Interior margin: an aligned cell y is trustworthy when y, the
    // cell it was moved from (T_a^-1 y) and that cell's sampling
    // source (T_h^-1 T_a^-1 y) all stay inside the canvas with
    // receptive-field-plus-2 slack. For a centered box the constraint
    // is linear in the box half-width via the worst corner growth
    // factor of those maps.
    let rf_radius = ((extractor.support - 1) / 2).div_ceil(extractor.stride);
    let slack = (rf_radius + 2) as f64;
    let a_inv = align_with.inverse()?.linear();
    let h_inv = h.inverse()?.linear();
    let ha = [
        [
            h_inv[0][0] * a_inv[0][0] + h_inv[0][1] * a_inv[1][0],
            h_inv[0][0] * a_inv[0][1] + h_inv[0][1] * a_inv[1][1],
        ],
        [
            h_inv[1][0] * a_inv[0][0] + h_inv[1][1] * a_inv[1][0],
            h_inv[1][0] * a_inv[0][1] + h_inv[1][1] * a_inv[1][1],
        ],
    ];
    let mut factor = 1.0f64;
    for (ux, uy) in [(1.0, 1.0), (1.0, -1.0)] {
        for m in [&a_inv, &ha] {
            let x: f64 = m[0][0] * ux + m[0][1] * uy;
            let y: f64 = m[1][0] * ux + m[1][1] * uy;
            factor = factor.max(x.abs().max(y.abs()));
        }
    }
    let shift = |e: &TransformGroupElement| match *e {
        TransformGroupElement::TranslationInt(dx, dy) => {
            (dx.abs().max(dy.abs()) as f64) / extractor.stride as f64
        }
        _ => 0.0,
    };
    let t_inf = shift(h) + shift(align_with);
    let half = ((fw - 1) as f64 / 2.0).min((fh - 1) as f64 / 2.0);
    let box_half = (half - slack - t_inf) / factor;
    let margin = (half - box_half).ceil() as usize;
    if box_half < 2.0 || 2 * margin >= fh.min(fw) {
        return Err(Error::Data(format!(
            "empty interior: margin {margin} eats the {fh}x{fw} feature map"
        )));
    }

    // normalizer: mean |orig| over the interior, all channels
    let mut norm = 0.0;
    let mut count = 0usize;
    for ci in 0..c {
        for i in margin..fh - margin {
            for j in margin..fw - margin {
                norm += feats_orig.values()[(ci * fh + i) * fw + j].abs();
                count += 1;
            }
        }
    }
    let norm = norm / count as f64;
    if norm == 0.0 {
        return Err(Error::Data("zero feature activity on the interior".into()));
    }

    let resid = |orig_c: usize, aligned_c: usize| -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in margin..fh - margin {
            for j in margin..fw - margin {
                let a = feats_orig.values()[(orig_c * fh + i) * fw + j];
                let b = aligned.values()[(aligned_c * fh + i) * fw + j];
                sum += (a - b).abs();
                n += 1;
            }
        }
        sum / n as f64 / norm
    };

    let per_channel: Vec<Vec<f64>> = (0..c).map(|i| (0..c).map(|j| resid(i, j)).collect()).collect();
    let residual_same_channel = (0..c).map(|i| per_channel[i][i]).sum::<f64>() / c as f64;
    let (best_permutation, residual_best_permutation) = match permutation {
        Some(p) => {
            if p.len() != c {
                return Err(Error::Data(format!("permutation length {} for {c} channels", p.len())));
            }
            let r = p.iter().enumerate().map(|(i, &j)| per_channel[i][j]).sum::<f64>() / c as f64;
            (p.to_vec(), r)
        }
        None => best_assignment(&per_channel),
    };
    Ok(AuditReport {
        residual_same_channel,
        residual_best_permutation,
        best_permutation,
        margin,
        per_channel,
    })
}

/// Measures how well the inverse spatial transform aligns the feature
/// maps of a transformed image with the original's.
pub fn alignment_residual(
    extractor: &FeatureExtractor,
    image: &Tensor<f64>,
    g: &TransformGroupElement,
    permutation: Option<&[usize]>,
) -> Result<AuditReport> {
    alignment_residual_with(extractor, image, g, &g.inverse()?, permutation)
}

pub fn mirrored_pair_extractor() -> FeatureExtractor {
    FeatureExtractor::mirrored_pair()
}

pub fn isotropic_extractor(sigmas: &[f64]) -> FeatureExtractor {
    FeatureExtractor::isotropic(sigmas, 9)
}

/// Sweeps candidate aligning transforms; returns (candidate index,
/// same-channel residual) sorted ascending.
pub fn necessity_check(
    extractor: &FeatureExtractor,
    image: &Tensor<f64>,
    h: &TransformGroupElement,
    candidates: &[TransformGroupElement],
) -> Result<Vec<(usize, f64)>> {
    if candidates.is_empty() {
        return Err(Error::Data("necessity_check needs at least one candidate".into()));
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for (i, cand) in candidates.iter().enumerate() {
        let rep = alignment_residual_with(extractor, image, h, cand, None)?;
        rows.push((i, rep.residual_same_channel));
    }
    rows.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(rows)
}

/// Area overlap |Omega ∩ T_h^-1 Omega| / |Omega| for a square support
/// centered at the aligned point (linear parts only; translations are
/// already aligned and give 1). Convex polygon clipping, so the
/// axis-aligned cases are exact.
pub fn receptive_field_overlap(g: &TransformGroupElement, support: usize) -> Result<f64> {
    if support == 0 {
        return Err(Error::Data("support must be >= 1".into()));
    }
    let half = support as f64 / 2.0;
    let inv = g.inverse()?.linear();
    // Omega' = T_h^-1 of the square
    let mut poly: Vec<(f64, f64)> = [(-half, -half), (half, -half), (half, half), (-half, half)]
        .iter()
        .map(|&(x, y)| (inv[0][0] * x + inv[0][1] * y, inv[1][0] * x + inv[1][1] * y))
        .collect();
    // clip against the four half-planes of Omega
    let clips: [(f64, f64, f64); 4] = [
        (1.0, 0.0, half),  // x <= half
        (-1.0, 0.0, half), // -x <= half
        (0.0, 1.0, half),
        (0.0, -1.0, half),
    ];
    for (nx, ny, d) in clips {
        let input = std::mem::take(&mut poly);
        if input.is_empty() {
            break;
        }
        let inside = |p: (f64, f64)| nx * p.0 + ny * p.1 <= d;
        for i in 0..input.len() {
            let cur = input[i];
            let prev = input[(i + input.len() - 1) % input.len()];
            let cur_in = inside(cur);
            let prev_in = inside(prev);
            if cur_in != prev_in {
                let f_prev = nx * prev.0 + ny * prev.1 - d;
                let f_cur = nx * cur.0 + ny * cur.1 - d;
                let t = f_prev / (f_prev - f_cur);
                poly.push((prev.0 + t * (cur.0 - prev.0), prev.1 + t * (cur.1 - prev.1)));
            }
            if cur_in {
                poly.push(cur);
            }
        }
    }
    let mut area2 = 0.0;
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        area2 += x0 * y1 - x1 * y0;
    }
    Ok((area2.abs() / 2.0) / (support as f64 * support as f64))
}

/// Deterministic smooth test image for the audits: a field of random
/// Gaussian bumps, content-rich but interpolation-friendly.
pub fn audit_image(n: usize, seed: u64) -> Tensor<f64> {
    let mut rng = StreamRng::new(seed).split(0x1A6);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..12)
        .map(|_| {
            (
                rng.uniform(0.15, 0.85) * n as f64,
                rng.uniform(0.15, 0.85) * n as f64,
                rng.uniform(0.05, 0.12) * n as f64,
                rng.uniform(-1.0, 1.0),
            )
        })
        .collect();
    Tensor::from_fn(vec![1, n, n], |idx| {
        let i = (idx / n) as f64;
        let j = (idx % n) as f64;
        let mut v = 0.0;
        for &(cy, cx, sigma, amp) in &bumps {
            let d2 = (i - cy).powi(2) + (j - cx).powi(2);
            v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
        }
        v
    })
}

/// Integer-valued test image (a digit glyph quantized to byte levels),
/// for the lattice-exact demonstrations.
pub fn integer_audit_image(n: usize, seed: u64) -> Tensor<f64> {
    let digits = crate::data::synthetic_digit_set(1 + (seed as usize % 10), seed);
    let img = digits.image(seed as usize % digits.len());
    let map = PixelMap::content_to_canvas(28, 28, n, n, 0.0, n as f64 / 28.0 * 0.8, 0.0, 0.0);
    let scaled = warp_pixels(&img, n, n, &map, BoundaryPolicy::ZeroFill).expect("scale glyph");
    scaled.map(|v| (v * 255.0).round()).cast::<f64>()
}

/// One CSV row per audit experiment.
#[derive(Debug, Clone)]
pub struct AuditRow {
    pub group_kind: &'static str,
    pub magnitude: f64,
    pub extractor_seed: u64,
    pub residual_same: f64,
    pub residual_perm: f64,
    pub overlap: f64,
}

pub fn write_audit_csv(path: &std::path::Path, rows: &[AuditRow]) -> Result<()> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "schema_version,group_kind,magnitude,extractor_seed,residual_same,residual_perm,overlap"
    )?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            crate::train::CSV_SCHEMA_VERSION,
            r.group_kind,
            r.magnitude,
            r.extractor_seed,
            r.residual_same,
            r.residual_perm,
            r.overlap
        )?;
    }
    Ok(())
}
