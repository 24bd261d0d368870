//! Differentiable affine warping: parameter-to-matrix conventions,
//! sampling-grid generation, and bilinear resampling.
//!
//! Coordinates are edge-aligned: corner pixels sit exactly at
//! normalized -1 and +1, so a translation parameter of 1 moves the
//! sampling point by (width-1)/2 source pixels. A `GridSpace` transform
//! maps output coordinates to the source coordinates an output pixel is
//! resampled from; the transform of the image content itself is its
//! inverse (`ImageSpace`).

use crate::error::{Error, Result};
use crate::kernels;
use crate::real::Real;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Which direction a 2x3 matrix acts in. The two frames are inverses
/// of each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    /// Maps output coordinates to the source points being resampled
    /// (what a localization network predicts).
    GridSpace,
    /// Moves the image content itself.
    ImageSpace,
}

/// What the sampler does when a source coordinate leaves the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryPolicy {
    /// Clamp the source coordinate to the image rectangle, then blend.
    ClampNearest,
    /// Out-of-range pixels read as zero.
    ZeroFill,
}

pub const MIN_INVERTIBLE_DET: f64 = 1e-12;

/// A 2x3 affine matrix [[a11 a12 a13], [a21 a22 a23]] in homogeneous
/// convention over normalized coordinates, tagged with its frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
    pub frame: Frame,
}

impl AffineTransform {
    pub fn new(m: [[f64; 3]; 2], frame: Frame) -> Self {
        AffineTransform { m, frame }
    }

    pub fn identity(frame: Frame) -> Self {
        AffineTransform {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            frame,
        }
    }

    /// Rotation by `deg` degrees: [[cos, -sin], [sin, cos]].
    pub fn rotation_deg(deg: f64, frame: Frame) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        AffineTransform {
            m: [[c, -s, 0.0], [s, c, 0.0]],
            frame,
        }
    }

    pub fn scaling(sx: f64, sy: f64, frame: Frame) -> Self {
        AffineTransform {
            m: [[sx, 0.0, 0.0], [0.0, sy, 0.0]],
            frame,
        }
    }

    /// Translation in normalized units.
    pub fn translation(tx: f64, ty: f64, frame: Frame) -> Self {
        AffineTransform {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty]],
            frame,
        }
    }

    pub fn linear(&self) -> [[f64; 2]; 2] {
        [[self.m[0][0], self.m[0][1]], [self.m[1][0], self.m[1][1]]]
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// Row-major 6-vector [a11 a12 a13 a21 a22 a23].
    pub fn params(&self) -> [f64; 6] {
        [
            self.m[0][0], self.m[0][1], self.m[0][2],
            self.m[1][0], self.m[1][1], self.m[1][2],
        ]
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0][0] * x + self.m[0][1] * y + self.m[0][2],
            self.m[1][0] * x + self.m[1][1] * y + self.m[1][2],
        )
    }

    /// Homogeneous product self . other. Requires matching frames.
    pub fn composed(&self, other: &AffineTransform) -> Result<AffineTransform> {
        if self.frame != other.frame {
            return Err(Error::FrameMismatch(format!(
                "cannot compose {:?} with {:?}",
                self.frame, other.frame
            )));
        }
        let a = &self.m;
        let b = &other.m;
        Ok(AffineTransform {
            m: [
                [
                    a[0][0] * b[0][0] + a[0][1] * b[1][0],
                    a[0][0] * b[0][1] + a[0][1] * b[1][1],
                    a[0][0] * b[0][2] + a[0][1] * b[1][2] + a[0][2],
                ],
                [
                    a[1][0] * b[0][0] + a[1][1] * b[1][0],
                    a[1][0] * b[0][1] + a[1][1] * b[1][1],
                    a[1][0] * b[0][2] + a[1][1] * b[1][2] + a[1][2],
                ],
            ],
            frame: self.frame,
        })
    }

    /// Homogeneous inverse. The frame flips: the inverse of a sampling
    /// grid transform is the transform of the image itself.
    pub fn inverted(&self) -> Result<AffineTransform> {
        let det = self.det();
        if det.abs() <= MIN_INVERTIBLE_DET {
            return Err(Error::SingularMatrix { det });
        }
        let inv_det = 1.0 / det;
        let [[a, b, tx], [c, d, ty]] = self.m;
        let (ia, ib, ic, id) = (d * inv_det, -b * inv_det, -c * inv_det, a * inv_det);
        Ok(AffineTransform {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
            ],
            frame: match self.frame {
                Frame::GridSpace => Frame::ImageSpace,
                Frame::ImageSpace => Frame::GridSpace,
            },
        })
    }
}

/// Builds a grid-space transform from the 6 numbers a localization
/// network emits. In offset mode a zero output vector maps to the
/// identity: [[o1+1, o2, o3], [o4, o5+1, o6]].
pub fn params_to_matrix(o: [f64; 6], identity_offset: bool) -> AffineTransform {
    let d = if identity_offset { 1.0 } else { 0.0 };
    AffineTransform {
        m: [[o[0] + d, o[1], o[2]], [o[3], o[4] + d, o[5]]],
        frame: Frame::GridSpace,
    }
}

/// Normalized sampling locations for each output pixel: shape
/// [out_h, out_w, 2] holding (x', y') = t . (x, y, 1).
pub fn affine_grid<T: Real>(t: &AffineTransform, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if t.frame != Frame::GridSpace {
        return Err(Error::FrameMismatch(
            "affine_grid needs a GridSpace transform; call inverted() first".into(),
        ));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("affine_grid output dims must be >= 1"));
    }
    let params: Vec<T> = t.params().iter().map(|&v| T::from_f64(v)).collect();
    let mut grid = Tensor::zeros(vec![out_h, out_w, 2]);
    kernels::affine_grid_forward(&params, 1, out_h, out_w, grid.values_mut());
    Ok(grid)
}

/// Bilinear resampling of a C x H x W tensor at grid locations.
pub fn bilinear_sample<T: Real>(
    input: &Tensor<T>,
    grid: &Tensor<T>,
    policy: BoundaryPolicy,
) -> Result<Tensor<T>> {
    let (c, h, w) = match input.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::shape(format!("expected C x H x W input, got {s:?}"))),
    };
    let (oh, ow) = match grid.shape() {
        [oh, ow, 2] => (*oh, *ow),
        s => return Err(Error::shape(format!("expected oh x ow x 2 grid, got {s:?}"))),
    };
    let mut out = Tensor::zeros(vec![c, oh, ow]);
    kernels::bilinear_sample_forward(
        input.values(),
        1,
        c,
        h,
        w,
        grid.values(),
        oh,
        ow,
        policy,
        out.values_mut(),
    );
    Ok(out)
}

/// Convenience options for [`spatial_transform`].
#[derive(Debug, Clone, Copy)]
pub struct WarpConfig {
    pub identity_offset: bool,
    pub policy: BoundaryPolicy,
    /// Output dims; defaults to the input dims.
    pub out_dims: Option<(usize, usize)>,
}

impl Default for WarpConfig {
    fn default() -> Self {
        WarpConfig {
            identity_offset: false,
            policy: BoundaryPolicy::ClampNearest,
            out_dims: None,
        }
    }
}

/// One-call composition of params_to_matrix, affine_grid and
/// bilinear_sample.
pub fn spatial_transform<T: Real>(input: &Tensor<T>, o: [f64; 6], cfg: &WarpConfig) -> Result<Tensor<T>> {
    let (_, h, w) = match input.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::shape(format!("expected C x H x W input, got {s:?}"))),
    };
    let (oh, ow) = cfg.out_dims.unwrap_or((h, w));
    let t = params_to_matrix(o, cfg.identity_offset);
    let grid = affine_grid::<T>(&t, oh, ow)?;
    bilinear_sample(input, &grid, cfg.policy)
}

/// A 2x3 affine map in source-pixel units: (x_src, y_src) =
/// M . (x_out, y_out, 1). Used by dataset synthesis, where pixel
/// bookkeeping is more natural than normalized coordinates.
#[derive(Debug, Clone, Copy)]
pub struct PixelMap(pub [[f64; 3]; 2]);

impl PixelMap {
    pub fn identity() -> Self {
        PixelMap([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    }

    /// Output pixel -> source pixel map that renders the source rotated
    /// by `deg` about the source center onto an out_h x out_w canvas
    /// (centers aligned). `scale` magnifies content by that factor.
    pub fn content_to_canvas(
        src_h: usize,
        src_w: usize,
        out_h: usize,
        out_w: usize,
        deg: f64,
        scale: f64,
        shift_x: f64,
        shift_y: f64,
    ) -> Self {
        // content point p maps to q = R(deg)*s*(p - c_src) + c_out + shift;
        // sampling needs the inverse: p = R(-deg)/s * (q - c_out - shift) + c_src
        let (s, c) = deg.to_radians().sin_cos();
        let inv = 1.0 / scale;
        let c_sx = (src_w - 1) as f64 / 2.0;
        let c_sy = (src_h - 1) as f64 / 2.0;
        let c_ox = (out_w - 1) as f64 / 2.0 + shift_x;
        let c_oy = (out_h - 1) as f64 / 2.0 + shift_y;
        let (m00, m01) = (c * inv, s * inv);
        let (m10, m11) = (-s * inv, c * inv);
        PixelMap([
            [m00, m01, c_sx - m00 * c_ox - m01 * c_oy],
            [m10, m11, c_sy - m10 * c_ox - m11 * c_oy],
        ])
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.0[0][0] * x + self.0[0][1] * y + self.0[0][2],
            self.0[1][0] * x + self.0[1][1] * y + self.0[1][2],
        )
    }
}

/// Resamples `src` (C x H x W) onto an out_h x out_w canvas through an
/// output-pixel -> source-pixel map.
pub fn warp_pixels<T: Real>(
    src: &Tensor<T>,
    out_h: usize,
    out_w: usize,
    map: &PixelMap,
    policy: BoundaryPolicy,
) -> Result<Tensor<T>> {
    let (_, h, w) = match src.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::shape(format!("expected C x H x W input, got {s:?}"))),
    };
    // convert pixel targets to the normalized coords the sampler expects
    let sx_span = (w - 1).max(1) as f64;
    let sy_span = (h - 1).max(1) as f64;
    let mut grid = Tensor::zeros(vec![out_h, out_w, 2]);
    {
        let g = grid.values_mut();
        let mut idx = 0;
        for i in 0..out_h {
            for j in 0..out_w {
                let (px, py) = map.apply(j as f64, i as f64);
                g[idx] = T::from_f64(2.0 * px / sx_span - 1.0);
                g[idx + 1] = T::from_f64(2.0 * py / sy_span - 1.0);
                idx += 2;
            }
        }
    }
    bilinear_sample(src, &grid, policy)
}
