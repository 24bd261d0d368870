//! Synthesis of the perturbed variants (R), (T), (S). Every sample
//! draws from a substream keyed by its index, so generation order does
//! not affect the output and parallel synthesis would be bit-identical.

use super::{LabeledImageSet, Perturbation, Variant};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::Tensor;
use crate::warp::{warp_pixels, BoundaryPolicy, PixelMap};

/// Knobs for forcing specific perturbations in tests and demos.
#[derive(Debug, Clone, Copy, Default)]
pub struct SynthOptions {
    pub forced_angle: Option<f64>,
    pub forced_offset: Option<(f64, f64)>,
    /// Linear scale factor (the stored perturbation is log2 of its square).
    pub forced_scale: Option<f64>,
    pub disable_clutter: bool,
}

const CLUTTER_FRAGMENTS: usize = 6;
const CLUTTER_SIDE: usize = 6;

fn require_plain(src: &LabeledImageSet) -> Result<()> {
    if src.variant != Variant::Plain {
        return Err(Error::data(format!(
            "synthesis requires a plain source set, got {:?}",
            src.variant
        )));
    }
    if src.normalization.is_some() {
        return Err(Error::data("synthesis requires unnormalized sources"));
    }
    Ok(())
}

/// Rotations uniform in (-90, 90) degrees about the image center,
/// bilinear resampling, same canvas as the source.
pub fn synth_rotated(src: &LabeledImageSet, seed: u64) -> Result<LabeledImageSet> {
    synth_rotated_with(src, seed, &SynthOptions::default())
}

pub fn synth_rotated_with(src: &LabeledImageSet, seed: u64, opts: &SynthOptions) -> Result<LabeledImageSet> {
    require_plain(src)?;
    let (h, w) = src.dims();
    let base = StreamRng::new(seed).split(Variant::R.id() as u64);
    let mut values = Vec::with_capacity(src.len() * h * w);
    let mut perturbations = Vec::with_capacity(src.len());
    for i in 0..src.len() {
        let mut rng = base.split(i as u64);
        let angle = opts.forced_angle.unwrap_or_else(|| rng.uniform(-90.0, 90.0));
        let map = PixelMap::content_to_canvas(h, w, h, w, angle, 1.0, 0.0, 0.0);
        let rotated = warp_pixels(&src.image(i), h, w, &map, BoundaryPolicy::ZeroFill)?;
        values.extend_from_slice(rotated.values());
        perturbations.push(Perturbation::Rotation(angle));
    }
    let images = Tensor::new(vec![src.len(), 1, h, w], values)?;
    LabeledImageSet::new(images, src.labels.clone(), perturbations, Variant::R)
}

/// Adds `CLUTTER_FRAGMENTS` squares cut from random source images,
/// each optionally rescaled, at integer positions fully inside the
/// canvas. Additive with a final clamp to [0, 1].
fn add_clutter(
    canvas: &mut [f32],
    ch: usize,
    cw: usize,
    src: &LabeledImageSet,
    rng: &mut StreamRng,
    scale_range: Option<(f64, f64)>,
) -> Result<usize> {
    let (sh, sw) = src.dims();
    for _ in 0..CLUTTER_FRAGMENTS {
        let donor = rng.below(src.len());
        let sy = rng.below(sh - CLUTTER_SIDE + 1);
        let sx = rng.below(sw - CLUTTER_SIDE + 1);
        // cut the square
        let mut patch = Tensor::zeros(vec![1, CLUTTER_SIDE, CLUTTER_SIDE]);
        {
            let donor_vals = src.images.values();
            let base = donor * sh * sw;
            let pv = patch.values_mut();
            for r in 0..CLUTTER_SIDE {
                for c in 0..CLUTTER_SIDE {
                    pv[r * CLUTTER_SIDE + c] = donor_vals[base + (sy + r) * sw + sx + c];
                }
            }
        }
        let (patch, side) = match scale_range {
            None => (patch, CLUTTER_SIDE),
            Some((lo, hi)) => {
                let factor = (2.0_f64).powf(rng.uniform(lo.log2(), hi.log2()));
                let side = ((CLUTTER_SIDE as f64 * factor).round() as usize).max(1);
                let map = PixelMap::content_to_canvas(CLUTTER_SIDE, CLUTTER_SIDE, side, side, 0.0, factor, 0.0, 0.0);
                (warp_pixels(&patch, side, side, &map, BoundaryPolicy::ZeroFill)?, side)
            }
        };
        if side > ch || side > cw {
            continue; // a fragment larger than the canvas cannot be placed
        }
        let dy = rng.below(ch - side + 1);
        let dx = rng.below(cw - side + 1);
        for r in 0..side {
            for c in 0..side {
                canvas[(dy + r) * cw + dx + c] += patch.values()[r * side + c];
            }
        }
    }
    Ok(CLUTTER_FRAGMENTS)
}

/// Digits placed at continuous random offsets on a 60x60 canvas, fully
/// inside; cluttered with fragments of other digits. The perturbation
/// records the digit-center offset from the canvas center in pixels.
pub fn synth_translated(src: &LabeledImageSet, seed: u64) -> Result<LabeledImageSet> {
    synth_translated_with(src, seed, &SynthOptions::default())
}

pub fn synth_translated_with(src: &LabeledImageSet, seed: u64, opts: &SynthOptions) -> Result<LabeledImageSet> {
    require_plain(src)?;
    let (sh, sw) = src.dims();
    let (ch, cw) = Variant::T.canvas();
    let max_dx = (cw - sw) as f64 / 2.0;
    let max_dy = (ch - sh) as f64 / 2.0;
    let base = StreamRng::new(seed).split(Variant::T.id() as u64);
    let mut values = Vec::with_capacity(src.len() * ch * cw);
    let mut perturbations = Vec::with_capacity(src.len());
    for i in 0..src.len() {
        let mut rng = base.split(i as u64);
        let (dx, dy) = opts
            .forced_offset
            .unwrap_or_else(|| (rng.uniform(-max_dx, max_dx), rng.uniform(-max_dy, max_dy)));
        if dx.abs() > max_dx || dy.abs() > max_dy {
            return Err(Error::data(format!(
                "offset ({dx}, {dy}) would clip the digit (max {max_dx})"
            )));
        }
        let map = PixelMap::content_to_canvas(sh, sw, ch, cw, 0.0, 1.0, dx, dy);
        let placed = warp_pixels(&src.image(i), ch, cw, &map, BoundaryPolicy::ZeroFill)?;
        let mut canvas = placed.into_values();
        if !opts.disable_clutter {
            add_clutter(&mut canvas, ch, cw, src, &mut rng, None)?;
        }
        for v in canvas.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        values.extend_from_slice(&canvas);
        perturbations.push(Perturbation::Translation(dx, dy));
    }
    let images = Tensor::new(vec![src.len(), 1, ch, cw], values)?;
    LabeledImageSet::new(images, src.labels.clone(), perturbations, Variant::T)
}

/// Digits scaled by a factor log-uniform in [0.5, 4] about their
/// center, centered on a 112x112 canvas; clutter squares are rescaled
/// the same way. The perturbation records log2(scale^2).
pub fn synth_scaled(src: &LabeledImageSet, seed: u64) -> Result<LabeledImageSet> {
    synth_scaled_with(src, seed, &SynthOptions::default())
}

pub fn synth_scaled_with(src: &LabeledImageSet, seed: u64, opts: &SynthOptions) -> Result<LabeledImageSet> {
    require_plain(src)?;
    let (sh, sw) = src.dims();
    let (ch, cw) = Variant::S.canvas();
    let base = StreamRng::new(seed).split(Variant::S.id() as u64);
    let mut values = Vec::with_capacity(src.len() * ch * cw);
    let mut perturbations = Vec::with_capacity(src.len());
    for i in 0..src.len() {
        let mut rng = base.split(i as u64);
        let scale = opts
            .forced_scale
            .unwrap_or_else(|| (2.0_f64).powf(rng.uniform(-1.0, 2.0)));
        if sw as f64 * scale > cw as f64 + 1e-9 || sh as f64 * scale > ch as f64 + 1e-9 {
            return Err(Error::data(format!(
                "scale {scale} blows the digit past the {cw}-pixel canvas"
            )));
        }
        let map = PixelMap::content_to_canvas(sh, sw, ch, cw, 0.0, scale, 0.0, 0.0);
        let placed = warp_pixels(&src.image(i), ch, cw, &map, BoundaryPolicy::ZeroFill)?;
        let mut canvas = placed.into_values();
        if !opts.disable_clutter {
            add_clutter(&mut canvas, ch, cw, src, &mut rng, Some((0.5, 4.0)))?;
        }
        for v in canvas.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        values.extend_from_slice(&canvas);
        perturbations.push(Perturbation::Scale(2.0 * scale.log2()));
    }
    let images = Tensor::new(vec![src.len(), 1, ch, cw], values)?;
    LabeledImageSet::new(images, src.labels.clone(), perturbations, Variant::S)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_digit_set;

    #[test]
    fn forced_angle_zero_is_identity() {
        let src = synthetic_digit_set(8, 2);
        let opts = SynthOptions { forced_angle: Some(0.0), ..Default::default() };
        let out = synth_rotated_with(&src, 1, &opts).unwrap();
        assert_eq!(out.images.values(), src.images.values());
        assert!(matches!(out.perturbations[0], Perturbation::Rotation(a) if a == 0.0));
    }

    #[test]
    fn rotation_round_trip_recovers_interior() {
        let src = synthetic_digit_set(4, 7);
        let opts = SynthOptions { forced_angle: Some(90.0), ..Default::default() };
        let rotated = synth_rotated_with(&src, 1, &opts).unwrap();
        // rotate back by -90 and compare interiors
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..src.len() {
            let map = PixelMap::content_to_canvas(28, 28, 28, 28, -90.0, 1.0, 0.0, 0.0);
            let back = warp_pixels(&rotated.image(i), 28, 28, &map, BoundaryPolicy::ZeroFill).unwrap();
            for r in 4..24 {
                for c in 4..24 {
                    total += (back.values()[r * 28 + c] - src.image(i).values()[r * 28 + c]).abs() as f64;
                    count += 1;
                }
            }
        }
        let mean = total / count as f64;
        assert!(mean < 2e-2, "round-trip residual {mean}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let src = synthetic_digit_set(10, 3);
        for synth in [synth_rotated, synth_translated, synth_scaled] {
            let a = synth(&src, 42).unwrap();
            let b = synth(&src, 42).unwrap();
            assert_eq!(a.images.values(), b.images.values());
            assert_eq!(a.perturbations, b.perturbations);
            let c = synth(&src, 43).unwrap();
            assert_ne!(a.images.values(), c.images.values());
        }
    }

    #[test]
    fn centered_digit_with_zero_offset_and_no_clutter() {
        let src = synthetic_digit_set(3, 11);
        let opts = SynthOptions {
            forced_offset: Some((0.0, 0.0)),
            disable_clutter: true,
            ..Default::default()
        };
        let out = synth_translated_with(&src, 1, &opts).unwrap();
        assert_eq!(out.dims(), (60, 60));
        // digit occupies the central 28x28 block exactly
        for i in 0..src.len() {
            let canvas = out.image(i);
            for r in 0..28 {
                for c in 0..28 {
                    let got = canvas.values()[(16 + r) * 60 + 16 + c];
                    let want = src.image(i).values()[r * 28 + c];
                    assert!((got - want).abs() < 1e-6);
                }
            }
            // border stays empty
            for k in 0..60 {
                assert_eq!(canvas.values()[k], 0.0);
                assert_eq!(canvas.values()[59 * 60 + k], 0.0);
            }
        }
    }

    #[test]
    fn translated_offsets_keep_digit_inside() {
        let src = synthetic_digit_set(40, 5);
        let out = synth_translated(&src, 9).unwrap();
        for p in &out.perturbations {
            let Perturbation::Translation(dx, dy) = p else { panic!() };
            assert!(dx.abs() <= 16.0 && dy.abs() <= 16.0);
        }
    }

    #[test]
    fn clutter_adds_exactly_six_fragments() {
        // blank digit + constant-value sources: the added mass is
        // exactly 6 fragments x 36 pixels x fill value
        let fill = 0.001f32;
        let images = Tensor::filled(vec![4, 1, 28, 28], fill);
        let src = LabeledImageSet::new(images, vec![0; 4], vec![Perturbation::None; 4], Variant::Plain).unwrap();
        let opts = SynthOptions { forced_offset: Some((16.0, 16.0)), ..Default::default() };
        let out = synth_translated_with(&src, 13, &opts).unwrap();
        for i in 0..src.len() {
            let canvas_sum: f64 = out.image(i).values().iter().map(|&v| v as f64).sum();
            let digit_sum = 28.0 * 28.0 * fill as f64;
            let clutter_sum = canvas_sum - digit_sum;
            let want = (CLUTTER_FRAGMENTS * CLUTTER_SIDE * CLUTTER_SIDE) as f64 * fill as f64;
            assert!(
                (clutter_sum - want).abs() < 1e-4,
                "clutter mass {clutter_sum} vs expected {want}"
            );
        }
    }

    #[test]
    fn forced_scale_one_centers_unscaled_digit() {
        let src = synthetic_digit_set(2, 17);
        let opts = SynthOptions {
            forced_scale: Some(1.0),
            disable_clutter: true,
            ..Default::default()
        };
        let out = synth_scaled_with(&src, 1, &opts).unwrap();
        assert_eq!(out.dims(), (112, 112));
        for i in 0..src.len() {
            let canvas = out.image(i);
            for r in 0..28 {
                for c in 0..28 {
                    let got = canvas.values()[(42 + r) * 112 + 42 + c];
                    let want = src.image(i).values()[r * 28 + c];
                    assert!((got - want).abs() < 1e-6);
                }
            }
        }
        assert!(matches!(out.perturbations[0], Perturbation::Scale(s) if s.abs() < 1e-12));
    }

    #[test]
    fn scale_four_spans_whole_canvas() {
        let src = synthetic_digit_set(2, 19);
        let opts = SynthOptions {
            forced_scale: Some(4.0),
            disable_clutter: true,
            ..Default::default()
        };
        let out = synth_scaled_with(&src, 1, &opts).unwrap();
        // geometric check: canvas corners map inside the source extent
        let map = PixelMap::content_to_canvas(28, 28, 112, 112, 0.0, 4.0, 0.0, 0.0);
        let (x0, y0) = map.apply(0.0, 0.0);
        let (x1, y1) = map.apply(111.0, 111.0);
        assert!(x0 > -0.5 && y0 > -0.5, "corner maps to ({x0}, {y0})");
        assert!(x1 < 27.5 && y1 < 27.5, "corner maps to ({x1}, {y1})");
        // and the rendering matches a direct bilinear oracle at the
        // mapped source coordinates
        for i in 0..src.len() {
            let canvas = out.image(i);
            let s = src.image(i);
            let fetch = |r: isize, c: isize| -> f64 {
                if r < 0 || r > 27 || c < 0 || c > 27 {
                    0.0
                } else {
                    s.values()[r as usize * 28 + c as usize] as f64
                }
            };
            let mut err = 0.0f64;
            for q_r in (8..104).step_by(7) {
                for q_c in (8..104).step_by(7) {
                    let (px, py) = map.apply(q_c as f64, q_r as f64);
                    let (x0, y0) = (px.floor(), py.floor());
                    let (fx, fy) = (px - x0, py - y0);
                    let (x0, y0) = (x0 as isize, y0 as isize);
                    let want = (1.0 - fy) * ((1.0 - fx) * fetch(y0, x0) + fx * fetch(y0, x0 + 1))
                        + fy * ((1.0 - fx) * fetch(y0 + 1, x0) + fx * fetch(y0 + 1, x0 + 1));
                    err += (canvas.values()[q_r * 112 + q_c] as f64 - want).abs();
                }
            }
            assert!(err < 1e-5, "scale-4 bilinear mismatch {err}");
        }
        let Perturbation::Scale(s) = out.perturbations[0] else { panic!() };
        assert!((s - 4.0).abs() < 1e-12, "log2(16) = 4, got {s}");
    }

    #[test]
    fn oversized_scale_is_rejected() {
        let src = synthetic_digit_set(1, 23);
        let opts = SynthOptions { forced_scale: Some(4.2), ..Default::default() };
        assert!(synth_scaled_with(&src, 1, &opts).is_err());
    }

    #[test]
    fn scale_unit_is_twice_log2_factor() {
        let src = synthetic_digit_set(1, 29);
        let opts = SynthOptions {
            forced_scale: Some(1.7),
            disable_clutter: true,
            ..Default::default()
        };
        let out = synth_scaled_with(&src, 1, &opts).unwrap();
        let Perturbation::Scale(s) = out.perturbations[0] else { panic!() };
        assert!((s - 2.0 * 1.7f64.log2()).abs() < 1e-12);
    }
}
