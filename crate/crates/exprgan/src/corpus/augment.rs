//! Deterministic augmentation: five fixed crops, eleven rotation states
//! (the ten listed angles plus identity), and both flip states, for exactly
//! 5 x 11 x 2 = 110 variants per source image. Labels and subject ids ride
//! along unchanged. Applied to human-domain images only at training time.

use ndarray::Array3;

use crate::corpus::types::LabeledFaceImage;
use crate::error::{Error, Result};

/// The eleven rotation states, in enumeration order.
pub const ANGLES_DEG: [f64; 11] = [
    -150.0, -120.0, -90.0, -60.0, -30.0, 0.0, 30.0, 60.0, 90.0, 120.0, 150.0,
];

pub const CROP_COUNT: usize = 5;
pub const VARIANTS: usize = CROP_COUNT * ANGLES_DEG.len() * 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentPlan {
    pub crop_size: (usize, usize),
}

impl AugmentPlan {
    pub fn new(crop_size: (usize, usize)) -> Self {
        AugmentPlan { crop_size }
    }

    /// Default crop for a source of size (H, W): ceil(5H/6) x ceil(5W/6),
    /// the 75-from-90 proportion scaled to the source.
    pub fn proportional(h: usize, w: usize) -> Self {
        AugmentPlan { crop_size: ((5 * h).div_ceil(6), (5 * w).div_ceil(6)) }
    }

    /// All 110 transform tuples in deterministic order: crop-major, then
    /// angle, then flip.
    pub fn tuples(&self) -> Vec<TransformTuple> {
        let mut out = Vec::with_capacity(VARIANTS);
        for crop_index in 0..CROP_COUNT {
            for &angle_deg in &ANGLES_DEG {
                for flip in [false, true] {
                    out.push(TransformTuple { crop_index, angle_deg, flip });
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformTuple {
    pub crop_index: usize,
    pub angle_deg: f64,
    pub flip: bool,
}

/// Offsets of the five crops: four corners, then center (floor convention).
pub fn crop_offsets(big_h: usize, big_w: usize, h: usize, w: usize) -> [(usize, usize); 5] {
    [
        (0, 0),
        (0, big_w - w),
        (big_h - h, 0),
        (big_h - h, big_w - w),
        ((big_h - h) / 2, (big_w - w) / 2),
    ]
}

/// Five crops of size (h, w): four corners and the center.
pub fn crop_five(img: &LabeledFaceImage, crop: (usize, usize)) -> Result<Vec<LabeledFaceImage>> {
    let (c, big_h, big_w) = img.pixels.dim();
    let (h, w) = crop;
    if h > big_h || w > big_w {
        return Err(Error::Dimension(format!(
            "crop {h}x{w} larger than image {big_h}x{big_w}"
        )));
    }
    Ok(crop_offsets(big_h, big_w, h, w)
        .iter()
        .map(|&(oy, ox)| {
            let px = Array3::from_shape_fn((c, h, w), |(ci, y, x)| img.pixels[[ci, oy + y, ox + x]]);
            img.with_pixels(px)
        })
        .collect())
}

/// Mirror index for reflect padding (edge pixel duplicated).
fn reflect(mut i: i64, n: i64) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Rotation about the image center, counterclockwise positive, bilinear
/// interpolation with reflect padding; output size unchanged. Multiples of
/// 90 degrees take an exact integer path (cos/sin snapped to {-1, 0, 1}).
pub fn rotate(img: &LabeledFaceImage, angle_deg: f64) -> LabeledFaceImage {
    let (c, h, w) = img.pixels.dim();
    let (cos, sin) = if angle_deg.rem_euclid(90.0) == 0.0 {
        let quarter = (angle_deg.rem_euclid(360.0) / 90.0).round() as i64 % 4;
        match quarter {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let rad = angle_deg.to_radians();
        (rad.cos(), rad.sin())
    };
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let px = Array3::from_shape_fn((c, h, w), |(ci, y, x)| {
        // inverse map: rotate the output coordinate by -angle
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        let sy = cy + cos * dy + sin * dx;
        let sx = cx - sin * dy + cos * dx;
        let y0 = sy.floor();
        let x0 = sx.floor();
        let fy = sy - y0;
        let fx = sx - x0;
        let mut acc = 0.0f64;
        for (oy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
            if wy == 0.0 {
                continue;
            }
            for (ox, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                if wx == 0.0 {
                    continue;
                }
                let ry = reflect(y0 as i64 + oy, h as i64);
                let rx = reflect(x0 as i64 + ox, w as i64);
                acc += wy * wx * f64::from(img.pixels[[ci, ry, rx]]);
            }
        }
        acc.clamp(-1.0, 1.0) as f32
    });
    img.with_pixels(px)
}

/// Horizontal mirror: column j maps to W-1-j.
pub fn hflip(img: &LabeledFaceImage) -> LabeledFaceImage {
    let (c, h, w) = img.pixels.dim();
    let px = Array3::from_shape_fn((c, h, w), |(ci, y, x)| img.pixels[[ci, y, w - 1 - x]]);
    img.with_pixels(px)
}

/// Applies one transform tuple: crop, then rotate, then (maybe) flip.
pub fn apply_tuple(
    img: &LabeledFaceImage,
    plan: &AugmentPlan,
    t: &TransformTuple,
) -> Result<LabeledFaceImage> {
    let crops = crop_five(img, plan.crop_size)?;
    let mut out = rotate(&crops[t.crop_index], t.angle_deg);
    if t.flip {
        out = hflip(&out);
    }
    Ok(out)
}

/// The full 110-variant expansion of one image, in tuple order.
pub fn augment(img: &LabeledFaceImage, plan: &AugmentPlan) -> Result<Vec<LabeledFaceImage>> {
    let crops = crop_five(img, plan.crop_size)?;
    let mut out = Vec::with_capacity(VARIANTS);
    for crop in &crops {
        for &angle in &ANGLES_DEG {
            let rotated = rotate(crop, angle);
            out.push(rotated.clone());
            out.push(hflip(&rotated));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{generate_corpus, CorpusSpec};
    use crate::corpus::types::{Domain, Expression};
    use ndarray::Array3;

    fn test_image(h: usize, w: usize) -> LabeledFaceImage {
        let px = Array3::from_shape_fn((1, h, w), |(_, y, x)| {
            (((y * 31 + x * 17) % 200) as f32) / 100.0 - 1.0
        });
        LabeledFaceImage::new(px, Expression::Happiness, "h00", Domain::Human).unwrap()
    }

    #[test]
    fn crop_offsets_match_the_floor_convention() {
        assert_eq!(
            crop_offsets(90, 90, 75, 75),
            [(0, 0), (0, 15), (15, 0), (15, 15), (7, 7)]
        );
    }

    #[test]
    fn crop_equal_to_image_size_yields_five_copies() {
        let img = test_image(16, 16);
        let crops = crop_five(&img, (16, 16)).unwrap();
        assert_eq!(crops.len(), 5);
        for c in &crops {
            assert_eq!(c.pixels, img.pixels);
        }
    }

    #[test]
    fn oversized_crop_is_an_error() {
        let img = test_image(75, 75);
        assert!(crop_five(&img, (76, 75)).is_err());
    }

    #[test]
    fn rotate_zero_is_identity() {
        let img = test_image(17, 17);
        assert_eq!(rotate(&img, 0.0).pixels, img.pixels);
    }

    #[test]
    fn ninety_degree_round_trip_is_exact() {
        let img = test_image(16, 16);
        let back = rotate(&rotate(&img, 90.0), -90.0);
        assert_eq!(back.pixels, img.pixels);
    }

    #[test]
    fn rotation_moves_a_bright_pixel_where_the_rotation_matrix_says() {
        // independent forward-map oracle: a bright dot at p lands at
        // c + R(angle) (p - c)
        let h = 33;
        let mut px = Array3::from_elem((1, h, h), -1.0f32);
        let (py, pxx) = (6usize, 16usize);
        px[[0, py, pxx]] = 1.0;
        let img = LabeledFaceImage::new(px, Expression::Anger, "h00", Domain::Human).unwrap();
        let angle: f64 = 30.0;
        let out = rotate(&img, angle);
        let c = (h as f64 - 1.0) / 2.0;
        let (dy, dx) = (py as f64 - c, pxx as f64 - c);
        let rad = angle.to_radians();
        // forward map is the inverse of the sampling map used in rotate()
        let ey = c + rad.cos() * dy - rad.sin() * dx;
        let ex = c + rad.sin() * dy + rad.cos() * dx;
        let mut best = (0usize, 0usize);
        let mut best_v = f32::MIN;
        for y in 0..h {
            for x in 0..h {
                if out.pixels[[0, y, x]] > best_v {
                    best_v = out.pixels[[0, y, x]];
                    best = (y, x);
                }
            }
        }
        assert!(
            (best.0 as f64 - ey).abs() <= 1.0 && (best.1 as f64 - ex).abs() <= 1.0,
            "mass at {best:?}, oracle predicts ({ey:.2}, {ex:.2})"
        );
    }

    #[test]
    fn hflip_is_an_involution_and_mirrors_columns() {
        let img = test_image(12, 9);
        let flipped = hflip(&img);
        for y in 0..12 {
            for x in 0..9 {
                assert_eq!(flipped.pixels[[0, y, x]], img.pixels[[0, y, 8 - x]]);
            }
        }
        assert_eq!(hflip(&flipped).pixels, img.pixels);
    }

    #[test]
    fn width_one_image_is_unchanged_by_flip() {
        let img = test_image(8, 8);
        let col = &crop_five(&img, (8, 1)).unwrap()[0];
        assert_eq!(hflip(col).pixels, col.pixels);
    }

    #[test]
    fn augment_yields_exactly_110_variants_with_distinct_tuples() {
        let spec = CorpusSpec { n_human_subjects: 1, images_per_cell: 1, ..Default::default() };
        let img = generate_corpus(&spec)
            .unwrap()
            .into_iter()
            .find(|i| i.domain == Domain::Human)
            .unwrap();
        let plan = AugmentPlan::proportional(img.height(), img.width());
        let tuples = plan.tuples();
        assert_eq!(tuples.len(), 110);
        for i in 0..tuples.len() {
            for j in i + 1..tuples.len() {
                assert_ne!(tuples[i], tuples[j]);
            }
        }
        let variants = augment(&img, &plan).unwrap();
        assert_eq!(variants.len(), 110);
        for v in &variants {
            assert_eq!(v.expression, img.expression);
            assert_eq!(v.subject_id, img.subject_id);
            assert_eq!(v.height(), plan.crop_size.0);
        }
    }

    #[test]
    fn augment_enumeration_matches_apply_tuple_order() {
        let img = test_image(18, 18);
        let plan = AugmentPlan::proportional(18, 18);
        let all = augment(&img, &plan).unwrap();
        for (v, t) in all.iter().zip(plan.tuples()) {
            let single = apply_tuple(&img, &plan, &t).unwrap();
            assert_eq!(single.pixels, v.pixels);
        }
    }
}
