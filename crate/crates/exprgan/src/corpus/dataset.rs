//! On-disk dataset layout: a `manifest.tsv` with columns
//! (relative_path, domain, subject_id, expression) next to 8-bit PNG files.
//! Pixels are rescaled to [-1, 1] on load; save/load round-trips exactly.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageReader, RgbImage};
use ndarray::Array3;

use crate::corpus::types::{Domain, Expression, LabeledFaceImage};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.tsv";

fn to_u8(v: f32) -> u8 {
    ((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8
}

fn from_u8(v: u8) -> f32 {
    v as f32 / 255.0 * 2.0 - 1.0
}

/// Writes all images plus the manifest. File names are generated from the
/// entry index and metadata, so distinct entries never collide.
pub fn save_dataset(dir: &Path, images: &[LabeledFaceImage]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("relative_path\tdomain\tsubject_id\texpression\n");
    for (i, img) in images.iter().enumerate() {
        img.validate()?;
        let name = format!(
            "{:05}_{}_{}_{}.png",
            i,
            img.domain.name(),
            img.subject_id,
            img.expression.name()
        );
        let (c, h, w) = img.pixels.dim();
        if c == 1 {
            let mut out = GrayImage::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    out.put_pixel(x as u32, y as u32, image::Luma([to_u8(img.pixels[[0, y, x]])]));
                }
            }
            out.save(dir.join(&name))?;
        } else {
            let mut out = RgbImage::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    let px = [
                        to_u8(img.pixels[[0, y, x]]),
                        to_u8(img.pixels[[1, y, x]]),
                        to_u8(img.pixels[[2, y, x]]),
                    ];
                    out.put_pixel(x as u32, y as u32, image::Rgb(px));
                }
            }
            out.save(dir.join(&name))?;
        }
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            name,
            img.domain.name(),
            img.subject_id,
            img.expression.name()
        ));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

/// Loads a manifest-described dataset. Every error names the offending
/// manifest entry.
pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledFaceImage>> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::Load(format!("no manifest at {}", manifest_path.display())));
    }
    let text = fs::read_to_string(&manifest_path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::Load(format!(
                "manifest line {}: expected 4 tab-separated columns, got {}",
                lineno + 1,
                cols.len()
            )));
        }
        let (rel, domain, subject, expr) = (cols[0], cols[1], cols[2], cols[3]);
        let named = |e: Error| Error::Load(format!("manifest entry {rel:?}: {e}"));
        let domain = Domain::from_name(domain).map_err(named)?;
        let expression = Expression::from_name(expr).map_err(named)?;
        if expression == Expression::Neutral && domain != Domain::Character {
            return Err(Error::Load(format!(
                "manifest entry {rel:?}: neutral label is character-domain only"
            )));
        }
        let pixels = load_image(&dir.join(rel))
            .map_err(|e| Error::Load(format!("manifest entry {rel:?}: {e}")))?;
        out.push(LabeledFaceImage::new(pixels, expression, subject, domain).map_err(named)?);
    }
    Ok(out)
}

/// Decodes one image file into (C, H, W) pixels in [-1, 1]; grayscale stays
/// single-channel, everything else becomes RGB.
pub fn load_image(path: &Path) -> Result<Array3<f32>> {
    let decoded = ImageReader::open(path)?
        .decode()
        .map_err(|e| Error::Load(format!("corrupt image {}: {e}", path.display())))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    Ok(match decoded {
        image::DynamicImage::ImageLuma8(g) => {
            Array3::from_shape_fn((1, h, w), |(_, y, x)| from_u8(g.get_pixel(x as u32, y as u32)[0]))
        }
        other => {
            let rgb = other.to_rgb8();
            Array3::from_shape_fn((3, h, w), |(c, y, x)| {
                from_u8(rgb.get_pixel(x as u32, y as u32)[c])
            })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{generate_corpus, CorpusSpec};
    use std::fs;

    #[test]
    fn save_load_round_trips_pixels_and_labels_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec { n_human_subjects: 2, images_per_cell: 1, ..Default::default() };
        let corpus = generate_corpus(&spec).unwrap();
        save_dataset(dir.path(), &corpus).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), corpus.len());
        for (a, b) in corpus.iter().zip(&back) {
            assert_eq!(a.pixels, b.pixels);
            assert_eq!(a.expression, b.expression);
            assert_eq!(a.subject_id, b.subject_id);
            assert_eq!(a.domain, b.domain);
        }
    }

    #[test]
    fn empty_directory_reports_no_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("no manifest"), "{err}");
    }

    #[test]
    fn label_outside_the_class_set_names_the_entry() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(MANIFEST),
            "relative_path\tdomain\tsubject_id\texpression\nimg.png\thuman\th00\tcontempt\n",
        )
        .unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("img.png") && msg.contains("contempt"), "{msg}");
    }
}
