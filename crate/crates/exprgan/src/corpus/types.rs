use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six classifier classes plus the neutral marker. Neutral never
/// appears as a classifier output; it labels the character-domain anchor
/// images the reconstruction loss targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expression {
    Anger,
    Disgust,
    Sadness,
    Happiness,
    Fear,
    Surprise,
    Neutral,
}

impl Expression {
    /// The classifier label set, in class-index order.
    pub const CLASSES: [Expression; 6] = [
        Expression::Anger,
        Expression::Disgust,
        Expression::Sadness,
        Expression::Happiness,
        Expression::Fear,
        Expression::Surprise,
    ];

    pub fn class_index(self) -> Option<usize> {
        Self::CLASSES.iter().position(|&e| e == self)
    }

    pub fn from_class_index(i: usize) -> Result<Expression> {
        Self::CLASSES
            .get(i)
            .copied()
            .ok_or_else(|| Error::Dataset(format!("class index {i} out of range 0..6")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Expression::Anger => "anger",
            Expression::Disgust => "disgust",
            Expression::Sadness => "sadness",
            Expression::Happiness => "happiness",
            Expression::Fear => "fear",
            Expression::Surprise => "surprise",
            Expression::Neutral => "neutral",
        }
    }

    pub fn from_name(name: &str) -> Result<Expression> {
        match name {
            "anger" => Ok(Expression::Anger),
            "disgust" => Ok(Expression::Disgust),
            "sadness" => Ok(Expression::Sadness),
            "happiness" => Ok(Expression::Happiness),
            "fear" => Ok(Expression::Fear),
            "surprise" => Ok(Expression::Surprise),
            "neutral" => Ok(Expression::Neutral),
            other => Err(Error::Dataset(format!(
                "expression {other:?} outside the six-class set (plus neutral)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Human,
    Character,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Human => "human",
            Domain::Character => "character",
        }
    }

    pub fn from_name(name: &str) -> Result<Domain> {
        match name {
            "human" => Ok(Domain::Human),
            "character" => Ok(Domain::Character),
            other => Err(Error::Dataset(format!("unknown domain {other:?}"))),
        }
    }
}

/// A labeled image: (C, H, W) intensities in [-1, 1], expression label,
/// subject (or character) identity, and domain tag.
#[derive(Clone, Debug)]
pub struct LabeledFaceImage {
    pub pixels: Array3<f32>,
    pub expression: Expression,
    pub subject_id: String,
    pub domain: Domain,
}

impl LabeledFaceImage {
    pub fn new(
        pixels: Array3<f32>,
        expression: Expression,
        subject_id: impl Into<String>,
        domain: Domain,
    ) -> Result<Self> {
        let img = LabeledFaceImage { pixels, expression, subject_id: subject_id.into(), domain };
        img.validate()?;
        Ok(img)
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.pixels.dim();
        if h < 8 || w < 8 {
            return Err(Error::Dimension(format!("image {h}x{w} below the 8x8 minimum")));
        }
        if c != 1 && c != 3 {
            return Err(Error::Dimension(format!("channel count {c} not in {{1, 3}}")));
        }
        if self.pixels.iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
            return Err(Error::Numeric(format!(
                "image {:?} has intensities outside [-1, 1]",
                self.subject_id
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }

    /// Same geometry and provenance, different pixels.
    pub fn with_pixels(&self, pixels: Array3<f32>) -> Self {
        LabeledFaceImage {
            pixels,
            expression: self.expression,
            subject_id: self.subject_id.clone(),
            domain: self.domain,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn class_indices_cover_exactly_six_and_exclude_neutral() {
        assert_eq!(Expression::CLASSES.len(), 6);
        assert_eq!(Expression::Neutral.class_index(), None);
        for (i, e) in Expression::CLASSES.iter().enumerate() {
            assert_eq!(e.class_index(), Some(i));
            assert_eq!(Expression::from_class_index(i).unwrap(), *e);
        }
    }

    #[test]
    fn contempt_is_rejected() {
        assert!(Expression::from_name("contempt").is_err());
    }

    #[test]
    fn undersized_image_is_rejected() {
        let px = Array3::zeros((1, 4, 4));
        assert!(LabeledFaceImage::new(px, Expression::Anger, "s", Domain::Human).is_err());
    }

    #[test]
    fn out_of_range_intensity_is_rejected() {
        let mut px = Array3::zeros((1, 8, 8));
        px[[0, 0, 0]] = 1.5;
        assert!(LabeledFaceImage::new(px, Expression::Anger, "s", Domain::Human).is_err());
    }
}
