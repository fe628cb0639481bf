//! Training objectives for the generator and the two-headed discriminator.
//!
//! The generator minimizes a non-saturating adversarial term plus an
//! expression-classification term plus a weighted reconstruction distance to
//! the target character's neutral image. The discriminator minimizes real,
//! fake, and expression terms, with the sum halved. Everything here comes in
//! two forms: pure scalar functions over precomputed scores (closed-form
//! testable) and graph builders that attach the same losses to a recorded
//! forward pass for backpropagation.

use ndarray::{Array2, ArrayD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, Scalar, VarId, LOG_CLAMP};

/// Reconstruction distance between the generated image and the neutral
/// anchor. Absolute difference is the default; squared difference tends to
/// blur the output and exists for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconKind {
    AbsDiff,
    SqDiff,
}

impl Default for ReconKind {
    fn default() -> Self {
        ReconKind::AbsDiff
    }
}

/// Loss weights and switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight on the reconstruction term in the generator objective.
    pub lambda: f64,
    #[serde(default)]
    pub recon: ReconKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 10.0, recon: ReconKind::AbsDiff }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "reconstruction weight must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// All loss components of one training step, already reduced to scalars.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub g_adv: f64,
    pub g_expr: f64,
    pub g_l1: f64,
    pub g_total: f64,
    pub d_real: f64,
    pub d_fake: f64,
    pub d_expr: f64,
    pub d_total: f64,
}

impl LossBundle {
    pub fn validate(&self, lambda: f64) -> Result<()> {
        let parts = [
            self.g_adv, self.g_expr, self.g_l1, self.g_total, self.d_real, self.d_fake,
            self.d_expr, self.d_total,
        ];
        if parts.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("loss bundle contains a non-finite component".into()));
        }
        let g = self.g_adv + self.g_expr + lambda * self.g_l1;
        let d = (self.d_real + self.d_fake + self.d_expr) / 2.0;
        if self.g_total != g || self.d_total != d {
            return Err(Error::Numeric("loss bundle totals do not match their parts".into()));
        }
        Ok(())
    }
}

/// log(p) with the argument clamped away from zero so the result is finite.
pub fn clamp_log(p: f64) -> f64 {
    p.max(LOG_CLAMP).ln()
}

fn check_unit_interval(name: &str, scores: &[f64]) -> Result<()> {
    for &s in scores {
        if !s.is_finite() || !(0.0..=1.0).contains(&s) {
            return Err(Error::Numeric(format!(
                "{} score {} outside [0, 1]",
                name, s
            )));
        }
    }
    Ok(())
}

/// Mean negative log-softmax probability of `labels` under `logits` rows.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if logits.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} logit rows for {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (row, &label) in logits.outer_iter().zip(labels) {
        if label >= row.len() {
            return Err(Error::Usage(format!(
                "label {} out of range for {} classes",
                label,
                row.len()
            )));
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(total / labels.len() as f64)
}

/// Generator-side components from scores on the fake pair.
///
/// `fake_scores` are the realism-head outputs on (human, generated) pairs;
/// `fake_logits` the expression logits on the same pairs; `generated` and
/// `neutral_anchor` are compared elementwise for the reconstruction term.
/// Discriminator components of the returned bundle are zero.
pub fn generator_loss(
    cfg: &LossConfig,
    fake_scores: &[f64],
    fake_logits: &Array2<f64>,
    labels: &[usize],
    generated: &ArrayD<f64>,
    neutral_anchor: &ArrayD<f64>,
) -> Result<LossBundle> {
    cfg.validate()?;
    check_unit_interval("realism", fake_scores)?;
    if fake_scores.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    if generated.shape() != neutral_anchor.shape() {
        return Err(Error::Dimension(format!(
            "generated shape {:?} vs anchor shape {:?}",
            generated.shape(),
            neutral_anchor.shape()
        )));
    }
    let g_adv = -fake_scores.iter().map(|&s| clamp_log(s)).sum::<f64>()
        / fake_scores.len() as f64;
    let g_expr = cross_entropy(fake_logits, labels)?;
    let n = generated.len() as f64;
    let g_l1 = match cfg.recon {
        ReconKind::AbsDiff => {
            generated
                .iter()
                .zip(neutral_anchor.iter())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / n
        }
        ReconKind::SqDiff => {
            generated
                .iter()
                .zip(neutral_anchor.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n
        }
    };
    let bundle = LossBundle {
        g_adv,
        g_expr,
        g_l1,
        g_total: g_adv + g_expr + cfg.lambda * g_l1,
        ..LossBundle::default()
    };
    bundle.validate(cfg.lambda)?;
    Ok(bundle)
}

/// Discriminator-side components from scores on a real and a fake pair.
///
/// Expression supervision uses the REAL pair's logits only; the fake pair
/// contributes just the realism term. The total is halved. Generator
/// components of the returned bundle are zero.
pub fn discriminator_loss(
    real_scores: &[f64],
    fake_scores: &[f64],
    real_logits: &Array2<f64>,
    labels: &[usize],
) -> Result<LossBundle> {
    check_unit_interval("real-pair realism", real_scores)?;
    check_unit_interval("fake-pair realism", fake_scores)?;
    if real_scores.is_empty() || fake_scores.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let d_real = -real_scores.iter().map(|&s| clamp_log(s)).sum::<f64>()
        / real_scores.len() as f64;
    let d_fake = -fake_scores.iter().map(|&s| clamp_log(1.0 - s)).sum::<f64>()
        / fake_scores.len() as f64;
    let d_expr = cross_entropy(real_logits, labels)?;
    let bundle = LossBundle {
        d_real,
        d_fake,
        d_expr,
        d_total: (d_real + d_fake + d_expr) / 2.0,
        ..LossBundle::default()
    };
    bundle.validate(0.0)?;
    Ok(bundle)
}

/// Per-component node handles for a generator loss built on a graph.
pub struct GeneratorLossNodes {
    pub g_adv: VarId,
    pub g_expr: VarId,
    pub g_l1: VarId,
    pub g_total: VarId,
}

/// Attaches the generator objective to a recorded forward pass.
/// `fake_score` is (N, 1) in (0, 1); `fake_logits` (N, 6); `generated` and
/// `neutral_anchor` the same image shape.
pub fn generator_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &LossConfig,
    fake_score: VarId,
    fake_logits: VarId,
    labels: &[usize],
    generated: VarId,
    neutral_anchor: VarId,
) -> Result<GeneratorLossNodes> {
    cfg.validate()?;
    let g_adv = g.mean_neg_log(fake_score)?;
    let g_expr = g.cross_entropy_logits(fake_logits, labels)?;
    let g_l1 = match cfg.recon {
        ReconKind::AbsDiff => g.mean_abs_diff(generated, neutral_anchor)?,
        ReconKind::SqDiff => g.mean_sq_diff(generated, neutral_anchor)?,
    };
    let weighted = g.scale(g_l1, cfg.lambda)?;
    let partial = g.add(g_adv, g_expr)?;
    let g_total = g.add(partial, weighted)?;
    Ok(GeneratorLossNodes { g_adv, g_expr, g_l1, g_total })
}

/// Per-component node handles for a discriminator loss built on a graph.
pub struct DiscLossNodes {
    pub d_real: VarId,
    pub d_fake: VarId,
    pub d_expr: VarId,
    pub d_total: VarId,
}

/// Attaches the discriminator objective to a recorded forward pass. The
/// fake pair must have been produced by a forward pass that does not share
/// nodes with the generator's update graph, so no gradient reaches G.
pub fn discriminator_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    real_score: VarId,
    fake_score: VarId,
    real_logits: VarId,
    labels: &[usize],
) -> Result<DiscLossNodes> {
    let d_real = g.mean_neg_log(real_score)?;
    let d_fake = g.mean_neg_log_one_minus(fake_score)?;
    let d_expr = g.cross_entropy_logits(real_logits, labels)?;
    let partial = g.add(d_real, d_fake)?;
    let sum = g.add(partial, d_expr)?;
    let d_total = g.scale(sum, 0.5)?;
    Ok(DiscLossNodes { d_real, d_fake, d_expr, d_total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr2, Array2, ArrayD, IxDyn};

    const LN_2: f64 = std::f64::consts::LN_2;

    fn uniform_logits(n: usize) -> Array2<f64> {
        Array2::zeros((n, 6))
    }

    #[test]
    fn clamp_log_matches_its_closed_forms() {
        assert_eq!(clamp_log(1.0), 0.0);
        assert_abs_diff_eq!(clamp_log(0.0), (1e-12f64).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(clamp_log((-1.0f64).exp()), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn generator_identities_hold_to_nanoscale() {
        let cfg = LossConfig::default();
        let img = ArrayD::from_elem(IxDyn(&[2, 1, 4, 4]), 0.25);
        let b = generator_loss(&cfg, &[0.5, 0.5], &uniform_logits(2), &[0, 3], &img, &img)
            .unwrap();
        assert_eq!(b.g_l1, 0.0);
        assert_abs_diff_eq!(b.g_adv, LN_2, epsilon = 1e-9);
        assert_abs_diff_eq!(b.g_expr, 6.0f64.ln(), epsilon = 1e-9);
        assert_eq!(b.g_total, b.g_adv + b.g_expr + cfg.lambda * b.g_l1);
    }

    #[test]
    fn discriminator_identities_hold_to_nanoscale() {
        let b = discriminator_loss(&[0.5], &[0.5], &uniform_logits(1), &[2]).unwrap();
        assert_abs_diff_eq!(b.d_real, LN_2, epsilon = 1e-9);
        assert_abs_diff_eq!(b.d_fake, LN_2, epsilon = 1e-9);
        assert_abs_diff_eq!(b.d_expr, 6.0f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(b.d_total, (2.0 * LN_2 + 6.0f64.ln()) / 2.0, epsilon = 1e-9);
        // Halving is an exact scaling, not an approximation.
        assert_eq!(b.d_total, (b.d_real + b.d_fake + b.d_expr) / 2.0);
    }

    #[test]
    fn perfect_discriminator_drives_its_loss_to_zero() {
        let mut logits = Array2::zeros((1, 6));
        logits[(0, 4)] = 60.0;
        let b = discriminator_loss(&[1.0], &[0.0], &logits, &[4]).unwrap();
        assert!(b.d_total < 1e-9, "d_total = {}", b.d_total);
    }

    #[test]
    fn adversarial_term_pushes_scores_up_harder_near_zero() {
        // -log is strictly decreasing on (0,1) with steepening slope toward 0.
        let at = |s: f64| -clamp_log(s);
        assert!(at(0.2) > at(0.5));
        assert!(at(0.5) > at(0.8));
        let slope = |s: f64| (at(s + 1e-6) - at(s - 1e-6)) / 2e-6;
        assert!(slope(0.1) < slope(0.9));
        assert!(slope(0.9) < 0.0);
    }

    #[test]
    fn squared_reconstruction_is_selectable() {
        let cfg = LossConfig { lambda: 1.0, recon: ReconKind::SqDiff };
        let a = ArrayD::from_elem(IxDyn(&[1, 1, 2, 2]), 0.5);
        let b = ArrayD::from_elem(IxDyn(&[1, 1, 2, 2]), 0.0);
        let bundle =
            generator_loss(&cfg, &[0.5], &uniform_logits(1), &[0], &a, &b).unwrap();
        assert_abs_diff_eq!(bundle.g_l1, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_scores_and_negative_weight_are_rejected() {
        let img = ArrayD::from_elem(IxDyn(&[1, 1, 2, 2]), 0.0);
        let cfg = LossConfig::default();
        assert!(generator_loss(&cfg, &[1.5], &uniform_logits(1), &[0], &img, &img).is_err());
        let bad = LossConfig { lambda: -1.0, recon: ReconKind::AbsDiff };
        assert!(generator_loss(&bad, &[0.5], &uniform_logits(1), &[0], &img, &img).is_err());
        assert!(discriminator_loss(&[f64::NAN], &[0.5], &uniform_logits(1), &[0]).is_err());
    }

    #[test]
    fn graph_builders_agree_with_the_scalar_forms() {
        let cfg = LossConfig::default();
        let scores = arr2(&[[0.3], [0.7]]);
        let logits = arr2(&[[0.4, -0.2, 1.0, 0.0, 0.1, -1.0], [0.0; 6]]);
        let gen = ArrayD::from_shape_fn(IxDyn(&[2, 1, 3, 3]), |ix| {
            (ix[0] as f64 - ix[2] as f64) * 0.11
        });
        let anchor = ArrayD::from_elem(IxDyn(&[2, 1, 3, 3]), 0.05);
        let labels = [2usize, 5];

        let pure = generator_loss(
            &cfg,
            &[0.3, 0.7],
            &logits,
            &labels,
            &gen,
            &anchor,
        )
        .unwrap();

        let mut g = Graph::<f64>::new();
        let sid = g.input(scores.clone());
        let lid = g.input(logits.clone());
        let gid = g.input(gen.clone());
        let aid = g.input(anchor.clone());
        let nodes = generator_loss_graph(&mut g, &cfg, sid, lid, &labels, gid, aid).unwrap();
        assert_abs_diff_eq!(g.scalar(nodes.g_adv).unwrap(), pure.g_adv, epsilon = 1e-12);
        assert_abs_diff_eq!(g.scalar(nodes.g_expr).unwrap(), pure.g_expr, epsilon = 1e-12);
        assert_abs_diff_eq!(g.scalar(nodes.g_l1).unwrap(), pure.g_l1, epsilon = 1e-12);
        assert_abs_diff_eq!(g.scalar(nodes.g_total).unwrap(), pure.g_total, epsilon = 1e-12);

        let pure_d = discriminator_loss(&[0.3, 0.7], &[0.3, 0.7], &logits, &labels).unwrap();
        let dn = discriminator_loss_graph(&mut g, sid, sid, lid, &labels).unwrap();
        assert_abs_diff_eq!(g.scalar(dn.d_total).unwrap(), pure_d.d_total, epsilon = 1e-12);
    }

    #[test]
    fn bundle_totals_are_checked() {
        let mut b = discriminator_loss(&[0.5], &[0.5], &uniform_logits(1), &[0]).unwrap();
        b.d_total += 0.1;
        assert!(b.validate(0.0).is_err());
    }
}
