//! Generator and two-headed discriminator.
//!
//! The generator encodes an expression image, mixes the bottleneck with a
//! one-hot character identity and a noise vector, and decodes a character
//! image of the same size. The discriminator consumes a (human, character)
//! pair stacked along the channel axis and produces a realism score in
//! (0, 1) and six expression logits from a shared trunk.

use ndarray::{Array2, Array4, ArrayD, Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Expression;
use crate::error::{Error, Result};
use crate::nn::{Graph, ParamSet, Scalar, VarId};

pub const EXPRESSION_CLASSES: usize = Expression::CLASSES.len();

/// Structural hyperparameters shared by both networks.
///
/// All convolutions use kernel 4, stride 2, pad 1, so each block halves the
/// spatial size exactly; `image_size` must be divisible by `2^n_blocks`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Square image side in pixels.
    pub image_size: usize,
    /// Image channels (1 for grayscale).
    pub channels: usize,
    /// Width of the one-hot identity code.
    pub n_characters: usize,
    /// Noise vector width; 0 disables the noise input.
    pub z_dim: usize,
    /// Number of down/up-sampling blocks in each network.
    pub n_blocks: usize,
    /// Output channels of each encoder / trunk block, innermost last.
    pub trunk_channels: Vec<usize>,
    /// Width of the shared discriminator trunk FC layer.
    pub trunk_fc: usize,
    /// Hidden width inside each discriminator head.
    pub head_hidden: usize,
    /// Negative-side slope of the leaky rectifier.
    pub leaky_slope: f64,
    /// Std-dev of the normal weight initializer.
    pub init_std: f64,
}

impl ModelConfig {
    /// Configuration used by the desk-scale pipeline: 32x32 grayscale,
    /// four halving blocks down to a 2x2 bottleneck.
    pub fn desk_default(n_characters: usize) -> Self {
        ModelConfig {
            image_size: 32,
            channels: 1,
            n_characters,
            z_dim: 8,
            n_blocks: 4,
            trunk_channels: vec![16, 32, 64, 128],
            trunk_fc: 1024,
            head_hidden: 128,
            leaky_slope: 0.2,
            init_std: 0.02,
        }
    }

    /// Tiny configuration for finite-difference probes: 8x8 images, two
    /// blocks, narrow layers, so a full generate-discriminate pass stays
    /// cheap enough to difference numerically.
    pub fn probe(n_characters: usize) -> Self {
        ModelConfig {
            image_size: 8,
            channels: 1,
            n_characters,
            z_dim: 2,
            n_blocks: 2,
            trunk_channels: vec![4, 8],
            trunk_fc: 16,
            head_hidden: 8,
            leaky_slope: 0.2,
            init_std: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Err(Error::Config("n_blocks must be at least 1".into()));
        }
        if self.trunk_channels.len() != self.n_blocks {
            return Err(Error::Config(format!(
                "trunk_channels has {} entries but n_blocks is {}",
                self.trunk_channels.len(),
                self.n_blocks
            )));
        }
        if self.trunk_channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("trunk_channels entries must be nonzero".into()));
        }
        let factor = 1usize << self.n_blocks;
        if self.image_size == 0 || self.image_size % factor != 0 {
            return Err(Error::Config(format!(
                "image_size {} is not divisible by 2^n_blocks = {}",
                self.image_size, factor
            )));
        }
        if self.channels == 0 || self.n_characters == 0 {
            return Err(Error::Config("channels and n_characters must be nonzero".into()));
        }
        if self.trunk_fc == 0 || self.head_hidden == 0 {
            return Err(Error::Config("trunk_fc and head_hidden must be nonzero".into()));
        }
        if !self.init_std.is_finite() || self.init_std <= 0.0 {
            return Err(Error::Config("init_std must be a positive finite number".into()));
        }
        Ok(())
    }

    /// Side length of the bottleneck feature map.
    pub fn bottleneck_size(&self) -> usize {
        self.image_size >> self.n_blocks
    }

    /// Flattened bottleneck width (channels * side * side).
    pub fn bottleneck_len(&self) -> usize {
        let s = self.bottleneck_size();
        self.trunk_channels[self.n_blocks - 1] * s * s
    }
}

/// One-hot identity rows for a batch of character indices.
pub fn one_hot_rows<T: Scalar>(indices: &[usize], width: usize) -> Result<Array2<T>> {
    let mut out = Array2::zeros((indices.len(), width));
    for (row, &i) in indices.iter().enumerate() {
        if i >= width {
            return Err(Error::Usage(format!(
                "identity index {} out of range for {} characters",
                i, width
            )));
        }
        out[(row, i)] = T::one();
    }
    Ok(out)
}

/// Standard normal noise rows. A zero `z_dim` gives a (n, 0) array.
pub fn sample_noise<T: Scalar>(n: usize, z_dim: usize, rng: &mut ChaCha12Rng) -> Array2<T> {
    let mut out = Array2::zeros((n, z_dim));
    for v in out.iter_mut() {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        *v = T::from_f64((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos());
    }
    out
}

fn conv_w<T: Scalar>(cout: usize, cin: usize) -> ArrayD<T> {
    ArrayD::zeros(IxDyn(&[cout, cin, 4, 4]))
}

fn tconv_w<T: Scalar>(cin: usize, cout: usize) -> ArrayD<T> {
    ArrayD::zeros(IxDyn(&[cin, cout, 4, 4]))
}

fn bias<T: Scalar>(n: usize) -> ArrayD<T> {
    ArrayD::zeros(IxDyn(&[n]))
}

fn fc_w<T: Scalar>(out: usize, inp: usize) -> ArrayD<T> {
    ArrayD::zeros(IxDyn(&[out, inp]))
}

fn lookup<T: Scalar>(params: &ParamSet<T>, ids: &[VarId], name: &str) -> Result<VarId> {
    Ok(ids[params.index_of(name)?])
}

/// Expression-to-character image translator.
pub struct Generator<T: Scalar> {
    pub cfg: ModelConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let mut cin = cfg.channels;
        for (i, &cout) in cfg.trunk_channels.iter().enumerate() {
            params.add(&format!("g.enc{}.w", i), conv_w(cout, cin))?;
            params.add(&format!("g.enc{}.b", i), bias(cout))?;
            cin = cout;
        }
        let mixed = cfg.bottleneck_len() + cfg.n_characters + cfg.z_dim;
        params.add("g.fc.w", fc_w(cfg.bottleneck_len(), mixed))?;
        params.add("g.fc.b", bias(cfg.bottleneck_len()))?;
        let mut cin = cfg.trunk_channels[cfg.n_blocks - 1];
        for i in 0..cfg.n_blocks {
            let cout = if i + 1 == cfg.n_blocks {
                cfg.channels
            } else {
                cfg.trunk_channels[cfg.n_blocks - 2 - i]
            };
            params.add(&format!("g.dec{}.w", i), tconv_w(cin, cout))?;
            params.add(&format!("g.dec{}.b", i), bias(cout))?;
            cin = cout;
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        params.init_normal(cfg.init_std, &mut rng);
        Ok(Generator { cfg: cfg.clone(), params })
    }

    /// Builds the forward pass on `g`. `x` is (N, C, S, S), `identity` is
    /// (N, n_characters) one-hot rows, `z` is (N, z_dim). `ids` must come
    /// from `self.params.bind(g)`. Returns the generated image in (-1, 1).
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        ids: &[VarId],
        x: VarId,
        identity: VarId,
        z: VarId,
    ) -> Result<VarId> {
        let cfg = &self.cfg;
        let slope = cfg.leaky_slope;
        let mut h = x;
        for i in 0..cfg.n_blocks {
            let w = lookup(&self.params, ids, &format!("g.enc{}.w", i))?;
            let b = lookup(&self.params, ids, &format!("g.enc{}.b", i))?;
            h = g.conv2d(h, w, b, 2, 1)?;
            h = g.leaky_relu(h, slope)?;
        }
        let n = g.value(h).shape()[0];
        let flat = g.reshape(h, &[n, cfg.bottleneck_len()])?;
        let mixed = if cfg.z_dim > 0 {
            g.concat(&[flat, identity, z], 1)?
        } else {
            g.concat(&[flat, identity], 1)?
        };
        let w = lookup(&self.params, ids, "g.fc.w")?;
        let b = lookup(&self.params, ids, "g.fc.b")?;
        let mut h = g.linear(mixed, w, b)?;
        h = g.leaky_relu(h, slope)?;
        let s = cfg.bottleneck_size();
        let mut h = g.reshape(h, &[n, cfg.trunk_channels[cfg.n_blocks - 1], s, s])?;
        for i in 0..cfg.n_blocks {
            let w = lookup(&self.params, ids, &format!("g.dec{}.w", i))?;
            let b = lookup(&self.params, ids, &format!("g.dec{}.b", i))?;
            h = g.conv_transpose2d(h, w, b, 2, 1)?;
            h = if i + 1 == cfg.n_blocks {
                g.tanh(h)?
            } else {
                g.leaky_relu(h, slope)?
            };
        }
        Ok(h)
    }

    /// Forward-only convenience: runs a batch through a fresh graph.
    pub fn generate(
        &self,
        images: &Array4<T>,
        identity: &Array2<T>,
        z: &Array2<T>,
    ) -> Result<Array4<T>> {
        let mut g = Graph::new();
        let ids = self.params.bind(&mut g);
        let x = g.input(images.clone());
        let idv = g.input(identity.clone());
        let zv = g.input(z.clone());
        let out = self.forward(&mut g, &ids, x, idv, zv)?;
        Ok(g.value(out)
            .clone()
            .into_dimensionality()
            .map_err(|e| Error::Dimension(format!("generator output: {}", e)))?)
    }
}

/// Realism and expression outputs for one discriminator pass.
pub struct DiscOutputs {
    /// Sigmoid realism scores, shape (N, 1).
    pub real_score: VarId,
    /// Raw expression logits, shape (N, 6).
    pub expr_logits: VarId,
}

/// Pair judge: realism score plus expression classification.
pub struct Discriminator<T: Scalar> {
    pub cfg: ModelConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        // The trunk sees the human and character images stacked channelwise.
        let mut cin = 2 * cfg.channels;
        for (i, &cout) in cfg.trunk_channels.iter().enumerate() {
            params.add(&format!("d.conv{}.w", i), conv_w(cout, cin))?;
            params.add(&format!("d.conv{}.b", i), bias(cout))?;
            cin = cout;
        }
        params.add("d.fc.w", fc_w(cfg.trunk_fc, cfg.bottleneck_len()))?;
        params.add("d.fc.b", bias(cfg.trunk_fc))?;
        params.add("d.real0.w", fc_w(cfg.head_hidden, cfg.trunk_fc))?;
        params.add("d.real0.b", bias(cfg.head_hidden))?;
        params.add("d.real1.w", fc_w(1, cfg.head_hidden))?;
        params.add("d.real1.b", bias(1))?;
        params.add("d.expr0.w", fc_w(cfg.head_hidden, cfg.trunk_fc))?;
        params.add("d.expr0.b", bias(cfg.head_hidden))?;
        params.add("d.expr1.w", fc_w(cfg.head_hidden, cfg.head_hidden))?;
        params.add("d.expr1.b", bias(cfg.head_hidden))?;
        params.add("d.expr2.w", fc_w(EXPRESSION_CLASSES, cfg.head_hidden))?;
        params.add("d.expr2.b", bias(EXPRESSION_CLASSES))?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        params.init_normal(cfg.init_std, &mut rng);
        Ok(Discriminator { cfg: cfg.clone(), params })
    }

    /// Builds the forward pass on `g`. `human` and `character` are both
    /// (N, C, S, S); they are stacked along the channel axis before the
    /// trunk, so both heads see the full pair.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        ids: &[VarId],
        human: VarId,
        character: VarId,
    ) -> Result<DiscOutputs> {
        let cfg = &self.cfg;
        let slope = cfg.leaky_slope;
        let mut h = g.concat(&[human, character], 1)?;
        for i in 0..cfg.n_blocks {
            let w = lookup(&self.params, ids, &format!("d.conv{}.w", i))?;
            let b = lookup(&self.params, ids, &format!("d.conv{}.b", i))?;
            h = g.conv2d(h, w, b, 2, 1)?;
            h = g.leaky_relu(h, slope)?;
        }
        let n = g.value(h).shape()[0];
        let flat = g.reshape(h, &[n, cfg.bottleneck_len()])?;
        let w = lookup(&self.params, ids, "d.fc.w")?;
        let b = lookup(&self.params, ids, "d.fc.b")?;
        let trunk = g.linear(flat, w, b)?;
        let trunk = g.leaky_relu(trunk, slope)?;

        let w = lookup(&self.params, ids, "d.real0.w")?;
        let b = lookup(&self.params, ids, "d.real0.b")?;
        let mut r = g.linear(trunk, w, b)?;
        r = g.leaky_relu(r, slope)?;
        let w = lookup(&self.params, ids, "d.real1.w")?;
        let b = lookup(&self.params, ids, "d.real1.b")?;
        r = g.linear(r, w, b)?;
        let real_score = g.sigmoid(r)?;

        let w = lookup(&self.params, ids, "d.expr0.w")?;
        let b = lookup(&self.params, ids, "d.expr0.b")?;
        let mut e = g.linear(trunk, w, b)?;
        e = g.leaky_relu(e, slope)?;
        let w = lookup(&self.params, ids, "d.expr1.w")?;
        let b = lookup(&self.params, ids, "d.expr1.b")?;
        e = g.linear(e, w, b)?;
        e = g.leaky_relu(e, slope)?;
        let w = lookup(&self.params, ids, "d.expr2.w")?;
        let b = lookup(&self.params, ids, "d.expr2.b")?;
        let expr_logits = g.linear(e, w, b)?;

        Ok(DiscOutputs { real_score, expr_logits })
    }

    /// Forward-only convenience: scores and logits for a batch of pairs.
    pub fn score(
        &self,
        human: &Array4<T>,
        character: &Array4<T>,
    ) -> Result<(Array2<T>, Array2<T>)> {
        let mut g = Graph::new();
        let ids = self.params.bind(&mut g);
        let hv = g.input(human.clone());
        let cv = g.input(character.clone());
        let out = self.forward(&mut g, &ids, hv, cv)?;
        let scores = g
            .value(out.real_score)
            .clone()
            .into_dimensionality()
            .map_err(|e| Error::Dimension(format!("realism scores: {}", e)))?;
        let logits = g
            .value(out.expr_logits)
            .clone()
            .into_dimensionality()
            .map_err(|e| Error::Dimension(format!("expression logits: {}", e)))?;
        Ok((scores, logits))
    }
}

/// Random inputs for a gradient-check probe: images off the activation
/// saturation range, one-hot identities cycling through the roster, and
/// sampled noise.
pub fn probe_batch(
    cfg: &ModelConfig,
    n: usize,
    seed: u64,
) -> (Array4<f64>, Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut x = Array4::zeros((n, cfg.channels, cfg.image_size, cfg.image_size));
    for v in x.iter_mut() {
        *v = rng.gen_range(-0.9..0.9);
    }
    let ids: Vec<usize> = (0..n).map(|i| i % cfg.n_characters).collect();
    let identity = one_hot_rows(&ids, cfg.n_characters).expect("indices fit the roster");
    let z = sample_noise(n, cfg.z_dim, &mut rng);
    (x, identity, z)
}

/// Finite-difference check of a composed generate-then-discriminate pass at
/// probe scale (8x8, two blocks). The probe loss touches both heads and the
/// generated image, so every parameter of both networks gets a gradient.
/// Rectifier biases are nudged off their kinks first; stepping across a
/// kink would corrupt the comparison.
pub fn composed_grad_check(seed: u64, step: f64) -> Result<crate::nn::GradCheckReport> {
    let cfg = ModelConfig::probe(2);
    let gen = Generator::<f64>::new(&cfg, seed.wrapping_mul(2).wrapping_add(1))?;
    let dis = Discriminator::<f64>::new(&cfg, seed.wrapping_mul(2).wrapping_add(2))?;
    let (x, identity, z) = probe_batch(&cfg, 2, seed);
    let gen_len = gen.params.len();
    let mut all = ParamSet::new();
    for p in gen.params.iter().chain(dis.params.iter()) {
        all.add(&p.name, p.value.clone())?;
    }
    let build = |g: &mut Graph<f64>, ids: &[VarId]| {
        let xv = g.input(x.clone());
        let idv = g.input(identity.clone());
        let zv = g.input(z.clone());
        let fake = gen.forward(g, &ids[..gen_len], xv, idv, zv)?;
        let outs = dis.forward(g, &ids[gen_len..], xv, fake)?;
        let adv = g.mean_neg_log(outs.real_score)?;
        let ce = g.cross_entropy_logits(outs.expr_logits, &[0, 1])?;
        let rec = g.mean_sq_diff(fake, xv)?;
        let a = g.add(adv, ce)?;
        g.add(a, rec)
    };
    crate::nn::nudge_off_kinks(&mut all, crate::nn::KINK_MARGIN, build)?;
    crate::nn::grad_check(&mut all, step, build)
}

/// Row-wise argmax with ties broken toward the lowest index.
pub fn argmax_rows<T: Scalar>(rows: &Array2<T>) -> Vec<usize> {
    rows.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0usize;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::SeedableRng;

    fn small_batch(cfg: &ModelConfig, n: usize, seed: u64) -> (Array4<f64>, Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut x = Array4::zeros((n, cfg.channels, cfg.image_size, cfg.image_size));
        for v in x.iter_mut() {
            *v = rng.gen_range(-0.9..0.9);
        }
        let ids: Vec<usize> = (0..n).map(|i| i % cfg.n_characters).collect();
        let identity = one_hot_rows(&ids, cfg.n_characters).unwrap();
        let z = sample_noise(n, cfg.z_dim, &mut rng);
        (x, identity, z)
    }

    #[test]
    fn generator_output_matches_input_shape_and_range() {
        let cfg = ModelConfig::probe(3);
        let gen = Generator::<f64>::new(&cfg, 1).unwrap();
        let (x, identity, z) = small_batch(&cfg, 4, 2);
        let out = gen.generate(&x, &identity, &z).unwrap();
        assert_eq!(out.shape(), x.shape());
        assert!(out.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn desk_config_builds_and_runs() {
        let cfg = ModelConfig::desk_default(3);
        cfg.validate().unwrap();
        let gen = Generator::<f32>::new(&cfg, 1).unwrap();
        let dis = Discriminator::<f32>::new(&cfg, 2).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut x = Array4::zeros((2, 1, 32, 32));
        for v in x.iter_mut() {
            *v = rng.gen_range(-0.9f32..0.9);
        }
        let identity = one_hot_rows(&[0, 2], 3).unwrap();
        let z = sample_noise(2, cfg.z_dim, &mut rng);
        let fake = gen.generate(&x, &identity, &z).unwrap();
        let (scores, logits) = dis.score(&x, &fake).unwrap();
        assert_eq!(scores.shape(), &[2, 1]);
        assert_eq!(logits.shape(), &[2, 6]);
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn zero_noise_width_is_supported() {
        let mut cfg = ModelConfig::probe(2);
        cfg.z_dim = 0;
        let gen = Generator::<f64>::new(&cfg, 5).unwrap();
        let (x, identity, z) = small_batch(&cfg, 2, 6);
        assert_eq!(z.shape(), &[2, 0]);
        let out = gen.generate(&x, &identity, &z).unwrap();
        assert_eq!(out.shape(), x.shape());
    }

    #[test]
    fn parameter_counts_follow_the_layer_plan() {
        let cfg = ModelConfig::probe(3);
        let gen = Generator::<f64>::new(&cfg, 1).unwrap();
        // enc: 1->4, 4->8; fc: (8*2*2 + 3 + 2) -> 32; dec: 8->4, 4->1.
        let expect_g = (4 * 1 * 16 + 4)
            + (8 * 4 * 16 + 8)
            + (32 * 37 + 32)
            + (8 * 4 * 16 + 4)
            + (4 * 1 * 16 + 1);
        assert_eq!(gen.params.element_count(), expect_g);
        let dis = Discriminator::<f64>::new(&cfg, 1).unwrap();
        // trunk: 2->4, 4->8; fc: 32 -> 16; heads: 16->8->1 and 16->8->8->6.
        let expect_d = (4 * 2 * 16 + 4)
            + (8 * 4 * 16 + 8)
            + (16 * 32 + 16)
            + (8 * 16 + 8)
            + (1 * 8 + 1)
            + (8 * 16 + 8)
            + (8 * 8 + 8)
            + (6 * 8 + 6);
        assert_eq!(dis.params.element_count(), expect_d);
    }

    #[test]
    fn heads_share_the_trunk_but_not_each_other() {
        // Perturbing a realism-head weight must leave the expression logits
        // untouched, and vice versa.
        let cfg = ModelConfig::probe(2);
        let mut dis = Discriminator::<f64>::new(&cfg, 9).unwrap();
        let (x, _, _) = small_batch(&cfg, 3, 10);
        let fake = x.mapv(|v| (v * 0.5).tanh());
        let (s0, l0) = dis.score(&x, &fake).unwrap();

        let i = dis.params.index_of("d.real1.w").unwrap();
        dis.params.entry_mut(i).value.iter_mut().for_each(|v| *v += 0.3);
        let (s1, l1) = dis.score(&x, &fake).unwrap();
        assert_eq!(l0, l1);
        assert_ne!(s0, s1);

        let j = dis.params.index_of("d.expr2.w").unwrap();
        dis.params.entry_mut(j).value.iter_mut().for_each(|v| *v += 0.3);
        let (s2, l2) = dis.score(&x, &fake).unwrap();
        assert_eq!(s1, s2);
        assert_ne!(l1, l2);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ModelConfig::desk_default(3);
        cfg.image_size = 30;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::desk_default(3);
        cfg.trunk_channels.pop();
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::desk_default(3);
        cfg.n_characters = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn one_hot_rejects_out_of_range_and_argmax_breaks_ties_low() {
        assert!(one_hot_rows::<f64>(&[3], 3).is_err());
        let rows = ndarray::arr2(&[[1.0, 3.0, 3.0], [2.0, 1.0, 2.0]]);
        assert_eq!(argmax_rows(&rows), vec![1, 0]);
    }

    #[test]
    fn full_pipeline_gradients_match_finite_differences() {
        for seed in [21, 22, 23] {
            let report = composed_grad_check(seed, crate::nn::FD_STEP).unwrap();
            assert!(
                report.passes(crate::nn::FD_TOL),
                "seed {} max rel err {:.3e}",
                seed,
                report.max_rel_err()
            );
        }
    }
}
