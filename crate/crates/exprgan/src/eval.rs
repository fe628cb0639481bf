//! Expression recognition through the trained pair of networks,
//! subject-disjoint cross-validation, and report files.
//!
//! Recognition runs the generator with the fixed character id and a zero
//! noise vector, then reads the expression head of the discriminator on the
//! (input, generated) pair. The realism head is ignored.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{decode_expression, Domain, Expression, LabeledFaceImage};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, one_hot_rows, sample_noise, Discriminator, Generator};
use crate::nn::{AdamState, Graph, ParamSet};
use crate::trainer::{DatasetIndex, TrainConfig, Trainer};

/// Classifies one batch of human-domain images into the six classes.
pub trait ExpressionClassifier {
    fn classify(&self, images: &[LabeledFaceImage]) -> Result<Vec<Expression>>;
}

/// Produces a classifier from a training split. `seed` pins every random
/// choice of the produced model.
pub trait ClassifierTrainer {
    fn fit(&self, train: &[LabeledFaceImage], seed: u64) -> Result<Box<dyn ExpressionClassifier>>;
}

fn derived_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn stack(images: &[LabeledFaceImage]) -> Result<ndarray::Array4<f32>> {
    if images.is_empty() {
        return Err(Error::Usage("empty image batch".into()));
    }
    let (c, h, w) = images[0].pixels.dim();
    let mut out = ndarray::Array4::zeros((images.len(), c, h, w));
    for (i, img) in images.iter().enumerate() {
        if img.pixels.dim() != (c, h, w) {
            return Err(Error::Dimension(format!(
                "image {} has shape {:?}, expected {:?}",
                i,
                img.pixels.dim(),
                (c, h, w)
            )));
        }
        out.index_axis_mut(ndarray::Axis(0), i).assign(&img.pixels);
    }
    Ok(out)
}

/// Translates each image with the fixed character id and zero noise, scores
/// the (input, generated) pair, and returns the argmax expression per image.
/// Deterministic: ties break toward the lowest class index.
pub fn recognize(
    gen: &Generator<f32>,
    dis: &Discriminator<f32>,
    character_index: usize,
    images: &[LabeledFaceImage],
) -> Result<Vec<Expression>> {
    let logits = recognition_logits(gen, dis, character_index, images, 0, 0)?;
    argmax_rows(&logits)
        .into_iter()
        .map(Expression::from_class_index)
        .collect()
}

/// Expression logits behind [`recognize`]. With `noise_samples` = 0 the
/// noise vector is all zeros; otherwise logits are averaged over that many
/// sampled noise vectors drawn from `noise_seed`.
pub fn recognition_logits(
    gen: &Generator<f32>,
    dis: &Discriminator<f32>,
    character_index: usize,
    images: &[LabeledFaceImage],
    noise_samples: usize,
    noise_seed: u64,
) -> Result<Array2<f32>> {
    let human = stack(images)?;
    let n = images.len();
    let identity = one_hot_rows(&vec![character_index; n], gen.cfg.n_characters)?;
    let rounds = noise_samples.max(1);
    let mut rng = ChaCha12Rng::seed_from_u64(noise_seed);
    let mut total: Option<Array2<f32>> = None;
    for _ in 0..rounds {
        let z = if noise_samples == 0 {
            Array2::zeros((n, gen.cfg.z_dim))
        } else {
            sample_noise(n, gen.cfg.z_dim, &mut rng)
        };
        let fake = gen.generate(&human, &identity, &z)?;
        let (_, logits) = dis.score(&human, &fake)?;
        total = Some(match total {
            None => logits,
            Some(t) => t + logits,
        });
    }
    Ok(total.unwrap() / rounds as f32)
}

/// Subject-to-fold assignment for identity-disjoint validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    /// Every subject in exactly one fold, fold sizes differing by at most 1.
    pub fn validate(&self) -> Result<()> {
        let mut sizes = vec![0usize; self.k];
        for &f in self.assignments.values() {
            if f >= self.k {
                return Err(Error::Usage(format!("fold index {} out of range", f)));
            }
            sizes[f] += 1;
        }
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        if hi - lo > 1 {
            return Err(Error::Usage(format!(
                "fold sizes unbalanced: min {}, max {}",
                lo, hi
            )));
        }
        Ok(())
    }

    pub fn subjects_in(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }
}

/// Seeded shuffle of the distinct human subject ids, then round-robin fold
/// assignment. Same seed, same plan.
pub fn make_folds(images: &[LabeledFaceImage], k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 {
        return Err(Error::Usage("fold count must be positive".into()));
    }
    let mut subjects: Vec<String> = images
        .iter()
        .filter(|img| img.domain == Domain::Human)
        .map(|img| img.subject_id.clone())
        .collect();
    subjects.sort();
    subjects.dedup();
    if subjects.len() < k {
        return Err(Error::Usage(format!(
            "{} subjects cannot fill {} folds",
            subjects.len(),
            k
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for i in (1..subjects.len()).rev() {
        let j = rng.gen_range(0..=i);
        subjects.swap(i, j);
    }
    let assignments = subjects
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s, i % k))
        .collect();
    let plan = FoldPlan { k, seed, assignments };
    plan.validate()?;
    Ok(plan)
}

/// Accuracy of one (run, fold) cell.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FoldAccuracy {
    pub run: usize,
    pub fold: usize,
    pub accuracy: f64,
}

/// Cross-validation outcome: per-cell accuracies, their mean, and a pooled
/// confusion matrix (rows true, columns predicted).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub runs: usize,
    pub run_seeds: Vec<u64>,
    pub fold_accuracies: Vec<FoldAccuracy>,
    pub mean_accuracy: f64,
    pub confusion: [[u64; 6]; 6],
}

impl MetricsReport {
    pub fn total_predictions(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.fold_accuracies.len() != self.k * self.runs {
            return Err(Error::Usage(format!(
                "{} fold accuracies for {} folds x {} runs",
                self.fold_accuracies.len(),
                self.k,
                self.runs
            )));
        }
        let mean = self.fold_accuracies.iter().map(|f| f.accuracy).sum::<f64>()
            / self.fold_accuracies.len() as f64;
        if mean != self.mean_accuracy {
            return Err(Error::Numeric("mean accuracy does not match its cells".into()));
        }
        Ok(())
    }
}

/// Identity-disjoint k-fold cross-validation, repeated `runs` times with
/// fresh fold shuffles and training seeds. Character images join every
/// training split; held-out evaluation sees human images only.
pub fn cross_validate(
    images: &[LabeledFaceImage],
    trainer: &dyn ClassifierTrainer,
    k: usize,
    runs: usize,
    seed: u64,
) -> Result<MetricsReport> {
    if runs == 0 {
        return Err(Error::Usage("run count must be positive".into()));
    }
    let mut fold_accuracies = Vec::new();
    let mut confusion = [[0u64; 6]; 6];
    let mut run_seeds = Vec::new();
    for run in 0..runs {
        let run_seed = derived_seed(seed, "run", run as u64);
        run_seeds.push(run_seed);
        let plan = make_folds(images, k, run_seed)?;
        plan.validate()?;
        for fold in 0..k {
            let held: Vec<&str> = plan.subjects_in(fold);
            let train: Vec<LabeledFaceImage> = images
                .iter()
                .filter(|img| {
                    img.domain == Domain::Character || !held.contains(&img.subject_id.as_str())
                })
                .cloned()
                .collect();
            let test: Vec<LabeledFaceImage> = images
                .iter()
                .filter(|img| {
                    img.domain == Domain::Human && held.contains(&img.subject_id.as_str())
                })
                .cloned()
                .collect();
            // Disjointness is structural but cheap to re-assert here, before
            // any training touches the split.
            for img in &train {
                if img.domain == Domain::Human && held.contains(&img.subject_id.as_str()) {
                    return Err(Error::Usage(format!(
                        "subject {} leaked into training of fold {}",
                        img.subject_id, fold
                    )));
                }
            }
            let model = trainer
                .fit(&train, derived_seed(run_seed, "fold", fold as u64))
                .map_err(|e| {
                    Error::Dataset(format!("training failed on run {run} fold {fold}: {e}"))
                })?;
            let predicted = model.classify(&test)?;
            let mut hits = 0usize;
            for (img, pred) in test.iter().zip(&predicted) {
                let t = img.expression.class_index().ok_or_else(|| {
                    Error::Dataset(format!("test image of {} has no class", img.subject_id))
                })?;
                let p = pred.class_index().ok_or_else(|| {
                    Error::Numeric("classifier returned a non-class expression".into())
                })?;
                confusion[t][p] += 1;
                if t == p {
                    hits += 1;
                }
            }
            fold_accuracies.push(FoldAccuracy {
                run,
                fold,
                accuracy: hits as f64 / test.len() as f64,
            });
        }
    }
    let mean_accuracy = fold_accuracies.iter().map(|f| f.accuracy).sum::<f64>()
        / fold_accuracies.len() as f64;
    let report = MetricsReport { k, runs, run_seeds, fold_accuracies, mean_accuracy, confusion };
    report.validate()?;
    Ok(report)
}

/// Trains the full adversarial pipeline and classifies through
/// generator + expression head.
pub struct GanClassifierTrainer {
    pub cfg: TrainConfig,
}

struct GanClassifier {
    gen: Generator<f32>,
    dis: Discriminator<f32>,
    character_index: usize,
}

impl ExpressionClassifier for GanClassifier {
    fn classify(&self, images: &[LabeledFaceImage]) -> Result<Vec<Expression>> {
        recognize(&self.gen, &self.dis, self.character_index, images)
    }
}

impl ClassifierTrainer for GanClassifierTrainer {
    fn fit(&self, train: &[LabeledFaceImage], seed: u64) -> Result<Box<dyn ExpressionClassifier>> {
        let mut cfg = self.cfg.clone();
        cfg.seed = seed;
        let data = DatasetIndex::build(train)?;
        let mut t = Trainer::new(&cfg)?;
        let dir = tempfile::tempdir()?;
        t.train(&data, dir.path())?;
        let character_index = data.character_index(&cfg.fixed_character)?;
        Ok(Box::new(GanClassifier { gen: t.gen, dis: t.dis, character_index }))
    }
}

/// Plain supervised 6-way convolutional classifier on the human images;
/// the comparison baseline for the adversarial pipeline.
pub struct CnnBaselineTrainer {
    /// Mirrors the discriminator trunk sizes of this model config.
    pub model: crate::model::ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

struct CnnBaseline {
    cfg: crate::model::ModelConfig,
    params: ParamSet<f32>,
}

impl CnnBaseline {
    fn new(cfg: &crate::model::ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let mut cin = cfg.channels;
        for (i, &cout) in cfg.trunk_channels.iter().enumerate() {
            params.add(
                &format!("c.conv{}.w", i),
                ndarray::ArrayD::zeros(ndarray::IxDyn(&[cout, cin, 4, 4])),
            )?;
            params.add(
                &format!("c.conv{}.b", i),
                ndarray::ArrayD::zeros(ndarray::IxDyn(&[cout])),
            )?;
            cin = cout;
        }
        params.add(
            "c.fc.w",
            ndarray::ArrayD::zeros(ndarray::IxDyn(&[cfg.head_hidden, cfg.bottleneck_len()])),
        )?;
        params.add("c.fc.b", ndarray::ArrayD::zeros(ndarray::IxDyn(&[cfg.head_hidden])))?;
        params.add(
            "c.out.w",
            ndarray::ArrayD::zeros(ndarray::IxDyn(&[6, cfg.head_hidden])),
        )?;
        params.add("c.out.b", ndarray::ArrayD::zeros(ndarray::IxDyn(&[6])))?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        params.init_normal(cfg.init_std, &mut rng);
        Ok(CnnBaseline { cfg: cfg.clone(), params })
    }

    fn logits_node(
        &self,
        g: &mut Graph<f32>,
        ids: &[crate::nn::VarId],
        x: crate::nn::VarId,
    ) -> Result<crate::nn::VarId> {
        let slope = self.cfg.leaky_slope;
        let mut h = x;
        for i in 0..self.cfg.n_blocks {
            let w = ids[self.params.index_of(&format!("c.conv{}.w", i))?];
            let b = ids[self.params.index_of(&format!("c.conv{}.b", i))?];
            h = g.conv2d(h, w, b, 2, 1)?;
            h = g.leaky_relu(h, slope)?;
        }
        let n = g.value(h).shape()[0];
        let flat = g.reshape(h, &[n, self.cfg.bottleneck_len()])?;
        let w = ids[self.params.index_of("c.fc.w")?];
        let b = ids[self.params.index_of("c.fc.b")?];
        let mut h = g.linear(flat, w, b)?;
        h = g.leaky_relu(h, slope)?;
        let w = ids[self.params.index_of("c.out.w")?];
        let b = ids[self.params.index_of("c.out.b")?];
        g.linear(h, w, b)
    }
}

impl ExpressionClassifier for CnnBaseline {
    fn classify(&self, images: &[LabeledFaceImage]) -> Result<Vec<Expression>> {
        let x = stack(images)?;
        let mut g = Graph::<f32>::new();
        let ids = self.params.bind(&mut g);
        let xv = g.input(x);
        let logits = self.logits_node(&mut g, &ids, xv)?;
        let rows = g
            .value(logits)
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|e| Error::Dimension(format!("baseline logits: {}", e)))?;
        argmax_rows(&rows)
            .into_iter()
            .map(Expression::from_class_index)
            .collect()
    }
}

impl ClassifierTrainer for CnnBaselineTrainer {
    fn fit(&self, train: &[LabeledFaceImage], seed: u64) -> Result<Box<dyn ExpressionClassifier>> {
        let humans: Vec<&LabeledFaceImage> =
            train.iter().filter(|i| i.domain == Domain::Human).collect();
        if humans.is_empty() {
            return Err(Error::Dataset("baseline training set has no human images".into()));
        }
        let mut model = CnnBaseline::new(&self.model, derived_seed(seed, "cnn.init", 0))?;
        let mut opt = AdamState::new(
            crate::nn::AdamConfig { lr: self.lr, ..crate::nn::AdamConfig::gan_default() },
            &model.params,
        );
        for epoch in 0..self.epochs {
            let mut rng = ChaCha12Rng::seed_from_u64(derived_seed(seed, "cnn.epoch", epoch as u64));
            let mut order: Vec<usize> = (0..humans.len()).collect();
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            for chunk in order.chunks(self.batch_size) {
                let batch: Vec<LabeledFaceImage> =
                    chunk.iter().map(|&i| humans[i].clone()).collect();
                let labels: Vec<usize> = batch
                    .iter()
                    .map(|img| img.expression.class_index().unwrap())
                    .collect();
                let x = stack(&batch)?;
                let mut g = Graph::<f32>::new();
                let ids = model.params.bind(&mut g);
                let xv = g.input(x);
                let logits = model.logits_node(&mut g, &ids, xv)?;
                let loss = g.cross_entropy_logits(logits, &labels)?;
                g.backward(loss)?;
                model.params.absorb_grads(&g, &ids);
                opt.step(&mut model.params)?;
            }
        }
        Ok(Box::new(model))
    }
}

/// Reads expressions straight from the synthetic corpus geometry. Training
/// is a no-op; substituting this for a learned model checks the
/// cross-validation harness itself.
pub struct OracleClassifierTrainer;

struct OracleClassifier;

impl ExpressionClassifier for OracleClassifier {
    fn classify(&self, images: &[LabeledFaceImage]) -> Result<Vec<Expression>> {
        images.iter().map(decode_expression).collect()
    }
}

impl ClassifierTrainer for OracleClassifierTrainer {
    fn fit(&self, _train: &[LabeledFaceImage], _seed: u64) -> Result<Box<dyn ExpressionClassifier>> {
        Ok(Box::new(OracleClassifier))
    }
}

/// Published full-scale results, kept as labeled context in reports. These
/// come from experiments on real datasets at 75x75 and are not reproduced
/// by the desk-scale pipeline.
pub const REFERENCE_RESULTS: [(&str, f64, f64); 3] = [
    ("CK+", 96.14, 90.34),
    ("MMI", 71.87, 58.46),
    ("Oulu-CASIA", 88.26, 73.14),
];

/// Writes `accuracy.csv`, `confusion.csv`, and `summary.txt` into `dir`.
/// Refuses an empty report before creating any file.
pub fn write_report(metrics: &MetricsReport, dir: &Path) -> Result<()> {
    metrics.validate()?;
    if metrics.fold_accuracies.is_empty() || metrics.total_predictions() == 0 {
        return Err(Error::Usage("refusing to write a report with no predictions".into()));
    }
    fs::create_dir_all(dir)?;

    let mut acc = String::from("run,fold,accuracy\n");
    for f in &metrics.fold_accuracies {
        acc.push_str(&format!("{},{},{}\n", f.run, f.fold, f.accuracy));
    }
    fs::write(dir.join("accuracy.csv"), acc)?;

    let mut conf = String::from("true\\predicted");
    for e in Expression::CLASSES {
        conf.push(',');
        conf.push_str(e.name());
    }
    conf.push('\n');
    for (t, row) in metrics.confusion.iter().enumerate() {
        conf.push_str(Expression::CLASSES[t].name());
        for v in row {
            conf.push_str(&format!(",{}", v));
        }
        conf.push('\n');
    }
    fs::write(dir.join("confusion.csv"), conf)?;

    let mut s = fs::File::create(dir.join("summary.txt"))?;
    writeln!(s, "six-class expression recognition, subject-disjoint cross-validation")?;
    writeln!(s, "folds: {}  runs: {}  run seeds: {:?}", metrics.k, metrics.runs, metrics.run_seeds)?;
    writeln!(s, "mean accuracy: {:.4}", metrics.mean_accuracy)?;
    writeln!(s, "total predictions: {}", metrics.total_predictions())?;
    writeln!(s)?;
    writeln!(s, "published full-scale results (reference only, NOT reproduced here;")?;
    writeln!(s, "real datasets, 75x75 inputs, 200 epochs):")?;
    writeln!(s, "  dataset      pipeline  cnn-baseline")?;
    for (name, ours, baseline) in REFERENCE_RESULTS {
        writeln!(s, "  {:<12} {:>7.2}  {:>12.2}", name, ours, baseline)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusSpec};
    use crate::model::ModelConfig;
    use tempfile::tempdir;

    fn corpus() -> Vec<LabeledFaceImage> {
        generate_corpus(&CorpusSpec {
            n_human_subjects: 10,
            n_characters: 2,
            images_per_cell: 1,
            image_size: (16, 16),
            seed: 31,
        })
        .unwrap()
    }

    #[test]
    fn folds_partition_subjects_evenly_and_reproducibly() {
        let images = corpus();
        let plan = make_folds(&images, 5, 9).unwrap();
        plan.validate().unwrap();
        assert_eq!(plan.assignments.len(), 10);
        for fold in 0..5 {
            assert_eq!(plan.subjects_in(fold).len(), 2);
        }
        let again = make_folds(&images, 5, 9).unwrap();
        assert_eq!(plan.assignments, again.assignments);
        let other = make_folds(&images, 5, 10).unwrap();
        assert_ne!(plan.assignments, other.assignments);
    }

    #[test]
    fn too_few_subjects_is_a_plan_error() {
        let images = corpus();
        assert!(make_folds(&images, 11, 0).is_err());
    }

    #[test]
    fn oracle_substitution_scores_a_perfect_harness_run() {
        let images = corpus();
        let report = cross_validate(&images, &OracleClassifierTrainer, 5, 2, 1).unwrap();
        assert_eq!(report.mean_accuracy, 1.0);
        assert_eq!(report.fold_accuracies.len(), 10);
        // 10 subjects x 6 expressions x 1 image, twice through all folds.
        assert_eq!(report.total_predictions(), 120);
        // Row sums match per-class counts and the diagonal holds everything.
        for (t, row) in report.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<u64>(), 20);
            assert_eq!(row[t], 20);
        }
    }

    #[test]
    fn recognition_is_deterministic_and_ignores_the_realism_head() {
        let images = corpus();
        let humans: Vec<LabeledFaceImage> = images
            .iter()
            .filter(|i| i.domain == Domain::Human)
            .take(8)
            .cloned()
            .collect();
        let mut cfg = ModelConfig::desk_default(2);
        cfg.image_size = 16;
        cfg.n_blocks = 3;
        cfg.trunk_channels = vec![8, 16, 32];
        let gen = Generator::<f32>::new(&cfg, 41).unwrap();
        let mut dis = Discriminator::<f32>::new(&cfg, 42).unwrap();
        let a = recognize(&gen, &dis, 0, &humans).unwrap();
        let b = recognize(&gen, &dis, 0, &humans).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|e| e.class_index().is_some()));

        // Scrambling the realism head must not move any prediction.
        for name in ["d.real0.w", "d.real0.b", "d.real1.w", "d.real1.b"] {
            let i = dis.params.index_of(name).unwrap();
            dis.params.entry_mut(i).value.iter_mut().for_each(|v| *v = -*v + 0.7);
        }
        let c = recognize(&gen, &dis, 0, &humans).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn noise_averaged_logits_differ_from_the_zero_noise_path() {
        let images = corpus();
        let humans: Vec<LabeledFaceImage> = images
            .iter()
            .filter(|i| i.domain == Domain::Human)
            .take(2)
            .cloned()
            .collect();
        let mut cfg = ModelConfig::desk_default(2);
        cfg.image_size = 16;
        cfg.n_blocks = 3;
        cfg.trunk_channels = vec![8, 16, 32];
        cfg.init_std = 0.1;
        let gen = Generator::<f32>::new(&cfg, 1).unwrap();
        let dis = Discriminator::<f32>::new(&cfg, 2).unwrap();
        let zero = recognition_logits(&gen, &dis, 0, &humans, 0, 0).unwrap();
        let avg = recognition_logits(&gen, &dis, 0, &humans, 3, 7).unwrap();
        assert_ne!(zero, avg);
        let again = recognition_logits(&gen, &dis, 0, &humans, 3, 7).unwrap();
        assert_eq!(avg, again);
    }

    #[test]
    fn cnn_baseline_learns_the_synthetic_classes() {
        let images = corpus();
        let mut model = ModelConfig::desk_default(2);
        model.image_size = 16;
        model.n_blocks = 2;
        model.trunk_channels = vec![8, 16];
        let trainer = CnnBaselineTrainer { model, epochs: 30, batch_size: 20, lr: 1e-3 };
        let humans: Vec<LabeledFaceImage> = images
            .iter()
            .filter(|i| i.domain == Domain::Human)
            .cloned()
            .collect();
        let fitted = trainer.fit(&humans, 3).unwrap();
        let predicted = fitted.classify(&humans).unwrap();
        let hits = humans
            .iter()
            .zip(&predicted)
            .filter(|(img, p)| img.expression == **p)
            .count();
        // Training-set fit only; generalization is covered by acceptance.
        assert!(hits as f64 / humans.len() as f64 > 0.9, "{} / {}", hits, humans.len());
    }

    #[test]
    fn report_files_carry_the_numbers() {
        let images = corpus();
        let report = cross_validate(&images, &OracleClassifierTrainer, 5, 1, 2).unwrap();
        let dir = tempdir().unwrap();
        let out = dir.path().join("report");
        write_report(&report, &out).unwrap();
        let acc = fs::read_to_string(out.join("accuracy.csv")).unwrap();
        assert_eq!(acc.lines().count(), 1 + 5);
        assert!(acc.starts_with("run,fold,accuracy"));
        let conf = fs::read_to_string(out.join("confusion.csv")).unwrap();
        assert_eq!(conf.lines().count(), 7);
        assert!(conf.contains("happiness"));
        let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
        assert!(summary.contains("96.14"));
        assert!(summary.contains("58.46"));
        assert!(summary.contains("NOT reproduced"));
    }

    #[test]
    fn empty_report_writes_nothing() {
        let empty = MetricsReport {
            k: 0,
            runs: 0,
            run_seeds: vec![],
            fold_accuracies: vec![],
            mean_accuracy: 0.0,
            confusion: [[0; 6]; 6],
        };
        let dir = tempdir().unwrap();
        let out = dir.path().join("report");
        assert!(write_report(&empty, &out).is_err());
        assert!(!out.exists());
    }
}
