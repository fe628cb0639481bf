//! Central finite-difference verification of the analytic backward pass.
//!
//! Runs in `f64`; at `f32` the difference quotient drowns in rounding noise.

use ndarray::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, VarId};
use crate::nn::params::ParamSet;

/// Default kink clearance for [`nudge_off_kinks`].
pub const KINK_MARGIN: f64 = 1e-2;

/// Default probe step for central differences.
pub const FD_STEP: f64 = 1e-3;
/// Default acceptance tolerance on the max relative error.
pub const FD_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct BlockError {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() <= tol
    }
}

/// Compares, per trainable parameter block, the analytic gradient of the
/// scalar loss built by `build` against a central finite difference with
/// the given step. Frozen entries are skipped.
///
/// `build` must construct the loss from the bound parameter ids and nothing
/// else that varies between calls.
pub fn grad_check<F>(params: &mut ParamSet<f64>, step: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[VarId]) -> Result<VarId>,
{
    // Analytic pass.
    let mut g = Graph::new();
    let ids = params.bind(&mut g);
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<ArrayD<f64>> = ids.iter().map(|&id| g.grad(id).clone()).collect();

    let eval = |params: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let ids = params.bind(&mut g);
        let loss = build(&mut g, &ids)?;
        g.scalar(loss)
    };

    let mut report = GradCheckReport::default();
    for i in 0..params.len() {
        if !params.entry(i).trainable {
            continue;
        }
        let name = params.entry(i).name.clone();
        let mut max_rel = 0.0f64;
        for j in 0..params.entry(i).value.len() {
            let orig = params.entry(i).value.as_slice().unwrap()[j];
            params.entry_mut(i).value.as_slice_mut().unwrap()[j] = orig + step;
            let up = eval(params)?;
            params.entry_mut(i).value.as_slice_mut().unwrap()[j] = orig - step;
            let down = eval(params)?;
            params.entry_mut(i).value.as_slice_mut().unwrap()[j] = orig;
            let fd = (up - down) / (2.0 * step);
            let an = analytic[i].as_slice().unwrap()[j];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-2);
            max_rel = max_rel.max(rel);
        }
        report.blocks.push(BlockError { name, max_rel_err: max_rel });
    }
    Ok(report)
}

fn fill_uniform(shape: &[usize], rng: &mut ChaCha12Rng, lo: f64, hi: f64) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(ndarray::IxDyn(shape), || rng.gen_range(lo..hi))
}

/// Finite-difference check of one layer kind on randomized small shapes.
/// The probe loss is the mean squared distance of the layer output to a
/// fixed random target, so every output element receives a distinct
/// upstream gradient.
/// Shifts the bias behind every leaky-rectified layer so that no rectifier
/// input sits within `margin` of zero on the probe built by `build`.
///
/// A finite-difference step that pushes a pre-activation across the kink
/// measures a blend of the two slopes and no longer matches the analytic
/// gradient. Layers are fixed front to back, one layer per forward pass,
/// because an upstream shift moves every downstream pre-activation.
pub fn nudge_off_kinks<F>(params: &mut ParamSet<f64>, margin: f64, build: F) -> Result<()>
where
    F: Fn(&mut Graph<f64>, &[VarId]) -> Result<VarId>,
{
    for _ in 0..64 {
        let mut g = Graph::new();
        let ids = params.bind(&mut g);
        build(&mut g, &ids)?;
        let mut shifted = false;
        for (pre, bias) in g.rectifier_preactivations() {
            let Some(pi) = ids.iter().position(|&id| id == bias) else {
                continue;
            };
            let vals = g.value(pre).clone();
            if vals.ndim() < 2 {
                continue;
            }
            for c in 0..vals.shape()[1] {
                let chan = vals.index_axis(Axis(1), c);
                if chan.iter().all(|v| v.abs() >= margin) {
                    continue;
                }
                // Forbidden shifts form intervals of width 2*margin around
                // each negated pre-activation; pick the smallest shift that
                // clears them all.
                let centers: Vec<f64> = chan.iter().map(|v| -v).collect();
                let pad = margin * 1.5;
                let mut best: Option<f64> = None;
                for &cnt in &centers {
                    for cand in [cnt - pad, cnt + pad] {
                        let clear = centers.iter().all(|&o| (cand - o).abs() >= margin);
                        if clear && best.map_or(true, |b: f64| cand.abs() < b.abs()) {
                            best = Some(cand);
                        }
                    }
                }
                let delta = best.ok_or_else(|| {
                    Error::Numeric("no clear bias shift for a rectifier kink".into())
                })?;
                params.entry_mut(pi).value.as_slice_mut().unwrap()[c] += delta;
                shifted = true;
            }
            if shifted {
                break;
            }
        }
        if !shifted {
            return Ok(());
        }
    }
    Err(Error::Numeric(
        "rectifier inputs kept landing on their kinks".into(),
    ))
}

pub fn check_layer(kind: &str, seed: u64, step: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x6c61_7965);
    let n = rng.gen_range(1..3usize);
    let cin = rng.gen_range(1..3usize);
    let cout = rng.gen_range(1..3usize);
    let h = rng.gen_range(4..9usize);

    let mut params = ParamSet::<f64>::new();
    match kind {
        "conv" => {
            params.add("x", fill_uniform(&[n, cin, h, h], &mut rng, -1.0, 1.0))?;
            params.add("w", fill_uniform(&[cout, cin, 3, 3], &mut rng, -0.5, 0.5))?;
            params.add("b", fill_uniform(&[cout], &mut rng, -0.5, 0.5))?;
        }
        "transposed_conv" => {
            params.add("x", fill_uniform(&[n, cin, h / 2, h / 2], &mut rng, -1.0, 1.0))?;
            params.add("w", fill_uniform(&[cin, cout, 4, 4], &mut rng, -0.5, 0.5))?;
            params.add("b", fill_uniform(&[cout], &mut rng, -0.5, 0.5))?;
        }
        "fully_connected" => {
            params.add("x", fill_uniform(&[n, 5], &mut rng, -1.0, 1.0))?;
            params.add("w", fill_uniform(&[4, 5], &mut rng, -0.5, 0.5))?;
            params.add("b", fill_uniform(&[4], &mut rng, -0.5, 0.5))?;
        }
        "leaky_relu" | "relu" | "tanh" | "sigmoid" | "softmax" | "concat" | "reshape"
        | "cross_entropy" | "mean_abs" | "mean_neg_log" => {
            // softmax/cross_entropy want 2-d inputs; the rest take anything.
            // Keep inputs away from the relu kink and the |x| kink so the
            // two-sided difference quotient is valid.
            let shape: Vec<usize> = if matches!(kind, "softmax" | "cross_entropy") {
                vec![n, 6]
            } else {
                vec![n, 2, h]
            };
            let mut x = fill_uniform(&shape, &mut rng, -1.0, 1.0);
            x.mapv_inplace(|v| if v.abs() < 4.0 * step { v.signum() * 4.0 * step + v } else { v });
            params.add("x", x)?;
            if kind == "concat" {
                params.add("y", fill_uniform(&shape, &mut rng, -1.0, 1.0))?;
            }
            if kind == "mean_abs" {
                // keep |a - b| away from zero
                let y = params.get("x")?.mapv(|v| v + 1.0);
                params.add("y", y)?;
            }
            if kind == "mean_neg_log" {
                // probabilities strictly inside (0, 1)
                let x = fill_uniform(&shape, &mut rng, 0.1, 0.9);
                params.entry_mut(0).value = x;
            }
        }
        other => {
            return Err(crate::error::Error::Usage(format!("unknown layer kind {other:?}")));
        }
    }

    let target_shape: Vec<usize> = match kind {
        "conv" => {
            let ho = crate::nn::graph::conv_out_size(h, 3, 2, 1);
            vec![n, cout, ho, ho]
        }
        "transposed_conv" => {
            let ho = crate::nn::graph::conv_transpose_out_size(h / 2, 4, 2, 1);
            vec![n, cout, ho, ho]
        }
        "fully_connected" => vec![n, 4],
        "softmax" => vec![n, 6],
        "concat" => vec![n, 4, h],
        "reshape" => vec![n * 2 * h],
        "cross_entropy" | "mean_abs" | "mean_neg_log" => vec![],
        _ => vec![n, 2, h],
    };
    let target = fill_uniform(&target_shape, &mut rng, -1.0, 1.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..6usize)).collect();
    let kind = kind.to_string();

    grad_check(&mut params, step, move |g, ids| {
        let x = ids[0];
        let out = match kind.as_str() {
            "conv" => g.conv2d(x, ids[1], ids[2], 2, 1)?,
            "transposed_conv" => g.conv_transpose2d(x, ids[1], ids[2], 2, 1)?,
            "fully_connected" => g.linear(x, ids[1], ids[2])?,
            "leaky_relu" => g.leaky_relu(x, 0.2)?,
            "relu" => g.relu(x)?,
            "tanh" => g.tanh(x)?,
            "sigmoid" => g.sigmoid(x)?,
            "softmax" => {
                let flat = g.softmax(x)?;
                flat
            }
            "concat" => g.concat(&[x, ids[1]], 1)?,
            "reshape" => {
                let len = g.value(x).len();
                g.reshape(x, &[len])?
            }
            "cross_entropy" => return g.cross_entropy_logits(x, &labels),
            "mean_abs" => return g.mean_abs_diff(x, ids[1]),
            "mean_neg_log" => {
                let a = g.mean_neg_log(x)?;
                let b = g.mean_neg_log_one_minus(x)?;
                return g.add(a, b);
            }
            _ => unreachable!(),
        };
        let t = g.input(target.clone());
        g.mean_sq_diff(out, t)
    })
}

/// Every layer kind the networks are built from.
pub const LAYER_KINDS: [&str; 13] = [
    "conv",
    "transposed_conv",
    "fully_connected",
    "leaky_relu",
    "relu",
    "tanh",
    "sigmoid",
    "softmax",
    "concat",
    "reshape",
    "cross_entropy",
    "mean_abs",
    "mean_neg_log",
];

/// Runs [`check_layer`] for every layer kind over `seeds` random seeds and
/// returns the worst block per kind. Failures are reported, not raised.
pub fn layer_suite(seeds: u64, step: f64) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    for kind in LAYER_KINDS {
        let mut worst = 0.0f64;
        for seed in 0..seeds {
            let r = check_layer(kind, seed, step)?;
            worst = worst.max(r.max_rel_err());
        }
        report.blocks.push(BlockError { name: kind.to_string(), max_rel_err: worst });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_kind_matches_finite_differences() {
        for kind in LAYER_KINDS {
            for seed in 0..3 {
                let r = check_layer(kind, seed, FD_STEP).unwrap();
                assert!(
                    r.passes(FD_TOL),
                    "layer {kind} seed {seed}: max rel err {}",
                    r.max_rel_err()
                );
            }
        }
    }

    #[test]
    fn frozen_tensors_are_excluded_from_the_report() {
        let mut params = ParamSet::<f64>::new();
        params.add("w", ndarray::arr1(&[0.3, -0.2]).into_dyn()).unwrap();
        params.add_frozen("c", ndarray::arr1(&[1.0, 2.0]).into_dyn()).unwrap();
        let report = grad_check(&mut params, FD_STEP, |g, ids| {
            let s = g.add(ids[0], ids[1])?;
            let t = g.input(ndarray::arr1(&[0.0, 0.0]));
            g.mean_sq_diff(s, t)
        })
        .unwrap();
        assert_eq!(report.blocks.len(), 1);
        assert_eq!(report.blocks[0].name, "w");
        assert!(report.passes(FD_TOL));
    }

    #[test]
    fn corrupted_backward_rule_is_detected() {
        // Test double: the first build call (the analytic pass) records a
        // loss scaled by 2, so its backward rule disagrees with the
        // unscaled loss every finite-difference evaluation sees.
        use std::cell::Cell;
        let mut params = ParamSet::<f64>::new();
        params.add("w", ndarray::arr1(&[0.5]).into_dyn()).unwrap();
        let first = Cell::new(true);
        let report = grad_check(&mut params, FD_STEP, move |g, ids| {
            let t = g.input(ndarray::arr1(&[0.0]));
            let sq = g.mean_sq_diff(ids[0], t)?;
            if first.replace(false) {
                g.scale(sq, 2.0)
            } else {
                Ok(sq)
            }
        })
        .unwrap();
        assert!(
            report.max_rel_err() > 1000.0 * FD_TOL,
            "negative control not detected: {}",
            report.max_rel_err()
        );
    }
}
