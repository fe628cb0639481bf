//! Adam with bias correction, one moment pair per parameter entry.

use std::io::{Read, Write};

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::nn::graph::Scalar;
use crate::nn::params::ParamSet;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    /// lr 2e-4 with first-moment decay 0.5, the setting the training loop
    /// uses by default.
    pub fn gan_default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.5, beta2: 0.999, epsilon: 1e-8 }
    }
}

pub struct AdamState<T> {
    pub cfg: AdamConfig,
    pub step_count: u64,
    first_moment: Vec<ArrayD<T>>,
    second_moment: Vec<ArrayD<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(cfg: AdamConfig, params: &ParamSet<T>) -> Self {
        let first_moment = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        let second_moment = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        AdamState { cfg, step_count: 0, first_moment, second_moment }
    }

    /// One Adam update over all trainable entries. Gradients are consumed:
    /// they are zeroed after the step.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        if !params.grads_finite() {
            return Err(Error::Numeric("non-finite gradient passed to Adam".into()));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let one = T::one();
        let corr1 = T::from_f64(1.0 - self.cfg.beta1.powf(t));
        let corr2 = T::from_f64(1.0 - self.cfg.beta2.powf(t));
        let lr = T::from_f64(self.cfg.lr);
        let eps = T::from_f64(self.cfg.epsilon);

        for (i, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for ((mv, vv), (pv, gv)) in m
                .iter_mut()
                .zip(v.iter_mut())
                .zip(p.value.iter_mut().zip(p.grad.iter()))
            {
                let g = *gv;
                *mv = b1 * *mv + (one - b1) * g;
                *vv = b2 * *vv + (one - b2) * g * g;
                let m_hat = *mv / corr1;
                let v_hat = *vv / corr2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        params.zero_grads();
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.step_count.to_le_bytes())?;
        w.write_all(&(self.first_moment.len() as u32).to_le_bytes())?;
        for arr in self.first_moment.iter().chain(self.second_moment.iter()) {
            write_array(w, arr)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R, cfg: AdamConfig) -> Result<Self> {
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let step_count = u64::from_le_bytes(buf8);
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let count = u32::from_le_bytes(buf4) as usize;
        let mut arrays = Vec::with_capacity(2 * count);
        for _ in 0..2 * count {
            arrays.push(read_array::<R, T>(r)?);
        }
        let second_moment = arrays.split_off(count);
        Ok(AdamState { cfg, step_count, first_moment: arrays, second_moment })
    }
}

fn write_array<W: Write, T: Scalar>(w: &mut W, arr: &ArrayD<T>) -> Result<()> {
    w.write_all(&[arr.ndim() as u8])?;
    for &d in arr.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in arr.iter() {
        w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_array<R: Read, T: Scalar>(r: &mut R) -> Result<ArrayD<T>> {
    let mut ndim = [0u8; 1];
    r.read_exact(&mut ndim)?;
    let mut shape = Vec::with_capacity(ndim[0] as usize);
    for _ in 0..ndim[0] {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)?;
        shape.push(u32::from_le_bytes(buf) as usize);
    }
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)?;
        data.push(T::from_f64(f32::from_le_bytes(buf) as f64));
    }
    ArrayD::from_shape_vec(ndarray::IxDyn(&shape), data)
        .map_err(|e| Error::Checkpoint(format!("bad optimizer state shape: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr1;

    fn scalar_set(value: f64, grad: f64) -> ParamSet<f64> {
        let mut set = ParamSet::new();
        set.add("p", arr1(&[value]).into_dyn()).unwrap();
        set.entry_mut(0).grad.fill(grad);
        set
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        let mut set = scalar_set(0.0, 2.0);
        let cfg = AdamConfig::gan_default();
        let mut adam = AdamState::new(cfg, &set);
        adam.step(&mut set).unwrap();
        let p = set.entry(0).value[[0]];
        // |delta| = lr * |g| / (|g| + eps * sqrt(1 - beta2)) ~= lr
        assert_abs_diff_eq!(p, -cfg.lr, epsilon = 1e-9);
        assert_eq!(adam.step_count, 1);
        // gradient consumed
        assert_eq!(set.entry(0).grad[[0]], 0.0);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut set = scalar_set(0.7, 0.0);
        let mut adam = AdamState::new(AdamConfig::gan_default(), &set);
        adam.step(&mut set).unwrap();
        assert_eq!(set.entry(0).value[[0]], 0.7);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn matches_hand_rolled_recurrence_over_two_steps() {
        let cfg = AdamConfig { lr: 0.01, beta1: 0.5, beta2: 0.999, epsilon: 1e-8 };
        let g = 0.3f64;
        let mut set = scalar_set(1.0, g);
        let mut adam = AdamState::new(cfg, &set);

        // independent scalar recurrence
        let (mut m, mut v, mut p) = (0.0f64, 0.0f64, 1.0f64);
        for t in 1..=2u32 {
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t as i32));
            let v_hat = v / (1.0 - cfg.beta2.powi(t as i32));
            p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }

        adam.step(&mut set).unwrap();
        set.entry_mut(0).grad.fill(g);
        adam.step(&mut set).unwrap();
        assert_eq!(set.entry(0).value[[0]], p);
    }

    #[test]
    fn non_finite_gradient_is_an_optimizer_error() {
        let mut set = scalar_set(0.0, f64::NAN);
        let mut adam = AdamState::new(AdamConfig::gan_default(), &set);
        assert!(matches!(adam.step(&mut set), Err(Error::Numeric(_))));
    }

    #[test]
    fn frozen_entries_are_not_updated() {
        let mut set = ParamSet::<f64>::new();
        set.add_frozen("stat", arr1(&[1.0]).into_dyn()).unwrap();
        set.entry_mut(0).grad.fill(5.0);
        let mut adam = AdamState::new(AdamConfig::gan_default(), &set);
        adam.step(&mut set).unwrap();
        assert_eq!(set.entry(0).value[[0]], 1.0);
    }
}
