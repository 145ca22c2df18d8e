use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Scale every gradient by `max_norm / g` when the global L2 norm `g`
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Config(format!("clip norm {max_norm} must be positive")));
    }
    for g in grads.iter() {
        g.ensure_finite("gradient")?;
    }
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_assign(s);
        }
    }
    Ok(norm)
}

/// `lr_min + (lr_max - lr_min) * (1 + cos(pi t / T)) / 2`.
pub fn cosine_anneal_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if t > total {
        return Err(Error::Config(format!("step {t} beyond schedule length {total}")));
    }
    let phase = std::f64::consts::PI * t as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// One AdamW update at step `t >= 1` with decoupled weight decay.
pub fn adamw_step(
    w: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    hp: &AdamWHyper,
) {
    assert!(t >= 1, "AdamW steps start at 1");
    let c1 = 1.0 - hp.beta1.powi(t as i32);
    let c2 = 1.0 - hp.beta2.powi(t as i32);
    for i in 0..w.len() {
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        w[i] -= lr * (mh / (vh.sqrt() + hp.eps) + hp.weight_decay * w[i]);
    }
}

/// Moment buffers for a list of tensors.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub hyper: AdamWHyper,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamW {
    pub fn new(hyper: AdamWHyper, shapes: &[[usize; 2]]) -> Self {
        let zeros = || shapes.iter().map(|s| Tensor::zeros(s[0], s[1])).collect();
        Self {
            hyper,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Update the tensors whose `mask` entry is true.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64, mask: &[bool]) {
        self.t += 1;
        for (i, p) in params.iter_mut().enumerate() {
            if !mask[i] {
                continue;
            }
            adamw_step(
                p.data_mut(),
                grads[i].data(),
                self.m[i].data_mut(),
                self.v[i].data_mut(),
                self.t,
                lr,
                &self.hyper,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::row_vector(&[0.3, 0.4])];
        clip_gradients(&mut g, 1.0).unwrap();
        assert_eq!(g[0].data(), &[0.3, 0.4]);
        let mut g = vec![Tensor::row_vector(&[3.0]), Tensor::row_vector(&[4.0])];
        assert_eq!(clip_gradients(&mut g, 1.0).unwrap(), 5.0);
        assert!((g[0].item() - 0.6).abs() < 1e-15 && (g[1].item() - 0.8).abs() < 1e-15);
        let mut bad = vec![Tensor::row_vector(&[1.0])];
        bad[0].data_mut()[0] = f64::NAN;
        assert!(matches!(clip_gradients(&mut bad, 1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn schedule() {
        assert_eq!(cosine_anneal_lr(0, 10, 2e-3, 0.0).unwrap(), 2e-3);
        assert!(cosine_anneal_lr(10, 10, 2e-3, 1e-4).unwrap() - 1e-4 < 1e-18);
        assert!((cosine_anneal_lr(5, 10, 2e-3, 1e-4).unwrap() - 1.05e-3).abs() < 1e-15);
        assert!(matches!(cosine_anneal_lr(0, 0, 1.0, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn adamw_cases() {
        let hp0 = AdamWHyper {
            weight_decay: 0.0,
            ..AdamWHyper::default()
        };
        let (mut w, mut m, mut v) = (vec![0.7], vec![0.0], vec![0.0]);
        adamw_step(&mut w, &[0.0], &mut m, &mut v, 1, 2e-3, &hp0);
        assert_eq!(w, vec![0.7]);

        let hp = AdamWHyper::default();
        let (mut w, mut m, mut v) = (vec![1.0], vec![0.0], vec![0.0]);
        adamw_step(&mut w, &[0.0], &mut m, &mut v, 1, 2e-3, &hp);
        assert!((w[0] - (1.0 - 2e-7)).abs() < 1e-16);

        let (mut w, mut m, mut v) = (vec![0.0], vec![0.0], vec![0.0]);
        adamw_step(&mut w, &[1.0], &mut m, &mut v, 1, 2e-3, &hp);
        assert!((w[0] + 2e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn masked_tensors_stay_put() {
        let mut params = vec![Tensor::row_vector(&[1.0]), Tensor::row_vector(&[1.0])];
        let grads = vec![Tensor::row_vector(&[1.0]), Tensor::row_vector(&[1.0])];
        let mut opt = AdamW::new(AdamWHyper::default(), &[[1, 1], [1, 1]]);
        opt.step(&mut params, &grads, 0.1, &[true, false]);
        assert!(params[0].item() < 1.0);
        assert_eq!(params[1].item(), 1.0);
        assert_eq!(opt.steps(), 1);
    }
}
