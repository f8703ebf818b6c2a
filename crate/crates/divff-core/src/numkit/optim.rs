use super::tensor::Tensor;
use super::{NumError, Result};
use crate::real::Real;

/// Adam with bias correction. One state pair per parameter tensor; the step
/// counter is shared across the group.
pub struct Adam<T> {
    beta1: T,
    beta2: T,
    eps: T,
    step: u64,
    moments: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(param_shapes: &[Vec<usize>]) -> Self {
        Self::with_hyperparams(param_shapes, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(param_shapes: &[Vec<usize>], beta1: f64, beta2: f64, eps: f64) -> Self {
        let moments =
            param_shapes.iter().map(|s| (Tensor::zeros(s), Tensor::zeros(s))).collect();
        Self {
            beta1: T::of(beta1),
            beta2: T::of(beta2),
            eps: T::of(eps),
            step: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.moments.iter().map(|(m, _)| m)
    }

    /// One update over aligned (params, grads). Any non-finite gradient aborts
    /// the step before touching parameters or moments.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.moments.len() {
            return Err(NumError::Invalid(format!(
                "adam group sizes: {} params, {} grads, {} states",
                params.len(),
                grads.len(),
                self.moments.len()
            )));
        }
        for (slot, g) in grads.iter().enumerate() {
            if !g.all_finite() {
                return Err(NumError::NonFinite(format!(
                    "gradient for parameter #{slot} (shape {:?}) at adam step {}",
                    g.shape(),
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let lr = T::of(lr);
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let one = T::one();
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.moments.iter_mut()) {
            for (((pv, &gv), mv), vv) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (one - self.beta1) * gv;
                *vv = self.beta2 * *vv + (one - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `base_lr` down to `min_lr` over `total_steps`.
#[derive(Clone, Copy, Debug)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(base_lr: f64, min_lr: f64, total_steps: u64) -> Self {
        Self { base_lr, min_lr, total_steps }
    }

    pub fn lr(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.base_lr;
        }
        let s = (step.min(self.total_steps)) as f64 / self.total_steps as f64;
        self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * s).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::<f64>::from_vec(vec![1.0, -2.0])];
        let grads = vec![Tensor::<f64>::zeros(&[2])];
        let mut adam = Adam::new(&[vec![2]]);
        // Seed a nonzero moment, then feed zero grads: moments decay, params hold.
        adam.step(&mut params, &[Tensor::from_vec(vec![1.0, 1.0])], 0.0).unwrap();
        let m0: Vec<f64> = adam.first_moments().next().unwrap().data().to_vec();
        adam.step(&mut params, &grads, 0.0).unwrap();
        let m1: Vec<f64> = adam.first_moments().next().unwrap().data().to_vec();
        assert!(m1[0].abs() < m0[0].abs());
        assert_eq!(params[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut params = vec![Tensor::<f64>::from_vec(vec![0.5])];
        let grads = vec![Tensor::<f64>::from_vec(vec![2.0])];
        let mut adam = Adam::new(&[vec![1]]);
        for _ in 0..50 {
            adam.step(&mut params, &grads, 5e-4).unwrap();
        }
        assert!(params[0].data()[0] < 0.5);
    }

    #[test]
    fn quadratic_bowl_shrinks() {
        let mut params = vec![Tensor::<f64>::from_vec(vec![1.0, -0.7, 0.3])];
        let mut adam = Adam::new(&[vec![3]]);
        let start = params[0].norm();
        for _ in 0..200 {
            let g = params[0].map(|x| 2.0 * x);
            adam.step(&mut params, &[g], 5e-4).unwrap();
        }
        assert!(params[0].norm() < start);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut params = vec![Tensor::<f64>::from_vec(vec![1.0])];
        let grads = vec![Tensor::<f64>::from_vec(vec![f64::NAN])];
        let mut adam = Adam::new(&[vec![1]]);
        let err = adam.step(&mut params, &grads, 1e-3).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
        assert_eq!(params[0].data(), &[1.0]);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn cosine_schedule_endpoints_and_monotone() {
        let s = CosineSchedule::new(5e-4, 5e-6, 100);
        assert_eq!(s.lr(0), 5e-4);
        assert!((s.lr(100) - 5e-6).abs() < 1e-18);
        let mut prev = s.lr(0);
        for step in 1..=100 {
            let cur = s.lr(step);
            assert!(cur <= prev + 1e-15);
            prev = cur;
        }
    }
}
