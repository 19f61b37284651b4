//! Adam optimizer over lists of parameter tensors.

use crate::tensor::Tensor;

/// One Adam instance per parameter set (denoiser or encoder). Moment vectors
/// are parallel to the model's declared parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed update count (bias correction uses step+1).
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(sizes: &[usize], lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// Apply one descent update with the base learning rate scaled by
    /// `lr_scale` (schedules live in the caller). `grads[i] = None` leaves
    /// slot i untouched (both the parameter and its moments), which is how
    /// freeze masks work.
    pub fn apply_scaled(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Option<&Tensor>],
        lr_scale: f64,
    ) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let lr = self.lr * lr_scale;
        for (i, p) in params.iter_mut().enumerate() {
            let g = match grads[i] {
                Some(g) => g.data(),
                None => continue,
            };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = p.data_mut();
            for j in 0..data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    pub fn apply(&mut self, params: &mut [&mut Tensor], grads: &[Option<&Tensor>]) {
        self.apply_scaled(params, grads, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        // f(x) = (x - 3)², gradient 2(x - 3)
        let mut x = Tensor::scalar(0.0);
        let mut opt = Adam::new(&[1], 0.1);
        for _ in 0..500 {
            let g = Tensor::scalar(2.0 * (x.data()[0] - 3.0));
            opt.apply(&mut [&mut x], &[Some(&g)]);
        }
        assert!((x.data()[0] - 3.0).abs() < 1e-3, "x = {}", x.data()[0]);
    }

    #[test]
    fn masked_slot_is_untouched() {
        let mut a = Tensor::scalar(1.0);
        let mut b = Tensor::scalar(1.0);
        let mut opt = Adam::new(&[1, 1], 0.1);
        let g = Tensor::scalar(0.5);
        opt.apply(&mut [&mut a, &mut b], &[Some(&g), None]);
        assert_ne!(a.data()[0], 1.0);
        assert_eq!(b.data()[0], 1.0);
        assert_eq!(opt.m[1], vec![0.0]);
        assert_eq!(opt.v[1], vec![0.0]);
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let mut x = Tensor::new(vec![2], vec![0.3, -0.2]).unwrap();
            let mut opt = Adam::new(&[2], 1e-3);
            for k in 0..50 {
                let g = Tensor::new(vec![2], vec![(k as f64).sin(), (k as f64).cos()]).unwrap();
                opt.apply(&mut [&mut x], &[Some(&g)]);
            }
            x.data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
