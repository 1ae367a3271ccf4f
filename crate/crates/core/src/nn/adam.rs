use super::layers::Param;
use super::real::Real;

/// Adam with bias correction; one moment pair per parameter tensor, matched by visit order.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-7,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter, in the given order.
    pub fn update<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param<T>>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step_size = T::lit(self.lr * bc2.sqrt() / bc1);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one, eps_hat) = (T::one(), T::lit(self.eps * bc2.sqrt()));
        for (slot, p) in params.into_iter().enumerate() {
            if slot == self.moments.len() {
                self.moments.push((vec![T::zero(); p.len()], vec![T::zero(); p.len()]));
            }
            let (m, v) = &mut self.moments[slot];
            assert_eq!(m.len(), p.len(), "parameter set changed between steps");
            for ((w, &g), (mi, vi)) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut().zip(v.iter_mut())) {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                *w = *w - step_size * *mi / (vi.sqrt() + eps_hat);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Param::new("w", vec![2], vec![1.0f64, -1.0]);
        p.grad = vec![0.5, -3.0];
        let mut opt = Adam::new(1e-3, 0.9, 0.999);
        opt.update([&mut p]);
        assert!((p.value[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p.value[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::new("w", vec![1], vec![5.0f64]);
        let mut opt = Adam::new(0.1, 0.9, 0.999);
        for _ in 0..500 {
            p.grad[0] = 2.0 * (p.value[0] - 2.0);
            opt.update([&mut p]);
        }
        assert!((p.value[0] - 2.0).abs() < 1e-2);
    }
}
