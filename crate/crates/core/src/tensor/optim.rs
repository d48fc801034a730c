use super::Tensor;
use crate::error::{ensure, Result};

/// Adam with bias correction. Keeps one pair of moment buffers per parameter
/// slot; slots are identified by their position in the slice passed to
/// [`step`](Adam::step).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        ensure!(
            params.len() == grads.len(),
            "adam: {} params but {} gradients",
            params.len(),
            grads.len()
        );
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        }
        ensure!(
            self.first.len() == params.len(),
            "adam: parameter count changed between steps"
        );
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            ensure!(
                p.shape() == g.shape(),
                "adam: gradient shape {:?} for parameter {:?}",
                g.shape(),
                p.shape()
            );
            let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
            for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(0.1);
        let mut p = Tensor::vector(vec![1.0, -1.0]).unwrap();
        let g = Tensor::vector(vec![3.0, -0.5]).unwrap();
        adam.step(&mut [&mut p], &[&g]).unwrap();
        // bias-corrected first step is lr * sign(g)
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimises_quadratic() {
        let mut adam = Adam::new(0.05);
        let mut p = Tensor::vector(vec![4.0]).unwrap();
        for _ in 0..2000 {
            let g = Tensor::vector(vec![2.0 * (p.data()[0] - 1.5)]).unwrap();
            adam.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert!((p.data()[0] - 1.5).abs() < 1e-3);
    }
}
