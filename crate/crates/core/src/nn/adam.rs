use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for a fixed list of parameters.
#[derive(Clone, Debug)]
pub struct AdamState<T: Element = f64> {
    pub config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()).expect("parameter shapes are valid"))
            .collect();
        AdamState {
            config,
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Invalid(format!(
                "adam: {} moments, {} params, {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
            if p.shape() != m.shape() {
                return Err(Error::shape("adam_step", p.shape(), m.shape()));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        for _ in 0..3 {
            adam.update(&mut [&mut p], &[Tensor::zeros(&[3]).unwrap()]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(adam.step_count(), 3);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::scalar(0.0f64);
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        adam.update(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        assert!((p.item() + 1e-3).abs() < 1e-10, "{}", p.item());
    }

    #[test]
    fn descends_a_quadratic_bowl() {
        // f(p) = sum (p - c)^2
        let c = [0.3, -1.2, 2.0];
        let mut p = Tensor::<f64>::from_f64(&[3], &[1.0, 1.0, 1.0]).unwrap();
        let loss = |p: &Tensor<f64>| p.data().iter().zip(c).map(|(x, c)| (x - c) * (x - c)).sum::<f64>();
        let mut adam = AdamState::new(AdamConfig { lr: 0.05, ..Default::default() }, [&p]);
        let mut prev = loss(&p);
        for _ in 0..10 {
            let g = Tensor::new(&[3], p.data().iter().zip(c).map(|(x, c)| 2.0 * (x - c)).collect()).unwrap();
            adam.update(&mut [&mut p], &[g]).unwrap();
            let now = loss(&p);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn misaligned_gradients_rejected() {
        let mut p = Tensor::<f64>::zeros(&[2]).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        assert!(adam.update(&mut [&mut p], &[Tensor::zeros(&[3]).unwrap()]).is_err());
        assert!(adam.update(&mut [&mut p], &[]).is_err());
        assert_eq!(adam.step_count(), 0);
    }
}
