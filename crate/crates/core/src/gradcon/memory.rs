use crate::autodiff::loss::{cosine_similarity_parts, COSINE_EPS};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::tensor::{Element, Tensor};

/// Running average of one decoder layer's gradient, flattened.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMemory<T: Element = f64> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Element> LayerMemory<T> {
    pub fn pieces(&self) -> Vec<&Tensor<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }
}

/// Per-decoder-layer cumulative mean of training gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMemory<T: Element = f64> {
    layers: Vec<LayerMemory<T>>,
    count: u64,
}

impl<T: Element> GradientMemory<T> {
    /// Empty memory sized for `model`'s decoder.
    pub fn for_model(model: &ModelParams<T>, include_bias: bool) -> Self {
        let layers = model
            .decoder
            .iter()
            .map(|l| LayerMemory {
                weight: Tensor::zeros(&[l.weight.numel()]).expect("non-empty weight"),
                bias: match (&l.bias, include_bias) {
                    (Some(b), true) => Some(Tensor::zeros(&[b.numel()]).expect("non-empty bias")),
                    _ => None,
                },
            })
            .collect();
        GradientMemory { layers, count: 0 }
    }

    pub fn from_parts(layers: Vec<LayerMemory<T>>, count: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invalid("gradient memory needs at least one layer".into()));
        }
        let with_bias = layers[0].bias.is_some();
        if layers.iter().any(|l| l.bias.is_some() != with_bias) {
            return Err(Error::Invalid("gradient memory layers disagree on bias inclusion".into()));
        }
        Ok(GradientMemory { layers, count })
    }

    /// Number of accumulated iterations.
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerMemory<T>] {
        &self.layers
    }

    pub fn include_bias(&self) -> bool {
        self.layers.first().is_some_and(|l| l.bias.is_some())
    }

    /// Checks that this memory belongs to `model`'s decoder.
    pub fn check_model(&self, model: &ModelParams<T>) -> Result<()> {
        let ok = self.layers.len() == model.decoder.len()
            && self.layers.iter().zip(&model.decoder).all(|(m, l)| {
                m.weight.numel() == l.weight.numel()
                    && match (&m.bias, &l.bias) {
                        (Some(mb), Some(lb)) => mb.numel() == lb.numel(),
                        (Some(_), None) => false,
                        _ => true,
                    }
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid("gradient memory does not match the model's decoder".into()))
        }
    }

    pub fn cast<U: Element>(&self) -> GradientMemory<U> {
        GradientMemory {
            layers: self
                .layers
                .iter()
                .map(|l| LayerMemory {
                    weight: l.weight.cast(),
                    bias: l.bias.as_ref().map(Tensor::cast),
                })
                .collect(),
            count: self.count,
        }
    }

    /// Folds one iteration's per-layer gradients into the cumulative mean:
    /// `avg_k = avg_{k-1} + (g - avg_{k-1}) / k`.
    pub fn update(&mut self, grads: &[Vec<&Tensor<T>>]) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(Error::Invalid(format!(
                "memory update with {} layers, memory has {}",
                grads.len(),
                self.layers.len()
            )));
        }
        for (l, g) in self.layers.iter().zip(grads) {
            let pieces = l.pieces();
            if pieces.len() != g.len() || pieces.iter().zip(g).any(|(p, q)| p.numel() != q.numel()) {
                return Err(Error::Invalid("memory update: layer sizes differ".into()));
            }
        }
        let k = T::of((self.count + 1) as f64);
        for (l, g) in self.layers.iter_mut().zip(grads) {
            let targets = std::iter::once(&mut l.weight).chain(l.bias.as_mut());
            for (avg, grad) in targets.zip(g) {
                for (a, &x) in avg.data_mut().iter_mut().zip(grad.data()) {
                    *a = *a + (x - *a) / k;
                }
            }
        }
        self.count += 1;
        Ok(())
    }
}

/// `-mean_i cos(avg_i, current_i)` over decoder layers; the memory side is a constant.
///
/// `current[i]` holds the gradient pieces of layer `i` (weight, then bias when
/// the memory tracks biases).
pub fn gradient_loss<T: Element>(
    g: &mut Graph<T>,
    memory: &GradientMemory<T>,
    current: &[Vec<Var>],
) -> Result<Var> {
    if memory.count() == 0 {
        return Err(Error::Invalid(
            "gradient memory is empty; the cold-start rule applies".into(),
        ));
    }
    if current.len() != memory.num_layers() {
        return Err(Error::Invalid(format!(
            "gradient_loss: {} layers vs {} in memory",
            current.len(),
            memory.num_layers()
        )));
    }
    let mut total: Option<Var> = None;
    for (pieces, layer) in current.iter().zip(memory.layers()) {
        let c = cosine_similarity_parts(g, pieces, &layer.pieces(), COSINE_EPS)?;
        total = Some(match total {
            None => c,
            Some(t) => g.add(t, c)?,
        });
    }
    let total = total.expect("at least one layer");
    g.mul_scalar(total, -1.0 / current.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn memory_with(avgs: &[&[f64]]) -> GradientMemory<f64> {
        let layers = avgs
            .iter()
            .map(|a| LayerMemory {
                weight: Tensor::vector(a.to_vec()).unwrap(),
                bias: None,
            })
            .collect();
        GradientMemory::from_parts(layers, 1).unwrap()
    }

    #[test]
    fn identical_gradients_give_minus_one() {
        let mem = memory_with(&[&[1.0, 2.0], &[-1.0, 0.5, 3.0]]);
        let mut g = Graph::<f64>::new();
        let cur: Vec<Vec<Var>> = mem
            .layers()
            .iter()
            .map(|l| vec![g.param(l.weight.clone())])
            .collect();
        let l = gradient_loss(&mut g, &mem, &cur).unwrap();
        assert!((g.value(l).item() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_gradients_give_zero() {
        let mem = memory_with(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::vector(vec![0.0, 3.0]).unwrap());
        let b = g.param(Tensor::vector(vec![2.0, 0.0]).unwrap());
        let l = gradient_loss(&mut g, &mem, &[vec![a], vec![b]]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn mixed_layers_average() {
        let mem = memory_with(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::vector(vec![5.0, 0.0]).unwrap());
        let b = g.param(Tensor::vector(vec![0.0, 1.0]).unwrap());
        let l = gradient_loss(&mut g, &mem, &[vec![a], vec![b]]).unwrap();
        assert_eq!(g.value(l).item(), -0.5);
    }

    #[test]
    fn empty_memory_and_misalignment_rejected() {
        let mut mem = memory_with(&[&[1.0]]);
        mem.count = 0;
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::vector(vec![1.0]).unwrap());
        assert!(gradient_loss(&mut g, &mem, &[vec![a]]).is_err());
        mem.count = 1;
        assert!(gradient_loss(&mut g, &mem, &[vec![a], vec![a]]).is_err());
    }

    #[test]
    fn cumulative_mean_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mem = memory_with(&[&[0.0; 4], &[0.0; 3]]);
        mem.count = 0;
        let mut history: Vec<Vec<Vec<f64>>> = Vec::new();
        for _ in 0..50 {
            let step: Vec<Vec<f64>> = [4usize, 3]
                .iter()
                .map(|&n| (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect())
                .collect();
            let tensors: Vec<Tensor<f64>> = step.iter().map(|v| Tensor::vector(v.clone()).unwrap()).collect();
            mem.update(&tensors.iter().map(|t| vec![t]).collect::<Vec<_>>()).unwrap();
            history.push(step);
            for (li, layer) in mem.layers().iter().enumerate() {
                for (j, &avg) in layer.weight.data().iter().enumerate() {
                    let brute = history.iter().map(|h| h[li][j]).sum::<f64>() / history.len() as f64;
                    assert!((avg - brute).abs() < 1e-12);
                }
            }
        }
        assert_eq!(mem.count(), 50);
    }
}
