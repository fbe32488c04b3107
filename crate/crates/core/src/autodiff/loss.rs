//! Loss functions composed from differentiable primitives.

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Probability clamp used by [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

/// Zero-norm guard used by [`cosine_similarity`].
pub const COSINE_EPS: f64 = 1e-8;

fn same_shape<T: Element>(g: &Graph<T>, a: Var, t: &Tensor<T>, op: &'static str) -> Result<()> {
    if g.shape(a) != t.shape() {
        return Err(Error::shape(op, g.shape(a), t.shape()));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse_loss<T: Element>(g: &mut Graph<T>, prediction: Var, target: &Tensor<T>) -> Result<Var> {
    same_shape(g, prediction, target, "mse_loss")?;
    let t = g.constant(target.clone());
    let d = g.sub(prediction, t)?;
    let sq = g.mul(d, d)?;
    g.mean(sq)
}

/// Mean binary cross entropy; predictions are clamped to `[eps, 1 - eps]`.
pub fn bce_loss<T: Element>(g: &mut Graph<T>, prediction: Var, target: &Tensor<T>) -> Result<Var> {
    same_shape(g, prediction, target, "bce_loss")?;
    let p = g.clamp(prediction, BCE_EPS, 1.0 - BCE_EPS)?;
    let t = g.constant(target.clone());
    let one_minus_t = g.constant(target.map(|x| T::one() - x));
    let log_p = g.log(p)?;
    let q = g.neg(p)?;
    let q = g.add_scalar(q, 1.0)?;
    let log_q = g.log(q)?;
    let a = g.mul(t, log_p)?;
    let b = g.mul(one_minus_t, log_q)?;
    let s = g.add(a, b)?;
    let m = g.mean(s)?;
    g.neg(m)
}

/// KL divergence of `N(mu, exp(logvar))` from the standard normal, summed over
/// latent dimensions and averaged over the leading (batch) axis.
pub fn kl_div_gaussian<T: Element>(g: &mut Graph<T>, mu: Var, logvar: Var) -> Result<Var> {
    if g.shape(mu) != g.shape(logvar) {
        return Err(Error::shape("kl_div_gaussian", g.shape(mu), g.shape(logvar)));
    }
    let batch = g.shape(mu)[0] as f64;
    let mu2 = g.mul(mu, mu)?;
    let var = g.exp(logvar)?;
    let t = g.add_scalar(logvar, 1.0)?;
    let t = g.sub(t, mu2)?;
    let t = g.sub(t, var)?;
    let s = g.sum(t)?;
    g.mul_scalar(s, -0.5 / batch)
}

/// Cosine similarity between a differentiable vector and a constant one.
pub fn cosine_similarity<T: Element>(
    g: &mut Graph<T>,
    u: Var,
    v: &Tensor<T>,
    eps: f64,
) -> Result<Var> {
    cosine_similarity_parts(g, &[u], &[v], eps)
}

/// Cosine similarity of two vectors given as aligned lists of pieces, as if
/// each list were concatenated. The constant side `v` is never differentiated.
pub fn cosine_similarity_parts<T: Element>(
    g: &mut Graph<T>,
    u: &[Var],
    v: &[&Tensor<T>],
    eps: f64,
) -> Result<Var> {
    if eps <= 0.0 {
        return Err(Error::Invalid("cosine eps must be > 0".into()));
    }
    if u.len() != v.len() || u.is_empty() {
        return Err(Error::Invalid(format!(
            "cosine_similarity: {} pieces vs {}",
            u.len(),
            v.len()
        )));
    }
    let mut dot: Option<Var> = None;
    let mut sq: Option<Var> = None;
    let mut v_sq = 0.0;
    for (&ui, &vi) in u.iter().zip(v) {
        if g.value(ui).numel() != vi.numel() {
            return Err(Error::shape("cosine_similarity", g.shape(ui), vi.shape()));
        }
        let uf = g.flatten(ui)?;
        let vc = g.constant(vi.reshape(&[vi.numel()])?);
        let d = g.dot(uf, vc)?;
        let s = g.dot(uf, uf)?;
        dot = Some(match dot {
            None => d,
            Some(p) => g.add(p, d)?,
        });
        sq = Some(match sq {
            None => s,
            Some(p) => g.add(p, s)?,
        });
        let n = vi.l2_norm().as_f64();
        v_sq += n * n;
    }
    let (dot, sq) = (dot.expect("non-empty"), sq.expect("non-empty"));
    let v_norm = v_sq.sqrt().max(eps);
    let u_norm = g.value(sq).item().as_f64().sqrt();
    if u_norm >= eps {
        let n = g.sqrt(sq)?;
        let den = g.mul_scalar(n, v_norm)?;
        g.div(dot, den)
    } else {
        g.mul_scalar(dot, 1.0 / (eps * v_norm))
    }
}

/// Plain-value cosine similarity with the same guard as [`cosine_similarity_parts`].
pub fn cosine_value<T: Element>(u: &[&Tensor<T>], v: &[&Tensor<T>], eps: f64) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Invalid("cosine_value: piece count mismatch".into()));
    }
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a.dot(b)?.as_f64();
        let (na, nb) = (a.l2_norm().as_f64(), b.l2_norm().as_f64());
        uu += na * na;
        vv += nb * nb;
    }
    Ok(dot / (uu.sqrt().max(eps) * vv.sqrt().max(eps)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_t(d: &[f64]) -> Tensor<f64> {
        Tensor::vector(d.to_vec()).unwrap()
    }

    #[test]
    fn mse_fixtures() {
        let mut g = Graph::<f64>::new();
        let p = g.param(vec_t(&[1.0, 1.0]));
        let l = mse_loss(&mut g, p, &vec_t(&[0.0, 0.0])).unwrap();
        assert_eq!(g.value(l).item(), 1.0);
        let l0 = mse_loss(&mut g, p, &vec_t(&[1.0, 1.0])).unwrap();
        assert_eq!(g.value(l0).item(), 0.0);
        assert!(mse_loss(&mut g, p, &vec_t(&[1.0])).is_err());
    }

    #[test]
    fn bce_fixtures() {
        let mut g = Graph::<f64>::new();
        let p = g.param(vec_t(&[0.5, 0.5, 0.5]));
        let l = bce_loss(&mut g, p, &vec_t(&[0.0, 1.0, 1.0])).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
        let one = g.param(vec_t(&[1.0, 1.0]));
        let l = bce_loss(&mut g, one, &vec_t(&[1.0, 1.0])).unwrap();
        let v = g.value(l).item();
        assert!((0.0..=2.0 * BCE_EPS).contains(&v), "{v}");
    }

    #[test]
    fn kl_fixtures() {
        let mut g = Graph::<f64>::new();
        let z = g.param(Tensor::zeros(&[2, 3]).unwrap());
        let l = kl_div_gaussian(&mut g, z, z).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let mu = g.param(Tensor::full(&[1, 1], 1.0).unwrap());
        let lv = g.param(Tensor::zeros(&[1, 1]).unwrap());
        let l = kl_div_gaussian(&mut g, mu, lv).unwrap();
        assert!((g.value(l).item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cosine_fixtures() {
        let mut g = Graph::<f64>::new();
        let v = vec_t(&[1.0, -2.0, 3.0]);
        let u = g.param(v.clone());
        let c = cosine_similarity(&mut g, u, &v, COSINE_EPS).unwrap();
        assert!((g.value(c).item() - 1.0).abs() < 1e-15);
        let c = cosine_similarity(&mut g, u, &v.map(|x| -x), COSINE_EPS).unwrap();
        assert!((g.value(c).item() + 1.0).abs() < 1e-15);
        let e1 = g.param(vec_t(&[1.0, 0.0]));
        let c = cosine_similarity(&mut g, e1, &vec_t(&[0.0, 1.0]), COSINE_EPS).unwrap();
        assert_eq!(g.value(c).item(), 0.0);
    }

    #[test]
    fn cosine_of_zero_vector_is_zero_with_finite_gradient() {
        let mut g = Graph::<f64>::new();
        let u = g.param(vec_t(&[0.0, 0.0]));
        let c = cosine_similarity(&mut g, u, &vec_t(&[1.0, 1.0]), COSINE_EPS).unwrap();
        assert_eq!(g.value(c).item(), 0.0);
        let d = g.grad(c, &[u], false).unwrap().grads[0];
        assert!(g.value(d).is_finite());
    }

    #[test]
    fn parts_equal_concatenation() {
        let mut g = Graph::<f64>::new();
        let a = g.param(vec_t(&[1.0, 2.0]));
        let b = g.param(vec_t(&[-3.0]));
        let va = vec_t(&[0.5, 0.1]);
        let vb = vec_t(&[2.0]);
        let c = cosine_similarity_parts(&mut g, &[a, b], &[&va, &vb], COSINE_EPS).unwrap();
        let whole = g.param(vec_t(&[1.0, 2.0, -3.0]));
        let c2 = cosine_similarity(&mut g, whole, &vec_t(&[0.5, 0.1, 2.0]), COSINE_EPS).unwrap();
        assert!((g.value(c).item() - g.value(c2).item()).abs() < 1e-15);
        let plain = cosine_value(&[&vec_t(&[1.0, 2.0]), &vec_t(&[-3.0])], &[&va, &vb], COSINE_EPS).unwrap();
        assert!((plain - g.value(c).item()).abs() < 1e-15);
    }
}
