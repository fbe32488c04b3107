//! Finite-difference oracles shared by the gradient tests and the acceptance runner.
#![allow(dead_code)]

use gradcon::autodiff::conv::{conv2d_forward, conv2d_transpose_forward, conv2d_weight_grad};
use gradcon::autodiff::{bce_loss, cosine_similarity, kl_div_gaussian, mse_loss, Graph, Var};
use gradcon::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const INSTANCES: u64 = 20;

pub type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

#[derive(Clone, Copy)]
pub enum Domain {
    /// Uniform in [-1, 1], kept 0.05 away from zero.
    AwayFromZero,
    Positive,
    Unit,
}

pub fn sample(rng: &mut ChaCha8Rng, shape: &[usize], domain: Domain) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| match domain {
            Domain::AwayFromZero => {
                let v: f64 = rng.gen_range(0.05..1.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            }
            Domain::Positive => rng.gen_range(0.5..2.0),
            Domain::Unit => rng.gen_range(0.05..0.95),
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Scalar `sum(f(inputs) * probe)` and its gradient with respect to every input.
fn evaluate(build: &Build, inputs: &[Tensor<f64>], probe: &Tensor<f64>, with_grad: bool) -> (f64, Vec<Tensor<f64>>) {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let p = g.constant(probe.clone());
    let weighted = g.mul(out, p).unwrap();
    let s = g.sum(weighted).unwrap();
    let value = g.value(s).item();
    if !with_grad {
        return (value, Vec::new());
    }
    let grads = g.grad(s, &vars, false).unwrap();
    (value, grads.grads.iter().map(|v| g.value(*v).clone()).collect())
}

pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) < 1e-12 {
        diff
    } else {
        diff / na.max(nb)
    }
}

pub struct Case {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub domains: Vec<Domain>,
    pub build: Build,
}

fn case(name: &'static str, shapes: &[&[usize]], domains: &[Domain], build: Build) -> Case {
    Case {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        domains: domains.to_vec(),
        build,
    }
}

/// Worst relative error between analytic and central-difference gradients over `INSTANCES` draws.
pub fn max_fd_error(c: &Case) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + c.name.len() as u64);
        let inputs: Vec<Tensor<f64>> = c.shapes.iter().zip(&c.domains).map(|(s, d)| sample(&mut rng, s, *d)).collect();
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = (c.build)(&mut g, &vars).unwrap();
        let out_shape = g.value(out).shape().to_vec();
        let probe = sample(&mut rng, &out_shape, Domain::AwayFromZero);
        let (_, analytic) = evaluate(&c.build, &inputs, &probe, true);
        for (k, input) in inputs.iter().enumerate() {
            let mut numeric = Vec::with_capacity(input.numel());
            for i in 0..input.numel() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += H;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= H;
                let fp = evaluate(&c.build, &plus, &probe, false).0;
                let fm = evaluate(&c.build, &minus, &probe, false).0;
                numeric.push((fp - fm) / (2.0 * H));
            }
            worst = worst.max(rel_error(analytic[k].data(), &numeric));
        }
    }
    worst
}

const V: &[usize] = &[2, 3];
const IMG: &[usize] = &[2, 2, 5, 5];

/// Every differentiable primitive and loss, with input shapes and sampling domains.
pub fn cases() -> Vec<Case> {
    use Domain::*;
    let t = sample(&mut ChaCha8Rng::seed_from_u64(99), IMG, Unit);
    let t2 = t.clone();
    let c = sample(&mut ChaCha8Rng::seed_from_u64(98), &[7], AwayFromZero);
    let az = AwayFromZero;
    vec![
        case("add", &[V, V], &[az, az], Box::new(|g, v| g.add(v[0], v[1]))),
        case("sub", &[V, V], &[az, az], Box::new(|g, v| g.sub(v[0], v[1]))),
        case("mul", &[V, V], &[az, az], Box::new(|g, v| g.mul(v[0], v[1]))),
        case("div", &[V, V], &[az, Positive], Box::new(|g, v| g.div(v[0], v[1]))),
        case("neg", &[V], &[az], Box::new(|g, v| g.neg(v[0]))),
        case("add_scalar", &[V], &[az], Box::new(|g, v| g.add_scalar(v[0], 0.7))),
        case("mul_scalar", &[V], &[az], Box::new(|g, v| g.mul_scalar(v[0], -1.3))),
        case("exp", &[V], &[az], Box::new(|g, v| g.exp(v[0]))),
        case("log", &[V], &[Positive], Box::new(|g, v| g.log(v[0]))),
        case("sqrt", &[V], &[Positive], Box::new(|g, v| g.sqrt(v[0]))),
        case("relu", &[V], &[az], Box::new(|g, v| g.relu(v[0]))),
        case("sigmoid", &[V], &[az], Box::new(|g, v| g.sigmoid(v[0]))),
        case("clamp", &[V], &[az], Box::new(|g, v| g.clamp(v[0], -0.5, 0.52))),
        case("sum", &[V], &[az], Box::new(|g, v| g.sum(v[0]))),
        case("mean", &[V], &[az], Box::new(|g, v| g.mean(v[0]))),
        case("broadcast_scalar", &[&[1]], &[az], Box::new(|g, v| g.broadcast_scalar(v[0], &[2, 2]))),
        case("reshape", &[V], &[az], Box::new(|g, v| g.reshape(v[0], &[3, 2]))),
        case("flatten", &[V], &[az], Box::new(|g, v| g.flatten(v[0]))),
        case("dot", &[V, V], &[az, az], Box::new(|g, v| g.dot(v[0], v[1]))),
        case("l2_norm", &[V], &[az], Box::new(|g, v| g.l2_norm(v[0]))),
        case(
            "conv2d",
            &[IMG, &[3, 2, 3, 3], &[3]],
            &[az; 3],
            Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1)),
        ),
        case("conv2d_s1", &[IMG, &[3, 2, 4, 4]], &[az; 2], Box::new(|g, v| g.conv2d(v[0], v[1], None, 1, 1))),
        case(
            "conv2d_transpose",
            &[&[2, 2, 3, 3], &[2, 3, 4, 4], &[3]],
            &[az; 3],
            Box::new(|g, v| g.conv2d_transpose(v[0], v[1], Some(v[2]), 2, 1)),
        ),
        case(
            "conv2d_weight_grad",
            &[IMG, &[2, 3, 3, 3]],
            &[az; 2],
            Box::new(|g, v| g.conv2d_weight_grad(v[0], v[1], 2, 1, (3, 3))),
        ),
        case("broadcast_channels", &[&[2]], &[az], Box::new(|g, v| g.broadcast_channels(v[0], &[2, 2, 2, 2]))),
        case("sum_channels", &[IMG], &[az], Box::new(|g, v| g.sum_channels(v[0]))),
        case("slice_channels", &[&[2, 4, 2, 2]], &[az], Box::new(|g, v| g.slice_channels(v[0], 1, 2))),
        case("pad_channels", &[IMG], &[az], Box::new(|g, v| g.pad_channels(v[0], 1, 4))),
        case("mse", &[IMG], &[az], Box::new(move |g, v| mse_loss(g, v[0], &t))),
        case("bce", &[IMG], &[Unit], Box::new(move |g, v| bce_loss(g, v[0], &t2))),
        case("kl", &[IMG, IMG], &[az, az], Box::new(|g, v| kl_div_gaussian(g, v[0], v[1]))),
        case("cosine", &[&[7]], &[az], Box::new(move |g, v| cosine_similarity(g, v[0], &c, 1e-8))),
    ]
}

fn two_layer_loss(g: &mut Graph<f64>, x: Var, w: &[Var], target: &Tensor<f64>) -> Var {
    let h = g.conv2d(x, w[0], None, 2, 1).unwrap();
    let h = g.sigmoid(h).unwrap();
    let y = g.conv2d_transpose(h, w[1], None, 2, 1).unwrap();
    let y = g.sigmoid(y).unwrap();
    mse_loss(g, y, target).unwrap()
}

fn first_grad(x: &Tensor<f64>, w: &[Tensor<f64>], target: &Tensor<f64>) -> Vec<f64> {
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x.clone());
    let wv: Vec<Var> = w.iter().map(|t| g.param(t.clone())).collect();
    let l = two_layer_loss(&mut g, xv, &wv, target);
    let gr = g.grad(l, &wv, false).unwrap();
    gr.grads.iter().flat_map(|v| g.value(*v).data().to_vec()).collect()
}

/// Relative error of a double-backward Hessian-vector product on a random two-layer conv net
/// against central differences of first gradients.
pub fn hvp_error(seed: u64) -> f64 {
    let shapes: [&[usize]; 2] = [&[3, 2, 4, 4], &[3, 2, 4, 4]];
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let x = sample(&mut rng, &[2, 2, 8, 8], Domain::Unit);
    let target = sample(&mut rng, &[2, 2, 8, 8], Domain::Unit);
    let w: Vec<Tensor<f64>> = shapes.iter().map(|s| sample(&mut rng, s, Domain::AwayFromZero)).collect();
    let dir: Vec<Tensor<f64>> = shapes.iter().map(|s| sample(&mut rng, s, Domain::AwayFromZero)).collect();

    let mut g = Graph::<f64>::new();
    let xv = g.constant(x.clone());
    let wv: Vec<Var> = w.iter().map(|t| g.param(t.clone())).collect();
    let l = two_layer_loss(&mut g, xv, &wv, &target);
    let gr = g.grad(l, &wv, true).unwrap();
    let mut s = None;
    for (gv, d) in gr.grads.iter().zip(&dir) {
        let dv = g.constant(d.clone());
        let term = g.dot(*gv, dv).unwrap();
        s = Some(match s {
            None => term,
            Some(acc) => g.add(acc, term).unwrap(),
        });
    }
    let hv = g.grad(s.unwrap(), &wv, false).unwrap();
    let analytic: Vec<f64> = hv.grads.iter().flat_map(|v| g.value(*v).data().to_vec()).collect();

    let shift = |sign: f64| -> Vec<Tensor<f64>> {
        w.iter()
            .zip(&dir)
            .map(|(wt, d)| wt.zip_map(d, "shift", |a, b| a + sign * H * b).unwrap())
            .collect()
    };
    let gp = first_grad(&x, &shift(1.0), &target);
    let gm = first_grad(&x, &shift(-1.0), &target);
    let numeric: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * H)).collect();
    rel_error(&analytic, &numeric)
}

/// Worst relative gap in `<conv(x), r> = <x, conv_t(r)> = <w, weight_grad(x, r)>` for one seed.
pub fn adjoint_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for (stride, pad, k, hw) in [(2, 1, 4, 8), (1, 1, 4, 6), (2, 0, 3, 7), (1, 2, 5, 5)] {
        let x = sample(&mut rng, &[2, 3, hw, hw], Domain::AwayFromZero);
        let w = sample(&mut rng, &[4, 3, k, k], Domain::AwayFromZero);
        let y = conv2d_forward(&x, &w, stride, pad).unwrap();
        let r = sample(&mut rng, y.shape(), Domain::AwayFromZero);
        let lhs = y.dot(&r).unwrap();
        let xt = conv2d_transpose_forward(&r, &w, stride, pad, (hw, hw)).unwrap();
        let wg = conv2d_weight_grad(&x, &r, stride, pad, (k, k)).unwrap();
        let scale = lhs.abs().max(1.0);
        worst = worst
            .max((lhs - x.dot(&xt).unwrap()).abs() / scale)
            .max((lhs - w.dot(&wg).unwrap()).abs() / scale);
    }
    worst
}
