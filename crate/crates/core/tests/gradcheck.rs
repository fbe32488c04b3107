mod common;

use common::{adjoint_error, cases, hvp_error, max_fd_error};

fn check_group(names: &[&str]) {
    let all = cases();
    for name in names {
        let c = all.iter().find(|c| c.name == *name).unwrap();
        let err = max_fd_error(c);
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn elementwise_binary() {
    check_group(&["add", "sub", "mul", "div"]);
}

#[test]
fn elementwise_unary() {
    check_group(&["neg", "add_scalar", "mul_scalar", "exp", "log", "sqrt", "relu", "sigmoid", "clamp"]);
}

#[test]
fn reductions_and_shapes() {
    check_group(&["sum", "mean", "broadcast_scalar", "reshape", "flatten", "dot", "l2_norm"]);
}

#[test]
fn convolutions() {
    check_group(&["conv2d", "conv2d_s1", "conv2d_transpose", "conv2d_weight_grad"]);
}

#[test]
fn channel_ops() {
    check_group(&["broadcast_channels", "sum_channels", "slice_channels", "pad_channels"]);
}

#[test]
fn losses() {
    check_group(&["mse", "bce", "kl", "cosine"]);
}

#[test]
fn every_case_is_grouped() {
    assert_eq!(cases().len(), 4 + 9 + 7 + 4 + 4 + 4);
}

#[test]
fn hessian_vector_product() {
    for seed in 0..10 {
        let err = hvp_error(seed);
        assert!(err < 1e-3, "seed {seed}: HVP relative error {err:e}");
    }
}

#[test]
fn conv_adjoints() {
    for seed in 0..10 {
        assert!(adjoint_error(seed) < 1e-10);
    }
}
