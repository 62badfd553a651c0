use std::rc::Rc;

use accr_autodiff::{Graph, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Central-difference gradient of `f` at `x`.
fn numeric_grad(f: &dyn Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut g = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        g.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    g
}

fn assert_close(analytic: &Tensor, numeric: &Tensor, tol: f64, what: &str) {
    for (i, (a, n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let scale = a.abs().max(n.abs()).max(1e-3);
        assert!((a - n).abs() / scale < tol, "{what}[{i}]: analytic {a} vs numeric {n}");
    }
}

/// Checks d f(x) / dx for a scalar-valued graph function.
fn check(name: &str, x: Tensor, f: impl for<'g> Fn(Var<'g>) -> Var<'g>) {
    let g = Graph::new();
    let xv = g.leaf(x.clone());
    let y = f(xv);
    let analytic = g.grad(y, &[xv]).pop().unwrap();
    let eval = |t: &Tensor| {
        let g = Graph::new();
        let out = f(g.constant(t.clone()));
        out.value().item()
    };
    let numeric = numeric_grad(&eval, &x, 1e-5);
    assert_close(&analytic, &numeric, 1e-6, name);
}

/// Checks the gradient of `sum(grad(f)^2)`, which exercises double backprop.
fn check_second_order(name: &str, x: Tensor, f: impl for<'g> Fn(Var<'g>) -> Var<'g>) {
    let penalty = |g: &Graph, xv: Var<'_>| -> f64 {
        let y = f(xv);
        let gx = g.grad_vars(y, &[xv], true)[0].expect("reachable");
        (gx * gx).sum().value().item()
    };
    let g = Graph::new();
    let xv = g.leaf(x.clone());
    let y = f(xv);
    let gx = g.grad_vars(y, &[xv], true)[0].expect("reachable");
    let p = (gx * gx).sum();
    let analytic = g.grad(p, &[xv]).pop().unwrap();
    let eval = |t: &Tensor| {
        let g = Graph::new();
        let xv = g.leaf(t.clone());
        penalty(&g, xv)
    };
    let numeric = numeric_grad(&eval, &x, 1e-5);
    assert_close(&analytic, &numeric, 1e-5, name);
}

fn weights<'g>(g: &'g Graph, shape: &[usize], seed: u64) -> Var<'g> {
    g.constant(random(shape, seed))
}

#[test]
fn elementwise_ops() {
    let x = random(&[2, 3], 1);
    check("tanh", x.clone(), |v| v.tanh().sum());
    check("exp", x.clone(), |v| v.exp().mean());
    check("powf", x.map(|v| v.abs() + 0.5), |v| v.powf(1.7).sum());
    check("ln", x.map(|v| v.abs() + 0.5), |v| v.ln().sum());
    check("leaky", x.clone(), |v| v.leaky_relu(0.2).square().sum());
    check("abs", x.clone(), |v| v.abs().sum());
    check("mul", x.clone(), |v| (v * v.tanh()).add_scalar(0.3).scale(2.0).sum());
    check("sub", x.clone(), |v| (v - v.exp()).square().mean());
}

#[test]
fn reductions_and_broadcasts() {
    let x = random(&[2, 3, 2, 2], 2);
    check("sum_trailing", x.clone(), |v| {
        let shape = v.shape();
        let m = v.mean_trailing(2).broadcast_trailing(&shape);
        ((v - m) * v).sum()
    });
    check("channel", x.clone(), |v| {
        let shape = v.shape();
        (v.channel_sum().tanh().channel_broadcast(&shape) * v).sum()
    });
    check("expand", x.clone(), |v| {
        let shape = v.shape();
        (v.sum().expand(&shape) * v).sum()
    });
    check("reshape", x, |v| v.flatten().tanh().sum());
}

#[test]
fn matmul_and_log_softmax() {
    let x = random(&[3, 4], 3);
    check("matmul", x.clone(), |v| {
        let w = weights(v.graph(), &[5, 4], 4);
        v.matmul(w.t()).tanh().sum()
    });
    check("log_softmax", x, |v| {
        let target = Rc::new(random(&[3, 4], 5));
        v.log_softmax().mask_mul(target).sum()
    });
}

#[test]
fn convolutions() {
    let x = random(&[2, 3, 6, 6], 6);
    check("conv2d input", x.clone(), |v| {
        let w = weights(v.graph(), &[4, 3, 3, 3], 7);
        v.conv2d(w, 2, 1).unwrap().tanh().sum()
    });
    let w = random(&[4, 3, 4, 4], 8);
    check("conv2d weight", w, |wv| {
        let xv = weights(wv.graph(), &[2, 3, 6, 6], 9);
        xv.conv2d(wv, 2, 1).unwrap().square().sum()
    });
    check("conv_transpose input", random(&[2, 4, 3, 3], 10), |v| {
        let w = weights(v.graph(), &[4, 2, 4, 4], 11);
        v.conv_transpose2d(w, 2, 1, (6, 6)).unwrap().tanh().sum()
    });
    check("conv_transpose weight", random(&[4, 2, 4, 4], 12), |wv| {
        let x = weights(wv.graph(), &[2, 4, 3, 3], 13);
        x.conv_transpose2d(wv, 2, 1, (6, 6)).unwrap().square().sum()
    });
}

#[test]
fn gather_and_scatter() {
    let idx: Rc<[usize]> = Rc::from(vec![0usize, 2, 2, 5, 1]);
    check("gather", random(&[6], 14), |v| v.gather(Rc::clone(&idx), &[5]).square().sum());
    check("scatter", random(&[5], 15), |v| v.scatter_add(Rc::clone(&idx), &[6]).tanh().sum());
}

#[test]
fn second_order_through_conv_stack() {
    // A small discriminator-like stack; gradient-norm penalty needs every
    // backward rule on the path to be differentiable itself.
    let x = random(&[2, 2, 6, 6], 16);
    check_second_order("conv stack", x, |v| {
        let g = v.graph();
        let w1 = weights(g, &[3, 2, 4, 4], 17);
        let w2 = weights(g, &[1, 3, 3, 3], 18);
        let h = v.conv2d(w1, 2, 1).unwrap();
        let shape = h.shape();
        let centered = h - h.mean_trailing(2).broadcast_trailing(&shape);
        let var = centered.square().mean_trailing(2).add_scalar(1e-2);
        let normed = centered * var.powf(-0.5).broadcast_trailing(&shape);
        normed.tanh().conv2d(w2, 1, 1).unwrap().sum()
    });
}

#[test]
fn second_order_wrt_weights() {
    // d/dw of ||d D(x)/dx||^2, the quantity a gradient penalty trains on.
    let w = random(&[3, 2, 3, 3], 19);
    let x = random(&[2, 2, 5, 5], 20);
    let penalty = |wt: &Tensor, grad_out: bool| -> (f64, Option<Tensor>) {
        let g = Graph::new();
        let wv = g.leaf(wt.clone());
        let xv = g.leaf(x.clone());
        let out = xv.conv2d(wv, 1, 1).unwrap().leaky_relu(0.2).tanh().sum();
        let gx = g.grad_vars(out, &[xv], true)[0].unwrap();
        let p = gx.square().sum();
        let grad = grad_out.then(|| g.grad(p, &[wv]).pop().unwrap());
        (p.value().item(), grad)
    };
    let analytic = penalty(&w, true).1.unwrap();
    let numeric = numeric_grad(&|t| penalty(t, false).0, &w, 1e-5);
    assert_close(&analytic, &numeric, 1e-5, "penalty weights");
}

#[test]
fn unreachable_inputs_get_no_gradient() {
    let g = Graph::new();
    let a = g.leaf(Tensor::ones(&[3]));
    let b = g.leaf(Tensor::ones(&[3]));
    let y = (a * a).sum();
    let grads = g.grad_vars(y, &[a, b], false);
    assert!(grads[0].is_some());
    assert!(grads[1].is_none());
    let detached = (a.detach() * a).sum();
    let ga = g.grad(detached, &[a]).pop().unwrap();
    assert_eq!(ga.data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn no_grad_records_constants() {
    let g = Graph::new();
    let a = g.leaf(Tensor::ones(&[2]));
    let b = {
        let _guard = g.no_grad();
        a.scale(3.0)
    };
    assert!(!b.requires_grad());
    assert!(a.scale(3.0).requires_grad());
}

proptest! {
    #[test]
    fn conv_transpose_is_adjoint(seed in 0u64..1000, stride in 1usize..3, pad in 0usize..2) {
        let g = Graph::new();
        let x = g.constant(random(&[1, 2, 7, 7], seed));
        let w = g.constant(random(&[3, 2, 3, 3], seed + 1));
        let y = x.conv2d(w, stride, pad).unwrap();
        let gy = g.constant(random(&y.shape(), seed + 2));
        let back = gy.conv_transpose2d(w, stride, pad, (7, 7)).unwrap();
        let lhs = (y * gy).sum().value().item();
        let rhs = (x * back).sum().value().item();
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }
}
