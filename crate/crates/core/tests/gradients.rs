mod common;

use common::{composed_grad, composed_loss, random_tensor, rng, two_block_spec};
use fcdd::backbone::Backbone;
use fcdd::numerics::{finite_diff_check, Conv2d, Dims, Layer, Tensor4};
use fcdd::Tensor;
use rand::Rng;

const H: f64 = 1e-5;

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

/// Checks input (and parameter, for conv) gradients of `Σ r ⊙ layer(x)`.
fn check_layer(layer: &Layer<f64>, x: &Tensor, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (y, ctx) = layer.forward(x).unwrap();
    let r = random_tensor(y.dims(), &mut rng, -1.0, 1.0);
    let (gi, pg) = layer.backward(Some(&ctx), &r).unwrap();

    let wrt_input = finite_diff_check(
        |p| {
            dot(
                &layer.apply(&Tensor4::from_vec(x.dims(), p.to_vec()).unwrap()).unwrap(),
                &r,
            )
        },
        x.as_slice(),
        gi.as_slice(),
        H,
    );
    let mut worst = wrt_input.max_relative_error;

    if let (Layer::Conv2d(c), Some(pg)) = (layer, pg) {
        let wlen = c.weight.as_slice().len();
        let rebuild = |p: &[f64]| {
            let w = Tensor4::from_vec(c.weight.dims(), p[..wlen].to_vec()).unwrap();
            Layer::Conv2d(Conv2d::new(w, p[wlen..].to_vec(), c.stride, c.padding).unwrap())
        };
        let params = [c.weight.as_slice(), &c.bias[..]].concat();
        let analytic = [pg.weight.as_slice(), &pg.bias[..]].concat();
        let wrt_params = finite_diff_check(|p| dot(&rebuild(p).apply(x).unwrap(), &r), &params, &analytic, H);
        worst = worst.max(wrt_params.max_relative_error);
    }
    worst
}

#[test]
fn conv_gradients_match_differences() {
    let mut rng = rng(11);
    for (i, &(in_c, out_c, k, s, p)) in [(2, 3, 3, 1, 1), (1, 2, 2, 2, 0), (3, 2, 5, 2, 2), (2, 1, 1, 1, 0)]
        .iter()
        .enumerate()
    {
        let w = random_tensor(Dims::new(out_c, in_c, k, k), &mut rng, -1.0, 1.0);
        let b = (0..out_c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let layer = Layer::Conv2d(Conv2d::new(w, b, s, p).unwrap());
        let x = random_tensor(Dims::new(2, in_c, 7, 6), &mut rng, -1.0, 1.0);
        let err = check_layer(&layer, &x, 100 + i as u64);
        assert!(err < 1e-6, "conv case {i}: relative error {err}");
    }
}

#[test]
fn leaky_relu_gradients_match_differences() {
    let mut rng = rng(12);
    // Keep inputs away from the kink so a step of h cannot cross it.
    let x = Tensor4::from_fn(Dims::new(2, 3, 5, 5), |_, _, _, _| {
        let m = rng.gen_range(0.01..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    });
    let err = check_layer(&Layer::LeakyRelu { alpha: 0.1 }, &x, 5);
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn max_pool_gradients_match_differences() {
    let mut rng = rng(13);
    for &(k, s) in &[(2, 2), (3, 1), (3, 2)] {
        // Distinct values spaced far above h so the selected maxima are stable.
        let mut vals: Vec<f64> = (0..2 * 2 * 7 * 7).map(|i| i as f64 * 0.01).collect();
        for i in (1..vals.len()).rev() {
            vals.swap(i, rng.gen_range(0..=i));
        }
        let x = Tensor4::from_vec(Dims::new(2, 2, 7, 7), vals).unwrap();
        let err = check_layer(&Layer::MaxPool2d { kernel: k, stride: s }, &x, 7);
        assert!(err < 1e-6, "pool {k}/{s}: relative error {err}");
    }
}

#[test]
fn composed_loss_gradient_matches_differences() {
    let mut rng = rng(21);
    let spec = two_block_spec();
    let mut net = Backbone::<f64>::build(spec, 3).unwrap();
    let x = random_tensor(Dims::new(4, 3, 16, 16), &mut rng, -1.0, 1.0);
    let labels = [0u8, 1, 0, 1];
    let analytic = composed_grad(&net, &x, &labels);
    let params = net.flat_params();
    let report = finite_diff_check(|p| composed_loss(&mut net, p, &x, &labels), &params, &analytic, H);
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn all_anomalous_and_all_normal_batches() {
    let mut rng = rng(22);
    let mut net = Backbone::<f64>::build(two_block_spec(), 4).unwrap();
    let x = random_tensor(Dims::new(2, 3, 16, 16), &mut rng, -1.0, 1.0);
    for labels in [[0u8, 0], [1, 1]] {
        let analytic = composed_grad(&net, &x, &labels);
        let params = net.flat_params();
        let report = finite_diff_check(|p| composed_loss(&mut net, p, &x, &labels), &params, &analytic, H);
        assert!(report.max_relative_error < 1e-4, "{labels:?}: {report:?}");
    }
}
