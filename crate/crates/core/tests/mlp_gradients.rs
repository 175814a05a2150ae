use eoe_core::nn::{HiddenActivation, LayerMask, Loss, MaskSelection, Mlp, MlpConfig, Mode, OutputActivation, Targets};
use eoe_core::seed;
use ndarray::{Array1, Array2};
use rand::Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

fn net(hidden: HiddenActivation, head: OutputActivation, dims: (usize, Vec<usize>, usize), seed: u64) -> Mlp {
    let config = MlpConfig {
        input_dim: dims.0,
        hidden_dims: dims.1,
        width_multiplier: 1.0,
        output_dim: dims.2,
        hidden_activation: hidden,
        output_activation: head,
        dropout_p: 0.0,
    };
    let mut model = Mlp::init(config, seed).unwrap();
    // Nonzero biases so their gradients are exercised away from symmetric points.
    let mut rng = seed::rng(seed ^ 0xb1a5);
    for l in model.layers_mut() {
        l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    model
}

fn check_parameters(model: &Mlp, x: &Array2<f64>, t: &Targets, loss: Loss, mask: Option<&MaskSelection>) {
    let (_, grads) = model.loss_and_gradients(x.view(), t, loss, Mode::Eval, mask).unwrap();
    let eval = |m: &Mlp| m.loss_and_gradients(x.view(), t, loss, Mode::Eval, mask).unwrap().0;
    for li in 0..model.layers().len() {
        let (rows, cols) = model.layers()[li].weights.dim();
        for r in 0..rows {
            for c in 0..cols {
                let mut plus = model.clone();
                let mut minus = model.clone();
                plus.layers_mut()[li].weights[[r, c]] += EPS;
                minus.layers_mut()[li].weights[[r, c]] -= EPS;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
                let a = grads.weights[li][[r, c]];
                assert!(rel_err(a, fd) < TOL, "weight {li}[{r},{c}]: {a} vs {fd}");
            }
            let mut plus = model.clone();
            let mut minus = model.clone();
            plus.layers_mut()[li].bias[r] += EPS;
            minus.layers_mut()[li].bias[r] -= EPS;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
            let a = grads.biases[li][r];
            assert!(rel_err(a, fd) < TOL, "bias {li}[{r}]: {a} vs {fd}");
        }
    }
}

fn inputs(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = seed::rng(seed);
    Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.5..1.5))
}

#[test]
fn cross_entropy_gradients_on_3_3_2_net() {
    for s in 0..5 {
        let model = net(
            HiddenActivation::Tanh,
            OutputActivation::SoftmaxLogits,
            (3, vec![3], 2),
            s,
        );
        let x = inputs(5, 3, 100 + s);
        let t = Targets::Classes((0..5).map(|i| (i + s as usize) % 2).collect());
        check_parameters(&model, &x, &t, Loss::CrossEntropy, None);
    }
}

#[test]
fn mse_gradients_with_scaled_tanh_head() {
    for s in 0..5 {
        let model = net(
            HiddenActivation::Tanh,
            OutputActivation::ScaledTanh(2.0),
            (2, vec![4, 3], 2),
            s,
        );
        let x = inputs(4, 2, 200 + s);
        let t = Targets::Values(inputs(4, 2, 300 + s));
        check_parameters(&model, &x, &t, Loss::MeanSquaredError, None);
    }
}

#[test]
fn relu_gradients_away_from_kinks() {
    for s in 0..5 {
        let model = net(HiddenActivation::Relu, OutputActivation::Identity, (3, vec![5], 2), s);
        let x = inputs(5, 3, 400 + s);
        // Skip instances where a pre-activation sits within EPS-reach of zero.
        let h = x.dot(&model.layers()[0].weights.t()) + &model.layers()[0].bias;
        if h.iter().any(|v| v.abs() < 1e-3) {
            continue;
        }
        let t = Targets::Values(inputs(5, 2, 500 + s));
        check_parameters(&model, &x, &t, Loss::MeanSquaredError, None);
    }
}

fn random_mask(model: &Mlp, seed: u64) -> MaskSelection {
    let mut rng = seed::rng(seed);
    MaskSelection {
        layers: model
            .layers()
            .iter()
            .map(|l| LayerMask {
                rows: Array1::from_shape_simple_fn(l.weights.nrows(), || rng.random_range(0.05..0.95)),
                cols: Array1::from_shape_simple_fn(l.weights.ncols(), || rng.random_range(0.05..0.95)),
            })
            .collect(),
    }
}

#[test]
fn mask_multiplier_gradients_match_finite_differences() {
    for s in 0..5 {
        let model = net(
            HiddenActivation::Tanh,
            OutputActivation::SoftmaxLogits,
            (3, vec![3], 2),
            s,
        );
        let mask = random_mask(&model, 700 + s);
        let x = inputs(5, 3, 600 + s);
        let t = Targets::Classes(vec![0, 1, 1, 0, 1]);
        check_parameters(&model, &x, &t, Loss::CrossEntropy, Some(&mask));
        let (_, grads) = model
            .loss_and_gradients(x.view(), &t, Loss::CrossEntropy, Mode::Eval, Some(&mask))
            .unwrap();
        let f = |m: &MaskSelection| {
            model
                .loss_and_gradients(x.view(), &t, Loss::CrossEntropy, Mode::Eval, Some(m))
                .unwrap()
                .0
        };
        for li in 0..mask.layers.len() {
            for r in 0..mask.layers[li].rows.len() {
                let mut plus = mask.clone();
                let mut minus = mask.clone();
                plus.layers[li].rows[r] += EPS;
                minus.layers[li].rows[r] -= EPS;
                let fd = (f(&plus) - f(&minus)) / (2.0 * EPS);
                assert!(rel_err(grads.mask_rows[li][r], fd) < TOL, "row {li}[{r}]");
            }
            for c in 0..mask.layers[li].cols.len() {
                let mut plus = mask.clone();
                let mut minus = mask.clone();
                plus.layers[li].cols[c] += EPS;
                minus.layers[li].cols[c] -= EPS;
                let fd = (f(&plus) - f(&minus)) / (2.0 * EPS);
                assert!(rel_err(grads.mask_cols[li][c], fd) < TOL, "col {li}[{c}]");
            }
        }
    }
}

#[test]
fn masked_forward_equals_explicitly_masked_weights() {
    let model = net(
        HiddenActivation::Tanh,
        OutputActivation::SoftmaxLogits,
        (3, vec![4], 2),
        9,
    );
    let mask = random_mask(&model, 10);
    let mut explicit = model.clone();
    for (layer, m) in explicit.layers_mut().iter_mut().zip(&mask.layers) {
        for ((r, c), w) in layer.weights.indexed_iter_mut() {
            *w *= m.rows[r] * m.cols[c];
        }
        layer.bias = &layer.bias * &m.rows;
    }
    let x = inputs(6, 3, 11);
    let a = model.forward(x.view(), Mode::Eval, Some(&mask)).unwrap();
    let b = explicit.forward(x.view(), Mode::Eval, None).unwrap();
    assert!((&a - &b).iter().all(|d| d.abs() < 1e-12));
}
