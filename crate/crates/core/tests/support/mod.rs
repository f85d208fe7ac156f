//! Central-difference gradient checks shared by the test targets.

#![allow(dead_code)]

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use wiretap_core::clustering::{build_equalization, equalize, ClusterAssignment};
use wiretap_core::losses::{
    cross_entropy, cross_entropy_logit_gradients, naive_difference_logit_gradients,
    naive_difference_loss, security_logit_gradients, security_loss,
};
use wiretap_core::model::{normalization_backward, normalize, one_hot};
use wiretap_core::nn::{softmax_rows, Activation, DenseLayer, FreezeMask, LayerStack};
use wiretap_core::{ModelShape, Normalization, WiretapModel};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: u64 = 20;

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at `x`, perturbing each coordinate in place.
pub fn numeric_gradient(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + STEP;
            let plus = f(x);
            x[i] = orig - STEP;
            let minus = f(x);
            x[i] = orig;
            (plus - minus) / (2.0 * STEP)
        })
        .collect()
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn to_matrix(flat: &[f64], rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), flat.to_vec()).unwrap()
}

fn random_messages(rng: &mut ChaCha8Rng, batch: usize, m: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.random_range(0..m)).collect()
}

fn stack_with_params(template: &LayerStack, params: &[f64]) -> LayerStack {
    let mut stack = template.clone();
    for (i, &p) in params.iter().enumerate() {
        *stack.parameter_mut(i).unwrap() = p;
    }
    stack
}

/// A single dense layer under the loss `sum(w * output)`: parameters and input.
pub fn dense_layer_error(activation: Activation, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, din, dout) = (5, 4, 3);
    let stack = LayerStack::new(vec![DenseLayer::glorot(din, dout, activation, &mut rng)]).unwrap();
    let stack = {
        // Random biases keep pre-activations away from the ReLU kink on average.
        let mut params = stack.flatten_parameters();
        for p in params.iter_mut() {
            *p += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        stack_with_params(&stack, &params)
    };
    let input = normal_matrix(&mut rng, batch, din);
    let weights = normal_matrix(&mut rng, batch, dout);
    let loss = |s: &LayerStack, x: ArrayView2<f64>| (&s.forward(x).unwrap() * &weights).sum();

    let mut recorded = stack.clone();
    recorded.forward_recorded(input.view()).unwrap();
    let (grads, input_grad) = recorded.backward(weights.view()).unwrap();

    let mut params = stack.flatten_parameters();
    let numeric = numeric_gradient(&mut params, |p| loss(&stack_with_params(&stack, p), input.view()));
    let e1 = relative_error(&grads.flatten(), &numeric);

    let mut x = input.iter().copied().collect::<Vec<_>>();
    let numeric = numeric_gradient(&mut x, |v| loss(&stack, to_matrix(v, batch, din).view()));
    let e2 = relative_error(&input_grad.iter().copied().collect::<Vec<_>>(), &numeric);
    e1.max(e2)
}

fn random_assignment(m: usize, l: usize) -> ClusterAssignment {
    let labels = (0..m).map(|i| (i * 5 + 1) % m % l).collect();
    ClusterAssignment::from_labels(Array2::zeros((m, 1)).view(), labels).unwrap()
}

/// Cross-entropy with respect to logits, with hard and equalized targets.
pub fn cross_entropy_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, m) = (6, 8);
    let messages = random_messages(&mut rng, batch, m);
    let hard = one_hot(&messages, m).unwrap();
    let soft = equalize(hard.view(), &build_equalization(&random_assignment(m, 4))).unwrap();
    let logits = normal_matrix(&mut rng, batch, m) * 2.0;

    let mut worst: f64 = 0.0;
    for targets in [&hard, &soft] {
        let probs = softmax_rows(logits.view()).unwrap();
        let analytic = cross_entropy_logit_gradients(targets.view(), probs.view()).unwrap();
        let mut flat = logits.iter().copied().collect::<Vec<_>>();
        let numeric = numeric_gradient(&mut flat, |v| {
            let p = softmax_rows(to_matrix(v, batch, m).view()).unwrap();
            cross_entropy(targets.view(), p.view()).unwrap().scalar
        });
        worst = worst.max(relative_error(&analytic.iter().copied().collect::<Vec<_>>(), &numeric));
    }
    worst
}

/// A two-logit-block loss checked jointly over Bob's and Eve's logits.
fn two_block_error(
    seed: u64,
    loss: impl Fn(ArrayView2<f64>, ArrayView2<f64>, ArrayView2<f64>, ArrayView2<f64>) -> f64,
    grads: impl Fn(ArrayView2<f64>, ArrayView2<f64>, ArrayView2<f64>, ArrayView2<f64>) -> (Array2<f64>, Array2<f64>),
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, m) = (6, 8);
    let messages = random_messages(&mut rng, batch, m);
    let targets = one_hot(&messages, m).unwrap();
    let equalized = equalize(targets.view(), &build_equalization(&random_assignment(m, 2))).unwrap();
    let bob = normal_matrix(&mut rng, batch, m);
    let eve = normal_matrix(&mut rng, batch, m);

    let pb = softmax_rows(bob.view()).unwrap();
    let pe = softmax_rows(eve.view()).unwrap();
    let (gb, ge) = grads(targets.view(), equalized.view(), pb.view(), pe.view());
    let analytic: Vec<f64> = gb.iter().chain(ge.iter()).copied().collect();

    let mut flat: Vec<f64> = bob.iter().chain(eve.iter()).copied().collect();
    let half = batch * m;
    let numeric = numeric_gradient(&mut flat, |v| {
        let pb = softmax_rows(to_matrix(&v[..half], batch, m).view()).unwrap();
        let pe = softmax_rows(to_matrix(&v[half..], batch, m).view()).unwrap();
        loss(targets.view(), equalized.view(), pb.view(), pe.view())
    });
    relative_error(&analytic, &numeric)
}

pub fn security_loss_error(seed: u64, alpha: f64) -> f64 {
    two_block_error(
        seed,
        |t, q, b, e| security_loss(t, q, b, e, alpha).unwrap().scalar,
        |t, q, b, e| security_logit_gradients(t, q, b, e, alpha).unwrap(),
    )
}

pub fn naive_loss_error(seed: u64) -> f64 {
    two_block_error(
        seed,
        |t, _, b, e| naive_difference_loss(t, b, e).unwrap().scalar,
        |t, _, b, e| naive_difference_logit_gradients(t, b, e).unwrap(),
    )
}

/// Power normalization under the loss `sum(w * normalize(u))`.
pub fn normalization_error(mode: Normalization, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, n) = (7, 3);
    let raw = normal_matrix(&mut rng, batch, n);
    let weights = normal_matrix(&mut rng, batch, n);
    let analytic = normalization_backward(raw.view(), weights.view(), mode).unwrap();
    let mut flat = raw.iter().copied().collect::<Vec<_>>();
    let numeric = numeric_gradient(&mut flat, |v| {
        (&normalize(to_matrix(v, batch, n).view(), mode).unwrap() * &weights).sum()
    });
    relative_error(&analytic.iter().copied().collect::<Vec<_>>(), &numeric)
}

/// Security loss through encoder, normalization, fixed channel noise and both
/// decoders, against every parameter of the model.
pub fn full_model_error(mode: Normalization, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n, batch, alpha) = (8, 2, 12, 0.7);
    let shape = ModelShape {
        message_count: m,
        codeword_dim: n,
        normalization: mode,
    };
    let model = WiretapModel::new(shape, &mut rng).unwrap();
    let model = {
        // Non-zero biases rule out all-zero hidden rows.
        let [e, b, v] = model.parameters();
        let jitter = |p: Vec<f64>, rng: &mut ChaCha8Rng| -> Vec<f64> {
            p.into_iter().map(|x| x + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let (e, b, v) = (jitter(e, &mut rng), jitter(b, &mut rng), jitter(v, &mut rng));
        WiretapModel::from_parts(
            shape,
            stack_with_params(&model.encoder, &e),
            stack_with_params(&model.bob, &b),
            stack_with_params(&model.eve, &v),
        )
        .unwrap()
    };
    let messages = random_messages(&mut rng, batch, m);
    let bob_noise = normal_matrix(&mut rng, batch, n) * 0.3;
    let eve_noise = normal_matrix(&mut rng, batch, n) * 0.4;
    let targets = one_hot(&messages, m).unwrap();
    let equalized = equalize(targets.view(), &build_equalization(&random_assignment(m, 4))).unwrap();

    let run = |model: &mut WiretapModel| {
        model
            .forward_recorded(&messages, |x| {
                let y = &x + &bob_noise;
                let z = &y + &eve_noise;
                Ok((y, Some(z)))
            })
            .unwrap()
    };
    let loss_of = |model: &mut WiretapModel| {
        let pass = run(model);
        let pb = softmax_rows(pass.bob_logits.view()).unwrap();
        let pe = softmax_rows(pass.eve_logits.as_ref().unwrap().view()).unwrap();
        security_loss(targets.view(), equalized.view(), pb.view(), pe.view(), alpha)
            .unwrap()
            .scalar
    };

    let mut recorded = model.clone();
    let pass = run(&mut recorded);
    let pb = softmax_rows(pass.bob_logits.view()).unwrap();
    let pe = softmax_rows(pass.eve_logits.as_ref().unwrap().view()).unwrap();
    let (gb, ge) =
        security_logit_gradients(targets.view(), equalized.view(), pb.view(), pe.view(), alpha).unwrap();
    let grads = recorded
        .backward(&pass, Some(gb.view()), Some(ge.view()), FreezeMask::NONE)
        .unwrap();
    let analytic: Vec<f64> = [&grads.encoder, &grads.bob, &grads.eve]
        .iter()
        .flat_map(|g| g.as_ref().unwrap().flatten())
        .collect();

    let [e, b, v] = model.parameters();
    let (ne, nb) = (e.len(), b.len());
    let mut flat: Vec<f64> = e.into_iter().chain(b).chain(v).collect();
    let numeric = numeric_gradient(&mut flat, |p| {
        let mut m = WiretapModel::from_parts(
            shape,
            stack_with_params(&model.encoder, &p[..ne]),
            stack_with_params(&model.bob, &p[ne..ne + nb]),
            stack_with_params(&model.eve, &p[ne + nb..]),
        )
        .unwrap();
        loss_of(&mut m)
    });
    relative_error(&analytic, &numeric)
}

/// Every gradient case over [`INSTANCES`] seeds: `(name, worst relative error)`.
pub fn all_gradient_cases() -> Vec<(&'static str, f64)> {
    let worst = |f: &dyn Fn(u64) -> f64| (0..INSTANCES).map(f).fold(0.0, f64::max);
    vec![
        ("dense relu", worst(&|s| dense_layer_error(Activation::Relu, s))),
        ("dense linear", worst(&|s| dense_layer_error(Activation::Linear, s))),
        ("cross-entropy", worst(&cross_entropy_error)),
        ("security loss alpha=0.7", worst(&|s| security_loss_error(s, 0.7))),
        ("security loss alpha=0", worst(&|s| security_loss_error(s, 0.0))),
        ("security loss alpha=1", worst(&|s| security_loss_error(s, 1.0))),
        ("naive difference loss", worst(&naive_loss_error)),
        ("per-symbol normalization", worst(&|s| normalization_error(Normalization::PerSymbol, s))),
        ("batch-average normalization", worst(&|s| normalization_error(Normalization::BatchAverage, s))),
        ("full model, per-symbol", worst(&|s| full_model_error(Normalization::PerSymbol, s))),
        ("full model, batch-average", worst(&|s| full_model_error(Normalization::BatchAverage, s))),
    ]
}

/// Differential entropy in nats of a density, by composite Simpson over `[-L, L]`.
fn differential_entropy(density: impl Fn(f64) -> f64, half_width: f64, intervals: usize) -> f64 {
    assert!(intervals.is_multiple_of(2));
    let h = 2.0 * half_width / intervals as f64;
    let g = |x: f64| {
        let f = density(x);
        if f > 0.0 {
            -f * f.ln()
        } else {
            0.0
        }
    };
    let mut sum = g(-half_width) + g(half_width);
    for k in 1..intervals {
        let x = -half_width + k as f64 * h;
        sum += if k % 2 == 1 { 4.0 } else { 2.0 } * g(x);
    }
    sum * h / 3.0
}

fn gaussian(variance: f64) -> impl Fn(f64) -> f64 {
    move |x| (-x * x / (2.0 * variance)).exp() / (2.0 * std::f64::consts::PI * variance).sqrt()
}

/// `h(X + N) - h(N)` for `X ~ N(0, power)` and `N ~ N(0, noise)`, by quadrature.
pub fn gaussian_mutual_information_quadrature(power: f64, noise: f64) -> f64 {
    let entropy = |v: f64| differential_entropy(gaussian(v), 40.0 * v.sqrt(), 200_000);
    entropy(power + noise) - entropy(noise)
}

/// Secrecy capacity oracle `I(X;Y) - I(X;Z)` in nats, floored at zero.
pub fn secrecy_capacity_oracle(power: f64, bob_variance: f64, eve_extra_variance: f64) -> f64 {
    let bob = gaussian_mutual_information_quadrature(power, bob_variance);
    let eve = gaussian_mutual_information_quadrature(power, bob_variance + eve_extra_variance);
    (bob - eve).max(0.0)
}

/// Parameter triples `(P, sigma_B^2, sigma_E^2)` for the capacity oracle.
pub const CAPACITY_TRIPLES: [(f64, f64, f64); 3] = [(1.0, 0.1, 0.9), (2.0, 0.063, 0.2), (0.5, 1.0, 3.0)];
