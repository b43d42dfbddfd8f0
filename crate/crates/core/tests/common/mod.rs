//! Shared oracles for integration tests.
#![allow(dead_code)]

pub mod ops;

use gzrd_core::model::{Model, ModelConfig, ModelInput};
use gzrd_core::rng;
use gzrd_core::tensor::{Graph, Tensor, Var};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

/// Step for central differences at 64 bits.
pub const FD_STEP: f64 = 1e-5;

/// Gradients below this norm are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-3;

/// `|a - b| / max(|a|, |b|, GRAD_FLOOR)` over whole vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(GRAD_FLOOR)
}

pub fn normal_vec(r: &mut rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

pub fn normal_tensor(r: &mut rng::Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_f64(shape, &normal_vec(r, n)).unwrap()
}

type OpFn = dyn Fn(&mut Graph<f64>, &[Var]) -> gzrd_core::Result<Var>;

/// Scalar loss of `op` applied to leaves holding `inputs`: the sum of the
/// output weighted by `coeffs`, or the output itself when it is a scalar.
fn scalar_loss(inputs: &[Tensor<f64>], coeffs: &[f64], op: &OpFn) -> (Graph<f64>, Vec<Var>, Var) {
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = op(&mut g, &leaves).unwrap();
    let loss = if g.value(out).len() == 1 && coeffs.is_empty() {
        out
    } else {
        g.dot(out, coeffs).unwrap()
    };
    (g, leaves, loss)
}

/// Largest relative error between tape gradients and central differences
/// over every input of `op`, with inputs and output weights drawn from
/// `seed`.
pub fn gradcheck_op(shapes: &[Vec<usize>], seed: u64, scalar_out: bool, op: &OpFn) -> f64 {
    let mut r = rng::stream(seed, 77);
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| normal_tensor(&mut r, s)).collect();
    let coeffs = if scalar_out {
        Vec::new()
    } else {
        let mut g = Graph::new();
        let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = op(&mut g, &leaves).unwrap();
        let n = g.value(out).len();
        normal_vec(&mut r, n)
    };
    let (g, leaves, loss) = scalar_loss(&inputs, &coeffs, op);
    let grads = g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(*leaf) {
            Some(v) => v.to_vec(),
            None => vec![0.0; inputs[li].len()],
        };
        let numeric: Vec<f64> = (0..inputs[li].len())
            .map(|j| {
                let eval = |d: f64| {
                    let mut xs = inputs.clone();
                    xs[li].data_mut()[j] += d;
                    let (g, _, l) = scalar_loss(&xs, &coeffs, op);
                    g.value(l).data()[0]
                };
                (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP)
            })
            .collect();
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Random model input matching `cfg`.
pub fn random_input(cfg: &ModelConfig, seed: u64) -> ModelInput<f64> {
    let mut r = rng::stream(seed, 78);
    let gaze = cfg
        .gaze
        .map(|g| normal_tensor(&mut r, &[g.repr.dim(), cfg.gaze_samples().unwrap()]));
    let rgb = cfg.rgb.map(|p| normal_tensor(&mut r, &[p.channels, p.size, p.size]));
    let imu = cfg.imu.map(|_| normal_tensor(&mut r, &[6, cfg.imu_samples().unwrap()]));
    ModelInput { gaze, rgb, imu }
}

/// Cross-entropy of one example, forward only.
pub fn model_loss(model: &Model<f64>, input: &ModelInput<f64>, label: usize) -> f64 {
    let mut g = Graph::new();
    let f = model.forward(&mut g, input).unwrap();
    let l = g.softmax_cross_entropy(f.logits, label).unwrap();
    g.value(l).data()[0]
}

/// Relative error of the loss gradient on `samples` randomly chosen
/// parameter entries (all entries when `samples` is `None`).
pub fn gradcheck_model(
    model: &Model<f64>,
    input: &ModelInput<f64>,
    label: usize,
    samples: Option<usize>,
    seed: u64,
) -> f64 {
    let (_, grads, _) = model.loss_and_grads(input, label).unwrap();
    let mut picks = Vec::new();
    match samples {
        None => {
            for (i, p) in model.params().iter().enumerate() {
                picks.extend((0..p.len()).map(|j| (i, j)));
            }
        }
        Some(n) => {
            let total = model.param_count();
            let mut r = rng::stream(seed, 79);
            for _ in 0..n {
                let mut k = r.random_range(0..total);
                let mut i = 0;
                while k >= model.params()[i].len() {
                    k -= model.params()[i].len();
                    i += 1;
                }
                picks.push((i, k));
            }
        }
    }
    let loss_at = |i: usize, j: usize, d: f64| {
        let mut m = model.clone();
        m.params_mut()[i].data_mut()[j] += d;
        model_loss(&m, input, label)
    };
    let analytic: Vec<f64> = picks.iter().map(|&(i, j)| grads[i][j]).collect();
    let numeric: Vec<f64> = picks
        .iter()
        .map(|&(i, j)| (loss_at(i, j, FD_STEP) - loss_at(i, j, -FD_STEP)) / (2.0 * FD_STEP))
        .collect();
    rel_err(&analytic, &numeric)
}
