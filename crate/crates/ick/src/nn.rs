//! Fully-connected network branch.
//!
//! Weights are drawn i.i.d. Gaussian with fan-in scaled variance
//! `sigma_w^2 / fan_in` so that widening the net approaches its Gaussian
//! process limit; the matching closed-form kernel for ReLU nets
//! ([`nngp_relu_kernel`]) is the oracle the equivalence tests compare
//! against. Forward/backward are plain manual reverse mode.

use serde::{Deserialize, Serialize};

use crate::error::{IckError, Result};
use crate::linalg::{dot, Matrix, RngState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableScope {
    All,
    LastLayerOnly,
}

/// Architecture and initialization hyperparameters.
///
/// `widths = [d_in, h_1, .., h_L, p]`: `L` hidden layers with the stated
/// activation, then an affine readout of width `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub sigma_w2: f64,
    pub sigma_b2: f64,
    pub trainable: TrainableScope,
}

impl MlpConfig {
    /// ReLU net with He-style defaults (`sigma_w^2 = 2`, `sigma_b^2 = 0.01`),
    /// everything trainable.
    pub fn relu(widths: Vec<usize>) -> Self {
        MlpConfig {
            widths,
            activation: Activation::Relu,
            sigma_w2: 2.0,
            sigma_b2: 0.01,
            trainable: TrainableScope::All,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(IckError::InvalidConfig(
                "mlp needs at least input and output widths".into(),
            ));
        }
        if self.widths.iter().any(|w| *w == 0) {
            return Err(IckError::InvalidConfig("mlp widths must be >= 1".into()));
        }
        if self.sigma_w2 <= 0.0 || self.sigma_b2 < 0.0 {
            return Err(IckError::InvalidConfig(
                "mlp needs sigma_w2 > 0 and sigma_b2 >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn d_in(&self) -> usize {
        self.widths[0]
    }

    pub fn d_out(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

/// Per-layer weights (`widths[l+1] x widths[l]`) and biases.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn zeros_like(config: &MlpConfig) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..config.layers() {
            weights.push(Matrix::zeros(config.widths[l + 1], config.widths[l]));
            biases.push(vec![0.0; config.widths[l + 1]]);
        }
        MlpParams { weights, biases }
    }

    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.rows() * w.cols())
            .sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }
}

/// Draws `W^l_ij ~ N(0, sigma_w^2 / fan_in)`, `b^l_i ~ N(0, sigma_b^2)`,
/// layer by layer, weights before biases.
pub fn mlp_init(config: &MlpConfig, rng: &mut RngState) -> Result<MlpParams> {
    config.validate()?;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..config.layers() {
        let fan_in = config.widths[l];
        let w_std = (config.sigma_w2 / fan_in as f64).sqrt();
        let b_std = config.sigma_b2.sqrt();
        weights.push(Matrix::from_fn(config.widths[l + 1], fan_in, |_, _| {
            w_std * rng.normal()
        }));
        biases.push((0..config.widths[l + 1]).map(|_| b_std * rng.normal()).collect());
    }
    Ok(MlpParams { weights, biases })
}

fn act(a: f64, kind: Activation) -> f64 {
    match kind {
        Activation::Relu => a.max(0.0),
        Activation::Tanh => a.tanh(),
    }
}

fn act_grad(a: f64, kind: Activation) -> f64 {
    match kind {
        Activation::Relu => {
            if a > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => {
            let t = a.tanh();
            1.0 - t * t
        }
    }
}

/// Values stashed by [`mlp_forward`] for the backward pass: the input to
/// each layer and the pre-activations of the hidden layers.
#[derive(Clone, Debug)]
pub struct MlpCache {
    layer_inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

/// Affine + activation for every hidden layer, affine readout. Output has
/// length `p = widths.last()`.
pub fn mlp_forward(
    params: &MlpParams,
    config: &MlpConfig,
    x: &[f64],
) -> Result<(Vec<f64>, MlpCache)> {
    if x.len() != config.d_in() {
        return Err(IckError::shape(
            "mlp input",
            format!("{} coords", config.d_in()),
            format!("{} coords", x.len()),
        ));
    }
    let layers = config.layers();
    let mut layer_inputs = Vec::with_capacity(layers);
    let mut pre_activations = Vec::with_capacity(layers.saturating_sub(1));
    let mut h = x.to_vec();
    for l in 0..layers {
        layer_inputs.push(h.clone());
        let mut a = params.weights[l].mul_vec(&h);
        for (ai, bi) in a.iter_mut().zip(&params.biases[l]) {
            *ai += bi;
        }
        if l + 1 < layers {
            pre_activations.push(a.clone());
            h = a.into_iter().map(|v| act(v, config.activation)).collect();
        } else {
            h = a;
        }
    }
    Ok((h, MlpCache { layer_inputs, pre_activations }))
}

/// Exact reverse-mode gradients for the upstream output gradient `dz`.
/// Under `TrainableScope::LastLayerOnly` all earlier layers come back as
/// zeros.
pub fn mlp_backward(
    params: &MlpParams,
    config: &MlpConfig,
    cache: &MlpCache,
    dz: &[f64],
) -> Result<MlpParams> {
    if dz.len() != config.d_out() {
        return Err(IckError::shape(
            "mlp upstream",
            format!("{} coords", config.d_out()),
            format!("{} coords", dz.len()),
        ));
    }
    let layers = config.layers();
    let mut grads = MlpParams::zeros_like(config);
    let mut g = dz.to_vec();
    for l in (0..layers).rev() {
        let input = &cache.layer_inputs[l];
        // accumulate dW = g x input^T and db = g
        for (i, gi) in g.iter().enumerate() {
            let row = grads.weights[l].row_mut(i);
            for (rj, xj) in row.iter_mut().zip(input) {
                *rj += gi * xj;
            }
            grads.biases[l][i] += gi;
        }
        if l == 0 {
            break;
        }
        if config.trainable == TrainableScope::LastLayerOnly && l == layers - 1 {
            // earlier layers keep zero gradients; stop the sweep
            break;
        }
        // dh^{l-1} = W^T g, then through the activation of layer l-1
        let w = &params.weights[l];
        let mut dh = vec![0.0; w.cols()];
        for (i, gi) in g.iter().enumerate() {
            if *gi == 0.0 {
                continue;
            }
            for (dj, wij) in dh.iter_mut().zip(w.row(i)) {
                *dj += gi * wij;
            }
        }
        let pre = &cache.pre_activations[l - 1];
        g = dh
            .into_iter()
            .zip(pre)
            .map(|(d, a)| d * act_grad(*a, config.activation))
            .collect();
    }
    if config.trainable == TrainableScope::LastLayerOnly {
        for l in 0..layers - 1 {
            grads.weights[l] = Matrix::zeros(grads.weights[l].rows(), grads.weights[l].cols());
            grads.biases[l] = vec![0.0; grads.biases[l].len()];
        }
    }
    Ok(grads)
}

/// Depth-`L` arc-cosine recursion for ReLU networks:
///
/// `K^0 = sigma_b^2 + sigma_w^2 <x, x'> / d_in`, then per hidden layer
/// `K^{l+1} = sigma_b^2 + sigma_w^2 / (2 pi) sqrt(K^l_xx K^l_x'x')
///   (sin th + (pi - th) cos th)` with
/// `th = arccos(K^l_xx' / sqrt(K^l_xx K^l_x'x'))`.
pub fn nngp_relu_kernel(config: &MlpConfig, x: &[f64], x2: &[f64]) -> Result<f64> {
    if config.activation != Activation::Relu {
        return Err(IckError::UnsupportedActivation {
            activation: format!("{:?}", config.activation),
        });
    }
    config.validate()?;
    if x.len() != config.d_in() || x2.len() != config.d_in() {
        return Err(IckError::shape(
            "nngp input",
            format!("{} coords", config.d_in()),
            format!("{} and {} coords", x.len(), x2.len()),
        ));
    }
    let (sw2, sb2) = (config.sigma_w2, config.sigma_b2);
    let d_in = config.d_in() as f64;
    let mut kxx = sb2 + sw2 * dot(x, x) / d_in;
    let mut kyy = sb2 + sw2 * dot(x2, x2) / d_in;
    let mut kxy = sb2 + sw2 * dot(x, x2) / d_in;
    let hidden = config.layers() - 1;
    for _ in 0..hidden {
        let denom = (kxx * kyy).sqrt();
        let cross = if denom < 1e-300 {
            sb2
        } else {
            let theta = (kxy / denom).clamp(-1.0, 1.0).acos();
            sb2 + sw2 / (2.0 * std::f64::consts::PI)
                * denom
                * (theta.sin() + (std::f64::consts::PI - theta) * theta.cos())
        };
        kxx = sb2 + 0.5 * sw2 * kxx;
        kyy = sb2 + 0.5 * sw2 * kyy;
        kxy = cross;
    }
    Ok(kxy)
}

/// Gram matrix of [`nngp_relu_kernel`] over row sets `x` and `x2`.
pub fn nngp_relu_matrix(config: &MlpConfig, x: &Matrix, x2: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(x.rows(), x2.rows());
    for i in 0..x.rows() {
        for j in 0..x2.rows() {
            out[(i, j)] = nngp_relu_kernel(config, x.row(i), x2.row(j))?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigvals;

    #[test]
    fn init_weight_variance_matches_fan_in_scaling() {
        let config = MlpConfig::relu(vec![4096, 8]);
        let mut rng = RngState::new(1);
        let params = mlp_init(&config, &mut rng).unwrap();
        let w = &params.weights[0];
        let n = (w.rows() * w.cols()) as f64;
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / n;
        let expect = 2.0 / 4096.0;
        assert!((var - expect).abs() / expect < 0.05, "var {var} expect {expect}");
    }

    #[test]
    fn zero_bias_variance_gives_zero_biases() {
        let mut config = MlpConfig::relu(vec![3, 5, 2]);
        config.sigma_b2 = 0.0;
        let params = mlp_init(&config, &mut RngState::new(2)).unwrap();
        for b in &params.biases {
            assert!(b.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn init_deterministic() {
        let config = MlpConfig::relu(vec![3, 7, 2]);
        let a = mlp_init(&config, &mut RngState::new(9)).unwrap();
        let b = mlp_init(&config, &mut RngState::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_zero_weights_returns_readout_bias() {
        let config = MlpConfig::relu(vec![2, 3, 2]);
        let mut params = MlpParams::zeros_like(&config);
        params.biases[1] = vec![0.5, -1.5];
        let (z, _) = mlp_forward(&params, &config, &[1.0, 2.0]).unwrap();
        assert_eq!(z, vec![0.5, -1.5]);
    }

    #[test]
    fn forward_hand_arithmetic() {
        // 1-1-1 relu net: W1 = 1, b1 = 0, W2 = 2, b2 = 1, x = 3 -> 7
        let config = MlpConfig::relu(vec![1, 1, 1]);
        let params = MlpParams {
            weights: vec![
                Matrix::from_vec(1, 1, vec![1.0]),
                Matrix::from_vec(1, 1, vec![2.0]),
            ],
            biases: vec![vec![0.0], vec![1.0]],
        };
        let (z, _) = mlp_forward(&params, &config, &[3.0]).unwrap();
        assert_eq!(z, vec![7.0]);
    }

    /// Straight-line evaluator written independently of `mlp_forward`.
    fn straight_line(params: &MlpParams, config: &MlpConfig, x: &[f64]) -> Vec<f64> {
        let mut h: Vec<f64> = x.to_vec();
        let last = params.weights.len() - 1;
        for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
            let mut next = vec![0.0; w.rows()];
            for (i, nv) in next.iter_mut().enumerate() {
                let mut acc = b[i];
                for (j, hj) in h.iter().enumerate() {
                    acc += w[(i, j)] * hj;
                }
                if l < last {
                    acc = match config.activation {
                        Activation::Relu => acc.max(0.0),
                        Activation::Tanh => acc.tanh(),
                    };
                }
                *nv = acc;
            }
            h = next;
        }
        h
    }

    #[test]
    fn forward_matches_independent_evaluator() {
        for activation in [Activation::Relu, Activation::Tanh] {
            let config = MlpConfig {
                widths: vec![3, 5, 4, 2],
                activation,
                sigma_w2: 2.0,
                sigma_b2: 0.5,
                trainable: TrainableScope::All,
            };
            let mut rng = RngState::new(33);
            let params = mlp_init(&config, &mut rng).unwrap();
            let x: Vec<f64> = rng.normal_vec(3);
            let (z, _) = mlp_forward(&params, &config, &x).unwrap();
            let z2 = straight_line(&params, &config, &x);
            for (a, b) in z.iter().zip(&z2) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_zero_upstream() {
        let config = MlpConfig::relu(vec![2, 4, 3]);
        let params = mlp_init(&config, &mut RngState::new(5)).unwrap();
        let (_, cache) = mlp_forward(&params, &config, &[0.3, -0.8]).unwrap();
        let grads = mlp_backward(&params, &config, &cache, &[0.0, 0.0, 0.0]).unwrap();
        for w in &grads.weights {
            assert_eq!(w.max_abs(), 0.0);
        }
    }

    fn fd_check(config: &MlpConfig, tol: f64) {
        let mut rng = RngState::new(61);
        let params = mlp_init(config, &mut rng).unwrap();
        let x: Vec<f64> = rng.normal_vec(config.d_in());
        // probe loss: sum of outputs
        let probe = |p: &MlpParams| -> f64 {
            let (z, _) = mlp_forward(p, config, &x).unwrap();
            z.iter().sum()
        };
        let (z, cache) = mlp_forward(&params, config, &x).unwrap();
        let grads = mlp_backward(&params, config, &cache, &vec![1.0; z.len()]).unwrap();
        let h = 1e-5;
        let trainable_from = match config.trainable {
            TrainableScope::All => 0,
            TrainableScope::LastLayerOnly => config.layers() - 1,
        };
        for l in 0..config.layers() {
            for i in 0..params.weights[l].rows() {
                for j in 0..params.weights[l].cols() {
                    let mut pp = params.clone();
                    let mut pm = params.clone();
                    pp.weights[l][(i, j)] += h;
                    pm.weights[l][(i, j)] -= h;
                    let fd = (probe(&pp) - probe(&pm)) / (2.0 * h);
                    let expected = if l < trainable_from { 0.0 } else { fd };
                    let g = grads.weights[l][(i, j)];
                    let scale = g.abs().max(expected.abs()).max(1e-4);
                    assert!(
                        (g - expected).abs() / scale <= tol,
                        "layer {l} w({i},{j}): {g} vs {expected}"
                    );
                }
                let mut pp = params.clone();
                let mut pm = params.clone();
                pp.biases[l][i] += h;
                pm.biases[l][i] -= h;
                let fd = (probe(&pp) - probe(&pm)) / (2.0 * h);
                let expected = if l < trainable_from { 0.0 } else { fd };
                let g = grads.biases[l][i];
                let scale = g.abs().max(expected.abs()).max(1e-4);
                assert!(
                    (g - expected).abs() / scale <= tol,
                    "layer {l} b({i}): {g} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences_relu() {
        fd_check(
            &MlpConfig {
                widths: vec![2, 6, 5, 3],
                activation: Activation::Relu,
                sigma_w2: 2.0,
                sigma_b2: 0.1,
                trainable: TrainableScope::All,
            },
            1e-5,
        );
    }

    #[test]
    fn backward_matches_finite_differences_tanh() {
        fd_check(
            &MlpConfig {
                widths: vec![2, 6, 5, 3],
                activation: Activation::Tanh,
                sigma_w2: 1.5,
                sigma_b2: 0.2,
                trainable: TrainableScope::All,
            },
            1e-5,
        );
    }

    #[test]
    fn backward_last_layer_only_zeroes_earlier_layers() {
        fd_check(
            &MlpConfig {
                widths: vec![2, 5, 4, 3],
                activation: Activation::Relu,
                sigma_w2: 2.0,
                sigma_b2: 0.1,
                trainable: TrainableScope::LastLayerOnly,
            },
            1e-5,
        );
    }

    #[test]
    fn nngp_diagonal_recursion() {
        let config = MlpConfig::relu(vec![2, 16, 16, 4]);
        let x = [0.6, -0.2];
        let k = nngp_relu_kernel(&config, &x, &x).unwrap();
        // follow the diagonal recursion by hand
        let mut kd = config.sigma_b2 + config.sigma_w2 * dot(&x, &x) / 2.0;
        for _ in 0..2 {
            kd = config.sigma_b2 + 0.5 * config.sigma_w2 * kd;
        }
        assert!((k - kd).abs() < 1e-12);
    }

    #[test]
    fn nngp_tanh_unsupported() {
        let config = MlpConfig {
            widths: vec![1, 4, 1],
            activation: Activation::Tanh,
            sigma_w2: 1.0,
            sigma_b2: 0.0,
            trainable: TrainableScope::All,
        };
        assert!(matches!(
            nngp_relu_kernel(&config, &[1.0], &[1.0]),
            Err(IckError::UnsupportedActivation { .. })
        ));
    }

    #[test]
    fn nngp_matrix_is_psd() {
        let config = MlpConfig::relu(vec![1, 32, 4]);
        let mut rng = RngState::new(3);
        let pts = Matrix::from_fn(10, 1, |_, _| rng.uniform_in(-2.0, 2.0));
        let k = nngp_relu_matrix(&config, &pts, &pts).unwrap();
        let ev = sym_eigvals(&k).unwrap();
        assert!(ev[ev.len() - 1] >= -1e-8 * ev[0]);
    }

    /// Empirical covariance of one output coordinate over fresh inits.
    fn mc_cov(config: &MlpConfig, xs: &Matrix, draws: usize, seed: u64) -> (Matrix, Matrix) {
        let n = xs.rows();
        let mut sums = Matrix::zeros(n, n);
        let mut sq = Matrix::zeros(n, n);
        let mut rng = RngState::new(seed);
        for _ in 0..draws {
            let params = mlp_init(config, &mut rng).unwrap();
            let outs: Vec<f64> = (0..n)
                .map(|i| mlp_forward(&params, config, xs.row(i)).unwrap().0[0])
                .collect();
            for i in 0..n {
                for j in 0..n {
                    let prod = outs[i] * outs[j];
                    sums[(i, j)] += prod;
                    sq[(i, j)] += prod * prod;
                }
            }
        }
        let d = draws as f64;
        let mean = sums.scale(1.0 / d);
        let mut se = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let var = (sq[(i, j)] / d - mean[(i, j)] * mean[(i, j)]).max(0.0);
                se[(i, j)] = (var / d).sqrt();
            }
        }
        (mean, se)
    }

    #[test]
    fn nngp_matches_wide_network_monte_carlo() {
        let config = MlpConfig {
            widths: vec![2, 2048, 1],
            activation: Activation::Relu,
            sigma_w2: 2.0,
            sigma_b2: 0.0,
            trainable: TrainableScope::All,
        };
        let xs = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.7, 0.7]]);
        let (emp, se) = mc_cov(&config, &xs, 3000, 77);
        let analytic = nngp_relu_matrix(&config, &xs, &xs).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let diff = (emp[(i, j)] - analytic[(i, j)]).abs();
                assert!(
                    diff <= 3.0 * se[(i, j)].max(1e-4),
                    "({i},{j}): emp {} vs analytic {} (se {})",
                    emp[(i, j)],
                    analytic[(i, j)],
                    se[(i, j)]
                );
            }
        }
    }

    #[test]
    fn prior_mean_is_zero() {
        let config = MlpConfig::relu(vec![1, 64, 2]);
        let mut rng = RngState::new(15);
        let draws = 5000;
        let mut sums = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        for _ in 0..draws {
            let params = mlp_init(&config, &mut rng).unwrap();
            let (z, _) = mlp_forward(&params, &config, &[0.8]).unwrap();
            for k in 0..2 {
                sums[k] += z[k];
                sq[k] += z[k] * z[k];
            }
        }
        for k in 0..2 {
            let mean = sums[k] / draws as f64;
            let std = (sq[k] / draws as f64 - mean * mean).sqrt();
            assert!(mean.abs() <= 3.0 * std / (draws as f64).sqrt(), "coord {k}");
        }
    }

    #[test]
    fn distinct_output_coordinates_uncorrelated_a_priori() {
        let config = MlpConfig::relu(vec![1, 64, 2]);
        let mut rng = RngState::new(25);
        let draws = 5000;
        let (xa, xb) = ([0.3], [1.2]);
        let mut prod_sum = 0.0;
        let mut prod_sq = 0.0;
        for _ in 0..draws {
            let params = mlp_init(&config, &mut rng).unwrap();
            let (za, _) = mlp_forward(&params, &config, &xa).unwrap();
            let (zb, _) = mlp_forward(&params, &config, &xb).unwrap();
            let prod = za[0] * zb[1];
            prod_sum += prod;
            prod_sq += prod * prod;
        }
        let d = draws as f64;
        let mean = prod_sum / d;
        let se = ((prod_sq / d - mean * mean) / d).sqrt();
        assert!(mean.abs() <= 3.0 * se, "cross covariance {mean} (se {se})");
    }
}
