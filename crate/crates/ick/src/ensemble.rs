//! Deep-ensemble posterior approximation and the exact GP oracle.
//!
//! An ensemble is `N_e` independently initialized and independently trained
//! models; its member mean and biased variance approximate a GP predictive
//! posterior. Under the `Nngp` strategy each member keeps everything except
//! the network readout layer fixed at its random initialization (kernel
//! parameters included), which is the regime where the trained ensemble
//! matches the closed-form posterior of the network-kernel times chosen
//! kernel composite.

use crate::data::Dataset;
use crate::error::{IckError, Result};
use crate::inputs::Inputs;
use crate::kernels::{kernel_matrix, KernelParams, KernelSpec};
use crate::linalg::{
    cholesky, solve_with_factor, triangular_solve, Matrix, RngState, Side, DEFAULT_JITTER,
};
use crate::model::{train, IckModel, ModelSpec, TrainConfig};
use crate::nn::Activation;

/// How members are initialized and which parameters stay trainable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    /// Freeze all but the network readout layer (kernel parameters too).
    Nngp,
    /// Train everything, as written in the per-branch configs.
    Free,
}

#[derive(Clone, Debug)]
pub struct EnsembleConfig {
    pub n_members: usize,
    pub member: TrainConfig,
    pub init: InitStrategy,
    pub base_seed: u64,
    pub threads: usize,
}

/// One trained ensemble member with its seed and loss trace.
#[derive(Clone, Debug)]
pub struct TrainedMember {
    pub model: IckModel,
    pub seed: u64,
    pub trace: Vec<f64>,
}

/// Round-robin indexed map over worker threads; output order is fixed by
/// index, so results do not depend on scheduling.
pub fn parallel_map_indexed<T: Send>(
    count: usize,
    threads: usize,
    f: impl Fn(usize) -> T + Sync,
) -> Vec<T> {
    let threads = threads.max(1).min(count.max(1));
    if threads == 1 {
        return (0..count).map(f).collect();
    }
    let mut results: Vec<(usize, T)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let f = &f;
                s.spawn(move || {
                    let mut local = Vec::new();
                    let mut i = t;
                    while i < count {
                        local.push((i, f(i)));
                        i += threads;
                    }
                    local
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("ensemble worker panicked"))
            .collect()
    });
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, v)| v).collect()
}

fn apply_strategy(spec: &ModelSpec, strategy: InitStrategy) -> ModelSpec {
    match strategy {
        InitStrategy::Free => spec.clone(),
        InitStrategy::Nngp => {
            let mut out = spec.clone();
            for b in &mut out.branches {
                if let crate::model::BranchSpec::Nn { config, .. } = b {
                    config.trainable = crate::nn::TrainableScope::LastLayerOnly;
                }
            }
            out
        }
    }
}

/// Builds member `index` of an ensemble without training it (used by prior
/// checks and by tests). Member seed is `base_seed + index`.
pub fn build_member(
    template: &ModelSpec,
    data: &Inputs,
    config: &EnsembleConfig,
    index: u64,
) -> Result<IckModel> {
    let spec = apply_strategy(template, config.init);
    let seed = config.base_seed.wrapping_add(index);
    let mut model = spec.build(data, &mut RngState::new(seed))?;
    if config.init == InitStrategy::Nngp {
        model.freeze_kernel_params = true;
    }
    Ok(model)
}

/// Trains `N_e` members, each independently initialized from seed
/// `base_seed + index` and trained on the full dataset.
pub fn train_ensemble(
    template: &ModelSpec,
    data: &Dataset,
    config: &EnsembleConfig,
) -> Result<Vec<TrainedMember>> {
    if config.n_members == 0 {
        return Err(IckError::EmptyEnsemble);
    }
    let results = parallel_map_indexed(config.n_members, config.threads, |i| {
        let seed = config.base_seed.wrapping_add(i as u64);
        let mut model = build_member(template, &data.x, config, i as u64)?;
        let mut member_cfg = config.member.clone();
        member_cfg.seed = seed;
        let trace = train(&mut model, data, &member_cfg)?;
        Ok(TrainedMember { model, seed, trace })
    });
    results.into_iter().collect()
}

/// Predictive mean and biased variance over members:
/// `mu = mean_s f_s(x)`, `sigma2 = (1/N_e) sum_s (f_s(x) - mu)^2`.
pub fn ensemble_stats(members: &[IckModel], x: &Inputs) -> Result<(Vec<f64>, Vec<f64>)> {
    if members.is_empty() {
        return Err(IckError::EmptyEnsemble);
    }
    let n = x.n();
    let preds: Vec<Vec<f64>> = members
        .iter()
        .map(|m| m.predict(x))
        .collect::<Result<Vec<_>>>()?;
    let n_e = members.len() as f64;
    let mut mean = vec![0.0; n];
    for p in &preds {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n_e;
        }
    }
    let mut var = vec![0.0; n];
    for p in &preds {
        for i in 0..n {
            let d = p[i] - mean[i];
            var[i] += d * d / n_e;
        }
    }
    Ok((mean, var))
}

/// Per-member predictions as a `N_e x n` matrix, for marginal comparisons.
pub fn member_predictions(members: &[IckModel], x: &Inputs) -> Result<Matrix> {
    if members.is_empty() {
        return Err(IckError::EmptyEnsemble);
    }
    let n = x.n();
    let mut out = Matrix::zeros(members.len(), n);
    for (s, m) in members.iter().enumerate() {
        let p = m.predict(x)?;
        out.row_mut(s).copy_from_slice(&p);
    }
    Ok(out)
}

/// Exact GP predictive posterior.
#[derive(Clone, Debug)]
pub struct GpPosterior {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    pub noise_var: f64,
}

impl GpPosterior {
    pub fn variances(&self) -> Vec<f64> {
        self.cov.diag()
    }

    pub fn std_devs(&self) -> Vec<f64> {
        self.cov.diag().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

/// Posterior from precomputed Gram blocks:
/// `mu* = K*x (Kxx + s I)^{-1} y`,
/// `Sigma* = K** - K*x (Kxx + s I)^{-1} Kx*`,
/// computed through a Cholesky factor (never an explicit inverse).
pub fn gp_posterior_from_gram(
    k_xx: &Matrix,
    k_star_x: &Matrix,
    k_star_star: &Matrix,
    y: &[f64],
    noise_var: f64,
) -> Result<GpPosterior> {
    if k_xx.rows() != y.len() {
        return Err(IckError::shape(
            "gp posterior targets",
            format!("{} values", k_xx.rows()),
            format!("{} values", y.len()),
        ));
    }
    if k_star_x.cols() != k_xx.rows() || k_star_star.rows() != k_star_x.rows() {
        return Err(IckError::shape(
            "gp posterior grams",
            format!("K*x {}x{}", k_star_star.rows(), k_xx.rows()),
            format!("K*x {}x{}", k_star_x.rows(), k_star_x.cols()),
        ));
    }
    if noise_var < 0.0 {
        return Err(IckError::InvalidConfig("noise variance must be >= 0".into()));
    }
    let factor = cholesky(&k_xx.add_diag(noise_var), DEFAULT_JITTER)?;
    let y_col = Matrix::from_vec(y.len(), 1, y.to_vec());
    let alpha = solve_with_factor(&factor.l, &y_col)?;
    let mean = k_star_x.matmul(&alpha).data().to_vec();
    // V = L^{-1} Kx*, Sigma* = K** - V^T V
    let v = triangular_solve(&factor.l, &k_star_x.transpose(), Side::Lower)?;
    let cov = k_star_star.sub(&v.transpose().matmul(&v));
    Ok(GpPosterior { mean, cov, noise_var })
}

/// Exact posterior for a declarative kernel over multi-source inputs.
pub fn gp_exact_posterior(
    spec: &KernelSpec,
    params: &KernelParams,
    x_train: &Inputs,
    y: &[f64],
    x_test: &Inputs,
    noise_var: f64,
) -> Result<GpPosterior> {
    let k_xx = kernel_matrix(spec, params, x_train, x_train)?;
    let k_star_x = kernel_matrix(spec, params, x_test, x_train)?;
    let k_star_star = kernel_matrix(spec, params, x_test, x_test)?;
    gp_posterior_from_gram(&k_xx, &k_star_x, &k_star_star, y, noise_var)
}

/// Empirical covariance of untrained predictions over fresh initializations,
/// with per-entry Monte-Carlo standard errors.
///
/// Draws `n_draws` models from the template (member seeds derived from
/// `rng`), evaluates them on the probe points, and returns
/// `(covariance, standard_error)` matrices.
pub fn prior_covariance_mc(
    template: &ModelSpec,
    x_probe: &Inputs,
    n_draws: usize,
    rng: &mut RngState,
) -> Result<(Matrix, Matrix)> {
    if n_draws < 2 {
        return Err(IckError::InvalidConfig("prior covariance needs n_draws >= 2".into()));
    }
    for b in &template.branches {
        if let crate::model::BranchSpec::Nn { config, .. } = b {
            if config.activation != Activation::Relu {
                return Err(IckError::UnsupportedActivation {
                    activation: format!("{:?}", config.activation),
                });
            }
        }
    }
    let n = x_probe.n();
    let mut sum = vec![0.0; n];
    let mut prod_sum = Matrix::zeros(n, n);
    let mut prod_sq = Matrix::zeros(n, n);
    for _ in 0..n_draws {
        let seed = rng.next_u64();
        let model = template.build(x_probe, &mut RngState::new(seed))?;
        let preds = model.predict(x_probe)?;
        for i in 0..n {
            sum[i] += preds[i];
            for j in 0..n {
                let p = preds[i] * preds[j];
                prod_sum[(i, j)] += p;
                prod_sq[(i, j)] += p * p;
            }
        }
    }
    let d = n_draws as f64;
    let mut cov = Matrix::zeros(n, n);
    let mut se = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mean_prod = prod_sum[(i, j)] / d;
            cov[(i, j)] = mean_prod - (sum[i] / d) * (sum[j] / d);
            let var_prod = (prod_sq[(i, j)] / d - mean_prod * mean_prod).max(0.0);
            se[(i, j)] = (var_prod / d).sqrt();
        }
    }
    Ok((cov, se))
}
