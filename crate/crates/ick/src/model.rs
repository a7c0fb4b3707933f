//! The implicit-composite-kernel model: per-source branches combined by a
//! chained inner product, with losses, optimizers, the minibatch training
//! loop, and a softmax classifier wrapper.
//!
//! Prediction for `M` branches producing `z^(1), ..., z^(M)` in `R^p` is
//! `y_hat = sum_k prod_m z_k^(m)`; gradients for branch `m` multiply the
//! loss gradient by the product of the other branches' coordinates, so the
//! whole model trains with one forward pass per batch and manual reverse
//! mode throughout.

use serde_json::{json, Value};

use crate::error::{IckError, Result};
use crate::inputs::Inputs;
use crate::kernels::{kernel_from_json, kernel_to_json, KernelParams, KernelSpec};
use crate::latentmap::{NystromCache, NystromMap, RffMap};
use crate::linalg::{Matrix, RngState};
use crate::nn::{mlp_backward, mlp_forward, mlp_init, MlpCache, MlpConfig, MlpParams};

/// One per-source branch of the model.
#[derive(Clone, Debug)]
pub enum Branch {
    Nn {
        source: usize,
        config: MlpConfig,
        params: MlpParams,
    },
    Nystrom(NystromMap),
    Rff(RffMap),
}

impl Branch {
    pub fn source(&self) -> usize {
        match self {
            Branch::Nn { source, .. } => *source,
            Branch::Nystrom(m) => m.source(),
            Branch::Rff(m) => m.source(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Branch::Nn { config, .. } => config.d_out(),
            Branch::Nystrom(m) => m.p(),
            Branch::Rff(m) => m.p(),
        }
    }

    fn forward(&self, x: &Inputs) -> Result<(Matrix, BranchCache)> {
        match self {
            Branch::Nn { source, config, params } => {
                let data = x.source(*source)?;
                let n = data.rows();
                let mut z = Matrix::zeros(config.d_out(), n);
                let mut caches = Vec::with_capacity(n);
                for i in 0..n {
                    let (out, cache) = mlp_forward(params, config, data.row(i))?;
                    for (k, v) in out.iter().enumerate() {
                        z[(k, i)] = *v;
                    }
                    caches.push(cache);
                }
                Ok((z, BranchCache::Nn(caches)))
            }
            Branch::Nystrom(m) => {
                let (z, cache) = m.forward(x)?;
                Ok((z, BranchCache::Nystrom(cache)))
            }
            Branch::Rff(m) => Ok((m.forward(x)?, BranchCache::Rff)),
        }
    }

    fn backward(&self, x: &Inputs, cache: &BranchCache, z_bar: &Matrix) -> Result<BranchGrads> {
        match (self, cache) {
            (Branch::Nn { source, config, params }, BranchCache::Nn(caches)) => {
                let data = x.source(*source)?;
                let mut acc = MlpParams::zeros_like(config);
                let mut dz = vec![0.0; config.d_out()];
                for i in 0..data.rows() {
                    for (k, d) in dz.iter_mut().enumerate() {
                        *d = z_bar[(k, i)];
                    }
                    let g = mlp_backward(params, config, &caches[i], &dz)?;
                    for l in 0..acc.weights.len() {
                        acc.weights[l] = acc.weights[l].add(&g.weights[l]);
                        for (a, b) in acc.biases[l].iter_mut().zip(&g.biases[l]) {
                            *a += b;
                        }
                    }
                }
                Ok(BranchGrads::Nn(acc))
            }
            (Branch::Nystrom(m), BranchCache::Nystrom(cache)) => {
                Ok(BranchGrads::Kernel(m.vjp(x, cache, z_bar)?))
            }
            (Branch::Rff(m), BranchCache::Rff) => Ok(BranchGrads::Kernel(m.vjp(x, z_bar)?)),
            _ => unreachable!("cache kind always matches its branch"),
        }
    }
}

#[derive(Debug)]
enum BranchCache {
    Nn(Vec<MlpCache>),
    Nystrom(NystromCache),
    Rff,
}

#[derive(Debug)]
enum BranchGrads {
    Nn(MlpParams),
    Kernel(Vec<f64>),
}

/// Ordered branches sharing latent dimension `p`, one per source.
#[derive(Clone, Debug)]
pub struct IckModel {
    branches: Vec<Branch>,
    p: usize,
    /// When set, kernel-branch parameters receive no updates (used by the
    /// ensemble strategy that keeps everything but the readout layer fixed).
    pub freeze_kernel_params: bool,
}

impl IckModel {
    pub fn new(branches: Vec<Branch>) -> Result<Self> {
        if branches.is_empty() {
            return Err(IckError::InvalidConfig("model needs at least one branch".into()));
        }
        let p = branches[0].output_dim();
        for b in &branches {
            if b.output_dim() != p {
                return Err(IckError::shape(
                    "model latent dimension",
                    format!("{p}"),
                    format!("{}", b.output_dim()),
                ));
            }
        }
        let mut sources: Vec<usize> = branches.iter().map(|b| b.source()).collect();
        sources.sort_unstable();
        let expect: Vec<usize> = (1..=branches.len()).collect();
        if sources != expect {
            return Err(IckError::InvalidConfig(format!(
                "branches must consume sources 1..={} exactly once, found {sources:?}",
                branches.len()
            )));
        }
        Ok(IckModel { branches, p, freeze_kernel_params: false })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn num_sources(&self) -> usize {
        self.branches.len()
    }

    fn check_sources(&self, x: &Inputs) -> Result<()> {
        for b in &self.branches {
            if b.source() > x.num_sources() {
                return Err(IckError::MissingSource { index: b.source() });
            }
        }
        Ok(())
    }

    fn forward_branches(&self, x: &Inputs) -> Result<Vec<(Matrix, BranchCache)>> {
        self.check_sources(x)?;
        self.branches.iter().map(|b| b.forward(x)).collect()
    }

    /// Batch prediction `y_hat_i = sum_k prod_m Z^(m)[k, i]`.
    pub fn predict(&self, x: &Inputs) -> Result<Vec<f64>> {
        let zs = self.forward_branches(x)?;
        Ok(chained_product_sum(&zs.iter().map(|(z, _)| z).collect::<Vec<_>>(), x.n(), self.p))
    }

    /// Scalar prediction for a single multi-source point.
    pub fn predict_one(&self, x: &Inputs) -> Result<f64> {
        if x.n() != 1 {
            return Err(IckError::shape("predict_one", "1 row", format!("{} rows", x.n())));
        }
        Ok(self.predict(x)?[0])
    }

    // -- flat parameter plumbing -------------------------------------------

    /// Flattens all parameters: per branch, NN weights row-major then biases
    /// per layer, or the unconstrained kernel vector. The mask marks entries
    /// receiving decoupled weight decay (trainable NN weight matrices only).
    pub fn flatten(&self) -> (Vec<f64>, Vec<bool>) {
        let mut flat = Vec::new();
        let mut decay = Vec::new();
        for b in &self.branches {
            match b {
                Branch::Nn { config, params, .. } => {
                    let last = params.weights.len() - 1;
                    for (l, (w, bias)) in params.weights.iter().zip(&params.biases).enumerate() {
                        let trainable = match config.trainable {
                            crate::nn::TrainableScope::All => true,
                            crate::nn::TrainableScope::LastLayerOnly => l == last,
                        };
                        flat.extend_from_slice(w.data());
                        decay.extend(std::iter::repeat(trainable).take(w.data().len()));
                        flat.extend_from_slice(bias);
                        decay.extend(std::iter::repeat(false).take(bias.len()));
                    }
                }
                Branch::Nystrom(m) => {
                    flat.extend_from_slice(&m.params.values);
                    decay.extend(std::iter::repeat(false).take(m.params.values.len()));
                }
                Branch::Rff(m) => {
                    flat.extend_from_slice(&m.params.values);
                    decay.extend(std::iter::repeat(false).take(m.params.values.len()));
                }
            }
        }
        (flat, decay)
    }

    /// Writes a flat vector produced by [`IckModel::flatten`] back into the
    /// branch parameters.
    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut off = 0;
        for b in &mut self.branches {
            match b {
                Branch::Nn { config, params, .. } => {
                    let _ = config;
                    for l in 0..params.weights.len() {
                        let w = &mut params.weights[l];
                        let len = w.rows() * w.cols();
                        let dst = Matrix::from_vec(w.rows(), w.cols(), flat[off..off + len].to_vec());
                        *w = dst;
                        off += len;
                        let bias = &mut params.biases[l];
                        let blen = bias.len();
                        bias.copy_from_slice(&flat[off..off + blen]);
                        off += blen;
                    }
                }
                Branch::Nystrom(m) => {
                    let len = m.params.values.len();
                    m.params = KernelParams::new(flat[off..off + len].to_vec());
                    off += len;
                }
                Branch::Rff(m) => {
                    let len = m.params.values.len();
                    m.params = KernelParams::new(flat[off..off + len].to_vec());
                    off += len;
                }
            }
        }
        debug_assert_eq!(off, flat.len());
    }

    fn flatten_grads(&self, grads: &[BranchGrads]) -> Vec<f64> {
        let mut flat = Vec::new();
        for (b, g) in self.branches.iter().zip(grads) {
            match (b, g) {
                (Branch::Nn { .. }, BranchGrads::Nn(p)) => {
                    for (w, bias) in p.weights.iter().zip(&p.biases) {
                        flat.extend_from_slice(w.data());
                        flat.extend_from_slice(bias);
                    }
                }
                (_, BranchGrads::Kernel(v)) => {
                    if self.freeze_kernel_params {
                        flat.extend(std::iter::repeat(0.0).take(v.len()));
                    } else {
                        flat.extend_from_slice(v);
                    }
                }
                _ => unreachable!(),
            }
        }
        flat
    }
}

fn chained_product_sum(zs: &[&Matrix], n: usize, p: usize) -> Vec<f64> {
    let mut preds = vec![0.0; n];
    for i in 0..n {
        let mut total = 0.0;
        for k in 0..p {
            let mut prod = 1.0;
            for z in zs {
                prod *= z[(k, i)];
            }
            total += prod;
        }
        preds[i] = total;
    }
    preds
}

// ---------------------------------------------------------------------------
// Loss functions
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Mse,
    Mae,
}

/// Loss value and its gradient with respect to the predictions.
/// MSE: mean squared error, gradient `2 (pred - y) / n`. MAE: mean absolute
/// error, subgradient `sign(pred - y) / n` (zero at ties).
pub fn compute_loss(pred: &[f64], y: &[f64], kind: Loss) -> Result<(f64, Vec<f64>)> {
    if pred.len() != y.len() {
        return Err(IckError::shape(
            "loss",
            format!("{} predictions", y.len()),
            format!("{} predictions", pred.len()),
        ));
    }
    let n = pred.len() as f64;
    match kind {
        Loss::Mse => {
            let mut total = 0.0;
            let mut grad = vec![0.0; pred.len()];
            for i in 0..pred.len() {
                let d = pred[i] - y[i];
                total += d * d;
                grad[i] = 2.0 * d / n;
            }
            Ok((total / n, grad))
        }
        Loss::Mae => {
            let mut total = 0.0;
            let mut grad = vec![0.0; pred.len()];
            for i in 0..pred.len() {
                let d = pred[i] - y[i];
                total += d.abs();
                grad[i] = if d > 0.0 {
                    1.0 / n
                } else if d < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                };
            }
            Ok((total / n, grad))
        }
    }
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64 },
}

impl Optimizer {
    /// Adam with the usual `beta1 = 0.9`, `beta2 = 0.999`.
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999 }
    }

    /// SGD with momentum 0.9.
    pub fn sgd() -> Self {
        Optimizer::Sgd { momentum: 0.9 }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: Loss,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(IckError::InvalidConfig("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(IckError::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(IckError::InvalidConfig("weight decay must be >= 0".into()));
        }
        Ok(())
    }
}

const ADAM_EPS: f64 = 1e-8;

/// Momentum / moment buffers plus the decay mask for decoupled weight decay.
#[derive(Clone, Debug)]
pub struct OptState {
    step: usize,
    velocity: Vec<f64>,
    second: Vec<f64>,
    decay_mask: Vec<bool>,
}

impl OptState {
    pub fn new(dim: usize, decay_mask: Vec<bool>) -> Self {
        assert_eq!(dim, decay_mask.len());
        OptState {
            step: 0,
            velocity: vec![0.0; dim],
            second: vec![0.0; dim],
            decay_mask,
        }
    }
}

/// One optimizer update in place: SGD-with-momentum or bias-corrected Adam,
/// followed by decoupled weight decay on the masked entries.
pub fn optimizer_step(
    state: &mut OptState,
    params: &mut [f64],
    grads: &[f64],
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(IckError::shape(
            "optimizer_step",
            format!("{} params", state.velocity.len()),
            format!("{} params, {} grads", params.len(), grads.len()),
        ));
    }
    state.step += 1;
    let lr = config.learning_rate;
    match config.optimizer {
        Optimizer::Sgd { momentum } => {
            for i in 0..params.len() {
                state.velocity[i] = momentum * state.velocity[i] + grads[i];
                params[i] -= lr * state.velocity[i];
            }
        }
        Optimizer::Adam { beta1, beta2 } => {
            let t = state.step as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            for i in 0..params.len() {
                state.velocity[i] = beta1 * state.velocity[i] + (1.0 - beta1) * grads[i];
                state.second[i] = beta2 * state.second[i] + (1.0 - beta2) * grads[i] * grads[i];
                let mh = state.velocity[i] / bc1;
                let vh = state.second[i] / bc2;
                params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
            }
        }
    }
    if config.weight_decay > 0.0 {
        for i in 0..params.len() {
            if state.decay_mask[i] {
                params[i] -= lr * config.weight_decay * params[i];
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Per-branch upstream gradients for the chained product: branch `m` gets
/// `dpred_i * prod_{m' != m} Z^(m')[k, i]`.
fn branch_upstreams(zs: &[&Matrix], dpred: &[f64], p: usize) -> Vec<Matrix> {
    let n = dpred.len();
    let m_count = zs.len();
    let mut out = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let mut zb = Matrix::zeros(p, n);
        for i in 0..n {
            if dpred[i] == 0.0 {
                continue;
            }
            for k in 0..p {
                let mut prod = 1.0;
                for (mi, z) in zs.iter().enumerate() {
                    if mi != m {
                        prod *= z[(k, i)];
                    }
                }
                zb[(k, i)] = dpred[i] * prod;
            }
        }
        out.push(zb);
    }
    out
}

/// Minibatch training: per batch, forward every branch, combine by the
/// chained product, push the loss gradient back into each branch, and take
/// one optimizer step over all trainable parameters. Returns the mean
/// training loss per epoch. Fully deterministic given `config.seed`.
pub fn train(model: &mut IckModel, data: &crate::data::Dataset, config: &TrainConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if data.n() == 0 {
        return Err(IckError::DegenerateInput {
            context: "train",
            detail: "empty dataset".into(),
        });
    }
    model.check_sources(&data.x)?;
    let (mut flat, decay) = model.flatten();
    let mut state = OptState::new(flat.len(), decay);
    let mut rng = RngState::new(config.seed);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let perm = rng.shuffled_indices(data.n());
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in perm.chunks(config.batch_size).enumerate() {
            let xb = data.x.select(chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| data.y[i]).collect();
            let forwards = model.forward_branches(&xb)?;
            let z_refs: Vec<&Matrix> = forwards.iter().map(|(z, _)| z).collect();
            let preds = chained_product_sum(&z_refs, xb.n(), model.p);
            let (loss, dpred) = compute_loss(&preds, &yb, config.loss)?;
            if !loss.is_finite() {
                return Err(IckError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    value: loss,
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            let upstreams = branch_upstreams(&z_refs, &dpred, model.p);
            let mut grads = Vec::with_capacity(model.branches.len());
            for ((branch, (_, cache)), zb) in
                model.branches.iter().zip(&forwards).zip(&upstreams)
            {
                grads.push(branch.backward(&xb, cache, zb)?);
            }
            let flat_grads = model.flatten_grads(&grads);
            optimizer_step(&mut state, &mut flat, &flat_grads, config)?;
            model.unflatten(&flat);
        }
        trace.push(epoch_loss / data.n() as f64);
    }
    Ok(trace)
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Class probabilities via a max-subtracted softmax over per-class model
/// outputs. Returns an `n x C` matrix of probabilities.
pub fn classify_predict(models: &[IckModel], x: &Inputs) -> Result<Matrix> {
    if models.len() < 2 {
        return Err(IckError::InvalidConfig("classification needs at least 2 classes".into()));
    }
    let scores: Vec<Vec<f64>> = models
        .iter()
        .map(|m| m.predict(x))
        .collect::<Result<Vec<_>>>()?;
    let n = x.n();
    let c = models.len();
    let mut probs = Matrix::zeros(n, c);
    for i in 0..n {
        let row: Vec<f64> = scores.iter().map(|s| s[i]).collect();
        let soft = softmax(&row);
        for (j, p) in soft.iter().enumerate() {
            probs[(i, j)] = *p;
        }
    }
    Ok(probs)
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean cross-entropy of softmax class scores (`C x n`) against integer
/// labels, and its gradient with respect to the scores.
pub fn softmax_cross_entropy(scores: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (c, n) = (scores.rows(), scores.cols());
    if labels.len() != n {
        return Err(IckError::shape(
            "cross entropy",
            format!("{n} labels"),
            format!("{} labels", labels.len()),
        ));
    }
    let mut total = 0.0;
    let mut grad = Matrix::zeros(c, n);
    for i in 0..n {
        if labels[i] >= c {
            return Err(IckError::InvalidConfig(format!(
                "label {} out of range for {c} classes",
                labels[i]
            )));
        }
        let col: Vec<f64> = (0..c).map(|j| scores[(j, i)]).collect();
        let p = softmax(&col);
        total -= p[labels[i]].max(1e-300).ln();
        for j in 0..c {
            let indicator = if j == labels[i] { 1.0 } else { 0.0 };
            grad[(j, i)] = (p[j] - indicator) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// One model per class, trained jointly with cross-entropy.
pub struct IckClassifier {
    pub class_models: Vec<IckModel>,
}

impl IckClassifier {
    pub fn new(class_models: Vec<IckModel>) -> Result<Self> {
        if class_models.len() < 2 {
            return Err(IckError::InvalidConfig("classifier needs at least 2 classes".into()));
        }
        Ok(IckClassifier { class_models })
    }

    pub fn predict_proba(&self, x: &Inputs) -> Result<Matrix> {
        classify_predict(&self.class_models, x)
    }

    pub fn predict_labels(&self, x: &Inputs) -> Result<Vec<usize>> {
        let probs = self.predict_proba(x)?;
        Ok((0..probs.rows())
            .map(|i| {
                (0..probs.cols())
                    .max_by(|&a, &b| probs[(i, a)].partial_cmp(&probs[(i, b)]).unwrap())
                    .unwrap()
            })
            .collect())
    }

    /// Cross-entropy minibatch training over all class models; returns the
    /// mean loss per epoch.
    pub fn train(&mut self, data: &crate::data::Dataset, config: &TrainConfig) -> Result<Vec<f64>> {
        config.validate()?;
        let labels = data.labels.as_ref().ok_or_else(|| {
            IckError::InvalidConfig("classifier training needs labels".into())
        })?;
        let c = self.class_models.len();
        let mut flats = Vec::new();
        let mut states = Vec::new();
        for m in &self.class_models {
            let (flat, decay) = m.flatten();
            states.push(OptState::new(flat.len(), decay));
            flats.push(flat);
        }
        let mut rng = RngState::new(config.seed);
        let mut trace = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            let perm = rng.shuffled_indices(data.n());
            let mut epoch_loss = 0.0;
            for (batch_idx, chunk) in perm.chunks(config.batch_size).enumerate() {
                let xb = data.x.select(chunk);
                let lb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let mut all_forwards = Vec::with_capacity(c);
                let mut scores = Matrix::zeros(c, xb.n());
                for (j, m) in self.class_models.iter().enumerate() {
                    let forwards = m.forward_branches(&xb)?;
                    let z_refs: Vec<&Matrix> = forwards.iter().map(|(z, _)| z).collect();
                    let preds = chained_product_sum(&z_refs, xb.n(), m.p);
                    for (i, v) in preds.iter().enumerate() {
                        scores[(j, i)] = *v;
                    }
                    all_forwards.push(forwards);
                }
                let (loss, dscores) = softmax_cross_entropy(&scores, &lb)?;
                if !loss.is_finite() {
                    return Err(IckError::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                        value: loss,
                    });
                }
                epoch_loss += loss * chunk.len() as f64;
                for (j, m) in self.class_models.iter_mut().enumerate() {
                    let forwards = &all_forwards[j];
                    let z_refs: Vec<&Matrix> = forwards.iter().map(|(z, _)| z).collect();
                    let dpred: Vec<f64> = (0..xb.n()).map(|i| dscores[(j, i)]).collect();
                    let upstreams = branch_upstreams(&z_refs, &dpred, m.p);
                    let mut grads = Vec::with_capacity(m.branches.len());
                    for ((branch, (_, cache)), zb) in
                        m.branches.iter().zip(forwards).zip(&upstreams)
                    {
                        grads.push(branch.backward(&xb, cache, zb)?);
                    }
                    let flat_grads = m.flatten_grads(&grads);
                    optimizer_step(&mut states[j], &mut flats[j], &flat_grads, config)?;
                    m.unflatten(&flats[j]);
                }
            }
            trace.push(epoch_loss / data.n() as f64);
        }
        Ok(trace)
    }
}

// ---------------------------------------------------------------------------
// Model specs (blueprints) and JSON checkpoints
// ---------------------------------------------------------------------------

/// Where a Nystrom branch gets its inducing points.
#[derive(Clone, Debug, PartialEq)]
pub enum InducingSpec {
    /// Evenly spaced over the training data range.
    Auto,
    /// Explicit points, one row per inducing point.
    Given(Matrix),
}

/// Blueprint for one branch; [`ModelSpec::build`] turns blueprints into a
/// concrete model against a dataset.
#[derive(Clone, Debug)]
pub enum BranchSpec {
    Nn { source: usize, config: MlpConfig },
    Nystrom { kernel: KernelSpec, params: KernelParams, p: usize, inducing: InducingSpec },
    Rff { kernel: KernelSpec, params: KernelParams, d_m: usize },
}

/// Blueprint for a whole model.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub branches: Vec<BranchSpec>,
}

impl ModelSpec {
    /// Instantiates the model: NN branches draw fresh parameters from `rng`,
    /// Nystrom branches resolve auto inducing points against `data`, RFF
    /// branches freeze base draws seeded from `rng`.
    pub fn build(&self, data: &Inputs, rng: &mut RngState) -> Result<IckModel> {
        let mut branches = Vec::with_capacity(self.branches.len());
        for spec in &self.branches {
            branches.push(match spec {
                BranchSpec::Nn { source, config } => Branch::Nn {
                    source: *source,
                    config: config.clone(),
                    params: mlp_init(config, rng)?,
                },
                BranchSpec::Nystrom { kernel, params, p, inducing } => {
                    let map = match inducing {
                        InducingSpec::Auto => NystromMap::with_auto_inducing(
                            kernel.clone(),
                            params.clone(),
                            data,
                            *p,
                        )?,
                        InducingSpec::Given(points) => {
                            NystromMap::new(kernel.clone(), params.clone(), points.clone())?
                        }
                    };
                    Branch::Nystrom(map)
                }
                BranchSpec::Rff { kernel, params, d_m } => {
                    let source = kernel.sources();
                    let dim = data.source(source[0])?.cols();
                    let seed = rng.next_u64();
                    Branch::Rff(RffMap::new(kernel.clone(), params.clone(), *d_m, dim, seed)?)
                }
            });
        }
        IckModel::new(branches)
    }
}

const CHECKPOINT_VERSION: u64 = 1;

fn matrix_to_json(m: &Matrix) -> Value {
    let rows: Vec<Vec<f64>> = (0..m.rows()).map(|i| m.row(i).to_vec()).collect();
    json!(rows)
}

fn matrix_from_json(v: &Value) -> Result<Matrix> {
    let rows = v
        .as_array()
        .ok_or_else(|| IckError::Schema("matrix must be an array of rows".into()))?;
    let mut data = Vec::new();
    let mut cols = None;
    for r in rows {
        let row = r
            .as_array()
            .ok_or_else(|| IckError::Schema("matrix row must be an array".into()))?;
        let vals: Vec<f64> = row
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| IckError::Schema("matrix entry must be numeric".into())))
            .collect::<Result<_>>()?;
        match cols {
            None => cols = Some(vals.len()),
            Some(c) if c != vals.len() => {
                return Err(IckError::Schema("ragged matrix rows".into()));
            }
            _ => {}
        }
        data.extend(vals);
    }
    let c = cols.unwrap_or(0);
    Ok(Matrix::from_vec(rows.len(), c, data))
}

/// Versioned JSON checkpoint of a trained model, including the seed it was
/// built with so runs can be resumed and audited.
pub fn model_to_json(model: &IckModel, seed: u64) -> Value {
    let branches: Vec<Value> = model
        .branches
        .iter()
        .map(|b| match b {
            Branch::Nn { source, config, params } => json!({
                "kind": "nn",
                "source": source,
                "config": serde_json::to_value(config).unwrap(),
                "weights": params.weights.iter().map(matrix_to_json).collect::<Vec<_>>(),
                "biases": params.biases,
            }),
            Branch::Nystrom(m) => json!({
                "kind": "nystrom",
                "kernel": kernel_to_json(&m.spec, &m.params),
                "inducing": matrix_to_json(m.inducing()),
            }),
            Branch::Rff(m) => json!({
                "kind": "rff",
                "kernel": kernel_to_json(&m.spec, &m.params),
                "d_m": m.p() / 2,
                "dim": m.input_dim(),
                "rff_seed": m.seed(),
            }),
        })
        .collect();
    json!({
        "version": CHECKPOINT_VERSION,
        "seed": seed,
        "p": model.p,
        "freeze_kernel_params": model.freeze_kernel_params,
        "branches": branches,
    })
}

/// Restores a model written by [`model_to_json`]; returns the model and the
/// stored seed.
pub fn model_from_json(v: &Value) -> Result<(IckModel, u64)> {
    let version = v.get("version").and_then(Value::as_u64).unwrap_or(0);
    if version != CHECKPOINT_VERSION {
        return Err(IckError::Schema(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let seed = v
        .get("seed")
        .and_then(Value::as_u64)
        .ok_or_else(|| IckError::Schema("checkpoint missing 'seed'".into()))?;
    let branch_vals = v
        .get("branches")
        .and_then(Value::as_array)
        .ok_or_else(|| IckError::Schema("checkpoint missing 'branches'".into()))?;
    let mut branches = Vec::new();
    for bv in branch_vals {
        let kind = bv
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| IckError::Schema("branch missing 'kind'".into()))?;
        match kind {
            "nn" => {
                let source = bv
                    .get("source")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| IckError::Schema("nn branch missing 'source'".into()))?
                    as usize;
                let config: MlpConfig = serde_json::from_value(
                    bv.get("config")
                        .cloned()
                        .ok_or_else(|| IckError::Schema("nn branch missing 'config'".into()))?,
                )
                .map_err(|e| IckError::Schema(format!("bad mlp config: {e}")))?;
                let weights = bv
                    .get("weights")
                    .and_then(Value::as_array)
                    .ok_or_else(|| IckError::Schema("nn branch missing 'weights'".into()))?
                    .iter()
                    .map(matrix_from_json)
                    .collect::<Result<Vec<_>>>()?;
                let biases: Vec<Vec<f64>> = serde_json::from_value(
                    bv.get("biases")
                        .cloned()
                        .ok_or_else(|| IckError::Schema("nn branch missing 'biases'".into()))?,
                )
                .map_err(|e| IckError::Schema(format!("bad biases: {e}")))?;
                branches.push(Branch::Nn {
                    source,
                    config,
                    params: MlpParams { weights, biases },
                });
            }
            "nystrom" => {
                let (spec, params) = kernel_from_json(
                    bv.get("kernel")
                        .ok_or_else(|| IckError::Schema("nystrom branch missing 'kernel'".into()))?,
                )?;
                let inducing = matrix_from_json(
                    bv.get("inducing")
                        .ok_or_else(|| IckError::Schema("nystrom branch missing 'inducing'".into()))?,
                )?;
                branches.push(Branch::Nystrom(NystromMap::new(spec, params, inducing)?));
            }
            "rff" => {
                let (spec, params) = kernel_from_json(
                    bv.get("kernel")
                        .ok_or_else(|| IckError::Schema("rff branch missing 'kernel'".into()))?,
                )?;
                let d_m = bv
                    .get("d_m")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| IckError::Schema("rff branch missing 'd_m'".into()))?
                    as usize;
                let dim = bv
                    .get("dim")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| IckError::Schema("rff branch missing 'dim'".into()))?
                    as usize;
                let rff_seed = bv
                    .get("rff_seed")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| IckError::Schema("rff branch missing 'rff_seed'".into()))?;
                branches.push(Branch::Rff(RffMap::new(spec, params, d_m, dim, rff_seed)?));
            }
            other => return Err(IckError::Schema(format!("unknown branch kind '{other}'"))),
        }
    }
    let mut model = IckModel::new(branches)?;
    model.freeze_kernel_params = v
        .get("freeze_kernel_params")
        .and_then(Value::as_bool)
        .unwrap_or(false);
    Ok((model, seed))
}
