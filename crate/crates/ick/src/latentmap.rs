//! Kernel-to-latent-space transformations.
//!
//! Both maps produce `z in R^p` per point with `z_i . z_j ~= K(x_i, x_j)`:
//!
//! - [`NystromMap`]: `z_i = U (K_np^T)_{:,i}` with `U^T U = (K_p + eps I)^{-1}`
//!   obtained from a Cholesky factor of the inducing-point Gram matrix. The
//!   Gram factor is computed once per forward call (once per optimizer step),
//!   and gradients flow back into the kernel parameters through both the
//!   cross matrix and the factorization.
//! - [`RffMap`]: random Fourier features with base draws fixed at
//!   construction, so frequencies are a deterministic, differentiable
//!   function of the current kernel parameters (reparameterization).

use std::f64::consts::PI;

use crate::error::{IckError, Result};
use crate::inputs::Inputs;
use crate::kernels::{kernel_matrix, kernel_param_grad, KernelParams, KernelSpec};
use crate::linalg::{
    cholesky, cholesky_vjp, triangular_solve, Matrix, RngState, Side, DEFAULT_JITTER,
};

/// Wraps a per-source matrix as an [`Inputs`] block whose slot `m` holds the
/// data; earlier slots get zero-width placeholders. Lets single-source
/// kernels evaluate against raw point sets such as inducing grids.
fn source_block(m: usize, data: &Matrix) -> Inputs {
    let mut sources = Vec::with_capacity(m);
    for _ in 0..m - 1 {
        sources.push(Matrix::zeros(data.rows(), 0));
    }
    sources.push(data.clone());
    Inputs::new(sources).expect("source block construction")
}

fn single_source_of(spec: &KernelSpec) -> Result<usize> {
    let sources = spec.sources();
    if sources.len() != 1 {
        return Err(IckError::InvalidConfig(format!(
            "latent map kernel must read exactly one source, found {sources:?}"
        )));
    }
    Ok(sources[0])
}

/// Evenly spaced inducing points over the per-coordinate range of `data`.
/// Multi-dimensional inputs get a per-axis product grid truncated to `p`
/// points.
pub fn auto_inducing(data: &Matrix, p: usize) -> Matrix {
    assert!(p >= 1 && data.rows() >= 1);
    let d = data.cols();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for i in 0..data.rows() {
        for (j, v) in data.row(i).iter().enumerate() {
            lo[j] = lo[j].min(*v);
            hi[j] = hi[j].max(*v);
        }
    }
    for j in 0..d {
        if hi[j] - lo[j] < 1e-12 {
            lo[j] -= 0.5;
            hi[j] += 0.5;
        }
    }
    if d == 1 {
        let mut m = Matrix::zeros(p, 1);
        for i in 0..p {
            m[(i, 0)] = if p == 1 {
                0.5 * (lo[0] + hi[0])
            } else {
                lo[0] + (hi[0] - lo[0]) * i as f64 / (p - 1) as f64
            };
        }
        return m;
    }
    let per_axis = (p as f64).powf(1.0 / d as f64).ceil() as usize;
    let per_axis = per_axis.max(2);
    let mut m = Matrix::zeros(p, d);
    for i in 0..p {
        let mut rem = i;
        for j in (0..d).rev() {
            let idx = rem % per_axis;
            rem /= per_axis;
            m[(i, j)] = lo[j] + (hi[j] - lo[j]) * idx as f64 / (per_axis - 1) as f64;
        }
    }
    m
}

/// Nystrom kernel-to-latent-space map with `p` inducing points.
#[derive(Clone, Debug)]
pub struct NystromMap {
    pub spec: KernelSpec,
    pub params: KernelParams,
    source: usize,
    inducing: Matrix,
}

/// Intermediates from [`NystromMap::forward`] needed by the backward pass.
#[derive(Clone, Debug)]
pub struct NystromCache {
    /// Lower Cholesky factor of `K_p + jitter I`.
    pub l: Matrix,
    /// Jitter actually applied to the inducing Gram matrix.
    pub jitter: f64,
    /// Cross matrix `K_np` (batch x inducing).
    pub k_np: Matrix,
    /// Latent block `Z` (p x batch).
    pub z: Matrix,
}

impl NystromMap {
    pub fn new(spec: KernelSpec, params: KernelParams, inducing: Matrix) -> Result<Self> {
        let source = single_source_of(&spec)?;
        if inducing.rows() == 0 {
            return Err(IckError::InvalidConfig("need at least one inducing point".into()));
        }
        for i in 0..inducing.rows() {
            for j in (i + 1)..inducing.rows() {
                if inducing.row(i) == inducing.row(j) {
                    return Err(IckError::InvalidConfig(format!(
                        "inducing points {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(NystromMap { spec, params, source, inducing })
    }

    /// Builds the map with evenly spaced inducing points covering the range
    /// of the relevant source in `data`.
    pub fn with_auto_inducing(
        spec: KernelSpec,
        params: KernelParams,
        data: &Inputs,
        p: usize,
    ) -> Result<Self> {
        let source = single_source_of(&spec)?;
        let inducing = auto_inducing(data.source(source)?, p);
        NystromMap::new(spec, params, inducing)
    }

    /// Latent dimension `p` (the inducing-point count).
    pub fn p(&self) -> usize {
        self.inducing.rows()
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn inducing(&self) -> &Matrix {
        &self.inducing
    }

    fn inducing_block(&self) -> Inputs {
        source_block(self.source, &self.inducing)
    }

    /// Maps a batch to latent columns: `Z[:, i] = U (K_np^T)_{:, i}` so that
    /// `Z^T Z` reproduces the Nystrom approximation of the batch Gram matrix.
    pub fn forward(&self, x: &Inputs) -> Result<(Matrix, NystromCache)> {
        let ind = self.inducing_block();
        let k_p = kernel_matrix(&self.spec, &self.params, &ind, &ind)?;
        let factor = cholesky(&k_p, DEFAULT_JITTER)?;
        let k_np = kernel_matrix(&self.spec, &self.params, x, &ind)?;
        let z = triangular_solve(&factor.l, &k_np.transpose(), Side::Lower)?;
        let cache = NystromCache {
            l: factor.l,
            jitter: factor.jitter,
            k_np,
            z: z.clone(),
        };
        Ok((z, cache))
    }

    /// Pulls the upstream latent gradient `z_bar` (p x batch) back to the
    /// unconstrained kernel parameters, through both `K_np` and the Cholesky
    /// factor of the inducing Gram matrix.
    pub fn vjp(&self, x: &Inputs, cache: &NystromCache, z_bar: &Matrix) -> Result<Vec<f64>> {
        if (z_bar.rows(), z_bar.cols()) != (cache.z.rows(), cache.z.cols()) {
            return Err(IckError::shape(
                "nystrom vjp upstream",
                format!("{}x{}", cache.z.rows(), cache.z.cols()),
                format!("{}x{}", z_bar.rows(), z_bar.cols()),
            ));
        }
        let ind = self.inducing_block();
        // Z = U C with U = L^{-1}, C = K_np^T.
        // C_bar = U^T Z_bar, so K_np bar = C_bar^T.
        let c_bar = triangular_solve(&cache.l, z_bar, Side::UpperTransposed)?;
        let k_np_bar = c_bar.transpose();
        // U_bar = Z_bar C^T; L_bar = -L^{-T} U_bar L^{-T}, lower part only.
        // With Y = L^{-T} U_bar, the right factor follows from
        // (Y L^{-T})^T = L^{-1} Y^T.
        let u_bar = z_bar.matmul(&cache.k_np);
        let y = triangular_solve(&cache.l, &u_bar, Side::UpperTransposed)?;
        let xt = triangular_solve(&cache.l, &y.transpose(), Side::Lower)?;
        let l_bar = xt.transpose().scale(-1.0).tril();
        let k_p_bar = cholesky_vjp(&cache.l, &l_bar)?;

        let mut grad = kernel_param_grad(&self.spec, &self.params, x, &ind, &k_np_bar)?;
        let grad_p = kernel_param_grad(&self.spec, &self.params, &ind, &ind, &k_p_bar)?;
        for (g, gp) in grad.iter_mut().zip(&grad_p) {
            *g += gp;
        }
        Ok(grad)
    }
}

// ---------------------------------------------------------------------------
// Random Fourier features
// ---------------------------------------------------------------------------

/// Number of harmonics kept when sampling the discrete spectrum of the
/// exp-sine-squared kernel.
const ESS_HARMONICS: usize = 64;

#[derive(Clone, Debug)]
enum RffBase {
    /// Standard-normal draws, one row per frequency (RBF: `w_j = eps_j / l`).
    Gaussian(Matrix),
    /// Per-frequency component assignment and normal draw
    /// (spectral mixture: `w_j = 2 pi (mu_c + sqrt(v_c) eps_j)`).
    Mixture { comp: Vec<usize>, eps: Vec<f64> },
    /// Per-frequency harmonic index (exp-sine-squared: `w_j = 2 pi n_j / T`).
    Harmonics(Vec<usize>),
}

/// Random Fourier feature map `phi(x) = a * [cos(w_j . x); sin(w_j . x)]`
/// with output dimension `2 * d_m`.
#[derive(Clone, Debug)]
pub struct RffMap {
    pub spec: KernelSpec,
    pub params: KernelParams,
    source: usize,
    d_m: usize,
    seed: u64,
    base: RffBase,
}

impl RffMap {
    /// Draws and freezes the base randomness for `d_m` frequencies over a
    /// `dim`-dimensional input. The categorical choices of the mixture /
    /// harmonic samplers are frozen using the construction-time parameters;
    /// only the continuous reparameterized paths stay differentiable
    /// afterwards.
    pub fn new(
        spec: KernelSpec,
        params: KernelParams,
        d_m: usize,
        dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let source = single_source_of(&spec)?;
        if d_m == 0 || dim == 0 {
            return Err(IckError::InvalidConfig("rff needs d_m >= 1 and dim >= 1".into()));
        }
        if dim != 1 && !matches!(spec, KernelSpec::Rbf(_)) {
            return Err(IckError::UnsupportedSpectrum {
                kernel: format!("{spec:?} over {dim}-dimensional inputs"),
            });
        }
        let mut rng = RngState::new(seed);
        let base = match &spec {
            KernelSpec::Rbf(_) => {
                RffBase::Gaussian(Matrix::from_fn(d_m, dim, |_, _| rng.normal()))
            }
            KernelSpec::SpectralMixture(_, q) => {
                let q = *q;
                let w: Vec<f64> = params.values[..q].iter().map(|v| v.exp()).collect();
                let total: f64 = w.iter().sum();
                let comp: Vec<usize> = (0..d_m)
                    .map(|_| {
                        let mut u = rng.uniform() * total;
                        for (c, wc) in w.iter().enumerate() {
                            if u < *wc {
                                return c;
                            }
                            u -= wc;
                        }
                        q - 1
                    })
                    .collect();
                let eps = rng.normal_vec(d_m);
                RffBase::Mixture { comp, eps }
            }
            KernelSpec::ExpSineSquared(_) => {
                let l = params.values[1].exp();
                let kappa = 1.0 / (l * l);
                let weights = harmonic_weights(kappa, ESS_HARMONICS);
                let harmonics: Vec<usize> = (0..d_m)
                    .map(|_| {
                        let mut u = rng.uniform();
                        for (n, w) in weights.iter().enumerate() {
                            if u < *w {
                                return n;
                            }
                            u -= w;
                        }
                        weights.len() - 1
                    })
                    .collect();
                RffBase::Harmonics(harmonics)
            }
            other => {
                return Err(IckError::UnsupportedSpectrum {
                    kernel: format!("{other:?}"),
                })
            }
        };
        Ok(RffMap { spec, params, source, d_m, seed, base })
    }

    pub fn p(&self) -> usize {
        2 * self.d_m
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn d_m(&self) -> usize {
        self.d_m
    }

    /// Coordinate count of the source this map reads.
    pub fn input_dim(&self) -> usize {
        match &self.base {
            RffBase::Gaussian(eps) => eps.cols(),
            _ => 1,
        }
    }

    /// Current frequencies, derived from the frozen base draws and the
    /// current parameters.
    fn frequencies(&self) -> Result<Matrix> {
        match (&self.base, &self.spec) {
            (RffBase::Gaussian(eps), KernelSpec::Rbf(_)) => {
                let l = self.params.values[1].exp();
                Ok(eps.scale(1.0 / l))
            }
            (RffBase::Mixture { comp, eps }, KernelSpec::SpectralMixture(_, q)) => {
                let q = *q;
                let mut m = Matrix::zeros(self.d_m, 1);
                for j in 0..self.d_m {
                    let c = comp[j];
                    let mu = self.params.values[2 * q + c];
                    let v = self.params.values[q + c].exp();
                    m[(j, 0)] = 2.0 * PI * (mu + v.sqrt() * eps[j]);
                }
                Ok(m)
            }
            (RffBase::Harmonics(ns), KernelSpec::ExpSineSquared(_)) => {
                let t = self.params.values[2].exp();
                let mut m = Matrix::zeros(self.d_m, 1);
                for j in 0..self.d_m {
                    m[(j, 0)] = 2.0 * PI * ns[j] as f64 / t;
                }
                Ok(m)
            }
            _ => unreachable!("base/spec pairing checked at construction"),
        }
    }

    /// Feature amplitude so that `phi(x) . phi(x)` equals the kernel
    /// variance exactly.
    fn amplitude(&self) -> f64 {
        let scale = match &self.spec {
            KernelSpec::SpectralMixture(_, q) => {
                self.params.values[..*q].iter().map(|v| v.exp()).sum::<f64>()
            }
            _ => self.params.values[0].exp(),
        };
        (scale / self.d_m as f64).sqrt()
    }

    /// Feature block `Z` (2 d_m x batch):
    /// `Z[:, i] = a [cos(w_1.x_i) .. cos(w_d.x_i), sin(w_1.x_i) .. sin(w_d.x_i)]`.
    pub fn forward(&self, x: &Inputs) -> Result<Matrix> {
        let data = x.source(self.source)?;
        let freqs = self.frequencies()?;
        if freqs.cols() != data.cols() {
            return Err(IckError::shape(
                "rff input",
                format!("{} coords", freqs.cols()),
                format!("{} coords", data.cols()),
            ));
        }
        let a = self.amplitude();
        let n = data.rows();
        let mut z = Matrix::zeros(2 * self.d_m, n);
        for i in 0..n {
            let xi = data.row(i);
            for j in 0..self.d_m {
                let arg = crate::linalg::dot(freqs.row(j), xi);
                z[(j, i)] = a * arg.cos();
                z[(self.d_m + j, i)] = a * arg.sin();
            }
        }
        Ok(z)
    }

    /// Pulls the upstream latent gradient back to the unconstrained kernel
    /// parameters, holding the frozen categorical draws fixed. For the
    /// exp-sine-squared sampler the lengthscale enters only through the
    /// frozen harmonic probabilities, so its gradient is zero here.
    pub fn vjp(&self, x: &Inputs, z_bar: &Matrix) -> Result<Vec<f64>> {
        let data = x.source(self.source)?;
        let freqs = self.frequencies()?;
        let a = self.amplitude();
        let n = data.rows();
        if (z_bar.rows(), z_bar.cols()) != (2 * self.d_m, n) {
            return Err(IckError::shape(
                "rff vjp upstream",
                format!("{}x{}", 2 * self.d_m, n),
                format!("{}x{}", z_bar.rows(), z_bar.cols()),
            ));
        }
        let mut grad = vec![0.0; self.params.values.len()];
        for i in 0..n {
            let xi = data.row(i);
            for j in 0..self.d_m {
                let arg = crate::linalg::dot(freqs.row(j), xi);
                let (cosv, sinv) = (arg.cos(), arg.sin());
                let gc = z_bar[(j, i)];
                let gs = z_bar[(self.d_m + j, i)];
                // amplitude path
                let d_amp = gc * cosv + gs * sinv;
                // phase path: d phi / d arg
                let d_arg = a * (-gc * sinv + gs * cosv);
                match (&self.base, &self.spec) {
                    (RffBase::Gaussian(_), KernelSpec::Rbf(_)) => {
                        // amplitude a = sqrt(exp(u_s)/d): d a/d u_s = a/2
                        grad[0] += d_amp * a * 0.5;
                        // arg = (eps_j . x)/l: d arg/d u_l = -arg
                        grad[1] += d_arg * (-arg);
                    }
                    (RffBase::Mixture { comp, eps }, KernelSpec::SpectralMixture(_, q)) => {
                        let q = *q;
                        let total: f64 = self.params.values[..q].iter().map(|v| v.exp()).sum();
                        for (c, gslot) in grad.iter_mut().take(q).enumerate() {
                            let wc = self.params.values[c].exp();
                            *gslot += d_amp * a * 0.5 * wc / total;
                        }
                        let c = comp[j];
                        let v = self.params.values[q + c].exp();
                        let xsum: f64 = xi.iter().sum();
                        // arg = 2 pi (mu_c + sqrt(v_c) eps_j) * x
                        grad[2 * q + c] += d_arg * 2.0 * PI * xsum;
                        grad[q + c] += d_arg * 2.0 * PI * eps[j] * 0.5 * v.sqrt() * xsum;
                    }
                    (RffBase::Harmonics(_), KernelSpec::ExpSineSquared(_)) => {
                        grad[0] += d_amp * a * 0.5;
                        // arg = 2 pi n_j x / T: d arg / d u_T = -arg
                        grad[2] += d_arg * (-arg);
                        // grad[1] (lengthscale) stays zero: frozen draws
                    }
                    _ => unreachable!(),
                }
            }
        }
        Ok(grad)
    }
}

/// Normalized probabilities of harmonics `0..=n_max` in the discrete
/// spectrum `exp(kappa cos t) = I_0 + 2 sum I_n cos(n t)`.
fn harmonic_weights(kappa: f64, n_max: usize) -> Vec<f64> {
    if kappa <= 0.0 {
        let mut w = vec![0.0; n_max + 1];
        w[0] = 1.0;
        return w;
    }
    let scaled = scaled_bessel_i(kappa, n_max);
    let mut w: Vec<f64> = scaled
        .iter()
        .enumerate()
        .map(|(n, v)| if n == 0 { *v } else { 2.0 * v })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// `e^{-x} I_n(x)` for `n = 0..=n_max` by Miller's backward recurrence.
fn scaled_bessel_i(x: f64, n_max: usize) -> Vec<f64> {
    let start = n_max + 16 + (2.0 * x.sqrt()) as usize + (1.2 * x) as usize;
    let mut vals = vec![0.0f64; n_max + 1];
    let mut ip = 0.0f64; // I_{k+1}
    let mut ik = 1e-280f64; // I_k at k = start
    let mut norm = 0.0f64; // I_0 + 2 sum_{k>=1} I_k accumulated on the fly
    let mut k = start;
    while k > 0 {
        let im = ip + (2.0 * k as f64 / x) * ik;
        ip = ik;
        ik = im;
        k -= 1;
        if k <= n_max {
            vals[k] = ik;
        }
        if k > 0 {
            norm += 2.0 * ik;
        } else {
            norm += ik;
        }
        if ik > 1e260 {
            ik *= 1e-260;
            ip *= 1e-260;
            norm *= 1e-260;
            for v in &mut vals {
                *v *= 1e-260;
            }
        }
    }
    // norm approximates e^x; dividing yields e^{-x} I_n
    for v in &mut vals {
        *v /= norm;
    }
    vals
}
