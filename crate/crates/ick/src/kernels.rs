//! Parametric positive-definite kernels with analytic hyperparameter
//! gradients, plus sum/product composites over sub-inputs.
//!
//! Positive parameters (variance, lengthscale, period, mixture weights and
//! scales) live in log space so unconstrained gradient steps cannot leave the
//! feasible region; spectral-mixture means are stored raw. The fixed forms:
//!
//! - linear:           `k = s * <x, x'>`
//! - RBF:              `k = s * exp(-|x - x'|^2 / (2 l^2))`
//! - exp-sine-squared: `k = s * exp(-2 sin^2(pi |x - x'| / T) / l^2)`
//! - spectral mixture: `k(t) = sum_q w_q exp(-2 pi^2 t^2 v_q) cos(2 pi t u_q)`
//!   (one-dimensional inputs, `t = x - x'`)
//!
//! Composites evaluate children on their own input slices and combine the
//! results elementwise.

use std::f64::consts::PI;

use serde_json::{json, Value};

use crate::error::{IckError, Result};
use crate::inputs::Inputs;
use crate::linalg::Matrix;

/// Which part of a multi-source point a leaf kernel reads: source index
/// `m` (1-based) and an optional `[start, end)` coordinate range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputSlice {
    pub source: usize,
    pub coords: Option<(usize, usize)>,
}

impl InputSlice {
    pub fn source(m: usize) -> Self {
        InputSlice { source: m, coords: None }
    }

    fn extract<'a>(&self, point: &[&'a [f64]]) -> Result<&'a [f64]> {
        let full = point
            .get(self.source.wrapping_sub(1))
            .copied()
            .ok_or(IckError::MissingSource { index: self.source })?;
        match self.coords {
            None => Ok(full),
            Some((a, b)) => {
                if b > full.len() || a >= b {
                    return Err(IckError::shape(
                        "input slice",
                        format!("coords within 0..{}", full.len()),
                        format!("{a}..{b}"),
                    ));
                }
                Ok(&full[a..b])
            }
        }
    }
}

/// Declarative kernel description. Parameter values live in [`KernelParams`].
#[derive(Clone, Debug, PartialEq)]
pub enum KernelSpec {
    Linear(InputSlice),
    Rbf(InputSlice),
    ExpSineSquared(InputSlice),
    /// Spectral mixture with `q >= 1` components over a scalar input.
    SpectralMixture(InputSlice, usize),
    Sum(Vec<KernelSpec>),
    Product(Vec<KernelSpec>),
}

impl KernelSpec {
    pub fn linear(source: usize) -> Self {
        KernelSpec::Linear(InputSlice::source(source))
    }

    pub fn rbf(source: usize) -> Self {
        KernelSpec::Rbf(InputSlice::source(source))
    }

    pub fn exp_sine_squared(source: usize) -> Self {
        KernelSpec::ExpSineSquared(InputSlice::source(source))
    }

    pub fn spectral_mixture(source: usize, components: usize) -> Self {
        KernelSpec::SpectralMixture(InputSlice::source(source), components)
    }

    /// Number of unconstrained parameters this spec expects.
    pub fn param_count(&self) -> usize {
        match self {
            KernelSpec::Linear(_) => 1,
            KernelSpec::Rbf(_) => 2,
            KernelSpec::ExpSineSquared(_) => 3,
            KernelSpec::SpectralMixture(_, q) => 3 * q,
            KernelSpec::Sum(cs) | KernelSpec::Product(cs) => {
                cs.iter().map(|c| c.param_count()).sum()
            }
        }
    }

    /// All distinct sources read by this kernel, ascending.
    pub fn sources(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_sources(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_sources(&self, out: &mut Vec<usize>) {
        match self {
            KernelSpec::Linear(s)
            | KernelSpec::Rbf(s)
            | KernelSpec::ExpSineSquared(s)
            | KernelSpec::SpectralMixture(s, _) => out.push(s.source),
            KernelSpec::Sum(cs) | KernelSpec::Product(cs) => {
                for c in cs {
                    c.collect_sources(out);
                }
            }
        }
    }

    fn validate_params(&self, params: &KernelParams) -> Result<()> {
        let want = self.param_count();
        if params.values.len() != want {
            return Err(IckError::shape(
                "kernel params",
                format!("{want} values"),
                format!("{} values", params.values.len()),
            ));
        }
        if let KernelSpec::SpectralMixture(_, q) = self {
            if *q == 0 {
                return Err(IckError::InvalidConfig(
                    "spectral mixture needs at least one component".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Unconstrained kernel parameters (see the module docs for the layout per
/// variant; composites concatenate their children in order).
#[derive(Clone, Debug, PartialEq)]
pub struct KernelParams {
    pub values: Vec<f64>,
}

impl KernelParams {
    pub fn new(values: Vec<f64>) -> Self {
        KernelParams { values }
    }

    /// Defaults: unit variance, unit lengthscale, unit period, uniform
    /// mixture weights `1/q`, unit scales, means evenly spread over `(0, q]`.
    pub fn default_for(spec: &KernelSpec) -> Self {
        let mut values = Vec::with_capacity(spec.param_count());
        fill_defaults(spec, &mut values);
        KernelParams { values }
    }

    /// Natural-space constructor for a single spectral-mixture leaf.
    pub fn spectral_mixture(weights: &[f64], scales: &[f64], means: &[f64]) -> Self {
        assert_eq!(weights.len(), scales.len());
        assert_eq!(weights.len(), means.len());
        let mut values = Vec::with_capacity(3 * weights.len());
        values.extend(weights.iter().map(|w| w.ln()));
        values.extend(scales.iter().map(|v| v.ln()));
        values.extend_from_slice(means);
        KernelParams { values }
    }
}

fn fill_defaults(spec: &KernelSpec, out: &mut Vec<f64>) {
    match spec {
        KernelSpec::Linear(_) => out.push(0.0),
        KernelSpec::Rbf(_) => out.extend([0.0, 0.0]),
        KernelSpec::ExpSineSquared(_) => out.extend([0.0, 0.0, 0.0]),
        KernelSpec::SpectralMixture(_, q) => {
            let q = *q;
            out.extend(std::iter::repeat((1.0 / q as f64).ln()).take(q));
            out.extend(std::iter::repeat(0.0).take(q));
            out.extend((1..=q).map(|i| i as f64));
        }
        KernelSpec::Sum(cs) | KernelSpec::Product(cs) => {
            for c in cs {
                fill_defaults(c, out);
            }
        }
    }
}

/// Means for a spectral mixture spread over the empirical frequency range of
/// 1-D data: from one cycle per data range up to half the Nyquist rate of the
/// median spacing.
pub fn sm_means_from_data(xs: &[f64], q: usize) -> Vec<f64> {
    assert!(q >= 1 && xs.len() >= 2);
    let mut sorted: Vec<f64> = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let range = (sorted[sorted.len() - 1] - sorted[0]).max(1e-12);
    let mut gaps: Vec<f64> = sorted.windows(2).map(|w| w[1] - w[0]).filter(|g| *g > 0.0).collect();
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_gap = if gaps.is_empty() { range } else { gaps[gaps.len() / 2] };
    let lo = 1.0 / range;
    let hi = (0.25 / median_gap).max(lo * 2.0);
    (0..q)
        .map(|i| {
            if q == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (q - 1) as f64
            }
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(IckError::shape(
            "kernel inputs",
            format!("{} coords", a.len()),
            format!("{} coords", b.len()),
        ));
    }
    Ok(())
}

/// Evaluates the kernel at a pair of multi-source points (`point[m-1]` is
/// the coordinate slice of source `m`).
pub fn kernel_eval(
    spec: &KernelSpec,
    params: &KernelParams,
    x: &[&[f64]],
    x2: &[&[f64]],
) -> Result<f64> {
    spec.validate_params(params)?;
    eval_rec(spec, &params.values, x, x2)
}

fn eval_rec(spec: &KernelSpec, p: &[f64], x: &[&[f64]], x2: &[&[f64]]) -> Result<f64> {
    match spec {
        KernelSpec::Linear(sl) => {
            let (a, b) = (sl.extract(x)?, sl.extract(x2)?);
            check_same_len(a, b)?;
            Ok(p[0].exp() * crate::linalg::dot(a, b))
        }
        KernelSpec::Rbf(sl) => {
            let (a, b) = (sl.extract(x)?, sl.extract(x2)?);
            check_same_len(a, b)?;
            let (s, l) = (p[0].exp(), p[1].exp());
            Ok(s * (-sq_dist(a, b) / (2.0 * l * l)).exp())
        }
        KernelSpec::ExpSineSquared(sl) => {
            let (a, b) = (sl.extract(x)?, sl.extract(x2)?);
            check_same_len(a, b)?;
            let (s, l, t) = (p[0].exp(), p[1].exp(), p[2].exp());
            let d = sq_dist(a, b).sqrt();
            let sn = (PI * d / t).sin();
            Ok(s * (-2.0 * sn * sn / (l * l)).exp())
        }
        KernelSpec::SpectralMixture(sl, q) => {
            let (a, b) = (sl.extract(x)?, sl.extract(x2)?);
            check_same_len(a, b)?;
            if a.len() != 1 {
                return Err(IckError::shape(
                    "spectral mixture input",
                    "1 coordinate",
                    format!("{} coordinates", a.len()),
                ));
            }
            let tau = a[0] - b[0];
            let mut k = 0.0;
            for i in 0..*q {
                let w = p[i].exp();
                let v = p[q + i].exp();
                let mu = p[2 * q + i];
                k += w * (-2.0 * PI * PI * tau * tau * v).exp() * (2.0 * PI * tau * mu).cos();
            }
            Ok(k)
        }
        KernelSpec::Sum(cs) => {
            let mut k = 0.0;
            let mut off = 0;
            for c in cs {
                let np = c.param_count();
                k += eval_rec(c, &p[off..off + np], x, x2)?;
                off += np;
            }
            Ok(k)
        }
        KernelSpec::Product(cs) => {
            let mut k = 1.0;
            let mut off = 0;
            for c in cs {
                let np = c.param_count();
                k *= eval_rec(c, &p[off..off + np], x, x2)?;
                off += np;
            }
            Ok(k)
        }
    }
}

/// Gram matrix: entry `(i, j)` is the kernel between point `i` of `x` and
/// point `j` of `x2`.
pub fn kernel_matrix(
    spec: &KernelSpec,
    params: &KernelParams,
    x: &Inputs,
    x2: &Inputs,
) -> Result<Matrix> {
    spec.validate_params(params)?;
    matrix_rec(spec, &params.values, x, x2)
}

fn matrix_rec(spec: &KernelSpec, p: &[f64], x: &Inputs, x2: &Inputs) -> Result<Matrix> {
    match spec {
        KernelSpec::Sum(cs) => {
            let mut off = 0;
            let mut acc: Option<Matrix> = None;
            for c in cs {
                let np = c.param_count();
                let k = matrix_rec(c, &p[off..off + np], x, x2)?;
                acc = Some(match acc {
                    None => k,
                    Some(a) => a.add(&k),
                });
                off += np;
            }
            Ok(acc.expect("composite with no children"))
        }
        KernelSpec::Product(cs) => {
            let mut off = 0;
            let mut acc: Option<Matrix> = None;
            for c in cs {
                let np = c.param_count();
                let k = matrix_rec(c, &p[off..off + np], x, x2)?;
                acc = Some(match acc {
                    None => k,
                    Some(a) => a.hadamard(&k),
                });
                off += np;
            }
            Ok(acc.expect("composite with no children"))
        }
        leaf => {
            let n = x.n();
            let m = x2.n();
            let mut out = Matrix::zeros(n, m);
            for i in 0..n {
                let pi = x.point(i);
                for j in 0..m {
                    let pj = x2.point(j);
                    out[(i, j)] = eval_rec(leaf, p, &pi, &pj)?;
                }
            }
            Ok(out)
        }
    }
}

/// Gradient of `sum_ij upstream_ij * K_ij` with respect to the unconstrained
/// parameter vector.
pub fn kernel_param_grad(
    spec: &KernelSpec,
    params: &KernelParams,
    x: &Inputs,
    x2: &Inputs,
    upstream: &Matrix,
) -> Result<Vec<f64>> {
    spec.validate_params(params)?;
    if (upstream.rows(), upstream.cols()) != (x.n(), x2.n()) {
        return Err(IckError::shape(
            "kernel upstream",
            format!("{}x{}", x.n(), x2.n()),
            format!("{}x{}", upstream.rows(), upstream.cols()),
        ));
    }
    let mut grad = vec![0.0; spec.param_count()];
    grad_rec(spec, &params.values, x, x2, upstream, &mut grad)?;
    Ok(grad)
}

fn grad_rec(
    spec: &KernelSpec,
    p: &[f64],
    x: &Inputs,
    x2: &Inputs,
    upstream: &Matrix,
    out: &mut [f64],
) -> Result<()> {
    match spec {
        KernelSpec::Sum(cs) => {
            let mut off = 0;
            for c in cs {
                let np = c.param_count();
                grad_rec(c, &p[off..off + np], x, x2, upstream, &mut out[off..off + np])?;
                off += np;
            }
            Ok(())
        }
        KernelSpec::Product(cs) => {
            // effective upstream for child c is upstream .* prod of the others
            let mut mats = Vec::with_capacity(cs.len());
            let mut off = 0;
            for c in cs {
                let np = c.param_count();
                mats.push(matrix_rec(c, &p[off..off + np], x, x2)?);
                off += np;
            }
            off = 0;
            for (ci, c) in cs.iter().enumerate() {
                let np = c.param_count();
                let mut eff = upstream.clone();
                for (cj, m) in mats.iter().enumerate() {
                    if cj != ci {
                        eff = eff.hadamard(m);
                    }
                }
                grad_rec(c, &p[off..off + np], x, x2, &eff, &mut out[off..off + np])?;
                off += np;
            }
            Ok(())
        }
        leaf => {
            for i in 0..x.n() {
                let pi = x.point(i);
                for j in 0..x2.n() {
                    let u = upstream[(i, j)];
                    if u == 0.0 {
                        continue;
                    }
                    let pj = x2.point(j);
                    leaf_grad(leaf, p, &pi, &pj, u, out)?;
                }
            }
            Ok(())
        }
    }
}

fn leaf_grad(
    spec: &KernelSpec,
    p: &[f64],
    x: &[&[f64]],
    x2: &[&[f64]],
    u: f64,
    out: &mut [f64],
) -> Result<()> {
    match spec {
        KernelSpec::Linear(sl) => {
            let (a, b) = (sl.extract(x)?, sl.extract(x2)?);
            check_same_len(a, b)?;
            out[0] += u * p[0].exp() * crate::linalg::dot(a, b);
        }
        KernelSpec::Rbf(sl) => {
            let (a, b) = (sl.extract(x)?, sl.extract(x2)?);
            check_same_len(a, b)?;
            let (s, l) = (p[0].exp(), p[1].exp());
            let d2 = sq_dist(a, b);
            let k = s * (-d2 / (2.0 * l * l)).exp();
            out[0] += u * k;
            out[1] += u * k * d2 / (l * l);
        }
        KernelSpec::ExpSineSquared(sl) => {
            let (a, b) = (sl.extract(x)?, sl.extract(x2)?);
            check_same_len(a, b)?;
            let (s, l, t) = (p[0].exp(), p[1].exp(), p[2].exp());
            let d = sq_dist(a, b).sqrt();
            let ang = PI * d / t;
            let sn = ang.sin();
            let k = s * (-2.0 * sn * sn / (l * l)).exp();
            out[0] += u * k;
            out[1] += u * k * 4.0 * sn * sn / (l * l);
            out[2] += u * k * 2.0 * PI * d * (2.0 * ang).sin() / (l * l * t);
        }
        KernelSpec::SpectralMixture(sl, q) => {
            let (a, b) = (sl.extract(x)?, sl.extract(x2)?);
            check_same_len(a, b)?;
            let tau = a[0] - b[0];
            for i in 0..*q {
                let w = p[i].exp();
                let v = p[q + i].exp();
                let mu = p[2 * q + i];
                let env = (-2.0 * PI * PI * tau * tau * v).exp();
                let cs = (2.0 * PI * tau * mu).cos();
                let term = w * env * cs;
                out[i] += u * term;
                out[q + i] += u * term * (-2.0 * PI * PI * tau * tau * v);
                out[2 * q + i] += u * w * env * (-(2.0 * PI * tau * mu).sin()) * 2.0 * PI * tau;
            }
        }
        _ => unreachable!("composites handled by grad_rec"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// JSON configuration fragments
// ---------------------------------------------------------------------------

/// Serializes a kernel and its parameters to the configuration fragment
/// `{"type": ..., "source": m, "params": {...}}` with composites nesting
/// children under `"children"`. Parameter values appear in natural space.
pub fn kernel_to_json(spec: &KernelSpec, params: &KernelParams) -> Value {
    let (v, rest) = to_json_rec(spec, &params.values);
    debug_assert!(rest.is_empty());
    v
}

fn slice_json(sl: &InputSlice, t: &str, params: Value) -> Value {
    let mut obj = json!({ "type": t, "source": sl.source, "params": params });
    if let Some((a, b)) = sl.coords {
        obj["coords"] = json!([a, b]);
    }
    obj
}

fn to_json_rec<'a>(spec: &KernelSpec, p: &'a [f64]) -> (Value, &'a [f64]) {
    match spec {
        KernelSpec::Linear(sl) => (
            slice_json(sl, "linear", json!({ "variance": p[0].exp() })),
            &p[1..],
        ),
        KernelSpec::Rbf(sl) => (
            slice_json(
                sl,
                "rbf",
                json!({ "variance": p[0].exp(), "lengthscale": p[1].exp() }),
            ),
            &p[2..],
        ),
        KernelSpec::ExpSineSquared(sl) => (
            slice_json(
                sl,
                "exp_sine_squared",
                json!({
                    "variance": p[0].exp(),
                    "lengthscale": p[1].exp(),
                    "period": p[2].exp()
                }),
            ),
            &p[3..],
        ),
        KernelSpec::SpectralMixture(sl, q) => {
            let w: Vec<f64> = p[..*q].iter().map(|v| v.exp()).collect();
            let v: Vec<f64> = p[*q..2 * q].iter().map(|v| v.exp()).collect();
            let mu = p[2 * q..3 * q].to_vec();
            (
                slice_json(
                    sl,
                    "spectral_mixture",
                    json!({ "weights": w, "scales": v, "means": mu }),
                ),
                &p[3 * q..],
            )
        }
        KernelSpec::Sum(cs) | KernelSpec::Product(cs) => {
            let t = if matches!(spec, KernelSpec::Sum(_)) { "sum" } else { "product" };
            let mut rest = p;
            let mut children = Vec::new();
            for c in cs {
                let (v, r) = to_json_rec(c, rest);
                children.push(v);
                rest = r;
            }
            (json!({ "type": t, "children": children }), rest)
        }
    }
}

/// Parses the configuration fragment produced by [`kernel_to_json`].
pub fn kernel_from_json(v: &Value) -> Result<(KernelSpec, KernelParams)> {
    let mut values = Vec::new();
    let spec = from_json_rec(v, &mut values)?;
    Ok((spec, KernelParams::new(values)))
}

fn get_f64(obj: &Value, key: &str) -> Result<f64> {
    obj.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| IckError::Schema(format!("kernel params missing numeric '{key}'")))
}

fn get_log(obj: &Value, key: &str) -> Result<f64> {
    let v = get_f64(obj, key)?;
    if v <= 0.0 || !v.is_finite() {
        return Err(IckError::Schema(format!("kernel param '{key}' must be positive, got {v}")));
    }
    Ok(v.ln())
}

fn get_vec(obj: &Value, key: &str) -> Result<Vec<f64>> {
    obj.get(key)
        .and_then(Value::as_array)
        .map(|a| a.iter().map(|x| x.as_f64().unwrap_or(f64::NAN)).collect::<Vec<f64>>())
        .filter(|v: &Vec<f64>| v.iter().all(|x| x.is_finite()))
        .ok_or_else(|| IckError::Schema(format!("kernel params missing numeric array '{key}'")))
}

fn parse_slice(v: &Value) -> Result<InputSlice> {
    let source = v
        .get("source")
        .and_then(Value::as_u64)
        .ok_or_else(|| IckError::Schema("kernel fragment missing 'source'".into()))? as usize;
    if source == 0 {
        return Err(IckError::Schema("kernel 'source' is 1-based".into()));
    }
    let coords = match v.get("coords") {
        None => None,
        Some(c) => {
            let arr = c
                .as_array()
                .filter(|a| a.len() == 2)
                .ok_or_else(|| IckError::Schema("'coords' must be [start, end)".into()))?;
            let a = arr[0].as_u64().ok_or_else(|| IckError::Schema("bad coords".into()))? as usize;
            let b = arr[1].as_u64().ok_or_else(|| IckError::Schema("bad coords".into()))? as usize;
            Some((a, b))
        }
    };
    Ok(InputSlice { source, coords })
}

fn from_json_rec(v: &Value, values: &mut Vec<f64>) -> Result<KernelSpec> {
    let t = v
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| IckError::Schema("kernel fragment missing 'type'".into()))?;
    match t {
        "sum" | "product" => {
            let children = v
                .get("children")
                .and_then(Value::as_array)
                .ok_or_else(|| IckError::Schema("composite kernel missing 'children'".into()))?;
            if children.is_empty() {
                return Err(IckError::Schema("composite kernel with no children".into()));
            }
            let specs = children
                .iter()
                .map(|c| from_json_rec(c, values))
                .collect::<Result<Vec<_>>>()?;
            Ok(if t == "sum" { KernelSpec::Sum(specs) } else { KernelSpec::Product(specs) })
        }
        _ => {
            let sl = parse_slice(v)?;
            let params = v.get("params").cloned().unwrap_or_else(|| json!({}));
            match t {
                "linear" => {
                    values.push(get_log(&params, "variance")?);
                    Ok(KernelSpec::Linear(sl))
                }
                "rbf" => {
                    values.push(get_log(&params, "variance")?);
                    values.push(get_log(&params, "lengthscale")?);
                    Ok(KernelSpec::Rbf(sl))
                }
                "exp_sine_squared" => {
                    values.push(get_log(&params, "variance")?);
                    values.push(get_log(&params, "lengthscale")?);
                    values.push(get_log(&params, "period")?);
                    Ok(KernelSpec::ExpSineSquared(sl))
                }
                "spectral_mixture" => {
                    let w = get_vec(&params, "weights")?;
                    let s = get_vec(&params, "scales")?;
                    let mu = get_vec(&params, "means")?;
                    if w.is_empty() || w.len() != s.len() || w.len() != mu.len() {
                        return Err(IckError::Schema(
                            "spectral_mixture needs equal-length weights/scales/means".into(),
                        ));
                    }
                    if w.iter().chain(&s).any(|x| *x <= 0.0) {
                        return Err(IckError::Schema(
                            "spectral_mixture weights and scales must be positive".into(),
                        ));
                    }
                    let q = w.len();
                    values.extend(w.iter().map(|x| x.ln()));
                    values.extend(s.iter().map(|x| x.ln()));
                    values.extend(mu);
                    Ok(KernelSpec::SpectralMixture(sl, q))
                }
                other => Err(IckError::Schema(format!("unknown kernel type '{other}'"))),
            }
        }
    }
}
