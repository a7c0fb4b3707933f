//! Evaluation quantities: RMSE, MAE, Spearman correlation, mean standardized
//! log loss, kernel-matrix reconstruction error, eigen-gap ratio, and the
//! exact 1-D empirical Wasserstein distance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{IckError, Result};
use crate::linalg::{sym_eigvals, Matrix};

/// Default variance floor for [`msll`]; keeps the metric finite for
/// overconfident predictors while the floor count exposes them.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;

/// Named metric values plus run metadata. Serializes to JSON and to a
/// single-row CSV (columns sorted by name).
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, f64>,
    /// Integer diagnostics, e.g. variance-floor applications.
    pub counts: BTreeMap<String, u64>,
    /// Flags for values that would otherwise be non-finite or undefined.
    pub flags: BTreeMap<String, String>,
    /// n points, seed, config hash, and similar provenance.
    pub meta: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn insert(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    /// One header line and one value line, metric columns sorted by name.
    pub fn to_csv_row(&self) -> String {
        let mut header = Vec::new();
        let mut row = Vec::new();
        for (k, v) in &self.metrics {
            header.push(k.clone());
            row.push(format!("{v}"));
        }
        for (k, v) in &self.counts {
            header.push(k.clone());
            row.push(format!("{v}"));
        }
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}

fn check_lengths(context: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(IckError::shape(context, format!("{a} values"), format!("{b} values")));
    }
    Ok(())
}

/// Root-mean-square and mean-absolute error.
pub fn regression_errors(y: &[f64], y_hat: &[f64]) -> Result<(f64, f64)> {
    check_lengths("regression_errors", y.len(), y_hat.len())?;
    if y.is_empty() {
        return Err(IckError::DegenerateInput {
            context: "regression_errors",
            detail: "empty input".into(),
        });
    }
    let n = y.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    for (a, b) in y.iter().zip(y_hat) {
        let d = a - b;
        se += d * d;
        ae += d.abs();
    }
    Ok(((se / n).sqrt(), ae / n))
}

/// Fractional ranks with ties averaged.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn spearman(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths("spearman", y.len(), y_hat.len())?;
    if y.len() < 2 {
        return Err(IckError::DegenerateInput {
            context: "spearman",
            detail: "need at least two points".into(),
        });
    }
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(y) || constant(y_hat) {
        return Err(IckError::DegenerateInput {
            context: "spearman",
            detail: "constant input vector".into(),
        });
    }
    let ra = average_ranks(y);
    let rb = average_ranks(y_hat);
    let n = ra.len() as f64;
    // identical or exactly reversed rankings are +-1 by definition; handle
    // them before the floating-point Pearson formula can shave an ulp
    if ra == rb {
        return Ok(1.0);
    }
    if ra.iter().zip(&rb).all(|(a, b)| a + b == n + 1.0) {
        return Ok(-1.0);
    }
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (a, b) in ra.iter().zip(&rb) {
        cov += (a - ma) * (b - mb);
        va += (a - ma) * (a - ma);
        vb += (b - mb) * (b - mb);
    }
    Ok(cov / (va * vb).sqrt())
}

/// Mean standardized log loss with a variance floor:
/// `1/(2N) sum [log(2 pi s_i) + (y_i - mu_i)^2 / s_i]`,
/// `s_i = max(sigma2_i, floor)`. Returns the value and how many points hit
/// the floor.
pub fn msll(y: &[f64], mu: &[f64], sigma2: &[f64], variance_floor: f64) -> Result<(f64, usize)> {
    check_lengths("msll", y.len(), mu.len())?;
    check_lengths("msll", y.len(), sigma2.len())?;
    if variance_floor <= 0.0 {
        return Err(IckError::InvalidConfig("msll needs a positive variance floor".into()));
    }
    let n = y.len() as f64;
    let mut total = 0.0;
    let mut floored = 0usize;
    for i in 0..y.len() {
        let mut s = sigma2[i];
        if s < variance_floor {
            s = variance_floor;
            floored += 1;
        }
        let r = y[i] - mu[i];
        total += (2.0 * std::f64::consts::PI * s).ln() + r * r / s;
    }
    Ok((total / (2.0 * n), floored))
}

/// `(max |K_true - K_est|, ||K_true - K_est||_F / ||K_true||_F)`.
pub fn kernel_recon_error(k_true: &Matrix, k_est: &Matrix) -> Result<(f64, f64)> {
    if (k_true.rows(), k_true.cols()) != (k_est.rows(), k_est.cols()) {
        return Err(IckError::shape(
            "kernel_recon_error",
            format!("{}x{}", k_true.rows(), k_true.cols()),
            format!("{}x{}", k_est.rows(), k_est.cols()),
        ));
    }
    let diff = k_true.sub(k_est);
    Ok((diff.max_abs(), diff.frobenius() / k_true.frobenius().max(1e-300)))
}

/// Mean of the top `head` eigenvalues over the mean of the rest (floored at
/// 1e-12).
pub fn eigen_gap_ratio(k: &Matrix, head: usize) -> Result<f64> {
    let n = k.rows();
    if head == 0 || head >= n {
        return Err(IckError::InvalidConfig(format!(
            "eigen_gap_ratio needs 1 <= head < n (head {head}, n {n})"
        )));
    }
    let ev = sym_eigvals(k)?;
    let top: f64 = ev[..head].iter().sum::<f64>() / head as f64;
    let rest: f64 = ev[head..].iter().sum::<f64>() / (n - head) as f64;
    Ok(top / rest.max(1e-12))
}

/// Exact 1-D Wasserstein-1 distance between equally sized empirical samples:
/// mean absolute difference of the sorted values.
pub fn empirical_w1(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    check_lengths("empirical_w1", samples_a.len(), samples_b.len())?;
    if samples_a.is_empty() {
        return Err(IckError::DegenerateInput {
            context: "empirical_w1",
            detail: "empty samples".into(),
        });
    }
    let mut a = samples_a.to_vec();
    let mut b = samples_b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n = a.len() as f64;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{kernel_matrix, KernelParams, KernelSpec};
    use crate::inputs::Inputs;
    use crate::linalg::RngState;

    #[test]
    fn errors_zero_on_exact_predictions() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(regression_errors(&y, &y).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn errors_hand_case() {
        let (rmse, mae) = regression_errors(&[0.0, 0.0], &[1.0, -1.0]).unwrap();
        assert_eq!(rmse, 1.0);
        assert_eq!(mae, 1.0);
    }

    #[test]
    fn errors_match_independent_computation() {
        let mut rng = RngState::new(2);
        let y: Vec<f64> = rng.normal_vec(37);
        let yh: Vec<f64> = rng.normal_vec(37);
        let (rmse, mae) = regression_errors(&y, &yh).unwrap();
        let mut se = 0.0;
        let mut ae = 0.0;
        for i in 0..y.len() {
            se += (y[i] - yh[i]).powi(2);
            ae += (y[i] - yh[i]).abs();
        }
        assert!((rmse - (se / 37.0).sqrt()).abs() < 1e-12);
        assert!((mae - ae / 37.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_monotone() {
        let inc = [1.0, 2.0, 5.0, 9.0];
        let inc2 = [0.1, 0.4, 0.5, 3.0];
        let dec = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(spearman(&inc, &inc2).unwrap(), 1.0);
        assert_eq!(spearman(&inc, &dec).unwrap(), -1.0);
    }

    #[test]
    fn spearman_with_ties_matches_bruteforce_ranks() {
        let a = [1.0, 2.0, 2.0, 3.0];
        let b = [1.0, 2.0, 3.0, 3.0];
        // ranks by hand: a -> [1, 2.5, 2.5, 4]; b -> [1, 2, 3.5, 3.5]
        let ra = [1.0, 2.5, 2.5, 4.0];
        let rb = [1.0, 2.0, 3.5, 3.5];
        let pearson = |x: &[f64], y: &[f64]| {
            let n = x.len() as f64;
            let mx = x.iter().sum::<f64>() / n;
            let my = y.iter().sum::<f64>() / n;
            let mut c = 0.0;
            let mut vx = 0.0;
            let mut vy = 0.0;
            for i in 0..x.len() {
                c += (x[i] - mx) * (y[i] - my);
                vx += (x[i] - mx).powi(2);
                vy += (y[i] - my).powi(2);
            }
            c / (vx * vy).sqrt()
        };
        let expect = pearson(&ra, &rb);
        assert!((spearman(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn spearman_constant_is_degenerate() {
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(IckError::DegenerateInput { .. })
        ));
    }

    #[test]
    fn spearman_invariant_under_joint_permutation() {
        let mut rng = RngState::new(6);
        let y: Vec<f64> = rng.normal_vec(20);
        let yh: Vec<f64> = rng.normal_vec(20);
        let base = spearman(&y, &yh).unwrap();
        let perm = rng.shuffled_indices(20);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let yhp: Vec<f64> = perm.iter().map(|&i| yh[i]).collect();
        assert!((spearman(&yp, &yhp).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn msll_at_zero_residual_unit_variance() {
        let y = [1.0, -2.0, 0.3];
        let s = [1.0, 1.0, 1.0];
        let (v, floored) = msll(&y, &y, &s, 1e-6).unwrap();
        let expect = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 0.918939).abs() < 1e-6);
        assert_eq!(floored, 0);
    }

    #[test]
    fn msll_unit_residual() {
        let (v, _) = msll(&[1.0], &[0.0], &[1.0], 1e-6).unwrap();
        let expect = 0.5 * ((2.0 * std::f64::consts::PI).ln() + 1.0);
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 1.418939).abs() < 1e-6);
    }

    #[test]
    fn msll_floor_counts() {
        let (v, floored) = msll(&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], 1e-6).unwrap();
        assert!(v.is_finite());
        assert_eq!(floored, 2);
    }

    #[test]
    fn msll_improves_toward_true_residual_variance() {
        // fixed residual r: msll is minimized at sigma2 = r^2
        let r = 0.7;
        let grid = [0.1, 0.3, 0.49, 0.6];
        let at = |s2: f64| msll(&[r], &[0.0], &[s2], 1e-9).unwrap().0;
        let opt = at(r * r);
        for s2 in grid {
            assert!(at(s2) >= opt);
        }
    }

    #[test]
    fn recon_error_hand_case() {
        let mut k = Matrix::zeros(2, 2);
        k[(0, 0)] = 1.0; // unit Frobenius norm
        let mut est = k.clone();
        est[(0, 1)] += 0.1;
        let (max_abs, fro) = kernel_recon_error(&k, &est).unwrap();
        assert!((max_abs - 0.1).abs() < 1e-15);
        assert!((fro - 0.1).abs() < 1e-15);
        assert_eq!(kernel_recon_error(&k, &k).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn eigen_gap_hand_cases() {
        let d = Matrix::from_fn(4, 4, |i, j| {
            if i == j {
                if i == 0 {
                    10.0
                } else {
                    1.0
                }
            } else {
                0.0
            }
        });
        assert!((eigen_gap_ratio(&d, 1).unwrap() - 10.0).abs() < 1e-9);
        let i4 = Matrix::identity(4);
        assert!((eigen_gap_ratio(&i4, 1).unwrap() - 1.0).abs() < 1e-9);
        assert!(eigen_gap_ratio(&i4, 4).is_err());
    }

    #[test]
    fn spectral_mixture_grid_has_large_gap() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * (2.0 / 49.0)).collect();
        let x = Inputs::from_scalars(&xs);
        let spec = KernelSpec::spectral_mixture(1, 2);
        let params = KernelParams::spectral_mixture(&[1.0, 0.5], &[0.1, 0.3], &[1.0, 3.0]);
        let k = kernel_matrix(&spec, &params, &x, &x).unwrap();
        let ratio = eigen_gap_ratio(&k, 5).unwrap();
        assert!(ratio > 10.0, "ratio {ratio}");
    }

    #[test]
    fn w1_basics() {
        let a = [0.3, -1.0, 2.0];
        assert_eq!(empirical_w1(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|v| v + 1.5).collect();
        assert!((empirical_w1(&a, &b).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn w1_matches_sorting_oracle_and_triangle_inequality() {
        let mut rng = RngState::new(44);
        for _ in 0..100 {
            let a: Vec<f64> = rng.normal_vec(13);
            let b: Vec<f64> = rng.normal_vec(13);
            let c: Vec<f64> = rng.normal_vec(13);
            // sorting oracle: brute-force the optimal coupling by sorting
            let mut sa = a.clone();
            let mut sb = b.clone();
            sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
            sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let oracle: f64 =
                sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / 13.0;
            let w_ab = empirical_w1(&a, &b).unwrap();
            assert!((w_ab - oracle).abs() < 1e-12);
            let w_ac = empirical_w1(&a, &c).unwrap();
            let w_cb = empirical_w1(&c, &b).unwrap();
            assert!(w_ab <= w_ac + w_cb + 1e-10);
            // symmetry and permutation invariance
            assert_eq!(w_ab, empirical_w1(&b, &a).unwrap());
            let perm = rng.shuffled_indices(13);
            let ap: Vec<f64> = perm.iter().map(|&i| a[i]).collect();
            assert!((empirical_w1(&ap, &b).unwrap() - w_ab).abs() < 1e-12);
        }
    }

    #[test]
    fn report_round_trips_through_json() {
        let mut r = MetricReport::default();
        r.insert("rmse", 0.25);
        r.counts.insert("msll_floored".into(), 3);
        r.meta("seed", 7);
        let s = serde_json::to_string(&r).unwrap();
        let back: MetricReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
        let csv = r.to_csv_row();
        assert!(csv.starts_with("rmse,msll_floored\n"));
    }
}
