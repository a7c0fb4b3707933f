//! Synthetic data generation and tabular CSV ingestion.
//!
//! Generators draw from a composite-kernel GP prior or from the fixed
//! three-source formula `y = x3 tanh(2 x1 cos^2(pi x2 / 50)) + noise`;
//! CSV loading maps columns onto sources/target/label by header name.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IckError, Result};
use crate::inputs::Inputs;
use crate::kernels::{kernel_matrix, KernelParams, KernelSpec};
use crate::linalg::{mvn_sample, Matrix, RngState};

/// Largest n for which a dense GP prior draw is attempted.
const DENSE_GP_GUARD: usize = 10_000;

/// Multi-source dataset: inputs, regression targets, optional class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Inputs,
    pub y: Vec<f64>,
    pub labels: Option<Vec<usize>>,
    pub source_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: Inputs, y: Vec<f64>) -> Result<Self> {
        if x.n() != y.len() {
            return Err(IckError::shape(
                "dataset",
                format!("{} targets", x.n()),
                format!("{} targets", y.len()),
            ));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(IckError::DegenerateInput {
                context: "dataset",
                detail: "non-finite target".into(),
            });
        }
        let source_names = (1..=x.num_sources()).map(|m| format!("x{m}")).collect();
        Ok(Dataset { x, y, labels: None, source_names })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(IckError::shape(
                "dataset labels",
                format!("{} labels", self.n()),
                format!("{} labels", labels.len()),
            ));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn num_sources(&self) -> usize {
        self.x.num_sources()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|ls| rows.iter().map(|&i| ls[i]).collect()),
            source_names: self.source_names.clone(),
        }
    }
}

/// One draw from `N(0, K + noise_var I)` over the given multi-source points.
pub fn sample_gp_prior(
    spec: &KernelSpec,
    params: &KernelParams,
    x: &Inputs,
    noise_var: f64,
    rng: &mut RngState,
) -> Result<Vec<f64>> {
    if x.n() > DENSE_GP_GUARD {
        return Err(IckError::InvalidConfig(format!(
            "gp prior draw needs n <= {DENSE_GP_GUARD}, got {}",
            x.n()
        )));
    }
    let k = kernel_matrix(spec, params, x, x)?.add_diag(noise_var);
    let mean = vec![0.0; x.n()];
    Ok(mvn_sample(&mean, &k, 1, rng)?.pop().unwrap())
}

/// Three-source synthetic set:
/// `x1 ~ U[-1, 1]`, `x2 ~ U[0, 100]`, `x3 ~ U[-1, 1]`,
/// `y = x3 tanh(2 x1 cos^2(pi x2 / 50)) + N(0, sigma^2)`.
pub fn gen_synth_tanh(n: usize, sigma: f64, rng: &mut RngState) -> Result<Dataset> {
    let mut x1 = Matrix::zeros(n, 1);
    let mut x2 = Matrix::zeros(n, 1);
    let mut x3 = Matrix::zeros(n, 1);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let a = rng.uniform_in(-1.0, 1.0);
        let b = rng.uniform_in(0.0, 100.0);
        let c = rng.uniform_in(-1.0, 1.0);
        x1[(i, 0)] = a;
        x2[(i, 0)] = b;
        x3[(i, 0)] = c;
        let cosf = (std::f64::consts::PI * b / 50.0).cos();
        let clean = c * (2.0 * a * cosf * cosf).tanh();
        y.push(clean + sigma * rng.normal());
    }
    Dataset::new(Inputs::new(vec![x1, x2, x3])?, y)
}

/// Deterministic formula value used by [`gen_synth_tanh`], exposed for
/// oracle checks.
pub fn synth_tanh_formula(x1: f64, x2: f64, x3: f64) -> f64 {
    let cosf = (std::f64::consts::PI * x2 / 50.0).cos();
    x3 * (2.0 * x1 * cosf * cosf).tanh()
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// Role of one CSV column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "role", content = "source")]
pub enum ColumnRole {
    Source(usize),
    Target,
    Label,
}

/// Column-name to role mapping; unmapped columns are ignored.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CsvSchema {
    pub columns: BTreeMap<String, ColumnRole>,
}

impl CsvSchema {
    pub fn new() -> Self {
        CsvSchema::default()
    }

    pub fn source(mut self, column: &str, m: usize) -> Self {
        self.columns.insert(column.to_string(), ColumnRole::Source(m));
        self
    }

    pub fn target(mut self, column: &str) -> Self {
        self.columns.insert(column.to_string(), ColumnRole::Target);
        self
    }

    pub fn label(mut self, column: &str) -> Self {
        self.columns.insert(column.to_string(), ColumnRole::Label);
        self
    }

    fn validate(&self) -> Result<Vec<usize>> {
        let targets = self
            .columns
            .values()
            .filter(|r| matches!(r, ColumnRole::Target))
            .count();
        if targets != 1 {
            return Err(IckError::Schema(format!(
                "schema needs exactly one target column, found {targets}"
            )));
        }
        let mut sources: Vec<usize> = self
            .columns
            .values()
            .filter_map(|r| match r {
                ColumnRole::Source(m) => Some(*m),
                _ => None,
            })
            .collect();
        sources.sort_unstable();
        sources.dedup();
        if sources.is_empty() {
            return Err(IckError::Schema("schema needs at least one source column".into()));
        }
        let expect: Vec<usize> = (1..=sources.len()).collect();
        if sources != expect {
            return Err(IckError::Schema(format!(
                "source indices must be contiguous from 1, found {sources:?}"
            )));
        }
        Ok(sources)
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> IckError {
    IckError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

/// Loads a header-rowed CSV into a typed [`Dataset`] using the schema's
/// column mapping. Rows with unparsable or non-finite mapped values are
/// rejected with a row/column diagnostic (rows are 1-based, header excluded).
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| io_err(path, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    // resolve schema against the header, in file column order
    let mut source_cols: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut target_col: Option<usize> = None;
    let mut label_col: Option<usize> = None;
    for (idx, name) in headers.iter().enumerate() {
        match schema.columns.get(name) {
            None => {}
            Some(ColumnRole::Source(m)) => source_cols.entry(*m).or_default().push(idx),
            Some(ColumnRole::Target) => target_col = Some(idx),
            Some(ColumnRole::Label) => label_col = Some(idx),
        }
    }
    for name in schema.columns.keys() {
        if !headers.iter().any(|h| h == name) {
            return Err(IckError::Schema(format!("column '{name}' not present in {path:?}")));
        }
    }
    let target_col = target_col.ok_or_else(|| IckError::Schema("target column missing".into()))?;

    let mut per_source: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut y = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut n = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record.map_err(|e| io_err(path, e))?;
        let parse = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("").trim();
            let v: f64 = raw.parse().map_err(|_| IckError::Parse {
                row,
                column: headers[col].clone(),
                detail: format!("cannot parse '{raw}' as a number"),
            })?;
            if !v.is_finite() {
                return Err(IckError::Parse {
                    row,
                    column: headers[col].clone(),
                    detail: format!("non-finite value '{raw}'"),
                });
            }
            Ok(v)
        };
        for (m, cols) in &source_cols {
            let dst = per_source.entry(*m).or_default();
            for &c in cols {
                dst.push(parse(c)?);
            }
        }
        y.push(parse(target_col)?);
        if let Some(lc) = label_col {
            let raw = record.get(lc).unwrap_or("").trim();
            let v: usize = raw.parse().map_err(|_| IckError::Parse {
                row,
                column: headers[lc].clone(),
                detail: format!("cannot parse '{raw}' as a class index"),
            })?;
            labels.push(v);
        }
        n += 1;
    }
    let mut sources = Vec::new();
    let mut names = Vec::new();
    for (m, vals) in per_source {
        let d = source_cols[&m].len();
        sources.push(Matrix::from_vec(n, d, vals));
        let cols: Vec<String> = source_cols[&m].iter().map(|&c| headers[c].clone()).collect();
        names.push(cols.join("+"));
    }
    let mut ds = Dataset::new(Inputs::new(sources)?, y)?;
    ds.source_names = names;
    if label_col.is_some() {
        ds = ds.with_labels(labels)?;
    }
    Ok(ds)
}

/// Writes a dataset back out with generated headers (`x<m>_<j>`, `y`,
/// optional `label`), full float round-trip precision.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let mut header = Vec::new();
    for (m, s) in dataset.x.sources().iter().enumerate() {
        for j in 0..s.cols() {
            header.push(format!("x{}_{}", m + 1, j));
        }
    }
    header.push("y".into());
    if dataset.labels.is_some() {
        header.push("label".into());
    }
    writer.write_record(&header).map_err(|e| io_err(path, e))?;
    for i in 0..dataset.n() {
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for s in dataset.x.sources() {
            for v in s.row(i) {
                row.push(format!("{v:?}"));
            }
        }
        row.push(format!("{:?}", dataset.y[i]));
        if let Some(ls) = &dataset.labels {
            row.push(format!("{}", ls[i]));
        }
        writer.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// Schema for loading files produced by [`write_csv`].
pub fn roundtrip_schema(dataset: &Dataset) -> CsvSchema {
    let mut schema = CsvSchema::new().target("y");
    for (m, s) in dataset.x.sources().iter().enumerate() {
        for j in 0..s.cols() {
            schema = schema.source(&format!("x{}_{}", m + 1, j), m + 1);
        }
    }
    if dataset.labels.is_some() {
        schema = schema.label("label");
    }
    schema
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// How to partition a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SplitSpec {
    /// Seeded shuffle; `ratio` of the rows go to train, the rest to test,
    /// validation stays empty.
    Random { ratio: f64, seed: u64 },
    /// Order-free threshold split on one coordinate of one source:
    /// train `v < train_max`, validation `train_max <= v < val_max`,
    /// test `v >= val_max`.
    Threshold {
        source: usize,
        coord: usize,
        train_max: f64,
        val_max: f64,
    },
}

/// Split result; empty partitions are reported, not fatal.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub warnings: Vec<String>,
}

pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Split> {
    let n = dataset.n();
    let (train_idx, val_idx, test_idx) = match spec {
        SplitSpec::Random { ratio, seed } => {
            if !(*ratio > 0.0 && *ratio < 1.0) {
                return Err(IckError::InvalidConfig(format!(
                    "random split ratio must be in (0, 1), got {ratio}"
                )));
            }
            let mut rng = RngState::new(*seed);
            let perm = rng.shuffled_indices(n);
            let n_train = ((*ratio * n as f64).round() as usize).clamp(0, n);
            (
                perm[..n_train].to_vec(),
                Vec::new(),
                perm[n_train..].to_vec(),
            )
        }
        SplitSpec::Threshold { source, coord, train_max, val_max } => {
            if val_max < train_max {
                return Err(IckError::InvalidConfig(
                    "threshold split needs train_max <= val_max".into(),
                ));
            }
            let s = dataset.x.source(*source)?;
            if *coord >= s.cols() {
                return Err(IckError::shape(
                    "threshold split coordinate",
                    format!("coord < {}", s.cols()),
                    format!("{coord}"),
                ));
            }
            let mut train = Vec::new();
            let mut val = Vec::new();
            let mut test = Vec::new();
            for i in 0..n {
                let v = s.row(i)[*coord];
                if v < *train_max {
                    train.push(i);
                } else if v < *val_max {
                    val.push(i);
                } else {
                    test.push(i);
                }
            }
            (train, val, test)
        }
    };
    let mut warnings = Vec::new();
    for (name, idx) in [("train", &train_idx), ("val", &val_idx), ("test", &test_idx)] {
        if idx.is_empty() {
            warnings.push(format!("{name} partition is empty"));
        }
    }
    Ok(Split {
        train: dataset.select(&train_idx),
        val: dataset.select(&val_idx),
        test: dataset.select(&test_idx),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_tanh_formula_values() {
        // x3 = 0 annihilates the signal
        assert_eq!(synth_tanh_formula(0.4, 33.0, 0.0), 0.0);
        // x1 = 1, x2 = 0, x3 = 1 -> tanh(2)
        assert!((synth_tanh_formula(1.0, 0.0, 1.0) - 2.0f64.tanh()).abs() < 1e-12);
        assert!((synth_tanh_formula(1.0, 0.0, 1.0) - 0.964028).abs() < 1e-6);
    }

    #[test]
    fn synth_tanh_reproducible_and_noiseless_exact() {
        let a = gen_synth_tanh(50, 0.0, &mut RngState::new(3)).unwrap();
        let b = gen_synth_tanh(50, 0.0, &mut RngState::new(3)).unwrap();
        assert_eq!(a, b);
        for i in 0..a.n() {
            let p = a.x.point(i);
            let expect = synth_tanh_formula(p[0][0], p[1][0], p[2][0]);
            assert_eq!(a.y[i], expect);
        }
    }

    #[test]
    fn gp_prior_degenerate_variance() {
        // kernel variance -> 0: draw collapses to zero up to jitter scale
        let spec = KernelSpec::rbf(1);
        let params = KernelParams::new(vec![(1e-30f64).ln(), 0.0]);
        let x = Inputs::from_scalars(&[0.0, 0.5, 1.0]);
        let y = sample_gp_prior(&spec, &params, &x, 0.0, &mut RngState::new(4)).unwrap();
        let bound = 5.0 * (1e-8f64).sqrt();
        assert!(y.iter().all(|v| v.abs() <= bound), "{y:?}");
    }

    #[test]
    fn gp_prior_deterministic() {
        let spec = KernelSpec::rbf(1);
        let params = KernelParams::default_for(&spec);
        let x = Inputs::from_scalars(&[0.0, 1.0, 2.0]);
        let a = sample_gp_prior(&spec, &params, &x, 0.01, &mut RngState::new(11)).unwrap();
        let b = sample_gp_prior(&spec, &params, &x, 0.01, &mut RngState::new(11)).unwrap();
        assert_eq!(a, b);
    }

    fn empirical_cov_check(spec: &KernelSpec, params: &KernelParams, x: &Inputs, noise: f64) {
        let k = kernel_matrix(spec, params, x, x).unwrap().add_diag(noise);
        let draws = 2000;
        let mut rng = RngState::new(2025);
        let n = x.n();
        let mut acc = Matrix::zeros(n, n);
        for _ in 0..draws {
            let y = sample_gp_prior(spec, params, x, noise, &mut rng).unwrap();
            for i in 0..n {
                for j in 0..n {
                    acc[(i, j)] += y[i] * y[j] / draws as f64;
                }
            }
        }
        let rel = acc.sub(&k).frobenius() / k.frobenius();
        assert!(rel < 0.10, "relative error {rel}");
    }

    #[test]
    fn gp_prior_empirical_covariance_product_kernel() {
        let spec = KernelSpec::Product(vec![
            KernelSpec::linear(1),
            KernelSpec::spectral_mixture(2, 2),
        ]);
        let mut params = KernelParams::default_for(&spec);
        params.values[0] = 0.2;
        let x = Inputs::new(vec![
            Matrix::from_vec(5, 1, vec![0.1, 0.4, 0.5, 0.8, 1.0]),
            Matrix::from_vec(5, 1, vec![0.0, 0.5, 1.0, 1.5, 2.0]),
        ])
        .unwrap();
        empirical_cov_check(&spec, &params, &x, 0.01);
    }

    #[test]
    fn gp_prior_empirical_covariance_sum_kernel() {
        let spec = KernelSpec::Sum(vec![
            KernelSpec::linear(1),
            KernelSpec::spectral_mixture(2, 2),
        ]);
        let params = KernelParams::default_for(&spec);
        let x = Inputs::new(vec![
            Matrix::from_vec(5, 1, vec![0.1, 0.4, 0.5, 0.8, 1.0]),
            Matrix::from_vec(5, 1, vec![0.0, 0.5, 1.0, 1.5, 2.0]),
        ])
        .unwrap();
        empirical_cov_check(&spec, &params, &x, 0.01);
    }

    #[test]
    fn gp_prior_size_guard() {
        let spec = KernelSpec::rbf(1);
        let params = KernelParams::default_for(&spec);
        let xs = vec![0.0; DENSE_GP_GUARD + 1];
        let x = Inputs::from_scalars(&xs);
        assert!(sample_gp_prior(&spec, &params, &x, 0.0, &mut RngState::new(0)).is_err());
    }

    #[test]
    fn csv_load_shapes_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "t,f1,f2,y\n1.0,0.5,0.25,3.0\n2.0,0.1,0.2,4.0\n3.5,0.9,0.8,5.0\n")
            .unwrap();
        let schema = CsvSchema::new()
            .source("f1", 1)
            .source("f2", 1)
            .source("t", 2)
            .target("y");
        let ds = load_csv(&path, &schema).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.x.source(1).unwrap().cols(), 2);
        assert_eq!(ds.x.source(2).unwrap().cols(), 1);
        assert_eq!(ds.y, vec![3.0, 4.0, 5.0]);

        // round-trip through the writer
        let rt = dir.path().join("rt.csv");
        write_csv(&ds, &rt).unwrap();
        let back = load_csv(&rt, &roundtrip_schema(&ds)).unwrap();
        assert_eq!(back.n(), ds.n());
        for i in 0..ds.n() {
            assert!((back.y[i] - ds.y[i]).abs() < 1e-12);
            for m in 1..=2 {
                let a = back.x.source(m).unwrap().row(i);
                let b = ds.x.source(m).unwrap().row(i);
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn csv_nan_rejected_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,y\n1.0,2.0\n2.0,NaN\n").unwrap();
        let schema = CsvSchema::new().source("t", 1).target("y");
        match load_csv(&path, &schema) {
            Err(IckError::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "y");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_missing_schema_column_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cols.csv");
        std::fs::write(&path, "a,y\n1.0,2.0\n").unwrap();
        let schema = CsvSchema::new().source("nope", 1).target("y");
        assert!(matches!(load_csv(&path, &schema), Err(IckError::Schema(_))));
    }

    #[test]
    fn threshold_split_partitions() {
        let x = Inputs::from_scalars(&[100.0, 400.0, 600.0]);
        let ds = Dataset::new(x, vec![1.0, 2.0, 3.0]).unwrap();
        let s = split(
            &ds,
            &SplitSpec::Threshold { source: 1, coord: 0, train_max: 365.0, val_max: 500.0 },
        )
        .unwrap();
        assert_eq!(s.train.y, vec![1.0]);
        assert_eq!(s.val.y, vec![2.0]);
        assert_eq!(s.test.y, vec![3.0]);
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn random_split_even_halves_and_deterministic() {
        let xs: Vec<f64> = (0..3000).map(|i| i as f64).collect();
        let ds = Dataset::new(Inputs::from_scalars(&xs), xs.clone()).unwrap();
        let spec = SplitSpec::Random { ratio: 0.5, seed: 4 };
        let s1 = split(&ds, &spec).unwrap();
        assert_eq!(s1.train.n(), 1500);
        assert_eq!(s1.test.n(), 1500);
        assert_eq!(s1.val.n(), 0);
        assert_eq!(s1.warnings, vec!["val partition is empty".to_string()]);
        let s2 = split(&ds, &spec).unwrap();
        assert_eq!(s1.train.y, s2.train.y);
        // exact partition: union of indices covers everything exactly once
        let mut seen: Vec<f64> = s1.train.y.iter().chain(&s1.test.y).cloned().collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(seen, xs);
    }
}
