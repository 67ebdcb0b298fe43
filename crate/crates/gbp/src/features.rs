//! Dense feature matrices and the normalized residue seed.
//!
//! The push phase does not run on raw features. It runs on
//! `ColumnNormalized(D^{-r} X)`: each feature value is scaled by `d(u)^{-r}`
//! and each column is divided by its L1 norm so a non-negative column carries
//! total mass exactly 1 (that unit mass is what the push-phase column-sum and
//! cost bounds are stated against). The norms are retained so outputs can be
//! scaled back.

use std::io::BufRead;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Row-major dense n×F matrix of finite doubles; row order matches graph ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<FeatureMatrix> {
        if rows == 0 || cols == 0 {
            return Err(Error::validation("feature matrix dimensions must be positive"));
        }
        if values.len() != rows * cols {
            return Err(Error::validation(format!(
                "feature matrix size mismatch: {}×{} needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite feature value {bad}")));
        }
        Ok(FeatureMatrix { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `ColumnNormalized(D^{-r} X)` plus the per-column L1 norms that were divided
/// out (1 for all-zero columns, so denormalization is always a plain multiply).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedResidueSeed {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    column_norms: Vec<f64>,
}

impl NormalizedResidueSeed {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column_norms(&self) -> &[f64] {
        &self.column_norms
    }
}

/// Scale rows by `d(u)^{-r}` and L1-normalize every column, recording the
/// norms. Zero columns stay zero and record norm 1.
pub fn normalize(x: &FeatureMatrix, g: &Graph, r: f64) -> Result<NormalizedResidueSeed> {
    if x.rows() != g.node_count() {
        return Err(Error::validation(format!(
            "feature rows ({}) != graph nodes ({})",
            x.rows(),
            g.node_count()
        )));
    }
    let scale = g.degree_power(-r);
    let (rows, cols) = (x.rows(), x.cols());
    let mut values = vec![0.0; rows * cols];
    for u in 0..rows {
        for k in 0..cols {
            values[u * cols + k] = scale[u] * x.get(u, k);
        }
    }
    let mut column_norms = vec![0.0; cols];
    for u in 0..rows {
        for k in 0..cols {
            column_norms[k] += values[u * cols + k].abs();
        }
    }
    for norm in &mut column_norms {
        if *norm == 0.0 {
            *norm = 1.0;
        }
    }
    for u in 0..rows {
        for k in 0..cols {
            values[u * cols + k] /= column_norms[k];
        }
    }
    Ok(NormalizedResidueSeed { rows, cols, values, column_norms })
}

/// `D^{-r} X` without the column normalization (all norms recorded as 1).
/// Test/diagnostic entry point: lets linearity be exercised in the raw scale,
/// where adding two seeds is meaningful.
pub fn scale_without_normalization(
    x: &FeatureMatrix,
    g: &Graph,
    r: f64,
) -> Result<NormalizedResidueSeed> {
    if x.rows() != g.node_count() {
        return Err(Error::validation(format!(
            "feature rows ({}) != graph nodes ({})",
            x.rows(),
            g.node_count()
        )));
    }
    let scale = g.degree_power(-r);
    let (rows, cols) = (x.rows(), x.cols());
    let mut values = vec![0.0; rows * cols];
    for u in 0..rows {
        for k in 0..cols {
            values[u * cols + k] = scale[u] * x.get(u, k);
        }
    }
    Ok(NormalizedResidueSeed { rows, cols, values, column_norms: vec![1.0; cols] })
}

/// Parse whitespace-separated feature rows; the column count is inferred from
/// the first data line and enforced on the rest. Exactly `n` rows expected.
pub fn load_features<R: BufRead>(reader: R, n: usize) -> Result<FeatureMatrix> {
    let mut values: Vec<f64> = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut count = 0usize;
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| {
                Error::parse(lineno + 1, format!("expected real number, got {tok:?}"))
            })?;
            values.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(f) if f != count => {
                return Err(Error::parse(
                    lineno + 1,
                    format!("ragged row: expected {f} columns, got {count}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::validation(format!("expected {n} feature rows, got {rows}")));
    }
    FeatureMatrix::new(rows, cols.unwrap_or(0), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::load_edge_list;
    use std::io::Cursor;

    fn pair_graph() -> Graph {
        load_edge_list(Cursor::new("0 1")).unwrap()
    }

    #[test]
    fn normalize_r0_already_normalized() {
        let g = pair_graph();
        let x = FeatureMatrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        let seed = normalize(&x, &g, 0.0).unwrap();
        assert_eq!(seed.values(), &[1.0, 0.0]);
        assert_eq!(seed.column_norms(), &[1.0]);
    }

    #[test]
    fn normalize_r_half_pair_graph() {
        // d = 2 both nodes: D^{-1/2}X = (1/√2, 0), L1 norm 1/√2, seed (1, 0).
        let g = pair_graph();
        let x = FeatureMatrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        let seed = normalize(&x, &g, 0.5).unwrap();
        assert!((seed.get(0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(seed.get(1, 0), 0.0);
        assert!((seed.column_norms()[0] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_column_records_norm_one() {
        let g = pair_graph();
        let x = FeatureMatrix::new(2, 2, vec![1.0, 0.0, 2.0, 0.0]).unwrap();
        let seed = normalize(&x, &g, 0.5).unwrap();
        assert_eq!(seed.get(0, 1), 0.0);
        assert_eq!(seed.get(1, 1), 0.0);
        assert_eq!(seed.column_norms()[1], 1.0);
    }

    #[test]
    fn normalize_idempotent_at_r0() {
        let g = load_edge_list(Cursor::new("0 1\n1 2\n0 3")).unwrap();
        let x = FeatureMatrix::new(4, 2, vec![0.5, -1.0, 0.25, 2.0, 1.0, 0.0, -0.5, 1.5]).unwrap();
        let once = normalize(&x, &g, 0.5).unwrap();
        let as_features = FeatureMatrix::new(once.rows(), once.cols(), once.values().to_vec()).unwrap();
        let twice = normalize(&as_features, &g, 0.0).unwrap();
        assert_eq!(once.values(), twice.values());
        assert!(twice.column_norms().iter().all(|&n| (n - 1.0).abs() < 1e-12));
    }

    #[test]
    fn seed_columns_have_unit_l1_norm() {
        let g = load_edge_list(Cursor::new("0 1\n1 2\n2 3\n3 0\n0 2")).unwrap();
        let x = FeatureMatrix::new(
            4,
            3,
            vec![1.0, -2.0, 0.0, 0.5, 3.0, 0.0, -1.5, 0.25, 0.0, 2.0, -0.75, 0.0],
        )
        .unwrap();
        for &r in &[0.0, 0.5, 1.0] {
            let seed = normalize(&x, &g, r).unwrap();
            for k in 0..2 {
                let l1: f64 = (0..4).map(|u| seed.get(u, k).abs()).sum();
                assert!((l1 - 1.0).abs() < 1e-12, "column {k} at r={r}: L1={l1}");
            }
            // zero column passes through
            assert!((0..4).all(|u| seed.get(u, 2) == 0.0));
        }
    }

    #[test]
    fn load_features_shapes() {
        let x = load_features(Cursor::new("1 0\n0 1"), 2).unwrap();
        assert_eq!((x.rows(), x.cols()), (2, 2));
        assert_eq!(x.values(), &[1.0, 0.0, 0.0, 1.0]);

        let col = load_features(Cursor::new("1\n2\n3"), 3).unwrap();
        assert_eq!((col.rows(), col.cols()), (3, 1));
        assert_eq!(col.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn load_features_errors() {
        let err = load_features(Cursor::new("1 2\n3"), 2).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        assert!(load_features(Cursor::new("1 2\nx y"), 2).is_err());
        assert!(load_features(Cursor::new("1 2\n3 4\n5 6"), 2).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(FeatureMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(load_features(Cursor::new("1 inf"), 1).is_err());
    }
}
