//! The data homogenizer: a fitted per-feature map from heterogeneous rows
//! (numerical/categorical cells with missing values) to sparse binary vectors.
//!
//! Each numerical feature is quantile-binned on the training split; each
//! categorical feature is one-hot encoded. A feature gains an extra missing
//! slot only when the training split actually contains a missing value in it,
//! so the total width D stays minimal. Every encoded row has exactly one hot
//! slot per feature.

use serde::{Deserialize, Serialize};

use crate::data::dataset::{CellValue, Dataset};
use crate::data::schema::{ColumnKind, ColumnSchema};
use crate::error::{Error, Result};
use crate::numerics::graph::FeatureGroups;
use crate::numerics::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinStrategy {
    /// Equal-frequency bins from training quantiles.
    Quantile,
    /// Equal-width bins over the training range.
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum FeatureMap {
    Numeric {
        /// Strictly increasing interior edges; bin k covers [edge[k-1], edge[k]).
        /// Values outside the training range clamp into the edge bins.
        edges: Vec<f64>,
        has_missing: bool,
    },
    Categorical {
        categories: Vec<String>,
        has_missing: bool,
    },
}

impl FeatureMap {
    fn width(&self) -> usize {
        match self {
            FeatureMap::Numeric { edges, has_missing } => {
                edges.len() + 1 + usize::from(*has_missing)
            }
            FeatureMap::Categorical {
                categories,
                has_missing,
            } => categories.len() + usize::from(*has_missing),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Homogenizer {
    features: Vec<FeatureMap>,
    /// Column names and kinds this homogenizer was fitted against.
    schema: Vec<(String, ColumnKind)>,
    offsets: Vec<usize>,
    dim: usize,
    warnings: Vec<String>,
}

/// Counts of apply-time fallbacks taken while encoding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EncodeStats {
    /// Cells that hit the deterministic overflow rule: an unseen category or
    /// a missing value in a feature with no missing slot, mapped to slot 0.
    pub overflow_cells: usize,
}

impl Homogenizer {
    /// Total binary width D.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of original features (c + r); also the popcount of every
    /// encoded row.
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_groups(&self) -> FeatureGroups {
        FeatureGroups::new(self.features.iter().map(|f| f.width()).collect())
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn check_schema(&self, ds: &Dataset) -> Result<()> {
        if ds.schema.len() != self.schema.len() {
            return Err(Error::Data(format!(
                "dataset has {} columns, homogenizer was fitted on {}",
                ds.schema.len(),
                self.schema.len()
            )));
        }
        for (col, (name, kind)) in ds.schema.iter().zip(&self.schema) {
            if &col.name != name || &col.kind != kind {
                return Err(Error::Data(format!(
                    "schema mismatch on column {:?}",
                    col.name
                )));
            }
        }
        Ok(())
    }
}

/// Fits the homogenizer on the training rows of `ds`.
pub fn fit_homogenizer(
    ds: &Dataset,
    train_indices: &[usize],
    bins_per_numeric: usize,
    strategy: BinStrategy,
) -> Result<Homogenizer> {
    if bins_per_numeric < 2 {
        return Err(Error::Config("bins_per_numeric must be at least 2".into()));
    }
    if train_indices.is_empty() {
        return Err(Error::Empty("fit on zero training rows".into()));
    }
    let mut features = Vec::with_capacity(ds.schema.len());
    let mut warnings = Vec::new();
    for (j, col) in ds.schema.iter().enumerate() {
        match col.kind {
            ColumnKind::Numerical => {
                let mut values = Vec::new();
                let mut has_missing = false;
                for &i in train_indices {
                    match &ds.rows[i][j] {
                        Some(CellValue::Num(v)) => values.push(*v),
                        Some(CellValue::Cat(_)) => {
                            return Err(Error::Data(format!(
                                "categorical cell in numerical column {:?}",
                                col.name
                            )))
                        }
                        None => has_missing = true,
                    }
                }
                let edges = numeric_edges(&mut values, bins_per_numeric, strategy);
                if edges.is_empty() {
                    warnings.push(format!(
                        "numerical column {:?} is constant on the training split; using a single bin",
                        col.name
                    ));
                }
                features.push(FeatureMap::Numeric { edges, has_missing });
            }
            ColumnKind::Categorical => {
                let mut categories: Vec<String> = col.categories.clone().unwrap_or_default();
                let declared = !categories.is_empty();
                let mut has_missing = false;
                for &i in train_indices {
                    match &ds.rows[i][j] {
                        Some(CellValue::Cat(c)) => {
                            if !declared && !categories.iter().any(|k| k == c) {
                                categories.push(c.clone());
                            }
                        }
                        Some(CellValue::Num(_)) => {
                            return Err(Error::Data(format!(
                                "numerical cell in categorical column {:?}",
                                col.name
                            )))
                        }
                        None => has_missing = true,
                    }
                }
                if categories.len() < 2 && !has_missing {
                    warnings.push(format!(
                        "categorical column {:?} has fewer than 2 categories after fitting",
                        col.name
                    ));
                }
                if categories.is_empty() && !has_missing {
                    return Err(Error::Data(format!(
                        "categorical column {:?} has no observed categories",
                        col.name
                    )));
                }
                features.push(FeatureMap::Categorical {
                    categories,
                    has_missing,
                });
            }
        }
    }
    let mut offsets = Vec::with_capacity(features.len());
    let mut dim = 0;
    for f in &features {
        offsets.push(dim);
        dim += f.width();
    }
    Ok(Homogenizer {
        features,
        schema: ds
            .schema
            .iter()
            .map(|c| (c.name.clone(), c.kind))
            .collect(),
        offsets,
        dim,
        warnings,
    })
}

/// Interior bin edges for a numeric feature. Duplicate edges (heavy ties in
/// the data) are merged; a constant column yields no edges, i.e. one bin.
fn numeric_edges(values: &mut [f64], bins: usize, strategy: BinStrategy) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = values[0];
    let hi = values[values.len() - 1];
    if lo == hi {
        return Vec::new();
    }
    let mut edges = Vec::with_capacity(bins - 1);
    for k in 1..bins {
        let e = match strategy {
            BinStrategy::Quantile => quantile_sorted(values, k as f64 / bins as f64),
            BinStrategy::Uniform => lo + (hi - lo) * (k as f64 / bins as f64),
        };
        if edges.last().is_none_or(|&last| e > last) && e > lo {
            edges.push(e);
        }
    }
    edges
}

/// Linear-interpolation quantile of pre-sorted values.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Encodes the selected rows as a dense {0,1} matrix of shape
/// (indices.len(), D), one hot slot per feature per row.
pub fn encode_binary(h: &Homogenizer, ds: &Dataset, indices: &[usize]) -> Result<Matrix> {
    encode_binary_with_stats(h, ds, indices).map(|(m, _)| m)
}

pub fn encode_binary_with_stats(
    h: &Homogenizer,
    ds: &Dataset,
    indices: &[usize],
) -> Result<(Matrix, EncodeStats)> {
    h.check_schema(ds)?;
    let mut out = Matrix::zeros(indices.len(), h.dim);
    let mut stats = EncodeStats::default();
    for (r, &i) in indices.iter().enumerate() {
        let row = &ds.rows[i];
        for (j, fmap) in h.features.iter().enumerate() {
            let slot = slot_for(fmap, &row[j], &mut stats);
            out.set(r, h.offsets[j] + slot, 1.0);
        }
    }
    Ok((out, stats))
}

fn slot_for(fmap: &FeatureMap, cell: &Option<CellValue>, stats: &mut EncodeStats) -> usize {
    match (fmap, cell) {
        (FeatureMap::Numeric { edges, .. }, Some(CellValue::Num(v))) => {
            // index = number of edges <= v; out-of-range values clamp into
            // the first or last bin naturally
            edges.partition_point(|e| e <= v)
        }
        (FeatureMap::Numeric { edges, has_missing }, None) => {
            if *has_missing {
                edges.len() + 1
            } else {
                stats.overflow_cells += 1;
                0
            }
        }
        (
            FeatureMap::Categorical {
                categories,
                has_missing,
            },
            Some(CellValue::Cat(c)),
        ) => match categories.iter().position(|k| k == c) {
            Some(idx) => idx,
            None if *has_missing => categories.len(),
            None => {
                stats.overflow_cells += 1;
                0
            }
        },
        (
            FeatureMap::Categorical {
                categories,
                has_missing,
            },
            None,
        ) => {
            if *has_missing {
                categories.len()
            } else {
                stats.overflow_cells += 1;
                0
            }
        }
        // kind mismatches are caught by check_schema; a cell of the wrong
        // variant can only come from a corrupted dataset
        _ => {
            stats.overflow_cells += 1;
            0
        }
    }
}

/// Snaps soft per-group probabilities to hard one-hot rows: within each
/// feature group the maximum entry becomes 1 (lowest index wins ties).
///
/// Every group of every row must sum to 1 within 1e-6.
pub fn group_argmax_decode(h: &Homogenizer, soft: &Matrix) -> Result<Matrix> {
    let groups = h.feature_groups();
    if soft.cols() != groups.total_width() {
        return Err(Error::Dimension(format!(
            "soft matrix width {} does not match homogenizer dim {}",
            soft.cols(),
            groups.total_width()
        )));
    }
    let mut out = Matrix::zeros(soft.rows(), soft.cols());
    for r in 0..soft.rows() {
        for (off, size) in groups.iter() {
            let slice = &soft.row(r)[off..off + size];
            let sum: f64 = slice.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Contract(format!(
                    "group at offset {off} sums to {sum}, expected 1"
                )));
            }
            let mut best = 0;
            for (k, &v) in slice.iter().enumerate() {
                if v > slice[best] {
                    best = k;
                }
            }
            out.set(r, off + best, 1.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::Dataset;
    use crate::data::schema::ColumnSchema;
    use crate::numerics::rng::Rng;

    fn mixed_dataset() -> Dataset {
        // 1 numeric column with values 1..=100, 1 categorical with 3 categories
        let schema = vec![
            ColumnSchema {
                name: "x".into(),
                kind: ColumnKind::Numerical,
                categories: None,
            },
            ColumnSchema {
                name: "c".into(),
                kind: ColumnKind::Categorical,
                categories: None,
            },
        ];
        let cats = ["a", "b", "c"];
        let rows: Vec<Vec<Option<CellValue>>> = (1..=100)
            .map(|i| {
                vec![
                    Some(CellValue::Num(i as f64)),
                    Some(CellValue::Cat(cats[i % 3].to_string())),
                ]
            })
            .collect();
        let labels = (0..100).map(|i| i % 2).collect();
        Dataset {
            name: "mixed".into(),
            schema,
            rows,
            labels,
            n_classes: 2,
            label_names: vec!["0".into(), "1".into()],
        }
    }

    #[test]
    fn widths_are_additive() {
        let ds = mixed_dataset();
        let idx: Vec<usize> = (0..100).collect();
        let h = fit_homogenizer(&ds, &idx, 10, BinStrategy::Quantile).unwrap();
        assert_eq!(h.dim(), 10 + 3);
        assert!(h.warnings().is_empty());
    }

    #[test]
    fn missing_values_add_one_bin() {
        let mut ds = mixed_dataset();
        for i in 0..5 {
            ds.rows[i][0] = None;
        }
        let idx: Vec<usize> = (0..100).collect();
        let h = fit_homogenizer(&ds, &idx, 10, BinStrategy::Quantile).unwrap();
        assert_eq!(h.dim(), 11 + 3);
    }

    #[test]
    fn constant_numeric_column_is_one_bin_with_warning() {
        let mut ds = mixed_dataset();
        for row in &mut ds.rows {
            row[0] = Some(CellValue::Num(7.0));
        }
        let idx: Vec<usize> = (0..100).collect();
        let h = fit_homogenizer(&ds, &idx, 10, BinStrategy::Quantile).unwrap();
        assert_eq!(h.dim(), 1 + 3);
        assert_eq!(h.warnings().len(), 1);
    }

    #[test]
    fn encoding_is_one_hot_per_feature() {
        let ds = mixed_dataset();
        let idx: Vec<usize> = (0..100).collect();
        let h = fit_homogenizer(&ds, &idx, 10, BinStrategy::Quantile).unwrap();
        let m = encode_binary(&h, &ds, &[0, 3, 50, 99, 7]).unwrap();
        assert_eq!(m.shape(), (5, 13));
        for r in 0..5 {
            let ones: f64 = m.row(r).iter().sum();
            assert_eq!(ones, 2.0);
            assert!(m.row(r).iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn out_of_range_value_clamps_to_edge_bin() {
        let ds = mixed_dataset();
        let idx: Vec<usize> = (0..100).collect();
        let h = fit_homogenizer(&ds, &idx, 4, BinStrategy::Quantile).unwrap();
        let mut probe = mixed_dataset();
        probe.rows[0][0] = Some(CellValue::Num(-1e9));
        probe.rows[1][0] = Some(CellValue::Num(1e9));
        let m = encode_binary(&h, &probe, &[0, 1]).unwrap();
        assert_eq!(m.at(0, 0), 1.0); // first bin
        let groups = h.feature_groups();
        let last_bin = groups.size(0) - 1;
        assert_eq!(m.at(1, last_bin), 1.0); // last bin
    }

    #[test]
    fn unseen_category_without_missing_slot_overflows_to_first() {
        let ds = mixed_dataset();
        let idx: Vec<usize> = (0..100).collect();
        let h = fit_homogenizer(&ds, &idx, 4, BinStrategy::Quantile).unwrap();
        let mut probe = mixed_dataset();
        probe.rows[0][1] = Some(CellValue::Cat("zzz".into()));
        let (m, stats) = encode_binary_with_stats(&h, &probe, &[0]).unwrap();
        let off = h.feature_groups().offset(1);
        assert_eq!(m.at(0, off), 1.0);
        assert_eq!(stats.overflow_cells, 1);
    }

    #[test]
    fn group_argmax_basics() {
        let ds = mixed_dataset();
        let idx: Vec<usize> = (0..100).collect();
        let h = fit_homogenizer(&ds, &idx, 3, BinStrategy::Quantile).unwrap();
        assert_eq!(h.dim(), 6);
        let soft = Matrix::from_vec(1, 6, vec![0.1, 0.7, 0.2, 0.5, 0.2, 0.3]).unwrap();
        let hard = group_argmax_decode(&h, &soft).unwrap();
        assert_eq!(hard.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        // idempotent on already-hard input
        let again = group_argmax_decode(&h, &hard).unwrap();
        assert_eq!(again, hard);
    }

    #[test]
    fn group_argmax_tie_takes_lowest_index() {
        let ds = mixed_dataset();
        let idx: Vec<usize> = (0..100).collect();
        let h = fit_homogenizer(&ds, &idx, 3, BinStrategy::Quantile).unwrap();
        let soft = Matrix::from_vec(1, 6, vec![0.4, 0.4, 0.2, 0.5, 0.5, 0.0]).unwrap();
        let hard = group_argmax_decode(&h, &soft).unwrap();
        assert_eq!(hard.data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn group_argmax_rejects_off_simplex_input() {
        let ds = mixed_dataset();
        let idx: Vec<usize> = (0..100).collect();
        let h = fit_homogenizer(&ds, &idx, 3, BinStrategy::Quantile).unwrap();
        let soft = Matrix::from_vec(1, 6, vec![0.4, 0.4, 0.4, 0.5, 0.5, 0.0]).unwrap();
        assert!(matches!(
            group_argmax_decode(&h, &soft),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn random_simplex_rows_keep_feature_count() {
        let ds = mixed_dataset();
        let idx: Vec<usize> = (0..100).collect();
        let h = fit_homogenizer(&ds, &idx, 5, BinStrategy::Quantile).unwrap();
        let groups = h.feature_groups();
        let mut rng = Rng::new(2);
        let mut soft = Matrix::zeros(20, h.dim());
        for r in 0..20 {
            for (off, size) in groups.iter() {
                let mut total = 0.0;
                let raw: Vec<f64> = (0..size).map(|_| rng.uniform(0.01, 1.0)).collect();
                for v in &raw {
                    total += v;
                }
                for (k, v) in raw.iter().enumerate() {
                    soft.set(r, off + k, v / total);
                }
            }
        }
        let hard = group_argmax_decode(&h, &soft).unwrap();
        for r in 0..20 {
            let ones: f64 = hard.row(r).iter().sum();
            assert_eq!(ones as usize, h.n_features());
        }
    }

    #[test]
    fn encode_rejects_mismatched_schema() {
        let ds = mixed_dataset();
        let idx: Vec<usize> = (0..100).collect();
        let h = fit_homogenizer(&ds, &idx, 5, BinStrategy::Quantile).unwrap();
        let mut other = mixed_dataset();
        other.schema[0].name = "renamed".into();
        assert!(encode_binary(&h, &other, &[0]).is_err());
    }
}
