//! Brain-graph construction: Pearson connectivity, thresholded adjacency and
//! dataset splits.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Default binarization threshold for functional connectivity.
pub const DEFAULT_THRESHOLD: f64 = 0.3;

/// ROI time series of one subject: rows are timepoints, columns are ROIs.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesTable {
    values: Matrix,
    subject_id: String,
}

impl TimeSeriesTable {
    pub fn new(subject_id: impl Into<String>, values: Matrix) -> Result<Self> {
        if values.rows() < 2 {
            return Err(Error::invalid(format!(
                "time series needs at least 2 timepoints, got {}",
                values.rows()
            )));
        }
        if values.cols() < 2 {
            return Err(Error::invalid(format!(
                "time series needs at least 2 ROIs, got {}",
                values.cols()
            )));
        }
        values.ensure_finite("time series input")?;
        Ok(TimeSeriesTable {
            values,
            subject_id: subject_id.into(),
        })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn timepoints(&self) -> usize {
        self.values.rows()
    }

    pub fn num_rois(&self) -> usize {
        self.values.cols()
    }

    /// Reorders ROI columns so that ROI `i` becomes ROI `perm[i]`.
    pub fn permute_rois(&self, perm: &[usize]) -> Result<Self> {
        let t = self.values.transpose().permute_rows(perm)?.transpose();
        Ok(TimeSeriesTable {
            values: t,
            subject_id: self.subject_id.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BrainGraph {
    /// Node features; row `i` is ROI `i`'s connectivity profile.
    pub x: Matrix,
    /// Binary, symmetric, zero-diagonal adjacency.
    pub a: Matrix,
    pub roi_names: Option<Vec<String>>,
}

impl BrainGraph {
    pub fn num_nodes(&self) -> usize {
        self.x.rows()
    }

    pub fn degrees(&self) -> Vec<f64> {
        degrees(&self.a)
    }

    pub fn num_edges(&self) -> usize {
        let n = self.a.rows();
        (0..n)
            .map(|i| (i + 1..n).filter(|&j| self.a.get(i, j) != 0.0).count())
            .sum()
    }
}

pub(crate) fn degrees(a: &Matrix) -> Vec<f64> {
    (0..a.rows()).map(|i| a.row(i).iter().sum()).collect()
}

#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub name: String,
    pub subject_ids: Vec<String>,
    pub graphs: Vec<BrainGraph>,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        subject_ids: Vec<String>,
        graphs: Vec<BrainGraph>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if graphs.len() != labels.len() || graphs.len() != subject_ids.len() {
            return Err(Error::invalid(format!(
                "dataset has {} graphs, {} labels and {} ids",
                graphs.len(),
                labels.len(),
                subject_ids.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::invalid(format!("label {bad} is not binary")));
        }
        Ok(LabeledDataset {
            name: name.into(),
            subject_ids,
            graphs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn has_both_classes(&self) -> bool {
        self.labels.contains(&0) && self.labels.contains(&1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Pearson correlation between every pair of ROI columns.
///
/// A column with zero variance has correlation 0 with every other column
/// (diagonal stays 1).
pub fn pearson_matrix(ts: &TimeSeriesTable) -> Result<Matrix> {
    let v = ts.values();
    let (t, n) = v.shape();
    if t < 2 {
        return Err(Error::invalid("pearson_matrix needs at least 2 timepoints"));
    }
    v.ensure_finite("pearson_matrix input")?;

    let mut centered = v.clone();
    let mut norms = vec![0.0; n];
    for c in 0..n {
        let mean = (0..t).map(|r| v.get(r, c)).sum::<f64>() / t as f64;
        let mut ss = 0.0;
        for r in 0..t {
            let d = v.get(r, c) - mean;
            centered.set(r, c, d);
            ss += d * d;
        }
        norms[c] = ss.sqrt();
    }
    // the 1/(T-1) factors of covariance and both deviations cancel
    let cov = {
        let ct = centered.transpose();
        ct.matmul_t(&ct)?
    };

    let mut out = Matrix::identity(n);
    let mut flat = Vec::new();
    for i in 0..n {
        if norms[i] == 0.0 {
            flat.push(i);
        }
        for j in 0..i {
            let r = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                (cov.get(i, j) / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            out.set(i, j, r);
            out.set(j, i, r);
        }
    }
    if !flat.is_empty() {
        warn!(
            "subject {}: zero-variance ROI series {:?}; correlations set to 0",
            ts.subject_id(),
            flat
        );
    }
    Ok(out)
}

/// `a[i][j] = 1` iff `i != j` and `corr[i][j] >= threshold`.
pub fn build_adjacency(corr: &Matrix, threshold: f64) -> Result<Matrix> {
    if corr.rows() != corr.cols() {
        return Err(Error::shape(
            "build_adjacency",
            format!("correlation matrix must be square, got {:?}", corr.shape()),
        ));
    }
    corr.ensure_finite("build_adjacency input")?;
    let n = corr.rows();
    Ok(Matrix::from_fn(n, n, |i, j| {
        if i != j && corr.get(i, j) >= threshold {
            1.0
        } else {
            0.0
        }
    }))
}

pub fn build_graph(ts: &TimeSeriesTable, threshold: f64) -> Result<BrainGraph> {
    let x = pearson_matrix(ts)?;
    let a = build_adjacency(&x, threshold)?;
    Ok(BrainGraph { x, a, roi_names: None })
}

/// Shuffles indices with `seed` and cuts them by `ratios` (train, val, test).
/// Val and test get `floor(ratio * n)`; the remainder goes to train.
pub fn split_dataset(len: usize, ratios: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !(0.0..=1.0).contains(r)) || ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios {ratios:?} must be in [0,1] and sum to 1"
        )));
    }
    if len < 10 {
        return Err(Error::invalid(format!(
            "split_dataset needs at least 10 samples, got {len}"
        )));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);

    // small epsilon so that e.g. 0.1 * 10 is not floored to 0
    let n_val = (rv * len as f64 + 1e-9).floor() as usize;
    let n_test = (rs * len as f64 + 1e-9).floor() as usize;
    let n_train = len - n_val - n_test;

    let train = idx[..n_train].to_vec();
    let val = idx[n_train..n_train + n_val].to_vec();
    let test = idx[n_train + n_val..].to_vec();
    Ok(SplitIndices { train, val, test, seed })
}
