//! Padded mini-batches and input standardization.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

/// A batch of variable-length sequences, left-padded to a common length.
///
/// Storage is time-major: row `t * batch + k` of `x` holds sample `k` at step
/// `t`. Sample `k` occupies the last `lengths[k]` steps; earlier steps are zero
/// and masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub x: Array2<f64>,
    pub lengths: Vec<usize>,
    pub targets: Vec<f64>,
    pub t_max: usize,
}

impl PaddedBatch {
    pub fn new(seqs: &[ArrayView2<'_, f64>], targets: &[f64]) -> Self {
        assert_eq!(seqs.len(), targets.len(), "one target per sequence");
        assert!(!seqs.is_empty(), "empty batch");
        let f = seqs[0].ncols();
        assert!(seqs.iter().all(|s| s.ncols() == f && s.nrows() > 0), "ragged feature width or empty sequence");
        let b = seqs.len();
        let t_max = seqs.iter().map(|s| s.nrows()).max().unwrap_or(0);
        Self::with_t_max(seqs, targets, t_max, b, f)
    }

    /// Like [`PaddedBatch::new`] but pads to at least `t_max` steps.
    pub fn padded_to(seqs: &[ArrayView2<'_, f64>], targets: &[f64], t_max: usize) -> Self {
        let longest = seqs.iter().map(|s| s.nrows()).max().unwrap_or(0);
        let b = seqs.len();
        let f = seqs[0].ncols();
        Self::with_t_max(seqs, targets, t_max.max(longest), b, f)
    }

    fn with_t_max(seqs: &[ArrayView2<'_, f64>], targets: &[f64], t_max: usize, b: usize, f: usize) -> Self {
        let mut x = Array2::zeros((t_max * b, f));
        for (k, s) in seqs.iter().enumerate() {
            let offset = t_max - s.nrows();
            for (t, row) in s.rows().into_iter().enumerate() {
                x.row_mut((offset + t) * b + k).assign(&row);
            }
        }
        Self {
            x,
            lengths: seqs.iter().map(|s| s.nrows()).collect(),
            targets: targets.to_vec(),
            t_max,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn features(&self) -> usize {
        self.x.ncols()
    }

    /// True when step `t` of sample `k` holds data.
    #[inline]
    pub fn is_valid(&self, t: usize, k: usize) -> bool {
        t + self.lengths[k] >= self.t_max
    }

    /// Flat time-major validity mask, `t_max * batch` entries.
    pub fn valid_mask(&self) -> Vec<bool> {
        let b = self.batch_size();
        (0..self.t_max * b).map(|i| self.is_valid(i / b, i % b)).collect()
    }

    /// Mask in sample-major form: `mask[k][t]` is 1 for data steps, 0 for padding.
    pub fn mask(&self) -> Array2<u8> {
        Array2::from_shape_fn((self.batch_size(), self.t_max), |(k, t)| u8::from(self.is_valid(t, k)))
    }
}

/// Per-channel z-scoring with statistics from the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// `1 / std`, or 0 for channels without variance.
    pub inv_std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(seqs: impl IntoIterator<Item = ArrayView2<'a, f64>> + Clone, features: usize) -> Self {
        let mut sum = vec![0.0; features];
        let mut n = 0usize;
        for s in seqs.clone() {
            for row in s.rows() {
                for (acc, v) in sum.iter_mut().zip(row) {
                    *acc += v;
                }
                n += 1;
            }
        }
        let nf = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let mut ss = vec![0.0; features];
        for s in seqs {
            for row in s.rows() {
                for ((acc, v), m) in ss.iter_mut().zip(row).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
        }
        let inv_std = ss
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let std = (s / nf).sqrt();
                if std <= 1e-12 * m.abs().max(1.0) {
                    0.0
                } else {
                    1.0 / std
                }
            })
            .collect();
        Self { mean, inv_std }
    }

    pub fn identity(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            inv_std: vec![1.0; features],
        }
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.inv_std) {
                *v = (*v - m) * s;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn left_padding_layout() {
        let a = array![[1.0, 1.5], [2.0, 2.5], [3.0, 3.5]];
        let b = array![[7.0, 7.5]];
        let batch = PaddedBatch::new(&[a.view(), b.view()], &[1.0, 0.0]);
        assert_eq!(batch.t_max, 3);
        assert_eq!(batch.mask(), array![[1u8, 1, 1], [0, 0, 1]]);
        assert_eq!(batch.x.row(2 * 2 + 1).to_vec(), vec![7.0, 7.5]);
        assert_eq!(batch.x.row(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(batch.x.row(2).to_vec(), vec![2.0, 2.5]);
        for (k, len) in batch.lengths.iter().enumerate() {
            let ones = batch.mask().row(k).iter().filter(|&&m| m == 1).count();
            assert_eq!(ones, *len);
        }
    }

    #[test]
    fn standardizer_zero_variance_maps_to_zero() {
        let a = array![[1.0, 5.0], [3.0, 5.0]];
        let b = array![[5.0, 5.0]];
        let s = Standardizer::fit([a.view(), b.view()], 2);
        assert_eq!(s.mean, vec![3.0, 5.0]);
        assert_eq!(s.inv_std[1], 0.0);
        let z = s.apply(a.view());
        assert_eq!(z.column(1).to_vec(), vec![0.0, 0.0]);
        let std = (8.0f64 / 3.0).sqrt();
        assert!((z[[0, 0]] + 2.0 / std).abs() < 1e-15);
    }
}
