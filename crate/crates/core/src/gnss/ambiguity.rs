use nalgebra::{DMatrix, DVector};

use super::{Epoch, PppSolution};

/// Float ambiguities carried between epochs with their cofactor block.
///
/// The carried estimate enters the next epoch as prior information, which is
/// the sequential least-squares solution for ambiguities held constant while
/// position and clock are re-estimated every epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AmbiguityStore {
    ids: Vec<String>,
    values: DVector<f64>,
    cov: DMatrix<f64>,
}

/// Prior on a subset of the ambiguity columns of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AmbiguityPrior {
    /// Index into the epoch's observation list for each prior entry.
    pub columns: Vec<usize>,
    pub values: DVector<f64>,
    pub information: DMatrix<f64>,
}

impl AmbiguityStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn value(&self, sat: &str) -> Option<f64> {
        self.ids.iter().position(|s| s == sat).map(|k| self.values[k])
    }

    /// Drops satellites missing from `epoch` (loss of lock) and those in
    /// `flagged` (outliers), marginalizing them out of the carried block.
    pub fn begin_epoch(&mut self, epoch: &Epoch, flagged: &[String]) {
        let keep: Vec<usize> = self
            .ids
            .iter()
            .enumerate()
            .filter(|(_, id)| epoch.observations.iter().any(|o| &o.sat_id == *id) && !flagged.contains(id))
            .map(|(k, _)| k)
            .collect();
        self.select(&keep);
    }

    pub fn reset(&mut self, sat: &str) {
        let keep: Vec<usize> = (0..self.ids.len()).filter(|&k| self.ids[k] != sat).collect();
        self.select(&keep);
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }

    /// Replaces the carried state with the ambiguities solved at `solution`.
    pub fn update(&mut self, solution: &PppSolution) {
        let n = solution.used.len();
        if solution.point.ambiguities.is_none() || n == 0 {
            self.clear();
            return;
        }
        let amb = solution.point.ambiguities.as_ref().expect("checked above");
        self.ids = solution.used.clone();
        self.values = DVector::from_column_slice(amb);
        self.cov = solution.cofactor.view((4, 4), (n, n)).into_owned();
    }

    pub(crate) fn prior_for(&self, epoch: &Epoch) -> Option<AmbiguityPrior> {
        let mut columns = Vec::new();
        let mut rows = Vec::new();
        for (col, obs) in epoch.observations.iter().enumerate() {
            if let Some(k) = self.ids.iter().position(|s| *s == obs.sat_id) {
                columns.push(col);
                rows.push(k);
            }
        }
        if rows.is_empty() {
            return None;
        }
        let cov = DMatrix::from_fn(rows.len(), rows.len(), |i, j| self.cov[(rows[i], rows[j])]);
        let information = cov.cholesky()?.inverse();
        let values = DVector::from_iterator(rows.len(), rows.iter().map(|&k| self.values[k]));
        Some(AmbiguityPrior { columns, values, information })
    }

    fn select(&mut self, keep: &[usize]) {
        self.ids = keep.iter().map(|&k| self.ids[k].clone()).collect();
        self.values = DVector::from_iterator(keep.len(), keep.iter().map(|&k| self.values[k]));
        self.cov = DMatrix::from_fn(keep.len(), keep.len(), |i, j| self.cov[(keep[i], keep[j])]);
    }
}
