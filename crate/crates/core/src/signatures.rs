//! Tuple signatures and the max-cosine tuple similarity.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Entries at or below this are treated as unused once training ends.
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 1e-3;

/// `S x m` nonnegative, unit-norm signature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureWeights {
    rows: Array2<f64>,
}

impl SignatureWeights {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        for (s, row) in rows.rows().into_iter().enumerate() {
            if row.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "signature {s} has a negative or non-finite weight"
                )));
            }
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidArgument(format!(
                    "signature {s} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn from_rows(rows: &[Vec<f64>], m: usize) -> Result<Self> {
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument(format!("every signature row needs {m} weights")));
        }
        Self::new(Array2::from_shape_vec((rows.len(), m), flat).expect("checked shape"))
    }

    pub fn count(&self) -> usize {
        self.rows.nrows()
    }

    pub fn attribute_count(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, s: usize) -> ArrayView1<'_, f64> {
        self.rows.row(s)
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.rows
    }

    /// Attributes with a positive weight in signature `s`.
    pub fn support(&self, s: usize) -> Vec<usize> {
        self.rows
            .row(s)
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    /// Whether no attribute is used by two signatures.
    pub fn supports_disjoint(&self) -> bool {
        let mut used = vec![false; self.attribute_count()];
        for s in 0..self.count() {
            for j in self.support(s) {
                if used[j] {
                    return false;
                }
                used[j] = true;
            }
        }
        true
    }
}

/// Zeroes entries at or below `threshold` and renormalizes. Returns `None`
/// if nothing survives.
pub fn prune_row(row: &[f64], threshold: f64) -> Option<Vec<f64>> {
    let pruned: Vec<f64> = row.iter().map(|&w| if w > threshold { w } else { 0.0 }).collect();
    let norm = pruned.iter().map(|w| w * w).sum::<f64>().sqrt();
    (norm > 0.0).then(|| pruned.iter().map(|w| w / norm).collect())
}

/// Weighted sum of the present attribute embeddings; `None` when every
/// present attribute has zero weight.
pub fn compute_signature(weights: ArrayView1<'_, f64>, attributes: &[Option<Array1<f64>>]) -> Option<Array1<f64>> {
    let mut out: Option<Array1<f64>> = None;
    for (&w, g) in weights.iter().zip(attributes) {
        let Some(g) = g else { continue };
        if w == 0.0 {
            continue;
        }
        match &mut out {
            Some(acc) => acc.scaled_add(w, g),
            None => out = Some(g * w),
        }
    }
    out
}

/// Cosine similarity; zero when a side is missing or has zero norm.
pub fn cosine(a: Option<&Array1<f64>>, b: Option<&Array1<f64>>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => {
            let (na, nb) = (a.dot(a), b.dot(b));
            if na == 0.0 || nb == 0.0 {
                return 0.0;
            }
            (a.dot(b) / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
        }
        _ => 0.0,
    }
}

pub fn cosine_slices(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Max over signatures of the per-signature cosine.
pub fn max_cosine(x: &[Option<Array1<f64>>], y: &[Option<Array1<f64>>]) -> f64 {
    let best = x
        .iter()
        .zip(y)
        .map(|(a, b)| cosine(a.as_ref(), b.as_ref()))
        .fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        0.0
    } else {
        best
    }
}
