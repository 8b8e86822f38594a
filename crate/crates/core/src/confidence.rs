//! The NeuralUCB confidence matrix `Z` and its maintained inverse.
//!
//! `Z` starts at the identity and only ever receives symmetric rank-one
//! additions `u uᵀ`, so its inverse is kept current with the
//! Sherman–Morrison identity in `O(p²)` per update. A dense Cholesky
//! inversion is used as a fallback when the update is ill-conditioned.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MIN_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateStatus {
    RankOne,
    /// The rank-one denominator was degenerate; the inverse was recomputed
    /// directly.
    DirectFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMatrix {
    dim: usize,
    z: Vec<f64>,
    z_inv: Vec<f64>,
}

impl ConfidenceMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut z = vec![0.0; dim * dim];
        for i in 0..dim {
            z[i * dim + i] = 1.0;
        }
        Self {
            dim,
            z_inv: z.clone(),
            z,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major `Z`.
    pub fn matrix(&self) -> &[f64] {
        &self.z
    }

    /// Row-major maintained `Z⁻¹`.
    pub fn inverse(&self) -> &[f64] {
        &self.z_inv
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }

    fn inverse_times(&self, v: &[f64]) -> Vec<f64> {
        self.z_inv
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `vᵀ Z⁻¹ v`.
    pub fn quadratic_form(&self, v: &[f64]) -> Result<f64> {
        self.check_len(v)?;
        let mut total = 0.0;
        for (row, vi) in self.z_inv.chunks_exact(self.dim).zip(v) {
            if *vi == 0.0 {
                continue;
            }
            let dot: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            total += vi * dot;
        }
        Ok(total)
    }

    /// `Z ← Z + u uᵀ`, updating `Z⁻¹` to match.
    pub fn rank_one_update(&mut self, u: &[f64]) -> Result<UpdateStatus> {
        self.check_len(u)?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rank-one update vector"));
        }
        let n = self.dim;
        for (i, ui) in u.iter().enumerate() {
            if *ui == 0.0 {
                continue;
            }
            let row = &mut self.z[i * n..(i + 1) * n];
            for (z, uj) in row.iter_mut().zip(u) {
                *z += ui * uj;
            }
        }

        let v = self.inverse_times(u);
        let denom = 1.0 + u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        if !(denom > MIN_DENOMINATOR) {
            log::warn!("rank-one inverse update denominator {denom:e}; inverting Z directly");
            self.z_inv = invert_spd(&self.z, n)?;
            return Ok(UpdateStatus::DirectFallback);
        }
        for (i, vi) in v.iter().enumerate() {
            if *vi == 0.0 {
                continue;
            }
            let s = vi / denom;
            let row = &mut self.z_inv[i * n..(i + 1) * n];
            for (zi, vj) in row.iter_mut().zip(&v) {
                *zi -= s * vj;
            }
        }
        Ok(UpdateStatus::RankOne)
    }

    /// Max-abs entry of `Z⁻¹ Z − I`.
    pub fn inverse_residual(&self) -> f64 {
        let n = self.dim;
        let a = DMatrix::from_row_slice(n, n, &self.z_inv);
        let b = DMatrix::from_row_slice(n, n, &self.z);
        let prod = a * b;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod[(i, j)] - target).abs());
            }
        }
        worst
    }
}

/// Inverse of a symmetric positive definite row-major matrix.
pub fn invert_spd(m: &[f64], n: usize) -> Result<Vec<f64>> {
    let mat = DMatrix::from_row_slice(n, n, m);
    let inv = mat.cholesky().ok_or(Error::Singular)?.inverse();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(inv[(i, j)]);
        }
    }
    Ok(out)
}
