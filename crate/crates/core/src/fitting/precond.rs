//! Fixed block-linear changes of variables `x = U^-1 z` that make the fitting
//! problem better conditioned for the first-order minimizer.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::energy::EnergyModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    /// Plain gradient coordinates.
    None,
    /// Inverse square root of the Gauss-Newton diagonal.
    Diagonal,
    /// Inverse Cholesky factor of each frame's Gauss-Newton block and of the shape block.
    #[default]
    Block,
}

/// Per-block upper-triangular maps; `x_block = U^-1 z_block` where `U^T U = H_block`.
pub(crate) struct VariableMap {
    blocks: Vec<(usize, DMatrix<f64>)>,
}

fn regularized(mut h: DMatrix<f64>) -> DMatrix<f64> {
    let n = h.nrows();
    let mean = (0..n).map(|i| h[(i, i)]).sum::<f64>() / n as f64;
    let floor = (mean * 1e-6).max(1e-12);
    for i in 0..n {
        h[(i, i)] = h[(i, i)].max(0.0) + floor;
    }
    h
}

fn upper_factor(h: DMatrix<f64>) -> DMatrix<f64> {
    let h = regularized(h);
    let n = h.nrows();
    match h.clone().cholesky() {
        Some(c) => c.l().transpose(),
        None => DMatrix::from_diagonal(&DVector::from_iterator(n, (0..n).map(|i| h[(i, i)].sqrt()))),
    }
}

impl VariableMap {
    pub fn build(model: &EnergyModel, x: &[f64], kind: Preconditioner) -> Self {
        let n = x.len();
        match kind {
            Preconditioner::None => Self { blocks: (0..n).map(|i| (i, DMatrix::identity(1, 1))).collect() },
            Preconditioner::Diagonal | Preconditioner::Block => {
                let (frames, shape) = model.gauss_newton_blocks(x);
                let mut blocks = Vec::with_capacity(frames.len() + 1);
                let mut offset = 0;
                for h in frames.into_iter().chain(std::iter::once(shape)) {
                    let size = h.nrows();
                    let u = if kind == Preconditioner::Block {
                        upper_factor(h)
                    } else {
                        let h = regularized(h);
                        DMatrix::from_diagonal(&DVector::from_iterator(size, (0..size).map(|i| h[(i, i)].sqrt())))
                    };
                    blocks.push((offset, u));
                    offset += size;
                }
                Self { blocks }
            }
        }
    }

    /// `z = U x`.
    pub fn to_z(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; x.len()];
        for (off, u) in &self.blocks {
            let k = u.nrows();
            let xb = DVector::from_column_slice(&x[*off..off + k]);
            z[*off..off + k].copy_from_slice((u * xb).as_slice());
        }
        z
    }

    /// `x = U^-1 z`.
    pub fn to_x(&self, z: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; z.len()];
        for (off, u) in &self.blocks {
            let k = u.nrows();
            let zb = DVector::from_column_slice(&z[*off..off + k]);
            let xb = u.solve_upper_triangular(&zb).expect("positive diagonal");
            x[*off..off + k].copy_from_slice(xb.as_slice());
        }
        x
    }

    /// Gradient in `z`: `U^-T g`.
    pub fn grad_z(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.len()];
        for (off, u) in &self.blocks {
            let k = u.nrows();
            let gb = DVector::from_column_slice(&g[*off..off + k]);
            let zb = u.tr_solve_upper_triangular(&gb).expect("positive diagonal");
            out[*off..off + k].copy_from_slice(zb.as_slice());
        }
        out
    }
}
