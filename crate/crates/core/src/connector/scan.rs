//! Scan orders over a `rows × cols` token lattice.
//!
//! An order maps sequence positions to lattice cells: `forward[pos]` is the
//! row-major index of the cell visited at step `pos`, and `inverse` undoes it.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanOrder {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl ScanOrder {
    /// Fails unless `forward` is a permutation of `0..forward.len()`.
    pub fn from_forward(forward: Vec<usize>) -> Result<Self> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (pos, &cell) in forward.iter().enumerate() {
            if cell >= n || inverse[cell] != usize::MAX {
                return Err(Error::domain(format!(
                    "scan order is not a permutation at position {pos}"
                )));
            }
            inverse[cell] = pos;
        }
        Ok(ScanOrder { forward, inverse })
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn reversed(&self) -> ScanOrder {
        let mut forward = self.forward.clone();
        forward.reverse();
        ScanOrder::from_forward(forward).expect("reversal of a permutation")
    }
}

fn row_major(rows: usize, cols: usize) -> ScanOrder {
    ScanOrder::from_forward((0..rows * cols).collect()).expect("identity")
}

fn column_major(rows: usize, cols: usize) -> ScanOrder {
    let forward = (0..cols).flat_map(|c| (0..rows).map(move |r| r * cols + c)).collect();
    ScanOrder::from_forward(forward).expect("transpose order")
}

/// Row-major forward and its exact reversal.
pub fn scan_orders_bsm(rows: usize, cols: usize) -> Vec<ScanOrder> {
    let fwd = row_major(rows, cols);
    let bwd = fwd.reversed();
    vec![fwd, bwd]
}

/// Row-major forward/backward, then column-major forward/backward.
pub fn scan_orders_csm(rows: usize, cols: usize) -> Vec<ScanOrder> {
    let cm = column_major(rows, cols);
    let cm_rev = cm.reversed();
    let mut orders = scan_orders_bsm(rows, cols);
    orders.extend([cm, cm_rev]);
    orders
}

/// Lattice-ordered tokens to scan-ordered sequence.
pub fn apply_scan<T: Element>(tokens: &Tensor<T>, order: &ScanOrder) -> Result<Tensor<T>> {
    if tokens.rows() != order.len() || tokens.rank() != 2 {
        return Err(Error::shape("apply_scan", tokens.shape(), &[order.len()]));
    }
    tokens.gather_rows(&order.forward)
}

/// Scan-ordered sequence back to lattice order.
pub fn inverse_scan<T: Element>(seq: &Tensor<T>, order: &ScanOrder) -> Result<Tensor<T>> {
    if seq.rows() != order.len() || seq.rank() != 2 {
        return Err(Error::shape("inverse_scan", seq.shape(), &[order.len()]));
    }
    seq.gather_rows(&order.inverse)
}
