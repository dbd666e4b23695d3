//! Dense row-major matrices in double precision.
//!
//! Everything in this crate works on small structured matrices (widths up to a
//! few hundred), so a plain `Vec<f64>` with explicit indexing is all we need.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    // row major order
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec shape");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                // converted nets are mostly zeros; skipping them is a big win
                if *a != 0.0 {
                    acc += a * b;
                }
            }
            out[i] = acc;
        }
        out
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let mut out = Mat::zeros(self.rows, other.cols);
        let oc = other.cols;
        for i in 0..self.rows {
            let arow = &self.data[i * self.cols..(i + 1) * self.cols];
            let orow = &mut out.data[i * oc..(i + 1) * oc];
            for (k, &a) in arow.iter().enumerate() {
                // converted nets are mostly zeros; skipping whole rows of work
                // per zero entry is a big win, and the branch-free inner loop
                // still vectorizes
                if a != 0.0 {
                    let brow = &other.data[k * oc..(k + 1) * oc];
                    for (o, &b) in orow.iter_mut().zip(brow) {
                        *o += a * b;
                    }
                }
            }
        }
        out
    }

    /// self^T * other, without materializing the transpose.
    pub fn matmul_at(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "matmul_at shape");
        let mut out = Mat::zeros(self.cols, other.cols);
        let oc = other.cols;
        for k in 0..self.rows {
            let arow = &self.data[k * self.cols..(k + 1) * self.cols];
            let brow = &other.data[k * oc..(k + 1) * oc];
            for (i, &a) in arow.iter().enumerate() {
                if a != 0.0 {
                    let orow = &mut out.data[i * oc..(i + 1) * oc];
                    for (o, &b) in orow.iter_mut().zip(brow) {
                        *o += a * b;
                    }
                }
            }
        }
        out
    }

    /// self * other^T, without materializing the transpose.
    pub fn matmul_bt(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_bt shape");
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = &self.data[i * self.cols..(i + 1) * self.cols];
            for k in 0..other.rows {
                let brow = &other.data[k * self.cols..(k + 1) * self.cols];
                let mut acc = 0.0;
                for (&a, &b) in arow.iter().zip(brow) {
                    acc += a * b;
                }
                out.data[i * other.rows + k] = acc;
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    /// Copies `block` into self with its (0,0) entry at (r0, c0).
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Mat) {
        assert!(
            r0 + block.rows <= self.rows && c0 + block.cols <= self.cols,
            "block bounds"
        );
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }

    /// Pads with zeros to the given shape (must not shrink).
    pub fn pad_to(&self, rows: usize, cols: usize) -> Mat {
        assert!(rows >= self.rows && cols >= self.cols, "pad_to shrinks");
        let mut out = Mat::zeros(rows, cols);
        out.set_block(0, 0, self);
        out
    }

    pub fn block_diag(a: &Mat, b: &Mat) -> Mat {
        let mut out = Mat::zeros(a.rows + b.rows, a.cols + b.cols);
        out.set_block(0, 0, a);
        out.set_block(a.rows, a.cols, b);
        out
    }

    pub fn vstack(a: &Mat, b: &Mat) -> Mat {
        assert_eq!(a.cols, b.cols, "vstack cols");
        let mut out = Mat::zeros(a.rows + b.rows, a.cols);
        out.set_block(0, 0, a);
        out.set_block(a.rows, 0, b);
        out
    }

    pub fn hstack(a: &Mat, b: &Mat) -> Mat {
        assert_eq!(a.rows, b.rows, "hstack rows");
        let mut out = Mat::zeros(a.rows, a.cols + b.cols);
        out.set_block(0, 0, a);
        out.set_block(0, a.cols, b);
        out
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Interval matrix-vector product: image of a box under the linear map.
    pub fn interval_matvec(&self, x: &[(f64, f64)]) -> Vec<(f64, f64)> {
        assert_eq!(self.cols, x.len(), "interval matvec shape");
        let mut out = vec![(0.0, 0.0); self.rows];
        for i in 0..self.rows {
            let mut lo = 0.0;
            let mut hi = 0.0;
            for (a, &(xl, xh)) in self.row(i).iter().zip(x) {
                if *a >= 0.0 {
                    lo += a * xl;
                    hi += a * xh;
                } else {
                    lo += a * xh;
                    hi += a * xl;
                }
            }
            out[i] = (lo, hi);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_small() {
        let m = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(m.matvec(&[1.0, 1.0]), vec![3.0, 7.0]);
    }

    #[test]
    fn matmul_identity() {
        let m = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let i = Mat::identity(2);
        assert_eq!(m.matmul(&i), m);
        assert_eq!(i.matmul(&m), m);
    }

    #[test]
    fn transpose_products() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let b = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        // a^T b = [[6, 8], [8, 10]] by hand
        let atb = a.matmul_at(&b);
        assert_eq!(atb.data, vec![6.0, 8.0, 8.0, 10.0]);
        // a b^T row 0 = [1, 2, 3]
        let abt = a.matmul_bt(&b);
        assert_eq!(abt.row(0), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn interval_matvec_signs() {
        let m = Mat::from_rows(&[vec![1.0, -2.0]]);
        let out = m.interval_matvec(&[(0.0, 1.0), (0.0, 1.0)]);
        assert_eq!(out, vec![(-2.0, 1.0)]);
    }

    #[test]
    fn block_diag_shapes() {
        let a = Mat::identity(2);
        let b = Mat::zeros(1, 3);
        let d = Mat::block_diag(&a, &b);
        assert_eq!((d.rows, d.cols), (3, 5));
        assert_eq!(d[(0, 0)], 1.0);
        assert_eq!(d[(1, 1)], 1.0);
    }
}
