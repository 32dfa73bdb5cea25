//! Dense complex matrices and LU factorisation with partial pivoting.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Row-major dense complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "{} entries do not fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [Complex64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows_mut(&mut self) -> std::slice::ChunksExactMut<'_, Complex64> {
        self.data.chunks_exact_mut(self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Block width of the factorisation.
const BLOCK: usize = 48;

/// LU factors `P A = L U` stored in place (unit lower triangle implicit).
#[derive(Clone, Debug)]
pub struct LuFactors {
    lu: DenseMatrix,
    /// `perm[i]` is the original row now at position `i`.
    perm: Vec<usize>,
}

impl LuFactors {
    /// Blocked right-looking factorisation with partial (row) pivoting.
    pub fn factor(mut a: DenseMatrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::invalid("LU needs a square matrix"));
        }
        let n = a.rows;
        let scale = a.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let tiny = scale * n as f64 * f64::EPSILON;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut k0 = 0;
        while k0 < n {
            let nb = BLOCK.min(n - k0);
            let k1 = k0 + nb;
            // panel factorisation on columns k0..k1, full row swaps
            for k in k0..k1 {
                let (mut p, mut best) = (k, -1.0);
                for i in k..n {
                    let v = a.data[i * n + k].norm();
                    if v > best {
                        best = v;
                        p = i;
                    }
                }
                if !(best > tiny) || !best.is_finite() {
                    return Err(Error::SingularMatrix { pivot: k });
                }
                if p != k {
                    swap_rows(&mut a.data, n, p, k);
                    perm.swap(p, k);
                }
                let inv = 1.0 / a.data[k * n + k];
                let (head, tail) = a.data.split_at_mut((k + 1) * n);
                let pivot_row = &head[k * n + k + 1..k * n + k1];
                for row in tail.chunks_exact_mut(n) {
                    let l = row[k] * inv;
                    row[k] = l;
                    if l.re != 0.0 || l.im != 0.0 {
                        axpy_neg(l, pivot_row, &mut row[k + 1..k1]);
                    }
                }
            }
            if k1 < n {
                // U12 = L11^{-1} A12
                for k in k0..k1 {
                    let (head, tail) = a.data.split_at_mut((k + 1) * n);
                    let src = &head[k * n + k1..k * n + n];
                    for row in tail.chunks_exact_mut(n).take(k1 - k - 1) {
                        let l = row[k];
                        axpy_neg(l, src, &mut row[k1..n]);
                    }
                }
                // A22 -= L21 U12
                let (head, tail) = a.data.split_at_mut(k1 * n);
                let u12: Vec<&[Complex64]> = (k0..k1).map(|k| &head[k * n + k1..k * n + n]).collect();
                for row in tail.chunks_exact_mut(n) {
                    let (left, right) = row.split_at_mut(k1);
                    let l = &left[k0..k1];
                    for (lk, uk) in l.iter().zip(&u12) {
                        if lk.re != 0.0 || lk.im != 0.0 {
                            axpy_neg(*lk, uk, right);
                        }
                    }
                }
            }
            k0 = k1;
        }
        Ok(LuFactors { lu: a, perm })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    /// Solves `A x = b` with the stored factors.
    pub fn solve(&self, b: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::invalid(format!(
                "right-hand side has length {}, expected {n}",
                b.len()
            )));
        }
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            let s: Complex64 = row[..i].iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s: Complex64 = row[i + 1..].iter().zip(&x[i + 1..]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / row[i];
        }
        Ok(x)
    }
}

fn swap_rows(data: &mut [Complex64], n: usize, a: usize, b: usize) {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let (head, tail) = data.split_at_mut(hi * n);
    head[lo * n..lo * n + n].swap_with_slice(&mut tail[..n]);
}

/// `y -= a x`, written on split real/imaginary parts so it vectorises.
#[inline]
fn axpy_neg(a: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    let (ar, ai) = (a.re, a.im);
    for (yi, xi) in y.iter_mut().zip(x) {
        let (xr, xim) = (xi.re, xi.im);
        yi.re -= ar * xr - ai * xim;
        yi.im -= ar * xim + ai * xr;
    }
}

/// `max_i |(A x - b)_i| / max_i |b_i|`.
pub fn relative_residual(a: &DenseMatrix, x: &[Complex64], b: &[Complex64]) -> f64 {
    let ax = a.mul_vec(x);
    let num = ax.iter().zip(b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
    let den = b.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        DenseMatrix::from_rows(n, n, data).unwrap()
    }

    #[test]
    fn solves_random_systems() {
        for &n in &[1, 2, 7, 47, 48, 49, 130] {
            let a = random_matrix(n, n as u64);
            let x: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, 1.0 - i as f64)).collect();
            let b = a.mul_vec(&x);
            let lu = LuFactors::factor(a.clone()).unwrap();
            let y = lu.solve(&b).unwrap();
            assert!(relative_residual(&a, &y, &b) < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn needs_pivoting() {
        let a = DenseMatrix::from_rows(
            2,
            2,
            vec![
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(2.0, 0.0),
                Complex64::new(3.0, 0.0),
            ],
        )
        .unwrap();
        let lu = LuFactors::factor(a).unwrap();
        let x = lu.solve(&[Complex64::new(1.0, 0.0), Complex64::new(8.0, 0.0)]).unwrap();
        assert!((x[0] - Complex64::new(2.5, 0.0)).norm() < 1e-15);
        assert!((x[1] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn singular_matrix_reports_pivot() {
        let mut a = random_matrix(60, 3);
        // duplicate row 5 into row 55 to lose rank
        let r5 = a.row(5).to_vec();
        a.row_mut(55).copy_from_slice(&r5);
        match LuFactors::factor(a) {
            Err(Error::SingularMatrix { pivot }) => assert!(pivot > 0),
            other => panic!("expected singular matrix, got {other:?}"),
        }
    }
}
