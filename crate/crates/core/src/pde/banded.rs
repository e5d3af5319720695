//! Cyclic banded matrices (periodic stencils) and their direct solver.
//!
//! A cyclic banded matrix is split into its plain banded part, factorized by
//! banded LU with partial pivoting, and the wrap-around corner blocks, which
//! are folded back in with the Sherman-Morrison-Woodbury identity.

use crate::error::{Error, Result};

/// `n x n` matrix with entries only at `(j, (j + o) mod n)` for `|o| <= bw`.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicBanded {
    n: usize,
    bw: usize,
    /// Row-major `n x (2 bw + 1)`; column `o + bw` holds offset `o`.
    data: Vec<f64>,
}

impl CyclicBanded {
    pub fn zeros(n: usize, bw: usize) -> Self {
        assert!(n > 2 * bw, "grid of {n} points too small for half-bandwidth {bw}");
        CyclicBanded {
            n,
            bw,
            data: vec![0.0; n * (2 * bw + 1)],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), 0);
        m.data.copy_from_slice(d);
        m
    }

    /// Circulant matrix from a centered stencil of length `2 bw + 1`.
    pub fn stencil(n: usize, coeffs: &[f64]) -> Self {
        assert!(coeffs.len() % 2 == 1);
        let bw = coeffs.len() / 2;
        let mut m = Self::zeros(n, bw);
        for row in m.data.chunks_exact_mut(coeffs.len()) {
            row.copy_from_slice(coeffs);
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    fn width(&self) -> usize {
        2 * self.bw + 1
    }

    /// Entry at row `j`, offset `o` (column `(j + o) mod n`).
    pub fn get(&self, j: usize, o: isize) -> f64 {
        if o.unsigned_abs() > self.bw {
            return 0.0;
        }
        self.data[j * self.width() + (o + self.bw as isize) as usize]
    }

    fn at_mut(&mut self, j: usize, o: isize) -> &mut f64 {
        let w = self.width();
        &mut self.data[j * w + (o + self.bw as isize) as usize]
    }

    fn widen(&self, bw: usize) -> Self {
        if bw == self.bw {
            return self.clone();
        }
        let mut m = Self::zeros(self.n, bw);
        let b = self.bw as isize;
        for j in 0..self.n {
            for o in -b..=b {
                *m.at_mut(j, o) = self.get(j, o);
            }
        }
        m
    }

    pub fn scale(mut self, a: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= a);
        self
    }

    /// `self + a * other`.
    pub fn add_scaled(&self, a: f64, other: &CyclicBanded) -> Self {
        assert_eq!(self.n, other.n);
        let bw = self.bw.max(other.bw);
        let mut m = self.widen(bw);
        let ob = other.bw as isize;
        for j in 0..self.n {
            for o in -ob..=ob {
                *m.at_mut(j, o) += a * other.get(j, o);
            }
        }
        m
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &CyclicBanded) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut m = Self::zeros(n, self.bw + other.bw);
        let (a, b) = (self.bw as isize, other.bw as isize);
        for j in 0..n {
            for o1 in -a..=a {
                let v1 = self.get(j, o1);
                if v1 == 0.0 {
                    continue;
                }
                let k = (j as isize + o1).rem_euclid(n as isize) as usize;
                for o2 in -b..=b {
                    *m.at_mut(j, o1 + o2) += v1 * other.get(k, o2);
                }
            }
        }
        m
    }

    /// `self * diag(d)`.
    pub fn mul_diag(&self, d: &[f64]) -> Self {
        let n = self.n;
        let mut m = self.clone();
        let b = self.bw as isize;
        for j in 0..n {
            for o in -b..=b {
                let k = (j as isize + o).rem_euclid(n as isize) as usize;
                *m.at_mut(j, o) *= d[k];
            }
        }
        m
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n as isize;
        let b = self.bw as isize;
        (0..self.n)
            .map(|j| {
                (-b..=b)
                    .map(|o| self.get(j, o) * x[(j as isize + o).rem_euclid(n) as usize])
                    .sum()
            })
            .collect()
    }

    /// Dense copy, for tests and small systems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n;
        let mut d = vec![vec![0.0; n]; n];
        let b = self.bw as isize;
        for (j, row) in d.iter_mut().enumerate() {
            for o in -b..=b {
                let k = (j as isize + o).rem_euclid(n as isize) as usize;
                row[k] += self.get(j, o);
            }
        }
        d
    }

    pub fn factorize(&self) -> Result<CyclicLu> {
        CyclicLu::new(self)
    }
}

/// Banded LU with partial pivoting in compact storage.
#[derive(Debug, Clone)]
struct BandLu {
    n: usize,
    m1: usize,
    m2: usize,
    /// `n x (m1 + m2 + 1)` upper factor.
    a: Vec<f64>,
    /// `n x m1` multipliers.
    al: Vec<f64>,
    indx: Vec<usize>,
}

impl BandLu {
    /// `band[i][j]` holds `A[i][i - m1 + j]`.
    fn new(n: usize, m1: usize, m2: usize, mut a: Vec<f64>) -> Result<Self> {
        let mm = m1 + m2 + 1;
        let mut al = vec![0.0; n * m1.max(1)];
        let mut indx = vec![0; n];
        // shift the top rows left so every row starts at its first nonzero
        let mut l = m1;
        for i in 0..m1.min(n) {
            for j in (m1 - i)..mm {
                a[i * mm + j - l] = a[i * mm + j];
            }
            l -= 1;
            for j in (mm - l - 1)..mm {
                a[i * mm + j] = 0.0;
            }
        }
        let mut l = m1;
        let scale = a.iter().fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
        for k in 0..n {
            let mut dum = a[k * mm];
            let mut piv = k;
            if l < n {
                l += 1;
            }
            for j in (k + 1)..l {
                if a[j * mm].abs() > dum.abs() {
                    dum = a[j * mm];
                    piv = j;
                }
            }
            indx[k] = piv;
            if dum.abs() <= 1e-13 * scale {
                return Err(Error::Degenerate("singular banded matrix".into()));
            }
            if piv != k {
                for j in 0..mm {
                    a.swap(k * mm + j, piv * mm + j);
                }
            }
            for i in (k + 1)..l {
                let f = a[i * mm] / a[k * mm];
                al[k * m1 + i - k - 1] = f;
                for j in 1..mm {
                    a[i * mm + j - 1] = a[i * mm + j] - f * a[k * mm + j];
                }
                a[i * mm + mm - 1] = 0.0;
            }
        }
        Ok(BandLu {
            n,
            m1,
            m2,
            a,
            al,
            indx,
        })
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let (n, m1) = (self.n, self.m1);
        let mm = m1 + self.m2 + 1;
        let mut l = m1;
        for k in 0..n {
            let j = self.indx[k];
            if j != k {
                b.swap(k, j);
            }
            if l < n {
                l += 1;
            }
            for j in (k + 1)..l {
                b[j] -= self.al[k * m1 + j - k - 1] * b[k];
            }
        }
        let mut l = 1;
        for i in (0..n).rev() {
            let mut dum = b[i];
            for k in 1..l {
                dum -= self.a[i * mm + k] * b[k + i];
            }
            b[i] = dum / self.a[i * mm];
            if l < mm {
                l += 1;
            }
        }
    }
}

/// Factorization of a [`CyclicBanded`] matrix.
#[derive(Debug, Clone)]
pub struct CyclicLu {
    n: usize,
    band: BandLu,
    /// Rows of the corner correction `V^T`, as `(row index in U, entries)`.
    corners: Vec<(usize, Vec<(usize, f64)>)>,
    /// `A^{-1} U`, one column per corner row.
    a_inv_u: Vec<Vec<f64>>,
    /// LU of the capacitance matrix `I + V^T A^{-1} U`.
    cap: Vec<Vec<f64>>,
    cap_piv: Vec<usize>,
}

impl CyclicLu {
    fn new(m: &CyclicBanded) -> Result<Self> {
        let n = m.n;
        let bw = m.bw;
        let w = m.width();
        let mut band = vec![0.0; n * w];
        let mut corners: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
        for j in 0..n {
            let mut wrap = Vec::new();
            for o in -(bw as isize)..=(bw as isize) {
                let v = m.get(j, o);
                let col = j as isize + o;
                if (0..n as isize).contains(&col) {
                    band[j * w + (o + bw as isize) as usize] = v;
                } else if v != 0.0 {
                    wrap.push((col.rem_euclid(n as isize) as usize, v));
                }
            }
            if !wrap.is_empty() {
                corners.push((j, wrap));
            }
        }
        let band = BandLu::new(n, bw, bw, band)?;
        let k = corners.len();
        let mut a_inv_u = Vec::with_capacity(k);
        for (row, _) in &corners {
            let mut e = vec![0.0; n];
            e[*row] = 1.0;
            band.solve_in_place(&mut e);
            a_inv_u.push(e);
        }
        let mut cap = vec![vec![0.0; k]; k];
        for (r, (_, entries)) in corners.iter().enumerate() {
            for (c, col) in a_inv_u.iter().enumerate() {
                let dot: f64 = entries.iter().map(|&(idx, v)| v * col[idx]).sum();
                cap[r][c] = dot + if r == c { 1.0 } else { 0.0 };
            }
        }
        let cap_piv = dense_lu(&mut cap)?;
        Ok(CyclicLu {
            n,
            band,
            corners,
            a_inv_u,
            cap,
            cap_piv,
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut y = rhs.to_vec();
        self.band.solve_in_place(&mut y);
        if self.corners.is_empty() {
            return y;
        }
        let mut z: Vec<f64> = self
            .corners
            .iter()
            .map(|(_, entries)| entries.iter().map(|&(idx, v)| v * y[idx]).sum())
            .collect();
        dense_solve(&self.cap, &self.cap_piv, &mut z);
        for (col, zc) in self.a_inv_u.iter().zip(&z) {
            for i in 0..self.n {
                y[i] -= col[i] * zc;
            }
        }
        y
    }
}

/// In-place LU with partial pivoting; returns the pivot rows.
pub(crate) fn dense_lu(a: &mut [Vec<f64>]) -> Result<Vec<usize>> {
    let n = a.len();
    let mut piv = vec![0; n];
    let scale = a
        .iter()
        .flatten()
        .fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .expect("nonempty");
        if a[p][k].abs() <= 1e-13 * scale {
            return Err(Error::Degenerate("singular matrix".into()));
        }
        piv[k] = p;
        a.swap(k, p);
        for i in (k + 1)..n {
            let f = a[i][k] / a[k][k];
            a[i][k] = f;
            for j in (k + 1)..n {
                a[i][j] -= f * a[k][j];
            }
        }
    }
    Ok(piv)
}

pub(crate) fn dense_solve(lu: &[Vec<f64>], piv: &[usize], b: &mut [f64]) {
    let n = lu.len();
    for k in 0..n {
        b.swap(k, piv[k]);
    }
    for i in 0..n {
        for j in 0..i {
            b[i] -= lu[i][j] * b[j];
        }
    }
    for i in (0..n).rev() {
        for j in (i + 1)..n {
            b[i] -= lu[i][j] * b[j];
        }
        b[i] /= lu[i][i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_cyclic(n: usize, bw: usize, seed: u64) -> CyclicBanded {
        let mut rng = crate::rng::seeded(seed);
        let mut m = CyclicBanded::zeros(n, bw);
        for v in &mut m.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        m
    }

    fn dense_reference(m: &CyclicBanded, b: &[f64]) -> Vec<f64> {
        let mut d = m.to_dense();
        let piv = dense_lu(&mut d).unwrap();
        let mut x = b.to_vec();
        dense_solve(&d, &piv, &mut x);
        x
    }

    #[test]
    fn solve_matches_dense_lu() {
        for (bw, seed) in [(0, 1), (1, 2), (2, 3), (3, 4)] {
            let n = 23;
            // random band without diagonal dominance exercises the pivoting
            let m = random_cyclic(n, bw, seed);
            let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let x = m.factorize().unwrap().solve(&b);
            let reference = dense_reference(&m, &b);
            for (a, r) in x.iter().zip(&reference) {
                assert!((a - r).abs() < 1e-9 * (1.0 + r.abs()), "bw {bw}: {a} vs {r}");
            }
            let back = m.matvec(&x);
            for (a, r) in back.iter().zip(&b) {
                assert!((a - r).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn algebra_matches_dense() {
        let n = 9;
        let a = random_cyclic(n, 1, 10);
        let b = random_cyclic(n, 2, 11);
        let d: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let ad = a.to_dense();
        let bd = b.to_dense();
        let prod = a.matmul(&b).to_dense();
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..n).map(|k| ad[i][k] * bd[k][j]).sum();
                assert!((prod[i][j] - r).abs() < 1e-12);
            }
        }
        let sum = a.add_scaled(-2.0, &b).to_dense();
        let scaled = a.mul_diag(&d).to_dense();
        for i in 0..n {
            for j in 0..n {
                assert!((sum[i][j] - (ad[i][j] - 2.0 * bd[i][j])).abs() < 1e-14);
                assert!((scaled[i][j] - ad[i][j] * d[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        // rows of a pure difference stencil sum to zero
        let m = CyclicBanded::stencil(10, &[1.0, -2.0, 1.0]);
        assert!(matches!(m.factorize(), Err(Error::Degenerate(_))));
    }
}
