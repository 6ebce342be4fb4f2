//! Cholesky factorizations of the wired Dirichlet Laplacian `A = 4I − adjacency`.
//!
//! Large domains use a sparse factor under a geometric nested-dissection ordering;
//! small ones use a dense factor. Both support solves, Gaussian sampling
//! (`h = L⁻ᵀ ξ` has covariance `A⁻¹`) and the diagonal of `A⁻¹`.

use crate::error::{Error, Result};
use crate::lattice::{WiredDomain, RHO};

/// Below this many sites the dense factor is used.
pub const DENSE_THRESHOLD: usize = 2000;
const LEAF_SIZE: usize = 64;

/// `y = A x` for the wired Laplacian of `domain`.
pub fn apply_laplacian(domain: &WiredDomain, x: &[f64], y: &mut [f64]) {
    for (i, yi) in y.iter_mut().enumerate() {
        let mut acc = 4.0 * x[i];
        for &j in domain.neighbors(i) {
            if j != RHO {
                acc -= x[j as usize];
            }
        }
        *yi = acc;
    }
}

/// Dense lower-triangular factor, row-major.
#[derive(Clone, Debug)]
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    pub fn new(domain: &WiredDomain) -> Result<Self> {
        let n = domain.len();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 4.0;
            for &j in domain.neighbors(i) {
                if j != RHO {
                    a[i * n + j as usize] = -1.0;
                }
            }
        }
        Self::from_dense(n, a)
    }

    /// Factors a symmetric positive-definite row-major matrix.
    pub fn from_dense(n: usize, mut a: Vec<f64>) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        for j in 0..n {
            let (head, tail) = a.split_at_mut(j * n);
            let row_j = &mut tail[..n];
            for k in 0..j {
                let row_k = &head[k * n..k * n + k];
                let dot: f64 = row_k.iter().zip(&row_j[..k]).map(|(x, y)| x * y).sum();
                row_j[k] = (row_j[k] - dot) / head[k * n + k];
            }
            let d = row_j[j] - row_j[..j].iter().map(|x| x * x).sum::<f64>();
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::FactorizationFailure { pivot: j, value: d });
            }
            row_j[j] = d.sqrt();
            for v in &mut row_j[j + 1..] {
                *v = 0.0;
            }
        }
        Ok(DenseCholesky { n, l: a })
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    fn forward(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.l[i * self.n..i * self.n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(x, y)| x * y).sum();
            b[i] = (b[i] - s) / self.at(i, i);
        }
    }

    fn backward(&self, b: &mut [f64]) {
        for i in (0..self.n).rev() {
            b[i] /= self.at(i, i);
            let bi = b[i];
            let row = &self.l[i * self.n..i * self.n + i];
            for (bk, lik) in b[..i].iter_mut().zip(row) {
                *bk -= lik * bi;
            }
        }
    }

    /// Diagonal of `A⁻¹ = L⁻ᵀL⁻¹` via the rows of `L⁻¹`.
    fn inverse_diagonal(&self) -> Vec<f64> {
        let n = self.n;
        let mut diag = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            // column j of L⁻¹
            col.iter_mut().for_each(|v| *v = 0.0);
            col[j] = 1.0;
            for i in j..n {
                let row = &self.l[i * n + j..i * n + i];
                let s: f64 = row.iter().zip(&col[j..i]).map(|(x, y)| x * y).sum();
                col[i] = (col[i] - s) / self.at(i, i);
            }
            for i in j..n {
                diag[j] += col[i] * col[i];
            }
        }
        diag
    }
}

/// Sparse factor `P A Pᵀ = L Lᵀ` in compressed-column form, diagonal first.
#[derive(Clone, Debug)]
pub struct SparseCholesky {
    n: usize,
    /// `perm[k]` is the original index placed at position `k`.
    perm: Vec<u32>,
    col_ptr: Vec<usize>,
    rows: Vec<u32>,
    vals: Vec<f64>,
}

/// Geometric nested dissection: split across the longer bounding-box side at the
/// median coordinate line; that line is the separator and is numbered last.
pub fn nested_dissection(domain: &WiredDomain) -> Vec<u32> {
    let mut order = Vec::with_capacity(domain.len());
    let all: Vec<u32> = (0..domain.len() as u32).collect();
    dissect(domain, all, &mut order);
    order
}

fn dissect(domain: &WiredDomain, set: Vec<u32>, order: &mut Vec<u32>) {
    if set.len() <= LEAF_SIZE {
        order.extend(set);
        return;
    }
    let coord = |i: u32, axis: usize| {
        let s = domain.site(i as usize);
        if axis == 0 {
            s.x
        } else {
            s.y
        }
    };
    let span = |axis: usize| {
        let lo = set.iter().map(|&i| coord(i, axis)).min().unwrap();
        let hi = set.iter().map(|&i| coord(i, axis)).max().unwrap();
        hi - lo
    };
    let axis = if span(0) >= span(1) { 0 } else { 1 };
    if span(axis) == 0 {
        order.extend(set);
        return;
    }
    let mut values: Vec<i32> = set.iter().map(|&i| coord(i, axis)).collect();
    let mid = values.len() / 2;
    let (_, &mut m, _) = values.select_nth_unstable(mid);
    let (mut left, mut right, mut sep) = (Vec::new(), Vec::new(), Vec::new());
    for &i in &set {
        match coord(i, axis).cmp(&m) {
            std::cmp::Ordering::Less => left.push(i),
            std::cmp::Ordering::Greater => right.push(i),
            std::cmp::Ordering::Equal => sep.push(i),
        }
    }
    drop(set);
    dissect(domain, left, order);
    dissect(domain, right, order);
    order.extend(sep);
}

impl SparseCholesky {
    pub fn new(domain: &WiredDomain) -> Result<Self> {
        Self::with_ordering(domain, nested_dissection(domain))
    }

    pub fn with_ordering(domain: &WiredDomain, perm: Vec<u32>) -> Result<Self> {
        let n = domain.len();
        assert_eq!(perm.len(), n);
        let mut iperm = vec![0u32; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p as usize] = k as u32;
        }
        // permuted adjacency, lower part only
        let lower = |j: usize| {
            domain
                .neighbors(perm[j] as usize)
                .iter()
                .filter(|&&o| o != RHO)
                .map(|&o| iperm[o as usize])
                .filter(move |&r| r as usize > j)
        };

        // symbolic: struct(j) = lower adjacency ∪ children's structures, via the etree
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut rows: Vec<u32> = Vec::new();
        let mut children_head = vec![u32::MAX; n];
        let mut sibling = vec![u32::MAX; n];
        let mut mark = vec![u32::MAX; n];
        let mut scratch: Vec<u32> = Vec::new();
        col_ptr.push(0);
        for j in 0..n {
            scratch.clear();
            mark[j] = j as u32;
            for r in lower(j) {
                if mark[r as usize] != j as u32 {
                    mark[r as usize] = j as u32;
                    scratch.push(r);
                }
            }
            let mut c = children_head[j];
            while c != u32::MAX {
                let (s, e) = (col_ptr[c as usize] + 1, col_ptr[c as usize + 1]);
                for &r in &rows[s..e] {
                    if mark[r as usize] != j as u32 {
                        mark[r as usize] = j as u32;
                        scratch.push(r);
                    }
                }
                c = sibling[c as usize];
            }
            scratch.sort_unstable();
            rows.push(j as u32);
            rows.extend_from_slice(&scratch);
            col_ptr.push(rows.len());
            if let Some(&parent) = scratch.first() {
                sibling[j] = children_head[parent as usize];
                children_head[parent as usize] = j as u32;
            }
        }
        drop((children_head, sibling, mark, scratch));

        // numeric: left-looking with per-column cursors linked by next pending row
        let mut vals = vec![0.0; rows.len()];
        let mut work = vec![0.0f64; n];
        let mut cursor = vec![0usize; n];
        let mut head = vec![u32::MAX; n];
        let mut next = vec![u32::MAX; n];
        for j in 0..n {
            work[j] = 4.0;
            for r in lower(j) {
                work[r as usize] = -1.0;
            }
            let mut k = head[j];
            head[j] = u32::MAX;
            while k != u32::MAX {
                let ku = k as usize;
                let following = next[ku];
                let p = cursor[ku];
                let ljk = vals[p];
                let end = col_ptr[ku + 1];
                for q in p..end {
                    work[rows[q] as usize] -= vals[q] * ljk;
                }
                if p + 1 < end {
                    cursor[ku] = p + 1;
                    let r = rows[p + 1] as usize;
                    next[ku] = head[r];
                    head[r] = k;
                }
                k = following;
            }
            let d = work[j];
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::FactorizationFailure { pivot: j, value: d });
            }
            let ljj = d.sqrt();
            work[j] = 0.0;
            let (s, e) = (col_ptr[j], col_ptr[j + 1]);
            vals[s] = ljj;
            for q in s + 1..e {
                let r = rows[q] as usize;
                vals[q] = work[r] / ljj;
                work[r] = 0.0;
            }
            if s + 1 < e {
                cursor[j] = s + 1;
                let r = rows[s + 1] as usize;
                next[j] = head[r];
                head[r] = j as u32;
            }
        }
        Ok(SparseCholesky {
            n,
            perm,
            col_ptr,
            rows,
            vals,
        })
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn permutation(&self) -> &[u32] {
        &self.perm
    }

    fn forward(&self, b: &mut [f64]) {
        for j in 0..self.n {
            let (s, e) = (self.col_ptr[j], self.col_ptr[j + 1]);
            let bj = b[j] / self.vals[s];
            b[j] = bj;
            for q in s + 1..e {
                b[self.rows[q] as usize] -= self.vals[q] * bj;
            }
        }
    }

    fn backward(&self, b: &mut [f64]) {
        for j in (0..self.n).rev() {
            let (s, e) = (self.col_ptr[j], self.col_ptr[j + 1]);
            let mut acc = b[j];
            for q in s + 1..e {
                acc -= self.vals[q] * b[self.rows[q] as usize];
            }
            b[j] = acc / self.vals[s];
        }
    }

    fn permute(&self, b: &[f64]) -> Vec<f64> {
        self.perm.iter().map(|&p| b[p as usize]).collect()
    }

    fn unpermute(&self, x: &[f64], out: &mut [f64]) {
        for (k, &p) in self.perm.iter().enumerate() {
            out[p as usize] = x[k];
        }
    }

    /// Diagonal of `A⁻¹` by selected inversion over the pattern of `L`.
    fn inverse_diagonal(&self) -> Vec<f64> {
        let n = self.n;
        let mut z = vec![0.0; self.vals.len()];
        let mut slot = vec![u32::MAX; n];
        let mut acc: Vec<f64> = Vec::new();
        for j in (0..n).rev() {
            let (s, e) = (self.col_ptr[j], self.col_ptr[j + 1]);
            let ljj = self.vals[s];
            let pattern = &self.rows[s + 1..e];
            let lcol = &self.vals[s + 1..e];
            acc.clear();
            acc.resize(pattern.len(), 0.0);
            for (a, &r) in pattern.iter().enumerate() {
                slot[r as usize] = a as u32;
            }
            // acc_a = Σ_b Z[S_a, S_b] L[S_b, j], reading each Z column S_b once
            for (b, &k) in pattern.iter().enumerate() {
                let (ks, ke) = (self.col_ptr[k as usize], self.col_ptr[k as usize + 1]);
                acc[b] += z[ks] * lcol[b];
                for q in ks + 1..ke {
                    let a = slot[self.rows[q] as usize];
                    if a != u32::MAX {
                        let a = a as usize;
                        acc[a] += z[q] * lcol[b];
                        acc[b] += z[q] * lcol[a];
                    }
                }
            }
            let mut diag = 1.0 / ljj;
            for a in 0..pattern.len() {
                let zaj = -acc[a] / ljj;
                z[s + 1 + a] = zaj;
                diag -= lcol[a] * zaj;
            }
            z[s] = diag / ljj;
            for &r in pattern {
                slot[r as usize] = u32::MAX;
            }
        }
        let mut out = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            out[p as usize] = z[self.col_ptr[k]];
        }
        out
    }
}

/// Either factor behind one interface; indices are always in site order.
#[derive(Clone, Debug)]
pub enum Factorization {
    Dense(DenseCholesky),
    Sparse(SparseCholesky),
}

impl Factorization {
    /// Dense below [`DENSE_THRESHOLD`] sites, sparse otherwise.
    pub fn new(domain: &WiredDomain) -> Result<Self> {
        if domain.len() < DENSE_THRESHOLD {
            Self::dense(domain)
        } else {
            Self::sparse(domain)
        }
    }

    pub fn dense(domain: &WiredDomain) -> Result<Self> {
        DenseCholesky::new(domain).map(Factorization::Dense)
    }

    pub fn sparse(domain: &WiredDomain) -> Result<Self> {
        SparseCholesky::new(domain).map(Factorization::Sparse)
    }

    pub fn len(&self) -> usize {
        match self {
            Factorization::Dense(f) => f.n,
            Factorization::Sparse(f) => f.n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        match self {
            Factorization::Dense(f) => {
                let mut x = b.to_vec();
                f.forward(&mut x);
                f.backward(&mut x);
                x
            }
            Factorization::Sparse(f) => {
                let mut x = f.permute(b);
                f.forward(&mut x);
                f.backward(&mut x);
                let mut out = vec![0.0; f.n];
                f.unpermute(&x, &mut out);
                out
            }
        }
    }

    /// `L⁻ᵀ ξ` mapped back to site order; for standard normal `ξ` its covariance is `A⁻¹`.
    pub fn correlate(&self, xi: &[f64]) -> Vec<f64> {
        match self {
            Factorization::Dense(f) => {
                let mut x = xi.to_vec();
                f.backward(&mut x);
                x
            }
            Factorization::Sparse(f) => {
                let mut x = xi.to_vec();
                f.backward(&mut x);
                let mut out = vec![0.0; f.n];
                f.unpermute(&x, &mut out);
                out
            }
        }
    }

    /// `(A⁻¹)_{xx}` for every site.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        match self {
            Factorization::Dense(f) => f.inverse_diagonal(),
            Factorization::Sparse(f) => f.inverse_diagonal(),
        }
    }
}

/// Conjugate gradient for `A x = b`, independent of any factorization.
/// Stops when `|r| ≤ tol · |b|`.
pub fn conjugate_gradient(domain: &WiredDomain, b: &[f64], tol: f64, max_iter: usize) -> Vec<f64> {
    conjugate_gradient_with(|x, y| apply_laplacian(domain, x, y), b, tol, max_iter)
}

/// Conjugate gradient for a symmetric positive-definite operator given as `y = M x`.
pub fn conjugate_gradient_with<F: Fn(&[f64], &mut [f64])>(apply: F, b: &[f64], tol: f64, max_iter: usize) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    if bnorm == 0.0 {
        return x;
    }
    for _ in 0..max_iter {
        if rr.sqrt() <= tol * bnorm {
            break;
        }
        apply(&p, &mut ap);
        let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    x
}
