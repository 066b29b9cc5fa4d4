//! Real sparse matrices in coordinate and compressed-row form, and a sparse
//! Cholesky factorization for mass matrices.

use crate::{Error, Result, C64};

/// Coordinate (triplet) storage. Duplicate coordinates are summed on
/// conversion.
#[derive(Clone, Debug, Default)]
pub struct CooMatrix {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl CooMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        CooMatrix { nrows, ncols, entries: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        CooMatrix { nrows, ncols, entries: Vec::with_capacity(cap) }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn extend(&mut self, other: CooMatrix) {
        self.entries.extend(other.entries);
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.nrows + 1];
        for &(r, _, _) in &self.entries {
            counts[r + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        // bucket by row, keeping insertion order within a row
        let mut next = counts.clone();
        let mut cols = vec![0usize; self.entries.len()];
        let mut vals = vec![0.0; self.entries.len()];
        for &(r, c, v) in &self.entries {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..self.nrows {
            order.clear();
            order.extend(counts[r]..counts[r + 1]);
            order.sort_by_key(|&k| cols[k]);
            let mut last = usize::MAX;
            for &k in &order {
                if cols[k] == last {
                    *values.last_mut().expect("entry exists") += vals[k];
                } else {
                    indices.push(cols[k]);
                    values.push(vals[k]);
                    last = cols[k];
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix { nrows: self.nrows, ncols: self.ncols, indptr, indices, values }
    }
}

/// Compressed sparse row matrix with sorted, unique column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        let mut coo = CooMatrix::new(n, n);
        for i in 0..n {
            coo.push(i, i, 1.0);
        }
        coo.to_csr()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j, x))
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut coo = CooMatrix::with_capacity(self.ncols, self.nrows, self.nnz());
        for (i, j, v) in self.iter() {
            coo.push(j, i, v);
        }
        coo.to_csr()
    }

    pub fn scaled(&self, s: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.ncols, "sparse matvec dimension");
        (0..self.nrows)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| x[j] * a).sum()
            })
            .collect()
    }

    pub fn matvec_real(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "sparse matvec dimension");
        (0..self.nrows)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| x[j] * a).sum()
            })
            .collect()
    }

    /// `selfᵀ x` without forming the transpose.
    pub fn matvec_transpose(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.nrows, "sparse transposed matvec dimension");
        let mut y = vec![C64::new(0.0, 0.0); self.ncols];
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                y[j] += x[i] * a;
            }
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.iter() {
            d[i][j] = v;
        }
        d
    }

    /// Largest entry of `|A - Aᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        self.iter().fold(0.0, |m, (i, j, v)| m.max((v - self.get(j, i)).abs()))
    }

    /// Rows and columns restricted to the given index maps, with entries
    /// outside dropped. `row_map[i]` is the new row of old row `i`.
    pub fn restrict(&self, row_map: &[Option<usize>], nrows: usize, col_map: &[Option<usize>], ncols: usize) -> CsrMatrix {
        let mut coo = CooMatrix::with_capacity(nrows, ncols, self.nnz());
        for (i, j, v) in self.iter() {
            if let (Some(r), Some(c)) = (row_map[i], col_map[j]) {
                coo.push(r, c, v);
            }
        }
        coo.to_csr()
    }
}

/// Reverse Cuthill-McKee ordering of a structurally symmetric matrix.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| degree[i]);

    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        let root = pseudo_peripheral(a, start, &degree);
        let begin = order.len();
        visited[root] = true;
        order.push(root);
        let mut head = begin;
        let mut nbrs = Vec::new();
        while head < order.len() {
            let v = order[head];
            head += 1;
            nbrs.clear();
            nbrs.extend(a.row(v).0.iter().copied().filter(|&u| !visited[u]));
            nbrs.sort_by_key(|&u| degree[u]);
            for &u in &nbrs {
                visited[u] = true;
                order.push(u);
            }
        }
    }
    order.reverse();
    order
}

/// Node far from `start` in the graph metric, found by repeated BFS.
fn pseudo_peripheral(a: &CsrMatrix, start: usize, degree: &[usize]) -> usize {
    let mut root = start;
    let mut ecc = 0;
    for _ in 0..5 {
        let levels = bfs_levels(a, root);
        let max_level = levels.iter().filter_map(|l| *l).max().unwrap_or(0);
        if max_level <= ecc && ecc > 0 {
            break;
        }
        ecc = max_level;
        root = (0..levels.len())
            .filter(|&i| levels[i] == Some(max_level))
            .min_by_key(|&i| degree[i])
            .expect("nonempty level");
    }
    root
}

fn bfs_levels(a: &CsrMatrix, root: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; a.nrows()];
    level[root] = Some(0);
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        let l = level[v].expect("visited");
        for &u in a.row(v).0 {
            if level[u].is_none() {
                level[u] = Some(l + 1);
                queue.push_back(u);
            }
        }
    }
    level
}

/// Envelope (skyline) Cholesky factorization `P A Pᵀ = L Lᵀ` of a sparse
/// symmetric positive definite matrix under a reverse Cuthill-McKee
/// permutation.
#[derive(Clone, Debug)]
pub struct SparseCholesky {
    perm: Vec<usize>,
    /// first column of the envelope of each row
    first: Vec<usize>,
    /// offset of each row in `data`; row `i` stores columns `first[i]..=i`
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SparseCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(Error::EmptySpace);
        }
        if a.ncols() != n {
            return Err(Error::Dimension(format!("{}x{} matrix is not square", n, a.ncols())));
        }
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (i, j, _) in a.iter() {
            let (pi, pj) = (inv[i], inv[j]);
            if pj < pi {
                first[pi] = first[pi].min(pj);
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + (i - first[i] + 1));
        }
        let mut data = vec![0.0; start[n]];
        for (i, j, v) in a.iter() {
            let (pi, pj) = (inv[i], inv[j]);
            if pj <= pi {
                data[start[pi] + pj - first[pi]] = v;
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let mut s = data[start[i] + j - fi];
                let ri = start[i] - fi;
                let rj = start[j] - fj;
                for k in k0..j {
                    s -= data[ri + k] * data[rj + k];
                }
                if j < i {
                    data[ri + j] = s / data[rj + j];
                } else {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { row: perm[i], pivot: s });
                    }
                    data[ri + i] = s.sqrt();
                }
            }
        }
        Ok(SparseCholesky { perm, first, start, data })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve_real(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n, "cholesky solve dimension");
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        // forward: L y = b
        for i in 0..n {
            let fi = self.first[i];
            let ri = self.start[i] - fi;
            let mut s = y[i];
            for k in fi..i {
                s -= self.data[ri + k] * y[k];
            }
            y[i] = s / self.data[ri + i];
        }
        // backward: Lᵀ x = y, column oriented
        for i in (0..n).rev() {
            let fi = self.first[i];
            let ri = self.start[i] - fi;
            y[i] /= self.data[ri + i];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.data[ri + k] * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let re: Vec<f64> = b.iter().map(|z| z.re).collect();
        let im: Vec<f64> = b.iter().map(|z| z.im).collect();
        let xr = self.solve_real(&re);
        let xi = self.solve_real(&im);
        xr.into_iter().zip(xi).map(|(r, i)| C64::new(r, i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut coo = CooMatrix::new(n, n);
        for i in 0..n {
            coo.push(i, i, 4.0);
            if i > 0 {
                coo.push(i, i - 1, -1.0);
                coo.push(i - 1, i, -1.0);
            }
        }
        coo.to_csr()
    }

    #[test]
    fn duplicates_are_summed() {
        let mut coo = CooMatrix::new(2, 3);
        coo.push(0, 2, 1.0);
        coo.push(1, 0, 2.0);
        coo.push(0, 2, 0.5);
        coo.push(0, 0, -1.0);
        let csr = coo.to_csr();
        assert_eq!(csr.nnz(), 3);
        assert_eq!(csr.get(0, 2), 1.5);
        assert_eq!(csr.get(0, 0), -1.0);
        assert_eq!(csr.get(1, 1), 0.0);
        let t = csr.transpose();
        assert_eq!(t.get(2, 0), 1.5);
        let x = vec![C64::new(1.0, 1.0); 2];
        assert_eq!(csr.matvec_transpose(&x), t.matvec(&x));
    }

    #[test]
    fn cholesky_solves_banded_system() {
        let a = laplacian_1d(50);
        let chol = SparseCholesky::factor(&a).unwrap();
        let b: Vec<C64> = (0..50).map(|i| C64::new(i as f64, 1.0 - i as f64)).collect();
        let x = chol.solve(&b);
        let r = a.matvec(&x);
        let err: f64 = r.iter().zip(&b).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(err / nb < 1e-14);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut coo = CooMatrix::new(2, 2);
        coo.push(0, 0, 1.0);
        coo.push(1, 1, -1.0);
        assert!(matches!(SparseCholesky::factor(&coo.to_csr()), Err(Error::NotPositiveDefinite { .. })));
        assert!(matches!(SparseCholesky::factor(&CsrMatrix::zeros(0, 0)), Err(Error::EmptySpace)));
    }

    #[test]
    fn rcm_is_a_permutation_that_reduces_bandwidth() {
        // a scrambled path graph
        let n = 40;
        let scramble: Vec<usize> = (0..n).map(|i| (i * 17) % n).collect();
        let mut coo = CooMatrix::new(n, n);
        for i in 0..n {
            coo.push(scramble[i], scramble[i], 3.0);
            if i > 0 {
                coo.push(scramble[i], scramble[i - 1], -1.0);
                coo.push(scramble[i - 1], scramble[i], -1.0);
            }
        }
        let a = coo.to_csr();
        let perm = reverse_cuthill_mckee(&a);
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        let chol = SparseCholesky::factor(&a).unwrap();
        assert_eq!(chol.envelope_size(), 2 * n - 1);
    }

    proptest! {
        #[test]
        fn csr_action_matches_triplets(
            entries in proptest::collection::vec((0usize..6, 0usize..5, -10.0f64..10.0), 0..40),
            x in proptest::collection::vec(-5.0f64..5.0, 5),
        ) {
            let mut coo = CooMatrix::new(6, 5);
            let mut dense = [[0.0f64; 5]; 6];
            for &(i, j, v) in &entries {
                coo.push(i, j, v);
                dense[i][j] += v;
            }
            let csr = coo.to_csr();
            let y = csr.matvec_real(&x);
            for i in 0..6 {
                let expected: f64 = (0..5).map(|j| dense[i][j] * x[j]).sum();
                prop_assert!((y[i] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
            }
        }

        #[test]
        fn cholesky_matches_dense_solve(seed in 0u64..1000, n in 2usize..30) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // random sparse SPD matrix: diagonally dominant with random pattern
            let mut coo = CooMatrix::new(n, n);
            let mut diag = vec![1.0; n];
            for _ in 0..2 * n {
                let i = rng.gen_range(0..n);
                let j = rng.gen_range(0..n);
                if i != j {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    coo.push(i, j, v);
                    coo.push(j, i, v);
                    diag[i] += v.abs();
                    diag[j] += v.abs();
                }
            }
            for (i, d) in diag.iter().enumerate() {
                coo.push(i, i, *d);
            }
            let a = coo.to_csr();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = SparseCholesky::factor(&a).unwrap().solve_real(&b);
            let dense = DMatrix::from_fn(n, n, |i, j| a.get(i, j));
            let oracle = dense.lu().solve(&nalgebra::DVector::from_vec(b)).unwrap();
            for i in 0..n {
                prop_assert!((x[i] - oracle[i]).abs() < 1e-10);
            }
        }
    }
}
