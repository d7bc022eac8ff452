//! Sparse symmetric positive definite solver: compressed-column storage of
//! the upper triangle, elimination tree and up-looking LLᵀ factorization,
//! ordered by approximate minimum degree.

/// Upper-triangular entries of a symmetric matrix, duplicates summed on
/// compression.
#[derive(Debug, Clone, Default)]
pub struct SymTriplets {
    pub n: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl SymTriplets {
    pub fn new(n: usize) -> Self {
        SymTriplets {
            n,
            entries: Vec::new(),
        }
    }

    /// Adds `v` at `(i, j)`; the lower-triangle mirror is implied.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        self.entries.push((r as u32, c as u32, v));
    }

    pub fn extend(&mut self, other: SymTriplets) {
        self.entries.extend(other.entries);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_csc(mut self) -> SymCsc {
        self.entries.sort_unstable_by_key(|&(r, c, _)| (c, r));
        let mut col_ptr = vec![0usize; self.n + 1];
        let mut rows = Vec::with_capacity(self.entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last = None;
        for &(r, c, v) in &self.entries {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            rows.push(r as usize);
            vals.push(v);
            col_ptr[c as usize + 1] += 1;
        }
        for j in 0..self.n {
            col_ptr[j + 1] += col_ptr[j];
        }
        SymCsc {
            n: self.n,
            col_ptr,
            rows,
            vals,
        }
    }
}

/// Symmetric matrix stored as its upper triangle in compressed columns, rows
/// sorted within each column.
#[derive(Debug, Clone)]
pub struct SymCsc {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub rows: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SymCsc {
    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.rows[p];
                let v = self.vals[p];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                if self.rows[p] == j {
                    d[j] = self.vals[p];
                }
            }
        }
        d
    }

    /// Adds `v` to every diagonal entry (entries must exist).
    pub fn add_diagonal(&mut self, v: f64) {
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                if self.rows[p] == j {
                    self.vals[p] += v;
                }
            }
        }
    }

    /// `P A Pᵀ` with `perm[new] = old`, upper triangle again.
    pub fn permute(&self, perm: &[usize]) -> SymCsc {
        let mut inv = vec![0usize; self.n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut t = SymTriplets::new(self.n);
        t.entries.reserve(self.nnz());
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                t.add(inv[self.rows[p]], inv[j], self.vals[p]);
            }
        }
        t.to_csc()
    }

    /// Adjacency of the matrix graph (off-diagonal pattern, both directions).
    pub fn graph(&self) -> (Vec<usize>, Vec<usize>) {
        let mut deg = vec![0usize; self.n + 1];
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.rows[p];
                if i != j {
                    deg[i + 1] += 1;
                    deg[j + 1] += 1;
                }
            }
        }
        for i in 0..self.n {
            deg[i + 1] += deg[i];
        }
        let mut fill = deg.clone();
        let mut adj = vec![0usize; deg[self.n]];
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.rows[p];
                if i != j {
                    adj[fill[i]] = j;
                    fill[i] += 1;
                    adj[fill[j]] = i;
                    fill[j] += 1;
                }
            }
        }
        (deg, adj)
    }

    /// Matrix graph with unknowns grouped `block` at a time into nodes
    /// (CSR, sorted, no self loops).
    pub fn block_graph(&self, block: usize) -> (Vec<usize>, Vec<usize>) {
        let nodes = self.n.div_ceil(block);
        let mut nb: Vec<Vec<usize>> = vec![Vec::new(); nodes];
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let (a, b) = (self.rows[p] / block, j / block);
                if a != b {
                    nb[a].push(b);
                    nb[b].push(a);
                }
            }
        }
        let mut offsets = Vec::with_capacity(nodes + 1);
        offsets.push(0);
        let mut adj = Vec::new();
        for mut l in nb {
            l.sort_unstable();
            l.dedup();
            adj.extend(l);
            offsets.push(adj.len());
        }
        (offsets, adj)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("matrix is not positive definite at column {column} (original index {original})")]
pub struct NotPositiveDefinite {
    pub column: usize,
    pub original: usize,
}

/// Elimination tree of a matrix given by its upper triangle.
pub fn etree(a: &SymCsc) -> Vec<Option<usize>> {
    let n = a.n;
    let mut parent = vec![None; n];
    let mut ancestor: Vec<Option<usize>> = vec![None; n];
    for k in 0..n {
        for p in a.col_ptr[k]..a.col_ptr[k + 1] {
            let mut i = a.rows[p];
            while i < k {
                let next = ancestor[i];
                ancestor[i] = Some(k);
                match next {
                    None => {
                        parent[i] = Some(k);
                        break;
                    }
                    Some(nx) if nx == k => break,
                    Some(nx) => i = nx,
                }
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of L (columns `< k`), written to
/// `stack[top..]` in topological order; returns `top`.
fn ereach(
    a: &SymCsc,
    k: usize,
    parent: &[Option<usize>],
    stack: &mut [usize],
    mark: &mut [usize],
) -> usize {
    let n = a.n;
    let mut top = n;
    let stamp = k + 1;
    mark[k] = stamp;
    for p in a.col_ptr[k]..a.col_ptr[k + 1] {
        let mut i = a.rows[p];
        if i > k {
            continue;
        }
        let mut len = 0;
        while mark[i] != stamp {
            stack[len] = i;
            len += 1;
            mark[i] = stamp;
            match parent[i] {
                Some(pi) => i = pi,
                None => break,
            }
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

/// Lower-triangular factor of `P A Pᵀ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    perm: Vec<usize>,
    col_ptr: Vec<usize>,
    rows: Vec<usize>,
    vals: Vec<f64>,
}

impl Cholesky {
    /// Factorizes `a` under the ordering `perm[new] = old` (identity when
    /// `None`).
    pub fn factor(a: &SymCsc, perm: Option<Vec<usize>>) -> Result<Self, NotPositiveDefinite> {
        let n = a.n;
        let perm = perm.unwrap_or_else(|| (0..n).collect());
        let c = a.permute(&perm);
        let parent = etree(&c);
        let mut stack = vec![0usize; n];
        let mut mark = vec![0usize; n];
        // column counts from row patterns
        let mut counts = vec![1usize; n];
        for k in 0..n {
            let top = ereach(&c, k, &parent, &mut stack, &mut mark);
            for &j in &stack[top..] {
                counts[j] += 1;
            }
        }
        let mut col_ptr = vec![0usize; n + 1];
        for j in 0..n {
            col_ptr[j + 1] = col_ptr[j] + counts[j];
        }
        let nnz = col_ptr[n];
        let mut rows = vec![0usize; nnz];
        let mut vals = vec![0.0; nnz];
        let mut next = col_ptr[..n].to_vec();
        let mut x = vec![0.0; n];
        mark.iter_mut().for_each(|m| *m = 0);
        for k in 0..n {
            let top = ereach(&c, k, &parent, &mut stack, &mut mark);
            x[k] = 0.0;
            for p in c.col_ptr[k]..c.col_ptr[k + 1] {
                let i = c.rows[p];
                if i <= k {
                    x[i] = c.vals[p];
                }
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &stack[top..] {
                let lki = x[i] / vals[col_ptr[i]];
                x[i] = 0.0;
                for p in col_ptr[i] + 1..next[i] {
                    x[rows[p]] -= vals[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                rows[p] = k;
                vals[p] = lki;
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(NotPositiveDefinite {
                    column: k,
                    original: perm[k],
                });
            }
            let p = next[k];
            next[k] += 1;
            rows[p] = k;
            vals[p] = d.sqrt();
        }
        Ok(Cholesky {
            n,
            perm,
            col_ptr,
            rows,
            vals,
        })
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        // L y = x
        for j in 0..n {
            let s = self.col_ptr[j];
            x[j] /= self.vals[s];
            for p in s + 1..self.col_ptr[j + 1] {
                x[self.rows[p]] -= self.vals[p] * x[j];
            }
        }
        // Lᵀ z = y
        for j in (0..n).rev() {
            let s = self.col_ptr[j];
            for p in s + 1..self.col_ptr[j + 1] {
                x[j] -= self.vals[p] * x[self.rows[p]];
            }
            x[j] /= self.vals[s];
        }
        let mut out = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }
}

/// Approximate minimum degree ordering of a symmetric graph in CSR form
/// (both directions present, rows sorted). Returns `perm[new] = old`.
pub fn min_degree_ordering(offsets: &[usize], adj: &[usize]) -> Vec<usize> {
    let n = offsets.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    // with the diagonal included (AMD skips it) the pattern is never
    // sparser than n entries, which the ordering code assumes
    let mut ap = Vec::with_capacity(n + 1);
    let mut ai = Vec::with_capacity(adj.len() + n);
    ap.push(0);
    for i in 0..n {
        let col = &adj[offsets[i]..offsets[i + 1]];
        let at = col.partition_point(|&j| j < i);
        ai.extend_from_slice(&col[..at]);
        ai.push(i);
        ai.extend(col[at..].iter().filter(|&&j| j != i));
        ap.push(ai.len());
    }
    match amd::order(n, &ap, &ai, &amd::Control::default()) {
        Ok((p, _, _)) => p,
        Err(status) => {
            log::warn!("minimum degree ordering failed ({status:?}); using natural order");
            (0..n).collect()
        }
    }
}

/// Expands a node ordering to `block`-sized groups of consecutive unknowns.
pub fn expand_ordering(perm: &[usize], block: usize) -> Vec<usize> {
    perm.iter()
        .flat_map(|&v| (0..block).map(move |k| v * block + k))
        .collect()
}
