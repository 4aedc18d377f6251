//! Sparse undirected graphs, symmetric normalization, diagonal masking
//! and k-hop neighborhood indexing.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Immutable undirected graph in compressed-row form.
///
/// Edges are deduplicated and symmetrized; self-loops are never stored.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    degree: Vec<usize>,
    dropped_self_loops: usize,
}

impl Graph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degree[i]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degree
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.col_idx.len() / 2
    }

    /// Self-loops dropped from the input edge list at build time.
    pub fn dropped_self_loops(&self) -> usize {
        self.dropped_self_loops
    }

    /// Undirected edge list with u < v, sorted.
    pub fn edge_list(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for u in 0..self.n {
            for &v in self.neighbors(u) {
                if (u as u32) < v {
                    out.push((u as u32, v));
                }
            }
        }
        out
    }
}

/// Build a graph from an arbitrary edge list: symmetrize, deduplicate,
/// drop self-loops (counted).
pub fn build_graph(edges: &[(u32, u32)], n: usize) -> Result<Graph> {
    let mut dropped = 0usize;
    let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(edges.len());
    for &(u, v) in edges {
        if u as usize >= n || v as usize >= n {
            return Err(Error::InvalidInput(format!(
                "edge ({u},{v}) out of range for n={n}"
            )));
        }
        if u == v {
            dropped += 1;
            continue;
        }
        let (a, b) = if u < v { (u, v) } else { (v, u) };
        pairs.push((a, b));
    }
    pairs.sort_unstable();
    pairs.dedup();

    let mut degree = vec![0usize; n];
    for &(a, b) in &pairs {
        degree[a as usize] += 1;
        degree[b as usize] += 1;
    }
    let mut row_ptr = vec![0usize; n + 1];
    for i in 0..n {
        row_ptr[i + 1] = row_ptr[i] + degree[i];
    }
    let mut col_idx = vec![0u32; row_ptr[n]];
    let mut fill = row_ptr.clone();
    for &(a, b) in &pairs {
        col_idx[fill[a as usize]] = b;
        fill[a as usize] += 1;
        col_idx[fill[b as usize]] = a;
        fill[b as usize] += 1;
    }
    // rows come out sorted because pairs are sorted and (a,b) insertions
    // scan in increasing order of the opposite endpoint for a<b only;
    // the b-side insertions are in increasing a, so each row is sorted.
    Ok(Graph {
        n,
        row_ptr,
        col_idx,
        degree,
        dropped_self_loops: dropped,
    })
}

/// Sparse real matrix in compressed-row form, used for normalized and
/// masked adjacency operators.
#[derive(Debug, Clone)]
pub struct SparseOp {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl SparseOp {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Identity operator of size n.
    pub fn identity(n: usize) -> SparseOp {
        SparseOp {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n as u32).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_triplets(rows: usize, cols: usize, mut t: Vec<(u32, u32, f64)>) -> SparseOp {
        t.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, _, _) in &t {
            row_ptr[r as usize + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseOp {
            rows,
            cols,
            row_ptr,
            col_idx: t.iter().map(|&(_, c, _)| c).collect(),
            values: t.iter().map(|&(_, _, v)| v).collect(),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1])
                .map(move |k| (r, self.col_idx[k] as usize, self.values[k]))
        })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        match self.col_idx[lo..hi].binary_search(&(c as u32)) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// Dense product self * x.
    pub fn spmm(&self, x: &Tensor) -> Result<Tensor> {
        if self.cols != x.rows() {
            return Err(Error::ShapeMismatch(format!(
                "spmm {}x{} * {}x{}",
                self.rows,
                self.cols,
                x.rows(),
                x.cols()
            )));
        }
        let f = x.cols();
        let mut out = Tensor::zeros(self.rows, f);
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k] as usize;
                let w = self.values[k];
                let xrow = x.row(c);
                let orow = &mut out.data_mut()[r * f..(r + 1) * f];
                for j in 0..f {
                    orow[j] += w * xrow[j];
                }
            }
        }
        Ok(out)
    }

    /// Dense product self^T * x (used by the backward pass).
    pub fn spmm_t(&self, x: &Tensor) -> Result<Tensor> {
        if self.rows != x.rows() {
            return Err(Error::ShapeMismatch(format!(
                "spmm_t ({}x{})^T * {}x{}",
                self.rows,
                self.cols,
                x.rows(),
                x.cols()
            )));
        }
        let f = x.cols();
        let mut out = Tensor::zeros(self.cols, f);
        for r in 0..self.rows {
            let xrow = x.row(r);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k] as usize;
                let w = self.values[k];
                let orow = &mut out.data_mut()[c * f..(c + 1) * f];
                for j in 0..f {
                    orow[j] += w * xrow[j];
                }
            }
        }
        Ok(out)
    }
}

/// Symmetrically normalized adjacency, with or without self-loops.
#[derive(Debug, Clone)]
pub struct NormAdj {
    op: SparseOp,
    self_loop: bool,
}

impl NormAdj {
    pub fn op(&self) -> &SparseOp {
        &self.op
    }

    pub fn self_loop(&self) -> bool {
        self.self_loop
    }
}

/// norm(A) = D^{-1/2} A D^{-1/2}, or with self-loops
/// (D+I)^{-1/2} (A+I) (D+I)^{-1/2}. Zero-degree rows stay zero.
pub fn normalize_adjacency(g: &Graph, self_loop: bool) -> NormAdj {
    let n = g.n();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d = g.degree(i) + usize::from(self_loop);
            if d == 0 {
                0.0
            } else {
                1.0 / (d as f64).sqrt()
            }
        })
        .collect();
    let mut triplets = Vec::with_capacity(g.col_idx.len() + if self_loop { n } else { 0 });
    for u in 0..n {
        if self_loop {
            triplets.push((u as u32, u as u32, inv_sqrt[u] * inv_sqrt[u]));
        }
        for &v in g.neighbors(u) {
            triplets.push((u as u32, v, inv_sqrt[u] * inv_sqrt[v as usize]));
        }
    }
    NormAdj {
        op: SparseOp::from_triplets(n, n, triplets),
        self_loop,
    }
}

/// Diagonal 0/1 mask over nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiagMask {
    bits: Vec<bool>,
}

impl DiagMask {
    pub fn new(bits: Vec<bool>) -> DiagMask {
        DiagMask { bits }
    }

    pub fn ones(n: usize) -> DiagMask {
        DiagMask {
            bits: vec![true; n],
        }
    }

    pub fn zeros(n: usize) -> DiagMask {
        DiagMask {
            bits: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn complement(&self) -> DiagMask {
        DiagMask {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSide {
    /// Row masking: M * norm(A).
    Target,
    /// Column masking: norm(A) * M.
    Source,
}

/// Apply a diagonal mask to an already-normalized operator.
pub fn apply_mask(na: &NormAdj, m: &DiagMask, side: MaskSide) -> Result<SparseOp> {
    let op = &na.op;
    if m.len() != op.rows {
        return Err(Error::ShapeMismatch(format!(
            "mask length {} vs operator size {}",
            m.len(),
            op.rows
        )));
    }
    let triplets = op
        .entries()
        .filter(|&(r, c, _)| match side {
            MaskSide::Target => m.get(r),
            MaskSide::Source => m.get(c),
        })
        .map(|(r, c, v)| (r as u32, c as u32, v))
        .collect();
    Ok(SparseOp::from_triplets(op.rows, op.cols, triplets))
}

/// Literal norm(M A) / norm(A M): mask the (optionally self-looped)
/// adjacency first, then scale by row-sum and column-sum degree factors
/// of the masked matrix, with zero-safe division.
pub fn masked_renormalize(
    g: &Graph,
    m: &DiagMask,
    side: MaskSide,
    self_loop: bool,
) -> Result<SparseOp> {
    let n = g.n();
    if m.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "mask length {} vs graph size {}",
            m.len(),
            n
        )));
    }
    let mut triplets: Vec<(u32, u32, f64)> = Vec::new();
    for u in 0..n {
        if self_loop {
            triplets.push((u as u32, u as u32, 1.0));
        }
        for &v in g.neighbors(u) {
            triplets.push((u as u32, v, 1.0));
        }
    }
    triplets.retain(|&(r, c, _)| match side {
        MaskSide::Target => m.get(r as usize),
        MaskSide::Source => m.get(c as usize),
    });
    let mut row_deg = vec![0.0f64; n];
    let mut col_deg = vec![0.0f64; n];
    for &(r, c, v) in &triplets {
        row_deg[r as usize] += v;
        col_deg[c as usize] += v;
    }
    let inv = |d: f64| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
    for t in &mut triplets {
        t.2 *= inv(row_deg[t.0 as usize]) * inv(col_deg[t.1 as usize]);
    }
    Ok(SparseOp::from_triplets(n, n, triplets))
}

/// Exact k-hop neighborhoods N(i,k), target node excluded, sorted.
#[derive(Debug, Clone)]
pub struct KHopIndex {
    k: usize,
    neighborhoods: Vec<Vec<u32>>,
}

impl KHopIndex {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.neighborhoods.len()
    }

    pub fn neighborhood(&self, i: usize) -> &[u32] {
        &self.neighborhoods[i]
    }
}

/// Breadth-first shortest-path neighborhoods up to depth k.
pub fn khop_index(g: &Graph, k: usize) -> Result<KHopIndex> {
    if k < 1 {
        return Err(Error::InvalidInput("khop_index requires k >= 1".into()));
    }
    let n = g.n();
    let mut neighborhoods = Vec::with_capacity(n);
    let mut depth = vec![usize::MAX; n];
    let mut touched: Vec<u32> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        for &t in &touched {
            depth[t as usize] = usize::MAX;
        }
        touched.clear();
        queue.clear();
        depth[start] = 0;
        touched.push(start as u32);
        queue.push_back(start as u32);
        let mut members: Vec<u32> = Vec::new();
        while let Some(u) = queue.pop_front() {
            let d = depth[u as usize];
            if d == k {
                continue;
            }
            for &v in g.neighbors(u as usize) {
                if depth[v as usize] == usize::MAX {
                    depth[v as usize] = d + 1;
                    touched.push(v);
                    members.push(v);
                    queue.push_back(v);
                }
            }
        }
        members.sort_unstable();
        neighborhoods.push(members);
    }
    Ok(KHopIndex { k, neighborhoods })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn build_dedups_and_symmetrizes() {
        let g = build_graph(&[(0, 1), (1, 0), (1, 2)], 3).unwrap();
        assert_eq!(g.degrees(), &[1, 2, 1]);
        assert_eq!(g.edge_list(), vec![(0, 1), (1, 2)]);
        assert_eq!(g.dropped_self_loops(), 0);
    }

    #[test]
    fn build_empty_single_node() {
        let g = build_graph(&[], 1).unwrap();
        assert_eq!(g.degrees(), &[0]);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn build_drops_self_loops() {
        let g = build_graph(&[(0, 0), (0, 1)], 2).unwrap();
        assert_eq!(g.edge_list(), vec![(0, 1)]);
        assert_eq!(g.dropped_self_loops(), 1);
    }

    #[test]
    fn build_rejects_out_of_range() {
        assert!(build_graph(&[(0, 5)], 2).is_err());
    }

    #[test]
    fn normalize_single_edge() {
        let g = build_graph(&[(0, 1)], 2).unwrap();
        let na = normalize_adjacency(&g, false);
        assert!((na.op().get(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(na.op().get(0, 0), 0.0);

        let nb = normalize_adjacency(&g, true);
        for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert!((nb.op().get(r, c) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_isolated_node_self_loop() {
        let g = build_graph(&[], 1).unwrap();
        let na = normalize_adjacency(&g, true);
        assert!((na.op().get(0, 0) - 1.0).abs() < 1e-15);
        let nb = normalize_adjacency(&g, false);
        assert_eq!(nb.op().nnz(), 0);
    }

    #[test]
    fn khop_path() {
        let g = build_graph(&[(0, 1), (1, 2)], 3).unwrap();
        let idx = khop_index(&g, 2).unwrap();
        assert_eq!(idx.neighborhood(0), &[1, 2]);
        let idx1 = khop_index(&g, 1).unwrap();
        assert_eq!(idx1.neighborhood(0), &[1]);
    }

    #[test]
    fn khop_cycle() {
        let g = build_graph(&[(0, 1), (1, 2), (2, 3), (3, 0)], 4).unwrap();
        let idx = khop_index(&g, 2).unwrap();
        assert_eq!(idx.neighborhood(0), &[1, 2, 3]);
    }

    #[test]
    fn mask_identity_and_annihilation() {
        let g = build_graph(&[(0, 1), (1, 2)], 3).unwrap();
        let na = normalize_adjacency(&g, false);
        let all = apply_mask(&na, &DiagMask::ones(3), MaskSide::Target).unwrap();
        assert_eq!(all.nnz(), na.op().nnz());
        for ((r1, c1, v1), (r2, c2, v2)) in all.entries().zip(na.op().entries()) {
            assert_eq!((r1, c1), (r2, c2));
            assert_eq!(v1, v2);
        }
        let none = apply_mask(&na, &DiagMask::zeros(3), MaskSide::Source).unwrap();
        assert_eq!(none.nnz(), 0);
    }

    #[test]
    fn mask_k2_target_rows() {
        let g = build_graph(&[(0, 1)], 2).unwrap();
        let na = normalize_adjacency(&g, true);
        let m = DiagMask::new(vec![true, false]);
        let op = apply_mask(&na, &m, MaskSide::Target).unwrap();
        assert!((op.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((op.get(0, 1) - 0.5).abs() < 1e-15);
        assert_eq!(op.get(1, 0), 0.0);
        assert_eq!(op.get(1, 1), 0.0);
    }

    #[test]
    fn renormalize_after_mask_zero_safe() {
        let g = build_graph(&[(0, 1), (1, 2)], 3).unwrap();
        let m = DiagMask::new(vec![true, false, true]);
        let op = masked_renormalize(&g, &m, MaskSide::Target, false).unwrap();
        // remaining rows: 0 and 2, each with a single entry to node 1
        assert!((op.get(0, 1) - 1.0 / (1.0f64 * 2.0).sqrt()).abs() < 1e-15);
        assert_eq!(op.get(1, 0), 0.0);
        assert!(op.entries().all(|(_, _, v)| v.is_finite()));
    }

    fn arb_graph() -> impl Strategy<Value = (Graph, usize)> {
        (2usize..30, 1usize..4).prop_flat_map(|(n, k)| {
            proptest::collection::vec((0..n as u32, 0..n as u32), 0..n * 2)
                .prop_map(move |edges| (build_graph(&edges, n).unwrap(), k))
        })
    }

    proptest! {
        #[test]
        fn normalized_weights_in_unit_interval_and_symmetric((g, _) in arb_graph()) {
            for self_loop in [false, true] {
                let na = normalize_adjacency(&g, self_loop);
                for (r, c, v) in na.op().entries() {
                    prop_assert!(v > 0.0 && v <= 1.0);
                    prop_assert!((na.op().get(c, r) - v).abs() < 1e-14);
                }
            }
        }

        #[test]
        fn mask_complement_reconstructs((g, _) in arb_graph(), bits in proptest::collection::vec(any::<bool>(), 30)) {
            let n = g.n();
            let low = DiagMask::new(bits[..n].to_vec());
            let high = low.complement();
            let na = normalize_adjacency(&g, true);
            for side in [MaskSide::Target, MaskSide::Source] {
                let a = apply_mask(&na, &low, side).unwrap();
                let b = apply_mask(&na, &high, side).unwrap();
                for (r, c, v) in na.op().entries() {
                    prop_assert!((a.get(r, c) + b.get(r, c) - v).abs() < 1e-14);
                }
            }
        }

        #[test]
        fn khop_matches_bfs_oracle((g, k) in arb_graph()) {
            let idx = khop_index(&g, k).unwrap();
            // brute-force all-pairs shortest paths (Floyd-Warshall)
            let n = g.n();
            let inf = usize::MAX / 2;
            let mut dist = vec![vec![inf; n]; n];
            for i in 0..n {
                dist[i][i] = 0;
                for &j in g.neighbors(i) {
                    dist[i][j as usize] = 1;
                }
            }
            for m in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let via = dist[i][m] + dist[m][j];
                        if via < dist[i][j] {
                            dist[i][j] = via;
                        }
                    }
                }
            }
            for i in 0..n {
                let expect: Vec<u32> = (0..n)
                    .filter(|&j| j != i && dist[i][j] >= 1 && dist[i][j] <= k)
                    .map(|j| j as u32)
                    .collect();
                prop_assert_eq!(idx.neighborhood(i), &expect[..]);
            }
        }

        #[test]
        fn khop_symmetric_and_nested((g, k) in arb_graph()) {
            let idx = khop_index(&g, k).unwrap();
            for i in 0..g.n() {
                for &j in idx.neighborhood(i) {
                    prop_assert!(idx.neighborhood(j as usize).contains(&(i as u32)));
                }
            }
            if k > 1 {
                let prev = khop_index(&g, k - 1).unwrap();
                for i in 0..g.n() {
                    for v in prev.neighborhood(i) {
                        prop_assert!(idx.neighborhood(i).contains(v));
                    }
                }
            }
        }
    }
}
