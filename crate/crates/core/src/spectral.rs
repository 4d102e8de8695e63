//! Graphs, Laplacian eigenbasis, and the vertex/frequency-limiting operators.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{eig_sym, SymEigen};
use crate::quat::QSignal;
use crate::rng;

/// Connectivity resampling cap for [`gen_er_graph`].
pub const MAX_GRAPH_ATTEMPTS: usize = 1000;

/// Undirected weighted graph given by a symmetric adjacency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: DMatrix<f64>,
}

impl Graph {
    /// Validates symmetry, zero diagonal, non-negative weights and connectivity.
    pub fn new(adjacency: DMatrix<f64>) -> Result<Self> {
        let n = adjacency.nrows();
        if n == 0 || adjacency.ncols() != n {
            return Err(Error::InvalidGraph("adjacency must be square and non-empty".into()));
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::InvalidGraph(format!("non-zero diagonal at {i}")));
            }
            for j in 0..n {
                let a = adjacency[(i, j)];
                if !a.is_finite() || a < 0.0 {
                    return Err(Error::InvalidGraph(format!("bad weight {a} at ({i},{j})")));
                }
                if a != adjacency[(j, i)] {
                    return Err(Error::InvalidGraph(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        let g = Graph { adjacency };
        if !g.is_connected() {
            return Err(Error::InvalidGraph("graph is not connected".into()));
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    /// Edges `(u, v, weight)` with `u < v`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                let w = self.adjacency[(u, v)];
                if w != 0.0 {
                    out.push((u, v, w));
                }
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        is_connected(&self.adjacency)
    }

    /// SHA-256 over the adjacency bit patterns, used to detect stale caches.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        for v in self.adjacency.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Writes an edge list with header `u,v,weight` (0-based vertex indices).
    pub fn write_edge_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        wtr.write_record(["u", "v", "weight"])
            .map_err(|e| Error::csv(path, e))?;
        for (u, v, w) in self.edges() {
            wtr.write_record([u.to_string(), v.to_string(), format!("{w:?}")])
                .map_err(|e| Error::csv(path, e))?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads an edge list. The vertex count is `n` if given, otherwise one past
    /// the largest index seen.
    pub fn read_edge_csv(path: impl AsRef<Path>, n: Option<usize>) -> Result<Graph> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let headers = rdr.headers().map_err(|e| Error::csv(path, e))?;
        if headers.iter().map(str::trim).collect::<Vec<_>>() != ["u", "v", "weight"] {
            return Err(Error::format(path, "expected header u,v,weight"));
        }
        let mut edges = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            if rec.len() != 3 {
                return Err(Error::format(path, "expected 3 columns per row"));
            }
            let bad = |f: &str| Error::format(path, format!("bad field '{f}'"));
            let u: usize = rec[0].trim().parse().map_err(|_| bad(&rec[0]))?;
            let v: usize = rec[1].trim().parse().map_err(|_| bad(&rec[1]))?;
            let w: f64 = rec[2].trim().parse().map_err(|_| bad(&rec[2]))?;
            if u == v {
                return Err(Error::format(path, format!("self loop at vertex {u}")));
            }
            edges.push((u, v, w));
        }
        let max_idx = edges.iter().map(|&(u, v, _)| u.max(v)).max();
        let n = match (n, max_idx) {
            (Some(n), Some(m)) if m >= n => {
                return Err(Error::IndexOutOfRange { index: m, size: n });
            }
            (Some(n), _) => n,
            (None, Some(m)) => m + 1,
            (None, None) => return Err(Error::format(path, "empty edge list")),
        };
        let mut adj = DMatrix::zeros(n, n);
        for (u, v, w) in edges {
            adj[(u, v)] = w;
            adj[(v, u)] = w;
        }
        Graph::new(adj).map_err(|e| Error::format(path, e.to_string()))
    }
}

fn is_connected(adj: &DMatrix<f64>) -> bool {
    let n = adj.nrows();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if !seen[v] && adj[(u, v)] > 0.0 {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == n
}

/// Connected, unweighted Erdős–Rényi `G(n, p)` graph; resamples until connected.
pub fn gen_er_graph(n: usize, p: f64, seed: u64) -> Result<Graph> {
    let mut rng = rng::seeded(seed);
    gen_er_graph_with(n, p, &mut rng)
}

pub fn gen_er_graph_with(n: usize, p: f64, rng: &mut impl Rng) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("graph needs n >= 2, got {n}")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!("edge probability {p} not in (0, 1]")));
    }
    for _ in 0..MAX_GRAPH_ATTEMPTS {
        let mut adj = DMatrix::zeros(n, n);
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.random::<f64>() < p {
                    adj[(u, v)] = 1.0;
                    adj[(v, u)] = 1.0;
                }
            }
        }
        if is_connected(&adj) {
            return Ok(Graph { adjacency: adj });
        }
    }
    Err(Error::ConnectivityRetriesExhausted(MAX_GRAPH_ATTEMPTS))
}

/// Combinatorial Laplacian `Degree − Adjacency`.
pub fn laplacian(g: &Graph) -> DMatrix<f64> {
    let a = g.adjacency();
    let degrees: DVector<f64> = DVector::from_iterator(g.n(), a.row_iter().map(|r| r.sum()));
    DMatrix::from_diagonal(&degrees) - a
}

/// A graph together with its Laplacian eigenbasis.
#[derive(Debug, Clone)]
pub struct SpectralGraph {
    graph: Graph,
    laplacian: DMatrix<f64>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
}

impl SpectralGraph {
    pub fn new(graph: Graph) -> Result<Self> {
        let laplacian = laplacian(&graph);
        let SymEigen { values, vectors } = eig_sym(&laplacian)?;
        Ok(SpectralGraph {
            graph,
            laplacian,
            eigvals: values,
            eigvecs: vectors,
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// Ascending Laplacian eigenvalues.
    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    /// Orthonormal eigenvectors as columns (the graph Fourier basis `U`).
    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    /// The `N × |F|` matrix of eigenvectors indexed by `freq_set`.
    pub fn u_f(&self, freq_set: &[usize]) -> Result<DMatrix<f64>> {
        check_indices(freq_set, self.n())?;
        Ok(self.eigvecs.select_columns(freq_set))
    }

    /// Band-limiting projector `B = U_F U_Fᵀ`.
    pub fn band_projector(&self, freq_set: &[usize]) -> Result<DMatrix<f64>> {
        let u = self.u_f(freq_set)?;
        Ok(&u * u.transpose())
    }

    /// Graph Fourier transform `Uᵀ x`, plane by plane.
    pub fn qgft(&self, s: &QSignal) -> Result<QSignal> {
        s.apply_real_matrix(&self.eigvecs.transpose())
    }

    /// Inverse transform `U ŝ`.
    pub fn iqgft(&self, s_hat: &QSignal) -> Result<QSignal> {
        s_hat.apply_real_matrix(&self.eigvecs)
    }

    /// Writes `eigvals.csv`, `eigvecs.csv` and `adjacency.sha256` into `dir`.
    pub fn write_cache(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let hash_path = dir.join("adjacency.sha256");
        fs::write(&hash_path, self.graph.content_hash() + "\n")
            .map_err(|e| Error::io(&hash_path, e))?;
        write_matrix_csv(
            &dir.join("eigvals.csv"),
            &DMatrix::from_column_slice(self.n(), 1, self.eigvals.as_slice()),
        )?;
        write_matrix_csv(&dir.join("eigvecs.csv"), &self.eigvecs)
    }

    /// Loads a cache written by [`write_cache`](Self::write_cache). Returns
    /// `Ok(None)` when the cache is missing or was built from a different graph.
    pub fn load_cache(graph: Graph, dir: impl AsRef<Path>) -> Result<Option<SpectralGraph>> {
        let dir = dir.as_ref();
        let hash_path = dir.join("adjacency.sha256");
        let stored = match fs::read_to_string(&hash_path) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&hash_path, e)),
        };
        if stored.trim() != graph.content_hash() {
            return Ok(None);
        }
        let n = graph.n();
        let vals = read_matrix_csv(&dir.join("eigvals.csv"))?;
        let vecs = read_matrix_csv(&dir.join("eigvecs.csv"))?;
        if vals.shape() != (n, 1) || vecs.shape() != (n, n) {
            return Err(Error::format(dir, "cached eigendecomposition has wrong shape"));
        }
        Ok(Some(SpectralGraph {
            laplacian: laplacian(&graph),
            graph,
            eigvals: DVector::from_column_slice(vals.as_slice()),
            eigvecs: vecs,
        }))
    }
}

fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    for row in m.row_iter() {
        wtr.write_record(row.iter().map(|v| format!("{v:?}")))
            .map_err(|e| Error::csv(path, e))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(path, format!("bad number '{f}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::format(path, "ragged matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn check_indices(set: &[usize], size: usize) -> Result<()> {
    for (k, &i) in set.iter().enumerate() {
        if i >= size {
            return Err(Error::IndexOutOfRange { index: i, size });
        }
        if k > 0 && set[k - 1] >= i {
            return Err(Error::InvalidParameter(
                "index set must be sorted without duplicates".into(),
            ));
        }
    }
    Ok(())
}

/// Spectral support `F` and sampling set `S`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Support {
    freq_set: Vec<usize>,
    sample_set: Vec<usize>,
}

impl Support {
    /// Sorts both sets; rejects duplicates, out-of-range indices and empty sets.
    pub fn new(mut freq_set: Vec<usize>, mut sample_set: Vec<usize>, n: usize) -> Result<Self> {
        freq_set.sort_unstable();
        sample_set.sort_unstable();
        if freq_set.is_empty() || sample_set.is_empty() {
            return Err(Error::InvalidParameter("support sets must be non-empty".into()));
        }
        check_indices(&freq_set, n)?;
        check_indices(&sample_set, n)?;
        Ok(Support {
            freq_set,
            sample_set,
        })
    }

    /// `F = {0, …, bandwidth−1}`, the lowest graph frequencies.
    pub fn lowpass(bandwidth: usize, sample_set: Vec<usize>, n: usize) -> Result<Self> {
        Support::new((0..bandwidth).collect(), sample_set, n)
    }

    pub fn freq_set(&self) -> &[usize] {
        &self.freq_set
    }

    pub fn sample_set(&self) -> &[usize] {
        &self.sample_set
    }
}

/// Diagonal 0/1 indicator of `sample_set` as a vector.
pub fn mask_diagonal(sample_set: &[usize], n: usize) -> Result<DVector<f64>> {
    let mut d = DVector::zeros(n);
    for &v in sample_set {
        if v >= n {
            return Err(Error::IndexOutOfRange { index: v, size: n });
        }
        d[v] = 1.0;
    }
    Ok(d)
}

/// Vertex-limiting operator `D_S = Diag(1_S)`.
pub fn vertex_mask(sample_set: &[usize], n: usize) -> Result<DMatrix<f64>> {
    Ok(DMatrix::from_diagonal(&mask_diagonal(sample_set, n)?))
}
