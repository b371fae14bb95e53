//! ISOMAP-style analysis of a set of policies.
//!
//! A k-nearest-neighbour graph is built over the policy vectors, shortest
//! paths through it approximate geodesic distances, and classical MDS embeds
//! each connected piece. The connected components of the graph are the charts
//! of the policy manifold; the residual variance of the embedding as a
//! function of its dimension gives an estimate of the intrinsic dimension.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};

/// Weight given to edges between coincident points.
pub const ZERO_EDGE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a point cloud needs at least 2 points, got {}",
                points.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidInput("all points must share one nonzero dimension".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain("point cloud contains non-finite values".into()));
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    /// The sub-cloud made of the listed points, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<PointCloud> {
        PointCloud::new(indices.iter().map(|&i| self.points[i].clone()).collect())
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Undirected weighted graph stored as sorted adjacency lists.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    pub k: usize,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl NeighborGraph {
    /// Builds a graph from undirected edges; duplicates keep the first weight.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b, w) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidInput(format!("bad edge ({a}, {b}) for {n} vertices")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::NumericDomain(format!("edge weight {w} must be positive")));
            }
            for (from, to) in [(a, b), (b, a)] {
                let list: &mut Vec<(usize, f64)> = &mut adjacency[from];
                if !list.iter().any(|&(j, _)| j == to) {
                    list.push((to, w));
                }
            }
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(j, _)| j);
        }
        Ok(NeighborGraph { k: 0, adjacency })
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Component label of every vertex; labels are numbered in order of their
    /// lowest vertex.
    pub fn components(&self) -> (usize, Vec<usize>) {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &(u, _) in &self.adjacency[v] {
                    if label[u] == usize::MAX {
                        label[u] = count;
                        stack.push(u);
                    }
                }
            }
            count += 1;
        }
        (count, label)
    }
}

/// Connects every point to its `k` nearest neighbours. Ties in distance go to
/// the lower index, so the graph is fully determined by the input order.
pub fn knn_graph(cloud: &PointCloud, k: usize, exec: ExecMode) -> Result<NeighborGraph> {
    let m = cloud.len();
    if k == 0 || k >= m {
        return Err(Error::InvalidInput(format!("k = {k} must satisfy 1 <= k < {m}")));
    }
    let nearest = map_indexed(m, exec, |i| {
        let mut d: Vec<(f64, usize)> = (0..m)
            .filter(|&j| j != i)
            .map(|j| (euclidean(cloud.point(i), cloud.point(j)), j))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(k);
        d
    });
    let mut edges = Vec::with_capacity(m * k);
    for (i, list) in nearest.iter().enumerate() {
        for &(dist, j) in list {
            edges.push((i, j, dist.max(ZERO_EDGE)));
        }
    }
    let mut graph = NeighborGraph::from_edges(m, &edges)?;
    graph.k = k;
    Ok(graph)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Geodesics {
    /// All-pairs shortest-path lengths; infinite across components.
    pub distances: DMatrix<f64>,
    pub num_components: usize,
    pub component_of: Vec<usize>,
}

#[derive(Copy, Clone, PartialEq)]
struct HeapEntry {
    dist: f64,
    vertex: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest paths with a binary heap.
pub fn dijkstra(graph: &NeighborGraph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry {
        dist: 0.0,
        vertex: source,
    });
    while let Some(HeapEntry { dist: d, vertex: v }) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &(u, w) in graph.neighbors(v) {
            let candidate = d + w;
            if candidate < dist[u] {
                dist[u] = candidate;
                heap.push(HeapEntry {
                    dist: candidate,
                    vertex: u,
                });
            }
        }
    }
    dist
}

/// Shortest-path distances from every vertex; one independent run per source.
pub fn geodesic_distances(graph: &NeighborGraph, exec: ExecMode) -> Geodesics {
    let n = graph.len();
    let rows = map_indexed(n, exec, |s| dijkstra(graph, s));
    let mut distances = DMatrix::from_element(n, n, f64::INFINITY);
    for (i, row) in rows.iter().enumerate() {
        for (j, &d) in row.iter().enumerate() {
            distances[(i, j)] = d;
        }
    }
    // The two directions of a path can differ in the last bit; keep them equal.
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distances[(i, j)].min(distances[(j, i)]);
            distances[(i, j)] = d;
            distances[(j, i)] = d;
        }
    }
    let (num_components, component_of) = graph.components();
    Geodesics {
        distances,
        num_components,
        component_of,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    /// One row per point, `dim` columns.
    pub coordinates: Vec<Vec<f64>>,
    /// The top eigenvalues of the centred Gram matrix, largest first.
    pub eigenvalues: Vec<f64>,
    pub dim: usize,
    /// Fewer positive eigenvalues than requested dimensions.
    pub truncated: bool,
}

/// Classical multidimensional scaling of a finite symmetric distance matrix.
pub fn classical_mds(distances: &DMatrix<f64>, d: usize) -> Result<Embedding> {
    let m = distances.nrows();
    if m == 0 || distances.ncols() != m {
        return Err(Error::InvalidInput("distance matrix must be square and nonempty".into()));
    }
    if d == 0 {
        return Err(Error::InvalidInput("embedding dimension must be >= 1".into()));
    }
    if distances.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain(
            "classical MDS needs finite distances (a single component)".into(),
        ));
    }
    let sq = distances.map(|v| v * v);
    let row_mean: Vec<f64> = (0..m).map(|i| sq.row(i).mean()).collect();
    let total_mean = sq.mean();
    let gram = DMatrix::from_fn(m, m, |i, j| {
        -0.5 * (sq[(i, j)] - row_mean[i] - row_mean[j] + total_mean)
    });
    let gram = (&gram + gram.transpose()) * 0.5;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let scale = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    let positive = order
        .iter()
        .take_while(|&&i| eig.eigenvalues[i] > 1e-12 * scale)
        .count();
    let dim = d.min(positive).max(1);
    let truncated = positive < d;

    let mut coordinates = vec![vec![0.0; dim]; m];
    let mut eigenvalues = Vec::with_capacity(dim);
    for (c, &idx) in order.iter().take(dim).enumerate() {
        let lambda = eig.eigenvalues[idx].max(0.0);
        eigenvalues.push(lambda);
        let root = lambda.sqrt();
        let v = eig.eigenvectors.column(idx);
        // Fix the sign so the first nonzero entry is positive.
        let sign = v
            .iter()
            .find(|x| x.abs() > 1e-12)
            .map_or(1.0, |x| x.signum());
        for (row, x) in coordinates.iter_mut().zip(v.iter()) {
            row[c] = sign * x * root;
        }
    }
    Ok(Embedding {
        coordinates,
        eigenvalues,
        dim,
        truncated,
    })
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

/// `1 − ρ²` between the geodesic distances and the distances among the first
/// `d` embedding coordinates, over all unordered pairs. A constant distance
/// matrix gives 0.
pub fn residual_variance(geodesic: &DMatrix<f64>, embedding: &Embedding, d: usize) -> f64 {
    let m = geodesic.nrows();
    let d = d.min(embedding.dim);
    let mut g = Vec::with_capacity(m * (m - 1) / 2);
    let mut e = Vec::with_capacity(g.capacity());
    for i in 0..m {
        for j in (i + 1)..m {
            g.push(geodesic[(i, j)]);
            e.push(euclidean(&embedding.coordinates[i][..d], &embedding.coordinates[j][..d]));
        }
    }
    match pearson(&g, &e) {
        Some(rho) => (1.0 - rho * rho).clamp(0.0, 1.0),
        None => 0.0,
    }
}

/// Residual variance for `d = 1..=d_max`. Each entry is the best residual
/// available with at most that many dimensions, so the curve never rises.
pub fn residual_curve(geodesic: &DMatrix<f64>, d_max: usize) -> Result<Vec<f64>> {
    let embedding = classical_mds(geodesic, d_max)?;
    let mut curve = Vec::with_capacity(d_max);
    let mut best = f64::INFINITY;
    for d in 1..=d_max {
        best = best.min(residual_variance(geodesic, &embedding, d));
        curve.push(best);
    }
    Ok(curve)
}

/// Elbow reading of a residual curve (`curve[0]` is `d = 1`): the smallest `d`
/// whose residual is below `threshold`, or beyond which one more dimension
/// gains less than `min_gain`.
pub fn estimate_dimension(curve: &[f64], threshold: f64, min_gain: f64) -> usize {
    for (i, &r) in curve.iter().enumerate() {
        if r < threshold {
            return i + 1;
        }
        if let Some(&next) = curve.get(i + 1) {
            if r - next < min_gain {
                return i + 1;
            }
        }
    }
    curve.len().max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartAssignment {
    pub num_charts: usize,
    /// Chart index of every point, in `0..num_charts`.
    pub chart_of: Vec<usize>,
    pub chart_sizes: Vec<usize>,
    /// Every component was smaller than the minimum chart size.
    pub single_chart_fallback: bool,
    /// Neighbour count of the graph the charts were read from.
    pub k: usize,
}

impl ChartAssignment {
    pub fn members(&self, chart: usize) -> Vec<usize> {
        (0..self.chart_of.len()).filter(|&i| self.chart_of[i] == chart).collect()
    }
}

fn min_set_distance(cloud: &PointCloud, a: &[usize], b: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for &i in a {
        for &j in b {
            best = best.min(euclidean(cloud.point(i), cloud.point(j)));
        }
    }
    best
}

/// Charts from the connected components of a k-NN graph. Components smaller
/// than `min_chart_size` join the large component closest to them. Charts are
/// numbered in order of their lowest point index.
pub fn charts_from_graph(cloud: &PointCloud, graph: &NeighborGraph, min_chart_size: usize) -> ChartAssignment {
    let (count, label) = graph.components();
    let members: Vec<Vec<usize>> = (0..count)
        .map(|c| (0..label.len()).filter(|&i| label[i] == c).collect())
        .collect();
    let large: Vec<usize> = (0..count).filter(|&c| members[c].len() >= min_chart_size).collect();
    if large.is_empty() {
        return ChartAssignment {
            num_charts: 1,
            chart_of: vec![0; cloud.len()],
            chart_sizes: vec![cloud.len()],
            single_chart_fallback: true,
            k: graph.k,
        };
    }
    let mut target = vec![0usize; count];
    for c in 0..count {
        target[c] = if members[c].len() >= min_chart_size {
            c
        } else {
            let mut best = (f64::INFINITY, large[0]);
            for &l in &large {
                let d = min_set_distance(cloud, &members[c], &members[l]);
                if d < best.0 {
                    best = (d, l);
                }
            }
            best.1
        };
    }
    let chart_id: Vec<usize> = (0..count)
        .map(|c| large.iter().position(|&l| l == target[c]).unwrap_or(0))
        .collect();
    let chart_of: Vec<usize> = label.iter().map(|&c| chart_id[c]).collect();
    let mut chart_sizes = vec![0; large.len()];
    for &c in &chart_of {
        chart_sizes[c] += 1;
    }
    ChartAssignment {
        num_charts: large.len(),
        chart_of,
        chart_sizes,
        single_chart_fallback: false,
        k: graph.k,
    }
}

pub fn detect_charts(cloud: &PointCloud, k: usize, min_chart_size: usize, exec: ExecMode) -> Result<ChartAssignment> {
    let graph = knn_graph(cloud, k, exec)?;
    Ok(charts_from_graph(cloud, &graph, min_chart_size))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManifoldConfig {
    pub k: usize,
    pub k_max: usize,
    pub k_step: usize,
    pub min_chart_size: usize,
    /// Largest embedding dimension examined by the residual curve.
    pub max_dim: usize,
    pub residual_threshold: f64,
    pub min_residual_gain: f64,
    /// Share of points the largest component must hold before `k` stops growing.
    pub connected_share: f64,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        ManifoldConfig {
            k: 5,
            k_max: 15,
            k_step: 2,
            min_chart_size: 3,
            max_dim: 5,
            residual_threshold: 0.1,
            min_residual_gain: 0.02,
            connected_share: 0.6,
        }
    }
}

impl ManifoldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k_max < self.k || self.k_step == 0 || self.min_chart_size == 0 || self.max_dim == 0 {
            return Err(Error::ParameterDomain(format!("manifold config out of range: {self:?}")));
        }
        if !(self.connected_share > 0.0 && self.connected_share <= 1.0) {
            return Err(Error::ParameterDomain("connected_share must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartAnalysis {
    pub chart: usize,
    /// Indices into the analysed cloud.
    pub members: Vec<usize>,
    pub k: usize,
    pub residual_curve: Vec<f64>,
    pub dimension: usize,
    /// Two-dimensional embedding of the members (a single column when the
    /// chart is too small or flat for two).
    pub embedding: Embedding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldReport {
    pub charts: ChartAssignment,
    pub per_chart: Vec<ChartAnalysis>,
}

/// Picks the neighbour count. It starts at `cfg.k` and grows while the graph
/// is shattered: the largest component holds less than `connected_share` of
/// the points and some component is too small to be a chart.
pub fn choose_k(cloud: &PointCloud, cfg: &ManifoldConfig, exec: ExecMode) -> Result<NeighborGraph> {
    let m = cloud.len();
    let mut k = cfg.k.min(m - 1);
    loop {
        let graph = knn_graph(cloud, k, exec)?;
        let (count, label) = graph.components();
        let mut sizes = vec![0usize; count];
        for &c in &label {
            sizes[c] += 1;
        }
        let largest = sizes.iter().copied().max().unwrap_or(0);
        let shattered = (largest as f64) < cfg.connected_share * m as f64
            && sizes.iter().any(|&s| s < cfg.min_chart_size);
        let next = k + cfg.k_step;
        if !shattered || next > cfg.k_max || next >= m {
            return Ok(graph);
        }
        log::debug!("k = {k} leaves the graph fragmented ({sizes:?}); trying {next}");
        k = next;
    }
}

/// Residual curve, dimension estimate and embedding of one chart.
pub fn analyze_chart(cloud: &PointCloud, members: &[usize], chart: usize, cfg: &ManifoldConfig, exec: ExecMode) -> Result<ChartAnalysis> {
    let sub = cloud.subset(members)?;
    // A chart is one component of the full graph, but its own graph can split;
    // widen the neighbourhood until it is connected again.
    let mut k = cfg.k.min(sub.len() - 1);
    let geo = loop {
        let graph = knn_graph(&sub, k, exec)?;
        let geo = geodesic_distances(&graph, exec);
        if geo.num_components == 1 {
            break geo;
        }
        if k == sub.len() - 1 {
            return Err(Error::Geometry(format!("chart {chart} stays disconnected at k = {k}")));
        }
        k = (k + cfg.k_step).min(sub.len() - 1);
    };
    let d_max = cfg.max_dim.min(sub.len() - 1).max(1);
    let residual_curve = residual_curve(&geo.distances, d_max)?;
    let dimension = estimate_dimension(&residual_curve, cfg.residual_threshold, cfg.min_residual_gain);
    let embedding = classical_mds(&geo.distances, 2)?;
    Ok(ChartAnalysis {
        chart,
        members: members.to_vec(),
        k,
        residual_curve,
        dimension,
        embedding,
    })
}

/// Full analysis: neighbour count, charts, and per-chart dimension.
pub fn analyze(cloud: &PointCloud, cfg: &ManifoldConfig, exec: ExecMode) -> Result<ManifoldReport> {
    cfg.validate()?;
    let graph = choose_k(cloud, cfg, exec)?;
    let charts = charts_from_graph(cloud, &graph, cfg.min_chart_size);
    let mut per_chart = Vec::with_capacity(charts.num_charts);
    for c in 0..charts.num_charts {
        let members = charts.members(c);
        if members.len() < 2 {
            continue;
        }
        per_chart.push(analyze_chart(cloud, &members, c, cfg, exec)?);
    }
    Ok(ManifoldReport { charts, per_chart })
}
