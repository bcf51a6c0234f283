//! Per-slot satellite graph and min-delay routing over ISLs.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::channel::{self, LinkBudget};
use crate::constellation::{self, ConstellationConfig, Geodetic, SatelliteState};
use crate::env::CacheMatrix;
use crate::nn::Tensor;
use crate::workload::RequestSet;
use crate::{Error, Result};

/// Number of per-edge features: normalized distance and normalized rate.
pub const EDGE_FEATURES: usize = 2;

/// Latitude bands x longitude sectors used for the region one-hot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionGrid {
    pub lat_bands: usize,
    pub lon_sectors: usize,
}

impl Default for RegionGrid {
    fn default() -> Self {
        Self {
            lat_bands: 3,
            lon_sectors: 4,
        }
    }
}

impl RegionGrid {
    pub fn count(&self) -> usize {
        self.lat_bands * self.lon_sectors
    }

    pub fn region_of(&self, g: &Geodetic) -> usize {
        let band = (((g.lat_deg + 90.0) / 180.0) * self.lat_bands as f64).floor() as isize;
        let sector = (((g.lon_deg + 180.0) / 360.0) * self.lon_sectors as f64).floor() as isize;
        let band = band.clamp(0, self.lat_bands as isize - 1) as usize;
        let sector = sector.clamp(0, self.lon_sectors as isize - 1) as usize;
        band * self.lon_sectors + sector
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphParams {
    pub regions: RegionGrid,
    /// Links longer than this are dropped; `None` keeps every grid link.
    pub max_isl_range_km: Option<f64>,
    /// Request counts are divided by this before entering node features.
    #[serde(skip)]
    pub requests_per_sat: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            regions: RegionGrid::default(),
            max_isl_range_km: None,
            requests_per_sat: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub distance_km: f64,
    pub rate_bps: f64,
}

impl Edge {
    pub fn other(&self, n: usize) -> usize {
        if n == self.a {
            self.b
        } else {
            self.a
        }
    }
}

/// Undirected satellite graph for one slot. Node feature rows are
/// `[x, y, z | region one-hot | requests | cache bits]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub node_features: Tensor,
    pub edges: Vec<Edge>,
    pub edge_features: Tensor,
    /// `adjacency[n]` lists `(neighbor, edge index)` in increasing neighbor order.
    pub adjacency: Vec<Vec<(usize, usize)>>,
}

pub fn feature_dim(regions: &RegionGrid, num_contents: usize) -> usize {
    3 + regions.count() + 2 * num_contents
}

pub fn build_graph(
    constellation: &ConstellationConfig,
    states: &[SatelliteState],
    cache: &CacheMatrix,
    requests: &RequestSet,
    budget: &LinkBudget,
    params: &GraphParams,
) -> Result<GraphSnapshot> {
    let n = states.len();
    if n != constellation.num_satellites() || cache.num_sats() != n || requests.num_sats() != n {
        return Err(Error::Shape(format!(
            "graph inputs disagree on satellite count: states {}, constellation {}, cache {}, requests {}",
            n,
            constellation.num_satellites(),
            cache.num_sats(),
            requests.num_sats()
        )));
    }
    let f = cache.num_contents();
    if requests.num_contents() != f {
        return Err(Error::Shape("cache and requests disagree on content count".into()));
    }
    let d = feature_dim(&params.regions, f);
    let radius = constellation.orbit_radius_km();
    let req_norm = params.requests_per_sat.max(1) as f64;
    let mut x = Tensor::zeros(&[n, d]);
    for (i, s) in states.iter().enumerate() {
        let row = x.row_mut(i);
        for k in 0..3 {
            row[k] = s.position[k] / radius;
        }
        row[3 + params.regions.region_of(&s.geodetic)] = 1.0;
        let off = 3 + params.regions.count();
        for c in 0..f {
            row[off + c] = requests.get(i, c) as f64 / req_norm;
            row[off + f + c] = if cache.get(i, c) { 1.0 } else { 0.0 };
        }
    }

    let rate_ref = channel::isl_rate(budget, radius * 1e3)?;
    let mut edges = Vec::new();
    let mut adjacency = vec![Vec::new(); n];
    for i in 0..n {
        for j in constellation::isl_neighbors(constellation, i) {
            if j <= i {
                continue;
            }
            let dist = constellation::distance(&states[i], &states[j]);
            if params.max_isl_range_km.is_some_and(|r| dist > r) {
                continue;
            }
            let rate = channel::isl_rate(budget, dist * 1e3)?;
            adjacency[i].push((j, edges.len()));
            adjacency[j].push((i, edges.len()));
            edges.push(Edge {
                a: i,
                b: j,
                distance_km: dist,
                rate_bps: rate,
            });
        }
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
    }
    let mut ef = Tensor::zeros(&[edges.len(), EDGE_FEATURES]);
    for (k, e) in edges.iter().enumerate() {
        let row = ef.row_mut(k);
        row[0] = e.distance_km / (2.0 * radius);
        row[1] = e.rate_bps / rate_ref;
    }
    Ok(GraphSnapshot {
        node_features: x,
        edges,
        edge_features: ef,
        adjacency,
    })
}

impl GraphSnapshot {
    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Longest BFS hop distance between any pair of connected nodes.
    pub fn hop_diameter(&self) -> usize {
        let n = self.num_nodes();
        let mut best = 0;
        for s in 0..n {
            let mut depth = vec![usize::MAX; n];
            depth[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &self.adjacency[u] {
                    if depth[v] == usize::MAX {
                        depth[v] = depth[u] + 1;
                        best = best.max(depth[v]);
                        queue.push_back(v);
                    }
                }
            }
        }
        best
    }
}

/// A delivery path from `source` to the satellite `holder` serving it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub source: usize,
    pub holder: usize,
    /// Node sequence `source .. holder`.
    pub path: Vec<usize>,
    /// Consecutive `(from, to)` ISL hops.
    pub hops: Vec<(usize, usize)>,
    pub isl_delay: f64,
}

impl RoutePlan {
    fn local(src: usize) -> Self {
        Self {
            source: src,
            holder: src,
            path: vec![src],
            hops: Vec::new(),
            isl_delay: 0.0,
        }
    }

    fn from_path(path: Vec<usize>, isl_delay: f64) -> Self {
        let hops = path.windows(2).map(|w| (w[0], w[1])).collect();
        Self {
            source: path[0],
            holder: *path.last().unwrap(),
            path,
            hops,
            isl_delay,
        }
    }

    pub fn hop_count(&self) -> usize {
        self.hops.len()
    }
}

/// Single-source min-delay tree. Ties in delay are broken by the
/// lexicographically smallest node sequence.
#[derive(Debug, Clone)]
pub struct ShortestPaths {
    pub source: usize,
    pub delay: Vec<f64>,
    pub paths: Vec<Option<Vec<usize>>>,
}

fn better(d1: f64, p1: &[usize], d2: f64, p2: Option<&Vec<usize>>) -> bool {
    match p2 {
        None => true,
        Some(p2) => match d1.total_cmp(&d2) {
            Ordering::Less => true,
            Ordering::Equal => p1 < p2.as_slice(),
            Ordering::Greater => false,
        },
    }
}

pub fn shortest_paths(g: &GraphSnapshot, src: usize, size_bits: f64) -> ShortestPaths {
    let n = g.num_nodes();
    let mut delay = vec![f64::INFINITY; n];
    let mut paths: Vec<Option<Vec<usize>>> = vec![None; n];
    let mut done = vec![false; n];
    delay[src] = 0.0;
    paths[src] = Some(vec![src]);
    loop {
        let mut pick: Option<usize> = None;
        for v in 0..n {
            if done[v] || paths[v].is_none() {
                continue;
            }
            pick = match pick {
                Some(u) if !better(delay[v], paths[v].as_ref().unwrap(), delay[u], paths[u].as_ref()) => {
                    Some(u)
                }
                _ => Some(v),
            };
        }
        let Some(u) = pick else { break };
        done[u] = true;
        for &(v, e) in &g.adjacency[u] {
            if done[v] {
                continue;
            }
            let cand = delay[u] + size_bits / g.edges[e].rate_bps;
            let mut cand_path = paths[u].clone().unwrap();
            cand_path.push(v);
            if better(cand, &cand_path, delay[v], paths[v].as_ref()) {
                delay[v] = cand;
                paths[v] = Some(cand_path);
            }
        }
    }
    ShortestPaths {
        source: src,
        delay,
        paths,
    }
}

impl ShortestPaths {
    pub fn plan_to(&self, dst: usize) -> Option<RoutePlan> {
        self.paths[dst]
            .as_ref()
            .map(|p| RoutePlan::from_path(p.clone(), self.delay[dst]))
    }
}

pub fn shortest_delay_path(g: &GraphSnapshot, src: usize, dst: usize, size_bits: f64) -> Result<RoutePlan> {
    if src >= g.num_nodes() || dst >= g.num_nodes() {
        return Err(Error::Domain(format!("node index out of range: {src} -> {dst}")));
    }
    if src == dst {
        return Ok(RoutePlan::local(src));
    }
    shortest_paths(g, src, size_bits)
        .plan_to(dst)
        .ok_or(Error::NoRoute { src, dst })
}

/// Min-delay route from `src` to any satellite caching `content`.
pub fn nearest_holder(
    g: &GraphSnapshot,
    src: usize,
    content: usize,
    cache: &CacheMatrix,
    size_bits: f64,
) -> Result<RoutePlan> {
    if content >= cache.num_contents() {
        return Err(Error::Domain(format!("content {content} outside catalog")));
    }
    if cache.get(src, content) {
        return Ok(RoutePlan::local(src));
    }
    let tree = shortest_paths(g, src, size_bits);
    let mut best: Option<usize> = None;
    for m in (0..g.num_nodes()).filter(|&m| cache.get(m, content)) {
        let Some(path) = tree.paths[m].as_ref() else { continue };
        best = match best {
            Some(b) if !better(tree.delay[m], path, tree.delay[b], tree.paths[b].as_ref()) => Some(b),
            _ => Some(m),
        };
    }
    best.and_then(|m| tree.plan_to(m)).ok_or(Error::NoHolder { content })
}

/// Holder among `src` and its direct ISL neighbors, preferring the fastest
/// single hop (ties to the lowest index).
pub fn one_hop_holder(
    g: &GraphSnapshot,
    src: usize,
    content: usize,
    cache: &CacheMatrix,
    size_bits: f64,
) -> Option<RoutePlan> {
    if cache.get(src, content) {
        return Some(RoutePlan::local(src));
    }
    let mut best: Option<(f64, usize)> = None;
    for &(m, e) in &g.adjacency[src] {
        if !cache.get(m, content) {
            continue;
        }
        let delay = size_bits / g.edges[e].rate_bps;
        if best.map_or(true, |(d, _)| delay < d) {
            best = Some((delay, m));
        }
    }
    best.map(|(delay, m)| RoutePlan::from_path(vec![src, m], delay))
}
