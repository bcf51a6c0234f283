//! Caching MDP: cache state, delay/success/traffic accounting, reward and
//! slot stepping.
//!
//! A slot proceeds as follows. The observation for slot `t` carries the
//! satellite positions, the current link rates, the cache placement of the
//! previous slot and the requests of slot `t`. The agent emits a new cache
//! placement, every request is routed to its nearest holder (or the ground
//! cloud when nobody caches the content), and the slot's success rate,
//! traffic and reward are computed. The constellation then advances by one
//! slot and fresh requests and rain are drawn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, LinkBudget, RainModel};
use crate::constellation::{self, ConstellationConfig, SatelliteState};
use crate::netgraph::{self, GraphParams, GraphSnapshot, RoutePlan};
use crate::workload::{self, ContentCatalog, RequestSet};
use crate::{Error, Result};

/// Binary `N x F` placement with at most `capacity` contents per satellite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheMatrix {
    num_sats: usize,
    num_contents: usize,
    capacity: usize,
    bits: Vec<bool>,
}

impl CacheMatrix {
    pub fn new(num_sats: usize, num_contents: usize, capacity: usize) -> Self {
        Self {
            num_sats,
            num_contents,
            capacity,
            bits: vec![false; num_sats * num_contents],
        }
    }

    /// Builds a matrix from rows of 0/1 entries without checking capacity;
    /// see [`CacheMatrix::validate`].
    pub fn from_rows(rows: &[Vec<u8>], capacity: usize) -> Result<Self> {
        let num_contents = rows.first().map_or(0, Vec::len);
        let mut bits = Vec::with_capacity(rows.len() * num_contents);
        for row in rows {
            if row.len() != num_contents {
                return Err(Error::Shape("cache rows have unequal lengths".into()));
            }
            for &v in row {
                match v {
                    0 => bits.push(false),
                    1 => bits.push(true),
                    other => {
                        return Err(Error::Invariant(format!("cache entries must be 0 or 1, got {other}")))
                    }
                }
            }
        }
        Ok(Self {
            num_sats: rows.len(),
            num_contents,
            capacity,
            bits,
        })
    }

    pub fn num_sats(&self) -> usize {
        self.num_sats
    }

    pub fn num_contents(&self) -> usize {
        self.num_contents
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, sat: usize, content: usize) -> bool {
        self.bits[sat * self.num_contents + content]
    }

    /// Sets one entry, refusing to exceed the per-satellite capacity.
    pub fn set(&mut self, sat: usize, content: usize, cached: bool) -> Result<()> {
        if sat >= self.num_sats || content >= self.num_contents {
            return Err(Error::Domain(format!("cache entry ({sat}, {content}) out of range")));
        }
        if cached && !self.get(sat, content) && self.row_count(sat) >= self.capacity {
            return Err(Error::CapacityViolation {
                sat,
                cached: self.row_count(sat) + 1,
                capacity: self.capacity,
            });
        }
        self.bits[sat * self.num_contents + content] = cached;
        Ok(())
    }

    /// Replaces a satellite's row with the given content set.
    pub fn set_row(&mut self, sat: usize, contents: &[usize]) -> Result<()> {
        if contents.len() > self.capacity {
            return Err(Error::CapacityViolation {
                sat,
                cached: contents.len(),
                capacity: self.capacity,
            });
        }
        for f in 0..self.num_contents {
            self.bits[sat * self.num_contents + f] = false;
        }
        for &f in contents {
            self.set(sat, f, true)?;
        }
        Ok(())
    }

    pub fn row(&self, sat: usize) -> &[bool] {
        &self.bits[sat * self.num_contents..(sat + 1) * self.num_contents]
    }

    pub fn row_count(&self, sat: usize) -> usize {
        self.row(sat).iter().filter(|&&b| b).count()
    }

    pub fn cached_contents(&self, sat: usize) -> Vec<usize> {
        (0..self.num_contents).filter(|&f| self.get(sat, f)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for n in 0..self.num_sats {
            let cached = self.row_count(n);
            if cached > self.capacity {
                return Err(Error::CapacityViolation {
                    sat: n,
                    cached,
                    capacity: self.capacity,
                });
            }
        }
        Ok(())
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity;
        self
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.num_sats)
            .map(|n| self.row(n).iter().map(|&b| b as u8).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Traffic normalizer in bits; derived from the worst case when absent.
    pub tr_max_bits: Option<f64>,
    pub cloud_backhaul_delay_s: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.5,
            tr_max_bits: None,
            cloud_backhaul_delay_s: 5.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(Error::validation("reward.lambda1", "must be >= 0"));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(Error::validation("reward.lambda2", "must be >= 0"));
        }
        if let Some(t) = self.tr_max_bits {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::validation("reward.tr_max_bits", "must be > 0"));
            }
        }
        if !(self.cloud_backhaul_delay_s >= 0.0) {
            return Err(Error::validation("reward.cloud_backhaul_delay_s", "must be >= 0"));
        }
        Ok(())
    }
}

/// Which satellites a request may fetch from over ISLs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalScope {
    /// Any holder reachable over the ISL graph.
    Network,
    /// Only the requesting satellite and its direct neighbors.
    OneHop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub constellation: ConstellationConfig,
    pub budget: LinkBudget,
    pub rain: RainModel,
    pub user_elevation_deg: f64,
    pub catalog: ContentCatalog,
    pub capacity: usize,
    pub requests_per_sat: usize,
    pub slot_seconds: f64,
    pub slots_per_episode: usize,
    pub graph: GraphParams,
    pub reward: RewardConfig,
    pub retrieval: RetrievalScope,
}

impl EnvConfig {
    /// 4x4 Walker grid at 1000 km / 60 deg with the six-item 100 MB catalog.
    pub fn desk() -> Self {
        Self {
            constellation: ConstellationConfig::walker(4, 4, 1000.0, 60.0),
            budget: LinkBudget::default(),
            rain: RainModel::default(),
            user_elevation_deg: 90.0,
            catalog: ContentCatalog::uniform(6, 100.0 * workload::BITS_PER_MB, 2.0, 1.0),
            capacity: 1,
            requests_per_sat: 6,
            slot_seconds: 5.0,
            slots_per_episode: 50,
            graph: GraphParams::default(),
            reward: RewardConfig::default(),
            retrieval: RetrievalScope::Network,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.constellation.validate()?;
        self.rain.validate()?;
        self.catalog.validate()?;
        self.reward.validate()?;
        if self.capacity > self.catalog.len() {
            return Err(Error::validation(
                "experiment.capacity",
                "cannot exceed the number of contents",
            ));
        }
        if !(self.slot_seconds > 0.0) {
            return Err(Error::validation("experiment.slot_seconds", "must be > 0"));
        }
        if self.slots_per_episode == 0 {
            return Err(Error::validation("experiment.slots_per_episode", "must be >= 1"));
        }
        Ok(())
    }

    pub fn num_sats(&self) -> usize {
        self.constellation.num_satellites()
    }

    pub fn downlink_distance_m(&self) -> f64 {
        1e3 * channel::slant_range_km(
            self.constellation.altitude_km,
            self.constellation.earth_radius_km,
            self.user_elevation_deg,
        )
    }

    /// Worst-case per-slot traffic: every satellite refills its cache and
    /// every request travels the graph diameter.
    pub fn default_tr_max(&self, hop_diameter: usize) -> f64 {
        let n = self.num_sats() as f64;
        let z = self.catalog.max_size_bits();
        n * self.capacity as f64 * z + n * self.requests_per_sat as f64 * (1 + hop_diameter) as f64 * z
    }
}

/// Observation and bookkeeping for the current slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub slot: usize,
    pub time_s: f64,
    pub satellites: Vec<SatelliteState>,
    pub rain_db: Vec<f64>,
    /// Per-request downlink rate at each satellite this slot.
    pub downlink_rate_bps: Vec<f64>,
    pub prev_cache: CacheMatrix,
    pub requests: RequestSet,
    pub graph: GraphSnapshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub success_rate: f64,
    pub discarded: u64,
    pub total_requests: u64,
    pub traffic_req: f64,
    pub traffic_update: f64,
    pub traffic_total: f64,
    pub reward: f64,
}

/// How one `(satellite, content)` request group was served.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServedRequest {
    pub sat: usize,
    pub content: usize,
    pub count: u32,
    /// `None` when fetched from the ground cloud.
    pub route: Option<RoutePlan>,
    pub delay_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub metrics: SlotMetrics,
    pub served: Vec<ServedRequest>,
}

/// Delay of delivering `content` to the user of satellite `sat` given a
/// resolved route, or the cloud fallback when `route` is `None`.
pub fn delivery_delay(
    size_bits: f64,
    downlink_rate_bps: f64,
    cached_locally: bool,
    route: Option<&RoutePlan>,
    cloud_backhaul_delay_s: f64,
) -> f64 {
    if downlink_rate_bps <= 0.0 {
        return f64::INFINITY;
    }
    let downlink = size_bits / downlink_rate_bps;
    match route {
        Some(r) => {
            let miss = if cached_locally { 0.0 } else { 1.0 };
            downlink + miss * r.isl_delay
        }
        None => downlink + cloud_backhaul_delay_s,
    }
}

/// Number of requests whose delay strictly exceeds its threshold.
pub fn count_discarded(delays: &[f64], thresholds: &[f64]) -> Result<u64> {
    if delays.len() != thresholds.len() {
        return Err(Error::Shape("delays and thresholds must align".into()));
    }
    Ok(delays.iter().zip(thresholds).filter(|(d, t)| d > t).count() as u64)
}

/// `1 - K / total`; an empty slot counts as fully successful.
pub fn success_rate(discarded: u64, total: u64) -> Result<f64> {
    if discarded > total {
        return Err(Error::Invariant(format!(
            "{discarded} discarded requests out of {total}"
        )));
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(1.0 - discarded as f64 / total as f64)
}

/// Downlink bits for every request plus one copy per ISL hop for misses.
pub fn request_traffic(served: &[ServedRequest], cache: &CacheMatrix, sizes_bits: &[f64]) -> f64 {
    served
        .iter()
        .map(|s| {
            let z = sizes_bits[s.content];
            let miss = if cache.get(s.sat, s.content) { 0.0 } else { 1.0 };
            let hops = s.route.as_ref().map_or(0, RoutePlan::hop_count) as f64;
            s.count as f64 * (z + miss * hops * z)
        })
        .sum()
}

/// Bits of newly cached contents; evictions are free.
pub fn update_traffic(prev: &CacheMatrix, next: &CacheMatrix, sizes_bits: &[f64]) -> Result<f64> {
    if prev.num_sats() != next.num_sats() || prev.num_contents() != next.num_contents() {
        return Err(Error::Shape("cache matrices differ in shape".into()));
    }
    let mut total = 0.0;
    for n in 0..next.num_sats() {
        for (f, size) in sizes_bits.iter().enumerate().take(next.num_contents()) {
            if next.get(n, f) && !prev.get(n, f) {
                total += size;
            }
        }
    }
    Ok(total)
}

/// `lambda1 * S - lambda2 * Tr / Tr_max`.
pub fn reward(success: f64, traffic_bits: f64, lambda1: f64, lambda2: f64, tr_max: f64) -> f64 {
    lambda1 * success - lambda2 * traffic_bits / tr_max
}

/// Scores one slot: applies `action` as the new placement, routes every
/// request and computes the slot metrics. Pure in its inputs.
pub fn evaluate_slot(cfg: &EnvConfig, tr_max: f64, state: &EnvState, action: &CacheMatrix) -> Result<SlotOutcome> {
    let n = cfg.num_sats();
    let f = cfg.catalog.len();
    if action.num_sats() != n || action.num_contents() != f {
        return Err(Error::Shape(format!(
            "action is {}x{}, environment is {n}x{f}",
            action.num_sats(),
            action.num_contents()
        )));
    }
    action.clone().with_capacity(cfg.capacity).validate()?;

    let sizes = &cfg.catalog.sizes_bits;
    let mut served = Vec::new();
    let mut delays = Vec::new();
    let mut thresholds = Vec::new();
    for sat in 0..n {
        let mut tree: Option<netgraph::ShortestPaths> = None;
        for content in 0..f {
            let count = state.requests.get(sat, content);
            if count == 0 {
                continue;
            }
            let z = sizes[content];
            let local = action.get(sat, content);
            let route = match cfg.retrieval {
                RetrievalScope::OneHop => netgraph::one_hop_holder(&state.graph, sat, content, action, z),
                RetrievalScope::Network if local => {
                    netgraph::nearest_holder(&state.graph, sat, content, action, z).ok()
                }
                RetrievalScope::Network => {
                    // Delays scale linearly with size, so one tree per source serves
                    // every content of equal size; rebuild when sizes differ.
                    let t = match tree.take() {
                        Some(t) if t.delay.is_empty() || sizes_equal(sizes, content) => t,
                        _ => netgraph::shortest_paths(&state.graph, sat, z),
                    };
                    let plan = best_holder(&t, content, action);
                    tree = Some(t);
                    plan
                }
            };
            let delay = delivery_delay(
                z,
                state.downlink_rate_bps[sat],
                local,
                route.as_ref(),
                cfg.reward.cloud_backhaul_delay_s,
            );
            for _ in 0..count {
                delays.push(delay);
                thresholds.push(cfg.catalog.deadlines_s[content]);
            }
            served.push(ServedRequest {
                sat,
                content,
                count,
                route,
                delay_s: delay,
            });
        }
    }
    let discarded = count_discarded(&delays, &thresholds)?;
    let total = state.requests.total();
    let success = success_rate(discarded, total)?;
    let traffic_req = request_traffic(&served, action, sizes);
    let traffic_update = update_traffic(&state.prev_cache, action, sizes)?;
    let traffic_total = traffic_req + traffic_update;
    let r = reward(success, traffic_total, cfg.reward.lambda1, cfg.reward.lambda2, tr_max);
    Ok(SlotOutcome {
        metrics: SlotMetrics {
            success_rate: success,
            discarded,
            total_requests: total,
            traffic_req,
            traffic_update,
            traffic_total,
            reward: r,
        },
        served,
    })
}

fn sizes_equal(sizes: &[f64], content: usize) -> bool {
    sizes.iter().all(|&s| s == sizes[content])
}

fn best_holder(tree: &netgraph::ShortestPaths, content: usize, cache: &CacheMatrix) -> Option<RoutePlan> {
    let mut best: Option<usize> = None;
    for m in 0..cache.num_sats() {
        if !cache.get(m, content) {
            continue;
        }
        let Some(p) = tree.paths[m].as_ref() else { continue };
        let replace = match best {
            None => true,
            Some(b) => {
                let bp = tree.paths[b].as_ref().unwrap();
                match tree.delay[m].total_cmp(&tree.delay[b]) {
                    std::cmp::Ordering::Less => true,
                    std::cmp::Ordering::Equal => p < bp,
                    std::cmp::Ordering::Greater => false,
                }
            }
        };
        if replace {
            best = Some(m);
        }
    }
    best.and_then(|m| tree.plan_to(m))
}

/// Result of [`CacheEnv::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub outcome: SlotOutcome,
    pub reward: f64,
    /// True when the slot was the last of the episode.
    pub done: bool,
}

/// Stateful environment driving slots with its own random stream.
#[derive(Debug, Clone)]
pub struct CacheEnv {
    cfg: EnvConfig,
    popularity: Vec<f64>,
    tr_max: f64,
    rng: ChaCha8Rng,
    state: EnvState,
    episode_start_s: f64,
    trace: Option<(Vec<RequestSet>, usize)>,
}

impl CacheEnv {
    pub fn new(cfg: EnvConfig, rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let popularity = cfg.catalog.popularity()?;
        let n = cfg.num_sats();
        let f = cfg.catalog.len();
        let mut env = Self {
            popularity,
            tr_max: 1.0,
            rng,
            state: placeholder_state(n, f, cfg.capacity),
            episode_start_s: 0.0,
            trace: None,
            cfg,
        };
        env.reset(0.0)?;
        env.tr_max = match env.cfg.reward.tr_max_bits {
            Some(t) => t,
            None => env.cfg.default_tr_max(env.state.graph.hop_diameter()),
        };
        Ok(env)
    }

    pub fn seeded(cfg: EnvConfig, seed: u64) -> Result<Self> {
        Self::new(cfg, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn tr_max(&self) -> f64 {
        self.tr_max
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Replays request sets in order instead of sampling them.
    pub fn replay_requests(&mut self, trace: Vec<RequestSet>) -> Result<()> {
        let (n, f) = (self.cfg.num_sats(), self.cfg.catalog.len());
        if trace.is_empty() || trace.iter().any(|r| r.num_sats() != n || r.num_contents() != f) {
            return Err(Error::Shape(format!("request trace must be non-empty {n}x{f} sets")));
        }
        self.trace = Some((trace, 0));
        Ok(())
    }

    /// Starts an episode at `start_s` seconds with an empty cache.
    pub fn reset(&mut self, start_s: f64) -> Result<&EnvState> {
        self.episode_start_s = start_s;
        let empty = CacheMatrix::new(self.cfg.num_sats(), self.cfg.catalog.len(), self.cfg.capacity);
        self.state = self.observe(0, empty)?;
        Ok(&self.state)
    }

    fn next_requests(&mut self) -> RequestSet {
        if let Some((trace, cursor)) = &mut self.trace {
            let r = trace[*cursor % trace.len()].clone();
            *cursor += 1;
            return r;
        }
        workload::generate_requests(
            &self.popularity,
            self.cfg.requests_per_sat,
            self.cfg.num_sats(),
            &mut self.rng,
        )
    }

    fn observe(&mut self, slot: usize, prev_cache: CacheMatrix) -> Result<EnvState> {
        let time_s = self.episode_start_s + slot as f64 * self.cfg.slot_seconds;
        let satellites = constellation::propagate(&self.cfg.constellation, time_s)?;
        let requests = self.next_requests();
        let distance = self.cfg.downlink_distance_m();
        let n = self.cfg.num_sats();
        let mut rain_db = Vec::with_capacity(n);
        let mut downlink_rate_bps = Vec::with_capacity(n);
        for sat in 0..n {
            let rain = channel::sample_rain(&self.cfg.rain, &mut self.rng);
            let gain = channel::downlink_gain(&self.cfg.budget, distance, rain)?;
            let concurrent = requests.row_sum(sat) as usize;
            rain_db.push(rain);
            downlink_rate_bps.push(channel::downlink_rate_shared(&self.cfg.budget, gain, concurrent));
        }
        let graph = netgraph::build_graph(
            &self.cfg.constellation,
            &satellites,
            &prev_cache,
            &requests,
            &self.cfg.budget,
            &self.cfg.graph,
        )?;
        Ok(EnvState {
            slot,
            time_s,
            satellites,
            rain_db,
            downlink_rate_bps,
            prev_cache,
            requests,
            graph,
        })
    }

    /// Applies `action` as this slot's placement, scores the slot and
    /// advances to the next one.
    pub fn step(&mut self, action: &CacheMatrix) -> Result<Step> {
        let outcome = evaluate_slot(&self.cfg, self.tr_max, &self.state, action)?;
        let next_slot = self.state.slot + 1;
        let placed = action.clone().with_capacity(self.cfg.capacity);
        self.state = self.observe(next_slot, placed)?;
        Ok(Step {
            reward: outcome.metrics.reward,
            done: next_slot >= self.cfg.slots_per_episode,
            outcome,
        })
    }
}

fn placeholder_state(n: usize, f: usize, capacity: usize) -> EnvState {
    EnvState {
        slot: 0,
        time_s: 0.0,
        satellites: Vec::new(),
        rain_db: Vec::new(),
        downlink_rate_bps: Vec::new(),
        prev_cache: CacheMatrix::new(n, f, capacity),
        requests: RequestSet::zeros(n, f),
        graph: GraphSnapshot {
            node_features: crate::nn::Tensor::zeros(&[0, 0]),
            edges: Vec::new(),
            edge_features: crate::nn::Tensor::zeros(&[0, 0]),
            adjacency: Vec::new(),
        },
    }
}
