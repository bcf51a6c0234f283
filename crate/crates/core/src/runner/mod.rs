//! Experiment orchestration: config files, seeded runs of every scheme,
//! per-slot metrics, summaries and cross-run comparison tables.
//!
//! A run writes into its output directory:
//!
//! * `metrics.csv`: a schema comment line, a header, then one row per slot
//!   for training and greedy evaluation episodes.
//! * `summary.json`: per-episode means and evaluation averages, all derived
//!   from the rows of `metrics.csv`.
//! * `checkpoint.json`: learner parameters (learned schemes only).

mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{load_config, ExperimentConfig, ExperimentSection, Scheme};

use crate::agents::{cloud_policy, pcf_policy, train, ActionSpace, Observation, SacAgent};
use crate::env::{CacheEnv, CacheMatrix, EnvState, SlotMetrics};
use crate::nn::ParamStore;
use crate::workload::{self, ContentCatalog, RequestSet};
use crate::{Error, Result};

pub const METRICS_SCHEMA: &str = "# leocache-metrics v1";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Random streams derived from the run seed. Each consumer owns one so that,
/// for example, the environment's requests do not depend on the scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    TrainEnv = 0,
    AgentInit = 1,
    AgentSampling = 2,
    EvalEnv = 3,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub phase: Phase,
    pub episode: usize,
    pub slot: usize,
    pub scheme: Scheme,
    pub capacity: usize,
    pub per_sat: usize,
    pub reward: f64,
    pub success_rate: f64,
    pub traffic_req: f64,
    pub traffic_update: f64,
    pub traffic_total: f64,
    pub discarded: u64,
    pub total_requests: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Means {
    pub slots: usize,
    pub reward: f64,
    pub success_rate: f64,
    pub traffic_req: f64,
    pub traffic_update: f64,
    pub traffic_total: f64,
    pub discarded: f64,
}

impl Means {
    pub fn of<'a>(rows: impl IntoIterator<Item = &'a MetricsRow>) -> Self {
        let mut m = Means::default();
        for r in rows {
            m.slots += 1;
            m.reward += r.reward;
            m.success_rate += r.success_rate;
            m.traffic_req += r.traffic_req;
            m.traffic_update += r.traffic_update;
            m.traffic_total += r.traffic_total;
            m.discarded += r.discarded as f64;
        }
        if m.slots > 0 {
            let n = m.slots as f64;
            m.reward /= n;
            m.success_rate /= n;
            m.traffic_req /= n;
            m.traffic_update /= n;
            m.traffic_total /= n;
            m.discarded /= n;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeans {
    pub phase: Phase,
    pub episode: usize,
    pub means: Means,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scheme: Scheme,
    pub capacity: usize,
    pub per_sat: usize,
    pub seed: u64,
    pub catalog: ContentCatalog,
    pub episodes: Vec<EpisodeMeans>,
    /// Averages over every greedy evaluation slot.
    pub eval: Means,
}

impl RunSummary {
    /// Builds the summary from metrics rows alone.
    pub fn from_rows(cfg: &ExperimentConfig, catalog: ContentCatalog, rows: &[MetricsRow]) -> Self {
        let mut groups: BTreeMap<(Phase, usize), Vec<&MetricsRow>> = BTreeMap::new();
        for r in rows {
            groups.entry((r.phase, r.episode)).or_default().push(r);
        }
        Self {
            scheme: cfg.experiment.scheme,
            capacity: cfg.experiment.capacity,
            per_sat: cfg.experiment.requests_per_sat,
            seed: cfg.experiment.seed,
            catalog,
            episodes: groups
                .into_iter()
                .map(|((phase, episode), g)| EpisodeMeans {
                    phase,
                    episode,
                    means: Means::of(g),
                })
                .collect(),
            eval: Means::of(rows.iter().filter(|r| r.phase == Phase::Eval)),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Skip training and evaluate these parameters.
    pub checkpoint: Option<PathBuf>,
    /// Write the first evaluation episode's graphs as JSON lines.
    pub dump_graphs: bool,
    /// Write every evaluation slot's requests as a trace CSV.
    pub dump_requests: bool,
}

enum Policy {
    Learned(Box<SacAgent>),
    Pcf,
    Cloud,
}

impl Policy {
    fn act(&self, state: &EnvState, prev_requests: &RequestSet, capacity: usize) -> Result<CacheMatrix> {
        match self {
            Policy::Learned(agent) => {
                let obs = Observation::from_state(state)?;
                // Greedy selection never consumes randomness.
                let mut unused = rand::rngs::mock::StepRng::new(0, 0);
                let a = agent.select_action(&obs, &mut unused, true)?;
                agent.space().to_cache_matrix(&a)
            }
            Policy::Pcf => pcf_policy(prev_requests, capacity),
            Policy::Cloud => Ok(cloud_policy(
                state.requests.num_sats(),
                state.requests.num_contents(),
                capacity,
            )),
        }
    }
}

fn row(phase: Phase, episode: usize, slot: usize, cfg: &ExperimentConfig, m: &SlotMetrics) -> MetricsRow {
    MetricsRow {
        phase,
        episode,
        slot,
        scheme: cfg.experiment.scheme,
        capacity: cfg.experiment.capacity,
        per_sat: cfg.experiment.requests_per_sat,
        reward: m.reward,
        success_rate: m.success_rate,
        traffic_req: m.traffic_req,
        traffic_update: m.traffic_update,
        traffic_total: m.traffic_total,
        discarded: m.discarded,
        total_requests: m.total_requests,
    }
}

/// Runs one fixed-policy episode starting at `start_s`.
fn play_episode(
    env: &mut CacheEnv,
    policy: &Policy,
    start_s: f64,
    mut on_slot: impl FnMut(usize, &EnvState, &SlotMetrics) -> Result<()>,
) -> Result<()> {
    env.reset(start_s)?;
    let cfg = env.config();
    let (n, f, c) = (cfg.num_sats(), cfg.catalog.len(), cfg.capacity);
    let slots = cfg.slots_per_episode;
    let mut prev = RequestSet::zeros(n, f);
    for slot in 0..slots {
        let state = env.state().clone();
        let action = policy.act(&state, &prev, c)?;
        let step = env.step(&action)?;
        on_slot(slot, &state, &step.outcome.metrics)?;
        prev = state.requests;
    }
    Ok(())
}

/// Executes the configured scheme and writes the run artifacts to `out_dir`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let exp = &cfg.experiment;
    let env_cfg = cfg.env_config()?;
    let catalog = env_cfg.catalog.clone();
    let episode_s = exp.slots_per_episode as f64 * exp.slot_seconds;
    let mut rows = Vec::new();
    let mut train_env = CacheEnv::new(env_cfg.clone(), rng_for(exp.seed, Stream::TrainEnv))?;
    let mut eval_env = CacheEnv::new(env_cfg, rng_for(exp.seed, Stream::EvalEnv))?;

    let policy = match exp.scheme {
        Scheme::Gtsac | Scheme::SacNeighbor => {
            let space = ActionSpace::new(catalog.len(), exp.capacity)?;
            let obs = Observation::from_state(train_env.state())?;
            let (node_dim, edge_dim) = (obs.features.cols(), obs.graph.edge_features.cols());
            let sac = cfg.sac_config();
            let agent = match &opts.checkpoint {
                Some(path) => SacAgent::with_params(sac, node_dim, edge_dim, space, ParamStore::load(path)?)?,
                None => {
                    let mut init = rng_for(exp.seed, Stream::AgentInit);
                    let mut agent = SacAgent::new(sac, node_dim, edge_dim, space, &mut init)?;
                    let mut sampling = rng_for(exp.seed, Stream::AgentSampling);
                    let mut hook = |e: usize, s: usize, m: &SlotMetrics| {
                        rows.push(row(Phase::Train, e, s, cfg, m));
                        Ok(())
                    };
                    train(&mut train_env, &mut agent, exp.episodes, &mut sampling, &mut hook)?;
                    agent.params().save(&out_dir.join(CHECKPOINT_FILE))?;
                    agent
                }
            };
            Policy::Learned(Box::new(agent))
        }
        Scheme::Pcf | Scheme::Cloud => {
            if opts.checkpoint.is_some() {
                return Err(Error::Usage(format!("scheme {} has no checkpoint", exp.scheme)));
            }
            let policy = if exp.scheme == Scheme::Pcf { Policy::Pcf } else { Policy::Cloud };
            for e in 0..exp.episodes {
                play_episode(&mut train_env, &policy, e as f64 * episode_s, |s, _, m| {
                    rows.push(row(Phase::Train, e, s, cfg, m));
                    Ok(())
                })?;
            }
            policy
        }
    };

    let mut graphs = Vec::new();
    let mut requests = Vec::new();
    for e in 0..exp.eval_episodes {
        play_episode(&mut eval_env, &policy, e as f64 * episode_s, |s, state, m| {
            rows.push(row(Phase::Eval, e, s, cfg, m));
            if opts.dump_graphs && e == 0 {
                graphs.push(state.graph.to_json()?);
            }
            if opts.dump_requests {
                requests.push(state.requests.clone());
            }
            Ok(())
        })?;
    }

    write_metrics(&out_dir.join(METRICS_FILE), &rows)?;
    let summary = RunSummary::from_rows(cfg, catalog, &rows);
    let mut out = BufWriter::new(File::create(out_dir.join(SUMMARY_FILE))?);
    serde_json::to_writer_pretty(&mut out, &summary)?;
    out.write_all(b"\n")?;
    out.flush()?;
    if opts.dump_graphs {
        let mut g = BufWriter::new(File::create(out_dir.join("graphs.jsonl"))?);
        for line in &graphs {
            writeln!(g, "{line}")?;
        }
        g.flush()?;
    }
    if opts.dump_requests {
        workload::write_trace(File::create(out_dir.join("requests.csv"))?, &requests)?;
    }
    Ok(summary)
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{METRICS_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(file);
    if rows.is_empty() {
        w.write_record([
            "phase",
            "episode",
            "slot",
            "scheme",
            "capacity",
            "per_sat",
            "reward",
            "success_rate",
            "traffic_req",
            "traffic_update",
            "traffic_total",
            "discarded",
            "total_requests",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    let Some(body) = text.strip_prefix(METRICS_SCHEMA) else {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("missing schema line {METRICS_SCHEMA:?}"),
        });
    };
    let mut r = csv::Reader::from_reader(body.trim_start_matches(['\r', '\n']).as_bytes());
    r.deserialize()
        .map(|rec| {
            rec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path,
        message: e.to_string(),
    })
}

/// One line of the comparison table: evaluation means per configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub scheme: Scheme,
    pub capacity: usize,
    pub per_sat: usize,
    pub runs: usize,
    pub eval_slots: usize,
    pub success_rate: f64,
    pub traffic_update: f64,
    pub traffic_total: f64,
    pub reward: f64,
}

/// Aggregates evaluation rows of several runs per `(scheme, C, per_sat)` and
/// writes the table to `out`.
pub fn compare(dirs: &[PathBuf], out: &Path) -> Result<Vec<CompareRow>> {
    if dirs.len() < 2 {
        return Err(Error::Usage("compare needs at least two run directories".into()));
    }
    let mut catalog: Option<(PathBuf, ContentCatalog)> = None;
    let mut groups: BTreeMap<(Scheme, usize, usize), (usize, Vec<MetricsRow>)> = BTreeMap::new();
    for dir in dirs {
        let summary = read_summary(dir)?;
        match &catalog {
            None => catalog = Some((dir.clone(), summary.catalog.clone())),
            Some((first, c)) if *c != summary.catalog => {
                return Err(Error::Incompatible(format!(
                    "{} and {} use different content catalogs",
                    first.display(),
                    dir.display()
                )))
            }
            Some(_) => {}
        }
        let rows = read_metrics(&dir.join(METRICS_FILE))?;
        let key = (summary.scheme, summary.capacity, summary.per_sat);
        let entry = groups.entry(key).or_default();
        entry.0 += 1;
        entry.1.extend(rows.into_iter().filter(|r| r.phase == Phase::Eval));
    }
    let table: Vec<CompareRow> = groups
        .into_iter()
        .map(|((scheme, capacity, per_sat), (runs, rows))| {
            let m = Means::of(&rows);
            CompareRow {
                scheme,
                capacity,
                per_sat,
                runs,
                eval_slots: m.slots,
                success_rate: m.success_rate,
                traffic_update: m.traffic_update,
                traffic_total: m.traffic_total,
                reward: m.reward,
            }
        })
        .collect();
    let mut w = csv::Writer::from_path(out)?;
    for r in &table {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(table)
}
