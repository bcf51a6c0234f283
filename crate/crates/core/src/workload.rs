//! Content catalog and Zipf request generation.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Megabyte as used for content sizes (10^6 bytes).
pub const BITS_PER_MB: f64 = 8.0e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatalogConfig {
    pub sizes_mb: Vec<f64>,
    pub deadlines_s: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub zipf_alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl Default for CatalogConfig {
    fn default() -> Self {
        Self {
            sizes_mb: vec![100.0; 6],
            deadlines_s: vec![2.0; 6],
            zipf_alpha: 1.0,
        }
    }
}

impl CatalogConfig {
    pub fn to_catalog(&self) -> Result<ContentCatalog> {
        if self.sizes_mb.len() != self.deadlines_s.len() {
            return Err(Error::validation(
                "catalog.deadlines_s",
                format!(
                    "has {} entries but catalog.sizes_mb has {}",
                    self.deadlines_s.len(),
                    self.sizes_mb.len()
                ),
            ));
        }
        let catalog = ContentCatalog {
            sizes_bits: self.sizes_mb.iter().map(|mb| mb * BITS_PER_MB).collect(),
            deadlines_s: self.deadlines_s.clone(),
            zipf_alpha: self.zipf_alpha,
        };
        catalog.validate()?;
        Ok(catalog)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentCatalog {
    pub sizes_bits: Vec<f64>,
    pub deadlines_s: Vec<f64>,
    pub zipf_alpha: f64,
}

impl ContentCatalog {
    pub fn uniform(count: usize, size_bits: f64, deadline_s: f64, zipf_alpha: f64) -> Self {
        Self {
            sizes_bits: vec![size_bits; count],
            deadlines_s: vec![deadline_s; count],
            zipf_alpha,
        }
    }

    pub fn len(&self) -> usize {
        self.sizes_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes_bits.is_empty()
    }

    pub fn max_size_bits(&self) -> f64 {
        self.sizes_bits.iter().copied().fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes_bits.is_empty() {
            return Err(Error::validation("catalog.sizes_mb", "needs at least one content"));
        }
        if self.sizes_bits.len() != self.deadlines_s.len() {
            return Err(Error::validation("catalog.deadlines_s", "length differs from sizes"));
        }
        if let Some(i) = self.sizes_bits.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::validation(format!("catalog.sizes_mb[{i}]"), "must be > 0"));
        }
        if let Some(i) = self.deadlines_s.iter().position(|d| !(*d > 0.0)) {
            return Err(Error::validation(format!("catalog.deadlines_s[{i}]"), "must be > 0"));
        }
        if !(self.zipf_alpha >= 0.0 && self.zipf_alpha.is_finite()) {
            return Err(Error::validation("catalog.zipf_alpha", "must be >= 0"));
        }
        Ok(())
    }

    pub fn popularity(&self) -> Result<Vec<f64>> {
        zipf_popularity(self.len(), self.zipf_alpha)
    }
}

/// Zipf popularity `P_f = f^-alpha / sum_k k^-alpha` over ranks `1..=F`.
pub fn zipf_popularity(count: usize, alpha: f64) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::Domain("catalog must hold at least one content".into()));
    }
    if !(alpha >= 0.0) {
        return Err(Error::Domain(format!("zipf exponent must be >= 0, got {alpha}")));
    }
    let weights: Vec<f64> = (1..=count).map(|f| (f as f64).powf(-alpha)).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Per-slot request counts, `counts[n * F + f]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestSet {
    num_sats: usize,
    num_contents: usize,
    counts: Vec<u32>,
}

impl RequestSet {
    pub fn zeros(num_sats: usize, num_contents: usize) -> Self {
        Self {
            num_sats,
            num_contents,
            counts: vec![0; num_sats * num_contents],
        }
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let num_contents = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_contents) {
            return Err(Error::Shape("request rows have unequal lengths".into()));
        }
        Ok(Self {
            num_sats: rows.len(),
            num_contents,
            counts: rows.concat(),
        })
    }

    pub fn num_sats(&self) -> usize {
        self.num_sats
    }

    pub fn num_contents(&self) -> usize {
        self.num_contents
    }

    pub fn get(&self, sat: usize, content: usize) -> u32 {
        self.counts[sat * self.num_contents + content]
    }

    pub fn set(&mut self, sat: usize, content: usize, count: u32) {
        self.counts[sat * self.num_contents + content] = count;
    }

    pub fn row(&self, sat: usize) -> &[u32] {
        &self.counts[sat * self.num_contents..(sat + 1) * self.num_contents]
    }

    pub fn row_sum(&self, sat: usize) -> u32 {
        self.row(sat).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Draws `per_sat` i.i.d. content indices per satellite from `popularity`.
pub fn generate_requests<R: Rng + ?Sized>(
    popularity: &[f64],
    per_sat: usize,
    num_sats: usize,
    rng: &mut R,
) -> RequestSet {
    let mut cumulative = Vec::with_capacity(popularity.len());
    let mut acc = 0.0;
    for p in popularity {
        acc += p;
        cumulative.push(acc);
    }
    let mut set = RequestSet::zeros(num_sats, popularity.len());
    for n in 0..num_sats {
        for _ in 0..per_sat {
            let u: f64 = rng.gen::<f64>() * acc;
            let f = cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(popularity.len() - 1);
            set.counts[n * set.num_contents + f] += 1;
        }
    }
    set
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub slot: usize,
    pub sat_id: usize,
    pub content_id: usize,
    pub count: u32,
}

/// Writes the nonzero entries of a sequence of request sets as
/// `slot,sat_id,content_id,count` rows.
pub fn write_trace<W: Write>(out: W, slots: &[RequestSet]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (slot, set) in slots.iter().enumerate() {
        for n in 0..set.num_sats {
            for f in 0..set.num_contents {
                let count = set.get(n, f);
                if count > 0 {
                    w.serialize(TraceRecord {
                        slot,
                        sat_id: n,
                        content_id: f,
                        count,
                    })?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace written by [`write_trace`] back into dense request sets.
pub fn read_trace<R: Read>(input: R, num_sats: usize, num_contents: usize) -> Result<Vec<RequestSet>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut slots: Vec<RequestSet> = Vec::new();
    for rec in rdr.deserialize() {
        let rec: TraceRecord = rec?;
        if rec.sat_id >= num_sats || rec.content_id >= num_contents {
            return Err(Error::Shape(format!(
                "trace entry (sat {}, content {}) outside {num_sats}x{num_contents}",
                rec.sat_id, rec.content_id
            )));
        }
        while slots.len() <= rec.slot {
            slots.push(RequestSet::zeros(num_sats, num_contents));
        }
        let set = &mut slots[rec.slot];
        set.set(rec.sat_id, rec.content_id, set.get(rec.sat_id, rec.content_id) + rec.count);
    }
    Ok(slots)
}
