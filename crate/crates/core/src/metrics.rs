//! Per-packet and per-VUE records, the joint PDF of BLER and packet latency,
//! and the evaluation result files.
//!
//! Files written by [`export`]:
//!
//! - `packets.csv`: `run,link_id,slice_id,arrival_tti,outcome,latency_ms,size_bits`
//!   (`latency_ms` empty for dropped packets)
//! - `vues.csv`: `run,link_id,slice_id,attempts,failures,bler`
//! - `joint_pdf.csv`: `bler_bin_lo,bler_bin_hi,lat_bin_lo,lat_bin_hi,density`
//! - `cycles.csv`: `run,cycle,action_index,revenue,f0,f1,...` with the
//!   snapshot observed at the end of each cycle
//! - `summary.json`
//!
//! Floats in CSV files carry 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::revenue::delivered_ratio;
use crate::slice::SliceId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub bler_bins: usize,
    pub bler_max: f64,
    pub latency_bins: usize,
    pub latency_max_ms: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            bler_bins: 20,
            bler_max: 0.5,
            latency_bins: 20,
            latency_max_ms: 100.0,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bler_bins == 0 || self.latency_bins == 0 {
            return Err(Error::Config("metrics.bler_bins and metrics.latency_bins must be >= 1".into()));
        }
        if !(self.bler_max > 0.0 && self.bler_max <= 1.0) {
            return Err(Error::Config("metrics.bler_max must be in (0, 1]".into()));
        }
        if !(self.latency_max_ms > 0.0 && self.latency_max_ms.is_finite()) {
            return Err(Error::Config("metrics.latency_max_ms must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Delivered,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketRecord {
    /// Evaluation run the packet belongs to.
    pub run: u32,
    pub link_id: usize,
    pub slice_id: SliceId,
    pub arrival_tti: u64,
    pub outcome: Outcome,
    pub latency_ms: Option<u64>,
    pub size_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VueRecord {
    pub run: u32,
    pub link_id: usize,
    pub slice_id: SliceId,
    pub attempts: u64,
    pub failures: u64,
}

impl VueRecord {
    pub fn bler(&self) -> f64 {
        per_vue_bler(self.attempts, self.failures)
    }
}

/// Failed share of a VUE's transmission attempts; 0 without attempts.
pub fn per_vue_bler(attempts: u64, failures: u64) -> f64 {
    debug_assert!(failures <= attempts);
    if attempts == 0 {
        0.0
    } else {
        failures as f64 / attempts as f64
    }
}

/// One controller decision and the snapshot that followed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub run: u32,
    pub cycle: u64,
    pub action_index: usize,
    pub revenue: f64,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPdf {
    pub bler_edges: Vec<f64>,
    pub latency_edges: Vec<f64>,
    /// `density[bler_bin][latency_bin]`.
    pub density: Vec<Vec<f64>>,
    /// Number of samples; zero means the density is all zero.
    pub samples: usize,
}

impl JointPdf {
    pub fn integral(&self) -> f64 {
        let mut total = 0.0;
        for (i, row) in self.density.iter().enumerate() {
            let bw = self.bler_edges[i + 1] - self.bler_edges[i];
            for (j, d) in row.iter().enumerate() {
                total += d * bw * (self.latency_edges[j + 1] - self.latency_edges[j]);
            }
        }
        total
    }

    pub fn is_empty(&self) -> bool {
        self.samples == 0
    }
}

fn edges(bins: usize, max: f64) -> Vec<f64> {
    (0..=bins).map(|i| max * i as f64 / bins as f64).collect()
}

fn bin_of(v: f64, bins: usize, max: f64) -> usize {
    if !(v > 0.0) {
        return 0;
    }
    ((v / max * bins as f64) as usize).min(bins - 1)
}

/// 2-D histogram of `(bler, latency_ms)` normalised to unit mass. Samples
/// beyond the last edge fall into the last bin.
pub fn joint_pdf(samples: &[(f64, f64)], cfg: &MetricsConfig) -> JointPdf {
    let bler_edges = edges(cfg.bler_bins, cfg.bler_max);
    let latency_edges = edges(cfg.latency_bins, cfg.latency_max_ms);
    let mut counts = vec![vec![0u64; cfg.latency_bins]; cfg.bler_bins];
    for &(b, l) in samples {
        counts[bin_of(b, cfg.bler_bins, cfg.bler_max)][bin_of(l, cfg.latency_bins, cfg.latency_max_ms)] += 1;
    }
    let n = samples.len() as f64;
    let area = (cfg.bler_max / cfg.bler_bins as f64) * (cfg.latency_max_ms / cfg.latency_bins as f64);
    let density = counts
        .iter()
        .map(|row| {
            row.iter()
                .map(|&c| if samples.is_empty() { 0.0 } else { c as f64 / (n * area) })
                .collect()
        })
        .collect();
    JointPdf {
        bler_edges,
        latency_edges,
        density,
        samples: samples.len(),
    }
}

/// One `(bler, latency)` sample per delivered packet, paired with the BLER of
/// the VUE that sent it.
pub fn joint_samples(packets: &[PacketRecord], vues: &[VueRecord]) -> Vec<(f64, f64)> {
    let bler = |run: u32, link: usize| {
        vues.iter()
            .find(|v| v.run == run && v.link_id == link)
            .map_or(0.0, VueRecord::bler)
    };
    let mut cache: std::collections::HashMap<(u32, usize), f64> = Default::default();
    packets
        .iter()
        .filter_map(|p| {
            let lat = p.latency_ms?;
            let b = *cache.entry((p.run, p.link_id)).or_insert_with(|| bler(p.run, p.link_id));
            Some((b, lat as f64))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSummary {
    pub packets: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub delivered_ratio: f64,
    pub mean_latency_ms: f64,
    pub p95_latency_ms: f64,
    /// Mean over VUEs of the per-VUE BLER.
    pub mean_bler: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: u32,
    pub mean_revenue: f64,
    pub safety_delivered_ratio: f64,
    pub autonomous_delivered_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub controller: String,
    pub safety: SliceSummary,
    pub autonomous: SliceSummary,
    pub mean_revenue: f64,
    pub runs: Vec<RunSummary>,
    pub joint_pdf_samples: usize,
    pub config: SimConfig,
}

impl Summary {
    pub fn slice(&self, s: SliceId) -> &SliceSummary {
        match s {
            SliceId::Safety => &self.safety,
            SliceId::Autonomous => &self.autonomous,
        }
    }
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[u64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1] as f64
}

pub fn slice_summary(packets: &[PacketRecord], vues: &[VueRecord], slice: SliceId) -> SliceSummary {
    let mine = packets.iter().filter(|p| p.slice_id == slice);
    let (mut delivered, mut dropped) = (0u64, 0u64);
    let mut lat: Vec<u64> = Vec::new();
    for p in mine {
        match p.outcome {
            Outcome::Delivered => {
                delivered += 1;
                lat.push(p.latency_ms.unwrap_or(0));
            }
            Outcome::Dropped => dropped += 1,
        }
    }
    lat.sort_unstable();
    let mean_latency_ms = if lat.is_empty() {
        0.0
    } else {
        lat.iter().sum::<u64>() as f64 / lat.len() as f64
    };
    let blers: Vec<f64> = vues
        .iter()
        .filter(|v| v.slice_id == slice)
        .map(VueRecord::bler)
        .collect();
    let mean_bler = if blers.is_empty() {
        0.0
    } else {
        blers.iter().sum::<f64>() / blers.len() as f64
    };
    SliceSummary {
        packets: delivered + dropped,
        delivered,
        dropped,
        delivered_ratio: delivered_ratio(delivered, dropped),
        mean_latency_ms,
        p95_latency_ms: percentile(&lat, 95.0),
        mean_bler,
    }
}

/// Builds the summary; `revenues[r]` holds the per-cycle revenues of run `r`.
pub fn summarize(
    controller: &str,
    packets: &[PacketRecord],
    vues: &[VueRecord],
    revenues: &[Vec<f64>],
    pdf: &JointPdf,
    config: &SimConfig,
) -> Summary {
    let all: Vec<f64> = revenues.iter().flatten().copied().collect();
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let runs = revenues
        .iter()
        .enumerate()
        .map(|(r, rev)| {
            let r = r as u32;
            let p: Vec<PacketRecord> = packets.iter().filter(|p| p.run == r).cloned().collect();
            let v: Vec<VueRecord> = vues.iter().filter(|v| v.run == r).cloned().collect();
            RunSummary {
                run: r,
                mean_revenue: mean(rev),
                safety_delivered_ratio: slice_summary(&p, &v, SliceId::Safety).delivered_ratio,
                autonomous_delivered_ratio: slice_summary(&p, &v, SliceId::Autonomous).delivered_ratio,
            }
        })
        .collect();
    Summary {
        controller: controller.to_string(),
        safety: slice_summary(packets, vues, SliceId::Safety),
        autonomous: slice_summary(packets, vues, SliceId::Autonomous),
        mean_revenue: mean(&all),
        runs,
        joint_pdf_samples: pdf.samples,
        config: config.clone(),
    }
}

pub(crate) fn f17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn packets_csv(records: &[PacketRecord]) -> String {
    let mut s = String::from("run,link_id,slice_id,arrival_tti,outcome,latency_ms,size_bits\n");
    for r in records {
        let outcome = match r.outcome {
            Outcome::Delivered => "delivered",
            Outcome::Dropped => "dropped",
        };
        let lat = r.latency_ms.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.run, r.link_id, r.slice_id, r.arrival_tti, outcome, lat, r.size_bits
        );
    }
    s
}

pub fn vues_csv(vues: &[VueRecord]) -> String {
    let mut s = String::from("run,link_id,slice_id,attempts,failures,bler\n");
    for v in vues {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            v.run,
            v.link_id,
            v.slice_id,
            v.attempts,
            v.failures,
            f17(v.bler())
        );
    }
    s
}

pub fn joint_pdf_csv(pdf: &JointPdf) -> String {
    let mut s = String::from("bler_bin_lo,bler_bin_hi,lat_bin_lo,lat_bin_hi,density\n");
    for (i, row) in pdf.density.iter().enumerate() {
        for (j, d) in row.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                f17(pdf.bler_edges[i]),
                f17(pdf.bler_edges[i + 1]),
                f17(pdf.latency_edges[j]),
                f17(pdf.latency_edges[j + 1]),
                f17(*d)
            );
        }
    }
    s
}

pub fn cycles_csv(cycles: &[CycleRecord]) -> String {
    let width = cycles.first().map_or(0, |c| c.features.len());
    let mut s = String::from("run,cycle,action_index,revenue");
    for i in 0..width {
        let _ = write!(s, ",f{i}");
    }
    s.push('\n');
    for c in cycles {
        let _ = write!(s, "{},{},{},{}", c.run, c.cycle, c.action_index, f17(c.revenue));
        for f in &c.features {
            let _ = write!(s, ",{}", f17(*f));
        }
        s.push('\n');
    }
    s
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Everything one evaluation writes to disk.
#[derive(Debug, Clone, Copy)]
pub struct ExportSet<'a> {
    pub packets: &'a [PacketRecord],
    pub vues: &'a [VueRecord],
    pub cycles: &'a [CycleRecord],
    pub pdf: &'a JointPdf,
    pub summary: &'a Summary,
}

/// Writes `packets.csv`, `vues.csv`, `joint_pdf.csv`, `cycles.csv` and
/// `summary.json`.
pub fn export(dir: &Path, set: ExportSet<'_>) -> Result<()> {
    let ExportSet {
        packets,
        vues,
        cycles,
        pdf,
        summary,
    } = set;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir.join("packets.csv"), &packets_csv(packets))?;
    write(dir.join("vues.csv"), &vues_csv(vues))?;
    write(dir.join("joint_pdf.csv"), &joint_pdf_csv(pdf))?;
    write(dir.join("cycles.csv"), &cycles_csv(cycles))?;
    let json = serde_json::to_string_pretty(summary).expect("summary is serializable");
    write(dir.join("summary.json"), &json)
}

fn bad_row(path: &Path, line: usize, what: &str) -> Error {
    Error::Config(format!("{}:{}: {what}", path.display(), line + 1))
}

/// Reads a `packets.csv` written by [`export`].
pub fn read_packets_csv(path: &Path) -> Result<Vec<PacketRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad_row(path, n, "expected 7 fields"));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad_row(path, n, "bad integer"));
        out.push(PacketRecord {
            run: num(f[0])? as u32,
            link_id: num(f[1])? as usize,
            slice_id: f[2].parse().map_err(|_| bad_row(path, n, "bad slice id"))?,
            arrival_tti: num(f[3])?,
            outcome: match f[4] {
                "delivered" => Outcome::Delivered,
                "dropped" => Outcome::Dropped,
                _ => return Err(bad_row(path, n, "bad outcome")),
            },
            latency_ms: if f[5].is_empty() { None } else { Some(num(f[5])?) },
            size_bits: num(f[6])?,
        });
    }
    Ok(out)
}
