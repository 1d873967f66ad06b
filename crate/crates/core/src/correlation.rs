//! Cross-nest and temporal detection-event correlations.
//!
//! Cross-nest: for every isolated cluster of one stabilizer type, look at the
//! other nest at each offset of the coincidence window and tally which
//! cluster pattern (or none) is anchored there. The baseline is the marginal
//! rate of that pattern per anchor round.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, StabilizerType};
use crate::error::{Error, Result};
use crate::extract::{detect_events, ClusterPolicy, Clusterer};
use crate::propagation::{DetectionEvent, DetectionPattern};
use crate::record::MeasurementRecord;

pub const CORRELATION_SCHEMA: &str = "corr.v1";
pub const DEFAULT_WINDOW: u64 = 2;
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub given: DetectionPattern,
    /// `None` when no cluster of the other nest is anchored at the offset.
    pub target: Option<DetectionPattern>,
    /// Target anchor round minus given anchor round.
    pub offset: i64,
    pub count: u64,
    pub conditional: f64,
    pub baseline: f64,
    pub excess: f64,
    pub ci: [f64; 2],
}

impl Cell {
    pub fn significant(&self) -> bool {
        self.ci[0] > 0.0 || self.ci[1] < 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditionals {
    pub given_type: StabilizerType,
    pub target_type: StabilizerType,
    /// Count of each given pattern inside the margins.
    pub given_clusters: Vec<(DetectionPattern, u64)>,
    /// Given clusters times offsets in the window.
    pub windows_examined: u64,
    pub cells: Vec<Cell>,
}

impl Conditionals {
    pub fn cell(&self, given: &DetectionPattern, target: Option<&DetectionPattern>, offset: i64) -> Option<&Cell> {
        self.cells.iter().find(|c| &c.given == given && c.target.as_ref() == target && c.offset == offset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCorrelationReport {
    pub circuit_id: String,
    pub window: u64,
    pub margin: u64,
    pub rounds_observed: u64,
    pub z_given_x: Conditionals,
    pub x_given_z: Conditionals,
}

#[derive(Serialize, Deserialize)]
struct CorrelationDoc {
    schema: String,
    #[serde(flatten)]
    report: CrossCorrelationReport,
}

impl CrossCorrelationReport {
    pub fn to_json(&self) -> String {
        let doc = CorrelationDoc { schema: CORRELATION_SCHEMA.into(), report: self.clone() };
        serde_json::to_string_pretty(&doc).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CorrelationDoc = serde_json::from_str(text)?;
        if doc.schema != CORRELATION_SCHEMA {
            return Err(Error::Schema { expected: CORRELATION_SCHEMA.into(), found: doc.schema });
        }
        Ok(doc.report)
    }
}

/// Isolated clusters of one stabilizer type as (anchor round, canonical pattern).
fn anchored_clusters(events: &[DetectionEvent], measure: &[usize], policy: &ClusterPolicy) -> Vec<(i64, DetectionPattern)> {
    let local = |e: &DetectionEvent| measure.iter().position(|&m| m == e.measure_qubit);
    let mut clusterer = Clusterer::new(*policy);
    let mut out = Vec::new();
    let mut take = |done: Vec<Vec<DetectionEvent>>| {
        for c in done {
            let pattern = DetectionPattern::from_events(c.iter().map(|e| DetectionEvent::new(measure[e.measure_qubit], e.round)));
            let (canonical, anchor) = pattern.canonical();
            out.push((anchor, canonical));
        }
    };
    for e in events {
        if let Some(p) = local(e) {
            take(clusterer.push(DetectionEvent::new(p, e.round)));
        }
    }
    take(clusterer.finish());
    out.sort();
    out
}

fn excess_interval(count: u64, n: u64, marginal: u64, rounds: u64) -> (f64, f64, f64, [f64; 2]) {
    let conditional = count as f64 / n as f64;
    let baseline = marginal as f64 / rounds as f64;
    let excess = conditional - baseline;
    let se = (conditional * (1.0 - conditional) / n as f64 + baseline * (1.0 - baseline) / rounds as f64).sqrt();
    // Zero-count cells get the rule-of-three width instead of a zero-width interval.
    let se = se.max(1.0 / n as f64);
    (conditional, baseline, excess, [excess - Z95 * se, excess + Z95 * se])
}

fn conditionals(
    given: &[(i64, DetectionPattern)],
    target: &[(i64, DetectionPattern)],
    types: (StabilizerType, StabilizerType),
    window: i64,
    range: (i64, i64),
) -> Conditionals {
    let (lo, hi) = range;
    let inside = |t: i64| t >= lo && t < hi;
    let rounds = (hi - lo) as u64;
    let mut marginal: BTreeMap<&DetectionPattern, u64> = BTreeMap::new();
    for (_, p) in target.iter().filter(|(t, _)| inside(*t)) {
        *marginal.entry(p).or_default() += 1;
    }
    let by_round: BTreeMap<i64, Vec<&DetectionPattern>> = target.iter().fold(BTreeMap::new(), |mut m, (t, p)| {
        m.entry(*t).or_default().push(p);
        m
    });
    let mut given_clusters: BTreeMap<DetectionPattern, u64> = BTreeMap::new();
    let mut joint: BTreeMap<(&DetectionPattern, Option<&DetectionPattern>, i64), u64> = BTreeMap::new();
    for (t, g) in given.iter().filter(|(t, _)| inside(t - window) && inside(t + window)) {
        *given_clusters.entry(g.clone()).or_default() += 1;
        for offset in -window..=window {
            match by_round.get(&(t + offset)) {
                Some(ps) => ps.iter().for_each(|p| *joint.entry((g, Some(*p), offset)).or_default() += 1),
                None => *joint.entry((g, None, offset)).or_default() += 1,
            }
        }
    }
    let mut cells = Vec::new();
    for (g, &n) in &given_clusters {
        let targets = marginal.keys().map(|p| Some(*p)).chain([None]);
        for target in targets {
            for offset in -window..=window {
                let count = joint.get(&(g, target, offset)).copied().unwrap_or(0);
                let m = match target {
                    Some(p) => marginal[p],
                    None => rounds - marginal.values().sum::<u64>(),
                };
                let (conditional, baseline, excess, ci) = excess_interval(count, n, m, rounds);
                cells.push(Cell { given: g.clone(), target: target.cloned(), offset, count, conditional, baseline, excess, ci });
            }
        }
    }
    let windows_examined = given_clusters.values().sum::<u64>() * (2 * window as u64 + 1);
    Conditionals {
        given_type: types.0,
        target_type: types.1,
        given_clusters: given_clusters.into_iter().collect(),
        windows_examined,
        cells,
    }
}

/// Z-nest patterns conditioned on X-nest clusters within `window` rounds, and
/// the reverse direction.
pub fn cross_correlate(
    record: &MeasurementRecord,
    circuit: &Circuit,
    window: u64,
    policy: &ClusterPolicy,
) -> Result<CrossCorrelationReport> {
    if record.circuit_hash != circuit.structure_hash() {
        return Err(Error::CircuitMismatch { expected: circuit.structure_id(), found: format!("{:016x}", record.circuit_hash) });
    }
    policy.validate()?;
    let zq = circuit.measure_indices_of(StabilizerType::ZType);
    let xq = circuit.measure_indices_of(StabilizerType::XType);
    if zq.is_empty() || xq.is_empty() {
        return Err(Error::InvalidArgument(format!("{} lacks one of the two stabilizer types", circuit.name)));
    }
    let margin = policy.time_rounds as u64 + 2 + window;
    if record.rounds <= 2 * margin {
        return Err(Error::InvalidArgument(format!("{} rounds leave nothing inside the {margin}-round margins", record.rounds)));
    }
    let events = detect_events(record);
    let z = anchored_clusters(&events, &zq, policy);
    let x = anchored_clusters(&events, &xq, policy);
    let range = (margin as i64, (record.rounds - margin) as i64);
    let w = window as i64;
    Ok(CrossCorrelationReport {
        circuit_id: circuit.structure_id(),
        window,
        margin,
        rounds_observed: record.rounds - 2 * margin,
        z_given_x: conditionals(&x, &z, (StabilizerType::XType, StabilizerType::ZType), w, range),
        x_given_z: conditionals(&z, &x, (StabilizerType::ZType, StabilizerType::XType), w, range),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagCell {
    pub lag: u64,
    pub pairs: u64,
    /// P(event at t + lag | event at t); absent without events.
    pub conditional: Option<f64>,
    pub baseline: Option<f64>,
    pub excess: Option<f64>,
    pub ci: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autocorrelation {
    pub measure_qubit: usize,
    pub events: u64,
    pub lags: Vec<LagCell>,
}

/// Per measure qubit, event-to-event conditionals against the marginal event rate.
pub fn temporal_autocorrelate(record: &MeasurementRecord, max_lag: u64) -> Result<Vec<Autocorrelation>> {
    if max_lag == 0 {
        return Err(Error::InvalidArgument("max_lag must be at least 1".into()));
    }
    let rounds = record.rounds;
    let mut series = vec![Vec::with_capacity(rounds as usize); record.num_measure];
    let mut prev = 0u64;
    for r in 0..rounds {
        let cur = record.round_mask(r);
        for (m, s) in series.iter_mut().enumerate() {
            s.push((cur ^ prev) >> m & 1 == 1);
        }
        prev = cur;
    }
    Ok(series
        .iter()
        .enumerate()
        .map(|(m, s)| {
            let total = s.iter().filter(|&&b| b).count() as u64;
            let lags = (1..=max_lag)
                .map(|k| {
                    let k_us = k as usize;
                    if rounds <= k {
                        return LagCell { lag: k, pairs: 0, conditional: None, baseline: None, excess: None, ci: None };
                    }
                    let head = &s[..s.len() - k_us];
                    let n = head.iter().filter(|&&b| b).count() as u64;
                    let pairs = head.iter().zip(&s[k_us..]).filter(|(a, b)| **a && **b).count() as u64;
                    if n == 0 {
                        return LagCell { lag: k, pairs, conditional: None, baseline: None, excess: None, ci: None };
                    }
                    let (conditional, baseline, excess, ci) = excess_interval(pairs, n, total, rounds);
                    LagCell { lag: k, pairs, conditional: Some(conditional), baseline: Some(baseline), excess: Some(excess), ci: Some(ci) }
                })
                .collect();
            Autocorrelation { measure_qubit: m, events: total, lags }
        })
        .collect())
}
