//! From a measurement record to estimated class probabilities: detection
//! events, isolated clusters, classification against a nest, counting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::circuit::{check_schema, Circuit, StabilizerType};
use crate::error::{Error, Result};
use crate::nest::{class_lookup, Nest};
use crate::propagation::{DetectionEvent, DetectionPattern};
use crate::record::MeasurementRecord;

pub const ESTIMATE_SCHEMA: &str = "estnest.v1";

/// Events closer than `space_cells` positions and `time_rounds` rounds are
/// adjacent; clusters are connected components of adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPolicy {
    pub space_cells: u32,
    pub time_rounds: u32,
    pub max_cluster_size: usize,
}

impl Default for ClusterPolicy {
    fn default() -> Self {
        Self { space_cells: 2, time_rounds: 3, max_cluster_size: 2 }
    }
}

impl ClusterPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.space_cells == 0 || self.time_rounds == 0 {
            return Err(Error::InvalidArgument("isolation radius components must be at least 1".into()));
        }
        Ok(())
    }

    fn adjacent(&self, a: &DetectionEvent, b: &DetectionEvent) -> bool {
        a.measure_qubit.abs_diff(b.measure_qubit) < self.space_cells as usize && a.round.abs_diff(b.round) < self.time_rounds as u64
    }
}

/// Events of all measure qubits, sorted by (round, measure qubit).
pub fn detect_events(record: &MeasurementRecord) -> Vec<DetectionEvent> {
    let mut out = Vec::new();
    let mut prev = 0u64;
    for r in 0..record.rounds {
        let cur = record.round_mask(r);
        let mut diff = cur ^ prev;
        while diff != 0 {
            let m = diff.trailing_zeros() as usize;
            out.push(DetectionEvent::new(m, r as i64));
            diff &= diff - 1;
        }
        prev = cur;
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Clustering {
    pub clusters: Vec<Vec<DetectionEvent>>,
    pub ignored: u64,
}

/// Streaming connected components over time-sorted events; `measure_qubit`
/// is the spatial coordinate. Only clusters that may still grow are held.
#[derive(Debug, Clone)]
pub struct Clusterer {
    policy: ClusterPolicy,
    active: Vec<Vec<DetectionEvent>>,
    pub ignored: u64,
}

impl Clusterer {
    pub fn new(policy: ClusterPolicy) -> Self {
        Self { policy, active: Vec::new(), ignored: 0 }
    }

    fn emit(&mut self, done: Vec<Vec<DetectionEvent>>) -> Vec<Vec<DetectionEvent>> {
        let (keep, big): (Vec<_>, Vec<_>) = done.into_iter().partition(|c| c.len() <= self.policy.max_cluster_size);
        self.ignored += big.len() as u64;
        keep
    }

    /// Adds one event and returns the clusters that can no longer grow.
    pub fn push(&mut self, e: DetectionEvent) -> Vec<Vec<DetectionEvent>> {
        let horizon = e.round - self.policy.time_rounds as i64;
        let (mut done, live): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.active).into_iter().partition(|c| c.last().is_some_and(|x| x.round <= horizon));
        done.sort_by_key(|c| c[0]);
        let policy = self.policy;
        let (touching, mut rest): (Vec<_>, Vec<_>) = live.into_iter().partition(|c| c.iter().any(|x| policy.adjacent(x, &e)));
        let mut merged: Vec<DetectionEvent> = touching.into_iter().flatten().collect();
        merged.push(e);
        merged.sort();
        rest.push(merged);
        self.active = rest;
        self.emit(done)
    }

    pub fn finish(&mut self) -> Vec<Vec<DetectionEvent>> {
        let mut done = std::mem::take(&mut self.active);
        done.sort_by_key(|c| c[0]);
        self.emit(done)
    }
}

pub fn cluster_events(events: &[DetectionEvent], policy: &ClusterPolicy) -> Clustering {
    let mut c = Clusterer::new(*policy);
    let mut clusters = Vec::new();
    for e in events {
        clusters.extend(c.push(*e));
    }
    clusters.extend(c.finish());
    clusters.sort_by_key(|c| c[0]);
    Clustering { clusters, ignored: c.ignored }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Classification {
    /// Canonical pattern of a nest class.
    Class(DetectionPattern),
    /// A lone event away from every spatial edge.
    TimeEdge,
    Unmatched(DetectionPattern),
}

/// Cluster events are in measure-index space.
pub fn classify_cluster(cluster: &[DetectionEvent], nest: &Nest, circuit: &Circuit) -> Result<Classification> {
    classify_with(cluster, nest, |m| circuit.measure_qubits.get(m).is_some_and(|q| q.boundary))
}

fn classify_with(cluster: &[DetectionEvent], nest: &Nest, edge: impl Fn(usize) -> bool) -> Result<Classification> {
    if cluster.len() > 2 {
        return Err(Error::ClusterTooLarge(cluster.len()));
    }
    let pattern = DetectionPattern::from_events(cluster.iter().copied());
    if let Some(class) = class_lookup(nest, &pattern) {
        return Ok(Classification::Class(class.pattern.clone()));
    }
    if let [e] = cluster {
        if !edge(e.measure_qubit) {
            return Ok(Classification::TimeEdge);
        }
    }
    Ok(Classification::Unmatched(pattern.canonical().0))
}

/// Per-class result. `count` is the number of isolated clusters equal to the
/// class pattern anchored inside the observed window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEstimate {
    pub pattern: DetectionPattern,
    pub count: u64,
    /// Anchors whose whole isolation window held no event.
    pub empty_windows: u64,
    /// `count / rounds_observed`.
    pub probability: f64,
    /// Occurrence probability with isolation losses and second-order
    /// coincidences removed.
    pub corrected: f64,
    /// Binomial standard error of `corrected` over hit-or-empty anchors.
    pub sigma_binomial: f64,
    /// Batch-means standard error of `corrected`; accounts for overlapping
    /// windows. Equal to `sigma_binomial` with fewer than `MIN_BATCHES` batches.
    pub sigma: f64,
    /// (hits, empty windows) per block of `BATCH_ROUNDS` anchors.
    pub batches: Vec<[u64; 2]>,
    /// Derivative of `corrected` with respect to the hit count at fixed ratio.
    #[serde(default)]
    pub sensitivity: f64,
}

impl ClassEstimate {
    /// Per-batch contributions to the error of `corrected`; their summed
    /// squares give the batch-means variance up to the B/(B-1) factor.
    pub fn influence(&self) -> Vec<f64> {
        if self.empty_windows == 0 {
            return vec![0.0; self.batches.len()];
        }
        let ratio = self.count as f64 / self.empty_windows as f64;
        self.batches.iter().map(|&[h, e]| self.sensitivity * (h as f64 - ratio * e as f64)).collect()
    }
}

pub const BATCH_ROUNDS: u64 = 8192;
pub const MIN_BATCHES: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternCount {
    pub pattern: DetectionPattern,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedNest {
    pub circuit_id: String,
    pub stabilizer_type: StabilizerType,
    pub policy: ClusterPolicy,
    pub rounds: u64,
    pub rounds_observed: u64,
    /// Rounds skipped at each end of every record.
    pub margin: u64,
    pub classes: Vec<ClassEstimate>,
    /// Usable clusters (size within policy) over whole records.
    pub clusters: u64,
    pub ignored_clusters: u64,
    pub time_edge: u64,
    pub unmatched: Vec<PatternCount>,
}

#[derive(Serialize, Deserialize)]
struct EstimateDoc {
    schema: String,
    #[serde(flatten)]
    estimate: EstimatedNest,
}

impl EstimatedNest {
    pub fn counts(&self) -> BTreeMap<DetectionPattern, u64> {
        self.classes.iter().map(|c| (c.pattern.clone(), c.count)).collect()
    }

    pub fn probabilities(&self) -> BTreeMap<DetectionPattern, f64> {
        self.classes.iter().map(|c| (c.pattern.clone(), c.probability)).collect()
    }

    pub fn class(&self, pattern: &DetectionPattern) -> Option<&ClassEstimate> {
        self.classes.iter().find(|c| &c.pattern == pattern)
    }

    pub fn ignored_fraction(&self) -> f64 {
        let total = self.clusters + self.ignored_clusters;
        if total == 0 {
            0.0
        } else {
            self.ignored_clusters as f64 / total as f64
        }
    }

    /// Counts of two estimates of the same nest added together.
    pub fn merge(&self, other: &EstimatedNest, nest: &Nest) -> Result<EstimatedNest> {
        if self.circuit_id != other.circuit_id || self.stabilizer_type != other.stabilizer_type {
            return Err(Error::CircuitMismatch { expected: self.circuit_id.clone(), found: other.circuit_id.clone() });
        }
        if self.policy != other.policy || self.classes.len() != other.classes.len() {
            return Err(Error::InvalidArgument("estimates use different policies or nests".into()));
        }
        let mut out = self.clone();
        out.rounds += other.rounds;
        out.rounds_observed += other.rounds_observed;
        out.clusters += other.clusters;
        out.ignored_clusters += other.ignored_clusters;
        out.time_edge += other.time_edge;
        for (a, b) in out.classes.iter_mut().zip(&other.classes) {
            a.count += b.count;
            a.empty_windows += b.empty_windows;
            a.batches.extend_from_slice(&b.batches);
        }
        let mut unmatched: BTreeMap<DetectionPattern, u64> = BTreeMap::new();
        for u in self.unmatched.iter().chain(&other.unmatched) {
            *unmatched.entry(u.pattern.clone()).or_default() += u.count;
        }
        out.unmatched = unmatched.into_iter().map(|(pattern, count)| PatternCount { pattern, count }).collect();
        out.finalize(nest, &coincidences(nest, &self.policy));
        Ok(out)
    }

    fn finalize(&mut self, nest: &Nest, terms: &[Coincidences]) {
        let hits: Vec<u64> = self.classes.iter().map(|c| c.count).collect();
        let empties: Vec<u64> = self.classes.iter().map(|c| c.empty_windows).collect();
        let (odds, denominators) = corrected_odds(&hits, &empties, terms);
        debug_assert_eq!(nest.classes.len(), self.classes.len());
        for (k, c) in self.classes.iter_mut().enumerate() {
            c.probability = c.count as f64 / self.rounds_observed as f64;
            c.corrected = odds[k] / (1.0 + odds[k]);
            let n = (c.count + c.empty_windows) as f64;
            c.sigma_binomial = if n > 0.0 {
                let smoothed = (c.count as f64 + 1.0) / (n + 2.0);
                (smoothed * (1.0 - smoothed) / n).sqrt()
            } else {
                0.5
            };
            c.sigma = c.sigma_binomial;
            c.sensitivity = 0.0;
            if c.empty_windows > 0 {
                c.sensitivity = denominators[k] / (1.0 + odds[k]).powi(2) / c.empty_windows as f64;
            }
            if c.batches.len() >= MIN_BATCHES && c.empty_windows > 0 {
                let b = c.batches.len() as f64;
                let ss: f64 = c.influence().iter().map(|v| v * v).sum();
                let batch = (ss * b / (b - 1.0)).sqrt();
                if batch > 0.0 {
                    c.sigma = batch;
                }
            }
        }
    }

    pub fn to_json(&self) -> String {
        let doc = EstimateDoc { schema: ESTIMATE_SCHEMA.into(), estimate: self.clone() };
        serde_json::to_string_pretty(&doc).expect("estimate serializes")
    }

    pub fn from_json(text: &str) -> Result<EstimatedNest> {
        let doc: EstimateDoc = serde_json::from_str(text)?;
        check_schema(ESTIMATE_SCHEMA, &doc.schema)?;
        Ok(doc.estimate)
    }
}

/// Solves `hits_k / empties_k = N_k(odds) / D_k(odds)` for the class odds by
/// fixed-point iteration, where `N_k` sums odds products of mechanism sets
/// leaving exactly pattern k on its window and `D_k` of sets leaving nothing.
fn corrected_odds(hits: &[u64], empties: &[u64], terms: &[Coincidences]) -> (Vec<f64>, Vec<f64>) {
    let ratio: Vec<f64> = hits.iter().zip(empties).map(|(&h, &e)| if e > 0 { h as f64 / e as f64 } else { 0.0 }).collect();
    let weight = |sets: &[Vec<usize>], odds: &[f64]| -> f64 { sets.iter().map(|s| s.iter().map(|&i| odds[i]).product::<f64>()).sum() };
    let mut odds = ratio.clone();
    for _ in 0..50 {
        odds = (0..ratio.len())
            .map(|k| {
                let d = 1.0 + weight(&terms[k].empty, &odds);
                (ratio[k] * d - weight(&terms[k].hit, &odds)).max(0.0)
            })
            .collect();
    }
    let denominators = terms.iter().map(|t| 1.0 + weight(&t.empty, &odds)).collect();
    (odds, denominators)
}

type Cell = (i64, i64);

fn cells(nest: &Nest, pattern: &DetectionPattern) -> Vec<Cell> {
    pattern.events().map(|e| (nest.position(e.measure_qubit).expect("nest pattern") as i64, e.round)).collect()
}

/// The pattern's cells plus every in-range cell adjacent to one of them.
fn window(nest: &Nest, pattern: &[Cell], policy: &ClusterPolicy) -> Vec<Cell> {
    let (sc, tr) = (policy.space_cells as i64, policy.time_rounds as i64);
    let mut out: Vec<Cell> = pattern
        .iter()
        .flat_map(|&(s, t)| (s - sc + 1..s + sc).flat_map(move |s2| (t - tr + 1..t + tr).map(move |t2| (s2, t2))))
        .filter(|&(s, _)| s >= 0 && s < nest.width() as i64)
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Sets of two or three placed class mechanisms whose combined trace on a
/// class window is the class pattern (`hit`, the class alone excluded) or
/// nothing (`empty`). Entries are class indices; repeats are distinct
/// placements.
#[derive(Debug, Clone, Default)]
struct Coincidences {
    hit: Vec<Vec<usize>>,
    empty: Vec<Vec<usize>>,
}

fn xor_cells(a: &[Cell], b: &[Cell]) -> Vec<Cell> {
    let mut x: Vec<Cell> = a.iter().filter(|c| !b.contains(c)).copied().collect();
    x.extend(b.iter().filter(|c| !a.contains(c)));
    x.sort();
    x
}

fn coincidences(nest: &Nest, policy: &ClusterPolicy) -> Vec<Coincidences> {
    let reach = nest.max_extent() + policy.time_rounds as i64 + 1;
    let placed: Vec<Vec<Cell>> = nest.classes.iter().map(|c| cells(nest, &c.pattern)).collect();
    placed
        .iter()
        .map(|target| {
            let w = window(nest, target, policy);
            let mut target = target.clone();
            target.sort();
            let mut traces: Vec<(usize, Vec<Cell>)> = Vec::new();
            for (k, base) in placed.iter().enumerate() {
                for shift in -reach..=reach {
                    let mut trace: Vec<Cell> = base.iter().map(|&(s, t)| (s, t + shift)).filter(|c| w.binary_search(c).is_ok()).collect();
                    trace.sort();
                    if !trace.is_empty() {
                        traces.push((k, trace));
                    }
                }
            }
            let mut by_trace: BTreeMap<&[Cell], Vec<usize>> = BTreeMap::new();
            for (i, (_, t)) in traces.iter().enumerate() {
                by_trace.entry(t.as_slice()).or_default().push(i);
            }
            let mut out = Coincidences::default();
            for i in 0..traces.len() {
                for j in i + 1..traces.len() {
                    let x = xor_cells(&traces[i].1, &traces[j].1);
                    let pair = vec![traces[i].0, traces[j].0];
                    if x == target {
                        out.hit.push(pair.clone());
                    } else if x.is_empty() {
                        out.empty.push(pair.clone());
                    }
                    let needs = [(xor_cells(&x, &target), true), (x, false)];
                    for (want, is_hit) in needs {
                        for &k in by_trace.get(want.as_slice()).into_iter().flatten().filter(|&&k| k > j) {
                            let triple = vec![traces[i].0, traces[j].0, traces[k].0];
                            if is_hit {
                                out.hit.push(triple);
                            } else {
                                out.empty.push(triple);
                            }
                        }
                    }
                }
            }
            out
        })
        .collect()
}

/// Per-class row masks over the window, rounds relative to the anchor
/// starting at `-back`.
struct Template {
    window: Vec<u64>,
    pattern: Vec<u64>,
}

fn template(nest: &Nest, pattern: &DetectionPattern, policy: &ClusterPolicy, back: i64, len: usize) -> Template {
    let p = cells(nest, pattern);
    let mut t = Template { window: vec![0; len], pattern: vec![0; len] };
    for (s, r) in window(nest, &p, policy) {
        t.window[(r + back) as usize] |= 1 << s;
    }
    for (s, r) in p {
        t.pattern[(r + back) as usize] |= 1 << s;
    }
    t
}

/// One pass over the record: clusters for the residue report and per-anchor
/// window tests for the class counts. Memory is bounded by the window.
pub fn estimate_nest(record: &MeasurementRecord, nest: &Nest, policy: &ClusterPolicy) -> Result<EstimatedNest> {
    policy.validate()?;
    let found = format!("{:016x}", record.circuit_hash);
    if found != nest.circuit_id {
        return Err(Error::CircuitMismatch { expected: nest.circuit_id.clone(), found });
    }
    if nest.measure_qubits.iter().any(|&m| m >= record.num_measure) {
        return Err(Error::InvalidArgument("record has fewer measure qubits than the nest".into()));
    }
    let back = policy.time_rounds as i64 - 1;
    let ext = nest.max_extent();
    let fwd = ext + back;
    let len = (back + fwd + 1) as usize;
    let margin = (back + ext + 2) as u64;
    if record.rounds <= 2 * margin {
        return Err(Error::InvalidArgument(format!("record of {} rounds is shorter than twice the {margin}-round margin", record.rounds)));
    }
    let templates: Vec<Template> = nest.classes.iter().map(|c| template(nest, &c.pattern, policy, back, len)).collect();
    let mut hits = vec![0u64; templates.len()];
    let mut empties = vec![0u64; templates.len()];
    let observed = record.rounds - 2 * margin;
    let mut batches = vec![vec![[0u64; 2]; observed.div_ceil(BATCH_ROUNDS) as usize]; templates.len()];
    let mut ring: std::collections::VecDeque<u64> = std::collections::VecDeque::with_capacity(len + 1);
    let mut clusterer = Clusterer::new(*policy);
    let mut tally = ResidueTally::default();
    let mut prev = 0u64;
    for t in 0..record.rounds {
        let cur = record.round_mask(t);
        let diff = cur ^ prev;
        prev = cur;
        let mut row = 0u64;
        for (i, &m) in nest.measure_qubits.iter().enumerate() {
            if diff >> m & 1 == 1 {
                row |= 1 << i;
                for c in clusterer.push(DetectionEvent::new(i, t as i64)) {
                    tally.add(&c, nest)?;
                }
            }
        }
        ring.push_back(row);
        if ring.len() > len {
            ring.pop_front();
        }
        let anchor = t as i64 - fwd;
        if anchor >= margin as i64 && (anchor as u64) < record.rounds - margin {
            for (k, tpl) in templates.iter().enumerate() {
                let mut hit = true;
                let mut empty = true;
                for (i, &r) in ring.iter().enumerate() {
                    let seen = r & tpl.window[i];
                    hit &= seen == tpl.pattern[i];
                    empty &= seen == 0;
                }
                hits[k] += hit as u64;
                empties[k] += empty as u64;
                let b = &mut batches[k][((anchor as u64 - margin) / BATCH_ROUNDS) as usize];
                b[0] += hit as u64;
                b[1] += empty as u64;
            }
        }
    }
    for c in clusterer.finish() {
        tally.add(&c, nest)?;
    }
    let mut est = EstimatedNest {
        circuit_id: nest.circuit_id.clone(),
        stabilizer_type: nest.stabilizer_type,
        policy: *policy,
        rounds: record.rounds,
        rounds_observed: observed,
        margin,
        classes: nest
            .classes
            .iter()
            .zip(hits.iter().zip(&empties).zip(batches))
            .map(|(c, ((&count, &empty_windows), batches))| ClassEstimate {
                pattern: c.pattern.clone(),
                count,
                empty_windows,
                probability: 0.0,
                corrected: 0.0,
                sigma_binomial: 0.0,
                sigma: 0.0,
                batches,
                sensitivity: 0.0,
            })
            .collect(),
        clusters: tally.clusters,
        ignored_clusters: clusterer.ignored,
        time_edge: tally.time_edge,
        unmatched: tally.unmatched.into_iter().map(|(pattern, count)| PatternCount { pattern, count }).collect(),
    };
    est.finalize(nest, &coincidences(nest, policy));
    Ok(est)
}

#[derive(Default)]
struct ResidueTally {
    clusters: u64,
    time_edge: u64,
    unmatched: BTreeMap<DetectionPattern, u64>,
}

impl ResidueTally {
    fn add(&mut self, cluster: &[DetectionEvent], nest: &Nest) -> Result<()> {
        let events: Vec<DetectionEvent> =
            cluster.iter().map(|e| DetectionEvent::new(nest.measure_qubits[e.measure_qubit], e.round)).collect();
        self.clusters += 1;
        match classify_with(&events, nest, |m| nest.boundary.contains(&m))? {
            Classification::Class(_) => {}
            Classification::TimeEdge => self.time_edge += 1,
            Classification::Unmatched(p) => *self.unmatched.entry(p).or_default() += 1,
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_repetition_circuit, ModelSet};
    use crate::nest::build_nest;
    use crate::propagation::ErrorLocation;
    use crate::sim::{run_with_faults, simulate};

    fn ev(m: usize, r: i64) -> DetectionEvent {
        DetectionEvent::new(m, r)
    }

    fn pattern(events: &[(usize, i64)]) -> DetectionPattern {
        DetectionPattern::from_events(events.iter().map(|&(m, r)| ev(m, r)))
    }

    fn d3(rate: f64) -> Circuit {
        build_repetition_circuit(3, &ModelSet::uniform(rate).unwrap().by_kind).unwrap()
    }

    #[test]
    fn events_are_differences_of_consecutive_outcomes() {
        let mut rec = MeasurementRecord::new(0, 0, 0, 5, 1, 0, "");
        assert!(detect_events(&rec).is_empty());
        rec.set(2, 0, true);
        rec.set(3, 0, true);
        assert_eq!(detect_events(&rec), vec![ev(0, 2), ev(0, 4)]);
    }

    #[test]
    fn forced_readout_flip_gives_two_events() {
        let c = d3(0.0);
        let rec = run_with_faults(&c, 10, &[ErrorLocation::new("M1", "X", 6).unwrap()]).unwrap();
        assert_eq!(detect_events(&rec), vec![ev(0, 6), ev(0, 7)]);
    }

    #[test]
    fn clustering_examples() {
        let policy = ClusterPolicy::default();
        assert_eq!(cluster_events(&[], &policy), Clustering::default());
        let pair = cluster_events(&[ev(0, 4), ev(0, 5)], &policy);
        assert_eq!(pair.clusters, vec![vec![ev(0, 4), ev(0, 5)]]);
        let far = cluster_events(&[ev(0, 4), ev(0, 7), ev(1, 20)], &policy);
        assert_eq!(far.clusters.len(), 3);
        let near = cluster_events(&[ev(0, 4), ev(0, 6)], &policy);
        assert_eq!(near.clusters.len(), 1);
    }

    #[test]
    fn overlapping_faults_make_one_ignored_cluster() {
        let c = d3(0.0);
        let faults = [ErrorLocation::new("I1", "X", 3).unwrap(), ErrorLocation::new("M2", "X", 4).unwrap()];
        let events = detect_events(&run_with_faults(&c, 12, &faults).unwrap());
        assert_eq!(events, vec![ev(0, 4), ev(1, 4), ev(1, 5)]);
        let out = cluster_events(&events, &ClusterPolicy::default());
        assert!(out.clusters.is_empty());
        assert_eq!(out.ignored, 1);
    }

    #[test]
    fn classification_examples() {
        let c = d3(0.01);
        let nest = build_nest(&c, StabilizerType::ZType).unwrap();
        let class = |evs: &[DetectionEvent]| classify_cluster(evs, &nest, &c).unwrap();
        assert_eq!(class(&[ev(0, 9)]), Classification::Class(pattern(&[(0, 0)])));
        assert_eq!(class(&[ev(0, 9), ev(0, 10)]), Classification::Class(pattern(&[(0, 0), (0, 1)])));
        assert_eq!(class(&[ev(0, 9), ev(1, 10)]), Classification::Class(pattern(&[(0, 0), (1, 1)])));
        assert_eq!(class(&[ev(1, 9), ev(0, 10)]), Classification::Unmatched(pattern(&[(1, 0), (0, 1)])));
        assert!(matches!(classify_cluster(&[ev(0, 1), ev(0, 2), ev(1, 2)], &nest, &c), Err(Error::ClusterTooLarge(3))));

        let c5 = build_repetition_circuit(5, &ModelSet::uniform(0.01).unwrap().by_kind).unwrap();
        let nest5 = build_nest(&c5, StabilizerType::ZType).unwrap();
        assert_eq!(classify_cluster(&[ev(1, 3)], &nest5, &c5).unwrap(), Classification::TimeEdge);
    }

    #[test]
    fn noiseless_record_counts_nothing() {
        let c = d3(0.0);
        let nest = build_nest(&d3(0.01), StabilizerType::ZType).unwrap();
        let rec = simulate(&c, 1000, 1).unwrap();
        let est = estimate_nest(&rec, &nest, &ClusterPolicy::default()).unwrap();
        assert!(est.classes.iter().all(|k| k.count == 0 && k.corrected == 0.0));
        assert_eq!(est.empty_windows_all(), est.rounds_observed);
        assert_eq!((est.clusters, est.ignored_clusters, est.time_edge), (0, 0, 0));
    }

    impl EstimatedNest {
        fn empty_windows_all(&self) -> u64 {
            self.classes.iter().map(|c| c.empty_windows).min().unwrap()
        }
    }

    /// Window counting agrees with classifying isolated clusters directly.
    #[test]
    fn window_counts_equal_cluster_counts() {
        let c = d3(0.006);
        let nest = build_nest(&c, StabilizerType::ZType).unwrap();
        let rec = simulate(&c, 50_000, 21).unwrap();
        let policy = ClusterPolicy::default();
        let est = estimate_nest(&rec, &nest, &policy).unwrap();
        let all = cluster_events(&detect_events(&rec), &policy);
        let lo = est.margin as i64;
        let hi = (rec.rounds - est.margin) as i64;
        for k in &est.classes {
            let direct = all
                .clusters
                .iter()
                .filter(|cl| (lo..hi).contains(&cl[0].round))
                .filter(|cl| classify_cluster(cl, &nest, &c).unwrap() == Classification::Class(k.pattern.clone()))
                .count() as u64;
            assert_eq!(k.count, direct, "{}", k.pattern);
            assert_eq!(k.probability, k.count as f64 / est.rounds_observed as f64);
        }
        assert_eq!(est.ignored_clusters, all.ignored);
        assert_eq!(est.clusters, all.clusters.len() as u64);
    }

    #[test]
    fn corrected_estimates_track_occurrence_probability() {
        let c = d3(0.005);
        let nest = build_nest(&c, StabilizerType::ZType).unwrap();
        let rec = simulate(&c, 400_000, 77).unwrap();
        let est = estimate_nest(&rec, &nest, &ClusterPolicy::default()).unwrap();
        for (k, class) in est.classes.iter().zip(&nest.classes) {
            let z = (k.corrected - class.occurrence_probability) / k.sigma;
            assert!(z.abs() < 4.0, "{} z={z}", k.pattern);
        }
    }

    #[test]
    fn mismatched_circuit_is_rejected() {
        let nest = build_nest(&d3(0.01), StabilizerType::ZType).unwrap();
        let c5 = build_repetition_circuit(5, &ModelSet::uniform(0.01).unwrap().by_kind).unwrap();
        let rec = simulate(&c5, 100, 1).unwrap();
        assert!(matches!(estimate_nest(&rec, &nest, &ClusterPolicy::default()), Err(Error::CircuitMismatch { .. })));
        let short = simulate(&d3(0.01), 8, 1).unwrap();
        assert!(estimate_nest(&short, &nest, &ClusterPolicy::default()).is_err());
        let bad = ClusterPolicy { space_cells: 0, ..Default::default() };
        assert!(estimate_nest(&simulate(&d3(0.01), 100, 1).unwrap(), &nest, &bad).is_err());
    }

    #[test]
    fn merge_adds_counts_and_json_round_trips() {
        let c = d3(0.01);
        let nest = build_nest(&c, StabilizerType::ZType).unwrap();
        let p = ClusterPolicy::default();
        let a = estimate_nest(&simulate(&c, 20_000, 1).unwrap(), &nest, &p).unwrap();
        let b = estimate_nest(&simulate(&c, 30_000, 2).unwrap(), &nest, &p).unwrap();
        let m = a.merge(&b, &nest).unwrap();
        assert_eq!(m.rounds_observed, a.rounds_observed + b.rounds_observed);
        for ((x, y), z) in a.classes.iter().zip(&b.classes).zip(&m.classes) {
            assert_eq!(z.count, x.count + y.count);
        }
        assert_eq!(EstimatedNest::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn sparse_regime_ignores_few_clusters() {
        let c = d3(0.0003);
        let nest = build_nest(&c, StabilizerType::ZType).unwrap();
        let est = estimate_nest(&simulate(&c, 1_000_000, 5).unwrap(), &nest, &ClusterPolicy::default()).unwrap();
        assert!(est.ignored_fraction() <= 0.01, "{}", est.ignored_fraction());
    }
}
