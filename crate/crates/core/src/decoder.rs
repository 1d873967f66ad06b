//! Greedy space-time matching decoder for the repetition code and
//! logical-error-rate trials.
//!
//! Edge weights are `-ln p` of the nest class joining two events (or one
//! event to a spatial edge). Pair and boundary costs are shortest paths on
//! that lattice; they only depend on the measure qubits and the round
//! difference, so they are tabulated once per graph.
//!
//! The logical observable is the X-flip parity of data qubit 0. Each trial
//! appends one perfect syndrome round computed from the final data readout.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::circuit::{digest_u64, Circuit, ModelSet, StabilizerType};
use crate::error::{Error, Result};
use crate::nest::{build_nest, Nest};
use crate::propagation::DetectionEvent;
use crate::record::MeasurementRecord;
use crate::sim::{ExtraChannel, Sampler};

const PROBABILITY_FLOOR: f64 = 1e-12;
const MAX_HORIZON: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partner {
    Event(usize),
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoding {
    pub events: Vec<DetectionEvent>,
    /// One entry per event, in event order; pairs appear twice.
    pub partners: Vec<Partner>,
    /// Bit j set when data qubit j is flipped by the correction.
    pub correction: u64,
    pub weight: f64,
}

impl Decoding {
    pub fn logical_flip(&self) -> bool {
        self.correction & 1 == 1
    }
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    dm: isize,
    dt: isize,
    weight: f64,
}

/// Matching lattice of a repetition circuit.
#[derive(Debug, Clone)]
pub struct MatchingGraph {
    pub num_measure: usize,
    pub num_data: usize,
    /// Largest round difference for which a pair can beat two boundary matches.
    pub horizon: usize,
    left: Vec<f64>,
    right: Vec<f64>,
    /// `pair[(a * n + b) * (horizon + 1) + dt]`, event b `dt` rounds after a.
    pair: Vec<f64>,
}

impl MatchingGraph {
    pub fn new(circuit: &Circuit) -> Result<Self> {
        if circuit.stabilizer_types() != [StabilizerType::ZType] || circuit.num_data() != circuit.num_measure() + 1 {
            return Err(Error::InvalidArgument(format!("{} is not a repetition circuit", circuit.name)));
        }
        Self::from_nest(&build_nest(circuit, StabilizerType::ZType)?, circuit.num_data())
    }

    pub fn from_nest(nest: &Nest, num_data: usize) -> Result<Self> {
        let n = nest.width();
        let weight = |p: f64| -p.max(PROBABILITY_FLOOR).ln();
        let mut left = vec![f64::INFINITY; n];
        let mut right = vec![f64::INFINITY; n];
        let mut edges: Vec<Vec<Edge>> = vec![Vec::new(); n];
        let mut step_cost = f64::INFINITY;
        for class in &nest.classes {
            let ev: Vec<&DetectionEvent> = class.pattern.events().collect();
            let w = weight(class.occurrence_probability);
            match ev[..] {
                [e] => {
                    let m = nest.position(e.measure_qubit).expect("nest qubit");
                    if m == 0 {
                        left[m] = left[m].min(w);
                    }
                    if m == n - 1 {
                        right[m] = right[m].min(w);
                    }
                }
                [a, b] => {
                    let (ma, mb) =
                        (nest.position(a.measure_qubit).expect("nest qubit"), nest.position(b.measure_qubit).expect("nest qubit"));
                    let (dm, dt) = (mb as isize - ma as isize, b.round - a.round);
                    edges[ma].push(Edge { dm, dt: dt as isize, weight: w });
                    edges[mb].push(Edge { dm: -dm, dt: -dt as isize, weight: w });
                    if dt != 0 {
                        step_cost = step_cost.min(w / dt.abs() as f64);
                    }
                }
                _ => {}
            }
        }
        for m in 0..n {
            if m == 0 && left[m].is_infinite() {
                left[m] = weight(0.0);
            }
            if m == n - 1 && right[m].is_infinite() {
                right[m] = weight(0.0);
            }
        }
        if step_cost.is_infinite() {
            step_cost = weight(0.0);
        }
        let boundary_costs = |reach: usize| {
            let lattice = Lattice { n, t0: reach as isize, rounds: 2 * reach + 1, edges: &edges };
            let (mut l, mut r) = (vec![f64::INFINITY; n], vec![f64::INFINITY; n]);
            for a in 0..n {
                let dist = lattice.dijkstra(a);
                for t in -(reach as isize)..=reach as isize {
                    l[a] = l[a].min(dist[lattice.node(0, t)] + left[0]);
                    r[a] = r[a].min(dist[lattice.node(n - 1, t)] + right[n - 1]);
                }
            }
            (l, r)
        };
        let (l0, r0) = boundary_costs(n + 2);
        let worst = l0.iter().zip(&r0).map(|(a, b)| a.min(*b)).fold(0.0f64, f64::max);
        let horizon = ((2.0 * worst / step_cost).ceil() as usize).clamp(1, MAX_HORIZON);
        let (to_left, to_right) = boundary_costs(horizon.max(n + 2));
        let lattice = Lattice { n, t0: 2, rounds: horizon + 5, edges: &edges };
        let mut pair = vec![f64::INFINITY; n * n * (horizon + 1)];
        for a in 0..n {
            let dist = lattice.dijkstra(a);
            for b in 0..n {
                for dt in 0..=horizon {
                    pair[(a * n + b) * (horizon + 1) + dt] = dist[lattice.node(b, dt as isize)];
                }
            }
        }
        Ok(Self { num_measure: n, num_data, horizon, left: to_left, right: to_right, pair })
    }

    /// Cheaper spatial edge for an event and its cost.
    pub fn boundary(&self, e: &DetectionEvent) -> (Partner, f64) {
        let (l, r) = (self.left[e.measure_qubit], self.right[e.measure_qubit]);
        if l <= r {
            (Partner::Left, l)
        } else {
            (Partner::Right, r)
        }
    }

    /// Shortest-path cost between two events; infinite beyond the horizon.
    pub fn pair_cost(&self, a: &DetectionEvent, b: &DetectionEvent) -> f64 {
        let (a, b) = if a.round <= b.round { (a, b) } else { (b, a) };
        let dt = (b.round - a.round) as usize;
        if dt > self.horizon {
            return f64::INFINITY;
        }
        self.pair[(a.measure_qubit * self.num_measure + b.measure_qubit) * (self.horizon + 1) + dt]
    }

    /// Data qubits flipped by joining an event to a partner.
    pub fn flips(&self, e: &DetectionEvent, partner: Partner, other: Option<&DetectionEvent>) -> u64 {
        let all = if self.num_data == 64 { u64::MAX } else { (1u64 << self.num_data) - 1 };
        let upto = |m: usize| if m + 1 >= 64 { u64::MAX } else { (1u64 << (m + 1)) - 1 };
        match partner {
            Partner::Left => upto(e.measure_qubit),
            Partner::Right => all & !upto(e.measure_qubit),
            Partner::Event(_) => {
                let o = other.expect("partner event");
                upto(e.measure_qubit) ^ upto(o.measure_qubit)
            }
        }
    }

    /// Greedy matching: pairs in order of their saving over sending both
    /// events to a boundary, every unpaired event to its boundary, then
    /// local re-matching of unit pairs.
    pub fn decode_events(&self, events: &[DetectionEvent]) -> Decoding {
        let mut events = events.to_vec();
        events.sort_by_key(|e| (e.round, e.measure_qubit));
        let bound: Vec<(Partner, f64)> = events.iter().map(|e| self.boundary(e)).collect();
        let mut candidates: Vec<(f64, f64, usize, usize)> = Vec::new();
        for (i, e) in events.iter().enumerate() {
            for (j, f) in events.iter().enumerate().skip(i + 1) {
                if (f.round - e.round) as usize > self.horizon {
                    break;
                }
                let c = self.pair_cost(e, f);
                let saving = bound[i].1 + bound[j].1 - c;
                if saving > 0.0 {
                    candidates.push((saving, c, i, j));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)).then((a.2, a.3).cmp(&(b.2, b.3))));
        let mut partners: Vec<Option<usize>> = vec![None; events.len()];
        let mut units: Vec<Vec<usize>> = Vec::new();
        for (_, _, i, j) in candidates {
            if partners[i].is_none() && partners[j].is_none() {
                partners[i] = Some(j);
                partners[j] = Some(i);
                units.push(vec![i, j]);
            }
        }
        units.extend((0..events.len()).filter(|&i| partners[i].is_none()).map(|i| vec![i]));
        let units = self.refine(&events, units);
        let mut partners = vec![Partner::Left; events.len()];
        let mut weight = 0.0;
        let mut correction = 0;
        for u in &units {
            match u[..] {
                [i] => {
                    let (side, c) = self.boundary(&events[i]);
                    partners[i] = side;
                    correction ^= self.flips(&events[i], side, None);
                    weight += c;
                }
                [i, j] => {
                    partners[i] = Partner::Event(j);
                    partners[j] = Partner::Event(i);
                    correction ^= self.flips(&events[i], Partner::Event(j), Some(&events[j]));
                    weight += self.pair_cost(&events[i], &events[j]);
                }
                _ => unreachable!("units hold one or two events"),
            }
        }
        Decoding { events, partners, correction, weight }
    }

    fn unit_cost(&self, events: &[DetectionEvent], u: &[usize]) -> f64 {
        match u[..] {
            [i] => self.boundary(&events[i]).1,
            [i, j] => self.pair_cost(&events[i], &events[j]),
            _ => unreachable!("units hold one or two events"),
        }
    }

    /// Cheapest matching of up to four events, as units.
    fn best_local(&self, events: &[DetectionEvent], ids: &[usize]) -> (f64, Vec<Vec<usize>>) {
        let Some((&first, rest)) = ids.split_first() else {
            return (0.0, Vec::new());
        };
        let (w, mut units) = self.best_local(events, rest);
        let mut best = (w + self.unit_cost(events, &[first]), {
            units.push(vec![first]);
            units
        });
        for (k, &j) in rest.iter().enumerate() {
            let c = self.unit_cost(events, &[first, j]);
            if !c.is_finite() {
                continue;
            }
            let others: Vec<usize> = rest.iter().enumerate().filter(|&(q, _)| q != k).map(|(_, &v)| v).collect();
            let (w, mut units) = self.best_local(events, &others);
            if w + c < best.0 {
                units.push(vec![first, j]);
                best = (w + c, units);
            }
        }
        best
    }

    /// Re-matches any two units whose events admit a cheaper local matching,
    /// until no such pair of units remains.
    fn refine(&self, events: &[DetectionEvent], mut units: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
        let start = |u: &Vec<usize>| u.iter().map(|&i| events[i].round).min().expect("nonempty unit");
        let end = |u: &Vec<usize>| u.iter().map(|&i| events[i].round).max().expect("nonempty unit");
        for _ in 0..events.len() {
            units.sort_by_key(|u| (start(u), u.clone()));
            let mut improved = false;
            let mut a = 0;
            while a < units.len() {
                let mut b = a + 1;
                while b < units.len() {
                    if start(&units[b]) - end(&units[a]) > self.horizon as i64 {
                        break;
                    }
                    let ids: Vec<usize> = units[a].iter().chain(&units[b]).copied().collect();
                    let now = self.unit_cost(events, &units[a]) + self.unit_cost(events, &units[b]);
                    let (w, local) = self.best_local(events, &ids);
                    if w < now - 1e-12 {
                        units.remove(b);
                        units.remove(a);
                        units.extend(local);
                        improved = true;
                        break;
                    }
                    b += 1;
                }
                a += 1;
            }
            if !improved {
                break;
            }
        }
        units
    }

    pub fn decode_record(&self, record: &MeasurementRecord) -> Result<Decoding> {
        if record.num_measure != self.num_measure || record.num_data != self.num_data {
            return Err(Error::InvalidArgument("record shape does not match the decoder".into()));
        }
        Ok(self.decode_events(&closed_events(record)))
    }
}

struct Lattice<'a> {
    n: usize,
    t0: isize,
    rounds: usize,
    edges: &'a [Vec<Edge>],
}

impl Lattice<'_> {
    fn node(&self, m: usize, t: isize) -> usize {
        (t + self.t0) as usize * self.n + m
    }

    fn dijkstra(&self, source: usize) -> Vec<f64> {
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Item {
            fn cmp(&self, other: &Self) -> Ordering {
                other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
            }
        }
        let mut dist = vec![f64::INFINITY; self.n * self.rounds];
        let start = self.node(source, 0);
        dist[start] = 0.0;
        let mut heap = BinaryHeap::from([Item(0.0, start)]);
        while let Some(Item(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            let (m, t) = ((u % self.n) as isize, (u / self.n) as isize);
            for e in &self.edges[m as usize] {
                let (m2, t2) = (m + e.dm, t + e.dt);
                if m2 < 0 || m2 >= self.n as isize || t2 < 0 || t2 >= self.rounds as isize {
                    continue;
                }
                let v = t2 as usize * self.n + m2 as usize;
                if d + e.weight < dist[v] {
                    dist[v] = d + e.weight;
                    heap.push(Item(dist[v], v));
                }
            }
        }
        dist
    }
}

/// Detection events of a repetition record, closed by one perfect round
/// (index `rounds`) built from the final data readout.
pub fn closed_events(record: &MeasurementRecord) -> Vec<DetectionEvent> {
    let mut out = Vec::new();
    let mut prev = 0u64;
    let data = record.data_mask();
    let last = (data ^ (data >> 1)) & ((1u64 << record.num_measure) - 1);
    for r in 0..=record.rounds {
        let cur = if r < record.rounds { record.round_mask(r) } else { last };
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

/// Decodes a repetition record with weights from the circuit's own models.
pub fn decode(record: &MeasurementRecord, circuit: &Circuit) -> Result<Decoding> {
    MatchingGraph::new(circuit)?.decode_record(record)
}

/// Whether decoding leaves data qubit 0 flipped.
pub fn logical_failure(graph: &MatchingGraph, record: &MeasurementRecord) -> Result<bool> {
    let decoding = graph.decode_record(record)?;
    Ok((decoding.correction ^ record.data_mask()) & 1 == 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogicalTrialResult {
    pub trials: u64,
    pub logical_failures: u64,
    pub rounds_per_trial: u64,
    pub rate: f64,
    /// 95% Wilson score interval.
    pub ci: [f64; 2],
}

impl LogicalTrialResult {
    pub fn new(trials: u64, logical_failures: u64, rounds_per_trial: u64) -> Result<Self> {
        if trials == 0 || logical_failures > trials {
            return Err(Error::InvalidArgument(format!("{logical_failures} failures in {trials} trials")));
        }
        let n = trials as f64;
        let rate = logical_failures as f64 / n;
        let z = 1.959_963_984_540_054f64;
        let centre = (rate + z * z / (2.0 * n)) / (1.0 + z * z / n);
        let half = z / (1.0 + z * z / n) * (rate * (1.0 - rate) / n + z * z / (4.0 * n * n)).sqrt();
        let lo = if logical_failures == 0 { 0.0 } else { (centre - half).max(0.0) };
        let hi = if logical_failures == trials { 1.0 } else { (centre + half).min(1.0) };
        Ok(Self { trials, logical_failures, rounds_per_trial, rate, ci: [lo, hi] })
    }
}

/// Seed of trial `index` derived from the run seed.
pub fn trial_seed(seed: u64, index: u64) -> u64 {
    let mut bytes = [0u8; 16];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..].copy_from_slice(&index.to_le_bytes());
    digest_u64(&bytes)
}

/// Fresh-start trials simulated under `models` and decoded with weights
/// from the same models.
pub fn logical_error_rate(
    circuit: &Circuit,
    models: &ModelSet,
    trials: u64,
    rounds_per_trial: u64,
    seed: u64,
) -> Result<LogicalTrialResult> {
    let c = circuit.with_models(models.clone())?;
    let graph = MatchingGraph::new(&c)?;
    logical_error_rate_with(&c, &[], &graph, trials, rounds_per_trial, seed)
}

/// Fresh-start trials simulated from `truth` plus extra channels, decoded by `graph`.
pub fn logical_error_rate_with(
    truth: &Circuit,
    extra: &[ExtraChannel],
    graph: &MatchingGraph,
    trials: u64,
    rounds_per_trial: u64,
    seed: u64,
) -> Result<LogicalTrialResult> {
    if trials == 0 || rounds_per_trial == 0 {
        return Err(Error::InvalidArgument("trials and rounds_per_trial must be positive".into()));
    }
    let sampler = Sampler::new(truth, extra)?;
    let failures = (0..trials)
        .into_par_iter()
        .map(|i| {
            let rec = sampler.run(rounds_per_trial, trial_seed(seed, i))?;
            logical_failure(graph, &rec).map(u64::from)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    LogicalTrialResult::new(trials, failures, rounds_per_trial)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Consistent,
    ObservedWorse,
    ObservedBetter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub verdict: Verdict,
    pub z: f64,
    pub p_value: f64,
    pub alpha: f64,
}

pub const DEFAULT_ALPHA: f64 = 0.01;

/// Pooled two-proportion z test, two-sided.
pub fn compare_predicted_vs_observed(observed: &LogicalTrialResult, predicted: &LogicalTrialResult, alpha: f64) -> Result<Comparison> {
    if observed.trials == 0 || predicted.trials == 0 {
        return Err(Error::InvalidArgument("zero-trial input".into()));
    }
    if observed.rounds_per_trial != predicted.rounds_per_trial {
        return Err(Error::InvalidArgument("rounds_per_trial differs between observed and predicted".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    let (n1, n2) = (observed.trials as f64, predicted.trials as f64);
    let pooled = (observed.logical_failures + predicted.logical_failures) as f64 / (n1 + n2);
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)).sqrt();
    let diff = observed.rate - predicted.rate;
    let z = if se > 0.0 { diff / se } else { 0.0 };
    let p_value = 2.0 * Normal::standard().sf(z.abs());
    let verdict = match (p_value < alpha, diff > 0.0) {
        (false, _) => Verdict::Consistent,
        (true, true) => Verdict::ObservedWorse,
        (true, false) => Verdict::ObservedBetter,
    };
    Ok(Comparison { verdict, z, p_value: p_value.min(1.0), alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_repetition_circuit, ModelSet};

    #[test]
    fn wilson_interval_brackets_rate() {
        let r = LogicalTrialResult::new(100, 0, 3).unwrap();
        assert_eq!(r.ci[0], 0.0);
        assert!((r.ci[1] - 0.0370).abs() < 1e-3);
        let r = LogicalTrialResult::new(1000, 100, 3).unwrap();
        assert!((r.ci[0] - 0.0829).abs() < 1e-3 && (r.ci[1] - 0.1202).abs() < 1e-3);
        assert!(LogicalTrialResult::new(0, 0, 3).is_err());
    }

    #[test]
    fn identical_inputs_are_consistent() {
        let r = LogicalTrialResult::new(5000, 40, 5).unwrap();
        let c = compare_predicted_vs_observed(&r, &r, DEFAULT_ALPHA).unwrap();
        assert_eq!(c.verdict, Verdict::Consistent);
        assert_eq!(c.p_value, 1.0);
        let worse = LogicalTrialResult::new(5000, 120, 5).unwrap();
        assert_eq!(compare_predicted_vs_observed(&worse, &r, DEFAULT_ALPHA).unwrap().verdict, Verdict::ObservedWorse);
        assert_eq!(compare_predicted_vs_observed(&r, &worse, DEFAULT_ALPHA).unwrap().verdict, Verdict::ObservedBetter);
    }

    #[test]
    fn no_events_no_correction() {
        let c = build_repetition_circuit(3, &ModelSet::uniform(0.001).unwrap().by_kind).unwrap();
        let g = MatchingGraph::new(&c).unwrap();
        let d = g.decode_events(&[]);
        assert_eq!(d.correction, 0);
        assert!(d.partners.is_empty());
    }

    #[test]
    fn pair_costs_are_symmetric_and_short_for_neighbours() {
        let c = build_repetition_circuit(5, &ModelSet::uniform(0.002).unwrap().by_kind).unwrap();
        let g = MatchingGraph::new(&c).unwrap();
        let a = DetectionEvent::new(1, 4);
        let b = DetectionEvent::new(2, 4);
        let far = DetectionEvent::new(3, 4);
        assert_eq!(g.pair_cost(&a, &b), g.pair_cost(&b, &a));
        assert!(g.pair_cost(&a, &b) < g.pair_cost(&a, &far));
        assert!(g.pair_cost(&a, &DetectionEvent::new(1, 4 + g.horizon as i64 + 1)).is_infinite());
    }
}
