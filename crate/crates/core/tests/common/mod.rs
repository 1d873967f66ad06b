use nestfit::circuit::Circuit;
use nestfit::decoder::{MatchingGraph, Partner};
use nestfit::propagation::{DetectionEvent, ErrorLocation};

/// Exhaustive minimum-weight matching with boundary by bitmask recursion.
pub fn exact(g: &MatchingGraph, events: &[DetectionEvent]) -> (f64, u64) {
    fn go(g: &MatchingGraph, ev: &[DetectionEvent], mask: u32, memo: &mut Vec<Option<(f64, u64)>>) -> (f64, u64) {
        if mask == 0 {
            return (0.0, 0);
        }
        if let Some(v) = memo[mask as usize] {
            return v;
        }
        let i = mask.trailing_zeros() as usize;
        let rest = mask & !(1 << i);
        let (side, bc) = g.boundary(&ev[i]);
        let (w, c) = go(g, ev, rest, memo);
        let mut best = (w + bc, c ^ g.flips(&ev[i], side, None));
        for j in (i + 1..ev.len()).filter(|&j| rest >> j & 1 == 1) {
            let pc = g.pair_cost(&ev[i], &ev[j]);
            if pc.is_finite() {
                let (w, c) = go(g, ev, rest & !(1 << j), memo);
                if w + pc < best.0 {
                    best = (w + pc, c ^ g.flips(&ev[i], Partner::Event(j), Some(&ev[j])));
                }
            }
        }
        memo[mask as usize] = Some(best);
        best
    }
    let mut memo = vec![None; 1 << events.len()];
    go(g, events, (1u32 << events.len()) - 1, &mut memo)
}

pub fn locations(c: &Circuit, rounds: u64) -> Vec<(ErrorLocation, f64, usize)> {
    let mut out = Vec::new();
    for (gi, g) in c.gates.iter().enumerate() {
        let model = c.model_for(g);
        for t in 0..rounds as i64 {
            for label in g.kind.legal_labels() {
                let p = model.probability(&label.to_string());
                if p > 0.0 {
                    out.push((ErrorLocation { gate_id: g.id.clone(), pauli: label.clone(), period_offset: t }, p, gi * 1000 + t as usize));
                }
            }
        }
    }
    out
}
