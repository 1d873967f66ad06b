//! Single-qubit Pauli operators and multi-qubit labels, up to phase.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn from_bits(x: bool, z: bool) -> Self {
        match (x, z) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }

    /// Bit-flip component.
    pub fn x(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }

    /// Phase-flip component.
    pub fn z(self) -> bool {
        matches!(self, Pauli::Z | Pauli::Y)
    }

    pub fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    fn from_char(c: char) -> Option<Self> {
        match c {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }
}

/// A tensor product of Paulis, one per gate operand, ordered like the gate's qubit list.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PauliLabel(pub Vec<Pauli>);

impl PauliLabel {
    pub fn arity(&self) -> usize {
        self.0.len()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().all(|&p| p == Pauli::I)
    }

    /// All non-identity labels on `arity` qubits in lexicographic order (I < X < Y < Z).
    pub fn non_identity(arity: usize) -> Vec<PauliLabel> {
        let mut out = vec![PauliLabel(Vec::new())];
        for _ in 0..arity {
            out = out
                .into_iter()
                .flat_map(|l| {
                    Pauli::ALL.iter().map(move |&p| {
                        let mut v = l.0.clone();
                        v.push(p);
                        PauliLabel(v)
                    })
                })
                .collect();
        }
        out.retain(|l| !l.is_identity());
        out
    }

    /// Decompose into the pure-X and pure-Z parts whose product is this label.
    pub fn split_xz(&self) -> (PauliLabel, PauliLabel) {
        let xs = self.0.iter().map(|p| Pauli::from_bits(p.x(), false)).collect();
        let zs = self.0.iter().map(|p| Pauli::from_bits(false, p.z())).collect();
        (PauliLabel(xs), PauliLabel(zs))
    }
}

impl fmt::Display for PauliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.0 {
            write!(f, "{}", p.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err("empty Pauli label".into());
        }
        s.chars()
            .map(|c| Pauli::from_char(c).ok_or_else(|| format!("bad Pauli character {c:?} in {s:?}")))
            .collect::<Result<Vec<_>, _>>()
            .map(PauliLabel)
    }
}

impl Serialize for PauliLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PauliLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
