//! Bit-packed measurement records and the `mrec.v1` on-disk format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MREC" u16 version u16 reserved
//! u64 circuit_hash  u64 model_fingerprint  u64 seed  u64 rounds
//! u32 num_measure   u32 num_data
//! u32 rng_len       rng_len bytes of UTF-8 RNG name
//! ceil(rounds*num_measure/8) bytes   measurement bits
//! ceil(num_data/8) bytes             final data readout bits
//! ```
//!
//! Bit `round*num_measure + m` of the measurement block is outcome `m` of
//! `round`, least significant bit first within each byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RECORD_SCHEMA: &str = "mrec.v1";
const MAGIC: &[u8; 4] = b"MREC";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementRecord {
    pub circuit_hash: u64,
    pub model_fingerprint: u64,
    pub seed: u64,
    pub rounds: u64,
    pub num_measure: usize,
    pub num_data: usize,
    pub rng: String,
    bits: Vec<u8>,
    data_bits: Vec<u8>,
}

fn packed_len(bits: u64) -> usize {
    bits.div_ceil(8) as usize
}

impl MeasurementRecord {
    pub fn new(circuit_hash: u64, model_fingerprint: u64, seed: u64, rounds: u64, num_measure: usize, num_data: usize, rng: &str) -> Self {
        Self {
            circuit_hash,
            model_fingerprint,
            seed,
            rounds,
            num_measure,
            num_data,
            rng: rng.to_string(),
            bits: vec![0; packed_len(rounds * num_measure as u64)],
            data_bits: vec![0; packed_len(num_data as u64)],
        }
    }

    fn index(&self, round: u64, m: usize) -> usize {
        debug_assert!(round < self.rounds && m < self.num_measure);
        round as usize * self.num_measure + m
    }

    pub fn get(&self, round: u64, m: usize) -> bool {
        let i = self.index(round, m);
        self.bits[i / 8] >> (i % 8) & 1 == 1
    }

    pub fn set(&mut self, round: u64, m: usize, value: bool) {
        let i = self.index(round, m);
        let mask = 1u8 << (i % 8);
        if value {
            self.bits[i / 8] |= mask;
        } else {
            self.bits[i / 8] &= !mask;
        }
    }

    /// All outcomes of one round, outcome `m` at bit `m`.
    pub fn round_mask(&self, round: u64) -> u64 {
        let start = self.index(round, 0);
        (0..self.num_measure).filter(|k| self.bits[(start + k) / 8] >> ((start + k) % 8) & 1 == 1).fold(0, |acc, k| acc | 1 << k)
    }

    pub fn set_round_mask(&mut self, round: u64, mask: u64) {
        for m in 0..self.num_measure {
            self.set(round, m, mask >> m & 1 == 1);
        }
    }

    pub fn data(&self, j: usize) -> bool {
        self.data_bits[j / 8] >> (j % 8) & 1 == 1
    }

    pub fn set_data(&mut self, j: usize, value: bool) {
        let mask = 1u8 << (j % 8);
        if value {
            self.data_bits[j / 8] |= mask;
        } else {
            self.data_bits[j / 8] &= !mask;
        }
    }

    pub fn data_mask(&self) -> u64 {
        (0..self.num_data).filter(|&j| self.data(j)).fold(0, |acc, j| acc | 1 << j)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + self.rng.len() + self.bits.len() + self.data_bits.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        for v in [self.circuit_hash, self.model_fingerprint, self.seed, self.rounds] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.num_measure as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_data as u32).to_le_bytes());
        out.extend_from_slice(&(self.rng.len() as u32).to_le_bytes());
        out.extend_from_slice(self.rng.as_bytes());
        out.extend_from_slice(&self.bits);
        out.extend_from_slice(&self.data_bits);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Record("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Record(format!("unsupported version {version}")));
        }
        r.take(2)?;
        let circuit_hash = r.u64()?;
        let model_fingerprint = r.u64()?;
        let seed = r.u64()?;
        let rounds = r.u64()?;
        let num_measure = r.u32()? as usize;
        let num_data = r.u32()? as usize;
        if num_measure > 64 || num_data > 64 {
            return Err(Error::Record("more than 64 qubits per register".into()));
        }
        let rng_len = r.u32()? as usize;
        let rng = String::from_utf8(r.take(rng_len)?.to_vec()).map_err(|_| Error::Record("rng name not UTF-8".into()))?;
        let n_bits = rounds.checked_mul(num_measure as u64).ok_or_else(|| Error::Record("size overflow".into()))?;
        let bits = r.take(packed_len(n_bits))?.to_vec();
        let data_bits = r.take(packed_len(num_data as u64))?.to_vec();
        if r.pos != bytes.len() {
            return Err(Error::Record(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { circuit_hash, model_fingerprint, seed, rounds, num_measure, num_data, rng, bits, data_bits })
    }

    pub fn sidecar(&self) -> RecordSidecar {
        RecordSidecar {
            schema: RECORD_SCHEMA.into(),
            circuit_hash: format!("{:016x}", self.circuit_hash),
            model_fingerprint: format!("{:016x}", self.model_fingerprint),
            seed: self.seed,
            rounds: self.rounds,
            num_measure: self.num_measure,
            num_data: self.num_data,
            rng: self.rng.clone(),
            bit_order: "index = round * num_measure + m, LSB first".into(),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Record(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

/// Human-readable mirror of the binary header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSidecar {
    pub schema: String,
    pub circuit_hash: String,
    pub model_fingerprint: String,
    pub seed: u64,
    pub rounds: u64,
    pub num_measure: usize,
    pub num_data: usize,
    pub rng: String,
    pub bit_order: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the binary record and its JSON sidecar next to it.
pub fn write_record(path: &Path, record: &MeasurementRecord) -> Result<()> {
    fs::write(path, record.to_bytes())?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&record.sidecar())?)?;
    Ok(())
}

pub fn read_record(path: &Path) -> Result<MeasurementRecord> {
    MeasurementRecord::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MeasurementRecord {
        let mut r = MeasurementRecord::new(0xdead_beef, 7, 42, 13, 3, 4, "test-rng");
        for round in 0..13 {
            r.set_round_mask(round, (round * 5) % 8);
        }
        r.set_data(2, true);
        r
    }

    #[test]
    fn bit_layout_is_round_major_lsb_first() {
        let mut r = MeasurementRecord::new(0, 0, 0, 3, 3, 1, "");
        r.set(1, 2, true);
        let bytes = r.to_bytes();
        let payload = &bytes[bytes.len() - 3..bytes.len() - 2];
        assert_eq!(payload, [1 << 5]);
    }

    #[test]
    fn bytes_round_trip() {
        let r = sample();
        let back = MeasurementRecord::from_bytes(&r.to_bytes()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.round_mask(3), 7);
        assert_eq!(back.data_mask(), 4);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(matches!(MeasurementRecord::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Record(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(MeasurementRecord::from_bytes(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(MeasurementRecord::from_bytes(&bad).is_err());
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(MeasurementRecord::from_bytes(&v2).is_err());
        assert!(MeasurementRecord::from_bytes(&[]).is_err());
    }

    #[test]
    fn file_round_trip_writes_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.mrec");
        write_record(&path, &sample()).unwrap();
        assert_eq!(read_record(&path).unwrap(), sample());
        let side: RecordSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(side.schema, RECORD_SCHEMA);
        assert_eq!(side.circuit_hash, "00000000deadbeef");
    }
}
