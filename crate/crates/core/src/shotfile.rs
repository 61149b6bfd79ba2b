//! Append-only binary shot files.
//!
//! All integers are little-endian.
//!
//! ```text
//! header (30 bytes)
//!   0  magic      "STSH"
//!   4  version    u16 = 1
//!   6  N          u32   register qubits
//!   10 k          u32   steps
//!   14 shots      u64   number of shot records that follow
//!   22 seed       u64   master seed
//! shot record (shot i has index i), layers in time order
//!   layer 0:      N bytes measurement Clifford, ceil(N/8) bytes outcomes
//!   layer j=1..k: N bytes preparation Clifford, N bytes measurement Clifford,
//!                 ceil(N/8) bytes outcomes
//! ```
//!
//! Clifford bytes are [`CliffordIndex`](crate::clifford::CliffordIndex)
//! values. Outcome bit of qubit `q` is bit `q % 8` (least significant first)
//! of byte `q / 8` of the layer's outcome block.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::clifford::GROUP_ORDER;
use crate::error::{Error, Result};
use crate::shadow::{ShadowRecord, ShotSet};

pub const MAGIC: [u8; 4] = *b"STSH";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShotHeader {
    pub num_qubits: u32,
    pub num_steps: u32,
    pub shots: u64,
    pub master_seed: u64,
}

impl ShotHeader {
    pub fn record_len(&self) -> usize {
        let n = self.num_qubits as usize;
        let bits = n.div_ceil(8);
        n + bits + self.num_steps as usize * (2 * n + bits)
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(&MAGIC);
        h[4..6].copy_from_slice(&VERSION.to_le_bytes());
        h[6..10].copy_from_slice(&self.num_qubits.to_le_bytes());
        h[10..14].copy_from_slice(&self.num_steps.to_le_bytes());
        h[14..22].copy_from_slice(&self.shots.to_le_bytes());
        h[22..30].copy_from_slice(&self.master_seed.to_le_bytes());
        h
    }

    fn decode(h: &[u8]) -> Result<Self> {
        if h.len() < HEADER_LEN {
            return Err(Error::Format(format!("file is {} bytes, shorter than the header", h.len())));
        }
        if h[0..4] != MAGIC {
            return Err(Error::Format(format!("bad magic bytes {:?}", &h[0..4])));
        }
        let version = u16::from_le_bytes([h[4], h[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let u32_at = |i: usize| u32::from_le_bytes(h[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(h[i..i + 8].try_into().unwrap());
        Ok(Self { num_qubits: u32_at(6), num_steps: u32_at(10), shots: u64_at(14), master_seed: u64_at(22) })
    }

    /// Checks `N`, `k` and seed against expected values.
    pub fn check(&self, num_qubits: usize, num_steps: usize, master_seed: u64) -> Result<()> {
        let mismatch = |field, expected: String, found: String| Err(Error::HeaderMismatch { field, expected, found });
        if self.num_qubits as usize != num_qubits {
            return mismatch("num_qubits", num_qubits.to_string(), self.num_qubits.to_string());
        }
        if self.num_steps as usize != num_steps {
            return mismatch("num_steps", num_steps.to_string(), self.num_steps.to_string());
        }
        if self.master_seed != master_seed {
            return mismatch("master_seed", master_seed.to_string(), self.master_seed.to_string());
        }
        Ok(())
    }
}

fn encode_record(r: &ShadowRecord, out: &mut Vec<u8>) {
    let n = r.num_qubits;
    let bits = |t: usize, out: &mut Vec<u8>| {
        let mut bytes = vec![0u8; n.div_ceil(8)];
        for q in 0..n {
            bytes[q / 8] |= r.outcomes[t * n + q] << (q % 8);
        }
        out.extend_from_slice(&bytes);
    };
    out.extend(r.meas[..n].iter().map(|c| c.get()));
    bits(0, out);
    for j in 1..=r.num_steps {
        out.extend(r.prep[(j - 1) * n..j * n].iter().map(|c| c.get()));
        out.extend(r.meas[j * n..(j + 1) * n].iter().map(|c| c.get()));
        bits(j, out);
    }
}

fn decode_record(bytes: &[u8], header: &ShotHeader, shot_index: u64) -> Result<ShadowRecord> {
    let n = header.num_qubits as usize;
    let k = header.num_steps as usize;
    let nb = n.div_ceil(8);
    let clifford = |b: u8| {
        crate::clifford::CliffordIndex::new(b)
            .ok_or_else(|| Error::Format(format!("Clifford byte {b} out of range 0..{GROUP_ORDER} in shot {shot_index}")))
    };
    let mut meas = Vec::with_capacity((k + 1) * n);
    let mut outcomes = Vec::with_capacity((k + 1) * n);
    let mut prep = Vec::with_capacity(k * n);
    let mut pos = 0;
    for j in 0..=k {
        if j > 0 {
            for &b in &bytes[pos..pos + n] {
                prep.push(clifford(b)?);
            }
            pos += n;
        }
        for &b in &bytes[pos..pos + n] {
            meas.push(clifford(b)?);
        }
        pos += n;
        for q in 0..n {
            outcomes.push((bytes[pos + q / 8] >> (q % 8)) & 1);
        }
        pos += nb;
    }
    Ok(ShadowRecord { num_qubits: n, num_steps: k, seed: header.master_seed, shot_index, meas, outcomes, prep })
}

/// Writes a fresh file holding `shots`.
pub fn write_shots(path: &Path, shots: &ShotSet) -> Result<()> {
    let header = ShotHeader {
        num_qubits: shots.num_qubits() as u32,
        num_steps: shots.num_steps() as u32,
        shots: shots.len() as u64,
        master_seed: shots.master_seed(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&header.encode())?;
    let mut buf = Vec::with_capacity(header.record_len());
    for r in shots.records() {
        buf.clear();
        encode_record(&r, &mut buf);
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends `shots` to an existing file and bumps its shot count. The new
/// shots must continue the file's index sequence.
pub fn append_shots(path: &Path, shots: &ShotSet) -> Result<()> {
    let header = read_header(path)?;
    header.check(shots.num_qubits(), shots.num_steps(), shots.master_seed())?;
    if let Some(first) = shots.records().next() {
        if first.shot_index != header.shots {
            return Err(Error::HeaderMismatch {
                field: "shots",
                expected: header.shots.to_string(),
                found: first.shot_index.to_string(),
            });
        }
    }
    let mut f = OpenOptions::new().read(true).write(true).open(path)?;
    f.seek(SeekFrom::Start(HEADER_LEN as u64 + header.shots * header.record_len() as u64))?;
    let mut w = BufWriter::new(&mut f);
    let mut buf = Vec::new();
    for r in shots.records() {
        buf.clear();
        encode_record(&r, &mut buf);
        w.write_all(&buf)?;
    }
    w.flush()?;
    drop(w);
    let count = header.shots + shots.len() as u64;
    f.seek(SeekFrom::Start(14))?;
    f.write_all(&count.to_le_bytes())?;
    Ok(())
}

pub fn read_header(path: &Path) -> Result<ShotHeader> {
    let mut h = Vec::with_capacity(HEADER_LEN);
    File::open(path)?.take(HEADER_LEN as u64).read_to_end(&mut h)?;
    ShotHeader::decode(&h)
}

/// Reads every shot; fails with [`Error::Truncated`] if fewer whole records
/// are present than the header declares.
pub fn read_shots(path: &Path) -> Result<(ShotHeader, ShotSet)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut h = Vec::with_capacity(HEADER_LEN);
    (&mut r).take(HEADER_LEN as u64).read_to_end(&mut h)?;
    let header = ShotHeader::decode(&h)?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let len = header.record_len();
    let available = (body.len() / len) as u64;
    if available < header.shots {
        return Err(Error::Truncated { declared: header.shots, available });
    }
    let mut set = ShotSet::empty(header.num_qubits as usize, header.num_steps as usize, header.master_seed);
    for i in 0..header.shots as usize {
        set.push(&decode_record(&body[i * len..(i + 1) * len], &header, i as u64)?)?;
    }
    Ok((header, set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DeviceModel;
    use crate::shadow::sample_shots;

    fn sample(n: usize, count: usize) -> ShotSet {
        let mut model = DeviceModel::chain(n, 2);
        for q in 1..n as u32 {
            model = model.with_edge(q - 1, q, 0.4);
        }
        sample_shots(&model, 11, count).unwrap()
    }

    #[test]
    fn round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.stsh");
        let shots = sample(9, 40);
        write_shots(&path, &shots).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // 9 qubits: 2 outcome bytes per layer
        assert_eq!(bytes.len(), HEADER_LEN + 40 * (9 + 2 + 2 * (18 + 2)));
        assert_eq!(&bytes[0..4], b"STSH");
        let (header, back) = read_shots(&path).unwrap();
        assert_eq!(header, ShotHeader { num_qubits: 9, num_steps: 2, shots: 40, master_seed: 11 });
        assert_eq!(back, shots);
    }

    #[test]
    fn append_continues_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.stsh");
        let all = sample(3, 30);
        write_shots(&path, &all.truncated(10)).unwrap();
        let model = DeviceModel::chain(3, 2).with_edge(0, 1, 0.4).with_edge(1, 2, 0.4);
        let sampler = crate::shadow::Sampler::new(&model, Default::default()).unwrap();
        append_shots(&path, &sampler.sample_shots(11, 10, 20)).unwrap();
        assert_eq!(read_shots(&path).unwrap().1, all);
        assert!(matches!(append_shots(&path, &sampler.sample_shots(11, 5, 1)), Err(Error::HeaderMismatch { .. })));
    }

    #[test]
    fn truncated_file_reports_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.stsh");
        write_shots(&path, &sample(2, 10)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        match read_shots(&path) {
            Err(Error::Truncated { declared, available }) => assert_eq!((declared, available), (10, 9)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn corrupted_magic_and_header_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.stsh");
        write_shots(&path, &sample(2, 3)).unwrap();
        let header = read_header(&path).unwrap();
        assert!(matches!(header.check(2, 3, 11), Err(Error::HeaderMismatch { field: "num_steps", .. })));
        assert!(matches!(header.check(2, 2, 12), Err(Error::HeaderMismatch { field: "master_seed", .. })));
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[1] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_shots(&path), Err(Error::Format(_))));
    }
}
