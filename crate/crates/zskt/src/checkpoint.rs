//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ZSKT" | u32 version | u32 record count
//! per record: u32 name length | UTF-8 name | u8 dtype (0 = f32, 1 = f64)
//!             | u32 rank | rank × u32 dims | raw values
//! ```
//!
//! Network checkpoints carry two extra records: `meta.spec` (the TOML text
//! of the architecture, one byte per value) and `meta.spec_digest` (its
//! SHA-256, one byte per value). Loading rebuilds the network from the
//! stored spec and rejects a file whose digest does not match.

use std::path::Path;

use sha2::{Digest, Sha256};
use zskt_core::nn::{Mode, NetSpec, Network};
use zskt_core::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ZSKT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 12;

pub const SPEC_RECORD: &str = "meta.spec";
pub const DIGEST_RECORD: &str = "meta.spec_digest";

/// Storage type of tensor values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    F32,
    /// Lossless; the default so that a reload reproduces training state exactly.
    #[default]
    F64,
}

impl Precision {
    fn tag(self) -> u8 {
        match self {
            Precision::F32 => 0,
            Precision::F64 => 1,
        }
    }
}

pub type Record = (String, Tensor);

pub fn encode_records(records: &[Record], precision: Precision) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(precision.tag());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match precision {
            Precision::F32 => t.data().iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
            Precision::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    record: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            zskt_core::Error::Truncated(format!(
                "record {} {what}: need {n} bytes at offset {}, file has {}",
                self.record,
                self.at,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parse a checkpoint. Either the whole file decodes or nothing is returned.
pub fn decode_records(bytes: &[u8]) -> Result<Vec<Record>> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(zskt_core::Error::BadMagic {
            expected: u32::from_le_bytes(MAGIC),
            found: u32::from_le_bytes(found),
        }
        .into());
    }
    let mut r = Reader { bytes, at: 4, record: 0 };
    let version = r.u32("header")?;
    if version != VERSION {
        return Err(Error::Version {
            expected: VERSION,
            found: version,
        });
    }
    let count = r.u32("header")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        r.record = i;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Corrupt(format!("record {i} name is not UTF-8")))?
            .to_string();
        let tag = r.take(1, "dtype")?[0];
        let width = match tag {
            0 => 4,
            1 => 8,
            t => return Err(Error::Corrupt(format!("record {i} ({name}) has dtype tag {t}"))),
        };
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.u32("dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::Corrupt(format!("record {i} ({name}) dims overflow")))?;
        let raw = r.take(n, "values")?;
        let data: Vec<f64> = if width == 4 {
            raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
        } else {
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
        };
        out.push((name, Tensor::new(&shape, data)?));
    }
    if r.at != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes after the last record", bytes.len() - r.at)));
    }
    Ok(out)
}

/// Canonical text form of an architecture.
pub fn spec_text(spec: &NetSpec) -> String {
    toml::to_string(spec).expect("network specs always serialize")
}

fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn spec_digest(spec: &NetSpec) -> [u8; 32] {
    sha256(spec_text(spec).as_bytes())
}

fn bytes_record(name: &str, bytes: &[u8]) -> Record {
    let t = Tensor::new(&[bytes.len()], bytes.iter().map(|&b| b as f64).collect()).expect("rank-1 shape");
    (name.to_string(), t)
}

fn record_bytes(records: &[Record], name: &str) -> Result<Vec<u8>> {
    let (_, t) = records
        .iter()
        .find(|(n, _)| n == name)
        .ok_or_else(|| Error::Corrupt(format!("missing {name} record")))?;
    t.data()
        .iter()
        .map(|&v| {
            (v.fract() == 0.0 && (0.0..256.0).contains(&v))
                .then_some(v as u8)
                .ok_or_else(|| Error::Corrupt(format!("{name} holds a non-byte value {v}")))
        })
        .collect()
}

/// Metadata records followed by every parameter and buffer of `net`.
pub fn network_records(net: &Network) -> Vec<Record> {
    let text = spec_text(net.spec());
    let mut out = vec![
        bytes_record(SPEC_RECORD, text.as_bytes()),
        bytes_record(DIGEST_RECORD, &sha256(text.as_bytes())),
    ];
    out.extend(net.params().iter().chain(net.buffers()).map(|p| (p.name.clone(), p.value.clone())));
    out
}

pub fn encode_network(net: &Network, precision: Precision) -> Vec<u8> {
    encode_records(&network_records(net), precision)
}

/// Rebuild a network from checkpoint bytes, in eval mode.
///
/// With `expected`, the stored spec digest must also equal the digest of
/// that spec.
pub fn decode_network(bytes: &[u8], expected: Option<&NetSpec>) -> Result<Network> {
    let records = decode_records(bytes)?;
    let text = String::from_utf8(record_bytes(&records, SPEC_RECORD)?)
        .map_err(|_| Error::Corrupt("spec record is not UTF-8".into()))?;
    let stored = record_bytes(&records, DIGEST_RECORD)?;
    let computed = sha256(text.as_bytes());
    if stored != computed {
        return Err(Error::DigestMismatch {
            stored: hex(&stored),
            computed: hex(&computed),
        });
    }
    if let Some(want) = expected {
        let want = spec_digest(want);
        if want != computed {
            return Err(Error::DigestMismatch {
                stored: hex(&computed),
                computed: hex(&want),
            });
        }
    }
    let spec: NetSpec = toml::from_str(&text).map_err(|e| Error::Corrupt(format!("spec record: {e}")))?;
    let mut net = Network::build(&spec, 0)?;
    net.load_named(&records)?;
    net.set_mode(Mode::Eval);
    Ok(net)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_network(path: &Path, net: &Network) -> Result<()> {
    write_file(path, &encode_network(net, Precision::F64))
}

pub fn load_network(path: &Path, expected: Option<&NetSpec>) -> Result<Network> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_network(&bytes, expected)
}

pub fn load_records(path: &Path) -> Result<Vec<Record>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_records(&bytes)
}
