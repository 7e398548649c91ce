//! The `.pots` container: a fixed header, fixed-size sample records and a
//! trailing index of record offsets. All integers are little-endian.
//!
//! ```text
//! header (47 bytes)
//!   magic           4  b"POTS"
//!   format_version  u16 = 1
//!   endianness      u8  = 0 (little)
//!   n_samples       u64
//!   n_steps         u64
//!   n_features      u64
//!   flags           u64  bit 0: labels present
//!   index_offset    u64
//! record (one per sample)
//!   sample_id       u64
//!   timestamps      T × f64
//!   values          T·D × f64, missing cells as the quiet NaN 0x7FF8000000000000
//!   mask            ⌈T·D/8⌉ bytes, cell i at bit (i mod 8) of byte i/8
//!   label           i64, −1 when absent
//!   checksum        u32, CRC-32 of the preceding record bytes
//! index
//!   n_samples × u64 record offsets
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{PotsError, Result};
use crate::sample::{DatasetAccess, PotsDataset, TimeSeriesSample};

pub const MAGIC: &[u8; 4] = b"POTS";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 47;
pub const FLAG_LABELS: u64 = 1;
const NAN_BITS: u64 = 0x7FF8_0000_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContainerHeader {
    pub format_version: u16,
    pub n_samples: u64,
    pub n_steps: u64,
    pub n_features: u64,
    pub flags: u64,
    pub index_offset: u64,
}

impl ContainerHeader {
    pub fn labels_present(&self) -> bool {
        self.flags & FLAG_LABELS != 0
    }

    /// Size in bytes of one sample record.
    pub fn record_len(&self) -> u64 {
        record_len(self.n_steps as usize, self.n_features as usize) as u64
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(MAGIC);
        b[4..6].copy_from_slice(&self.format_version.to_le_bytes());
        b[6] = 0;
        b[7..15].copy_from_slice(&self.n_samples.to_le_bytes());
        b[15..23].copy_from_slice(&self.n_steps.to_le_bytes());
        b[23..31].copy_from_slice(&self.n_features.to_le_bytes());
        b[31..39].copy_from_slice(&self.flags.to_le_bytes());
        b[39..47].copy_from_slice(&self.index_offset.to_le_bytes());
        b
    }

    fn decode(b: &[u8; HEADER_LEN], path: &Path) -> Result<Self> {
        if &b[0..4] != MAGIC {
            return Err(PotsError::Format(format!(
                "not a POTS container: {}",
                path.display()
            )));
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != FORMAT_VERSION {
            return Err(PotsError::Format(format!(
                "{}: unsupported container version {version}",
                path.display()
            )));
        }
        if b[6] != 0 {
            return Err(PotsError::Format(format!(
                "{}: unsupported endianness tag {}",
                path.display(),
                b[6]
            )));
        }
        let u64_at = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        Ok(ContainerHeader {
            format_version: version,
            n_samples: u64_at(7),
            n_steps: u64_at(15),
            n_features: u64_at(23),
            flags: u64_at(31),
            index_offset: u64_at(39),
        })
    }
}

fn record_len(t: usize, d: usize) -> usize {
    8 + 8 * t + 8 * t * d + (t * d).div_ceil(8) + 8 + 4
}

fn encode_record(s: &TimeSeriesSample, out: &mut Vec<u8>) {
    let start = out.len();
    out.extend_from_slice(&s.sample_id().to_le_bytes());
    for ts in s.timestamps() {
        out.extend_from_slice(&ts.to_le_bytes());
    }
    for (&v, &m) in s.values().iter().zip(s.mask()) {
        let bits = if m { v.to_bits() } else { NAN_BITS };
        out.extend_from_slice(&bits.to_le_bytes());
    }
    let mut packed = vec![0u8; s.mask().len().div_ceil(8)];
    for (i, &m) in s.mask().iter().enumerate() {
        if m {
            packed[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&packed);
    let label: i64 = s.label().map(|l| l as i64).unwrap_or(-1);
    out.extend_from_slice(&label.to_le_bytes());
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
}

fn decode_record(buf: &[u8], t: usize, d: usize, index: u64) -> Result<TimeSeriesSample> {
    let corrupt = |what: &str| PotsError::Corruption(format!("sample record {index}: {what}"));
    let body = &buf[..buf.len() - 4];
    let stored = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch"));
    }
    let f64_at = |o: usize| f64::from_le_bytes(body[o..o + 8].try_into().unwrap());
    let sample_id = u64::from_le_bytes(body[0..8].try_into().unwrap());
    let mut off = 8;
    let timestamps: Vec<f64> = (0..t).map(|i| f64_at(off + 8 * i)).collect();
    off += 8 * t;
    let values: Vec<f64> = (0..t * d).map(|i| f64_at(off + 8 * i)).collect();
    off += 8 * t * d;
    let packed = &body[off..off + (t * d).div_ceil(8)];
    off += packed.len();
    let mask: Vec<bool> = (0..t * d)
        .map(|i| packed[i / 8] & (1 << (i % 8)) != 0)
        .collect();
    if values.iter().zip(&mask).any(|(v, &m)| m == v.is_nan()) {
        return Err(corrupt("mask disagrees with missing-value pattern"));
    }
    let label = i64::from_le_bytes(body[off..off + 8].try_into().unwrap());
    let label = match label {
        -1 => None,
        l if l >= 0 => Some(l as usize),
        l => return Err(corrupt(&format!("invalid label {l}"))),
    };
    TimeSeriesSample::from_parts(sample_id, timestamps, values, mask, d, label)
        .map_err(|e| corrupt(&e.to_string()))
}

/// Serializes `dataset` to `path`. Output is a pure function of the
/// dataset contents.
pub fn write_container(dataset: &PotsDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (t, d) = (dataset.n_steps(), dataset.n_features());
    let n = dataset.len() as u64;
    let rlen = record_len(t, d) as u64;
    let labels = dataset.samples().iter().any(|s| s.label().is_some());
    let header = ContainerHeader {
        format_version: FORMAT_VERSION,
        n_samples: n,
        n_steps: t as u64,
        n_features: d as u64,
        flags: if labels { FLAG_LABELS } else { 0 },
        index_offset: HEADER_LEN as u64 + n * rlen,
    };
    let file = File::create(path).map_err(|e| PotsError::storage(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| PotsError::storage(path, e);
    w.write_all(&header.encode()).map_err(io)?;
    let mut buf = Vec::with_capacity(rlen as usize);
    for s in dataset.samples() {
        buf.clear();
        encode_record(s, &mut buf);
        w.write_all(&buf).map_err(io)?;
    }
    for i in 0..n {
        let offset = HEADER_LEN as u64 + i * rlen;
        w.write_all(&offset.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)?;
    w.into_inner()
        .map_err(|e| PotsError::storage(path, e.into_error()))?
        .sync_all()
        .map_err(io)
}

/// Read-only handle on a container. Header and index are cached; sample
/// payloads are read on demand with positional reads, never cached.
#[derive(Debug)]
pub struct ReadHandle {
    file: File,
    path: PathBuf,
    header: ContainerHeader,
    index: Vec<u64>,
    payload_bytes_read: AtomicU64,
}

/// Opens and validates a container without reading any sample payload.
pub fn open_readonly(path: impl AsRef<Path>) -> Result<ReadHandle> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| PotsError::storage(path, e))?;
    let file_len = file
        .metadata()
        .map_err(|e| PotsError::storage(path, e))?
        .len();
    let mut hb = [0u8; HEADER_LEN];
    if file_len < HEADER_LEN as u64 {
        // too short to carry a header; report by magic when possible
        let mut head = vec![0u8; file_len as usize];
        file.read_exact(&mut head)
            .map_err(|e| PotsError::storage(path, e))?;
        if head.len() < 4 || &head[..4] != MAGIC {
            return Err(PotsError::Format(format!(
                "not a POTS container: {}",
                path.display()
            )));
        }
        return Err(PotsError::Format(format!(
            "{}: truncated header",
            path.display()
        )));
    }
    file.read_exact(&mut hb)
        .map_err(|e| PotsError::storage(path, e))?;
    let header = ContainerHeader::decode(&hb, path)?;
    let truncated = || PotsError::Format(format!("{}: truncated index", path.display()));
    let index_len = header.n_samples.checked_mul(8).ok_or_else(truncated)?;
    let index_end = header
        .index_offset
        .checked_add(index_len)
        .ok_or_else(truncated)?;
    if header.index_offset >= file_len && header.n_samples > 0 || index_end > file_len {
        return Err(truncated());
    }
    let rlen = header.record_len();
    let mut raw = vec![0u8; index_len as usize];
    read_at(&file, &mut raw, header.index_offset).map_err(|e| PotsError::storage(path, e))?;
    let index: Vec<u64> = raw
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some((i, _)) = index
        .iter()
        .enumerate()
        .find(|(_, &o)| o < HEADER_LEN as u64 || o.saturating_add(rlen) > header.index_offset)
    {
        return Err(PotsError::Format(format!(
            "{}: index entry {i} points outside the record area",
            path.display()
        )));
    }
    Ok(ReadHandle {
        file,
        path: path.to_path_buf(),
        header,
        index,
        payload_bytes_read: AtomicU64::new(0),
    })
}

#[cfg(unix)]
fn read_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::read_exact_at(file, buf, offset)
}

#[cfg(windows)]
fn read_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        let n = file.seek_read(buf, offset)?;
        if n == 0 {
            return Err(std::io::ErrorKind::UnexpectedEof.into());
        }
        buf = &mut buf[n..];
        offset += n as u64;
    }
    Ok(())
}

impl ReadHandle {
    pub fn header(&self) -> &ContainerHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn n_samples(&self) -> u64 {
        self.header.n_samples
    }

    /// Total sample-record bytes read through this handle so far.
    pub fn payload_bytes_read(&self) -> u64 {
        self.payload_bytes_read.load(Ordering::Relaxed)
    }

    /// Reads and verifies the records at `indices`, in that order.
    pub fn fetch_batch(&self, indices: &[u64]) -> Result<Vec<TimeSeriesSample>> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.header.n_samples) {
            return Err(PotsError::InvalidInput(format!(
                "sample index {bad} out of range for {} samples",
                self.header.n_samples
            )));
        }
        let (t, d) = (
            self.header.n_steps as usize,
            self.header.n_features as usize,
        );
        let mut buf = vec![0u8; record_len(t, d)];
        indices
            .iter()
            .map(|&i| {
                read_at(&self.file, &mut buf, self.index[i as usize])
                    .map_err(|e| PotsError::storage(&self.path, e))?;
                self.payload_bytes_read
                    .fetch_add(buf.len() as u64, Ordering::Relaxed);
                decode_record(&buf, t, d, i)
            })
            .collect()
    }
}

/// [`DatasetAccess`] over a container: each fetch reads just the requested
/// records from disk.
#[derive(Debug)]
pub struct LazyDataset {
    handle: ReadHandle,
}

pub fn lazy_dataset(handle: ReadHandle) -> LazyDataset {
    LazyDataset { handle }
}

impl LazyDataset {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Ok(lazy_dataset(open_readonly(path)?))
    }

    pub fn handle(&self) -> &ReadHandle {
        &self.handle
    }
}

impl DatasetAccess for LazyDataset {
    fn len(&self) -> usize {
        self.handle.header.n_samples as usize
    }

    fn n_steps(&self) -> usize {
        self.handle.header.n_steps as usize
    }

    fn n_features(&self) -> usize {
        self.handle.header.n_features as usize
    }

    /// Class counts are not part of the container format.
    fn n_classes(&self) -> Option<usize> {
        None
    }

    fn fetch(&self, indices: &[usize]) -> Result<Vec<TimeSeriesSample>> {
        let idx: Vec<u64> = indices.iter().map(|&i| i as u64).collect();
        self.handle.fetch_batch(&idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_length_formula() {
        // id + 2 timestamps + 6 values + 1 mask byte + label + crc
        assert_eq!(record_len(2, 3), 8 + 16 + 48 + 1 + 8 + 4);
        assert_eq!(record_len(3, 3), 8 + 24 + 72 + 2 + 8 + 4);
    }

    #[test]
    fn header_round_trip() {
        let h = ContainerHeader {
            format_version: 1,
            n_samples: 3,
            n_steps: 4,
            n_features: 5,
            flags: 1,
            index_offset: 999,
        };
        let b = h.encode();
        assert_eq!(&b[..4], b"POTS");
        assert_eq!(ContainerHeader::decode(&b, Path::new("x")).unwrap(), h);
    }

    #[test]
    fn record_encodes_canonical_nan_and_packed_mask() {
        let mut vals = vec![1.0; 9];
        vals[0] = f64::from_bits(0x7FF8_0000_0000_0ABC);
        vals[8] = f64::NAN;
        let s = TimeSeriesSample::new(7, vec![0.0, 1.0, 2.0], vals, 3, Some(2)).unwrap();
        let mut buf = Vec::new();
        encode_record(&s, &mut buf);
        assert_eq!(buf.len(), record_len(3, 3));
        let v0 = u64::from_le_bytes(buf[32..40].try_into().unwrap());
        assert_eq!(v0, NAN_BITS);
        let mask_off = 8 + 24 + 72;
        assert_eq!(buf[mask_off], 0b1111_1110);
        assert_eq!(buf[mask_off + 1], 0);
        let back = decode_record(&buf, 3, 3, 0).unwrap();
        assert!(back.same_as(&s));
    }
}
