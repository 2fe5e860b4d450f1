//! SFV1: little-endian container for stage-annotated features.
//!
//! ```text
//! header   "SFV1" | u32 dim | u32 num_stages | u32 record_count          (16 bytes)
//! classes  u32 class_count, then per class in ascending id:
//!          u32 class_id | u16 text_count | u16 name_len | name | text_count×dim×f32
//! records  u32 class_id | u16 stage_id | u16 reserved=0 | dim×f32
//! ```
//!
//! A dataset with no classes omits the class section entirely, so an empty
//! dataset is exactly the 16-byte header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{validate_dataset, FeatureDataset, FeatureRecord};
use crate::error::{Error, Result};

pub const SFV_MAGIC: &[u8; 4] = b"SFV1";
pub const SFV_HEADER_LEN: usize = 16;

fn push_f32s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

/// Writes `ds` as SFV1 and returns the number of bytes written.
pub fn encode_dataset<W: Write>(ds: &FeatureDataset, mut sink: W) -> Result<usize> {
    let report = validate_dataset(ds);
    if !report.ok {
        return Err(Error::InvalidDataset(report.summary()));
    }
    let record_count = u32::try_from(ds.records.len())
        .map_err(|_| Error::InvalidDataset("more than u32::MAX records".into()))?;
    let dim = u32::try_from(ds.dim).map_err(|_| Error::InvalidDataset("dimension exceeds u32".into()))?;

    let mut buf = Vec::with_capacity(SFV_HEADER_LEN + ds.records.len() * (8 + 4 * ds.dim));
    buf.extend_from_slice(SFV_MAGIC);
    buf.extend_from_slice(&dim.to_le_bytes());
    buf.extend_from_slice(&ds.num_stages.to_le_bytes());
    buf.extend_from_slice(&record_count.to_le_bytes());

    if !ds.class_texts.is_empty() {
        buf.extend_from_slice(&(ds.class_texts.len() as u32).to_le_bytes());
        for (class_id, texts) in &ds.class_texts {
            let name = ds.class_names.get(class_id).map(String::as_str).unwrap_or("");
            buf.extend_from_slice(&class_id.to_le_bytes());
            buf.extend_from_slice(&(texts.len() as u16).to_le_bytes());
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            for t in texts {
                push_f32s(&mut buf, t);
            }
        }
    }

    for r in &ds.records {
        buf.extend_from_slice(&r.class_id.to_le_bytes());
        buf.extend_from_slice(&(r.stage_id as u16).to_le_bytes());
        buf.extend_from_slice(&0u16.to_le_bytes());
        push_f32s(&mut buf, &r.features);
    }

    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(buf.len())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::UnexpectedEnd);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(4 * n)?;
        raw.chunks_exact(4)
            .map(|c| {
                let v = f32::from_le_bytes(c.try_into().unwrap());
                if v.is_finite() {
                    Ok(f64::from(v))
                } else {
                    Err(Error::CorruptFeature(format!("non-finite value in {what}")))
                }
            })
            .collect()
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Parses an SFV1 stream. The result is validated before it is returned.
pub fn decode_dataset<R: Read>(mut source: R) -> Result<FeatureDataset> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    let magic = cur.take(4).map_err(|_| Error::BadMagic)?;
    if magic != SFV_MAGIC {
        return Err(Error::BadMagic);
    }
    let dim = cur.u32()? as usize;
    let num_stages = cur.u32()?;
    let record_count = cur.u32()? as usize;
    if dim == 0 {
        return Err(Error::Corrupt("dimension is zero".into()));
    }
    let mut ds = FeatureDataset::new(dim, num_stages);

    let class_count = if cur.at_end() { 0 } else { cur.u32()? };
    let mut prev: Option<u32> = None;
    for _ in 0..class_count {
        let class_id = cur.u32()?;
        if prev.is_some_and(|p| p >= class_id) {
            return Err(Error::Corrupt(format!("class {class_id} out of ascending order")));
        }
        prev = Some(class_id);
        let text_count = cur.u16()? as usize;
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Corrupt(format!("class {class_id} name is not UTF-8")))?
            .to_string();
        let mut texts = Vec::with_capacity(text_count);
        for _ in 0..text_count {
            texts.push(cur.f32s(dim, "text embedding")?);
        }
        ds.class_texts.insert(class_id, texts);
        if !name.is_empty() {
            ds.class_names.insert(class_id, name);
        }
    }

    ds.records.reserve(record_count);
    for i in 0..record_count {
        let class_id = cur.u32()?;
        let stage_id = u32::from(cur.u16()?);
        let reserved = cur.u16()?;
        if stage_id >= num_stages {
            return Err(Error::StageOutOfRange { record: i, stage: stage_id, num_stages });
        }
        if reserved != 0 {
            return Err(Error::Corrupt(format!("record {i} has non-zero reserved field")));
        }
        let features = cur.f32s(dim, "record")?;
        ds.records.push(FeatureRecord { class_id, stage_id, features });
    }
    if !cur.at_end() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after the last record",
            bytes.len() - cur.pos
        )));
    }
    let report = validate_dataset(&ds);
    if !report.ok {
        return Err(Error::InvalidDataset(report.summary()));
    }
    Ok(ds)
}

pub fn write_sfv(path: impl AsRef<Path>, ds: &FeatureDataset) -> Result<usize> {
    let report = validate_dataset(ds);
    if !report.ok {
        return Err(Error::InvalidDataset(report.summary()));
    }
    let file = File::create(path.as_ref())?;
    encode_dataset(ds, BufWriter::new(file))
}

pub fn read_sfv(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::from(e).context(format!("opening {}", path.display())))?;
    decode_dataset(BufReader::new(file)).map_err(|e| e.context(format!("reading {}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::tiny_dataset;

    fn encode(ds: &FeatureDataset) -> Vec<u8> {
        let mut out = Vec::new();
        let n = encode_dataset(ds, &mut out).unwrap();
        assert_eq!(n, out.len());
        out
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let ds = FeatureDataset::new(4, 2);
        let bytes = encode(&ds);
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[..4], b"SFV1");
        assert_eq!(decode_dataset(&bytes[..]).unwrap(), ds);
    }

    #[test]
    fn single_record_byte_count() {
        let mut ds = FeatureDataset::new(2, 1);
        ds.class_texts.insert(3, vec![vec![0.5, 0.5]]);
        ds.records.push(FeatureRecord { class_id: 3, stage_id: 0, features: vec![1.0, 2.0] });
        // header + (count + id + text_count + name_len + 1 text of 2 f32) + record
        let expect = 16 + (4 + 4 + 2 + 2 + 2 * 4) + (4 + 2 + 2 + 8);
        assert_eq!(encode(&ds).len(), expect);
    }

    #[test]
    fn round_trip_preserves_fields() {
        let ds = tiny_dataset();
        let back = decode_dataset(&encode(&ds)[..]).unwrap();
        assert_eq!(back.dim, ds.dim);
        assert_eq!(back.class_names, ds.class_names);
        assert_eq!(back.records.len(), ds.records.len());
        for (a, b) in back.records.iter().zip(&ds.records) {
            assert_eq!((a.class_id, a.stage_id), (b.class_id, b.stage_id));
            for (x, y) in a.features.iter().zip(&b.features) {
                assert_eq!(*x, f64::from(*y as f32));
            }
        }
        assert_eq!(encode(&back), encode(&ds));
    }

    #[test]
    fn decode_errors() {
        let bytes = encode(&tiny_dataset());
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_dataset(&bad[..]), Err(Error::BadMagic)));
        assert!(matches!(decode_dataset(&bytes[..bytes.len() - 3]), Err(Error::UnexpectedEnd)));
        assert!(matches!(decode_dataset(&b"SF"[..]), Err(Error::BadMagic)));

        // last record: stage field sits 4 bytes into the 16-byte record
        let mut st = bytes.clone();
        let at = st.len() - 16 + 4;
        st[at..at + 2].copy_from_slice(&7u16.to_le_bytes());
        assert!(matches!(decode_dataset(&st[..]), Err(Error::StageOutOfRange { record: 2, stage: 7, .. })));

        let mut nan = bytes.clone();
        let at = nan.len() - 4;
        nan[at..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_dataset(&nan[..]), Err(Error::CorruptFeature(_))));

        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode_dataset(&extra[..]), Err(Error::Corrupt(_))));
    }

    #[test]
    fn invalid_dataset_writes_nothing() {
        let mut ds = tiny_dataset();
        ds.records[0].stage_id = 5;
        let mut out = Vec::new();
        assert!(encode_dataset(&ds, &mut out).is_err());
        assert!(out.is_empty());
    }
}
