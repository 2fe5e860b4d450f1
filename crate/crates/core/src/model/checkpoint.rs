//! Binary model checkpoints: `STG1`, a length-prefixed JSON config, then
//! little-endian parameters and state.

use std::path::Path;

use super::{ClassAnchor, StageConfig, StageEntry, StageModel};
use crate::error::{Error, Result};
use crate::metrics::UsageStep;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STG1";

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn len(&mut self, n: usize) -> Result<()> {
        let n = u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("count {n} does not fit in u32")))?;
        self.u32(n);
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::UnexpectedEnd)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s_into(&mut self, out: &mut [f64]) -> Result<()> {
        let bytes = self.take(out.len() * 8)?;
        for (o, b) in out.iter_mut().zip(bytes.chunks_exact(8)) {
            *o = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        }
        Ok(())
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut v = vec![0.0; n];
        self.f64s_into(&mut v)?;
        Ok(v)
    }
}

pub fn encode_checkpoint(model: &StageModel) -> Result<Vec<u8>> {
    let mut w = Writer(CHECKPOINT_MAGIC.to_vec());
    let cfg = serde_json::to_vec(&model.cfg)?;
    w.len(cfg.len())?;
    w.0.extend_from_slice(&cfg);
    for t in model.proj.tensors() {
        w.f64s(t);
    }
    for t in model.evo.tensors() {
        w.f64s(t);
    }
    w.f64s(model.pool.patterns.as_slice());
    for &c in &model.pool.usage_counts {
        w.u64(c);
    }
    w.u64(model.pool.update_count);

    w.len(model.store.anchors.len())?;
    for (&c, a) in &model.store.anchors {
        w.u32(c);
        w.u32(a.stage);
        w.f64s(&a.anchor);
    }
    w.len(model.store.stages.len())?;
    for (&(c, s), e) in &model.store.stages {
        w.u32(c);
        w.u32(s);
        match &e.prediction {
            Some(p) => {
                w.0.push(1);
                w.f64s(p);
            }
            None => w.0.push(0),
        }
        w.f64s(&e.target_sum);
        w.u64(e.count);
    }
    w.len(model.usage.steps.len())?;
    for s in &model.usage.steps {
        w.u64(s.step as u64);
        for &c in &s.counts {
            w.u64(c);
        }
    }
    Ok(w.0)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<StageModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Corrupt("not a model checkpoint".into()));
    }
    let n = r.u32()? as usize;
    let cfg: StageConfig = serde_json::from_slice(r.take(n)?)?;
    let mut model = StageModel::new(cfg)?;
    let d = model.dim();
    for t in model.proj.tensors_mut() {
        r.f64s_into(t)?;
    }
    for t in model.evo.tensors_mut() {
        r.f64s_into(t)?;
    }
    r.f64s_into(model.pool.patterns.as_mut_slice())?;
    for c in model.pool.usage_counts.iter_mut() {
        *c = r.u64()?;
    }
    model.pool.update_count = r.u64()?;

    for _ in 0..r.u32()? {
        let c = r.u32()?;
        let stage = r.u32()?;
        let anchor = r.f64s(d)?;
        model.store.anchors.insert(c, ClassAnchor { stage, anchor });
    }
    for _ in 0..r.u32()? {
        let key = (r.u32()?, r.u32()?);
        let prediction = match r.u8()? {
            0 => None,
            1 => Some(r.f64s(d)?),
            f => return Err(Error::Corrupt(format!("bad prediction flag {f}"))),
        };
        let target_sum = r.f64s(d)?;
        let count = r.u64()?;
        model.store.stages.insert(key, StageEntry { prediction, target_sum, count });
    }
    for _ in 0..r.u32()? {
        let step = r.u64()? as usize;
        let counts = (0..model.pool.size()).map(|_| r.u64()).collect::<Result<_>>()?;
        model.usage.steps.push(UsageStep { step, counts });
    }
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &StageModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<StageModel> {
    decode_checkpoint(&std::fs::read(path)?)
}
