//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic     8 bytes   "DUCDLCK1"
//! config    u32 length + UTF-8 JSON of the ModelConfig
//! count     u32       number of tensor records
//! record    u32 name length, name bytes,
//!           u32 rank, rank x u64 dims,
//!           prod(dims) x f64 values
//! ```
//!
//! Learnable tensors come first in visiting order, then batch-norm running
//! statistics (rank 1).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::params::Parameters;

pub const MAGIC: &[u8; 8] = b"DUCDLCK1";

struct Record {
    name: String,
    dims: Vec<usize>,
    values: Vec<f64>,
}

fn records(params: &ModelParams) -> Vec<Record> {
    let mut out = Vec::new();
    params.visit_shapes("", &mut |name, dims| {
        out.push(Record {
            name: name.to_string(),
            dims: dims.to_vec(),
            values: Vec::new(),
        })
    });
    let mut i = 0;
    params.visit("", &mut |_, v| {
        out[i].values = v.to_vec();
        i += 1;
    });
    params.visit_buffers("", &mut |name, v| {
        out.push(Record {
            name: name.to_string(),
            dims: vec![v.len()],
            values: v.to_vec(),
        })
    });
    out
}

pub fn write_checkpoint(w: &mut impl Write, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    let json = serde_json::to_vec(cfg).map_err(|e| Error::Format(e.to_string()))?;
    let recs = records(params);
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(recs.len() as u32).to_le_bytes())?;
    for r in &recs {
        w.write_all(&(r.name.len() as u32).to_le_bytes())?;
        w.write_all(r.name.as_bytes())?;
        w.write_all(&(r.dims.len() as u32).to_le_bytes())?;
        for &d in &r.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &r.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn checkpoint_bytes(cfg: &ModelConfig, params: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, cfg, params).expect("writing to memory");
    buf
}

struct Reader<'a> {
    inner: &'a mut dyn Read,
}

impl Reader<'_> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format(format!("checkpoint truncated while reading {what}")),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.bytes(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Format(format!("{what} {v} too large")))
    }
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(ModelConfig, ModelParams)> {
    let mut rd = Reader { inner: r };
    if rd.bytes(8, "magic")? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic bytes)".into()));
    }
    let len = rd.u32("config length")?;
    let json = rd.bytes(len, "config")?;
    let cfg: ModelConfig = serde_json::from_slice(&json).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    cfg.validate().map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let mut params = ModelParams::init(&cfg, 0)?;
    let template = records(&params);
    let count = rd.u32("record count")?;
    if count != template.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, configuration expects {}",
            template.len()
        )));
    }
    let mut loaded = Vec::with_capacity(count);
    for t in &template {
        let name_len = rd.u32("name length")?;
        let name = String::from_utf8(rd.bytes(name_len, "name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        if name != t.name {
            return Err(Error::Format(format!("expected tensor {}, found {name}", t.name)));
        }
        let rank = rd.u32("rank")?;
        let dims = (0..rank).map(|_| rd.u64("dimension")).collect::<Result<Vec<_>>>()?;
        if dims != t.dims {
            return Err(Error::Format(format!("tensor {name} has dims {dims:?}, expected {:?}", t.dims)));
        }
        let raw = rd.bytes(8 * t.values.len(), "tensor data")?;
        let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("tensor {name} holds non-finite values")));
        }
        loaded.push(values);
    }
    let mut extra = [0u8; 1];
    if rd.inner.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after the last tensor".into()));
    }
    let mut it = loaded.into_iter();
    params.visit_mut("", &mut |_, v| v.copy_from_slice(&it.next().unwrap()));
    params.visit_buffers_mut("", &mut |_, v| v.copy_from_slice(&it.next().unwrap()));
    Ok((cfg, params))
}

pub fn save(path: &std::path::Path, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(cfg, params))?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<(ModelConfig, ModelParams)> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}
