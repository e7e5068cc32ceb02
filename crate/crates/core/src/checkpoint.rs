//! Binary checkpoints: every parameter and optimizer moment plus the run
//! config, guarded by a CRC32.
//!
//! Layout (little-endian): `b"HNG1"`, version `u32`, entry count `u32`, then
//! per entry a `u16` name length, the UTF-8 name, a `u8` rank, `u32` dims and
//! the `f64` data; finally the CRC32 of everything before it.

use std::collections::{HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use hng_tensor::{AdamState, Tensor};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::trainer::{MetricRecord, TrainState};

pub const MAGIC: &[u8; 4] = b"HNG1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

fn blob(name: &str, bytes: &[u8]) -> Entry {
    Entry {
        name: name.into(),
        dims: vec![bytes.len()],
        data: bytes.iter().map(|&b| b as f64).collect(),
    }
}

fn blob_bytes(e: &Entry) -> Result<Vec<u8>> {
    e.data
        .iter()
        .map(|&v| {
            if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                Ok(v as u8)
            } else {
                Err(Error::Checkpoint(format!(
                    "entry `{}` is not a byte blob",
                    e.name
                )))
            }
        })
        .collect()
}

fn tensor_entry(name: String, t: &Tensor) -> Entry {
    Entry {
        name,
        dims: t.shape().to_vec(),
        data: t.to_vec(),
    }
}

fn vector(name: String, data: Vec<f64>) -> Entry {
    Entry {
        name,
        dims: vec![data.len()],
        data,
    }
}

fn adam_entries(prefix: &str, s: &AdamState) -> Vec<Entry> {
    let mut out = vec![vector(
        format!("{prefix}.meta"),
        vec![
            s.step_count as f64,
            s.learning_rate,
            s.beta1,
            s.beta2,
            s.epsilon,
        ],
    )];
    for (i, m) in s.moments.iter().enumerate() {
        out.push(vector(format!("{prefix}.{i}.first"), m.first.clone()));
        out.push(vector(format!("{prefix}.{i}.second"), m.second.clone()));
    }
    out
}

pub fn encode(entries: &[Entry]) -> Result<Vec<u8>> {
    let mut names = HashSet::new();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        if !names.insert(e.name.as_str()) {
            return Err(Error::Checkpoint(format!("duplicate entry `{}`", e.name)));
        }
        let name = e.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint("entry name too long".into()))?;
        let rank =
            u8::try_from(e.dims.len()).map_err(|_| Error::Checkpoint("rank too large".into()))?;
        if e.dims.iter().product::<usize>() != e.data.len() {
            return Err(Error::Checkpoint(format!(
                "entry `{}` dims do not match data",
                e.name
            )));
        }
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(rank);
        for &d in &e.dims {
            let d =
                u32::try_from(d).map_err(|_| Error::Checkpoint("dimension too large".into()))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in &e.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    if bytes.len() < 16 {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if &body[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("CRC mismatch: file is corrupt".into()));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = r.u32()?;
    let mut entries = Vec::new();
    let mut names = HashSet::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let dims = (0..rank)
            .map(|_| Ok(r.u32()? as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let data = r
            .take(
                n.checked_mul(8)
                    .ok_or_else(|| Error::Checkpoint("entry too large".into()))?,
            )?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if !names.insert(name.clone()) {
            return Err(Error::Checkpoint(format!("duplicate entry `{name}`")));
        }
        entries.push(Entry { name, dims, data });
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after last entry".into()));
    }
    Ok(entries)
}

pub fn entries(state: &TrainState, cfg: &RunConfig) -> Vec<Entry> {
    let mut out = vec![
        blob("config.json", cfg.to_json().as_bytes()),
        vector("state.step".into(), vec![state.step as f64]),
        vector("state.loss_avg".into(), state.loss_avg.to_vec()),
        blob(
            "state.history.json",
            serde_json::to_string(&state.history)
                .expect("history serializes")
                .as_bytes(),
        ),
    ];
    out.extend(
        state
            .named_params()
            .into_iter()
            .map(|(n, t)| tensor_entry(n, &t)),
    );
    out.extend(adam_entries("adam_g", &state.adam_g));
    out.extend(adam_entries("adam_d", &state.adam_d));
    out
}

/// Removes the lockfile when dropped.
struct Lock(PathBuf);

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes through a temporary file and a `.lock` sidecar, so readers never
/// see a partial checkpoint and concurrent writers fail fast.
pub fn save(state: &TrainState, cfg: &RunConfig, path: &Path) -> Result<()> {
    let bytes = encode(&entries(state, cfg))?;
    let lock_path = sidecar(path, ".lock");
    OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(&lock_path)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::AlreadyExists => {
                Error::Checkpoint(format!("{} is locked by another writer", path.display()))
            }
            _ => Error::io(&lock_path, e),
        })?;
    let _lock = Lock(lock_path);
    let tmp = sidecar(path, ".tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn restore_adam(
    prefix: &str,
    target: &mut AdamState,
    by_name: &mut HashMap<String, Entry>,
) -> Result<()> {
    let meta = take(by_name, &format!("{prefix}.meta"), &[5])?;
    target.step_count = meta[0] as u64;
    target.learning_rate = meta[1];
    target.beta1 = meta[2];
    target.beta2 = meta[3];
    target.epsilon = meta[4];
    for (i, m) in target.moments.iter_mut().enumerate() {
        let len = [m.first.len()];
        m.first = take(by_name, &format!("{prefix}.{i}.first"), &len)?;
        m.second = take(by_name, &format!("{prefix}.{i}.second"), &len)?;
    }
    Ok(())
}

fn take(by_name: &mut HashMap<String, Entry>, name: &str, dims: &[usize]) -> Result<Vec<f64>> {
    let e = by_name
        .remove(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing entry `{name}`")))?;
    if e.dims != dims {
        return Err(Error::Checkpoint(format!(
            "entry `{name}` has shape {:?}, expected {dims:?}",
            e.dims
        )));
    }
    Ok(e.data)
}

pub fn load(path: &Path) -> Result<(TrainState, RunConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut by_name: HashMap<String, Entry> = decode(&bytes)?
        .into_iter()
        .map(|e| (e.name.clone(), e))
        .collect();
    let cfg_entry = by_name
        .remove("config.json")
        .ok_or_else(|| Error::Checkpoint("missing entry `config.json`".into()))?;
    let text = String::from_utf8(blob_bytes(&cfg_entry)?)
        .map_err(|_| Error::Checkpoint("embedded config is not UTF-8".into()))?;
    let cfg = RunConfig::from_json(&text)?;
    let mut state = TrainState::init(&cfg)?;
    for (name, t) in state.named_params() {
        let data = take(&mut by_name, &name, t.shape())?;
        t.set_data(data)?;
    }
    state.step = take(&mut by_name, "state.step", &[1])?[0] as u64;
    let avg = take(&mut by_name, "state.loss_avg", &[2])?;
    state.loss_avg = [avg[0], avg[1]];
    let hist = by_name
        .remove("state.history.json")
        .ok_or_else(|| Error::Checkpoint("missing entry `state.history.json`".into()))?;
    let hist: Vec<MetricRecord> = serde_json::from_slice(&blob_bytes(&hist)?)
        .map_err(|e| Error::Checkpoint(format!("history: {e}")))?;
    state.history = hist;
    restore_adam("adam_g", &mut state.adam_g, &mut by_name)?;
    restore_adam("adam_d", &mut state.adam_d, &mut by_name)?;
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected entry `{extra}`")));
    }
    Ok((state, cfg))
}
