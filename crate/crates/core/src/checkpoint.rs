//! Checkpoint container.
//!
//! ```text
//! magic "MSCK" | version u16 | echo_len u32 | echo (UTF-8 JSON) | count u32 | tensors
//! tensor: name_len u16 | name (UTF-8) | rank u8 | dims (u32 each) | data (f32 each)
//! ```
//!
//! All integers and floats are little-endian. The echo block is
//! `{"config": <training config>, "adam_step": <u64 or null>}`. Optimizer
//! moments, when present, are stored as `adam.m/<param>` and `adam.v/<param>`.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::optim::AdamState;
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSCK";
pub const CHECKPOINT_VERSION: u16 = 1;

const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("checkpoint: {0}")]
    Contract(String),
}

type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Value,
    pub params: ParamSet,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut named: Vec<(String, &Tensor)> = self.params.iter().map(|(n, t)| (n.to_string(), t)).collect();
        if let Some(adam) = &self.adam {
            if adam.m.len() != self.params.len() || adam.v.len() != self.params.len() {
                return Err(CheckpointError::Contract("optimizer state does not match parameters".into()));
            }
            for (name, m) in self.params.names().zip(&adam.m) {
                named.push((format!("{ADAM_M}{name}"), m));
            }
            for (name, v) in self.params.names().zip(&adam.v) {
                named.push((format!("{ADAM_V}{name}"), v));
            }
        }
        let echo = json!({
            "config": self.config,
            "adam_step": self.adam.as_ref().map(|a| a.step),
        })
        .to_string();

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
        out.extend_from_slice(echo.as_bytes());
        out.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, t) in named {
            write_tensor(&mut out, &name, t)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Format {
                offset: 0,
                msg: "bad magic".into(),
            });
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let echo_len = r.u32()? as usize;
        let echo_start = r.pos;
        let echo: Value = serde_json::from_slice(r.take(echo_len)?).map_err(|e| CheckpointError::Format {
            offset: echo_start,
            msg: format!("config echo: {e}"),
        })?;
        let count = r.u32()? as usize;
        let mut params = ParamSet::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for _ in 0..count {
            let (name, t) = read_tensor(&mut r)?;
            if let Some(p) = name.strip_prefix(ADAM_M) {
                m.push((p.to_string(), t));
            } else if let Some(p) = name.strip_prefix(ADAM_V) {
                v.push((p.to_string(), t));
            } else if params.contains(&name) {
                return Err(r.err(format!("duplicate tensor {name:?}")));
            } else {
                params.insert(name, t);
            }
        }
        if r.pos != bytes.len() {
            return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let step = echo.get("adam_step").and_then(Value::as_u64);
        let adam = match step {
            None if m.is_empty() && v.is_empty() => None,
            None => return Err(CheckpointError::Contract("optimizer moments without a step count".into())),
            Some(step) => Some(AdamState {
                step,
                m: align_moments(&params, m, "first")?,
                v: align_moments(&params, v, "second")?,
            }),
        };
        Ok(Self {
            config: echo.get("config").cloned().unwrap_or(Value::Null),
            params,
            adam,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn align_moments(params: &ParamSet, moments: Vec<(String, Tensor)>, which: &str) -> Result<Vec<Tensor>> {
    if moments.len() != params.len() {
        return Err(CheckpointError::Contract(format!(
            "{which} moments cover {} tensors, parameters have {}",
            moments.len(),
            params.len()
        )));
    }
    let mut out = Vec::with_capacity(moments.len());
    for ((name, t), (pname, p)) in moments.into_iter().zip(params.iter()) {
        if name != pname || t.shape() != p.shape() {
            return Err(CheckpointError::Contract(format!("{which} moment {name:?} does not line up with parameter {pname:?}")));
        }
        out.push(t);
    }
    Ok(out)
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    let bad = |msg: String| Err(CheckpointError::Contract(format!("tensor {name:?}: {msg}")));
    if name.len() > u16::MAX as usize {
        return bad("name too long".into());
    }
    if t.rank() > u8::MAX as usize {
        return bad("rank too large".into());
    }
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        if d > u32::MAX as usize {
            return bad(format!("dimension {d} too large"));
        }
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for (i, &x) in t.data().iter().enumerate() {
        let f = x as f32;
        if !f.is_finite() {
            return bad(format!("entry {i} ({x}) is not representable as f32"));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(())
}

fn read_tensor(r: &mut Reader) -> Result<(String, Tensor)> {
    let name_len = r.u16()? as usize;
    let at = r.pos;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| CheckpointError::Format {
            offset: at,
            msg: "tensor name is not UTF-8".into(),
        })?
        .to_string();
    let rank = r.take(1)?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let numel: usize = shape.iter().product();
    let at = r.pos;
    let raw = r.take(numel.checked_mul(4).ok_or_else(|| r.err("tensor size overflow".into()))?)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Format {
        offset: at,
        msg: format!("tensor {name:?}: {e}"),
    })?;
    Ok((name, t))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: String) -> CheckpointError {
        CheckpointError::Format { offset: self.pos, msg }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamSet::new();
        params.insert("a.w", Tensor::matrix(2, 3, vec![0.5, -1.0, 2.25, 0.0, 0.75, -7.0]).unwrap());
        params.insert("a.b", Tensor::vector(vec![0.125, 3.0]).unwrap());
        Checkpoint {
            config: json!({"seed": 7, "name": "x"}),
            params,
            adam: None,
        }
    }

    #[test]
    fn round_trip_without_optimizer() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn round_trip_with_optimizer() {
        let mut ck = sample();
        let mut adam = AdamState::new(&ck.params);
        adam.step = 12;
        adam.m[0].data_mut()[1] = 0.25;
        adam.v[1].data_mut()[0] = 0.5;
        ck.adam = Some(adam);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn layout_of_a_single_tensor() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::vector(vec![1.0]).unwrap());
        let ck = Checkpoint {
            config: Value::Null,
            params,
            adam: None,
        };
        let bytes = ck.to_bytes().unwrap();
        let echo = br#"{"adam_step":null,"config":null}"#;
        let mut expect = b"MSCK".to_vec();
        expect.extend_from_slice(&[1, 0]);
        expect.extend_from_slice(&(echo.len() as u32).to_le_bytes());
        expect.extend_from_slice(echo);
        expect.extend_from_slice(&[1, 0, 0, 0]);
        expect.extend_from_slice(&[1, 0, b'w', 1, 1, 0, 0, 0]);
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Format { offset: 0, .. })));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn values_outside_f32_are_rejected() {
        let mut ck = sample();
        ck.params.insert("big", Tensor::scalar(1e300));
        assert!(matches!(ck.to_bytes(), Err(CheckpointError::Contract(_))));
    }
}
