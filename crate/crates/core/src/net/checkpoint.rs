//! Versioned binary checkpoints: spec, weights, Adam moments, step counter.
//! Scalars are stored as little-endian f64 bit patterns so a save/load round
//! trip is bit-exact.

use super::{AdamState, HeadKind, NetworkSpec, QNetwork};
use crate::scalar::Scalar;
use std::io;
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"CVQN";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Format("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_bits(self.u64()?))
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    push_u64(out, v.to_bits());
}

fn push_scalars<S: Scalar>(out: &mut Vec<u8>, vals: &[S]) {
    for &v in vals {
        push_f64(out, v.to_f64());
    }
}

fn read_scalars<S: Scalar>(r: &mut Reader<'_>, n: usize) -> Result<Vec<S>, CheckpointError> {
    let mut vals = Vec::with_capacity(n);
    for _ in 0..n {
        let raw = r.f64()?;
        let v = S::from_f64(raw)
            .ok_or_else(|| CheckpointError::Format(format!("unrepresentable scalar {raw}")))?;
        vals.push(v);
    }
    Ok(vals)
}

impl<S: Scalar> QNetwork<S> {
    /// Serializes spec, weights, and optimizer state.
    pub fn save_checkpoint(&self, adam: &AdamState<S>) -> Vec<u8> {
        let spec = self.spec();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        push_u32(&mut out, VERSION);
        push_u32(&mut out, spec.in_h as u32);
        push_u32(&mut out, spec.in_w as u32);
        push_u32(&mut out, spec.in_c as u32);
        push_u32(&mut out, spec.conv_filters[0] as u32);
        push_u32(&mut out, spec.conv_filters[1] as u32);
        push_u32(&mut out, spec.kernel as u32);
        push_u32(&mut out, spec.fc_units.len() as u32);
        for &u in &spec.fc_units {
            push_u32(&mut out, u as u32);
        }
        push_u32(&mut out, spec.actions as u32);
        push_u32(&mut out, match spec.head {
            HeadKind::Plain => 0,
            HeadKind::Dueling => 1,
        });
        push_f64(&mut out, spec.leaky_slope);
        push_u64(&mut out, self.param_count() as u64);
        push_scalars(&mut out, self.params());
        push_u64(&mut out, adam.step);
        push_scalars(&mut out, &adam.m);
        push_scalars(&mut out, &adam.v);
        out
    }

    /// Parses a checkpoint produced by [`QNetwork::save_checkpoint`].
    pub fn load_checkpoint(bytes: &[u8]) -> Result<(Self, AdamState<S>), CheckpointError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Format(format!("unsupported version {version}")));
        }
        let in_h = r.u32()? as usize;
        let in_w = r.u32()? as usize;
        let in_c = r.u32()? as usize;
        let c1 = r.u32()? as usize;
        let c2 = r.u32()? as usize;
        let kernel = r.u32()? as usize;
        let fc_len = r.u32()? as usize;
        if fc_len > 64 {
            return Err(CheckpointError::Format("implausible fc layer count".into()));
        }
        let mut fc_units = Vec::with_capacity(fc_len);
        for _ in 0..fc_len {
            fc_units.push(r.u32()? as usize);
        }
        let actions = r.u32()? as usize;
        let head = match r.u32()? {
            0 => HeadKind::Plain,
            1 => HeadKind::Dueling,
            other => return Err(CheckpointError::Format(format!("unknown head tag {other}"))),
        };
        let leaky_slope = r.f64()?;
        let spec = NetworkSpec {
            in_h,
            in_w,
            in_c,
            conv_filters: [c1, c2],
            kernel,
            fc_units,
            actions,
            head,
            leaky_slope,
        };
        let mut net = QNetwork::init(spec, 0);
        let count = r.u64()? as usize;
        if count != net.param_count() {
            return Err(CheckpointError::Format(format!(
                "parameter count {count} does not match spec ({})",
                net.param_count()
            )));
        }
        let params = read_scalars::<S>(&mut r, count)?;
        net.params_mut().copy_from_slice(&params);
        let step = r.u64()?;
        let m = read_scalars::<S>(&mut r, count)?;
        let v = read_scalars::<S>(&mut r, count)?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::Format("trailing bytes".into()));
        }
        Ok((net, AdamState { m, v, step }))
    }

    pub fn save_checkpoint_file(
        &self,
        adam: &AdamState<S>,
        path: impl AsRef<Path>,
    ) -> Result<(), CheckpointError> {
        std::fs::write(path, self.save_checkpoint(adam))?;
        Ok(())
    }

    pub fn load_checkpoint_file(
        path: impl AsRef<Path>,
    ) -> Result<(Self, AdamState<S>), CheckpointError> {
        let bytes = std::fs::read(path)?;
        Self::load_checkpoint(&bytes)
    }
}
