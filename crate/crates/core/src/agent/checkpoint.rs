//! Binary checkpoint: `KISC1`, network widths, little-endian `f32` weights
//! (row-major, weight then bias per layer, actor before critic) and a
//! training-state block.

use std::path::{Path, PathBuf};

use super::nn::{Linear, Mlp};
use super::policy::ActorCritic;
use super::train::TrainState;
use crate::error::{Error, Result};
use crate::Scalar;

pub const MAGIC: &[u8; 5] = b"KISC1";
const FAMILY: &[u8; 4] = b"KISC";

pub fn encode<T: Scalar>(policy: &ActorCritic<T>, state: &TrainState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for net in [&policy.actor, &policy.critic] {
        let dims = net.dims();
        put_u32(&mut out, dims.len() as u32);
        for d in dims {
            put_u32(&mut out, d as u32);
        }
    }
    for net in [&policy.actor, &policy.critic] {
        for t in net.tensors() {
            for v in t {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
    }
    put_u64(&mut out, state.episode_index as u64);
    put_u64(&mut out, state.window as u64);
    put_u64(&mut out, state.returns.len() as u64);
    for r in &state.returns {
        out.extend_from_slice(&r.to_le_bytes());
    }
    out.extend_from_slice(&state.best_moving_avg.unwrap_or(f64::NAN).to_le_bytes());
    put_u64(&mut out, state.best_episode.map_or(u64::MAX, |e| e as u64));
    let best = state
        .best_checkpoint
        .as_ref()
        .map(|p| p.to_string_lossy().into_owned())
        .unwrap_or_default();
    put_u32(&mut out, best.len() as u32);
    out.extend_from_slice(best.as_bytes());
    out
}

pub fn decode<T: Scalar>(bytes: &[u8], path: &Path) -> Result<(ActorCritic<T>, TrainState)> {
    let corrupt = |reason: &str| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < MAGIC.len() || &bytes[..4] != FAMILY {
        return Err(corrupt("missing KISC magic"));
    }
    if bytes[4] != MAGIC[4] {
        return Err(Error::CheckpointVersion {
            path: path.to_path_buf(),
            found: String::from_utf8_lossy(&bytes[..5]).into_owned(),
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
        });
    }
    let mut r = Reader {
        buf: &bytes[5..],
        path,
    };
    let mut dims = Vec::new();
    for _ in 0..2 {
        let n = r.u32()? as usize;
        if !(2..=16).contains(&n) {
            return Err(corrupt("implausible layer count"));
        }
        let d: Vec<usize> = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        if d.iter().any(|w| *w == 0 || *w > 1 << 16) {
            return Err(corrupt("implausible layer width"));
        }
        dims.push(d);
    }
    let mut nets = Vec::new();
    for d in &dims {
        let mut layers = Vec::new();
        for w in d.windows(2) {
            let weight = r.f32s(w[0] * w[1])?;
            let bias = r.f32s(w[1])?;
            layers.push(Linear {
                inp: w[0],
                out: w[1],
                weight,
                bias,
            });
        }
        nets.push(Mlp { layers });
    }
    let critic = nets.pop().expect("two networks");
    let actor = nets.pop().expect("two networks");

    let episode_index = r.u64()? as usize;
    let window = r.u64()? as usize;
    let n = r.u64()? as usize;
    if n > r.buf.len() / 8 {
        return Err(corrupt("return history longer than file"));
    }
    let returns = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let best_avg = r.f64()?;
    let best_ep = r.u64()?;
    let len = r.u32()? as usize;
    let best_path = String::from_utf8(r.take(len)?.to_vec())
        .map_err(|_| corrupt("best checkpoint path is not UTF-8"))?;
    if !r.buf.is_empty() {
        return Err(corrupt("trailing bytes"));
    }
    let state = TrainState {
        episode_index,
        window,
        moving_avg: TrainState::moving_average(&returns, window),
        returns,
        best_moving_avg: (!best_avg.is_nan()).then_some(best_avg),
        best_episode: (best_ep != u64::MAX).then_some(best_ep as usize),
        best_checkpoint: (!best_path.is_empty()).then(|| PathBuf::from(best_path)),
    };
    Ok((ActorCritic::from_parts(actor, critic), state))
}

pub fn save_checkpoint<T: Scalar>(
    policy: &ActorCritic<T>,
    state: &TrainState,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, encode(policy, state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(ActorCritic<T>, TrainState)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::CorruptCheckpoint {
                path: self.path.to_path_buf(),
                reason: "truncated".into(),
            });
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let raw = self.take(n.saturating_mul(4))?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn state() -> TrainState {
        let mut s = TrainState::new(10);
        for r in [0.5, 1.0, 1.5] {
            s.record_return(r);
        }
        s.best_moving_avg = Some(1.0);
        s.best_episode = Some(2);
        s.best_checkpoint = Some(PathBuf::from("out/best.kisc"));
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let net: ActorCritic<f32> = ActorCritic::new(6, &mut seeded(1));
        let bytes = encode(&net, &state());
        assert_eq!(&bytes[..5], b"KISC1");
        let (back, st) = decode::<f32>(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, net);
        assert_eq!(st, state());
    }

    #[test]
    fn truncation_and_version_are_distinguished() {
        let net: ActorCritic<f32> = ActorCritic::new(4, &mut seeded(1));
        let mut bytes = encode(&net, &state());
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode::<f32>(cut, Path::new("x")), Err(Error::CorruptCheckpoint { .. })));
        bytes[4] = b'2';
        assert!(matches!(decode::<f32>(&bytes, Path::new("x")), Err(Error::CheckpointVersion { .. })));
        assert!(matches!(decode::<f32>(b"nope", Path::new("x")), Err(Error::CorruptCheckpoint { .. })));
    }
}
