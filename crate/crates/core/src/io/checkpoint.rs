//! Single-file model checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "PNRK" | version u16 | kind u8 | metadata | payload | crc32 u32
//! ```
//!
//! Flow metadata is `dim, cond_dim, blocks, hidden` (u32), `clamp` (f64),
//! `seed` (u64) followed by every permutation (u32 entries) and the number
//! of parameters (u64). GMM metadata is `dim, components` (u32). Payloads
//! are f64 values in declaration order. The CRC covers everything before it.

use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{ConditionalPatchFlow, FlowArch, PatchFlow};
use crate::priors::PatchGmm;

pub const MAGIC: &[u8; 4] = b"PNRK";
pub const VERSION: u16 = 1;

const KIND_FLOW: u8 = 0;
const KIND_CFLOW: u8 = 1;
const KIND_GMM: u8 = 2;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Crc { stored: u32, computed: u32 },
    #[error("unknown model kind {0}")]
    Kind(u8),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

impl CheckpointError {
    /// Stable short code for each failure class.
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::BadMagic => "bad-magic",
            CheckpointError::Version { .. } => "version",
            CheckpointError::Crc { .. } => "crc",
            CheckpointError::Kind(_) => "kind",
            CheckpointError::Malformed(_) => "malformed",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    Flow(PatchFlow),
    CFlow(ConditionalPatchFlow),
    Gmm(PatchGmm),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Flow(_) => "flow",
            Model::CFlow(_) => "cflow",
            Model::Gmm(_) => "gmm",
        }
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_flow(buf: &mut Vec<u8>, arch: &FlowArch, perms: &[Vec<usize>], flat: &[f64]) {
    put_u32(buf, arch.dim);
    put_u32(buf, arch.cond_dim);
    put_u32(buf, arch.blocks);
    put_u32(buf, arch.hidden);
    buf.extend_from_slice(&arch.clamp.to_le_bytes());
    buf.extend_from_slice(&arch.seed.to_le_bytes());
    for perm in perms {
        for &p in perm {
            put_u32(buf, p);
        }
    }
    buf.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    put_f64s(buf, flat);
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    match model {
        Model::Flow(f) => {
            buf.push(KIND_FLOW);
            put_flow(&mut buf, f.arch(), f.permutations(), &f.params().flatten());
        }
        Model::CFlow(f) => {
            buf.push(KIND_CFLOW);
            put_flow(&mut buf, f.arch(), f.permutations(), &f.params().flatten());
        }
        Model::Gmm(g) => {
            buf.push(KIND_GMM);
            put_u32(&mut buf, g.dim());
            put_u32(&mut buf, g.num_components());
            put_f64s(&mut buf, &g.weights());
            for k in 0..g.num_components() {
                put_f64s(&mut buf, g.mean(k));
            }
            for k in 0..g.num_components() {
                put_f64s(&mut buf, &g.covariance(k));
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| CheckpointError::Malformed("unexpected end of data".into()))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> std::result::Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, CheckpointError> {
        if n > self.data.len() / 8 {
            return Err(CheckpointError::Malformed(format!("declared {n} values exceed the file")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

fn read_flow(r: &mut Reader) -> std::result::Result<(FlowArch, Vec<Vec<usize>>, Vec<f64>), CheckpointError> {
    let dim = r.u32()?;
    let cond_dim = r.u32()?;
    let blocks = r.u32()?;
    let hidden = r.u32()?;
    let clamp = r.f64()?;
    let seed = r.u64()?;
    if dim.saturating_mul(blocks) > r.data.len() {
        return Err(CheckpointError::Malformed("permutation table exceeds the file".into()));
    }
    let mut perms = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        perms.push((0..dim).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?);
    }
    let n = r.u64()? as usize;
    let flat = r.f64s(n)?;
    let arch = FlowArch { dim, cond_dim, blocks, hidden, clamp, seed };
    Ok((arch, perms, flat))
}

fn malformed(e: Error) -> Error {
    match e {
        Error::Checkpoint(c) => Error::Checkpoint(c),
        other => Error::Checkpoint(CheckpointError::Malformed(other.to_string())),
    }
}

/// Checks, in order, the magic bytes, the version and the checksum, then
/// rebuilds the model.
pub fn decode(data: &[u8]) -> Result<Model> {
    if data.len() < 4 || &data[..4] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    if data.len() >= 6 {
        let found = u16::from_le_bytes([data[4], data[5]]);
        if found != VERSION {
            return Err(CheckpointError::Version { found, expected: VERSION }.into());
        }
    }
    if data.len() < 11 {
        return Err(CheckpointError::Crc { stored: 0, computed: crc32fast::hash(data) }.into());
    }
    let (body, tail) = data.split_at(data.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Crc { stored, computed }.into());
    }
    let mut r = Reader { data: body, pos: 7 };
    let model = match body[6] {
        KIND_FLOW => {
            let (arch, perms, flat) = read_flow(&mut r)?;
            Model::Flow(PatchFlow::from_parts(arch, perms, &flat).map_err(malformed)?)
        }
        KIND_CFLOW => {
            let (arch, perms, flat) = read_flow(&mut r)?;
            Model::CFlow(ConditionalPatchFlow::from_parts(arch, perms, &flat).map_err(malformed)?)
        }
        KIND_GMM => {
            let dim = r.u32()?;
            let k = r.u32()?;
            let weights = r.f64s(k)?;
            let means = (0..k).map(|_| r.f64s(dim)).collect::<std::result::Result<Vec<_>, _>>()?;
            let covs = (0..k).map(|_| r.f64s(dim * dim)).collect::<std::result::Result<Vec<_>, _>>()?;
            Model::Gmm(PatchGmm::new(weights, means, covs).map_err(malformed)?)
        }
        other => return Err(CheckpointError::Kind(other).into()),
    };
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", body.len() - r.pos)).into());
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trained_like_flow() -> PatchFlow {
        let mut f = PatchFlow::new(FlowArch::patch(4).with_hidden(16).with_blocks(3).with_seed(8)).unwrap();
        f.perturb(2, 0.1);
        f
    }

    fn patches(n: usize, s: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Array2::from_shape_fn((n, s), |_| rng.random_range(-2.0..2.0))
    }

    fn code(e: Error) -> &'static str {
        match e {
            Error::Checkpoint(c) => c.code(),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn flow_round_trip_is_bit_exact() {
        let flow = trained_like_flow();
        let back = match decode(&encode(&Model::Flow(flow.clone()))).unwrap() {
            Model::Flow(f) => f,
            other => panic!("got {}", other.kind()),
        };
        let p = patches(100, 4);
        let a = flow.nll_batch(p.view()).unwrap();
        let b = back.nll_batch(p.view()).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(flow.params().flatten(), back.params().flatten());
        assert_eq!(flow.permutations(), back.permutations());
    }

    #[test]
    fn cflow_and_gmm_round_trip() {
        let mut cf = ConditionalPatchFlow::new(FlowArch::patch(2).with_hidden(8).with_blocks(2).with_cond_dim(3)).unwrap();
        cf.perturb(4, 0.2);
        let back = match decode(&encode(&Model::CFlow(cf.clone()))).unwrap() {
            Model::CFlow(f) => f,
            other => panic!("got {}", other.kind()),
        };
        let c = patches(10, 3);
        let p = patches(10, 2);
        assert_eq!(cf.cnll_batch(c.view(), p.view()).unwrap(), back.cnll_batch(c.view(), p.view()).unwrap());

        let gmm = PatchGmm::new(
            vec![0.3, 0.7],
            vec![vec![0.0, 1.0], vec![-1.0, 0.5]],
            vec![vec![1.0, 0.2, 0.2, 0.5], vec![2.0, 0.0, 0.0, 1.0]],
        )
        .unwrap();
        let back = match decode(&encode(&Model::Gmm(gmm.clone()))).unwrap() {
            Model::Gmm(g) => g,
            other => panic!("got {}", other.kind()),
        };
        let p = patches(20, 2);
        assert_eq!(gmm.logpdf_batch(p.view()).unwrap(), back.logpdf_batch(p.view()).unwrap());
    }

    #[test]
    fn damaged_files_fail_with_distinct_errors() {
        let bytes = encode(&Model::Flow(trained_like_flow()));
        assert_eq!(code(decode(&bytes[..bytes.len() - 9]).unwrap_err()), "crc");
        assert_eq!(code(decode(&bytes[..20]).unwrap_err()), "crc");

        let mut newer = bytes.clone();
        newer[4..6].copy_from_slice(&(VERSION + 1).to_le_bytes());
        let n = newer.len();
        let crc = crc32fast::hash(&newer[..n - 4]);
        newer[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert_eq!(code(decode(&newer).unwrap_err()), "version");

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(code(decode(&bad).unwrap_err()), "bad-magic");

        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert_eq!(code(decode(&flipped).unwrap_err()), "crc");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flow.pnrk");
        let flow = trained_like_flow();
        save_checkpoint(&Model::Flow(flow.clone()), &path).unwrap();
        match load_checkpoint(&path).unwrap() {
            Model::Flow(f) => assert_eq!(f.params().flatten(), flow.params().flatten()),
            other => panic!("got {}", other.kind()),
        }
        assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io(_))));
    }
}
