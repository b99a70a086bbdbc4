//! `CDMD` model checkpoints.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic "CDMD" | u32 version (= 1)
//! u8 kind (0 conca, 1 sae_relu_panneal, 2 sae_topk, 3 sae_batch_topk) | u64 topk_k
//! u64 m | u64 d_feat
//! u8 norm (0 none, 1 layer, 2 group, 3 batch, 4 dropout)
//!    | u64 num_groups | f64 eps | f64 momentum | f64 dropout_p
//! u8 surrogate (0 none, 1 selu, 2 elu, 3 softplus, 4 exp_clamped) | f64 lo | f64 hi
//! u8 has_affine | u8 has_running
//! f64 blocks, each row-major:
//!    W_e (d_feat × m), b_e (d_feat), W_d (m × d_feat), b_d (m),
//!    [scale (d_feat), shift (d_feat)]        when has_affine
//!    [running_mean (d_feat), running_var (d_feat)]  when has_running
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{Affine, DictModel, ModelKind, Norm, RunningStats, Surrogate};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CDMD";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_ELEMENTS: u64 = 1 << 32;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.0.write_all(&[v])
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn matrix(&mut self, m: &DMatrix<f64>) -> std::io::Result<()> {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                self.f64(m[(r, c)])?;
            }
        }
        Ok(())
    }
    fn vector(&mut self, v: &DVector<f64>) -> std::io::Result<()> {
        v.iter().try_for_each(|&x| self.f64(x))
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Truncated("checkpoint ended early".into()),
            _ => Error::io("<checkpoint>", e),
        })?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }
    fn vector(&mut self, n: usize) -> Result<DVector<f64>> {
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.f64()?);
        }
        Ok(DVector::from_vec(data))
    }
}

pub fn write_checkpoint_to<W: Write>(model: &DictModel, w: W) -> std::io::Result<()> {
    let mut w = Writer(w);
    w.0.write_all(&CHECKPOINT_MAGIC)?;
    w.u32(CHECKPOINT_VERSION)?;
    let (kind, k) = match model.kind {
        ModelKind::Conca => (0, 0),
        ModelKind::SaeReluPanneal => (1, 0),
        ModelKind::SaeTopk { k } => (2, k),
        ModelKind::SaeBatchTopk { k } => (3, k),
    };
    w.u8(kind)?;
    w.u64(k as u64)?;
    w.u64(model.m() as u64)?;
    w.u64(model.d_feat() as u64)?;
    let (tag, groups, eps, momentum, p) = match model.norm {
        Norm::None => (0, 0, 0.0, 0.0, 0.0),
        Norm::Layer { eps } => (1, 0, eps, 0.0, 0.0),
        Norm::Group { groups, eps } => (2, groups, eps, 0.0, 0.0),
        Norm::Batch { eps, momentum } => (3, 0, eps, momentum, 0.0),
        Norm::Dropout { p } => (4, 0, 0.0, 0.0, p),
    };
    w.u8(tag)?;
    w.u64(groups as u64)?;
    w.f64(eps)?;
    w.f64(momentum)?;
    w.f64(p)?;
    let (tag, lo, hi) = match model.surrogate {
        Surrogate::None => (0, 0.0, 0.0),
        Surrogate::Selu => (1, 0.0, 0.0),
        Surrogate::Elu => (2, 0.0, 0.0),
        Surrogate::Softplus => (3, 0.0, 0.0),
        Surrogate::ExpClamped { lo, hi } => (4, lo, hi),
    };
    w.u8(tag)?;
    w.f64(lo)?;
    w.f64(hi)?;
    w.u8(model.affine.is_some() as u8)?;
    w.u8(model.running.is_some() as u8)?;
    w.matrix(&model.w_enc)?;
    w.vector(&model.b_enc)?;
    w.matrix(&model.w_dec)?;
    w.vector(&model.b_dec)?;
    if let Some(a) = &model.affine {
        w.vector(&a.scale)?;
        w.vector(&a.shift)?;
    }
    if let Some(s) = &model.running {
        w.vector(&s.mean)?;
        w.vector(&s.var)?;
    }
    w.0.flush()
}

pub fn read_checkpoint_from<R: Read>(r: R) -> Result<DictModel> {
    let mut r = Reader(r);
    let magic = r.bytes::<4>()?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: CHECKPOINT_MAGIC, found: magic });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let kind_tag = r.u8()?;
    let k = r.u64()? as usize;
    let kind = match kind_tag {
        0 => ModelKind::Conca,
        1 => ModelKind::SaeReluPanneal,
        2 => ModelKind::SaeTopk { k },
        3 => ModelKind::SaeBatchTopk { k },
        t => return Err(Error::Malformed(format!("unknown model kind tag {t}"))),
    };
    let (m, d) = (r.u64()?, r.u64()?);
    if m.saturating_mul(d) > MAX_ELEMENTS {
        return Err(Error::TooLarge { declared: m.saturating_mul(d) * 8, cap: MAX_ELEMENTS * 8 });
    }
    let (m, d) = (m as usize, d as usize);
    let norm_tag = r.u8()?;
    let groups = r.u64()? as usize;
    let (eps, momentum, p) = (r.f64()?, r.f64()?, r.f64()?);
    let norm = match norm_tag {
        0 => Norm::None,
        1 => Norm::Layer { eps },
        2 => Norm::Group { groups, eps },
        3 => Norm::Batch { eps, momentum },
        4 => Norm::Dropout { p },
        t => return Err(Error::Malformed(format!("unknown norm tag {t}"))),
    };
    let sur_tag = r.u8()?;
    let (lo, hi) = (r.f64()?, r.f64()?);
    let surrogate = match sur_tag {
        0 => Surrogate::None,
        1 => Surrogate::Selu,
        2 => Surrogate::Elu,
        3 => Surrogate::Softplus,
        4 => Surrogate::ExpClamped { lo, hi },
        t => return Err(Error::Malformed(format!("unknown surrogate tag {t}"))),
    };
    let has_affine = r.u8()? != 0;
    let has_running = r.u8()? != 0;
    let w_enc = r.matrix(d, m)?;
    let b_enc = r.vector(d)?;
    let w_dec = r.matrix(m, d)?;
    let b_dec = r.vector(m)?;
    let affine = if has_affine { Some(Affine { scale: r.vector(d)?, shift: r.vector(d)? }) } else { None };
    let running = if has_running { Some(RunningStats { mean: r.vector(d)?, var: r.vector(d)? }) } else { None };
    let model = DictModel { kind, norm, surrogate, w_enc, b_enc, w_dec, b_dec, affine, running };
    model.validate()?;
    Ok(model)
}

pub fn write_checkpoint(model: &DictModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint_to(model, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<DictModel> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint_from(BufReader::new(f))
}
