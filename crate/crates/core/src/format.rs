//! `PPVF` vector-set files.
//!
//! ```text
//! offset size field
//!      0    4 magic "PPVF"
//!      4    2 version (u16, currently 1)
//!      6    1 record kind: 0 descriptor, 1 primal subspace, 2 dual subspace
//!      7    4 n (u32)
//!     11    4 m (u32, 0 for descriptors)
//!     15    8 count (u64)
//!     23    1 flags, bit 0 = every descriptor is unit-norm
//!     24      count records of little-endian f32
//! ```
//!
//! A descriptor record holds `n` values, a primal record `(1 + m) · n`
//! (origin, then basis rows) and a dual record `(1 + n − m) · n` (origin,
//! then normals). All integers are little-endian.
//!
//! Loaded files keep the stored `f32` values, so saving a loaded set
//! reproduces the input byte for byte.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{norm, orthonormalize, RowMatrix, DEFAULT_RANK_TOL};
use crate::subspace::{AffineSubspace, DualSubspace, UNIT_NORM_TOL};

pub const MAGIC: [u8; 4] = *b"PPVF";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;
pub const FLAG_UNIT_NORM: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    Descriptor = 0,
    Primal = 1,
    Dual = 2,
}

impl RecordKind {
    fn from_u8(b: u8) -> Result<Self> {
        match b {
            0 => Ok(RecordKind::Descriptor),
            1 => Ok(RecordKind::Primal),
            2 => Ok(RecordKind::Dual),
            k => Err(Error::Format(format!("unknown record kind {k}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RecordKind::Descriptor => "descriptor",
            RecordKind::Primal => "primal",
            RecordKind::Dual => "dual",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorSet {
    kind: RecordKind,
    n: u32,
    m: u32,
    flags: u8,
    values: Vec<f32>,
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

impl VectorSet {
    fn record_len(kind: RecordKind, n: u32, m: u32) -> Result<usize> {
        let (n, m) = (n as usize, m as usize);
        match kind {
            RecordKind::Descriptor if m == 0 && n > 0 => Ok(n),
            RecordKind::Primal | RecordKind::Dual if m >= 1 && m < n => Ok(n * if kind == RecordKind::Primal {
                1 + m
            } else {
                1 + n - m
            }),
            _ => Err(Error::Format(format!(
                "invalid shape n={n}, m={m} for {} records",
                kind.name()
            ))),
        }
    }

    pub fn from_descriptors(rows: &RowMatrix) -> Result<Self> {
        let n = to_u32(rows.cols(), "dimension")?;
        Self::record_len(RecordKind::Descriptor, n, 0)?;
        let values: Vec<f32> = rows.as_slice().iter().map(|&x| x as f32).collect();
        let unit = rows.rows() > 0
            && values.chunks(rows.cols()).all(|r| {
                let nrm = r.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                (nrm - 1.0).abs() <= UNIT_NORM_TOL
            });
        Ok(Self {
            kind: RecordKind::Descriptor,
            n,
            m: 0,
            flags: if unit { FLAG_UNIT_NORM } else { 0 },
            values,
        })
    }

    pub fn from_primal(subs: &[AffineSubspace]) -> Result<Self> {
        let (n, m) = uniform_shape(subs.iter().map(|s| (s.dim(), s.subspace_dim())))?;
        let mut values = Vec::with_capacity(subs.len() * (1 + m) * n);
        for s in subs {
            values.extend(s.origin().iter().map(|&x| x as f32));
            values.extend(s.basis().as_slice().iter().map(|&x| x as f32));
        }
        Ok(Self {
            kind: RecordKind::Primal,
            n: to_u32(n, "dimension")?,
            m: to_u32(m, "subspace dimension")?,
            flags: 0,
            values,
        })
    }

    pub fn from_dual(subs: &[DualSubspace]) -> Result<Self> {
        let (n, m) = uniform_shape(subs.iter().map(|s| (s.dim(), s.subspace_dim())))?;
        let mut values = Vec::with_capacity(subs.len() * (1 + n - m) * n);
        for s in subs {
            values.extend(s.origin().iter().map(|&x| x as f32));
            values.extend(s.normals().as_slice().iter().map(|&x| x as f32));
        }
        Ok(Self {
            kind: RecordKind::Dual,
            n: to_u32(n, "dimension")?,
            m: to_u32(m, "subspace dimension")?,
            flags: 0,
            values,
        })
    }

    pub fn kind(&self) -> RecordKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.n as usize
    }

    pub fn subspace_dim(&self) -> usize {
        self.m as usize
    }

    pub fn flags(&self) -> u8 {
        self.flags
    }

    pub fn is_unit_norm(&self) -> bool {
        self.flags & FLAG_UNIT_NORM != 0
    }

    pub fn len(&self) -> usize {
        let rl = Self::record_len(self.kind, self.n, self.m).expect("validated shape");
        self.values.len() / rl
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Stored values widened to `f64` (exact).
    fn record(&self, i: usize) -> Vec<f64> {
        let rl = Self::record_len(self.kind, self.n, self.m).expect("validated shape");
        self.values[i * rl..(i + 1) * rl].iter().map(|&x| x as f64).collect()
    }

    pub fn to_descriptors(&self) -> Result<RowMatrix> {
        self.expect_kind(RecordKind::Descriptor)?;
        RowMatrix::from_vec(self.len(), self.dim(), self.values.iter().map(|&x| x as f64).collect())
    }

    /// Rows renormalized to unit length, undoing `f32` rounding. Used for
    /// codebooks, whose entries must be unit-norm.
    pub fn to_unit_descriptors(&self) -> Result<RowMatrix> {
        let mut rows = self.to_descriptors()?;
        for i in 0..rows.rows() {
            let r = rows.row_mut(i);
            let nrm = norm(r);
            if !(nrm > 0.0) {
                return Err(Error::NotUnitNorm(nrm));
            }
            r.iter_mut().for_each(|x| *x /= nrm);
        }
        Ok(rows)
    }

    /// Subspaces with their bases re-orthonormalized after `f32` rounding.
    pub fn to_primal(&self) -> Result<Vec<AffineSubspace>> {
        self.expect_kind(RecordKind::Primal)?;
        let (n, m) = (self.dim(), self.subspace_dim());
        (0..self.len())
            .map(|i| {
                let rec = self.record(i);
                let rows: Vec<&[f64]> = rec[n..].chunks(n).collect();
                let basis = orthonormalize(&rows, DEFAULT_RANK_TOL)?;
                if basis.rows() != m {
                    return Err(Error::Format(format!("record {i} has a rank-deficient basis")));
                }
                AffineSubspace::new(rec[..n].to_vec(), basis)
            })
            .collect()
    }

    pub fn to_dual(&self) -> Result<Vec<DualSubspace>> {
        self.expect_kind(RecordKind::Dual)?;
        let (n, m) = (self.dim(), self.subspace_dim());
        (0..self.len())
            .map(|i| {
                let rec = self.record(i);
                let rows: Vec<&[f64]> = rec[n..].chunks(n).collect();
                let normals = orthonormalize(&rows, DEFAULT_RANK_TOL)?;
                if normals.rows() != n - m {
                    return Err(Error::Format(format!("record {i} has rank-deficient normals")));
                }
                DualSubspace::new(rec[..n].to_vec(), normals)
            })
            .collect()
    }

    fn expect_kind(&self, kind: RecordKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::IncompatibleKinds(format!(
                "file holds {} records, expected {}",
                self.kind.name(),
                kind.name()
            )))
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.n.to_le_bytes());
        out.extend_from_slice(&self.m.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.push(self.flags);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = RecordKind::from_u8(bytes[6])?;
        let n = u32::from_le_bytes(bytes[7..11].try_into().expect("4 bytes"));
        let m = u32::from_le_bytes(bytes[11..15].try_into().expect("4 bytes"));
        let count = u64::from_le_bytes(bytes[15..23].try_into().expect("8 bytes"));
        let flags = bytes[23];
        let rl = Self::record_len(kind, n, m)?;
        let payload = &bytes[HEADER_LEN..];
        let expected = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(rl))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("record count {count} overflows")))?;
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "payload has {} bytes, header implies {expected}",
                payload.len()
            )));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            kind,
            n,
            m,
            flags,
            values,
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn uniform_shape(mut shapes: impl Iterator<Item = (usize, usize)>) -> Result<(usize, usize)> {
    let first = shapes
        .next()
        .ok_or_else(|| Error::Format("cannot infer the shape of an empty subspace set".into()))?;
    if shapes.any(|s| s != first) {
        return Err(Error::HeterogeneousDimensions);
    }
    Ok(first)
}
