//! Binary model files.
//!
//! All integers are little-endian `u32` unless noted, all reals
//! little-endian `f64`:
//!
//! ```text
//! magic "DTAN" | version
//! n_cells | boundary (u8) | dim | channels | input_len | recurrences
//! loss kind (u8) | lambda_sigma | lambda_smooth | margin | has_prior (u8)
//! n_blocks | (kernel, channels) per block | pool_width | n_classes
//! n_tensors | per tensor: name_len, name (utf-8), rank, dims, data
//! ```
//!
//! The first tensor is the `2 n_cells x dim` basis matrix; the rest are the
//! network tensors in storage order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AlignmentModel, ArchSpec, ConvSpec, LocNet};
use crate::cpab::{BoundaryCondition, CpaBasis, Tessellation};
use crate::error::{DtanError, Result};
use crate::losses::{LossConfig, LossKind};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"DTAN";
pub const FORMAT_VERSION: u32 = 1;

/// Upper bound on any single count read from a file, to reject garbage
/// before allocating.
const MAX_COUNT: u32 = 1 << 28;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| DtanError::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    let v = u32::from_le_bytes(b);
    if v > MAX_COUNT {
        return Err(DtanError::Format(format!("count {v} is implausibly large")));
    }
    Ok(v as usize)
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn put_tensor<W: Write, T: Scalar>(w: &mut W, name: &str, dims: &[usize], data: &[T]) -> Result<()> {
    put_u32(w, name.len())?;
    w.write_all(name.as_bytes())?;
    put_u32(w, dims.len())?;
    for &d in dims {
        put_u32(w, d)?;
    }
    for &v in data {
        put_f64(w, v.as_f64())?;
    }
    Ok(())
}

fn get_tensor<R: Read, T: Scalar>(r: &mut R, name: &str, dims: &[usize]) -> Result<Vec<T>> {
    let name_len = get_u32(r)?;
    let mut buf = vec![0u8; name_len];
    r.read_exact(&mut buf)?;
    let found = String::from_utf8(buf).map_err(|_| DtanError::Format("tensor name is not utf-8".into()))?;
    if found != name {
        return Err(DtanError::Format(format!("expected tensor '{name}', found '{found}'")));
    }
    let rank = get_u32(r)?;
    let stored: Vec<usize> = (0..rank).map(|_| get_u32(r)).collect::<Result<_>>()?;
    if stored != dims {
        return Err(DtanError::Format(format!("tensor '{name}' has shape {stored:?}, expected {dims:?}")));
    }
    let n: usize = dims.iter().product();
    (0..n)
        .map(|_| {
            let v = get_f64(r)?;
            if v.is_finite() {
                Ok(T::lit(v))
            } else {
                Err(DtanError::Format(format!("non-finite value in tensor '{name}'")))
            }
        })
        .collect()
}

impl<T: Scalar> AlignmentModel<T> {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        put_u32(w, self.tess.n_cells())?;
        w.write_all(&[self.tess.boundary().code()])?;
        put_u32(w, self.basis.dim())?;
        put_u32(w, self.channels())?;
        put_u32(w, self.input_len())?;
        put_u32(w, self.recurrences)?;
        w.write_all(&[self.loss.kind.code()])?;
        put_f64(w, self.loss.lambda_sigma)?;
        put_f64(w, self.loss.lambda_smooth)?;
        put_f64(w, self.loss.margin)?;
        w.write_all(&[u8::from(self.prior.is_some())])?;
        let arch = self.net.arch();
        put_u32(w, arch.blocks.len())?;
        for b in &arch.blocks {
            put_u32(w, b.kernel)?;
            put_u32(w, b.channels)?;
        }
        put_u32(w, arch.pool_width)?;
        put_u32(w, arch.n_classes)?;
        let shapes = self.net.tensor_shapes();
        put_u32(w, shapes.len() + 1)?;
        put_tensor(w, "basis", &[2 * self.tess.n_cells(), self.basis.dim()], self.basis.matrix())?;
        let mut offset = 0;
        for (name, dims) in &shapes {
            let n: usize = dims.iter().product();
            put_tensor(w, name, dims, &self.net.params()[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(DtanError::Format("missing DTAN magic bytes".into()));
        }
        let mut version = [0u8; 4];
        r.read_exact(&mut version)?;
        let version = u32::from_le_bytes(version);
        if version != FORMAT_VERSION {
            return Err(DtanError::Format(format!("unsupported format version {version}")));
        }
        let n_cells = get_u32(r)?;
        let bc = BoundaryCondition::from_code(get_u8(r)?)
            .ok_or_else(|| DtanError::Format("unknown boundary condition code".into()))?;
        let tess = Tessellation::new(n_cells, bc).map_err(|e| DtanError::Format(e.to_string()))?;
        let dim = get_u32(r)?;
        if dim != tess.dim() {
            return Err(DtanError::Format(format!("dimension {dim} inconsistent with tessellation")));
        }
        let channels = get_u32(r)?;
        let input_len = get_u32(r)?;
        let recurrences = get_u32(r)?;
        let kind =
            LossKind::from_code(get_u8(r)?).ok_or_else(|| DtanError::Format("unknown loss kind code".into()))?;
        let loss = LossConfig { kind, lambda_sigma: get_f64(r)?, lambda_smooth: get_f64(r)?, margin: get_f64(r)? };
        let has_prior = get_u8(r)? != 0;
        let n_blocks = get_u32(r)?;
        let blocks = (0..n_blocks)
            .map(|_| Ok(ConvSpec { kernel: get_u32(r)?, channels: get_u32(r)? }))
            .collect::<Result<Vec<_>>>()?;
        let arch = ArchSpec { blocks, pool_width: get_u32(r)?, n_classes: get_u32(r)? };
        let mut net = LocNet::<T>::zeros(&arch, channels, input_len, dim).map_err(|e| DtanError::Format(e.to_string()))?;
        let shapes = net.tensor_shapes();
        if get_u32(r)? != shapes.len() + 1 {
            return Err(DtanError::Format("unexpected number of tensors".into()));
        }
        let basis_matrix = get_tensor(r, "basis", &[2 * n_cells, dim])?;
        let basis = CpaBasis::from_matrix(&tess, dim, basis_matrix)?;
        let mut offset = 0;
        for (name, dims) in &shapes {
            let data: Vec<T> = get_tensor(r, name, dims)?;
            net.params_mut()[offset..offset + data.len()].copy_from_slice(&data);
            offset += data.len();
        }
        let model = Self::from_parts(tess, basis, net, recurrences, loss).map_err(|e| DtanError::Format(e.to_string()))?;
        if model.prior.is_some() != has_prior {
            return Err(DtanError::Format("prior flag inconsistent with loss kind".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let tess = Tessellation::new(6, BoundaryCondition::ZeroBoundary).unwrap();
        let arch = ArchSpec {
            blocks: vec![ConvSpec { kernel: 3, channels: 4 }],
            pool_width: 4,
            n_classes: 3,
        };
        let loss = LossConfig::new(LossKind::WcssReg);
        let model = AlignmentModel::<f64>::new(&tess, &arch, 2, 20, 3, loss, 9).unwrap();
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"DTAN");
        let back = AlignmentModel::<f64>::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.net().params(), model.net().params());
        assert_eq!(back.basis().matrix(), model.basis().matrix());
        assert_eq!(back.recurrences(), 3);
        assert_eq!(back.loss_config(), model.loss_config());
        assert!(back.prior().is_some());
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        assert!(AlignmentModel::<f64>::read_from(&mut &b"NOPE0000"[..]).is_err());
        let tess = Tessellation::new(4, BoundaryCondition::Free).unwrap();
        let arch = ArchSpec { blocks: vec![ConvSpec { kernel: 3, channels: 2 }], pool_width: 2, n_classes: 0 };
        let model = AlignmentModel::<f64>::new(&tess, &arch, 1, 8, 1, LossConfig::default(), 1).unwrap();
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(AlignmentModel::<f64>::read_from(&mut bytes.as_slice()).is_err());
    }
}
