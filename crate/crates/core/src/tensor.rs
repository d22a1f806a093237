//! `TensorBlock`: the shaped little-endian `f32` carrier used for every
//! persisted artifact, plus its binary container format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "DSCOTNSR"
//! version    u32       1
//! dtype      u32       1 = f32
//! rank       u32
//! dims       u32 x rank
//! payload    f32 x prod(dims)
//! manifest   u32 byte length, then UTF-8 bytes
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{DscoError, Result};

pub const MAGIC: &[u8; 8] = b"DSCOTNSR";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlock {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl TensorBlock {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(DscoError::Shape(format!(
                "shape {shape:?} holds {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Packs a sample matrix (rows are samples) as a tensor of shape
    /// `[n, sample_shape...]`.
    pub fn from_samples(samples: &Array2<f64>, sample_shape: &[usize]) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if per != samples.ncols() {
            return Err(DscoError::Shape(format!(
                "sample shape {sample_shape:?} does not hold {} values",
                samples.ncols()
            )));
        }
        let mut shape = vec![samples.nrows()];
        shape.extend_from_slice(sample_shape);
        let data = samples.iter().map(|&v| v as f32).collect();
        Self::new(shape, data)
    }

    /// Unpacks the leading axis into rows of a sample matrix.
    pub fn to_samples(&self) -> Result<Array2<f64>> {
        if self.shape.is_empty() {
            return Err(DscoError::Shape("rank-0 tensor has no sample axis".into()));
        }
        let n = self.shape[0];
        let per: usize = self.shape[1..].iter().product();
        let data = self.data.iter().map(|&v| f64::from(v)).collect();
        Array2::from_shape_vec((n, per), data).map_err(|e| DscoError::Shape(e.to_string()))
    }

    pub fn write_to<W: Write>(&self, mut w: W, manifest: &str) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&DTYPE_F32.to_le_bytes())?;
        w.write_all(&to_u32(self.shape.len(), "rank")?.to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&to_u32(d, "dimension")?.to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&payload)?;
        let manifest = manifest.as_bytes();
        w.write_all(&to_u32(manifest.len(), "manifest length")?.to_le_bytes())?;
        w.write_all(manifest)?;
        Ok(())
    }

    /// Reads one container; trailing bytes are rejected.
    pub fn read_from<R: Read>(mut r: R) -> Result<(Self, String)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(DscoError::Format(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(DscoError::Format(format!("unsupported version {version}")));
        }
        let dtype = read_u32(&mut r)?;
        if dtype != DTYPE_F32 {
            return Err(DscoError::Format(format!("unsupported dtype tag {dtype}")));
        }
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| DscoError::Format("element count overflows".into()))?;
        let mut payload = vec![0u8; n * 4];
        r.read_exact(&mut payload).map_err(truncated)?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mlen = read_u32(&mut r)? as usize;
        let mut manifest = vec![0u8; mlen];
        r.read_exact(&mut manifest).map_err(truncated)?;
        let manifest = String::from_utf8(manifest).map_err(|e| DscoError::Format(e.to_string()))?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(DscoError::Format(format!("{} trailing bytes", rest.len())));
        }
        Ok((Self { shape, data }, manifest))
    }

    pub fn save(&self, path: impl AsRef<Path>, manifest: &str) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf, manifest)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| DscoError::Format(format!("{what} {v} exceeds u32")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> DscoError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        DscoError::Format("truncated container".into())
    } else {
        DscoError::Io(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let t = TensorBlock::new(vec![2], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf, "ab").unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"DSCOTNSR");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(b"ab");
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_bad_magic_and_trailing_bytes() {
        let t = TensorBlock::zeros(vec![1, 1]);
        let mut buf = Vec::new();
        t.write_to(&mut buf, "").unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            TensorBlock::read_from(bad.as_slice()),
            Err(DscoError::Format(_))
        ));
        buf.push(0);
        assert!(matches!(
            TensorBlock::read_from(buf.as_slice()),
            Err(DscoError::Format(_))
        ));
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let t = TensorBlock::zeros(vec![3]);
        let mut buf = Vec::new();
        t.write_to(&mut buf, "m").unwrap();
        buf.truncate(buf.len() - 7);
        assert!(matches!(
            TensorBlock::read_from(buf.as_slice()),
            Err(DscoError::Format(_))
        ));
    }

    #[test]
    fn shape_must_match_data() {
        assert!(TensorBlock::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn container_round_trips_bit_exactly(
            dims in proptest::collection::vec(1usize..5, 0..4),
            seed in any::<u32>(),
            manifest in "[a-z{}\":,0-9 ]{0,40}",
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 7919) & 0x7f7f_ffff))
                .collect();
            let t = TensorBlock::new(dims, data).unwrap();
            let mut buf = Vec::new();
            t.write_to(&mut buf, &manifest).unwrap();
            let (back, m) = TensorBlock::read_from(buf.as_slice()).unwrap();
            prop_assert_eq!(m, manifest);
            prop_assert_eq!(back.shape(), t.shape());
            let a: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
