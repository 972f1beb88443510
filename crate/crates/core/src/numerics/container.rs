//! Named-tensor container shared by model checkpoints and memory-state
//! snapshots.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "INFINICK"
//! version    u32
//! kind       u16 length + UTF-8
//! fields     u32 count, then per field:
//!              u16 length + UTF-8 name, u8 tag (0 int, 1 float, 2 text),
//!              i64 | f64 | u32 length + UTF-8
//! tensors    u32 count, then per tensor:
//!              u16 length + UTF-8 name, u8 dtype (0 f32, 1 f64),
//!              u8 rank, rank x u64 dims, flat payload
//! ```

use std::fs;
use std::path::Path;

use super::error::{NumericsError, Result};
use super::scalar::{DType, Scalar};
use super::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"INFINICK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl FieldValue {
    pub fn render(&self) -> String {
        match self {
            FieldValue::Int(v) => v.to_string(),
            FieldValue::Float(v) => format!("{v:?}"),
            FieldValue::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32(t) => t.shape(),
            TensorData::F64(t) => t.shape(),
        }
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => TensorData::F32(reinterpret(t)),
            DType::F64 => TensorData::F64(reinterpret(t)),
        }
    }

    /// Converts to `T`; bit-exact when the stored dtype is `T`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        match self {
            TensorData::F32(t) if T::DTYPE == DType::F32 => reinterpret(t),
            TensorData::F64(t) if T::DTYPE == DType::F64 => reinterpret(t),
            TensorData::F32(t) => t.cast(),
            TensorData::F64(t) => t.cast(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub fields: Vec<(String, FieldValue)>,
    pub tensors: Vec<(String, TensorData)>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            fields: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn set_field(&mut self, name: &str, value: FieldValue) {
        match self.fields.iter_mut().find(|(n, _)| n == name) {
            Some((_, v)) => *v = value,
            None => self.fields.push((name.to_string(), value)),
        }
    }

    pub fn field(&self, name: &str) -> Option<&FieldValue> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn int_field(&self, name: &str) -> Result<i64> {
        match self.field(name) {
            Some(FieldValue::Int(v)) => Ok(*v),
            _ => Err(NumericsError::Format(format!("missing integer field `{name}`"))),
        }
    }

    pub fn push_tensor<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) {
        self.tensors
            .push((name.to_string(), TensorData::from_tensor(t)));
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorData> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        self.tensor(name)
            .map(TensorData::to_tensor)
            .ok_or_else(|| NumericsError::Format(format!("missing tensor `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str16(&mut out, &self.kind);
        out.extend_from_slice(&(self.fields.len() as u32).to_le_bytes());
        for (name, value) in &self.fields {
            put_str16(&mut out, name);
            match value {
                FieldValue::Int(v) => {
                    out.push(0);
                    out.extend_from_slice(&v.to_le_bytes());
                }
                FieldValue::Float(v) => {
                    out.push(1);
                    out.extend_from_slice(&v.to_le_bytes());
                }
                FieldValue::Text(s) => {
                    out.push(2);
                    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
            }
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str16(&mut out, name);
            out.push(t.dtype().tag());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match t {
                TensorData::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                TensorData::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(NumericsError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NumericsError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let kind = r.str16()?;
        let mut c = Container::new(&kind);
        for _ in 0..r.u32()? {
            let name = r.str16()?;
            let value = match r.u8()? {
                0 => FieldValue::Int(i64::from_le_bytes(r.array()?)),
                1 => FieldValue::Float(f64::from_le_bytes(r.array()?)),
                2 => {
                    let len = r.u32()? as usize;
                    FieldValue::Text(utf8(r.take(len)?)?)
                }
                tag => return Err(NumericsError::Format(format!("bad field tag {tag}"))),
            };
            c.fields.push((name, value));
        }
        for _ in 0..r.u32()? {
            let name = r.str16()?;
            let dtype = DType::from_tag(r.u8()?)
                .ok_or_else(|| NumericsError::Format(format!("bad dtype for `{name}`")))?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(r.array()?) as usize);
            }
            let n: usize = shape.iter().product();
            let payload = r.take(n.checked_mul(dtype.size()).ok_or_else(|| {
                NumericsError::Format(format!("tensor `{name}` too large"))
            })?)?;
            let data = match dtype {
                DType::F32 => TensorData::F32(decode(&shape, payload)?),
                DType::F64 => TensorData::F64(decode(&shape, payload)?),
            };
            c.tensors.push((name, data));
        }
        if r.pos != bytes.len() {
            return Err(NumericsError::Format("trailing bytes".into()));
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Same-width conversion through the little-endian byte image.
fn reinterpret<T: Scalar, U: Scalar>(t: &Tensor<T>) -> Tensor<U> {
    debug_assert_eq!(T::DTYPE.size(), U::DTYPE.size());
    let mut bytes = Vec::with_capacity(t.numel() * T::DTYPE.size());
    t.data().iter().for_each(|v| v.write_le(&mut bytes));
    decode(t.shape(), &bytes).expect("same shape")
}

fn decode<T: Scalar>(shape: &[usize], payload: &[u8]) -> Result<Tensor<T>> {
    let size = T::DTYPE.size();
    let data: Vec<T> = payload.chunks_exact(size).map(T::read_le).collect();
    if shape.is_empty() {
        return match data.as_slice() {
            [v] => Ok(Tensor::scalar(*v)),
            _ => Err(NumericsError::Format("rank-0 tensor payload".into())),
        };
    }
    Tensor::new(shape, data)
}

fn put_str16(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn utf8(b: &[u8]) -> Result<String> {
    String::from_utf8(b.to_vec()).map_err(|_| NumericsError::Format("invalid UTF-8".into()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NumericsError::Format("truncated container".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn str16(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.array()?) as usize;
        utf8(self.take(len)?)
    }
}
