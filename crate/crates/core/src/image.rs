//! The backend-tagged N-dimensional image container.
//!
//! Axes are ordered slowest-varying first (ZYX for volumes, YX for planes) and
//! buffers are contiguous row-major. Buffers are reference counted and never
//! mutated after construction, so cloning an image or moving it to another
//! backend does not copy voxel data.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Execution target carried by every image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Scalar single-threaded implementations; always available.
    Reference,
    /// Multithreaded, cache-blocked implementations.
    Accelerated,
}

impl Backend {
    pub const ALL: [Backend; 2] = [Backend::Reference, Backend::Accelerated];

    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Reference => "reference",
            Backend::Accelerated => "accelerated",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Backend::Reference),
            "accelerated" => Ok(Backend::Accelerated),
            other => Err(Error::InvalidParameter(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemKind {
    F32,
    U16,
    /// Unsigned 32-bit instance labels, 0 = background.
    #[serde(rename = "u32")]
    Label,
    Bool,
}

impl ElemKind {
    pub fn size_bytes(self) -> usize {
        match self {
            ElemKind::F32 | ElemKind::Label => 4,
            ElemKind::U16 => 2,
            ElemKind::Bool => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ElemKind::F32 => "f32",
            ElemKind::U16 => "u16",
            ElemKind::Label => "u32",
            ElemKind::Bool => "bool",
        }
    }
}

#[derive(Clone)]
pub enum Buffer {
    F32(Arc<[f32]>),
    U16(Arc<[u16]>),
    Label(Arc<[u32]>),
    Bool(Arc<[bool]>),
}

impl Buffer {
    pub fn len(&self) -> usize {
        match self {
            Buffer::F32(b) => b.len(),
            Buffer::U16(b) => b.len(),
            Buffer::Label(b) => b.len(),
            Buffer::Bool(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn elem(&self) -> ElemKind {
        match self {
            Buffer::F32(_) => ElemKind::F32,
            Buffer::U16(_) => ElemKind::U16,
            Buffer::Label(_) => ElemKind::Label,
            Buffer::Bool(_) => ElemKind::Bool,
        }
    }
}

/// Bitwise equality; `NaN` payloads and signed zeros are distinguished.
impl PartialEq for Buffer {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Buffer::F32(a), Buffer::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Buffer::U16(a), Buffer::U16(b)) => a == b,
            (Buffer::Label(a), Buffer::Label(b)) => a == b,
            (Buffer::Bool(a), Buffer::Bool(b)) => a == b,
            _ => false,
        }
    }
}

impl fmt::Debug for Buffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Buffer::{:?}[{}]", self.elem(), self.len())
    }
}

/// An immutable N-D array tagged with the backend it lives on.
#[derive(Clone, Debug, PartialEq)]
pub struct NdImage {
    shape: Vec<usize>,
    buffer: Buffer,
    backend: Backend,
    spacing: Option<Vec<f64>>,
}

/// Instance labels (`u32`, 0 = background) stored in an [`NdImage`].
pub type LabelImage = NdImage;

impl NdImage {
    pub fn new(shape: Vec<usize>, buffer: Buffer) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::BadShape("images need at least one axis".into()));
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::BadShape(format!("zero extent in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != buffer.len() {
            return Err(Error::BadShape(format!(
                "shape {shape:?} holds {expected} values, buffer has {}",
                buffer.len()
            )));
        }
        Ok(NdImage { shape, buffer, backend: Backend::Reference, spacing: None })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, Buffer::F32(data.into()))
    }

    pub fn from_u16(shape: Vec<usize>, data: Vec<u16>) -> Result<Self> {
        Self::new(shape, Buffer::U16(data.into()))
    }

    pub fn from_labels(shape: Vec<usize>, data: Vec<u32>) -> Result<Self> {
        Self::new(shape, Buffer::Label(data.into()))
    }

    pub fn from_mask(shape: Vec<usize>, data: Vec<bool>) -> Result<Self> {
        Self::new(shape, Buffer::Bool(data.into()))
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::from_f32(shape, vec![0.0; n])
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Result<Self> {
        let n = shape.iter().product();
        Self::from_f32(shape, vec![value; n])
    }

    pub fn with_spacing(mut self, spacing: Vec<f64>) -> Result<Self> {
        if spacing.len() != self.shape.len() || spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidSpacing);
        }
        self.spacing = Some(spacing);
        Ok(self)
    }

    pub(crate) fn with_spacing_opt(mut self, spacing: Option<Vec<f64>>) -> Self {
        self.spacing = spacing;
        self
    }

    /// Same buffer and metadata, different backend tag.
    pub(crate) fn tagged(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    /// Moves the image to `target`. Values, shape and spacing are preserved
    /// bit for bit; the buffer itself is shared rather than copied.
    pub fn to_backend(&self, target: Backend) -> NdImage {
        self.clone().tagged(target)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn elem(&self) -> ElemKind {
        self.buffer.elem()
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn spacing(&self) -> Option<&[f64]> {
        self.spacing.as_deref()
    }

    /// Spacing per axis, 1.0 where none is recorded.
    pub fn spacing_or_unit(&self) -> Vec<f64> {
        self.spacing.clone().unwrap_or_else(|| vec![1.0; self.ndim()])
    }

    pub fn buffer(&self) -> &Buffer {
        &self.buffer
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.buffer {
            Buffer::F32(b) => Ok(b),
            other => Err(Error::ElemMismatch { expected: ElemKind::F32, found: other.elem() }),
        }
    }

    pub fn as_labels(&self) -> Result<&[u32]> {
        match &self.buffer {
            Buffer::Label(b) => Ok(b),
            other => Err(Error::ElemMismatch { expected: ElemKind::Label, found: other.elem() }),
        }
    }

    pub fn as_mask(&self) -> Result<&[bool]> {
        match &self.buffer {
            Buffer::Bool(b) => Ok(b),
            other => Err(Error::ElemMismatch { expected: ElemKind::Bool, found: other.elem() }),
        }
    }

    pub fn as_u16(&self) -> Result<&[u16]> {
        match &self.buffer {
            Buffer::U16(b) => Ok(b),
            other => Err(Error::ElemMismatch { expected: ElemKind::U16, found: other.elem() }),
        }
    }

    /// Values promoted to `f32`; borrows when the image already is `f32`.
    pub fn values_f32(&self) -> Cow<'_, [f32]> {
        match &self.buffer {
            Buffer::F32(b) => Cow::Borrowed(b),
            Buffer::U16(b) => Cow::Owned(b.iter().map(|&v| v as f32).collect()),
            Buffer::Label(b) => Cow::Owned(b.iter().map(|&v| v as f32).collect()),
            Buffer::Bool(b) => Cow::Owned(b.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()),
        }
    }

    /// Foreground mask: nonzero voxels are `true`.
    pub fn nonzero(&self) -> Vec<bool> {
        match &self.buffer {
            Buffer::F32(b) => b.iter().map(|&v| v != 0.0).collect(),
            Buffer::U16(b) => b.iter().map(|&v| v != 0).collect(),
            Buffer::Label(b) => b.iter().map(|&v| v != 0).collect(),
            Buffer::Bool(b) => b.to_vec(),
        }
    }

    pub(crate) fn require_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::ShapeMismatch { expected: shape.to_vec(), found: self.shape.clone() });
        }
        Ok(())
    }

    /// New `f32` image with this image's shape, spacing and backend.
    pub(crate) fn like_f32(&self, data: Vec<f32>) -> NdImage {
        self.derive(Buffer::F32(data.into()))
    }

    pub(crate) fn like_labels(&self, data: Vec<u32>) -> NdImage {
        self.derive(Buffer::Label(data.into()))
    }

    pub(crate) fn like_mask(&self, data: Vec<bool>) -> NdImage {
        self.derive(Buffer::Bool(data.into()))
    }

    fn derive(&self, buffer: Buffer) -> NdImage {
        debug_assert_eq!(buffer.len(), self.len());
        NdImage { shape: self.shape.clone(), buffer, backend: self.backend, spacing: self.spacing.clone() }
    }

    /// Stacks equally shaped images along a new leading channel axis (`f32`).
    pub fn stack_channels(channels: &[&NdImage]) -> Result<NdImage> {
        let first = channels.first().ok_or_else(|| Error::BadShape("no channels to stack".into()))?;
        let mut data = Vec::with_capacity(first.len() * channels.len());
        for c in channels {
            c.require_shape(first.shape())?;
            data.extend_from_slice(&c.values_f32());
        }
        let mut shape = vec![channels.len()];
        shape.extend_from_slice(first.shape());
        let mut out = NdImage::from_f32(shape, data)?.tagged(first.backend);
        if let Some(s) = &first.spacing {
            out.spacing = Some(std::iter::once(1.0).chain(s.iter().copied()).collect());
        }
        Ok(out)
    }

    /// Sub-image at index `c` of the leading axis.
    pub fn channel(&self, c: usize) -> Result<NdImage> {
        if self.ndim() < 2 || c >= self.shape[0] {
            return Err(Error::BadShape(format!("no channel {c} in shape {:?}", self.shape)));
        }
        let n = self.len() / self.shape[0];
        let r = c * n..(c + 1) * n;
        let buffer = match &self.buffer {
            Buffer::F32(b) => Buffer::F32(b[r].into()),
            Buffer::U16(b) => Buffer::U16(b[r].into()),
            Buffer::Label(b) => Buffer::Label(b[r].into()),
            Buffer::Bool(b) => Buffer::Bool(b[r].into()),
        };
        Ok(NdImage {
            shape: self.shape[1..].to_vec(),
            buffer,
            backend: self.backend,
            spacing: self.spacing.as_ref().map(|s| s[1..].to_vec()),
        })
    }

    /// Number of distinct nonzero labels.
    pub fn label_count(&self) -> Result<usize> {
        let mut ids: Vec<u32> = self.as_labels()?.iter().copied().filter(|&l| l != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        Ok(ids.len())
    }
}

/// Row-major strides in elements.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * shape[a + 1];
    }
    s
}

pub(crate) fn unravel(mut index: usize, shape: &[usize], out: &mut [usize]) {
    for a in (0..shape.len()).rev() {
        out[a] = index % shape[a];
        index /= shape[a];
    }
}
