use std::collections::BTreeMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Location of one named parameter tensor inside the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seg {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Seg {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn of<'a>(&self, flat: &'a [f64]) -> &'a [f64] {
        &flat[self.offset..self.offset + self.len()]
    }

    pub fn of_mut<'a>(&self, flat: &'a mut [f64]) -> &'a mut [f64] {
        &mut flat[self.offset..self.offset + self.len()]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentInfo {
    pub name: String,
    pub seg: Seg,
}

/// Ordered list of named segments; segment order is the flat layout.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamLayout {
    segments: Vec<SegmentInfo>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a `rows × cols` segment and returns its location.
    pub fn push(&mut self, name: &str, rows: usize, cols: usize) -> Seg {
        assert!(self.get(name).is_none(), "duplicate parameter segment {name}");
        let seg = Seg { offset: self.total, rows, cols };
        self.total += seg.len();
        self.segments.push(SegmentInfo { name: name.to_owned(), seg });
        seg
    }

    pub fn get(&self, name: &str) -> Option<Seg> {
        self.segments.iter().find(|s| s.name == name).map(|s| s.seg)
    }

    pub fn segments(&self) -> &[SegmentInfo] {
        &self.segments
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// SHA-256 over the canonical layout description: for every segment in
    /// order, `u32 LE name length ‖ UTF-8 name ‖ u64 LE rows ‖ u64 LE cols`.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for s in &self.segments {
            h.update((s.name.len() as u32).to_le_bytes());
            h.update(s.name.as_bytes());
            h.update((s.seg.rows as u64).to_le_bytes());
            h.update((s.seg.cols as u64).to_le_bytes());
        }
        h.finalize().into()
    }
}

/// Flattened model parameters (or a gradient) with a shared layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    layout: Arc<ParamLayout>,
    data: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let data = vec![0.0; layout.total()];
        Self { layout, data }
    }

    pub fn from_flat(layout: Arc<ParamLayout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.total() {
            return Err(Error::Input(format!("layout expects {} values, got {}", layout.total(), data.len())));
        }
        Ok(Self { layout, data })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn segment(&self, name: &str) -> Result<&[f64]> {
        let seg = self.layout.get(name).ok_or_else(|| Error::lookup("parameter segment", name))?;
        Ok(seg.of(&self.data))
    }

    pub fn segment_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let seg = self.layout.get(name).ok_or_else(|| Error::lookup("parameter segment", name))?;
        Ok(seg.of_mut(&mut self.data))
    }

    /// Named tensor view of every segment.
    pub fn segments(&self) -> BTreeMap<String, Tensor> {
        self.layout
            .segments()
            .iter()
            .map(|s| (s.name.clone(), Tensor::from_parts(vec![s.seg.rows, s.seg.cols], s.seg.of(&self.data).to_vec())))
            .collect()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: f64, other: &ParamVector) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Serialized size in bytes: 32-byte layout digest plus 8 bytes per value.
    pub fn byte_size(&self) -> usize {
        32 + 8 * self.data.len()
    }

    /// `layout digest ‖ values as f64 little-endian`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_size());
        out.extend_from_slice(&self.layout.digest());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(layout: Arc<ParamLayout>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 32 || bytes[..32] != layout.digest() {
            return Err(Error::Input("parameter blob does not match the expected layout digest".into()));
        }
        let body = &bytes[32..];
        if body.len() != 8 * layout.total() {
            return Err(Error::Input(format!("parameter blob has {} value bytes, expected {}", body.len(), 8 * layout.total())));
        }
        let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Self { layout, data })
    }
}
