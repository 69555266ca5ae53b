//! Dense optical flow fields and the Middlebury `.flo` container.
//!
//! Layout: magic `202021.25` (f32 LE), width and height (i32 LE), then
//! `width*height` interleaved `(u, v)` pairs (f32 LE), row-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;
const HEADER_BYTES: usize = 12;

/// Per-pixel displacement `(u, v)` in pixels from frame t to t+1.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Self {
        assert_eq!(u.len(), width * height);
        assert_eq!(v.len(), width * height);
        Self { width, height, u, v }
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        Self::new(width, height, vec![u; width * height], vec![v; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn set(&mut self, x: usize, y: usize, u: f32, v: f32) {
        let i = y * self.width + x;
        self.u[i] = u;
        self.v[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    /// Mirror about the vertical axis; horizontal motion changes sign.
    pub fn flip_horizontal(&self) -> FlowField {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let (u, v) = self.at(self.width - 1 - x, y);
                out.set(x, y, -u, v);
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + 8 * self.u.len());
        out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
        out.extend_from_slice(&(self.width as i32).to_le_bytes());
        out.extend_from_slice(&(self.height as i32).to_le_bytes());
        for (u, v) in self.u.iter().zip(&self.v) {
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(Error::format(path, format!("truncated header: {} bytes", bytes.len())));
        }
        let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().expect("4 bytes") };
        let magic = f32::from_le_bytes(word(0));
        if magic != FLO_MAGIC {
            return Err(Error::format(path, format!("bad .flo magic {magic}, expected {FLO_MAGIC}")));
        }
        let width = i32::from_le_bytes(word(4));
        let height = i32::from_le_bytes(word(8));
        if width <= 0 || height <= 0 {
            return Err(Error::format(path, format!("invalid dimensions {width}x{height}")));
        }
        let n = width as usize * height as usize;
        let expected = HEADER_BYTES + 8 * n;
        if bytes.len() != expected {
            return Err(Error::format(
                path,
                format!("payload length {} does not match {width}x{height} (expected {expected} bytes)", bytes.len()),
            ));
        }
        let mut u = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            let off = HEADER_BYTES + 8 * i;
            u.push(f32::from_le_bytes(word(off)));
            v.push(f32::from_le_bytes(word(off + 4)));
        }
        Ok(Self::new(width as usize, height as usize, u, v))
    }
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FlowField::from_bytes(&bytes, path)
}

pub fn write_flow(field: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, field.to_bytes()).map_err(|e| Error::io(path, e))
}
