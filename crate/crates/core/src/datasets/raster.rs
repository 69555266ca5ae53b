//! PNG input/output for color frames and indexed instance masks.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::BitMask;

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

pub fn write_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
}

/// Single-channel raster of instance ids (0 = background).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl IndexedMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Sorted distinct non-zero ids.
    pub fn ids(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (1..=255u8).filter(|&v| seen[v as usize]).collect()
    }

    pub fn instance(&self, id: u8) -> BitMask {
        BitMask::from_vec(self.width, self.height, self.data.iter().map(|&v| v == id).collect())
    }
}

/// Reads an 8-bit grayscale or palette PNG (1/2/4/8-bit) keeping raw index values.
pub fn read_indexed(path: &Path) -> Result<IndexedMask> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let fmt = |e: png::DecodingError| Error::format(path, e.to_string());
    let mut reader = decoder.read_info().map_err(fmt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    let (w, h) = (info.width as usize, info.height as usize);
    if !matches!(info.color_type, png::ColorType::Grayscale | png::ColorType::Indexed) {
        return Err(Error::format(
            path,
            format!("mask must be grayscale or indexed, found {:?}", info.color_type),
        ));
    }
    let bits = match info.bit_depth {
        png::BitDepth::One => 1,
        png::BitDepth::Two => 2,
        png::BitDepth::Four => 4,
        png::BitDepth::Eight => 8,
        png::BitDepth::Sixteen => {
            return Err(Error::format(path, "16-bit masks are not supported"));
        }
    };
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &buf[y * info.line_size..(y + 1) * info.line_size];
        for x in 0..w {
            let bit = x * bits;
            let byte = row[bit / 8];
            let shift = 8 - bits - (bit % 8);
            data.push((byte >> shift) & ((1u16 << bits) - 1) as u8);
        }
    }
    Ok(IndexedMask {
        width: w,
        height: h,
        data,
    })
}

pub fn write_indexed(mask: &IndexedMask, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), mask.width as u32, mask.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let fmt = |e: png::EncodingError| Error::format(path, e.to_string());
    let mut writer = enc.write_header().map_err(fmt)?;
    writer.write_image_data(&mask.data).map_err(fmt)?;
    writer.finish().map_err(fmt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexed_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let mut m = IndexedMask::new(5, 3);
        m.set(1, 1, 2);
        m.set(4, 2, 7);
        write_indexed(&m, &p).unwrap();
        let back = read_indexed(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.ids(), vec![2, 7]);
    }

    #[test]
    fn palette_png_keeps_indices() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pal.png");
        {
            let f = File::create(&p).unwrap();
            let mut enc = png::Encoder::new(BufWriter::new(f), 4, 1);
            enc.set_color(png::ColorType::Indexed);
            enc.set_depth(png::BitDepth::Four);
            enc.set_palette(vec![0u8; 3 * 16]);
            let mut w = enc.write_header().unwrap();
            // indices 0,1,2,3 packed two per byte
            w.write_image_data(&[0x01, 0x23]).unwrap();
        }
        assert_eq!(read_indexed(&p).unwrap().data, vec![0, 1, 2, 3]);
    }
}
