//! On-disk formats for images and sinograms.
//!
//! The interchange format is a flat little-endian f32 binary with a 16-byte
//! header: 4 magic bytes, u32 width, u32 height, u32 reserved (zero). Images
//! use magic `TIMG`, sinograms `TSIN` (width = detectors, height = angles).
//! PGM (16-bit, min/max normalized) and PNG are provided for visualization.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TomoError};
use crate::geometry::{Image, Sinogram};

pub const IMAGE_MAGIC: [u8; 4] = *b"TIMG";
pub const SINO_MAGIC: [u8; 4] = *b"TSIN";

fn write_grid(path: &Path, magic: [u8; 4], width: usize, height: usize, data: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&magic)?;
    w.write_all(&(width as u32).to_le_bytes())?;
    w.write_all(&(height as u32).to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for &v in data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_grid(path: &Path, magic: [u8; 4]) -> Result<(usize, usize, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if header[..4] != magic {
        return Err(TomoError::Format(format!(
            "{}: wrong magic {:?}, expected {:?}",
            path.display(),
            &header[..4],
            magic
        )));
    }
    let width = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != width * height * 4 {
        return Err(TomoError::Format(format!(
            "{}: payload is {} bytes, expected {}",
            path.display(),
            raw.len(),
            width * height * 4
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok((width, height, data))
}

pub fn write_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    write_grid(path.as_ref(), IMAGE_MAGIC, image.width, image.height, &image.data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let (width, height, data) = read_grid(path.as_ref(), IMAGE_MAGIC)?;
    Image::from_vec(width, height, data)
}

pub fn write_sinogram(path: impl AsRef<Path>, sino: &Sinogram) -> Result<()> {
    write_grid(path.as_ref(), SINO_MAGIC, sino.n_detectors, sino.n_angles, &sino.data)
}

pub fn read_sinogram(path: impl AsRef<Path>) -> Result<Sinogram> {
    let (width, height, data) = read_grid(path.as_ref(), SINO_MAGIC)?;
    Sinogram::from_vec(height, width, data)
}

/// Min/max-normalize a grid to 16-bit gray levels.
fn to_u16(data: &[f64]) -> Vec<u16> {
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 65535.0 / (hi - lo) } else { 0.0 };
    data.iter().map(|&v| ((v - lo) * scale).round() as u16).collect()
}

pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, data: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write!(w, "P5\n{width} {height}\n65535\n")?;
    for v in to_u16(data) {
        w.write_all(&v.to_be_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_png(path: impl AsRef<Path>, width: usize, height: usize, data: &[f64]) -> Result<()> {
    let pixels = to_u16(data);
    let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(width as u32, height as u32);
    for (i, p) in buf.pixels_mut().enumerate() {
        *p = image::Luma([pixels[i]]);
    }
    buf.save(path.as_ref())
        .map_err(|e| TomoError::Format(format!("png encode: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn image_binary_roundtrip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("x.bin");
        let img = Image::from_vec(3, 2, vec![0.0, 0.5, 1.0, -1.25, 3.5, 2.0]).unwrap();
        write_image(&p, &img).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!(back.width, 3);
        assert_eq!(back.height, 2);
        // Values survive the f32 round-trip exactly (all representable).
        assert_eq!(back.data, img.data);
    }

    #[test]
    fn sinogram_binary_roundtrip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("y.bin");
        let s = Sinogram::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        write_sinogram(&p, &s).unwrap();
        let back = read_sinogram(&p).unwrap();
        assert_eq!(back.n_angles, 2);
        assert_eq!(back.n_detectors, 3);
        assert_eq!(back.data, s.data);
    }

    #[test]
    fn magic_mismatch_is_detected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("z.bin");
        let img = Image::zeros(2, 2);
        write_image(&p, &img).unwrap();
        assert!(read_sinogram(&p).is_err());
    }

    #[test]
    fn pgm_and_png_are_written() {
        let dir = tempdir().unwrap();
        let img = Image::from_vec(4, 4, (0..16).map(|i| i as f64).collect()).unwrap();
        let pgm = dir.path().join("v.pgm");
        let png = dir.path().join("v.png");
        write_pgm(&pgm, 4, 4, &img.data).unwrap();
        write_png(&png, 4, 4, &img.data).unwrap();
        assert!(std::fs::metadata(&pgm).unwrap().len() > 0);
        assert!(std::fs::metadata(&png).unwrap().len() > 0);
    }
}
