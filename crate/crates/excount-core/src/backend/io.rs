//! On-disk formats: flat-binary embeddings and 16-bit label-map PNGs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::grid::RealGrid;

use super::{ImagePayload, SourceImage};

/// Raw embedding payload as stored on disk (no source-image dimensions).
#[derive(Debug, Clone)]
pub struct StoredEmbedding {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

/// Read a flat-binary embedding: header `C, He, We` as little-endian u32,
/// followed by `C*He*We` little-endian f32 values.
pub fn read_embedding_file(path: &Path) -> Result<StoredEmbedding> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = [0u8; 12];
    reader.read_exact(&mut header)?;
    let channels = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let count = channels
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| Error::Shape("embedding header overflows".into()))?;
    let mut raw = vec![0u8; count * 4];
    reader.read_exact(&mut raw)?;
    let values = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(StoredEmbedding { channels, height, width, values })
}

pub fn write_embedding_file(
    path: &Path,
    channels: usize,
    height: usize,
    width: usize,
    values: &[f32],
) -> Result<()> {
    if values.len() != channels * height * width {
        return Err(Error::Shape("embedding value count does not match header".into()));
    }
    let mut writer = BufWriter::new(File::create(path)?);
    writer.write_all(&(channels as u32).to_le_bytes())?;
    writer.write_all(&(height as u32).to_le_bytes())?;
    writer.write_all(&(width as u32).to_le_bytes())?;
    for v in values {
        writer.write_all(&v.to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

/// Write a single-channel grid in the embedding file format (C = 1).
pub fn write_grid_file(path: &Path, grid: &RealGrid) -> Result<()> {
    let values: Vec<f32> = grid.values().iter().map(|&v| v as f32).collect();
    write_embedding_file(path, 1, grid.height(), grid.width(), &values)
}

/// Load a scene file. 16-bit single-channel PNGs are label maps; 8-bit RGB
/// PNGs become raster payloads.
pub fn load_label_map_png(path: &Path) -> Result<SourceImage> {
    let dynimg = image::open(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    match dynimg {
        image::DynamicImage::ImageLuma16(img) => {
            let (w, h) = img.dimensions();
            let labels = img.into_raw();
            SourceImage::new(h as usize, w as usize, ImagePayload::Labels(labels), id)
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            SourceImage::new(h as usize, w as usize, ImagePayload::Rgb8(rgb.into_raw()), id)
        }
    }
}

pub fn save_label_map_png(path: &Path, image: &SourceImage) -> Result<()> {
    let labels = match &image.payload {
        ImagePayload::Labels(l) => l,
        ImagePayload::Rgb8(_) => {
            return Err(Error::Backend("cannot save RGB payload as label map".into()))
        }
    };
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(image.width as u32, image.height as u32, labels.clone())
            .ok_or_else(|| Error::Shape("label buffer does not match dimensions".into()))?;
    buf.save(path)?;
    Ok(())
}
