use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Seek};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::raster::{GrayImage, ProbabilityMap};

/// Decodes any 8/16-bit PNG to its first channel as 8-bit samples.
pub fn decode_gray_png<R: BufRead + Seek>(reader: R) -> Result<(usize, usize, Vec<u8>)> {
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::PngFormat("image too large".into()))?];
    let info = reader.next_frame(&mut buf)?;
    let channels = info.color_type.samples();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::PngFormat(format!("bit depth {:?}", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut out = Vec::with_capacity(w * h);
    for row in buf[..info.buffer_size()].chunks(info.line_size) {
        out.extend(row.chunks(channels).take(w).map(|px| px[0]));
    }
    Ok((h, w, out))
}

/// Reads a mask PNG: values >= 128 are foreground.
pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    let (h, w, px) = decode_gray_png(BufReader::new(File::open(path)?))?;
    BinaryMask::from_vec(h, w, px.into_iter().map(|v| v >= 128).collect())
}

pub fn read_gray_png(path: &Path) -> Result<GrayImage> {
    let (h, w, px) = decode_gray_png(BufReader::new(File::open(path)?))?;
    GrayImage::new(h, w, px.into_iter().map(|v| v as f32 / 255.0).collect())
}

fn write_gray8(path: &Path, height: usize, width: usize, data: &[u8]) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()?;
    Ok(())
}

/// Writes 0 for background and 255 for foreground.
pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let data: Vec<u8> = mask.pixels().iter().map(|&p| if p { 255 } else { 0 }).collect();
    write_gray8(path, mask.height(), mask.width(), &data)
}

pub fn write_gray_png(path: &Path, image: &GrayImage) -> Result<()> {
    let data: Vec<u8> = image
        .values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_gray8(path, image.height, image.width, &data)
}

pub fn write_probability_png(path: &Path, prob: &ProbabilityMap) -> Result<()> {
    let data: Vec<u8> = prob
        .values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_gray8(path, prob.height, prob.width, &data)
}
