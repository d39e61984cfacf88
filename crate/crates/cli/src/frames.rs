//! Image-directory ingestion and PNG output.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageError, RgbImage};
use riann::color::RgbFrame;
use riann::Frame;

use crate::Failure;

/// PNG files directly inside `dir`, in lexicographic file-name order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries =
        fs::read_dir(dir).map_err(|e| Failure::io(format!("cannot read directory {}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Failure::io(e.to_string()))?.path();
        let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if paths.is_empty() {
        return Err(Failure::io(format!("no .png frames in {}", dir.display())));
    }
    Ok(paths)
}

fn open(path: &Path) -> Result<DynamicImage, Failure> {
    image::open(path).map_err(|e| match e {
        ImageError::IoError(io) => Failure::io(format!("{}: {io}", path.display())),
        other => Failure::format(format!("{}: {other}", path.display())),
    })
}

fn to_rgb(img: DynamicImage) -> RgbFrame {
    let rgb = img.into_rgb8();
    let (w, h) = rgb.dimensions();
    RgbFrame { width: w as usize, height: h as usize, data: rgb.into_raw() }
}

/// Luminance in `[0, 1]`. Gray images are taken as-is; colour images go
/// through the integer YCbCr transform.
pub fn read_luma(path: &Path) -> Result<Frame, Failure> {
    let img = open(path)?;
    if img.color().has_color() {
        return Ok(to_rgb(img).luma());
    }
    let gray = img.into_luma8();
    let (w, h) = gray.dimensions();
    Ok(Frame::from_u8(w as usize, h as usize, gray.as_raw())?)
}

pub fn read_rgb(path: &Path) -> Result<RgbFrame, Failure> {
    Ok(to_rgb(open(path)?))
}

fn save(result: Result<(), ImageError>, path: &Path) -> Result<(), Failure> {
    result.map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))
}

pub fn write_gray(path: &Path, frame: &Frame) -> Result<(), Failure> {
    let img = GrayImage::from_raw(frame.width as u32, frame.height as u32, frame.to_u8()).expect("buffer matches size");
    save(img.save(path), path)
}

pub fn write_rgb(path: &Path, frame: &RgbFrame) -> Result<(), Failure> {
    let img =
        RgbImage::from_raw(frame.width as u32, frame.height as u32, frame.data.clone()).expect("buffer matches size");
    save(img.save(path), path)
}

pub fn output_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(format!("cannot create {}: {e}", dir.display())))
}

pub fn frame_name(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("frame_{t:05}.png"))
}
