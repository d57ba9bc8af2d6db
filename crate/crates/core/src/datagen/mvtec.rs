//! Ingestion of MVTec-style category directories:
//! `train/good/*`, `test/<defect>/*`, `ground_truth/<defect>/<stem>_mask.png`.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{DynamicImage, GenericImageView};
use ndarray::{Array2, Array3};

use super::{ImageSample, Label, Origin};
use crate::{Error, Result};

/// Images are resized to `size * RESIZE_BEFORE_CROP` (rounded up) and then
/// center-cropped to `size`, the same 256 -> 224 ratio used for real corpora.
pub const RESIZE_BEFORE_CROP: f64 = 256.0 / 224.0;

fn resized_side(size: usize) -> usize {
    (size as f64 * RESIZE_BEFORE_CROP - 1e-9).ceil() as usize
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Ingestion {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Ingestion {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn crop_offset(side: usize, size: usize) -> u32 {
    ((side - size) / 2) as u32
}

/// Resize-then-center-crop to `size x size`, as a `[3, size, size]` array in `[0, 1]`.
pub(crate) fn prepare_image(img: &DynamicImage, size: usize) -> Array3<f64> {
    let side = resized_side(size);
    let rgb = img.to_rgb8();
    let resized = imageops::resize(&rgb, side as u32, side as u32, FilterType::Triangle);
    let off = crop_offset(side, size);
    let cropped = imageops::crop_imm(&resized, off, off, size as u32, size as u32).to_image();
    Array3::from_shape_fn((3, size, size), |(c, y, x)| {
        cropped.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    })
}

pub(crate) fn prepare_mask(img: &DynamicImage, size: usize) -> Array2<u8> {
    let side = resized_side(size);
    let luma = img.to_luma8();
    let resized = imageops::resize(&luma, side as u32, side as u32, FilterType::Nearest);
    let off = crop_offset(side, size);
    let cropped = imageops::crop_imm(&resized, off, off, size as u32, size as u32).to_image();
    Array2::from_shape_fn((size, size), |(y, x)| {
        u8::from(cropped.get_pixel(x as u32, y as u32)[0] > 0)
    })
}

/// Loads one category directory into normal training samples and labeled test samples.
pub fn load_mvtec_layout(root: &Path, size: usize) -> Result<(Vec<ImageSample>, Vec<ImageSample>)> {
    let mut train = Vec::new();
    for path in image_files(&root.join("train").join("good"))? {
        let stem = file_stem(&path);
        let pixels = prepare_image(&open(&path)?, size);
        train.push(ImageSample::normal(
            format!("train/good/{stem}"),
            pixels,
            Origin::Ingested,
        )?);
    }

    let mut test = Vec::new();
    for defect_dir in subdirs(&root.join("test"))? {
        let defect = defect_dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        for path in image_files(&defect_dir)? {
            let stem = file_stem(&path);
            let id = format!("test/{defect}/{stem}");
            let pixels = prepare_image(&open(&path)?, size);
            if defect == "good" {
                test.push(ImageSample::normal(id, pixels, Origin::Ingested)?);
                continue;
            }
            let mask_path = root
                .join("ground_truth")
                .join(&defect)
                .join(format!("{stem}_mask.png"));
            if !mask_path.is_file() {
                return Err(Error::Ingestion {
                    path: mask_path,
                    message: "missing ground-truth mask for anomalous test image".into(),
                });
            }
            let img = open(&mask_path)?;
            let (w, h) = img.dimensions();
            let mask = prepare_mask(&img, size);
            if mask.iter().all(|&m| m == 0) {
                return Err(Error::Ingestion {
                    path: mask_path,
                    message: format!("mask ({w}x{h}) is empty after resize and crop"),
                });
            }
            test.push(ImageSample::new(
                id,
                pixels,
                Label::Anomalous,
                mask,
                Origin::Ingested,
            )?);
        }
    }
    Ok((train, test))
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string()
}
