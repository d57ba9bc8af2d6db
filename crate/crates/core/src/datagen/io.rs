//! Corpus persistence: lossless PNG files plus a tab-separated manifest.

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::{Array2, Array3};

use super::{Corpus, ImageSample, Label, Origin};
use crate::{Error, Result};

const MANIFEST: &str = "manifest.txt";
const HEADER: &str = "id\tgroup\tlabel\tmask\torigin";

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb_png(pixels: &Array3<f64>, path: &Path) -> Result<()> {
    let (c, h, w) = pixels.dim();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let ch = |k: usize| to_u8(pixels[[k.min(c - 1), y, x]]);
        Rgb([ch(0), ch(1), ch(2)])
    });
    img.save(path)?;
    Ok(())
}

pub fn write_mask_png(mask: &Array2<u8>, path: &Path) -> Result<()> {
    let (h, w) = mask.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([mask[[y as usize, x as usize]] * 255])
    });
    img.save(path)?;
    Ok(())
}

pub(super) fn read_rgb(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn(
        (3, h as usize, w as usize),
        |(c, y, x)| img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0,
    ))
}

pub(super) fn read_mask(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        u8::from(img.get_pixel(x as u32, y as u32)[0] > 0)
    }))
}

/// Writes `images/`, `masks/` and `manifest.txt` under `dir`.
///
/// Generated pixels are multiples of 1/255, so the 8-bit PNGs round-trip exactly.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut manifest = String::from(HEADER);
    manifest.push('\n');
    let groups = [
        ("train_normal", &corpus.train_normals),
        ("test_normal", &corpus.test_normals),
        ("anomaly", &corpus.anomalies),
    ];
    for (group, samples) in groups {
        for s in samples.iter() {
            write_rgb_png(
                s.pixels(),
                &dir.join("images").join(format!("{}.png", s.id())),
            )?;
            let mask_path = if s.label() == Label::Anomalous {
                let rel = format!("masks/{}_mask.png", s.id());
                write_mask_png(s.mask(), &dir.join(&rel))?;
                rel
            } else {
                "-".to_string()
            };
            manifest.push_str(&format!(
                "{}\t{group}\t{}\t{mask_path}\t{}\n",
                s.id(),
                s.label().as_str(),
                s.origin().as_str()
            ));
        }
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::Ingestion {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    let mut corpus = Corpus {
        train_normals: Vec::new(),
        test_normals: Vec::new(),
        anomalies: Vec::new(),
    };
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |message: &str| Error::Ingestion {
            path: manifest_path.clone(),
            message: format!("line {}: {message}", lineno + 1),
        };
        if fields.len() != 5 {
            return Err(bad("expected 5 tab-separated fields"));
        }
        let (id, group, label, mask_rel, origin) =
            (fields[0], fields[1], fields[2], fields[3], fields[4]);
        let pixels = read_rgb(&dir.join("images").join(format!("{id}.png")))?;
        let origin = match origin {
            "generated" => Origin::Generated,
            "ingested" => Origin::Ingested,
            _ => return Err(bad("unknown origin")),
        };
        let sample = match label {
            "normal" => ImageSample::normal(id, pixels, origin)?,
            "anomalous" => {
                let mask = read_mask(&dir.join(mask_rel))?;
                ImageSample::new(id, pixels, Label::Anomalous, mask, origin)?
            }
            _ => return Err(bad("unknown label")),
        };
        match group {
            "train_normal" => corpus.train_normals.push(sample),
            "test_normal" => corpus.test_normals.push(sample),
            "anomaly" => corpus.anomalies.push(sample),
            _ => return Err(bad("unknown group")),
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_corpus, GenCounts, GenSpec};

    #[test]
    fn corpus_round_trips_bit_exact() {
        let spec = GenSpec {
            counts: GenCounts {
                n_train_normal: 4,
                n_test_normal: 2,
                n_anomalous_pool: 3,
            },
            seed: 5,
            ..GenSpec::default()
        };
        let corpus = generate_corpus(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert_eq!(manifest.lines().count(), 1 + 9);
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded, corpus);
    }
}
