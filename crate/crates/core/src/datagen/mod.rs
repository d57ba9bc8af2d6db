//! Synthetic texture corpora, noisy training splits, and MVTec-style ingestion.
//!
//! Samples carry their ground truth (label and pixel mask) but training code
//! only ever sees a [`TrainView`], which exposes ids and pixels and nothing else.

mod generate;
mod io;
mod mvtec;
mod split;

use ndarray::{Array2, Array3};

use crate::{Error, Result};

pub use generate::{
    generate_corpus, Corpus, DefectAppearance, DefectShape, DefectSpec, GenCounts, GenSpec,
    PatternFamily,
};
pub use io::{load_corpus, save_corpus, write_mask_png, write_rgb_png};
pub use mvtec::{load_mvtec_layout, RESIZE_BEFORE_CROP};
pub use split::{build_fuad_split, injection_count, FuadSplit, Setting};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Generated,
    Ingested,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Generated => "generated",
            Origin::Ingested => "ingested",
        }
    }
}

/// One image with its hidden ground truth.
///
/// Pixels are `[C, H, W]` in `[0, 1]`. The mask is `[H, W]` with values in
/// `{0, 1}` and is all zero exactly when the label is normal.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    id: String,
    pixels: Array3<f64>,
    label: Label,
    mask: Array2<u8>,
    origin: Origin,
}

impl ImageSample {
    pub fn new(
        id: impl Into<String>,
        pixels: Array3<f64>,
        label: Label,
        mask: Array2<u8>,
        origin: Origin,
    ) -> Result<Self> {
        let id = id.into();
        let (_, h, w) = pixels.dim();
        if mask.dim() != (h, w) {
            return Err(Error::Input(format!(
                "sample {id}: mask shape {:?} does not match image {h}x{w}",
                mask.dim()
            )));
        }
        if pixels
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::Input(format!("sample {id}: pixel outside [0, 1]")));
        }
        if mask.iter().any(|&m| m > 1) {
            return Err(Error::Input(format!("sample {id}: mask is not binary")));
        }
        let defect_pixels = mask.iter().filter(|&&m| m == 1).count();
        match label {
            Label::Normal if defect_pixels > 0 => {
                return Err(Error::Input(format!(
                    "sample {id}: normal sample with nonzero mask"
                )))
            }
            Label::Anomalous if defect_pixels == 0 => {
                return Err(Error::Input(format!(
                    "sample {id}: anomalous sample with empty mask"
                )))
            }
            _ => {}
        }
        Ok(Self {
            id,
            pixels,
            label,
            mask,
            origin,
        })
    }

    /// A normal sample with an all-zero mask.
    pub fn normal(id: impl Into<String>, pixels: Array3<f64>, origin: Origin) -> Result<Self> {
        let (_, h, w) = pixels.dim();
        Self::new(id, pixels, Label::Normal, Array2::zeros((h, w)), origin)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn mask(&self) -> &Array2<u8> {
        &self.mask
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn unlabeled(&self) -> UnlabeledSample<'_> {
        UnlabeledSample {
            id: &self.id,
            pixels: &self.pixels,
        }
    }
}

/// Id and pixels of a training sample. There is no way back to the label.
#[derive(Debug, Clone, Copy)]
pub struct UnlabeledSample<'a> {
    id: &'a str,
    pixels: &'a Array3<f64>,
}

impl<'a> UnlabeledSample<'a> {
    pub fn id(&self) -> &'a str {
        self.id
    }

    pub fn pixels(&self) -> &'a Array3<f64> {
        self.pixels
    }
}

/// Label-free view of a training set; the only thing training code receives.
///
/// ```compile_fail
/// # use cddlab::datagen::TrainView;
/// fn peek(view: &TrainView<'_>) {
///     let _ = view.get(0).label();
/// }
/// ```
#[derive(Debug, Clone, Copy)]
pub struct TrainView<'a> {
    samples: &'a [ImageSample],
}

impl<'a> TrainView<'a> {
    pub fn new(samples: &'a [ImageSample]) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, index: usize) -> UnlabeledSample<'a> {
        self.samples[index].unlabeled()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = UnlabeledSample<'a>> + 'a {
        self.samples.iter().map(ImageSample::unlabeled)
    }

    pub fn ids(&self) -> Vec<&'a str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }
}
