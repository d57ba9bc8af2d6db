use ndarray::Array3;

use super::LEVELS;
use crate::{Error, Result};

/// Three dense feature maps `[C_l, H_l, W_l]` with strictly shrinking spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<Array3<f64>>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Array3<f64>>) -> Result<Self> {
        if levels.len() != LEVELS {
            return Err(Error::Input(format!(
                "pyramid needs {LEVELS} levels, got {}",
                levels.len()
            )));
        }
        for pair in levels.windows(2) {
            let (_, h0, w0) = pair[0].dim();
            let (_, h1, w1) = pair[1].dim();
            if h1 >= h0 || w1 >= w0 {
                return Err(Error::Input(
                    "pyramid spatial sizes must strictly decrease".into(),
                ));
            }
        }
        if levels.iter().any(|l| l.iter().any(|v| !v.is_finite())) {
            return Err(Error::Input("pyramid contains non-finite values".into()));
        }
        Ok(Self { levels })
    }

    /// Skips validation; callers guarantee the level structure.
    pub(crate) fn from_levels_unchecked(levels: Vec<Array3<f64>>) -> Self {
        debug_assert_eq!(levels.len(), LEVELS);
        Self { levels }
    }

    pub fn levels(&self) -> &[Array3<f64>] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &Array3<f64> {
        &self.levels[l]
    }

    pub fn levels_mut(&mut self) -> &mut [Array3<f64>] {
        &mut self.levels
    }

    pub fn into_levels(self) -> Vec<Array3<f64>> {
        self.levels
    }

    pub fn shapes(&self) -> Vec<(usize, usize, usize)> {
        self.levels.iter().map(|l| l.dim()).collect()
    }

    pub fn same_shape(&self, other: &FeaturePyramid) -> bool {
        self.shapes() == other.shapes()
    }

    pub fn check_same_shape(&self, other: &FeaturePyramid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "pyramid shape mismatch: {:?} vs {:?}",
                self.shapes(),
                other.shapes()
            )))
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            levels: self.levels.iter().map(|l| Array3::zeros(l.dim())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.levels.iter().all(|l| l.iter().all(|v| v.is_finite()))
    }

    pub fn num_values(&self) -> usize {
        self.levels.iter().map(|l| l.len()).sum()
    }

    /// `self += scale * other`, level by level.
    pub fn add_scaled(&mut self, other: &FeaturePyramid, scale: f64) {
        for (a, b) in self.levels.iter_mut().zip(&other.levels) {
            a.scaled_add(scale, b);
        }
    }
}
