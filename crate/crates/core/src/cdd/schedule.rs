use crate::{Error, Result};

/// How the regularization weight toward the previous global student evolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaMode {
    /// `x^p / (x^p + (1 - x)^p)` with `x = e / E`.
    SShape,
    Linear,
    Zero,
    One,
}

impl LambdaMode {
    pub const ALL: [LambdaMode; 4] = [
        LambdaMode::SShape,
        LambdaMode::Linear,
        LambdaMode::Zero,
        LambdaMode::One,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LambdaMode::SShape => "sshape",
            LambdaMode::Linear => "linear",
            LambdaMode::Zero => "zero",
            LambdaMode::One => "one",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

/// Epoch-level schedules of the cross-domain trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct CddSchedules {
    pub epochs: usize,
    /// Cap on the high-confidence fraction.
    pub r_normal: f64,
    /// Steepness of the S-shaped regularization schedule.
    pub p: f64,
    pub sigma_noise: f64,
    /// `(phase fraction, K)` pairs covering the run in order.
    pub k_schedule: Vec<(f64, usize)>,
    pub lambda_mode: LambdaMode,
}

impl Default for CddSchedules {
    fn default() -> Self {
        Self {
            epochs: 20,
            r_normal: 0.5,
            p: 4.0,
            sigma_noise: 0.2,
            k_schedule: equal_phases(&[2, 3, 3, 2]),
            lambda_mode: LambdaMode::SShape,
        }
    }
}

/// Equal-length phases, one per listed domain count.
pub fn equal_phases(ks: &[usize]) -> Vec<(f64, usize)> {
    ks.iter().map(|&k| (1.0 / ks.len() as f64, k)).collect()
}

impl CddSchedules {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.r_normal) {
            return Err(Error::config("cdd.r_normal", "must lie in [0, 1]"));
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::config("cdd.p", "must be positive"));
        }
        if !(self.sigma_noise >= 0.0 && self.sigma_noise.is_finite()) {
            return Err(Error::config("cdd.sigma_noise", "must be nonnegative"));
        }
        if self.k_schedule.is_empty() {
            return Err(Error::config("cdd.k_schedule", "needs at least one phase"));
        }
        if self
            .k_schedule
            .iter()
            .any(|&(f, k)| k == 0 || f.is_nan() || f <= 0.0)
        {
            return Err(Error::config(
                "cdd.k_schedule",
                "phases need K >= 1 and a positive fraction",
            ));
        }
        let total: f64 = self.k_schedule.iter().map(|p| p.0).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "cdd.k_schedule",
                format!("phase fractions sum to {total}, not 1"),
            ));
        }
        Ok(())
    }

    pub fn r(&self, epoch: usize) -> f64 {
        r_schedule(epoch, self.epochs, self.r_normal)
    }

    pub fn lambda(&self, epoch: usize) -> f64 {
        match self.lambda_mode {
            LambdaMode::SShape => lambda_schedule(epoch, self.epochs, self.p),
            LambdaMode::Linear => epoch as f64 / self.epochs as f64,
            LambdaMode::Zero => 0.0,
            LambdaMode::One => 1.0,
        }
    }

    pub fn k(&self, epoch: usize) -> usize {
        k_for_epoch(&self.k_schedule, epoch, self.epochs)
    }
}

/// High-confidence fraction `min(e / E, r_normal)`.
pub fn r_schedule(epoch: usize, epochs: usize, r_normal: f64) -> f64 {
    (epoch as f64 / epochs as f64).min(r_normal)
}

/// S-shaped weight `x^p / (x^p + (1 - x)^p)`, `x = e / E`.
pub fn lambda_schedule(epoch: usize, epochs: usize, p: f64) -> f64 {
    let x = epoch as f64 / epochs as f64;
    let (a, b) = (x.powf(p), (1.0 - x).powf(p));
    a / (a + b)
}

/// Domain count of `epoch`. Phase `j` ends before epoch `ceil(E * F_j)`, where
/// `F_j` is the cumulative fraction through phase `j`.
pub fn k_for_epoch(k_schedule: &[(f64, usize)], epoch: usize, epochs: usize) -> usize {
    let mut cumulative = 0.0;
    for &(fraction, k) in k_schedule {
        cumulative += fraction;
        // Guard against 0.1 + 0.2 style drift pushing an exact boundary up by one.
        let end = (epochs as f64 * cumulative - 1e-9).ceil() as usize;
        if epoch < end {
            return k;
        }
    }
    k_schedule.last().map_or(1, |p| p.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_examples() {
        assert_eq!(r_schedule(0, 200, 0.5), 0.0);
        assert_eq!(r_schedule(100, 200, 0.5), 0.5);
        assert_eq!(r_schedule(150, 200, 0.5), 0.5);
        assert_eq!(r_schedule(50, 200, 0.5), 0.25);
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda_schedule(0, 20, 4.0), 0.0);
        assert_eq!(lambda_schedule(10, 20, 4.0), 0.5);
        assert_eq!(lambda_schedule(20, 20, 4.0), 1.0);
        assert!((lambda_schedule(5, 20, 4.0) - 1.0 / 82.0).abs() < 1e-15);
    }

    #[test]
    fn k_unrolls_over_equal_phases() {
        let s = equal_phases(&[2, 3, 3, 2]);
        let ks: Vec<usize> = (0..4).map(|e| k_for_epoch(&s, e, 4)).collect();
        assert_eq!(ks, vec![2, 3, 3, 2]);
        let ks: Vec<usize> = (0..20).map(|e| k_for_epoch(&s, e, 20)).collect();
        assert_eq!(ks, [vec![2; 5], vec![3; 10], vec![2; 5]].concat());
        // 10 epochs: boundaries ceil(2.5)=3, 5, ceil(7.5)=8.
        let ks: Vec<usize> = (0..10).map(|e| k_for_epoch(&s, e, 10)).collect();
        assert_eq!(ks, vec![2, 2, 2, 3, 3, 3, 3, 3, 2, 2]);
    }

    #[test]
    fn validation_names_fields() {
        let bad = CddSchedules {
            k_schedule: vec![(0.5, 2), (0.4, 3)],
            ..CddSchedules::default()
        };
        match bad.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "cdd.k_schedule"),
            other => panic!("{other:?}"),
        }
        let bad = CddSchedules {
            r_normal: 1.5,
            ..CddSchedules::default()
        };
        assert!(bad.validate().is_err());
        CddSchedules::default().validate().unwrap();
    }

    #[test]
    fn lambda_modes() {
        let mut s = CddSchedules {
            epochs: 4,
            ..CddSchedules::default()
        };
        assert_eq!(s.lambda(2), 0.5);
        s.lambda_mode = LambdaMode::Zero;
        assert_eq!(s.lambda(3), 0.0);
        s.lambda_mode = LambdaMode::One;
        assert_eq!(s.lambda(0), 1.0);
        s.lambda_mode = LambdaMode::Linear;
        assert_eq!(s.lambda(1), 0.25);
        assert_eq!(LambdaMode::parse("sshape"), Some(LambdaMode::SShape));
    }
}
