use super::Params;

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    pub fn step(&mut self, params: &mut Params, grad: &Params) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = self.lr * bc2.sqrt() / bc1;
        for (((p, g), m), v) in params
            .values_mut()
            .iter_mut()
            .zip(grad.values())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= step * *m / (v.sqrt() + self.eps * bc2.sqrt());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelConfig, StudentArch};

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let arch = StudentArch::new(&ModelConfig::default()).unwrap();
        let mut p = arch.init_params(0);
        let start = p.clone();
        let mut g = p.zeros_like();
        g.values_mut()[0] = 3.0;
        g.values_mut()[1] = -0.5;
        let mut adam = Adam::new(p.len(), 0.005);
        adam.step(&mut p, &g);
        assert!((start.values()[0] - p.values()[0] - 0.005).abs() < 1e-9);
        assert!((p.values()[1] - start.values()[1] - 0.005).abs() < 1e-9);
        assert_eq!(p.values()[2], start.values()[2]);
    }
}
