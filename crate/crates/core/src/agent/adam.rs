use ndarray::Zip;

use super::mlp::{Mlp, MlpGrads};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adaptive-moment optimizer state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub step: u64,
    pub m: MlpGrads,
    pub v: MlpGrads,
}

impl Adam {
    pub fn new(mlp: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            step: 0,
            m: MlpGrads::zeros_like(mlp),
            v: MlpGrads::zeros_like(mlp),
        }
    }

    pub fn apply(&mut self, mlp: &mut Mlp, grads: &MlpGrads) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let lr = self.lr;
        for (i, layer) in mlp.layers_mut().iter_mut().enumerate() {
            Zip::from(&mut layer.w)
                .and(&mut self.m.dw[i])
                .and(&mut self.v.dw[i])
                .and(&grads.dw[i])
                .for_each(|p, m, v, &g| update(p, m, v, g, lr, c1, c2));
            Zip::from(&mut layer.b)
                .and(&mut self.m.db[i])
                .and(&mut self.v.db[i])
                .and(&grads.db[i])
                .for_each(|p, m, v, &g| update(p, m, v, g, lr, c1, c2));
        }
    }
}

#[inline]
fn update(p: &mut f64, m: &mut f64, v: &mut f64, g: f64, lr: f64, c1: f64, c2: f64) {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
}

/// Adam for a single scalar parameter (the log-temperature).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarAdam {
    pub lr: f64,
    pub step: u64,
    pub m: f64,
    pub v: f64,
}

impl ScalarAdam {
    pub fn new(lr: f64) -> Self {
        Self { lr, step: 0, m: 0.0, v: 0.0 }
    }

    pub fn apply(&mut self, p: &mut f64, g: f64) {
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        update(p, &mut self.m, &mut self.v, g, self.lr, c1, c2);
    }
}
