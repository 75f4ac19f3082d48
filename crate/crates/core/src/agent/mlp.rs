//! Dense feed-forward network with rectifier hidden layers, a linear output
//! layer and explicit backpropagation.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;

use crate::domain::RngStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in_dim x out_dim`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Per-layer inputs recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
}

/// Parameter-shaped buffers; used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub dw: Vec<Array2<f64>>,
    pub db: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            dw: mlp.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            db: mlp.layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (dw, db) in self.dw.iter().zip(&self.db) {
            out.extend(dw.iter());
            out.extend(db.iter());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        let mut it = values.iter().copied();
        let n: usize = self.dw.iter().map(|w| w.len()).sum::<usize>()
            + self.db.iter().map(|b| b.len()).sum::<usize>();
        if n != values.len() {
            return Err(Error::Dimension { expected: n, actual: values.len() });
        }
        for (dw, db) in self.dw.iter_mut().zip(self.db.iter_mut()) {
            dw.iter_mut().for_each(|x| *x = it.next().unwrap());
            db.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        Ok(())
    }
}

impl Mlp {
    /// `sizes = [input, hidden..., output]`. Weights and biases are drawn
    /// from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(sizes: &[usize], rng: &mut RngStream) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
                let b = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound));
                Dense { w, b }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|p| Dense {
                w: Array2::zeros((p[0], p[1])),
                b: Array1::zeros(p[1]),
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Self {
        assert!(!layers.is_empty());
        for pair in layers.windows(2) {
            assert_eq!(pair[0].out_dim(), pair[1].in_dim(), "layer shapes do not chain");
        }
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    /// `[input, hidden..., output]`
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Dense::out_dim));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters layer by layer, each as the row-major weight matrix
    /// followed by the bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                actual: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|x| *x = it.next().unwrap());
            l.b.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|x| x.is_finite()) && l.b.iter().all(|x| x.is_finite()))
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = self.layers[0].affine(x);
        if last > 0 {
            relu_inplace(&mut h);
        }
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            h = layer.affine(&h);
            if i < last {
                relu_inplace(&mut h);
            }
        }
        h
    }

    pub fn forward_cached(&self, x: Array2<f64>) -> (Array2<f64>, MlpCache) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut h = layer.affine(inputs.last().unwrap());
            if i < last {
                relu_inplace(&mut h);
                inputs.push(h);
            } else {
                return (h, MlpCache { inputs });
            }
        }
        unreachable!()
    }

    /// Backpropagates `d_out` (gradient of the loss w.r.t. the output).
    /// Parameter gradients are accumulated into `grads` when given; the
    /// gradient w.r.t. the network input is returned.
    pub fn backward(
        &self,
        cache: &MlpCache,
        d_out: &Array2<f64>,
        mut grads: Option<&mut MlpGrads>,
    ) -> Array2<f64> {
        let mut delta = d_out.clone();
        for i in (0..self.layers.len()).rev() {
            let input = &cache.inputs[i];
            if let Some(g) = grads.as_deref_mut() {
                ndarray::linalg::general_mat_mul(1.0, &input.t(), &delta, 1.0, &mut g.dw[i]);
                g.db[i] += &delta.sum_axis(Axis(0));
            }
            let mut d_in = delta.dot(&self.layers[i].w.t());
            if i > 0 {
                // rectifier mask: the input of layer i is relu output of layer i-1
                Zip::from(&mut d_in).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = d_in;
        }
        delta
    }

    /// `self <- tau * src + (1 - tau) * self`
    pub fn soft_update_from(&mut self, src: &Mlp, tau: f64) {
        for (dst, s) in self.layers.iter_mut().zip(&src.layers) {
            Zip::from(&mut dst.w).and(&s.w).for_each(|d, &v| *d = tau * v + (1.0 - tau) * *d);
            Zip::from(&mut dst.b).and(&s.b).for_each(|d, &v| *d = tau * v + (1.0 - tau) * *d);
        }
    }
}

impl Dense {
    fn affine(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.dot(&self.w);
        out += &self.b;
        out
    }
}

fn relu_inplace(h: &mut Array2<f64>) {
    h.mapv_inplace(|v| v.max(0.0));
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Squared-error loss against fixed targets; gradient oracle is central
    /// differences on the flat parameter vector.
    fn loss(mlp: &Mlp, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let out = mlp.forward(x);
        (&out - y).mapv(|d| d * d).sum() / x.nrows() as f64
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = RngStream::new(17, 0);
        for trial in 0..5 {
            let mlp = Mlp::new(&[3, 4, 2], &mut rng);
            let x = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
            let y = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
            let (out, cache) = mlp.forward_cached(x.clone());
            let d_out = (&out - &y) * (2.0 / x.nrows() as f64);
            let mut grads = MlpGrads::zeros_like(&mlp);
            mlp.backward(&cache, &d_out, Some(&mut grads));
            let analytic = grads.flat();

            let params = mlp.params_flat();
            let h = 1e-6;
            for k in 0..params.len() {
                let mut plus = mlp.clone();
                let mut p = params.clone();
                p[k] += h;
                plus.set_params_flat(&p).unwrap();
                let mut minus = mlp.clone();
                p[k] -= 2.0 * h;
                minus.set_params_flat(&p).unwrap();
                let numeric = (loss(&plus, &x, &y) - loss(&minus, &x, &y)) / (2.0 * h);
                let denom = analytic[k].abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (analytic[k] - numeric).abs() / denom < 1e-4 || (analytic[k] - numeric).abs() < 1e-9,
                    "trial {trial} param {k}: analytic {} numeric {numeric}",
                    analytic[k]
                );
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(5, 0);
        let mlp = Mlp::new(&[3, 5, 5, 1], &mut rng);
        let x = array![[0.3, -0.2, 0.9]];
        let (_, cache) = mlp.forward_cached(x.clone());
        let d_in = mlp.backward(&cache, &array![[1.0]], None);
        for j in 0..3 {
            let mut xp = x.clone();
            xp[[0, j]] += 1e-6;
            let mut xm = x.clone();
            xm[[0, j]] -= 1e-6;
            let numeric = (mlp.forward(&xp)[[0, 0]] - mlp.forward(&xm)[[0, 0]]) / 2e-6;
            assert!((numeric - d_in[[0, j]]).abs() < 1e-7);
        }
    }

    #[test]
    fn cached_and_plain_forward_agree() {
        let mut rng = RngStream::new(1, 0);
        let mlp = Mlp::new(&[4, 8, 8, 3], &mut rng);
        let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-2.0..2.0));
        let (a, _) = mlp.forward_cached(x.clone());
        assert_eq!(a, mlp.forward(&x));
    }

    #[test]
    fn flat_params_roundtrip_and_layout() {
        let mut rng = RngStream::new(2, 0);
        let mlp = Mlp::new(&[2, 3, 1], &mut rng);
        let flat = mlp.params_flat();
        assert_eq!(flat.len(), 2 * 3 + 3 + 3 + 1);
        // row-major weight layout
        assert_eq!(flat[1], mlp.layers()[0].w[[0, 1]]);
        assert_eq!(flat[3], mlp.layers()[0].w[[1, 0]]);
        let mut other = Mlp::zeros(&[2, 3, 1]);
        other.set_params_flat(&flat).unwrap();
        assert_eq!(other, mlp);
        assert!(other.set_params_flat(&flat[1..]).is_err());
    }

    #[test]
    fn soft_update_full_copy() {
        let mut rng = RngStream::new(3, 0);
        let src = Mlp::new(&[2, 4, 1], &mut rng);
        let mut dst = Mlp::new(&[2, 4, 1], &mut rng);
        dst.soft_update_from(&src, 1.0);
        assert_eq!(dst, src);
    }

    #[test]
    fn init_bounded_by_fan_in() {
        let mut rng = RngStream::new(4, 0);
        let mlp = Mlp::new(&[9, 16, 1], &mut rng);
        assert!(mlp.layers()[0].w.iter().all(|w| w.abs() <= 1.0 / 3.0));
        assert!(mlp.layers()[1].w.iter().all(|w| w.abs() <= 0.25));
    }
}
