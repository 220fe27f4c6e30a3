//! Network parameters and their initialization.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::rng::CounterRng;

/// One LSTM layer. Gate blocks are stacked in the order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// `4H x F`
    pub w_x: Array2<f64>,
    /// `4H x H`
    pub w_h: Array2<f64>,
    /// `4H`
    pub b: Array1<f64>,
}

impl LayerParams {
    pub fn hidden(&self) -> usize {
        self.w_h.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.ncols()
    }

    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: Array2::zeros((4 * hidden, input)),
            w_h: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub layers: Vec<LayerParams>,
    /// Output head weights, one per unit of the last layer.
    pub w_out: Array1<f64>,
    pub b_out: f64,
}

fn glorot(rng: &mut CounterRng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.uniform(-a, a))
}

impl LstmParams {
    /// All-zero parameters for the given input width and layer sizes.
    pub fn zeros(input_dim: usize, units: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(units.len());
        let mut fan = input_dim;
        for &h in units {
            layers.push(LayerParams::zeros(fan, h));
            fan = h;
        }
        Self {
            layers,
            w_out: Array1::zeros(fan),
            b_out: 0.0,
        }
    }

    /// Uniform Glorot weights, zero biases except the forget gate slice which is 1.
    pub fn init(input_dim: usize, units: &[usize], seed: u64) -> Self {
        let mut rng = CounterRng::new(seed);
        let mut p = Self::zeros(input_dim, units);
        for l in &mut p.layers {
            let (h, f) = (l.hidden(), l.input_dim());
            l.w_x = glorot(&mut rng, 4 * h, f, f, 4 * h);
            l.w_h = glorot(&mut rng, 4 * h, h, h, 4 * h);
            l.b.slice_mut(ndarray::s![h..2 * h]).fill(1.0);
        }
        let h = p.w_out.len();
        let a = (6.0 / (h + 1) as f64).sqrt();
        p.w_out = Array1::from_shape_simple_fn(h, || rng.uniform(-a, a));
        p
    }

    pub fn zeros_like(&self) -> Self {
        let units: Vec<usize> = self.layers.iter().map(LayerParams::hidden).collect();
        Self::zeros(self.input_dim(), &units)
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(self.w_out.len(), LayerParams::input_dim)
    }

    pub fn units(&self) -> Vec<usize> {
        self.layers.iter().map(LayerParams::hidden).collect()
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Every parameter tensor as a flat slice, in a fixed order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &self.layers {
            out.push(l.w_x.as_slice().expect("standard layout"));
            out.push(l.w_h.as_slice().expect("standard layout"));
            out.push(l.b.as_slice().expect("standard layout"));
        }
        out.push(self.w_out.as_slice().expect("standard layout"));
        out.push(std::slice::from_ref(&self.b_out));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &mut self.layers {
            out.push(l.w_x.as_slice_mut().expect("standard layout"));
            out.push(l.w_h.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.w_out.as_slice_mut().expect("standard layout"));
        out.push(std::slice::from_mut(&mut self.b_out));
        out
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// True when the tensor shapes match `input_dim` and `units`.
    pub fn has_shape(&self, input_dim: usize, units: &[usize]) -> bool {
        let z = Self::zeros(input_dim, units);
        z.layers.len() == self.layers.len()
            && z.layers.iter().zip(&self.layers).all(|(a, b)| {
                a.w_x.dim() == b.w_x.dim() && a.w_h.dim() == b.w_h.dim() && a.b.len() == b.b.len()
            })
            && z.w_out.len() == self.w_out.len()
            && self.layers.iter().all(|l| l.w_x.is_standard_layout() && l.w_h.is_standard_layout())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_units() {
        let p = LstmParams::init(34, &[100, 100, 100], 1);
        assert_eq!(p.layers[0].w_x.dim(), (400, 34));
        assert_eq!(p.layers[1].w_x.dim(), (400, 100));
        assert_eq!(p.layers[2].w_h.dim(), (400, 100));
        assert_eq!(p.layers[2].b.len(), 400);
        assert_eq!(p.w_out.len(), 100);
        assert_eq!(p.num_params(), 4 * 100 * (34 + 100 + 1) + 2 * 4 * 100 * (100 + 100 + 1) + 101);
        assert!(p.has_shape(34, &[100, 100, 100]));
        assert!(!p.has_shape(34, &[100, 100]));
    }

    #[test]
    fn init_bounds_and_forget_bias() {
        let p = LstmParams::init(34, &[100, 100, 100], 9);
        let a0 = (6.0f64 / (34.0 + 400.0)).sqrt();
        assert!(p.layers[0].w_x.iter().all(|w| w.abs() < a0));
        let a1 = (6.0f64 / (100.0 + 400.0)).sqrt();
        assert!(p.layers[1].w_h.iter().all(|w| w.abs() < a1));
        for l in &p.layers {
            for (k, &b) in l.b.iter().enumerate() {
                assert_eq!(b, if (100..200).contains(&k) { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(p.b_out, 0.0);
        assert_eq!(p, LstmParams::init(34, &[100, 100, 100], 9));
        assert_ne!(p, LstmParams::init(34, &[100, 100, 100], 10));
    }
}
