use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected network with tanh hidden activations and a linear output.
///
/// Parameters live in a caller-owned flat slice: for every layer the weight
/// matrix (row-major, `out × in`) followed by the bias vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

/// Layer activations recorded by a forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    // activations[0] is the input; activations[l + 1] is layer l's output.
    activations: Vec<Array2<f64>>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }

    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("tape has an input")
    }
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        Ok(Self {
            input_dim,
            hidden,
            output_dim,
        })
    }

    /// `(fan_in, fan_out)` per layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layers()
            .iter()
            .map(|(i, o)| {
                let start = off;
                off += i * o + o;
                start
            })
            .collect()
    }

    fn layer<'a>(&self, params: &'a [f64], l: usize, off: usize) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let (fan_in, fan_out) = self.layers()[l];
        let w = ArrayView2::from_shape((fan_out, fan_in), &params[off..off + fan_in * fan_out])
            .expect("layout covers the layer");
        let b = ArrayView1::from(&params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out]);
        (w, b)
    }

    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases; the
    /// final layer's weights are multiplied by `final_scale`.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, final_scale: f64) -> Vec<f64> {
        let layers = self.layers();
        let mut out = Vec::with_capacity(self.num_params());
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let scale = if l + 1 == layers.len() { final_scale } else { 1.0 };
            out.extend((0..fan_in * fan_out).map(|_| scale * rng.random_range(-bound..bound)));
            out.extend(std::iter::repeat_n(0.0, fan_out));
        }
        out
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimMismatch {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        Ok(())
    }

    /// Batched forward pass; rows of `input` are independent samples.
    pub fn forward(&self, params: &[f64], input: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_params(params)?;
        if input.ncols() != self.input_dim {
            return Err(Error::DimMismatch {
                expected: self.input_dim,
                got: input.ncols(),
            });
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let offsets = self.offsets();
        let n_layers = offsets.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input.to_owned());
        for (l, &off) in offsets.iter().enumerate() {
            let (w, b) = self.layer(params, l, off);
            let x = &activations[l];
            let mut z = Array2::from_shape_fn((x.nrows(), w.nrows()), |(_, j)| b[j]);
            general_mat_mul(1.0, x, &w.t(), 1.0, &mut z);
            if l + 1 < n_layers {
                z.mapv_inplace(f64::tanh);
            }
            activations.push(z);
        }
        let out = activations.last().cloned().expect("at least one layer");
        Ok((out, Tape { activations }))
    }

    /// Single-sample forward pass without a tape.
    pub fn forward_vec(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        if input.len() != self.input_dim {
            return Err(Error::DimMismatch {
                expected: self.input_dim,
                got: input.len(),
            });
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let offsets = self.offsets();
        let mut x = Array1::from(input.to_vec());
        for (l, &off) in offsets.iter().enumerate() {
            let (w, b) = self.layer(params, l, off);
            let mut z = b.to_owned();
            ndarray::linalg::general_mat_vec_mul(1.0, &w, &x, 1.0, &mut z);
            if l + 1 < offsets.len() {
                z.mapv_inplace(f64::tanh);
            }
            x = z;
        }
        Ok(x.to_vec())
    }

    /// Accumulates `∂L/∂params` into `grad` given `∂L/∂output` for every row
    /// of the batch recorded on `tape`.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &Tape,
        grad_out: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_params(params)?;
        let n_layers = self.layers().len();
        if grad.len() != params.len()
            || tape.activations.len() != n_layers + 1
            || tape.activations[0].ncols() != self.input_dim
            || grad_out.dim() != tape.output().dim()
        {
            return Err(Error::TapeMismatch);
        }
        let offsets = self.offsets();
        let mut g = grad_out.to_owned();
        for l in (0..n_layers).rev() {
            if l + 1 < n_layers {
                g.zip_mut_with(&tape.activations[l + 1], |gi, &a| *gi *= 1.0 - a * a);
            }
            let (fan_in, fan_out) = self.layers()[l];
            let off = offsets[l];
            let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            let mut gw = ArrayViewMut2::from_shape((fan_out, fan_in), gw).expect("layout");
            general_mat_mul(1.0, &g.t(), &tape.activations[l], 1.0, &mut gw);
            let mut gb = ArrayViewMut1::from(gb);
            gb += &g.sum_axis(Axis(0));
            if l > 0 {
                let (w, _) = self.layer(params, l, off);
                g = g.dot(&w);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = MlpSpec::new(4, vec![8, 8], 3).unwrap();
        let params = vec![0.0; spec.num_params()];
        assert_eq!(spec.forward_vec(&params, &[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn linear_layer_is_affine() {
        let spec = MlpSpec::new(2, vec![], 2).unwrap();
        let params = vec![1.0, 2.0, 3.0, 4.0, 0.5, -0.5];
        assert_eq!(spec.forward_vec(&params, &[1.0, 1.0]).unwrap(), vec![3.5, 6.5]);
    }

    #[test]
    fn matches_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = MlpSpec::new(5, vec![7, 6], 3).unwrap();
        let params = random(spec.num_params(), &mut rng);
        let input = random(5, &mut rng);
        // scalar oracle using explicit index arithmetic
        let mut x = input.clone();
        let mut off = 0;
        let layers = spec.layers();
        for (l, &(fi, fo)) in layers.iter().enumerate() {
            let mut y = vec![0.0; fo];
            for j in 0..fo {
                let mut s = params[off + fi * fo + j];
                for i in 0..fi {
                    s += params[off + j * fi + i] * x[i];
                }
                y[j] = if l + 1 < layers.len() { s.tanh() } else { s };
            }
            off += fi * fo + fo;
            x = y;
        }
        let batched = spec
            .forward(&params, ArrayView2::from_shape((1, 5), &input).unwrap())
            .unwrap()
            .0;
        let single = spec.forward_vec(&params, &input).unwrap();
        for j in 0..3 {
            assert!((batched[[0, j]] - x[j]).abs() < 1e-12);
            assert!((single[j] - x[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        let spec = MlpSpec::new(3, vec![], 2).unwrap();
        let params = vec![0.3; spec.num_params()];
        let x = [1.0, 2.0, -1.0];
        let (_, tape) = spec.forward(&params, ArrayView2::from_shape((1, 3), &x).unwrap()).unwrap();
        let go = [0.5, -2.0];
        let mut grad = vec![0.0; spec.num_params()];
        spec.backward(&params, &tape, ArrayView2::from_shape((1, 2), &go).unwrap(), &mut grad)
            .unwrap();
        let expect = [0.5, 1.0, -0.5, -2.0, -4.0, 2.0, 0.5, -2.0];
        assert_eq!(grad, expect);
    }

    #[test]
    fn zero_output_gradient_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = MlpSpec::new(4, vec![5], 2).unwrap();
        let params = random(spec.num_params(), &mut rng);
        let x = random(8, &mut rng);
        let (_, tape) = spec.forward(&params, ArrayView2::from_shape((2, 4), &x).unwrap()).unwrap();
        let mut grad = vec![0.0; spec.num_params()];
        spec.backward(&params, &tape, Array2::zeros((2, 2)).view(), &mut grad).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = MlpSpec::new(4, vec![6, 5], 3).unwrap();
        let params = random(spec.num_params(), &mut rng);
        let x = random(12, &mut rng);
        let xv = ArrayView2::from_shape((3, 4), &x).unwrap();
        let weights = Array2::from_shape_vec((3, 3), random(9, &mut rng)).unwrap();
        let f = |p: &[f64]| -> f64 { (&spec.forward(p, xv).unwrap().0 * &weights).sum() };
        let (_, tape) = spec.forward(&params, xv).unwrap();
        let mut grad = vec![0.0; spec.num_params()];
        spec.backward(&params, &tape, weights.view(), &mut grad).unwrap();
        let h = 1e-5;
        for k in 0..spec.num_params() {
            let mut p = params.clone();
            p[k] += h;
            let up = f(&p);
            p[k] -= 2.0 * h;
            let fd = (up - f(&p)) / (2.0 * h);
            let denom = fd.abs().max(grad[k].abs()).max(1e-8);
            assert!((fd - grad[k]).abs() / denom < 1e-6, "param {k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let spec = MlpSpec::new(2, vec![3], 1).unwrap();
        let p = vec![0.0; spec.num_params()];
        assert!(matches!(spec.forward_vec(&p, &[1.0]), Err(Error::DimMismatch { .. })));
        assert!(matches!(spec.forward_vec(&p, &[1.0, f64::NAN]), Err(Error::NonFiniteInput)));
        let (_, tape) = spec.forward(&p, Array2::zeros((2, 2)).view()).unwrap();
        let mut g = vec![0.0; spec.num_params()];
        assert!(matches!(
            spec.backward(&p, &tape, Array2::zeros((3, 1)).view(), &mut g),
            Err(Error::TapeMismatch)
        ));
    }

    #[test]
    fn init_scales_final_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = MlpSpec::new(10, vec![20], 4).unwrap();
        let p = spec.init(&mut rng, 0.01);
        let first_bound = (6.0f64 / 30.0).sqrt();
        assert!(p[..200].iter().all(|w| w.abs() <= first_bound));
        let last_bound = 0.01 * (6.0f64 / 24.0).sqrt();
        assert!(p[220..300].iter().all(|w| w.abs() <= last_bound));
        assert!(p[200..220].iter().all(|&b| b == 0.0));
    }
}
