use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::seed;

/// Fully connected layer. `weights` is row-major `n_out × n_in`: the weight
/// from input `i` to output `o` is `weights[o * n_in + i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Layer<T> {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Layer<T> {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Layer { n_in, n_out, weights: vec![T::zero(); n_in * n_out], bias: vec![T::zero(); n_out] }
    }

    fn affine(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            let mut z = self.bias[o];
            for (w, &v) in row.iter().zip(x) {
                z = z + *w * v;
            }
            out.push(z);
        }
    }
}

#[inline]
fn relu<T: Real>(z: T) -> T {
    if z > T::zero() {
        z
    } else {
        T::zero()
    }
}

/// Multilayer perceptron with rectifier activations on every layer,
/// including the scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Network<T> {
    pub layers: Vec<Layer<T>>,
}

/// Pre-activations of every layer for one input, kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct Trace<T> {
    input: Vec<T>,
    pre: Vec<Vec<T>>,
}

impl<T: Real> Trace<T> {
    pub fn output(&self) -> T {
        relu(self.pre.last().expect("trace of an empty network")[0])
    }
}

impl<T: Real> Network<T> {
    /// `sizes = [n_in, hidden.., 1]`. Weights are drawn from
    /// `U(-√(6/fan_in), √(6/fan_in))`; biases start at zero.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("invalid layer sizes {sizes:?}")));
        }
        if *sizes.last().unwrap() != 1 {
            return Err(Error::invalid("network output must be scalar"));
        }
        let mut rng = seed::rng(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / w[0] as f64).sqrt();
                let mut layer = Layer::zeros(w[0], w[1]);
                for v in &mut layer.weights {
                    *v = T::lit(rng.random_range(-limit..limit));
                }
                layer
            })
            .collect();
        Ok(Network { layers })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.layers.iter().map(|l| l.n_in).collect();
        s.push(self.layers.last().map_or(0, |l| l.n_out));
        s
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Checks that consecutive layers chain and the output is scalar.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(Error::invalid(format!("layer {i} has inconsistent parameter counts")));
            }
            if i > 0 && self.layers[i - 1].n_out != l.n_in {
                return Err(Error::invalid(format!("layer {i} does not chain")));
            }
        }
        if self.layers.last().unwrap().n_out != 1 {
            return Err(Error::invalid("network output must be scalar"));
        }
        Ok(())
    }

    /// Flat parameter vector: per layer, weights (row-major) then biases.
    pub fn params(&self) -> Vec<T> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, p: &[T]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::DimensionMismatch { expected: self.n_params(), got: p.len() });
        }
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<T> {
        if x.len() != self.n_inputs() {
            return Err(Error::DimensionMismatch { expected: self.n_inputs(), got: x.len() });
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[T]) -> T {
        let mut a = x.to_vec();
        let mut z = Vec::new();
        for l in &self.layers {
            l.affine(&a, &mut z);
            a.clear();
            a.extend(z.iter().map(|&v| relu(v)));
        }
        a[0]
    }

    pub fn trace(&self, x: &[T]) -> Trace<T> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for l in &self.layers {
            let mut z = Vec::with_capacity(l.n_out);
            l.affine(&a, &mut z);
            a = z.iter().map(|&v| relu(v)).collect();
            pre.push(z);
        }
        Trace { input: x.to_vec(), pre }
    }

    /// Adds `d_out · ∂output/∂params` to `grad` (flat layout of
    /// [`Network::params`]). The rectifier derivative at zero is zero.
    pub fn backward(&self, trace: &Trace<T>, d_out: T, grad: &mut [T]) {
        if d_out == T::zero() {
            return;
        }
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let start = *acc;
                *acc += l.weights.len() + l.bias.len();
                Some(start)
            })
            .collect();
        // delta = ∂output/∂z for the current layer
        let mut delta = vec![d_out];
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let z = &trace.pre[li];
            for (d, &zv) in delta.iter_mut().zip(z) {
                if zv <= T::zero() {
                    *d = T::zero();
                }
            }
            let prev_act: Vec<T> =
                if li == 0 { trace.input.clone() } else { trace.pre[li - 1].iter().map(|&v| relu(v)).collect() };
            let off = offsets[li];
            for o in 0..l.n_out {
                let d = delta[o];
                if d == T::zero() {
                    continue;
                }
                let g = &mut grad[off + o * l.n_in..off + (o + 1) * l.n_in];
                for (gw, &a) in g.iter_mut().zip(&prev_act) {
                    *gw = *gw + d * a;
                }
                let bi = off + l.weights.len() + o;
                grad[bi] = grad[bi] + d;
            }
            if li > 0 {
                let mut next = vec![T::zero(); l.n_in];
                for o in 0..l.n_out {
                    let d = delta[o];
                    if d == T::zero() {
                        continue;
                    }
                    for (n, w) in next.iter_mut().zip(&l.weights[o * l.n_in..(o + 1) * l.n_in]) {
                        *n = *n + d * *w;
                    }
                }
                delta = next;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(w1: f64, b1: f64, w2: f64, b2: f64) -> Network<f64> {
        Network {
            layers: vec![
                Layer { n_in: 1, n_out: 1, weights: vec![w1], bias: vec![b1] },
                Layer { n_in: 1, n_out: 1, weights: vec![w2], bias: vec![b2] },
            ],
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut net = Network::<f64>::init(&[10, 32, 32, 1], 0).unwrap();
        net.set_params(&vec![0.0; net.n_params()]).unwrap();
        assert_eq!(net.forward(&[1.0; 10]).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_toy() {
        assert_eq!(toy(1.0, 0.0, 2.0, 0.0).forward(&[1.0]).unwrap(), 2.0);
        // negative first-layer pre-activation kills the signal
        assert_eq!(toy(-1.0, 0.0, 2.0, 0.0).forward(&[1.0]).unwrap(), 0.0);
        assert_eq!(toy(-1.0, 0.0, 2.0, 0.0).forward(&[-3.0]).unwrap(), 6.0);
    }

    #[test]
    fn dimension_and_shape_errors() {
        let net = Network::<f64>::init(&[3, 4, 1], 1).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { expected: 3, got: 1 })));
        assert!(Network::<f64>::init(&[3, 4, 2], 1).is_err());
        assert!(Network::<f64>::init(&[3], 1).is_err());
        assert_eq!(net.sizes(), vec![3, 4, 1]);
        assert_eq!(net.n_params(), 3 * 4 + 4 + 4 + 1);
    }

    #[test]
    fn params_round_trip_and_init_is_seeded() {
        let a = Network::<f64>::init(&[10, 32, 32, 1], 5).unwrap();
        let mut b = Network::<f64>::init(&[10, 32, 32, 1], 6).unwrap();
        assert_ne!(a, b);
        b.set_params(&a.params()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, Network::<f64>::init(&[10, 32, 32, 1], 5).unwrap());
        let limit = (6.0_f64 / 10.0).sqrt();
        assert!(a.layers[0].weights.iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn toy_gradient_by_hand() {
        // out = relu(w2 · relu(w1 x + b1) + b2); at w1=1,b1=0.5,w2=2,b2=0,x=1: h=1.5, out=3
        let net = toy(1.0, 0.5, 2.0, 0.0);
        let tr = net.trace(&[1.0]);
        assert_eq!(tr.output(), 3.0);
        let mut g = vec![0.0; 4];
        net.backward(&tr, 1.0, &mut g);
        // [dw1, db1, dw2, db2] = [w2·x, w2, h, 1]
        assert_eq!(g, vec![2.0, 2.0, 1.5, 1.0]);
    }
}
