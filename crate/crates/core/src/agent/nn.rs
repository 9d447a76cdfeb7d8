//! Dense layers and a tanh multilayer perceptron with a hand-written
//! backward pass.

use rand::Rng;

use crate::Scalar;

/// Fully connected layer. `weight` is `out x inp`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub inp: usize,
    pub out: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(inp: usize, out: usize) -> Self {
        Self {
            inp,
            out,
            weight: vec![T::zero(); inp * out],
            bias: vec![T::zero(); out],
        }
    }

    /// Uniform in `±scale/sqrt(inp)` for weights and biases alike.
    pub fn init<R: Rng>(inp: usize, out: usize, scale: f64, rng: &mut R) -> Self {
        let bound = scale / (inp as f64).sqrt();
        let mut draw = || T::from_f64_lossy(rng.gen_range(-bound..=bound));
        let weight = (0..inp * out).map(|_| draw()).collect();
        let bias = (0..out).map(|_| draw()).collect();
        Self {
            inp,
            out,
            weight,
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[T], y: &mut Vec<T>) {
        debug_assert_eq!(x.len(), self.inp);
        y.clear();
        for o in 0..self.out {
            let row = &self.weight[o * self.inp..(o + 1) * self.inp];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += *w * *v;
            }
            y.push(acc);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

/// Per-layer inputs kept from a forward pass; the last entry is the output.
#[derive(Debug, Clone, Default)]
pub struct MlpCache<T> {
    pub acts: Vec<Vec<T>>,
}

impl<T> MlpCache<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl<T: Scalar> Mlp<T> {
    /// `dims = [inp, h1, ..., out]`; the final layer is scaled by `out_scale`.
    pub fn init<R: Rng>(dims: &[usize], out_scale: f64, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let scale = if i + 1 == n { out_scale } else { 1.0 };
                Linear::init(dims[i], dims[i + 1], scale, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.inp, l.out))
                .collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].inp];
        d.extend(self.layers.iter().map(|l| l.out));
        d
    }

    /// Parameter count implied by the layer widths alone.
    pub fn formula_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut cache = MlpCache::default();
        self.forward_cached(x, &mut cache);
        cache.acts.pop().unwrap_or_default()
    }

    pub fn forward_cached(&self, x: &[T], cache: &mut MlpCache<T>) {
        cache.acts.clear();
        cache.acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = Vec::with_capacity(layer.out);
            layer.forward(&cache.acts[i], &mut y);
            if i != last {
                for v in &mut y {
                    *v = v.tanh();
                }
            }
            cache.acts.push(y);
        }
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`.
    pub fn backward(&self, cache: &MlpCache<T>, d_out: &[T], grads: &mut Mlp<T>) {
        let mut delta = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let g = &mut grads.layers[i];
            let x = &cache.acts[i];
            for o in 0..layer.out {
                let d = delta[o];
                g.bias[o] += d;
                let row = &mut g.weight[o * layer.inp..(o + 1) * layer.inp];
                for (gw, xv) in row.iter_mut().zip(x) {
                    *gw += d * *xv;
                }
            }
            if i == 0 {
                break;
            }
            // x is the tanh output of the previous layer.
            let mut prev = vec![T::zero(); layer.inp];
            for o in 0..layer.out {
                let d = delta[o];
                let row = &layer.weight[o * layer.inp..(o + 1) * layer.inp];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * *w;
                }
            }
            for (p, a) in prev.iter_mut().zip(x) {
                *p *= T::one() - *a * *a;
            }
            delta = prev;
        }
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect();
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    inp: l.inp,
                    out: l.out,
                    weight: conv(&l.weight),
                    bias: conv(&l.bias),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn formula_matches_allocation() {
        let mut rng = seeded(1);
        let net: Mlp<f32> = Mlp::init(&[10, 7, 5, 3], 1.0, &mut rng);
        assert_eq!(net.param_count(), Mlp::<f32>::formula_count(&[10, 7, 5, 3]));
        assert_eq!(net.dims(), vec![10, 7, 5, 3]);
    }

    #[test]
    fn linear_forward_by_hand() {
        let l = Linear {
            inp: 2,
            out: 2,
            weight: vec![1.0, 2.0, -1.0, 0.5],
            bias: vec![0.5, 0.0],
        };
        let mut y = Vec::new();
        l.forward(&[3.0f64, 4.0], &mut y);
        assert_eq!(y, vec![11.5, -1.0]);
    }

    #[test]
    fn backward_matches_finite_difference() {
        let mut rng = seeded(9);
        let net: Mlp<f64> = Mlp::init(&[3, 4, 2], 1.0, &mut rng);
        let x = [0.3, -0.2, 0.9];
        // loss = sum(out * c)
        let c = [0.7, -1.3];
        let loss = |n: &Mlp<f64>| n.forward(&x).iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
        let mut cache = MlpCache::default();
        net.forward_cached(&x, &mut cache);
        let mut grads = net.zeros_like();
        net.backward(&cache, &c, &mut grads);
        let h = 1e-6;
        for (li, layer) in net.layers.iter().enumerate() {
            for k in 0..layer.weight.len() {
                let mut p = net.clone();
                p.layers[li].weight[k] += h;
                let mut m = net.clone();
                m.layers[li].weight[k] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                assert!((fd - grads.layers[li].weight[k]).abs() < 1e-8);
            }
        }
    }
}
