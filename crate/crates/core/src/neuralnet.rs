//! Fully connected networks with a recorded forward pass for reverse-mode
//! differentiation.
//!
//! Parameters live in one flat vector, layer-major, weights before biases,
//! weights row-major with shape `out x in`. Every hidden layer applies the
//! network's activation; the last layer is always linear.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Softplus,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            // max(x, 0) + log1p(exp(-|x|)) never overflows.
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpNetwork {
    layer_dims: Vec<usize>,
    activation: Activation,
    seed: u64,
    params: Vec<f64>,
    #[serde(skip)]
    generation: u64,
}

impl PartialEq for MlpNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.layer_dims == other.layer_dims
            && self.activation == other.activation
            && self.seed == other.seed
            && self.params == other.params
    }
}

/// Activations recorded by a batched forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    batch: usize,
    generation: u64,
    fingerprint: usize,
    /// `values[0]` is the input; `values[k + 1]` the output of layer `k`.
    values: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn input(&self) -> &[f64] {
        &self.values[0]
    }

    pub fn output(&self) -> &[f64] {
        self.values.last().expect("tape has at least the input")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientResult {
    pub loss: f64,
    /// Gradient with respect to the flat parameter vector.
    pub grads: Vec<f64>,
    /// Gradient with respect to the input.
    pub input_grads: Vec<f64>,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// `c = alpha * a * b + beta * c` for row-major `a: m x k` (with strides),
/// `b: k x n` (with strides), `c: m x n` contiguous.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    // SAFETY: the callers pass slices whose extents cover every index reached
    // by the given shapes and strides; `c` is contiguous `m x n`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl MlpNetwork {
    /// Glorot-uniform weights and zero biases, reproducible per seed.
    pub fn init_params(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Validation("a network needs at least one layer".into()));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Validation("layer dimensions must be positive".into()));
        }
        let mut rng = rng::stream(seed);
        let mut params = Vec::with_capacity(param_count(layer_dims));
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-limit..limit));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            activation,
            seed,
            params,
            generation: 0,
        })
    }

    pub fn from_params(
        layer_dims: &[usize],
        activation: Activation,
        seed: u64,
        params: Vec<f64>,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Validation("invalid layer dimensions".into()));
        }
        check_len("network parameters", param_count(layer_dims), params.len())?;
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            activation,
            seed,
            params,
            generation: 0,
        })
    }

    /// A single linear layer `x -> W x + b`, with `weights` row-major `out x in`.
    pub fn linear(weights: &[f64], bias: &[f64]) -> Result<Self> {
        let out = bias.len();
        if out == 0 || weights.len() % out != 0 {
            return Err(Error::Validation("weights do not match the bias length".into()));
        }
        let input = weights.len() / out;
        let mut params = weights.to_vec();
        params.extend_from_slice(bias);
        Self::from_params(&[input, out], Activation::Identity, 0, params)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access. Invalidates tapes recorded earlier.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    fn layer_offset(&self, k: usize) -> usize {
        param_count(&self.layer_dims[..=k])
    }

    /// Weights of layer `k`, row-major `out x in`.
    pub fn weight(&self, k: usize) -> &[f64] {
        let off = self.layer_offset(k);
        &self.params[off..off + self.layer_dims[k] * self.layer_dims[k + 1]]
    }

    pub fn bias(&self, k: usize) -> &[f64] {
        let off = self.layer_offset(k) + self.layer_dims[k] * self.layer_dims[k + 1];
        &self.params[off..off + self.layer_dims[k + 1]]
    }

    fn fingerprint(&self) -> usize {
        self.params.as_ptr() as usize
    }

    /// Batched forward pass over `inputs`, row-major `batch x input_dim`.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Tape> {
        check_len("network input", batch * self.input_dim(), inputs.len())?;
        let layers = self.num_layers();
        let mut values = Vec::with_capacity(layers + 1);
        let mut pre = Vec::with_capacity(layers);
        values.push(inputs.to_vec());
        for k in 0..layers {
            let (din, dout) = (self.layer_dims[k], self.layer_dims[k + 1]);
            let w = self.weight(k);
            let b = self.bias(k);
            let mut z = Vec::with_capacity(batch * dout);
            for _ in 0..batch {
                z.extend_from_slice(b);
            }
            gemm(batch, din, dout, &values[k], din as isize, 1, w, 1, din as isize, 1.0, &mut z);
            let out = if k + 1 == layers {
                z.clone()
            } else {
                z.iter().map(|&x| self.activation.apply(x)).collect()
            };
            pre.push(z);
            values.push(out);
        }
        Ok(Tape {
            batch,
            generation: self.generation,
            fingerprint: self.fingerprint(),
            values,
            pre,
        })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, 1)?.output().to_vec())
    }

    /// Reverse pass. `adjoint` is the gradient of a scalar loss with respect
    /// to the recorded outputs (row-major `batch x output_dim`). Parameter
    /// gradients are added into `grad_params`; the input gradient is returned.
    pub fn backward_into(
        &self,
        tape: &Tape,
        adjoint: &[f64],
        grad_params: &mut [f64],
    ) -> Result<Vec<f64>> {
        if tape.generation != self.generation
            || tape.fingerprint != self.fingerprint()
            || tape.values.len() != self.num_layers() + 1
        {
            return Err(Error::StaleTape(
                "the tape was recorded with different parameters".into(),
            ));
        }
        let batch = tape.batch;
        check_len("output adjoint", batch * self.output_dim(), adjoint.len())?;
        check_len("parameter gradient", self.param_count(), grad_params.len())?;
        let layers = self.num_layers();
        let mut delta = adjoint.to_vec();
        for k in (0..layers).rev() {
            let (din, dout) = (self.layer_dims[k], self.layer_dims[k + 1]);
            if k + 1 != layers {
                for (d, &z) in delta.iter_mut().zip(&tape.pre[k]) {
                    *d *= self.activation.derivative(z);
                }
            }
            let off = self.layer_offset(k);
            let (gw, rest) = grad_params[off..].split_at_mut(din * dout);
            let gb = &mut rest[..dout];
            // dW += delta^T x
            gemm(dout, batch, din, &delta, 1, dout as isize, &tape.values[k], din as isize, 1, 1.0, gw);
            for row in delta.chunks_exact(dout) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            // dx = delta W
            let mut dx = vec![0.0; batch * din];
            gemm(batch, dout, din, &delta, dout as isize, 1, self.weight(k), din as isize, 1, 0.0, &mut dx);
            delta = dx;
        }
        Ok(delta)
    }

    /// Gradients of `loss(forward(input))`, where `loss` returns its value and
    /// its gradient with respect to the network output.
    pub fn backward<F>(&self, input: &[f64], loss: F) -> Result<GradientResult>
    where
        F: Fn(&[f64]) -> (f64, Vec<f64>),
    {
        let tape = self.forward_batch(input, 1)?;
        let (value, adjoint) = loss(tape.output());
        let mut grads = vec![0.0; self.param_count()];
        let input_grads = self.backward_into(&tape, &adjoint, &mut grads)?;
        Ok(GradientResult {
            loss: value,
            grads,
            input_grads,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: MlpNetwork = serde_json::from_str(s)?;
        Self::from_params(&net.layer_dims, net.activation, net.seed, net.params)
    }
}

/// Largest relative disagreement between reverse-mode gradients and central
/// differences, over every parameter and input coordinate. The denominator is
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check<F>(net: &MlpNetwork, input: &[f64], loss: F, h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if !(1e-7..=1e-4).contains(&h) {
        return Err(Error::Validation(format!("step {h} outside [1e-7, 1e-4]")));
    }
    let analytic = net.backward(input, &loss)?;
    let eval = |n: &MlpNetwork, x: &[f64]| -> Result<f64> { Ok(loss(&n.forward(x)?).0) };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for i in 0..net.param_count() {
        let orig = net.params[i];
        probe.params_mut()[i] = orig + h;
        let up = eval(&probe, input)?;
        probe.params_mut()[i] = orig - h;
        let dn = eval(&probe, input)?;
        probe.params_mut()[i] = orig;
        worst = worst.max(rel(analytic.grads[i], (up - dn) / (2.0 * h)));
    }
    let mut x = input.to_vec();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = eval(net, &x)?;
        x[i] = orig - h;
        let dn = eval(net, &x)?;
        x[i] = orig;
        worst = worst.max(rel(analytic.input_grads[i], (up - dn) / (2.0 * h)));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq_loss(target: Vec<f64>) -> impl Fn(&[f64]) -> (f64, Vec<f64>) {
        move |y: &[f64]| {
            let r: Vec<f64> = y.iter().zip(&target).map(|(a, b)| a - b).collect();
            (r.iter().map(|v| v * v).sum(), r.iter().map(|v| 2.0 * v).collect())
        }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = MlpNetwork::linear(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[0.3, -2.0]).unwrap(), vec![0.3, -2.0]);
    }

    #[test]
    fn zero_network_outputs_last_bias() {
        let mut net = MlpNetwork::init_params(&[2, 5, 3], Activation::Softplus, 1).unwrap();
        net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let n = net.param_count();
        net.params_mut()[n - 3..].copy_from_slice(&[1.0, -2.0, 0.5]);
        assert_eq!(net.forward(&[4.0, -7.0]).unwrap(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn linear_net_is_matrix_product() {
        let net = MlpNetwork::init_params(&[3, 2], Activation::Identity, 8).unwrap();
        let w = net.weight(0).to_vec();
        let mut r = rng::stream(2);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng::normal(&mut r)).collect();
            let y = net.forward(&x).unwrap();
            for o in 0..2 {
                let want: f64 = (0..3).map(|i| w[o * 3 + i] * x[i]).sum();
                assert!((y[o] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn linear_squared_error_gradient_is_closed_form() {
        let net = MlpNetwork::init_params(&[3, 2], Activation::Identity, 4).unwrap();
        let z = [0.5, -1.0, 2.0];
        let t = vec![1.0, -0.5];
        let g = net.backward(&z, sq_loss(t.clone())).unwrap();
        let y = net.forward(&z).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                let want = 2.0 * (y[o] - t[o]) * z[i];
                assert!((g.grads[o * 3 + i] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_adjoint_gives_zero_gradients() {
        let net = MlpNetwork::init_params(&[2, 4, 3], Activation::Softplus, 6).unwrap();
        let g = net.backward(&[0.1, 0.2], |_| (0.0, vec![0.0; 3])).unwrap();
        assert!(g.grads.iter().chain(&g.input_grads).all(|v| *v == 0.0));
    }

    #[test]
    fn softplus_gradients_match_finite_differences() {
        for seed in 0..10 {
            let net = MlpNetwork::init_params(&[3, 6, 5, 2], Activation::Softplus, seed).unwrap();
            let mut r = rng::stream(100 + seed);
            let x: Vec<f64> = (0..3).map(|_| rng::normal(&mut r)).collect();
            let err = finite_difference_check(&net, &x, sq_loss(vec![0.3, -0.1]), 1e-5).unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn identity_net_gradient_is_exact() {
        let net = MlpNetwork::linear(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]).unwrap();
        let err = finite_difference_check(&net, &[0.5, 0.25], |y: &[f64]| (y[0] + y[1], vec![1.0, 1.0]), 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn relu_gradients_away_from_kinks() {
        let mut checked = 0;
        let mut seed = 0;
        while checked < 10 {
            seed += 1;
            let net = MlpNetwork::init_params(&[2, 8, 2], Activation::Relu, seed).unwrap();
            let mut r = rng::stream(seed);
            let x: Vec<f64> = (0..2).map(|_| rng::normal(&mut r)).collect();
            let tape = net.forward_batch(&x, 1).unwrap();
            if tape.pre[0].iter().any(|a| a.abs() <= 1e-3) {
                continue;
            }
            let err = finite_difference_check(&net, &x, sq_loss(vec![1.0, 1.0]), 1e-5).unwrap();
            assert!(err < 1e-5, "{err}");
            checked += 1;
        }
    }

    #[test]
    fn seeds_control_initialization() {
        let a = MlpNetwork::init_params(&[4, 8, 2], Activation::Relu, 5).unwrap();
        let b = MlpNetwork::init_params(&[4, 8, 2], Activation::Relu, 5).unwrap();
        let c = MlpNetwork::init_params(&[4, 8, 2], Activation::Relu, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        assert_eq!(a.param_count(), 4 * 8 + 8 + 8 * 2 + 2);
    }

    #[test]
    fn glorot_variance() {
        let net = MlpNetwork::init_params(&[100, 100], Activation::Identity, 12).unwrap();
        let w = net.weight(0);
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let want = 2.0 / 200.0;
        assert!((var / want - 1.0).abs() < 0.2, "{var} vs {want}");
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(MlpNetwork::init_params(&[3, 0, 1], Activation::Relu, 0).is_err());
        assert!(MlpNetwork::init_params(&[3], Activation::Relu, 0).is_err());
    }

    #[test]
    fn stale_tape_is_detected() {
        let mut net = MlpNetwork::init_params(&[2, 3, 1], Activation::Softplus, 0).unwrap();
        let tape = net.forward_batch(&[0.1, 0.2], 1).unwrap();
        net.params_mut()[0] += 1.0;
        let mut g = vec![0.0; net.param_count()];
        assert!(matches!(net.backward_into(&tape, &[1.0], &mut g), Err(Error::StaleTape(_))));
    }

    #[test]
    fn softplus_is_overflow_safe() {
        assert_eq!(Activation::Softplus.apply(1000.0), 1000.0);
        assert!(Activation::Softplus.apply(-1000.0) >= 0.0);
        assert!((Activation::Softplus.apply(0.0) - 2f64.ln()).abs() < 1e-16);
    }

    #[test]
    fn batched_forward_matches_single() {
        let net = MlpNetwork::init_params(&[2, 7, 3], Activation::Softplus, 3).unwrap();
        let xs = [0.1, 0.2, -0.3, 0.4, 1.5, -2.5];
        let tape = net.forward_batch(&xs, 3).unwrap();
        for b in 0..3 {
            let y = net.forward(&xs[b * 2..b * 2 + 2]).unwrap();
            for o in 0..3 {
                assert!((tape.output()[b * 3 + o] - y[o]).abs() < 1e-14);
            }
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn json_roundtrip_is_bit_exact(seed in any::<u64>()) {
                let net = MlpNetwork::init_params(&[3, 5, 2], Activation::Softplus, seed).unwrap();
                let back = MlpNetwork::from_json(&net.to_json().unwrap()).unwrap();
                prop_assert_eq!(net.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
                                back.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>());
                prop_assert_eq!(net, back);
            }
        }
    }
}
