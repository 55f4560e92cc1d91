use super::matrix::{dot, Matrix};
use super::rng::SeededRng;
use crate::error::{Error, Result};

/// Fully connected network with ReLU hidden layers and a linear output.
///
/// Parameters live in one flat vector so optimizers and gradient checks can
/// treat them uniformly. Layer `l` stores its `out × in` weights row-major,
/// followed by its `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by [`MlpNet::forward_cached`] for a backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    acts: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("at least the input is cached")
    }

    pub fn into_output(mut self) -> Matrix {
        self.acts.pop().expect("at least the input is cached")
    }
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

fn validate_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::InvalidDimension(
            "a network needs at least input and output widths".into(),
        ));
    }
    if let Some(pos) = widths.iter().position(|&w| w == 0) {
        return Err(Error::InvalidDimension(format!("layer {pos} has width 0")));
    }
    Ok(())
}

impl MlpNet {
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        validate_widths(widths)?;
        Ok(MlpNet {
            widths: widths.to_vec(),
            params: vec![0.0; param_count(widths)],
        })
    }

    pub fn from_params(widths: &[usize], params: Vec<f64>) -> Result<Self> {
        validate_widths(widths)?;
        let expected = param_count(widths);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "network parameter count",
                expected,
                found: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(MlpNet {
            widths: widths.to_vec(),
            params,
        })
    }

    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn init_uniform(widths: &[usize], rng: &mut SeededRng) -> Result<Self> {
        let mut net = MlpNet::zeros(widths)?;
        for l in 0..net.num_layers() {
            let bound = 1.0 / (net.widths[l] as f64).sqrt();
            let (w, b) = net.layer_mut(l);
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = bound * (2.0 * rng.uniform() - 1.0);
            }
        }
        Ok(net)
    }

    /// Gaussian weights with standard deviation `1/√fan_in` and zero biases.
    pub fn init_gaussian(widths: &[usize], rng: &mut SeededRng) -> Result<Self> {
        let mut net = MlpNet::zeros(widths)?;
        for l in 0..net.num_layers() {
            let sd = 1.0 / (net.widths[l] as f64).sqrt();
            let (w, _) = net.layer_mut(l);
            for v in w.iter_mut() {
                *v = sd * rng.normal();
            }
        }
        Ok(net)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                context: "network parameter count",
                expected: self.params.len(),
                found: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn layer_offset(&self, l: usize) -> usize {
        param_count(&self.widths[..=l])
    }

    /// Weights (`out × in`, row-major) and biases of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
        let off = self.layer_offset(l);
        let (w, rest) = self.params[off..].split_at(fan_out * fan_in);
        (w, &rest[..fan_out])
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
        let off = self.layer_offset(l);
        let (w, rest) = self.params[off..].split_at_mut(fan_out * fan_in);
        (w, &mut rest[..fan_out])
    }

    /// Output-layer biases.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let last = self.num_layers() - 1;
        self.layer_mut(last).1
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let mut a = x.to_vec();
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let fan_in = self.widths[l];
            let hidden = l + 1 < self.num_layers();
            a = b
                .iter()
                .enumerate()
                .map(|(o, bo)| {
                    let z = bo + dot(&w[o * fan_in..(o + 1) * fan_in], &a);
                    if hidden {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
        }
        Ok(a)
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.into_output())
    }

    /// Batched forward pass keeping every layer's activations.
    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                found: x.cols(),
            });
        }
        let n = x.rows();
        let mut acts = Vec::with_capacity(self.widths.len());
        acts.push(x.clone());
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let hidden = l + 1 < self.num_layers();
            let prev = acts.last().unwrap();
            let mut out = Matrix::zeros(n, fan_out);
            for s in 0..n {
                let a = prev.row(s);
                for (o, z) in out.row_mut(s).iter_mut().enumerate() {
                    let v = b[o] + dot(&w[o * fan_in..(o + 1) * fan_in], a);
                    *z = if hidden { v.max(0.0) } else { v };
                }
            }
            acts.push(out);
        }
        Ok(ForwardCache { acts })
    }

    /// Parameter gradients for the given per-sample output gradients, summed
    /// over samples in ascending index order.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<Vec<f64>> {
        self.backprop(cache, upstream, false).map(|(g, _)| g)
    }

    /// Like [`backward`](Self::backward), also returning the gradient with
    /// respect to the network input.
    pub fn backward_with_input(
        &self,
        cache: &ForwardCache,
        upstream: &Matrix,
    ) -> Result<(Vec<f64>, Matrix)> {
        self.backprop(cache, upstream, true)
            .map(|(g, dx)| (g, dx.expect("input gradient requested")))
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        upstream: &Matrix,
        want_input: bool,
    ) -> Result<(Vec<f64>, Option<Matrix>)> {
        let out = cache.output();
        if upstream.shape() != out.shape() {
            return Err(Error::DimensionMismatch {
                context: "upstream gradient width",
                expected: out.cols(),
                found: upstream.cols(),
            });
        }
        if cache.acts.len() != self.widths.len() {
            return Err(Error::InvalidDimension("forward cache does not match network".into()));
        }
        let n = upstream.rows();
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = upstream.clone();
        let mut input_grad = None;
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let off = self.layer_offset(l);
            let prev = &cache.acts[l];
            {
                let (gw, gb) = grads[off..off + fan_out * fan_in + fan_out].split_at_mut(fan_out * fan_in);
                for s in 0..n {
                    let a = prev.row(s);
                    for (o, &d) in delta.row(s).iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        for (g, &ai) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(a) {
                            *g += d * ai;
                        }
                    }
                }
            }
            if l == 0 && !want_input {
                break;
            }
            let (w, _) = self.layer(l);
            let mut next = Matrix::zeros(n, fan_in);
            for s in 0..n {
                let dst = next.row_mut(s);
                for (o, &d) in delta.row(s).iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (t, &wi) in dst.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *t += d * wi;
                    }
                }
                if l > 0 {
                    // ReLU mask: post-activation is positive iff pre-activation was
                    for (t, &ai) in dst.iter_mut().zip(prev.row(s)) {
                        if ai <= 0.0 {
                            *t = 0.0;
                        }
                    }
                }
            }
            if l == 0 {
                input_grad = Some(next);
            } else {
                delta = next;
            }
        }
        Ok((grads, input_grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::grad_check;

    #[test]
    fn zero_net_outputs_zero() {
        let net = MlpNet::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -4.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let net = MlpNet::from_params(&[2, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0]).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn forward_matches_hand_evaluation() {
        let net = MlpNet::init_uniform(&[2, 4, 2], &mut SeededRng::new(3)).unwrap();
        let x = [1.0, 1.0];
        // hand evaluation straight from the parameter layout
        let p = net.params();
        let (w1, b1) = (&p[0..8], &p[8..12]);
        let (w2, b2) = (&p[12..20], &p[20..22]);
        let h: Vec<f64> = (0..4)
            .map(|o| (w1[2 * o] * x[0] + w1[2 * o + 1] * x[1] + b1[o]).max(0.0))
            .collect();
        let expect: Vec<f64> = (0..2)
            .map(|o| (0..4).map(|i| w2[4 * o + i] * h[i]).sum::<f64>() + b2[o])
            .collect();
        let got = net.forward(&x).unwrap();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-15);
        }
        let batch = net
            .forward_batch(&Matrix::from_rows(&[x]).unwrap())
            .unwrap();
        assert_eq!(batch.row(0), got.as_slice());
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = MlpNet::zeros(&[3, 2]).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = MlpNet::init_uniform(&[3, 4, 2], &mut SeededRng::new(1)).unwrap();
        let x = Matrix::from_rows(&[[0.5, -1.0, 2.0]]).unwrap();
        let cache = net.forward_cached(&x).unwrap();
        let g = net.backward(&cache, &Matrix::zeros(1, 2)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_gradient_is_outer_product() {
        let net = MlpNet::init_uniform(&[3, 2], &mut SeededRng::new(2)).unwrap();
        let x = [0.5, -1.0, 2.0];
        let g = [1.5, -0.25];
        let cache = net.forward_cached(&Matrix::from_rows(&[x]).unwrap()).unwrap();
        let grads = net.backward(&cache, &Matrix::from_rows(&[g]).unwrap()).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(grads[o * 3 + i], g[o] * x[i]);
            }
            assert_eq!(grads[6 + o], g[o]);
        }
    }

    fn sum_of_outputs(net: &MlpNet, x: &Matrix) -> f64 {
        net.forward_batch(x).unwrap().as_slice().iter().sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SeededRng::new(3);
        let net = MlpNet::init_uniform(&[2, 4, 2], &mut rng).unwrap();
        let x = Matrix::from_rows(&[[1.0, 1.0], [0.3, -0.7], [-1.2, 0.4]]).unwrap();
        let cache = net.forward_cached(&x).unwrap();
        let ones = Matrix::from_vec(3, 2, vec![1.0; 6]).unwrap();
        let analytic = net.backward(&cache, &ones).unwrap();
        let params = net.params().to_vec();
        let err = grad_check(
            |p| {
                let n = MlpNet::from_params(&[2, 4, 2], p.to_vec()).unwrap();
                sum_of_outputs(&n, &x)
            },
            &analytic,
            &params,
            1e-5,
            0,
        );
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = MlpNet::init_uniform(&[3, 5, 5, 2], &mut SeededRng::new(8)).unwrap();
        let x = vec![0.2, -0.4, 0.9];
        let xm = Matrix::from_rows(std::slice::from_ref(&x)).unwrap();
        let cache = net.forward_cached(&xm).unwrap();
        let up = Matrix::from_rows(&[[0.7, -1.3]]).unwrap();
        let (_, dx) = net.backward_with_input(&cache, &up).unwrap();
        let err = grad_check(
            |xi| {
                let o = net.forward(xi).unwrap();
                0.7 * o[0] - 1.3 * o[1]
            },
            dx.row(0),
            &x,
            1e-6,
            0,
        );
        assert!(err < 1e-6, "input grad error {err}");
    }
}
