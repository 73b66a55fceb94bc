//! Small dense networks for force fields and velocity predictors.

use crate::error::{Error, Result};
use crate::net::tape::{NodeId, Tape};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// Smooth nonlinearity tag. Trajectory gradients require a C^1 force field,
/// so only `tanh` is offered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

/// Architecture description.
///
/// When `time_features = Some(k)`, the network consumes
/// `[x, sin(2^0 t), cos(2^0 t), ..., sin(2^{k-1} t), cos(2^{k-1} t), t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub time_features: Option<usize>,
    pub activation: Activation,
}

impl MlpConfig {
    /// Time-conditioned network with the default six Fourier frequencies.
    pub fn time_conditioned(dim: usize, hidden: Vec<usize>) -> Self {
        MlpConfig {
            input_dim: dim,
            hidden,
            output_dim: dim,
            time_features: Some(6),
            activation: Activation::Tanh,
        }
    }

    /// Time-independent `R^d -> R^d` network (force fields).
    pub fn autonomous(dim: usize, hidden: Vec<usize>) -> Self {
        MlpConfig {
            input_dim: dim,
            hidden,
            output_dim: dim,
            time_features: None,
            activation: Activation::Tanh,
        }
    }

    pub fn embed_len(&self) -> usize {
        self.time_features.map_or(0, |k| 2 * k + 1)
    }

    fn first_layer_inputs(&self) -> usize {
        self.input_dim + self.embed_len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Multilayer perceptron with linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    config: MlpConfig,
    layers: Vec<Layer>,
}

/// Tape handles for one binding of the network parameters.
pub struct MlpBinding {
    weight_ids: Vec<NodeId>,
    bias_ids: Vec<NodeId>,
}

impl Mlp {
    /// Xavier-uniform hidden layers, zero-initialized output layer, so a
    /// fresh network is identically zero.
    pub fn new(config: MlpConfig, rng: &mut Rng) -> Self {
        let mut sizes = vec![config.first_layer_inputs()];
        sizes.extend(&config.hidden);
        sizes.push(config.output_dim);

        let n_layers = sizes.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let (cols, rows) = (sizes[l], sizes[l + 1]);
                let weights = if l + 1 == n_layers {
                    vec![0.0; rows * cols]
                } else {
                    let bound = (6.0 / (cols + rows) as f64).sqrt();
                    (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect()
                };
                Layer { rows, cols, weights, bias: vec![0.0; rows] }
            })
            .collect();
        Mlp { config, layers }
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn from_layers(config: MlpConfig, layers: Vec<Layer>) -> Result<Self> {
        let mut expected = config.first_layer_inputs();
        if layers.is_empty() {
            return Err(Error::invalid("network must have at least one layer"));
        }
        for layer in &layers {
            if layer.cols != expected
                || layer.weights.len() != layer.rows * layer.cols
                || layer.bias.len() != layer.rows
            {
                return Err(Error::invalid("layer shapes are inconsistent"));
            }
            expected = layer.rows;
        }
        if expected != config.output_dim {
            return Err(Error::invalid("last layer does not match output_dim"));
        }
        Ok(Mlp { config, layers })
    }

    /// `Σ (fan_in + 1) * fan_out`.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| (l.cols + 1) * l.rows).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        Error::check_dim(self.param_count(), params.len())?;
        let mut off = 0;
        for l in &mut self.layers {
            l.weights.copy_from_slice(&params[off..off + l.rows * l.cols]);
            off += l.rows * l.cols;
            l.bias.copy_from_slice(&params[off..off + l.rows]);
            off += l.rows;
        }
        Ok(())
    }

    fn time_embedding(&self, t: f64, out: &mut Vec<f64>) {
        if let Some(k) = self.config.time_features {
            for j in 0..k {
                let freq = (1u64 << j) as f64;
                out.push((freq * t).sin());
                out.push((freq * t).cos());
            }
            out.push(t);
        }
    }

    /// Plain forward pass. `t` must be supplied iff the network is
    /// time-conditioned. The accumulation order (row dot product, then bias)
    /// matches the taped forward bit-for-bit.
    pub fn forward(&self, x: &[f64], t: Option<f64>) -> Result<Vec<f64>> {
        Error::check_dim(self.config.input_dim, x.len())?;
        match (self.config.time_features, t) {
            (Some(_), None) => return Err(Error::invalid("time-conditioned network needs t")),
            (None, Some(_)) => return Err(Error::invalid("network is not time-conditioned")),
            _ => {}
        }
        let mut input = Vec::with_capacity(self.config.first_layer_inputs());
        input.extend_from_slice(x);
        if let Some(t) = t {
            self.time_embedding(t, &mut input);
        }

        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.rows);
            for r in 0..layer.rows {
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                let acc: f64 = row.iter().zip(&input).map(|(w, v)| w * v).sum();
                out.push(acc + layer.bias[r]);
            }
            if i + 1 < n {
                for v in &mut out {
                    *v = v.tanh();
                }
            }
            input = out;
        }
        Ok(input)
    }

    /// Register the current parameters as tape leaves.
    pub fn bind(&self, tape: &mut Tape) -> MlpBinding {
        let mut weight_ids = Vec::with_capacity(self.layers.len());
        let mut bias_ids = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            weight_ids.push(tape.leaf(&l.weights));
            bias_ids.push(tape.leaf(&l.bias));
        }
        MlpBinding { weight_ids, bias_ids }
    }

    /// Forward pass recorded on the tape, differentiable with respect to the
    /// bound parameters, the input node, and the time node.
    pub fn forward_taped(
        &self,
        tape: &mut Tape,
        binding: &MlpBinding,
        x: NodeId,
        t: Option<NodeId>,
    ) -> NodeId {
        let mut input = x;
        match (self.config.time_features, t) {
            (Some(k), Some(t_id)) => {
                for j in 0..k {
                    let freq = (1u64 << j) as f64;
                    let scaled = tape.scale(t_id, freq);
                    let s = tape.sin(scaled);
                    let c = tape.cos(scaled);
                    input = tape.concat(input, s);
                    input = tape.concat(input, c);
                }
                input = tape.concat(input, t_id);
            }
            (None, None) => {}
            _ => panic!("time conditioning mismatch between network and call"),
        }

        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let mv = tape.matvec(binding.weight_ids[i], input, layer.rows, layer.cols);
            let z = tape.add(mv, binding.bias_ids[i]);
            input = if i + 1 < n { tape.tanh(z) } else { z };
        }
        input
    }

    /// Collect the adjoints of one binding in `params_flat` order.
    pub fn grad_flat(&self, binding: &MlpBinding, grads: &crate::net::tape::Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (i, _) in self.layers.iter().enumerate() {
            out.extend_from_slice(grads.wrt(binding.weight_ids[i]));
            out.extend_from_slice(grads.wrt(binding.bias_ids[i]));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_initialized_output_layer_gives_zero() {
        let mut rng = Rng::new(3);
        let net = Mlp::new(MlpConfig::time_conditioned(2, vec![16, 16]), &mut rng);
        for (x, t) in [([0.0, 0.0], 0.0), ([1.5, -0.5], 0.7), ([-3.0, 2.0], 2.9)] {
            assert_eq!(net.forward(&x, Some(t)).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn single_linear_layer_is_matrix_product() {
        let config = MlpConfig::autonomous(2, vec![]);
        let layers = vec![Layer {
            rows: 2,
            cols: 2,
            weights: vec![1.0, 2.0, 3.0, 4.0],
            bias: vec![0.0, 0.0],
        }];
        let net = Mlp::from_layers(config, layers).unwrap();
        assert_eq!(net.forward(&[5.0, 6.0], None).unwrap(), vec![17.0, 39.0]);
    }

    #[test]
    fn time_conditioning_mismatch_is_rejected() {
        let mut rng = Rng::new(2);
        let conditioned = Mlp::new(MlpConfig::time_conditioned(1, vec![4]), &mut rng);
        assert!(conditioned.forward(&[0.1], None).is_err());
        let autonomous = Mlp::new(MlpConfig::autonomous(1, vec![4]), &mut rng);
        assert!(autonomous.forward(&[0.1], Some(0.5)).is_err());
        assert!(autonomous.forward(&[0.1, 0.2], None).is_err());
    }

    #[test]
    fn param_count_formula() {
        let mut rng = Rng::new(1);
        let net = Mlp::new(MlpConfig::time_conditioned(2, vec![8, 4]), &mut rng);
        // input 2 + 13 embed = 15 -> 8 -> 4 -> 2
        assert_eq!(net.param_count(), (15 + 1) * 8 + (8 + 1) * 4 + (4 + 1) * 2);
        assert_eq!(net.params_flat().len(), net.param_count());
    }

    #[test]
    fn taped_forward_matches_plain_bitwise() {
        let mut rng = Rng::new(17);
        let mut net = Mlp::new(MlpConfig::time_conditioned(2, vec![8]), &mut rng);
        // Randomize the output layer so the check is non-trivial.
        let mut params = net.params_flat();
        for p in &mut params {
            if *p == 0.0 {
                *p = rng.uniform(-0.5, 0.5);
            }
        }
        net.set_params_flat(&params).unwrap();

        let x = [0.3, -1.2];
        let t = 0.45;
        let plain = net.forward(&x, Some(t)).unwrap();

        let mut tape = Tape::new();
        let binding = net.bind(&mut tape);
        let x_id = tape.leaf(&x);
        let t_id = tape.leaf_scalar(t);
        let out = net.forward_taped(&mut tape, &binding, x_id, Some(t_id));
        assert_eq!(tape.value(out), plain.as_slice());
        assert!(tape.replay_check());
    }

    #[test]
    fn directional_derivative_matches_finite_differences() {
        let mut rng = Rng::new(23);
        let mut net = Mlp::new(MlpConfig::time_conditioned(2, vec![12, 12]), &mut rng);
        let mut params = net.params_flat();
        for p in &mut params {
            if *p == 0.0 {
                *p = rng.uniform(-0.8, 0.8);
            }
        }
        net.set_params_flat(&params).unwrap();

        let x = [0.7, -0.4];
        let t = 0.9;
        let dir: Vec<f64> = (0..net.param_count()).map(|_| rng.normal()).collect();

        // Gradient of a scalar probe <out, u> with respect to the parameters.
        let u = [0.6, -1.1];
        let mut tape = Tape::new();
        let binding = net.bind(&mut tape);
        let x_id = tape.leaf(&x);
        let t_id = tape.leaf_scalar(t);
        let out = net.forward_taped(&mut tape, &binding, x_id, Some(t_id));
        let u_id = tape.leaf(&u);
        let probe = tape.dot(out, u_id);
        let grads = tape.backward(probe);
        let grad = net.grad_flat(&binding, &grads);
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();

        let h = 1e-5;
        let eval = |shift: f64| {
            let mut perturbed = net.clone();
            let p: Vec<f64> = params.iter().zip(&dir).map(|(v, d)| v + shift * d).collect();
            perturbed.set_params_flat(&p).unwrap();
            let y = perturbed.forward(&x, Some(t)).unwrap();
            y.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let rel = (analytic - fd).abs() / fd.abs().max(1e-12);
        assert!(rel < 1e-4, "analytic {analytic} fd {fd} rel {rel}");
    }
}
