//! The Q-value approximator: a small fully-connected network with
//! rectified-linear hidden layers and a linear output head, plus hand-rolled
//! backpropagation, Adam updates and checkpoint (de)serialisation.
//!
//! Parameters flatten into a canonical order — all weight matrices
//! (layer-major, row-major), then all bias vectors (layer-major) — which is
//! what federation averages and checkpoints store.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const CHECKPOINT_MAGIC: &[u8; 8] = b"FEDCELLQ";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input has dimension {got}, network expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("action {0} out of range ({1} outputs)")]
    ActionOutOfRange(usize, usize),
    #[error("parameter set has spec {got:?}, expected {expected:?}")]
    SpecMismatch {
        got: NetworkSpec,
        expected: NetworkSpec,
    },
    #[error("parameter vector has length {got}, spec requires {expected}")]
    BadParameterCount { got: usize, expected: usize },
    #[error("checkpoint io failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint is truncated or malformed: {0}")]
    Corrupt(String),
}

/// Layer widths of the approximator. Equal specs make parameter sets
/// elementwise comparable (and averageable).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl NetworkSpec {
    /// The default architecture: hidden layers of 200, 100 and 50 units.
    pub fn standard(input_dim: usize, output_dim: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim,
            hidden_dims: vec![200, 100, 50],
            output_dim,
        }
    }

    /// (fan_in, fan_out) of every affine layer in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    /// Total number of parameters (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }

    fn all_dims(&self) -> Vec<usize> {
        let mut v = Vec::with_capacity(self.hidden_dims.len() + 2);
        v.push(self.input_dim);
        v.extend_from_slice(&self.hidden_dims);
        v.push(self.output_dim);
        v
    }

    fn from_all_dims(dims: &[usize]) -> Result<NetworkSpec, NnError> {
        if dims.len() < 2 {
            return Err(NnError::Corrupt(format!(
                "need at least input and output dims, got {}",
                dims.len()
            )));
        }
        Ok(NetworkSpec {
            input_dim: dims[0],
            hidden_dims: dims[1..dims.len() - 1].to_vec(),
            output_dim: dims[dims.len() - 1],
        })
    }
}

/// A flat, canonically ordered copy of all trainable values, tagged with
/// the spec that shapes them. The unit federation averages and checkpoints
/// persist.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    spec: NetworkSpec,
    values: Vec<f64>,
}

impl ParameterSet {
    pub fn new(spec: NetworkSpec, values: Vec<f64>) -> Result<ParameterSet, NnError> {
        if values.len() != spec.param_count() {
            return Err(NnError::BadParameterCount {
                got: values.len(),
                expected: spec.param_count(),
            });
        }
        Ok(ParameterSet { spec, values })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Checkpoint image: magic, version, layer dims, then values as
    /// little-endian 64-bit reals in canonical order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.spec.all_dims();
        let mut out =
            Vec::with_capacity(16 + dims.len() * 4 + self.values.len() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParameterSet, NnError> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NnError::BadMagic);
        }
        let version = read_u32(&mut r, "version")?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::BadVersion(version));
        }
        let n_dims = read_u32(&mut r, "dim count")? as usize;
        if !(2..=64).contains(&n_dims) {
            return Err(NnError::Corrupt(format!("implausible dim count {n_dims}")));
        }
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            dims.push(read_u32(&mut r, "layer dim")? as usize);
        }
        let spec = NetworkSpec::from_all_dims(&dims)?;
        let expected = spec.param_count();
        if r.len() != expected * 8 {
            return Err(NnError::Corrupt(format!(
                "expected {} parameter bytes, found {}",
                expected * 8,
                r.len()
            )));
        }
        let values = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
            .collect();
        ParameterSet::new(spec, values)
    }

    /// Loads a checkpoint and refuses it unless the spec matches.
    pub fn from_bytes_expecting(
        bytes: &[u8],
        expected: &NetworkSpec,
    ) -> Result<ParameterSet, NnError> {
        let params = ParameterSet::from_bytes(bytes)?;
        if params.spec() != expected {
            return Err(NnError::SpecMismatch {
                got: params.spec.clone(),
                expected: expected.clone(),
            });
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ParameterSet, NnError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        ParameterSet::from_bytes(&bytes)
    }

    /// Hex SHA-256 of the checkpoint image; stable across runs for equal
    /// parameters.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.to_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8], what: &str) -> Result<(), NnError> {
    if r.len() < buf.len() {
        return Err(NnError::Corrupt(format!("truncated while reading {what}")));
    }
    buf.copy_from_slice(&r[..buf.len()]);
    *r = &r[buf.len()..];
    Ok(())
}

fn read_u32(r: &mut &[u8], what: &str) -> Result<u32, NnError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

/// Gradient of the loss with respect to every weight and bias, shaped like
/// the network it came from.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    /// Canonical flat order, matching [`ParameterSet`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for w in &self.weights {
            out.extend(w.iter().copied());
        }
        for b in &self.biases {
            out.extend(b.iter().copied());
        }
        out
    }
}

/// The Q-network: an affine chain with rectified-linear hidden activations
/// and an identity output layer. Weight matrices are (out, in).
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

impl Network {
    /// He-style uniform fan-in initialisation, biases zero, seeded.
    pub fn init_seeded(spec: NetworkSpec, seed: u64) -> Network {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (fan_in, fan_out) in spec.layer_dims() {
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.random_range(-bound..bound)
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Network {
            spec,
            weights,
            biases,
        }
    }

    /// All-zero parameters; mostly useful in tests.
    pub fn zeros(spec: NetworkSpec) -> Network {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (fan_in, fan_out) in spec.layer_dims() {
            weights.push(Array2::zeros((fan_out, fan_in)));
            biases.push(Array1::zeros(fan_out));
        }
        Network {
            spec,
            weights,
            biases,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Direct access for tests that hand-set weights.
    pub fn layer_mut(&mut self, i: usize) -> (&mut Array2<f64>, &mut Array1<f64>) {
        (&mut self.weights[i], &mut self.biases[i])
    }

    /// Q-values for a single state.
    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>, NnError> {
        if state.len() != self.spec.input_dim {
            return Err(NnError::DimensionMismatch {
                got: state.len(),
                expected: self.spec.input_dim,
            });
        }
        let mut a = Array1::from_vec(state.to_vec());
        let last = self.n_layers() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.dot(&a) + b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(a.to_vec())
    }

    /// Q-values for a batch of states, one row per state.
    pub fn forward_batch(&self, states: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        if states.ncols() != self.spec.input_dim {
            return Err(NnError::DimensionMismatch {
                got: states.ncols(),
                expected: self.spec.input_dim,
            });
        }
        let mut a = states.to_owned();
        let last = self.n_layers() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(&w.t());
            z += b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(a)
    }

    /// Gradient of `(target - Q(state, action))^2` with respect to every
    /// parameter. Only the selected action's output contributes.
    pub fn gradient(
        &self,
        state: &[f64],
        action: usize,
        target: f64,
    ) -> Result<Gradients, NnError> {
        let states = Array2::from_shape_vec((1, state.len()), state.to_vec())
            .map_err(|_| NnError::DimensionMismatch {
                got: state.len(),
                expected: self.spec.input_dim,
            })?;
        let (_, grads) = self.batch_gradient(states.view(), &[action], &[target])?;
        Ok(grads)
    }

    /// Mean-squared-error loss and its gradient over a batch, where sample
    /// `i` contributes `(targets[i] - Q(states[i], actions[i]))^2`. Gradients
    /// are averaged over the batch. Returns the pre-update loss.
    pub fn batch_gradient(
        &self,
        states: ArrayView2<f64>,
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Gradients), NnError> {
        let batch = states.nrows();
        assert_eq!(actions.len(), batch);
        assert_eq!(targets.len(), batch);
        if states.ncols() != self.spec.input_dim {
            return Err(NnError::DimensionMismatch {
                got: states.ncols(),
                expected: self.spec.input_dim,
            });
        }
        for &a in actions {
            if a >= self.spec.output_dim {
                return Err(NnError::ActionOutOfRange(a, self.spec.output_dim));
            }
        }

        // Forward pass, caching post-activation values per layer.
        let last = self.n_layers() - 1;
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(self.n_layers() + 1);
        activations.push(states.to_owned());
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = activations[i].dot(&w.t());
            z += b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(z);
        }
        let outputs = &activations[self.n_layers()];

        // Loss and output-layer delta: d(loss)/d(q_a) = 2 (q_a - y) / batch.
        let mut loss = 0.0;
        let mut delta = Array2::<f64>::zeros(outputs.raw_dim());
        for i in 0..batch {
            let q = outputs[(i, actions[i])];
            let err = q - targets[i];
            loss += err * err;
            delta[(i, actions[i])] = 2.0 * err / batch as f64;
        }
        loss /= batch as f64;

        // Backward pass.
        let mut grad_w: Vec<Array2<f64>> = Vec::with_capacity(self.n_layers());
        let mut grad_b: Vec<Array1<f64>> = Vec::with_capacity(self.n_layers());
        for layer in (0..self.n_layers()).rev() {
            let a_prev = &activations[layer];
            grad_w.push(delta.t().dot(a_prev));
            grad_b.push(delta.sum_axis(Axis(0)));
            if layer > 0 {
                let mut next = delta.dot(&self.weights[layer]);
                // Rectifier gate: the cached activation is zero exactly
                // where the unit was clamped.
                next.zip_mut_with(&activations[layer], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = next;
            }
        }
        grad_w.reverse();
        grad_b.reverse();

        Ok((
            loss,
            Gradients {
                weights: grad_w,
                biases: grad_b,
            },
        ))
    }

    /// Copies all parameters out in canonical flat order.
    pub fn to_params(&self) -> ParameterSet {
        let mut values = Vec::with_capacity(self.spec.param_count());
        for w in &self.weights {
            values.extend(w.iter().copied());
        }
        for b in &self.biases {
            values.extend(b.iter().copied());
        }
        ParameterSet::new(self.spec.clone(), values).expect("shapes derive from spec")
    }

    /// Rebuilds a network from a canonical flat parameter set.
    pub fn from_params(params: &ParameterSet) -> Network {
        let spec = params.spec().clone();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in spec.layer_dims() {
            let count = fan_in * fan_out;
            let w = Array2::from_shape_vec(
                (fan_out, fan_in),
                params.values()[offset..offset + count].to_vec(),
            )
            .expect("length checked by ParameterSet::new");
            offset += count;
            weights.push(w);
        }
        for (_, fan_out) in spec.layer_dims() {
            let b = Array1::from_vec(params.values()[offset..offset + fan_out].to_vec());
            offset += fan_out;
            biases.push(b);
        }
        Network {
            spec,
            weights,
            biases,
        }
    }

    /// Overwrites this network's parameters in place (specs must match).
    pub fn set_params(&mut self, params: &ParameterSet) -> Result<(), NnError> {
        if params.spec() != &self.spec {
            return Err(NnError::SpecMismatch {
                got: params.spec().clone(),
                expected: self.spec.clone(),
            });
        }
        *self = Network::from_params(params);
        Ok(())
    }
}

/// Bias-corrected Adam, with moment buffers shaped like the network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl Adam {
    pub fn new(spec: &NetworkSpec, learning_rate: f64) -> Adam {
        let mut m_w = Vec::new();
        let mut v_w = Vec::new();
        let mut m_b = Vec::new();
        let mut v_b = Vec::new();
        for (fan_in, fan_out) in spec.layer_dims() {
            m_w.push(Array2::zeros((fan_out, fan_in)));
            v_w.push(Array2::zeros((fan_out, fan_in)));
            m_b.push(Array1::zeros(fan_out));
            v_b.push(Array1::zeros(fan_out));
        }
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m_w,
            v_w,
            m_b,
            v_b,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of `net` in the direction opposing `grads`.
    pub fn update(&mut self, net: &mut Network, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for layer in 0..net.n_layers() {
            update_moments(
                &mut self.m_w[layer],
                &mut self.v_w[layer],
                &grads.weights[layer],
                self.beta1,
                self.beta2,
            );
            apply_update(
                &mut net.weights[layer],
                &self.m_w[layer],
                &self.v_w[layer],
                self.learning_rate,
                bc1,
                bc2,
                self.epsilon,
            );
            update_moments_1d(
                &mut self.m_b[layer],
                &mut self.v_b[layer],
                &grads.biases[layer],
                self.beta1,
                self.beta2,
            );
            apply_update_1d(
                &mut net.biases[layer],
                &self.m_b[layer],
                &self.v_b[layer],
                self.learning_rate,
                bc1,
                bc2,
                self.epsilon,
            );
        }
    }
}

fn update_moments(
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    g: &Array2<f64>,
    beta1: f64,
    beta2: f64,
) {
    m.zip_mut_with(g, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
    v.zip_mut_with(g, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
}

fn update_moments_1d(
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    g: &Array1<f64>,
    beta1: f64,
    beta2: f64,
) {
    m.zip_mut_with(g, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
    v.zip_mut_with(g, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
}

fn apply_update(
    w: &mut Array2<f64>,
    m: &Array2<f64>,
    v: &Array2<f64>,
    lr: f64,
    bc1: f64,
    bc2: f64,
    eps: f64,
) {
    ndarray::Zip::from(w).and(m).and(v).for_each(|w, &m, &v| {
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    });
}

fn apply_update_1d(
    b: &mut Array1<f64>,
    m: &Array1<f64>,
    v: &Array1<f64>,
    lr: f64,
    bc1: f64,
    bc2: f64,
    eps: f64,
) {
    ndarray::Zip::from(b).and(m).and(v).for_each(|b, &m, &v| {
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        *b -= lr * m_hat / (v_hat.sqrt() + eps);
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input_dim: 2,
            hidden_dims: vec![3],
            output_dim: 2,
        }
    }

    #[test]
    fn zero_network_outputs_zeros() {
        let net = Network::zeros(tiny_spec());
        assert_eq!(net.forward(&[1.0, -2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_computed_forward_pass() {
        let mut net = Network::zeros(tiny_spec());
        {
            let (w, b) = net.layer_mut(0);
            *w = ndarray::array![[1.0, 2.0], [0.0, 1.0], [-1.0, 0.5]];
            *b = ndarray::array![0.5, -1.0, 0.0];
        }
        {
            let (w, b) = net.layer_mut(1);
            *w = ndarray::array![[1.0, 0.0, 2.0], [0.5, 1.0, -1.0]];
            *b = ndarray::array![0.0, 1.0];
        }
        // x = (1, 1): z1 = (3.5, 0, -0.5) -> relu (3.5, 0, 0)
        // out = (3.5, 2.75)
        let q = net.forward(&[1.0, 1.0]).unwrap();
        assert!((q[0] - 3.5).abs() < 1e-12);
        assert!((q[1] - 2.75).abs() < 1e-12);
        // Batch path agrees with the single-state path.
        let batch = ndarray::array![[1.0, 1.0], [0.0, 0.0]];
        let out = net.forward_batch(batch.view()).unwrap();
        assert!((out[(0, 0)] - 3.5).abs() < 1e-12);
        assert!((out[(0, 1)] - 2.75).abs() < 1e-12);
        // x = (0, 0): z1 = (0.5, -1, 0) -> relu (0.5, 0, 0), out = (0.5, 1.25)
        assert!((out[(1, 0)] - 0.5).abs() < 1e-12);
        assert!((out[(1, 1)] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn doubling_output_layer_doubles_outputs() {
        let mut net = Network::init_seeded(tiny_spec(), 3);
        {
            let (_, b) = net.layer_mut(1);
            *b = Array1::zeros(2);
        }
        let q1 = net.forward(&[0.3, -0.7]).unwrap();
        {
            let (w, _) = net.layer_mut(1);
            w.mapv_inplace(|v| 2.0 * v);
        }
        let q2 = net.forward(&[0.3, -0.7]).unwrap();
        for (a, b) in q1.iter().zip(&q2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = Network::zeros(tiny_spec());
        assert!(matches!(
            net.forward(&[1.0]),
            Err(NnError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gradient_at_the_minimum_is_zero() {
        let net = Network::init_seeded(tiny_spec(), 7);
        let state = [0.4, 0.9];
        let q = net.forward(&state).unwrap();
        let grads = net.gradient(&state, 1, q[1]).unwrap();
        assert!(grads.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_selected_output_rows_have_zero_gradient() {
        let net = Network::init_seeded(tiny_spec(), 11);
        let grads = net.gradient(&[0.2, -0.4], 0, 5.0).unwrap();
        let out_w = &grads.weights[1];
        // Row 1 belongs to the non-selected action.
        assert!(out_w.row(1).iter().all(|&g| g == 0.0));
        assert!(out_w.row(0).iter().any(|&g| g != 0.0));
        assert_eq!(grads.biases[1][1], 0.0);
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let spec = NetworkSpec {
            input_dim: 3,
            hidden_dims: vec![5, 4],
            output_dim: 3,
        };
        let net = Network::init_seeded(spec.clone(), 42);
        let state = [0.3, -1.2, 0.8];
        let action = 2;
        let target = 1.5;
        let analytic = net.gradient(&state, action, target).unwrap().flatten();

        let params = net.to_params();
        let h = 1e-5;
        let loss_at = |values: &[f64]| -> f64 {
            let p = ParameterSet::new(spec.clone(), values.to_vec()).unwrap();
            let n = Network::from_params(&p);
            let q = n.forward(&state).unwrap()[action];
            (target - q).powi(2)
        };
        let mut max_rel = 0.0f64;
        for i in 0..params.len() {
            let mut plus = params.values().to_vec();
            let mut minus = params.values().to_vec();
            plus[i] += h;
            minus[i] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-8);
            max_rel = max_rel.max((analytic[i] - fd).abs() / denom);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn adam_ignores_zero_gradients() {
        let spec = tiny_spec();
        let mut net = Network::init_seeded(spec.clone(), 5);
        let before = net.to_params();
        let mut adam = Adam::new(&spec, 0.001);
        let zero = Gradients {
            weights: spec
                .layer_dims()
                .iter()
                .map(|&(i, o)| Array2::zeros((o, i)))
                .collect(),
            biases: spec
                .layer_dims()
                .iter()
                .map(|&(_, o)| Array1::zeros(o))
                .collect(),
        };
        adam.update(&mut net, &zero);
        assert_eq!(net.to_params(), before);
    }

    #[test]
    fn first_adam_step_moves_lr_against_gradient_sign() {
        let spec = tiny_spec();
        let mut net = Network::zeros(spec.clone());
        let mut adam = Adam::new(&spec, 0.001);
        let mut grads = Gradients {
            weights: spec
                .layer_dims()
                .iter()
                .map(|&(i, o)| Array2::zeros((o, i)))
                .collect(),
            biases: spec
                .layer_dims()
                .iter()
                .map(|&(_, o)| Array1::zeros(o))
                .collect(),
        };
        grads.weights[0][(0, 0)] = 0.37;
        grads.weights[0][(1, 1)] = -2.0;
        adam.update(&mut net, &grads);
        // After bias correction the first step is lr * g / (|g| + eps).
        let w = &net.weights[0];
        assert!((w[(0, 0)] + 0.001).abs() < 1e-6);
        assert!((w[(1, 1)] - 0.001).abs() < 1e-6);
        assert_eq!(w[(0, 1)], 0.0);
    }

    #[test]
    fn repeated_identical_gradients_drift_monotonically() {
        let spec = tiny_spec();
        let mut net = Network::zeros(spec.clone());
        let mut adam = Adam::new(&spec, 0.001);
        let mut grads = Gradients {
            weights: spec
                .layer_dims()
                .iter()
                .map(|&(i, o)| Array2::zeros((o, i)))
                .collect(),
            biases: spec
                .layer_dims()
                .iter()
                .map(|&(_, o)| Array1::zeros(o))
                .collect(),
        };
        grads.biases[0][2] = 1.0;
        let mut prev = 0.0;
        for _ in 0..20 {
            adam.update(&mut net, &grads);
            let b = net.biases[0][2];
            assert!(b < prev, "drift must stay monotone against the gradient");
            prev = b;
        }
    }

    #[test]
    fn params_round_trip_bit_exactly() {
        let net = Network::init_seeded(NetworkSpec::standard(6, 4), 99);
        let params = net.to_params();
        let bytes = params.to_bytes();
        let back = ParameterSet::from_bytes(&bytes).unwrap();
        assert_eq!(params, back);
        assert_eq!(params.digest(), back.digest());
        let rebuilt = Network::from_params(&back);
        assert_eq!(rebuilt.to_params(), params);
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let params = Network::init_seeded(tiny_spec(), 1).to_params();
        let bytes = params.to_bytes();
        for cut in [3, 11, 19, bytes.len() - 5] {
            assert!(
                ParameterSet::from_bytes(&bytes[..cut]).is_err(),
                "cut at {cut} must fail"
            );
        }
        // Trailing garbage is also rejected.
        let mut extended = bytes.clone();
        extended.extend_from_slice(&[0u8; 8]);
        assert!(ParameterSet::from_bytes(&extended).is_err());
    }

    #[test]
    fn wrong_magic_and_spec_are_refused() {
        let params = Network::init_seeded(tiny_spec(), 1).to_params();
        let mut bytes = params.to_bytes();
        bytes[0] ^= 0xff;
        assert!(matches!(
            ParameterSet::from_bytes(&bytes),
            Err(NnError::BadMagic)
        ));
        let other = NetworkSpec {
            input_dim: 4,
            hidden_dims: vec![3],
            output_dim: 2,
        };
        assert!(matches!(
            ParameterSet::from_bytes_expecting(&params.to_bytes(), &other),
            Err(NnError::SpecMismatch { .. })
        ));
    }

    #[test]
    fn flatten_order_is_stable_across_runs() {
        let a = Network::init_seeded(NetworkSpec::standard(5, 3), 1234);
        let b = Network::init_seeded(NetworkSpec::standard(5, 3), 1234);
        assert_eq!(a.to_params(), b.to_params());
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Network::init_seeded(NetworkSpec::standard(8, 5), 2);
        let state: Vec<f64> = (0..8).map(|i| (i as f64) / 8.0).collect();
        assert_eq!(net.forward(&state).unwrap(), net.forward(&state).unwrap());
    }

    #[test]
    fn batch_loss_is_mean_squared_td_error() {
        let net = Network::init_seeded(tiny_spec(), 8);
        let states = ndarray::array![[0.1, 0.2], [0.5, -0.5], [1.0, 0.0]];
        let actions = [0usize, 1, 0];
        let targets = [1.0, -0.5, 2.0];
        let (loss, _) = net
            .batch_gradient(states.view(), &actions, &targets)
            .unwrap();
        let mut expected = 0.0;
        for i in 0..3 {
            let q = net.forward(&states.row(i).to_vec()).unwrap()[actions[i]];
            expected += (targets[i] - q).powi(2);
        }
        expected /= 3.0;
        assert!((loss - expected).abs() < 1e-12);
    }
}
