//! Dense autoencoder with unit-sphere latents, and the Adam optimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{Graph, Tensor, Var};
use crate::scalar::{norm, Scalar};

/// Negative-side slope of every hidden activation.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Layer widths of the encoder and decoder.
///
/// The encoder maps `input_dim → encoder_hidden… → latent_dim`; the decoder
/// maps `latent_dim → decoder_hidden… → input_dim`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
}

impl Architecture {
    /// Decoder mirrors the encoder's hidden widths.
    pub fn mirrored(input_dim: usize, hidden: &[usize], latent_dim: usize) -> Self {
        Architecture {
            input_dim,
            encoder_hidden: hidden.to_vec(),
            latent_dim,
            decoder_hidden: hidden.iter().rev().copied().collect(),
        }
    }

    pub fn encoder_sizes(&self) -> Vec<usize> {
        let mut v = vec![self.input_dim];
        v.extend(&self.encoder_hidden);
        v.push(self.latent_dim);
        v
    }

    pub fn decoder_sizes(&self) -> Vec<usize> {
        let mut v = vec![self.latent_dim];
        v.extend(&self.decoder_hidden);
        v.push(self.input_dim);
        v
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.encoder_sizes().into_iter().chain(self.decoder_sizes());
        if all.into_iter().any(|d| d == 0) {
            return Err(Error::Config(format!("layer widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    /// `[fan_in × fan_out]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub arch: Architecture,
    pub encoder: Vec<Dense<T>>,
    pub decoder: Vec<Dense<T>>,
}

/// Unit-norm embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVector<T>(Vec<T>);

impl<T: Scalar> LatentVector<T> {
    /// Normalizes `values` onto the unit sphere.
    pub fn normalized(values: Vec<T>) -> Result<Self> {
        let n = norm(&values);
        if !(n > T::lit(crate::ndgrad::NORMALIZE_EPS)) {
            return Err(Error::domain("latent", "near-zero vector"));
        }
        Ok(LatentVector(values.into_iter().map(|v| v / n).collect()))
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T> AsRef<[T]> for LatentVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

fn glorot_layer<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Dense<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let w: Vec<T> = (0..fan_in * fan_out)
        .map(|_| T::lit(rng.random_range(-limit..limit)))
        .collect();
    Dense {
        weight: Tensor::from_parts(vec![fan_in, fan_out], w),
        bias: Tensor::zeros(&[fan_out]),
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let build = |sizes: Vec<usize>, rng: &mut ChaCha8Rng| {
            sizes
                .windows(2)
                .map(|w| glorot_layer(rng, w[0], w[1]))
                .collect::<Vec<_>>()
        };
        let encoder = build(arch.encoder_sizes(), &mut rng);
        let decoder = build(arch.decoder_sizes(), &mut rng);
        Ok(ModelParams {
            arch: arch.clone(),
            encoder,
            decoder,
        })
    }

    /// Rebuilds parameters from tensors in [`ModelParams::tensors`] order.
    pub fn from_tensors(arch: &Architecture, tensors: Vec<Tensor<T>>) -> Result<Self> {
        arch.validate()?;
        let enc = arch.encoder_sizes();
        let dec = arch.decoder_sizes();
        let shapes: Vec<Vec<usize>> = enc
            .windows(2)
            .chain(dec.windows(2))
            .flat_map(|w| [vec![w[0], w[1]], vec![w[1]]])
            .collect();
        if tensors.len() != shapes.len() || tensors.iter().zip(&shapes).any(|(t, s)| t.shape() != s.as_slice()) {
            return Err(Error::shape(
                "ModelParams::from_tensors",
                "tensor shapes do not match the architecture",
            ));
        }
        let mut it = tensors.into_iter();
        let mut take = |n: usize| {
            (0..n)
                .map(|_| Dense {
                    weight: it.next().expect("count checked"),
                    bias: it.next().expect("count checked"),
                })
                .collect::<Vec<_>>()
        };
        let encoder = take(enc.len() - 1);
        let decoder = take(dec.len() - 1);
        Ok(ModelParams {
            arch: arch.clone(),
            encoder,
            decoder,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    /// Every parameter tensor: encoder (weight, bias)…, then decoder.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_tensors(&self) -> usize {
        2 * (self.encoder.len() + self.decoder.len())
    }

    pub fn num_encoder_tensors(&self) -> usize {
        2 * self.encoder.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// Records every parameter as a trainable leaf of `g`.
    pub fn register(&self, g: &mut Graph<T>) -> ParamVars {
        let mut reg = |layers: &[Dense<T>]| {
            layers
                .iter()
                .map(|l| (g.param(l.weight.clone()), g.param(l.bias.clone())))
                .collect::<Vec<_>>()
        };
        let encoder = reg(&self.encoder);
        let decoder = reg(&self.decoder);
        ParamVars { encoder, decoder }
    }

    /// Embeds one flattened image without recording gradients.
    pub fn encode(&self, x: &[T]) -> Result<LatentVector<T>> {
        let z = self.encode_rows(x, 1)?;
        Ok(LatentVector(z))
    }

    /// Embeds `rows` flattened images stored back to back; returns `rows×d`.
    pub fn encode_rows(&self, x: &[T], rows: usize) -> Result<Vec<T>> {
        if rows == 0 || x.len() != rows * self.input_dim() {
            return Err(Error::shape(
                "encode",
                format!("{} values for {rows} rows of width {}", x.len(), self.input_dim()),
            ));
        }
        let mut g = Graph::new();
        let pv = self.register_frozen(&mut g);
        let xv = g.constant(Tensor::from_parts(vec![rows, self.input_dim()], x.to_vec()));
        let z = encode_graph(&mut g, &pv, xv)?;
        Ok(g.value(z).data().to_vec())
    }

    pub fn decode(&self, z: &LatentVector<T>) -> Result<Tensor<T>> {
        if z.dim() != self.latent_dim() {
            return Err(Error::shape(
                "decode",
                format!("latent has {} dims, expected {}", z.dim(), self.latent_dim()),
            ));
        }
        let mut g = Graph::new();
        let pv = self.register_frozen(&mut g);
        let zv = g.constant(Tensor::from_parts(vec![1, z.dim()], z.0.clone()));
        let x = decode_graph(&mut g, &pv, zv)?;
        Ok(Tensor::from_parts(vec![self.input_dim()], g.value(x).data().to_vec()))
    }

    fn register_frozen(&self, g: &mut Graph<T>) -> ParamVars {
        let mut reg = |layers: &[Dense<T>]| {
            layers
                .iter()
                .map(|l| (g.constant(l.weight.clone()), g.constant(l.bias.clone())))
                .collect::<Vec<_>>()
        };
        let encoder = reg(&self.encoder);
        let decoder = reg(&self.decoder);
        ParamVars { encoder, decoder }
    }
}

/// Graph handles of a registered [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub encoder: Vec<(Var, Var)>,
    pub decoder: Vec<(Var, Var)>,
}

impl ParamVars {
    pub fn all(&self) -> impl Iterator<Item = Var> + '_ {
        self.encoder.iter().chain(&self.decoder).flat_map(|&(w, b)| [w, b])
    }

    /// Gradients in [`ModelParams::tensors`] order; zeros where none flowed.
    pub fn grads<T: Scalar>(&self, g: &Graph<T>) -> Vec<Tensor<T>> {
        self.all()
            .map(|v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
            .collect()
    }
}

fn dense<T: Scalar>(g: &mut Graph<T>, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let h = g.matmul(x, w)?;
    g.add_bias(h, b)
}

/// `x[B×D] → z[B×d]`: leaky-ReLU hidden layers, linear projection, row
/// normalization.
pub fn encode_graph<T: Scalar>(g: &mut Graph<T>, pv: &ParamVars, x: Var) -> Result<Var> {
    let mut h = x;
    let last = pv.encoder.len() - 1;
    for (i, &layer) in pv.encoder.iter().enumerate() {
        h = dense(g, h, layer)?;
        if i < last {
            h = g.leaky_relu(h, T::lit(LEAKY_SLOPE))?;
        }
    }
    g.l2_normalize_rows(h)
}

/// `z[B×d] → x̂[B×D]`: leaky-ReLU hidden layers, sigmoid output.
pub fn decode_graph<T: Scalar>(g: &mut Graph<T>, pv: &ParamVars, z: Var) -> Result<Var> {
    let mut h = z;
    let last = pv.decoder.len() - 1;
    for (i, &layer) in pv.decoder.iter().enumerate() {
        h = dense(g, h, layer)?;
        if i < last {
            h = g.leaky_relu(h, T::lit(LEAKY_SLOPE))?;
        }
    }
    g.sigmoid(h)
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<T>> = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One bias-corrected Adam update over `tensors`.
    pub fn step_tensors<'a>(
        &mut self,
        tensors: impl Iterator<Item = &'a mut Tensor<T>>,
        grads: &[Tensor<T>],
    ) -> Result<()> {
        let tensors: Vec<&mut Tensor<T>> = tensors.collect();
        if tensors.len() != grads.len() || tensors.len() != self.first_moment.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} parameters, {} gradients", tensors.len(), grads.len()),
            ));
        }
        for ((p, gr), m) in tensors.iter().zip(grads).zip(&self.first_moment) {
            if p.shape() != gr.shape() || p.shape() != m.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{:?} vs {:?}", p.shape(), gr.shape()),
                ));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::lit(c.learning_rate), T::lit(c.epsilon));
        let one = T::one();
        for (i, p) in tensors.into_iter().enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.ensure_finite("adam_step")?;
        }
        Ok(())
    }
}

/// Applies one Adam step to every parameter of `params`.
pub fn adam_step<T: Scalar>(params: &mut ModelParams<T>, grads: &[Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    state.step_tensors(params.tensors_mut(), grads)
}
