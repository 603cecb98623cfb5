use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Squash {
    None,
    UnitInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub output_squash: Squash,
    pub dropout_rate: f64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: &[usize], output_dim: usize, output_squash: Squash) -> Self {
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            output_squash,
            dropout_rate: 0.0,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::invalid("MLP dimensions must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout rate must lie in [0, 1)"));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }
}

/// Weight initialisation scheme. Biases always start at zero.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Gaussian with std `1/sqrt(fan_in)`.
    FanIn,
    /// Gaussian with std `gain/sqrt(fan_in)`.
    ScaledFanIn(f64),
    /// Gaussian with a fixed std.
    Gaussian(f64),
    Zeros,
}

impl Init {
    fn matrix(self, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let std = match self {
            Init::FanIn => 1.0 / (cols as f64).sqrt(),
            Init::ScaledFanIn(g) => g / (cols as f64).sqrt(),
            Init::Gaussian(s) => s,
            Init::Zeros => 0.0,
        };
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                std * z
            })
            .collect();
        Tensor::new(vec![rows, cols], data).expect("finite init")
    }
}

/// Dropout context for a forward pass.
pub enum Dropout<'a> {
    Off,
    On(&'a mut ChaCha8Rng),
}

impl Dropout<'_> {
    fn mask(&mut self, n: usize, rate: f64) -> Option<Vec<f64>> {
        match self {
            Dropout::On(rng) if rate > 0.0 => {
                let keep = 1.0 / (1.0 - rate);
                Some(
                    (0..n)
                        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                        .collect(),
                )
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    w: usize,
    b: usize,
}

/// Fully connected network: GELU hidden layers, dropout after each hidden
/// activation (training only), optional sigmoid head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn register(
        spec: MlpSpec,
        store: &mut ParamStore,
        prefix: &str,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .enumerate()
            .map(|(i, (fan_in, fan_out))| Layer {
                w: store.add(format!("{prefix}.l{i}.w"), init.matrix(fan_out, fan_in, rng)),
                b: store.add(format!("{prefix}.l{i}.b"), Tensor::zeros(vec![fan_out])),
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// Rebind to parameters that already exist in `store` under `prefix`.
    pub fn bind(spec: MlpSpec, store: &ParamStore, prefix: &str) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        for (i, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            let w = lookup(store, &format!("{prefix}.l{i}.w"), &[fan_out, fan_in])?;
            let b = lookup(store, &format!("{prefix}.l{i}.b"), &[fan_out])?;
            layers.push(Layer { w, b });
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Indices of every tensor this network owns in its store.
    pub fn param_indices(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }

    pub fn forward(&self, tape: &mut Tape<'_>, store: usize, x: Var, dropout: &mut Dropout<'_>) -> Result<Var> {
        if tape.len_of(x) != self.spec.input_dim {
            return Err(Error::invalid(format!(
                "MLP expects input of length {}, got {}",
                self.spec.input_dim,
                tape.len_of(x)
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.param(store, layer.w);
            let b = tape.param(store, layer.b);
            h = tape.affine(w, h, Some(b))?;
            if i < last {
                h = tape.gelu(h);
                if let Some(mask) = dropout.mask(tape.len_of(h), self.spec.dropout_rate) {
                    h = tape.mask(h, mask)?;
                }
            }
        }
        Ok(match self.spec.output_squash {
            Squash::None => h,
            Squash::UnitInterval => tape.sigmoid(h),
        })
    }
}

fn lookup(store: &ParamStore, name: &str, shape: &[usize]) -> Result<usize> {
    let idx = store
        .index_of(name)
        .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))?;
    if store.get(idx).shape() != shape {
        return Err(Error::invalid(format!(
            "parameter `{name}` has shape {:?}, expected {shape:?}",
            store.get(idx).shape()
        )));
    }
    Ok(idx)
}

/// Scaled dot-product pooling with one learned query.
///
/// Keys are `W_k · token`; values are the tokens themselves, so a single
/// token pools to itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionPool {
    dim: usize,
    query: usize,
    key: usize,
}

impl AttentionPool {
    pub fn register(dim: usize, store: &mut ParamStore, prefix: &str, init: Init, rng: &mut ChaCha8Rng) -> Self {
        let query = init.matrix(1, dim, rng);
        let query = store.add(format!("{prefix}.query"), Tensor::vector(query.into_data()).expect("finite"));
        let key = store.add(format!("{prefix}.key"), init.matrix(dim, dim, rng));
        Self { dim, query, key }
    }

    pub fn bind(dim: usize, store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            dim,
            query: lookup(store, &format!("{prefix}.query"), &[dim])?,
            key: lookup(store, &format!("{prefix}.key"), &[dim, dim])?,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn param_indices(&self) -> Vec<usize> {
        vec![self.query, self.key]
    }

    /// Returns `(context, weights)`.
    pub fn forward(&self, tape: &mut Tape<'_>, store: usize, tokens: &[Var]) -> Result<(Var, Var)> {
        if tokens.is_empty() {
            return Err(Error::invalid("attention over an empty sequence"));
        }
        let q = tape.param(store, self.query);
        let wk = tape.param(store, self.key);
        let scale = 1.0 / (self.dim as f64).sqrt();
        let mut scores = Vec::with_capacity(tokens.len());
        for &t in tokens {
            if tape.len_of(t) != self.dim {
                return Err(Error::invalid(format!(
                    "attention token length {} != {}",
                    tape.len_of(t),
                    self.dim
                )));
            }
            let k = tape.affine(wk, t, None)?;
            let s = tape.dot(q, k)?;
            scores.push(tape.scale(s, scale));
        }
        let scores = tape.stack(&scores)?;
        let weights = tape.softmax(scores)?;
        let context = tape.weighted_sum(weights, tokens)?;
        Ok((context, weights))
    }
}

/// Standalone forward pass of one network.
pub fn mlp_forward(mlp: &Mlp, params: &ParamStore, input: &Tensor, dropout: &mut Dropout<'_>) -> Result<Tensor> {
    let mut tape = Tape::new(&[params]);
    tape.set_trainable(0, false);
    let x = tape.input(input.data().to_vec());
    let y = mlp.forward(&mut tape, 0, x, dropout)?;
    Tensor::vector(tape.value(y).to_vec())
}

/// Standalone attention pooling; returns the context and the weight vector.
pub fn attention_pool(pool: &AttentionPool, params: &ParamStore, tokens: &[Tensor]) -> Result<(Tensor, Vec<f64>)> {
    let mut tape = Tape::new(&[params]);
    tape.set_trainable(0, false);
    let vars: Vec<Var> = tokens.iter().map(|t| tape.input(t.data().to_vec())).collect();
    let (ctx, w) = pool.forward(&mut tape, 0, &vars)?;
    Ok((Tensor::vector(tape.value(ctx).to_vec())?, tape.value(w).to_vec()))
}
