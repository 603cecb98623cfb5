use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genmodel::GenParams;
use crate::inference::InfParams;
use crate::tensor::Init;

/// Shapes and fixed hyperparameters shared by the generative and inference networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Latent status width.
    pub d_s: usize,
    pub d_emb: usize,
    /// Standardised feature width.
    pub d_e: usize,
    pub hidden_dims: Vec<usize>,
    /// Width of the per-exchange tokens pooled by the inference network.
    pub token_dim: usize,
    pub dropout: f64,
    /// Observation noise std; the answer/question covariance is `sigma_obs²·I`.
    pub sigma_obs: f64,
    /// Posterior std; `q(s) = N(μ, tau²·I)`.
    pub tau: f64,
    /// When false, every exchange is generated by the first-exchange networks.
    #[serde(default = "yes")]
    pub cross_exchange: bool,
}

fn yes() -> bool {
    true
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.d_s == 0 || self.d_emb == 0 || self.d_e == 0 || self.token_dim == 0 {
            return Err(Error::invalid("architecture widths must be positive"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if !(self.sigma_obs > 0.0) || !(self.tau > 0.0) {
            return Err(Error::invalid("sigma_obs and tau must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Generative and inference parameters together.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub gen: GenParams,
    pub inf: InfParams,
}

impl Model {
    /// Fresh model: Gaussian weights with std `1/sqrt(fan_in)`, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        Self::init_with(arch, Init::FanIn, seed)
    }

    pub fn init_with(arch: Architecture, init: Init, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = GenParams::init(&arch, init, &mut rng)?;
        let inf = InfParams::init(&arch, init, &mut rng)?;
        Ok(Self { arch, gen, inf })
    }
}
