//! Random baseline initializers: He and Xavier, uniform and normal
//! variants. Biases are zero in every scheme.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nnet::{LayerKind, Network};

/// Fan-based random initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    HeUniform,
    HeNormal,
    XavierUniform,
    XavierNormal,
}

impl std::fmt::Display for InitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            InitScheme::HeUniform => "he-uniform",
            InitScheme::HeNormal => "he-normal",
            InitScheme::XavierUniform => "xavier-uniform",
            InitScheme::XavierNormal => "xavier-normal",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "he-uniform" => Ok(InitScheme::HeUniform),
            "he-normal" => Ok(InitScheme::HeNormal),
            "xavier-uniform" => Ok(InitScheme::XavierUniform),
            "xavier-normal" => Ok(InitScheme::XavierNormal),
            other => Err(Error::Parameter(format!(
                "unknown initialization scheme '{other}' (expected he-uniform, he-normal, xavier-uniform, or xavier-normal)"
            ))),
        }
    }
}

/// Draws weights layer by layer in network order: He uniform
/// `U(±√(6/fan_in))`, He normal `N(0, 2/fan_in)`, Xavier uniform
/// `U(±√(6/(fan_in+fan_out)))`, Xavier normal `N(0, 2/(fan_in+fan_out))`.
/// Conv fans are `c_i·f_h·f_w` and `c_o·f_h·f_w`. Biases and momentum
/// buffers are zeroed.
pub fn random_init(net: &mut Network, scheme: InitScheme, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fans: Vec<(usize, usize)> = net
        .spec()
        .layers
        .iter()
        .filter(|l| l.kind.is_trainable())
        .zip(net.params())
        .map(|(layer, p)| {
            let fan_in = p.weight.cols();
            let fan_out = match &layer.kind {
                LayerKind::Conv2D { c_o, f_h, f_w, .. } => c_o * f_h * f_w,
                _ => p.weight.rows(),
            };
            (fan_in, fan_out)
        })
        .collect();

    for (p, &(fan_in, fan_out)) in net.params_mut().iter_mut().zip(&fans) {
        match scheme {
            InitScheme::HeUniform => {
                let bound = (6.0 / fan_in as f64).sqrt();
                for v in p.weight.data_mut() {
                    *v = rng.random_range(-bound..bound);
                }
            }
            InitScheme::HeNormal => {
                let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                for v in p.weight.data_mut() {
                    *v = dist.sample(&mut rng);
                }
            }
            InitScheme::XavierUniform => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in p.weight.data_mut() {
                    *v = rng.random_range(-bound..bound);
                }
            }
            InitScheme::XavierNormal => {
                let dist = Normal::new(0.0, (2.0 / (fan_in + fan_out) as f64).sqrt()).unwrap();
                for v in p.weight.data_mut() {
                    *v = dist.sample(&mut rng);
                }
            }
        }
        p.bias.iter_mut().for_each(|v| *v = 0.0);
    }
    net.reset_momentum();
}
