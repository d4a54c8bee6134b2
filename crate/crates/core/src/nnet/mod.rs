//! Minimal network toolkit: layer specs, parameter storage, forward pass,
//! backprop, SGD-with-momentum training, evaluation, random baseline
//! initializers, and spec/parameter serialization.
//!
//! Activations flow as `(n, h, w, c)` tensors. Dense layers implicitly
//! flatten their input in the shared (row, col, channel) order; conv layers
//! run as a matmul over receptive-field columns so their weights live in
//! flat `c_o × (f_h·f_w·c_i)` form, identical to what the Sylvester solve
//! produces.

mod grad;
mod init;
mod io;
mod train;

pub use grad::backward;
pub use init::{random_init, InitScheme};
pub use io::{load_network_spec, load_params, save_network_spec, save_params};
pub use train::{evaluate, sgd_step, train, EpochStat, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::patches::{conv_out_extent, extract_patches, Tensor4};

/// Layer kind and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum LayerKind {
    #[serde(rename = "conv2d")]
    Conv2D {
        c_o: usize,
        f_h: usize,
        f_w: usize,
        stride: usize,
        pad: usize,
    },
    #[serde(rename = "dense")]
    Dense { d_o: usize },
    #[serde(rename = "relu")]
    ReLU,
    #[serde(rename = "flatten")]
    Flatten,
    #[serde(rename = "global_avg_pool")]
    GlobalAvgPool,
}

impl LayerKind {
    /// Conv and dense layers carry parameters; the rest do not.
    pub fn is_trainable(&self) -> bool {
        matches!(self, LayerKind::Conv2D { .. } | LayerKind::Dense { .. })
    }
}

/// Named layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

/// Ordered layer descriptions with the input image shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input image shape (h, w, c).
    pub input_dims: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl NetworkSpec {
    /// Checks the shape chain and naming, returning each layer's input
    /// dims (h, w, c).
    pub fn layer_input_dims(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut seen = std::collections::HashSet::new();
        for layer in &self.layers {
            if layer.name.is_empty() {
                return Err(Error::Config("layer with empty name".into()));
            }
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::Config(format!("duplicate layer name '{}'", layer.name)));
            }
        }

        let mut dims = self.input_dims;
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(Error::Config(format!("input dims {dims:?} must be positive")));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            inputs.push(dims);
            dims = output_dims(&layer.kind, dims).map_err(|e| match e {
                Error::Shape(msg) => {
                    Error::Config(format!("layer '{}': {msg}", layer.name))
                }
                other => other,
            })?;
        }
        let flat = dims.0 * dims.1 * dims.2;
        if flat != self.num_classes {
            return Err(Error::Config(format!(
                "network output has {flat} values, expected {} classes",
                self.num_classes
            )));
        }
        Ok(inputs)
    }

    /// Names of the trainable layers, in network order.
    pub fn trainable_names(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| l.kind.is_trainable())
            .map(|l| l.name.as_str())
            .collect()
    }
}

fn output_dims(
    kind: &LayerKind,
    (h, w, c): (usize, usize, usize),
) -> Result<(usize, usize, usize)> {
    match kind {
        LayerKind::Conv2D {
            c_o,
            f_h,
            f_w,
            stride,
            pad,
        } => {
            if *f_h == 0 || *f_w == 0 || *stride == 0 || *c_o == 0 {
                return Err(Error::Shape(format!(
                    "conv needs positive filter/stride/channels, got {f_h}x{f_w} stride {stride} c_o {c_o}"
                )));
            }
            if *f_h > h + 2 * pad || *f_w > w + 2 * pad {
                return Err(Error::Shape(format!(
                    "filter {f_h}x{f_w} exceeds padded input {}x{}",
                    h + 2 * pad,
                    w + 2 * pad
                )));
            }
            Ok((
                conv_out_extent(h, *f_h, *stride, *pad),
                conv_out_extent(w, *f_w, *stride, *pad),
                *c_o,
            ))
        }
        LayerKind::Dense { d_o } => {
            if *d_o == 0 {
                return Err(Error::Shape("dense output must be positive".into()));
            }
            Ok((1, 1, *d_o))
        }
        LayerKind::ReLU => Ok((h, w, c)),
        LayerKind::Flatten => Ok((1, 1, h * w * c)),
        LayerKind::GlobalAvgPool => Ok((1, 1, c)),
    }
}

/// The SmallCNN architecture used by the desk-scale experiments:
/// three stride-reducing conv/ReLU blocks, global average pooling, and a
/// final dense classifier.
pub fn small_cnn(input_dims: (usize, usize, usize), num_classes: usize) -> NetworkSpec {
    let conv = |name: &str, c_o: usize, stride: usize| LayerSpec {
        name: name.into(),
        kind: LayerKind::Conv2D {
            c_o,
            f_h: 3,
            f_w: 3,
            stride,
            pad: 1,
        },
    };
    let relu = |name: &str| LayerSpec {
        name: name.into(),
        kind: LayerKind::ReLU,
    };
    NetworkSpec {
        input_dims,
        layers: vec![
            conv("conv1", 16, 1),
            relu("relu1"),
            conv("conv2", 32, 2),
            relu("relu2"),
            conv("conv3", 64, 2),
            relu("relu3"),
            LayerSpec {
                name: "gap".into(),
                kind: LayerKind::GlobalAvgPool,
            },
            LayerSpec {
                name: "final_dense".into(),
                kind: LayerKind::Dense { d_o: num_classes },
            },
        ],
        num_classes,
    }
}

/// One trainable layer's parameters: a weight matrix (conv weights kept in
/// flat `c_o × (f_h·f_w·c_i)` form) and a bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// A spec with materialized parameters and momentum buffers.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<LayerParams>,
    momentum: Vec<LayerParams>,
}

/// Forward-pass output: logits plus each trainable layer's input
/// activations, which drive the layer-wise initializer.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `num_classes × batch` logit matrix.
    pub logits: Matrix,
    /// Input activation tensor of each trainable layer, in network order.
    pub trainable_inputs: Vec<Tensor4>,
}

/// Weight matrix shape of a trainable layer given its input dims.
fn weight_shape(kind: &LayerKind, input: (usize, usize, usize)) -> (usize, usize) {
    match kind {
        LayerKind::Conv2D { c_o, f_h, f_w, .. } => (*c_o, f_h * f_w * input.2),
        LayerKind::Dense { d_o } => (*d_o, input.0 * input.1 * input.2),
        _ => unreachable!("only trainable layers carry weights"),
    }
}

/// Flattens each sample of `(b,h,w,c)` into a column of an `h·w·c × b`
/// matrix; sample blocks are contiguous in the tensor, so this is a direct
/// transpose-copy.
pub fn tensor_to_columns(t: &Tensor4) -> Matrix {
    let (b, h, w, c) = t.dims();
    let d = h * w * c;
    let mut m = Matrix::zeros(d, b);
    for j in 0..b {
        for i in 0..d {
            m.set(i, j, t.data()[j * d + i]);
        }
    }
    m
}

/// Inverse of [`tensor_to_columns`].
pub fn columns_to_tensor(m: &Matrix, dims: (usize, usize, usize, usize)) -> Result<Tensor4> {
    let (b, h, w, c) = dims;
    let d = h * w * c;
    if m.rows() != d || m.cols() != b {
        return Err(Error::Shape(format!(
            "column block is {}x{}, dims {dims:?} need {d}x{b}",
            m.rows(),
            m.cols()
        )));
    }
    let mut data = vec![0.0; b * d];
    for j in 0..b {
        for i in 0..d {
            data[j * d + i] = m.get(i, j);
        }
    }
    Tensor4::from_vec(dims, data)
}

impl Network {
    /// Zero-parameter network for the given spec.
    pub fn new(spec: NetworkSpec) -> Result<Network> {
        let inputs = spec.layer_input_dims()?;
        let mut params = Vec::new();
        for (layer, &input) in spec.layers.iter().zip(&inputs) {
            if !layer.kind.is_trainable() {
                continue;
            }
            let (rows, cols) = weight_shape(&layer.kind, input);
            params.push(LayerParams {
                weight: Matrix::zeros(rows, cols),
                bias: vec![0.0; rows],
            });
        }
        let momentum = params.clone();
        Ok(Network {
            spec,
            params,
            momentum,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Parameters of the trainable layers, in network order.
    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub(crate) fn momentum_mut(&mut self) -> &mut [LayerParams] {
        &mut self.momentum
    }

    /// Zeroes all momentum buffers.
    pub fn reset_momentum(&mut self) {
        for buf in &mut self.momentum {
            buf.weight = Matrix::zeros(buf.weight.rows(), buf.weight.cols());
            buf.bias.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Parameters of the named trainable layer.
    pub fn param_for(&self, name: &str) -> Option<&LayerParams> {
        let idx = self
            .spec
            .trainable_names()
            .iter()
            .position(|n| *n == name)?;
        Some(&self.params[idx])
    }

    /// Replaces the named layer's parameters, enforcing the spec-derived
    /// shapes.
    pub fn install_weights(&mut self, name: &str, weight: Matrix, bias: Vec<f64>) -> Result<()> {
        let names = self.spec.trainable_names();
        let idx = names
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::Config(format!("no trainable layer named '{name}'")))?;
        let current = &self.params[idx];
        if weight.rows() != current.weight.rows() || weight.cols() != current.weight.cols() {
            return Err(Error::Shape(format!(
                "layer '{name}' takes a {}x{} weight, got {}x{}",
                current.weight.rows(),
                current.weight.cols(),
                weight.rows(),
                weight.cols()
            )));
        }
        if bias.len() != current.bias.len() {
            return Err(Error::Shape(format!(
                "layer '{name}' takes {} biases, got {}",
                current.bias.len(),
                bias.len()
            )));
        }
        self.params[idx] = LayerParams { weight, bias };
        Ok(())
    }

    /// Applies one layer to a batch tensor.
    pub(crate) fn apply_layer(&self, layer_index: usize, input: &Tensor4) -> Result<Tensor4> {
        let layer = &self.spec.layers[layer_index];
        let (b, h, w, c) = input.dims();
        match &layer.kind {
            LayerKind::Conv2D {
                c_o,
                f_h,
                f_w,
                stride,
                pad,
            } => {
                let param = self.param_for(&layer.name).expect("trainable layer");
                let dummy = vec![0usize; b];
                let pm = extract_patches(input, *f_h, *f_w, *stride, *pad, &dummy)?;
                let out = param.weight.matmul(&pm.x)?;
                let out_h = conv_out_extent(h, *f_h, *stride, *pad);
                let out_w = conv_out_extent(w, *f_w, *stride, *pad);
                let mut t = Tensor4::zeros((b, out_h, out_w, *c_o));
                for img in 0..b {
                    for oy in 0..out_h {
                        for ox in 0..out_w {
                            let col = (img * out_h + oy) * out_w + ox;
                            for o in 0..*c_o {
                                t.set(img, oy, ox, o, out.get(o, col) + param.bias[o]);
                            }
                        }
                    }
                }
                Ok(t)
            }
            LayerKind::Dense { d_o } => {
                let param = self.param_for(&layer.name).expect("trainable layer");
                let x = tensor_to_columns(input);
                let out = param.weight.matmul(&x)?;
                let mut t = Tensor4::zeros((b, 1, 1, *d_o));
                for j in 0..b {
                    for r in 0..*d_o {
                        t.set(j, 0, 0, r, out.get(r, j) + param.bias[r]);
                    }
                }
                Ok(t)
            }
            LayerKind::ReLU => {
                let mut t = input.clone();
                for v in t.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                Ok(t)
            }
            LayerKind::Flatten => {
                Tensor4::from_vec((b, 1, 1, h * w * c), input.data().to_vec())
            }
            LayerKind::GlobalAvgPool => {
                let mut t = Tensor4::zeros((b, 1, 1, c));
                let scale = 1.0 / (h * w) as f64;
                for img in 0..b {
                    for ch in 0..c {
                        let mut acc = 0.0;
                        for y in 0..h {
                            for x in 0..w {
                                acc += input.get(img, y, x, ch);
                            }
                        }
                        t.set(img, 0, 0, ch, acc * scale);
                    }
                }
                Ok(t)
            }
        }
    }

    /// Runs the batch through every layer, returning each layer's input
    /// tensor and the final output.
    pub(crate) fn forward_all(&self, batch: &Tensor4) -> Result<(Vec<Tensor4>, Tensor4)> {
        let (_, h, w, c) = batch.dims();
        if (h, w, c) != self.spec.input_dims {
            return Err(Error::Shape(format!(
                "batch is {:?} per sample, network expects {:?}",
                (h, w, c),
                self.spec.input_dims
            )));
        }
        let mut inputs = Vec::with_capacity(self.spec.layers.len());
        let mut current = batch.clone();
        for i in 0..self.spec.layers.len() {
            inputs.push(current.clone());
            current = self.apply_layer(i, &current)?;
        }
        Ok((inputs, current))
    }

    /// Forward pass: logits (`num_classes × b`) plus the input activations
    /// of every trainable layer.
    pub fn forward(&self, batch: &Tensor4) -> Result<ForwardPass> {
        let (inputs, output) = self.forward_all(batch)?;
        let trainable_inputs = self
            .spec
            .layers
            .iter()
            .zip(&inputs)
            .filter(|(l, _)| l.kind.is_trainable())
            .map(|(_, t)| t.clone())
            .collect();
        Ok(ForwardPass {
            logits: tensor_to_columns(&output),
            trainable_inputs,
        })
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_tensor(rng: &mut ChaCha8Rng, dims: (usize, usize, usize, usize)) -> Tensor4 {
        let len = dims.0 * dims.1 * dims.2 * dims.3;
        let data = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor4::from_vec(dims, data).unwrap()
    }

    pub fn randomize_params(net: &mut Network, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in net.params_mut() {
            let (r, c) = (p.weight.rows(), p.weight.cols());
            let data = (0..r * c).map(|_| rng.random_range(-0.5..0.5)).collect();
            p.weight = Matrix::from_vec(r, c, data).unwrap();
            for b in &mut p.bias {
                *b = rng.random_range(-0.2..0.2);
            }
        }
    }

    /// A small conv/ReLU/conv/ReLU/GAP/dense net for gradient tests.
    pub fn toy_cnn() -> NetworkSpec {
        NetworkSpec {
            input_dims: (5, 5, 2),
            layers: vec![
                LayerSpec {
                    name: "c1".into(),
                    kind: LayerKind::Conv2D {
                        c_o: 3,
                        f_h: 3,
                        f_w: 3,
                        stride: 1,
                        pad: 1,
                    },
                },
                LayerSpec {
                    name: "r1".into(),
                    kind: LayerKind::ReLU,
                },
                LayerSpec {
                    name: "c2".into(),
                    kind: LayerKind::Conv2D {
                        c_o: 4,
                        f_h: 3,
                        f_w: 3,
                        stride: 2,
                        pad: 1,
                    },
                },
                LayerSpec {
                    name: "r2".into(),
                    kind: LayerKind::ReLU,
                },
                LayerSpec {
                    name: "gap".into(),
                    kind: LayerKind::GlobalAvgPool,
                },
                LayerSpec {
                    name: "out".into(),
                    kind: LayerKind::Dense { d_o: 3 },
                },
            ],
            num_classes: 3,
        }
    }
}
