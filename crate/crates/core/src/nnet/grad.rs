//! Softmax cross-entropy loss and backpropagation through every layer
//! kind.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nnet::{columns_to_tensor, tensor_to_columns, LayerKind, LayerParams, Network};
use crate::patches::{col2im, extract_patches, Tensor4};

/// Mean softmax cross-entropy over logit columns, with its gradient with
/// respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let k = logits.rows();
    let b = logits.cols();
    if labels.len() != b {
        return Err(Error::Shape(format!(
            "got {} labels for {b} logit columns",
            labels.len()
        )));
    }
    let mut grad = Matrix::zeros(k, b);
    let mut loss = 0.0;
    for j in 0..b {
        let label = labels[j];
        if label >= k {
            return Err(Error::Label(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        let max = (0..k).map(|i| logits.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for i in 0..k {
            total += (logits.get(i, j) - max).exp();
        }
        let log_total = total.ln() + max;
        loss += log_total - logits.get(label, j);
        for i in 0..k {
            let p = (logits.get(i, j) - log_total).exp();
            let y = if i == label { 1.0 } else { 0.0 };
            grad.set(i, j, (p - y) / b as f64);
        }
    }
    Ok((loss / b as f64, grad))
}

fn zero_like(p: &LayerParams) -> LayerParams {
    LayerParams {
        weight: Matrix::zeros(p.weight.rows(), p.weight.cols()),
        bias: vec![0.0; p.bias.len()],
    }
}

/// Loss and parameter gradients of the batch under mean softmax
/// cross-entropy. Gradients align with [`Network::params`].
pub fn backward(
    net: &Network,
    batch: &Tensor4,
    labels: &[usize],
) -> Result<(f64, Vec<LayerParams>)> {
    let (inputs, output) = net.forward_all(batch)?;
    let logits = tensor_to_columns(&output);
    let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;

    let mut grads: Vec<LayerParams> = net.params().iter().map(zero_like).collect();
    let mut delta = columns_to_tensor(&dlogits, output.dims())?;

    let mut param_idx = net.params().len();
    for (i, layer) in net.spec().layers.iter().enumerate().rev() {
        let input = &inputs[i];
        if layer.kind.is_trainable() {
            param_idx -= 1;
        }
        delta = match &layer.kind {
            LayerKind::Conv2D {
                c_o,
                f_h,
                f_w,
                stride,
                pad,
            } => {
                let param = &net.params()[param_idx];
                let (b, _, _, _) = input.dims();
                let dummy = vec![0usize; b];
                let pm = extract_patches(input, *f_h, *f_w, *stride, *pad, &dummy)?;

                // Gather the delta tensor into receptive-field column order.
                let (db_, oh, ow, _) = delta.dims();
                let mut dout = Matrix::zeros(*c_o, db_ * oh * ow);
                for img in 0..db_ {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let col = (img * oh + oy) * ow + ox;
                            for o in 0..*c_o {
                                dout.set(o, col, delta.get(img, oy, ox, o));
                            }
                        }
                    }
                }

                grads[param_idx].weight = dout.matmul(&pm.x.transpose())?;
                for o in 0..*c_o {
                    grads[param_idx].bias[o] = dout.row(o).iter().sum();
                }
                let dcols = param.weight.transpose().matmul(&dout)?;
                col2im(&dcols, input.dims(), *f_h, *f_w, *stride, *pad)?
            }
            LayerKind::Dense { d_o } => {
                let param = &net.params()[param_idx];
                let x = tensor_to_columns(input);
                let dout = tensor_to_columns(&delta);
                grads[param_idx].weight = dout.matmul(&x.transpose())?;
                for r in 0..*d_o {
                    grads[param_idx].bias[r] = dout.row(r).iter().sum();
                }
                let dx = param.weight.transpose().matmul(&dout)?;
                columns_to_tensor(&dx, input.dims())?
            }
            LayerKind::ReLU => {
                let mut d = delta.clone();
                for (dv, &iv) in d.data_mut().iter_mut().zip(input.data()) {
                    if iv <= 0.0 {
                        *dv = 0.0;
                    }
                }
                d
            }
            LayerKind::Flatten => Tensor4::from_vec(input.dims(), delta.data().to_vec())?,
            LayerKind::GlobalAvgPool => {
                let (b, h, w, c) = input.dims();
                let scale = 1.0 / (h * w) as f64;
                let mut d = Tensor4::zeros(input.dims());
                for img in 0..b {
                    for ch in 0..c {
                        let v = delta.get(img, 0, 0, ch) * scale;
                        for y in 0..h {
                            for x in 0..w {
                                d.set(img, y, x, ch, v);
                            }
                        }
                    }
                }
                d
            }
        };
    }
    Ok((loss, grads))
}
