//! Convolution restructuring: receptive-field extraction (im2col), random
//! per-image patch subsampling, and weight reshaping between matrix and
//! 4-D conv forms.
//!
//! One flattening order is used everywhere: a receptive field flattens in
//! (row, col, channel) order, so row index `(r·f_w + c)·c_i + ch`, and
//! patch columns are ordered `(img·out_h + oy)·out_w + ox`. The
//! conv-as-matmul equivalence tests pin this order end to end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Dense 4-D block of 64-bit reals in row-major order.
///
/// Activations use dims `(n, h, w, c)`; conv weights use
/// `(c_o, c_i, f_h, f_w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: (usize, usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor4 {
    /// All-zero tensor of the given dims.
    pub fn zeros(dims: (usize, usize, usize, usize)) -> Tensor4 {
        let len = dims.0 * dims.1 * dims.2 * dims.3;
        Tensor4 {
            dims,
            data: vec![0.0; len],
        }
    }

    /// Builds a tensor from row-major data, validating length and finiteness.
    pub fn from_vec(dims: (usize, usize, usize, usize), data: Vec<f64>) -> Result<Tensor4> {
        let len = dims.0 * dims.1 * dims.2 * dims.3;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "tensor dims {dims:?} need {len} entries, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite tensor entry {bad}")));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn index(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        debug_assert!(i < self.dims.0 && j < self.dims.1 && k < self.dims.2 && l < self.dims.3);
        ((i * self.dims.1 + j) * self.dims.2 + k) * self.dims.3 + l
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[self.index(i, j, k, l)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, value: f64) {
        let idx = self.index(i, j, k, l);
        self.data[idx] = value;
    }
}

/// im2col output: one flattened receptive field per column, tagged with the
/// index and label of the image it came from.
#[derive(Debug, Clone)]
pub struct PatchMatrix {
    /// `f_h·f_w·c_i × n_p` patch matrix.
    pub x: Matrix,
    /// Source image index of each column.
    pub source_image: Vec<usize>,
    /// Label inherited from each column's source image.
    pub labels: Vec<usize>,
}

/// Output spatial extent of a convolution: `⌊(size + 2·pad − f)/stride⌋ + 1`.
pub fn conv_out_extent(size: usize, f: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - f) / stride + 1
}

/// Extracts every receptive field of an `(n,h,w,c)` activation tensor into
/// patch columns, zero-padded, labels inherited per image.
pub fn extract_patches(
    acts: &Tensor4,
    f_h: usize,
    f_w: usize,
    stride: usize,
    pad: usize,
    labels: &[usize],
) -> Result<PatchMatrix> {
    let (n, h, w, c) = acts.dims();
    if f_h == 0 || f_w == 0 || stride == 0 {
        return Err(Error::Parameter(format!(
            "filter {f_h}x{f_w} and stride {stride} must all be at least 1"
        )));
    }
    if f_h > h + 2 * pad || f_w > w + 2 * pad {
        return Err(Error::Shape(format!(
            "filter {f_h}x{f_w} exceeds padded input {}x{}",
            h + 2 * pad,
            w + 2 * pad
        )));
    }
    if labels.len() != n {
        return Err(Error::Parameter(format!(
            "got {} labels for {n} images",
            labels.len()
        )));
    }

    let out_h = conv_out_extent(h, f_h, stride, pad);
    let out_w = conv_out_extent(w, f_w, stride, pad);
    let n_p = n * out_h * out_w;
    let rows = f_h * f_w * c;

    let mut x = Matrix::zeros(rows, n_p);
    let mut source_image = Vec::with_capacity(n_p);
    let mut patch_labels = Vec::with_capacity(n_p);
    for img in 0..n {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let col = (img * out_h + oy) * out_w + ox;
                source_image.push(img);
                patch_labels.push(labels[img]);
                for r in 0..f_h {
                    let y = (oy * stride + r) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for cc in 0..f_w {
                        let xx = (ox * stride + cc) as isize - pad as isize;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        for ch in 0..c {
                            let row = (r * f_w + cc) * c + ch;
                            x.set(row, col, acts.get(img, y as usize, xx as usize, ch));
                        }
                    }
                }
            }
        }
    }
    Ok(PatchMatrix {
        x,
        source_image,
        labels: patch_labels,
    })
}

/// Keeps at most `per_image` uniformly chosen columns per source image,
/// without replacement, preserving column order within each image.
pub fn sample_patches(pm: &PatchMatrix, per_image: usize, seed: u64) -> Result<PatchMatrix> {
    if per_image == 0 {
        return Err(Error::Parameter(
            "patch sample count per image must be at least 1".into(),
        ));
    }
    // Columns of one image are contiguous and ascending by construction.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_p = pm.source_image.len();
    let mut keep: Vec<usize> = Vec::new();
    let mut start = 0;
    while start < n_p {
        let img = pm.source_image[start];
        let mut end = start;
        while end < n_p && pm.source_image[end] == img {
            end += 1;
        }
        let avail = end - start;
        if avail <= per_image {
            keep.extend(start..end);
        } else {
            // Partial Fisher-Yates over local offsets.
            let mut offsets: Vec<usize> = (0..avail).collect();
            for i in 0..per_image {
                let j = rng.random_range(i..avail);
                offsets.swap(i, j);
            }
            let mut chosen: Vec<usize> = offsets[..per_image].to_vec();
            chosen.sort_unstable();
            keep.extend(chosen.iter().map(|o| start + o));
        }
        start = end;
    }

    let rows = pm.x.rows();
    let mut x = Matrix::zeros(rows, keep.len());
    for (new_col, &old_col) in keep.iter().enumerate() {
        for row in 0..rows {
            x.set(row, new_col, pm.x.get(row, old_col));
        }
    }
    Ok(PatchMatrix {
        x,
        source_image: keep.iter().map(|&c| pm.source_image[c]).collect(),
        labels: keep.iter().map(|&c| pm.labels[c]).collect(),
    })
}

/// Reshapes a solved `c_o × (f_h·f_w·c_i)` weight matrix into conv form
/// `(c_o, c_i, f_h, f_w)`, inverting the patch flattening.
pub fn reshape_weight(w: &Matrix, c_i: usize, f_h: usize, f_w: usize) -> Result<Tensor4> {
    if w.cols() != f_h * f_w * c_i {
        return Err(Error::Shape(format!(
            "weight has {} columns, filter {f_h}x{f_w}x{c_i} needs {}",
            w.cols(),
            f_h * f_w * c_i
        )));
    }
    let c_o = w.rows();
    let mut t = Tensor4::zeros((c_o, c_i, f_h, f_w));
    for o in 0..c_o {
        for r in 0..f_h {
            for c in 0..f_w {
                for ch in 0..c_i {
                    t.set(o, ch, r, c, w.get(o, (r * f_w + c) * c_i + ch));
                }
            }
        }
    }
    Ok(t)
}

/// Flattens a `(c_o, c_i, f_h, f_w)` weight tensor to `c_o × (f_h·f_w·c_i)`,
/// the exact inverse of [`reshape_weight`].
pub fn flatten_weight(t: &Tensor4) -> Matrix {
    let (c_o, c_i, f_h, f_w) = t.dims();
    let mut w = Matrix::zeros(c_o, f_h * f_w * c_i);
    for o in 0..c_o {
        for r in 0..f_h {
            for c in 0..f_w {
                for ch in 0..c_i {
                    w.set(o, (r * f_w + c) * c_i + ch, t.get(o, ch, r, c));
                }
            }
        }
    }
    w
}

/// Adjoint of [`extract_patches`]: scatter-adds patch columns back into an
/// `(n,h,w,c)` tensor. Overlapping receptive fields accumulate.
pub fn col2im(
    cols: &Matrix,
    dims: (usize, usize, usize, usize),
    f_h: usize,
    f_w: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor4> {
    let (n, h, w, c) = dims;
    let out_h = conv_out_extent(h, f_h, stride, pad);
    let out_w = conv_out_extent(w, f_w, stride, pad);
    if cols.rows() != f_h * f_w * c || cols.cols() != n * out_h * out_w {
        return Err(Error::Shape(format!(
            "column block is {}x{}, dims {dims:?} with filter {f_h}x{f_w} need {}x{}",
            cols.rows(),
            cols.cols(),
            f_h * f_w * c,
            n * out_h * out_w
        )));
    }
    let mut t = Tensor4::zeros(dims);
    for img in 0..n {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let col = (img * out_h + oy) * out_w + ox;
                for r in 0..f_h {
                    let y = (oy * stride + r) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for cc in 0..f_w {
                        let xx = (ox * stride + cc) as isize - pad as isize;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        for ch in 0..c {
                            let row = (r * f_w + cc) * c + ch;
                            let prev = t.get(img, y as usize, xx as usize, ch);
                            t.set(img, y as usize, xx as usize, ch, prev + cols.get(row, col));
                        }
                    }
                }
            }
        }
    }
    Ok(t)
}
