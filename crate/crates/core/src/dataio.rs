//! Dataset loading: CIFAR-10/100 binary archives, synthetic blob images,
//! and the labeled-dataset carrier shared by the trainer and the
//! initialization driver.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::patches::Tensor4;

/// Which half of an on-disk dataset to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images with labels; pixel values lie in [0,1].
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    /// `(n, h, w, c)` image block.
    pub images: Tensor4,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl LabeledDataset {
    /// Validates label count and range against the image block.
    pub fn new(
        images: Tensor4,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<LabeledDataset> {
        let n = images.dims().0;
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "got {} labels for {n} images",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Label(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledDataset {
            images,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.dims().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// New dataset holding the given samples, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let (n, h, w, c) = self.images.dims();
        let stride = h * w * c;
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &idx in indices {
            if idx >= n {
                return Err(Error::Parameter(format!(
                    "sample index {idx} out of range for {n} samples"
                )));
            }
            data.extend_from_slice(&self.images.data()[idx * stride..(idx + 1) * stride]);
            labels.push(self.labels[idx]);
        }
        let images = Tensor4::from_vec((indices.len(), h, w, c), data)?;
        LabeledDataset::new(images, labels, self.num_classes, self.name.clone())
    }

    /// Splits into (first `per_class` samples of each class, the rest),
    /// preserving sample order.
    pub fn split_per_class(&self, per_class: usize) -> Result<(LabeledDataset, LabeledDataset)> {
        let mut taken = vec![0usize; self.num_classes];
        let mut head = Vec::new();
        let mut tail = Vec::new();
        for (i, &label) in self.labels.iter().enumerate() {
            if taken[label] < per_class {
                taken[label] += 1;
                head.push(i);
            } else {
                tail.push(i);
            }
        }
        Ok((self.select(&head)?, self.select(&tail)?))
    }
}

/// Parses fixed-size records of `1 + extra_label_bytes + 3072` bytes into
/// 32×32×3 images; CIFAR archives store each channel plane row-major,
/// red then green then blue.
fn parse_cifar_records(
    bytes: &[u8],
    extra_label_bytes: usize,
    num_classes: usize,
    path: &Path,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let record = 1 + extra_label_bytes + 3072;
    if bytes.len() % record != 0 {
        return Err(Error::Format(format!(
            "{} has {} bytes, not a multiple of the {record}-byte record",
            path.display(),
            bytes.len()
        )));
    }
    let n = bytes.len() / record;
    let mut data = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for r in 0..n {
        let rec = &bytes[r * record..(r + 1) * record];
        let label = rec[extra_label_bytes] as usize;
        if label >= num_classes {
            return Err(Error::Label(format!(
                "label {label} out of range for {num_classes} classes in {}",
                path.display()
            )));
        }
        labels.push(label);
        let pixels = &rec[1 + extra_label_bytes..];
        for y in 0..32 {
            for x in 0..32 {
                for ch in 0..3 {
                    data.push(pixels[ch * 1024 + y * 32 + x] as f64 / 255.0);
                }
            }
        }
    }
    Ok((data, labels))
}

fn load_cifar_files(
    dir: &Path,
    files: &[&str],
    extra_label_bytes: usize,
    num_classes: usize,
    name: &str,
) -> Result<LabeledDataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for file in files {
        let path = dir.join(file);
        let bytes = std::fs::read(&path)?;
        let (d, l) = parse_cifar_records(&bytes, extra_label_bytes, num_classes, &path)?;
        data.extend(d);
        labels.extend(l);
    }
    let n = labels.len();
    let images = Tensor4::from_vec((n, 32, 32, 3), data)?;
    LabeledDataset::new(images, labels, num_classes, name)
}

/// Loads the CIFAR-10 binary archive: train split from
/// `data_batch_1..5.bin`, test split from `test_batch.bin`, 3073-byte
/// records of one label byte and 3072 pixel bytes scaled by 1/255.
pub fn load_cifar10(dir: &Path, split: Split) -> Result<LabeledDataset> {
    let files: &[&str] = match split {
        Split::Train => &[
            "data_batch_1.bin",
            "data_batch_2.bin",
            "data_batch_3.bin",
            "data_batch_4.bin",
            "data_batch_5.bin",
        ],
        Split::Test => &["test_batch.bin"],
    };
    load_cifar_files(dir, files, 0, 10, "cifar10")
}

/// Loads the CIFAR-100 binary archive (`train.bin` / `test.bin`): 3074-byte
/// records of a coarse label byte, a fine label byte, and 3072 pixel bytes.
/// The fine label is used.
pub fn load_cifar100(dir: &Path, split: Split) -> Result<LabeledDataset> {
    let files: &[&str] = match split {
        Split::Train => &["train.bin"],
        Split::Test => &["test.bin"],
    };
    load_cifar_files(dir, files, 1, 100, "cifar100")
}

/// Generates class blobs: each class has a fixed random prototype image in
/// [0,1], and samples are the prototype plus Gaussian noise scaled by
/// `spread`, clamped to [0,1]. Samples are class-major.
pub fn synth_blobs(
    classes: usize,
    side: usize,
    channels: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 {
        return Err(Error::Parameter(format!(
            "blob generation needs at least 2 classes, got {classes}"
        )));
    }
    if side == 0 || channels == 0 || per_class == 0 {
        return Err(Error::Parameter(format!(
            "blob dims must be positive, got side {side}, channels {channels}, per_class {per_class}"
        )));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::Parameter(format!(
            "spread must be non-negative, got {spread}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = side * side * channels;
    let prototypes: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..pixels).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();

    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * pixels);
    let mut labels = Vec::with_capacity(n);
    for (class, proto) in prototypes.iter().enumerate() {
        for _ in 0..per_class {
            labels.push(class);
            for &p in proto {
                let noise: f64 = rng.sample(StandardNormal);
                data.push((p + noise * spread).clamp(0.0, 1.0));
            }
        }
    }
    let images = Tensor4::from_vec((n, side, side, channels), data)?;
    LabeledDataset::new(images, labels, classes, "blobs")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &Path, name: &str, bytes: &[u8]) {
        std::fs::write(dir.join(name), bytes).unwrap();
    }

    fn cifar10_record(label: u8, fill: u8) -> Vec<u8> {
        let mut rec = vec![label];
        rec.extend(std::iter::repeat(fill).take(3072));
        rec
    }

    #[test]
    fn cifar10_two_record_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = cifar10_record(3, 0);
        bytes.extend(cifar10_record(7, 255));
        write_file(dir.path(), "test_batch.bin", &bytes);
        let ds = load_cifar10(dir.path(), Split::Test).unwrap();
        assert_eq!(ds.images.dims(), (2, 32, 32, 3));
        assert_eq!(ds.labels, vec![3, 7]);
        assert_eq!(ds.num_classes, 10);
        assert_eq!(ds.images.get(0, 0, 0, 0), 0.0);
        assert_eq!(ds.images.get(1, 31, 31, 2), 1.0);
    }

    #[test]
    fn cifar10_pixel_layout() {
        // One record with a single marked pixel per channel plane.
        let mut rec = cifar10_record(0, 0);
        rec[1 + 1 * 32 + 2] = 255; // red plane, y=1, x=2
        rec[1 + 1024 + 5 * 32 + 7] = 51; // green plane, y=5, x=7
        rec[1 + 2048] = 102; // blue plane, y=0, x=0
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "test_batch.bin", &rec);
        let ds = load_cifar10(dir.path(), Split::Test).unwrap();
        assert_eq!(ds.images.get(0, 1, 2, 0), 1.0);
        assert_eq!(ds.images.get(0, 5, 7, 1), 51.0 / 255.0);
        assert_eq!(ds.images.get(0, 0, 0, 2), 102.0 / 255.0);
        assert_eq!(ds.images.get(0, 1, 2, 1), 0.0);
    }

    #[test]
    fn cifar10_truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "test_batch.bin", &vec![0u8; 3072]);
        assert!(matches!(
            load_cifar10(dir.path(), Split::Test),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn cifar10_missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_cifar10(dir.path(), Split::Test),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn cifar10_train_concatenates_batches() {
        let dir = tempfile::tempdir().unwrap();
        for i in 1..=5 {
            write_file(
                dir.path(),
                &format!("data_batch_{i}.bin"),
                &cifar10_record(i as u8, 0),
            );
        }
        let ds = load_cifar10(dir.path(), Split::Train).unwrap();
        assert_eq!(ds.labels, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn cifar10_bad_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "test_batch.bin", &cifar10_record(10, 0));
        assert!(matches!(
            load_cifar10(dir.path(), Split::Test),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn cifar100_uses_fine_label() {
        let mut rec = vec![5u8, 42u8];
        rec.extend(std::iter::repeat(128u8).take(3072));
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "train.bin", &rec);
        let ds = load_cifar100(dir.path(), Split::Train).unwrap();
        assert_eq!(ds.labels, vec![42]);
        assert_eq!(ds.num_classes, 100);
        assert_eq!(ds.images.get(0, 0, 0, 0), 128.0 / 255.0);
    }

    #[test]
    fn cifar100_empty_file_gives_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "test.bin", &[]);
        let ds = load_cifar100(dir.path(), Split::Test).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn cifar100_size_check_uses_3074_byte_records() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "test.bin", &vec![0u8; 3073]);
        assert!(matches!(
            load_cifar100(dir.path(), Split::Test),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn blobs_zero_spread_repeats_prototype() {
        let ds = synth_blobs(2, 4, 1, 3, 0.0, 9).unwrap();
        let pixels = 16;
        for class in 0..2 {
            let base = class * 3;
            let first = &ds.images.data()[base * pixels..(base + 1) * pixels];
            for i in 1..3 {
                let other = &ds.images.data()[(base + i) * pixels..(base + i + 1) * pixels];
                assert_eq!(first, other);
            }
        }
        assert_ne!(
            &ds.images.data()[..pixels],
            &ds.images.data()[3 * pixels..4 * pixels]
        );
    }

    #[test]
    fn blobs_are_balanced_and_class_major() {
        let ds = synth_blobs(3, 8, 1, 50, 0.1, 0).unwrap();
        assert_eq!(ds.len(), 150);
        for (i, &label) in ds.labels.iter().enumerate() {
            assert_eq!(label, i / 50);
        }
        assert!(ds.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn blobs_nearest_class_mean_is_perfect_at_small_spread() {
        let ds = synth_blobs(3, 8, 1, 20, 0.05, 1).unwrap();
        let pixels = 64;
        let mut means = vec![vec![0.0; pixels]; 3];
        for i in 0..ds.len() {
            let img = &ds.images.data()[i * pixels..(i + 1) * pixels];
            for (m, &v) in means[ds.labels[i]].iter_mut().zip(img) {
                *m += v / 20.0;
            }
        }
        for i in 0..ds.len() {
            let img = &ds.images.data()[i * pixels..(i + 1) * pixels];
            let dist = |m: &Vec<f64>| -> f64 {
                m.iter().zip(img).map(|(a, b)| (a - b) * (a - b)).sum()
            };
            let predicted = (0..3).min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b]))).unwrap();
            assert_eq!(predicted, ds.labels[i]);
        }
    }

    #[test]
    fn blobs_deterministic_for_fixed_seed() {
        let a = synth_blobs(2, 5, 2, 4, 0.3, 77).unwrap();
        let b = synth_blobs(2, 5, 2, 4, 0.3, 77).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn blobs_reject_bad_parameters() {
        assert!(matches!(
            synth_blobs(1, 4, 1, 3, 0.1, 0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            synth_blobs(2, 4, 1, 3, -0.5, 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn select_reorders_and_validates() {
        let ds = synth_blobs(2, 3, 1, 2, 0.1, 5).unwrap();
        let sub = ds.select(&[3, 0]).unwrap();
        assert_eq!(sub.labels, vec![1, 0]);
        assert_eq!(sub.images.dims(), (2, 3, 3, 1));
        assert_eq!(
            &sub.images.data()[..9],
            &ds.images.data()[3 * 9..4 * 9]
        );
        assert!(matches!(ds.select(&[4]), Err(Error::Parameter(_))));
    }

    #[test]
    fn split_per_class_takes_leading_samples() {
        let ds = synth_blobs(2, 3, 1, 5, 0.1, 6).unwrap();
        let (head, tail) = ds.split_per_class(2).unwrap();
        assert_eq!(head.len(), 4);
        assert_eq!(tail.len(), 6);
        assert_eq!(head.labels, vec![0, 0, 1, 1]);
        assert_eq!(tail.labels, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn dataset_new_validates() {
        let images = Tensor4::zeros((2, 2, 2, 1));
        assert!(matches!(
            LabeledDataset::new(images.clone(), vec![0], 2, "x"),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            LabeledDataset::new(images, vec![0, 2], 2, "x"),
            Err(Error::Label(_))
        ));
    }
}
