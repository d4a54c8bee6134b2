//! Sequential layer-wise weight initialization: capture each trainable
//! layer's input activations, build its latent code, solve for the weights,
//! install them, and propagate the subset forward through the updated
//! layer.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use crate::dataio::LabeledDataset;
use crate::error::{Error, Result};
use crate::latent::{
    kmeans_code, lda_code, one_hot_code, pca_code, LatentCodeKind, LatentCodeSpec,
};
use crate::nnet::{tensor_to_columns, LayerKind, Network};
use crate::patches::{extract_patches, sample_patches};
use crate::rngutil::derive_seed;
use crate::sylvester::{build_operands, objective, solve, solve_auto};

/// Driver settings.
#[derive(Debug, Clone)]
pub struct InitConfig {
    /// Encoding-loss weight of the objective.
    pub lambda: f64,
    /// Stratified-subset size driving the initialization.
    pub per_class_samples: usize,
    /// Receptive-field columns kept per image for conv layers.
    pub patch_samples_per_image: usize,
    /// Code for every trainable layer except the last; `None` keeps the
    /// principal-component default.
    pub default_code: Option<LatentCodeKind>,
    /// Per-layer code overrides by layer name; these also override the
    /// last layer's one-hot default.
    pub layer_codes: HashMap<String, LatentCodeKind>,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    /// Denominator clip threshold for the solve; `None` derives it from
    /// the operand spectra.
    pub eps: Option<f64>,
    pub seed: u64,
    /// When set, only these layers are (re)initialized; the rest keep
    /// their parameters but still propagate activations.
    pub layer_filter: Option<HashSet<String>>,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            lambda: 10.0,
            per_class_samples: 100,
            patch_samples_per_image: 16,
            default_code: None,
            layer_codes: HashMap::new(),
            kmeans_max_iters: 100,
            kmeans_tol: 1e-6,
            eps: None,
            seed: 0,
            layer_filter: None,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Parameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.per_class_samples == 0 {
            return Err(Error::Parameter(
                "per-class sample count must be at least 1".into(),
            ));
        }
        if self.patch_samples_per_image == 0 {
            return Err(Error::Parameter(
                "patch sample count per image must be at least 1".into(),
            ));
        }
        if let Some(eps) = self.eps {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
            }
        }
        Ok(())
    }
}

/// Outcome of one layer's solve.
#[derive(Debug, Clone)]
pub struct LayerInitRecord {
    pub layer: String,
    pub d_i: usize,
    pub d_o: usize,
    /// Samples (dense) or sampled patches (conv) behind the operands.
    pub n_used: usize,
    pub code: LatentCodeKind,
    /// Relative equation residual of the installed weights.
    pub residual: f64,
    /// Encode/decode objective value at the installed weights.
    pub objective: f64,
    pub clipped: usize,
    pub seconds: f64,
    /// Standard deviation of the input activation entries, for scale
    /// diagnostics; not part of the CSV.
    pub input_act_std: f64,
}

/// Per-layer records plus total wall time.
#[derive(Debug, Clone)]
pub struct InitReport {
    pub layers: Vec<LayerInitRecord>,
    pub total_seconds: f64,
}

impl InitReport {
    /// CSV form: `layer,d_i,d_o,n_used,code,residual,objective,clipped,seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,d_i,d_o,n_used,code,residual,objective,clipped,seconds\n");
        for r in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6e},{:.6e},{},{:.6}\n",
                r.layer, r.d_i, r.d_o, r.n_used, r.code, r.residual, r.objective, r.clipped,
                r.seconds
            ));
        }
        out
    }
}

/// Draws min(`per_class`, available) samples per class uniformly without
/// replacement; output is class-major with ascending original indices
/// within each class.
pub fn stratified_subset(
    data: &LabeledDataset,
    per_class: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if data.is_empty() {
        return Err(Error::Parameter("dataset is empty".into()));
    }
    if per_class == 0 {
        return Err(Error::Parameter(
            "per-class sample count must be at least 1".into(),
        ));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes];
    for (i, &label) in data.labels.iter().enumerate() {
        by_class[label].push(i);
    }
    if let Some(class) = by_class.iter().position(|c| c.is_empty()) {
        return Err(Error::Parameter(format!("class {class} has no samples")));
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    use rand::{Rng, SeedableRng};
    let mut chosen = Vec::new();
    for members in &by_class {
        if members.len() <= per_class {
            chosen.extend_from_slice(members);
        } else {
            let mut local: Vec<usize> = (0..members.len()).collect();
            for i in 0..per_class {
                let j = rng.random_range(i..local.len());
                local.swap(i, j);
            }
            let mut picked: Vec<usize> = local[..per_class].iter().map(|&o| members[o]).collect();
            picked.sort_unstable();
            chosen.extend(picked);
        }
    }
    data.select(&chosen)
}

fn population_std(data: &[f64]) -> f64 {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.max(0.0).sqrt()
}

/// Code for a layer: explicit override, then the global default, then
/// principal components (one-hot for the last trainable layer).
fn code_for(cfg: &InitConfig, name: &str, is_last_trainable: bool) -> LatentCodeKind {
    if let Some(&kind) = cfg.layer_codes.get(name) {
        return kind;
    }
    if is_last_trainable {
        return LatentCodeKind::OneHot;
    }
    cfg.default_code.unwrap_or(LatentCodeKind::Pca)
}

/// Initializes the filtered trainable layers of `net` in network order,
/// propagating a stratified subset of `data` forward as each layer is
/// installed. Biases are set to zero.
pub fn initialize(
    net: &mut Network,
    data: &LabeledDataset,
    cfg: &InitConfig,
) -> Result<InitReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Parameter("dataset is empty".into()));
    }
    let trainable: Vec<String> = net
        .spec()
        .trainable_names()
        .iter()
        .map(|s| s.to_string())
        .collect();
    if let Some(filter) = &cfg.layer_filter {
        for name in filter {
            if !trainable.iter().any(|t| t == name) {
                return Err(Error::Config(format!(
                    "layer filter names unknown or non-trainable layer '{name}'"
                )));
            }
        }
    }
    let last_trainable = trainable.last().cloned().unwrap_or_default();

    let total_start = Instant::now();
    let subset = stratified_subset(data, cfg.per_class_samples, cfg.seed)?;
    let labels = subset.labels.clone();
    let num_classes = subset.num_classes;
    let mut current = subset.images.clone();

    let layer_count = net.spec().layers.len();
    let mut records = Vec::new();
    for i in 0..layer_count {
        let (name, kind) = {
            let layer = &net.spec().layers[i];
            (layer.name.clone(), layer.kind.clone())
        };
        let selected = kind.is_trainable()
            && cfg
                .layer_filter
                .as_ref()
                .map(|f| f.contains(&name))
                .unwrap_or(true);
        if selected {
            let layer_start = Instant::now();

            let (x, code_labels) = match &kind {
                LayerKind::Conv2D {
                    f_h, f_w, stride, pad, ..
                } => {
                    let pm = extract_patches(&current, *f_h, *f_w, *stride, *pad, &labels)?;
                    let kept = sample_patches(
                        &pm,
                        cfg.patch_samples_per_image,
                        derive_seed(cfg.seed, 2 * i as u64),
                    )?;
                    (kept.x, kept.labels)
                }
                LayerKind::Dense { .. } => (tensor_to_columns(&current), labels.clone()),
                _ => unreachable!("only trainable layers are selected"),
            };
            if x.frobenius_norm() == 0.0 {
                return Err(Error::DegenerateActivations(name));
            }

            let d_o = net.param_for(&name).expect("trainable layer").weight.rows();
            let code = code_for(cfg, &name, name == last_trainable);
            let code_seed = derive_seed(cfg.seed, 2 * i as u64 + 1);
            let s = match code {
                LatentCodeKind::Pca => pca_code(&x, d_o, code_seed),
                LatentCodeKind::OneHot => {
                    if d_o != num_classes {
                        Err(Error::Config(format!(
                            "one-hot code needs {num_classes} outputs, layer has {d_o}"
                        )))
                    } else {
                        one_hot_code(&code_labels, num_classes)
                    }
                }
                LatentCodeKind::KMeans => {
                    let mut spec = LatentCodeSpec::new(code, code_seed);
                    spec.kmeans_max_iters = cfg.kmeans_max_iters;
                    spec.kmeans_tol = cfg.kmeans_tol;
                    kmeans_code(&x, d_o, &spec)
                }
                LatentCodeKind::Lda => lda_code(&x, &code_labels, d_o, code_seed),
            }
            .map_err(|e| Error::Config(format!("layer '{name}': {e}")))?;

            let ops = build_operands(&x, &s, cfg.lambda)?;
            let (w, diag) = match cfg.eps {
                Some(eps) => solve(&ops, eps)?,
                None => solve_auto(&ops)?,
            };
            let objective_value = objective(&w, &x, &s, cfg.lambda)?;
            let bias = vec![0.0; d_o];
            let d_i = x.rows();
            let n_used = x.cols();
            let input_act_std = population_std(x.data());
            net.install_weights(&name, w, bias)?;

            records.push(LayerInitRecord {
                layer: name,
                d_i,
                d_o,
                n_used,
                code,
                residual: diag.residual,
                objective: objective_value,
                clipped: diag.clipped_denominators,
                seconds: layer_start.elapsed().as_secs_f64(),
                input_act_std,
            });
        }
        current = net.apply_layer(i, &current)?;
    }

    Ok(InitReport {
        layers: records,
        total_seconds: total_start.elapsed().as_secs_f64(),
    })
}
