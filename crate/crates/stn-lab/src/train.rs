//! Deterministic training and evaluation for the perturbed-digit
//! experiments, plus checkpointing and CSV report emission.

use crate::arch::{builtin, ArchitectureSpec};
use crate::data::{
    fnv1a64, global_stats, normalize_with, synth_rotated, synth_scaled, synth_translated,
    LabeledImageSet, Perturbation, Variant,
};
use crate::error::{Error, Result};
use crate::network::{ForwardPass, Network, RunOptions};
use crate::pose::{self, PoseKind, PoseRecord, PoseSummary};
use crate::rng::StreamRng;
use crate::sgd::SgdState;
use crate::tensor::Tensor;
use crate::warp::{AffineTransform, Frame};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub spec: String,
    pub variant: Variant,
    pub seed: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Iterations per learning-rate stage; each stage divides the rate
    /// by 10. The desk default is 3000 + 1000.
    #[serde(default = "default_stages")]
    pub stage_iters: Vec<usize>,
    #[serde(default = "default_lr")]
    pub base_lr: f64,
    #[serde(default = "default_multiplier")]
    pub loc_lr_multiplier: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub nesterov: bool,
    #[serde(default)]
    pub l2: f64,
    /// Training images drawn from the head of the source set.
    #[serde(default = "default_subset")]
    pub train_subset: usize,
    /// Test images in the seeded eval set.
    #[serde(default = "default_eval_images")]
    pub eval_images: usize,
    /// Random transforms generated per test image.
    #[serde(default = "default_eval_transforms")]
    pub eval_transforms: usize,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

fn default_batch() -> usize {
    64
}
fn default_stages() -> Vec<usize> {
    vec![3000, 1000]
}
fn default_lr() -> f64 {
    0.01
}
fn default_multiplier() -> f64 {
    1.0
}
fn default_subset() -> usize {
    10_000
}
fn default_eval_images() -> usize {
    1000
}
fn default_eval_transforms() -> usize {
    10
}

impl TrainConfig {
    pub fn desk(spec: &str, variant: Variant, seed: u64) -> Self {
        TrainConfig {
            spec: spec.into(),
            variant,
            seed,
            batch_size: default_batch(),
            stage_iters: default_stages(),
            base_lr: default_lr(),
            loc_lr_multiplier: default_multiplier(),
            momentum: 0.0,
            nesterov: false,
            l2: 0.0,
            train_subset: default_subset(),
            eval_images: default_eval_images(),
            eval_transforms: default_eval_transforms(),
            log_every: default_log_every(),
        }
    }

    pub fn total_steps(&self) -> usize {
        self.stage_iters.iter().sum()
    }
}

fn default_log_every() -> usize {
    100
}

fn synth_variant(src: &LabeledImageSet, variant: Variant, seed: u64) -> Result<LabeledImageSet> {
    match variant {
        Variant::Plain => Ok(src.clone()),
        Variant::R => synth_rotated(src, seed),
        Variant::T => synth_translated(src, seed),
        Variant::S => synth_scaled(src, seed),
    }
}

/// Clones `count` images drawn by index into a new plain set.
fn gather(src: &LabeledImageSet, indices: &[usize]) -> LabeledImageSet {
    let (h, w) = src.dims();
    let mut values = Vec::with_capacity(indices.len() * h * w);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        values.extend_from_slice(&src.images.values()[i * h * w..(i + 1) * h * w]);
        labels.push(src.labels[i]);
    }
    let images = Tensor::new(vec![indices.len(), 1, h, w], values).expect("gather");
    LabeledImageSet::new(images, labels, vec![Perturbation::None; indices.len()], src.variant)
        .expect("gather")
}

pub struct TrainOutcome {
    pub network: Network<f32>,
    /// (step, training loss) sampled every `log_every` steps.
    pub log: Vec<(usize, f64)>,
    /// Normalization stats applied to every batch (reused at eval).
    pub stats: (f32, f32),
}

/// Trains a network on continuously regenerated random perturbations
/// of a plain source set. Deterministic in (config, source data).
pub fn train(config: &TrainConfig, plain_train: &LabeledImageSet) -> Result<TrainOutcome> {
    let spec = builtin(&config.spec)?;
    train_with_spec(&spec, config, plain_train)
}

pub fn train_with_spec(
    spec: &ArchitectureSpec,
    config: &TrainConfig,
    plain_train: &LabeledImageSet,
) -> Result<TrainOutcome> {
    if plain_train.variant != Variant::Plain {
        return Err(Error::data("train expects a plain (unperturbed) source set"));
    }
    let subset = plain_train.clone().truncated(config.train_subset);
    if subset.is_empty() {
        return Err(Error::data("empty training subset"));
    }
    // fixed normalization stats from one reference synthesis pass
    let stats_seed = StreamRng::new(config.seed).split(0x57A7).next_u64();
    let reference = synth_variant(&subset, config.variant, stats_seed)?;
    let stats = global_stats(&reference)?;
    drop(reference);

    let mut net = Network::<f32>::build(spec, config.seed)?;
    let mut sgd = SgdState::new(config.base_lr, config.momentum, config.nesterov, config.l2);
    let mut idx_rng = StreamRng::new(config.seed).split(0x1D);
    let mut dropout_rng = StreamRng::new(config.seed).split(0xD0);
    let step_seeds = StreamRng::new(config.seed).split(0x5E);

    let mut log = Vec::new();
    let mut step = 0usize;
    for (stage, &iters) in config.stage_iters.iter().enumerate() {
        sgd.learning_rate = config.base_lr / 10f64.powi(stage as i32);
        for _ in 0..iters {
            let indices: Vec<usize> = (0..config.batch_size).map(|_| idx_rng.below(subset.len())).collect();
            let batch_src = gather(&subset, &indices);
            let batch_seed = step_seeds.split(step as u64).next_u64();
            let batch = synth_variant(&batch_src, config.variant, batch_seed)?;
            let batch = normalize_with(batch, stats)?;
            let labels: Vec<usize> = batch.labels.iter().map(|&l| l as usize).collect();

            let mut pass = net.forward(
                &batch.images,
                Some(&labels),
                &RunOptions { train: true, ..Default::default() },
                &mut dropout_rng,
            )?;
            let loss = pass.graph.value(pass.loss.expect("loss node")).values()[0] as f64;
            if !loss.is_finite() {
                return Err(Error::Diverged { step });
            }
            if step % config.log_every == 0 {
                log.push((step, loss));
            }
            net.train_step(&mut pass, &mut sgd, config.loc_lr_multiplier)?;
            step += 1;
        }
    }
    Ok(TrainOutcome { network: net, log, stats })
}

/// Builds the seeded eval set: `eval_transforms` fresh random
/// transforms of each of the first `eval_images` test images.
/// Returned unnormalized; apply the training stats before evaluating.
pub fn build_eval_set(
    plain_test: &LabeledImageSet,
    variant: Variant,
    eval_images: usize,
    eval_transforms: usize,
    seed: u64,
) -> Result<LabeledImageSet> {
    if plain_test.variant != Variant::Plain {
        return Err(Error::data("eval set builder expects a plain source set"));
    }
    let base = plain_test.clone().truncated(eval_images);
    if base.is_empty() {
        return Err(Error::data("empty eval source"));
    }
    let indices: Vec<usize> = (0..eval_transforms).flat_map(|_| 0..base.len()).collect();
    let tiled = gather(&base, &indices);
    synth_variant(&tiled, variant, StreamRng::new(seed).split(0xE7A1).next_u64())
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub spec: String,
    pub variant: Variant,
    pub seed: u64,
    pub samples: usize,
    pub error_pct: f64,
    #[serde(skip)]
    pub pose: Option<PoseSummary>,
    pub pose_average: Option<f64>,
    /// Mean determinant of the predicted grid-space matrices.
    pub mean_grid_det: Option<f64>,
    /// (applied theta, compensation -theta') per eval sample, for the
    /// 1-d kinds; the x component for translations.
    #[serde(skip)]
    pub heatmap: Vec<(f64, f64)>,
}

/// Converts one predicted grid-space matrix into a pose record. The
/// compensation is oriented so a perfect transformer yields
/// theta + theta_prime constant: rotation and scale flip sign with the
/// frame inside the pose module; translation compensation is the
/// negated content displacement of the sampling transform.
fn to_pose_record(
    label: u8,
    perturbation: &Perturbation,
    matrix: &AffineTransform,
    pixel_scale: f64,
) -> Result<Option<PoseRecord>> {
    Ok(match *perturbation {
        Perturbation::None => None,
        Perturbation::Rotation(theta) => Some(PoseRecord {
            label,
            kind: PoseKind::Rotation,
            theta: (theta, 0.0),
            theta_prime: (pose::rotation_of(matrix)?, 0.0),
        }),
        Perturbation::Scale(theta) => Some(PoseRecord {
            label,
            kind: PoseKind::Scale,
            theta: (theta, 0.0),
            theta_prime: (pose::scale_of(matrix)?, 0.0),
        }),
        Perturbation::Translation(tx, ty) => {
            let (sx, sy) = pose::translation_of(matrix, pixel_scale)?;
            Some(PoseRecord {
                label,
                kind: PoseKind::Translation,
                theta: (tx, ty),
                theta_prime: (-sx, -sy),
            })
        }
    })
}

/// Side-effect-free evaluation: classification error, pose statistics
/// extracted from the predicted transforms, mean determinant, and the
/// heatmap samples.
pub fn evaluate(
    net: &Network<f32>,
    eval_set: &LabeledImageSet,
    seed: u64,
    batch_size: usize,
) -> Result<EvalReport> {
    if eval_set.normalization.is_none() && eval_set.variant != Variant::Plain {
        return Err(Error::data("evaluate expects a normalized eval set"));
    }
    let n = eval_set.len();
    let (h, w) = eval_set.dims();
    let mut errors = 0usize;
    let mut records: Vec<PoseRecord> = Vec::new();
    let mut heatmap = Vec::new();
    let mut det_sum = 0.0f64;
    let mut det_count = 0usize;
    let pixel_scale = match net.spec.st.first() {
        Some(st) => pose::effective_pixel_scale(&net.spec.st_context(st)?),
        None => 1.0,
    };
    let mut rng = StreamRng::new(seed); // dropout is inert in eval mode

    let mut at = 0;
    while at < n {
        let count = batch_size.min(n - at);
        let values = eval_set.images.values()[at * h * w..(at + count) * h * w].to_vec();
        let images = Tensor::new(vec![count, 1, h, w], values)?;
        let pass: ForwardPass<f32> = net.forward(&images, None, &RunOptions::default(), &mut rng)?;
        let logits = pass.graph.value(pass.logits);
        let (rows, k) = logits.dims2()?;
        for r in 0..rows {
            let row = &logits.values()[r * k..(r + 1) * k];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best != eval_set.labels[at + r] as usize {
                errors += 1;
            }
        }
        if let Some(mat_node) = pass.st_matrix {
            let mats = pass.graph.value(mat_node);
            for r in 0..rows {
                let m: Vec<f64> = mats.values()[r * 6..(r + 1) * 6].iter().map(|&v| v as f64).collect();
                let t = AffineTransform::new([[m[0], m[1], m[2]], [m[3], m[4], m[5]]], Frame::GridSpace);
                det_sum += t.det();
                det_count += 1;
                if let Some(rec) =
                    to_pose_record(eval_set.labels[at + r], &eval_set.perturbations[at + r], &t, pixel_scale)?
                {
                    records.push(rec);
                    heatmap.push((rec.theta.0, -rec.theta_prime.0));
                }
            }
        }
        at += count;
    }

    let pose = if records.is_empty() {
        None
    } else {
        Some(pose::pose_summary(&records)?)
    };
    Ok(EvalReport {
        spec: net.spec.name.clone(),
        variant: eval_set.variant,
        seed,
        samples: n,
        error_pct: 100.0 * errors as f64 / n as f64,
        pose_average: pose.as_ref().map(|p| p.average),
        pose,
        mean_grid_det: if det_count > 0 { Some(det_sum / det_count as f64) } else { None },
        heatmap,
    })
}

// ---- checkpoints ----------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"STNC";
const CHECKPOINT_VERSION: u16 = 1;

/// Serializes spec JSON, normalization stats and every named tensor as
/// 32-bit little-endian values. Byte-stable: saving a loaded
/// checkpoint reproduces the file exactly.
pub fn checkpoint_save(net: &Network<f32>, stats: (f32, f32), path: &Path) -> Result<()> {
    let spec_json = serde_json::to_string(&net.spec)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&net.spec.hash()?.to_le_bytes());
    out.extend_from_slice(&stats.0.to_le_bytes());
    out.extend_from_slice(&stats.1.to_le_bytes());
    out.extend_from_slice(&(spec_json.len() as u32).to_le_bytes());
    out.extend_from_slice(spec_json.as_bytes());
    out.extend_from_slice(&(net.params().len() as u32).to_le_bytes());
    for (t, info) in net.params().iter().zip(net.info()) {
        let name = info.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, &out)?;
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<(Network<f32>, (f32, f32))> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let fail = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 22 || &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let stored_hash = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let mean = f32::from_le_bytes(bytes[14..18].try_into().unwrap());
    let std = f32::from_le_bytes(bytes[18..22].try_into().unwrap());
    let mut at = 22;
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        if *at + n > bytes.len() {
            return Err(Error::Checkpoint(format!("{}: truncated", path.display())));
        }
        let s = &bytes[*at..*at + n];
        *at += n;
        Ok(s)
    };
    let json_len = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    let spec_json = std::str::from_utf8(take(&mut at, json_len)?)
        .map_err(|_| fail("spec json is not utf-8"))?
        .to_string();
    let spec = ArchitectureSpec::from_json(&spec_json)?;
    if spec.hash()? != stored_hash {
        return Err(fail("spec hash mismatch"));
    }
    let mut net = Network::<f32>::build(&spec, 0)?;
    let count = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    if count != net.params().len() {
        return Err(fail(&format!(
            "tensor count {count} does not match architecture ({})",
            net.params().len()
        )));
    }
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut at, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut at, name_len)?)
            .map_err(|_| fail("tensor name is not utf-8"))?
            .to_string();
        let ndim = take(&mut at, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            values.push(f32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()));
        }
        let idx = net
            .param_index(&name)
            .ok_or_else(|| fail(&format!("unknown tensor {name:?}")))?;
        if net.params()[idx].shape() != shape.as_slice() {
            return Err(fail(&format!(
                "tensor {name:?} shape {shape:?} does not match {:?}",
                net.params()[idx].shape()
            )));
        }
        net.params_mut()[idx] = Tensor::new(shape, values)?;
    }
    if at != bytes.len() {
        return Err(fail("trailing bytes"));
    }
    Ok((net, (mean, std)))
}

// ---- CSV emission ---------------------------------------------------

fn open_csv(path: &Path, header: &str) -> Result<fs::File> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    writeln!(f, "{header}")?;
    Ok(f)
}

pub fn write_pose_summary_csv(path: &Path, rows: &[(String, Variant, u64, PoseKind, f64)]) -> Result<()> {
    let mut f = open_csv(path, "schema_version,arch,variant,seed,kind,value")?;
    for (arch, variant, seed, kind, value) in rows {
        writeln!(
            f,
            "{CSV_SCHEMA_VERSION},{arch},{},{seed},{},{value}",
            variant.name(),
            kind.name()
        )?;
    }
    Ok(())
}

pub fn write_errors_csv(path: &Path, rows: &[(String, Variant, u64, f64)]) -> Result<()> {
    let mut f = open_csv(path, "schema_version,arch,variant,seed,error_pct")?;
    for (arch, variant, seed, error) in rows {
        writeln!(f, "{CSV_SCHEMA_VERSION},{arch},{},{seed},{error}", variant.name())?;
    }
    Ok(())
}

pub fn write_heatmap_csv(path: &Path, samples: &[(f64, f64)]) -> Result<()> {
    let mut f = open_csv(path, "schema_version,theta,comp")?;
    for (theta, comp) in samples {
        writeln!(f, "{CSV_SCHEMA_VERSION},{theta},{comp}")?;
    }
    Ok(())
}

pub fn write_train_log_csv(path: &Path, log: &[(usize, f64)]) -> Result<()> {
    let mut f = open_csv(path, "schema_version,step,loss")?;
    for (step, loss) in log {
        writeln!(f, "{CSV_SCHEMA_VERSION},{step},{loss}")?;
    }
    Ok(())
}
