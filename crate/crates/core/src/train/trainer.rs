//! Masked multi-task training with model selection by validation MCC.
//!
//! Each batch draws fresh crops/augmentations from the scene records
//! (deterministic in (seed, epoch, index)), computes per-sample losses and
//! gradients in parallel, and reduces them in index order, so two runs with
//! the same seed produce bit-identical checkpoints. Validation runs after
//! every epoch; the returned checkpoint is the parameter snapshot at the
//! epoch with the highest validation extent-MCC (epoch 0 = initialization
//! is included, so zero-epoch runs return the initial weights).

use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Array3;

use crate::data::{TileRecord, TrainDataset};
use crate::error::{FieldkitError, Result};
use crate::eval::{confusion, f1, mcc, oa, ConfusionCounts, MetricValue};
use crate::nn::{AttentionResUNet, Checkpoint, HeadMaps};
use crate::parallel::par_map_slice;

use super::adam::Adam;
use super::loss::{masked_loss, TanimotoConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub task_weights: (f64, f64, f64),
    pub tanimoto: TanimotoConfig,
    /// Crop size drawn from each scene every epoch.
    pub tile: usize,
    pub augment: bool,
    /// Early-stopping patience on validation MCC, in epochs.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 4,
            max_epochs: 100,
            seed: 0,
            task_weights: (1.0, 1.0, 1.0),
            tanimoto: TanimotoConfig::default(),
            tile: 128,
            augment: true,
            patience: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(FieldkitError::InvalidArgument("learning_rate must be > 0".into()));
        }
        if self.batch_size < 1 {
            return Err(FieldkitError::InvalidArgument("batch_size must be >= 1".into()));
        }
        self.tanimoto.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// None for the epoch-0 (initialization) row.
    pub train_loss: Option<f64>,
    pub val_oa: MetricValue,
    pub val_f1: MetricValue,
    pub val_mcc: MetricValue,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// splitmix-style mixing for per-sample seeds.
fn mix_seed(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(b.wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add(c.wrapping_mul(0x94d049bb133111eb));
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58476d1ce4e5b9);
    z ^= z >> 27;
    z
}

/// Pooled validation metrics of the extent head.
pub fn evaluate_dataset(
    net: &AttentionResUNet<f32>,
    records: &[TileRecord],
) -> Result<(ConfusionCounts, MetricValue, MetricValue, MetricValue)> {
    let partials: Vec<Result<ConfusionCounts>> = par_map_slice(records, |rec| {
        let maps = net.forward(&rec.image)?;
        confusion(&maps.extent, &rec.labels.extent, &rec.labels.mask, 0.5)
    });
    let mut pooled = ConfusionCounts::default();
    for p in partials {
        pooled.add(&p?);
    }
    Ok((pooled, oa(&pooled), f1(&pooled), mcc(&pooled)))
}

struct BestState {
    epoch: usize,
    mcc: Option<f64>,
    params: Vec<(String, Vec<usize>, Vec<f32>)>,
}

fn better(candidate: Option<f64>, best: Option<f64>) -> bool {
    match (candidate, best) {
        (Some(c), Some(b)) => c > b,
        (Some(_), None) => true,
        _ => false,
    }
}

/// Train in place; returns the best-val-MCC checkpoint (the network is
/// also restored to those weights).
pub fn train(
    net: &mut AttentionResUNet<f32>,
    data: &TrainDataset,
    cfg: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<TrainOutcome> {
    train_impl(net, data, cfg, log_path, None)
}

/// Fine-tune from a checkpoint: all parameters unfrozen, provenance chains
/// to the parent.
pub fn finetune(
    parent: &Checkpoint,
    data: &TrainDataset,
    cfg: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<TrainOutcome> {
    let in_ch = data.in_channels();
    if parent.spec.in_channels != in_ch {
        return Err(FieldkitError::ChannelMismatch(format!(
            "checkpoint expects {} channels, dataset provides {in_ch} (no adapter policy)",
            parent.spec.in_channels
        )));
    }
    let mut net = parent.to_network()?;
    train_impl(&mut net, data, cfg, log_path, Some(&parent.provenance.checkpoint_id))
}

fn train_impl(
    net: &mut AttentionResUNet<f32>,
    data: &TrainDataset,
    cfg: &TrainConfig,
    log_path: Option<&Path>,
    parent: Option<&str>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(FieldkitError::InvalidArgument("training set is empty".to_string()));
    }
    if data.in_channels() != net.spec.in_channels {
        return Err(FieldkitError::ChannelMismatch(format!(
            "network expects {} channels, dataset provides {}",
            net.spec.in_channels,
            data.in_channels()
        )));
    }
    let started = Instant::now();
    let mut opt = Adam::new(net, cfg.learning_rate);
    let mut log: Vec<EpochLog> = Vec::new();

    let (_, voa, vf1, vmcc) = evaluate_dataset(net, &data.val)?;
    log.push(EpochLog {
        epoch: 0,
        train_loss: None,
        val_oa: voa,
        val_f1: vf1,
        val_mcc: vmcc.clone(),
        wall_time_s: started.elapsed().as_secs_f64(),
    });
    let mut best =
        BestState { epoch: 0, mcc: vmcc.value(), params: net.export_params() };
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let order = shuffled_indices(data.train.len(), cfg.seed, epoch as u64);
        let mut epoch_loss = 0.0;
        let mut n_samples = 0usize;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<(f64, crate::nn::NetGrads<f32>)>> =
                par_map_slice(batch, |&idx| {
                    let rec: &TileRecord = &data.train[idx];
                    let sample_seed = mix_seed(cfg.seed, epoch as u64, idx as u64);
                    let (image, labels) = rec.draw_tile(cfg.tile, cfg.augment, sample_seed);
                    let (maps, cache) = net.forward_cached(&image)?;
                    let (loss, grad_maps) =
                        masked_loss(&maps, &labels, &cfg.tanimoto, cfg.task_weights)?;
                    let mut grads = net.zero_grads();
                    net.backward(&cache, &grad_maps, &mut grads);
                    Ok((loss, grads))
                });
            let mut batch_grads: Option<crate::nn::NetGrads<f32>> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, grads) = r?;
                if !loss.is_finite() {
                    return Err(non_finite_diag(net, epoch, batch_no, loss));
                }
                batch_loss += loss;
                match &mut batch_grads {
                    None => batch_grads = Some(grads),
                    Some(acc) => acc.add_assign(&grads),
                }
            }
            let mut grads = batch_grads.expect("non-empty batch");
            grads.scale(1.0 / batch.len() as f32);
            opt.step(net, &grads);
            epoch_loss += batch_loss;
            n_samples += batch.len();
        }
        let train_loss = epoch_loss / n_samples as f64;
        if !train_loss.is_finite() {
            return Err(non_finite_diag(net, epoch, usize::MAX, train_loss));
        }
        let (_, voa, vf1, vmcc) = evaluate_dataset(net, &data.val)?;
        log.push(EpochLog {
            epoch,
            train_loss: Some(train_loss),
            val_oa: voa,
            val_f1: vf1,
            val_mcc: vmcc.clone(),
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        if better(vmcc.value(), best.mcc) {
            best = BestState { epoch, mcc: vmcc.value(), params: net.export_params() };
        }
        if cfg.patience > 0 && epoch.saturating_sub(best.epoch) >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    net.import_params(&best.params)?;
    let checkpoint =
        Checkpoint::from_network(net, &data.id, best.epoch, best.mcc, parent);
    if let Some(path) = log_path {
        write_log_csv(&log, path)?;
    }
    Ok(TrainOutcome { checkpoint, log, stopped_early })
}

fn non_finite_diag(
    net: &AttentionResUNet<f32>,
    epoch: usize,
    batch: usize,
    loss: f64,
) -> FieldkitError {
    let mut total = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut clone = net.clone();
    clone.visit_params_mut(&mut |_, slice| {
        for v in slice.iter() {
            let v = *v as f64;
            total += v * v;
            max_abs = max_abs.max(v.abs());
        }
    });
    FieldkitError::NonFiniteLoss {
        context: format!("epoch {epoch}, batch {batch}"),
        diagnostic: format!(
            "loss {loss}, param L2 {:.6e}, max |param| {:.6e}",
            total.sqrt(),
            max_abs
        ),
    }
}

fn shuffled_indices(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch, 0xe9c0));
    order.shuffle(&mut rng);
    order
}

fn metric_csv(v: &MetricValue) -> String {
    match v.value() {
        Some(x) => format!("{x}"),
        None => "undefined".to_string(),
    }
}

/// CSV: epoch, train_loss, val_oa, val_f1, val_mcc, wall_time.
pub(crate) fn write_log_csv(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_oa,val_f1,val_mcc,wall_time_s\n");
    for row in log {
        let loss = row.train_loss.map(|l| format!("{l}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{:.3}\n",
            row.epoch,
            loss,
            metric_csv(&row.val_oa),
            metric_csv(&row.val_f1),
            metric_csv(&row.val_mcc),
            row.wall_time_s
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Element-wise mean of per-season prediction maps.
pub fn consensus_predict(
    net: &AttentionResUNet<f32>,
    seasonal_inputs: &[Array3<f32>],
) -> Result<HeadMaps<f32>> {
    if seasonal_inputs.is_empty() {
        return Err(FieldkitError::InvalidArgument("need at least one seasonal input".into()));
    }
    let dim = seasonal_inputs[0].dim();
    for s in seasonal_inputs {
        if s.dim() != dim {
            return Err(FieldkitError::ShapeMismatch(format!(
                "seasonal inputs disagree: {:?} vs {dim:?}",
                s.dim()
            )));
        }
    }
    let maps: Vec<Result<HeadMaps<f32>>> =
        par_map_slice(seasonal_inputs, |input| net.forward(input));
    let mut acc: Option<HeadMaps<f32>> = None;
    for m in maps {
        let m = m?;
        match &mut acc {
            None => acc = Some(m),
            Some(a) => {
                a.extent += &m.extent;
                a.boundary += &m.boundary;
                a.distance += &m.distance;
            }
        }
    }
    let mut out = acc.expect("non-empty");
    let k = 1.0 / seasonal_inputs.len() as f32;
    out.extent *= k;
    out.boundary *= k;
    out.distance *= k;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{build_label_stack, FieldPolygon};
    use crate::nn::NetworkSpec;
    use crate::raster::GridGeometry;
    use ndarray::Array2;

    /// A tiny two-field scene whose imagery encodes the fields directly.
    fn toy_record(id: &str, shift: f32) -> TileRecord {
        let geom = GridGeometry::pixels(16, 16);
        let polys = vec![
            FieldPolygon::rect(1, 1.0, -15.0, 7.0, -1.0, "px"),
            FieldPolygon::rect(2, 9.0, -15.0, 15.0, -1.0, "px"),
        ];
        let (labels, _) = build_label_stack(&polys, &geom, 1, 1).unwrap();
        let mut image = Array3::<f32>::zeros((3, 16, 16));
        for r in 0..16 {
            for c in 0..16 {
                let v = labels.extent[(r, c)] as f32;
                image[(0, r, c)] = v * 0.8 + shift;
                image[(1, r, c)] = 0.5 - v * 0.3;
                image[(2, r, c)] = 0.2 + v * 0.1;
            }
        }
        TileRecord::new(id, image, labels).unwrap()
    }

    fn toy_dataset() -> TrainDataset {
        TrainDataset {
            id: "toy".to_string(),
            train: vec![toy_record("a", 0.0), toy_record("b", 0.05)],
            val: vec![toy_record("v", 0.02)],
        }
    }

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            depth: 2,
            base_filters: 4,
            in_channels: 3,
            attention: true,
            attention_depth_d: 0,
            separate_head_tails: false,
        }
    }

    fn quick_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            max_epochs: epochs,
            batch_size: 2,
            tile: 16,
            augment: true,
            patience: 0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialized_checkpoint_with_one_eval() {
        let data = toy_dataset();
        let mut net = AttentionResUNet::<f32>::build(&tiny_spec(), 3).unwrap();
        let init_params = net.export_params();
        let out = train(&mut net, &data, &quick_cfg(0), None).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.checkpoint.provenance.epoch, 0);
        assert_eq!(out.checkpoint.params, init_params);
    }

    #[test]
    fn same_seed_same_checkpoint_bit_for_bit() {
        let data = toy_dataset();
        let cfg = quick_cfg(3);
        let run = |seed: u64| {
            let mut net = AttentionResUNet::<f32>::build(&tiny_spec(), 11).unwrap();
            let cfg = TrainConfig { seed, ..cfg };
            train(&mut net, &data, &cfg, None).unwrap()
        };
        let a = run(5);
        let b = run(5);
        assert_eq!(a.checkpoint.provenance.checkpoint_id, b.checkpoint.provenance.checkpoint_id);
        for ((_, _, va), (_, _, vb)) in a.checkpoint.params.iter().zip(b.checkpoint.params.iter())
        {
            for (x, y) in va.iter().zip(vb.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let c = run(6);
        assert_ne!(a.checkpoint.provenance.checkpoint_id, c.checkpoint.provenance.checkpoint_id);
    }

    #[test]
    fn checkpoint_selection_matches_log_argmax() {
        let data = toy_dataset();
        let mut net = AttentionResUNet::<f32>::build(&tiny_spec(), 7).unwrap();
        let out = train(&mut net, &data, &quick_cfg(4), None).unwrap();
        let best_epoch = out
            .log
            .iter()
            .filter_map(|l| l.val_mcc.value().map(|m| (l.epoch, m)))
            .fold(None::<(usize, f64)>, |acc, (e, m)| match acc {
                None => Some((e, m)),
                Some((be, bm)) if m > bm => Some((e, m)),
                other => other,
            });
        assert_eq!(out.checkpoint.provenance.epoch, best_epoch.unwrap().0);
    }

    #[test]
    fn finetune_zero_epochs_preserves_parent_parameters_and_chains_provenance() {
        let data = toy_dataset();
        let mut net = AttentionResUNet::<f32>::build(&tiny_spec(), 13).unwrap();
        let parent = train(&mut net, &data, &quick_cfg(1), None).unwrap().checkpoint;
        let child = finetune(&parent, &data, &quick_cfg(0), None).unwrap().checkpoint;
        assert_eq!(child.params, parent.params);
        assert_eq!(
            child.provenance.parent_checkpoint_id.as_deref(),
            Some(parent.provenance.checkpoint_id.as_str())
        );
    }

    #[test]
    fn finetune_rejects_channel_mismatch() {
        let data = toy_dataset();
        let spec9 = NetworkSpec { in_channels: 9, ..tiny_spec() };
        let net = AttentionResUNet::<f32>::build(&spec9, 1).unwrap();
        let ckpt = Checkpoint::from_network(&net, "pre", 0, None, None);
        assert!(matches!(
            finetune(&ckpt, &data, &quick_cfg(1), None),
            Err(FieldkitError::ChannelMismatch(_))
        ));
    }

    #[test]
    fn consensus_of_identical_inputs_equals_single_forward() {
        let net = AttentionResUNet::<f32>::build(&tiny_spec(), 2).unwrap();
        let rec = toy_record("x", 0.0);
        let single = net.forward(&rec.image).unwrap();
        let cons =
            consensus_predict(&net, &[rec.image.clone(), rec.image.clone(), rec.image.clone()])
                .unwrap();
        for (a, b) in cons.as_array().into_iter().zip(single.as_array()) {
            for (&x, &y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        // Permutation invariance and the disagreement average.
        let mut hi = rec.image.clone();
        hi.fill(0.9);
        let a = consensus_predict(&net, &[rec.image.clone(), hi.clone()]).unwrap();
        let b = consensus_predict(&net, &[hi, rec.image.clone()]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn consensus_averages_disagreeing_predictions() {
        // Direct arithmetic check on the averaging itself.
        let maps = |v: f32| HeadMaps::<f32> {
            extent: Array2::from_elem((2, 2), v),
            boundary: Array2::from_elem((2, 2), v),
            distance: Array2::from_elem((2, 2), v),
        };
        let mut acc = maps(0.9);
        let other = maps(0.1);
        acc.extent += &other.extent;
        acc.extent *= 0.5;
        assert!((acc.extent[(0, 0)] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn training_log_csv_has_expected_columns() {
        let dir = tempfile::tempdir().unwrap();
        let data = toy_dataset();
        let mut net = AttentionResUNet::<f32>::build(&tiny_spec(), 21).unwrap();
        let path = dir.path().join("log.csv");
        train(&mut net, &data, &quick_cfg(2), Some(&path)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,train_loss,val_oa,val_f1,val_mcc,wall_time_s"
        );
        assert_eq!(lines.count(), 3); // epoch 0 + 2 epochs
    }

    #[test]
    fn tiny_overfit_drives_training_loss_down() {
        // One tile, several hundred steps: the loss must collapse.
        let rec = toy_record("solo", 0.0);
        let data = TrainDataset {
            id: "overfit".to_string(),
            train: vec![rec.clone()],
            val: vec![rec],
        };
        let mut net = AttentionResUNet::<f32>::build(&tiny_spec(), 17).unwrap();
        let cfg = TrainConfig {
            max_epochs: 220,
            batch_size: 1,
            tile: 16,
            augment: false,
            patience: 0,
            learning_rate: 0.003,
            ..TrainConfig::default()
        };
        let out = train(&mut net, &data, &cfg, None).unwrap();
        let final_loss = out.log.last().unwrap().train_loss.unwrap();
        assert!(final_loss < 0.05, "final training loss {final_loss}");
    }
}
