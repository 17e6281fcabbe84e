//! Mini-batch ELBO training with a clip-level hold-out split.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{CvaeConfig, CvaeModel};
use crate::error::{Error, Result};
use crate::motion::{window_pairs, MotionDataset};
use crate::nn::{AdamConfig, OptimizerState};

/// Window pairs flattened into two row-major matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    pub m0: Vec<f64>,
    pub m1: Vec<f64>,
    pub len: usize,
    pub row: usize,
}

impl PairSet {
    pub fn from_clips<'a>(
        clips: impl IntoIterator<Item = &'a crate::motion::MotionClip>,
        window: usize,
        stride: usize,
    ) -> Self {
        let mut set = PairSet::default();
        for clip in clips {
            for p in window_pairs(clip, window, stride) {
                set.row = p.m0.len();
                set.m0.extend_from_slice(&p.m0);
                set.m1.extend_from_slice(&p.m1);
                set.len += 1;
            }
        }
        set
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn gather(&self, idx: &[usize], m0: &mut Vec<f64>, m1: &mut Vec<f64>) {
        m0.clear();
        m1.clear();
        for &i in idx {
            m0.extend_from_slice(&self.m0[i * self.row..(i + 1) * self.row]);
            m1.extend_from_slice(&self.m1[i * self.row..(i + 1) * self.row]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct CvaeTraining {
    pub model: CvaeModel<f64>,
    /// Pair-weighted mean over each epoch's mini-batches.
    pub loss_curve: Vec<EpochStats>,
    pub train_clips: Vec<String>,
    pub holdout_clips: Vec<String>,
    /// Posterior-mean reconstruction MSE after training.
    pub train_mse: f64,
    pub holdout_mse: Option<f64>,
}

/// Splits clip ids into (train, holdout) with a seeded shuffle. Clips too short for a
/// single window pair are left out of both.
pub fn split_clips(dataset: &MotionDataset, config: &CvaeConfig) -> (Vec<String>, Vec<String>) {
    let mut usable: Vec<usize> = (0..dataset.clips.len())
        .filter(|&i| dataset.clips[i].len() >= 2 * config.window)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_c1b5);
    usable.shuffle(&mut rng);
    let n_hold = ((usable.len() as f64 * config.holdout_fraction).floor() as usize).min(usable.len().saturating_sub(1));
    let mut hold: Vec<usize> = usable[..n_hold].to_vec();
    let mut train: Vec<usize> = usable[n_hold..].to_vec();
    hold.sort_unstable();
    train.sort_unstable();
    let ids = |v: Vec<usize>| v.into_iter().map(|i| dataset.clips[i].id.clone()).collect();
    (ids(train), ids(hold))
}

fn pairs_for(dataset: &MotionDataset, ids: &[String], config: &CvaeConfig) -> PairSet {
    PairSet::from_clips(
        ids.iter().filter_map(|id| dataset.clip(id)),
        config.window,
        config.stride,
    )
}

/// Posterior-mean reconstruction MSE over a pair set, evaluated in chunks.
pub fn pair_set_mse(model: &CvaeModel<f64>, pairs: &PairSet) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Dataset("no window pairs to evaluate".into()));
    }
    let chunk = 256;
    let mut total = 0.0;
    let mut start = 0;
    while start < pairs.len {
        let n = chunk.min(pairs.len - start);
        let r = pairs.row;
        let mse = model.reconstruction_mse(
            &pairs.m0[start * r..(start + n) * r],
            &pairs.m1[start * r..(start + n) * r],
            n,
        )?;
        total += mse * n as f64;
        start += n;
    }
    Ok(total / pairs.len as f64)
}

/// Randomizes each pair around the last frame of its `m0`: joints are permuted, each
/// joint's excursion is mirrored with probability one half, and all excursions share a
/// scale drawn from `[0.6, 1.4]`.
fn augment_batch(m0: &mut [f64], m1: &mut [f64], batch: usize, n: usize, rng: &mut ChaCha8Rng) {
    let d = m0.len() / batch;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut frame = vec![0.0; n];
    for b in 0..batch {
        perm.shuffle(rng);
        let scale: f64 = rng.random_range(0.6..1.4);
        let gains: Vec<f64> = (0..n)
            .map(|_| if rng.random::<bool>() { scale } else { -scale })
            .collect();
        let anchor: Vec<f64> = m0[(b + 1) * d - n..(b + 1) * d].to_vec();
        for w in [&mut m0[b * d..(b + 1) * d], &mut m1[b * d..(b + 1) * d]] {
            for f in w.chunks_exact_mut(n) {
                for j in 0..n {
                    let src = perm[j];
                    frame[j] = anchor[src] + gains[j] * (f[src] - anchor[src]);
                }
                f.copy_from_slice(&frame);
            }
        }
    }
}

pub fn train_cvae(dataset: &MotionDataset, config: &CvaeConfig) -> Result<CvaeTraining> {
    train_cvae_with(dataset, config, |_| {})
}

/// Trains a fresh model, calling `on_epoch` after every epoch.
pub fn train_cvae_with(
    dataset: &MotionDataset,
    config: &CvaeConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<CvaeTraining> {
    config.validate()?;
    let (train_clips, holdout_clips) = split_clips(dataset, config);
    let train = pairs_for(dataset, &train_clips, config);
    if train.is_empty() {
        return Err(Error::Dataset(format!(
            "dataset '{}' yields no window pairs for W = {}",
            dataset.name, config.window
        )));
    }
    let holdout = pairs_for(dataset, &holdout_clips, config);
    info!(
        "cvae: {} training pairs from {} clips, {} held-out pairs from {} clips",
        train.len,
        train_clips.len(),
        holdout.len,
        holdout_clips.len()
    );

    let mut model = CvaeModel::<f64>::new(config.clone(), dataset.n_upper(), config.seed)?;
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut opt_p = OptimizerState::new(&model.prior_params, adam);
    let mut opt_e = OptimizerState::new(&model.encoder_params, adam);
    let mut opt_d = OptimizerState::new(&model.decoder_params, adam);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let h = config.latent_dim;
    let mut order: Vec<usize> = (0..train.len).collect();
    let (mut m0, mut m1) = (Vec::new(), Vec::new());
    let mut noise = Vec::new();
    let mut loss_curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut sl, mut sr, mut sk) = (0.0, 0.0, 0.0);
        for idx in order.chunks(config.batch_size) {
            let b = idx.len();
            train.gather(idx, &mut m0, &mut m1);
            if config.augment {
                augment_batch(&mut m0, &mut m1, b, dataset.n_upper(), &mut rng);
            }
            noise.clear();
            noise.extend((0..b * h).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
            let mut out = model.elbo_batch(&m0, &m1, &noise, b)?;
            if !out.loss.is_finite() {
                return Err(Error::TrainingDiverged(format!("non-finite ELBO at epoch {epoch}")));
            }
            if let Some(max) = config.grad_clip {
                let g = &mut out.grads;
                let norm = (g.prior.norm().powi(2) + g.encoder.norm().powi(2) + g.decoder.norm().powi(2)).sqrt();
                if norm > max {
                    let s = max / norm;
                    g.prior.scale(s);
                    g.encoder.scale(s);
                    g.decoder.scale(s);
                }
            }
            opt_p.step(&mut model.prior_params, &out.grads.prior)?;
            opt_e.step(&mut model.encoder_params, &out.grads.encoder)?;
            opt_d.step(&mut model.decoder_params, &out.grads.decoder)?;
            let w = b as f64;
            sl += out.loss * w;
            sr += out.parts.recon * w;
            sk += out.parts.kl * w;
        }
        let n = train.len as f64;
        let stats = EpochStats {
            epoch,
            loss: sl / n,
            recon: sr / n,
            kl: sk / n,
        };
        debug!(
            "cvae epoch {epoch}: loss {:.6} recon {:.6} kl {:.6}",
            stats.loss, stats.recon, stats.kl
        );
        on_epoch(&stats);
        loss_curve.push(stats);
    }

    let train_mse = pair_set_mse(&model, &train)?;
    let holdout_mse = if holdout.is_empty() {
        None
    } else {
        Some(pair_set_mse(&model, &holdout)?)
    };
    Ok(CvaeTraining {
        model,
        loss_curve,
        train_clips,
        holdout_clips,
        train_mse,
        holdout_mse,
    })
}
