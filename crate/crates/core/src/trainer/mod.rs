//! Photometric fitting of an avatar to posed multi-view images, and
//! checkpoints.

mod checkpoint;

use std::path::Path;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    checkpoint_bytes, export_codes, import_codes, load_checkpoint, parse_checkpoint, save_checkpoint, BlockInfo,
    CheckpointManifest, CodeFile, CodeHeader, CHECKPOINT_VERSION,
};

use crate::camera::Camera;
use crate::error::{Result, UvaError};
use crate::image_io::{dilate_mask, mask_from_image, Image};
use crate::metrics::psnr;
use crate::model::{Avatar, ModelParams, PARAM_BLOCKS};
use crate::motion_field::PoseContext;
use crate::nn::{Adam, AdamState, Real};
use crate::renderer::{bounded_rays, composite, composite_backward, gather_samples, render_image_in, RenderSettings};
use crate::synth_data::{Dataset, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_rays: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Code tables train at this multiple of the scheduled rate.
    pub code_lr_multiplier: f64,
    pub seed: u64,
    /// Iterations between evaluation renders; 0 disables them.
    pub eval_every: u64,
    /// Share of rays drawn from the dilated foreground mask.
    pub foreground_fraction: f64,
    pub mask_dilation: u32,
    /// Rays per forward/backward chunk; bounds memory, never changes results.
    pub chunk_rays: usize,
    /// Jitter ray samples within their bins during training.
    pub jitter: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_rays: 1024,
            lr_start: 5e-4,
            lr_end: 5e-6,
            code_lr_multiplier: 10.0,
            seed: 0,
            eval_every: 1000,
            foreground_fraction: 0.8,
            mask_dilation: 3,
            chunk_rays: 64,
            jitter: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_start > self.lr_end && self.lr_end > 0.0) {
            return Err(UvaError::Argument(format!(
                "learning rates must satisfy lr_start > lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        if self.batch_rays == 0 || self.chunk_rays == 0 {
            return Err(UvaError::Argument("batch_rays and chunk_rays must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.foreground_fraction) {
            return Err(UvaError::Argument("foreground_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `lr_start·(lr_end/lr_start)^(i/total)`.
pub fn learning_rate(cfg: &TrainConfig, iteration: u64) -> f64 {
    let total = cfg.iterations.max(1) as f64;
    cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(iteration as f64 / total)
}

/// Mean squared error over rays and channels.
pub fn photometric_loss(pred: &[[f64; 3]], target: &[[f64; 3]]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(UvaError::Argument(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .flat_map(|(p, t)| (0..3).map(move |c| (p[c] - t[c]).powi(2)))
        .sum();
    Ok(sum / (3 * pred.len()) as f64)
}

/// One posed view prepared for ray sampling.
pub struct TrainView {
    pub id: String,
    pub camera: Camera,
    pub ctx: PoseContext,
    pub image: Image,
    /// Pixels of the dilated ground-truth alpha mask.
    pub foreground: Vec<(u32, u32)>,
}

impl TrainView {
    pub fn new<T: Real>(avatar: &Avatar<T>, id: String, camera: Camera, pose: &crate::body_model::Pose, image: Image, alpha: &Image, dilation: u32) -> Result<Self> {
        let mask = dilate_mask(&mask_from_image(alpha), alpha.width, alpha.height, dilation);
        let foreground = mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| ((i % alpha.width as usize) as u32, (i / alpha.width as usize) as u32))
            .collect();
        Ok(Self {
            id,
            ctx: avatar.pose_context(pose)?,
            camera,
            image,
            foreground,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayTarget {
    pub view: usize,
    pub pixel: (u32, u32),
    pub color: [f64; 3],
}

/// Draws `count` rays: a `foreground_fraction` share from dilated masks, the
/// rest anywhere, each from a uniformly chosen view.
pub fn sample_rays(views: &[TrainView], count: usize, foreground_fraction: f64, rng: &mut impl Rng) -> Vec<RayTarget> {
    let fg = (count as f64 * foreground_fraction).round() as usize;
    (0..count)
        .map(|i| {
            let view = rng.gen_range(0..views.len());
            let v = &views[view];
            let pixel = if i < fg && !v.foreground.is_empty() {
                v.foreground[rng.gen_range(0..v.foreground.len())]
            } else {
                (rng.gen_range(0..v.camera.width), rng.gen_range(0..v.camera.height))
            };
            let c = v.image.get(pixel.0, pixel.1);
            RayTarget {
                view,
                pixel,
                color: [c[0] as f64, c[1] as f64, c[2] as f64],
            }
        })
        .collect()
}

/// Which parameter blocks an optimiser step may change, and (for codes) which
/// vertex rows.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateMask {
    pub blocks: [bool; 6],
    /// Trainable code rows; `None` means all.
    pub code_rows: Option<Vec<usize>>,
}

impl UpdateMask {
    pub fn all() -> Self {
        Self {
            blocks: [true; 6],
            code_rows: None,
        }
    }
}

pub struct Trainer<T: Real = f32> {
    pub avatar: Avatar<T>,
    pub config: TrainConfig,
    pub settings: RenderSettings,
    adam: Adam,
    states: Vec<AdamState<T>>,
    steps: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(avatar: Avatar<T>, config: TrainConfig, settings: RenderSettings) -> Result<Self> {
        config.validate()?;
        settings.validate()?;
        let states = avatar.params.blocks().iter().map(|b| AdamState::new(b.len())).collect();
        Ok(Self {
            avatar,
            config,
            settings,
            adam: Adam::default(),
            states,
            steps: 0,
        })
    }

    /// Loss of a ray batch and its gradient with respect to every parameter.
    /// `seed` drives sample jitter when enabled.
    pub fn loss_and_gradient(&self, views: &[TrainView], batch: &[RayTarget], seed: u64) -> Result<(f64, ModelParams<T>)> {
        batch_loss_and_gradient(&self.avatar, views, batch, &self.settings, self.config.jitter, self.config.chunk_rays, seed)
    }

    /// One Adam step on `batch` at the scheduled learning rate.
    pub fn train_step(&mut self, views: &[TrainView], batch: &[RayTarget]) -> Result<f64> {
        self.masked_step(views, batch, &UpdateMask::all(), learning_rate(&self.config, self.avatar.iteration), self.config.code_lr_multiplier)
    }

    /// A step at explicit rates: `lr` for networks, `lr·code_multiplier` for
    /// codes, restricted by `mask`.
    pub fn masked_step(
        &mut self,
        views: &[TrainView],
        batch: &[RayTarget],
        mask: &UpdateMask,
        lr: f64,
        code_multiplier: f64,
    ) -> Result<f64> {
        let iteration = self.avatar.iteration;
        let seed = self.config.seed ^ iteration.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let (loss, grads) = self.loss_and_gradient(views, batch, seed)?;
        if !loss.is_finite() {
            return Err(UvaError::Training {
                iteration,
                message: format!("loss is {loss}"),
            });
        }
        self.steps += 1;
        let step = self.steps;
        let dim = self.avatar.params.codes.dim;
        let g = grads.blocks();
        for (b, params) in self.avatar.params.blocks_mut().into_iter().enumerate() {
            if !mask.blocks[b] {
                continue;
            }
            let is_code = PARAM_BLOCKS[b].starts_with("codes");
            let rate = if is_code { lr * code_multiplier } else { lr };
            match (&mask.code_rows, is_code) {
                (Some(rows), true) => {
                    for &r in rows {
                        self.adam
                            .update_range(&mut self.states[b], params, g[b], rate, step, r * dim..(r + 1) * dim);
                    }
                }
                _ => self.adam.update(&mut self.states[b], params, g[b], rate, step),
            }
        }
        self.avatar.iteration += 1;
        Ok(loss)
    }
}

/// Shared by training and painting: MSE over `batch` and its gradient.
pub fn batch_loss_and_gradient<T: Real>(
    avatar: &Avatar<T>,
    views: &[TrainView],
    batch: &[RayTarget],
    settings: &RenderSettings,
    jitter: bool,
    chunk_rays: usize,
    seed: u64,
) -> Result<(f64, ModelParams<T>)> {
    let mut grads = avatar.params.zeros_like();
    if batch.is_empty() {
        return Ok((0.0, grads));
    }
    let settings = RenderSettings {
        stochastic: jitter,
        ..settings.clone()
    };
    let s = settings.samples_per_ray;
    let scale = 2.0 / (3 * batch.len()) as f64;
    let mut loss = 0.0;
    for (v, view) in views.iter().enumerate() {
        let rays_here: Vec<&RayTarget> = batch.iter().filter(|r| r.view == v).collect();
        for chunk in rays_here.chunks(chunk_rays) {
            let pixels: Vec<(u32, u32)> = chunk.iter().map(|r| r.pixel).collect();
            let rays = bounded_rays(&view.camera, &view.ctx, &pixels, settings.margin)?;
            let hit: Vec<usize> = (0..rays.len()).filter(|&i| rays.hit[i]).collect();
            for (i, r) in chunk.iter().enumerate() {
                if !rays.hit[i] {
                    loss += (0..3).map(|c| (settings.background[c] - r.color[c]).powi(2)).sum::<f64>();
                }
            }
            if hit.is_empty() {
                continue;
            }
            let (points, per_ray) = gather_samples(&rays, &hit, &settings, seed);
            let tape = avatar.forward(&view.ctx, &points)?;
            let mut d_sigma = vec![T::zero(); points.len()];
            let mut d_color = vec![[T::zero(); 3]; points.len()];
            for (q, &i) in hit.iter().enumerate() {
                let range = q * s..(q + 1) * s;
                let sigma: Vec<f64> = tape.radiance.sigma[range.clone()].iter().map(|v| v.f64()).collect();
                let color: Vec<[f64; 3]> = tape.radiance.color[range.clone()]
                    .iter()
                    .map(|c| c.map(|v| v.f64()))
                    .collect();
                let delta = &per_ray[q].1;
                let pred = composite(&sigma, &color, delta, settings.background).color;
                let target = chunk[i].color;
                let resid = [0, 1, 2].map(|c| pred[c] - target[c]);
                loss += resid.iter().map(|r| r * r).sum::<f64>();
                let (ds, dc) = composite_backward(&sigma, &color, delta, settings.background, resid.map(|r| r * scale));
                for k in 0..s {
                    d_sigma[q * s + k] = T::of(ds[k]);
                    d_color[q * s + k] = dc[k].map(T::of);
                }
            }
            avatar.backward(&tape, &d_sigma, &d_color, &mut grads)?;
        }
    }
    Ok((loss / (3 * batch.len()) as f64, grads))
}

/// Loads the views of a split, ready for sampling.
pub fn load_views<T: Real>(avatar: &Avatar<T>, dataset: &Dataset, split: Split, dilation: u32) -> Result<Vec<TrainView>> {
    dataset
        .frames(split)?
        .into_iter()
        .map(|f| TrainView::new(avatar, f.id, f.camera, &f.pose, f.image, &f.alpha, dilation))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub iteration: u64,
    pub loss: f64,
    pub lr: f64,
    /// Empty when no evaluation ran at this iteration.
    pub eval_psnr: Option<f64>,
}

/// Runs `config.iterations` steps over the training split. With `log`, writes
/// one CSV row per iteration.
pub fn fit<T: Real>(
    dataset: &Dataset,
    avatar: Avatar<T>,
    config: &TrainConfig,
    settings: &RenderSettings,
    log: Option<&Path>,
) -> Result<(Avatar<T>, Vec<LogRow>)> {
    let views = load_views(&avatar, dataset, Split::Train, config.mask_dilation)?;
    if views.is_empty() {
        return Err(UvaError::Argument("dataset has no training frames".into()));
    }
    fit_views(&views, avatar, config, settings, log)
}

pub fn fit_views<T: Real>(
    views: &[TrainView],
    avatar: Avatar<T>,
    config: &TrainConfig,
    settings: &RenderSettings,
    log: Option<&Path>,
) -> Result<(Avatar<T>, Vec<LogRow>)> {
    let mut trainer = Trainer::new(avatar, config.clone(), settings.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut writer = match log {
        Some(p) => Some(csv::Writer::from_path(p).map_err(|e| UvaError::Load(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let mut rows = Vec::new();
    while trainer.avatar.iteration < config.iterations {
        let lr = learning_rate(config, trainer.avatar.iteration);
        let batch = sample_rays(views, config.batch_rays, config.foreground_fraction, &mut rng);
        let loss = trainer.train_step(views, &batch)?;
        let it = trainer.avatar.iteration;
        let eval_psnr = if config.eval_every > 0 && (it % config.eval_every == 0 || it == config.iterations) {
            let v = &views[0];
            let eval_settings = RenderSettings {
                stochastic: false,
                ..settings.clone()
            };
            let out = render_image_in(&trainer.avatar, &v.ctx, &v.camera, &eval_settings, config.seed)?;
            let p = psnr(&out.image, &v.image)?;
            info!("iteration {it}: loss {loss:.6}, lr {lr:.3e}, psnr({}) {p:.2} dB", v.id);
            Some(p)
        } else {
            None
        };
        let row = LogRow {
            iteration: it,
            loss,
            lr,
            eval_psnr,
        };
        if let Some(w) = writer.as_mut() {
            w.serialize(&row).map_err(|e| UvaError::Load(format!("training log: {e}")))?;
        }
        rows.push(row);
    }
    if let Some(mut w) = writer {
        w.flush().map_err(|e| UvaError::io(log.expect("writer implies a path"), e))?;
    }
    Ok((trainer.avatar, rows))
}
