//! The `uva` command-line tool.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body_model::Pose;
use crate::camera::Camera;
use crate::config::RunConfig;
use crate::editor::{
    apply_geometry_edit, correspondence, paint_texture, select_nodes_from_mask, swap_texture, GeometryEdit,
    NodeSelection, PaintJob,
};
use crate::error::{Result, UvaError};
use crate::image_io::{mask_from_image, Image};
use crate::metrics::{psnr, ssim};
use crate::model::Avatar;
use crate::renderer::{render_image, render_image_in};
use crate::synth_data::{generate_dataset, read_json, split_counts, write_json, Dataset, Split};
use crate::trainer::{export_codes, fit, load_checkpoint, save_checkpoint, CheckpointManifest};

#[derive(Debug, Parser)]
#[command(name = "uva", version, about = "Mesh-anchored volumetric avatars")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides both the scene and the training seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Disable sample jitter in renders.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Override one config key, e.g. `--set train.iterations=200`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic multi-view dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an avatar to a dataset's training split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// CSV log with one row per iteration.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        disable_shading: bool,
        #[arg(long)]
        disable_delta: bool,
        #[arg(long)]
        zero_signed_height: bool,
    },
    /// Render one view of a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the alpha map.
        #[arg(long)]
        alpha: Option<PathBuf>,
    },
    /// PSNR and SSIM over a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
        /// Directory for metrics.csv and metrics.json.
        #[arg(long)]
        out: PathBuf,
        /// Evaluate at most this many frames.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Replace the canonical anchor vertices with those of an edited OBJ.
    EditGeometry {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Copy appearance from a source avatar onto selected target nodes.
    SwapTexture {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        source: PathBuf,
        /// JSON node selection.
        #[arg(long, conflicts_with_all = ["mask", "all"])]
        nodes: Option<PathBuf>,
        /// PNG mask; needs --camera and --pose.
        #[arg(long, requires_all = ["camera", "pose"], conflicts_with = "all")]
        mask: Option<PathBuf>,
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long)]
        pose: Option<PathBuf>,
        /// Swap every node.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        selection_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paint a masked region towards a reference image.
    PaintTexture {
        #[arg(long)]
        checkpoint: PathBuf,
        /// TOML paint job.
        #[arg(long)]
        job: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        selection_out: Option<PathBuf>,
    },
    /// Dump both code tables to a portable binary file.
    ExportCodes {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Defaults, then the config file, then `--set`, then the other flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.scene.seed = seed;
        cfg.train.seed = seed;
    }
    if cli.deterministic {
        cfg.render.stochastic = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Paint job file; paths are relative to the file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaintJobFile {
    pub camera: PathBuf,
    pub pose: PathBuf,
    pub reference: PathBuf,
    pub mask: PathBuf,
    pub iterations: Option<u64>,
    pub freeze_decoder: Option<bool>,
    pub code_lr: Option<f64>,
    pub dilation: Option<u32>,
}

impl PaintJobFile {
    pub fn load(path: &Path, cfg: &RunConfig) -> Result<PaintJob> {
        let text = std::fs::read_to_string(path).map_err(|e| UvaError::io(path, e))?;
        let f: PaintJobFile = toml::from_str(&text).map_err(|e| UvaError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let camera = Camera::load(&base.join(&f.camera))?;
        let pose: Pose = read_json(&base.join(&f.pose))?;
        let reference = Image::load_png(&base.join(&f.reference), 3)?;
        let mask = mask_from_image(&Image::load_png(&base.join(&f.mask), 1)?);
        let e = &cfg.editor;
        let code_lr = f.code_lr.unwrap_or(e.code_lr);
        Ok(PaintJob {
            dilation: f.dilation.unwrap_or(e.dilation),
            iterations: f.iterations.unwrap_or(e.paint_iterations),
            code_lr,
            decoder_lr: code_lr / e.lr_gap,
            freeze_decoder: f.freeze_decoder.unwrap_or(e.freeze_decoder),
            distance_threshold: e.distance_threshold,
            batch_rays: e.paint_batch_rays,
            seed: cfg.train.seed,
            ..PaintJob::new(camera, pose, reference, mask)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// The JSON metrics report written by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub checkpoint: String,
    pub dataset: String,
    pub split: Split,
    pub frames: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Always null: LPIPS needs a pretrained perceptual network.
    pub lpips: Option<f64>,
    pub notes: String,
    pub per_frame: Vec<FrameMetrics>,
}

fn saved_train_config(manifest: &CheckpointManifest) -> Option<&crate::trainer::TrainConfig> {
    manifest.train.as_ref()
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| UvaError::io(p, e)),
        _ => Ok(()),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Generate { out } => {
            let m = generate_dataset(&cfg.scene, out)?;
            info!("wrote {} ({:?})", out.display(), split_counts(&m));
        }
        Command::Train {
            data,
            out,
            log,
            resume,
            iterations,
            disable_shading,
            disable_delta,
            zero_signed_height,
        } => {
            let dataset = Dataset::load(data)?;
            let mut train = cfg.train.clone();
            if let Some(n) = iterations {
                train.iterations = *n;
            }
            let avatar: Avatar<f32> = match resume {
                Some(p) => {
                    let (a, _) = load_checkpoint(p)?;
                    if a.mesh().topology_hash() != dataset.mesh.topology_hash() {
                        return Err(UvaError::Topology("checkpoint and dataset meshes differ".into()));
                    }
                    a
                }
                None => {
                    let mut model = cfg.model.clone();
                    model.flags.disable_shading |= *disable_shading;
                    model.flags.disable_delta |= *disable_delta;
                    model.flags.zero_signed_height |= *zero_signed_height;
                    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
                    Avatar::new(dataset.skeleton.clone(), dataset.mesh.clone(), model, &mut rng)?
                }
            };
            if let Some(l) = log {
                ensure_parent(l)?;
            }
            let (avatar, rows) = fit(&dataset, avatar, &train, &cfg.render, log.as_deref())?;
            ensure_parent(out)?;
            save_checkpoint(&avatar, Some(&train), out)?;
            if let Some(last) = rows.last() {
                info!("final loss {:.6} after {} iterations", last.loss, avatar.iteration);
            }
        }
        Command::Render {
            checkpoint,
            camera,
            pose,
            out,
            alpha,
        } => {
            let (avatar, _) = load_checkpoint(checkpoint)?;
            let camera = Camera::load(camera)?;
            let pose: Pose = read_json(pose)?;
            let r = render_image(&avatar, &camera, &pose, &cfg.render, cfg.train.seed)?;
            ensure_parent(out)?;
            r.image.save_png(out)?;
            if let Some(a) = alpha {
                r.alpha.save_png(a)?;
            }
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
            limit,
        } => {
            let report = evaluate(checkpoint, data, *split, *limit, &cfg)?;
            std::fs::create_dir_all(out).map_err(|e| UvaError::io(out, e))?;
            let csv_path = out.join("metrics.csv");
            let mut w = csv::Writer::from_path(&csv_path).map_err(|e| UvaError::Load(format!("{}: {e}", csv_path.display())))?;
            for row in &report.per_frame {
                w.serialize(row).map_err(|e| UvaError::Load(format!("{}: {e}", csv_path.display())))?;
            }
            w.flush().map_err(|e| UvaError::io(&csv_path, e))?;
            write_json(&out.join("metrics.json"), &report)?;
            println!(
                "{:?}: {} frames, PSNR {:.3} dB, SSIM {:.4}",
                report.split, report.frames, report.mean_psnr, report.mean_ssim
            );
        }
        Command::EditGeometry { checkpoint, mesh, out } => {
            let (avatar, manifest) = load_checkpoint(checkpoint)?;
            let edit = GeometryEdit::from_obj(mesh, avatar.mesh())?;
            let edited = apply_geometry_edit(&avatar, &edit)?;
            ensure_parent(out)?;
            save_checkpoint(&edited, saved_train_config(&manifest), out)?;
        }
        Command::SwapTexture {
            target,
            source,
            nodes,
            mask,
            camera,
            pose,
            all,
            selection_out,
            out,
        } => {
            let (t, manifest) = load_checkpoint(target)?;
            let (s, _) = load_checkpoint(source)?;
            let selection = match (nodes, mask, all) {
                (Some(p), _, _) => NodeSelection::load(p)?,
                (_, Some(m), _) => {
                    let cam = Camera::load(camera.as_deref().expect("clap enforces --camera"))?;
                    let pose: Pose = read_json(pose.as_deref().expect("clap enforces --pose"))?;
                    let mask = mask_from_image(&Image::load_png(m, 1)?);
                    select_nodes_from_mask(&t, &cam, &pose, &mask, cfg.editor.distance_threshold, &cfg.render)?
                }
                (_, _, true) => NodeSelection::all(t.mesh().vertex_count()),
                _ => return Err(UvaError::Argument("choose --nodes, --mask or --all".into())),
            };
            if let Some(p) = selection_out {
                selection.save(p)?;
            }
            let positions = correspondence(&t, &s);
            let swapped = swap_texture(&t, &s, &selection, &positions)?;
            info!("swapped {} nodes", selection.indices.len());
            ensure_parent(out)?;
            save_checkpoint(&swapped, saved_train_config(&manifest), out)?;
        }
        Command::PaintTexture {
            checkpoint,
            job,
            out,
            selection_out,
        } => {
            let (avatar, manifest) = load_checkpoint(checkpoint)?;
            let job = PaintJobFile::load(job, &cfg)?;
            let (painted, report) = paint_texture(&avatar, &job, &cfg.render)?;
            if let Some(p) = selection_out {
                report.selection.save(p)?;
            }
            info!(
                "painted {} nodes under {} pixels, final loss {:?}",
                report.selection.indices.len(),
                report.masked_pixels,
                report.losses.last()
            );
            ensure_parent(out)?;
            save_checkpoint(&painted, saved_train_config(&manifest), out)?;
        }
        Command::ExportCodes { checkpoint, out } => {
            let (avatar, _) = load_checkpoint(checkpoint)?;
            ensure_parent(out)?;
            let header = export_codes(&avatar, out)?;
            println!("{}", serde_json::to_string(&header).map_err(|e| UvaError::json(out, e))?);
        }
    }
    Ok(())
}

/// Renders every frame of a split and compares it with the ground truth.
pub fn evaluate(checkpoint: &Path, data: &Path, split: Split, limit: Option<usize>, cfg: &RunConfig) -> Result<MetricsReport> {
    let (avatar, _) = load_checkpoint(checkpoint)?;
    let dataset = Dataset::load(data)?;
    let ids = dataset.split(split);
    let ids = &ids[..limit.unwrap_or(ids.len()).min(ids.len())];
    let mut per_frame = Vec::with_capacity(ids.len());
    for id in ids {
        let f = dataset.frame(id)?;
        let ctx = avatar.pose_context(&f.pose)?;
        let r = render_image_in(&avatar, &ctx, &f.camera, &cfg.render, cfg.train.seed)?;
        let row = FrameMetrics {
            frame: id.clone(),
            psnr: psnr(&r.image, &f.image)?,
            ssim: ssim(&r.image, &f.image)?,
        };
        info!("{}: PSNR {:.3} SSIM {:.4}", row.frame, row.psnr, row.ssim);
        per_frame.push(row);
    }
    let n = per_frame.len().max(1) as f64;
    Ok(MetricsReport {
        checkpoint: checkpoint.display().to_string(),
        dataset: data.display().to_string(),
        split,
        frames: per_frame.len(),
        mean_psnr: per_frame.iter().map(|r| r.psnr).sum::<f64>() / n,
        mean_ssim: per_frame.iter().map(|r| r.ssim).sum::<f64>() / n,
        lpips: None,
        notes: "LPIPS not computed: it needs a pretrained perceptual network".into(),
        per_frame,
    })
}
