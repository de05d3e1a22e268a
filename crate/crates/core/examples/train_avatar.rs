//! Fits a small avatar to a freshly generated 64x64 dataset and reports
//! PSNR/SSIM per split.
//!
//! cargo run --release --example train_avatar -- [iterations]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use uva::fixtures::compact_config;
use uva::metrics::{psnr, ssim};
use uva::model::Avatar;
use uva::renderer::{render_image_in, RenderSettings};
use uva::synth_data::{generate_dataset, Dataset, SceneSpec, Split};
use uva::trainer::{fit, save_checkpoint, TrainConfig};

fn main() -> uva::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let iterations = std::env::args().nth(1).map_or(500, |n| n.parse().expect("iterations"));
    let root = std::path::Path::new("uva-out/train");
    let spec = SceneSpec {
        resolution: 64,
        ..SceneSpec::default()
    };
    generate_dataset(&spec, &root.join("data"))?;
    let ds = Dataset::load(&root.join("data"))?;

    let config = TrainConfig {
        iterations,
        batch_rays: 256,
        eval_every: 100,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let avatar: Avatar<f32> = Avatar::new(ds.skeleton.clone(), ds.mesh.clone(), compact_config(), &mut rng)?;
    let settings = RenderSettings::default();
    let (avatar, _) = fit(&ds, avatar, &config, &settings, Some(&root.join("log.csv")))?;
    save_checkpoint(&avatar, Some(&config), &root.join("avatar.ckpt"))?;

    for split in [Split::Train, Split::NovelView, Split::NovelPose] {
        let (mut p, mut s) = (0.0, 0.0);
        let frames = ds.frames(split)?;
        for f in frames.iter().take(5) {
            let r = render_image_in(&avatar, &avatar.pose_context(&f.pose)?, &f.camera, &settings, 0)?;
            p += psnr(&r.image, &f.image)?;
            s += ssim(&r.image, &f.image)?;
        }
        let n = frames.len().min(5) as f64;
        println!("{split:?}: PSNR {:.2} dB, SSIM {:.4} (first {n} frames)", p / n, s / n);
    }
    Ok(())
}
