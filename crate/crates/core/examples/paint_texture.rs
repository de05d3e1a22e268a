//! Paints a red patch onto the chest by fine-tuning the appearance codes of
//! the nodes under the mask.
//!
//! cargo run --release --example paint_texture -- [iterations]

use uva::body_model::Pose;
use uva::editor::{paint_texture, PaintJob};
use uva::fixtures::{compact_config, shell_avatar, small_body, ShellParams};
use uva::model::Avatar;
use uva::renderer::{render_image, RenderSettings};
use uva::synth_data::{camera_rig, SceneSpec};

fn main() -> uva::Result<()> {
    let iterations = std::env::args().nth(1).map_or(300, |n| n.parse().expect("iterations"));
    let out = std::path::Path::new("uva-out/paint");
    std::fs::create_dir_all(out).map_err(|e| uva::UvaError::io(out, e))?;
    let (sk, mesh) = small_body(600)?;
    let avatar: Avatar<f32> = shell_avatar(sk, mesh, compact_config(), &ShellParams::default(), 0)?;

    let cam = camera_rig(&SceneSpec {
        resolution: 96,
        ..SceneSpec::default()
    })?
    .remove(0);
    let pose = Pose::rest(avatar.skeleton().bone_count());
    let settings = RenderSettings::default();
    let before = render_image(&avatar, &cam, &pose, &settings, 0)?;

    let mut reference = before.image.clone();
    let mut mask = vec![false; (cam.width * cam.height) as usize];
    for y in 30..46 {
        for x in 40..56 {
            if before.alpha.get(x, y)[0] > 0.99 {
                mask[(y * cam.width + x) as usize] = true;
                reference.set(x, y, &[1.0, 0.0, 0.0]);
            }
        }
    }
    let mut job = PaintJob::new(cam.clone(), pose.clone(), reference, mask);
    job.iterations = iterations;
    // a short run needs a larger step than the default schedule
    job.code_lr = 5e-2;
    job.decoder_lr = job.code_lr / 100.0;
    let (painted, report) = paint_texture(&avatar, &job, &settings)?;
    println!(
        "{} nodes, {} masked pixels, loss {:.4} -> {:.4}",
        report.selection.indices.len(),
        report.masked_pixels,
        report.losses.first().unwrap_or(&0.0),
        report.losses.last().unwrap_or(&0.0)
    );
    before.image.save_png(&out.join("before.png"))?;
    render_image(&painted, &cam, &pose, &settings, 0)?.image.save_png(&out.join("after.png"))?;
    println!("wrote {}", out.display());
    Ok(())
}
