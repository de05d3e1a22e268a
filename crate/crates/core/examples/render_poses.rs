//! Renders the analytic shell avatar in a few poses from every rig camera.
//!
//! cargo run --release --example render_poses

use uva::fixtures::{compact_config, shell_avatar, small_body, ShellParams};
use uva::model::Avatar;
use uva::renderer::{render_image, RenderSettings};
use uva::synth_data::{camera_rig, pose_trajectory, SceneSpec};

fn main() -> uva::Result<()> {
    let out = std::path::Path::new("uva-out/poses");
    std::fs::create_dir_all(out).map_err(|e| uva::UvaError::io(out, e))?;
    let (skeleton, mesh) = small_body(600)?;
    let bones = skeleton.bone_count();
    let avatar: Avatar<f32> = shell_avatar(skeleton, mesh, compact_config(), &ShellParams::default(), 0)?;
    let cameras = camera_rig(&SceneSpec {
        resolution: 96,
        ..SceneSpec::default()
    })?;
    let settings = RenderSettings::default();
    for (p, pose) in pose_trajectory(bones, 4, 0.6, 1).iter().enumerate() {
        for (c, cam) in cameras.iter().enumerate() {
            let r = render_image(&avatar, cam, pose, &settings, 0)?;
            r.image.save_png(&out.join(format!("c{c}_p{p}.png")))?;
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
