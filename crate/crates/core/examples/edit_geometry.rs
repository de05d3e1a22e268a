//! Thickens the left arm of the anchor mesh and renders before and after.
//!
//! cargo run --release --example edit_geometry -- [factor]

use uva::body_model::Pose;
use uva::editor::{apply_geometry_edit, bone_vertices, scale_about_axis, GeometryEdit};
use uva::fixtures::{compact_config, shell_avatar, small_body, ShellParams};
use uva::model::Avatar;
use uva::renderer::{render_image, RenderSettings};
use uva::synth_data::{camera_rig, SceneSpec};
use uva::Vec3;

fn main() -> uva::Result<()> {
    let factor: f64 = std::env::args().nth(1).map_or(1.6, |f| f.parse().expect("factor"));
    let out = std::path::Path::new("uva-out/edit");
    std::fs::create_dir_all(out).map_err(|e| uva::UvaError::io(out, e))?;

    let (skeleton, mesh) = small_body(2000)?;
    let avatar: Avatar<f32> = shell_avatar(skeleton, mesh, compact_config(), &ShellParams::default(), 0)?;
    let sk = avatar.skeleton();
    let arm = sk.names.iter().position(|n| n == "left_arm").expect("left_arm bone");
    let moved = scale_about_axis(
        &avatar.mesh().vertices,
        &bone_vertices(avatar.mesh(), arm),
        &sk.joints[arm],
        &Vec3::x(),
        factor,
    );
    let edited = apply_geometry_edit(&avatar, &GeometryEdit { vertices: moved })?;

    let cam = camera_rig(&SceneSpec::default())?.remove(0);
    let pose = Pose::rest(sk.bone_count());
    let settings = RenderSettings::default();
    render_image(&avatar, &cam, &pose, &settings, 0)?.image.save_png(&out.join("before.png"))?;
    render_image(&edited, &cam, &pose, &settings, 0)?.image.save_png(&out.join("after.png"))?;
    println!("wrote {}", out.display());
    Ok(())
}
