//! Swaps the chest appearance of one avatar onto another, selecting nodes
//! from an image-space rectangle.
//!
//! cargo run --release --example swap_texture

use uva::body_model::Pose;
use uva::editor::{correspondence, select_nodes_from_mask, swap_texture, DEFAULT_DISTANCE_THRESHOLD};
use uva::fixtures::{compact_config, shell_avatar, small_body, ShellParams};
use uva::model::Avatar;
use uva::renderer::{render_image, RenderSettings};
use uva::synth_data::{camera_rig, SceneSpec};

fn main() -> uva::Result<()> {
    let out = std::path::Path::new("uva-out/swap");
    std::fs::create_dir_all(out).map_err(|e| uva::UvaError::io(out, e))?;
    let shell = |seed| -> uva::Result<Avatar<f32>> {
        let (sk, mesh) = small_body(600)?;
        shell_avatar(sk, mesh, compact_config(), &ShellParams::default(), seed)
    };
    let (target, source) = (shell(0)?, shell(7)?);

    let cam = camera_rig(&SceneSpec::default())?.remove(0);
    let pose = Pose::rest(target.skeleton().bone_count());
    let settings = RenderSettings::default();
    let (w, h) = (cam.width, cam.height);
    let mask: Vec<bool> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            (w * 2 / 5..w * 3 / 5).contains(&x) && (h / 4..h * 2 / 5).contains(&y)
        })
        .collect();
    let selection = select_nodes_from_mask(&target, &cam, &pose, &mask, DEFAULT_DISTANCE_THRESHOLD, &settings)?;
    println!("{} nodes selected", selection.indices.len());
    selection.save(&out.join("selection.json"))?;

    let swapped = swap_texture(&target, &source, &selection, &correspondence(&target, &source))?;
    for (name, a) in [("target", &target), ("source", &source), ("swapped", &swapped)] {
        render_image(a, &cam, &pose, &settings, 0)?.image.save_png(&out.join(format!("{name}.png")))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
