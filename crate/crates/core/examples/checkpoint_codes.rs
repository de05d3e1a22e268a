//! Saves a checkpoint, reloads it, and exports the code tables.
//!
//! cargo run --release --example checkpoint_codes

use uva::fixtures::{compact_config, shell_avatar, small_body, ShellParams};
use uva::model::Avatar;
use uva::trainer::{export_codes, import_codes, load_checkpoint, save_checkpoint};

fn main() -> uva::Result<()> {
    let out = std::path::Path::new("uva-out/checkpoint");
    std::fs::create_dir_all(out).map_err(|e| uva::UvaError::io(out, e))?;
    let (sk, mesh) = small_body(600)?;
    let avatar: Avatar<f32> = shell_avatar(sk, mesh, compact_config(), &ShellParams::default(), 0)?;

    let path = out.join("shell.ckpt");
    save_checkpoint(&avatar, None, &path)?;
    let (back, manifest) = load_checkpoint(&path)?;
    println!(
        "format {}, iteration {}, {} parameter blocks, topology {}",
        manifest.format_version,
        manifest.iteration,
        manifest.blocks.len(),
        &manifest.vertex_order_hash[..12]
    );
    assert_eq!(back.params.blocks(), avatar.params.blocks());

    let codes = out.join("codes.bin");
    let header = export_codes(&back, &codes)?;
    let file = import_codes(&codes)?;
    println!("codes {:?} {:?}, {} values", header.tables, header.shape, file.codes.geo.len() + file.codes.rgb.len());
    Ok(())
}
