mod common;

use uva::model::Avatar;
use uva::renderer::{render_image, RenderSettings};
use uva::synth_data::{camera_rig, SceneSpec};
use uva::trainer::{checkpoint_bytes, export_codes, import_codes, load_checkpoint, parse_checkpoint, save_checkpoint, TrainConfig};
use uva::UvaError;

fn avatar() -> Avatar<f32> {
    common::random_avatar(common::tiny_config(), 300, 5).cast()
}

#[test]
fn round_trip_is_byte_identical() {
    let a = avatar();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.ckpt");
    let train = TrainConfig::default();
    save_checkpoint(&a, Some(&train), &p).unwrap();
    let (b, manifest) = load_checkpoint(&p).unwrap();
    assert_eq!(manifest.train.as_ref(), Some(&train));
    assert_eq!(manifest.iteration, a.iteration);
    assert_eq!(a.params.blocks(), b.params.blocks());
    let q = dir.path().join("b.ckpt");
    save_checkpoint(&b, Some(&train), &q).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());

    // renders agree bit for bit
    let cam = camera_rig(&SceneSpec {
        resolution: 16,
        ..SceneSpec::default()
    })
    .unwrap()
    .remove(0);
    let pose = uva::body_model::Pose::rest(a.skeleton().bone_count());
    let s = RenderSettings {
        samples_per_ray: 16,
        ..RenderSettings::default()
    };
    let ra = render_image(&a, &cam, &pose, &s, 0).unwrap();
    let rb = render_image(&b, &cam, &pose, &s, 0).unwrap();
    assert_eq!(ra.image.data, rb.image.data);
}

#[test]
fn corruption_and_truncation_are_load_errors() {
    let bytes = checkpoint_bytes(&avatar(), None).unwrap();
    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(parse_checkpoint(&flipped), Err(UvaError::Load(_))));
    for cut in [0, 7, 20, bytes.len() / 3, bytes.len() - 1] {
        assert!(matches!(parse_checkpoint(&bytes[..cut]), Err(UvaError::Load(_))), "cut at {cut}");
    }
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(parse_checkpoint(&magic), Err(UvaError::Load(_))));
}

#[test]
fn future_version_is_rejected() {
    let mut bytes = checkpoint_bytes(&avatar(), None).unwrap();
    bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
    let err = parse_checkpoint(&bytes).unwrap_err();
    assert!(matches!(err, UvaError::Load(_)));
    assert!(err.to_string().contains("99"), "{err}");
}

#[test]
fn exported_codes_match_the_model() {
    let a = avatar();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("codes.bin");
    let header = export_codes(&a, &p).unwrap();
    let file = import_codes(&p).unwrap();
    assert_eq!(file.header, header);
    assert_eq!(header.shape, [2, a.mesh().vertex_count(), a.config.field.code_dim]);
    assert_eq!(header.vertex_order_hash, a.mesh().topology_hash());
    assert_eq!(file.codes.geo, a.params.codes.geo);
    assert_eq!(file.codes.rgb, a.params.codes.rgb);

    let mut bad = std::fs::read(&p).unwrap();
    bad.push(0);
    std::fs::write(&p, bad).unwrap();
    assert!(matches!(import_codes(&p), Err(UvaError::Load(_))));
}
