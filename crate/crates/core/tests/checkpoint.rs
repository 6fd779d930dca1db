use hpe_core::baselines::vanilla::VanillaConfig;
use hpe_core::decoder::DecoderConfig;
use hpe_core::encoder::EncoderConfig;
use hpe_core::model::Model;
use hpe_core::selftest::instance;
use hpe_core::train::checkpoint::{decode, encode};
use hpe_core::train::{load, save, Checkpoint};

fn small_hpe() -> Checkpoint {
    let cfg = EncoderConfig { n: 8, d: 16, layers: 2, heads: 4, d_ff: 32 };
    Checkpoint {
        model: Model::hpe(cfg, DecoderConfig::default(), 11).unwrap(),
        meta: vec![("lr".into(), "0.0003".into()), ("groups".into(), "4".into())],
    }
}

#[test]
fn round_trip_is_byte_identical() {
    let ck = small_hpe();
    let (manifest, blob) = encode(&ck).unwrap();
    let back = decode(&manifest, &blob).unwrap();
    assert_eq!(back, ck);
    assert_eq!(encode(&back).unwrap(), (manifest, blob));

    let dir = tempfile::tempdir().unwrap();
    save(&ck, dir.path()).unwrap();
    assert_eq!(load(dir.path()).unwrap(), ck);
}

#[test]
fn vanilla_round_trip() {
    let cfg = VanillaConfig { n: 4, d: 8, blocks: 2, heads: 2, d_ff: 16 };
    let ck = Checkpoint { model: Model::vanilla(cfg, DecoderConfig::default(), 1).unwrap(), meta: vec![] };
    let (m, b) = encode(&ck).unwrap();
    assert_eq!(decode(&m, &b).unwrap(), ck);
}

#[test]
fn mismatched_architecture_is_rejected() {
    let (manifest, blob) = encode(&small_hpe()).unwrap();
    let wrong_d = manifest.replace("\nd 16\n", "\nd 32\n");
    let err = decode(&wrong_d, &blob).unwrap_err().to_string();
    assert!(err.contains("bytes") || err.contains("shape"), "{err}");

    let err = decode(&manifest, &blob[..blob.len() - 8]).unwrap_err().to_string();
    assert!(err.contains("bytes"), "{err}");

    let renamed = manifest.replacen("param embed_w", "param embed_x", 1);
    assert!(decode(&renamed, &blob).is_err());
    assert!(decode("not a checkpoint\n", &blob).is_err());
    assert!(decode(&manifest.replace("hpe-checkpoint 1", "hpe-checkpoint 9"), &blob).is_err());
}

#[test]
fn checkpoint_runs_at_other_sizes_unmodified() {
    let ck = small_hpe();
    let (m, b) = encode(&ck).unwrap();
    let model = decode(&m, &b).unwrap().model;
    for sizes in [vec![4], vec![8], vec![16], vec![2, 2, 2, 2, 2, 2]] {
        let inst = instance(8, &sizes, 10.0, 5, 0).unwrap();
        assert_eq!(model.run_model_units(&inst, 5).unwrap().w.shape(), (8, sizes.len()));
    }
    let wrong_n = instance(6, &[4], 10.0, 5, 0).unwrap();
    assert!(model.run_model_units(&wrong_n, 0).is_err());
}
