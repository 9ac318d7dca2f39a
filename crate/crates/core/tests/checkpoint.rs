use cyanocast::dataset::{build_samples, synth_series, SynthProfile, HORIZON, SEQ_LEN};
use cyanocast::features::{calibrate_thresholds, FeatureNorm, SegmentCalibration};
use cyanocast::nn::{Checkpoint, Model, ModelConfig};
use cyanocast::train::{fit, predict_samples, TrainConfig};

#[test]
fn trained_checkpoint_reloads_bit_identically() {
    let profile = SynthProfile { years: 1, ..SynthProfile::default() };
    let records = synth_series(&profile, 4).unwrap();
    let counts: Vec<_> = records.iter().map(|r| r.bin_counts).collect();
    let norm = FeatureNorm::fit(&records).unwrap();
    let calib = SegmentCalibration::new(
        "bay",
        [25.0, 60.0, 100.0, 150.0],
        calibrate_thresholds(&counts).unwrap(),
        vec![7, 8, 9],
        norm.clone(),
    )
    .unwrap();
    let samples: Vec<_> = build_samples(&records, &calib, SEQ_LEN, HORIZON).unwrap().into_iter().take(40).collect();
    let config = ModelConfig { d_model: 16, heads: 2, snb_hidden: [8, 8, 8], lstm_hidden: 4, ..ModelConfig::default() };
    let cfg = TrainConfig { epochs: 2, batch_size: 8, seed: 3, ..TrainConfig::default() };
    let result = fit(&samples, &[], Model::new(config, 3).unwrap(), &cfg).unwrap();
    assert_eq!(result.history.len(), 2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ckpt = Checkpoint { model: result.model, norms: vec![("bay".into(), norm.clone())] };
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.norm_for("bay"), Some(&norm));
    assert_eq!(back.to_bytes(), ckpt.to_bytes());
    let a = predict_samples(&ckpt.model, &samples).unwrap();
    let b = predict_samples(&back.model, &samples).unwrap();
    assert_eq!(a, b);
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let model = Model::new(ModelConfig { d_model: 8, heads: 2, snb_hidden: [4, 4, 4], lstm_hidden: 2, ..ModelConfig::default() }, 1).unwrap();
    let bytes = Checkpoint { model, norms: vec![] }.to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() / 2], "cut").is_err());
    assert!(Checkpoint::from_bytes(b"nope", "junk").is_err());
}
