use xlm_core::model::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, model_from_checkpoint, save_checkpoint, Model, ModelConfig,
};
use xlm_core::CoreError;
use xlm_tensor::{RngStream, Tensor};

fn small() -> ModelConfig {
    ModelConfig { input_size: 32, ..ModelConfig::desk() }
}

fn perturbed(cfg: &ModelConfig) -> Model<f32> {
    let mut m = Model::<f32>::build(cfg, &mut RngStream::new(cfg.seed)).unwrap();
    let mut rng = RngStream::new(99);
    let ids: Vec<_> = m.store.ids().collect();
    for id in ids {
        for v in m.store.value_mut(id).data_mut() {
            *v += rng.normal() as f32 * 1e-3;
        }
    }
    m
}

#[test]
fn round_trip_is_bit_exact() {
    let cfg = small();
    let m = perturbed(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.xlmc");
    save_checkpoint(&m, &path).unwrap();
    let back = load_checkpoint::<f32>(&path, &cfg).unwrap();
    assert!(back.store.bit_eq(&m.store));
    let x = Tensor::from_fn(&[2, 3, 32, 32], |i| (i % 13) as f32 / 13.0);
    let a = m.predict(&x, &mut RngStream::new(0)).unwrap();
    let b = back.predict(&x, &mut RngStream::new(0)).unwrap();
    assert!(a.bit_eq(&b));
}

#[test]
fn f64_round_trip_is_bit_exact() {
    let cfg = small();
    let m = Model::<f64>::build(&cfg, &mut RngStream::new(4)).unwrap();
    let data = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
    let back = model_from_checkpoint::<f64>(&data, &cfg).unwrap();
    assert!(back.store.bit_eq(&m.store));
}

fn is_format(r: Result<impl Sized, CoreError>) -> bool {
    matches!(r, Err(CoreError::Format(_)))
}

#[test]
fn corruption_is_rejected() {
    let cfg = small();
    let bytes = encode_checkpoint(&perturbed(&cfg));
    for cut in [0, 3, 6, 38, 42, bytes.len() / 2, bytes.len() - 1] {
        assert!(is_format(decode_checkpoint(&bytes[..cut])), "truncated at {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'Y';
    assert!(is_format(decode_checkpoint(&bad)));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(is_format(decode_checkpoint(&bad)));
    let mut bad = bytes.clone();
    bad.push(0);
    assert!(is_format(decode_checkpoint(&bad)));
    let mut bad = bytes.clone();
    bad[10] ^= 1;
    let data = decode_checkpoint(&bad).unwrap();
    assert!(is_format(model_from_checkpoint::<f32>(&data, &cfg)));
}

#[test]
fn config_mismatch_is_rejected() {
    let cfg = small();
    let data = decode_checkpoint(&encode_checkpoint(&perturbed(&cfg))).unwrap();
    let other = ModelConfig { input_size: 64, ..cfg.clone() };
    let err = model_from_checkpoint::<f32>(&data, &other).err().unwrap();
    assert!(err.to_string().contains("hash"), "{err}");
    let reseeded = ModelConfig { seed: 77, ..cfg };
    assert!(model_from_checkpoint::<f32>(&data, &reseeded).is_ok());
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let r = load_checkpoint::<f32>(&dir.path().join("absent"), &small());
    assert!(matches!(r, Err(CoreError::Io { .. })));
}
