use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use sslhar::backbones::{embed_with, save_checkpoint, CheckpointMeta, Encoder, EncoderConfig, Family};
use sslhar::finetune::{attach_head, predict};
use sslhar::harmonize::SensorWindow;
use sslhar::tensor::Tensor;
use sslhar_ffi::*;

fn windows(n: usize, seed: u64) -> Vec<f64> {
    Tensor::randn(&[n, SSLHAR_WINDOW_VALUES], 1.0, &mut sslhar::seed::rng(seed)).into_data()
}

fn to_windows(data: &[f64]) -> Vec<SensorWindow> {
    data.chunks(SSLHAR_WINDOW_VALUES)
        .enumerate()
        .map(|(i, v)| SensorWindow::new(format!("w/{i}"), v.to_vec(), 0, "s".into(), "d".into()).unwrap())
        .collect()
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    assert_eq!(unsafe { sslhar_last_error_message(buf.as_mut_ptr(), buf.len()) }, SslharStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn load(dir: &Path) -> (SslharStatus, *mut SslharModel) {
    let path = CString::new(dir.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    let status = unsafe { sslhar_model_load(path.as_ptr(), &mut m) };
    (status, m)
}

fn save(dir: &Path, config: &EncoderConfig, params: &sslhar::params::ParamStore, extra: serde_json::Value) {
    let meta = CheckpointMeta {
        encoder: config.clone(),
        method: "random".into(),
        seed: 1,
        fold_id: None,
        encoder_digest: String::new(),
        extra,
    };
    save_checkpoint(dir, &meta, params).unwrap();
}

#[test]
fn encoder_handle_matches_library_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let enc = Encoder::init(EncoderConfig::desk(Family::SensorwiseTransformer), 3).unwrap();
    save(dir.path(), &enc.config, &enc.params, serde_json::Value::Null);
    let (status, m) = load(dir.path());
    assert_eq!(status, SslharStatus::Ok);
    assert_eq!(sslhar_last_error_length(), 0);

    let (mut width, mut count, mut classes) = (0usize, 0usize, 9usize);
    unsafe {
        assert_eq!(sslhar_model_embedding_width(m, &mut width), SslharStatus::Ok);
        assert_eq!(sslhar_model_param_count(m, &mut count), SslharStatus::Ok);
        assert_eq!(sslhar_model_class_count(m, &mut classes), SslharStatus::Ok);
    }
    assert_eq!((width, count, classes), (enc.config.embedding_width(), enc.param_count(), 0));

    let data = windows(3, 1);
    let mut out = vec![0.0; 3 * width];
    let status = unsafe { sslhar_model_embed(m, data.as_ptr(), 3, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, SslharStatus::Ok);
    let ws = to_windows(&data);
    let refs: Vec<&SensorWindow> = ws.iter().collect();
    assert_eq!(out, embed_with(&enc.params, &enc.config, &refs, 256).into_data());

    let status = unsafe { sslhar_model_embed(m, data.as_ptr(), 3, out.as_mut_ptr(), out.len() - 1) };
    assert_eq!(status, SslharStatus::BufferTooSmall);
    assert!(last_error().contains("need"));
    let mut preds = [0u8; 3];
    let status = unsafe { sslhar_model_predict(m, data.as_ptr(), 3, preds.as_mut_ptr(), 3) };
    assert_eq!(status, SslharStatus::NoClassifier);
    unsafe { sslhar_model_free(m) };
}

#[test]
fn classifier_handle_predicts_unified_class_ids() {
    let dir = tempfile::tempdir().unwrap();
    let enc = Encoder::init(EncoderConfig::desk(Family::ConvInception), 4).unwrap();
    let model = attach_head(&enc.config, &enc.params, &[2, 5, 7], 9).unwrap();
    save(dir.path(), &model.encoder, &model.params, serde_json::json!({ "classes": [2, 5, 7] }));
    let (status, m) = load(dir.path());
    assert_eq!(status, SslharStatus::Ok);
    let mut classes = 0;
    unsafe { sslhar_model_class_count(m, &mut classes) };
    assert_eq!(classes, 3);
    let data = windows(4, 2);
    let mut preds = [0u8; 4];
    assert_eq!(unsafe { sslhar_model_predict(m, data.as_ptr(), 4, preds.as_mut_ptr(), 4) }, SslharStatus::Ok);
    let ws = to_windows(&data);
    let refs: Vec<&SensorWindow> = ws.iter().collect();
    let expected: Vec<u8> = predict(&model.params, &model.encoder, &refs).iter().map(|&p| [2, 5, 7][p]).collect();
    assert_eq!(preds.to_vec(), expected);
    unsafe { sslhar_model_free(m) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let (status, m) = load(&dir.path().join("absent"));
    assert_eq!(status, SslharStatus::Io);
    assert!(m.is_null());
    assert!(sslhar_last_error_length() > 0);
    assert!(last_error().contains("absent"));

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { sslhar_model_load(ptr::null(), &mut out) }, SslharStatus::NullPointer);
    let mut width = 0;
    assert_eq!(unsafe { sslhar_model_embedding_width(ptr::null(), &mut width) }, SslharStatus::NullPointer);
    unsafe { sslhar_model_free(ptr::null_mut()) };

    let mut small = [0 as c_char; 4];
    unsafe { sslhar_last_error_message(small.as_mut_ptr(), small.len()) };
    assert_eq!(unsafe { CStr::from_ptr(small.as_ptr()) }.to_bytes().len(), 3);

    let enc = Encoder::init(EncoderConfig::desk(Family::ConvInception), 4).unwrap();
    save(dir.path(), &enc.config, &enc.params, serde_json::Value::Null);
    let mut params = enc.params.clone();
    params.get_mut("encoder.block0.pool.b").unwrap().data_mut()[0] += 1.0;
    params.save(&dir.path().join(sslhar::backbones::CHECKPOINT_PARAMS)).unwrap();
    assert_eq!(load(dir.path()).0, SslharStatus::Checkpoint);
}

#[test]
fn macro_f1_through_the_abi() {
    let preds = [0usize, 0, 1, 1];
    let labels = [0usize, 1, 1, 1];
    let mut f1 = 0.0;
    assert_eq!(unsafe { sslhar_macro_f1(preds.as_ptr(), labels.as_ptr(), 4, 2, &mut f1) }, SslharStatus::Ok);
    assert!((f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
    assert_eq!(unsafe { sslhar_macro_f1(preds.as_ptr(), labels.as_ptr(), 0, 2, &mut f1) }, SslharStatus::InvalidArgument);
    let bad = [5usize];
    assert_eq!(unsafe { sslhar_macro_f1(bad.as_ptr(), bad.as_ptr(), 1, 2, &mut f1) }, SslharStatus::InvalidArgument);
    let v = unsafe { CStr::from_ptr(sslhar_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_abi_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sslhar.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "sslhar_version",
        "sslhar_last_error_length",
        "sslhar_last_error_message",
        "sslhar_model_load",
        "sslhar_model_free",
        "sslhar_model_embedding_width",
        "sslhar_model_param_count",
        "sslhar_model_class_count",
        "sslhar_model_embed",
        "sslhar_model_predict",
        "sslhar_macro_f1",
        "SSLHAR_STATUS_NO_CLASSIFIER",
        "typedef struct SslharModel SslharModel",
    ] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"sslhar.h\"\nint main(void) {\n  SslharModel *m = 0;\n  size_t w = 0;\n  \
         if (sslhar_model_load(\"x\", &m) != SSLHAR_STATUS_OK) return 1;\n  \
         sslhar_model_embedding_width(m, &w);\n  sslhar_model_free(m);\n  return (int)w;\n}\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
        .expect("a C compiler on PATH");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
