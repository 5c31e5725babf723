use std::ffi::{CStr, CString};
use std::ptr;

use sense_core::model::{forward_frames, ModelDims, ModelParams};
use sense_core::retrieval::EmbeddingStore;
use sense_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(sense_last_error()) }.to_string_lossy().into_owned()
}

fn cpath(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sense.h")).unwrap();
    for name in [
        "sense_last_error",
        "sense_version",
        "sense_model_load",
        "sense_model_init",
        "sense_model_save",
        "sense_model_dims",
        "sense_model_free",
        "sense_model_embed",
        "sense_store_load",
        "sense_store_free",
        "sense_store_len",
        "sense_store_dim",
        "sense_store_mean_center",
        "sense_store_id",
        "sense_store_top_k",
        "sense_cosine_loss",
        "typedef struct SenseModel SenseModel",
        "SENSE_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn model_round_trip_matches_core() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.model");
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(sense_model_init(3, 5, 0, 4, 9, &mut model), SenseStatus::Ok);
        assert_eq!(sense_model_save(model, cpath(&path).as_ptr()), SenseStatus::Ok);
        sense_model_free(model);

        let mut loaded = ptr::null_mut();
        assert_eq!(sense_model_load(cpath(&path).as_ptr(), &mut loaded), SenseStatus::Ok);
        let (mut d_in, mut d_h, mut d_a, mut d_e) = (0, 0, 0, 0);
        assert_eq!(sense_model_dims(loaded, &mut d_in, &mut d_h, &mut d_a, &mut d_e), SenseStatus::Ok);
        assert_eq!((d_in, d_h, d_a, d_e), (3, 5, 5, 4));

        let frames: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut emb = [0.0; 4];
        let mut att = [0.0; 4];
        assert_eq!(
            sense_model_embed(loaded, frames.as_ptr(), 4, 3, emb.as_mut_ptr(), 4, att.as_mut_ptr()),
            SenseStatus::Ok
        );
        let core = ModelParams::init(ModelDims::new(3, 5, 4), 9).unwrap();
        let view = ndarray::ArrayView2::from_shape((4, 3), &frames[..]).unwrap();
        let expect = forward_frames(&core, view, "x").unwrap();
        for (a, b) in emb.iter().zip(&expect.embedding) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!((att.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let mut small = [0.0; 2];
        assert_eq!(
            sense_model_embed(loaded, frames.as_ptr(), 4, 3, small.as_mut_ptr(), 2, ptr::null_mut()),
            SenseStatus::BufferTooSmall
        );
        assert_eq!(
            sense_model_embed(loaded, frames.as_ptr(), 3, 4, emb.as_mut_ptr(), 4, ptr::null_mut()),
            SenseStatus::Shape
        );
        assert!(!last_error().is_empty());
        sense_model_free(loaded);
    }
}

#[test]
fn load_errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = ptr::null_mut();
    let mut store = ptr::null_mut();
    unsafe {
        let missing = cpath(&dir.path().join("nope.model"));
        assert_eq!(sense_model_load(missing.as_ptr(), &mut model), SenseStatus::Io);
        assert!(model.is_null());
        assert!(last_error().contains("nope.model"));

        let bad = dir.path().join("bad.emb");
        std::fs::write(&bad, "garbage\n").unwrap();
        assert_eq!(sense_store_load(cpath(&bad).as_ptr(), &mut store), SenseStatus::Parse);
        assert!(store.is_null());

        assert_eq!(sense_model_load(ptr::null(), &mut model), SenseStatus::NullPointer);
        assert_eq!(sense_model_init(0, 4, 0, 2, 0, &mut model), SenseStatus::Config);
        sense_model_free(ptr::null_mut());
        sense_store_free(ptr::null_mut());
        assert_eq!(sense_store_len(ptr::null()), 0);
    }
}

#[test]
fn store_queries() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.emb");
    let entries = [("b", vec![1.0, 0.0]), ("a", vec![1.0, 0.0]), ("c", vec![0.0, 1.0])];
    EmbeddingStore::from_entries(2, entries.iter().map(|(i, v)| (i.to_string(), v.clone())))
        .unwrap()
        .save(&path)
        .unwrap();

    let mut store = ptr::null_mut();
    unsafe {
        assert_eq!(sense_store_load(cpath(&path).as_ptr(), &mut store), SenseStatus::Ok);
        assert_eq!(sense_store_len(store), 3);
        assert_eq!(sense_store_dim(store), 2);

        let q = [2.0, 0.0];
        let mut idx = [usize::MAX; 3];
        let mut scores = [0.0; 3];
        let mut count = 0;
        assert_eq!(
            sense_store_top_k(store, q.as_ptr(), 2, 3, idx.as_mut_ptr(), scores.as_mut_ptr(), &mut count),
            SenseStatus::Ok
        );
        assert_eq!(count, 3);
        // Tied scores resolve by ascending id: "a" (index 1) before "b" (index 0).
        assert_eq!(idx, [1, 0, 2]);
        assert!((scores[0] - 1.0).abs() < 1e-12 && scores[2].abs() < 1e-12);

        let mut needed = 0;
        let mut buf = [0 as std::ffi::c_char; 8];
        assert_eq!(sense_store_id(store, 2, buf.as_mut_ptr(), buf.len(), &mut needed), SenseStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "c");
        assert_eq!(needed, 2);
        assert_eq!(sense_store_id(store, 3, buf.as_mut_ptr(), buf.len(), &mut needed), SenseStatus::Input);
        assert_eq!(sense_store_id(store, 0, ptr::null_mut(), 0, &mut needed), SenseStatus::BufferTooSmall);

        let mut centered = ptr::null_mut();
        assert_eq!(sense_store_mean_center(store, &mut centered), SenseStatus::Ok);
        let mut again = ptr::null_mut();
        assert_eq!(sense_store_mean_center(centered, &mut again), SenseStatus::State);
        assert!(again.is_null());
        sense_store_free(centered);
        sense_store_free(store);
    }
}

#[test]
fn cosine_loss_through_abi() {
    let s = [3.0, 4.0];
    let t = [4.0, 3.0];
    let mut out = -1.0;
    unsafe {
        assert_eq!(sense_cosine_loss(s.as_ptr(), t.as_ptr(), 2, &mut out), SenseStatus::Ok);
        assert!((out - 0.04).abs() < 1e-15);
        assert_eq!(last_error(), "");
        let zero = [0.0, 0.0];
        assert_eq!(sense_cosine_loss(zero.as_ptr(), t.as_ptr(), 2, &mut out), SenseStatus::Domain);
        let v = CStr::from_ptr(sense_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/sense.h");
    let status = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .status();
    match status {
        Ok(s) => assert!(s.success(), "cc rejected sense.h"),
        Err(e) => eprintln!("skipping: no C compiler ({e})"),
    }
}
