use std::ffi::{CStr, CString};
use std::ptr;

use coneboot::segnet::net::{ModelWeights, NetConfig};
use coneboot::segnet::save_weights;
use coneboot_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cb_last_error()) }.to_string_lossy().into_owned()
}

/// Static background with one flickering square.
fn moving_square(w: usize, h: usize, n: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(w * h * n);
    for f in 0..n {
        for y in 0..h {
            for x in 0..w {
                let inside = (8..24).contains(&x) && (8..24).contains(&y);
                out.push(if inside { ((x * 37 + y * 11 + f * 97) % 200) as u8 + 20 } else { 30 });
            }
        }
    }
    out
}

#[test]
fn mask_generation_round_trip() {
    let (w, h) = (32, 32);
    let frames = moving_square(w, h, 4);
    let mut mask = ptr::null_mut();
    let st = unsafe { cb_mask_generate(frames.as_ptr(), 4, w, h, CbMaskKind::Hull, 15, 4.0, &mut mask) };
    assert_eq!(st, CbStatus::Ok, "{}", last_error());
    assert!(last_error().is_empty());
    let (mut mw, mut mh) = (0, 0);
    assert_eq!(unsafe { cb_mask_dims(mask, &mut mw, &mut mh) }, CbStatus::Ok);
    assert_eq!((mw, mh), (w, h));
    let mut bytes = vec![7u8; w * h];
    assert_eq!(unsafe { cb_mask_copy(mask, bytes.as_mut_ptr(), bytes.len()) }, CbStatus::Ok);
    assert!(bytes.iter().all(|&b| b == 0 || b == 255));
    assert_eq!(bytes[16 * w + 16], 255);
    assert_eq!(bytes[0], 0);

    // Same mask through from_bytes scores 1.0 against itself.
    let mut copy = ptr::null_mut();
    assert_eq!(unsafe { cb_mask_from_bytes(bytes.as_ptr(), w, h, &mut copy) }, CbStatus::Ok);
    let mut acc = 0.0;
    assert_eq!(unsafe { cb_pixel_accuracy(mask, copy, &mut acc) }, CbStatus::Ok);
    assert_eq!(acc, 1.0);

    let mut short = vec![0u8; 10];
    assert_eq!(
        unsafe { cb_mask_copy(mask, short.as_mut_ptr(), short.len()) },
        CbStatus::DimensionMismatch
    );
    assert!(last_error().contains("10 bytes"));
    unsafe {
        cb_mask_free(mask);
        cb_mask_free(copy);
        cb_mask_free(ptr::null_mut());
    }
}

#[test]
fn errors_are_reported() {
    let mut mask = ptr::null_mut();
    let frames = moving_square(32, 32, 1);
    // One frame is not a sequence.
    let st = unsafe { cb_mask_generate(frames.as_ptr(), 1, 32, 32, CbMaskKind::Threshold, 15, 4.0, &mut mask) };
    assert_eq!(st, CbStatus::InvalidArgument);
    assert!(mask.is_null());
    assert!(!last_error().is_empty());
    // Even block size.
    let frames = moving_square(32, 32, 3);
    let st = unsafe { cb_mask_generate(frames.as_ptr(), 3, 32, 32, CbMaskKind::Threshold, 16, 4.0, &mut mask) };
    assert_eq!(st, CbStatus::InvalidArgument);
    let st = unsafe { cb_mask_generate(ptr::null(), 3, 32, 32, CbMaskKind::Threshold, 15, 4.0, &mut mask) };
    assert_eq!(st, CbStatus::NullPointer);
    let st = unsafe { cb_mask_generate(frames.as_ptr(), 3, 32, 32, CbMaskKind::Threshold, 15, 4.0, ptr::null_mut()) };
    assert_eq!(st, CbStatus::NullPointer);
    let mut model = ptr::null_mut();
    let missing = CString::new("/nonexistent/weights.cbw").unwrap();
    assert_eq!(unsafe { cb_model_load(missing.as_ptr(), &mut model) }, CbStatus::Io);
    assert!(model.is_null());
}

#[test]
fn model_predict_and_deid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("zero.cbw");
    // All-zero weights output 0.5 everywhere, which counts as foreground.
    let cfg = NetConfig {
        input_size: 16,
        depth: 1,
        base_channels: 2,
    };
    save_weights(&ModelWeights::zeros(cfg).unwrap(), &path).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { cb_model_load(c_path.as_ptr(), &mut model) }, CbStatus::Ok, "{}", last_error());
    let mut size = 0;
    assert_eq!(unsafe { cb_model_input_size(model, &mut size) }, CbStatus::Ok);
    assert_eq!(size, 16);

    let (w, h) = (40, 30);
    let frame: Vec<u8> = (0..w * h).map(|i| (i % 251) as u8).collect();
    let mut mask = ptr::null_mut();
    assert_eq!(unsafe { cb_model_predict(model, frame.as_ptr(), w, h, &mut mask) }, CbStatus::Ok);
    let mut bytes = vec![0u8; w * h];
    assert_eq!(unsafe { cb_mask_copy(mask, bytes.as_mut_ptr(), bytes.len()) }, CbStatus::Ok);
    assert!(bytes.iter().all(|&b| b == 255));

    let mut out = vec![0u8; w * h];
    assert_eq!(unsafe { cb_deid_frame(model, frame.as_ptr(), w, h, out.as_mut_ptr()) }, CbStatus::Ok);
    assert_eq!(out, frame);
    unsafe {
        cb_mask_free(mask);
        cb_model_free(model);
    }
}

#[test]
fn statistics() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let b = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
    let (mut t, mut p) = (0.0, 0.0);
    assert_eq!(unsafe { cb_t_test(a.as_ptr(), 6, b.as_ptr(), 6, &mut t, &mut p) }, CbStatus::Ok);
    assert!((t + 0.926).abs() < 1e-3 && (p - 0.376).abs() < 1e-3, "t {t} p {p}");
    assert_eq!(
        unsafe { cb_t_test(a.as_ptr(), 1, b.as_ptr(), 6, &mut t, &mut p) },
        CbStatus::InvalidArgument
    );

    let pv = [1e-9, 0.012, 0.02, 0.03, 0.04, 0.2];
    let mut th = [0.0; 6];
    let mut sig = [9u8; 6];
    assert_eq!(
        unsafe { cb_holm_bonferroni(pv.as_ptr(), 6, 0.05, th.as_mut_ptr(), sig.as_mut_ptr()) },
        CbStatus::Ok
    );
    assert_eq!(sig, [1, 0, 0, 0, 0, 0]);
    assert!((th[0] - 0.05 / 6.0).abs() < 1e-15 && th[5] == 0.05);
}

#[test]
fn version_and_header() {
    let v = unsafe { CStr::from_ptr(cb_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/coneboot.h")).unwrap();
    for name in [
        "CONEBOOT_H",
        "typedef struct CbMask CbMask;",
        "typedef struct CbModel CbModel;",
        "CB_STATUS_NULL_POINTER = 1",
        "CbStatus cb_mask_generate(",
        "CbStatus cb_model_predict(",
        "CbStatus cb_deid_frame(",
        "const char *cb_last_error(void);",
    ] {
        assert!(header.contains(name), "header lacks `{name}`");
    }
}

/// The header must compile as C when a compiler is around.
#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"coneboot.h\"\nint main(void) { CbMask *m = 0; void (*f)(CbMask *) = cb_mask_free; return f == 0 || m != 0; }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "cc rejected coneboot.h"),
        Err(_) => eprintln!("no C compiler available; skipped"),
    }
}
