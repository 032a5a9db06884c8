use std::ffi::{c_char, CStr, CString};
use std::ptr;

use trajmap::classifier::{InputSpec, Model};
use trajmap_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe { trajmap_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn encode_and_bounds() {
    let mut buf = [0 as c_char; 16];
    let s = unsafe { trajmap_geohash_encode(57.64911, 10.40744, 11, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(s, TrajmapStatus::Ok);
    let code = unsafe { CStr::from_ptr(buf.as_ptr()) };
    assert_eq!(code.to_str().unwrap(), "u4pruydqqvj");

    let mut bbox = TrajmapBBox::default();
    assert_eq!(
        unsafe { trajmap_geohash_bounds(code.as_ptr(), &mut bbox) },
        TrajmapStatus::Ok
    );
    assert!(bbox.lat_min <= 57.64911 && 57.64911 <= bbox.lat_max);
    assert!(bbox.lon_min <= 10.40744 && 10.40744 <= bbox.lon_max);
}

#[test]
fn encode_reports_errors() {
    let mut small = [0 as c_char; 4];
    let s = unsafe { trajmap_geohash_encode(1.0, 1.0, 8, small.as_mut_ptr(), small.len()) };
    assert_eq!(s, TrajmapStatus::BufferTooSmall);
    let s = unsafe { trajmap_geohash_encode(95.0, 1.0, 8, ptr::null_mut(), 0) };
    assert_eq!(s, TrajmapStatus::DataError);
    assert!(last_error().contains("95"), "{}", last_error());
    let s = unsafe { trajmap_geohash_encode(1.0, 1.0, 13, small.as_mut_ptr(), small.len()) };
    assert_eq!(s, TrajmapStatus::ConfigError);
    let bad = CString::new("abc!").unwrap();
    let mut bbox = TrajmapBBox::default();
    assert_eq!(
        unsafe { trajmap_geohash_bounds(bad.as_ptr(), &mut bbox) },
        TrajmapStatus::DataError
    );
    assert_eq!(
        unsafe { trajmap_geohash_bounds(ptr::null(), &mut bbox) },
        TrajmapStatus::NullArgument
    );
}

#[test]
fn color_ramp() {
    let mut rgb = [0u8; 3];
    assert_eq!(
        unsafe { trajmap_speed_to_color(17.5, 35.0, rgb.as_mut_ptr()) },
        TrajmapStatus::Ok
    );
    assert_eq!(rgb, [128, 128, 0]);
    unsafe { trajmap_speed_to_color(f64::NAN, 35.0, rgb.as_mut_ptr()) };
    assert_eq!(rgb, [0, 0, 255]);
    assert_eq!(
        unsafe { trajmap_speed_to_color(1.0, 0.0, rgb.as_mut_ptr()) },
        TrajmapStatus::ConfigError
    );
}

#[test]
fn model_handle_lifecycle() {
    let model = Model::zeros(InputSpec { size: 16, channels: 1 }).unwrap();
    let bytes = model.to_bytes();
    let mut handle: *mut TrajmapModel = ptr::null_mut();
    assert_eq!(
        unsafe { trajmap_model_load_bytes(bytes.as_ptr(), bytes.len(), &mut handle) },
        TrajmapStatus::Ok
    );
    let pixels = vec![255u8; 32 * 32];
    let (mut score, mut label) = (0.0, TrajmapLabel::Straight);
    let s = unsafe { trajmap_model_predict(handle, pixels.as_ptr(), 32, 32, 1, 0.5, &mut score, &mut label) };
    assert_eq!(s, TrajmapStatus::Ok);
    assert_eq!((score, label), (0.5, TrajmapLabel::Intersection));
    let s = unsafe { trajmap_model_predict(handle, pixels.as_ptr(), 16, 16, 3, 0.5, &mut score, &mut label) };
    assert_eq!(s, TrajmapStatus::DataError);
    unsafe { trajmap_model_free(handle) };
    unsafe { trajmap_model_free(ptr::null_mut()) };

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    model.save(&path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut h2: *mut TrajmapModel = ptr::null_mut();
    assert_eq!(
        unsafe { trajmap_model_load(cpath.as_ptr(), &mut h2) },
        TrajmapStatus::Ok
    );
    unsafe { trajmap_model_free(h2) };
}

#[test]
fn bad_model_bytes() {
    let mut handle: *mut TrajmapModel = ptr::null_mut();
    let junk = b"XXXX1\x01";
    assert_eq!(
        unsafe { trajmap_model_load_bytes(junk.as_ptr(), junk.len(), &mut handle) },
        TrajmapStatus::BadModel
    );
    assert!(handle.is_null());
    assert!(last_error().contains("magic"));
}

#[test]
fn report_from_counts() {
    let counts = [56u64, 11, 1, 169];
    let mut r = TrajmapReport::default();
    assert_eq!(
        unsafe { trajmap_report_from_counts(counts.as_ptr(), &mut r) },
        TrajmapStatus::Ok
    );
    assert_eq!(r.total, 237);
    assert!((r.classes[0].precision - 56.0 / 57.0).abs() < 1e-12);
    assert_eq!(r.classes[1].support, 170);
    assert_eq!(r.degenerate, 0);
    let zero = [0u64; 4];
    assert_eq!(
        unsafe { trajmap_report_from_counts(zero.as_ptr(), &mut r) },
        TrajmapStatus::DataError
    );
}

#[test]
fn pipeline_missing_config() {
    let path = CString::new("/definitely/not/here.json").unwrap();
    assert_eq!(
        unsafe { trajmap_run_pipeline(path.as_ptr()) },
        TrajmapStatus::ConfigError
    );
    assert!(last_error().contains("/definitely/not/here.json"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/trajmap.h");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .status()
    else {
        eprintln!("no C compiler, skipping");
        return;
    };
    assert!(status.success());
}
