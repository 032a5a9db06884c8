//! C interface to trajmap.
//!
//! Every fallible call returns a [`TrajmapStatus`]; on failure the message
//! is kept per thread and can be copied out with
//! [`trajmap_last_error_message`]. Models are opaque handles owned by the
//! caller and released with [`trajmap_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use trajmap::classifier::{self, Model};
use trajmap::dataset::Label;
use trajmap::geocell::{cell_bounds, encode, Precision};
use trajmap::metrics::{self, ConfusionMatrix};
use trajmap::pipeline::{self, PipelineConfig};
use trajmap::raster::{speed_to_color, RenderMode, TileRaster};
use trajmap::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajmapStatus {
    Ok = 0,
    ConfigError = 1,
    DataError = 2,
    TrainingError = 3,
    NullArgument = 10,
    InvalidUtf8 = 11,
    BufferTooSmall = 12,
    BadModel = 13,
    Panic = 20,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajmapLabel {
    Intersection = 0,
    Straight = 1,
}

impl From<Label> for TrajmapLabel {
    fn from(l: Label) -> Self {
        match l {
            Label::Intersection => TrajmapLabel::Intersection,
            Label::Straight => TrajmapLabel::Straight,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrajmapBBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrajmapClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Report for a 2x2 confusion matrix; class order intersection, straight.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrajmapReport {
    pub classes: [TrajmapClassMetrics; 2],
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub total: u64,
    /// Number of 0/0 ratios reported as zero.
    pub degenerate: u32,
}

/// Opaque trained classifier.
pub struct TrajmapModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: TrajmapStatus, msg: impl Into<String>) -> TrajmapStatus {
    set_error(msg.into());
    status
}

fn status_of(err: &Error) -> TrajmapStatus {
    match err {
        Error::BadMagic(_) | Error::VersionMismatch { .. } | Error::Truncated(_) => TrajmapStatus::BadModel,
        e => match e.exit_code() {
            1 => TrajmapStatus::ConfigError,
            3 => TrajmapStatus::TrainingError,
            _ => TrajmapStatus::DataError,
        },
    }
}

/// Runs `f`, turning library errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), TrajmapStatus>) -> TrajmapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TrajmapStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(TrajmapStatus::Panic, "internal panic"),
    }
}

fn lib(err: Error) -> TrajmapStatus {
    let status = status_of(&err);
    fail(status, err.to_string())
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, TrajmapStatus> {
    if ptr.is_null() {
        return Err(fail(TrajmapStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(TrajmapStatus::InvalidUtf8, "string argument is not UTF-8"))
}

/// Copies `s` NUL-terminated into `buf` of `len` bytes.
unsafe fn write_str(s: &str, buf: *mut c_char, len: usize) -> Result<(), TrajmapStatus> {
    if buf.is_null() {
        return Err(fail(TrajmapStatus::NullArgument, "null output buffer"));
    }
    if s.len() + 1 > len {
        return Err(fail(
            TrajmapStatus::BufferTooSmall,
            format!("need {} bytes", s.len() + 1),
        ));
    }
    std::ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Copies the calling thread's last error message into `buf`, truncating
/// to fit. Returns the full message length excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn trajmap_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Writes the geohash of `(lat, lon)` at `precision` into `out`.
///
/// # Safety
/// `out` must point to `out_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn trajmap_geohash_encode(
    lat: f64,
    lon: f64,
    precision: u8,
    out: *mut c_char,
    out_len: usize,
) -> TrajmapStatus {
    guard(|| {
        let p = Precision::new(precision).map_err(|e| fail(TrajmapStatus::ConfigError, e.to_string()))?;
        let cell = encode(lat, lon, p).map_err(lib)?;
        write_str(&cell.code, out, out_len)
    })
}

/// Bounding box of a geohash code.
///
/// # Safety
/// `code` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn trajmap_geohash_bounds(code: *const c_char, out: *mut TrajmapBBox) -> TrajmapStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(TrajmapStatus::NullArgument, "null output"));
        }
        let cell = cell_bounds(read_str(code)?).map_err(lib)?;
        let b = cell.bbox;
        *out = TrajmapBBox {
            lat_min: b.lat_min,
            lat_max: b.lat_max,
            lon_min: b.lon_min,
            lon_max: b.lon_max,
        };
        Ok(())
    })
}

/// Trajectory color for a speed; pass a NaN speed when it is unknown.
///
/// # Safety
/// `rgb` must point to 3 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn trajmap_speed_to_color(speed: f64, v_max: f64, rgb: *mut u8) -> TrajmapStatus {
    guard(|| {
        if rgb.is_null() {
            return Err(fail(TrajmapStatus::NullArgument, "null output"));
        }
        if v_max.is_nan() || v_max <= 0.0 {
            return Err(fail(TrajmapStatus::ConfigError, "v_max must be positive"));
        }
        let c = speed_to_color((!speed.is_nan()).then_some(speed), v_max);
        std::ptr::copy_nonoverlapping(c.as_ptr(), rgb, 3);
        Ok(())
    })
}

unsafe fn store_model(model: Model, out: *mut *mut TrajmapModel) {
    *out = Box::into_raw(Box::new(TrajmapModel { model }));
}

/// Loads a model file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn trajmap_model_load(path: *const c_char, out: *mut *mut TrajmapModel) -> TrajmapStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(TrajmapStatus::NullArgument, "null output"));
        }
        let model = Model::load(&PathBuf::from(read_str(path)?)).map_err(lib)?;
        store_model(model, out);
        Ok(())
    })
}

/// Loads a model from an in-memory byte stream.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn trajmap_model_load_bytes(
    bytes: *const u8,
    len: usize,
    out: *mut *mut TrajmapModel,
) -> TrajmapStatus {
    guard(|| {
        if out.is_null() || (bytes.is_null() && len > 0) {
            return Err(fail(TrajmapStatus::NullArgument, "null argument"));
        }
        let slice = if len == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(bytes, len)
        };
        store_model(Model::from_bytes(slice).map_err(lib)?, out);
        Ok(())
    })
}

/// Classifies a row-major raster with 1 (grayscale) or 3 (RGB) interleaved
/// channels. Writes the intersection probability and the thresholded label.
///
/// # Safety
/// `model` must come from a load call; `pixels` must point to
/// `width * height * channels` bytes; `score` and `label` must be valid.
#[no_mangle]
pub unsafe extern "C" fn trajmap_model_predict(
    model: *const TrajmapModel,
    pixels: *const u8,
    width: usize,
    height: usize,
    channels: usize,
    threshold: f64,
    score: *mut f64,
    label: *mut TrajmapLabel,
) -> TrajmapStatus {
    guard(|| {
        if model.is_null() || pixels.is_null() || score.is_null() || label.is_null() {
            return Err(fail(TrajmapStatus::NullArgument, "null argument"));
        }
        let mode = match channels {
            1 => RenderMode::Grayscale,
            3 => RenderMode::Speed,
            c => return Err(fail(TrajmapStatus::DataError, format!("unsupported channel count {c}"))),
        };
        if width == 0 || width != height {
            return Err(fail(TrajmapStatus::DataError, "raster must be square and non-empty"));
        }
        let raster = TileRaster {
            width,
            height,
            channels,
            pixels: std::slice::from_raw_parts(pixels, width * height * channels).to_vec(),
            mode,
        };
        let p = classifier::predict(&(*model).model, &raster, threshold).map_err(lib)?;
        *score = p.score;
        *label = p.label.into();
        Ok(())
    })
}

/// Releases a model handle; null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn trajmap_model_free(model: *mut TrajmapModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Metrics for `counts[actual][predicted]` laid out row-major.
///
/// # Safety
/// `counts` must point to 4 values and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn trajmap_report_from_counts(counts: *const u64, out: *mut TrajmapReport) -> TrajmapStatus {
    guard(|| {
        if counts.is_null() || out.is_null() {
            return Err(fail(TrajmapStatus::NullArgument, "null argument"));
        }
        let c = std::slice::from_raw_parts(counts, 4);
        let r = metrics::report(&ConfusionMatrix::new([[c[0], c[1]], [c[2], c[3]]])).map_err(lib)?;
        let class = |l: Label| {
            let m = r.classes[l.name()];
            TrajmapClassMetrics {
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                support: m.support,
            }
        };
        *out = TrajmapReport {
            classes: [class(Label::Intersection), class(Label::Straight)],
            accuracy: r.accuracy,
            macro_precision: r.macro_avg.precision,
            macro_recall: r.macro_avg.recall,
            macro_f1: r.macro_avg.f1,
            weighted_precision: r.weighted_avg.precision,
            weighted_recall: r.weighted_avg.recall,
            weighted_f1: r.weighted_avg.f1,
            total: r.total,
            degenerate: r.flags.len() as u32,
        };
        Ok(())
    })
}

/// Runs the full pipeline from a JSON config file.
///
/// # Safety
/// `config_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn trajmap_run_pipeline(config_path: *const c_char) -> TrajmapStatus {
    guard(|| {
        let cfg = PipelineConfig::load(&PathBuf::from(read_str(config_path)?)).map_err(lib)?;
        pipeline::run_pipeline(&cfg).map_err(lib)?;
        Ok(())
    })
}
