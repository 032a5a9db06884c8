#ifndef TRAJMAP_H
#define TRAJMAP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TrajmapStatus {
  TRAJMAP_STATUS_OK = 0,
  TRAJMAP_STATUS_CONFIG_ERROR = 1,
  TRAJMAP_STATUS_DATA_ERROR = 2,
  TRAJMAP_STATUS_TRAINING_ERROR = 3,
  TRAJMAP_STATUS_NULL_ARGUMENT = 10,
  TRAJMAP_STATUS_INVALID_UTF8 = 11,
  TRAJMAP_STATUS_BUFFER_TOO_SMALL = 12,
  TRAJMAP_STATUS_BAD_MODEL = 13,
  TRAJMAP_STATUS_PANIC = 20,
} TrajmapStatus;

typedef enum TrajmapLabel {
  TRAJMAP_LABEL_INTERSECTION = 0,
  TRAJMAP_LABEL_STRAIGHT = 1,
} TrajmapLabel;

// Opaque trained classifier.
typedef struct TrajmapModel TrajmapModel;

typedef struct TrajmapBBox {
  double lat_min;
  double lat_max;
  double lon_min;
  double lon_max;
} TrajmapBBox;

typedef struct TrajmapClassMetrics {
  double precision;
  double recall;
  double f1;
  uint64_t support;
} TrajmapClassMetrics;

// Report for a 2x2 confusion matrix; class order intersection, straight.
typedef struct TrajmapReport {
  struct TrajmapClassMetrics classes[2];
  double accuracy;
  double macro_precision;
  double macro_recall;
  double macro_f1;
  double weighted_precision;
  double weighted_recall;
  double weighted_f1;
  uint64_t total;
  // Number of 0/0 ratios reported as zero.
  uint32_t degenerate;
} TrajmapReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf`, truncating
// to fit. Returns the full message length excluding the terminator.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t trajmap_last_error_message(char *buf, size_t len);

// Writes the geohash of `(lat, lon)` at `precision` into `out`.
//
// # Safety
// `out` must point to `out_len` writable bytes.
enum TrajmapStatus trajmap_geohash_encode(double lat,
                                          double lon,
                                          uint8_t precision,
                                          char *out,
                                          size_t out_len);

// Bounding box of a geohash code.
//
// # Safety
// `code` must be a NUL-terminated string and `out` a valid pointer.
enum TrajmapStatus trajmap_geohash_bounds(const char *code, struct TrajmapBBox *out);

// Trajectory color for a speed; pass a NaN speed when it is unknown.
//
// # Safety
// `rgb` must point to 3 writable bytes.
enum TrajmapStatus trajmap_speed_to_color(double speed, double v_max, uint8_t *rgb);

// Loads a model file. On success `*out` owns a new handle.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum TrajmapStatus trajmap_model_load(const char *path, struct TrajmapModel **out);

// Loads a model from an in-memory byte stream.
//
// # Safety
// `bytes` must point to `len` readable bytes and `out` be a valid pointer.
enum TrajmapStatus trajmap_model_load_bytes(const uint8_t *bytes,
                                            size_t len,
                                            struct TrajmapModel **out);

// Classifies a row-major raster with 1 (grayscale) or 3 (RGB) interleaved
// channels. Writes the intersection probability and the thresholded label.
//
// # Safety
// `model` must come from a load call; `pixels` must point to
// `width * height * channels` bytes; `score` and `label` must be valid.
enum TrajmapStatus trajmap_model_predict(const struct TrajmapModel *model,
                                         const uint8_t *pixels,
                                         size_t width,
                                         size_t height,
                                         size_t channels,
                                         double threshold,
                                         double *score,
                                         enum TrajmapLabel *label);

// Releases a model handle; null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void trajmap_model_free(struct TrajmapModel *model);

// Metrics for `counts[actual][predicted]` laid out row-major.
//
// # Safety
// `counts` must point to 4 values and `out` be a valid pointer.
enum TrajmapStatus trajmap_report_from_counts(const uint64_t *counts, struct TrajmapReport *out);

// Runs the full pipeline from a JSON config file.
//
// # Safety
// `config_path` must be a NUL-terminated string.
enum TrajmapStatus trajmap_run_pipeline(const char *config_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRAJMAP_H */
