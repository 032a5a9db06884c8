//! Tile rasterization.
//!
//! The cell rectangle is stretched onto a square `size x size` grid with row
//! 0 at the north edge. Edges are drawn with an integer line walk and a
//! square brush; there is no anti-aliasing, so output bytes are a pure
//! function of the clip and the parameters.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tiler::TileClip;

pub const BACKGROUND: u8 = 255;

/// Color drawn for vertices without a recorded speed.
pub const MISSING_SPEED_COLOR: [u8; 3] = [0, 0, 255];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Grayscale,
    Speed,
}

impl RenderMode {
    pub fn channels(self) -> usize {
        match self {
            RenderMode::Grayscale => 1,
            RenderMode::Speed => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRaster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, interleaved channels.
    pub pixels: Vec<u8>,
    pub mode: RenderMode,
}

impl TileRaster {
    pub fn blank(size: usize, mode: RenderMode) -> Self {
        let channels = mode.channels();
        Self {
            width: size,
            height: size,
            channels,
            pixels: vec![BACKGROUND; size * size * channels],
            mode,
        }
    }

    pub fn pixel(&self, col: usize, row: usize) -> &[u8] {
        let i = (row * self.width + col) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    fn put(&mut self, col: usize, row: usize, color: &[u8]) {
        let i = (row * self.width + col) * self.channels;
        self.pixels[i..i + self.channels].copy_from_slice(color);
    }

    pub fn is_background(&self, col: usize, row: usize) -> bool {
        self.pixel(col, row).iter().all(|&v| v == BACKGROUND)
    }

    pub fn background_count(&self) -> usize {
        self.pixels
            .chunks_exact(self.channels)
            .filter(|p| p.iter().all(|&v| v == BACKGROUND))
            .count()
    }

    /// True when nothing was drawn.
    pub fn is_blank(&self) -> bool {
        self.pixels.iter().all(|&v| v == BACKGROUND)
    }

    /// Area-average resampling to `size x size`. Each output pixel is the
    /// coverage-weighted mean of the source pixels under it, rounded half up.
    pub fn resample(&self, size: usize) -> TileRaster {
        if size == self.width && size == self.height {
            return self.clone();
        }
        let weights_x = area_weights(self.width, size);
        let weights_y = area_weights(self.height, size);
        let c = self.channels;
        let mut out = vec![0u8; size * size * c];
        let mut acc = vec![0.0f64; c];
        for (oy, wy) in weights_y.iter().enumerate() {
            for (ox, wx) in weights_x.iter().enumerate() {
                acc.iter_mut().for_each(|a| *a = 0.0);
                let mut total = 0.0;
                for &(sy, fy) in wy {
                    for &(sx, fx) in wx {
                        let w = fy * fx;
                        total += w;
                        let px = self.pixel(sx, sy);
                        for (a, &v) in acc.iter_mut().zip(px) {
                            *a += w * v as f64;
                        }
                    }
                }
                let i = (oy * size + ox) * c;
                for (k, a) in acc.iter().enumerate() {
                    out[i + k] = (a / total + 0.5).floor().clamp(0.0, 255.0) as u8;
                }
            }
        }
        TileRaster {
            width: size,
            height: size,
            channels: c,
            pixels: out,
            mode: self.mode,
        }
    }

    pub fn write_png<W: Write>(&self, sink: W) -> Result<()> {
        let mut encoder = png::Encoder::new(sink, self.width as u32, self.height as u32);
        encoder.set_color(match self.channels {
            1 => png::ColorType::Grayscale,
            _ => png::ColorType::Rgb,
        });
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Input(format!("png header: {e}")))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| Error::Input(format!("png data: {e}")))?;
        writer.finish().map_err(|e| Error::Input(format!("png finish: {e}")))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_png(std::io::BufWriter::new(file))
    }

    /// Reads an 8-bit grayscale or RGB PNG.
    pub fn read_png<R: Read>(mut source: R) -> Result<TileRaster> {
        let mut bytes = Vec::new();
        source
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Input(format!("png read: {e}")))?;
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder.read_info().map_err(|e| Error::Format(format!("png: {e}")))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Format("png too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Format(format!("png: {e}")))?;
        buf.truncate(info.buffer_size());
        let mode = match (info.color_type, info.bit_depth) {
            (png::ColorType::Grayscale, png::BitDepth::Eight) => RenderMode::Grayscale,
            (png::ColorType::Rgb, png::BitDepth::Eight) => RenderMode::Speed,
            (c, d) => return Err(Error::Format(format!("unsupported png layout {c:?}/{d:?}"))),
        };
        Ok(TileRaster {
            width: info.width as usize,
            height: info.height as usize,
            channels: mode.channels(),
            pixels: buf,
            mode,
        })
    }

    pub fn load_png(path: &Path) -> Result<TileRaster> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_png(file)
    }
}

/// For each of `dst` output bins, the source indices it overlaps and the
/// overlap length in source-pixel units.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap))
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderParams {
    pub size: usize,
    pub mode: RenderMode,
    /// Speed mapped to pure green, in meters per second.
    pub v_max: f64,
    pub line_width: usize,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            size: 640,
            mode: RenderMode::Speed,
            v_max: 35.0,
            line_width: 2,
        }
    }
}

impl RenderParams {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::Config(format!("raster size must be >= 16, got {}", self.size)));
        }
        if self.line_width < 1 {
            return Err(Error::Config("line width must be >= 1".into()));
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(Error::Config(format!("v_max must be positive, got {}", self.v_max)));
        }
        Ok(())
    }
}

/// Red at standstill to green at `v_max`; missing speed is blue.
pub fn speed_to_color(speed: Option<f64>, v_max: f64) -> [u8; 3] {
    match speed {
        None => MISSING_SPEED_COLOR,
        Some(v) => {
            let s = (v / v_max).clamp(0.0, 1.0);
            [((1.0 - s) * 255.0).round() as u8, (s * 255.0).round() as u8, 0]
        }
    }
}

/// Integer line walk between two pixel centers, every octant, endpoints
/// included.
pub fn line_pixels(from: (i64, i64), to: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = from;
    let dx = (to.0 - x).abs();
    let dy = -(to.1 - y).abs();
    let sx = if x < to.0 { 1 } else { -1 };
    let sy = if y < to.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push((x, y));
        if (x, y) == to {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Pixel `(col, row)` holding a point in the cell frame.
pub fn to_pixel(x: f64, y: f64, width_m: f64, height_m: f64, size: usize) -> (i64, i64) {
    let last = size as i64 - 1;
    let col = (x / width_m * size as f64).floor() as i64;
    let row = ((height_m - y) / height_m * size as f64).floor() as i64;
    (col.clamp(0, last), row.clamp(0, last))
}

/// Draws every chain of `clip`. An empty clip yields a blank raster.
pub fn render_tile(clip: &TileClip, params: &RenderParams) -> Result<TileRaster> {
    params.validate()?;
    let size = params.size;
    let mut raster = TileRaster::blank(size, params.mode);
    let (w, h) = clip.size_m();
    let lo = -((params.line_width as i64 - 1) / 2);
    let hi = lo + params.line_width as i64 - 1;
    let last = size as i64 - 1;
    for chain in &clip.chains {
        for edge in chain.vertices.windows(2) {
            let color: &[u8] = match params.mode {
                RenderMode::Grayscale => &[0],
                RenderMode::Speed => &speed_to_color(edge[0].speed, params.v_max),
            };
            let a = to_pixel(edge[0].x, edge[0].y, w, h, size);
            let b = to_pixel(edge[1].x, edge[1].y, w, h, size);
            for (cx, cy) in line_pixels(a, b) {
                for py in (cy + lo).max(0)..=(cy + hi).min(last) {
                    for px in (cx + lo).max(0)..=(cx + hi).min(last) {
                        raster.put(px as usize, py as usize, color);
                    }
                }
            }
        }
    }
    Ok(raster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geocell::{encode, Precision};
    use crate::tiler::{Chain, ClipVertex};

    fn clip_with(chains: Vec<Vec<(f64, f64, Option<f64>)>>) -> TileClip {
        let cell = encode(42.03, -93.62, Precision::new(8).unwrap()).unwrap();
        let mut clip = TileClip::empty(cell);
        clip.chains = chains
            .into_iter()
            .enumerate()
            .map(|(i, vs)| Chain {
                journey_id: format!("j{i}"),
                start: 0.0,
                vertices: vs.into_iter().map(|(x, y, speed)| ClipVertex { x, y, speed }).collect(),
            })
            .collect();
        clip
    }

    fn params(size: usize, mode: RenderMode, line_width: usize) -> RenderParams {
        RenderParams {
            size,
            mode,
            v_max: 35.0,
            line_width,
        }
    }

    #[test]
    fn ramp_endpoints_and_midpoint() {
        assert_eq!(speed_to_color(Some(0.0), 35.0), [255, 0, 0]);
        assert_eq!(speed_to_color(Some(35.0), 35.0), [0, 255, 0]);
        assert_eq!(speed_to_color(Some(17.5), 35.0), [128, 128, 0]);
        assert_eq!(speed_to_color(Some(99.0), 35.0), [0, 255, 0]);
        assert_eq!(speed_to_color(None, 35.0), [0, 0, 255]);
    }

    #[test]
    fn line_walk_is_symmetric_in_coverage() {
        for (a, b) in [((0, 0), (7, 3)), ((5, 9), (1, 0)), ((3, 3), (3, -4)), ((0, 0), (0, 0))] {
            let p = line_pixels(a, b);
            assert_eq!(p.first(), Some(&a));
            assert_eq!(p.last(), Some(&b));
            let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()) as usize;
            assert_eq!(p.len(), steps + 1);
        }
    }

    #[test]
    fn empty_clip_is_blank() {
        let r = render_tile(&clip_with(vec![]), &params(64, RenderMode::Grayscale, 2)).unwrap();
        assert_eq!(r.pixels.len(), 64 * 64);
        assert!(r.is_blank());
    }

    #[test]
    fn speed_mode_has_three_channels() {
        let clip = clip_with(vec![vec![(1.0, 1.0, Some(10.0)), (5.0, 5.0, Some(10.0))]]);
        let r = render_tile(&clip, &params(32, RenderMode::Speed, 1)).unwrap();
        assert_eq!(r.channels, 3);
        assert_eq!(r.pixels.len(), 32 * 32 * 3);
        assert!(!r.is_blank());
    }

    #[test]
    fn edge_takes_start_vertex_color() {
        let clip = clip_with(vec![vec![(1.0, 10.0, Some(0.0)), (30.0, 10.0, Some(35.0))]]);
        let r = render_tile(&clip, &params(64, RenderMode::Speed, 1)).unwrap();
        let drawn: Vec<&[u8]> = r.pixels.chunks(3).filter(|p| *p != [255, 255, 255]).collect();
        assert!(!drawn.is_empty());
        assert!(drawn.iter().all(|p| *p == [255, 0, 0]));
    }

    #[test]
    fn brush_width_thickens() {
        let clip = clip_with(vec![vec![(0.0, 9.5, None), (38.0, 9.5, None)]]);
        let thin = render_tile(&clip, &params(64, RenderMode::Grayscale, 1)).unwrap();
        let thick = render_tile(&clip, &params(64, RenderMode::Grayscale, 3)).unwrap();
        assert_eq!(64 * 64 - thin.background_count(), 64);
        assert_eq!(64 * 64 - thick.background_count(), 3 * 64);
    }

    #[test]
    fn rejects_bad_params() {
        let clip = clip_with(vec![]);
        assert!(render_tile(&clip, &params(8, RenderMode::Grayscale, 1)).is_err());
        assert!(render_tile(&clip, &params(64, RenderMode::Grayscale, 0)).is_err());
    }

    #[test]
    fn resample_integer_factor_is_block_mean() {
        let mut r = TileRaster::blank(4, RenderMode::Grayscale);
        r.pixels = vec![0, 0, 255, 255, 0, 100, 255, 255, 10, 10, 0, 0, 10, 11, 0, 1];
        let small = r.resample(2);
        // (0+0+0+100)/4 = 25; 255; 41/4 = 10.25 -> 10; 1/4 -> 0
        assert_eq!(small.pixels, vec![25, 255, 10, 0]);
    }

    #[test]
    fn resample_fractional_preserves_uniform() {
        let r = TileRaster::blank(10, RenderMode::Speed);
        let s = r.resample(3);
        assert!(s.is_blank());
        assert_eq!(s.pixels.len(), 27);
    }

    #[test]
    fn png_round_trip() {
        let clip = clip_with(vec![vec![(1.0, 1.0, Some(3.0)), (20.0, 15.0, None)]]);
        for mode in [RenderMode::Grayscale, RenderMode::Speed] {
            let r = render_tile(&clip, &params(48, mode, 2)).unwrap();
            let mut buf = Vec::new();
            r.write_png(&mut buf).unwrap();
            assert_eq!(TileRaster::read_png(buf.as_slice()).unwrap(), r);
        }
    }
}
