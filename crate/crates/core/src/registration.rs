//! Multi-scale template matching of the chest band and ROI extraction.
//!
//! A volume is reduced to a 2-D image by averaging rows `[H/4, H/2)` over all
//! slices. A chest template is matched there by zero-normalized
//! cross-correlation at several scales; the best window fixes the column
//! extent of the region of interest, which spans rows `[0, H/2)` and is
//! resampled to the canonical width.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::PatientMeta;
use crate::phantom::{derive_seed, generate_phantom, phantom_geometry, sample_meta, PhantomConfig};
use crate::volume::{MaskKind, MaskVolume, Volume};

/// Row-major 2-D image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2 {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image2 {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape([height, width], data.len()));
        }
        Ok(Image2 { height, width, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.width + c]
    }

    /// Bilinear resize to `(height, width)` with half-integer pixel centres.
    pub fn resize(&self, height: usize, width: usize) -> Image2 {
        let mut data = vec![0f32; height * width];
        let rows = axis_weights(self.height, height);
        let cols = axis_weights(self.width, width);
        for (r, &(r0, r1, tr)) in rows.iter().enumerate() {
            for (c, &(c0, c1, tc)) in cols.iter().enumerate() {
                data[r * width + c] =
                    bilerp([self.get(r0, c0), self.get(r0, c1), self.get(r1, c0), self.get(r1, c1)], tr, tc);
            }
        }
        Image2 { height, width, data }
    }
}

/// Template match result in projection-image coordinates shifted to volume
/// rows (the band offset is already added to `top`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub scale: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationConfig {
    pub target_width: usize,
    pub scales: Vec<f64>,
    /// Phantoms averaged into the synthesized chest template.
    pub template_count: usize,
    pub template_seed: u64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            target_width: 64,
            scales: default_scales(),
            template_count: 16,
            template_seed: 0x7e3_91a7e,
        }
    }
}

/// `{0.7, 0.8, …, 1.3}`.
pub fn default_scales() -> Vec<f64> {
    (7..=13).map(|i| i as f64 / 10.0).collect()
}

/// A registered region of interest and how it maps back to the source.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiVolume {
    pub volume: Volume,
    pub source_dims: [usize; 3],
    pub bbox: BBox,
    /// Rows of the source kept before resizing (`H/2`).
    pub source_rows: usize,
}

impl RoiVolume {
    /// Maps a source-space mask into ROI coordinates with the same crop and
    /// nearest-neighbour resampling. The result is binary.
    pub fn map_mask(&self, mask: &MaskVolume) -> Result<MaskVolume> {
        if mask.dims() != self.source_dims {
            return Err(Error::shape(self.source_dims, mask.dims()));
        }
        let [s, h, w] = self.volume.dims();
        let rows = nearest_index(self.source_rows, h);
        let cols = nearest_index(self.bbox.width, w);
        let mut out = vec![0f32; s * h * w];
        for si in 0..s {
            for (r, &sr) in rows.iter().enumerate() {
                for (c, &sc) in cols.iter().enumerate() {
                    let v = mask.get(si, sr, self.bbox.left + sc);
                    out[(si * h + r) * w + c] = if v > 0.0 { 1.0 } else { 0.0 };
                }
            }
        }
        MaskVolume::new([s, h, w], out, MaskKind::Binary, mask.spacing_mm, mask.thickness_mm)
    }
}

fn nearest_index(src: usize, dst: usize) -> Vec<usize> {
    (0..dst).map(|i| (((i as f64 + 0.5) * src as f64 / dst as f64).floor() as usize).min(src - 1)).collect()
}

/// For each output index: the two source indices and the weight of the second.
fn axis_weights(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            if src == dst {
                return (i, i, 0.0);
            }
            let x = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(src - 1);
            (x0, x1, (x - x0 as f64) as f32)
        })
        .collect()
}

fn bilerp(v: [f32; 4], tr: f32, tc: f32) -> f32 {
    let top = v[0] + (v[1] - v[0]) * tc;
    let bottom = v[2] + (v[3] - v[2]) * tc;
    let out = top + (bottom - top) * tr;
    out.clamp(v.iter().cloned().fold(f32::INFINITY, f32::min), v.iter().cloned().fold(f32::NEG_INFINITY, f32::max))
}

/// Rows `[H/4, H/2)` averaged over all slices: the chest band.
pub fn chest_projection(v: &Volume) -> Result<(Image2, usize)> {
    let [s, h, w] = v.dims();
    let (r0, r1) = (h / 4, h / 2);
    if r1 <= r0 {
        return Err(Error::Validation(format!("volume height {h} too small for the chest band")));
    }
    let mut acc = vec![0f64; (r1 - r0) * w];
    for si in 0..s {
        let plane = v.slice(si);
        for (i, a) in acc.iter_mut().enumerate() {
            *a += plane[r0 * w + i] as f64;
        }
    }
    let data = acc.iter().map(|a| (a / s as f64) as f32).collect();
    Ok((Image2::new(r1 - r0, w, data)?, r0))
}

/// Zero-normalized cross-correlation search over `scales`. Ties keep the
/// lexicographically smallest `(scale, top, left)`. Windows with zero
/// variance are skipped; a constant template or an image without any
/// non-constant window is a degenerate input.
pub fn match_template(image: &Image2, template: &Image2, scales: &[f64]) -> Result<BBox> {
    if scales.is_empty() {
        return Err(Error::Validation("no template scales given".into()));
    }
    let mut scales: Vec<f64> = scales.to_vec();
    if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Validation(format!("template scales must be positive: {scales:?}")));
    }
    scales.sort_by(f64::total_cmp);
    let mut best: Option<BBox> = None;
    let mut any_fit = false;
    for &scale in &scales {
        let th = (template.height as f64 * scale).round() as usize;
        let tw = (template.width as f64 * scale).round() as usize;
        if th == 0 || tw == 0 || th > image.height || tw > image.width {
            continue;
        }
        any_fit = true;
        let t = template.resize(th, tw);
        let n = (th * tw) as f64;
        let t_mean = t.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let t_centered: Vec<f64> = t.data.iter().map(|&v| v as f64 - t_mean).collect();
        let t_norm = t_centered.iter().map(|v| v * v).sum::<f64>().sqrt();
        if t_norm <= 1e-12 {
            return Err(Error::Degenerate("template has zero variance".into()));
        }
        for top in 0..=image.height - th {
            for left in 0..=image.width - tw {
                let mut sum = 0.0;
                let mut sq = 0.0;
                let mut cross = 0.0;
                for r in 0..th {
                    let row = &image.data[(top + r) * image.width + left..][..tw];
                    let trow = &t_centered[r * tw..(r + 1) * tw];
                    for (&v, &tv) in row.iter().zip(trow) {
                        let v = v as f64;
                        sum += v;
                        sq += v * v;
                        cross += v * tv;
                    }
                }
                let var = sq - sum * sum / n;
                if var <= 1e-12 {
                    continue;
                }
                let score = cross / (var.sqrt() * t_norm);
                if best.is_none_or(|b| score > b.score) {
                    best = Some(BBox { top, left, height: th, width: tw, scale, score });
                }
            }
        }
    }
    if !any_fit {
        return Err(Error::Validation(format!(
            "template {}x{} does not fit the {}x{} image at any scale",
            template.height, template.width, image.height, image.width
        )));
    }
    best.ok_or_else(|| Error::Degenerate("image has no window with non-zero variance".into()))
}

/// Crops rows `[0, H/2)` and the bbox columns from every slice.
pub fn extract_roi(v: &Volume, bbox: &BBox) -> Result<Volume> {
    let [s, h, w] = v.dims();
    if bbox.width == 0 || bbox.left + bbox.width > w {
        return Err(Error::Validation(format!(
            "bbox columns [{}, {}) outside width {w}",
            bbox.left,
            bbox.left + bbox.width
        )));
    }
    let rows = h / 2;
    if rows == 0 {
        return Err(Error::Validation(format!("volume height {h} too small")));
    }
    let mut data = Vec::with_capacity(s * rows * bbox.width);
    for si in 0..s {
        let plane = v.slice(si);
        for r in 0..rows {
            data.extend_from_slice(&plane[r * w + bbox.left..][..bbox.width]);
        }
    }
    Volume::new([s, rows, bbox.width], data, v.spacing_mm, v.thickness_mm)
}

/// Bilinear in-plane resize to `target_w` columns; height scales by the same
/// factor, `round(h · target_w / w)`.
pub fn resize_width(v: &Volume, target_w: usize) -> Result<Volume> {
    let [s, h, w] = v.dims();
    if target_w == 0 {
        return Err(Error::Validation("target width must be positive".into()));
    }
    if w == target_w {
        return Ok(v.clone());
    }
    let th = ((h as f64 * target_w as f64 / w as f64).round() as usize).max(1);
    let mut data = Vec::with_capacity(s * th * target_w);
    for si in 0..s {
        let img = Image2 { height: h, width: w, data: v.slice(si).to_vec() };
        data.extend(img.resize(th, target_w).data);
    }
    Volume::new([s, th, target_w], data, v.spacing_mm, v.thickness_mm)
}

/// Full registration: chest projection → template match → crop → resize.
pub fn register_volume(v: &Volume, template: &Image2, cfg: &RegistrationConfig) -> Result<RoiVolume> {
    let (proj, band_top) = chest_projection(v)?;
    let mut bbox = match_template(&proj, template, &cfg.scales)?;
    bbox.top += band_top;
    let roi = extract_roi(v, &bbox)?;
    let volume = resize_width(&roi, cfg.target_width)?;
    Ok(RoiVolume { volume, source_dims: v.dims(), bbox, source_rows: v.height() / 2 })
}

/// Rows of the chest band used as template: the band minus `1/4` of its
/// height on each side, so vertical misalignment stays searchable.
fn template_rows(band_rows: usize) -> (usize, usize) {
    let pad = band_rows / 4;
    (pad, band_rows - pad)
}

/// Builds a chest template by averaging the chest-band projections of
/// `cfg.template_count` held-out phantoms, each cropped to its true torso
/// columns and resized to the mean torso width.
pub fn synthesize_template(phantom: &PhantomConfig, cfg: &RegistrationConfig) -> Result<Image2> {
    if cfg.template_count == 0 {
        return Err(Error::Validation("template_count must be >= 1".into()));
    }
    let mut crops = Vec::with_capacity(cfg.template_count);
    for i in 0..cfg.template_count {
        let seed = derive_seed(cfg.template_seed, 9, i as u64);
        let meta: PatientMeta = sample_meta(&mut ChaCha8Rng::seed_from_u64(seed));
        let v = generate_phantom(phantom, &meta, seed)?;
        let g = phantom_geometry(phantom, &meta, seed)?;
        let (proj, _) = chest_projection(&v)?;
        let (left, right) = g.torso_columns();
        let right = right.min(proj.width);
        let (r0, r1) = template_rows(proj.height);
        let mut data = Vec::with_capacity((r1 - r0) * (right - left));
        for r in r0..r1 {
            data.extend_from_slice(&proj.data[r * proj.width + left..r * proj.width + right]);
        }
        crops.push(Image2::new(r1 - r0, right - left, data)?);
    }
    let mean_w = (crops.iter().map(|c| c.width as f64).sum::<f64>() / crops.len() as f64).round() as usize;
    let rows = crops[0].height;
    let mut acc = vec![0f64; rows * mean_w];
    for c in &crops {
        for (a, v) in acc.iter_mut().zip(c.resize(rows, mean_w).data) {
            *a += v as f64;
        }
    }
    let n = crops.len() as f64;
    Image2::new(rows, mean_w, acc.into_iter().map(|a| (a / n) as f32).collect())
}

/// Intersection over union of two column intervals `[a0, a1)`, `[b0, b1)`.
pub fn interval_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
