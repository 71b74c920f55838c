//! Procedural whole-body coronal phantoms and synthetic lesions.
//!
//! Coordinates: slice 0 is the back-most coronal plane, row 0 is the top of
//! the head, columns run left to right. The body is modelled as a stack of
//! elliptic cross-sections, so a structure's in-plane size depends on the
//! slice depth `d = w_z ∈ (0, 1)`.
//!
//! All patient-to-patient randomness (position, organ sizes, texture) is
//! multiplied by `anatomy_noise`; with `anatomy_noise = 0` the phantom depends
//! on the metadata alone.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestEntry, PatientMeta, Sex, Split};
use crate::volume::{voxel_count, MaskKind, MaskVolume, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub width: usize,
    pub height: usize,
    /// Inclusive slice-count range.
    pub slices: [usize; 2],
    pub anatomy_noise: f64,
    /// Torso width difference between sexes, pixels.
    pub sex_effect: f64,
    pub age_effect: f64,
    pub weight_effect: f64,
    /// Salt mixed into every per-phantom seed; 0 leaves seeds unchanged.
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            width: 64,
            height: 112,
            slices: [22, 45],
            anatomy_noise: 0.05,
            sex_effect: 4.0,
            age_effect: 1.0,
            weight_effect: 1.0,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::Validation(format!(
                "phantom size {}x{} must be at least 16x16",
                self.width, self.height
            )));
        }
        if self.slices[0] < 5 || self.slices[1] < self.slices[0] {
            return Err(Error::Validation(format!("invalid slice range {:?}", self.slices)));
        }
        for (name, v) in [
            ("anatomy_noise", self.anatomy_noise),
            ("sex_effect", self.sex_effect),
            ("age_effect", self.age_effect),
            ("weight_effect", self.weight_effect),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LesionSpec {
    pub peak_intensity: f64,
    /// Number of consecutive slices the lesion spans.
    pub slice_extent: usize,
    /// In-plane Gaussian standard deviation, pixels.
    pub sigma_px: f64,
    pub count: usize,
    /// Lesion centres stay this many slices away from either end.
    pub slice_margin: usize,
    /// Lesion centres are drawn from rows above `max_row_fraction · H`.
    pub max_row_fraction: f64,
}

impl Default for LesionSpec {
    fn default() -> Self {
        LesionSpec {
            peak_intensity: 0.6,
            slice_extent: 3,
            sigma_px: 3.0,
            count: 1,
            slice_margin: 4,
            max_row_fraction: 0.5,
        }
    }
}

impl LesionSpec {
    /// Default spec with `sigma_px` scaled for a phantom of the given width.
    pub fn for_width(width: usize) -> Self {
        LesionSpec { sigma_px: 3.0 * width as f64 / 64.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_intensity >= 0.0 && self.peak_intensity <= 1.0) {
            return Err(Error::Validation(format!("peak_intensity {} outside (0, 1]", self.peak_intensity)));
        }
        if self.slice_extent == 0 {
            return Err(Error::Validation("slice_extent must be >= 1".into()));
        }
        if !(self.sigma_px > 0.0 && self.sigma_px.is_finite()) {
            return Err(Error::Validation(format!("sigma_px {} must be > 0", self.sigma_px)));
        }
        if !(self.max_row_fraction > 0.0 && self.max_row_fraction <= 1.0) {
            return Err(Error::Validation("max_row_fraction must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Slice offsets covered by one lesion, relative to its centre slice.
    pub fn slice_offsets(&self) -> std::ops::RangeInclusive<isize> {
        let lo = -((self.slice_extent as isize - 1) / 2);
        lo..=lo + self.slice_extent as isize - 1
    }

    /// Across-slice weight: Gaussian in the slice offset with std `extent / 3`.
    pub fn slice_weight(&self, offset: isize) -> f64 {
        let sz = (self.slice_extent as f64 / 3.0).max(1e-3);
        (-(offset as f64).powi(2) / (2.0 * sz * sz)).exp()
    }
}

/// Ground-truth placement of a generated phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomGeometry {
    pub slices: usize,
    pub spacing_mm: f64,
    pub thickness_mm: f64,
    /// Body midline column.
    pub center_col: f64,
    /// Half width of the torso at the chest, at mid depth.
    pub torso_half_width: f64,
    pub head_top: f64,
    pub head_bottom: f64,
    pub shoulder_row: f64,
    pub diaphragm_row: f64,
    organ_scale: [f64; 4],
    organ_gain: [f64; 4],
}

impl PhantomGeometry {
    /// Torso columns `[left, right)` at the chest, rounded to pixels.
    pub fn torso_columns(&self) -> (usize, usize) {
        let left = (self.center_col - self.torso_half_width).round().max(0.0) as usize;
        let right = (self.center_col + self.torso_half_width).round() as usize;
        (left, right)
    }
}

/// Typical weight (kg) for a child of the given age; centre of the
/// log-uniform weight distribution.
pub fn reference_weight(age: f64) -> f64 {
    13.0 * (age.max(1.0) / 3.0).powf(0.95)
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-1.0..1.0)
}

/// Computes the anatomy layout for a patient.
pub fn phantom_geometry(cfg: &PhantomConfig, meta: &PatientMeta, seed: u64) -> Result<PhantomGeometry> {
    cfg.validate()?;
    meta.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(salted(cfg, seed) ^ 0x005e_ed0f_a4a7);
    let noise = cfg.anatomy_noise;
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let male = meta.sex == Sex::Male;

    let weight_ratio = (meta.weight / 30.0).max(1e-3);
    let mut torso_half_width = 0.25 * w * weight_ratio.powf(0.22 * cfg.weight_effect);
    torso_half_width += if male { cfg.sex_effect / 2.0 } else { -cfg.sex_effect / 2.0 };
    torso_half_width *= 1.0 + 0.6 * noise * unit(&mut rng);
    torso_half_width = torso_half_width.clamp(4.0, 0.42 * w);

    let center_col = w / 2.0 + 60.0 * noise * unit(&mut rng);

    // Children have proportionally larger heads.
    let head_frac = 0.165 - 0.0035 * cfg.age_effect * (meta.age - 11.5);
    let head_top = 0.03 * h;
    let head_bottom = head_top + head_frac * h * (1.0 + noise * unit(&mut rng));
    let shoulder_row = head_bottom + 0.045 * h;
    // Sex shifts the thoracic layout: longer lungs in males.
    let sex_shift = if male { 0.6 * cfg.sex_effect } else { -0.6 * cfg.sex_effect };
    let diaphragm_row = shoulder_row + 0.2 * h + sex_shift + 40.0 * noise * unit(&mut rng);

    let depth_norm = ((meta.weight.ln() - 12f64.ln()) / (95f64.ln() - 12f64.ln())).clamp(0.0, 1.0);
    let span = (cfg.slices[1] - cfg.slices[0]) as f64;
    let jitter = (40.0 * noise * unit(&mut rng)).round();
    let slices = (cfg.slices[0] as f64 + span * depth_norm + jitter)
        .round()
        .clamp(cfg.slices[0] as f64, cfg.slices[1] as f64) as usize;
    let body_depth_mm = 110.0 + 130.0 * depth_norm;
    let spacing_mm = body_depth_mm / slices as f64;
    let thickness_mm = 0.8 * spacing_mm;

    let mut organ_scale = [1.0; 4];
    let mut organ_gain = [1.0; 4];
    for i in 0..4 {
        organ_scale[i] = 1.0 + 2.0 * noise * unit(&mut rng);
        organ_gain[i] = 1.0 + 2.0 * noise * unit(&mut rng);
    }

    Ok(PhantomGeometry {
        slices,
        spacing_mm,
        thickness_mm,
        center_col,
        torso_half_width,
        head_top,
        head_bottom,
        shoulder_row,
        diaphragm_row,
        organ_scale,
        organ_gain,
    })
}

/// Elliptic depth profile: 1 at mid depth, 0 at the front/back surface.
fn depth_profile(d: f64, centre: f64, half: f64) -> f64 {
    let t = (d - centre) / half;
    (1.0 - t * t).max(0.0).sqrt()
}

/// Smooth inside-indicator with a one-pixel ramp.
fn soft_inside(signed_dist: f64) -> f64 {
    (0.5 - signed_dist).clamp(0.0, 1.0)
}

fn ellipse_dist(r: f64, c: f64, r0: f64, c0: f64, rr: f64, rc: f64) -> f64 {
    if rr <= 0.0 || rc <= 0.0 {
        return f64::INFINITY;
    }
    let q = (((r - r0) / rr).powi(2) + ((c - c0) / rc).powi(2)).sqrt();
    (q - 1.0) * rr.min(rc)
}

fn salted(cfg: &PhantomConfig, seed: u64) -> u64 {
    seed ^ cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Generates a healthy phantom volume. Deterministic in `(cfg, meta, seed)`.
pub fn generate_phantom(cfg: &PhantomConfig, meta: &PatientMeta, seed: u64) -> Result<Volume> {
    let g = phantom_geometry(cfg, meta, seed)?;
    let (w, h, s) = (cfg.width, cfg.height, g.slices);
    let male = meta.sex == Sex::Male;
    let mut data = vec![0f32; voxel_count([s, h, w])];
    let mut body = vec![0f32; h * w];
    let mut noise_rng = ChaCha8Rng::seed_from_u64(salted(cfg, seed) ^ 0x7e47_0e5e);
    let hw = g.torso_half_width;
    let cx = g.center_col;
    let [lung_s, heart_s, liver_s, brain_s] = g.organ_scale;
    let [lung_g, heart_g, spine_g, brain_g] = g.organ_gain;
    let shoulder_factor = if male { 1.12 } else { 1.0 };
    let waist_factor = if male { 0.95 } else { 0.86 };
    let hip_factor = if male { 0.98 } else { 1.08 };

    for si in 0..s {
        let d = (si as f64 + 0.5) / s as f64;
        let prof = depth_profile(d, 0.5, 0.56);
        let slice = &mut data[si * h * w..(si + 1) * h * w];
        for r in 0..h {
            let rf = r as f64 + 0.5;
            // Half width of the silhouette at this row, at mid depth.
            let head_c = 0.5 * (g.head_top + g.head_bottom);
            let head_rr = 0.5 * (g.head_bottom - g.head_top);
            let head_rc = 0.62 * head_rr;
            let neck_hw = 0.38 * head_rc;
            let hip_row = g.diaphragm_row + 0.24 * h as f64;
            let row_hw = if rf < g.head_bottom {
                let t = (rf - head_c) / head_rr;
                if t.abs() < 1.0 {
                    head_rc * (1.0 - t * t).sqrt()
                } else {
                    0.0
                }
            } else if rf < g.shoulder_row {
                neck_hw
            } else {
                let sh = hw * shoulder_factor;
                let ramp = ((rf - g.shoulder_row) / (0.035 * h as f64)).min(1.0);
                let top = neck_hw + (sh - neck_hw) * (1.0 - (1.0 - ramp).powi(2));
                if rf < g.diaphragm_row {
                    let t = (rf - g.shoulder_row) / (g.diaphragm_row - g.shoulder_row);
                    top + (hw - sh) * t.clamp(0.0, 1.0)
                } else if rf < hip_row {
                    let t = (rf - g.diaphragm_row) / (hip_row - g.diaphragm_row);
                    let waist = (t * std::f64::consts::PI).sin();
                    hw * (1.0 + (waist_factor - 1.0) * waist + (hip_factor - 1.0) * t * t)
                } else {
                    hw * hip_factor
                }
            };
            let half = row_hw * prof;
            for c in 0..w {
                let cf = c as f64 + 0.5;
                let inside = soft_inside((cf - cx).abs() - half);
                body[r * w + c] = inside as f32;
                if inside <= 0.0 {
                    slice[r * w + c] = 0.0;
                    continue;
                }
                // Muscle base, slightly brighter towards the back and the head.
                let mut v = 0.30 + 0.05 * (0.5 - d) - 0.04 * (rf / h as f64);
                // Subcutaneous rim is darker under fat suppression.
                let rim = ((half - (cf - cx).abs()) / 2.0).clamp(0.0, 1.0);
                v -= 0.08 * (1.0 - rim);

                if rf < g.head_bottom {
                    let bd = ellipse_dist(rf, cf, head_c, cx, 0.82 * head_rr * brain_s, 0.8 * head_rc * prof * brain_s);
                    v += (0.12 * brain_g) * soft_inside(bd);
                    let vp = depth_profile(d, 0.5, 0.16);
                    if vp > 0.0 {
                        for side in [-1.0, 1.0] {
                            let vd = ellipse_dist(
                                rf,
                                cf,
                                head_c,
                                cx + side * 0.18 * head_rc,
                                0.3 * head_rr * vp,
                                0.1 * head_rc * vp + 0.4,
                            );
                            v += 0.25 * soft_inside(vd);
                        }
                    }
                } else {
                    // Spine: segmented column near the back.
                    let sp = depth_profile(d, 0.22, 0.12);
                    if sp > 0.0 && rf > g.head_bottom - 2.0 {
                        let col_dist = (cf - cx).abs() - (0.12 * hw * sp + 0.5);
                        let seg = ((rf - g.shoulder_row) / 4.2 * std::f64::consts::TAU).cos();
                        v += (0.12 + 0.06 * seg) * spine_g * soft_inside(col_dist);
                    }
                    if rf >= g.shoulder_row && rf < g.diaphragm_row + 4.0 {
                        // Lungs.
                        let lp = depth_profile(d, 0.55, 0.32);
                        if lp > 0.0 {
                            let lr0 = 0.5 * (g.shoulder_row + 0.025 * h as f64 + g.diaphragm_row);
                            let lrr = 0.5 * (g.diaphragm_row - g.shoulder_row - 0.025 * h as f64) * lung_s;
                            for side in [-1.0, 1.0] {
                                let ld = ellipse_dist(
                                    rf,
                                    cf,
                                    lr0,
                                    cx + side * 0.48 * hw,
                                    lrr * lp.sqrt(),
                                    0.36 * hw * lp * lung_s,
                                );
                                let inside = soft_inside(ld);
                                v = v * (1.0 - inside) + 0.07 * lung_g * inside;
                            }
                        }
                        // Heart, on the patient's left.
                        let hp = depth_profile(d, 0.66, 0.2);
                        if hp > 0.0 {
                            let hd = ellipse_dist(
                                rf,
                                cf,
                                g.diaphragm_row - 0.055 * h as f64,
                                cx + 0.14 * hw,
                                0.07 * h as f64 * heart_s * hp,
                                0.3 * hw * heart_s * hp,
                            );
                            let inside = soft_inside(hd);
                            v = v * (1.0 - inside) + 0.46 * heart_g * inside;
                        }
                    }
                    if rf >= g.diaphragm_row - 2.0 {
                        let lp = depth_profile(d, 0.55, 0.3);
                        if lp > 0.0 {
                            let ld = ellipse_dist(
                                rf,
                                cf,
                                g.diaphragm_row + 0.06 * h as f64,
                                cx - 0.3 * hw,
                                0.08 * h as f64 * liver_s,
                                0.55 * hw * lp * liver_s,
                            );
                            v += 0.06 * soft_inside(ld);
                        }
                    }
                }
                slice[r * w + c] = (v * inside) as f32;
            }
        }
        if cfg.anatomy_noise > 0.0 {
            let field = smooth_noise(w, h, 1.0, &mut noise_rng);
            for ((px, b), n) in slice.iter_mut().zip(&body).zip(&field) {
                *px += (cfg.anatomy_noise * n) as f32 * *b;
            }
        }
        for px in slice.iter_mut() {
            *px = px.clamp(0.0, 1.0);
        }
    }
    Volume::new([s, h, w], data, g.spacing_mm, g.thickness_mm)
}

/// Unit-variance white noise smoothed by a separable Gaussian of `sigma` px.
fn smooth_noise(w: usize, h: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..w * h).map(|_| StandardNormal.sample(rng)).collect();
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let mut tmp = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let cc = (c as isize + k as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += kv * raw[r * w + cc];
            }
            tmp[r * w + c] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let rr = (r as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[rr * w + c];
            }
            out[r * w + c] = acc;
        }
    }
    // Restore unit variance: the separable 2-D kernel has Σk² = (Σk_1d²)².
    let scale = 1.0 / kernel.iter().map(|k| k * k).sum::<f64>();
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Adds Gaussian-blob lesions. Returns the lesioned copy and its binary
/// ground-truth mask; `v` is not modified.
pub fn inject_lesion(v: &Volume, spec: &LesionSpec, seed: u64) -> Result<(Volume, MaskVolume)> {
    spec.validate()?;
    let [s, h, w] = v.dims();
    let offsets = spec.slice_offsets();
    let margin = spec.slice_margin.max(-*offsets.start() as usize).max(*offsets.end() as usize);
    if s < 2 * margin + 1 || s < spec.slice_extent {
        return Err(Error::Validation(format!(
            "volume with {s} slices cannot hold a lesion spanning {} slices with margin {}",
            spec.slice_extent, spec.slice_margin
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1e_510a);
    let max_row = ((spec.max_row_fraction * h as f64) as usize).clamp(1, h);
    let reach = spec.sigma_px.ceil() as usize;
    let is_body = |si: usize, r: usize, c: usize| v.get(si, r, c) > 0.05;
    let mut candidates = Vec::new();
    for si in margin..s - margin {
        for r in reach..max_row.saturating_sub(reach) {
            for c in reach..w.saturating_sub(reach) {
                if is_body(si, r, c)
                    && is_body(si, r - reach, c)
                    && is_body(si, r + reach, c)
                    && is_body(si, r, c - reach)
                    && is_body(si, r, c + reach)
                {
                    candidates.push((si, r, c));
                }
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::Validation("no body voxel can host a lesion".into()));
    }
    let mut bump = vec![0f64; voxel_count([s, h, w])];
    let radius = (4.0 * spec.sigma_px).ceil() as isize;
    for _ in 0..spec.count {
        let (s0, r0, c0) = candidates[rng.random_range(0..candidates.len())];
        for off in offsets.clone() {
            let si = (s0 as isize + off) as usize;
            let wz = spec.slice_weight(off);
            for dr in -radius..=radius {
                for dc in -radius..=radius {
                    let (r, c) = (r0 as isize + dr, c0 as isize + dc);
                    if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                        continue;
                    }
                    let g = (-((dr * dr + dc * dc) as f64) / (2.0 * spec.sigma_px * spec.sigma_px)).exp();
                    let idx = (si * h + r as usize) * w + c as usize;
                    bump[idx] += spec.peak_intensity * wz * g;
                }
            }
        }
    }
    let cutoff = spec.peak_intensity / 10.0;
    let data: Vec<f32> =
        v.data().iter().zip(&bump).map(|(&x, &b)| ((x as f64 + b) as f32).clamp(0.0, 1.0).max(x)).collect();
    let mask: Vec<f32> = bump.iter().map(|&b| if b > cutoff && b > 0.0 { 1.0 } else { 0.0 }).collect();
    Ok((
        Volume::new([s, h, w], data, v.spacing_mm, v.thickness_mm)?,
        MaskVolume::new([s, h, w], mask, MaskKind::Binary, v.spacing_mm, v.thickness_mm)?,
    ))
}

/// Draws patient metadata: age uniform in [5, 18] years, weight log-uniform
/// within ±35% of [`reference_weight`], sex a fair coin.
pub fn sample_meta(rng: &mut impl Rng) -> PatientMeta {
    let age: f64 = rng.random_range(5.0..18.0);
    let centre = reference_weight(age).ln();
    let weight = rng.random_range(centre + 0.7f64.ln()..centre + 1.35f64.ln()).exp();
    let sex = if rng.random_bool(0.5) { Sex::Male } else { Sex::Female };
    PatientMeta { age, weight, sex }
}

/// Derives an independent per-item seed from a master seed.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    // SplitMix64 finalizer over the combined key.
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Writes `n_train` healthy and `n_test` lesioned phantoms plus
/// `manifest.jsonl` under `out_dir`.
pub fn generate_dataset(
    cfg: &PhantomConfig,
    n_train: usize,
    n_test: usize,
    lesion: &LesionSpec,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    lesion.validate()?;
    for sub in ["train", "test"] {
        let p = out_dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut entries = Vec::with_capacity(n_train + n_test);
    for (split, count, stream) in [(Split::Train, n_train, 1u64), (Split::Test, n_test, 2u64)] {
        for i in 0..count {
            let item_seed = derive_seed(seed, stream, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
            let meta = sample_meta(&mut rng);
            let vol = generate_phantom(cfg, &meta, item_seed)?;
            let (dir, mask_path, vol) = match split {
                Split::Train => ("train", None, vol),
                Split::Test => {
                    let (lesioned, mask) = inject_lesion(&vol, lesion, derive_seed(item_seed, 3, 0))?;
                    let mp = out_dir.join("test").join(format!("mask_{i:04}.volz"));
                    mask.save(&mp)?;
                    ("test", Some(mp), lesioned)
                }
            };
            let path = out_dir.join(dir).join(format!("vol_{i:04}.volz"));
            vol.save(&path)?;
            entries.push(ManifestEntry { path, meta, mask_path, split });
        }
    }
    let manifest = DatasetManifest { entries };
    manifest.save(out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Width of the body silhouette (pixels above `threshold`) along one row of a
/// slice.
pub fn measure_row_width(v: &Volume, slice: usize, row: usize, threshold: f32) -> usize {
    let w = v.width();
    (0..w).filter(|&c| v.get(slice, row, c) > threshold).count()
}
