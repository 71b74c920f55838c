//! Multi-slice window sampling, position coordinates and condition vectors.
//!
//! A window is `c` consecutive slices of a registered ROI, cropped to `W` rows
//! starting at `top_row` (the ROI is already `W` columns wide). Its condition
//! vector is `(age, weight, sex, w_z, w_y)` with sex coded `−1` (female) and
//! `+1` (male).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cvae::CONDITION_DIM;
use crate::error::{Error, Result};
use crate::manifest::PatientMeta;
use crate::volume::Volume;

pub const FEATURE_NAMES: [&str; CONDITION_DIM] = ["age", "weight", "sex", "w_z", "w_y"];

/// Which condition features are fed to the model. Disabled features are
/// zeroed after standardization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionFlags {
    pub age: bool,
    pub weight: bool,
    pub sex: bool,
    pub w_z: bool,
    pub w_y: bool,
}

impl Default for ConditionFlags {
    fn default() -> Self {
        ConditionFlags { age: false, weight: false, sex: false, w_z: true, w_y: true }
    }
}

impl ConditionFlags {
    pub const NONE: ConditionFlags = ConditionFlags { age: false, weight: false, sex: false, w_z: false, w_y: false };

    pub fn as_array(&self) -> [bool; CONDITION_DIM] {
        [self.age, self.weight, self.sex, self.w_z, self.w_y]
    }

    /// Short label such as `"sex+w_z+w_y"`, or `"none"`.
    pub fn label(&self) -> String {
        let on: Vec<&str> = FEATURE_NAMES.iter().zip(self.as_array()).filter(|(_, b)| *b).map(|(n, _)| *n).collect();
        if on.is_empty() {
            "none".into()
        } else {
            on.join("+")
        }
    }
}

/// One `c×W×W` window with its raw (unstandardized) condition vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub channels: usize,
    pub width: usize,
    pub center_slice: usize,
    pub top_row: usize,
    /// Slice-major pixels, `channels × width × width`.
    pub pixels: Vec<f32>,
    pub condition: [f64; CONDITION_DIM],
}

/// Fractional depth of slice `i`: `(i·spacing + thickness/2) / ((S−1)·spacing + thickness)`.
pub fn slice_coordinate(v: &Volume, i: usize) -> f64 {
    let s = v.slices();
    (i as f64 * v.spacing_mm + v.thickness_mm / 2.0) / ((s - 1) as f64 * v.spacing_mm + v.thickness_mm)
}

/// Fractional vertical position of a window: `top / max(1, h − W)`.
pub fn vertical_coordinate(top_row: usize, roi_height: usize, width: usize) -> f64 {
    top_row as f64 / roi_height.saturating_sub(width).max(1) as f64
}

/// Raw condition vector in feature order `(age, weight, sex, w_z, w_y)`.
pub fn raw_condition(meta: &PatientMeta, w_z: f64, w_y: f64) -> [f64; CONDITION_DIM] {
    [meta.age, meta.weight, meta.sex.signed(), w_z, w_y]
}

fn check_geometry(roi: &Volume, channels: usize, width: usize) -> Result<()> {
    let [s, h, w] = roi.dims();
    if channels == 0 || channels.is_multiple_of(2) {
        return Err(Error::Validation(format!("channel count {channels} must be odd")));
    }
    if w != width {
        return Err(Error::shape(width, w));
    }
    if h < width {
        return Err(Error::Validation(format!("ROI height {h} is smaller than window width {width}")));
    }
    if s < channels {
        return Err(Error::Validation(format!("ROI has {s} slices, window needs {channels}")));
    }
    Ok(())
}

/// Cuts the window centred on `center` starting at `top_row`.
pub fn extract_window(
    roi: &Volume,
    meta: &PatientMeta,
    channels: usize,
    width: usize,
    center: usize,
    top_row: usize,
) -> Result<WindowSample> {
    check_geometry(roi, channels, width)?;
    let [s, h, w] = roi.dims();
    let half = channels / 2;
    if center < half || center + half >= s {
        return Err(Error::OutOfRange { index: center, len: s });
    }
    if top_row + width > h {
        return Err(Error::OutOfRange { index: top_row, len: h - width + 1 });
    }
    let mut pixels = Vec::with_capacity(channels * width * width);
    for si in center - half..=center + half {
        pixels.extend_from_slice(&roi.slice(si)[top_row * w..(top_row + width) * w]);
    }
    let condition = raw_condition(meta, slice_coordinate(roi, center), vertical_coordinate(top_row, h, width));
    Ok(WindowSample { channels, width, center_slice: center, top_row, pixels, condition })
}

/// Draws `(center_slice, top_row)` for a random training window: the top row
/// is uniform in `[0, h − W]`, the centre uniform in `[⌊c/2⌋, S − ⌈c/2⌉]`.
pub fn sample_position(roi: &Volume, channels: usize, width: usize, rng: &mut impl Rng) -> Result<(usize, usize)> {
    check_geometry(roi, channels, width)?;
    let [s, h, _] = roi.dims();
    let center = rng.random_range(channels / 2..=s - channels.div_ceil(2));
    let top = rng.random_range(0..=h - width);
    Ok((center, top))
}

/// Draws one random training window.
pub fn sample_train_window(
    roi: &Volume,
    meta: &PatientMeta,
    channels: usize,
    width: usize,
    rng: &mut impl Rng,
) -> Result<WindowSample> {
    let (center, top) = sample_position(roi, channels, width, rng)?;
    extract_window(roi, meta, channels, width, center, top)
}

/// Evenly spaced top rows covering `h` rows with `W`-row windows:
/// `k = max(1, ⌈(h − W) / (W·(1 − overlap))⌉ + 1)`.
pub fn test_window_tops(height: usize, width: usize, overlap: f64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Validation(format!("overlap {overlap} must be in [0, 1)")));
    }
    if height < width {
        return Err(Error::Validation(format!("height {height} is smaller than window width {width}")));
    }
    let span = height - width;
    let stride = width as f64 * (1.0 - overlap);
    let k = ((span as f64 / stride).ceil() as usize + 1).max(1);
    if k == 1 {
        return Ok(vec![0]);
    }
    Ok((0..k).map(|j| ((j * span) as f64 / (k - 1) as f64).round() as usize).collect())
}

/// Every window of a test volume: all valid centre slices × all top rows.
pub fn test_windows(
    roi: &Volume,
    meta: &PatientMeta,
    channels: usize,
    width: usize,
    overlap: f64,
) -> Result<Vec<WindowSample>> {
    check_geometry(roi, channels, width)?;
    let [s, h, _] = roi.dims();
    let tops = test_window_tops(h, width, overlap)?;
    let half = channels / 2;
    let mut out = Vec::with_capacity((s - 2 * half) * tops.len());
    for center in half..s - half {
        for &top in &tops {
            out.push(extract_window(roi, meta, channels, width, center, top)?);
        }
    }
    Ok(out)
}

/// Per-feature z-scoring fitted on training condition vectors. Uses the
/// population standard deviation; a constant feature always maps to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; CONDITION_DIM],
    pub std: [f64; CONDITION_DIM],
    pub constant: [bool; CONDITION_DIM],
}

impl Standardizer {
    pub fn fit(rows: &[[f64; CONDITION_DIM]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("cannot fit a standardizer on zero samples".into()));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; CONDITION_DIM];
        let mut std = [0.0; CONDITION_DIM];
        let mut constant = [false; CONDITION_DIM];
        for j in 0..CONDITION_DIM {
            if rows.iter().any(|r| !r[j].is_finite()) {
                return Err(Error::Validation(format!("non-finite value in feature {}", FEATURE_NAMES[j])));
            }
            mean[j] = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            std[j] = var.sqrt();
            if std[j] <= 1e-12 * mean[j].abs().max(1.0) {
                constant[j] = true;
                std[j] = 1.0;
            }
        }
        Ok(Standardizer { mean, std, constant })
    }

    pub fn transform(&self, x: &[f64; CONDITION_DIM]) -> [f64; CONDITION_DIM] {
        let mut out = [0.0; CONDITION_DIM];
        for j in 0..CONDITION_DIM {
            out[j] = if self.constant[j] { 0.0 } else { (x[j] - self.mean[j]) / self.std[j] };
        }
        out
    }

    /// Standardizes and zeroes the features disabled in `flags`.
    pub fn encode(&self, x: &[f64; CONDITION_DIM], flags: &ConditionFlags) -> [f64; CONDITION_DIM] {
        let mut out = self.transform(x);
        for (o, on) in out.iter_mut().zip(flags.as_array()) {
            if !on {
                *o = 0.0;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::Sex;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn meta() -> PatientMeta {
        PatientMeta { age: 10.0, weight: 30.0, sex: Sex::Female }
    }

    fn ramp_volume(s: usize, h: usize, w: usize) -> Volume {
        let data = (0..s * h * w).map(|i| (i % 97) as f32 / 97.0).collect();
        Volume::new([s, h, w], data, 5.0, 5.0).unwrap()
    }

    #[test]
    fn slice_coordinates_for_contiguous_slices() {
        let v = Volume::filled([3, 4, 4], 0.0, 5.0, 5.0).unwrap();
        let w: Vec<f64> = (0..3).map(|i| slice_coordinate(&v, i)).collect();
        let expect = [1.0 / 6.0, 0.5, 5.0 / 6.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn vertical_coordinate_spans_unit_interval() {
        assert_eq!(vertical_coordinate(0, 96, 64), 0.0);
        assert_eq!(vertical_coordinate(32, 96, 64), 1.0);
        assert_eq!(vertical_coordinate(0, 64, 64), 0.0);
    }

    #[test]
    fn training_windows_stay_inside_the_volume() {
        let v = ramp_volume(9, 80, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for c in [1, 3, 5, 9] {
            for _ in 0..200 {
                let win = sample_train_window(&v, &meta(), c, 16, &mut rng).unwrap();
                assert!(win.center_slice >= c / 2 && win.center_slice + c / 2 < 9);
                assert!(win.top_row + 16 <= 80);
                assert_eq!(win.pixels.len(), c * 256);
                assert!((0.0..=1.0).contains(&win.condition[4]));
                assert!((0.0..=1.0).contains(&win.condition[3]));
            }
        }
    }

    #[test]
    fn window_pixels_match_the_volume() {
        let v = ramp_volume(7, 40, 16);
        let win = extract_window(&v, &meta(), 3, 16, 4, 10).unwrap();
        for ch in 0..3 {
            for r in 0..16 {
                for c in 0..16 {
                    assert_eq!(win.pixels[(ch * 16 + r) * 16 + c], v.get(3 + ch, 10 + r, c));
                }
            }
        }
        assert_eq!(win.condition[2], -1.0);
    }

    #[test]
    fn too_short_roi_is_rejected() {
        let v = ramp_volume(5, 10, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_train_window(&v, &meta(), 1, 16, &mut rng), Err(Error::Validation(_))));
        let v = ramp_volume(2, 20, 16);
        assert!(matches!(sample_train_window(&v, &meta(), 3, 16, &mut rng), Err(Error::Validation(_))));
    }

    #[test]
    fn test_window_counts() {
        assert_eq!(test_window_tops(96, 64, 0.5).unwrap(), vec![0, 32]);
        assert_eq!(test_window_tops(64, 64, 0.5).unwrap(), vec![0]);
        let tops = test_window_tops(143, 64, 0.5).unwrap();
        assert_eq!(tops.len(), 4);
        assert_eq!(*tops.last().unwrap(), 79);
    }

    #[test]
    fn test_windows_cover_every_row_of_valid_slices() {
        for h in [64, 70, 100, 143] {
            let tops = test_window_tops(h, 64, 0.5).unwrap();
            let mut covered = vec![false; h];
            for t in tops {
                covered[t..t + 64].iter_mut().for_each(|c| *c = true);
            }
            assert!(covered.iter().all(|&c| c), "height {h}");
        }
        let v = ramp_volume(6, 70, 16);
        let wins = test_windows(&v, &meta(), 3, 16, 0.5).unwrap();
        let per_slice = test_window_tops(70, 16, 0.5).unwrap().len();
        assert_eq!(wins.len(), 4 * per_slice);
    }

    #[test]
    fn standardizer_zero_mean_unit_std_and_constant_passthrough() {
        let rows: Vec<[f64; 5]> = (0..10).map(|i| [i as f64, 2.0 * i as f64 + 1.0, 1.0, 0.5, i as f64 * 0.1]).collect();
        let s = Standardizer::fit(&rows).unwrap();
        assert_eq!(s.constant, [false, false, true, true, false]);
        let out: Vec<[f64; 5]> = rows.iter().map(|r| s.transform(r)).collect();
        for j in [0, 1, 4] {
            let m = out.iter().map(|r| r[j]).sum::<f64>() / 10.0;
            let v = out.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / 10.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
        assert!(out.iter().all(|r| r[2] == 0.0 && r[3] == 0.0));
    }

    #[test]
    fn disabled_features_are_zeroed() {
        let rows: Vec<[f64; 5]> = (0..4).map(|i| [i as f64; 5]).collect();
        let s = Standardizer::fit(&rows).unwrap();
        let flags = ConditionFlags { sex: true, ..ConditionFlags::NONE };
        let e = s.encode(&[3.0; 5], &flags);
        assert_eq!(e[0], 0.0);
        assert_ne!(e[2], 0.0);
        assert_eq!(flags.label(), "sex");
        assert_eq!(ConditionFlags::NONE.label(), "none");
    }
}
