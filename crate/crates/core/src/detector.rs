//! Reconstruction-residual anomaly maps.
//!
//! Every test window is reconstructed from its posterior mean. Only the middle
//! slice contributes, and only voxels that are brighter than their
//! reconstruction: `(x_m − x̂_m)²` where `x̂_m < x_m`, else 0. Overlapping
//! windows are averaged, the volume is median filtered, and a percentile of
//! the pooled positive scores turns it into a binary mask.

use serde::{Deserialize, Serialize};

use crate::cvae::{Cvae, ModelCheckpoint};
use crate::error::{Error, Result};
use crate::manifest::PatientMeta;
use crate::nn::Tensor;
use crate::volume::{voxel_count, Dims, MaskKind, MaskVolume, Volume};
use crate::windowing::test_windows;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    /// Fractional overlap of vertically adjacent test windows.
    pub overlap: f64,
    /// Median filter size `(slices, rows, cols)`; each odd.
    pub median_kernel: [usize; 3],
    /// Percentile of positive scores used as threshold.
    pub percentile: f64,
    /// Pool scores over the whole test set (true) or threshold per volume.
    pub pooled_threshold: bool,
    /// Windows per inference batch.
    pub batch_size: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            overlap: 0.5,
            median_kernel: [3, 5, 5],
            percentile: 99.0,
            pooled_threshold: true,
            batch_size: 16,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Validation(format!("overlap {} must be in [0, 1)", self.overlap)));
        }
        if self.median_kernel.iter().any(|k| k % 2 == 0) {
            return Err(Error::Validation(format!("median kernel {:?} must be odd", self.median_kernel)));
        }
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::Validation(format!("percentile {} must be in (0, 100]", self.percentile)));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Reconstructs a batch by decoding the posterior mean.
pub fn reconstruct_ml(model: &mut Cvae<f32>, x: &Tensor<f32>, cond: &[f32]) -> Result<Tensor<f32>> {
    model.reconstruct_mean(x, cond)
}

/// Residual of the middle channel of one `c×W×W` window; positive only where
/// the input is brighter than its reconstruction.
pub fn residual_mask(x: &[f32], x_hat: &[f32], channels: usize, width: usize) -> Result<Vec<f32>> {
    let n = channels * width * width;
    if x.len() != n || x_hat.len() != n || channels.is_multiple_of(2) {
        return Err(Error::shape([channels, width, width], [x.len(), x_hat.len()]));
    }
    let off = (channels / 2) * width * width;
    Ok(x[off..off + width * width]
        .iter()
        .zip(&x_hat[off..off + width * width])
        .map(|(&a, &b)| if b < a { (a - b) * (a - b) } else { 0.0 })
        .collect())
}

/// A window's residual placed at its centre slice and top row.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowResidual {
    pub center_slice: usize,
    pub top_row: usize,
    pub width: usize,
    pub residual: Vec<f32>,
}

/// Averages overlapping window residuals into a volume-sized map. Voxels not
/// covered by any window are 0.
pub fn stitch(dims: Dims, residuals: &[WindowResidual], spacing_mm: f64, thickness_mm: f64) -> Result<MaskVolume> {
    let [s, h, w] = dims;
    let mut sum = vec![0f64; voxel_count(dims)];
    let mut count = vec![0u32; voxel_count(dims)];
    for r in residuals {
        if r.width != w || r.residual.len() != w * w || r.center_slice >= s || r.top_row + w > h {
            return Err(Error::Validation(format!(
                "window at slice {} row {} (width {}) does not fit volume {dims:?}",
                r.center_slice, r.top_row, r.width
            )));
        }
        let base = (r.center_slice * h + r.top_row) * w;
        for (i, &v) in r.residual.iter().enumerate() {
            sum[base + i] += v as f64;
            count[base + i] += 1;
        }
    }
    let data = sum.iter().zip(&count).map(|(&s, &c)| if c == 0 { 0.0 } else { (s / c as f64) as f32 }).collect();
    MaskVolume::new(dims, data, MaskKind::Continuous, spacing_mm, thickness_mm)
}

/// 3-D median filter with zero padding; kernel sizes must be odd.
pub fn median_filter_3d(m: &MaskVolume, kernel: [usize; 3]) -> Result<MaskVolume> {
    if kernel.iter().any(|k| k % 2 == 0) {
        return Err(Error::Validation(format!("median kernel {kernel:?} must be odd")));
    }
    let [s, h, w] = m.dims();
    let [ks, kh, kw] = kernel.map(|k| (k / 2) as isize);
    let total = kernel.iter().product::<usize>();
    let mid = total / 2;
    let src = m.data();
    let mut out = vec![0f32; src.len()];
    let mut buf: Vec<f32> = Vec::with_capacity(total);
    for si in 0..s as isize {
        for r in 0..h as isize {
            for c in 0..w as isize {
                buf.clear();
                for ds in -ks..=ks {
                    let ss = si + ds;
                    if ss < 0 || ss >= s as isize {
                        continue;
                    }
                    for dr in -kh..=kh {
                        let rr = r + dr;
                        if rr < 0 || rr >= h as isize {
                            continue;
                        }
                        let row = ((ss as usize) * h + rr as usize) * w;
                        let c0 = (c - kw).max(0) as usize;
                        let c1 = ((c + kw) as usize).min(w - 1);
                        buf.extend(src[row + c0..=row + c1].iter().filter(|v| **v != 0.0));
                    }
                }
                // Everything outside `buf` is zero: padding or zero voxels.
                let zeros = total - buf.len();
                let idx = (si as usize * h + r as usize) * w + c as usize;
                out[idx] = order_statistic(&mut buf, zeros, mid);
            }
        }
    }
    MaskVolume::new(m.dims(), out, m.kind(), m.spacing_mm, m.thickness_mm)
}

/// The `k`-th smallest value of `values ∪ {0 × zeros}`.
fn order_statistic(values: &mut [f32], zeros: usize, k: usize) -> f32 {
    let below = values.iter().filter(|v| **v < 0.0).count();
    if k < below {
        values.select_nth_unstable_by(k, f32::total_cmp);
        return values[k];
    }
    if k < below + zeros {
        return 0.0;
    }
    let k = k - zeros;
    values.select_nth_unstable_by(k, f32::total_cmp);
    values[k]
}

/// Nearest-rank percentile of the strictly positive values across `masks`;
/// `+∞` when there are none, so nothing passes the threshold.
pub fn percentile_threshold(masks: &[&MaskVolume], percentile: f64) -> f64 {
    let mut vals: Vec<f32> = masks.iter().flat_map(|m| m.data().iter().copied().filter(|v| *v > 0.0)).collect();
    if vals.is_empty() {
        return f64::INFINITY;
    }
    let n = vals.len();
    let rank = ((percentile / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    let (_, v, _) = vals.select_nth_unstable_by(rank - 1, f32::total_cmp);
    *v as f64
}

/// Binary mask of voxels strictly above `threshold`.
pub fn binarize(m: &MaskVolume, threshold: f64) -> Result<MaskVolume> {
    let data = m.data().iter().map(|&v| if v as f64 > threshold { 1.0 } else { 0.0 }).collect();
    MaskVolume::new(m.dims(), data, MaskKind::Binary, m.spacing_mm, m.thickness_mm)
}

/// Continuous, median-filtered anomaly map of one registered volume.
pub fn detect_volume(
    ckpt: &mut ModelCheckpoint,
    roi: &Volume,
    meta: &PatientMeta,
    cfg: &DetectionConfig,
) -> Result<MaskVolume> {
    cfg.validate()?;
    let (c, w) = (ckpt.config().channels, ckpt.config().input_width);
    let windows = test_windows(roi, meta, c, w, cfg.overlap)?;
    let mut residuals = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(cfg.batch_size) {
        let refs: Vec<_> = chunk.iter().collect();
        let (x, cond) = ckpt.batch_inputs(&refs)?;
        let x_hat = reconstruct_ml(&mut ckpt.model, &x, &cond)?;
        for (i, win) in chunk.iter().enumerate() {
            residuals.push(WindowResidual {
                center_slice: win.center_slice,
                top_row: win.top_row,
                width: w,
                residual: residual_mask(x.sample(i), x_hat.sample(i), c, w)?,
            });
        }
    }
    let raw = stitch(roi.dims(), &residuals, roi.spacing_mm, roi.thickness_mm)?;
    median_filter_3d(&raw, cfg.median_kernel)
}

/// Thresholds continuous maps, pooled over all volumes or per volume.
/// Returns the binary masks and the threshold used for each.
pub fn threshold_masks(maps: &[MaskVolume], cfg: &DetectionConfig) -> Result<Vec<(MaskVolume, f64)>> {
    if cfg.pooled_threshold {
        let refs: Vec<&MaskVolume> = maps.iter().collect();
        let t = percentile_threshold(&refs, cfg.percentile);
        maps.iter().map(|m| Ok((binarize(m, t)?, t))).collect()
    } else {
        maps.iter()
            .map(|m| {
                let t = percentile_threshold(&[m], cfg.percentile);
                Ok((binarize(m, t)?, t))
            })
            .collect()
    }
}
