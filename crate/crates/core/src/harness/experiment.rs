use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use super::stages::{detect_stage, ensure_registered, eval_stage, fit_stage, timed, write_text_atomic, SeedReport};
use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::windowing::ConditionFlags;

/// β values of the default sweep.
pub const DEFAULT_BETAS: [f64; 7] = [0.1, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0];

/// One result line: a configuration, a seed and its pooled metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub config_id: String,
    pub label: String,
    pub slices: usize,
    pub use_age: bool,
    pub use_weight: bool,
    pub use_sex: bool,
    pub use_w_z: bool,
    pub use_w_y: bool,
    pub beta: f64,
    pub seed: u64,
    pub auprc: f64,
    pub auroc: f64,
    pub dice: f64,
}

impl CsvRow {
    pub const HEADER: &'static str =
        "config_id,label,slices,use_age,use_weight,use_sex,use_w_z,use_w_y,beta,seed,auprc,auroc,dice";

    /// Floats use the shortest representation that round-trips exactly.
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.config_id,
            self.label.replace(',', ";"),
            self.slices,
            self.use_age,
            self.use_weight,
            self.use_sex,
            self.use_w_z,
            self.use_w_y,
            self.beta,
            self.seed,
            self.auprc,
            self.auroc,
            self.dice
        )
    }

    fn new(cfg: &ExperimentConfig, seed: u64, auprc: f64, auroc: f64, dice: f64) -> Self {
        let f: ConditionFlags = cfg.conditioning;
        CsvRow {
            config_id: cfg.config_hash(),
            label: cfg.name.clone(),
            slices: cfg.model.channels,
            use_age: f.age,
            use_weight: f.weight,
            use_sex: f.sex,
            use_w_z: f.w_z,
            use_w_y: f.w_y,
            beta: cfg.model.beta_target,
            seed,
            auprc,
            auroc,
            dice,
        }
    }
}

/// Writes a header and one line per row.
pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    let mut text = String::from(CsvRow::HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_text_atomic(path, &text)
}

/// Appends one line with a single write so concurrent runs never interleave.
fn append_row(path: &Path, row: &CsvRow) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    if fresh {
        line.push_str(CsvRow::HEADER);
        line.push('\n');
    }
    line.push_str(&row.to_line());
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    /// Reuse a seed's finished report instead of recomputing it.
    pub reuse_completed: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { reuse_completed: true }
    }
}

/// Runs the whole pipeline for one seed under `root/runs/<config hash>/seed-<seed>`.
pub fn run_seed(cfg: &ExperimentConfig, root: &Path, seed: u64, opts: &RunOptions) -> Result<CsvRow> {
    cfg.validate()?;
    let run_dir = root.join("runs").join(cfg.config_hash());
    let seed_dir = run_dir.join(format!("seed-{seed}"));
    let report_path = seed_dir.join("report.json");
    if opts.reuse_completed && report_path.exists() {
        let text = fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
        let report: SeedReport =
            serde_json::from_str(&text).map_err(|e| Error::format(report_path.display().to_string(), e.to_string()))?;
        info!("reusing {}", report_path.display());
        let m = &report.metrics;
        return Ok(CsvRow::new(cfg, seed, m.auprc, m.auroc, m.dice));
    }
    fs::create_dir_all(&seed_dir).map_err(|e| Error::io(&seed_dir, e))?;
    let mut canon = cfg.clone();
    canon.seeds = vec![seed];
    write_text_atomic(&run_dir.join("config.toml"), &canon.to_toml()?)?;

    let set = ensure_registered(cfg, root)?;
    let (mut ckpt, train_seconds) =
        timed(|| fit_stage(cfg, &set, seed, &seed_dir.join("model.ckpt"))).map_err(|e| e.in_stage("fit"))?;
    let (det, detect_seconds) = timed(|| {
        let det = detect_stage(cfg, &mut ckpt, &set)?;
        det.save(&seed_dir.join("masks"))?;
        Ok(det)
    })
    .map_err(|e| e.in_stage("detect"))?;
    let metrics = eval_stage(&set, &det).map_err(|e| e.in_stage("eval"))?;
    let row = CsvRow::new(cfg, seed, metrics.auprc, metrics.auroc, metrics.dice);
    let report = SeedReport {
        config_hash: cfg.config_hash(),
        seed,
        threshold: det.thresholds.first().copied().unwrap_or(f64::INFINITY),
        metrics,
        train_seconds,
        detect_seconds,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::format("report", e.to_string()))?;
    write_text_atomic(&report_path, &json)?;
    append_row(&run_dir.join("results.csv"), &row)?;
    info!(
        "{} seed {seed}: auprc {:.4} auroc {:.4} dice {:.4} (train {train_seconds:.0}s, detect {detect_seconds:.0}s)",
        cfg.name, row.auprc, row.auroc, row.dice
    );
    Ok(row)
}

/// Runs every seed of a configuration.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path, opts: &RunOptions) -> Result<Vec<CsvRow>> {
    cfg.validate()?;
    cfg.seeds.iter().map(|&s| run_seed(cfg, root, s, opts)).collect()
}

fn variant(base: &ExperimentConfig, name: &str, slices: usize, flags: ConditionFlags, beta: f64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.name = name.to_string();
    cfg.model.channels = slices;
    cfg.model.beta_target = beta;
    cfg.conditioning = flags;
    cfg
}

const COORDS: ConditionFlags = ConditionFlags { age: false, weight: false, sex: false, w_z: true, w_y: true };

/// Slice-count and coordinate ablation, in table order.
pub fn ablation_slices_configs(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let beta = base.model.beta_target;
    let mut out = vec![
        variant(base, "1 slice", 1, ConditionFlags::NONE, beta),
        variant(base, "1 slice + w_z", 1, ConditionFlags { w_z: true, ..ConditionFlags::NONE }, beta),
    ];
    for c in [1, 3, 5, 7, 9] {
        let name = format!("{c} slice{} + w_y + w_z", if c == 1 { "" } else { "s" });
        out.push(variant(base, &name, c, COORDS, beta));
    }
    out
}

/// Patient-feature ablation at 5 slices with coordinates, in table order.
pub fn ablation_features_configs(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let beta = base.model.beta_target;
    let with = |age, weight, sex| ConditionFlags { age, weight, sex, ..COORDS };
    vec![
        variant(base, "5 slices", 5, COORDS, beta),
        variant(base, "5 slices + age", 5, with(true, false, false), beta),
        variant(base, "5 slices + weight", 5, with(false, true, false), beta),
        variant(base, "5 slices + sex", 5, with(false, false, true), beta),
        variant(base, "5 slices + age + weight + sex", 5, with(true, true, true), beta),
        variant(base, "5 slices + sex + tuned beta", 5, with(false, false, true), base.tuned_beta),
    ]
}

/// β sweep at 5 slices with sex and coordinate conditioning.
pub fn sweep_beta_configs(base: &ExperimentConfig, betas: &[f64]) -> Vec<ExperimentConfig> {
    let flags = ConditionFlags { sex: true, ..COORDS };
    betas.iter().map(|&b| variant(base, &format!("beta {b}"), 5, flags, b)).collect()
}

fn run_all(configs: &[ExperimentConfig], root: &Path, opts: &RunOptions, csv: &Path) -> Result<Vec<CsvRow>> {
    let mut rows = Vec::new();
    for cfg in configs {
        rows.extend(run_experiment(cfg, root, opts)?);
        write_csv(csv, &rows)?;
    }
    Ok(rows)
}

/// Runs the slice ablation; writes `root/ablate_slices.csv`.
pub fn ablate_slices(base: &ExperimentConfig, root: &Path, opts: &RunOptions) -> Result<Vec<CsvRow>> {
    run_all(&ablation_slices_configs(base), root, opts, &root.join("ablate_slices.csv"))
}

/// Runs the feature ablation; writes `root/ablate_features.csv`.
pub fn ablate_features(base: &ExperimentConfig, root: &Path, opts: &RunOptions) -> Result<Vec<CsvRow>> {
    run_all(&ablation_features_configs(base), root, opts, &root.join("ablate_features.csv"))
}

/// Runs the β sweep; writes `root/sweep_beta.csv`.
pub fn sweep_beta(base: &ExperimentConfig, betas: &[f64], root: &Path, opts: &RunOptions) -> Result<Vec<CsvRow>> {
    if betas.is_empty() {
        return Err(Error::Validation("no β values to sweep".into()));
    }
    run_all(&sweep_beta_configs(base, betas), root, opts, &root.join("sweep_beta.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_ablation_has_table_shape() {
        let cfgs = ablation_slices_configs(&ExperimentConfig::default());
        let names: Vec<_> = cfgs.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "1 slice",
                "1 slice + w_z",
                "1 slice + w_y + w_z",
                "3 slices + w_y + w_z",
                "5 slices + w_y + w_z",
                "7 slices + w_y + w_z",
                "9 slices + w_y + w_z"
            ]
        );
        assert_eq!(cfgs[0].conditioning, ConditionFlags::NONE);
        assert!(cfgs.iter().all(|c| !c.conditioning.sex && !c.conditioning.age));
    }

    #[test]
    fn feature_ablation_has_six_rows_with_sex_only_row() {
        let base = ExperimentConfig::default();
        let cfgs = ablation_features_configs(&base);
        assert_eq!(cfgs.len(), 6);
        assert!(cfgs.iter().all(|c| c.model.channels == 5 && c.conditioning.w_z && c.conditioning.w_y));
        assert_eq!(cfgs[3].conditioning.label(), "sex+w_z+w_y");
        assert_eq!(cfgs[5].model.beta_target, base.tuned_beta);
        let ids: std::collections::HashSet<_> = cfgs.iter().map(|c| c.config_hash()).collect();
        assert_eq!(ids.len(), 6);
    }

    #[test]
    fn default_sweep_has_seven_betas() {
        let cfgs = sweep_beta_configs(&ExperimentConfig::default(), &DEFAULT_BETAS);
        assert_eq!(cfgs.len(), 7);
        assert!(cfgs.iter().all(|c| c.conditioning.sex && c.model.channels == 5));
    }

    #[test]
    fn csv_line_round_trips_floats() {
        let row = CsvRow::new(&ExperimentConfig::default(), 3, 0.1 + 0.2, 1.0 / 3.0, 0.0);
        let line = row.to_line();
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), CsvRow::HEADER.split(',').count());
        assert_eq!(fields[10].parse::<f64>().unwrap(), 0.1 + 0.2);
        assert_eq!(fields[11].parse::<f64>().unwrap(), 1.0 / 3.0);
    }
}
