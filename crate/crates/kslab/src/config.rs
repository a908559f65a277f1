//! Run and sweep configuration: the TOML schema, defaults, and validation.
//!
//! A run config looks like
//!
//! ```toml
//! [model]
//! chi1 = 0.1
//! chi2 = 0.1
//! mu1 = 5.0
//! mu2 = 5.0
//! a1 = 0.5
//! a2 = 0.5
//! alpha = 1.0
//! beta = 1.0
//! gamma = 0.1
//! delta = 0.1
//!
//! [domain]
//! dim = 2
//! cells = [64, 64]
//! extents = [1.0, 1.0]
//!
//! [init]
//! kind = "steady"      # or "constant" (n1/n2/c required) or "snapshot"
//! amplitude = 0.2
//! seed = 42
//!
//! [time]
//! t_end = 60.0
//! ```
//!
//! Every key outside `[model]` and `[domain]` has a default; unknown keys are
//! rejected so typos surface as parse errors naming the key. The full schema
//! with defaults is documented in the README.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::params::{ModelParams, PhiKind, SearchConfig};
use crate::{Error, Result};

fn bad(msg: String) -> Error {
    Error::InvalidConfig(msg)
}

/// `[model]`: the PDE coefficients. All ten rates are required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub chi1: f64,
    pub chi2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub a1: f64,
    pub a2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    #[serde(default)]
    pub phi: PhiSection,
}

/// `[model.phi]`: the buoyancy potential, as a uniform gradient or a
/// cell-field snapshot. Defaults to `grad phi = (0, -1, 0)`, i.e. phi = -y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum PhiSection {
    Linear { grad: [f64; 3] },
    File { path: PathBuf },
}

impl Default for PhiSection {
    fn default() -> Self {
        PhiSection::Linear { grad: [0.0, -1.0, 0.0] }
    }
}

impl PhiSection {
    pub fn to_phi_kind(&self) -> PhiKind {
        match self {
            PhiSection::Linear { grad } => PhiKind::Linear { g: *grad },
            PhiSection::File { path } => PhiKind::File { path: path.clone() },
        }
    }
}

/// `[domain]`: grid geometry. `cells` is required; `extents` defaults to a
/// unit box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub cells: Vec<usize>,
    #[serde(default)]
    pub extents: Option<Vec<f64>>,
}

fn default_dim() -> usize {
    2
}

impl DomainSection {
    pub fn grid(&self) -> Result<crate::grid::Grid> {
        let ext = self.extents_or_default();
        crate::grid::Grid::new(self.dim, &self.cells, &ext)
    }

    pub fn extents_or_default(&self) -> Vec<f64> {
        self.extents.clone().unwrap_or_else(|| vec![1.0; self.dim])
    }
}

/// How the initial scalar fields are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Backgrounds from the regime's steady state.
    Steady,
    /// Explicit constants `n1`, `n2`, `c`.
    Constant,
    /// Reload a previous run's final snapshot.
    Snapshot,
}

/// Shape of the seeded perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    /// A random low-mode cosine blend (smooth, Neumann-compatible),
    /// normalized so the sup amplitude is exact.
    Modes,
    /// Independent uniform noise per cell.
    Cells,
}

/// `[init]`: initial data. Default: steady-state backgrounds, no
/// perturbation, seed 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitSection {
    pub kind: InitKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Sup-norm of the perturbation added to each scalar background.
    pub amplitude: f64,
    pub perturb: PerturbKind,
    pub seed: u64,
    /// Snapshot stem (directory + basename) for `kind = "snapshot"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<PathBuf>,
}

impl Default for InitSection {
    fn default() -> Self {
        InitSection {
            kind: InitKind::Steady,
            n1: None,
            n2: None,
            c: None,
            amplitude: 0.0,
            perturb: PerturbKind::Modes,
            seed: 0,
            snapshot: None,
        }
    }
}

/// `[time]`: horizon and step control. Omitting `dt` selects the adaptive
/// bound from the stability limits, scaled by `safety`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSection {
    pub t_end: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub safety: f64,
    pub max_steps: u64,
}

impl Default for TimeSection {
    fn default() -> Self {
        TimeSection { t_end: 10.0, dt: None, safety: 0.4, max_steps: 50_000_000 }
    }
}

/// What to measure convergence against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetChoice {
    /// The steady state the feasibility analysis predicts.
    Auto,
    /// No target: run to `t_end`.
    None,
}

/// `[convergence]`: the run stops early once every distance stays below its
/// tolerance for a full window of consecutive samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSection {
    pub target: TargetChoice,
    /// Sup-norm tolerance for each scalar distance.
    pub tolerance: f64,
    /// Sup-norm tolerance for the velocity.
    pub u_tolerance: f64,
    /// Number of consecutive in-tolerance samples required.
    pub window: usize,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        ConvergenceSection {
            target: TargetChoice::Auto,
            tolerance: 1e-3,
            u_tolerance: 1e-5,
            window: 20,
        }
    }
}

/// `[output]`: where and how often diagnostics and snapshots are written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Basename for the CSV and snapshot files.
    pub stem: String,
    /// Diagnostics sampling interval in simulated time.
    pub sample_dt: f64,
    /// Write the final state as a snapshot set.
    pub snapshots: bool,
    /// Order of the monitored Lq norms of the signal.
    pub q: f64,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            stem: "run".to_string(),
            sample_dt: 0.1,
            snapshots: true,
            q: 4.0,
        }
    }
}

/// A complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub domain: DomainSection,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub convergence: ConvergenceSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub search: SearchConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(s).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Assembles the model parameters (model section + domain geometry).
    pub fn model_params(&self) -> Result<ModelParams> {
        let m = &self.model;
        let ext = self.domain.extents_or_default();
        let mut extents = [1.0; 3];
        extents[..ext.len()].copy_from_slice(&ext);
        let p = ModelParams {
            chi1: m.chi1,
            chi2: m.chi2,
            mu1: m.mu1,
            mu2: m.mu2,
            a1: m.a1,
            a2: m.a2,
            alpha: m.alpha,
            beta: m.beta,
            gamma: m.gamma,
            delta: m.delta,
            dim: self.domain.dim,
            extents,
            phi: m.phi.to_phi_kind(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn grid(&self) -> Result<crate::grid::Grid> {
        self.domain.grid()
    }

    pub fn validate(&self) -> Result<()> {
        if self.domain.cells.len() != self.domain.dim {
            return Err(bad(format!(
                "domain.cells must list {} entries for dim = {}, got {}",
                self.domain.dim,
                self.domain.dim,
                self.domain.cells.len()
            )));
        }
        if let Some(ext) = &self.domain.extents {
            if ext.len() != self.domain.dim {
                return Err(bad(format!(
                    "domain.extents must list {} entries for dim = {}, got {}",
                    self.domain.dim,
                    self.domain.dim,
                    ext.len()
                )));
            }
        }
        self.model_params()?;
        self.grid()?;

        let init = &self.init;
        if !(init.amplitude >= 0.0 && init.amplitude.is_finite()) {
            return Err(bad(format!(
                "init.amplitude must be finite and >= 0, got {}",
                init.amplitude
            )));
        }
        // TOML integers are signed 64-bit, so larger seeds could be injected
        // only through overrides and would then fail to re-serialize.
        if init.seed > i64::MAX as u64 {
            return Err(bad(format!(
                "init.seed must fit a TOML integer (<= {}), got {}",
                i64::MAX,
                init.seed
            )));
        }
        match init.kind {
            InitKind::Constant => {
                for (name, v) in [("n1", init.n1), ("n2", init.n2), ("c", init.c)] {
                    match v {
                        None => {
                            return Err(bad(format!(
                                "init.{name} is required when init.kind = \"constant\""
                            )))
                        }
                        Some(x) if !(x.is_finite() && x >= 0.0) => {
                            return Err(bad(format!(
                                "init.{name} must be finite and >= 0, got {x}"
                            )))
                        }
                        _ => {}
                    }
                }
            }
            InitKind::Snapshot => {
                if init.snapshot.is_none() {
                    return Err(bad(
                        "init.snapshot (a snapshot stem) is required when \
                         init.kind = \"snapshot\""
                            .into(),
                    ));
                }
                if init.amplitude > 0.0 {
                    return Err(bad(
                        "init.amplitude must be 0 when reloading a snapshot".into(),
                    ));
                }
            }
            InitKind::Steady => {}
        }

        let t = &self.time;
        if !(t.t_end >= 0.0 && t.t_end.is_finite()) {
            return Err(bad(format!("time.t_end must be finite and >= 0, got {}", t.t_end)));
        }
        if let Some(dt) = t.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(bad(format!("time.dt must be finite and > 0, got {dt}")));
            }
        }
        if !(t.safety > 0.0 && t.safety <= 1.0) {
            return Err(bad(format!("time.safety must be in (0, 1], got {}", t.safety)));
        }
        if t.max_steps == 0 {
            return Err(bad("time.max_steps must be >= 1".into()));
        }

        let c = &self.convergence;
        if !(c.tolerance > 0.0 && c.u_tolerance > 0.0) {
            return Err(bad(format!(
                "convergence tolerances must be > 0, got ({}, {})",
                c.tolerance, c.u_tolerance
            )));
        }
        if c.window == 0 {
            return Err(bad("convergence.window must be >= 1".into()));
        }

        let o = &self.output;
        if !(o.sample_dt > 0.0 && o.sample_dt.is_finite()) {
            return Err(bad(format!(
                "output.sample_dt must be finite and > 0, got {}",
                o.sample_dt
            )));
        }
        if !(o.q >= 1.0 && o.q.is_finite()) {
            return Err(bad(format!("output.q must be >= 1, got {}", o.q)));
        }
        if o.stem.is_empty() || o.stem.contains(['/', '\\']) {
            return Err(bad(format!(
                "output.stem must be a plain basename, got {:?}",
                o.stem
            )));
        }

        self.search.validate()?;
        Ok(())
    }
}

/// One sweep axis: a dotted config path and the values to visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted path into the run config, e.g. `model.chi1`.
    pub param: String,
    pub values: Vec<f64>,
}

/// A sweep: a base run config plus axes forming a cartesian product. The
/// last listed axis varies fastest; row order is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Path to the base run config, relative to the sweep file.
    pub base: PathBuf,
    pub axes: Vec<SweepAxis>,
    /// Extra dotted-path overrides applied to every point (e.g. a short
    /// `"time.t_end"` for screening runs).
    #[serde(default)]
    pub overrides: toml::Table,
}

impl SweepConfig {
    pub fn from_toml_str(s: &str) -> Result<SweepConfig> {
        let cfg: SweepConfig =
            toml::from_str(s).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<SweepConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SweepConfig::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(bad("a sweep needs at least one axis".into()));
        }
        for ax in &self.axes {
            if ax.values.is_empty() {
                return Err(bad(format!("sweep axis {:?} has no values", ax.param)));
            }
            if ax.param.is_empty() {
                return Err(bad("sweep axis param path is empty".into()));
            }
        }
        for key in self.overrides.keys() {
            if key.is_empty() {
                return Err(bad("override path is empty".into()));
            }
        }
        Ok(())
    }

    /// Number of points in the cartesian product.
    pub fn num_points(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    /// The coordinate values of point `idx` (row-major, last axis fastest).
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut coords = vec![0.0; self.axes.len()];
        let mut rem = idx;
        for (a, ax) in self.axes.iter().enumerate().rev() {
            coords[a] = ax.values[rem % ax.values.len()];
            rem /= ax.values.len();
        }
        coords
    }

    /// Builds the run config for point `idx` from the base document.
    pub fn run_config_at(&self, base_doc: &toml::Table, idx: usize) -> Result<RunConfig> {
        let mut doc = base_doc.clone();
        for (path, value) in &self.overrides {
            apply_override(&mut doc, path, value)?;
        }
        for (ax, v) in self.axes.iter().zip(self.point(idx)) {
            set_dotted(&mut doc, &ax.param, toml::Value::Float(v))?;
        }
        let cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Applies one override. Table values merge key-by-key (so both the quoted
/// form `"time.t_end" = 2.5` and the nested form `[overrides.time]` work
/// without clobbering sibling keys); leaves overwrite.
fn apply_override(doc: &mut toml::Table, path: &str, value: &toml::Value) -> Result<()> {
    match value {
        toml::Value::Table(inner) => {
            for (k, v) in inner {
                apply_override(doc, &format!("{path}.{k}"), v)?;
            }
            Ok(())
        }
        leaf => set_dotted(doc, path, leaf.clone()),
    }
}

/// Sets `table[a][b][c] = value` for the dotted path `a.b.c`, creating
/// intermediate tables as needed.
fn set_dotted(table: &mut toml::Table, dotted: &str, value: toml::Value) -> Result<()> {
    let mut parts = dotted.split('.').peekable();
    let mut cur = table;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(bad(format!("bad dotted path {dotted:?}")));
        }
        if parts.peek().is_none() {
            cur.insert(part.to_string(), value);
            return Ok(());
        }
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            bad(format!("path {dotted:?} descends into non-table key {part:?}"))
        })?;
    }
    unreachable!("split never yields an empty iterator")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [model]
        chi1 = 0.1
        chi2 = 0.1
        mu1 = 5.0
        mu2 = 5.0
        a1 = 0.5
        a2 = 0.5
        alpha = 1.0
        beta = 1.0
        gamma = 0.1
        delta = 0.1

        [domain]
        cells = [64, 64]
    "#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.domain.dim, 2);
        assert_eq!(cfg.domain.extents_or_default(), vec![1.0, 1.0]);
        assert_eq!(cfg.init.kind, InitKind::Steady);
        assert_eq!(cfg.init.amplitude, 0.0);
        assert_eq!(cfg.time.safety, 0.4);
        assert_eq!(cfg.time.dt, None);
        assert_eq!(cfg.convergence.window, 20);
        assert_eq!(cfg.convergence.tolerance, 1e-3);
        assert_eq!(cfg.output.q, 4.0);
        assert_eq!(
            cfg.model.phi,
            PhiSection::Linear { grad: [0.0, -1.0, 0.0] },
            "default potential is phi = -y"
        );
        let p = cfg.model_params().unwrap();
        assert_eq!(p.dim, 2);
        assert_eq!(p.extents, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        cfg.init.kind = InitKind::Constant;
        cfg.init.n1 = Some(0.3);
        cfg.init.n2 = Some(0.7);
        cfg.init.c = Some(1.0);
        cfg.init.amplitude = 0.05;
        cfg.time.dt = Some(1e-4);
        let text = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn missing_required_key_is_named() {
        let broken = MINIMAL.replace("mu1 = 5.0", "");
        let err = RunConfig::from_toml_str(&broken).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mu1"), "error should name the key: {msg}");
    }

    #[test]
    fn unknown_key_is_named() {
        let broken = format!("{MINIMAL}\n[time]\ntend = 3.0\n");
        let err = RunConfig::from_toml_str(&broken).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tend"), "error should name the key: {msg}");
    }

    #[test]
    fn constant_init_requires_all_three_values() {
        let broken = format!("{MINIMAL}\n[init]\nkind = \"constant\"\nn1 = 0.3\nn2 = 0.7\n");
        let err = RunConfig::from_toml_str(&broken).unwrap_err();
        assert!(err.to_string().contains("init.c"), "{err}");
    }

    #[test]
    fn validation_names_out_of_range_keys() {
        let cases = [
            ("[time]\nsafety = 1.5", "time.safety"),
            ("[time]\nt_end = -1.0", "time.t_end"),
            ("[output]\nsample_dt = 0.0", "output.sample_dt"),
            ("[output]\nstem = \"a/b\"", "output.stem"),
        ];
        for (snippet, key) in cases {
            let text = format!("{MINIMAL}\n{snippet}\n");
            let err = RunConfig::from_toml_str(&text).unwrap_err();
            assert!(err.to_string().contains(key), "{snippet} -> {err}");
        }
    }

    #[test]
    fn cells_length_must_match_dim() {
        let text = MINIMAL.replace("cells = [64, 64]", "cells = [64, 64, 64]");
        let err = RunConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("cells"), "{err}");
    }

    #[test]
    fn phi_file_variant_parses() {
        let text = format!(
            "{MINIMAL}\n[model.phi]\nkind = \"file\"\npath = \"phi.ksnap\"\n"
        );
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(
            cfg.model.phi,
            PhiSection::File { path: PathBuf::from("phi.ksnap") }
        );
    }

    #[test]
    fn sweep_points_enumerate_last_axis_fastest() {
        let sweep = SweepConfig {
            base: PathBuf::from("base.toml"),
            axes: vec![
                SweepAxis { param: "model.chi1".into(), values: vec![0.0, 1.0] },
                SweepAxis { param: "model.mu1".into(), values: vec![3.0, 4.0, 5.0] },
            ],
            overrides: toml::Table::new(),
        };
        sweep.validate().unwrap();
        assert_eq!(sweep.num_points(), 6);
        assert_eq!(sweep.point(0), vec![0.0, 3.0]);
        assert_eq!(sweep.point(1), vec![0.0, 4.0]);
        assert_eq!(sweep.point(3), vec![1.0, 3.0]);
        assert_eq!(sweep.point(5), vec![1.0, 5.0]);
    }

    #[test]
    fn sweep_builds_run_configs_with_axis_values_applied() {
        let base: toml::Table = toml::from_str(MINIMAL).unwrap();
        let mut overrides = toml::Table::new();
        overrides.insert("time.t_end".into(), toml::Value::Float(2.5));
        let sweep = SweepConfig {
            base: PathBuf::from("unused.toml"),
            axes: vec![SweepAxis { param: "model.chi1".into(), values: vec![0.25, 0.75] }],
            overrides,
        };
        let cfg = sweep.run_config_at(&base, 1).unwrap();
        assert_eq!(cfg.model.chi1, 0.75);
        assert_eq!(cfg.time.t_end, 2.5);
        let cfg0 = sweep.run_config_at(&base, 0).unwrap();
        assert_eq!(cfg0.model.chi1, 0.25);
    }

    #[test]
    fn empty_axis_list_is_rejected() {
        let err = SweepConfig {
            base: PathBuf::from("b.toml"),
            axes: vec![],
            overrides: toml::Table::new(),
        }
        .validate()
        .unwrap_err();
        assert!(err.to_string().contains("at least one axis"), "{err}");
    }

    #[test]
    fn dotted_path_through_scalar_is_an_error() {
        let mut doc: toml::Table = toml::from_str("a = 1").unwrap();
        let err = set_dotted(&mut doc, "a.b", toml::Value::Float(0.0)).unwrap_err();
        assert!(err.to_string().contains('a'), "{err}");
    }
}
