//! Experiment configuration, suites over refinement ladders, and report files.

mod stats;
mod suites;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::{Family, FamilyKind, FixtureSpec};
use crate::kernels::KernelSpec;
use crate::norms::OrliczFn;

pub use stats::{
    block_family, calibrated_symbol, endpoint_lhs, endpoint_rhs, estimate_operator_norm,
    threshold_grid, weak_type_statistic, Statistic, SymbolNorm, Transform,
};
pub use suites::run_suite;

/// The suites, named by what they measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteName {
    /// Strong, weak, RBMO and atomic-block bounds of the fractional integral.
    FractionalBounds,
    /// Single and multilinear commutators in Lebesgue and Orlicz norms.
    Commutators,
    /// Weak-type endpoint estimate of multilinear commutators.
    Endpoint,
    /// Pointwise fractional-integral bounds: the maximal-function product and ball potentials.
    Pointwise,
    /// `||N f||_p / ||M^sharp f||_p` on mean-zero functions.
    SharpMaximal,
}

impl SuiteName {
    pub const ALL: [SuiteName; 5] = [
        SuiteName::FractionalBounds,
        SuiteName::Commutators,
        SuiteName::Endpoint,
        SuiteName::Pointwise,
        SuiteName::SharpMaximal,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SuiteName::FractionalBounds => "fractional_bounds",
            SuiteName::Commutators => "commutators",
            SuiteName::Endpoint => "endpoint",
            SuiteName::Pointwise => "pointwise",
            SuiteName::SharpMaximal => "sharp_maximal",
        }
    }

    pub fn parse(name: &str) -> Result<SuiteName> {
        SuiteName::ALL
            .into_iter()
            .find(|s| s.as_str() == name)
            .ok_or_else(|| Error::Parameter(format!("unknown suite {name:?}")))
    }
}

/// Exponents with `1/q = 1/p - alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentPair {
    pub p: f64,
    pub q: f64,
}

fn default_k() -> usize {
    2
}
fn default_target() -> f64 {
    1.0
}
fn default_tolerance() -> f64 {
    0.02
}
fn default_r() -> Vec<f64> {
    vec![1.0]
}
fn default_thresholds() -> usize {
    16
}
fn default_epsilon() -> f64 {
    0.25
}
fn default_growth() -> f64 {
    0.25
}
fn default_family_count() -> usize {
    8
}
fn default_baseline_tolerance() -> f64 {
    1e-9
}
fn default_families() -> Vec<Family> {
    vec![
        Family::plain(FamilyKind::Indicators),
        Family::plain(FamilyKind::Bumps),
    ]
}

/// Symbols for the commutator suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommutatorSettings {
    /// Number of symbols in the multilinear statistic.
    #[serde(default = "default_k")]
    pub k: usize,
    /// BMO norm every symbol is rescaled to.
    #[serde(default = "default_target")]
    pub target: f64,
    /// Allowed relative miss of the rescaled norm.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for CommutatorSettings {
    fn default() -> Self {
        CommutatorSettings {
            k: default_k(),
            target: default_target(),
            tolerance: default_tolerance(),
        }
    }
}

/// Endpoint suite parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSettings {
    /// Exponents `r_i >= 1`, one per symbol.
    #[serde(default = "default_r")]
    pub r: Vec<f64>,
    /// Number of thresholds below the maximum.
    #[serde(default = "default_thresholds")]
    pub thresholds: usize,
    #[serde(default = "default_target")]
    pub target: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for EndpointSettings {
    fn default() -> Self {
        EndpointSettings {
            r: default_r(),
            thresholds: default_thresholds(),
            target: default_target(),
            tolerance: default_tolerance(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointwiseSettings {
    /// Offset of the two fractional maximal functions.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl Default for PointwiseSettings {
    fn default() -> Self {
        PointwiseSettings {
            epsilon: default_epsilon(),
        }
    }
}

/// One suite run with optional overrides of the global settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteEntry {
    pub name: SuiteName,
    /// Report file stem; defaults to the suite name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<Vec<FixtureSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub families: Option<Vec<Family>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family_count: Option<usize>,
    /// Statistics to compute; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistics: Option<Vec<String>>,
    /// Largest accepted relative growth between consecutive ladder sizes.
    #[serde(default = "default_growth")]
    pub max_growth: f64,
}

impl SuiteEntry {
    pub fn new(name: SuiteName) -> SuiteEntry {
        SuiteEntry {
            name,
            label: None,
            ladder: None,
            fixtures: None,
            families: None,
            family_count: None,
            statistics: None,
            max_growth: default_growth(),
        }
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.name.as_str().to_string())
    }

    pub(crate) fn wants(&self, statistic: &str) -> bool {
        self.statistics
            .as_ref()
            .map_or(true, |s| s.iter().any(|x| x == statistic))
    }
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fixtures: Vec<FixtureSpec>,
    pub kernel: KernelSpec,
    pub exponents: ExponentPair,
    /// Young function of the multilinear Orlicz statistic; `t^p` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<OrliczFn>,
    #[serde(default)]
    pub commutator: CommutatorSettings,
    #[serde(default)]
    pub endpoint: EndpointSettings,
    #[serde(default)]
    pub pointwise: PointwiseSettings,
    /// Point counts each fixture is regenerated at; empty keeps the fixture as given.
    #[serde(default)]
    pub ladder: Vec<usize>,
    #[serde(default = "default_families")]
    pub families: Vec<Family>,
    #[serde(default = "default_family_count")]
    pub family_count: usize,
    #[serde(default)]
    pub suites: Vec<SuiteEntry>,
    /// Baseline file, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baselines: Option<PathBuf>,
    #[serde(default = "default_baseline_tolerance")]
    pub baseline_tolerance: f64,
    /// Output directory, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn alpha(&self) -> f64 {
        self.kernel.alpha
    }

    pub fn phi(&self) -> OrliczFn {
        self.phi.clone().unwrap_or(OrliczFn::Power {
            p: self.exponents.p,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        let alpha = self.alpha();
        let ExponentPair { p, q } = self.exponents;
        if !(p > 1.0 && p * alpha < 1.0) {
            return Err(Error::Parameter(format!(
                "need 1 < p < 1/alpha, got p = {p}, alpha = {alpha}"
            )));
        }
        let gap = 1.0 / q - (1.0 / p - alpha);
        if !(gap.abs() <= 1e-12) {
            return Err(Error::Parameter(format!(
                "exponents violate 1/q = 1/p - alpha: 1/q - (1/p - alpha) = {gap:e}"
            )));
        }
        if self.commutator.k == 0
            || !(self.commutator.target > 0.0)
            || !(self.commutator.tolerance > 0.0)
        {
            return Err(Error::Parameter(
                "commutator settings need k >= 1 and positive target and tolerance".into(),
            ));
        }
        let e = &self.endpoint;
        if e.r.is_empty() || e.r.iter().any(|&r| !(r >= 1.0 && r.is_finite())) {
            return Err(Error::Parameter(
                "endpoint exponents must be finite and at least 1".into(),
            ));
        }
        if e.thresholds == 0 || !(e.target > 0.0) || !(e.tolerance > 0.0) {
            return Err(Error::Parameter(
                "endpoint settings need thresholds >= 1 and positive target".into(),
            ));
        }
        let eps = self.pointwise.epsilon;
        if !(eps > 0.0 && eps < alpha.min(1.0 - alpha)) {
            return Err(Error::Parameter(format!(
                "epsilon must lie in (0, min(alpha, 1 - alpha)), got {eps}"
            )));
        }
        if self.families.is_empty() || self.family_count == 0 {
            return Err(Error::Parameter(
                "at least one function family with a positive count is required".into(),
            ));
        }
        self.phi().validate()?;
        let mut labels = std::collections::BTreeSet::new();
        for entry in &self.suites {
            if !labels.insert(entry.label()) {
                return Err(Error::Parameter(format!(
                    "duplicate suite label {:?}",
                    entry.label()
                )));
            }
            if entry.fixtures.as_ref().unwrap_or(&self.fixtures).is_empty() {
                return Err(Error::Parameter(format!(
                    "suite {:?} has no fixtures",
                    entry.label()
                )));
            }
            if !(entry.max_growth > 0.0) {
                return Err(Error::Parameter("max_growth must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One statistic at one fixture size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatRow {
    pub fixture_family: String,
    pub fixture: String,
    pub n: usize,
    pub statistic: String,
    /// `None` when every ratio was skipped.
    pub value: Option<f64>,
    pub evaluated: usize,
    pub skipped: usize,
    pub witness: String,
}

/// Growth of a statistic between consecutive ladder sizes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendRow {
    pub fixture_family: String,
    pub statistic: String,
    pub n_from: usize,
    pub n_to: usize,
    pub value_from: f64,
    pub value_to: f64,
    /// `value_to / value_from - 1`.
    pub growth: f64,
    pub limit: f64,
    pub passed: bool,
}

/// Fitted constants of a generated space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureSummary {
    pub fixture: String,
    pub n: usize,
    pub c_lambda: f64,
    pub c_lambda_tilde: f64,
    pub n0: usize,
    pub upper_doubling_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: SuiteName,
    pub label: String,
    pub fixtures: Vec<FixtureSummary>,
    pub rows: Vec<StatRow>,
    pub trends: Vec<TrendRow>,
    pub notes: Vec<String>,
    /// Violated exact invariants.
    pub hard_failures: Vec<String>,
}

impl SuiteReport {
    /// Value of `statistic` for fixtures whose label starts with `prefix`, in ladder order.
    pub fn series(&self, prefix: &str, statistic: &str) -> Vec<(usize, Option<f64>)> {
        self.rows
            .iter()
            .filter(|r| r.statistic == statistic && r.fixture.starts_with(prefix))
            .map(|r| (r.n, r.value))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub suites: Vec<SuiteReport>,
}

impl RunReport {
    pub fn suite(&self, label: &str) -> Option<&SuiteReport> {
        self.suites.iter().find(|s| s.label == label)
    }

    pub fn hard_failures(&self) -> impl Iterator<Item = &String> {
        self.suites.iter().flat_map(|s| s.hard_failures.iter())
    }
}

/// Result of comparing against recorded baselines.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BaselineOutcome {
    pub recorded: usize,
    pub checked: usize,
    /// `key: value > baseline` entries.
    pub exceeded: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub baseline: BaselineOutcome,
    pub written: Vec<PathBuf>,
}

impl RunOutcome {
    /// No hard failure and no exceeded baseline.
    pub fn success(&self) -> bool {
        self.report.hard_failures().next().is_none() && self.baseline.exceeded.is_empty()
    }
}

/// Runs every suite entry of `config` in order.
pub fn run_suites(config: &ExperimentConfig, only: Option<SuiteName>) -> Result<RunReport> {
    config.validate()?;
    let suites = config
        .suites
        .iter()
        .filter(|e| only.map_or(true, |name| e.name == name))
        .map(|entry| run_suite(config, entry))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunReport { suites })
}

fn number(v: f64) -> String {
    format!("{v:.15e}")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Delimited table of statistic rows; `x` and `y` are the plot columns.
pub fn rows_csv(report: &SuiteReport) -> String {
    let mut out =
        String::from("suite,fixture_family,fixture,statistic,x,y,evaluated,skipped,witness\n");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            report.label,
            csv_field(&r.fixture_family),
            csv_field(&r.fixture),
            r.statistic,
            r.n,
            r.value.map_or_else(|| "skipped".to_string(), number),
            r.evaluated,
            r.skipped,
            csv_field(&r.witness)
        );
    }
    out
}

/// Delimited table of ladder growth rows.
pub fn trends_csv(report: &SuiteReport) -> String {
    let mut out = String::from(
        "suite,fixture_family,statistic,n_from,n_to,value_from,value_to,growth,limit,passed\n",
    );
    for t in &report.trends {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            report.label,
            csv_field(&t.fixture_family),
            t.statistic,
            t.n_from,
            t.n_to,
            number(t.value_from),
            number(t.value_to),
            number(t.growth),
            number(t.limit),
            t.passed
        );
    }
    out
}

/// Writes `<label>.csv`, `<label>_trends.csv` and `summary.json` into `dir`.
pub fn write_reports(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for suite in &report.suites {
        let rows = dir.join(format!("{}.csv", suite.label));
        std::fs::write(&rows, rows_csv(suite))?;
        let trends = dir.join(format!("{}_trends.csv", suite.label));
        std::fs::write(&trends, trends_csv(suite))?;
        written.extend([rows, trends]);
    }
    let summary = dir.join("summary.json");
    std::fs::write(&summary, serde_json::to_string_pretty(report)? + "\n")?;
    written.push(summary);
    Ok(written)
}

fn baseline_key(suite: &SuiteReport, row: &StatRow) -> String {
    format!("{}/{}/{}", suite.label, row.fixture, row.statistic)
}

/// Compares every finite row with the stored baseline, recording missing keys.
pub fn apply_baselines(report: &RunReport, path: &Path, tolerance: f64) -> Result<BaselineOutcome> {
    let mut stored: BTreeMap<String, f64> = if path.exists() {
        serde_json::from_str(&std::fs::read_to_string(path)?)?
    } else {
        BTreeMap::new()
    };
    let mut outcome = BaselineOutcome::default();
    for suite in &report.suites {
        for row in &suite.rows {
            let Some(value) = row.value else { continue };
            let key = baseline_key(suite, row);
            match stored.get(&key) {
                Some(&base) => {
                    outcome.checked += 1;
                    if value > base + tolerance * base.abs().max(1e-300) {
                        outcome
                            .exceeded
                            .push(format!("{key}: {value:e} > {base:e}"));
                    }
                }
                None => {
                    stored.insert(key, value);
                    outcome.recorded += 1;
                }
            }
        }
    }
    if outcome.recorded > 0 {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(&stored)? + "\n")?;
    }
    Ok(outcome)
}

/// Loads a config file, runs the selected suites and writes the reports.
///
/// Relative paths in the config resolve against the config's directory; `output` overrides
/// the configured output directory.
pub fn run(
    config_path: &Path,
    only: Option<SuiteName>,
    output: Option<&Path>,
) -> Result<RunOutcome> {
    let text = std::fs::read_to_string(config_path)?;
    let config = ExperimentConfig::from_json(&text)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let report = run_suites(&config, only)?;
    let out_dir = match (output, &config.output_dir) {
        (Some(dir), _) => dir.to_path_buf(),
        (None, Some(dir)) => base.join(dir),
        (None, None) => base.join("reports"),
    };
    let written = write_reports(&report, &out_dir)?;
    let baseline = match &config.baselines {
        Some(path) => apply_baselines(&report, &base.join(path), config.baseline_tolerance)?,
        None => BaselineOutcome::default(),
    };
    Ok(RunOutcome {
        report,
        baseline,
        written,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(json: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(json)
    }

    #[test]
    fn exponent_relation_is_enforced() {
        let ok = r#"{"kernel": {"alpha": 0.5, "type": "frac_integral"}, "exponents": {"p": 1.5, "q": 6}}"#;
        assert!(config(ok).is_ok());
        let bad = r#"{"kernel": {"alpha": 0.5, "type": "frac_integral"}, "exponents": {"p": 1.5, "q": 5}}"#;
        let err = config(bad).unwrap_err().to_string();
        assert!(err.contains("1/q"), "{err}");
    }

    #[test]
    fn empty_suite_list_gives_empty_report() {
        let c = config(r#"{"kernel": {"alpha": 0.5, "type": "frac_integral"}, "exponents": {"p": 1.5, "q": 6}}"#).unwrap();
        let report = run_suites(&c, None).unwrap();
        assert!(report.suites.is_empty());
        assert!(SuiteName::parse("nope").is_err());
        assert_eq!(SuiteName::parse("endpoint").unwrap(), SuiteName::Endpoint);
    }
}
