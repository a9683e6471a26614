//! The experiment document: one TOML file describing a run or a sweep.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::dynamics::{HeParams, ParameterSet, SystemKind};
use crate::integrator::IntegratorConfig;
use crate::problem::ProblemInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    /// `"paper"` or a path to an instance file.
    pub instance: String,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            instance: "paper".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub kind: SystemKind,
}

/// Extra constants of the second-order-dual flow; the rest come from `[params]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeSection {
    pub rho: f64,
    /// Dual extrapolation exponent; `q` when omitted.
    pub kappa: Option<f64>,
}

impl Default for HeSection {
    fn default() -> Self {
        Self { rho: 1.0, kappa: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Only used by the second-order-dual flow.
    pub lambda_dot: Vec<f64>,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            x: vec![1.0, -1.0, 1.0],
            v: vec![1.0, 1.0, 1.0],
            lambda: vec![1.0],
            lambda_dot: vec![1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub t_end: f64,
    pub samples: usize,
    /// Rate-fit window; the last two decades when omitted.
    pub fit_window: Option<[f64; 2]>,
    /// Lower end `T` of the bounded-correction integral; `t0` when omitted.
    pub lemma_start: Option<f64>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            t_end: 1e4,
            samples: 400,
            fit_window: None,
            lemma_start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub plots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            plots: true,
        }
    }
}

/// A parameter that a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Q,
    P,
    S,
    C,
    Alpha,
    Theta,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Q => "q",
            SweepAxis::P => "p",
            SweepAxis::S => "s",
            SweepAxis::C => "c",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Theta => "theta",
        }
    }

    pub fn apply(&self, params: &mut ParameterSet, value: f64) {
        match self {
            SweepAxis::Q => params.q = value,
            SweepAxis::P => params.p = value,
            SweepAxis::S => params.s = value,
            SweepAxis::C => params.c = value,
            SweepAxis::Alpha => params.alpha = value,
            SweepAxis::Theta => params.theta = value,
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Further parameters set to the same value in every cell (e.g. `p` for `s = p`).
    #[serde(default)]
    pub tied: Vec<SweepAxis>,
    /// Systems to run at every value; just `system.kind` when empty.
    #[serde(default)]
    pub systems: Vec<SystemKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// Swap a lemma fixture for one whose conclusion must fail.
    pub corrupt_g: bool,
    /// Horizon of the short run used by the bounded-correction check.
    pub lemma_t_end: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            corrupt_g: false,
            lemma_t_end: 1e3,
        }
    }
}

/// Everything that determines a run. Its canonical TOML form is hashed into the run id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    /// Seed for randomized fixtures.
    pub seed: u64,
    pub problem: ProblemSection,
    pub system: SystemSection,
    pub params: ParameterSet,
    pub heode: HeSection,
    pub initial: InitialSection,
    pub run: RunSection,
    pub integrator: IntegratorConfig,
    pub output: OutputSection,
    pub sweep: Option<SweepSection>,
    pub verify: VerifySection,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            seed: 20240607,
            problem: ProblemSection::default(),
            system: SystemSection::default(),
            params: ParameterSet::default(),
            heode: HeSection::default(),
            initial: InitialSection::default(),
            run: RunSection::default(),
            integrator: IntegratorConfig::default(),
            output: OutputSection::default(),
            sweep: None,
            verify: VerifySection::default(),
        }
    }
}

const PARAM_KEYS: [&str; 7] = ["alpha", "theta", "c", "p", "q", "s", "t0"];

fn invalid(key: &str, message: impl Into<String>) -> ExperimentError {
    ExperimentError::ConfigInvalid {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Sets `key = value` in a TOML document. Dotted keys address nested tables;
/// a bare parameter name such as `s` means `params.s`. `value` is parsed as a
/// TOML value, falling back to a plain string.
pub fn apply_override(doc: &mut toml::Table, key: &str, value: &str) -> Result<(), ExperimentError> {
    let path: Vec<&str> = if key.contains('.') {
        key.split('.').collect()
    } else if PARAM_KEYS.contains(&key) {
        vec!["params", key]
    } else {
        vec![key]
    };
    if path.iter().any(|p| p.is_empty()) {
        return Err(invalid(key, "empty path segment"));
    }
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut table = doc;
    for seg in parents {
        let entry = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| invalid(key, format!("{seg} is not a table")))?;
    }
    table.insert(last.to_string(), parsed);
    Ok(())
}

impl ExperimentSpec {
    /// Parses a document, applies `KEY=VALUE` overrides in order, and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ExperimentError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| invalid("<document>", e.message().to_string()))?;
        for ov in overrides {
            let (k, v) = ov
                .split_once('=')
                .ok_or_else(|| invalid(ov, "override must look like KEY=VALUE"))?;
            apply_override(&mut doc, k.trim(), v.trim())?;
        }
        let spec: ExperimentSpec = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| invalid(&error_key(&e), e.message().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text, overrides)
    }

    /// Defaults with overrides applied, for runs without a config file.
    pub fn from_overrides(overrides: &[String]) -> Result<Self, ExperimentError> {
        Self::from_toml_str("", overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// Checks every field that does not need the problem instance.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.params
            .validate()
            .map_err(|e| invalid("params", e.to_string().replace("invalid parameter: ", "")))?;
        let run = &self.run;
        if !(run.t_end.is_finite() && run.t_end > self.params.t0) {
            return Err(invalid(
                "run.t_end",
                format!("must exceed params.t0 = {}, got {}", self.params.t0, run.t_end),
            ));
        }
        if run.samples < 10 {
            return Err(invalid("run.samples", format!("need at least 10, got {}", run.samples)));
        }
        if let Some([lo, hi]) = run.fit_window {
            if !(lo > 0.0 && lo < hi) {
                return Err(invalid("run.fit_window", "need 0 < lo < hi"));
            }
        }
        if let Some(t) = run.lemma_start {
            if !(t >= self.params.t0 && t < run.t_end) {
                return Err(invalid("run.lemma_start", "must lie in [t0, t_end)"));
            }
        }
        self.integrator
            .validate()
            .map_err(|e| invalid("integrator", e.to_string()))?;
        if !(self.heode.rho >= 0.0 && self.heode.rho.is_finite()) {
            return Err(invalid("heode.rho", "must be a nonnegative number"));
        }
        if self.heode.kappa.is_some_and(|k| !k.is_finite()) {
            return Err(invalid("heode.kappa", "must be finite"));
        }
        for (key, vals) in [
            ("initial.x", &self.initial.x),
            ("initial.v", &self.initial.v),
            ("initial.lambda", &self.initial.lambda),
            ("initial.lambda_dot", &self.initial.lambda_dot),
        ] {
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(invalid(key, "entries must be finite"));
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(invalid("sweep.values", "at least one value is required"));
            }
            if sw.values.iter().any(|v| !v.is_finite()) {
                return Err(invalid("sweep.values", "values must be finite"));
            }
        }
        if !(self.verify.lemma_t_end > self.params.t0) {
            return Err(invalid("verify.lemma_t_end", "must exceed params.t0"));
        }
        Ok(())
    }

    /// Checks initial-state dimensions against the loaded instance.
    pub fn validate_for(&self, instance: &ProblemInstance) -> Result<(), ExperimentError> {
        let n = instance.dim_primal();
        let m = instance.dim_dual();
        let mut checks = vec![
            ("initial.x", self.initial.x.len(), n),
            ("initial.v", self.initial.v.len(), n),
            ("initial.lambda", self.initial.lambda.len(), m),
        ];
        if self.system.kind.second_order_dual() {
            checks.push(("initial.lambda_dot", self.initial.lambda_dot.len(), m));
        }
        for (key, got, want) in checks {
            if got != want {
                return Err(invalid(key, format!("expected {want} entries, got {got}")));
            }
        }
        Ok(())
    }

    pub fn he_params(&self) -> HeParams {
        let p = &self.params;
        HeParams {
            alpha: p.alpha,
            theta: p.theta,
            rho: self.heode.rho,
            kappa: self.heode.kappa.unwrap_or(p.q),
            q: p.q,
            s: p.s,
            t0: p.t0,
        }
    }

    /// Parameters the rate theory and the energy are evaluated with.
    pub fn effective_params(&self) -> ParameterSet {
        match self.system.kind {
            SystemKind::Chbani => self.params.chbani_specialization(),
            _ => self.params,
        }
    }

    /// Hash of the canonical document, ignoring where outputs go.
    pub fn run_id(&self) -> String {
        let mut canon = self.clone();
        canon.output.dir.clear();
        let digest = Sha256::digest(canon.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// One spec per (value, system) pair, with the sweep section removed.
    pub fn sweep_cells(&self) -> Result<Vec<(f64, ExperimentSpec)>, ExperimentError> {
        let sweep = self
            .sweep
            .as_ref()
            .ok_or_else(|| invalid("sweep", "no [sweep] section in the config"))?;
        let systems = if sweep.systems.is_empty() {
            vec![self.system.kind]
        } else {
            sweep.systems.clone()
        };
        let mut cells = Vec::with_capacity(sweep.values.len() * systems.len());
        for &v in &sweep.values {
            for &kind in &systems {
                let mut cell = self.clone();
                cell.sweep = None;
                cell.system.kind = kind;
                sweep.axis.apply(&mut cell.params, v);
                for tied in &sweep.tied {
                    tied.apply(&mut cell.params, v);
                }
                cells.push((v, cell));
            }
        }
        Ok(cells)
    }
}

/// Best-effort extraction of the offending key from a deserialization error.
fn error_key(e: &toml::de::Error) -> String {
    let msg = e.message();
    for marker in ["unknown field `", "missing field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "<document>".into()
}

/// Defaults as a TOML document, with the automatic fields listed up front.
pub fn dump_defaults() -> String {
    let mut out = String::from(
        "# Omitted fields that are computed when absent:\n\
         #   integrator.h_init  initial step from the curvature heuristic\n\
         #   integrator.h_max   0.1 * (t_end - t0)\n\
         #   heode.kappa        params.q\n\
         #   run.fit_window     [t_end / 100, t_end]\n\
         #   run.lemma_start    params.t0\n\
         # A [sweep] table (axis, values, tied, systems) turns the document into a sweep.\n\n",
    );
    out.push_str(&toml::to_string(&ExperimentSpec::default()).expect("defaults serialize"));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let spec = ExperimentSpec::from_toml_str(&dump_defaults(), &[]).unwrap();
        assert_eq!(spec, ExperimentSpec::default());
        assert_eq!(ExperimentSpec::from_toml_str("", &[]).unwrap(), spec);
    }

    #[test]
    fn overrides_and_shortcuts() {
        let spec = ExperimentSpec::from_overrides(&[
            "s=0.7".into(),
            "params.p=0.7".into(),
            "run.t_end=100".into(),
            "system.kind=heode".into(),
            "heode.kappa=0.2".into(),
            "s=0.6".into(),
        ])
        .unwrap();
        assert_eq!(spec.params.s, 0.6);
        assert_eq!(spec.params.p, 0.7);
        assert_eq!(spec.run.t_end, 100.0);
        assert_eq!(spec.system.kind, SystemKind::Heode);
        assert_eq!(spec.he_params().kappa, 0.2);
        let spec = ExperimentSpec::from_overrides(&["sweep.axis=s".into(), "sweep.values=[0.1, 0.2]".into()]).unwrap();
        assert_eq!(spec.sweep.unwrap().values, vec![0.1, 0.2]);
    }

    #[test]
    fn invalid_configs_name_the_key() {
        let key_of = |ovs: &[&str]| {
            let ovs: Vec<String> = ovs.iter().map(|s| s.to_string()).collect();
            match ExperimentSpec::from_overrides(&ovs).unwrap_err() {
                ExperimentError::ConfigInvalid { key, message } => (key, message),
                other => panic!("{other:?}"),
            }
        };
        let (key, msg) = key_of(&["p=1.5"]);
        assert_eq!(key, "params");
        assert!(msg.contains('p'), "{msg}");
        assert_eq!(key_of(&["run.samples=3"]).0, "run.samples");
        assert_eq!(key_of(&["run.bogus=3"]).0, "bogus");
        assert_eq!(key_of(&["run.t_end=0.5"]).0, "run.t_end");
        assert_eq!(key_of(&["nonsense"]).0, "nonsense");
        assert_eq!(key_of(&["integrator.rtol=-1"]).0, "integrator");
    }

    #[test]
    fn run_id_ignores_output_dir() {
        let mut a = ExperimentSpec::default();
        let id = a.run_id();
        assert_eq!(id.len(), 16);
        a.output.dir = "elsewhere".into();
        assert_eq!(a.run_id(), id);
        a.params.s = 0.4;
        assert_ne!(a.run_id(), id);
    }

    #[test]
    fn sweep_cells_apply_ties() {
        let spec = ExperimentSpec {
            sweep: Some(SweepSection {
                axis: SweepAxis::S,
                values: vec![0.2, 0.9],
                tied: vec![SweepAxis::P],
                systems: vec![],
            }),
            ..Default::default()
        };
        let cells = spec.sweep_cells().unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!((cells[1].1.params.s, cells[1].1.params.p), (0.9, 0.9));
        assert!(cells[0].1.sweep.is_none());
        assert!(ExperimentSpec::default().sweep_cells().is_err());
    }
}
