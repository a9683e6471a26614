//! The three reference experiments on the built-in problem. The same specs
//! ship as TOML files under `configs/`.

use super::{ExperimentSpec, SweepAxis, SweepSection};
use crate::dynamics::SystemKind;

/// Step budget for the stiffest cell (`s = p = 0.9` needs about 2.5e7 steps to 1e4).
pub const EXP1_MAX_STEPS: u64 = 50_000_000;

/// `q = 0`, `s = p` over four values, horizon 1e4.
pub fn exp1() -> ExperimentSpec {
    let mut spec = ExperimentSpec::default();
    spec.params.q = 0.0;
    spec.integrator.max_steps = EXP1_MAX_STEPS;
    spec.sweep = Some(SweepSection {
        axis: SweepAxis::S,
        values: vec![0.2, 0.5, 0.7, 0.9],
        tied: vec![SweepAxis::P],
        systems: vec![],
    });
    spec
}

/// `q = 0.1`, `p = 0.6`, three values of `s`, each run with both flows to 1e3.
pub fn exp2() -> ExperimentSpec {
    let mut spec = ExperimentSpec::default();
    spec.params.q = 0.1;
    spec.params.p = 0.6;
    spec.run.t_end = 1e3;
    spec.sweep = Some(SweepSection {
        axis: SweepAxis::S,
        values: vec![0.15, 0.4, 0.65],
        tied: vec![],
        systems: vec![SystemKind::Main, SystemKind::Heode],
    });
    spec
}

/// `q = 0`, `p = 0.2`, `s` across regimes, horizon 1e4.
pub fn exp3() -> ExperimentSpec {
    let mut spec = ExperimentSpec::default();
    spec.params.q = 0.0;
    spec.params.p = 0.2;
    spec.integrator.max_steps = EXP1_MAX_STEPS;
    spec.sweep = Some(SweepSection {
        axis: SweepAxis::S,
        values: vec![-0.35, 0.35, 0.55, 0.85],
        tied: vec![],
        systems: vec![],
    });
    spec
}

/// Preset by name: `exp1`, `exp2` or `exp3`.
pub fn by_name(name: &str) -> Option<ExperimentSpec> {
    match name {
        "exp1" => Some(exp1()),
        "exp2" => Some(exp2()),
        "exp3" => Some(exp3()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    #[test]
    fn shipped_configs_match_presets() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for name in ["exp1", "exp2", "exp3"] {
            let loaded = ExperimentSpec::load(&dir.join(format!("{name}.toml")), &[]).unwrap();
            assert_eq!(loaded, by_name(name).unwrap(), "{name}");
        }
        assert!(by_name("exp4").is_none());
    }

    #[test]
    fn presets_validate() {
        for spec in [exp1(), exp2(), exp3()] {
            spec.validate().unwrap();
            assert!(spec.sweep_cells().unwrap().len() >= 4);
        }
    }
}
