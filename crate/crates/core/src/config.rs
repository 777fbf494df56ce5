//! Run configuration: one TOML file with the sections `chain`, `control`,
//! `cost`, `grid`, `descent`, `gradcheck` and `output`.
//!
//! ```toml
//! [chain]
//! max_rate = [200, 75]     # one entry per processor
//! velocity = 1.0           # scalar or list
//! length = 1.0             # scalar or list
//! initial_queue = 0.0      # scalar or list (entry 1 must be 0)
//! base_unit = 1.0          # optional common length unit
//!
//! [[chain.initial_density]]
//! processor = 1            # 1-based; knots in local coordinates
//! knots = [0.5]
//! values = [5, 3]
//!
//! [control]
//! horizon = 20.0
//! taus = [5.0, 12.0]
//! levels = [100, 80, 50]
//! tv_budget = 60.0         # optional
//!
//! [cost]
//! alpha1 = 0.5                                 # constant,
//! alpha2 = { knots = [10.0], values = [0, 1] } # step table,
//! psi = { nodes = [[0, 100], [20, 75]] }       # or piecewise-linear nodes
//!
//! [grid]
//! base_dx = 0.02
//! nu = 0
//! nu_list = [0, 1, 2, 3]   # refinement levels for `compare`
//! distance_time = 1.9      # optional, defaults to the horizon
//!
//! [descent]
//! h = 0.02
//! policy = "backtracking"  # or "fixed"
//! patience = 5
//! max_iterations = 200
//!
//! [gradcheck]
//! tolerance = 0.05
//! probe = "forward"        # "backward" or "symmetric"
//!
//! [output]
//! directory = "out"
//! densities = false
//! events = true
//! ```
//!
//! Switching times off the control lattice `dt_1 = dx / v_1` are snapped to
//! the nearest lattice point with a warning.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::func::{LinearFn, Profile, StepFn};
use crate::model::{
    integer_multiple, validate_chain, validate_control, CostSpec, Processor, SupplyChain,
    SwitchingSchedule,
};
use crate::optimize::{DescentConfig, StepPolicy};
use crate::tangent::Probe;
use crate::upwind::{build_grid, Grid};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Broadcast {
    Scalar(f64),
    List(Vec<f64>),
}

impl Broadcast {
    fn expand(&self, n: usize, key: &str) -> Result<Vec<f64>> {
        match self {
            Broadcast::Scalar(x) => Ok(vec![*x; n]),
            Broadcast::List(v) if v.len() == n => Ok(v.clone()),
            Broadcast::List(v) => Err(Error::Config(format!(
                "chain.{key}: expected 1 or {n} entries, got {}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityEntry {
    pub processor: usize,
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub max_rate: Vec<f64>,
    #[serde(default = "one")]
    pub velocity: Broadcast,
    #[serde(default = "one")]
    pub length: Broadcast,
    #[serde(default = "zero")]
    pub initial_queue: Broadcast,
    pub base_unit: Option<f64>,
    #[serde(default)]
    pub initial_density: Vec<DensityEntry>,
}

fn one() -> Broadcast {
    Broadcast::Scalar(1.0)
}

fn zero() -> Broadcast {
    Broadcast::Scalar(0.0)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub horizon: f64,
    #[serde(default)]
    pub taus: Vec<f64>,
    pub levels: Vec<f64>,
    pub tv_budget: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum TableSpec {
    Constant(f64),
    Steps { knots: Vec<f64>, values: Vec<f64> },
    Linear { nodes: Vec<[f64; 2]> },
}

impl TableSpec {
    fn step_fn(&self, key: &str) -> Result<StepFn> {
        match self {
            TableSpec::Constant(c) => Ok(StepFn::constant(*c)),
            TableSpec::Steps { knots, values } => StepFn::new(knots.clone(), values.clone())
                .map_err(|e| Error::Config(format!("cost.{key}: {e}"))),
            TableSpec::Linear { .. } => Err(Error::Config(format!(
                "cost.{key}: weights must be piecewise constant"
            ))),
        }
    }

    fn profile(&self, key: &str) -> Result<Profile> {
        match self {
            TableSpec::Linear { nodes } => {
                LinearFn::new(nodes.iter().map(|n| (n[0], n[1])).collect())
                    .map(Profile::Linear)
                    .map_err(|e| Error::Config(format!("cost.{key}: {e}")))
            }
            other => other.step_fn(key).map(Profile::Steps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(default = "const_one")]
    pub alpha1: TableSpec,
    #[serde(default = "const_zero")]
    pub alpha2: TableSpec,
    #[serde(default = "const_zero")]
    pub psi: TableSpec,
}

fn const_one() -> TableSpec {
    TableSpec::Constant(1.0)
}

fn const_zero() -> TableSpec {
    TableSpec::Constant(0.0)
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            alpha1: const_one(),
            alpha2: const_zero(),
            psi: const_zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub base_dx: f64,
    #[serde(default)]
    pub nu: u32,
    pub nu_list: Option<Vec<u32>>,
    pub distance_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescentSection {
    pub h: f64,
    pub policy: StepPolicy,
    pub patience: usize,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for DescentSection {
    fn default() -> Self {
        let d = DescentConfig::default();
        Self {
            h: d.h,
            policy: d.policy,
            patience: d.patience,
            max_iterations: d.max_iterations,
            max_halvings: d.max_halvings,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeSetting {
    #[default]
    Forward,
    Backward,
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub tolerance: f64,
    pub probe: ProbeSetting,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            tolerance: 0.05,
            probe: ProbeSetting::Forward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: Option<String>,
    pub densities: bool,
    pub events: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: None,
            densities: false,
            events: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub chain: ChainSection,
    pub control: ControlSection,
    #[serde(default)]
    pub cost: CostSection,
    pub grid: GridSection,
    #[serde(default)]
    pub descent: DescentSection,
    #[serde(default)]
    pub gradcheck: GradcheckSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Fully built inputs of a run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub chain: SupplyChain,
    pub schedule: SwitchingSchedule,
    pub cost: CostSpec,
    pub grid: Grid,
    pub descent: DescentConfig,
    pub warnings: Vec<String>,
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `section.key=value` to a parsed document.
fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override key `{path}` is malformed")));
    }
    let mut table = doc;
    for key in &keys[..keys.len() - 1] {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{key}` is not a section")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return toml::from_str(text).map_err(|e| Error::Config(e.to_string()));
        }
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        doc.try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("after overrides: {e}")))
    }

    pub fn chain(&self) -> Result<SupplyChain> {
        let c = &self.chain;
        let p = c.max_rate.len();
        if p == 0 {
            return Err(Error::Config(
                "chain.max_rate must list at least one processor".into(),
            ));
        }
        let velocity = c.velocity.expand(p, "velocity")?;
        let length = c.length.expand(p, "length")?;
        let queues = c.initial_queue.expand(p, "initial_queue")?;
        let processors: Vec<Processor> = (0..p)
            .map(|j| Processor::new(length[j], velocity[j], c.max_rate[j]))
            .collect();
        let mut density = vec![StepFn::constant(0.0); p];
        for entry in &c.initial_density {
            if entry.processor == 0 || entry.processor > p {
                return Err(Error::Config(format!(
                    "chain.initial_density: processor {} out of 1..={p}",
                    entry.processor
                )));
            }
            density[entry.processor - 1] = StepFn::new(entry.knots.clone(), entry.values.clone())
                .map_err(|e| {
                Error::Config(format!(
                    "chain.initial_density (processor {}): {e}",
                    entry.processor
                ))
            })?;
        }
        let chain = SupplyChain::new(processors, density, queues, c.base_unit)?;
        validate_chain(&chain).into_result()?;
        Ok(chain)
    }

    pub fn cost_spec(&self) -> Result<CostSpec> {
        CostSpec::new(
            self.cost.alpha1.step_fn("alpha1")?,
            self.cost.alpha2.step_fn("alpha2")?,
            self.cost.psi.profile("psi")?,
            self.control.horizon,
        )
    }

    pub fn descent_config(&self) -> DescentConfig {
        let d = &self.descent;
        DescentConfig {
            h: d.h,
            patience: d.patience,
            max_iterations: d.max_iterations,
            policy: d.policy,
            max_halvings: d.max_halvings,
        }
    }

    pub fn probe(&self) -> Probe {
        match self.gradcheck.probe {
            ProbeSetting::Forward => Probe::Forward,
            ProbeSetting::Backward => Probe::Backward,
            ProbeSetting::Symmetric => Probe::Symmetric,
        }
    }

    /// Builds and validates everything; `nu` overrides `grid.nu`. Switching
    /// times are quantized on the coarsest level in use so that every finer
    /// level sees the same control.
    pub fn scenario(&self, nu: Option<u32>) -> Result<Scenario> {
        let chain = self.chain()?;
        let horizon = self.control.horizon;
        let nu = nu.unwrap_or(self.grid.nu);
        let grid = build_grid(&chain, self.grid.base_dx, nu, horizon)?;
        let coarsest = self
            .grid
            .nu_list
            .iter()
            .flatten()
            .copied()
            .chain(std::iter::once(self.grid.nu))
            .min()
            .unwrap_or(nu)
            .min(nu);
        let coarse = build_grid(&chain, self.grid.base_dx, coarsest, horizon)?;
        let dq = coarse.quantum();
        if integer_multiple(horizon, dq).is_none() {
            return Err(Error::Config(format!(
                "control.horizon {horizon} is not a multiple of the control step {dq}"
            )));
        }
        let mut warnings = Vec::new();
        let mut steps = Vec::with_capacity(self.control.taus.len());
        for (k, &tau) in self.control.taus.iter().enumerate() {
            let snapped = (tau / dq).round();
            if integer_multiple(tau, dq).is_none() {
                warnings.push(format!(
                    "control.taus[{}] = {} is off the {} lattice; snapped to {}",
                    k + 1,
                    tau,
                    dq,
                    crate::report::fmt_num(snapped * dq)
                ));
            }
            steps.push(snapped as i64);
        }
        let factor = (dq / grid.quantum()).round() as i64;
        let schedule = SwitchingSchedule::new(horizon, dq, steps, self.control.levels.clone())
            .map_err(|e| Error::Config(format!("control: {e}")))?
            .refined(factor);
        validate_control(&schedule.control()?, &chain, self.control.tv_budget)?;
        let cost = self.cost_spec()?;
        Ok(Scenario {
            chain,
            schedule,
            cost,
            grid,
            descent: self.descent_config(),
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_ARC: &str = r#"
[chain]
max_rate = [200, 75]
base_unit = 1.0

[control]
horizon = 20.0
taus = [5.0, 12.0]
levels = [100, 80, 50]

[cost]
alpha1 = 0.5
alpha2 = 0.5
psi = { knots = [10.0], values = [100, 75] }

[grid]
base_dx = 0.02
"#;

    #[test]
    fn parses_and_builds() {
        let cfg = RunConfig::parse(TWO_ARC, &[]).unwrap();
        let s = cfg.scenario(None).unwrap();
        assert_eq!(s.chain.len(), 2);
        assert_eq!(s.schedule.steps(), &[250, 600]);
        assert_eq!(s.cost.psi.value(12.0), 75.0);
        assert!(s.warnings.is_empty());
        assert_eq!(s.descent, DescentConfig::default());
    }

    #[test]
    fn overrides_replace_values() {
        let cfg = RunConfig::parse(
            TWO_ARC,
            &[
                "control.taus=[4.0, 12.0]".into(),
                "descent.policy=fixed".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.control.taus, vec![4.0, 12.0]);
        assert_eq!(cfg.descent.policy, StepPolicy::Fixed);
        assert!(RunConfig::parse(TWO_ARC, &["nonsense".into()]).is_err());
    }

    #[test]
    fn off_lattice_taus_are_snapped_with_a_warning() {
        let cfg = RunConfig::parse(TWO_ARC, &["control.taus=[5.003, 12.0]".into()]).unwrap();
        let s = cfg.scenario(None).unwrap();
        assert_eq!(s.schedule.steps(), &[250, 600]);
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn errors_name_the_line() {
        let broken = TWO_ARC.replace("levels = [100, 80, 50]", "levels = [100, 80,");
        let err = RunConfig::parse(&broken, &[]).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
        let unknown = TWO_ARC.replace("base_unit", "base_unt");
        assert!(RunConfig::parse(&unknown, &[]).is_err());
    }

    #[test]
    fn invalid_chains_are_rejected() {
        let cfg = RunConfig::parse(TWO_ARC, &["chain.initial_queue=[1.0, 0.0]".into()]).unwrap();
        assert!(cfg.scenario(None).is_err());
        let cfg = RunConfig::parse(TWO_ARC, &["control.levels=[300, 80, 50]".into()]).unwrap();
        assert!(cfg.scenario(None).is_err());
    }

    #[test]
    fn refinement_keeps_the_coarse_control() {
        let cfg = RunConfig::parse(TWO_ARC, &["grid.nu_list=[0, 1, 2]".into()]).unwrap();
        let s = cfg.scenario(Some(2)).unwrap();
        assert_eq!(s.schedule.steps(), &[1000, 2400]);
        assert!((s.schedule.quantum() - 0.005).abs() < 1e-15);
    }
}
