//! Scenario files: TOML documents describing one transfer problem.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use impulse_sip::{
    roe_system, ControlWindow, DoubleIntegrator, InputProfile, LtvSystem, NormKind, OdeSystem, RoeModel, SipOptions,
    TransferProblem,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub dynamics: Dynamics,
    pub horizon: Horizon,
    pub boundary: Boundary,
    pub window_plan: WindowPlan,
    #[serde(default, skip_serializing_if = "SolverOverrides::is_empty")]
    pub solver: SolverOverrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Dynamics {
    Roe(RoeDynamics),
    DoubleIntegrator(DoubleIntegratorDynamics),
    /// Constant `A` and `B`, rows listed top to bottom.
    Custom(CustomDynamics),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoeDynamics {
    pub mean_motion: f64,
    #[serde(default)]
    pub u0: f64,
    /// m/s reported per unit of solver input.
    pub impulse_unit: f64,
    /// km per state unit.
    #[serde(default = "one")]
    pub length_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleIntegratorDynamics {
    pub axes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinusoidal: Option<Sinusoid>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomDynamics {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    /// RK4 step for the transition matrix, seconds.
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    #[serde(default)]
    pub t0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tf: Option<f64>,
    /// Horizon length in reference orbits; ROE dynamics only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orbits: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Boundary {
    pub x0: Vec<f64>,
    pub xf: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum WindowPlan {
    Windows(Vec<WindowSpec>),
    Generator(WindowGenerator),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub start: f64,
    pub end: f64,
    pub norm: NormKind,
    /// Absent means uncapped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dv_max: Option<f64>,
    pub grid_count: usize,
}

/// `count` equal segments of the horizon, each window ending `buffer` before
/// its segment does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowGenerator {
    pub count: usize,
    pub buffer: Duration,
    pub norm: NormKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dv_max: Option<f64>,
    pub grid_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Duration {
    Seconds(f64),
    Orbits(f64),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_outer_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feas_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_conic_iters: Option<u32>,
}

impl SolverOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn apply(&self, base: SipOptions) -> SipOptions {
        let mut o = base;
        if let Some(v) = self.epsilon {
            o.epsilon = v;
        }
        if let Some(v) = self.lambda_max {
            o.lambda_max = v;
        }
        if let Some(v) = self.max_outer_iters {
            o.max_outer_iters = v;
        }
        if let Some(v) = self.feas_tol {
            o.tolerances.feas_tol = v;
        }
        if let Some(v) = self.gap_tol {
            o.tolerances.gap_tol = v;
        }
        if let Some(v) = self.max_conic_iters {
            o.tolerances.max_iter = v;
        }
        o
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    /// Uniform trajectory samples per reference orbit (ROE dynamics).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points_per_orbit: Option<usize>,
    /// Uniform trajectory samples over the horizon (other dynamics).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

pub const DEFAULT_POINTS_PER_ORBIT: usize = 200;
pub const DEFAULT_SAMPLES: usize = 201;

/// A scenario turned into a solvable problem plus what reporting needs.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub problem: TransferProblem,
    pub roe: Option<RoeModel>,
    pub impulse_unit: f64,
    pub options: SipOptions,
    pub output_grid: Vec<f64>,
}

impl Scenario {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.into(), source })?;
        Self::parse(&text).map_err(|(field, message)| CliError::Schema { path: path.into(), field, message })
    }

    /// Parses TOML; errors carry the dotted field path.
    pub fn parse(text: &str) -> Result<Self, (String, String)> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            (if field == "." { "<root>".into() } else { field }, e.into_inner().message().to_string())
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenarios always serialize")
    }

    fn roe_model(&self) -> CliResult<Option<RoeModel>> {
        match &self.dynamics {
            Dynamics::Roe(r) => RoeModel::new(r.mean_motion, r.u0, r.length_scale, r.impulse_unit)
                .map(Some)
                .map_err(|e| CliError::scenario("dynamics.roe", e)),
            _ => Ok(None),
        }
    }

    fn system(&self, roe: Option<RoeModel>) -> CliResult<Arc<dyn LtvSystem>> {
        Ok(match &self.dynamics {
            Dynamics::Roe(_) => Arc::new(roe_system(roe.expect("ROE model built for ROE dynamics"))),
            Dynamics::DoubleIntegrator(d) => {
                let profile = match d.sinusoidal {
                    None => InputProfile::Constant,
                    Some(s) => InputProfile::Sinusoidal { amplitude: s.amplitude, frequency: s.frequency },
                };
                Arc::new(
                    DoubleIntegrator::new(d.axes, profile)
                        .map_err(|e| CliError::scenario("dynamics.double_integrator", e))?,
                )
            }
            Dynamics::Custom(c) => {
                let a = dense(&c.a, "dynamics.custom.a")?;
                let b = dense(&c.b, "dynamics.custom.b")?;
                Arc::new(OdeSystem::constant(a, b, c.step).map_err(|e| CliError::scenario("dynamics.custom", e))?)
            }
        })
    }

    fn period(&self, roe: Option<&RoeModel>) -> Option<f64> {
        roe.map(|m| 2.0 * PI / m.mean_motion)
    }

    fn final_time(&self, roe: Option<&RoeModel>) -> CliResult<f64> {
        let h = &self.horizon;
        match (h.tf, h.orbits) {
            (Some(tf), None) => Ok(tf),
            (None, Some(k)) => match self.period(roe) {
                Some(p) => Ok(h.t0 + k * p),
                None => Err(CliError::scenario("horizon.orbits", "orbit counts need ROE dynamics")),
            },
            (Some(_), Some(_)) => Err(CliError::scenario("horizon", "give exactly one of `tf` and `orbits`")),
            (None, None) => Err(CliError::scenario("horizon", "one of `tf` and `orbits` is required")),
        }
    }

    fn windows(&self, t0: f64, tf: f64, roe: Option<&RoeModel>, grid_scale: f64) -> CliResult<Vec<ControlWindow>> {
        // Declared counts below 2 stay invalid; only scaled counts are floored.
        let scaled = |m: usize| if m < 2 { m } else { ((m as f64 * grid_scale).round() as usize).max(2) };
        let cap = |c: Option<f64>| c.unwrap_or(f64::INFINITY);
        match &self.window_plan {
            WindowPlan::Windows(list) => list
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    ControlWindow::new(w.start, w.end, w.norm, cap(w.dv_max), scaled(w.grid_count))
                        .map_err(|e| CliError::scenario(format!("window_plan.windows[{i}]"), e))
                })
                .collect(),
            WindowPlan::Generator(g) => {
                if g.count == 0 {
                    return Err(CliError::scenario("window_plan.generator.count", "must be at least 1"));
                }
                let buffer = match g.buffer {
                    Duration::Seconds(s) => s,
                    Duration::Orbits(k) => match self.period(roe) {
                        Some(p) => k * p,
                        None => {
                            return Err(CliError::scenario(
                                "window_plan.generator.buffer",
                                "orbit-valued buffers need ROE dynamics",
                            ))
                        }
                    },
                };
                let segment = (tf - t0) / g.count as f64;
                if !(buffer >= 0.0 && buffer < segment) {
                    return Err(CliError::scenario(
                        "window_plan.generator.buffer",
                        format!("buffer {buffer} s must lie in [0, {segment}) s"),
                    ));
                }
                (0..g.count)
                    .map(|k| {
                        let start = t0 + k as f64 * segment;
                        let seg_end = if k + 1 == g.count { tf } else { t0 + (k + 1) as f64 * segment };
                        ControlWindow::new(start, seg_end - buffer, g.norm, cap(g.dv_max), scaled(g.grid_count))
                            .map_err(|e| CliError::scenario("window_plan.generator", e))
                    })
                    .collect()
            }
        }
    }

    /// Builds the problem. `grid_scale` multiplies every window's grid count.
    pub fn build(&self, grid_scale: f64) -> CliResult<BuiltScenario> {
        if !(grid_scale.is_finite() && grid_scale > 0.0) {
            return Err(CliError::Usage(format!("grid scale must be positive, got {grid_scale}")));
        }
        let roe = self.roe_model()?;
        let system = self.system(roe)?;
        let t0 = self.horizon.t0;
        let tf = self.final_time(roe.as_ref())?;
        let windows = self.windows(t0, tf, roe.as_ref(), grid_scale)?;
        let problem = TransferProblem::new(
            system,
            t0,
            tf,
            DVector::from_column_slice(&self.boundary.x0),
            DVector::from_column_slice(&self.boundary.xf),
            windows,
        )
        .map_err(|e| CliError::scenario("<problem>", e))?;
        let options = self.solver.apply(SipOptions::default());
        options.validate().map_err(|e| CliError::scenario("solver", e))?;

        let settings = self.output.clone().unwrap_or(OutputSettings { points_per_orbit: None, samples: None });
        let count = match self.period(roe.as_ref()) {
            Some(p) => {
                let per = settings.points_per_orbit.unwrap_or(DEFAULT_POINTS_PER_ORBIT) as f64;
                ((tf - t0) / p * per).ceil() as usize + 1
            }
            None => settings.samples.unwrap_or(DEFAULT_SAMPLES),
        };
        let output_grid = impulse_sip::reconstruction::uniform_output_grid(&problem, count);
        Ok(BuiltScenario {
            problem,
            impulse_unit: roe.map(|m| m.impulse_unit).unwrap_or(1.0),
            roe,
            options,
            output_grid,
        })
    }
}

fn dense(rows: &[Vec<f64>], field: &str) -> CliResult<DMatrix<f64>> {
    let cols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::scenario(field, "matrix rows must be nonempty and equally long"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLANAR: &str = r#"
name = "planar"

[dynamics.roe]
mean_motion = 0.00113
impulse_unit = 1.13

[horizon]
orbits = 4

[boundary]
x0 = [10.0, 100.0, 0.0, 10.0, 0.0, 0.0]
xf = [0.0, 10.0, 0.0, 0.0, 0.0, 0.0]

[window_plan.generator]
count = 8
buffer = { orbits = 0.1 }
norm = "L2"
dv_max = 1.0
grid_count = 1000
"#;

    #[test]
    fn parses_and_round_trips() {
        let s = Scenario::parse(PLANAR).unwrap();
        let again = Scenario::parse(&s.to_toml()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn generator_layout() {
        let built = Scenario::parse(PLANAR).unwrap().build(1.0).unwrap();
        let p = &built.problem;
        let period = 2.0 * PI / 0.00113;
        assert_eq!(p.windows().len(), 8);
        assert!((p.tf() - 4.0 * period).abs() < 1e-9);
        let w = p.windows()[3];
        assert!((w.start - 1.5 * period).abs() < 1e-9);
        assert!((w.end - 1.9 * period).abs() < 1e-9);
        assert_eq!(w.grid_count, 1000);
        assert_eq!(built.output_grid.len(), 801);
        assert_eq!(built.impulse_unit, 1.13);
    }

    #[test]
    fn grid_scale_multiplies_counts() {
        let built = Scenario::parse(PLANAR).unwrap().build(0.25).unwrap();
        assert!(built.problem.windows().iter().all(|w| w.grid_count == 250));
        assert!(Scenario::parse(PLANAR).unwrap().build(0.0).is_err());
    }

    #[test]
    fn schema_errors_name_the_field() {
        let bad = PLANAR.replace("grid_count = 1000", "grid_count = \"many\"");
        let (field, _) = Scenario::parse(&bad).unwrap_err();
        assert_eq!(field, "window_plan.generator.grid_count");
        let unknown = PLANAR.replace("impulse_unit = 1.13", "impulse_unit = 1.13\nmass = 3");
        let (field, message) = Scenario::parse(&unknown).unwrap_err();
        assert!(field.starts_with("dynamics"), "{field}: {message}");
    }

    #[test]
    fn explicit_and_generated_plans_are_exclusive() {
        let both =
            PLANAR.to_string() + "\n[[window_plan.windows]]\nstart = 0.0\nend = 1.0\nnorm = \"L1\"\ngrid_count = 3\n";
        assert!(Scenario::parse(&both).is_err());
    }

    #[test]
    fn horizon_needs_exactly_one_end() {
        let s = Scenario::parse(&PLANAR.replace("orbits = 4", "orbits = 4\ntf = 100.0")).unwrap();
        assert!(matches!(s.build(1.0), Err(CliError::Scenario { .. })));
    }

    #[test]
    fn oversized_buffer_rejected() {
        let s = Scenario::parse(&PLANAR.replace("orbits = 0.1", "orbits = 0.6")).unwrap();
        let err = s.build(1.0).unwrap_err();
        assert!(err.to_string().contains("window_plan.generator.buffer"));
    }

    #[test]
    fn explicit_windows_and_custom_dynamics() {
        let text = r#"
name = "custom"

[dynamics.custom]
a = [[0.0, 1.0], [0.0, 0.0]]
b = [[0.0], [1.0]]
step = 0.01

[horizon]
tf = 10.0

[boundary]
x0 = [0.0, 0.0]
xf = [1.0, 0.0]

[[window_plan.windows]]
start = 0.0
end = 4.0
norm = "L1"
grid_count = 11

[[window_plan.windows]]
start = 5.0
end = 10.0
norm = "LInf"
dv_max = 0.5
grid_count = 11
"#;
        let s = Scenario::parse(text).unwrap();
        assert_eq!(Scenario::parse(&s.to_toml()).unwrap(), s);
        let built = s.build(1.0).unwrap();
        assert!(!built.problem.windows()[0].is_capped());
        assert_eq!(built.problem.windows()[1].dv_max, 0.5);
        assert_eq!(built.output_grid.len(), DEFAULT_SAMPLES);
        assert!(built.roe.is_none());
    }
}
