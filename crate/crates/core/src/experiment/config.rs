use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use crate::catalog::{chart_by_id, perturbed_from_fields, FinslerChart};
use crate::error::{DixError, Result};
use crate::inverse::{I0Estimator, MarchOptions, ThirdDerivativeStencil};

/// Scales every report tolerance: `tight` by 0.1, `loose` by 10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ToleranceProfile {
    Tight,
    #[default]
    Default,
    Loose,
}

impl ToleranceProfile {
    pub fn scale(self) -> f64 {
        match self {
            Self::Tight => 0.1,
            Self::Default => 1.0,
            Self::Loose => 10.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Tight => "tight",
            Self::Default => "default",
            Self::Loose => "loose",
        }
    }
}

impl FromStr for ToleranceProfile {
    type Err = DixError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tight" => Ok(Self::Tight),
            "default" => Ok(Self::Default),
            "loose" => Ok(Self::Loose),
            other => Err(DixError::Config(format!("unknown tolerance profile '{other}' (tight, default, loose)"))),
        }
    }
}

/// Report thresholds. Slope and exactness checks do not scale with the profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Absolute curvature error on flat cases.
    pub flat: f64,
    /// Relative curvature error otherwise.
    pub relative: f64,
    /// `| |r − t| − true | ` for detected conjugate pairs.
    pub conjugate: f64,
    pub diagonal: f64,
    pub riccati: f64,
    /// Minimum log-log slope of the `k` remainder.
    pub k_slope: f64,
    pub q_reference: f64,
    pub q_invariance: f64,
    pub metric: f64,
    pub gauge: f64,
    pub stability: f64,
}

impl Tolerances {
    pub fn for_profile(profile: ToleranceProfile) -> Self {
        let s = profile.scale();
        Self {
            flat: 1e-6 * s,
            relative: 1e-3 * s,
            conjugate: 1e-3 * s,
            diagonal: 5e-3 * s,
            riccati: 1e-4 * s,
            k_slope: 3.9,
            q_reference: 1e-12,
            q_invariance: 1e-10,
            metric: 1e-3 * s,
            gauge: 1e-8 * s,
            stability: 1e-4 * s,
        }
    }
}

/// One experiment: a geodesic in a catalog chart, the data grid around it
/// and the solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub chart_id: String,
    /// Perturbation size for `randers-perturbed-*` charts.
    pub perturbation: Option<f64>,
    pub b_field: Option<String>,
    pub w_field: Option<String>,
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
    pub epsilon: f64,
    pub horizon: f64,
    pub step: f64,
    pub strict_data: bool,
    pub estimator: I0Estimator,
    pub march: MarchOptions,
    /// Run the gauge and block-halving checks after the inversion.
    pub self_checks: bool,
    /// Geodesic radius of the sphere used for metric recovery.
    pub metric_radius: f64,
    pub profile: ToleranceProfile,
}

fn dim_of(chart_id: &str) -> Result<usize> {
    chart_id
        .rsplit('-')
        .next()
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| DixError::Config(format!("chart id '{chart_id}' does not end in a dimension")))
}

impl ExperimentConfig {
    /// Default experiment for a catalog chart.
    pub fn for_chart(chart_id: &str) -> Result<Self> {
        let n = dim_of(chart_id)?;
        let mut x0 = vec![0.0; n];
        let mut v0 = vec![0.0; n];
        v0[0] = 1.0;
        let mut horizon = 5.0;
        if chart_id.starts_with("sphere") {
            x0[0] = 0.6;
            v0[0] = 0.0;
            v0[1] = 1.0;
        } else if chart_id.starts_with("randers-flat") {
            v0[1] = 0.5;
        } else if chart_id.starts_with("randers-perturbed") {
            x0[0] = 0.3;
            x0[1] = -0.2;
            v0[1] = 0.3;
            horizon = 3.0;
        }
        let epsilon = 0.5;
        Ok(Self {
            name: chart_id.to_string(),
            chart_id: chart_id.to_string(),
            perturbation: None,
            b_field: None,
            w_field: None,
            x0,
            v0,
            epsilon,
            horizon,
            step: epsilon / 64.0,
            strict_data: false,
            estimator: I0Estimator::Riccati,
            march: MarchOptions::default(),
            self_checks: true,
            metric_radius: 1.0,
            profile: ToleranceProfile::Default,
        })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances::for_profile(self.profile)
    }

    /// Resolves the chart, applying any perturbation overrides.
    pub fn chart(&self) -> Result<Arc<dyn FinslerChart<f64>>> {
        let custom = self.perturbation.is_some() || self.b_field.is_some() || self.w_field.is_some();
        if self.chart_id.starts_with("randers-perturbed") && custom {
            let chart = perturbed_from_fields(
                self.dim(),
                self.perturbation,
                self.b_field.as_deref(),
                self.w_field.as_deref(),
            )?;
            return Ok(Arc::new(chart));
        }
        if custom {
            return Err(DixError::Config(format!("perturbation fields only apply to randers-perturbed charts, not {}", self.chart_id)));
        }
        chart_by_id(&self.chart_id)
    }

    /// Parses `key = value` lines grouped under `[section]` headers.
    ///
    /// Sections: `[chart]` (id, perturbation, b_field, w_field), `[geodesic]`
    /// (x0, v0), `[data]` (epsilon, horizon, step, strict), `[solver]`
    /// (estimator, initial_steps, min_steps, tolerance, max_iterations,
    /// self_checks), `[metric]` (radius), `[report]` (name, profile).
    /// Anything omitted takes the catalog default for the chart.
    pub fn parse(text: &str) -> Result<Self> {
        let entries = parse_entries(text)?;
        let (chart_id, _) = entries
            .get("chart.id")
            .ok_or_else(|| DixError::Parse { line: 0, message: "missing required key 'id' in section [chart]".into() })?;
        let mut cfg = Self::for_chart(chart_id)?;
        let n = cfg.dim();
        let mut lines = BTreeMap::new();
        for (key, (value, line)) in &entries {
            let line = *line;
            lines.insert(key.as_str(), line);
            let err = |message: String| DixError::Parse { line, message };
            let float = || value.parse::<f64>().map_err(|_| err(format!("'{key}' expects a number, found '{value}'")));
            let count = || value.parse::<usize>().map_err(|_| err(format!("'{key}' expects a count, found '{value}'")));
            let flag = || match value.as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(err(format!("'{key}' expects true or false, found '{value}'"))),
            };
            let vector = || -> Result<Vec<f64>> {
                let v = value
                    .split(',')
                    .map(|c| c.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| err(format!("'{key}' expects comma-separated numbers, found '{value}'")))?;
                if v.len() != n {
                    return Err(err(format!("'{key}' needs {n} components for {}, found {}", cfg.chart_id, v.len())));
                }
                Ok(v)
            };
            match key.as_str() {
                "chart.id" => {}
                "chart.perturbation" => cfg.perturbation = Some(float()?),
                "chart.b_field" => cfg.b_field = Some(value.clone()),
                "chart.w_field" => cfg.w_field = Some(value.clone()),
                "geodesic.x0" => cfg.x0 = vector()?,
                "geodesic.v0" => cfg.v0 = vector()?,
                "data.epsilon" => cfg.epsilon = float()?,
                "data.horizon" => cfg.horizon = float()?,
                "data.step" => cfg.step = float()?,
                "data.strict" => cfg.strict_data = flag()?,
                "solver.estimator" => {
                    cfg.estimator = match value.as_str() {
                        "riccati" => I0Estimator::Riccati,
                        "diagonal" => I0Estimator::Diagonal(ThirdDerivativeStencil::Richardson),
                        "diagonal-onesided" => I0Estimator::Diagonal(ThirdDerivativeStencil::OneSided5),
                        _ => return Err(err(format!("unknown estimator '{value}' (riccati, diagonal, diagonal-onesided)"))),
                    }
                }
                "solver.initial_steps" => cfg.march.initial_steps = Some(count()?),
                "solver.min_steps" => cfg.march.min_steps = count()?,
                "solver.tolerance" => cfg.march.tolerance = float()?,
                "solver.max_iterations" => cfg.march.max_iterations = count()?,
                "solver.self_checks" => cfg.self_checks = flag()?,
                "metric.radius" => cfg.metric_radius = float()?,
                "report.name" => cfg.name = value.clone(),
                "report.profile" => cfg.profile = value.parse().map_err(|e: DixError| err(e.to_string()))?,
                _ => return Err(err(format!("unknown key '{key}'"))),
            }
        }
        cfg.validate_with(|key| lines.get(key).copied().unwrap_or(0))?;
        Ok(cfg)
    }

    /// Checks the grid constraints; errors carry no line number.
    pub fn validate(&self) -> Result<()> {
        self.validate_with(|_| 0)
    }

    fn validate_with(&self, line_of: impl Fn(&str) -> usize) -> Result<()> {
        let fail = |key: &str, message: String| Err(DixError::Parse { line: line_of(key), message });
        if self.x0.len() != self.v0.len() {
            return fail("geodesic.v0", "x0 and v0 have different lengths".into());
        }
        if !(self.epsilon > 0.0) {
            return fail("data.epsilon", format!("epsilon = {} must be positive", self.epsilon));
        }
        if self.epsilon >= self.horizon {
            return fail(
                "data.epsilon",
                format!("epsilon = {} must be smaller than the horizon T = {}", self.epsilon, self.horizon),
            );
        }
        if !(self.step > 0.0) || self.step > self.epsilon / 8.0 {
            return fail("data.step", format!("step = {} must lie in (0, epsilon/8]", self.step));
        }
        let multiple = |x: f64| ((x / self.step) - (x / self.step).round()).abs() < 1e-9;
        if !multiple(self.epsilon) || !multiple(self.horizon) {
            return fail("data.step", "epsilon and horizon must be integer multiples of the step".into());
        }
        if !(self.metric_radius > 0.0 && self.metric_radius < self.horizon) || !multiple(self.metric_radius) {
            return fail(
                "metric.radius",
                format!("metric radius {} must be a step multiple in (0, T)", self.metric_radius),
            );
        }
        if self.march.min_steps == 0 || self.march.max_iterations == 0 || !(self.march.tolerance > 0.0) {
            return fail("solver.tolerance", "solver tolerance, min_steps and max_iterations must be positive".into());
        }
        Ok(())
    }

    /// The configuration in the format read by [`ExperimentConfig::parse`].
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "[chart]\nid = {}", self.chart_id);
        if let Some(p) = self.perturbation {
            let _ = writeln!(s, "perturbation = {p}");
        }
        for (k, v) in [("b_field", &self.b_field), ("w_field", &self.w_field)] {
            if let Some(v) = v {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        let _ = writeln!(s, "\n[geodesic]\nx0 = {}\nv0 = {}", join(&self.x0), join(&self.v0));
        let _ = writeln!(
            s,
            "\n[data]\nepsilon = {}\nhorizon = {}\nstep = {}\nstrict = {}",
            self.epsilon, self.horizon, self.step, self.strict_data
        );
        let estimator = match self.estimator {
            I0Estimator::Riccati => "riccati",
            I0Estimator::Diagonal(ThirdDerivativeStencil::Richardson) => "diagonal",
            I0Estimator::Diagonal(ThirdDerivativeStencil::OneSided5) => "diagonal-onesided",
        };
        let _ = writeln!(s, "\n[solver]\nestimator = {estimator}");
        if let Some(k) = self.march.initial_steps {
            let _ = writeln!(s, "initial_steps = {k}");
        }
        let _ = writeln!(
            s,
            "min_steps = {}\ntolerance = {:e}\nmax_iterations = {}\nself_checks = {}",
            self.march.min_steps, self.march.tolerance, self.march.max_iterations, self.self_checks
        );
        let _ = writeln!(s, "\n[metric]\nradius = {}", self.metric_radius);
        let _ = writeln!(s, "\n[report]\nname = {}\nprofile = {}", self.name, self.profile.name());
        s
    }
}

/// `section.key → (value, line)`. `#` starts a comment anywhere, `;` only at the
/// start of a line since it also separates `b_field` components.
fn parse_entries(text: &str) -> Result<BTreeMap<String, (String, usize)>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            section = rest
                .strip_suffix(']')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| DixError::Parse { line: line_no, message: format!("malformed section header '{line}'") })?;
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| DixError::Parse { line: line_no, message: format!("expected 'key = value', found '{line}'") })?;
        if section.is_empty() {
            return Err(DixError::Parse { line: line_no, message: "key outside of any [section]".into() });
        }
        let full = format!("{section}.{}", key.trim());
        if let Some((_, first)) = out.insert(full.clone(), (value.trim().to_string(), line_no)) {
            return Err(DixError::Parse { line: line_no, message: format!("'{full}' already set on line {first}") });
        }
    }
    Ok(out)
}
