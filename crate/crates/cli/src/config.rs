//! Declarative run configuration: one TOML file per run, every module-level
//! invariant re-validated at load time with field-precise messages.

use pqlap::error::{Error, Result};
use pqlap::forms::{BoundaryLaw, PdeParams, SourceData};
use pqlap::geometry::{BoundaryLayout, GammaTag, Mesh, ProblemKind, Rect};
use pqlap::solver::{InitialGuess, SolveOptions};
use pqlap::theorems::SweepConfig;
use serde::{Deserialize, Serialize};

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    pub problem: ProblemConfig,
    pub params: PdeParams,
    pub source: SourceConfig,
    pub law: LawConfig,
    pub solve: SolveConfig,
    pub sweep: SweepTable,
    pub verify: VerifyConfig,
    pub control: ControlTable,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub n: usize,
    /// Load a mesh from a `pqmesh` text file instead of building one.
    pub file: Option<String>,
    pub layout: LayoutConfig,
    /// Optional rectangle [x0, x1, y0, y1]; unit square when absent.
    pub rect: Option<[f64; 4]>,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { n: 16, file: None, layout: LayoutConfig::default(), rect: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    pub left: String,
    pub right: String,
    pub bottom: String,
    pub top: String,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            left: "gamma1".into(),
            right: "gamma3".into(),
            bottom: "gamma2".into(),
            top: "gamma2".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    /// "dnd" | "dnn"
    pub kind: String,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig { kind: "dnn".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    /// "zero" | "constant" | "file" | "h0-random"
    pub kind: String,
    pub g: f64,
    pub r: f64,
    pub g_file: Option<String>,
    pub r_file: Option<String>,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig { kind: "zero".into(), g: 0.0, r: 0.0, g_file: None, r_file: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LawConfig {
    /// "power" | "tabulated"
    pub kind: String,
    pub omega: f64,
    pub table_s: Vec<f64>,
    pub table_l: Vec<f64>,
    pub a_l: f64,
    pub b_l: f64,
}

impl Default for LawConfig {
    fn default() -> Self {
        LawConfig { kind: "power".into(), omega: 1.0, table_s: vec![], table_l: vec![], a_l: 0.0, b_l: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Optional row-scaled residual tolerance; see the solver docs.
    pub scaled_tolerance: Option<f64>,
    pub max_halvings: u32,
    pub armijo: f64,
    #[serde(default = "default_true")]
    pub picard_fallback: bool,
    /// "presolve" | "zero"
    pub init: String,
    /// Re-solve at ε/10 and report the V-norm shift in the summary.
    pub epsilon_sensitivity: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            max_iterations: 50,
            tolerance: 1e-10,
            scaled_tolerance: None,
            max_halvings: 30,
            armijo: 1e-4,
            picard_fallback: true,
            init: "presolve".into(),
            epsilon_sensitivity: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepTable {
    pub alphas: Vec<f64>,
    pub comparison_tol: f64,
    pub convergence_tol: Option<f64>,
}

impl Default for SweepTable {
    fn default() -> Self {
        let d = SweepConfig::default();
        SweepTable {
            alphas: d.alphas,
            comparison_tol: d.comparison_tol,
            convergence_tol: d.convergence_tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// "manufactured" | "random"
    pub mode: String,
    pub configs: usize,
    /// Nodewise tolerance for the randomized suite (looser than the solver
    /// tolerance to absorb the ε-regularization bias).
    pub comparison_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { mode: "manufactured".into(), configs: 20, comparison_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlTable {
    /// "dnd" | "dnn"
    pub governed: String,
    /// "state" | "gradient"
    pub target: String,
    /// "zero-solve" | "reachable" | "file"
    pub target_source: String,
    pub target_file: Option<String>,
    /// Constant reference control for reachable targets.
    pub g_tilde: f64,
    pub lambda: f64,
    pub rho: f64,
    pub cells_x: usize,
    pub cells_y: usize,
    pub sign_constrained: bool,
    pub grad_tol: f64,
    pub max_iterations: usize,
    pub fd_step: f64,
    pub starts: usize,
    /// "gd" | "lbfgs"
    pub optimizer: String,
    pub value_tol: f64,
    pub alphas: Vec<f64>,
}

impl Default for ControlTable {
    fn default() -> Self {
        ControlTable {
            governed: "dnd".into(),
            target: "state".into(),
            target_source: "reachable".into(),
            target_file: None,
            g_tilde: -0.5,
            lambda: 1.0,
            rho: 1e-2,
            cells_x: 4,
            cells_y: 4,
            sign_constrained: false,
            grad_tol: 1e-6,
            max_iterations: 200,
            fd_step: 1e-4,
            starts: 3,
            optimizer: "gd".into(),
            value_tol: 1e-3,
            alphas: (0..=4).map(|k| 10f64.powi(k)).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    pub seed: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into(), seed: 42 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn problem_kind(&self) -> Result<ProblemKind> {
        match self.problem.kind.as_str() {
            "dnd" => Ok(ProblemKind::Dnd),
            "dnn" => Ok(ProblemKind::Dnn),
            other => Err(Error::param("problem.kind", format!("expected `dnd` or `dnn`, got `{other}`"))),
        }
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        if let Some(path) = &self.mesh.file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::param("mesh.file", format!("cannot read `{path}`: {e}")))?;
            return Mesh::from_text(&text);
        }
        let layout = BoundaryLayout {
            left: GammaTag::parse(&self.mesh.layout.left)?,
            right: GammaTag::parse(&self.mesh.layout.right)?,
            bottom: GammaTag::parse(&self.mesh.layout.bottom)?,
            top: GammaTag::parse(&self.mesh.layout.top)?,
        };
        match self.mesh.rect {
            Some([x0, x1, y0, y1]) => Mesh::rectangle(self.mesh.n, layout, Rect { x0, x1, y0, y1 }),
            None => Mesh::unit_square(self.mesh.n, layout),
        }
    }

    pub fn build_source(&self, mesh: &Mesh) -> Result<SourceData> {
        match self.source.kind.as_str() {
            "zero" => Ok(SourceData::zeros(mesh)),
            "constant" => {
                let (g, r) = (self.source.g, self.source.r);
                Ok(SourceData::from_fns(mesh, |_, _| g, |_, _| r))
            }
            "h0-random" => {
                let rc = pqlap::theorems::random_h0_config(mesh, self.output.seed);
                Ok(rc.data)
            }
            "file" => {
                let read = |path: &Option<String>, field: &str| -> Result<Vec<f64>> {
                    let path = path.as_ref().ok_or_else(|| {
                        Error::param(field, "source.kind = \"file\" requires this path")
                    })?;
                    read_nodal_file(path, mesh.node_count())
                };
                Ok(SourceData {
                    g: read(&self.source.g_file, "source.g_file")?,
                    r: read(&self.source.r_file, "source.r_file")?,
                })
            }
            other => Err(Error::param(
                "source.kind",
                format!("expected `zero`, `constant`, `file` or `h0-random`, got `{other}`"),
            )),
        }
    }

    pub fn build_law(&self, mesh: &Mesh) -> Result<BoundaryLaw> {
        let law = match self.law.kind.as_str() {
            "power" => BoundaryLaw::power(self.law.omega),
            "tabulated" => BoundaryLaw::tabulated(
                self.law.table_s.clone(),
                self.law.table_l.clone(),
                self.law.a_l,
                self.law.b_l,
                self.law.omega,
            ),
            other => {
                return Err(Error::param(
                    "law.kind",
                    format!("expected `power` or `tabulated`, got `{other}`"),
                ))
            }
        };
        law.validate(self.params.p, self.params.b, mesh)?;
        Ok(law)
    }

    pub fn solve_options(&self) -> Result<SolveOptions> {
        let initial = match self.solve.init.as_str() {
            "presolve" => InitialGuess::LinearPresolve,
            "zero" => InitialGuess::Zero,
            other => {
                return Err(Error::param(
                    "solve.init",
                    format!("expected `presolve` or `zero`, got `{other}`"),
                ))
            }
        };
        let opts = SolveOptions {
            max_iterations: self.solve.max_iterations,
            tolerance: self.solve.tolerance,
            scaled_tolerance: self.solve.scaled_tolerance,
            max_halvings: self.solve.max_halvings,
            armijo: self.solve.armijo,
            picard_fallback: self.solve.picard_fallback,
            initial,
        };
        opts.validate()?;
        Ok(opts)
    }

    pub fn sweep_config(&self) -> Result<SweepConfig> {
        let cfg = SweepConfig {
            alphas: self.sweep.alphas.clone(),
            comparison_tol: self.sweep.comparison_tol,
            convergence_tol: self.sweep.convergence_tol,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every invariant the run will rely on, checked up front.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.problem_kind()?;
        let _ = self.solve_options()?;
        Ok(())
    }
}

/// One float per line, exactly `expected` records.
pub fn read_nodal_file(path: &str, expected: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read `{path}`: {e}")))?;
    let mut out = Vec::with_capacity(expected);
    for (k, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("{path}:{}: bad float `{t}`", k + 1)))?,
        );
    }
    if out.len() != expected {
        return Err(Error::SizeMismatch {
            context: format!("nodal file `{path}`"),
            expected,
            got: out.len(),
        });
    }
    Ok(out)
}
