//! The six workflows behind the subcommands. Every run writes its artifacts
//! under the output directory; CSVs carry the config hash and seed so reruns
//! are attributable and byte-comparable.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pqlap::control::{ControlGrid, ControlProblem, ControlSetup, Governed, OptimizerKind, TargetKind, Verdict};
use pqlap::error::{Error, Result};
use pqlap::forms::{energy, norm_v, Field, SourceData};
use pqlap::geometry::{GammaTag, Mesh, ProblemKind};
use pqlap::output::{fmt_f64, write_csv, RunMeta};
use pqlap::solver::{epsilon_sensitivity, solve_dnd, solve_dnn, SolveReport};
use pqlap::theorems::{run_alpha_sweep, run_random_suite, SweepConfig, TheoremReport};

use crate::config::{read_nodal_file, RunConfig};

pub struct Ctx {
    pub config: RunConfig,
    pub meta: RunMeta,
    pub out_dir: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        std::fs::write(self.path(name), text)?;
        Ok(())
    }
}

fn write_solve_log(ctx: &Ctx, name: &str, report: &SolveReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(ctx.path(name))?);
    w.write_all(report.log_csv().as_bytes())?;
    pqlap::output::append_meta(&mut w, &ctx.meta)?;
    Ok(())
}

fn write_nodal(ctx: &Ctx, name: &str, values: &[f64]) -> Result<()> {
    let mut s = String::new();
    for v in values {
        s.push_str(&fmt_f64(*v));
        s.push('\n');
    }
    ctx.write_text(name, &s)
}

pub fn cmd_solve(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.config;
    cfg.validate()?;
    let mesh = cfg.build_mesh()?;
    let data = cfg.build_source(&mesh)?;
    let opts = cfg.solve_options()?;
    let kind = cfg.problem_kind()?;
    let law = cfg.build_law(&mesh)?;
    let params = cfg.params;

    let solved = match kind {
        ProblemKind::Dnn => solve_dnn(&params, &data, &law, &mesh, &opts),
        ProblemKind::Dnd => solve_dnd(&params, &data, Some(&law), &mesh, &opts),
    };
    let (u, report) = match solved {
        Ok(x) => x,
        Err(Error::NonConvergence { report }) => {
            write_solve_log(ctx, "solve_log.csv", &report)?;
            return Err(Error::NonConvergence { report });
        }
        Err(e) => return Err(e),
    };

    write_nodal(ctx, "solution.txt", &u.values)?;
    write_solve_log(ctx, "solve_log.csv", &report)?;
    let vnorm = norm_v(&u.values, params.p, &mesh);
    let e = energy(&u, &params, &data, Some(&law), &mesh, kind)?;
    let mut summary = format!(
        "kind={:?}\nnodes={}\nconverged={}\niterations={}\nfinal_residual={}\nv_norm={}\nenergy={}\nwall_time_s={:.3}\n",
        kind,
        mesh.node_count(),
        report.converged,
        report.iterations,
        fmt_f64(report.final_residual),
        fmt_f64(vnorm),
        fmt_f64(e),
        report.wall_time,
    );
    if cfg.solve.epsilon_sensitivity {
        let s = epsilon_sensitivity(kind, &params, &data, Some(&law), &mesh, &opts)?;
        summary.push_str(&format!("epsilon_sensitivity_vnorm={}\n", fmt_f64(s)));
    }
    ctx.write_text("summary.txt", &summary)?;
    println!(
        "solve: converged in {} iterations, V-norm {:.6e}, energy {:.6e}",
        report.iterations, vnorm, e
    );
    Ok(())
}

fn print_report(label: &str, report: &TheoremReport) {
    for c in &report.checks {
        println!(
            "{label} {}: {:?} (violation {:.3e}{})",
            c.name,
            c.status,
            c.violation,
            c.location.map(|n| format!(" at node {n}")).unwrap_or_default()
        );
    }
}

pub fn cmd_verify(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.config;
    cfg.validate()?;
    let mesh = cfg.build_mesh()?;
    let opts = cfg.solve_options()?;
    match cfg.verify.mode.as_str() {
        "manufactured" => {
            let data = cfg.build_source(&mesh)?;
            let law = cfg.build_law(&mesh)?;
            let sweep = cfg.sweep_config()?;
            let report = run_alpha_sweep(&cfg.params, &data, &law, &mesh, &sweep, &opts)?;
            let mut w = BufWriter::new(File::create(ctx.path("sweep.csv"))?);
            report.write_sweep_csv(&mut w, &ctx.meta)?;
            ctx.write_text("assertions.json", &report.to_json())?;
            print_report("verify", &report);
            if report.all_passed() {
                Ok(())
            } else {
                Err(Error::Control("a verification assertion failed".into()))
            }
        }
        "random" => {
            let sweep = SweepConfig {
                alphas: cfg.sweep.alphas.clone(),
                comparison_tol: cfg.verify.comparison_tol,
                convergence_tol: None,
            };
            sweep.validate()?;
            let suite = run_random_suite(&mesh, cfg.verify.configs, cfg.output.seed, &sweep, &opts)?;
            let mut all = true;
            let mut json = String::from("[\n");
            for (k, (seed, report)) in suite.iter().enumerate() {
                let mut w = BufWriter::new(File::create(ctx.path(&format!("sweep_cfg{k:02}.csv")))?);
                report.write_sweep_csv(&mut w, &ctx.meta)?;
                print_report(&format!("verify cfg{k:02} (seed {seed})"), report);
                all &= report.all_passed();
                json.push_str(&report.to_json());
                json.push_str(if k + 1 < suite.len() { ",\n" } else { "\n" });
            }
            json.push_str("]\n");
            ctx.write_text("assertions.json", &json)?;
            if all {
                Ok(())
            } else {
                Err(Error::Control("a randomized verification assertion failed".into()))
            }
        }
        other => Err(Error::param("verify.mode", format!("expected `manufactured` or `random`, got `{other}`"))),
    }
}

pub fn cmd_sweep(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.config;
    cfg.validate()?;
    let mesh = cfg.build_mesh()?;
    let data = cfg.build_source(&mesh)?;
    let law = cfg.build_law(&mesh)?;
    let sweep = cfg.sweep_config()?;
    let opts = cfg.solve_options()?;
    let report = run_alpha_sweep(&cfg.params, &data, &law, &mesh, &sweep, &opts)?;
    let mut w = BufWriter::new(File::create(ctx.path("sweep.csv"))?);
    report.write_sweep_csv(&mut w, &ctx.meta)?;
    ctx.write_text("assertions.json", &report.to_json())?;
    print_report("sweep", &report);
    if report.find("solver_convergence").is_some() {
        return Err(Error::Control("a sweep member solve failed".into()));
    }
    Ok(())
}

struct ControlPieces {
    setup: ControlSetup,
    base_r: Vec<f64>,
}

fn build_control(cfg: &RunConfig, mesh: &Mesh) -> Result<ControlPieces> {
    let c = &cfg.control;
    let grid = ControlGrid::new(c.cells_x, c.cells_y, mesh);
    let base = cfg.build_source(mesh)?;
    let opts = cfg.solve_options()?;

    let reference_state = |g_const: f64| -> Result<Field> {
        let data = SourceData {
            g: vec![g_const; mesh.node_count()],
            r: base.r.clone(),
        };
        let law = cfg.build_law(mesh)?;
        let (u, _) = solve_dnd(&cfg.params, &data, Some(&law), mesh, &opts)?;
        Ok(u)
    };

    let target = match (c.target.as_str(), c.target_source.as_str()) {
        ("state", "zero-solve") => TargetKind::State(reference_state(0.0)?.values),
        ("state", "reachable") => TargetKind::State(reference_state(c.g_tilde)?.values),
        ("state", "file") => {
            let path = c.target_file.as_ref().ok_or_else(|| {
                Error::param("control.target_file", "target_source = \"file\" requires a path")
            })?;
            TargetKind::State(read_nodal_file(path, mesh.node_count())?)
        }
        ("gradient", src) => {
            let u = match src {
                "zero-solve" => reference_state(0.0)?,
                "reachable" => reference_state(c.g_tilde)?,
                "file" => {
                    let path = c.target_file.as_ref().ok_or_else(|| {
                        Error::param("control.target_file", "target_source = \"file\" requires a path")
                    })?;
                    Field {
                        values: read_nodal_file(path, mesh.node_count())?,
                        kind: ProblemKind::Dnd,
                    }
                }
                other => {
                    return Err(Error::param(
                        "control.target_source",
                        format!("expected `zero-solve`, `reachable` or `file`, got `{other}`"),
                    ))
                }
            };
            TargetKind::Gradient(pqlap::forms::triangle_gradients(&u.values, mesh)?)
        }
        (other, _) => {
            return Err(Error::param(
                "control.target",
                format!("expected `state` or `gradient`, got `{other}`"),
            ))
        }
    };

    let optimizer = match c.optimizer.as_str() {
        "gd" => OptimizerKind::Gd,
        "lbfgs" => OptimizerKind::Lbfgs,
        other => {
            return Err(Error::param(
                "control.optimizer",
                format!("expected `gd` or `lbfgs`, got `{other}`"),
            ))
        }
    };
    let mut setup = ControlSetup::new(target, c.lambda, c.rho, grid);
    setup.sign_constrained = c.sign_constrained;
    setup.grad_tol = c.grad_tol;
    setup.max_iterations = c.max_iterations;
    setup.fd_step = c.fd_step;
    setup.starts = c.starts;
    setup.optimizer = optimizer;
    setup.value_tol = c.value_tol;
    setup.validate(mesh)?;
    Ok(ControlPieces { setup, base_r: base.r })
}

pub fn cmd_control(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.config;
    cfg.validate()?;
    let mesh = cfg.build_mesh()?;
    let law = cfg.build_law(&mesh)?;
    let opts = cfg.solve_options()?;
    let pieces = build_control(cfg, &mesh)?;
    let problem = ControlProblem::new(&pieces.setup, &cfg.params, &pieces.base_r, &law, &mesh, &opts)?;
    let governed = match cfg.control.governed.as_str() {
        "dnd" => Governed::Dnd,
        "dnn" => Governed::Dnn { alpha: cfg.params.alpha },
        other => {
            return Err(Error::param(
                "control.governed",
                format!("expected `dnd` or `dnn`, got `{other}`"),
            ))
        }
    };
    let (best, dispersion) = problem.optimize_multistart(governed, cfg.output.seed, None)?;

    let mut w = BufWriter::new(File::create(ctx.path("optimizer_log.csv"))?);
    write_csv(
        &mut w,
        "iter,cost",
        best.cost_history.iter().enumerate().map(|(k, c)| format!("{k},{}", fmt_f64(*c))),
        &ctx.meta,
    )?;
    write_nodal(ctx, "control.txt", &best.control)?;
    write_nodal(ctx, "state.txt", &best.state.values)?;
    let summary = format!(
        "value={}\niterations={}\ngrad_norm={}\nstationary={}\ndispersion={}\n",
        fmt_f64(best.value),
        best.iterations,
        fmt_f64(best.grad_norm),
        best.stationary,
        fmt_f64(dispersion),
    );
    ctx.write_text("control_summary.txt", &summary)?;
    println!(
        "control: value {:.6e} after {} iterations (grad norm {:.3e}, stationary: {})",
        best.value, best.iterations, best.grad_norm, best.stationary
    );
    if best.stationary {
        Ok(())
    } else {
        Err(Error::Control("optimizer returned a non-stationary point".into()))
    }
}

pub fn cmd_asymptotics(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.config;
    cfg.validate()?;
    let mesh = cfg.build_mesh()?;
    let law = cfg.build_law(&mesh)?;
    let opts = cfg.solve_options()?;
    let pieces = build_control(cfg, &mesh)?;
    let problem = ControlProblem::new(&pieces.setup, &cfg.params, &pieces.base_r, &law, &mesh, &opts)?;
    let report = problem.alpha_asymptotics(&cfg.control.alphas, cfg.output.seed)?;
    let mut w = BufWriter::new(File::create(ctx.path("asymptotics.csv"))?);
    report.write_csv(&mut w, &ctx.meta)?;
    ctx.write_text("asymptotics.json", &report.to_json())?;
    println!("asymptotics: J_inf = {:.6e}, verdict {:?}", report.j_inf, report.verdict);
    match report.verdict {
        Verdict::Consistent => Ok(()),
        Verdict::Inconclusive(reason) => Err(Error::Control(format!("asymptotics inconclusive: {reason}"))),
    }
}

pub fn cmd_mesh_info(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.config;
    let mesh = cfg.build_mesh()?;
    mesh.validate()?;
    let (amin, amax) = mesh.angle_stats();
    println!("nodes: {}", mesh.node_count());
    println!("triangles: {}", mesh.triangles.len());
    println!("boundary edges: {}", mesh.boundary_edges.len());
    for tag in [GammaTag::Gamma1, GammaTag::Gamma2, GammaTag::Gamma3] {
        println!(
            "  {}: {} edges, length {:.6}",
            tag.as_str(),
            mesh.edges_with_tag(tag).count(),
            mesh.boundary_length(tag)
        );
    }
    println!("area: {:.12}", mesh.total_area());
    println!("angles: min {:.2} deg, max {:.2} deg", amin, amax);
    println!("half bandwidth: {}", mesh.half_bandwidth());
    ctx.write_text("mesh.txt", &mesh.to_text())?;
    Ok(())
}

pub fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}
