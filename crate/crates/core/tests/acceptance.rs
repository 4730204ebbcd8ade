//! Acceptance suite: every criterion runs at its stated tolerance and prints
//! one pass/fail line (`cargo test --test acceptance -- --nocapture`).

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{bisect, flux_balance_root, max_abs_diff};
use pqlap::control::{ControlGrid, ControlProblem, ControlSetup, TargetKind, Verdict};
use pqlap::forms::{
    apply_a, apply_b, apply_l, coercivity_check, jacobian, residual, BoundaryLaw, Field, PdeParams,
    SourceData,
};
use pqlap::geometry::{BoundaryLayout, DirichletSpec, Mesh, ProblemKind};
use pqlap::output::RunMeta;
use pqlap::solver::{solve_dnd, solve_dnn, SolveOptions};
use pqlap::theorems::{run_alpha_sweep, run_random_suite, SweepConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn criterion(name: &str, f: impl FnOnce() -> String) {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(detail) => println!("[acceptance] {name}: PASS ({detail})"),
        Err(e) => {
            println!("[acceptance] {name}: FAIL");
            std::panic::resume_unwind(e);
        }
    }
}

fn unit(n: usize) -> Mesh {
    Mesh::unit_square(n, BoundaryLayout::default()).unwrap()
}

/// Criterion 1: manufactured DND exactness at mesh n = 16, nodal error
/// ≤ 1e-9, < 5 s per case.
#[test]
fn criterion_01_dnd_manufactured_exactness() {
    criterion("criterion 1 (DND manufactured exactness)", || {
        let mesh = unit(16);
        let data = SourceData::zeros(&mesh);
        let opts = SolveOptions::default();
        let exact: Vec<f64> = mesh.nodes.iter().map(|p| p[0]).collect();
        let mut worst = 0.0f64;
        for (p, q, mu) in [(3.0, 2.0, 1.0), (2.0, 1.5, 1.0), (4.0, 2.5, 0.5)] {
            let t0 = Instant::now();
            let params = PdeParams { p, q, mu, b: 1.0, beta: 0.0, ..PdeParams::default() };
            let (u, _) = solve_dnd(&params, &data, None, &mesh, &opts).unwrap();
            let err = max_abs_diff(&u.values, &exact);
            let dt = t0.elapsed().as_secs_f64();
            assert!(err <= 1e-9, "(p,q,mu)=({p},{q},{mu}): nodal error {err:.3e} > 1e-9");
            assert!(dt < 5.0, "(p,q,mu)=({p},{q},{mu}): {dt:.2}s >= 5s");
            worst = worst.max(err);
        }
        format!("worst nodal error {worst:.3e}")
    });
}

/// Criterion 2: the DNN closed-form family at α ∈ {1, 4}; the independent
/// bisection oracle gives m(1) = 0.25 exactly, and m(4) is the root of the
/// Γ3 flux balance m + √m = 4(1 − m); FEM nodal agreement ≤ 1e-8.
#[test]
fn criterion_02_dnn_closed_form() {
    criterion("criterion 2 (DNN closed-form family)", || {
        let mesh = unit(16);
        let data = SourceData::zeros(&mesh);
        let law = BoundaryLaw::power(1.0);
        let opts = SolveOptions::default();
        let m1 = flux_balance_root(2.0, 1.5, 1.0, 1.0, 1.0, 1.0);
        assert!((m1 - 0.25).abs() <= 1e-12, "oracle m(1) = {m1}, expected 0.25");
        let m4 = flux_balance_root(2.0, 1.5, 1.0, 4.0, 1.0, 1.0);
        let direct = bisect(|m: f64| 5.0 * m + m.sqrt() - 4.0, 0.0, 1.0, 1e-13);
        assert!((m4 - direct).abs() <= 1e-11);
        assert!((m4 - 0.64).abs() <= 1e-11, "oracle m(4) = {m4}, expected 0.64");
        let mut worst = 0.0f64;
        for (alpha, m) in [(1.0, m1), (4.0, m4)] {
            let params = PdeParams::default().with_alpha(alpha);
            let (u, _) = solve_dnn(&params, &data, &law, &mesh, &opts).unwrap();
            let exact: Vec<f64> = mesh.nodes.iter().map(|p| m * p[0]).collect();
            let err = max_abs_diff(&u.values, &exact);
            assert!(err <= 1e-8, "alpha={alpha}: nodal error {err:.3e} > 1e-8");
            worst = worst.max(err);
        }
        format!("m(1)={m1}, m(4)={m4}, worst nodal error {worst:.3e}")
    });
}

fn run_property_suite(mesh: &Mesh) -> Vec<(u64, pqlap::theorems::TheoremReport)> {
    let cfg = SweepConfig {
        alphas: SweepConfig::default().alphas,
        comparison_tol: 1e-6,
        convergence_tol: None,
    };
    run_random_suite(mesh, 20, 2026, &cfg, &SolveOptions::default()).unwrap()
}

/// Criterion 3: 20 seed-fixed random H(0) configurations at n = 16 pass
/// u_α ≤ b (everywhere and on Γ3), u_α ≤ u_∞, and pairwise α-monotonicity
/// at tolerance 1e-6; total runtime < 10 min.
#[test]
fn criterion_03_h0_property_suite() {
    criterion("criterion 3 (comparison property suite)", || {
        let t0 = Instant::now();
        let mesh = unit(16);
        let suite = run_property_suite(&mesh);
        assert_eq!(suite.len(), 20);
        for (seed, report) in &suite {
            assert!(report.h0_ok, "seed {seed} generated non-H(0) data");
            for name in [
                "dnd_state_le_b",
                "dnn_state_le_b",
                "dnn_state_le_b_on_gamma3",
                "dnn_le_dnd",
                "alpha_monotone",
            ] {
                let c = report.find(name).unwrap_or_else(|| panic!("seed {seed}: missing {name}"));
                assert!(c.passed(), "seed {seed}, {name}: violation {:.3e}", c.violation);
            }
        }
        let dt = t0.elapsed().as_secs_f64();
        assert!(dt < 600.0, "suite took {dt:.1}s >= 600s");
        format!("20 configurations in {dt:.1}s")
    });
}

/// Criterion 4: the manufactured V-norm gap matches the oracle 1 − m(α)
/// within 1e-6 over α = 10⁰..10⁴, decreases strictly, and ends ≤ 2e-4.
#[test]
fn criterion_04_alpha_convergence() {
    criterion("criterion 4 (alpha-convergence against the scalar oracle)", || {
        let mesh = unit(16);
        let params = PdeParams::default();
        let data = SourceData::zeros(&mesh);
        let law = BoundaryLaw::power(1.0);
        let cfg = SweepConfig {
            alphas: (0..=4).map(|k| 10f64.powi(k)).collect(),
            comparison_tol: 1e-8,
            convergence_tol: Some(2e-4),
        };
        let report = run_alpha_sweep(&params, &data, &law, &mesh, &cfg, &SolveOptions::default()).unwrap();
        assert!(report.all_passed(), "{}", report.to_json());
        let mut worst = 0.0f64;
        for row in &report.rows {
            let oracle = 1.0 - flux_balance_root(2.0, 1.5, 1.0, row.alpha, 1.0, 1.0);
            let dev = (row.v_norm_gap - oracle).abs();
            assert!(dev <= 1e-6, "alpha {}: gap {} vs oracle {}", row.alpha, row.v_norm_gap, oracle);
            worst = worst.max(dev);
        }
        assert!(
            report.rows.windows(2).all(|w| w[1].v_norm_gap < w[0].v_norm_gap),
            "gaps not strictly decreasing"
        );
        let last = report.rows.last().unwrap().v_norm_gap;
        assert!(last <= 2e-4, "final gap {last:.3e} > 2e-4");
        format!("final gap {last:.6e}, worst oracle deviation {worst:.3e}")
    });
}

/// Criterion 5: monotonicity pairings of A, B, L on 1000 random field pairs
/// (tolerance −1e-12) and Jacobian–FD Richardson ratios in [3.5, 4.5].
#[test]
fn criterion_05_operator_invariants() {
    criterion("criterion 5 (operator monotonicity + Jacobian consistency)", || {
        let mesh = unit(8);
        let params = PdeParams {
            p: 2.8,
            q: 1.6,
            theta: 2.4,
            beta: 1.1,
            b: 1.0,
            epsilon: 0.0,
            ..PdeParams::default()
        };
        let law = BoundaryLaw::power(1.2);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut min_pairing = f64::INFINITY;
        for _ in 0..1000 {
            let u = Field {
                values: (0..mesh.node_count()).map(|_| rng.gen_range(-1.5..1.5)).collect(),
                kind: ProblemKind::Dnn,
            };
            let w = Field {
                values: (0..mesh.node_count()).map(|_| rng.gen_range(-1.5..1.5)).collect(),
                kind: ProblemKind::Dnn,
            };
            let d = Field {
                values: u.values.iter().zip(&w.values).map(|(a, b)| a - b).collect(),
                kind: u.kind,
            };
            let a = apply_a(&u, &d, &params, &mesh).unwrap() - apply_a(&w, &d, &params, &mesh).unwrap();
            let b = apply_b(&u, &d, &params, &mesh).unwrap() - apply_b(&w, &d, &params, &mesh).unwrap();
            let l = apply_l(&u, &d, &law, &params, &mesh).unwrap()
                - apply_l(&w, &d, &law, &params, &mesh).unwrap();
            for v in [a, b, l] {
                assert!(v >= -1e-12, "monotonicity pairing {v:.3e} < -1e-12");
                min_pairing = min_pairing.min(v);
            }
        }

        // central differences of the residual against the assembled Jacobian
        let jp = PdeParams { p: 4.0, q: 2.0, theta: 4.0, beta: 0.8, mu: 0.6, alpha: 1.5, ..PdeParams::default() };
        let data = SourceData::zeros(&mesh);
        let spec = DirichletSpec::dnn(&mesh);
        let mut ratios = Vec::new();
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut u = Field {
                values: (0..mesh.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                kind: ProblemKind::Dnn,
            };
            spec.apply(&mut u.values);
            let mut v = Field {
                values: (0..mesh.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                kind: ProblemKind::Dnn,
            };
            for (i, _) in spec.constrained() {
                v.values[i] = 0.0;
            }
            let j = jacobian(&u, &jp, Some(&law), &mesh, ProblemKind::Dnn).unwrap();
            let jv = j.matvec(&v.values);
            let fd_err = |h: f64| -> f64 {
                let shift = |s: f64| Field {
                    values: u.values.iter().zip(&v.values).map(|(a, b)| a + s * b).collect(),
                    kind: u.kind,
                };
                let rp = residual(&shift(h), &jp, &data, Some(&law), &mesh, ProblemKind::Dnn).unwrap();
                let rm = residual(&shift(-h), &jp, &data, Some(&law), &mesh, ProblemKind::Dnn).unwrap();
                rp.iter()
                    .zip(&rm)
                    .zip(&jv)
                    .map(|((p, m), j)| ((p - m) / (2.0 * h) - j).powi(2))
                    .sum::<f64>()
                    .sqrt()
            };
            let ratio = fd_err(2e-3) / fd_err(1e-3);
            assert!((3.5..=4.5).contains(&ratio), "Richardson ratio {ratio}");
            ratios.push(ratio);
        }
        let mean: f64 = ratios.iter().sum::<f64>() / ratios.len() as f64;
        format!("min pairing {min_pairing:.3e}, mean Richardson ratio {mean:.3}")
    });
}

/// Criterion 6: the assembled coercivity lower bound holds on 1000 random
/// fields with the power law.
#[test]
fn criterion_06_coercivity_bound() {
    criterion("criterion 6 (coercivity lower bound)", || {
        let mesh = unit(8);
        let params = PdeParams {
            p: 2.6,
            q: 1.7,
            theta: 2.2,
            beta: 1.4,
            alpha: 3.0,
            b: 1.2,
            epsilon: 0.0,
            ..PdeParams::default()
        };
        let law = BoundaryLaw::power(0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let mut min_margin = f64::INFINITY;
        for _ in 0..1000 {
            let u = Field {
                values: (0..mesh.node_count()).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                kind: ProblemKind::Dnn,
            };
            let (pairing, bound) = coercivity_check(&u, &params, &law, &mesh).unwrap();
            let slack = 1e-12 * bound.abs().max(1.0);
            assert!(pairing >= bound - slack, "pairing {pairing:.6e} < bound {bound:.6e}");
            min_margin = min_margin.min(pairing - bound);
        }
        format!("min margin {min_margin:.3e}")
    });
}

fn asymptotics_problem_pieces(lambda: f64, g_tilde: f64) -> (Mesh, PdeParams, Vec<f64>, Vec<f64>) {
    let mesh = unit(8);
    let params = PdeParams { p: 2.0, q: 1.5, ..PdeParams::default() };
    let r = vec![0.0; mesh.node_count()];
    let zd = if lambda == 0.0 {
        vec![0.0; mesh.node_count()]
    } else {
        let data = SourceData { g: vec![g_tilde; mesh.node_count()], r: r.clone() };
        let (u, _) = solve_dnd(&params, &data, None, &mesh, &SolveOptions::default()).unwrap();
        u.values
    };
    (mesh, params, r, zd)
}

/// Criterion 7: with λ = 0 the asymptotics table is identically zero —
/// optimal controls 0 and optimal values 0 to 1e-12 at every α.
#[test]
fn criterion_07_control_degenerate() {
    criterion("criterion 7 (degenerate control, lambda = 0)", || {
        let (mesh, params, r, zd) = asymptotics_problem_pieces(0.0, 0.0);
        let grid = ControlGrid::new(4, 4, &mesh);
        let mut setup = ControlSetup::new(TargetKind::State(zd), 0.0, 1e-2, grid);
        setup.value_tol = 1e-12;
        let law = BoundaryLaw::power(1.0);
        let opts = SolveOptions::default();
        let problem = ControlProblem::new(&setup, &params, &r, &law, &mesh, &opts).unwrap();
        let alphas: Vec<f64> = (0..=4).map(|k| 10f64.powi(k)).collect();
        let report = problem.alpha_asymptotics(&alphas, 2026).unwrap();
        assert_eq!(report.verdict, Verdict::Consistent, "{}", report.to_json());
        assert!(report.j_inf.abs() <= 1e-12);
        assert!(report.control_inf.iter().all(|&x| x == 0.0));
        for row in &report.rows {
            assert!(row.j_alpha.abs() <= 1e-12, "alpha {}: value {:.3e}", row.alpha, row.j_alpha);
            assert_eq!(row.control_dist, 0.0, "alpha {}: nonzero control", row.alpha);
        }
        format!("all {} optimal values exactly 0", report.rows.len())
    });
}

/// Criterion 8: reachable-target asymptotics (z_d from g̃ = −0.6 ≤ 0 via the
/// DND solve, M = 16 cells, mesh n = 8, 3 multi-starts): the optimal-value
/// gap is nonincreasing over α = 10⁰..10⁴ and the final control distance is
/// ≤ 10% of its α = 10⁰ value; runtime < 30 min.
#[test]
fn criterion_08_control_asymptotics() {
    criterion("criterion 8 (control asymptotics to the DND limit)", || {
        let t0 = Instant::now();
        let (mesh, params, r, zd) = asymptotics_problem_pieces(1.0, -0.6);
        let grid = ControlGrid::new(4, 4, &mesh);
        assert_eq!(grid.cell_count(), 16);
        let mut setup = ControlSetup::new(TargetKind::State(zd), 1.0, 1e-2, grid);
        setup.value_tol = 1e-3;
        setup.starts = 3;
        let law = BoundaryLaw::power(1.0);
        let opts = SolveOptions::default();
        let problem = ControlProblem::new(&setup, &params, &r, &law, &mesh, &opts).unwrap();
        let alphas: Vec<f64> = (0..=4).map(|k| 10f64.powi(k)).collect();
        let report = problem.alpha_asymptotics(&alphas, 2026).unwrap();
        assert_eq!(report.verdict, Verdict::Consistent, "{}", report.to_json());
        let gaps: Vec<f64> = report.rows.iter().map(|row| (row.j_alpha - report.j_inf).abs()).collect();
        assert!(
            gaps.windows(2).all(|w| w[1] <= w[0]),
            "value gaps not nonincreasing: {gaps:?}"
        );
        let c0 = report.rows[0].control_dist;
        let cl = report.rows.last().unwrap().control_dist;
        assert!(
            cl <= 0.10 * c0,
            "final control distance {cl:.3e} > 10% of first {c0:.3e}"
        );
        let dt = t0.elapsed().as_secs_f64();
        assert!(dt < 1800.0, "took {dt:.1}s >= 30 min");
        format!("value gap {:.3e} -> {:.3e}, control ratio {:.2e}, {dt:.1}s", gaps[0], gaps.last().unwrap(), cl / c0)
    });
}

/// Criterion 9: two runs of criterion 3's suite with the same seed (single
/// thread) emit byte-identical CSVs.
#[test]
fn criterion_09_determinism() {
    criterion("criterion 9 (byte-identical CSVs across reruns)", || {
        let mesh = unit(16);
        let emit = || -> Vec<Vec<u8>> {
            run_property_suite(&mesh)
                .into_iter()
                .map(|(seed, report)| {
                    let mut buf = Vec::new();
                    report.write_sweep_csv(&mut buf, &RunMeta::new("acceptance", seed)).unwrap();
                    buf
                })
                .collect()
        };
        let first = emit();
        let second = emit();
        assert_eq!(first.len(), second.len());
        let mut bytes = 0usize;
        for (k, (a, b)) in first.iter().zip(&second).enumerate() {
            assert_eq!(a, b, "CSV {k} differs between runs");
            bytes += a.len();
        }
        format!("{} CSV files, {} bytes, byte-identical", first.len(), bytes)
    });
}
