//! Discrete realization of the nonlinear operators on P1 elements.
//!
//! The three operators and the load are
//!   ⟨Au,v⟩ = ∫_Ω ( |∇u|^{p-2}∇u + μ|∇u|^{q-2}∇u ) · ∇v dx
//!   ⟨Bu,v⟩ = ∫_Ω β |u|^{θ-2} u v dx
//!   ⟨Lu,v⟩ = ∫_{Γ3} l(x, u) v dΓ
//!   ⟨f,v⟩  = ∫_Ω g v dx − ∫_{Γ2} r v dΓ
//! with the gradient weights regularized through (|∇u|²+ε²)^{(p-2)/2} so that
//! residual and Jacobian stay consistent for p ≠ 2 at flat spots. B and l use
//! the same ε-regularization exactly when their exponent drops below 2.
//!
//! Quadrature: the A-term integrand is elementwise constant (P1), so it is
//! integrated exactly; B and g use the 3-point order-2 midpoint rule; l and r
//! use 2-point Gauss per boundary edge.
//!
//! Dual vectors are plain nodal vectors against the P1 basis with constrained
//! entries zeroed; all consumers use that same pairing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{DirichletSpec, GammaTag, Mesh, ProblemKind};
use crate::linalg::SymBanded;

/// Space dimension; the artifact fixes N = 2.
pub const DIM: usize = 2;

/// Default gradient regularization.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Sobolev critical exponent p* = Np/(N−p) for p < N, +∞ otherwise.
pub fn critical_exponent(p: f64, n_dim: usize) -> f64 {
    let n = n_dim as f64;
    if p < n {
        n * p / (n - p)
    } else {
        f64::INFINITY
    }
}

/// All scalar coefficients of the two boundary value problems.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeParams {
    pub p: f64,
    pub q: f64,
    pub theta: f64,
    pub mu: f64,
    pub beta: f64,
    pub alpha: f64,
    pub b: f64,
    pub epsilon: f64,
}

impl Default for PdeParams {
    fn default() -> Self {
        PdeParams {
            p: 2.0,
            q: 1.5,
            theta: 2.0,
            mu: 1.0,
            beta: 0.0,
            alpha: 1.0,
            b: 1.0,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl PdeParams {
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn conjugate_p(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) {
            return Err(Error::param("params.p", format!("requires p > 1 (p={})", self.p)));
        }
        if !(self.q > 1.0 && self.q < self.p) {
            return Err(Error::param(
                "params.q",
                format!("requires 1 < q < p (q={}, p={})", self.q, self.p),
            ));
        }
        let pstar = critical_exponent(self.p, DIM);
        if !(self.theta > 1.0) {
            return Err(Error::param(
                "params.theta",
                format!("requires theta > 1 (theta={})", self.theta),
            ));
        }
        if !(self.theta < pstar) {
            return Err(Error::param(
                "params.theta",
                format!("requires subcritical theta < p* = {pstar} (theta={})", self.theta),
            ));
        }
        if !(self.mu > 0.0) {
            return Err(Error::param("params.mu", format!("requires mu > 0 (mu={})", self.mu)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::param("params.beta", format!("requires beta >= 0 (beta={})", self.beta)));
        }
        if !(self.b >= 0.0) {
            return Err(Error::param("params.b", format!("requires b >= 0 (b={})", self.b)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::param("params.alpha", format!("requires alpha >= 0 (alpha={})", self.alpha)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::param("params.epsilon", format!("requires epsilon >= 0 (epsilon={})", self.epsilon)));
        }
        Ok(())
    }
}

/// Discrete data of the load functional f.
#[derive(Clone, Debug)]
pub struct SourceData {
    /// Nodal values of the volume source g on Ω.
    pub g: Vec<f64>,
    /// Nodal values of the prescribed flux r; only Γ2-incident entries are
    /// read.
    pub r: Vec<f64>,
}

impl SourceData {
    pub fn zeros(mesh: &Mesh) -> SourceData {
        SourceData { g: vec![0.0; mesh.node_count()], r: vec![0.0; mesh.node_count()] }
    }

    pub fn from_fns(
        mesh: &Mesh,
        g: impl Fn(f64, f64) -> f64,
        r: impl Fn(f64, f64) -> f64,
    ) -> SourceData {
        SourceData {
            g: mesh.nodes.iter().map(|p| g(p[0], p[1])).collect(),
            r: mesh.nodes.iter().map(|p| r(p[0], p[1])).collect(),
        }
    }

    pub fn check_sizes(&self, mesh: &Mesh) -> Result<()> {
        check_len("source g", self.g.len(), mesh.node_count())?;
        check_len("source r", self.r.len(), mesh.node_count())
    }

    /// Hypothesis H(0): g ≤ 0 in Ω, r ≥ 0 on Γ2, b > 0.
    pub fn h0_satisfied(&self, mesh: &Mesh, b: f64) -> std::result::Result<(), String> {
        if !(b > 0.0) {
            return Err(format!("H(0) requires b > 0 (b={b})"));
        }
        if let Some(i) = (0..self.g.len()).find(|&i| self.g[i] > 0.0) {
            return Err(format!("H(0) requires g <= 0; g[{i}] = {}", self.g[i]));
        }
        for i in mesh.nodes_with_tag(GammaTag::Gamma2) {
            if self.r[i] < 0.0 {
                return Err(format!("H(0) requires r >= 0 on Gamma2; r[{i}] = {}", self.r[i]));
            }
        }
        Ok(())
    }
}

/// Γ3 weight ω, constant or nodal.
#[derive(Clone, Debug)]
pub enum Omega {
    Constant(f64),
    Nodal(Vec<f64>),
}

impl Omega {
    pub(crate) fn at(&self, node: usize) -> f64 {
        match self {
            Omega::Constant(w) => *w,
            Omega::Nodal(v) => v[node],
        }
    }
}

/// The Carathéodory boundary function on Γ3: either the power law
/// l(x,s) = ω(x) sgn(s−b)|s−b|^{p−1} or a user-tabulated monotone law
/// l(x,s) = ω(x)·table(s) with supplied growth constants.
#[derive(Clone, Debug)]
pub enum LawKind {
    Power,
    Tabulated {
        s: Vec<f64>,
        l: Vec<f64>,
        /// Growth data of the bound |l| ≤ a_l + b_l (1 + |s|^{p-1}).
        a_l: f64,
        b_l: f64,
    },
}

#[derive(Clone, Debug)]
pub struct BoundaryLaw {
    pub kind: LawKind,
    pub omega: Omega,
}

impl BoundaryLaw {
    pub fn power(omega: f64) -> BoundaryLaw {
        BoundaryLaw { kind: LawKind::Power, omega: Omega::Constant(omega) }
    }

    pub fn power_nodal(omega: Vec<f64>) -> BoundaryLaw {
        BoundaryLaw { kind: LawKind::Power, omega: Omega::Nodal(omega) }
    }

    pub fn tabulated(s: Vec<f64>, l: Vec<f64>, a_l: f64, b_l: f64, omega: f64) -> BoundaryLaw {
        BoundaryLaw { kind: LawKind::Tabulated { s, l, a_l, b_l }, omega: Omega::Constant(omega) }
    }

    /// Base law value (without the ω weight).
    pub fn eval(&self, s: f64, p: f64, b: f64, eps: f64) -> f64 {
        self.eval_from_gap(s - b, p, b, eps)
    }

    /// Base law value from the signed gap d = s − b. Near-transfer states at
    /// large α sit within roundoff of b, so the assembly interpolates the
    /// gap (nodal subtractions of nearby values are exact) and feeds it here
    /// instead of reconstructing s − b from an already-rounded s.
    pub fn eval_from_gap(&self, d: f64, p: f64, b: f64, eps: f64) -> f64 {
        match &self.kind {
            LawKind::Power => {
                if d == 0.0 {
                    0.0
                } else if p >= 2.0 {
                    d.signum() * d.abs().powf(p - 1.0)
                } else {
                    d * (d * d + eps * eps).powf((p - 2.0) / 2.0)
                }
            }
            LawKind::Tabulated { s: xs, l: ls, .. } => interp_extrap(xs, ls, b + d),
        }
    }

    /// Derivative of the base law in s; what the Jacobian assembles.
    pub fn deriv(&self, s: f64, p: f64, b: f64, eps: f64) -> Result<f64> {
        self.deriv_from_gap(s - b, p, b, eps)
    }

    pub fn deriv_from_gap(&self, d: f64, p: f64, b: f64, eps: f64) -> Result<f64> {
        match &self.kind {
            LawKind::Power => {
                if p >= 2.0 {
                    Ok((p - 1.0) * d.abs().powf(p - 2.0))
                } else {
                    let d2e = d * d + eps * eps;
                    if d2e == 0.0 {
                        return Err(Error::SingularKernel);
                    }
                    Ok(d2e.powf((p - 4.0) / 2.0) * ((p - 1.0) * d * d + eps * eps))
                }
            }
            LawKind::Tabulated { s: xs, l: ls, .. } => Ok(interp_slope(xs, ls, b + d)),
        }
    }

    /// Secant slope k with l = k·(s−b); nonnegative by monotonicity and the
    /// root at b. Used by the Picard linearization.
    pub fn secant_slope(&self, s: f64, p: f64, b: f64, eps: f64) -> f64 {
        self.secant_from_gap(s - b, p, b, eps)
    }

    pub fn secant_from_gap(&self, d: f64, p: f64, b: f64, eps: f64) -> f64 {
        match &self.kind {
            LawKind::Power => {
                if p >= 2.0 {
                    d.abs().powf(p - 2.0)
                } else {
                    (d * d + eps * eps).powf((p - 2.0) / 2.0)
                }
            }
            LawKind::Tabulated { s: xs, l: ls, .. } => {
                if d.abs() < 1e-12 {
                    interp_slope(xs, ls, b + d)
                } else {
                    (interp_extrap(xs, ls, b + d) / d).max(0.0)
                }
            }
        }
    }

    /// Primitive ∫_b^s of the base law, the boundary part of the energy.
    pub fn primitive(&self, s: f64, p: f64, b: f64, eps: f64) -> f64 {
        self.primitive_from_gap(s - b, p, b, eps)
    }

    pub fn primitive_from_gap(&self, d: f64, p: f64, b: f64, eps: f64) -> f64 {
        let s = b + d;
        match &self.kind {
            LawKind::Power => {
                if p >= 2.0 {
                    d.abs().powf(p) / p
                } else {
                    ((d * d + eps * eps).powf(p / 2.0) - (eps * eps).powf(p / 2.0)) / p
                }
            }
            LawKind::Tabulated { s: xs, l: ls, .. } => {
                // exact trapezoid integral of the piecewise-linear table
                let (lo, hi, sign) = if s >= b { (b, s, 1.0) } else { (s, b, -1.0) };
                let mut acc = 0.0;
                let mut x = lo;
                let mut lx = interp_extrap(xs, ls, lo);
                for (&xi, &li) in xs.iter().zip(ls) {
                    if xi <= lo || xi >= hi {
                        continue;
                    }
                    acc += 0.5 * (lx + li) * (xi - x);
                    x = xi;
                    lx = li;
                }
                let lhi = interp_extrap(xs, ls, hi);
                acc += 0.5 * (lx + lhi) * (hi - x);
                sign * acc
            }
        }
    }

    /// Growth constants (a_l, b_l) of |ω·l| ≤ a_l + b_l(1+|s|^{p-1}) over Γ3.
    /// For the power law a_l = 0 and b_l is derived from ω, p, b.
    pub fn growth_constants(&self, p: f64, b: f64, mesh: &Mesh) -> (f64, f64) {
        let omega_max = mesh
            .nodes_with_tag(GammaTag::Gamma3)
            .iter()
            .map(|&i| self.omega.at(i))
            .fold(0.0f64, f64::max);
        match &self.kind {
            LawKind::Power => {
                let split = if p >= 2.0 { (2.0f64).powf(p - 2.0) } else { 1.0 };
                (0.0, omega_max * split.max(1.0) * b.abs().powf(p - 1.0).max(1.0))
            }
            LawKind::Tabulated { a_l, b_l, .. } => (omega_max * a_l, omega_max * b_l),
        }
    }

    /// H(l) checks: ω > 0 on Γ3, the law nondecreasing with its only zero at
    /// s = b, and (tabulated) the growth bound at the table nodes.
    pub fn validate(&self, p: f64, b: f64, mesh: &Mesh) -> Result<()> {
        for i in mesh.nodes_with_tag(GammaTag::Gamma3) {
            if !(self.omega.at(i) > 0.0) {
                return Err(Error::param("law.omega", format!("omega must be > 0 on Gamma3 (node {i})")));
            }
        }
        if let Omega::Nodal(v) = &self.omega {
            check_len("law.omega", v.len(), mesh.node_count())?;
        }
        if let LawKind::Tabulated { s, l, a_l, b_l } = &self.kind {
            if s.len() != l.len() || s.len() < 2 {
                return Err(Error::param("law.table", "needs at least two (s, l) pairs of equal length"));
            }
            if s.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::param("law.table_s", "abscissae must be strictly increasing"));
            }
            if l.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::param("law.table_l", "law values must be nondecreasing (H(l)(ii))"));
            }
            if s[0] > b || s[s.len() - 1] < b {
                return Err(Error::param("law.table_s", format!("table must bracket the reference level b = {b}")));
            }
            for (&si, &li) in s.iter().zip(l) {
                let ok = if si < b { li < 0.0 } else if si > b { li > 0.0 } else { li == 0.0 };
                if !ok {
                    return Err(Error::param(
                        "law.table_l",
                        format!("l(s) must vanish only at s = b (H(l)(iii)); l({si}) = {li}"),
                    ));
                }
                if li.abs() > a_l + b_l * (1.0 + si.abs().powf(p - 1.0)) + 1e-12 {
                    return Err(Error::param(
                        "law.growth",
                        format!("|l({si})| = {} exceeds a_l + b_l(1+|s|^(p-1))", li.abs()),
                    ));
                }
            }
            if interp_extrap(s, l, b).abs() > 1e-12 {
                return Err(Error::param("law.table_l", "interpolated l(b) must be 0 (H(l)(iii))"));
            }
        }
        Ok(())
    }
}

fn interp_extrap(xs: &[f64], ls: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        let t = (ls[1] - ls[0]) / (xs[1] - xs[0]);
        return ls[0] + t * (x - xs[0]);
    }
    if x >= xs[n - 1] {
        let t = (ls[n - 1] - ls[n - 2]) / (xs[n - 1] - xs[n - 2]);
        return ls[n - 1] + t * (x - xs[n - 1]);
    }
    let k = xs.partition_point(|&xi| xi <= x).min(n - 1);
    let (x0, x1, l0, l1) = (xs[k - 1], xs[k], ls[k - 1], ls[k]);
    l0 + (l1 - l0) * (x - x0) / (x1 - x0)
}

fn interp_slope(xs: &[f64], ls: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let k = if x <= xs[0] {
        1
    } else if x >= xs[n - 1] {
        n - 1
    } else {
        xs.partition_point(|&xi| xi <= x).min(n - 1)
    };
    (ls[k] - ls[k - 1]) / (xs[k] - xs[k - 1])
}

/// Nodal coefficient vector over the mesh, tagged by the problem it is
/// feasible for.
#[derive(Clone, Debug)]
pub struct Field {
    pub values: Vec<f64>,
    pub kind: ProblemKind,
}

impl Field {
    pub fn zeros(mesh: &Mesh, kind: ProblemKind) -> Field {
        Field { values: vec![0.0; mesh.node_count()], kind }
    }

    pub fn from_fn(mesh: &Mesh, kind: ProblemKind, f: impl Fn(f64, f64) -> f64) -> Field {
        Field { values: mesh.nodes.iter().map(|p| f(p[0], p[1])).collect(), kind }
    }

    pub fn check_len(&self, mesh: &Mesh) -> Result<()> {
        check_len("field", self.values.len(), mesh.node_count())
    }
}

fn check_len(context: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::SizeMismatch { context: context.into(), expected, got });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// element geometry and quadrature
// ---------------------------------------------------------------------------

pub(crate) struct TriGeom {
    pub area: f64,
    /// Gradients of the three P1 shape functions.
    pub grad: [[f64; 2]; 3],
}

pub(crate) fn tri_geom(mesh: &Mesh, t: usize) -> TriGeom {
    let [a, b, c] = mesh.triangles[t];
    let pa = mesh.nodes[a];
    let pb = mesh.nodes[b];
    let pc = mesh.nodes[c];
    let det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
    let area = 0.5 * det;
    let grad = [
        [(pb[1] - pc[1]) / det, (pc[0] - pb[0]) / det],
        [(pc[1] - pa[1]) / det, (pa[0] - pc[0]) / det],
        [(pa[1] - pb[1]) / det, (pb[0] - pa[0]) / det],
    ];
    TriGeom { area, grad }
}

pub(crate) fn tri_gradient(values: &[f64], nodes: [usize; 3], geom: &TriGeom) -> [f64; 2] {
    let mut g = [0.0; 2];
    for (k, &i) in nodes.iter().enumerate() {
        g[0] += values[i] * geom.grad[k][0];
        g[1] += values[i] * geom.grad[k][1];
    }
    g
}

/// Midpoint rule: (local shape values, local interpolation pairs).
const MID_SHAPES: [[f64; 3]; 3] = [
    [0.5, 0.5, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
];

/// 2-point Gauss abscissae on [0,1].
pub(crate) const EDGE_GAUSS: [f64; 2] = [0.5 - 0.288_675_134_594_812_88, 0.5 + 0.288_675_134_594_812_88];

// ---------------------------------------------------------------------------
// kernels
// ---------------------------------------------------------------------------

/// Weights of the two gradient parts at squared gradient magnitude `s2`:
/// ((s2+ε²)^{(p-2)/2}, (s2+ε²)^{(q-2)/2}); zero on the exact null gradient.
pub(crate) fn a_weights(s2: f64, params: &PdeParams) -> (f64, f64) {
    let s2e = s2 + params.epsilon * params.epsilon;
    if s2e == 0.0 {
        return (0.0, 0.0);
    }
    (s2e.powf((params.p - 2.0) / 2.0), s2e.powf((params.q - 2.0) / 2.0))
}

/// Absorption kernel β-part |s|^{θ-2} s, ε-regularized when θ < 2.
pub(crate) fn b_kernel(s: f64, theta: f64, eps: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    if theta >= 2.0 {
        s.abs().powf(theta - 2.0) * s
    } else {
        s * (s * s + eps * eps).powf((theta - 2.0) / 2.0)
    }
}

/// Frozen-coefficient weight with b_kernel(s) = b_secant(s)·s.
pub(crate) fn b_secant(s: f64, theta: f64, eps: f64) -> f64 {
    if theta >= 2.0 {
        s.abs().powf(theta - 2.0)
    } else {
        (s * s + eps * eps).powf((theta - 2.0) / 2.0)
    }
}

fn b_kernel_deriv(s: f64, theta: f64, eps: f64) -> Result<f64> {
    if theta >= 2.0 {
        Ok((theta - 1.0) * s.abs().powf(theta - 2.0))
    } else {
        let s2e = s * s + eps * eps;
        if s2e == 0.0 {
            return Err(Error::SingularKernel);
        }
        Ok(s2e.powf((theta - 4.0) / 2.0) * ((theta - 1.0) * s * s + eps * eps))
    }
}

fn b_primitive(s: f64, theta: f64, eps: f64) -> f64 {
    if theta >= 2.0 {
        s.abs().powf(theta) / theta
    } else {
        ((s * s + eps * eps).powf(theta / 2.0) - (eps * eps).powf(theta / 2.0)) / theta
    }
}

// ---------------------------------------------------------------------------
// the operators
// ---------------------------------------------------------------------------

/// The two parts of ⟨Au,v⟩ before the μ weighting:
/// (∫ (|∇u|²+ε²)^{(p-2)/2} ∇u·∇v, ∫ (|∇u|²+ε²)^{(q-2)/2} ∇u·∇v).
pub fn apply_a_parts(u: &Field, v: &Field, params: &PdeParams, mesh: &Mesh) -> Result<(f64, f64)> {
    u.check_len(mesh)?;
    v.check_len(mesh)?;
    let mut acc_p = 0.0;
    let mut acc_q = 0.0;
    for t in 0..mesh.triangles.len() {
        let geom = tri_geom(mesh, t);
        let gu = tri_gradient(&u.values, mesh.triangles[t], &geom);
        let gv = tri_gradient(&v.values, mesh.triangles[t], &geom);
        let dot = gu[0] * gv[0] + gu[1] * gv[1];
        let (wp, wq) = a_weights(gu[0] * gu[0] + gu[1] * gu[1], params);
        acc_p += geom.area * wp * dot;
        acc_q += geom.area * wq * dot;
    }
    Ok((acc_p, acc_q))
}

/// ⟨Au,v⟩, exact per triangle for P1 fields.
pub fn apply_a(u: &Field, v: &Field, params: &PdeParams, mesh: &Mesh) -> Result<f64> {
    let (ap, aq) = apply_a_parts(u, v, params, mesh)?;
    Ok(ap + params.mu * aq)
}

/// ⟨Bu,v⟩ by the 3-point midpoint rule.
pub fn apply_b(u: &Field, v: &Field, params: &PdeParams, mesh: &Mesh) -> Result<f64> {
    u.check_len(mesh)?;
    v.check_len(mesh)?;
    if params.beta == 0.0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.triangles[t];
        let area = mesh.triangle_area(t);
        let w = area / 3.0;
        for shapes in MID_SHAPES {
            let uq = shapes[0] * u.values[a] + shapes[1] * u.values[b] + shapes[2] * u.values[c];
            let vq = shapes[0] * v.values[a] + shapes[1] * v.values[b] + shapes[2] * v.values[c];
            acc += w * params.beta * b_kernel(uq, params.theta, params.epsilon) * vq;
        }
    }
    Ok(acc)
}

/// ⟨Lu,v⟩ over Γ3 by 2-point Gauss per edge (without the α factor).
pub fn apply_l(u: &Field, v: &Field, law: &BoundaryLaw, params: &PdeParams, mesh: &Mesh) -> Result<f64> {
    u.check_len(mesh)?;
    v.check_len(mesh)?;
    let mut seen = false;
    let mut acc = 0.0;
    for e in mesh.edges_with_tag(GammaTag::Gamma3) {
        seen = true;
        let [a, b] = e.nodes;
        let len = mesh.edge_length(e);
        let (da, db) = (u.values[a] - params.b, u.values[b] - params.b);
        for t in EDGE_GAUSS {
            let dq = (1.0 - t) * da + t * db;
            let vq = (1.0 - t) * v.values[a] + t * v.values[b];
            let wq = (1.0 - t) * law.omega.at(a) + t * law.omega.at(b);
            acc += 0.5 * len * wq * law.eval_from_gap(dq, params.p, params.b, params.epsilon) * vq;
        }
    }
    if !seen {
        return Err(Error::Mesh("mesh has no Gamma3 edges; L is undefined".into()));
    }
    Ok(acc)
}

/// Load vector F with F·v = ∫ g v dx − ∫_{Γ2} r v dΓ for all nodal v.
pub fn assemble_load(data: &SourceData, mesh: &Mesh) -> Result<Vec<f64>> {
    data.check_sizes(mesh)?;
    let mut f = vec![0.0; mesh.node_count()];
    for t in 0..mesh.triangles.len() {
        let tri = mesh.triangles[t];
        let w = mesh.triangle_area(t) / 3.0;
        for shapes in MID_SHAPES {
            let gq: f64 = (0..3).map(|k| shapes[k] * data.g[tri[k]]).sum();
            for k in 0..3 {
                f[tri[k]] += w * gq * shapes[k];
            }
        }
    }
    for e in mesh.edges_with_tag(GammaTag::Gamma2) {
        let [a, b] = e.nodes;
        let len = mesh.edge_length(e);
        for t in EDGE_GAUSS {
            let rq = (1.0 - t) * data.r[a] + t * data.r[b];
            f[a] -= 0.5 * len * rq * (1.0 - t);
            f[b] -= 0.5 * len * rq * t;
        }
    }
    Ok(f)
}

/// Residual of the operator equation over the free test directions:
/// DNN:  R·v = ⟨Au+Bu,v⟩ + α⟨Lu,v⟩ − ⟨f,v⟩  with v = 0 on Γ1,
/// DND:  R·v = ⟨Au+Bu,v⟩ − ⟨f,v⟩            with v = 0 on Γ1 ∪ Γ3.
/// Constrained entries are zeroed. With ε = 0 this is the gradient of the
/// discrete energy.
pub fn residual(
    u: &Field,
    params: &PdeParams,
    data: &SourceData,
    law: Option<&BoundaryLaw>,
    mesh: &Mesh,
    kind: ProblemKind,
) -> Result<Vec<f64>> {
    let load = assemble_load(data, mesh)?;
    let spec = DirichletSpec::new(mesh, kind, params.b);
    let tol = 1e-12 * params.b.abs().max(1.0);
    spec.check_feasible(&u.values, tol)?;
    residual_free(&u.values, params, &load, law, mesh, &spec)
}

/// Residual against a preassembled load; the solver's inner loop.
pub(crate) fn residual_free(
    u: &[f64],
    params: &PdeParams,
    load: &[f64],
    law: Option<&BoundaryLaw>,
    mesh: &Mesh,
    spec: &DirichletSpec,
) -> Result<Vec<f64>> {
    check_len("field", u.len(), mesh.node_count())?;
    let mut r: Vec<f64> = load.iter().map(|&f| -f).collect();
    for t in 0..mesh.triangles.len() {
        let tri = mesh.triangles[t];
        let geom = tri_geom(mesh, t);
        let gu = tri_gradient(u, tri, &geom);
        let (wp, wq) = a_weights(gu[0] * gu[0] + gu[1] * gu[1], params);
        let w = wp + params.mu * wq;
        let flux = [w * gu[0], w * gu[1]];
        for k in 0..3 {
            r[tri[k]] += geom.area * (flux[0] * geom.grad[k][0] + flux[1] * geom.grad[k][1]);
        }
        if params.beta != 0.0 {
            let wquad = geom.area / 3.0;
            for shapes in MID_SHAPES {
                let uq: f64 = (0..3).map(|k| shapes[k] * u[tri[k]]).sum();
                let bv = params.beta * b_kernel(uq, params.theta, params.epsilon);
                for k in 0..3 {
                    r[tri[k]] += wquad * bv * shapes[k];
                }
            }
        }
    }
    if spec.kind == ProblemKind::Dnn {
        let law = law.ok_or_else(|| Error::param("law", "DNN residual requires a boundary law"))?;
        for e in mesh.edges_with_tag(GammaTag::Gamma3) {
            let [a, b] = e.nodes;
            let len = mesh.edge_length(e);
            let (da, db) = (u[a] - params.b, u[b] - params.b);
            for t in EDGE_GAUSS {
                let dq = (1.0 - t) * da + t * db;
                let wq = (1.0 - t) * law.omega.at(a) + t * law.omega.at(b);
                let lv = params.alpha * wq * law.eval_from_gap(dq, params.p, params.b, params.epsilon);
                r[a] += 0.5 * len * lv * (1.0 - t);
                r[b] += 0.5 * len * lv * t;
            }
        }
    }
    for (i, _) in spec.constrained() {
        r[i] = 0.0;
    }
    Ok(r)
}

/// Gâteaux derivative of the residual: a symmetric positive-semidefinite
/// banded matrix with identity rows/columns at constrained nodes.
pub fn jacobian(
    u: &Field,
    params: &PdeParams,
    law: Option<&BoundaryLaw>,
    mesh: &Mesh,
    kind: ProblemKind,
) -> Result<SymBanded> {
    let spec = DirichletSpec::new(mesh, kind, params.b);
    jacobian_free(&u.values, params, law, mesh, &spec)
}

pub(crate) fn jacobian_free(
    u: &[f64],
    params: &PdeParams,
    law: Option<&BoundaryLaw>,
    mesh: &Mesh,
    spec: &DirichletSpec,
) -> Result<SymBanded> {
    check_len("field", u.len(), mesh.node_count())?;
    let n = mesh.node_count();
    let mut j = SymBanded::zeros(n, mesh.half_bandwidth());
    let eps2 = params.epsilon * params.epsilon;
    for t in 0..mesh.triangles.len() {
        let tri = mesh.triangles[t];
        let geom = tri_geom(mesh, t);
        let gu = tri_gradient(u, tri, &geom);
        let s2 = gu[0] * gu[0] + gu[1] * gu[1];
        let s2e = s2 + eps2;
        // d/d∇u [ w(|∇u|²) ∇u ] = w I + 2 w' ∇u⊗∇u
        let (w, two_wp) = if s2e == 0.0 {
            if params.p < 2.0 || params.q < 2.0 {
                return Err(Error::SingularKernel);
            }
            let w0 = if params.p == 2.0 { 1.0 } else { 0.0 }
                + params.mu * if params.q == 2.0 { 1.0 } else { 0.0 };
            (w0, 0.0)
        } else {
            let wp = s2e.powf((params.p - 2.0) / 2.0);
            let wq = s2e.powf((params.q - 2.0) / 2.0);
            let dwp = (params.p - 2.0) / 2.0 * s2e.powf((params.p - 4.0) / 2.0);
            let dwq = (params.q - 2.0) / 2.0 * s2e.powf((params.q - 4.0) / 2.0);
            (wp + params.mu * wq, 2.0 * (dwp + params.mu * dwq))
        };
        for a in 0..3 {
            let ga = geom.grad[a];
            let dga = ga[0] * gu[0] + ga[1] * gu[1];
            for b in a..3 {
                let gb = geom.grad[b];
                let dgb = gb[0] * gu[0] + gb[1] * gu[1];
                let val = geom.area * (w * (ga[0] * gb[0] + ga[1] * gb[1]) + two_wp * dga * dgb);
                j.add(tri[a], tri[b], val);
            }
        }
        if params.beta != 0.0 {
            let wquad = geom.area / 3.0;
            for shapes in MID_SHAPES {
                let uq: f64 = (0..3).map(|k| shapes[k] * u[tri[k]]).sum();
                let kb = params.beta * b_kernel_deriv(uq, params.theta, params.epsilon)?;
                for a in 0..3 {
                    for b in a..3 {
                        j.add(tri[a], tri[b], wquad * kb * shapes[a] * shapes[b]);
                    }
                }
            }
        }
    }
    if spec.kind == ProblemKind::Dnn {
        let law = law.ok_or_else(|| Error::param("law", "DNN Jacobian requires a boundary law"))?;
        for e in mesh.edges_with_tag(GammaTag::Gamma3) {
            let [a, b] = e.nodes;
            let len = mesh.edge_length(e);
            let (da, db) = (u[a] - params.b, u[b] - params.b);
            for t in EDGE_GAUSS {
                let dq = (1.0 - t) * da + t * db;
                let wq = (1.0 - t) * law.omega.at(a) + t * law.omega.at(b);
                let dl = params.alpha * wq * law.deriv_from_gap(dq, params.p, params.b, params.epsilon)?;
                let sh = [1.0 - t, t];
                j.add(a, a, 0.5 * len * dl * sh[0] * sh[0]);
                j.add(a, b, 0.5 * len * dl * sh[0] * sh[1]);
                j.add(b, b, 0.5 * len * dl * sh[1] * sh[1]);
            }
        }
    }
    for (i, _) in spec.constrained() {
        j.set_identity_row_col(i);
    }
    Ok(j)
}

/// Discrete energy whose gradient over the free directions is the residual.
pub fn energy(
    u: &Field,
    params: &PdeParams,
    data: &SourceData,
    law: Option<&BoundaryLaw>,
    mesh: &Mesh,
    kind: ProblemKind,
) -> Result<f64> {
    u.check_len(mesh)?;
    let load = assemble_load(data, mesh)?;
    let eps2 = params.epsilon * params.epsilon;
    let mut e = 0.0;
    for t in 0..mesh.triangles.len() {
        let tri = mesh.triangles[t];
        let geom = tri_geom(mesh, t);
        let gu = tri_gradient(&u.values, tri, &geom);
        let s2e = gu[0] * gu[0] + gu[1] * gu[1] + eps2;
        e += geom.area * (s2e.powf(params.p / 2.0) / params.p + params.mu * s2e.powf(params.q / 2.0) / params.q);
        if params.beta != 0.0 {
            let wquad = geom.area / 3.0;
            for shapes in MID_SHAPES {
                let uq: f64 = (0..3).map(|k| shapes[k] * u.values[tri[k]]).sum();
                e += wquad * params.beta * b_primitive(uq, params.theta, params.epsilon);
            }
        }
    }
    if kind == ProblemKind::Dnn {
        let law = law.ok_or_else(|| Error::param("law", "DNN energy requires a boundary law"))?;
        for edge in mesh.edges_with_tag(GammaTag::Gamma3) {
            let [a, b] = edge.nodes;
            let len = mesh.edge_length(edge);
            let (da, db) = (u.values[a] - params.b, u.values[b] - params.b);
            for t in EDGE_GAUSS {
                let dq = (1.0 - t) * da + t * db;
                let wq = (1.0 - t) * law.omega.at(a) + t * law.omega.at(b);
                e += 0.5 * len * params.alpha * wq * law.primitive_from_gap(dq, params.p, params.b, params.epsilon);
            }
        }
    }
    e -= load.iter().zip(&u.values).map(|(f, u)| f * u).sum::<f64>();
    Ok(e)
}

// ---------------------------------------------------------------------------
// norms
// ---------------------------------------------------------------------------

/// ‖u‖_V = (∫ |∇u|^p)^{1/p}, exact for P1.
pub fn norm_v(values: &[f64], p: f64, mesh: &Mesh) -> f64 {
    grad_norm_ls(values, p, mesh)
}

/// ‖∇u‖_{L^s(Ω)}, exact for P1.
pub fn grad_norm_ls(values: &[f64], s: f64, mesh: &Mesh) -> f64 {
    let mut acc = 0.0;
    for t in 0..mesh.triangles.len() {
        let geom = tri_geom(mesh, t);
        let gu = tri_gradient(values, mesh.triangles[t], &geom);
        acc += geom.area * (gu[0] * gu[0] + gu[1] * gu[1]).sqrt().powf(s);
    }
    acc.powf(1.0 / s)
}

/// Per-triangle constant gradients of a P1 nodal field.
pub fn triangle_gradients(values: &[f64], mesh: &Mesh) -> Result<Vec<[f64; 2]>> {
    check_len("field", values.len(), mesh.node_count())?;
    Ok((0..mesh.triangles.len())
        .map(|t| {
            let geom = tri_geom(mesh, t);
            tri_gradient(values, mesh.triangles[t], &geom)
        })
        .collect())
}

/// ‖u‖_{L^p(Ω)} by the midpoint rule.
pub fn norm_lp(values: &[f64], p: f64, mesh: &Mesh) -> f64 {
    let mut acc = 0.0;
    for t in 0..mesh.triangles.len() {
        let tri = mesh.triangles[t];
        let w = mesh.triangle_area(t) / 3.0;
        for shapes in MID_SHAPES {
            let uq: f64 = (0..3).map(|k| shapes[k] * values[tri[k]]).sum();
            acc += w * uq.abs().powf(p);
        }
    }
    acc.powf(1.0 / p)
}

/// ∫_{Γtag} |u|^e dΓ by 2-point Gauss.
pub fn boundary_integral_abs_pow(values: &[f64], e: f64, mesh: &Mesh, tag: GammaTag) -> f64 {
    let mut acc = 0.0;
    for edge in mesh.edges_with_tag(tag) {
        let [a, b] = edge.nodes;
        let len = mesh.edge_length(edge);
        for t in EDGE_GAUSS {
            let uq = (1.0 - t) * values[a] + t * values[b];
            acc += 0.5 * len * uq.abs().powf(e);
        }
    }
    acc
}

/// ‖u‖_{L^p(Γtag)}.
pub fn boundary_norm_lp(values: &[f64], p: f64, mesh: &Mesh, tag: GammaTag) -> f64 {
    boundary_integral_abs_pow(values, p, mesh, tag).powf(1.0 / p)
}

// ---------------------------------------------------------------------------
// diagnostics
// ---------------------------------------------------------------------------

/// Coercivity diagnostic: the discrete evaluation of both sides of the
/// pre-embedding stage of the lower-bound chain,
///   ⟨Au+Bu+αLu, u⟩  ≥  ‖u‖_V^p + μ‖∇u‖_q^q + β‖u‖_θ^θ
///                      − α b ( a_l|Γ3| + b_l|Γ3| + b_l ∫_{Γ3}|u|^{p-1} ).
/// Returns (pairing, lower bound).
pub fn coercivity_check(
    u: &Field,
    params: &PdeParams,
    law: &BoundaryLaw,
    mesh: &Mesh,
) -> Result<(f64, f64)> {
    let pairing = apply_a(u, u, params, mesh)?
        + apply_b(u, u, params, mesh)?
        + params.alpha * apply_l(u, u, law, params, mesh)?;
    let (a_l, b_l) = law.growth_constants(params.p, params.b, mesh);
    let g3 = mesh.boundary_length(GammaTag::Gamma3);
    let vnorm = norm_v(&u.values, params.p, mesh);
    let qnorm = grad_norm_ls(&u.values, params.q, mesh);
    let tnorm = norm_lp(&u.values, params.theta, mesh);
    let trace = boundary_integral_abs_pow(&u.values, params.p - 1.0, mesh, GammaTag::Gamma3);
    let bound = vnorm.powf(params.p) + params.mu * qnorm.powf(params.q)
        + params.beta * tnorm.powf(params.theta)
        - params.alpha * params.b * (a_l * g3 + b_l * g3 + b_l * trace);
    Ok((pairing, bound))
}

/// Right-hand side of the dual-norm estimate
/// ‖Au‖_{V*} ≤ ‖u‖_V^{p-1} + μ‖∇u‖_{L^{(q-1)p'}}^{q-1}.
pub fn boundedness_bound(u: &Field, params: &PdeParams, mesh: &Mesh) -> f64 {
    let pp = params.conjugate_p();
    let vnorm = norm_v(&u.values, params.p, mesh);
    let mixed = grad_norm_ls(&u.values, (params.q - 1.0) * pp, mesh);
    vnorm.powf(params.p - 1.0) + params.mu * mixed.powf(params.q - 1.0)
}

/// Lower estimate of ‖F‖_{V*} = sup ⟨F,v⟩/‖v‖_V over sampled directions
/// vanishing on Γ1.
pub fn dual_norm_sampled(f: &[f64], p: f64, mesh: &Mesh, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g1 = mesh.nodes_with_tag(GammaTag::Gamma1);
    let mut best = 0.0f64;
    for _ in 0..samples {
        let mut v: Vec<f64> = (0..mesh.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for &i in &g1 {
            v[i] = 0.0;
        }
        let nv = norm_v(&v, p, mesh);
        if nv == 0.0 {
            continue;
        }
        let pairing: f64 = f.iter().zip(&v).map(|(a, b)| a * b).sum();
        best = best.max(pairing.abs() / nv);
    }
    best
}

/// Exact discrete dual norm at p = 2 through the Riesz map of the V inner
/// product (the Γ1-constrained Laplace stiffness): ‖F‖ = sqrt(Fᵀ K⁻¹ F).
pub fn dual_norm_riesz_p2(f: &[f64], mesh: &Mesh) -> Result<f64> {
    check_len("dual vector", f.len(), mesh.node_count())?;
    let mut k = SymBanded::zeros(mesh.node_count(), mesh.half_bandwidth());
    for t in 0..mesh.triangles.len() {
        let tri = mesh.triangles[t];
        let geom = tri_geom(mesh, t);
        for a in 0..3 {
            for b in a..3 {
                let ga = geom.grad[a];
                let gb = geom.grad[b];
                k.add(tri[a], tri[b], geom.area * (ga[0] * gb[0] + ga[1] * gb[1]));
            }
        }
    }
    let mut rhs = f.to_vec();
    for i in mesh.nodes_with_tag(GammaTag::Gamma1) {
        k.set_identity_row_col(i);
        rhs[i] = 0.0;
    }
    let z = k.factor()?.solve(&rhs);
    Ok(rhs.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt())
}
