//! Named manufactured configurations with closed-form discrete solutions.
//!
//! With β = 0, g = 0, r = 0 on the default unit-square layout, fields of the
//! form u = m·x have elementwise-constant flux, so the discrete residual
//! reduces to a single scalar balance on Γ3 and the P1 solution is nodal
//! exact. These configurations drive the verification harness and the
//! manufactured CLI presets.

use crate::forms::{BoundaryLaw, PdeParams, SourceData};
use crate::geometry::{BoundaryLayout, Mesh};

/// The (p, q, μ, b) family whose DND solution is u = b·x.
pub fn dnd_linear(p: f64, q: f64, mu: f64, b: f64) -> PdeParams {
    PdeParams { p, q, mu, b, beta: 0.0, ..PdeParams::default() }
}

/// The DNN family of the verification harness: p = 2, q = 1.5, μ = 1, β = 0,
/// ω ≡ 1, b = 1, whose solution is m(α)·x with m from the Γ3 flux balance.
pub fn dnn_family(alpha: f64) -> (PdeParams, BoundaryLaw) {
    (PdeParams::default().with_alpha(alpha), BoundaryLaw::power(1.0))
}

/// Mesh + zero sources for a manufactured run.
pub fn homogeneous_setup(n: usize) -> (Mesh, SourceData) {
    let mesh = Mesh::unit_square(n, BoundaryLayout::default()).expect("structured mesh");
    let data = SourceData::zeros(&mesh);
    (mesh, data)
}
