//! Structured triangulations of rectangles with the three-part boundary split
//! Γ = Γ1 ∪ Γ2 ∪ Γ3.
//!
//! Conventions:
//! - Nodes of the structured mesh are row-major: node (ix, iy) has index
//!   `iy*(n+1) + ix` and sits at `(x0 + ix*hx, y0 + iy*hy)`.
//! - Every square cell is split along the same diagonal (lower-left to
//!   upper-right); triangles are counterclockwise.
//! - Boundary edges are oriented counterclockwise around the domain, so the
//!   outward normal of edge (a→b) is the edge tangent rotated by -90°.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Tag for one part of the boundary decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum GammaTag {
    /// Homogeneous Dirichlet part (u = 0); must have positive measure.
    Gamma1,
    /// Neumann part carrying the prescribed flux r.
    Gamma2,
    /// Transfer part: Dirichlet level b (DND) or the nonlinear flux law (DNN).
    Gamma3,
}

impl GammaTag {
    pub fn as_str(self) -> &'static str {
        match self {
            GammaTag::Gamma1 => "gamma1",
            GammaTag::Gamma2 => "gamma2",
            GammaTag::Gamma3 => "gamma3",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gamma1" => Ok(GammaTag::Gamma1),
            "gamma2" => Ok(GammaTag::Gamma2),
            "gamma3" => Ok(GammaTag::Gamma3),
            other => Err(Error::Parse(format!("unknown boundary tag `{other}`"))),
        }
    }
}

/// Which boundary value problem a field or constraint set belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ProblemKind {
    /// Dirichlet(0) on Γ1, Neumann on Γ2, Dirichlet(b) on Γ3.
    Dnd,
    /// Dirichlet(0) on Γ1, Neumann on Γ2, nonlinear flux law on Γ3.
    Dnn,
}

/// Assignment of tags to the four sides of a rectangle.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryLayout {
    pub left: GammaTag,
    pub right: GammaTag,
    pub bottom: GammaTag,
    pub top: GammaTag,
}

impl Default for BoundaryLayout {
    fn default() -> Self {
        BoundaryLayout {
            left: GammaTag::Gamma1,
            right: GammaTag::Gamma3,
            bottom: GammaTag::Gamma2,
            top: GammaTag::Gamma2,
        }
    }
}

impl BoundaryLayout {
    fn sides(&self) -> [GammaTag; 4] {
        [self.left, self.right, self.bottom, self.top]
    }
}

/// Axis-aligned rectangle (a,b)×(c,d).
#[derive(Clone, Copy, Debug)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Default for Rect {
    fn default() -> Self {
        Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 }
    }
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }
    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// A boundary edge (pair of node indices, CCW-oriented) with its tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: GammaTag,
}

/// 2D conforming triangulation with tagged boundary edges.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Subdivisions per side of the generating structured grid.
    pub n: usize,
}

impl Mesh {
    /// Structured triangulation of the unit square with `n` subdivisions per
    /// side. Rejects `n = 0` and layouts that leave Γ1 empty.
    pub fn unit_square(n: usize, layout: BoundaryLayout) -> Result<Mesh> {
        Mesh::rectangle(n, layout, Rect::default())
    }

    /// Structured triangulation of `rect`, an affine image of the unit-square
    /// mesher.
    pub fn rectangle(n: usize, layout: BoundaryLayout, rect: Rect) -> Result<Mesh> {
        if n == 0 {
            return Err(Error::Mesh("subdivision count n must be >= 1".into()));
        }
        if rect.width() <= 0.0 || rect.height() <= 0.0 {
            return Err(Error::Mesh("rectangle must have positive width and height".into()));
        }
        if !layout.sides().contains(&GammaTag::Gamma1) {
            return Err(Error::Mesh(
                "layout leaves Gamma1 empty; it must have positive measure".into(),
            ));
        }
        let m = n + 1;
        let hx = rect.width() / n as f64;
        let hy = rect.height() / n as f64;
        let mut nodes = Vec::with_capacity(m * m);
        for iy in 0..m {
            for ix in 0..m {
                nodes.push([rect.x0 + ix as f64 * hx, rect.y0 + iy as f64 * hy]);
            }
        }
        let idx = |ix: usize, iy: usize| iy * m + ix;
        let mut triangles = Vec::with_capacity(2 * n * n);
        for iy in 0..n {
            for ix in 0..n {
                let ll = idx(ix, iy);
                let lr = idx(ix + 1, iy);
                let ur = idx(ix + 1, iy + 1);
                let ul = idx(ix, iy + 1);
                triangles.push([ll, lr, ur]);
                triangles.push([ll, ur, ul]);
            }
        }
        // CCW traversal: bottom, right, top, left.
        let mut boundary_edges = Vec::with_capacity(4 * n);
        for ix in 0..n {
            boundary_edges.push(BoundaryEdge { nodes: [idx(ix, 0), idx(ix + 1, 0)], tag: layout.bottom });
        }
        for iy in 0..n {
            boundary_edges.push(BoundaryEdge { nodes: [idx(n, iy), idx(n, iy + 1)], tag: layout.right });
        }
        for ix in (0..n).rev() {
            boundary_edges.push(BoundaryEdge { nodes: [idx(ix + 1, n), idx(ix, n)], tag: layout.top });
        }
        for iy in (0..n).rev() {
            boundary_edges.push(BoundaryEdge { nodes: [idx(0, iy + 1), idx(0, iy)], tag: layout.left });
        }
        let mesh = Mesh { nodes, triangles, boundary_edges, n };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let pa = self.nodes[a];
        let pb = self.nodes[b];
        let pc = self.nodes[c];
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn edge_length(&self, e: &BoundaryEdge) -> f64 {
        let a = self.nodes[e.nodes[0]];
        let b = self.nodes[e.nodes[1]];
        ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
    }

    pub fn boundary_length(&self, tag: GammaTag) -> f64 {
        self.boundary_edges
            .iter()
            .filter(|e| e.tag == tag)
            .map(|e| self.edge_length(e))
            .sum()
    }

    pub fn edges_with_tag(&self, tag: GammaTag) -> impl Iterator<Item = &BoundaryEdge> {
        self.boundary_edges.iter().filter(move |e| e.tag == tag)
    }

    /// Sorted, de-duplicated node indices incident to edges with `tag`.
    pub fn nodes_with_tag(&self, tag: GammaTag) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .edges_with_tag(tag)
            .flat_map(|e| e.nodes.iter().copied())
            .collect();
        set.into_iter().collect()
    }

    /// Outward unit normal of boundary edge `edge_index`.
    pub fn boundary_normal(&self, edge_index: usize) -> Result<[f64; 2]> {
        let e = self
            .boundary_edges
            .get(edge_index)
            .ok_or_else(|| Error::Mesh(format!("edge index {edge_index} is not a boundary edge")))?;
        let a = self.nodes[e.nodes[0]];
        let b = self.nodes[e.nodes[1]];
        let tx = b[0] - a[0];
        let ty = b[1] - a[1];
        let len = (tx * tx + ty * ty).sqrt();
        Ok([ty / len, -tx / len])
    }

    /// Max node-index spread over any triangle; the half-bandwidth of
    /// assembled matrices.
    pub fn half_bandwidth(&self) -> usize {
        self.triangles
            .iter()
            .map(|t| {
                let mx = t.iter().max().unwrap();
                let mn = t.iter().min().unwrap();
                mx - mn
            })
            .max()
            .unwrap_or(0)
    }

    /// Min/max interior angle over all triangles, in degrees. Attached to
    /// comparison-check reports when a nodewise principle fails beyond
    /// tolerance.
    pub fn angle_stats(&self) -> (f64, f64) {
        let mut min_a = f64::INFINITY;
        let mut max_a = f64::NEG_INFINITY;
        for t in &self.triangles {
            for k in 0..3 {
                let p0 = self.nodes[t[k]];
                let p1 = self.nodes[t[(k + 1) % 3]];
                let p2 = self.nodes[t[(k + 2) % 3]];
                let v1 = [p1[0] - p0[0], p1[1] - p0[1]];
                let v2 = [p2[0] - p0[0], p2[1] - p0[1]];
                let dot = v1[0] * v2[0] + v1[1] * v2[1];
                let n1 = (v1[0] * v1[0] + v1[1] * v1[1]).sqrt();
                let n2 = (v2[0] * v2[0] + v2[1] * v2[1]).sqrt();
                let ang = (dot / (n1 * n2)).clamp(-1.0, 1.0).acos().to_degrees();
                min_a = min_a.min(ang);
                max_a = max_a.max(ang);
            }
        }
        (min_a, max_a)
    }

    /// Uniform refinement: each triangle splits into 4 through its edge
    /// midpoints; boundary tags are inherited. Original nodes keep their
    /// indices; midpoints are appended in sorted-edge order, which is what
    /// [`prolong`] mirrors.
    pub fn refine(&self) -> Mesh {
        let midpoints = self.midpoint_index();
        let mut nodes = self.nodes.clone();
        for &(a, b) in midpoints.keys() {
            let pa = self.nodes[a];
            let pb = self.nodes[b];
            nodes.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
        }
        let mid = |a: usize, b: usize| midpoints[&(a.min(b), a.max(b))];
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let mab = mid(a, b);
            let mbc = mid(b, c);
            let mca = mid(c, a);
            triangles.push([a, mab, mca]);
            triangles.push([b, mbc, mab]);
            triangles.push([c, mca, mbc]);
            triangles.push([mab, mbc, mca]);
        }
        let mut boundary_edges = Vec::with_capacity(2 * self.boundary_edges.len());
        for e in &self.boundary_edges {
            let [a, b] = e.nodes;
            let m = mid(a, b);
            boundary_edges.push(BoundaryEdge { nodes: [a, m], tag: e.tag });
            boundary_edges.push(BoundaryEdge { nodes: [m, b], tag: e.tag });
        }
        Mesh { nodes, triangles, boundary_edges, n: self.n * 2 }
    }

    fn midpoint_index(&self) -> BTreeMap<(usize, usize), usize> {
        let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        for &[a, b, c] in &self.triangles {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                edges.insert((u.min(v), u.max(v)));
            }
        }
        edges
            .into_iter()
            .enumerate()
            .map(|(k, e)| (e, self.nodes.len() + k))
            .collect()
    }

    /// Structural validity: positive triangle areas, every boundary edge used
    /// by exactly one triangle and every interior edge by exactly two, tags
    /// partition the boundary, and Γ1 nonempty.
    pub fn validate(&self) -> Result<()> {
        let n_nodes = self.node_count();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= n_nodes) {
                return Err(Error::Mesh(format!("triangle {t} references a missing node")));
            }
            let area = self.triangle_area(t);
            if area <= 0.0 {
                return Err(Error::Mesh(format!(
                    "triangle {t} has non-positive signed area {area:.3e}"
                )));
            }
        }
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for &[a, b, c] in &self.triangles {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                *edge_count.entry((u.min(v), u.max(v))).or_insert(0) += 1;
            }
        }
        let mut tagged: BTreeSet<(usize, usize)> = BTreeSet::new();
        for e in &self.boundary_edges {
            let [a, b] = e.nodes;
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::Mesh("boundary edge references a missing node".into()));
            }
            let key = (a.min(b), a.max(b));
            if !tagged.insert(key) {
                return Err(Error::Mesh(format!(
                    "boundary edge ({a},{b}) carries more than one tag"
                )));
            }
            match edge_count.get(&key) {
                Some(1) => {}
                Some(k) => {
                    return Err(Error::Mesh(format!(
                        "tagged edge ({a},{b}) is shared by {k} triangles; boundary edges must belong to exactly one"
                    )))
                }
                None => {
                    return Err(Error::Mesh(format!(
                        "tagged edge ({a},{b}) is not an edge of any triangle"
                    )))
                }
            }
        }
        let boundary_total = edge_count.values().filter(|&&k| k == 1).count();
        if boundary_total != tagged.len() {
            return Err(Error::Mesh(format!(
                "tag partition incomplete: {} boundary edges, {} tagged",
                boundary_total,
                tagged.len()
            )));
        }
        if edge_count.values().any(|&k| k > 2) {
            return Err(Error::Mesh("an edge is shared by more than two triangles".into()));
        }
        if self.nodes_with_tag(GammaTag::Gamma1).is_empty() {
            return Err(Error::Mesh("Gamma1 is empty; it must have positive measure".into()));
        }
        Ok(())
    }

    /// Plain-text serialization: node table, triangle table, tagged-edge
    /// table, one record per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pqmesh 1");
        let _ = writeln!(s, "n {}", self.n);
        let _ = writeln!(s, "nodes {}", self.nodes.len());
        for (i, p) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "{} {:.16e} {:.16e}", i, p[0], p[1]);
        }
        let _ = writeln!(s, "triangles {}", self.triangles.len());
        for (i, t) in self.triangles.iter().enumerate() {
            let _ = writeln!(s, "{} {} {} {}", i, t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "edges {}", self.boundary_edges.len());
        for (i, e) in self.boundary_edges.iter().enumerate() {
            let _ = writeln!(s, "{} {} {} {}", i, e.nodes[0], e.nodes[1], e.tag.as_str());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Mesh> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines
                .next()
                .map(|(i, l)| (i + 1, l.trim()))
                .ok_or_else(|| Error::Parse(format!("mesh file truncated, expected {what}")))
        };
        let (ln, header) = next("header")?;
        if header != "pqmesh 1" {
            return Err(Error::Parse(format!("line {ln}: expected `pqmesh 1` header")));
        }
        let parse_count = |line: &str, ln: usize, key: &str| -> Result<usize> {
            let mut it = line.split_whitespace();
            match (it.next(), it.next()) {
                (Some(k), Some(v)) if k == key => v
                    .parse()
                    .map_err(|_| Error::Parse(format!("line {ln}: bad count `{v}`"))),
                _ => Err(Error::Parse(format!("line {ln}: expected `{key} <count>`"))),
            }
        };
        let (ln, l) = next("n")?;
        let n = parse_count(l, ln, "n")?;
        let (ln, l) = next("nodes")?;
        let n_nodes = parse_count(l, ln, "nodes")?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for k in 0..n_nodes {
            let (ln, l) = next("node record")?;
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 3 || f[0].parse::<usize>().ok() != Some(k) {
                return Err(Error::Parse(format!("line {ln}: expected `{k} <x> <y>`")));
            }
            let x: f64 = f[1].parse().map_err(|_| Error::Parse(format!("line {ln}: bad x")))?;
            let y: f64 = f[2].parse().map_err(|_| Error::Parse(format!("line {ln}: bad y")))?;
            nodes.push([x, y]);
        }
        let (ln, l) = next("triangles")?;
        let n_tri = parse_count(l, ln, "triangles")?;
        let mut triangles = Vec::with_capacity(n_tri);
        for k in 0..n_tri {
            let (ln, l) = next("triangle record")?;
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 4 || f[0].parse::<usize>().ok() != Some(k) {
                return Err(Error::Parse(format!("line {ln}: expected `{k} <a> <b> <c>`")));
            }
            let mut t = [0usize; 3];
            for (slot, s) in t.iter_mut().zip(&f[1..]) {
                *slot = s.parse().map_err(|_| Error::Parse(format!("line {ln}: bad node index")))?;
            }
            triangles.push(t);
        }
        let (ln, l) = next("edges")?;
        let n_edges = parse_count(l, ln, "edges")?;
        let mut boundary_edges = Vec::with_capacity(n_edges);
        for k in 0..n_edges {
            let (ln, l) = next("edge record")?;
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 4 || f[0].parse::<usize>().ok() != Some(k) {
                return Err(Error::Parse(format!("line {ln}: expected `{k} <a> <b> <tag>`")));
            }
            let a: usize = f[1].parse().map_err(|_| Error::Parse(format!("line {ln}: bad node index")))?;
            let b: usize = f[2].parse().map_err(|_| Error::Parse(format!("line {ln}: bad node index")))?;
            boundary_edges.push(BoundaryEdge { nodes: [a, b], tag: GammaTag::parse(f[3])? });
        }
        let mesh = Mesh { nodes, triangles, boundary_edges, n };
        mesh.validate()?;
        Ok(mesh)
    }
}

/// Interpolate a nodal field from `coarse` onto `coarse.refine()`: original
/// nodes copy, midpoints average their edge endpoints.
pub fn prolong(coarse: &Mesh, values: &[f64]) -> Result<Vec<f64>> {
    if values.len() != coarse.node_count() {
        return Err(Error::SizeMismatch {
            context: "prolong values".into(),
            expected: coarse.node_count(),
            got: values.len(),
        });
    }
    let midpoints = coarse.midpoint_index();
    let mut out = values.to_vec();
    out.resize(coarse.node_count() + midpoints.len(), 0.0);
    for (&(a, b), &m) in &midpoints {
        out[m] = 0.5 * (values[a] + values[b]);
    }
    Ok(out)
}

/// Prescribed nodal values encoding membership in V (u=0 on Γ1) and, for DND,
/// in K (additionally u=b on Γ3). When a node is shared by Γ1 and Γ3 edges
/// (corner layouts), the Γ1 value 0 takes precedence.
#[derive(Clone, Debug)]
pub struct DirichletSpec {
    pub kind: ProblemKind,
    values: Vec<Option<f64>>,
}

impl DirichletSpec {
    pub fn new(mesh: &Mesh, kind: ProblemKind, b: f64) -> DirichletSpec {
        let mut values = vec![None; mesh.node_count()];
        if kind == ProblemKind::Dnd {
            for i in mesh.nodes_with_tag(GammaTag::Gamma3) {
                values[i] = Some(b);
            }
        }
        for i in mesh.nodes_with_tag(GammaTag::Gamma1) {
            values[i] = Some(0.0);
        }
        DirichletSpec { kind, values }
    }

    pub fn dnn(mesh: &Mesh) -> DirichletSpec {
        DirichletSpec::new(mesh, ProblemKind::Dnn, 0.0)
    }

    pub fn dnd(mesh: &Mesh, b: f64) -> DirichletSpec {
        DirichletSpec::new(mesh, ProblemKind::Dnd, b)
    }

    pub fn is_constrained(&self, node: usize) -> bool {
        self.values[node].is_some()
    }

    pub fn value(&self, node: usize) -> Option<f64> {
        self.values[node]
    }

    pub fn constrained(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
    }

    /// Overwrite the constrained entries of `values` with their prescribed
    /// data.
    pub fn apply(&self, values: &mut [f64]) {
        for (i, v) in self.constrained() {
            values[i] = v;
        }
    }

    /// Reject fields that violate the prescribed data beyond `tol`.
    pub fn check_feasible(&self, values: &[f64], tol: f64) -> Result<()> {
        for (i, v) in self.constrained() {
            if (values[i] - v).abs() > tol {
                return Err(Error::Infeasible { node: i, expected: v, got: values[i] });
            }
        }
        Ok(())
    }
}
