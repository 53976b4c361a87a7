//! Closed triangulated surfaces carrying a piecewise hyperbolic metric:
//! combinatorics, the Delaunay predicate and edge flips.

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, Corner, TriAngles, TriLengths};

/// Delaunay weights in `[-TOL_DELAUNAY, 0)` are accepted as Delaunay.
pub const TOL_DELAUNAY: f64 = 1e-12;

/// Flip budget of `make_delaunay`, per edge.
pub const FLIP_CAP_PER_EDGE: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    /// Sorted endpoint pair.
    pub ends: [usize; 2],
    pub faces: [usize; 2],
    /// Bumped every time the slot is rebuilt by a flip.
    pub serial: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedSurface {
    n: usize,
    faces: Vec<[usize; 3]>,
    /// `face_edges[f][c]` is the edge opposite corner `c` of face `f`.
    face_edges: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    #[serde(skip)]
    lookup: HashMap<(usize, usize), usize>,
    next_serial: u64,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl MarkedSurface {
    /// Builds the edge structure and checks that the faces describe a
    /// connected, closed, consistently oriented 2-manifold.
    pub fn new(n: usize, faces: Vec<[usize; 3]>) -> Result<Self> {
        let bad = |msg: String| Err(Error::Combinatorics(msg));
        if faces.is_empty() {
            return bad("no faces".into());
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (f, tri) in faces.iter().enumerate() {
            for &v in tri {
                if v >= n {
                    return bad(format!("face {f} references vertex {v} >= {n}"));
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return bad(format!("face {f} repeats a vertex: {tri:?}"));
            }
            for c in 0..3 {
                let (a, b) = (tri[c], tri[(c + 1) % 3]);
                if let Some(g) = directed.insert((a, b), f) {
                    return bad(format!(
                        "half-edge {a}->{b} used by faces {g} and {f} (inconsistent orientation or non-manifold edge)"
                    ));
                }
            }
        }
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) {
                return bad(format!("boundary edge ({a}, {b})"));
            }
        }

        let mut edges = Vec::new();
        let mut lookup = HashMap::new();
        let mut face_edges = vec![[usize::MAX; 3]; faces.len()];
        for (f, tri) in faces.iter().enumerate() {
            for c in 0..3 {
                let (a, b) = (tri[(c + 1) % 3], tri[(c + 2) % 3]);
                let k = key(a, b);
                let id = *lookup.entry(k).or_insert_with(|| {
                    edges.push(Edge { ends: [k.0, k.1], faces: [usize::MAX; 2], serial: 0 });
                    edges.len() - 1
                });
                face_edges[f][c] = id;
                let slot = if a < b { 0 } else { 1 };
                edges[id].faces[slot] = f;
            }
        }

        let surf = MarkedSurface { n, faces, face_edges, edges, lookup, next_serial: 1 };
        surf.check_vertex_links()?;
        surf.check_connected()?;
        Ok(surf)
    }

    fn check_vertex_links(&self) -> Result<()> {
        // around each vertex the incident faces must form a single cycle
        let mut next: Vec<HashMap<usize, usize>> = vec![HashMap::new(); self.n];
        for tri in &self.faces {
            for c in 0..3 {
                let v = tri[c];
                next[v].insert(tri[(c + 1) % 3], tri[(c + 2) % 3]);
            }
        }
        for (v, link) in next.iter().enumerate() {
            let Some((&start, _)) = link.iter().min_by_key(|(k, _)| **k) else {
                return Err(Error::Combinatorics(format!("vertex {v} has no incident face")));
            };
            let mut cur = start;
            let mut steps = 0;
            loop {
                cur = link[&cur];
                steps += 1;
                if cur == start {
                    break;
                }
                if steps > link.len() {
                    return Err(Error::Combinatorics(format!("vertex {v} has a broken link")));
                }
            }
            if steps != link.len() {
                return Err(Error::Combinatorics(format!("vertex {v} is non-manifold (link has several cycles)")));
            }
        }
        Ok(())
    }

    fn check_connected(&self) -> Result<()> {
        let mut seen = vec![false; self.faces.len()];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(f) = stack.pop() {
            for &e in &self.face_edges[f] {
                for &g in &self.edges[e].faces {
                    if !seen[g] {
                        seen[g] = true;
                        count += 1;
                        stack.push(g);
                    }
                }
            }
        }
        if count != self.faces.len() {
            return Err(Error::Combinatorics("surface is not connected".into()));
        }
        Ok(())
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face(&self, f: usize) -> [usize; 3] {
        self.faces[f]
    }

    /// Edge ids of face `f`, indexed by the opposite corner.
    pub fn face_edges(&self, f: usize) -> [usize; 3] {
        self.face_edges[f]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    pub fn edge_between(&self, a: usize, b: usize) -> Option<usize> {
        self.lookup.get(&key(a, b)).copied()
    }

    /// Rebuilds the endpoint lookup, needed after deserializing.
    pub fn reindex(&mut self) {
        self.lookup = self.edges.iter().enumerate().map(|(id, e)| ((e.ends[0], e.ends[1]), id)).collect();
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.n as i64 - self.edges.len() as i64 + self.faces.len() as i64
    }

    pub fn vertex_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for e in &self.edges {
            deg[e.ends[0]] += 1;
            deg[e.ends[1]] += 1;
        }
        deg
    }

    /// The two faces at `e` as a quadrilateral `k-i-l-j`, where `f0 = (i, j, k)`
    /// and `f1 = (j, i, l)` in their orientations.
    pub fn quad(&self, e: usize) -> Quad {
        let edge = &self.edges[e];
        let (a, b) = (edge.ends[0], edge.ends[1]);
        let [fa, fb] = edge.faces;
        // fa holds a -> b
        let tri0 = self.faces[fa];
        let tri1 = self.faces[fb];
        let pos = |tri: [usize; 3], v: usize| tri.iter().position(|&x| x == v).unwrap();
        let ci0 = pos(tri0, a);
        let cj0 = pos(tri0, b);
        let ck0 = 3 - ci0 - cj0;
        let ci1 = pos(tri1, a);
        let cj1 = pos(tri1, b);
        let cl1 = 3 - ci1 - cj1;
        Quad {
            edge: e,
            i: a,
            j: b,
            k: tri0[ck0],
            l: tri1[cl1],
            f0: fa,
            f1: fb,
            f0_corners: [Corner::from_index(ci0), Corner::from_index(cj0), Corner::from_index(ck0)],
            f1_corners: [Corner::from_index(ci1), Corner::from_index(cj1), Corner::from_index(cl1)],
        }
    }
}

/// Two faces sharing an edge `{i, j}`; `k` is the apex of `f0` and `l` the apex of `f1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub edge: usize,
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub l: usize,
    pub f0: usize,
    pub f1: usize,
    /// Corners of `i`, `j`, `k` inside `f0`.
    pub f0_corners: [Corner; 3],
    /// Corners of `i`, `j`, `l` inside `f1`.
    pub f1_corners: [Corner; 3],
}

/// Edge lengths of the current triangulation plus the epoch data used for
/// vertex scaling: `length = scaled_length(base_length, u - epoch_u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhMetric {
    pub length: Vec<f64>,
    pub base_length: Vec<f64>,
    pub epoch_u: Vec<f64>,
    /// Cumulative conformal factor the current lengths correspond to.
    pub scaled_u: Vec<f64>,
}

impl PhMetric {
    pub fn new(surf: &MarkedSurface, length: Vec<f64>) -> Result<Self> {
        if length.len() != surf.n_edges() {
            return Err(Error::Dimension { expected: surf.n_edges(), got: length.len() });
        }
        if let Some(&l) = length.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::BadLength(l));
        }
        let n = surf.n_vertices();
        Ok(PhMetric { base_length: length.clone(), length, epoch_u: vec![0.0; n], scaled_u: vec![0.0; n] })
    }

    /// Lengths given per endpoint pair.
    pub fn from_fn(surf: &MarkedSurface, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let lengths = surf.edges().iter().map(|e| f(e.ends[0], e.ends[1])).collect();
        Self::new(surf, lengths)
    }

    pub fn face_lengths(&self, surf: &MarkedSurface, f: usize) -> TriLengths {
        let [ei, ej, ek] = surf.face_edges(f);
        TriLengths { l_ij: self.length[ek], l_ik: self.length[ej], l_jk: self.length[ei] }
    }

    /// Vertex scaling of the epoch base lengths to the cumulative factor `u`.
    /// On error the metric is left untouched.
    pub fn apply_u(&mut self, surf: &MarkedSurface, u: &[f64]) -> Result<()> {
        if u.len() != surf.n_vertices() {
            return Err(Error::Dimension { expected: surf.n_vertices(), got: u.len() });
        }
        let mut next = Vec::with_capacity(self.length.len());
        for (e, edge) in surf.edges().iter().enumerate() {
            let [a, b] = edge.ends;
            next.push(kernel::scaled_length(self.base_length[e], u[a] - self.epoch_u[a], u[b] - self.epoch_u[b])?);
        }
        self.length = next;
        self.scaled_u.copy_from_slice(u);
        Ok(())
    }

    /// Starts a new epoch at the current lengths.
    pub fn rebase(&mut self) {
        self.base_length.clone_from(&self.length);
        self.epoch_u.clone_from(&self.scaled_u);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipEvent {
    pub edge_id: usize,
    pub old_edge: (usize, usize),
    pub new_edge: (usize, usize),
    /// Delaunay weight of the old edge when it was flipped.
    pub pre_weight: f64,
    pub time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub chi: i64,
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub min_slack: f64,
    pub min_slack_face: usize,
}

pub fn euler_characteristic(surf: &MarkedSurface) -> i64 {
    surf.euler_characteristic()
}

/// Combinatorics are checked on construction; this checks the metric.
pub fn validate(surf: &MarkedSurface, m: &PhMetric) -> Result<ValidationReport> {
    if m.length.len() != surf.n_edges() {
        return Err(Error::Dimension { expected: surf.n_edges(), got: m.length.len() });
    }
    let chi = surf.euler_characteristic();
    if chi > 2 || chi % 2 != 0 {
        return Err(Error::Combinatorics(format!("Euler characteristic {chi} is not an even integer <= 2")));
    }
    let mut min_slack = f64::INFINITY;
    let mut min_slack_face = 0;
    for f in 0..surf.n_faces() {
        let l = m.face_lengths(surf, f);
        for x in [l.l_ij, l.l_ik, l.l_jk] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::BadLength(x));
            }
        }
        if !l.is_admissible() {
            return Err(Error::InadmissibleFace { face: f, l0: l.l_ij, l1: l.l_ik, l2: l.l_jk });
        }
        let s = l.min_slack();
        if s < min_slack {
            min_slack = s;
            min_slack_face = f;
        }
    }
    Ok(ValidationReport {
        chi,
        vertices: surf.n_vertices(),
        edges: surf.n_edges(),
        faces: surf.n_faces(),
        min_slack,
        min_slack_face,
    })
}

fn face_angles(surf: &MarkedSurface, m: &PhMetric, f: usize) -> Result<TriAngles> {
    let l = m.face_lengths(surf, f);
    kernel::tri_angles(&l).map_err(|_| Error::InadmissibleFace { face: f, l0: l.l_ij, l1: l.l_ik, l2: l.l_jk })
}

/// `(a_i + a_j)_{f0} + (a_i + a_j)_{f1} - a_k - a_l`; the edge is Delaunay iff this is `>= 0`.
pub fn delaunay_weight(surf: &MarkedSurface, m: &PhMetric, e: usize) -> Result<f64> {
    let q = surf.quad(e);
    let a0 = face_angles(surf, m, q.f0)?;
    let a1 = face_angles(surf, m, q.f1)?;
    let [ci0, cj0, ck0] = q.f0_corners;
    let [ci1, cj1, cl1] = q.f1_corners;
    Ok((a0.at(ci0) + a0.at(cj0) + a1.at(ci1) + a1.at(cj1)) - (a0.at(ck0) + a1.at(cl1)))
}

/// Every edge's Delaunay weight, computing each face's angles once.
pub fn delaunay_weights(surf: &MarkedSurface, m: &PhMetric) -> Result<Vec<f64>> {
    let angles = (0..surf.n_faces()).map(|f| face_angles(surf, m, f)).collect::<Result<Vec<_>>>()?;
    Ok((0..surf.n_edges())
        .map(|e| {
            let q = surf.quad(e);
            let (a0, a1) = (&angles[q.f0], &angles[q.f1]);
            let [ci0, cj0, ck0] = q.f0_corners;
            let [ci1, cj1, cl1] = q.f1_corners;
            (a0.at(ci0) + a0.at(cj0) + a1.at(ci1) + a1.at(cj1)) - (a0.at(ck0) + a1.at(cl1))
        })
        .collect())
}

/// Edges with weight below `-tol`, with their weights.
pub fn violating_edges(surf: &MarkedSurface, m: &PhMetric, tol: f64) -> Result<Vec<(usize, f64)>> {
    Ok(delaunay_weights(surf, m)?.into_iter().enumerate().filter(|(_, w)| *w < -tol).collect())
}

pub fn is_delaunay(surf: &MarkedSurface, m: &PhMetric) -> Result<bool> {
    Ok(violating_edges(surf, m, TOL_DELAUNAY)?.is_empty())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    I,
    J,
}

/// Length of the other diagonal `{k, l}` by the cosine law at one end of
/// `e`, without convexity checks. In half-length form:
/// `sinh^2(d/2) = sinh^2((a - b)/2) + sinh a sinh b sin^2(theta/2)`.
pub fn diagonal_length_from(surf: &MarkedSurface, m: &PhMetric, e: usize, side: Side) -> Result<f64> {
    let q = surf.quad(e);
    let a0 = face_angles(surf, m, q.f0)?;
    let a1 = face_angles(surf, m, q.f1)?;
    let l0 = m.face_lengths(surf, q.f0);
    let l1 = m.face_lengths(surf, q.f1);
    let [ci0, cj0, ck0] = q.f0_corners;
    let [ci1, cj1, cl1] = q.f1_corners;
    let (theta, a, b) = match side {
        Side::I => (a0.at(ci0) + a1.at(ci1), l0.between(ci0, ck0), l1.between(ci1, cl1)),
        Side::J => (a0.at(cj0) + a1.at(cj1), l0.between(cj0, ck0), l1.between(cj1, cl1)),
    };
    Ok(quad_diagonal(a, b, theta))
}

fn quad_diagonal(a: f64, b: f64, theta: f64) -> f64 {
    let sd = (0.5 * (a - b)).sinh();
    let sh = (0.5 * theta).sin();
    let s2 = sd * sd + a.sinh() * b.sinh() * sh * sh;
    2.0 * s2.sqrt().asinh()
}

/// Quadrilateral angle sums at `i` and `j`.
fn quad_corner_sums(surf: &MarkedSurface, m: &PhMetric, q: &Quad) -> Result<(f64, f64)> {
    let a0 = face_angles(surf, m, q.f0)?;
    let a1 = face_angles(surf, m, q.f1)?;
    Ok((a0.at(q.f0_corners[0]) + a1.at(q.f1_corners[0]), a0.at(q.f0_corners[1]) + a1.at(q.f1_corners[1])))
}

/// Length of the new diagonal `{k, l}` if `e` were flipped.
pub fn diagonal_length(surf: &MarkedSurface, m: &PhMetric, e: usize) -> Result<f64> {
    let q = surf.quad(e);
    let (ti, tj) = quad_corner_sums(surf, m, &q)?;
    if ti >= PI || tj >= PI {
        return Err(Error::NotFlippable { edge: e, reason: format!("quadrilateral not convex (corner sums {ti}, {tj})") });
    }
    let d = diagonal_length_from(surf, m, e, Side::I)?;
    let l0 = m.face_lengths(surf, q.f0);
    let l1 = m.face_lengths(surf, q.f1);
    let d_ik = l0.between(q.f0_corners[0], q.f0_corners[2]);
    let d_jk = l0.between(q.f0_corners[1], q.f0_corners[2]);
    let d_il = l1.between(q.f1_corners[0], q.f1_corners[2]);
    let d_jl = l1.between(q.f1_corners[1], q.f1_corners[2]);
    let new0 = TriLengths { l_ij: d_ik, l_ik: d_il, l_jk: d };
    let new1 = TriLengths { l_ij: d_jk, l_ik: d_jl, l_jk: d };
    if !(d.is_finite() && d > 0.0 && new0.is_admissible() && new1.is_admissible()) {
        return Err(Error::DegenerateFlip);
    }
    Ok(d)
}

/// Replaces `(i, j, k), (j, i, l)` by `(k, i, l), (l, j, k)`. The edge keeps
/// its slot id. The metric is rebased so that every edge starts a new epoch.
pub fn flip_edge(surf: &mut MarkedSurface, m: &mut PhMetric, e: usize) -> Result<FlipEvent> {
    let q = surf.quad(e);
    if q.f0 == q.f1 {
        return Err(Error::NotFlippable { edge: e, reason: "self-adjacent face".into() });
    }
    if q.k == q.l {
        return Err(Error::NotFlippable { edge: e, reason: "flip would create a self-loop".into() });
    }
    if surf.edge_between(q.k, q.l).is_some() {
        return Err(Error::NotFlippable { edge: e, reason: format!("edge ({}, {}) already exists", q.k, q.l) });
    }
    let pre_weight = delaunay_weight(surf, m, e)?;
    let d = diagonal_length(surf, m, e)?;

    let (i, j, k, l) = (q.i, q.j, q.k, q.l);
    let e_il = surf.edge_between(i, l).expect("quad edge");
    let e_jk = surf.edge_between(j, k).expect("quad edge");

    surf.faces[q.f0] = [k, i, l];
    surf.faces[q.f1] = [l, j, k];
    surf.lookup.remove(&key(i, j));
    let nk = key(k, l);
    surf.lookup.insert(nk, e);
    let serial = surf.next_serial;
    surf.next_serial += 1;
    surf.edges[e] = Edge { ends: [nk.0, nk.1], faces: [usize::MAX; 2], serial };
    for (edge, from, to) in [(e_il, q.f1, q.f0), (e_jk, q.f0, q.f1)] {
        for slot in surf.edges[edge].faces.iter_mut() {
            if *slot == from {
                *slot = to;
            }
        }
    }
    for f in [q.f0, q.f1] {
        let tri = surf.faces[f];
        for c in 0..3 {
            let (a, b) = (tri[(c + 1) % 3], tri[(c + 2) % 3]);
            let id = surf.lookup[&key(a, b)];
            surf.face_edges[f][c] = id;
            if id == e {
                let slot = if a < b { 0 } else { 1 };
                surf.edges[e].faces[slot] = f;
            }
        }
    }

    m.length[e] = d;
    m.rebase();
    Ok(FlipEvent { edge_id: e, old_edge: (i, j), new_edge: (k, l), pre_weight, time: None })
}

/// Flips edges until every Delaunay weight is `>= -TOL_DELAUNAY`.
pub fn make_delaunay(surf: &mut MarkedSurface, m: &mut PhMetric) -> Result<Vec<FlipEvent>> {
    make_delaunay_with_tol(surf, m, TOL_DELAUNAY)
}

/// Most negative weight first, ties broken by edge id.
pub fn make_delaunay_with_tol(surf: &mut MarkedSurface, m: &mut PhMetric, tol: f64) -> Result<Vec<FlipEvent>> {
    let cap = FLIP_CAP_PER_EDGE * surf.n_edges();
    let mut log = Vec::new();
    let mut refused: HashSet<usize> = HashSet::new();
    loop {
        let mut bad = violating_edges(surf, m, tol)?;
        if bad.is_empty() {
            return Ok(log);
        }
        bad.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let Some(&(e, _)) = bad.iter().find(|(e, _)| !refused.contains(e)) else {
            return Err(Error::DelaunayStuck(bad.iter().map(|(e, _)| *e).collect()));
        };
        if log.len() >= cap {
            return Err(Error::FlipCap { cap, state: describe(surf, m) });
        }
        match flip_edge(surf, m, e) {
            Ok(ev) => {
                log::debug!("flip {:?} -> {:?} (weight {:e})", ev.old_edge, ev.new_edge, ev.pre_weight);
                log.push(ev);
                refused.clear();
            }
            Err(err @ (Error::NotFlippable { .. } | Error::DegenerateFlip)) => {
                log::debug!("flip of edge {e} refused: {err}");
                refused.insert(e);
            }
            Err(err) => return Err(err),
        }
    }
}

fn describe(surf: &MarkedSurface, m: &PhMetric) -> String {
    let faces: Vec<String> = surf.faces().iter().map(|t| format!("{} {} {}", t[0], t[1], t[2])).collect();
    let edges: Vec<String> =
        surf.edges().iter().zip(&m.length).map(|(e, l)| format!("{} {} {:.17e}", e.ends[0], e.ends[1], l)).collect();
    format!("v {}; f [{}]; e [{}]", surf.n_vertices(), faces.join(", "), edges.join(", "))
}
