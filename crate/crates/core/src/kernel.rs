//! Single hyperbolic triangle: inner angles, area, vertex scaling of edge
//! lengths and the analytic derivatives of angles and area with respect to
//! the conformal factors at the three corners.
//!
//! Corners are labelled `i`, `j`, `k`. The angle at a corner is opposite the
//! edge joining the other two, so `a_i` faces `l_jk`, `a_j` faces `l_ik` and
//! `a_k` faces `l_ij`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-angle tangent pole guard for the off-diagonal angle derivative.
pub const TAN_POLE_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Corner {
    I,
    J,
    K,
}

impl Corner {
    pub const ALL: [Corner; 3] = [Corner::I, Corner::J, Corner::K];

    pub fn index(self) -> usize {
        match self {
            Corner::I => 0,
            Corner::J => 1,
            Corner::K => 2,
        }
    }

    pub fn from_index(idx: usize) -> Corner {
        match idx % 3 {
            0 => Corner::I,
            1 => Corner::J,
            _ => Corner::K,
        }
    }

    /// The two other corners, in cyclic order.
    pub fn others(self) -> (Corner, Corner) {
        let i = self.index();
        (Corner::from_index(i + 1), Corner::from_index(i + 2))
    }

    /// The corner that is neither `self` nor `other`.
    pub fn third(self, other: Corner) -> Corner {
        debug_assert_ne!(self, other);
        Corner::from_index(3 - self.index() - other.index())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriLengths {
    pub l_ij: f64,
    pub l_ik: f64,
    pub l_jk: f64,
}

impl TriLengths {
    pub fn new(l_ij: f64, l_ik: f64, l_jk: f64) -> Result<Self> {
        for l in [l_ij, l_ik, l_jk] {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::BadLength(l));
            }
        }
        Ok(TriLengths { l_ij, l_ik, l_jk })
    }

    /// Length of the edge opposite `c`.
    pub fn opposite(&self, c: Corner) -> f64 {
        match c {
            Corner::I => self.l_jk,
            Corner::J => self.l_ik,
            Corner::K => self.l_ij,
        }
    }

    /// Length of the edge joining corners `p` and `q`.
    pub fn between(&self, p: Corner, q: Corner) -> f64 {
        self.opposite(p.third(q))
    }

    /// Strict triangle inequalities, no tolerance.
    pub fn is_admissible(&self) -> bool {
        let (a, b, c) = (self.l_ij, self.l_ik, self.l_jk);
        a < b + c && b < a + c && c < a + b
    }

    /// Smallest of the three slacks `l_p + l_q - l_r`.
    pub fn min_slack(&self) -> f64 {
        let (a, b, c) = (self.l_ij, self.l_ik, self.l_jk);
        (b + c - a).min(a + c - b).min(a + b - c)
    }

    fn longest_corner(&self) -> Corner {
        // ties resolve to the lowest corner index
        let mut best = Corner::I;
        for c in [Corner::J, Corner::K] {
            if self.opposite(c) > self.opposite(best) {
                best = c;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriAngles {
    pub a_i: f64,
    pub a_j: f64,
    pub a_k: f64,
}

impl TriAngles {
    pub fn at(&self, c: Corner) -> f64 {
        match c {
            Corner::I => self.a_i,
            Corner::J => self.a_j,
            Corner::K => self.a_k,
        }
    }

    pub fn sum(&self) -> f64 {
        self.a_i + self.a_j + self.a_k
    }

    fn degenerate_at(c: Corner) -> TriAngles {
        let mut a = [0.0; 3];
        a[c.index()] = PI;
        TriAngles { a_i: a[0], a_j: a[1], a_k: a[2] }
    }
}

/// Inner angles of an admissible hyperbolic triangle.
///
/// Uses the half-angle form `tan(a/2)^2 = sinh(s-b) sinh(s-c) / (sinh s sinh(s-a))`
/// with `s` the half perimeter, which stays accurate near degeneracy where
/// the cosine law loses digits under `acos`.
pub fn tri_angles(l: &TriLengths) -> Result<TriAngles> {
    if !l.is_admissible() {
        return Err(Error::Inadmissible(l.l_ij, l.l_ik, l.l_jk));
    }
    let s = 0.5 * (l.l_ij + l.l_ik + l.l_jk);
    let sh_s = s.sinh();
    // sinh(s - side opposite each corner)
    let x = Corner::ALL.map(|c| (s - l.opposite(c)).sinh());
    let angle = |c: Corner| {
        let (p, q) = c.others();
        let num = x[p.index()] * x[q.index()];
        let den = sh_s * x[c.index()];
        2.0 * (num / den).sqrt().atan()
    };
    Ok(TriAngles { a_i: angle(Corner::I), a_j: angle(Corner::J), a_k: angle(Corner::K) })
}

/// Angles extended continuously by constants to non-admissible lengths:
/// the corner facing the longest edge gets `pi`, the others `0`.
pub fn extended_angles(l: &TriLengths) -> Result<TriAngles> {
    for x in [l.l_ij, l.l_ik, l.l_jk] {
        if !(x.is_finite() && x > 0.0) {
            return Err(Error::BadLength(x));
        }
    }
    if l.is_admissible() {
        tri_angles(l)
    } else {
        Ok(TriAngles::degenerate_at(l.longest_corner()))
    }
}

/// Hyperbolic area as the angle deficit `pi - (a_i + a_j + a_k)`.
pub fn tri_area(a: &TriAngles) -> f64 {
    (PI - a.sum()).max(0.0)
}

/// Vertex scaling `sinh(l/2) = sinh(d/2) e^(u_a + u_b)`.
pub fn scaled_length(d: f64, u_a: f64, u_b: f64) -> Result<f64> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::BadLength(d));
    }
    let log_scale = u_a + u_b;
    if !log_scale.is_finite() {
        return Err(Error::ScaleOverflow(log_scale));
    }
    let x = (0.5 * d).sinh() * log_scale.exp();
    if !x.is_finite() || x == 0.0 {
        return Err(Error::ScaleOverflow(log_scale));
    }
    Ok(2.0 * x.asinh())
}

/// `d a_at / d u_wrt` for `at != wrt`:
/// `tan((a_at + a_wrt - a_other)/2) / cosh^2(l/2)` with `l` the shared edge.
pub fn dangle_du_offdiag(l: &TriLengths, a: &TriAngles, at: Corner, wrt: Corner) -> Result<f64> {
    if at == wrt {
        return Err(Error::Combinatorics("off-diagonal derivative needs distinct corners".into()));
    }
    let other = at.third(wrt);
    let half = a.at(at) + a.at(wrt) - a.at(other);
    if (half - PI).abs() < TAN_POLE_GUARD || (half + PI).abs() < TAN_POLE_GUARD {
        return Err(Error::TanPole(half));
    }
    let ch = (0.5 * l.between(at, wrt)).cosh();
    Ok((0.5 * half).tan() / (ch * ch))
}

/// `d a_at / d u_at`, always negative on admissible triangles.
///
/// `2 (ch_p^2 + ch_q^2 - 2 ch_o ch_p ch_q + (1 - ch_o)(ch_p + ch_q)) / (A (1 + ch_p)(1 + ch_q))`
/// with `A = sinh l_p sinh l_q sin a_at`, where `l_p`, `l_q` are the edges at
/// the corner and `ch_o = cosh` of the opposite edge.
pub fn dangle_du_diag(l: &TriLengths, at: Corner) -> Result<f64> {
    let angles = tri_angles(l)?;
    let (p, q) = at.others();
    let d_p = l.between(at, p);
    let d_q = l.between(at, q);
    let d_o = l.opposite(at);
    let (cp, cq, co) = (d_p.cosh(), d_q.cosh(), d_o.cosh());
    let sin_a = angles.at(at).sin();
    let area_factor = d_p.sinh() * d_q.sinh() * sin_a;
    if !(area_factor > 0.0) {
        return Err(Error::Inadmissible(l.l_ij, l.l_ik, l.l_jk));
    }
    let num = cp * cp + cq * cq - 2.0 * co * cp * cq + (1.0 - co) * (cp + cq);
    Ok(2.0 * num / (area_factor * (1.0 + cp) * (1.0 + cq)))
}

/// `d Area / d u_at` by the Glickenstein-Thomas combination
/// `d a_p/d u_at (cosh l_p,at - 1) + d a_q/d u_at (cosh l_q,at - 1)`.
pub fn darea_du(l: &TriLengths, a: &TriAngles, at: Corner) -> Result<f64> {
    if !l.is_admissible() {
        return Err(Error::Inadmissible(l.l_ij, l.l_ik, l.l_jk));
    }
    let (p, q) = at.others();
    let cm1 = |x: f64| {
        let s = (0.5 * x).sinh();
        2.0 * s * s
    };
    let dp = dangle_du_offdiag(l, a, p, at)?;
    let dq = dangle_du_offdiag(l, a, q, at)?;
    Ok(dp * cm1(l.between(p, at)) + dq * cm1(l.between(q, at)))
}

/// Largest residual over the three edges of
/// `2 sin((a_p + a_q - a_r)/2) cosh(l_pq/2) = (S_pr^2 + S_qr^2 - S_pq^2) / (S_pr S_qr)`
/// where `S = sinh(l/2)`.
pub fn half_angle_identity_check(l: &TriLengths, a: &TriAngles) -> f64 {
    let mut worst: f64 = 0.0;
    for r in Corner::ALL {
        let (p, q) = r.others();
        let s_pq = (0.5 * l.between(p, q)).sinh();
        let s_pr = (0.5 * l.between(p, r)).sinh();
        let s_qr = (0.5 * l.between(q, r)).sinh();
        let lhs = 2.0 * (0.5 * (a.at(p) + a.at(q) - a.at(r))).sin() * (0.5 * l.between(p, q)).cosh();
        let rhs = (s_pr * s_pr + s_qr * s_qr - s_pq * s_pq) / (s_pr * s_qr);
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}
