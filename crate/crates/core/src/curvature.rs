//! Vertex curvatures, the Jacobian `L = dK/du` with its diagonal/edge
//! split, the discrete alpha-Laplacian and trajectory energies.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, Corner, TriAngles};
use crate::surface::{MarkedSurface, PhMetric};

/// Cumulative conformal factor `u` with `u(0) = 0`; `w = e^u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalState {
    pub u: Vec<f64>,
}

impl ConformalState {
    pub fn zeros(n: usize) -> Self {
        ConformalState { u: vec![0.0; n] }
    }

    pub fn w(&self) -> Vec<f64> {
        self.u.iter().map(|u| u.exp()).collect()
    }

    /// `w_i^alpha = e^(alpha u_i)`.
    pub fn w_pow(&self, alpha: f64) -> Vec<f64> {
        self.u.iter().map(|u| (alpha * u).exp()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub k: Vec<f64>,
    pub r_alpha: Vec<f64>,
    /// Some face used the constant extension of its angles.
    pub extended: bool,
    /// `sum K - sum area - 2 pi chi`.
    pub gauss_bonnet_residual: f64,
}

pub fn face_angles(surf: &MarkedSurface, m: &PhMetric) -> Result<Vec<TriAngles>> {
    (0..surf.n_faces())
        .map(|f| {
            let l = m.face_lengths(surf, f);
            kernel::tri_angles(&l).map_err(|_| Error::InadmissibleFace { face: f, l0: l.l_ij, l1: l.l_ik, l2: l.l_jk })
        })
        .collect()
}

fn defects(surf: &MarkedSurface, angles: &[TriAngles]) -> Vec<f64> {
    let mut k = vec![2.0 * PI; surf.n_vertices()];
    for (tri, a) in surf.faces().iter().zip(angles) {
        for c in Corner::ALL {
            k[tri[c.index()]] -= a.at(c);
        }
    }
    k
}

/// `K_i = 2 pi - sum of inner angles at i`.
pub fn curvature(surf: &MarkedSurface, m: &PhMetric) -> Result<Vec<f64>> {
    Ok(defects(surf, &face_angles(surf, m)?))
}

/// Curvature with degenerate faces contributing their extended angles.
/// The flag reports whether any face needed the extension.
pub fn extended_curvature(surf: &MarkedSurface, m: &PhMetric) -> Result<(Vec<f64>, bool)> {
    let mut extended = false;
    let mut angles = Vec::with_capacity(surf.n_faces());
    for f in 0..surf.n_faces() {
        let l = m.face_lengths(surf, f);
        extended |= !l.is_admissible();
        angles.push(kernel::extended_angles(&l)?);
    }
    Ok((defects(surf, &angles), extended))
}

/// `R_alpha,i = K_i / w_i^alpha`.
pub fn alpha_curvature(k: &[f64], state: &ConformalState, alpha: f64) -> Vec<f64> {
    k.iter().zip(&state.u).map(|(k, u)| k * (-alpha * u).exp()).collect()
}

/// `sum K_i - sum_f Area(f) - 2 pi chi`, zero by Gauss-Bonnet.
pub fn gauss_bonnet_residual(surf: &MarkedSurface, m: &PhMetric) -> Result<f64> {
    let angles = face_angles(surf, m)?;
    let k = defects(surf, &angles);
    let area: f64 = angles.iter().map(kernel::tri_area).sum();
    Ok(k.iter().sum::<f64>() - area - 2.0 * PI * surf.euler_characteristic() as f64)
}

pub fn report(surf: &MarkedSurface, m: &PhMetric, state: &ConformalState, alpha: f64) -> Result<CurvatureReport> {
    let (k, extended) = extended_curvature(surf, m)?;
    let gauss_bonnet_residual = if extended { f64::NAN } else { gauss_bonnet_residual(surf, m)? };
    Ok(CurvatureReport { r_alpha: alpha_curvature(&k, state, alpha), k, extended, gauss_bonnet_residual })
}

/// `dK/du` stored as `A` (per vertex) and `B` (per edge):
/// `L_ii = A_i + sum_j B_ij`, `L_ij = -B_ij` for adjacent `i, j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianL {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// `L_ii`, accumulated from the diagonal angle derivatives.
    pub diag: Vec<f64>,
    /// Endpoints of each entry of `b`.
    pub ends: Vec<[usize; 2]>,
}

/// Assembles `L` face by face in ascending face order.
///
/// `B_ij` sums `d a_i/d u_j` over the two faces at `{i, j}`; `A_i` sums the
/// area derivatives of the faces at `i`; `L_ii` sums `-d a_i/d u_i`.
pub fn jacobian(surf: &MarkedSurface, m: &PhMetric) -> Result<JacobianL> {
    let n = surf.n_vertices();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; surf.n_edges()];
    let mut diag = vec![0.0; n];
    for f in 0..surf.n_faces() {
        let l = m.face_lengths(surf, f);
        let ang = kernel::tri_angles(&l).map_err(|_| Error::InadmissibleFace { face: f, l0: l.l_ij, l1: l.l_ik, l2: l.l_jk })?;
        let tri = surf.face(f);
        let edges = surf.face_edges(f);
        for c in Corner::ALL {
            let (p, q) = c.others();
            b[edges[c.index()]] += kernel::dangle_du_offdiag(&l, &ang, p, q)?;
            a[tri[c.index()]] += kernel::darea_du(&l, &ang, c)?;
            diag[tri[c.index()]] -= kernel::dangle_du_diag(&l, c)?;
        }
    }
    let ends = surf.edges().iter().map(|e| e.ends).collect();
    Ok(JacobianL { a, b, diag, ends })
}

/// `A` and `B` only; `diag` is filled with `A_i + sum_j B_ij`. For callers
/// that do not need the independent diagonal.
pub fn laplacian(surf: &MarkedSurface, m: &PhMetric) -> Result<JacobianL> {
    let n = surf.n_vertices();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; surf.n_edges()];
    for f in 0..surf.n_faces() {
        let l = m.face_lengths(surf, f);
        let ang = kernel::tri_angles(&l).map_err(|_| Error::InadmissibleFace { face: f, l0: l.l_ij, l1: l.l_ik, l2: l.l_jk })?;
        let tri = surf.face(f);
        let edges = surf.face_edges(f);
        for c in Corner::ALL {
            let (p, q) = c.others();
            b[edges[c.index()]] += kernel::dangle_du_offdiag(&l, &ang, p, q)?;
            a[tri[c.index()]] += kernel::darea_du(&l, &ang, c)?;
        }
    }
    let ends = surf.edges().iter().map(|e| e.ends).collect();
    let mut jac = JacobianL { a, b, diag: Vec::new(), ends };
    jac.diag = jac.assembled_diag();
    Ok(jac)
}

/// `B_ij` of a single edge from its two incident faces.
pub fn edge_weight(surf: &MarkedSurface, m: &PhMetric, e: usize) -> Result<f64> {
    let q = surf.quad(e);
    let mut total = 0.0;
    for (f, [ci, cj, _]) in [(q.f0, q.f0_corners), (q.f1, q.f1_corners)] {
        let l = m.face_lengths(surf, f);
        let ang = kernel::tri_angles(&l).map_err(|_| Error::InadmissibleFace { face: f, l0: l.l_ij, l1: l.l_ik, l2: l.l_jk })?;
        total += kernel::dangle_du_offdiag(&l, &ang, ci, cj)?;
    }
    Ok(total)
}

impl JacobianL {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// `A_i + sum_j B_ij`.
    pub fn assembled_diag(&self) -> Vec<f64> {
        let mut d = self.a.clone();
        for (b, [i, j]) in self.b.iter().zip(&self.ends) {
            d[*i] += b;
            d[*j] += b;
        }
        d
    }

    /// `L x` via the edge sum.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n() {
            return Err(Error::Dimension { expected: self.n(), got: x.len() });
        }
        let mut y: Vec<f64> = self.a.iter().zip(x).map(|(a, x)| a * x).collect();
        for (b, &[i, j]) in self.b.iter().zip(&self.ends) {
            y[i] += b * (x[i] - x[j]);
            y[j] += b * (x[j] - x[i]);
        }
        Ok(y)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut mat = DMatrix::from_diagonal(&DVector::from_vec(self.assembled_diag()));
        for (b, &[i, j]) in self.b.iter().zip(&self.ends) {
            mat[(i, j)] -= b;
            mat[(j, i)] -= b;
        }
        debug_assert_eq!(mat.nrows(), n);
        mat
    }

    pub fn is_positive_definite(&self) -> bool {
        self.to_dense().cholesky().is_some()
    }
}

/// `(Delta_alpha f)_i = sum_j B_ij/w_i^alpha (f_j - f_i) - A_i/w_i^alpha f_i`.
pub fn alpha_laplacian_apply(jac: &JacobianL, state: &ConformalState, alpha: f64, f: &[f64]) -> Result<Vec<f64>> {
    let n = jac.n();
    if f.len() != n || state.u.len() != n {
        return Err(Error::Dimension { expected: n, got: f.len().min(state.u.len()) });
    }
    let mut out: Vec<f64> = jac.a.iter().zip(f).map(|(a, f)| -a * f).collect();
    for (b, &[i, j]) in jac.b.iter().zip(&jac.ends) {
        out[i] += b * (f[j] - f[i]);
        out[j] += b * (f[i] - f[j]);
    }
    for (o, u) in out.iter_mut().zip(&state.u) {
        *o *= (-alpha * u).exp();
    }
    Ok(out)
}

/// Matrix form `-W^{-alpha} L f`.
pub fn alpha_laplacian_dense(jac: &JacobianL, state: &ConformalState, alpha: f64, f: &[f64]) -> Result<Vec<f64>> {
    let n = jac.n();
    if f.len() != n {
        return Err(Error::Dimension { expected: n, got: f.len() });
    }
    let lf = jac.to_dense() * DVector::from_column_slice(f);
    Ok(lf.iter().zip(&state.u).map(|(v, u)| -v * (-alpha * u).exp()).collect())
}

/// Gradient of `W_alpha`: `K_i - target_i w_i^alpha`.
pub fn energy_gradient(k: &[f64], u: &[f64], target: &[f64], alpha: f64) -> Vec<f64> {
    k.iter().zip(u).zip(target).map(|((k, u), t)| k - t * (alpha * u).exp()).collect()
}

/// Trapezoid increment of `int sum_i (K_i - target_i w_i^alpha) du_i` along
/// the straight segment from `u_prev` to `u_curr`.
pub fn energy_increment(
    k_prev: &[f64],
    k_curr: &[f64],
    u_prev: &[f64],
    u_curr: &[f64],
    target: &[f64],
    alpha: f64,
) -> f64 {
    let g0 = energy_gradient(k_prev, u_prev, target, alpha);
    let g1 = energy_gradient(k_curr, u_curr, target, alpha);
    g0.iter().zip(&g1).zip(u_prev.iter().zip(u_curr)).map(|((a, b), (u0, u1))| 0.5 * (a + b) * (u1 - u0)).sum()
}
