//! Test and demo meshes: tetrahedron, flat-grid tori and a genus-two
//! surface built as the connected sum of two tori.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::surface::{self, MarkedSurface, PhMetric};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tetrahedron() -> MarkedSurface {
    MarkedSurface::new(4, vec![[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]]).expect("tetrahedron")
}

fn torus_faces(rows: usize, cols: usize, offset: usize) -> Vec<[usize; 3]> {
    let id = |r: usize, c: usize| offset + (r % rows) * cols + (c % cols);
    let mut faces = Vec::with_capacity(2 * rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (v00, v10, v01, v11) = (id(r, c), id(r + 1, c), id(r, c + 1), id(r + 1, c + 1));
            faces.push([v00, v10, v11]);
            faces.push([v00, v11, v01]);
        }
    }
    faces
}

/// Periodic `rows x cols` grid with one diagonal per cell; simplicial for
/// `rows, cols >= 3`.
pub fn torus(rows: usize, cols: usize) -> Result<MarkedSurface> {
    if rows < 3 || cols < 3 {
        return Err(Error::Combinatorics("torus grid needs at least 3 x 3 cells".into()));
    }
    MarkedSurface::new(rows * cols, torus_faces(rows, cols, 0))
}

/// Connected sum of two tori along a six-triangle tube.
pub fn genus_two_grid(rows: usize, cols: usize) -> Result<MarkedSurface> {
    if rows < 3 || cols < 3 {
        return Err(Error::Combinatorics("torus grid needs at least 3 x 3 cells".into()));
    }
    let per = rows * cols;
    let mut a = torus_faces(rows, cols, 0);
    let mut b = torus_faces(rows, cols, per);
    let hole_a = a.remove(0);
    let hole_b = b.remove(0);
    let ring_a = hole_a;
    let ring_b = [hole_b[0], hole_b[2], hole_b[1]];
    let mut faces = a;
    faces.extend(b);
    for i in 0..3 {
        let n = (i + 1) % 3;
        faces.push([ring_a[i], ring_a[n], ring_b[n]]);
        faces.push([ring_a[i], ring_b[n], ring_b[i]]);
    }
    MarkedSurface::new(2 * per, faces)
}

/// The standard genus-two fixture: two 4 x 4 tori, 32 vertices.
pub fn genus_two() -> Result<MarkedSurface> {
    genus_two_grid(4, 4)
}

/// Unit lengths multiplied by `1 + amplitude * U(-1, 1)`.
pub fn perturbed_unit_lengths(surf: &MarkedSurface, amplitude: f64, seed: u64) -> Result<PhMetric> {
    let mut r = rng(seed);
    let lengths = (0..surf.n_edges()).map(|_| 1.0 + amplitude * r.random_range(-1.0..1.0)).collect();
    let m = PhMetric::new(surf, lengths)?;
    surface::validate(surf, &m)?;
    Ok(m)
}

/// A perturbed, conformally scaled and Delaunay-flipped copy of `surf`.
/// Retries with fresh draws until the scaled metric is admissible.
pub fn random_delaunay_state(
    surf: &MarkedSurface,
    length_amplitude: f64,
    u_amplitude: f64,
    seed: u64,
) -> Result<(MarkedSurface, PhMetric)> {
    let mut r = rng(seed);
    for _ in 0..100 {
        let lengths: Vec<f64> =
            (0..surf.n_edges()).map(|_| 1.0 + length_amplitude * r.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..surf.n_vertices()).map(|_| u_amplitude * r.random_range(-1.0..1.0)).collect();
        let mut s = surf.clone();
        let Ok(mut m) = PhMetric::new(&s, lengths) else { continue };
        if surface::validate(&s, &m).is_err() || m.apply_u(&s, &u).is_err() {
            continue;
        }
        m.rebase();
        if surface::validate(&s, &m).is_err() {
            continue;
        }
        if surface::make_delaunay(&mut s, &mut m).is_ok() {
            return Ok((s, m));
        }
    }
    Err(Error::Combinatorics("could not draw an admissible random state".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let t = torus(4, 5).unwrap();
        assert_eq!((t.n_vertices(), t.n_edges(), t.n_faces()), (20, 60, 40));
        let g = genus_two().unwrap();
        assert_eq!((g.n_vertices(), g.n_edges(), g.n_faces()), (32, 102, 68));
        let g3 = genus_two_grid(3, 3).unwrap();
        assert_eq!(g3.euler_characteristic(), -2);
    }

    #[test]
    fn random_states_are_delaunay() {
        let g = genus_two().unwrap();
        for seed in 0..3 {
            let (s, m) = random_delaunay_state(&g, 0.2, 0.4, seed).unwrap();
            assert!(surface::is_delaunay(&s, &m).unwrap());
        }
    }
}
