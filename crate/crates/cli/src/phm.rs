//! The `.phm` text format: a closed oriented triangulation and one length
//! per undirected edge.
//!
//! ```text
//! phm 1
//! v 4
//! f 0 1 2
//! e 0 1 1.0
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;

use hypflow::surface::{MarkedSurface, PhMetric};

use crate::FormatError;

#[derive(Debug, Clone, PartialEq)]
pub struct PhmFile {
    pub n: usize,
    pub faces: Vec<[usize; 3]>,
    /// `(i, j, length)` in file order.
    pub edges: Vec<(usize, usize, f64)>,
}

fn fields<'a, const K: usize>(line: usize, rest: &[&'a str], what: &str) -> Result<[&'a str; K], FormatError> {
    rest.try_into().map_err(|_| FormatError::parse(line, format!("`{what}` takes {K} fields, got {}", rest.len())))
}

fn index(line: usize, tok: &str) -> Result<usize, FormatError> {
    tok.parse().map_err(|_| FormatError::parse(line, format!("bad vertex index `{tok}`")))
}

pub(crate) fn number(line: usize, tok: &str) -> Result<f64, FormatError> {
    match tok.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(FormatError::parse(line, format!("bad number `{tok}`"))),
    }
}

impl PhmFile {
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, "phm 1")) => {}
            Some((no, other)) => return Err(FormatError::parse(no, format!("expected header `phm 1`, got `{other}`"))),
            None => return Err(FormatError::parse(1, "empty file".into())),
        }
        let mut n = None;
        let mut faces = Vec::new();
        let mut edges = Vec::new();
        for (no, line) in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            let check = |i: usize, n: Option<usize>| match n {
                None => Err(FormatError::parse(no, "`v` must come before faces and edges".into())),
                Some(n) if i >= n => Err(FormatError::parse(no, format!("vertex {i} out of range (v {n})"))),
                Some(_) => Ok(i),
            };
            match toks[0] {
                "v" => {
                    if n.is_some() {
                        return Err(FormatError::parse(no, "repeated `v` record".into()));
                    }
                    let [c] = fields::<1>(no, &toks[1..], "v")?;
                    n = Some(index(no, c)?);
                }
                "f" => {
                    let [a, b, c] = fields::<3>(no, &toks[1..], "f")?;
                    faces.push([check(index(no, a)?, n)?, check(index(no, b)?, n)?, check(index(no, c)?, n)?]);
                }
                "e" => {
                    let [a, b, len] = fields::<3>(no, &toks[1..], "e")?;
                    let (i, j) = (check(index(no, a)?, n)?, check(index(no, b)?, n)?);
                    let len = number(no, len)?;
                    if len <= 0.0 {
                        return Err(FormatError::parse(no, format!("edge ({i}, {j}) has non-positive length {len}")));
                    }
                    edges.push((i, j, len));
                }
                other => return Err(FormatError::parse(no, format!("unknown record `{other}`"))),
            }
        }
        let n = n.ok_or_else(|| FormatError::parse(1, "missing `v` record".into()))?;
        Ok(PhmFile { n, faces, edges })
    }

    /// Builds the surface and matches each face edge with exactly one `e`
    /// record. Does not check admissibility.
    pub fn to_surface(&self) -> Result<(MarkedSurface, PhMetric), FormatError> {
        let surf = MarkedSurface::new(self.n, self.faces.clone())?;
        let mut given: HashMap<(usize, usize), f64> = HashMap::new();
        for &(i, j, len) in &self.edges {
            let key = (i.min(j), i.max(j));
            if surf.edge_between(i, j).is_none() {
                return Err(FormatError::UnknownEdge(key.0, key.1));
            }
            if given.insert(key, len).is_some() {
                return Err(FormatError::DuplicateEdge(key.0, key.1));
            }
        }
        let mut lengths = Vec::with_capacity(surf.n_edges());
        for e in surf.edges() {
            let [i, j] = e.ends;
            lengths.push(*given.get(&(i, j)).ok_or(FormatError::MissingEdge(i, j))?);
        }
        let metric = PhMetric::new(&surf, lengths)?;
        Ok((surf, metric))
    }

    /// Current triangulation and lengths of a state.
    pub fn from_state(surf: &MarkedSurface, m: &PhMetric) -> Self {
        PhmFile {
            n: surf.n_vertices(),
            faces: surf.faces().to_vec(),
            edges: surf.edges().iter().zip(&m.length).map(|(e, l)| (e.ends[0], e.ends[1], *l)).collect(),
        }
    }

    /// Lengths are printed with 17 significant digits.
    pub fn write(&self) -> String {
        let mut out = format!("phm 1\nv {}\n", self.n);
        for [a, b, c] in &self.faces {
            writeln!(out, "f {a} {b} {c}").unwrap();
        }
        for (i, j, l) in &self.edges {
            writeln!(out, "e {i} {j} {l:.16e}").unwrap();
        }
        out
    }
}
