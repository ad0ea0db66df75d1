//! Linear face model and its on-disk archive.
//!
//! Archive layout (all integers `u32`, all reals `f32`, little-endian):
//!
//! ```text
//! magic "GLMM" | version | V | N_s | N_e | N_l
//! mean mesh          V·3 reals, row-major (vertex, xyz)
//! shape bases        N_s·V·3 reals, basis-major
//! expression bases   N_e·V·3 reals, basis-major
//! landmark vertex ids N_l integers
//! group count G, then per group:
//!     length n | closed flag (u8) | n × (landmark index, endpoint flag u8)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::NUM_LANDMARKS;

pub const NUM_SHAPE: usize = 60;
pub const NUM_EXPR: usize = 51;
const MAGIC: &[u8; 4] = b"GLMM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Ordered landmark indices forming one polyline of the face outline.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContourGroup {
    pub landmarks: Vec<usize>,
    /// Whether the last landmark connects back to the first.
    pub closed: bool,
    /// Per-member flag: endpoints are matched point-to-point.
    pub endpoints: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MorphableModel {
    mean: Vec<[f64; 3]>,
    shape_bases: Vec<Vec<[f64; 3]>>,
    expr_bases: Vec<Vec<[f64; 3]>>,
    landmark_ids: Vec<usize>,
    groups: Vec<ContourGroup>,
    /// Landmark rows of `[S | E]`, `(3·N_l) × (N_s + N_e)` row-major.
    landmark_basis: Vec<f64>,
    /// For each landmark: (group, position within group).
    membership: Vec<(usize, usize)>,
}

impl MorphableModel {
    pub fn new(
        mean: Vec<[f64; 3]>,
        shape_bases: Vec<Vec<[f64; 3]>>,
        expr_bases: Vec<Vec<[f64; 3]>>,
        landmark_ids: Vec<usize>,
        groups: Vec<ContourGroup>,
    ) -> Result<Self> {
        let v = mean.len();
        if v < NUM_LANDMARKS {
            return Err(Error::InvalidInput(format!(
                "model needs at least {NUM_LANDMARKS} vertices, got {v}"
            )));
        }
        if shape_bases.iter().chain(&expr_bases).any(|b| b.len() != v) {
            return Err(Error::Shape(
                "every basis must have the mean mesh's vertex count".into(),
            ));
        }
        if mean
            .iter()
            .chain(shape_bases.iter().flatten())
            .chain(expr_bases.iter().flatten())
            .flatten()
            .any(|x| !x.is_finite())
        {
            return Err(Error::InvalidInput("model arrays must be finite".into()));
        }
        if landmark_ids.len() != NUM_LANDMARKS {
            return Err(Error::InvalidInput(format!(
                "expected {NUM_LANDMARKS} landmark vertex ids, got {}",
                landmark_ids.len()
            )));
        }
        let mut seen = vec![false; v];
        for &id in &landmark_ids {
            if id >= v || std::mem::replace(&mut seen[id], true) {
                return Err(Error::InvalidInput(format!(
                    "landmark vertex id {id} is out of range or repeated"
                )));
            }
        }
        let mut membership = vec![None; NUM_LANDMARKS];
        for (gi, g) in groups.iter().enumerate() {
            if g.landmarks.len() != g.endpoints.len() || g.landmarks.len() < 2 {
                return Err(Error::InvalidInput(format!("contour group {gi} is malformed")));
            }
            for (pos, &l) in g.landmarks.iter().enumerate() {
                if l >= NUM_LANDMARKS || membership[l].is_some() {
                    return Err(Error::InvalidInput(format!(
                        "landmark {l} is out of range or in two contour groups"
                    )));
                }
                membership[l] = Some((gi, pos));
            }
        }
        let membership = membership
            .into_iter()
            .enumerate()
            .map(|(l, m)| m.ok_or_else(|| Error::InvalidInput(format!("landmark {l} has no contour group"))))
            .collect::<Result<Vec<_>>>()?;

        let k = shape_bases.len() + expr_bases.len();
        let mut landmark_basis = vec![0.0; 3 * NUM_LANDMARKS * k];
        for (li, &vid) in landmark_ids.iter().enumerate() {
            for (bi, basis) in shape_bases.iter().chain(&expr_bases).enumerate() {
                for d in 0..3 {
                    landmark_basis[(3 * li + d) * k + bi] = basis[vid][d];
                }
            }
        }
        Ok(MorphableModel {
            mean,
            shape_bases,
            expr_bases,
            landmark_ids,
            groups,
            landmark_basis,
            membership,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.mean.len()
    }

    pub fn num_shape(&self) -> usize {
        self.shape_bases.len()
    }

    pub fn num_expr(&self) -> usize {
        self.expr_bases.len()
    }

    pub fn mean(&self) -> &[[f64; 3]] {
        &self.mean
    }

    pub fn shape_basis(&self, i: usize) -> &[[f64; 3]] {
        &self.shape_bases[i]
    }

    pub fn expr_basis(&self, i: usize) -> &[[f64; 3]] {
        &self.expr_bases[i]
    }

    pub fn landmark_ids(&self) -> &[usize] {
        &self.landmark_ids
    }

    pub fn contour_groups(&self) -> &[ContourGroup] {
        &self.groups
    }

    /// `(group index, position in group)` of a landmark.
    pub fn group_of(&self, landmark: usize) -> (usize, usize) {
        self.membership[landmark]
    }

    pub fn is_endpoint(&self, landmark: usize) -> bool {
        let (g, p) = self.membership[landmark];
        self.groups[g].endpoints[p]
    }

    fn check_coefficients(&self, f_s: &[f64], f_exp: &[f64]) -> Result<()> {
        if f_s.len() != self.num_shape() || f_exp.len() != self.num_expr() {
            return Err(Error::Shape(format!(
                "model takes {} shape and {} expression coefficients, got {} and {}",
                self.num_shape(),
                self.num_expr(),
                f_s.len(),
                f_exp.len()
            )));
        }
        Ok(())
    }

    /// `M0 + Σ S_i·f_s[i] + Σ E_j·f_exp[j]`.
    pub fn synthesize_mesh(&self, f_s: &[f64], f_exp: &[f64]) -> Result<Vec<[f64; 3]>> {
        self.check_coefficients(f_s, f_exp)?;
        let mut mesh = self.mean.clone();
        let terms = self
            .shape_bases
            .iter()
            .zip(f_s)
            .chain(self.expr_bases.iter().zip(f_exp));
        for (basis, &c) in terms {
            if c == 0.0 {
                continue;
            }
            for (m, b) in mesh.iter_mut().zip(basis) {
                for d in 0..3 {
                    m[d] += c * b[d];
                }
            }
        }
        Ok(mesh)
    }

    /// The 68 landmark vertices of the synthesized mesh.
    pub fn landmark_vertices(&self, f_s: &[f64], f_exp: &[f64]) -> Result<Vec<[f64; 3]>> {
        self.check_coefficients(f_s, f_exp)?;
        let k = self.num_shape() + self.num_expr();
        let coeffs: Vec<f64> = f_s.iter().chain(f_exp).copied().collect();
        Ok(self
            .landmark_ids
            .iter()
            .enumerate()
            .map(|(li, &vid)| {
                let mut p = self.mean[vid];
                for d in 0..3 {
                    let row = &self.landmark_basis[(3 * li + d) * k..(3 * li + d + 1) * k];
                    p[d] += row.iter().zip(&coeffs).map(|(a, b)| a * b).sum::<f64>();
                }
                p
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        for n in [
            MODEL_FORMAT_VERSION,
            self.num_vertices() as u32,
            self.num_shape() as u32,
            self.num_expr() as u32,
            NUM_LANDMARKS as u32,
        ] {
            buf.extend_from_slice(&n.to_le_bytes());
        }
        let verts = std::iter::once(&self.mean)
            .chain(&self.shape_bases)
            .chain(&self.expr_bases)
            .flatten()
            .flatten();
        for &x in verts {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        for &id in &self.landmark_ids {
            buf.extend_from_slice(&(id as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.groups.len() as u32).to_le_bytes());
        for g in &self.groups {
            buf.extend_from_slice(&(g.landmarks.len() as u32).to_le_bytes());
            buf.push(g.closed as u8);
            for (&l, &e) in g.landmarks.iter().zip(&g.endpoints) {
                buf.extend_from_slice(&(l as u32).to_le_bytes());
                buf.push(e as u8);
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::parse(path, 0, msg.to_string());
        let mut r = ByteReader { bytes: &bytes, pos: 0 };
        if r.take(4).ok_or_else(|| bad("truncated header"))? != MAGIC {
            return Err(bad("not a morphable model archive"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        }
        let [v, ns, ne, nl] = dims;
        if nl != NUM_LANDMARKS {
            return Err(bad("archive does not hold 68 landmarks"));
        }
        let mesh = |r: &mut ByteReader| -> Result<Vec<[f64; 3]>> {
            (0..v)
                .map(|_| {
                    let mut p = [0.0; 3];
                    for x in &mut p {
                        *x = r.f32().ok_or_else(|| bad("truncated vertex data"))? as f64;
                    }
                    Ok(p)
                })
                .collect()
        };
        let mean = mesh(&mut r)?;
        let shape = (0..ns).map(|_| mesh(&mut r)).collect::<Result<Vec<_>>>()?;
        let expr = (0..ne).map(|_| mesh(&mut r)).collect::<Result<Vec<_>>>()?;
        let ids = (0..nl)
            .map(|_| r.u32().map(|x| x as usize).ok_or_else(|| bad("truncated landmark ids")))
            .collect::<Result<Vec<_>>>()?;
        let ng = r.u32().ok_or_else(|| bad("truncated contour groups"))? as usize;
        let mut groups = Vec::with_capacity(ng);
        for _ in 0..ng {
            let trunc = || bad("truncated contour groups");
            let n = r.u32().ok_or_else(trunc)? as usize;
            let closed = r.u8().ok_or_else(trunc)? != 0;
            let mut landmarks = Vec::with_capacity(n);
            let mut endpoints = Vec::with_capacity(n);
            for _ in 0..n {
                landmarks.push(r.u32().ok_or_else(trunc)? as usize);
                endpoints.push(r.u8().ok_or_else(trunc)? != 0);
            }
            groups.push(ContourGroup {
                landmarks,
                closed,
                endpoints,
            });
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after contour groups"));
        }
        MorphableModel::new(mean, shape, expr, ids, groups)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }
}
