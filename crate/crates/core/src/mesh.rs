//! Density lattices, marching cubes and OBJ export.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use hng_tensor::{no_grad, Tensor};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::RadianceField;
use crate::mc_tables::{CORNERS, EDGES, TRIANGLES};
use crate::vec3::{self, Vec3};

/// Densities on a `G³` lattice spanning `[−1,1]³`, indexed `(i·G + j)·G + k`
/// for the point `(x_i, y_j, z_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub resolution: usize,
    pub values: Vec<f64>,
}

pub fn lattice_coord(i: usize, g: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (g - 1) as f64
}

impl DensityGrid {
    pub fn new(resolution: usize, values: Vec<f64>) -> Result<DensityGrid> {
        if resolution < 8 {
            return Err(Error::contract(format!(
                "grid resolution {resolution} is below 8"
            )));
        }
        if values.len() != resolution.pow(3) {
            return Err(Error::contract(
                "grid value count does not match resolution",
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("grid holds non-finite densities"));
        }
        Ok(DensityGrid { resolution, values })
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        let g = self.resolution;
        self.values[(i * g + j) * g + k]
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let g = self.resolution;
        [
            lattice_coord(i, g),
            lattice_coord(j, g),
            lattice_coord(k, g),
        ]
    }

    /// Lattice points of the slab `x = x_i`, in storage order.
    pub fn slab_points(g: usize, i: usize) -> Vec<f64> {
        let x = lattice_coord(i, g);
        (0..g)
            .flat_map(|j| (0..g).flat_map(move |k| [x, lattice_coord(j, g), lattice_coord(k, g)]))
            .collect()
    }
}

/// Samples the field density on the lattice, one batch per x-slab.
pub fn density_grid(field: &dyn RadianceField, g: usize) -> Result<DensityGrid> {
    if g < 8 {
        return Err(Error::contract(format!("grid resolution {g} is below 8")));
    }
    let slabs: Vec<Vec<f64>> = (0..g)
        .into_par_iter()
        .map(|i| {
            no_grad(|| {
                let pts = Tensor::new(&[g * g, 3], DensityGrid::slab_points(g, i))?;
                Ok(field.eval(&pts)?.density.to_vec())
            })
        })
        .collect::<Result<_>>()?;
    DensityGrid::new(g, slabs.concat())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

pub fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    0.5 * vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)))
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    fn edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        !self.triangles.is_empty() && self.edge_counts().values().all(|&c| c == 2)
    }

    /// `V − E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        self.triangles
            .iter()
            .flatten()
            .for_each(|&v| used[v] = true);
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }
}

/// Isosurface at level `tau`; corners with density `>= tau` count as inside
/// and triangles wind counter-clockwise seen from outside.
pub fn marching_cubes(grid: &DensityGrid, tau: f64) -> TriangleMesh {
    let g = grid.resolution;
    let idx = |i: usize, j: usize, k: usize| (i * g + j) * g + k;
    let below = |i, j, k| grid.at(i, j, k) < tau;

    // one vertex per crossed lattice edge, ordered by (point, axis)
    let mut edge_vertex = vec![u32::MAX; g * g * g * 3];
    let mut vertices = Vec::new();
    for i in 0..g {
        for j in 0..g {
            for k in 0..g {
                let p = [i, j, k];
                for axis in 0..3 {
                    if p[axis] + 1 >= g {
                        continue;
                    }
                    let mut q = p;
                    q[axis] += 1;
                    let (a, b) = (grid.at(i, j, k), grid.at(q[0], q[1], q[2]));
                    if (a < tau) == (b < tau) {
                        continue;
                    }
                    let t = (tau - a) / (b - a);
                    let (pa, pb) = (grid.point(i, j, k), grid.point(q[0], q[1], q[2]));
                    edge_vertex[idx(i, j, k) * 3 + axis] = vertices.len() as u32;
                    vertices.push(vec3::add(pa, vec3::scale(vec3::sub(pb, pa), t)));
                }
            }
        }
    }

    let global_edge = |cell: [usize; 3], e: usize| -> usize {
        let [c0, c1] = EDGES[e];
        let (o0, o1) = (CORNERS[c0], CORNERS[c1]);
        let axis = (0..3)
            .find(|&a| o0[a] != o1[a])
            .expect("edge spans one axis");
        let low = if o0[axis] == 0 { o0 } else { o1 };
        let p = idx(cell[0] + low[0], cell[1] + low[1], cell[2] + low[2]);
        edge_vertex[p * 3 + axis] as usize
    };

    let triangles: Vec<[usize; 3]> = (0..g - 1)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut out = Vec::new();
            for j in 0..g - 1 {
                for k in 0..g - 1 {
                    let mut case = 0usize;
                    for (bit, o) in CORNERS.iter().enumerate() {
                        if below(i + o[0], j + o[1], k + o[2]) {
                            case |= 1 << bit;
                        }
                    }
                    for tri in TRIANGLES[case].chunks_exact(3).take_while(|t| t[0] >= 0) {
                        out.push([0, 1, 2].map(|n| global_edge([i, j, k], tri[n] as usize)));
                    }
                }
            }
            out
        })
        .collect();

    compact(vertices, triangles)
}

// drops vertices no triangle references, keeping lattice order
fn compact(vertices: Vec<Vec3>, mut triangles: Vec<[usize; 3]>) -> TriangleMesh {
    let mut remap = vec![usize::MAX; vertices.len()];
    triangles.iter().flatten().for_each(|&v| remap[v] = 0);
    let mut kept = Vec::new();
    for (i, v) in vertices.into_iter().enumerate() {
        if remap[i] == 0 {
            remap[i] = kept.len();
            kept.push(v);
        }
    }
    triangles.iter_mut().flatten().for_each(|v| *v = remap[*v]);
    TriangleMesh {
        vertices: kept,
        triangles,
    }
}

pub fn obj_string(mesh: &TriangleMesh) -> String {
    let mut s = String::from("# hng mesh\n");
    for v in &mesh.vertices {
        writeln!(s, "v {:.9} {:.9} {:.9}", v[0], v[1], v[2]).expect("string write");
    }
    for t in &mesh.triangles {
        writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("string write");
    }
    s
}

pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    std::fs::write(path, obj_string(mesh)).map_err(|e| Error::io(path, e))
}
