//! Structured rectangular grids and finite-element assembly.
//!
//! The deformation uses tensor-product cubic Hermite elements. Each node carries,
//! per component, the value and all mixed first derivatives `d^m y` for
//! `m in {0,1}^d` (value, `d/dx`, `d/dy`, `d^2/dxdy` in 2D). The resulting field is
//! `C^1` across cells, so second gradients are square integrable and the
//! hyperstress term is conforming.
//!
//! Temperatures live on the same nodes with multilinear (Q1) elements.
//!
//! Volume integrals use 4 Gauss points per axis, which is exact for products of
//! two cubic Hermite functions. Boundary integrals use the same rule on faces.
//! All loops run in a fixed order, so assembly is bitwise reproducible.

use std::sync::Arc;

use nalgebra_sparse::pattern::SparsityPattern;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::material::HyperHessian;
use crate::tensor::{Tensor2, Tensor3, Tensor4};

const GAUSS_X: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GAUSS_W: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// Gauss points per axis.
pub const GAUSS_1D: usize = 4;

/// A face of the box, `axis` plus lower (`x_axis = 0`) or upper side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub upper: bool,
}

impl Face {
    pub const NAMES: [&'static str; 6] = ["x-", "x+", "y-", "y+", "z-", "z+"];

    pub fn new(axis: usize, upper: bool) -> Self {
        Self { axis, upper }
    }

    pub fn name(&self) -> &'static str {
        Self::NAMES[2 * self.axis + self.upper as usize]
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::NAMES
            .iter()
            .position(|n| *n == s)
            .map(|k| Self::new(k / 2, k % 2 == 1))
    }

    pub fn all(d: usize) -> Vec<Face> {
        (0..2 * d).map(|k| Self::new(k / 2, k % 2 == 1)).collect()
    }
}

/// Geometry and boundary partition of a box grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    pub cells: Vec<usize>,
    pub lengths: Vec<f64>,
    /// Faces carrying the identity boundary condition for the deformation.
    pub dirichlet: Vec<Face>,
}

impl GridSpec {
    pub fn square(n: usize) -> Self {
        Self {
            d: 2,
            cells: vec![n, n],
            lengths: vec![1.0, 1.0],
            dirichlet: vec![Face::new(0, false)],
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(2..=3).contains(&self.d) {
            v.push(format!("grid dimension {} must be 2 or 3", self.d));
            return v;
        }
        if self.cells.len() != self.d || self.lengths.len() != self.d {
            v.push(format!("grid needs {} cell counts and lengths", self.d));
            return v;
        }
        if self.cells.iter().any(|&n| n == 0) {
            v.push("every axis needs at least one cell".into());
        }
        if self.lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            v.push("box lengths must be positive".into());
        }
        if self.dirichlet.is_empty() {
            v.push("the Dirichlet part of the boundary must be non-empty".into());
        }
        if self.dirichlet.iter().any(|f| f.axis >= self.d) {
            v.push("Dirichlet face outside the grid dimension".into());
        }
        v
    }
}

/// Degrees of freedom attached to the grid nodes.
///
/// For a deformation each node stores `2^d * d` Hermite coefficients ordered as
/// `(kind, component)`; for a temperature each node stores one value.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalField {
    pub per_node: usize,
    pub values: Vec<f64>,
}

impl NodalField {
    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.per_node
    }

    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        self.values
            .iter()
            .zip(&o.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn axpy(&self, s: f64, o: &Self) -> Self {
        NodalField {
            per_node: self.per_node,
            values: self
                .values
                .iter()
                .zip(&o.values)
                .map(|(a, b)| a + s * b)
                .collect(),
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.axpy(-1.0, o)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Deformation gradients and second gradients at the volume quadrature points.
#[derive(Clone, Debug)]
pub struct Kinematics {
    pub f: Vec<Tensor2>,
    pub g: Vec<Tensor3>,
}

/// Shape-function tables at the Gauss points of one reference cell.
#[derive(Clone, Debug)]
struct RefTables {
    /// Offsets of the points inside a cell, in units of the cell size.
    xi: Vec<[f64; 3]>,
    weight: Vec<f64>,
    h_val: Vec<f64>,
    h_grad: Vec<[f64; 3]>,
    h_hess: Vec<[[f64; 3]; 3]>,
    /// `hess N_a : hess N_b` per point, for the hyperstress Hessian.
    h_hess_gram: Vec<f64>,
    q_val: Vec<f64>,
    q_grad: Vec<[f64; 3]>,
}

/// Shape tables on one boundary face.
#[derive(Clone, Debug)]
struct FaceTables {
    face: Face,
    cells: Vec<usize>,
    xi: Vec<[f64; 3]>,
    weight: Vec<f64>,
    h_val: Vec<f64>,
    q_val: Vec<f64>,
}

/// Precomputed assembly data for one field type.
#[derive(Clone, Debug)]
struct Assembly {
    pattern: Arc<SparsityPattern>,
    /// For each cell, `local x local` positions into the value array (`u32::MAX` = fixed).
    positions: Vec<Vec<u32>>,
}

/// Uniform box grid with cubic Hermite deformations and Q1 temperatures.
#[derive(Clone, Debug)]
pub struct StructuredGrid {
    pub spec: GridSpec,
    pub d: usize,
    pub n: [usize; 3],
    pub h: [f64; 3],
    pub n_nodes: usize,
    pub n_cells: usize,
    node_stride: [usize; 3],
    /// Hermite kinds per node (`2^d`).
    pub kinds: usize,
    /// Scalar Hermite functions per cell (`4^d`).
    pub n_local: usize,
    /// Gauss points per cell.
    pub n_qp_cell: usize,
    refs: RefTables,
    faces: Vec<FaceTables>,
    fixed: Vec<bool>,
    free_index: Vec<usize>,
    pub n_free: usize,
    y_asm: Assembly,
    t_asm: Assembly,
}

/// Cubic Hermite basis on `[0, 1]` for a cell of size `h`, with derivatives in `x`.
fn hermite_1d(k: usize, xi: f64, h: f64) -> [f64; 3] {
    let (x2, x3) = (xi * xi, xi * xi * xi);
    match k {
        0 => [
            1.0 - 3.0 * x2 + 2.0 * x3,
            (-6.0 * xi + 6.0 * x2) / h,
            (-6.0 + 12.0 * xi) / (h * h),
        ],
        1 => [
            h * (xi - 2.0 * x2 + x3),
            1.0 - 4.0 * xi + 3.0 * x2,
            (-4.0 + 6.0 * xi) / h,
        ],
        2 => [
            3.0 * x2 - 2.0 * x3,
            (6.0 * xi - 6.0 * x2) / h,
            (6.0 - 12.0 * xi) / (h * h),
        ],
        3 => [h * (-x2 + x3), -2.0 * xi + 3.0 * x2, (-2.0 + 6.0 * xi) / h],
        _ => unreachable!(),
    }
}

fn bit(x: usize, a: usize) -> usize {
    (x >> a) & 1
}

impl StructuredGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let v = spec.violations();
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        let d = spec.d;
        let mut n = [1usize; 3];
        let mut h = [1.0; 3];
        let mut node_stride = [0usize; 3];
        let mut stride = 1;
        for a in 0..d {
            n[a] = spec.cells[a];
            h[a] = spec.lengths[a] / n[a] as f64;
            node_stride[a] = stride;
            stride *= n[a] + 1;
        }
        let n_nodes = stride;
        let n_cells: usize = (0..d).map(|a| n[a]).product();
        let kinds = 1 << d;
        let n_local = kinds * kinds;
        let n_qp_cell = GAUSS_1D.pow(d as u32);
        let mut grid = Self {
            spec,
            d,
            n,
            h,
            n_nodes,
            n_cells,
            node_stride,
            kinds,
            n_local,
            n_qp_cell,
            refs: RefTables {
                xi: vec![],
                weight: vec![],
                h_val: vec![],
                h_grad: vec![],
                h_hess: vec![],
                h_hess_gram: vec![],
                q_val: vec![],
                q_grad: vec![],
            },
            faces: vec![],
            fixed: vec![],
            free_index: vec![],
            n_free: 0,
            y_asm: Assembly {
                pattern: Arc::new(SparsityPattern::zeros(0, 0)),
                positions: vec![],
            },
            t_asm: Assembly {
                pattern: Arc::new(SparsityPattern::zeros(0, 0)),
                positions: vec![],
            },
        };
        grid.refs = grid.build_ref_tables();
        grid.faces = Face::all(d)
            .into_iter()
            .map(|f| grid.build_face_tables(f))
            .collect();
        grid.build_constraints();
        grid.y_asm = grid.build_y_assembly();
        grid.t_asm = grid.build_t_assembly();
        Ok(grid)
    }

    // ---- indexing ----------------------------------------------------------

    pub fn n_ydofs(&self) -> usize {
        self.n_nodes * self.kinds * self.d
    }

    pub fn n_qp(&self) -> usize {
        self.n_cells * self.n_qp_cell
    }

    fn cell_multi(&self, c: usize) -> [usize; 3] {
        let mut m = [0; 3];
        let mut r = c;
        for a in 0..self.d {
            m[a] = r % self.n[a];
            r /= self.n[a];
        }
        m
    }

    fn cell_node(&self, c: usize, e: usize) -> usize {
        let m = self.cell_multi(c);
        (0..self.d)
            .map(|a| (m[a] + bit(e, a)) * self.node_stride[a])
            .sum()
    }

    pub fn node_position(&self, node: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        let mut r = node;
        for a in 0..self.d {
            let k = r % (self.n[a] + 1);
            r /= self.n[a] + 1;
            x[a] = k as f64 * self.h[a];
        }
        x
    }

    fn node_on_face(&self, node: usize, f: Face) -> bool {
        let k = (node / self.node_stride[f.axis]) % (self.n[f.axis] + 1);
        if f.upper {
            k == self.n[f.axis]
        } else {
            k == 0
        }
    }

    /// Index of Hermite coefficient `(node, kind, component)` in a deformation field.
    pub fn ydof(&self, node: usize, kind: usize, comp: usize) -> usize {
        (node * self.kinds + kind) * self.d + comp
    }

    fn cell_ydofs(&self, c: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_local * self.d);
        for e in 0..self.kinds {
            let node = self.cell_node(c, e);
            for m in 0..self.kinds {
                for i in 0..self.d {
                    out.push(self.ydof(node, m, i));
                }
            }
        }
        out
    }

    fn cell_tdofs(&self, c: usize) -> Vec<usize> {
        (0..self.kinds).map(|e| self.cell_node(c, e)).collect()
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.fixed[dof]
    }

    /// Reduced index of a free deformation coefficient.
    pub fn free_index(&self, dof: usize) -> Option<usize> {
        let k = self.free_index[dof];
        (k != usize::MAX).then_some(k)
    }

    pub fn restrict_free(&self, full: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_free];
        for (i, &k) in self.free_index.iter().enumerate() {
            if k != usize::MAX {
                out[k] = full[i];
            }
        }
        out
    }

    /// Adds a reduced vector onto the free coefficients of `base`.
    pub fn add_free(&self, base: &NodalField, s: f64, red: &[f64]) -> NodalField {
        let mut out = base.clone();
        for (i, &k) in self.free_index.iter().enumerate() {
            if k != usize::MAX {
                out.values[i] += s * red[k];
            }
        }
        out
    }

    pub fn y_pattern(&self) -> Arc<SparsityPattern> {
        self.y_asm.pattern.clone()
    }

    pub fn t_pattern(&self) -> Arc<SparsityPattern> {
        self.t_asm.pattern.clone()
    }

    pub fn boundary_faces(&self) -> Vec<Face> {
        self.faces.iter().map(|f| f.face).collect()
    }

    // ---- setup -------------------------------------------------------------

    fn build_ref_tables(&self) -> RefTables {
        let d = self.d;
        let nq = self.n_qp_cell;
        let nl = self.n_local;
        let mut t = RefTables {
            xi: Vec::with_capacity(nq),
            weight: Vec::with_capacity(nq),
            h_val: vec![0.0; nq * nl],
            h_grad: vec![[0.0; 3]; nq * nl],
            h_hess: vec![[[0.0; 3]; 3]; nq * nl],
            h_hess_gram: vec![0.0; nq * nl * nl],
            q_val: vec![0.0; nq * self.kinds],
            q_grad: vec![[0.0; 3]; nq * self.kinds],
        };
        for q in 0..nq {
            let mut xi = [0.0; 3];
            let mut w = 1.0;
            let mut r = q;
            for a in 0..d {
                let g = r % GAUSS_1D;
                r /= GAUSS_1D;
                xi[a] = 0.5 * (1.0 + GAUSS_X[g]);
                w *= 0.5 * GAUSS_W[g] * self.h[a];
            }
            t.xi.push(xi);
            t.weight.push(w);
            self.fill_shape(
                &xi,
                &mut t.h_val[q * nl..(q + 1) * nl],
                Some(&mut t.h_grad[q * nl..(q + 1) * nl]),
                Some(&mut t.h_hess[q * nl..(q + 1) * nl]),
            );
            self.fill_q1(
                &xi,
                &mut t.q_val[q * self.kinds..(q + 1) * self.kinds],
                Some(&mut t.q_grad[q * self.kinds..(q + 1) * self.kinds]),
            );
            for a in 0..nl {
                for b in 0..nl {
                    let (ha, hb) = (&t.h_hess[q * nl + a], &t.h_hess[q * nl + b]);
                    let mut s = 0.0;
                    for j in 0..d {
                        for k in 0..d {
                            s += ha[j][k] * hb[j][k];
                        }
                    }
                    t.h_hess_gram[(q * nl + a) * nl + b] = s;
                }
            }
        }
        t
    }

    /// Hermite shape values (and optionally physical derivatives) at cell offset `xi`.
    fn fill_shape(
        &self,
        xi: &[f64; 3],
        val: &mut [f64],
        mut grad: Option<&mut [[f64; 3]]>,
        mut hess: Option<&mut [[[f64; 3]; 3]]>,
    ) {
        let d = self.d;
        for e in 0..self.kinds {
            for m in 0..self.kinds {
                let l = e * self.kinds + m;
                let mut tab = [[0.0; 3]; 3];
                for a in 0..d {
                    tab[a] = hermite_1d(2 * bit(e, a) + bit(m, a), xi[a], self.h[a]);
                }
                val[l] = (0..d).map(|a| tab[a][0]).product();
                if let Some(g) = grad.as_deref_mut() {
                    for b in 0..d {
                        g[l][b] = (0..d).map(|a| tab[a][(a == b) as usize]).product();
                    }
                }
                if let Some(hs) = hess.as_deref_mut() {
                    for b in 0..d {
                        for c in 0..d {
                            hs[l][b][c] = (0..d)
                                .map(|a| {
                                    let order = (a == b) as usize + (a == c) as usize;
                                    tab[a][order]
                                })
                                .product();
                        }
                    }
                }
            }
        }
    }

    fn fill_q1(&self, xi: &[f64; 3], val: &mut [f64], grad: Option<&mut [[f64; 3]]>) {
        let d = self.d;
        for e in 0..self.kinds {
            let f1 = |a: usize| if bit(e, a) == 1 { xi[a] } else { 1.0 - xi[a] };
            val[e] = (0..d).map(f1).product();
        }
        if let Some(g) = grad {
            for e in 0..self.kinds {
                for b in 0..d {
                    g[e][b] = (0..d)
                        .map(|a| {
                            if a == b {
                                (if bit(e, a) == 1 { 1.0 } else { -1.0 }) / self.h[a]
                            } else if bit(e, a) == 1 {
                                xi[a]
                            } else {
                                1.0 - xi[a]
                            }
                        })
                        .product();
                }
            }
        }
    }

    fn build_face_tables(&self, face: Face) -> FaceTables {
        let d = self.d;
        let cells: Vec<usize> = (0..self.n_cells)
            .filter(|&c| {
                let m = self.cell_multi(c);
                m[face.axis] == if face.upper { self.n[face.axis] - 1 } else { 0 }
            })
            .collect();
        let other: Vec<usize> = (0..d).filter(|&a| a != face.axis).collect();
        let nq = GAUSS_1D.pow((d - 1) as u32);
        let mut ft = FaceTables {
            face,
            cells,
            xi: vec![],
            weight: vec![],
            h_val: vec![0.0; nq * self.n_local],
            q_val: vec![0.0; nq * self.kinds],
        };
        for q in 0..nq {
            let mut xi = [0.0; 3];
            xi[face.axis] = if face.upper { 1.0 } else { 0.0 };
            let mut w = 1.0;
            let mut r = q;
            for &a in &other {
                let g = r % GAUSS_1D;
                r /= GAUSS_1D;
                xi[a] = 0.5 * (1.0 + GAUSS_X[g]);
                w *= 0.5 * GAUSS_W[g] * self.h[a];
            }
            ft.xi.push(xi);
            ft.weight.push(w);
            let nl = self.n_local;
            self.fill_shape(&xi, &mut ft.h_val[q * nl..(q + 1) * nl], None, None);
            let k = self.kinds;
            self.fill_q1(&xi, &mut ft.q_val[q * k..(q + 1) * k], None);
        }
        ft
    }

    fn build_constraints(&mut self) {
        let n = self.n_ydofs();
        self.fixed = vec![false; n];
        for node in 0..self.n_nodes {
            for f in &self.spec.dirichlet {
                if !self.node_on_face(node, *f) {
                    continue;
                }
                for m in 0..self.kinds {
                    if bit(m, f.axis) == 0 {
                        for i in 0..self.d {
                            let k = self.ydof(node, m, i);
                            self.fixed[k] = true;
                        }
                    }
                }
            }
        }
        self.free_index = vec![usize::MAX; n];
        let mut k = 0;
        for i in 0..n {
            if !self.fixed[i] {
                self.free_index[i] = k;
                k += 1;
            }
        }
        self.n_free = k;
    }

    fn build_y_assembly(&self) -> Assembly {
        let groups: Vec<Vec<usize>> = (0..self.n_cells)
            .map(|c| {
                self.cell_ydofs(c)
                    .into_iter()
                    .filter_map(|g| self.free_index(g))
                    .collect()
            })
            .collect();
        let pattern = Arc::new(linalg::pattern_from_groups(self.n_free, groups.into_iter()));
        let positions = (0..self.n_cells)
            .map(|c| {
                let red: Vec<Option<usize>> = self
                    .cell_ydofs(c)
                    .into_iter()
                    .map(|g| self.free_index(g))
                    .collect();
                positions_for(&pattern, &red)
            })
            .collect();
        Assembly { pattern, positions }
    }

    fn build_t_assembly(&self) -> Assembly {
        let groups: Vec<Vec<usize>> = (0..self.n_cells).map(|c| self.cell_tdofs(c)).collect();
        let pattern = Arc::new(linalg::pattern_from_groups(
            self.n_nodes,
            groups.into_iter(),
        ));
        let positions = (0..self.n_cells)
            .map(|c| {
                let red: Vec<Option<usize>> = self.cell_tdofs(c).into_iter().map(Some).collect();
                positions_for(&pattern, &red)
            })
            .collect();
        Assembly { pattern, positions }
    }

    // ---- fields --------------------------------------------------------------

    /// Hermite interpolant of a map given through its mixed derivatives:
    /// `f(x, m)` returns `d^m y(x)` where bit `a` of `m` requests `d/dx_a`.
    pub fn interpolate_deformation(&self, f: impl Fn(&[f64; 3], usize) -> [f64; 3]) -> NodalField {
        let mut values = vec![0.0; self.n_ydofs()];
        for node in 0..self.n_nodes {
            let x = self.node_position(node);
            for m in 0..self.kinds {
                let v = f(&x, m);
                for i in 0..self.d {
                    values[self.ydof(node, m, i)] = v[i];
                }
            }
        }
        NodalField {
            per_node: self.kinds * self.d,
            values,
        }
    }

    /// Coefficients of the identity map, which the Dirichlet faces keep.
    pub fn identity_deformation(&self) -> NodalField {
        let d = self.d;
        self.interpolate_deformation(|x, m| identity_derivative(d, x, m))
    }

    /// Zero field in the deformation space (used for test functions).
    pub fn zero_deformation(&self) -> NodalField {
        NodalField {
            per_node: self.kinds * self.d,
            values: vec![0.0; self.n_ydofs()],
        }
    }

    /// Sets all constrained coefficients to zero.
    pub fn zero_fixed(&self, y: &mut NodalField) {
        for (v, &fx) in y.values.iter_mut().zip(&self.fixed) {
            if fx {
                *v = 0.0;
            }
        }
    }

    /// True if the constrained coefficients match the identity map.
    pub fn satisfies_dirichlet(&self, y: &NodalField, tol: f64) -> bool {
        let id = self.identity_deformation();
        (0..y.values.len()).all(|i| !self.fixed[i] || (y.values[i] - id.values[i]).abs() <= tol)
    }

    pub fn constant_scalar(&self, v: f64) -> NodalField {
        NodalField {
            per_node: 1,
            values: vec![v; self.n_nodes],
        }
    }

    pub fn interpolate_scalar(&self, f: impl Fn(&[f64; 3]) -> f64) -> NodalField {
        NodalField {
            per_node: 1,
            values: (0..self.n_nodes)
                .map(|n| f(&self.node_position(n)))
                .collect(),
        }
    }

    // ---- evaluation at quadrature points ------------------------------------

    pub fn qp_weights(&self) -> Vec<f64> {
        (0..self.n_cells)
            .flat_map(|_| self.refs.weight.iter().copied())
            .collect()
    }

    pub fn qp_positions(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(self.n_qp());
        for c in 0..self.n_cells {
            let m = self.cell_multi(c);
            for xi in &self.refs.xi {
                let mut x = [0.0; 3];
                for a in 0..self.d {
                    x[a] = (m[a] as f64 + xi[a]) * self.h[a];
                }
                out.push(x);
            }
        }
        out
    }

    /// Cell of every volume quadrature point.
    pub fn qp_cell(&self, q: usize) -> usize {
        q / self.n_qp_cell
    }

    pub fn kinematics(&self, y: &NodalField) -> Kinematics {
        let d = self.d;
        let nl = self.n_local;
        let mut f = Vec::with_capacity(self.n_qp());
        let mut g = Vec::with_capacity(self.n_qp());
        for c in 0..self.n_cells {
            let dofs = self.cell_ydofs(c);
            for q in 0..self.n_qp_cell {
                let mut ft = Tensor2::zeros(d);
                let mut gt = Tensor3::zeros(d);
                for l in 0..nl {
                    let gr = &self.refs.h_grad[q * nl + l];
                    let hs = &self.refs.h_hess[q * nl + l];
                    for i in 0..d {
                        let yv = y.values[dofs[l * d + i]];
                        if yv == 0.0 {
                            continue;
                        }
                        for j in 0..d {
                            ft.m[i][j] += yv * gr[j];
                            for k in 0..d {
                                gt.t[i][j][k] += yv * hs[j][k];
                            }
                        }
                    }
                }
                f.push(ft);
                g.push(gt);
            }
        }
        Kinematics { f, g }
    }

    pub fn deformation_at_qp(&self, y: &NodalField) -> Vec<[f64; 3]> {
        let d = self.d;
        let nl = self.n_local;
        let mut out = Vec::with_capacity(self.n_qp());
        for c in 0..self.n_cells {
            let dofs = self.cell_ydofs(c);
            for q in 0..self.n_qp_cell {
                let mut v = [0.0; 3];
                for l in 0..nl {
                    let s = self.refs.h_val[q * nl + l];
                    for (i, vi) in v.iter_mut().enumerate().take(d) {
                        *vi += s * y.values[dofs[l * d + i]];
                    }
                }
                out.push(v);
            }
        }
        out
    }

    pub fn scalar_at_qp(&self, t: &NodalField) -> Vec<f64> {
        let k = self.kinds;
        let mut out = Vec::with_capacity(self.n_qp());
        for c in 0..self.n_cells {
            let dofs = self.cell_tdofs(c);
            for q in 0..self.n_qp_cell {
                out.push(
                    (0..k)
                        .map(|e| self.refs.q_val[q * k + e] * t.values[dofs[e]])
                        .sum(),
                );
            }
        }
        out
    }

    pub fn scalar_grad_at_qp(&self, t: &NodalField) -> Vec<[f64; 3]> {
        let k = self.kinds;
        let mut out = Vec::with_capacity(self.n_qp());
        for c in 0..self.n_cells {
            let dofs = self.cell_tdofs(c);
            for q in 0..self.n_qp_cell {
                let mut g = [0.0; 3];
                for e in 0..k {
                    for a in 0..self.d {
                        g[a] += self.refs.q_grad[q * k + e][a] * t.values[dofs[e]];
                    }
                }
                out.push(g);
            }
        }
        out
    }

    // ---- boundary quadrature -------------------------------------------------

    /// Boundary quadrature points as `(face, position, weight)`, in assembly order.
    pub fn bqp_info(&self) -> Vec<(Face, [f64; 3], f64)> {
        let mut out = Vec::new();
        for ft in &self.faces {
            for &c in &ft.cells {
                let m = self.cell_multi(c);
                for (xi, &w) in ft.xi.iter().zip(&ft.weight) {
                    let mut x = [0.0; 3];
                    for a in 0..self.d {
                        x[a] = (m[a] as f64 + xi[a]) * self.h[a];
                    }
                    out.push((ft.face, x, w));
                }
            }
        }
        out
    }

    pub fn n_bqp(&self) -> usize {
        self.faces
            .iter()
            .map(|f| f.cells.len() * f.weight.len())
            .sum()
    }

    pub fn deformation_at_bqp(&self, y: &NodalField) -> Vec<[f64; 3]> {
        let d = self.d;
        let nl = self.n_local;
        let mut out = Vec::with_capacity(self.n_bqp());
        for ft in &self.faces {
            for &c in &ft.cells {
                let dofs = self.cell_ydofs(c);
                for q in 0..ft.weight.len() {
                    let mut v = [0.0; 3];
                    for l in 0..nl {
                        let s = ft.h_val[q * nl + l];
                        for (i, vi) in v.iter_mut().enumerate().take(d) {
                            *vi += s * y.values[dofs[l * d + i]];
                        }
                    }
                    out.push(v);
                }
            }
        }
        out
    }

    pub fn scalar_at_bqp(&self, t: &NodalField) -> Vec<f64> {
        let k = self.kinds;
        let mut out = Vec::with_capacity(self.n_bqp());
        for ft in &self.faces {
            for &c in &ft.cells {
                let dofs = self.cell_tdofs(c);
                for q in 0..ft.weight.len() {
                    out.push(
                        (0..k)
                            .map(|e| ft.q_val[q * k + e] * t.values[dofs[e]])
                            .sum(),
                    );
                }
            }
        }
        out
    }

    pub fn bqp_weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_bqp());
        for ft in &self.faces {
            for _ in &ft.cells {
                out.extend_from_slice(&ft.weight);
            }
        }
        out
    }

    // ---- assembly --------------------------------------------------------------

    /// `sum_q w_q rho_q` over the volume points.
    pub fn assemble_scalar(&self, density: &[f64]) -> f64 {
        let w = &self.refs.weight;
        let nq = self.n_qp_cell;
        density.iter().enumerate().map(|(q, r)| w[q % nq] * r).sum()
    }

    /// `sum_b w_b rho_b` over the boundary points.
    pub fn boundary_integral(&self, density: &[f64]) -> f64 {
        self.bqp_weights()
            .iter()
            .zip(density)
            .map(|(w, r)| w * r)
            .sum()
    }

    /// Residual `int P : grad v + h ⋮ grad^2 v - g . v - int_Gamma f . v` for every
    /// deformation coefficient; constrained entries are zero.
    pub fn assemble_gradient(
        &self,
        stress: &[Tensor2],
        hyper: Option<&[Tensor3]>,
        bulk: Option<&[[f64; 3]]>,
        traction: Option<&[[f64; 3]]>,
    ) -> Vec<f64> {
        let d = self.d;
        let nl = self.n_local;
        let mut r = vec![0.0; self.n_ydofs()];
        for c in 0..self.n_cells {
            let dofs = self.cell_ydofs(c);
            let mut loc = vec![0.0; nl * d];
            for q in 0..self.n_qp_cell {
                let gq = c * self.n_qp_cell + q;
                let w = self.refs.weight[q];
                let p = &stress[gq];
                for l in 0..nl {
                    let gr = &self.refs.h_grad[q * nl + l];
                    for i in 0..d {
                        let mut s = 0.0;
                        for j in 0..d {
                            s += p.m[i][j] * gr[j];
                        }
                        loc[l * d + i] += w * s;
                    }
                }
                if let Some(hy) = hyper {
                    let hq = &hy[gq];
                    for l in 0..nl {
                        let hs = &self.refs.h_hess[q * nl + l];
                        for i in 0..d {
                            let mut s = 0.0;
                            for j in 0..d {
                                for k in 0..d {
                                    s += hq.t[i][j][k] * hs[j][k];
                                }
                            }
                            loc[l * d + i] += w * s;
                        }
                    }
                }
                if let Some(b) = bulk {
                    let g = &b[gq];
                    for l in 0..nl {
                        let v = self.refs.h_val[q * nl + l];
                        for i in 0..d {
                            loc[l * d + i] -= w * v * g[i];
                        }
                    }
                }
            }
            for (k, &g) in dofs.iter().enumerate() {
                r[g] += loc[k];
            }
        }
        if let Some(t) = traction {
            let mut b = 0;
            for ft in &self.faces {
                for &c in &ft.cells {
                    let dofs = self.cell_ydofs(c);
                    for q in 0..ft.weight.len() {
                        let f = &t[b];
                        b += 1;
                        if f[..d].iter().all(|x| *x == 0.0) {
                            continue;
                        }
                        for l in 0..nl {
                            let v = ft.weight[q] * ft.h_val[q * nl + l];
                            for i in 0..d {
                                r[dofs[l * d + i]] -= v * f[i];
                            }
                        }
                    }
                }
            }
        }
        for (ri, &fx) in r.iter_mut().zip(&self.fixed) {
            if fx {
                *ri = 0.0;
            }
        }
        r
    }

    /// Hessian on the free coefficients of
    /// `int grad v : C : grad v + D^2 H[grad^2 v, grad^2 v] + m |v|^2`.
    pub fn assemble_hessian(
        &self,
        tangent: &[Tensor4],
        hyper: Option<&[HyperHessian]>,
        mass: Option<&[f64]>,
    ) -> SymMatrix {
        let d = self.d;
        let nl = self.n_local;
        let ld = nl * d;
        let mut mat = SymMatrix::zeros(self.y_asm.pattern.clone());
        let mut ke = vec![0.0; ld * ld];
        let mut tmp = vec![0.0; ld * d * d];
        let mut hv = vec![0.0; ld];
        for c in 0..self.n_cells {
            ke.iter_mut().for_each(|x| *x = 0.0);
            for q in 0..self.n_qp_cell {
                let gq = c * self.n_qp_cell + q;
                let w = self.refs.weight[q];
                let cc = &tangent[gq];
                // tmp[(a,i),(j,l)] = sum_k C_ikjl dN_a/dx_k
                for a in 0..nl {
                    let gr = &self.refs.h_grad[q * nl + a];
                    for i in 0..d {
                        for j in 0..d {
                            for l in 0..d {
                                let mut s = 0.0;
                                for k in 0..d {
                                    s += cc.c[i][k][j][l] * gr[k];
                                }
                                tmp[((a * d + i) * d + j) * d + l] = w * s;
                            }
                        }
                    }
                }
                for a in 0..nl {
                    for i in 0..d {
                        let row = a * d + i;
                        let trow = &tmp[row * d * d..(row + 1) * d * d];
                        for b in 0..nl {
                            let gb = &self.refs.h_grad[q * nl + b];
                            for j in 0..d {
                                let mut s = 0.0;
                                for l in 0..d {
                                    s += trow[j * d + l] * gb[l];
                                }
                                ke[row * ld + b * d + j] += s;
                            }
                        }
                    }
                }
                if let Some(hh) = hyper {
                    let h = &hh[gq];
                    if h.a != 0.0 {
                        let gram = &self.refs.h_hess_gram[q * nl * nl..(q + 1) * nl * nl];
                        for a in 0..nl {
                            for b in 0..nl {
                                let v = w * h.a * gram[a * nl + b];
                                for i in 0..d {
                                    ke[(a * d + i) * ld + b * d + i] += v;
                                }
                            }
                        }
                    }
                    if h.b != 0.0 {
                        for a in 0..nl {
                            let hs = &self.refs.h_hess[q * nl + a];
                            for i in 0..d {
                                let mut s = 0.0;
                                for j in 0..d {
                                    for k in 0..d {
                                        s += h.g.t[i][j][k] * hs[j][k];
                                    }
                                }
                                hv[a * d + i] = s;
                            }
                        }
                        let wb = w * h.b;
                        for r in 0..ld {
                            let x = wb * hv[r];
                            for s in 0..ld {
                                ke[r * ld + s] += x * hv[s];
                            }
                        }
                    }
                }
                if let Some(m) = mass {
                    let wm = w * m[gq];
                    for a in 0..nl {
                        let va = self.refs.h_val[q * nl + a];
                        for b in 0..nl {
                            let v = wm * va * self.refs.h_val[q * nl + b];
                            for i in 0..d {
                                ke[(a * d + i) * ld + b * d + i] += v;
                            }
                        }
                    }
                }
            }
            let pos = &self.y_asm.positions[c];
            for (k, &p) in pos.iter().enumerate() {
                if p != u32::MAX {
                    mat.values[p as usize] += ke[k];
                }
            }
        }
        mat
    }

    /// Q1 residual `int (a v + b . grad v) + int_Gamma r v` per node.
    pub fn assemble_q1_vector(
        &self,
        a: &[f64],
        b: Option<&[[f64; 3]]>,
        boundary: Option<&[f64]>,
    ) -> Vec<f64> {
        let k = self.kinds;
        let mut r = vec![0.0; self.n_nodes];
        for c in 0..self.n_cells {
            let dofs = self.cell_tdofs(c);
            for q in 0..self.n_qp_cell {
                let gq = c * self.n_qp_cell + q;
                let w = self.refs.weight[q];
                for e in 0..k {
                    let mut s = a[gq] * self.refs.q_val[q * k + e];
                    if let Some(b) = b {
                        let g = &self.refs.q_grad[q * k + e];
                        for x in 0..self.d {
                            s += b[gq][x] * g[x];
                        }
                    }
                    r[dofs[e]] += w * s;
                }
            }
        }
        if let Some(bd) = boundary {
            let mut bq = 0;
            for ft in &self.faces {
                for &c in &ft.cells {
                    let dofs = self.cell_tdofs(c);
                    for q in 0..ft.weight.len() {
                        for e in 0..k {
                            r[dofs[e]] += ft.weight[q] * ft.q_val[q * k + e] * bd[bq];
                        }
                        bq += 1;
                    }
                }
            }
        }
        r
    }

    /// Q1 matrix `int (m u v + grad u . K grad v) + int_Gamma r u v`.
    pub fn assemble_q1_matrix(
        &self,
        m: &[f64],
        kmat: Option<&[Tensor2]>,
        boundary: Option<&[f64]>,
    ) -> SymMatrix {
        let k = self.kinds;
        let d = self.d;
        let mut mat = SymMatrix::zeros(self.t_asm.pattern.clone());
        let mut ke = vec![0.0; k * k];
        for c in 0..self.n_cells {
            ke.iter_mut().for_each(|x| *x = 0.0);
            for q in 0..self.n_qp_cell {
                let gq = c * self.n_qp_cell + q;
                let w = self.refs.weight[q];
                for a in 0..k {
                    let va = self.refs.q_val[q * k + a];
                    let ga = &self.refs.q_grad[q * k + a];
                    let kga = kmat.map(|km| km[gq].matvec(ga));
                    for b in 0..k {
                        let mut s = m[gq] * va * self.refs.q_val[q * k + b];
                        if let Some(kg) = &kga {
                            let gb = &self.refs.q_grad[q * k + b];
                            for x in 0..d {
                                s += kg[x] * gb[x];
                            }
                        }
                        ke[a * k + b] += w * s;
                    }
                }
            }
            let pos = &self.t_asm.positions[c];
            for (i, &p) in pos.iter().enumerate() {
                mat.values[p as usize] += ke[i];
            }
        }
        if let Some(bd) = boundary {
            let mut bq = 0;
            for ft in &self.faces {
                for &c in &ft.cells {
                    let dofs = self.cell_tdofs(c);
                    for q in 0..ft.weight.len() {
                        let wr = ft.weight[q] * bd[bq];
                        bq += 1;
                        for a in 0..k {
                            for b in 0..k {
                                let p = mat
                                    .position(dofs[a], dofs[b])
                                    .expect("face entries in pattern");
                                mat.values[p] += wr * ft.q_val[q * k + a] * ft.q_val[q * k + b];
                            }
                        }
                    }
                }
            }
        }
        mat
    }

    /// Robin term `int_Gamma kappa/2 (theta - theta_b)^2`, returning the energy and
    /// its gradient in the nodal temperatures.
    pub fn boundary_assemble(
        &self,
        theta: &NodalField,
        theta_b: &[f64],
        kappa: f64,
    ) -> (f64, Vec<f64>) {
        let tb = self.scalar_at_bqp(theta);
        let w = self.bqp_weights();
        let mut energy = 0.0;
        let mut flux = Vec::with_capacity(tb.len());
        for i in 0..tb.len() {
            let diff = tb[i] - theta_b[i];
            energy += 0.5 * kappa * w[i] * diff * diff;
            flux.push(kappa * diff);
        }
        let zero = vec![0.0; self.n_qp()];
        (energy, self.assemble_q1_vector(&zero, None, Some(&flux)))
    }
}

/// Mixed derivative `d^m x` of the identity map.
pub fn identity_derivative(d: usize, x: &[f64; 3], m: usize) -> [f64; 3] {
    let mut v = [0.0; 3];
    match m.count_ones() {
        0 => v[..d].copy_from_slice(&x[..d]),
        1 => v[m.trailing_zeros() as usize] = 1.0,
        _ => {}
    }
    v
}

fn positions_for(pattern: &SparsityPattern, red: &[Option<usize>]) -> Vec<u32> {
    let n = red.len();
    let mut out = vec![u32::MAX; n * n];
    for (a, ra) in red.iter().enumerate() {
        for (b, rb) in red.iter().enumerate() {
            if let (Some(r), Some(c)) = (ra, rb) {
                out[a * n + b] =
                    linalg::position(pattern, *r, *c).expect("entry in pattern") as u32;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> StructuredGrid {
        StructuredGrid::new(GridSpec::square(n)).unwrap()
    }

    #[test]
    fn hermite_basis_reproduces_derivative_dofs() {
        let h = 0.37;
        for k in 0..4 {
            let at0 = hermite_1d(k, 0.0, h);
            let at1 = hermite_1d(k, 1.0, h);
            let expect = [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ];
            let got = [at0[0], at0[1], at1[0], at1[1]];
            for (g, e) in got.iter().zip(&expect[k]) {
                assert!((g - e).abs() < 1e-14, "k={k}");
            }
        }
    }

    #[test]
    fn identity_is_exact() {
        let g = grid(3);
        let y = g.identity_deformation();
        let kin = g.kinematics(&y);
        for (f, gg) in kin.f.iter().zip(&kin.g) {
            assert!(f.max_abs_diff(&Tensor2::identity(2)) < 1e-13);
            assert!(gg.norm() < 1e-12);
        }
        assert!(g.satisfies_dirichlet(&y, 0.0));
    }

    #[test]
    fn bicubic_maps_are_reproduced() {
        let g = StructuredGrid::new(GridSpec {
            d: 2,
            cells: vec![3, 2],
            lengths: vec![1.5, 0.8],
            dirichlet: vec![Face::new(0, false)],
        })
        .unwrap();
        // y = (x + x^2 y^3 / 4, y + x^3 / 5)
        let map = |x: &[f64; 3], m: usize| -> [f64; 3] {
            let (a, b) = (x[0], x[1]);
            match m {
                0 => [a + a * a * b * b * b / 4.0, b + a * a * a / 5.0, 0.0],
                1 => [1.0 + a * b * b * b / 2.0, 3.0 * a * a / 5.0, 0.0],
                2 => [3.0 * a * a * b * b / 4.0, 1.0, 0.0],
                _ => [3.0 * a * b * b / 2.0, 0.0, 0.0],
            }
        };
        let y = g.interpolate_deformation(map);
        let kin = g.kinematics(&y);
        for (x, f) in g.qp_positions().iter().zip(&kin.f) {
            let (a, b) = (x[0], x[1]);
            let exact = Tensor2::from_rows(&[
                &[1.0 + a * b * b * b / 2.0, 3.0 * a * a * b * b / 4.0],
                &[3.0 * a * a / 5.0, 1.0],
            ]);
            assert!(f.max_abs_diff(&exact) < 1e-12);
        }
    }

    #[test]
    fn volume_and_surface_measures() {
        let g = grid(4);
        assert!((g.assemble_scalar(&vec![1.0; g.n_qp()]) - 1.0).abs() < 1e-14);
        assert!((g.boundary_integral(&vec![1.0; g.n_bqp()]) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn dirichlet_face_fixes_value_and_tangential_derivative() {
        let g = grid(2);
        // node 0 sits on x = 0: kinds 0 (value) and 2 (d/dy) fixed, 1 (d/dx) and 3 free
        for i in 0..2 {
            assert!(g.is_fixed(g.ydof(0, 0, i)));
            assert!(!g.is_fixed(g.ydof(0, 1, i)));
            assert!(g.is_fixed(g.ydof(0, 2, i)));
            assert!(!g.is_fixed(g.ydof(0, 3, i)));
        }
        assert!(!g.is_fixed(g.ydof(1, 0, 0)));
    }
}
