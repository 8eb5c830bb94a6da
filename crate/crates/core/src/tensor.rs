//! Small dense tensors of runtime dimension `d <= 3`.
//!
//! Storage is always 3-wide so the types are `Copy` and allocation free;
//! only the leading `d` entries along each axis are meaningful.

use serde::{Deserialize, Serialize};

/// Largest spatial dimension supported by the type layer.
pub const MAX_DIM: usize = 3;

/// Second-order tensor (deformation gradient, stresses).
///
/// Entry `(i, j)` of a deformation gradient is `d y_i / d x_j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    pub d: usize,
    pub m: [[f64; 3]; 3],
}

/// Third-order tensor; `t[i][j][k] = d^2 y_i / d x_j d x_k` for a deformation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tensor3 {
    pub d: usize,
    pub t: [[[f64; 3]; 3]; 3],
}

/// Fourth-order tensor used for tangent moduli, `c[i][j][k][l] = d P_ij / d F_kl`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tensor4 {
    pub d: usize,
    pub c: [[[[f64; 3]; 3]; 3]; 3],
}

impl Tensor2 {
    pub fn zeros(d: usize) -> Self {
        debug_assert!((1..=MAX_DIM).contains(&d));
        Self {
            d,
            m: [[0.0; 3]; 3],
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut t = Self::zeros(d);
        for i in 0..d {
            t.m[i][i] = 1.0;
        }
        t
    }

    pub fn from_fn(d: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                t.m[i][j] = f(i, j);
            }
        }
        t
    }

    /// Builds a tensor from row slices; the number of rows sets the dimension.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let d = rows.len();
        Self::from_fn(d, |i, j| rows[i][j])
    }

    pub fn diag(values: &[f64]) -> Self {
        let d = values.len();
        Self::from_fn(d, |i, j| if i == j { values[i] } else { 0.0 })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.d, |i, j| self.m[j][i])
    }

    pub fn trace(&self) -> f64 {
        (0..self.d).map(|i| self.m[i][i]).sum()
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        match self.d {
            1 => m[0][0],
            2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
            3 => {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            }
            _ => unreachable!("unsupported dimension"),
        }
    }

    /// Cofactor matrix, `cof F = det(F) F^{-T}`; defined for singular `F` too.
    pub fn cofactor(&self) -> Self {
        let m = &self.m;
        match self.d {
            1 => Self::identity(1),
            2 => Self::from_rows(&[&[m[1][1], -m[1][0]], &[-m[0][1], m[0][0]]]),
            3 => Self::from_fn(3, |i, j| {
                let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
                let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
                m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1]
            }),
            _ => unreachable!("unsupported dimension"),
        }
    }

    /// Inverse, or `None` when the determinant vanishes.
    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(self.cofactor().transpose().scale(1.0 / det))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_fn(self.d, |i, j| s * self.m[i][j])
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::from_fn(self.d, |i, j| self.m[i][j] + o.m[i][j])
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::from_fn(self.d, |i, j| self.m[i][j] - o.m[i][j])
    }

    /// `self + s * o`
    pub fn axpy(&self, s: f64, o: &Self) -> Self {
        Self::from_fn(self.d, |i, j| self.m[i][j] + s * o.m[i][j])
    }

    pub fn matmul(&self, o: &Self) -> Self {
        Self::from_fn(self.d, |i, j| {
            (0..self.d).map(|k| self.m[i][k] * o.m[k][j]).sum()
        })
    }

    pub fn matvec(&self, v: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate().take(self.d) {
            *o = (0..self.d).map(|j| self.m[i][j] * v[j]).sum();
        }
        out
    }

    /// `A^T A`
    pub fn gram(&self) -> Self {
        self.transpose().matmul(self)
    }

    /// Frobenius product `A : B`.
    pub fn ddot(&self, o: &Self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                s += self.m[i][j] * o.m[i][j];
            }
        }
        s
    }

    pub fn norm_sq(&self) -> f64 {
        self.ddot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn sym(&self) -> Self {
        Self::from_fn(self.d, |i, j| 0.5 * (self.m[i][j] + self.m[j][i]))
    }

    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        let mut e: f64 = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                e = e.max((self.m[i][j] - o.m[i][j]).abs());
            }
        }
        e
    }

    /// Unit matrix `e_i (x) e_j`.
    pub fn unit(d: usize, i: usize, j: usize) -> Self {
        let mut t = Self::zeros(d);
        t.m[i][j] = 1.0;
        t
    }

    /// Rotation in the `(x, y)` plane by `angle`; identity on the remaining axis in 3D.
    pub fn rotation(d: usize, angle: f64) -> Self {
        let mut r = Self::identity(d);
        if d >= 2 {
            let (s, c) = angle.sin_cos();
            r.m[0][0] = c;
            r.m[0][1] = -s;
            r.m[1][0] = s;
            r.m[1][1] = c;
        }
        r
    }

    /// Rotation about a unit `axis` in 3D (Rodrigues).
    pub fn rotation_axis(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let a = [axis[0] / n, axis[1] / n, axis[2] / n];
        let (s, c) = angle.sin_cos();
        let k = Self::from_rows(&[
            &[0.0, -a[2], a[1]],
            &[a[2], 0.0, -a[0]],
            &[-a[1], a[0], 0.0],
        ]);
        Self::identity(3).axpy(s, &k).axpy(1.0 - c, &k.matmul(&k))
    }

    pub fn is_finite(&self) -> bool {
        (0..self.d).all(|i| (0..self.d).all(|j| self.m[i][j].is_finite()))
    }
}

impl Tensor3 {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            t: [[[0.0; 3]; 3]; 3],
        }
    }

    pub fn from_fn(d: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    t.t[i][j][k] = f(i, j, k);
                }
            }
        }
        t
    }

    pub fn ddot(&self, o: &Self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                for k in 0..self.d {
                    s += self.t[i][j][k] * o.t[i][j][k];
                }
            }
        }
        s
    }

    pub fn norm_sq(&self) -> f64 {
        self.ddot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_fn(self.d, |i, j, k| s * self.t[i][j][k])
    }

    pub fn axpy(&self, s: f64, o: &Self) -> Self {
        Self::from_fn(self.d, |i, j, k| self.t[i][j][k] + s * o.t[i][j][k])
    }

    /// Left action of a matrix on the first index, `(R G)_ijk = R_il G_ljk`.
    pub fn left_mul(&self, r: &Tensor2) -> Self {
        Self::from_fn(self.d, |i, j, k| {
            (0..self.d).map(|l| r.m[i][l] * self.t[l][j][k]).sum()
        })
    }

    pub fn unit(d: usize, i: usize, j: usize, k: usize) -> Self {
        let mut t = Self::zeros(d);
        t.t[i][j][k] = 1.0;
        t
    }

    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        let mut e: f64 = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                for k in 0..self.d {
                    e = e.max((self.t[i][j][k] - o.t[i][j][k]).abs());
                }
            }
        }
        e
    }
}

impl Tensor4 {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            c: [[[[0.0; 3]; 3]; 3]; 3],
        }
    }

    /// `C : H`, i.e. `(C:H)_ij = C_ijkl H_kl`.
    pub fn apply(&self, h: &Tensor2) -> Tensor2 {
        let d = self.d;
        Tensor2::from_fn(d, |i, j| {
            let mut s = 0.0;
            for k in 0..d {
                for l in 0..d {
                    s += self.c[i][j][k][l] * h.m[k][l];
                }
            }
            s
        })
    }

    /// `A : C : B`
    pub fn bilinear(&self, a: &Tensor2, b: &Tensor2) -> f64 {
        a.ddot(&self.apply(b))
    }

    /// `self += s * (a (x) b)`
    pub fn add_outer(&mut self, s: f64, a: &Tensor2, b: &Tensor2) {
        let d = self.d;
        for i in 0..d {
            for j in 0..d {
                let aij = s * a.m[i][j];
                if aij == 0.0 {
                    continue;
                }
                for k in 0..d {
                    for l in 0..d {
                        self.c[i][j][k][l] += aij * b.m[k][l];
                    }
                }
            }
        }
    }

    /// `self += s * I` where `I` is the identity on second-order tensors.
    pub fn add_identity(&mut self, s: f64) {
        for i in 0..self.d {
            for j in 0..self.d {
                self.c[i][j][i][j] += s;
            }
        }
    }

    pub fn add_scaled(&mut self, s: f64, o: &Self) {
        let d = self.d;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        self.c[i][j][k][l] += s * o.c[i][j][k][l];
                    }
                }
            }
        }
    }

    /// Dense `d^2 x d^2` matrix with row index `i*d + j` and column index `k*d + l`.
    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        let d = self.d;
        nalgebra::DMatrix::from_fn(d * d, d * d, |r, c| self.c[r / d][r % d][c / d][c % d])
    }
}
