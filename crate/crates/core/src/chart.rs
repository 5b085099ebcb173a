//! Minimal (7 dof) local parameterization of rank-2 fundamental matrices.
//!
//! `F(p) = U_B(e') H U_A(e)ᵀ [e]ₓ` where each epipole lives on the unit
//! sphere through a tangent chart at its initial value, `U(e)` is a smooth
//! orthonormal basis of the pencil through `e`, and `H` is the 2×2 line
//! homography with one entry held fixed. Any parameter vector yields an exact
//! rank-2 matrix.

use nalgebra::{Matrix2, Matrix3x2};

use crate::geometry::{null_vectors, pencil_basis, Mat3, Vec3};

pub const DOF: usize = 7;

#[derive(Debug, Clone)]
struct SphereChart {
    base: Vec3,
    t1: Vec3,
    t2: Vec3,
}

/// Epipole on the chart with its two partial derivatives.
struct ChartPoint {
    e: Vec3,
    de: [Vec3; 2],
}

/// Pencil basis `(u1, u2)` and its derivatives along the two chart directions.
struct PencilFrame {
    u1: Vec3,
    u2: Vec3,
    du1: [Vec3; 2],
    du2: [Vec3; 2],
}

impl SphereChart {
    fn new(e: &Vec3) -> Self {
        let base = e.normalize();
        let (t1, t2) = pencil_basis(&base);
        Self { base, t1, t2 }
    }

    fn point(&self, a: f64, b: f64) -> ChartPoint {
        let v = self.base + self.t1 * a + self.t2 * b;
        let n = v.norm();
        let e = v / n;
        let d = |t: &Vec3| (t - e * e.dot(t)) / n;
        ChartPoint { de: [d(&self.t1), d(&self.t2)], e }
    }

    fn frame(&self, p: &ChartPoint) -> PencilFrame {
        let e = p.e;
        let w = self.t1 - e * self.t1.dot(&e);
        let m = w.norm();
        let u1 = w / m;
        let u2 = e.cross(&u1);
        let mut du1 = [Vec3::zeros(); 2];
        let mut du2 = [Vec3::zeros(); 2];
        for k in 0..2 {
            let de = p.de[k];
            let dw = -e * self.t1.dot(&de) - de * self.t1.dot(&e);
            du1[k] = (dw - u1 * u1.dot(&dw)) / m;
            du2[k] = de.cross(&u1) + e.cross(&du1[k]);
        }
        PencilFrame { u1, u2, du1, du2 }
    }
}

/// Evaluated model: matrix, its 7 partial derivatives and the image-B epipole.
pub struct ChartEval {
    pub f: Mat3,
    pub df: [Mat3; DOF],
    pub e_prime: Vec3,
    pub de_prime: [Vec3; DOF],
}

#[derive(Debug, Clone)]
pub struct RankTwoChart {
    a: SphereChart,
    b: SphereChart,
    h0: [f64; 4],
    free: [usize; 3],
}

impl RankTwoChart {
    /// Chart centered at `f` (any scale); `p = 0` reproduces `f` up to scale.
    pub fn at(f: &Mat3) -> Self {
        let (e, ep) = null_vectors(f);
        let a = SphereChart::new(&e);
        let b = SphereChart::new(&ep);
        let g = Matrix3x2::from_columns(&[-a.t2, a.t1]);
        let ub = Matrix3x2::from_columns(&[b.t1, b.t2]);
        let h = ub.transpose() * f * g;
        let entries = [h[(0, 0)], h[(0, 1)], h[(1, 0)], h[(1, 1)]];
        let (fixed, amax) = entries
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        let h0 = entries.map(|v| v / amax);
        let mut free = [0; 3];
        let mut k = 0;
        for i in 0..4 {
            if i != fixed {
                free[k] = i;
                k += 1;
            }
        }
        Self { a, b, h0, free }
    }

    fn h(&self, p: &[f64]) -> Matrix2<f64> {
        let mut h = self.h0;
        for (k, &i) in self.free.iter().enumerate() {
            h[i] += p[4 + k];
        }
        Matrix2::new(h[0], h[1], h[2], h[3])
    }

    pub fn matrix(&self, p: &[f64]) -> Mat3 {
        self.eval(p).f
    }

    pub fn eval(&self, p: &[f64]) -> ChartEval {
        debug_assert_eq!(p.len(), DOF);
        let pa = self.a.point(p[0], p[1]);
        let pb = self.b.point(p[2], p[3]);
        let fa = self.a.frame(&pa);
        let fb = self.b.frame(&pb);
        let h = self.h(p);

        let g = Matrix3x2::from_columns(&[-fa.u2, fa.u1]);
        let ub = Matrix3x2::from_columns(&[fb.u1, fb.u2]);
        let f = ub * h * g.transpose();

        let mut df = [Mat3::zeros(); DOF];
        let mut de_prime = [Vec3::zeros(); DOF];
        for k in 0..2 {
            let dg = Matrix3x2::from_columns(&[-fa.du2[k], fa.du1[k]]);
            df[k] = ub * h * dg.transpose();
            let dub = Matrix3x2::from_columns(&[fb.du1[k], fb.du2[k]]);
            df[2 + k] = dub * h * g.transpose();
            de_prime[2 + k] = pb.de[k];
        }
        for (k, &i) in self.free.iter().enumerate() {
            let mut dh = Matrix2::zeros();
            dh[(i / 2, i % 2)] = 1.0;
            df[4 + k] = ub * dh * g.transpose();
        }
        ChartEval { f, df, e_prime: pb.e, de_prime }
    }
}
