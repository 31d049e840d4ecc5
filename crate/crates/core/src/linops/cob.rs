//! Change of basis `X` with `X e_p ∝ v` for a known eigenvector `v`.
//!
//! `Q` is Hermitian and sparse:
//! `Qu = (⟨u,v⟩; u₁ v_{2:n} - v₁ u_{2:n})`,
//! `Q⁻¹u = v₁⁻¹ ((⟨u,v⟩/‖v‖²) v - (0; u_{2:n}))`, with `⟨u,v⟩ = vᴴu`.
//!
//! `U` is unitary with first column `v/‖v‖`:
//! `Ux = v ∘ SCS↑(c ∘ x) - (0; a ∘ x_{2:n})`,
//! `Uᴴx = c̄ ∘ SCS↓(v̄ ∘ x) - (0; a ∘ x_{2:n})`,
//! where `c = (1/‖v‖, v̄_{2:n} ∘ b)`, `a_i = ‖v_{1:i-1}‖/‖v_{1:i}‖` and
//! `b_i = 1/(‖v_{1:i-1}‖ ‖v_{1:i}‖)`.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::SolverError;

/// Field elements the change of basis works over (`f64` or `Complex64`).
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + 'static
{
    fn conj(self) -> Self;
    fn abs(self) -> f64;
    fn from_real(x: f64) -> Self;
    fn is_real(self) -> bool;

    fn zero() -> Self {
        Self::from_real(0.0)
    }

    fn scale(self, s: f64) -> Self {
        self * Self::from_real(s)
    }
}

impl Scalar for f64 {
    fn conj(self) -> Self {
        self
    }
    fn abs(self) -> f64 {
        f64::abs(self)
    }
    fn from_real(x: f64) -> Self {
        x
    }
    fn is_real(self) -> bool {
        true
    }
}

impl Scalar for Complex64 {
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn abs(self) -> f64 {
        self.norm()
    }
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn is_real(self) -> bool {
        self.im == 0.0
    }
}

/// `SCS↑(x)_i = x₁ + Σ_{j>i} x_j`.
pub fn scs_up<T: Scalar>(x: &[T]) -> Vec<T> {
    let n = x.len();
    let mut out = vec![T::zero(); n];
    if n == 0 {
        return out;
    }
    let mut tail = T::zero();
    for i in (0..n).rev() {
        out[i] = x[0] + tail;
        if i > 0 {
            tail += x[i];
        }
    }
    out
}

/// `SCS↓(x)₁ = Σ_j x_j`, `SCS↓(x)_i = Σ_{j<i} x_j` for `i ≥ 2`.
pub fn scs_down<T: Scalar>(x: &[T]) -> Vec<T> {
    let n = x.len();
    let mut out = vec![T::zero(); n];
    let mut head = T::zero();
    for i in 0..n {
        if i > 0 {
            out[i] = head;
        }
        head += x[i];
    }
    if n > 0 {
        out[0] = head;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisForm {
    Hermitian,
    Unitary,
}

#[derive(Clone, Debug)]
pub struct ChangeOfBasis<T: Scalar> {
    form: BasisForm,
    /// Cyclic shift bringing the first nonzero entry of `v` to the front.
    pivot: usize,
    /// Unit factor applied to the rotated vector (Hermitian form only).
    phase: T,
    /// Rotated, phase-normalized eigenvector.
    w: Vec<T>,
    norm: f64,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl<T: Scalar> ChangeOfBasis<T> {
    /// `X e_p = phase · v` where `p = pivot()`; `p = 0` whenever `v₁ ≠ 0`.
    pub fn new(v: &[T], form: BasisForm) -> Result<Self, SolverError> {
        let n = v.len();
        let pivot = v.iter().position(|x| x.abs() > 0.0).ok_or(SolverError::ZeroVector)?;
        let mut w: Vec<T> = (0..n).map(|i| v[(i + pivot) % n]).collect();
        let phase = if form == BasisForm::Hermitian && !w[0].is_real() {
            // rotate the phase so the pivot entry is real and positive
            w[0].conj().scale(1.0 / w[0].abs())
        } else {
            T::from_real(1.0)
        };
        if phase != T::from_real(1.0) {
            w.iter_mut().for_each(|x| *x = *x * phase);
            w[0] = T::from_real(w[0].abs());
        }
        // prefix norms with compensated summation of squares
        let mut prefix = Vec::with_capacity(n);
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for x in &w {
            let y = x.abs() * x.abs() - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            prefix.push(sum.sqrt());
        }
        let norm = sum.sqrt();
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for i in 1..n {
            a[i] = prefix[i - 1] / prefix[i];
            b[i] = 1.0 / (prefix[i - 1] * prefix[i]);
        }
        Ok(Self {
            form,
            pivot,
            phase,
            w,
            norm,
            a,
            b,
        })
    }

    pub fn form(&self) -> BasisForm {
        self.form
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn pivot(&self) -> usize {
        self.pivot
    }

    pub fn phase(&self) -> T {
        self.phase
    }

    fn rotate_in(&self, x: &[T]) -> Vec<T> {
        let n = x.len();
        (0..n).map(|i| x[(i + self.pivot) % n]).collect()
    }

    fn rotate_out(&self, y: Vec<T>) -> Vec<T> {
        if self.pivot == 0 {
            return y;
        }
        let n = y.len();
        let mut out = vec![T::zero(); n];
        for (i, v) in y.into_iter().enumerate() {
            out[(i + self.pivot) % n] = v;
        }
        out
    }

    fn check(&self, x: &[T]) -> Result<(), SolverError> {
        if x.len() != self.dim() {
            return Err(SolverError::LengthMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn inner(&self, u: &[T]) -> T {
        u.iter().zip(&self.w).fold(T::zero(), |acc, (x, v)| acc + v.conj() * *x)
    }

    fn q(&self, u: &[T]) -> Vec<T> {
        let v1 = self.w[0];
        let mut out = Vec::with_capacity(u.len());
        out.push(self.inner(u));
        for i in 1..u.len() {
            out.push(u[0] * self.w[i] - v1 * u[i]);
        }
        out
    }

    fn q_inv(&self, u: &[T]) -> Vec<T> {
        let inv_v1 = T::from_real(1.0) / self.w[0];
        let s = self.inner(u).scale(1.0 / (self.norm * self.norm));
        self.w
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let tail = if i == 0 { T::zero() } else { u[i] };
                (s * v - tail) * inv_v1
            })
            .collect()
    }

    fn u(&self, x: &[T]) -> Vec<T> {
        let c: Vec<T> = x
            .iter()
            .enumerate()
            .map(|(i, &xi)| {
                let ci = if i == 0 {
                    T::from_real(1.0 / self.norm)
                } else {
                    self.w[i].conj().scale(self.b[i])
                };
                ci * xi
            })
            .collect();
        let s = scs_up(&c);
        (0..x.len())
            .map(|i| {
                let head = self.w[i] * s[i];
                if i == 0 {
                    head
                } else {
                    head - x[i].scale(self.a[i])
                }
            })
            .collect()
    }

    fn u_adj(&self, x: &[T]) -> Vec<T> {
        let vx: Vec<T> = x.iter().zip(&self.w).map(|(&xi, v)| v.conj() * xi).collect();
        let s = scs_down(&vx);
        (0..x.len())
            .map(|i| {
                if i == 0 {
                    s[0].scale(1.0 / self.norm)
                } else {
                    (self.w[i] * s[i]).scale(self.b[i]) - x[i].scale(self.a[i])
                }
            })
            .collect()
    }

    /// `X x`.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>, SolverError> {
        self.check(x)?;
        let y = self.rotate_in(x);
        let z = match self.form {
            BasisForm::Hermitian => self.q(&y),
            BasisForm::Unitary => self.u(&y),
        };
        Ok(self.rotate_out(z))
    }

    /// `X⁻¹ x` (`Uᴴx` for the unitary form).
    pub fn apply_inverse(&self, x: &[T]) -> Result<Vec<T>, SolverError> {
        self.check(x)?;
        let y = self.rotate_in(x);
        let z = match self.form {
            BasisForm::Hermitian => self.q_inv(&y),
            BasisForm::Unitary => self.u_adj(&y),
        };
        Ok(self.rotate_out(z))
    }

    /// `Xᴴ x`.
    pub fn apply_adjoint(&self, x: &[T]) -> Result<Vec<T>, SolverError> {
        match self.form {
            // Q is Hermitian
            BasisForm::Hermitian => self.apply(x),
            BasisForm::Unitary => self.apply_inverse(x),
        }
    }
}

impl ChangeOfBasis<f64> {
    /// Basis for the graph-Laplacian null vector `v = 1_n`.
    pub fn laplacian(n: usize, form: BasisForm) -> Result<Self, SolverError> {
        Self::new(&vec![1.0; n], form)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::NormalStream;
    use nalgebra::DMatrix;

    type C = Complex64;

    fn dense_of<T: Scalar + nalgebra::Scalar>(n: usize, f: impl Fn(&[T]) -> Vec<T>) -> DMatrix<T> {
        let mut m = DMatrix::from_element(n, n, T::zero());
        for j in 0..n {
            let mut e = vec![T::zero(); n];
            e[j] = T::from_real(1.0);
            for (i, v) in f(&e).into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Q from its entries: first column v, first row v̄ᵀ, diagonal -v₁.
    fn dense_q(v: &[C]) -> DMatrix<C> {
        let n = v.len();
        DMatrix::from_fn(n, n, |i, j| match (i, j) {
            (0, _) => v[j].conj(),
            (_, 0) => v[i],
            _ if i == j => -v[0],
            _ => C::new(0.0, 0.0),
        })
    }

    /// Column j >= 2: unit vector in span(e_1..e_j) orthogonal to v and to the
    /// previous columns, with a negative e_j component.
    fn dense_u(v: &[C]) -> DMatrix<C> {
        let n = v.len();
        let mut cols: Vec<Vec<C>> = Vec::new();
        let nv = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        cols.push(v.iter().map(|x| x / nv).collect());
        for k in 1..n {
            let mut head: Vec<C> = v.iter().take(k + 1).copied().collect();
            head.resize(n, C::new(0.0, 0.0));
            let nh = head.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            head.iter_mut().for_each(|x| *x /= nh);
            let mut c = vec![C::new(0.0, 0.0); n];
            c[k] = C::new(1.0, 0.0);
            for _ in 0..2 {
                for q in std::iter::once(&head).chain(&cols[1..]) {
                    let d: C = q.iter().zip(&c).map(|(a, b)| a.conj() * b).sum();
                    c.iter_mut().zip(q).for_each(|(x, y)| *x -= d * y);
                }
            }
            let nc = c.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            c.iter_mut().for_each(|x| *x /= -nc);
            cols.push(c);
        }
        DMatrix::from_fn(n, n, |i, j| cols[j][i])
    }

    fn random_c(n: usize, s: &mut NormalStream) -> Vec<C> {
        (0..n).map(|_| C::new(s.next_normal(), s.next_normal())).collect()
    }

    fn max_diff(a: &DMatrix<C>, b: &DMatrix<C>) -> f64 {
        (a - b).iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn scs_hand_values() {
        assert_eq!(scs_up(&[1.0, 0.0, 0.0]), vec![1.0, 1.0, 1.0]);
        assert_eq!(scs_up(&[1.0, 2.0, 3.0]), vec![6.0, 4.0, 1.0]);
        assert_eq!(scs_down(&[1.0, 2.0, 3.0]), vec![6.0, 1.0, 3.0]);
    }

    #[test]
    fn laplacian_q_hand_values() {
        let q = ChangeOfBasis::laplacian(3, BasisForm::Hermitian).unwrap();
        assert_eq!(q.apply(&[1.0, 2.0, 3.0]).unwrap(), vec![6.0, -1.0, -2.0]);
        let inv = q.apply_inverse(&[1.0, 2.0, 3.0]).unwrap();
        for (a, b) in inv.iter().zip([2.0, 0.0, -1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let back = q.apply(&inv).unwrap();
        for (a, b) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn laplacian_u_is_orthogonal_with_constant_first_column() {
        let n = 40;
        let u = ChangeOfBasis::laplacian(n, BasisForm::Unitary).unwrap();
        let m = dense_of(n, |x: &[f64]| u.apply(x).unwrap());
        let gram = m.transpose() * &m;
        assert!((gram - DMatrix::identity(n, n)).abs().max() < 1e-13);
        for i in 0..n {
            assert!((m[(i, 0)] - 1.0 / (n as f64).sqrt()).abs() < 1e-15);
        }
        // closed-form Laplacian coefficients
        for k in 2..=n {
            let kf = k as f64;
            assert!((u.a[k - 1] - ((kf - 1.0) / kf).sqrt()).abs() < 1e-15);
            assert!((u.b[k - 1] - 1.0 / (kf * (kf - 1.0)).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn complex_actions_match_dense_oracles() {
        let mut s = NormalStream::new(42);
        for n in [2usize, 3, 17, 200] {
            let v = random_c(n, &mut s);
            let x = random_c(n, &mut s);
            let u = ChangeOfBasis::new(&v, BasisForm::Unitary).unwrap();
            let du = dense_u(&v);
            let ux = u.apply(&x).unwrap();
            let dx = &du * nalgebra::DVector::from_column_slice(&x);
            assert!(ux.iter().zip(dx.iter()).all(|(a, b)| (a - b).norm() < 1e-12), "n={n}");
            let back = u.apply_inverse(&ux).unwrap();
            assert!(back.iter().zip(&x).all(|(a, b)| (a - b).norm() < 1e-12));
            let uv = u.apply_adjoint(&v).unwrap();
            let nv = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!((uv[0] - C::new(nv, 0.0)).norm() < 1e-11);
            assert!(uv[1..].iter().all(|z| z.norm() < 1e-11));

            let q = ChangeOfBasis::new(&v, BasisForm::Hermitian).unwrap();
            let mut w: Vec<C> = v.iter().map(|z| z * q.phase()).collect();
            assert!(w[0].im.abs() < 1e-15);
            w[0] = C::new(w[0].norm(), 0.0);
            let dq = dense_q(&w);
            assert!(max_diff(&dq, &dq.adjoint()) == 0.0);
            let mq = dense_of(n, |x: &[C]| q.apply(x).unwrap());
            assert!(max_diff(&mq, &dq) < 1e-12);
            let mqi = dense_of(n, |x: &[C]| q.apply_inverse(x).unwrap());
            assert!(max_diff(&(mqi * dq), &DMatrix::identity(n, n)) < 1e-11);
        }
    }

    #[test]
    fn first_column_is_the_vector() {
        let mut s = NormalStream::new(1);
        let v: Vec<f64> = (0..30).map(|_| s.next_normal()).collect();
        let mut e1 = vec![0.0; 30];
        e1[0] = 1.0;
        let q = ChangeOfBasis::new(&v, BasisForm::Hermitian).unwrap();
        assert_eq!(q.apply(&e1).unwrap(), v);
        let qi = q.apply_inverse(&v).unwrap();
        assert!((qi[0] - 1.0).abs() < 1e-12 && qi[1..].iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn leading_zero_uses_a_rotated_pivot() {
        let v = [0.0, 0.0, 2.0, -1.0, 3.0];
        for form in [BasisForm::Hermitian, BasisForm::Unitary] {
            let x = ChangeOfBasis::new(&v, form).unwrap();
            assert_eq!(x.pivot(), 2);
            let mut ep = vec![0.0; 5];
            ep[2] = 1.0;
            let col = x.apply(&ep).unwrap();
            let scale = if form == BasisForm::Unitary { 1.0 / 14f64.sqrt() } else { 1.0 };
            assert!(col.iter().zip(&v).all(|(a, b)| (a - b * scale).abs() < 1e-14));
            let m = dense_of(5, |y: &[f64]| x.apply(y).unwrap());
            let mi = dense_of(5, |y: &[f64]| x.apply_inverse(y).unwrap());
            assert!((&m * mi - DMatrix::identity(5, 5)).abs().max() < 1e-13);
            if form == BasisForm::Hermitian {
                assert_eq!(m, m.transpose());
            }
        }
        assert!(matches!(
            ChangeOfBasis::new(&[0.0; 4], BasisForm::Unitary),
            Err(SolverError::ZeroVector)
        ));
    }
}
