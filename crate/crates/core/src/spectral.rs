//! Spectral calculus for the Neumann Laplacian on `[0, 1]`.
//!
//! Fields are expanded in the orthonormal cosine basis `e_0 = 1`,
//! `e_i(θ) = √2 cos(iπθ)`, eigenvectors of `A = ∂²_θ` with eigenvalues
//! `λ_i = -(iπ)²`. Physical-space values live on the midpoint grid
//! `θ_j = (j + 1/2)/M`, where the cosine transform pair (DCT-II / DCT-III)
//! is exact for fields with fewer than `M` modes.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `λ_i = -(iπ)²`.
pub fn eigenvalue(i: usize) -> f64 {
    let k = i as f64 * PI;
    -k * k
}

/// `-λ_i = (iπ)²`.
#[inline]
pub fn neg_eigenvalue(i: usize) -> f64 {
    -eigenvalue(i)
}

/// Evaluate the basis function `e_i` at `θ ∈ [0, 1]`.
pub fn basis_eval(i: usize, theta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Domain(format!("θ = {theta} is outside [0, 1]")));
    }
    Ok(if i == 0 { 1.0 } else { SQRT_2 * (i as f64 * PI * theta).cos() })
}

/// Coordinates of a field in the cosine basis; `coeffs[0]` is the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    coeffs: Vec<f64>,
}

/// A field sampled at the midpoints `θ_j = (j + 1/2)/M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    values: Vec<f64>,
}

/// `|h|_γ` and `‖h‖_γ = (|h|_γ² + h̄²)^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaNorm {
    pub gamma: f64,
    pub seminorm: f64,
    pub full_norm: f64,
}

impl SpectralField {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::Domain(format!("coefficient {i} is not finite")));
        }
        Ok(Self { coeffs })
    }

    /// Construct without the finiteness check; for hot loops that already
    /// guarantee it.
    pub(crate) fn from_vec_unchecked(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zeros(modes: usize) -> Self {
        Self { coeffs: vec![0.0; modes] }
    }

    /// The basis vector `e_i` truncated to `modes` coefficients.
    pub fn unit(modes: usize, i: usize) -> Self {
        let mut f = Self::zeros(modes);
        f.coeffs[i] = 1.0;
        f
    }

    /// The constant field `c`.
    pub fn constant(modes: usize, c: f64) -> Self {
        let mut f = Self::zeros(modes);
        f.coeffs[0] = c;
        f
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn mean(&self) -> f64 {
        self.coeffs.first().copied().unwrap_or(0.0)
    }

    /// `Π h = h - h̄`.
    pub fn project_zero_mean(&self) -> Self {
        let mut out = self.clone();
        if let Some(c) = out.coeffs.first_mut() {
            *c = 0.0;
        }
        out
    }

    /// `(-A)^γ h`. For `γ ≠ 0` the mean coefficient is dropped, since the
    /// operator only acts on the zero-mean part.
    pub fn apply_neg_a_pow(&self, gamma: f64) -> Self {
        if gamma == 0.0 {
            return self.clone();
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| if i == 0 { 0.0 } else { neg_eigenvalue(i).powf(gamma) * c })
            .collect();
        Self { coeffs }
    }

    /// `A h`.
    pub fn apply_a(&self) -> Self {
        let coeffs = self.coeffs.iter().enumerate().map(|(i, &c)| eigenvalue(i) * c).collect();
        Self { coeffs }
    }

    /// `Q̄ h = Q(h - h̄) + h̄`.
    pub fn q_bar(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| if i == 0 { c } else { c / neg_eigenvalue(i) })
            .collect();
        Self { coeffs }
    }

    pub fn norm_gamma(&self, gamma: f64) -> GammaNorm {
        let semi_sq: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, &c)| neg_eigenvalue(i).powf(gamma) * c * c)
            .sum();
        let mean = self.mean();
        GammaNorm { gamma, seminorm: semi_sq.sqrt(), full_norm: (semi_sq + mean * mean).sqrt() }
    }

    /// `⟨h, k⟩` in `L²(0, 1)`.
    pub fn inner_l2(&self, other: &Self) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    /// The `V₋₁` inner product `Σ_{i≥1} h_i k_i / (iπ)² + h̄ k̄`.
    pub fn inner_vm1(&self, other: &Self) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .enumerate()
            .map(|(i, (a, b))| if i == 0 { a * b } else { a * b / neg_eigenvalue(i) })
            .sum()
    }

    /// Evaluate the expansion at a point.
    pub fn eval(&self, theta: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| if i == 0 { c } else { c * SQRT_2 * (i as f64 * PI * theta).cos() })
            .sum()
    }

    pub fn axpy(&mut self, a: f64, x: &Self) {
        for (y, xi) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *y += a * xi;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        Self { coeffs }
    }
}

impl GridField {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(m: usize, c: f64) -> Self {
        Self { values: vec![c; m] }
    }

    /// `θ_j = (j + 1/2)/M`.
    pub fn point(j: usize, m: usize) -> f64 {
        (j as f64 + 0.5) / m as f64
    }

    pub fn from_fn(m: usize, f: impl Fn(f64) -> f64) -> Self {
        Self { values: (0..m).map(|j| f(Self::point(j, m))).collect() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Midpoint-rule integral of `g(x(θ))` over `[0, 1]`.
    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        let m = self.values.len() as f64;
        self.values.iter().map(|&v| g(v)).sum::<f64>() / m
    }

    pub fn mean(&self) -> f64 {
        self.integrate(|v| v)
    }

    /// Midpoint-rule `⟨x, k⟩`.
    pub fn inner(&self, other: &Self) -> f64 {
        let m = self.values.len() as f64;
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() / m
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// A planned transform pair between `N` modes and an `M`-point grid.
#[derive(Clone)]
pub struct Transform {
    modes: usize,
    grid: usize,
    dct: Arc<dyn TransformType2And3<f64>>,
}

impl std::fmt::Debug for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transform").field("modes", &self.modes).field("grid", &self.grid).finish()
    }
}

impl Transform {
    pub fn new(modes: usize, grid: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::Config("mode count must be positive".into()));
        }
        if grid < modes {
            return Err(Error::Config(format!("grid size M = {grid} is smaller than mode count N = {modes}")));
        }
        let dct = DctPlanner::new().plan_dct2(grid);
        Ok(Self { modes, grid, dct })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn scratch_len(&self) -> usize {
        self.dct.get_scratch_len()
    }

    /// Grid values to the first `N` coefficients, in place into `out`.
    /// `buf` must have length `M`; it is overwritten.
    pub fn to_spectral_into(&self, values: &[f64], buf: &mut [f64], scratch: &mut [f64], out: &mut [f64]) {
        buf.copy_from_slice(values);
        self.dct.process_dct2_with_scratch(buf, scratch);
        let m = self.grid as f64;
        out[0] = buf[0] / m;
        for i in 1..self.modes {
            out[i] = SQRT_2 * buf[i] / m;
        }
    }

    /// Coefficients (at most `M` of them) to grid values, in place.
    pub fn to_grid_into(&self, coeffs: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        out.fill(0.0);
        out[0] = 2.0 * coeffs[0];
        for i in 1..coeffs.len().min(self.grid) {
            out[i] = SQRT_2 * coeffs[i];
        }
        self.dct.process_dct3_with_scratch(out, scratch);
    }

    pub fn to_spectral(&self, g: &GridField) -> Result<SpectralField> {
        if g.len() != self.grid {
            return Err(Error::Config(format!("grid field has {} points, transform expects {}", g.len(), self.grid)));
        }
        let mut buf = vec![0.0; self.grid];
        let mut scratch = vec![0.0; self.scratch_len()];
        let mut out = vec![0.0; self.modes];
        self.to_spectral_into(&g.values, &mut buf, &mut scratch, &mut out);
        Ok(SpectralField { coeffs: out })
    }

    pub fn to_grid(&self, h: &SpectralField) -> Result<GridField> {
        if h.modes() > self.grid {
            return Err(Error::Config(format!("{} modes cannot be represented on {} points", h.modes(), self.grid)));
        }
        let mut out = vec![0.0; self.grid];
        let mut scratch = vec![0.0; self.scratch_len()];
        self.to_grid_into(&h.coeffs, &mut out, &mut scratch);
        Ok(GridField { values: out })
    }
}

/// One-shot forward transform keeping `modes` coefficients.
pub fn to_spectral(g: &GridField, modes: usize) -> Result<SpectralField> {
    Transform::new(modes, g.len())?.to_spectral(g)
}

/// One-shot inverse transform onto an `m`-point grid.
pub fn to_grid(h: &SpectralField, m: usize) -> Result<GridField> {
    Transform::new(h.modes(), m)?.to_grid(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn field(v: &[f64]) -> SpectralField {
        SpectralField::new(v.to_vec()).unwrap()
    }

    #[test]
    fn eigenvalues() {
        assert_eq!(eigenvalue(0), 0.0);
        assert_relative_eq!(eigenvalue(1), -9.869_604_401, epsilon = 1e-8);
        assert_relative_eq!(eigenvalue(3), -88.826_439_61, epsilon = 1e-7);
    }

    #[test]
    fn basis_values() {
        assert_eq!(basis_eval(0, 0.37).unwrap(), 1.0);
        assert_relative_eq!(basis_eval(1, 0.0).unwrap(), SQRT_2);
        assert_relative_eq!(basis_eval(2, 0.5).unwrap(), -SQRT_2, epsilon = 1e-15);
        assert!(matches!(basis_eval(1, 1.2), Err(Error::Domain(_))));
        assert!(basis_eval(1, -1e-9).is_err());
    }

    #[test]
    fn transform_of_unit_modes() {
        let t = Transform::new(8, 16).unwrap();
        let ones = t.to_grid(&SpectralField::unit(8, 0)).unwrap();
        assert!(ones.values().iter().all(|&v| (v - 1.0).abs() < 1e-14));
        let e1 = t.to_grid(&SpectralField::unit(8, 1)).unwrap();
        for (j, v) in e1.values().iter().enumerate() {
            assert_relative_eq!(*v, basis_eval(1, GridField::point(j, 16)).unwrap(), epsilon = 1e-13);
        }
        let back = t.to_spectral(&e1).unwrap();
        for (i, c) in back.coeffs().iter().enumerate() {
            assert!((c - if i == 1 { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
    }

    #[test]
    fn grid_smaller_than_modes_is_rejected() {
        assert!(matches!(Transform::new(16, 8), Err(Error::Config(_))));
        assert!(to_grid(&SpectralField::zeros(9), 8).is_err());
    }

    #[test]
    fn operator_examples() {
        let pi2 = PI * PI;
        let e1 = SpectralField::unit(4, 1);
        let e2 = SpectralField::unit(4, 2);
        assert_relative_eq!(e1.apply_neg_a_pow(1.0).coeffs()[1], pi2);
        assert_relative_eq!(e2.apply_neg_a_pow(-1.0).coeffs()[2], 1.0 / (4.0 * pi2));
        assert_eq!(field(&[3.0, 1.0, 2.0]).mean(), 3.0);
        assert_eq!(field(&[3.0, 1.0, 2.0]).project_zero_mean().coeffs(), &[0.0, 1.0, 2.0]);
        assert_eq!(SpectralField::unit(3, 0).q_bar(), SpectralField::unit(3, 0));
        assert_relative_eq!(e1.q_bar().coeffs()[1], 1.0 / pi2);
        let q = field(&[1.0, 0.0, 1.0]).q_bar();
        assert_eq!(q.coeffs()[0], 1.0);
        assert_relative_eq!(q.coeffs()[2], 1.0 / (4.0 * pi2));
        assert_relative_eq!(e1.norm_gamma(-1.0).seminorm, 1.0 / PI, epsilon = 1e-15);
        let n0 = field(&[-2.5, 0.0, 0.0]).norm_gamma(0.7);
        assert_eq!(n0.seminorm, 0.0);
        assert_eq!(n0.full_norm, 2.5);
        assert_relative_eq!(e1.inner_vm1(&e1), 1.0 / pi2);
        assert_eq!(e1.inner_vm1(&e2), 0.0);
        assert_eq!(SpectralField::unit(3, 0).inner_vm1(&SpectralField::unit(3, 0)), 1.0);
    }

    #[test]
    fn non_finite_coefficients_are_rejected() {
        assert!(SpectralField::new(vec![0.0, f64::NAN]).is_err());
        assert!(SpectralField::new(vec![f64::INFINITY]).is_err());
    }

    fn coeffs_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0f64..3.0, n)
    }

    proptest! {
        #[test]
        fn neg_a_qbar_is_projection(c in coeffs_strategy(32)) {
            let h = field(&c);
            let lhs = h.q_bar().apply_a();
            let rhs = h.project_zero_mean();
            for (a, b) in lhs.coeffs().iter().zip(rhs.coeffs()) {
                prop_assert!((-a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn round_trip_with_double_grid(c in coeffs_strategy(24)) {
            let h = field(&c);
            let t = Transform::new(24, 48).unwrap();
            let back = t.to_spectral(&t.to_grid(&h).unwrap()).unwrap();
            for (a, b) in h.coeffs().iter().zip(back.coeffs()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn parseval_on_grid(c in coeffs_strategy(20)) {
            let h = field(&c);
            let g = to_grid(&h, 40).unwrap();
            let l2_grid = g.inner(&g);
            let l2_coef: f64 = c.iter().map(|x| x * x).sum();
            prop_assert!((l2_grid - l2_coef).abs() < 1e-8 * (1.0 + l2_coef));
            prop_assert!((h.norm_gamma(0.0).full_norm - l2_coef.sqrt()).abs() < 1e-10);
        }

        #[test]
        fn powers_compose(c in coeffs_strategy(16), g1 in -2.0f64..2.0, g2 in -2.0f64..2.0) {
            let h = field(&c).project_zero_mean();
            let a = h.apply_neg_a_pow(g1).apply_neg_a_pow(g2);
            let b = h.apply_neg_a_pow(g1 + g2);
            for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
                prop_assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn projection_is_idempotent_and_vm1_norm_matches_qbar(c in coeffs_strategy(16)) {
            let h = field(&c);
            prop_assert_eq!(h.project_zero_mean().project_zero_mean(), h.project_zero_mean());
            let semi = h.norm_gamma(-1.0).seminorm;
            let via_q = h.q_bar().inner_l2(&h) - h.mean() * h.mean();
            prop_assert!((semi * semi - via_q).abs() < 1e-10);
        }
    }
}
