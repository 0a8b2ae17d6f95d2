//! Stationary, unit-variance Gaussian field laws.
//!
//! Conventions: `r(x) = E[f(y) f(y + x)]` and
//! `r(x) = ∫ exp(i<w, x>) S(w) dw`, so the spectral density `S` integrates
//! to one. `spectral_moments` returns `-Hess r(0) = ∫ w wᵀ S(w) dw`, which is
//! the covariance of the gradient at a point.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::special::bessel_j_scaled;

pub type DeterministicField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type CovarianceFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

pub const BARGMANN_FOCK: &str = "bargmann-fock";
pub const LARGE_BAND: &str = "large-band";
pub const SYNTHETIC: &str = "synthetic-test";

/// User-supplied law for oracles: a deterministic field (geometry tests)
/// and/or a covariance function (embedding tests).
#[derive(Clone)]
pub struct Synthetic {
    pub field: Option<DeterministicField>,
    pub covariance: CovarianceFn,
    pub spectral_moments: DMatrix<f64>,
}

#[derive(Clone)]
pub enum ModelKind {
    /// `r(x) = exp(-|x|^2)`.
    BargmannFock,
    /// Spectral measure uniform on the unit disc; `r(x) = 2 J_1(|x|) / |x|`.
    LargeBand,
    Synthetic(Synthetic),
}

#[derive(Clone)]
pub struct CovarianceModel {
    name: String,
    dim: usize,
    kind: ModelKind,
}

impl fmt::Debug for CovarianceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CovarianceModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

/// Radial profile `phi(rho)` of an isotropic covariance with `phi'(rho)/rho`
/// and `phi''(rho)`, both finite at the origin.
#[derive(Debug, Clone, Copy)]
pub struct RadialDerivatives {
    pub value: f64,
    pub d1_over_r: f64,
    pub d2: f64,
}

pub fn make_model(name: &str, dim: usize) -> Result<CovarianceModel> {
    let unsupported = || Error::UnsupportedDimension { model: name.to_string(), dim };
    let kind = match name {
        BARGMANN_FOCK => {
            if !(1..=2).contains(&dim) {
                return Err(unsupported());
            }
            ModelKind::BargmannFock
        }
        LARGE_BAND => {
            if dim != 2 {
                return Err(unsupported());
            }
            ModelKind::LargeBand
        }
        SYNTHETIC => {
            if !(1..=2).contains(&dim) {
                return Err(unsupported());
            }
            return Ok(CovarianceModel::synthetic(dim));
        }
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Ok(CovarianceModel { name: name.to_string(), dim, kind })
}

impl CovarianceModel {
    /// Synthetic model with a grid white-noise covariance (one at lag zero,
    /// zero elsewhere), identity spectral moments and no deterministic field.
    pub fn synthetic(dim: usize) -> Self {
        let covariance: CovarianceFn =
            Arc::new(|lag: &[f64]| if lag.iter().all(|&x| x == 0.0) { 1.0 } else { 0.0 });
        CovarianceModel {
            name: SYNTHETIC.to_string(),
            dim,
            kind: ModelKind::Synthetic(Synthetic {
                field: None,
                covariance,
                spectral_moments: DMatrix::identity(dim, dim),
            }),
        }
    }

    pub fn with_field<F>(mut self, field: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if let ModelKind::Synthetic(s) = &mut self.kind {
            s.field = Some(Arc::new(field));
        }
        self
    }

    pub fn with_covariance<F>(mut self, covariance: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if let ModelKind::Synthetic(s) = &mut self.kind {
            s.covariance = Arc::new(covariance);
        }
        self
    }

    pub fn with_spectral_moments(mut self, lambda: DMatrix<f64>) -> Self {
        if let ModelKind::Synthetic(s) = &mut self.kind {
            s.spectral_moments = lambda;
        }
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Codimension of the nodal set: scalar fields only.
    pub fn codim(&self) -> usize {
        1
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn is_isotropic(&self) -> bool {
        !matches!(self.kind, ModelKind::Synthetic(_))
    }

    /// Deterministic field attached to a synthetic model, if any.
    pub fn deterministic_field(&self) -> Option<&DeterministicField> {
        match &self.kind {
            ModelKind::Synthetic(s) => s.field.as_ref(),
            _ => None,
        }
    }

    pub fn h2_decay_note(&self) -> &'static str {
        match self.kind {
            ModelKind::BargmannFock => {
                "covariance and all derivatives decay like exp(-|x|^2): any polynomially weighted g is admissible"
            }
            ModelKind::LargeBand => {
                "covariance decays like |x|^(-3/2): square-integrable on R_+ only through the radial weight; borderline for d = 2"
            }
            ModelKind::Synthetic(_) => "user supplied; no decay assumption is recorded",
        }
    }

    /// Radial profile for the isotropic built-in models.
    pub fn radial(&self, rho: f64) -> Option<RadialDerivatives> {
        match self.kind {
            ModelKind::BargmannFock => {
                let e = (-rho * rho).exp();
                Some(RadialDerivatives { value: e, d1_over_r: -2.0 * e, d2: (4.0 * rho * rho - 2.0) * e })
            }
            ModelKind::LargeBand => {
                // phi = 2 J1(r)/r, phi'/r = -2 J2(r)/r^2, phi'' = -2 J2/r^2 + 2 J3/r
                let s2 = bessel_j_scaled(2, rho);
                let s3 = bessel_j_scaled(3, rho);
                Some(RadialDerivatives {
                    value: 2.0 * bessel_j_scaled(1, rho),
                    d1_over_r: -2.0 * s2,
                    d2: -2.0 * s2 + 2.0 * rho * rho * s3,
                })
            }
            ModelKind::Synthetic(_) => None,
        }
    }

    pub fn covariance(&self, lag: &[f64]) -> f64 {
        debug_assert_eq!(lag.len(), self.dim);
        match &self.kind {
            ModelKind::Synthetic(s) => (s.covariance)(lag),
            _ => self.radial(norm(lag)).expect("isotropic").value,
        }
    }

    /// Gradient of `r` at `lag` (isotropic models only).
    pub fn covariance_gradient(&self, lag: &[f64]) -> Option<Vec<f64>> {
        let rd = self.radial(norm(lag))?;
        Some(lag.iter().map(|x| rd.d1_over_r * x).collect())
    }

    /// Hessian of `r` at `lag` (isotropic models only).
    pub fn covariance_hessian(&self, lag: &[f64]) -> Option<DMatrix<f64>> {
        let rho = norm(lag);
        let rd = self.radial(rho)?;
        let d = lag.len();
        let mut h = DMatrix::<f64>::identity(d, d) * rd.d1_over_r;
        if rho > 0.0 {
            let w = (rd.d2 - rd.d1_over_r) / (rho * rho);
            for i in 0..d {
                for j in 0..d {
                    h[(i, j)] += w * lag[i] * lag[j];
                }
            }
        }
        Some(h)
    }

    /// Spectral density `S(w)`; `None` for synthetic models.
    pub fn spectral_density(&self, freq: &[f64]) -> Option<f64> {
        match self.kind {
            ModelKind::BargmannFock => {
                let w2: f64 = freq.iter().map(|w| w * w).sum();
                Some((4.0 * std::f64::consts::PI).powf(-(self.dim as f64) / 2.0) * (-w2 / 4.0).exp())
            }
            ModelKind::LargeBand => {
                Some(if norm(freq) <= 1.0 { std::f64::consts::FRAC_1_PI } else { 0.0 })
            }
            ModelKind::Synthetic(_) => None,
        }
    }

    /// `Lambda = -Hess r(0)`.
    pub fn spectral_moments(&self) -> DMatrix<f64> {
        match &self.kind {
            ModelKind::Synthetic(s) => s.spectral_moments.clone(),
            _ => {
                let zero = vec![0.0; self.dim];
                -self.covariance_hessian(&zero).expect("isotropic")
            }
        }
    }

    /// Smallest radius beyond which the covariance envelope stays below `eps`,
    /// searched up to `limit`; `None` if it never does.
    pub fn decay_radius(&self, eps: f64, limit: f64) -> Option<f64> {
        match self.kind {
            ModelKind::BargmannFock => Some((-eps.ln()).sqrt()),
            // |2 J1(r)/r| <= 2 sqrt(2/pi) r^{-3/2}
            ModelKind::LargeBand => {
                let r = (2.0 * (2.0 / std::f64::consts::PI).sqrt() / eps).powf(2.0 / 3.0);
                (r <= limit).then_some(r)
            }
            ModelKind::Synthetic(_) => None,
        }
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bargmann_fock_values() {
        let m = make_model(BARGMANN_FOCK, 2).unwrap();
        assert!((m.covariance(&[1.0, 0.0]) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((m.covariance(&[1.0, 0.0]) - 0.367_879).abs() < 1e-6);
        let m1 = make_model(BARGMANN_FOCK, 1).unwrap();
        assert_eq!(m1.covariance(&[0.0]), 1.0);
    }

    #[test]
    fn spectral_moments_analytic() {
        let m1 = make_model(BARGMANN_FOCK, 1).unwrap();
        assert_eq!(m1.spectral_moments()[(0, 0)], 2.0);
        let m2 = make_model(BARGMANN_FOCK, 2).unwrap();
        let l = m2.spectral_moments();
        assert_eq!(l, DMatrix::identity(2, 2) * 2.0);
        assert_eq!(l, l.transpose());
        let lb = make_model(LARGE_BAND, 2).unwrap().spectral_moments();
        assert!((lb[(0, 0)] - 0.25).abs() < 1e-15 && lb[(0, 1)] == 0.0);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(make_model("berry", 2), Err(Error::UnknownModel(_))));
        assert!(matches!(make_model(LARGE_BAND, 1), Err(Error::UnsupportedDimension { .. })));
        assert!(matches!(make_model(BARGMANN_FOCK, 3), Err(Error::UnsupportedDimension { .. })));
        assert!(make_model(SYNTHETIC, 2).is_ok());
    }

    #[test]
    fn hessian_matches_finite_differences_away_from_origin() {
        for name in [BARGMANN_FOCK, LARGE_BAND] {
            let m = make_model(name, 2).unwrap();
            let x = [0.7, -1.3];
            let h = m.covariance_hessian(&x).unwrap();
            let g = m.covariance_gradient(&x).unwrap();
            let eps = 1e-4;
            for i in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += eps;
                xm[i] -= eps;
                let fd = (m.covariance(&xp) - m.covariance(&xm)) / (2.0 * eps);
                assert!((fd - g[i]).abs() < 1e-7, "{name} grad {i}");
                let gp = m.covariance_gradient(&xp).unwrap();
                let gm = m.covariance_gradient(&xm).unwrap();
                for j in 0..2 {
                    let fd = (gp[j] - gm[j]) / (2.0 * eps);
                    assert!((fd - h[(i, j)]).abs() < 1e-7, "{name} hess {i}{j}");
                }
            }
        }
    }

    #[test]
    fn large_band_closed_form_near_zero() {
        let m = make_model(LARGE_BAND, 2).unwrap();
        // 2 J1(r)/r = 1 - r^2/8 + r^4/192 - ...
        let r: f64 = 0.01;
        let series = 1.0 - r * r / 8.0 + r.powi(4) / 192.0;
        assert!((m.covariance(&[r, 0.0]) - series).abs() < 1e-15);
    }
}
