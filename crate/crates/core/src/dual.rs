//! The closed-form dual value function `v(y, h)`, its derivatives, and the
//! free-boundary points in the dual variable.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Model;

/// Points within this relative distance of a seam are assigned to the closed
/// side of the case split.
pub const SEAM_TOL: f64 = 1e-12;

/// `scale * h^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLaw {
    pub scale: f64,
    pub exponent: f64,
}

impl PowerLaw {
    pub const fn new(scale: f64, exponent: f64) -> Self {
        Self { scale, exponent }
    }

    #[inline]
    pub fn eval(&self, h: f64) -> f64 {
        self.scale * h.powf(self.exponent)
    }

    /// `d/dh` of [`PowerLaw::eval`].
    #[inline]
    pub fn derivative(&self, h: f64) -> f64 {
        self.scale * self.exponent * h.powf(self.exponent - 1.0)
    }
}

/// The coefficients `C2(h)..C6(h)` of the homogeneous solutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefficientSet {
    pub c2: PowerLaw,
    pub c3: PowerLaw,
    pub c4: PowerLaw,
    pub c5: PowerLaw,
    pub c6: PowerLaw,
}

impl CoefficientSet {
    /// `[C2, C3, C4, C5, C6]` at `h`.
    pub fn at(&self, h: f64) -> [f64; 5] {
        [self.c2.eval(h), self.c3.eval(h), self.c4.eval(h), self.c5.eval(h), self.c6.eval(h)]
    }

    pub fn derivatives_at(&self, h: f64) -> [f64; 5] {
        [
            self.c2.derivative(h),
            self.c3.derivative(h),
            self.c4.derivative(h),
            self.c5.derivative(h),
            self.c6.derivative(h),
        ]
    }

    fn from_model(m: &Model) -> Self {
        let p = &m.params;
        let dc = &m.consts;
        let (r1, r2, b1) = (dc.r1, dc.r2, dc.beta1);
        let rr = m.discount();
        let g = m.effective_gamma();
        let e3 = r2 * g + r1;
        let e6 = r1 * g + r2;
        let nu_hi = p.nu.powf(r2 * p.gamma1 + r1);
        let nu_lo = p.nu.powf(r1 * p.gamma1 + r2);
        let d = rr * (r1 - r2);

        let c6 = (1.0 - p.alpha).powf(r1 - r2) * (1.0 - b1) * e3 / (d * (b1 - r1) * e6) * (1.0 - nu_hi);
        let c4 = c6 + (b1 - 1.0) / (d * (b1 - r2));
        let c2 = c4 + (1.0 - b1) / (d * (b1 - r2)) * nu_lo;
        let c3 = (1.0 - b1) / (d * (b1 - r1)) * nu_hi;
        let c5 = c3 - (1.0 - b1) / (d * (b1 - r1));
        Self {
            c2: PowerLaw::new(c2, e6),
            c3: PowerLaw::new(c3, e3),
            c4: PowerLaw::new(c4, e6),
            c5: PowerLaw::new(c5, e3),
            c6: PowerLaw::new(c6, e6),
        }
    }
}

/// Free-boundary points in the dual variable at a fixed `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualBoundaries {
    /// Floor consumption above this. Infinite when `nu = 0`.
    pub y1: f64,
    /// Peak consumption below this.
    pub y2: f64,
    /// Ratchet boundary, `(1 - alpha) y2`.
    pub y3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum DualRegion {
    /// `y > y1`: consumption at the drawdown floor.
    R1,
    /// `y2 <= y <= y1`: interior consumption.
    R2,
    /// `y3 < y < y2`: consumption at the reference level.
    R3,
    /// `y = y3`, where the reference level ratchets up.
    RatchetBoundary,
}

/// The dual solution for one parameter set. Everything that depends on `h`
/// is a power law, so this is built once and evaluated anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    model: Model,
    coeffs: CoefficientSet,
    /// Coefficient of `y^beta2`.
    a2: f64,
    /// `h^{alpha beta1} y^{beta1}` is multiplied by this in region R2.
    a1: f64,
    /// `lambda K^{-1/(gamma2-1)} (1-gamma2)/gamma2`, the bequest part of `V~`.
    bequest_tilde: f64,
}

impl DualSolution {
    pub fn new(model: Model) -> Self {
        let coeffs = CoefficientSet::from_model(&model);
        Self::from_parts(model, coeffs)
    }

    /// Build from explicit coefficients. Mainly for checking that the
    /// verifier notices perturbed coefficients.
    pub fn from_parts(model: Model, coeffs: CoefficientSet) -> Self {
        let p = &model.params;
        let dc = &model.consts;
        let k2 = dc.kappa * dc.kappa;
        let (r1, r2, b1, b2) = (dc.r1, dc.r2, dc.beta1, dc.beta2);
        let a2 = 2.0 * p.lambda * p.bequest.powf(1.0 - b2) / (k2 * b2 * (b2 - r1) * (b2 - r2));
        let a1 = 2.0 / (k2 * b1 * (b1 - r1) * (b1 - r2));
        let bequest_tilde =
            p.lambda * p.bequest.powf(-1.0 / (p.gamma2 - 1.0)) * (1.0 - p.gamma2) / p.gamma2;
        Self {
            model,
            coeffs,
            a2,
            a1,
            bequest_tilde,
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn coefficients(&self) -> &CoefficientSet {
        &self.coeffs
    }

    /// Coefficient of the bequest particular solution `y^beta2`.
    pub fn bequest_coefficient(&self) -> f64 {
        self.a2
    }

    pub fn dual_boundaries(&self, h: f64) -> DualBoundaries {
        let p = &self.model.params;
        let y2 = h.powf(self.model.effective_gamma() - 1.0);
        DualBoundaries {
            y1: p.nu.powf(p.gamma1 - 1.0) * y2,
            y2,
            y3: (1.0 - p.alpha) * y2,
        }
    }

    /// Everything needed to evaluate `v(., h)` at one reference level.
    pub fn slice(&self, h: f64) -> Result<DualSlice<'_>> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::domain("dual slice", format!("h = {h} must be positive and finite")));
        }
        let p = &self.model.params;
        let rr = self.model.discount();
        let g = self.model.effective_gamma();
        let hg = h.powf(g);
        let ab1 = p.alpha * self.model.consts.beta1;
        Ok(DualSlice {
            sol: self,
            h,
            bounds: self.dual_boundaries(h),
            c: self.coeffs.at(h),
            dc: self.coeffs.derivatives_at(h),
            a1h: self.a1 * h.powf(ab1),
            a1h_dh: self.a1 * ab1 * h.powf(ab1 - 1.0),
            floor_const: p.nu.powf(p.gamma1) * hg / (rr * p.gamma1),
            peak_const: hg / (rr * p.gamma1),
        })
    }

    pub fn region(&self, y: f64, h: f64) -> Result<DualRegion> {
        self.slice(h)?.region(y)
    }

    pub fn v(&self, y: f64, h: f64) -> Result<f64> {
        self.slice(h)?.v(y)
    }

    pub fn v_y(&self, y: f64, h: f64) -> Result<f64> {
        self.slice(h)?.v_y(y)
    }

    pub fn v_yy(&self, y: f64, h: f64) -> Result<f64> {
        self.slice(h)?.v_yy(y)
    }

    pub fn v_h(&self, y: f64, h: f64) -> Result<f64> {
        self.slice(h)?.v_h(y)
    }

    pub fn v_tilde(&self, q: f64, h: f64) -> Result<f64> {
        self.slice(h)?.v_tilde(q)
    }
}

/// Value and first two `y`-derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub v: f64,
    pub v_y: f64,
    pub v_yy: f64,
}

impl Jet {
    #[inline]
    fn power(&mut self, coef: f64, e: f64, y: f64, ly: f64) {
        let t = coef * (e * ly).exp();
        self.v += t;
        self.v_y += t * e / y;
        self.v_yy += t * e * (e - 1.0) / (y * y);
    }
}

/// The dual solution frozen at one reference level `h`.
#[derive(Debug, Clone)]
pub struct DualSlice<'a> {
    sol: &'a DualSolution,
    pub h: f64,
    pub bounds: DualBoundaries,
    /// `[C2, .., C6]` at `h`.
    pub c: [f64; 5],
    /// Their `h`-derivatives.
    pub dc: [f64; 5],
    a1h: f64,
    a1h_dh: f64,
    floor_const: f64,
    peak_const: f64,
}

impl<'a> DualSlice<'a> {
    pub fn solution(&self) -> &'a DualSolution {
        self.sol
    }

    pub fn region(&self, y: f64) -> Result<DualRegion> {
        let DualBoundaries { y1, y2, y3 } = self.bounds;
        if !(y > 0.0) {
            return Err(Error::domain("dual region", format!("y = {y} must be positive")));
        }
        if (y - y3).abs() <= SEAM_TOL * y3 {
            return Ok(DualRegion::RatchetBoundary);
        }
        if y < y3 {
            return Err(Error::domain(
                "dual region",
                format!("y = {y} lies below the ratchet boundary y3 = {y3} (jump region)"),
            ));
        }
        if y > y1 * (1.0 + SEAM_TOL) {
            Ok(DualRegion::R1)
        } else if y >= y2 * (1.0 - SEAM_TOL) {
            Ok(DualRegion::R2)
        } else {
            Ok(DualRegion::R3)
        }
    }

    /// Evaluate the formula of `region` at `y`, whether or not `y` belongs to
    /// that region. Seam checks compare the two sides with this.
    pub fn jet_in(&self, region: DualRegion, y: f64) -> Jet {
        let dc = &self.sol.model.consts;
        let p = &self.sol.model.params;
        let rr = self.sol.model.discount();
        let ly = y.ln();
        let mut j = Jet::default();
        j.power(self.sol.a2, dc.beta2, y, ly);
        match region {
            DualRegion::R1 => {
                j.power(self.c[0], dc.r2, y, ly);
                let slope = p.nu * self.h / rr;
                j.v += self.floor_const - slope * y;
                j.v_y -= slope;
            }
            DualRegion::R2 => {
                j.power(self.c[1], dc.r1, y, ly);
                j.power(self.c[2], dc.r2, y, ly);
                j.power(self.a1h, dc.beta1, y, ly);
            }
            DualRegion::R3 | DualRegion::RatchetBoundary => {
                j.power(self.c[3], dc.r1, y, ly);
                j.power(self.c[4], dc.r2, y, ly);
                let slope = self.h / rr;
                j.v += self.peak_const - slope * y;
                j.v_y -= slope;
            }
        }
        j
    }

    pub fn jet(&self, y: f64) -> Result<Jet> {
        Ok(self.jet_in(self.region(y)?, y))
    }

    pub fn v(&self, y: f64) -> Result<f64> {
        Ok(self.jet(y)?.v)
    }

    pub fn v_y(&self, y: f64) -> Result<f64> {
        Ok(self.jet(y)?.v_y)
    }

    pub fn v_yy(&self, y: f64) -> Result<f64> {
        Ok(self.jet(y)?.v_yy)
    }

    /// `-v_y - nu h/(r+lambda)` in region R1, computed without cancelling
    /// against the floor.
    pub fn floor_excess(&self, y: f64) -> f64 {
        let dc = &self.sol.model.consts;
        let ly = y.ln();
        -self.c[0] * dc.r2 * ((dc.r2 - 1.0) * ly).exp()
            - self.sol.a2 * dc.beta2 * ((dc.beta2 - 1.0) * ly).exp()
    }

    /// `d/dh v(y, h)` with the formula of `region`.
    pub fn v_h_in(&self, region: DualRegion, y: f64) -> f64 {
        let dc = &self.sol.model.consts;
        let p = &self.sol.model.params;
        let rr = self.sol.model.discount();
        let gm1 = self.sol.model.effective_gamma() - 1.0;
        match region {
            DualRegion::R1 => {
                self.dc[0] * y.powf(dc.r2)
                    + (1.0 - p.alpha) * p.nu.powf(p.gamma1) * self.h.powf(gm1) / rr
                    - p.nu * y / rr
            }
            DualRegion::R2 => {
                self.dc[1] * y.powf(dc.r1) + self.dc[2] * y.powf(dc.r2) + self.a1h_dh * y.powf(dc.beta1)
            }
            DualRegion::R3 | DualRegion::RatchetBoundary => {
                self.dc[3] * y.powf(dc.r1) + self.dc[4] * y.powf(dc.r2) + (1.0 - p.alpha) * self.h.powf(gm1) / rr
                    - y / rr
            }
        }
    }

    pub fn v_h(&self, y: f64) -> Result<f64> {
        Ok(self.v_h_in(self.region(y)?, y))
    }

    /// The inhomogeneity `V~(q, h)` of the dual ODE
    /// `kappa^2/2 y^2 v_yy - (r+lambda) v = -V~(y, h)`.
    pub fn v_tilde(&self, q: f64) -> Result<f64> {
        if !(q > 0.0) {
            return Err(Error::domain("v_tilde", format!("q = {q} must be positive")));
        }
        let p = &self.sol.model.params;
        let dc = &self.sol.model.consts;
        let g = self.sol.model.effective_gamma();
        let DualBoundaries { y1, y2, .. } = self.bounds;
        let bequest = self.sol.bequest_tilde * q.powf(dc.beta2);
        let h = self.h;
        let rest = if q > y1 {
            p.nu.powf(p.gamma1) / p.gamma1 * h.powf(g) - p.nu * h * q
        } else if q >= y2 {
            (1.0 - p.gamma1) / p.gamma1 * h.powf(p.alpha * dc.beta1) * q.powf(dc.beta1)
        } else {
            h.powf(g) / p.gamma1 - h * q
        };
        Ok(bequest + rest)
    }
}
