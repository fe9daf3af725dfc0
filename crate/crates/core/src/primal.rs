//! Wealth-space boundary curves, inversion of the dual map, the post-jump
//! reference level, and the primal value function.

use serde::Serialize;

use crate::dual::{DualRegion, DualSlice, DualSolution, PowerLaw, SEAM_TOL};
use crate::error::{Error, Result};
use crate::model::{Model, ModelParams};
use crate::roots;

/// The four wealth thresholds at one reference level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundarySet {
    pub x_bound: f64,
    pub x_low: f64,
    pub x_aggr: f64,
    pub x_lavs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PrimalRegion {
    /// `x = x_bound`: wealth exactly finances floor consumption forever.
    Floor,
    /// `x_bound < x < x_low`: consumption held at the floor `nu h`.
    Constrained,
    /// `x_low <= x <= x_aggr`: consumption strictly between floor and peak.
    Interior,
    /// `x_aggr < x < x_lavs`: consumption at the peak `h`.
    Peak,
    /// `x = x_lavs`: the reference level ratchets up.
    Ratchet,
    /// `x > x_lavs`: the reference level jumps before anything else happens.
    Jump,
}

impl PrimalRegion {
    pub fn label(&self) -> &'static str {
        match self {
            PrimalRegion::Floor => "Floor",
            PrimalRegion::Constrained => "I",
            PrimalRegion::Interior => "II",
            PrimalRegion::Peak => "III-i",
            PrimalRegion::Ratchet => "D2",
            PrimalRegion::Jump => "D3",
        }
    }
}

impl std::fmt::Display for PrimalRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Solved model: the dual solution plus the wealth-space machinery built on
/// top of it. Cheap to share between threads.
#[derive(Debug, Clone)]
pub struct Solver {
    dual: DualSolution,
    lavs: [PowerLaw; 4],
}

/// Range of reference levels over which `x_lavs` is checked to be increasing
/// when a solver is built.
pub const WORKING_RANGE: (f64, f64) = (1e-8, 1e8);

impl Solver {
    pub fn new(params: ModelParams) -> Result<Self> {
        let dual = DualSolution::new(Model::new(params)?);
        let lavs = lavs_terms(&dual);
        let solver = Self { dual, lavs };
        solver.check_lavs_monotone()?;
        Ok(solver)
    }

    /// Build around an existing dual solution, e.g. one with perturbed
    /// coefficients.
    pub fn from_dual(dual: DualSolution) -> Result<Self> {
        let lavs = lavs_terms(&dual);
        let solver = Self { dual, lavs };
        solver.check_lavs_monotone()?;
        Ok(solver)
    }

    pub fn dual(&self) -> &DualSolution {
        &self.dual
    }

    pub fn model(&self) -> &Model {
        self.dual.model()
    }

    pub fn params(&self) -> &ModelParams {
        &self.dual.model().params
    }

    fn check_lavs_monotone(&self) -> Result<()> {
        let (lo, hi) = WORKING_RANGE;
        let n = 400;
        for k in 0..=n {
            let h = lo * (hi / lo).powf(k as f64 / n as f64);
            let slope: f64 = self.lavs.iter().map(|t| t.derivative(h)).sum();
            if !(slope > 0.0) {
                return Err(Error::Numerical(format!(
                    "x_lavs is not increasing at h = {h:e} (slope {slope:e}); the post-jump reference is not unique"
                )));
            }
        }
        Ok(())
    }

    pub fn x_bound(&self, h: f64) -> f64 {
        self.params().nu * h / self.model().discount()
    }

    /// `x_lavs(h)` as a sum of power laws in `h`: two terms of order `h`, the
    /// bequest term, and `h/(r+lambda)`.
    pub fn lavs_terms(&self) -> &[PowerLaw; 4] {
        &self.lavs
    }

    pub fn x_lavs(&self, h: f64) -> f64 {
        self.lavs.iter().map(|t| t.eval(h)).sum()
    }

    /// `lim_{h -> inf} x_lavs(h)/h` from its closed-form expression.
    pub fn x_lavs_limit(&self) -> f64 {
        let p = self.params();
        let dc = &self.model().consts;
        let (r1, r2, b1, b2) = (dc.r1, dc.r2, dc.beta1, dc.beta2);
        let rr = self.model().discount();
        let g = self.model().effective_gamma();
        let k2 = dc.kappa * dc.kappa;
        let nu_hi = p.nu.powf(r2 * p.gamma1 + r1);
        let a = (1.0 - p.alpha).powf(-r2);
        let d = rr * (r1 - r2) * (b1 - r1);
        let mut lim = -r1 * a * (nu_hi - 1.0) * (1.0 - b1) / d
            - r2 * a * (1.0 - nu_hi) * (1.0 - b1) * (r2 * g + r1) / (d * (r1 * g + r2))
            + 1.0 / rr;
        if (p.gamma2 - g).abs() <= crate::model::GAMMA_MATCH_TOL {
            lim -= 2.0 * p.lambda * (1.0 - p.alpha).powf(b2 - 1.0) * p.bequest.powf(1.0 - b2)
                / (k2 * (b2 - r1) * (b2 - r2));
        }
        lim
    }

    /// Boundary curves at `h`, with their ordering checked.
    pub fn boundary_curves(&self, h: f64) -> Result<BoundarySet> {
        Ok(*self.slice(h)?.bounds())
    }

    /// Dual slice and boundary curves at `h`, the unit most queries run on.
    pub fn slice(&self, h: f64) -> Result<PolicySlice<'_>> {
        let dual = self.dual.slice(h)?;
        let p = self.params();
        let x_bound = self.x_bound(h);
        let yb = dual.bounds;
        let x_low = if p.nu > 0.0 {
            -dual.jet_in(DualRegion::R2, yb.y1).v_y
        } else {
            x_bound
        };
        let x_aggr = -dual.jet_in(DualRegion::R2, yb.y2).v_y;
        let x_lavs = -dual.jet_in(DualRegion::R3, yb.y3).v_y;
        let bounds = BoundarySet {
            x_bound,
            x_low,
            x_aggr,
            x_lavs,
        };
        let strict_low = p.nu > 0.0;
        let strict_high = p.alpha > 0.0;
        let ordered = |a: f64, b: f64, strict: bool| if strict { a < b } else { a <= b * (1.0 + SEAM_TOL) };
        if !(ordered(x_bound, x_low, strict_low)
            && x_low < x_aggr
            && ordered(x_aggr, x_lavs, strict_high)
            && x_bound.is_finite()
            && x_lavs.is_finite())
        {
            return Err(Error::Numerical(format!(
                "boundary curves out of order at h = {h}: {x_bound} / {x_low} / {x_aggr} / {x_lavs}"
            )));
        }
        Ok(PolicySlice { dual, bounds })
    }

    /// Primal region of `(x, h)`.
    pub fn region(&self, x: f64, h: f64) -> Result<PrimalRegion> {
        self.slice(h)?.classify(x)
    }

    /// The dual point `f(x, h)` of the region `region`. The floor maps to
    /// `y = +inf`.
    pub fn invert_dual(&self, x: f64, h: f64, region: PrimalRegion) -> Result<f64> {
        self.slice(h)?.invert(x, region, None)
    }

    /// Region and dual point at `(x, h)`.
    pub fn dual_point(&self, x: f64, h: f64) -> Result<(PrimalRegion, f64)> {
        let s = self.slice(h)?;
        let region = s.classify(x)?;
        Ok((region, s.invert(x, region, None)?))
    }

    /// The reference level `h~(x)` solving `x_lavs(h~) = x`.
    pub fn h_tilde(&self, x: f64) -> Result<f64> {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::domain("h_tilde", format!("x = {x} must be positive and finite")));
        }
        let f = |h: f64| self.x_lavs(h) - x;
        let (mut lo, mut hi) = (x * 1e-6, x * 1e6);
        for _ in 0..20 {
            if f(lo) <= 0.0 {
                break;
            }
            lo *= 1e-3;
        }
        for _ in 0..20 {
            if f(hi) >= 0.0 {
                break;
            }
            hi *= 1e3;
        }
        let h = roots::bisect_log("h_tilde", f, lo, hi, 0.0)?;
        // Land on the side where the state is not in the jump region.
        Ok(if self.x_lavs(h) < x { h * (1.0 + roots::REL_TOL) } else { h })
    }

    /// Same as [`Solver::h_tilde`] but warm-started at `guess`, which must not
    /// exceed the answer (the reference level only moves up).
    pub fn h_tilde_from(&self, x: f64, guess: f64) -> Result<f64> {
        if !(guess > 0.0) || self.x_lavs(guess) >= x {
            return self.h_tilde(x);
        }
        let mut hi = guess * 1.01;
        while self.x_lavs(hi) < x {
            hi *= 2.0;
            if !hi.is_finite() {
                return self.h_tilde(x);
            }
        }
        let fdf = |h: f64| {
            let (mut f, mut df) = (-x, 0.0);
            for t in &self.lavs {
                let v = t.eval(h);
                f += v;
                df += t.exponent * v;
            }
            (f, df)
        };
        let h = roots::newton_log("h_tilde", fdf, guess, hi, guess, false)?;
        Ok(if self.x_lavs(h) < x { h * (1.0 + roots::REL_TOL) } else { h })
    }

    /// Primal value `u(x, h)` for `x_bound(h) <= x <= x_lavs(h)`.
    pub fn value_u(&self, x: f64, h: f64) -> Result<f64> {
        self.slice(h)?.value_u(x)
    }

    /// `u_h(x, h)`, equal to `v_h(f(x, h), h)`.
    pub fn u_h(&self, x: f64, h: f64) -> Result<f64> {
        self.slice(h)?.u_h(x)
    }
}

fn lavs_terms(dual: &DualSolution) -> [PowerLaw; 4] {
    let m = dual.model();
    let p = &m.params;
    let dc = &m.consts;
    let c = dual.coefficients();
    let gm1 = m.effective_gamma() - 1.0;
    let one_a = 1.0 - p.alpha;
    // -v_y at y3 = (1-alpha) h^{g-1}, term by term.
    let term = |scale: f64, coef: PowerLaw, e: f64| {
        PowerLaw::new(-scale * coef.scale * e * one_a.powf(e - 1.0), coef.exponent + gm1 * (e - 1.0))
    };
    [
        term(1.0, c.c5, dc.r1),
        term(1.0, c.c6, dc.r2),
        term(1.0, PowerLaw::new(dual.bequest_coefficient(), 0.0), dc.beta2),
        PowerLaw::new(1.0 / m.discount(), 1.0),
    ]
}

/// The dual solution and the boundary curves frozen at one `h`.
#[derive(Debug, Clone)]
pub struct PolicySlice<'a> {
    dual: DualSlice<'a>,
    bounds: BoundarySet,
}

impl<'a> PolicySlice<'a> {
    pub fn h(&self) -> f64 {
        self.dual.h
    }

    pub fn dual(&self) -> &DualSlice<'a> {
        &self.dual
    }

    pub fn bounds(&self) -> &BoundarySet {
        &self.bounds
    }

    pub fn classify(&self, x: f64) -> Result<PrimalRegion> {
        let b = &self.bounds;
        if x.is_nan() {
            return Err(Error::Numerical("wealth is NaN".into()));
        }
        let floor_tol = SEAM_TOL * b.x_bound.max(f64::MIN_POSITIVE);
        if x < b.x_bound - floor_tol {
            return Err(Error::Inadmissible {
                x,
                h: self.h(),
                floor: b.x_bound,
            });
        }
        if x <= b.x_bound + floor_tol {
            return Ok(PrimalRegion::Floor);
        }
        if (x - b.x_lavs).abs() <= SEAM_TOL * b.x_lavs {
            return Ok(PrimalRegion::Ratchet);
        }
        if x > b.x_lavs {
            return Ok(PrimalRegion::Jump);
        }
        if x < b.x_low * (1.0 - SEAM_TOL) {
            Ok(PrimalRegion::Constrained)
        } else if x <= b.x_aggr * (1.0 + SEAM_TOL) {
            Ok(PrimalRegion::Interior)
        } else {
            Ok(PrimalRegion::Peak)
        }
    }

    /// Solve `-v_y(y, h) = x` inside the dual bracket of `region`. With a
    /// `guess`, a safeguarded Newton iteration replaces plain bisection.
    pub fn invert(&self, x: f64, region: PrimalRegion, guess: Option<f64>) -> Result<f64> {
        let yb = self.dual.bounds;
        let slack = 4.0 * SEAM_TOL * x.abs().max(1.0);
        let d = &self.dual;
        match region {
            PrimalRegion::Floor => Ok(f64::INFINITY),
            PrimalRegion::Ratchet => Ok(yb.y3),
            PrimalRegion::Jump => Err(Error::domain(
                "invert_dual",
                format!("x = {x} lies above x_lavs = {}; apply the jump first", self.bounds.x_lavs),
            )),
            PrimalRegion::Constrained => {
                let target = x - self.bounds.x_bound;
                let f = |y: f64| d.floor_excess(y) - target;
                match guess {
                    None => {
                        let hi = roots::grow_upper("invert_dual f1", f, yb.y1 * 2.0, 4.0, true)?;
                        roots::bisect_log("invert_dual f1", f, yb.y1, hi, slack)
                    }
                    Some(g) => {
                        let start = if g > yb.y1 { g * 1.5 } else { yb.y1 * 2.0 };
                        let hi = roots::grow_upper("invert_dual f1", f, start, 4.0, true)?;
                        let fdf = |y: f64| (f(y), -d.jet_in(DualRegion::R1, y).v_yy * y);
                        let y = roots::newton_log("invert_dual f1", fdf, yb.y1, hi, g, true)?;
                        self.polish(x, region, y, f(y), slack)
                    }
                }
            }
            PrimalRegion::Interior => {
                // Without a drawdown floor the interior region extends to y = inf.
                let hi = if yb.y1.is_finite() {
                    yb.y1
                } else {
                    let start = guess.map_or(yb.y2, |g| g.max(yb.y2)) * 2.0;
                    roots::grow_upper("invert_dual f2", |y| -d.jet_in(DualRegion::R2, y).v_y - x, start, 4.0, true)?
                };
                self.invert_between(x, DualRegion::R2, yb.y2, hi, guess, slack, "invert_dual f2")
            }
            PrimalRegion::Peak => self.invert_between(x, DualRegion::R3, yb.y3, yb.y2, guess, slack, "invert_dual f3"),
        }
    }

    /// Accept a Newton result if its residual is small, else redo the
    /// inversion by bisection, which reports bracket failures.
    fn polish(&self, x: f64, region: PrimalRegion, y: f64, residual: f64, slack: f64) -> Result<f64> {
        if residual.abs() <= 1e3 * slack {
            Ok(y)
        } else {
            self.invert(x, region, None)
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn invert_between(
        &self,
        x: f64,
        region: DualRegion,
        lo: f64,
        hi: f64,
        guess: Option<f64>,
        slack: f64,
        op: &'static str,
    ) -> Result<f64> {
        let d = &self.dual;
        match guess {
            None => roots::bisect_log(op, |y| -d.jet_in(region, y).v_y - x, lo, hi, slack),
            Some(g) => {
                let fdf = |y: f64| {
                    let j = d.jet_in(region, y);
                    (-j.v_y - x, -j.v_yy * y)
                };
                let y = roots::newton_log(op, fdf, lo, hi, g, true)?;
                let primal = if region == DualRegion::R2 { PrimalRegion::Interior } else { PrimalRegion::Peak };
                self.polish(x, primal, y, fdf(y).0, slack)
            }
        }
    }

    pub fn dual_point(&self, x: f64) -> Result<(PrimalRegion, f64)> {
        let region = self.classify(x)?;
        Ok((region, self.invert(x, region, None)?))
    }

    pub fn value_u(&self, x: f64) -> Result<f64> {
        let (region, y) = self.dual_point(x)?;
        if region == PrimalRegion::Jump {
            unreachable!("invert rejects the jump region");
        }
        if region == PrimalRegion::Floor {
            let p = &self.dual.solution().model().params;
            let m = self.dual.solution().model();
            return Ok(p.nu.powf(p.gamma1) * self.h().powf(m.effective_gamma()) / (m.discount() * p.gamma1));
        }
        Ok(self.dual.v(y)? + x * y)
    }

    /// `u_h`, which is `-inf` on the floor.
    pub fn u_h(&self, x: f64) -> Result<f64> {
        let (region, y) = self.dual_point(x)?;
        if region == PrimalRegion::Floor {
            return Ok(f64::NEG_INFINITY);
        }
        self.dual.v_h(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solver() -> Solver {
        Solver::new(ModelParams::baseline()).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1.0)
    }

    #[test]
    fn baseline_boundaries() {
        let b = solver().boundary_curves(1.0).unwrap();
        assert!(rel(b.x_bound, 2.5) < 1e-15);
        assert!(b.x_bound < b.x_low && b.x_low < b.x_aggr && b.x_aggr < b.x_lavs);
        assert!(rel(b.x_low, 4.6766) < 1e-4, "{b:?}");
        assert!(rel(b.x_aggr, 10.7355) < 1e-4, "{b:?}");
        assert!(rel(b.x_lavs, 21.4444) < 1e-4, "{b:?}");
    }

    #[test]
    fn lavs_power_laws_agree_with_dual() {
        let s = solver();
        for t in &s.lavs_terms()[..2] {
            assert!((t.exponent - 1.0).abs() < 1e-12);
        }
        for h in [0.01, 1.0, 300.0] {
            assert!(rel(s.x_lavs(h), s.boundary_curves(h).unwrap().x_lavs) < 1e-12);
        }
    }

    #[test]
    fn regions_and_seams() {
        let s = solver();
        let b = s.boundary_curves(1.0).unwrap();
        assert_eq!(s.region(2.5, 1.0).unwrap(), PrimalRegion::Floor);
        assert_eq!(s.region(3.0, 1.0).unwrap(), PrimalRegion::Constrained);
        assert_eq!(s.region(b.x_low, 1.0).unwrap(), PrimalRegion::Interior);
        assert_eq!(s.region(b.x_aggr, 1.0).unwrap(), PrimalRegion::Interior);
        assert_eq!(s.region(15.0, 1.0).unwrap(), PrimalRegion::Peak);
        assert_eq!(s.region(b.x_lavs, 1.0).unwrap(), PrimalRegion::Ratchet);
        assert_eq!(s.region(30.0, 1.0).unwrap(), PrimalRegion::Jump);
        assert!(s.region(2.4, 1.0).unwrap_err().is_inadmissible());
    }

    #[test]
    fn inverse_at_seams() {
        let s = solver();
        for h in [0.2, 1.0, 5.0] {
            let sl = s.slice(h).unwrap();
            let b = *sl.bounds();
            let yb = sl.dual().bounds;
            let y_low = sl.invert(b.x_low, PrimalRegion::Interior, None).unwrap();
            assert!(rel(y_low, yb.y1) < 1e-10);
            let y_aggr = sl.invert(b.x_aggr, PrimalRegion::Interior, None).unwrap();
            assert!(rel(y_aggr, yb.y2) < 1e-10);
            let y_lavs = sl.invert(b.x_lavs, PrimalRegion::Peak, None).unwrap();
            assert!(rel(y_lavs, yb.y3) < 1e-10);
        }
    }

    #[test]
    fn near_floor_dual_point_is_large() {
        let s = solver();
        let y = s.invert_dual(2.5 + 1e-9, 1.0, PrimalRegion::Constrained).unwrap();
        assert!(y > 1e6, "{y}");
    }

    #[test]
    fn newton_and_bisection_agree() {
        let s = solver();
        let sl = s.slice(1.0).unwrap();
        for x in [2.6, 3.5, 7.0, 12.0, 20.0] {
            let r = sl.classify(x).unwrap();
            let a = sl.invert(x, r, None).unwrap();
            let b = sl.invert(x, r, Some(a * 1.3)).unwrap();
            let c = sl.invert(x, r, Some(a * 0.9)).unwrap();
            assert!(rel(a, b) < 1e-10 && rel(a, c) < 1e-10, "x={x}: {a} {b} {c}");
        }
    }

    #[test]
    fn h_tilde_round_trip() {
        let s = solver();
        for h in [0.1, 1.0, 10.0] {
            let x = s.x_lavs(h);
            let ht = s.h_tilde(x).unwrap();
            assert!(rel(ht, h) < 1e-10, "{h} {ht}");
            assert!(s.x_lavs(ht) >= x);
            let warm = s.h_tilde_from(x, h * 0.5).unwrap();
            assert!(rel(warm, h) < 1e-10);
        }
    }

    #[test]
    fn value_at_floor() {
        let s = solver();
        let u = s.value_u(2.5, 1.0).unwrap();
        assert!(rel(u, 0.2f64.sqrt() / 0.04) < 1e-14);
        assert!(rel(u, 11.180_340) < 1e-7);
        // u - u(x_bound) vanishes like a small power of the distance.
        let mut prev = f64::INFINITY;
        for e in [1e-3, 1e-5, 1e-7, 1e-9] {
            let near = s.value_u(2.5 + e, 1.0).unwrap();
            assert!(near > u && near < prev);
            prev = near;
        }
    }

    #[test]
    fn linear_boundaries_without_mortality_or_floor() {
        let p = ModelParams::baseline().with("lambda", 0.0).unwrap().with("nu", 0.0).unwrap();
        let s = Solver::new(p).unwrap();
        let b1 = s.boundary_curves(1.0).unwrap();
        for h in [0.5, 2.0, 4.0] {
            let b = s.boundary_curves(h).unwrap();
            assert!(rel(b.x_aggr / h, b1.x_aggr) < 1e-8);
            assert!(rel(b.x_lavs / h, b1.x_lavs) < 1e-8);
            assert_eq!(b.x_low, 0.0);
        }
        let y = s.invert_dual(1e-3, 1.0, PrimalRegion::Interior).unwrap();
        assert!((-s.dual().v_y(y, 1.0).unwrap() - 1e-3).abs() < 1e-12);
    }
}
