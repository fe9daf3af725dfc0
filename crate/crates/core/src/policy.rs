//! Feedback controls at a wealth/reference state, the initial jump of the
//! reference level, and the wealth at which the insurance premium turns
//! positive.

use serde::Serialize;

use crate::dual::DualRegion;
use crate::error::{Error, Result};
use crate::primal::{PolicySlice, PrimalRegion, Solver};
use crate::roots;

/// Optimal controls at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyDecision {
    /// Reference level the controls were computed at (after any jump).
    pub h: f64,
    /// Consumption rate.
    pub c: f64,
    /// Dollar amount in the risky asset.
    pub pi: f64,
    /// Bequest at death.
    pub b: f64,
    /// Insurance premium rate `lambda (b - x)`; negative means selling cover.
    pub p: f64,
    pub region: PrimalRegion,
    /// Dual point `f(x, h)`; infinite on the floor.
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpResult {
    pub h_new: f64,
    pub jumped: bool,
}

impl Solver {
    /// Move the reference level up to `h~(x)` when `(x, h)` lies beyond the
    /// ratchet boundary. `h = 0` always jumps.
    pub fn apply_initial_jump(&self, x: f64, h: f64) -> Result<JumpResult> {
        if h == 0.0 {
            if !(x > 0.0) {
                return Err(Error::Inadmissible { x, h, floor: 0.0 });
            }
            return Ok(JumpResult {
                h_new: self.h_tilde(x)?,
                jumped: true,
            });
        }
        if !(h > 0.0) {
            return Err(Error::domain("apply_initial_jump", format!("h = {h} must be non-negative")));
        }
        match self.region(x, h)? {
            PrimalRegion::Jump => {
                let h_new = self.h_tilde(x)?.max(h);
                Ok(JumpResult { h_new, jumped: true })
            }
            _ => Ok(JumpResult { h_new: h, jumped: false }),
        }
    }

    /// Controls at a state with `x_bound(h) <= x <= x_lavs(h)`.
    ///
    /// The risky position is evaluated both from its explicit formula and as
    /// `(mu - r)/sigma^2 y v_yy`, and the two must agree.
    pub fn optimal_controls(&self, x: f64, h: f64) -> Result<PolicyDecision> {
        let s = self.slice(h)?;
        let d = s.controls(x, None)?;
        if d.y.is_finite() {
            let explicit = pi_explicit(&s, d.region, d.y);
            if (explicit - d.pi).abs() > 1e-9 * d.pi.abs().max(1.0) {
                return Err(Error::Numerical(format!(
                    "risky position mismatch at (x, h) = ({x}, {h}): {explicit} vs {}",
                    d.pi
                )));
            }
        }
        Ok(d)
    }

    /// Jump if needed, then evaluate the controls.
    pub fn policy(&self, x: f64, h: f64) -> Result<(JumpResult, PolicyDecision)> {
        let j = self.apply_initial_jump(x, h)?;
        Ok((j, self.optimal_controls(x, j.h_new)?))
    }

    /// Wealth above which the optimal premium is positive at reference `h`.
    pub fn premium_sign_threshold(&self, h: f64) -> Result<PremiumThreshold> {
        let m = self.model();
        let p = &m.params;
        let dc = &m.consts;
        let (r1, r2, b2) = (dc.r1, dc.r2, dc.beta2);
        let k2 = dc.kappa * dc.kappa;
        let coefficient = k2 * (b2 * b2 - b2) - 2.0 * p.r;
        if coefficient >= 0.0 {
            return Ok(PremiumThreshold {
                coefficient,
                x_star: None,
                diagnostic: "premium is negative at every admissible wealth".into(),
            });
        }
        let s = self.slice(h)?;
        let [_, _, _, c5, c6] = s.dual().c;
        let lead = coefficient / (k2 * (b2 - r1) * (b2 - r2) * p.bequest.powf(b2 - 1.0));
        let rr = m.discount();
        let g = |y: f64| {
            lead * y.powf(b2 - 1.0) + r1 * c5 * y.powf(r1 - 1.0) + r2 * c6 * y.powf(r2 - 1.0) - h / rr
        };
        let yb = s.dual().bounds;
        let y = match roots::bisect_log("premium_sign_threshold", g, yb.y3, yb.y2, 0.0) {
            Ok(y) => y,
            Err(Error::Bracket { detail, .. }) => {
                return Ok(PremiumThreshold {
                    coefficient,
                    x_star: None,
                    diagnostic: format!("no sign change of the premium in region III at h = {h}: {detail}"),
                })
            }
            Err(e) => return Err(e),
        };
        let x_star = -s.dual().jet_in(DualRegion::R3, y).v_y;
        let check = s.controls(x_star, None)?;
        if check.p.abs() > 1e-8 * x_star.max(1.0) {
            return Err(Error::Numerical(format!(
                "premium at the threshold x* = {x_star} is {} rather than 0",
                check.p
            )));
        }
        Ok(PremiumThreshold {
            coefficient,
            x_star: Some(x_star),
            diagnostic: format!("premium positive for x > {x_star} at h = {h}"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PremiumThreshold {
    /// `kappa^2 (beta2^2 - beta2) - 2r`; a threshold can exist only when this
    /// is negative.
    pub coefficient: f64,
    pub x_star: Option<f64>,
    pub diagnostic: String,
}

impl<'a> PolicySlice<'a> {
    /// Controls at `x` for this slice's `h`. `guess` warm-starts the dual
    /// inversion.
    pub fn controls(&self, x: f64, guess: Option<f64>) -> Result<PolicyDecision> {
        let region = self.classify(x)?;
        if region == PrimalRegion::Jump {
            return Err(Error::domain(
                "optimal_controls",
                format!("x = {x} exceeds x_lavs = {}; apply the jump first", self.bounds().x_lavs),
            ));
        }
        let y = self.invert(x, region, guess)?;
        Ok(self.controls_at(x, region, y))
    }

    /// Controls given an already located dual point.
    pub fn controls_at(&self, x: f64, region: PrimalRegion, y: f64) -> PolicyDecision {
        let m = self.dual().solution().model();
        let p = &m.params;
        let h = self.h();
        if region == PrimalRegion::Floor {
            return PolicyDecision {
                h,
                c: p.nu * h,
                pi: 0.0,
                b: 0.0,
                p: -p.lambda * x,
                region,
                y,
            };
        }
        let dr = dual_region(region);
        let jet = self.dual().jet_in(dr, y);
        let c = match region {
            PrimalRegion::Constrained => p.nu * h,
            PrimalRegion::Interior => {
                let v = h.powf(p.alpha * m.consts.beta1) * y.powf(1.0 / (p.gamma1 - 1.0));
                v.clamp(p.nu * h, h)
            }
            _ => h,
        };
        let pi = (p.mu - p.r) / (p.sigma * p.sigma) * y * jet.v_yy;
        let b = (y / p.bequest).powf(1.0 / (p.gamma2 - 1.0));
        PolicyDecision {
            h,
            c,
            pi,
            b,
            p: p.lambda * (b - x),
            region,
            y,
        }
    }
}

fn dual_region(region: PrimalRegion) -> DualRegion {
    match region {
        PrimalRegion::Constrained => DualRegion::R1,
        PrimalRegion::Interior => DualRegion::R2,
        _ => DualRegion::R3,
    }
}

/// The risky position written out term by term.
fn pi_explicit(s: &PolicySlice<'_>, region: PrimalRegion, y: f64) -> f64 {
    let m = s.dual().solution().model();
    let p = &m.params;
    let dc = &m.consts;
    let (r1, r2, b1, b2) = (dc.r1, dc.r2, dc.beta1, dc.beta2);
    let k2 = dc.kappa * dc.kappa;
    let a = 2.0 * m.discount() / k2;
    let [c2, c3, c4, c5, c6] = s.dual().c;
    let bequest = 2.0 * p.lambda * p.bequest.powf(1.0 - b2) * (b2 - 1.0) / (k2 * (b2 - r1) * (b2 - r2)) * y.powf(b2 - 1.0);
    let rest = match region {
        PrimalRegion::Constrained => a * c2 * y.powf(r2 - 1.0),
        PrimalRegion::Interior => {
            a * c3 * y.powf(r1 - 1.0)
                + a * c4 * y.powf(r2 - 1.0)
                + 2.0 * (b1 - 1.0) * s.h().powf(p.alpha * b1) / (k2 * (b1 - r1) * (b1 - r2)) * y.powf(b1 - 1.0)
        }
        _ => a * c5 * y.powf(r1 - 1.0) + a * c6 * y.powf(r2 - 1.0),
    };
    (p.mu - p.r) / (p.sigma * p.sigma) * (rest + bequest)
}
