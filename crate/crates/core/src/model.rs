//! Market, preference and mortality parameters, the constants derived from
//! them, and the two primitive utility functions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The `-r2/r1 != gamma1` clause of (A1) is checked to this absolute margin.
/// `gamma2` and `(1-alpha)gamma1` closer than this are treated as equal;
/// e.g. `(1 - 0.8) * 0.5` is not exactly `0.1` in floating point.
pub const GAMMA_MATCH_TOL: f64 = 1e-12;

pub const DISTINCT_ROOT_TOL: f64 = 1e-9;

/// Parameter names in the order they appear in a parameter file.
pub const PARAM_NAMES: [&str; 10] = [
    "r", "mu", "sigma", "rho", "lambda", "nu", "gamma1", "gamma2", "alpha", "K",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Risk-free rate.
    pub r: f64,
    /// Drift of the risky asset.
    pub mu: f64,
    /// Volatility of the risky asset.
    pub sigma: f64,
    /// Subjective discount rate. Must equal `r`.
    pub rho: f64,
    /// Force of mortality.
    pub lambda: f64,
    /// Drawdown fraction: consumption may not fall below `nu` times its peak.
    pub nu: f64,
    /// Risk-aversion exponent for consumption.
    pub gamma1: f64,
    /// Risk-aversion exponent for bequest.
    pub gamma2: f64,
    /// Shortfall-aversion weight on the reference level.
    pub alpha: f64,
    /// Bequest motive level.
    #[serde(rename = "K")]
    pub bequest: f64,
}

impl ModelParams {
    /// The parameter set used for the numerical illustrations.
    pub fn baseline() -> Self {
        Self {
            r: 0.05,
            mu: 0.1,
            sigma: 0.25,
            rho: 0.05,
            lambda: 0.03,
            nu: 0.2,
            gamma1: 0.5,
            gamma2: 0.1,
            alpha: 0.7,
            bequest: 5.0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ParamParse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        Some(match key {
            "r" => self.r,
            "mu" => self.mu,
            "sigma" => self.sigma,
            "rho" => self.rho,
            "lambda" => self.lambda,
            "nu" => self.nu,
            "gamma1" => self.gamma1,
            "gamma2" => self.gamma2,
            "alpha" => self.alpha,
            "K" => self.bequest,
            _ => return None,
        })
    }

    /// Overwrite one field by its parameter-file name.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = match key {
            "r" => &mut self.r,
            "mu" => &mut self.mu,
            "sigma" => &mut self.sigma,
            "rho" => &mut self.rho,
            "lambda" => &mut self.lambda,
            "nu" => &mut self.nu,
            "gamma1" => &mut self.gamma1,
            "gamma2" => &mut self.gamma2,
            "alpha" => &mut self.alpha,
            "K" => &mut self.bequest,
            other => return Err(Error::ParamParse(format!("unknown parameter `{other}`"))),
        };
        *slot = value;
        Ok(())
    }

    /// Same parameters with one field replaced.
    pub fn with(mut self, key: &str, value: f64) -> Result<Self> {
        self.set(key, value)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for name in PARAM_NAMES {
            let value = self.get(name).unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(invalid(name, value, "must be finite"));
            }
        }
        if self.r <= 0.0 {
            return Err(invalid("r", self.r, "must be positive"));
        }
        if self.mu <= self.r {
            return Err(invalid("mu", self.mu, "must exceed r"));
        }
        if self.sigma <= 0.0 {
            return Err(invalid("sigma", self.sigma, "must be positive"));
        }
        if self.rho != self.r {
            return Err(invalid("rho", self.rho, "must equal r"));
        }
        if self.lambda < 0.0 {
            return Err(invalid("lambda", self.lambda, "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.nu) {
            return Err(invalid("nu", self.nu, "must lie in [0, 1)"));
        }
        if !(self.gamma1 > 0.0 && self.gamma1 < 1.0) {
            return Err(invalid("gamma1", self.gamma1, "must lie in (0, 1)"));
        }
        if !(self.gamma2 > 0.0 && self.gamma2 < 1.0) {
            return Err(invalid("gamma2", self.gamma2, "must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(invalid("alpha", self.alpha, "must lie in [0, 1)"));
        }
        if self.bequest <= 0.0 {
            return Err(invalid("K", self.bequest, "must be positive"));
        }
        Ok(())
    }
}

fn invalid(name: &'static str, value: f64, requirement: &'static str) -> Error {
    Error::InvalidParameter {
        name,
        value,
        requirement,
    }
}

/// Constants that every closed form below is written in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    /// Sharpe ratio `(mu - r) / sigma`.
    pub kappa: f64,
    /// Larger root of `eta^2 - eta - 2(r + lambda)/kappa^2`, always above 1.
    pub r1: f64,
    /// Smaller root, always negative.
    pub r2: f64,
    /// `gamma1 / (gamma1 - 1)`.
    pub beta1: f64,
    /// `gamma2 / (gamma2 - 1)`.
    pub beta2: f64,
}

impl DerivedConstants {
    /// The quadratic whose roots are `r1` and `r2`, evaluated at `eta`.
    pub fn characteristic(&self, params: &ModelParams, eta: f64) -> f64 {
        eta * eta - eta - 2.0 * (params.r + params.lambda) / (self.kappa * self.kappa)
    }
}

pub fn derive_constants(params: &ModelParams) -> Result<DerivedConstants> {
    params.validate()?;
    let kappa = (params.mu - params.r) / params.sigma;
    let q = 2.0 * (params.r + params.lambda) / (kappa * kappa);
    let r1 = 0.5 * (1.0 + (1.0 + 4.0 * q).sqrt());
    // Vieta keeps the small root accurate.
    let r2 = -q / r1;
    Ok(DerivedConstants {
        kappa,
        r1,
        r2,
        beta1: params.gamma1 / (params.gamma1 - 1.0),
        beta2: params.gamma2 / (params.gamma2 - 1.0),
    })
}

/// Clause-by-clause outcome of assumption (A1):
/// `gamma2 <= (1 - alpha) gamma1 < -r2/r1 != gamma1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionA1 {
    pub gamma1: f64,
    pub gamma2: f64,
    /// `(1 - alpha) * gamma1`.
    pub effective_gamma: f64,
    /// `-r2 / r1`.
    pub root_ratio: f64,
    pub bequest_clause: bool,
    pub root_clause: bool,
    pub distinct_clause: bool,
}

impl AssumptionA1 {
    pub fn holds(&self) -> bool {
        self.bequest_clause && self.root_clause && self.distinct_clause
    }
}

impl fmt::Display for AssumptionA1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = |ok: bool| if ok { "ok" } else { "VIOLATED" };
        write!(
            f,
            "gamma2 <= (1-alpha)gamma1: {} <= {} [{}]; (1-alpha)gamma1 < -r2/r1: {} < {} [{}]; -r2/r1 != gamma1: |{} - {}| > {:e} [{}]",
            self.gamma2,
            self.effective_gamma,
            mark(self.bequest_clause),
            self.effective_gamma,
            self.root_ratio,
            mark(self.root_clause),
            self.root_ratio,
            self.gamma1,
            DISTINCT_ROOT_TOL,
            mark(self.distinct_clause),
        )
    }
}

pub fn check_assumption_a1(params: &ModelParams, dc: &DerivedConstants) -> AssumptionA1 {
    let effective_gamma = (1.0 - params.alpha) * params.gamma1;
    let root_ratio = -dc.r2 / dc.r1;
    AssumptionA1 {
        gamma1: params.gamma1,
        gamma2: params.gamma2,
        effective_gamma,
        root_ratio,
        bequest_clause: params.gamma2 <= effective_gamma + GAMMA_MATCH_TOL,
        root_clause: effective_gamma < root_ratio,
        distinct_clause: (root_ratio - params.gamma1).abs() > DISTINCT_ROOT_TOL,
    }
}

/// Validated parameters bundled with their derived constants. Construction
/// fails unless (A1) holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub consts: DerivedConstants,
}

impl Model {
    pub fn new(params: ModelParams) -> Result<Self> {
        let consts = derive_constants(&params)?;
        let a1 = check_assumption_a1(&params, &consts);
        if !a1.holds() {
            return Err(Error::AssumptionA1(a1));
        }
        Ok(Self { params, consts })
    }

    /// `r + lambda`, the effective discount rate of the problem.
    #[inline]
    pub fn discount(&self) -> f64 {
        self.params.r + self.params.lambda
    }

    /// `(1 - alpha) * gamma1`.
    #[inline]
    pub fn effective_gamma(&self) -> f64 {
        (1.0 - self.params.alpha) * self.params.gamma1
    }

    /// Shortfall-aversion utility of consuming at rate `c` with reference `h`.
    pub fn utility_u(&self, c: f64, h: f64) -> Result<f64> {
        let p = &self.params;
        if !(h > 0.0) {
            return Err(Error::domain("utility_u", format!("reference h = {h} must be positive")));
        }
        let floor = p.nu * h;
        if c < floor * (1.0 - 1e-12) {
            return Err(Error::domain(
                "utility_u",
                format!("consumption {c} below the drawdown floor {floor}"),
            ));
        }
        let g = p.gamma1;
        Ok(if c < h {
            (c / h.powf(p.alpha)).powf(g) / g
        } else {
            c.powf(self.effective_gamma()) / g
        })
    }

    /// CRRA bequest utility `K b^gamma2 / gamma2`.
    pub fn utility_v(&self, b: f64) -> Result<f64> {
        let p = &self.params;
        if b < 0.0 || b.is_nan() {
            return Err(Error::domain("utility_v", format!("bequest {b} must be non-negative")));
        }
        Ok(p.bequest * b.powf(p.gamma2) / p.gamma2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn baseline_constants() {
        let dc = derive_constants(&ModelParams::baseline()).unwrap();
        assert!(close(dc.kappa, 0.2, 1e-15));
        let s17 = 17f64.sqrt();
        assert!(close(dc.r1, (1.0 + s17) / 2.0, 1e-14));
        assert!(close(dc.r2, (1.0 - s17) / 2.0, 1e-14));
        assert!(close(dc.beta1, -1.0, 1e-15));
        assert!(close(dc.beta2, -1.0 / 9.0, 1e-15));
    }

    #[test]
    fn roots_solve_characteristic() {
        let p = ModelParams::baseline();
        let dc = derive_constants(&p).unwrap();
        assert!(dc.characteristic(&p, dc.r1).abs() < 1e-12 * dc.r1 * dc.r1);
        assert!(dc.characteristic(&p, dc.r2).abs() < 1e-12 * dc.r1 * dc.r1);
    }

    #[test]
    fn a1_baseline_holds() {
        let p = ModelParams::baseline();
        let a1 = check_assumption_a1(&p, &derive_constants(&p).unwrap());
        assert!(a1.holds(), "{a1}");
        assert!((a1.root_ratio - 0.609_611_796_797_792).abs() < 1e-12);
    }

    #[test]
    fn a1_bequest_clause_fails() {
        let p = ModelParams::baseline().with("gamma2", 0.2).unwrap();
        let a1 = check_assumption_a1(&p, &derive_constants(&p).unwrap());
        assert!(!a1.bequest_clause);
        assert!(a1.root_clause && a1.distinct_clause);
        assert!(a1.to_string().contains("VIOLATED"));
        assert!(matches!(Model::new(p), Err(Error::AssumptionA1(_))));
    }

    #[test]
    fn a1_without_shortfall_aversion() {
        // alpha = 0 reduces the middle clause to gamma1 < -r2/r1.
        let p = ModelParams::baseline().with("alpha", 0.0).unwrap();
        let dc = derive_constants(&p).unwrap();
        let a1 = check_assumption_a1(&p, &dc);
        assert_eq!(a1.root_clause, p.gamma1 < -dc.r2 / dc.r1);
        let p = p.with("gamma1", 0.7).unwrap();
        let a1 = check_assumption_a1(&p, &derive_constants(&p).unwrap());
        assert!(!a1.root_clause);
    }

    #[test]
    fn validation_names_the_field() {
        let err = ModelParams::baseline().with("mu", 0.05).unwrap().validate().unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { name: "mu", .. }));
        let err = ModelParams::baseline().with("rho", 0.04).unwrap().validate().unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { name: "rho", .. }));
        let err = ModelParams::baseline().with("nu", 1.0).unwrap().validate().unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { name: "nu", .. }));
        let err = ModelParams::baseline().with("K", 0.0).unwrap().validate().unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { name: "K", .. }));
    }

    #[test]
    fn json_rejects_unknown_and_missing_keys() {
        let good = ModelParams::baseline().to_json();
        assert_eq!(ModelParams::from_json(&good).unwrap(), ModelParams::baseline());
        let extra = good.replacen('{', "{\"beta\": 1.0,", 1);
        assert!(ModelParams::from_json(&extra).is_err());
        let missing = r#"{"r":0.05,"mu":0.1}"#;
        assert!(ModelParams::from_json(missing).is_err());
        assert!(good.contains("\"K\""));
    }

    #[test]
    fn utility_examples() {
        let m = Model::new(ModelParams::baseline()).unwrap();
        assert!(close(m.utility_u(1.0, 1.0).unwrap(), 2.0, 1e-15));
        assert!(close(m.utility_u(0.2, 1.0).unwrap(), 2.0 * 0.2f64.sqrt(), 1e-14));
        assert!(close(m.utility_u(2.0, 1.0).unwrap(), 2.0 * 2f64.powf(0.15), 1e-14));
        assert!(close(m.utility_u(2.0, 1.0).unwrap(), 2.219_139, 1e-6));
        assert_eq!(m.utility_v(0.0).unwrap(), 0.0);
        assert!(close(m.utility_v(1.0).unwrap(), 50.0, 1e-14));
        assert!(close(m.utility_v(32.0).unwrap(), 70.710_678, 1e-7));
    }

    #[test]
    fn utility_domain_errors() {
        let m = Model::new(ModelParams::baseline()).unwrap();
        assert!(m.utility_u(0.1, 1.0).is_err());
        assert!(m.utility_u(1.0, 0.0).is_err());
        assert!(m.utility_v(-1e-3).is_err());
    }

    #[test]
    fn utility_kink_at_reference() {
        let m = Model::new(ModelParams::baseline()).unwrap();
        for h in [0.1, 1.0, 7.0] {
            let d = 1e-6 * h;
            let left = (m.utility_u(h, h).unwrap() - m.utility_u(h - d, h).unwrap()) / d;
            let right = (m.utility_u(h + d, h).unwrap() - m.utility_u(h, h).unwrap()) / d;
            assert!(left >= right, "h={h}: left {left} right {right}");
            let lo = m.utility_u(h * (1.0 - 1e-12), h).unwrap();
            assert!((lo - m.utility_u(h, h).unwrap()).abs() < 1e-10);
        }
    }
}
