//! Numerical checks of the closed-form solution against its defining
//! equations, boundary conditions, and asymptotic and comparative-statics
//! claims.

use serde::Serialize;

use crate::dual::{DualRegion, DualSolution};
use crate::error::Result;
use crate::model::{Model, ModelParams};
use crate::primal::Solver;

/// Location of the largest residual of a check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Point {
    /// Name of the first coordinate, `"x"` or `"y"`.
    pub var: &'static str,
    pub value: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub worst_point: Option<Point>,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl CheckReport {
    fn new(name: &str, max_residual: f64, tolerance: f64, worst_point: Option<Point>, detail: String) -> Self {
        Self {
            name: name.to_string(),
            max_residual,
            tolerance,
            pass: max_residual <= tolerance,
            worst_point,
            detail,
        }
    }

    /// Force a failure for a reason the residual does not capture, keeping
    /// `pass` equivalent to `max_residual <= tolerance`.
    fn fail(mut self, why: &str) -> Self {
        self.max_residual = f64::INFINITY;
        self.pass = false;
        self.detail = format!("{why}; {}", self.detail);
        self
    }
}

/// Running maximum of a residual together with where it occurred.
struct Worst {
    residual: f64,
    point: Option<Point>,
}

impl Worst {
    fn new() -> Self {
        Self {
            residual: 0.0,
            point: None,
        }
    }

    fn update(&mut self, residual: f64, var: &'static str, value: f64, h: f64) {
        if self.residual.is_nan() {
            return;
        }
        // NaN counts as the worst possible outcome.
        if residual.is_nan() || residual > self.residual || self.point.is_none() {
            self.residual = if residual.is_nan() { f64::NAN } else { residual.max(self.residual) };
            self.point = Some(Point { var, value, h });
        }
    }

    fn report(self, name: &str, tolerance: f64, detail: String) -> CheckReport {
        let residual = if self.residual.is_nan() { f64::INFINITY } else { self.residual };
        CheckReport::new(name, residual, tolerance, self.point, detail)
    }
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64))
        .collect()
}

/// Default reference levels for the closed-form checks.
pub const DEFAULT_H_GRID: [f64; 3] = [0.5, 1.0, 2.0];

/// `n` log-spaced points strictly inside each dual region at `h`. The floor
/// region is cut off at `1e3 y1`; without a floor the interior region is cut
/// off at `1e3 y2`.
pub fn dual_grid(sol: &DualSolution, h: f64, n: usize) -> Vec<(DualRegion, f64)> {
    let b = sol.dual_boundaries(h);
    let inner = |lo: f64, hi: f64| {
        (0..n).map(move |k| lo * (hi / lo).powf((k as f64 + 0.5) / n as f64))
    };
    let mut out: Vec<(DualRegion, f64)> = Vec::with_capacity(3 * n);
    if b.y3 < b.y2 {
        out.extend(inner(b.y3, b.y2).map(|y| (DualRegion::R3, y)));
    }
    if b.y1.is_finite() {
        out.extend(inner(b.y2, b.y1).map(|y| (DualRegion::R2, y)));
        out.extend(inner(b.y1, 1e3 * b.y1).map(|y| (DualRegion::R1, y)));
    } else {
        out.extend(inner(b.y2, 1e3 * b.y2).map(|y| (DualRegion::R2, y)));
    }
    out
}

/// `|kappa^2/2 y^2 v_yy - (r+lambda) v + V~(y, h)| / (1 + |v|)`, maximized
/// over `n_per_region` points per region at each `h`.
pub fn check_ode_residual(sol: &DualSolution, h_grid: &[f64], n_per_region: usize) -> Result<CheckReport> {
    let m = sol.model();
    let k2 = m.consts.kappa * m.consts.kappa;
    let rr = m.discount();
    let mut worst = Worst::new();
    for &h in h_grid {
        let s = sol.slice(h)?;
        for (_, y) in dual_grid(sol, h, n_per_region) {
            let j = s.jet(y)?;
            let res = k2 / 2.0 * y * y * j.v_yy - rr * j.v + s.v_tilde(y)?;
            worst.update(res.abs() / (1.0 + j.v.abs()), "y", y, h);
        }
    }
    Ok(worst.report("dual ODE residual", 1e-8, String::new()))
}

/// Value and slope mismatches of `v` across `y1`, `y2` and at `y3`, relative
/// to `max(1, |v|)`.
pub fn check_smooth_fit(sol: &DualSolution, h_grid: &[f64]) -> Result<CheckReport> {
    let mut worst = Worst::new();
    for &h in h_grid {
        let s = sol.slice(h)?;
        let b = s.bounds;
        let mut seams = vec![(b.y2, DualRegion::R2, DualRegion::R3)];
        if b.y1.is_finite() {
            seams.push((b.y1, DualRegion::R1, DualRegion::R2));
        }
        for (y, left, right) in seams {
            let a = s.jet_in(left, y);
            let c = s.jet_in(right, y);
            let scale = a.v.abs().max(1.0);
            worst.update((a.v - c.v).abs() / scale, "y", y, h);
            worst.update((a.v_y - c.v_y).abs() / a.v_y.abs().max(1.0), "y", y, h);
        }
        let at = s.jet(b.y3)?;
        let ext = s.jet_in(DualRegion::R3, b.y3);
        worst.update((at.v - ext.v).abs() / at.v.abs().max(1.0), "y", b.y3, h);
        worst.update((at.v_y - ext.v_y).abs() / at.v_y.abs().max(1.0), "y", b.y3, h);
    }
    Ok(worst.report("smooth fit at free boundaries", 1e-10, String::new()))
}

/// `v_yy > 0` on `n_per_region` points per region for each `h`. The residual
/// is the number of points where convexity fails.
pub fn check_convexity(sol: &DualSolution, h_grid: &[f64], n_per_region: usize) -> Result<CheckReport> {
    let mut bad = 0usize;
    let mut total = 0usize;
    let mut min = f64::INFINITY;
    let mut worst = None;
    for &h in h_grid {
        let s = sol.slice(h)?;
        let b = s.bounds;
        let mut ys: Vec<f64> = dual_grid(sol, h, n_per_region).into_iter().map(|(_, y)| y).collect();
        ys.push(b.y3);
        ys.push(b.y2);
        if b.y1.is_finite() {
            ys.push(b.y1);
        }
        for y in ys {
            let vyy = s.v_yy(y)?;
            total += 1;
            if vyy < min {
                min = vyy;
                worst = Some(Point { var: "y", value: y, h });
            }
            if !(vyy > 0.0) {
                bad += 1;
            }
        }
    }
    Ok(CheckReport::new(
        "convexity of v",
        bad as f64,
        0.0,
        worst,
        format!("{total} points, min v_yy = {min:e}"),
    ))
}

/// Interior wealth grid at `h`: `n` points strictly between `x_bound` and
/// `x_lavs`, none on a seam.
pub fn interior_x_grid(solver: &Solver, h: f64, n: usize) -> Result<Vec<f64>> {
    let b = solver.boundary_curves(h)?;
    let seams = [b.x_low, b.x_aggr];
    Ok((0..n)
        .map(|k| b.x_bound + (b.x_lavs - b.x_bound) * (k as f64 + 0.5) / n as f64)
        .map(|x| {
            if seams.iter().any(|s| (x - s).abs() < 1e-6 * s.abs().max(1.0)) {
                x * (1.0 + 1e-5)
            } else {
                x
            }
        })
        .collect())
}

/// Default reference levels for the HJB checks.
pub fn default_hjb_h_grid() -> Vec<f64> {
    log_grid(0.2, 5.0, 20)
}

/// Checks of the primal HJB variational inequality on an `n_x` by `h_grid`
/// interior grid: the equation residual, the sign of `u_h`, the boundary
/// condition `u_h = 0` on `x_lavs`, and `u_xx` against finite differences.
pub fn check_hjb_residual(solver: &Solver, n_x: usize, h_grid: &[f64]) -> Result<Vec<CheckReport>> {
    let m = solver.model();
    let p = &m.params;
    let dc = &m.consts;
    let rr = m.discount();
    let k2 = dc.kappa * dc.kappa;
    let bequest = p.lambda * p.bequest.powf(1.0 / (1.0 - p.gamma2)) * (1.0 - p.gamma2) / p.gamma2;
    let mut res = Worst::new();
    let mut uh_sign = Worst::new();
    let mut uh_edge = Worst::new();
    let mut fd = Worst::new();
    for &h in h_grid {
        let s = solver.slice(h)?;
        for x in interior_x_grid(solver, h, n_x)? {
            let (_, y) = s.dual_point(x)?;
            let j = s.dual().jet(y)?;
            let u = j.v + x * y;
            let ux = y;
            let uxx = -1.0 / j.v_yy;
            let foc = (h.powf(p.alpha * dc.beta1) * ux.powf(1.0 / (p.gamma1 - 1.0))).clamp(p.nu * h, h);
            let hamiltonian = [p.nu * h, foc, h]
                .into_iter()
                .map(|c| m.utility_u(c, h).map(|v| v - c * ux))
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            let terms = [
                hamiltonian,
                -rr * u,
                rr * x * ux,
                bequest * ux.powf(dc.beta2),
                -k2 / 2.0 * ux * ux / uxx,
            ];
            let scale: f64 = terms.iter().map(|t| t.abs()).sum();
            res.update(terms.iter().sum::<f64>().abs() / scale, "x", x, h);

            uh_sign.update(s.dual().v_h(y)?.max(0.0), "x", x, h);

            let d = 1e-5 * x;
            let (_, yp) = s.dual_point(x + d)?;
            let (_, ym) = s.dual_point(x - d)?;
            let uxx_fd = (yp - ym) / (2.0 * d);
            fd.update((uxx_fd - uxx).abs() / uxx.abs(), "x", x, h);
        }
        let x = s.bounds().x_lavs;
        let uh = s.u_h(x)?;
        let scale = s.value_u(x)?.abs().max(1.0);
        uh_edge.update(uh.abs() / scale, "x", x, h);
    }
    Ok(vec![
        res.report("HJB residual", 1e-6, String::new()),
        uh_sign.report("u_h nonpositive", 1e-9, "largest positive part of u_h".into()),
        uh_edge.report("u_h vanishes on x_lavs", 1e-8, String::new()),
        fd.report("u_xx against finite differences", 1e-6, String::new()),
    ])
}

/// Ordering and monotonicity of the boundary curves on `h_grid`; the
/// residual counts violations.
pub fn check_boundary_structure(solver: &Solver, h_grid: &[f64]) -> Result<CheckReport> {
    let mut bad = 0usize;
    let mut worst = None;
    let mut prev: Option<crate::primal::BoundarySet> = None;
    for &h in h_grid {
        let b = solver.boundary_curves(h)?;
        let ordered = b.x_bound < b.x_low && b.x_low < b.x_aggr && b.x_aggr < b.x_lavs;
        let increasing = prev.is_none_or(|q| {
            q.x_bound < b.x_bound && q.x_low < b.x_low && q.x_aggr < b.x_aggr && q.x_lavs < b.x_lavs
        });
        if !(ordered && increasing) {
            bad += 1;
            worst.get_or_insert(Point { var: "x", value: b.x_lavs, h });
        }
        prev = Some(b);
    }
    Ok(CheckReport::new(
        "boundary curves ordered and increasing",
        bad as f64,
        0.0,
        worst,
        format!("{} reference levels", h_grid.len()),
    ))
}

/// With `lambda = nu = 0` the boundary curves are proportional to `h`:
/// largest relative spread of `x/h` across `h_grid`.
pub fn check_linear_boundaries(params: &ModelParams, h_grid: &[f64]) -> Result<CheckReport> {
    let p = params.with("lambda", 0.0)?.with("nu", 0.0)?;
    let solver = Solver::new(p)?;
    let b0 = solver.boundary_curves(h_grid[0])?;
    let r0 = [b0.x_low / h_grid[0], b0.x_aggr / h_grid[0], b0.x_lavs / h_grid[0]];
    let mut worst = Worst::new();
    for &h in h_grid {
        let b = solver.boundary_curves(h)?;
        for (v, r) in [b.x_low / h, b.x_aggr / h, b.x_lavs / h].into_iter().zip(r0) {
            worst.update((v - r).abs() / r.abs().max(1e-300), "x", v * h, h);
        }
    }
    Ok(worst.report("linear boundaries without mortality and floor", 1e-8, String::new()))
}

/// Controls per unit wealth along `x = x_lavs(h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LavsRatios {
    pub h: f64,
    pub c: f64,
    pub pi: f64,
    pub b: f64,
}

pub fn lavs_ratios(solver: &Solver, h: f64) -> Result<LavsRatios> {
    let x = solver.x_lavs(h);
    let d = solver.optimal_controls(x, h)?;
    Ok(LavsRatios {
        h,
        c: d.c / x,
        pi: d.pi / x,
        b: d.b / x,
    })
}

/// Reference levels at which the large-wealth ratios are compared.
pub const ASYMPTOTIC_H: [f64; 3] = [1e2, 1e3, 1e4];

/// Large-wealth behaviour of the controls along the ratchet boundary.
pub fn check_asymptotics(solver: &Solver) -> Result<Vec<CheckReport>> {
    let p = solver.params();
    let g = solver.model().effective_gamma();
    let q: Vec<LavsRatios> = ASYMPTOTIC_H.iter().map(|&h| lavs_ratios(solver, h)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    let contraction = |name: &str, vals: [f64; 3]| {
        let d1 = (vals[1] - vals[0]).abs();
        let d2 = (vals[2] - vals[1]).abs();
        // Ratio of successive differences; already-converged sequences count
        // as contracting.
        let converged = d1 <= 1e-12 * vals[2].abs() && d2 <= 1e-12 * vals[2].abs();
        let residual = if converged { 0.0 } else { d2 / d1 };
        CheckReport::new(
            name,
            residual,
            0.1,
            Some(Point { var: "x", value: solver.x_lavs(ASYMPTOTIC_H[2]), h: ASYMPTOTIC_H[2] }),
            format!("ratios {vals:?}, differences {d1:e}, {d2:e}"),
        )
    };
    let positive = |r: CheckReport, v: f64| if v > 0.0 { r } else { r.fail("limit not positive") };
    out.push(positive(contraction("c/x converges along x_lavs", [q[0].c, q[1].c, q[2].c]), q[2].c));
    out.push(positive(contraction("pi/x converges along x_lavs", [q[0].pi, q[1].pi, q[2].pi]), q[2].pi));

    let b = [q[0].b, q[1].b, q[2].b];
    if (p.gamma2 - g).abs() <= crate::model::GAMMA_MATCH_TOL {
        out.push(positive(contraction("b/x converges to a positive limit", b), b[2]));
    } else {
        // b/x is a pure power of h along the boundary up to the lower-order
        // terms of x_lavs; it must decay.
        // Ratio over the last decade; decay means it stays visibly below 1.
        let decade = b[2] / b[1];
        let r = CheckReport::new("b/x decays to zero", decade, 1.0 - 1e-3, None, format!("ratios {b:?}"));
        out.push(if b[0] > b[1] { r } else { r.fail("not decreasing") });
    }

    // Leading coefficient of x_lavs from its power-law terms, against the
    // closed-form limit.
    let leading: f64 = solver
        .lavs_terms()
        .iter()
        .filter(|t| (t.exponent - 1.0).abs() <= 1e-9)
        .map(|t| t.scale)
        .sum();
    let closed = solver.x_lavs_limit();
    let c_lim = 1.0 / leading;
    let c_closed = 1.0 / closed;
    out.push(CheckReport::new(
        "c/x limit matches closed form",
        (c_lim - c_closed).abs() / c_closed.abs(),
        1e-6,
        None,
        format!("power-law limit {c_lim}, closed form {c_closed}, value at h=1e4 {}", q[2].c),
    ));
    Ok(out)
}

/// Parameter values for the comparative-statics checks. The shortfall
/// aversion grid stops at 0.8 because 0.9 violates (A1) at the baseline.
pub const SENS_LAMBDA: [f64; 3] = [0.01, 0.03, 0.05];
pub const SENS_ALPHA: [f64; 3] = [0.5, 0.7, 0.8];
pub const SENS_NU: [f64; 3] = [0.1, 0.2, 0.3];
pub const SENS_K: [f64; 3] = [1.0, 5.0, 10.0];

fn monotone(name: &str, values: &[f64], increasing: bool) -> CheckReport {
    let mut bad = 0usize;
    let mut tie = false;
    for w in values.windows(2) {
        let d = w[1] - w[0];
        if d.abs() <= 1e-10 * w[0].abs().max(1.0) {
            tie = true;
        } else if (d > 0.0) != increasing {
            bad += 1;
        }
    }
    let r = CheckReport::new(name, bad as f64, 0.0, None, format!("values {values:?}"));
    if tie {
        r.fail("indeterminate: tie within 1e-10")
    } else {
        r
    }
}

/// Thresholds at `h = 1` as one parameter varies.
fn thresholds(base: &ModelParams, key: &str, values: &[f64]) -> Result<Vec<[f64; 3]>> {
    values
        .iter()
        .map(|&v| {
            let b = Solver::new(base.with(key, v)?)?.boundary_curves(1.0)?;
            Ok([b.x_low, b.x_aggr, b.x_lavs])
        })
        .collect()
}

/// Premium after the initial jump, at wealth `x` and starting reference 1.
fn premium(params: &ModelParams, x: f64) -> Result<f64> {
    let (_, d) = Solver::new(*params)?.policy(x, 1.0)?;
    Ok(d.p)
}

/// Comparative statics at `h = 1`: thresholds fall with mortality and
/// shortfall aversion and rise with the drawdown fraction; the premium at
/// large wealth rises with the bequest motive and shortfall aversion.
pub fn check_sensitivities(base: &ModelParams) -> Result<Vec<CheckReport>> {
    let names = ["x_low", "x_aggr", "x_lavs"];
    let mut out = Vec::new();
    for (key, values, increasing) in [("lambda", &SENS_LAMBDA, false), ("alpha", &SENS_ALPHA, false), ("nu", &SENS_NU, true)] {
        let t = thresholds(base, key, values)?;
        for (i, n) in names.iter().enumerate() {
            let series: Vec<f64> = t.iter().map(|r| r[i]).collect();
            out.push(monotone(
                &format!("{n} {} in {key}", if increasing { "increases" } else { "decreases" }),
                &series,
                increasing,
            ));
        }
    }
    let x_ref = Solver::new(*base)?.x_lavs(1.0);
    for (key, values) in [("K", &SENS_K), ("alpha", &SENS_ALPHA)] {
        for mult in [1.0, 1.5, 2.0] {
            let x = mult * x_ref;
            let series = values
                .iter()
                .map(|&v| premium(&base.with(key, v)?, x))
                .collect::<Result<Vec<f64>>>()?;
            out.push(monotone(&format!("premium at x = {x:.4} increases in {key}"), &series, true));
        }
    }
    Ok(out)
}

/// Every deterministic check at its default grid.
pub fn run_all(params: &ModelParams) -> Result<Vec<CheckReport>> {
    let solver = Solver::new(*params)?;
    let sol = solver.dual();
    let mut out = vec![
        check_ode_residual(sol, &DEFAULT_H_GRID, 200)?,
        check_smooth_fit(sol, &DEFAULT_H_GRID)?,
        check_convexity(sol, &DEFAULT_H_GRID, 200)?,
    ];
    out.extend(check_hjb_residual(&solver, 50, &default_hjb_h_grid())?);
    let h40 = log_grid(0.05, 50.0, 40);
    out.push(check_boundary_structure(&solver, &h40)?);
    out.push(check_linear_boundaries(params, &[0.5, 1.0, 2.0, 4.0])?);
    out.extend(check_asymptotics(&solver)?);
    let g = Model::new(*params)?.effective_gamma();
    if let Ok(matched) = params.with("gamma2", g).and_then(Solver::new) {
        for mut r in check_asymptotics(&matched)? {
            r.name = format!("{} (gamma2 = (1-alpha) gamma1)", r.name);
            out.push(r);
        }
    }
    out.extend(check_sensitivities(params)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::PowerLaw;

    fn baseline() -> Solver {
        Solver::new(ModelParams::baseline()).unwrap()
    }

    fn perturbed_c6(eps: f64) -> DualSolution {
        let s = baseline();
        let mut c = *s.dual().coefficients();
        c.c6 = PowerLaw {
            scale: c.c6.scale * (1.0 + eps),
            ..c.c6
        };
        DualSolution::from_parts(*s.model(), c)
    }

    #[test]
    fn ode_residual_passes_at_baseline_and_without_mortality() {
        let r = check_ode_residual(baseline().dual(), &DEFAULT_H_GRID, 200).unwrap();
        assert!(r.pass, "{r:?}");
        let p = ModelParams::baseline().with("lambda", 0.0).unwrap();
        let r = check_ode_residual(Solver::new(p).unwrap().dual(), &DEFAULT_H_GRID, 200).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn perturbed_coefficient_breaks_smooth_fit_only() {
        let sol = perturbed_c6(1e-4);
        // y^{r2} solves the homogeneous equation, so the ODE cannot see it.
        assert!(check_ode_residual(&sol, &DEFAULT_H_GRID, 200).unwrap().pass);
        let r = check_smooth_fit(&sol, &DEFAULT_H_GRID).unwrap();
        assert!(!r.pass && r.max_residual > 1e-8, "{r:?}");
        assert!(check_smooth_fit(baseline().dual(), &DEFAULT_H_GRID).unwrap().pass);
    }

    #[test]
    fn convexity_and_structure() {
        let s = baseline();
        assert!(check_convexity(s.dual(), &DEFAULT_H_GRID, 200).unwrap().pass);
        assert!(check_boundary_structure(&s, &log_grid(0.05, 50.0, 40)).unwrap().pass);
        let r = check_linear_boundaries(s.params(), &[0.5, 1.0, 2.0, 4.0]).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn hjb_checks_pass() {
        for r in check_hjb_residual(&baseline(), 50, &default_hjb_h_grid()).unwrap() {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn report_json_shape() {
        let r = check_smooth_fit(baseline().dual(), &[1.0]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for k in ["name", "max_residual", "tolerance", "pass", "worst_point"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["worst_point"]["var"], "y");
    }

    #[test]
    fn ties_are_indeterminate() {
        let r = monotone("t", &[1.0, 1.0, 2.0], true);
        assert!(!r.pass && r.detail.starts_with("indeterminate"));
        assert!(monotone("t", &[3.0, 2.0, 1.0], false).pass);
        assert_eq!(monotone("t", &[3.0, 2.0, 1.0], true).max_residual, 2.0);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(0.05, 50.0, 40);
        assert_eq!(g.len(), 40);
        assert!((g[0] - 0.05).abs() < 1e-15 && (g[39] - 50.0).abs() < 1e-12);
    }
}
