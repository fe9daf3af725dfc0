//! Monte Carlo simulation of the optimally controlled wealth and reference
//! processes, plus a dual-side estimator of the budget identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::dual::PowerLaw;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::policy::PolicyDecision;
use crate::primal::{PolicySlice, PrimalRegion, Solver};

/// Which model to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Variant {
    /// The model as parameterized.
    Full,
    /// No mortality and no drawdown floor (`lambda = nu = 0`).
    NoInsuranceNoDrawdown,
    /// No shortfall aversion (`alpha = 0`).
    NonHabit,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoInsuranceNoDrawdown, Variant::NonHabit];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoInsuranceNoDrawdown => "no-insurance-no-drawdown",
            Variant::NonHabit => "non-habit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "full" => Some(Variant::Full),
            "no-insurance-no-drawdown" | "noinsurancenodrawdown" | "guasoni" => {
                Some(Variant::NoInsuranceNoDrawdown)
            }
            "non-habit" | "nonhabit" => Some(Variant::NonHabit),
            _ => None,
        }
    }

    /// Parameters with this variant's overrides applied.
    pub fn apply(&self, mut params: ModelParams) -> ModelParams {
        match self {
            Variant::Full => {}
            Variant::NoInsuranceNoDrawdown => {
                params.lambda = 0.0;
                params.nu = 0.0;
            }
            Variant::NonHabit => params.alpha = 0.0,
        }
        params
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Steps between recorded rows.
    pub record_stride: usize,
    /// Stop each path at an exponential death time.
    pub sample_death: bool,
    /// Keep every path's records in the ensemble result.
    pub keep_paths: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 10.0,
            n_paths: 1,
            seed: 0,
            variant: Variant::Full,
            record_stride: 10,
            sample_death: false,
            keep_paths: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidConfig(format!("horizon = {} must be positive", self.horizon)));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidConfig("n_paths must be at least 1".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidConfig("record_stride must be at least 1".into()));
        }
        if self.horizon / self.dt > 1e9 {
            return Err(Error::InvalidConfig("more than 1e9 steps per path".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round().max(1.0) as usize
    }
}

/// One recorded row of a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathRecord {
    pub t: f64,
    #[serde(rename = "X")]
    pub x: f64,
    #[serde(rename = "H")]
    pub h: f64,
    pub c: f64,
    pub pi: f64,
    pub b: f64,
    pub p: f64,
}

/// Per-step admissibility audit of one or more paths.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Audit {
    pub steps: u64,
    /// Steps with `X < nu H/(r+lambda) - 1e-6 H`.
    pub floor_violations: u64,
    /// Steps with consumption outside `[nu H, H]`.
    pub consumption_violations: u64,
    /// Steps where `H` decreased.
    pub reference_decreases: u64,
    /// Steps where `H` increased without `X` having crossed `x_lavs(H)`.
    pub ratchet_mismatches: u64,
    /// Steps where `H` was pushed up.
    pub ratchet_events: u64,
    /// Euler steps that landed below the floor and were absorbed there.
    pub floor_overshoots: u64,
    /// Paths that ended absorbed at the floor.
    pub absorbed_paths: u64,
}

impl Audit {
    pub fn violations(&self) -> u64 {
        self.floor_violations + self.consumption_violations + self.reference_decreases + self.ratchet_mismatches
    }

    fn merge(&mut self, o: &Audit) {
        self.steps += o.steps;
        self.floor_violations += o.floor_violations;
        self.consumption_violations += o.consumption_violations;
        self.reference_decreases += o.reference_decreases;
        self.ratchet_mismatches += o.ratchet_mismatches;
        self.ratchet_events += o.ratchet_events;
        self.floor_overshoots += o.floor_overshoots;
        self.absorbed_paths += o.absorbed_paths;
    }
}

/// Everything one simulated path produces.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOutput {
    pub records: Vec<PathRecord>,
    pub audit: Audit,
    /// Wealth at the end of the path (death time if sampled).
    pub terminal_x: f64,
    /// Sample variance of the per-step consumption increments.
    pub c_increment_var: f64,
    pub death_time: Option<f64>,
}

/// One row of the ensemble summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryRow {
    pub t: f64,
    pub mean_x: f64,
    pub q05_x: f64,
    pub q95_x: f64,
    pub mean_c: f64,
    pub mean_pi: f64,
    pub mean_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub summary: Vec<SummaryRow>,
    pub audit: Audit,
    pub mean_terminal_x: f64,
    /// Mean over paths of the consumption-increment variance.
    pub mean_c_increment_var: f64,
    pub paths: Option<Vec<Vec<PathRecord>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BudgetEstimate {
    pub x0: f64,
    /// Mean of `int_0^T (c + lambda b) M dt`.
    pub estimate: f64,
    pub std_error: f64,
    /// Mean of `int_0^T M w_h dH` with `w = -v_y`: the reflection term picked
    /// up by `M_t w(Y_t, H_t)` each time the reference level rises.
    pub boundary_term: f64,
    /// Standard error of `estimate - boundary_term`.
    pub corrected_std_error: f64,
    pub n_paths: usize,
}

impl BudgetEstimate {
    pub fn relative_error(&self) -> f64 {
        (self.estimate - self.x0).abs() / self.x0
    }

    /// Distance from `x0` in standard errors.
    pub fn z_score(&self) -> f64 {
        (self.estimate - self.x0).abs() / self.std_error
    }

    /// Distance of `estimate - boundary_term` from `x0` in standard errors.
    /// By Ito's formula this difference, not `estimate` alone, has mean `x0`
    /// up to the discretization and the tail beyond the horizon.
    pub fn corrected_z_score(&self) -> f64 {
        (self.estimate - self.boundary_term - self.x0).abs() / self.corrected_std_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakOrderReport {
    pub dts: Vec<f64>,
    pub mean_terminal_x: Vec<f64>,
    /// Mean differences between consecutive levels, coarse minus fine.
    pub differences: Vec<f64>,
    pub difference_std_errors: Vec<f64>,
    /// `log2` of the ratio of consecutive differences.
    pub slope: f64,
}

impl WeakOrderReport {
    /// Every level difference exceeds `z` standard errors, so the slope is
    /// measuring discretization error rather than Monte Carlo noise.
    pub fn resolved(&self, z: f64) -> bool {
        self.differences
            .iter()
            .zip(&self.difference_std_errors)
            .all(|(d, se)| d.abs() > z * se)
    }
}

/// Independent, reproducible stream for path `index`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A simulator for one variant of one parameter set.
#[derive(Debug, Clone)]
pub struct Simulator {
    solver: Solver,
    cfg: SimConfig,
}

const PATH_CHUNK: usize = 64;

impl Simulator {
    pub fn new(params: ModelParams, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let solver = Solver::new(cfg.variant.apply(params))?;
        Ok(Self { solver, cfg })
    }

    pub fn solver(&self) -> &Solver {
        &self.solver
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    fn check_start(&self, x0: f64, h0: f64) -> Result<(f64, f64)> {
        let j = self.solver.apply_initial_jump(x0, h0)?;
        Ok((x0, j.h_new))
    }

    /// Path `index` of the ensemble, started at `(x0, h0)`.
    pub fn simulate_path(&self, x0: f64, h0: f64, index: u64) -> Result<PathOutput> {
        let mut rng = path_rng(self.cfg.seed, index);
        let death = self.draw_death(&mut rng)?;
        let mut normal = move || rng.sample::<f64, _>(StandardNormal);
        self.run(x0, h0, self.cfg.dt, self.cfg.n_steps(), death, &mut normal, true)
    }

    /// Like [`Simulator::simulate_path`] with caller-supplied standard normal
    /// increments.
    pub fn simulate_path_with_noise(&self, x0: f64, h0: f64, noise: &mut dyn FnMut() -> f64) -> Result<PathOutput> {
        self.run(x0, h0, self.cfg.dt, self.cfg.n_steps(), None, noise, true)
    }

    fn draw_death(&self, rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
        let lambda = self.solver.params().lambda;
        if !self.cfg.sample_death || lambda == 0.0 {
            return Ok(None);
        }
        let exp = Exp::new(lambda).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(Some(exp.sample(rng)))
    }

    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        x0: f64,
        h0: f64,
        dt: f64,
        n_steps: usize,
        death: Option<f64>,
        noise: &mut dyn FnMut() -> f64,
        record: bool,
    ) -> Result<PathOutput> {
        let (mut x, h_start) = self.check_start(x0, h0)?;
        let solver = &self.solver;
        let p = *solver.params();
        let rr = solver.model().discount();
        let sqdt = dt.sqrt();
        let n_steps = match death {
            Some(tau) => ((tau / dt).ceil() as usize).min(n_steps),
            None => n_steps,
        };
        let stride = self.cfg.record_stride;
        let mut slice = solver.slice(h_start)?;
        let mut h = h_start;
        let mut absorbed = false;
        let mut guess: Option<f64> = None;
        let mut audit = Audit::default();
        let mut records = Vec::with_capacity(if record { n_steps / stride + 2 } else { 0 });
        let (mut dc_n, mut dc_mean, mut dc_m2) = (0u64, 0.0f64, 0.0f64);
        let mut c_prev = f64::NAN;
        let floor_tol = |h: f64| 1e-9 * (1.0 + h);

        if slice.classify(x)? == PrimalRegion::Floor {
            absorbed = true;
            x = slice.bounds().x_bound;
        }
        let mut decision = self.decide(&slice, x, absorbed, &mut guess)?;
        for n in 0..=n_steps {
            let t = n as f64 * dt;
            audit.steps += 1;
            if x < p.nu * h / rr - 1e-6 * h {
                audit.floor_violations += 1;
            }
            let c_tol = 1e-12 * h;
            if decision.c < p.nu * h - c_tol || decision.c > h + c_tol {
                audit.consumption_violations += 1;
            }
            if c_prev.is_finite() {
                let dcv = decision.c - c_prev;
                dc_n += 1;
                let delta = dcv - dc_mean;
                dc_mean += delta / dc_n as f64;
                dc_m2 += delta * (dcv - dc_mean);
            }
            c_prev = decision.c;
            if record && (n % stride == 0 || n == n_steps) {
                records.push(PathRecord {
                    t,
                    x,
                    h,
                    c: decision.c,
                    pi: decision.pi,
                    b: decision.b,
                    p: decision.p,
                });
            }
            if n == n_steps {
                break;
            }
            if absorbed {
                continue;
            }
            let dw = sqdt * noise();
            let drift = rr * x + decision.pi * (p.mu - p.r) - decision.c - p.lambda * decision.b;
            let x_new = x + drift * dt + decision.pi * p.sigma * dw;
            if !x_new.is_finite() || x_new < 0.0 {
                return Err(Error::Numerical(format!(
                    "wealth became {x_new} at step {n} (t = {t}): X = {x}, H = {h}, c = {}, pi = {}, b = {}",
                    decision.c, decision.pi, decision.b
                )));
            }
            let x_bound = slice.bounds().x_bound;
            if x_new <= x_bound + floor_tol(h) {
                if x_new < x_bound - floor_tol(h) {
                    audit.floor_overshoots += 1;
                }
                x = x_bound;
                absorbed = true;
            } else {
                x = x_new;
                let crossed = x > slice.bounds().x_lavs;
                let h_prev = h;
                if crossed {
                    h = solver.h_tilde_from(x, h)?;
                    audit.ratchet_events += 1;
                    slice = solver.slice(h)?;
                }
                if h < h_prev {
                    audit.reference_decreases += 1;
                }
                if h > h_prev && !crossed {
                    audit.ratchet_mismatches += 1;
                }
            }
            decision = self.decide(&slice, x, absorbed, &mut guess)?;
        }
        if absorbed {
            audit.absorbed_paths = 1;
        }
        let c_increment_var = if dc_n > 1 { dc_m2 / (dc_n - 1) as f64 } else { 0.0 };
        Ok(PathOutput {
            records,
            audit,
            terminal_x: x,
            c_increment_var,
            death_time: death.filter(|tau| *tau < self.cfg.horizon),
        })
    }

    fn decide(&self, slice: &PolicySlice<'_>, x: f64, absorbed: bool, guess: &mut Option<f64>) -> Result<PolicyDecision> {
        if absorbed {
            return Ok(slice.controls_at(x, PrimalRegion::Floor, f64::INFINITY));
        }
        let d = slice.controls(x, *guess)?;
        *guess = if d.y.is_finite() { Some(d.y) } else { None };
        Ok(d)
    }

    /// Simulate `n_paths` paths in parallel and summarize them. Results do
    /// not depend on the number of threads.
    pub fn simulate_ensemble(&self, x0: f64, h0: f64) -> Result<EnsembleResult> {
        self.check_start(x0, h0)?;
        let n = self.cfg.n_paths;
        let mut audit = Audit::default();
        let mut rows: Vec<RowAcc> = Vec::new();
        let mut terminal_sum = 0.0;
        let mut var_sum = 0.0;
        let mut kept = if self.cfg.keep_paths { Some(Vec::with_capacity(n)) } else { None };
        let mut start = 0;
        while start < n {
            let end = (start + PATH_CHUNK).min(n);
            let outs: Vec<Result<PathOutput>> = (start..end)
                .into_par_iter()
                .map(|i| self.simulate_path(x0, h0, i as u64))
                .collect();
            for out in outs {
                let out = out?;
                audit.merge(&out.audit);
                terminal_sum += out.terminal_x;
                var_sum += out.c_increment_var;
                for (k, r) in out.records.iter().enumerate() {
                    if rows.len() <= k {
                        rows.push(RowAcc::new(r.t));
                    }
                    rows[k].push(r);
                }
                if let Some(k) = kept.as_mut() {
                    k.push(out.records);
                }
            }
            start = end;
        }
        Ok(EnsembleResult {
            summary: rows.into_iter().map(RowAcc::finish).collect(),
            audit,
            mean_terminal_x: terminal_sum / n as f64,
            mean_c_increment_var: var_sum / n as f64,
            paths: kept,
        })
    }

    /// Monte Carlo estimate of `E[int_0^T (c + lambda b) M_t dt]`, which
    /// should equal the initial wealth.
    ///
    /// Simulated on the dual side: `ln Y_t` is a Brownian motion with drift,
    /// the reference level follows the running minimum of `Y` (sampled exactly
    /// within each step from the Brownian bridge), and controls are read off
    /// the dual feedback maps.
    pub fn budget_identity_mc(&self, x0: f64, h0: f64) -> Result<BudgetEstimate> {
        let solver = &self.solver;
        let jump = solver.apply_initial_jump(x0, h0)?;
        let h_start = jump.h_new;
        let (region, y0) = solver.dual_point(x0, h_start)?;
        let cfg = self.cfg;
        let p = *solver.params();
        let rr = solver.model().discount();
        let n_steps = cfg.n_steps();
        let dt = cfg.dt;
        if region == PrimalRegion::Floor {
            let v = p.nu * h_start * (1.0 - (-rr * dt * n_steps as f64).exp()) / rr;
            return Ok(BudgetEstimate {
                x0,
                estimate: v,
                std_error: 0.0,
                boundary_term: 0.0,
                corrected_std_error: 0.0,
                n_paths: cfg.n_paths,
            });
        }
        let kernel = DualKernel::new(solver, h_start, y0, dt);
        let values: Vec<(f64, f64)> = (0..cfg.n_paths)
            .into_par_iter()
            .map(|i| {
                let mut rng = path_rng(cfg.seed, i as u64);
                kernel.integrate(&mut rng, n_steps)
            })
            .collect();
        let (mean, se) = mean_and_se(values.iter().map(|v| v.0));
        let (boundary, _) = mean_and_se(values.iter().map(|v| v.1));
        let (_, corrected_se) = mean_and_se(values.iter().map(|v| v.0 - v.1));
        Ok(BudgetEstimate {
            x0,
            estimate: mean,
            std_error: se,
            boundary_term: boundary,
            corrected_std_error: corrected_se,
            n_paths: cfg.n_paths,
        })
    }

    /// Terminal mean wealth at step sizes `dt, dt/2, ...` driven by the same
    /// Brownian paths (`levels` step sizes, finest last). Coarse increments
    /// are sums of fine ones.
    pub fn weak_order_study(&self, x0: f64, h0: f64, levels: usize) -> Result<WeakOrderReport> {
        if levels < 3 {
            return Err(Error::InvalidConfig("need at least three step sizes".into()));
        }
        let cfg = self.cfg;
        let finest_factor = 1usize << (levels - 1);
        let n_coarse = cfg.n_steps();
        let n_fine = n_coarse * finest_factor;
        let per_path: Vec<Result<Vec<f64>>> = (0..cfg.n_paths)
            .into_par_iter()
            .map(|i| {
                let mut rng = path_rng(cfg.seed, i as u64);
                let fine: Vec<f64> = (0..n_fine).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                (0..levels)
                    .map(|k| {
                        let m = finest_factor >> k;
                        let scale = 1.0 / (m as f64).sqrt();
                        let mut it = fine.chunks(m).map(|c| c.iter().sum::<f64>() * scale);
                        let mut noise = move || it.next().unwrap_or(0.0);
                        let dt = cfg.dt / (1usize << k) as f64;
                        self.run(x0, h0, dt, n_coarse << k, None, &mut noise, false)
                            .map(|o| o.terminal_x)
                    })
                    .collect()
            })
            .collect();
        let mut terminal: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_paths);
        for r in per_path {
            terminal.push(r?);
        }
        let n = terminal.len() as f64;
        let mean_terminal_x: Vec<f64> = (0..levels).map(|k| terminal.iter().map(|t| t[k]).sum::<f64>() / n).collect();
        let mut differences = Vec::new();
        let mut difference_std_errors = Vec::new();
        for k in 0..levels - 1 {
            let d: Vec<f64> = terminal.iter().map(|t| t[k] - t[k + 1]).collect();
            let mean = d.iter().sum::<f64>() / n;
            let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
            differences.push(mean);
            difference_std_errors.push((var / n).sqrt());
        }
        let slope = (differences[levels - 3].abs() / differences[levels - 2].abs()).log2();
        Ok(WeakOrderReport {
            dts: (0..levels).map(|k| cfg.dt / (1usize << k) as f64).collect(),
            mean_terminal_x,
            differences,
            difference_std_errors,
            slope,
        })
    }
}

struct RowAcc {
    t: f64,
    xs: Vec<f64>,
    c: f64,
    pi: f64,
    p: f64,
}

impl RowAcc {
    fn new(t: f64) -> Self {
        Self {
            t,
            xs: Vec::new(),
            c: 0.0,
            pi: 0.0,
            p: 0.0,
        }
    }

    fn push(&mut self, r: &PathRecord) {
        self.xs.push(r.x);
        self.c += r.c;
        self.pi += r.pi;
        self.p += r.p;
    }

    fn finish(mut self) -> SummaryRow {
        let n = self.xs.len() as f64;
        let mean_x = self.xs.iter().sum::<f64>() / n;
        self.xs.sort_by(f64::total_cmp);
        SummaryRow {
            t: self.t,
            mean_x,
            q05_x: quantile(&self.xs, 0.05),
            q95_x: quantile(&self.xs, 0.95),
            mean_c: self.c / n,
            mean_pi: self.pi / n,
            mean_p: self.p / n,
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-step constants for the dual-side budget integrand.
fn mean_and_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

struct DualKernel {
    dt: f64,
    kappa: f64,
    lambda: f64,
    nu: f64,
    alpha_beta1: f64,
    inv_g1m1: f64,
    inv_g2m1: f64,
    inv_gm1: f64,
    ln_one_minus_alpha: f64,
    ln_nu_g1m1: f64,
    g_m1: f64,
    bequest_scale: f64,
    ln_y0: f64,
    ln_h0: f64,
    /// Drift of `ln M` per unit time.
    m_drift: f64,
    r1: f64,
    r2: f64,
    c5: PowerLaw,
    c6: PowerLaw,
    one_minus_alpha: f64,
    discount: f64,
}

impl DualKernel {
    fn new(solver: &Solver, h0: f64, y0: f64, dt: f64) -> Self {
        let m = solver.model();
        let p = &m.params;
        let kappa = m.consts.kappa;
        let g = m.effective_gamma();
        Self {
            dt,
            kappa,
            lambda: p.lambda,
            nu: p.nu,
            alpha_beta1: p.alpha * m.consts.beta1,
            inv_g1m1: 1.0 / (p.gamma1 - 1.0),
            inv_g2m1: 1.0 / (p.gamma2 - 1.0),
            inv_gm1: 1.0 / (g - 1.0),
            ln_one_minus_alpha: (1.0 - p.alpha).ln(),
            ln_nu_g1m1: if p.nu > 0.0 { (p.gamma1 - 1.0) * p.nu.ln() } else { f64::INFINITY },
            g_m1: g - 1.0,
            bequest_scale: p.bequest.powf(-1.0 / (p.gamma2 - 1.0)),
            ln_y0: y0.ln(),
            ln_h0: h0.ln(),
            m_drift: -(m.discount() + 0.5 * kappa * kappa),
            r1: m.consts.r1,
            r2: m.consts.r2,
            c5: solver.dual().coefficients().c5,
            c6: solver.dual().coefficients().c6,
            one_minus_alpha: 1.0 - p.alpha,
            discount: m.discount(),
        }
    }

    /// `-v_yh` at the ratchet boundary `y3(h)`, from the region-R3 formula.
    fn w_h(&self, h: f64) -> f64 {
        let y3 = self.one_minus_alpha * h.powf(self.g_m1);
        -(self.r1 * self.c5.derivative(h) * y3.powf(self.r1 - 1.0)
            + self.r2 * self.c6.derivative(h) * y3.powf(self.r2 - 1.0)
            - 1.0 / self.discount)
    }

    /// `int_0^T (c + lambda b) M dt` along one path, left-point rule, and
    /// the reflection term `int_0^T M w_h dH`.
    fn integrate(&self, rng: &mut ChaCha8Rng, n_steps: usize) -> (f64, f64) {
        let sd = self.kappa * self.dt.sqrt();
        let var_step = self.kappa * self.kappa * self.dt;
        // ln Y_t - ln y0 = -kappa^2/2 t - kappa W_t = ln M_t + (r+lambda) t.
        let y_drift = -0.5 * self.kappa * self.kappa * self.dt;
        let mut ln_m = 0.0;
        let mut ln_y = self.ln_y0;
        let mut ln_inf = ln_y;
        let mut ln_h = self.ln_h0;
        let mut bounds = self.log_bounds(ln_h);
        let mut total = 0.0;
        let mut reflection = 0.0;
        for _ in 0..n_steps {
            let c_m = if ln_y > bounds.0 {
                self.nu * (ln_h + ln_m).exp()
            } else if ln_y >= bounds.1 {
                (self.alpha_beta1 * ln_h + self.inv_g1m1 * ln_y + ln_m).exp()
            } else {
                (ln_h + ln_m).exp()
            };
            let b_m = self.bequest_scale * (self.inv_g2m1 * ln_y + ln_m).exp();
            total += (c_m + self.lambda * b_m) * self.dt;

            let z: f64 = rng.sample(StandardNormal);
            let step = y_drift - sd * z;
            let next = ln_y + step;
            let ln_m_start = ln_m;
            ln_m += self.m_drift * self.dt - sd * z;
            // Minimum of the bridge from ln_y to next, if it can beat ln_inf.
            let low = ln_y.min(next);
            let mut new_inf = ln_inf.min(low);
            let a = ln_y - ln_inf;
            let b = next - ln_inf;
            if a > 0.0 && b > 0.0 {
                if -2.0 * a * b / var_step > -36.0 {
                    let u: f64 = rng.gen();
                    let m = 0.5 * (ln_y + next - ((next - ln_y).powi(2) - 2.0 * var_step * u.ln()).sqrt());
                    new_inf = new_inf.min(m);
                }
            } else {
                let u: f64 = rng.gen();
                let m = 0.5 * (ln_y + next - ((next - ln_y).powi(2) - 2.0 * var_step * u.ln()).sqrt());
                new_inf = new_inf.min(m);
            }
            if new_inf < ln_inf {
                ln_inf = new_inf;
                let cand = (ln_inf - self.ln_one_minus_alpha) * self.inv_gm1;
                if cand > ln_h {
                    let (h_old, h_new) = (ln_h.exp(), cand.exp());
                    reflection += ln_m_start.exp()
                        * self.w_h(0.5 * (h_old + h_new))
                        * (h_new - h_old);
                    ln_h = cand;
                    bounds = self.log_bounds(ln_h);
                }
            }
            ln_y = next;
        }
        (total, reflection)
    }

    /// `(ln y1, ln y2)` at reference `e^{ln_h}`.
    fn log_bounds(&self, ln_h: f64) -> (f64, f64) {
        let ln_y2 = self.g_m1 * ln_h;
        (ln_y2 + self.ln_nu_g1m1, ln_y2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(cfg: SimConfig) -> Simulator {
        Simulator::new(ModelParams::baseline(), cfg).unwrap()
    }

    #[test]
    fn variants_override_parameters() {
        let b = ModelParams::baseline();
        let g = Variant::NoInsuranceNoDrawdown.apply(b);
        assert_eq!((g.lambda, g.nu), (0.0, 0.0));
        assert_eq!(Variant::NonHabit.apply(b).alpha, 0.0);
        assert_eq!(Variant::Full.apply(b), b);
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()), Some(v));
        }
    }

    #[test]
    fn config_validation() {
        let bad = SimConfig { dt: 0.0, ..SimConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SimConfig { n_paths: 0, ..SimConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn floor_start_stays_put() {
        let s = sim(SimConfig { horizon: 1.0, dt: 1e-2, ..SimConfig::default() });
        let mut zero = || 0.0;
        let out = s.simulate_path_with_noise(2.5, 1.0, &mut zero).unwrap();
        for r in &out.records {
            assert_eq!(r.x, 2.5);
            assert!((r.c - 0.2).abs() < 1e-15);
            assert_eq!(r.h, 1.0);
        }
        let out = s.simulate_path(2.5, 1.0, 3).unwrap();
        assert!(out.records.iter().all(|r| r.x == 2.5 && r.pi == 0.0 && r.b == 0.0));
    }

    #[test]
    fn reference_only_rises_at_the_boundary() {
        let s = sim(SimConfig { horizon: 2.0, dt: 1e-2, record_stride: 1, ..SimConfig::default() });
        let out = s.simulate_path(15.0, 1.0, 0).unwrap();
        assert_eq!(out.audit.violations(), 0);
        for w in out.records.windows(2) {
            assert!(w[1].h >= w[0].h);
            if w[1].h > w[0].h {
                let lavs = s.solver().x_lavs(w[1].h);
                assert!((w[1].x - lavs).abs() <= 1e-9 * lavs, "{:?}", w[1]);
            }
        }
    }

    #[test]
    fn single_path_ensemble_matches_path() {
        let cfg = SimConfig { horizon: 1.0, dt: 1e-2, n_paths: 1, keep_paths: true, ..SimConfig::default() };
        let s = sim(cfg);
        let e = s.simulate_ensemble(3.5, 1.0).unwrap();
        let p = s.simulate_path(3.5, 1.0, 0).unwrap();
        assert_eq!(e.paths.unwrap()[0], p.records);
        for (row, r) in e.summary.iter().zip(&p.records) {
            assert_eq!(row.mean_x, r.x);
            assert_eq!(row.q05_x, r.x);
            assert_eq!(row.mean_c, r.c);
        }
    }

    #[test]
    fn ensembles_are_reproducible() {
        let cfg = SimConfig { horizon: 1.0, dt: 1e-2, n_paths: 100, seed: 7, ..SimConfig::default() };
        let a = sim(cfg).simulate_ensemble(3.5, 1.0).unwrap();
        let b = sim(cfg).simulate_ensemble(3.5, 1.0).unwrap();
        assert_eq!(a.summary, b.summary);
        let c = sim(SimConfig { seed: 8, ..cfg }).simulate_ensemble(3.5, 1.0).unwrap();
        assert_ne!(a.summary, c.summary);
    }

    #[test]
    fn budget_at_floor_is_exact() {
        let s = sim(SimConfig { horizon: 100.0, dt: 1e-2, n_paths: 10, ..SimConfig::default() });
        let e = s.budget_identity_mc(2.5, 1.0).unwrap();
        assert!((e.estimate - 2.5).abs() < 2.5 * 1e-3);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert!((quantile(&v, 0.05) - 1.2).abs() < 1e-15);
    }
}
