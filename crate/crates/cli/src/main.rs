//! `shortfall`: evaluate policies, dump boundary curves and sensitivity
//! sweeps as CSV, simulate controlled paths, and run the verifier.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shortfall_core::io::{csv_row, fmt_sig, write_path_csv, write_summary_csv};
use shortfall_core::verifier::{self, log_grid};
use shortfall_core::{Error, ModelParams, SimConfig, Simulator, Solver, Variant};

#[derive(Parser, Debug)]
#[command(name = "shortfall", version, about = "Consumption, investment and life insurance under shortfall aversion and a drawdown floor")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON parameter file with all ten keys (default: the baseline set).
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    /// Override one parameter, applied after --params. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output file (stdout if omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Optimal controls at one state, after any initial jump of h.
    Policy {
        #[arg(long)]
        x: f64,
        #[arg(long)]
        h: f64,
    },
    /// Boundary curves on a log-spaced h grid.
    Boundaries {
        #[arg(long, default_value_t = 0.05)]
        h_min: f64,
        #[arg(long, default_value_t = 50.0)]
        h_max: f64,
        #[arg(long, default_value_t = 40)]
        n: usize,
        #[command(flatten)]
        axis: AxisArgs,
    },
    /// Controls over a wealth grid for several values of one parameter.
    Sweep {
        #[command(flatten)]
        axis: AxisArgs,
        #[arg(long, default_value_t = 1.0)]
        h: f64,
        /// Lower end of the wealth grid (default: the floor for each value).
        #[arg(long)]
        x_min: Option<f64>,
        /// Upper end of the wealth grid (default: x_lavs(h) for each value).
        #[arg(long)]
        x_max: Option<f64>,
        #[arg(long, default_value_t = 50)]
        n_x: usize,
    },
    /// Simulate controlled paths. One path writes t,X,H,c,pi,b,p; more write
    /// the ensemble summary.
    Simulate {
        #[arg(long, default_value_t = 3.5)]
        x0: f64,
        #[arg(long, default_value_t = 1.0)]
        h0: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 10.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1)]
        paths: usize,
        /// full, no-insurance-no-drawdown, non-habit, or all (needs --out).
        #[arg(long, default_value = "full")]
        variant: String,
        #[arg(long, default_value_t = 10)]
        record_stride: usize,
        /// Stop each path at an exponential death time.
        #[arg(long)]
        sample_death: bool,
    },
    /// Run every deterministic check and print a JSON report.
    Verify,
}

#[derive(Args, Debug)]
struct AxisArgs {
    /// Parameter to vary: lambda, alpha, K or nu.
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated values for --axis.
    #[arg(long, value_delimiter = ',', requires = "axis")]
    values: Vec<f64>,
}

const SWEEP_AXES: [&str; 4] = ["lambda", "alpha", "K", "nu"];

#[derive(Debug)]
enum Failure {
    Model(Error),
    Config(String),
    Io(io::Error),
    ChecksFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Model(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::ChecksFailed => 1,
            Failure::Config(_) => 2,
            Failure::Model(e) if e.is_configuration() => 2,
            Failure::Model(e) if e.is_inadmissible() => 3,
            Failure::Model(_) | Failure::Io(_) => 4,
        }
    }
}

fn load_params(c: &Common) -> Result<ModelParams, Failure> {
    let mut p = match &c.params {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            ModelParams::from_json(&text)?
        }
        None => ModelParams::baseline(),
    };
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("--set {k}: {v:?} is not a number")))?;
        p.set(k.trim(), v)?;
    }
    // Validation and (A1) are both checked by the solver constructor.
    Solver::new(p)?;
    Ok(p)
}

fn open_out(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn axis_values(a: &AxisArgs, base: &ModelParams) -> Result<Option<(String, Vec<ModelParams>)>, Failure> {
    let Some(name) = &a.axis else { return Ok(None) };
    if !SWEEP_AXES.contains(&name.as_str()) {
        return Err(Failure::Config(format!("--axis must be one of {SWEEP_AXES:?}, got {name:?}")));
    }
    if a.values.is_empty() {
        return Err(Failure::Config("--axis needs --values".into()));
    }
    let sets = a
        .values
        .iter()
        .map(|&v| {
            let p = base.with(name, v)?;
            Solver::new(p)?;
            Ok(p)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(Some((name.clone(), sets)))
}

fn cmd_policy(p: ModelParams, x: f64, h: f64, w: &mut dyn Write) -> Result<(), Failure> {
    let s = Solver::new(p)?;
    let (j, d) = s.policy(x, h)?;
    let u = s.value_u(x, j.h_new)?;
    writeln!(w, "region,jumped,h,x,c,pi,b,p,u")?;
    writeln!(
        w,
        "{},{},{}",
        d.region.label(),
        j.jumped,
        csv_row(&[j.h_new, x, d.c, d.pi, d.b, d.p, u])
    )?;
    Ok(())
}

fn cmd_boundaries(p: ModelParams, h_min: f64, h_max: f64, n: usize, axis: &AxisArgs, w: &mut dyn Write) -> Result<(), Failure> {
    if !(h_min > 0.0 && h_max >= h_min && n >= 1) {
        return Err(Failure::Config(format!("need 0 < h_min <= h_max and n >= 1 (got {h_min}, {h_max}, {n})")));
    }
    let grid = log_grid(h_min, h_max, n);
    let sets = axis_values(axis, &p)?;
    match &sets {
        Some((name, _)) => writeln!(w, "{name},h,x_bound,x_low,x_aggr,x_lavs")?,
        None => writeln!(w, "h,x_bound,x_low,x_aggr,x_lavs")?,
    }
    let runs: Vec<(Option<f64>, ModelParams)> = match &sets {
        Some((name, ps)) => ps.iter().map(|q| (q.get(name), *q)).collect(),
        None => vec![(None, p)],
    };
    for (value, q) in runs {
        let s = Solver::new(q)?;
        for &h in &grid {
            let b = s.boundary_curves(h)?;
            let row = csv_row(&[h, b.x_bound, b.x_low, b.x_aggr, b.x_lavs]);
            match value {
                Some(v) => writeln!(w, "{},{row}", fmt_sig(v))?,
                None => writeln!(w, "{row}")?,
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    p: ModelParams,
    axis: &AxisArgs,
    h: f64,
    x_min: Option<f64>,
    x_max: Option<f64>,
    n_x: usize,
    w: &mut dyn Write,
) -> Result<(), Failure> {
    let Some((name, sets)) = axis_values(axis, &p)? else {
        return Err(Failure::Config("sweep needs --axis and --values".into()));
    };
    if n_x < 2 {
        return Err(Failure::Config("--n-x must be at least 2".into()));
    }
    writeln!(w, "{name},x,c,pi,p")?;
    for q in sets {
        let s = Solver::new(q)?;
        let lo = x_min.unwrap_or_else(|| s.x_bound(h));
        let hi = x_max.unwrap_or_else(|| s.x_lavs(h));
        if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
            return Err(Failure::Config(format!("empty wealth grid [{lo}, {hi}]")));
        }
        let v = q.get(&name).expect("sweep axis is a parameter");
        for k in 0..n_x {
            let x = lo + (hi - lo) * k as f64 / (n_x - 1) as f64;
            let (_, d) = s.policy(x, h)?;
            writeln!(w, "{},{}", fmt_sig(v), csv_row(&[x, d.c, d.pi, d.p]))?;
        }
    }
    Ok(())
}

/// `runs.csv` becomes `runs-<variant>.csv`.
fn variant_path(out: &Path, v: Variant) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}-{}.{}", v.name(), ext.to_string_lossy()),
        None => format!("{stem}-{}", v.name()),
    };
    out.with_file_name(name)
}

fn simulate_one(p: ModelParams, cfg: SimConfig, x0: f64, h0: f64, w: &mut dyn Write) -> Result<(), Failure> {
    let sim = Simulator::new(p, cfg)?;
    if cfg.n_paths == 1 {
        let path = sim.simulate_path(x0, h0, 0)?;
        write_path_csv(w, &path.records)?;
    } else {
        let e = sim.simulate_ensemble(x0, h0)?;
        write_summary_csv(w, &e.summary)?;
    }
    Ok(())
}

fn cmd_verify(p: ModelParams, w: &mut dyn Write) -> Result<(), Failure> {
    let reports = verifier::run_all(&p)?;
    let json = serde_json::to_string_pretty(&reports).map_err(|e| Failure::Io(io::Error::other(e)))?;
    writeln!(w, "{json}")?;
    w.flush()?;
    for r in reports.iter().filter(|r| !r.pass) {
        eprintln!("FAIL {}: {:e} > {:e}", r.name, r.max_residual, r.tolerance);
    }
    if reports.iter().all(|r| r.pass) {
        Ok(())
    } else {
        Err(Failure::ChecksFailed)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let p = load_params(&cli.common)?;
    let out = cli.common.out.as_deref();
    match cli.cmd {
        Cmd::Policy { x, h } => cmd_policy(p, x, h, &mut *open_out(out)?)?,
        Cmd::Boundaries { h_min, h_max, n, axis } => cmd_boundaries(p, h_min, h_max, n, &axis, &mut *open_out(out)?)?,
        Cmd::Sweep { axis, h, x_min, x_max, n_x } => cmd_sweep(p, &axis, h, x_min, x_max, n_x, &mut *open_out(out)?)?,
        Cmd::Simulate {
            x0,
            h0,
            seed,
            dt,
            horizon,
            paths,
            variant,
            record_stride,
            sample_death,
        } => {
            let base = SimConfig {
                dt,
                horizon,
                n_paths: paths,
                seed,
                variant: Variant::Full,
                record_stride,
                sample_death,
                keep_paths: false,
            };
            if variant == "all" {
                let out = out.ok_or_else(|| Failure::Config("--variant all writes three files and needs --out".into()))?;
                for v in Variant::ALL {
                    let mut w = open_out(Some(&variant_path(out, v)))?;
                    simulate_one(p, SimConfig { variant: v, ..base }, x0, h0, &mut *w)?;
                    w.flush()?;
                }
            } else {
                let v = Variant::parse(&variant).ok_or_else(|| {
                    Failure::Config(format!(
                        "unknown variant {variant:?}; expected full, no-insurance-no-drawdown, non-habit or all"
                    ))
                })?;
                simulate_one(p, SimConfig { variant: v, ..base }, x0, h0, &mut *open_out(out)?)?;
            }
        }
        Cmd::Verify => cmd_verify(p, &mut *open_out(out)?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Model(e) => eprintln!("error: {e}"),
                Failure::Config(m) => eprintln!("error: {m}"),
                Failure::Io(e) => eprintln!("error: {e}"),
                Failure::ChecksFailed => eprintln!("verification failed"),
            }
            ExitCode::from(f.code())
        }
    }
}
