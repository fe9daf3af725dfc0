//! Bracketed root finding for monotone scalar maps on the positive half-line.
//!
//! Every search works in `ln t`, since the unknowns here (dual points,
//! reference levels) span many orders of magnitude.

use crate::error::{Error, Result};

/// Stop once the bracket is this narrow in `ln t`, i.e. relative width.
pub const REL_TOL: f64 = 1e-12;
pub const MAX_ITER: usize = 200;

/// Root of `f` on `[lo, hi]` (both positive) by geometric bisection.
///
/// `f` must change sign on the bracket. An endpoint where `|f| <= slack` is
/// accepted as the root, which absorbs rounding when the target sits exactly
/// on a region seam.
pub fn bisect_log<F>(op: &'static str, mut f: F, lo: f64, hi: f64, slack: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::bracket(op, format!("bad bracket [{lo}, {hi}]")));
    }
    let flo = f(lo);
    let fhi = f(hi);
    if flo.is_nan() || fhi.is_nan() {
        return Err(Error::Numerical(format!("{op}: NaN at bracket end")));
    }
    if flo.abs() <= slack {
        return Ok(lo);
    }
    if fhi.abs() <= slack {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::bracket(
            op,
            format!("no sign change on [{lo:e}, {hi:e}]: f = {flo:e}, {fhi:e}"),
        ));
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let lo_negative = flo < 0.0;
    for _ in 0..MAX_ITER {
        if b - a <= REL_TOL {
            return Ok((0.5 * (a + b)).exp());
        }
        let m = 0.5 * (a + b);
        let fm = f(m.exp());
        if fm.is_nan() {
            return Err(Error::Numerical(format!("{op}: NaN inside bracket")));
        }
        if fm == 0.0 {
            return Ok(m.exp());
        }
        if (fm < 0.0) == lo_negative {
            a = m;
        } else {
            b = m;
        }
    }
    Err(Error::NoConvergence {
        op,
        iterations: MAX_ITER,
    })
}

/// Multiply `hi` by `factor` until `f(hi)` has the sign `target_negative`.
/// Returns the grown endpoint.
pub fn grow_upper<F>(op: &'static str, mut f: F, mut hi: f64, factor: f64, target_negative: bool) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    for _ in 0..MAX_ITER {
        let v = f(hi);
        if v.is_nan() {
            return Err(Error::Numerical(format!("{op}: NaN while growing bracket")));
        }
        if (v <= 0.0) == target_negative {
            return Ok(hi);
        }
        hi *= factor;
        if !hi.is_finite() {
            break;
        }
    }
    Err(Error::bracket(op, "upper bracket grew without a sign change"))
}

/// Newton's method in `ln t` safeguarded by the bracket `[lo, hi]`.
///
/// `fdf(t)` returns `(f(t), t f'(t))`, the value and the derivative with
/// respect to `ln t`. The caller asserts the sign pattern instead of paying
/// for endpoint evaluations: `f(lo) >= 0 >= f(hi)` when `decreasing`. Steps
/// leaving the bracket become bisection steps. Callers on hot paths use this
/// with a warm start and check the residual of the result themselves.
pub fn newton_log<F>(op: &'static str, mut fdf: F, lo: f64, hi: f64, guess: f64, decreasing: bool) -> Result<f64>
where
    F: FnMut(f64) -> (f64, f64),
{
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut u = if guess > lo && guess < hi { guess.ln() } else { 0.5 * (a + b) };
    for _ in 0..MAX_ITER {
        let (fu, dfu) = fdf(u.exp());
        if fu.is_nan() {
            return Err(Error::Numerical(format!("{op}: NaN inside bracket")));
        }
        if fu == 0.0 {
            return Ok(u.exp());
        }
        if (fu > 0.0) == decreasing {
            a = u;
        } else {
            b = u;
        }
        let newton = u - fu / dfu;
        let next = if dfu != 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if (next - u).abs() <= REL_TOL || b - a <= REL_TOL {
            return Ok(next.exp());
        }
        u = next;
    }
    Err(Error::NoConvergence {
        op,
        iterations: MAX_ITER,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisection_finds_cube_root() {
        let t = bisect_log("t", |t| t * t * t - 10.0, 1e-3, 1e3, 0.0).unwrap();
        assert!((t - 10f64.cbrt()).abs() < 1e-11 * t);
    }

    #[test]
    fn decreasing_map() {
        let t = bisect_log("t", |t| 1.0 / t - 4.0, 1e-6, 1e6, 0.0).unwrap();
        assert!((t - 0.25).abs() < 1e-12);
    }

    #[test]
    fn endpoint_slack() {
        let t = bisect_log("t", |t| t - 2.0 - 1e-15, 2.0, 5.0, 1e-12).unwrap();
        assert_eq!(t, 2.0);
    }

    #[test]
    fn missing_sign_change_is_an_error() {
        let err = bisect_log("t", |t| t + 1.0, 1.0, 2.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::Bracket { .. }));
    }

    #[test]
    fn grow_then_bisect() {
        let f = |t: f64| 1e8 - t;
        let hi = grow_upper("t", f, 1.0, 10.0, true).unwrap();
        assert!(hi >= 1e8);
        let t = bisect_log("t", f, 1.0, hi, 0.0).unwrap();
        assert!((t - 1e8).abs() < 1e-3);
    }

    #[test]
    fn newton_matches_bisection() {
        let f = |t: f64| t.powf(-1.3) + 0.2 * t.powf(-0.1) - 0.5;
        let fdf = |t: f64| (f(t), -1.3 * t.powf(-1.3) - 0.02 * t.powf(-0.1));
        let a = bisect_log("t", f, 1e-3, 1e6, 0.0).unwrap();
        for guess in [1e-2, 1.0, 5.0, 1e5] {
            let b = newton_log("t", fdf, 1e-3, 1e6, guess, true).unwrap();
            assert!((a - b).abs() < 1e-11 * a, "{a} {b}");
        }
    }
}
