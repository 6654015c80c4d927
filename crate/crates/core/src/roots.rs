//! Bracketed scalar root finding.

use crate::error::{Error, Result};

/// Brent's method on `[a, b]` given `f(a)` and `f(b)` of opposite sign (or
/// one of them zero). Stops when the bracket is narrower than `xtol`.
pub fn brent<F>(mut f: F, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64, xtol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return Err(Error::Bracket { t0: a, t1: b });
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
        if !fb.is_finite() {
            return Err(Error::NonFinite("root function"));
        }
    }
    Ok(b)
}

/// Root with the bracket side preserved: returns the bracket end on which
/// `f <= 0` after refining to `xtol`. Useful when the caller must not step
/// past the root.
pub fn bisect_left<F>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let flo = f(lo)?;
    let fhi = f(hi)?;
    if flo > 0.0 || fhi <= 0.0 {
        return Err(Error::Bracket { t0: lo, t1: hi });
    }
    let root = brent(&mut f, lo, hi, flo, fhi, xtol * 0.25)?;
    // tighten around the Brent estimate so the returned pair straddles the root
    let w = xtol.max(4.0 * f64::EPSILON * root.abs());
    let a = (root - w).max(lo);
    let b = (root + w).min(hi);
    if f(a)? <= 0.0 {
        lo = a;
    }
    if f(b)? > 0.0 {
        hi = b;
    }
    while hi - lo > xtol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cubic_root() {
        let f = |x: f64| Ok(x * x * x - 2.0);
        let r = brent(f, 0.0, 2.0, -2.0, 6.0, 1e-15).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
    }

    #[test]
    fn brent_rejects_missing_bracket() {
        let f = |x: f64| Ok(x * x + 1.0);
        assert!(matches!(brent(f, -1.0, 1.0, 2.0, 2.0, 1e-12), Err(Error::Bracket { .. })));
    }

    #[test]
    fn bisect_left_straddles_root() {
        let f = |t: f64| Ok(t - 2f64.sqrt());
        let (lo, hi) = bisect_left(f, 0.0, 3.0, 1e-13).unwrap();
        assert!(lo <= 2f64.sqrt() && hi > 2f64.sqrt() - 1e-16);
        assert!(hi - lo <= 1e-13);
    }
}
