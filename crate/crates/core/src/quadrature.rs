//! Adaptive Simpson integration.

use crate::{Error, Real, Result};

/// Integrates `f` over `[lower, upper]` to absolute tolerance `tol`.
///
/// Fails with [`Error::Quadrature`] if the recursion limit is hit before the
/// local error estimate drops below its share of the tolerance, or if the
/// integrand produces a non-finite value.
pub fn adaptive_simpson<T, F>(f: F, lower: T, upper: T, tol: T, max_depth: usize) -> Result<T>
where
    T: Real,
    F: Fn(T) -> T,
{
    let fail = || Error::Quadrature {
        lower: lower.as_f64(),
        upper: upper.as_f64(),
    };
    if lower == upper {
        return Ok(T::zero());
    }
    if !(lower.is_finite() && upper.is_finite()) {
        return Err(fail());
    }
    // Start from a coarse composite rule so that narrow features are seen.
    const PANELS: usize = 16;
    let width = (upper - lower) / T::of_usize(PANELS);
    let mut total = T::zero();
    for k in 0..PANELS {
        let a = lower + width * T::of_usize(k);
        let b = if k + 1 == PANELS { upper } else { a + width };
        let m = (a + b) / T::of(2.0);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        let whole = simpson(a, b, fa, fm, fb);
        let part = recurse(
            &f,
            a,
            b,
            fa,
            fm,
            fb,
            whole,
            tol / T::of_usize(PANELS),
            max_depth,
        )
        .ok_or_else(fail)?;
        total += part;
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(fail())
    }
}

#[inline]
fn simpson<T: Real>(a: T, b: T, fa: T, fm: T, fb: T) -> T {
    (b - a) / T::of(6.0) * (fa + T::of(4.0) * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<T: Real, F: Fn(T) -> T>(
    f: &F,
    a: T,
    b: T,
    fa: T,
    fm: T,
    fb: T,
    whole: T,
    tol: T,
    depth: usize,
) -> Option<T> {
    if !(fa.is_finite() && fm.is_finite() && fb.is_finite()) {
        return None;
    }
    let m = (a + b) / T::of(2.0);
    let lm = (a + m) / T::of(2.0);
    let rm = (m + b) / T::of(2.0);
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    // Halving the tolerance eventually asks for less than roundoff, and an
    // integrand that steps by ulps never settles; accept once neither the
    // values nor the abscissae can be resolved further.
    let eps = T::of(64.0) * T::epsilon();
    let floor = eps * (left.abs() + right.abs());
    let unresolvable = b - a <= eps * a.abs().max(b.abs()).max(T::one());
    if delta.abs() <= T::of(15.0) * tol || delta.abs() <= floor || unresolvable {
        return Some(left + right + delta / T::of(15.0));
    }
    if depth == 0 {
        return None;
    }
    let half = tol / T::of(2.0);
    Some(
        recurse(f, a, m, fa, flm, fm, left, half, depth - 1)?
            + recurse(f, m, b, fm, frm, fb, right, half, depth - 1)?,
    )
}
