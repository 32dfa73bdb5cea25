//! Analytic reference for plane-wave scattering by a sound-hard sphere:
//! spherical Bessel and Hankel functions, Legendre polynomials, the partial
//! wave series, and a Brent maximiser for the radius landscape.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// `(j_n(x), j_n'(x))` for `n = 0..=n_max`.
///
/// Uses Miller's downward recurrence normalised by `j_0 = sin x / x` when
/// `n_max > x`, otherwise the upward recurrence.
pub fn spherical_bessel_j(n_max: usize, x: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("spherical Bessel argument {x} must be positive")));
    }
    let mut j = vec![0.0; n_max + 2];
    let j0 = x.sin() / x;
    if (n_max as f64) < x {
        j[0] = j0;
        j[1] = x.sin() / (x * x) - x.cos() / x;
        for n in 1..=n_max {
            j[n + 1] = (2 * n + 1) as f64 / x * j[n] - j[n - 1];
        }
    } else {
        // start well above n_max so the seed error has decayed
        let start = n_max + 20 + x as usize + 4 * ((n_max as f64 + x).sqrt() as usize);
        let mut tmp = vec![0.0f64; start + 2];
        tmp[start] = 1e-300;
        for n in (1..=start).rev() {
            tmp[n - 1] = (2 * n + 1) as f64 / x * tmp[n] - tmp[n + 1];
            if tmp[n - 1].abs() > 1e250 {
                for v in tmp[n - 1..].iter_mut() {
                    *v *= 1e-250;
                }
            }
        }
        // normalise with the better-conditioned of j_0 and j_1
        let j1 = x.sin() / (x * x) - x.cos() / x;
        let scale = if j0.abs() >= j1.abs() { j0 / tmp[0] } else { j1 / tmp[1] };
        for n in 0..=n_max + 1 {
            j[n] = tmp[n] * scale;
        }
    }
    let mut d = vec![0.0; n_max + 1];
    for n in 0..=n_max {
        d[n] = if n == 0 {
            -j[1]
        } else {
            j[n - 1] - (n + 1) as f64 / x * j[n]
        };
    }
    j.truncate(n_max + 1);
    Ok((j, d))
}

/// `(y_n(x), y_n'(x))` for `n = 0..=n_max` by upward recurrence.
pub fn spherical_bessel_y(n_max: usize, x: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("spherical Bessel argument {x} must be positive")));
    }
    let mut y = vec![0.0; n_max + 2];
    y[0] = -x.cos() / x;
    y[1] = -x.cos() / (x * x) - x.sin() / x;
    for n in 1..=n_max {
        y[n + 1] = (2 * n + 1) as f64 / x * y[n] - y[n - 1];
        if !y[n + 1].is_finite() {
            return Err(Error::Domain(format!("y_{} overflows at x = {x}", n + 1)));
        }
    }
    let d = (0..=n_max)
        .map(|n| {
            if n == 0 {
                -y[1]
            } else {
                y[n - 1] - (n + 1) as f64 / x * y[n]
            }
        })
        .collect();
    y.truncate(n_max + 1);
    Ok((y, d))
}

/// `(h_n(x), h_n'(x))` with `h_n = j_n + i y_n`.
pub fn spherical_hankel1(n_max: usize, x: f64) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let (j, jd) = spherical_bessel_j(n_max, x)?;
    let (y, yd) = spherical_bessel_y(n_max, x)?;
    Ok((
        j.iter().zip(&y).map(|(&a, &b)| Complex64::new(a, b)).collect(),
        jd.iter().zip(&yd).map(|(&a, &b)| Complex64::new(a, b)).collect(),
    ))
}

/// Legendre polynomials `P_0(x)..P_n_max(x)`.
pub fn legendre_all(n_max: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; n_max + 1];
    p[0] = 1.0;
    if n_max >= 1 {
        p[1] = x;
    }
    for n in 1..n_max {
        p[n + 1] = ((2 * n + 1) as f64 * x * p[n] - n as f64 * p[n - 1]) / (n + 1) as f64;
    }
    p
}

pub fn legendre_p(n: usize, x: f64) -> f64 {
    legendre_all(n, x)[n]
}

/// Plane wave `e^{-ikz}` (travelling along `-z`) scattered by a sound-hard
/// sphere of radius `a` at the origin, observed at distance `r` and polar
/// angle `theta` from `+z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphereSeries {
    pub k: f64,
    pub a: f64,
    pub r: f64,
    pub theta: f64,
    pub n_max: usize,
}

impl SphereSeries {
    pub fn new(k: f64, a: f64, r: f64, theta: f64) -> Self {
        SphereSeries {
            k,
            a,
            r,
            theta,
            n_max: default_truncation(k * r),
        }
    }

    /// Total field `Σ iⁿ (2n+1) (j_n(kr) - A_n h_n(kr)) P_n(cos(θ - π))` with
    /// `A_n = j_n'(ka) / h_n'(ka)`.
    pub fn total_field(&self) -> Result<Complex64> {
        if !(self.r > self.a) {
            return Err(Error::Domain(format!(
                "observation radius {} must exceed the sphere radius {}",
                self.r, self.a
            )));
        }
        if !(self.k > 0.0 && self.a > 0.0) {
            return Err(Error::Domain("wavenumber and radius must be positive".into()));
        }
        let n = self.n_max;
        let (jr, _) = spherical_bessel_j(n, self.k * self.r)?;
        let (hr, _) = spherical_hankel1(n, self.k * self.r)?;
        let (_, jda) = spherical_bessel_j(n, self.k * self.a)?;
        let (_, hda) = spherical_hankel1(n, self.k * self.a)?;
        let p = legendre_all(n, (self.theta - std::f64::consts::PI).cos());
        let mut sum = Complex64::new(0.0, 0.0);
        let mut i_pow = Complex64::new(1.0, 0.0);
        for m in 0..=n {
            let coeff = jda[m] / hda[m];
            let term = i_pow * (2 * m + 1) as f64 * (jr[m] - coeff * hr[m]) * p[m];
            sum += term;
            i_pow *= Complex64::new(0.0, 1.0);
        }
        Ok(sum)
    }

    /// `|u|² / 2`.
    pub fn objective(&self) -> Result<f64> {
        Ok(0.5 * self.total_field()?.norm_sqr())
    }
}

/// `max(40, ceil(kr) + 30)`.
pub fn default_truncation(kr: f64) -> usize {
    40usize.max(kr.ceil() as usize + 30)
}

/// `J(a)` for the on-axis observer at height `z` (`θ = 0`).
pub fn sphere_objective(k: f64, a: f64, z: f64) -> Result<f64> {
    SphereSeries::new(k, a, z, 0.0).objective()
}

/// Brent's minimiser on `[lo, hi]` (golden section with parabolic steps).
/// Returns `(x, f(x), evaluations)`.
pub fn brent_minimize<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, f64, usize)> {
    if !(lo < hi) {
        return Err(Error::invalid(format!("bracket [{lo}, {hi}] is empty")));
    }
    const CGOLD: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (lo, hi);
    let mut x = a + CGOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for evals in (1..).take(max_iter) {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            return Ok((x, fx, evals));
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Err(Error::invalid("Brent minimisation did not converge"))
}

/// Local maximiser of `J(a)` on `[lo, hi]` nearest `start`: a grid scan
/// brackets the local maximum reached by ascending from `start`, then Brent
/// refines it to `tol` in `a`. Returns `(a*, J(a*))`.
pub fn brent_optimize_radius(k: f64, z: f64, lo: f64, hi: f64, start: f64, tol: f64) -> Result<(f64, f64)> {
    if !(lo < hi) || !(lo..=hi).contains(&start) {
        return Err(Error::invalid(format!(
            "start {start} must lie in a non-empty bracket [{lo}, {hi}]"
        )));
    }
    let j = |a: f64| sphere_objective(k, a, z);
    let step = (hi - lo) / 600.0;
    let mut a = start;
    let mut ja = j(a)?;
    // climb on the grid until the next sample is lower in both directions
    loop {
        let up = (a + step).min(hi);
        let down = (a - step).max(lo);
        let (ju, jd) = (j(up)?, j(down)?);
        if ju > ja && ju >= jd {
            a = up;
            ja = ju;
        } else if jd > ja {
            a = down;
            ja = jd;
        } else {
            break;
        }
    }
    let (blo, bhi) = ((a - step).max(lo), (a + step).min(hi));
    let (x, fx, _) = brent_minimize(|x| -j(x).unwrap_or(f64::NAN), blo, bhi, tol, 500)?;
    Ok((x, -fx))
}
