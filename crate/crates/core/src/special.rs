//! Special functions: Gamma, Bessel functions of the first kind, the
//! regularized incomplete beta function and the normal law.

use core::f64::consts::{PI, SQRT_2};

pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Power series `J_ν(x) = Σ (-1)^k (x/2)^{2k+ν} / (k! Γ(k+ν+1))`.
///
/// Accurate for moderate `x`; for large arguments cancellation sets in and
/// [`bessel_j`] should be used instead.
pub fn bessel_j_series(nu: f64, x: f64) -> f64 {
    if x == 0.0 {
        return if nu == 0.0 { 1.0 } else { 0.0 };
    }
    let half = x / 2.0;
    let mut term = libm::pow(half, nu) / gamma(nu + 1.0);
    let mut sum = term;
    let q = -half * half;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= q / (k * (k + nu));
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() && k > half {
            break;
        }
        if k > 500.0 {
            break;
        }
    }
    sum
}

/// `J_ν(x)` for `ν` a nonnegative integer or half-integer and `x ≥ 0`.
///
/// Integer orders go through `libm::jn`. Half-integer orders use the closed
/// form of `J_{1/2}` and `J_{3/2}` with upward recurrence, which is stable once
/// `x > ν`; below that the power series is used.
pub fn bessel_j(nu: f64, x: f64) -> f64 {
    let x = x.abs();
    let twice = 2.0 * nu;
    debug_assert!(libm::round(twice) == twice && nu >= 0.0);
    if libm::round(nu) == nu {
        return libm::jn(nu as i32, x);
    }
    if x == 0.0 {
        return 0.0;
    }
    if x <= nu.max(1.0) {
        return bessel_j_series(nu, x);
    }
    let scale = libm::sqrt(2.0 / (PI * x));
    let (s, c) = (libm::sin(x), libm::cos(x));
    let mut prev = scale * s; // J_{1/2}
    if nu == 0.5 {
        return prev;
    }
    let mut cur = scale * (s / x - c); // J_{3/2}
    let mut order = 1.5;
    while order < nu {
        let next = 2.0 * order / x * cur - prev;
        prev = cur;
        cur = next;
        order += 1.0;
    }
    cur
}

/// `Γ(ν+1) (2/s)^ν J_ν(s)`, equal to 1 at `s = 0`.
pub fn normalized_bessel(nu: f64, s: f64) -> f64 {
    let s = s.abs();
    if s < 2.0 {
        // Series of the normalized function avoids the 0/0 at the origin.
        let q = -(s / 2.0) * (s / 2.0);
        let mut term = 1.0f64;
        let mut sum = 1.0;
        let mut k = 0.0;
        while term.abs() > 1e-18 {
            k += 1.0;
            term *= q / (k * (k + nu));
            sum += term;
        }
        return sum;
    }
    libm::exp(ln_gamma(nu + 1.0) + nu * libm::log(2.0 / s)) * bessel_j(nu, s)
}

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

// Lentz evaluation of the continued fraction for I_x(a, b).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=400 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// Upper tail `P(T > t)` of Student's t law with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    let tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}
