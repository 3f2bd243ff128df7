//! Fourier coefficients of torus measures and negative Sobolev norms.
//!
//! Transforms use `μ̂(ξ) = Σ m_k exp(-2πi ξ·x_k)` with integer `ξ`. The
//! normalized ball transform `χ̂_{D_ℓ}(ξ)/|D_ℓ|` is the radial function
//! `Γ(ν+1)(2/s)^ν J_ν(s)` at `s = 2πℓ|ξ|`, `ν = d/2`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{Space, WeightedAtoms};
use crate::special::normalized_bessel;

/// Normalized transform of the ball of radius `ℓ`; equals 1 at `ξ = 0`.
pub fn ball_indicator_fourier(xi: &[f64], l: f64, d: usize) -> Complex64 {
    let norm = libm::sqrt(xi.iter().map(|x| x * x).sum::<f64>());
    Complex64::new(normalized_bessel(d as f64 / 2.0, 2.0 * PI * l * norm), 0.0)
}

/// Coefficients on the cube `{-M..M}^d`, first coordinate fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierTable {
    dim: usize,
    cutoff: usize,
    values: Vec<Complex64>,
}

impl FourierTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    fn side(&self) -> usize {
        2 * self.cutoff + 1
    }

    pub fn index_of(&self, xi: &[i64]) -> Option<usize> {
        if xi.len() != self.dim {
            return None;
        }
        let m = self.cutoff as i64;
        let mut idx = 0usize;
        let mut stride = 1usize;
        for &k in xi {
            if k < -m || k > m {
                return None;
            }
            idx += (k + m) as usize * stride;
            stride *= self.side();
        }
        Some(idx)
    }

    pub fn frequency(&self, mut idx: usize, out: &mut [i64]) {
        let side = self.side();
        for o in out.iter_mut().take(self.dim) {
            *o = (idx % side) as i64 - self.cutoff as i64;
            idx /= side;
        }
    }

    pub fn get(&self, xi: &[i64]) -> Option<Complex64> {
        self.index_of(xi).map(|i| self.values[i])
    }

    /// `(ξ, μ̂(ξ))` pairs in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<i64>, Complex64)> + '_ {
        self.values.iter().enumerate().map(move |(i, &v)| {
            let mut xi = vec![0i64; self.dim];
            self.frequency(i, &mut xi);
            (xi, v)
        })
    }

    /// Trigonometric polynomial `Σ μ̂(ξ) exp(2πi ξ·x)`.
    pub fn evaluate(&self, x: &[f64]) -> Complex64 {
        let mut xi = vec![0i64; self.dim];
        let mut s = Complex64::new(0.0, 0.0);
        for (i, &v) in self.values.iter().enumerate() {
            self.frequency(i, &mut xi);
            let phase: f64 = xi.iter().zip(x).map(|(&k, &y)| k as f64 * y).sum();
            s += v * Complex64::from_polar(1.0, 2.0 * PI * phase);
        }
        s
    }
}

/// Direct sums over atoms for every `ξ ∈ {-M..M}^d`.
pub fn fourier_coefficients(mu: &WeightedAtoms, cutoff: usize) -> Result<FourierTable> {
    if cutoff < 1 {
        return Err(Error::invalid("cutoff", "must be at least 1"));
    }
    if mu.space() != Space::Torus {
        return Err(Error::SpaceMismatch { expected: "torus" });
    }
    let d = mu.dim();
    let side = 2 * cutoff + 1;
    let len = side
        .checked_pow(d as u32)
        .ok_or_else(|| Error::invalid("cutoff", "table too large"))?;
    let mut values = vec![Complex64::new(0.0, 0.0); len];
    // Per-axis phase factors exp(-2πi k x_a), k = -M..M.
    let mut axis = vec![Complex64::new(0.0, 0.0); d * side];
    let mut partial = vec![Complex64::new(0.0, 0.0); len];
    for (x, m) in mu.iter() {
        if m == 0.0 {
            continue;
        }
        for a in 0..d {
            for k in 0..side {
                let f = k as f64 - cutoff as f64;
                axis[a * side + k] = Complex64::from_polar(1.0, -2.0 * PI * f * x[a]);
            }
        }
        // Outer product built one axis at a time.
        partial[0] = Complex64::new(m, 0.0);
        let mut filled = 1usize;
        for a in 0..d {
            for k in (0..side).rev() {
                let f = axis[a * side + k];
                for t in 0..filled {
                    partial[k * filled + t] = partial[t] * f;
                }
            }
            filled *= side;
        }
        for (v, p) in values.iter_mut().zip(&partial) {
            *v += p;
        }
    }
    Ok(FourierTable {
        dim: d,
        cutoff,
        values,
    })
}

/// Coefficients of `ν_ℓ = μ * χ_ℓ * χ_ℓ` with `χ_ℓ` the normalized ball
/// indicator.
pub fn smoothed_coefficients(table: &FourierTable, l: f64) -> Result<FourierTable> {
    if !(l > 0.0 && l < 0.5) {
        return Err(Error::invalid("l", "must lie in (0, 1/2)"));
    }
    let mut out = table.clone();
    let mut xi = vec![0i64; table.dim];
    let mut xf = vec![0.0; table.dim];
    for (i, v) in out.values.iter_mut().enumerate() {
        table.frequency(i, &mut xi);
        for (f, &k) in xf.iter_mut().zip(&xi) {
            *f = k as f64;
        }
        let m = ball_indicator_fourier(&xf, l, table.dim).re;
        *v *= m * m;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevBound {
    /// `sqrt(Σ_{0<|ξ|∞≤M} |μ̂(ξ)|² / |2πξ|^{2q})`.
    pub value: f64,
    pub partial_sum: f64,
    /// Bound on the neglected part of the squared sum; infinite when
    /// `2q ≤ d`.
    pub tail_bound: f64,
    /// `sqrt(partial_sum + tail_bound)`.
    pub upper: f64,
}

/// `‖Δ^{-q/2}(μ - μ(T^d)·Leb)‖_{L²}` truncated at `M`.
///
/// The tail uses `|μ̂(ξ)| ≤ μ(T^d)` and shells `|ξ|∞ = k` holding at most
/// `2d(3k)^{d-1}` frequencies.
pub fn sobolev_upper_bound(mu: &WeightedAtoms, q: f64, cutoff: usize) -> Result<SobolevBound> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::invalid("q", "must be positive"));
    }
    let table = fourier_coefficients(mu, cutoff)?;
    Ok(sobolev_from_table(&table, q, mu.total_mass()))
}

pub(crate) fn sobolev_from_table(table: &FourierTable, q: f64, mass: f64) -> SobolevBound {
    let d = table.dim;
    let mut xi = vec![0i64; d];
    let mut partial = 0.0;
    for (i, v) in table.values.iter().enumerate() {
        table.frequency(i, &mut xi);
        let n2: f64 = xi.iter().map(|&k| (k * k) as f64).sum();
        if n2 == 0.0 {
            continue;
        }
        partial += v.norm_sqr() / libm::pow(4.0 * PI * PI * n2, q);
    }
    let df = d as f64;
    let tail = if 2.0 * q > df {
        let m = table.cutoff as f64;
        mass * mass * libm::pow(2.0 * PI, -2.0 * q) * 2.0 * df * libm::pow(3.0, df - 1.0) * libm::pow(m, df - 2.0 * q)
            / (2.0 * q - df)
    } else {
        f64::INFINITY
    };
    SobolevBound {
        value: libm::sqrt(partial),
        partial_sum: partial,
        tail_bound: tail,
        upper: libm::sqrt(partial + tail),
    }
}
