//! Spaces, metrics, domains and atomic measures.
//!
//! Torus points live in the fundamental cell `[-1/2, 1/2)^d`. Domains on the
//! torus are restricted to balls of radius `< 1/2` and cubes of side `<= 1`,
//! so each of them is identified with a subset of that cell around its
//! center.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::special;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    Euclidean,
    Torus,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Euclidean => "euclidean",
            Space::Torus => "torus",
        }
    }
}

/// Reduce a coordinate mod 1 into `[-1/2, 1/2)`.
#[inline]
pub fn wrap_coordinate(x: f64) -> f64 {
    let mut r = x - libm::floor(x + 0.5);
    if r >= 0.5 {
        r -= 1.0;
    }
    if r < -0.5 {
        r += 1.0;
    }
    r
}

pub fn wrap_in_place(x: &mut [f64]) {
    for c in x.iter_mut() {
        *c = wrap_coordinate(*c);
    }
}

fn check_finite(coords: &[f64], what: &'static str) -> Result<()> {
    if coords.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("coords", "dimension must be at least 1"));
        }
        check_finite(&coords, "point coordinates")?;
        Ok(Point(coords))
    }

    pub fn origin(dim: usize) -> Self {
        Point(vec![0.0; dim.max(1)])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A point of the flat torus, stored as its canonical representative.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusPoint(Vec<f64>);

impl TorusPoint {
    pub fn new(mut coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("coords", "dimension must be at least 1"));
        }
        check_finite(&coords, "torus point coordinates")?;
        wrap_in_place(&mut coords);
        Ok(TorusPoint(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Squared flat distance between canonical representatives.
///
/// The minimum over the `3^d` shifts `z ∈ {-1,0,1}^d` of `|x - y - z|²` splits
/// into independent per-coordinate minima, which is what this evaluates.
#[inline]
pub fn flat_distance_sq(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for (a, b) in x.iter().zip(y) {
        let diff = a - b;
        let best = (diff * diff).min((diff - 1.0) * (diff - 1.0)).min((diff + 1.0) * (diff + 1.0));
        s += best;
    }
    s
}

#[inline]
pub fn euclidean_distance_sq(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
pub fn distance(space: Space, x: &[f64], y: &[f64]) -> f64 {
    match space {
        Space::Euclidean => libm::sqrt(euclidean_distance_sq(x, y)),
        Space::Torus => libm::sqrt(flat_distance_sq(x, y)),
    }
}

pub fn flat_distance(x: &TorusPoint, y: &TorusPoint) -> Result<f64> {
    check_dim(x.dim(), y.dim())?;
    Ok(libm::sqrt(flat_distance_sq(x.coords(), y.coords())))
}

/// Displacement `x - center` expressed in the tagged space (canonical on the
/// torus).
#[inline]
pub fn displacement(space: Space, x: &[f64], center: &[f64], out: &mut [f64]) {
    for ((o, a), c) in out.iter_mut().zip(x).zip(center) {
        *o = match space {
            Space::Euclidean => a - c,
            Space::Torus => wrap_coordinate(a - c),
        };
    }
}

/// Volume of the unit ball of ℝᵈ.
pub fn unit_ball_volume(dim: usize) -> f64 {
    let h = dim as f64 / 2.0;
    libm::pow(core::f64::consts::PI, h) / special::gamma(h + 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Ball { center: Vec<f64>, radius: f64 },
    Cube { center: Vec<f64>, side: f64 },
}

/// A closed ball or axis-aligned cube in ℝᵈ or on 𝕋ᵈ.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    shape: Shape,
    space: Space,
}

impl Domain {
    pub fn ball(center: Vec<f64>, radius: f64, space: Space) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::invalid("center", "dimension must be at least 1"));
        }
        check_finite(&center, "ball center")?;
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid("radius", "must be positive and finite"));
        }
        let mut center = center;
        if space == Space::Torus {
            if radius >= 0.5 {
                return Err(Error::invalid("radius", "torus balls need radius < 1/2"));
            }
            wrap_in_place(&mut center);
        }
        Ok(Domain {
            shape: Shape::Ball { center, radius },
            space,
        })
    }

    pub fn cube(center: Vec<f64>, side: f64, space: Space) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::invalid("center", "dimension must be at least 1"));
        }
        check_finite(&center, "cube center")?;
        if !(side > 0.0) || !side.is_finite() {
            return Err(Error::invalid("side", "must be positive and finite"));
        }
        let mut center = center;
        if space == Space::Torus {
            if side > 1.0 {
                return Err(Error::invalid("side", "torus cubes need side <= 1"));
            }
            wrap_in_place(&mut center);
        }
        Ok(Domain {
            shape: Shape::Cube { center, side },
            space,
        })
    }

    /// Closed ball of radius `radius` centered at the origin of ℝᵈ.
    pub fn euclidean_ball(dim: usize, radius: f64) -> Result<Self> {
        Self::ball(vec![0.0; dim], radius, Space::Euclidean)
    }

    /// Cube `Q_L = [-L/2, L/2]^d` of ℝᵈ.
    pub fn euclidean_cube(dim: usize, side: f64) -> Result<Self> {
        Self::cube(vec![0.0; dim], side, Space::Euclidean)
    }

    /// The whole flat torus, as the unit cube of the torus.
    pub fn torus(dim: usize) -> Result<Self> {
        Self::cube(vec![0.0; dim], 1.0, Space::Torus)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn center(&self) -> &[f64] {
        match &self.shape {
            Shape::Ball { center, .. } | Shape::Cube { center, .. } => center,
        }
    }

    pub fn dim(&self) -> usize {
        self.center().len()
    }

    pub fn is_ball(&self) -> bool {
        matches!(self.shape, Shape::Ball { .. })
    }

    /// Ball radius, or half the side for cubes.
    pub fn inradius(&self) -> f64 {
        match self.shape {
            Shape::Ball { radius, .. } => radius,
            Shape::Cube { side, .. } => side / 2.0,
        }
    }

    pub fn circumradius(&self) -> f64 {
        match self.shape {
            Shape::Ball { radius, .. } => radius,
            Shape::Cube { side, .. } => side * libm::sqrt(self.dim() as f64) / 2.0,
        }
    }

    pub fn volume(&self) -> f64 {
        let d = self.dim();
        match self.shape {
            Shape::Ball { radius, .. } => unit_ball_volume(d) * libm::pow(radius, d as f64),
            Shape::Cube { side, .. } => libm::pow(side, d as f64),
        }
    }

    /// Diameter in the metric of the tagged space.
    pub fn diameter(&self) -> f64 {
        let d = self.dim() as f64;
        match (&self.shape, self.space) {
            (Shape::Ball { radius, .. }, _) => 2.0 * radius,
            (Shape::Cube { side, .. }, Space::Euclidean) => side * libm::sqrt(d),
            (Shape::Cube { side, .. }, Space::Torus) => side.min(0.5) * libm::sqrt(d),
        }
    }

    /// Closed membership.
    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        match (&self.shape, self.space) {
            (Shape::Ball { center, radius }, Space::Euclidean) => euclidean_distance_sq(x, center) <= radius * radius,
            (Shape::Ball { center, radius }, Space::Torus) => flat_distance_sq(x, center) <= radius * radius,
            (Shape::Cube { center, side }, space) => {
                let h = side / 2.0;
                x.iter().zip(center).all(|(a, c)| {
                    let diff = match space {
                        Space::Euclidean => a - c,
                        Space::Torus => wrap_coordinate(a - c),
                    };
                    diff.abs() <= h
                })
            }
        }
    }

    /// Signed distance to the boundary: negative inside, positive outside.
    #[inline]
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match (&self.shape, self.space) {
            (Shape::Ball { center, radius }, Space::Euclidean) => libm::sqrt(euclidean_distance_sq(x, center)) - radius,
            (Shape::Ball { center, radius }, Space::Torus) => libm::sqrt(flat_distance_sq(x, center)) - radius,
            (Shape::Cube { center, side }, space) => {
                let h = side / 2.0;
                let mut outside = 0.0;
                let mut inside = f64::NEG_INFINITY;
                for (a, c) in x.iter().zip(center) {
                    let diff = match space {
                        Space::Euclidean => a - c,
                        Space::Torus => wrap_coordinate(a - c),
                    };
                    let q = diff.abs() - h;
                    if q > 0.0 {
                        outside += q * q;
                    }
                    inside = inside.max(q);
                }
                if outside > 0.0 {
                    libm::sqrt(outside)
                } else {
                    inside
                }
            }
        }
    }

    /// Nearest boundary point to `x`, written into `out`. For a point at the
    /// exact center of a ball the direction of the first axis is used.
    pub fn project_to_boundary(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let mut disp = vec![0.0; d];
        displacement(self.space, x, self.center(), &mut disp);
        match &self.shape {
            Shape::Ball { center, radius } => {
                let norm = libm::sqrt(disp.iter().map(|v| v * v).sum::<f64>());
                if norm == 0.0 {
                    disp[0] = 1.0;
                    for v in disp.iter_mut().skip(1) {
                        *v = 0.0;
                    }
                } else {
                    for v in disp.iter_mut() {
                        *v /= norm;
                    }
                }
                for i in 0..d {
                    out[i] = center[i] + radius * disp[i];
                }
            }
            Shape::Cube { center, side } => {
                let h = side / 2.0;
                let inside = disp.iter().all(|v| v.abs() <= h);
                if inside {
                    // Push the coordinate closest to a face onto it.
                    let mut best = 0;
                    let mut best_gap = f64::INFINITY;
                    for (i, v) in disp.iter().enumerate() {
                        let gap = h - v.abs();
                        if gap < best_gap {
                            best_gap = gap;
                            best = i;
                        }
                    }
                    disp[best] = if disp[best] >= 0.0 { h } else { -h };
                } else {
                    for v in disp.iter_mut() {
                        *v = v.clamp(-h, h);
                    }
                }
                for i in 0..d {
                    out[i] = center[i] + disp[i];
                }
            }
        }
        if self.space == Space::Torus {
            wrap_in_place(out);
        }
    }

    /// Scaled copy `rho * D` (center and size both scaled).
    pub fn dilated(&self, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::invalid("rho", "must be positive"));
        }
        let center: Vec<f64> = self.center().iter().map(|c| c * rho).collect();
        match self.shape {
            Shape::Ball { radius, .. } => Domain::ball(center, radius * rho, self.space),
            Shape::Cube { side, .. } => Domain::cube(center, side * rho, self.space),
        }
    }

    pub fn with_center(&self, center: Vec<f64>) -> Result<Self> {
        check_dim(self.dim(), center.len())?;
        match self.shape {
            Shape::Ball { radius, .. } => Domain::ball(center, radius, self.space),
            Shape::Cube { side, .. } => Domain::cube(center, side, self.space),
        }
    }

    /// Side of the axis-aligned bounding box.
    pub fn bounding_side(&self) -> f64 {
        match self.shape {
            Shape::Ball { radius, .. } => 2.0 * radius,
            Shape::Cube { side, .. } => side,
        }
    }
}

/// Finite atomic measure `Σ m_i δ_{x_i}`.
///
/// Positions are stored row-major in one buffer. On the torus every position
/// is kept canonical.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedAtoms {
    dim: usize,
    space: Space,
    positions: Vec<f64>,
    masses: Vec<f64>,
    total_mass: f64,
    compensation: f64,
}

impl WeightedAtoms {
    pub fn empty(dim: usize, space: Space) -> Self {
        WeightedAtoms {
            dim,
            space,
            positions: Vec::new(),
            masses: Vec::new(),
            total_mass: 0.0,
            compensation: 0.0,
        }
    }

    pub fn with_capacity(dim: usize, space: Space, atoms: usize) -> Self {
        let mut m = Self::empty(dim, space);
        m.positions.reserve(atoms * dim);
        m.masses.reserve(atoms);
        m
    }

    pub fn from_parts(dim: usize, space: Space, mut positions: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        if positions.len() != masses.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: masses.len() * dim,
                found: positions.len(),
            });
        }
        check_finite(&positions, "atom positions")?;
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::invalid("masses", "must be finite and nonnegative"));
        }
        if space == Space::Torus {
            wrap_in_place(&mut positions);
        }
        let mut out = WeightedAtoms {
            dim,
            space,
            positions,
            masses,
            total_mass: 0.0,
            compensation: 0.0,
        };
        out.recompute_total();
        Ok(out)
    }

    /// Single Dirac mass.
    pub fn dirac(position: Vec<f64>, mass: f64, space: Space) -> Result<Self> {
        let d = position.len();
        Self::from_parts(d, space, position, vec![mass])
    }

    fn recompute_total(&mut self) {
        let (s, c) = neumaier_sum(self.masses.iter().copied());
        self.total_mass = s + c;
        self.compensation = 0.0;
    }

    #[inline]
    fn add_mass(&mut self, m: f64) {
        let t = self.total_mass + m;
        if self.total_mass.abs() >= m.abs() {
            self.compensation += (self.total_mass - t) + m;
        } else {
            self.compensation += (m - t) + self.total_mass;
        }
        self.total_mass = t;
    }

    /// Append an atom. Torus positions are canonicalized.
    pub fn push(&mut self, position: &[f64], mass: f64) -> Result<()> {
        check_dim(self.dim, position.len())?;
        check_finite(position, "atom position")?;
        if !(mass.is_finite() && mass >= 0.0) {
            return Err(Error::invalid("mass", "must be finite and nonnegative"));
        }
        self.push_unchecked(position, mass);
        Ok(())
    }

    #[inline]
    pub(crate) fn push_unchecked(&mut self, position: &[f64], mass: f64) {
        let start = self.positions.len();
        self.positions.extend_from_slice(position);
        if self.space == Space::Torus {
            wrap_in_place(&mut self.positions[start..]);
        }
        self.masses.push(mass);
        self.add_mass(mass);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass + self.compensation
    }

    #[inline]
    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.positions.chunks_exact(self.dim).zip(self.masses.iter().copied())
    }

    /// `a · μ`.
    pub fn scaled(&self, a: f64) -> Result<Self> {
        if !(a.is_finite() && a >= 0.0) {
            return Err(Error::invalid("a", "must be finite and nonnegative"));
        }
        let masses = self.masses.iter().map(|m| m * a).collect();
        Self::from_parts(self.dim, self.space, self.positions.clone(), masses)
    }

    /// `μ + ν` as the concatenation of atoms.
    pub fn concat(&self, other: &WeightedAtoms) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        if self.space != other.space {
            return Err(Error::SpaceMismatch {
                expected: self.space.name(),
            });
        }
        let mut positions = self.positions.clone();
        positions.extend_from_slice(&other.positions);
        let mut masses = self.masses.clone();
        masses.extend_from_slice(&other.masses);
        Self::from_parts(self.dim, self.space, positions, masses)
    }

    /// Copy without atoms of zero mass.
    pub fn without_zero_mass(&self) -> Self {
        let mut out = Self::with_capacity(self.dim, self.space, self.len());
        for (x, m) in self.iter() {
            if m > 0.0 {
                out.push_unchecked(x, m);
            }
        }
        out
    }

    /// Merge consecutive runs of `stride` atoms into one atom located at the
    /// first position of the run and carrying the run's mass.
    pub fn coarsened(&self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("stride", "must be at least 1"));
        }
        let mut out = Self::with_capacity(self.dim, self.space, self.len() / stride + 1);
        let mut i = 0;
        while i < self.len() {
            let end = (i + stride).min(self.len());
            let m: f64 = self.masses[i..end].iter().sum();
            out.push_unchecked(self.position(i), m);
            i = end;
        }
        Ok(out)
    }
}

/// Compensated sum; returns `(sum, compensation)`.
pub(crate) fn neumaier_sum(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    (s, c)
}

/// `dil_ρ μ (A) = μ(A/ρ)`: positions scaled by ρ, masses unchanged.
pub fn dilate_measure(mu: &WeightedAtoms, rho: f64) -> Result<WeightedAtoms> {
    if mu.space() != Space::Euclidean {
        return Err(Error::SpaceMismatch { expected: "euclidean" });
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::invalid("rho", "must be positive and finite"));
    }
    let positions = mu.positions().iter().map(|x| x * rho).collect();
    let mut out = WeightedAtoms::from_parts(mu.dim(), mu.space(), positions, mu.masses().to_vec())?;
    out.total_mass = mu.total_mass;
    out.compensation = mu.compensation;
    Ok(out)
}

/// `trans_x μ (A) = μ(A - x)`; torus results are re-canonicalized.
pub fn translate_measure(mu: &WeightedAtoms, shift: &[f64]) -> Result<WeightedAtoms> {
    check_dim(mu.dim(), shift.len())?;
    check_finite(shift, "translation")?;
    let d = mu.dim();
    let positions = mu
        .positions()
        .iter()
        .enumerate()
        .map(|(k, x)| x + shift[k % d])
        .collect();
    let mut out = WeightedAtoms::from_parts(d, mu.space(), positions, mu.masses().to_vec())?;
    out.total_mass = mu.total_mass;
    out.compensation = mu.compensation;
    Ok(out)
}

/// `μ ↾ Ω`, closed membership.
pub fn restrict_measure(mu: &WeightedAtoms, domain: &Domain) -> Result<WeightedAtoms> {
    check_dim(mu.dim(), domain.dim())?;
    if mu.space() != domain.space() {
        return Err(Error::SpaceMismatch {
            expected: domain.space().name(),
        });
    }
    let mut out = WeightedAtoms::with_capacity(mu.dim(), mu.space(), mu.len());
    for (x, m) in mu.iter() {
        if domain.contains(x) {
            out.push_unchecked(x, m);
        }
    }
    Ok(out)
}

/// Cell-center grid standing in for the Lebesgue measure on a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDiscretization {
    pub atoms: WeightedAtoms,
    /// Volume of one grid cell before rescaling.
    pub cell_volume: f64,
    /// Side of one grid cell.
    pub cell_side: f64,
    /// `|Ω|` minus the volume of the kept cells, before rescaling.
    pub covered_deficit: f64,
}

/// Regular grid of `n_per_axis^d` cell centers over the bounding box; the
/// centers inside Ω are kept with equal masses summing to `|Ω|`.
pub fn uniform_discretization(domain: &Domain, n_per_axis: usize) -> Result<GridDiscretization> {
    if n_per_axis == 0 {
        return Err(Error::invalid("n_per_axis", "must be at least 1"));
    }
    let d = domain.dim();
    let side = domain.bounding_side();
    let h = side / n_per_axis as f64;
    let cell_volume = libm::pow(h, d as f64);
    let total_cells = n_per_axis
        .checked_pow(d as u32)
        .ok_or_else(|| Error::invalid("n_per_axis", "grid too large"))?;
    let center = domain.center();
    let mut positions = Vec::new();
    let mut index = vec![0usize; d];
    let mut x = vec![0.0; d];
    for _ in 0..total_cells {
        for k in 0..d {
            x[k] = center[k] - side / 2.0 + (index[k] as f64 + 0.5) * h;
        }
        if domain.contains(&x) {
            positions.extend_from_slice(&x);
        }
        for k in 0..d {
            index[k] += 1;
            if index[k] < n_per_axis {
                break;
            }
            index[k] = 0;
        }
    }
    let count = positions.len() / d;
    if count == 0 {
        return Err(Error::Degenerate("grid has no cell center inside the domain".into()));
    }
    let volume = domain.volume();
    let covered = cell_volume * count as f64;
    let masses = vec![volume / count as f64; count];
    let mut atoms = WeightedAtoms::from_parts(d, domain.space(), positions, masses)?;
    atoms.total_mass = volume;
    atoms.compensation = 0.0;
    Ok(GridDiscretization {
        atoms,
        cell_volume,
        cell_side: h,
        covered_deficit: volume - covered,
    })
}
