//! Truncated lattice Hilbert space: grids, states, the position/momentum
//! transform, position observables and weighted norms.
//!
//! The box is periodic with `N` points per axis at spacing `h`, positions
//! symmetric about the origin. The dual grid covers `[-π/h, π/h)`. The lattice
//! is a stand-in for the continuum models; identifying the spacing `h` with a
//! physical length is a modelling choice of the caller (all shipped
//! configurations use `h = 1`).

use std::sync::Arc;

use num_complex::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fft::transform_nd;
use crate::scalar::Scalar;

/// Relative position mass tolerated outside the guard region.
pub const GUARD_MASS_LIMIT: f64 = 1e-10;

/// Periodic position grid with its dual momentum grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid<F> {
    dimension: usize,
    points: usize,
    spacing: F,
    guard_fraction: F,
}

impl<F: Scalar> Grid<F> {
    /// `points` must be a power of two; `spacing > 0`.
    pub fn new(dimension: usize, points: usize, spacing: F) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidGrid("dimension must be positive".into()));
        }
        if points < 4 || !points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two ≥ 4, got {points}"
            )));
        }
        if spacing <= F::zero() {
            return Err(Error::InvalidGrid("spacing must be positive".into()));
        }
        Ok(Grid { dimension, points, spacing, guard_fraction: F::lit(0.15) })
    }

    pub fn with_guard_fraction(mut self, guard_fraction: F) -> Result<Self> {
        if guard_fraction <= F::zero() || guard_fraction >= F::one() {
            return Err(Error::InvalidGrid("guard fraction must lie in (0,1)".into()));
        }
        self.guard_fraction = guard_fraction;
        Ok(self)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> F {
        self.spacing
    }

    pub fn guard_fraction(&self) -> F {
        self.guard_fraction
    }

    /// Total number of lattice sites `N^d`.
    pub fn site_count(&self) -> usize {
        self.points.pow(self.dimension as u32)
    }

    /// Momentum spacing `2π/(N h)`.
    pub fn momentum_step(&self) -> F {
        F::lit(2.0) * F::PI() / (F::lit(self.points as f64) * self.spacing)
    }

    /// Half box length `N h / 2`.
    pub fn half_length(&self) -> F {
        F::lit(self.points as f64 / 2.0) * self.spacing
    }

    /// Largest |x|∞ still inside the guard region.
    pub fn guard_limit(&self) -> F {
        (F::one() - self.guard_fraction) * self.half_length()
    }

    /// Maximum |p| per axis on the dual grid.
    pub fn momentum_max(&self) -> F {
        F::PI() / self.spacing
    }

    /// Position coordinate for per-axis index `k`.
    pub fn axis_position(&self, k: usize) -> F {
        (F::lit(k as f64) - F::lit(self.points as f64 / 2.0)) * self.spacing
    }

    /// Momentum coordinate for per-axis index `m`.
    pub fn axis_momentum(&self, m: usize) -> F {
        (F::lit(m as f64) - F::lit(self.points as f64 / 2.0)) * self.momentum_step()
    }

    /// Per-axis index of flat site index `flat` along `axis`.
    pub fn axis_index(&self, flat: usize, axis: usize) -> usize {
        let stride = self.points.pow((self.dimension - 1 - axis) as u32);
        (flat / stride) % self.points
    }

    /// Fills `out` with the position coordinates of a flat site index.
    pub fn position_at(&self, flat: usize, out: &mut [F]) {
        for axis in 0..self.dimension {
            out[axis] = self.axis_position(self.axis_index(flat, axis));
        }
    }

    /// Fills `out` with the momentum coordinates of a flat site index.
    pub fn momentum_at(&self, flat: usize, out: &mut [F]) {
        for axis in 0..self.dimension {
            out[axis] = self.axis_momentum(self.axis_index(flat, axis));
        }
    }

    /// Flat index of the grid momentum bin nearest to `p` on a 1D grid.
    pub fn momentum_bin(&self, p: F) -> usize {
        let idx = (p / self.momentum_step()).round() + F::lit(self.points as f64 / 2.0);
        let idx = idx.to_f64().unwrap_or(0.0);
        (idx.max(0.0) as usize).min(self.points - 1)
    }
}

/// Which basis the amplitude array is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Representation {
    Position,
    Momentum,
}

impl Representation {
    fn name(self) -> &'static str {
        match self {
            Representation::Position => "position",
            Representation::Momentum => "momentum",
        }
    }
}

/// Complex amplitude array over a grid, possibly with internal components.
///
/// Layout is component-major: `data[c * sites + flat]`.
#[derive(Debug, Clone)]
pub struct State<F: Scalar> {
    grid: Arc<Grid<F>>,
    components: usize,
    rep: Representation,
    data: Vec<Complex<F>>,
}

impl<F: Scalar> State<F> {
    pub fn zeros(grid: Arc<Grid<F>>, components: usize, rep: Representation) -> Self {
        let len = components * grid.site_count();
        State { grid, components, rep, data: vec![Complex::new(F::zero(), F::zero()); len] }
    }

    /// Builds a state by evaluating `f(coords, component)` at every site of the
    /// given representation.
    pub fn from_fn(
        grid: Arc<Grid<F>>,
        components: usize,
        rep: Representation,
        mut f: impl FnMut(&[F], usize) -> Complex<F>,
    ) -> Self {
        let sites = grid.site_count();
        let mut data = Vec::with_capacity(components * sites);
        let mut coords = vec![F::zero(); grid.dimension()];
        for c in 0..components {
            for flat in 0..sites {
                match rep {
                    Representation::Position => grid.position_at(flat, &mut coords),
                    Representation::Momentum => grid.momentum_at(flat, &mut coords),
                }
                data.push(f(&coords, c));
            }
        }
        State { grid, components, rep, data }
    }

    pub fn grid(&self) -> &Arc<Grid<F>> {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn rep(&self) -> Representation {
        self.rep
    }

    pub fn data(&self) -> &[Complex<F>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<F>] {
        &mut self.data
    }

    /// Amplitude of component `c` at flat site `flat`.
    pub fn amp(&self, c: usize, flat: usize) -> Complex<F> {
        self.data[c * self.grid.site_count() + flat]
    }

    fn volume_weight(&self) -> F {
        let step = match self.rep {
            Representation::Position => self.grid.spacing(),
            Representation::Momentum => self.grid.momentum_step(),
        };
        step.powi(self.grid.dimension() as i32)
    }

    /// Unitary transform to the momentum representation.
    pub fn to_momentum(&self) -> Result<State<F>> {
        if self.rep != Representation::Position {
            return Err(Error::Representation { expected: "position", found: self.rep.name() });
        }
        let mut out = self.clone();
        out.transform_in_place(true);
        Ok(out)
    }

    /// Unitary transform to the position representation.
    pub fn to_position(&self) -> Result<State<F>> {
        if self.rep != Representation::Momentum {
            return Err(Error::Representation { expected: "momentum", found: self.rep.name() });
        }
        let mut out = self.clone();
        out.transform_in_place(false);
        Ok(out)
    }

    /// Returns this state expressed in `rep`, transforming if necessary.
    pub fn to_rep(&self, rep: Representation) -> State<F> {
        if self.rep == rep {
            return self.clone();
        }
        let mut out = self.clone();
        out.transform_in_place(rep == Representation::Momentum);
        out
    }

    /// In-place variant of `to_rep` avoiding a copy when already there.
    pub fn make_rep(&mut self, rep: Representation) {
        if self.rep != rep {
            self.transform_in_place(rep == Representation::Momentum);
        }
    }

    fn transform_in_place(&mut self, forward: bool) {
        let sites = self.grid.site_count();
        let n = self.grid.points();
        let d = self.grid.dimension();
        let h = self.grid.spacing();
        for c in 0..self.components {
            transform_nd(&mut self.data[c * sites..(c + 1) * sites], d, n, h, forward);
        }
        self.rep = if forward { Representation::Momentum } else { Representation::Position };
    }

    pub fn norm_sq(&self) -> F {
        let w = self.volume_weight();
        let mut acc = F::zero();
        for v in &self.data {
            acc = acc + v.norm_sqr();
        }
        acc * w
    }

    pub fn norm(&self) -> F {
        self.norm_sq().sqrt()
    }

    /// Sesquilinear inner product, conjugate-linear in the first slot.
    pub fn inner(&self, other: &State<F>) -> Result<Complex<F>> {
        if self.grid != other.grid || self.components != other.components || self.rep != other.rep {
            return Err(Error::GridMismatch);
        }
        let w = self.volume_weight();
        let mut acc = Complex::new(F::zero(), F::zero());
        for (a, b) in self.data.iter().zip(&other.data) {
            acc += a.conj() * b;
        }
        Ok(acc * w)
    }

    pub fn scale(&mut self, c: Complex<F>) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm();
        if n <= F::zero() {
            return Err(Error::Domain("cannot normalize the zero state".into()));
        }
        self.scale(Complex::new(F::one() / n, F::zero()));
        Ok(self)
    }

    /// `self += c * other`; both states must share grid, components and representation.
    pub fn add_scaled(&mut self, other: &State<F>, c: Complex<F>) -> Result<()> {
        if self.grid != other.grid || self.components != other.components || self.rep != other.rep {
            return Err(Error::GridMismatch);
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    /// `‖self − other‖`.
    pub fn distance(&self, other: &State<F>) -> Result<F> {
        let mut diff = self.clone();
        diff.add_scaled(other, Complex::new(-F::one(), F::zero()))?;
        Ok(diff.norm())
    }

    /// Multiplies pointwise by a scalar function of position, applied to every
    /// component; transforms to the position representation if needed and
    /// returns the result in that representation.
    pub fn map_position(&self, mut g: impl FnMut(&[F]) -> Complex<F>) -> State<F> {
        let mut out = self.to_rep(Representation::Position);
        out.map_in_rep(&mut g);
        out
    }

    /// Same as `map_position` for a function of momentum.
    pub fn map_momentum(&self, mut g: impl FnMut(&[F]) -> Complex<F>) -> State<F> {
        let mut out = self.to_rep(Representation::Momentum);
        out.map_in_rep(&mut g);
        out
    }

    /// Pointwise multiply by a function of the current representation's coordinates.
    pub fn map_in_rep(&mut self, g: &mut impl FnMut(&[F]) -> Complex<F>) {
        let sites = self.grid.site_count();
        let mut coords = vec![F::zero(); self.grid.dimension()];
        let mut factors = Vec::with_capacity(sites);
        for flat in 0..sites {
            match self.rep {
                Representation::Position => self.grid.position_at(flat, &mut coords),
                Representation::Momentum => self.grid.momentum_at(flat, &mut coords),
            }
            factors.push(g(&coords));
        }
        for c in 0..self.components {
            for flat in 0..sites {
                self.data[c * sites + flat] *= factors[flat];
            }
        }
    }

    /// Localisation operator `g(Q/r)`: pointwise multiplication by `g(x/r)`.
    pub fn apply_position_function(&self, mut g: impl FnMut(&[F]) -> F, r: F) -> State<F> {
        let d = self.grid.dimension();
        let mut scaled = vec![F::zero(); d];
        self.map_position(|x| {
            for a in 0..d {
                scaled[a] = x[a] / r;
            }
            Complex::new(g(&scaled), F::zero())
        })
    }

    /// Multiplication by the position coordinate `x_axis`.
    pub fn mul_position_axis(&self, axis: usize) -> State<F> {
        self.map_position(|x| Complex::new(x[axis], F::zero()))
    }

    /// `‖⟨Q⟩^t φ‖` with `⟨Q⟩ = (1+|x|²)^{1/2}`.
    pub fn weighted_norm(&self, t: F) -> F {
        let pos = self.to_rep(Representation::Position);
        let w = pos.volume_weight();
        let sites = pos.grid.site_count();
        let mut coords = vec![F::zero(); pos.grid.dimension()];
        let mut acc = F::zero();
        for flat in 0..sites {
            pos.grid.position_at(flat, &mut coords);
            let x2: F = coords.iter().map(|&x| x * x).sum();
            let weight = (F::one() + x2).powf(t);
            for c in 0..pos.components {
                acc = acc + weight * pos.data[c * sites + flat].norm_sqr();
            }
        }
        (acc * w).sqrt()
    }

    /// `⟨x_axis⟩` on a normalized state.
    pub fn position_expectation(&self, axis: usize) -> F {
        let pos = self.to_rep(Representation::Position);
        let w = pos.volume_weight();
        let sites = pos.grid.site_count();
        let mut acc = F::zero();
        for flat in 0..sites {
            let x = pos.grid.axis_position(pos.grid.axis_index(flat, axis));
            for c in 0..pos.components {
                acc = acc + x * pos.data[c * sites + flat].norm_sqr();
            }
        }
        acc * w / pos.norm_sq()
    }

    /// `⟨p_axis⟩` on a normalized state.
    pub fn momentum_expectation(&self, axis: usize) -> F {
        let mom = self.to_rep(Representation::Momentum);
        let w = mom.volume_weight();
        let sites = mom.grid.site_count();
        let mut acc = F::zero();
        for flat in 0..sites {
            let p = mom.grid.axis_momentum(mom.grid.axis_index(flat, axis));
            for c in 0..mom.components {
                acc = acc + p * mom.data[c * sites + flat].norm_sqr();
            }
        }
        acc * w / mom.norm_sq()
    }

    /// Position mass (relative to ‖φ‖²) outside the box `|x|∞ ≤ radius`.
    pub fn mass_outside_radius(&self, radius: F) -> F {
        let pos = self.to_rep(Representation::Position);
        let w = pos.volume_weight();
        let sites = pos.grid.site_count();
        let mut coords = vec![F::zero(); pos.grid.dimension()];
        let mut acc = F::zero();
        for flat in 0..sites {
            pos.grid.position_at(flat, &mut coords);
            if coords.iter().any(|&x| x.abs() > radius) {
                for c in 0..pos.components {
                    acc = acc + pos.data[c * sites + flat].norm_sqr();
                }
            }
        }
        acc * w / pos.norm_sq()
    }

    /// Relative momentum mass on the set where `pred(p)` holds.
    pub fn momentum_mass_where(&self, mut pred: impl FnMut(&[F]) -> bool) -> F {
        let mom = self.to_rep(Representation::Momentum);
        let w = mom.volume_weight();
        let sites = mom.grid.site_count();
        let mut coords = vec![F::zero(); mom.grid.dimension()];
        let mut acc = F::zero();
        for flat in 0..sites {
            mom.grid.momentum_at(flat, &mut coords);
            if pred(&coords) {
                for c in 0..mom.components {
                    acc = acc + mom.data[c * sites + flat].norm_sqr();
                }
            }
        }
        acc * w / mom.norm_sq()
    }

    /// Fails if more than `GUARD_MASS_LIMIT` of the mass sits outside the guard region.
    pub fn guard_check(&self) -> Result<()> {
        let mass = self.mass_outside_radius(self.grid.guard_limit());
        let limit = F::lit(GUARD_MASS_LIMIT);
        if mass > limit {
            return Err(Error::GuardBand {
                mass: mass.to_f64().unwrap_or(f64::NAN),
                limit: GUARD_MASS_LIMIT,
            });
        }
        Ok(())
    }

    /// Momentum-reflected state `φ̂(p) → φ̂(-p)` (1D, used for mirror probes).
    pub fn momentum_mirror(&self) -> State<F> {
        let mut out = self.to_rep(Representation::Momentum);
        let sites = out.grid.site_count();
        assert_eq!(out.grid.dimension(), 1, "mirror is defined for 1D states");
        for c in 0..out.components {
            let slice = &mut out.data[c * sites..(c + 1) * sites];
            // p_m = -p_{N-m}; the m = 0 bin (p = -π/h) has no mirror partner and
            // must stay empty for states with interior momentum support.
            slice[1..].reverse();
        }
        out
    }
}

/// Smooth compactly supported transition profile: `exp(-s²/(1-s²))` for
/// `|s| < 1`, zero outside. Equal to 1 at `s = 0`.
pub fn transition<F: Scalar>(s: F) -> F {
    let s2 = s * s;
    if s2 >= F::one() {
        return F::zero();
    }
    (-s2 / (F::one() - s2)).exp()
}

/// Recipe for a smooth wavepacket with exactly windowed momentum support.
#[derive(Debug, Clone, Serialize)]
pub struct WavepacketSpec<F> {
    /// Center position x₀.
    pub center: Vec<F>,
    /// Per-axis momentum window `[p_lo, p_hi]`; support is exactly inside.
    pub window: Vec<(F, F)>,
    /// Gaussian width of the momentum profile inside the window.
    pub profile_width: F,
    /// Component amplitudes for two-component models.
    pub polarization: Option<[Complex<F>; 2]>,
}

impl<F: Scalar> WavepacketSpec<F> {
    /// Builds the normalized packet in the momentum representation.
    pub fn build(&self, grid: &Arc<Grid<F>>) -> Result<State<F>> {
        let d = grid.dimension();
        if self.center.len() != d || self.window.len() != d {
            return Err(Error::Precondition("wavepacket spec dimension mismatch".into()));
        }
        if self.profile_width <= F::zero() {
            return Err(Error::Precondition("profile width must be positive".into()));
        }
        let p_max = grid.momentum_max();
        for &(lo, hi) in &self.window {
            if lo >= hi {
                return Err(Error::Precondition("momentum window is empty".into()));
            }
            if lo <= -p_max || hi >= p_max {
                return Err(Error::Precondition(
                    "momentum window must lie strictly inside the dual grid".into(),
                ));
            }
        }
        let components = if self.polarization.is_some() { 2 } else { 1 };
        let pol = self.polarization.unwrap_or([Complex::new(F::one(), F::zero()); 2]);
        let state = State::from_fn(grid.clone(), components, Representation::Momentum, |p, c| {
            let mut amp = F::one();
            let mut phase = F::zero();
            for a in 0..d {
                let (lo, hi) = self.window[a];
                let mid = (lo + hi) * F::lit(0.5);
                let half = (hi - lo) * F::lit(0.5);
                let s = (p[a] - mid) / half;
                let gauss = (-(p[a] - mid) * (p[a] - mid)
                    / (F::lit(2.0) * self.profile_width * self.profile_width))
                    .exp();
                amp = amp * gauss * transition(s);
                phase = phase - p[a] * self.center[a];
            }
            pol[c.min(1)] * F::cis(phase) * amp
        });
        state.normalized()
    }
}
