//! Free fibered propagators, full split-step propagators, velocity operators
//! and critical spectral values.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{Grid, Representation, State};
use crate::localisation::LocalisationFunction;
use crate::scalar::{Cplx, Scalar};

/// Default step for finite-difference velocities.
pub const FD_STEP: f64 = 1e-3;

/// Relative momentum mass tolerated below the velocity floor.
pub const FLOOR_MASS_LIMIT: f64 = 1e-12;

/// Structural family of a fibered propagator, used where closed forms exist.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind<F> {
    /// Constant velocity `v`; fiber `e^{-i p·v}`.
    Shift(Vec<F>),
    /// Fiber `e^{-i p²}`, velocity `2p`.
    Laplacian,
    /// Two-band coined walk.
    Coined,
    Custom,
}

/// Form of the velocity derivative `V'` consumed by the time operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum VPrimeForm<F> {
    Zero,
    /// `V'_{jk} = c δ_{jk}`.
    Isotropic(F),
}

type FiberFn<F> = dyn Fn(&[F], &mut [Cplx<F>]) + Send + Sync;
type VelocityFn<F> = dyn Fn(&[F], &mut [F]) + Send + Sync;

/// Unitary defined by a multiplication function in momentum space: the free
/// propagator `U₀` together with its velocity data and spectral analysis.
#[derive(Clone)]
pub struct FiberedPropagator<F: Scalar> {
    grid: Arc<Grid<F>>,
    components: usize,
    label: String,
    kind: ModelKind<F>,
    /// Writes the `c×c` fiber matrix at momentum `p`, column-major.
    fiber_fn: Arc<FiberFn<F>>,
    /// Writes the analytic per-band velocities (`bands·d` entries); `None`
    /// falls back to local-frame finite differences.
    velocity_fn: Option<Arc<VelocityFn<F>>>,
    vprime: VPrimeForm<F>,
    /// Per-band quasi-energy phases λ(p) on the grid (`u₀ = e^{-iλ}`).
    phases: Vec<Vec<F>>,
    /// Per-band velocities on the grid, `[band][site*d + axis]`.
    velocities: Vec<Vec<F>>,
    /// Per-site eigenvector columns for two-band models.
    frames: Option<Vec<[Cplx<F>; 4]>>,
}

fn eig2<F: Scalar>(m: &[Cplx<F>; 4]) -> ([Cplx<F>; 2], [Cplx<F>; 4]) {
    // m column-major: [a, c, b, d] for [[a, b], [c, d]].
    let (a, c, b, d) = (m[0], m[1], m[2], m[3]);
    let tr = a + d;
    let det = a * d - b * c;
    let half = Cplx::new(F::lit(0.5), F::zero());
    let disc = (tr * tr - Cplx::new(F::lit(4.0), F::zero()) * det).sqrt();
    let mu0 = (tr + disc) * half;
    let mu1 = (tr - disc) * half;
    let eps = F::lit(1e-12);
    let vec_for = |mu: Cplx<F>| -> [Cplx<F>; 2] {
        if b.norm() > eps {
            [b, mu - a]
        } else if c.norm() > eps {
            [mu - d, c]
        } else if (mu - a).norm() < (mu - d).norm() {
            [Cplx::new(F::one(), F::zero()), Cplx::new(F::zero(), F::zero())]
        } else {
            [Cplx::new(F::zero(), F::zero()), Cplx::new(F::one(), F::zero())]
        }
    };
    let normalize = |v: [Cplx<F>; 2]| -> [Cplx<F>; 2] {
        let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
        [v[0] / n, v[1] / n]
    };
    let v0 = normalize(vec_for(mu0));
    let v1 = normalize(vec_for(mu1));
    ([mu0, mu1], [v0[0], v0[1], v1[0], v1[1]])
}

fn phase_of<F: Scalar>(z: Cplx<F>) -> F {
    // u₀ = e^{-iλ} ⇒ λ = -arg(u₀), in (-π, π].
    -z.im.atan2(z.re)
}

impl<F: Scalar> FiberedPropagator<F> {
    /// Builds a fibered propagator from its fiber function, validating
    /// unitarity at every grid momentum.
    pub fn from_fiber(
        grid: Arc<Grid<F>>,
        components: usize,
        label: impl Into<String>,
        kind: ModelKind<F>,
        fiber_fn: Arc<FiberFn<F>>,
        velocity_fn: Option<Arc<VelocityFn<F>>>,
        vprime: VPrimeForm<F>,
    ) -> Result<Self> {
        if components != 1 && components != 2 {
            return Err(Error::Unsupported("only 1 or 2 internal components".into()));
        }
        let mut me = FiberedPropagator {
            grid,
            components,
            label: label.into(),
            kind,
            fiber_fn,
            velocity_fn,
            vprime,
            phases: Vec::new(),
            velocities: Vec::new(),
            frames: None,
        };
        me.build_tables()?;
        Ok(me)
    }

    fn build_tables(&mut self) -> Result<()> {
        let sites = self.grid.site_count();
        let d = self.grid.dimension();
        let bands = self.components;
        let mut coords = vec![F::zero(); d];
        let mut m = vec![Cplx::new(F::zero(), F::zero()); bands * bands];
        let mut phases = vec![vec![F::zero(); sites]; bands];
        let mut velocities = vec![vec![F::zero(); sites * d]; bands];
        let mut frames = if bands == 2 { Some(Vec::with_capacity(sites)) } else { None };
        let mut vbuf = vec![F::zero(); bands * d];
        let fd_step = F::lit(FD_STEP);
        for flat in 0..sites {
            self.grid.momentum_at(flat, &mut coords);
            (self.fiber_fn)(&coords, &mut m);
            if bands == 1 {
                let u = m[0];
                if (u.norm() - F::one()).abs() > F::lit(1e-12) {
                    return Err(Error::NonUnitary(format!("|u₀| deviates from 1 at site {flat}")));
                }
                phases[0][flat] = phase_of(u);
            } else {
                let arr = [m[0], m[1], m[2], m[3]];
                // unitarity: columns orthonormal
                let c0 = m[0].norm_sqr() + m[1].norm_sqr();
                let c1 = m[2].norm_sqr() + m[3].norm_sqr();
                let cross = (m[0].conj() * m[2] + m[1].conj() * m[3]).norm();
                if (c0 - F::one()).abs() > F::lit(1e-12)
                    || (c1 - F::one()).abs() > F::lit(1e-12)
                    || cross > F::lit(1e-12)
                {
                    return Err(Error::NonUnitary(format!("fiber not unitary at site {flat}")));
                }
                let (mu, frame) = eig2(&arr);
                phases[0][flat] = phase_of(mu[0]);
                phases[1][flat] = phase_of(mu[1]);
                frames.as_mut().unwrap().push(frame);
            }
            if let Some(vf) = &self.velocity_fn {
                vf(&coords, &mut vbuf);
            } else {
                self.fd_velocity_at(&coords, fd_step, &mut vbuf);
            }
            for b in 0..bands {
                for a in 0..d {
                    velocities[b][flat * d + a] = vbuf[b * d + a];
                }
            }
        }
        self.phases = phases;
        self.velocities = velocities;
        self.frames = frames;
        Ok(())
    }

    /// Local-frame centered finite difference of the eigenphases:
    /// `v_b,j ≈ Re[(i/2s)(⟨e_b, u₀(p+s e_j) e_b⟩ − ⟨e_b, u₀(p−s e_j) e_b⟩)/u₀_b(p)]`.
    fn fd_velocity_at(&self, p: &[F], step: F, out: &mut [F]) {
        let bands = self.components;
        let d = p.len();
        let mut m = vec![Cplx::new(F::zero(), F::zero()); bands * bands];
        (self.fiber_fn)(p, &mut m);
        let (mus, frame) = if bands == 1 {
            ([m[0], Cplx::new(F::zero(), F::zero())], [
                Cplx::new(F::one(), F::zero()),
                Cplx::new(F::zero(), F::zero()),
                Cplx::new(F::zero(), F::zero()),
                Cplx::new(F::one(), F::zero()),
            ])
        } else {
            let arr = [m[0], m[1], m[2], m[3]];
            let (mu, fr) = eig2(&arr);
            ([mu[0], mu[1]], fr)
        };
        let mut shifted = vec![F::zero(); d];
        let mut mp = vec![Cplx::new(F::zero(), F::zero()); bands * bands];
        let mut mm = vec![Cplx::new(F::zero(), F::zero()); bands * bands];
        for axis in 0..d {
            shifted.copy_from_slice(p);
            shifted[axis] = p[axis] + step;
            (self.fiber_fn)(&shifted, &mut mp);
            shifted[axis] = p[axis] - step;
            (self.fiber_fn)(&shifted, &mut mm);
            for b in 0..bands {
                let e = [frame[2 * b], frame[2 * b + 1]];
                let expect = |mat: &[Cplx<F>]| -> Cplx<F> {
                    if bands == 1 {
                        mat[0]
                    } else {
                        // ⟨e, M e⟩ with column-major M
                        let me0 = mat[0] * e[0] + mat[2] * e[1];
                        let me1 = mat[1] * e[0] + mat[3] * e[1];
                        e[0].conj() * me0 + e[1].conj() * me1
                    }
                };
                let i_over = Cplx::new(F::zero(), F::one() / (F::lit(2.0) * step));
                let val = i_over * (expect(&mp) - expect(&mm)) / mus[b];
                out[b * d + axis] = val.re;
            }
        }
    }

    pub fn grid(&self) -> &Arc<Grid<F>> {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> &ModelKind<F> {
        &self.kind
    }

    pub fn vprime(&self) -> VPrimeForm<F> {
        self.vprime
    }

    /// Quasi-energy phase table, `u₀ = e^{-iλ}`.
    pub fn phases(&self) -> &[Vec<F>] {
        &self.phases
    }

    /// Velocity tables `[band][site*d + axis]`.
    pub fn velocities(&self) -> &[Vec<F>] {
        &self.velocities
    }

    /// Fiber matrix at an arbitrary momentum (column-major, `c×c`).
    pub fn fiber_at(&self, p: &[F]) -> Vec<Cplx<F>> {
        let mut m = vec![Cplx::new(F::zero(), F::zero()); self.components * self.components];
        (self.fiber_fn)(p, &mut m);
        m
    }

    /// Speed `|v(p)|` extrema over all grid momenta and bands.
    pub fn speed_range(&self) -> (F, F) {
        let d = self.grid.dimension();
        let sites = self.grid.site_count();
        let mut lo = F::infinity();
        let mut hi = F::zero();
        for band in &self.velocities {
            for flat in 0..sites {
                let s: F = (0..d).map(|a| band[flat * d + a] * band[flat * d + a]).sum();
                let s = s.sqrt();
                lo = lo.min(s);
                hi = hi.max(s);
            }
        }
        (lo, hi)
    }

    /// Applies the fiber power `u₀ⁿ` in place; `state` must be in the momentum
    /// representation.
    pub(crate) fn power_in_place(&self, state: &mut State<F>, n: i64) {
        debug_assert_eq!(state.rep(), Representation::Momentum);
        debug_assert_eq!(state.components(), self.components);
        let sites = self.grid.site_count();
        let nf = F::lit(n as f64);
        if self.components == 1 {
            let phases = &self.phases[0];
            let data = state.data_mut();
            for flat in 0..sites {
                data[flat] *= F::cis(-nf * phases[flat]);
            }
        } else {
            let frames = self.frames.as_ref().unwrap();
            let (p0, p1) = (&self.phases[0], &self.phases[1]);
            let data = state.data_mut();
            for flat in 0..sites {
                let fr = &frames[flat];
                let a = [data[flat], data[sites + flat]];
                let c0 = fr[0].conj() * a[0] + fr[1].conj() * a[1];
                let c1 = fr[2].conj() * a[0] + fr[3].conj() * a[1];
                let c0 = c0 * F::cis(-nf * p0[flat]);
                let c1 = c1 * F::cis(-nf * p1[flat]);
                data[flat] = fr[0] * c0 + fr[2] * c1;
                data[sites + flat] = fr[1] * c0 + fr[3] * c1;
            }
        }
    }

    /// `U₀ⁿ φ` (one-shot fiber power), with a guard-band check on the result.
    pub fn evolve(&self, state: &State<F>, n: i64) -> Result<State<F>> {
        let rep = state.rep();
        let mut out = state.to_rep(Representation::Momentum);
        self.power_in_place(&mut out, n);
        out.make_rep(rep);
        out.guard_check()?;
        Ok(out)
    }

    /// Applies the translated propagator `U₀(x) = e^{-ix·Q} U₀ e^{ix·Q}`,
    /// whose fiber is `u₀(p + x)`.
    pub fn conjugated_apply(&self, state: &State<F>, shift: &[F]) -> State<F> {
        let bands = self.components;
        let mut out = state.to_rep(Representation::Momentum);
        let sites = self.grid.site_count();
        let d = self.grid.dimension();
        let mut coords = vec![F::zero(); d];
        let mut m = vec![Cplx::new(F::zero(), F::zero()); bands * bands];
        for flat in 0..sites {
            self.grid.momentum_at(flat, &mut coords);
            for a in 0..d {
                coords[a] = coords[a] + shift[a];
            }
            (self.fiber_fn)(&coords, &mut m);
            if bands == 1 {
                let v = out.data_mut();
                v[flat] *= m[0];
            } else {
                let data = out.data_mut();
                let a0 = data[flat];
                let a1 = data[sites + flat];
                data[flat] = m[0] * a0 + m[2] * a1;
                data[sites + flat] = m[1] * a0 + m[3] * a1;
            }
        }
        out.make_rep(state.rep());
        out
    }

    /// Applies the velocity operator component `V_axis` (a momentum
    /// multiplier, per band for two-band models).
    pub fn apply_velocity_axis(&self, state: &State<F>, axis: usize) -> State<F> {
        let mut out = state.to_rep(Representation::Momentum);
        let sites = self.grid.site_count();
        let d = self.grid.dimension();
        if self.components == 1 {
            let vt = &self.velocities[0];
            let data = out.data_mut();
            for flat in 0..sites {
                data[flat] *= Cplx::new(vt[flat * d + axis], F::zero());
            }
        } else {
            let frames = self.frames.as_ref().unwrap();
            let (v0, v1) = (&self.velocities[0], &self.velocities[1]);
            let data = out.data_mut();
            for flat in 0..sites {
                let fr = &frames[flat];
                let a = [data[flat], data[sites + flat]];
                let c0 = (fr[0].conj() * a[0] + fr[1].conj() * a[1])
                    * Cplx::new(v0[flat * d + axis], F::zero());
                let c1 = (fr[2].conj() * a[0] + fr[3].conj() * a[1])
                    * Cplx::new(v1[flat * d + axis], F::zero());
                data[flat] = fr[0] * c0 + fr[2] * c1;
                data[sites + flat] = fr[1] * c0 + fr[3] * c1;
            }
        }
        out.make_rep(state.rep());
        out
    }

    /// Applies a real multiplier `g(v(p))` of the per-band velocity vector.
    pub fn apply_velocity_function(&self, state: &State<F>, mut g: impl FnMut(&[F]) -> F) -> State<F> {
        let mut out = state.to_rep(Representation::Momentum);
        let sites = self.grid.site_count();
        let d = self.grid.dimension();
        if self.components == 1 {
            let vt = &self.velocities[0];
            let data = out.data_mut();
            for flat in 0..sites {
                let g_v = g(&vt[flat * d..flat * d + d]);
                data[flat] *= Cplx::new(g_v, F::zero());
            }
        } else {
            let frames = self.frames.as_ref().unwrap();
            let (v0t, v1t) = (&self.velocities[0], &self.velocities[1]);
            let data = out.data_mut();
            for flat in 0..sites {
                let fr = &frames[flat];
                let g0 = g(&v0t[flat * d..flat * d + d]);
                let g1 = g(&v1t[flat * d..flat * d + d]);
                let a = [data[flat], data[sites + flat]];
                let c0 = (fr[0].conj() * a[0] + fr[1].conj() * a[1]) * Cplx::new(g0, F::zero());
                let c1 = (fr[2].conj() * a[0] + fr[3].conj() * a[1]) * Cplx::new(g1, F::zero());
                data[flat] = fr[0] * c0 + fr[2] * c1;
                data[sites + flat] = fr[1] * c0 + fr[3] * c1;
            }
        }
        out.make_rep(state.rep());
        out
    }

    /// Relative momentum mass carried by bands slower than `v_min`.
    pub fn mass_below_speed(&self, state: &State<F>, v_min: F) -> F {
        let mom = state.to_rep(Representation::Momentum);
        let sites = self.grid.site_count();
        let d = self.grid.dimension();
        let w = self.grid.momentum_step().powi(d as i32);
        let mut acc = F::zero();
        for b in 0..self.components {
            let vt = &self.velocities[b];
            for flat in 0..sites {
                let s: F = (0..d).map(|a| vt[flat * d + a] * vt[flat * d + a]).sum();
                if s.sqrt() < v_min {
                    let amp2 = if self.components == 1 {
                        mom.data()[flat].norm_sqr()
                    } else {
                        let fr = &self.frames.as_ref().unwrap()[flat];
                        let a = [mom.data()[flat], mom.data()[sites + flat]];
                        (fr[2 * b].conj() * a[0] + fr[2 * b + 1].conj() * a[1]).norm_sqr()
                    };
                    acc = acc + amp2;
                }
            }
        }
        acc * w / mom.norm_sq()
    }

    /// Errors when the state carries momentum mass below the velocity floor.
    pub fn check_velocity_floor(&self, state: &State<F>, v_min: F) -> Result<()> {
        let mass = self.mass_below_speed(state, v_min);
        if mass > F::lit(FLOOR_MASS_LIMIT) {
            return Err(Error::Domain(format!(
                "momentum mass {:.3e} below the velocity floor {}",
                mass.to_f64().unwrap_or(f64::NAN),
                v_min
            )));
        }
        Ok(())
    }

    /// Relative momentum mass with quasi-energy phase inside `[lo, hi]` (arc).
    pub fn spectral_mass_in_window(&self, state: &State<F>, lo: F, hi: F) -> F {
        let mom = state.to_rep(Representation::Momentum);
        let sites = self.grid.site_count();
        let w = self.grid.momentum_step().powi(self.grid.dimension() as i32);
        let two_pi = F::lit(2.0) * F::PI();
        let width = (hi - lo).rem(two_pi) + if hi < lo { two_pi } else { F::zero() };
        let mut acc = F::zero();
        for b in 0..self.components {
            for flat in 0..sites {
                let lam = self.phases[b][flat];
                let mut delta = (lam - lo).rem(two_pi);
                if delta < F::zero() {
                    delta = delta + two_pi;
                }
                if delta <= width {
                    let amp2 = if self.components == 1 {
                        mom.data()[flat].norm_sqr()
                    } else {
                        let fr = &self.frames.as_ref().unwrap()[flat];
                        let a = [mom.data()[flat], mom.data()[sites + flat]];
                        (fr[2 * b].conj() * a[0] + fr[2 * b + 1].conj() * a[1]).norm_sqr()
                    };
                    acc = acc + amp2;
                }
            }
        }
        acc * w / mom.norm_sq()
    }
}

/// Pure shift model: fiber `e^{-i p·v}`, constant velocity `v`, no critical values.
pub fn build_free_shift<F: Scalar>(grid: Arc<Grid<F>>, v: &[F]) -> Result<FiberedPropagator<F>> {
    if v.len() != grid.dimension() {
        return Err(Error::Precondition("velocity dimension mismatch".into()));
    }
    let speed: F = v.iter().map(|&x| x * x).sum::<F>().sqrt();
    if speed <= F::zero() {
        return Err(Error::DegenerateModel(
            "shift with v = 0: every spectral point is critical".into(),
        ));
    }
    let vv = v.to_vec();
    let vf = vv.clone();
    Ok(FiberedPropagator::from_fiber(
        grid,
        1,
        "shift",
        ModelKind::Shift(vv.clone()),
        Arc::new(move |p: &[F], out: &mut [Cplx<F>]| {
            let dot: F = p.iter().zip(&vv).map(|(&pi, &vi)| pi * vi).sum();
            out[0] = F::cis(-dot);
        }),
        Some(Arc::new(move |_p: &[F], out: &mut [F]| {
            out.copy_from_slice(&vf);
        })),
        VPrimeForm::Zero,
    )?)
}

/// Discrete-time Laplacian flow: fiber `e^{-i p²}`, velocity `2p`.
pub fn build_free_laplacian<F: Scalar>(grid: Arc<Grid<F>>) -> Result<FiberedPropagator<F>> {
    Ok(FiberedPropagator::from_fiber(
        grid,
        1,
        "laplacian",
        ModelKind::Laplacian,
        Arc::new(|p: &[F], out: &mut [Cplx<F>]| {
            let p2: F = p.iter().map(|&x| x * x).sum();
            out[0] = F::cis(-p2);
        }),
        Some(Arc::new(|p: &[F], out: &mut [F]| {
            for (o, &pi) in out.iter_mut().zip(p) {
                *o = F::lit(2.0) * pi;
            }
        })),
        VPrimeForm::Isotropic(F::lit(2.0)),
    )?)
}

/// Two-band coined walk with fiber `S(p)·C`, `S(p) = diag(e^{-ip}, e^{ip})`.
#[cfg(feature = "coined-walk")]
pub fn build_coined_walk<F: Scalar>(
    grid: Arc<Grid<F>>,
    coin: [Cplx<F>; 4],
) -> Result<FiberedPropagator<F>> {
    if grid.dimension() != 1 {
        return Err(Error::Unsupported("coined walk is a 1D model".into()));
    }
    // coin column-major [[c00, c01], [c10, c11]] → [c00, c10, c01, c11]
    let col0 = coin[0].norm_sqr() + coin[1].norm_sqr();
    let col1 = coin[2].norm_sqr() + coin[3].norm_sqr();
    let cross = (coin[0].conj() * coin[2] + coin[1].conj() * coin[3]).norm();
    if (col0 - F::one()).abs() > F::lit(1e-12)
        || (col1 - F::one()).abs() > F::lit(1e-12)
        || cross > F::lit(1e-12)
    {
        return Err(Error::NonUnitary("coin matrix is not unitary".into()));
    }
    Ok(FiberedPropagator::from_fiber(
        grid,
        2,
        "coined_walk",
        ModelKind::Coined,
        Arc::new(move |p: &[F], out: &mut [Cplx<F>]| {
            let sp = F::cis(-p[0]);
            let sm = F::cis(p[0]);
            // S(p)·C, column-major
            out[0] = sp * coin[0];
            out[1] = sm * coin[1];
            out[2] = sp * coin[2];
            out[3] = sm * coin[3];
        }),
        None,
        VPrimeForm::Zero,
    )?)
}

/// Velocity evaluation route.
#[derive(Debug, Clone, Copy)]
pub enum VelocityMethod<F> {
    Analytic,
    FiniteDifference { step: F },
}

/// Velocity tables `[band][site*d + axis]` by either route.
pub fn velocity_operator<F: Scalar>(
    u0: &FiberedPropagator<F>,
    method: VelocityMethod<F>,
) -> Result<Vec<Vec<F>>> {
    match method {
        VelocityMethod::Analytic => Ok(u0.velocities.clone()),
        VelocityMethod::FiniteDifference { step } => {
            if step <= F::zero() {
                return Err(Error::Precondition("finite-difference step must be positive".into()));
            }
            let grid = u0.grid();
            let sites = grid.site_count();
            let d = grid.dimension();
            let bands = u0.components();
            let mut out = vec![vec![F::zero(); sites * d]; bands];
            let mut coords = vec![F::zero(); d];
            let mut vbuf = vec![F::zero(); bands * d];
            for flat in 0..sites {
                grid.momentum_at(flat, &mut coords);
                u0.fd_velocity_at(&coords, step, &mut vbuf);
                for b in 0..bands {
                    for a in 0..d {
                        out[b][flat * d + a] = vbuf[b * d + a];
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Closed arcs on the circle containing the degenerate-velocity spectrum.
#[derive(Debug, Clone, Serialize)]
pub struct CriticalSet<F> {
    /// Arcs as `(start, width)` with start angle in `(-π, π]`, width ≥ 0.
    arcs: Vec<(F, F)>,
    v_min: F,
}

impl<F: Scalar> CriticalSet<F> {
    pub fn arcs(&self) -> &[(F, F)] {
        &self.arcs
    }

    pub fn v_min(&self) -> F {
        self.v_min
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    /// Whether the angle lies inside some critical arc.
    pub fn contains(&self, angle: F) -> bool {
        let two_pi = F::lit(2.0) * F::PI();
        self.arcs.iter().any(|&(start, width)| {
            let mut delta = (angle - start).rem(two_pi);
            if delta < F::zero() {
                delta = delta + two_pi;
            }
            delta <= width
        })
    }

    /// Whether the closed window `[lo, lo+width]` avoids every arc.
    pub fn window_admissible(&self, lo: F, width: F) -> bool {
        let two_pi = F::lit(2.0) * F::PI();
        for &(a_start, a_width) in &self.arcs {
            // arcs overlap iff the start of one lies within the other (mod 2π)
            let mut d1 = (a_start - lo).rem(two_pi);
            if d1 < F::zero() {
                d1 = d1 + two_pi;
            }
            let mut d2 = (lo - a_start).rem(two_pi);
            if d2 < F::zero() {
                d2 = d2 + two_pi;
            }
            if d1 <= width || d2 <= a_width {
                return false;
            }
        }
        true
    }
}

/// Computes the closure of `{u₀(p) : |v(p)| < v_min}` as arcs on the circle,
/// sampling the fiber beyond grid resolution in one dimension.
pub fn critical_values<F: Scalar>(u0: &FiberedPropagator<F>, v_min: F) -> Result<CriticalSet<F>> {
    if v_min <= F::zero() {
        return Err(Error::Precondition("v_min must be positive".into()));
    }
    let grid = u0.grid();
    let d = grid.dimension();
    let bands = u0.components();
    let oversample = if d == 1 { 16 } else { 1 };
    let n = grid.points() * oversample;
    let total = n.pow(d as u32);
    let dp_sample = grid.momentum_step() / F::lit(oversample as f64);

    let mut angles: Vec<F> = Vec::new();
    let mut max_speed = F::zero();
    let mut coords = vec![F::zero(); d];
    let mut m = vec![Cplx::new(F::zero(), F::zero()); bands * bands];
    let mut vbuf = vec![F::zero(); bands * d];
    let fd_step = F::lit(FD_STEP);
    for flat in 0..total {
        for axis in 0..d {
            let stride = n.pow((d - 1 - axis) as u32);
            let k = (flat / stride) % n;
            coords[axis] = (F::lit(k as f64) - F::lit(n as f64 / 2.0)) * dp_sample;
        }
        if let Some(vf) = &u0.velocity_fn {
            vf(&coords, &mut vbuf);
        } else {
            u0.fd_velocity_at(&coords, fd_step, &mut vbuf);
        }
        (u0.fiber_fn)(&coords, &mut m);
        for b in 0..bands {
            let speed: F = (0..d).map(|a| vbuf[b * d + a] * vbuf[b * d + a]).sum::<F>().sqrt();
            max_speed = max_speed.max(speed);
            if speed < v_min {
                let mu = if bands == 1 {
                    m[0]
                } else {
                    let arr = [m[0], m[1], m[2], m[3]];
                    eig2(&arr).0[b]
                };
                angles.push(phase_of(mu));
            }
        }
    }
    if max_speed < v_min {
        return Err(Error::AllCritical {
            v_min: v_min.to_f64().unwrap_or(f64::NAN),
            v_max: max_speed.to_f64().unwrap_or(f64::NAN),
        });
    }
    if angles.is_empty() {
        return Ok(CriticalSet { arcs: Vec::new(), v_min });
    }

    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let two_pi = F::lit(2.0) * F::PI();
    // Largest phase step between neighbouring samples inside an arc is about
    // v_min · dp_sample; use a safe multiple as the merge gap, and pad arcs by
    // one sample step to realize the closure.
    let gap = F::lit(8.0) * v_min * dp_sample + F::lit(1e-12);
    let pad = v_min * dp_sample;
    let mut raw: Vec<(F, F)> = Vec::new();
    let mut start = angles[0];
    let mut prev = angles[0];
    for &a in &angles[1..] {
        if a - prev > gap {
            raw.push((start, prev));
            start = a;
        }
        prev = a;
    }
    raw.push((start, prev));
    // merge across the ±π seam
    if raw.len() > 1 {
        let first = raw[0];
        let last = *raw.last().unwrap();
        if (first.0 + two_pi) - last.1 <= gap {
            raw[0] = (last.0 - two_pi, first.1);
            raw.pop();
        }
    }
    let arcs = raw
        .into_iter()
        .map(|(lo, hi)| {
            let lo = lo - pad;
            let hi = hi + pad;
            let mut start = lo.rem(two_pi);
            if start > F::PI() {
                start = start - two_pi;
            }
            if start <= -F::PI() {
                start = start + two_pi;
            }
            (start, (hi - lo).min(two_pi))
        })
        .collect();
    Ok(CriticalSet { arcs, v_min })
}

/// One multiplicative factor of a full propagator.
#[derive(Clone)]
pub enum Factor<F: Scalar> {
    /// Unit-modulus position-space multiplier, one entry per site.
    Position(Vec<Cplx<F>>),
    Fibered(FiberedPropagator<F>),
}

/// Composable unitary built from position multipliers and fibered factors.
#[derive(Clone)]
pub struct Propagator<F: Scalar> {
    grid: Arc<Grid<F>>,
    components: usize,
    factors: Vec<Factor<F>>,
    label: String,
}

impl<F: Scalar> Propagator<F> {
    pub fn grid(&self) -> &Arc<Grid<F>> {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// A full propagator that is just `U₀`.
    pub fn from_fibered(u0: FiberedPropagator<F>) -> Self {
        Propagator {
            grid: u0.grid().clone(),
            components: u0.components(),
            label: format!("{}_free", u0.label()),
            factors: vec![Factor::Fibered(u0)],
        }
    }

    /// One application of `U` (or `U⁻¹`), without guard checks.
    pub fn step(&self, state: &State<F>, inverse: bool) -> State<F> {
        let mut cur = state.clone();
        let apply_factor = |cur: &mut State<F>, factor: &Factor<F>, inverse: bool| match factor {
            Factor::Position(mult) => {
                cur.make_rep(Representation::Position);
                let sites = cur.grid().site_count();
                let comps = cur.components();
                let data = cur.data_mut();
                for c in 0..comps {
                    for flat in 0..sites {
                        let m = if inverse { mult[flat].conj() } else { mult[flat] };
                        data[c * sites + flat] *= m;
                    }
                }
            }
            Factor::Fibered(f) => {
                cur.make_rep(Representation::Momentum);
                f.power_in_place(cur, if inverse { -1 } else { 1 });
            }
        };
        if inverse {
            for factor in self.factors.iter().rev() {
                apply_factor(&mut cur, factor, true);
            }
        } else {
            for factor in &self.factors {
                apply_factor(&mut cur, factor, false);
            }
        }
        cur.make_rep(state.rep());
        cur
    }

    /// `Uⁿ φ` with a guard-band check on the result.
    pub fn evolve(&self, state: &State<F>, n: i64) -> Result<State<F>> {
        let mut cur = state.clone();
        for _ in 0..n.unsigned_abs() {
            cur = self.step(&cur, n < 0);
        }
        cur.guard_check()?;
        Ok(cur)
    }
}

/// Symmetric split-step propagator `e^{-iW/2} U₀ e^{-iW/2}` for a real,
/// compactly supported potential `W`.
pub fn build_full_split_step<F: Scalar>(
    u0: FiberedPropagator<F>,
    w: impl Fn(&[F]) -> F,
) -> Result<Propagator<F>> {
    let grid = u0.grid().clone();
    let sites = grid.site_count();
    let mut coords = vec![F::zero(); grid.dimension()];
    let mut half = Vec::with_capacity(sites);
    let guard = grid.guard_limit();
    for flat in 0..sites {
        grid.position_at(flat, &mut coords);
        let val = w(&coords);
        if val.abs() > F::lit(1e-14) && coords.iter().any(|&x| x.abs() > guard) {
            return Err(Error::Precondition(
                "potential support reaches into the guard band".into(),
            ));
        }
        half.push(F::cis(-val * F::lit(0.5)));
    }
    let components = u0.components();
    Ok(Propagator {
        grid,
        components,
        label: format!("{}_split_step", u0.label()),
        factors: vec![
            Factor::Position(half.clone()),
            Factor::Fibered(u0),
            Factor::Position(half),
        ],
    })
}

/// Phase-defect propagator `e^{-iθ χ_A(Q)} U₀` for a finite site set `A`
/// given as a position predicate.
pub fn build_phase_defect<F: Scalar>(
    u0: FiberedPropagator<F>,
    theta: F,
    in_a: impl Fn(&[F]) -> bool,
) -> Result<Propagator<F>> {
    let grid = u0.grid().clone();
    let sites = grid.site_count();
    let mut coords = vec![F::zero(); grid.dimension()];
    let mut mult = Vec::with_capacity(sites);
    let guard = grid.guard_limit();
    for flat in 0..sites {
        grid.position_at(flat, &mut coords);
        if in_a(&coords) {
            if coords.iter().any(|&x| x.abs() > guard) {
                return Err(Error::Precondition("defect set reaches into the guard band".into()));
            }
            mult.push(F::cis(-theta));
        } else {
            mult.push(Cplx::new(F::one(), F::zero()));
        }
    }
    let components = u0.components();
    Ok(Propagator {
        grid,
        components,
        label: format!("{}_phase_defect", u0.label()),
        factors: vec![Factor::Position(mult), Factor::Fibered(u0)],
    })
}

/// `max_j ‖U₀ⁿ Q_j U₀⁻ⁿ φ − (Q_j − n V_j)φ‖ / ‖φ‖`.
pub fn transport_identity_residual<F: Scalar>(
    u0: &FiberedPropagator<F>,
    phi: &State<F>,
    n: i64,
) -> Result<F> {
    let d = u0.grid().dimension();
    let nf = F::lit(n as f64);
    let back = u0.evolve(phi, -n)?;
    let mut worst = F::zero();
    for axis in 0..d {
        let lhs = u0.evolve(&back.mul_position_axis(axis), n)?;
        let mut rhs = phi.mul_position_axis(axis);
        let v_phi = u0.apply_velocity_axis(phi, axis);
        rhs.make_rep(v_phi.rep());
        rhs.add_scaled(&v_phi, Cplx::new(-nf, F::zero()))?;
        let lhs = lhs.to_rep(rhs.rep());
        worst = worst.max(lhs.distance(&rhs)?);
    }
    Ok(worst / phi.norm())
}

/// Residual of the transported-localisation identity
/// `U₀⁻ⁿ f(νQ) U₀ⁿ = f(ν(Q + nV))`. The left side goes through the public
/// guard-checked evolution; the right side evaluates `f` on the transported
/// position — in closed form for constant velocity, and by mixed-representation
/// fiber application (`f(ν(Q+nV)) = u₀⁻ⁿ(P)·f(νQ)·u₀ⁿ(P)` exactly on the
/// lattice) for general fibered models.
pub fn trotter_transport_check<F: Scalar>(
    u0: &FiberedPropagator<F>,
    f: &LocalisationFunction<F>,
    nu: F,
    n: i64,
    phi: &State<F>,
) -> Result<F> {
    if n == 0 {
        return Ok(F::zero());
    }
    let forward = u0.evolve(phi, n)?;
    let localized = forward.apply_position_function(|x| f.eval(x), F::one() / nu);
    let lhs = u0.evolve(&localized, -n)?;

    let rhs = match u0.kind() {
        ModelKind::Shift(v) => {
            let nf = F::lit(n as f64);
            let v = v.clone();
            let d = u0.grid().dimension();
            let mut y = vec![F::zero(); d];
            phi.map_position(|x| {
                for a in 0..d {
                    y[a] = nu * (x[a] + nf * v[a]);
                }
                Cplx::new(f.eval(&y), F::zero())
            })
        }
        _ => {
            // f(ν(Q+nV)) by direct fiber multiplications, without the guard
            // checks and representation bookkeeping of the public evolution.
            let mut cur = phi.to_rep(Representation::Momentum);
            u0.power_in_place(&mut cur, n);
            cur.make_rep(Representation::Position);
            let mut cur = cur.apply_position_function(|x| f.eval(x), F::one() / nu);
            cur.make_rep(Representation::Momentum);
            u0.power_in_place(&mut cur, -n);
            cur.make_rep(Representation::Position);
            cur
        }
    };
    let lhs = lhs.to_rep(rhs.rep());
    Ok(lhs.distance(&rhs)? / phi.norm())
}

/// Dense spectral evaluation of `f(ν(X + nV(P)))` through an eigendecomposition
/// of the Hermitian matrix `X + nV(P)`; 1D only, intended for modest grids.
///
/// This is a structurally independent diagnostic. For fibers that are smooth
/// and periodic over the Brillouin zone it reproduces the transported
/// localisation to high accuracy; for non-periodic fibers (Laplacian) the
/// velocity multiplier jumps at the zone boundary and `X + nV(P)` only
/// approximates the conjugated position, with a gap that shrinks with the
/// grid size.
#[cfg_attr(not(test), allow(dead_code))]
fn dense_transported_localisation<F: Scalar>(
    u0: &FiberedPropagator<F>,
    f: &LocalisationFunction<F>,
    nu: F,
    n: i64,
    phi: &State<F>,
) -> Result<State<F>> {
    let grid = u0.grid();
    if grid.dimension() != 1 || u0.components() != 1 {
        return Err(Error::Unsupported("dense route is 1D scalar only".into()));
    }
    let npts = grid.points();
    if npts > 2048 {
        return Err(Error::Unsupported("dense route limited to N ≤ 2048".into()));
    }
    // Columns of n·V(P) via fiber applications to basis vectors (f64 internally).
    let mut h = DMatrix::<Complex<f64>>::zeros(npts, npts);
    let nf = F::lit(n as f64);
    for l in 0..npts {
        let mut e = State::zeros(grid.clone(), 1, Representation::Position);
        e.data_mut()[l] = Cplx::new(F::one(), F::zero());
        let col = u0.apply_velocity_axis(&e, 0);
        let col = col.to_rep(Representation::Position);
        for k in 0..npts {
            let v = col.data()[k] * nf;
            h[(k, l)] = Complex::new(v.re.to_f64().unwrap(), v.im.to_f64().unwrap());
        }
    }
    for k in 0..npts {
        h[(k, k)] += Complex::new(grid.axis_position(k).to_f64().unwrap(), 0.0);
    }
    // symmetrize against rounding
    let h = (h.clone() + h.adjoint()) * Complex::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(h);
    let phi_pos = phi.to_rep(Representation::Position);
    let mut vec_in = nalgebra::DVector::<Complex<f64>>::zeros(npts);
    for k in 0..npts {
        let v = phi_pos.data()[k];
        vec_in[k] = Complex::new(v.re.to_f64().unwrap(), v.im.to_f64().unwrap());
    }
    let coeffs = eig.eigenvectors.adjoint() * vec_in;
    let nu64 = nu.to_f64().unwrap();
    let mut scaled = coeffs;
    for (i, lam) in eig.eigenvalues.iter().enumerate() {
        let fv = f
            .profile(F::lit((nu64 * lam).abs()))
            .to_f64()
            .unwrap();
        scaled[i] *= Complex::new(fv, 0.0);
    }
    let out_vec = eig.eigenvectors * scaled;
    let mut out = State::zeros(grid.clone(), 1, Representation::Position);
    for k in 0..npts {
        out.data_mut()[k] = Cplx::new(F::lit(out_vec[k].re), F::lit(out_vec[k].im));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::WavepacketSpec;
    use crate::localisation::make_bump;
    use approx::assert_relative_eq;
    use num_complex::Complex64;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn grid1d(n: usize) -> Arc<Grid<f64>> {
        Arc::new(Grid::new(1, n, 1.0).unwrap())
    }

    fn packet(grid: &Arc<Grid<f64>>, x0: f64, window: (f64, f64)) -> State<f64> {
        WavepacketSpec {
            center: vec![x0],
            window: vec![window],
            profile_width: 0.3,
            polarization: None,
        }
        .build(grid)
        .unwrap()
    }

    /// Plain momentum-space Gaussian (no compact window): its position tails
    /// decay like a Gaussian, so coordinate-weighted residuals stay at
    /// rounding level.
    fn gaussian_packet(grid: &Arc<Grid<f64>>, x0: &[f64], p0: &[f64], pw: f64) -> State<f64> {
        let d = grid.dimension();
        State::from_fn(grid.clone(), 1, Representation::Momentum, |p, _| {
            let mut amp = 1.0;
            let mut phase = 0.0;
            for a in 0..d {
                amp *= (-(p[a] - p0[a]).powi(2) / (2.0 * pw * pw)).exp();
                phase -= p[a] * x0[a];
            }
            Complex64::from_polar(amp, phase)
        })
        .normalized()
        .unwrap()
    }

    fn random_state(grid: &Arc<Grid<f64>>, seed: u64) -> State<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy = State::from_fn(grid.clone(), 1, Representation::Position, |x, _| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                * (-x[0] * x[0] / 100.0).exp()
        });
        // Suppress the Brillouin seam: the group velocity of non-periodic
        // fibers kinks at ±π/h, and states with mass there develop algebraic
        // position tails under evolution.
        let p_cut = 0.9 * grid.momentum_max();
        noisy
            .map_momentum(|p| {
                Complex64::new(crate::hilbert::transition(p[0] / p_cut), 0.0)
            })
            .normalized()
            .unwrap()
    }

    #[test]
    fn shift_rejects_zero_velocity() {
        assert!(build_free_shift(grid1d(64), &[0.0]).is_err());
    }

    #[test]
    fn shift_translates_delta() {
        let g = grid1d(64);
        let u0 = build_free_shift(g.clone(), &[1.0]).unwrap();
        let mut delta = State::zeros(g.clone(), 1, Representation::Position);
        delta.data_mut()[32] = Complex64::new(1.0, 0.0); // x = 0
        let moved = u0.evolve(&delta, 5).unwrap();
        let moved = moved.to_rep(Representation::Position);
        // x = 5 lives at index 37
        assert_relative_eq!(moved.data()[37].norm(), 1.0, max_relative = 1e-10);
        let mass: f64 = moved.data().iter().map(|v| v.norm_sqr()).sum();
        assert_relative_eq!(mass, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn shift_conjugation_is_constant_phase() {
        // e^{-iaQ} U₀ e^{iaQ} = e^{-i a·v} U₀ for the shift model.
        let g = grid1d(128);
        let u0 = build_free_shift(g.clone(), &[1.0]).unwrap();
        let a = 0.37;
        for seed in 0..5 {
            let s = random_state(&g, seed);
            let lhs = u0.conjugated_apply(&s, &[a]);
            let mut rhs = u0.evolve(&s, 1).unwrap();
            rhs.scale(Complex64::from_polar(1.0, -a));
            assert!(lhs.distance(&rhs).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn fibered_factors_commute() {
        // [U₀(x), U₀(y)] = 0 on random states.
        let g = grid1d(128);
        for u0 in [
            build_free_shift(g.clone(), &[1.0]).unwrap(),
            build_free_laplacian(g.clone()).unwrap(),
        ] {
            for seed in 0..3 {
                let s = random_state(&g, 10 + seed);
                let xy = u0.conjugated_apply(&u0.conjugated_apply(&s, &[0.31]), &[-0.7]);
                let yx = u0.conjugated_apply(&u0.conjugated_apply(&s, &[-0.7]), &[0.31]);
                assert!(xy.distance(&yx).unwrap() <= 1e-12);
            }
        }
    }

    #[test]
    fn laplacian_velocity_and_fiber() {
        let g = grid1d(256);
        let u0 = build_free_laplacian(g.clone()).unwrap();
        assert_relative_eq!(u0.fiber_at(&[0.0])[0].re, 1.0, max_relative = 1e-14);
        let flat = g.momentum_bin(0.7);
        let p = g.axis_momentum(flat);
        assert_relative_eq!(u0.velocities()[0][flat], 2.0 * p, max_relative = 1e-14);
    }

    #[test]
    fn velocity_methods_agree() {
        let g = grid1d(128);
        let u0 = build_free_shift(g.clone(), &[1.0]).unwrap();
        let fd = velocity_operator(&u0, VelocityMethod::FiniteDifference { step: 1e-3 }).unwrap();
        // centered differences of the pure phase carry an O(v³s²/6) bias
        for (a, b) in u0.velocities()[0].iter().zip(&fd[0]) {
            assert_relative_eq!(a, b, epsilon = 2e-6);
        }

        let u0 = build_free_laplacian(g.clone()).unwrap();
        let fd = velocity_operator(&u0, VelocityMethod::FiniteDifference { step: 1e-3 }).unwrap();
        let mut worst: f64 = 0.0;
        for (a, b) in u0.velocities()[0].iter().zip(&fd[0]) {
            worst = worst.max((a - b).abs());
        }
        // bias ≈ (2p)³s²/6 peaks at the zone boundary
        assert!(worst <= 1e-4, "finite-difference deviation {worst}");
    }

    #[test]
    fn velocity_finite_difference_is_second_order() {
        let g = grid1d(64);
        let u0 = build_free_laplacian(g.clone()).unwrap();
        let err_at = |step: f64| -> f64 {
            let fd = velocity_operator(&u0, VelocityMethod::FiniteDifference { step }).unwrap();
            u0.velocities()[0]
                .iter()
                .zip(&fd[0])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err_at(2e-2) / err_at(1e-2);
        assert!((ratio - 4.0).abs() <= 0.4, "convergence ratio {ratio}");
    }

    #[test]
    fn velocity_commutes_with_fiber() {
        let g = grid1d(128);
        let u0 = build_free_laplacian(g.clone()).unwrap();
        for seed in 0..3 {
            let s = random_state(&g, 20 + seed);
            let a = u0.apply_velocity_axis(&u0.evolve(&s, 1).unwrap(), 0);
            let b = u0.evolve(&u0.apply_velocity_axis(&s, 0), 1).unwrap();
            assert!(a.distance(&b).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn critical_set_shift_empty_laplacian_width() {
        let g = grid1d(256);
        let shift = build_free_shift(g.clone(), &[1.0]).unwrap();
        assert!(critical_values(&shift, 0.1).unwrap().is_empty());

        let lap = build_free_laplacian(g.clone()).unwrap();
        let set = critical_values(&lap, 0.2).unwrap();
        assert_eq!(set.arcs().len(), 1);
        assert!(set.contains(0.0)); // spectral point 1 has phase 0
        // |2p| < 0.2 → λ = p² ∈ [0, 0.01); arc half-width ≈ 0.01 below angle 0.
        let (start, width) = set.arcs()[0];
        assert_relative_eq!(width, 0.01, max_relative = 0.1);
        assert!(start <= 0.0 && start >= -0.011);

        // all-critical detection
        assert!(matches!(
            critical_values(&lap, 10.0),
            Err(Error::AllCritical { .. })
        ));
    }

    #[test]
    fn critical_arcs_shrink_with_v_min() {
        let g = grid1d(256);
        let lap = build_free_laplacian(g.clone()).unwrap();
        let mut prev = f64::INFINITY;
        for v_min in [0.4, 0.2, 0.1, 0.05] {
            let set = critical_values(&lap, v_min).unwrap();
            let total: f64 = set.arcs().iter().map(|&(_, w)| w).sum();
            assert!(total < prev);
            prev = total;
        }
        assert!(prev < 1e-3); // shrinking towards the single point 1
    }

    #[test]
    fn critical_set_soundness() {
        // No grid momentum with |v(p)| ≥ v_min maps into a critical arc.
        let g = grid1d(256);
        let lap = build_free_laplacian(g.clone()).unwrap();
        let v_min = 0.2;
        let set = critical_values(&lap, v_min).unwrap();
        for flat in 0..g.site_count() {
            let v = lap.velocities()[0][flat].abs();
            if v >= v_min + 2.0 * lap.grid().momentum_step() {
                assert!(
                    !set.contains(lap.phases()[0][flat]),
                    "fast momentum mapped into a critical arc"
                );
            }
        }
    }

    #[test]
    fn spectral_window_localization_has_fast_velocity() {
        // States spectrally localized outside the arcs carry their mass on
        // {V² ≥ v_min²}.
        let g = grid1d(512);
        let lap = build_free_laplacian(g.clone()).unwrap();
        let v_min = 0.2;
        let s = packet(&g, 0.0, (0.5, 1.0)); // speeds 1..2, quasi-energies away from 1
        assert!(lap.mass_below_speed(&s, v_min) <= 1e-10);
        assert!(lap.check_velocity_floor(&s, v_min).is_ok());

        let slow = packet(&g, 0.0, (-0.05, 0.05));
        assert!(lap.check_velocity_floor(&slow, v_min).is_err());
    }

    #[test]
    fn evolve_identity_and_inverse() {
        let g = grid1d(512);
        let u0 = build_free_laplacian(g.clone()).unwrap();
        let s = packet(&g, 0.0, (0.3, 1.5));
        let same = u0.evolve(&s, 0).unwrap();
        assert!(s.distance(&same).unwrap() <= 1e-15);
        let back = u0.evolve(&u0.evolve(&s, 9).unwrap(), -9).unwrap();
        assert!(s.distance(&back).unwrap() <= 1e-11);
    }

    #[test]
    fn laplacian_transport_of_position_expectation() {
        let g = grid1d(512);
        let u0 = build_free_laplacian(g.clone()).unwrap();
        let s = packet(&g, -20.0, (0.3, 1.5));
        let p_mean = s.momentum_expectation(0);
        let n = 25;
        let moved = u0.evolve(&s, n).unwrap();
        assert_relative_eq!(
            moved.position_expectation(0),
            -20.0 + n as f64 * 2.0 * p_mean,
            epsilon = 1e-6
        );
    }

    #[test]
    fn transport_identity_residuals() {
        let g = grid1d(1024);
        let shift = build_free_shift(g.clone(), &[1.0]).unwrap();
        let lap = build_free_laplacian(g.clone()).unwrap();
        let s = gaussian_packet(&g, &[3.0], &[0.9], 0.25);
        // n = 0 leaves only transform round-trip noise
        assert!(transport_identity_residual(&shift, &s, 0).unwrap() <= 1e-14);
        for n in [1, 7, -13] {
            assert!(transport_identity_residual(&shift, &s, n).unwrap() <= 1e-12);
            let r = transport_identity_residual(&lap, &s, n).unwrap();
            assert!(r <= 1e-10, "transport residual {r} at n={n}");
        }
    }

    #[test]
    fn transport_identity_2d() {
        let g = Arc::new(Grid::new(2, 256, 1.0).unwrap());
        let lap = build_free_laplacian(g.clone()).unwrap();
        let s = gaussian_packet(&g, &[0.0, 2.0], &[1.0, -1.0], 0.25);
        let r = transport_identity_residual(&lap, &s, 3).unwrap();
        assert!(r <= 1e-10, "2D transport residual {r}");
    }

    #[test]
    fn split_step_unitarity_and_zero_potential() {
        let g = grid1d(512);
        let u0 = build_free_laplacian(g.clone()).unwrap();
        let zero = build_full_split_step(u0.clone(), |_| 0.0).unwrap();
        let s = packet(&g, 0.0, (0.3, 1.5));
        let a = zero.step(&s, false);
        let b = u0.evolve(&s, 1).unwrap();
        assert!(a.distance(&b).unwrap() <= 1e-14);

        let well = build_full_split_step(u0.clone(), |x: &[f64]| {
            -0.5 * crate::hilbert::transition(x[0] / 4.0)
        })
        .unwrap();
        let mut cur = s.clone();
        for _ in 0..1000 {
            cur = well.step(&cur, false);
        }
        assert_relative_eq!(cur.norm(), s.norm(), max_relative = 1e-12);

        // support check
        let touching = build_full_split_step(u0, |x: &[f64]| if x[0] > 100.0 { 1.0 } else { 0.0 });
        assert!(touching.is_err());
    }

    #[test]
    fn phase_defect_construction() {
        let g = grid1d(512);
        let u0 = build_free_shift(g.clone(), &[1.0]).unwrap();
        let defect =
            build_phase_defect(u0.clone(), 0.3, |x: &[f64]| (0.0..=4.0).contains(&x[0])).unwrap();
        let s = packet(&g, -30.0, (-0.8, 0.8));
        // θ = 0 gives back U₀
        let trivial = build_phase_defect(u0.clone(), 0.0, |x: &[f64]| (0.0..=4.0).contains(&x[0]))
            .unwrap();
        let a = trivial.step(&s, false);
        let b = u0.evolve(&s, 1).unwrap();
        assert!(a.distance(&b).unwrap() <= 1e-14);
        // unitarity
        let c = defect.step(&s, false);
        assert_relative_eq!(c.norm(), s.norm(), max_relative = 1e-12);
        // defect in the guard band is rejected
        assert!(build_phase_defect(u0, 0.3, |x: &[f64]| x[0] > 115.0).is_err());
    }

    #[test]
    fn trotter_transport_shift_and_laplacian() {
        let f = make_bump(1.0).unwrap();
        let g = grid1d(512);
        let shift = build_free_shift(g.clone(), &[1.0]).unwrap();
        let s = packet(&g, 0.0, (0.3, 1.5));
        assert_eq!(trotter_transport_check(&shift, &f, 0.05, 0, &s).unwrap(), 0.0);
        assert!(trotter_transport_check(&shift, &f, 0.05, 12, &s).unwrap() <= 1e-12);

        let lap = build_free_laplacian(g.clone()).unwrap();
        let r = trotter_transport_check(&lap, &f, 0.05, 10, &s).unwrap();
        assert!(r <= 1e-9, "mixed-representation residual {r}");
    }

    fn build_cosine_band(g: Arc<Grid<f64>>) -> FiberedPropagator<f64> {
        // λ(p) = -cos p: smooth and periodic over the zone, velocity sin p.
        FiberedPropagator::from_fiber(
            g,
            1,
            "cosine_band",
            ModelKind::Custom,
            Arc::new(|p: &[f64], out: &mut [Complex64]| {
                out[0] = Complex64::from_polar(1.0, p[0].cos());
            }),
            Some(Arc::new(|p: &[f64], out: &mut [f64]| {
                out[0] = p[0].sin();
            })),
            VPrimeForm::Zero,
        )
        .unwrap()
    }

    #[test]
    fn dense_route_validates_on_periodic_fiber() {
        // For a fiber that is smooth and periodic over the zone, the dense
        // spectral route for f(ν(Q+nV)) matches the fiber conjugation.
        let f = make_bump(1.0).unwrap();
        let g = grid1d(512);
        let u0 = build_cosine_band(g.clone());
        let s = packet(&g, 0.0, (0.8, 2.2)); // velocity sin p ∈ [0.7, 1]
        let n = 10;
        let forward = u0.evolve(&s, n).unwrap();
        let localized = forward.apply_position_function(|x| f.eval(x), 1.0 / 0.05);
        let conj = u0.evolve(&localized, -n).unwrap();
        let dense = dense_transported_localisation(&u0, &f, 0.05, n, &s).unwrap();
        let conj = conj.to_rep(dense.rep());
        let r = conj.distance(&dense).unwrap() / s.norm();
        assert!(r <= 1e-8, "dense-route residual {r}");
    }

    #[test]
    fn dense_route_shows_zone_boundary_gap_for_laplacian() {
        // The Laplacian velocity 2p jumps at the zone boundary, so X + nV(P)
        // only approximates the conjugated position on the finite lattice:
        // the gap is far above rounding but small, and it shrinks as the zone
        // boundary moves away in the continuum limit.
        let f = make_bump(1.0).unwrap();
        let g = grid1d(512);
        let lap = build_free_laplacian(g.clone()).unwrap();
        let s = packet(&g, 0.0, (0.3, 1.5));
        let dense = dense_transported_localisation(&lap, &f, 0.05, 10, &s).unwrap();
        let forward = lap.evolve(&s, 10).unwrap();
        let localized = forward.apply_position_function(|x| f.eval(x), 1.0 / 0.05);
        let conj = lap.evolve(&localized, -10).unwrap().to_rep(dense.rep());
        let gap = conj.distance(&dense).unwrap() / s.norm();
        assert!(gap <= 1e-3, "zone-boundary gap unexpectedly large: {gap}");
        assert!(gap >= 1e-8, "zone-boundary gap unexpectedly small: {gap}");
    }

    #[test]
    fn propagator_norm_conservation_long_run() {
        let g = grid1d(128);
        let u0 = build_free_laplacian(g.clone()).unwrap();
        let well = build_full_split_step(u0, |x: &[f64]| {
            -0.3 * crate::hilbert::transition(x[0] / 3.0)
        })
        .unwrap();
        let s = random_state(&g, 7);
        let mut cur = s.clone();
        for _ in 0..10_000 {
            cur = well.step(&cur, false);
        }
        assert_relative_eq!(cur.norm(), s.norm(), max_relative = 1e-11);
    }
}
