//! Time operator, conjugate operator, Mourre lower bounds, locally smooth
//! sums, and the half-difference summation formula.

use num_complex::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::extrapolate::richardson_pair;
use crate::hilbert::{Representation, State};
use crate::localisation::LocalisationFunction;
use crate::models::{CriticalSet, FiberedPropagator, VPrimeForm};
use crate::scalar::{Cplx, Scalar};

/// Relative tolerance on the imaginary part of expectation values that are
/// real by symmetry.
pub const IMAG_TOL: f64 = 1e-9;

/// Relative tail threshold below which an `n`-sum counts as converged.
pub const TAIL_TOL: f64 = 1e-6;

/// Time operator `T = -½(Q·V/V² + (V/|V|)·Q/|V| + iV·(V'ᵀV)/V⁴)` for a
/// scalar fibered model with radial localisation.
#[derive(Clone)]
pub struct TimeOperator<F: Scalar> {
    model: FiberedPropagator<F>,
    loc: LocalisationFunction<F>,
    v_min: F,
}

/// Result of a truncated `n`-sum: the value, a tail estimate from the last
/// 10% of partial-sum increments, and whether the tail passed the threshold.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SumOutcome<F> {
    pub value: F,
    pub tail: F,
    pub conclusive: bool,
    pub n_max: i64,
}

/// Per-radius summation data together with the extrapolated limit and its
/// comparison against the time-operator expectation.
#[derive(Debug, Clone, Serialize)]
pub struct SummationReport<F> {
    pub radii: Vec<F>,
    pub sums: Vec<SumOutcome<F>>,
    pub extrapolated: F,
    pub extrapolant_spread: F,
    pub expectation: F,
    pub relative_error: F,
}

fn multiply_velocity_table<F: Scalar>(
    model: &FiberedPropagator<F>,
    state: &State<F>,
    mut g: impl FnMut(&[F]) -> Cplx<F>,
) -> State<F> {
    let mut out = state.to_rep(Representation::Momentum);
    let d = model.grid().dimension();
    let vt = &model.velocities()[0];
    let sites = model.grid().site_count();
    let data = out.data_mut();
    for flat in 0..sites {
        let m = g(&vt[flat * d..flat * d + d]);
        // Bins at a velocity singularity carry no admissible mass (enforced
        // by the velocity-floor check); keep them out of the arithmetic.
        if m.re.is_finite() && m.im.is_finite() {
            data[flat] *= m;
        } else {
            data[flat] = Complex::new(F::zero(), F::zero());
        }
    }
    out
}

fn speed<F: Scalar>(v: &[F]) -> F {
    v.iter().map(|&x| x * x).sum::<F>().sqrt()
}

impl<F: Scalar> TimeOperator<F> {
    pub fn new(
        model: FiberedPropagator<F>,
        loc: LocalisationFunction<F>,
        v_min: F,
    ) -> Result<Self> {
        if model.components() != 1 {
            return Err(Error::Unsupported(
                "the time operator is implemented for scalar models".into(),
            ));
        }
        if v_min <= F::zero() {
            return Err(Error::Precondition("velocity floor must be positive".into()));
        }
        Ok(TimeOperator { model, loc, v_min })
    }

    pub fn model(&self) -> &FiberedPropagator<F> {
        &self.model
    }

    pub fn localisation(&self) -> &LocalisationFunction<F> {
        &self.loc
    }

    pub fn v_min(&self) -> F {
        self.v_min
    }

    /// Applies `T` in mixed representation: velocity functions act as
    /// momentum multipliers, position factors act pointwise. The returned
    /// state is in the position representation.
    pub fn apply(&self, phi: &State<F>) -> Result<State<F>> {
        self.model.check_velocity_floor(phi, self.v_min)?;
        let d = self.model.grid().dimension();
        let half = F::lit(0.5);

        // Q·(V/V²): momentum multiplier v_j/|v|², then position coordinate.
        let mut acc = State::zeros(
            self.model.grid().clone(),
            1,
            Representation::Position,
        );
        for j in 0..d {
            let m = multiply_velocity_table(&self.model, phi, |v| {
                Complex::new(v[j] / (speed(v) * speed(v)), F::zero())
            });
            acc.add_scaled(
                &m.mul_position_axis(j).to_rep(Representation::Position),
                Complex::new(F::one(), F::zero()),
            )?;
        }

        // (V/|V|)·Q/|V|: momentum 1/|v|, then coordinate, then momentum v_j/|v|.
        let inner = multiply_velocity_table(&self.model, phi, |v| {
            Complex::new(F::one() / speed(v), F::zero())
        });
        let inner_pos = inner.to_rep(Representation::Position);
        for j in 0..d {
            let m = multiply_velocity_table(&self.model, &inner_pos.mul_position_axis(j), |v| {
                Complex::new(v[j] / speed(v), F::zero())
            });
            acc.add_scaled(
                &m.to_rep(Representation::Position),
                Complex::new(F::one(), F::zero()),
            )?;
        }

        // i(V/V⁴)·(V'ᵀV): pure momentum multiplier; for V' = cI it is ic/|v|².
        if let VPrimeForm::Isotropic(c) = self.model.vprime() {
            let m = multiply_velocity_table(&self.model, phi, |v| {
                Complex::new(F::zero(), c / (speed(v) * speed(v)))
            });
            acc.add_scaled(
                &m.to_rep(Representation::Position),
                Complex::new(F::one(), F::zero()),
            )?;
        }

        acc.scale(Complex::new(-half, F::zero()));
        Ok(acc)
    }

    /// `t_f(φ) = ⟨φ, Tφ⟩`, asserted real up to rounding.
    pub fn expectation(&self, phi: &State<F>) -> Result<F> {
        let t_phi = self.apply(phi)?;
        let phi_pos = phi.to_rep(Representation::Position);
        let val = phi_pos.inner(&t_phi)?;
        // rounding in the imaginary part scales with ‖φ‖·‖Tφ‖
        let scale = (phi_pos.norm() * t_phi.norm()).max(val.norm());
        if val.im.abs() > F::lit(IMAG_TOL) * scale {
            return Err(Error::Fidelity(format!(
                "time expectation has imaginary part {:e}",
                val.im
            )));
        }
        Ok(val.re)
    }

    /// The defining quadratic form
    /// `t_f(φ) = ½Σ_j(⟨Q_jφ, (∂_jR_f)(V)φ⟩ + ⟨(∂_jR_f)(V)φ, Q_jφ⟩)` with the
    /// radial gradient `(∂_jR_f)(v) = -v_j/|v|²`, evaluated without the
    /// symmetrized operator of `apply`. Used as a cross-check.
    pub fn quadratic_form(&self, phi: &State<F>) -> Result<F> {
        self.model.check_velocity_floor(phi, self.v_min)?;
        let d = self.model.grid().dimension();
        let mut acc = F::zero();
        for j in 0..d {
            let grad = multiply_velocity_table(&self.model, phi, |v| {
                Complex::new(-v[j] / (speed(v) * speed(v)), F::zero())
            })
            .to_rep(Representation::Position);
            let q_phi = phi.mul_position_axis(j);
            let a = q_phi.inner(&grad)?;
            let b = grad.inner(&q_phi)?;
            acc = acc + F::lit(0.5) * (a + b).re;
        }
        Ok(acc)
    }

    /// `‖T U₀ⁿφ − U₀ⁿTφ + nU₀ⁿφ‖/‖φ‖` (canonical commutation with the free
    /// evolution).
    pub fn canonical_commutation_residual(&self, phi: &State<F>, n: i64) -> Result<F> {
        let evolved = self.model.evolve(phi, n)?;
        let lhs = self.apply(&evolved)?;
        let mut rhs = self
            .model
            .evolve(&self.apply(phi)?, n)?
            .to_rep(Representation::Position);
        rhs.add_scaled(
            &evolved.to_rep(Representation::Position),
            Complex::new(-F::lit(n as f64), F::zero()),
        )?;
        Ok(lhs.distance(&rhs)? / phi.norm())
    }
}

/// Position weights `f(x/r)` on the grid.
pub(crate) fn localisation_weights<F: Scalar>(
    model: &FiberedPropagator<F>,
    f: &LocalisationFunction<F>,
    r: F,
) -> Vec<F> {
    let grid = model.grid();
    let sites = grid.site_count();
    let d = grid.dimension();
    let mut coords = vec![F::zero(); d];
    let mut scaled = vec![F::zero(); d];
    let mut w = Vec::with_capacity(sites);
    for flat in 0..sites {
        grid.position_at(flat, &mut coords);
        for a in 0..d {
            scaled[a] = coords[a] / r;
        }
        w.push(f.eval(&scaled));
    }
    w
}

pub(crate) fn weighted_mass<F: Scalar>(state_m: &State<F>, weights: &[F]) -> F {
    let pos = state_m.to_rep(Representation::Position);
    let d = pos.grid().dimension();
    let vol = pos.grid().spacing().powi(d as i32);
    let mut acc = F::zero();
    for (amp, &w) in pos.data().iter().zip(weights) {
        acc = acc + w * amp.norm_sqr();
    }
    acc * vol
}

/// Largest per-axis position standard deviation of the state.
fn position_width<F: Scalar>(phi: &State<F>) -> F {
    let pos = phi.to_rep(Representation::Position);
    let d = pos.grid().dimension();
    let norm_sq = pos.norm_sq();
    let vol = pos.grid().spacing().powi(d as i32);
    let sites = pos.grid().site_count();
    let mut coords = vec![F::zero(); d];
    let mut width = F::zero();
    for axis in 0..d {
        let mut m1 = F::zero();
        let mut m2 = F::zero();
        for flat in 0..sites {
            pos.grid().position_at(flat, &mut coords);
            let p = pos.data()[flat].norm_sqr();
            m1 = m1 + coords[axis] * p;
            m2 = m2 + coords[axis] * coords[axis] * p;
        }
        m1 = m1 * vol / norm_sq;
        m2 = m2 * vol / norm_sq;
        width = width.max((m2 - m1 * m1).max(F::zero()).sqrt());
    }
    width
}

/// Smallest speed carried by the numerically supported momentum bins.
pub fn velocity_floor<F: Scalar>(model: &FiberedPropagator<F>, phi: &State<F>) -> Result<F> {
    let mom = phi.to_rep(Representation::Momentum);
    let d = model.grid().dimension();
    let sites = model.grid().site_count();
    let vt = &model.velocities()[0];
    let peak = mom
        .data()
        .iter()
        .map(|a| a.norm_sqr())
        .fold(F::zero(), F::max);
    let cut = peak * F::lit(1e-14);
    let mut floor = F::infinity();
    for flat in 0..sites {
        if mom.data()[flat].norm_sqr() > cut {
            floor = floor.min(speed(&vt[flat * d..flat * d + d]));
        }
    }
    if !floor.is_finite() || floor <= F::zero() {
        return Err(Error::Domain(
            "state carries momentum mass at zero velocity".into(),
        ));
    }
    Ok(floor)
}

/// Horizon rule `n_max = ceil((r(1+w) + |center|)/v_floor) + 4·(position
/// width)` ensuring the transported packet fully exits the localisation
/// support in both time directions.
pub fn auto_n_max<F: Scalar>(
    model: &FiberedPropagator<F>,
    f: &LocalisationFunction<F>,
    r: F,
    phi: &State<F>,
) -> Result<i64> {
    let v_floor = velocity_floor(model, phi)?;
    let pos = phi.to_rep(Representation::Position);
    let d = pos.grid().dimension();
    let vol = pos.grid().spacing().powi(d as i32);
    let norm_sq = pos.norm_sq();
    let sites = pos.grid().site_count();
    let mut coords = vec![F::zero(); d];
    let mut center = F::zero();
    for axis in 0..d {
        let mut m1 = F::zero();
        for flat in 0..sites {
            pos.grid().position_at(flat, &mut coords);
            m1 = m1 + coords[axis] * pos.data()[flat].norm_sqr();
        }
        center = center.max((m1 * vol / norm_sq).abs());
    }
    let exit = ((r * (F::one() + f.width()) + center) / v_floor).ceil();
    let pad = (F::lit(4.0) * position_width(phi)).ceil();
    // Dispersive models spread like √(2·|V'|·n); pad so the trailing edge
    // (several spread widths behind the slowest classical ray) has cleared
    // the support by the time the tail-estimate window starts.
    let disp = match model.vprime() {
        VPrimeForm::Zero => F::zero(),
        VPrimeForm::Isotropic(c) => {
            (F::lit(6.0) * (F::lit(2.0) * c.abs() * exit).sqrt() / v_floor).ceil()
        }
    };
    // The trailing 10% of increments (the tail-estimate window) must lie
    // entirely past the exit transient.
    let n = ((exit + pad + disp) / F::lit(0.9)).ceil();
    Ok(n.to_f64().unwrap_or(f64::MAX) as i64)
}

fn tail_of_increments<F: Scalar>(incs: &[F]) -> F {
    let start = incs.len() - (incs.len() / 10).max(1);
    incs[start..].iter().map(|x| x.abs()).sum()
}

/// `½Σ_{n=0}^{n_max}⟨φ,(U₀⁻ⁿf(Q/r)U₀ⁿ − U₀ⁿf(Q/r)U₀⁻ⁿ)φ⟩` with a tail
/// estimate from the last 10% of increments.
pub fn half_difference_sum<F: Scalar>(
    model: &FiberedPropagator<F>,
    f: &LocalisationFunction<F>,
    r: F,
    phi: &State<F>,
    n_max: i64,
) -> Result<SumOutcome<F>> {
    if r <= F::zero() || n_max < 1 {
        return Err(Error::Precondition("need r > 0 and n_max ≥ 1".into()));
    }
    let weights = localisation_weights(model, f, r);
    let mut plus = phi.to_rep(Representation::Momentum);
    let mut minus = plus.clone();
    let mut value = F::zero();
    let mut incs = Vec::with_capacity(n_max as usize);
    for _ in 1..=n_max {
        model.power_in_place(&mut plus, 1);
        model.power_in_place(&mut minus, -1);
        let inc = F::lit(0.5) * (weighted_mass(&plus, &weights) - weighted_mass(&minus, &weights));
        incs.push(inc);
        value = value + inc;
    }
    // Truncation spill past the guard band invalidates the certificate but
    // not the computed number: report the sum as inconclusive.
    let guarded = plus.to_rep(Representation::Position).guard_check().is_ok()
        && minus.to_rep(Representation::Position).guard_check().is_ok();
    let tail = tail_of_increments(&incs);
    let conclusive = guarded && tail <= F::lit(TAIL_TOL) * (F::one() + value.abs());
    Ok(SumOutcome { value, tail, conclusive, n_max })
}

/// `Σ_{|n|≤n_max}‖f(Q/r)^{1/2}U₀ⁿφ‖²` (local smoothness sum) with tail
/// estimate.
pub fn smooth_sum<F: Scalar>(
    model: &FiberedPropagator<F>,
    f: &LocalisationFunction<F>,
    r: F,
    phi: &State<F>,
    n_max: i64,
) -> Result<SumOutcome<F>> {
    if r <= F::zero() || n_max < 1 {
        return Err(Error::Precondition("need r > 0 and n_max ≥ 1".into()));
    }
    let weights = localisation_weights(model, f, r);
    let mut plus = phi.to_rep(Representation::Momentum);
    let mut minus = plus.clone();
    let mut value = weighted_mass(&plus, &weights);
    let mut incs = Vec::with_capacity(n_max as usize);
    for _ in 1..=n_max {
        model.power_in_place(&mut plus, 1);
        model.power_in_place(&mut minus, -1);
        let inc = weighted_mass(&plus, &weights) + weighted_mass(&minus, &weights);
        incs.push(inc);
        value = value + inc;
    }
    let guarded = plus.to_rep(Representation::Position).guard_check().is_ok()
        && minus.to_rep(Representation::Position).guard_check().is_ok();
    let tail = tail_of_increments(&incs);
    let conclusive = guarded && tail <= F::lit(TAIL_TOL) * (F::one() + value.abs());
    Ok(SumOutcome { value, tail, conclusive, n_max })
}

/// Runs the half-difference sum over an ascending radius ladder, Richardson
/// extrapolates in `1/r`, and compares against the time-operator expectation.
pub fn summation_formula_report<F: Scalar>(
    t: &TimeOperator<F>,
    phi: &State<F>,
    radii: &[F],
) -> Result<SummationReport<F>> {
    if radii.len() < 3 {
        return Err(Error::Precondition("need at least three radii".into()));
    }
    if radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("radii must be strictly ascending".into()));
    }
    let expectation = t.expectation(phi)?;
    let mut sums = Vec::with_capacity(radii.len());
    for &r in radii {
        let n_max = auto_n_max(t.model(), t.localisation(), r, phi)?;
        sums.push(half_difference_sum(t.model(), t.localisation(), r, phi, n_max)?);
    }
    let k = radii.len();
    let last = richardson_pair(radii[k - 2], sums[k - 2].value, radii[k - 1], sums[k - 1].value)?;
    let prev = richardson_pair(radii[k - 3], sums[k - 3].value, radii[k - 2], sums[k - 2].value)?;
    let scale = expectation.abs().max(F::lit(1e-12));
    Ok(SummationReport {
        radii: radii.to_vec(),
        sums,
        extrapolated: last,
        extrapolant_spread: (last - prev).abs(),
        expectation,
        relative_error: (last - expectation).abs() / scale,
    })
}

/// Conjugate operator `A = ½Σ_j(Π_jQ_j + Q_jΠ_j)` with
/// `Π_j = V_j(V_j² + 1)⁻¹`.
#[derive(Clone)]
pub struct ConjugateOperator<F: Scalar> {
    model: FiberedPropagator<F>,
    /// `[axis][site]` multiplier tables.
    pi: Vec<Vec<F>>,
}

impl<F: Scalar> ConjugateOperator<F> {
    pub fn new(model: FiberedPropagator<F>) -> Result<Self> {
        if model.components() != 1 {
            return Err(Error::Unsupported(
                "the conjugate operator is implemented for scalar models".into(),
            ));
        }
        let d = model.grid().dimension();
        let sites = model.grid().site_count();
        let vt = &model.velocities()[0];
        let mut pi = vec![vec![F::zero(); sites]; d];
        for flat in 0..sites {
            for j in 0..d {
                let v = vt[flat * d + j];
                pi[j][flat] = v / (v * v + F::one());
            }
        }
        Ok(ConjugateOperator { model, pi })
    }

    pub fn model(&self) -> &FiberedPropagator<F> {
        &self.model
    }

    /// Multiplier tables `Π_j`, `[axis][site]`.
    pub fn pi_tables(&self) -> &[Vec<F>] {
        &self.pi
    }

    fn multiply_pi(&self, state: &State<F>, axis: usize) -> State<F> {
        let mut out = state.to_rep(Representation::Momentum);
        let data = out.data_mut();
        for (amp, &p) in data.iter_mut().zip(&self.pi[axis]) {
            *amp *= Complex::new(p, F::zero());
        }
        out
    }

    /// Mixed-representation application of `A`; result in position
    /// representation.
    pub fn apply(&self, phi: &State<F>) -> Result<State<F>> {
        let d = self.model.grid().dimension();
        let half = Complex::new(F::lit(0.5), F::zero());
        let mut acc = State::zeros(self.model.grid().clone(), 1, Representation::Position);
        for j in 0..d {
            let a = self
                .multiply_pi(phi, j)
                .mul_position_axis(j)
                .to_rep(Representation::Position);
            let b = self
                .multiply_pi(&phi.mul_position_axis(j), j)
                .to_rep(Representation::Position);
            acc.add_scaled(&a, half)?;
            acc.add_scaled(&b, half)?;
        }
        Ok(acc)
    }
}

/// `‖U₀⁻¹AU₀φ − Aφ − M(V)φ‖/‖φ‖` with `M(V) = Σ_j V_j²(V_j²+1)⁻¹`:
/// residual of the commutator identity behind the Mourre bound.
pub fn commutator_identity_residual<F: Scalar>(
    a: &ConjugateOperator<F>,
    phi: &State<F>,
) -> Result<F> {
    let model = a.model();
    let lhs_inner = a.apply(&model.evolve(phi, 1)?)?;
    let mut lhs = model.evolve(&lhs_inner, -1)?.to_rep(Representation::Position);
    lhs.add_scaled(&a.apply(phi)?, Complex::new(-F::one(), F::zero()))?;
    let rhs = model
        .apply_velocity_function(phi, |v| {
            v.iter().map(|&x| x * x / (x * x + F::one())).sum()
        })
        .to_rep(Representation::Position);
    Ok(lhs.distance(&rhs)? / phi.norm())
}

/// Mourre lower bound over a quasi-energy window (arc `(start, width)`).
///
/// Numeric: minimum over the probes of `⟨φ, M(V)φ⟩/‖φ‖²` with the commutator
/// multiplier `M(V) = Σ_j V_j²(V_j²+1)⁻¹`. Analytic: minimum of that
/// multiplier over grid momenta whose quasi-energy lies in the window.
pub fn mourre_bound<F: Scalar>(
    a: &ConjugateOperator<F>,
    critical: &CriticalSet<F>,
    window: (F, F),
    probes: &[State<F>],
) -> Result<(F, F)> {
    let model = a.model();
    if !critical.window_admissible(window.0, window.1) {
        return Err(Error::Precondition(
            "spectral window touches the critical arcs".into(),
        ));
    }
    if probes.is_empty() {
        return Err(Error::Precondition("need at least one probe state".into()));
    }
    let d = model.grid().dimension();
    let sites = model.grid().site_count();
    let vt = &model.velocities()[0];
    let phases = &model.phases()[0];
    let two_pi = F::lit(2.0) * F::PI();

    let mut analytic = F::infinity();
    for flat in 0..sites {
        let lam = phases[flat];
        let mut delta = (lam - window.0) % two_pi;
        if delta < F::zero() {
            delta = delta + two_pi;
        }
        if delta <= window.1 {
            let m: F = (0..d)
                .map(|j| {
                    let v = vt[flat * d + j];
                    v * v / (v * v + F::one())
                })
                .sum();
            analytic = analytic.min(m);
        }
    }
    if !analytic.is_finite() {
        return Err(Error::Precondition(
            "no grid momentum maps into the spectral window".into(),
        ));
    }

    let mut numeric = F::infinity();
    for phi in probes {
        let deficit = F::one() - model.spectral_mass_in_window(phi, window.0, window.0 + window.1);
        if deficit > F::lit(1e-8) {
            return Err(Error::Precondition(format!(
                "probe carries spectral mass {:.3e} outside the window",
                deficit.to_f64().unwrap_or(f64::NAN)
            )));
        }
        let m_phi = model.apply_velocity_function(phi, |v| {
            v.iter().map(|&x| x * x / (x * x + F::one())).sum()
        });
        let phi_r = phi.to_rep(m_phi.rep());
        let val = phi_r.inner(&m_phi)?.re / phi.norm_sq();
        numeric = numeric.min(val);
    }
    Ok((numeric, analytic))
}
