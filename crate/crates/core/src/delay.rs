//! Sojourn-time sums, symmetrised and non-symmetrised time delays, the
//! auxiliary free-sum delay, elastic sojourn differences, and radius
//! convergence studies against the spectral (Eisenbud–Wigner style) value.
//!
//! All times are in units of the evolution step. The dilation scale `r` and
//! the small parameter ν of the localisation averages are related by ν = 1/r
//! throughout.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::extrapolate::richardson_pair;
use crate::hilbert::{Representation, State};
use crate::localisation::LocalisationFunction;
use crate::models::FiberedPropagator;
use crate::scalar::Scalar;
use crate::scattering::{ew_expectation_fiber, Direction, SMatrixTable, ScatteringSystem};
use crate::timeops::{
    auto_n_max, half_difference_sum, localisation_weights, smooth_sum, weighted_mass, SumOutcome,
    TimeOperator,
};

/// Sojourn times of one state at one dilation scale: the free times of the
/// incoming and outgoing states, the localised full time, and the leakage
/// term of a non-isometric identification (zero for the shipped identity).
#[derive(Debug, Clone, Serialize)]
pub struct SojournRecord<F> {
    pub r: F,
    /// T⁰_r(φ): free sojourn time of the incoming state.
    pub free_in: F,
    /// T⁰_r(Sφ): free sojourn time of the outgoing state.
    pub free_out: F,
    /// T_{r,1}(φ): localised sojourn time along the full evolution.
    pub full_localised: F,
    /// T₂(φ): mass not seen by the identification, Σₙ⟨ψₙ,(1−L*L)ψₙ⟩.
    pub full_leak: F,
    pub n_max: i64,
    pub tail_free_in: F,
    pub tail_free_out: F,
    pub tail_full: F,
    /// All guard bands held and every tail estimate met its bound.
    pub conclusive: bool,
}

impl<F: Scalar> SojournRecord<F> {
    /// τ_r^sym = (T_{r,1}+T₂) − ½(T⁰_r(φ)+T⁰_r(Sφ)), exactly from the
    /// stored fields.
    pub fn tau_sym(&self) -> F {
        self.full_localised + self.full_leak
            - F::lit(0.5) * (self.free_in + self.free_out)
    }

    /// τ_r^nsym = (T_{r,1}+T₂) − T⁰_r(φ), exactly from the stored fields.
    pub fn tau_nsym(&self) -> F {
        self.full_localised + self.full_leak - self.free_in
    }
}

/// `T⁰_r(φ) = Σ_{|n|≤n_max}⟨U₀ⁿφ, f(Q/r)U₀ⁿφ⟩` with a tail estimate from
/// the trailing 10% of increments; the value is nonnegative by construction.
pub fn sojourn_free<F: Scalar>(
    model: &FiberedPropagator<F>,
    f: &LocalisationFunction<F>,
    r: F,
    phi: &State<F>,
    n_max: i64,
) -> Result<SumOutcome<F>> {
    smooth_sum(model, f, r, phi, n_max)
}

/// `T_{r,1} = Σ_{|n|≤n_max}⟨LₙUⁿW₋φ, f(Q/r)LₙUⁿW₋φ⟩` and
/// `T₂ = Σ_{|n|≤n_max}(‖ψₙ‖² − ‖Lₙψₙ‖²)` for `ψₙ = UⁿW₋φ`, with
/// `Lₙ = J*` constant. For the identity identification the leak term is
/// identically zero.
pub fn sojourn_full<F: Scalar>(
    sys: &ScatteringSystem<F>,
    f: &LocalisationFunction<F>,
    r: F,
    phi: &State<F>,
    n_max: i64,
) -> Result<(SumOutcome<F>, F)> {
    let (wm, _) = sys.wave_operator_apply(phi, Direction::Minus)?;
    sojourn_full_from(sys, f, r, &wm, n_max)
}

/// Same as [`sojourn_full`] but starting from an already converged past wave
/// operator image, so a convergence study pays for W₋φ only once.
pub fn sojourn_full_from<F: Scalar>(
    sys: &ScatteringSystem<F>,
    f: &LocalisationFunction<F>,
    r: F,
    wm: &State<F>,
    n_max: i64,
) -> Result<(SumOutcome<F>, F)> {
    if r <= F::zero() || n_max < 1 {
        return Err(Error::Precondition("need r > 0 and n_max ≥ 1".into()));
    }
    let weights = localisation_weights(sys.free(), f, r);
    let l = sys.identification();
    let term = |state: &State<F>| -> (F, F) {
        let seen = l.adjoint(state);
        (
            weighted_mass(&seen, &weights),
            state.norm_sq() - seen.norm_sq(),
        )
    };
    let mut plus = wm.to_rep(Representation::Position);
    let mut minus = plus.clone();
    let (m0, l0) = term(&plus);
    let mut value = m0;
    let mut leak = l0;
    let mut incs = Vec::with_capacity(n_max as usize);
    for _ in 1..=n_max {
        plus = sys.full().step(&plus, false);
        minus = sys.full().step(&minus, true);
        let (mp, lp) = term(&plus);
        let (mm, lm) = term(&minus);
        incs.push(mp + mm);
        value = value + mp + mm;
        leak = leak + lp + lm;
    }
    let guarded = plus.to_rep(Representation::Position).guard_check().is_ok()
        && minus.to_rep(Representation::Position).guard_check().is_ok();
    let start = incs.len() - (incs.len() / 10).max(1);
    let tail: F = incs[start..].iter().map(|x| x.abs()).sum();
    let conclusive = guarded && tail <= F::lit(1e-6) * (F::one() + value.abs());
    Ok((SumOutcome { value, tail, conclusive, n_max }, leak))
}

/// Full sojourn record of one state at one scale, from precomputed `Sφ` and
/// `W₋φ`.
pub fn sojourn_record<F: Scalar>(
    sys: &ScatteringSystem<F>,
    f: &LocalisationFunction<F>,
    r: F,
    phi: &State<F>,
    s_phi: &State<F>,
    wm: &State<F>,
    n_max: i64,
) -> Result<SojournRecord<F>> {
    let free_in = sojourn_free(sys.free(), f, r, phi, n_max)?;
    let free_out = sojourn_free(sys.free(), f, r, s_phi, n_max)?;
    let (full, leak) = sojourn_full_from(sys, f, r, wm, n_max)?;
    Ok(SojournRecord {
        r,
        free_in: free_in.value,
        free_out: free_out.value,
        full_localised: full.value,
        full_leak: leak,
        n_max,
        tail_free_in: free_in.tail,
        tail_free_out: free_out.tail,
        tail_full: full.tail,
        conclusive: free_in.conclusive && free_out.conclusive && full.conclusive,
    })
}

fn conclusive_record<F: Scalar>(
    sys: &ScatteringSystem<F>,
    f: &LocalisationFunction<F>,
    r: F,
    phi: &State<F>,
) -> Result<SojournRecord<F>> {
    let s_phi = sys.scattering_apply(phi)?;
    let (wm, _) = sys.wave_operator_apply(phi, Direction::Minus)?;
    let n_max = auto_n_max(sys.free(), f, r, phi)?;
    let rec = sojourn_record(sys, f, r, phi, &s_phi, &wm, n_max)?;
    if !rec.conclusive {
        return Err(Error::Precondition(format!(
            "sojourn sums inconclusive at r = {} (tails {:.3e}/{:.3e}/{:.3e})",
            rec.r.to_f64().unwrap_or(f64::NAN),
            rec.tail_free_in.to_f64().unwrap_or(f64::NAN),
            rec.tail_free_out.to_f64().unwrap_or(f64::NAN),
            rec.tail_full.to_f64().unwrap_or(f64::NAN),
        )));
    }
    Ok(rec)
}

/// Symmetrised time delay at one scale; errors if any sum is inconclusive.
pub fn tau_sym<F: Scalar>(
    sys: &ScatteringSystem<F>,
    f: &LocalisationFunction<F>,
    r: F,
    phi: &State<F>,
) -> Result<F> {
    Ok(conclusive_record(sys, f, r, phi)?.tau_sym())
}

/// Non-symmetrised time delay at one scale; errors if any sum is
/// inconclusive.
pub fn tau_nsym<F: Scalar>(
    sys: &ScatteringSystem<F>,
    f: &LocalisationFunction<F>,
    r: F,
    phi: &State<F>,
) -> Result<F> {
    Ok(conclusive_record(sys, f, r, phi)?.tau_nsym())
}

/// The auxiliary delay
/// `τ_r^free = ½Σ_{n≥0}⟨φ, S*[U₀⁻ⁿf(Q/r)U₀ⁿ − U₀ⁿf(Q/r)U₀⁻ⁿ, S]φ⟩`,
/// assembled by unitarity of S from the half-difference sums of `Sφ` and φ.
pub fn tau_free<F: Scalar>(
    model: &FiberedPropagator<F>,
    f: &LocalisationFunction<F>,
    r: F,
    phi: &State<F>,
    s_phi: &State<F>,
    n_max: i64,
) -> Result<SumOutcome<F>> {
    let out = half_difference_sum(model, f, r, s_phi, n_max)?;
    let inc = half_difference_sum(model, f, r, phi, n_max)?;
    Ok(SumOutcome {
        value: out.value - inc.value,
        tail: out.tail + inc.tail,
        conclusive: out.conclusive && inc.conclusive,
        n_max,
    })
}

/// Outcome of the elastic sojourn-difference check `T⁰_r(Sφ) − T⁰_r(φ)`.
#[derive(Debug, Clone, Serialize)]
pub enum ElasticOutcome<F> {
    Value { difference: F, tail: F, conclusive: bool },
    /// The model does not satisfy the elastic hypothesis (multi-component or
    /// multi-dimensional scattering mixes channels).
    Skipped { reason: String },
}

/// `T⁰_r(Sφ) − T⁰_r(φ)`, which must tend to zero as r grows for elastic
/// (1D scalar) models; other models are skipped, not failed.
pub fn elastic_difference<F: Scalar>(
    sys: &ScatteringSystem<F>,
    f: &LocalisationFunction<F>,
    r: F,
    phi: &State<F>,
) -> Result<ElasticOutcome<F>> {
    if sys.free().grid().dimension() != 1 || sys.free().components() != 1 {
        return Ok(ElasticOutcome::Skipped {
            reason: "elastic hypothesis needs a 1D scalar model".into(),
        });
    }
    let s_phi = sys.scattering_apply(phi)?;
    let n_max = auto_n_max(sys.free(), f, r, phi)?;
    let out = sojourn_free(sys.free(), f, r, &s_phi, n_max)?;
    let inc = sojourn_free(sys.free(), f, r, phi, n_max)?;
    Ok(ElasticOutcome::Value {
        difference: out.value - inc.value,
        tail: out.tail + inc.tail,
        conclusive: out.conclusive && inc.conclusive,
    })
}

/// Radius convergence study: per-r sojourn records and delays, Richardson
/// limits, spectral reference values, and verdicts.
#[derive(Debug, Clone, Serialize)]
pub struct TimeDelayReport<F: Scalar> {
    pub records: Vec<SojournRecord<F>>,
    pub tau_sym: Vec<F>,
    pub tau_nsym: Vec<F>,
    pub tau_free: Vec<F>,
    /// |τ_r^sym − τ_r^free| per radius; must shrink with r.
    pub free_gap: Vec<F>,
    /// T⁰_r(Sφ) − T⁰_r(φ) per radius (elastic difference).
    pub elastic: Vec<F>,
    pub extrapolated_sym: F,
    pub extrapolated_nsym: F,
    /// Disagreement of the two highest-radius extrapolants.
    pub spread_sym: F,
    pub spread_nsym: F,
    pub ew_direct: F,
    pub ew_fiber: Option<F>,
    /// Relative momentum mass of Sφ below the time operator's velocity
    /// floor (reported, not assumed zero).
    pub floor_mass_out: F,
    pub tol_rel: F,
    pub verdict_sym: bool,
    pub verdict_nsym: bool,
    pub verdict_free_gap: bool,
    /// False as soon as any sub-sum was inconclusive.
    pub conclusive: bool,
}

impl<F: Scalar> TimeDelayReport<F> {
    /// Overall pass: every verdict true and every sub-sum conclusive.
    pub fn pass(&self) -> bool {
        self.verdict_sym && self.verdict_nsym && self.verdict_free_gap && self.conclusive
    }
}

/// Runs the full study over an ascending radius ladder (≥ 3 entries): one
/// sojourn record per radius, delays and the free-gap, `O(1/r)` Richardson
/// limits validated by the spread of the two highest-radius extrapolants,
/// and both spectral reference routes (the fiber route when a table is
/// supplied). Verdicts compare the limits to the direct spectral value at
/// relative tolerance `tol_rel`, with one time step as the absolute floor.
pub fn convergence_study<F: Scalar>(
    sys: &ScatteringSystem<F>,
    t: &TimeOperator<F>,
    phi: &State<F>,
    r_list: &[F],
    table: Option<&SMatrixTable<F>>,
    tol_rel: F,
) -> Result<TimeDelayReport<F>> {
    if r_list.len() < 3 {
        return Err(Error::Precondition("need at least three radii".into()));
    }
    if r_list.windows(2).any(|w| w[0] >= w[1]) || r_list[0] <= F::zero() {
        return Err(Error::Precondition("radii must be positive and ascending".into()));
    }
    if sys.free().grid().site_count() != t.model().grid().site_count() {
        return Err(Error::GridMismatch);
    }
    if tol_rel <= F::zero() {
        return Err(Error::Precondition("need tol_rel > 0".into()));
    }
    let f = t.localisation();

    let s_phi = sys.scattering_apply(phi)?;
    let (wm, _) = sys.wave_operator_apply(phi, Direction::Minus)?;
    let ew_direct = t.expectation(&s_phi)? - t.expectation(phi)?;
    let ew_fiber = match table {
        Some(tab) => Some(ew_expectation_fiber(tab, phi)?),
        None => None,
    };
    let floor_mass_out =
        sys.free().mass_below_speed(&s_phi, t.v_min()) / s_phi.norm_sq();

    let mut records = Vec::with_capacity(r_list.len());
    let mut sym = Vec::new();
    let mut nsym = Vec::new();
    let mut free = Vec::new();
    let mut free_gap = Vec::new();
    let mut elastic = Vec::new();
    let mut conclusive = true;
    for &r in r_list {
        let n_max = auto_n_max(sys.free(), f, r, phi)?;
        let rec = sojourn_record(sys, f, r, phi, &s_phi, &wm, n_max)?;
        let aux = tau_free(sys.free(), f, r, phi, &s_phi, n_max)?;
        conclusive = conclusive && rec.conclusive && aux.conclusive;
        sym.push(rec.tau_sym());
        nsym.push(rec.tau_nsym());
        free.push(aux.value);
        free_gap.push((rec.tau_sym() - aux.value).abs());
        elastic.push(rec.free_out - rec.free_in);
        records.push(rec);
    }

    let k = r_list.len();
    let ext = |y: &[F]| -> Result<(F, F)> {
        let last = richardson_pair(r_list[k - 2], y[k - 2], r_list[k - 1], y[k - 1])?;
        let prev = richardson_pair(r_list[k - 3], y[k - 3], r_list[k - 2], y[k - 2])?;
        Ok((last, (last - prev).abs()))
    };
    let (extrapolated_sym, spread_sym) = ext(&sym)?;
    let (extrapolated_nsym, spread_nsym) = ext(&nsym)?;

    // one evolution step as the absolute scale floor for near-zero delays
    let scale = ew_direct.abs().max(F::one());
    let verdict_sym = (extrapolated_sym - ew_direct).abs() <= tol_rel * scale
        && spread_sym <= F::lit(0.5) * tol_rel * scale;
    let verdict_nsym = (extrapolated_nsym - ew_direct).abs() <= tol_rel * scale
        && spread_nsym <= F::lit(0.5) * tol_rel * scale;
    // shrinking |τ^sym − τ^free|, allowing 10% slack at the smallest radius;
    // gaps at the summation noise floor are accepted outright, since
    // monotone decrease is not meaningful below it
    let verdict_free_gap = free_gap.windows(2).enumerate().all(|(i, w)| {
        let slack = if i == 0 { F::lit(1.1) } else { F::one() };
        w[1] <= slack * w[0] || w[1] <= F::lit(1e-6)
    });

    Ok(TimeDelayReport {
        records,
        tau_sym: sym,
        tau_nsym: nsym,
        tau_free: free,
        free_gap,
        elastic,
        extrapolated_sym,
        extrapolated_nsym,
        spread_sym,
        spread_nsym,
        ew_direct,
        ew_fiber,
        floor_mass_out,
        tol_rel,
        verdict_sym,
        verdict_nsym,
        verdict_free_gap,
        conclusive,
    })
}
