//! Localisation bumps `f`, their renormalised dilation averages `R_f` with
//! gradients, and the lattice sum `F_{ν,f}`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::transition;
use crate::quad::integrate;
use crate::scalar::Scalar;

/// Absolute tolerance for the averaged-localisation quadrature.
pub const QUAD_TOL: f64 = 1e-9;

/// Radial bump equal to 1 on `|x| ≤ 1`, vanishing for `|x| ≥ 1 + w`, with a
/// smooth transition of width `w`.
#[derive(Debug, Clone, Serialize)]
pub struct LocalisationFunction<F> {
    width: F,
    radial: bool,
}

impl<F: Scalar> LocalisationFunction<F> {
    pub fn width(&self) -> F {
        self.width
    }

    pub fn radial(&self) -> bool {
        self.radial
    }

    /// Radial profile at distance `rho ≥ 0`.
    pub fn profile(&self, rho: F) -> F {
        if rho <= F::one() {
            F::one()
        } else {
            transition((rho - F::one()) / self.width)
        }
    }

    /// Derivative of the radial profile.
    pub fn profile_derivative(&self, rho: F) -> F {
        if rho <= F::one() || rho >= F::one() + self.width {
            return F::zero();
        }
        let s = (rho - F::one()) / self.width;
        let one = F::one();
        let d = one - s * s;
        self.profile(rho) * (-F::lit(2.0) * s / (d * d)) / self.width
    }

    /// Evaluates `f(x)`.
    pub fn eval(&self, x: &[F]) -> F {
        let rho = x.iter().map(|&v| v * v).sum::<F>().sqrt();
        self.profile(rho)
    }
}

/// Builds the default radial bump with transition width `w`.
pub fn make_bump<F: Scalar>(w: F) -> Result<LocalisationFunction<F>> {
    if w <= F::zero() {
        return Err(Error::Precondition("bump width must be positive".into()));
    }
    Ok(LocalisationFunction { width: w, radial: true })
}

fn radius<F: Scalar>(x: &[F]) -> Result<F> {
    let a = x.iter().map(|&v| v * v).sum::<F>().sqrt();
    if a <= F::zero() {
        return Err(Error::Singular("averaged localisation is undefined at x = 0".into()));
    }
    Ok(a)
}

/// Renormalised dilation average
/// `R_f(x) = ∫₀^∞ dμ/μ (f(μx) − χ_{[0,1]}(μ))`.
///
/// The integrand vanishes for `μ ≤ min(1/|x|, 1)` and `μ ≥ max((1+w)/|x|, 1)`;
/// the remaining finite range is integrated in the variable `t = log μ`
/// (which absorbs the `dμ/μ` measure), split at the breakpoints `1/|x|`,
/// `(1+w)/|x|` and `1`.
pub fn averaged_localisation<F: Scalar>(f: &LocalisationFunction<F>, x: &[F]) -> Result<F> {
    let a = radius(x)?;
    let w = f.width;
    let lo = (F::one() / a).min(F::one());
    let hi = ((F::one() + w) / a).max(F::one());
    let mut breaks = vec![lo, hi, F::one() / a, (F::one() + w) / a, F::one()];
    breaks.retain(|&b| b >= lo && b <= hi);
    breaks.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let tol = F::lit(QUAD_TOL);
    let mut total = F::zero();
    for pair in breaks.windows(2) {
        let (t0, t1) = (pair[0].ln(), pair[1].ln());
        if t1 <= t0 {
            continue;
        }
        total = total
            + integrate(
                &mut |t: F| {
                    let mu = t.exp();
                    let chi = if mu <= F::one() { F::one() } else { F::zero() };
                    f.profile(mu * a) - chi
                },
                t0,
                t1,
                tol,
            );
    }
    Ok(total)
}

/// Gradient `(∇R_f)(x)`; the radial family admits the closed form `-x/|x|²`.
pub fn grad_averaged_localisation<F: Scalar>(f: &LocalisationFunction<F>, x: &[F]) -> Result<Vec<F>> {
    let a = radius(x)?;
    if f.radial {
        return Ok(x.iter().map(|&v| -v / (a * a)).collect());
    }
    grad_averaged_quadrature(f, x)
}

/// Quadrature route `∂_j R_f(x) = ∫₀^∞ dμ (∂_j f)(μx)`, kept as the
/// independent cross-check of the closed form.
pub fn grad_averaged_quadrature<F: Scalar>(f: &LocalisationFunction<F>, x: &[F]) -> Result<Vec<F>> {
    let a = radius(x)?;
    let lo = F::one() / a;
    let hi = (F::one() + f.width) / a;
    let tol = F::lit(QUAD_TOL);
    let mut out = Vec::with_capacity(x.len());
    for &xj in x {
        // (∂_j f)(μx) = profile'(μ|x|) · x_j / |x| for the radial family.
        let v = integrate(&mut |mu: F| f.profile_derivative(mu * a) * xj / a, lo, hi, tol);
        out.push(v);
    }
    Ok(out)
}

/// Lattice sum `F_{ν,f}(x) = Σ_{n∈ℤ} f(ν n x)`, a finite sum by compact support.
pub fn lattice_sum<F: Scalar>(f: &LocalisationFunction<F>, nu: F, x: &[F]) -> Result<F> {
    if nu <= F::zero() {
        return Err(Error::Precondition("ν must be positive".into()));
    }
    let a = radius(x)?;
    let n_limit = ((F::one() + f.width) / (nu * a))
        .floor()
        .to_f64()
        .unwrap_or(0.0) as i64;
    let mut total = F::zero();
    let mut y = vec![F::zero(); x.len()];
    for n in -n_limit..=n_limit {
        let s = nu * F::lit(n as f64);
        for (yi, &xi) in y.iter_mut().zip(x) {
            *yi = s * xi;
        }
        total = total + f.eval(&y);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn bump() -> LocalisationFunction<f64> {
        make_bump(1.0).unwrap()
    }

    #[test]
    fn bump_plateau_support_and_range() {
        let f = bump();
        assert_eq!(f.eval(&[0.0]), 1.0);
        assert_eq!(f.eval(&[0.7]), 1.0);
        assert_eq!(f.eval(&[1.0]), 1.0);
        assert_eq!(f.eval(&[2.0]), 0.0);
        assert_eq!(f.eval(&[2.0, 0.0]), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let v = f.eval(&x);
            assert!((0.0..=1.0).contains(&v));
            // evenness is exact by construction
            assert_eq!(v, f.eval(&[-x[0], -x[1]]));
        }
        assert!(make_bump::<f64>(0.0).is_err());
    }

    #[test]
    fn averaged_localisation_homogeneity() {
        // R_f(t x) = R_f(x) − log t.
        let f = bump();
        for &base in &[0.3, 1.0, 2.5] {
            let r1 = averaged_localisation(&f, &[base]).unwrap();
            for &t in &[2.0, 5.0, 11.0] {
                let r2 = averaged_localisation(&f, &[base * t]).unwrap();
                assert_relative_eq!(r2, r1 - t.ln(), epsilon = 5e-9);
            }
        }
    }

    #[test]
    fn averaged_localisation_even_and_singular_origin() {
        let f = bump();
        let a = averaged_localisation(&f, &[1.7]).unwrap();
        let b = averaged_localisation(&f, &[-1.7]).unwrap();
        assert_eq!(a, b);
        assert!(averaged_localisation(&f, &[0.0]).is_err());
    }

    #[test]
    fn averaged_localisation_matches_fixed_grid_reference() {
        // Independent fixed-grid Simpson quadrature in t = log μ at x = 2 e₁.
        let f = bump();
        let x = [2.0_f64];
        let a = 2.0;
        let (lo, hi) = ((1.0_f64 / a).min(1.0), (2.0_f64 / a).max(1.0));
        let integrand = |t: f64| {
            let mu = t.exp();
            let chi = if mu <= 1.0 { 1.0 } else { 0.0 };
            f.profile(mu * a) - chi
        };
        // Simpson with Richardson refinement over [log lo, log hi]; split at μ=1/a..1
        // breakpoints to avoid the χ jump (here the jump sits at μ=1 = hi boundary,
        // interior point μ=1/a=0.5 where the profile leaves its plateau).
        let simpson = |n: usize, t0: f64, t1: f64| {
            let h = (t1 - t0) / n as f64;
            let mut s = integrand(t0) + integrand(t1);
            for i in 1..n {
                let c = if i % 2 == 0 { 2.0 } else { 4.0 };
                s += c * integrand(t0 + i as f64 * h);
            }
            s * h / 3.0
        };
        let seg = |t0: f64, t1: f64| {
            let coarse = simpson(1 << 12, t0, t1);
            let fine = simpson(1 << 13, t0, t1);
            fine + (fine - coarse) / 15.0
        };
        let reference = seg(lo.ln(), 0.0) + seg(0.0, hi.ln());
        let value = averaged_localisation(&f, &x).unwrap();
        assert_relative_eq!(value, reference, epsilon = 1e-8);
    }

    #[test]
    fn gradient_closed_form_and_euler_relation() {
        let f = bump();
        let g = grad_averaged_localisation(&f, &[2.0, 0.0]).unwrap();
        assert_relative_eq!(g[0], -0.5, epsilon = 1e-15);
        assert_relative_eq!(g[1], 0.0, epsilon = 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x = [rng.gen_range(0.1..4.0), rng.gen_range(-4.0..4.0)];
            let g = grad_averaged_localisation(&f, &x).unwrap();
            // x·∇R_f(x) = -1, exact for the closed form.
            let dot = x[0] * g[0] + x[1] * g[1];
            assert_relative_eq!(dot, -1.0, epsilon = 1e-12);
            // scaling (∂R_f)(t x) = t⁻¹ (∂R_f)(x)
            let t = 3.0;
            let gs = grad_averaged_localisation(&f, &[t * x[0], t * x[1]]).unwrap();
            assert_relative_eq!(gs[0], g[0] / t, epsilon = 1e-12);
            assert_relative_eq!(gs[1], g[1] / t, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_quadrature_matches_closed_form_and_finite_difference() {
        let f = bump();
        for &x in &[0.4, 1.3, 2.6] {
            let q = grad_averaged_quadrature(&f, &[x]).unwrap()[0];
            assert_relative_eq!(q, -1.0 / x, epsilon = 1e-8);
            let eps = 1e-5;
            let fd = (averaged_localisation(&f, &[x + eps]).unwrap()
                - averaged_localisation(&f, &[x - eps]).unwrap())
                / (2.0 * eps);
            assert_relative_eq!(q, fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn lattice_sum_cases() {
        let f = bump();
        // ν|x| > 1+w leaves only the n=0 term.
        assert_relative_eq!(lattice_sum(&f, 3.0, &[1.0]).unwrap(), 1.0);
        // Evenness in x.
        let a = lattice_sum(&f, 0.11, &[1.3]).unwrap();
        let b = lattice_sum(&f, 0.11, &[-1.3]).unwrap();
        assert_eq!(a, b);
        // Radial dependence only through |x|.
        let c = lattice_sum(&f, 0.11, &[1.3, 0.0]).unwrap();
        let e = lattice_sum(&f, 0.11, &[0.0, 1.3]).unwrap();
        assert_relative_eq!(a, c, epsilon = 1e-14);
        assert_relative_eq!(c, e, epsilon = 1e-14);
        // ν|x| → 0: ν|x|·F → ∫ f(t e₁) dt over the ray through x.
        let f_line = {
            let fr = f.clone();
            move |t: f64| fr.profile(t.abs())
        };
        let line_integral = integrate(&mut f_line.clone(), -2.0, 2.0, 1e-10);
        for &nu in &[1e-2, 1e-3] {
            let v = lattice_sum(&f, nu, &[1.0]).unwrap();
            assert_relative_eq!(v * nu, line_integral, max_relative = 2.0 * nu);
        }
    }
}
