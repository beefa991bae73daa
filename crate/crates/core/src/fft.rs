//! Unitary transform between the position and momentum representations.
//!
//! Conventions per axis, with `x_k = (k - N/2) h` and `p_m = (m - N/2) 2π/(N h)`:
//!
//! ```text
//! φ̂(p_m) = h/√(2π) Σ_k e^{-i p_m x_k} φ(x_k)
//! φ(x_k) = Δp/√(2π) Σ_m e^{+i p_m x_k} φ̂(p_m)
//! ```
//!
//! which is the Riemann-sum discretization of the continuum Fourier pair and is
//! exactly unitary between the weighted norms `h^{d/2}‖·‖_{ℓ²}` and
//! `Δp^{d/2}‖·‖_{ℓ²}`. The phase `e^{-i p_m x_k}` factors into a plain DFT
//! with `(-1)^k` / `(-1)^m` twiddles and a global sign `(-1)^{N/2}`.

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::scalar::Scalar;

/// Applies the forward (position → momentum) or inverse transform in place to a
/// `d`-dimensional array of extent `n` per axis, stored row-major.
pub fn transform_nd<F: Scalar>(data: &mut [Complex<F>], dimension: usize, n: usize, h: F, forward: bool) {
    assert_eq!(data.len(), n.pow(dimension as u32));
    let mut planner = FftPlanner::new();
    let fft = if forward {
        planner.plan_fft_forward(n)
    } else {
        planner.plan_fft_inverse(n)
    };

    let two_pi = F::lit(2.0) * F::PI();
    let dp = two_pi / (F::lit(n as f64) * h);
    let scale = if forward { h } else { dp } / two_pi.sqrt();
    // Global phase e^{∓iπN/2} = (-1)^{N/2}, real for even N.
    let global = if (n / 2) % 2 == 0 { scale } else { -scale };

    let mut line = vec![Complex::new(F::zero(), F::zero()); n];
    let mut scratch = vec![Complex::new(F::zero(), F::zero()); fft.get_inplace_scratch_len()];

    for axis in 0..dimension {
        let stride = n.pow((dimension - 1 - axis) as u32);
        let block = stride * n;
        let blocks = data.len() / block;
        for b in 0..blocks {
            for offset in 0..stride {
                let base = b * block + offset;
                for k in 0..n {
                    let mut v = data[base + k * stride];
                    if k % 2 == 1 {
                        v = -v;
                    }
                    line[k] = v;
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (m, out) in line.iter().enumerate() {
                    let mut v = *out * global;
                    if m % 2 == 1 {
                        v = -v;
                    }
                    data[base + m * stride] = v;
                }
            }
        }
    }
}
