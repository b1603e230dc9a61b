//! One-sided discrete Fourier analysis used to couple time-domain schedules
//! with frequency-domain circuit variables.
//!
//! A real series of length `N_t` is represented by `N_f = 1 + N_t / 2`
//! complex coefficients. Coefficient `κ` carries the weight `v(κ)/N_t` where
//! `v(κ) = 1` for the DC term (and the Nyquist term when `N_t` is even) and
//! `2` otherwise, so that the series is recovered as
//! `x(τ) = Σ_κ Re(X_κ · e^{j2πκτ/N_t})`.
//!
//! The transforms are applied as direct sums: horizons are a few hundred
//! points and the explicit rows are needed for constraint building anyway.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Historical and dispatch sample counts plus the sampling step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonConfig {
    /// Number of historical points (`N_ht`).
    pub n_hist: usize,
    /// Number of dispatch points (`N_dt`).
    pub n_dispatch: usize,
    /// Step length in seconds.
    pub step_seconds: f64,
}

impl HorizonConfig {
    pub fn new(n_hist: usize, n_dispatch: usize, step_seconds: f64) -> Self {
        Self {
            n_hist,
            n_dispatch,
            step_seconds,
        }
    }

    /// `N_t = N_ht + N_dt`.
    pub fn n_total(&self) -> usize {
        self.n_hist + self.n_dispatch
    }

    /// `N_f = 1 + ⌊N_t / 2⌋`.
    pub fn n_freq(&self) -> usize {
        1 + self.n_total() / 2
    }

    /// Angular frequency of component `k` in rad/s.
    pub fn omega(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / (self.n_total() as f64 * self.step_seconds)
    }

    pub fn omegas(&self) -> Vec<f64> {
        (0..self.n_freq()).map(|k| self.omega(k)).collect()
    }

    /// Absolute time indices of the dispatch interval.
    pub fn dispatch_indices(&self) -> std::ops::Range<usize> {
        self.n_hist..self.n_total()
    }

    pub fn hist_indices(&self) -> std::ops::Range<usize> {
        0..self.n_hist
    }

    pub fn spectrum(&self) -> Spectrum {
        Spectrum::new(self.n_total())
    }
}

/// Complex coefficients of a real series in the one-sided convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasorSeries {
    /// Length of the real series the coefficients describe.
    pub n_total: usize,
    pub coeffs: Vec<Complex64>,
}

impl PhasorSeries {
    pub fn zeros(n_total: usize) -> Self {
        Self {
            n_total,
            coeffs: vec![Complex64::new(0.0, 0.0); 1 + n_total / 2],
        }
    }

    pub fn n_freq(&self) -> usize {
        self.coeffs.len()
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            n_total: self.n_total,
            coeffs: self.coeffs.iter().map(|c| c * a).collect(),
        }
    }

    /// Evaluates the series at every integer time index `0..n_total`.
    pub fn synthesize(&self) -> Vec<f64> {
        let spec = Spectrum::new(self.n_total);
        (0..self.n_total)
            .map(|t| spec.inverse_at(&self.coeffs, t))
            .collect()
    }
}

/// Magnitude scaling `v(κ)`.
pub fn magnitude_weight(k: usize, n_total: usize) -> f64 {
    if k == 0 || 2 * k == n_total {
        1.0
    } else {
        2.0
    }
}

/// Frequency indices whose imaginary part is forced to zero.
pub fn freedom_mask(n_total: usize) -> Vec<usize> {
    if n_total.is_multiple_of(2) && n_total > 0 {
        vec![0, n_total / 2]
    } else {
        vec![0]
    }
}

/// Precomputed twiddle table for a fixed series length.
#[derive(Debug, Clone)]
pub struct Spectrum {
    n_total: usize,
    // unit roots w^m for m in 0..n_total, w = e^{j2π/N_t}
    roots: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(n_total: usize) -> Self {
        assert!(n_total >= 1, "series length must be positive");
        let roots = (0..n_total)
            .map(|m| {
                let theta = 2.0 * PI * m as f64 / n_total as f64;
                Complex64::new(theta.cos(), theta.sin())
            })
            .collect();
        Self { n_total, roots }
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn n_freq(&self) -> usize {
        1 + self.n_total / 2
    }

    /// `w^(τκ)`, reduced modulo `N_t` so large products stay exact.
    pub fn root(&self, t: usize, k: usize) -> Complex64 {
        self.roots[(t % self.n_total) * (k % self.n_total) % self.n_total]
    }

    pub fn forward(&self, series: &[f64]) -> PhasorSeries {
        assert_eq!(series.len(), self.n_total, "series length mismatch");
        let n = self.n_total as f64;
        let coeffs = (0..self.n_freq())
            .map(|k| {
                let acc: Complex64 = series
                    .iter()
                    .enumerate()
                    .map(|(t, &x)| self.root(t, k).conj() * x)
                    .sum();
                acc * (magnitude_weight(k, self.n_total) / n)
            })
            .collect();
        PhasorSeries {
            n_total: self.n_total,
            coeffs,
        }
    }

    /// `Σ_κ Re(X_κ w^(τκ))`. The index may exceed `N_t` (periodic extension).
    pub fn inverse_at(&self, coeffs: &[Complex64], t: usize) -> f64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| (c * self.root(t, k)).re)
            .sum()
    }

    /// Complex IDFT row `[w^(τ·0), …, w^(τ·(N_f−1))]`.
    pub fn idft_row(&self, t: usize) -> Vec<Complex64> {
        (0..self.n_freq()).map(|k| self.root(t, k)).collect()
    }
}

pub fn forward_dft(series: &[f64]) -> PhasorSeries {
    Spectrum::new(series.len()).forward(series)
}

pub fn inverse_dft(phasors: &PhasorSeries, t: usize) -> f64 {
    Spectrum::new(phasors.n_total).inverse_at(&phasors.coeffs, t)
}

pub fn idft_row(n_total: usize, t: usize) -> Vec<Complex64> {
    Spectrum::new(n_total).idft_row(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn assert_coeffs(got: &PhasorSeries, want: &[(f64, f64)]) {
        assert_eq!(got.coeffs.len(), want.len());
        for (c, &(re, im)) in got.coeffs.iter().zip(want) {
            assert_abs_diff_eq!(c.re, re, epsilon = 1e-12);
            assert_abs_diff_eq!(c.im, im, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_series() {
        let p = forward_dft(&[1.0, 1.0, 1.0, 1.0]);
        assert_coeffs(&p, &[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0)]);
    }

    #[test]
    fn alternating_series() {
        let p = forward_dft(&[1.0, 0.0, 1.0, 0.0]);
        assert_coeffs(&p, &[(0.5, 0.0), (0.0, 0.0), (0.5, 0.0)]);
        let back: Vec<f64> = (0..4).map(|t| inverse_dft(&p, t)).collect();
        for (a, b) in back.iter().zip([1.0, 0.0, 1.0, 0.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn spike_series() {
        let p = forward_dft(&[1.0, 0.0, 0.0, 0.0]);
        assert_coeffs(&p, &[(0.25, 0.0), (0.5, 0.0), (0.25, 0.0)]);
    }

    #[test]
    fn zero_phasors_give_zero_series() {
        let p = PhasorSeries::zeros(7);
        assert!(p.synthesize().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mask_sizes() {
        assert_eq!(freedom_mask(4), vec![0, 2]);
        assert_eq!(freedom_mask(5), vec![0]);
        for n in 1..50 {
            let nf = 1 + n / 2;
            assert_eq!(2 * nf - freedom_mask(n).len(), n);
        }
    }

    #[test]
    fn first_idft_row_is_ones() {
        let row = idft_row(9, 0);
        assert_eq!(row.len(), 5);
        assert!(row.iter().all(|c| (c - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn idft_rows_reconstruct_basis() {
        // Re(row(τ) · forward(e_s)) = δ_{τ s}
        for n in [1usize, 2, 5, 8] {
            let spec = Spectrum::new(n);
            for s in 0..n {
                let mut e = vec![0.0; n];
                e[s] = 1.0;
                let p = spec.forward(&e);
                for t in 0..n {
                    let v: f64 = spec
                        .idft_row(t)
                        .iter()
                        .zip(&p.coeffs)
                        .map(|(w, c)| (w * c).re)
                        .sum();
                    let want = if s == t { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(v, want, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn periodic_extension() {
        let p = forward_dft(&[0.3, -1.2, 4.0, 2.2, 0.1]);
        for t in 0..5 {
            assert_eq!(inverse_dft(&p, t), inverse_dft(&p, t + 5));
        }
    }

    #[test]
    fn horizon_counts() {
        let h = HorizonConfig::new(96, 96, 900.0);
        assert_eq!(h.n_total(), 192);
        assert_eq!(h.n_freq(), 97);
        assert_abs_diff_eq!(h.omega(1), 2.0 * PI / (192.0 * 900.0), epsilon = 1e-18);
        assert_eq!(h.dispatch_indices(), 96..192);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip(xs in prop::collection::vec(-1e3f64..1e3, 1..64)) {
                let p = forward_dft(&xs);
                for (t, x) in xs.iter().enumerate() {
                    prop_assert!((inverse_dft(&p, t) - x).abs() < 1e-9);
                }
            }

            #[test]
            fn dc_and_nyquist_are_real(xs in prop::collection::vec(-10f64..10.0, 1..40)) {
                let p = forward_dft(&xs);
                for k in freedom_mask(xs.len()) {
                    prop_assert!(p.coeffs[k].im.abs() < 1e-12);
                }
            }

            #[test]
            fn parseval(xs in prop::collection::vec(-10f64..10.0, 1..40)) {
                // (1/N) Σ x² = Σ_κ |X_κ|² / v(κ)
                let n = xs.len();
                let p = forward_dft(&xs);
                let lhs: f64 = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
                let rhs: f64 = p.coeffs.iter().enumerate()
                    .map(|(k, c)| c.norm_sqr() / magnitude_weight(k, n))
                    .sum();
                prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1e-12));
            }

            #[test]
            fn linearity(
                xs in prop::collection::vec(-10f64..10.0, 6),
                ys in prop::collection::vec(-10f64..10.0, 6),
                a in -3f64..3.0,
                b in -3f64..3.0,
            ) {
                let zs: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| a * x + b * y).collect();
                let (px, py, pz) = (forward_dft(&xs), forward_dft(&ys), forward_dft(&zs));
                for k in 0..pz.coeffs.len() {
                    let lin = px.coeffs[k] * a + py.coeffs[k] * b;
                    prop_assert!((lin - pz.coeffs[k]).norm() < 1e-12);
                }
            }
        }
    }
}
