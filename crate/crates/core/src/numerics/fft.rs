//! Forward and inverse discrete Fourier transforms.
//!
//! Power-of-two lengths use an iterative radix-2 Cooley-Tukey transform;
//! any other length falls back to the direct `O(d^2)` sum. The forward
//! transform uses the `e^(-2 pi i k n / d)` kernel with no scaling; the
//! inverse divides by `d`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Full complex spectrum of a length-`d` signal.
pub type Spectrum = Vec<Complex64>;

/// Conjugate-symmetry tolerance accepted by [`ifft`], relative to the
/// spectrum's largest magnitude (floored at 1).
pub const SYMMETRY_TOLERANCE: f64 = 1e-6;

pub fn fft(x: &[f64]) -> Spectrum {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(&mut buf, false);
    buf
}

pub fn fft_complex(x: &[Complex64]) -> Spectrum {
    let mut buf = x.to_vec();
    transform(&mut buf, false);
    buf
}

/// Inverse transform of the spectrum of a real signal.
///
/// The spectrum must be conjugate-symmetric (`X[k] = conj(X[d-k])`); the
/// imaginary residue of the reconstruction is dropped once that holds.
pub fn ifft(spectrum: &[Complex64]) -> Result<Vec<f64>> {
    let asym = max_asymmetry(spectrum);
    let scale = spectrum.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::SpectrumIntegrity {
            max_asymmetry: asym,
        });
    }
    Ok(ifft_complex(spectrum).into_iter().map(|z| z.re).collect())
}

pub fn ifft_complex(spectrum: &[Complex64]) -> Vec<Complex64> {
    let mut buf = spectrum.to_vec();
    transform(&mut buf, true);
    let n = buf.len().max(1) as f64;
    for z in &mut buf {
        *z /= n;
    }
    buf
}

pub fn max_asymmetry(spectrum: &[Complex64]) -> f64 {
    let d = spectrum.len();
    (0..d)
        .map(|k| (spectrum[k] - spectrum[(d - k) % d].conj()).norm())
        .fold(0.0, f64::max)
}

fn transform(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(buf, inverse);
    } else {
        let out = direct(buf, inverse);
        buf.copy_from_slice(&out);
    }
}

fn direct(x: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = x.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, &v)| {
                    // Reduce k*j mod n first so the angle stays small.
                    let angle = sign * 2.0 * PI * ((k * j) % n) as f64 / n as f64;
                    v * Complex64::from_polar(1.0, angle)
                })
                .sum()
        })
        .collect()
}

fn radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // Twiddles computed directly per index rather than by repeated
        // multiplication, which drifts at d = 128 and beyond.
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / len as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let even = buf[start + k];
                let odd = buf[start + k + half] * twiddles[k];
                buf[start + k] = even + odd;
                buf[start + k + half] = even - odd;
            }
        }
        len <<= 1;
    }
}
