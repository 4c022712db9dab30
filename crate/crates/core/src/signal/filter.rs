//! Butterworth band-pass design by bilinear transform, and zero-phase
//! (forward-backward) application.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Channel, SensorBurst, SignalError};

/// A discrete band-pass realization `b(z) / a(z)` with `a[0] == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDesign {
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub rate_hz: f64,
    pub b: Vec<f64>,
    pub a: Vec<f64>,
}

struct Zpk {
    z: Vec<Complex64>,
    p: Vec<Complex64>,
    k: f64,
}

/// Designs an order-`order` digital Butterworth band-pass filter.
///
/// The band edges are pre-warped so the digital response at `low_hz` and
/// `high_hz` matches the analog prototype's -3 dB points. The resulting
/// polynomial has degree `2 * order`.
pub fn design_bandpass(
    order: usize,
    low_hz: f64,
    high_hz: f64,
    rate_hz: f64,
) -> Result<FilterDesign, SignalError> {
    if order == 0 {
        return Err(SignalError::InvalidOrder);
    }
    let valid = low_hz.is_finite()
        && high_hz.is_finite()
        && rate_hz.is_finite()
        && 0.0 < low_hz
        && low_hz < high_hz
        && high_hz < rate_hz / 2.0;
    if !valid {
        return Err(SignalError::InvalidBand {
            low_hz,
            high_hz,
            rate_hz,
        });
    }

    let fs2 = 2.0 * rate_hz;
    let warp = |f: f64| fs2 * libm::tan(PI * f / rate_hz);
    let (w_lo, w_hi) = (warp(low_hz), warp(high_hz));
    let bw = w_hi - w_lo;
    let wo = libm::sqrt(w_lo * w_hi);

    let proto = butter_prototype(order);
    let analog = lowpass_to_bandpass(&proto, wo, bw);
    let digital = bilinear(&analog, fs2);

    if digital.p.iter().any(|p| p.norm() >= 1.0) {
        return Err(SignalError::Unstable);
    }

    let a = real_poly(&digital.p);
    let b: Vec<f64> = real_poly(&digital.z).iter().map(|c| c * digital.k).collect();

    Ok(FilterDesign {
        order,
        low_hz,
        high_hz,
        rate_hz,
        b,
        a,
    })
}

fn butter_prototype(order: usize) -> Zpk {
    let n = order as i64;
    let p = (0..n)
        .map(|i| {
            let m = (-n + 1 + 2 * i) as f64;
            -Complex64::new(0.0, PI * m / (2.0 * n as f64)).exp()
        })
        .collect();
    Zpk {
        z: Vec::new(),
        p,
        k: 1.0,
    }
}

fn lowpass_to_bandpass(lp: &Zpk, wo: f64, bw: f64) -> Zpk {
    let degree = lp.p.len() - lp.z.len();
    let half = bw / 2.0;
    let shift = |r: &Complex64| -> (Complex64, Complex64) {
        let s = *r * half;
        let d = (s * s - wo * wo).sqrt();
        (s + d, s - d)
    };
    let mut z = Vec::with_capacity(2 * lp.z.len() + degree);
    for r in &lp.z {
        let (a, b) = shift(r);
        z.push(a);
        z.push(b);
    }
    z.extend(core::iter::repeat_n(Complex64::new(0.0, 0.0), degree));
    let mut p = Vec::with_capacity(2 * lp.p.len());
    for r in &lp.p {
        let (a, b) = shift(r);
        p.push(a);
        p.push(b);
    }
    Zpk {
        z,
        p,
        k: lp.k * libm::pow(bw, degree as f64),
    }
}

fn bilinear(an: &Zpk, fs2: f64) -> Zpk {
    let degree = an.p.len() - an.z.len();
    let map = |r: &Complex64| (fs2 + *r) / (fs2 - *r);
    let mut z: Vec<Complex64> = an.z.iter().map(map).collect();
    z.extend(core::iter::repeat_n(Complex64::new(-1.0, 0.0), degree));
    let p = an.p.iter().map(map).collect();
    let num: Complex64 = an.z.iter().map(|r| fs2 - *r).product();
    let den: Complex64 = an.p.iter().map(|r| fs2 - *r).product();
    Zpk {
        z,
        p,
        k: an.k * (num / den).re,
    }
}

/// Expands `prod (x - r)` into descending-power coefficients; conjugate
/// pairs make the imaginary parts vanish.
fn real_poly(roots: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, ci) in c.iter().enumerate() {
            next[i] += *ci;
            next[i + 1] -= *ci * *r;
        }
        c = next;
    }
    c.iter().map(|x| x.re).collect()
}

impl FilterDesign {
    /// Complex frequency response of a single pass at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.rate_hz;
        let zinv = Complex64::new(0.0, -w).exp();
        // coefficients are stored in ascending powers of z^-1
        let eval = |c: &[f64]| {
            c.iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &x| acc * zinv + x)
        };
        eval(&self.b) / eval(&self.a)
    }

    /// Magnitude of a single pass.
    pub fn gain(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    /// Samples of edge padding used by [`filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * self.a.len().max(self.b.len())
    }

    /// Shortest accepted input: three transient lengths of one second each.
    pub fn min_len(&self) -> usize {
        let transient = libm::ceil(self.rate_hz) as usize;
        (3 * transient).max(self.pad_len() + 1)
    }
}

/// Direct-form II transposed IIR filter with optional initial state.
pub fn lfilter(b: &[f64], a: &[f64], x: &[f64], zi: Option<&[f64]>) -> Vec<f64> {
    let n = a.len().max(b.len());
    let a0 = a[0];
    let bn: Vec<f64> = (0..n).map(|i| b.get(i).copied().unwrap_or(0.0) / a0).collect();
    let an: Vec<f64> = (0..n).map(|i| a.get(i).copied().unwrap_or(0.0) / a0).collect();
    let mut z = vec![0.0; n.saturating_sub(1)];
    if let Some(init) = zi {
        z.copy_from_slice(init);
    }
    let mut y = Vec::with_capacity(x.len());
    for &xi in x {
        let yi = bn[0] * xi + z.first().copied().unwrap_or(0.0);
        for j in 1..n {
            let next = if j < n - 1 { z[j] } else { 0.0 };
            z[j - 1] = bn[j] * xi + next - an[j] * yi;
        }
        y.push(yi);
    }
    y
}

/// Steady-state initial conditions for a unit step input.
pub fn lfilter_zi(b: &[f64], a: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let a0 = a[0];
    let bn: Vec<f64> = (0..n).map(|i| b.get(i).copied().unwrap_or(0.0) / a0).collect();
    let an: Vec<f64> = (0..n).map(|i| a.get(i).copied().unwrap_or(0.0) / a0).collect();
    let m = n - 1;
    if m == 0 {
        return Vec::new();
    }
    // (I - companion(a)^T) zi = b[1:] - a[1:] * b[0]
    let mut mat = vec![vec![0.0; m]; m];
    for (i, row) in mat.iter_mut().enumerate() {
        row[i] += 1.0;
        // companion(a)^T: first column is -a[1:], superdiagonal ones.
        row[0] += an[i + 1];
        if i + 1 < m {
            row[i + 1] -= 1.0;
        }
    }
    let rhs: Vec<f64> = (1..n).map(|i| bn[i] - an[i] * bn[0]).collect();
    solve(mat, rhs)
}

fn solve(mut m: Vec<Vec<f64>>, mut r: Vec<f64>) -> Vec<f64> {
    let n = r.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| libm::fabs(m[i][col]).total_cmp(&libm::fabs(m[j][col])))
            .unwrap_or(col);
        m.swap(col, piv);
        r.swap(col, piv);
        let d = m[col][col];
        for row in col + 1..n {
            let f = m[row][col] / d;
            if f != 0.0 {
                for k in col..n {
                    m[row][k] -= f * m[col][k];
                }
                r[row] -= f * r[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (r[i] - s) / m[i][i];
    }
    x
}

/// Forward-backward filtering with odd-extension padding and steady-state
/// initial conditions. The result has zero phase and squared magnitude.
pub fn filtfilt(design: &FilterDesign, x: &[f64]) -> Result<Vec<f64>, SignalError> {
    let pad = design.pad_len();
    if x.len() < design.min_len() {
        return Err(SignalError::TooShort {
            len: x.len(),
            min: design.min_len(),
        });
    }
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }

    let zi = lfilter_zi(&design.b, &design.a);
    let scaled = |v: f64| -> Vec<f64> { zi.iter().map(|z| z * v).collect() };

    let fwd = lfilter(&design.b, &design.a, &ext, Some(&scaled(ext[0])));
    let mut rev: Vec<f64> = fwd.into_iter().rev().collect();
    let start = rev[0];
    rev = lfilter(&design.b, &design.a, &rev, Some(&scaled(start)));
    rev.reverse();
    Ok(rev[pad..pad + n].to_vec())
}

/// Applies the band-pass forward and backward to a PPG burst.
pub fn bandpass_filter(burst: &SensorBurst, design: &FilterDesign) -> Result<SensorBurst, SignalError> {
    if burst.channel != Channel::Ppg {
        return Err(SignalError::WrongChannel(burst.channel));
    }
    if (burst.rate_hz - design.rate_hz).abs() > 1e-9 {
        return Err(SignalError::RateMismatch {
            burst: burst.rate_hz,
            design: design.rate_hz,
        });
    }
    let samples = filtfilt(design, &burst.samples)?;
    Ok(SensorBurst {
        samples,
        ..burst.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db(x: f64) -> f64 {
        20.0 * libm::log10(x)
    }

    #[test]
    fn default_design_is_stable_with_expected_degree() {
        let d = design_bandpass(3, 0.7, 3.5, 20.0).unwrap();
        assert_eq!(d.a.len(), 7);
        assert_eq!(d.b.len(), 7);
        assert_eq!(d.a[0], 1.0);
    }

    #[test]
    fn passband_and_stopband_gain() {
        let d = design_bandpass(3, 0.7, 3.5, 20.0).unwrap();
        assert!(db(d.gain(1.5)).abs() < 1.0);
        assert!(db(d.gain(0.05)) < -30.0);
        // band edges sit at the -3 dB points
        assert!((db(d.gain(0.7)) + 3.0103).abs() < 1e-6);
        assert!((db(d.gain(3.5)) + 3.0103).abs() < 1e-6);
    }

    #[test]
    fn invalid_bands_rejected() {
        assert!(matches!(
            design_bandpass(3, 3.5, 0.7, 20.0),
            Err(SignalError::InvalidBand { .. })
        ));
        assert!(design_bandpass(3, 0.7, 10.0, 20.0).is_err());
        assert!(design_bandpass(3, 0.0, 3.5, 20.0).is_err());
        assert!(matches!(design_bandpass(0, 0.7, 3.5, 20.0), Err(SignalError::InvalidOrder)));
    }

    #[test]
    fn zi_gives_step_steady_state() {
        let d = design_bandpass(3, 0.7, 3.5, 20.0).unwrap();
        let zi = lfilter_zi(&d.b, &d.a);
        let y = lfilter(&d.b, &d.a, &[1.0; 50], Some(&zi));
        for v in y {
            // DC gain of a band-pass is zero
            assert!(v.abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn constant_input_is_removed() {
        let d = design_bandpass(3, 0.7, 3.5, 20.0).unwrap();
        let y = filtfilt(&d, &[1.0; 2400]).unwrap();
        let worst = y[20..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-3);
    }

    #[test]
    fn too_short_rejected() {
        let d = design_bandpass(3, 0.7, 3.5, 20.0).unwrap();
        assert!(matches!(
            filtfilt(&d, &[0.0; 30]),
            Err(SignalError::TooShort { .. })
        ));
        assert!(filtfilt(&d, &[0.0; 60]).is_ok());
    }
}
