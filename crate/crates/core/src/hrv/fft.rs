use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

/// In-place iterative radix-2 FFT. `buf.len()` must be a power of two.
pub(crate) fn fft(buf: &mut [Complex64]) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        let step = Complex64::new(libm::cos(ang), libm::sin(ang));
        // twiddles computed once per stage
        let mut tw = Vec::with_capacity(len / 2);
        let mut w = Complex64::new(1.0, 0.0);
        for k in 0..len / 2 {
            if k % 64 == 0 {
                let a = ang * k as f64;
                w = Complex64::new(libm::cos(a), libm::sin(a));
            }
            tw.push(w);
            w *= step;
        }
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let u = buf[start + k];
                let v = buf[start + k + len / 2] * tw[k];
                buf[start + k] = u + v;
                buf[start + k + len / 2] = u - v;
            }
        }
        len <<= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn matches_direct_dft() {
        let x: Vec<f64> = (0..64).map(|i| libm::sin(i as f64 * 0.37) + (i % 5) as f64).collect();
        let mut buf: Vec<Complex64> = x.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        fft(&mut buf);
        for k in 0..64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / 64.0;
                acc += Complex64::new(libm::cos(a), libm::sin(a)) * *v;
            }
            assert!((acc - buf[k]).norm() < 1e-9);
        }
    }

    #[test]
    fn impulse_is_flat() {
        let mut buf = vec![Complex64::new(0.0, 0.0); 8];
        buf[0] = Complex64::new(1.0, 0.0);
        fft(&mut buf);
        assert!(buf.iter().all(|c| (c.re - 1.0).abs() < 1e-12 && c.im.abs() < 1e-12));
    }
}
