//! In-place iterative radix-2 FFT in double precision.
//!
//! Twiddles come from `libm` so results do not depend on the platform's
//! math library; butterflies run in a fixed order.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Complex = Complex { re: 0.0, im: 0.0 };

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

/// Precomputed twiddles and bit-reversal table for one transform size.
#[derive(Debug, Clone)]
pub struct Radix2Fft {
    size: usize,
    twiddles: Vec<Complex>,
    reversed: Vec<usize>,
}

impl Radix2Fft {
    pub fn new(size: usize) -> Radix2Fft {
        assert!(size.is_power_of_two(), "fft size must be a power of two");
        let twiddles = (0..size / 2)
            .map(|k| {
                let angle = -2.0 * std::f64::consts::PI * k as f64 / size as f64;
                Complex { re: libm::cos(angle), im: libm::sin(angle) }
            })
            .collect();
        let bits = size.trailing_zeros();
        let reversed = (0..size)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        Radix2Fft { size, twiddles, reversed }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn forward(&self, buf: &mut [Complex]) {
        assert_eq!(buf.len(), self.size);
        for i in 0..self.size {
            let j = self.reversed[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= self.size {
            let half = len / 2;
            let stride = self.size / len;
            for start in (0..self.size).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = buf[start + k];
                    let b = buf[start + k + half];
                    let t = Complex { re: b.re * w.re - b.im * w.im, im: b.re * w.im + b.im * w.re };
                    buf[start + k] = Complex { re: a.re + t.re, im: a.im + t.im };
                    buf[start + k + half] = Complex { re: a.re - t.re, im: a.im - t.im };
                }
            }
            len *= 2;
        }
    }
}
