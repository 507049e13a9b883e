//! Thin wrappers over `libm` so the rest of the crate reads like ordinary
//! floating point code without `std`.

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn expm1(x: f64) -> f64 {
    libm::expm1(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn sin_cos(x: f64) -> (f64, f64) {
    libm::sincos(x)
}

#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

/// `x - round(x)`, the representative of `x` modulo 1 in `[-1/2, 1/2)`.
#[inline]
pub fn wrap_half(x: f64) -> f64 {
    let y = x - floor(x + 0.5);
    if y >= 0.5 {
        y - 1.0
    } else {
        y
    }
}

/// Exponential integral `E1(x) = ∫_x^∞ e^{-t}/t dt` for `x > 0`.
///
/// Power series below 1, Lentz continued fraction above.
pub fn exp_integral_e1(x: f64) -> f64 {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    debug_assert!(x > 0.0);
    if x <= 1.0 {
        // E1(x) = -γ - ln x + Σ_{k≥1} (-1)^{k+1} x^k / (k·k!)
        let mut sum = 0.0;
        let mut term = 1.0;
        let mut k = 1.0;
        loop {
            term *= -x / k;
            let add = -term / k;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
            k += 1.0;
            if k > 200.0 {
                break;
            }
        }
        -EULER_GAMMA - ln(x) + sum
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * exp(-x)
    }
}

/// `E1(x) + ln(x)`, finite at `x = 0` where it equals `-γ`.
pub fn exp_integral_e1_plus_log(x: f64) -> f64 {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        let mut k = 1.0;
        while k < 200.0 {
            term *= -x / k;
            let add = -term / k;
            sum += add;
            if add.abs() <= 1e-17 * sum.abs().max(1e-300) {
                break;
            }
            k += 1.0;
        }
        -EULER_GAMMA + sum
    } else {
        exp_integral_e1(x) + ln(x)
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> alloc::vec::Vec<(f64, f64)> {
    let mut out = alloc::vec::Vec::with_capacity(n);
    let nf = n as f64;
    for i in 0..n {
        let mut x = cos(core::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5));
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let (pn, pnm1) = if n == 1 { (x, 1.0) } else { (p1, p0) };
            dp = nf * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn e1_reference_values() {
        // Abramowitz & Stegun table 5.1
        assert!((exp_integral_e1(0.5) - 0.559_773_594_776_160_8).abs() < 1e-14);
        assert!((exp_integral_e1(1.0) - 0.219_383_934_395_520_3).abs() < 1e-14);
        assert!((exp_integral_e1(2.0) - 0.048_900_510_708_061_13).abs() < 1e-15);
        assert!((exp_integral_e1(5.0) - 0.001_148_295_591_275_325_8).abs() < 1e-16);
    }

    #[test]
    fn e1_plus_log_is_continuous() {
        let a = exp_integral_e1_plus_log(1.0 - 1e-12);
        let b = exp_integral_e1_plus_log(1.0 + 1e-12);
        assert!((a - b).abs() < 1e-11);
        assert!((exp_integral_e1_plus_log(0.0) + 0.577_215_664_901_532_9).abs() < 1e-15);
    }

    #[test]
    fn wrap_half_range() {
        assert_eq!(wrap_half(0.5), -0.5);
        assert!((wrap_half(0.7) + 0.3).abs() < 1e-15);
        assert!((wrap_half(-0.8) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = gauss_legendre(8);
        let s: f64 = rule.iter().map(|&(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
    }
}
