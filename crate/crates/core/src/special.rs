//! Special functions: scaled Bessel functions of the first kind and the
//! scaled complementary error function.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Switchover between the power series and the Hankel expansion.
pub const BESSEL_SWITCH: f64 = 8.0;

/// `J_n(x) / x^n`, finite at `x = 0` where it equals `1 / (2^n n!)`.
pub fn bessel_j_scaled(n: u32, x: f64) -> f64 {
    let x = x.abs();
    if x < BESSEL_SWITCH {
        series_scaled(n, x)
    } else {
        bessel_j_hankel(n, x) / x.powi(n as i32)
    }
}

/// `J_n(x)` for `x >= 0`.
pub fn bessel_j(n: u32, x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax < BESSEL_SWITCH {
        series_scaled(n, ax) * ax.powi(n as i32)
    } else {
        bessel_j_hankel(n, ax)
    };
    if x < 0.0 && n % 2 == 1 {
        -v
    } else {
        v
    }
}

fn series_scaled(n: u32, x: f64) -> f64 {
    // sum_k (-1)^k (x/2)^{2k} / (2^n k! (n+k)!)
    let mut lead = 1.0;
    for j in 1..=n {
        lead /= 2.0 * j as f64;
    }
    let q = 0.25 * x * x;
    let mut term = lead;
    let mut sum = lead;
    for k in 1..200u32 {
        term *= -q / (k as f64 * (n + k) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

fn bessel_j_hankel(n: u32, x: f64) -> f64 {
    let mu = 4.0 * (n as f64).powi(2);
    let chi = x - (0.5 * n as f64 + 0.25) * PI;
    let mut p = 0.0;
    let mut q = 0.0;
    let mut a = 1.0_f64;
    let mut last = f64::INFINITY;
    for k in 0..60u32 {
        if k > 0 {
            let odd = (2 * k - 1) as f64;
            a *= (mu - odd * odd) / (k as f64 * 8.0 * x);
        }
        // Asymptotic series: stop at the smallest term.
        if a.abs() > last {
            break;
        }
        last = a.abs();
        match k % 4 {
            0 => p += a,
            1 => q += a,
            2 => p -= a,
            _ => q -= a,
        }
        if a.abs() < 1e-17 {
            break;
        }
    }
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// `erfc(x)`.
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Scaled complementary error function `exp(x^2) erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x < 2.0 {
        (x * x).exp() * erfc(x)
    } else {
        // Continued fraction erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
        let mut tail = x;
        for k in (1..80).rev() {
            tail = x + (k as f64 * 0.5) / tail;
        }
        1.0 / (PI.sqrt() * tail)
    }
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `Phi(z)` through erfc, accurate in both tails.
pub fn phi(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// `exp(theta) * Phi(z)` without overflow or underflow of the factors.
pub fn exp_times_phi(theta: f64, z: f64) -> f64 {
    if z < -3.0 {
        // Phi(z) = 0.5 erfcx(-z/sqrt2) exp(-z^2/2)
        0.5 * erfcx(-z * FRAC_1_SQRT_2) * (theta - 0.5 * z * z).exp()
    } else {
        theta.exp() * phi(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_known_values() {
        // Abramowitz & Stegun table 9.1
        assert!((bessel_j(0, 1.0) - 0.765_197_686_557_966_6).abs() < 1e-14);
        assert!((bessel_j(1, 1.0) - 0.440_050_585_744_933_5).abs() < 1e-14);
        assert!((bessel_j(1, 10.0) - 0.043_472_746_168_861_44).abs() < 1e-9);
        assert!((bessel_j(2, 5.0) - 0.046_565_116_277_752_2).abs() < 1e-12);
        assert!((bessel_j_scaled(1, 0.0) - 0.5).abs() < 1e-16);
        assert!((bessel_j_scaled(3, 0.0) - 1.0 / 48.0).abs() < 1e-16);
    }

    #[test]
    fn bessel_continuous_at_switch() {
        for n in 0..4 {
            let below = series_scaled(n, BESSEL_SWITCH - 1e-9) * (BESSEL_SWITCH - 1e-9).powi(n as i32);
            let above = bessel_j_hankel(n, BESSEL_SWITCH + 1e-9);
            assert!((below - above).abs() < 1e-7, "n={n}: {below} vs {above}");
        }
    }

    #[test]
    fn bessel_recurrence() {
        // J_{n-1}(x) + J_{n+1}(x) = (2n/x) J_n(x)
        for &x in &[0.3, 2.0, 7.5, 9.0, 20.0] {
            for n in 1..3 {
                let lhs = bessel_j(n - 1, x) + bessel_j(n + 1, x);
                let rhs = 2.0 * n as f64 / x * bessel_j(n, x);
                assert!((lhs - rhs).abs() < 1e-7, "x={x} n={n}");
            }
        }
    }

    #[test]
    fn erfcx_branches_agree() {
        let reference = [
            (0.5, 0.615_690_344_192_925_9),
            (1.0, 0.427_583_576_155_807),
            (2.0, 0.255_395_676_310_505_74),
            (5.0, 0.110_704_637_733_068_63),
            (12.0, 0.046_854_221_014_893_763),
        ];
        for (x, exact) in reference {
            assert!((erfcx(x) - exact).abs() / exact < 1e-13, "x={x}");
        }
        // asymptotic 1/(x sqrt(pi)) (1 - 1/(2x^2))
        let x: f64 = 100.0;
        let approx = (1.0 - 0.5 / (x * x) + 0.75 / x.powi(4)) / (x * PI.sqrt());
        assert!((erfcx(x) - approx).abs() / approx < 1e-10);
    }

    #[test]
    fn scaled_product_reference_values() {
        let cases = [
            (16.0, -6.0, 0.008_766_926_851_972_576),
            (4.0, -3.5, 0.012_701_117_359_253_765),
            (1.0, 0.5, 1.879_589_843_542_716_1),
            (100.0, -15.0, 9.867_987_167_400_234e-8),
            (400.0, -30.0, 2.562_025_804_694_785e-24),
        ];
        for (t, z, exact) in cases {
            let v = exp_times_phi(t, z);
            assert!((v - exact).abs() <= 1e-13 * exact, "{t} {z}: {v}");
        }
    }
}
