//! Branch-light transcendental approximations that autovectorize.
//!
//! The activation functions run over every feature map element each step, so
//! they cannot afford a libm call per element. These routines use polynomial
//! kernels with bit-level exponent assembly; they are deterministic (pure f32
//! arithmetic, no table lookups) and accurate to a few ulp, which is far below
//! the f32 noise floor of the surrounding kernels.

/// e^x for f32, ~2 ulp max error over the full range.
///
/// Cephes-style: split `x = n*ln2 + r` with `|r| <= ln2/2`, evaluate a degree-6
/// polynomial for `e^r` and assemble `2^n` directly in the exponent bits.
#[inline(always)]
pub fn exp_f32(x: f32) -> f32 {
    // Below -87.3 the result underflows to ~1e-38; above 88.7 it overflows.
    let x = x.clamp(-87.3, 88.7);
    const LOG2E: f32 = 1.442_695_04;
    let n = (x * LOG2E).round();
    // Two-part ln2 to keep the reduction exact.
    let r = x - n * 0.693_359_375;
    let r = r - n * -2.121_944_4e-4;
    let mut p = 1.987_569_2e-4;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 5.000_000_1e-1;
    let poly = (p * r) * r + r + 1.0;
    let scale = f32::from_bits((((n as i32) + 127) << 23) as u32);
    scale * poly
}

/// Error function for f32, max absolute error ~1.5e-7 (Abramowitz & Stegun
/// 7.1.26 rational kernel with the fast exponential above).
#[inline(always)]
pub fn erf_f32(x: f32) -> f32 {
    let sign = if x < 0.0 { -1.0f32 } else { 1.0f32 };
    let ax = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * ax);
    let y = t * (0.254_829_6
        + t * (-0.284_496_74 + t * (1.421_413_7 + t * (-1.453_152 + t * 1.061_405_4))));
    sign * (1.0 - y * exp_f32(-ax * ax))
}

/// Standard normal density, used by the GELU derivative.
#[inline(always)]
pub fn normal_pdf_f32(x: f32) -> f32 {
    const INV_SQRT_2PI: f32 = 0.398_942_28;
    INV_SQRT_2PI * exp_f32(-0.5 * x * x)
}

/// GELU activation: `0.5 * x * (1 + erf(x / sqrt(2)))`.
#[inline(always)]
pub fn gelu_f32(x: f32) -> f32 {
    const INV_SQRT_2: f32 = std::f32::consts::FRAC_1_SQRT_2;
    0.5 * x * (1.0 + erf_f32(x * INV_SQRT_2))
}

/// Derivative of GELU: `Phi(x) + x * phi(x)`.
#[inline(always)]
pub fn gelu_grad_f32(x: f32) -> f32 {
    const INV_SQRT_2: f32 = std::f32::consts::FRAC_1_SQRT_2;
    let cdf = 0.5 * (1.0 + erf_f32(x * INV_SQRT_2));
    cdf + x * normal_pdf_f32(x)
}

/// Logistic sigmoid.
#[inline(always)]
pub fn sigmoid_f32(x: f32) -> f32 {
    1.0 / (1.0 + exp_f32(-x))
}

/// Fused multiply-add when the target has hardware FMA; otherwise a plain
/// multiply-add so portable builds never fall into a software fma() call.
#[inline(always)]
pub fn fmadd(a: f32, b: f32, c: f32) -> f32 {
    #[cfg(target_feature = "fma")]
    {
        a.mul_add(b, c)
    }
    #[cfg(not(target_feature = "fma"))]
    {
        a * b + c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_matches_f64_reference() {
        let mut worst = 0.0f64;
        let mut x = -80.0f32;
        while x < 80.0 {
            let got = exp_f32(x) as f64;
            let want = (x as f64).exp();
            let rel = ((got - want) / want).abs();
            if rel > worst {
                worst = rel;
            }
            x += 0.0371;
        }
        assert!(worst < 5e-7, "worst rel err {worst}");
    }

    #[test]
    fn exp_of_zero_is_one() {
        assert_eq!(exp_f32(0.0), 1.0);
    }

    #[test]
    fn erf_matches_tabulated_values() {
        // 10-digit references for erf at a few probe points.
        let cases = [
            (0.0f32, 0.0f64),
            (0.25, 0.2763263902),
            (0.5, 0.5204998778),
            (1.0, 0.8427007929),
            (1.5, 0.9661051465),
            (2.0, 0.9953222650),
            (3.0, 0.9999779095),
            (-1.0, -0.8427007929),
        ];
        for (x, want) in cases {
            let got = erf_f32(x) as f64;
            assert!(
                (got - want).abs() < 5e-7,
                "erf({x}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn gelu_anchors() {
        assert_eq!(gelu_f32(0.0), 0.0);
        assert!((gelu_f32(3.0) - 2.9960).abs() < 5e-4);
        // Large negative saturates to 0, large positive to identity.
        assert!(gelu_f32(-20.0).abs() < 1e-6);
        assert!((gelu_f32(20.0) - 20.0).abs() < 1e-5);
    }

    #[test]
    fn sigmoid_anchors() {
        assert_eq!(sigmoid_f32(0.0), 0.5);
        assert!((sigmoid_f32(2.0) - 0.880797).abs() < 1e-5);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        let mut x = -4.0f32;
        while x < 4.0 {
            let h = 1e-3f32;
            let fd = (gelu_f32(x + h) as f64 - gelu_f32(x - h) as f64) / (2.0 * h as f64);
            let an = gelu_grad_f32(x) as f64;
            assert!(
                (fd - an).abs() < 2e-4,
                "gelu'({x}): fd {fd} vs analytic {an}"
            );
            x += 0.173;
        }
    }
}
