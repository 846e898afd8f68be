//! Globally adaptive Gauss–Kronrod (7/15) quadrature for complex-valued
//! integrands on finite intervals.

use alloc::vec::Vec;
use num_complex::Complex64;
use num_traits::Float;

use crate::error::{numeric_err, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights attach to the odd-indexed Kronrod nodes (1, 3, 5) and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Default cap on the number of subintervals.
pub const MAX_INTERVALS: usize = 20_000;

#[derive(Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: Complex64,
    error: f64,
}

fn kronrod<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64) -> Segment {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(centre - dx) + f(centre + dx);
        kron += pair * w;
        if j % 2 == 1 {
            gauss += pair * WG[j / 2];
        }
    }
    let value = kron * half;
    let error = ((kron - gauss) * half).norm();
    Segment { a, b, value, error }
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate_complex<F>(f: F, a: f64, b: f64, tol: f64) -> Result<Complex64>
where
    F: Fn(f64) -> Complex64,
{
    if a == b {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let mut segments: Vec<Segment> = Vec::with_capacity(64);
    segments.push(kronrod(&f, a, b));
    loop {
        let mut total = Complex64::new(0.0, 0.0);
        let mut err = 0.0;
        let mut worst = 0;
        for (i, seg) in segments.iter().enumerate() {
            total += seg.value;
            err += seg.error;
            if seg.error > segments[worst].error {
                worst = i;
            }
        }
        if !(total.re.is_finite() && total.im.is_finite()) {
            return Err(numeric_err!("non-finite integrand on [{a}, {b}]"));
        }
        if err <= tol {
            return Ok(total);
        }
        if segments.len() >= MAX_INTERVALS {
            return Err(numeric_err!(
                "quadrature on [{a}, {b}] did not reach tolerance {tol:e} (estimate {err:e})"
            ));
        }
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // interval cannot be split further; accept its contribution
            return Ok(total);
        }
        segments.push(kronrod(&f, seg.a, mid));
        segments.push(kronrod(&f, mid, seg.b));
    }
}

/// Real-valued convenience wrapper around [`integrate_complex`].
pub fn integrate<F>(f: F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    integrate_complex(|x| Complex64::new(f(x), 0.0), a, b, tol).map(|z| z.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    #[test]
    fn polynomial_exact() {
        let v = integrate(|x| x * x * x - 2.0 * x, 0.0, 3.0, 1e-12).unwrap();
        assert!((v - (81.0 / 4.0 - 9.0)).abs() < 1e-12);
    }

    #[test]
    fn oscillatory_complex() {
        // ∫_0^{10π} e^{ix} dx = (e^{i10π} - 1)/i = 0
        let v = integrate_complex(|x| Complex64::new(0.0, x).exp(), 0.0, 10.0 * PI, 1e-10).unwrap();
        assert!(v.norm() < 1e-9);
        // ∫_0^1 e^{3ix} dx = (e^{3i}-1)/(3i)
        let want = (Complex64::new(0.0, 3.0).exp() - 1.0) / Complex64::new(0.0, 3.0);
        let got = integrate_complex(|x| Complex64::new(0.0, 3.0 * x).exp(), 0.0, 1.0, 1e-12).unwrap();
        assert!((got - want).norm() < 1e-12);
    }

    #[test]
    fn gaussian_mass() {
        let v = integrate(|z| (-0.5 * z * z).exp(), -10.0, 10.0, 1e-12).unwrap();
        assert!((v - (2.0 * PI).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn empty_interval() {
        assert_eq!(integrate(|x| x, 1.0, 1.0, 1e-8).unwrap(), 0.0);
    }
}
