//! Scalar abstraction for the numerical core.
//!
//! Everything numeric in this crate is generic over [`Scalar`], which bundles
//! the `nalgebra` real-field operations with the handful of extras we need:
//! conversions from `f64` literals, standard-normal sampling and the normal
//! cdf/pdf used by the knowledge-gradient computation. `f32` and `f64` are the
//! two implementations; `f64` is what the benchmark pipeline runs at.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{de::DeserializeOwned, Serialize};

pub trait Scalar:
    RealField + FromPrimitive + ToPrimitive + Copy + Default + Serialize + DeserializeOwned
{
    /// Lossy conversion from an `f64` constant. Panics on values the type
    /// cannot represent at all (never the case for finite literals).
    fn of(v: f64) -> Self;

    fn to_f64x(self) -> f64;

    /// Standard normal cdf Φ(x).
    fn std_normal_cdf(self) -> Self;

    /// Standard normal density φ(x).
    fn std_normal_pdf(self) -> Self;

    /// One standard-normal draw. Deterministic given the rng state.
    fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One uniform draw from `[lo, hi)`.
    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self;

    /// Slack used when validating flow/bound feasibility.
    fn feasibility_tol() -> Self;

    /// Machine epsilon of the concrete type.
    fn machine_eps() -> Self;
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn cdf64(x: f64) -> f64 {
    0.5 * libm::erfc(-x * INV_SQRT_2)
}

fn pdf64(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

macro_rules! impl_scalar {
    ($t:ty, $feas:expr) => {
        impl Scalar for $t {
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to_f64x(self) -> f64 {
                self as f64
            }

            fn std_normal_cdf(self) -> Self {
                cdf64(self as f64) as $t
            }

            fn std_normal_pdf(self) -> Self {
                pdf64(self as f64) as $t
            }

            fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                // Marsaglia polar method; consumes a variable but
                // seed-deterministic number of uniforms.
                loop {
                    let u: f64 = rng.gen_range(-1.0..1.0);
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    let s = u * u + v * v;
                    if s > 0.0 && s < 1.0 {
                        return (u * (-2.0 * s.ln() / s).sqrt()) as $t;
                    }
                }
            }

            fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self {
                if lo == hi {
                    return lo;
                }
                rng.gen_range(lo..hi)
            }

            #[inline]
            fn feasibility_tol() -> Self {
                $feas
            }

            #[inline]
            fn machine_eps() -> Self {
                <$t>::EPSILON
            }
        }
    };
}

impl_scalar!(f64, 1e-9);
impl_scalar!(f32, 1e-4);
