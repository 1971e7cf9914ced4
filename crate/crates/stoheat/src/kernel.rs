//! Heat-kernel closed forms and the special functions they lean on.
//!
//! Everything here is deterministic and pure: the Gaussian kernel
//! `G_nu(t,x) = (2 pi nu t)^(-1/2) exp(-x^2/(2 nu t))`, its product /
//! time-convolution / variation identities, and the erf/erfc/Gamma layer
//! (delegated to `libm`, which carries the usual sub-ulp fdlibm kernels).
//! The identities are exercised against adaptive quadrature in the tests
//! and, with randomized inputs, in [`crate::verify`].

use crate::error::{require_finite, Error, Result};
use crate::quad::{self, QuadratureSpec};
use std::sync::OnceLock;

/// Diffusion coefficient wrapper; construction enforces positivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    nu: f64,
}

impl KernelParams {
    pub fn new(nu: f64) -> Result<Self> {
        require_finite("KernelParams::new", "nu", nu)?;
        if nu <= 0.0 {
            return Err(Error::domain(
                "KernelParams::new",
                format!("nu must be positive, got {nu}"),
            ));
        }
        Ok(KernelParams { nu })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }
}

/// Raw Gaussian heat kernel; assumes `nu > 0`, `t > 0`.
#[inline]
pub fn heat_kernel_raw(nu: f64, t: f64, x: f64) -> f64 {
    let var = nu * t;
    (2.0 * std::f64::consts::PI * var).sqrt().recip() * (-x * x / (2.0 * var)).exp()
}

/// Heat kernel `G_nu(t,x)`, strict in `t > 0`.
pub fn heat_kernel(params: &KernelParams, t: f64, x: f64) -> Result<f64> {
    require_finite("heat_kernel", "t", t)?;
    require_finite("heat_kernel", "x", x)?;
    if t <= 0.0 {
        return Err(Error::domain(
            "heat_kernel",
            format!("t must be positive, got {t}"),
        ));
    }
    Ok(heat_kernel_raw(params.nu, t, x))
}

/// Total variant with the convention `G_nu(t,.) = 0` for `t <= 0`.
pub fn heat_kernel_total(params: &KernelParams, t: f64, x: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        heat_kernel_raw(params.nu, t, x)
    }
}

/// Standard normal CDF, evaluated through the complementary error function
/// so both tails keep full relative accuracy.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Complementary error function; cancellation-free for large positive `x`.
#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Euler Gamma function on the positive half-line.
pub fn gamma_fn(x: f64) -> Result<f64> {
    require_finite("gamma_fn", "x", x)?;
    if x <= 0.0 {
        return Err(Error::domain(
            "gamma_fn",
            format!("argument must be positive, got {x}"),
        ));
    }
    Ok(libm::tgamma(x))
}

/// `int_0^t s^(mu-1) (t-s)^(nu-1) ds = t^(mu+nu-1) Gamma(mu) Gamma(nu) / Gamma(mu+nu)`.
pub fn beta_time_integral(mu_exp: f64, nu_exp: f64, t: f64) -> Result<f64> {
    require_finite("beta_time_integral", "mu_exp", mu_exp)?;
    require_finite("beta_time_integral", "nu_exp", nu_exp)?;
    require_finite("beta_time_integral", "t", t)?;
    if mu_exp <= 0.0 || nu_exp <= 0.0 {
        return Err(Error::domain(
            "beta_time_integral",
            "exponents must be positive",
        ));
    }
    if t <= 0.0 {
        return Err(Error::domain("beta_time_integral", "t must be positive"));
    }
    let sum = mu_exp + nu_exp;
    if sum < 170.0 {
        Ok(t.powf(sum - 1.0) * libm::tgamma(mu_exp) * libm::tgamma(nu_exp) / libm::tgamma(sum))
    } else {
        // Overflow-safe route through log-Gamma.
        let log_beta = libm::lgamma(mu_exp) + libm::lgamma(nu_exp) - libm::lgamma(sum);
        Ok(((sum - 1.0) * t.ln() + log_beta).exp())
    }
}

/// One factor of the product decomposition: a kernel evaluated at
/// `(time, location)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelPoint {
    pub time: f64,
    pub location: f64,
}

/// Parameters of `G_nu(t,x) G_nu(s,y) = G_nu(t1,x1) G_nu(t2,x2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelFactors {
    pub first: KernelPoint,
    pub second: KernelPoint,
}

/// Factorization of a product of two kernels at the same diffusivity:
/// `first = (ts/(t+s), (sx+ty)/(t+s))`, `second = (t+s, x-y)`.
pub fn product_identity(
    _params: &KernelParams,
    t: f64,
    s: f64,
    x: f64,
    y: f64,
) -> Result<KernelFactors> {
    if t <= 0.0 || s <= 0.0 {
        return Err(Error::domain(
            "product_identity",
            "both times must be positive",
        ));
    }
    Ok(KernelFactors {
        first: KernelPoint {
            time: t * s / (t + s),
            location: (s * x + t * y) / (t + s),
        },
        second: KernelPoint {
            time: t + s,
            location: x - y,
        },
    })
}

/// Prefactor of the square identity `G_nu^2(t,x) = c * G_{nu/2}(t,x)`
/// with `c = (4 pi nu t)^(-1/2)`.
pub fn squared_kernel_factor(params: &KernelParams, t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::domain(
            "squared_kernel_factor",
            "t must be positive",
        ));
    }
    Ok((4.0 * std::f64::consts::PI * params.nu * t).sqrt().recip())
}

/// `int_0^t G_nu(s,x) G_sigma(t-s,y) ds` in closed form:
/// `(2 sqrt(nu sigma))^(-1) Erfc((|x|/sqrt(nu) + |y|/sqrt(sigma)) / sqrt(2t))`.
pub fn time_convolution_closed_form(nu: f64, sigma: f64, t: f64, x: f64, y: f64) -> Result<f64> {
    if nu <= 0.0 || sigma <= 0.0 || t <= 0.0 {
        return Err(Error::domain(
            "time_convolution_closed_form",
            "nu, sigma, t must be positive",
        ));
    }
    let arg = (x.abs() / nu.sqrt() + y.abs() / sigma.sqrt()) / (2.0 * t).sqrt();
    Ok(erfc(arg) / (2.0 * (nu * sigma).sqrt()))
}

/// The `x = 0` specialization of [`time_convolution_closed_form`].
pub fn time_convolution_at_origin(nu: f64, sigma: f64, t: f64, y: f64) -> Result<f64> {
    time_convolution_closed_form(nu, sigma, t, 0.0, y)
}

/// Gaussian domination of the origin specialization:
/// `sqrt(pi t / (2 nu)) G_sigma(t, y)`.
pub fn time_convolution_gaussian_bound(nu: f64, sigma: f64, t: f64, y: f64) -> Result<f64> {
    if nu <= 0.0 || sigma <= 0.0 || t <= 0.0 {
        return Err(Error::domain(
            "time_convolution_gaussian_bound",
            "nu, sigma, t must be positive",
        ));
    }
    Ok((std::f64::consts::PI * t / (2.0 * nu)).sqrt() * heat_kernel_raw(sigma, t, y))
}

/// `int_0^t G_nu(s,x) ds = 2t G_nu(t,x) - (|x|/nu) Erfc(|x| / sqrt(2 nu t))`.
pub fn time_integral_closed_form(nu: f64, t: f64, x: f64) -> Result<f64> {
    if nu <= 0.0 || t <= 0.0 {
        return Err(Error::domain(
            "time_integral_closed_form",
            "nu, t must be positive",
        ));
    }
    Ok(2.0 * t * heat_kernel_raw(nu, t, x) - x.abs() / nu * erfc(x.abs() / (2.0 * nu * t).sqrt()))
}

/// `int_t^{t'} (s (t'-s))^(-1/2) ds = 2 arcsin(sqrt((t'-t)/t'))`.
pub fn arcsin_time_integral(t: f64, t_prime: f64) -> Result<f64> {
    if t_prime <= 0.0 || t < 0.0 || t > t_prime {
        return Err(Error::domain(
            "arcsin_time_integral",
            format!("need 0 <= t <= t' with t' > 0, got t={t}, t'={t_prime}"),
        ));
    }
    Ok(2.0 * ((t_prime - t) / t_prime).sqrt().asin())
}

/// The four space-time variation integrals of the kernel, with the spatial
/// integral reduced in closed form and the time integral done adaptively
/// after removing the inverse-square-root endpoint singularity.
#[derive(Debug, Clone, Copy)]
pub struct VariationIntegrals {
    /// `int_0^t int (G(t-r,x-z) - G(t-r,y-z))^2 dz dr <= |x-y| / nu`.
    pub spatial: f64,
    /// `int_0^s int (G(t-r,x-z) - G(s-r,x-z))^2 dz dr <= C2 sqrt(t-s) / sqrt(nu)`.
    pub temporal: f64,
    /// `int_s^t int G^2(t-r,x-z) dz dr = sqrt(t-s) / sqrt(pi nu)` exactly.
    pub square: f64,
    /// Combined space-time difference over all of `r >= 0`, with the
    /// convention `G(tau,.) = 0` for `tau <= 0`;
    /// bounded by `2 (|x-y|/nu + sqrt(t-s)/sqrt(nu))`.
    pub combined: f64,
}

/// Optimal constant in the spatial variation bound.
pub const VARIATION_C1: f64 = 1.0;

/// Optimal constant in the temporal variation bound, `(sqrt(2)-1)/sqrt(pi)`.
pub fn variation_c2() -> f64 {
    (std::f64::consts::SQRT_2 - 1.0) / std::f64::consts::PI.sqrt()
}

/// Optimal constant in the square variation identity, `1/sqrt(pi)`.
pub fn variation_c3() -> f64 {
    std::f64::consts::PI.sqrt().recip()
}

pub fn variation_integrals(
    nu: f64,
    s: f64,
    t: f64,
    x: f64,
    y: f64,
    spec: &QuadratureSpec,
) -> Result<VariationIntegrals> {
    if nu <= 0.0 {
        return Err(Error::domain("variation_integrals", "nu must be positive"));
    }
    if !(0.0 <= s && s <= t) || t <= 0.0 {
        return Err(Error::domain(
            "variation_integrals",
            format!("need 0 <= s <= t with t > 0, got s={s}, t={t}"),
        ));
    }
    let dx = x - y;
    let four_pi_nu = 4.0 * std::f64::consts::PI * nu;

    // (i): the z-integral collapses to 2 (4 pi nu tau)^(-1/2) (1 - e^(-dx^2/(4 nu tau)));
    // substitute tau = q^2 to remove the endpoint singularity.
    let spatial = if dx == 0.0 {
        0.0
    } else {
        quad::integrate(
            |q| {
                let tau = q * q;
                4.0 / four_pi_nu.sqrt() * (1.0 - (-dx * dx / (4.0 * nu * tau)).exp())
            },
            0.0,
            t.sqrt(),
            spec,
        )?
    };

    // (ii): z-integral gives (4 pi nu (t-r))^(-1/2) + (4 pi nu (s-r))^(-1/2)
    //       - 2 (2 pi nu (t+s-2r))^(-1/2); substitute r = s - q^2.
    let temporal = if s == 0.0 || s == t {
        if s == 0.0 {
            0.0
        } else {
            // s == t: the first two terms coincide and the integrand is
            // 2 (4 pi nu q^2)^(-1/2) - 2 (4 pi nu q^2)^(-1/2) = 0.
            0.0
        }
    } else {
        quad::integrate(
            |q| {
                let q2 = q * q;
                let a = (four_pi_nu * (t - s + q2)).sqrt().recip() * 2.0 * q;
                let b = 2.0 / four_pi_nu.sqrt();
                let c = (2.0 * std::f64::consts::PI * nu * (t - s + 2.0 * q2))
                    .sqrt()
                    .recip()
                    * 4.0
                    * q;
                a + b - c
            },
            0.0,
            s.sqrt(),
            spec,
        )?
    };

    // (iii): exact.
    let square = (t - s).sqrt() / (std::f64::consts::PI * nu).sqrt();

    // (iv): tail piece over [s,t] equals (iii); head piece over [0,s] keeps
    // the cross term with its Gaussian factor.
    let head = if s == 0.0 {
        0.0
    } else {
        quad::integrate(
            |q| {
                let q2 = q * q;
                let a = (four_pi_nu * (t - s + q2)).sqrt().recip() * 2.0 * q;
                let b = 2.0 / four_pi_nu.sqrt();
                let c = 2.0 * heat_kernel_raw(nu, t - s + 2.0 * q2, dx) * 2.0 * q;
                a + b - c
            },
            0.0,
            s.sqrt(),
            spec,
        )?
    };
    let combined = head + square;

    Ok(VariationIntegrals {
        spatial,
        temporal,
        square,
        combined,
    })
}

/// `sup_x |e^(-x^2/2) - 1| / |x|`, located by golden-section search after a
/// coarse unimodality scan; approximately 0.451256.
pub fn sup_ratio_constant() -> f64 {
    static VALUE: OnceLock<f64> = OnceLock::new();
    *VALUE.get_or_init(|| {
        let objective = |x: f64| (1.0 - (-x * x / 2.0).exp()) / x;

        // Coarse scan on [0.1, 10]: find the best cell and assert the shape
        // rises then falls (unimodal over the scanned range).
        let n = 400;
        let (lo, hi) = (0.1f64, 10.0f64);
        let mut best_i = 0usize;
        let mut best_v = f64::MIN;
        let mut prev = f64::MIN;
        let mut rises = true;
        let mut after_peak = false;
        for i in 0..=n {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            let v = objective(x);
            if v > best_v {
                best_v = v;
                best_i = i;
            }
            if v < prev {
                after_peak = true;
            } else if after_peak {
                rises = false;
            }
            prev = v;
        }
        debug_assert!(rises, "objective not unimodal on the scan range");

        let mut a = lo + (hi - lo) * (best_i.saturating_sub(1)) as f64 / n as f64;
        let mut b = lo + (hi - lo) * (best_i + 1).min(n) as f64 / n as f64;
        let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (objective(c), objective(d));
        while b - a > 1e-12 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = objective(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = objective(d);
            }
        }
        objective(0.5 * (a + b))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn spec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn heat_kernel_normalization_points() {
        let p = KernelParams::new(1.0).unwrap();
        assert!((heat_kernel(&p, 1.0, 0.0).unwrap() - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
        assert!((heat_kernel(&p, 1.0 / (2.0 * PI), 0.0).unwrap() - 1.0).abs() < 1e-14);
        // Frozen extended-precision evaluation of the defining formula.
        let p2 = KernelParams::new(2.0).unwrap();
        assert!((heat_kernel(&p2, 0.5, 1.0).unwrap() - 0.241_970_724_519_143_37).abs() < 1e-15);
    }

    #[test]
    fn heat_kernel_domain() {
        let p = KernelParams::new(1.0).unwrap();
        assert!(heat_kernel(&p, 0.0, 0.0).is_err());
        assert!(heat_kernel(&p, -1.0, 0.0).is_err());
        assert!(heat_kernel(&p, 1.0, f64::NAN).is_err());
        assert_eq!(heat_kernel_total(&p, -1.0, 0.3), 0.0);
        assert!(KernelParams::new(0.0).is_err());
        assert!(KernelParams::new(-2.0).is_err());
    }

    #[test]
    fn normal_cdf_against_quadrature_oracle() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert!(std_normal_cdf(8.0) >= 1.0 - 1e-14);
        // Oracle: adaptive quadrature of the defining integral, truncated
        // where the tail mass is far below the tolerance.
        let oracle = quad::integrate(
            |y| (-y * y / 2.0).exp() / (2.0 * PI).sqrt(),
            -12.0,
            1.0,
            &spec(),
        )
        .unwrap();
        assert!((std_normal_cdf(1.0) - oracle).abs() < 1e-12);
        assert!((std_normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-14);
        // Phi(x) = (1 + Erf(x/sqrt(2)))/2.
        for &x in &[-3.0, -0.7, 0.2, 1.9, 4.4] {
            let via_erf = 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
            assert!((std_normal_cdf(x) - via_erf).abs() < 1e-15);
        }
    }

    #[test]
    fn erf_against_quadrature_oracle() {
        assert_eq!(erf(0.0), 0.0);
        assert_eq!(erfc(0.0), 1.0);
        let oracle =
            2.0 / PI.sqrt() * quad::integrate(|y| (-y * y).exp(), 0.0, 1.0, &spec()).unwrap();
        assert!((erf(1.0) - oracle).abs() < 1e-13);
        assert!((erf(1.0) - 0.842_700_792_949_714_9).abs() < 1e-15);
    }

    #[test]
    fn erfc_tail_behavior() {
        // Gaussian domination and deep-tail relative accuracy.
        assert!(erfc(2.0) <= (-4.0f64).exp());
        for &x in &[1.0, 3.0, 6.0, 10.0, 15.0, 20.0] {
            assert!(erfc(x) <= (-x * x as f64).exp());
        }
        let x = 16.0f64;
        // Leading asymptotics e^(-x^2)/(x sqrt(pi)) (1 - 1/(2x^2) + 3/(4x^4)).
        let asym = (-x * x).exp() / (x * PI.sqrt())
            * (1.0 - 0.5 / (x * x) + 0.75 / (x * x * x * x));
        assert!(erfc(x) > 0.0 && erfc(x) < 1e-100);
        assert!(((erfc(x) - asym) / asym).abs() < 1e-5);
    }

    #[test]
    fn gamma_classical_values_and_reflection_oracle() {
        assert!((gamma_fn(1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((gamma_fn(2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((gamma_fn(0.5).unwrap() - PI.sqrt()).abs() < 1e-14);
        // Reflection formula: Gamma(1/4) Gamma(3/4) = pi / sin(pi/4).
        let oracle = PI / (PI / 4.0).sin() / gamma_fn(0.75).unwrap();
        assert!((gamma_fn(0.25).unwrap() - oracle).abs() / oracle < 1e-13);
        assert!((gamma_fn(0.25).unwrap() - 3.625_609_908_221_908_3).abs() < 1e-12);
        assert!(gamma_fn(0.0).is_err());
        assert!(gamma_fn(-1.5).is_err());
    }

    #[test]
    fn beta_integral_values() {
        assert!((beta_time_integral(1.0, 1.0, 3.0).unwrap() - 3.0).abs() < 1e-13);
        assert!((beta_time_integral(0.5, 0.5, 1.0).unwrap() - PI).abs() < 1e-13);
        // Oracle: adaptive quadrature with the upper-endpoint substitution.
        let oracle = quad::integrate_sqrt_singular_upper(
            |s| s.sqrt() / (2.0 - s).sqrt(),
            0.0,
            2.0,
            &spec(),
        )
        .unwrap();
        let closed = beta_time_integral(1.5, 0.5, 2.0).unwrap();
        assert!((closed - oracle).abs() < 1e-9);
        assert!((closed - PI).abs() < 1e-13);
        assert!(beta_time_integral(-0.5, 1.0, 1.0).is_err());
        assert!(beta_time_integral(0.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn product_identity_numeric() {
        let p = KernelParams::new(1.0).unwrap();
        let f = product_identity(&p, 1.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(f.first, KernelPoint { time: 0.5, location: 0.0 });
        assert_eq!(f.second, KernelPoint { time: 2.0, location: 0.0 });
        let lhs = heat_kernel(&p, 1.0, 0.0).unwrap().powi(2);
        let rhs = heat_kernel(&p, f.first.time, f.first.location).unwrap()
            * heat_kernel(&p, f.second.time, f.second.location).unwrap();
        assert!((lhs - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((lhs - rhs).abs() < 1e-15);

        // Square identity at (nu=1, t=1, x=0).
        let c = squared_kernel_factor(&p, 1.0).unwrap();
        let g_half = heat_kernel_raw(0.5, 1.0, 0.0);
        assert!((lhs - c * g_half).abs() < 1e-15);

        // s = t, y = x: first kernel at (t/2, x), second at (2t, 0).
        let f2 = product_identity(&p, 3.0, 3.0, 1.25, 1.25).unwrap();
        assert_eq!(f2.first, KernelPoint { time: 1.5, location: 1.25 });
        assert_eq!(f2.second, KernelPoint { time: 6.0, location: 0.0 });

        assert!(product_identity(&p, 0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn time_convolution_against_quadrature() {
        assert!((time_convolution_closed_form(1.0, 1.0, 0.7, 0.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((time_convolution_closed_form(1.0, 4.0, 2.3, 0.0, 0.0).unwrap() - 0.25).abs() < 1e-15);

        let closed = time_convolution_closed_form(1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((closed - 0.5 * erfc(std::f64::consts::SQRT_2)).abs() < 1e-15);
        // Oracle: split at the midpoint, substitute out both endpoints.
        let f = |s: f64| heat_kernel_raw(1.0, s, 1.0) * heat_kernel_raw(1.0, 1.0 - s, 1.0);
        let oracle = quad::integrate_sqrt_singular_lower(f, 0.0, 0.5, &spec()).unwrap()
            + quad::integrate_sqrt_singular_upper(f, 0.5, 1.0, &spec()).unwrap();
        assert!((closed - oracle).abs() < 1e-10);
        assert!(time_convolution_closed_form(0.0, 1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn time_integral_against_quadrature() {
        let v0 = time_integral_closed_form(1.0, 1.0, 0.0).unwrap();
        assert!((v0 - (2.0 / PI).sqrt()).abs() < 1e-14);

        let far = time_integral_closed_form(1.0, 1.0, 10.0).unwrap();
        assert!(far <= 1e-8);
        let far_oracle =
            quad::integrate(|s| heat_kernel_raw(1.0, s.max(1e-300), 10.0), 0.0, 1.0, &spec())
                .unwrap();
        assert!((far - far_oracle).abs() < 1e-10);

        let closed = time_integral_closed_form(2.0, 0.5, 1.0).unwrap();
        let oracle =
            quad::integrate(|s| heat_kernel_raw(2.0, s.max(1e-300), 1.0), 0.0, 0.5, &spec())
                .unwrap();
        assert!((closed - oracle).abs() < 1e-10);
    }

    #[test]
    fn arcsin_integral_values() {
        assert!((arcsin_time_integral(0.0, 1.0).unwrap() - PI).abs() < 1e-14);
        assert_eq!(arcsin_time_integral(1.0, 1.0).unwrap(), 0.0);
        let v = arcsin_time_integral(0.5, 1.0).unwrap();
        assert!((v - PI / 2.0).abs() < 1e-14);
        // Oracle with both endpoint substitutions.
        let f = |s: f64| 1.0 / (s * (1.0 - s)).sqrt();
        let oracle = quad::integrate_sqrt_singular_upper(f, 0.75, 1.0, &spec()).unwrap()
            + quad::integrate(f, 0.5, 0.75, &spec()).unwrap();
        assert!((v - oracle).abs() < 1e-9);
        assert!(arcsin_time_integral(2.0, 1.0).is_err());
        assert!(arcsin_time_integral(0.0, 0.0).is_err());
    }

    #[test]
    fn variation_integrals_identity_and_bounds() {
        let s = spec();
        let v = variation_integrals(1.0, 0.0, 1.0, 0.0, 0.0, &s).unwrap();
        assert!((v.square - 1.0 / PI.sqrt()).abs() < 1e-15);
        assert_eq!(v.spatial, 0.0);
        assert_eq!(v.temporal, 0.0);

        let w = variation_integrals(1.0, 1.0, 1.0, 0.3, 0.3, &s).unwrap();
        assert!(w.spatial.abs() < 1e-12);
        assert!(w.temporal.abs() < 1e-12);
        assert!(w.square.abs() < 1e-15);
        assert!(w.combined.abs() < 1e-12);

        let u = variation_integrals(1.0, 0.0, 1.0, 0.0, 0.1, &s).unwrap();
        assert!(u.spatial <= 0.1 + 1e-12);

        // Optimality of the spatial constant: ratio -> 1 for small gaps at
        // large t.
        let tiny = variation_integrals(1.0, 0.0, 50.0, 0.0, 1e-3, &s).unwrap();
        let ratio = tiny.spatial / 1e-3;
        assert!(ratio > 0.999 && ratio <= 1.0 + 1e-9);

        assert!(variation_integrals(1.0, 2.0, 1.0, 0.0, 0.0, &s).is_err());
    }

    #[test]
    fn sup_ratio_constant_bracket() {
        let c = sup_ratio_constant();
        assert!((0.45125..=0.45126).contains(&c), "got {c}");
        // Small- and large-argument limits of the ratio vanish.
        let obj = |x: f64| (1.0 - (-x * x / 2.0f64).exp()) / x;
        assert!(obj(1e-6) < 1e-5);
        assert!(obj(1e3) < 1e-2);
        assert!(obj(1.5852) > 0.45);
    }

    #[test]
    fn semigroup_under_quadrature() {
        let s = spec();
        let (nu, t1, t2, x) = (0.7f64, 0.4, 1.1, 0.8);
        let sigma = (nu * (t1 + t2)).sqrt();
        let half = 12.0 * sigma;
        let conv = quad::integrate(
            |y| heat_kernel_raw(nu, t1, x - y) * heat_kernel_raw(nu, t2, y),
            -half,
            half,
            &s,
        )
        .unwrap();
        assert!((conv - heat_kernel_raw(nu, t1 + t2, x)).abs() < 1e-10);
    }
}
