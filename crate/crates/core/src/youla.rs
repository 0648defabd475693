//! Youla-parameterized controller synthesis.
//!
//! A design fixes the closed-loop transfer `T = Y * Gp` by choosing the
//! parameter `Y` among stable transfer functions, with `S = 1 - T` and
//! the unity-feedback controller recovered as `Gc = Y / S`. Two recipes
//! are provided: pole placement for the double integrator, and
//! plant-inverting tracking with a damped second-order target for stable
//! minimum-phase plants.

use num_complex::Complex64;
use thiserror::Error;

use crate::lti::{LtiError, Polynomial, RationalTransfer};

#[derive(Debug, Clone, Error)]
pub enum YoulaError {
    #[error("time constant / bandwidth must be positive and finite, got {value}")]
    InvalidBandwidth { value: f64 },
    #[error("damping ratio must be positive and finite, got {value}")]
    InvalidDamping { value: f64 },
    #[error("plant has a pole or zero with nonnegative real part at {location}")]
    NonMinimumPhasePlant { location: Complex64 },
    #[error("plant is the zero transfer function")]
    ZeroPlant,
    #[error(transparent)]
    Lti(#[from] LtiError),
}

/// Parameters the design was synthesized from.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignParams {
    DoubleIntegrator { tau: f64 },
    ButterworthTracking { omega_n: f64, zeta: f64 },
}

/// A complete Youla design: plant, parameter, closed-loop pair, and the
/// realizable unity-feedback controller.
#[derive(Debug, Clone)]
pub struct YoulaDesign {
    pub plant: RationalTransfer,
    /// The Youla parameter `Y`.
    pub youla: RationalTransfer,
    /// Complementary sensitivity `T = Y * Gp`.
    pub complementary: RationalTransfer,
    /// Sensitivity `S = 1 - T`.
    pub sensitivity: RationalTransfer,
    /// `Gc = Y / S`, for the unity negative-feedback loop.
    pub controller: RationalTransfer,
    pub params: DesignParams,
    /// Set when the requested closed-loop bandwidth is not comfortably
    /// below the plant's own dynamics; the design still proceeds.
    pub bandwidth_warning: Option<String>,
}

/// Pole placement for `Gp = 1/s^2` with a triple pole at `-1/tau`:
///
/// `T = (3 tau s + 1)/(tau s + 1)^3`, which satisfies `T(0) = 1` and
/// `T'(0) = 0` so the loop tracks steps and ramps of the double
/// integrator's output, and `Gc = (3 tau s + 1)/(tau^3 s + 3 tau^2)`.
pub fn design_double_integrator(tau: f64) -> Result<YoulaDesign, YoulaError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(YoulaError::InvalidBandwidth { value: tau });
    }
    let plant = RationalTransfer::integrator(2);
    let lin = Polynomial::new(vec![1.0, tau]);
    let den = lin.mul(&lin).mul(&lin);
    let t_num = Polynomial::new(vec![1.0, 3.0 * tau]);
    let s_num = den.sub(&t_num);
    let complementary = RationalTransfer::new(t_num.clone(), den.clone())?;
    let sensitivity = RationalTransfer::new(s_num, den.clone())?;
    let youla = RationalTransfer::new(t_num.clone(), den)?
        .mul(&RationalTransfer::new(Polynomial::one().shift_up(2), Polynomial::one())?);
    let controller = RationalTransfer::new(
        t_num,
        Polynomial::new(vec![3.0 * tau * tau, tau * tau * tau]),
    )?;
    let design = YoulaDesign {
        plant,
        youla,
        complementary,
        sensitivity,
        controller,
        params: DesignParams::DoubleIntegrator { tau },
        bandwidth_warning: None,
    };
    debug_assert!(design.identities_hold(1e-9));
    Ok(design)
}

/// Plant-inverting tracking design for a stable minimum-phase plant:
/// `Y = Gp^-1 * wn^2/(s^2 + 2 zeta wn s + wn^2)`, so the closed loop is
/// the damped second-order target and
/// `Gc = Gp^-1 * wn^2 / (s^2 + 2 zeta wn s)` carries integral action.
///
/// The controller is proper only when the plant's relative degree is at
/// most two, which holds for every plant synthesized in this crate.
pub fn design_butterworth_tracking(
    plant: &RationalTransfer,
    omega_n: f64,
    zeta: f64,
) -> Result<YoulaDesign, YoulaError> {
    if !(omega_n > 0.0) || !omega_n.is_finite() {
        return Err(YoulaError::InvalidBandwidth { value: omega_n });
    }
    if !(zeta > 0.0) || !zeta.is_finite() {
        return Err(YoulaError::InvalidDamping { value: zeta });
    }
    if plant.is_zero() {
        return Err(YoulaError::ZeroPlant);
    }
    for p in plant.poles().iter().chain(plant.zeros().iter()) {
        if p.re >= 0.0 {
            return Err(YoulaError::NonMinimumPhasePlant { location: *p });
        }
    }
    let w2 = omega_n * omega_n;
    let target_den = Polynomial::new(vec![w2, 2.0 * zeta * omega_n, 1.0]);
    let complementary = RationalTransfer::new(Polynomial::constant(w2), target_den.clone())?;
    let sensitivity = RationalTransfer::new(
        Polynomial::new(vec![0.0, 2.0 * zeta * omega_n, 1.0]),
        target_den.clone(),
    )?;
    let youla = RationalTransfer::new(
        plant.den().scale(w2),
        plant.num().mul(&target_den),
    )?;
    let controller = RationalTransfer::new(
        plant.den().scale(w2),
        plant
            .num()
            .mul(&Polynomial::new(vec![0.0, 2.0 * zeta * omega_n, 1.0])),
    )?;
    let slowest = plant
        .poles()
        .iter()
        .map(|p| p.re.abs())
        .fold(f64::INFINITY, f64::min);
    let bandwidth_warning = if omega_n >= slowest {
        Some(format!(
            "target bandwidth {omega_n} rad/s is not below the plant pole at {slowest} rad/s; \
             time-scale separation with the loop being inverted is lost"
        ))
    } else {
        None
    };
    let design = YoulaDesign {
        plant: plant.clone(),
        youla,
        complementary,
        sensitivity,
        controller,
        params: DesignParams::ButterworthTracking { omega_n, zeta },
        bandwidth_warning,
    };
    debug_assert!(design.identities_hold(1e-9));
    Ok(design)
}

impl YoulaDesign {
    /// Checks the defining rational identities by cross-multiplication:
    /// `T = Y Gp`, `T + S = 1`, `Gc S = Y`.
    pub fn identities_hold(&self, tol: f64) -> bool {
        fn close(p: &Polynomial, q: &Polynomial, tol: f64) -> bool {
            let scale = p.max_abs_coeff().max(q.max_abs_coeff());
            scale == 0.0 || p.sub(q).max_abs_coeff() <= tol * scale
        }
        // Raw polynomial cross-products, so verification never leans on
        // pole-zero cancellation in rational arithmetic.
        let (y, gp) = (&self.youla, &self.plant);
        let (t, s, gc) = (&self.complementary, &self.sensitivity, &self.controller);
        let t_lhs = y.num().mul(gp.num()).mul(t.den());
        let t_rhs = t.num().mul(&y.den().mul(gp.den()));
        let unit_lhs = t.num().mul(s.den()).add(&s.num().mul(t.den()));
        let unit_rhs = t.den().mul(s.den());
        let y_lhs = gc.num().mul(s.num()).mul(y.den());
        let y_rhs = y.num().mul(&gc.den().mul(s.den()));
        close(&t_lhs, &t_rhs, tol) && close(&unit_lhs, &unit_rhs, tol) && close(&y_lhs, &y_rhs, tol)
    }
}

/// Internal-stability verdict for a [`YoulaDesign`].
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// The Youla parameter has no closed-right-half-plane pole.
    pub youla_stable: bool,
    /// The closed loop `T` has no closed-right-half-plane pole.
    pub closed_loop_stable: bool,
    /// Every unstable plant pole reappears as a zero of `S` with at
    /// least the same multiplicity, so it is not cancelled against the
    /// controller.
    pub unstable_poles_blocked: bool,
    /// `T(0) = 1`, and `T'(0) = 0` when the plant carries a double pole
    /// at the origin. Vacuously true for plants without origin poles.
    pub interpolation_ok: bool,
}

impl StabilityReport {
    pub fn all_ok(&self) -> bool {
        self.youla_stable
            && self.closed_loop_stable
            && self.unstable_poles_blocked
            && self.interpolation_ok
    }
}

pub fn verify_internal_stability(design: &YoulaDesign) -> StabilityReport {
    let youla_stable = design.youla.is_hurwitz();
    let closed_loop_stable = design.complementary.is_hurwitz();

    let cluster_tol = 1e-6;
    let unstable: Vec<Complex64> = design
        .plant
        .poles()
        .into_iter()
        .filter(|p| p.re >= -1e-9)
        .collect();
    let s_zeros = design.sensitivity.zeros();
    let mut available = s_zeros;
    let mut unstable_poles_blocked = true;
    for p in &unstable {
        let hit = available
            .iter()
            .enumerate()
            .map(|(i, z)| (i, (z - p).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match hit {
            Some((i, d)) if d <= cluster_tol => {
                available.swap_remove(i);
            }
            _ => {
                unstable_poles_blocked = false;
                break;
            }
        }
    }

    let origin_poles = design.plant.den().zeros_at_origin();
    let interpolation_ok = if origin_poles == 0 {
        true
    } else {
        let t = &design.complementary;
        let t0 = t.dc_gain();
        let mut ok = (t0 - 1.0).abs() <= 1e-9;
        if origin_poles >= 2 {
            let n0 = t.num().eval(0.0);
            let d0 = t.den().eval(0.0);
            let dn0 = t.num().derivative().eval(0.0);
            let dd0 = t.den().derivative().eval(0.0);
            let slope = (dn0 * d0 - n0 * dd0) / (d0 * d0);
            ok &= slope.abs() <= 1e-9;
        }
        ok
    };

    StabilityReport {
        youla_stable,
        closed_loop_stable,
        unstable_poles_blocked,
        interpolation_ok,
    }
}

/// `n` independent copies of the same scalar controller, one per joint.
/// The loop transfer from input `i` to output `j` is zero for `i != j`
/// by construction.
#[derive(Debug, Clone)]
pub struct DiagonalController {
    channels: Vec<RationalTransfer>,
}

impl DiagonalController {
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channel(&self, i: usize) -> &RationalTransfer {
        &self.channels[i]
    }
}

pub fn mimo_diagonal(gc: &RationalTransfer, n: usize) -> DiagonalController {
    DiagonalController {
        channels: vec![gc.clone(); n],
    }
}
