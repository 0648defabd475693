use super::network::SimTrace;
use super::LtiError;

/// Step-response quality figures extracted from a recorded trace.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub final_value: f64,
    /// Peak excursion past the reference, as a fraction of the step size.
    /// Zero for monotone responses.
    pub overshoot_fraction: f64,
    /// Time of the largest excursion in the step direction.
    pub peak_time: f64,
    /// Earliest time after which the signal stays inside the +/-band
    /// (fraction of step size) around the reference. `None` when the
    /// trace never settles.
    pub settling_time: Option<f64>,
    /// Reference minus final value; zero when no explicit target is given.
    pub steady_state_error: f64,
    /// 10% to 90% rise time, linearly interpolated between samples.
    pub rise_time_10_90: Option<f64>,
}

/// Extracts step metrics for `signal`. The reference is `target` when
/// given, otherwise the last recorded value; the step size is measured
/// from the first sample.
pub fn step_metrics(
    trace: &SimTrace,
    signal: &str,
    band: f64,
    target: Option<f64>,
) -> Result<StepMetrics, LtiError> {
    let y = trace
        .signal(signal)
        .ok_or_else(|| LtiError::SignalMissing {
            name: signal.to_string(),
            consumer: "step_metrics".to_string(),
        })?;
    if y.len() < 2 {
        return Err(LtiError::TraceTooShort);
    }
    let t = trace.times();
    let y0 = y[0];
    let y_final = *y.last().unwrap();
    let reference = target.unwrap_or(y_final);
    let step = reference - y0;
    if step == 0.0 {
        return Err(LtiError::DegenerateStep);
    }
    let dir = step.signum();

    let mut peak_dev = f64::NEG_INFINITY;
    let mut peak_time = t[0];
    for (k, &yk) in y.iter().enumerate() {
        let dev = (yk - y0) * dir;
        if dev > peak_dev {
            peak_dev = dev;
            peak_time = t[k];
        }
    }
    let overshoot_fraction = ((peak_dev - step.abs()) / step.abs()).max(0.0);

    let tol = band * step.abs();
    let mut settling_time = None;
    for k in (0..y.len()).rev() {
        if (y[k] - reference).abs() > tol {
            settling_time = if k + 1 < y.len() { Some(t[k + 1]) } else { None };
            break;
        }
        if k == 0 {
            settling_time = Some(t[0]);
        }
    }

    let rise_time_10_90 = match (
        crossing_time(t, y, y0 + 0.1 * step, dir),
        crossing_time(t, y, y0 + 0.9 * step, dir),
    ) {
        (Some(t10), Some(t90)) if t90 >= t10 => Some(t90 - t10),
        _ => None,
    };

    Ok(StepMetrics {
        final_value: y_final,
        overshoot_fraction,
        peak_time,
        settling_time,
        steady_state_error: if target.is_some() {
            reference - y_final
        } else {
            0.0
        },
        rise_time_10_90,
    })
}

/// First time the signal crosses `level` in direction `dir`, with linear
/// interpolation between samples.
pub fn crossing_time(t: &[f64], y: &[f64], level: f64, dir: f64) -> Option<f64> {
    for k in 1..y.len() {
        let (a, b) = ((y[k - 1] - level) * dir, (y[k] - level) * dir);
        if a < 0.0 && b >= 0.0 {
            let frac = a / (a - b);
            return Some(t[k - 1] + frac * (t[k] - t[k - 1]));
        }
        if k == 1 && a >= 0.0 {
            return Some(t[0]);
        }
    }
    None
}

/// First time the signal enters the +/-`band`-of-step window around
/// `reference`, regardless of whether it stays.
pub fn first_entry_time(
    trace: &SimTrace,
    signal: &str,
    reference: f64,
    band_abs: f64,
) -> Option<f64> {
    let y = trace.signal(signal)?;
    let t = trace.times();
    y.iter()
        .position(|&v| (v - reference).abs() <= band_abs)
        .map(|k| t[k])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::network::step_response;
    use crate::lti::transfer::RationalTransfer;
    use approx::assert_relative_eq;

    /// Unit step through (3 tau s + 1)/(tau s + 1)^3 has the closed form
    /// y(t) = 1 - exp(-t/tau) (1 + t/tau - (t/tau)^2), whose single
    /// overshoot is exactly 5 e^-3 at t = 3 tau.
    #[test]
    fn reference_loop_overshoot_and_peak() {
        let tau = 1.0;
        let g = RationalTransfer::from_coeffs(
            vec![1.0, 3.0 * tau],
            vec![1.0, 3.0 * tau, 3.0 * tau * tau, tau * tau * tau],
        )
        .unwrap();
        // The slow transient term decays like exp(-t) t^2, so a 25 s
        // horizon is needed before the tail drops under 1e-6.
        let trace = step_response(&g, 1e-3, 25.0).unwrap();
        let m = step_metrics(&trace, "y", 0.02, Some(1.0)).unwrap();
        assert_relative_eq!(m.overshoot_fraction, 5.0 * (-3.0f64).exp(), epsilon = 1e-5);
        assert_relative_eq!(m.peak_time, 3.0 * tau, epsilon = 2e-3);
        assert!(m.steady_state_error.abs() < 1e-6);
        assert!(m.settling_time.is_some());
    }

    #[test]
    fn monotone_response_has_zero_overshoot() {
        let g = RationalTransfer::from_coeffs(vec![1.0], vec![1.0, 1.0]).unwrap();
        let trace = step_response(&g, 1e-3, 8.0).unwrap();
        let m = step_metrics(&trace, "y", 0.02, Some(1.0)).unwrap();
        assert_eq!(m.overshoot_fraction, 0.0);
        let rise = m.rise_time_10_90.unwrap();
        // Exact: ln(9) tau.
        assert_relative_eq!(rise, 9.0f64.ln(), epsilon = 1e-4);
    }

    #[test]
    fn settling_time_is_last_band_entry() {
        let g = RationalTransfer::from_coeffs(vec![1.0], vec![1.0, 0.2, 0.01]).unwrap();
        let trace = step_response(&g, 1e-3, 3.0).unwrap();
        let m = step_metrics(&trace, "y", 0.02, Some(1.0)).unwrap();
        let ts = m.settling_time.unwrap();
        let y = trace.signal("y").unwrap();
        for (k, &t) in trace.times().iter().enumerate() {
            if t >= ts {
                assert!((y[k] - 1.0).abs() <= 0.02 + 1e-12);
            }
        }
    }

    #[test]
    fn unsettled_trace_reports_none() {
        let g = RationalTransfer::from_coeffs(vec![1.0], vec![1.0, 1.0]).unwrap();
        let trace = step_response(&g, 1e-3, 0.5).unwrap();
        let m = step_metrics(&trace, "y", 0.02, Some(1.0)).unwrap();
        assert_eq!(m.settling_time, None);
    }

    #[test]
    fn degenerate_step_is_an_error() {
        let g = RationalTransfer::from_coeffs(vec![1.0], vec![1.0, 1.0]).unwrap();
        let trace = step_response(&g, 1e-3, 1.0).unwrap();
        assert!(matches!(
            step_metrics(&trace, "y", 0.02, Some(0.0)),
            Err(LtiError::DegenerateStep)
        ));
    }
}
