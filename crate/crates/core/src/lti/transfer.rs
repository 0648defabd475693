use num_complex::Complex64;

use super::polynomial::Polynomial;
use super::LtiError;

/// Distance below which a numerator root and a denominator root are
/// treated as a common factor and cancelled, relative to `1 + |root|`.
pub const ROOT_CANCEL_TOL: f64 = 1e-8;

/// Rational transfer function `num(s)/den(s)`.
///
/// Construction canonicalizes: shared factors of `s`, then any
/// numerator/denominator root pairs closer than [`ROOT_CANCEL_TOL`], are
/// cancelled, and the denominator is scaled monic. A zero numerator is
/// stored as `0/1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalTransfer {
    num: Polynomial,
    den: Polynomial,
}

impl RationalTransfer {
    pub fn new(num: Polynomial, den: Polynomial) -> Result<Self, LtiError> {
        if den.is_zero() {
            return Err(LtiError::ZeroDenominator);
        }
        let mut g = RationalTransfer { num, den };
        g.canonicalize();
        Ok(g)
    }

    /// Convenience constructor from coefficient lists, lowest power first.
    pub fn from_coeffs(num: Vec<f64>, den: Vec<f64>) -> Result<Self, LtiError> {
        RationalTransfer::new(Polynomial::new(num), Polynomial::new(den))
    }

    pub fn zero() -> Self {
        RationalTransfer {
            num: Polynomial::zero(),
            den: Polynomial::one(),
        }
    }

    pub fn one() -> Self {
        RationalTransfer {
            num: Polynomial::one(),
            den: Polynomial::one(),
        }
    }

    pub fn constant(k: f64) -> Self {
        RationalTransfer {
            num: Polynomial::constant(k),
            den: Polynomial::one(),
        }
    }

    /// `1/s^k`.
    pub fn integrator(k: usize) -> Self {
        RationalTransfer {
            num: Polynomial::one(),
            den: Polynomial::one().shift_up(k),
        }
    }

    pub fn num(&self) -> &Polynomial {
        &self.num
    }

    pub fn den(&self) -> &Polynomial {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    /// deg den - deg num; negative means improper.
    pub fn relative_degree(&self) -> isize {
        self.den.degree() as isize - self.num.degree() as isize
    }

    pub fn is_proper(&self) -> bool {
        self.relative_degree() >= 0
    }

    fn canonicalize(&mut self) {
        if self.num.is_zero() {
            self.num = Polynomial::zero();
            self.den = Polynomial::one();
            return;
        }
        // Proportional fraction: collapses to a constant without touching
        // the (ill-conditioned for multiple roots) root-matching path, so
        // identities like T + S reduce to the literal constant 1.
        if self.num.degree() == self.den.degree() {
            let k = self.num.leading() / self.den.leading();
            let resid = self.num.sub(&self.den.scale(k));
            if resid.max_abs_coeff() <= 1e-12 * self.num.max_abs_coeff() {
                self.num = Polynomial::constant(k);
                self.den = Polynomial::one();
                return;
            }
        }
        let k = self.num.zeros_at_origin().min(self.den.zeros_at_origin());
        if k > 0 {
            self.num = self.num.deflate_origin(k);
            self.den = self.den.deflate_origin(k);
        }
        if self.num.degree() > 0 && self.den.degree() > 0 {
            // Cancel matched root pairs by deflating each side with its
            // own root. Rebuilding whole polynomials from root lists is
            // avoided: computed roots of a multiple-root cluster are
            // individually inaccurate even when the coefficients are not.
            let near_real = |z: Complex64| z.im.abs() <= 1e-7 * (1.0 + z.norm());
            let rn = self.num.roots();
            let mut rd = self.den.roots();
            let mut used_n = vec![false; rn.len()];
            fn take_nearest(
                pool: &mut Vec<Complex64>,
                target: Complex64,
                tol: f64,
            ) -> Option<Complex64> {
                let hit = pool
                    .iter()
                    .enumerate()
                    .map(|(i, z)| (i, (target - z).norm()))
                    .min_by(|a, b| a.1.total_cmp(&b.1))?;
                (hit.1 <= tol).then(|| pool.swap_remove(hit.0))
            }
            for i in 0..rn.len() {
                if used_n[i] || self.num.degree() == 0 {
                    continue;
                }
                let zn = rn[i];
                let tol = ROOT_CANCEL_TOL * (1.0 + zn.norm());
                if near_real(zn) {
                    let snapshot = rd.clone();
                    if let Some(zd) = take_nearest(&mut rd, zn, tol) {
                        if near_real(zd) {
                            self.num = self.num.deflate_real(zn.re);
                            self.den = self.den.deflate_real(zd.re);
                        } else {
                            rd = snapshot;
                        }
                    }
                } else if zn.im > 0.0 {
                    // Conjugate pairs leave together so both sides stay real.
                    let partner = rn
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i && !used_n[j])
                        .map(|(j, z)| (j, (z - zn.conj()).norm()))
                        .min_by(|a, b| a.1.total_cmp(&b.1));
                    let Some((j, pd)) = partner else { continue };
                    if pd > tol {
                        continue;
                    }
                    let snapshot = rd.clone();
                    let Some(zd) = take_nearest(&mut rd, zn, tol) else {
                        continue;
                    };
                    if take_nearest(&mut rd, zd.conj(), tol).is_none() {
                        rd = snapshot;
                        continue;
                    }
                    used_n[j] = true;
                    self.num = self.num.deflate_quadratic(-2.0 * zn.re, zn.norm_sqr());
                    self.den = self.den.deflate_quadratic(-2.0 * zd.re, zd.norm_sqr());
                }
            }
        }
        let lead = self.den.leading();
        self.num = self.num.scale(1.0 / lead);
        self.den = self.den.scale(1.0 / lead);
    }

    pub fn add(&self, other: &Self) -> Self {
        let num = self
            .num
            .mul(&other.den)
            .add(&other.num.mul(&self.den));
        let den = self.den.mul(&other.den);
        RationalTransfer::new(num, den).expect("product of nonzero denominators")
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Self) -> Self {
        RationalTransfer::new(self.num.mul(&other.num), self.den.mul(&other.den))
            .expect("product of nonzero denominators")
    }

    pub fn scale(&self, k: f64) -> Self {
        RationalTransfer::new(self.num.scale(k), self.den.clone())
            .expect("denominator unchanged")
    }

    pub fn div(&self, other: &Self) -> Result<Self, LtiError> {
        if other.is_zero() {
            return Err(LtiError::DivisionByZeroTransfer);
        }
        RationalTransfer::new(self.num.mul(&other.den), self.den.mul(&other.num))
    }

    pub fn inverse(&self) -> Result<Self, LtiError> {
        RationalTransfer::one().div(self)
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.num.eval_complex(s) / self.den.eval_complex(s)
    }

    pub fn dc_gain(&self) -> f64 {
        self.num.eval(0.0) / self.den.eval(0.0)
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.den.roots()
    }

    pub fn zeros(&self) -> Vec<Complex64> {
        self.num.roots()
    }

    /// All poles strictly in the open left half plane.
    pub fn is_hurwitz(&self) -> bool {
        self.poles().iter().all(|p| p.re < 0.0)
    }

    /// Equality as rational functions, checked by cross-multiplication so
    /// no cancellation is required: `num_a*den_b - num_b*den_a ~ 0`
    /// relative to the larger cross product's coefficient scale.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        let p = self.num.mul(&other.den);
        let q = other.num.mul(&self.den);
        let scale = p.max_abs_coeff().max(q.max_abs_coeff());
        if scale == 0.0 {
            return true;
        }
        let diff = p.sub(&q);
        diff.max_abs_coeff() <= tol * scale
    }
}

/// Closes a negative-feedback loop: `forward / (1 + forward*loop_gain)`.
pub fn feedback_connect(
    forward: &RationalTransfer,
    loop_gain: &RationalTransfer,
) -> Result<RationalTransfer, LtiError> {
    let num = forward.num().mul(loop_gain.den());
    let den = forward
        .den()
        .mul(loop_gain.den())
        .add(&forward.num().mul(loop_gain.num()));
    if den.is_zero() {
        return Err(LtiError::AlgebraicLoop);
    }
    RationalTransfer::new(num, den)
}

/// Sensitivity of the same loop: `1 / (1 + forward*loop_gain)`.
pub fn sensitivity(
    forward: &RationalTransfer,
    loop_gain: &RationalTransfer,
) -> Result<RationalTransfer, LtiError> {
    let num = forward.den().mul(loop_gain.den());
    let den = num.add(&forward.num().mul(loop_gain.num()));
    if den.is_zero() {
        return Err(LtiError::AlgebraicLoop);
    }
    RationalTransfer::new(num, den)
}
