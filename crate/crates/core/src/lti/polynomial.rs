use nalgebra::DMatrix;
use num_complex::Complex64;

/// Relative threshold below which a coefficient is treated as zero when
/// trimming or counting zero roots at the origin.
pub(crate) const COEFF_TRIM_REL: f64 = 1e-12;

/// Real polynomial with coefficients stored lowest power first, so
/// `coeffs[k]` multiplies `s^k`. The zero polynomial is the single
/// coefficient `[0.0]`; otherwise the last coefficient is nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// Builds a polynomial, trimming high-order coefficients that are
    /// negligible relative to the largest magnitude present.
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut p = Polynomial { coeffs };
        p.trim();
        p
    }

    pub fn zero() -> Self {
        Polynomial { coeffs: vec![0.0] }
    }

    pub fn one() -> Self {
        Polynomial { coeffs: vec![1.0] }
    }

    pub fn constant(c: f64) -> Self {
        Polynomial::new(vec![c])
    }

    /// Coefficients lowest power first. Never empty.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0] == 0.0
    }

    pub fn leading(&self) -> f64 {
        *self.coeffs.last().unwrap()
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    fn trim(&mut self) {
        let scale = self.max_abs_coeff();
        let tol = scale * COEFF_TRIM_REL;
        while self.coeffs.len() > 1 && self.coeffs.last().unwrap().abs() <= tol {
            self.coeffs.pop();
        }
        if self.coeffs.is_empty() {
            self.coeffs.push(0.0);
        }
        if self.coeffs.len() == 1 && self.coeffs[0].abs() <= tol {
            self.coeffs[0] = 0.0;
        }
    }

    /// Number of roots at the origin, i.e. low-order coefficients that
    /// vanish relative to the coefficient scale.
    pub fn zeros_at_origin(&self) -> usize {
        if self.is_zero() {
            return 0;
        }
        let tol = self.max_abs_coeff() * COEFF_TRIM_REL;
        self.coeffs
            .iter()
            .take(self.coeffs.len() - 1)
            .take_while(|c| c.abs() <= tol)
            .count()
    }

    /// Divides by `s^k`. Caller must ensure at least `k` roots at the origin.
    pub fn deflate_origin(&self, k: usize) -> Polynomial {
        assert!(self.zeros_at_origin() >= k, "deflating a nonzero low-order term");
        Polynomial::new(self.coeffs[k..].to_vec())
    }

    /// Divides by `s - a`, discarding the remainder. Meaningful only when
    /// `a` is (numerically) a root, so the remainder is negligible.
    ///
    /// The recurrence direction follows Peters and Wilkinson: starting
    /// from the leading coefficient is stable for roots of small modulus,
    /// from the constant term for roots of large modulus; the geometric
    /// mean of the root magnitudes, `|c0/cn|^(1/n)`, is the pivot.
    pub fn deflate_real(&self, a: f64) -> Polynomial {
        let n = self.degree();
        assert!(n >= 1, "deflating a constant");
        let c = &self.coeffs;
        let mut q = vec![0.0; n];
        let backward = a != 0.0
            && c[0] != 0.0
            && n as f64 * a.abs().ln() >= (c[0].abs() / c[n].abs()).ln();
        if backward {
            q[0] = -c[0] / a;
            for i in 1..n {
                q[i] = (q[i - 1] - c[i]) / a;
            }
        } else {
            q[n - 1] = c[n];
            for i in (1..n).rev() {
                q[i - 1] = c[i] + a * q[i];
            }
        }
        Polynomial::new(q)
    }

    /// Divides by the monic quadratic `s^2 + beta s + gamma`, discarding
    /// the remainder. Used to remove a conjugate root pair without leaving
    /// the real coefficient field.
    pub fn deflate_quadratic(&self, beta: f64, gamma: f64) -> Polynomial {
        let n = self.degree();
        assert!(n >= 2, "deflating a quadratic from degree < 2");
        let c = &self.coeffs;
        // Long division on descending coefficients.
        let mut q = vec![0.0; n - 1];
        q[n - 2] = c[n];
        if n >= 3 {
            q[n - 3] = c[n - 1] - beta * q[n - 2];
        }
        for k in (0..n.saturating_sub(3)).rev() {
            q[k] = c[k + 2] - beta * q[k + 1] - gamma * q[k + 2];
        }
        Polynomial::new(q)
    }

    /// Multiplies by `s^k`.
    pub fn shift_up(&self, k: usize) -> Polynomial {
        if self.is_zero() {
            return Polynomial::zero();
        }
        let mut c = vec![0.0; k];
        c.extend_from_slice(&self.coeffs);
        Polynomial::new(c)
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
    }

    pub fn eval_complex(&self, s: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::ZERO, |acc, &c| acc * s + c)
    }

    pub fn derivative(&self) -> Polynomial {
        if self.degree() == 0 {
            return Polynomial::zero();
        }
        let c = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &a)| a * k as f64)
            .collect();
        Polynomial::new(c)
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut c = vec![0.0; n];
        for (k, slot) in c.iter_mut().enumerate() {
            *slot = self.coeffs.get(k).copied().unwrap_or(0.0)
                + other.coeffs.get(k).copied().unwrap_or(0.0);
        }
        Polynomial::new(c)
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, k: f64) -> Polynomial {
        Polynomial::new(self.coeffs.iter().map(|c| c * k).collect())
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        if self.is_zero() || other.is_zero() {
            return Polynomial::zero();
        }
        let mut c = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Polynomial::new(c)
    }

    /// All complex roots, sorted by real part then imaginary part.
    ///
    /// Roots at the origin are deflated exactly first; the rest come from
    /// the eigenvalues of a scale-balanced companion matrix, refined by a
    /// few safeguarded Newton steps. Degrees 1 and 2 are solved directly.
    pub fn roots(&self) -> Vec<Complex64> {
        if self.is_zero() || self.degree() == 0 {
            return Vec::new();
        }
        let k0 = self.zeros_at_origin();
        let reduced = self.deflate_origin(k0);
        let mut roots = vec![Complex64::ZERO; k0];
        roots.extend(reduced.nonzero_roots());
        roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        roots
    }

    fn nonzero_roots(&self) -> Vec<Complex64> {
        let n = self.degree();
        if n == 0 {
            return Vec::new();
        }
        let lead = self.leading();
        if n == 1 {
            return vec![Complex64::new(-self.coeffs[0] / lead, 0.0)];
        }
        if n == 2 {
            return quadratic_roots(self.coeffs[0] / lead, self.coeffs[1] / lead);
        }
        // Balance by the substitution s = c*z with c the geometric mean of
        // root magnitudes, so companion eigenvalues sit near the unit circle.
        let b0 = (self.coeffs[0] / lead).abs();
        let c = if b0 > 0.0 { b0.powf(1.0 / n as f64) } else { 1.0 };
        let c = c.clamp(1e-6, 1e6);
        let mut monic = vec![0.0; n];
        for (i, slot) in monic.iter_mut().enumerate() {
            *slot = self.coeffs[i] / lead * c.powi(i as i32 - n as i32);
        }
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n - 1 {
            m[(i + 1, i)] = 1.0;
        }
        for i in 0..n {
            m[(i, n - 1)] = -monic[i];
        }
        let mut roots: Vec<Complex64> = m
            .complex_eigenvalues()
            .iter()
            .map(|z| z * c)
            .collect();
        let dp = self.derivative();
        for r in roots.iter_mut() {
            *r = self.polish_root(*r, &dp);
        }
        roots
    }

    fn polish_root(&self, mut r: Complex64, dp: &Polynomial) -> Complex64 {
        let mut best = r;
        let mut best_res = self.eval_complex(r).norm();
        for _ in 0..3 {
            let d = dp.eval_complex(r);
            if d.norm() < 1e-300 {
                break;
            }
            r -= self.eval_complex(r) / d;
            let res = self.eval_complex(r).norm();
            if res < best_res {
                best_res = res;
                best = r;
            }
        }
        best
    }

    /// Rebuilds a real polynomial from its roots and leading coefficient.
    /// Complex roots must appear in conjugate pairs (up to roundoff).
    pub fn from_roots(roots: &[Complex64], leading: f64) -> Polynomial {
        let mut c = vec![Complex64::new(leading, 0.0)];
        for r in roots {
            let mut next = vec![Complex64::ZERO; c.len() + 1];
            for (i, &a) in c.iter().enumerate() {
                next[i] -= a * r;
                next[i + 1] += a;
            }
            c = next;
        }
        Polynomial::new(c.iter().map(|z| z.re).collect())
    }
}

fn quadratic_roots(c0: f64, c1: f64) -> Vec<Complex64> {
    // Monic s^2 + c1 s + c0, solved the numerically stable way.
    let disc = c1 * c1 - 4.0 * c0;
    if disc >= 0.0 {
        let q = -0.5 * (c1 + c1.signum() * disc.sqrt());
        let r0 = if q != 0.0 { c0 / q } else { 0.0 };
        let r1 = if c1 != 0.0 || c0 != 0.0 { q } else { 0.0 };
        vec![Complex64::new(r0, 0.0), Complex64::new(r1, 0.0)]
    } else {
        let re = -0.5 * c1;
        let im = 0.5 * (-disc).sqrt();
        vec![Complex64::new(re, -im), Complex64::new(re, im)]
    }
}
