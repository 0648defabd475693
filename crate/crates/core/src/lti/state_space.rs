use nalgebra::{Complex, DMatrix, DVector, RowDVector};
use num_complex::Complex64;

use super::transfer::RationalTransfer;
use super::LtiError;

/// Single-input single-output state-space model
/// `x' = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
    pub d: f64,
}

impl StateSpaceModel {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    /// True when the output depends on the input instantaneously.
    pub fn has_feedthrough(&self) -> bool {
        self.d != 0.0
    }

    pub fn output(&self, x: &DVector<f64>, u: f64) -> f64 {
        (&self.c * x)[0] + self.d * u
    }

    /// Frequency response `C (jw I - A)^-1 B + D`.
    pub fn freq_response(&self, w: f64) -> Complex64 {
        let n = self.n_states();
        if n == 0 {
            return Complex64::new(self.d, 0.0);
        }
        let mut m = DMatrix::<Complex<f64>>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = Complex::new(-self.a[(i, j)], 0.0);
            }
            m[(i, i)] += Complex::new(0.0, w);
        }
        let rhs = DVector::from_iterator(n, self.b.iter().map(|&v| Complex::new(v, 0.0)));
        let x = m
            .lu()
            .solve(&rhs)
            .expect("jwI - A is regular off the spectrum");
        let mut y = Complex::new(self.d, 0.0);
        for i in 0..n {
            y += Complex::new(self.c[i], 0.0) * x[i];
        }
        Complex64::new(y.re, y.im)
    }
}

/// Realizes a proper transfer function in controllable canonical form.
///
/// With the denominator scaled monic, `s^n + a_{n-1} s^{n-1} + ... + a_0`,
/// the companion structure puts the integrator chain on the superdiagonal
/// and the output row carries `b_k - b_n a_k`; `D = b_n`. A constant
/// transfer realizes with zero states.
pub fn to_state_space(g: &RationalTransfer) -> Result<StateSpaceModel, LtiError> {
    let rel = g.relative_degree();
    if rel < 0 {
        return Err(LtiError::ImproperTransfer {
            relative_degree: rel,
        });
    }
    let n = g.den().degree();
    let lead = g.den().leading();
    let den: Vec<f64> = g.den().coeffs().iter().map(|c| c / lead).collect();
    let mut num = vec![0.0; n + 1];
    for (k, c) in g.num().coeffs().iter().enumerate() {
        num[k] = c / lead;
    }
    let d = num[n];
    if n == 0 {
        return Ok(StateSpaceModel {
            a: DMatrix::zeros(0, 0),
            b: DVector::zeros(0),
            c: RowDVector::zeros(0),
            d,
        });
    }
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = -den[j];
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let mut c = RowDVector::zeros(n);
    for j in 0..n {
        c[j] = num[j] - d * den[j];
    }
    Ok(StateSpaceModel { a, b, c, d })
}
