//! Cubic splines on unit-spaced knots.

/// How the two end intervals are closed off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndCondition {
    /// Zero second derivative at both ends.
    Natural,
    /// Third derivative continuous across the second and second-to-last
    /// knots. Exact for cubics, so a peak's location does not pick up the
    /// first-order bias a natural spline leaves near the ends.
    NotAKnot,
}

/// Interpolant through `(i, y[i])` for `i = 0..y.len()`.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    /// Panics if fewer than two knots are given.
    pub fn natural(y: &[f64]) -> Self {
        Self::new(y, EndCondition::Natural)
    }

    /// Not-a-knot spline. With three knots this is the parabola through
    /// them.
    pub fn not_a_knot(y: &[f64]) -> Self {
        Self::new(y, EndCondition::NotAKnot)
    }

    pub fn new(y: &[f64], end: EndCondition) -> Self {
        assert!(y.len() >= 2, "a spline needs at least two knots");
        let n = y.len();
        let mut m = vec![0.0; n];
        if n == 2 {
            return Self { y: y.to_vec(), m };
        }
        // Interior rows: M[i-1] + 4 M[i] + M[i+1] = 6 Δ²y[i], i = 1..n-1.
        let k = n - 2;
        let rhs: Vec<f64> = (0..k)
            .map(|i| 6.0 * (y[i + 2] - 2.0 * y[i + 1] + y[i]))
            .collect();
        if end == EndCondition::NotAKnot && n == 3 {
            m.iter_mut().for_each(|v| *v = rhs[0] / 6.0);
            return Self { y: y.to_vec(), m };
        }
        let mut diag = vec![4.0; k];
        let sub = vec![1.0; k];
        let mut sup = vec![1.0; k];
        if end == EndCondition::NotAKnot {
            // M0 = 2 M1 - M2 folds the first row into 6 M1; same at the end.
            diag[0] = 6.0;
            sup[0] = 0.0;
            diag[k - 1] = 6.0;
        }
        let mut sub = sub;
        if end == EndCondition::NotAKnot {
            sub[k - 1] = 0.0;
        }
        let interior = thomas(&sub, &diag, &sup, &rhs);
        m[1..=k].copy_from_slice(&interior);
        if end == EndCondition::NotAKnot {
            m[0] = 2.0 * m[1] - m[2];
            m[n - 1] = 2.0 * m[n - 2] - m[n - 3];
        }
        Self { y: y.to_vec(), m }
    }

    /// Value at `x`, clamped to the knot range.
    pub fn eval(&self, x: f64) -> f64 {
        let last = (self.y.len() - 1) as f64;
        let x = x.clamp(0.0, last);
        let i = (x.floor() as usize).min(self.y.len() - 2);
        let t = x - i as f64;
        let u = 1.0 - t;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        m0 * u.powi(3) / 6.0
            + m1 * t.powi(3) / 6.0
            + (self.y[i] - m0 / 6.0) * u
            + (self.y[i + 1] - m1 / 6.0) * t
    }
}

/// Tridiagonal solve; `sub[0]` and `sup[last]` are ignored.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / denom;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}
