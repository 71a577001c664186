//! Small quadrature kernels shared by the solvers.

/// Composite trapezoid of uniformly spaced samples.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (0.5 * (values[0] + values[n - 1]) + values[1..n - 1].iter().sum::<f64>()),
    }
}

/// Trapezoid weight (in units of h) of node `k` out of `0..=n`.
#[inline]
pub fn trap_weight(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else if k == 0 || k == n {
        0.5
    } else {
        1.0
    }
}

/// `∫₀^1 v^m e^{−zv} dv` for `m ≤ 2`.
fn moment(m: u32, z: f64) -> f64 {
    if z.abs() < 0.1 {
        // Σ (−z)^k / (k! (k + m + 1)), converged to rounding after 14 terms.
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 0..14 {
            sum += term / (k + m + 1) as f64;
            term *= -z / (k + 1) as f64;
        }
        return sum;
    }
    let e = (-z).exp();
    let om = -(-z).exp_m1();
    match m {
        0 => om / z,
        1 => (om - z * e) / (z * z),
        _ => (2.0 * om - z * e * (2.0 + z)) / (z * z * z),
    }
}

/// Panel coefficients for `∫₀^h g(u) e^{−λu} du` with `g` linear on the panel.
///
/// With `z = λh` the integral is `h (left·g(0) + right·g(h))`, exact for linear `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpPanel {
    pub decay: f64,
    pub left: f64,
    pub right: f64,
}

impl ExpPanel {
    pub fn new(lambda: f64, h: f64) -> Self {
        let z = lambda * h;
        let (i0, i1) = (moment(0, z), moment(1, z));
        Self {
            decay: (-z).exp(),
            left: i0 - i1,
            right: i1,
        }
    }
}

/// Derivative in λ of the [`ExpPanel`] coefficients, i.e. the weights of
/// `∫₀^h g(u)(−u)e^{−λu} du`, returned as `(left, right)` in units of `h²`.
pub fn exp_panel_dlambda(lambda: f64, h: f64) -> (f64, f64) {
    let z = lambda * h;
    let (i1, i2) = (moment(1, z), moment(2, z));
    (-(i1 - i2), -i2)
}
