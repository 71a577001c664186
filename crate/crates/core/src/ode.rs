//! Dormand–Prince 5(4) integrator with step-size control and the
//! fourth-order continuous extension of Hairer, Nørsett & Wanner.
//!
//! The integrator works on fixed-size states `[f64; N]` and hands every
//! accepted step to an observer as a [`DenseStep`], which can be evaluated
//! anywhere inside the step. Integration runs forward or backward in time
//! depending on the sign of `t_end - t0`.

use std::ops::ControlFlow;

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// 5th minus embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Dense output.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on |h|; `None` means the whole interval.
    pub max_step: Option<f64>,
    pub max_steps: usize,
}

impl Dopri5 {
    pub fn new(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            max_step: None,
            max_steps: 200_000,
        }
    }

    pub fn with_atol(mut self, atol: f64) -> Self {
        self.atol = atol;
        self
    }

    pub fn with_max_step(mut self, h: f64) -> Self {
        self.max_step = Some(h);
        self
    }
}

/// One accepted step with its continuous extension.
#[derive(Debug, Clone)]
pub struct DenseStep<const N: usize> {
    pub t_start: f64,
    pub h: f64,
    pub y_start: [f64; N],
    pub y_end: [f64; N],
    /// Exact end time; the last step lands on the requested end, which
    /// `t_start + h` can miss by an ulp.
    t_stop: f64,
    rcont: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    pub fn t_end(&self) -> f64 {
        self.t_stop
    }

    /// True when `t` lies in the closed step interval.
    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.h >= 0.0 {
            (self.t_start, self.t_end())
        } else {
            (self.t_end(), self.t_start)
        };
        t >= lo && t <= hi
    }

    pub fn eval(&self, t: f64) -> [f64; N] {
        let s = (t - self.t_start) / self.h;
        let s1 = 1.0 - s;
        let r = &self.rcont;
        std::array::from_fn(|i| {
            r[0][i] + s * (r[1][i] + s1 * (r[2][i] + s * (r[3][i] + s1 * r[4][i])))
        })
    }
}

#[derive(Debug, Clone)]
pub struct Outcome<const N: usize> {
    pub t: f64,
    pub y: [f64; N],
    pub steps: usize,
    /// Whether the observer stopped the integration before `t_end`.
    pub interrupted: bool,
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    std::array::from_fn(|i| {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        y[i] + h * acc
    })
}

impl Dopri5 {
    fn error_norm<const N: usize>(&self, y: &[f64; N], y_new: &[f64; N], err: &[f64; N]) -> f64 {
        let mut sum = 0.0;
        for i in 0..N {
            let sc = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
            sum += (err[i] / sc).powi(2);
        }
        (sum / N as f64).sqrt()
    }

    fn initial_step<const N: usize>(&self, f0: &[f64; N], y0: &[f64; N], span: f64) -> f64 {
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..N {
            let sc = self.atol + self.rtol * y0[i].abs();
            d0 += (y0[i] / sc).powi(2);
            d1 += (f0[i] / sc).powi(2);
        }
        let (d0, d1) = ((d0 / N as f64).sqrt(), (d1 / N as f64).sqrt());
        let h = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        h.min(span.abs()).max(1e-12 * span.abs().max(1.0))
    }

    /// Integrates `dy/dt = rhs(t, y)` from `(t0, y0)` to `t_end`.
    ///
    /// `observer` sees every accepted step and may stop the integration by
    /// returning `ControlFlow::Break`.
    pub fn integrate<const N: usize, F, O>(
        &self,
        rhs: F,
        t0: f64,
        y0: [f64; N],
        t_end: f64,
        mut observer: O,
    ) -> Result<Outcome<N>>
    where
        F: Fn(f64, &[f64; N]) -> [f64; N],
        O: FnMut(&DenseStep<N>) -> ControlFlow<()>,
    {
        if !(t0.is_finite() && t_end.is_finite()) || y0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite initial value problem".into()));
        }
        let span = t_end - t0;
        let dir = if span >= 0.0 { 1.0 } else { -1.0 };
        let mut t = t0;
        let mut y = y0;
        if span == 0.0 {
            return Ok(Outcome {
                t,
                y,
                steps: 0,
                interrupted: false,
            });
        }
        let h_max = self.max_step.unwrap_or(span.abs()).min(span.abs());
        let mut k1 = rhs(t, &y);
        let mut h = self.initial_step(&k1, &y, span).min(h_max) * dir;
        let mut steps = 0usize;
        let mut rejected_in_row = 0usize;

        loop {
            if steps >= self.max_steps {
                return Err(Error::Integrator {
                    t,
                    state: y.to_vec(),
                    reason: format!("step budget of {} exhausted", self.max_steps),
                });
            }
            let remaining = t_end - t;
            let last = (h.abs() >= remaining.abs() * (1.0 - 1e-12)) || remaining.abs() < 1e-14;
            if last {
                h = remaining;
            }
            let k2 = rhs(t + C2 * h, &axpy(&y, h, &[(A21, &k1)]));
            let k3 = rhs(t + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
            let k4 = rhs(
                t + C4 * h,
                &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
            );
            let k5 = rhs(
                t + C5 * h,
                &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            );
            let k6 = rhs(
                t + h,
                &axpy(
                    &y,
                    h,
                    &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                ),
            );
            let y_new = axpy(
                &y,
                h,
                &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
            );
            let k7 = rhs(t + h, &y_new);
            let err: [f64; N] = std::array::from_fn(|i| {
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
            });
            let norm = self.error_norm(&y, &y_new, &err);

            if !norm.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                rejected_in_row += 1;
                if rejected_in_row > 50 {
                    return Err(Error::Integrator {
                        t,
                        state: y.to_vec(),
                        reason: "non-finite stage values".into(),
                    });
                }
                h *= 0.2;
                continue;
            }

            if norm <= 1.0 {
                let ydiff: [f64; N] = std::array::from_fn(|i| y_new[i] - y[i]);
                let rcont = [
                    y,
                    ydiff,
                    std::array::from_fn(|i| h * k1[i] - ydiff[i]),
                    std::array::from_fn(|i| ydiff[i] - h * k7[i] - (h * k1[i] - ydiff[i])),
                    std::array::from_fn(|i| {
                        h * (D1 * k1[i]
                            + D3 * k3[i]
                            + D4 * k4[i]
                            + D5 * k5[i]
                            + D6 * k6[i]
                            + D7 * k7[i])
                    }),
                ];
                let step = DenseStep {
                    t_start: t,
                    h,
                    y_start: y,
                    y_end: y_new,
                    t_stop: if last { t_end } else { t + h },
                    rcont,
                };
                steps += 1;
                rejected_in_row = 0;
                t = if last { t_end } else { t + h };
                y = y_new;
                k1 = k7;
                if observer(&step).is_break() {
                    return Ok(Outcome {
                        t,
                        y,
                        steps,
                        interrupted: true,
                    });
                }
                if last {
                    return Ok(Outcome {
                        t,
                        y,
                        steps,
                        interrupted: false,
                    });
                }
                let fac = (0.9 * norm.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
                h = (h * fac).abs().min(h_max) * dir;
            } else {
                rejected_in_row += 1;
                let fac = (0.9 * norm.powf(-0.2)).max(0.2);
                h *= fac;
            }
            if h.abs() < 1e-14 * t.abs().max(1.0) {
                return Err(Error::Integrator {
                    t,
                    state: y.to_vec(),
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }
        }
    }

    /// Integrates and samples the solution at the given times, which must be
    /// ordered in the direction of integration and lie between `t0` and the
    /// last entry.
    pub fn sample<const N: usize, F>(
        &self,
        rhs: F,
        t0: f64,
        y0: [f64; N],
        times: &[f64],
    ) -> Result<Vec<[f64; N]>>
    where
        F: Fn(f64, &[f64; N]) -> [f64; N],
    {
        let mut out = Vec::with_capacity(times.len());
        let mut next = 0;
        while next < times.len() && times[next] == t0 {
            out.push(y0);
            next += 1;
        }
        let Some(&t_end) = times.last() else {
            return Ok(out);
        };
        if next == times.len() {
            return Ok(out);
        }
        self.integrate(rhs, t0, y0, t_end, |step| {
            while next < times.len() && step.contains(times[next]) {
                let t = times[next];
                out.push(if t == step.t_end() {
                    step.y_end
                } else {
                    step.eval(t)
                });
                next += 1;
            }
            ControlFlow::Continue(())
        })?;
        if out.len() != times.len() {
            return Err(Error::Domain(
                "sample times are not ordered along the integration direction".into(),
            ));
        }
        Ok(out)
    }
}
