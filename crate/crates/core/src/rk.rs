//! Dormand–Prince 5(4) with Hairer's continuous extension.
//!
//! The integrator works on fixed-size states `[f64; N]` and may march in
//! either direction of the independent variable. A single terminal event
//! (a scalar function of the state crossing zero from above) can be
//! attached; it is located by bisection on the dense output.

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

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Options<const N: usize> {
    pub rtol: f64,
    pub atol: [f64; N],
    /// Initial step magnitude; `0` picks one from the local derivative.
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
    pub event_tol: f64,
}

impl<const N: usize> Options<N> {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol: [atol; N],
            h_init: 0.0,
            h_max: f64::INFINITY,
            max_steps: 200_000,
            event_tol: 1e-12,
        }
    }
}

/// One accepted step together with its interpolation coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<const N: usize> {
    pub x0: f64,
    pub h: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    r: [[f64; N]; 4],
}

impl<const N: usize> Step<N> {
    pub fn x1(&self) -> f64 {
        self.x0 + self.h
    }

    /// Dense output at `x`, which should lie in the step (mild
    /// extrapolation is tolerated).
    pub fn eval(&self, x: f64) -> [f64; N] {
        let s = (x - self.x0) / self.h;
        let s1 = 1.0 - s;
        std::array::from_fn(|i| {
            self.y0[i]
                + s * (self.r[0][i] + s1 * (self.r[1][i] + s * (self.r[2][i] + s1 * self.r[3][i])))
        })
    }

    /// Derivative of the dense output with respect to `x`.
    pub fn eval_derivative(&self, x: f64) -> [f64; N] {
        let s = (x - self.x0) / self.h;
        std::array::from_fn(|i| {
            let (r1, r2, r3, r4) = (self.r[0][i], self.r[1][i], self.r[2][i], self.r[3][i]);
            // d/ds of s(r1 + (1-s)(r2 + s(r3 + (1-s) r4)))
            let inner = r3 + (1.0 - s) * r4;
            let d_inner = -r4;
            let mid = r2 + s * inner;
            let d_mid = inner + s * d_inner;
            let outer = r1 + (1.0 - s) * mid;
            let d_outer = -mid + (1.0 - s) * d_mid;
            (outer + s * d_outer) / self.h
        })
    }

    fn contains(&self, x: f64) -> bool {
        let (a, b) = if self.h > 0.0 {
            (self.x0, self.x1())
        } else {
            (self.x1(), self.x0)
        };
        (a..=b).contains(&x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event<const N: usize> {
    pub x: f64,
    pub y: [f64; N],
    /// Width of the final bisection bracket.
    pub bracket: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution<const N: usize> {
    pub steps: Vec<Step<N>>,
    pub event: Option<Event<N>>,
    pub rejected: usize,
    pub rhs_evals: usize,
}

impl<const N: usize> Solution<N> {
    pub fn x_start(&self) -> f64 {
        self.steps.first().map_or(f64::NAN, |s| s.x0)
    }

    /// Last abscissa covered: the event if one fired, else the end of the
    /// final step.
    pub fn x_end(&self) -> f64 {
        match (&self.event, self.steps.last()) {
            (Some(e), _) => e.x,
            (None, Some(s)) => s.x1(),
            (None, None) => f64::NAN,
        }
    }

    pub fn step_at(&self, x: f64) -> Option<&Step<N>> {
        let forward = self.steps.first()?.h > 0.0;
        let i = self
            .steps
            .partition_point(|s| if forward { s.x1() < x } else { s.x1() > x });
        let s = self.steps.get(i.min(self.steps.len() - 1))?;
        s.contains(x).then_some(s)
    }

    pub fn eval(&self, x: f64) -> Option<[f64; N]> {
        self.step_at(x).map(|s| s.eval(x))
    }

    pub fn eval_derivative(&self, x: f64) -> Option<[f64; N]> {
        self.step_at(x).map(|s| s.eval_derivative(x))
    }
}

/// Integrates `y' = rhs(x, y)` from `x0` towards `x_end`.
///
/// If `event` is given, integration stops at the first point where it
/// changes sign from positive to nonpositive; the crossing is refined to
/// `opts.event_tol`. Reaching `x_end` without an event is not an error.
pub fn integrate<const N: usize, F, G>(
    rhs: F,
    x0: f64,
    y0: [f64; N],
    x_end: f64,
    opts: &Options<N>,
    event: Option<G>,
) -> Result<Solution<N>>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    G: Fn(f64, &[f64; N]) -> f64,
{
    let dir = if x_end >= x0 { 1.0 } else { -1.0 };
    let span = (x_end - x0).abs();
    let mut sol = Solution {
        steps: Vec::new(),
        event: None,
        rejected: 0,
        rhs_evals: 0,
    };
    if span == 0.0 {
        return Ok(sol);
    }

    let mut x = x0;
    let mut y = y0;
    let mut k1 = rhs(x, &y);
    sol.rhs_evals += 1;
    check_finite(x, &k1)?;
    let mut h = if opts.h_init > 0.0 {
        opts.h_init
    } else {
        initial_step(&rhs, x, &y, &k1, dir, opts, &mut sol.rhs_evals)
    }
    .min(span)
    .min(opts.h_max);
    let mut g_prev = event.as_ref().map(|g| g(x, &y));
    let mut fac_old: f64 = 1e-4;

    loop {
        if sol.steps.len() >= opts.max_steps {
            return Err(Error::TooManySteps(opts.max_steps));
        }
        let remaining = (x_end - x) * dir;
        if remaining <= 1e-14 * span.max(x.abs()) {
            return Ok(sol);
        }
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let hs = h * dir;
        if h <= 4.0 * f64::EPSILON * x.abs() || h < f64::MIN_POSITIVE {
            return Err(Error::StepUnderflow { t: x, h });
        }

        let (y1, k7, err, stages) = dp_step(&rhs, x, &y, &k1, hs, opts);
        sol.rhs_evals += 6;
        let err = if y1.iter().chain(k7.iter()).all(|v| v.is_finite()) {
            err
        } else {
            f64::INFINITY
        };

        if err <= 1.0 {
            let step = make_step(x, hs, &y, &y1, &k1, &k7, &stages);
            let x1 = x + hs;
            if let (Some(g), Some(gp)) = (event.as_ref(), g_prev) {
                let g1 = g(x1, &y1);
                if gp > 0.0 && g1 <= 0.0 {
                    let ev = locate(&step, g, opts.event_tol);
                    sol.steps.push(step);
                    sol.event = Some(ev);
                    return Ok(sol);
                }
                g_prev = Some(g1);
            }
            sol.steps.push(step);
            x = if last { x_end } else { x1 };
            y = y1;
            k1 = k7;
            // PI step-size control (Hairer's beta = 0.04)
            let fac = (err.max(1e-10).powf(0.2 - 0.04 * 0.75) * fac_old.powf(-0.04) / 0.9)
                .clamp(0.2, 10.0);
            fac_old = err.max(1e-4);
            h = (h / fac).min(opts.h_max);
            if last {
                return Ok(sol);
            }
        } else {
            sol.rejected += 1;
            let fac = if err.is_finite() {
                (0.9 * err.powf(-0.2)).max(0.2)
            } else {
                0.1
            };
            h *= fac;
        }
    }
}

fn check_finite<const N: usize>(x: f64, v: &[f64; N]) -> Result<()> {
    if v.iter().all(|a| a.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("non-finite derivative at x = {x}")))
    }
}

fn scale<const N: usize>(opts: &Options<N>, a: &[f64; N], b: &[f64; N], i: usize) -> f64 {
    opts.atol[i] + opts.rtol * a[i].abs().max(b[i].abs())
}

fn initial_step<const N: usize, F>(
    rhs: &F,
    x: f64,
    y: &[f64; N],
    k1: &[f64; N],
    dir: f64,
    opts: &Options<N>,
    evals: &mut usize,
) -> f64
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let norm = |v: &[f64; N]| -> f64 {
        (v.iter()
            .enumerate()
            .map(|(i, a)| (a / scale(opts, y, y, i)).powi(2))
            .sum::<f64>()
            / N as f64)
            .sqrt()
    };
    let d0 = norm(y);
    let d1 = norm(k1);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1: [f64; N] = std::array::from_fn(|i| y[i] + dir * h0 * k1[i]);
    let k2 = rhs(x + dir * h0, &y1);
    *evals += 1;
    let diff: [f64; N] = std::array::from_fn(|i| k2[i] - k1[i]);
    let d2 = norm(&diff) / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dm).powf(0.2)
    };
    let h = (100.0 * h0).min(h1);
    if h.is_finite() && h > 0.0 {
        h
    } else {
        1e-6
    }
}

type Stages<const N: usize> = [[f64; N]; 5];

fn dp_step<const N: usize, F>(
    rhs: &F,
    x: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
    opts: &Options<N>,
) -> ([f64; N], [f64; N], f64, Stages<N>)
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let comb = |c: &[(f64, &[f64; N])]| -> [f64; N] {
        std::array::from_fn(|i| y[i] + h * c.iter().map(|(a, k)| a * k[i]).sum::<f64>())
    };
    let k2 = rhs(x + C2 * h, &comb(&[(A21, k1)]));
    let k3 = rhs(x + C3 * h, &comb(&[(A31, k1), (A32, &k2)]));
    let k4 = rhs(x + C4 * h, &comb(&[(A41, k1), (A42, &k2), (A43, &k3)]));
    let k5 = rhs(
        x + C5 * h,
        &comb(&[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
    );
    let k6 = rhs(
        x + h,
        &comb(&[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
    );
    let y1 = comb(&[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
    let k7 = rhs(x + h, &y1);
    let mut acc = 0.0;
    for i in 0..N {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        acc += (e / scale(opts, y, &y1, i)).powi(2);
    }
    (y1, k7, (acc / N as f64).sqrt(), [k2, k3, k4, k5, k6])
}

fn make_step<const N: usize>(
    x0: f64,
    h: f64,
    y0: &[f64; N],
    y1: &[f64; N],
    k1: &[f64; N],
    k7: &[f64; N],
    st: &Stages<N>,
) -> Step<N> {
    let [_, k3, k4, k5, k6] = st;
    let mut r = [[0.0; N]; 4];
    for i in 0..N {
        let ydiff = y1[i] - y0[i];
        let bspl = h * k1[i] - ydiff;
        r[0][i] = ydiff;
        r[1][i] = bspl;
        r[2][i] = ydiff - h * k7[i] - bspl;
        r[3][i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }
    Step {
        x0,
        h,
        y0: *y0,
        y1: *y1,
        r,
    }
}

fn locate<const N: usize, G>(step: &Step<N>, g: &G, tol: f64) -> Event<N>
where
    G: Fn(f64, &[f64; N]) -> f64,
{
    // invariant: g(hi_x) > 0 >= g(lo_x), walking in the step's direction
    let mut a = step.x0;
    let mut b = step.x1();
    let mut yb = step.y1;
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        let ym = step.eval(m);
        if g(m, &ym) > 0.0 {
            a = m;
        } else {
            b = m;
            yb = ym;
        }
    }
    Event {
        x: b,
        y: yb,
        bracket: (b - a).abs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    type NoEvent = fn(f64, &[f64; 2]) -> f64;

    #[test]
    fn harmonic_oscillator_forward_and_backward() {
        let rhs = |_x: f64, y: &[f64; 2]| [y[1], -y[0]];
        let opts = Options::new(1e-11, 1e-13);
        let sol = integrate(rhs, 0.0, [0.0, 1.0], 10.0, &opts, None::<NoEvent>).unwrap();
        let end = sol.steps.last().unwrap().y1;
        assert_relative_eq!(end[0], 10f64.sin(), epsilon = 1e-9);
        let back = integrate(rhs, 10.0, end, 0.0, &opts, None::<NoEvent>).unwrap();
        let y = back.steps.last().unwrap().y1;
        assert!(y[0].abs() < 1e-9 && (y[1] - 1.0).abs() < 1e-9);
        // dense output inside a step
        for x in [0.37, 3.3, 7.77] {
            let v = sol.eval(x).unwrap();
            assert_relative_eq!(v[0], x.sin(), epsilon = 1e-9);
            let d = sol.eval_derivative(x).unwrap();
            assert_relative_eq!(d[0], x.cos(), epsilon = 1e-7);
        }
    }

    #[test]
    fn event_located_to_tolerance() {
        let rhs = |_x: f64, y: &[f64; 2]| [y[1], -y[0]];
        let opts = Options::new(1e-12, 1e-14);
        let sol = integrate(
            rhs,
            0.5,
            [0.5f64.sin(), 0.5f64.cos()],
            10.0,
            &opts,
            Some(|_x: f64, y: &[f64; 2]| y[0]),
        )
        .unwrap();
        let ev = sol.event.unwrap();
        assert!((ev.x - std::f64::consts::PI).abs() < 1e-10);
        assert!(ev.bracket <= 1e-12);
        assert_eq!(sol.x_end(), ev.x);
    }

    #[test]
    fn exponential_decay_error_scales_with_tolerance() {
        let rhs = |_x: f64, y: &[f64; 1]| [-y[0]];
        let err = |tol: f64| {
            let sol = integrate(
                rhs,
                0.0,
                [1.0],
                5.0,
                &Options::new(tol, tol * 1e-2),
                None::<fn(f64, &[f64; 1]) -> f64>,
            )
            .unwrap();
            (sol.steps.last().unwrap().y1[0] - (-5f64).exp()).abs()
        };
        assert!(err(1e-6) > err(1e-10));
        assert!(err(1e-10) < 1e-11);
    }

    #[test]
    fn step_budget_reported() {
        let rhs = |_x: f64, y: &[f64; 1]| [y[0]];
        let mut opts = Options::new(1e-10, 1e-12);
        opts.max_steps = 3;
        let r = integrate(
            rhs,
            0.0,
            [1.0],
            50.0,
            &opts,
            None::<fn(f64, &[f64; 1]) -> f64>,
        );
        assert!(matches!(r, Err(Error::TooManySteps(3))));
    }
}
