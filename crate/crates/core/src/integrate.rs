//! Adaptive explicit Runge–Kutta integration on flat complex state vectors.
//!
//! The embedded Dormand–Prince 5(4) pair drives every master-equation
//! propagation in this crate. State is a flat `&[c64]`; the right-hand side
//! writes dy/dt into a caller-provided buffer. Steps are clipped so that each
//! requested output time is hit exactly (no interpolation error on outputs).

use ndarray_linalg::c64;

use crate::error::{Error, Result};

/// Tolerance and step-count limits for [`integrate_to_grid`].
#[derive(Debug, Clone)]
pub struct StepControl {
    /// Relative tolerance on each state component.
    pub rtol: f64,
    /// Absolute tolerance floor.
    pub atol: f64,
    /// Hard cap on accepted + rejected steps.
    pub max_steps: usize,
    /// Optional initial step size (chosen automatically when `None`).
    pub h_init: Option<f64>,
    /// Optional upper bound on the step size (e.g. to resolve a drive tone).
    pub h_max: Option<f64>,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 20_000_000,
            h_init: None,
            h_max: None,
        }
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
// fifth-order weights; also row 7 of A (FSAL)
const B5: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
// b5 − b4, applied to k₁..k₇ for the embedded error estimate
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const SHRINK_MIN: f64 = 0.2;
const GROW_MAX: f64 = 5.0;

/// Integrate dy/dt = f(t, y) from `t0`, delivering the state at every time in
/// `outputs` (ascending, each ≥ t0) through `on_output(index, t, y)`.
///
/// If `t0` itself appears in `outputs` the initial state is delivered first.
pub fn integrate_to_grid<F, G>(
    mut rhs: F,
    t0: f64,
    y0: &[c64],
    outputs: &[f64],
    ctl: &StepControl,
    mut on_output: G,
) -> Result<()>
where
    F: FnMut(f64, &[c64], &mut [c64]),
    G: FnMut(usize, f64, &[c64]) -> Result<()>,
{
    if outputs.is_empty() {
        return Ok(());
    }
    if outputs.windows(2).any(|w| w[1] <= w[0]) || outputs[0] < t0 {
        return Err(Error::InvalidInput(
            "output times must be strictly ascending and ≥ t0".into(),
        ));
    }
    let n = y0.len();
    let t_end = *outputs.last().expect("nonempty");

    let mut y = y0.to_vec();
    let mut t = t0;
    let mut out_idx = 0;
    if outputs[0] == t0 {
        on_output(0, t0, &y)?;
        out_idx = 1;
        if out_idx == outputs.len() {
            return Ok(());
        }
    }

    let mut k: Vec<Vec<c64>> = (0..7).map(|_| vec![c64::new(0.0, 0.0); n]).collect();
    let mut ytmp = vec![c64::new(0.0, 0.0); n];
    let mut ynew = vec![c64::new(0.0, 0.0); n];

    rhs(t, &y, &mut k[0]);

    let h_cap = ctl.h_max.unwrap_or(f64::INFINITY);
    let mut h = match ctl.h_init {
        Some(h0) => h0,
        None => {
            let (k0, krest) = k.split_at_mut(1);
            initial_step(&mut rhs, t, &y, &k0[0], ctl, &mut ytmp, &mut krest[0])
        }
    }
    .min(t_end - t)
    .min(h_cap);

    let mut steps = 0usize;
    while t < t_end {
        steps += 1;
        if steps > ctl.max_steps {
            return Err(Error::Numerical(format!(
                "integrator exceeded {} steps at t = {t:.6e}",
                ctl.max_steps
            )));
        }
        // underflow check on the controller-chosen step only; clipping to a
        // nearby output time may legitimately shrink h_try below this
        let h_min = 1e-14 * t.abs().max(1.0);
        if h < h_min {
            return Err(Error::StepSizeUnderflow { t, h });
        }

        // clip to the next output time so it is hit exactly
        let mut clipped = false;
        let t_target = outputs[out_idx];
        let mut h_try = h;
        if t + h_try >= t_target {
            h_try = t_target - t;
            clipped = true;
        }

        // stages 2..6
        stage(&y, &[&k[0]], &A2, h_try, &mut ytmp);
        rhs(t + C[1] * h_try, &ytmp, &mut k[1]);
        stage2(&y, &k, 2, &A3, h_try, &mut ytmp);
        rhs(t + C[2] * h_try, &ytmp, &mut k[2]);
        stage2(&y, &k, 3, &A4, h_try, &mut ytmp);
        rhs(t + C[3] * h_try, &ytmp, &mut k[3]);
        stage2(&y, &k, 4, &A5, h_try, &mut ytmp);
        rhs(t + C[4] * h_try, &ytmp, &mut k[4]);
        stage2(&y, &k, 5, &A6, h_try, &mut ytmp);
        rhs(t + C[5] * h_try, &ytmp, &mut k[5]);

        // fifth-order solution and its derivative (FSAL stage 7)
        for i in 0..n {
            let mut acc = c64::new(0.0, 0.0);
            for (s, &b) in B5.iter().enumerate() {
                if b != 0.0 {
                    acc += k[s][i] * b;
                }
            }
            ynew[i] = y[i] + acc * h_try;
        }
        rhs(t + h_try, &ynew, &mut k[6]);

        // embedded error estimate
        let mut err_sq = 0.0f64;
        for i in 0..n {
            let mut e = c64::new(0.0, 0.0);
            for (s, &w) in E.iter().enumerate() {
                if w != 0.0 {
                    e += k[s][i] * w;
                }
            }
            let sc = ctl.atol + ctl.rtol * y[i].norm().max(ynew[i].norm());
            let r = e.norm() * h_try.abs() / sc;
            err_sq += r * r;
        }
        let err = (err_sq / n as f64).sqrt();

        if err <= 1.0 {
            // accept; a clipped step lands on the output time exactly
            t = if clipped { t_target } else { t + h_try };
            std::mem::swap(&mut y, &mut ynew);
            k.swap(0, 6); // FSAL: stage 7 is stage 1 of the next step
            if clipped {
                on_output(out_idx, t, &y)?;
                out_idx += 1;
                if out_idx == outputs.len() {
                    return Ok(());
                }
            }
            let factor = if err == 0.0 {
                GROW_MAX
            } else {
                (SAFETY * err.powf(-0.2)).clamp(SHRINK_MIN, GROW_MAX)
            };
            // when the step was clipped, grow from the pre-clip h
            h = (h.max(h_try) * factor).min(h_cap);
        } else {
            let factor = (SAFETY * err.powf(-0.2)).clamp(SHRINK_MIN, 1.0);
            h = h_try * factor;
        }
    }
    Ok(())
}

/// y + h·Σ a_s k_s over a single k (stage 2 helper).
fn stage(y: &[c64], ks: &[&Vec<c64>], a: &[f64], h: f64, out: &mut [c64]) {
    for i in 0..y.len() {
        let mut acc = c64::new(0.0, 0.0);
        for (s, k) in ks.iter().enumerate() {
            acc += k[i] * a[s];
        }
        out[i] = y[i] + acc * h;
    }
}

/// y + h·Σ_{s<m} a_s k_s using the shared k storage.
fn stage2(y: &[c64], k: &[Vec<c64>], m: usize, a: &[f64], h: f64, out: &mut [c64]) {
    for i in 0..y.len() {
        let mut acc = c64::new(0.0, 0.0);
        for (s, &w) in a.iter().enumerate().take(m) {
            if w != 0.0 {
                acc += k[s][i] * w;
            }
        }
        out[i] = y[i] + acc * h;
    }
}

/// Hairer–Nørsett–Wanner style automatic initial step selection.
fn initial_step<F>(
    rhs: &mut F,
    t0: f64,
    y0: &[c64],
    f0: &[c64],
    ctl: &StepControl,
    ytmp: &mut [c64],
    f1: &mut [c64],
) -> f64
where
    F: FnMut(f64, &[c64], &mut [c64]),
{
    let n = y0.len() as f64;
    let sc = |y: &[c64], i: usize| ctl.atol + ctl.rtol * y[i].norm();
    let d0 = (y0
        .iter()
        .enumerate()
        .map(|(i, z)| (z.norm() / sc(y0, i)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let d1 = (f0
        .iter()
        .enumerate()
        .map(|(i, z)| (z.norm() / sc(y0, i)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    for i in 0..y0.len() {
        ytmp[i] = y0[i] + f0[i] * h0;
    }
    rhs(t0 + h0, ytmp, f1);
    let d2 = (f1
        .iter()
        .zip(f0.iter())
        .enumerate()
        .map(|(i, (a, b))| ((a - b).norm() / sc(y0, i)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}
