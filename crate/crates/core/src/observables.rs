//! Observables: surviving population, mean dwelling time, and momentum-space
//! analysis on open chains.
//!
//! The dwelling time t̄ = ∫₀^∞ P(t) dt is the toolkit's central figure of
//! merit. Two independent routes are provided: direct adaptive integration
//! with an exponential-tail correction ([`DwellMethod::Integrate`]), and an
//! exact resolvent evaluation in the eigenbasis of the effective
//! non-Hermitian generator ([`DwellMethod::Resolvent`]). They agree to the
//! integrator's accuracy and serve as mutual checks; the resolvent route is
//! preferred wherever its dense eigendecomposition is affordable.

use ndarray::{Array1, Array2};
use ndarray_linalg::c64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Generator, InitialState, ModelSpec, NetworkState};
use crate::error::{Error, Result};
use crate::integrate::{integrate_to_grid, StepControl};

/// Population remaining on the network, P(t) = tr ρ(t).
pub fn population(state: &NetworkState) -> f64 {
    state.population()
}

/// How to evaluate the dwelling time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DwellMethod {
    /// Adaptive integration of the master equation in windows, with an
    /// exponential tail extrapolated from the asymptotic decay rate. Scales
    /// to any lattice the integrator can hold in memory.
    Integrate,
    /// Exact eigenbasis resolvent (no time discretization). Limited to
    /// moderate site counts by its dense O(S⁴) closure.
    Resolvent,
}

/// Mean dwelling time t̄ = ∫₀^∞ P(t) dt.
///
/// Returns [`Error::DivergentDwellingTime`] when locked states retain
/// population forever (e.g. rings or squares at p = 0), in which case the
/// integral does not exist.
pub fn dwelling_time(model: &ModelSpec, initial: &InitialState, method: DwellMethod) -> Result<f64> {
    model.validate()?;
    if model.gamma == 0.0 {
        return Err(Error::DivergentDwellingTime(
            "the model has no sink (Γ = 0), so the population never exits".into(),
        ));
    }
    match method {
        DwellMethod::Integrate => dwelling_time_integrate(model, initial),
        DwellMethod::Resolvent => crate::resolvent::dwelling_time_resolvent(model, initial),
    }
}

/// Window length (units of 1/J) for the integrate route.
const DWELL_WINDOW: f64 = 25.0;
const DWELL_MAX_WINDOWS: usize = 4000;

fn dwelling_time_integrate(model: &ModelSpec, initial: &InitialState) -> Result<f64> {
    let gen = Generator::new(model)?;
    let s = gen.s;
    let rho0 = initial.density_matrix(s)?;
    let mut y = gen.flatten(&rho0, 0.0, 0.0);
    let mut ws = gen.workspace();
    let ctl = StepControl {
        rtol: 1e-9,
        atol: 1e-13,
        ..StepControl::default()
    };

    let trace_of = |y: &[c64]| -> f64 { (0..s).map(|a| y[a * s + a].re).sum() };

    let mut t = 0.0;
    let mut p_prev = trace_of(&y);
    let mut est_prev = f64::INFINITY;
    let mut agree = 0usize;
    let mut flat = 0usize;
    let mut buf = y.clone();

    for _ in 0..DWELL_MAX_WINDOWS {
        let t_next = t + DWELL_WINDOW;
        integrate_to_grid(
            |_, yy, dy| gen.rhs(&mut ws, yy, dy),
            t,
            &y,
            &[t_next],
            &ctl,
            |_, _, yy| {
                buf.copy_from_slice(yy);
                Ok(())
            },
        )?;
        std::mem::swap(&mut y, &mut buf);
        t = t_next;

        let p_cur = trace_of(&y);
        let dwell = y[s * s + 1].re;
        if p_cur < 1e-13 {
            return Ok(dwell);
        }
        // plateau ⇒ locked population, the integral diverges
        if p_cur > 1e-9 && (p_prev - p_cur).abs() < 1e-10 * p_cur {
            flat += 1;
            if flat >= 3 {
                return Err(Error::DivergentDwellingTime(format!(
                    "population plateaued at {p_cur:.6e} by t = {t:.1} \
                     (locked states); the dwelling time is infinite"
                )));
            }
        } else {
            flat = 0;
        }
        let mu = (p_prev / p_cur).ln() / DWELL_WINDOW;
        if mu > 0.0 {
            let tail = p_cur / mu;
            let est = dwell + tail;
            if tail < 1e-9 * est {
                return Ok(est);
            }
            if (est - est_prev).abs() <= 1e-9 * est.abs() {
                agree += 1;
                if agree >= 2 {
                    return Ok(est);
                }
            } else {
                agree = 0;
            }
            est_prev = est;
        }
        p_prev = p_cur;
    }
    Err(Error::Numerical(format!(
        "dwelling time did not converge within {DWELL_MAX_WINDOWS} windows \
         (t = {t:.0}, P = {p_prev:.3e})"
    )))
}

/// Single-excitation momentum eigenbasis of an open chain of N sites:
/// |k_n⟩ with k_n = πn/(N+1), components √(2/(N+1)) sin(k_n i), energies
/// E_n = −2(1−p)J cos k_n and group velocities v_n = 2(1−p)J sin k_n.
#[derive(Debug, Clone)]
pub struct MomentumBasis {
    pub n: usize,
    /// Momenta k_n, n = 1..N.
    pub momenta: Vec<f64>,
    /// Band energies E_n.
    pub energies: Vec<f64>,
    /// Group velocities v_n = dE/dk ≥ 0 (lattice constant 1).
    pub velocities: Vec<f64>,
    /// Column n−1 holds |k_n⟩ in the site basis.
    vectors: Array2<f64>,
}

impl MomentumBasis {
    /// Basis for a chain of `n` sites with effective coupling (1−p)J.
    pub fn chain(n: usize, p: f64, j: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("chain must have at least one site".into()));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("p must lie in [0, 1], got {p}")));
        }
        if !(j > 0.0) {
            return Err(Error::InvalidInput(format!("j must be > 0, got {j}")));
        }
        let jeff = (1.0 - p) * j;
        let norm = (2.0 / (n as f64 + 1.0)).sqrt();
        let mut momenta = Vec::with_capacity(n);
        let mut energies = Vec::with_capacity(n);
        let mut velocities = Vec::with_capacity(n);
        let mut vectors = Array2::<f64>::zeros((n, n));
        for m in 1..=n {
            let k = std::f64::consts::PI * m as f64 / (n as f64 + 1.0);
            momenta.push(k);
            energies.push(-2.0 * jeff * k.cos());
            velocities.push(2.0 * jeff * k.sin());
            for i in 1..=n {
                vectors[[i - 1, m - 1]] = norm * (k * i as f64).sin();
            }
        }
        Ok(MomentumBasis {
            n,
            momenta,
            energies,
            velocities,
            vectors,
        })
    }

    /// Momentum eigenvector |k_n⟩ (1-based n) in the site basis.
    pub fn vector(&self, n: usize) -> Result<ndarray::ArrayView1<'_, f64>> {
        if n == 0 || n > self.n {
            return Err(Error::InvalidInput(format!(
                "momentum index {n} outside 1..={}",
                self.n
            )));
        }
        Ok(self.vectors.column(n - 1))
    }
}

/// Momentum populations P_n(t) = ⟨k_n|ρ(t)|k_n⟩. Because the basis is
/// complete, Σ_n P_n equals the surviving population.
pub fn momentum_populations(state: &NetworkState, basis: &MomentumBasis) -> Result<Vec<f64>> {
    let s = basis.n;
    if state.rho.nrows() != s {
        return Err(Error::DimensionMismatch {
            expected: s,
            got: state.rho.nrows(),
        });
    }
    let mut out = Vec::with_capacity(s);
    let mut tmp = Array1::<c64>::zeros(s);
    for m in 0..s {
        let v = basis.vectors.column(m);
        for a in 0..s {
            let mut acc = c64::new(0.0, 0.0);
            for b in 0..s {
                acc += state.rho[[a, b]] * v[b];
            }
            tmp[a] = acc;
        }
        let p: c64 = v
            .iter()
            .zip(tmp.iter())
            .map(|(&va, &ta)| ta * va)
            .sum();
        out.push(p.re);
    }
    Ok(out)
}

/// Group velocity of the n-th momentum state (1-based).
pub fn group_velocity(basis: &MomentumBasis, n: usize) -> Result<f64> {
    if n == 0 || n > basis.n {
        return Err(Error::InvalidInput(format!(
            "momentum index {n} outside 1..={}",
            basis.n
        )));
    }
    Ok(basis.velocities[n - 1])
}
