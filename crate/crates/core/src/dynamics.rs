//! Open-system dynamics in the single-excitation subspace.
//!
//! The density matrix evolves under
//!
//! dρ/dt = −i[H, ρ] + 𝓛_noise ρ + 𝓛_sink ρ
//!
//! with H the (possibly disordered) hopping Hamiltonian, 𝓛_noise one of the
//! two noise channels (classical hopping or pure dephasing, both with rates
//! proportional to pJ), and 𝓛_sink an irreversible drain of rate Γ on the
//! exit sites. Three complementary solvers are provided: an adaptive
//! master-equation integrator ([`propagate`]), a fixed-step Kraus map
//! ([`kraus_step`] / [`KrausPropagator`]), and a quantum-jump unraveling
//! ([`sample_trajectory`] / [`ensemble_populations`]) whose ensemble mean
//! reproduces the master equation.

use ndarray::linalg::general_mat_mul;
use ndarray::Array2;
use ndarray_linalg::{c64, Eigh, UPLO};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{integrate_to_grid, StepControl};
use crate::lattice::Lattice;
use crate::spectral::HamiltonianSpec;

/// Which incoherent channel accompanies the coherent hopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    /// Classical hopping: population is transported incoherently along the
    /// lattice edges at rate pJ/z per directed edge, and coherences decay
    /// accordingly.
    #[serde(rename = "ch")]
    ClassicalHopping,
    /// Pure dephasing: site populations are frozen by the noise; every
    /// off-diagonal element decays at the total rate pJ.
    #[serde(rename = "pd")]
    PureDephasing,
}

/// Complete specification of one open-system model.
///
/// The coherent part defaults to the uniform Hamiltonian with effective
/// coupling (1−p)J on every edge of `lattice`; setting `hamiltonian`
/// overrides it (e.g. with a disordered spec), in which case the override is
/// used verbatim and only the noise and sink rates depend on `p`, `j`, and
/// `gamma`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub lattice: Lattice,
    /// Bare coupling J > 0; the unit of energy throughout.
    pub j: f64,
    /// Noise fraction p ∈ [0, 1].
    pub p: f64,
    pub noise: NoiseKind,
    /// Sink rate Γ ≥ 0 applied on the lattice's exit sites.
    pub gamma: f64,
    /// Optional override of the coherent part.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<HamiltonianSpec>,
}

impl ModelSpec {
    pub fn new(lattice: Lattice, j: f64, p: f64, noise: NoiseKind, gamma: f64) -> Self {
        ModelSpec {
            lattice,
            j,
            p,
            noise,
            gamma,
            hamiltonian: None,
        }
    }

    /// Same model at a different noise fraction (used by parameter scans).
    pub fn with_p(&self, p: f64) -> Self {
        let mut m = self.clone();
        m.p = p;
        m
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.j > 0.0) {
            return Err(Error::InvalidInput(format!("j must be > 0, got {}", self.j)));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidInput(format!("p must lie in [0, 1], got {}", self.p)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidInput(format!("gamma must be ≥ 0, got {}", self.gamma)));
        }
        if let Some(h) = &self.hamiltonian {
            h.validate()?;
            if h.lattice.n_sites != self.lattice.n_sites {
                return Err(Error::DimensionMismatch {
                    expected: self.lattice.n_sites,
                    got: h.lattice.n_sites,
                });
            }
        }
        Ok(())
    }
}

/// Initial condition for the master equation and its unravelings.
#[derive(Debug, Clone)]
pub enum InitialState {
    /// Excitation localized on one site (1-based label).
    Site(usize),
    /// Maximally mixed single-excitation state, ρ = 𝟙/S.
    UniformMixture,
    /// Arbitrary density matrix (must be Hermitian with unit trace).
    Explicit(Array2<c64>),
}

impl InitialState {
    /// Materialize as an S × S density matrix.
    pub fn density_matrix(&self, s: usize) -> Result<Array2<c64>> {
        match self {
            InitialState::Site(i) => {
                if *i == 0 || *i > s {
                    return Err(Error::InvalidInput(format!("site {i} outside 1..={s}")));
                }
                let mut rho = Array2::<c64>::zeros((s, s));
                rho[[*i - 1, *i - 1]] = c64::new(1.0, 0.0);
                Ok(rho)
            }
            InitialState::UniformMixture => {
                Ok(Array2::<c64>::eye(s) / c64::new(s as f64, 0.0))
            }
            InitialState::Explicit(rho) => {
                if rho.nrows() != s || rho.ncols() != s {
                    return Err(Error::DimensionMismatch {
                        expected: s,
                        got: rho.nrows(),
                    });
                }
                let mut tr = c64::new(0.0, 0.0);
                for a in 0..s {
                    tr += rho[[a, a]];
                    for b in a..s {
                        let d = rho[[a, b]] - rho[[b, a]].conj();
                        if d.norm() > 1e-10 {
                            return Err(Error::InvalidInput(
                                "explicit initial state is not Hermitian".into(),
                            ));
                        }
                    }
                }
                if (tr - 1.0).norm() > 1e-8 {
                    return Err(Error::InvalidInput(format!(
                        "explicit initial state has trace {tr} ≠ 1"
                    )));
                }
                Ok(rho.clone())
            }
        }
    }
}

/// Snapshot of the open-system state at one time.
#[derive(Debug, Clone)]
pub struct NetworkState {
    /// Density matrix on the network (trace ≤ 1 once population has exited).
    pub rho: Array2<c64>,
    /// Cumulative population absorbed by the sink.
    pub exited: f64,
    pub time: f64,
}

impl NetworkState {
    pub fn new(rho: Array2<c64>, exited: f64, time: f64) -> Self {
        NetworkState { rho, exited, time }
    }

    /// Population still on the network, P(t) = tr ρ.
    pub fn population(&self) -> f64 {
        (0..self.rho.nrows()).map(|a| self.rho[[a, a]].re).sum()
    }
}

// ---------------------------------------------------------------------------
// generator
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
pub(crate) enum FeedKind {
    /// CH: diagonal gain (rate) Σ_{j ∈ N(i)} ρ_jj into site i.
    Hopping { rate: f64 },
    /// PD: diagonal gain (rate) ρ_ii, exactly cancelling the dephasing loss
    /// on the diagonal.
    Dephasing { rate: f64 },
}

/// Dense real representation of the full generator: coherent part `h`, total
/// diagonal decay rates `w` (noise + sink), and the diagonal feed channel.
/// The action on ρ is
///
/// 𝓛ρ = −i(Hρ − ρH) − ½(Wρ + ρW) + Feed(diag ρ)
pub(crate) struct Generator {
    pub s: usize,
    pub h: Array2<f64>,
    pub w: Vec<f64>,
    pub feed: FeedKind,
    /// 0-based adjacency, rebuilt locally so the generator never depends on
    /// the lattice's serde-skipped cache.
    pub adjacency: Vec<Vec<usize>>,
    /// 0-based exit indices.
    pub exits: Vec<usize>,
    pub gamma: f64,
}

impl Generator {
    pub fn new(model: &ModelSpec) -> Result<Self> {
        model.validate()?;
        let s = model.lattice.n_sites;
        let mut adjacency = vec![Vec::new(); s];
        for &(i, j) in &model.lattice.edges {
            adjacency[i - 1].push(j - 1);
            adjacency[j - 1].push(i - 1);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }

        let h = match &model.hamiltonian {
            Some(spec) => spec.dense(),
            None => {
                let coupling = (1.0 - model.p) * model.j;
                let mut h = Array2::<f64>::zeros((s, s));
                for &(i, j) in &model.lattice.edges {
                    h[[i - 1, j - 1]] = -coupling;
                    h[[j - 1, i - 1]] = -coupling;
                }
                h
            }
        };

        let z = model.lattice.z as f64;
        let noise_rate = model.p * model.j;
        let mut w = vec![0.0; s];
        let feed = match model.noise {
            NoiseKind::ClassicalHopping => {
                let per_edge = noise_rate / z;
                for (i, list) in adjacency.iter().enumerate() {
                    w[i] = per_edge * list.len() as f64;
                }
                FeedKind::Hopping { rate: per_edge }
            }
            NoiseKind::PureDephasing => {
                for wi in &mut w {
                    *wi = noise_rate;
                }
                FeedKind::Dephasing { rate: noise_rate }
            }
        };
        let exits: Vec<usize> = model.lattice.exits.iter().map(|&x| x - 1).collect();
        for &x in &exits {
            w[x] += model.gamma;
        }
        Ok(Generator {
            s,
            h,
            w,
            feed,
            adjacency,
            exits,
            gamma: model.gamma,
        })
    }

    pub fn workspace(&self) -> RhsWorkspace {
        let s = self.s;
        RhsWorkspace {
            rr: Array2::zeros((s, s)),
            ri: Array2::zeros((s, s)),
            pr: Array2::zeros((s, s)),
            pi: Array2::zeros((s, s)),
            qr: Array2::zeros((s, s)),
            qi: Array2::zeros((s, s)),
        }
    }

    /// Flat state layout: [ρ row-major (S²), exited, dwell integral].
    pub const EXTRA: usize = 2;

    pub fn flat_len(&self) -> usize {
        self.s * self.s + Self::EXTRA
    }

    /// 𝓛 applied to the flat state. Exactly complex-linear, so it agrees
    /// with the vectorized superoperator on arbitrary (not necessarily
    /// Hermitian) inputs.
    pub fn rhs(&self, ws: &mut RhsWorkspace, y: &[c64], dy: &mut [c64]) {
        let s = self.s;
        debug_assert_eq!(y.len(), self.flat_len());

        {
            let rr = ws.rr.as_slice_mut().unwrap();
            let ri = ws.ri.as_slice_mut().unwrap();
            for k in 0..s * s {
                rr[k] = y[k].re;
                ri[k] = y[k].im;
            }
        }
        // P = Hρ, Q = ρH, four real GEMMs
        general_mat_mul(1.0, &self.h, &ws.rr, 0.0, &mut ws.pr);
        general_mat_mul(1.0, &self.h, &ws.ri, 0.0, &mut ws.pi);
        general_mat_mul(1.0, &ws.rr, &self.h, 0.0, &mut ws.qr);
        general_mat_mul(1.0, &ws.ri, &self.h, 0.0, &mut ws.qi);

        let pr = ws.pr.as_slice().unwrap();
        let pi = ws.pi.as_slice().unwrap();
        let qr = ws.qr.as_slice().unwrap();
        let qi = ws.qi.as_slice().unwrap();
        for a in 0..s {
            let wa = self.w[a];
            for b in 0..s {
                let k = a * s + b;
                // −i(P − Q) − ½(w_a + w_b)ρ
                let cr = pr[k] - qr[k];
                let ci = pi[k] - qi[k];
                let damp = 0.5 * (wa + self.w[b]);
                dy[k] = c64::new(ci - damp * y[k].re, -cr - damp * y[k].im);
            }
        }
        match self.feed {
            FeedKind::Hopping { rate } => {
                for (a, list) in self.adjacency.iter().enumerate() {
                    let mut acc = c64::new(0.0, 0.0);
                    for &j in list {
                        acc += y[j * s + j];
                    }
                    dy[a * s + a] += rate * acc;
                }
            }
            FeedKind::Dephasing { rate } => {
                for a in 0..s {
                    dy[a * s + a] += rate * y[a * s + a];
                }
            }
        }
        let mut drain = c64::new(0.0, 0.0);
        for &x in &self.exits {
            drain += y[x * s + x];
        }
        dy[s * s] = self.gamma * drain;
        let mut trace = c64::new(0.0, 0.0);
        for a in 0..s {
            trace += y[a * s + a];
        }
        dy[s * s + 1] = trace;
    }

    /// Diagonal feed map d ↦ F d restricted to population vectors; the
    /// resolvent-based dwelling-time solver closes its equations over this
    /// map.
    pub fn feed_diag(&self, d: &[f64], out: &mut [f64]) {
        match self.feed {
            FeedKind::Hopping { rate } => {
                for (a, list) in self.adjacency.iter().enumerate() {
                    out[a] = rate * list.iter().map(|&j| d[j]).sum::<f64>();
                }
            }
            FeedKind::Dephasing { rate } => {
                for (a, v) in d.iter().enumerate() {
                    out[a] = rate * v;
                }
            }
        }
    }

    pub fn flatten(&self, rho: &Array2<c64>, exited: f64, dwell: f64) -> Vec<c64> {
        let s = self.s;
        let mut y = Vec::with_capacity(self.flat_len());
        y.extend(rho.iter().copied());
        debug_assert_eq!(y.len(), s * s);
        y.push(c64::new(exited, 0.0));
        y.push(c64::new(dwell, 0.0));
        y
    }

    pub fn unflatten(&self, y: &[c64], time: f64) -> NetworkState {
        let s = self.s;
        let rho = Array2::from_shape_vec((s, s), y[..s * s].to_vec()).unwrap();
        NetworkState::new(rho, y[s * s].re, time)
    }
}

pub(crate) struct RhsWorkspace {
    rr: Array2<f64>,
    ri: Array2<f64>,
    pr: Array2<f64>,
    pi: Array2<f64>,
    qr: Array2<f64>,
    qi: Array2<f64>,
}

/// One application of the full generator: dρ/dt for the given density
/// matrix. Useful for stationarity checks and as a reference point for the
/// solvers; the heavy lifting happens in [`propagate`], which reuses
/// workspaces across steps.
pub fn liouvillian_apply(model: &ModelSpec, rho: &Array2<c64>) -> Result<Array2<c64>> {
    let gen = Generator::new(model)?;
    if rho.nrows() != gen.s || rho.ncols() != gen.s {
        return Err(Error::DimensionMismatch {
            expected: gen.s,
            got: rho.nrows(),
        });
    }
    let mut ws = gen.workspace();
    let y = gen.flatten(rho, 0.0, 0.0);
    let mut dy = vec![c64::new(0.0, 0.0); gen.flat_len()];
    gen.rhs(&mut ws, &y, &mut dy);
    Ok(Array2::from_shape_vec((gen.s, gen.s), dy[..gen.s * gen.s].to_vec()).unwrap())
}

/// Integrate the master equation from t = 0 and report the state at each of
/// the requested `times` (strictly ascending, ≥ 0).
pub fn propagate(
    model: &ModelSpec,
    initial: &InitialState,
    times: &[f64],
    ctl: &StepControl,
) -> Result<Vec<NetworkState>> {
    let gen = Generator::new(model)?;
    let rho0 = initial.density_matrix(gen.s)?;
    let y0 = gen.flatten(&rho0, 0.0, 0.0);
    let mut ws = gen.workspace();
    let mut out = Vec::with_capacity(times.len());
    integrate_to_grid(
        |_, y, dy| gen.rhs(&mut ws, y, dy),
        0.0,
        &y0,
        times,
        ctl,
        |_, t, y| {
            out.push(gen.unflatten(y, t));
            Ok(())
        },
    )?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Kraus map
// ---------------------------------------------------------------------------

/// Fixed-step propagator: exact unitary e^{−iHδt}, followed by one
/// first-order Kraus application of the noise channel, followed by the exact
/// sink decay e^{−Γδt/2} on exit sites. Trace is conserved to O(δt²) per
/// step (the Kraus set is complete to that order), and the sink bookkeeping
/// is exact.
pub struct KrausPropagator {
    s: usize,
    dt: f64,
    /// e^{−iH δt} (complex symmetric since H is real symmetric).
    u: Array2<c64>,
    u_dag: Array2<c64>,
    /// Diagonal of E₀ for the noise channel.
    e0: Vec<f64>,
    feed_rate_dt: f64,
    feed: FeedKindTag,
    adjacency: Vec<Vec<usize>>,
    sink: Vec<f64>,
}

#[derive(Clone, Copy)]
enum FeedKindTag {
    Hopping,
    Dephasing,
}

impl KrausPropagator {
    pub fn new(model: &ModelSpec, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
        }
        let gen = Generator::new(model)?;
        let s = gen.s;
        // exact unitary via the eigensystem of the real symmetric H
        let (vals, vecs) = gen.h.eigh(UPLO::Lower)?;
        let phases: Vec<c64> = vals.iter().map(|&e| (-c64::i() * e * dt).exp()).collect();
        let vc = vecs.mapv(|x| c64::new(x, 0.0));
        let mut m = vc.clone();
        for (mut col, ph) in m.columns_mut().into_iter().zip(phases.iter()) {
            col.mapv_inplace(|z| z * ph);
        }
        let u = m.dot(&vc.t());
        let u_dag = u.mapv(|z| z.conj()); // U symmetric ⇒ U† = conj(U)

        let noise_rate = model.p * model.j;
        let z = model.lattice.z as f64;
        let (e0, feed_rate_dt, feed) = match model.noise {
            NoiseKind::ClassicalHopping => {
                let per_edge = noise_rate / z;
                let e0: Vec<f64> = gen
                    .adjacency
                    .iter()
                    .map(|l| 1.0 - 0.5 * per_edge * dt * l.len() as f64)
                    .collect();
                (e0, per_edge * dt, FeedKindTag::Hopping)
            }
            NoiseKind::PureDephasing => {
                let e0 = vec![1.0 - 0.5 * noise_rate * dt; s];
                (e0, noise_rate * dt, FeedKindTag::Dephasing)
            }
        };
        if e0.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "dt = {dt} too large for the first-order Kraus map at p = {}",
                model.p
            )));
        }
        let mut sink = vec![1.0; s];
        for &x in &gen.exits {
            sink[x] = (-0.5 * model.gamma * dt).exp();
        }
        Ok(KrausPropagator {
            s,
            dt,
            u,
            u_dag,
            e0,
            feed_rate_dt,
            feed,
            adjacency: gen.adjacency,
            sink,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advance the state by one step of size `dt`.
    pub fn step(&self, state: &NetworkState) -> NetworkState {
        let s = self.s;
        // unitary
        let mut rho = self.u.dot(&state.rho).dot(&self.u_dag);
        // noise channel: E₀ρE₀† + feed from the pre-channel diagonal
        let old_diag: Vec<f64> = (0..s).map(|a| rho[[a, a]].re).collect();
        for a in 0..s {
            for b in 0..s {
                rho[[a, b]] *= self.e0[a] * self.e0[b];
            }
        }
        match self.feed {
            FeedKindTag::Hopping => {
                for a in 0..s {
                    let gain: f64 = self.adjacency[a].iter().map(|&j| old_diag[j]).sum();
                    rho[[a, a]] += self.feed_rate_dt * gain;
                }
            }
            FeedKindTag::Dephasing => {
                for a in 0..s {
                    rho[[a, a]] += self.feed_rate_dt * old_diag[a];
                }
            }
        }
        // sink (exact)
        let before: f64 = (0..s).map(|a| rho[[a, a]].re).sum();
        for a in 0..s {
            for b in 0..s {
                rho[[a, b]] *= self.sink[a] * self.sink[b];
            }
        }
        let after: f64 = (0..s).map(|a| rho[[a, a]].re).sum();
        NetworkState::new(rho, state.exited + (before - after), state.time + self.dt)
    }
}

/// Single fixed step of the Kraus map. For many steps construct a
/// [`KrausPropagator`] once and call [`KrausPropagator::step`] in a loop.
pub fn kraus_step(model: &ModelSpec, state: &NetworkState, dt: f64) -> Result<NetworkState> {
    Ok(KrausPropagator::new(model, dt)?.step(state))
}

// ---------------------------------------------------------------------------
// quantum-jump trajectories
// ---------------------------------------------------------------------------

/// What happened at one stochastic jump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub kind: JumpKind,
}

/// Jump channels of the unraveling (1-based site labels).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JumpKind {
    /// CH channel |to⟩⟨from|: the excitation hops incoherently.
    Hop { from: usize, to: usize },
    /// PD channel n_site: the wavefunction collapses onto one site.
    Dephase { site: usize },
}

/// Full record of one stochastic trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Time and site of absorption, if the excitation exited before `t_max`.
    pub exit: Option<(f64, usize)>,
    /// All noise jumps, in time order.
    pub jumps: Vec<JumpEvent>,
}

/// Default integrator step for trajectories (units of 1/J).
pub const TRAJECTORY_DT: f64 = 0.05;

/// Sample one quantum-jump trajectory from an excitation localized on
/// `initial_site`, deterministically for a fixed `seed`.
pub fn sample_trajectory(
    model: &ModelSpec,
    initial_site: usize,
    t_max: f64,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let engine = TrajEngine::new(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jumps = Vec::new();
    let exit = engine.run(
        &mut rng,
        initial_site,
        t_max,
        TRAJECTORY_DT,
        &[],
        |_, _, _, _| {},
        Some(&mut jumps),
    )?;
    Ok(TrajectoryRecord { exit, jumps })
}

/// Options for [`ensemble_populations`].
#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    pub n_traj: usize,
    pub seed: u64,
    /// Fixed RK4 step (units of 1/J).
    pub dt: f64,
    /// Accumulate per-site populations (memory ∝ n_times × S) in addition to
    /// the survival probability.
    pub record_sites: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            n_traj: 1000,
            seed: 0,
            dt: TRAJECTORY_DT,
            record_sites: false,
        }
    }
}

/// Ensemble statistics over quantum-jump trajectories.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub n_traj: usize,
    /// Mean surviving population P(t) (trajectory weight 0 after exit).
    pub survival: Vec<f64>,
    /// Standard error of the survival mean.
    pub survival_stderr: Vec<f64>,
    /// Mean per-site populations (n_times × S), if requested.
    pub site_populations: Option<Array2<f64>>,
}

/// Average `n_traj` trajectories on a fixed time grid. Trajectory k uses an
/// independent counter-mode RNG stream of the common seed, so results do not
/// depend on how trajectories are scheduled across threads. The ensemble
/// mean of the normalized site populations (weight 0 once exited) is an
/// unbiased estimator of the master equation's ρ_ii(t).
pub fn ensemble_populations(
    model: &ModelSpec,
    initial: &InitialState,
    times: &[f64],
    opts: &EnsembleOptions,
) -> Result<EnsembleStats> {
    let engine = TrajEngine::new(model)?;
    let s = engine.s;
    if opts.n_traj == 0 {
        return Err(Error::InvalidInput("n_traj must be ≥ 1".into()));
    }
    if times.is_empty() {
        return Err(Error::InvalidInput("time grid must be nonempty".into()));
    }
    let pick_site: Box<dyn Fn(&mut ChaCha8Rng) -> usize + Sync> = match initial {
        InitialState::Site(i) => {
            if *i == 0 || *i > s {
                return Err(Error::InvalidInput(format!("site {i} outside 1..={s}")));
            }
            let i = *i;
            Box::new(move |_| i)
        }
        InitialState::UniformMixture => Box::new(|rng| rng.gen_range(1..=s)),
        InitialState::Explicit(_) => {
            return Err(Error::InvalidInput(
                "trajectory sampling supports Site and UniformMixture initial states".into(),
            ))
        }
    };
    let t_max = *times.last().unwrap();
    let nt = times.len();

    struct Acc {
        surv: Vec<f64>,
        surv_sq: Vec<f64>,
        pops: Vec<f64>,
    }
    let zero = |record_sites: bool| Acc {
        surv: vec![0.0; nt],
        surv_sq: vec![0.0; nt],
        pops: if record_sites { vec![0.0; nt * s] } else { Vec::new() },
    };

    let acc = (0..opts.n_traj)
        .into_par_iter()
        .try_fold(
            || zero(opts.record_sites),
            |mut acc, k| -> Result<Acc> {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(k as u64);
                let site0 = pick_site(&mut rng);
                let mut local_surv = vec![0.0; nt];
                engine.run(
                    &mut rng,
                    site0,
                    t_max,
                    opts.dt,
                    times,
                    |idx, alive, psi_norm2, psi| {
                        if !alive {
                            return;
                        }
                        local_surv[idx] = 1.0;
                        if opts.record_sites {
                            let inv = 1.0 / psi_norm2;
                            for a in 0..s {
                                acc.pops[idx * s + a] +=
                                    (psi.0[a] * psi.0[a] + psi.1[a] * psi.1[a]) * inv;
                            }
                        }
                    },
                    None,
                )?;
                for (i, &v) in local_surv.iter().enumerate() {
                    acc.surv[i] += v;
                    acc.surv_sq[i] += v * v;
                }
                Ok(acc)
            },
        )
        .try_reduce(
            || zero(opts.record_sites),
            |mut a, b| {
                for i in 0..nt {
                    a.surv[i] += b.surv[i];
                    a.surv_sq[i] += b.surv_sq[i];
                }
                if opts.record_sites {
                    for (x, y) in a.pops.iter_mut().zip(b.pops.iter()) {
                        *x += y;
                    }
                }
                Ok(a)
            },
        )?;

    let n = opts.n_traj as f64;
    let survival: Vec<f64> = acc.surv.iter().map(|&v| v / n).collect();
    let survival_stderr: Vec<f64> = acc
        .surv
        .iter()
        .zip(acc.surv_sq.iter())
        .map(|(&sm, &sq)| {
            if opts.n_traj < 2 {
                f64::NAN
            } else {
                let var = (sq - sm * sm / n).max(0.0) / (n - 1.0);
                (var / n).sqrt()
            }
        })
        .collect();
    let site_populations = if opts.record_sites {
        Some(Array2::from_shape_vec((nt, s), acc.pops.iter().map(|&v| v / n).collect()).unwrap())
    } else {
        None
    };
    Ok(EnsembleStats {
        times: times.to_vec(),
        n_traj: opts.n_traj,
        survival,
        survival_stderr,
        site_populations,
    })
}

/// One directed jump channel of the unraveling.
enum Channel {
    Hop { to: usize, from: usize, rate: f64 },
    Dephase { site: usize, rate: f64 },
    Exit { site: usize, rate: f64 },
}

/// Shared, immutable trajectory machinery: sparse H, decay rates, channels.
struct TrajEngine {
    s: usize,
    /// CSR-style rows of the real symmetric H (column, value).
    rows: Vec<Vec<(usize, f64)>>,
    /// Diagonal decay rates w_i (noise + sink), as in the master equation.
    w: Vec<f64>,
    channels: Vec<Channel>,
}

impl TrajEngine {
    fn new(model: &ModelSpec) -> Result<Self> {
        let gen = Generator::new(model)?;
        let s = gen.s;
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); s];
        for a in 0..s {
            for b in 0..s {
                let v = gen.h[[a, b]];
                if v != 0.0 {
                    rows[a].push((b, v));
                }
            }
        }
        let noise_rate = model.p * model.j;
        let mut channels = Vec::new();
        match model.noise {
            NoiseKind::ClassicalHopping => {
                let per_edge = noise_rate / model.lattice.z as f64;
                if per_edge > 0.0 {
                    for (a, list) in gen.adjacency.iter().enumerate() {
                        for &j in list {
                            channels.push(Channel::Hop {
                                to: a,
                                from: j,
                                rate: per_edge,
                            });
                        }
                    }
                }
            }
            NoiseKind::PureDephasing => {
                if noise_rate > 0.0 {
                    for a in 0..s {
                        channels.push(Channel::Dephase {
                            site: a,
                            rate: noise_rate,
                        });
                    }
                }
            }
        }
        if gen.gamma > 0.0 {
            for &x in &gen.exits {
                channels.push(Channel::Exit {
                    site: x,
                    rate: gen.gamma,
                });
            }
        }
        Ok(TrajEngine {
            s,
            rows,
            w: gen.w,
            channels,
        })
    }

    /// dψ/dt = −iHψ − ½Wψ, split into real and imaginary parts:
    /// da = Hb − ½Wa, db = −Ha − ½Wb.
    fn rhs(&self, a: &[f64], b: &[f64], da: &mut [f64], db: &mut [f64]) {
        for i in 0..self.s {
            let mut ha = 0.0;
            let mut hb = 0.0;
            for &(j, v) in &self.rows[i] {
                ha += v * a[j];
                hb += v * b[j];
            }
            let half_w = 0.5 * self.w[i];
            da[i] = hb - half_w * a[i];
            db[i] = -ha - half_w * b[i];
        }
    }

    /// One classical RK4 step of size h from (a, b) into (na, nb).
    #[allow(clippy::too_many_arguments)]
    fn rk4_step(
        &self,
        h: f64,
        a: &[f64],
        b: &[f64],
        na: &mut [f64],
        nb: &mut [f64],
        scr: &mut Scratch,
    ) {
        let s = self.s;
        self.rhs(a, b, &mut scr.k1a, &mut scr.k1b);
        for i in 0..s {
            scr.ta[i] = a[i] + 0.5 * h * scr.k1a[i];
            scr.tb[i] = b[i] + 0.5 * h * scr.k1b[i];
        }
        self.rhs(&scr.ta, &scr.tb, &mut scr.k2a, &mut scr.k2b);
        for i in 0..s {
            scr.ta[i] = a[i] + 0.5 * h * scr.k2a[i];
            scr.tb[i] = b[i] + 0.5 * h * scr.k2b[i];
        }
        self.rhs(&scr.ta, &scr.tb, &mut scr.k3a, &mut scr.k3b);
        for i in 0..s {
            scr.ta[i] = a[i] + h * scr.k3a[i];
            scr.tb[i] = b[i] + h * scr.k3b[i];
        }
        self.rhs(&scr.ta, &scr.tb, &mut scr.k4a, &mut scr.k4b);
        let c = h / 6.0;
        for i in 0..s {
            na[i] = a[i] + c * (scr.k1a[i] + 2.0 * (scr.k2a[i] + scr.k3a[i]) + scr.k4a[i]);
            nb[i] = b[i] + c * (scr.k1b[i] + 2.0 * (scr.k2b[i] + scr.k3b[i]) + scr.k4b[i]);
        }
    }

    /// Instantaneous jump weights; returns the total rate.
    fn weights(&self, a: &[f64], b: &[f64], out: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for (c, ch) in self.channels.iter().enumerate() {
            let w = match *ch {
                Channel::Hop { from, rate, .. } => rate * (a[from] * a[from] + b[from] * b[from]),
                Channel::Dephase { site, rate } => rate * (a[site] * a[site] + b[site] * b[site]),
                Channel::Exit { site, rate } => rate * (a[site] * a[site] + b[site] * b[site]),
            };
            out[c] = w;
            total += w;
        }
        total
    }

    /// Run one trajectory. `on_sample(idx, alive, ‖ψ‖², (re, im))` fires at
    /// each grid time; `jumps` (if given) records the noise jumps. Returns
    /// the exit event, if any. `times` must be strictly ascending and its
    /// last entry must not exceed `t_max`.
    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        rng: &mut ChaCha8Rng,
        initial_site: usize,
        t_max: f64,
        dt: f64,
        times: &[f64],
        mut on_sample: impl FnMut(usize, bool, f64, (&[f64], &[f64])),
        mut jumps: Option<&mut Vec<JumpEvent>>,
    ) -> Result<Option<(f64, usize)>> {
        let s = self.s;
        if initial_site == 0 || initial_site > s {
            return Err(Error::InvalidInput(format!(
                "site {initial_site} outside 1..={s}"
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
        }
        if !(t_max >= 0.0) {
            return Err(Error::InvalidInput(format!("t_max must be ≥ 0, got {t_max}")));
        }
        for w in times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidInput("time grid must be strictly ascending".into()));
            }
        }
        if let Some(&t0) = times.first() {
            if t0 < 0.0 {
                return Err(Error::InvalidInput("time grid must start at t ≥ 0".into()));
            }
        }
        if let Some(&tl) = times.last() {
            if tl > t_max {
                return Err(Error::InvalidInput("time grid exceeds t_max".into()));
            }
        }

        let mut a = vec![0.0; s];
        let mut b = vec![0.0; s];
        a[initial_site - 1] = 1.0;
        let mut na = vec![0.0; s];
        let mut nb = vec![0.0; s];
        let mut ca = vec![0.0; s];
        let mut cb = vec![0.0; s];
        let mut scr = Scratch::new(s);
        let mut wbuf = vec![0.0; self.channels.len()];

        let mut t = 0.0;
        let mut grid = 0usize;
        let mut threshold = rng.gen::<f64>();
        let mut exit: Option<(f64, usize)> = None;

        // deliver any samples at t = 0
        while grid < times.len() && times[grid] <= 0.0 {
            on_sample(grid, true, 1.0, (&a, &b));
            grid += 1;
        }

        'outer: while t < t_max {
            let mut target = t + dt;
            if grid < times.len() {
                target = target.min(times[grid]);
            }
            target = target.min(t_max);
            let h = target - t;
            if h <= 0.0 {
                // only possible through float pathology; bail out safely
                return Err(Error::Numerical(format!("trajectory step underflow at t = {t}")));
            }

            self.rk4_step(h, &a, &b, &mut na, &mut nb, &mut scr);
            let n2: f64 = norm2(&na, &nb);
            if n2 < threshold {
                // a jump occurred inside (t, t + h]: bisect on the step size
                // (‖ψ(τ)‖² is monotonically decreasing)
                let mut lo = 0.0;
                let mut hi = h;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    self.rk4_step(mid, &a, &b, &mut ca, &mut cb, &mut scr);
                    if norm2(&ca, &cb) < threshold {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                    if hi - lo < 1e-13 * dt {
                        break;
                    }
                }
                let tau = 0.5 * (lo + hi);
                self.rk4_step(tau, &a, &b, &mut ca, &mut cb, &mut scr);
                let t_jump = t + tau;

                let total = self.weights(&ca, &cb, &mut wbuf);
                if total <= 0.0 {
                    return Err(Error::Numerical(format!(
                        "vanishing jump rate at t = {t_jump}"
                    )));
                }
                let mut u = rng.gen::<f64>() * total;
                let mut chosen = self.channels.len() - 1;
                for (c, &w) in wbuf.iter().enumerate() {
                    if u < w {
                        chosen = c;
                        break;
                    }
                    u -= w;
                }
                match self.channels[chosen] {
                    Channel::Hop { to, from, .. } => {
                        let amp = (ca[from] * ca[from] + cb[from] * cb[from]).sqrt();
                        let (pr, pi) = (ca[from] / amp, cb[from] / amp);
                        a.iter_mut().for_each(|v| *v = 0.0);
                        b.iter_mut().for_each(|v| *v = 0.0);
                        a[to] = pr;
                        b[to] = pi;
                        if let Some(j) = jumps.as_deref_mut() {
                            j.push(JumpEvent {
                                time: t_jump,
                                kind: JumpKind::Hop {
                                    from: from + 1,
                                    to: to + 1,
                                },
                            });
                        }
                    }
                    Channel::Dephase { site, .. } => {
                        let amp = (ca[site] * ca[site] + cb[site] * cb[site]).sqrt();
                        let (pr, pi) = (ca[site] / amp, cb[site] / amp);
                        a.iter_mut().for_each(|v| *v = 0.0);
                        b.iter_mut().for_each(|v| *v = 0.0);
                        a[site] = pr;
                        b[site] = pi;
                        if let Some(j) = jumps.as_deref_mut() {
                            j.push(JumpEvent {
                                time: t_jump,
                                kind: JumpKind::Dephase { site: site + 1 },
                            });
                        }
                    }
                    Channel::Exit { site, .. } => {
                        exit = Some((t_jump, site + 1));
                        // dead trajectory: all remaining samples are 0
                        while grid < times.len() {
                            on_sample(grid, false, 0.0, (&a, &b));
                            grid += 1;
                        }
                        break 'outer;
                    }
                }
                threshold = rng.gen::<f64>();
                t = t_jump;
                continue;
            }

            std::mem::swap(&mut a, &mut na);
            std::mem::swap(&mut b, &mut nb);
            t = target;
            while grid < times.len() && times[grid] <= t {
                on_sample(grid, true, n2, (&a, &b));
                grid += 1;
            }
        }
        // if t_max was reached with grid points exactly at t_max pending
        while grid < times.len() {
            on_sample(grid, exit.is_none(), norm2(&a, &b), (&a, &b));
            grid += 1;
        }
        Ok(exit)
    }
}

fn norm2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * x + y * y).sum()
}

struct Scratch {
    k1a: Vec<f64>,
    k1b: Vec<f64>,
    k2a: Vec<f64>,
    k2b: Vec<f64>,
    k3a: Vec<f64>,
    k3b: Vec<f64>,
    k4a: Vec<f64>,
    k4b: Vec<f64>,
    ta: Vec<f64>,
    tb: Vec<f64>,
}

impl Scratch {
    fn new(s: usize) -> Self {
        Scratch {
            k1a: vec![0.0; s],
            k1b: vec![0.0; s],
            k2a: vec![0.0; s],
            k2b: vec![0.0; s],
            k3a: vec![0.0; s],
            k3b: vec![0.0; s],
            k4a: vec![0.0; s],
            k4b: vec![0.0; s],
            ta: vec![0.0; s],
            tb: vec![0.0; s],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{ExitSpec, LatticeKind};

    fn chain_model(n: usize, p: f64, noise: NoiseKind, gamma: f64) -> ModelSpec {
        let l = Lattice::build(LatticeKind::Chain, &[n], ExitSpec::End).unwrap();
        ModelSpec::new(l, 1.0, p, noise, gamma)
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        let mut m = chain_model(4, 0.5, NoiseKind::ClassicalHopping, 1.0);
        m.p = 1.5;
        assert!(m.validate().is_err());
        m.p = 0.5;
        m.j = 0.0;
        assert!(m.validate().is_err());
        m.j = 1.0;
        m.gamma = -1.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn density_matrix_constructors() {
        let rho = InitialState::Site(2).density_matrix(3).unwrap();
        assert_eq!(rho[[1, 1]], c64::new(1.0, 0.0));
        let rho = InitialState::UniformMixture.density_matrix(4).unwrap();
        assert!((rho[[0, 0]].re - 0.25).abs() < 1e-15);
        assert!(InitialState::Site(5).density_matrix(3).is_err());

        let mut bad = Array2::<c64>::zeros((2, 2));
        bad[[0, 1]] = c64::new(0.3, 0.0);
        bad[[0, 0]] = c64::new(1.0, 0.0);
        assert!(InitialState::Explicit(bad).density_matrix(2).is_err());
    }

    #[test]
    fn closed_coherent_dynamics_match_two_site_rabi() {
        // p = 0, Γ = 0, two sites: P₁(t) = cos²(Jt)
        let m = chain_model(2, 0.0, NoiseKind::ClassicalHopping, 0.0);
        let times: Vec<f64> = (1..=6).map(|k| 0.3 * k as f64).collect();
        let states = propagate(&m, &InitialState::Site(1), &times, &StepControl::default()).unwrap();
        for st in &states {
            let expect = st.time.cos().powi(2);
            assert!(
                (st.rho[[0, 0]].re - expect).abs() < 1e-7,
                "t = {}: {} vs {}",
                st.time,
                st.rho[[0, 0]].re,
                expect
            );
            assert!((st.population() + st.exited - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn ch_at_p_one_reduces_to_classical_random_walk() {
        // p = 1 kills the coherent part; the diagonal obeys the classical
        // master equation ṗ = (J/z)(A − D)p, solved here independently with
        // the matrix exponential
        let l = Lattice::build(LatticeKind::Ring, &[4], ExitSpec::End).unwrap();
        let m = ModelSpec::new(l.clone(), 1.0, 1.0, NoiseKind::ClassicalHopping, 0.0);
        let s = l.n_sites;
        let mut gen_cl = Array2::<c64>::zeros((s, s));
        for &(i, j) in &l.edges {
            gen_cl[[i - 1, j - 1]] += c64::new(0.5, 0.0);
            gen_cl[[j - 1, i - 1]] += c64::new(0.5, 0.0);
            gen_cl[[i - 1, i - 1]] -= c64::new(0.5, 0.0);
            gen_cl[[j - 1, j - 1]] -= c64::new(0.5, 0.0);
        }
        let t = 1.7;
        let prop = crate::linalg::expm(&(gen_cl * c64::new(t, 0.0)).view()).unwrap();
        let states = propagate(&m, &InitialState::Site(1), &[t], &StepControl::default()).unwrap();
        for i in 0..s {
            let expect = prop[[i, 0]].re;
            assert!(
                (states[0].rho[[i, i]].re - expect).abs() < 1e-8,
                "site {}: {} vs {}",
                i + 1,
                states[0].rho[[i, i]].re,
                expect
            );
        }
    }

    #[test]
    fn pd_off_diagonal_decays_at_total_rate_pj() {
        // p = 1 (H = 0): ρ₀₁(t) = ρ₀₁(0) e^{−pJt}, diagonal frozen
        let m = chain_model(2, 1.0, NoiseKind::PureDephasing, 0.0);
        let mut rho0 = Array2::<c64>::zeros((2, 2));
        rho0[[0, 0]] = c64::new(0.5, 0.0);
        rho0[[1, 1]] = c64::new(0.5, 0.0);
        rho0[[0, 1]] = c64::new(0.5, 0.0);
        rho0[[1, 0]] = c64::new(0.5, 0.0);
        let t = 0.7;
        let states = propagate(
            &m,
            &InitialState::Explicit(rho0),
            &[t],
            &StepControl::default(),
        )
        .unwrap();
        assert!((states[0].rho[[0, 1]].re - 0.5 * (-t).exp()).abs() < 1e-8);
        assert!((states[0].rho[[0, 0]].re - 0.5).abs() < 1e-10);
        assert!((states[0].rho[[1, 1]].re - 0.5).abs() < 1e-10);
    }

    #[test]
    fn trace_plus_exited_is_conserved_with_sink() {
        let m = chain_model(5, 0.2, NoiseKind::ClassicalHopping, 2.0);
        let times = [1.0, 5.0, 20.0];
        let states = propagate(&m, &InitialState::Site(1), &times, &StepControl::default()).unwrap();
        for st in &states {
            assert!(
                (st.population() + st.exited - 1.0).abs() < 1e-7,
                "t = {}",
                st.time
            );
        }
        // population must eventually drain (chain end exits never lock)
        assert!(states[2].population() < 0.05);
    }

    #[test]
    fn liouvillian_apply_matches_hand_formula_on_two_sites() {
        // CH on a 2-chain: explicit components of 𝓛ρ
        let p = 0.3;
        let gamma = 1.5;
        let m = chain_model(2, p, NoiseKind::ClassicalHopping, gamma);
        let mut rho = Array2::<c64>::zeros((2, 2));
        rho[[0, 0]] = c64::new(0.6, 0.0);
        rho[[1, 1]] = c64::new(0.4, 0.0);
        rho[[0, 1]] = c64::new(0.1, 0.2);
        rho[[1, 0]] = c64::new(0.1, -0.2);
        let l = liouvillian_apply(&m, &rho).unwrap();

        let jeff = 1.0 - p; // (1−p)J
        let r = p / 2.0; // pJ/z, z = 2, degree 1 each ⇒ w_i = r
        // d00 = −i(−J_eff)(ρ10 − ρ01) − r ρ00 + r ρ11
        let expect00 = -c64::i() * (-jeff) * (rho[[1, 0]] - rho[[0, 1]]) - r * rho[[0, 0]]
            + r * rho[[1, 1]];
        // d01 = −i(−J_eff)(ρ11 − ρ00) − ½(r + r + Γ)ρ01
        let expect01 = -c64::i() * (-jeff) * (rho[[1, 1]] - rho[[0, 0]])
            - 0.5 * (2.0 * r + gamma) * rho[[0, 1]];
        // d11 = −i(−J_eff)(ρ01 − ρ10) − (r + Γ)ρ11 + r ρ00
        let expect11 = -c64::i() * (-jeff) * (rho[[0, 1]] - rho[[1, 0]])
            - (r + gamma) * rho[[1, 1]]
            + r * rho[[0, 0]];
        assert!((l[[0, 0]] - expect00).norm() < 1e-14);
        assert!((l[[0, 1]] - expect01).norm() < 1e-14);
        assert!((l[[1, 1]] - expect11).norm() < 1e-14);
        assert!((l[[1, 0]] - expect01.conj()).norm() < 1e-14);
    }

    #[test]
    fn kraus_map_converges_to_master_equation_at_first_order() {
        let m = chain_model(4, 0.25, NoiseKind::ClassicalHopping, 1.0);
        let t = 2.0;
        let exact = &propagate(&m, &InitialState::Site(1), &[t], &StepControl::default()).unwrap()[0];
        let mut errs = Vec::new();
        for &n_steps in &[100usize, 200, 400] {
            let dt = t / n_steps as f64;
            let prop = KrausPropagator::new(&m, dt).unwrap();
            let mut st = NetworkState::new(
                InitialState::Site(1).density_matrix(4).unwrap(),
                0.0,
                0.0,
            );
            for _ in 0..n_steps {
                st = prop.step(&st);
            }
            errs.push(crate::linalg::diff_fro(&st.rho.view(), &exact.rho.view()));
            assert!((st.population() + st.exited - 1.0).abs() < 5.0 * dt);
        }
        // first-order map: halving dt halves the error
        assert!(errs[0] / errs[1] > 1.6, "errors: {errs:?}");
        assert!(errs[1] / errs[2] > 1.6, "errors: {errs:?}");
    }

    #[test]
    fn kraus_rejects_overlong_steps() {
        let m = chain_model(4, 1.0, NoiseKind::ClassicalHopping, 0.0);
        assert!(KrausPropagator::new(&m, 10.0).is_err());
    }

    #[test]
    fn trajectories_are_deterministic_per_seed() {
        let m = chain_model(5, 0.4, NoiseKind::ClassicalHopping, 2.0);
        let r1 = sample_trajectory(&m, 1, 30.0, 7).unwrap();
        let r2 = sample_trajectory(&m, 1, 30.0, 7).unwrap();
        assert_eq!(r1.exit, r2.exit);
        assert_eq!(r1.jumps, r2.jumps);
        let r3 = sample_trajectory(&m, 1, 30.0, 8).unwrap();
        assert!(r1.exit != r3.exit || r1.jumps != r3.jumps);
    }

    #[test]
    fn closed_trajectory_never_jumps() {
        let m = chain_model(4, 0.0, NoiseKind::ClassicalHopping, 0.0);
        let r = sample_trajectory(&m, 2, 10.0, 3).unwrap();
        assert!(r.exit.is_none());
        assert!(r.jumps.is_empty());
    }

    #[test]
    fn ensemble_mean_tracks_master_equation() {
        let m = chain_model(3, 0.3, NoiseKind::ClassicalHopping, 2.0);
        let times = [1.0, 2.5, 4.0];
        let exact = propagate(&m, &InitialState::Site(1), &times, &StepControl::default()).unwrap();
        let stats = ensemble_populations(
            &m,
            &InitialState::Site(1),
            &times,
            &EnsembleOptions {
                n_traj: 2000,
                seed: 11,
                dt: 0.02,
                record_sites: true,
            },
        )
        .unwrap();
        let pops = stats.site_populations.as_ref().unwrap();
        for (k, st) in exact.iter().enumerate() {
            let tol = 4.0 * stats.survival_stderr[k] + 0.01;
            assert!(
                (stats.survival[k] - st.population()).abs() < tol,
                "t = {}: {} vs {} (tol {})",
                st.time,
                stats.survival[k],
                st.population(),
                tol
            );
            for i in 0..3 {
                assert!(
                    (pops[[k, i]] - st.rho[[i, i]].re).abs() < 0.025,
                    "site {} at t = {}",
                    i + 1,
                    st.time
                );
            }
        }
    }

    #[test]
    fn pd_ensemble_tracks_master_equation() {
        let m = chain_model(3, 0.5, NoiseKind::PureDephasing, 1.0);
        let times = [2.0];
        let exact = propagate(&m, &InitialState::UniformMixture, &times, &StepControl::default())
            .unwrap();
        let stats = ensemble_populations(
            &m,
            &InitialState::UniformMixture,
            &times,
            &EnsembleOptions {
                n_traj: 2000,
                seed: 5,
                dt: 0.02,
                record_sites: false,
            },
        )
        .unwrap();
        let tol = 4.0 * stats.survival_stderr[0] + 0.01;
        assert!((stats.survival[0] - exact[0].population()).abs() < tol);
    }
}
