//! Hamiltonian assembly (uniform and disordered), eigenstructure, and the
//! detection of locked states.
//!
//! A locked state is an eigenvector of H with zero amplitude on every exit
//! site; in the absence of classical noise (p = 0) such states never decay
//! through the sink, so a finite fraction of the initial population remains
//! on the network as t → ∞. Degenerate eigenvalue clusters are handled by a
//! singular-value analysis of the cluster's exit-amplitude block, which is
//! robust to the arbitrary rotation LAPACK applies within a degenerate
//! subspace.

use ndarray::{Array1, Array2};
use ndarray_linalg::{c64, Eig, Eigh, Inverse, SVD, UPLO};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::InitialState;
use crate::error::{Error, Result};
use crate::lattice::Lattice;

/// Default relative eigenvalue-clustering tolerance (scaled by ‖H‖ inside
/// [`locked_states`]): regular lattices have exactly degenerate pairs, and
/// 10⁻⁸·‖H‖ cleanly separates them from accidental near-degeneracies at
/// double precision.
pub const DEFAULT_EIGTOL: f64 = 1e-8;
/// Default threshold on exit-site amplitudes (absolute).
pub const DEFAULT_AMPTOL: f64 = 1e-7;

/// A single-excitation Hamiltonian over a lattice:
///
/// H = Σ_i ε_i |i⟩⟨i| − Σ_⟨i,j⟩ J_ij (|i⟩⟨j| + |j⟩⟨i|)
///
/// with ε_i = 0 and J_ij = `j_eff` in the uniform case (`j_eff` = (1−p)J for
/// the regular model of Eq. 2-type dynamics). All couplings must be nonzero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    pub lattice: Lattice,
    /// Uniform coupling value, kept for reference (the matrix is built from
    /// `edge_couplings`).
    pub j_eff: f64,
    /// On-site energies ε_i, indexed by `site − 1`.
    pub site_energies: Vec<f64>,
    /// Per-edge couplings J_ij, parallel to `lattice.edges`.
    pub edge_couplings: Vec<f64>,
}

impl HamiltonianSpec {
    /// Uniform spec: every coupling equal to `j_eff`, all site energies zero.
    pub fn regular(lattice: &Lattice, j_eff: f64) -> Result<Self> {
        if j_eff == 0.0 {
            return Err(Error::InvalidInput(
                "j_eff must be nonzero (p = 1 has no coherent part; build H elsewhere)".into(),
            ));
        }
        Ok(HamiltonianSpec {
            lattice: lattice.clone(),
            j_eff,
            site_energies: vec![0.0; lattice.n_sites],
            edge_couplings: vec![j_eff; lattice.edges.len()],
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.site_energies.len() != self.lattice.n_sites {
            return Err(Error::DimensionMismatch {
                expected: self.lattice.n_sites,
                got: self.site_energies.len(),
            });
        }
        if self.edge_couplings.len() != self.lattice.edges.len() {
            return Err(Error::DimensionMismatch {
                expected: self.lattice.edges.len(),
                got: self.edge_couplings.len(),
            });
        }
        if self.edge_couplings.iter().any(|&j| j == 0.0) {
            return Err(Error::InvalidInput("every edge coupling must be nonzero".into()));
        }
        Ok(())
    }

    /// Dense real-symmetric matrix, rows/columns indexed by `site − 1`.
    pub fn dense(&self) -> Array2<f64> {
        let s = self.lattice.n_sites;
        let mut h = Array2::<f64>::zeros((s, s));
        for (k, &(i, j)) in self.lattice.edges.iter().enumerate() {
            h[[i - 1, j - 1]] = -self.edge_couplings[k];
            h[[j - 1, i - 1]] = -self.edge_couplings[k];
        }
        for (i, &e) in self.site_energies.iter().enumerate() {
            h[[i, i]] = e;
        }
        h
    }
}

/// Eigenvalues (ascending) and orthonormal eigenvectors (columns) of the
/// Hamiltonian.
pub fn eigensystem(h: &HamiltonianSpec) -> Result<(Array1<f64>, Array2<f64>)> {
    h.validate()?;
    let dense = h.dense();
    let (vals, vecs) = dense.eigh(UPLO::Lower)?;
    Ok((vals, vecs))
}

/// Per-cluster summary produced by [`locked_states`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterInfo {
    /// Mean eigenvalue of the degenerate cluster.
    pub eigenvalue: f64,
    /// Number of eigenvectors in the cluster.
    pub multiplicity: usize,
    /// Dimension of the cluster's locked (zero-exit-amplitude) subspace.
    pub locked: usize,
}

/// Locked-subspace analysis of one Hamiltonian + exit-set combination.
#[derive(Debug, Clone)]
pub struct LockingReport {
    /// Total dimension of the locked subspace.
    pub locked_dimension: usize,
    /// Orthonormal locked vectors, one per column (S × locked_dimension).
    pub locked_basis: Array2<f64>,
    /// Eigenvalue clusters in ascending order.
    pub clusters: Vec<ClusterInfo>,
    /// Number of lattice sites, kept for dimension checks downstream.
    pub n_sites: usize,
}

/// Find the locked subspace: within each degenerate eigenvalue cluster
/// (relative gap tolerance `eigtol`, scaled by ‖H‖), the null space of the
/// exit-site amplitude block (singular values ≤ `amptol`).
///
/// `exits` are 1-based site labels; pass `&h.lattice.exits` for the lattice's
/// own exit set.
pub fn locked_states(
    h: &HamiltonianSpec,
    exits: &[usize],
    eigtol: f64,
    amptol: f64,
) -> Result<LockingReport> {
    if exits.is_empty() {
        return Err(Error::InvalidInput("exit set must be nonempty".into()));
    }
    let s = h.lattice.n_sites;
    if let Some(&bad) = exits.iter().find(|&&x| x == 0 || x > s) {
        return Err(Error::InvalidInput(format!("exit site {bad} outside 1..={s}")));
    }
    let (vals, vecs) = eigensystem(h)?;
    let scale = vals.iter().fold(f64::EPSILON, |m, v| m.max(v.abs()));
    let gap_tol = eigtol * scale;

    let mut clusters = Vec::new();
    let mut basis_cols: Vec<Array1<f64>> = Vec::new();

    let mut start = 0;
    while start < s {
        let mut end = start + 1;
        while end < s && vals[end] - vals[end - 1] <= gap_tol {
            end += 1;
        }
        let mult = end - start;
        // exit-amplitude block: rows = exits, columns = cluster eigenvectors
        let mut block = Array2::<f64>::zeros((exits.len(), mult));
        for (r, &x) in exits.iter().enumerate() {
            for c in 0..mult {
                block[[r, c]] = vecs[[x - 1, start + c]];
            }
        }
        let locked_here = if mult == 1 {
            // cheap path: a single vector is locked iff all exit amplitudes
            // vanish
            let nrm = block.column(0).iter().map(|a| a * a).sum::<f64>().sqrt();
            if nrm <= amptol {
                basis_cols.push(vecs.column(start).to_owned());
                1
            } else {
                0
            }
        } else {
            let (_, sv, vt) = block.svd(false, true)?;
            let vt = vt.expect("requested V^T");
            let mut count = 0;
            for k in 0..mult {
                let sigma = if k < sv.len() { sv[k] } else { 0.0 };
                if sigma <= amptol {
                    // locked direction: combination Σ_c vt[k, c] · |vec_c⟩
                    let mut v = Array1::<f64>::zeros(s);
                    for c in 0..mult {
                        let w = vt[[k, c]];
                        if w != 0.0 {
                            v.scaled_add(w, &vecs.column(start + c));
                        }
                    }
                    basis_cols.push(v);
                    count += 1;
                }
            }
            count
        };
        let mean = vals.slice(ndarray::s![start..end]).mean().unwrap_or(0.0);
        clusters.push(ClusterInfo {
            eigenvalue: mean,
            multiplicity: mult,
            locked: locked_here,
        });
        start = end;
    }

    let d = basis_cols.len();
    let mut locked_basis = Array2::<f64>::zeros((s, d));
    for (c, col) in basis_cols.iter().enumerate() {
        locked_basis.column_mut(c).assign(col);
    }
    Ok(LockingReport {
        locked_dimension: d,
        locked_basis,
        clusters,
        n_sites: s,
    })
}

/// Squared projection of the initial state onto the locked subspace:
/// tr(Π ρ₀ Π) = Σ_v ⟨v|ρ₀|v⟩. Equals lim P(t→∞) at p = 0, Γ > 0.
pub fn locking_probability(report: &LockingReport, initial: &InitialState) -> Result<f64> {
    let s = report.n_sites;
    if report.locked_dimension == 0 {
        // still validate the input's dimension before answering
        initial.density_matrix(s)?;
        return Ok(0.0);
    }
    match initial {
        InitialState::Site(i) => {
            if *i == 0 || *i > s {
                return Err(Error::InvalidInput(format!("site {i} outside 1..={s}")));
            }
            Ok(report
                .locked_basis
                .row(*i - 1)
                .iter()
                .map(|a| a * a)
                .sum())
        }
        // mean over sites of Σ_v v_i² = (1/S) Σ_v ‖v‖² = d/S
        InitialState::UniformMixture => Ok(report.locked_dimension as f64 / s as f64),
        InitialState::Explicit(rho) => {
            if rho.nrows() != s {
                return Err(Error::DimensionMismatch {
                    expected: s,
                    got: rho.nrows(),
                });
            }
            let mut total = 0.0;
            for v in report.locked_basis.columns() {
                let mut acc = c64::new(0.0, 0.0);
                for a in 0..s {
                    if v[a] == 0.0 {
                        continue;
                    }
                    for b in 0..s {
                        acc += rho[[a, b]] * v[a] * v[b];
                    }
                }
                total += acc.re;
            }
            Ok(total)
        }
    }
}

/// Disorder: add independent uniform perturbations in [−magnitude, magnitude]
/// (energy units of J) to every site energy and every edge coupling.
/// Perturbations that would zero a coupling are redrawn, preserving the
/// J_ij ≠ 0 assumption. Deterministic for a fixed seed.
pub fn perturb(h: &HamiltonianSpec, magnitude: f64, seed: u64) -> Result<HamiltonianSpec> {
    if magnitude <= 0.0 {
        return Err(Error::InvalidInput("perturbation magnitude must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = h.clone();
    for e in &mut out.site_energies {
        *e += rng.gen_range(-magnitude..=magnitude);
    }
    for j in &mut out.edge_couplings {
        loop {
            let cand = *j + rng.gen_range(-magnitude..=magnitude);
            if cand.abs() > 1e-12 {
                *j = cand;
                break;
            }
        }
    }
    Ok(out)
}

/// Asymptotic surviving population lim_{t→∞} P(t) for purely coherent
/// dynamics with a sink: evolution under K = H − (i/2)Γ Σ_x |x⟩⟨x| with exits
/// taken from the spec's lattice.
///
/// Computed from the eigendecomposition of K: writing ρ(t) =
/// V e^{−iΛt} σ₀ e^{iΛ̄t} V† with σ₀ = V⁻¹ρ₀V⁻†, only pairs of
/// non-decaying eigenvalues (Im λ = 0) with equal real parts survive the
/// limit of tr ρ(t). This is the t → ∞ value of the same master equation the
/// integrator solves at p = 0, evaluated exactly — it covers disorder cases
/// whose slowest decay rates (∝ δ²/Γ) put the limit far beyond any practical
/// integration horizon.
pub fn asymptotic_population(
    h: &HamiltonianSpec,
    gamma: f64,
    initial: &InitialState,
) -> Result<f64> {
    h.validate()?;
    if gamma < 0.0 {
        return Err(Error::InvalidInput("gamma must be ≥ 0".into()));
    }
    let s = h.lattice.n_sites;
    let rho0 = initial.density_matrix(s)?;

    let mut k = h.dense().mapv(|x| c64::new(x, 0.0));
    for &x in &h.lattice.exits {
        k[[x - 1, x - 1]] += c64::new(0.0, -0.5 * gamma);
    }
    let (lam, v) = k.eig()?;
    let g = v
        .inv()
        .map_err(|e| Error::Numerical(format!("eigenbasis of K is singular: {e}")))?;
    let cond = crate::linalg::norm_1(&v.view()) * crate::linalg::norm_1(&g.view());
    if !cond.is_finite() || cond > 1e13 {
        return Err(Error::Numerical(format!(
            "eigenbasis of K too ill-conditioned (cond ≈ {cond:.2e})"
        )));
    }

    let scale = lam.iter().fold(f64::EPSILON, |m, z| m.max(z.norm()));
    let live: Vec<usize> = (0..s)
        .filter(|&m| lam[m].im.abs() <= 1e-12 * scale)
        .collect();
    if live.is_empty() {
        return Ok(0.0);
    }

    // σ₀ = G ρ₀ G†, overlap M = V† V
    let sigma0 = g.dot(&rho0).dot(&g.t().mapv(|z| z.conj()));
    let overlap = v.t().mapv(|z| z.conj()).dot(&v);

    let mut total = c64::new(0.0, 0.0);
    for &m in &live {
        for &n in &live {
            if (lam[m].re - lam[n].re).abs() <= 1e-10 * scale {
                total += sigma0[[m, n]] * overlap[[n, m]];
            }
        }
    }
    Ok(total.re)
}
