//! Exact dwelling times from the resolvent of the generator.
//!
//! Writing the master equation as dρ/dt = 𝓚ρ + F(diag ρ), with 𝓚ρ =
//! −i(Kρ − ρK†), K = H − (i/2)W, and F the diagonal feed of the noise
//! channel, the time integral R = ∫₀^∞ ρ dt obeys the stationary relation
//! −ρ₀ = 𝓚R + F(diag R). In the eigenbasis K = VΛV⁻¹ the map 𝓚 acts
//! elementwise, so −𝓚⁻¹ is a pair of dense similarity transforms and an
//! elementwise weight w_mn = −1/(−i(λ_m − λ̄_n)). Closing the relation over
//! the S diagonal entries δ = diag R gives a small linear system
//!
//! (I − Θ)δ = diag(−𝓚⁻¹ρ₀), Θ_ij = [diag(−𝓚⁻¹ diag(F e_j))]_i
//!
//! and the dwelling time is t̄ = Σ_i δ_i. No time stepping and no
//! truncation error are involved; the only approximation is floating-point
//! arithmetic.

use ndarray::{Array1, Array2};
use ndarray_linalg::{c64, Eig, Inverse, Solve};

use crate::dynamics::{FeedKind, Generator, InitialState, ModelSpec};
use crate::error::{Error, Result};

/// Hard size cap: building Θ costs S dense S × S products, which stays
/// interactive up to a few hundred sites and degrades steeply beyond.
pub(crate) const MAX_SITES: usize = 600;

/// Relative floor (scaled by max |λ|) below which an eigenvalue's imaginary
/// part counts as non-decaying.
const LIVE_TOL: f64 = 1e-12;

pub(crate) fn dwelling_time_resolvent(model: &ModelSpec, initial: &InitialState) -> Result<f64> {
    let gen = Generator::new(model)?;
    let s = gen.s;
    if s > MAX_SITES {
        return Err(Error::Numerical(format!(
            "resolvent dwelling time is limited to S ≤ {MAX_SITES} sites (got {s}); \
             use the integrate method"
        )));
    }
    let rho0 = initial.density_matrix(s)?;

    // K = H − (i/2)W; W already contains both the noise decay and the sink
    let mut k = gen.h.mapv(|x| c64::new(x, 0.0));
    for i in 0..s {
        k[[i, i]] -= c64::new(0.0, 0.5 * gen.w[i]);
    }
    let (lam, v) = k.eig()?;
    let g = v
        .inv()
        .map_err(|e| Error::Numerical(format!("eigenbasis of K is singular: {e}")))?;
    let cond = crate::linalg::norm_1(&v.view()) * crate::linalg::norm_1(&g.view());
    if !cond.is_finite() || cond > 1e12 {
        return Err(Error::Numerical(format!(
            "eigenbasis of K too ill-conditioned for the resolvent method (cond ≈ {cond:.2e}); \
             use the integrate method"
        )));
    }
    let g_h = g.t().mapv(|z| z.conj());
    let scale = lam.iter().fold(f64::EPSILON, |m, z| m.max(z.norm()));

    // Non-decaying modes (Im λ ≈ 0) make ∫P dt diverge whenever the initial
    // state overlaps them; measure that overlap exactly before proceeding.
    let live: Vec<usize> = (0..s)
        .filter(|&m| lam[m].im >= -LIVE_TOL * scale)
        .collect();
    if !live.is_empty() {
        let sigma0 = g.dot(&rho0).dot(&g_h);
        let overlap = v.t().mapv(|z| z.conj()).dot(&v);
        let mut p_inf = c64::new(0.0, 0.0);
        for &m in &live {
            for &n in &live {
                if (lam[m].re - lam[n].re).abs() <= 1e-10 * scale {
                    p_inf += sigma0[[m, n]] * overlap[[n, m]];
                }
            }
        }
        if p_inf.re > 1e-10 {
            return Err(Error::DivergentDwellingTime(format!(
                "{} non-decaying mode(s) retain population {:.6e} as t → ∞ \
                 (locked states); the dwelling time is infinite",
                live.len(),
                p_inf.re
            )));
        }
    }

    // elementwise resolvent weights; entries whose denominator vanishes
    // belong to live modes and (shown above) carry no weight
    let mut wmat = Array2::<c64>::zeros((s, s));
    for m in 0..s {
        for n in 0..s {
            let denom = -c64::i() * (lam[m] - lam[n].conj());
            wmat[[m, n]] = if denom.norm() < LIVE_TOL * scale {
                c64::new(0.0, 0.0)
            } else {
                -1.0 / denom
            };
        }
    }

    // δ₀ = diag(−𝓚⁻¹ρ₀)
    let delta0 = {
        let sig = g.dot(&rho0).dot(&g_h);
        diag_of_v_y_vh(&v, &(&sig * &wmat))
    };

    // feed rate and sparsity pattern
    let (rate, neighbors_of): (f64, Option<&Vec<Vec<usize>>>) = match gen.feed {
        FeedKind::Hopping { rate } => (rate, Some(&gen.adjacency)),
        FeedKind::Dephasing { rate } => (rate, None),
    };

    let delta = if rate == 0.0 {
        delta0
    } else {
        // C_ia = [diag(−𝓚⁻¹ |a⟩⟨a|)]_i, one dense product per column
        let mut c = Array2::<c64>::zeros((s, s));
        let mut y = Array2::<c64>::zeros((s, s));
        for a in 0..s {
            let ga = g.column(a);
            for m in 0..s {
                let gm = ga[m];
                for n in 0..s {
                    y[[m, n]] = wmat[[m, n]] * gm * ga[n].conj();
                }
            }
            let col = diag_of_v_y_vh(&v, &y);
            c.column_mut(a).assign(&col);
        }
        // Θ = C · F
        let mut theta = Array2::<c64>::zeros((s, s));
        match neighbors_of {
            Some(adj) => {
                for j in 0..s {
                    for &nb in &adj[j] {
                        let col = c.column(nb).to_owned() * c64::new(rate, 0.0);
                        let mut tj = theta.column_mut(j);
                        tj += &col;
                    }
                }
            }
            None => {
                theta.assign(&(&c * c64::new(rate, 0.0)));
            }
        }
        let mut a_mat = -theta;
        for i in 0..s {
            a_mat[[i, i]] += c64::new(1.0, 0.0);
        }
        a_mat
            .solve(&delta0)
            .map_err(|e| Error::Numerical(format!("dwelling-time closure is singular: {e}")))?
    };

    let tbar: c64 = delta.iter().sum();
    if tbar.im.abs() > 1e-6 * tbar.re.abs() + 1e-9 {
        return Err(Error::Numerical(format!(
            "dwelling time acquired a non-negligible imaginary part ({:.3e})",
            tbar.im
        )));
    }
    if !tbar.re.is_finite() || tbar.re < 0.0 {
        return Err(Error::Numerical(format!(
            "dwelling time evaluated to {:.6e}",
            tbar.re
        )));
    }
    Ok(tbar.re)
}

/// diag(V Y V†) without forming the full product.
fn diag_of_v_y_vh(v: &Array2<c64>, y: &Array2<c64>) -> Array1<c64> {
    let vy = v.dot(y);
    let s = v.nrows();
    let mut out = Array1::<c64>::zeros(s);
    for i in 0..s {
        let mut acc = c64::new(0.0, 0.0);
        for n in 0..s {
            acc += vy[[i, n]] * v[[i, n]].conj();
        }
        out[i] = acc;
    }
    out
}
