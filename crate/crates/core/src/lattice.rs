//! Regular network topologies: chain, ring, square, rectangle and torus,
//! together with the designation of exit sites.
//!
//! Sites are labelled `1..=S` (matching the Σ_{i=1}^N convention used
//! throughout the physics; matrix rows/columns use `site - 1`). Two-dimensional
//! lattices are stored row-major: site `(r, c)` of an N×M array, with
//! `r ∈ 1..=N` and `c ∈ 1..=M`, carries the label `(r-1)·M + c`. The lattice
//! constant is fixed to `a = 1`, so all lengths are dimensionless and rates
//! are quoted in units of the coupling `J`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five regular topologies supported by the toolkit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    /// Open 1D array of N sites, N−1 edges.
    Chain,
    /// Closed 1D array of N sites, N edges.
    Ring,
    /// Open N×N array.
    Square,
    /// Open N×M array (N×(N+1) in the scaling study, but general here).
    Rectangle,
    /// N×M array with periodic boundaries in both directions.
    Torus,
}

impl LatticeKind {
    /// Coordination constant z: 2 for 1D kinds, 4 for 2D kinds. Fixed per
    /// kind (open boundaries do not lower z even though corner sites have
    /// smaller degree).
    pub fn coordination(self) -> usize {
        match self {
            LatticeKind::Chain | LatticeKind::Ring => 2,
            LatticeKind::Square | LatticeKind::Rectangle | LatticeKind::Torus => 4,
        }
    }

    fn is_2d(self) -> bool {
        self.coordination() == 4
    }
}

/// Where the exit site(s) sit on the lattice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExitSpec {
    /// Site N of a chain or ring (the paper places the chain exit "at one
    /// end", i.e. site N).
    End,
    /// Site (1,1) of a 2D array.
    Corner,
    /// Every boundary site of a 2D array.
    Perimeter,
    /// An explicit nonempty list of 1-based site labels.
    Explicit(Vec<usize>),
    /// One lattice per possible single-exit position, for downstream
    /// averaging of P(t) (equivalently of t̄, which is linear in P).
    Averaged,
}

/// A built topology: site count, undirected edge list, exit set and the
/// coordination constant z. Immutable after construction and safe to share
/// across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub kind: LatticeKind,
    /// (N, 1) for 1D kinds, (N, M) row-major for 2D kinds.
    pub dims: (usize, usize),
    /// Total number of sites S.
    pub n_sites: usize,
    /// Undirected edges as 1-based pairs (i, j) with i < j, sorted.
    pub edges: Vec<(usize, usize)>,
    /// 1-based exit site labels, sorted, nonempty.
    pub exits: Vec<usize>,
    /// Coordination constant z ∈ {2, 4}.
    pub z: usize,
    /// The specification this lattice was built from. For an `Averaged`
    /// family every member keeps the `Averaged` tag (its own exit is in
    /// `exits`), so size sweeps can rebuild the whole family.
    pub exit_spec: ExitSpec,
    #[serde(skip)]
    adjacency: Vec<Vec<usize>>,
}

impl Lattice {
    /// Build a lattice with a single concrete exit specification.
    ///
    /// `dims` is `[N]` for chain/ring and `[N, M]` for square (N = M
    /// enforced), rectangle and torus. `ExitSpec::Averaged` is rejected
    /// here; use [`Lattice::build_all`] for the averaged family.
    pub fn build(kind: LatticeKind, dims: &[usize], exit: ExitSpec) -> Result<Lattice> {
        if matches!(exit, ExitSpec::Averaged) {
            return Err(Error::InvalidInput(
                "ExitSpec::Averaged yields one lattice per exit position; call build_all".into(),
            ));
        }
        let mut all = Self::build_all(kind, dims, exit)?;
        debug_assert_eq!(all.len(), 1);
        Ok(all.pop().expect("non-averaged build yields one lattice"))
    }

    /// Build every lattice requested by the exit specification: a single
    /// lattice for concrete specs, and one per site for `Averaged`.
    pub fn build_all(kind: LatticeKind, dims: &[usize], exit: ExitSpec) -> Result<Vec<Lattice>> {
        let (n, m) = Self::check_dims(kind, dims)?;
        let edges = Self::edge_list(kind, n, m);
        let n_sites = n * m;

        let exit_sets: Vec<Vec<usize>> = match &exit {
            ExitSpec::End => {
                if kind.is_2d() {
                    return Err(Error::InvalidInput(
                        "exit spec `end` applies to chain and ring lattices only".into(),
                    ));
                }
                vec![vec![n_sites]]
            }
            ExitSpec::Corner => {
                if !kind.is_2d() {
                    return Err(Error::InvalidInput(
                        "exit spec `corner` applies to 2D lattices only".into(),
                    ));
                }
                vec![vec![1]]
            }
            ExitSpec::Perimeter => {
                if !kind.is_2d() {
                    return Err(Error::InvalidInput(
                        "exit spec `perimeter` applies to 2D lattices only".into(),
                    ));
                }
                let mut sites = Vec::new();
                for r in 1..=n {
                    for c in 1..=m {
                        if r == 1 || r == n || c == 1 || c == m {
                            sites.push((r - 1) * m + c);
                        }
                    }
                }
                vec![sites]
            }
            ExitSpec::Explicit(sites) => {
                if sites.is_empty() {
                    return Err(Error::InvalidInput("exit list must be nonempty".into()));
                }
                let mut sorted = sites.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if let Some(&bad) = sorted.iter().find(|&&s| s == 0 || s > n_sites) {
                    return Err(Error::InvalidInput(format!(
                        "exit site {bad} outside 1..={n_sites}"
                    )));
                }
                vec![sorted]
            }
            ExitSpec::Averaged => (1..=n_sites).map(|s| vec![s]).collect(),
        };

        let adjacency = Self::adjacency_from_edges(n_sites, &edges);
        Ok(exit_sets
            .into_iter()
            .map(|exits| Lattice {
                kind,
                dims: (n, m),
                n_sites,
                edges: edges.clone(),
                exits,
                z: kind.coordination(),
                exit_spec: exit.clone(),
                adjacency: adjacency.clone(),
            })
            .collect())
    }

    fn check_dims(kind: LatticeKind, dims: &[usize]) -> Result<(usize, usize)> {
        let err = |msg: String| Err(Error::InvalidInput(msg));
        match kind {
            LatticeKind::Chain => match dims {
                [n] if *n >= 1 => Ok((*n, 1)),
                _ => err("chain expects dims = [N] with N ≥ 1".into()),
            },
            LatticeKind::Ring => match dims {
                [n] if *n >= 3 => Ok((*n, 1)),
                _ => err("ring expects dims = [N] with N ≥ 3".into()),
            },
            LatticeKind::Square => match dims {
                [n] if *n >= 2 => Ok((*n, *n)),
                [n, m] if n == m && *n >= 2 => Ok((*n, *m)),
                _ => err("square expects dims = [N] or [N, N] with N ≥ 2".into()),
            },
            LatticeKind::Rectangle => match dims {
                [n, m] if *n >= 2 && *m >= 2 => Ok((*n, *m)),
                _ => err("rectangle expects dims = [N, M] with N, M ≥ 2".into()),
            },
            LatticeKind::Torus => match dims {
                [n, m] if *n >= 3 && *m >= 3 => Ok((*n, *m)),
                [n] if *n >= 3 => Ok((*n, *n)),
                _ => err("torus expects dims = [N, M] with N, M ≥ 3 (wraparound needs ≥ 3)".into()),
            },
        }
    }

    /// Deterministic edge list: nearest neighbours, each pair (i, j) with
    /// i < j, sorted lexicographically.
    fn edge_list(kind: LatticeKind, n: usize, m: usize) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        match kind {
            LatticeKind::Chain => {
                for i in 1..n {
                    edges.push((i, i + 1));
                }
            }
            LatticeKind::Ring => {
                for i in 1..n {
                    edges.push((i, i + 1));
                }
                edges.push((1, n));
            }
            LatticeKind::Square | LatticeKind::Rectangle => {
                for r in 1..=n {
                    for c in 1..=m {
                        let s = (r - 1) * m + c;
                        if c < m {
                            edges.push((s, s + 1));
                        }
                        if r < n {
                            edges.push((s, s + m));
                        }
                    }
                }
            }
            LatticeKind::Torus => {
                for r in 1..=n {
                    for c in 1..=m {
                        let s = (r - 1) * m + c;
                        let right = (r - 1) * m + (c % m) + 1;
                        let down = (r % n) * m + c;
                        edges.push((s.min(right), s.max(right)));
                        edges.push((s.min(down), s.max(down)));
                    }
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    fn adjacency_from_edges(n_sites: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); n_sites];
        for &(i, j) in edges {
            adj[i - 1].push(j);
            adj[j - 1].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Sites sharing an edge with `site` (1-based), ascending.
    pub fn neighbors(&self, site: usize) -> Result<&[usize]> {
        if site == 0 || site > self.n_sites {
            return Err(Error::InvalidInput(format!(
                "site {site} outside 1..={}",
                self.n_sites
            )));
        }
        Ok(&self.adjacency[site - 1])
    }

    /// Degree of `site` (number of incident edges).
    pub fn degree(&self, site: usize) -> Result<usize> {
        Ok(self.neighbors(site)?.len())
    }

    /// True if `site` is an exit.
    pub fn is_exit(&self, site: usize) -> bool {
        self.exits.binary_search(&site).is_ok()
    }

    /// Rebuild the adjacency cache (needed after deserialization, where the
    /// cache is skipped).
    pub fn rebuild_cache(&mut self) {
        self.adjacency = Self::adjacency_from_edges(self.n_sites, &self.edges);
    }
}
