//! Near G-optimal experimental design and the least-squares estimator
//! built on it.
//!
//! The design maximizes `log det G(ρ)` with Frank-Wolfe steps (plus away
//! steps, which keep the support small) inside the span of the candidates.
//! By the Kiefer-Wolfowitz theorem the optimum has max leverage equal to the
//! rank `r`; the iteration stops once every candidate has leverage at most
//! `(1 + tolerance) r`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DesignConfig {
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            tolerance: 1.0,
            max_iters: 10_000,
        }
    }
}

/// Support benchmark `4d lnln(max(d,3)) + 16`.
pub fn support_benchmark(d: usize) -> f64 {
    4.0 * d as f64 * (d.max(3) as f64).ln().ln() + 16.0
}

/// A probability vector on a subset of the candidates.
#[derive(Clone, Debug)]
pub struct Design {
    dim: usize,
    /// Orthonormal basis of the candidate span, `dim x rank`.
    basis: DMatrix<f64>,
    /// Indices into the candidate list.
    pub points: Vec<usize>,
    pub weights: Vec<f64>,
    coords: Vec<DVector<f64>>,
    chol: Option<Cholesky<f64, Dyn>>,
    pub max_leverage: f64,
    pub iterations: usize,
    pub pruned: usize,
}

impl Design {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn support_size(&self) -> usize {
        self.points.len()
    }

    /// `G(ρ) = Σ ρ(x) φ(x) φ(x)ᵀ` in the ambient dimension.
    pub fn info_matrix(&self, candidates: &[Vec<f64>]) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.dim, self.dim);
        for (&p, &w) in self.points.iter().zip(&self.weights) {
            let phi = DVector::from_column_slice(&candidates[p]);
            g += w * &phi * phi.transpose();
        }
        g
    }

    /// `φᵀ G(ρ)⁺ φ`, restricted to the design's span.
    pub fn leverage(&self, phi: &[f64]) -> f64 {
        match &self.chol {
            Some(chol) => {
                let z = self.basis.tr_mul(&DVector::from_column_slice(phi));
                z.dot(&chol.solve(&z))
            }
            None => 0.0,
        }
    }

    /// `θ̂ = G(ρ)⁺ Σ ρ(x) r(x) φ(x)`, with `responses` aligned to `points`.
    pub fn least_squares(&self, responses: &[f64]) -> Result<Vec<f64>> {
        if responses.len() != self.points.len() {
            return Err(Error::Design(format!(
                "{} responses for {} support points",
                responses.len(),
                self.points.len()
            )));
        }
        let Some(chol) = &self.chol else {
            return Ok(vec![0.0; self.dim]);
        };
        let mut rhs = DVector::zeros(self.rank());
        for ((z, &w), &r) in self.coords.iter().zip(&self.weights).zip(responses) {
            rhs += (w * r) * z;
        }
        let theta = &self.basis * chol.solve(&rhs);
        Ok(theta.iter().copied().collect())
    }
}

/// Orthonormal basis of the span of `points`.
fn span_basis(points: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
    let mut scatter = DMatrix::zeros(dim, dim);
    for p in points {
        scatter += p * p.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..dim)
        .filter(|&i| eig.eigenvalues[i] > 1e-10 * top.max(f64::MIN_POSITIVE))
        .collect();
    let mut basis = DMatrix::zeros(dim, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        basis.set_column(c, &eig.eigenvectors.column(i));
    }
    basis
}

/// Greedy pivoted selection of `r` points spanning the coordinate space.
fn spanning_subset(coords: &[DVector<f64>], r: usize) -> Vec<usize> {
    let mut residual: Vec<DVector<f64>> = coords.to_vec();
    let mut chosen = Vec::with_capacity(r);
    for _ in 0..r {
        let (best, norm) = residual
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.norm()))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if norm <= 1e-12 {
            break;
        }
        chosen.push(best);
        let u = &residual[best] / norm;
        for v in residual.iter_mut() {
            let c = u.dot(v);
            *v -= c * &u;
        }
    }
    chosen
}

struct State<'a> {
    coords: &'a [DVector<f64>],
    weights: Vec<f64>,
    rank: usize,
}

impl State<'_> {
    fn factor(&self) -> Option<Cholesky<f64, Dyn>> {
        let mut g = DMatrix::zeros(self.rank, self.rank);
        for (z, &w) in self.coords.iter().zip(&self.weights) {
            if w > 0.0 {
                g += w * z * z.transpose();
            }
        }
        Cholesky::new(g)
    }

    fn leverages(&self, chol: &Cholesky<f64, Dyn>) -> Vec<f64> {
        self.coords.iter().map(|z| z.dot(&chol.solve(z))).collect()
    }

    fn step(&mut self, j: usize, lambda: f64) {
        for w in self.weights.iter_mut() {
            *w *= 1.0 - lambda;
        }
        self.weights[j] += lambda;
        if self.weights[j] < 1e-15 {
            self.weights[j] = 0.0;
        }
    }
}

fn max_of(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
}

/// Near G-optimal design over `candidates` (all of length `dim`).
pub fn g_optimal_design(candidates: &[Vec<f64>], dim: usize, config: DesignConfig) -> Result<Design> {
    if candidates.iter().any(|c| c.len() != dim) {
        return Err(Error::Design(format!("candidate features must have dimension {dim}")));
    }
    // distinct nonzero candidates; zero features carry no information
    let mut unique: Vec<usize> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        if c.iter().all(|&x| x == 0.0) || unique.iter().any(|&u| candidates[u] == *c) {
            continue;
        }
        unique.push(i);
    }
    let ambient: Vec<DVector<f64>> = unique
        .iter()
        .map(|&i| DVector::from_column_slice(&candidates[i]))
        .collect();
    let basis = span_basis(&ambient, dim);
    let rank = basis.ncols();
    if rank == 0 {
        return Ok(Design {
            dim,
            basis,
            points: Vec::new(),
            weights: Vec::new(),
            coords: Vec::new(),
            chol: None,
            max_leverage: 0.0,
            iterations: 0,
            pruned: 0,
        });
    }
    let coords: Vec<DVector<f64>> = ambient.iter().map(|p| basis.tr_mul(p)).collect();
    let r = rank as f64;
    let target = (1.0 + config.tolerance) * r;

    let mut state = State {
        coords: &coords,
        weights: vec![0.0; coords.len()],
        rank,
    };
    let start = spanning_subset(&coords, rank);
    if start.len() < rank {
        return Err(Error::Design("candidate span is numerically degenerate".into()));
    }
    for &i in &start {
        state.weights[i] = 1.0 / start.len() as f64;
    }

    let mut iterations = 0;
    let mut chol = state
        .factor()
        .ok_or_else(|| Error::Design("initial design is singular".into()))?;
    let mut lev = state.leverages(&chol);
    loop {
        let (j, g_max) = max_of(&lev);
        if g_max <= target {
            break;
        }
        if iterations >= config.max_iters {
            return Err(Error::Design(format!(
                "no convergence after {iterations} iterations: max leverage {g_max:.6}, target {target:.6}"
            )));
        }
        iterations += 1;
        // away candidate: smallest leverage on the support
        let away = (0..coords.len())
            .filter(|&i| state.weights[i] > 0.0 && state.weights[i] < 1.0)
            .map(|i| (i, lev[i]))
            .fold(None, |acc: Option<(usize, f64)>, x| match acc {
                Some(a) if a.1 <= x.1 => Some(a),
                _ => Some(x),
            });
        let saved = state.weights.clone();
        match away {
            Some((i, g_min)) if r - g_min > g_max - r => {
                let w = state.weights[i];
                let floor = -w / (1.0 - w);
                let lambda = if g_min > 1.0 {
                    ((g_min - r) / (r * (g_min - 1.0))).max(floor)
                } else {
                    floor
                };
                state.step(i, lambda);
                if lambda == floor {
                    state.weights[i] = 0.0;
                }
            }
            _ => {
                let lambda = (g_max - r) / (r * (g_max - 1.0));
                state.step(j, lambda);
            }
        }
        chol = match state.factor() {
            Some(c) => c,
            None => {
                // an away step dropped a point the span needed; take a plain
                // Frank-Wolfe step instead
                state.weights = saved;
                let lambda = (g_max - r) / (r * (g_max - 1.0));
                state.step(j, lambda);
                state
                    .factor()
                    .ok_or_else(|| Error::Design("design became singular".into()))?
            }
        };
        lev = state.leverages(&chol);
    }

    // prune tiny weights, keeping the result only if it still meets the target
    let support = state.weights.iter().filter(|&&w| w > 0.0).count();
    let w_min = 1e-6 / support as f64;
    let before = state.weights.clone();
    let mut pruned = 0;
    for w in state.weights.iter_mut() {
        if *w > 0.0 && *w < w_min {
            *w = 0.0;
            pruned += 1;
        }
    }
    if pruned > 0 {
        let total: f64 = state.weights.iter().sum();
        for w in state.weights.iter_mut() {
            *w /= total;
        }
        match state.factor() {
            Some(c) if max_of(&state.leverages(&c)).1 <= target => chol = c,
            _ => {
                state.weights = before;
                pruned = 0;
                chol = state.factor().expect("pre-pruning design was nonsingular");
            }
        }
    }
    let max_leverage = max_of(&state.leverages(&chol)).1;

    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut support_coords = Vec::new();
    for (i, &w) in state.weights.iter().enumerate() {
        if w > 0.0 {
            points.push(unique[i]);
            weights.push(w);
            support_coords.push(coords[i].clone());
        }
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(Design {
        dim,
        basis,
        points,
        weights,
        coords: support_coords,
        chol: Some(chol),
        max_leverage,
        iterations,
        pruned,
    })
}
