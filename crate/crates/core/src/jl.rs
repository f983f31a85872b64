//! Families of unit vectors with small pairwise overlaps.

use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Stream;

pub const DEFAULT_MAX_RETRIES: usize = 1000;

/// `k` unit vectors in `R^dim` with `|<v_a, v_b>| <= gamma` for `a != b`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorFamily {
    dim: usize,
    gamma: f64,
    vectors: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FamilyReport {
    pub max_overlap: f64,
    pub max_norm_dev: f64,
    /// Zero-based indices of the worst pair, if there are two vectors.
    pub worst_pair: Option<(usize, usize)>,
}

impl FamilyReport {
    pub fn passes(&self, gamma: f64) -> bool {
        self.max_overlap <= gamma + 1e-12 && self.max_norm_dev <= 1e-12
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Smallest dimension allowed for `k` vectors at overlap `gamma`:
/// `ceil(8 ln k / gamma^2)`.
pub fn min_dimension(k: usize, gamma: f64) -> usize {
    (8.0 * (k as f64).ln() / (gamma * gamma)).ceil().max(0.0) as usize
}

impl VectorFamily {
    pub fn from_vectors(dim: usize, gamma: f64, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::Parameter(format!("family vectors must have dimension {dim}")));
        }
        Ok(VectorFamily { dim, gamma, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    /// Vector of the zero-based slot `i`.
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn inner(&self, i: usize, j: usize) -> f64 {
        dot(&self.vectors[i], &self.vectors[j])
    }

    /// Text form: `dim k gamma` then one line of `dim` floats per vector.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {} {:.16e}", self.dim, self.len(), self.gamma).unwrap();
        for v in &self.vectors {
            let line: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty vector file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!("bad header {header:?}, expected `d_prime k gamma`")));
        }
        let bad = |what: &str| Error::Parse(format!("bad {what} in header {header:?}"));
        let dim: usize = fields[0].parse().map_err(|_| bad("d_prime"))?;
        let k: usize = fields[1].parse().map_err(|_| bad("k"))?;
        let gamma: f64 = fields[2].parse().map_err(|_| bad("gamma"))?;
        let mut vectors = Vec::with_capacity(k);
        for (i, line) in lines.enumerate() {
            let v = line
                .split_whitespace()
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("vector {}: {e}", i + 1)))?;
            if v.len() != dim {
                return Err(Error::Parse(format!(
                    "vector {} has {} entries, expected {dim}",
                    i + 1,
                    v.len()
                )));
            }
            vectors.push(v);
        }
        if vectors.len() != k {
            return Err(Error::Parse(format!("expected {k} vectors, found {}", vectors.len())));
        }
        Ok(VectorFamily { dim, gamma, vectors })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Exact maxima of pairwise overlap and norm deviation.
pub fn verify_family(family: &VectorFamily) -> FamilyReport {
    let k = family.len();
    let max_norm_dev = family
        .vectors
        .iter()
        .map(|v| (dot(v, v).sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    let mut max_overlap = 0.0;
    let mut worst_pair = None;
    for i in 0..k {
        for j in i + 1..k {
            let o = family.inner(i, j).abs();
            if worst_pair.is_none() || o > max_overlap {
                max_overlap = o;
                worst_pair = Some((i, j));
            }
        }
    }
    FamilyReport {
        max_overlap,
        max_norm_dev,
        worst_pair,
    }
}

/// The first `k` standard basis vectors of `R^dim`.
pub fn orthonormal_family(dim: usize, k: usize, gamma: f64) -> Result<VectorFamily> {
    if k > dim {
        return Err(Error::Parameter(format!(
            "cannot place {k} orthonormal vectors in dimension {dim}"
        )));
    }
    let vectors = (0..k)
        .map(|i| {
            let mut v = vec![0.0; dim];
            v[i] = 1.0;
            v
        })
        .collect();
    Ok(VectorFamily { dim, gamma, vectors })
}

fn gaussian_unit<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Normalized Gaussian vectors, resampling the whole family until every
/// pairwise overlap is at most `gamma`.
pub fn generate_family(
    dim: usize,
    k: usize,
    gamma: f64,
    rng: &mut Stream,
    max_retries: usize,
) -> Result<VectorFamily> {
    if k == 0 || dim == 0 {
        return Err(Error::Parameter("need k >= 1 and d' >= 1".into()));
    }
    if !(gamma > 0.0) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    let needed = min_dimension(k, gamma);
    if dim < needed {
        return Err(Error::Parameter(format!(
            "d' = {dim} is below ceil(8 ln k / gamma^2) = {needed} for k = {k}, gamma = {gamma}"
        )));
    }
    let mut worst = f64::INFINITY;
    for _ in 0..=max_retries {
        let vectors = (0..k).map(|_| gaussian_unit(dim, rng)).collect();
        let family = VectorFamily { dim, gamma, vectors };
        let report = verify_family(&family);
        if report.passes(gamma) {
            return Ok(family);
        }
        worst = worst.min(report.max_overlap);
    }
    Err(Error::Generation {
        retries: max_retries,
        worst_overlap: worst,
        gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn single_vector_is_vacuous() {
        let f = generate_family(5, 1, 0.25, &mut stream(1, 0), 10).unwrap();
        let r = verify_family(&f);
        assert_eq!(r.max_overlap, 0.0);
        assert!(r.max_norm_dev <= 1e-12);
        assert_eq!(r.worst_pair, None);
    }

    #[test]
    fn k_one_feasible_in_any_dimension() {
        assert_eq!(min_dimension(1, 0.25), 0);
        assert!(generate_family(64, 1, 0.25, &mut stream(2, 0), 0).is_ok());
    }

    #[test]
    fn gaussian_family_passes_brute_force_pair_check() {
        assert_eq!(min_dimension(16, 0.25), 355);
        let f = generate_family(2048, 16, 0.25, &mut stream(9, 1), DEFAULT_MAX_RETRIES).unwrap();
        let mut pairs = 0;
        let mut worst: f64 = 0.0;
        for i in 0..16 {
            for j in 0..16 {
                if i < j {
                    let ip: f64 = (0..2048).map(|c| f.vector(i)[c] * f.vector(j)[c]).sum();
                    worst = worst.max(ip.abs());
                    pairs += 1;
                }
            }
        }
        assert_eq!(pairs, 120);
        assert!(worst <= 0.25);
        assert!((verify_family(&f).max_overlap - worst).abs() < 1e-15);
    }

    #[test]
    fn infeasible_dimension_is_rejected() {
        let err = generate_family(100, 16, 0.25, &mut stream(1, 1), 5).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn orthonormal_basics() {
        let f = orthonormal_family(4, 3, 0.25).unwrap();
        assert_eq!(f.vector(0), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.vector(2), &[0.0, 0.0, 1.0, 0.0]);
        let r = verify_family(&f);
        assert_eq!((r.max_overlap, r.max_norm_dev), (0.0, 0.0));
        assert!(orthonormal_family(4, 5, 0.25).is_err());
    }

    #[test]
    fn duplicated_vector_is_flagged() {
        let v = vec![0.6, 0.8];
        let f = VectorFamily::from_vectors(2, 0.25, vec![v.clone(), v]).unwrap();
        let r = verify_family(&f);
        assert!((r.max_overlap - 1.0).abs() < 1e-15);
        assert!(!r.passes(0.25));
    }

    #[test]
    fn same_seed_same_family() {
        let a = generate_family(300, 6, 0.25, &mut stream(11, 2), 100).unwrap();
        let b = generate_family(300, 6, 0.25, &mut stream(11, 2), 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let f = generate_family(230, 6, 0.25, &mut stream(3, 9), 100).unwrap();
        let back = VectorFamily::from_text(&f.to_text()).unwrap();
        assert_eq!(f, back);
    }
}
