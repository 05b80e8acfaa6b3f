use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{norm, StabilityIndex};
use crate::error::{Error, Result};

const NORM_TOL: f64 = 1e-12;
const WEIGHT_TOL: f64 = 1e-12;
// directions φ and -φ' are considered opposite when |φ + φ'| is below this
const PAIR_TOL: f64 = 1e-9;

/// One atom `(φ, λ)` of a spectral measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub dir: Vec<f64>,
    pub weight: f64,
}

/// Finite symmetric atomic measure on the unit sphere `S^{d-1}`.
///
/// Atoms are kept in `±` pairs: `pairs()[k] = (i, j)` with
/// `atoms[j].dir == -atoms[i].dir` and equal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMeasure {
    dim: usize,
    atoms: Vec<Atom>,
    pairs: Vec<(usize, usize)>,
}

impl SpectralMeasure {
    /// Builds a measure from an explicit atom list. Directions must already
    /// be unit vectors and the list must be symmetric.
    pub fn new(dim: usize, atoms: Vec<Atom>) -> Result<Self> {
        check_structure(dim, &atoms)?;
        let pairs = match_pairs(&atoms)?;
        Ok(Self { dim, atoms, pairs })
    }

    /// Builds the symmetric measure with atoms `(±φ_k, λ_k)`; directions are
    /// normalized.
    pub fn from_pairs(dim: usize, half: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let mut atoms = Vec::with_capacity(2 * half.len());
        let mut pairs = Vec::with_capacity(half.len());
        for (dir, w) in half {
            let dir = normalized(dim, dir)?;
            let neg: Vec<f64> = dir.iter().map(|x| -x).collect();
            pairs.push((atoms.len(), atoms.len() + 1));
            atoms.push(Atom { dir, weight: w });
            atoms.push(Atom { dir: neg, weight: w });
        }
        check_structure(dim, &atoms)?;
        Ok(Self { dim, atoms, pairs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Index pairs `(i, j)` of opposite atoms.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// `μ(S^{d-1}) = Σ_k λ_k` over all atoms.
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// `ν({|y| > r}) = μ(S^{d-1}) r^{-α} / α`.
    pub fn tail_mass(&self, alpha: StabilityIndex, r: f64) -> f64 {
        self.total_mass() * r.powf(-alpha.value()) / alpha.value()
    }

    /// Multiplies every weight by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let atoms: Vec<Atom> = self
            .atoms
            .iter()
            .map(|a| Atom { dir: a.dir.clone(), weight: a.weight * c })
            .collect();
        check_structure(self.dim, &atoms)?;
        Ok(Self { dim: self.dim, atoms, pairs: self.pairs.clone() })
    }

    /// Merges atoms whose directions lie within `tol` of each other
    /// (Euclidean distance on the sphere), summing weights. Merge order is by
    /// atom index, so the result is deterministic.
    pub fn merged(&self, tol: f64) -> Result<Self> {
        let mut half: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut index: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        let q = quant_scale(tol);
        for &(i, _) in &self.pairs {
            let a = &self.atoms[i];
            // canonical representative of the line through ±φ
            let dir = canonical_sign(&a.dir);
            let key = quantize(&dir, q);
            let mut hit = None;
            for cand in neighbour_keys(&key) {
                if let Some(list) = index.get(&cand) {
                    if let Some(&h) = list.iter().find(|&&h| dist(&half[h].0, &dir) <= tol) {
                        hit = Some(h);
                        break;
                    }
                }
            }
            match hit {
                Some(h) => half[h].1 += a.weight,
                None => {
                    index.entry(key).or_default().push(half.len());
                    half.push((dir, a.weight));
                }
            }
        }
        Self::from_pairs(self.dim, half)
    }
}

fn canonical_sign(v: &[f64]) -> Vec<f64> {
    let first = v.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(1.0);
    if first < 0.0 {
        v.iter().map(|x| -x).collect()
    } else {
        v.to_vec()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn quant_scale(tol: f64) -> f64 {
    1.0 / tol.max(1e-15)
}

fn quantize(v: &[f64], q: f64) -> Vec<i64> {
    v.iter().map(|x| (x * q).floor() as i64).collect()
}

fn neighbour_keys(key: &[i64]) -> Vec<Vec<i64>> {
    let mut out = vec![key.to_vec()];
    for axis in 0..key.len() {
        let mut next = Vec::new();
        for k in &out {
            for delta in [-1i64, 1] {
                let mut c = k.clone();
                c[axis] += delta;
                next.push(c);
            }
        }
        out.extend(next);
    }
    out
}

fn normalized(dim: usize, dir: Vec<f64>) -> Result<Vec<f64>> {
    if dir.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: dir.len() });
    }
    let n = norm(&dir);
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::MalformedMeasure("zero or non-finite direction".into()));
    }
    Ok(dir.into_iter().map(|x| x / n).collect())
}

fn check_structure(dim: usize, atoms: &[Atom]) -> Result<()> {
    if dim == 0 {
        return Err(Error::MalformedMeasure("dimension must be positive".into()));
    }
    if atoms.is_empty() {
        return Err(Error::MalformedMeasure("no atoms".into()));
    }
    for (i, a) in atoms.iter().enumerate() {
        if a.dir.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: a.dir.len() });
        }
        if (norm(&a.dir) - 1.0).abs() > NORM_TOL {
            return Err(Error::MalformedMeasure(format!("atom {i} is not a unit vector")));
        }
        if !(a.weight > 0.0 && a.weight.is_finite()) {
            return Err(Error::MalformedMeasure(format!("atom {i} has non-positive weight")));
        }
    }
    Ok(())
}

fn weights_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= WEIGHT_TOL * a.abs().max(b.abs()).max(1.0)
}

fn is_opposite(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).map(|(x, y)| (x + y) * (x + y)).sum::<f64>().sqrt() <= PAIR_TOL
}

/// Greedy matching of every atom with an opposite atom of equal weight.
fn match_pairs(atoms: &[Atom]) -> Result<Vec<(usize, usize)>> {
    let q = quant_scale(1e-6);
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, a) in atoms.iter().enumerate() {
        buckets.entry(quantize(&a.dir, q)).or_default().push(i);
    }
    let mut used = vec![false; atoms.len()];
    let mut pairs = Vec::with_capacity(atoms.len() / 2);
    for i in 0..atoms.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let neg: Vec<f64> = atoms[i].dir.iter().map(|x| -x).collect();
        let key = quantize(&neg, q);
        let mut found = None;
        let mut direction_only = false;
        'search: for cand in neighbour_keys(&key) {
            if let Some(list) = buckets.get(&cand) {
                for &j in list {
                    if !used[j] && is_opposite(&atoms[i].dir, &atoms[j].dir) {
                        if weights_match(atoms[i].weight, atoms[j].weight) {
                            found = Some(j);
                            break 'search;
                        }
                        direction_only = true;
                    }
                }
            }
        }
        match found {
            Some(j) => {
                used[j] = true;
                pairs.push((i, j));
            }
            None if direction_only => {
                return Err(Error::AsymmetricMeasure(format!(
                    "atom {i} has an opposite atom with a different weight"
                )))
            }
            None => {
                return Err(Error::AsymmetricMeasure(format!("atom {i} has no opposite atom")))
            }
        }
    }
    Ok(pairs)
}

/// JSON form `{"alpha": .., "atoms": [{"dir": [..], "w": ..}, ..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub alpha: f64,
    pub atoms: Vec<NoiseAtom>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseAtom {
    pub dir: Vec<f64>,
    pub w: f64,
}

impl NoiseSpec {
    /// Normalizes directions and builds the validated pair `(μ, α)`.
    pub fn build(&self) -> Result<(SpectralMeasure, StabilityIndex)> {
        let alpha = StabilityIndex::new(self.alpha)?;
        let dim = self
            .atoms
            .first()
            .map(|a| a.dir.len())
            .ok_or_else(|| Error::MalformedMeasure("no atoms".into()))?;
        let atoms = self
            .atoms
            .iter()
            .map(|a| Ok(Atom { dir: normalized(dim, a.dir.clone())?, weight: a.w }))
            .collect::<Result<Vec<_>>>()?;
        Ok((SpectralMeasure::new(dim, atoms)?, alpha))
    }

    pub fn from_measure(mu: &SpectralMeasure, alpha: StabilityIndex) -> Self {
        Self {
            alpha: alpha.value(),
            atoms: mu.atoms().iter().map(|a| NoiseAtom { dir: a.dir.clone(), w: a.weight }).collect(),
        }
    }
}

/// Spectral measure of the image `ν ∘ F^{-1}` of the Lévy measure under
/// `y ↦ F y`: atom `(Fφ/|Fφ|, λ |Fφ|^α)` for every atom `(φ, λ)`.
pub fn pushforward(
    mu: &SpectralMeasure,
    alpha: StabilityIndex,
    f: &DMatrix<f64>,
) -> Result<SpectralMeasure> {
    let d = mu.dim();
    if f.nrows() != d || f.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: f.nrows() });
    }
    let sv = f.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond < 1e12) {
        return Err(Error::SingularMatrix(cond));
    }
    let a = alpha.value();
    let mut half = Vec::with_capacity(mu.pairs().len());
    for &(i, _) in mu.pairs() {
        let atom = &mu.atoms()[i];
        let img = f * nalgebra::DVector::from_column_slice(&atom.dir);
        let len = img.norm();
        half.push((img.iter().map(|x| x / len).collect(), atom.weight * len.powf(a)));
    }
    SpectralMeasure::from_pairs(d, half)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom(dir: &[f64], w: f64) -> Atom {
        Atom { dir: dir.to_vec(), weight: w }
    }

    #[test]
    fn rejects_weight_mismatch() {
        let err = SpectralMeasure::new(2, vec![atom(&[1.0, 0.0], 1.0), atom(&[-1.0, 0.0], 2.0)]);
        assert!(matches!(err, Err(Error::AsymmetricMeasure(_))));
    }

    #[test]
    fn rejects_missing_partner() {
        let err = SpectralMeasure::new(2, vec![atom(&[1.0, 0.0], 1.0), atom(&[0.0, 1.0], 1.0)]);
        assert!(matches!(err, Err(Error::AsymmetricMeasure(_))));
    }

    #[test]
    fn rejects_non_unit_and_bad_weights() {
        assert!(matches!(
            SpectralMeasure::new(2, vec![atom(&[2.0, 0.0], 1.0), atom(&[-2.0, 0.0], 1.0)]),
            Err(Error::MalformedMeasure(_))
        ));
        assert!(matches!(
            SpectralMeasure::new(2, vec![atom(&[1.0, 0.0], 0.0), atom(&[-1.0, 0.0], 0.0)]),
            Err(Error::MalformedMeasure(_))
        ));
    }

    #[test]
    fn pairs_duplicate_directions() {
        let mu = SpectralMeasure::new(
            1,
            vec![atom(&[1.0], 1.0), atom(&[1.0], 2.0), atom(&[-1.0], 2.0), atom(&[-1.0], 1.0)],
        )
        .unwrap();
        assert_eq!(mu.pairs().len(), 2);
        for &(i, j) in mu.pairs() {
            assert_eq!(mu.atoms()[i].weight, mu.atoms()[j].weight);
        }
    }

    #[test]
    fn json_normalizes_directions() {
        let js = r#"{"alpha": 1.5, "atoms": [{"dir": [3, 4], "w": 1}, {"dir": [-3, -4], "w": 1}]}"#;
        let spec: NoiseSpec = serde_json::from_str(js).unwrap();
        let (mu, a) = spec.build().unwrap();
        assert_eq!(a.value(), 1.5);
        assert!((mu.atoms()[0].dir[0] - 0.6).abs() < 1e-15);
        let back = NoiseSpec::from_measure(&mu, a);
        assert_eq!(back.build().unwrap().0, mu);
    }

    #[test]
    fn json_rejects_asymmetry_and_bad_alpha() {
        let js = r#"{"alpha": 1.5, "atoms": [{"dir": [1, 0], "w": 1}, {"dir": [-1, 0], "w": 2}]}"#;
        let spec: NoiseSpec = serde_json::from_str(js).unwrap();
        assert!(matches!(spec.build(), Err(Error::AsymmetricMeasure(_))));
        let js = r#"{"alpha": 0.9, "atoms": [{"dir": [1, 0], "w": 1}, {"dir": [-1, 0], "w": 1}]}"#;
        let spec: NoiseSpec = serde_json::from_str(js).unwrap();
        assert!(matches!(spec.build(), Err(Error::InvalidStabilityIndex(_))));
    }

    #[test]
    fn merge_combines_coincident_lines() {
        let mu = SpectralMeasure::from_pairs(
            2,
            vec![(vec![1.0, 0.0], 1.0), (vec![-1.0, 1e-12], 0.5), (vec![0.0, 1.0], 2.0)],
        )
        .unwrap();
        let m = mu.merged(1e-9).unwrap();
        assert_eq!(m.pairs().len(), 2);
        assert!((m.total_mass() - mu.total_mass()).abs() < 1e-12);
        assert!((m.atoms()[0].weight - 1.5).abs() < 1e-15);
    }

    #[test]
    fn pushforward_identity_and_orthogonal() {
        let a = StabilityIndex::new(1.5).unwrap();
        let mu = SpectralMeasure::from_pairs(2, vec![(vec![1.0, 0.0], 1.0), (vec![0.6, 0.8], 0.3)])
            .unwrap();
        let id = DMatrix::<f64>::identity(2, 2);
        assert_eq!(pushforward(&mu, a, &id).unwrap(), mu);
        let (s, c) = (0.3f64.sin(), 0.3f64.cos());
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let pf = pushforward(&mu, a, &rot).unwrap();
        for (p, q) in pf.atoms().iter().zip(mu.atoms()) {
            assert!((p.weight - q.weight).abs() < 1e-12);
            let want = [c * q.dir[0] - s * q.dir[1], s * q.dir[0] + c * q.dir[1]];
            assert!((p.dir[0] - want[0]).abs() < 1e-12 && (p.dir[1] - want[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn pushforward_scalar_multiple() {
        let a = StabilityIndex::new(1.5).unwrap();
        let mu = SpectralMeasure::from_pairs(2, vec![(vec![1.0, 0.0], 1.0), (vec![0.0, 1.0], 2.0)])
            .unwrap();
        let f = DMatrix::<f64>::identity(2, 2) * 3.0;
        let pf = pushforward(&mu, a, &f).unwrap();
        for (p, q) in pf.atoms().iter().zip(mu.atoms()) {
            assert!((p.weight - q.weight * 3f64.powf(1.5)).abs() < 1e-12);
            assert_eq!(p.dir, q.dir);
        }
    }

    #[test]
    fn pushforward_rejects_singular() {
        let a = StabilityIndex::new(1.5).unwrap();
        let mu = SpectralMeasure::from_pairs(2, vec![(vec![1.0, 0.0], 1.0)]).unwrap();
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(pushforward(&mu, a, &f), Err(Error::SingularMatrix(_))));
    }

    #[test]
    fn pushforward_is_functorial() {
        let a = StabilityIndex::new(1.3).unwrap();
        let mu = SpectralMeasure::from_pairs(
            2,
            vec![(vec![1.0, 0.0], 1.0), (vec![0.6, 0.8], 0.4), (vec![-0.2, 1.0], 0.9)],
        )
        .unwrap();
        let f = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, -0.1, 0.7]);
        let g = DMatrix::from_row_slice(2, 2, &[0.5, -1.2, 0.4, 1.1]);
        let two_step = pushforward(&pushforward(&mu, a, &f).unwrap(), a, &g).unwrap();
        let one_step = pushforward(&mu, a, &(&g * &f)).unwrap();
        for (p, q) in two_step.atoms().iter().zip(one_step.atoms()) {
            assert!((p.weight - q.weight).abs() < 1e-10 * q.weight.max(1.0));
            assert!(dist(&p.dir, &q.dir) < 1e-12);
        }
    }
}
