//! Dense complex-matrix checks for sequential projective measurements.
//!
//! For rank-1 projector families `P` and `Q`, the sequence probabilities
//! `Pr{p_j & q_k} = Tr(ρ Λp Λq Λp)` are symmetric in the order of the two
//! measurements for every state exactly when every `Λp_j` commutes with
//! every `Λq_k`.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::montecarlo::seeded_stream;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const MAX_DIM: usize = 8;
pub const FAMILY_TOL: f64 = 1e-12;
pub const DENSITY_PSD_TOL: f64 = -1e-10;
pub const IMAG_TOL: f64 = 1e-10;
pub const COMMUTE_TOL: f64 = 1e-10;
pub const NONCOMMUTE_TOL: f64 = 1e-6;
pub const SYMMETRY_TOL: f64 = 1e-9;
pub const WITNESS_TOL: f64 = 1e-8;
pub const UNIT_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("dimension {0} outside 1..={MAX_DIM}")]
    BadDimension(usize),
    #[error("matrix has a non-finite entry")]
    NonFinite,
    #[error("not a projector family: {0}")]
    NotProjectorFamily(String),
    #[error("not a density operator: {0}")]
    NotDensity(String),
    #[error("state is not a unit vector (norm {0})")]
    NotUnit(f64),
    #[error("probability has imaginary part {0}")]
    Complex(f64),
    #[error("projector index {index} out of range for dimension {dim}")]
    Index { index: usize, dim: usize },
}

fn c(re: f64) -> C64 {
    Complex::new(re, 0.0)
}

fn check_dim(d: usize) -> Result<(), QuantumError> {
    if (1..=MAX_DIM).contains(&d) {
        Ok(())
    } else {
        Err(QuantumError::BadDimension(d))
    }
}

fn check_finite(m: &CMatrix) -> Result<(), QuantumError> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(QuantumError::NonFinite)
    }
}

/// Rank-1 projectors onto an orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorFamily {
    basis: Vec<CVector>,
    projectors: Vec<CMatrix>,
}

impl ProjectorFamily {
    /// Projectors `|b_j⟩⟨b_j|` onto the columns of `u`.
    pub fn from_columns(u: &CMatrix) -> Result<Self, QuantumError> {
        let d = u.nrows();
        check_dim(d)?;
        if u.ncols() != d {
            return Err(QuantumError::Dimension {
                expected: d,
                found: u.ncols(),
            });
        }
        check_finite(u)?;
        let basis: Vec<CVector> = (0..d).map(|j| u.column(j).into_owned()).collect();
        let projectors: Vec<CMatrix> = basis.iter().map(|b| b * b.adjoint()).collect();
        let sum = projectors.iter().fold(CMatrix::zeros(d, d), |acc, p| acc + p);
        let off = (sum - CMatrix::identity(d, d)).norm();
        if off > FAMILY_TOL {
            return Err(QuantumError::NotProjectorFamily(format!("sum differs from identity by {off:e}")));
        }
        for (j, pj) in projectors.iter().enumerate() {
            for (k, pk) in projectors.iter().enumerate() {
                let want = if j == k { pj.clone() } else { CMatrix::zeros(d, d) };
                let err = (pj * pk - want).norm();
                if err > FAMILY_TOL {
                    return Err(QuantumError::NotProjectorFamily(format!(
                        "Λ{j} Λ{k} is off by {err:e}"
                    )));
                }
            }
        }
        Ok(ProjectorFamily { basis, projectors })
    }

    pub fn standard(d: usize) -> Result<Self, QuantumError> {
        check_dim(d)?;
        Self::from_columns(&CMatrix::identity(d, d))
    }

    /// `{cos θ |0⟩ + sin θ |1⟩, -sin θ |0⟩ + cos θ |1⟩}`.
    pub fn rotated_qubit(theta: f64) -> Self {
        let (s, co) = theta.sin_cos();
        let u = CMatrix::from_row_slice(2, 2, &[c(co), c(-s), c(s), c(co)]);
        Self::from_columns(&u).expect("rotation is unitary")
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn vector(&self, j: usize) -> &CVector {
        &self.basis[j]
    }

    pub fn projector(&self, j: usize) -> &CMatrix {
        &self.projectors[j]
    }

    pub fn projectors(&self) -> &[CMatrix] {
        &self.projectors
    }

    fn get(&self, j: usize) -> Result<&CMatrix, QuantumError> {
        self.projectors.get(j).ok_or(QuantumError::Index {
            index: j,
            dim: self.dim(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator(CMatrix);

impl DensityOperator {
    pub fn new(m: CMatrix) -> Result<Self, QuantumError> {
        let d = m.nrows();
        check_dim(d)?;
        if m.ncols() != d {
            return Err(QuantumError::Dimension {
                expected: d,
                found: m.ncols(),
            });
        }
        check_finite(&m)?;
        let herm = (&m - m.adjoint()).norm();
        if herm > FAMILY_TOL {
            return Err(QuantumError::NotDensity(format!("not hermitian ({herm:e})")));
        }
        let tr = m.trace();
        if (tr - c(1.0)).norm() > FAMILY_TOL {
            return Err(QuantumError::NotDensity(format!("trace is {tr}")));
        }
        let min = m
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min < DENSITY_PSD_TOL {
            return Err(QuantumError::NotDensity(format!("eigenvalue {min:e} is negative")));
        }
        Ok(DensityOperator(m))
    }

    pub fn pure(psi: &CVector) -> Result<Self, QuantumError> {
        let n = psi.norm();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(QuantumError::NotUnit(n));
        }
        Self::new(psi * psi.adjoint())
    }

    pub fn maximally_mixed(d: usize) -> Result<Self, QuantumError> {
        check_dim(d)?;
        Self::new(CMatrix::identity(d, d) / c(d as f64))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// `Tr(K ρ K†)` with `K = Λn ⋯ Λ1`; the first projector acts first.
pub fn sandwich_prob(rho: &DensityOperator, projectors: &[&CMatrix]) -> Result<f64, QuantumError> {
    let d = rho.dim();
    let mut k = CMatrix::identity(d, d);
    for p in projectors {
        if p.nrows() != d || p.ncols() != d {
            return Err(QuantumError::Dimension {
                expected: d,
                found: p.nrows(),
            });
        }
        k = *p * k;
    }
    let v = (&k * rho.matrix() * k.adjoint()).trace();
    if v.im.abs() > IMAG_TOL {
        return Err(QuantumError::Complex(v.im));
    }
    Ok(v.re.clamp(0.0, 1.0))
}

/// `Pr{p_j & q_k}`: `P` measured first.
pub fn two_step(
    rho: &DensityOperator,
    p: &ProjectorFamily,
    j: usize,
    q: &ProjectorFamily,
    k: usize,
) -> Result<f64, QuantumError> {
    sandwich_prob(rho, &[p.get(j)?, q.get(k)?])
}

/// Largest Frobenius norm of `[Λp_j, Λq_k]`.
pub fn max_commutator_norm(p: &ProjectorFamily, q: &ProjectorFamily) -> f64 {
    p.projectors()
        .iter()
        .flat_map(|a| q.projectors().iter().map(move |b| (a * b - b * a).norm()))
        .fold(0.0, f64::max)
}

/// Largest `|Pr{p_j & q_k} - Pr{q_k & p_j}|` over `j, k`.
pub fn order_asymmetry(rho: &DensityOperator, p: &ProjectorFamily, q: &ProjectorFamily) -> Result<f64, QuantumError> {
    let mut worst = 0.0f64;
    for j in 0..p.dim() {
        for k in 0..q.dim() {
            let a = two_step(rho, p, j, q, k)?;
            let b = two_step(rho, q, k, p, j)?;
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// A state exposing order dependence: `Pr{p_j & q_k} ≠ Pr{q_k & p_j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub j: usize,
    pub k: usize,
    pub state: Vec<(f64, f64)>,
    pub asymmetry: f64,
}

/// Searches pure states: for each `(j, k)` the order difference is
/// `⟨v|D|v⟩` with `D = Λp Λq Λp - Λq Λp Λq`, maximised in magnitude by the
/// eigenvector of the extreme eigenvalue.
pub fn find_witness(p: &ProjectorFamily, q: &ProjectorFamily) -> Result<Option<Witness>, QuantumError> {
    let mut best: Option<Witness> = None;
    for j in 0..p.dim() {
        for k in 0..q.dim() {
            let (a, b) = (p.projector(j), q.projector(k));
            let dmat = a * b * a - b * a * b;
            let eig = dmat.symmetric_eigen();
            let (idx, _) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |acc, (i, &l)| if l.abs() > acc.1 { (i, l.abs()) } else { acc });
            let v = eig.eigenvectors.column(idx).into_owned();
            let rho = DensityOperator::pure(&(&v / c(v.norm())))?;
            let asym = (two_step(&rho, p, j, q, k)? - two_step(&rho, q, k, p, j)?).abs();
            if best.as_ref().is_none_or(|w| asym > w.asymmetry) {
                best = Some(Witness {
                    j,
                    k,
                    state: v.iter().map(|z| (z.re, z.im)).collect(),
                    asymmetry: asym,
                });
            }
        }
    }
    Ok(best)
}

fn gaussian_matrix<R: RngCore>(d: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(d, d, |_, _| {
        Complex::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    })
}

/// Unitary from the QR factors of a complex Gaussian matrix.
pub fn random_unitary<R: RngCore>(d: usize, rng: &mut R) -> CMatrix {
    gaussian_matrix(d, rng).qr().q()
}

pub fn random_pure<R: RngCore>(d: usize, rng: &mut R) -> CVector {
    let v = CVector::from_fn(d, |_, _| {
        Complex::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let n = v.norm();
    v / c(n)
}

/// `G G† / Tr(G G†)` for a Gaussian `G`: full rank with probability one.
pub fn random_mixed<R: RngCore>(d: usize, rng: &mut R) -> DensityOperator {
    let g = gaussian_matrix(d, rng);
    let m = &g * g.adjoint();
    let tr = m.trace();
    let mut m = m / tr;
    let h = (&m + m.adjoint()) / c(2.0);
    m.copy_from(&h);
    DensityOperator::new(m).expect("normalized Gram matrix is a state")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Identical,
    PermutedPhases,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Compatible,
    Incompatible,
    Gray,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzFailure {
    pub dim: usize,
    pub trial: usize,
    pub kind: PairKind,
    pub commutator_norm: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DimSummary {
    pub dim: usize,
    pub trials: usize,
    pub compatible: usize,
    pub incompatible: usize,
    pub gray: usize,
    pub failures: usize,
    pub max_compatible_asymmetry: f64,
    pub min_witness_asymmetry: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub seed: u64,
    pub per_dim: Vec<DimSummary>,
    pub failures: Vec<FuzzFailure>,
}

impl FuzzReport {
    pub fn total_failures(&self) -> usize {
        self.failures.len()
    }
}

fn probe_states<R: RngCore>(
    p: &ProjectorFamily,
    q: &ProjectorFamily,
    rng: &mut R,
) -> Result<Vec<DensityOperator>, QuantumError> {
    let d = p.dim();
    let mut out = vec![DensityOperator::maximally_mixed(d)?];
    for f in [p, q] {
        for j in 0..d {
            out.push(DensityOperator::pure(f.vector(j))?);
        }
    }
    for _ in 0..4 {
        out.push(DensityOperator::pure(&random_pure(d, rng))?);
        out.push(random_mixed(d, rng));
    }
    Ok(out)
}

fn pair<R: RngCore>(d: usize, kind: PairKind, rng: &mut R) -> Result<(ProjectorFamily, ProjectorFamily), QuantumError> {
    let u = random_unitary(d, rng);
    let v = match kind {
        PairKind::Identical => u.clone(),
        PairKind::PermutedPhases => {
            let mut perm: Vec<usize> = (0..d).collect();
            crate::montecarlo::shuffle(&mut perm, rng);
            let phases: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
            CMatrix::from_fn(d, d, |r, col| u[(r, perm[col])] * C64::from_polar(1.0, phases[col]))
        }
        PairKind::Random => random_unitary(d, rng),
    };
    Ok((ProjectorFamily::from_columns(&u)?, ProjectorFamily::from_columns(&v)?))
}

/// Classifies one pair by its commutator norm and checks the matching side
/// of the equivalence.
pub fn classify_pair<R: RngCore>(
    p: &ProjectorFamily,
    q: &ProjectorFamily,
    rng: &mut R,
) -> Result<(Classification, f64, Result<f64, String>), QuantumError> {
    let norm = max_commutator_norm(p, q);
    if norm < COMMUTE_TOL {
        let mut worst = 0.0f64;
        for rho in probe_states(p, q, rng)? {
            worst = worst.max(order_asymmetry(&rho, p, q)?);
        }
        let verdict = if worst < SYMMETRY_TOL {
            Ok(worst)
        } else {
            Err(format!("commuting pair shows asymmetry {worst:e}"))
        };
        Ok((Classification::Compatible, norm, verdict))
    } else if norm > NONCOMMUTE_TOL {
        let verdict = match find_witness(p, q)? {
            Some(w) if w.asymmetry > WITNESS_TOL => Ok(w.asymmetry),
            Some(w) => Err(format!("best witness asymmetry only {:e}", w.asymmetry)),
            None => Err("no witness".into()),
        };
        Ok((Classification::Incompatible, norm, verdict))
    } else {
        Ok((Classification::Gray, norm, Ok(0.0)))
    }
}

/// Random basis pairs per dimension: a third identical, a third related by a
/// permutation with phases, the rest independent.
pub fn theorem_fuzz(dims: &[usize], trials: usize, seed: u64) -> Result<FuzzReport, QuantumError> {
    let mut per_dim = Vec::new();
    let mut failures = Vec::new();
    for &d in dims {
        check_dim(d)?;
        let mut rng = seeded_stream(seed, d as u64);
        let mut s = DimSummary {
            dim: d,
            trials,
            ..Default::default()
        };
        for trial in 0..trials {
            let kind = match trial % 3 {
                0 => PairKind::Identical,
                1 => PairKind::PermutedPhases,
                _ => PairKind::Random,
            };
            let (p, q) = pair(d, kind, &mut rng)?;
            let (class, norm, verdict) = classify_pair(&p, &q, &mut rng)?;
            match class {
                Classification::Compatible => s.compatible += 1,
                Classification::Incompatible => s.incompatible += 1,
                Classification::Gray => s.gray += 1,
            }
            match verdict {
                Ok(a) if class == Classification::Compatible => {
                    s.max_compatible_asymmetry = s.max_compatible_asymmetry.max(a)
                }
                Ok(a) if class == Classification::Incompatible => {
                    s.min_witness_asymmetry = Some(s.min_witness_asymmetry.map_or(a, |m| m.min(a)))
                }
                Ok(_) => {}
                Err(detail) => {
                    s.failures += 1;
                    failures.push(FuzzFailure {
                        dim: d,
                        trial,
                        kind,
                        commutator_norm: norm,
                        detail,
                    });
                }
            }
        }
        per_dim.push(s);
    }
    Ok(FuzzReport { seed, per_dim, failures })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margenau {
    /// `Σ_t |⟨q_k|p_t⟩|² |⟨p_t|Ψ⟩|²`
    pub lhs: f64,
    /// `Tr(ρ_P(Ψ) Λq_k)` after dephasing in `P`.
    pub dephased: f64,
    /// `|⟨q_k|Ψ⟩|²`
    pub direct: f64,
}

impl Margenau {
    pub fn identity_holds(&self) -> bool {
        (self.lhs - self.dephased).abs() <= UNIT_TOL
    }

    pub fn gap(&self) -> f64 {
        self.lhs - self.direct
    }
}

pub fn margenau_check(
    psi: &CVector,
    p: &ProjectorFamily,
    q: &ProjectorFamily,
    k: usize,
) -> Result<Margenau, QuantumError> {
    let d = p.dim();
    if psi.len() != d || q.dim() != d {
        return Err(QuantumError::Dimension {
            expected: d,
            found: psi.len().max(q.dim()),
        });
    }
    let n = psi.norm();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(QuantumError::NotUnit(n));
    }
    let qk = q.vector(k);
    let lhs = (0..d)
        .map(|t| {
            let pt = p.vector(t);
            qk.dotc(pt).norm_sqr() * pt.dotc(psi).norm_sqr()
        })
        .sum();
    let pure = psi * psi.adjoint();
    let dephased_state = p
        .projectors()
        .iter()
        .fold(CMatrix::zeros(d, d), |acc, l| acc + l * &pure * l);
    let dephased = (dephased_state * q.get(k)?).trace().re;
    let direct = qk.dotc(psi).norm_sqr();
    Ok(Margenau { lhs, dephased, direct })
}

/// `(|0⟩ + |1⟩)/√2`.
pub fn plus_state() -> CVector {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    CVector::from_vec(vec![c(h), c(h)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn same_basis_repeats() {
        let z = ProjectorFamily::standard(2).unwrap();
        let rho = DensityOperator::pure(z.vector(0)).unwrap();
        assert!((two_step(&rho, &z, 0, &z, 0).unwrap() - 1.0).abs() < 1e-12);
        assert!(two_step(&rho, &z, 0, &z, 1).unwrap().abs() < 1e-12);
    }

    #[test]
    fn order_dependence_on_a_qubit() {
        let z = ProjectorFamily::standard(2).unwrap();
        let x = ProjectorFamily::rotated_qubit(FRAC_PI_4);
        let rho = DensityOperator::pure(z.vector(0)).unwrap();
        assert!((two_step(&rho, &z, 0, &x, 0).unwrap() - 0.5).abs() < 1e-12);
        assert!((two_step(&rho, &x, 0, &z, 0).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn maximally_mixed_is_symmetric() {
        let mut rng = seeded_stream(4, 0);
        for d in 2..=4 {
            let p = ProjectorFamily::from_columns(&random_unitary(d, &mut rng)).unwrap();
            let q = ProjectorFamily::from_columns(&random_unitary(d, &mut rng)).unwrap();
            let rho = DensityOperator::maximally_mixed(d).unwrap();
            for j in 0..d {
                for k in 0..d {
                    let overlap = q.vector(k).dotc(p.vector(j)).norm_sqr() / d as f64;
                    assert!((two_step(&rho, &p, j, &q, k).unwrap() - overlap).abs() < 1e-12);
                    assert!((two_step(&rho, &q, k, &p, j).unwrap() - overlap).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn validation() {
        let bad = CMatrix::from_row_slice(2, 2, &[c(1.0), c(1.0), c(0.0), c(1.0)]);
        assert!(matches!(
            ProjectorFamily::from_columns(&bad),
            Err(QuantumError::NotProjectorFamily(_))
        ));
        let neg = CMatrix::from_row_slice(2, 2, &[c(1.5), c(0.0), c(0.0), c(-0.5)]);
        assert!(matches!(DensityOperator::new(neg), Err(QuantumError::NotDensity(_))));
        assert!(matches!(
            DensityOperator::new(CMatrix::identity(2, 2)),
            Err(QuantumError::NotDensity(_))
        ));
        assert!(matches!(ProjectorFamily::standard(9), Err(QuantumError::BadDimension(9))));
        let z = ProjectorFamily::standard(2).unwrap();
        let rho3 = DensityOperator::maximally_mixed(3).unwrap();
        assert!(matches!(
            sandwich_prob(&rho3, &[z.projector(0)]),
            Err(QuantumError::Dimension { .. })
        ));
    }

    #[test]
    fn pair_kinds_classify() {
        let mut rng = seeded_stream(8, 1);
        for (kind, want) in [
            (PairKind::Identical, Classification::Compatible),
            (PairKind::PermutedPhases, Classification::Compatible),
            (PairKind::Random, Classification::Incompatible),
        ] {
            let (p, q) = pair(3, kind, &mut rng).unwrap();
            let (class, _, verdict) = classify_pair(&p, &q, &mut rng).unwrap();
            assert_eq!(class, want);
            assert!(verdict.is_ok());
        }
    }

    #[test]
    fn small_fuzz_is_clean() {
        let r = theorem_fuzz(&[2, 3], 30, 1).unwrap();
        assert_eq!(r.total_failures(), 0);
        assert!(r.per_dim.iter().all(|s| s.compatible >= 20 && s.incompatible >= 9));
    }

    #[test]
    fn margenau_gap() {
        let z = ProjectorFamily::standard(2).unwrap();
        let x = ProjectorFamily::rotated_qubit(FRAC_PI_4);
        let m = margenau_check(&plus_state(), &z, &x, 0).unwrap();
        assert!((m.lhs - 0.5).abs() < 1e-10);
        assert!((m.dephased - 0.5).abs() < 1e-10);
        assert!((m.direct - 1.0).abs() < 1e-10);
        let sharp = margenau_check(z.vector(1), &z, &x, 0).unwrap();
        assert!((sharp.lhs - sharp.direct).abs() < 1e-12);
        let same = margenau_check(&plus_state(), &x, &x, 1).unwrap();
        assert!((same.lhs - same.direct).abs() < 1e-12);
        let long = CVector::from_vec(vec![c(1.0), c(1.0)]);
        assert!(matches!(margenau_check(&long, &z, &x, 0), Err(QuantumError::NotUnit(_))));
    }
}
