//! Dense complex operators carrying an ordered list of labelled legs.
//!
//! Every state, channel Choi matrix and process tensor in the crate is a
//! [`LabelledOperator`]. The matrix index is big-endian in the leg list: the
//! first leg is the most significant index block, so for legs `[a, b]` the
//! basis element `|i_a i_b>` sits at row `i_a * dim_b + i_b`.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Tolerance used when a Hermiticity flag is asserted.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Eigenvalues below this are treated as zero in entropy evaluations.
pub const EIGEN_FLOOR: f64 = 1e-12;
/// Mass of `rho` on the numerical kernel of `sigma` that is tolerated.
pub const SUPPORT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Site {
    Qubit(u32),
    Defect(u32),
}

/// Output legs (`o_j`) carry what the process emits at time `t_j`; input legs
/// (`i_j`) carry what is fed back in at `t_{j-1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Out,
    In,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LegLabel {
    pub site: Site,
    pub time: u32,
    pub direction: Direction,
    pub dim: usize,
}

impl LegLabel {
    pub fn out(qubit: u32, time: u32) -> Self {
        Self { site: Site::Qubit(qubit), time, direction: Direction::Out, dim: 2 }
    }

    pub fn input(qubit: u32, time: u32) -> Self {
        Self { site: Site::Qubit(qubit), time, direction: Direction::In, dim: 2 }
    }

    /// Leg of a defect's Hilbert space, used for joint register/bath operators.
    pub fn defect(id: u32) -> Self {
        Self { site: Site::Defect(id), time: 0, direction: Direction::Out, dim: 2 }
    }

    /// Identity of the leg, ignoring its dimension.
    pub fn key(&self) -> (Site, u32, Direction) {
        (self.site, self.time, self.direction)
    }
}

impl fmt::Display for LegLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.direction {
            Direction::Out => 'o',
            Direction::In => 'i',
        };
        match self.site {
            Site::Qubit(q) => write!(f, "q{q}:{dir}{}", self.time),
            Site::Defect(d) => write!(f, "d{d}:{dir}{}", self.time),
        }
    }
}

pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    strides
}

/// Linear offsets of every multi-index over `positions`, enumerated
/// big-endian in the order the positions are given.
pub(crate) fn index_offsets(dims: &[usize], positions: &[usize]) -> Vec<usize> {
    let strides = strides(dims);
    let mut out = vec![0usize];
    for &p in positions {
        let mut next = Vec::with_capacity(out.len() * dims[p]);
        for &o in &out {
            for i in 0..dims[p] {
                next.push(o + i * strides[p]);
            }
        }
        out = next;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelledOperator {
    data: CMatrix,
    legs: Vec<LegLabel>,
    hermitian: bool,
}

impl LabelledOperator {
    pub fn new(data: CMatrix, legs: Vec<LegLabel>) -> Result<Self> {
        let dim: usize = legs.iter().map(|l| l.dim).product();
        if data.nrows() != dim || data.ncols() != dim {
            return Err(Error::Shape(format!(
                "matrix is {}x{} but legs imply dimension {dim}",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some(l) = legs.iter().find(|l| l.dim < 2) {
            return Err(Error::Shape(format!("leg {l} has dimension {} < 2", l.dim)));
        }
        let mut seen = HashSet::new();
        for l in &legs {
            if !seen.insert(l.key()) {
                return Err(Error::DuplicateLeg(*l));
            }
        }
        Ok(Self { data, legs, hermitian: false })
    }

    /// Construct and certify Hermiticity to [`HERMITIAN_TOL`].
    pub fn new_hermitian(data: CMatrix, legs: Vec<LegLabel>) -> Result<Self> {
        let mut op = Self::new(data, legs)?;
        let deviation = op.hermiticity_deviation();
        if deviation > HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation });
        }
        op.hermitian = true;
        Ok(op)
    }

    /// Symmetrise `(A + A^dag) / 2` and mark the result Hermitian.
    pub fn hermitian_part(&self) -> Self {
        let data = (&self.data + self.data.adjoint()) * C64::new(0.5, 0.0);
        Self { data, legs: self.legs.clone(), hermitian: true }
    }

    pub fn identity(legs: Vec<LegLabel>) -> Result<Self> {
        let dim: usize = legs.iter().map(|l| l.dim).product();
        Self::new_hermitian(CMatrix::identity(dim, dim), legs)
    }

    pub fn data(&self) -> &CMatrix {
        &self.data
    }

    pub fn into_data(self) -> CMatrix {
        self.data
    }

    pub fn legs(&self) -> &[LegLabel] {
        &self.legs
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn dims(&self) -> Vec<usize> {
        self.legs.iter().map(|l| l.dim).collect()
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.data.trace()
    }

    pub fn real_trace(&self) -> f64 {
        self.data.trace().re
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.data[(i, j)] - self.data[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn position(&self, leg: &LegLabel) -> Option<usize> {
        self.legs.iter().position(|l| l.key() == leg.key())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            data: &self.data * C64::new(factor, 0.0),
            legs: self.legs.clone(),
            hermitian: self.hermitian,
        }
    }

    /// Copy rescaled to unit trace.
    pub fn normalized(&self) -> Self {
        self.scaled(1.0 / self.real_trace())
    }

    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        (&self.data - &other.data).norm()
    }

    pub fn max_abs_distance(&self, other: &Self) -> f64 {
        (&self.data - &other.data).iter().fold(0.0f64, |m, z| m.max(z.norm()))
    }

    /// Replace the data while keeping legs, e.g. after an elementwise update.
    pub fn with_data(&self, data: CMatrix) -> Result<Self> {
        Self::new(data, self.legs.clone())
    }

    pub fn tensor_product(&self, other: &Self) -> Result<Self> {
        let mut legs = self.legs.clone();
        legs.extend_from_slice(&other.legs);
        let data = self.data.kronecker(&other.data);
        let mut op = Self::new(data, legs)?;
        op.hermitian = self.hermitian && other.hermitian;
        Ok(op)
    }

    /// Trace out `drop`; the remaining legs keep their relative order.
    pub fn partial_trace(&self, drop: &[LegLabel]) -> Result<Self> {
        let mut drop_pos = Vec::with_capacity(drop.len());
        for leg in drop {
            let p = self.position(leg).ok_or(Error::UnknownLeg(*leg))?;
            if drop_pos.contains(&p) {
                return Err(Error::DuplicateLeg(*leg));
            }
            drop_pos.push(p);
        }
        let keep_pos: Vec<usize> = (0..self.legs.len()).filter(|p| !drop_pos.contains(p)).collect();
        let dims = self.dims();
        let kept = index_offsets(&dims, &keep_pos);
        let traced = index_offsets(&dims, &drop_pos);
        let n = kept.len();
        let data = CMatrix::from_fn(n, n, |i, j| {
            traced.iter().map(|&t| self.data[(kept[i] + t, kept[j] + t)]).sum()
        });
        let legs = keep_pos.iter().map(|&p| self.legs[p]).collect();
        let mut op = Self::new(data, legs)?;
        op.hermitian = self.hermitian;
        Ok(op)
    }

    /// Keep only `keep` (in the operator's existing order) by tracing the rest.
    pub fn reduce_to(&self, keep: &[LegLabel]) -> Result<Self> {
        for leg in keep {
            self.position(leg).ok_or(Error::UnknownLeg(*leg))?;
        }
        let drop: Vec<LegLabel> = self
            .legs
            .iter()
            .filter(|l| !keep.iter().any(|k| k.key() == l.key()))
            .copied()
            .collect();
        self.partial_trace(&drop)
    }

    /// Re-index so that the leg list equals `order`.
    pub fn permute_legs(&self, order: &[LegLabel]) -> Result<Self> {
        if order.len() != self.legs.len() {
            return Err(Error::NotPermutation);
        }
        let mut perm = Vec::with_capacity(order.len());
        for leg in order {
            let p = self.position(leg).ok_or(Error::NotPermutation)?;
            if perm.contains(&p) {
                return Err(Error::NotPermutation);
            }
            perm.push(p);
        }
        let map = index_offsets(&self.dims(), &perm);
        let n = map.len();
        let data = CMatrix::from_fn(n, n, |i, j| self.data[(map[i], map[j])]);
        let legs = perm.iter().map(|&p| self.legs[p]).collect();
        Ok(Self { data, legs, hermitian: self.hermitian })
    }

    pub fn eigh(&self) -> Result<SpectralDecomposition> {
        let deviation = self.hermiticity_deviation();
        if deviation > 1e-9 {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(SpectralDecomposition::of_hermitian(&self.data))
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigh()?.eigenvalues.first().copied().unwrap_or(0.0))
    }
}

#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Columns are the matching eigenvectors.
    pub eigenvectors: CMatrix,
}

impl SpectralDecomposition {
    /// Decompose the Hermitian part of `m`.
    pub fn of_hermitian(m: &CMatrix) -> Self {
        let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(h);
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let eigenvectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Self { eigenvalues, eigenvectors }
    }

    /// `V f(Lambda) V^dag`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (c, &lam) in self.eigenvalues.iter().enumerate() {
            let w = C64::new(f(lam), 0.0);
            scaled.column_mut(c).scale_mut_complex(w);
        }
        scaled * v.adjoint()
    }

    pub fn reconstruct(&self) -> CMatrix {
        self.map_spectrum(|x| x)
    }
}

trait ScaleComplex {
    fn scale_mut_complex(&mut self, w: C64);
}

impl<S> ScaleComplex for nalgebra::Matrix<C64, nalgebra::Dyn, nalgebra::U1, S>
where
    S: nalgebra::StorageMut<C64, nalgebra::Dyn, nalgebra::U1>,
{
    fn scale_mut_complex(&mut self, w: C64) {
        for z in self.iter_mut() {
            *z *= w;
        }
    }
}

/// `S[rho || sigma] = Tr rho (log2 rho - log2 sigma)` evaluated on unit-trace
/// copies of both arguments.
///
/// Eigenvalues of `rho` below [`EIGEN_FLOOR`] contribute nothing. Eigenvalues
/// of `sigma` below the floor are raised to it unless `rho` puts more than
/// [`SUPPORT_TOL`] weight on them, which is reported as a support error.
pub fn relative_entropy(rho: &LabelledOperator, sigma: &LabelledOperator) -> Result<f64> {
    relative_entropy_impl(rho, sigma, true)
}

/// [`relative_entropy`] for pairs whose support inclusion is known exactly
/// (an operator against a product of its own marginals): `sigma` is floored
/// without the support check, which near-degenerate null spaces can trip
/// through roundoff alone.
pub fn relative_entropy_within_support(rho: &LabelledOperator, sigma: &LabelledOperator) -> Result<f64> {
    relative_entropy_impl(rho, sigma, false)
}

fn relative_entropy_impl(rho: &LabelledOperator, sigma: &LabelledOperator, check_support: bool) -> Result<f64> {
    if rho.legs().iter().map(LegLabel::key).ne(sigma.legs().iter().map(LegLabel::key)) {
        return Err(Error::Shape("relative entropy arguments have different legs".into()));
    }
    let (tr_rho, tr_sigma) = (rho.real_trace(), sigma.real_trace());
    if tr_rho <= 0.0 || tr_sigma <= 0.0 {
        return Err(Error::Shape("relative entropy needs positive traces".into()));
    }
    if ((tr_rho - tr_sigma) / tr_rho).abs() > 1e-8 {
        return Err(Error::Shape(format!(
            "relative entropy arguments differ in trace ({tr_rho} vs {tr_sigma})"
        )));
    }
    let r = rho.normalized().eigh()?;
    let s = sigma.normalized().eigh()?;

    let neg_entropy: f64 = r
        .eigenvalues
        .iter()
        .filter(|&&l| l > EIGEN_FLOOR)
        .map(|&l| l * l.log2())
        .sum();

    // overlap[i][j] = |<r_i|s_j>|^2
    let overlap = r.eigenvectors.adjoint() * &s.eigenvectors;
    let mut cross = 0.0;
    for (j, &mu) in s.eigenvalues.iter().enumerate() {
        let mass: f64 = r
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > EIGEN_FLOOR)
            .map(|(i, &l)| l * overlap[(i, j)].norm_sqr())
            .sum();
        if check_support && mu < EIGEN_FLOOR && mass > SUPPORT_TOL {
            return Err(Error::Support { eigenvalue: mu, mass });
        }
        cross += mass * mu.max(EIGEN_FLOOR).log2();
    }
    Ok(neg_entropy - cross)
}

/// Frobenius-nearest positive semidefinite operator: clip the spectrum at 0.
pub fn project_psd(a: &LabelledOperator) -> Result<LabelledOperator> {
    let deviation = a.hermiticity_deviation();
    if deviation > 1e-9 {
        return Err(Error::NotHermitian { deviation });
    }
    let spec = SpectralDecomposition::of_hermitian(a.data());
    if spec.eigenvalues.first().is_none_or(|&l| l >= 0.0) {
        return Ok(a.hermitian_part());
    }
    let data = spec.map_spectrum(|x| x.max(0.0));
    Ok(LabelledOperator::new(data, a.legs().to_vec())?.hermitian_part())
}

/// Random matrices for fuzzing and property tests.
pub mod random {
    use rand::Rng;

    use super::{CMatrix, C64};

    /// Standard normal deviate (Box-Muller).
    pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn ginibre<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| C64::new(gaussian(rng), gaussian(rng)))
    }

    pub fn hermitian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> CMatrix {
        let g = ginibre(rng, dim, dim);
        (&g + g.adjoint()) * C64::new(0.5, 0.0)
    }

    /// Unit-trace density matrix of rank `rank` (full rank when `rank >= dim`).
    pub fn density_matrix<R: Rng + ?Sized>(rng: &mut R, dim: usize, rank: usize) -> CMatrix {
        let g = ginibre(rng, dim, rank.min(dim).max(1));
        let rho = &g * g.adjoint();
        let tr = rho.trace();
        rho / tr
    }

    /// Haar-random unitary via QR of a Ginibre matrix with phase correction.
    pub fn unitary<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> CMatrix {
        let qr = ginibre(rng, dim, dim).qr();
        let (q, r) = qr.unpack();
        let mut q = q;
        for c in 0..dim {
            let d = r[(c, c)];
            let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
            for row in 0..dim {
                q[(row, c)] *= phase;
            }
        }
        q
    }
}
