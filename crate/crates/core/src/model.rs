//! Synthetic devices: a qubit register on a 2-D grid, always-on `ZZ`
//! crosstalk between register qubits, and hidden two-level defects
//! Heisenberg-coupled to some of them.
//!
//! Joint register/defect operators are big-endian over the register qubits
//! in id order followed by the defects in declaration order. Qubit ids are
//! the contiguous range `0..N`, assigned row-major on the grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pauli::Pauli;
use crate::tensor::{CMatrix, LabelledOperator, LegLabel, SpectralDecomposition, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct RegisterQubit {
    pub id: u32,
    pub row: i32,
    pub col: i32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrosstalkEdge {
    pub a: u32,
    pub b: u32,
    /// Angular frequency, rad per time unit.
    pub j: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DefectCoupling {
    pub qubit: u32,
    /// Angular frequency, rad per time unit.
    pub g: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Defect {
    pub id: u32,
    pub initial_state: CMatrix,
    pub couplings: Vec<DefectCoupling>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceModel {
    pub register: Vec<RegisterQubit>,
    pub crosstalk: Vec<CrosstalkEdge>,
    pub defects: Vec<Defect>,
    /// Duration of each of the `k` steps, in time units.
    pub step_durations: Vec<f64>,
    pub initial_register_state: CMatrix,
    /// When set, crosstalk edges must join grid neighbours.
    pub nearest_neighbour: bool,
}

/// Common single-qubit states.
pub fn ket_state(kind: &str) -> Option<CMatrix> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let z = C64::new(0.0, 0.0);
    let ket: [C64; 2] = match kind {
        "zero" => [C64::new(1.0, 0.0), z],
        "one" => [z, C64::new(1.0, 0.0)],
        "plus" => [C64::new(r, 0.0), C64::new(r, 0.0)],
        "minus" => [C64::new(r, 0.0), C64::new(-r, 0.0)],
        "plus_i" => [C64::new(r, 0.0), C64::new(0.0, r)],
        "minus_i" => [C64::new(r, 0.0), C64::new(0.0, -r)],
        "mixed" => return Some(CMatrix::identity(2, 2) * C64::new(0.5, 0.0)),
        _ => return None,
    };
    let v = nalgebra::DVector::from_column_slice(&ket);
    Some(&v * v.adjoint())
}

pub fn product_state(states: &[CMatrix]) -> CMatrix {
    states.iter().fold(CMatrix::identity(1, 1), |acc, s| acc.kronecker(s))
}

fn check_density(rho: &CMatrix, what: &str) -> Result<()> {
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > 1e-9 || tr.im.abs() > 1e-9 {
        return Err(Error::InvalidModel(format!("{what} has trace {tr}")));
    }
    let spec = SpectralDecomposition::of_hermitian(rho);
    let herm = (rho - rho.adjoint()).iter().fold(0.0f64, |m, z| m.max(z.norm()));
    if herm > 1e-9 || spec.eigenvalues[0] < -1e-9 {
        return Err(Error::InvalidModel(format!("{what} is not positive semidefinite")));
    }
    Ok(())
}

/// Two-body term `coeff * P_a P_b` on `n` big-endian sites.
fn two_body(n: usize, a: usize, b: usize, letter: Pauli, coeff: f64) -> CMatrix {
    let mut letters = vec![Pauli::I; n];
    letters[a] = letter;
    letters[b] = letter;
    crate::pauli::PauliObservable::new(letters).matrix() * C64::new(coeff, 0.0)
}

impl DeviceModel {
    /// `rows x cols` grid with no couplings, register in `|0...0>`.
    pub fn grid(rows: usize, cols: usize, num_steps: usize) -> Self {
        let register = (0..rows * cols)
            .map(|i| RegisterQubit { id: i as u32, row: (i / cols) as i32, col: (i % cols) as i32 })
            .collect::<Vec<_>>();
        let zero = ket_state("zero").unwrap();
        let initial_register_state = product_state(&vec![zero; rows * cols]);
        Self {
            register,
            crosstalk: Vec::new(),
            defects: Vec::new(),
            step_durations: vec![1.0; num_steps],
            initial_register_state,
            nearest_neighbour: true,
        }
    }

    pub fn chain(n: usize, num_steps: usize) -> Self {
        Self::grid(1, n, num_steps)
    }

    pub fn num_qubits(&self) -> usize {
        self.register.len()
    }

    pub fn num_defects(&self) -> usize {
        self.defects.len()
    }

    pub fn num_steps(&self) -> usize {
        self.step_durations.len()
    }

    /// Register plus defects.
    pub fn num_sites(&self) -> usize {
        self.num_qubits() + self.num_defects()
    }

    pub fn with_edge(mut self, a: u32, b: u32, j: f64) -> Self {
        self.crosstalk.push(CrosstalkEdge { a, b, j });
        self
    }

    /// Add a defect in `|0>` coupled to `couplings` as `(qubit, g)`.
    pub fn with_defect(mut self, couplings: &[(u32, f64)]) -> Self {
        let id = self.defects.len() as u32;
        self.defects.push(Defect {
            id,
            initial_state: ket_state("zero").unwrap(),
            couplings: couplings.iter().map(|&(qubit, g)| DefectCoupling { qubit, g }).collect(),
        });
        self
    }

    /// Same single-qubit state on every register qubit.
    pub fn with_uniform_initial_state(mut self, state: &CMatrix) -> Self {
        self.initial_register_state = product_state(&vec![state.clone(); self.num_qubits()]);
        self
    }

    pub fn grid_neighbours(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for (i, a) in self.register.iter().enumerate() {
            for b in &self.register[i + 1..] {
                if (a.row - b.row).abs() + (a.col - b.col).abs() == 1 {
                    out.push((a.id, b.id));
                }
            }
        }
        out
    }

    /// Random `J` in `[j_min, j_max]` on every grid-neighbour pair.
    pub fn with_random_nearest_neighbour_crosstalk(mut self, seed: u64, j_min: f64, j_max: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (a, b) in self.grid_neighbours() {
            let j = rng.random_range(j_min..=j_max);
            self.crosstalk.push(CrosstalkEdge { a, b, j });
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_durations.is_empty() {
            return Err(Error::InvalidModel("need at least one step".into()));
        }
        if self.step_durations.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidModel("step durations must be finite and non-negative".into()));
        }
        for (i, q) in self.register.iter().enumerate() {
            if q.id as usize != i {
                return Err(Error::InvalidModel(format!(
                    "register qubit ids must be 0..N in order; position {i} has id {}",
                    q.id
                )));
            }
        }
        let n = self.num_qubits() as u32;
        let neighbours = self.grid_neighbours();
        for e in &self.crosstalk {
            if e.a >= n || e.b >= n {
                return Err(Error::InvalidModel(format!("edge ({}, {}) references a missing qubit", e.a, e.b)));
            }
            if e.a == e.b {
                return Err(Error::InvalidModel(format!("edge ({0}, {0}) is a self loop", e.a)));
            }
            let pair = (e.a.min(e.b), e.a.max(e.b));
            if self.nearest_neighbour && !neighbours.contains(&pair) {
                return Err(Error::InvalidModel(format!(
                    "edge ({}, {}) is not between grid neighbours",
                    e.a, e.b
                )));
            }
        }
        for d in &self.defects {
            for c in &d.couplings {
                if c.qubit >= n {
                    return Err(Error::InvalidModel(format!(
                        "defect {} couples to missing qubit {}",
                        d.id, c.qubit
                    )));
                }
            }
            if d.initial_state.shape() != (2, 2) {
                return Err(Error::InvalidModel(format!("defect {} state must be 2x2", d.id)));
            }
            check_density(&d.initial_state, &format!("defect {} initial state", d.id))?;
        }
        let dim = 1usize << self.num_qubits();
        if self.initial_register_state.shape() != (dim, dim) {
            return Err(Error::InvalidModel(format!("initial register state must be {dim}x{dim}")));
        }
        check_density(&self.initial_register_state, "initial register state")?;
        Ok(())
    }

    pub fn site_legs(&self) -> Vec<LegLabel> {
        let mut legs: Vec<LegLabel> = self.register.iter().map(|q| LegLabel::out(q.id, 0)).collect();
        legs.extend(self.defects.iter().map(|d| LegLabel::defect(d.id)));
        legs
    }

    /// Every two-body term of the step Hamiltonian on the full register and
    /// defect space, one per crosstalk edge and one per defect coupling.
    pub fn hamiltonian_terms(&self) -> Vec<CMatrix> {
        let n = self.num_sites();
        let mut terms = Vec::new();
        for e in &self.crosstalk {
            terms.push(two_body(n, e.a as usize, e.b as usize, Pauli::Z, e.j));
        }
        for (di, d) in self.defects.iter().enumerate() {
            let site = self.num_qubits() + di;
            for c in &d.couplings {
                let q = c.qubit as usize;
                terms.push(
                    two_body(n, q, site, Pauli::X, c.g)
                        + two_body(n, q, site, Pauli::Y, c.g)
                        + two_body(n, q, site, Pauli::Z, c.g),
                );
            }
        }
        terms
    }

    pub fn build_step_hamiltonian(&self) -> Result<LabelledOperator> {
        self.validate()?;
        let dim = 1usize << self.num_sites();
        let h = self.hamiltonian_terms().into_iter().fold(CMatrix::zeros(dim, dim), |acc, t| acc + t);
        LabelledOperator::new_hermitian(h, self.site_legs())
    }

    /// `exp(-i H tau)` for each step, from one spectral decomposition.
    pub fn step_unitaries(&self) -> Result<Vec<CMatrix>> {
        let h = self.build_step_hamiltonian()?;
        let spec = h.eigh()?;
        Ok(self.step_durations.iter().map(|&tau| exp_i_spectral(&spec, -tau)).collect())
    }

    pub fn build_step_unitary(&self) -> Result<LabelledOperator> {
        let h = self.build_step_hamiltonian()?;
        let tau = self.step_durations[0];
        let u = exp_i_spectral(&h.eigh()?, -tau);
        LabelledOperator::new(u, self.site_legs())
    }

    /// Initial state of register and defects.
    pub fn initial_state(&self) -> CMatrix {
        self.defects
            .iter()
            .fold(self.initial_register_state.clone(), |acc, d| acc.kronecker(&d.initial_state))
    }

    /// Relabel register qubits by `perm` (new id of old qubit `i` is `perm[i]`),
    /// moving grid coordinates, couplings and the initial state with them.
    pub fn relabelled(&self, perm: &[u32]) -> Result<Self> {
        let n = self.num_qubits();
        if perm.len() != n || (0..n as u32).any(|q| !perm.contains(&q)) {
            return Err(Error::InvalidModel("relabelling is not a permutation".into()));
        }
        let mut register = self.register.clone();
        for (old, q) in self.register.iter().enumerate() {
            let new = perm[old] as usize;
            register[new] = RegisterQubit { id: new as u32, row: q.row, col: q.col };
        }
        let crosstalk = self
            .crosstalk
            .iter()
            .map(|e| CrosstalkEdge { a: perm[e.a as usize], b: perm[e.b as usize], j: e.j })
            .collect();
        let defects = self
            .defects
            .iter()
            .map(|d| Defect {
                id: d.id,
                initial_state: d.initial_state.clone(),
                couplings: d
                    .couplings
                    .iter()
                    .map(|c| DefectCoupling { qubit: perm[c.qubit as usize], g: c.g })
                    .collect(),
            })
            .collect();
        // new position p holds old qubit inv[p]
        let mut inv = vec![0usize; n];
        for (old, &new) in perm.iter().enumerate() {
            inv[new as usize] = old;
        }
        let legs: Vec<LegLabel> = (0..n as u32).map(|q| LegLabel::out(q, 0)).collect();
        let order: Vec<LegLabel> = inv.iter().map(|&old| legs[old]).collect();
        let rho = LabelledOperator::new(self.initial_register_state.clone(), legs)?
            .permute_legs(&order)?
            .into_data();
        Ok(Self {
            register,
            crosstalk,
            defects,
            step_durations: self.step_durations.clone(),
            initial_register_state: rho,
            nearest_neighbour: self.nearest_neighbour,
        })
    }
}

/// `V exp(i t Lambda) V^dag`.
pub(crate) fn exp_i_spectral(spec: &SpectralDecomposition, t: f64) -> CMatrix {
    let v = &spec.eigenvectors;
    let mut scaled = v.clone();
    for (c, &lam) in spec.eigenvalues.iter().enumerate() {
        let w = C64::from_polar(1.0, lam * t);
        for r in 0..scaled.nrows() {
            scaled[(r, c)] *= w;
        }
    }
    scaled * v.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs(m: &CMatrix) -> f64 {
        m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
    }

    #[test]
    fn no_couplings_gives_zero_hamiltonian_and_identity_unitary() {
        let m = DeviceModel::chain(3, 1);
        let h = m.build_step_hamiltonian().unwrap();
        assert_eq!(max_abs(h.data()), 0.0);
        let u = m.build_step_unitary().unwrap();
        assert!(max_abs(&(u.data() - CMatrix::identity(8, 8))) < 1e-14);
    }

    #[test]
    fn single_edge_spectrum() {
        let j = 0.7;
        let m = DeviceModel::chain(2, 1).with_edge(0, 1, j);
        let h = m.build_step_hamiltonian().unwrap();
        let diag: Vec<f64> = (0..4).map(|i| h.data()[(i, i)].re).collect();
        assert_eq!(diag, vec![j, -j, -j, j]);
        assert!(max_abs(&(h.data() - CMatrix::from_diagonal(&h.data().diagonal()))) == 0.0);
    }

    #[test]
    fn quarter_turn_zz_unitary() {
        let m = DeviceModel::chain(2, 1).with_edge(0, 1, std::f64::consts::FRAC_PI_4);
        let u = m.build_step_unitary().unwrap();
        let p = std::f64::consts::FRAC_PI_4;
        let expected = [C64::from_polar(1.0, -p), C64::from_polar(1.0, p), C64::from_polar(1.0, p), C64::from_polar(1.0, -p)];
        for (i, e) in expected.iter().enumerate() {
            assert!((u.data()[(i, i)] - e).norm() < 1e-12);
        }
    }

    #[test]
    fn full_model_reassembles_term_by_term() {
        let m = DeviceModel::grid(2, 2, 2)
            .with_random_nearest_neighbour_crosstalk(3, 0.2, 1.0)
            .with_defect(&[(1, 0.9), (3, 1.2)]);
        let h = m.build_step_hamiltonian().unwrap();
        assert_eq!(h.hermiticity_deviation(), 0.0);
        let terms = m.hamiltonian_terms();
        assert_eq!(terms.len(), m.crosstalk.len() + 2);
        let dim = 1 << m.num_sites();
        let mut sum = CMatrix::zeros(dim, dim);
        for t in &terms {
            sum += t;
        }
        assert_eq!(max_abs(&(sum - h.data())), 0.0);
    }

    #[test]
    fn unitary_inverse_product() {
        let m = DeviceModel::grid(2, 2, 1)
            .with_random_nearest_neighbour_crosstalk(9, 0.2, 1.0)
            .with_defect(&[(0, 1.1)]);
        let h = m.build_step_hamiltonian().unwrap();
        let spec = h.eigh().unwrap();
        let forward = exp_i_spectral(&spec, -1.0);
        let backward = exp_i_spectral(&spec, 1.0);
        let dim = forward.nrows();
        assert!(max_abs(&(&forward * &backward - CMatrix::identity(dim, dim))) < 1e-10);
        assert!(max_abs(&(forward.adjoint() * &forward - CMatrix::identity(dim, dim))) < 1e-10);
    }

    #[test]
    fn validation_errors() {
        let bad = DeviceModel::chain(3, 1).with_edge(0, 2, 0.5);
        assert!(matches!(bad.validate(), Err(Error::InvalidModel(_))));
        let mut ok = DeviceModel::chain(3, 1).with_edge(0, 2, 0.5);
        ok.nearest_neighbour = false;
        assert!(ok.validate().is_ok());
        assert!(DeviceModel::chain(2, 1).with_edge(1, 1, 0.5).validate().is_err());
        assert!(DeviceModel::chain(2, 1).with_edge(0, 5, 0.5).validate().is_err());
        assert!(DeviceModel::chain(2, 1).with_defect(&[(4, 1.0)]).validate().is_err());
        let mut m = DeviceModel::chain(2, 1);
        m.initial_register_state *= C64::new(2.0, 0.0);
        assert!(m.validate().is_err());
        assert!(DeviceModel::chain(2, 0).validate().is_err());
    }

    #[test]
    fn random_crosstalk_respects_range_and_seed() {
        let a = DeviceModel::grid(3, 3, 1).with_random_nearest_neighbour_crosstalk(1, 0.2, 1.0);
        let b = DeviceModel::grid(3, 3, 1).with_random_nearest_neighbour_crosstalk(1, 0.2, 1.0);
        assert_eq!(a, b);
        assert_eq!(a.crosstalk.len(), 12);
        assert!(a.crosstalk.iter().all(|e| (0.2..=1.0).contains(&e.j)));
        a.validate().unwrap();
    }
}
