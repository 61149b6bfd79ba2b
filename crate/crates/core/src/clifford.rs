//! The 24-element single-qubit Clifford group, modulo global phase.
//!
//! Elements are enumerated breadth-first from the identity by right
//! multiplication with `H` then `S`, each normalised so that its first nonzero
//! entry (row-major) is real and positive. Index 0 is the identity; the order
//! is fixed by this construction and never depends on runtime state.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::pauli::Pauli;
use crate::tensor::{CMatrix, C64};

pub const GROUP_ORDER: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CliffordIndex(u8);

impl CliffordIndex {
    pub const IDENTITY: CliffordIndex = CliffordIndex(0);

    pub fn new(index: u8) -> Option<Self> {
        ((index as usize) < GROUP_ORDER).then_some(Self(index))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = CliffordIndex> {
        (0..GROUP_ORDER as u8).map(CliffordIndex)
    }

    pub fn matrix(self) -> &'static CMatrix {
        &table().matrices[self.0 as usize]
    }

    pub fn hadamard() -> Self {
        table().hadamard
    }

    pub fn phase() -> Self {
        table().phase
    }

    /// Index of `self * other`.
    pub fn compose(self, other: CliffordIndex) -> CliffordIndex {
        table().products[self.0 as usize][other.0 as usize]
    }

    /// `Tr[sigma (3 U|x><x|U^dag - I)]` for the letter `sigma`.
    pub fn measurement_weight(self, outcome: u8, letter: Pauli) -> f64 {
        table().meas_weights[self.0 as usize][outcome as usize][letter as usize]
    }

    /// `Tr[sigma d (3 U|0><0|U^dag - I)^T]` with `d = 2`.
    pub fn preparation_weight(self, letter: Pauli) -> f64 {
        table().prep_weights[self.0 as usize][letter as usize]
    }
}

struct Table {
    matrices: Vec<CMatrix>,
    products: Vec<Vec<CliffordIndex>>,
    meas_weights: Vec<[[f64; 4]; 2]>,
    prep_weights: Vec<[f64; 4]>,
    hadamard: CliffordIndex,
    phase: CliffordIndex,
}

fn table() -> &'static Table {
    static TABLE: OnceLock<Table> = OnceLock::new();
    TABLE.get_or_init(build_table)
}

fn canonical_phase(m: &CMatrix) -> CMatrix {
    let pivot = m.iter().copied().find(|z| z.norm() > 1e-9).expect("nonzero unitary");
    let phase = pivot.conj() / pivot.norm();
    let mut out = m * phase;
    // snap roundoff so equal elements compare equal
    for z in out.iter_mut() {
        z.re = snap(z.re);
        z.im = snap(z.im);
    }
    out
}

fn snap(v: f64) -> f64 {
    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;
    for target in [0.0, 0.5, -0.5, 1.0, -1.0, H, -H] {
        if (v - target).abs() < 1e-9 {
            return target;
        }
    }
    v
}

fn find(elements: &[CMatrix], m: &CMatrix) -> Option<usize> {
    elements.iter().position(|e| (e - m).norm() < 1e-9)
}

fn build_table() -> Table {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let h = CMatrix::from_row_slice(2, 2, &[C64::new(r, 0.0), C64::new(r, 0.0), C64::new(r, 0.0), C64::new(-r, 0.0)]);
    let s = CMatrix::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 1.0)]);
    let generators = [canonical_phase(&h), canonical_phase(&s)];

    let mut elements = vec![CMatrix::identity(2, 2)];
    let mut frontier = 0;
    while frontier < elements.len() {
        let current = elements[frontier].clone();
        for g in &generators {
            let next = canonical_phase(&(&current * g));
            if find(&elements, &next).is_none() {
                elements.push(next);
            }
        }
        frontier += 1;
    }
    assert_eq!(elements.len(), GROUP_ORDER, "Clifford closure");

    let products = elements
        .iter()
        .map(|a| {
            elements
                .iter()
                .map(|b| {
                    let ab = canonical_phase(&(a * b));
                    CliffordIndex(find(&elements, &ab).expect("closed under composition") as u8)
                })
                .collect()
        })
        .collect();

    let paulis: Vec<CMatrix> = Pauli::ALL.iter().map(|p| p.matrix()).collect();
    let ident = CMatrix::identity(2, 2);
    let mut meas_weights = Vec::with_capacity(GROUP_ORDER);
    let mut prep_weights = Vec::with_capacity(GROUP_ORDER);
    for u in &elements {
        let mut m = [[0.0; 4]; 2];
        for (x, row) in m.iter_mut().enumerate() {
            let ket = u.column(x).into_owned();
            let inverted = (&ket * ket.adjoint()) * C64::new(3.0, 0.0) - &ident;
            for (l, p) in paulis.iter().enumerate() {
                row[l] = (p * &inverted).trace().re.round();
            }
        }
        meas_weights.push(m);

        let ket = u.column(0).into_owned();
        let prep = ((&ket * ket.adjoint()) * C64::new(3.0, 0.0) - &ident).transpose() * C64::new(2.0, 0.0);
        let mut w = [0.0; 4];
        for (l, p) in paulis.iter().enumerate() {
            w[l] = (p * &prep).trace().re.round();
        }
        prep_weights.push(w);
    }

    let hadamard = CliffordIndex(find(&elements, &generators[0]).unwrap() as u8);
    let phase = CliffordIndex(find(&elements, &generators[1]).unwrap() as u8);
    Table { matrices: elements, products, meas_weights, prep_weights, hadamard, phase }
}
