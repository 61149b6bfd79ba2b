//! Pauli strings over the legs of a labelled operator.
//!
//! A string is stored as one letter per leg, in the operator's leg order. The
//! dense index of a string is its base-4 number with the first leg most
//! significant (`I=0, X=1, Y=2, Z=3`).

use std::fmt;
use std::str::FromStr;

use crate::tensor::{CMatrix, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I = 0,
    X = 1,
    Y = 2,
    Z = 3,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i & 3]
    }

    pub fn matrix(self) -> CMatrix {
        let (o, z, i) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 1.0));
        let entries = match self {
            Pauli::I => [o, z, z, o],
            Pauli::X => [z, o, o, z],
            Pauli::Y => [z, -i, i, z],
            Pauli::Z => [o, z, z, -o],
        };
        CMatrix::from_row_slice(2, 2, &entries)
    }

    fn has_x(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }

    fn has_z(self) -> bool {
        matches!(self, Pauli::Y | Pauli::Z)
    }

    pub fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// Tensor product of single-qubit Paulis, one letter per leg.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliObservable {
    letters: Vec<Pauli>,
}

impl PauliObservable {
    pub fn new(letters: Vec<Pauli>) -> Self {
        Self { letters }
    }

    pub fn identity(num_legs: usize) -> Self {
        Self { letters: vec![Pauli::I; num_legs] }
    }

    pub fn from_index(mut index: usize, num_legs: usize) -> Self {
        let mut letters = vec![Pauli::I; num_legs];
        for slot in letters.iter_mut().rev() {
            *slot = Pauli::from_index(index & 3);
            index >>= 2;
        }
        Self { letters }
    }

    pub fn index(&self) -> usize {
        self.letters.iter().fold(0, |acc, &p| (acc << 2) | p as usize)
    }

    pub fn letters(&self) -> &[Pauli] {
        &self.letters
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn weight(&self) -> usize {
        self.letters.iter().filter(|&&p| p != Pauli::I).count()
    }

    pub fn is_identity(&self) -> bool {
        self.weight() == 0
    }

    /// Bit masks over the big-endian qubit index and the number of `Y`s.
    fn masks(&self) -> (usize, usize, usize) {
        let n = self.letters.len();
        let (mut x, mut z, mut ny) = (0usize, 0usize, 0usize);
        for (pos, &p) in self.letters.iter().enumerate() {
            let bit = 1 << (n - 1 - pos);
            if p.has_x() {
                x |= bit;
            }
            if p.has_z() {
                z |= bit;
            }
            if p == Pauli::Y {
                ny += 1;
            }
        }
        (x, z, ny)
    }

    /// Dense matrix, big-endian over legs.
    pub fn matrix(&self) -> CMatrix {
        let dim = 1usize << self.letters.len();
        let mut m = CMatrix::zeros(dim, dim);
        let (x, z, ny) = self.masks();
        let phase = i_pow(ny);
        // P|c> = i^{ny} (-1)^{|c & z|} |c ^ x>
        for c in 0..dim {
            let sign = if (c & z).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
            m[(c ^ x, c)] = phase * sign;
        }
        m
    }

    /// `Tr[P A]` without forming `P`; `A` must be `2^n x 2^n`.
    pub fn trace_with(&self, a: &CMatrix) -> C64 {
        let dim = 1usize << self.letters.len();
        debug_assert_eq!(a.nrows(), dim);
        let (x, z, ny) = self.masks();
        let mut acc = C64::new(0.0, 0.0);
        // Tr[P A] = sum_c <c|P A|c> = sum_c P[c, c^x] A[c^x, c]
        for c in 0..dim {
            let r = c ^ x;
            let sign = if (r & z).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
            acc += a[(r, c)] * sign;
        }
        acc * i_pow(ny)
    }

    /// `A += coeff * P`.
    pub fn add_scaled_to(&self, a: &mut CMatrix, coeff: f64) {
        let dim = 1usize << self.letters.len();
        let (x, z, ny) = self.masks();
        let phase = i_pow(ny) * coeff;
        for c in 0..dim {
            let sign = if (c & z).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
            a[(c ^ x, c)] += phase * sign;
        }
    }
}

fn i_pow(n: usize) -> C64 {
    match n % 4 {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, 1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, -1.0),
    }
}

impl fmt::Display for PauliObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.letters {
            write!(f, "{}", p.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliObservable {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(|c| match c {
                'I' => Ok(Pauli::I),
                'X' => Ok(Pauli::X),
                'Y' => Ok(Pauli::Y),
                'Z' => Ok(Pauli::Z),
                other => Err(format!("invalid Pauli letter {other:?}")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Self::new)
    }
}

/// Pauli coefficients `c_P = Tr[P A]` for every string on `num_legs` qubit legs,
/// indexed by [`PauliObservable::index`].
pub fn pauli_coefficients(a: &CMatrix, num_legs: usize) -> Vec<f64> {
    (0..1usize << (2 * num_legs))
        .map(|i| PauliObservable::from_index(i, num_legs).trace_with(a).re)
        .collect()
}

/// Inverse of [`pauli_coefficients`]: `A = 2^-n sum_P c_P P`.
pub fn from_pauli_coefficients(coeffs: &[f64], num_legs: usize) -> CMatrix {
    let dim = 1usize << num_legs;
    let mut a = CMatrix::zeros(dim, dim);
    let norm = 1.0 / dim as f64;
    for (i, &c) in coeffs.iter().enumerate() {
        if c != 0.0 {
            PauliObservable::from_index(i, num_legs).add_scaled_to(&mut a, c * norm);
        }
    }
    a
}
