//! Exact process-tensor Choi states of synthetic devices and their marginals.
//!
//! Conventions used throughout the crate:
//!
//! * A `k`-step process on one qubit has legs `o_k, i_k, ..., o_1, i_1, o_0`.
//!   `o_j` is what the process emits at `t_j`; `i_j` is what is fed back in
//!   at `t_{j-1}`.
//! * The Choi state is `sum c(a,b,m,n,...) |a><b|_o (x) |m><n|_i (x) ...` where
//!   `c` is the (unnormalised) final trace when, at every retained leg, the
//!   system block `<a| . |b>` is read out and `|m><n|` is injected. This is
//!   the state obtained by swapping in half of an unnormalised Bell pair at
//!   every input leg, so each retained input leg contributes a factor `d = 2`
//!   to the trace.
//! * Probabilities follow `p = Tr[Y (Pi (x) rho^T)]` for an effect `Pi` read
//!   at an output leg and a state `rho` prepared at an input leg.
//! * Qubits with no retained leg are either maximally depolarised at every
//!   intervention time ([`Background::Depolarized`]) or left untouched
//!   ([`Background::Idle`]). Defects are never intervened on and are traced
//!   at the end.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::DeviceModel;
use crate::pauli::{Pauli, PauliObservable};
use crate::tensor::{index_offsets, strides, CMatrix, Direction, LabelledOperator, LegLabel, Site, C64};

/// Largest register + defects + retained-leg count the exact oracle accepts.
pub const MAX_SIMULATED_QUBITS: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TimeLeg {
    Out(u32),
    In(u32),
}

impl TimeLeg {
    /// Position in time: `o_0 < i_1 < o_1 < i_2 < ...`.
    pub fn slot(self) -> u32 {
        match self {
            TimeLeg::Out(j) => 2 * j,
            TimeLeg::In(j) => 2 * j - 1,
        }
    }

    pub fn label(self, qubit: u32) -> LegLabel {
        match self {
            TimeLeg::Out(j) => LegLabel::out(qubit, j),
            TimeLeg::In(j) => LegLabel::input(qubit, j),
        }
    }

    pub fn of_label(leg: &LegLabel) -> Option<(u32, TimeLeg)> {
        match leg.site {
            Site::Qubit(q) => Some((
                q,
                match leg.direction {
                    Direction::Out => TimeLeg::Out(leg.time),
                    Direction::In => TimeLeg::In(leg.time),
                },
            )),
            Site::Defect(_) => None,
        }
    }

    /// All legs of a `k`-step process, latest first.
    pub fn all(k: u32) -> Vec<TimeLeg> {
        let mut out = Vec::with_capacity(2 * k as usize + 1);
        for j in (1..=k).rev() {
            out.push(TimeLeg::Out(j));
            out.push(TimeLeg::In(j));
        }
        out.push(TimeLeg::Out(0));
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Background {
    #[default]
    Depolarized,
    Idle,
}

/// The `(qubit, time-leg)` coordinates kept in a process marginal.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MarginalSpec {
    retained: BTreeSet<(u32, TimeLeg)>,
    background: Background,
}

impl MarginalSpec {
    pub fn new(retained: impl IntoIterator<Item = (u32, TimeLeg)>) -> Result<Self> {
        let retained: BTreeSet<_> = retained.into_iter().collect();
        if retained.iter().any(|(_, l)| *l == TimeLeg::In(0)) {
            return Err(Error::InvalidMarginal("input legs start at i_1".into()));
        }
        if retained.is_empty() {
            return Err(Error::InvalidMarginal("no retained legs".into()));
        }
        Ok(Self { retained, background: Background::Depolarized })
    }

    /// `Y_{k:0}` of one qubit.
    pub fn single_qubit(qubit: u32, k: u32) -> Self {
        Self::new(TimeLeg::all(k).into_iter().map(|l| (qubit, l))).expect("non-empty")
    }

    /// Every leg of every qubit.
    pub fn full(num_qubits: u32, k: u32) -> Self {
        Self::new((0..num_qubits).flat_map(|q| TimeLeg::all(k).into_iter().map(move |l| (q, l))))
            .expect("non-empty")
    }

    /// Step-2 map of `later` together with the one-step process `Y_{1:0}` of
    /// `earlier`; `later` is erased during step 1 and `earlier` during step 2.
    pub fn common_cause(earlier: u32, later: u32) -> Result<Self> {
        if earlier == later {
            return Err(Error::InvalidMarginal("common-cause marginal needs two distinct qubits".into()));
        }
        Self::new([
            (later, TimeLeg::Out(2)),
            (later, TimeLeg::In(2)),
            (earlier, TimeLeg::Out(1)),
            (earlier, TimeLeg::In(1)),
            (earlier, TimeLeg::Out(0)),
        ])
    }

    pub fn with_background(mut self, background: Background) -> Self {
        self.background = background;
        self
    }

    pub fn background(&self) -> Background {
        self.background
    }

    pub fn retained(&self) -> &BTreeSet<(u32, TimeLeg)> {
        &self.retained
    }

    pub fn contains(&self, qubit: u32, leg: TimeLeg) -> bool {
        self.retained.contains(&(qubit, leg))
    }

    pub fn qubits(&self) -> BTreeSet<u32> {
        self.retained.iter().map(|(q, _)| *q).collect()
    }

    /// Canonical leg order: qubits ascending, each `o_k, i_k, ..., o_0`.
    pub fn legs(&self) -> Vec<LegLabel> {
        let mut v: Vec<(u32, TimeLeg)> = self.retained.iter().copied().collect();
        v.sort_by(|(qa, la), (qb, lb)| qa.cmp(qb).then(lb.slot().cmp(&la.slot())));
        v.into_iter().map(|(q, l)| l.label(q)).collect()
    }

    pub fn max_time(&self) -> u32 {
        self.retained
            .iter()
            .map(|(_, l)| match l {
                TimeLeg::Out(j) | TimeLeg::In(j) => *j,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn validate_for(&self, num_qubits: usize, k: u32) -> Result<()> {
        for (q, l) in &self.retained {
            if *q as usize >= num_qubits {
                return Err(Error::InvalidMarginal(format!("qubit {q} is not in the register")));
            }
            let t = match l {
                TimeLeg::Out(j) | TimeLeg::In(j) => *j,
            };
            if t > k {
                return Err(Error::InvalidMarginal(format!("leg at time {t} exceeds k = {k}")));
            }
        }
        Ok(())
    }

    /// Specification matching the legs of an existing operator.
    pub fn from_legs(legs: &[LegLabel]) -> Result<Self> {
        let mut retained = Vec::with_capacity(legs.len());
        for leg in legs {
            retained.push(
                TimeLeg::of_label(leg)
                    .ok_or_else(|| Error::InvalidMarginal(format!("leg {leg} is not a process leg")))?,
            );
        }
        Self::new(retained)
    }
}

/// Number of retained input legs; the Choi trace is `2^this`.
pub fn input_leg_count(legs: &[LegLabel]) -> usize {
    legs.iter().filter(|l| l.direction == Direction::In).count()
}

fn slot_of(leg: &LegLabel) -> u32 {
    TimeLeg::of_label(leg).map(|(_, l)| l.slot()).unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Site-local operations on a big-endian operator over `n` qubit sites.

fn bit_of(n: usize, pos: usize) -> usize {
    1 << (n - 1 - pos)
}

/// For each index of the `n-1` remaining sites, the full index with the
/// removed site's bit cleared.
fn expand_map(n: usize, pos: usize) -> Vec<usize> {
    let bit = bit_of(n, pos);
    let low = bit - 1;
    (0..1usize << (n - 1)).map(|r| ((r & !low) << 1) | (r & low)).collect()
}

/// `<a|_pos X |b>_pos`, or the partial trace over `pos` when `ab` is `None`.
fn read_site(x: &CMatrix, n: usize, pos: usize, ab: Option<(usize, usize)>) -> CMatrix {
    let map = expand_map(n, pos);
    let bit = bit_of(n, pos);
    let m = map.len();
    match ab {
        Some((a, b)) => CMatrix::from_fn(m, m, |r, c| x[(map[r] | a * bit, map[c] | b * bit)]),
        None => CMatrix::from_fn(m, m, |r, c| x[(map[r], map[c])] + x[(map[r] | bit, map[c] | bit)]),
    }
}

/// `E_pos (x) Y` with `E` inserted at site `pos` of an `n`-site operator.
fn insert_site(y: &CMatrix, n: usize, pos: usize, e: &CMatrix) -> CMatrix {
    let map = expand_map(n, pos);
    let bit = bit_of(n, pos);
    let dim = 1usize << n;
    let mut x = CMatrix::zeros(dim, dim);
    for r in 0..map.len() {
        for c in 0..map.len() {
            let v = y[(r, c)];
            if v == C64::new(0.0, 0.0) {
                continue;
            }
            for a in 0..2 {
                for b in 0..2 {
                    let w = e[(a, b)];
                    if w != C64::new(0.0, 0.0) {
                        x[(map[r] | a * bit, map[c] | b * bit)] += w * v;
                    }
                }
            }
        }
    }
    x
}

fn unit(m: usize, n: usize) -> CMatrix {
    let mut e = CMatrix::zeros(2, 2);
    e[(m, n)] = C64::new(1.0, 0.0);
    e
}

/// Intervention on one qubit at one time.
#[derive(Clone, Copy, Debug)]
struct Intervention {
    pos: usize,
    /// Choi stride of the retained output leg, `None` to discard.
    out_stride: Option<usize>,
    /// Choi stride of the retained input leg, `None` to inject `I/2`.
    in_stride: Option<usize>,
}

struct ChoiBuilder<'a> {
    unitaries: &'a [CMatrix],
    n_sites: usize,
    k: usize,
    /// Interventions at times `0..k`.
    schedule: Vec<Vec<Intervention>>,
    /// Site positions and Choi strides of retained final outputs.
    final_outputs: Vec<(usize, usize)>,
    choi: CMatrix,
}

impl ChoiBuilder<'_> {
    fn run(&mut self, time: usize, x: CMatrix, row: usize, col: usize) {
        if time == self.k {
            self.finish(&x, row, col);
            return;
        }
        let ops = self.schedule[time].clone();
        self.intervene(time, &ops, 0, x, row, col);
    }

    fn intervene(&mut self, time: usize, ops: &[Intervention], idx: usize, x: CMatrix, row: usize, col: usize) {
        if idx == ops.len() {
            let u = &self.unitaries[time];
            let next = u * x * u.adjoint();
            self.run(time + 1, next, row, col);
            return;
        }
        let op = ops[idx];
        let n = self.n_sites;
        let reads: Vec<(CMatrix, usize, usize)> = match op.out_stride {
            Some(s) => (0..2)
                .flat_map(|a| (0..2).map(move |b| (a, b)))
                .map(|(a, b)| (read_site(&x, n, op.pos, Some((a, b))), a * s, b * s))
                .collect(),
            None => vec![(read_site(&x, n, op.pos, None), 0, 0)],
        };
        drop(x);
        for (y, dr, dc) in reads {
            if y.iter().all(|z| *z == C64::new(0.0, 0.0)) {
                continue;
            }
            match op.in_stride {
                Some(s) => {
                    for m in 0..2 {
                        for nn in 0..2 {
                            let xi = insert_site(&y, n, op.pos, &unit(m, nn));
                            self.intervene(time, ops, idx + 1, xi, row + dr + m * s, col + dc + nn * s);
                        }
                    }
                }
                None => {
                    let half = CMatrix::identity(2, 2) * C64::new(0.5, 0.0);
                    let xi = insert_site(&y, n, op.pos, &half);
                    self.intervene(time, ops, idx + 1, xi, row + dr, col + dc);
                }
            }
        }
    }

    fn finish(&mut self, x: &CMatrix, row: usize, col: usize) {
        let dims = vec![2usize; self.n_sites];
        let keep: Vec<usize> = self.final_outputs.iter().map(|(p, _)| *p).collect();
        let traced_pos: Vec<usize> = (0..self.n_sites).filter(|p| !keep.contains(p)).collect();
        let kept = index_offsets(&dims, &keep);
        let traced = index_offsets(&dims, &traced_pos);
        let choi_dims = vec![2usize; keep.len()];
        let choi_strides: Vec<usize> = self.final_outputs.iter().map(|(_, s)| *s).collect();
        // Choi offset of each reduced multi-index
        let choi_off: Vec<usize> = (0..kept.len())
            .map(|i| {
                let st = strides(&choi_dims);
                choi_dims
                    .iter()
                    .enumerate()
                    .map(|(l, _)| ((i / st[l]) % 2) * choi_strides[l])
                    .sum()
            })
            .collect();
        for i in 0..kept.len() {
            for j in 0..kept.len() {
                let v: C64 = traced.iter().map(|&t| x[(kept[i] + t, kept[j] + t)]).sum();
                self.choi[(row + choi_off[i], col + choi_off[j])] += v;
            }
        }
    }
}

/// Exact Choi state of the marginal process `spec` of `model`.
pub fn exact_process_choi(model: &DeviceModel, spec: &MarginalSpec) -> Result<LabelledOperator> {
    model.validate()?;
    let k = model.num_steps() as u32;
    spec.validate_for(model.num_qubits(), k)?;
    let legs = spec.legs();
    let simulated = model.num_sites() + legs.len();
    if simulated > MAX_SIMULATED_QUBITS {
        return Err(Error::DimensionOverflow {
            dim: 1usize << simulated.min(63),
            limit: 1usize << MAX_SIMULATED_QUBITS,
            detail: format!(
                "{} register + {} defect + {} retained-leg qubits",
                model.num_qubits(),
                model.num_defects(),
                legs.len()
            ),
        });
    }

    let choi_strides = strides(&vec![2usize; legs.len()]);
    let stride_of = |q: u32, l: TimeLeg| -> Option<usize> {
        legs.iter().position(|x| x.key() == l.label(q).key()).map(|p| choi_strides[p])
    };
    let involved = spec.qubits();
    let intervened = |q: u32| spec.background() == Background::Depolarized || involved.contains(&q);

    let mut schedule = Vec::with_capacity(k as usize);
    for t in 0..k {
        let ops = model
            .register
            .iter()
            .filter(|q| intervened(q.id))
            .map(|q| Intervention {
                pos: q.id as usize,
                out_stride: stride_of(q.id, TimeLeg::Out(t)),
                in_stride: stride_of(q.id, TimeLeg::In(t + 1)),
            })
            .collect();
        schedule.push(ops);
    }
    let final_outputs = model
        .register
        .iter()
        .filter_map(|q| stride_of(q.id, TimeLeg::Out(k)).map(|s| (q.id as usize, s)))
        .collect();

    let unitaries = model.step_unitaries()?;
    let dim = 1usize << legs.len();
    let mut builder = ChoiBuilder {
        unitaries: &unitaries,
        n_sites: model.num_sites(),
        k: k as usize,
        schedule,
        final_outputs,
        choi: CMatrix::zeros(dim, dim),
    };
    builder.run(0, model.initial_state(), 0, 0);
    Ok(LabelledOperator::new(builder.choi, legs)?.hermitian_part())
}

/// Trace out everything outside `spec`, dividing by 2 for each traced input
/// leg so the result keeps the trace-`2^inputs` convention, then put the legs
/// in canonical order.
pub fn marginalize(choi: &LabelledOperator, spec: &MarginalSpec) -> Result<LabelledOperator> {
    let keep = spec.legs();
    for leg in &keep {
        if choi.position(leg).is_none() {
            return Err(Error::UnknownLeg(*leg));
        }
    }
    let drop: Vec<LegLabel> = choi
        .legs()
        .iter()
        .filter(|l| !keep.iter().any(|k| k.key() == l.key()))
        .copied()
        .collect();
    let traced_inputs = input_leg_count(&drop);
    choi.partial_trace(&drop)?
        .scaled(1.0 / (1u64 << traced_inputs) as f64)
        .permute_legs(&keep)
}

/// Marginal on a subset of legs under the trace convention, keeping the
/// operator's own leg order.
pub fn block_marginal(choi: &LabelledOperator, block: &[LegLabel]) -> Result<LabelledOperator> {
    let drop: Vec<LegLabel> = choi
        .legs()
        .iter()
        .filter(|l| !block.iter().any(|k| k.key() == l.key()))
        .copied()
        .collect();
    let traced_inputs = input_leg_count(&drop);
    Ok(choi.partial_trace(&drop)?.scaled(1.0 / (1u64 << traced_inputs) as f64))
}

/// Tensor product of the block marginals, re-ordered to the input's legs.
pub fn product_of_marginals(choi: &LabelledOperator, blocks: &[Vec<LegLabel>]) -> Result<LabelledOperator> {
    let covered: usize = blocks.iter().map(Vec::len).sum();
    let mut seen = BTreeSet::new();
    for leg in blocks.iter().flatten() {
        if choi.position(leg).is_none() {
            return Err(Error::UnknownLeg(*leg));
        }
        if !seen.insert(leg.key()) {
            return Err(Error::DuplicateLeg(*leg));
        }
    }
    if covered != choi.legs().len() {
        return Err(Error::InvalidMarginal("blocks do not cover every leg".into()));
    }
    let mut product: Option<LabelledOperator> = None;
    for block in blocks {
        let m = block_marginal(choi, block)?;
        product = Some(match product {
            None => m,
            Some(p) => p.tensor_product(&m)?,
        });
    }
    product.expect("at least one block").permute_legs(choi.legs())
}

/// Time-step partition of a process's legs: one block per step holding the
/// `(o_j, i_j)` pairs of every qubit, and a final block of `o_0` legs.
pub fn step_blocks(legs: &[LegLabel]) -> Result<Vec<Vec<LegLabel>>> {
    let mut by_time: std::collections::BTreeMap<u32, Vec<LegLabel>> = Default::default();
    for leg in legs {
        let (q, l) = TimeLeg::of_label(leg)
            .ok_or_else(|| Error::InvalidMarginal(format!("leg {leg} is not a process leg")))?;
        let (TimeLeg::Out(j) | TimeLeg::In(j)) = l;
        if j > 0 {
            let partner = match l {
                TimeLeg::Out(_) => TimeLeg::In(j),
                TimeLeg::In(_) => TimeLeg::Out(j),
            };
            if !legs.iter().any(|x| x.key() == partner.label(q).key()) {
                return Err(Error::InvalidMarginal(format!(
                    "leg {leg} has no partner: steps must retain both o_j and i_j"
                )));
            }
        }
        by_time.entry(j).or_default().push(*leg);
    }
    Ok(by_time.into_values().rev().collect())
}

/// `E_{k:k-1} (x) ... (x) E_{1:0} (x) rho_0` built from the input's own marginals.
pub fn markov_closest(choi: &LabelledOperator) -> Result<LabelledOperator> {
    let blocks = step_blocks(choi.legs())?;
    product_of_marginals(choi, &blocks)
}

/// Value fixed by causality for a Pauli string on a process with these legs,
/// or `None` when the expectation is free.
///
/// Legs are grouped into time slots `o_0 < i_1 < o_1 < ...`. The identity
/// string has expectation `2^inputs` (the trace). Otherwise, if the latest
/// slot carrying a non-identity letter is an input slot, tracing every later
/// output reduces that letter against an identity and the expectation is 0.
pub fn causally_fixed_value(legs: &[LegLabel], pauli: &PauliObservable) -> Option<f64> {
    debug_assert_eq!(legs.len(), pauli.len());
    let latest = legs
        .iter()
        .zip(pauli.letters())
        .filter(|(_, &p)| p != Pauli::I)
        .map(|(l, _)| (slot_of(l), l.direction))
        .max_by_key(|(s, _)| *s);
    match latest {
        None => Some((1u64 << input_leg_count(legs)) as f64),
        Some((_, Direction::In)) => Some(0.0),
        Some((_, Direction::Out)) => None,
    }
}

/// Frobenius distance from `choi` to the affine set of causal operators.
pub fn causality_residual(choi: &LabelledOperator) -> f64 {
    let legs = choi.legs();
    let n = legs.len();
    let dim = choi.dim() as f64;
    let mut sq = 0.0;
    for i in 0..1usize << (2 * n) {
        let p = PauliObservable::from_index(i, n);
        if let Some(v) = causally_fixed_value(legs, &p) {
            let c = p.trace_with(choi.data());
            sq += (c.re - v).powi(2) + c.im.powi(2);
        }
    }
    // ||A||_F^2 = 2^-n sum_P |c_P|^2
    (sq / dim).sqrt()
}
