//! Dense statevector simulation: gates, circuits, probability queries and
//! shot sampling.
//!
//! Basis-state index `k` encodes qubit `j` as bit `j` of `k` (little-endian:
//! qubit 0 is the least-significant bit). This convention is fixed repo-wide;
//! bitstrings are rendered with qubit 0 rightmost, which coincides with the
//! ordinary binary rendering of the index.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Hard cap on the number of qubits a dense amplitude array may hold.
pub const MAX_QUBITS: usize = 24;

/// Default single-qubit gate duration used when no device stamps the circuit.
pub const DEFAULT_1Q_NS: f64 = 35.6;
/// Default two-qubit gate duration used when no device stamps the circuit.
pub const DEFAULT_2Q_NS: f64 = 400.0;

/// 2x2 complex matrix in row-major order.
pub type Mat2 = [[Complex64; 2]; 2];

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("qubit index {qubit} out of range for {num_qubits} qubits")]
    QubitOutOfRange { qubit: usize, num_qubits: usize },
    #[error("gate uses qubit {0} more than once")]
    DuplicateQubit(usize),
    #[error("moment uses qubit {0} more than once")]
    MomentConflict(usize),
    #[error("matrix is not unitary within {0:e}")]
    NonUnitary(f64),
    #[error("circuit acts on {circuit} qubits but state has {state}")]
    DimensionMismatch { circuit: usize, state: usize },
    #[error("bitstring {bits:#b} out of range for {num_qubits} qubits")]
    BitstringOutOfRange { bits: u64, num_qubits: usize },
    #[error("shot count must be at least 1")]
    ZeroShots,
}

/// The supported gate set. `Rz` is a virtual phase (zero duration); `Rxy` is
/// a rotation about an axis in the equatorial plane of the Bloch sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateKind {
    H { qubit: usize },
    X { qubit: usize },
    Cx { control: usize, target: usize },
    Rz { qubit: usize, theta: f64 },
    Rxy { qubit: usize, theta: f64, axis: f64 },
    U1q { qubit: usize, matrix: Mat2 },
}

/// Up to two qubit indices, allocation-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QubitIndices {
    data: [usize; 2],
    len: u8,
}

impl QubitIndices {
    fn one(q: usize) -> Self {
        QubitIndices { data: [q, 0], len: 1 }
    }

    fn two(a: usize, b: usize) -> Self {
        QubitIndices { data: [a, b], len: 2 }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.data[..self.len as usize]
    }

    pub fn contains(&self, q: usize) -> bool {
        self.as_slice().contains(&q)
    }
}

impl IntoIterator for QubitIndices {
    type Item = usize;
    type IntoIter = std::iter::Take<std::array::IntoIter<usize, 2>>;

    fn into_iter(self) -> Self::IntoIter {
        self.data.into_iter().take(self.len as usize)
    }
}

impl GateKind {
    /// Qubit indices touched by this gate (one or two entries).
    pub fn qubits(&self) -> QubitIndices {
        match *self {
            GateKind::H { qubit }
            | GateKind::X { qubit }
            | GateKind::Rz { qubit, .. }
            | GateKind::Rxy { qubit, .. }
            | GateKind::U1q { qubit, .. } => QubitIndices::one(qubit),
            GateKind::Cx { control, target } => QubitIndices::two(control, target),
        }
    }

    fn validate(&self, num_qubits: usize) -> Result<(), StateError> {
        for q in self.qubits() {
            if q >= num_qubits {
                return Err(StateError::QubitOutOfRange { qubit: q, num_qubits });
            }
        }
        if let GateKind::Cx { control, target } = *self {
            if control == target {
                return Err(StateError::DuplicateQubit(control));
            }
        }
        if let GateKind::U1q { matrix, .. } = *self {
            if !is_unitary(&matrix, 1e-10) {
                return Err(StateError::NonUnitary(1e-10));
            }
        }
        Ok(())
    }
}

/// A gate plus its wall-clock duration, used for noise scheduling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    pub duration_ns: f64,
}

impl Gate {
    pub fn h(qubit: usize) -> Self {
        Gate { kind: GateKind::H { qubit }, duration_ns: DEFAULT_1Q_NS }
    }

    pub fn x(qubit: usize) -> Self {
        Gate { kind: GateKind::X { qubit }, duration_ns: DEFAULT_1Q_NS }
    }

    pub fn cx(control: usize, target: usize) -> Self {
        Gate { kind: GateKind::Cx { control, target }, duration_ns: DEFAULT_2Q_NS }
    }

    /// Virtual Z rotation `diag(e^{-i theta/2}, e^{+i theta/2})`; takes no time.
    pub fn rz(qubit: usize, theta: f64) -> Self {
        Gate { kind: GateKind::Rz { qubit, theta }, duration_ns: 0.0 }
    }

    /// `exp(-i theta/2 (cos(axis) X + sin(axis) Y))`.
    pub fn rxy(qubit: usize, theta: f64, axis: f64) -> Self {
        Gate { kind: GateKind::Rxy { qubit, theta, axis }, duration_ns: DEFAULT_1Q_NS }
    }

    pub fn u1q(qubit: usize, matrix: Mat2) -> Self {
        Gate { kind: GateKind::U1q { qubit, matrix }, duration_ns: DEFAULT_1Q_NS }
    }

    pub fn with_duration(mut self, duration_ns: f64) -> Self {
        self.duration_ns = duration_ns;
        self
    }

    pub fn qubits(&self) -> Vec<usize> {
        self.kind.qubits()
    }
}

/// One time slice: a set of gates on pairwise disjoint qubits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Moment {
    pub gates: Vec<Gate>,
}

impl Moment {
    /// Wall-clock duration of the slice: the longest gate in it.
    pub fn duration_ns(&self) -> f64 {
        self.gates.iter().map(|g| g.duration_ns).fold(0.0, f64::max)
    }

    fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        self.gates.iter().flat_map(|g| g.kind.qubits())
    }
}

/// An ordered, time-sliced gate program.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub num_qubits: usize,
    pub moments: Vec<Moment>,
    pub measured_qubits: Vec<usize>,
}

impl Circuit {
    pub fn new(num_qubits: usize) -> Self {
        assert!(num_qubits >= 1 && num_qubits <= MAX_QUBITS);
        Circuit { num_qubits, moments: Vec::new(), measured_qubits: Vec::new() }
    }

    /// Append a gate, packing it greedily into the earliest moment after the
    /// last moment that touches any of its qubits.
    pub fn push_gate(&mut self, gate: Gate) -> Result<(), StateError> {
        gate.kind.validate(self.num_qubits)?;
        let qubits = gate.kind.qubits();
        let mut slot = 0;
        for (idx, moment) in self.moments.iter().enumerate() {
            if moment.occupied().any(|q| qubits.contains(&q)) {
                slot = idx + 1;
            }
        }
        if slot == self.moments.len() {
            self.moments.push(Moment::default());
        }
        self.moments[slot].gates.push(gate);
        Ok(())
    }

    /// Append the given gates as one new moment, rejecting qubit collisions.
    pub fn push_layer(&mut self, gates: Vec<Gate>) -> Result<(), StateError> {
        let mut seen = vec![false; self.num_qubits];
        for gate in &gates {
            gate.kind.validate(self.num_qubits)?;
            for q in gate.kind.qubits() {
                if seen[q] {
                    return Err(StateError::MomentConflict(q));
                }
                seen[q] = true;
            }
        }
        self.moments.push(Moment { gates });
        Ok(())
    }

    pub fn measure_all(&mut self) {
        self.measured_qubits = (0..self.num_qubits).collect();
    }

    pub fn gate_count(&self) -> usize {
        self.moments.iter().map(|m| m.gates.len()).sum()
    }

    /// Total scheduled duration: the sum of moment durations.
    pub fn duration_ns(&self) -> f64 {
        self.moments.iter().map(Moment::duration_ns).sum()
    }
}

/// Dense pure state over `2^n` complex amplitudes.
#[derive(Debug, Clone)]
pub struct StateVector {
    num_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// A fresh register in `|0...0>`.
    pub fn new(num_qubits: usize) -> Self {
        assert!(
            num_qubits >= 1 && num_qubits <= MAX_QUBITS,
            "qubit count {num_qubits} outside 1..={MAX_QUBITS}"
        );
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << num_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        StateVector { num_qubits, amps }
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    /// Deviation of the squared norm from one.
    pub fn norm_error(&self) -> f64 {
        (1.0 - self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>()).abs()
    }

    /// Rescale to unit norm; used by trajectory sampling after a Kraus draw.
    pub fn renormalize(&mut self) {
        let norm = self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            let inv = 1.0 / norm;
            for a in &mut self.amps {
                *a *= inv;
            }
        }
    }

    pub fn apply_gate(&mut self, gate: &Gate) -> Result<(), StateError> {
        gate.kind.validate(self.num_qubits)?;
        self.apply_gate_unchecked(gate);
        Ok(())
    }

    /// Apply a gate whose indices were already validated against this
    /// register size.
    pub(crate) fn apply_gate_unchecked(&mut self, gate: &Gate) {
        match gate.kind {
            GateKind::H { qubit } => {
                let f = std::f64::consts::FRAC_1_SQRT_2;
                let m = [
                    [Complex64::new(f, 0.0), Complex64::new(f, 0.0)],
                    [Complex64::new(f, 0.0), Complex64::new(-f, 0.0)],
                ];
                self.apply_mat2(qubit, &m);
            }
            GateKind::X { qubit } => self.apply_x(qubit),
            GateKind::Cx { control, target } => self.apply_cx(control, target),
            GateKind::Rz { qubit, theta } => self.apply_rz(qubit, theta),
            GateKind::Rxy { qubit, theta, axis } => {
                self.apply_mat2(qubit, &rxy_matrix(theta, axis));
            }
            GateKind::U1q { qubit, matrix } => self.apply_mat2(qubit, &matrix),
        }
        Ok(())
    }

    pub fn apply_circuit(&mut self, circuit: &Circuit) -> Result<(), StateError> {
        if circuit.num_qubits != self.num_qubits {
            return Err(StateError::DimensionMismatch {
                circuit: circuit.num_qubits,
                state: self.num_qubits,
            });
        }
        for moment in &circuit.moments {
            for gate in &moment.gates {
                self.apply_gate(gate)?;
            }
        }
        Ok(())
    }

    /// `|<bits|state>|^2` for a computational basis state.
    pub fn probability(&self, bits: u64) -> Result<f64, StateError> {
        if bits >= (1u64 << self.num_qubits) {
            return Err(StateError::BitstringOutOfRange { bits, num_qubits: self.num_qubits });
        }
        Ok(self.amps[bits as usize].norm_sqr())
    }

    /// Full outcome distribution `|a_k|^2`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Multinomial sample of measurement outcomes; deterministic per seed.
    pub fn sample_counts(&self, shots: u64, seed: u64) -> Result<CountsTable, StateError> {
        if shots == 0 {
            return Err(StateError::ZeroShots);
        }
        let mut cdf = Vec::with_capacity(self.amps.len());
        let mut acc = 0.0;
        for a in &self.amps {
            acc += a.norm_sqr();
            cdf.push(acc);
        }
        let total = acc;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = CountsTable::new(self.num_qubits);
        for _ in 0..shots {
            let u: f64 = rng.gen::<f64>() * total;
            let idx = cdf.partition_point(|&c| c <= u).min(self.amps.len() - 1);
            table.add(idx as u64, 1);
        }
        Ok(table)
    }

    /// Draw a single outcome using the caller's RNG (trajectory hot path).
    pub fn sample_outcome<R: Rng>(&self, rng: &mut R) -> u64 {
        let mut u: f64 = rng.gen();
        u *= self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>();
        let mut acc = 0.0;
        for (k, a) in self.amps.iter().enumerate() {
            acc += a.norm_sqr();
            if u < acc {
                return k as u64;
            }
        }
        (self.amps.len() - 1) as u64
    }

    /// Apply an arbitrary 2x2 matrix to one qubit. Callers own unitarity.
    pub fn apply_mat2(&mut self, qubit: usize, m: &Mat2) {
        kernel_mat2(&mut self.amps, qubit, m);
    }

    /// Apply an arbitrary 4x4 matrix to a qubit pair; the pair basis index
    /// is `bit(low) | bit(high) << 1`.
    pub fn apply_mat4(&mut self, low: usize, high: usize, m: &[[Complex64; 4]; 4]) {
        kernel_mat4(&mut self.amps, low, high, m);
    }

    /// Multiply every amplitude by a real factor.
    pub(crate) fn scale(&mut self, factor: f64) {
        for a in &mut self.amps {
            *a *= factor;
        }
    }

    fn apply_x(&mut self, qubit: usize) {
        kernel_x(&mut self.amps, qubit);
    }

    fn apply_cx(&mut self, control: usize, target: usize) {
        kernel_cx(&mut self.amps, control, target);
    }

    fn apply_rz(&mut self, qubit: usize, theta: f64) {
        kernel_rz(&mut self.amps, qubit, theta);
    }
}

// Raw kernels over a flat amplitude array. The density-matrix oracle reuses
// them by treating vec(rho) as a register twice the size.

pub(crate) fn kernel_mat2(amps: &mut [Complex64], qubit: usize, m: &Mat2) {
    let step = 1usize << qubit;
    for base in (0..amps.len()).step_by(2 * step) {
        for offset in 0..step {
            let i = base + offset;
            let j = i | step;
            let a = amps[i];
            let b = amps[j];
            amps[i] = m[0][0] * a + m[0][1] * b;
            amps[j] = m[1][0] * a + m[1][1] * b;
        }
    }
}

pub(crate) fn kernel_x(amps: &mut [Complex64], qubit: usize) {
    let step = 1usize << qubit;
    for base in (0..amps.len()).step_by(2 * step) {
        for offset in 0..step {
            amps.swap(base + offset, base + offset + step);
        }
    }
}

pub(crate) fn kernel_cx(amps: &mut [Complex64], control: usize, target: usize) {
    let cmask = 1usize << control;
    let tmask = 1usize << target;
    for i in 0..amps.len() {
        if i & cmask != 0 && i & tmask == 0 {
            amps.swap(i, i | tmask);
        }
    }
}

pub(crate) fn kernel_rz(amps: &mut [Complex64], qubit: usize, theta: f64) {
    let lo = Complex64::from_polar(1.0, -theta / 2.0);
    let hi = Complex64::from_polar(1.0, theta / 2.0);
    let mask = 1usize << qubit;
    for (i, a) in amps.iter_mut().enumerate() {
        *a *= if i & mask == 0 { lo } else { hi };
    }
}

/// Apply a 4x4 matrix to the `(low, high)` qubit pair of a flat amplitude
/// array; basis index of the 4-dim block is `bit(low) | bit(high) << 1`.
pub(crate) fn kernel_mat4(
    amps: &mut [Complex64],
    low: usize,
    high: usize,
    m: &[[Complex64; 4]; 4],
) {
    let lmask = 1usize << low;
    let hmask = 1usize << high;
    for i in 0..amps.len() {
        if i & lmask == 0 && i & hmask == 0 {
            let idx = [i, i | lmask, i | hmask, i | lmask | hmask];
            let mut v = [Complex64::new(0.0, 0.0); 4];
            for (r, out) in v.iter_mut().enumerate() {
                for (c, &k) in idx.iter().enumerate() {
                    *out += m[r][c] * amps[k];
                }
            }
            for (r, &k) in idx.iter().enumerate() {
                amps[k] = v[r];
            }
        }
    }
}

/// Matrix of `exp(-i theta/2 (cos(axis) X + sin(axis) Y))`.
pub fn rxy_matrix(theta: f64, axis: f64) -> Mat2 {
    let c = (theta / 2.0).cos();
    let s = (theta / 2.0).sin();
    let mi = Complex64::new(0.0, -1.0);
    [
        [Complex64::new(c, 0.0), mi * s * Complex64::from_polar(1.0, -axis)],
        [mi * s * Complex64::from_polar(1.0, axis), Complex64::new(c, 0.0)],
    ]
}

/// Check `M M^dagger = I` within `tol` elementwise.
pub fn is_unitary(m: &Mat2, tol: f64) -> bool {
    for r in 0..2 {
        for c in 0..2 {
            let mut dot = Complex64::new(0.0, 0.0);
            for k in 0..2 {
                dot += m[r][k] * m[c][k].conj();
            }
            let expect = if r == c { 1.0 } else { 0.0 };
            if (dot - expect).norm() > tol {
                return false;
            }
        }
    }
    true
}

/// Observed counts for one experiment repetition, keyed by basis index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountsTable {
    num_qubits: usize,
    counts: BTreeMap<u64, u64>,
}

impl CountsTable {
    pub fn new(num_qubits: usize) -> Self {
        CountsTable { num_qubits, counts: BTreeMap::new() }
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn add(&mut self, bits: u64, count: u64) {
        *self.counts.entry(bits).or_insert(0) += count;
    }

    pub fn get(&self, bits: u64) -> u64 {
        self.counts.get(&bits).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts.iter().map(|(&k, &v)| (k, v))
    }

    /// Observed frequency of one bitstring.
    pub fn frequency(&self, bits: u64) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.get(bits) as f64 / total as f64
        }
    }

    /// Expectation of the Z-parity operator `Z x Z x ... x Z`.
    pub fn parity_expectation(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let signed: i64 = self
            .counts
            .iter()
            .map(|(&bits, &c)| if bits.count_ones() % 2 == 0 { c as i64 } else { -(c as i64) })
            .sum();
        signed as f64 / total as f64
    }

    /// Merge another table into this one.
    pub fn absorb(&mut self, other: &CountsTable) {
        for (bits, c) in other.iter() {
            self.add(bits, c);
        }
    }
}

/// Render a basis index as a bitstring with qubit 0 rightmost.
pub fn format_bitstring(bits: u64, num_qubits: usize) -> String {
    format!("{bits:0num_qubits$b}")
}

/// Inverse of [`format_bitstring`].
pub fn parse_bitstring(s: &str) -> Option<(u64, usize)> {
    if s.is_empty() || !s.bytes().all(|b| b == b'0' || b == b'1') {
        return None;
    }
    u64::from_str_radix(s, 2).ok().map(|bits| (bits, s.len()))
}
