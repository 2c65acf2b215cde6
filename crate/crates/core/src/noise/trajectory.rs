//! Monte Carlo trajectory execution: one stochastic pure-state run per shot.
//!
//! Per shot, a drift rate is drawn once per qubit, then after every gate one
//! Kraus branch of the gate's channel is sampled (probability equal to the
//! branch norm) and the state renormalized. Idle qubits pick up thermal
//! relaxation and the drift rotation for the unoccupied remainder of each
//! moment. Shots are seeded individually from the master seed, so the
//! resulting counts do not depend on how shots are spread over threads.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{KrausChannel, Mat4, NoiseError, NoiseModel};
use crate::seeding::mix;
use crate::statevector::{Circuit, CountsTable, Gate, Mat2, StateVector};

/// A channel preprocessed for fast per-shot sampling. Channels made of
/// scaled unitaries (depolarizing) have state-independent branch weights;
/// their operators are pre-normalized so no renormalization pass is needed.
enum PlannedChannel {
    /// Every operator is diagonal or antidiagonal (thermal relaxation, 1Q
    /// depolarizing): one excited-population pass yields all branch norms,
    /// and applying a branch is a single fused pass.
    Axis1q { qubit: usize, ops: Vec<AxisOp> },
    /// Consecutive axis channels on distinct qubits (e.g. the two thermal
    /// channels of a CX), sampled jointly in two passes.
    AxisGroup { entries: Vec<FusedIdleEntry> },
    /// Mixture of two-qubit Pauli products (2Q depolarizing): fixed branch
    /// weights and permutation/phase application.
    PauliMix2q { low: usize, high: usize, ops: Vec<(Pauli, Pauli)>, cumulative: Vec<f64> },
    State1q { qubit: usize, ops: Vec<Mat2> },
    State2q { low: usize, high: usize, ops: Vec<Mat4> },
    Mix1q { qubit: usize, ops: Vec<Mat2>, cumulative: Vec<f64> },
    Mix2q { low: usize, high: usize, ops: Vec<Mat4>, cumulative: Vec<f64> },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Pauli {
    I,
    X,
    Y,
    Z,
}

/// Diagonal `[e0 0; 0 e1]` or antidiagonal `[0 e0; e1 0]` operator.
#[derive(Clone, Copy, Debug)]
struct AxisOp {
    antidiagonal: bool,
    e0: Complex64,
    e1: Complex64,
}

impl AxisOp {
    fn of(op: &Mat2) -> Option<AxisOp> {
        let tol = 1e-14;
        if op[0][1].norm() < tol && op[1][0].norm() < tol {
            Some(AxisOp { antidiagonal: false, e0: op[0][0], e1: op[1][1] })
        } else if op[0][0].norm() < tol && op[1][1].norm() < tol {
            Some(AxisOp { antidiagonal: true, e0: op[0][1], e1: op[1][0] })
        } else {
            None
        }
    }

    /// Branch norm given the excited-state population `s` of the qubit.
    fn branch_norm(&self, s: f64) -> f64 {
        if self.antidiagonal {
            self.e0.norm_sqr() * s + self.e1.norm_sqr() * (1.0 - s)
        } else {
            self.e0.norm_sqr() * (1.0 - s) + self.e1.norm_sqr() * s
        }
    }
}

/// Match `op = scale * (P_high tensor P_low)` against the sixteen Pauli
/// pairs.
fn pauli_pair_of(op: &Mat4) -> Option<(f64, Pauli, Pauli)> {
    let scale = op
        .iter()
        .flat_map(|row| row.iter())
        .map(|e| e.norm())
        .fold(0.0f64, f64::max);
    if scale < 1e-14 {
        return None;
    }
    const PAULIS: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];
    for &ph in &PAULIS {
        for &pl in &PAULIS {
            let pattern = super::tensor2(&pauli_matrix(pl), &pauli_matrix(ph));
            let mut matched = true;
            'outer: for r in 0..4 {
                for c in 0..4 {
                    if (op[r][c] - pattern[r][c] * scale).norm() > 1e-12 {
                        matched = false;
                        break 'outer;
                    }
                }
            }
            if matched {
                return Some((scale, pl, ph));
            }
        }
    }
    None
}

fn pauli_matrix(p: Pauli) -> Mat2 {
    let z = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    match p {
        Pauli::I => [[one, z], [z, one]],
        Pauli::X => [[z, one], [one, z]],
        Pauli::Y => [[z, Complex64::new(0.0, -1.0)], [Complex64::new(0.0, 1.0), z]],
        Pauli::Z => [[one, z], [z, -one]],
    }
}

/// Weight `w` such that `K^dagger K = w I`, if the operator is a scaled
/// unitary.
fn scaled_unitary_weight_2(op: &Mat2) -> Option<f64> {
    let mut gram = [[Complex64::new(0.0, 0.0); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            for k in 0..2 {
                gram[r][c] += op[k][r].conj() * op[k][c];
            }
        }
    }
    let w = gram[0][0].re;
    for r in 0..2 {
        for c in 0..2 {
            let expect = if r == c { Complex64::new(w, 0.0) } else { Complex64::new(0.0, 0.0) };
            if (gram[r][c] - expect).norm() > 1e-12 {
                return None;
            }
        }
    }
    Some(w)
}

fn scaled_unitary_weight_4(op: &Mat4) -> Option<f64> {
    let mut gram = [[Complex64::new(0.0, 0.0); 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            for k in 0..4 {
                gram[r][c] += op[k][r].conj() * op[k][c];
            }
        }
    }
    let w = gram[0][0].re;
    for r in 0..4 {
        for c in 0..4 {
            let expect = if r == c { Complex64::new(w, 0.0) } else { Complex64::new(0.0, 0.0) };
            if (gram[r][c] - expect).norm() > 1e-12 {
                return None;
            }
        }
    }
    Some(w)
}

fn plan_channel(qubits: &[usize], channel: &KrausChannel) -> PlannedChannel {
    match channel {
        KrausChannel::One(ops) => {
            if let Some(axis) = ops.iter().map(AxisOp::of).collect::<Option<Vec<_>>>() {
                return PlannedChannel::Axis1q { qubit: qubits[0], ops: axis };
            }
            let weights: Option<Vec<f64>> = ops.iter().map(scaled_unitary_weight_2).collect();
            match weights {
                Some(w) => {
                    let mut cumulative = Vec::with_capacity(w.len());
                    let mut acc = 0.0;
                    let mut normalized = Vec::with_capacity(ops.len());
                    for (op, &weight) in ops.iter().zip(&w) {
                        acc += weight;
                        cumulative.push(acc);
                        let inv = 1.0 / weight.sqrt();
                        let mut m = *op;
                        for row in m.iter_mut() {
                            for e in row.iter_mut() {
                                *e *= inv;
                            }
                        }
                        normalized.push(m);
                    }
                    PlannedChannel::Mix1q { qubit: qubits[0], ops: normalized, cumulative }
                }
                None => PlannedChannel::State1q { qubit: qubits[0], ops: ops.clone() },
            }
        }
        KrausChannel::Two(ops) => {
            if let Some(pairs) = ops
                .iter()
                .map(|op| pauli_pair_of(op).map(|(s, pl, ph)| (s * s, (pl, ph))))
                .collect::<Option<Vec<(f64, (Pauli, Pauli))>>>()
            {
                let mut cumulative = Vec::with_capacity(pairs.len());
                let mut acc = 0.0;
                let mut pauli_ops = Vec::with_capacity(pairs.len());
                for (weight, pair) in pairs {
                    acc += weight;
                    cumulative.push(acc);
                    pauli_ops.push(pair);
                }
                return PlannedChannel::PauliMix2q {
                    low: qubits[0],
                    high: qubits[1],
                    ops: pauli_ops,
                    cumulative,
                };
            }
            let weights: Option<Vec<f64>> = ops.iter().map(scaled_unitary_weight_4).collect();
            match weights {
                Some(w) => {
                    let mut cumulative = Vec::with_capacity(w.len());
                    let mut acc = 0.0;
                    let mut normalized = Vec::with_capacity(ops.len());
                    for (op, &weight) in ops.iter().zip(&w) {
                        acc += weight;
                        cumulative.push(acc);
                        let inv = 1.0 / weight.sqrt();
                        let mut m = *op;
                        for row in m.iter_mut() {
                            for e in row.iter_mut() {
                                *e *= inv;
                            }
                        }
                        normalized.push(m);
                    }
                    PlannedChannel::Mix2q {
                        low: qubits[0],
                        high: qubits[1],
                        ops: normalized,
                        cumulative,
                    }
                }
                None => {
                    PlannedChannel::State2q { low: qubits[0], high: qubits[1], ops: ops.clone() }
                }
            }
        }
    }
}

/// One idle window with its relaxation branches (empty for drift-only
/// windows).
struct FusedIdleEntry {
    qubit: usize,
    idle_ns: f64,
    ops: Vec<AxisOp>,
}

enum IdleWork {
    None,
    /// All windows have axis-representable channels: processed jointly with
    /// one sector-population pass and one combined apply pass per shot.
    Fused(Vec<FusedIdleEntry>),
    /// Fallback for non-axis idle channels.
    Sequential(Vec<(usize, f64, Option<PlannedChannel>)>),
}

/// Channel applications for one moment, resolved once so the per-shot loop
/// does no lookups or channel construction.
struct MomentPlan<'a> {
    gates: Vec<(&'a Gate, Vec<PlannedChannel>)>,
    idle: IdleWork,
}

fn plan_moments<'a>(
    circuit: &'a Circuit,
    noise: &NoiseModel,
) -> Result<Vec<MomentPlan<'a>>, NoiseError> {
    let n = circuit.num_qubits;
    let track_idle = noise.tracks_idle();
    // A qubit is exactly |0...0>-factored until its first gate, so idle
    // noise and drift before that point act trivially and are dropped.
    let mut touched = vec![false; n];
    let mut plans = Vec::with_capacity(circuit.moments.len());
    for moment in &circuit.moments {
        let moment_duration = moment.duration_ns();
        let mut busy = vec![0.0f64; n];
        let mut gated = vec![false; n];
        let mut gates = Vec::with_capacity(moment.gates.len());
        for gate in &moment.gates {
            for q in gate.qubits() {
                busy[q] = gate.duration_ns;
                gated[q] = true;
            }
            let mut channels: Vec<PlannedChannel> = Vec::new();
            for (qubits, channel) in noise.gate_channels(gate)? {
                let planned = plan_channel(&qubits, channel);
                match (channels.last_mut(), planned) {
                    // Fold runs of single-qubit axis channels into one
                    // jointly sampled group.
                    (
                        Some(PlannedChannel::AxisGroup { entries }),
                        PlannedChannel::Axis1q { qubit, ops },
                    ) if entries.iter().all(|e| e.qubit != qubit) => {
                        entries.push(FusedIdleEntry { qubit, idle_ns: 0.0, ops });
                    }
                    (_, PlannedChannel::Axis1q { qubit, ops }) => {
                        channels.push(PlannedChannel::AxisGroup {
                            entries: vec![FusedIdleEntry { qubit, idle_ns: 0.0, ops }],
                        });
                    }
                    (_, other) => channels.push(other),
                }
            }
            gates.push((gate, channels));
        }

        let mut raw_idles = Vec::new();
        if track_idle {
            for (q, &gate_time) in busy.iter().enumerate() {
                let idle = moment_duration - gate_time;
                if idle > 1e-12 && touched[q] {
                    let channel = noise.idle_channel(q, idle)?.map(|ch| plan_channel(&[q], &ch));
                    raw_idles.push((q, idle, channel));
                }
            }
        }
        for (q, was_gated) in gated.iter().enumerate() {
            if *was_gated {
                touched[q] = true;
            }
        }

        let idle = if raw_idles.is_empty() {
            IdleWork::None
        } else {
            let fused: Option<Vec<FusedIdleEntry>> = raw_idles
                .iter()
                .map(|(q, idle_ns, channel)| match channel {
                    None => Some(FusedIdleEntry { qubit: *q, idle_ns: *idle_ns, ops: Vec::new() }),
                    Some(PlannedChannel::Axis1q { ops, .. }) => Some(FusedIdleEntry {
                        qubit: *q,
                        idle_ns: *idle_ns,
                        ops: ops.clone(),
                    }),
                    Some(_) => None,
                })
                .collect();
            match fused {
                Some(entries) => IdleWork::Fused(entries),
                None => IdleWork::Sequential(raw_idles),
            }
        };
        plans.push(MomentPlan { gates, idle });
    }
    Ok(plans)
}

/// Largest fused block: sector tables stay small and cache-resident.
const FUSED_CHUNK: usize = 12;

/// Process every idle window of a moment jointly. Branches are sampled by
/// the exact chain rule on sector populations (so the joint distribution
/// matches sequential per-qubit sampling), then one combined pass applies
/// all chosen operators, drift phases, and renormalization factors.
fn fused_idle<R: Rng>(
    state: &mut StateVector,
    entries: &[FusedIdleEntry],
    drift: Option<&[f64]>,
    rng: &mut R,
) {
    for chunk in entries.chunks(FUSED_CHUNK) {
        let k = chunk.len();
        let sectors = 1usize << k;
        let gather = |i: usize| -> usize {
            let mut sec = 0usize;
            for (j, e) in chunk.iter().enumerate() {
                sec |= ((i >> e.qubit) & 1) << j;
            }
            sec
        };

        let mut pops = vec![0.0f64; sectors];
        for (i, a) in state.amplitudes().iter().enumerate() {
            pops[gather(i)] += a.norm_sqr();
        }

        let one = Complex64::new(1.0, 0.0);
        let mut f0 = vec![one; k];
        let mut f1 = vec![one; k];
        let mut swap_mask = 0usize;
        for (j, entry) in chunk.iter().enumerate() {
            let bit = 1usize << j;
            if !entry.ops.is_empty() {
                let mass: f64 = pops.iter().sum();
                let excited: f64 =
                    pops.iter().enumerate().filter(|(sec, _)| sec & bit != 0).map(|(_, p)| p).sum();
                let ground = mass - excited;
                let norm_of = |op: &AxisOp| -> f64 {
                    if op.antidiagonal {
                        // source bit 0 -> weight |e1|^2, source bit 1 -> |e0|^2
                        op.e1.norm_sqr() * ground + op.e0.norm_sqr() * excited
                    } else {
                        op.e0.norm_sqr() * ground + op.e1.norm_sqr() * excited
                    }
                };
                let total: f64 = entry.ops.iter().map(norm_of).sum();
                let mut u: f64 = rng.gen::<f64>() * total;
                let mut chosen = entry.ops.len() - 1;
                for (b, op) in entry.ops.iter().enumerate() {
                    let p = norm_of(op);
                    if u < p {
                        chosen = b;
                        break;
                    }
                    u -= p;
                }
                let op = entry.ops[chosen];
                let norm = norm_of(&op);
                let scale = if norm > 0.0 { 1.0 / norm.sqrt() } else { 0.0 };
                f0[j] = op.e0 * scale;
                f1[j] = op.e1 * scale;
                // Update sector populations for the later entries of this
                // chunk (exact conditional distribution).
                let w0 = f0[j].norm_sqr();
                let w1 = f1[j].norm_sqr();
                if op.antidiagonal {
                    swap_mask |= 1usize << entry.qubit;
                    for sec in 0..sectors {
                        if sec & bit == 0 {
                            let partner = sec | bit;
                            let new0 = w0 * pops[partner];
                            let new1 = w1 * pops[sec];
                            pops[sec] = new0;
                            pops[partner] = new1;
                        }
                    }
                } else {
                    for (sec, p) in pops.iter_mut().enumerate() {
                        *p *= if sec & bit != 0 { w1 } else { w0 };
                    }
                }
            }
            if let Some(rates) = drift {
                let theta = rates[entry.qubit] * entry.idle_ns;
                f0[j] *= Complex64::from_polar(1.0, -theta / 2.0);
                f1[j] *= Complex64::from_polar(1.0, theta / 2.0);
            }
        }

        // Per-sector combined factor, indexed by the target sector.
        let mut table = vec![one; sectors];
        for j in 0..k {
            let bit = 1usize << j;
            for (sec, t) in table.iter_mut().enumerate() {
                *t *= if sec & bit != 0 { f1[j] } else { f0[j] };
            }
        }

        let amps = state.amplitudes_mut();
        if swap_mask == 0 {
            for (i, a) in amps.iter_mut().enumerate() {
                *a *= table[gather(i)];
            }
        } else {
            for i in 0..amps.len() {
                let partner = i ^ swap_mask;
                if i < partner {
                    let a = amps[i];
                    let b = amps[partner];
                    amps[i] = table[gather(i)] * b;
                    amps[partner] = table[gather(partner)] * a;
                }
            }
        }
    }
}

/// Execute `shots` noisy trajectories of the circuit; deterministic per seed.
pub fn run_trajectories(
    circuit: &Circuit,
    noise: &NoiseModel,
    shots: u64,
    seed: u64,
) -> Result<CountsTable, NoiseError> {
    noise.cap_qubits(circuit)?;
    if shots == 0 {
        return Err(NoiseError::ZeroShots);
    }
    let plans = plan_moments(circuit, noise)?;

    let counts = (0..shots)
        .into_par_iter()
        .map(|shot| single_shot(circuit.num_qubits, &plans, noise, mix(seed, shot)))
        .fold(BTreeMap::<u64, u64>::new, |mut acc, bits| {
            *acc.entry(bits).or_insert(0) += 1;
            acc
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (bits, c) in b {
                *a.entry(bits).or_insert(0) += c;
            }
            a
        });

    let mut table = CountsTable::new(circuit.num_qubits);
    for (bits, c) in counts {
        table.add(bits, c);
    }
    Ok(table)
}

fn single_shot(n: usize, plans: &[MomentPlan], noise: &NoiseModel, shot_seed: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(shot_seed);

    let drift: Option<Vec<f64>> = if noise.drift_sigma() > 0.0 {
        let normal = Normal::new(0.0, noise.drift_sigma()).expect("validated sigma");
        Some((0..n).map(|_| normal.sample(&mut rng)).collect())
    } else {
        None
    };

    let mut state = StateVector::new(n);
    for plan in plans {
        for (gate, channels) in &plan.gates {
            state.apply_gate(gate).expect("validated circuit");
            for channel in channels {
                sample_channel(&mut state, channel, &mut rng);
            }
        }
        match &plan.idle {
            IdleWork::None => {}
            IdleWork::Fused(entries) => {
                fused_idle(&mut state, entries, drift.as_deref(), &mut rng);
            }
            IdleWork::Sequential(idles) => {
                for (q, idle, channel) in idles {
                    if let Some(channel) = channel {
                        sample_channel(&mut state, channel, &mut rng);
                    }
                    if let Some(rates) = &drift {
                        state.apply_gate(&Gate::rz(*q, rates[*q] * idle)).expect("in range");
                    }
                }
            }
        }
    }

    let outcome = state.sample_outcome(&mut rng);
    match noise.readout() {
        Some(readout) => readout.sample_measured(outcome, &mut rng),
        None => outcome,
    }
}

/// Pick one Kraus branch with probability equal to its squared norm, apply
/// it, and keep the state normalized.
fn sample_channel<R: Rng>(state: &mut StateVector, channel: &PlannedChannel, rng: &mut R) {
    match channel {
        PlannedChannel::AxisGroup { entries } => {
            fused_idle(state, entries, None, rng);
        }
        PlannedChannel::Axis1q { qubit, ops } => {
            let s = excited_population(state.amplitudes(), *qubit);
            let total: f64 = ops.iter().map(|op| op.branch_norm(s)).sum();
            let mut u: f64 = rng.gen::<f64>() * total;
            let mut chosen = ops.len() - 1;
            for (k, op) in ops.iter().enumerate() {
                let p = op.branch_norm(s);
                if u < p {
                    chosen = k;
                    break;
                }
                u -= p;
            }
            let op = &ops[chosen];
            let inv = 1.0 / op.branch_norm(s).sqrt();
            apply_axis_op(state.amplitudes_mut(), *qubit, op, inv);
        }
        PlannedChannel::PauliMix2q { low, high, ops, cumulative } => {
            let k = pick_cumulative(cumulative, rng);
            let (pl, ph) = ops[k];
            apply_pauli(state.amplitudes_mut(), *low, pl);
            apply_pauli(state.amplitudes_mut(), *high, ph);
        }
        PlannedChannel::Mix1q { qubit, ops, cumulative } => {
            let k = pick_cumulative(cumulative, rng);
            state.apply_mat2(*qubit, &ops[k]);
        }
        PlannedChannel::Mix2q { low, high, ops, cumulative } => {
            let k = pick_cumulative(cumulative, rng);
            state.apply_mat4(*low, *high, &ops[k]);
        }
        PlannedChannel::State1q { qubit, ops } => {
            let mut norms = [0.0f64; 8];
            branch_norms_1q(state.amplitudes(), *qubit, ops, &mut norms);
            let k = pick_branch(&norms[..ops.len()], rng);
            state.apply_mat2(*qubit, &ops[k]);
            rescale(state, norms[k]);
        }
        PlannedChannel::State2q { low, high, ops } => {
            let mut norms = vec![0.0f64; ops.len()];
            branch_norms_2q(state.amplitudes(), *low, *high, ops, &mut norms);
            let k = pick_branch(&norms, rng);
            state.apply_mat4(*low, *high, &ops[k]);
            rescale(state, norms[k]);
        }
    }
}

fn excited_population(amps: &[Complex64], qubit: usize) -> f64 {
    let mask = 1usize << qubit;
    let mut s = 0.0;
    for (i, a) in amps.iter().enumerate() {
        if i & mask != 0 {
            s += a.norm_sqr();
        }
    }
    s
}

/// Apply a diagonal or antidiagonal operator times a real factor in one
/// pass.
fn apply_axis_op(amps: &mut [Complex64], qubit: usize, op: &AxisOp, factor: f64) {
    let step = 1usize << qubit;
    let e0 = op.e0 * factor;
    let e1 = op.e1 * factor;
    if op.antidiagonal {
        for base in (0..amps.len()).step_by(2 * step) {
            for offset in 0..step {
                let i = base + offset;
                let j = i | step;
                let a = amps[i];
                amps[i] = e0 * amps[j];
                amps[j] = e1 * a;
            }
        }
    } else {
        for (i, a) in amps.iter_mut().enumerate() {
            *a *= if i & step == 0 { e0 } else { e1 };
        }
    }
}

fn apply_pauli(amps: &mut [Complex64], qubit: usize, p: Pauli) {
    let step = 1usize << qubit;
    match p {
        Pauli::I => {}
        Pauli::X => crate::statevector::kernel_x(amps, qubit),
        Pauli::Y => {
            let plus_i = Complex64::new(0.0, 1.0);
            let minus_i = Complex64::new(0.0, -1.0);
            for base in (0..amps.len()).step_by(2 * step) {
                for offset in 0..step {
                    let i = base + offset;
                    let j = i | step;
                    let a = amps[i];
                    amps[i] = minus_i * amps[j];
                    amps[j] = plus_i * a;
                }
            }
        }
        Pauli::Z => {
            for (i, a) in amps.iter_mut().enumerate() {
                if i & step != 0 {
                    *a = -*a;
                }
            }
        }
    }
}

fn rescale(state: &mut StateVector, branch_norm: f64) {
    if branch_norm > 0.0 {
        state.scale(1.0 / branch_norm.sqrt());
    }
}

fn pick_cumulative<R: Rng>(cumulative: &[f64], rng: &mut R) -> usize {
    let total = *cumulative.last().expect("nonempty channel");
    let u: f64 = rng.gen::<f64>() * total;
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

fn pick_branch<R: Rng>(norms: &[f64], rng: &mut R) -> usize {
    let total: f64 = norms.iter().sum();
    let mut u: f64 = rng.gen::<f64>() * total;
    for (k, &p) in norms.iter().enumerate() {
        if u < p {
            return k;
        }
        u -= p;
    }
    norms.len() - 1
}

fn branch_norms_1q(amps: &[Complex64], qubit: usize, ops: &[Mat2], norms: &mut [f64; 8]) {
    let step = 1usize << qubit;
    for base in (0..amps.len()).step_by(2 * step) {
        for offset in 0..step {
            let a = amps[base + offset];
            let b = amps[base + offset + step];
            for (k, op) in ops.iter().enumerate() {
                norms[k] += (op[0][0] * a + op[0][1] * b).norm_sqr()
                    + (op[1][0] * a + op[1][1] * b).norm_sqr();
            }
        }
    }
}

fn branch_norms_2q(amps: &[Complex64], low: usize, high: usize, ops: &[Mat4], norms: &mut [f64]) {
    let lmask = 1usize << low;
    let hmask = 1usize << high;
    for i in 0..amps.len() {
        if i & lmask == 0 && i & hmask == 0 {
            let v = [amps[i], amps[i | lmask], amps[i | hmask], amps[i | lmask | hmask]];
            for (k, op) in ops.iter().enumerate() {
                for row in op {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (c, &x) in v.iter().enumerate() {
                        acc += row[c] * x;
                    }
                    norms[k] += acc.norm_sqr();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::{auto_plan, build_mqc_circuit, MqcVariant};
    use crate::noise::{NoiseModel, NoiseToggles, ReadoutModel};
    use crate::presets::{example_20q, example_20q_entangling_order};
    use crate::statevector::Gate;

    fn bell_circuit() -> Circuit {
        let mut circuit = Circuit::new(2);
        circuit.push_gate(Gate::h(0)).unwrap();
        circuit.push_gate(Gate::cx(0, 1)).unwrap();
        circuit
    }

    #[test]
    fn noiseless_trajectories_match_direct_sampling() {
        let circuit = bell_circuit();
        let shots = 100_000;
        let counts = run_trajectories(&circuit, &NoiseModel::noiseless(2), shots, 3).unwrap();
        assert_eq!(counts.total(), shots);
        assert_eq!(counts.get(0b01) + counts.get(0b10), 0);
        let f = counts.frequency(0b00);
        assert!((f - 0.5).abs() < 0.01, "frequency {f}");
    }

    #[test]
    fn seed_determinism_and_batching_invariance() {
        let circuit = bell_circuit();
        let device = example_20q();
        let plan = auto_plan(&device, &example_20q_entangling_order()[..2]).unwrap();
        let noise = NoiseModel::from_device(&device, &plan, NoiseToggles::all_on(1e-4)).unwrap();
        let a = run_trajectories(&circuit, &noise, 5000, 99).unwrap();
        let b = run_trajectories(&circuit, &noise, 5000, 99).unwrap();
        assert_eq!(a, b);
        // Serial reference with the same per-shot seed derivation.
        let plans = plan_moments(&circuit, &noise).unwrap();
        let mut serial = CountsTable::new(2);
        for shot in 0..5000u64 {
            serial.add(single_shot(2, &plans, &noise, mix(99, shot)), 1);
        }
        assert_eq!(a, serial);
    }

    #[test]
    fn readout_error_alone_shifts_populations() {
        // Identity-circuit outcome |00>; 3% symmetric flips give
        // P(00) = 0.97^2.
        let mut circuit = Circuit::new(2);
        circuit.push_gate(Gate::rz(0, 0.0)).unwrap();
        let noise = NoiseModel::noiseless(2)
            .with_readout(ReadoutModel::symmetric(&[0.97, 0.97]).unwrap());
        let shots = 400_000;
        let counts = run_trajectories(&circuit, &noise, shots, 11).unwrap();
        let expect = 0.97f64.powi(2);
        let sigma = (expect * (1.0 - expect) / shots as f64).sqrt();
        assert!(
            (counts.frequency(0) - expect).abs() < 4.0 * sigma,
            "P(00) = {}, expect {expect}",
            counts.frequency(0)
        );
    }

    #[test]
    fn mqc_with_readout_only() {
        // N=4 sweep circuit at phi = 0 returns |0000>; with 3% readout error
        // the all-zeros frequency approaches 0.97^4.
        let device = example_20q();
        let plan = auto_plan(&device, &example_20q_entangling_order()[..4]).unwrap();
        let circuit = build_mqc_circuit(&plan, 0.0, false, MqcVariant::Ghz).unwrap();
        let noise = NoiseModel::noiseless(4)
            .with_readout(ReadoutModel::symmetric(&[0.97; 4]).unwrap());
        let shots = 400_000;
        let counts = run_trajectories(&circuit, &noise, shots, 5).unwrap();
        let expect = 0.97f64.powi(4);
        assert!((expect - 0.8853).abs() < 1e-4);
        let sigma = (expect * (1.0 - expect) / shots as f64).sqrt();
        assert!(
            (counts.frequency(0) - expect).abs() < 4.0 * sigma,
            "P(0000) = {}",
            counts.frequency(0)
        );
    }

    #[test]
    fn channel_specialization() {
        // Thermal relaxation and 1Q depolarizing hit the axis fast path;
        // 2Q depolarizing becomes a Pauli mixture; anything with off-axis
        // operators stays generic.
        let thermal = crate::noise::thermal_relaxation_channel(70.0, 76.0, 400.0).unwrap();
        assert!(matches!(plan_channel(&[0], &thermal), PlannedChannel::Axis1q { .. }));
        let depol = crate::noise::depolarizing_channel(0.02, 2).unwrap();
        assert!(matches!(plan_channel(&[0], &depol), PlannedChannel::Axis1q { .. }));
        let depol2 = crate::noise::depolarizing_channel(0.013, 4).unwrap();
        assert!(matches!(plan_channel(&[0, 1], &depol2), PlannedChannel::PauliMix2q { .. }));
        let f = std::f64::consts::FRAC_1_SQRT_2;
        let hadamard_like = KrausChannel::One(vec![[
            [Complex64::new(f, 0.0), Complex64::new(f, 0.0)],
            [Complex64::new(f, 0.0), Complex64::new(-f, 0.0)],
        ]]);
        assert!(matches!(plan_channel(&[0], &hadamard_like), PlannedChannel::Mix1q { .. }));
    }

    #[test]
    fn axis_fast_path_matches_generic_channel_action() {
        // Statistical check: thermal relaxation through the fast path
        // reproduces the exact channel populations.
        let thermal = crate::noise::thermal_relaxation_channel(50.0, 60.0, 30_000.0).unwrap();
        let planned = plan_channel(&[0], &thermal);
        let mut hist = [0u64; 2];
        let shots = 200_000u64;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..shots {
            let mut state = StateVector::new(1);
            state.apply_gate(&Gate::rxy(0, 1.2, 0.0)).unwrap();
            sample_channel(&mut state, &planned, &mut rng);
            assert!(state.norm_error() < 1e-9);
            hist[state.sample_outcome(&mut rng) as usize] += 1;
        }
        // Exact populations from the density-matrix route.
        let mut st = StateVector::new(1);
        st.apply_gate(&Gate::rxy(0, 1.2, 0.0)).unwrap();
        let mut rho = crate::noise::DensityMatrix::from_pure(&st).unwrap();
        rho.apply_kraus(&[0], &thermal);
        let p1 = rho.diagonal()[1];
        let freq = hist[1] as f64 / shots as f64;
        let sigma = (p1 * (1.0 - p1) / shots as f64).sqrt();
        assert!((freq - p1).abs() < 4.0 * sigma, "{freq} vs {p1}");
    }

    #[test]
    fn zero_shots_rejected() {
        let circuit = bell_circuit();
        assert!(matches!(
            run_trajectories(&circuit, &NoiseModel::noiseless(2), 0, 1),
            Err(NoiseError::ZeroShots)
        ));
    }
}
