//! Circuit families for the coherence experiments: GHZ preparation over a
//! device topology, the return-to-origin (MQC) circuit with optional
//! refocusing pulse, parity oscillations, and graph-state variants, together
//! with the rotation-angle sweep grid and automatic CX scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

use crate::statevector::{Circuit, Gate, GateKind, StateError};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("qubit {0} is not on the device")]
    UnknownQubit(usize),
    #[error("qubit {0} listed more than once")]
    DuplicateQubit(usize),
    #[error("qubit list induces a disconnected subgraph")]
    Disconnected,
    #[error("CX schedule is not a spanning tree: {0}")]
    NotSpanningTree(String),
    #[error("({0}, {1}) is not a device edge")]
    NonAdjacentPair(usize, usize),
    #[error("plan must contain at least one qubit")]
    EmptyPlan,
    #[error("qubit appears twice in one schedule moment: {0}")]
    MomentConflict(usize),
    #[error("sweep grid requires at least one qubit")]
    InvalidGrid,
    #[error("device parameters invalid: {0}")]
    BadDevice(String),
    #[error(transparent)]
    State(#[from] StateError),
}

/// Calibrated parameters of one physical qubit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitParams {
    pub frequency_ghz: f64,
    pub t1_us: f64,
    pub t2_us: f64,
    pub readout_fidelity: f64,
    pub error_1q: f64,
    pub duration_1q_ns: f64,
}

/// Calibrated parameters of one coupler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeParams {
    pub error_2q: f64,
    pub duration_2q_ns: f64,
}

/// A device: qubit parameters plus an undirected simple coupling graph.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceModel {
    qubits: Vec<QubitParams>,
    edges: BTreeMap<(usize, usize), EdgeParams>,
}

impl DeviceModel {
    pub fn new(qubits: Vec<QubitParams>) -> Result<Self, PlanError> {
        for (i, q) in qubits.iter().enumerate() {
            if q.t1_us <= 0.0 || q.t2_us <= 0.0 {
                return Err(PlanError::BadDevice(format!("qubit {i}: T1 and T2 must be positive")));
            }
            if q.t2_us > 2.0 * q.t1_us {
                return Err(PlanError::BadDevice(format!("qubit {i}: T2 > 2*T1")));
            }
            if !(q.readout_fidelity > 0.0 && q.readout_fidelity <= 1.0) {
                return Err(PlanError::BadDevice(format!("qubit {i}: readout fidelity not in (0,1]")));
            }
            if !(0.0..1.0).contains(&q.error_1q) {
                return Err(PlanError::BadDevice(format!("qubit {i}: 1Q error not in [0,1)")));
            }
        }
        Ok(DeviceModel { qubits, edges: BTreeMap::new() })
    }

    pub fn add_edge(&mut self, a: usize, b: usize, params: EdgeParams) -> Result<(), PlanError> {
        if a >= self.qubits.len() {
            return Err(PlanError::UnknownQubit(a));
        }
        if b >= self.qubits.len() {
            return Err(PlanError::UnknownQubit(b));
        }
        if a == b {
            return Err(PlanError::BadDevice(format!("self edge on qubit {a}")));
        }
        if !(0.0..1.0).contains(&params.error_2q) {
            return Err(PlanError::BadDevice(format!("edge ({a},{b}): 2Q error not in [0,1)")));
        }
        self.edges.insert((a.min(b), a.max(b)), params);
        Ok(())
    }

    pub fn num_qubits(&self) -> usize {
        self.qubits.len()
    }

    pub fn qubit(&self, q: usize) -> &QubitParams {
        &self.qubits[q]
    }

    pub fn edge(&self, a: usize, b: usize) -> Option<&EdgeParams> {
        self.edges.get(&(a.min(b), a.max(b)))
    }

    pub fn is_edge(&self, a: usize, b: usize) -> bool {
        self.edge(a, b).is_some()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, &EdgeParams)> + '_ {
        self.edges.iter().map(|(&(a, b), p)| (a, b, p))
    }

    pub fn neighbors(&self, q: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .keys()
            .filter_map(|&(a, b)| {
                if a == q {
                    Some(b)
                } else if b == q {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }
}

/// Spanning-tree CX schedule that fans a root superposition out over a set
/// of physical qubits. Logical qubit `i` of the resulting circuits is
/// `qubits[i]`; the root is logical 0.
#[derive(Debug, Clone, PartialEq)]
pub struct EntanglingPlan {
    qubits: Vec<usize>,
    cx_moments: Vec<Vec<(usize, usize)>>,
}

impl EntanglingPlan {
    /// Build and validate a plan from physical qubits (root first) and a CX
    /// schedule in physical indices. Device adjacency is not checked here;
    /// see [`EntanglingPlan::validate_against`].
    pub fn new(
        qubits: Vec<usize>,
        cx_moments: Vec<Vec<(usize, usize)>>,
    ) -> Result<Self, PlanError> {
        if qubits.is_empty() {
            return Err(PlanError::EmptyPlan);
        }
        let set: BTreeSet<usize> = qubits.iter().copied().collect();
        if set.len() != qubits.len() {
            let dup = qubits.iter().find(|q| qubits.iter().filter(|r| r == q).count() > 1);
            return Err(PlanError::DuplicateQubit(*dup.unwrap()));
        }
        let mut reached: BTreeSet<usize> = BTreeSet::new();
        reached.insert(qubits[0]);
        for moment in &cx_moments {
            let mut busy = BTreeSet::new();
            for &(control, target) in moment {
                for q in [control, target] {
                    if !set.contains(&q) {
                        return Err(PlanError::UnknownQubit(q));
                    }
                    if !busy.insert(q) {
                        return Err(PlanError::MomentConflict(q));
                    }
                }
                if !reached.contains(&control) {
                    return Err(PlanError::NotSpanningTree(format!(
                        "control {control} used before being entangled"
                    )));
                }
                if reached.contains(&target) {
                    return Err(PlanError::NotSpanningTree(format!(
                        "target {target} entangled twice"
                    )));
                }
            }
            for &(_, target) in moment {
                reached.insert(target);
            }
        }
        if reached.len() != qubits.len() {
            return Err(PlanError::NotSpanningTree(format!(
                "{} of {} qubits never entangled",
                qubits.len() - reached.len(),
                qubits.len()
            )));
        }
        Ok(EntanglingPlan { qubits, cx_moments })
    }

    /// Check every scheduled pair against the device coupling graph.
    pub fn validate_against(&self, device: &DeviceModel) -> Result<(), PlanError> {
        for q in &self.qubits {
            if *q >= device.num_qubits() {
                return Err(PlanError::UnknownQubit(*q));
            }
        }
        for moment in &self.cx_moments {
            for &(a, b) in moment {
                if !device.is_edge(a, b) {
                    return Err(PlanError::NonAdjacentPair(a, b));
                }
            }
        }
        Ok(())
    }

    pub fn num_qubits(&self) -> usize {
        self.qubits.len()
    }

    /// Physical qubits in logical order (root first).
    pub fn qubits(&self) -> &[usize] {
        &self.qubits
    }

    pub fn root(&self) -> usize {
        self.qubits[0]
    }

    pub fn cx_moments(&self) -> &[Vec<(usize, usize)>] {
        &self.cx_moments
    }

    pub fn cx_depth(&self) -> usize {
        self.cx_moments.len()
    }

    pub fn logical_index(&self, physical: usize) -> Option<usize> {
        self.qubits.iter().position(|&q| q == physical)
    }
}

/// Which locally-equivalent state family the sweep circuit prepares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MqcVariant {
    Ghz,
    StarGraph,
    CompleteGraph,
}

/// Rotation angles `phi_j = pi j / q_max` for `j = 0 .. 2 q_max - 1`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PhiGrid {
    q_max: usize,
    angles: Vec<f64>,
}

impl PhiGrid {
    pub fn new(q_max: usize) -> Self {
        assert!(q_max >= 1);
        let angles = (0..2 * q_max).map(|j| PI * j as f64 / q_max as f64).collect();
        PhiGrid { q_max, angles }
    }

    pub fn q_max(&self) -> usize {
        self.q_max
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Sweep grid for an `n`-qubit experiment: `q_max = n + 1`, so the highest
/// detectable coherence order `n` sits strictly below the Nyquist edge.
pub fn phi_grid(num_qubits: usize) -> Result<PhiGrid, PlanError> {
    if num_qubits == 0 {
        return Err(PlanError::InvalidGrid);
    }
    Ok(PhiGrid::new(num_qubits + 1))
}

/// H on the root followed by the plan's CX fan-out moments. On `|0...0>`
/// this prepares the GHZ state exactly.
pub fn build_ghz_prep(plan: &EntanglingPlan) -> Result<Circuit, PlanError> {
    let mut circuit = Circuit::new(plan.num_qubits());
    circuit.push_layer(vec![Gate::h(0)])?;
    for moment in plan.cx_moments() {
        let gates = moment
            .iter()
            .map(|&(c, t)| {
                Gate::cx(plan.logical_index(c).unwrap(), plan.logical_index(t).unwrap())
            })
            .collect();
        circuit.push_layer(gates)?;
    }
    Ok(circuit)
}

fn append_inverted_prep(circuit: &mut Circuit, prep: &Circuit) -> Result<(), PlanError> {
    // H, CX and CZ are self-inverse, so inverting the prep is replaying its
    // moments in reverse order (gates within a moment commute by disjointness).
    for moment in prep.moments.iter().rev() {
        circuit.push_layer(moment.gates.clone())?;
    }
    Ok(())
}

fn graph_state_prep(plan: &EntanglingPlan, edges: &[(usize, usize)]) -> Result<Circuit, PlanError> {
    let n = plan.num_qubits();
    let mut circuit = Circuit::new(n);
    circuit.push_layer((0..n).map(Gate::h).collect())?;
    for &(a, b) in edges {
        // CZ via H-conjugated CX on the second qubit.
        circuit.push_gate(Gate::h(b))?;
        circuit.push_gate(Gate::cx(a, b))?;
        circuit.push_gate(Gate::h(b))?;
    }
    Ok(circuit)
}

fn variant_prep(plan: &EntanglingPlan, variant: MqcVariant) -> Result<Circuit, PlanError> {
    let n = plan.num_qubits();
    match variant {
        MqcVariant::Ghz => build_ghz_prep(plan),
        MqcVariant::StarGraph => {
            let edges: Vec<(usize, usize)> = (1..n).map(|j| (0, j)).collect();
            graph_state_prep(plan, &edges)
        }
        MqcVariant::CompleteGraph => {
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    edges.push((i, j));
                }
            }
            graph_state_prep(plan, &edges)
        }
    }
}

fn rotation_layers(
    circuit: &mut Circuit,
    n: usize,
    phi: f64,
    variant: MqcVariant,
) -> Result<(), PlanError> {
    match variant {
        MqcVariant::Ghz => {
            circuit.push_layer((0..n).map(|q| Gate::rz(q, phi)).collect())?;
        }
        MqcVariant::StarGraph => {
            // Rotation on the hub, Hadamard-conjugated rotation on the spokes.
            if n > 1 {
                circuit.push_layer((1..n).map(Gate::h).collect())?;
            }
            circuit.push_layer((0..n).map(|q| Gate::rz(q, phi)).collect())?;
            if n > 1 {
                circuit.push_layer((1..n).map(Gate::h).collect())?;
            }
        }
        MqcVariant::CompleteGraph => {
            // X-axis conjugated rotation on every qubit.
            circuit.push_layer((0..n).map(|q| Gate::rxy(q, -FRAC_PI_2, 0.0)).collect())?;
            circuit.push_layer((0..n).map(|q| Gate::rz(q, phi)).collect())?;
            circuit.push_layer((0..n).map(|q| Gate::rxy(q, FRAC_PI_2, 0.0)).collect())?;
        }
    }
    Ok(())
}

/// Full sweep circuit: prepare, optionally refocus with a collective
/// pi-pulse, rotate collectively by `phi`, unprepare, measure all qubits.
pub fn build_mqc_circuit(
    plan: &EntanglingPlan,
    phi: f64,
    refocus: bool,
    variant: MqcVariant,
) -> Result<Circuit, PlanError> {
    let n = plan.num_qubits();
    let prep = variant_prep(plan, variant)?;
    let mut circuit = prep.clone();
    if refocus {
        circuit.push_layer((0..n).map(Gate::x).collect())?;
    }
    rotation_layers(&mut circuit, n, phi, variant)?;
    append_inverted_prep(&mut circuit, &prep)?;
    circuit.measure_all();
    Ok(circuit)
}

/// GHZ preparation followed by a collective pi/2 rotation about the
/// equatorial axis at angle `phi`, then a Z-basis measurement of all qubits.
pub fn build_parity_circuit(plan: &EntanglingPlan, phi: f64) -> Result<Circuit, PlanError> {
    let n = plan.num_qubits();
    let mut circuit = build_ghz_prep(plan)?;
    // exp(+i pi/4 (cos(phi) X + sin(phi) Y)) on every qubit.
    circuit.push_layer((0..n).map(|q| Gate::rxy(q, -FRAC_PI_2, phi)).collect())?;
    circuit.measure_all();
    Ok(circuit)
}

/// Overwrite gate durations with device calibration values, mapping logical
/// qubits through the plan. Pairs without a calibrated coupler and virtual
/// Z rotations keep their defaults.
pub fn stamp_durations(circuit: &mut Circuit, device: &DeviceModel, plan: &EntanglingPlan) {
    let physical = plan.qubits();
    for moment in &mut circuit.moments {
        for gate in &mut moment.gates {
            match gate.kind {
                GateKind::Rz { .. } => {}
                GateKind::Cx { control, target } => {
                    if let Some(edge) = device.edge(physical[control], physical[target]) {
                        gate.duration_ns = edge.duration_2q_ns;
                    }
                }
                GateKind::H { qubit }
                | GateKind::X { qubit }
                | GateKind::Rxy { qubit, .. }
                | GateKind::U1q { qubit, .. } => {
                    gate.duration_ns = device.qubit(physical[qubit]).duration_1q_ns;
                }
            }
        }
    }
}

/// Greedy breadth-first CX schedule over the induced subgraph: each moment
/// pairs every available entangled qubit with its lowest-index unentangled
/// neighbor, so no qubit appears in two gates of one moment.
pub fn auto_plan(device: &DeviceModel, qubit_list: &[usize]) -> Result<EntanglingPlan, PlanError> {
    if qubit_list.is_empty() {
        return Err(PlanError::EmptyPlan);
    }
    let set: BTreeSet<usize> = qubit_list.iter().copied().collect();
    if set.len() != qubit_list.len() {
        let dup = qubit_list
            .iter()
            .find(|q| qubit_list.iter().filter(|r| r == q).count() > 1)
            .unwrap();
        return Err(PlanError::DuplicateQubit(*dup));
    }
    for &q in qubit_list {
        if q >= device.num_qubits() {
            return Err(PlanError::UnknownQubit(q));
        }
    }

    let root = qubit_list[0];
    let mut entangled: BTreeSet<usize> = BTreeSet::new();
    entangled.insert(root);
    let mut moments: Vec<Vec<(usize, usize)>> = Vec::new();
    while entangled.len() < set.len() {
        let mut moment = Vec::new();
        let mut busy: BTreeSet<usize> = BTreeSet::new();
        for &control in &entangled {
            if busy.contains(&control) {
                continue;
            }
            let target = device
                .neighbors(control)
                .into_iter()
                .find(|t| set.contains(t) && !entangled.contains(t) && !busy.contains(t));
            if let Some(target) = target {
                busy.insert(control);
                busy.insert(target);
                moment.push((control, target));
            }
        }
        if moment.is_empty() {
            return Err(PlanError::Disconnected);
        }
        for &(_, t) in &moment {
            entangled.insert(t);
        }
        moments.push(moment);
    }
    let plan = EntanglingPlan::new(qubit_list.to_vec(), moments)?;
    plan.validate_against(device)?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statevector::StateVector;

    fn uniform_qubit() -> QubitParams {
        QubitParams {
            frequency_ghz: 4.7,
            t1_us: 70.0,
            t2_us: 76.0,
            readout_fidelity: 0.97,
            error_1q: 4e-4,
            duration_1q_ns: 35.6,
        }
    }

    fn device_with_edges(n: usize, edges: &[(usize, usize)]) -> DeviceModel {
        let mut dev = DeviceModel::new(vec![uniform_qubit(); n]).unwrap();
        for &(a, b) in edges {
            dev.add_edge(a, b, EdgeParams { error_2q: 0.012, duration_2q_ns: 400.0 }).unwrap();
        }
        dev
    }

    fn chain_plan(n: usize) -> EntanglingPlan {
        let moments = (0..n - 1).map(|i| vec![(i, i + 1)]).collect();
        EntanglingPlan::new((0..n).collect(), moments).unwrap()
    }

    fn run_noiseless(circuit: &Circuit) -> StateVector {
        let mut st = StateVector::new(circuit.num_qubits);
        st.apply_circuit(circuit).unwrap();
        st
    }

    #[test]
    fn bell_plan_produces_bell_state() {
        let plan = EntanglingPlan::new(vec![0, 1], vec![vec![(0, 1)]]).unwrap();
        let circuit = build_ghz_prep(&plan).unwrap();
        let st = run_noiseless(&circuit);
        assert!((st.probability(0b00).unwrap() - 0.5).abs() < 1e-12);
        assert!((st.probability(0b11).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn chain_and_fanout_agree() {
        for n in [3usize, 6, 10] {
            let chain = build_ghz_prep(&chain_plan(n)).unwrap();
            // Balanced fan-out: every already-entangled qubit recruits one
            // more per moment (valid against an all-to-all device).
            let mut moments = Vec::new();
            let mut have = 1usize;
            while have < n {
                let take = have.min(n - have);
                moments.push((0..take).map(|i| (i, have + i)).collect());
                have += take;
            }
            let fanout_plan = EntanglingPlan::new((0..n).collect(), moments).unwrap();
            let fanout = build_ghz_prep(&fanout_plan).unwrap();
            let a = run_noiseless(&chain);
            let b = run_noiseless(&fanout);
            for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
                assert!((x - y).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn single_qubit_mqc_is_ramsey() {
        let plan = EntanglingPlan::new(vec![0], vec![]).unwrap();
        let circuit = build_mqc_circuit(&plan, PI, false, MqcVariant::Ghz).unwrap();
        let st = run_noiseless(&circuit);
        assert!(st.probability(0).unwrap() < 1e-12);
    }

    #[test]
    fn mqc_identity_at_phi_zero() {
        let plan = chain_plan(4);
        for refocus in [false, true] {
            let circuit = build_mqc_circuit(&plan, 0.0, refocus, MqcVariant::Ghz).unwrap();
            let st = run_noiseless(&circuit);
            assert!((st.probability(0).unwrap() - 1.0).abs() < 1e-12, "refocus={refocus}");
        }
    }

    #[test]
    fn mqc_collective_phase() {
        // P(0...0) = (1 + cos(n phi)) / 2 at every grid point.
        for n in [1usize, 2, 4, 7] {
            let plan = chain_plan(n.max(1));
            let grid = phi_grid(n).unwrap();
            for (j, &phi) in grid.angles().iter().enumerate() {
                for refocus in [false, true] {
                    let circuit = build_mqc_circuit(&plan, phi, refocus, MqcVariant::Ghz).unwrap();
                    let st = run_noiseless(&circuit);
                    let expect = 0.5 * (1.0 + (n as f64 * phi).cos());
                    let got = st.probability(0).unwrap();
                    assert!(
                        (got - expect).abs() < 1e-9,
                        "n={n} j={j} refocus={refocus}: {got} vs {expect}"
                    );
                }
            }
        }
    }

    #[test]
    fn mqc_value_at_pi_fifth() {
        let plan = chain_plan(4);
        let circuit = build_mqc_circuit(&plan, PI / 5.0, false, MqcVariant::Ghz).unwrap();
        let st = run_noiseless(&circuit);
        let expect = 0.5 * (1.0 + (4.0 * PI / 5.0).cos());
        assert!((st.probability(0).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.09549150281252633).abs() < 1e-12);
    }

    #[test]
    fn variant_sweeps_match_ghz_pointwise() {
        let n = 3;
        let plan = chain_plan(n);
        let grid = phi_grid(n).unwrap();
        for &phi in grid.angles() {
            let ghz = run_noiseless(&build_mqc_circuit(&plan, phi, false, MqcVariant::Ghz).unwrap())
                .probability(0)
                .unwrap();
            for variant in [MqcVariant::StarGraph, MqcVariant::CompleteGraph] {
                let got = run_noiseless(&build_mqc_circuit(&plan, phi, false, variant).unwrap())
                    .probability(0)
                    .unwrap();
                assert!((got - ghz).abs() < 1e-9, "{variant:?} phi={phi}: {got} vs {ghz}");
            }
        }
    }

    #[test]
    fn parity_oscillation_two_qubits() {
        // <ZZ> oscillates as cos(2 phi + const) with unit amplitude.
        let plan = chain_plan(2);
        let grid = PhiGrid::new(3);
        let mut values = Vec::new();
        for &phi in grid.angles() {
            let circuit = build_parity_circuit(&plan, phi).unwrap();
            let st = run_noiseless(&circuit);
            let mut parity = 0.0;
            for (k, p) in st.probabilities().iter().enumerate() {
                parity += if (k as u64).count_ones() % 2 == 0 { *p } else { -*p };
            }
            values.push((phi, parity));
        }
        // Frequency-2 Fourier component: z = q_max * A * e^{-i delta} for a
        // signal A cos(2 phi + delta) over this grid.
        let z: num_complex::Complex64 = values
            .iter()
            .map(|&(phi, p)| num_complex::Complex64::from_polar(p, 2.0 * phi))
            .sum();
        let amplitude = z.norm() / grid.q_max() as f64;
        assert!((amplitude - 1.0).abs() < 1e-9, "amplitude {amplitude}");
        let delta = -z.arg();
        for &(phi, p) in &values {
            assert!((p - (2.0 * phi + delta).cos()).abs() < 1e-9, "phi={phi}");
        }
    }

    #[test]
    fn phi_grid_examples() {
        let g = phi_grid(4).unwrap();
        assert_eq!(g.q_max(), 5);
        assert_eq!(g.len(), 10);
        for (j, &phi) in g.angles().iter().enumerate() {
            assert!((phi - PI * j as f64 / 5.0).abs() < 1e-15);
        }
        let g1 = phi_grid(1).unwrap();
        assert_eq!(g1.angles(), &[0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2]);
        assert_eq!(phi_grid(0).unwrap_err(), PlanError::InvalidGrid);
        for n in 1..=12usize {
            let g = phi_grid(n).unwrap();
            let s: f64 = g.angles().iter().map(|&phi| (n as f64 * phi).cos()).sum();
            assert!(s.abs() < 1e-9, "n={n}: sum {s}");
        }
    }

    #[test]
    fn auto_plan_path() {
        let dev = device_with_edges(3, &[(0, 1), (1, 2)]);
        let plan = auto_plan(&dev, &[0, 1, 2]).unwrap();
        assert_eq!(plan.cx_moments(), &[vec![(0, 1)], vec![(1, 2)]]);
    }

    #[test]
    fn auto_plan_star_center_serializes() {
        let dev = device_with_edges(11, &[(5, 0), (5, 6), (5, 10)]);
        let plan = auto_plan(&dev, &[5, 0, 6, 10]).unwrap();
        assert_eq!(plan.cx_depth(), 3);
        for moment in plan.cx_moments() {
            assert_eq!(moment.len(), 1);
        }
    }

    #[test]
    fn auto_plan_rejects_disconnected() {
        let dev = device_with_edges(4, &[(0, 1), (2, 3)]);
        assert_eq!(auto_plan(&dev, &[0, 1, 2]).unwrap_err(), PlanError::Disconnected);
    }

    #[test]
    fn plan_validation_errors() {
        assert!(matches!(
            EntanglingPlan::new(vec![0, 1], vec![vec![(1, 0)]]),
            Err(PlanError::NotSpanningTree(_))
        ));
        assert!(matches!(
            EntanglingPlan::new(vec![0, 1, 2], vec![vec![(0, 1)]]),
            Err(PlanError::NotSpanningTree(_))
        ));
        assert!(matches!(
            EntanglingPlan::new(vec![0, 1, 2], vec![vec![(0, 1), (0, 2)]]),
            Err(PlanError::MomentConflict(0))
        ));
        let dev = device_with_edges(3, &[(0, 1)]);
        let plan = EntanglingPlan::new(vec![0, 1, 2], vec![vec![(0, 1)], vec![(1, 2)]]).unwrap();
        assert_eq!(plan.validate_against(&dev).unwrap_err(), PlanError::NonAdjacentPair(1, 2));
    }

    #[test]
    fn refocus_layer_sits_before_rotation() {
        let plan = chain_plan(3);
        let plain = build_mqc_circuit(&plan, 0.3, false, MqcVariant::Ghz).unwrap();
        let refocused = build_mqc_circuit(&plan, 0.3, true, MqcVariant::Ghz).unwrap();
        assert_eq!(refocused.moments.len(), plain.moments.len() + 1);
        let x_moment = &refocused.moments[plan.cx_depth() + 1];
        assert_eq!(x_moment.gates.len(), 3);
    }
}
