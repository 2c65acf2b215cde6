//! Noisy execution: gate channels derived from device calibration data,
//! quasi-static drift, readout confusion, Monte Carlo trajectory sampling,
//! and an exact density-matrix oracle for small registers.

mod channels;
mod oracle;
mod trajectory;

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

pub use channels::{
    depolarizing_channel, depolarizing_fill, tensor2, thermal_relaxation_channel,
    DepolarizingFill, KrausChannel, Mat4,
};
pub use oracle::{density_oracle, mqc_decompose, random_density_matrix, DensityMatrix, MqcAmplitudes};
pub use trajectory::run_trajectories;

use crate::circuits::{DeviceModel, EntanglingPlan};
use crate::statevector::{Circuit, Gate, GateKind, StateError, MAX_QUBITS};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("register of {0} qubits exceeds the cap of {1}")]
    TooManyQubits(usize, usize),
    #[error("density-matrix oracle supports at most {0} qubits")]
    OracleTooLarge(usize),
    #[error("invalid noise parameters: {0}")]
    BadParams(String),
    #[error("Kraus channel incomplete: sum K^dagger K deviates by {0:e}")]
    IncompleteChannel(f64),
    #[error("no two-qubit calibration for logical pair ({0}, {1})")]
    MissingCalibration(usize, usize),
    #[error("readout model is invalid: {0}")]
    BadReadout(String),
    #[error("shot count must be at least 1")]
    ZeroShots,
    #[error(transparent)]
    State(#[from] StateError),
}

/// Measurement confusion: per-qubit 2x2 matrices `[measured][true]`, with an
/// optional fully correlated matrix for small registers.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutModel {
    per_qubit: Vec<[[f64; 2]; 2]>,
    full: Option<FullConfusion>,
}

#[derive(Debug, Clone, PartialEq)]
struct FullConfusion {
    num_qubits: usize,
    /// `matrix[measured][true]` over all basis states.
    matrix: Vec<Vec<f64>>,
}

impl ReadoutModel {
    /// Symmetric per-qubit flips: `p(1|0) = p(0|1) = 1 - fidelity`.
    pub fn symmetric(fidelities: &[f64]) -> Result<Self, NoiseError> {
        let mut per_qubit = Vec::with_capacity(fidelities.len());
        for (q, &f) in fidelities.iter().enumerate() {
            if !(f > 0.0 && f <= 1.0) {
                return Err(NoiseError::BadReadout(format!("fidelity {f} on qubit {q}")));
            }
            let p = 1.0 - f;
            per_qubit.push([[f, p], [p, f]]);
        }
        Ok(ReadoutModel { per_qubit, full: None })
    }

    /// Arbitrary per-qubit confusion matrices, columns summing to one.
    pub fn from_confusions(per_qubit: Vec<[[f64; 2]; 2]>) -> Result<Self, NoiseError> {
        for (q, m) in per_qubit.iter().enumerate() {
            for col in 0..2 {
                let sum = m[0][col] + m[1][col];
                if (sum - 1.0).abs() > 1e-9 || m[0][col] < 0.0 || m[1][col] < 0.0 {
                    return Err(NoiseError::BadReadout(format!(
                        "qubit {q} column {col} does not form a distribution"
                    )));
                }
            }
        }
        Ok(ReadoutModel { per_qubit, full: None })
    }

    /// Attach a fully correlated confusion matrix (`matrix[measured][true]`,
    /// dimension `2^n` with `n <= 10`); it then overrides the per-qubit ones.
    pub fn with_full_matrix(mut self, matrix: Vec<Vec<f64>>) -> Result<Self, NoiseError> {
        let n = self.per_qubit.len();
        if n > 10 {
            return Err(NoiseError::BadReadout("full confusion limited to 10 qubits".into()));
        }
        let dim = 1usize << n;
        if matrix.len() != dim || matrix.iter().any(|row| row.len() != dim) {
            return Err(NoiseError::BadReadout(format!("full confusion must be {dim}x{dim}")));
        }
        for col in 0..dim {
            let sum: f64 = (0..dim).map(|row| matrix[row][col]).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(NoiseError::BadReadout(format!("column {col} sums to {sum}")));
            }
        }
        self.full = Some(FullConfusion { num_qubits: n, matrix });
        Ok(self)
    }

    pub fn num_qubits(&self) -> usize {
        self.per_qubit.len()
    }

    pub fn confusion(&self, qubit: usize) -> &[[f64; 2]; 2] {
        &self.per_qubit[qubit]
    }

    pub fn has_full_matrix(&self) -> bool {
        self.full.is_some()
    }

    /// `p(measured | true)` for full bitstrings.
    pub fn outcome_probability(&self, measured: u64, truth: u64) -> f64 {
        if let Some(full) = &self.full {
            return full.matrix[measured as usize][truth as usize];
        }
        let mut p = 1.0;
        for (q, m) in self.per_qubit.iter().enumerate() {
            let t = ((truth >> q) & 1) as usize;
            let o = ((measured >> q) & 1) as usize;
            p *= m[o][t];
        }
        p
    }

    /// Sample a measured bitstring for a true outcome.
    pub fn sample_measured<R: Rng>(&self, truth: u64, rng: &mut R) -> u64 {
        if let Some(full) = &self.full {
            let dim = 1usize << full.num_qubits;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for measured in 0..dim {
                acc += full.matrix[measured][truth as usize];
                if u < acc {
                    return measured as u64;
                }
            }
            return (dim - 1) as u64;
        }
        let mut out = 0u64;
        for (q, m) in self.per_qubit.iter().enumerate() {
            let t = ((truth >> q) & 1) as usize;
            let one = if rng.gen::<f64>() < m[1][t] { 1u64 } else { 0 };
            out |= one << q;
        }
        out
    }

    /// Push a probability distribution through the confusion map.
    pub fn apply_to_distribution(&self, probs: &[f64]) -> Vec<f64> {
        let dim = probs.len();
        let n = dim.trailing_zeros() as usize;
        let mut out = vec![0.0; dim];
        if let Some(full) = &self.full {
            for (truth, &p) in probs.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for measured in 0..dim {
                    out[measured] += full.matrix[measured][truth] * p;
                }
            }
            return out;
        }
        // Tensor structure: apply each qubit's 2x2 map in place.
        out.copy_from_slice(probs);
        for q in 0..n {
            let m = &self.per_qubit[q];
            let step = 1usize << q;
            for base in (0..dim).step_by(2 * step) {
                for offset in 0..step {
                    let i = base + offset;
                    let j = i | step;
                    let p0 = out[i];
                    let p1 = out[j];
                    out[i] = m[0][0] * p0 + m[0][1] * p1;
                    out[j] = m[1][0] * p0 + m[1][1] * p1;
                }
            }
        }
        out
    }
}

/// Which noise processes to include when deriving a model from a device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseToggles {
    /// Depolarizing-plus-relaxation errors on gates.
    pub gate_errors: bool,
    /// Thermal relaxation on idle qubits for the balance of each moment.
    pub idle: bool,
    /// Std dev of the per-shot quasi-static Z rotation rate, rad/ns.
    pub drift_sigma: f64,
    /// Readout confusion on the final bitstring.
    pub readout: bool,
}

impl NoiseToggles {
    pub fn all_off() -> Self {
        NoiseToggles { gate_errors: false, idle: false, drift_sigma: 0.0, readout: false }
    }

    pub fn all_on(drift_sigma: f64) -> Self {
        NoiseToggles { gate_errors: true, idle: true, drift_sigma, readout: true }
    }
}

#[derive(Debug, Clone)]
struct QubitNoise {
    /// Thermal + depolarizing for a standard 1Q gate on this qubit.
    gate_ops: Vec<KrausChannel>,
}

#[derive(Debug, Clone)]
struct PairNoise {
    /// Thermal on each qubit (low, high logical index) then 2Q depolarizing.
    thermal_low: KrausChannel,
    thermal_high: KrausChannel,
    depolarizing: Option<KrausChannel>,
}

/// Per-gate channel assignments plus drift and readout for one experiment's
/// logical register.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    num_qubits: usize,
    one_qubit: Vec<Option<QubitNoise>>,
    two_qubit: BTreeMap<(usize, usize), PairNoise>,
    idle_relaxation: Option<Vec<(f64, f64)>>,
    drift_sigma: f64,
    readout: Option<ReadoutModel>,
    /// Fill diagnostics: logical sites where relaxation already exceeded the
    /// benchmarked error and the depolarizing fill was clamped to zero.
    pub fill_warnings: Vec<String>,
}

impl NoiseModel {
    /// No noise at all; trajectories reduce to plain sampling.
    pub fn noiseless(num_qubits: usize) -> Self {
        NoiseModel {
            num_qubits,
            one_qubit: vec![None; num_qubits],
            two_qubit: BTreeMap::new(),
            idle_relaxation: None,
            drift_sigma: 0.0,
            readout: None,
            fill_warnings: Vec::new(),
        }
    }

    /// Derive a model for the logical register of `plan` from device
    /// calibration data.
    pub fn from_device(
        device: &DeviceModel,
        plan: &EntanglingPlan,
        toggles: NoiseToggles,
    ) -> Result<Self, NoiseError> {
        if toggles.drift_sigma < 0.0 {
            return Err(NoiseError::BadParams("drift sigma must be nonnegative".into()));
        }
        let n = plan.num_qubits();
        let physical = plan.qubits();
        let mut model = NoiseModel::noiseless(n);
        model.drift_sigma = toggles.drift_sigma;

        if toggles.gate_errors {
            for (logical, &phys) in physical.iter().enumerate() {
                let p = device.qubit(phys);
                let thermal =
                    thermal_relaxation_channel(p.t1_us, p.t2_us, p.duration_1q_ns)?;
                let fill = depolarizing_fill(p.error_1q, &thermal, 2)?;
                if fill.truncated {
                    model.fill_warnings.push(format!(
                        "1Q gate on logical qubit {logical}: relaxation exceeds benchmarked error"
                    ));
                }
                let mut gate_ops = vec![thermal];
                if fill.lambda > 0.0 {
                    gate_ops.push(fill.channel);
                }
                model.one_qubit[logical] = Some(QubitNoise { gate_ops });
            }
            for (i, &pa) in physical.iter().enumerate() {
                for (j, &pb) in physical.iter().enumerate().skip(i + 1) {
                    let Some(edge) = device.edge(pa, pb) else { continue };
                    let qa = device.qubit(pa);
                    let qb = device.qubit(pb);
                    let thermal_low =
                        thermal_relaxation_channel(qa.t1_us, qa.t2_us, edge.duration_2q_ns)?;
                    let thermal_high =
                        thermal_relaxation_channel(qb.t1_us, qb.t2_us, edge.duration_2q_ns)?;
                    let pair = thermal_low.tensor_with(&thermal_high);
                    let fill = depolarizing_fill(edge.error_2q, &pair, 4)?;
                    if fill.truncated {
                        model.fill_warnings.push(format!(
                            "2Q gate on logical pair ({i}, {j}): relaxation exceeds benchmarked error"
                        ));
                    }
                    model.two_qubit.insert(
                        (i, j),
                        PairNoise {
                            thermal_low,
                            thermal_high,
                            depolarizing: (fill.lambda > 0.0).then_some(fill.channel),
                        },
                    );
                }
            }
        }
        if toggles.idle {
            model.idle_relaxation = Some(
                physical
                    .iter()
                    .map(|&phys| {
                        let p = device.qubit(phys);
                        (p.t1_us, p.t2_us)
                    })
                    .collect(),
            );
        }
        if toggles.readout {
            let fidelities: Vec<f64> =
                physical.iter().map(|&phys| device.qubit(phys).readout_fidelity).collect();
            model.readout = Some(ReadoutModel::symmetric(&fidelities)?);
        }
        model.validate()?;
        Ok(model)
    }

    /// Swap in a custom readout model (e.g. correlated confusion for tests).
    pub fn with_readout(mut self, readout: ReadoutModel) -> Self {
        self.readout = Some(readout);
        self
    }

    pub fn with_drift(mut self, sigma: f64) -> Self {
        self.drift_sigma = sigma;
        self
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn drift_sigma(&self) -> f64 {
        self.drift_sigma
    }

    pub fn readout(&self) -> Option<&ReadoutModel> {
        self.readout.as_ref()
    }

    pub fn is_trivial(&self) -> bool {
        self.one_qubit.iter().all(Option::is_none)
            && self.two_qubit.is_empty()
            && self.idle_relaxation.is_none()
            && self.drift_sigma == 0.0
            && self.readout.is_none()
    }

    /// Whether idle windows need processing (relaxation or drift).
    pub(crate) fn tracks_idle(&self) -> bool {
        self.idle_relaxation.is_some() || self.drift_sigma > 0.0
    }

    fn validate(&self) -> Result<(), NoiseError> {
        let check = |ch: &KrausChannel| -> Result<(), NoiseError> {
            let err = ch.completeness_error();
            if err > 1e-9 {
                return Err(NoiseError::IncompleteChannel(err));
            }
            Ok(())
        };
        for q in self.one_qubit.iter().flatten() {
            for ch in &q.gate_ops {
                check(ch)?;
            }
        }
        for pair in self.two_qubit.values() {
            check(&pair.thermal_low)?;
            check(&pair.thermal_high)?;
            if let Some(d) = &pair.depolarizing {
                check(d)?;
            }
        }
        Ok(())
    }

    /// Channels to apply after an ideal gate, in order. Empty for virtual
    /// gates and when gate errors are disabled.
    pub(crate) fn gate_channels(
        &self,
        gate: &Gate,
    ) -> Result<Vec<(Vec<usize>, &KrausChannel)>, NoiseError> {
        match gate.kind {
            GateKind::Rz { .. } => Ok(Vec::new()),
            GateKind::H { qubit }
            | GateKind::X { qubit }
            | GateKind::Rxy { qubit, .. }
            | GateKind::U1q { qubit, .. } => match &self.one_qubit[qubit] {
                None => Ok(Vec::new()),
                Some(q) => Ok(q.gate_ops.iter().map(|ch| (vec![qubit], ch)).collect()),
            },
            GateKind::Cx { control, target } => {
                if self.one_qubit.iter().all(Option::is_none) && self.two_qubit.is_empty() {
                    return Ok(Vec::new());
                }
                let key = (control.min(target), control.max(target));
                let pair = self
                    .two_qubit
                    .get(&key)
                    .ok_or(NoiseError::MissingCalibration(key.0, key.1))?;
                let mut out = vec![
                    (vec![key.0], &pair.thermal_low),
                    (vec![key.1], &pair.thermal_high),
                ];
                if let Some(d) = &pair.depolarizing {
                    out.push((vec![key.0, key.1], d));
                }
                Ok(out)
            }
        }
    }

    /// Idle relaxation channel for one qubit over `duration_ns`, if enabled.
    pub(crate) fn idle_channel(
        &self,
        qubit: usize,
        duration_ns: f64,
    ) -> Result<Option<KrausChannel>, NoiseError> {
        match &self.idle_relaxation {
            None => Ok(None),
            Some(params) => {
                let (t1, t2) = params[qubit];
                Ok(Some(thermal_relaxation_channel(t1, t2, duration_ns)?))
            }
        }
    }

    pub(crate) fn cap_qubits(&self, circuit: &Circuit) -> Result<(), NoiseError> {
        if circuit.num_qubits > MAX_QUBITS {
            return Err(NoiseError::TooManyQubits(circuit.num_qubits, MAX_QUBITS));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::auto_plan;
    use crate::presets::example_20q;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_readout_columns() {
        let ro = ReadoutModel::symmetric(&[0.97, 0.95]).unwrap();
        let m = ro.confusion(0);
        assert!((m[0][0] - 0.97).abs() < 1e-12);
        assert!((m[1][0] - 0.03).abs() < 1e-12);
        assert!((m[0][1] - 0.03).abs() < 1e-12);
    }

    #[test]
    fn outcome_probability_factorizes() {
        let ro = ReadoutModel::symmetric(&[0.98, 0.95]).unwrap();
        // truth |00>, measured |01> (qubit 0 flipped): 0.02 * 0.95.
        assert!((ro.outcome_probability(0b01, 0b00) - 0.02 * 0.95).abs() < 1e-12);
    }

    #[test]
    fn distribution_push_matches_sampling() {
        let ro = ReadoutModel::symmetric(&[0.9, 0.8]).unwrap();
        let probs = vec![0.5, 0.0, 0.0, 0.5];
        let pushed = ro.apply_to_distribution(&probs);
        assert!((pushed.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut hist = [0u64; 4];
        let shots = 200_000;
        for _ in 0..shots {
            let truth = if rng.gen::<f64>() < 0.5 { 0b00 } else { 0b11 };
            hist[ro.sample_measured(truth, &mut rng) as usize] += 1;
        }
        for k in 0..4 {
            let freq = hist[k] as f64 / shots as f64;
            assert!((freq - pushed[k]).abs() < 5e-3, "bin {k}: {freq} vs {}", pushed[k]);
        }
    }

    #[test]
    fn full_matrix_override() {
        let ro = ReadoutModel::symmetric(&[1.0, 1.0])
            .unwrap()
            .with_full_matrix(vec![
                vec![0.9, 0.0, 0.0, 0.1],
                vec![0.1, 0.9, 0.0, 0.0],
                vec![0.0, 0.1, 0.9, 0.0],
                vec![0.0, 0.0, 0.1, 0.9],
            ])
            .unwrap();
        assert!(ro.has_full_matrix());
        assert!((ro.outcome_probability(0b01, 0b00) - 0.1).abs() < 1e-12);
        let pushed = ro.apply_to_distribution(&[1.0, 0.0, 0.0, 0.0]);
        assert!((pushed[0] - 0.9).abs() < 1e-12);
        assert!((pushed[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn device_model_builds_without_warnings() {
        let device = example_20q();
        let order = crate::presets::example_20q_entangling_order();
        let plan = auto_plan(&device, &order[..10]).unwrap();
        let model = NoiseModel::from_device(&device, &plan, NoiseToggles::all_on(0.0)).unwrap();
        assert!(model.fill_warnings.is_empty(), "{:?}", model.fill_warnings);
        assert!(!model.is_trivial());
        assert!(model.readout().is_some());
    }

    #[test]
    fn gate_channel_lookup() {
        let device = example_20q();
        let order = crate::presets::example_20q_entangling_order();
        let plan = auto_plan(&device, &order[..4]).unwrap();
        let model = NoiseModel::from_device(
            &device,
            &plan,
            NoiseToggles { gate_errors: true, idle: false, drift_sigma: 0.0, readout: false },
        )
        .unwrap();
        // RZ is virtual.
        assert!(model.gate_channels(&Gate::rz(0, 1.0)).unwrap().is_empty());
        // 1Q gates carry thermal + depolarizing.
        assert_eq!(model.gate_channels(&Gate::h(0)).unwrap().len(), 2);
        // The plan's first CX pair is calibrated.
        let (c, t) = plan.cx_moments()[0][0];
        let (lc, lt) = (plan.logical_index(c).unwrap(), plan.logical_index(t).unwrap());
        assert_eq!(model.gate_channels(&Gate::cx(lc, lt)).unwrap().len(), 3);
        // A non-edge logical pair has no calibration.
        assert!(matches!(
            model.gate_channels(&Gate::cx(0, 3)),
            Err(NoiseError::MissingCalibration(_, _))
        ));
    }
}
