//! A bundled 20-qubit example device.
//!
//! Qubits sit on a 4x5 lattice with nearest-neighbor couplers along each row
//! and vertical couplers at the row ends. Coherence times and readout
//! fidelities are realistic per-qubit calibration values; gate errors and
//! durations are typical for cross-resonance hardware. The CLI ships the
//! same device as a config file.

use crate::circuits::{DeviceModel, EdgeParams, QubitParams};

/// (frequency GHz, T1 us, T2 us, readout fidelity) per qubit.
const QUBITS_20Q: [(f64, f64, f64, f64); 20] = [
    (4.666, 88.1, 76.6, 0.981),
    (4.760, 69.0, 75.7, 0.964),
    (4.609, 58.3, 65.4, 0.972),
    (5.031, 60.9, 73.0, 0.797),
    (4.657, 69.1, 78.1, 0.966),
    (4.752, 74.4, 71.9, 0.959),
    (4.829, 60.2, 65.8, 0.981),
    (4.698, 80.7, 79.5, 0.964),
    (4.893, 64.0, 75.7, 0.965),
    (4.731, 63.3, 70.7, 0.930),
    (4.840, 59.1, 62.9, 0.966),
    (4.755, 64.1, 56.3, 0.978),
    (4.621, 85.4, 87.2, 0.966),
    (4.859, 69.4, 83.2, 0.936),
    (4.394, 101.6, 86.6, 0.935),
    (4.693, 76.1, 74.3, 0.981),
    (4.512, 70.3, 80.1, 0.950),
    (4.719, 66.4, 79.2, 0.978),
    (4.321, 73.6, 80.7, 0.930),
    (4.593, 83.3, 85.5, 0.976),
];

/// (a, b, 2Q error, 2Q duration ns) per coupler.
const EDGES_20Q: [(usize, usize, f64, f64); 22] = [
    (0, 1, 0.0087, 341.3),
    (1, 2, 0.0132, 355.6),
    (2, 3, 0.0124, 398.2),
    (3, 4, 0.0291, 481.8),
    (5, 6, 0.0096, 327.1),
    (6, 7, 0.0121, 362.7),
    (7, 8, 0.0104, 334.2),
    (8, 9, 0.0143, 412.4),
    (10, 11, 0.0116, 356.4),
    (11, 12, 0.0098, 348.4),
    (12, 13, 0.0127, 370.5),
    (13, 14, 0.0155, 419.6),
    (15, 16, 0.0139, 390.2),
    (16, 17, 0.0109, 352.0),
    (17, 18, 0.0163, 428.4),
    (18, 19, 0.0122, 377.8),
    (0, 5, 0.0118, 362.7),
    (4, 9, 0.0187, 455.1),
    (5, 10, 0.0093, 339.6),
    (9, 14, 0.0171, 433.8),
    (10, 15, 0.0112, 358.4),
    (14, 19, 0.0145, 406.2),
];

const ERROR_1Q: f64 = 5.0e-4;
const DURATION_1Q_NS: f64 = 35.6;

/// The bundled 20-qubit lattice device.
pub fn example_20q() -> DeviceModel {
    let qubits = QUBITS_20Q
        .iter()
        .map(|&(frequency_ghz, t1_us, t2_us, readout_fidelity)| QubitParams {
            frequency_ghz,
            t1_us,
            t2_us,
            readout_fidelity,
            error_1q: ERROR_1Q,
            duration_1q_ns: DURATION_1Q_NS,
        })
        .collect();
    let mut device = DeviceModel::new(qubits).expect("preset parameters are valid");
    for &(a, b, error_2q, duration_2q_ns) in &EDGES_20Q {
        device
            .add_edge(a, b, EdgeParams { error_2q, duration_2q_ns })
            .expect("preset edges are valid");
    }
    device
}

/// Entangling order for the example device: prefixes of this list give the
/// qubit set used for an `n`-qubit experiment (the first entry is the root).
/// Every prefix induces a connected subgraph.
pub fn example_20q_entangling_order() -> [usize; 20] {
    [5, 10, 6, 11, 0, 12, 7, 15, 1, 8, 13, 16, 2, 9, 17, 4, 14, 3, 18, 19]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::auto_plan;

    #[test]
    fn preset_device_is_consistent() {
        let dev = example_20q();
        assert_eq!(dev.num_qubits(), 20);
        assert_eq!(dev.edges().count(), 22);
        let order = example_20q_entangling_order();
        for n in 2..=20 {
            let plan = auto_plan(&dev, &order[..n]).expect("prefix must be connected");
            assert_eq!(plan.num_qubits(), n);
        }
    }

    #[test]
    fn eighteen_qubit_schedule_depth() {
        let dev = example_20q();
        let order = example_20q_entangling_order();
        let plan = auto_plan(&dev, &order[..18]).unwrap();
        assert!(plan.cx_depth() <= 7, "depth {}", plan.cx_depth());
    }
}
