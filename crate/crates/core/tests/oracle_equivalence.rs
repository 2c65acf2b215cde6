//! The two routes to the coherence amplitudes must agree: the Fourier
//! transform of the exact sweep signal, and the direct sector decomposition
//! of the density matrix.

use mqc_sim::analysis::{mqc_spectrum, SweepResult};
use mqc_sim::circuits::{phi_grid, DeviceModel, EdgeParams, EntanglingPlan, QubitParams};
use mqc_sim::noise::{density_oracle, mqc_decompose, DensityMatrix, NoiseModel, NoiseToggles};
use mqc_sim::statevector::{Circuit, Gate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn all_to_all_device(n: usize) -> DeviceModel {
    let qubit = QubitParams {
        frequency_ghz: 4.7,
        t1_us: 65.0,
        t2_us: 70.0,
        readout_fidelity: 0.97,
        error_1q: 5e-4,
        duration_1q_ns: 35.6,
    };
    let mut device = DeviceModel::new(vec![qubit; n]).unwrap();
    for a in 0..n {
        for b in a + 1..n {
            device.add_edge(a, b, EdgeParams { error_2q: 0.012, duration_2q_ns: 380.0 }).unwrap();
        }
    }
    device
}

fn random_circuit(n: usize, rng: &mut ChaCha8Rng) -> Circuit {
    let mut circuit = Circuit::new(n);
    let depth = 4 + rng.gen_range(0..8);
    for _ in 0..depth {
        match rng.gen_range(0..5) {
            0 => circuit.push_gate(Gate::h(rng.gen_range(0..n))).unwrap(),
            1 => circuit.push_gate(Gate::rz(rng.gen_range(0..n), rng.gen::<f64>() * 6.28)).unwrap(),
            2 => circuit
                .push_gate(Gate::rxy(
                    rng.gen_range(0..n),
                    rng.gen::<f64>() * 3.14,
                    rng.gen::<f64>() * 6.28,
                ))
                .unwrap(),
            3 => circuit.push_gate(Gate::x(rng.gen_range(0..n))).unwrap(),
            _ => {
                if n > 1 {
                    let a = rng.gen_range(0..n);
                    let mut b = rng.gen_range(0..n);
                    if a == b {
                        b = (b + 1) % n;
                    }
                    circuit.push_gate(Gate::cx(a, b)).unwrap();
                }
            }
        }
    }
    circuit
}

fn exact_sweep(rho: &DensityMatrix) -> SweepResult {
    let n = rho.num_qubits();
    let grid = phi_grid(n).unwrap();
    let values = grid.angles().iter().map(|&phi| rho.overlap_with_rotated(phi)).collect();
    SweepResult::new(grid, values).unwrap()
}

#[test]
fn spectrum_equals_decomposition_on_random_noisy_circuits() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..25 {
        let n = 2 + (case % 5); // 2..=6
        let device = all_to_all_device(n);
        let plan = EntanglingPlan::new(
            (0..n).collect(),
            (0..n - 1).map(|i| vec![(i, i + 1)]).collect(),
        )
        .unwrap();
        let noise = NoiseModel::from_device(&device, &plan, NoiseToggles::all_on(0.0)).unwrap();
        let circuit = random_circuit(n, &mut rng);
        let rho = density_oracle(&circuit, &noise).unwrap();
        let direct = mqc_decompose(&rho);
        let spectrum = mqc_spectrum(&exact_sweep(&rho)).unwrap();
        for q in 0..=spectrum.q_max {
            let expect = direct.at(q as i64);
            let got = spectrum.amplitude(q);
            assert!(
                (got - expect).abs() < 1e-9,
                "case {case} n={n} q={q}: {got} vs {expect}"
            );
        }
        let purity_from_sectors = direct.total();
        assert!((purity_from_sectors - rho.purity()).abs() < 1e-9, "case {case}");
    }
}

#[test]
fn sampled_ideal_mqc_support_is_two_states() {
    // A noiseless sweep circuit only ever returns the all-zeros string or
    // the string with just the root excited.
    use mqc_sim::circuits::{build_mqc_circuit, MqcVariant};
    use mqc_sim::statevector::StateVector;
    let plan =
        EntanglingPlan::new(vec![0, 1, 2, 3], (0..3).map(|i| vec![(i, i + 1)]).collect()).unwrap();
    let grid = phi_grid(4).unwrap();
    for &phi in grid.angles() {
        let circuit = build_mqc_circuit(&plan, phi, false, MqcVariant::Ghz).unwrap();
        let mut state = StateVector::new(4);
        state.apply_circuit(&circuit).unwrap();
        let counts = state.sample_counts(4096, 7).unwrap();
        for (bits, _) in counts.iter() {
            assert!(bits == 0 || bits == 1, "unexpected outcome {bits:#06b} at phi={phi}");
        }
    }
}
