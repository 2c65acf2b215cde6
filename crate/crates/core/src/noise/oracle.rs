//! Exact density-matrix evolution for small registers. This is the test
//! oracle the trajectory sampler is checked against, and the source of
//! exact coherence amplitudes.
//!
//! The matrix is stored as vec(rho) with index `row | col << n`, so gate and
//! Kraus kernels are the statevector kernels applied to the row half and,
//! conjugated, to the column half.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{KrausChannel, NoiseError, NoiseModel};
use crate::statevector::{
    kernel_cx, kernel_mat2, kernel_mat4, kernel_rz, kernel_x, Circuit, Gate, GateKind, Mat2,
    StateVector,
};

/// Largest register the oracle accepts.
pub const ORACLE_MAX_QUBITS: usize = 8;

/// Exact density matrix over `2^n x 2^n` complex entries, `n <= 8`.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    num_qubits: usize,
    elems: Vec<Complex64>,
}

fn conj2(m: &Mat2) -> Mat2 {
    [[m[0][0].conj(), m[0][1].conj()], [m[1][0].conj(), m[1][1].conj()]]
}

impl DensityMatrix {
    /// `|0...0><0...0|`.
    pub fn new(num_qubits: usize) -> Result<Self, NoiseError> {
        if num_qubits == 0 || num_qubits > ORACLE_MAX_QUBITS {
            return Err(NoiseError::OracleTooLarge(ORACLE_MAX_QUBITS));
        }
        let dim = 1usize << num_qubits;
        let mut elems = vec![Complex64::new(0.0, 0.0); dim * dim];
        elems[0] = Complex64::new(1.0, 0.0);
        Ok(DensityMatrix { num_qubits, elems })
    }

    pub fn from_pure(state: &StateVector) -> Result<Self, NoiseError> {
        let n = state.num_qubits();
        if n > ORACLE_MAX_QUBITS {
            return Err(NoiseError::OracleTooLarge(ORACLE_MAX_QUBITS));
        }
        let dim = 1usize << n;
        let amps = state.amplitudes();
        let mut elems = vec![Complex64::new(0.0, 0.0); dim * dim];
        for row in 0..dim {
            for col in 0..dim {
                elems[row | (col << n)] = amps[row] * amps[col].conj();
            }
        }
        Ok(DensityMatrix { num_qubits: n, elems })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.num_qubits
    }

    pub fn element(&self, row: usize, col: usize) -> Complex64 {
        self.elems[row | (col << self.num_qubits)]
    }

    pub fn set_element(&mut self, row: usize, col: usize, value: Complex64) {
        self.elems[row | (col << self.num_qubits)] = value;
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim()).map(|k| self.element(k, k)).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.element(k, k).re).collect()
    }

    /// `Tr(rho^2)`; equals the sum of squared element magnitudes.
    pub fn purity(&self) -> f64 {
        self.elems.iter().map(|e| e.norm_sqr()).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for row in 0..self.dim() {
            for col in row..self.dim() {
                err = err.max((self.element(row, col) - self.element(col, row).conj()).norm());
            }
        }
        err
    }

    /// Cholesky-based positive semidefiniteness check of `rho + tol I`.
    pub fn is_positive_semidefinite(&self, tol: f64) -> bool {
        let dim = self.dim();
        let mut m: Vec<Complex64> = (0..dim * dim)
            .map(|k| {
                let (row, col) = (k % dim, k / dim);
                let mut v = self.element(row, col);
                if row == col {
                    v += tol;
                }
                v
            })
            .collect();
        for j in 0..dim {
            let mut d = m[j + j * dim].re;
            for k in 0..j {
                d -= m[j + k * dim].norm_sqr();
            }
            if d < 0.0 {
                return false;
            }
            let d = d.sqrt();
            m[j + j * dim] = Complex64::new(d, 0.0);
            if d == 0.0 {
                continue;
            }
            for i in j + 1..dim {
                let mut v = m[i + j * dim];
                for k in 0..j {
                    v -= m[i + k * dim] * m[j + k * dim].conj();
                }
                m[i + j * dim] = v / d;
            }
        }
        true
    }

    pub fn apply_gate(&mut self, gate: &Gate) -> Result<(), NoiseError> {
        let n = self.num_qubits;
        match gate.kind {
            GateKind::H { qubit } => {
                let f = std::f64::consts::FRAC_1_SQRT_2;
                let m = [
                    [Complex64::new(f, 0.0), Complex64::new(f, 0.0)],
                    [Complex64::new(f, 0.0), Complex64::new(-f, 0.0)],
                ];
                kernel_mat2(&mut self.elems, qubit, &m);
                kernel_mat2(&mut self.elems, qubit + n, &conj2(&m));
            }
            GateKind::X { qubit } => {
                kernel_x(&mut self.elems, qubit);
                kernel_x(&mut self.elems, qubit + n);
            }
            GateKind::Cx { control, target } => {
                kernel_cx(&mut self.elems, control, target);
                kernel_cx(&mut self.elems, control + n, target + n);
            }
            GateKind::Rz { qubit, theta } => {
                kernel_rz(&mut self.elems, qubit, theta);
                kernel_rz(&mut self.elems, qubit + n, -theta);
            }
            GateKind::Rxy { qubit, theta, axis } => {
                let m = crate::statevector::rxy_matrix(theta, axis);
                kernel_mat2(&mut self.elems, qubit, &m);
                kernel_mat2(&mut self.elems, qubit + n, &conj2(&m));
            }
            GateKind::U1q { qubit, matrix } => {
                kernel_mat2(&mut self.elems, qubit, &matrix);
                kernel_mat2(&mut self.elems, qubit + n, &conj2(&matrix));
            }
        }
        Ok(())
    }

    /// Exact channel application `rho -> sum_i K_i rho K_i^dagger`.
    pub fn apply_kraus(&mut self, qubits: &[usize], channel: &KrausChannel) {
        let n = self.num_qubits;
        let mut acc = vec![Complex64::new(0.0, 0.0); self.elems.len()];
        match channel {
            KrausChannel::One(ops) => {
                let q = qubits[0];
                for op in ops {
                    let mut branch = self.elems.clone();
                    kernel_mat2(&mut branch, q, op);
                    kernel_mat2(&mut branch, q + n, &conj2(op));
                    for (a, b) in acc.iter_mut().zip(&branch) {
                        *a += b;
                    }
                }
            }
            KrausChannel::Two(ops) => {
                let (low, high) = (qubits[0], qubits[1]);
                for op in ops {
                    let mut conj_op = *op;
                    for row in conj_op.iter_mut() {
                        for e in row.iter_mut() {
                            *e = e.conj();
                        }
                    }
                    let mut branch = self.elems.clone();
                    kernel_mat4(&mut branch, low, high, op);
                    kernel_mat4(&mut branch, low + n, high + n, &conj_op);
                    for (a, b) in acc.iter_mut().zip(&branch) {
                        *a += b;
                    }
                }
            }
        }
        self.elems = acc;
    }

    /// Damp coherences between the two levels of one qubit by `factor`.
    pub fn apply_dephasing(&mut self, qubit: usize, factor: f64) {
        let n = self.num_qubits;
        let row_mask = 1usize << qubit;
        let col_mask = 1usize << (qubit + n);
        for (k, e) in self.elems.iter_mut().enumerate() {
            let rb = k & row_mask != 0;
            let cb = k & col_mask != 0;
            if rb != cb {
                *e *= factor;
            }
        }
    }

    /// Conjugate by the collective rotation `exp(-i phi/2 sum_j Z_j)`.
    pub fn rotate_collective_z(&mut self, phi: f64) {
        let n = self.num_qubits;
        let dim = self.dim();
        for row in 0..dim {
            for col in 0..dim {
                let q = (col.count_ones() as i32 - row.count_ones() as i32) as f64;
                if q != 0.0 {
                    let phase = Complex64::from_polar(1.0, -phi * q);
                    self.elems[row | (col << n)] *= phase;
                }
            }
        }
    }

    /// Overlap `Tr(rho_phi rho)` with the collectively rotated copy; this is
    /// the exact sweep signal of the state.
    pub fn overlap_with_rotated(&self, phi: f64) -> f64 {
        let dim = self.dim();
        let mut s = 0.0;
        for row in 0..dim {
            for col in 0..dim {
                let q = (col.count_ones() as i32 - row.count_ones() as i32) as f64;
                s += (phi * q).cos() * self.element(row, col).norm_sqr();
            }
        }
        s
    }

    /// `<GHZ| rho |GHZ>`.
    pub fn ghz_fidelity(&self) -> f64 {
        let corner = self.dim() - 1;
        0.5 * (self.element(0, 0).re + self.element(corner, corner).re)
            + self.element(0, corner).re
    }

    /// Population of `|0...0>` and `|1...1>`.
    pub fn extreme_populations(&self) -> (f64, f64) {
        let corner = self.dim() - 1;
        (self.element(0, 0).re, self.element(corner, corner).re)
    }

    /// Phase-align the extreme corner element so it is real nonnegative, by
    /// a collective Z rotation.
    pub fn align_corner_phase(&mut self) {
        let corner = self.element(0, self.dim() - 1);
        if corner.norm() > 0.0 {
            let phi = corner.arg() / self.num_qubits as f64;
            self.rotate_collective_z(phi);
        }
    }
}

/// Exact coherence amplitudes `I_q` for `q = -n ..= n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MqcAmplitudes {
    num_qubits: usize,
    values: Vec<f64>,
}

impl MqcAmplitudes {
    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    /// `I_q`; zero outside `-n ..= n`.
    pub fn at(&self, q: i64) -> f64 {
        let n = self.num_qubits as i64;
        if q < -n || q > n {
            0.0
        } else {
            self.values[(q + n) as usize]
        }
    }

    /// `sum_q I_q`, which equals the purity of the decomposed state.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Decompose by excitation-number difference: element `(row, col)` belongs
/// to sector `q = ones(col) - ones(row)`, and `I_q = Tr(rho_q rho_-q)` is
/// the squared weight of that sector.
pub fn mqc_decompose(rho: &DensityMatrix) -> MqcAmplitudes {
    let n = rho.num_qubits();
    let dim = rho.dim();
    let mut values = vec![0.0; 2 * n + 1];
    for row in 0..dim {
        for col in 0..dim {
            let q = col.count_ones() as i64 - row.count_ones() as i64;
            values[(q + n as i64) as usize] += rho.element(row, col).norm_sqr();
        }
    }
    let amps = MqcAmplitudes { num_qubits: n, values };
    debug_assert!(rho.hermiticity_error() < 1e-8, "decomposing a non-Hermitian matrix");
    debug_assert!({
        // Rotation property and sector orthogonality together give
        // S_phi = sum_q exp(-i q phi) I_q; spot-check it on one angle.
        let phi = 0.7368;
        let direct = rho.overlap_with_rotated(phi);
        let from_sectors: f64 = (-(n as i64)..=n as i64)
            .map(|q| (q as f64 * phi).cos() * amps.at(q))
            .sum();
        (direct - from_sectors).abs() < 1e-9
    });
    for q in 0..=n as i64 {
        debug_assert!((amps.at(q) - amps.at(-q)).abs() < 1e-10, "I_q asymmetry at q={q}");
    }
    amps
}

/// Evolve `|0...0><0...0|` through the circuit under the noise model,
/// exactly. Quasi-static drift enters as its average dephasing per idle
/// segment, which drops the shot-to-shot correlations the trajectory
/// sampler keeps; with zero drift the trajectory histogram converges to
/// this matrix's diagonal as shots grow.
pub fn density_oracle(circuit: &Circuit, noise: &NoiseModel) -> Result<DensityMatrix, NoiseError> {
    let n = circuit.num_qubits;
    let mut rho = DensityMatrix::new(n)?;
    let sigma = noise.drift_sigma();
    for moment in &circuit.moments {
        let mdur = moment.duration_ns();
        let mut busy = vec![0.0f64; n];
        for gate in &moment.gates {
            rho.apply_gate(gate)?;
            for q in gate.qubits() {
                busy[q] = gate.duration_ns;
            }
            for (qubits, channel) in noise.gate_channels(gate)? {
                rho.apply_kraus(&qubits, channel);
            }
        }
        for q in 0..n {
            let idle = mdur - busy[q];
            if idle > 1e-12 {
                if let Some(ch) = noise.idle_channel(q, idle)? {
                    rho.apply_kraus(&[q], &ch);
                }
                if sigma > 0.0 {
                    let spread = sigma * idle;
                    rho.apply_dephasing(q, (-0.5 * spread * spread).exp());
                }
            }
        }
    }
    Ok(rho)
}

/// A reproducible random mixed state of the given rank (Ginibre ensemble).
pub fn random_density_matrix(
    num_qubits: usize,
    rank: usize,
    seed: u64,
) -> Result<DensityMatrix, NoiseError> {
    if num_qubits == 0 || num_qubits > ORACLE_MAX_QUBITS {
        return Err(NoiseError::OracleTooLarge(ORACLE_MAX_QUBITS));
    }
    let dim = 1usize << num_qubits;
    let rank = rank.clamp(1, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || {
        // Box-Muller is fine here; only used to seed the ensemble.
        let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let g: Vec<Complex64> =
        (0..dim * rank).map(|_| Complex64::new(gauss(), gauss())).collect();
    let mut rho = DensityMatrix::new(num_qubits)?;
    let mut trace = 0.0;
    for row in 0..dim {
        for col in 0..dim {
            let mut v = Complex64::new(0.0, 0.0);
            for k in 0..rank {
                v += g[row * rank + k] * g[col * rank + k].conj();
            }
            rho.set_element(row, col, v);
            if row == col {
                trace += v.re;
            }
        }
    }
    let inv = 1.0 / trace;
    for row in 0..dim {
        for col in 0..dim {
            let v = rho.element(row, col) * inv;
            rho.set_element(row, col, v);
        }
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{thermal_relaxation_channel, NoiseModel};
    use crate::statevector::Gate;

    fn ghz_density(n: usize) -> DensityMatrix {
        let mut st = StateVector::new(n);
        st.apply_gate(&Gate::h(0)).unwrap();
        for t in 1..n {
            st.apply_gate(&Gate::cx(0, t)).unwrap();
        }
        DensityMatrix::from_pure(&st).unwrap()
    }

    #[test]
    fn noiseless_bell_is_rank_one() {
        let mut circuit = Circuit::new(2);
        circuit.push_gate(Gate::h(0)).unwrap();
        circuit.push_gate(Gate::cx(0, 1)).unwrap();
        let rho = density_oracle(&circuit, &NoiseModel::noiseless(2)).unwrap();
        assert!((rho.purity() - 1.0).abs() < 1e-12);
        assert!((rho.trace().re - 1.0).abs() < 1e-12);
        assert!(rho.hermiticity_error() < 1e-12);
        assert!(rho.is_positive_semidefinite(1e-8));
        for (row, col) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            assert!((rho.element(row, col) - Complex64::new(0.5, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn ideal_ghz_has_four_corners() {
        let rho = ghz_density(4);
        let mut nonzero = 0;
        for row in 0..16 {
            for col in 0..16 {
                if rho.element(row, col).norm() > 1e-12 {
                    nonzero += 1;
                    assert!((rho.element(row, col).norm() - 0.5).abs() < 1e-12);
                }
            }
        }
        assert_eq!(nonzero, 4);
    }

    #[test]
    fn decompose_ideal_ghz() {
        for n in [2usize, 3, 5] {
            let amps = mqc_decompose(&ghz_density(n));
            assert!((amps.at(0) - 0.5).abs() < 1e-12);
            assert!((amps.at(n as i64) - 0.25).abs() < 1e-12);
            assert!((amps.at(-(n as i64)) - 0.25).abs() < 1e-12);
            for q in 1..n as i64 {
                assert!(amps.at(q) < 1e-12);
            }
        }
    }

    #[test]
    fn decompose_maximally_mixed_qubit() {
        let mut rho = DensityMatrix::new(1).unwrap();
        rho.apply_kraus(&[0], &crate::noise::depolarizing_channel(1.0, 2).unwrap());
        let amps = mqc_decompose(&rho);
        assert!((amps.at(0) - 0.5).abs() < 1e-12);
        assert!(amps.at(1) < 1e-12);
        assert!(amps.at(-1) < 1e-12);
    }

    #[test]
    fn decomposition_sums_to_purity() {
        for seed in 0..5u64 {
            let rho = random_density_matrix(3, 5, seed).unwrap();
            let amps = mqc_decompose(&rho);
            assert!((amps.total() - rho.purity()).abs() < 1e-12);
            assert!(rho.is_positive_semidefinite(1e-10));
        }
    }

    #[test]
    fn thermal_off_diagonal_damping() {
        // 400 ns against T2 = 76 us damps |+><+| coherence by e^{-0.4/76}.
        let ch = thermal_relaxation_channel(70.0, 76.0, 400.0).unwrap();
        let mut st = StateVector::new(1);
        st.apply_gate(&Gate::h(0)).unwrap();
        let mut rho = DensityMatrix::from_pure(&st).unwrap();
        rho.apply_kraus(&[0], &ch);
        let expect = 0.5 * (-0.4f64 / 76.0).exp();
        assert!(((-0.4f64 / 76.0).exp() - 0.99475).abs() < 1e-5);
        assert!((rho.element(0, 1).norm() - expect).abs() < 1e-12);
    }

    #[test]
    fn thermal_long_time_resets() {
        let ch = thermal_relaxation_channel(70.0, 76.0, 1e9).unwrap();
        let mut st = StateVector::new(1);
        st.apply_gate(&Gate::rxy(0, 1.1, 0.3)).unwrap();
        let mut rho = DensityMatrix::from_pure(&st).unwrap();
        rho.apply_kraus(&[0], &ch);
        assert!((rho.element(0, 0).re - 1.0).abs() < 1e-9);
        assert!(rho.element(1, 1).norm() < 1e-9);
        assert!(rho.element(0, 1).norm() < 1e-9);
    }

    #[test]
    fn corner_alignment() {
        let mut rho = ghz_density(3);
        rho.rotate_collective_z(0.41);
        assert!(rho.element(0, 7).im.abs() > 1e-3);
        rho.align_corner_phase();
        let corner = rho.element(0, 7);
        assert!(corner.im.abs() < 1e-12);
        assert!(corner.re > 0.0);
    }

    #[test]
    fn oracle_rejects_large_registers() {
        let circuit = Circuit::new(9);
        assert!(matches!(
            density_oracle(&circuit, &NoiseModel::noiseless(9)),
            Err(NoiseError::OracleTooLarge(_))
        ));
    }
}
