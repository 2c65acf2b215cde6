//! Readout-error mitigation: calibration matrices over full, truncated, or
//! tensor-product state sets, and the constrained least-squares correction
//! of measured counts.

mod solver;

pub use solver::{kkt_violation, project_to_simplex, solve_simplex_least_squares, Matrix};

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::analysis::{aggregate_repetitions, mqc_spectrum, AnalysisError, SweepResult};
use crate::circuits::PhiGrid;
use crate::noise::{NoiseError, ReadoutModel};
use crate::seeding::mix;
use crate::statevector::{format_bitstring, parse_bitstring, CountsTable};

#[derive(Debug, Error)]
pub enum MitigationError {
    #[error("no counts provided")]
    EmptyCounts,
    #[error("duplicate calibration label {0:#b}")]
    DuplicateLabel(u64),
    #[error("full calibration supports at most 10 qubits, got {0}")]
    TooManyQubits(usize),
    #[error("per-qubit confusion matrix on qubit {0} is singular")]
    SingularFactor(usize),
    #[error("counts are over {counts} qubits but calibration is over {calibration}")]
    QubitMismatch { counts: usize, calibration: usize },
    #[error("calibration CSV is malformed: {0}")]
    BadCsv(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// Response matrix over an ordered set of basis-state labels: entry
/// `(i, j)` is the probability of measuring `labels[i]` given that
/// `labels[j]` was prepared. Truncated sets lose column mass to outcomes
/// outside the set; columns are deliberately not renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationMatrix {
    num_qubits: usize,
    labels: Vec<u64>,
    matrix: Matrix,
}

impl CalibrationMatrix {
    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn entry(&self, measured: usize, prepared: usize) -> f64 {
        self.matrix.get(measured, prepared)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    /// CSV layout: header row of state labels (prepared states, qubit 0
    /// rightmost), then one row per measured state, led by its label.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("measured");
        for &label in &self.labels {
            out.push(',');
            out.push_str(&format_bitstring(label, self.num_qubits));
        }
        out.push('\n');
        for (i, &label) in self.labels.iter().enumerate() {
            out.push_str(&format_bitstring(label, self.num_qubits));
            for j in 0..self.labels.len() {
                out.push(',');
                out.push_str(&format!("{}", self.entry(i, j)));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, MitigationError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| MitigationError::BadCsv("empty".into()))?;
        let mut labels = Vec::new();
        let mut num_qubits = 0;
        for field in header.split(',').skip(1) {
            let (bits, n) = parse_bitstring(field)
                .ok_or_else(|| MitigationError::BadCsv(format!("bad label {field}")))?;
            labels.push(bits);
            num_qubits = n;
        }
        let k = labels.len();
        let mut matrix = Matrix::zeros(k, k);
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let _label = fields.next();
            for (j, field) in fields.enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| MitigationError::BadCsv(format!("bad value {field}")))?;
                if i < k && j < k {
                    matrix.set(i, j, v);
                }
            }
        }
        Ok(CalibrationMatrix { num_qubits, labels, matrix })
    }
}

fn exact_column(readout: &ReadoutModel, labels: &[u64], prepared: u64) -> Vec<f64> {
    labels.iter().map(|&measured| readout.outcome_probability(measured, prepared)).collect()
}

fn sampled_column(
    readout: &ReadoutModel,
    labels: &[u64],
    prepared: u64,
    shots: u64,
    seed: u64,
) -> Vec<f64> {
    let index: BTreeMap<u64, usize> =
        labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = vec![0u64; labels.len()];
    for _ in 0..shots {
        let measured = readout.sample_measured(prepared, &mut rng);
        if let Some(&i) = index.get(&measured) {
            hits[i] += 1;
        }
    }
    hits.into_iter().map(|h| h as f64 / shots as f64).collect()
}

fn build_calibration(
    num_qubits: usize,
    labels: Vec<u64>,
    readout: &ReadoutModel,
    shots_per_state: u64,
    seed: u64,
) -> CalibrationMatrix {
    let k = labels.len();
    let mut matrix = Matrix::zeros(k, k);
    for (j, &prepared) in labels.iter().enumerate() {
        let column = if shots_per_state == 0 {
            exact_column(readout, &labels, prepared)
        } else {
            sampled_column(readout, &labels, prepared, shots_per_state, mix(seed, j as u64))
        };
        for (i, v) in column.into_iter().enumerate() {
            matrix.set(i, j, v);
        }
    }
    CalibrationMatrix { num_qubits, labels, matrix }
}

/// Calibration over every basis state of an `n <= 10` qubit register.
/// `shots_per_state = 0` fills in exact probabilities.
pub fn build_full_calibration(
    num_qubits: usize,
    readout: &ReadoutModel,
    shots_per_state: u64,
    seed: u64,
) -> Result<CalibrationMatrix, MitigationError> {
    if num_qubits > 10 {
        return Err(MitigationError::TooManyQubits(num_qubits));
    }
    let labels: Vec<u64> = (0..(1u64 << num_qubits)).collect();
    Ok(build_calibration(num_qubits, labels, readout, shots_per_state, seed))
}

/// The `k` heaviest bitstrings across all provided experiments, always
/// including the all-zeros string; ties break toward the smaller bitstring.
pub fn select_truncation_states(
    all_counts: &[CountsTable],
    k: usize,
) -> Result<Vec<u64>, MitigationError> {
    if k == 0 || all_counts.iter().all(CountsTable::is_empty) {
        return Err(MitigationError::EmptyCounts);
    }
    let mut weights: BTreeMap<u64, u64> = BTreeMap::new();
    for table in all_counts {
        for (bits, c) in table.iter() {
            *weights.entry(bits).or_insert(0) += c;
        }
    }
    let mut ranked: Vec<(u64, u64)> = weights.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut selected = vec![0u64];
    for (bits, _) in ranked {
        if selected.len() == k {
            break;
        }
        if bits != 0 {
            selected.push(bits);
        }
    }
    Ok(selected)
}

/// Calibration restricted to the given labels; measurement outcomes outside
/// the set are discarded, so columns may sum to less than one.
pub fn build_truncated_calibration(
    labels: &[u64],
    num_qubits: usize,
    readout: &ReadoutModel,
    shots_per_state: u64,
    seed: u64,
) -> Result<CalibrationMatrix, MitigationError> {
    if labels.is_empty() {
        return Err(MitigationError::EmptyCounts);
    }
    let mut seen = BTreeSet::new();
    for &l in labels {
        if !seen.insert(l) {
            return Err(MitigationError::DuplicateLabel(l));
        }
    }
    Ok(build_calibration(num_qubits, labels.to_vec(), readout, shots_per_state, seed))
}

/// A corrected outcome distribution over the calibration labels.
#[derive(Debug, Clone)]
pub struct MitigatedDistribution {
    pub labels: Vec<u64>,
    pub probabilities: Vec<f64>,
    /// Value of the minimized objective `||A v - v_mea||^2`.
    pub residual: f64,
    /// Fraction of the measured counts that fell outside the label set.
    pub dropped_mass: f64,
    /// Set when the solve was degenerate and the result is the simplex
    /// projection of the measured frequencies.
    pub degenerate: bool,
}

impl MitigatedDistribution {
    pub fn probability_of(&self, bits: u64) -> f64 {
        self.labels
            .iter()
            .position(|&l| l == bits)
            .map(|i| self.probabilities[i])
            .unwrap_or(0.0)
    }
}

/// Constrained least-squares correction of measured frequencies already
/// restricted to the calibration labels.
pub fn mitigate_frequencies(
    frequencies: &[f64],
    calibration: &CalibrationMatrix,
) -> Result<MitigatedDistribution, MitigationError> {
    if frequencies.len() != calibration.size() {
        return Err(MitigationError::QubitMismatch {
            counts: frequencies.len(),
            calibration: calibration.size(),
        });
    }
    let solution = solve_simplex_least_squares(&calibration.matrix, frequencies);
    Ok(MitigatedDistribution {
        labels: calibration.labels.clone(),
        probabilities: solution.values,
        residual: solution.residual,
        dropped_mass: 0.0,
        degenerate: solution.degenerate,
    })
}

/// Correct a counts table: counts outside the label set are dropped (their
/// mass reported), the rest normalized over the label set and solved.
pub fn mitigate(
    counts: &CountsTable,
    calibration: &CalibrationMatrix,
) -> Result<MitigatedDistribution, MitigationError> {
    if counts.is_empty() {
        return Err(MitigationError::EmptyCounts);
    }
    if counts.num_qubits() != calibration.num_qubits() {
        return Err(MitigationError::QubitMismatch {
            counts: counts.num_qubits(),
            calibration: calibration.num_qubits(),
        });
    }
    let total = counts.total() as f64;
    let in_set: Vec<u64> = calibration.labels.iter().map(|&l| counts.get(l)).collect();
    let in_set_total: u64 = in_set.iter().sum();
    if in_set_total == 0 {
        return Err(MitigationError::EmptyCounts);
    }
    let frequencies: Vec<f64> =
        in_set.iter().map(|&c| c as f64 / in_set_total as f64).collect();
    let mut out = mitigate_frequencies(&frequencies, calibration)?;
    out.dropped_mass = 1.0 - in_set_total as f64 / total;
    Ok(out)
}

/// Tensor-product correction: the calibration matrix is implicitly the
/// tensor product of per-qubit confusion matrices, restricted to the
/// observed support plus the all-zeros state; entries are built factor-wise
/// so the full `2^n x 2^n` matrix never materializes.
pub fn tensored_mitigate(
    counts: &CountsTable,
    per_qubit: &[[[f64; 2]; 2]],
) -> Result<MitigatedDistribution, MitigationError> {
    if counts.is_empty() {
        return Err(MitigationError::EmptyCounts);
    }
    let n = counts.num_qubits();
    if per_qubit.len() != n {
        return Err(MitigationError::QubitMismatch { counts: n, calibration: per_qubit.len() });
    }
    for (q, m) in per_qubit.iter().enumerate() {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.abs() < 1e-12 {
            return Err(MitigationError::SingularFactor(q));
        }
    }
    let mut labels: BTreeSet<u64> = counts.iter().map(|(bits, _)| bits).collect();
    labels.insert(0);
    let labels: Vec<u64> = labels.into_iter().collect();
    let k = labels.len();
    let mut matrix = Matrix::zeros(k, k);
    for (i, &measured) in labels.iter().enumerate() {
        for (j, &prepared) in labels.iter().enumerate() {
            let mut p = 1.0;
            for (q, m) in per_qubit.iter().enumerate() {
                let t = ((prepared >> q) & 1) as usize;
                let o = ((measured >> q) & 1) as usize;
                p *= m[o][t];
            }
            matrix.set(i, j, p);
        }
    }
    let calibration = CalibrationMatrix { num_qubits: n, labels, matrix };
    mitigate(counts, &calibration)
}

/// One row of the truncation-size study.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConvergenceRow {
    pub k: usize,
    pub i_zero: f64,
    pub i_zero_stderr: Option<f64>,
    pub i_top: f64,
    pub i_top_stderr: Option<f64>,
}

/// Re-run the correction with truncated calibrations of each requested size
/// and recompute the spectrum: one row per `k`, reporting the corrected
/// `I_0` and `I_n`.
pub fn convergence_study(
    counts_by_phi: &[Vec<CountsTable>],
    grid: &PhiGrid,
    num_qubits: usize,
    k_values: &[usize],
    readout: &ReadoutModel,
    shots_per_state: u64,
    seed: u64,
) -> Result<Vec<ConvergenceRow>, MitigationError> {
    let flat: Vec<CountsTable> =
        counts_by_phi.iter().flat_map(|reps| reps.iter().cloned()).collect();
    if flat.is_empty() {
        return Err(MitigationError::EmptyCounts);
    }
    let reps = counts_by_phi[0].len();
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let labels = select_truncation_states(&flat, k)?;
        let calibration =
            build_truncated_calibration(&labels, num_qubits, readout, shots_per_state, seed)?;
        let mut sweeps = Vec::with_capacity(reps);
        for rep in 0..reps {
            let mut values = Vec::with_capacity(counts_by_phi.len());
            for phi_counts in counts_by_phi {
                let corrected = mitigate(&phi_counts[rep], &calibration)?;
                values.push(corrected.probability_of(0));
            }
            sweeps.push(SweepResult::new(grid.clone(), values)?);
        }
        let aggregated = aggregate_repetitions(&sweeps)?;
        let spectrum = mqc_spectrum(&aggregated)?;
        rows.push(ConvergenceRow {
            k: labels.len(),
            i_zero: spectrum.amplitude(0),
            i_zero_stderr: spectrum.stderr(0),
            i_top: spectrum.amplitude(num_qubits),
            i_top_stderr: spectrum.stderr(num_qubits),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn readout_2q() -> ReadoutModel {
        ReadoutModel::from_confusions(vec![
            [[0.98, 0.05], [0.02, 0.95]],
            [[0.97, 0.04], [0.03, 0.96]],
        ])
        .unwrap()
    }

    #[test]
    fn perfect_readout_gives_identity() {
        let ro = ReadoutModel::symmetric(&[1.0, 1.0]).unwrap();
        let cal = build_full_calibration(2, &ro, 0, 0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_eq!(cal.entry(i, j), expect);
            }
        }
    }

    #[test]
    fn one_qubit_confusion_matrix() {
        let ro = ReadoutModel::from_confusions(vec![[[0.98, 0.05], [0.02, 0.95]]]).unwrap();
        let cal = build_full_calibration(1, &ro, 0, 0).unwrap();
        assert!((cal.entry(0, 0) - 0.98).abs() < 1e-12);
        assert!((cal.entry(0, 1) - 0.05).abs() < 1e-12);
        assert!((cal.entry(1, 0) - 0.02).abs() < 1e-12);
        assert!((cal.entry(1, 1) - 0.95).abs() < 1e-12);
    }

    #[test]
    fn independent_errors_factorize() {
        let cal = build_full_calibration(2, &readout_2q(), 0, 0).unwrap();
        let a = [[0.98, 0.05], [0.02, 0.95]];
        let b = [[0.97, 0.04], [0.03, 0.96]];
        for i in 0..4usize {
            for j in 0..4usize {
                let expect = a[i & 1][j & 1] * b[i >> 1][j >> 1];
                assert!((cal.entry(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampled_calibration_converges() {
        let cal_exact = build_full_calibration(2, &readout_2q(), 0, 0).unwrap();
        let cal = build_full_calibration(2, &readout_2q(), 100_000, 7).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((cal.entry(i, j) - cal_exact.entry(i, j)).abs() < 0.01);
            }
        }
        // Determinism.
        let again = build_full_calibration(2, &readout_2q(), 100_000, 7).unwrap();
        assert_eq!(cal, again);
    }

    #[test]
    fn full_calibration_size_cap() {
        let ro = ReadoutModel::symmetric(&vec![0.97; 11]).unwrap();
        assert!(matches!(
            build_full_calibration(11, &ro, 0, 0),
            Err(MitigationError::TooManyQubits(11))
        ));
    }

    #[test]
    fn truncation_selection_examples() {
        let mut counts = CountsTable::new(4);
        counts.add(0b0000, 90);
        counts.add(0b0001, 10);
        let labels = select_truncation_states(&[counts.clone()], 1).unwrap();
        assert_eq!(labels, vec![0]);
        let labels = select_truncation_states(&[counts], 2).unwrap();
        assert_eq!(labels, vec![0, 1]);
        // All-zeros forced in even when absent from the counts.
        let mut ones = CountsTable::new(4);
        ones.add(0b1111, 5);
        let labels = select_truncation_states(&[ones], 2).unwrap();
        assert_eq!(labels, vec![0b0000, 0b1111]);
    }

    #[test]
    fn truncated_equals_full_on_all_states() {
        let labels: Vec<u64> = (0..4).collect();
        let full = build_full_calibration(2, &readout_2q(), 0, 0).unwrap();
        let truncated =
            build_truncated_calibration(&labels, 2, &readout_2q(), 0, 0).unwrap();
        assert_eq!(full, truncated);
    }

    #[test]
    fn truncated_identity_for_ideal_readout() {
        let ro = ReadoutModel::symmetric(&[1.0, 1.0, 1.0]).unwrap();
        let cal = build_truncated_calibration(&[0b000, 0b001], 3, &ro, 0, 0).unwrap();
        assert_eq!(cal.size(), 2);
        assert_eq!(cal.entry(0, 0), 1.0);
        assert_eq!(cal.entry(1, 1), 1.0);
        assert_eq!(cal.entry(0, 1), 0.0);
    }

    #[test]
    fn duplicate_labels_rejected() {
        let ro = ReadoutModel::symmetric(&[0.97]).unwrap();
        assert!(matches!(
            build_truncated_calibration(&[0, 0], 1, &ro, 0, 0),
            Err(MitigationError::DuplicateLabel(0))
        ));
    }

    #[test]
    fn identity_calibration_leaves_counts() {
        let ro = ReadoutModel::symmetric(&[1.0, 1.0]).unwrap();
        let cal = build_full_calibration(2, &ro, 0, 0).unwrap();
        let mut counts = CountsTable::new(2);
        counts.add(0b00, 700);
        counts.add(0b11, 300);
        let out = mitigate(&counts, &cal).unwrap();
        assert!((out.probability_of(0b00) - 0.7).abs() < 1e-10);
        assert!((out.probability_of(0b11) - 0.3).abs() < 1e-10);
        assert_eq!(out.dropped_mass, 0.0);
        assert!(!out.degenerate);
    }

    #[test]
    fn unbiased_in_the_exact_limit() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for n in 1..=5usize {
            let fid: Vec<f64> = (0..n).map(|_| 0.95 + 0.04 * rng.gen::<f64>()).collect();
            let ro = ReadoutModel::symmetric(&fid).unwrap();
            let cal = build_full_calibration(n, &ro, 0, 0).unwrap();
            for _ in 0..20 {
                let dim = 1usize << n;
                let raw: Vec<f64> =
                    (0..dim).map(|_| -(rng.gen::<f64>().max(1e-12)).ln()).collect();
                let total: f64 = raw.iter().sum();
                let p: Vec<f64> = raw.into_iter().map(|x| x / total).collect();
                let measured = cal.matrix().matvec(&p);
                let out = mitigate_frequencies(&measured, &cal).unwrap();
                for (x, y) in out.probabilities.iter().zip(&p) {
                    assert!((x - y).abs() < 1e-8, "n={n}");
                }
            }
        }
    }

    #[test]
    fn out_of_set_counts_are_dropped_and_reported() {
        let ro = ReadoutModel::symmetric(&[0.98, 0.98]).unwrap();
        let cal = build_truncated_calibration(&[0b00, 0b01], 2, &ro, 0, 0).unwrap();
        let mut counts = CountsTable::new(2);
        counts.add(0b00, 800);
        counts.add(0b01, 100);
        counts.add(0b11, 100);
        let out = mitigate(&counts, &cal).unwrap();
        assert!((out.dropped_mass - 0.1).abs() < 1e-12);
        assert!((out.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn tensored_matches_full_for_independent_noise() {
        // Counts with full support: forward-map an exact distribution and
        // scale to integers, so both corrections solve over every state.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in 2..=5usize {
            let fid: Vec<f64> = (0..n).map(|_| 0.94 + 0.05 * rng.gen::<f64>()).collect();
            let ro = ReadoutModel::symmetric(&fid).unwrap();
            let cal = build_full_calibration(n, &ro, 0, 0).unwrap();
            let dim = 1usize << n;
            let mut p = vec![0.0; dim];
            p[0] = 0.55;
            p[1] = 0.15;
            p[dim - 1] = 0.30;
            let measured = cal.matrix().matvec(&p);
            let mut counts = CountsTable::new(n);
            for (bits, &m) in measured.iter().enumerate() {
                counts.add(bits as u64, (m * 1e12).round() as u64);
            }
            let confusions: Vec<[[f64; 2]; 2]> = (0..n).map(|q| *ro.confusion(q)).collect();
            let tensored = tensored_mitigate(&counts, &confusions).unwrap();
            let full = mitigate(&counts, &cal).unwrap();
            assert_eq!(tensored.labels.len(), dim, "n={n}: support must cover all states");
            for bits in 0..dim as u64 {
                let a = tensored.probability_of(bits);
                let b = full.probability_of(bits);
                assert!((a - b).abs() < 1e-6, "n={n} bits={bits:#b}: {a} vs {b}");
                assert!((a - p[bits as usize]).abs() < 1e-4, "n={n}: recovery off");
            }
        }
    }

    #[test]
    fn correlated_readout_defeats_tensored_correction() {
        // Two-qubit correlated confusion: state |11> misreads as |00> far
        // more often than independent flips allow.
        let full_matrix = vec![
            vec![0.96, 0.02, 0.02, 0.20],
            vec![0.02, 0.96, 0.00, 0.02],
            vec![0.02, 0.00, 0.96, 0.02],
            vec![0.00, 0.02, 0.02, 0.76],
        ];
        let ro = ReadoutModel::symmetric(&[0.98, 0.98])
            .unwrap()
            .with_full_matrix(full_matrix)
            .unwrap();
        let cal = build_full_calibration(2, &ro, 0, 0).unwrap();
        let truth = [0.5, 0.0, 0.0, 0.5];
        let measured = cal.matrix().matvec(&truth);
        let corrected = mitigate_frequencies(&measured, &cal).unwrap();
        for (x, y) in corrected.probabilities.iter().zip(&truth) {
            assert!((x - y).abs() < 1e-8, "full correction must recover the truth");
        }
        // Tensored correction assumes independence and misses.
        let mut counts = CountsTable::new(2);
        for (bits, &p) in measured.iter().enumerate() {
            counts.add(bits as u64, (p * 1e9) as u64);
        }
        let confusions = vec![[[0.98, 0.02], [0.02, 0.98]], [[0.98, 0.02], [0.02, 0.98]]];
        let tensored = tensored_mitigate(&counts, &confusions).unwrap();
        let err = (tensored.probability_of(0) - 0.5).abs();
        assert!(err > 0.02, "tensored correction unexpectedly recovered truth (err {err})");
    }

    #[test]
    fn csv_round_trip() {
        let cal = build_full_calibration(2, &readout_2q(), 0, 0).unwrap();
        let text = cal.to_csv();
        assert!(text.starts_with("measured,00,01,10,11"));
        let back = CalibrationMatrix::from_csv(&text).unwrap();
        assert_eq!(back.labels(), cal.labels());
        for i in 0..4 {
            for j in 0..4 {
                assert!((back.entry(i, j) - cal.entry(i, j)).abs() < 1e-12);
            }
        }
    }
}
