//! From counts to observables: the return probability S_phi, coherence
//! amplitudes I_q via discrete Fourier transform of the sweep, fidelity
//! bounds and the direct fidelity formula, parity-oscillation coherence,
//! and standard errors over repeated experiments.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::circuits::PhiGrid;
use crate::statevector::CountsTable;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("counts table is empty")]
    EmptyCounts,
    #[error("sweep has {got} values for a grid of {expected}")]
    GridMismatch { expected: usize, got: usize },
    #[error("sweep value {0} outside the valid range")]
    ValueOutOfRange(f64),
    #[error("no repetitions to aggregate")]
    NoRepetitions,
}

/// One swept observable over a [`PhiGrid`]: S_phi values for MQC runs,
/// Z-parity expectations for parity runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub grid: PhiGrid,
    pub values: Vec<f64>,
    /// Per-point standard error; absent for a single repetition.
    pub stderr: Option<Vec<f64>>,
    pub repetitions: usize,
}

impl SweepResult {
    pub fn new(grid: PhiGrid, values: Vec<f64>) -> Result<Self, AnalysisError> {
        if values.len() != grid.len() {
            return Err(AnalysisError::GridMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(SweepResult { grid, values, stderr: None, repetitions: 1 })
    }
}

/// Fraction of shots that returned to the all-zeros state.
pub fn s_phi(counts: &CountsTable) -> Result<f64, AnalysisError> {
    if counts.is_empty() {
        return Err(AnalysisError::EmptyCounts);
    }
    Ok(counts.frequency(0))
}

/// Build a single-repetition sweep of S_phi from per-angle counts.
pub fn sweep_from_counts(
    grid: PhiGrid,
    counts: &[CountsTable],
) -> Result<SweepResult, AnalysisError> {
    if counts.len() != grid.len() {
        return Err(AnalysisError::GridMismatch { expected: grid.len(), got: counts.len() });
    }
    let values = counts.iter().map(s_phi).collect::<Result<Vec<_>, _>>()?;
    SweepResult::new(grid, values)
}

/// Build a single-repetition sweep of Z-parity expectations.
pub fn parity_sweep_from_counts(
    grid: PhiGrid,
    counts: &[CountsTable],
) -> Result<SweepResult, AnalysisError> {
    if counts.len() != grid.len() {
        return Err(AnalysisError::GridMismatch { expected: grid.len(), got: counts.len() });
    }
    for c in counts {
        if c.is_empty() {
            return Err(AnalysisError::EmptyCounts);
        }
    }
    let values = counts.iter().map(CountsTable::parity_expectation).collect();
    SweepResult::new(grid, values)
}

/// Coherence amplitudes `I_q` for `q = 0 ..= q_max` with linearly propagated
/// standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MqcSpectrum {
    pub q_max: usize,
    pub i_values: Vec<f64>,
    pub i_stderr: Option<Vec<f64>>,
}

impl MqcSpectrum {
    pub fn amplitude(&self, q: usize) -> f64 {
        self.i_values[q]
    }

    pub fn stderr(&self, q: usize) -> Option<f64> {
        self.i_stderr.as_ref().map(|s| s[q])
    }
}

/// Fourier component `z_q = sum_j e^{i q phi_j} v_j` and the derived
/// amplitude `|z_q| / (2 q_max)` with its propagated uncertainty.
fn dft_amplitude(
    grid: &PhiGrid,
    values: &[f64],
    stderr: Option<&[f64]>,
    q: f64,
) -> (f64, Option<f64>) {
    let norm = grid.len() as f64;
    let z: Complex64 = grid
        .angles()
        .iter()
        .zip(values)
        .map(|(&phi, &v)| Complex64::from_polar(v, q * phi))
        .sum();
    let amplitude = z.norm() / norm;
    let sigma = stderr.map(|errs| {
        // d|z|/dv_j = cos(q phi_j - arg z); near |z| = 0 the direction is
        // undefined, so fall back to the angular average of cos^2 = 1/2.
        let var: f64 = if z.norm() > 1e-12 {
            let arg = z.arg();
            grid.angles()
                .iter()
                .zip(errs)
                .map(|(&phi, &e)| {
                    let w = (q * phi - arg).cos();
                    (w * e).powi(2)
                })
                .sum()
        } else {
            errs.iter().map(|&e| 0.5 * e * e).sum()
        };
        var.sqrt() / norm
    });
    (amplitude, sigma)
}

/// Discrete Fourier transform of the sweep: `I_q = |sum_j e^{i q phi_j}
/// S_j| / (2 q_max)` for `q = 0 ..= q_max`.
pub fn mqc_spectrum(sweep: &SweepResult) -> Result<MqcSpectrum, AnalysisError> {
    if sweep.values.len() != sweep.grid.len() {
        return Err(AnalysisError::GridMismatch {
            expected: sweep.grid.len(),
            got: sweep.values.len(),
        });
    }
    for &v in &sweep.values {
        if !(-1e-9..=1.0 + 1e-9).contains(&v) {
            return Err(AnalysisError::ValueOutOfRange(v));
        }
    }
    let q_max = sweep.grid.q_max();
    let mut i_values = Vec::with_capacity(q_max + 1);
    let mut i_stderr = sweep.stderr.as_ref().map(|_| Vec::with_capacity(q_max + 1));
    for q in 0..=q_max {
        let (amp, sigma) =
            dft_amplitude(&sweep.grid, &sweep.values, sweep.stderr.as_deref(), q as f64);
        i_values.push(amp);
        if let (Some(errs), Some(s)) = (&mut i_stderr, sigma) {
            errs.push(s);
        }
    }
    Ok(MqcSpectrum { q_max, i_values, i_stderr })
}

/// Fidelity window from the two diagnostic amplitudes:
/// `2 sqrt(I_N) <= F <= sqrt(I_0 / 2) + sqrt(I_N)`, clamped to `[0, 1]`.
pub fn fidelity_bounds(i_0: f64, i_n: f64) -> (f64, f64) {
    let lower = (2.0 * i_n.max(0.0).sqrt()).clamp(0.0, 1.0);
    let upper = ((i_0.max(0.0) / 2.0).sqrt() + i_n.max(0.0).sqrt()).clamp(0.0, 1.0);
    (lower, upper.max(lower))
}

/// `F = (P_all0 + P_all1) / 2 + sqrt(I_N)`, clamped to `[0, 1]`.
pub fn direct_fidelity(p_all_zero: f64, p_all_one: f64, i_n: f64) -> f64 {
    (0.5 * (p_all_zero + p_all_one) + i_n.max(0.0).sqrt()).clamp(0.0, 1.0)
}

/// Bounds, optional direct fidelity, and the entanglement verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityReport {
    pub lower: f64,
    pub upper: f64,
    /// Cauchy-Schwarz sum before clamping at one; sampling noise can push
    /// it above the physical range.
    pub upper_unclamped: f64,
    pub lower_stderr: Option<f64>,
    pub upper_stderr: Option<f64>,
    pub direct: Option<f64>,
    pub direct_stderr: Option<f64>,
    pub entangled: bool,
}

impl FidelityReport {
    /// Bounds from the spectrum of an `n`-qubit experiment.
    pub fn from_spectrum(spectrum: &MqcSpectrum, num_qubits: usize) -> Self {
        let i0 = spectrum.amplitude(0);
        let i_n = spectrum.amplitude(num_qubits);
        let (lower, upper) = fidelity_bounds(i0, i_n);
        let upper_unclamped = (i0.max(0.0) / 2.0).sqrt() + i_n.max(0.0).sqrt();
        let (lower_stderr, upper_stderr) = match &spectrum.i_stderr {
            Some(errs) => {
                let s0 = errs[0];
                let sn = errs[num_qubits];
                let lower_err = if i_n > 0.0 { sn / i_n.sqrt() } else { 2.0 * sn.sqrt() };
                let du0 = if i0 > 0.0 { s0 / (2.0 * (2.0 * i0).sqrt()) } else { 0.0 };
                let dun = if i_n > 0.0 { sn / (2.0 * i_n.sqrt()) } else { 0.0 };
                (Some(lower_err), Some((du0 * du0 + dun * dun).sqrt()))
            }
            None => (None, None),
        };
        FidelityReport {
            lower,
            upper,
            upper_unclamped,
            lower_stderr,
            upper_stderr,
            direct: None,
            direct_stderr: None,
            entangled: lower > 0.5,
        }
    }

    /// Fold in populations measured in a separate prepare-and-measure run.
    pub fn with_direct(
        mut self,
        p_all_zero: f64,
        p_all_one: f64,
        i_n: f64,
        population_stderr: Option<(f64, f64)>,
        i_n_stderr: Option<f64>,
    ) -> Self {
        let direct = direct_fidelity(p_all_zero, p_all_one, i_n);
        self.direct = Some(direct);
        self.direct_stderr = match (population_stderr, i_n_stderr) {
            (Some((s0, s1)), Some(sn)) => {
                let droot = if i_n > 0.0 { sn / (2.0 * i_n.sqrt()) } else { 0.0 };
                Some((0.25 * s0 * s0 + 0.25 * s1 * s1 + droot * droot).sqrt())
            }
            _ => None,
        };
        self.entangled = self.lower > 0.5 || direct > 0.5;
        self
    }
}

/// Parity-oscillation coherence: twice the Fourier amplitude of the parity
/// sweep at the top frequency `n`; equals twice the extreme corner
/// coherence of the state.
pub fn parity_coherence(
    sweep: &SweepResult,
    num_qubits: usize,
) -> Result<(f64, Option<f64>), AnalysisError> {
    if sweep.values.len() != sweep.grid.len() {
        return Err(AnalysisError::GridMismatch {
            expected: sweep.grid.len(),
            got: sweep.values.len(),
        });
    }
    for &v in &sweep.values {
        if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&v) {
            return Err(AnalysisError::ValueOutOfRange(v));
        }
    }
    let (amp, sigma) =
        dft_amplitude(&sweep.grid, &sweep.values, sweep.stderr.as_deref(), num_qubits as f64);
    Ok((2.0 * amp, sigma.map(|s| 2.0 * s)))
}

/// Pointwise mean and standard error over repeated sweeps.
pub fn aggregate_repetitions(reps: &[SweepResult]) -> Result<SweepResult, AnalysisError> {
    let first = reps.first().ok_or(AnalysisError::NoRepetitions)?;
    for r in reps {
        if r.grid != first.grid {
            return Err(AnalysisError::GridMismatch {
                expected: first.grid.len(),
                got: r.grid.len(),
            });
        }
    }
    let k = reps.len();
    let points = first.grid.len();
    let mut mean = vec![0.0; points];
    for r in reps {
        for (m, &v) in mean.iter_mut().zip(&r.values) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= k as f64;
    }
    let stderr = (k > 1).then(|| {
        (0..points)
            .map(|j| {
                let var: f64 = reps.iter().map(|r| (r.values[j] - mean[j]).powi(2)).sum::<f64>()
                    / (k - 1) as f64;
                (var / k as f64).sqrt()
            })
            .collect()
    });
    Ok(SweepResult { grid: first.grid.clone(), values: mean, stderr, repetitions: k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::phi_grid;

    fn ideal_sweep(n: usize) -> SweepResult {
        let grid = phi_grid(n).unwrap();
        let values =
            grid.angles().iter().map(|&phi| 0.5 * (1.0 + (n as f64 * phi).cos())).collect();
        SweepResult::new(grid, values).unwrap()
    }

    #[test]
    fn s_phi_examples() {
        let mut counts = CountsTable::new(4);
        counts.add(0b0000, 50);
        counts.add(0b0001, 50);
        assert_eq!(s_phi(&counts).unwrap(), 0.5);

        let mut ones = CountsTable::new(4);
        ones.add(0b1111, 100);
        assert_eq!(s_phi(&ones).unwrap(), 0.0);

        let empty = CountsTable::new(4);
        assert_eq!(s_phi(&empty).unwrap_err(), AnalysisError::EmptyCounts);
    }

    #[test]
    fn spectrum_of_ideal_signal() {
        let spectrum = mqc_spectrum(&ideal_sweep(4)).unwrap();
        assert_eq!(spectrum.q_max, 5);
        assert!((spectrum.amplitude(0) - 0.5).abs() < 1e-12);
        assert!((spectrum.amplitude(4) - 0.25).abs() < 1e-12);
        for q in [1usize, 2, 3, 5] {
            assert!(spectrum.amplitude(q) < 1e-12, "q={q}");
        }
    }

    #[test]
    fn spectrum_of_constant_signal() {
        let grid = phi_grid(3).unwrap();
        let sweep = SweepResult::new(grid.clone(), vec![0.37; grid.len()]).unwrap();
        let spectrum = mqc_spectrum(&sweep).unwrap();
        assert!((spectrum.amplitude(0) - 0.37).abs() < 1e-12);
        for q in 1..=spectrum.q_max {
            assert!(spectrum.amplitude(q) < 1e-12);
        }
    }

    #[test]
    fn spectrum_ignores_global_phase_shift() {
        // A phase-shifted oscillation leaves every |I_q| unchanged.
        let n = 5;
        let grid = phi_grid(n).unwrap();
        let shifted: Vec<f64> = grid
            .angles()
            .iter()
            .map(|&phi| 0.5 * (1.0 + (n as f64 * phi + 0.83).cos()))
            .collect();
        let sweep = SweepResult::new(grid, shifted).unwrap();
        let spectrum = mqc_spectrum(&sweep).unwrap();
        assert!((spectrum.amplitude(0) - 0.5).abs() < 1e-12);
        assert!((spectrum.amplitude(n) - 0.25).abs() < 1e-12);
        for q in 1..n {
            assert!(spectrum.amplitude(q) < 1e-12);
        }
    }

    #[test]
    fn bounds_examples() {
        assert_eq!(fidelity_bounds(0.5, 0.25), (1.0, 1.0));
        let (lower, upper) = fidelity_bounds(0.5, 0.0626);
        assert!((lower - 0.5004).abs() < 1e-4);
        assert!(upper > lower);
        // Published 18-qubit data point reproduced as arithmetic: a lower
        // bound of 0.5006 corresponds to I_18 = (0.5006 / 2)^2.
        let i18 = (0.5006f64 / 2.0).powi(2);
        let (lower, _) = fidelity_bounds(0.5, i18);
        assert!((lower - 0.5006).abs() < 1e-12);
    }

    #[test]
    fn direct_fidelity_examples() {
        assert_eq!(direct_fidelity(0.5, 0.5, 0.25), 1.0);
        // Consistency with the published 18-qubit fidelity: populations
        // summing to 0.5324 and I_N = 0.2503^2 give 0.5165.
        let f = direct_fidelity(0.2662, 0.2662, 0.2503f64.powi(2));
        assert!((f - 0.5165).abs() < 1e-12);
    }

    #[test]
    fn parity_coherence_of_pure_cosine() {
        let n = 3;
        let grid = phi_grid(n).unwrap();
        for amp in [1.0f64, 0.6, 0.3] {
            let values: Vec<f64> =
                grid.angles().iter().map(|&phi| amp * (n as f64 * phi + 0.4).cos()).collect();
            let sweep = SweepResult::new(grid.clone(), values).unwrap();
            let (c, stderr) = parity_coherence(&sweep, n).unwrap();
            assert!((c - amp).abs() < 1e-12, "amp={amp} c={c}");
            assert!(stderr.is_none());
        }
    }

    #[test]
    fn aggregate_identical_reps_has_zero_stderr() {
        let reps = vec![ideal_sweep(3), ideal_sweep(3), ideal_sweep(3)];
        let agg = aggregate_repetitions(&reps).unwrap();
        assert_eq!(agg.repetitions, 3);
        for e in agg.stderr.unwrap() {
            assert!(e < 1e-15);
        }
    }

    #[test]
    fn aggregate_single_rep_has_no_stderr() {
        let agg = aggregate_repetitions(&[ideal_sweep(3)]).unwrap();
        assert_eq!(agg.repetitions, 1);
        assert!(agg.stderr.is_none());
    }

    #[test]
    fn aggregate_rejects_mismatched_grids() {
        let a = ideal_sweep(3);
        let b = ideal_sweep(4);
        assert!(matches!(aggregate_repetitions(&[a, b]), Err(AnalysisError::GridMismatch { .. })));
    }

    #[test]
    fn aggregate_stderr_matches_scatter() {
        let grid = phi_grid(2).unwrap();
        let base: Vec<f64> =
            grid.angles().iter().map(|&phi| 0.5 * (1.0 + (2.0 * phi).cos())).collect();
        let mut reps = Vec::new();
        for r in 0..8 {
            let jitter = 0.01 * ((r as f64) - 3.5) / 3.5;
            let values = base.iter().map(|v| (v + jitter).clamp(0.0, 1.0)).collect();
            reps.push(SweepResult::new(grid.clone(), values).unwrap());
        }
        let agg = aggregate_repetitions(&reps).unwrap();
        for (j, e) in agg.stderr.unwrap().iter().enumerate() {
            assert!(*e > 0.0 && *e < 0.01, "point {j}: stderr {e}");
        }
    }

    #[test]
    fn report_from_spectrum() {
        let spectrum = mqc_spectrum(&ideal_sweep(4)).unwrap();
        let report = FidelityReport::from_spectrum(&spectrum, 4);
        assert_eq!(report.lower, 1.0);
        assert_eq!(report.upper, 1.0);
        assert!(report.entangled);
        assert!((report.upper_unclamped - 1.0).abs() < 1e-12);
        let with_direct = report.with_direct(0.5, 0.5, 0.25, None, None);
        assert_eq!(with_direct.direct, Some(1.0));
    }
}
