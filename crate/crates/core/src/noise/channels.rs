//! Kraus channels and the device-error bookkeeping around them: thermal
//! relaxation from T1/T2, depolarizing channels, and the fill rule that tops
//! relaxation up to a benchmarked gate error.

use num_complex::Complex64;

use super::NoiseError;
use crate::statevector::Mat2;

/// 4x4 complex matrix in row-major order; the pair basis index is
/// `bit(first qubit) | bit(second qubit) << 1`.
pub type Mat4 = [[Complex64; 4]; 4];

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn mat2_zero() -> Mat2 {
    [[c(0.0, 0.0); 2]; 2]
}

fn pauli(k: usize) -> Mat2 {
    match k {
        0 => [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]],
        1 => [[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]],
        2 => [[c(0.0, 0.0), c(0.0, -1.0)], [c(0.0, 1.0), c(0.0, 0.0)]],
        _ => [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]],
    }
}

/// Tensor product with the first factor on the low bit of the pair index.
pub fn tensor2(low: &Mat2, high: &Mat2) -> Mat4 {
    let mut out = [[c(0.0, 0.0); 4]; 4];
    for hr in 0..2 {
        for hc in 0..2 {
            for lr in 0..2 {
                for lc in 0..2 {
                    out[(hr << 1) | lr][(hc << 1) | lc] = high[hr][hc] * low[lr][lc];
                }
            }
        }
    }
    out
}

/// A completely positive trace-preserving map on one or two qubits.
#[derive(Debug, Clone, PartialEq)]
pub enum KrausChannel {
    One(Vec<Mat2>),
    Two(Vec<Mat4>),
}

impl KrausChannel {
    pub fn identity_1q() -> Self {
        KrausChannel::One(vec![pauli(0)])
    }

    pub fn dim(&self) -> usize {
        match self {
            KrausChannel::One(_) => 2,
            KrausChannel::Two(_) => 4,
        }
    }

    pub fn num_operators(&self) -> usize {
        match self {
            KrausChannel::One(ops) => ops.len(),
            KrausChannel::Two(ops) => ops.len(),
        }
    }

    /// Max-norm deviation of `sum K^dagger K` from the identity.
    pub fn completeness_error(&self) -> f64 {
        match self {
            KrausChannel::One(ops) => {
                let mut acc = [[c(0.0, 0.0); 2]; 2];
                for op in ops {
                    for r in 0..2 {
                        for col in 0..2 {
                            for k in 0..2 {
                                acc[r][col] += op[k][r].conj() * op[k][col];
                            }
                        }
                    }
                }
                let mut err: f64 = 0.0;
                for r in 0..2 {
                    for col in 0..2 {
                        let expect = if r == col { 1.0 } else { 0.0 };
                        err = err.max((acc[r][col] - expect).norm());
                    }
                }
                err
            }
            KrausChannel::Two(ops) => {
                let mut acc = [[c(0.0, 0.0); 4]; 4];
                for op in ops {
                    for r in 0..4 {
                        for col in 0..4 {
                            for k in 0..4 {
                                acc[r][col] += op[k][r].conj() * op[k][col];
                            }
                        }
                    }
                }
                let mut err: f64 = 0.0;
                for r in 0..4 {
                    for col in 0..4 {
                        let expect = if r == col { 1.0 } else { 0.0 };
                        err = err.max((acc[r][col] - expect).norm());
                    }
                }
                err
            }
        }
    }

    pub fn is_complete(&self, tol: f64) -> bool {
        self.completeness_error() <= tol
    }

    /// Process fidelity to the identity: `sum_i |Tr K_i|^2 / d^2`.
    pub fn process_fidelity(&self) -> f64 {
        let d = self.dim() as f64;
        let tr_sum: f64 = match self {
            KrausChannel::One(ops) => {
                ops.iter().map(|op| (op[0][0] + op[1][1]).norm_sqr()).sum()
            }
            KrausChannel::Two(ops) => ops
                .iter()
                .map(|op| (op[0][0] + op[1][1] + op[2][2] + op[3][3]).norm_sqr())
                .sum(),
        };
        tr_sum / (d * d)
    }

    /// Average gate fidelity `(d F_pro + 1) / (d + 1)`.
    pub fn average_gate_fidelity(&self) -> f64 {
        let d = self.dim() as f64;
        (d * self.process_fidelity() + 1.0) / (d + 1.0)
    }

    pub fn average_gate_error(&self) -> f64 {
        1.0 - self.average_gate_fidelity()
    }

    /// Sequential composition `other . self` (self acts first).
    pub fn then(&self, other: &KrausChannel) -> KrausChannel {
        match (self, other) {
            (KrausChannel::One(a), KrausChannel::One(b)) => {
                let mut ops = Vec::with_capacity(a.len() * b.len());
                for second in b {
                    for first in a {
                        let mut m = mat2_zero();
                        for r in 0..2 {
                            for col in 0..2 {
                                for k in 0..2 {
                                    m[r][col] += second[r][k] * first[k][col];
                                }
                            }
                        }
                        ops.push(m);
                    }
                }
                KrausChannel::One(ops)
            }
            (KrausChannel::Two(a), KrausChannel::Two(b)) => {
                let mut ops = Vec::with_capacity(a.len() * b.len());
                for second in b {
                    for first in a {
                        let mut m = [[c(0.0, 0.0); 4]; 4];
                        for r in 0..4 {
                            for col in 0..4 {
                                for k in 0..4 {
                                    m[r][col] += second[r][k] * first[k][col];
                                }
                            }
                        }
                        ops.push(m);
                    }
                }
                KrausChannel::Two(ops)
            }
            _ => panic!("cannot compose channels of different dimension"),
        }
    }

    /// Tensor product of two single-qubit channels; `self` takes the low bit.
    pub fn tensor_with(&self, other: &KrausChannel) -> KrausChannel {
        match (self, other) {
            (KrausChannel::One(a), KrausChannel::One(b)) => {
                let mut ops = Vec::with_capacity(a.len() * b.len());
                for hb in b {
                    for la in a {
                        ops.push(tensor2(la, hb));
                    }
                }
                KrausChannel::Two(ops)
            }
            _ => panic!("tensor_with expects two single-qubit channels"),
        }
    }
}

/// T1/T2 relaxation toward `|0>` over `duration_ns`.
///
/// The amplitude-damping probability is `1 - exp(-t/T1)`; an extra
/// phase-flip component brings the total off-diagonal decay to
/// `exp(-t/T2)`. Zero duration gives the identity channel.
pub fn thermal_relaxation_channel(
    t1_us: f64,
    t2_us: f64,
    duration_ns: f64,
) -> Result<KrausChannel, NoiseError> {
    if t1_us <= 0.0 || t2_us <= 0.0 {
        return Err(NoiseError::BadParams("T1 and T2 must be positive".into()));
    }
    if t2_us > 2.0 * t1_us {
        return Err(NoiseError::BadParams(format!("T2 = {t2_us} exceeds 2*T1 = {}", 2.0 * t1_us)));
    }
    if duration_ns < 0.0 {
        return Err(NoiseError::BadParams("duration must be nonnegative".into()));
    }
    if duration_ns == 0.0 {
        return Ok(KrausChannel::identity_1q());
    }
    let t_us = duration_ns * 1e-3;
    let gamma = 1.0 - (-t_us / t1_us).exp();
    // Phase-flip weight that tops pure T1 dephasing up to the T2 rate.
    let residual = (-t_us * (1.0 / t2_us - 0.5 / t1_us)).exp();
    let lambda = 0.5 * (1.0 - residual);
    let keep = (1.0 - gamma).sqrt();
    let mut ops = Vec::with_capacity(3);
    let mut k0 = mat2_zero();
    k0[0][0] = c((1.0 - lambda).sqrt(), 0.0);
    k0[1][1] = c((1.0 - lambda).sqrt() * keep, 0.0);
    ops.push(k0);
    if lambda > 0.0 {
        let mut k1 = mat2_zero();
        k1[0][0] = c(lambda.sqrt(), 0.0);
        k1[1][1] = c(-lambda.sqrt() * keep, 0.0);
        ops.push(k1);
    }
    if gamma > 0.0 {
        let mut k2 = mat2_zero();
        k2[0][1] = c(gamma.sqrt(), 0.0);
        ops.push(k2);
    }
    Ok(KrausChannel::One(ops))
}

/// Depolarizing channel `rho -> (1 - lambda) rho + lambda I/d`.
pub fn depolarizing_channel(lambda: f64, dim: usize) -> Result<KrausChannel, NoiseError> {
    match dim {
        2 => {
            let max = 4.0 / 3.0;
            if !(0.0..=max).contains(&lambda) {
                return Err(NoiseError::BadParams(format!("1Q depolarizing lambda {lambda}")));
            }
            let mut ops = Vec::with_capacity(4);
            let head = (1.0 - 3.0 * lambda / 4.0).sqrt();
            let tail = (lambda / 4.0).sqrt();
            for k in 0..4 {
                let w = if k == 0 { head } else { tail };
                if w == 0.0 {
                    continue;
                }
                let p = pauli(k);
                let mut m = mat2_zero();
                for r in 0..2 {
                    for col in 0..2 {
                        m[r][col] = p[r][col] * w;
                    }
                }
                ops.push(m);
            }
            Ok(KrausChannel::One(ops))
        }
        4 => {
            let max = 16.0 / 15.0;
            if !(0.0..=max).contains(&lambda) {
                return Err(NoiseError::BadParams(format!("2Q depolarizing lambda {lambda}")));
            }
            let mut ops = Vec::with_capacity(16);
            let head = (1.0 - 15.0 * lambda / 16.0).sqrt();
            let tail = (lambda / 16.0).sqrt();
            for hi in 0..4 {
                for lo in 0..4 {
                    let w = if hi == 0 && lo == 0 { head } else { tail };
                    if w == 0.0 {
                        continue;
                    }
                    let mut m = tensor2(&pauli(lo), &pauli(hi));
                    for row in m.iter_mut() {
                        for e in row.iter_mut() {
                            *e *= w;
                        }
                    }
                    ops.push(m);
                }
            }
            Ok(KrausChannel::Two(ops))
        }
        _ => Err(NoiseError::BadParams(format!("unsupported depolarizing dimension {dim}"))),
    }
}

/// Depolarizing fill for a benchmarked gate error.
#[derive(Debug, Clone)]
pub struct DepolarizingFill {
    /// The depolarizing channel to compose after the relaxation.
    pub channel: KrausChannel,
    pub lambda: f64,
    /// Set when relaxation alone already exceeds the target error, in which
    /// case `lambda` is zero.
    pub truncated: bool,
}

/// Pick the depolarizing parameter so that depolarizing after `relaxation`
/// has the given average gate error.
pub fn depolarizing_fill(
    gate_error: f64,
    relaxation: &KrausChannel,
    dim: usize,
) -> Result<DepolarizingFill, NoiseError> {
    if !(0.0..1.0).contains(&gate_error) {
        return Err(NoiseError::BadParams(format!("gate error {gate_error} not in [0,1)")));
    }
    if relaxation.dim() != dim {
        return Err(NoiseError::BadParams(format!(
            "relaxation channel dim {} does not match {dim}",
            relaxation.dim()
        )));
    }
    let d = dim as f64;
    let f_avg = relaxation.average_gate_fidelity();
    let f_pro = relaxation.process_fidelity();
    let target = 1.0 - gate_error;
    // Composing D_lambda after E gives
    //   F_avg = (d ((1-lambda) F_pro(E) + lambda/d^2) + 1) / (d + 1);
    // solve for lambda at the target fidelity.
    let lambda = (d + 1.0) * (f_avg - target) / (d * f_pro - 1.0 / d);
    if lambda < 0.0 {
        return Ok(DepolarizingFill {
            channel: match dim {
                2 => KrausChannel::One(vec![pauli(0)]),
                _ => KrausChannel::Two(vec![tensor2(&pauli(0), &pauli(0))]),
            },
            lambda: 0.0,
            truncated: true,
        });
    }
    let channel = depolarizing_channel(lambda, dim)?;
    Ok(DepolarizingFill { channel, lambda, truncated: false })
}
