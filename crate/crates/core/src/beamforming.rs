//! Downlink beamforming and evaluation metrics.

use num_complex::Complex64;

use crate::channel::{effective_channel, CMatrix, CVector, PhaseVector};
use crate::error::{Error, Result};
use crate::scenario::SystemConfig;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_SWEEPS: usize = 100;

/// Maximum-ratio transmit beamformer `u = h / |h|`, so that `h^H u = |h|`.
pub fn mrt_beamformer(h: &CVector) -> Result<CVector> {
    let norm = h.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Degenerate(
            "MRT needs a non-zero finite channel".into(),
        ));
    }
    Ok(h.unscale(norm))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingSolution {
    pub theta: PhaseVector,
    pub beamformer: CVector,
    /// `|G theta + d|^2` after every sweep, starting with the initial point.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

impl BeamformingSolution {
    pub fn objective(&self) -> f64 {
        *self
            .objective_trace
            .last()
            .expect("trace holds the initial objective")
    }
}

/// Cyclic coordinate ascent on `|G theta + d|^2` over unit-modulus `theta`.
/// Each coordinate is set to its exact maximizer given the others.
pub fn optimize_phases(
    g: &CMatrix,
    d: &CVector,
    tol: f64,
    max_sweeps: usize,
) -> Result<BeamformingSolution> {
    if g.nrows() != d.len() {
        return Err(Error::Dimension(format!(
            "G has {} rows, d has {}",
            g.nrows(),
            d.len()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    if g.iter()
        .chain(d.iter())
        .any(|x| !x.re.is_finite() || !x.im.is_finite())
    {
        return Err(Error::Domain("non-finite channel entries".into()));
    }
    let m = g.ncols();
    let mut theta = vec![Complex64::new(1.0, 0.0); m];
    let mut h = effective_channel(g, &CVector::from_column_slice(&theta), d)?;
    let mut trace = vec![h.norm_squared()];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        for (j, th) in theta.iter_mut().enumerate() {
            let col = g.column(j);
            // c = h - theta_j f_j
            let c: CVector = &h - col * *th;
            let inner = c.dotc(&col);
            let new = if inner.norm() > 0.0 {
                Complex64::from_polar(1.0, -inner.arg())
            } else {
                *th
            };
            h = c + col * new;
            *th = new;
        }
        let obj = h.norm_squared();
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if obj - prev <= tol * prev.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    let beamformer = mrt_beamformer(&h)?;
    Ok(BeamformingSolution {
        theta: PhaseVector::new(CVector::from_vec(theta))?,
        beamformer,
        objective_trace: trace,
        sweeps,
        converged,
    })
}

/// `log2(1 + P_d / sigma^2 * |(G theta + d)^H u|^2)`.
pub fn spectral_efficiency(
    g: &CMatrix,
    theta: &PhaseVector,
    d: &CVector,
    u: &CVector,
    data_power: f64,
    noise_variance: f64,
) -> Result<f64> {
    let h = effective_channel(g, theta.as_vector(), d)?;
    if u.len() != h.len() {
        return Err(Error::Dimension(format!(
            "beamformer has {} entries, channel {}",
            u.len(),
            h.len()
        )));
    }
    if u.norm() > 1.0 + 1e-12 {
        return Err(Error::Domain("beamformer norm exceeds one".into()));
    }
    let gain = h.dotc(u).norm_sqr();
    Ok((1.0 + data_power / noise_variance * gain).log2())
}

/// Result of [`nmse`]: mean ratio over usable pairs and the skipped count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmseValue {
    pub value: f64,
    pub excluded: usize,
}

/// Mean over pairs of `|pred - truth|^2 / |truth|^2`; zero-norm truths are skipped.
pub fn nmse(predicted: &[CVector], truth: &[CVector]) -> Result<NmseValue> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} truths",
            predicted.len(),
            truth.len()
        )));
    }
    let mut acc = 0.0;
    let mut used = 0usize;
    for (p, t) in predicted.iter().zip(truth) {
        if p.len() != t.len() {
            return Err(Error::Dimension(
                "prediction and truth lengths differ".into(),
            ));
        }
        let denom = t.norm_squared();
        if denom > 0.0 {
            acc += (p - t).norm_squared() / denom;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("every truth vector has zero norm".into()));
    }
    Ok(NmseValue {
        value: acc / used as f64,
        excluded: truth.len() - used,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverheadReport {
    pub conventional: u64,
    pub proposed: u64,
}

impl OverheadReport {
    pub fn ratio(&self) -> f64 {
        self.conventional as f64 / self.proposed as f64
    }
}

/// Element-wise estimation over `V + P` intervals versus grouped estimation
/// over the `V` training intervals only.
pub fn pilot_overhead(cfg: &SystemConfig) -> OverheadReport {
    pilot_overhead_counts(
        cfg.ris_elements_total,
        cfg.ris_groups,
        cfg.n_bs_antennas,
        cfg.n_users,
        cfg.train_intervals,
        cfg.predict_intervals,
    )
}

pub fn pilot_overhead_counts(
    m_total: usize,
    m: usize,
    n: usize,
    k: usize,
    v: usize,
    p: usize,
) -> OverheadReport {
    let (m_total, m, n, k, v, p) = (
        m_total as u64,
        m as u64,
        n as u64,
        k as u64,
        v as u64,
        p as u64,
    );
    OverheadReport {
        conventional: (m_total * n * k + n * k) * (v + p),
        proposed: (m * n * k + n * k) * v,
    }
}

pub fn average_se(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("average of an empty series".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
