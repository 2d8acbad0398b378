//! Autoregressive channel prediction.
//!
//! Coefficients follow the innovation convention
//! `x[l] + sum_q a_q x[l - q] = w[l]`, so the one-step forecast is
//! `-sum_q a_q x[l - q]`. Coefficients are real and are applied to every
//! complex channel coefficient independently.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{acf, CVector};
use crate::error::{Error, Result};

/// Loaded autocorrelation values `R[0..=Q]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfVector(Vec<f64>);

impl AcfVector {
    /// Needs at least two values; `R[0]` must exceed every other magnitude.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Domain(
                "an ACF vector needs lags 0 and 1 at least".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) || values[0] <= 0.0 {
            return Err(Error::Domain(
                "ACF values must be finite with positive lag 0".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Dense `Q x Q` Toeplitz matrix built from `R[0..Q-1]`.
    pub fn toeplitz(&self) -> DMatrix<f64> {
        let q = self.order();
        DMatrix::from_fn(q, q, |i, j| self.0[i.abs_diff(j)])
    }
}

/// `R[0] = 1 + eps`, `R[q] = J0(2 pi f_n q)`.
pub fn loaded_acf(f_n: f64, epsilon: f64, q: usize) -> Result<AcfVector> {
    if q == 0 {
        return Err(Error::Domain("AR order must be >= 1".into()));
    }
    if !(f_n >= 0.0) {
        return Err(Error::Domain(format!(
            "f_n must be non-negative, got {f_n}"
        )));
    }
    let mut r: Vec<f64> = (0..=q).map(|j| acf(f_n, j as i64)).collect();
    r[0] += epsilon;
    AcfVector::new(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub order: usize,
    pub coeffs: Vec<f64>,
    pub innovation_variance: f64,
    /// Normalized Doppler the model was built for; absent for models fitted from data.
    pub f_n: Option<f64>,
    pub loading: f64,
}

impl ArModel {
    /// Model from loaded Jakes correlations at `f_n`.
    pub fn for_doppler(f_n: f64, epsilon: f64, q: usize) -> Result<Self> {
        let mut m = levinson_durbin(&loaded_acf(f_n, epsilon, q)?)?;
        m.f_n = Some(f_n);
        m.loading = epsilon;
        Ok(m)
    }

    /// Largest root modulus of `1 + sum_q a_q z^-q`, via the companion matrix.
    pub fn spectral_radius(&self) -> f64 {
        let q = self.order;
        let comp = DMatrix::from_fn(q, q, |i, j| {
            if i == 0 {
                -self.coeffs[j]
            } else if i == j + 1 {
                1.0
            } else {
                0.0
            }
        });
        comp.complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }

    pub fn to_text(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.coeffs.len() != m.order || m.order == 0 {
            return Err(Error::Format(format!(
                "order {} with {} coefficients",
                m.order,
                m.coeffs.len()
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Solves `R a = -w` in `O(Q^2)`. The returned model has no Doppler tag and
/// zero loading; callers that know them fill them in.
pub fn levinson_durbin(acf: &AcfVector) -> Result<ArModel> {
    let r = acf.values();
    let q = acf.order();
    let mut a: Vec<f64> = Vec::with_capacity(q);
    let mut err = r[0];
    for m in 1..=q {
        let acc = r[m]
            + a.iter()
                .enumerate()
                .map(|(i, ai)| ai * r[m - 1 - i])
                .sum::<f64>();
        let k = -acc / err;
        if !(k.abs() < 1.0) {
            return Err(Error::Unstable {
                order: m,
                reflection: k.abs(),
            });
        }
        let prev = a.clone();
        for i in 0..m - 1 {
            a[i] = prev[i] + k * prev[m - 2 - i];
        }
        a.push(k);
        err *= 1.0 - k * k;
    }
    // innovation variance R[0] + sum_q a_q R[q]
    let var = r[0]
        + a.iter()
            .enumerate()
            .map(|(i, ai)| ai * r[i + 1])
            .sum::<f64>();
    if !(var > 0.0) {
        return Err(Error::Unstable {
            order: q,
            reflection: 1.0,
        });
    }
    Ok(ArModel {
        order: q,
        coeffs: a,
        innovation_variance: var,
        f_n: None,
        loading: 0.0,
    })
}

/// Baseline fit from a window of estimated coefficient vectors: biased sample
/// ACF pooled over all coefficients, normalized to lag 0, loaded, solved.
pub fn fit_ar_from_csi(history: &[CVector], q: usize, epsilon: f64) -> Result<ArModel> {
    let v = history.len();
    if q == 0 {
        return Err(Error::Domain("AR order must be >= 1".into()));
    }
    if v < q + 1 {
        return Err(Error::InsufficientHistory {
            needed: q + 1,
            got: v,
        });
    }
    let width = history[0].len();
    if history.iter().any(|h| h.len() != width) {
        return Err(Error::Dimension(
            "history snapshots differ in length".into(),
        ));
    }
    let mut r = vec![0.0; q + 1];
    for (lag, rl) in r.iter_mut().enumerate() {
        let mut acc = 0.0;
        for l in lag..v {
            for (x, y) in history[l].iter().zip(history[l - lag].iter()) {
                acc += (x * y.conj()).re;
            }
        }
        *rl = acc / v as f64;
    }
    let r0 = r[0];
    if !(r0 > 0.0) || !r0.is_finite() {
        return Err(Error::Degenerate("history carries no energy".into()));
    }
    for x in r.iter_mut() {
        *x /= r0;
    }
    r[0] += epsilon;
    let mut m = levinson_durbin(&AcfVector::new(r)?)?;
    m.loading = epsilon;
    Ok(m)
}

/// One-step forecast from the last `Q` snapshots (oldest first).
pub fn predict_one(history: &[CVector], model: &ArModel) -> Result<CVector> {
    Ok(predict_multi(history, model, 1)?.remove(0))
}

/// `P`-step forecast; later steps feed earlier predictions back in.
pub fn predict_multi(history: &[CVector], model: &ArModel, horizon: usize) -> Result<Vec<CVector>> {
    let q = model.order;
    if history.len() < q {
        return Err(Error::InsufficientHistory {
            needed: q,
            got: history.len(),
        });
    }
    if horizon == 0 {
        return Err(Error::Domain("horizon must be >= 1".into()));
    }
    let width = history.last().map_or(0, |h| h.len());
    let mut buf: Vec<CVector> = history[history.len() - q..].to_vec();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let mut next = CVector::zeros(width);
        let len = buf.len();
        for (i, a) in model.coeffs.iter().enumerate() {
            let past = &buf[len - 1 - i];
            for (n, p) in next.iter_mut().zip(past.iter()) {
                *n -= p * *a;
            }
        }
        buf.push(next.clone());
        out.push(next);
    }
    Ok(out)
}

/// Scalar convenience used by tests and diagnostics.
pub fn predict_scalar(
    history: &[Complex64],
    model: &ArModel,
    horizon: usize,
) -> Result<Vec<Complex64>> {
    let hist: Vec<CVector> = history
        .iter()
        .map(|&x| CVector::from_element(1, x))
        .collect();
    Ok(predict_multi(&hist, model, horizon)?
        .into_iter()
        .map(|v| v[0])
        .collect())
}
