//! Doppler-class recognition from windows of estimated CSI, and dispatch of
//! the matching pre-computed AR model.

mod checkpoint;
mod dataset;
mod net;
mod train;

pub use checkpoint::Checkpoint;
pub use dataset::{gen_dataset, read_dataset, write_dataset, DatasetSpec};
pub use net::{AdamState, ConvNet, ConvSpec, ForwardCache, Layer, NetSpec};
pub use train::{augment, train, TrainingRun};

use ndarray::Array2;

use crate::ar::{predict_multi, ArModel};
use crate::channel::CVector;
use crate::error::{Error, Result};

/// Real `2N x V` window: real parts on top, imaginary parts below.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiWindow {
    pub data: Array2<f64>,
    pub user: usize,
    pub label: Option<usize>,
}

impl CsiWindow {
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }
}

/// Stacks `V` channel snapshots into the unstandardized real matrix.
pub fn window_matrix(estimates: &[CVector]) -> Result<Array2<f64>> {
    let n = estimates
        .first()
        .map(|h| h.len())
        .ok_or_else(|| Error::Dimension("empty window".into()))?;
    if n == 0 || estimates.iter().any(|h| h.len() != n) {
        return Err(Error::Dimension(
            "window snapshots must share one non-zero length".into(),
        ));
    }
    let v = estimates.len();
    Ok(Array2::from_shape_fn((2 * n, v), |(r, c)| {
        let x = estimates[c][r % n];
        if r < n {
            x.re
        } else {
            x.im
        }
    }))
}

/// Shifts and scales to zero mean and unit (population) variance.
pub fn standardize(m: &mut Array2<f64>) -> Result<()> {
    let len = m.len() as f64;
    let mean = m.sum() / len;
    let var = m.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / len;
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::Degenerate("window has no variation".into()));
    }
    let sd = var.sqrt();
    m.mapv_inplace(|x| (x - mean) / sd);
    Ok(())
}

/// Builds a standardized classifier window from `V` effective-channel estimates.
pub fn preprocess(estimates: &[CVector], user: usize) -> Result<CsiWindow> {
    let mut data = window_matrix(estimates)?;
    standardize(&mut data)?;
    Ok(CsiWindow {
        data,
        user,
        label: None,
    })
}

/// Effective channel under the all-ones reference phase: `d + sum_m f_m`.
pub fn reference_channel(stacked: &CVector, n: usize) -> Result<CVector> {
    if n == 0 || !stacked.len().is_multiple_of(n) {
        return Err(Error::Dimension(format!(
            "stacked length {} is not a multiple of {n}",
            stacked.len()
        )));
    }
    let mut h = CVector::zeros(n);
    for block in 0..stacked.len() / n {
        h += stacked.rows(block * n, n);
    }
    Ok(h)
}

/// Index of the largest score; ties go to the lower index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Flattens windows row-major into a batch matrix.
pub fn batch_matrix(windows: &[&CsiWindow]) -> Result<Array2<f64>> {
    let len = windows.first().map_or(0, |w| w.data.len());
    let mut out = Array2::zeros((windows.len(), len));
    for (mut row, w) in out.rows_mut().into_iter().zip(windows) {
        if w.data.len() != len {
            return Err(Error::Dimension("windows differ in size".into()));
        }
        row.iter_mut().zip(w.data.iter()).for_each(|(d, s)| *d = *s);
    }
    Ok(out)
}

pub fn classify(net: &ConvNet, window: &CsiWindow) -> Result<usize> {
    check_window(net, window)?;
    let scores = net.forward(&batch_matrix(&[window])?)?;
    Ok(argmax(scores.row(0).as_slice().expect("contiguous row")))
}

/// Classifies many windows at once.
pub fn classify_batch(net: &ConvNet, windows: &[CsiWindow]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(256) {
        for w in chunk {
            check_window(net, w)?;
        }
        let refs: Vec<&CsiWindow> = chunk.iter().collect();
        let scores = net.forward(&batch_matrix(&refs)?)?;
        out.extend(
            scores
                .rows()
                .into_iter()
                .map(|r| argmax(r.as_slice().expect("contiguous row"))),
        );
    }
    Ok(out)
}

fn check_window(net: &ConvNet, w: &CsiWindow) -> Result<()> {
    let s = net.spec();
    if w.rows() != s.input_rows || w.cols() != s.input_cols {
        return Err(Error::Dimension(format!(
            "window is {}x{}, network expects {}x{}",
            w.rows(),
            w.cols(),
            s.input_rows,
            s.input_cols
        )));
    }
    Ok(())
}

/// Fraction of windows whose label matches the prediction.
pub fn accuracy(net: &ConvNet, windows: &[CsiWindow]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Dataset("no windows to evaluate".into()));
    }
    let pred = classify_batch(net, windows)?;
    let hits = pred
        .iter()
        .zip(windows)
        .filter(|(p, w)| w.label == Some(**p))
        .count();
    Ok(hits as f64 / windows.len() as f64)
}

/// Doppler classes in increasing order with their pre-solved AR models.
#[derive(Debug, Clone, PartialEq)]
pub struct DopplerClassBank {
    models: Vec<ArModel>,
    order: usize,
    loading: f64,
}

impl DopplerClassBank {
    pub fn new(dopplers: &[f64], order: usize, loading: f64) -> Result<Self> {
        if dopplers.is_empty() {
            return Err(Error::Config(
                "the class bank needs at least one Doppler value".into(),
            ));
        }
        if dopplers.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(
                "class Doppler values must be strictly increasing".into(),
            ));
        }
        let models = dopplers
            .iter()
            .map(|&f| {
                let m = ArModel::for_doppler(f, loading, order)?;
                if !m.is_stable() {
                    return Err(Error::Unstable {
                        order,
                        reflection: m.spectral_radius(),
                    });
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            models,
            order,
            loading,
        })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn loading(&self) -> f64 {
        self.loading
    }

    pub fn dopplers(&self) -> Vec<f64> {
        self.models
            .iter()
            .map(|m| m.f_n.expect("bank models carry their Doppler"))
            .collect()
    }

    pub fn model(&self, class: usize) -> Result<&ArModel> {
        self.models.get(class).ok_or(Error::IndexOutOfRange {
            index: class,
            len: self.models.len(),
        })
    }
}

/// Classified prediction: the chosen class and `P` predicted stacked vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnArPrediction {
    pub class: usize,
    pub predictions: Vec<CVector>,
}

/// Classifies the window built from `history` (stacked estimates, oldest
/// first) and runs the matching AR model `horizon` steps ahead.
pub fn cnn_ar_predict(
    history: &[CVector],
    n_antennas: usize,
    net: &ConvNet,
    bank: &DopplerClassBank,
    horizon: usize,
) -> Result<CnnArPrediction> {
    if net.spec().classes != bank.len() {
        return Err(Error::Config(format!(
            "classifier has {} classes, bank has {}",
            net.spec().classes,
            bank.len()
        )));
    }
    let refs = history
        .iter()
        .map(|f| reference_channel(f, n_antennas))
        .collect::<Result<Vec<_>>>()?;
    let window = preprocess(&refs, 0)?;
    let class = classify(net, &window)?;
    predict_with_class(history, bank, class, horizon)
}

/// Prediction with an externally supplied class.
pub fn predict_with_class(
    history: &[CVector],
    bank: &DopplerClassBank,
    class: usize,
    horizon: usize,
) -> Result<CnnArPrediction> {
    let model = bank.model(class)?;
    Ok(CnnArPrediction {
        class,
        predictions: predict_multi(history, model, horizon)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn window_layout() {
        let h = vec![
            CVector::from_vec(vec![c(1.0, 2.0)]),
            CVector::from_vec(vec![c(3.0, 4.0)]),
        ];
        let m = window_matrix(&h).unwrap();
        assert_eq!(m, ndarray::arr2(&[[1.0, 3.0], [2.0, 4.0]]));
        let real = vec![CVector::from_vec(vec![c(1.0, 0.0), c(-2.0, 0.0)]); 3];
        let m = window_matrix(&real).unwrap();
        assert!(m.slice(ndarray::s![2.., ..]).iter().all(|&x| x == 0.0));
        assert!(window_matrix(&[CVector::zeros(2), CVector::zeros(3)]).is_err());
    }

    #[test]
    fn standardized_moments() {
        let h: Vec<CVector> = (0..7)
            .map(|l| {
                CVector::from_fn(3, |i, _| {
                    c((l * i) as f64 * 0.3 + 1e-3, (l + i) as f64 * -2.0)
                })
            })
            .collect();
        let w = preprocess(&h, 0).unwrap();
        let len = w.data.len() as f64;
        let mean = w.data.sum() / len;
        let var = w.data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / len;
        assert!(mean.abs() <= 1e-12);
        assert!((var - 1.0).abs() <= 1e-9);
        assert!(preprocess(&[CVector::zeros(2)], 0).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.9]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        let s = [0.2f64, 0.7, 0.7, 0.1];
        let t: Vec<f64> = s.iter().map(|x| (3.0 * *x).exp()).collect();
        assert_eq!(argmax(&s), argmax(&t));
    }

    #[test]
    fn bank_validation() {
        let bank = DopplerClassBank::new(&[0.01, 0.02, 0.05], 8, 0.1).unwrap();
        assert_eq!(bank.len(), 3);
        assert_eq!(bank.dopplers(), vec![0.01, 0.02, 0.05]);
        assert!(DopplerClassBank::new(&[0.02, 0.02], 4, 0.1).is_err());
        assert!(DopplerClassBank::new(&[], 4, 0.1).is_err());
        assert!(bank.model(3).is_err());
    }

    #[test]
    fn reference_channel_sums_blocks() {
        let f = CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0), c(2.0, 0.0), c(0.0, 3.0)]);
        let h = reference_channel(&f, 2).unwrap();
        assert_eq!(h, CVector::from_vec(vec![c(3.0, 0.0), c(0.0, 4.0)]));
        assert!(reference_channel(&f, 3).is_err());
    }
}
