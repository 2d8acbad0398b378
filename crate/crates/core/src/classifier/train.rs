use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::net::{ConvNet, NetSpec};
use super::{argmax, batch_matrix, standardize, CsiWindow};
use crate::error::{Error, Result};

/// Hyperparameters and the histories recorded while training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without validation improvement before stopping; `None` never
    /// stops early. The count only starts once validation accuracy has
    /// exceeded twice the chance rate, so the initial plateau where every
    /// score sits near `1 / classes` cannot end training.
    pub patience: Option<usize>,
    pub seed: u64,
    /// Random per-antenna phase rotation and antenna permutation of every
    /// training window, redrawn each epoch.
    pub augment: bool,
    pub loss_history: Vec<f64>,
    pub val_loss_history: Vec<f64>,
    pub val_accuracy_history: Vec<f64>,
    pub best_epoch: Option<usize>,
}

impl TrainingRun {
    pub fn new(seed: u64) -> Self {
        Self {
            epochs: 300,
            batch_size: 50,
            learning_rate: 1e-3,
            patience: Some(20),
            seed,
            augment: true,
            loss_history: Vec::new(),
            val_loss_history: Vec::new(),
            val_accuracy_history: Vec::new(),
            best_epoch: None,
        }
    }

    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.val_accuracy_history[e])
    }
}

/// Rotates each antenna's complex row by an independent random phase,
/// permutes the antennas, and re-standardizes.
pub fn augment<R: Rng + ?Sized>(window: &CsiWindow, rng: &mut R) -> CsiWindow {
    let n = window.rows() / 2;
    let v = window.cols();
    let phases: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            (t.cos(), t.sin())
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let src = &window.data;
    let mut data = Array2::zeros((2 * n, v));
    for (dst, &i) in order.iter().enumerate() {
        let (c, s) = phases[i];
        for l in 0..v {
            let (re, im) = (src[(i, l)], src[(n + i, l)]);
            data[(dst, l)] = re * c - im * s;
            data[(n + dst, l)] = re * s + im * c;
        }
    }
    // a window that standardized once keeps non-zero variance under rotation
    if standardize(&mut data).is_err() {
        data = window.data.clone();
    }
    CsiWindow {
        data,
        user: window.user,
        label: window.label,
    }
}

fn labels_of(windows: &[CsiWindow], classes: usize) -> Result<Vec<usize>> {
    windows
        .iter()
        .map(|w| match w.label {
            Some(l) if l < classes => Ok(l),
            Some(l) => Err(Error::Dataset(format!(
                "label {l} outside {classes} classes"
            ))),
            None => Err(Error::Dataset("training window without label".into())),
        })
        .collect()
}

/// Mean loss and accuracy over a labelled set, evaluated in fixed chunks.
fn evaluate(net: &ConvNet, windows: &[CsiWindow], labels: &[usize]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut hits = 0usize;
    let c = net.spec().classes;
    for (chunk, lab) in windows.chunks(250).zip(labels.chunks(250)) {
        let refs: Vec<&CsiWindow> = chunk.iter().collect();
        let scores = net.forward(&batch_matrix(&refs)?)?;
        let (l, _) = ConvNet::mse_loss(&scores, lab);
        loss += l * (chunk.len() * c) as f64;
        hits += scores
            .rows()
            .into_iter()
            .zip(lab)
            .filter(|(r, &y)| argmax(r.as_slice().expect("contiguous row")) == y)
            .count();
    }
    Ok((
        loss / (windows.len() * c) as f64,
        hits as f64 / windows.len() as f64,
    ))
}

/// Mini-batch Adam on MSE against one-hot targets. Returns the weights with
/// the lowest validation loss; `run` receives the per-epoch histories.
pub fn train(
    train_set: &[CsiWindow],
    val_set: &[CsiWindow],
    spec: NetSpec,
    run: &mut TrainingRun,
) -> Result<ConvNet> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Dataset(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if run.batch_size == 0 || run.epochs == 0 {
        return Err(Error::Config(
            "batch size and epoch budget must be positive".into(),
        ));
    }
    let classes = spec.classes;
    let train_labels = labels_of(train_set, classes)?;
    let val_labels = labels_of(val_set, classes)?;
    let mut present = vec![false; classes];
    train_labels.iter().for_each(|&l| present[l] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::Dataset("training needs at least two classes".into()));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(run.seed);
    let mut net = ConvNet::new(spec, run.learning_rate, &mut rng)?;
    let mut best_layers = net.layers.clone();
    let mut best_loss = f64::INFINITY;
    let mut stale = 0usize;
    let mut learning = false;
    let chance = (2.0 / classes as f64).min(0.75);
    run.loss_history.clear();
    run.val_loss_history.clear();
    run.val_accuracy_history.clear();
    run.best_epoch = None;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..run.epochs {
        let epoch_set: Vec<CsiWindow> = if run.augment {
            train_set.iter().map(|w| augment(w, &mut rng)).collect()
        } else {
            train_set.to_vec()
        };
        let refs: Vec<&CsiWindow> = epoch_set.iter().collect();
        let inputs = batch_matrix(&refs)?;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(run.batch_size) {
            let xb = inputs.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| train_labels[i]).collect();
            let cache = net.forward_cached(&xb)?;
            let (loss, d) = ConvNet::mse_loss(&cache.scores, &yb);
            let grads = net.backward(&cache, &d);
            net.adam_step(&grads);
            epoch_loss += loss * chunk.len() as f64;
        }
        run.loss_history.push(epoch_loss / train_set.len() as f64);
        let (val_loss, val_acc) = evaluate(&net, val_set, &val_labels)?;
        run.val_loss_history.push(val_loss);
        run.val_accuracy_history.push(val_acc);
        learning |= val_acc > chance;
        if val_loss < best_loss {
            best_loss = val_loss;
            best_layers = net.layers.clone();
            run.best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += usize::from(learning);
            if run.patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }
    net.layers = best_layers;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::net::ConvSpec;

    fn spec() -> NetSpec {
        NetSpec {
            input_rows: 4,
            input_cols: 6,
            conv: vec![ConvSpec {
                filters: 2,
                kernel_rows: 1,
                kernel_cols: 3,
            }],
            hidden: vec![8, 6],
            classes: 2,
        }
    }

    fn constant_set(per_class: usize) -> Vec<CsiWindow> {
        let mut out = Vec::new();
        for i in 0..per_class {
            for (label, v) in [(0usize, 1.0), (1usize, -1.0)] {
                let mut data = Array2::from_elem((4, 6), v);
                // small ramp keeps the windows distinct
                data[(0, 0)] += i as f64 * 1e-3;
                out.push(CsiWindow {
                    data,
                    user: 0,
                    label: Some(label),
                });
            }
        }
        out
    }

    fn plain(seed: u64) -> TrainingRun {
        TrainingRun {
            augment: false,
            batch_size: 10,
            ..TrainingRun::new(seed)
        }
    }

    #[test]
    fn separable_classes_are_learned() {
        let data = constant_set(30);
        let mut run = TrainingRun {
            epochs: 20,
            learning_rate: 1e-2,
            ..plain(1)
        };
        let net = train(&data[..40], &data[40..], spec(), &mut run).unwrap();
        assert!(run.loss_history.len() <= 20);
        assert_eq!(super::super::accuracy(&net, &data[40..]).unwrap(), 1.0);
    }

    #[test]
    fn loss_does_not_diverge_and_is_reproducible() {
        let data = constant_set(30);
        let mut a = TrainingRun {
            epochs: 6,
            patience: None,
            ..plain(3)
        };
        let na = train(&data[..40], &data[40..], spec(), &mut a).unwrap();
        assert!(a.loss_history[5] <= a.loss_history[0]);
        let mut b = TrainingRun {
            epochs: 6,
            patience: None,
            ..plain(3)
        };
        let nb = train(&data[..40], &data[40..], spec(), &mut b).unwrap();
        assert_eq!(na, nb);
        assert_eq!(a, b);
    }

    #[test]
    fn truncation_matches_shorter_budget() {
        let data = constant_set(20);
        let mut long = TrainingRun {
            epochs: 8,
            patience: None,
            ..plain(5)
        };
        train(&data[..30], &data[30..], spec(), &mut long).unwrap();
        let mut short = TrainingRun {
            epochs: 5,
            patience: None,
            ..plain(5)
        };
        train(&data[..30], &data[30..], spec(), &mut short).unwrap();
        assert_eq!(&long.loss_history[..5], &short.loss_history[..]);
        assert_eq!(&long.val_loss_history[..5], &short.val_loss_history[..]);
    }

    #[test]
    fn rejects_degenerate_sets() {
        let data = constant_set(5);
        let one_class: Vec<CsiWindow> = data
            .iter()
            .filter(|w| w.label == Some(0))
            .cloned()
            .collect();
        assert!(train(&one_class, &data, spec(), &mut plain(0)).is_err());
        assert!(train(&[], &data, spec(), &mut plain(0)).is_err());
    }

    #[test]
    fn augmentation_keeps_standardization_and_row_energy() {
        let mut r = ChaCha20Rng::seed_from_u64(9);
        let mut data = Array2::from_shape_fn((6, 5), |(i, j)| {
            ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * i as f64
        });
        standardize(&mut data).unwrap();
        let w = CsiWindow {
            data,
            user: 0,
            label: Some(1),
        };
        let a = augment(&w, &mut r);
        let mean = a.data.sum() / a.data.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert_eq!(a.label, Some(1));
        assert_eq!(a.data.dim(), (6, 5));
    }
}
