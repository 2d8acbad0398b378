//! Labelled window generation and the binary dataset format.
//!
//! File layout (little-endian): magic `RISDSET1`, `u32` version, `u32` record
//! count, `u32` rows, `u32` cols, then per record a `u32` label followed by
//! `rows * cols` `f64` values in row-major order.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::{preprocess, reference_channel, CsiWindow};
use crate::channel::{AgingSampler, ChannelTrace};
use crate::error::{Error, Result};
use crate::estimation::PilotEstimator;
use crate::scenario::{Geometry, Scenario};

const MAGIC: &[u8; 8] = b"RISDSET1";
const VERSION: u32 = 1;

/// Window count and seed of one generated split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSpec {
    pub per_class: usize,
    pub seed: u64,
}

/// For every class and sample: draw a single-user geometry from the dataset
/// ranges, synthesize `V` intervals at the class Doppler, run the pilot and
/// least-squares pipeline and keep the standardized reference-phase window.
/// Each sample owns its random stream, so the output does not depend on
/// thread scheduling.
pub fn gen_dataset(
    scenario: &Scenario,
    class_dopplers: &[f64],
    spec: DatasetSpec,
) -> Result<Vec<CsiWindow>> {
    if spec.per_class == 0 {
        return Err(Error::Dataset(
            "at least one sample per class is required".into(),
        ));
    }
    let cfg = &scenario.system;
    let ranges = &scenario.dataset;
    ranges.validate(scenario.geometry.d_bs_ris)?;
    let v = cfg.train_intervals;
    let estimator = PilotEstimator::from_config(cfg)?;
    let samplers = class_dopplers
        .iter()
        .map(|&f| AgingSampler::new(f, v, cfg.loading))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..class_dopplers.len())
        .flat_map(|c| (0..spec.per_class).map(move |i| (c, i)))
        .collect();
    jobs.par_iter()
        .map(|&(class, i)| {
            let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
            rng.set_stream(((class as u64) << 32) | i as u64);
            let geom = Geometry {
                d_bs_ris: scenario.geometry.d_bs_ris,
                d_h: vec![rng.random_range(ranges.d_h[0]..=ranges.d_h[1])],
                d_v: vec![rng.random_range(ranges.d_v[0]..=ranges.d_v[1])],
            };
            let trace = ChannelTrace::generate(cfg, &geom, &samplers[class], &mut rng)?;
            let refs = (0..v)
                .map(|l| {
                    let f = estimator
                        .estimate_interval(&trace, l, &mut rng)?
                        .swap_remove(0);
                    reference_channel(&f, cfg.n_bs_antennas)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut w = preprocess(&refs, 0)?;
            w.label = Some(class);
            Ok(w)
        })
        .collect()
}

pub fn write_dataset<W: Write>(mut w: W, windows: &[CsiWindow]) -> Result<()> {
    let (rows, cols) = windows.first().map_or((0, 0), |x| x.data.dim());
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(windows.len() as u32)?;
    w.write_u32::<LittleEndian>(rows as u32)?;
    w.write_u32::<LittleEndian>(cols as u32)?;
    for win in windows {
        if win.data.dim() != (rows, cols) {
            return Err(Error::Dataset("windows differ in size".into()));
        }
        let label = win
            .label
            .ok_or_else(|| Error::Dataset("cannot store an unlabelled window".into()))?;
        w.write_u32::<LittleEndian>(label as u32)?;
        for &x in win.data.iter() {
            w.write_f64::<LittleEndian>(x)?;
        }
    }
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Vec<CsiWindow>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a dataset file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {version}"
        )));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let rows = r.read_u32::<LittleEndian>()? as usize;
    let cols = r.read_u32::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let label = r.read_u32::<LittleEndian>()? as usize;
        let mut vals = vec![0.0; rows * cols];
        r.read_f64_into::<LittleEndian>(&mut vals)?;
        if vals.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("non-finite value in dataset".into()));
        }
        let data = Array2::from_shape_vec((rows, cols), vals).expect("sized above");
        out.push(CsiWindow {
            data,
            user: 0,
            label: Some(label),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::SystemConfig;

    fn small_scenario() -> Scenario {
        Scenario {
            system: SystemConfig {
                train_intervals: 8,
                ..SystemConfig::default()
            },
            ..Scenario::default()
        }
    }

    #[test]
    fn balanced_finite_standardized() {
        let s = small_scenario();
        let f = [0.01, 0.05, 0.1];
        let w = gen_dataset(
            &s,
            &f,
            DatasetSpec {
                per_class: 4,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!(w.len(), 12);
        for c in 0..3 {
            assert_eq!(w.iter().filter(|x| x.label == Some(c)).count(), 4);
        }
        for x in &w {
            assert_eq!(x.data.dim(), (24, 8));
            assert!(x.data.iter().all(|v| v.is_finite()));
            assert!((x.data.sum() / x.data.len() as f64).abs() < 1e-12);
        }
        let again = gen_dataset(
            &s,
            &f,
            DatasetSpec {
                per_class: 4,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!(w, again);
    }

    #[test]
    fn file_round_trip() {
        let s = small_scenario();
        let w = gen_dataset(
            &s,
            &[0.02, 0.04],
            DatasetSpec {
                per_class: 2,
                seed: 1,
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &w).unwrap();
        assert_eq!(buf.len(), 8 + 16 + 4 * (4 + 24 * 8 * 8));
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, w);
        assert!(read_dataset(&buf[..20]).is_err());
    }
}
