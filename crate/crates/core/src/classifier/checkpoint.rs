//! Binary classifier checkpoint.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "RISCNNAR" | u32 version
//! u32 input_rows | u32 input_cols | u32 classes
//! u32 n_conv | n_conv x (u32 filters, u32 kernel_rows, u32 kernel_cols)
//! u32 n_hidden | n_hidden x u32 units
//! bank: u32 order | f64 loading | u32 n_classes | n_classes x f64 f_n
//! per layer: u32 rows | u32 cols | rows*cols f64 weights (row-major) | rows f64 biases
//! ```
//!
//! The bank is stored by reference (Doppler values, order, loading) and
//! re-solved on load. Optimizer moments are not stored.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use super::net::{ConvNet, ConvSpec, Layer, NetSpec};
use super::DopplerClassBank;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RISCNNAR";
const VERSION: u32 = 1;
/// Guards allocations when reading corrupt files.
const MAX_DIM: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: ConvNet,
    pub bank: DopplerClassBank,
}

impl Checkpoint {
    pub fn new(net: ConvNet, bank: DopplerClassBank) -> Result<Self> {
        if net.spec().classes != bank.len() {
            return Err(Error::Config(format!(
                "classifier has {} classes, bank has {}",
                net.spec().classes,
                bank.len()
            )));
        }
        Ok(Self { net, bank })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let s = self.net.spec();
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        for v in [s.input_rows, s.input_cols, s.classes, s.conv.len()] {
            w.write_u32::<LittleEndian>(v as u32)?;
        }
        for c in &s.conv {
            for v in [c.filters, c.kernel_rows, c.kernel_cols] {
                w.write_u32::<LittleEndian>(v as u32)?;
            }
        }
        w.write_u32::<LittleEndian>(s.hidden.len() as u32)?;
        for &h in &s.hidden {
            w.write_u32::<LittleEndian>(h as u32)?;
        }
        w.write_u32::<LittleEndian>(self.bank.order() as u32)?;
        w.write_f64::<LittleEndian>(self.bank.loading())?;
        let dopplers = self.bank.dopplers();
        w.write_u32::<LittleEndian>(dopplers.len() as u32)?;
        for f in dopplers {
            w.write_f64::<LittleEndian>(f)?;
        }
        for layer in &self.net.layers {
            w.write_u32::<LittleEndian>(layer.w.nrows() as u32)?;
            w.write_u32::<LittleEndian>(layer.w.ncols() as u32)?;
            for &x in layer.w.iter() {
                w.write_f64::<LittleEndian>(x)?;
            }
            for &x in layer.b.iter() {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R, learning_rate: f64) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a classifier checkpoint".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let input_rows = read_dim(&mut r)?;
        let input_cols = read_dim(&mut r)?;
        let classes = read_dim(&mut r)?;
        let n_conv = read_dim(&mut r)?;
        let conv = (0..n_conv)
            .map(|_| {
                Ok(ConvSpec {
                    filters: read_dim(&mut r)?,
                    kernel_rows: read_dim(&mut r)?,
                    kernel_cols: read_dim(&mut r)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n_hidden = read_dim(&mut r)?;
        let hidden = (0..n_hidden)
            .map(|_| read_dim(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let spec = NetSpec {
            input_rows,
            input_cols,
            conv,
            hidden,
            classes,
        };
        spec.validate()?;

        let order = read_dim(&mut r)?;
        let loading = r.read_f64::<LittleEndian>()?;
        let n_bank = read_dim(&mut r)?;
        let mut dopplers = vec![0.0; n_bank];
        r.read_f64_into::<LittleEndian>(&mut dopplers)?;
        let bank = DopplerClassBank::new(&dopplers, order, loading)?;

        let shapes = spec.weight_shapes();
        let mut layers = Vec::with_capacity(shapes.len());
        for (rows, cols) in shapes {
            let (fr, fc) = (read_dim(&mut r)?, read_dim(&mut r)?);
            if (fr, fc) != (rows, cols) {
                return Err(Error::Format(format!(
                    "layer is {fr}x{fc}, expected {rows}x{cols}"
                )));
            }
            let mut w = vec![0.0; rows * cols];
            r.read_f64_into::<LittleEndian>(&mut w)?;
            let mut b = vec![0.0; rows];
            r.read_f64_into::<LittleEndian>(&mut b)?;
            layers.push(Layer {
                w: Array2::from_shape_vec((rows, cols), w).expect("sized above"),
                b: Array1::from_vec(b),
            });
        }
        let net = ConvNet::from_layers(spec, layers, learning_rate)?;
        Self::new(net, bank)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::read_from(std::fs::read(path)?.as_slice(), 1e-3)
    }
}

fn read_dim<R: Read>(r: &mut R) -> Result<usize> {
    let v = r.read_u32::<LittleEndian>()? as usize;
    if v > MAX_DIM {
        return Err(Error::Format(format!("dimension {v} is implausibly large")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn round_trip_is_exact() {
        let spec = NetSpec {
            input_rows: 4,
            input_cols: 6,
            conv: vec![ConvSpec {
                filters: 2,
                kernel_rows: 3,
                kernel_cols: 3,
            }],
            hidden: vec![5],
            classes: 3,
        };
        let net = ConvNet::new(spec, 1e-3, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        let bank = DopplerClassBank::new(&[0.01, 0.02, 0.03], 4, 0.1).unwrap();
        let ck = Checkpoint::new(net, bank).unwrap();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(buf.as_slice(), 1e-3).unwrap();
        assert_eq!(back, ck);
        assert!(Checkpoint::read_from(&buf[..buf.len() - 3], 1e-3).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read_from(bad.as_slice(), 1e-3).is_err());
    }

    #[test]
    fn class_count_must_match_bank() {
        let spec = NetSpec::standard(2, 8, 3);
        let spec = NetSpec {
            conv: vec![],
            ..spec
        };
        let net = ConvNet::new(spec, 1e-3, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        let bank = DopplerClassBank::new(&[0.01, 0.02], 4, 0.1).unwrap();
        assert!(Checkpoint::new(net, bank).is_err());
    }
}
