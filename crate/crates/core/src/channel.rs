//! Time-varying channel synthesis.
//!
//! The BS-RIS channel `H` is drawn once per run. The BS-UE direct channel
//! `d[l]` and the per-sub-surface RIS-UE channel `g[l]` age across coherence
//! intervals: every scalar trajectory is an exact draw from a zero-mean complex
//! Gaussian process whose covariance is the loaded Jakes Toeplitz matrix
//! `variance * (J0(2 pi f_n |i - j|) + eps * delta_ij)`.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::bessel::bessel_j0;
use crate::error::{Error, Result};
use crate::scenario::{bs_ris_variance, link_variances, Geometry, SystemConfig};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

/// Jakes autocorrelation `J0(2 pi f_n |lag|)`.
pub fn acf(f_n: f64, lag: i64) -> f64 {
    assert!(f_n >= 0.0, "normalized Doppler must be non-negative");
    let x = 2.0 * std::f64::consts::PI * f_n * lag.unsigned_abs() as f64;
    bessel_j0(x).expect("finite argument")
}

/// One draw from CN(0, 1).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Unit-modulus RIS reflection vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector(CVector);

impl PhaseVector {
    pub fn ones(m: usize) -> Self {
        Self(CVector::from_element(m, Complex64::new(1.0, 0.0)))
    }

    pub fn from_phases(theta: &[f64]) -> Self {
        Self(CVector::from_iterator(
            theta.len(),
            theta.iter().map(|&t| Complex64::from_polar(1.0, t)),
        ))
    }

    /// Accepts coefficients whose modulus is within `1e-9` of one.
    pub fn new(coeffs: CVector) -> Result<Self> {
        if let Some((m, c)) = coeffs
            .iter()
            .enumerate()
            .find(|(_, c)| (c.norm() - 1.0).abs() > 1e-9)
        {
            return Err(Error::Domain(format!(
                "reflection coefficient {m} has modulus {}",
                c.norm()
            )));
        }
        Ok(Self(coeffs))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &CVector {
        &self.0
    }

    pub fn phases(&self) -> Vec<f64> {
        self.0.iter().map(|c| c.arg()).collect()
    }
}

/// Cholesky factor of the loaded Jakes covariance, reusable across draws.
#[derive(Debug, Clone)]
pub struct AgingSampler {
    f_n: f64,
    epsilon: f64,
    factor: DMatrix<f64>,
}

impl AgingSampler {
    pub fn new(f_n: f64, n_intervals: usize, epsilon: f64) -> Result<Self> {
        if n_intervals == 0 {
            return Err(Error::Domain("n_intervals must be >= 1".into()));
        }
        if !(f_n >= 0.0) {
            return Err(Error::Domain(format!(
                "f_n must be non-negative, got {f_n}"
            )));
        }
        let r: Vec<f64> = (0..n_intervals).map(|j| acf(f_n, j as i64)).collect();
        let cov = DMatrix::from_fn(n_intervals, n_intervals, |i, j| {
            r[i.abs_diff(j)] + if i == j { epsilon } else { 0.0 }
        });
        let chol = cov.cholesky().ok_or(Error::Factorization {
            f_n,
            len: n_intervals,
            epsilon,
        })?;
        Ok(Self {
            f_n,
            epsilon,
            factor: chol.l(),
        })
    }

    pub fn f_n(&self) -> f64 {
        self.f_n
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.factor.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One trajectory with per-sample power `variance * (1 + eps)`.
    pub fn sample<R: Rng + ?Sized>(&self, variance: f64, rng: &mut R) -> Vec<Complex64> {
        let n = self.len();
        let z: Vec<Complex64> = (0..n).map(|_| complex_normal(rng)).collect();
        let scale = variance.sqrt();
        (0..n)
            .map(|i| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, zj) in z.iter().enumerate().take(i + 1) {
                    acc += *zj * self.factor[(i, j)];
                }
                acc * scale
            })
            .collect()
    }
}

/// Single aged scalar trajectory; see [`AgingSampler`].
pub fn generate_aged_trace<R: Rng + ?Sized>(
    f_n: f64,
    n_intervals: usize,
    variance: f64,
    epsilon: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    Ok(AgingSampler::new(f_n, n_intervals, epsilon)?.sample(variance, rng))
}

/// Quasi-static BS-RIS channel, `M x N` with i.i.d. CN(0, L(d_BR)) entries.
pub fn generate_static_channel<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    geom: &Geometry,
    rng: &mut R,
) -> Result<CMatrix> {
    let var = bs_ris_variance(cfg, geom)?;
    Ok(static_channel_with_variance(
        cfg.ris_groups,
        cfg.n_bs_antennas,
        var,
        rng,
    ))
}

fn static_channel_with_variance<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    var: f64,
    rng: &mut R,
) -> CMatrix {
    let s = var.sqrt();
    // column-major fill order is part of the determinism contract
    CMatrix::from_fn(m, n, |_, _| complex_normal(rng) * s)
}

/// `G = H^H diag(g)`.
pub fn cascade(h: &CMatrix, g: &CVector) -> Result<CMatrix> {
    if h.nrows() != g.len() {
        return Err(Error::Dimension(format!(
            "H has {} rows, g has {} entries",
            h.nrows(),
            g.len()
        )));
    }
    let n = h.ncols();
    Ok(CMatrix::from_fn(n, g.len(), |i, m| h[(m, i)].conj() * g[m]))
}

/// `h = G theta + d`.
pub fn effective_channel(g: &CMatrix, theta: &CVector, d: &CVector) -> Result<CVector> {
    if g.ncols() != theta.len() || g.nrows() != d.len() {
        return Err(Error::Dimension(format!(
            "G is {}x{}, theta has {}, d has {}",
            g.nrows(),
            g.ncols(),
            theta.len(),
            d.len()
        )));
    }
    Ok(g * theta + d)
}

/// Aged channels of one user across `N_s` coherence intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTrace {
    pub direct: Vec<CVector>,
    pub ris_user: Vec<CVector>,
    pub direct_variance: f64,
    pub ris_user_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    /// `M x N`, fixed for the run.
    pub bs_ris: CMatrix,
    pub users: Vec<UserTrace>,
    pub f_n: f64,
    pub bs_ris_variance: f64,
}

impl ChannelTrace {
    /// Draws `H` then, per user, the `N` direct and `M` RIS-UE trajectories.
    pub fn generate<R: Rng + ?Sized>(
        cfg: &SystemConfig,
        geom: &Geometry,
        sampler: &AgingSampler,
        rng: &mut R,
    ) -> Result<Self> {
        let (n, m) = (cfg.n_bs_antennas, cfg.ris_groups);
        let bs_ris_var = bs_ris_variance(cfg, geom)?;
        let bs_ris = static_channel_with_variance(m, n, bs_ris_var, rng);
        let n_s = sampler.len();
        let mut users = Vec::with_capacity(geom.n_users());
        for k in 0..geom.n_users() {
            let var = link_variances(cfg, geom, k)?;
            let d_series: Vec<_> = (0..n).map(|_| sampler.sample(var.direct, rng)).collect();
            let g_series: Vec<_> = (0..m).map(|_| sampler.sample(var.ris_user, rng)).collect();
            users.push(UserTrace {
                direct: transpose_series(&d_series, n_s),
                ris_user: transpose_series(&g_series, n_s),
                direct_variance: var.direct,
                ris_user_variance: var.ris_user,
            });
        }
        Ok(Self {
            bs_ris,
            users,
            f_n: sampler.f_n(),
            bs_ris_variance: bs_ris_var,
        })
    }

    pub fn n_antennas(&self) -> usize {
        self.bs_ris.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.bs_ris.nrows()
    }

    pub fn n_intervals(&self) -> usize {
        self.users.first().map_or(0, |u| u.direct.len())
    }

    fn check(&self, k: usize, l: usize) -> Result<&UserTrace> {
        let user = self.users.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            len: self.users.len(),
        })?;
        if l >= user.direct.len() {
            return Err(Error::IndexOutOfRange {
                index: l,
                len: user.direct.len(),
            });
        }
        Ok(user)
    }

    pub fn direct(&self, k: usize, l: usize) -> Result<&CVector> {
        Ok(&self.check(k, l)?.direct[l])
    }

    pub fn cascaded(&self, k: usize, l: usize) -> Result<CMatrix> {
        cascade(&self.bs_ris, &self.check(k, l)?.ris_user[l])
    }

    pub fn effective(&self, k: usize, l: usize, theta: &PhaseVector) -> Result<CVector> {
        effective_channel(&self.cascaded(k, l)?, theta.as_vector(), self.direct(k, l)?)
    }

    /// Stacked `[d; f_1; ...; f_M]` of length `N (M + 1)`.
    pub fn stacked(&self, k: usize, l: usize) -> Result<CVector> {
        let g = self.cascaded(k, l)?;
        let d = self.direct(k, l)?;
        Ok(stack(d, &g))
    }

    /// Binary dump: magic, version, `N M N_s K` as u32, `f_n` as f64, then `H`
    /// row-major followed by each user's `d[l]` and `g[l]` per interval.
    /// Complex values are written as (re, im) little-endian f64 pairs.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TRACE_MAGIC)?;
        w.write_u32::<LittleEndian>(TRACE_VERSION)?;
        for v in [
            self.n_antennas(),
            self.n_groups(),
            self.n_intervals(),
            self.users.len(),
        ] {
            w.write_u32::<LittleEndian>(v as u32)?;
        }
        w.write_f64::<LittleEndian>(self.f_n)?;
        for r in 0..self.bs_ris.nrows() {
            for c in 0..self.bs_ris.ncols() {
                write_complex(&mut w, self.bs_ris[(r, c)])?;
            }
        }
        for u in &self.users {
            for l in 0..u.direct.len() {
                for &x in u.direct[l].iter().chain(u.ris_user[l].iter()) {
                    write_complex(&mut w, x)?;
                }
            }
        }
        Ok(())
    }

    /// Inverse of [`ChannelTrace::write_to`]. Variances are not stored and read back as zero.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TRACE_MAGIC {
            return Err(Error::Format("not a channel trace file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != TRACE_VERSION {
            return Err(Error::Format(format!(
                "unsupported trace version {version}"
            )));
        }
        let n = r.read_u32::<LittleEndian>()? as usize;
        let m = r.read_u32::<LittleEndian>()? as usize;
        let n_s = r.read_u32::<LittleEndian>()? as usize;
        let k = r.read_u32::<LittleEndian>()? as usize;
        let f_n = r.read_f64::<LittleEndian>()?;
        let mut bs_ris = CMatrix::zeros(m, n);
        for row in 0..m {
            for col in 0..n {
                bs_ris[(row, col)] = read_complex(&mut r)?;
            }
        }
        let mut users = Vec::with_capacity(k);
        for _ in 0..k {
            let mut direct = Vec::with_capacity(n_s);
            let mut ris_user = Vec::with_capacity(n_s);
            for _ in 0..n_s {
                let d: Vec<_> = (0..n)
                    .map(|_| read_complex(&mut r))
                    .collect::<Result<_>>()?;
                let g: Vec<_> = (0..m)
                    .map(|_| read_complex(&mut r))
                    .collect::<Result<_>>()?;
                direct.push(CVector::from_vec(d));
                ris_user.push(CVector::from_vec(g));
            }
            users.push(UserTrace {
                direct,
                ris_user,
                direct_variance: 0.0,
                ris_user_variance: 0.0,
            });
        }
        Ok(Self {
            bs_ris,
            users,
            f_n,
            bs_ris_variance: 0.0,
        })
    }
}

const TRACE_MAGIC: &[u8; 8] = b"RISTRACE";
const TRACE_VERSION: u32 = 1;

pub(crate) fn write_complex<W: Write>(w: &mut W, c: Complex64) -> std::io::Result<()> {
    w.write_f64::<LittleEndian>(c.re)?;
    w.write_f64::<LittleEndian>(c.im)
}

pub(crate) fn read_complex<R: Read>(r: &mut R) -> Result<Complex64> {
    let re = r.read_f64::<LittleEndian>()?;
    let im = r.read_f64::<LittleEndian>()?;
    Ok(Complex64::new(re, im))
}

fn transpose_series(series: &[Vec<Complex64>], n_s: usize) -> Vec<CVector> {
    (0..n_s)
        .map(|l| CVector::from_iterator(series.len(), series.iter().map(|s| s[l])))
        .collect()
}

/// `[d; G[:,0]; ...; G[:,M-1]]`.
pub fn stack(d: &CVector, g: &CMatrix) -> CVector {
    let n = d.len();
    let mut out = CVector::zeros(n * (g.ncols() + 1));
    out.rows_mut(0, n).copy_from(d);
    for m in 0..g.ncols() {
        out.rows_mut(n * (m + 1), n).copy_from(&g.column(m));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha20Rng) -> CMatrix {
        CMatrix::from_fn(r, c, |_, _| complex_normal(rng))
    }

    fn random_vector(n: usize, rng: &mut ChaCha20Rng) -> CVector {
        CVector::from_fn(n, |_, _| complex_normal(rng))
    }

    #[test]
    fn acf_values() {
        assert_eq!(acf(0.37, 0), 1.0);
        // J0(0.1 pi) from a 30-digit series
        assert!((acf(0.05, 1) - 0.975_477_774_075_249_5).abs() < 1e-12);
        assert!((acf(0.05, 2) - 0.903_712_642_092_466_3).abs() < 1e-12);
        assert_eq!(acf(0.05, -3), acf(0.05, 3));
        assert!(acf(0.3827, 1).abs() < 1e-3);
    }

    #[test]
    fn static_channel_power_and_determinism() {
        let cfg = SystemConfig::default();
        let geom = Geometry::default();
        let mut r = rng(1);
        let var = path_loss_51();
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| (complex_normal(&mut r) * var.sqrt()).norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((mean / var - 1.0).abs() < 0.02);
        let a = generate_static_channel(&cfg, &geom, &mut rng(7)).unwrap();
        let b = generate_static_channel(&cfg, &geom, &mut rng(7)).unwrap();
        assert_eq!(a, b);
        let p = a.iter().map(|c| c.norm_sqr()).sum::<f64>() / a.len() as f64;
        assert!(p > 0.3 * var && p < 3.0 * var);
    }

    fn path_loss_51() -> f64 {
        1e-3 / (51.0 * 51.0)
    }

    #[test]
    fn static_channel_scales_with_reference_gain() {
        let mut cfg = SystemConfig::default();
        let geom = Geometry::default();
        let a = generate_static_channel(&cfg, &geom, &mut rng(3)).unwrap();
        cfg.pathloss_ref *= 2.0;
        let b = generate_static_channel(&cfg, &geom, &mut rng(3)).unwrap();
        let pa: f64 = a.iter().map(|c| c.norm_sqr()).sum();
        let pb: f64 = b.iter().map(|c| c.norm_sqr()).sum();
        assert!((pb / pa - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_interval_variance() {
        let s = AgingSampler::new(0.05, 1, 0.1).unwrap();
        let mut r = rng(11);
        let trials = 100_000;
        let p: f64 = (0..trials)
            .map(|_| s.sample(2.0, &mut r)[0].norm_sqr())
            .sum::<f64>()
            / trials as f64;
        assert!((p / (2.0 * 1.1) - 1.0).abs() < 0.03, "{p}");
    }

    #[test]
    fn static_doppler_with_loading() {
        let s = AgingSampler::new(0.0, 5, 0.1).unwrap();
        let mut r = rng(12);
        let trials = 10_000;
        let (mut c1, mut c0) = (0.0, 0.0);
        for _ in 0..trials {
            let x = s.sample(1.0, &mut r);
            c1 += (x[1] * x[0].conj()).re;
            c0 += x[0].norm_sqr();
        }
        assert!(c1 / c0 >= 1.0 / 1.1 - 0.02, "{}", c1 / c0);
    }

    #[test]
    fn lag_one_correlation_at_005() {
        let s = AgingSampler::new(0.05, 4, 1e-9).unwrap();
        let mut r = rng(13);
        let trials = 10_000;
        let (mut c01, mut c00, mut c11) = (0.0, 0.0, 0.0);
        for _ in 0..trials {
            let x = s.sample(1.0, &mut r);
            c01 += (x[1] * x[0].conj()).re;
            c00 += x[0].norm_sqr();
            c11 += x[1].norm_sqr();
        }
        let rho = c01 / (c00 * c11).sqrt();
        assert!((rho - 0.975).abs() < 0.02, "{rho}");
    }

    #[test]
    fn factorization_failure_is_reported() {
        let err = AgingSampler::new(0.05, 40, -0.5).unwrap_err();
        assert!(matches!(err, Error::Factorization { .. }));
    }

    #[test]
    fn cascade_cases() {
        let mut r = rng(5);
        let h = random_matrix(3, 2, &mut r);
        let ones = CVector::from_element(3, Complex64::new(1.0, 0.0));
        assert_eq!(cascade(&h, &ones).unwrap(), h.adjoint());
        let mut e = CVector::zeros(3);
        e[1] = Complex64::new(1.0, 0.0);
        let g = cascade(&h, &e).unwrap();
        for i in 0..2 {
            assert_eq!(g[(i, 0)], Complex64::new(0.0, 0.0));
            assert_eq!(g[(i, 2)], Complex64::new(0.0, 0.0));
            assert_ne!(g[(i, 1)], Complex64::new(0.0, 0.0));
        }
        assert!(cascade(&h, &CVector::zeros(2)).is_err());
    }

    #[test]
    fn cascade_matches_hand_expansion() {
        let mut r = rng(6);
        let h = random_matrix(2, 2, &mut r);
        let g = random_vector(2, &mut r);
        let got = cascade(&h, &g).unwrap();
        let want = [
            [h[(0, 0)].conj() * g[0], h[(1, 0)].conj() * g[1]],
            [h[(0, 1)].conj() * g[0], h[(1, 1)].conj() * g[1]],
        ];
        for i in 0..2 {
            for m in 0..2 {
                assert_eq!(got[(i, m)], want[i][m]);
            }
        }
    }

    #[test]
    fn effective_channel_cases() {
        let mut r = rng(8);
        let d = random_vector(2, &mut r);
        let zero = CMatrix::zeros(2, 3);
        let theta = PhaseVector::from_phases(&[0.3, 1.0, -2.0]);
        assert_eq!(effective_channel(&zero, theta.as_vector(), &d).unwrap(), d);

        let g1 = random_matrix(2, 1, &mut r);
        let h = effective_channel(&g1, PhaseVector::ones(1).as_vector(), &d).unwrap();
        assert_eq!(h, g1.column(0) + &d);

        let g = random_matrix(2, 3, &mut r);
        let h = effective_channel(&g, theta.as_vector(), &d).unwrap();
        for i in 0..2 {
            let mut acc = d[i];
            for m in 0..3 {
                acc += g[(i, m)] * theta.as_vector()[m];
            }
            assert!((h[i] - acc).norm() < 1e-14);
        }
        assert!(effective_channel(&g, &CVector::zeros(2), &d).is_err());
    }

    #[test]
    fn ones_phase_composition_equals_direct_formula() {
        let mut r = rng(9);
        let h = random_matrix(4, 3, &mut r);
        let g = random_vector(4, &mut r);
        let d = random_vector(3, &mut r);
        let via = effective_channel(
            &cascade(&h, &g).unwrap(),
            PhaseVector::ones(4).as_vector(),
            &d,
        )
        .unwrap();
        let direct = h.adjoint() * &g + &d;
        assert!((via - direct).norm() < 1e-14);
    }

    #[test]
    fn trace_keeps_bs_ris_fixed_and_round_trips() {
        let cfg = SystemConfig::default();
        let geom = Geometry::default();
        let s = AgingSampler::new(0.05, 6, cfg.loading).unwrap();
        let t = ChannelTrace::generate(&cfg, &geom, &s, &mut rng(21)).unwrap();
        let h_first = generate_static_channel(&cfg, &geom, &mut rng(21)).unwrap();
        assert_eq!(t.bs_ris, h_first);
        assert_eq!(t.n_intervals(), 6);
        assert_eq!(t.stacked(1, 5).unwrap().len(), cfg.coefficient_count());
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = ChannelTrace::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.bs_ris, t.bs_ris);
        assert_eq!(back.users[1].ris_user, t.users[1].ris_user);
        assert_eq!(back.f_n, t.f_n);
        assert!(ChannelTrace::read_from(&b"garbage!xxxx"[..]).is_err());
    }

    #[test]
    fn phase_vector_rejects_non_unit() {
        assert!(PhaseVector::new(CVector::from_element(2, Complex64::new(0.5, 0.0))).is_err());
        let p = PhaseVector::from_phases(&[0.1, 2.0]);
        assert!(p.as_vector().iter().all(|c| (c.norm() - 1.0).abs() < 1e-15));
    }
}
