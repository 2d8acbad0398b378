//! Uplink pilot simulation and least-squares recovery of the direct and
//! cascaded channels.
//!
//! Each coherence interval uses `T` reflection slots. Inside every slot the
//! `K` users spread their pilot over `K` sub-slots with mutually orthogonal
//! codes, so the received stack has `T * K * N` entries and every user can be
//! estimated on its own.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::channel::{complex_normal, CMatrix, CVector, ChannelTrace, PhaseVector};
use crate::error::{Error, Result};
use crate::scenario::SystemConfig;

const UNIT_TOL: f64 = 1e-9;

/// Reflection matrix `Phi` of size `T x (M + 1)`. Row `t` is `[1, theta_t^T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionSchedule {
    phi: CMatrix,
}

impl ReflectionSchedule {
    /// Accepts any unit-modulus matrix whose first column is all ones.
    pub fn from_matrix(phi: CMatrix) -> Result<Self> {
        if phi.ncols() < 2 || phi.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "reflection matrix is {}x{}",
                phi.nrows(),
                phi.ncols()
            )));
        }
        for t in 0..phi.nrows() {
            if (phi[(t, 0)] - Complex64::new(1.0, 0.0)).norm() > UNIT_TOL {
                return Err(Error::Domain(format!("row {t} does not start with 1")));
            }
            if let Some(c) = phi
                .row(t)
                .iter()
                .find(|c| (c.norm() - 1.0).abs() > UNIT_TOL)
            {
                return Err(Error::Domain(format!(
                    "reflection entry with modulus {}",
                    c.norm()
                )));
            }
        }
        Ok(Self { phi })
    }

    pub fn slots(&self) -> usize {
        self.phi.nrows()
    }

    pub fn groups(&self) -> usize {
        self.phi.ncols() - 1
    }

    pub fn phi(&self) -> &CMatrix {
        &self.phi
    }

    /// Phase vector applied during slot `t`.
    pub fn slot_phases(&self, t: usize) -> PhaseVector {
        let row = self.phi.row(t);
        PhaseVector::new(CVector::from_iterator(
            self.groups(),
            row.iter().skip(1).copied(),
        ))
        .expect("entries validated at construction")
    }

    /// `Psi = Phi kron I_N`.
    pub fn psi(&self, n: usize) -> CMatrix {
        self.phi.kronecker(&CMatrix::identity(n, n))
    }
}

/// `Phi[t, m] = exp(-j 2 pi t m / T)` for `t < T`, `m <= M`.
pub fn dft_reflection(m: usize, t: usize) -> Result<ReflectionSchedule> {
    if m == 0 {
        return Err(Error::Domain(
            "at least one reflection group is required".into(),
        ));
    }
    if t < m + 1 {
        return Err(Error::Identifiability {
            slots: t,
            unknowns: m + 1,
        });
    }
    let phi = CMatrix::from_fn(t, m + 1, |r, c| dft_entry(r * c, t));
    Ok(ReflectionSchedule { phi })
}

fn dft_entry(rc: usize, t: usize) -> Complex64 {
    // reduce the index first so large products stay exact
    let k = (rc % t) as f64;
    Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * k / t as f64)
}

/// Per-user pilot codes over the sub-slots of one reflection slot.
/// Row `k` holds `x_k[s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotCodes {
    codes: CMatrix,
}

impl PilotCodes {
    /// Rows of the `K`-point DFT.
    pub fn dft(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("at least one user is required".into()));
        }
        Ok(Self {
            codes: CMatrix::from_fn(k, k, |r, c| dft_entry(r * c, k)),
        })
    }

    /// Accepts unit-modulus codes with pairwise-orthogonal rows.
    pub fn from_matrix(codes: CMatrix) -> Result<Self> {
        if codes.iter().any(|c| (c.norm() - 1.0).abs() > UNIT_TOL) {
            return Err(Error::Domain("pilot symbols must have unit modulus".into()));
        }
        let gram = &codes * codes.adjoint();
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                if i != j && gram[(i, j)].norm() > 1e-9 * codes.ncols() as f64 {
                    return Err(Error::Domain(format!(
                        "pilot codes {i} and {j} are not orthogonal"
                    )));
                }
            }
        }
        Ok(Self { codes })
    }

    pub fn n_users(&self) -> usize {
        self.codes.nrows()
    }

    pub fn sub_slots(&self) -> usize {
        self.codes.ncols()
    }

    pub fn symbol(&self, k: usize, s: usize) -> Complex64 {
        self.codes[(k, s)]
    }
}

/// Received pilot stack of one interval, ordered slot, sub-slot, antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBlock {
    pub received: CVector,
    pub noise_variance: f64,
}

/// Superimposes every user's pilots through its channel at interval `l`
/// and adds CN(0, sigma^2) noise per antenna sample.
pub fn simulate_uplink_pilots<R: Rng + ?Sized>(
    trace: &ChannelTrace,
    schedule: &ReflectionSchedule,
    codes: &PilotCodes,
    cfg: &SystemConfig,
    l: usize,
    rng: &mut R,
) -> Result<PilotBlock> {
    simulate_pilots_with(
        trace,
        schedule,
        codes,
        cfg.pilot_power,
        cfg.noise_variance,
        l,
        rng,
    )
}

pub fn simulate_pilots_with<R: Rng + ?Sized>(
    trace: &ChannelTrace,
    schedule: &ReflectionSchedule,
    codes: &PilotCodes,
    pilot_power: f64,
    noise_variance: f64,
    l: usize,
    rng: &mut R,
) -> Result<PilotBlock> {
    if schedule.groups() != trace.n_groups() {
        return Err(Error::Dimension(format!(
            "schedule has {} groups, trace has {}",
            schedule.groups(),
            trace.n_groups()
        )));
    }
    if codes.n_users() < trace.users.len() {
        return Err(Error::Dimension(format!(
            "{} pilot codes for {} users",
            codes.n_users(),
            trace.users.len()
        )));
    }
    let n = trace.n_antennas();
    let (t_slots, s_slots) = (schedule.slots(), codes.sub_slots());
    let amp = pilot_power.sqrt();
    let noise_amp = noise_variance.sqrt();
    // effective channel of every user in every reflection slot
    let mut per_slot = Vec::with_capacity(t_slots);
    for t in 0..t_slots {
        let theta = schedule.slot_phases(t);
        let hs = (0..trace.users.len())
            .map(|k| trace.effective(k, l, &theta))
            .collect::<Result<Vec<_>>>()?;
        per_slot.push(hs);
    }
    let mut y = CVector::zeros(t_slots * s_slots * n);
    for (t, hs) in per_slot.iter().enumerate() {
        for s in 0..s_slots {
            let base = (t * s_slots + s) * n;
            for (k, h) in hs.iter().enumerate() {
                let x = codes.symbol(k, s) * amp;
                for i in 0..n {
                    y[base + i] += h[i] * x;
                }
            }
            for i in 0..n {
                y[base + i] += complex_normal(rng) * noise_amp;
            }
        }
    }
    Ok(PilotBlock {
        received: y,
        noise_variance,
    })
}

/// `Theta_k = sqrt(P_p) X_k (Phi kron I_N)` for the stacked received vector.
pub fn pilot_matrix(
    schedule: &ReflectionSchedule,
    codes: &PilotCodes,
    k: usize,
    n: usize,
    pilot_power: f64,
) -> Result<CMatrix> {
    if k >= codes.n_users() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: codes.n_users(),
        });
    }
    let (t_slots, s_slots, cols) = (schedule.slots(), codes.sub_slots(), schedule.groups() + 1);
    let amp = pilot_power.sqrt();
    let mut theta = CMatrix::zeros(t_slots * s_slots * n, cols * n);
    for t in 0..t_slots {
        for s in 0..s_slots {
            let x = codes.symbol(k, s) * amp;
            for m in 0..cols {
                let v = x * schedule.phi[(t, m)];
                for i in 0..n {
                    theta[((t * s_slots + s) * n + i, m * n + i)] = v;
                }
            }
        }
    }
    Ok(theta)
}

/// Generic least squares `(Theta^H Theta)^-1 Theta^H y`.
pub fn ls_estimate(y: &CVector, theta: &CMatrix) -> Result<CVector> {
    if theta.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "Theta has {} rows, y has {}",
            theta.nrows(),
            y.len()
        )));
    }
    if theta.nrows() < theta.ncols() {
        return Err(Error::RankDeficient {
            condition: f64::INFINITY,
        });
    }
    let gram = theta.adjoint() * theta;
    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| {
        (lo.min(e), hi.max(e))
    });
    let condition = if lo > 0.0 {
        (hi / lo).sqrt()
    } else {
        f64::INFINITY
    };
    if !(condition < 1e12) {
        return Err(Error::RankDeficient { condition });
    }
    let rhs = theta.adjoint() * y;
    let chol = gram.cholesky().ok_or(Error::RankDeficient { condition })?;
    Ok(chol.solve(&rhs))
}

/// Least squares for orthogonal schedules and codes, where
/// `Theta^H Theta = T K P_p I` and the solve reduces to a correlation.
pub fn ls_estimate_orthogonal(
    y: &CVector,
    schedule: &ReflectionSchedule,
    codes: &PilotCodes,
    k: usize,
    n: usize,
    pilot_power: f64,
) -> Result<CVector> {
    let (t_slots, s_slots, cols) = (schedule.slots(), codes.sub_slots(), schedule.groups() + 1);
    if y.len() != t_slots * s_slots * n {
        return Err(Error::Dimension(format!(
            "received stack has {} entries",
            y.len()
        )));
    }
    if k >= codes.n_users() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: codes.n_users(),
        });
    }
    // despread each slot first
    let mut z = vec![CVector::zeros(n); t_slots];
    for (t, zt) in z.iter_mut().enumerate() {
        for s in 0..s_slots {
            let c = codes.symbol(k, s).conj();
            let base = (t * s_slots + s) * n;
            for i in 0..n {
                zt[i] += y[base + i] * c;
            }
        }
    }
    let scale = 1.0 / (t_slots as f64 * s_slots as f64 * pilot_power.sqrt());
    let mut f = CVector::zeros(cols * n);
    for m in 0..cols {
        for (t, zt) in z.iter().enumerate() {
            let p = schedule.phi[(t, m)].conj();
            for i in 0..n {
                f[m * n + i] += zt[i] * p;
            }
        }
    }
    Ok(f.map(|x| x * scale))
}

/// Splits `[d; f_1; ...; f_M]` into `d` and `G = [f_1 ... f_M]`.
pub fn split_estimate(f: &CVector, n: usize) -> Result<(CVector, CMatrix)> {
    if n == 0 || !f.len().is_multiple_of(n) || f.len() < 2 * n {
        return Err(Error::Dimension(format!(
            "estimate of length {} does not split into blocks of {n}",
            f.len()
        )));
    }
    let m = f.len() / n - 1;
    let d = f.rows(0, n).into_owned();
    let g = DMatrix::from_fn(n, m, |i, c| f[(c + 1) * n + i]);
    Ok((d, g))
}

/// Estimator state shared across intervals: schedule, codes and powers.
#[derive(Debug, Clone)]
pub struct PilotEstimator {
    pub schedule: ReflectionSchedule,
    pub codes: PilotCodes,
    pub pilot_power: f64,
    pub noise_variance: f64,
}

impl PilotEstimator {
    pub fn from_config(cfg: &SystemConfig) -> Result<Self> {
        Ok(Self {
            schedule: dft_reflection(cfg.ris_groups, cfg.pilot_slots)?,
            codes: PilotCodes::dft(cfg.n_users)?,
            pilot_power: cfg.pilot_power,
            noise_variance: cfg.noise_variance,
        })
    }

    /// Simulates interval `l` and returns every user's stacked estimate.
    pub fn estimate_interval<R: Rng + ?Sized>(
        &self,
        trace: &ChannelTrace,
        l: usize,
        rng: &mut R,
    ) -> Result<Vec<CVector>> {
        let block = simulate_pilots_with(
            trace,
            &self.schedule,
            &self.codes,
            self.pilot_power,
            self.noise_variance,
            l,
            rng,
        )?;
        let n = trace.n_antennas();
        (0..trace.users.len())
            .map(|k| {
                ls_estimate_orthogonal(
                    &block.received,
                    &self.schedule,
                    &self.codes,
                    k,
                    n,
                    self.pilot_power,
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{stack, AgingSampler};
    use crate::scenario::Geometry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn rel_err(a: &CVector, b: &CVector) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn two_point_dft() {
        let s = dft_reflection(1, 2).unwrap();
        let want = CMatrix::from_row_slice(2, 2, &[c(1.0), c(1.0), c(1.0), c(-1.0)]);
        assert!((s.phi() - want).norm() < 1e-15);
    }

    #[test]
    fn dft_columns_orthogonal() {
        let s = dft_reflection(3, 4).unwrap();
        let gram = s.phi().adjoint() * s.phi();
        let want = CMatrix::identity(4, 4) * c(4.0);
        assert!((gram - want).norm() < 1e-12);
        let s = dft_reflection(15, 16).unwrap();
        assert!(s.phi().column(0).iter().all(|&x| x == c(1.0)));
        assert!(matches!(
            dft_reflection(15, 15),
            Err(Error::Identifiability { .. })
        ));
    }

    #[test]
    fn split_slices_blocks() {
        let f = CVector::from_iterator(6, (1..=6).map(|x| c(x as f64)));
        let (d, g) = split_estimate(&f, 2).unwrap();
        assert_eq!(d, CVector::from_vec(vec![c(1.0), c(2.0)]));
        assert_eq!(
            g,
            CMatrix::from_row_slice(2, 2, &[c(3.0), c(5.0), c(4.0), c(6.0)])
        );
        assert_eq!(stack(&d, &g), f);
        assert!(split_estimate(&f, 4).is_err());
    }

    #[test]
    fn identity_theta_returns_y() {
        let mut r = ChaCha20Rng::seed_from_u64(1);
        let y = CVector::from_fn(5, |_, _| complex_normal(&mut r));
        let f = ls_estimate(&y, &CMatrix::identity(5, 5)).unwrap();
        assert!(rel_err(&f, &y) < 1e-14);
    }

    #[test]
    fn rank_deficient_is_reported() {
        let mut theta = CMatrix::identity(4, 3);
        theta.set_column(2, &theta.column(1).clone_owned());
        let err = ls_estimate(&CVector::zeros(4), &theta).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn fast_path_matches_generic() {
        let schedule = dft_reflection(3, 4).unwrap();
        let codes = PilotCodes::dft(2).unwrap();
        let mut r = ChaCha20Rng::seed_from_u64(3);
        let n = 2;
        let y = CVector::from_fn(4 * 2 * n, |_, _| complex_normal(&mut r));
        for k in 0..2 {
            let theta = pilot_matrix(&schedule, &codes, k, n, 0.7).unwrap();
            let gram = theta.adjoint() * &theta;
            let want = CMatrix::identity(8, 8) * c(4.0 * 2.0 * 0.7);
            assert!((gram - want).norm() < 1e-10);
            let slow = ls_estimate(&y, &theta).unwrap();
            let fast = ls_estimate_orthogonal(&y, &schedule, &codes, k, n, 0.7).unwrap();
            assert!((slow - fast).norm() < 1e-10 * y.norm());
        }
    }

    fn small_trace(seed: u64, users: usize) -> (SystemConfig, ChannelTrace) {
        let cfg = SystemConfig {
            n_bs_antennas: 3,
            ris_elements_total: 9,
            ris_groups: 3,
            pilot_slots: 4,
            n_users: 2,
            ..SystemConfig::default()
        };
        let geom = Geometry {
            d_bs_ris: 51.0,
            d_h: vec![10.0, 30.0][..users].to_vec(),
            d_v: vec![2.0, 3.0][..users].to_vec(),
        };
        let s = AgingSampler::new(0.05, 3, cfg.loading).unwrap();
        let t =
            ChannelTrace::generate(&cfg, &geom, &s, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
        (cfg, t)
    }

    #[test]
    fn noiseless_single_slot() {
        let (cfg, trace) = small_trace(4, 1);
        let phi = CMatrix::from_element(1, 4, c(1.0));
        let schedule = ReflectionSchedule::from_matrix(phi).unwrap();
        let codes = PilotCodes::dft(1).unwrap();
        let mut r = ChaCha20Rng::seed_from_u64(0);
        let block = simulate_pilots_with(&trace, &schedule, &codes, 1.0, 0.0, 1, &mut r).unwrap();
        let want = trace.effective(0, 1, &PhaseVector::ones(3)).unwrap();
        assert!((block.received - want).norm() < 1e-15 * trace.bs_ris.norm());
        let _ = cfg;
    }

    #[test]
    fn pilot_power_scaling() {
        let (_, trace) = small_trace(5, 2);
        let schedule = dft_reflection(3, 4).unwrap();
        let codes = PilotCodes::dft(2).unwrap();
        let mut r = ChaCha20Rng::seed_from_u64(0);
        let a = simulate_pilots_with(&trace, &schedule, &codes, 1.0, 0.0, 0, &mut r).unwrap();
        let b = simulate_pilots_with(&trace, &schedule, &codes, 2.0, 0.0, 0, &mut r).unwrap();
        assert!((a.received * c(2f64.sqrt()) - b.received).norm() < 1e-12 * trace.bs_ris.norm());
    }

    #[test]
    fn noise_power() {
        let (_, trace) = small_trace(6, 2);
        let schedule = dft_reflection(3, 4).unwrap();
        let codes = PilotCodes::dft(2).unwrap();
        let mut r = ChaCha20Rng::seed_from_u64(7);
        let clean = simulate_pilots_with(&trace, &schedule, &codes, 1.0, 0.0, 0, &mut r).unwrap();
        let sigma2 = 1e-6;
        let draws = 10_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let noisy =
                simulate_pilots_with(&trace, &schedule, &codes, 1.0, sigma2, 0, &mut r).unwrap();
            acc += (noisy.received - &clean.received).norm_squared();
        }
        let per = acc / draws as f64;
        let want = sigma2 * clean.received.len() as f64;
        assert!((per / want - 1.0).abs() < 0.03, "{per} vs {want}");
    }

    #[test]
    fn noiseless_recovery_and_decoupling() {
        let (_, both) = small_trace(8, 2);
        let schedule = dft_reflection(3, 4).unwrap();
        let codes = PilotCodes::dft(2).unwrap();
        let mut r = ChaCha20Rng::seed_from_u64(0);
        let y = simulate_pilots_with(&both, &schedule, &codes, 1e-3, 0.0, 2, &mut r)
            .unwrap()
            .received;
        let mut alone = both.clone();
        alone.users.truncate(1);
        let y0 = simulate_pilots_with(&alone, &schedule, &codes, 1e-3, 0.0, 2, &mut r)
            .unwrap()
            .received;
        for k in 0..2 {
            let f = ls_estimate_orthogonal(&y, &schedule, &codes, k, 3, 1e-3).unwrap();
            let truth = both.stacked(k, 2).unwrap();
            assert!(rel_err(&f, &truth) < 1e-10);
            let (_, g) = split_estimate(&f, 3).unwrap();
            assert!((g - both.cascaded(k, 2).unwrap()).norm() < 1e-8 * truth.norm());
        }
        let joint = ls_estimate_orthogonal(&y, &schedule, &codes, 0, 3, 1e-3).unwrap();
        let single = ls_estimate_orthogonal(&y0, &schedule, &codes, 0, 3, 1e-3).unwrap();
        assert!((&joint - &single).norm() <= 1e-14 * single.norm());
    }

    #[test]
    fn codes_must_be_orthogonal() {
        let bad = CMatrix::from_element(2, 2, c(1.0));
        assert!(PilotCodes::from_matrix(bad).is_err());
        assert!(PilotCodes::from_matrix(CMatrix::from_row_slice(
            2,
            2,
            &[c(1.0), c(1.0), c(1.0), c(-1.0)]
        ))
        .is_ok());
    }
}
