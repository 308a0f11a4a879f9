//! Shared domain types: system geometry, stream bookkeeping, power allocation
//! and rate reports.
//!
//! Shape conventions, used everywhere in the crate:
//!
//! * the channel `H` is stored `N_t x N_r`, one column per receive antenna,
//!   users' column blocks in order. Receivers see `H^T x` (plain transpose,
//!   no conjugation);
//! * `H_k` is user `k`'s `N_t x N_k` column block, so user `k` receives
//!   `y_k = H_k^T x + n_k`;
//! * private streams are numbered globally `0..M`, user `k` owning the
//!   contiguous range `offset(k)..offset(k) + M_k`.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::{c, CMat, CVec};
use crate::precoding::PrecoderSet;

/// Quality of channel state information at the transmitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CsitError {
    Perfect,
    /// Error entries i.i.d. `CN(0, variance)`.
    FixedVariance(f64),
    /// Error variance `xi * snr^(-alpha)`, `snr = E_tr / noise_var`.
    SnrScaled { xi: f64, alpha: f64 },
}

impl CsitError {
    /// Error variance at the given linear SNR.
    pub fn variance(&self, snr_linear: f64) -> f64 {
        match *self {
            CsitError::Perfect => 0.0,
            CsitError::FixedVariance(v) => v,
            CsitError::SnrScaled { xi, alpha } => xi * snr_linear.powf(-alpha),
        }
    }

    pub fn is_perfect(&self) -> bool {
        matches!(self, CsitError::Perfect)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub n_tx: usize,
    /// Receive antennas per user.
    pub users: Vec<usize>,
    /// Private streams per user.
    pub streams_per_user: Vec<usize>,
    pub total_power: f64,
    pub noise_var: f64,
    pub csit_error: CsitError,
}

impl SystemConfig {
    /// Configuration with one private stream per receive antenna.
    pub fn new(
        n_tx: usize,
        users: Vec<usize>,
        total_power: f64,
        noise_var: f64,
        csit_error: CsitError,
    ) -> Result<Self> {
        let streams_per_user = users.clone();
        Self::with_streams(n_tx, users, streams_per_user, total_power, noise_var, csit_error)
    }

    pub fn with_streams(
        n_tx: usize,
        users: Vec<usize>,
        streams_per_user: Vec<usize>,
        total_power: f64,
        noise_var: f64,
        csit_error: CsitError,
    ) -> Result<Self> {
        let cfg = SystemConfig {
            n_tx,
            users,
            streams_per_user,
            total_power,
            noise_var,
            csit_error,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.users.len();
        if k < 2 {
            return Err(Error::config(format!("need at least 2 users, got {k}")));
        }
        if self.n_tx < k {
            return Err(Error::config(format!(
                "n_tx = {} must be at least the number of users ({k})",
                self.n_tx
            )));
        }
        if self.streams_per_user.len() != k {
            return Err(Error::config(format!(
                "{} stream counts for {k} users",
                self.streams_per_user.len()
            )));
        }
        for (i, (&n, &m)) in self.users.iter().zip(&self.streams_per_user).enumerate() {
            if n == 0 {
                return Err(Error::config(format!("user {i} has no receive antennas")));
            }
            if m == 0 || m > n {
                return Err(Error::config(format!(
                    "user {i}: streams {m} must lie in 1..={n}"
                )));
            }
        }
        let n_rx = self.n_rx();
        if n_rx > self.n_tx {
            return Err(Error::config(format!(
                "total receive antennas {n_rx} exceed n_tx = {}",
                self.n_tx
            )));
        }
        if !(self.total_power > 0.0 && self.total_power.is_finite()) {
            return Err(Error::config("total power must be positive"));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(Error::config("noise variance must be positive"));
        }
        match self.csit_error {
            CsitError::Perfect => {}
            CsitError::FixedVariance(v) => {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::config("error variance must be nonnegative"));
                }
            }
            CsitError::SnrScaled { xi, alpha } => {
                if !(xi > 0.0 && alpha > 0.0) {
                    return Err(Error::config("SNR-scaled error needs xi > 0 and alpha > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_rx(&self) -> usize {
        self.users.iter().sum()
    }

    pub fn snr_linear(&self) -> f64 {
        self.total_power / self.noise_var
    }

    /// Regularisation constant `N_r * noise_var / E_tr` shared by the RBD and
    /// MMSE precoders.
    pub fn regularization(&self) -> f64 {
        self.n_rx() as f64 * self.noise_var / self.total_power
    }

    pub fn error_variance(&self) -> f64 {
        self.csit_error.variance(self.snr_linear())
    }
}

/// Global private-stream numbering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamLayout {
    total_private: usize,
    offsets: Vec<usize>,
    counts: Vec<usize>,
    antenna_offsets: Vec<usize>,
    antennas: Vec<usize>,
}

impl StreamLayout {
    pub fn total_private(&self) -> usize {
        self.total_private
    }

    pub fn num_users(&self) -> usize {
        self.counts.len()
    }

    pub fn offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn streams(&self, k: usize) -> usize {
        self.counts[k]
    }

    /// Stream indices owned by user `k`.
    pub fn members(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k] + self.counts[k]
    }

    pub fn owner(&self, stream: usize) -> usize {
        self.offsets
            .iter()
            .rposition(|&o| o <= stream)
            .expect("offsets start at 0")
    }

    pub fn antennas(&self, k: usize) -> usize {
        self.antennas[k]
    }

    pub fn antenna_range(&self, k: usize) -> Range<usize> {
        self.antenna_offsets[k]..self.antenna_offsets[k] + self.antennas[k]
    }

    pub fn n_rx(&self) -> usize {
        self.antennas.iter().sum()
    }
}

pub fn build_layout(config: &SystemConfig) -> Result<StreamLayout> {
    config.validate()?;
    let prefix = |v: &[usize]| {
        v.iter()
            .scan(0usize, |acc, &m| {
                let start = *acc;
                *acc += m;
                Some(start)
            })
            .collect::<Vec<_>>()
    };
    Ok(StreamLayout {
        total_private: config.streams_per_user.iter().sum(),
        offsets: prefix(&config.streams_per_user),
        counts: config.streams_per_user.clone(),
        antenna_offsets: prefix(&config.users),
        antennas: config.users.clone(),
    })
}

/// Stream amplitudes: `a_c` for the common stream, `a_j` for each private
/// stream in global order.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub a_common: f64,
    pub a_private: Vec<f64>,
}

impl PowerAllocation {
    /// Spends `common_power` on the common stream and the remainder of
    /// `total_power` on the private streams with one shared amplitude, scaled
    /// by the private precoder's Frobenius norm so the budget binds.
    pub fn uniform(common_power: f64, total_power: f64, p_private: &CMat) -> Self {
        let m = p_private.ncols();
        let fro2 = p_private.norm_squared();
        let rest = (total_power - common_power).max(0.0);
        let a = if fro2 > 0.0 { (rest / fro2).sqrt() } else { 0.0 };
        PowerAllocation {
            a_common: common_power.max(0.0).sqrt(),
            a_private: vec![a; m],
        }
    }

    pub fn private_powers(&self) -> Vec<f64> {
        self.a_private.iter().map(|a| a * a).collect()
    }

    pub fn common_power(&self) -> f64 {
        self.a_common * self.a_common
    }
}

/// Rates of one realisation (or conditional averages), in bits/s/Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub common_per_user: Vec<f64>,
    pub common_rate: f64,
    pub private_per_user: Vec<f64>,
    pub sum_private: f64,
    pub sum_rate: f64,
}

impl RateReport {
    pub fn new(common_per_user: Vec<f64>, private_per_user: Vec<f64>) -> Self {
        let common_rate = common_per_user.iter().copied().fold(f64::INFINITY, f64::min);
        let common_rate = if common_rate.is_finite() { common_rate } else { 0.0 };
        let sum_private = private_per_user.iter().sum();
        RateReport {
            common_per_user,
            common_rate,
            private_per_user,
            sum_private,
            sum_rate: common_rate + sum_private,
        }
    }
}

/// `x = a_c s_c p_c + sum_k P_k diag(a_k) s_k`; `symbols[0]` is the common
/// symbol, `symbols[1..]` the private symbols in global order.
pub fn transmit_signal(
    symbols: &CVec,
    precoders: &PrecoderSet,
    alloc: &PowerAllocation,
) -> Result<CVec> {
    let m = precoders.p_private.ncols();
    let n_tx = precoders.p_common.len();
    if symbols.len() != m + 1 {
        return Err(Error::dim(format!(
            "{} symbols for {} streams",
            symbols.len(),
            m + 1
        )));
    }
    if alloc.a_private.len() != m || precoders.p_private.nrows() != n_tx {
        return Err(Error::dim("allocation does not match precoder"));
    }
    let mut x = &precoders.p_common * (symbols[0] * alloc.a_common);
    for (j, a) in alloc.a_private.iter().enumerate() {
        x.axpy(symbols[j + 1] * *a, &precoders.p_private.column(j), c(1.0));
    }
    Ok(x)
}

/// Expected transmit power `a_c^2 ||p_c||^2 + sum_j a_j^2 ||p_j||^2` for
/// unit-variance uncorrelated symbols.
pub fn check_power_budget(precoders: &PrecoderSet, alloc: &PowerAllocation) -> f64 {
    let common = alloc.common_power() * precoders.p_common.norm_squared();
    let private: f64 = alloc
        .a_private
        .iter()
        .zip(precoders.p_private.column_iter())
        .map(|(a, p)| a * a * p.norm_squared())
        .sum();
    common + private
}

/// Relative slack allowed on the transmit power constraint.
pub const POWER_TOLERANCE: f64 = 1e-9;

pub fn within_budget(power: f64, total_power: f64) -> bool {
    power <= total_power * (1.0 + POWER_TOLERANCE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{ONE, ZERO};
    use crate::precoding::PrecoderKind;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cfg(users: Vec<usize>, streams: Vec<usize>) -> Result<SystemConfig> {
        let n_tx = users.iter().sum::<usize>().max(users.len());
        SystemConfig::with_streams(n_tx, users, streams, 10.0, 1.0, CsitError::Perfect)
    }

    fn bare_precoders(p_common: CVec, p_private: CMat) -> PrecoderSet {
        PrecoderSet {
            kind: PrecoderKind::Mmse,
            p_common,
            p_private,
            rx_filters: vec![],
            rbd: None,
        }
    }

    fn cn(rng: &mut ChaCha8Rng) -> Complex64 {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }

    #[test]
    fn layout_two_users() {
        let l = build_layout(&cfg(vec![2, 2], vec![2, 2]).unwrap()).unwrap();
        assert_eq!(l.total_private(), 4);
        assert_eq!(l.offsets(), &[0, 2]);
        assert_eq!(l.members(0), 0..2);
        assert_eq!(l.members(1), 2..4);
    }

    #[test]
    fn layout_six_users_two_streams() {
        let l = build_layout(&cfg(vec![2; 6], vec![2; 6]).unwrap()).unwrap();
        assert_eq!(l.total_private(), 12);
        assert_eq!(l.offsets(), &[0, 2, 4, 6, 8, 10]);
    }

    #[test]
    fn layout_uneven_streams() {
        let l = build_layout(&cfg(vec![1, 2, 1], vec![1, 2, 1]).unwrap()).unwrap();
        assert_eq!(l.total_private(), 4);
        // Second user owns global streams 2 and 3 (1-based), i.e. 1..3 here.
        assert_eq!(l.members(1), 1..3);
        assert_eq!(l.owner(0), 0);
        assert_eq!(l.owner(2), 1);
        assert_eq!(l.owner(3), 2);
    }

    #[test]
    fn config_rejects_bad_geometry() {
        assert!(cfg(vec![2, 2], vec![3, 2]).is_err());
        assert!(SystemConfig::new(3, vec![2, 2], 1.0, 1.0, CsitError::Perfect).is_err());
        assert!(SystemConfig::new(4, vec![2], 1.0, 1.0, CsitError::Perfect).is_err());
        assert!(SystemConfig::new(4, vec![2, 2], 0.0, 1.0, CsitError::Perfect).is_err());
        assert!(SystemConfig::new(
            4,
            vec![2, 2],
            1.0,
            1.0,
            CsitError::SnrScaled { xi: 0.94, alpha: 0.0 }
        )
        .is_err());
    }

    #[test]
    fn snr_scaled_variance() {
        let e = CsitError::SnrScaled { xi: 0.94, alpha: 0.6 };
        assert!((e.variance(10.0) - 0.94 * 10f64.powf(-0.6)).abs() < 1e-15);
        assert!((e.variance(10.0) - 0.236_12).abs() < 1e-4);
    }

    #[test]
    fn transmit_zero_allocation_is_silent() {
        let p = bare_precoders(CVec::from_element(4, ONE), CMat::from_element(4, 3, ONE));
        let alloc = PowerAllocation { a_common: 0.0, a_private: vec![0.0; 3] };
        let x = transmit_signal(&CVec::from_element(4, ONE), &p, &alloc).unwrap();
        assert!(x.iter().all(|z| *z == ZERO));
    }

    #[test]
    fn transmit_common_only() {
        let mut e1 = CVec::zeros(4);
        e1[0] = ONE;
        let p = bare_precoders(e1.clone(), CMat::from_element(4, 2, ONE));
        let alloc = PowerAllocation { a_common: 1.0, a_private: vec![0.0; 2] };
        let mut s = CVec::from_element(3, c(5.0));
        s[0] = ONE;
        assert_eq!(transmit_signal(&s, &p, &alloc).unwrap(), e1);
    }

    #[test]
    fn transmit_matches_elementwise_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (n_tx, m) = (4, 4);
        let pc = CVec::from_fn(n_tx, |_, _| cn(&mut rng));
        let pp = CMat::from_fn(n_tx, m, |_, _| cn(&mut rng));
        let s = CVec::from_fn(m + 1, |_, _| cn(&mut rng));
        let alloc = PowerAllocation {
            a_common: 0.7,
            a_private: vec![0.3, 1.1, 0.5, 0.9],
        };
        let p = bare_precoders(pc.clone(), pp.clone());
        let x = transmit_signal(&s, &p, &alloc).unwrap();
        for t in 0..n_tx {
            let mut acc = s[0] * pc[t] * 0.7;
            for j in 0..m {
                acc += pp[(t, j)] * s[j + 1] * alloc.a_private[j];
            }
            assert!((x[t] - acc).norm() < 1e-14);
        }
    }

    #[test]
    fn transmit_rejects_wrong_symbol_count() {
        let p = bare_precoders(CVec::from_element(4, ONE), CMat::from_element(4, 3, ONE));
        let alloc = PowerAllocation { a_common: 1.0, a_private: vec![1.0; 3] };
        assert!(transmit_signal(&CVec::zeros(3), &p, &alloc).is_err());
    }

    #[test]
    fn power_of_orthonormal_columns() {
        let p = bare_precoders(
            CMat::identity(5, 5).column(0).into_owned(),
            CMat::identity(5, 5).columns(1, 4).into_owned(),
        );
        let alloc = PowerAllocation { a_common: 1.0, a_private: vec![1.0; 4] };
        assert_eq!(check_power_budget(&p, &alloc), 5.0);
    }

    #[test]
    fn power_common_boundary() {
        let e_tr: f64 = 7.5;
        let p = bare_precoders(
            CMat::identity(3, 3).column(0).into_owned(),
            CMat::identity(3, 3).columns(1, 2).into_owned(),
        );
        let alloc = PowerAllocation { a_common: e_tr.sqrt(), a_private: vec![0.0; 2] };
        assert!((check_power_budget(&p, &alloc) - e_tr).abs() < 1e-15);
    }

    #[test]
    fn uniform_allocation_binds_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pp = CMat::from_fn(6, 4, |_, _| cn(&mut rng));
        let mut pc = CVec::from_fn(6, |_, _| cn(&mut rng));
        pc.normalize_mut();
        let alloc = PowerAllocation::uniform(2.5, 10.0, &pp);
        let p = bare_precoders(pc, pp);
        let power = check_power_budget(&p, &alloc);
        assert!((power - 10.0).abs() < 1e-12);
        assert!(within_budget(power, 10.0));
    }

    #[test]
    fn power_budget_matches_empirical_mean() {
        // Law-of-large-numbers oracle over 1e5 symbol draws.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let pc = CVec::from_fn(4, |_, _| cn(&mut rng));
        let pp = CMat::from_fn(4, 4, |_, _| cn(&mut rng));
        let alloc = PowerAllocation {
            a_common: 0.8,
            a_private: vec![0.5, 1.0, 0.25, 0.75],
        };
        let p = bare_precoders(pc, pp);
        let analytic = check_power_budget(&p, &alloc);
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let s = CVec::from_fn(5, |_, _| cn(&mut rng));
            acc += transmit_signal(&s, &p, &alloc).unwrap().norm_squared();
        }
        let empirical = acc / draws as f64;
        assert!(
            ((empirical - analytic) / analytic).abs() < 0.01,
            "{empirical} vs {analytic}"
        );
    }

    #[test]
    fn rate_report_consistency() {
        let r = RateReport::new(vec![1.0, 0.5], vec![2.0, 1.0]);
        assert_eq!(r.common_rate, 0.5);
        assert_eq!(r.sum_rate, 3.5);
        assert_eq!(r.sum_rate - (r.common_rate + r.sum_private), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn transmit_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = bare_precoders(
                    CVec::from_fn(4, |_, _| cn(&mut rng)),
                    CMat::from_fn(4, 3, |_, _| cn(&mut rng)),
                );
                let alloc = PowerAllocation { a_common: 0.9, a_private: vec![0.4, 1.3, 0.7] };
                let s1 = CVec::from_fn(4, |_, _| cn(&mut rng));
                let s2 = CVec::from_fn(4, |_, _| cn(&mut rng));
                let combo = &s1 * c(alpha) + &s2 * c(beta);
                let lhs = transmit_signal(&combo, &p, &alloc).unwrap();
                let rhs = transmit_signal(&s1, &p, &alloc).unwrap() * c(alpha)
                    + transmit_signal(&s2, &p, &alloc).unwrap() * c(beta);
                prop_assert!((lhs - &rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
            }

            #[test]
            fn layout_partitions_streams(counts in proptest::collection::vec(1usize..4, 2..6)) {
                let users = counts.clone();
                let c = cfg(users, counts.clone()).unwrap();
                let l = build_layout(&c).unwrap();
                let mut seen = vec![0usize; l.total_private()];
                for k in 0..l.num_users() {
                    prop_assert_eq!(l.members(k).len(), counts[k]);
                    for j in l.members(k) {
                        seen[j] += 1;
                        prop_assert_eq!(l.owner(j), k);
                    }
                }
                prop_assert!(seen.iter().all(|&n| n == 1));
                prop_assert!(l.offsets().windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }
}
