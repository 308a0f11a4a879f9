//! Channel estimates, CSIT errors and their composition.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`): the 64-bit seed keys the
//! generator and `stream_id` selects one of its 2^64 independent streams, so
//! any realisation can be regenerated on its own, on any platform, in any
//! order.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::model::{StreamLayout, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngSeed {
    pub seed: u64,
    pub stream_id: u64,
}

/// Purpose tags packed into the low bits of a stream id.
const SLOT_BITS: u32 = 24;
const SLOT_ESTIMATE: u64 = 0;
const SLOT_ERROR_BASE: u64 = 1;

impl RngSeed {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngSeed { seed, stream_id }
    }

    /// Stream for the channel estimate of outer draw `channel`.
    pub fn estimate(seed: u64, channel: u64) -> Self {
        RngSeed::new(seed, (channel << SLOT_BITS) | SLOT_ESTIMATE)
    }

    /// Stream for error matrix `error` of outer draw `channel`.
    pub fn error(seed: u64, channel: u64, error: u64) -> Self {
        debug_assert!(error + SLOT_ERROR_BASE < 1 << SLOT_BITS);
        RngSeed::new(seed, (channel << SLOT_BITS) | (SLOT_ERROR_BASE + error))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// `rows x cols` matrix of i.i.d. `CN(0, variance)` entries, filled column by
/// column (real part first).
pub fn sample_cn(rows: usize, cols: usize, variance: f64, rng: &mut impl Rng) -> CMat {
    let scale = (variance / 2.0).sqrt();
    let mut m = CMat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            m[(i, j)] = Complex64::new(re * scale, im * scale);
        }
    }
    m
}

/// Channel estimate `Ĥ` (`N_t x N_r`) with i.i.d. `CN(0, 1)` entries.
pub fn sample_channel(config: &SystemConfig, seed: RngSeed) -> CMat {
    sample_cn(config.n_tx, config.n_rx(), 1.0, &mut seed.rng())
}

/// CSIT error `H̃` for the configured error model at `snr_linear`.
///
/// For a given seed the draw is the same standard-normal matrix scaled by the
/// error standard deviation, so sweeps over variance reuse one error shape.
pub fn sample_error(config: &SystemConfig, snr_linear: f64, seed: RngSeed) -> CMat {
    let variance = config.csit_error.variance(snr_linear);
    if config.csit_error.is_perfect() || variance == 0.0 {
        return CMat::zeros(config.n_tx, config.n_rx());
    }
    sample_cn(config.n_tx, config.n_rx(), variance, &mut seed.rng())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    True,
    Estimate,
    Error,
}

#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub h_true: CMat,
    pub h_est: CMat,
    pub h_err: CMat,
    antenna_offsets: Vec<usize>,
    antennas: Vec<usize>,
}

pub fn compose_channel(h_est: CMat, h_err: CMat, layout: &StreamLayout) -> Result<ChannelSet> {
    if h_est.shape() != h_err.shape() {
        return Err(Error::dim(format!(
            "estimate {:?} vs error {:?}",
            h_est.shape(),
            h_err.shape()
        )));
    }
    if h_est.ncols() != layout.n_rx() {
        return Err(Error::dim(format!(
            "channel has {} receive columns, layout expects {}",
            h_est.ncols(),
            layout.n_rx()
        )));
    }
    let h_true = &h_est + &h_err;
    let k = layout.num_users();
    Ok(ChannelSet {
        h_true,
        h_est,
        h_err,
        antenna_offsets: (0..k).map(|u| layout.antenna_range(u).start).collect(),
        antennas: (0..k).map(|u| layout.antennas(u)).collect(),
    })
}

impl ChannelSet {
    pub fn num_users(&self) -> usize {
        self.antennas.len()
    }

    pub fn n_tx(&self) -> usize {
        self.h_true.nrows()
    }

    pub fn matrix(&self, side: Side) -> &CMat {
        match side {
            Side::True => &self.h_true,
            Side::Estimate => &self.h_est,
            Side::Error => &self.h_err,
        }
    }

    /// `H_k`, `N_t x N_k`.
    pub fn user_block(&self, side: Side, k: usize) -> CMat {
        self.matrix(side)
            .columns(self.antenna_offsets[k], self.antennas[k])
            .into_owned()
    }

    /// `H_k^T`, `N_k x N_t`: what user `k` sees.
    pub fn user_rows(&self, side: Side, k: usize) -> CMat {
        self.user_block(side, k).transpose()
    }

    /// `H̄_k`: the channel with user `k`'s block removed, other users in order.
    pub fn deflated(&self, side: Side, k: usize) -> CMat {
        let m = self.matrix(side);
        let start = self.antenna_offsets[k];
        let end = start + self.antennas[k];
        let keep: Vec<usize> = (0..m.ncols()).filter(|j| *j < start || *j >= end).collect();
        m.select_columns(keep.iter())
    }

    /// The same estimate with a different error matrix.
    pub fn with_error(&self, h_err: CMat) -> Result<ChannelSet> {
        if h_err.shape() != self.h_est.shape() {
            return Err(Error::dim("error matrix shape"));
        }
        Ok(ChannelSet {
            h_true: &self.h_est + &h_err,
            h_est: self.h_est.clone(),
            h_err,
            antenna_offsets: self.antenna_offsets.clone(),
            antennas: self.antennas.clone(),
        })
    }
}
