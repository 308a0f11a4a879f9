//! Instantaneous and ergodic rates.
//!
//! Rates are always evaluated on the true channel `H = Ĥ + H̃`; precoders
//! and the common-power split only ever see the estimate `Ĥ`.

use std::ops::Range;

use rayon::prelude::*;

use crate::channel::{compose_channel, sample_channel, sample_error, ChannelSet, RngSeed, Side};
use crate::combining::{self, CombinerKind, ReceiveGeometry};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec};
use crate::model::{
    build_layout, check_power_budget, PowerAllocation, RateReport, StreamLayout, SystemConfig,
};
use crate::precoding::{build_precoders, power_search_links, CommonPowerGrid, PrecoderKind, PrecoderSet};

/// `log2(1 + sinr)`.
pub fn common_rate(sinr: f64) -> Result<f64> {
    if sinr < 0.0 || sinr.is_nan() {
        return Err(Error::InvalidArgument(format!("negative SINR {sinr}")));
    }
    Ok(sinr.ln_1p() / std::f64::consts::LN_2)
}

/// Private rate of one user after the common stream has been cancelled:
/// `log2 det(I + S R_zz^{-1})` with `S` the user's own stream covariance and
/// `R_zz` the other users' streams plus noise, both after the receive filter.
///
/// `filtered` holds `F_k p_j = G_k H_k^T p_j` for every private stream `j`.
pub fn private_rate_filtered(
    filtered: &CMat,
    own: Range<usize>,
    alloc: &PowerAllocation,
    noise_var: f64,
) -> Result<f64> {
    let powers = alloc.private_powers();
    let mut own_w = vec![0.0; powers.len()];
    let mut other_w = powers.clone();
    for j in own {
        own_w[j] = powers[j];
        other_w[j] = 0.0;
    }
    let r_zz = linalg::weighted_gram(filtered, &other_w, noise_var);
    let signal = linalg::weighted_gram(filtered, &own_w, 0.0);
    let total = &r_zz + signal;
    let rate = linalg::log2_det_hpd(&total)? - linalg::log2_det_hpd(&r_zz)?;
    Ok(rate.max(0.0))
}

pub fn private_rate(
    k: usize,
    channels: &ChannelSet,
    precoders: &PrecoderSet,
    layout: &StreamLayout,
    alloc: &PowerAllocation,
    noise_var: f64,
) -> Result<f64> {
    let f = &precoders.rx_filters[k] * channels.user_rows(Side::True, k);
    private_rate_filtered(&(f * &precoders.p_private), layout.members(k), alloc, noise_var)
}

pub fn sum_rate(common_per_user: Vec<f64>, private_per_user: Vec<f64>) -> RateReport {
    RateReport::new(common_per_user, private_per_user)
}

/// Per-user products of one (true channel, precoder) pair that do not depend
/// on the power split.
#[derive(Debug, Clone)]
struct UserLink {
    r_common: CVec,
    r_streams: CMat,
    filtered: CMat,
    own: Range<usize>,
}

/// A true-channel realisation with the precoders applied, ready to be
/// evaluated under many power allocations.
#[derive(Debug, Clone)]
pub struct LinkState {
    users: Vec<UserLink>,
}

impl LinkState {
    pub fn new(channels: &ChannelSet, precoders: &PrecoderSet, layout: &StreamLayout) -> Self {
        let users = (0..layout.num_users())
            .map(|k| {
                let hk_t = channels.user_rows(Side::True, k);
                let r_streams = &hk_t * &precoders.p_private;
                UserLink {
                    r_common: &hk_t * &precoders.p_common,
                    filtered: &precoders.rx_filters[k] * &r_streams,
                    r_streams,
                    own: layout.members(k),
                }
            })
            .collect();
        LinkState { users }
    }

    pub fn geometry(&self, k: usize, alloc: &PowerAllocation, noise_var: f64) -> ReceiveGeometry {
        let u = &self.users[k];
        ReceiveGeometry::new(
            u.r_common.clone(),
            u.r_streams.clone(),
            u.own.clone(),
            alloc,
            noise_var,
        )
    }

    pub fn evaluate(
        &self,
        alloc: &PowerAllocation,
        combiner: CombinerKind,
        noise_var: f64,
    ) -> Result<RateReport> {
        let mut common = Vec::with_capacity(self.users.len());
        let mut private = Vec::with_capacity(self.users.len());
        for (k, u) in self.users.iter().enumerate() {
            let geometry = self.geometry(k, alloc, noise_var);
            let (_, gamma) = combining::combine(combiner, &geometry, alloc)?;
            common.push(common_rate(gamma)?);
            private.push(private_rate_filtered(&u.filtered, u.own.clone(), alloc, noise_var)?);
        }
        Ok(sum_rate(common, private))
    }
}

/// Rates averaged over CSIT errors for one channel estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalRates {
    pub common_per_user: Vec<f64>,
    pub private_per_user: Vec<f64>,
    pub sum_private: f64,
}

impl ConditionalRates {
    pub fn average(reports: &[RateReport]) -> Self {
        let n = reports.len() as f64;
        let k = reports.first().map_or(0, |r| r.common_per_user.len());
        let mut common = vec![0.0; k];
        let mut private = vec![0.0; k];
        for r in reports {
            for u in 0..k {
                common[u] += r.common_per_user[u];
                private[u] += r.private_per_user[u];
            }
        }
        common.iter_mut().for_each(|x| *x /= n);
        private.iter_mut().for_each(|x| *x /= n);
        let sum_private = private.iter().sum();
        ConditionalRates {
            common_per_user: common,
            private_per_user: private,
            sum_private,
        }
    }

    pub fn min_common(&self) -> f64 {
        self.common_per_user.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `min_k R̄_{c,k} + R̄_p`.
    pub fn sum_rate(&self) -> f64 {
        self.min_common() + self.sum_private
    }
}

/// How per-user common rates are combined across channel draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CommonAggregation {
    /// Mean over draws of `min_k R̄_{c,k}`.
    #[default]
    MeanOfMin,
    /// `min_k` of the per-user means over draws.
    MinOfMeans,
}

impl CommonAggregation {
    pub fn name(&self) -> &'static str {
        match self {
            CommonAggregation::MeanOfMin => "mean-of-min",
            CommonAggregation::MinOfMeans => "min-of-means",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "mean-of-min" => Some(CommonAggregation::MeanOfMin),
            "min-of-means" => Some(CommonAggregation::MinOfMeans),
            _ => None,
        }
    }
}

/// Everything needed to estimate the ergodic sum rate at one operating point.
#[derive(Debug, Clone)]
pub struct EsrSetup {
    /// Operating point: `total_power`, `noise_var` and the CSIT error model.
    pub config: SystemConfig,
    pub precoder: PrecoderKind,
    pub combiner: CombinerKind,
    pub grid: CommonPowerGrid,
    pub n_channels: usize,
    pub n_errors: usize,
    pub seed: u64,
    pub aggregation: CommonAggregation,
}

/// Result of one outer (channel-estimate) draw.
#[derive(Debug, Clone)]
pub struct ChannelOutcome {
    pub alloc: PowerAllocation,
    pub rates: ConditionalRates,
    /// Expected transmit power of `alloc` with this draw's precoders.
    pub transmit_power: f64,
}

#[derive(Debug, Clone)]
pub struct EsrEstimate {
    pub esr: f64,
    pub common: f64,
    pub private: f64,
    /// Standard error of the mean of the per-draw conditional sum rates.
    pub std_error: f64,
    pub outcomes: Vec<ChannelOutcome>,
}

impl EsrSetup {
    pub fn effective_errors(&self) -> usize {
        if self.config.csit_error.is_perfect() || self.config.error_variance() == 0.0 {
            1
        } else {
            self.n_errors
        }
    }

    /// Outer draw `channel`: precoders from `Ĥ`, common power searched on the
    /// conditional sum rate over this draw's error matrices, which are then
    /// held fixed for the reported rates.
    pub fn channel_outcome(&self, channel: usize) -> Result<ChannelOutcome> {
        let cfg = &self.config;
        let layout = build_layout(cfg)?;
        let h_est = sample_channel(cfg, RngSeed::estimate(self.seed, channel as u64));
        let base = compose_channel(h_est, CMat::zeros(cfg.n_tx, cfg.n_rx()), &layout)?;
        let precoders = build_precoders(self.precoder, &base, cfg, &layout)?;
        let snr = cfg.snr_linear();
        let links = (0..self.effective_errors())
            .map(|e| {
                let err = sample_error(cfg, snr, RngSeed::error(self.seed, channel as u64, e as u64));
                Ok(LinkState::new(&base.with_error(err)?, &precoders, &layout))
            })
            .collect::<Result<Vec<_>>>()?;
        let found = power_search_links(&precoders, &links, cfg, self.combiner, &self.grid)?;
        Ok(ChannelOutcome {
            transmit_power: check_power_budget(&precoders, &found.alloc),
            alloc: found.alloc,
            rates: found.rates,
        })
    }
}

/// Monte Carlo estimate of the ergodic sum rate.
///
/// Outer draws run in parallel on the current rayon pool; each has its own
/// RNG streams and the reduction runs in draw order, so the result does not
/// depend on the number of workers.
pub fn ergodic_sum_rate(setup: &EsrSetup) -> Result<EsrEstimate> {
    if setup.n_channels == 0 || setup.n_errors == 0 {
        return Err(Error::InvalidArgument(
            "channel and error counts must be at least 1".into(),
        ));
    }
    setup.config.validate()?;
    let outcomes = (0..setup.n_channels)
        .into_par_iter()
        .map(|c| setup.channel_outcome(c))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(outcomes, setup.aggregation))
}

pub fn aggregate(outcomes: Vec<ChannelOutcome>, aggregation: CommonAggregation) -> EsrEstimate {
    let n = outcomes.len() as f64;
    let sums: Vec<f64> = outcomes.iter().map(|o| o.rates.sum_rate()).collect();
    let private = outcomes.iter().map(|o| o.rates.sum_private).sum::<f64>() / n;
    let common = match aggregation {
        CommonAggregation::MeanOfMin => {
            outcomes.iter().map(|o| o.rates.min_common()).sum::<f64>() / n
        }
        CommonAggregation::MinOfMeans => {
            let k = outcomes[0].rates.common_per_user.len();
            (0..k)
                .map(|u| outcomes.iter().map(|o| o.rates.common_per_user[u]).sum::<f64>() / n)
                .fold(f64::INFINITY, f64::min)
        }
    };
    let mean = sums.iter().sum::<f64>() / n;
    let std_error = if outcomes.len() > 1 {
        let var = sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    EsrEstimate {
        esr: common + private,
        common,
        private,
        std_error,
        outcomes,
    }
}
