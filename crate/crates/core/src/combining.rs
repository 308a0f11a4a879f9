//! Common-stream combining at a multi-antenna receiver.
//!
//! A user combines its `N_k` antenna outputs with `w_k` before decoding the
//! common stream: `ỹ_k = w_k^H y_k`. The SINR of the combined signal treats
//! every private stream (the user's own included) as interference, because
//! the common stream is decoded first.

use std::ops::Range;

use log::warn;

use crate::channel::{ChannelSet, Side};
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, CVec, ZERO};
use crate::model::{PowerAllocation, StreamLayout};
use crate::precoding::PrecoderSet;

/// Condition number beyond which the MMSE combiner refuses to solve.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CombinerKind {
    /// Antenna 1 only: rate-splitting without a combiner.
    None,
    /// Per-user selection of the antenna with the best common SINR.
    MinMax,
    /// Maximum ratio combining on the common stream's effective channel.
    Mrc,
    /// MMSE combiner, `w = R_yy^{-1} r_c`.
    Mmsec,
}

impl CombinerKind {
    pub const ALL: [CombinerKind; 4] = [
        CombinerKind::None,
        CombinerKind::MinMax,
        CombinerKind::Mrc,
        CombinerKind::Mmsec,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CombinerKind::None => "none",
            CombinerKind::MinMax => "minmax",
            CombinerKind::Mrc => "mrc",
            CombinerKind::Mmsec => "mmsec",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
    }
}

/// Combining weights chosen for every user.
#[derive(Debug, Clone)]
pub struct CombinerChoice {
    pub kind: CombinerKind,
    pub weights: Vec<CVec>,
}

/// What user `k` sees of every stream, plus its received covariance under a
/// given allocation.
#[derive(Debug, Clone)]
pub struct ReceiveGeometry {
    /// `r_{k,c} = H_k^T p_c`.
    pub r_common: CVec,
    /// Column `j` is `r_{k,j} = H_k^T p_j`.
    pub r_streams: CMat,
    /// `R_{y_k y_k}`.
    pub r_cov: CMat,
    pub own_streams: Range<usize>,
    pub noise_var: f64,
}

impl ReceiveGeometry {
    pub fn new(
        r_common: CVec,
        r_streams: CMat,
        own_streams: Range<usize>,
        alloc: &PowerAllocation,
        noise_var: f64,
    ) -> Self {
        let mut r_cov = linalg::weighted_gram(&r_streams, &alloc.private_powers(), noise_var);
        let ac2 = alloc.common_power();
        if ac2 != 0.0 {
            r_cov += &r_common * r_common.adjoint() * c(ac2);
        }
        ReceiveGeometry {
            r_common,
            r_streams,
            r_cov,
            own_streams,
            noise_var,
        }
    }

    /// Geometry of user `k` over the true channel.
    pub fn for_user(
        channels: &ChannelSet,
        precoders: &PrecoderSet,
        layout: &StreamLayout,
        k: usize,
        alloc: &PowerAllocation,
        noise_var: f64,
    ) -> Self {
        let hk_t = channels.user_rows(Side::True, k);
        ReceiveGeometry::new(
            &hk_t * &precoders.p_common,
            &hk_t * &precoders.p_private,
            layout.members(k),
            alloc,
            noise_var,
        )
    }

    pub fn antennas(&self) -> usize {
        self.r_common.len()
    }
}

/// Combined common-stream SINR
/// `a_c^2 |w^H r_c|^2 / (sum_j a_j^2 |w^H r_j|^2 + ||w||^2 noise_var)`, with the
/// user's own streams and the other users' streams summed separately.
pub fn sinr_general(w: &CVec, geometry: &ReceiveGeometry, alloc: &PowerAllocation) -> Result<f64> {
    let w_norm2 = w.norm_squared();
    if w_norm2 == 0.0 {
        return Err(Error::InvalidArgument("zero combining vector".into()));
    }
    if w.len() != geometry.antennas() {
        return Err(Error::dim(format!(
            "combiner length {} for {} antennas",
            w.len(),
            geometry.antennas()
        )));
    }
    let signal = alloc.common_power() * w.dotc(&geometry.r_common).norm_sqr();
    let projections = geometry.r_streams.adjoint() * w;
    let mut own = 0.0;
    let mut others = 0.0;
    for (j, (p, a)) in projections.iter().zip(&alloc.a_private).enumerate() {
        // projections[j] = r_j^H w = conj(w^H r_j); same magnitude.
        let term = a * a * p.norm_sqr();
        if geometry.own_streams.contains(&j) {
            own += term;
        } else {
            others += term;
        }
    }
    Ok(signal / (own + others + w_norm2 * geometry.noise_var))
}

fn basis(n: usize, i: usize) -> CVec {
    let mut e = CVec::zeros(n);
    e[i] = c(1.0);
    e
}

/// Selects the antenna with the highest common rate; ties go to the lowest
/// index. Returns `(antenna, w, rate)`.
pub fn minmax_combiner(
    geometry: &ReceiveGeometry,
    alloc: &PowerAllocation,
) -> Result<(usize, CVec, f64)> {
    let n = geometry.antennas();
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..n {
        let gamma = sinr_general(&basis(n, i), geometry, alloc)?;
        if gamma > best.1 {
            best = (i, gamma);
        }
    }
    let rate = crate::rates::common_rate(best.1)?;
    Ok((best.0, basis(n, best.0), rate))
}

/// `w = r_c / ||r_c||^2`. A vanishing common channel falls back to antenna 1.
pub fn mrc_combiner(geometry: &ReceiveGeometry) -> CVec {
    let n2 = geometry.r_common.norm_squared();
    if n2 == 0.0 {
        warn!("common effective channel is zero; MRC falls back to antenna 1");
        return basis(geometry.antennas(), 0);
    }
    &geometry.r_common / c(n2)
}

/// Solves `R_yy w = r_c`.
pub fn mmsec_combiner(geometry: &ReceiveGeometry) -> Result<CVec> {
    let bound = linalg::condition_bound(&geometry.r_cov, geometry.noise_var);
    if bound > MAX_CONDITION {
        let eig = geometry.r_cov.clone().symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min <= 0.0 || max / min > MAX_CONDITION {
            return Err(Error::numerical(format!(
                "received covariance too ill-conditioned for the MMSE combiner ({:.3e})",
                max / min
            )));
        }
    }
    linalg::hpd_solve(&geometry.r_cov, &geometry.r_common)
}

/// Combining vector and resulting SINR for one user.
pub fn combine(
    kind: CombinerKind,
    geometry: &ReceiveGeometry,
    alloc: &PowerAllocation,
) -> Result<(CVec, f64)> {
    let w = match kind {
        CombinerKind::None => basis(geometry.antennas(), 0),
        CombinerKind::MinMax => minmax_combiner(geometry, alloc)?.1,
        CombinerKind::Mrc => mrc_combiner(geometry),
        CombinerKind::Mmsec => {
            let w = mmsec_combiner(geometry)?;
            if w.iter().all(|z| *z == ZERO) {
                basis(geometry.antennas(), 0)
            } else {
                w
            }
        }
    };
    let gamma = sinr_general(&w, geometry, alloc)?;
    Ok((w, gamma))
}

/// Mean-square error `E|s_c - w^H y|^2` of a linear common-stream estimate.
pub fn common_mse(w: &CVec, geometry: &ReceiveGeometry, a_common: f64) -> f64 {
    let cross = w.dotc(&geometry.r_common) * a_common;
    1.0 - 2.0 * cross.re + linalg::quad_form(&geometry.r_cov, w)
}
