//! Transmit precoders and the common-stream power split.
//!
//! All precoders are functions of the channel estimate only. Two private
//! precoders are provided:
//!
//! * regularized block diagonalization (RBD): a first stage
//!   `P^a_k = V̄_k (Ψ̄_k^T Ψ̄_k + c I)^{-1/2}` built from the SVD of the other
//!   users' channels `H̄_k^T = Ū_k Ψ̄_k V̄_k^H`, followed by an SVD of the
//!   effective channel `H_k^T P^a_k = Ü_k Ψ̈_k V̈_k^H` whose leading right and
//!   left singular vectors give `P^b_k` and the receive filter `G_k`;
//! * the transmit MMSE (Wiener) precoder `A^H (A A^H + c I)^{-1}`, `A = Ĥ^T`,
//!   with identity receive filters.
//!
//! Both use `c = N_r noise_var / E_tr`. The common precoder is the dominant
//! right singular vector of `Ĥ^T`.

use crate::channel::{ChannelSet, Side};
use crate::combining::CombinerKind;
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, CVec};
use crate::model::{PowerAllocation, StreamLayout, SystemConfig};
use crate::rates::{ConditionalRates, LinkState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrecoderKind {
    Mmse,
    Rbd,
}

impl PrecoderKind {
    pub fn name(&self) -> &'static str {
        match self {
            PrecoderKind::Mmse => "mmse",
            PrecoderKind::Rbd => "rbd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mmse" => Some(PrecoderKind::Mmse),
            "rbd" => Some(PrecoderKind::Rbd),
            _ => None,
        }
    }
}

/// First RBD stage for one user.
#[derive(Debug, Clone)]
pub struct RbdFirstStage {
    /// `P^a_k`, `N_t x N_t`.
    pub p_a: CMat,
    /// Singular values of `H̄_k^T`, zero-padded to `N_t`.
    pub psi_bar: Vec<f64>,
    /// `V̄_k`, `N_t x N_t`.
    pub v_bar: CMat,
}

/// Second RBD stage for one user.
#[derive(Debug, Clone)]
pub struct RbdSecondStage {
    /// `Ḧ_k^T = H_k^T P^a_k`, `N_k x N_t`.
    pub effective: CMat,
    /// `Ü_k`, `N_k x N_k`.
    pub u_eff: CMat,
    /// Singular values of the effective channel (`N_k` of them).
    pub psi_eff: Vec<f64>,
    /// `P^b_k`: the leading `M_k` right singular vectors, `N_t x M_k`.
    pub p_b: CMat,
    /// `G_k`: the leading `M_k` rows of `Ü_k^H`, `M_k x N_k`.
    pub g: CMat,
}

#[derive(Debug, Clone)]
pub struct RbdUserFactors {
    pub first: RbdFirstStage,
    pub second: RbdSecondStage,
}

impl RbdUserFactors {
    /// `P_k = P^a_k P^b_k`.
    pub fn precoder(&self) -> CMat {
        &self.first.p_a * &self.second.p_b
    }
}

#[derive(Debug, Clone)]
pub struct PrecoderSet {
    pub kind: PrecoderKind,
    /// Unit-norm common precoder `p_c`.
    pub p_common: CVec,
    /// Private precoders, `N_t x M`, user blocks in stream order.
    pub p_private: CMat,
    /// `G_k`, `M_k x N_k` per user.
    pub rx_filters: Vec<CMat>,
    pub rbd: Option<Vec<RbdUserFactors>>,
}

/// First RBD stage for every user, from the estimate.
pub fn rbd_first_stage(
    channels: &ChannelSet,
    config: &SystemConfig,
    layout: &StreamLayout,
) -> Result<Vec<RbdFirstStage>> {
    let reg = config.regularization();
    (0..layout.num_users())
        .map(|k| {
            let others_t = channels.deflated(Side::Estimate, k).transpose();
            let (psi_bar, v_bar) = linalg::svd_full_right(&others_t)?;
            let mut p_a = v_bar.clone();
            for (j, psi) in psi_bar.iter().enumerate() {
                // Diagonal of (Ψ̄^T Ψ̄ + c I); its inverse square root is elementwise.
                let d = psi * psi + reg;
                if !(d > 0.0) {
                    return Err(Error::numerical(
                        "unregularised RBD first stage on a rank-deficient channel",
                    ));
                }
                p_a.column_mut(j).scale_mut(1.0 / d.sqrt());
            }
            Ok(RbdFirstStage { p_a, psi_bar, v_bar })
        })
        .collect()
}

pub fn rbd_second_stage(
    channels: &ChannelSet,
    first: &[RbdFirstStage],
    layout: &StreamLayout,
) -> Result<Vec<RbdSecondStage>> {
    first
        .iter()
        .enumerate()
        .map(|(k, stage)| {
            let effective = channels.user_rows(Side::Estimate, k) * &stage.p_a;
            let svd = linalg::svd_thin(&effective)?;
            let m_k = layout.streams(k);
            Ok(RbdSecondStage {
                p_b: svd.v.columns(0, m_k).into_owned(),
                g: svd.u.columns(0, m_k).adjoint(),
                u_eff: svd.u,
                psi_eff: svd.sigma,
                effective,
            })
        })
        .collect()
}

/// Unscaled transmit Wiener filter `A^H (A A^H + reg I)^{-1}` for `A = h_est^T`,
/// one column per receive antenna.
pub fn mmse_filter(h_est: &CMat, reg: f64) -> Result<CMat> {
    let a = h_est.transpose();
    let n_r = a.nrows();
    let gram = &a * a.adjoint() + CMat::identity(n_r, n_r) * c(reg);
    let chol = linalg::hpd_cholesky(&gram)?;
    Ok(a.adjoint() * chol.inverse())
}

/// MMSE private precoder: the Wiener filter restricted to each user's leading
/// `M_k` antenna columns, scaled by one scalar to `||P||_F^2 = M`.
pub fn mmse_precoder(
    channels: &ChannelSet,
    config: &SystemConfig,
    layout: &StreamLayout,
) -> Result<CMat> {
    let full = mmse_filter(&channels.h_est, config.regularization())?;
    let cols: Vec<usize> = (0..layout.num_users())
        .flat_map(|k| {
            let start = layout.antenna_range(k).start;
            start..start + layout.streams(k)
        })
        .collect();
    let mut p = full.select_columns(cols.iter());
    let fro2 = p.norm_squared();
    if fro2 > 0.0 {
        p *= c((layout.total_private() as f64 / fro2).sqrt());
    }
    Ok(p)
}

/// Dominant right singular vector of `Ĥ^T`, unit norm, largest entry real
/// positive.
pub fn common_precoder(h_est: &CMat) -> Result<CVec> {
    let svd = linalg::svd_thin(&h_est.transpose())?;
    if !(svd.sigma[0] > 0.0) {
        return Err(Error::InvalidArgument(
            "common precoder of an all-zero channel".into(),
        ));
    }
    let mut v = svd.v.column(0).into_owned();
    v.normalize_mut();
    Ok(v)
}

pub fn build_precoders(
    kind: PrecoderKind,
    channels: &ChannelSet,
    config: &SystemConfig,
    layout: &StreamLayout,
) -> Result<PrecoderSet> {
    let p_common = common_precoder(&channels.h_est)?;
    match kind {
        PrecoderKind::Rbd => {
            let first = rbd_first_stage(channels, config, layout)?;
            let second = rbd_second_stage(channels, &first, layout)?;
            let factors: Vec<RbdUserFactors> = first
                .into_iter()
                .zip(second)
                .map(|(first, second)| RbdUserFactors { first, second })
                .collect();
            let blocks: Vec<CMat> = factors.iter().map(RbdUserFactors::precoder).collect();
            let mut p_private = CMat::zeros(config.n_tx, layout.total_private());
            for (k, b) in blocks.iter().enumerate() {
                p_private.columns_mut(layout.offset(k), b.ncols()).copy_from(b);
            }
            Ok(PrecoderSet {
                kind,
                p_common,
                p_private,
                rx_filters: factors.iter().map(|f| f.second.g.clone()).collect(),
                rbd: Some(factors),
            })
        }
        PrecoderKind::Mmse => Ok(PrecoderSet {
            kind,
            p_common,
            p_private: mmse_precoder(channels, config, layout)?,
            rx_filters: (0..layout.num_users())
                .map(|k| {
                    let n_k = layout.antennas(k);
                    CMat::identity(n_k, n_k).rows(0, layout.streams(k)).into_owned()
                })
                .collect(),
            rbd: None,
        }),
    }
}

/// Candidate common-stream powers `a_c^2`, as fractions of `E_tr`.
#[derive(Debug, Clone, PartialEq)]
pub enum CommonPowerGrid {
    /// `points` equally spaced fractions covering `[0, 1]`.
    Uniform(usize),
    /// Explicit fractions; `[0.0]` switches rate splitting off.
    Fractions(Vec<f64>),
}

impl CommonPowerGrid {
    pub fn uniform(points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidArgument(format!(
                "power grid needs at least 2 points, got {points}"
            )));
        }
        Ok(CommonPowerGrid::Uniform(points))
    }

    pub fn off() -> Self {
        CommonPowerGrid::Fractions(vec![0.0])
    }

    pub fn fractions(&self) -> Result<Vec<f64>> {
        match self {
            CommonPowerGrid::Uniform(n) => {
                if *n < 2 {
                    return Err(Error::InvalidArgument("power grid needs at least 2 points".into()));
                }
                let last = (*n - 1) as f64;
                Ok((0..*n).map(|i| i as f64 / last).collect())
            }
            CommonPowerGrid::Fractions(f) => {
                if f.is_empty() || f.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    return Err(Error::InvalidArgument(
                        "common power fractions must be a nonempty subset of [0, 1]".into(),
                    ));
                }
                Ok(f.clone())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PowerSearchOutcome {
    pub alloc: PowerAllocation,
    pub rates: ConditionalRates,
    /// Conditional sum rate at the chosen split.
    pub objective: f64,
}

/// Exhaustive search over the common power `a_c^2`; the rest of the budget is
/// spread over the private streams with one shared amplitude. Each candidate
/// is scored by `min_k R̄_{c,k} + R̄_p` averaged over `links`; ties keep the
/// smaller common power.
pub fn power_search_links(
    precoders: &PrecoderSet,
    links: &[LinkState],
    config: &SystemConfig,
    combiner: CombinerKind,
    grid: &CommonPowerGrid,
) -> Result<PowerSearchOutcome> {
    if links.is_empty() {
        return Err(Error::InvalidArgument("power search needs at least one channel".into()));
    }
    let e_tr = config.total_power;
    let mut best: Option<PowerSearchOutcome> = None;
    for frac in grid.fractions()? {
        let alloc = PowerAllocation::uniform(frac * e_tr, e_tr, &precoders.p_private);
        let reports = links
            .iter()
            .map(|l| l.evaluate(&alloc, combiner, config.noise_var))
            .collect::<Result<Vec<_>>>()?;
        let rates = ConditionalRates::average(&reports);
        let objective = rates.sum_rate();
        if best.as_ref().is_none_or(|b| objective > b.objective) {
            best = Some(PowerSearchOutcome { alloc, rates, objective });
        }
    }
    Ok(best.expect("grid is nonempty"))
}

/// [`power_search_links`] over explicit channel realisations.
pub fn power_search(
    precoders: &PrecoderSet,
    channels: &[ChannelSet],
    config: &SystemConfig,
    layout: &StreamLayout,
    combiner: CombinerKind,
    grid: &CommonPowerGrid,
) -> Result<PowerSearchOutcome> {
    let links: Vec<LinkState> = channels
        .iter()
        .map(|ch| LinkState::new(ch, precoders, layout))
        .collect();
    power_search_links(precoders, &links, config, combiner, grid)
}
