//! Closed-form common-stream quantities for the RBD precoder, checked against
//! direct evaluation.
//!
//! With `H^(k,j) = H_k^T P^a_j`, `Υ^(k,j) = Ü_k^H H^(k,j) V̈_j` and
//! `Υ̃^(k,j) = Ü_k^H H̃_k^T P^a_j V̈_j`, the effective channel of user `k` to
//! user `j`'s streams is `Ü_k Υ^(k,j)`; for its own streams this splits into
//! `Ü_k (Ψ̈_k + Υ̃^(k,k))`. Several of the textbook forms of these
//! expressions drop the `Ü_k` factor, square roots or exponents; both the
//! printed and corrected forms are evaluated so the difference can be
//! reported (see [`verify_closed_forms`] and [`deviations_tsv`]).

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::channel::{compose_channel, sample_cn, ChannelSet, RngSeed, Side};
use crate::combining::{self, ReceiveGeometry};
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, CVec};
use crate::model::{build_layout, transmit_signal, CsitError, PowerAllocation, StreamLayout, SystemConfig};
use crate::precoding::{build_precoders, PrecoderKind, PrecoderSet};

/// Relative tolerance of the closed-form checks.
pub const REL_TOL: f64 = 1e-8;
/// Absolute floor under [`REL_TOL`].
pub const ABS_TOL: f64 = 1e-12;
/// Denominator floor for reported relative residuals.
const RESIDUAL_FLOOR: f64 = 1e-4;

/// Per-instance RBD factors used by the closed forms.
#[derive(Debug, Clone)]
pub struct RbdAnalysisFactors {
    /// `Ü_k`, `N_k x N_k`.
    pub u_eff: Vec<CMat>,
    /// `Ψ̈_k` truncated to the transmitted streams, `N_k x M_k`.
    pub psi_eff: Vec<CMat>,
    /// `V̈_k` truncated, `N_t x M_k` (equal to `P^b_k`).
    pub v_eff: Vec<CMat>,
    pub p_a: Vec<CMat>,
    pub psi_bar: Vec<Vec<f64>>,
    pub v_bar: Vec<CMat>,
    /// `H^(k,j) = H_k^T P^a_j`, true channel.
    pub coupling: Vec<Vec<CMat>>,
    /// `Υ^(k,j)`.
    pub upsilon: Vec<Vec<CMat>>,
    /// `Υ̃^(k,j)`, from the CSIT error only.
    pub upsilon_err: Vec<Vec<CMat>>,
    /// `Υ̂^(k,j)`, from the estimate only.
    pub upsilon_est: Vec<Vec<CMat>>,
    hk_t: Vec<CMat>,
    herr_t: Vec<CMat>,
    p_common: CVec,
    offsets: Vec<usize>,
    streams: Vec<usize>,
    total_power: f64,
    noise_var: f64,
    n_rx: usize,
}

impl RbdAnalysisFactors {
    pub fn new(
        channels: &ChannelSet,
        precoders: &PrecoderSet,
        layout: &StreamLayout,
        config: &SystemConfig,
    ) -> Result<Self> {
        let rbd = precoders
            .rbd
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("closed forms need RBD precoders".into()))?;
        let k_users = layout.num_users();
        let hk_t: Vec<CMat> = (0..k_users).map(|k| channels.user_rows(Side::True, k)).collect();
        let hest_t: Vec<CMat> = (0..k_users).map(|k| channels.user_rows(Side::Estimate, k)).collect();
        let herr_t: Vec<CMat> = (0..k_users).map(|k| channels.user_rows(Side::Error, k)).collect();
        let u_eff: Vec<CMat> = rbd.iter().map(|f| f.second.u_eff.clone()).collect();
        let v_eff: Vec<CMat> = rbd.iter().map(|f| f.second.p_b.clone()).collect();
        let psi_eff = rbd
            .iter()
            .enumerate()
            .map(|(k, f)| {
                let mut m = CMat::zeros(layout.antennas(k), layout.streams(k));
                for t in 0..layout.streams(k) {
                    m[(t, t)] = c(f.second.psi_eff[t]);
                }
                m
            })
            .collect();
        let project = |k: usize, left: &CMat, j: usize| -> CMat {
            u_eff[k].adjoint() * left * &rbd[j].first.p_a * &v_eff[j]
        };
        let table = |rows: &[CMat]| -> Vec<Vec<CMat>> {
            (0..k_users)
                .map(|k| (0..k_users).map(|j| project(k, &rows[k], j)).collect())
                .collect()
        };
        Ok(RbdAnalysisFactors {
            coupling: (0..k_users)
                .map(|k| (0..k_users).map(|j| &hk_t[k] * &rbd[j].first.p_a).collect())
                .collect(),
            upsilon: table(&hk_t),
            upsilon_err: table(&herr_t),
            upsilon_est: table(&hest_t),
            p_a: rbd.iter().map(|f| f.first.p_a.clone()).collect(),
            psi_bar: rbd.iter().map(|f| f.first.psi_bar.clone()).collect(),
            v_bar: rbd.iter().map(|f| f.first.v_bar.clone()).collect(),
            u_eff,
            psi_eff,
            v_eff,
            hk_t,
            herr_t,
            p_common: precoders.p_common.clone(),
            offsets: (0..k_users).map(|k| layout.offset(k)).collect(),
            streams: (0..k_users).map(|k| layout.streams(k)).collect(),
            total_power: config.total_power,
            noise_var: config.noise_var,
            n_rx: config.n_rx(),
        })
    }

    pub fn num_users(&self) -> usize {
        self.u_eff.len()
    }

    /// `r_{k,c} = H_k^T p_c`.
    pub fn r_common(&self, k: usize) -> CVec {
        &self.hk_t[k] * &self.p_common
    }

    /// `Ü_k (Ψ̈_k + Υ̃^(k,k))`: user `k`'s own streams at its antennas.
    pub fn own_block(&self, k: usize) -> CMat {
        &self.u_eff[k] * (&self.psi_eff[k] + &self.upsilon_err[k][k])
    }

    /// `Ü_k Υ^(k,j)`: user `j`'s streams at user `k`'s antennas.
    pub fn cross_block(&self, k: usize, j: usize) -> CMat {
        &self.u_eff[k] * &self.upsilon[k][j]
    }

    fn block(&self, k: usize, j: usize) -> CMat {
        if j == k {
            self.own_block(k)
        } else {
            self.cross_block(k, j)
        }
    }

    fn owner(&self, stream: usize) -> (usize, usize) {
        let q = self
            .offsets
            .iter()
            .rposition(|&o| o <= stream)
            .expect("stream index within layout");
        (q, stream - self.offsets[q])
    }

    fn gains<'a>(&self, alloc: &'a PowerAllocation, j: usize) -> &'a [f64] {
        &alloc.a_private[self.offsets[j]..self.offsets[j] + self.streams[j]]
    }

    /// Received vector of user `k` after `Ü_k^H`, split into common, own,
    /// inter-user and noise terms.
    pub fn decomposition(
        &self,
        k: usize,
        alloc: &PowerAllocation,
        symbols: &CVec,
        noise: &CVec,
    ) -> ReceivedTerms {
        let u_h = self.u_eff[k].adjoint();
        let stream_part = |j: usize, m: &CMat| -> CVec {
            let s = symbols.rows(1 + self.offsets[j], self.streams[j]);
            let scaled = CVec::from_iterator(
                self.streams[j],
                s.iter().zip(self.gains(alloc, j)).map(|(s, a)| s * a),
            );
            m * scaled
        };
        let mut mui = CVec::zeros(self.u_eff[k].nrows());
        for j in (0..self.num_users()).filter(|&j| j != k) {
            mui += stream_part(j, &self.upsilon[k][j]);
        }
        ReceivedTerms {
            common: &u_h * self.r_common(k) * (symbols[0] * alloc.a_common),
            own: stream_part(k, &(&self.psi_eff[k] + &self.upsilon_err[k][k])),
            mui,
            noise: u_h * noise,
        }
    }

    /// Common-stream SINR of antenna `i` of user `k` with antenna selection.
    pub fn minmax_sinr(&self, k: usize, i: usize, alloc: &PowerAllocation) -> f64 {
        let signal = alloc.common_power() * self.r_common(k)[i].norm_sqr();
        let own = self.own_block(k);
        let mut interference = 0.0;
        for j in 0..self.num_users() {
            let b = if j == k { own.clone() } else { self.cross_block(k, j) };
            for (t, a) in self.gains(alloc, j).iter().enumerate() {
                interference += a * a * b[(i, t)].norm_sqr();
            }
        }
        signal / (interference + self.noise_var)
    }

    /// `||r_{k,j}||^2` for global private stream `j`.
    pub fn mrc_norm(&self, k: usize, j: usize) -> f64 {
        let (q, t) = self.owner(j);
        if q == k {
            let col = self.u_eff[k].column(t) * c(self.psi_eff[k][(t, t)].re)
                + &self.herr_t[k] * &self.p_a[k] * self.v_eff[k].column(t);
            col.norm_squared()
        } else {
            self.cross_norm(k, q, t, 2)
        }
    }

    /// `E_tr sum_i |sum_{l,n} h_{i,l} λ_n v̄_{l,n} v̈_{n,t}|^2` with
    /// `λ_n = (E_tr ψ̄_n^exponent + N_r σ^2)^{-1/2}`.
    fn cross_norm(&self, k: usize, q: usize, t: usize, exponent: i32) -> f64 {
        let lambda: Vec<f64> = self.psi_bar[q]
            .iter()
            .map(|psi| 1.0 / (self.total_power * psi.powi(exponent) + self.n_rx as f64 * self.noise_var).sqrt())
            .collect();
        let h = &self.hk_t[k];
        let (vb, vt) = (&self.v_bar[q], &self.v_eff[q]);
        let n_t = vb.nrows();
        let mut acc = 0.0;
        for i in 0..h.nrows() {
            let mut s = c(0.0);
            for l in 0..n_t {
                for n in 0..n_t {
                    s += h[(i, l)] * c(lambda[n]) * vb[(l, n)] * vt[(n, t)];
                }
            }
            acc += s.norm_sqr();
        }
        self.total_power * acc
    }

    /// MRC common SINR written with the per-stream norms and the angles
    /// `cos β_j = |r_c^H r_j| / (||r_c|| ||r_j||)`; `power` is the exponent on
    /// `cos β_j` (2 is correct).
    pub fn mrc_sinr_trig(&self, k: usize, alloc: &PowerAllocation, power: i32) -> f64 {
        let r_c = self.r_common(k);
        let rc2 = r_c.norm_squared();
        let mut denom = self.noise_var;
        for j in 0..self.num_users() {
            let b = self.block(k, j);
            for (t, a) in self.gains(alloc, j).iter().enumerate() {
                let r_j = b.column(t);
                let norm2 = self.mrc_norm(k, self.offsets[j] + t);
                if norm2 == 0.0 {
                    continue;
                }
                let cos = r_c.dotc(&r_j).norm() / (rc2 * norm2).sqrt();
                denom += a * a * norm2 * cos.powi(power);
            }
        }
        alloc.common_power() * rc2 / denom
    }

    /// `(own, inter-user)` interference seen through combiner `w`:
    /// `w^H D_k J_k D_k^H w` and `sum_{j≠k} w^H Ü_kΥ^(k,j) J_j Υ^(k,j)^H Ü_k^H w`.
    /// With `w = R^{-1} r_c` these are the trace forms of the MMSE combiner.
    pub fn mmsec_terms(&self, k: usize, alloc: &PowerAllocation, w: &CVec) -> (f64, f64) {
        let own = weighted_projection(&self.own_block(k), self.gains(alloc, k), w);
        let mui = (0..self.num_users())
            .filter(|&j| j != k)
            .map(|j| weighted_projection(&self.cross_block(k, j), self.gains(alloc, j), w))
            .sum();
        (own, mui)
    }
}

/// `w^H B diag(a⊙a) B^H w`.
fn weighted_projection(b: &CMat, gains: &[f64], w: &CVec) -> f64 {
    let p = b.adjoint() * w;
    p.iter().zip(gains).map(|(x, a)| a * a * x.norm_sqr()).sum()
}

/// The four parts of a user's filtered received vector.
#[derive(Debug, Clone)]
pub struct ReceivedTerms {
    pub common: CVec,
    pub own: CVec,
    pub mui: CVec,
    pub noise: CVec,
}

impl ReceivedTerms {
    pub fn total(&self) -> CVec {
        &self.common + &self.own + &self.mui + &self.noise
    }
}

/// The forms as usually printed, kept to measure how far they are off.
mod printed {
    use super::*;

    /// Own streams written as `Ü_kΨ̈_k + Υ̃^(k,k)` and inter-user streams as
    /// `Υ^(k,j)`, compared against the unfiltered received vector.
    pub fn decomposition(
        f: &RbdAnalysisFactors,
        k: usize,
        alloc: &PowerAllocation,
        symbols: &CVec,
        noise: &CVec,
    ) -> CVec {
        let terms = f.decomposition(k, alloc, symbols, noise);
        let s = symbols.rows(1 + f.offsets[k], f.streams[k]);
        let scaled = CVec::from_iterator(
            f.streams[k],
            s.iter().zip(f.gains(alloc, k)).map(|(s, a)| s * a),
        );
        let own = (&f.u_eff[k] * &f.psi_eff[k] + &f.upsilon_err[k][k]) * scaled;
        f.r_common(k) * (symbols[0] * alloc.a_common) + own + terms.mui + terms.noise
    }

    /// Filtered-frame entries used at antenna `i`; with perfect CSIT the
    /// estimate-side `Υ̂^(k,k)` is added to `ψ u`.
    pub fn minmax_sinr(f: &RbdAnalysisFactors, k: usize, i: usize, alloc: &PowerAllocation, perfect: bool) -> f64 {
        let signal = alloc.common_power() * f.r_common(k)[i].norm_sqr();
        let correction = if perfect { &f.upsilon_est[k][k] } else { &f.upsilon_err[k][k] };
        let mut rho = 0.0;
        for (t, a) in f.gains(alloc, k).iter().enumerate() {
            let v = f.u_eff[k][(i, t)] * c(f.psi_eff[k][(t, t)].re) + correction[(i, t)];
            rho += a * a * v.norm_sqr();
        }
        let mut mui = 0.0;
        for j in (0..f.num_users()).filter(|&j| j != k) {
            for (t, a) in f.gains(alloc, j).iter().enumerate() {
                mui += a * a * f.upsilon[k][j][(i, t)].norm_sqr();
            }
        }
        signal / (rho + mui + f.noise_var)
    }

    pub fn mmsec_terms(f: &RbdAnalysisFactors, k: usize, alloc: &PowerAllocation, w: &CVec) -> (f64, f64) {
        let d = &f.u_eff[k] * &f.psi_eff[k] + &f.upsilon_err[k][k];
        let own = weighted_projection(&d, f.gains(alloc, k), w);
        let mui = (0..f.num_users())
            .filter(|&j| j != k)
            .map(|j| weighted_projection(&f.upsilon_err[k][j], f.gains(alloc, k), w))
            .sum();
        (own, mui)
    }
}

/// One closed-form identity and the worst residuals seen.
#[derive(Debug, Clone)]
pub struct CheckRecord {
    pub anchor: &'static str,
    pub printed: &'static str,
    pub implemented: &'static str,
    /// Largest relative residual of the implemented form.
    pub max_residual: f64,
    /// Largest relative residual of the printed form; `None` when it cannot
    /// be evaluated.
    pub printed_residual: Option<f64>,
    pub evaluations: usize,
    pub failures: usize,
}

impl CheckRecord {
    pub fn corrected(&self) -> bool {
        self.printed != self.implemented
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

struct CheckSpec {
    anchor: &'static str,
    printed: &'static str,
    implemented: &'static str,
}

const CHECKS: [CheckSpec; 11] = [
    CheckSpec {
        anchor: "received-signal decomposition",
        printed: "y_k = a_c s_c H_k^T p_c + (Ü_k Ψ̈_k + Υ̃^(k,k)) diag(a_k) s_k + Σ_{j≠k} Υ^(k,j) diag(a_j) s_j + Ü_k^H n_k",
        implemented: "Ü_k^H y_k = a_c s_c Ü_k^H H_k^T p_c + (Ψ̈_k + Υ̃^(k,k)) diag(a_k) s_k + Σ_{j≠k} Υ^(k,j) diag(a_j) s_j + Ü_k^H n_k",
    },
    CheckSpec {
        anchor: "min-max per-antenna common SINR",
        printed: "a_c²|h_i^T p_c|² / (Σ_{l∈M_k} a_l²|ψ_t u_{i,t} + υ̃^(k,k)_{i,t}|² + Σ_{j≠k} Σ_m a_m²|υ^(k,j)_{i,t}|² + σ²), perfect CSIT: υ̂^(k,k) in place of υ̃^(k,k)",
        implemented: "a_c²|h_i^T p_c|² / (Σ_{l∈M_k} a_l²|[Ü_k(Ψ̈_k + Υ̃^(k,k))]_{i,t}|² + Σ_{j≠k} Σ_m a_m²|[Ü_k Υ^(k,j)]_{i,t}|² + σ²)",
    },
    CheckSpec {
        anchor: "MRC own-stream norm",
        printed: "||r_{k,j}||² = ||ψ̈_t ü_t + H̃_k^T P^a_k v̈_t||²",
        implemented: "||r_{k,j}||² = ||ψ̈_t ü_t + H̃_k^T P^a_k v̈_t||²",
    },
    CheckSpec {
        anchor: "MRC inter-user norm",
        printed: "E_tr Σ_i |Σ_{l,n} h_{i,l} λ_n v̄_{l,n} v̈_{n,t}|², λ_n = (E_tr ψ̄_n + N_r σ²)^(-1/2)",
        implemented: "E_tr Σ_i |Σ_{l,n} h_{i,l} λ_n v̄_{l,n} v̈_{n,t}|², λ_n = (E_tr ψ̄_n² + N_r σ²)^(-1/2)",
    },
    CheckSpec {
        anchor: "MRC common SINR, angle form",
        printed: "a_c²||r_c||² / (Σ_j a_j²||r_j||² cos β_j + σ²)",
        implemented: "a_c²||r_c||² / (Σ_j a_j²||r_j||² cos² β_j + σ²)",
    },
    CheckSpec {
        anchor: "MMSE combiner weight",
        printed: "w = R_yy^-1 H_k p_c",
        implemented: "w = R_yy^-1 H_k^T p_c",
    },
    CheckSpec {
        anchor: "MMSE combiner noise term",
        printed: "||w||² σ² = tr(R_yy^-2 r_c r_c^H) σ²",
        implemented: "||w||² σ² = tr(R_yy^-2 r_c r_c^H) σ²",
    },
    CheckSpec {
        anchor: "MMSE combiner stream quadratic form",
        printed: "|w^H r_i|² = r_i^H R_yy^-1 r_c r_c^H R_yy^-1 r_i",
        implemented: "|w^H r_i|² = r_i^H R_yy^-1 r_c r_c^H R_yy^-1 r_i",
    },
    CheckSpec {
        anchor: "MMSE combiner common quadratic form",
        printed: "|w^H r_c|² = r_c^H R_yy^-1 r_c r_c^H R_yy^-1 r_c",
        implemented: "|w^H r_c|² = r_c^H R_yy^-1 r_c r_c^H R_yy^-1 r_c",
    },
    CheckSpec {
        anchor: "MMSE combiner own-stream trace",
        printed: "tr(r_c^H R^-1 D_k J_k D_k^H R^-1 r_c), D_k = Ü_k Ψ̈_k + Υ̃^(k,k)",
        implemented: "tr(r_c^H R^-1 D_k J_k D_k^H R^-1 r_c), D_k = Ü_k (Ψ̈_k + Υ̃^(k,k))",
    },
    CheckSpec {
        anchor: "MMSE combiner inter-user trace",
        printed: "Σ_{j≠k} tr(r_c^H R^-1 Υ̃^(k,j) J_k Υ̃^(k,j)^H R^-1 r_c)",
        implemented: "Σ_{j≠k} tr(r_c^H R^-1 Ü_k Υ^(k,j) J_j Υ^(k,j)^H Ü_k^H R^-1 r_c)",
    },
];

/// Shape of the random instances.
#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub instances: usize,
    pub seed: u64,
    pub n_tx: usize,
    pub users: Vec<usize>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            instances: 1000,
            seed: 1,
            n_tx: 8,
            users: vec![2; 4],
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub instances: usize,
    pub checks: Vec<CheckRecord>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckRecord::passed)
    }
}

/// Residual of `value` against `reference`: (reported relative residual, pass).
fn residual(value: f64, reference: f64) -> (f64, bool) {
    let diff = (value - reference).abs();
    let ok = diff <= (REL_TOL * reference.abs()).max(ABS_TOL);
    (diff / reference.abs().max(RESIDUAL_FLOOR), ok)
}

fn vec_residual(value: &CVec, reference: &CVec) -> (f64, bool) {
    let diff = (value - reference).norm();
    let r = reference.norm();
    (diff / r.max(RESIDUAL_FLOOR), diff <= (REL_TOL * r).max(ABS_TOL))
}

#[derive(Default, Clone)]
struct Tally {
    max_residual: f64,
    printed_residual: Option<f64>,
    evaluations: usize,
    failures: usize,
}

impl Tally {
    fn record(&mut self, (res, ok): (f64, bool), printed: Option<f64>) {
        self.max_residual = self.max_residual.max(res);
        if let Some(p) = printed {
            self.printed_residual = Some(self.printed_residual.map_or(p, |q| q.max(p)));
        }
        self.evaluations += 1;
        if !ok {
            self.failures += 1;
        }
    }

    fn merge(mut self, other: &Tally) -> Tally {
        self.max_residual = self.max_residual.max(other.max_residual);
        self.printed_residual = match (self.printed_residual, other.printed_residual) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        self.evaluations += other.evaluations;
        self.failures += other.failures;
        self
    }
}

struct Instance {
    config: SystemConfig,
    layout: StreamLayout,
    channels: ChannelSet,
    precoders: PrecoderSet,
    alloc: PowerAllocation,
    symbols: CVec,
    noise: Vec<CVec>,
}

/// Random RBD instance: SNR in [0, 30] dB, perfect CSIT on even indices and
/// error variance in [0.01, 0.5] otherwise, non-uniform stream gains.
fn random_instance(opts: &VerifyOptions, index: usize) -> Result<Instance> {
    let mut rng = RngSeed::new(opts.seed, index as u64).rng();
    let total_power = 10f64.powf(rng.random_range(0.0..3.0));
    let csit = if index % 2 == 0 {
        CsitError::Perfect
    } else {
        CsitError::FixedVariance(rng.random_range(0.01..0.5))
    };
    let config = SystemConfig::new(opts.n_tx, opts.users.clone(), total_power, 1.0, csit)?;
    let layout = build_layout(&config)?;
    let h = sample_cn(config.n_tx, config.n_rx(), 1.0, &mut rng);
    let err = if csit.is_perfect() {
        CMat::zeros(config.n_tx, config.n_rx())
    } else {
        sample_cn(config.n_tx, config.n_rx(), config.error_variance(), &mut rng)
    };
    let channels = compose_channel(h, err, &layout)?;
    let precoders = build_precoders(PrecoderKind::Rbd, &channels, &config, &layout)?;
    let base = PowerAllocation::uniform(
        rng.random_range(0.0..1.0) * total_power,
        total_power,
        &precoders.p_private,
    );
    let alloc = PowerAllocation {
        a_common: base.a_common,
        a_private: base
            .a_private
            .iter()
            .map(|a| a * rng.random_range(0.2..1.5))
            .collect(),
    };
    let symbols = sample_cn(layout.total_private() + 1, 1, 1.0, &mut rng).column(0).into_owned();
    let noise = (0..layout.num_users())
        .map(|k| sample_cn(layout.antennas(k), 1, config.noise_var, &mut rng).column(0).into_owned())
        .collect();
    Ok(Instance {
        config,
        layout,
        channels,
        precoders,
        alloc,
        symbols,
        noise,
    })
}

fn check_instance(inst: &Instance) -> Result<Vec<Tally>> {
    let mut t = vec![Tally::default(); CHECKS.len()];
    let f = RbdAnalysisFactors::new(&inst.channels, &inst.precoders, &inst.layout, &inst.config)?;
    let alloc = &inst.alloc;
    let noise_var = inst.config.noise_var;
    let perfect = inst.config.csit_error.is_perfect();
    let x = transmit_signal(&inst.symbols, &inst.precoders, alloc)?;
    for k in 0..inst.layout.num_users() {
        let geom = ReceiveGeometry::for_user(&inst.channels, &inst.precoders, &inst.layout, k, alloc, noise_var);
        let r_c = &geom.r_common;

        // Received-signal decomposition.
        let y = inst.channels.user_rows(Side::True, k) * &x + &inst.noise[k];
        let filtered = f.u_eff[k].adjoint() * &y;
        let terms = f.decomposition(k, alloc, &inst.symbols, &inst.noise[k]);
        let printed_total = printed::decomposition(&f, k, alloc, &inst.symbols, &inst.noise[k]);
        t[0].record(vec_residual(&terms.total(), &filtered), Some(vec_residual(&printed_total, &y).0));

        // Antenna selection.
        for i in 0..geom.antennas() {
            let mut e = CVec::zeros(geom.antennas());
            e[i] = c(1.0);
            let direct = combining::sinr_general(&e, &geom, alloc)?;
            let printed = printed::minmax_sinr(&f, k, i, alloc, perfect);
            t[1].record(residual(f.minmax_sinr(k, i, alloc), direct), Some(residual(printed, direct).0));
        }

        // Stream norms.
        for j in 0..inst.layout.total_private() {
            let direct = geom.r_streams.column(j).norm_squared();
            let (q, col) = f.owner(j);
            if q == k {
                t[2].record(residual(f.mrc_norm(k, j), direct), Some(residual(f.mrc_norm(k, j), direct).0));
            } else {
                let printed = f.cross_norm(k, q, col, 1);
                t[3].record(residual(f.mrc_norm(k, j), direct), Some(residual(printed, direct).0));
            }
        }

        // MRC angle form.
        let w_mrc = combining::mrc_combiner(&geom);
        let direct = combining::sinr_general(&w_mrc, &geom, alloc)?;
        t[4].record(
            residual(f.mrc_sinr_trig(k, alloc, 2), direct),
            Some(residual(f.mrc_sinr_trig(k, alloc, 1), direct).0),
        );

        // MMSE combiner.
        let w = combining::mmsec_combiner(&geom)?;
        let gradient = &geom.r_cov * &w - r_c;
        t[5].record(
            (gradient.norm() / r_c.norm().max(RESIDUAL_FLOOR), gradient.norm() <= 1e-10 * r_c.norm()),
            None,
        );
        let r_inv = linalg::hpd_cholesky(&geom.r_cov)?.inverse();
        let rc_rch = r_c * r_c.adjoint();
        let noise_trace = (&r_inv * &r_inv * &rc_rch).trace().re * noise_var;
        let direct_noise = w.norm_squared() * noise_var;
        t[6].record(residual(noise_trace, direct_noise), Some(residual(noise_trace, direct_noise).0));
        let quad = |r: &CVec| (r.adjoint() * &r_inv * &rc_rch * &r_inv * r)[(0, 0)].re;
        for j in 0..inst.layout.total_private() {
            let r_j = geom.r_streams.column(j).into_owned();
            let direct = w.dotc(&r_j).norm_sqr();
            let closed = quad(&r_j);
            t[7].record(residual(closed, direct), Some(residual(closed, direct).0));
        }
        let direct = w.dotc(r_c).norm_sqr();
        t[8].record(residual(quad(r_c), direct), Some(residual(quad(r_c), direct).0));

        let mut own = 0.0;
        let mut mui = 0.0;
        for (j, a) in alloc.a_private.iter().enumerate() {
            let term = a * a * w.dotc(&geom.r_streams.column(j)).norm_sqr();
            if geom.own_streams.contains(&j) {
                own += term;
            } else {
                mui += term;
            }
        }
        let (c_own, c_mui) = f.mmsec_terms(k, alloc, &w);
        let (p_own, p_mui) = printed::mmsec_terms(&f, k, alloc, &w);
        t[9].record(residual(c_own, own), Some(residual(p_own, own).0));
        t[10].record(residual(c_mui, mui), Some(residual(p_mui, mui).0));
    }
    Ok(t)
}

/// Evaluates every closed form against its direct definition on random
/// instances (in parallel on the current rayon pool).
pub fn verify_closed_forms(opts: &VerifyOptions) -> Result<VerifyReport> {
    let per_instance = (0..opts.instances)
        .into_par_iter()
        .map(|i| random_instance(opts, i).and_then(|inst| check_instance(&inst)))
        .collect::<Result<Vec<_>>>()?;
    let totals = per_instance.iter().fold(vec![Tally::default(); CHECKS.len()], |acc, t| {
        acc.into_iter().zip(t).map(|(a, b)| a.merge(b)).collect()
    });
    Ok(VerifyReport {
        instances: opts.instances,
        checks: CHECKS
            .iter()
            .zip(totals)
            .map(|(spec, t)| CheckRecord {
                anchor: spec.anchor,
                printed: spec.printed,
                implemented: spec.implemented,
                max_residual: t.max_residual,
                printed_residual: t.printed_residual,
                evaluations: t.evaluations,
                failures: t.failures,
            })
            .collect(),
    })
}

/// Tab-separated deviations table, one row per identity.
pub fn deviations_tsv(report: &VerifyReport) -> String {
    let mut out = String::from("anchor\tstatus\tprinted\timplemented\tmax_residual\tprinted_residual\n");
    for r in &report.checks {
        let printed_res = if r.printed == r.implemented {
            format!("{:.3e}", r.max_residual)
        } else {
            r.printed_residual
                .map_or_else(|| "not-evaluable".to_string(), |p| format!("{p:.3e}"))
        };
        let status = if r.corrected() { "corrected" } else { "as-printed" };
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.3e}\t{}",
            r.anchor, status, r.printed, r.implemented, r.max_residual, printed_res
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn write_deviations(report: &VerifyReport, path: &Path) -> Result<()> {
    std::fs::write(path, deviations_tsv(report)).map_err(|e| Error::io(path, e))
}
