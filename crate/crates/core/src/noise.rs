//! Counter-based Gaussian increments.
//!
//! Every draw is a pure function of `(seed, trajectory_id, step, substep,
//! coordinate)`: the counters are folded through the MurmurHash3 64-bit
//! finalizer (a bijection on `u64`) and the top 53 bits become a uniform on
//! the open interval (0, 1). Normals come from Wichura's AS241 inverse CDF
//! (relative accuracy about 1e-16), so streams are reproducible bit for bit
//! on any IEEE-754 platform and independent of how work is scheduled.

use crate::error::{invalid, Error, Result};

const STEP_MUL: u64 = 0x9E37_79B9_7F4A_7C15;
const LANE_MUL: u64 = 0xC2B2_AE3D_27D4_EB4F;
const LANE_XOR: u64 = 0x1656_67B1_9E37_79F9;
const TRAJ_MUL: u64 = 0xD6E8_FEB8_6659_FD93;

#[inline]
fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

/// Reserved trajectory-id ranges so that independent consumers sharing a
/// seed never reuse a stream.
pub mod lanes {
    pub const CHAIN: u64 = 0;
    pub const ENSEMBLE: u64 = 1 << 40;
    pub const INNER_MC: u64 = 2 << 40;
    pub const SAMPLER: u64 = 3 << 40;
    pub const PILOT: u64 = 4 << 40;
}

/// Address of a Brownian path: `(seed, trajectory_id)`; step `k` is supplied
/// per call so no state is shared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseStream {
    seed: u64,
    trajectory_id: u64,
    key: u64,
}

/// Brownian path on `[0, τ]` sampled at `n_sub` uniform substeps.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath {
    /// `n_sub + 1` times `0 = s_0 < … < s_n = τ`.
    pub times: Vec<f64>,
    /// `W(s_i)`, row-major `(n_sub + 1) × m`; the first row is zero and the
    /// last row equals the coarse increment bit for bit.
    pub values: Vec<f64>,
    pub m: usize,
}

impl BrownianPath {
    pub fn n_sub(&self) -> usize {
        self.times.len() - 1
    }

    pub fn tau(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn endpoint(&self) -> &[f64] {
        self.at(self.n_sub())
    }

    /// Validates the path against a coarse step of size `tau`.
    pub fn check_against(&self, tau: f64, m: usize) -> Result<()> {
        if self.m != m {
            return Err(Error::Refinement(format!(
                "noise dimension {} does not match m = {m}",
                self.m
            )));
        }
        if self.times.len() < 2 || self.values.len() != self.times.len() * m {
            return Err(Error::Refinement("path has inconsistent length".into()));
        }
        if self.times[0] != 0.0 || self.values[..m].iter().any(|v| *v != 0.0) {
            return Err(Error::Refinement("path must start at W(0) = 0".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Refinement("substep times must increase".into()));
        }
        if (self.tau() - tau).abs() > 1e-12 * tau {
            return Err(Error::Refinement(format!(
                "path ends at {} but the step is {tau}",
                self.tau()
            )));
        }
        Ok(())
    }
}

impl NoiseStream {
    pub fn new(seed: u64, trajectory_id: u64) -> Self {
        let key = fmix64(seed ^ fmix64(trajectory_id.wrapping_mul(TRAJ_MUL) ^ LANE_XOR));
        Self {
            seed,
            trajectory_id,
            key,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trajectory_id(&self) -> u64 {
        self.trajectory_id
    }

    #[inline]
    fn bits(&self, k: u64, sub: u32, coord: u32) -> u64 {
        let h = fmix64(self.key ^ k.wrapping_mul(STEP_MUL));
        let lane = ((sub as u64) << 32) | coord as u64;
        fmix64(h ^ lane.wrapping_mul(LANE_MUL) ^ LANE_XOR)
    }

    /// Uniform on (0, 1).
    #[inline]
    pub fn uniform(&self, k: u64, sub: u32, coord: u32) -> f64 {
        ((self.bits(k, sub, coord) >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal.
    #[inline]
    pub fn normal(&self, k: u64, sub: u32, coord: u32) -> f64 {
        inverse_normal_cdf(self.uniform(k, sub, coord))
    }

    /// `δ_k W ~ N(0, τ I_m)` written into `out` (`m = out.len()`).
    pub fn increment(&self, k: u64, tau: f64, out: &mut [f64]) -> Result<()> {
        if !(tau > 0.0) {
            return Err(invalid("tau", format!("must be > 0, got {tau}")));
        }
        self.increment_scaled(k, tau.sqrt(), out);
        Ok(())
    }

    /// Same as [`increment`](Self::increment) with `√τ` precomputed.
    #[inline]
    pub fn increment_scaled(&self, k: u64, sqrt_tau: f64, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = sqrt_tau * self.normal(k, 0, j as u32);
        }
    }

    pub fn increment_vec(&self, k: u64, m: usize, tau: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; m];
        self.increment(k, tau, &mut out)?;
        Ok(out)
    }

    /// Brownian bridge through the coarse increment: `W` at `n_sub` uniform
    /// substeps of `[0, τ]`, pinned to `W(τ) = δ_k W` exactly.
    pub fn bridge(&self, k: u64, n_sub: usize, m: usize, tau: f64) -> Result<BrownianPath> {
        if n_sub < 1 {
            return Err(invalid("n_sub", "must be >= 1"));
        }
        let coarse = self.increment_vec(k, m, tau)?;
        let mut path = BrownianPath {
            times: (0..=n_sub).map(|i| tau * i as f64 / n_sub as f64).collect(),
            values: vec![0.0; (n_sub + 1) * m],
            m,
        };
        path.times[n_sub] = tau;
        self.fill_bridge(k, &coarse, &mut path.values, n_sub, tau);
        Ok(path)
    }

    /// Writes the bridge into `values` (row-major `(n_sub+1) × m`), given
    /// the coarse increment; allocation-free variant for inner loops.
    pub fn fill_bridge(&self, k: u64, coarse: &[f64], values: &mut [f64], n_sub: usize, tau: f64) {
        let m = coarse.len();
        let h = tau / n_sub as f64;
        values[..m].iter_mut().for_each(|v| *v = 0.0);
        for i in 1..n_sub {
            let remaining = tau - (i - 1) as f64 * h;
            let frac = h / remaining;
            let var = h * (remaining - h) / remaining;
            let sd = var.sqrt();
            for j in 0..m {
                let prev = values[(i - 1) * m + j];
                let mean = prev + (coarse[j] - prev) * frac;
                values[i * m + j] = mean + sd * self.normal(k, i as u32, j as u32);
            }
        }
        values[n_sub * m..(n_sub + 1) * m].copy_from_slice(coarse);
    }

    /// `n_sub` increments of `N(0, (τ/n_sub) I_m)` summing to `δ_k W`.
    pub fn refine(&self, k: u64, n_sub: usize, m: usize, tau: f64) -> Result<Vec<Vec<f64>>> {
        let path = self.bridge(k, n_sub, m, tau)?;
        Ok((1..=n_sub)
            .map(|i| {
                path.at(i)
                    .iter()
                    .zip(path.at(i - 1))
                    .map(|(a, b)| a - b)
                    .collect()
            })
            .collect())
    }
}

/// Inverse of the standard normal CDF (Wichura 1988, algorithm AS241,
/// PPND16).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_5,
        133.141_667_891_784_38,
        1_971.590_950_306_551_3,
        13_731.693_765_509_461,
        45_921.953_931_549_87,
        67_265.770_927_008_7,
        33_430.575_583_588_13,
        2_509.080_928_730_122_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_91,
        687.187_007_492_057_9,
        5_394.196_021_424_751,
        21_213.794_301_586_597,
        39_307.895_800_092_71,
        28_729.085_735_721_943,
        5_226.495_278_852_545,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_546,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        0.241_780_725_177_450_6,
        0.022_723_844_989_269_184,
        0.000_774_545_014_278_341_4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        0.689_767_334_985_1,
        0.148_103_976_427_480_08,
        0.015_198_666_563_616_457,
        0.000_547_593_808_499_534_5,
        1.050_750_071_644_416_9e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        0.296_560_571_828_504_9,
        0.026_532_189_526_576_124,
        0.001_242_660_947_388_078_4,
        0.000_027_115_555_687_434_876,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_888,
        0.136_929_880_922_735_8,
        0.014_875_361_290_850_615,
        0.000_786_869_131_145_613_3,
        0.000_018_463_183_175_100_548,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_8e-15,
    ];
    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, v| acc * x + v)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let z = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -z
    } else {
        z
    }
}
