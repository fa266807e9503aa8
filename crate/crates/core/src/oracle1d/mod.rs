//! Quadrature-grade ground truth for scalar problems (`d = m = 1`):
//! the stationary density `p ∝ σ^{-2} exp(∫₀^x 2b/σ²)`, `π(φ)`, and the
//! Stein solution `f_φ` with derivatives up to order four.

mod semigroup;
mod stein;

pub use semigroup::{
    derivative_growth_fit, verify_semigroup_route, GrowthFit, ProbeResult, RouteStatus, SemigroupReport,
    SemigroupSettings,
};
pub use stein::{stein_solution, SteinSolution1d};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{Scalar1d, Sde, TestFunction};
use crate::quadrature::GaussLegendre;
use crate::stats::NeumaierSum;

/// Nodes per panel of the main rule.
const NODES_A: usize = 10;
/// Nodes per panel of the comparison rule used for error estimates.
const NODES_B: usize = 6;
/// Smallest admissible `σ²` on the grid.
const SIGMA_SQ_MIN: f64 = 1e-12;
/// Required bound on the mass outside `[−R, R]`.
pub const TAIL_MASS_MAX: f64 = 1e-12;
/// Candidate truncation radii for [`auto_density`].
pub const RADII: [f64; 4] = [8.0, 12.0, 16.0, 24.0];
/// Error budget for `π(φ)`.
pub const PI_TOLERANCE: f64 = 1e-9;

/// Normalized stationary density tabulated on the uniform grid
/// `x_i = (i − N/2) h`, `h = 2R/N`, plus Gauss–Legendre nodes inside every
/// panel `[x_{i−1}, x_i]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StationaryDensity1d {
    pub radius: f64,
    pub h: f64,
    pub grid: Vec<f64>,
    /// `log p(x_i)`.
    pub log_density: Vec<f64>,
    /// `log Z` of the unnormalized density `σ^{-2} exp(ψ)`, `ψ(0) = 0`.
    pub log_normalizer: f64,
    pub tail_mass_bound: f64,
    pub(crate) nodes_a: Vec<f64>,
    pub(crate) weights_a: Vec<f64>,
    pub(crate) log_p_a: Vec<f64>,
    pub(crate) nodes_b: Vec<f64>,
    pub(crate) weights_b: Vec<f64>,
    pub(crate) log_p_b: Vec<f64>,
    /// `d/dx log p` at `±R`.
    pub(crate) edge_slopes: [f64; 2],
    /// Gauss nodes `(x, w, log p)` beyond `−R` and `+R`, out to where `p`
    /// has dropped by `e^{-50}` relative to its edge value.
    pub(crate) outer: [Vec<(f64, f64, f64)>; 2],
}

impl StationaryDensity1d {
    pub fn n_panels(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn normalizer(&self) -> f64 {
        self.log_normalizer.exp()
    }

    /// `p(x_i)`.
    pub fn density(&self) -> Vec<f64> {
        self.log_density.iter().map(|l| l.exp()).collect()
    }

    /// Gauss nodes of panel `i` (1-based, between `x_{i−1}` and `x_i`) with
    /// absolute weights and `log p` at the nodes.
    pub(crate) fn panel_nodes(&self, i: usize) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let r = (i - 1) * NODES_A..i * NODES_A;
        self.nodes_a[r.clone()]
            .iter()
            .zip(&self.weights_a[r.clone()])
            .zip(&self.log_p_a[r])
            .map(|((x, w), l)| (*x, *w, *l))
    }

    pub fn contains(&self, x: f64) -> bool {
        (-self.radius..=self.radius).contains(&x)
    }

    /// `∫ p` by composite Simpson on the grid values only (independent of
    /// the Gauss nodes used for normalization).
    pub fn simpson_mass(&self) -> f64 {
        let p = self.density();
        let n = p.len() - 1;
        let mut s = NeumaierSum::new();
        for (i, v) in p.iter().enumerate() {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            s.add(w * v);
        }
        s.value() * self.h / 3.0
    }
}

/// `2b/σ²` and `log p` ingredients.
struct Coefficients<'a, P: Sde + ?Sized> {
    s: Scalar1d<'a, P>,
}

impl<P: Sde + ?Sized> Coefficients<'_, P> {
    fn sigma_sq(&self, x: f64) -> Result<f64> {
        let sg = self.s.sigma(x);
        let sq = sg * sg;
        if !sq.is_finite() {
            return Err(Error::NonFinite {
                what: "diffusion",
                point: vec![x],
            });
        }
        if sq < SIGMA_SQ_MIN {
            return Err(Error::Degenerate { x, sigma_sq: sq });
        }
        Ok(sq)
    }

    fn rho(&self, x: f64) -> Result<f64> {
        let v = 2.0 * self.s.b(x) / self.sigma_sq(x)?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "drift",
                point: vec![x],
            });
        }
        Ok(v)
    }

    /// `d/dx log p = 2b/σ² − 2σ'/σ`.
    fn log_p_slope(&self, x: f64) -> Result<f64> {
        Ok(self.rho(x)? - 2.0 * self.s.sigma_deriv(1, x)? / self.s.sigma(x))
    }
}

fn panel_integral(rule: &GaussLegendre, a: f64, b: f64, f: &impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let mut s = 0.0;
    for (x, w) in rule.mapped(a, b) {
        s += w * f(x)?;
    }
    Ok(s)
}

/// Builds the normalized density on `[−R, R]` with `n_grid` panels
/// (rounded up to an even number).
pub fn stationary_density<P: Sde + ?Sized>(problem: &P, radius: f64, n_grid: usize) -> Result<StationaryDensity1d> {
    let s = Scalar1d::new(problem)?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(invalid("radius", format!("must be positive, got {radius}")));
    }
    if n_grid < 8 {
        return Err(invalid("n_grid", "need at least 8 panels"));
    }
    let n = n_grid + n_grid % 2;
    let half = (n / 2) as isize;
    let h = 2.0 * radius / n as f64;
    let grid: Vec<f64> = (0..=n).map(|i| (i as isize - half) as f64 * h).collect();
    let co = Coefficients { s };
    let rho = |x: f64| co.rho(x);
    let gl = GaussLegendre::new(NODES_A);
    let gl_b = GaussLegendre::new(NODES_B);

    // ψ on the grid, accumulated outward from ψ(0) = 0
    let mut psi = vec![0.0; n + 1];
    let mid = n / 2;
    for i in mid + 1..=n {
        psi[i] = psi[i - 1] + panel_integral(&gl, grid[i - 1], grid[i], &rho)?;
    }
    for i in (0..mid).rev() {
        psi[i] = psi[i + 1] - panel_integral(&gl, grid[i], grid[i + 1], &rho)?;
    }
    let mut log_unnorm = vec![0.0; n + 1];
    for i in 0..=n {
        log_unnorm[i] = psi[i] - co.sigma_sq(grid[i])?.ln();
    }

    // log of the unnormalized density at the Gauss nodes of each panel
    let nodes_of = |rule: &GaussLegendre| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let k = rule.len();
        let (mut xs, mut ws, mut ls) = (Vec::with_capacity(n * k), Vec::with_capacity(n * k), Vec::with_capacity(n * k));
        for i in 1..=n {
            let a = grid[i - 1];
            for (y, w) in rule.mapped(a, grid[i]) {
                let psi_y = psi[i - 1] + panel_integral(&gl, a, y, &rho)?;
                xs.push(y);
                ws.push(w);
                ls.push(psi_y - co.sigma_sq(y)?.ln());
            }
        }
        Ok((xs, ws, ls))
    };
    let (nodes_a, weights_a, mut log_p_a) = nodes_of(&gl)?;
    // same construction past the edges, for the Stein anchors
    let mut outer: [Vec<(f64, f64, f64)>; 2] = [Vec::new(), Vec::new()];
    for (side, sign) in [(0usize, -1.0f64), (1, 1.0)] {
        let (mut a, mut psi_a) = if side == 0 { (grid[0], psi[0]) } else { (grid[n], psi[n]) };
        let l_edge = if side == 0 { log_unnorm[0] } else { log_unnorm[n] };
        for _ in 0..16 * n {
            let b = a + sign * h;
            for (y, w) in gl.mapped(a.min(b), a.max(b)) {
                let psi_y = psi_a + sign * panel_integral(&gl, a.min(y), a.max(y), &rho)?;
                outer[side].push((y, w, psi_y - co.sigma_sq(y)?.ln()));
            }
            psi_a += sign * panel_integral(&gl, a.min(b), a.max(b), &rho)?;
            a = b;
            if psi_a - co.sigma_sq(a)?.ln() < l_edge - 50.0 {
                break;
            }
        }
    }
    let (nodes_b, weights_b, mut log_p_b) = nodes_of(&gl_b)?;

    let lmax = log_p_a.iter().chain(&log_unnorm).fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let mass: NeumaierSum = weights_a.iter().zip(&log_p_a).map(|(w, l)| w * (l - lmax).exp()).collect();
    let log_normalizer = lmax + mass.value().ln();
    log_p_a.iter_mut().for_each(|l| *l -= log_normalizer);
    log_p_b.iter_mut().for_each(|l| *l -= log_normalizer);
    let log_density: Vec<f64> = log_unnorm.iter().map(|l| l - log_normalizer).collect();
    for side in &mut outer {
        side.iter_mut().for_each(|v| v.2 -= log_normalizer);
    }

    // tail mass beyond ±R: ∫_R^∞ p ≤ p(R)/|L'(R)| when L' ≤ L'(R) < 0 on [R, ∞)
    let mut tail = 0.0;
    let mut edge_slopes = [0.0; 2];
    for (side, sign) in [(0usize, -1.0f64), (1, 1.0)] {
        let edge = sign * radius;
        let slope = co.log_p_slope(edge)?;
        edge_slopes[side] = slope;
        let outward = sign * slope;
        if !(outward < 0.0) {
            return Err(Error::TailTooHeavy {
                bound: f64::INFINITY,
                radius,
            });
        }
        for j in 1..=128 {
            let y = sign * radius * (1.0 + 7.0 * j as f64 / 128.0);
            let sy = sign * co.log_p_slope(y)?;
            if sy.is_finite() && sy > outward * (1.0 - 1e-12) {
                return Err(Error::TailTooHeavy {
                    bound: f64::INFINITY,
                    radius,
                });
            }
        }
        let l_edge = if side == 0 { log_density[0] } else { log_density[n] };
        tail += l_edge.exp() / outward.abs();
    }
    if !(tail < TAIL_MASS_MAX) {
        return Err(Error::TailTooHeavy { bound: tail, radius });
    }
    Ok(StationaryDensity1d {
        radius,
        h,
        grid,
        log_density,
        log_normalizer,
        tail_mass_bound: tail,
        nodes_a,
        weights_a,
        log_p_a,
        nodes_b,
        weights_b,
        log_p_b,
        edge_slopes,
        outer,
    })
}

/// Smallest radius in [`RADII`] whose certified tail mass is below
/// [`TAIL_MASS_MAX`], with grid spacing at most `1 / points_per_unit`.
pub fn auto_density<P: Sde + ?Sized>(problem: &P, points_per_unit: usize) -> Result<StationaryDensity1d> {
    let mut last = None;
    for r in RADII {
        let n = (2.0 * r * points_per_unit as f64).ceil() as usize;
        match stationary_density(problem, r, n) {
            Ok(d) => return Ok(d),
            Err(e @ Error::TailTooHeavy { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one radius tried"))
}

/// `π(φ)` with an error estimate from a second, lower-order Gauss rule.
pub fn pi_with_error(density: &StationaryDensity1d, phi: &TestFunction) -> Result<(f64, f64)> {
    if let crate::model::Profile::Constant { value } = phi.profile {
        return Ok((value, 0.0));
    }
    let integrate = |xs: &[f64], ws: &[f64], ls: &[f64]| -> f64 {
        xs.iter()
            .zip(ws)
            .zip(ls)
            .map(|((x, w), l)| w * phi.d1(0, *x) * l.exp())
            .collect::<NeumaierSum>()
            .value()
    };
    let a = integrate(&density.nodes_a, &density.weights_a, &density.log_p_a);
    let b = integrate(&density.nodes_b, &density.weights_b, &density.log_p_b);
    // tail of φ p beyond ±R; requires log|φ| to grow slower than log p decays
    let mut tail = 0.0;
    for (side, sign) in [(0usize, -1.0f64), (1, 1.0)] {
        let edge = sign * density.radius;
        let v = phi.d1(0, edge).abs();
        if v == 0.0 {
            continue;
        }
        let log_slope = sign * phi.d1(1, edge) / phi.d1(0, edge);
        let decay = density.edge_slopes[side].abs();
        if !(log_slope < 0.5 * decay) {
            return Err(Error::GrowthIncompatible {
                detail: format!("|φ| grows at rate {log_slope:.3e} at x = {edge}, density decays at {decay:.3e}"),
            });
        }
        let l_edge = if side == 0 { density.log_density[0] } else { *density.log_density.last().unwrap() };
        tail += 2.0 * v * l_edge.exp() / decay;
    }
    let err = (a - b).abs() + tail + density.tail_mass_bound * a.abs();
    Ok((a, err))
}

/// `π(φ)`; fails unless the error estimate is below [`PI_TOLERANCE`].
pub fn pi_of(density: &StationaryDensity1d, phi: &TestFunction) -> Result<f64> {
    let (v, err) = pi_with_error(density, phi)?;
    if !(err < PI_TOLERANCE) {
        return Err(Error::GrowthIncompatible {
            detail: format!("quadrature error estimate {err:.3e} exceeds {PI_TOLERANCE:e}"),
        });
    }
    Ok(v)
}
