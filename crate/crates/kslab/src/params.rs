//! Model parameters, homogeneous steady states, and the algebraic
//! feasibility checks behind the convergence guarantees.
//!
//! The PDE system couples two competing species `n1, n2` (chemotaxis
//! strengths `chi1, chi2`, logistic rates `mu1, mu2`, competition `a1, a2`),
//! a signal `c` produced at rates `alpha, beta`, and a Stokes fluid forced by
//! `(gamma n1 + delta n2) grad(phi)`.
//!
//! Two regimes carry a Lyapunov-backed convergence guarantee:
//!
//! * coexistence (`a1, a2 in (0,1)`): the target is the positive equilibrium
//!   and feasibility asks for a multiplier `delta1 > 0` with
//!   `Q(delta1) = 4 delta1 - (1+delta1)^2 a1 a2 > 0` and
//!   `chi1^2 N1 / (4 a1 mu1) + delta1 chi2^2 N2 / (4 a2 mu2) < Q / D`,
//!   `D = a1 alpha^2 delta1 + a2 beta^2 - a1 a2 alpha beta (1 + delta1)`;
//! * exclusion (`a1 >= 1 > a2 > 0`): the target is `(0, 1, beta)` and
//!   feasibility asks for `a1' in [1, a1]` and `delta1' > 0` with
//!   `Q' = 4 delta1' - a1' a2 (1+delta1')^2 > 0` and
//!   `mu2 > chi2^2 delta1' D' / (4 a2 Q')`,
//!   `D' = alpha^2 a1' delta1' + beta^2 a2 - alpha beta a1' a2 (1+delta1')`.
//!
//! In both regimes a second weight `delta2` must land in an open window whose
//! endpoints are reported here; the window is nonempty exactly when the
//! strict inequality above holds (`Q > 0` forces `D > 0` by AM-GM, so the
//! quotients are well defined).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How the buoyancy potential `phi` is specified.
#[derive(Debug, Clone, PartialEq)]
pub enum PhiKind {
    /// `phi(x) = g . x` (a uniform gravity vector).
    Linear { g: [f64; 3] },
    /// Cell-centered samples loaded from a snapshot file on the run grid.
    File { path: PathBuf },
}

/// Full parameter set of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Chemotaxis strengths (>= 0).
    pub chi1: f64,
    pub chi2: f64,
    /// Logistic growth rates (> 0).
    pub mu1: f64,
    pub mu2: f64,
    /// Competition coefficients (>= 0).
    pub a1: f64,
    pub a2: f64,
    /// Signal production rates (> 0).
    pub alpha: f64,
    pub beta: f64,
    /// Buoyancy coupling coefficients (> 0).
    pub gamma: f64,
    pub delta: f64,
    /// Spatial dimension (2 or 3) and box extents (first `dim` entries used).
    pub dim: usize,
    pub extents: [f64; 3],
    pub phi: PhiKind,
}

impl ModelParams {
    /// Checks every sign/finiteness constraint the model imposes.
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("chi1", self.chi1),
            ("chi2", self.chi2),
            ("a1", self.a1),
            ("a2", self.a2),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        let positive = [
            ("mu1", self.mu1),
            ("mu2", self.mu2),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::InvalidConfig(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        for a in 0..self.dim {
            let l = self.extents[a];
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidConfig(format!("extent[{a}] must be positive, got {l}")));
            }
        }
        if let PhiKind::Linear { g } = &self.phi {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("phi gravity vector must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Spatially homogeneous equilibrium the solution is driven towards
/// (the fluid target is identically zero).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub n1: f64,
    pub n2: f64,
    pub c: f64,
}

/// Homogeneous steady state for the given competition coefficients:
/// the positive coexistence equilibrium when `a1, a2 < 1`, the exclusion
/// equilibrium `(0, 1, beta)` when `a1 >= 1 > a2`. `a2 >= 1` (where species 1
/// wins or bistability occurs) is not covered.
pub fn steady_state(p: &ModelParams) -> Result<SteadyState> {
    p.validate()?;
    if p.a1 < 1.0 && p.a2 < 1.0 {
        let den = 1.0 - p.a1 * p.a2;
        let n1 = (1.0 - p.a1) / den;
        let n2 = (1.0 - p.a2) / den;
        Ok(SteadyState { n1, n2, c: p.alpha * n1 + p.beta * n2 })
    } else if p.a2 < 1.0 {
        Ok(SteadyState { n1: 0.0, n2: 1.0, c: p.beta })
    } else {
        Err(Error::UnsupportedRegime(format!(
            "a2 = {} >= 1: no stable equilibrium with n2 > 0 is covered",
            p.a2
        )))
    }
}

/// Scan budget for the feasibility searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Logarithmic scan range for the first multiplier.
    pub delta1_min: f64,
    pub delta1_max: f64,
    /// Number of scan points (>= 1).
    pub delta1_points: usize,
    /// Golden-section refinement iterations around the best scan point.
    pub refine_iters: usize,
    /// Linear scan points for `a1'` in `[1, a1]` (exclusion regime).
    pub a1_prime_points: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            delta1_min: 1e-3,
            delta1_max: 10.0,
            delta1_points: 400,
            refine_iters: 60,
            a1_prime_points: 200,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta1_points == 0 {
            return Err(Error::InvalidConfig("delta1_points must be >= 1".into()));
        }
        if !(self.delta1_min.is_finite() && self.delta1_min > 0.0)
            || !(self.delta1_max.is_finite() && self.delta1_max > self.delta1_min)
        {
            return Err(Error::InvalidConfig(format!(
                "need 0 < delta1_min < delta1_max, got [{}, {}]",
                self.delta1_min, self.delta1_max
            )));
        }
        if self.a1_prime_points == 0 {
            return Err(Error::InvalidConfig("a1_prime_points must be >= 1".into()));
        }
        Ok(())
    }

    fn delta1_grid(&self) -> impl Iterator<Item = f64> + '_ {
        let (lo, hi) = (self.delta1_min.ln(), self.delta1_max.ln());
        let n = self.delta1_points;
        (0..n).map(move |i| {
            if n == 1 {
                self.delta1_max
            } else {
                (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()
            }
        })
    }
}

/// Which convergence guarantee applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Coexistence,
    Exclusion,
    /// Parameters fall outside both proved regimes (or the search failed).
    NoGuarantee,
}

/// Outcome of a feasibility search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub feasible: bool,
    /// Coexistence multiplier `delta1` (best point found, even if infeasible).
    pub delta1: Option<f64>,
    /// Exclusion multipliers.
    pub delta1_prime: Option<f64>,
    pub a1_prime: Option<f64>,
    /// Open admissible interval for the signal weight `delta2`.
    pub delta2_window: Option<(f64, f64)>,
    /// Smallest slack among the strict inequalities at the reported
    /// multiplier; positive exactly when feasible.
    pub margin: f64,
    pub target: Option<SteadyState>,
    /// Human-readable reason when no guarantee applies.
    pub note: Option<String>,
}

impl RegimeReport {
    /// Midpoint of the admissible `delta2` window, if any.
    pub fn delta2_mid(&self) -> Option<f64> {
        self.delta2_window.map(|(lo, hi)| 0.5 * (lo + hi))
    }
}

/// Coexistence-regime slack at a given `delta1`; positive iff both strict
/// inequalities hold. `q <= 0` reports `q` itself so the scan can still rank
/// infeasible points.
fn coexistence_margin(p: &ModelParams, n1: f64, n2: f64, d1: f64) -> f64 {
    let s = p.a1 * p.a2;
    let q = 4.0 * d1 - (1.0 + d1) * (1.0 + d1) * s;
    if q <= 0.0 {
        return q;
    }
    let d = p.a1 * p.alpha * p.alpha * d1 + p.a2 * p.beta * p.beta
        - s * p.alpha * p.beta * (1.0 + d1);
    debug_assert!(d > 0.0, "Q > 0 must force D > 0");
    let lhs = p.chi1 * p.chi1 * n1 / (4.0 * p.a1 * p.mu1)
        + d1 * p.chi2 * p.chi2 * n2 / (4.0 * p.a2 * p.mu2);
    q.min(q / d - lhs)
}

/// The open `delta2` window at a feasible coexistence multiplier.
fn coexistence_window(p: &ModelParams, n1: f64, n2: f64, d1: f64) -> (f64, f64) {
    let s = p.a1 * p.a2;
    let q = 4.0 * d1 - (1.0 + d1) * (1.0 + d1) * s;
    let d = p.a1 * p.alpha * p.alpha * d1 + p.a2 * p.beta * p.beta
        - s * p.alpha * p.beta * (1.0 + d1);
    let lo = p.a2 * p.mu2 * p.chi1 * p.chi1 * n1 / 4.0
        + d1 * p.a1 * p.mu1 * p.chi2 * p.chi2 * n2 / 4.0;
    let hi = s * p.mu1 * p.mu2 * q / d;
    (lo, hi)
}

/// Searches for a coexistence-regime certificate.
///
/// Requires `a1, a2 > 0`; values with `a1 a2 >= 1` are accepted and reported
/// as infeasible by construction. The scan maximises the margin over a log
/// grid of `delta1` and refines the best bracket by golden section.
pub fn check_coexistence(p: &ModelParams, search: &SearchConfig) -> Result<RegimeReport> {
    p.validate()?;
    search.validate()?;
    if p.a1 <= 0.0 || p.a2 <= 0.0 {
        return Err(Error::UnsupportedRegime(
            "coexistence feasibility needs a1, a2 > 0".into(),
        ));
    }
    let s = p.a1 * p.a2;
    if s >= 1.0 {
        // Q(delta1) < 0 for every delta1 > 0; report its supremum as margin.
        let margin = if s < 2.0 { 4.0 / s - 4.0 } else { -s };
        return Ok(RegimeReport {
            regime: Regime::NoGuarantee,
            feasible: false,
            delta1: None,
            delta1_prime: None,
            a1_prime: None,
            delta2_window: None,
            margin,
            target: None,
            note: Some(format!("a1*a2 = {s} >= 1: infeasible by construction")),
        });
    }

    let target = steady_state(p)?;
    let (n1, n2) = (target.n1, target.n2);
    let grid: Vec<f64> = search.delta1_grid().collect();
    let margins: Vec<f64> = grid.iter().map(|&d1| coexistence_margin(p, n1, n2, d1)).collect();
    let best = (0..grid.len())
        .max_by(|&a, &b| margins[a].total_cmp(&margins[b]))
        .expect("non-empty scan");

    let lo = if best == 0 { grid[0] } else { grid[best - 1] };
    let hi = if best + 1 == grid.len() { grid[best] } else { grid[best + 1] };
    let (d1, margin) = golden_max(
        |d| coexistence_margin(p, n1, n2, d),
        lo,
        hi,
        search.refine_iters,
    );
    let (d1, margin) = if margins[best] > margin { (grid[best], margins[best]) } else { (d1, margin) };

    let feasible = margin > 0.0;
    Ok(RegimeReport {
        regime: if feasible { Regime::Coexistence } else { Regime::NoGuarantee },
        feasible,
        delta1: Some(d1),
        delta1_prime: None,
        a1_prime: None,
        delta2_window: feasible.then(|| coexistence_window(p, n1, n2, d1)),
        margin,
        target: Some(target),
        note: (!feasible).then(|| "no delta1 with positive margin found in scan range".into()),
    })
}

/// Exclusion-regime slack at `(delta1', a1')`.
fn exclusion_margin(p: &ModelParams, d1: f64, a1p: f64) -> f64 {
    let s = a1p * p.a2;
    let q = 4.0 * d1 - s * (1.0 + d1) * (1.0 + d1);
    if q <= 0.0 {
        return q;
    }
    let d = p.alpha * p.alpha * a1p * d1 + p.beta * p.beta * p.a2
        - p.alpha * p.beta * s * (1.0 + d1);
    debug_assert!(d > 0.0, "Q' > 0 must force D' > 0");
    q.min(p.mu2 - p.chi2 * p.chi2 * d1 * d / (4.0 * p.a2 * q))
}

fn exclusion_window(p: &ModelParams, d1: f64, a1p: f64) -> (f64, f64) {
    let s = a1p * p.a2;
    let q = 4.0 * d1 - s * (1.0 + d1) * (1.0 + d1);
    let d = p.alpha * p.alpha * a1p * d1 + p.beta * p.beta * p.a2
        - p.alpha * p.beta * s * (1.0 + d1);
    let lo = a1p * p.mu1 * p.chi2 * p.chi2 * d1 / (4.0 * p.a2 * p.mu2);
    let hi = a1p * p.mu1 * q / d;
    (lo, hi)
}

/// Searches for an exclusion-regime certificate (`a1 >= 1 > a2 > 0`).
///
/// Scans `a1'` linearly over `[1, a1]` and `delta1'` over the log grid,
/// then refines `delta1'` at the best `a1'` by golden section.
pub fn check_exclusion(p: &ModelParams, search: &SearchConfig) -> Result<RegimeReport> {
    p.validate()?;
    search.validate()?;
    if p.a1 < 1.0 {
        return Err(Error::UnsupportedRegime(format!(
            "exclusion feasibility needs a1 >= 1, got {}",
            p.a1
        )));
    }
    if !(p.a2 > 0.0 && p.a2 < 1.0) {
        return Err(Error::UnsupportedRegime(format!(
            "exclusion feasibility needs a2 in (0, 1), got {}",
            p.a2
        )));
    }

    let na = search.a1_prime_points;
    let a1p_at = |i: usize| {
        if na == 1 {
            1.0
        } else {
            1.0 + (p.a1 - 1.0) * i as f64 / (na - 1) as f64
        }
    };
    let d1_grid: Vec<f64> = search.delta1_grid().collect();

    let mut best = (f64::NEG_INFINITY, d1_grid[0], 1.0);
    for ia in 0..na {
        let a1p = a1p_at(ia);
        for &d1 in &d1_grid {
            let m = exclusion_margin(p, d1, a1p);
            if m > best.0 {
                best = (m, d1, a1p);
            }
        }
    }

    let idx = d1_grid.iter().position(|&d| d == best.1).unwrap_or(0);
    let lo = if idx == 0 { d1_grid[0] } else { d1_grid[idx - 1] };
    let hi = if idx + 1 == d1_grid.len() { d1_grid[idx] } else { d1_grid[idx + 1] };
    let (d1, margin) = golden_max(|d| exclusion_margin(p, d, best.2), lo, hi, search.refine_iters);
    let (d1, margin) = if best.0 > margin { (best.1, best.0) } else { (d1, margin) };
    let a1p = best.2;

    let feasible = margin > 0.0;
    Ok(RegimeReport {
        regime: if feasible { Regime::Exclusion } else { Regime::NoGuarantee },
        feasible,
        delta1: None,
        delta1_prime: Some(d1),
        a1_prime: Some(a1p),
        delta2_window: feasible.then(|| exclusion_window(p, d1, a1p)),
        margin,
        target: Some(SteadyState { n1: 0.0, n2: 1.0, c: p.beta }),
        note: (!feasible).then(|| "no (delta1', a1') with positive margin found in scan range".into()),
    })
}

/// Runs whichever feasibility check matches the competition coefficients,
/// or reports `NoGuarantee` with a reason when neither regime applies.
pub fn check_auto(p: &ModelParams, search: &SearchConfig) -> Result<RegimeReport> {
    p.validate()?;
    if p.a1 > 0.0 && p.a1 < 1.0 && p.a2 > 0.0 && p.a2 < 1.0 {
        check_coexistence(p, search)
    } else if p.a1 >= 1.0 && p.a2 > 0.0 && p.a2 < 1.0 {
        check_exclusion(p, search)
    } else {
        let note = if p.a2 >= 1.0 {
            format!("a2 = {} >= 1 is outside both covered regimes", p.a2)
        } else {
            format!("a1 = {}, a2 = {}: zero competition is outside both covered regimes", p.a1, p.a2)
        };
        Ok(RegimeReport {
            regime: Regime::NoGuarantee,
            feasible: false,
            delta1: None,
            delta1_prime: None,
            a1_prime: None,
            delta2_window: None,
            margin: f64::NEG_INFINITY,
            target: steady_state(p).ok(),
            note: Some(note),
        })
    }
}

/// Output of [`xi0_from_k`]: the chemotaxis-to-growth threshold produced by
/// minimising `l + K l^{-p} chi^{p+1}` over `l > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Xi0 {
    /// Threshold: boundedness is guaranteed for `max(chi1,chi2)/min(mu1,mu2) < xi0`.
    pub xi0: f64,
    /// Argmin `l*` of the objective.
    pub minimizer: f64,
    /// Minimum value, equal to `chi / xi0`.
    pub infimum: f64,
}

/// Closed form of `inf_{l>0} (l + K l^{-p} chi^{p+1})`.
///
/// The infimum is attained at `l* = (p K)^{1/(p+1)} chi` and equals
/// `(1 + 1/p) (p K)^{1/(p+1)} chi`, i.e. it is linear in `chi`; `xi0` is the
/// reciprocal of the slope and does not depend on `chi`.
pub fn xi0_from_k(p: f64, k: f64, chi: f64) -> Result<Xi0> {
    for (name, v, lo) in [("p", p, 1.0), ("K", k, 0.0), ("chi", chi, 0.0)] {
        if !(v.is_finite() && v > lo) {
            return Err(Error::InvalidConfig(format!("xi0_from_k: {name} must be > {lo}, got {v}")));
        }
    }
    let root = (p * k).powf(1.0 / (p + 1.0));
    let slope = (1.0 + 1.0 / p) * root;
    Ok(Xi0 { xi0: 1.0 / slope, minimizer: root * chi, infimum: slope * chi })
}

/// Golden-section maximiser on `[a, b]` (unimodal objective assumed; on
/// plateaus it still returns a point with the maximal sampled value).
fn golden_max(f: impl Fn(f64) -> f64, a: f64, b: f64, iters: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a, b);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}
