//! Run diagnostics: Lyapunov functionals, distances to equilibrium, and the
//! post-run dissipation audit.
//!
//! In the coexistence regime the functional
//!
//! ```text
//! E1 = int(n1 - N1 - N1 log(n1/N1))
//!    + delta1 (a1 mu1 / (a2 mu2)) int(n2 - N2 - N2 log(n2/N2))
//!    + (delta2/2) int((c - C*)^2)
//! ```
//!
//! decays along solutions, with decay rate proportional to the squared L2
//! distances from the target; the exclusion-regime variant replaces the
//! first entropy by `int n1` and targets `(0, 1, beta)`. Both are evaluated
//! with the per-cell entropy clamped at zero: the expression
//! `s - S - S log(s/S)` is nonnegative analytically, and the clamp keeps
//! rounding from producing -1e-18-style negatives near equilibrium.

use serde::Serialize;

use crate::grid::{ScalarField, VectorField};
use crate::params::{ModelParams, SteadyState};
use crate::{Error, Result};

/// Relative entropy density `s - target - target * log(s / target)`,
/// clamped into its analytic range `[0, inf)`.
#[inline]
fn entropy_term(s: f64, target: f64) -> f64 {
    (s - target - target * (s / target).ln()).max(0.0)
}

// The negated comparison is load-bearing: `!(x > 0)` also rejects NaN.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn require_positive(f: &ScalarField, what: &str) -> Result<()> {
    let g = *f.grid();
    let (nx, ny) = (g.cells(0), g.cells(1));
    let d = f.raw();
    for k in g.krange() {
        for j in 1..=ny {
            let base = g.sidx(1, j, k);
            for i in 0..nx {
                if !(d[base + i] > 0.0) {
                    return Err(Error::Domain(format!(
                        "{what} must be strictly positive for the entropy; \
                         cell ({}, {}, {}) holds {}",
                        i,
                        j - 1,
                        k - g.gz(),
                        d[base + i]
                    )));
                }
            }
        }
    }
    Ok(())
}

fn weighted_entropy_integral(f: &ScalarField, target: f64) -> f64 {
    f.fold_interior(0.0, |acc, v| acc + entropy_term(v, target)) * f.grid().cell_volume()
}

fn quadratic_integral(f: &ScalarField, target: f64) -> f64 {
    f.fold_interior(0.0, |acc, v| acc + (v - target) * (v - target)) * f.grid().cell_volume()
}

/// Coexistence-regime Lyapunov functional. Requires `a1, a2 in (0, 1)` (so
/// the positive equilibrium exists) and strictly positive species fields.
pub fn lyapunov_e1(
    n1: &ScalarField,
    n2: &ScalarField,
    c: &ScalarField,
    p: &ModelParams,
    delta1: f64,
    delta2: f64,
) -> Result<f64> {
    if !(p.a1 < 1.0 && p.a2 < 1.0 && p.a1 > 0.0 && p.a2 > 0.0) {
        return Err(Error::UnsupportedRegime(format!(
            "coexistence functional needs a1, a2 in (0,1), got ({}, {})",
            p.a1, p.a2
        )));
    }
    if !(delta1 > 0.0 && delta2 > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lyapunov weights must be positive, got delta1 = {delta1}, delta2 = {delta2}"
        )));
    }
    let target = crate::params::steady_state(p)?;
    require_positive(n1, "n1")?;
    require_positive(n2, "n2")?;
    let w2 = delta1 * p.a1 * p.mu1 / (p.a2 * p.mu2);
    Ok(weighted_entropy_integral(n1, target.n1)
        + w2 * weighted_entropy_integral(n2, target.n2)
        + 0.5 * delta2 * quadratic_integral(c, target.c))
}

/// Exclusion-regime Lyapunov functional targeting `(0, 1, beta)`. `n1` may
/// touch zero (its term is plain mass); `n2` must stay strictly positive.
pub fn lyapunov_e2(
    n1: &ScalarField,
    n2: &ScalarField,
    c: &ScalarField,
    p: &ModelParams,
    delta1_prime: f64,
    a1_prime: f64,
    delta2_prime: f64,
) -> Result<f64> {
    if !(p.a2 > 0.0 && p.a2 < 1.0) {
        return Err(Error::UnsupportedRegime(format!(
            "exclusion functional needs a2 in (0,1), got {}",
            p.a2
        )));
    }
    if !(delta1_prime > 0.0 && delta2_prime > 0.0 && a1_prime >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "need delta1' > 0, delta2' > 0, a1' >= 1; got ({delta1_prime}, {delta2_prime}, {a1_prime})"
        )));
    }
    if n1.min_interior() < 0.0 {
        return Err(Error::Domain("n1 must be nonnegative".into()));
    }
    require_positive(n2, "n2")?;
    let w2 = delta1_prime * a1_prime * p.mu1 / (p.a2 * p.mu2);
    Ok(crate::grid::integrate(n1)
        + w2 * weighted_entropy_integral(n2, 1.0)
        + 0.5 * delta2_prime * quadratic_integral(c, p.beta))
}

/// Sup-distances of a state from the target equilibrium (fluid target 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Distances {
    pub n1: f64,
    pub n2: f64,
    pub c: f64,
    pub u: f64,
}

impl Distances {
    pub fn max_scalar(&self) -> f64 {
        self.n1.max(self.n2).max(self.c)
    }
}

pub fn distances(
    n1: &ScalarField,
    n2: &ScalarField,
    c: &ScalarField,
    u: &VectorField,
    target: &SteadyState,
) -> Distances {
    let sup = |f: &ScalarField, t: f64| f.fold_interior(0.0f64, |m, v| m.max((v - t).abs()));
    Distances {
        n1: sup(n1, target.n1),
        n2: sup(n2, target.n2),
        c: sup(c, target.c),
        u: u.linf(),
    }
}

/// Sum of squared L2 distances of the scalar fields from the target; the
/// quantity the Lyapunov decay rate is measured against.
pub fn l2_distance_sq(
    n1: &ScalarField,
    n2: &ScalarField,
    c: &ScalarField,
    target: &SteadyState,
) -> f64 {
    quadratic_integral(n1, target.n1)
        + quadratic_integral(n2, target.n2)
        + quadratic_integral(c, target.c)
}

/// Monitored norms of the signal and its gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignalNorms {
    /// `||c||_q`.
    pub lq_c: f64,
    /// `||grad c||_q` of the cell-averaged gradient magnitude.
    pub lq_grad_c: f64,
    /// `||grad c||_2` of the same magnitude field.
    pub l2_grad_c: f64,
}

/// Computes `||c||_q` and gradient norms. The gradient magnitude is formed
/// per cell from the average of the two adjacent face differences along each
/// axis, so boundary cells see the homogeneous Neumann value (zero) on their
/// wall side.
pub fn signal_norms(c: &ScalarField, q: f64) -> SignalNorms {
    assert!(q >= 1.0, "Lq norm needs q >= 1, got {q}");
    let g = *c.grid();
    let gc = crate::operators::grad_faces(c);
    let mut mag = ScalarField::zeros(&g);
    let (nx, ny) = (g.cells(0), g.cells(1));
    let nz = if g.dim() == 3 { g.cells(2) } else { 1 };
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let gx = 0.5 * (gc.ux(i, j, k) + gc.ux(i + 1, j, k));
                let gy = 0.5 * (gc.uy(i, j, k) + gc.uy(i, j + 1, k));
                let mut s = gx * gx + gy * gy;
                if g.dim() == 3 {
                    let gz = 0.5 * (gc.uz(i, j, k) + gc.uz(i, j, k + 1));
                    s += gz * gz;
                }
                mag.set(i, j, k, s.sqrt());
            }
        }
    }
    let kind = crate::grid::NormKind::Lq(q);
    SignalNorms {
        lq_c: crate::grid::norm(c, kind),
        lq_grad_c: crate::grid::norm(&mag, kind),
        l2_grad_c: crate::grid::norm(&mag, crate::grid::NormKind::L2),
    }
}

/// One sampled point of the energy history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySample {
    pub t: f64,
    /// Lyapunov value at `t`.
    pub e: f64,
    /// Squared L2 distance sum at `t`.
    pub dist_sq: f64,
}

/// Outcome of [`dissipation_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipationReport {
    /// Sample indices `k` where `E(t_{k+1})` exceeded the tolerated value.
    pub violations: Vec<usize>,
    /// Largest observed increase beyond tolerance (0 when clean).
    pub max_excess: f64,
    /// Fitted decay coefficient in `dE/dt ~= -eps * dist_sq` (least squares
    /// through the origin); `None` when the distances are all zero.
    pub eps_hat: Option<f64>,
}

pub const DISSIPATION_TOL_ABS: f64 = 1e-10;
pub const DISSIPATION_TOL_REL: f64 = 1e-8;

/// Audits an energy history for monotone decay and fits the decay rate.
pub fn dissipation_check(samples: &[EnergySample]) -> DissipationReport {
    dissipation_check_with(samples, DISSIPATION_TOL_ABS, DISSIPATION_TOL_REL)
}

pub fn dissipation_check_with(
    samples: &[EnergySample],
    tol_abs: f64,
    tol_rel: f64,
) -> DissipationReport {
    let mut violations = Vec::new();
    let mut max_excess = 0.0f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, pair) in samples.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        let excess = b.e - a.e - (tol_abs + tol_rel * a.e.abs());
        if excess > 0.0 {
            violations.push(k);
            max_excess = max_excess.max(excess);
        }
        let dt = b.t - a.t;
        if dt > 0.0 {
            let x = 0.5 * (a.dist_sq + b.dist_sq);
            let y = -(b.e - a.e) / dt;
            sxy += x * y;
            sxx += x * x;
        }
    }
    DissipationReport {
        violations,
        max_excess,
        eps_hat: (sxx > 0.0).then(|| sxy / sxx),
    }
}

/// One row of the run diagnostics stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass_n1: f64,
    pub mass_n2: f64,
    pub mass_c: f64,
    pub linf_n1: f64,
    pub linf_n2: f64,
    pub linf_c: f64,
    /// `||c||_q` for the configured q (default 4).
    pub lq_c: f64,
    /// `||grad c||_q` for the same q.
    pub lq_grad_c: f64,
    /// `||grad c||_2`.
    pub l2_grad_c: f64,
    pub linf_u: f64,
    /// `max |div u|` at this sample.
    pub div_u_max: f64,
    /// Sup-distances to the run target, when one exists.
    pub dist_n1: Option<f64>,
    pub dist_n2: Option<f64>,
    pub dist_c: Option<f64>,
    pub l2_dist_sq: Option<f64>,
    /// Lyapunov value, when the regime provides one and the state is in its
    /// domain.
    pub energy: Option<f64>,
    /// Total mass removed by positivity clipping since the run started.
    pub clipped_mass: f64,
}

impl DiagnosticsRecord {
    pub const CSV_HEADER: &'static str = "t,mass_n1,mass_n2,mass_c,linf_n1,linf_n2,linf_c,\
         lq_c,lq_grad_c,l2_grad_c,linf_u,div_u_max,dist_n1,dist_n2,dist_c,l2_dist_sq,\
         energy,clipped_mass";

    /// Serialises with 17 significant digits so values round-trip exactly;
    /// absent optionals become empty cells.
    pub fn to_csv_row(&self) -> String {
        fn num(v: f64) -> String {
            format!("{v:.16e}")
        }
        fn opt(v: Option<f64>) -> String {
            v.map(num).unwrap_or_default()
        }
        [
            num(self.t),
            num(self.mass_n1),
            num(self.mass_n2),
            num(self.mass_c),
            num(self.linf_n1),
            num(self.linf_n2),
            num(self.linf_c),
            num(self.lq_c),
            num(self.lq_grad_c),
            num(self.l2_grad_c),
            num(self.linf_u),
            num(self.div_u_max),
            opt(self.dist_n1),
            opt(self.dist_n2),
            opt(self.dist_c),
            opt(self.l2_dist_sq),
            opt(self.energy),
            num(self.clipped_mass),
        ]
        .join(",")
    }
}
