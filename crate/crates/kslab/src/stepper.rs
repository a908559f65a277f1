//! Time integration of the coupled system and whole-run orchestration.
//!
//! One step is a simple split: first every scalar advances by explicit Euler
//! with all its terms evaluated on the old state,
//!
//! ```text
//! n1' = -div(u n1) - div(chi1 n1 grad c) + lap n1 + mu1 n1 (1 - n1 - a1 n2)
//! n2' = -div(u n2) - div(chi2 n2 grad c) + lap n2 + mu2 n2 (1 - a2 n1 - n2)
//! c'  = -div(u c)                        + lap c  + alpha n1 + beta n2 - c
//! ```
//!
//! then the fluid takes one viscous + projection step forced by buoyancy from
//! the *updated* densities. The split preserves constant steady states
//! exactly: every transport term vanishes on constants and the reaction
//! algebra evaluates to literal zero there, so the state is a discrete fixed
//! point (up to the projection's ~1e-13 residual forcing).
//!
//! Step size control multiplies the tightest of four explicit-stability
//! bounds (diffusion, advection, chemotactic drift, reaction rate) by a
//! safety factor. Undershoots of positivity are clipped to zero and the
//! removed mass is reported; persistent clipping marks a scheme violation
//! and fails the property tests.

use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{InitKind, PerturbKind, RunConfig, TargetChoice};
use crate::diagnostics::{
    dissipation_check, distances, l2_distance_sq, lyapunov_e1, lyapunov_e2, signal_norms,
    DiagnosticsRecord, DissipationReport, Distances, EnergySample,
};
use crate::grid::{apply_neumann, integrate, Grid, ScalarField, VectorField};
use crate::operators::{advect_into, chemotaxis_div_into, grad_faces_into, laplacian_into};
use crate::params::{steady_state, ModelParams, PhiKind, Regime, RegimeReport, SteadyState};
use crate::stokes::{buoyancy_into, make_div_free, stokes_step_into, StokesWorkspace};
use crate::{Error, Result};

/// The full simulation state at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub n1: ScalarField,
    pub n2: ScalarField,
    pub c: ScalarField,
    pub u: VectorField,
    /// Pressure from the most recent projection (zero-mean gauge).
    pub p: ScalarField,
}

impl State {
    pub fn constant(grid: &Grid, n1: f64, n2: f64, c: f64) -> State {
        State {
            t: 0.0,
            n1: ScalarField::constant(grid, n1),
            n2: ScalarField::constant(grid, n2),
            c: ScalarField::constant(grid, c),
            u: VectorField::zeros(grid),
            p: ScalarField::zeros(grid),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.n1.is_finite()
            && self.n2.is_finite()
            && self.c.is_finite()
            && self.u.is_finite()
    }
}

/// Logistic competition rate for species 1. Shared by the stepper and the
/// manufactured-solution sources so that constant exact solutions cancel
/// bitwise.
#[inline(always)]
pub(crate) fn reaction_n1(p: &ModelParams, n1: f64, n2: f64) -> f64 {
    p.mu1 * n1 * (1.0 - n1 - p.a1 * n2)
}

#[inline(always)]
pub(crate) fn reaction_n2(p: &ModelParams, n1: f64, n2: f64) -> f64 {
    p.mu2 * n2 * (1.0 - p.a2 * n1 - n2)
}

/// Signal kinetics. Written so that the stored steady state
/// `C* = alpha N1 + beta N2` gives literal zero.
#[inline(always)]
pub(crate) fn reaction_c(p: &ModelParams, n1: f64, n2: f64, c: f64) -> f64 {
    p.alpha * n1 + p.beta * n2 - c
}

/// Scratch buffers and solvers reused across steps on one grid.
pub struct Workspace {
    grid: Grid,
    /// Face-centered `grad phi` the buoyancy force multiplies.
    phi_grad: VectorField,
    stokes: StokesWorkspace,
    grad_c: VectorField,
    adv: ScalarField,
    chem: ScalarField,
    lap: ScalarField,
    n1_new: ScalarField,
    n2_new: ScalarField,
    c_new: ScalarField,
    force: VectorField,
    u_new: VectorField,
}

impl Workspace {
    pub fn new(grid: &Grid, p: &ModelParams) -> Result<Workspace> {
        let phi_grad = match &p.phi {
            // For a linear potential the gradient is constant on interior
            // faces; wall faces stay zero (buoyancy never reads them, and a
            // no-slip wall carries no normal momentum anyway).
            PhiKind::Linear { g } => {
                let mut pg = VectorField::zeros(grid);
                for (axis, &ga) in g.iter().enumerate().take(grid.dim()) {
                    if ga != 0.0 {
                        let unit = unit_faces(grid, axis);
                        for (d, s) in pg.raw_mut(axis).iter_mut().zip(unit.raw(axis)) {
                            *d = ga * s;
                        }
                    }
                }
                pg
            }
            PhiKind::File { path } => {
                let (phi, _) = crate::snapshot::read_scalar(path)?;
                if phi.grid() != grid {
                    return Err(Error::GridMismatch(format!(
                        "potential snapshot {} is on a different grid",
                        path.display()
                    )));
                }
                crate::operators::grad_faces(&phi)
            }
        };
        Ok(Workspace {
            grid: *grid,
            phi_grad,
            stokes: StokesWorkspace::new(grid),
            grad_c: VectorField::zeros(grid),
            adv: ScalarField::zeros(grid),
            chem: ScalarField::zeros(grid),
            lap: ScalarField::zeros(grid),
            n1_new: ScalarField::zeros(grid),
            n2_new: ScalarField::zeros(grid),
            c_new: ScalarField::zeros(grid),
            force: VectorField::zeros(grid),
            u_new: VectorField::zeros(grid),
        })
    }
}

/// A vector field that is 1 on the interior faces of `axis` and 0 elsewhere.
fn unit_faces(grid: &Grid, axis: usize) -> VectorField {
    let mut v = VectorField::zeros(grid);
    let (nx, ny) = (grid.cells(0), grid.cells(1));
    let nz = if grid.dim() == 3 { grid.cells(2) } else { 1 };
    for k in 0..nz {
        match axis {
            0 => {
                for j in 0..ny {
                    for fi in 1..nx {
                        v.set_ux(fi, j, k, 1.0);
                    }
                }
            }
            1 => {
                for fj in 1..ny {
                    for i in 0..nx {
                        v.set_uy(i, fj, k, 1.0);
                    }
                }
            }
            _ => {
                if k >= 1 && k < nz {
                    for j in 0..ny {
                        for i in 0..nx {
                            v.set_uz(i, j, k, 1.0);
                        }
                    }
                }
            }
        }
    }
    v
}

/// Builds the initial state from the config: background constants (explicit
/// or the regime target), an optional seeded perturbation with exact sup
/// amplitude, or a reloaded snapshot (projected back to the divergence-free
/// space for safety).
pub fn init_state(cfg: &RunConfig) -> Result<State> {
    let p = cfg.model_params()?;
    let grid = cfg.grid()?;
    let init = &cfg.init;

    if init.kind == InitKind::Snapshot {
        let stem_path = init.snapshot.as_ref().expect("validated");
        let dir = stem_path.parent().unwrap_or_else(|| std::path::Path::new("."));
        let stem = stem_path
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidConfig(format!("bad snapshot stem {stem_path:?}")))?;
        let (_, n1, n2, c, mut u) = crate::snapshot::read_state(dir, stem)?;
        if n1.grid() != &grid {
            return Err(Error::GridMismatch(format!(
                "snapshot {} is on a different grid than [domain]",
                stem_path.display()
            )));
        }
        for (name, f) in [("n1", &n1), ("n2", &n2), ("c", &c)] {
            if f.min_interior() < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "snapshot field {name} has negative values"
                )));
            }
        }
        let mut ws = StokesWorkspace::new(&grid);
        let mut pr = ScalarField::zeros(&grid);
        make_div_free(&mut u, &mut ws, &mut pr);
        return Ok(State { t: 0.0, n1, n2, c, u, p: pr });
    }

    let (bg1, bg2, bgc) = match init.kind {
        InitKind::Steady => {
            let s = steady_state(&p)?;
            (s.n1, s.n2, s.c)
        }
        InitKind::Constant => (
            init.n1.expect("validated"),
            init.n2.expect("validated"),
            init.c.expect("validated"),
        ),
        InitKind::Snapshot => unreachable!(),
    };

    let amp = init.amplitude;
    if amp > 0.0 {
        for (name, bg) in [("n1", bg1), ("n2", bg2), ("c", bgc)] {
            if amp >= bg {
                return Err(Error::InvalidConfig(format!(
                    "init.amplitude = {amp} must be smaller than every background \
                     ({name} = {bg}) to keep the initial data positive"
                )));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
    let mut build = |bg: f64| -> ScalarField {
        if amp == 0.0 {
            return ScalarField::constant(&grid, bg);
        }
        match init.perturb {
            PerturbKind::Modes => {
                let pert = random_mode_blend(&grid, &mut rng);
                let peak = pert.fold_interior(0.0f64, |m, v| m.max(v.abs()));
                let scale = amp / peak;
                let mut f = pert;
                f.map_interior(|v| bg + scale * v);
                apply_neumann(&mut f);
                f
            }
            PerturbKind::Cells => {
                let mut f = ScalarField::zeros(&grid);
                let (nx, ny) = (grid.cells(0), grid.cells(1));
                let nz = if grid.dim() == 3 { grid.cells(2) } else { 1 };
                for k in 0..nz {
                    for j in 0..ny {
                        for i in 0..nx {
                            let r: f64 = rng.gen_range(-1.0..=1.0);
                            f.set(i, j, k, bg + amp * r);
                        }
                    }
                }
                apply_neumann(&mut f);
                f
            }
        }
    };

    let n1 = build(bg1);
    let n2 = build(bg2);
    let c = build(bgc);
    Ok(State { t: 0.0, n1, n2, c, u: VectorField::zeros(&grid), p: ScalarField::zeros(&grid) })
}

/// A random blend of a few low cosine modes (Neumann-compatible, smooth),
/// with nonzero peak by construction.
fn random_mode_blend(grid: &Grid, rng: &mut ChaCha8Rng) -> ScalarField {
    const MODES: usize = 4;
    loop {
        let mut modes = [(0usize, 0usize, 0usize, 0.0f64); MODES];
        for m in &mut modes {
            let kx = rng.gen_range(0..=3usize);
            let ky = rng.gen_range(0..=3usize);
            let kz = if grid.dim() == 3 { rng.gen_range(0..=3usize) } else { 0 };
            let w: f64 = rng.gen_range(-1.0..=1.0);
            *m = (kx, ky, kz, w);
        }
        let (lx, ly, lz) = (grid.extent(0), grid.extent(1), grid.extent(2));
        let f = ScalarField::from_fn(grid, |x, y, z| {
            modes
                .iter()
                .map(|&(kx, ky, kz, w)| {
                    w * (kx as f64 * std::f64::consts::PI * x / lx).cos()
                        * (ky as f64 * std::f64::consts::PI * y / ly).cos()
                        * (kz as f64 * std::f64::consts::PI * z / lz).cos()
                })
                .sum()
        });
        if f.fold_interior(0.0f64, |m, v| m.max(v.abs())) > 1e-12 {
            return f;
        }
    }
}

pub const DEFAULT_SAFETY: f64 = 0.4;

/// The four explicit-stability bounds, before the safety factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtBounds {
    pub diffusive: f64,
    pub advective: f64,
    pub chemotactic: f64,
    pub reactive: f64,
}

impl DtBounds {
    pub fn min(&self) -> f64 {
        self.diffusive.min(self.advective).min(self.chemotactic).min(self.reactive)
    }
}

/// Computes the stability bounds for the current state.
pub fn dt_bounds(state: &State, p: &ModelParams) -> DtBounds {
    let mut scratch = VectorField::zeros(state.c.grid());
    dt_bounds_with_scratch(state, p, &mut scratch)
}

/// [`dt_bounds`] with a caller-owned gradient buffer so the run loop does
/// not allocate one per step.
pub(crate) fn dt_bounds_with_scratch(
    state: &State,
    p: &ModelParams,
    grad_scratch: &mut VectorField,
) -> DtBounds {
    let g = state.n1.grid();
    let h = g.min_spacing();
    let diffusive = h * h / (2.0 * g.dim() as f64);

    let u_max = state.u.linf();
    let advective = if u_max > 0.0 { h / u_max } else { f64::INFINITY };

    let chi = p.chi1.max(p.chi2);
    grad_faces_into(&state.c, grad_scratch);
    let gc_max = grad_scratch.linf();
    let drift = chi * gc_max;
    let chemotactic = if drift > 0.0 { h / drift } else { f64::INFINITY };

    let n_max = state
        .n1
        .fold_interior(0.0f64, |m, v| m.max(v.abs()))
        .max(state.n2.fold_interior(0.0f64, |m, v| m.max(v.abs())));
    let r1 = p.mu1 * (1.0 + (1.0 + p.a1) * n_max);
    let r2 = p.mu2 * (1.0 + (1.0 + p.a2) * n_max);
    let reactive = 1.0 / r1.max(r2).max(1.0);

    DtBounds { diffusive, advective, chemotactic, reactive }
}

/// Safety-scaled stable step (default factor 0.4).
pub fn stable_dt(state: &State, p: &ModelParams) -> f64 {
    stable_dt_with(state, p, DEFAULT_SAFETY)
}

pub fn stable_dt_with(state: &State, p: &ModelParams, safety: f64) -> f64 {
    safety * dt_bounds(state, p).min()
}

/// What one step reports back.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    /// Mass removed from each scalar by positivity clipping.
    pub clipped_n1: f64,
    pub clipped_n2: f64,
    pub clipped_c: f64,
    /// `max |div u|` after the projection.
    pub div_residual: f64,
    pub u_linf: f64,
}

/// Advances the state by `dt`.
///
/// `dt` must respect the stability bounds of [`dt_bounds`]; [`run`] passes
/// [`stable_dt`]. The viscous bound (identical to the scalar diffusive one)
/// is enforced hard by the fluid step; violating the state-dependent bounds
/// with a fixed `dt` surfaces as clipping or a blow-up error rather than a
/// silent wrong answer.
pub fn step(
    state: &mut State,
    p: &ModelParams,
    dt: f64,
    ws: &mut Workspace,
) -> Result<StepStats> {
    debug_assert_eq!(state.n1.grid(), &ws.grid);
    let g = ws.grid;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidConfig(format!("step needs finite dt > 0, got {dt}")));
    }

    grad_faces_into(&state.c, &mut ws.grad_c);

    let mut stats = StepStats::default();

    // Species 1.
    advect_into(&state.u, &state.n1, &mut ws.adv);
    chemotaxis_div_into(&state.n1, &ws.grad_c, p.chi1, &mut ws.chem);
    laplacian_into(&state.n1, &mut ws.lap);
    stats.clipped_n1 = combine_species(
        &g,
        dt,
        &state.n1,
        &ws.adv,
        &ws.chem,
        &ws.lap,
        &mut ws.n1_new,
        |v1, v2| reaction_n1(p, v1, v2),
        &state.n2,
    );

    // Species 2.
    advect_into(&state.u, &state.n2, &mut ws.adv);
    chemotaxis_div_into(&state.n2, &ws.grad_c, p.chi2, &mut ws.chem);
    laplacian_into(&state.n2, &mut ws.lap);
    stats.clipped_n2 = combine_species(
        &g,
        dt,
        &state.n2,
        &ws.adv,
        &ws.chem,
        &ws.lap,
        &mut ws.n2_new,
        |v2, v1| reaction_n2(p, v1, v2),
        &state.n1,
    );

    // Signal: no chemotaxis term; kinetics use the old densities.
    advect_into(&state.u, &state.c, &mut ws.adv);
    laplacian_into(&state.c, &mut ws.lap);
    stats.clipped_c = combine_signal(
        &g,
        dt,
        &state.c,
        &ws.adv,
        &ws.lap,
        &state.n1,
        &state.n2,
        p,
        &mut ws.c_new,
    );

    std::mem::swap(&mut state.n1, &mut ws.n1_new);
    std::mem::swap(&mut state.n2, &mut ws.n2_new);
    std::mem::swap(&mut state.c, &mut ws.c_new);
    apply_neumann(&mut state.n1);
    apply_neumann(&mut state.n2);
    apply_neumann(&mut state.c);

    if !(state.n1.is_finite() && state.n2.is_finite() && state.c.is_finite()) {
        return Err(blow_up(state, dt));
    }

    // Fluid, forced by buoyancy from the updated densities.
    buoyancy_into(&state.n1, &state.n2, p.gamma, p.delta, &ws.phi_grad, &mut ws.force);
    let outcome = stokes_step_into(&state.u, &ws.force, dt, &mut ws.stokes, &mut ws.u_new, &mut state.p)?;
    std::mem::swap(&mut state.u, &mut ws.u_new);
    if !state.u.is_finite() {
        return Err(blow_up(state, dt));
    }
    stats.div_residual = outcome.div_residual;
    stats.u_linf = outcome.u_linf;

    state.t += dt;
    Ok(stats)
}

fn blow_up(state: &State, dt: f64) -> Error {
    let sup = |f: &ScalarField| f.fold_interior(0.0f64, |m, v| m.max(v.abs()));
    Error::BlowUp {
        t: state.t + dt,
        what: format!(
            "non-finite state; sup |n1| = {}, |n2| = {}, |c| = {}, |u| = {}",
            sup(&state.n1),
            sup(&state.n2),
            sup(&state.c),
            state.u.linf()
        ),
    }
}

/// `out = f + dt * (((adv + chem) + lap) + reaction(f, other))`, clipping
/// negatives to zero. Returns the clipped mass.
#[allow(clippy::too_many_arguments)]
fn combine_species(
    g: &Grid,
    dt: f64,
    f: &ScalarField,
    adv: &ScalarField,
    chem: &ScalarField,
    lap: &ScalarField,
    out: &mut ScalarField,
    reaction: impl Fn(f64, f64) -> f64,
    other: &ScalarField,
) -> f64 {
    let (nx, ny) = (g.cells(0), g.cells(1));
    let (fd, ad, cd, ld, od, xd) =
        (f.raw(), adv.raw(), chem.raw(), lap.raw(), out.raw_mut(), other.raw());
    let mut clipped = 0.0;
    for k in g.krange() {
        for j in 1..=ny {
            let r = g.sidx(1, j, k);
            for q in 0..nx {
                let i = r + q;
                let rhs = ((ad[i] + cd[i]) + ld[i]) + reaction(fd[i], xd[i]);
                let v = fd[i] + dt * rhs;
                if v < 0.0 {
                    clipped -= v;
                    od[i] = 0.0;
                } else {
                    od[i] = v;
                }
            }
        }
    }
    clipped * g.cell_volume()
}

#[allow(clippy::too_many_arguments)]
fn combine_signal(
    g: &Grid,
    dt: f64,
    c: &ScalarField,
    adv: &ScalarField,
    lap: &ScalarField,
    n1: &ScalarField,
    n2: &ScalarField,
    p: &ModelParams,
    out: &mut ScalarField,
) -> f64 {
    let (nx, ny) = (g.cells(0), g.cells(1));
    let (cd, ad, ld, d1, d2, od) =
        (c.raw(), adv.raw(), lap.raw(), n1.raw(), n2.raw(), out.raw_mut());
    let mut clipped = 0.0;
    for k in g.krange() {
        for j in 1..=ny {
            let r = g.sidx(1, j, k);
            for q in 0..nx {
                let i = r + q;
                let rhs = (ad[i] + ld[i]) + reaction_c(p, d1[i], d2[i], cd[i]);
                let v = cd[i] + dt * rhs;
                if v < 0.0 {
                    clipped -= v;
                    od[i] = 0.0;
                } else {
                    od[i] = v;
                }
            }
        }
    }
    clipped * g.cell_volume()
}

/// Which Lyapunov functional a run monitors.
#[derive(Debug, Clone, Copy, PartialEq)]
enum EnergyKind {
    E1 { delta1: f64, delta2: f64 },
    E2 { delta1p: f64, a1p: f64, delta2p: f64 },
    None,
}

/// Everything a finished run reports.
#[derive(Debug)]
pub struct RunSummary {
    pub report: RegimeReport,
    pub target: Option<SteadyState>,
    pub t_final: f64,
    pub steps: u64,
    pub converged: bool,
    pub final_distances: Option<Distances>,
    /// Largest `max |div u| / max(1, ||u||_inf)` seen at any step.
    pub max_div_rel: f64,
    pub clipped_n1: f64,
    pub clipped_n2: f64,
    pub clipped_c: f64,
    pub dissipation: Option<DissipationReport>,
    pub records: Vec<DiagnosticsRecord>,
    pub csv_path: PathBuf,
    pub snapshot_stem: Option<PathBuf>,
    pub wall_secs: f64,
    pub final_state: State,
}

/// Runs a config to `t_end`, convergence, or error; streams diagnostics to
/// CSV and returns the full summary.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let started = Instant::now();
    let p = cfg.model_params()?;
    let report = crate::params::check_auto(&p, &cfg.search)?;

    let target = match cfg.convergence.target {
        TargetChoice::Auto => report.target,
        TargetChoice::None => None,
    };
    let energy_kind = match (report.regime, report.feasible) {
        (Regime::Coexistence, true) => {
            let (lo, hi) = report.delta2_window.expect("feasible coexistence has a window");
            EnergyKind::E1 {
                delta1: report.delta1.expect("feasible coexistence has delta1"),
                delta2: 0.5 * (lo + hi),
            }
        }
        (Regime::Exclusion, true) => {
            let (lo, hi) = report.delta2_window.expect("feasible exclusion has a window");
            EnergyKind::E2 {
                delta1p: report.delta1_prime.expect("feasible exclusion has delta1'"),
                a1p: report.a1_prime.expect("feasible exclusion has a1'"),
                delta2p: 0.5 * (lo + hi),
            }
        }
        _ => EnergyKind::None,
    };

    let mut state = init_state(cfg)?;
    let mut ws = Workspace::new(state.n1.grid(), &p)?;

    std::fs::create_dir_all(&cfg.output.dir)
        .map_err(|e| Error::io(&cfg.output.dir, e))?;
    let csv_path = cfg.output.dir.join(format!("{}.csv", cfg.output.stem));
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut csv = std::io::BufWriter::new(file);
    writeln!(csv, "{}", DiagnosticsRecord::CSV_HEADER).map_err(|e| Error::io(&csv_path, e))?;

    let mut records: Vec<DiagnosticsRecord> = Vec::new();
    let mut energy_samples: Vec<EnergySample> = Vec::new();
    let mut clipped = [0.0f64; 3];
    let mut max_div_rel = 0.0f64;
    let mut in_tolerance_streak = 0usize;
    let mut steps = 0u64;

    let sample = |state: &State,
                      records: &mut Vec<DiagnosticsRecord>,
                      energy_samples: &mut Vec<EnergySample>,
                      csv: &mut std::io::BufWriter<std::fs::File>,
                      clipped: &[f64; 3],
                      streak: &mut usize|
     -> Result<bool> {
        let norms = signal_norms(&state.c, cfg.output.q);
        let (dist, dsq) = match &target {
            Some(tg) => {
                let d = distances(&state.n1, &state.n2, &state.c, &state.u, tg);
                let s = l2_distance_sq(&state.n1, &state.n2, &state.c, tg);
                (Some(d), Some(s))
            }
            None => (None, None),
        };
        let energy = match energy_kind {
            EnergyKind::E1 { delta1, delta2 } => {
                lyapunov_e1(&state.n1, &state.n2, &state.c, &p, delta1, delta2).ok()
            }
            EnergyKind::E2 { delta1p, a1p, delta2p } => {
                lyapunov_e2(&state.n1, &state.n2, &state.c, &p, delta1p, a1p, delta2p).ok()
            }
            EnergyKind::None => None,
        };
        if let (Some(e), Some(s)) = (energy, dsq) {
            energy_samples.push(EnergySample { t: state.t, e, dist_sq: s });
        }
        let rec = DiagnosticsRecord {
            t: state.t,
            mass_n1: integrate(&state.n1),
            mass_n2: integrate(&state.n2),
            mass_c: integrate(&state.c),
            linf_n1: state.n1.fold_interior(0.0f64, |m, v| m.max(v.abs())),
            linf_n2: state.n2.fold_interior(0.0f64, |m, v| m.max(v.abs())),
            linf_c: state.c.fold_interior(0.0f64, |m, v| m.max(v.abs())),
            lq_c: norms.lq_c,
            lq_grad_c: norms.lq_grad_c,
            l2_grad_c: norms.l2_grad_c,
            linf_u: state.u.linf(),
            div_u_max: divergence_max(state),
            dist_n1: dist.map(|d| d.n1),
            dist_n2: dist.map(|d| d.n2),
            dist_c: dist.map(|d| d.c),
            l2_dist_sq: dsq,
            energy,
            clipped_mass: clipped[0] + clipped[1] + clipped[2],
        };
        writeln!(csv, "{}", rec.to_csv_row()).map_err(|e| Error::io(&csv_path, e))?;
        records.push(rec);

        let mut within = false;
        if let Some(d) = dist {
            within = d.max_scalar() <= cfg.convergence.tolerance
                && d.u <= cfg.convergence.u_tolerance;
        }
        *streak = if within { *streak + 1 } else { 0 };
        Ok(*streak >= cfg.convergence.window)
    };

    // t = 0 sample.
    let mut converged = sample(
        &state,
        &mut records,
        &mut energy_samples,
        &mut csv,
        &clipped,
        &mut in_tolerance_streak,
    )?;

    let t_end = cfg.time.t_end;
    let mut next_sample = cfg.output.sample_dt;
    let eps = 1e-12 * t_end.max(1.0);

    while !converged && state.t < t_end - eps && steps < cfg.time.max_steps {
        let mut dt = match cfg.time.dt {
            Some(fixed) => fixed,
            None => cfg.time.safety * dt_bounds_with_scratch(&state, &p, &mut ws.grad_c).min(),
        };
        dt = dt.min(t_end - state.t);
        let stats = step(&mut state, &p, dt, &mut ws)?;
        steps += 1;
        clipped[0] += stats.clipped_n1;
        clipped[1] += stats.clipped_n2;
        clipped[2] += stats.clipped_c;
        max_div_rel = max_div_rel.max(stats.div_residual / stats.u_linf.max(1.0));

        let at_end = state.t >= t_end - eps;
        if state.t >= next_sample - eps || at_end {
            converged = sample(
                &state,
                &mut records,
                &mut energy_samples,
                &mut csv,
                &clipped,
                &mut in_tolerance_streak,
            )?;
            while next_sample <= state.t + eps {
                next_sample += cfg.output.sample_dt;
            }
        }
    }
    let file = csv.into_inner().map_err(|e| Error::io(&csv_path, e.into_error()))?;
    file.sync_all().map_err(|e| Error::io(&csv_path, e))?;
    drop(file);

    let snapshot_stem = if cfg.output.snapshots {
        crate::snapshot::write_state(
            &cfg.output.dir,
            &cfg.output.stem,
            state.t,
            &state.n1,
            &state.n2,
            &state.c,
            &state.u,
            Some(&state.p),
        )?;
        Some(cfg.output.dir.join(&cfg.output.stem))
    } else {
        None
    };

    let final_distances = target
        .as_ref()
        .map(|tg| distances(&state.n1, &state.n2, &state.c, &state.u, tg));
    let dissipation =
        (energy_samples.len() >= 2).then(|| dissipation_check(&energy_samples));

    Ok(RunSummary {
        report,
        target,
        t_final: state.t,
        steps,
        converged,
        final_distances,
        max_div_rel,
        clipped_n1: clipped[0],
        clipped_n2: clipped[1],
        clipped_c: clipped[2],
        dissipation,
        records,
        csv_path,
        snapshot_stem,
        wall_secs: started.elapsed().as_secs_f64(),
        final_state: state,
    })
}

fn divergence_max(state: &State) -> f64 {
    crate::operators::divergence(&state.u).fold_interior(0.0f64, |m, v| m.max(v.abs()))
}

/// Manufactured-solution verification mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmsMode {
    /// Constant exact solution: every discrete term cancels bitwise, errors
    /// are exactly zero.
    Constant,
    /// Diffusion plus competition kinetics (chi = 0): second order in h.
    DiffusionReaction,
    /// Adds upwinded chemotaxis: first order in h.
    Chemotaxis,
}

/// Errors of one refinement level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmsLevel {
    pub n: usize,
    pub err_n1: f64,
    pub err_n2: f64,
    pub err_c: f64,
}

/// Errors per level plus pairwise observed orders (between consecutive
/// levels, one entry fewer than levels).
#[derive(Debug, Clone, PartialEq)]
pub struct MmsReport {
    pub mode: MmsMode,
    pub levels: Vec<MmsLevel>,
    pub orders_n1: Vec<f64>,
    pub orders_n2: Vec<f64>,
    pub orders_c: Vec<f64>,
}

/// A manufactured profile `a + b cos(kx pi x) cos(ky pi y)` on the unit box,
/// with analytic derivatives.
#[derive(Clone, Copy)]
struct MfgField {
    a: f64,
    b: f64,
    kx: f64,
    ky: f64,
}

impl MfgField {
    fn val(&self, x: f64, y: f64) -> f64 {
        let (wx, wy) = (self.kx * std::f64::consts::PI, self.ky * std::f64::consts::PI);
        self.a + self.b * (wx * x).cos() * (wy * y).cos()
    }
    fn dx(&self, x: f64, y: f64) -> f64 {
        let (wx, wy) = (self.kx * std::f64::consts::PI, self.ky * std::f64::consts::PI);
        -self.b * wx * (wx * x).sin() * (wy * y).cos()
    }
    fn dy(&self, x: f64, y: f64) -> f64 {
        let (wx, wy) = (self.kx * std::f64::consts::PI, self.ky * std::f64::consts::PI);
        -self.b * wy * (wx * x).cos() * (wy * y).sin()
    }
    fn lap(&self, x: f64, y: f64) -> f64 {
        let (wx, wy) = (self.kx * std::f64::consts::PI, self.ky * std::f64::consts::PI);
        -self.b * (wx * wx + wy * wy) * (wx * x).cos() * (wy * y).cos()
    }
}

/// How long each manufactured run integrates: several diffusive relaxation
/// times, so the numerical solution settles onto the discrete steady state
/// and the measured error is purely spatial.
const MMS_T_END: f64 = 0.25;

/// Runs the scalar subsystem against manufactured steady solutions with
/// injected sources and reports L2 errors and observed orders.
pub fn mms_study(levels: &[usize], mode: MmsMode) -> Result<MmsReport> {
    if levels.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "need >= 3 levels for observed orders, got {}",
            levels.len()
        )));
    }
    let chi = match mode {
        MmsMode::Chemotaxis => 0.8,
        _ => 0.0,
    };
    let p = ModelParams {
        chi1: chi,
        chi2: chi,
        mu1: 1.0,
        mu2: 1.0,
        a1: 0.5,
        a2: 0.5,
        alpha: 1.0,
        beta: 1.0,
        gamma: 1.0,
        delta: 1.0,
        dim: 2,
        extents: [1.0, 1.0, 1.0],
        phi: PhiKind::Linear { g: [0.0, 0.0, 0.0] },
    };
    let (f1, f2, fc) = match mode {
        MmsMode::Constant => (
            MfgField { a: 0.4, b: 0.0, kx: 0.0, ky: 0.0 },
            MfgField { a: 0.3, b: 0.0, kx: 0.0, ky: 0.0 },
            MfgField { a: 0.7, b: 0.0, kx: 0.0, ky: 0.0 },
        ),
        _ => (
            MfgField { a: 0.5, b: 0.25, kx: 1.0, ky: 1.0 },
            MfgField { a: 0.5, b: 0.2, kx: 1.0, ky: 2.0 },
            MfgField { a: 0.8, b: 0.3, kx: 2.0, ky: 1.0 },
        ),
    };

    let mut out = Vec::with_capacity(levels.len());
    for &n in levels {
        let grid = Grid::new(2, &[n, n], &[1.0, 1.0])?;
        out.push(mms_level(&grid, &p, f1, f2, fc)?);
    }

    let order = |errs: &dyn Fn(&MmsLevel) -> f64| -> Vec<f64> {
        out.windows(2)
            .map(|w| {
                let (ec, ef) = (errs(&w[0]), errs(&w[1]));
                let hc = 1.0 / w[0].n as f64;
                let hf = 1.0 / w[1].n as f64;
                (ec / ef).ln() / (hc / hf).ln()
            })
            .collect()
    };
    Ok(MmsReport {
        mode,
        orders_n1: order(&|l| l.err_n1),
        orders_n2: order(&|l| l.err_n2),
        orders_c: order(&|l| l.err_c),
        levels: out,
    })
}

fn mms_level(
    grid: &Grid,
    p: &ModelParams,
    f1: MfgField,
    f2: MfgField,
    fc: MfgField,
) -> Result<MmsLevel> {
    // Sources make each profile an exact steady solution of the continuous
    // scalar subsystem: s = -(lap + chemotaxis + kinetics) evaluated
    // analytically, with the kinetics going through the same helpers the
    // stepper uses so constant profiles cancel bitwise.
    let src = |f: &dyn Fn(f64, f64, f64, f64, f64) -> f64| -> ScalarField {
        let mut s = ScalarField::from_fn(grid, |x, y, _| {
            let (v1, vc) = (f1.val(x, y), fc.val(x, y));
            f(x, y, v1, f2.val(x, y), vc)
        });
        apply_neumann(&mut s);
        s
    };
    let s1 = src(&|x, y, v1, v2, _vc| {
        let chem = p.chi1 * (f1.dx(x, y) * fc.dx(x, y) + f1.dy(x, y) * fc.dy(x, y)
            + v1 * fc.lap(x, y));
        -(f1.lap(x, y) - chem + reaction_n1(p, v1, v2))
    });
    let s2 = src(&|x, y, v1, v2, _vc| {
        let chem = p.chi2 * (f2.dx(x, y) * fc.dx(x, y) + f2.dy(x, y) * fc.dy(x, y)
            + v2 * fc.lap(x, y));
        -(f2.lap(x, y) - chem + reaction_n2(p, v1, v2))
    });
    let sc = src(&|x, y, v1, v2, vc| -(fc.lap(x, y) + reaction_c(p, v1, v2, vc)));

    let exact1 = ScalarField::from_fn(grid, |x, y, _| f1.val(x, y));
    let exact2 = ScalarField::from_fn(grid, |x, y, _| f2.val(x, y));
    let exactc = ScalarField::from_fn(grid, |x, y, _| fc.val(x, y));

    let mut state = State {
        t: 0.0,
        n1: exact1.clone(),
        n2: exact2.clone(),
        c: exactc.clone(),
        u: VectorField::zeros(grid),
        p: ScalarField::zeros(grid),
    };
    let mut ws = Workspace::new(grid, p)?;
    let h = grid.min_spacing();
    let dt = DEFAULT_SAFETY * h * h / (2.0 * grid.dim() as f64);
    let steps = (MMS_T_END / dt).ceil() as u64;

    for _ in 0..steps {
        scalar_step_with_sources(&mut state, p, dt, &mut ws, &s1, &s2, &sc)?;
    }

    let l2 = |f: &ScalarField, exact: &ScalarField| -> f64 {
        let mut acc = 0.0;
        let (fd, ed) = (f.raw(), exact.raw());
        let (nx, ny) = (grid.cells(0), grid.cells(1));
        for k in grid.krange() {
            for j in 1..=ny {
                let r = grid.sidx(1, j, k);
                for q in 0..nx {
                    let d = fd[r + q] - ed[r + q];
                    acc += d * d;
                }
            }
        }
        (acc * grid.cell_volume()).sqrt()
    };
    Ok(MmsLevel {
        n: grid.cells(0),
        err_n1: l2(&state.n1, &exact1),
        err_n2: l2(&state.n2, &exact2),
        err_c: l2(&state.c, &exactc),
    })
}

/// One explicit scalar step with injected sources; the same operator kernels
/// and update expression as [`step`], plus `+ s` per field, fluid off.
fn scalar_step_with_sources(
    state: &mut State,
    p: &ModelParams,
    dt: f64,
    ws: &mut Workspace,
    s1: &ScalarField,
    s2: &ScalarField,
    sc: &ScalarField,
) -> Result<()> {
    let g = ws.grid;
    grad_faces_into(&state.c, &mut ws.grad_c);

    advect_into(&state.u, &state.n1, &mut ws.adv);
    chemotaxis_div_into(&state.n1, &ws.grad_c, p.chi1, &mut ws.chem);
    laplacian_into(&state.n1, &mut ws.lap);
    combine_with_source(&g, dt, &state.n1, &ws.adv, &ws.chem, &ws.lap, s1, &mut ws.n1_new, |v1, v2| {
        reaction_n1(p, v1, v2)
    }, &state.n2);

    advect_into(&state.u, &state.n2, &mut ws.adv);
    chemotaxis_div_into(&state.n2, &ws.grad_c, p.chi2, &mut ws.chem);
    laplacian_into(&state.n2, &mut ws.lap);
    combine_with_source(&g, dt, &state.n2, &ws.adv, &ws.chem, &ws.lap, s2, &mut ws.n2_new, |v2, v1| {
        reaction_n2(p, v1, v2)
    }, &state.n1);

    advect_into(&state.u, &state.c, &mut ws.adv);
    laplacian_into(&state.c, &mut ws.lap);
    let (nx, ny) = (g.cells(0), g.cells(1));
    {
        let (cd, ad, ld, sd, d1, d2, od) = (
            state.c.raw(),
            ws.adv.raw(),
            ws.lap.raw(),
            sc.raw(),
            state.n1.raw(),
            state.n2.raw(),
            ws.c_new.raw_mut(),
        );
        for k in g.krange() {
            for j in 1..=ny {
                let r = g.sidx(1, j, k);
                for q in 0..nx {
                    let i = r + q;
                    let rhs = (ad[i] + ld[i]) + reaction_c(p, d1[i], d2[i], cd[i]) + sd[i];
                    od[i] = (cd[i] + dt * rhs).max(0.0);
                }
            }
        }
    }

    std::mem::swap(&mut state.n1, &mut ws.n1_new);
    std::mem::swap(&mut state.n2, &mut ws.n2_new);
    std::mem::swap(&mut state.c, &mut ws.c_new);
    apply_neumann(&mut state.n1);
    apply_neumann(&mut state.n2);
    apply_neumann(&mut state.c);
    if !(state.n1.is_finite() && state.n2.is_finite() && state.c.is_finite()) {
        return Err(blow_up(state, dt));
    }
    state.t += dt;
    Ok(())
}

/// `out = f + dt * (((adv + chem) + lap) + reaction + s)`, clipped at zero.
#[allow(clippy::too_many_arguments)]
fn combine_with_source(
    g: &Grid,
    dt: f64,
    f: &ScalarField,
    adv: &ScalarField,
    chem: &ScalarField,
    lap: &ScalarField,
    s: &ScalarField,
    out: &mut ScalarField,
    reaction: impl Fn(f64, f64) -> f64,
    other: &ScalarField,
) {
    let (nx, ny) = (g.cells(0), g.cells(1));
    let (fd, ad, cd, ld, sd, od, xd) =
        (f.raw(), adv.raw(), chem.raw(), lap.raw(), s.raw(), out.raw_mut(), other.raw());
    for k in g.krange() {
        for j in 1..=ny {
            let r = g.sidx(1, j, k);
            for q in 0..nx {
                let i = r + q;
                let rhs = (((ad[i] + cd[i]) + ld[i]) + reaction(fd[i], xd[i])) + sd[i];
                od[i] = (fd[i] + dt * rhs).max(0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn base_toml(extra: &str) -> String {
        format!(
            r#"
            [model]
            chi1 = 0.1
            chi2 = 0.1
            mu1 = 5.0
            mu2 = 5.0
            a1 = 0.5
            a2 = 0.5
            alpha = 1.0
            beta = 1.0
            gamma = 0.1
            delta = 0.1

            [domain]
            cells = [16, 16]
            {extra}
            "#
        )
    }

    fn cfg(extra: &str) -> RunConfig {
        RunConfig::from_toml_str(&base_toml(extra)).unwrap()
    }

    #[test]
    fn init_steady_without_perturbation_is_the_target_constant() {
        let cfg = cfg("");
        let s = init_state(&cfg).unwrap();
        let tg = steady_state(&cfg.model_params().unwrap()).unwrap();
        assert_eq!(s.n1.get(3, 3, 0), tg.n1);
        assert_eq!(s.n2.get(0, 15, 0), tg.n2);
        assert_eq!(s.c.get(8, 8, 0), tg.c);
        assert_eq!(s.u.linf(), 0.0);
    }

    #[test]
    fn init_mode_perturbation_has_exact_amplitude_and_keeps_positivity() {
        let cfg = cfg("[init]\nkind = \"constant\"\nn1 = 1.0\nn2 = 1.0\nc = 1.0\namplitude = 0.1\nseed = 7");
        let s = init_state(&cfg).unwrap();
        for f in [&s.n1, &s.n2, &s.c] {
            let max_dev = f.fold_interior(0.0f64, |m, v| m.max((v - 1.0).abs()));
            assert!((max_dev - 0.1).abs() < 1e-12, "sup deviation {max_dev}");
            assert!(f.min_interior() >= 0.9 - 1e-12);
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg7 = cfg("[init]\namplitude = 0.05\nseed = 7");
        let a = init_state(&cfg7).unwrap();
        let b = init_state(&cfg7).unwrap();
        assert_eq!(a.n1.max_abs_diff(&b.n1), 0.0);
        assert_eq!(a.c.max_abs_diff(&b.c), 0.0);
        let cfg8 = cfg("[init]\namplitude = 0.05\nseed = 8");
        let c = init_state(&cfg8).unwrap();
        assert!(a.n1.max_abs_diff(&c.n1) > 0.0, "different seed, different field");
    }

    #[test]
    fn init_cells_perturbation_stays_within_amplitude() {
        let cfg = cfg("[init]\nperturb = \"cells\"\namplitude = 0.2\nseed = 3");
        let tg = steady_state(&cfg.model_params().unwrap()).unwrap();
        let s = init_state(&cfg).unwrap();
        let dev = s.n1.fold_interior(0.0f64, |m, v| m.max((v - tg.n1).abs()));
        assert!(dev <= 0.2 + 1e-15 && dev > 0.0);
    }

    #[test]
    fn init_rejects_amplitude_reaching_the_background() {
        let cfg = cfg("[init]\nkind = \"constant\"\nn1 = 0.05\nn2 = 1.0\nc = 1.0\namplitude = 0.1");
        match init_state(&cfg) {
            Err(Error::InvalidConfig(msg)) => assert!(msg.contains("n1"), "{msg}"),
            other => panic!("expected invalid config, got {other:?}"),
        }
    }

    #[test]
    fn dt_bounds_dominated_by_diffusion_on_flat_state() {
        let cfg16 = cfg("");
        let p = cfg16.model_params().unwrap();
        let s = init_state(&cfg16).unwrap();
        let b = dt_bounds(&s, &p);
        let h = 1.0 / 16.0;
        assert_eq!(b.diffusive, h * h / 4.0);
        assert_eq!(b.advective, f64::INFINITY);
        assert_eq!(b.chemotactic, f64::INFINITY, "flat c has zero gradient");
        assert!(b.reactive > b.diffusive, "reaction is milder than diffusion here");
        assert_eq!(stable_dt(&s, &p), 0.4 * b.diffusive);

        // Doubling the resolution quarters the diffusive step.
        let cfg32 = RunConfig::from_toml_str(&base_toml("").replace("[16, 16]", "[32, 32]"))
            .unwrap();
        let s32 = init_state(&cfg32).unwrap();
        assert!((stable_dt(&s, &p) / stable_dt(&s32, &p) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn stable_dt_respects_every_individual_bound() {
        let cfg = cfg("[init]\namplitude = 0.3\nseed = 11");
        let p = cfg.model_params().unwrap();
        let mut s = init_state(&cfg).unwrap();
        // Give the velocity some content so the advective bound is finite.
        let mut ws = Workspace::new(s.n1.grid(), &p).unwrap();
        for _ in 0..5 {
            let dt = stable_dt(&s, &p);
            step(&mut s, &p, dt, &mut ws).unwrap();
        }
        let dt = stable_dt(&s, &p);
        let g = s.n1.grid();
        let h = g.min_spacing();
        assert!(dt <= h * h / (2.0 * g.dim() as f64));
        let umax = s.u.linf();
        if umax > 0.0 {
            assert!(dt <= h / umax);
        }
        let gc = crate::operators::grad_faces(&s.c).linf();
        let chi = p.chi1.max(p.chi2);
        if chi * gc > 0.0 {
            assert!(dt <= h / (chi * gc));
        }
        let nmax = s
            .n1
            .fold_interior(0.0f64, |m, v| m.max(v))
            .max(s.n2.fold_interior(0.0f64, |m, v| m.max(v)));
        let r = (p.mu1 * (1.0 + (1.0 + p.a1) * nmax))
            .max(p.mu2 * (1.0 + (1.0 + p.a2) * nmax))
            .max(1.0);
        assert!(dt <= 1.0 / r);
    }

    #[test]
    fn constant_steady_state_is_a_discrete_fixed_point() {
        let cfg = cfg("");
        let p = cfg.model_params().unwrap();
        let tg = steady_state(&p).unwrap();
        let mut s = init_state(&cfg).unwrap();
        let mut ws = Workspace::new(s.n1.grid(), &p).unwrap();
        let n1_0 = s.n1.clone();
        let dt = stable_dt(&s, &p);
        for _ in 0..50 {
            step(&mut s, &p, dt, &mut ws).unwrap();
        }
        assert!(s.n1.max_abs_diff(&n1_0) < 1e-12, "{}", s.n1.max_abs_diff(&n1_0));
        let dc = s.c.fold_interior(0.0f64, |m, v| m.max((v - tg.c).abs()));
        assert!(dc < 1e-12, "{dc}");
        assert!(s.u.linf() < 1e-13, "{}", s.u.linf());
    }

    #[test]
    fn flat_chemotaxis_free_run_matches_the_ode_iteration_bitwise() {
        // chi = 0, u pinned at 0 by a zero potential gradient: each cell
        // follows the explicit-Euler update of the competition ODE exactly.
        let toml = base_toml(
            "[init]\nkind = \"constant\"\nn1 = 0.3\nn2 = 0.4\nc = 0.9",
        )
        .replace("chi1 = 0.1", "chi1 = 0.0")
        .replace("chi2 = 0.1", "chi2 = 0.0");
        let cfg = RunConfig::from_toml_str(&toml).unwrap();
        let mut p = cfg.model_params().unwrap();
        p.phi = PhiKind::Linear { g: [0.0, 0.0, 0.0] };
        let mut s = init_state(&cfg).unwrap();
        let mut ws = Workspace::new(s.n1.grid(), &p).unwrap();

        let dt = 5e-4;
        let (mut o1, mut o2, mut oc) = (0.3f64, 0.4f64, 0.9f64);
        for _ in 0..200 {
            step(&mut s, &p, dt, &mut ws).unwrap();
            let (r1, r2, rc) = (
                reaction_n1(&p, o1, o2),
                reaction_n2(&p, o1, o2),
                reaction_c(&p, o1, o2, oc),
            );
            o1 += dt * (((0.0 + 0.0) + 0.0) + r1);
            o2 += dt * (((0.0 + 0.0) + 0.0) + r2);
            oc += dt * ((0.0 + 0.0) + rc);
        }
        assert_eq!(s.n1.get(5, 9, 0), o1);
        assert_eq!(s.n2.get(0, 0, 0), o2);
        assert_eq!(s.c.get(15, 3, 0), oc);
        assert_eq!(s.u.linf(), 0.0, "zero potential gradient leaves the fluid at rest");
    }

    #[test]
    fn single_step_mass_identity_holds_to_rounding() {
        let cfg = cfg("[init]\namplitude = 0.2\nseed = 5");
        let p = cfg.model_params().unwrap();
        let mut s = init_state(&cfg).unwrap();
        let mut ws = Workspace::new(s.n1.grid(), &p).unwrap();
        for _ in 0..3 {
            let dt = stable_dt(&s, &p);
            step(&mut s, &p, dt, &mut ws).unwrap();
        }
        let vol = s.n1.grid().cell_volume();
        let m_before = integrate(&s.n1);
        let reaction_integral = {
            let (d1, d2) = (s.n1.raw(), s.n2.raw());
            let g = *s.n1.grid();
            let mut acc = 0.0;
            for k in g.krange() {
                for j in 1..=g.cells(1) {
                    let r = g.sidx(1, j, k);
                    for q in 0..g.cells(0) {
                        acc += reaction_n1(&p, d1[r + q], d2[r + q]);
                    }
                }
            }
            acc * vol
        };
        let dt = stable_dt(&s, &p);
        let stats = step(&mut s, &p, dt, &mut ws).unwrap();
        let m_after = integrate(&s.n1);
        let predicted = m_before + dt * reaction_integral + stats.clipped_n1;
        assert!(
            (m_after - predicted).abs() < 1e-12,
            "mass identity off by {}",
            m_after - predicted
        );
    }

    #[test]
    fn species_masses_stay_under_the_logistic_bound() {
        for seed in [1u64, 2, 3] {
            let cfg = cfg(&format!("[init]\namplitude = 0.3\nseed = {seed}"));
            let p = cfg.model_params().unwrap();
            let mut s = init_state(&cfg).unwrap();
            let mut ws = Workspace::new(s.n1.grid(), &p).unwrap();
            let vol = s.n1.grid().domain_volume();
            let bound1 = integrate(&s.n1).max(vol) * (1.0 + 1e-6);
            let bound2 = integrate(&s.n2).max(vol) * (1.0 + 1e-6);
            let c_cap = |m1: f64, m2: f64, c0: f64| {
                c0.max(p.alpha * m1 + p.beta * m2) * (1.0 + 1e-6)
            };
            let c0 = integrate(&s.c);
            for _ in 0..100 {
                let dt = stable_dt(&s, &p);
                step(&mut s, &p, dt, &mut ws).unwrap();
                assert!(integrate(&s.n1) <= bound1);
                assert!(integrate(&s.n2) <= bound2);
                assert!(integrate(&s.c) <= c_cap(bound1, bound2, c0));
            }
        }
    }

    #[test]
    fn step_rejects_nonpositive_dt_and_oversized_viscous_dt() {
        let cfg = cfg("");
        let p = cfg.model_params().unwrap();
        let mut s = init_state(&cfg).unwrap();
        let mut ws = Workspace::new(s.n1.grid(), &p).unwrap();
        assert!(matches!(
            step(&mut s, &p, 0.0, &mut ws),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            step(&mut s, &p, f64::NAN, &mut ws),
            Err(Error::InvalidConfig(_))
        ));
        let too_big = 10.0 * crate::stokes::viscous_dt_bound(s.n1.grid());
        assert!(matches!(
            step(&mut s, &p, too_big, &mut ws),
            Err(Error::RejectedStep { .. })
        ));
    }

    #[test]
    fn non_finite_state_reports_blow_up_with_time_and_norms() {
        let cfg = cfg("");
        let p = cfg.model_params().unwrap();
        let mut s = init_state(&cfg).unwrap();
        s.n1.set(4, 4, 0, f64::NAN);
        let mut ws = Workspace::new(s.n1.grid(), &p).unwrap();
        match step(&mut s, &p, 1e-4, &mut ws) {
            Err(Error::BlowUp { t, what }) => {
                assert!(t > 0.0);
                assert!(what.contains("sup"), "{what}");
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn run_with_zero_horizon_returns_only_the_initial_sample() {
        let dir = tempfile::tempdir().unwrap();
        let extra = format!(
            "[time]\nt_end = 0.0\n[output]\ndir = {:?}\nsnapshots = false",
            dir.path().join("z")
        );
        let summary = run(&cfg(&extra)).unwrap();
        assert_eq!(summary.records.len(), 1);
        assert_eq!(summary.steps, 0);
        assert_eq!(summary.t_final, 0.0);
    }

    #[test]
    fn run_streams_csv_rows_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let make = |sub: &str| {
            format!(
                "[init]\namplitude = 0.1\nseed = 9\n[time]\nt_end = 0.02\n\
                 [output]\ndir = {:?}\nsample_dt = 0.005\nsnapshots = false",
                dir.path().join(sub)
            )
        };
        let a = run(&cfg(&make("a"))).unwrap();
        let b = run(&cfg(&make("b"))).unwrap();
        let bytes_a = std::fs::read(&a.csv_path).unwrap();
        let bytes_b = std::fs::read(&b.csv_path).unwrap();
        assert_eq!(bytes_a, bytes_b, "identical config + seed must give identical CSV");
        assert_eq!(a.records.len(), b.records.len());
        assert!(a.records.len() >= 4);
        let text = String::from_utf8(bytes_a).unwrap();
        assert!(text.starts_with(DiagnosticsRecord::CSV_HEADER));
        assert_eq!(text.lines().count(), a.records.len() + 1);
        assert!(a.max_div_rel <= 1e-10, "incompressibility: {}", a.max_div_rel);
        assert_eq!(a.clipped_n1 + a.clipped_n2 + a.clipped_c, 0.0, "no clipping expected");
    }

    #[test]
    fn run_converges_on_a_small_coexistence_box() {
        let dir = tempfile::tempdir().unwrap();
        let extra = format!(
            "[init]\namplitude = 0.05\nseed = 2\n[time]\nt_end = 40.0\n\
             [convergence]\nwindow = 5\n\
             [output]\ndir = {:?}\nsample_dt = 0.2",
            dir.path()
        );
        let summary = run(&cfg(&extra)).unwrap();
        assert!(summary.converged, "did not converge by t = {}", summary.t_final);
        assert!(summary.t_final < 40.0, "converged early");
        let d = summary.final_distances.unwrap();
        assert!(d.max_scalar() <= 1e-3 && d.u <= 1e-5, "{d:?}");
        let report = summary.dissipation.expect("feasible coexistence tracks energy");
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        assert!(report.eps_hat.unwrap() > 0.0);
        // The snapshot set reloads bit-exactly.
        let stem = summary.snapshot_stem.unwrap();
        let (t, n1, _, _, _) = crate::snapshot::read_state(
            stem.parent().unwrap(),
            stem.file_name().unwrap().to_str().unwrap(),
        )
        .unwrap();
        assert_eq!(t, summary.t_final);
        assert_eq!(n1.max_abs_diff(&summary.final_state.n1), 0.0);
    }

    #[test]
    fn snapshot_reload_continues_from_the_saved_fields() {
        let dir = tempfile::tempdir().unwrap();
        let extra = format!(
            "[init]\namplitude = 0.1\nseed = 4\n[time]\nt_end = 0.01\n[output]\ndir = {:?}",
            dir.path()
        );
        let first = run(&cfg(&extra)).unwrap();
        let stem = first.snapshot_stem.unwrap();
        let extra2 = format!(
            "[init]\nkind = \"snapshot\"\nsnapshot = {:?}\n[time]\nt_end = 0.01\n\
             [output]\ndir = {:?}\nstem = \"second\"",
            stem,
            dir.path()
        );
        let s = init_state(&cfg(&extra2)).unwrap();
        assert_eq!(s.t, 0.0, "reload restarts the clock");
        assert_eq!(s.n1.max_abs_diff(&first.final_state.n1), 0.0);
        let div = crate::operators::divergence(&s.u)
            .fold_interior(0.0f64, |m, v| m.max(v.abs()));
        assert!(div <= 1e-12 * s.u.linf().max(1.0));
    }

    #[test]
    fn mms_constant_solution_is_exact() {
        let report = mms_study(&[8, 12, 16], MmsMode::Constant).unwrap();
        for level in &report.levels {
            assert!(level.err_n1 <= 1e-12, "{}", level.err_n1);
            assert!(level.err_n2 <= 1e-12);
            assert!(level.err_c <= 1e-12);
        }
    }

    #[test]
    fn mms_diffusion_reaction_is_second_order() {
        let report = mms_study(&[16, 24, 32], MmsMode::DiffusionReaction).unwrap();
        let last = *report.orders_n1.last().unwrap();
        assert!(last >= 1.8, "observed order {last}; errors {:?}", report.levels);
        assert!(*report.orders_c.last().unwrap() >= 1.8);
    }

    #[test]
    fn mms_needs_three_levels() {
        assert!(matches!(
            mms_study(&[16, 32], MmsMode::Constant),
            Err(Error::InvalidConfig(_))
        ));
    }
}
