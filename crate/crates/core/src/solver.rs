//! Explicit finite-volume time integration.
//!
//! The right-hand side is the sum of an upwind transport term driven by
//! interface velocities `−Σ_η ∇W_{ξη} ∗ u_η`, an optional centered
//! Laplacian `εΔu`, and the pointwise reaction. Ghost cells outside the
//! domain hold zero density. Time stepping uses SSP Runge–Kutta schemes,
//! which are convex combinations of forward Euler steps and therefore keep
//! densities non-negative under the same step restriction.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::kernels::VelocityPlan;
use crate::models::ModelSpec;

/// Step-size factor up to which forward Euler provably preserves
/// non-negativity for the assembled right-hand side.
pub const POSITIVITY_CFL: f64 = 0.5;

/// Step-size factor above which a step is rejected as unstable.
pub const STABILITY_CFL: f64 = 1.0;

const TINY: f64 = 1e-300;

/// Compartment densities at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    time: f64,
    fields: Vec<Field>,
}

impl State {
    /// All fields must share one grid.
    pub fn new(time: f64, fields: Vec<Field>) -> Result<Self> {
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::InvalidConfig(format!("state time must be >= 0, got {time}")));
        }
        let Some(first) = fields.first() else {
            return Err(Error::ArityMismatch {
                expected: 1,
                got: 0,
            });
        };
        if fields.iter().any(|f| f.grid() != first.grid()) {
            return Err(Error::GridMismatch);
        }
        Ok(Self { time, fields })
    }

    /// Like [`State::new`] but also rejects negative densities.
    pub fn physical(time: f64, fields: Vec<Field>) -> Result<Self> {
        let state = Self::new(time, fields)?;
        state.check_nonnegative()?;
        Ok(state)
    }

    pub fn zeros(grid: &Grid, compartments: usize) -> Self {
        Self {
            time: 0.0,
            fields: vec![Field::zeros(grid); compartments],
        }
    }

    pub fn check_nonnegative(&self) -> Result<()> {
        for (compartment, f) in self.fields.iter().enumerate() {
            if let Some(cell) = f.values().iter().position(|&v| v < 0.0) {
                return Err(Error::NegativeDensity {
                    compartment,
                    cell,
                    value: f.values()[cell],
                });
            }
        }
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn grid(&self) -> &Grid {
        self.fields[0].grid()
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn field(&self, compartment: usize) -> &Field {
        &self.fields[compartment]
    }

    pub fn into_fields(self) -> Vec<Field> {
        self.fields
    }

    /// Cellwise sum over compartments.
    pub fn total_density(&self) -> Field {
        let mut total = vec![0.0; self.grid().cell_count()];
        for f in &self.fields {
            for (t, v) in total.iter_mut().zip(f.values()) {
                *t += v;
            }
        }
        Field::from_values(self.grid(), total).expect("sum of finite fields")
    }

    /// Smallest value over all compartments and cells.
    pub fn min_value(&self) -> f64 {
        self.fields.iter().map(Field::min).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RkScheme {
    /// Two-stage Heun method.
    #[default]
    Ssp2,
    /// Three-stage Shu–Osher method.
    Ssp3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeStep {
    Fixed(f64),
    /// Step chosen every step as this fraction of the stability bound.
    Cfl(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CflPolicy {
    /// Reject steps above the stability bound.
    #[default]
    Strict,
    /// Count violations in the run summary and continue.
    Permissive,
}

/// Boundary treatment; zero-density ghost cells are the only option.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    ZeroGhost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub t_final: f64,
    pub step: TimeStep,
    pub rk: RkScheme,
    /// Emit a snapshot every this many steps; 0 emits only the first and last.
    pub snapshot_every: usize,
    pub boundary: Boundary,
    pub cfl_policy: CflPolicy,
}

impl SolverConfig {
    pub fn fixed(t_final: f64, dt: f64) -> Self {
        Self {
            t_final,
            step: TimeStep::Fixed(dt),
            rk: RkScheme::default(),
            snapshot_every: 0,
            boundary: Boundary::ZeroGhost,
            cfl_policy: CflPolicy::Strict,
        }
    }

    pub fn cfl(t_final: f64, cfl: f64) -> Self {
        Self {
            step: TimeStep::Cfl(cfl),
            ..Self::fixed(t_final, 1.0)
        }
    }

    pub fn with_rk(mut self, rk: RkScheme) -> Self {
        self.rk = rk;
        self
    }

    pub fn with_snapshot_every(mut self, every: usize) -> Self {
        self.snapshot_every = every;
        self
    }

    pub fn with_policy(mut self, policy: CflPolicy) -> Self {
        self.cfl_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "t_final must be finite and non-negative, got {}",
                self.t_final
            )));
        }
        match self.step {
            TimeStep::Fixed(dt) if !(dt.is_finite() && dt > 0.0) => Err(Error::InvalidConfig(
                format!("dt must be positive, got {dt}"),
            )),
            TimeStep::Cfl(c) if !(c > 0.0 && c <= 1.0) => Err(Error::InvalidConfig(format!(
                "cfl must lie in (0, 1], got {c}"
            ))),
            _ => Ok(()),
        }
    }
}

/// `cfl / (Σ_axis s/dx + Σ_axis 2ε/dx² + tiny)`; in 1D this is
/// `cfl / (s/dx + 2ε/dx²)`.
pub fn cfl_timestep(grid: &Grid, max_speed: f64, epsilon: f64, cfl: f64) -> f64 {
    stable_timestep(grid, max_speed, epsilon, 0.0, cfl)
}

/// [`cfl_timestep`] with an extra per-capita reaction loss rate in the
/// denominator.
pub fn stable_timestep(grid: &Grid, max_speed: f64, epsilon: f64, loss_rate: f64, cfl: f64) -> f64 {
    let mut rate = loss_rate + TINY;
    for axis in 0..grid.dim() {
        let dx = grid.dx(axis);
        rate += max_speed / dx + 2.0 * epsilon / (dx * dx);
    }
    cfl / rate
}

fn check_len(grid: &Grid, got: usize) -> Result<()> {
    if got != grid.cell_count() {
        return Err(Error::SizeMismatch {
            expected: grid.cell_count(),
            got,
        });
    }
    Ok(())
}

/// Conservative upwind divergence `−∇·(u v)` given normal velocities on
/// every face (`velocity[axis]`, boundary faces included).
pub fn transport_rhs(grid: &Grid, u: &Field, velocity: &[Vec<f64>]) -> Result<Field> {
    check_len(grid, u.len())?;
    if velocity.len() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: velocity.len(),
        });
    }
    for (axis, v) in velocity.iter().enumerate() {
        if v.len() != grid.interface_count(axis) {
            return Err(Error::SizeMismatch {
                expected: grid.interface_count(axis),
                got: v.len(),
            });
        }
    }
    let mut out = vec![0.0; grid.cell_count()];
    add_transport(grid, u.values(), velocity, &mut out);
    Field::from_values(grid, out)
}

#[inline]
fn upwind_flux(v: f64, left: f64, right: f64) -> f64 {
    v.max(0.0) * left + v.min(0.0) * right
}

fn add_transport(grid: &Grid, u: &[f64], velocity: &[Vec<f64>], out: &mut [f64]) {
    let nx = grid.n(0);
    let ny = if grid.dim() == 2 { grid.n(1) } else { 1 };
    let inv_dx = 1.0 / grid.dx(0);
    let vx = &velocity[0];
    for iy in 0..ny {
        let row = &u[iy * nx..(iy + 1) * nx];
        let v = &vx[iy * (nx + 1)..(iy + 1) * (nx + 1)];
        let o = &mut out[iy * nx..(iy + 1) * nx];
        let mut flux_left = upwind_flux(v[0], 0.0, row[0]);
        for j in 0..nx {
            let right = if j + 1 < nx { row[j + 1] } else { 0.0 };
            let flux_right = upwind_flux(v[j + 1], row[j], right);
            o[j] -= (flux_right - flux_left) * inv_dx;
            flux_left = flux_right;
        }
    }
    if grid.dim() == 2 {
        let inv_dy = 1.0 / grid.dx(1);
        let vy = &velocity[1];
        for ix in 0..nx {
            let mut flux_low = upwind_flux(vy[ix], 0.0, u[ix]);
            for j in 0..ny {
                let here = u[j * nx + ix];
                let above = if j + 1 < ny { u[(j + 1) * nx + ix] } else { 0.0 };
                let flux_high = upwind_flux(vy[(j + 1) * nx + ix], here, above);
                out[j * nx + ix] -= (flux_high - flux_low) * inv_dy;
                flux_low = flux_high;
            }
        }
    }
}

/// `εΔu` with the standard centered stencil and zero ghost values.
pub fn diffusion_rhs(grid: &Grid, u: &Field, epsilon: f64) -> Result<Field> {
    check_len(grid, u.len())?;
    let mut out = vec![0.0; grid.cell_count()];
    add_diffusion(grid, u.values(), epsilon, &mut out);
    Field::from_values(grid, out)
}

fn add_diffusion(grid: &Grid, u: &[f64], epsilon: f64, out: &mut [f64]) {
    if epsilon == 0.0 {
        return;
    }
    let nx = grid.n(0);
    let ny = if grid.dim() == 2 { grid.n(1) } else { 1 };
    let at = |ix: isize, iy: isize| -> f64 {
        if ix < 0 || iy < 0 || ix as usize >= nx || iy as usize >= ny {
            0.0
        } else {
            u[iy as usize * nx + ix as usize]
        }
    };
    let cx = epsilon / (grid.dx(0) * grid.dx(0));
    let cy = if grid.dim() == 2 {
        epsilon / (grid.dx(1) * grid.dx(1))
    } else {
        0.0
    };
    for iy in 0..ny as isize {
        for ix in 0..nx as isize {
            let c = at(ix, iy);
            let mut lap = cx * (at(ix - 1, iy) - 2.0 * c + at(ix + 1, iy));
            if grid.dim() == 2 {
                lap += cy * (at(ix, iy - 1) - 2.0 * c + at(ix, iy + 1));
            }
            out[iy as usize * nx + ix as usize] += lap;
        }
    }
}

/// Quantities measured while evaluating the right-hand side.
#[derive(Debug, Clone, Copy, Default)]
struct RhsInfo {
    max_speed: f64,
    loss_rate: f64,
}

type Buffers = Vec<Vec<f64>>;

/// A model discretized on a grid, with precomputed convolution tables.
#[derive(Debug, Clone)]
pub struct Solver {
    model: ModelSpec,
    grid: Grid,
    plan: VelocityPlan,
    config: SolverConfig,
}

/// Outcome statistics of [`Solver::run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    /// Smallest density over all compartments, cells and steps.
    pub min_value: f64,
    /// Largest sup-norm of any compartment over the run.
    pub max_linf: f64,
    pub initial_mass: f64,
    pub final_mass: f64,
    /// Largest `|M(t) − M(0)| / M(0)` over all steps (absolute drift when
    /// `M(0) = 0`).
    pub max_mass_drift: f64,
    pub max_speed: f64,
    /// Largest ratio of the step used to the stability bound.
    pub max_cfl_number: f64,
    pub cfl_warnings: usize,
    pub wall_time: Duration,
    /// Set when the run stopped early.
    pub abort: Option<Error>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Final state, or the last finite state when aborted.
    pub state: State,
    pub summary: RunSummary,
}

impl RunOutcome {
    /// Turns an aborted run into an error.
    pub fn into_result(self) -> Result<Self> {
        match &self.summary.abort {
            Some(e) => Err(e.clone()),
            None => Ok(self),
        }
    }
}

/// Receives states during a run.
pub trait SnapshotSink {
    fn on_snapshot(&mut self, step: usize, state: &State);

    /// Called with the last finite state when a run aborts.
    fn on_abort(&mut self, _step: usize, _state: &State, _error: &Error) {}
}

impl<F: FnMut(usize, &State)> SnapshotSink for F {
    fn on_snapshot(&mut self, step: usize, state: &State) {
        self(step, state)
    }
}

impl Solver {
    pub fn new(model: &ModelSpec, grid: &Grid, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let plan = VelocityPlan::new(grid, model.kernels())?;
        Ok(Self {
            model: model.clone(),
            grid: *grid,
            plan,
            config,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    fn check_state(&self, state: &State) -> Result<()> {
        if state.fields().len() != self.model.len() {
            return Err(Error::ArityMismatch {
                expected: self.model.len(),
                got: state.fields().len(),
            });
        }
        if *state.grid() != self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// Transport, then diffusion, then reaction, accumulated in that order.
    fn eval(&self, u: &Buffers, out: &mut Buffers) -> RhsInfo {
        let refs: Vec<&[f64]> = u.iter().map(Vec::as_slice).collect();
        let velocities = self.plan.interface_velocities(&refs);
        let mut info = RhsInfo::default();
        for (xi, out_xi) in out.iter_mut().enumerate() {
            out_xi.fill(0.0);
            let v = &velocities[xi];
            info.max_speed = v
                .iter()
                .flatten()
                .fold(info.max_speed, |m, s| m.max(s.abs()));
            add_transport(&self.grid, &u[xi], v, out_xi);
            add_diffusion(&self.grid, &u[xi], self.model.epsilon(), out_xi);
        }
        let n = self.model.len();
        let (mut point, mut rate) = (vec![0.0; n], vec![0.0; n]);
        for cell in 0..self.grid.cell_count() {
            for xi in 0..n {
                point[xi] = u[xi][cell];
            }
            self.model.reaction_into(&point, &mut rate);
            for xi in 0..n {
                out[xi][cell] += rate[xi];
            }
            info.loss_rate = info.loss_rate.max(self.model.loss_rate(&point));
        }
        info
    }

    /// Assembled right-hand side for every compartment.
    pub fn full_rhs(&self, state: &State) -> Result<Vec<Field>> {
        self.check_state(state)?;
        let u: Buffers = state.fields().iter().map(|f| f.values().to_vec()).collect();
        let mut out = u.clone();
        self.eval(&u, &mut out);
        out.into_iter()
            .map(|v| Field::from_values(&self.grid, v))
            .collect()
    }

    /// Largest stable step (at `cfl`) for the given state.
    pub fn stable_dt(&self, state: &State, cfl: f64) -> Result<f64> {
        self.check_state(state)?;
        let u: Buffers = state.fields().iter().map(|f| f.values().to_vec()).collect();
        let mut out = u.clone();
        let info = self.eval(&u, &mut out);
        Ok(self.bound(info, cfl))
    }

    fn bound(&self, info: RhsInfo, cfl: f64) -> f64 {
        stable_timestep(
            &self.grid,
            info.max_speed,
            self.model.epsilon(),
            info.loss_rate,
            cfl,
        )
    }

    /// One step of size `dt` (or a CFL-chosen size capped at `dt_cap`).
    /// Returns the new buffers, the step used and the stage-one info.
    fn advance(&self, u: &Buffers, dt: Option<f64>, dt_cap: f64) -> Result<(Buffers, f64, RhsInfo, bool)> {
        let mut l = u.clone();
        let info = self.eval(u, &mut l);
        let limit = self.bound(info, STABILITY_CFL);
        let dt = match dt {
            Some(dt) => dt,
            None => match self.config.step {
                TimeStep::Cfl(c) => self.bound(info, c).min(dt_cap),
                TimeStep::Fixed(dt) => dt.min(dt_cap),
            },
        };
        let violated = dt > limit * (1.0 + 1e-12);
        if violated && self.config.cfl_policy == CflPolicy::Strict {
            return Err(Error::CflViolation { dt, bound: limit });
        }
        let euler = |base: &Buffers, rhs: &Buffers| -> Buffers {
            base.iter()
                .zip(rhs)
                .map(|(b, r)| b.iter().zip(r).map(|(b, r)| b + dt * r).collect())
                .collect()
        };
        // out = a·u + b·(stage + dt·L(stage))
        let combine = |a: f64, b: f64, stage: &Buffers, scratch: &mut Buffers| -> Buffers {
            self.eval(stage, scratch);
            u.iter()
                .zip(stage)
                .zip(scratch.iter())
                .map(|((u, s), r)| {
                    u.iter()
                        .zip(s)
                        .zip(r)
                        .map(|((u, s), r)| a * u + b * (s + dt * r))
                        .collect()
                })
                .collect()
        };
        let u1 = euler(u, &l);
        let next = match self.config.rk {
            RkScheme::Ssp2 => combine(0.5, 0.5, &u1, &mut l),
            RkScheme::Ssp3 => {
                let u2 = combine(0.75, 0.25, &u1, &mut l);
                combine(1.0 / 3.0, 2.0 / 3.0, &u2, &mut l)
            }
        };
        Ok((next, dt, info, violated))
    }

    fn to_state(&self, time: f64, u: Buffers) -> Result<State> {
        let mut fields = Vec::with_capacity(u.len());
        for (compartment, values) in u.into_iter().enumerate() {
            if let Some(cell) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState {
                    compartment,
                    cell,
                    time,
                });
            }
            fields.push(Field::from_values(&self.grid, values)?);
        }
        State::new(time, fields)
    }

    /// Advances `state` by exactly `dt`.
    pub fn rk_step(&self, state: &State, dt: f64) -> Result<State> {
        self.check_state(state)?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
        }
        let u: Buffers = state.fields().iter().map(|f| f.values().to_vec()).collect();
        let (next, dt, _, _) = self.advance(&u, Some(dt), f64::INFINITY)?;
        self.to_state(state.time() + dt, next)
    }

    /// Integrates from `init` until `t_final`, feeding snapshots to `sinks`.
    ///
    /// Solver failures (non-finite values, strict CFL violations) do not
    /// return `Err`; they stop the run and are reported in
    /// [`RunSummary::abort`] together with the last finite state.
    pub fn run(&self, init: &State, sinks: &mut [&mut dyn SnapshotSink]) -> Result<RunOutcome> {
        self.check_state(init)?;
        init.check_nonnegative()?;
        let started = Instant::now();
        let t0 = init.time();
        let t_final = self.config.t_final;
        let mut state = init.clone();
        let mass = |s: &State| -> f64 {
            s.fields()
                .iter()
                .map(|f| f.values().iter().sum::<f64>() * self.grid.cell_measure())
                .sum()
        };
        let linf = |s: &State| s.fields().iter().map(Field::max).fold(0.0, f64::max);
        let initial_mass = mass(init);
        let mut summary = RunSummary {
            steps: 0,
            min_value: init.min_value(),
            max_linf: linf(init),
            initial_mass,
            final_mass: initial_mass,
            max_mass_drift: 0.0,
            max_speed: 0.0,
            max_cfl_number: 0.0,
            cfl_warnings: 0,
            wall_time: Duration::ZERO,
            abort: None,
        };
        for sink in sinks.iter_mut() {
            sink.on_snapshot(0, &state);
        }
        // fixed steps land on t0 + k·dt exactly; the last one is clipped
        let fixed = match self.config.step {
            TimeStep::Fixed(dt) => Some(dt),
            TimeStep::Cfl(_) => None,
        };
        let mut step = 0usize;
        let mut last_emitted = 0usize;
        while state.time() < t_final {
            let u: Buffers = state.fields().iter().map(|f| f.values().to_vec()).collect();
            let (target_time, dt_request) = match fixed {
                Some(dt) => {
                    let t_next = (t0 + (step + 1) as f64 * dt).min(t_final);
                    (Some(t_next), Some(t_next - state.time()))
                }
                None => (None, None),
            };
            let advanced = self.advance(&u, dt_request, t_final - state.time());
            let result = advanced.and_then(|(next, dt, info, violated)| {
                let time = match target_time {
                    Some(t) => t,
                    None if state.time() + dt >= t_final * (1.0 - 1e-15) => t_final,
                    None => state.time() + dt,
                };
                summary.max_speed = summary.max_speed.max(info.max_speed);
                summary.max_cfl_number = summary
                    .max_cfl_number
                    .max(dt / self.bound(info, STABILITY_CFL));
                summary.cfl_warnings += usize::from(violated);
                self.to_state(time, next)
            });
            match result {
                Ok(next) => state = next,
                Err(error) => {
                    for sink in sinks.iter_mut() {
                        sink.on_abort(step, &state, &error);
                    }
                    summary.abort = Some(error);
                    break;
                }
            }
            step += 1;
            summary.steps = step;
            summary.min_value = summary.min_value.min(state.min_value());
            summary.max_linf = summary.max_linf.max(linf(&state));
            let m = mass(&state);
            summary.final_mass = m;
            let drift = if initial_mass > 0.0 {
                (m - initial_mass).abs() / initial_mass
            } else {
                (m - initial_mass).abs()
            };
            summary.max_mass_drift = summary.max_mass_drift.max(drift);
            let every = self.config.snapshot_every;
            if every > 0 && step % every == 0 {
                for sink in sinks.iter_mut() {
                    sink.on_snapshot(step, &state);
                }
                last_emitted = step;
            }
        }
        if summary.abort.is_none() && last_emitted != step {
            for sink in sinks.iter_mut() {
                sink.on_snapshot(step, &state);
            }
        }
        summary.wall_time = started.elapsed();
        Ok(RunOutcome { state, summary })
    }
}

/// Assembled right-hand side of `model` at `state`.
pub fn full_rhs(model: &ModelSpec, state: &State) -> Result<Vec<Field>> {
    Solver::new(model, state.grid(), SolverConfig::fixed(1.0, 1.0))?.full_rhs(state)
}

/// One SSP2 step of size `dt` under strict CFL checking.
pub fn rk_step(model: &ModelSpec, state: &State, dt: f64) -> Result<State> {
    Solver::new(model, state.grid(), SolverConfig::fixed(dt, dt))?.rk_step(state, dt)
}

/// Runs `model` from `init` under `config`.
pub fn run(
    model: &ModelSpec,
    init: &State,
    config: SolverConfig,
    sinks: &mut [&mut dyn SnapshotSink],
) -> Result<RunOutcome> {
    Solver::new(model, init.grid(), config)?.run(init, sinks)
}
