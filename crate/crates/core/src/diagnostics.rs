//! Mass, norms, positivity tracking, and convergence studies.

use crate::equilibria::{support_width, SUPPORT_THRESHOLD};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::models::ModelSpec;
use crate::solver::{run, SnapshotSink, SolverConfig, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    Linf,
}

/// `Σⱼ uⱼ |cell|`, summed in ascending cell order.
pub fn total_mass(grid: &Grid, field: &Field) -> f64 {
    field.values().iter().sum::<f64>() * grid.cell_measure()
}

/// Discrete cell-measure-weighted norm; `Linf` is the plain maximum.
pub fn lp_norm(grid: &Grid, field: &Field, p: Norm) -> f64 {
    let v = field.values();
    match p {
        Norm::L1 => v.iter().map(|x| x.abs()).sum::<f64>() * grid.cell_measure(),
        Norm::L2 => (v.iter().map(|x| x * x).sum::<f64>() * grid.cell_measure()).sqrt(),
        Norm::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
    }
}

/// Discrete L² norm of the forward-difference gradient, zero ghosts
/// included.
pub fn gradient_l2(grid: &Grid, field: &Field) -> f64 {
    let nx = grid.n(0);
    let ny = if grid.dim() == 2 { grid.n(1) } else { 1 };
    let v = field.values();
    let at = |ix: usize, iy: usize| if ix < nx && iy < ny { v[iy * nx + ix] } else { 0.0 };
    let mut sum = 0.0;
    for iy in 0..ny {
        for ix in 0..=nx {
            let left = if ix == 0 { 0.0 } else { at(ix - 1, iy) };
            let d = (at(ix, iy) - left) / grid.dx(0);
            sum += d * d;
        }
    }
    if grid.dim() == 2 {
        for iy in 0..=ny {
            for ix in 0..nx {
                let below = if iy == 0 { 0.0 } else { at(ix, iy - 1) };
                let d = (at(ix, iy) - below) / grid.dx(1);
                sum += d * d;
            }
        }
    }
    (sum * grid.cell_measure()).sqrt()
}

/// Time series of run diagnostics, one row per recorded snapshot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticSeries {
    pub times: Vec<f64>,
    pub total_mass: Vec<f64>,
    /// `per_compartment_mass[row][compartment]`
    pub per_compartment_mass: Vec<Vec<f64>>,
    pub linf_per_compartment: Vec<Vec<f64>>,
    pub min_value: Vec<f64>,
    pub support_width_n: Vec<f64>,
    pub gradient_l2_n: Vec<f64>,
}

impl DiagnosticSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Appends a row for `state`; states not strictly later than the last
    /// row are ignored.
    pub fn record(&mut self, state: &State) {
        if self.times.last().is_some_and(|&t| state.time() <= t) {
            return;
        }
        let grid = state.grid();
        let masses: Vec<f64> = state.fields().iter().map(|f| total_mass(grid, f)).collect();
        let n = state.total_density();
        self.times.push(state.time());
        self.total_mass.push(masses.iter().sum());
        self.per_compartment_mass.push(masses);
        self.linf_per_compartment
            .push(state.fields().iter().map(|f| lp_norm(grid, f, Norm::Linf)).collect());
        self.min_value.push(state.min_value());
        self.support_width_n.push(support_width(&n, SUPPORT_THRESHOLD));
        self.gradient_l2_n.push(gradient_l2(grid, &n));
    }

    /// Largest relative deviation of total mass from the first row.
    pub fn max_relative_mass_drift(&self) -> f64 {
        let Some(&m0) = self.total_mass.first() else {
            return 0.0;
        };
        self.total_mass
            .iter()
            .map(|m| (m - m0).abs() / if m0 > 0.0 { m0 } else { 1.0 })
            .fold(0.0, f64::max)
    }

    pub fn overall_min(&self) -> f64 {
        self.min_value.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl SnapshotSink for DiagnosticSeries {
    fn on_snapshot(&mut self, _step: usize, state: &State) {
        self.record(state);
    }
}

/// Conservative restriction of a field onto a grid with half the cells
/// per axis, by averaging each 2 (or 2×2) block.
pub fn restrict(fine: &Field, coarse: &Grid) -> Result<Field> {
    let fg = fine.grid();
    if fg.dim() != coarse.dim()
        || (0..fg.dim()).any(|a| fg.n(a) != 2 * coarse.n(a) || fg.lo(a) != coarse.lo(a) || fg.hi(a) != coarse.hi(a))
    {
        return Err(Error::GridMismatch);
    }
    let v = fine.values();
    let fnx = fg.n(0);
    let values = (0..coarse.cell_count())
        .map(|i| {
            let [cx, cy] = coarse.unravel(i);
            if coarse.dim() == 1 {
                0.5 * (v[2 * cx] + v[2 * cx + 1])
            } else {
                let row0 = 2 * cy * fnx;
                let row1 = (2 * cy + 1) * fnx;
                0.25 * (v[row0 + 2 * cx] + v[row0 + 2 * cx + 1] + v[row1 + 2 * cx] + v[row1 + 2 * cx + 1])
            }
        })
        .collect();
    Field::from_values(coarse, values)
}

/// Fitted convergence order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Order {
    /// Every difference vanished.
    Exact,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementReport {
    pub dx: Vec<f64>,
    /// L1 difference between level k and the restriction of level k+1.
    pub differences: Vec<f64>,
    /// `log₂(differences[k] / differences[k+1])`
    pub pairwise_orders: Vec<f64>,
    /// Order between the two finest differences.
    pub order: Order,
}

fn check_ladder(dx_list: &[f64]) -> Result<()> {
    if dx_list.len() < 3 {
        return Err(Error::InvalidStudy(format!(
            "refinement needs at least 3 widths, got {}",
            dx_list.len()
        )));
    }
    for w in dx_list.windows(2) {
        if !(w[1] > 0.0 && (w[0] / w[1] - 2.0).abs() < 1e-9) {
            return Err(Error::InvalidStudy(format!(
                "widths must halve at every level, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Runs the same problem on nested grids covering `domain` (whose bounds
/// are reused) with cell widths `dx_list`, and measures the observed order
/// of the L1 differences between successive levels.
pub fn refinement_order(
    model: &ModelSpec,
    init_fn: &(dyn Fn(&Grid) -> Result<State> + Sync),
    config: SolverConfig,
    domain: &Grid,
    dx_list: &[f64],
) -> Result<RefinementReport> {
    check_ladder(dx_list)?;
    let grids = dx_list
        .iter()
        .map(|&dx| {
            let counts: Vec<usize> = (0..domain.dim())
                .map(|a| {
                    let n = (domain.hi(a) - domain.lo(a)) / dx;
                    let rounded = n.round();
                    if (n - rounded).abs() > 1e-6 {
                        Err(Error::InvalidStudy(format!("dx={dx} does not divide the domain")))
                    } else {
                        Ok(rounded as usize)
                    }
                })
                .collect::<Result<_>>()?;
            let lo: Vec<f64> = (0..domain.dim()).map(|a| domain.lo(a)).collect();
            let hi: Vec<f64> = (0..domain.dim()).map(|a| domain.hi(a)).collect();
            crate::grid::build_grid(&lo, &hi, &counts)
        })
        .collect::<Result<Vec<_>>>()?;
    let finals = run_all(grids.len(), |k| {
        let init = init_fn(&grids[k])?;
        Ok(run(model, &init, config, &mut [])?.into_result()?.state)
    })?;
    let mut differences = Vec::with_capacity(grids.len() - 1);
    for k in 0..grids.len() - 1 {
        let mut diff = 0.0;
        for (coarse, fine) in finals[k].fields().iter().zip(finals[k + 1].fields()) {
            let r = restrict(fine, &grids[k])?;
            let d: Vec<f64> = coarse.values().iter().zip(r.values()).map(|(a, b)| a - b).collect();
            diff += lp_norm(&grids[k], &Field::from_values(&grids[k], d)?, Norm::L1);
        }
        differences.push(diff);
    }
    let pairwise_orders: Vec<f64> = differences.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let order = if differences.iter().all(|&d| d == 0.0) {
        Order::Exact
    } else {
        Order::Value(*pairwise_orders.last().unwrap())
    };
    Ok(RefinementReport {
        dx: dx_list.to_vec(),
        differences,
        pairwise_orders,
        order,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViscosityTable {
    pub eps: Vec<f64>,
    /// `distances[row][compartment] = ‖u_ε − u_0‖_{L²}` at the final time.
    pub distances: Vec<Vec<f64>>,
}

impl ViscosityTable {
    /// Whether distances strictly decrease with ε for every compartment.
    pub fn is_monotone(&self) -> bool {
        self.distances
            .windows(2)
            .all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| b < a))
    }

    /// Least-squares slope of `log d` against `log ε` per compartment, over
    /// rows with positive ε and distance.
    pub fn slopes(&self) -> Vec<Option<f64>> {
        let n = self.distances.first().map_or(0, Vec::len);
        (0..n)
            .map(|c| {
                let pts: Vec<(f64, f64)> = self
                    .eps
                    .iter()
                    .zip(&self.distances)
                    .filter(|(e, d)| **e > 0.0 && d[c] > 0.0)
                    .map(|(e, d)| (e.ln(), d[c].ln()))
                    .collect();
                if pts.len() < 2 {
                    return None;
                }
                let m = pts.len() as f64;
                let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
                let (mx, my) = (sx / m, sy / m);
                let (num, den) = pts.iter().fold((0.0, 0.0), |(n, d), (x, y)| {
                    (n + (x - mx) * (y - my), d + (x - mx) * (x - mx))
                });
                Some(num / den)
            })
            .collect()
    }
}

/// Compares runs at each ε in `eps_list` against a reference run at ε = 0,
/// all from `init` under `config`.
pub fn viscosity_study(
    model: &ModelSpec,
    init: &State,
    config: SolverConfig,
    eps_list: &[f64],
) -> Result<ViscosityTable> {
    if eps_list.is_empty() {
        return Err(Error::InvalidStudy("empty epsilon list".into()));
    }
    if eps_list.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::InvalidStudy("epsilons must be finite and non-negative".into()));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidStudy("epsilons must be strictly decreasing".into()));
    }
    let models = std::iter::once(0.0)
        .chain(eps_list.iter().copied())
        .map(|e| model.with_epsilon(e))
        .collect::<Result<Vec<_>>>()?;
    let finals = run_all(models.len(), |k| {
        Ok(run(&models[k], init, config, &mut [])?.into_result()?.state)
    })?;
    let grid = init.grid();
    let reference = &finals[0];
    let distances = finals[1..]
        .iter()
        .map(|s| {
            s.fields()
                .iter()
                .zip(reference.fields())
                .map(|(a, b)| {
                    let d: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
                    Ok(lp_norm(grid, &Field::from_values(grid, d)?, Norm::L2))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ViscosityTable {
        eps: eps_list.to_vec(),
        distances,
    })
}

/// Runs independent member simulations on separate threads.
fn run_all<F>(count: usize, job: F) -> Result<Vec<State>>
where
    F: Fn(usize) -> Result<State> + Sync,
{
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..count).map(|k| scope.spawn({
            let job = &job;
            move || job(k)
        })).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("study member panicked"))
            .collect()
    })
}
