//! Interaction potentials and the discrete convolution `∇W ∗ u`.
//!
//! Convolutions are evaluated by direct midpoint summation against a table
//! of kernel gradients indexed by lattice offset. Every output sample is
//! accumulated over source cells in ascending index order, so results are
//! bit-reproducible regardless of how the loops are arranged.

use std::io::Read;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::solver::State;

/// Sign convention for Gaussian potentials. An attractive potential
/// increases with distance, so its gradient pulls mass together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interaction {
    Attractive,
    Repulsive,
}

impl Interaction {
    fn sign(self) -> f64 {
        match self {
            Interaction::Attractive => -1.0,
            Interaction::Repulsive => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// `W(x) = x² − γ|x|` in one dimension: repulsive below `|x| = γ/2`,
    /// attractive beyond.
    QuadAbs { gamma: f64 },
    /// `W(x) = ∓A exp(−|x|²/(2σ²))`, minus for attractive.
    Gaussian {
        amplitude: f64,
        sigma: f64,
        interaction: Interaction,
    },
    Zero,
    Tabulated(TabulatedKernel),
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::QuadAbs { gamma } if !(gamma.is_finite() && *gamma > 0.0) => Err(
                Error::InvalidKernel(format!("quadabs gamma must be positive, got {gamma}")),
            ),
            KernelSpec::Gaussian {
                amplitude, sigma, ..
            } if !(amplitude.is_finite() && sigma.is_finite() && *sigma > 0.0) => {
                Err(Error::InvalidKernel(format!(
                    "gaussian needs finite amplitude and positive sigma, got A={amplitude}, sigma={sigma}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Whether the kernel can be evaluated in `dim` space dimensions.
    pub fn supports_dim(&self, dim: usize) -> bool {
        match self {
            KernelSpec::QuadAbs { .. } => dim == 1,
            KernelSpec::Tabulated(t) => t.dim == dim,
            KernelSpec::Gaussian { .. } | KernelSpec::Zero => (1..=2).contains(&dim),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, KernelSpec::Zero)
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.supports_dim(dim) {
            return Ok(());
        }
        let expected = match self {
            KernelSpec::Tabulated(t) => t.dim,
            _ => 1,
        };
        Err(Error::DimensionMismatch { expected, got: dim })
    }

    /// The potential itself. Tabulated kernels only carry gradients.
    pub fn potential(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        match self {
            KernelSpec::QuadAbs { gamma } => Ok(x[0] * x[0] - gamma * x[0].abs()),
            KernelSpec::Gaussian {
                amplitude,
                sigma,
                interaction,
            } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                Ok(interaction.sign() * amplitude * (-r2 / (2.0 * sigma * sigma)).exp())
            }
            KernelSpec::Zero => Ok(0.0),
            KernelSpec::Tabulated(_) => Err(Error::InvalidKernel(
                "tabulated kernels carry gradients only".into(),
            )),
        }
    }
}

/// Analytic gradient of `spec` at `x`. The second component is zero in 1D.
///
/// The `|x|` term uses `sign(0) = 0`, so `QuadAbs` has zero gradient at the
/// origin.
pub fn eval_gradient(spec: &KernelSpec, x: &[f64]) -> Result<[f64; 2]> {
    spec.check_dim(x.len())?;
    Ok(gradient_unchecked(spec, x))
}

fn gradient_unchecked(spec: &KernelSpec, x: &[f64]) -> [f64; 2] {
    match spec {
        KernelSpec::QuadAbs { gamma } => {
            let s = if x[0] > 0.0 {
                1.0
            } else if x[0] < 0.0 {
                -1.0
            } else {
                0.0
            };
            [2.0 * x[0] - gamma * s, 0.0]
        }
        KernelSpec::Gaussian {
            amplitude,
            sigma,
            interaction,
        } => {
            let s2 = sigma * sigma;
            let r2: f64 = x.iter().map(|v| v * v).sum();
            let scale = -interaction.sign() * amplitude / s2 * (-r2 / (2.0 * s2)).exp();
            let y = if x.len() == 2 { x[1] } else { 0.0 };
            [scale * x[0], scale * y]
        }
        KernelSpec::Zero => [0.0, 0.0],
        KernelSpec::Tabulated(t) => t.gradient(x),
    }
}

/// A kernel known only through gradient samples on a rectilinear lattice of
/// offsets symmetric about the origin. Off-lattice points are interpolated
/// (linear in 1D, bilinear in 2D); points outside the lattice have zero
/// gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedKernel {
    dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    // x fastest
    grad: Vec<[f64; 2]>,
}

impl TabulatedKernel {
    /// Builds a table from `(offset, gradient)` samples. In 1D each offset and
    /// gradient has one component; in 2D two. The offsets must form a full
    /// product lattice, symmetric about zero, and the gradients must be odd.
    pub fn new(offsets: &[Vec<f64>], gradients: &[Vec<f64>]) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidKernel(m));
        if offsets.is_empty() || offsets.len() != gradients.len() {
            return bad("tabulated kernel needs matching, non-empty offset and gradient lists".into());
        }
        let dim = offsets[0].len();
        if !(1..=2).contains(&dim)
            || offsets.iter().any(|o| o.len() != dim)
            || gradients.iter().any(|g| g.len() != dim)
        {
            return bad("inconsistent tabulated kernel dimensions".into());
        }
        if offsets.iter().chain(gradients).flatten().any(|v| !v.is_finite()) {
            return bad("tabulated kernel contains non-finite entries".into());
        }
        let axis_values = |axis: usize| {
            let mut v: Vec<f64> = offsets.iter().map(|o| o[axis]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let xs = axis_values(0);
        let ys = if dim == 2 { axis_values(1) } else { vec![0.0] };
        if xs.len() * ys.len() != offsets.len() {
            return bad("tabulated offsets must form a full lattice without duplicates".into());
        }
        for axis_vals in [&xs, &ys] {
            let m = axis_vals.len();
            if (0..m).any(|i| axis_vals[i] != -axis_vals[m - 1 - i]) {
                return bad("tabulated offsets must be symmetric about zero".into());
            }
        }
        let mut grad = vec![[f64::NAN; 2]; offsets.len()];
        for (o, g) in offsets.iter().zip(gradients) {
            let ix = xs.binary_search_by(|v| v.total_cmp(&o[0])).unwrap();
            let iy = if dim == 2 {
                ys.binary_search_by(|v| v.total_cmp(&o[1])).unwrap()
            } else {
                0
            };
            grad[iy * xs.len() + ix] = [g[0], if dim == 2 { g[1] } else { 0.0 }];
        }
        let scale = grad
            .iter()
            .flat_map(|g| g.iter().map(|v| v.abs()))
            .fold(0.0, f64::max);
        let (nx, ny) = (xs.len(), ys.len());
        for iy in 0..ny {
            for ix in 0..nx {
                let g = grad[iy * nx + ix];
                let m = grad[(ny - 1 - iy) * nx + (nx - 1 - ix)];
                if (g[0] + m[0]).abs() > 1e-12 * scale || (g[1] + m[1]).abs() > 1e-12 * scale {
                    return bad(format!(
                        "tabulated gradient is not odd at offset ({}, {})",
                        xs[ix], ys[iy]
                    ));
                }
            }
        }
        Ok(Self { dim, xs, ys, grad })
    }

    /// Samples the gradient of another kernel on a symmetric lattice with
    /// `half_width` points on each side of zero per axis.
    pub fn sample(spec: &KernelSpec, dim: usize, spacing: f64, half_width: usize) -> Result<Self> {
        let m = half_width as i64;
        let mut offsets = Vec::new();
        let mut grads = Vec::new();
        let ys: Vec<i64> = if dim == 2 { (-m..=m).collect() } else { vec![0] };
        for &jy in &ys {
            for jx in -m..=m {
                let o: Vec<f64> = if dim == 2 {
                    vec![jx as f64 * spacing, jy as f64 * spacing]
                } else {
                    vec![jx as f64 * spacing]
                };
                let g = eval_gradient(spec, &o)?;
                grads.push(g[..dim].to_vec());
                offsets.push(o);
            }
        }
        Self::new(&offsets, &grads)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn gradient(&self, x: &[f64]) -> [f64; 2] {
        let locate = |axis: &[f64], v: f64| -> Option<(usize, f64)> {
            let m = axis.len();
            if m == 1 {
                return (v == axis[0]).then_some((0, 0.0));
            }
            if v < axis[0] || v > axis[m - 1] {
                return None;
            }
            let i = axis.partition_point(|&a| a <= v).clamp(1, m - 1) - 1;
            Some((i, (v - axis[i]) / (axis[i + 1] - axis[i])))
        };
        let Some((ix, tx)) = locate(&self.xs, x[0]) else {
            return [0.0, 0.0];
        };
        let (iy, ty) = if self.dim == 2 {
            match locate(&self.ys, x[1]) {
                Some(v) => v,
                None => return [0.0, 0.0],
            }
        } else {
            (0, 0.0)
        };
        let nx = self.xs.len();
        let at = |i: usize, j: usize| self.grad[j * nx + i];
        let lerp = |a: [f64; 2], b: [f64; 2], t: f64| {
            if t == 0.0 {
                a
            } else {
                [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
            }
        };
        let ix1 = (ix + 1).min(nx - 1);
        let row0 = lerp(at(ix, iy), at(ix1, iy), tx);
        if self.dim == 1 {
            return row0;
        }
        let iy1 = (iy + 1).min(self.ys.len() - 1);
        let row1 = lerp(at(ix, iy1), at(ix1, iy1), tx);
        lerp(row0, row1, ty)
    }
}

/// Reads a tabulated kernel from CSV: `offset,gradient` rows in 1D or
/// `dx_offset,dy_offset,grad_x,grad_y` rows in 2D. A non-numeric first row
/// is treated as a header; `#` starts a comment line.
pub fn tabulated_from_csv<R: Read>(reader: R) -> Result<TabulatedKernel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader);
    let mut offsets = Vec::new();
    let mut grads = Vec::new();
    let mut width = None;
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::TableParse(e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(|f| f.parse::<f64>()).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::TableParse(format!("row {}: {e}", line + 1))),
        };
        if row.len() != 2 && row.len() != 4 {
            return Err(Error::TableParse(format!(
                "row {}: expected 2 or 4 columns, got {}",
                line + 1,
                row.len()
            )));
        }
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(Error::TableParse(format!("row {}: column count changed", line + 1)));
        }
        let d = row.len() / 2;
        offsets.push(row[..d].to_vec());
        grads.push(row[d..].to_vec());
    }
    TabulatedKernel::new(&offsets, &grads)
}

/// Where velocity samples are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Targets {
    /// Cell centers, returning gradient component `component`.
    Centers { component: usize },
    /// Faces normal to `axis`, returning the normal component. Interfaces
    /// include the two domain boundaries.
    Interfaces { axis: usize },
}

impl Targets {
    fn component(self) -> usize {
        match self {
            Targets::Centers { component } => component,
            Targets::Interfaces { axis } => axis,
        }
    }

    /// Number of targets per axis.
    pub fn shape(self, grid: &Grid) -> [usize; 2] {
        match self {
            Targets::Centers { .. } => [grid.n(0), if grid.dim() == 2 { grid.n(1) } else { 1 }],
            Targets::Interfaces { axis } => grid.interface_shape(axis),
        }
    }

    /// Coordinates of target `index` (flat, x fastest).
    pub fn position(self, grid: &Grid, index: usize) -> [f64; 2] {
        let [mx, _] = self.shape(grid);
        let k = [index % mx, index / mx];
        let mut p = [0.0; 2];
        for (axis, slot) in p.iter_mut().enumerate().take(grid.dim()) {
            *slot = match self {
                Targets::Interfaces { axis: a } if a == axis => grid.interface(axis, k[axis]),
                _ => grid.center(axis, k[axis]),
            };
        }
        p
    }

    fn validate(self, grid: &Grid) -> Result<()> {
        let c = self.component();
        if c >= grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: grid.dim(),
                got: c + 1,
            });
        }
        Ok(())
    }
}

/// Precomputed gradient table for one kernel and one target set.
#[derive(Debug, Clone)]
pub struct ConvolutionPlan {
    grid: Grid,
    targets: Targets,
    target_shape: [usize; 2],
    source_shape: [usize; 2],
    // per-axis table extent; row-major with x fastest
    table_shape: [usize; 2],
    table: Vec<f64>,
    // per-axis factors of the table when the gradient is separable
    factors: Option<[Vec<f64>; 2]>,
}

/// Per-axis factors `f₀(x)·f₁(y)` of a 2D Gaussian gradient component on
/// the table offsets.
fn gaussian_factors(
    spec: &KernelSpec,
    component: usize,
    offsets: [&dyn Fn(usize) -> f64; 2],
    table_shape: [usize; 2],
) -> Option<[Vec<f64>; 2]> {
    let KernelSpec::Gaussian {
        amplitude,
        sigma,
        interaction,
    } = spec
    else {
        return None;
    };
    let factor = |axis: usize| -> Vec<f64> {
        (0..table_shape[axis])
            .map(|k| {
                let x = offsets[axis](k);
                let e = (-x * x / (2.0 * sigma * sigma)).exp();
                if axis == component {
                    -interaction.sign() * amplitude * x / (sigma * sigma) * e
                } else {
                    e
                }
            })
            .collect()
    };
    Some([factor(0), factor(1)])
}

impl ConvolutionPlan {
    pub fn new(grid: &Grid, spec: &KernelSpec, targets: Targets) -> Result<Self> {
        spec.validate()?;
        spec.check_dim(grid.dim())?;
        targets.validate(grid)?;
        let target_shape = targets.shape(grid);
        let source_shape = Targets::Centers { component: 0 }.shape(grid);
        let table_shape = [
            target_shape[0] + source_shape[0] - 1,
            target_shape[1] + source_shape[1] - 1,
        ];
        // offset along an axis = (d + shift) * dx with d = target - source
        let shift = |axis: usize| match targets {
            Targets::Interfaces { axis: a } if a == axis => -0.5,
            _ => 0.0,
        };
        let component = targets.component();
        let mut table = Vec::with_capacity(table_shape[0] * table_shape[1]);
        let mut x = [0.0; 2];
        for iy in 0..table_shape[1] {
            if grid.dim() == 2 {
                let d = iy as f64 - (source_shape[1] - 1) as f64;
                x[1] = (d + shift(1)) * grid.dx(1);
            }
            for ix in 0..table_shape[0] {
                let d = ix as f64 - (source_shape[0] - 1) as f64;
                x[0] = (d + shift(0)) * grid.dx(0);
                table.push(gradient_unchecked(spec, &x[..grid.dim()])[component]);
            }
        }
        let factors = if grid.dim() == 2 {
            let offset = |axis: usize| {
                move |k: usize| (k as f64 - (source_shape[axis] - 1) as f64 + shift(axis)) * grid.dx(axis)
            };
            let (ox, oy) = (offset(0), offset(1));
            gaussian_factors(spec, component, [&ox, &oy], table_shape)
        } else {
            None
        };
        Ok(Self {
            grid: *grid,
            targets,
            target_shape,
            source_shape,
            table_shape,
            table,
            factors,
        })
    }

    pub fn targets(&self) -> Targets {
        self.targets
    }

    pub fn output_len(&self) -> usize {
        self.target_shape[0] * self.target_shape[1]
    }

    /// Accumulates `scale · (∇W ∗ density)` into `out`.
    pub fn accumulate(&self, density: &[f64], scale: f64, out: &mut [f64]) {
        debug_assert_eq!(density.len(), self.grid.cell_count());
        debug_assert_eq!(out.len(), self.output_len());
        let [nx, ny] = self.source_shape;
        let [mx, my] = self.target_shape;
        let lx = self.table_shape[0];
        let weight = scale * self.grid.cell_measure();
        if let Some([fx, fy]) = &self.factors {
            // contract y first, then x: O(n³) instead of O(n⁴)
            let mut partial = vec![0.0; my * nx];
            for ty in 0..my {
                let acc = &mut partial[ty * nx..(ty + 1) * nx];
                for jy in 0..ny {
                    let f = fy[ty + ny - 1 - jy];
                    for (a, u) in acc.iter_mut().zip(&density[jy * nx..(jy + 1) * nx]) {
                        *a += f * u;
                    }
                }
            }
            for ty in 0..my {
                let acc = &mut out[ty * mx..(ty + 1) * mx];
                for jx in 0..nx {
                    let p = partial[ty * nx + jx];
                    if p == 0.0 {
                        continue;
                    }
                    let w = p * weight;
                    let row = &fx[nx - 1 - jx..nx - 1 - jx + mx];
                    for (a, t) in acc.iter_mut().zip(row) {
                        *a += t * w;
                    }
                }
            }
            return;
        }
        for jy in 0..ny {
            for jx in 0..nx {
                let u = density[jy * nx + jx];
                if u == 0.0 {
                    continue;
                }
                let w = u * weight;
                for ty in 0..my {
                    let base = (ty + ny - 1 - jy) * lx + (nx - 1 - jx);
                    let row = &self.table[base..base + mx];
                    let acc = &mut out[ty * mx..(ty + 1) * mx];
                    for (a, t) in acc.iter_mut().zip(row) {
                        *a += t * w;
                    }
                }
            }
        }
    }

    pub fn apply(&self, density: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_len()];
        self.accumulate(density, 1.0, &mut out);
        out
    }
}

/// `(∇W ∗ u)(p) ≈ Σⱼ ∇W(p − xⱼ) uⱼ |cell|` at every target `p`, with zero
/// density outside the grid.
pub fn convolve_gradient(
    grid: &Grid,
    density: &Field,
    spec: &KernelSpec,
    targets: Targets,
) -> Result<Vec<f64>> {
    if density.grid() != grid {
        return Err(Error::GridMismatch);
    }
    Ok(ConvolutionPlan::new(grid, spec, targets)?.apply(density.values()))
}

/// Interaction kernels for every ordered pair of compartments.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    names: Vec<String>,
    // row-major: entries[xi * n + eta] acts on compartment xi through eta
    entries: Vec<KernelSpec>,
    shared: bool,
}

impl KernelMatrix {
    /// Every pair uses the same kernel.
    pub fn shared<S: AsRef<str>>(names: &[S], spec: KernelSpec) -> Result<Self> {
        let n = names.len();
        Self::from_rows(names, vec![vec![spec; n]; n])
    }

    /// Per-pair kernels; `rows[xi][eta]` is `W_{xi,eta}`.
    pub fn from_rows<S: AsRef<str>>(names: &[S], rows: Vec<Vec<KernelSpec>>) -> Result<Self> {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        let n = names.len();
        if n == 0 {
            return Err(Error::ArityMismatch {
                expected: 1,
                got: 0,
            });
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || names[..i].contains(name) {
                return Err(Error::InvalidKernel(format!(
                    "compartment names must be unique and non-empty, got `{name}`"
                )));
            }
        }
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::ArityMismatch {
                expected: n,
                got: rows.len(),
            });
        }
        let entries: Vec<KernelSpec> = rows.into_iter().flatten().collect();
        for e in &entries {
            e.validate()?;
        }
        let shared = entries.iter().all(|e| *e == entries[0]);
        Ok(Self {
            names,
            entries,
            shared,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownCompartment(name.to_string()))
    }

    pub fn get(&self, xi: usize, eta: usize) -> &KernelSpec {
        &self.entries[xi * self.names.len() + eta]
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }

    /// The common kernel when all entries coincide.
    pub fn shared_kernel(&self) -> Option<&KernelSpec> {
        self.shared.then(|| &self.entries[0])
    }

    pub fn supports_dim(&self, dim: usize) -> bool {
        self.entries.iter().all(|e| e.supports_dim(dim))
    }
}

/// `−Σ_η ∇W_{ξη} ∗ u_η` for compartment `xi`, summed over `η` in order.
pub fn velocity_for_compartment(
    grid: &Grid,
    state: &State,
    km: &KernelMatrix,
    xi: usize,
    targets: Targets,
) -> Result<Vec<f64>> {
    if xi >= km.len() {
        return Err(Error::UnknownCompartment(format!("#{xi}")));
    }
    if state.fields().len() != km.len() {
        return Err(Error::ArityMismatch {
            expected: km.len(),
            got: state.fields().len(),
        });
    }
    let mut out = None::<Vec<f64>>;
    for (eta, field) in state.fields().iter().enumerate() {
        if field.grid() != grid {
            return Err(Error::GridMismatch);
        }
        let plan = ConvolutionPlan::new(grid, km.get(xi, eta), targets)?;
        let acc = out.get_or_insert_with(|| vec![0.0; plan.output_len()]);
        plan.accumulate(field.values(), -1.0, acc);
    }
    Ok(out.unwrap_or_default())
}

/// Interface velocities for every compartment, reusing work across pairs
/// that share a kernel.
///
/// Within one row, compartments seen through the same kernel are summed
/// before convolving (the convolution is linear), and rows that are
/// identical are evaluated once.
#[derive(Debug, Clone)]
pub struct VelocityPlan {
    grid: Grid,
    // plans[kernel][axis]
    plans: Vec<Vec<ConvolutionPlan>>,
    // per compartment: (kernel id, compartments convolved with it)
    rows: Vec<Vec<(usize, Vec<usize>)>>,
    // first compartment with an identical row
    row_source: Vec<usize>,
}

impl VelocityPlan {
    pub fn new(grid: &Grid, km: &KernelMatrix) -> Result<Self> {
        let n = km.len();
        let mut unique: Vec<&KernelSpec> = Vec::new();
        let mut rows = Vec::with_capacity(n);
        for xi in 0..n {
            let mut row: Vec<(usize, Vec<usize>)> = Vec::new();
            for eta in 0..n {
                let spec = km.get(xi, eta);
                if spec.is_zero() {
                    continue;
                }
                let id = match unique.iter().position(|u| *u == spec) {
                    Some(id) => id,
                    None => {
                        unique.push(spec);
                        unique.len() - 1
                    }
                };
                match row.iter_mut().find(|(k, _)| *k == id) {
                    Some((_, etas)) => etas.push(eta),
                    None => row.push((id, vec![eta])),
                }
            }
            rows.push(row);
        }
        let row_source = (0..n)
            .map(|xi| (0..=xi).find(|&o| rows[o] == rows[xi]).unwrap())
            .collect();
        let plans = unique
            .iter()
            .map(|spec| {
                (0..grid.dim())
                    .map(|axis| ConvolutionPlan::new(grid, spec, Targets::Interfaces { axis }))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: *grid,
            plans,
            rows,
            row_source,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `velocities[xi][axis]` holds the normal velocity on every face
    /// normal to `axis`.
    pub fn interface_velocities(&self, fields: &[&[f64]]) -> Vec<Vec<Vec<f64>>> {
        let cells = self.grid.cell_count();
        let mut out: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.rows.len());
        let mut scratch = vec![0.0; cells];
        for (xi, row) in self.rows.iter().enumerate() {
            let source = self.row_source[xi];
            if source != xi {
                let copy = out[source].clone();
                out.push(copy);
                continue;
            }
            let mut v: Vec<Vec<f64>> = (0..self.grid.dim())
                .map(|axis| vec![0.0; self.grid.interface_count(axis)])
                .collect();
            for (kernel, etas) in row {
                let density: &[f64] = if etas.len() == 1 {
                    fields[etas[0]]
                } else {
                    scratch.copy_from_slice(fields[etas[0]]);
                    for &eta in &etas[1..] {
                        for (s, u) in scratch.iter_mut().zip(fields[eta]) {
                            *s += u;
                        }
                    }
                    &scratch
                };
                for (axis, plan) in self.plans[*kernel].iter().enumerate() {
                    plan.accumulate(density, -1.0, &mut v[axis]);
                }
            }
            out.push(v);
        }
        out
    }
}
