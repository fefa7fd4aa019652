//! Closed-form steady states of the shared-kernel SIS model with
//! `W(x) = x² − γ|x|`, the space-dependent reproduction number, and metrics
//! for comparing simulated states against them.
//!
//! With all kernels equal, the total population `N = S + I` solves a closed
//! aggregation equation whose steady states are plateaus `(M/γ)·1` on an
//! interval of length `γ`. On that plateau the reaction reduces to the
//! homogeneous SIS balance, so the disease-free state `(M/γ, 0)` always
//! exists and the endemic state `(α/β, M/γ − α/β)` exists iff
//! `R₀ = Mβ/(γα) > 1`.

use crate::diagnostics::{lp_norm, Norm};
use crate::error::{Error, Result};
use crate::grid::{box_cell_averages, project_function, Field, Grid};
use crate::solver::State;

/// Plateau heights of `S` and `I` on the support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plateau {
    pub s: f64,
    pub i: f64,
}

impl Plateau {
    pub fn total(&self) -> f64 {
        self.s + self.i
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub mass: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub r0: f64,
    pub center: f64,
    /// `[center − γ/2, center + γ/2]`
    pub support: (f64, f64),
    pub disease_free: Plateau,
    /// Present iff `r0 > 1`.
    pub endemic: Option<Plateau>,
}

impl EquilibriumReport {
    pub fn classification(&self) -> &'static str {
        if self.endemic.is_some() {
            "endemic"
        } else {
            "disease-free"
        }
    }

    pub fn support_width(&self) -> f64 {
        self.support.1 - self.support.0
    }

    /// `key = value` lines for run summaries.
    pub fn summary_lines(&self) -> Vec<(String, String)> {
        let mut lines = vec![
            ("mass".to_string(), self.mass.to_string()),
            ("gamma".to_string(), self.gamma.to_string()),
            ("alpha".to_string(), self.alpha.to_string()),
            ("beta".to_string(), self.beta.to_string()),
            ("r0".to_string(), self.r0.to_string()),
            ("classification".to_string(), self.classification().to_string()),
            ("support_lo".to_string(), self.support.0.to_string()),
            ("support_hi".to_string(), self.support.1.to_string()),
            ("disease_free_S".to_string(), self.disease_free.s.to_string()),
            ("disease_free_I".to_string(), self.disease_free.i.to_string()),
        ];
        if let Some(e) = self.endemic {
            lines.push(("endemic_S".to_string(), e.s.to_string()));
            lines.push(("endemic_I".to_string(), e.i.to_string()));
        }
        lines
    }
}

fn check_inputs(mass: f64, beta: f64, gamma: f64, alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::NonPositiveAlpha(alpha));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::NonPositiveGamma(gamma));
    }
    if !(mass.is_finite() && mass >= 0.0) {
        return Err(Error::NegativeRate {
            name: "mass",
            value: mass,
        });
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::NegativeRate {
            name: "beta",
            value: beta,
        });
    }
    Ok(())
}

/// `R₀ = (M·β) / (γ·α)`.
pub fn compute_r0(mass: f64, beta: f64, gamma: f64, alpha: f64) -> Result<f64> {
    check_inputs(mass, beta, gamma, alpha)?;
    Ok((mass * beta) / (gamma * alpha))
}

/// Steady states centred at `center`. The endemic branch is emitted iff
/// `R₀ > 1` (strict).
pub fn analytic_steady_states(
    mass: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    center: f64,
) -> Result<EquilibriumReport> {
    let r0 = compute_r0(mass, beta, gamma, alpha)?;
    let height = mass / gamma;
    let endemic = (r0 > 1.0).then(|| {
        let s = alpha / beta;
        Plateau { s, i: height - s }
    });
    Ok(EquilibriumReport {
        mass,
        gamma,
        alpha,
        beta,
        r0,
        center,
        support: (center - 0.5 * gamma, center + 0.5 * gamma),
        disease_free: Plateau { s: height, i: 0.0 },
        endemic,
    })
}

/// Margin, in cells, required between a steady support and the boundary.
pub const SUPPORT_MARGIN_CELLS: usize = 5;

/// Midpoint projection of `(M/γ)·1_[center − γ/2, center + γ/2]` on a 1D
/// grid.
pub fn steady_total_profile(grid: &Grid, mass: f64, gamma: f64, center: f64) -> Result<Field> {
    if grid.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: grid.dim(),
        });
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::NonPositiveGamma(gamma));
    }
    plateau_field(grid, mass / gamma, gamma, center)
}

fn plateau_field(grid: &Grid, height: f64, gamma: f64, center: f64) -> Result<Field> {
    let (lo, hi) = (center - 0.5 * gamma, center + 0.5 * gamma);
    if !grid.contains_with_margin(0, lo, hi, SUPPORT_MARGIN_CELLS) {
        return Err(Error::SupportExceedsDomain { lo, hi });
    }
    project_function(grid, |x| if x[0] >= lo && x[0] <= hi { height } else { 0.0 })
}

/// Which steady branch to materialise on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    DiseaseFree,
    Endemic,
}

/// How a steady profile is transferred to cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Value at the cell center (initial data).
    Midpoint,
    /// Exact cell average (reference for error measurement).
    CellAverage,
}

/// `(S, I)` fields of one steady branch of `report`.
pub fn steady_state_fields(
    grid: &Grid,
    report: &EquilibriumReport,
    branch: Branch,
    sampling: Sampling,
) -> Result<Vec<Field>> {
    let plateau = match branch {
        Branch::DiseaseFree => report.disease_free,
        Branch::Endemic => report.endemic.ok_or_else(|| {
            Error::InvalidConfig(format!(
                "no endemic steady state for R0 = {} <= 1",
                report.r0
            ))
        })?,
    };
    [plateau.s, plateau.i]
        .into_iter()
        .map(|h| match sampling {
            Sampling::Midpoint => plateau_field(grid, h, report.gamma, report.center),
            Sampling::CellAverage => {
                let (lo, hi) = report.support;
                if !grid.contains_with_margin(0, lo, hi, SUPPORT_MARGIN_CELLS) {
                    return Err(Error::SupportExceedsDomain { lo, hi });
                }
                box_cell_averages(grid, &[lo], &[hi], h)
            }
        })
        .collect()
}

/// `Σ_ξ ‖u_ξ − ref_ξ‖` in a cell-measure-weighted discrete norm.
pub fn distance_to_state(grid: &Grid, state: &State, reference: &[Field], norm: Norm) -> Result<f64> {
    if state.fields().len() != reference.len() {
        return Err(Error::ArityMismatch {
            expected: state.fields().len(),
            got: reference.len(),
        });
    }
    let mut total = 0.0;
    for (u, r) in state.fields().iter().zip(reference) {
        if u.grid() != grid || r.grid() != grid {
            return Err(Error::GridMismatch);
        }
        let diff: Vec<f64> = u.values().iter().zip(r.values()).map(|(a, b)| a - b).collect();
        total += lp_norm(grid, &Field::from_values(grid, diff)?, norm);
    }
    Ok(total)
}

/// Distance between the first cell and the far face of the last cell whose
/// value exceeds `threshold_fraction · max`, along the first axis. Zero for
/// fields without positive values.
pub fn support_width(field: &Field, threshold_fraction: f64) -> f64 {
    let max = field.max();
    if !(max > 0.0) {
        return 0.0;
    }
    let grid = field.grid();
    let threshold = threshold_fraction * max;
    let columns = field
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > threshold)
        .map(|(i, _)| grid.unravel(i)[0]);
    let (first, last) = columns.fold((usize::MAX, 0), |(a, b), c| (a.min(c), b.max(c)));
    (last - first + 1) as f64 * grid.dx(0)
}

/// Default support detection threshold, as a fraction of the maximum.
pub const SUPPORT_THRESHOLD: f64 = 0.1;

/// Density-weighted mean position along the first axis, if the field has
/// mass.
pub fn center_of_mass(field: &Field) -> Option<f64> {
    let grid = field.grid();
    let (mut moment, mut mass) = (0.0, 0.0);
    for (i, &v) in field.values().iter().enumerate() {
        moment += grid.center(0, grid.unravel(i)[0]) * v;
        mass += v;
    }
    (mass > 0.0).then(|| moment / mass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r0_examples() {
        assert_eq!(compute_r0(1.0, 1.0, 0.5, 1.0).unwrap(), 2.0);
        assert_eq!(compute_r0(0.0, 1.0, 0.5, 1.0).unwrap(), 0.0);
        assert_eq!(compute_r0(1.0, 0.5, 0.5, 1.0).unwrap(), 1.0);
        assert_eq!(compute_r0(1.0, 1.0, 0.5, 0.0), Err(Error::NonPositiveAlpha(0.0)));
        assert_eq!(compute_r0(1.0, 1.0, 0.0, 1.0), Err(Error::NonPositiveGamma(0.0)));
    }

    #[test]
    fn steady_state_examples() {
        let r = analytic_steady_states(1.0, 1.0, 1.0, 0.5, 0.0).unwrap();
        assert_eq!(r.endemic, Some(Plateau { s: 1.0, i: 1.0 }));
        assert_eq!(r.disease_free, Plateau { s: 2.0, i: 0.0 });
        assert_eq!(r.support, (-0.25, 0.25));
        assert_eq!(r.classification(), "endemic");

        let r = analytic_steady_states(0.4, 1.0, 1.0, 0.5, 0.0).unwrap();
        assert!((r.r0 - 0.8).abs() < 1e-15);
        assert!(r.endemic.is_none());

        let r = analytic_steady_states(3.0, 1.0, 0.0, 0.5, 0.0).unwrap();
        assert_eq!(r.r0, 0.0);
        assert!(r.endemic.is_none());

        // threshold is strict
        let r = analytic_steady_states(1.0, 1.0, 0.5, 0.5, 0.0).unwrap();
        assert_eq!(r.r0, 1.0);
        assert!(r.endemic.is_none());
    }

    #[test]
    fn translation_moves_only_the_support() {
        let a = analytic_steady_states(1.3, 0.7, 1.1, 0.4, 0.0).unwrap();
        let b = analytic_steady_states(1.3, 0.7, 1.1, 0.4, 0.37).unwrap();
        assert_eq!(a.endemic, b.endemic);
        assert_eq!(a.disease_free, b.disease_free);
        assert_eq!(a.r0, b.r0);
        assert!((b.support.0 - a.support.0 - 0.37).abs() < 1e-15);
        assert!((b.support_width() - a.support_width()).abs() < 1e-15);
    }

    #[test]
    fn total_profile_on_preset_grid() {
        let g = Grid::new_1d(-1.7, 1.7, 340).unwrap();
        let n = steady_total_profile(&g, 1.0, 0.5, 0.0).unwrap();
        let plateau: Vec<_> = n.values().iter().filter(|&&v| v > 0.0).collect();
        assert_eq!(plateau.len(), 50);
        assert!(plateau.iter().all(|&&v| v == 2.0));
        let mass: f64 = n.values().iter().sum::<f64>() * g.dx(0);
        assert!((mass - 1.0).abs() <= 0.04);
        assert!((support_width(&n, 0.5) - 0.5).abs() <= g.dx(0));

        let zero = steady_total_profile(&g, 0.0, 0.5, 0.0).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        assert!(matches!(
            steady_total_profile(&g, 1.0, 0.5, 1.5),
            Err(Error::SupportExceedsDomain { .. })
        ));
    }

    #[test]
    fn distance_examples() {
        let g = Grid::new_1d(0.0, 1.0, 10).unwrap();
        let mut u = Field::zeros(&g);
        u.values_mut()[3] = 3.0;
        let state = State::new(0.0, vec![u.clone()]).unwrap();
        let zero = vec![Field::zeros(&g)];
        assert!((distance_to_state(&g, &state, &zero, Norm::L1).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(distance_to_state(&g, &state, &[u], Norm::L2).unwrap(), 0.0);
        assert!(matches!(
            distance_to_state(&g, &state, &[], Norm::L1),
            Err(Error::ArityMismatch { .. })
        ));
    }

    #[test]
    fn support_width_of_zero_field() {
        let g = Grid::new_1d(0.0, 1.0, 10).unwrap();
        assert_eq!(support_width(&Field::zeros(&g), 0.1), 0.0);
    }

    #[test]
    fn center_of_mass_of_plateau() {
        let g = Grid::new_1d(-1.7, 1.7, 340).unwrap();
        let n = steady_total_profile(&g, 1.0, 0.5, 0.3).unwrap();
        assert!((center_of_mass(&n).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(center_of_mass(&Field::zeros(&g)), None);
    }

    #[test]
    fn cell_average_reference_matches_mass() {
        let g = Grid::new_1d(-1.7, 1.7, 340).unwrap();
        let r = analytic_steady_states(1.05, 1.0, 1.0, 0.5, 0.0037).unwrap();
        let fields = steady_state_fields(&g, &r, Branch::Endemic, Sampling::CellAverage).unwrap();
        let mass: f64 = fields.iter().flat_map(|f| f.values()).sum::<f64>() * g.dx(0);
        assert!((mass - 1.05).abs() < 1e-12);
        let r = analytic_steady_states(0.2, 1.0, 1.0, 0.5, 0.0).unwrap();
        assert!(steady_state_fields(&g, &r, Branch::Endemic, Sampling::Midpoint).is_err());
    }
}
