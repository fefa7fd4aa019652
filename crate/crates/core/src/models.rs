//! Compartment-model descriptors: reaction terms, rates, kernels, diffusion.
//!
//! Incidence is mass-action (`βSI`), not normalised by the local population.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{KernelMatrix, KernelSpec};

type ReactionFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A user-supplied pointwise reaction `g: ℝⁿ → ℝⁿ`, declared C¹.
#[derive(Clone)]
pub struct GenericReaction {
    arity: usize,
    g: Arc<ReactionFn>,
    conservative: bool,
}

impl fmt::Debug for GenericReaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenericReaction")
            .field("arity", &self.arity)
            .field("conservative", &self.conservative)
            .finish_non_exhaustive()
    }
}

const PROBE_POINTS: usize = 32;

impl GenericReaction {
    /// Wraps `g` after probing it for finite, step-consistent finite
    /// difference Jacobians on sample points in `[0, 2]ⁿ`. Whether the
    /// reaction conserves total mass is detected on the same samples.
    pub fn new<F>(arity: usize, g: F) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if arity == 0 {
            return Err(Error::ArityMismatch {
                expected: 1,
                got: 0,
            });
        }
        let mut conservative = true;
        let mut out = vec![0.0; arity];
        for k in 0..PROBE_POINTS {
            let point = probe_point(arity, k);
            g(&point, &mut out);
            if let Some(bad) = out.iter().find(|v| !v.is_finite()) {
                return Err(Error::NotSmooth {
                    point,
                    reason: format!("non-finite rate {bad}"),
                });
            }
            let scale: f64 = out.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
            if out.iter().sum::<f64>().abs() > 1e-12 * scale {
                conservative = false;
            }
            let coarse = jacobian(&g, &point, 1e-4);
            let fine = jacobian(&g, &point, 1e-6);
            for (c, f) in coarse.iter().zip(&fine) {
                if !c.is_finite() || !f.is_finite() {
                    return Err(Error::NotSmooth {
                        point,
                        reason: "non-finite Jacobian entry".into(),
                    });
                }
                if (c - f).abs() > 1e-2 * (1.0 + f.abs()) {
                    return Err(Error::NotSmooth {
                        point,
                        reason: format!("Jacobian changes with step size ({c} vs {f})"),
                    });
                }
            }
        }
        Ok(Self {
            arity,
            g: Arc::new(g),
            conservative,
        })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn is_conservative(&self) -> bool {
        self.conservative
    }

    pub fn eval(&self, u: &[f64], out: &mut [f64]) {
        (self.g)(u, out)
    }
}

/// Deterministic low-discrepancy point in `[0, 2]ⁿ` (additive recurrence).
fn probe_point(arity: usize, k: usize) -> Vec<f64> {
    (0..arity)
        .map(|i| {
            let alpha = ((i + 2) as f64).sqrt().fract();
            2.0 * ((k as f64 + 0.5) * alpha).fract()
        })
        .collect()
}

fn jacobian<F>(g: &F, point: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = point.len();
    let mut jac = vec![0.0; n * n];
    let (mut plus, mut minus) = (vec![0.0; n], vec![0.0; n]);
    let mut x = point.to_vec();
    for j in 0..n {
        x[j] = point[j] + h;
        g(&x, &mut plus);
        x[j] = point[j] - h;
        g(&x, &mut minus);
        x[j] = point[j];
        for i in 0..n {
            jac[i * n + j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

#[derive(Debug, Clone)]
pub enum ReactionKind {
    /// `(−βSI, βSI − αI, αI)`
    Sir,
    /// `(−βSI + αI, βSI − αI)`
    Sis,
    GenericC1(GenericReaction),
}

impl ReactionKind {
    pub fn arity(&self) -> usize {
        match self {
            ReactionKind::Sir => 3,
            ReactionKind::Sis => 2,
            ReactionKind::GenericC1(g) => g.arity(),
        }
    }

    pub fn is_conservative(&self) -> bool {
        match self {
            ReactionKind::Sir | ReactionKind::Sis => true,
            ReactionKind::GenericC1(g) => g.is_conservative(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    kernels: KernelMatrix,
    reaction: ReactionKind,
    alpha: f64,
    beta: f64,
    epsilon: f64,
}

fn check_rate(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::NegativeRate { name, value })
    }
}

/// SIR model with compartments `S, I, R` and per-pair kernels.
pub fn make_sir(alpha: f64, beta: f64, km: KernelMatrix, epsilon: f64) -> Result<ModelSpec> {
    if km.names() != ["S", "I", "R"] {
        return Err(Error::ArityMismatch {
            expected: 3,
            got: km.len(),
        });
    }
    ModelSpec::new(km, ReactionKind::Sir, alpha, beta, epsilon)
}

/// SIS model on compartments `S, I` where every pair shares one kernel.
pub fn make_sis(alpha: f64, beta: f64, shared_kernel: KernelSpec, epsilon: f64) -> Result<ModelSpec> {
    let km = KernelMatrix::shared(&["S", "I"], shared_kernel)?;
    ModelSpec::new(km, ReactionKind::Sis, alpha, beta, epsilon)
}

/// Arbitrary compartment count with a probed C¹ reaction. `alpha` and
/// `beta` are unused by generic reactions and set to zero.
pub fn make_generic(km: KernelMatrix, reaction: GenericReaction, epsilon: f64) -> Result<ModelSpec> {
    ModelSpec::new(km, ReactionKind::GenericC1(reaction), 0.0, 0.0, epsilon)
}

impl ModelSpec {
    pub fn new(
        kernels: KernelMatrix,
        reaction: ReactionKind,
        alpha: f64,
        beta: f64,
        epsilon: f64,
    ) -> Result<Self> {
        check_rate("alpha", alpha)?;
        check_rate("beta", beta)?;
        check_rate("epsilon", epsilon)?;
        if reaction.arity() != kernels.len() {
            return Err(Error::ArityMismatch {
                expected: reaction.arity(),
                got: kernels.len(),
            });
        }
        Ok(Self {
            kernels,
            reaction,
            alpha,
            beta,
            epsilon,
        })
    }

    pub fn compartments(&self) -> &[String] {
        self.kernels.names()
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kernels(&self) -> &KernelMatrix {
        &self.kernels
    }

    pub fn reaction(&self) -> &ReactionKind {
        &self.reaction
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Same model with a different artificial diffusion.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        check_rate("epsilon", epsilon)?;
        Ok(Self {
            epsilon,
            ..self.clone()
        })
    }

    /// The classic shared-kernel SIS configuration for which steady states
    /// are known in closed form; returns `γ`.
    pub fn shared_quadabs_sis_gamma(&self) -> Option<f64> {
        match (&self.reaction, self.kernels.shared_kernel()) {
            (ReactionKind::Sis, Some(KernelSpec::QuadAbs { gamma })) => Some(*gamma),
            _ => None,
        }
    }

    /// Writes pointwise reaction rates into `out`. Slices must match the
    /// model arity.
    pub fn reaction_into(&self, u: &[f64], out: &mut [f64]) {
        let (a, b) = (self.alpha, self.beta);
        match &self.reaction {
            ReactionKind::Sir => {
                let infection = b * u[0] * u[1];
                let recovery = a * u[1];
                out[0] = -infection;
                out[1] = infection - recovery;
                out[2] = recovery;
            }
            ReactionKind::Sis => {
                let net = b * u[0] * u[1] - a * u[1];
                out[0] = -net;
                out[1] = net;
            }
            ReactionKind::GenericC1(g) => g.eval(u, out),
        }
    }

    /// Largest per-capita loss rate `−gᵢ/uᵢ` at `u`; bounds the explicit
    /// step for which the reaction alone keeps densities non-negative.
    pub fn loss_rate(&self, u: &[f64]) -> f64 {
        let (a, b) = (self.alpha, self.beta);
        match &self.reaction {
            ReactionKind::Sir | ReactionKind::Sis => (b * u[1]).max(a),
            ReactionKind::GenericC1(g) => {
                let mut out = vec![0.0; g.arity()];
                g.eval(u, &mut out);
                u.iter()
                    .zip(&out)
                    .filter(|(_, r)| **r < 0.0)
                    .map(|(ui, r)| if *ui > 0.0 { -r / ui } else { f64::INFINITY })
                    .fold(0.0, f64::max)
            }
        }
    }
}

/// Pointwise reaction rates for one set of compartment values.
pub fn reaction_rates(model: &ModelSpec, u: &[f64]) -> Result<Vec<f64>> {
    if u.len() != model.len() {
        return Err(Error::ArityMismatch {
            expected: model.len(),
            got: u.len(),
        });
    }
    let mut out = vec![0.0; u.len()];
    model.reaction_into(u, &mut out);
    Ok(out)
}
