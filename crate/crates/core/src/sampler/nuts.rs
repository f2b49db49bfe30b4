//! Dynamic-trajectory Hamiltonian transitions.
//!
//! Each iteration refreshes a Gaussian momentum, then doubles the
//! trajectory in a random direction until the no-U-turn criterion fires,
//! a divergence appears, or the depth cap is hit. The next state is drawn
//! multinomially among the visited leapfrog points, weighted by their
//! Boltzmann factors relative to the initial energy.

use super::adapt::{DualAveraging, WarmupSchedule, WelfordVariance};
use super::{ChainOutput, LogDensityModel, SampleSpace, SamplerConfig, DIVERGENCE_THRESHOLD};
use crate::error::Result;
use crate::rng::RngState;
use crate::special::sample_std_normal;

/// Position, momentum, gradient and log density at one trajectory point.
#[derive(Clone, Debug)]
pub struct PhasePoint {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub gradient: Vec<f64>,
    pub log_density: f64,
}

impl PhasePoint {
    pub fn new<M: LogDensityModel + ?Sized>(
        target: &M,
        position: Vec<f64>,
        momentum: Vec<f64>,
    ) -> Self {
        let mut gradient = vec![0.0; position.len()];
        let log_density = target.log_density_grad(&position, &mut gradient);
        Self { position, momentum, gradient, log_density }
    }

    fn kinetic(&self, inv_mass: &[f64]) -> f64 {
        0.5 * self
            .momentum
            .iter()
            .zip(inv_mass)
            .map(|(p, im)| p * p * im)
            .sum::<f64>()
    }

    /// Hamiltonian: potential plus kinetic energy.
    pub fn energy(&self, inv_mass: &[f64]) -> f64 {
        -self.log_density + self.kinetic(inv_mass)
    }
}

/// One leapfrog step of size `step` under a diagonal metric whose inverse
/// is `inv_mass`. Symplectic and reversible: stepping with the returned
/// point's negated momentum returns to the start.
pub fn leapfrog<M: LogDensityModel + ?Sized>(
    target: &M,
    point: &PhasePoint,
    step: f64,
    inv_mass: &[f64],
) -> PhasePoint {
    let dim = point.position.len();
    let mut momentum = point.momentum.clone();
    for k in 0..dim {
        momentum[k] += 0.5 * step * point.gradient[k];
    }
    let mut position = point.position.clone();
    for k in 0..dim {
        position[k] += step * inv_mass[k] * momentum[k];
    }
    let mut gradient = vec![0.0; dim];
    let log_density = target.log_density_grad(&position, &mut gradient);
    if log_density.is_finite() {
        for k in 0..dim {
            momentum[k] += 0.5 * step * gradient[k];
        }
    }
    PhasePoint { position, momentum, gradient, log_density }
}

/// Leaf statistics carried up while the trajectory doubles.
struct Subtree {
    /// Backwards-most point of the subtree.
    minus: PhasePoint,
    /// Forwards-most point of the subtree.
    plus: PhasePoint,
    /// Multinomial proposal drawn from the subtree.
    proposal: PhasePoint,
    proposal_energy: f64,
    log_sum_weight: f64,
    sum_accept: f64,
    n_leapfrog: usize,
    divergent: bool,
    turning: bool,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// No-U-turn check across a span: stop when the span shrinks along the
/// velocity at either end.
fn is_turning(minus: &PhasePoint, plus: &PhasePoint, inv_mass: &[f64]) -> bool {
    let mut dot_minus = 0.0;
    let mut dot_plus = 0.0;
    for k in 0..minus.position.len() {
        let span = plus.position[k] - minus.position[k];
        dot_minus += span * inv_mass[k] * minus.momentum[k];
        dot_plus += span * inv_mass[k] * plus.momentum[k];
    }
    dot_minus < 0.0 || dot_plus < 0.0
}

struct TreeContext<'a, M: LogDensityModel + ?Sized> {
    target: &'a M,
    inv_mass: &'a [f64],
    step: f64,
    h0: f64,
}

/// Builds a balanced subtree of `2^depth` leapfrog steps in `direction`.
fn build_tree<M: LogDensityModel + ?Sized>(
    ctx: &TreeContext<'_, M>,
    from: &PhasePoint,
    depth: usize,
    direction: f64,
    rng: &mut RngState,
) -> Subtree {
    if depth == 0 {
        let point = leapfrog(ctx.target, from, direction * ctx.step, ctx.inv_mass);
        let energy = point.energy(ctx.inv_mass);
        let energy_error = energy - ctx.h0;
        let divergent = !energy_error.is_finite() || energy_error > DIVERGENCE_THRESHOLD;
        let log_weight = if divergent { f64::NEG_INFINITY } else { -energy_error };
        let accept = if energy_error.is_finite() {
            (-energy_error).exp().min(1.0)
        } else {
            0.0
        };
        return Subtree {
            minus: point.clone(),
            plus: point.clone(),
            proposal: point,
            proposal_energy: energy,
            log_sum_weight: log_weight,
            sum_accept: accept,
            n_leapfrog: 1,
            divergent,
            turning: false,
        };
    }

    let inner = build_tree(ctx, from, depth - 1, direction, rng);
    if inner.divergent || inner.turning {
        return inner;
    }
    let from_edge = if direction > 0.0 { inner.plus.clone() } else { inner.minus.clone() };
    let outer = build_tree(ctx, &from_edge, depth - 1, direction, rng);

    let mut combined_turning = outer.turning;
    let (minus, plus) = if direction > 0.0 {
        (inner.minus.clone(), outer.plus.clone())
    } else {
        (outer.minus.clone(), inner.plus.clone())
    };
    if !outer.divergent && !combined_turning {
        combined_turning = is_turning(&minus, &plus, ctx.inv_mass);
    }

    // Multinomial choice between the two halves, proportional to their
    // total weights.
    let log_sum_weight = log_sum_exp(inner.log_sum_weight, outer.log_sum_weight);
    let take_outer = {
        let log_p = outer.log_sum_weight - log_sum_weight;
        log_p.is_finite() && rng.uniform_pos().ln() < log_p
    };
    let (proposal, proposal_energy) = if take_outer {
        (outer.proposal, outer.proposal_energy)
    } else {
        (inner.proposal, inner.proposal_energy)
    };

    Subtree {
        minus,
        plus,
        proposal,
        proposal_energy,
        log_sum_weight,
        sum_accept: inner.sum_accept + outer.sum_accept,
        n_leapfrog: inner.n_leapfrog + outer.n_leapfrog,
        divergent: outer.divergent,
        turning: combined_turning,
    }
}

struct Transition {
    point: PhasePoint,
    energy: f64,
    accept_stat: f64,
    divergent: bool,
    depth: u8,
}

fn transition<M: LogDensityModel + ?Sized>(
    target: &M,
    current: PhasePoint,
    step: f64,
    inv_mass: &[f64],
    max_depth: usize,
    rng: &mut RngState,
) -> Transition {
    let h0 = current.energy(inv_mass);
    let ctx = TreeContext { target, inv_mass, step, h0 };

    let mut minus = current.clone();
    let mut plus = current.clone();
    let mut proposal = current;
    let mut proposal_energy = h0;
    let mut log_sum_weight = 0.0; // weight of the initial point
    let mut sum_accept = 0.0;
    let mut n_leapfrog = 0usize;
    let mut divergent = false;
    let mut depth = 0usize;

    while depth < max_depth {
        let direction = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
        let from = if direction > 0.0 { plus.clone() } else { minus.clone() };
        let subtree = build_tree(&ctx, &from, depth, direction, rng);
        sum_accept += subtree.sum_accept;
        n_leapfrog += subtree.n_leapfrog;

        if subtree.divergent {
            divergent = true;
            break;
        }
        if subtree.turning {
            break;
        }

        // Biased progressive sampling favours the fresh half.
        let log_p = subtree.log_sum_weight - log_sum_weight;
        if log_p >= 0.0 || rng.uniform_pos().ln() < log_p {
            proposal = subtree.proposal.clone();
            proposal_energy = subtree.proposal_energy;
        }
        log_sum_weight = log_sum_exp(log_sum_weight, subtree.log_sum_weight);

        if direction > 0.0 {
            plus = subtree.plus;
        } else {
            minus = subtree.minus;
        }
        depth += 1;

        if is_turning(&minus, &plus, inv_mass) {
            break;
        }
    }

    let accept_stat = if n_leapfrog > 0 {
        sum_accept / n_leapfrog as f64
    } else {
        0.0
    };
    Transition {
        point: proposal,
        energy: proposal_energy,
        accept_stat,
        divergent,
        depth: depth as u8,
    }
}

fn draw_momentum(dim: usize, inv_mass: &[f64], rng: &mut RngState) -> Vec<f64> {
    (0..dim)
        .map(|k| sample_std_normal(rng) / inv_mass[k].sqrt())
        .collect()
}

/// Crude but robust step-size guess: decade search until one leapfrog
/// step's acceptance crosses 1/2.
fn find_initial_step<M: LogDensityModel + ?Sized>(
    target: &M,
    position: &[f64],
    inv_mass: &[f64],
    rng: &mut RngState,
) -> f64 {
    let dim = position.len();
    let momentum = draw_momentum(dim, inv_mass, rng);
    let point = PhasePoint::new(target, position.to_vec(), momentum);
    let h0 = point.energy(inv_mass);
    let mut step = 1.0;
    let trial = |step: f64| -> f64 {
        let next = leapfrog(target, &point, step, inv_mass);
        let delta = h0 - next.energy(inv_mass);
        if delta.is_finite() {
            delta
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut delta = trial(step);
    let going_up = delta > (0.5f64).ln();
    for _ in 0..60 {
        if going_up {
            step *= 2.0;
            delta = trial(step);
            if delta <= (0.5f64).ln() {
                return step / 2.0;
            }
        } else {
            step *= 0.5;
            delta = trial(step);
            if delta > (0.5f64).ln() {
                return step;
            }
        }
    }
    step.clamp(1e-10, 1.0)
}

pub(super) fn run_chain<T: SampleSpace + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    rng: &mut RngState,
) -> Result<ChainOutput> {
    let dim = target.dim();
    let position = target.initial_position(rng)?;
    let mut inv_mass = vec![1.0; dim];

    let mut step = find_initial_step(target, &position, &inv_mass, rng);
    let mut averaging = DualAveraging::new(step, config.target_accept);
    let schedule = WarmupSchedule::new(config.n_warmup);
    let mut variance = WelfordVariance::new(dim);

    let momentum = draw_momentum(dim, &inv_mass, rng);
    let mut state = PhasePoint::new(target, position, momentum);

    for iter in 0..config.n_warmup {
        state.momentum = draw_momentum(dim, &inv_mass, rng);
        let tr = transition(target, state, step, &inv_mass, config.max_tree_depth, rng);
        state = tr.point;
        averaging.update(tr.accept_stat);
        step = averaging.current();

        if schedule.in_slow_window(iter) {
            variance.push(&state.position);
        }
        if schedule.ends_slow_window(iter) {
            inv_mass = variance.regularized();
            variance = WelfordVariance::new(dim);
            // New metric invalidates the step size; restart its averaging
            // from the current value.
            step = find_initial_step(target, &state.position, &inv_mass, rng);
            averaging = DualAveraging::new(step, config.target_accept);
        }
    }
    step = averaging.adapted() * config.step_size_scale;

    let mut out = ChainOutput {
        data: Vec::with_capacity(config.n_samples * dim),
        divergent: Vec::with_capacity(config.n_samples),
        energy: Vec::with_capacity(config.n_samples),
        tree_depth: Vec::with_capacity(config.n_samples),
    };
    let mut constrained = vec![0.0; dim];
    for _ in 0..config.n_samples {
        state.momentum = draw_momentum(dim, &inv_mass, rng);
        let tr = transition(target, state, step, &inv_mass, config.max_tree_depth, rng);
        state = tr.point;
        target.to_constrained(&state.position, &mut constrained);
        out.data.extend_from_slice(&constrained);
        out.divergent.push(tr.divergent);
        out.energy.push(tr.energy);
        out.tree_depth.push(tr.depth);
    }
    Ok(out)
}
