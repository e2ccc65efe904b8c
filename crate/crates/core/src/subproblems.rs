//! The eight block updates of one training iteration.
//!
//! `a` and `W` are updated by minimizing an isotropic quadratic model of φ
//! around the current value, growing the curvature coefficient until the model
//! majorizes φ at the candidate. `b` steps are closed form, hidden `z` has an
//! exact elementwise minimizer for (leaky) ReLU, and the output `z_L` is solved
//! with FISTA.
//!
//! Every update expands around the value currently stored in the state: during
//! the backward sweep that is the previous iterate, during the forward sweep it
//! is the value the backward sweep just produced.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::energy::{
    activation_gap_sq, coupling_energy, gap_from_residual, grad_a_from_gap, prox_regularizer, risk_grad, risk_value,
    Products,
};
use crate::error::{check_layer, Block, BlockRef, Error, Result};
use crate::model::{sq_dist, Activation, NetState, Regularizer, RiskSpec};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepDirection {
    Backward,
    Forward,
}

/// Penalty weights of φ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty<S> {
    pub nu: S,
    pub rho: S,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktrackParams {
    pub t0: f64,
    pub growth: f64,
    pub max_trials: usize,
}

/// Outcome of one backtracking update. The accepted value is written into the
/// state; `movement_sq` is `‖new − expansion point‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktrackResult<S> {
    pub accepted_coeff: S,
    pub trials: usize,
    pub movement_sq: S,
}

/// `φ(p) + ⟨g, cand − p⟩ + (coeff/2)‖cand − p‖²`.
pub fn quadratic_model<S: Scalar>(phi_at_p: S, grad: &Array2<S>, p: &Array2<S>, cand: &Array2<S>, coeff: S) -> S {
    let mut lin = S::zero();
    let mut sq = S::zero();
    Zip::from(grad).and(p).and(cand).for_each(|&g, &pv, &cv| {
        let d = cv - pv;
        lin += g * d;
        sq += d * d;
    });
    phi_at_p + lin + S::of(0.5) * coeff * sq
}

fn numeric_failure(block: Block, dir: SweepDirection, reason: impl Into<String>) -> Error {
    Error::NumericFailure {
        block: BlockRef { block, dir },
        reason: reason.into(),
    }
}

fn all_finite<S: Scalar>(m: &Array2<S>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// `base + step / t`, elementwise.
fn shifted<S: Scalar>(base: &Array2<S>, step: &Array2<S>, t: S) -> Array2<S> {
    let mut out = base.clone();
    Zip::from(&mut out).and(step).for_each(|o, &s| *o += s / t);
    out
}

/// `z − m − b ⊗ 1`.
fn residual_from<S: Scalar>(z: &Array2<S>, m: &Array2<S>, b: &Array1<S>) -> Array2<S> {
    let mut r = z.clone();
    Zip::from(&mut r)
        .and(m)
        .and_broadcast(&b.view().insert_axis(Axis(1)))
        .for_each(|rv, &mv, &bv| *rv -= mv + bv);
    r
}

/// Backtracking update of `a_l`, `1 ≤ l ≤ L−1`.
///
/// The candidate `p − ∇φ/t` is accepted once `φ(candidate) ≤ Q(candidate; t)`;
/// otherwise `t` is multiplied by the growth factor. Only the terms of φ that
/// involve `a_l` are evaluated; the rest cancel on both sides.
pub fn update_a_backtrack<S: Scalar>(
    state: &mut NetState<S>,
    x: ArrayView2<S>,
    l: usize,
    dir: SweepDirection,
    pen: Penalty<S>,
    params: BacktrackParams,
    products: &mut Products<S>,
) -> Result<BacktrackResult<S>> {
    check_layer(l, 1, state.num_layers() - 1)?;
    let half = S::of(0.5);
    let res_next = products.residual(state, x, l + 1);
    let coupling = coupling_energy(state, l + 1, &res_next, pen.nu, pen.rho);
    let gap = gap_from_residual(state, l + 1, res_next.clone(), pen.nu, pen.rho);
    let grad = grad_a_from_gap(state, l, &gap, pen.nu);
    drop(gap);
    if !all_finite(&grad) {
        return Err(numeric_failure(Block::A(l), dir, "non-finite gradient"));
    }
    // W_{l+1}(p − g/t) = W_{l+1} p − (W_{l+1} g)/t
    let w_grad = state.w[l].dot(&grad);
    let p = &state.a[l - 1];
    let base = half * pen.nu * activation_gap_sq(state, l, p) + coupling;
    let neg_grad = grad.mapv(|g| -g);
    let growth = S::of(params.growth);
    let mut t = S::of(params.t0);
    let mut trials = 0;
    let accepted = loop {
        let cand = shifted(p, &neg_grad, t);
        let res_cand = shifted(&res_next, &w_grad, t);
        let value = half * pen.nu * activation_gap_sq(state, l, &cand)
            + coupling_energy(state, l + 1, &res_cand, pen.nu, pen.rho);
        if value <= quadratic_model(base, &grad, p, &cand, t) {
            break cand;
        }
        if trials == params.max_trials {
            return Err(numeric_failure(
                Block::A(l),
                dir,
                format!("no majorizing step after {trials} growth steps (t = {t})"),
            ));
        }
        t *= growth;
        trials += 1;
    };
    let movement_sq = sq_dist(&accepted, p);
    let mut m = products.get(state, x, l + 1).clone();
    Zip::from(&mut m).and(&w_grad).for_each(|mv, &wg| *mv -= wg / t);
    products.set(l + 1, m);
    state.a[l - 1] = accepted;
    Ok(BacktrackResult {
        accepted_coeff: t,
        trials,
        movement_sq,
    })
}

/// Backtracking proximal update of `W_l`, `1 ≤ l ≤ L`.
///
/// The candidate is `prox_Ω(p − ∇φ/α, α)`, accepted once
/// `φ(candidate) ≤ P(candidate; α)`.
#[allow(clippy::too_many_arguments)]
pub fn update_w_backtrack<S: Scalar>(
    state: &mut NetState<S>,
    x: ArrayView2<S>,
    l: usize,
    dir: SweepDirection,
    pen: Penalty<S>,
    regularizer: Regularizer,
    params: BacktrackParams,
    products: &mut Products<S>,
) -> Result<BacktrackResult<S>> {
    check_layer(l, 1, state.num_layers())?;
    regularizer.validate()?;
    let res = products.residual(state, x, l);
    let base = coupling_energy(state, l, &res, pen.nu, pen.rho);
    let gap = gap_from_residual(state, l, res.clone(), pen.nu, pen.rho);
    let input = state.layer_input(l, x);
    let grad = gap.dot(&input.t());
    drop(gap);
    if !all_finite(&grad) {
        return Err(numeric_failure(Block::W(l), dir, "non-finite gradient"));
    }
    // without a proximal map the candidate is affine in 1/α
    let grad_input = if regularizer.is_identity() {
        Some(grad.dot(&input))
    } else {
        None
    };
    let p = &state.w[l - 1];
    let neg_grad = grad.mapv(|g| -g);
    let growth = S::of(params.growth);
    let mut alpha = S::of(params.t0);
    let mut trials = 0;
    let (accepted, product) = loop {
        let v = shifted(p, &neg_grad, alpha);
        let (cand, product, res_cand) = match &grad_input {
            Some(gi) => (v, None, shifted(&res, gi, alpha)),
            None => {
                let cand = prox_regularizer(&v, alpha, regularizer)?;
                let prod = cand.dot(&input);
                let r = residual_from(&state.z[l - 1], &prod, &state.b[l - 1]);
                (cand, Some(prod), r)
            }
        };
        let value = coupling_energy(state, l, &res_cand, pen.nu, pen.rho);
        if value <= quadratic_model(base, &grad, p, &cand, alpha) {
            break (cand, product);
        }
        if trials == params.max_trials {
            return Err(numeric_failure(
                Block::W(l),
                dir,
                format!("no majorizing step after {trials} growth steps (alpha = {alpha})"),
            ));
        }
        alpha *= growth;
        trials += 1;
    };
    let movement_sq = sq_dist(&accepted, p);
    let product = match (product, grad_input) {
        (Some(prod), _) => prod,
        (None, Some(gi)) => {
            let mut m = products.get(state, x, l).clone();
            Zip::from(&mut m).and(&gi).for_each(|mv, &g| *mv -= g / alpha);
            m
        }
        (None, None) => unreachable!("candidate product is computed whenever the prox is applied"),
    };
    products.set(l, product);
    state.w[l - 1] = accepted;
    Ok(BacktrackResult {
        accepted_coeff: alpha,
        trials,
        movement_sq,
    })
}

/// Closed-form bias step `b − ∇_b φ / (ν N)` (hidden) or `/(ρ N)` (output).
/// Returns `‖b_new − b‖²`.
pub fn update_b_closed<S: Scalar>(
    state: &mut NetState<S>,
    x: ArrayView2<S>,
    l: usize,
    dir: SweepDirection,
    pen: Penalty<S>,
    products: &mut Products<S>,
) -> Result<S> {
    check_layer(l, 1, state.num_layers())?;
    let res = products.residual(state, x, l);
    let grad = gap_from_residual(state, l, res, pen.nu, pen.rho).sum_axis(Axis(1));
    let n = S::of(x.ncols() as f64);
    let denom = if l < state.num_layers() {
        pen.nu * n
    } else {
        pen.rho * n
    };
    let b = &mut state.b[l - 1];
    let mut movement = S::zero();
    Zip::from(b).and(&grad).for_each(|bv, &g| {
        let step = g / denom;
        movement += step * step;
        *bv -= step;
    });
    if !movement.is_finite() {
        return Err(numeric_failure(Block::B(l), dir, "non-finite bias step"));
    }
    Ok(movement)
}

/// `W_l a_{l−1} + b_l ⊗ 1` from the cache.
fn affine_cached<S: Scalar>(state: &NetState<S>, x: ArrayView2<S>, l: usize, products: &mut Products<S>) -> Array2<S> {
    let mut c = products.get(state, x, l).clone();
    c += &state.b[l - 1].view().insert_axis(Axis(1));
    c
}

/// Exact minimizer over `z` of `(z − c)² + (a − f(z))²` for (leaky) ReLU.
///
/// Each half-line has a convex piece; the two clamped minimizers are compared
/// and ties go to the non-negative branch.
#[inline]
pub fn z_hidden_scalar<S: Scalar>(c: S, a: S, activation: Activation) -> S {
    let objective = |z: S| {
        let d1 = z - c;
        let d2 = a - activation.apply(z);
        d1 * d1 + d2 * d2
    };
    let negative = match activation {
        Activation::Relu => c.min(S::zero()),
        Activation::LeakyRelu(slope) => {
            let s = S::of(slope);
            ((c + s * a) / (S::one() + s * s)).min(S::zero())
        }
    };
    let positive = ((c + a) * S::of(0.5)).max(S::zero());
    if objective(positive) <= objective(negative) {
        positive
    } else {
        negative
    }
}

/// Closed-form update of hidden `z_l`, `1 ≤ l ≤ L−1`. Returns `‖z_new − z‖²`.
pub fn update_z_hidden<S: Scalar>(
    state: &mut NetState<S>,
    x: ArrayView2<S>,
    l: usize,
    products: &mut Products<S>,
) -> Result<S> {
    check_layer(l, 1, state.num_layers() - 1)?;
    let mut target = affine_cached(state, x, l, products);
    let act = state.activation;
    Zip::from(&mut target)
        .and(&state.a[l - 1])
        .for_each(|c, &a| *c = z_hidden_scalar(*c, a, act));
    let movement = sq_dist(&target, &state.z[l - 1]);
    state.z[l - 1] = target;
    Ok(movement)
}

/// Objective of the output-layer subproblem:
/// `R(z; y) + Σ u∘(z − c) + (ρ/2)‖z − c‖²`.
pub fn output_z_objective<S: Scalar>(
    z: ArrayView2<S>,
    c: ArrayView2<S>,
    u: ArrayView2<S>,
    y: ArrayView2<S>,
    rho: S,
) -> Result<S> {
    let mut lin = S::zero();
    let mut sq = S::zero();
    Zip::from(z).and(c).and(u).for_each(|&zv, &cv, &uv| {
        let d = zv - cv;
        lin += uv * d;
        sq += d * d;
    });
    Ok(risk_value(z, y)? + lin + S::of(0.5) * rho * sq)
}

/// Gradient of [`output_z_objective`].
pub fn output_z_gradient<S: Scalar>(
    z: ArrayView2<S>,
    c: ArrayView2<S>,
    u: ArrayView2<S>,
    y: ArrayView2<S>,
    rho: S,
) -> Result<Array2<S>> {
    let mut g = risk_grad(z, y)?;
    Zip::from(&mut g)
        .and(z)
        .and(c)
        .and(u)
        .for_each(|gv, &zv, &cv, &uv| *gv = *gv + uv + rho * (zv - cv));
    Ok(g)
}

fn inf_norm<S: Scalar>(m: &Array2<S>) -> S {
    m.iter().fold(S::zero(), |acc, v| acc.max(v.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FistaOutcome<S> {
    pub iterations: usize,
    /// `‖∇‖_∞` at the returned point.
    pub grad_inf: S,
    pub converged: bool,
    pub objective: S,
    pub movement_sq: S,
}

/// Solves the output-layer `z_L` subproblem with FISTA from the stored warm
/// start, using the fixed step `1/(H + ρ)`.
///
/// Stops when the gradient infinity norm drops to `tol` or after `max_iters`
/// steps. The returned point never has a larger objective than the warm start.
#[allow(clippy::too_many_arguments)]
pub fn update_z_output_fista<S: Scalar>(
    state: &mut NetState<S>,
    x: ArrayView2<S>,
    y: ArrayView2<S>,
    risk: &RiskSpec,
    rho: S,
    max_iters: usize,
    tol: S,
    products: &mut Products<S>,
) -> Result<FistaOutcome<S>> {
    let l_count = state.num_layers();
    let c = affine_cached(state, x, l_count, products);
    let u = state.u.view();
    let z0 = &state.z[l_count - 1];
    let value = |z: &Array2<S>| output_z_objective(z.view(), c.view(), u, y, rho);
    let gradient = |z: &Array2<S>| output_z_gradient(z.view(), c.view(), u, y, rho);

    let f0 = value(z0)?;
    let g0 = inf_norm(&gradient(z0)?);
    if g0 <= tol {
        return Ok(FistaOutcome {
            iterations: 0,
            grad_inf: g0,
            converged: true,
            objective: f0,
            movement_sq: S::zero(),
        });
    }

    let step = S::one() / (S::of(risk.lipschitz_h) + rho);
    let mut best: Option<(S, Array2<S>, S)> = None;
    let mut x_prev = z0.clone();
    let mut y_k = z0.clone();
    let mut t = S::one();
    let mut iterations = 0;
    let mut converged_point: Option<(S, Array2<S>, S)> = None;
    for k in 1..=max_iters {
        iterations = k;
        let gy = gradient(&y_k)?;
        let mut x_k = y_k;
        Zip::from(&mut x_k).and(&gy).for_each(|xv, &g| *xv -= step * g);
        let fx = value(&x_k)?;
        let gx = inf_norm(&gradient(&x_k)?);
        if !fx.is_finite() {
            break;
        }
        if gx <= tol {
            converged_point = Some((fx, x_k, gx));
            break;
        }
        if best.as_ref().is_none_or(|(fb, _, _)| fx < *fb) {
            best = Some((fx, x_k.clone(), gx));
        }
        let t_next = (S::one() + (S::one() + S::of(4.0) * t * t).sqrt()) * S::of(0.5);
        let momentum = (t - S::one()) / t_next;
        let mut y_next = x_k.clone();
        Zip::from(&mut y_next)
            .and(&x_k)
            .and(&x_prev)
            .for_each(|yv, &xv, &pv| *yv += momentum * (xv - pv));
        x_prev = x_k;
        y_k = y_next;
        t = t_next;
    }

    // converged point first, otherwise the best iterate; never worse than z0
    let converged = converged_point.as_ref().is_some_and(|cp| cp.0 <= f0);
    let chosen = if converged { converged_point } else { best };
    let (objective, z_new, grad_inf) = match chosen {
        Some(ch) if ch.0 <= f0 => ch,
        _ => (f0, z0.clone(), g0),
    };
    let movement_sq = sq_dist(&z_new, z0);
    state.z[l_count - 1] = z_new;
    Ok(FistaOutcome {
        iterations,
        grad_inf,
        converged,
        objective,
        movement_sq,
    })
}

/// `u + ρ r`.
pub fn dual_update<S: Scalar>(u: &Array2<S>, r: &Array2<S>, rho: S) -> Result<Array2<S>> {
    if u.dim() != r.dim() {
        return Err(Error::DimensionMismatch(format!(
            "dual {:?} vs residual {:?}",
            u.dim(),
            r.dim()
        )));
    }
    let mut out = u.clone();
    Zip::from(&mut out).and(r).for_each(|o, &rv| *o += rho * rv);
    Ok(out)
}

/// Row-mean of `z_l − W_l a_{l−1}`: the exact minimizer over `b_l` of the hidden
/// coupling term.
pub fn exact_bias_minimizer<S: Scalar>(state: &NetState<S>, x: ArrayView2<S>, l: usize) -> Result<Array1<S>> {
    check_layer(l, 1, state.num_layers())?;
    let mut r = state.z[l - 1].clone();
    r -= &state.w[l - 1].dot(&state.layer_input(l, x));
    let n = S::of(x.ncols() as f64);
    Ok(r.sum_axis(Axis(1)).mapv(|v| v / n))
}
