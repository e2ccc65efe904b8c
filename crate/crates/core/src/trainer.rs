//! The training loop: one backward sweep, one forward sweep and a dual update
//! per iteration, with per-iteration convergence diagnostics.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::energy::{lagrangian_cached, risk_grad, Products};
use crate::error::{Error, Result};
use crate::model::{accuracy, init_state, Architecture, Hyperparams, NetState, RiskSpec};
use crate::scalar::Scalar;
use crate::subproblems::{
    dual_update, update_a_backtrack, update_b_closed, update_w_backtrack, update_z_hidden, update_z_output_fista,
    BacktrackParams, BacktrackResult, Penalty, SweepDirection,
};

/// One row of training history. Fields that only exist for the ADMM solver
/// are `None` (or empty) for the gradient baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub rho_used: Option<f64>,
    /// Relaxed objective `R + ΣΩ + ν-penalties` (the plain loss for baselines).
    pub objective_f: f64,
    /// `L_ρ` at the start of the iteration, evaluated at this iteration's ρ.
    pub lagrangian_start: Option<f64>,
    pub lagrangian: Option<f64>,
    pub residual_norm: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub descent_ok: Option<bool>,
    pub ck_term: Option<f64>,
    /// `‖∇R(z_L) + u‖_∞` after the dual update.
    pub lemma2: Option<f64>,
    /// Accepted coefficients, backward `a` sweep, layers `1..L−1`.
    pub tau_bar: Vec<f64>,
    /// Accepted coefficients, forward `a` sweep.
    pub tau: Vec<f64>,
    /// Accepted coefficients, backward `W` sweep, layers `1..L`.
    pub theta_bar: Vec<f64>,
    /// Accepted coefficients, forward `W` sweep.
    pub theta: Vec<f64>,
    pub backtrack_trials: usize,
    pub fista_iters: usize,
    pub fista_converged: bool,
    pub wall_ms: f64,
}

impl IterationRecord {
    /// Empty record for a gradient-method epoch.
    pub fn plain(iter: usize, objective_f: f64) -> Self {
        IterationRecord {
            iter,
            rho_used: None,
            objective_f,
            lagrangian_start: None,
            lagrangian: None,
            residual_norm: None,
            train_accuracy: None,
            test_accuracy: None,
            descent_ok: None,
            ck_term: None,
            lemma2: None,
            tau_bar: Vec::new(),
            tau: Vec::new(),
            theta_bar: Vec::new(),
            theta: Vec::new(),
            backtrack_trials: 0,
            fista_iters: 0,
            fista_converged: false,
            wall_ms: 0.0,
        }
    }
}

/// Sufficient-descent quantities for one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentDiagnostics {
    /// `ρ/2 − H/2 − H²/ρ`.
    pub c1: f64,
    /// `ρ > 2H`.
    pub rho_threshold_ok: bool,
    /// `min(ν/2, C1, accepted τ and θ of the iteration)`.
    pub c2_empirical: f64,
    /// Decrease of `L_ρ` over the iteration.
    pub descent_gap: f64,
    /// `descent_gap ≥ C2 · ck_term − 1e-6`.
    pub inequality_ok: bool,
}

/// Accepted coefficients from the previous iteration, used as warm starts.
#[derive(Debug, Clone, Default, PartialEq)]
struct WarmStart {
    tau_bar: Vec<Option<f64>>,
    tau: Vec<Option<f64>>,
    theta_bar: Vec<Option<f64>>,
    theta: Vec<Option<f64>>,
}

fn warm_t0(prev: Option<f64>, growth: f64, hyper: &Hyperparams) -> f64 {
    match prev {
        Some(t) => (t / growth).max(hyper.t_floor),
        None => hyper.initial_coeff(),
    }
}

/// Controls how often accuracies are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPolicy {
    /// Evaluate every `every` iterations (and always on the last one). Zero
    /// disables evaluation except on the last iteration.
    pub every: usize,
}

impl Default for EvalPolicy {
    fn default() -> Self {
        EvalPolicy { every: 1 }
    }
}

impl EvalPolicy {
    pub fn due(&self, iter: usize, total: usize) -> bool {
        iter + 1 == total || (self.every > 0 && iter.is_multiple_of(self.every))
    }
}

/// Runs iterations on one state and keeps the cached products and warm starts
/// that belong to it.
#[derive(Debug, Clone)]
pub struct Trainer<S> {
    pub state: NetState<S>,
    pub hyper: Hyperparams,
    pub risk: RiskSpec,
    products: Products<S>,
    warm: WarmStart,
    iteration: usize,
    /// `(ρ, L_ρ)` at the end of the previous iteration.
    last_lagrangian: Option<(f64, f64)>,
}

fn check_data<S: Scalar>(state: &NetState<S>, data: &Dataset<S>) -> Result<()> {
    state.check_shapes(data.x.view())?;
    if data.y.dim() != state.u.dim() {
        return Err(Error::DimensionMismatch(format!(
            "labels {:?} vs output {:?}",
            data.y.dim(),
            state.u.dim()
        )));
    }
    Ok(())
}

fn record_backtrack<S: Scalar>(slot: &mut Option<f64>, out: &mut Vec<f64>, res: &BacktrackResult<S>) {
    let t = res.accepted_coeff.as_f64();
    *slot = Some(t);
    out.push(t);
}

impl<S: Scalar> Trainer<S> {
    pub fn new(state: NetState<S>, hyper: Hyperparams, risk: RiskSpec) -> Result<Self> {
        hyper.validate()?;
        let l_count = state.num_layers();
        Ok(Trainer {
            state,
            hyper,
            risk,
            products: Products::new(),
            warm: WarmStart {
                tau_bar: vec![None; l_count - 1],
                tau: vec![None; l_count - 1],
                theta_bar: vec![None; l_count],
                theta: vec![None; l_count],
            },
            iteration: 0,
            last_lagrangian: None,
        })
    }

    /// Number of iterations run so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Replaces the state (for example after editing it by hand).
    pub fn reset_state(&mut self, state: NetState<S>) {
        self.state = state;
        self.products.invalidate();
        self.last_lagrangian = None;
    }

    fn lagrangian_at(&mut self, data: &Dataset<S>, rho: f64) -> Result<crate::energy::EnergyBreakdown<S>> {
        lagrangian_cached(
            &self.state,
            data.x.view(),
            data.y.view(),
            self.hyper.regularizer,
            S::of(self.hyper.nu),
            S::of(rho),
            &mut self.products,
        )
    }

    fn params(&self, t0: f64, growth: f64) -> BacktrackParams {
        BacktrackParams {
            t0,
            growth,
            max_trials: self.hyper.max_backtracks,
        }
    }

    /// Runs one full iteration. Accuracies are left unset; see
    /// [`Trainer::evaluate`].
    pub fn iterate(&mut self, data: &Dataset<S>) -> Result<IterationRecord> {
        check_data(&self.state, data)?;
        let started = Instant::now();
        let k = self.iteration;
        let rho = self.hyper.rho_at(k);
        let hyper = self.hyper.clone();
        let pen = Penalty {
            nu: S::of(hyper.nu),
            rho: S::of(rho),
        };
        let x = data.x.view();
        let y = data.y.view();
        let l_count = self.state.num_layers();
        let fista_tol = S::of(hyper.fista_tol_for(data.num_classes(), data.num_samples()));

        let lagrangian_start = match self.last_lagrangian {
            Some((r, v)) if r == rho => v,
            _ => self.lagrangian_at(data, rho)?.total.as_f64(),
        };

        let mut ck = S::zero();
        let mut trials = 0;
        let mut fista_iters = 0;
        let mut fista_converged = true;
        let mut tau_bar = Vec::with_capacity(l_count - 1);
        let mut tau = Vec::with_capacity(l_count - 1);
        let mut theta_bar = Vec::with_capacity(l_count);
        let mut theta = Vec::with_capacity(l_count);

        // backward sweep, l = L..1
        for l in (1..=l_count).rev() {
            let dir = SweepDirection::Backward;
            if l < l_count {
                let params = self.params(warm_t0(self.warm.tau_bar[l - 1], hyper.eta_bar, &hyper), hyper.eta_bar);
                let res = update_a_backtrack(&mut self.state, x, l, dir, pen, params, &mut self.products)?;
                ck += res.movement_sq;
                trials += res.trials;
                record_backtrack(&mut self.warm.tau_bar[l - 1], &mut tau_bar, &res);
                update_z_hidden(&mut self.state, x, l, &mut self.products)?;
            } else {
                let out = update_z_output_fista(
                    &mut self.state,
                    x,
                    y,
                    &self.risk,
                    pen.rho,
                    hyper.fista_max_iters,
                    fista_tol,
                    &mut self.products,
                )?;
                ck += out.movement_sq;
                fista_iters += out.iterations;
                fista_converged &= out.converged;
            }
            ck += update_b_closed(&mut self.state, x, l, dir, pen, &mut self.products)?;
            let params = self.params(
                warm_t0(self.warm.theta_bar[l - 1], hyper.gamma_bar, &hyper),
                hyper.gamma_bar,
            );
            let res = update_w_backtrack(
                &mut self.state,
                x,
                l,
                dir,
                pen,
                hyper.regularizer,
                params,
                &mut self.products,
            )?;
            ck += res.movement_sq;
            trials += res.trials;
            record_backtrack(&mut self.warm.theta_bar[l - 1], &mut theta_bar, &res);
        }
        tau_bar.reverse();
        theta_bar.reverse();

        // forward sweep, l = 1..L
        let mut residual: Option<Array2<S>> = None;
        for l in 1..=l_count {
            let dir = SweepDirection::Forward;
            let params = self.params(warm_t0(self.warm.theta[l - 1], hyper.gamma, &hyper), hyper.gamma);
            let res = update_w_backtrack(
                &mut self.state,
                x,
                l,
                dir,
                pen,
                hyper.regularizer,
                params,
                &mut self.products,
            )?;
            ck += res.movement_sq;
            trials += res.trials;
            record_backtrack(&mut self.warm.theta[l - 1], &mut theta, &res);
            ck += update_b_closed(&mut self.state, x, l, dir, pen, &mut self.products)?;
            if l < l_count {
                update_z_hidden(&mut self.state, x, l, &mut self.products)?;
                let params = self.params(warm_t0(self.warm.tau[l - 1], hyper.eta, &hyper), hyper.eta);
                let res = update_a_backtrack(&mut self.state, x, l, dir, pen, params, &mut self.products)?;
                ck += res.movement_sq;
                trials += res.trials;
                record_backtrack(&mut self.warm.tau[l - 1], &mut tau, &res);
            } else {
                let out = update_z_output_fista(
                    &mut self.state,
                    x,
                    y,
                    &self.risk,
                    pen.rho,
                    hyper.fista_max_iters,
                    fista_tol,
                    &mut self.products,
                )?;
                ck += out.movement_sq;
                fista_iters += out.iterations;
                fista_converged &= out.converged;
                let r = self.products.residual(&self.state, x, l_count);
                self.state.u = dual_update(&self.state.u, &r, pen.rho)?;
                residual = Some(r);
            }
        }

        if let Some(block) = self.state.first_non_finite() {
            return Err(Error::NonFinite(format!("{block} after iteration {k}")));
        }
        let r = residual.expect("forward sweep reaches the output layer");
        let breakdown = self.lagrangian_at(data, rho)?;
        let lagrangian = breakdown.total.as_f64();
        self.last_lagrangian = Some((rho, lagrangian));
        self.iteration += 1;

        Ok(IterationRecord {
            iter: k,
            rho_used: Some(rho),
            objective_f: breakdown.objective().as_f64(),
            lagrangian_start: Some(lagrangian_start),
            lagrangian: Some(lagrangian),
            residual_norm: Some(r.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()),
            train_accuracy: None,
            test_accuracy: None,
            descent_ok: Some(lagrangian <= lagrangian_start + 1e-9 * lagrangian_start.abs()),
            ck_term: Some(ck.as_f64()),
            lemma2: Some(lemma2_check(&self.state, y)?.as_f64()),
            tau_bar,
            tau,
            theta_bar,
            theta,
            backtrack_trials: trials,
            fista_iters,
            fista_converged,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Accuracy of the plain network `(W, b)` on a dataset.
    pub fn evaluate(&self, data: &Dataset<S>) -> Result<f64> {
        let preds = self.state.network().predict(data.x.view())?;
        Ok(accuracy(&preds, &data.labels))
    }
}

/// `‖∇R(z_L) + u‖_∞`.
pub fn lemma2_check<S: Scalar>(state: &NetState<S>, y: ArrayView2<S>) -> Result<S> {
    let mut g = risk_grad(state.z[state.num_layers() - 1].view(), y)?;
    Zip::from(&mut g).and(&state.u).for_each(|gv, &uv| *gv += uv);
    Ok(g.iter().fold(S::zero(), |acc, v| acc.max(v.abs())))
}

/// Running minimum of the `ck_term` column.
pub fn ck_sequence(history: &[IterationRecord]) -> Result<Vec<f64>> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let mut best = f64::INFINITY;
    history
        .iter()
        .map(|rec| {
            let term = rec
                .ck_term
                .ok_or_else(|| Error::Dataset(format!("record {} has no ck term", rec.iter)))?;
            best = best.min(term);
            Ok(best)
        })
        .collect()
}

/// Evaluates the sufficient-descent inequality for `cur`. The decrease is taken
/// from `cur.lagrangian_start` when present, otherwise from the previous
/// record's end value.
pub fn descent_diagnostics(
    prev: Option<&IterationRecord>,
    cur: &IterationRecord,
    hyper: &Hyperparams,
    risk: &RiskSpec,
) -> DescentDiagnostics {
    let rho = cur.rho_used.unwrap_or(f64::NAN);
    let h = risk.lipschitz_h;
    let c1 = rho / 2.0 - h / 2.0 - h * h / rho;
    let coeff_min = cur
        .tau_bar
        .iter()
        .chain(&cur.tau)
        .chain(&cur.theta_bar)
        .chain(&cur.theta)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let c2 = (hyper.nu / 2.0).min(c1).min(coeff_min);
    let start = cur
        .lagrangian_start
        .or_else(|| prev.and_then(|p| p.lagrangian))
        .unwrap_or(f64::NAN);
    let gap = start - cur.lagrangian.unwrap_or(f64::NAN);
    DescentDiagnostics {
        c1,
        rho_threshold_ok: rho > 2.0 * h,
        c2_empirical: c2,
        descent_gap: gap,
        inequality_ok: gap >= c2 * cur.ck_term.unwrap_or(0.0) - 1e-6,
    }
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub history: Vec<IterationRecord>,
    pub state: NetState<S>,
}

/// Initializes a state and runs `hyper.max_iters` iterations, calling
/// `observer` after each one.
pub fn train<S: Scalar>(
    arch: &Architecture,
    hyper: &Hyperparams,
    risk: &RiskSpec,
    train_data: &Dataset<S>,
    test_data: Option<&Dataset<S>>,
    eval: EvalPolicy,
    mut observer: impl FnMut(&IterationRecord),
) -> Result<TrainOutcome<S>> {
    hyper.validate()?;
    if let Some(test) = test_data {
        if test.num_features() != arch.input_dim() || test.num_classes() != arch.num_classes() {
            return Err(Error::DimensionMismatch(format!(
                "test set is {}x{} classes, architecture expects {} inputs and {} classes",
                test.num_features(),
                test.num_classes(),
                arch.input_dim(),
                arch.num_classes()
            )));
        }
    }
    let state = init_state(arch, train_data, hyper)?;
    let mut trainer = Trainer::new(state, hyper.clone(), *risk)?;
    let mut history = Vec::with_capacity(hyper.max_iters);
    for k in 0..hyper.max_iters {
        let mut rec = trainer.iterate(train_data)?;
        if eval.due(k, hyper.max_iters) {
            rec.train_accuracy = Some(trainer.evaluate(train_data)?);
            if let Some(test) = test_data {
                rec.test_accuracy = Some(trainer.evaluate(test)?);
            }
        }
        observer(&rec);
        history.push(rec);
    }
    Ok(TrainOutcome {
        history,
        state: trainer.state,
    })
}
