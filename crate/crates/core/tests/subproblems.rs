mod common;

use common::{labels, random_state, rng, sigma_max, uniform};
use dladmm::energy::{
    grad_phi_a, grad_phi_b, grad_phi_w, phi_value, prox_regularizer, regularizer_value, risk_grad, risk_value,
};
use dladmm::subproblems::{
    dual_update, output_z_objective, quadratic_model, update_a_backtrack, update_b_closed, update_w_backtrack,
    update_z_hidden, update_z_output_fista, z_hidden_scalar, BacktrackParams, Penalty,
};
use dladmm::trainer::lemma2_check;
use dladmm::{Activation, NetState64, Products, Regularizer, RiskSpec, SweepDirection};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

fn params(t0: f64) -> BacktrackParams {
    BacktrackParams {
        t0,
        growth: 2.0,
        max_trials: 200,
    }
}

/// Minimizes a 1-D function by repeatedly refining a grid around the best point.
fn grid_min_1d(center: f64, width: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (center - width, center + width);
    let mut best = f64::INFINITY;
    for _ in 0..30 {
        let step = (hi - lo) / 400.0;
        let mut arg = lo;
        for i in 0..=400 {
            let z = lo + step * i as f64;
            let v = f(z);
            if v < best {
                best = v;
                arg = z;
            }
        }
        lo = arg - 2.0 * step;
        hi = arg + 2.0 * step;
    }
    best
}

fn grid_min_2d(center: [f64; 2], width: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    let mut c = center;
    let mut half = width;
    let mut best = f64::INFINITY;
    for _ in 0..40 {
        let step = half / 50.0;
        let mut arg = c;
        for i in 0..=100 {
            for j in 0..=100 {
                let p = [c[0] - half + step * i as f64, c[1] - half + step * j as f64];
                let v = f(p[0], p[1]);
                if v < best {
                    best = v;
                    arg = p;
                }
            }
        }
        c = arg;
        half = 2.0 * step;
    }
    best
}

#[test]
fn hidden_z_matches_grid_search() {
    let mut r = rng(21);
    for act in [Activation::Relu, Activation::LeakyRelu(0.2)] {
        for _ in 0..1000 {
            let c = 6.0 * r.random::<f64>() - 3.0;
            let a = 6.0 * r.random::<f64>() - 3.0;
            let obj = |z: f64| (z - c).powi(2) + (a - act.apply(z)).powi(2);
            let z = z_hidden_scalar(c, a, act);
            let oracle = grid_min_1d(0.0, 10.0, obj);
            assert!(
                (obj(z) - oracle).abs() <= 1e-6,
                "c={c} a={a}: {} vs grid {oracle}",
                obj(z)
            );
            assert!(obj(z) - oracle <= 1e-12, "grid beat the closed form at c={c} a={a}");
        }
    }
}

#[test]
fn hidden_z_update_is_elementwise() {
    let mut r = rng(22);
    let dims = [3, 4, 2];
    let x = uniform(&mut r, 3, 5, 1.0);
    let mut state = random_state(&mut r, &dims, 5, Activation::Relu, 0.0);
    let c = {
        let mut c = state.w[0].dot(&x);
        c += &state.b[0].view().insert_axis(Axis(1));
        c
    };
    let a = state.a[0].clone();
    update_z_hidden(&mut state, x.view(), 1, &mut Products::new()).unwrap();
    for ((idx, &z), &cv) in state.z[0].indexed_iter().zip(c.iter()) {
        assert_eq!(z, z_hidden_scalar(cv, a[idx], Activation::Relu));
    }
    assert_eq!(z_hidden_scalar(1.0, 3.0, Activation::Relu), 2.0);
    assert_eq!(z_hidden_scalar(-1.0, 0.0, Activation::Relu), -1.0);
}

fn gd_objective(z: &Array2<f64>, c: &Array2<f64>, u: &Array2<f64>, y: &Array2<f64>, rho: f64) -> f64 {
    let d = z - c;
    risk_value(z.view(), y.view()).unwrap() + (u * &d).sum() + 0.5 * rho * (&d * &d).sum()
}

/// Plain gradient descent with the softmax gradient written out directly.
fn gd_oracle(c: &Array2<f64>, u: &Array2<f64>, y: &Array2<f64>, rho: f64, steps: usize) -> Array2<f64> {
    let step = 1.0 / (1.0 + rho);
    let mut z = c.clone();
    for _ in 0..steps {
        let mut g = Array2::zeros(z.dim());
        for j in 0..z.ncols() {
            let col = z.column(j);
            let m = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let e: Vec<f64> = col.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for i in 0..z.nrows() {
                g[[i, j]] = e[i] / s - y[[i, j]] + u[[i, j]] + rho * (z[[i, j]] - c[[i, j]]);
            }
        }
        z = z - g * step;
    }
    z
}

fn output_affine(state: &NetState64, x: &Array2<f64>) -> Array2<f64> {
    let l = state.num_layers();
    let input = state.layer_input(l, x.view());
    let mut c = state.w[l - 1].dot(&input);
    c += &state.b[l - 1].view().insert_axis(Axis(1));
    c
}

#[test]
fn output_fista_matches_gradient_descent() {
    let mut r = rng(23);
    for case in 0..20 {
        let rho = 0.5 + 1.5 * r.random::<f64>();
        let x = uniform(&mut r, 2, 2, 1.0);
        let y = labels(&mut r, 3, 2);
        let mut state = random_state(&mut r, &[2, 2, 3], 2, Activation::Relu, 0.0);
        let c = output_affine(&state, &x);
        let gd = gd_oracle(&c, &state.u, &y, rho, 100_000);
        let gd_value = gd_objective(&gd, &c, &state.u, &y, rho);
        let out = update_z_output_fista(
            &mut state,
            x.view(),
            y.view(),
            &RiskSpec::default(),
            rho,
            100_000,
            1e-13,
            &mut Products::new(),
        )
        .unwrap();
        let ours = output_z_objective(state.z[1].view(), c.view(), state.u.view(), y.view(), rho).unwrap();
        assert!((ours - out.objective).abs() < 1e-12);
        assert!(
            (ours - gd_value).abs() < 1e-8,
            "case {case}: fista {ours} vs gd {gd_value}"
        );
    }
}

#[test]
fn dual_identity_after_exact_output_solve() {
    let mut r = rng(24);
    for _ in 0..10 {
        let rho = 0.5 + 2.0 * r.random::<f64>();
        let tol = 1e-8;
        let x = uniform(&mut r, 3, 4, 1.0);
        let y = labels(&mut r, 3, 4);
        let mut state = random_state(&mut r, &[3, 3, 3], 4, Activation::Relu, 0.0);
        let out = update_z_output_fista(
            &mut state,
            x.view(),
            y.view(),
            &RiskSpec::default(),
            rho,
            100_000,
            tol,
            &mut Products::new(),
        )
        .unwrap();
        assert!(out.converged);
        let c = output_affine(&state, &x);
        let res = &state.z[1] - &c;
        state.u = dual_update(&state.u, &res, rho).unwrap();
        let check = lemma2_check(&state, y.view()).unwrap();
        assert!(check <= tol * (1.0 + rho / (1.0 + rho)), "lemma2 {check}");
    }
}

#[test]
fn huge_rho_pins_output_to_affine_value() {
    let mut r = rng(25);
    let x = uniform(&mut r, 3, 4, 1.0);
    let y = labels(&mut r, 3, 4);
    let mut state = random_state(&mut r, &[3, 3, 3], 4, Activation::Relu, 0.0);
    let c = output_affine(&state, &x);
    update_z_output_fista(
        &mut state,
        x.view(),
        y.view(),
        &RiskSpec::default(),
        1e8,
        1000,
        1e-6,
        &mut Products::new(),
    )
    .unwrap();
    let gap = (&state.z[1] - &c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(gap < 1e-4, "gap {gap}");
}

#[test]
fn stationary_output_is_returned_unchanged() {
    let mut r = rng(26);
    let x = uniform(&mut r, 3, 4, 1.0);
    let y = labels(&mut r, 3, 4);
    let mut state = random_state(&mut r, &[3, 3, 3], 4, Activation::Relu, 0.0);
    let c = output_affine(&state, &x);
    state.z[1] = c.clone();
    state.u = -risk_grad(c.view(), y.view()).unwrap();
    let out = update_z_output_fista(
        &mut state,
        x.view(),
        y.view(),
        &RiskSpec::default(),
        1.0,
        100,
        1e-10,
        &mut Products::new(),
    )
    .unwrap();
    assert_eq!(out.iterations, 0);
    assert_eq!(state.z[1], c);
}

fn random_penalty(r: &mut rand_chacha::ChaCha8Rng) -> Penalty<f64> {
    Penalty {
        nu: 10f64.powf(-3.0 * r.random::<f64>()),
        rho: 10f64.powf(1.0 - 3.0 * r.random::<f64>()),
    }
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a * b).sum()
}

#[test]
fn accepted_steps_majorize_the_full_penalty() {
    let mut r = rng(27);
    for case in 0..50 {
        let dims: Vec<usize> = (0..4).map(|_| r.random_range(2..=4)).collect();
        let n = r.random_range(1..=5);
        let x = uniform(&mut r, dims[0], n, 1.0);
        let act = if case % 2 == 0 {
            Activation::Relu
        } else {
            Activation::LeakyRelu(0.1)
        };
        let state = random_state(&mut r, &dims, n, act, 0.0);
        let pen = random_penalty(&mut r);
        let dir = if case % 3 == 0 {
            SweepDirection::Forward
        } else {
            SweepDirection::Backward
        };
        let phi = |s: &NetState64| phi_value(s, x.view(), pen.nu, pen.rho).unwrap();
        let phi_p = phi(&state);
        let slack = 1e-12 * phi_p.abs().max(1.0);

        for l in 1..state.num_layers() {
            let mut s = state.clone();
            let g = grad_phi_a(&s, x.view(), l, pen.nu, pen.rho).unwrap();
            let p = s.a[l - 1].clone();
            let t0 = 10f64.powf(-6.0 * r.random::<f64>());
            let res = update_a_backtrack(&mut s, x.view(), l, dir, pen, params(t0), &mut Products::new()).unwrap();
            let q = quadratic_model(phi_p, &g, &p, &s.a[l - 1], res.accepted_coeff);
            assert!(phi(&s) <= q + slack, "case {case} a[{l}]: phi {} > Q {q}", phi(&s));
            let tangent = quadratic_model(phi_p, &g, &p, &p, res.accepted_coeff);
            assert!((tangent - phi_p).abs() <= 1e-12 * phi_p.abs().max(1e-300));
        }
        for l in 1..=state.num_layers() {
            for reg in [Regularizer::None, Regularizer::L1(0.05), Regularizer::L2(0.05)] {
                let mut s = state.clone();
                let g = grad_phi_w(&s, x.view(), l, pen.nu, pen.rho).unwrap();
                let p = s.w[l - 1].clone();
                let t0 = 10f64.powf(-6.0 * r.random::<f64>());
                let res =
                    update_w_backtrack(&mut s, x.view(), l, dir, pen, reg, params(t0), &mut Products::new()).unwrap();
                let zeta = &s.w[l - 1];
                let pq = quadratic_model(phi_p, &g, &p, zeta, res.accepted_coeff);
                assert!(
                    phi(&s) <= pq + slack,
                    "case {case} W[{l}] {reg:?}: phi {} > P {pq}",
                    phi(&s)
                );
                assert!(
                    (res.movement_sq - (zeta - &p).mapv(|v| v * v).sum()).abs() <= 1e-12 * res.movement_sq.max(1e-300)
                );
            }
        }
    }
}

#[test]
fn block_updates_never_increase_their_objective() {
    let mut r = rng(31);
    for case in 0..40 {
        let dims: Vec<usize> = (0..4).map(|_| r.random_range(2..=4)).collect();
        let n = r.random_range(1..=5);
        let x = uniform(&mut r, dims[0], n, 1.0);
        let y = labels(&mut r, dims[3], n);
        let act = if case % 2 == 0 {
            Activation::Relu
        } else {
            Activation::LeakyRelu(0.2)
        };
        let mut s = random_state(&mut r, &dims, n, act, 0.0);
        let pen = random_penalty(&mut r);
        let reg = [Regularizer::None, Regularizer::L1(0.05), Regularizer::L2(0.05)][case % 3];
        let dir = if case % 2 == 0 {
            SweepDirection::Backward
        } else {
            SweepDirection::Forward
        };
        let energy = |s: &NetState64| {
            phi_value(s, x.view(), pen.nu, pen.rho).unwrap()
                + s.w.iter().map(|w| regularizer_value(w, reg).unwrap()).sum::<f64>()
        };
        let check = |s: &NetState64, before: f64, what: &str| {
            let after = energy(s);
            assert!(
                after <= before + 1e-10 * before.abs().max(1.0),
                "case {case} {what}: {before} -> {after}"
            );
        };
        let mut products = Products::new();
        for l in (1..=3).rev() {
            if l < 3 {
                let e = energy(&s);
                update_a_backtrack(&mut s, x.view(), l, dir, pen, params(1e-3), &mut products).unwrap();
                check(&s, e, "a");
                let e = energy(&s);
                update_z_hidden(&mut s, x.view(), l, &mut products).unwrap();
                check(&s, e, "z");
            } else {
                let c = output_affine(&s, &x);
                let obj = |s: &NetState64| {
                    output_z_objective(s.z[2].view(), c.view(), s.u.view(), y.view(), pen.rho).unwrap()
                };
                let before = obj(&s);
                update_z_output_fista(
                    &mut s,
                    x.view(),
                    y.view(),
                    &RiskSpec::default(),
                    pen.rho,
                    30,
                    1e-12,
                    &mut products,
                )
                .unwrap();
                assert!(obj(&s) <= before + 1e-10 * before.abs().max(1.0), "case {case} z_L");
            }
            let e = energy(&s);
            update_b_closed(&mut s, x.view(), l, dir, pen, &mut products).unwrap();
            check(&s, e, "b");
            let e = energy(&s);
            update_w_backtrack(&mut s, x.view(), l, dir, pen, reg, params(1e-3), &mut products).unwrap();
            check(&s, e, "W");
        }
    }
}

#[test]
fn quadratic_model_is_first_order_tangent() {
    let mut r = rng(28);
    let dims = [3, 4, 3, 2];
    let x = uniform(&mut r, 3, 4, 1.0);
    let state = random_state(&mut r, &dims, 4, Activation::LeakyRelu(0.1), 0.0);
    let (nu, rho) = (0.5, 1.5);
    let g = grad_phi_a(&state, x.view(), 1, nu, rho).unwrap();
    let p = state.a[0].clone();
    let phi_p = phi_value(&state, x.view(), nu, rho).unwrap();
    let d = uniform(&mut r, p.nrows(), p.ncols(), 1.0);
    let mut prev = f64::INFINITY;
    for k in 1..6 {
        let eps = 10f64.powi(-k);
        let cand = &p + &(&d * eps);
        let mut s = state.clone();
        s.a[0] = cand.clone();
        let gap = (phi_value(&s, x.view(), nu, rho).unwrap() - quadratic_model(phi_p, &g, &p, &cand, 0.0)).abs() / eps;
        assert!(gap < prev, "gap/eps must shrink with eps");
        prev = gap;
    }
    assert!(prev < 1e-4);
    assert!(dot(&g, &d).is_finite());
}

#[test]
fn activation_curvature_bound_is_respected() {
    let mut r = rng(29);
    for _ in 0..20 {
        let dims = [3, 4, 3, 2];
        let n = 5;
        let x = uniform(&mut r, 3, n, 1.0);
        let state = random_state(&mut r, &dims, n, Activation::Relu, 0.0);
        let nu = 0.3;
        let pen = Penalty { nu, rho: 1.0 };
        // φ is quadratic in a_1 with Hessian ν(W₂ᵀW₂ + I)
        let lambda = nu * (sigma_max(&state.w[1]).powi(2) + 1.0);

        let mut s = state.clone();
        let res = update_a_backtrack(
            &mut s,
            x.view(),
            1,
            SweepDirection::Backward,
            pen,
            params(1e-9),
            &mut Products::new(),
        )
        .unwrap();
        assert!(
            res.accepted_coeff <= 2.0 * lambda * (1.0 + 1e-12),
            "t {} vs Λ {lambda}",
            res.accepted_coeff
        );

        let mut s = state.clone();
        let t0 = lambda * 1.01;
        let res = update_a_backtrack(
            &mut s,
            x.view(),
            1,
            SweepDirection::Forward,
            pen,
            params(t0),
            &mut Products::new(),
        )
        .unwrap();
        assert_eq!(res.trials, 0);
        assert_eq!(res.accepted_coeff, t0);
    }
}

#[test]
fn stationary_blocks_are_left_alone() {
    let mut r = rng(30);
    let dims = [3, 4, 2];
    let x = uniform(&mut r, 3, 4, 1.0);
    let mut state = random_state(&mut r, &dims, 4, Activation::Relu, 0.0);
    // consistent state with zero dual: every φ gradient vanishes
    state.z[0] = state.w[0].dot(&x) + state.b[0].view().insert_axis(Axis(1));
    state.a[0] = state.z[0].mapv(|v| v.max(0.0));
    state.z[1] = state.w[1].dot(&state.a[0]) + state.b[1].view().insert_axis(Axis(1));
    state.u.fill(0.0);
    let pen = Penalty { nu: 0.5, rho: 1.0 };
    let before = state.clone();
    let res = update_a_backtrack(
        &mut state,
        x.view(),
        1,
        SweepDirection::Backward,
        pen,
        params(0.25),
        &mut Products::new(),
    )
    .unwrap();
    assert_eq!(res.accepted_coeff, 0.25);
    for l in 1..=2 {
        update_w_backtrack(
            &mut state,
            x.view(),
            l,
            SweepDirection::Backward,
            pen,
            Regularizer::None,
            params(0.25),
            &mut Products::new(),
        )
        .unwrap();
        let moved = update_b_closed(
            &mut state,
            x.view(),
            l,
            SweepDirection::Backward,
            pen,
            &mut Products::new(),
        )
        .unwrap();
        assert_eq!(moved, 0.0);
    }
    assert_eq!(state, before);
}

/// P(ζ; α) + Ω(ζ) for a 2×1 weight block.
fn prox_objective(phi_p: f64, g: &Array2<f64>, p: &Array2<f64>, alpha: f64, reg: Regularizer, w: [f64; 2]) -> f64 {
    let zeta = Array2::from_shape_vec((2, 1), w.to_vec()).unwrap();
    quadratic_model(phi_p, g, p, &zeta, alpha) + regularizer_value(&zeta, reg).unwrap()
}

#[test]
fn weight_step_matches_two_parameter_grid() {
    let mut r = rng(31);
    for case in 0..10 {
        // layer 1 of [1, 2, 2] is hidden, layer 2 of [3, 1, 2] is the output
        let (dims, l): (Vec<usize>, usize) = if case % 2 == 0 {
            (vec![1, 2, 2], 1)
        } else {
            (vec![3, 1, 2], 2)
        };
        let n = 4;
        let x = uniform(&mut r, dims[0], n, 1.0);
        let mut state = random_state(&mut r, &dims, n, Activation::Relu, 0.0);
        let pen = Penalty { nu: 0.4, rho: 0.8 };
        let reg = Regularizer::L1(0.02 + 0.3 * r.random::<f64>());
        let g = grad_phi_w(&state, x.view(), l, pen.nu, pen.rho).unwrap();
        let p = state.w[l - 1].clone();
        let phi_p = phi_value(&state, x.view(), pen.nu, pen.rho).unwrap();
        let res = update_w_backtrack(
            &mut state,
            x.view(),
            l,
            SweepDirection::Backward,
            pen,
            reg,
            params(1e-4),
            &mut Products::new(),
        )
        .unwrap();
        let zeta = &state.w[l - 1];
        let ours = prox_objective(phi_p, &g, &p, res.accepted_coeff, reg, [zeta[[0, 0]], zeta[[1, 0]]]);
        let center = [
            p[[0, 0]] - g[[0, 0]] / res.accepted_coeff,
            p[[1, 0]] - g[[1, 0]] / res.accepted_coeff,
        ];
        let width = 2.0 * (center[0].abs() + center[1].abs() + 1.0);
        let grid = grid_min_2d(center, width, |a, b| {
            prox_objective(phi_p, &g, &p, res.accepted_coeff, reg, [a, b])
        });
        assert!((ours - grid).abs() < 1e-8, "case {case}: {ours} vs grid {grid}");
    }
}

#[test]
fn l1_kill_zone_is_exactly_zero() {
    let mut r = rng(32);
    let x = uniform(&mut r, 3, 4, 1.0);
    let mut state = random_state(&mut r, &[3, 4, 2], 4, Activation::Relu, 0.0);
    let pen = Penalty { nu: 0.5, rho: 1.0 };
    let reg = Regularizer::L1(0.4);
    let g = grad_phi_w(&state, x.view(), 1, pen.nu, pen.rho).unwrap();
    let p = state.w[0].clone();
    let res = update_w_backtrack(
        &mut state,
        x.view(),
        1,
        SweepDirection::Forward,
        pen,
        reg,
        params(1.0),
        &mut Products::new(),
    )
    .unwrap();
    let alpha = res.accepted_coeff;
    for ((idx, &w), &pv) in state.w[0].indexed_iter().zip(p.iter()) {
        let v = pv - g[idx] / alpha;
        if v.abs() <= 0.4 / alpha {
            assert_eq!(w, 0.0);
        } else {
            assert!(w != 0.0);
        }
    }
}

#[test]
fn prox_matches_scalar_grid() {
    let mut r = rng(33);
    for reg in [Regularizer::L1(0.3), Regularizer::L2(0.7), Regularizer::None] {
        let theta = 0.2 + 2.0 * r.random::<f64>();
        let v = uniform(&mut r, 3, 4, 2.0);
        let w = prox_regularizer(&v, theta, reg).unwrap();
        for (&vv, &wv) in v.iter().zip(w.iter()) {
            let f = |x: f64| {
                let omega = match reg {
                    Regularizer::None => 0.0,
                    Regularizer::L1(l) => l * x.abs(),
                    Regularizer::L2(l) => l * x * x,
                };
                0.5 * theta * (x - vv).powi(2) + omega
            };
            let grid = grid_min_1d(vv, 4.0, f);
            assert!((f(wv) - grid).abs() < 1e-6, "{reg:?}: v={vv} prox {wv}");
        }
    }
    let half: Array2<f64> = prox_regularizer(&ndarray::array![[0.5]], 1.0, Regularizer::L1(0.2)).unwrap();
    assert!((half[[0, 0]] - 0.3).abs() < 1e-15);
}

/// Solves `A b = rhs` by Gaussian elimination with partial pivoting.
fn solve(mut a: Array2<f64>, mut rhs: Array1<f64>) -> Array1<f64> {
    let n = rhs.len();
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| a[[i, k]].abs().total_cmp(&a[[j, k]].abs()))
            .unwrap();
        for c in 0..n {
            a.swap([k, c], [piv, c]);
        }
        rhs.swap(k, piv);
        for i in k + 1..n {
            let f = a[[i, k]] / a[[k, k]];
            for c in k..n {
                a[[i, c]] -= f * a[[k, c]];
            }
            rhs[i] -= f * rhs[k];
        }
    }
    let mut b = Array1::zeros(n);
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|c| a[[k, c]] * b[c]).sum();
        b[k] = (rhs[k] - s) / a[[k, k]];
    }
    b
}

/// Least squares over `b` for `Σ_j ‖target_j − b‖²`, posed with an explicit
/// stacked design matrix.
fn least_squares_bias(target: &Array2<f64>) -> Array1<f64> {
    let (rows, n) = target.dim();
    let mut design = Array2::zeros((rows * n, rows));
    let mut obs = Array1::zeros(rows * n);
    for j in 0..n {
        for i in 0..rows {
            design[[j * rows + i, i]] = 1.0;
            obs[j * rows + i] = target[[i, j]];
        }
    }
    solve(design.t().dot(&design), design.t().dot(&obs))
}

#[test]
fn bias_step_lands_on_least_squares_minimizer() {
    let mut r = rng(34);
    for case in 0..20 {
        let dims = [3, 4, 3];
        let n = r.random_range(1..=6);
        let x = uniform(&mut r, 3, n, 1.0);
        let mut state = random_state(&mut r, &dims, n, Activation::Relu, 0.0);
        let pen = Penalty { nu: 0.3, rho: 1.7 };
        for l in 1..=2 {
            let input = state.layer_input(l, x.view()).to_owned();
            let mut target = &state.z[l - 1] - &state.w[l - 1].dot(&input);
            if l == 2 {
                target = target + &state.u / pen.rho;
            }
            let oracle = least_squares_bias(&target);
            let before = state.b[l - 1].clone();
            let grad = grad_phi_b(&state, x.view(), l, pen.nu, pen.rho).unwrap();
            update_b_closed(
                &mut state,
                x.view(),
                l,
                SweepDirection::Backward,
                pen,
                &mut Products::new(),
            )
            .unwrap();
            // isotropic Hessian: κ = 1, so one step reaches the minimizer
            for (got, want) in state.b[l - 1].iter().zip(oracle.iter()) {
                assert!((got - want).abs() < 1e-10, "case {case} layer {l}: {got} vs {want}");
            }
            if l == 1 && n == 1 {
                let paper_step = &before - &(grad / pen.nu);
                for (got, want) in state.b[0].iter().zip(paper_step.iter()) {
                    assert!((got - want).abs() < 1e-12);
                }
            }
        }
    }
}
