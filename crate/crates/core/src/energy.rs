//! Risk, penalty and augmented-Lagrangian evaluation plus block gradients.
//!
//! With `r = z_L − W_L a_{L−1} − b_L`, the smooth coupling term is
//!
//! ```text
//! φ = (ν/2) Σ_{l<L} (‖z_l − W_l a_{l−1} − b_l‖² + ‖a_l − f(z_l)‖²) + Σ u∘r + (ρ/2)‖r‖²
//! ```
//!
//! and the augmented Lagrangian is `R(z_L; y) + Σ Ω(W_l) + φ`. The risk is
//! softmax cross-entropy summed over samples.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{check_layer, Error, Result};
use crate::model::{sq_norm, NetState, Regularizer};
use crate::scalar::Scalar;

/// Term-by-term value of the augmented Lagrangian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown<S> {
    pub risk: S,
    pub regularizer_total: S,
    pub nu_penalty: S,
    pub dual_term: S,
    pub rho_penalty: S,
    pub total: S,
}

impl<S: Scalar> EnergyBreakdown<S> {
    /// Value of the relaxed objective without the dual and ρ terms.
    pub fn objective(&self) -> S {
        self.risk + self.regularizer_total + self.nu_penalty
    }

    pub fn phi(&self) -> S {
        self.nu_penalty + self.dual_term + self.rho_penalty
    }
}

/// The three pieces of φ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiTerms<S> {
    pub nu_penalty: S,
    pub dual_term: S,
    pub rho_penalty: S,
}

impl<S: Scalar> PhiTerms<S> {
    pub fn total(&self) -> S {
        self.nu_penalty + self.dual_term + self.rho_penalty
    }
}

fn ensure_finite<S: Scalar>(m: ArrayView2<S>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn ensure_same_shape<S>(a: ArrayView2<S>, b: ArrayView2<S>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Column-wise softmax, shifted by the column max for stability.
pub fn softmax_columns<S: Scalar>(z: ArrayView2<S>) -> Array2<S> {
    let mut out = z.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let max = col.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
        col.mapv_inplace(|v| (v - max).exp());
        let sum: S = col.iter().copied().sum();
        col.mapv_inplace(|v| v / sum);
    }
    out
}

/// Summed softmax cross-entropy `Σ_j Σ_k y_kj (logsumexp(z_j) − z_kj)`.
pub fn risk_value<S: Scalar>(zl: ArrayView2<S>, y: ArrayView2<S>) -> Result<S> {
    ensure_same_shape(zl, y, "risk")?;
    ensure_finite(zl, "z_L")?;
    let mut total = S::zero();
    for (zc, yc) in zl.axis_iter(Axis(1)).zip(y.axis_iter(Axis(1))) {
        let max = zc.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
        let lse = max + zc.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
        for (&zv, &yv) in zc.iter().zip(yc.iter()) {
            if yv != S::zero() {
                total += yv * (lse - zv);
            }
        }
    }
    Ok(total)
}

/// `softmax(z_L) − y`, column by column.
pub fn risk_grad<S: Scalar>(zl: ArrayView2<S>, y: ArrayView2<S>) -> Result<Array2<S>> {
    ensure_same_shape(zl, y, "risk gradient")?;
    ensure_finite(zl, "z_L")?;
    let mut g = softmax_columns(zl);
    g -= &y;
    Ok(g)
}

/// `z_l − W_l a_{l−1} − b_l ⊗ 1`; for `l = L` this is the constraint residual `r`.
pub fn linear_residual<S: Scalar>(state: &NetState<S>, x: ArrayView2<S>, l: usize) -> Result<Array2<S>> {
    check_layer(l, 1, state.num_layers())?;
    Ok(linear_residual_with(state, x, l, &state.w[l - 1]))
}

pub(crate) fn linear_residual_with<S: Scalar>(
    state: &NetState<S>,
    x: ArrayView2<S>,
    l: usize,
    w: &Array2<S>,
) -> Array2<S> {
    residual_parts(&state.z[l - 1], w, state.layer_input(l, x), &state.b[l - 1])
}

/// `z − W input − b ⊗ 1`.
pub(crate) fn residual_parts<S: Scalar>(
    z: &Array2<S>,
    w: &Array2<S>,
    input: ArrayView2<S>,
    b: &Array1<S>,
) -> Array2<S> {
    let mut r = w.dot(&input);
    r += &b.view().insert_axis(Axis(1));
    Zip::from(&mut r).and(z).for_each(|rv, &zv| *rv = zv - *rv);
    r
}

/// `‖a_l − f(z_l)‖²`.
pub(crate) fn activation_gap_sq<S: Scalar>(state: &NetState<S>, l: usize, a: &Array2<S>) -> S {
    let f = state.activation;
    let mut acc = S::zero();
    Zip::from(a).and(&state.z[l - 1]).for_each(|&av, &zv| {
        let d = av - f.apply(zv);
        acc += d * d;
    });
    acc
}

/// Energy of the linear coupling at layer `l` given its residual: `(ν/2)‖res‖²`
/// for hidden layers and `Σ u∘r + (ρ/2)‖r‖²` for the output layer.
pub(crate) fn coupling_energy<S: Scalar>(state: &NetState<S>, l: usize, residual: &Array2<S>, nu: S, rho: S) -> S {
    let half = S::of(0.5);
    if l < state.num_layers() {
        half * nu * sq_norm(residual)
    } else {
        let (dual, pen) = output_terms(&state.u, residual);
        dual + half * rho * pen
    }
}

/// `(Σ u∘r, ‖r‖²)`.
fn output_terms<S: Scalar>(u: &Array2<S>, r: &Array2<S>) -> (S, S) {
    let mut dual = S::zero();
    let mut sq = S::zero();
    Zip::from(u).and(r).for_each(|&uv, &rv| {
        dual += uv * rv;
        sq += rv * rv;
    });
    (dual, sq)
}

/// Lazily computed products `W_l a_{l−1}` for `l = 1..=L` (with `a_0 = x`).
///
/// A cache belongs to one state and one input batch. Updates in the
/// subproblems module keep it in sync; call [`Products::invalidate`] after
/// editing `W` or `a` by hand.
#[derive(Debug, Clone, Default)]
pub struct Products<S> {
    m: Vec<Option<Array2<S>>>,
}

impl<S: Scalar> Products<S> {
    pub fn new() -> Self {
        Products { m: Vec::new() }
    }

    pub fn invalidate(&mut self) {
        self.m.clear();
    }

    /// `W_l a_{l−1}`, computed on first use.
    pub fn get(&mut self, state: &NetState<S>, x: ArrayView2<S>, l: usize) -> &Array2<S> {
        if self.m.len() < state.num_layers() {
            self.m.resize(state.num_layers(), None);
        }
        self.m[l - 1].get_or_insert_with(|| state.w[l - 1].dot(&state.layer_input(l, x)))
    }

    pub(crate) fn set(&mut self, l: usize, product: Array2<S>) {
        if self.m.len() < l {
            self.m.resize(l, None);
        }
        self.m[l - 1] = Some(product);
    }

    /// `z_l − W_l a_{l−1} − b_l ⊗ 1` from the cached product.
    pub(crate) fn residual(&mut self, state: &NetState<S>, x: ArrayView2<S>, l: usize) -> Array2<S> {
        let m = self.get(state, x, l);
        let mut r = state.z[l - 1].clone();
        Zip::from(&mut r)
            .and(m)
            .and_broadcast(&state.b[l - 1].view().insert_axis(Axis(1)))
            .for_each(|rv, &mv, &bv| *rv -= mv + bv);
        r
    }
}

pub fn phi_terms<S: Scalar>(state: &NetState<S>, x: ArrayView2<S>, nu: S, rho: S) -> Result<PhiTerms<S>> {
    phi_terms_cached(state, x, nu, rho, &mut Products::new())
}

pub fn phi_terms_cached<S: Scalar>(
    state: &NetState<S>,
    x: ArrayView2<S>,
    nu: S,
    rho: S,
    products: &mut Products<S>,
) -> Result<PhiTerms<S>> {
    state.check_shapes(x)?;
    if let Some(block) = state.first_non_finite() {
        return Err(Error::NonFinite(block));
    }
    let l_count = state.num_layers();
    let half = S::of(0.5);
    let mut nu_sum = S::zero();
    for l in 1..l_count {
        let res = products.residual(state, x, l);
        nu_sum = nu_sum + sq_norm(&res) + activation_gap_sq(state, l, &state.a[l - 1]);
    }
    let r = products.residual(state, x, l_count);
    let (dual, sq) = output_terms(&state.u, &r);
    Ok(PhiTerms {
        nu_penalty: half * nu * nu_sum,
        dual_term: dual,
        rho_penalty: half * rho * sq,
    })
}

pub fn phi_value<S: Scalar>(state: &NetState<S>, x: ArrayView2<S>, nu: S, rho: S) -> Result<S> {
    Ok(phi_terms(state, x, nu, rho)?.total())
}

pub fn lagrangian_value<S: Scalar>(
    state: &NetState<S>,
    x: ArrayView2<S>,
    y: ArrayView2<S>,
    regularizer: Regularizer,
    nu: S,
    rho: S,
) -> Result<EnergyBreakdown<S>> {
    lagrangian_cached(state, x, y, regularizer, nu, rho, &mut Products::new())
}

pub fn lagrangian_cached<S: Scalar>(
    state: &NetState<S>,
    x: ArrayView2<S>,
    y: ArrayView2<S>,
    regularizer: Regularizer,
    nu: S,
    rho: S,
    products: &mut Products<S>,
) -> Result<EnergyBreakdown<S>> {
    let terms = phi_terms_cached(state, x, nu, rho, products)?;
    let risk = risk_value(state.z[state.num_layers() - 1].view(), y)?;
    let mut reg = S::zero();
    for w in &state.w {
        reg += regularizer_value(w, regularizer)?;
    }
    Ok(EnergyBreakdown {
        risk,
        regularizer_total: reg,
        nu_penalty: terms.nu_penalty,
        dual_term: terms.dual_term,
        rho_penalty: terms.rho_penalty,
        total: risk + reg + terms.nu_penalty + terms.dual_term + terms.rho_penalty,
    })
}

/// The gradient-side residual `W_l a_{l−1} + b_l − z_l`, scaled by ν for
/// hidden layers and by ρ with the `−u/ρ` shift for the output layer.
fn scaled_forward_gap<S: Scalar>(state: &NetState<S>, x: ArrayView2<S>, l: usize, nu: S, rho: S) -> Array2<S> {
    gap_from_residual(state, l, linear_residual_with(state, x, l, &state.w[l - 1]), nu, rho)
}

/// Turns the residual `z_l − W_l a_{l−1} − b_l` into the scaled gap.
pub(crate) fn gap_from_residual<S: Scalar>(
    state: &NetState<S>,
    l: usize,
    mut g: Array2<S>,
    nu: S,
    rho: S,
) -> Array2<S> {
    if l < state.num_layers() {
        g.mapv_inplace(|v| -nu * v);
    } else {
        // ρ(W a + b − z − u/ρ) = −(ρ r + u)
        Zip::from(&mut g)
            .and(&state.u)
            .for_each(|gv, &uv| *gv = -(rho * *gv + uv));
    }
    g
}

/// `W_{l+1}ᵀ gap + ν(a_l − f(z_l))`.
pub(crate) fn grad_a_from_gap<S: Scalar>(state: &NetState<S>, l: usize, gap: &Array2<S>, nu: S) -> Array2<S> {
    let mut g = state.w[l].t().dot(gap);
    let f = state.activation;
    Zip::from(&mut g)
        .and(&state.a[l - 1])
        .and(&state.z[l - 1])
        .for_each(|gv, &av, &zv| *gv += nu * (av - f.apply(zv)));
    g
}

/// ∇_{a_l} φ for `1 ≤ l ≤ L−1`.
pub fn grad_phi_a<S: Scalar>(state: &NetState<S>, x: ArrayView2<S>, l: usize, nu: S, rho: S) -> Result<Array2<S>> {
    check_layer(l, 1, state.num_layers() - 1)?;
    let gap = scaled_forward_gap(state, x, l + 1, nu, rho);
    Ok(grad_a_from_gap(state, l, &gap, nu))
}

/// ∇_{b_l} φ for `1 ≤ l ≤ L` (row sums over samples).
pub fn grad_phi_b<S: Scalar>(state: &NetState<S>, x: ArrayView2<S>, l: usize, nu: S, rho: S) -> Result<Array1<S>> {
    check_layer(l, 1, state.num_layers())?;
    let gap = scaled_forward_gap(state, x, l, nu, rho);
    Ok(gap.sum_axis(Axis(1)))
}

/// ∇_{W_l} φ for `1 ≤ l ≤ L`.
pub fn grad_phi_w<S: Scalar>(state: &NetState<S>, x: ArrayView2<S>, l: usize, nu: S, rho: S) -> Result<Array2<S>> {
    check_layer(l, 1, state.num_layers())?;
    let gap = scaled_forward_gap(state, x, l, nu, rho);
    Ok(gap.dot(&state.layer_input(l, x).t()))
}

/// ∇_{z_L}(R + φ) = `softmax(z_L) − y + u + ρ r`.
pub fn grad_output_z<S: Scalar>(state: &NetState<S>, x: ArrayView2<S>, y: ArrayView2<S>, rho: S) -> Result<Array2<S>> {
    let l_count = state.num_layers();
    let mut g = risk_grad(state.z[l_count - 1].view(), y)?;
    let r = linear_residual_with(state, x, l_count, &state.w[l_count - 1]);
    Zip::from(&mut g)
        .and(&state.u)
        .and(&r)
        .for_each(|gv, &uv, &rv| *gv = *gv + uv + rho * rv);
    Ok(g)
}

/// Ω(W): `λ‖W‖₁` for ℓ1 and `λ‖W‖²` for ℓ2.
pub fn regularizer_value<S: Scalar>(w: &Array2<S>, spec: Regularizer) -> Result<S> {
    spec.validate()?;
    Ok(match spec {
        Regularizer::None => S::zero(),
        Regularizer::L1(lambda) => S::of(lambda) * w.iter().fold(S::zero(), |acc, v| acc + v.abs()),
        Regularizer::L2(lambda) => S::of(lambda) * sq_norm(w),
    })
}

/// `argmin_W (θ/2)‖W − V‖² + Ω(W)`.
pub fn prox_regularizer<S: Scalar>(v: &Array2<S>, theta: S, spec: Regularizer) -> Result<Array2<S>> {
    spec.validate()?;
    if theta.is_nan() || theta <= S::zero() {
        return Err(Error::InvalidHyperparams(format!(
            "proximal weight must be positive, got {theta}"
        )));
    }
    Ok(match spec {
        Regularizer::None => v.clone(),
        Regularizer::L1(lambda) => {
            let thr = S::of(lambda) / theta;
            v.mapv(|e| soft_threshold(e, thr))
        }
        Regularizer::L2(lambda) => {
            let scale = theta / (theta + S::of(2.0 * lambda));
            v.mapv(|e| e * scale)
        }
    })
}

#[inline]
pub fn soft_threshold<S: Scalar>(v: S, thr: S) -> S {
    if v > thr {
        v - thr
    } else if v < -thr {
        v + thr
    } else {
        S::zero()
    }
}
