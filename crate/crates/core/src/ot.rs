//! Entropy-regularized optimal transport between weighted point clouds.
//!
//! The solver runs symmetric, damped Sinkhorn updates in the log domain:
//!
//! ```text
//! f ← ½ (f + T_a(g)),   g ← ½ (g + T_b(f))
//! T_a(g)_i = −ε log Σ_j b_j exp((g_j − C_ij) / ε)
//! ```
//!
//! followed by one undamped extrapolation `F = T_a(g)`, `G = T_b(f)`. The
//! returned cost is `⟨a, F⟩ + ⟨b, G⟩`, which equals `⟨Γ, C⟩ + ε·KL(Γ | a⊗b)`
//! at the fixed point. Swapping the two clouds swaps `f` and `g` exactly, so
//! the cost is bitwise symmetric in its arguments.
//!
//! Gradients with respect to both point sets are available either by
//! reverse-differentiating the whole truncated iteration sequence
//! ([`GradMode::Unrolled`]) or from the transport plan of the final
//! potentials ([`GradMode::Potentials`]).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weighted empirical measure: `n` points in `d` dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Tensor,
    weights: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: Tensor, weights: Vec<f64>) -> Result<Self> {
        if points.shape().len() != 2 {
            return Err(Error::invalid(format!(
                "point cloud needs an n×d matrix, got shape {:?}",
                points.shape()
            )));
        }
        if weights.len() != points.rows() {
            return Err(Error::invalid(format!(
                "{} weights for {} points",
                weights.len(),
                points.rows()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        if !points.all_finite() {
            return Err(Error::invalid("non-finite point coordinates"));
        }
        Ok(PointCloud { points, weights })
    }

    /// Uniform weights `1/n`.
    pub fn uniform(points: Tensor) -> Result<Self> {
        let n = points.rows();
        PointCloud::new(points, vec![1.0 / n as f64; n])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        PointCloud::uniform(Tensor::from_rows(rows)?)
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Epsilon {
    Absolute(f64),
    /// Multiple of the mean entry of the cross cost matrix.
    RelativeToMeanCost(f64),
}

impl Epsilon {
    fn value(&self) -> f64 {
        match *self {
            Epsilon::Absolute(v) | Epsilon::RelativeToMeanCost(v) => v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    Unrolled,
    Potentials,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornParams {
    pub epsilon: Epsilon,
    pub max_iters: usize,
    /// Stop once the L1 violation of both marginals falls below this.
    pub tol: f64,
    pub grad_mode: GradMode,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        SinkhornParams {
            epsilon: Epsilon::RelativeToMeanCost(0.01),
            max_iters: 200,
            tol: 1e-6,
            grad_mode: GradMode::Unrolled,
        }
    }
}

impl SinkhornParams {
    pub fn absolute(epsilon: f64) -> Self {
        SinkhornParams {
            epsilon: Epsilon::Absolute(epsilon),
            ..Default::default()
        }
    }

    pub fn with_iters(mut self, max_iters: usize, tol: f64) -> Self {
        self.max_iters = max_iters;
        self.tol = tol;
        self
    }

    pub fn with_grad_mode(mut self, mode: GradMode) -> Self {
        self.grad_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let eps = self.epsilon.value();
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {eps}")));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        Ok(())
    }

    /// Resolves ε against a cost matrix.
    pub fn resolve_epsilon(&self, cost: &Tensor) -> f64 {
        match self.epsilon {
            Epsilon::Absolute(e) => e,
            Epsilon::RelativeToMeanCost(r) => {
                let mean = cost.sum() / cost.len() as f64;
                (r * mean).max(1e-12)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransportPlan {
    pub plan: Tensor,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub epsilon: f64,
    pub iterations_used: usize,
    pub final_marginal_violation: f64,
    /// False when `max_iters` ran out before the marginals met `tol`.
    pub converged: bool,
}

/// `C_ij = ½‖a_i − b_j‖²`.
pub fn cost_matrix(a: &PointCloud, b: &PointCloud) -> Result<Tensor> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let (n, m) = (a.len(), b.len());
    let mut c = Vec::with_capacity(n * m);
    for i in 0..n {
        let x = a.points.row(i);
        for j in 0..m {
            let y = b.points.row(j);
            let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
            c.push(0.5 * d2);
        }
    }
    Ok(Tensor::from_parts(vec![n, m], c))
}

fn transpose(c: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            t[j * n + i] = c[i * m + j];
        }
    }
    t
}

/// For each row `i`: `lse_i = log Σ_j exp(h_j − K_ij)`.
fn row_lse(k: &[f64], h: &[f64], lse: &mut [f64]) {
    let m = h.len();
    for (i, out) in lse.iter_mut().enumerate() {
        let row = &k[i * m..(i + 1) * m];
        let mx = row
            .iter()
            .zip(h)
            .map(|(kv, hv)| hv - kv)
            .fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().zip(h).map(|(kv, hv)| (hv - kv - mx).exp()).sum();
        *out = mx + s.ln();
    }
}

/// One Sinkhorn solve with everything the reverse pass needs.
struct Solve {
    n: usize,
    m: usize,
    eps: f64,
    /// Cost scaled by 1/ε, row-major n×m, and its transpose.
    k: Vec<f64>,
    kt: Vec<f64>,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    /// Potentials `(f_k, g_k)` for k = 0..=iters.
    f_hist: Vec<Vec<f64>>,
    g_hist: Vec<Vec<f64>>,
    /// Row log-sum-exps of `T_a(g_k)` and `T_b(f_k)` for each k.
    lse_a: Vec<Vec<f64>>,
    lse_b: Vec<Vec<f64>>,
    value: f64,
    violation: f64,
    converged: bool,
}

impl Solve {
    fn run(a: &[f64], b: &[f64], cost: &Tensor, eps: f64, max_iters: usize, tol: f64) -> Self {
        let (n, m) = (a.len(), b.len());
        let k: Vec<f64> = cost.data().iter().map(|c| c / eps).collect();
        let kt = transpose(&k, n, m);
        let log_a: Vec<f64> = a.iter().map(|w| w.ln()).collect();
        let log_b: Vec<f64> = b.iter().map(|w| w.ln()).collect();

        let mut f = vec![0.0; n];
        let mut g = vec![0.0; m];
        let mut s = Solve {
            n,
            m,
            eps,
            k,
            kt,
            log_a,
            log_b,
            f_hist: Vec::new(),
            g_hist: Vec::new(),
            lse_a: Vec::new(),
            lse_b: Vec::new(),
            value: 0.0,
            violation: f64::INFINITY,
            converged: false,
        };
        let mut ha = vec![0.0; m];
        let mut hb = vec![0.0; n];
        for iter in 0..=max_iters {
            for j in 0..m {
                ha[j] = s.log_b[j] + g[j] / eps;
            }
            for i in 0..n {
                hb[i] = s.log_a[i] + f[i] / eps;
            }
            let mut la = vec![0.0; n];
            let mut lb = vec![0.0; m];
            row_lse(&s.k, &ha, &mut la);
            row_lse(&s.kt, &hb, &mut lb);
            // Row sums of the plan: a_i exp((f_i − T_a(g)_i)/ε) = a_i exp(f_i/ε + lse_i).
            let mut viol = 0.0;
            for i in 0..n {
                viol += (a[i] * (f[i] / eps + la[i]).exp() - a[i]).abs();
            }
            for j in 0..m {
                viol += (b[j] * (g[j] / eps + lb[j]).exp() - b[j]).abs();
            }
            s.violation = viol;
            s.f_hist.push(f.clone());
            s.g_hist.push(g.clone());
            s.lse_a.push(la.clone());
            s.lse_b.push(lb.clone());
            if viol < tol {
                s.converged = true;
            }
            if s.converged || iter == max_iters {
                let fin_f: f64 = a.iter().zip(&la).map(|(w, l)| w * (-eps * l)).sum();
                let fin_g: f64 = b.iter().zip(&lb).map(|(w, l)| w * (-eps * l)).sum();
                s.value = fin_f + fin_g;
                break;
            }
            for i in 0..n {
                f[i] = 0.5 * (f[i] - eps * la[i]);
            }
            for j in 0..m {
                g[j] = 0.5 * (g[j] - eps * lb[j]);
            }
        }
        s
    }

    fn iterations(&self) -> usize {
        self.f_hist.len() - 1
    }

    fn last_f(&self) -> &[f64] {
        self.f_hist.last().unwrap()
    }

    fn last_g(&self) -> &[f64] {
        self.g_hist.last().unwrap()
    }

    fn plan(&self, a: &[f64], b: &[f64]) -> Tensor {
        let (f, g) = (self.last_f(), self.last_g());
        let mut p = Vec::with_capacity(self.n * self.m);
        for i in 0..self.n {
            for j in 0..self.m {
                let e = (f[i] + g[j]) / self.eps - self.k[i * self.m + j];
                p.push(a[i] * b[j] * e.exp());
            }
        }
        Tensor::from_parts(vec![self.n, self.m], p)
    }

    /// Adds `scale · ∂value/∂C` into `c_bar` (n×m).
    fn cost_adjoint(&self, mode: GradMode, a: &[f64], b: &[f64], scale: f64, c_bar: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        match mode {
            GradMode::Potentials => {
                let plan = self.plan(a, b);
                for (cb, p) in c_bar.iter_mut().zip(plan.data()) {
                    *cb += scale * p;
                }
            }
            GradMode::Unrolled => {
                let kk = self.iterations();
                let eps = self.eps;
                // Adjoints of the final extrapolation F = T_a(g_K), G = T_b(f_K).
                let mut fbar_out: Vec<f64> = a.iter().map(|w| scale * w).collect();
                let mut gbar_out: Vec<f64> = b.iter().map(|w| scale * w).collect();
                let mut fbar = vec![0.0; n];
                let mut gbar = vec![0.0; m];
                for step in (0..=kk).rev() {
                    let (f, g) = (&self.f_hist[step], &self.g_hist[step]);
                    let (la, lb) = (&self.lse_a[step], &self.lse_b[step]);
                    // T_a(g): P_ij = exp(log b_j + g_j/ε − K_ij − lse_i);
                    // ∂T_a(g)_i/∂g_j = −P_ij and ∂T_a(g)_i/∂C_ij = P_ij.
                    let mut gsum = vec![0.0; m];
                    for i in 0..n {
                        let u = fbar_out[i];
                        if u == 0.0 {
                            continue;
                        }
                        let row = &self.k[i * m..(i + 1) * m];
                        let cb = &mut c_bar[i * m..(i + 1) * m];
                        for j in 0..m {
                            let p = (self.log_b[j] + g[j] / eps - row[j] - la[i]).exp();
                            gsum[j] -= u * p;
                            cb[j] += u * p;
                        }
                    }
                    // T_b(f): Q_ij = exp(log a_i + f_i/ε − K_ij − lse_j)
                    let mut fsum = vec![0.0; n];
                    for j in 0..m {
                        let v = gbar_out[j];
                        if v == 0.0 {
                            continue;
                        }
                        let col = &self.kt[j * n..(j + 1) * n];
                        for i in 0..n {
                            let q = (self.log_a[i] + f[i] / eps - col[i] - lb[j]).exp();
                            fsum[i] -= v * q;
                            c_bar[i * m + j] += v * q;
                        }
                    }
                    if step == 0 {
                        break;
                    }
                    // (f_k, g_k) = ½(f_{k−1}, g_{k−1}) + ½(T_a(g_{k−1}), T_b(f_{k−1}))
                    let (fb_cur, gb_cur) = if step == kk {
                        (fsum, gsum)
                    } else {
                        (
                            fbar.iter().zip(&fsum).map(|(x, y)| x + y).collect(),
                            gbar.iter().zip(&gsum).map(|(x, y)| x + y).collect(),
                        )
                    };
                    fbar = fb_cur.iter().map(|v| 0.5 * v).collect();
                    gbar = gb_cur.iter().map(|v| 0.5 * v).collect();
                    fbar_out.clone_from(&fbar);
                    gbar_out.clone_from(&gbar);
                }
            }
        }
    }
}

/// Pullback of a cost adjoint onto the two point sets.
fn points_adjoint(a: &PointCloud, b: &PointCloud, c_bar: &[f64]) -> (Tensor, Tensor) {
    let (n, m, d) = (a.len(), b.len(), a.dim());
    let mut ga = vec![0.0; n * d];
    let mut gb = vec![0.0; m * d];
    for i in 0..n {
        let x = a.points.row(i);
        for j in 0..m {
            let w = c_bar[i * m + j];
            if w == 0.0 {
                continue;
            }
            let y = b.points.row(j);
            for t in 0..d {
                let diff = w * (x[t] - y[t]);
                ga[i * d + t] += diff;
                gb[j * d + t] -= diff;
            }
        }
    }
    (
        Tensor::from_parts(vec![n, d], ga),
        Tensor::from_parts(vec![m, d], gb),
    )
}

fn solve_pair(a: &PointCloud, b: &PointCloud, eps: f64, params: &SinkhornParams) -> Result<Solve> {
    let cost = cost_matrix(a, b)?;
    Ok(Solve::run(a.weights(), b.weights(), &cost, eps, params.max_iters, params.tol))
}

/// Entropic OT cost and the transport plan at the final potentials.
pub fn entropic_ot(
    a: &PointCloud,
    b: &PointCloud,
    params: &SinkhornParams,
) -> Result<(f64, TransportPlan)> {
    params.validate()?;
    let cost = cost_matrix(a, b)?;
    let eps = params.resolve_epsilon(&cost);
    let s = Solve::run(a.weights(), b.weights(), &cost, eps, params.max_iters, params.tol);
    let plan = TransportPlan {
        plan: s.plan(a.weights(), b.weights()),
        f: s.last_f().to_vec(),
        g: s.last_g().to_vec(),
        epsilon: eps,
        iterations_used: s.iterations(),
        final_marginal_violation: s.violation,
        converged: s.converged,
    };
    Ok((s.value, plan))
}

/// Debiased divergence together with its point gradients and solver diagnostics.
#[derive(Clone, Debug)]
pub struct Divergence {
    pub value: f64,
    pub grad_a: Tensor,
    pub grad_b: Tensor,
    pub epsilon: f64,
    /// Largest iteration count among the three passes.
    pub iterations: usize,
    /// Largest final marginal violation among the three passes.
    pub marginal_violation: f64,
    pub converged: bool,
}

impl Divergence {
    /// `S̃(a,b) − ½(S̃(a,a) + S̃(b,b))` with gradients for both point sets.
    /// All three passes share one ε, resolved on the cross cost matrix and
    /// held constant under differentiation.
    pub fn compute(a: &PointCloud, b: &PointCloud, params: &SinkhornParams) -> Result<Self> {
        Self::compute_inner(a, b, params, true)
    }

    /// Value and diagnostics only.
    pub fn value_only(a: &PointCloud, b: &PointCloud, params: &SinkhornParams) -> Result<Self> {
        Self::compute_inner(a, b, params, false)
    }

    fn compute_inner(
        a: &PointCloud,
        b: &PointCloud,
        params: &SinkhornParams,
        with_grads: bool,
    ) -> Result<Self> {
        params.validate()?;
        let cross = cost_matrix(a, b)?;
        let eps = params.resolve_epsilon(&cross);
        let ab = Solve::run(a.weights(), b.weights(), &cross, eps, params.max_iters, params.tol);
        let aa = solve_pair(a, a, eps, params)?;
        let bb = solve_pair(b, b, eps, params)?;
        let value = ab.value - 0.5 * (aa.value + bb.value);

        let (grad_a, grad_b) = if with_grads {
            let mode = params.grad_mode;
            let mut cb = vec![0.0; a.len() * b.len()];
            ab.cost_adjoint(mode, a.weights(), b.weights(), 1.0, &mut cb);
            let (mut ga, mut gb) = points_adjoint(a, b, &cb);

            let mut caa = vec![0.0; a.len() * a.len()];
            aa.cost_adjoint(mode, a.weights(), a.weights(), -0.5, &mut caa);
            let (g1, g2) = points_adjoint(a, a, &caa);
            for ((t, x), y) in ga.data_mut().iter_mut().zip(g1.data()).zip(g2.data()) {
                *t += x + y;
            }
            let mut cbb = vec![0.0; b.len() * b.len()];
            bb.cost_adjoint(mode, b.weights(), b.weights(), -0.5, &mut cbb);
            let (g1, g2) = points_adjoint(b, b, &cbb);
            for ((t, x), y) in gb.data_mut().iter_mut().zip(g1.data()).zip(g2.data()) {
                *t += x + y;
            }
            (ga, gb)
        } else {
            (
                Tensor::zeros(a.points.shape()),
                Tensor::zeros(b.points.shape()),
            )
        };

        let passes = [&ab, &aa, &bb];
        Ok(Divergence {
            value,
            grad_a,
            grad_b,
            epsilon: eps,
            iterations: passes.iter().map(|s| s.iterations()).max().unwrap(),
            marginal_violation: passes.iter().map(|s| s.violation).fold(0.0, f64::max),
            converged: passes.iter().all(|s| s.converged),
        })
    }
}

/// Debiased Sinkhorn divergence between two clouds.
pub fn sinkhorn_divergence(a: &PointCloud, b: &PointCloud, params: &SinkhornParams) -> Result<f64> {
    Ok(Divergence::value_only(a, b, params)?.value)
}

/// Gradients of [`sinkhorn_divergence`] with respect to both point sets.
pub fn sinkhorn_gradients(
    a: &PointCloud,
    b: &PointCloud,
    params: &SinkhornParams,
) -> Result<(Tensor, Tensor)> {
    let d = Divergence::compute(a, b, params)?;
    Ok((d.grad_a, d.grad_b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(rows: &[&[f64]]) -> PointCloud {
        PointCloud::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn cost_matrix_examples() {
        let c = cost_matrix(&cloud(&[&[0.0]]), &cloud(&[&[2.0]])).unwrap();
        assert_eq!(c.data(), &[2.0]);
        let c = cost_matrix(&cloud(&[&[1.0, 1.0]]), &cloud(&[&[1.0, 1.0]])).unwrap();
        assert_eq!(c.data(), &[0.0]);
        let c = cost_matrix(&cloud(&[&[0.0, 0.0], &[1.0, 0.0]]), &cloud(&[&[0.0, 1.0]])).unwrap();
        assert_eq!(c.data(), &[0.5, 1.0]);
        assert_eq!(c.shape(), &[2, 1]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let r = cost_matrix(&cloud(&[&[0.0]]), &cloud(&[&[0.0, 1.0]]));
        assert!(matches!(r, Err(Error::DimensionMismatch(1, 2))));
    }

    #[test]
    fn invalid_clouds_and_params() {
        let pts = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(PointCloud::new(pts.clone(), vec![0.5, 0.6]).is_err());
        assert!(PointCloud::new(pts, vec![1.5, -0.5]).is_err());
        let a = cloud(&[&[0.0]]);
        assert!(entropic_ot(&a, &a, &SinkhornParams::absolute(0.0)).is_err());
        let bad_tol = SinkhornParams::absolute(0.1).with_iters(10, 0.0);
        assert!(entropic_ot(&a, &a, &bad_tol).is_err());
    }

    #[test]
    fn single_atoms_have_forced_plan() {
        for eps in [1.0, 0.1, 0.001] {
            let (cost, plan) =
                entropic_ot(&cloud(&[&[0.0]]), &cloud(&[&[2.0]]), &SinkhornParams::absolute(eps))
                    .unwrap();
            assert!((cost - 2.0).abs() < 1e-12, "eps {eps}: {cost}");
            assert!((plan.plan.item() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_atom_divergence_and_gradients() {
        let (a, b) = (cloud(&[&[0.0]]), cloud(&[&[2.0]]));
        let p = SinkhornParams::absolute(0.05);
        assert!((sinkhorn_divergence(&a, &b, &p).unwrap() - 2.0).abs() < 1e-12);
        for mode in [GradMode::Unrolled, GradMode::Potentials] {
            let (ga, gb) = sinkhorn_gradients(&a, &b, &p.with_grad_mode(mode)).unwrap();
            assert!((ga.item() + 2.0).abs() < 1e-9, "{mode:?} {ga:?}");
            assert!((gb.item() - 2.0).abs() < 1e-9, "{mode:?} {gb:?}");
        }
    }

    #[test]
    fn self_transport_bias_is_small() {
        let a = cloud(&[&[0.0, 0.0], &[1.0, 0.3], &[-0.4, 0.8], &[0.2, -1.0]]);
        let p = SinkhornParams::absolute(0.01).with_iters(5000, 1e-12);
        let (cost, plan) = entropic_ot(&a, &a, &p).unwrap();
        assert!(plan.converged);
        assert!(cost >= -1e-12 && cost <= 0.01 * 4f64.ln() + 1e-6, "{cost}");
    }

    #[test]
    fn plan_marginals_within_tolerance() {
        let a = cloud(&[&[0.0], &[1.0], &[3.0]]);
        let b = cloud(&[&[0.5], &[2.0]]);
        let p = SinkhornParams::absolute(0.1).with_iters(2000, 1e-8);
        let (_, plan) = entropic_ot(&a, &b, &p).unwrap();
        assert!(plan.converged);
        let pl = &plan.plan;
        let mut viol = 0.0;
        for i in 0..3 {
            viol += (pl.row(i).iter().sum::<f64>() - 1.0 / 3.0).abs();
        }
        for j in 0..2 {
            viol += ((0..3).map(|i| pl.get2(i, j)).sum::<f64>() - 0.5).abs();
        }
        assert!(viol < 1e-8, "{viol}");
        assert!(pl.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn nonconvergence_is_flagged_not_fatal() {
        let a = cloud(&[&[0.0], &[1.0], &[3.0]]);
        let b = cloud(&[&[0.5], &[2.0]]);
        let p = SinkhornParams::absolute(0.001).with_iters(3, 1e-12);
        let (cost, plan) = entropic_ot(&a, &b, &p).unwrap();
        assert!(cost.is_finite());
        assert!(!plan.converged);
        assert_eq!(plan.iterations_used, 3);
        assert!(plan.final_marginal_violation > 1e-12);
    }

    #[test]
    fn divergence_vanishes_on_identical_clouds() {
        let a = cloud(&[&[0.1, 2.0], &[1.0, -0.5], &[0.3, 0.3]]);
        let d = Divergence::compute(&a, &a, &SinkhornParams::default()).unwrap();
        assert!(d.value.abs() <= 1e-9);
        let norm: f64 = d.grad_a.data().iter().chain(d.grad_b.data()).map(|v| v * v).sum();
        assert!(norm.sqrt() < 1e-6, "{norm}");
    }
}
