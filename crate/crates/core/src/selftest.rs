//! Runtime oracle suites: finite differences, brute-force optimal transport
//! and an iterative matrix square root for the Fréchet distance.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::finite_diff_check;
use crate::error::Result;
use crate::evaluation::{fid, wasserstein_1d, GaussianFit};
use crate::losses::{diversity_regularizer, lap1, DiversityParams};
use crate::models::{Activation, MlpArch, Network};
use crate::ot::{cost_matrix, sinkhorn_divergence, sinkhorn_gradients, Epsilon, PointCloud, SinkhornParams};
use crate::tensor::{ImageShape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("n×d")
}

fn suite(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> SuiteResult {
    match f() {
        Ok((passed, detail)) => SuiteResult { name, passed, detail },
        Err(e) => SuiteResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn finite_differences() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let arch = MlpArch::new(vec![4, 6, 3], Activation::Sigmoid, Activation::Identity)?;
    let net = Network::init(arch, 2)?;
    let x = random(&mut rng, 5, 4);
    let w0 = net.params.layers[0].weight.clone();
    let mlp = finite_diff_check(
        |tape, w| {
            let xv = tape.constant(x.clone());
            let mut bound = net.bind(tape, false);
            bound.vars[0] = w;
            let out = net.forward(tape, &bound, xv)?;
            let sq = tape.square(out)?;
            tape.mean(sq)
        },
        &w0,
        1e-6,
    )?;
    let img = random(&mut rng, 2, 64);
    let target = random(&mut rng, 2, 64);
    let lap = finite_diff_check(
        |tape, v| {
            let t = tape.constant(target.clone());
            lap1(tape, t, v, ImageShape::square(8), 3)
        },
        &img,
        1e-6,
    )?;
    let codes = random(&mut rng, 5, 3);
    let div = finite_diff_check(
        |tape, v| diversity_regularizer(tape, v, &DiversityParams { p: 1.0, tau: 0.0 }),
        &codes,
        1e-6,
    )?;
    let a = PointCloud::uniform(random(&mut rng, 5, 3))?;
    let b = PointCloud::uniform(random(&mut rng, 5, 3))?;
    let sp = SinkhornParams::absolute(0.05).with_iters(60, 1e-300);
    let (ga, _) = sinkhorn_gradients(&a, &b, &sp)?;
    let h = 1e-5;
    let mut ot = 0.0f64;
    for k in 0..ga.len() {
        let shifted = |d: f64| -> Result<f64> {
            let mut p = a.points().clone();
            p.data_mut()[k] += d;
            sinkhorn_divergence(&PointCloud::uniform(p)?, &b, &sp)
        };
        let num = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        let an = ga.data()[k];
        ot = ot.max((an - num).abs() / (an.abs() + 1e-8));
    }
    let worst = mlp.max(lap).max(div).max(ot);
    Ok((
        worst < 1e-4,
        format!("max relative error mlp {mlp:.2e}, lap1 {lap:.2e}, diversity {div:.2e}, sinkhorn {ot:.2e}"),
    ))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force_ot() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(2..=4);
        let d = rng.random_range(1..=3);
        let a = PointCloud::uniform(random(&mut rng, n, d))?;
        let b = PointCloud::uniform(random(&mut rng, n, d))?;
        let c = cost_matrix(&a, &b)?;
        let exact = permutations(n)
            .iter()
            .map(|p| (0..n).map(|i| c.get2(i, p[i])).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min);
        let sp = SinkhornParams {
            epsilon: Epsilon::RelativeToMeanCost(0.02),
            ..SinkhornParams::default()
        }
        .with_iters(100_000, 1e-12);
        let s = sinkhorn_divergence(&a, &b, &sp)?;
        worst = worst.max((s - exact).abs() / exact.max(1e-12));
    }
    Ok((worst < 0.05, format!("max relative gap to exact OT {worst:.3e}")))
}

/// Denman–Beavers iteration for the principal square root.
fn denman_beavers(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let mut y = m.clone();
    let mut z = DMatrix::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse()?;
        let zi = z.clone().try_inverse()?;
        let ny = (&y + zi) * 0.5;
        let nz = (&z + yi) * 0.5;
        let done = (&ny - &y).norm() < 1e-14 * ny.norm();
        y = ny;
        z = nz;
        if done {
            break;
        }
    }
    Some(y)
}

fn fid_oracle() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for d in 1..=6 {
        let fa = random(&mut rng, 40, d);
        let fb = random(&mut rng, 50, d).map(|v| 1.5 * v + 0.3);
        let (ga, gb) = (GaussianFit::fit(&fa)?, GaussianFit::fit(&fb)?);
        let Some(root) = denman_beavers(&(&ga.cov * &gb.cov)) else {
            return Ok((false, "oracle iteration hit a singular matrix".into()));
        };
        let want = (&ga.mean - &gb.mean).norm_squared() + ga.cov.trace() + gb.cov.trace() - 2.0 * root.trace();
        let got = fid(&fa, &fb)?;
        worst = worst.max((got - want.max(0.0)).abs());
    }
    let w1 = [
        wasserstein_1d(&[0.0], &[1.0], 0)?,
        wasserstein_1d(&[0.0, 1.0], &[1.0, 2.0], 0)?,
        wasserstein_1d(&[0.0, 2.0], &[1.0, 1.0], 0)?,
    ];
    let w1_ok = w1.iter().all(|&v| v == 1.0);
    Ok((
        worst < 1e-8 && w1_ok,
        format!("max |fid − oracle| {worst:.2e}, 1-D Wasserstein hand cases {}", if w1_ok { "exact" } else { "wrong" }),
    ))
}

/// Runs every suite.
pub fn run_all() -> Vec<SuiteResult> {
    vec![
        suite("finite-differences", finite_differences),
        suite("brute-force-ot", brute_force_ot),
        suite("fid-oracle", fid_oracle),
    ]
}
