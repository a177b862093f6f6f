use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sae_core::datasets::{ChannelMasks, Dataset, Normalization};
use sae_core::evaluation::{
    channel_mae, channel_sums, evaluate_images, fid, frechet_distance, sinkhorn_feature_distance, train_classifier,
    wasserstein_1d, ClassifierConfig, EvalConfig, FeatureExtractor, GaussianFit,
};
use sae_core::ot::SinkhornParams;
use sae_core::tensor::ImageShape;
use sae_core::Tensor;

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Principal square root by Newton-type Denman–Beavers iteration, with
/// inverses from Gauss–Jordan elimination.
fn inverse(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| f64::from(u8::from(i == j))));
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        let piv = a[c][c];
        for v in &mut a[c] {
            *v /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                for k in 0..2 * n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn sqrt_trace(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mut y = m.to_vec();
    let mut z: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _ in 0..200 {
        let (yi, zi) = (inverse(&y), inverse(&z));
        let ny: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 0.5 * (y[i][j] + zi[i][j])).collect()).collect();
        let nz: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 0.5 * (z[i][j] + yi[i][j])).collect()).collect();
        let delta: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (ny[i][j] - y[i][j]).abs()).sum();
        y = ny;
        z = nz;
        if delta < 1e-15 {
            break;
        }
    }
    (0..n).map(|i| y[i][i]).sum()
}

fn fid_oracle(a: &Tensor, b: &Tensor) -> f64 {
    let stats = |t: &Tensor| {
        let (n, d) = (t.rows(), t.cols());
        let mu: Vec<f64> = (0..d).map(|j| (0..n).map(|i| t.get2(i, j)).sum::<f64>() / n as f64).collect();
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|p| {
                (0..d)
                    .map(|q| (0..n).map(|i| (t.get2(i, p) - mu[p]) * (t.get2(i, q) - mu[q])).sum::<f64>() / (n as f64 - 1.0))
                    .collect()
            })
            .collect();
        (mu, cov)
    };
    let ((ma, ca), (mb, cb)) = (stats(a), stats(b));
    let d = ma.len();
    let prod: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| (0..d).map(|k| ca[i][k] * cb[k][j]).sum()).collect())
        .collect();
    let mean: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum();
    let tr: f64 = (0..d).map(|i| ca[i][i] + cb[i][i]).sum();
    mean + tr - 2.0 * sqrt_trace(&prod)
}

#[test]
fn fid_scalar_closed_form() {
    let g = |m: f64, v: f64| GaussianFit::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, v)).unwrap();
    assert_eq!(frechet_distance(&g(0.0, 1.0), &g(1.0, 1.0)).unwrap(), 1.0);
}

#[test]
fn fid_diagonal_case_matches_oracle() {
    let a = GaussianFit::new(DVector::from_vec(vec![0.5, -1.0]), DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]))).unwrap();
    let b = GaussianFit::new(DVector::from_vec(vec![0.0, 1.0]), DMatrix::from_diagonal(&DVector::from_vec(vec![8.0, 0.125]))).unwrap();
    // (0.25 + 4) + (2 + 8 − 2·4) + (0.5 + 0.125 − 2·0.25)
    let want = 4.25 + 2.0 + 0.125;
    assert!((frechet_distance(&a, &b).unwrap() - want).abs() < 1e-12);
}

#[test]
fn fid_matches_independent_square_root() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for d in 1..=8 {
        let a = random_matrix(&mut rng, 60, d);
        let b = random_matrix(&mut rng, 45, d).map(|v| 0.7 * v * v + 0.2);
        let got = fid(&a, &b).unwrap();
        let want = fid_oracle(&a, &b);
        assert!((got - want).abs() < 1e-8, "d={d}: {got} vs {want}");
    }
}

#[test]
fn fid_identity_symmetry_and_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_matrix(&mut rng, 50, 3);
    let b = random_matrix(&mut rng, 70, 3).map(|v| 2.0 * v + 0.5);
    assert!(fid(&a, &a).unwrap().abs() < 1e-6);
    assert!((fid(&a, &b).unwrap() - fid(&b, &a).unwrap()).abs() < 1e-8);
    let (c, s) = (0.6f64, 0.8f64);
    let rot = |t: &Tensor| {
        let rows: Vec<Vec<f64>> = (0..t.rows())
            .map(|i| {
                let r = t.row(i);
                vec![c * r[0] - s * r[1], s * r[0] + c * r[1], r[2]]
            })
            .collect();
        Tensor::from_rows(&rows).unwrap()
    };
    assert!((fid(&rot(&a), &rot(&b)).unwrap() - fid(&a, &b).unwrap()).abs() < 1e-6);
    assert!(fid(&a, &Tensor::zeros(&[4, 2])).is_err());
    let mut nan = a.clone();
    nan.data_mut()[0] = f64::NAN;
    assert!(fid(&nan, &b).is_err());
}

#[test]
fn sinkhorn_feature_examples() {
    let sp = SinkhornParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_matrix(&mut rng, 6, 2);
    assert!(sinkhorn_feature_distance(&a, &a, &sp).unwrap().abs() < 1e-9);
    let x = Tensor::matrix(1, 1, vec![0.0]).unwrap();
    let y = Tensor::matrix(1, 1, vec![2.0]).unwrap();
    assert!((sinkhorn_feature_distance(&x, &y, &sp).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn channel_sums_partition_and_linearity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let masks = ChannelMasks::new(
        Tensor::matrix(3, 4, vec![1., 0., 0., 0., 0., 1., 1., 0., 0., 0., 0., 1.]).unwrap(),
    )
    .unwrap();
    let x = random_matrix(&mut rng, 5, 4);
    let y = random_matrix(&mut rng, 5, 4);
    let sx = channel_sums(&x, &masks).unwrap();
    for i in 0..5 {
        let total: f64 = x.row(i).iter().sum();
        assert!((sx.row(i).iter().sum::<f64>() - total).abs() < 1e-12);
    }
    let xy = Tensor::new(x.shape().to_vec(), x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect()).unwrap();
    let sy = channel_sums(&y, &masks).unwrap();
    let sxy = channel_sums(&xy, &masks).unwrap();
    for k in 0..sxy.len() {
        let lhs = sxy.data()[k];
        let rhs = sx.data()[k] + sy.data()[k];
        assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * (lhs.abs() + 1.0));
    }
    assert!(channel_sums(&Tensor::zeros(&[1, 5]), &masks).is_err());
}

#[test]
fn channel_mae_matches_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = random_matrix(&mut rng, 7, 3);
    let t = random_matrix(&mut rng, 7, 3);
    let m = channel_mae(&g, &t).unwrap();
    for c in 0..3 {
        let want = (0..7).map(|i| (g.get2(i, c) - t.get2(i, c)).abs()).sum::<f64>() / 7.0;
        assert!((m.per_channel[c] - want).abs() < 1e-15);
    }
    let mut shifted = t.clone();
    for i in 0..7 {
        shifted.data_mut()[i * 3 + 1] += 3.0;
    }
    let m = channel_mae(&shifted, &t).unwrap();
    assert!((m.per_channel[1] - 3.0).abs() < 1e-12);
    assert!(channel_mae(&g, &t.select_rows(&[0, 1])).is_err());
}

#[test]
fn subsampled_wasserstein_is_seeded() {
    let a: Vec<f64> = (0..50).map(f64::from).collect();
    let b: Vec<f64> = (0..20).map(|v| f64::from(v) + 0.5).collect();
    assert_eq!(wasserstein_1d(&a, &b, 3).unwrap(), wasserstein_1d(&a, &b, 3).unwrap());
    assert_eq!(wasserstein_1d(&a, &b, 3).unwrap(), wasserstein_1d(&b, &a, 3).unwrap());
}

proptest! {
    #[test]
    fn wasserstein_is_a_metric(seed in 0u64..5000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || (0..12).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<f64>>();
        let (a, b, c) = (draw(), draw(), draw());
        let ab = wasserstein_1d(&a, &b, 0).unwrap();
        prop_assert_eq!(ab, wasserstein_1d(&b, &a, 0).unwrap());
        let ac = wasserstein_1d(&a, &c, 0).unwrap();
        let cb = wasserstein_1d(&c, &b, 0).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
        prop_assert_eq!(wasserstein_1d(&a, &a, 0).unwrap(), 0.0);
    }
}

fn separable(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let k = usize::from(rng.random_bool(0.5));
        let shift = if k == 1 { 1.0 } else { -1.0 };
        rows.push((0..6).map(|j| rng.random_range(-0.5..0.5) + if j < 2 { shift } else { 0.0 }).collect());
        labels.push(k);
    }
    (Tensor::from_rows(&rows).unwrap(), labels)
}

#[test]
fn classifier_separates_linear_classes_deterministically() {
    let (x, y) = separable(300, 4);
    let cfg = ClassifierConfig::default();
    let a = train_classifier(&x, &y, &cfg).unwrap();
    assert!(a.heldout_accuracy >= 0.95, "{}", a.heldout_accuracy);
    assert_eq!(a, train_classifier(&x, &y, &cfg).unwrap());
    let probe = train_classifier(&x, &y, &ClassifierConfig::linear_probe(2)).unwrap();
    assert!(probe.heldout_accuracy >= 0.95);
    assert!(train_classifier(&x, &vec![0; 300], &cfg).is_err());
}

#[test]
fn self_evaluation_is_zero() {
    let (x, y) = separable(120, 9);
    let mut ds = Dataset::new(ImageShape::new(2, 3), x.clone(), Normalization::Raw).unwrap();
    ds.labels = Some(y);
    ds.channel_masks = Some(ChannelMasks::new(Tensor::matrix(2, 6, vec![1., 1., 1., 0., 0., 0., 0., 0., 0., 1., 1., 1.]).unwrap()).unwrap());
    let ex = FeatureExtractor::train(&ds, &ClassifierConfig::default()).unwrap();
    let f = ex.features(&x).unwrap();
    assert_eq!(f.shape(), &[120, ex.feature_width()]);
    let (r, dump) = evaluate_images(&x, &ds, &ex, &EvalConfig::default()).unwrap();
    assert!(r.fid.abs() < 1e-6);
    assert!(r.sinkhorn.abs() < 1e-9);
    assert_eq!(r.channel_mae.as_ref().unwrap().mean, 0.0);
    assert!(r.channel_wasserstein.as_ref().unwrap().iter().all(|&w| w == 0.0));
    assert_eq!(dump.lines().count(), 1 + 240);
    assert!(r.to_csv().starts_with("measure,channel,value\nfid,all,"));
}
