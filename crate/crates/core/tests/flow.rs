use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use vamoh::encoder::{sample_posterior, GaussianPosterior};
use vamoh::flow::{constrain_u, kl_z_mc, standard_normal_log_prob, FlowParams, FlowPrior, PlanarLayer};
use vamoh::graph::Graph;
use vamoh::params::ParamStore;
use vamoh::rng::seeded;
use vamoh::Matrix;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_layer<R: Rng>(dim: usize, scale: f64, rng: &mut R) -> PlanarLayer<f64> {
    let mut v = || -> f64 { StandardNormal.sample(rng) };
    let w: Vec<f64> = (0..dim).map(|_| v()).collect();
    let u: Vec<f64> = (0..dim).map(|_| scale * v()).collect();
    PlanarLayer { u, w, b: v() }
}

fn random_prior(dim: usize, layers: usize, scale: f64, seed: u64) -> FlowPrior<f64> {
    let mut rng = seeded(seed);
    FlowPrior { dim, layers: (0..layers).map(|_| random_layer(dim, scale, &mut rng)).collect(), enabled: true }
}

/// Determinant by Gaussian elimination with partial pivoting.
fn determinant(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        det *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    det
}

fn numeric_logdet(layer: &PlanarLayer<f64>, z: &[f64]) -> f64 {
    let n = z.len();
    let h = 1e-5;
    let mut jac = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[j] += h;
        zm[j] -= h;
        let yp = layer.forward(&zp).unwrap().0;
        let ym = layer.forward(&zm).unwrap().0;
        for i in 0..n {
            jac[i][j] = (yp[i] - ym[i]) / (2.0 * h);
        }
    }
    determinant(jac).abs().ln()
}

/// Two-sample KS statistic between plain samples and weighted samples.
fn weighted_ks(plain: &[f64], weighted: &[(f64, f64)]) -> f64 {
    let mut a = plain.to_vec();
    a.sort_by(f64::total_cmp);
    let mut b = weighted.to_vec();
    b.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = b.iter().map(|p| p.1).sum();
    let (mut i, mut j) = (0, 0);
    let (mut fb, mut worst) = (0.0f64, 0.0f64);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&(y, _))) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&(y, _))) => y,
            (None, None) => break,
        };
        while i < a.len() && a[i] <= next {
            i += 1;
        }
        while j < b.len() && b[j].0 <= next {
            fb += b[j].1 / total;
            j += 1;
        }
        let fa = i as f64 / a.len() as f64;
        worst = worst.max((fa - fb).abs());
    }
    worst
}

#[test]
fn constraint_examples() {
    let w = vec![0.6, -0.8, 0.0];
    let mut u = vec![0.3, 0.1, 2.0];
    let shift = (-5.0 - dot(&w, &u)) / dot(&w, &w);
    for (ui, wi) in u.iter_mut().zip(&w) {
        *ui += shift * wi;
    }
    assert!((dot(&w, &u) + 5.0).abs() < 1e-12);
    let uhat = constrain_u(&u, &w).unwrap();
    let m = dot(&w, &uhat);
    assert!(m > -1.0);
    assert!((m - (-1.0 + (1.0f64 + (-5.0f64).exp()).ln())).abs() < 1e-12);
    let diff: Vec<f64> = uhat.iter().zip(&u).map(|(a, b)| a - b).collect();
    // parallel to w: the cross terms vanish
    assert!((diff[0] * w[1] - diff[1] * w[0]).abs() < 1e-12);
    assert!(diff[2].abs() < 1e-12);
    assert!(constrain_u(&[1.0, 1.0], &[0.0, 0.0]).is_err());
}

#[test]
fn saturated_argument_gives_vanishing_logdet() {
    let layer = PlanarLayer { u: vec![0.4, -0.2], w: vec![1.0, 0.0], b: 0.0 };
    for z in [[20.0f64, 0.3], [-20.0, 0.3]] {
        let ld: f64 = layer.forward(&z).unwrap().1;
        assert!(ld.abs() < 1e-8);
    }
}

#[test]
fn near_singular_layer_still_inverts() {
    let mut rng = seeded(4);
    let w: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
    let a = (1e-6f64).exp_m1().ln();
    let u: Vec<f64> = w.iter().map(|wi| a * wi / dot(&w, &w)).collect();
    let layer = PlanarLayer { u, w: w.clone(), b: 0.2 };
    let uhat = constrain_u(&layer.u, &layer.w).unwrap();
    assert!((dot(&w, &uhat) + 1.0 - 1e-6).abs() < 1e-12);
    for _ in 0..50 {
        let y: Vec<f64> = (0..6).map(|_| 3.0 * rng.random::<f64>() - 1.5).collect();
        let z = layer.invert(&y).unwrap();
        let back = layer.forward(&z).unwrap().0;
        let err = back.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "residual {err}");
    }
}

#[test]
fn disabled_prior_at_origin() {
    let prior = FlowPrior::<f64> { enabled: false, ..random_prior(2, 3, 1.0, 1) };
    let lp = prior.log_prob(&[0.0, 0.0]).unwrap();
    assert!((lp + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
}

#[test]
fn prior_density_integrates_to_one() {
    for seed in 0..3 {
        let prior = random_prior(2, 3, 1.0, 10 + seed);
        let n = 801;
        let h = 16.0 / (n - 1) as f64;
        let mut mass = 0.0;
        for i in 0..n {
            for j in 0..n {
                let wi = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                let wj = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
                let z = [-8.0 + i as f64 * h, -8.0 + j as f64 * h];
                mass += wi * wj * prior.log_prob(&z).unwrap().exp();
            }
        }
        mass *= h * h;
        assert!((mass - 1.0).abs() < 1e-3, "seed {seed}: {mass}");
    }
}

#[test]
fn disabled_and_identity_priors_sample_the_base() {
    let mut identity = random_prior(3, 2, 1.0, 2);
    for layer in &mut identity.layers {
        let c = (std::f64::consts::E - 1.0).ln() / dot(&layer.w, &layer.w);
        layer.u = layer.w.iter().map(|w| c * w).collect();
    }
    let disabled = FlowPrior { enabled: false, ..random_prior(3, 2, 1.0, 2) };
    for prior in [identity, disabled] {
        let z = prior.sample(&mut seeded(9)).unwrap();
        let mut rng = seeded(9);
        let base: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
        for (a, b) in z.iter().zip(&base) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn samples_follow_the_prior_density() {
    let prior = random_prior(2, 3, 0.7, 21);
    let mut rng = seeded(22);
    let n = 10_000;
    let samples: Vec<Vec<f64>> = (0..n).map(|_| prior.sample(&mut rng).unwrap()).collect();
    for s in &samples {
        assert!(prior.log_prob(s).unwrap().is_finite());
    }
    // Importance-weighted draws from a wide Gaussian proposal.
    let sd = 2.0;
    let proposal: Vec<(Vec<f64>, f64)> = (0..n)
        .map(|_| {
            let e: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x: Vec<f64> = e.iter().map(|v| sd * v).collect();
            let log_q = standard_normal_log_prob(&e) - 2.0 * sd.ln();
            let w = (prior.log_prob(&x).unwrap() - log_q).exp();
            (x, w)
        })
        .collect();
    let sum_w: f64 = proposal.iter().map(|p| p.1).sum();
    let sum_w2: f64 = proposal.iter().map(|p| p.1 * p.1).sum();
    let ess = sum_w * sum_w / sum_w2;
    for c in 0..2 {
        let plain: Vec<f64> = samples.iter().map(|s| s[c]).collect();
        let weighted: Vec<(f64, f64)> = proposal.iter().map(|(x, w)| (x[c], *w)).collect();
        let d = weighted_ks(&plain, &weighted);
        let critical = 1.628 * ((n as f64 + ess) / (n as f64 * ess)).sqrt();
        assert!(d < critical, "coordinate {c}: D = {d}, critical {critical}, ess {ess}");
    }
}

#[test]
fn kl_estimates_match_gaussian_closed_form() {
    let n = 1000;
    let prior = FlowPrior::<f64>::standard(3);
    let cases = [vec![0.0, 0.0, 0.0], vec![0.5, -1.0, 2.0]];
    for (i, mu) in cases.iter().enumerate() {
        let post = GaussianPosterior { mean: mu.clone(), log_std: vec![0.0; 3] };
        let mut rng = seeded(30 + i as u64);
        let est = kl_z_mc(&post, &prior, n, &mut rng).unwrap();
        let mut rng = seeded(30 + i as u64);
        let terms: Vec<f64> =
            (0..n).map(|_| kl_z_mc(&post, &prior, 1, &mut rng).unwrap()).collect();
        let mean = terms.iter().sum::<f64>() / n as f64;
        assert!((mean - est).abs() < 1e-9);
        let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let exact = 0.5 * dot(mu, mu);
        assert!((est - exact).abs() <= 3.0 * se + 1e-12, "estimate {est} vs {exact} (se {se})");
    }
    let post = GaussianPosterior::<f64>::standard(2);
    assert!(kl_z_mc(&post, &FlowPrior::standard(2), 0, &mut seeded(0)).is_err());
}

#[test]
fn prior_log_prob_gradients_match_differences() {
    let mut store = ParamStore::<f64>::new();
    let flow = FlowParams::new(&mut store, 3, 3, 0.5, &mut seeded(41)).unwrap();
    let mut rng = seeded(42);
    let post = GaussianPosterior { mean: vec![0.3, -0.2, 0.8], log_std: vec![-0.5, 0.1, -0.2] };
    let z: Vec<f64> = (0..4).flat_map(|_| sample_posterior(&post, &mut rng)).collect();
    let zm = Matrix::from_vec(4, 3, z).unwrap();
    let objective = |store: &ParamStore<f64>| {
        let mut g = Graph::inference(store);
        let zv = g.constant(zm.clone());
        let lp = flow.log_prob_graph(&mut g, zv, true);
        let s = g.sum_all(lp);
        g.scalar(s)
    };
    let mut g = Graph::new(&store);
    let zv = g.constant(zm.clone());
    let lp = flow.log_prob_graph(&mut g, zv, true);
    let s = g.sum_all(lp);
    let grads = g.backward(s).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let analytic = grads.get(id).unwrap().data().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let h = 1e-6;
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + h;
            let fp = objective(&store);
            store.get_mut(id).data_mut()[i] = orig - h;
            let fm = objective(&store);
            store.get_mut(id).data_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - a).abs() / fd.abs().max(a.abs()).max(1e-3) < 1e-4, "{}: {a} vs {fd}", store.entry(id).name);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn logdet_matches_numeric_jacobian(seed in any::<u64>(), dim in 1usize..=5, scale in 0.1f64..2.0) {
        let mut rng = seeded(seed);
        let layer = random_layer(dim, scale, &mut rng);
        let z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (_, ld) = layer.forward(&z).unwrap();
        prop_assert!((ld - numeric_logdet(&layer, &z)).abs() < 1e-6);
    }

    #[test]
    fn inversion_round_trips(seed in any::<u64>(), dim in 1usize..=8, scale in 0.1f64..3.0) {
        let mut rng = seeded(seed);
        let layer = random_layer(dim, scale, &mut rng);
        let y: Vec<f64> = (0..dim).map(|_| { let e: f64 = StandardNormal.sample(&mut rng); 2.0 * e }).collect();
        let z = layer.invert(&y).unwrap();
        let back = layer.forward(&z).unwrap().0;
        let err = back.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-9);
        let uhat = constrain_u(&layer.u, &layer.w).unwrap();
        prop_assert!(dot(&layer.w, &uhat) >= -1.0 + 1e-6 || dot(&layer.w, &layer.u) < -13.0);
    }
}
