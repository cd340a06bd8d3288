use proptest::prelude::*;
use vamoh::likelihood::{
    bernoulli_logprob, bernoulli_logprob_with_grad, cont_bernoulli_logprob, cont_bernoulli_logprob_with_grad,
    dlogistic_logprob, dlogistic_logprob_with_grads, dlogistic_mixture_logprob, LATTICE_MAX,
};
use vamoh::LikelihoodFamily;

fn logistic_mass(mu: f64, s: f64) -> f64 {
    (0..=LATTICE_MAX).map(|y| dlogistic_logprob(y, mu, s).unwrap().exp()).sum()
}

fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let mut acc = f(0.0) + f(1.0);
    for i in 1..n {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

#[test]
fn logistic_rejects_bad_scale() {
    assert!(dlogistic_logprob(3, 10.0, 0.0).is_err());
    assert!(dlogistic_logprob(3, 10.0, -1.0).is_err());
}

#[test]
fn concentrated_logistic_puts_mass_on_its_level() {
    let lp = dlogistic_logprob(100, 100.0f64, 0.01).unwrap();
    assert!(lp.exp() > 1.0 - 1e-12);
}

#[test]
fn bernoulli_examples() {
    assert!((bernoulli_logprob(1.0f64, 0.5) + std::f64::consts::LN_2).abs() < 1e-12);
    let p = 0.37;
    assert_eq!(bernoulli_logprob(1.0f64, p).exp() + bernoulli_logprob(0.0, p).exp(), 1.0);
}

#[test]
fn continuous_bernoulli_integrates_to_one() {
    for lambda in [0.1, 0.3, 0.7, 0.9] {
        let mass = simpson(|y| cont_bernoulli_logprob(y, lambda).exp(), 2000);
        assert!((mass - 1.0).abs() < 1e-6, "λ = {lambda}: {mass}");
    }
}

#[test]
fn continuous_bernoulli_is_continuous_at_half() {
    for y in [0.0f64, 0.25, 0.5, 1.0] {
        let centre = cont_bernoulli_logprob(y, 0.5f64);
        assert_eq!(centre, 0.0);
        for l in [0.5 - 1e-6, 0.5 + 1e-6] {
            assert!((cont_bernoulli_logprob(y, l) - centre).abs() < 1e-5);
        }
    }
}

#[test]
fn family_names_round_trip_through_serde() {
    for f in [
        LikelihoodFamily::DiscretizedLogistic,
        LikelihoodFamily::DiscretizedLogisticMixture,
        LikelihoodFamily::Bernoulli,
        LikelihoodFamily::ContinuousBernoulli,
    ] {
        let text = serde_json::to_string(&f).unwrap();
        assert_eq!(text, format!("\"{}\"", f.name()));
    }
}

proptest! {
    #[test]
    fn logistic_normalizes(mu in -50.0f64..305.0, log_s in -3.0f64..5.0) {
        prop_assert!((logistic_mass(mu, log_s.exp()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn logistic_is_symmetric_about_lattice_means(level in 20u32..236, delta in 1u32..20, log_s in -1.0f64..4.0) {
        let s = log_s.exp();
        let mu = level as f64;
        let up = dlogistic_logprob(level + delta, mu, s).unwrap();
        let down = dlogistic_logprob(level - delta, mu, s).unwrap();
        prop_assert!((up - down).abs() < 1e-9);
    }

    #[test]
    fn logistic_gradients_match_differences(y in 0u32..=255, mu in -20.0f64..275.0, log_s in -1.0f64..4.0) {
        let (_, dmu, dls) = dlogistic_logprob_with_grads(y, mu, log_s);
        let h = 1e-5;
        let f = |m: f64, l: f64| dlogistic_logprob_with_grads(y, m, l).0;
        let fd_mu = (f(mu + h, log_s) - f(mu - h, log_s)) / (2.0 * h);
        let fd_ls = (f(mu, log_s + h) - f(mu, log_s - h)) / (2.0 * h);
        prop_assert!((fd_mu - dmu).abs() / fd_mu.abs().max(dmu.abs()).max(1e-3) < 1e-4);
        prop_assert!((fd_ls - dls).abs() / fd_ls.abs().max(dls.abs()).max(1e-3) < 1e-4);
    }

    #[test]
    fn logprobs_are_finite_in_domain(y in 0u32..=255, mu01 in 0.0f64..=1.0, log_s in -7.0f64..7.0, t in 0.0f64..=1.0, p in 0.0f64..=1.0) {
        prop_assert!(dlogistic_logprob_with_grads(y, mu01 * 255.0, log_s).0.is_finite());
        prop_assert!(bernoulli_logprob(t.round(), p).is_finite());
        prop_assert!(cont_bernoulli_logprob(t, p).is_finite());
    }

    #[test]
    fn mixture_normalizes_and_is_bounded(
        mus in prop::collection::vec(0.0f64..255.0, 1..5),
        raw in prop::collection::vec(0.05f64..1.0, 5),
        log_s in -1.0f64..4.0,
    ) {
        let k = mus.len();
        let total: f64 = raw[..k].iter().sum();
        let pi: Vec<f64> = raw[..k].iter().map(|w| w / total).collect();
        let s = log_s.exp();
        let mass: f64 = (0..=LATTICE_MAX).map(|y| dlogistic_mixture_logprob(y, &mus, s, &pi).unwrap().exp()).sum();
        prop_assert!((mass - 1.0).abs() < 1e-9);
        let min_pi = pi.iter().copied().fold(f64::INFINITY, f64::min);
        for y in [0u32, 17, 128, 255] {
            let mix = dlogistic_mixture_logprob(y, &mus, s, &pi).unwrap();
            let min_comp = mus.iter().map(|&m| dlogistic_logprob(y, m, s).unwrap()).fold(f64::INFINITY, f64::min);
            prop_assert!(mix >= min_comp + min_pi.ln() - 1e-12);
        }
    }

    #[test]
    fn single_or_equal_components_reduce_to_plain_logistic(y in 0u32..=255, mu in 0.0f64..255.0, log_s in -1.0f64..4.0, w in 0.05f64..0.95) {
        let s = log_s.exp();
        let plain = dlogistic_logprob(y, mu, s).unwrap();
        prop_assert!((dlogistic_mixture_logprob(y, &[mu], s, &[1.0]).unwrap() - plain).abs() < 1e-12);
        prop_assert!((dlogistic_mixture_logprob(y, &[mu, mu], s, &[w, 1.0 - w]).unwrap() - plain).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_gradients_match_differences(y in 0u8..=1, p in 0.01f64..0.99) {
        let y = y as f64;
        let h = 1e-6;
        let (_, d) = bernoulli_logprob_with_grad(y, p);
        let fd = (bernoulli_logprob(y, p + h) - bernoulli_logprob(y, p - h)) / (2.0 * h);
        prop_assert!((fd - d).abs() < 1e-6 * d.abs().max(1.0));
    }

    #[test]
    fn continuous_bernoulli_gradients_match_differences(y in 0.0f64..=1.0, l in 0.01f64..0.99) {
        let h = 1e-6;
        let (_, d) = cont_bernoulli_logprob_with_grad(y, l);
        let fd = (cont_bernoulli_logprob(y, l + h) - cont_bernoulli_logprob(y, l - h)) / (2.0 * h);
        prop_assert!((fd - d).abs() / fd.abs().max(d.abs()).max(1e-3) < 1e-4);
    }
}
