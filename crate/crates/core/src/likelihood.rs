//! Per-point likelihood families.
//!
//! Every log-probability also has a `*_with_grads` variant returning the
//! analytic partial derivatives the graph needs; the two share one code path.
//!
//! The discretized logistic works on the `0..=255` lattice: features in
//! `[0, 1]` map to levels `round(255·y)` and the INR's sigmoid output `μ`
//! maps to the lattice mean `255·μ`, so the half-level bin edges are `±0.5`.
//! The two outermost bins absorb the tails, which makes the pmf sum to one.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VamohError};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const LATTICE_MAX: u32 = 255;

/// Floor applied to Bernoulli-type parameters before taking logs.
pub const PROB_FLOOR: f64 = 1e-7;

/// Initial logistic scale, in lattice units.
pub const INITIAL_SCALE: f64 = 255.0 * 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodFamily {
    DiscretizedLogistic,
    /// Same per-component density as `DiscretizedLogistic`; the mixture comes
    /// from the model's `K` components.
    DiscretizedLogisticMixture,
    Bernoulli,
    ContinuousBernoulli,
}

impl LikelihoodFamily {
    pub fn name(self) -> &'static str {
        match self {
            Self::DiscretizedLogistic => "discretized_logistic",
            Self::DiscretizedLogisticMixture => "discretized_logistic_mixture",
            Self::Bernoulli => "bernoulli",
            Self::ContinuousBernoulli => "continuous_bernoulli",
        }
    }

    pub fn is_logistic(self) -> bool {
        matches!(self, Self::DiscretizedLogistic | Self::DiscretizedLogisticMixture)
    }

    /// Whether `y` lies in this family's support.
    pub fn accepts(self, y: f64) -> bool {
        match self {
            Self::DiscretizedLogistic | Self::DiscretizedLogisticMixture => {
                (0.0..=1.0).contains(&y) && ((y * 255.0).round() - y * 255.0).abs() < 1e-6
            }
            Self::Bernoulli => y == 0.0 || y == 1.0,
            Self::ContinuousBernoulli => (0.0..=1.0).contains(&y),
        }
    }

    /// Log-probability of feature `y` given the INR output `param ∈ (0, 1)`
    /// and the channel log scale, with partials `(value, ∂/∂param, ∂/∂log_s)`.
    pub fn logprob_with_grads<T: Scalar>(self, y: T, param: T, log_scale: T) -> (T, T, T) {
        match self {
            Self::DiscretizedLogistic | Self::DiscretizedLogisticMixture => {
                let k = T::lit(LATTICE_MAX as f64);
                let (v, dmu, ds) = dlogistic_logprob_with_grads(feature_to_level(y), param * k, log_scale);
                (v, dmu * k, ds)
            }
            Self::Bernoulli => {
                let (v, d) = bernoulli_logprob_with_grad(y, param);
                (v, d, T::zero())
            }
            Self::ContinuousBernoulli => {
                let (v, d) = cont_bernoulli_logprob_with_grad(y, param);
                (v, d, T::zero())
            }
        }
    }
}

/// Nearest lattice level of a feature in `[0, 1]`.
pub fn feature_to_level<T: Scalar>(y: T) -> u32 {
    let l = (y.as_f64() * LATTICE_MAX as f64).round();
    l.clamp(0.0, LATTICE_MAX as f64) as u32
}

/// Discretized logistic log-probability of level `y` with lattice mean `mu`
/// and scale `s > 0`.
pub fn dlogistic_logprob<T: Scalar>(y: u32, mu: T, s: T) -> Result<T> {
    if !(s > T::zero()) || !s.is_finite() {
        return Err(VamohError::InvalidParameter(format!("logistic scale {s} must be positive")));
    }
    if y > LATTICE_MAX {
        return Err(VamohError::InvalidParameter(format!("level {y} outside 0..=255")));
    }
    Ok(dlogistic_logprob_with_grads(y, mu, s.ln()).0)
}

/// `(log p, ∂/∂mu, ∂/∂log_s)` for the discretized logistic.
pub fn dlogistic_logprob_with_grads<T: Scalar>(y: u32, mu: T, log_s: T) -> (T, T, T) {
    let half = T::lit(0.5);
    let inv_s = (-log_s).exp();
    let yf = T::lit(y as f64);
    let a = (yf + half - mu) * inv_s;
    let b = (yf - half - mu) * inv_s;
    // ∂a/∂mu = ∂b/∂mu = -1/s;  ∂a/∂log_s = -a, ∂b/∂log_s = -b
    let (v, dv_da, dv_db) = if y == 0 {
        (a.log_sigmoid(), (-a).sigmoid(), T::zero())
    } else if y == LATTICE_MAX {
        ((-b).log_sigmoid(), T::zero(), -b.sigmoid())
    } else {
        // σ(a) - σ(b) = σ(a)·σ(-b)·(1 - e^{b-a}),  a - b = 1/s
        let gap = inv_s;
        let tail = -(-gap).exp_m1();
        let r = T::one() / gap.exp_m1();
        (a.log_sigmoid() + (-b).log_sigmoid() + tail.ln(), (-a).sigmoid() + r, -b.sigmoid() - r)
    };
    let dmu = -(dv_da + dv_db) * inv_s;
    let dls = -(dv_da * a + dv_db * b);
    (v, dmu, dls)
}

/// `log Σ_k π_k p(y | mu_k, s)` via a max-shifted log-sum-exp.
pub fn dlogistic_mixture_logprob<T: Scalar>(y: u32, mus: &[T], s: T, pi: &[T]) -> Result<T> {
    if mus.len() != pi.len() || mus.is_empty() {
        return Err(VamohError::Dimension(format!(
            "{} component means for {} mixture weights",
            mus.len(),
            pi.len()
        )));
    }
    let terms = mus
        .iter()
        .zip(pi)
        .map(|(&mu, &p)| Ok(p.ln() + dlogistic_logprob(y, mu, s)?))
        .collect::<Result<Vec<T>>>()?;
    Ok(log_sum_exp(&terms))
}

pub fn log_sum_exp<T: Scalar>(terms: &[T]) -> T {
    let max = terms.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + terms.iter().map(|&t| (t - max).exp()).sum::<T>().ln()
}

fn clamp_prob<T: Scalar>(p: T) -> (T, bool) {
    let lo = T::lit(PROB_FLOOR);
    let hi = T::one() - lo;
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

pub fn bernoulli_logprob<T: Scalar>(y: T, p: T) -> T {
    bernoulli_logprob_with_grad(y, p).0
}

pub fn bernoulli_logprob_with_grad<T: Scalar>(y: T, p: T) -> (T, T) {
    let (p, clamped) = clamp_prob(p);
    let q = T::one() - p;
    let v = y * p.ln() + (T::one() - y) * q.ln();
    let d = if clamped { T::zero() } else { y / p - (T::one() - y) / q };
    (v, d)
}

/// `log C(λ)` of the continuous Bernoulli, `C(λ) = 2·artanh(1-2λ)/(1-2λ)`.
pub fn cont_bernoulli_log_norm<T: Scalar>(lambda: T) -> T {
    cont_bernoulli_log_norm_with_grad(lambda).0
}

fn cont_bernoulli_log_norm_with_grad<T: Scalar>(lambda: T) -> (T, T) {
    let two = T::lit(2.0);
    let x = T::one() - two * lambda;
    if (lambda - T::lit(0.5)).abs() < T::lit(1e-3) {
        // artanh(x)/x = 1 + x²/3 + x⁴/5 + O(x⁶)
        let x2 = x * x;
        let series = T::one() + x2 / T::lit(3.0) + x2 * x2 / T::lit(5.0);
        let dseries_dx = two * x / T::lit(3.0) + T::lit(4.0) * x2 * x / T::lit(5.0);
        (two.ln() + series.ln(), -two * dseries_dx / series)
    } else {
        let at = x.atanh();
        let v = (two * at / x).ln();
        let dx = T::one() / ((T::one() - x * x) * at) - T::one() / x;
        (v, -two * dx)
    }
}

pub fn cont_bernoulli_logprob<T: Scalar>(y: T, lambda: T) -> T {
    cont_bernoulli_logprob_with_grad(y, lambda).0
}

pub fn cont_bernoulli_logprob_with_grad<T: Scalar>(y: T, lambda: T) -> (T, T) {
    let (l, clamped) = clamp_prob(lambda);
    let q = T::one() - l;
    let (log_c, dlog_c) = cont_bernoulli_log_norm_with_grad(l);
    let v = y * l.ln() + (T::one() - y) * q.ln() + log_c;
    let d = if clamped { T::zero() } else { y / l - (T::one() - y) / q + dlog_c };
    (v, d)
}

/// Elementwise log-likelihood of `targets` (`D×n_y`) under per-point
/// parameters `params` (`D×n_y`, in `(0, 1)`) and channel log scales
/// `log_scale` (`1×n_y`). Returns a `D×n_y` variable.
pub fn loglik_graph<T: Scalar>(
    g: &mut Graph<'_, T>,
    family: LikelihoodFamily,
    params: Var,
    log_scale: Var,
    targets: &Matrix<T>,
) -> Var {
    let (rows, cols) = g.shape(params);
    assert_eq!(targets.shape(), (rows, cols), "targets must match parameter shape");
    let mut value = Matrix::zeros(rows, cols);
    let mut d_param = Matrix::zeros(rows, cols);
    let mut d_scale = Matrix::zeros(rows, cols);
    {
        let pv = g.value(params);
        let sv = g.value(log_scale);
        for i in 0..rows {
            for j in 0..cols {
                let (v, dp, ds) = family.logprob_with_grads(targets.get(i, j), pv.get(i, j), sv.get(0, j));
                value.set(i, j, v);
                d_param.set(i, j, dp);
                d_scale.set(i, j, ds);
            }
        }
    }
    let mut inputs = vec![(params, d_param)];
    if family.is_logistic() {
        inputs.push((log_scale, d_scale));
    }
    g.pointwise(value, inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn pmf_sum(mu: f64, s: f64) -> f64 {
        (0..=255).map(|y| dlogistic_logprob(y, mu, s).unwrap().exp()).sum()
    }

    #[test]
    fn logistic_pmf_normalizes() {
        let mut rng = seeded(4);
        for _ in 0..200 {
            let mu = rng.random::<f64>() * 255.0;
            let s = (rng.random::<f64>() * 6.0 - 3.0).exp() * 10.0;
            assert!((pmf_sum(mu, s) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn logistic_concentrates_and_is_symmetric() {
        let p = dlogistic_logprob(100, 100.0f64, 0.01).unwrap().exp();
        assert!(p > 1.0 - 1e-12);
        for d in 1..20 {
            let up = dlogistic_logprob(128 + d, 128.0f64, 7.0).unwrap();
            let down = dlogistic_logprob(128 - d, 128.0, 7.0).unwrap();
            assert!((up - down).abs() < 1e-12);
        }
        assert!(dlogistic_logprob(3, 1.0f64, 0.0).is_err());
        assert!(dlogistic_logprob(3, 1.0f64, -1.0).is_err());
    }

    #[test]
    fn logistic_extreme_arguments_stay_finite() {
        for &(y, mu, s) in &[(0u32, 255.0, 0.01), (255, 0.0, 0.01), (128, 0.0, 1e-3), (1, 250.0, 0.05)] {
            let v: f64 = dlogistic_logprob(y, mu, s).unwrap();
            assert!(v.is_finite(), "{y} {mu} {s} -> {v}");
        }
    }

    #[test]
    fn logistic_gradients_match_differences() {
        let h = 1e-6;
        for &(y, mu, ls) in &[(0u32, 12.0, 1.3), (255, 240.0, 2.0), (77, 80.5, 0.7), (77, 10.0, 3.0)] {
            let (_, dmu, dls) = dlogistic_logprob_with_grads::<f64>(y, mu, ls);
            let f = |m: f64, l: f64| dlogistic_logprob_with_grads(y, m, l).0;
            let nmu = (f(mu + h, ls) - f(mu - h, ls)) / (2.0 * h);
            let nls = (f(mu, ls + h) - f(mu, ls - h)) / (2.0 * h);
            assert!((dmu - nmu).abs() <= 1e-4 * nmu.abs().max(1e-3), "{dmu} vs {nmu}");
            assert!((dls - nls).abs() <= 1e-4 * nls.abs().max(1e-3), "{dls} vs {nls}");
        }
    }

    #[test]
    fn mixture_reduces_and_normalizes() {
        let single = dlogistic_logprob(40, 50.0f64, 5.0).unwrap();
        assert_eq!(dlogistic_mixture_logprob(40, &[50.0], 5.0, &[1.0]).unwrap(), single);
        let same = dlogistic_mixture_logprob(40, &[50.0, 50.0, 50.0], 5.0, &[0.2, 0.5, 0.3]).unwrap();
        assert!((same - single).abs() < 1e-12);
        let total: f64 = (0..=255)
            .map(|y| dlogistic_mixture_logprob(y, &[10.0f64, 128.0, 250.0], 4.0, &[0.3, 0.3, 0.4]).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(dlogistic_mixture_logprob(1, &[1.0, 2.0], 1.0f64, &[1.0]).is_err());
    }

    #[test]
    fn bernoulli_values_and_gradient() {
        assert!((bernoulli_logprob(1.0f64, 0.5) - (-std::f64::consts::LN_2)).abs() < 1e-12);
        let p = 0.3f64;
        assert_eq!(bernoulli_logprob(1.0, p).exp() + bernoulli_logprob(0.0, p).exp(), 1.0);
        assert!(bernoulli_logprob(1.0f64, 0.0).is_finite());
        let h = 1e-7;
        for &y in &[0.0, 1.0] {
            let (_, d) = bernoulli_logprob_with_grad(y, p);
            let n = (bernoulli_logprob(y, p + h) - bernoulli_logprob(y, p - h)) / (2.0 * h);
            assert!((d - n).abs() < 1e-6);
        }
    }

    #[test]
    fn continuous_bernoulli_uniform_case_and_continuity() {
        for &y in &[0.0f64, 0.25, 0.5, 1.0] {
            assert!(cont_bernoulli_logprob(y, 0.5).abs() < 1e-15);
            let c = cont_bernoulli_logprob(y, 0.5);
            assert!((cont_bernoulli_logprob(y, 0.5 + 1e-6) - c).abs() < 1e-5);
            assert!((cont_bernoulli_logprob(y, 0.5 - 1e-6) - c).abs() < 1e-5);
        }
        // both branches agree at the switch point
        let inside = cont_bernoulli_log_norm(0.5 + 0.999e-3f64);
        let outside = cont_bernoulli_log_norm(0.5 + 1.001e-3f64);
        assert!((inside - outside).abs() < 1e-8);
    }

    #[test]
    fn continuous_bernoulli_gradient() {
        let h = 1e-7;
        for &(y, l) in &[(0.2f64, 0.1f64), (0.9, 0.7), (0.5, 0.5003), (0.1, 0.4995), (0.6, 0.95)] {
            let (_, d) = cont_bernoulli_logprob_with_grad(y, l);
            let n = (cont_bernoulli_logprob(y, l + h) - cont_bernoulli_logprob(y, l - h)) / (2.0 * h);
            assert!((d - n).abs() <= 1e-5 * n.abs().max(1.0), "{y} {l}: {d} vs {n}");
        }
    }

    #[test]
    fn family_support_checks() {
        assert!(LikelihoodFamily::Bernoulli.accepts(1.0));
        assert!(!LikelihoodFamily::Bernoulli.accepts(0.5));
        assert!(LikelihoodFamily::DiscretizedLogistic.accepts(17.0 / 255.0));
        assert!(!LikelihoodFamily::DiscretizedLogistic.accepts(0.1234));
        assert!(LikelihoodFamily::ContinuousBernoulli.accepts(0.1234));
    }
}
