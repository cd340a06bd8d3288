//! Evidence lower bound: reconstruction, latent KL and categorical KL.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{standard_noise, CATEGORICAL_FLOOR};
use crate::error::{Result, VamohError};
use crate::graph::{Gradients, Graph, Var};
use crate::likelihood::loglik_graph;
use crate::model::VamohModel;
use crate::pointcloud::PointCloud;
use crate::rng::seeded;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// The three ELBO terms and their signed sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub recon: f64,
    pub kl_z: f64,
    pub kl_c: f64,
    pub elbo: f64,
}

impl ElboTerms {
    pub fn new(recon: f64, kl_z: f64, kl_c: f64) -> Self {
        Self { recon, kl_z, kl_c, elbo: recon - kl_z - kl_c }
    }

    pub fn is_finite(&self) -> bool {
        self.recon.is_finite() && self.kl_z.is_finite() && self.kl_c.is_finite() && self.elbo.is_finite()
    }

    /// Name of the first non-finite term.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [("recon", self.recon), ("kl_z", self.kl_z), ("kl_c", self.kl_c), ("elbo", self.elbo)]
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }

    pub fn mean(terms: &[ElboTerms]) -> ElboTerms {
        if terms.is_empty() {
            return ElboTerms::default();
        }
        let n = terms.len() as f64;
        let sum = |f: fn(&ElboTerms) -> f64| terms.iter().map(f).sum::<f64>() / n;
        ElboTerms::new(sum(|t| t.recon), sum(|t| t.kl_z), sum(|t| t.kl_c))
    }
}

/// `Σ_d Σ_k q_dk · L_dk` for per-component log-likelihoods `L` (`D×K`).
pub fn recon_term<T: Scalar>(loglik: &Matrix<T>, q: &Matrix<T>) -> Result<T> {
    if loglik.shape() != q.shape() {
        return Err(VamohError::Dimension(format!("loglik {:?} vs weights {:?}", loglik.shape(), q.shape())));
    }
    Ok(loglik.data().iter().zip(q.data()).map(|(&l, &w)| l * w).sum())
}

/// `Σ_d Σ_k q_dk (log q_dk − log p_dk)` with both arguments floored at `1e-12`
/// inside the logarithms.
pub fn kl_categorical_closed<T: Scalar>(q: &Matrix<T>, p: &Matrix<T>) -> Result<T> {
    if q.shape() != p.shape() {
        return Err(VamohError::Dimension(format!("posterior {:?} vs prior {:?}", q.shape(), p.shape())));
    }
    let floor = T::lit(CATEGORICAL_FLOOR);
    Ok(q.data()
        .iter()
        .zip(p.data())
        .map(|(&a, &b)| if a == b { T::zero() } else { a * (a.max(floor).ln() - b.max(floor).ln()) })
        .sum())
}

/// Graph variables for one cloud's terms, averaged over latent samples.
#[derive(Clone, Copy, Debug)]
pub struct CloudElbo {
    pub recon: Var,
    pub kl_z: Var,
    pub kl_c: Var,
    pub elbo: Var,
}

/// Builds the ELBO of one cloud on `g` using the given standard-normal noise
/// (`S×dim_z`, one row per latent sample) for the reparameterized latent.
pub fn cloud_elbo<T: Scalar>(
    g: &mut Graph<'_, T>,
    model: &VamohModel<T>,
    cloud: &PointCloud<T>,
    noise: &Matrix<T>,
) -> Result<CloudElbo> {
    let dz = model.dim_z();
    let samples = noise.rows();
    if samples == 0 || noise.cols() != dz {
        return Err(VamohError::Dimension(format!("noise must be S×{dz} with S ≥ 1, got {:?}", noise.shape())));
    }
    let inv_s = T::one() / T::lit(samples as f64);
    let (mean, log_std) = model.encoder_z.forward(g, cloud)?;
    let eps = g.constant(noise.clone());
    let std = g.exp(log_std);
    let spread = g.mul(eps, std);
    let z = g.add(spread, mean);

    // log q(z) in noise form: −½‖ε‖² − Σ log σ − (d/2) log 2π, averaged over samples.
    let half_eps: T = noise.sum_sq() * T::lit(0.5) * inv_s;
    let c = T::lit(0.5 * dz as f64 * (2.0 * std::f64::consts::PI).ln());
    let sum_ls = g.sum_all(log_std);
    let neg_ls = g.neg(sum_ls);
    let log_q = g.offset(neg_ls, -(half_eps + c));
    let log_p_rows = model.flow.log_prob_graph(g, z, model.flow_enabled);
    let log_p_sum = g.sum_all(log_p_rows);
    let log_p = g.scale(log_p_sum, inv_s);
    let kl_z = g.sub(log_q, log_p);

    let rff = g.constant(model.encode_coords(cloud.coords())?);
    let log_scale = g.param(model.decoder.log_scale);
    let ln_floor = T::lit(CATEGORICAL_FLOOR.ln());
    let mut recon_acc: Option<Var> = None;
    let mut klc_acc: Option<Var> = None;
    for s in 0..samples {
        let zs = g.slice(z, s * dz, 1, dz);
        let (mus, log_pi) = model.decode_graph(g, zs, rff);
        let cols: Vec<Var> = mus
            .iter()
            .map(|&mu| {
                let ll = loglik_graph(g, model.decoder.family, mu, log_scale, cloud.features());
                g.sum_cols(ll)
            })
            .collect();
        let loglik = g.concat_cols(&cols);
        let log_q_c = model.encoder_c.forward(g, zs, rff, cloud.features())?;
        let q = g.exp(log_q_c);
        let weighted = g.mul(q, loglik);
        let recon = g.sum_all(weighted);
        let lq = g.clamp(log_q_c, ln_floor, T::zero());
        let lp = g.clamp(log_pi, ln_floor, T::zero());
        let diff = g.sub(lq, lp);
        let kl_terms = g.mul(q, diff);
        let kl_c = g.sum_all(kl_terms);
        recon_acc = Some(match recon_acc {
            Some(a) => g.add(a, recon),
            None => recon,
        });
        klc_acc = Some(match klc_acc {
            Some(a) => g.add(a, kl_c),
            None => kl_c,
        });
    }
    let recon_sum = recon_acc.expect("at least one sample");
    let recon = g.scale(recon_sum, inv_s);
    let klc_sum = klc_acc.expect("at least one sample");
    let kl_c = g.scale(klc_sum, inv_s);
    let r_minus = g.sub(recon, kl_z);
    let elbo = g.sub(r_minus, kl_c);
    Ok(CloudElbo { recon, kl_z, kl_c, elbo })
}

fn read_terms<T: Scalar>(g: &Graph<'_, T>, c: &CloudElbo) -> ElboTerms {
    ElboTerms {
        recon: g.scalar(c.recon).as_f64(),
        kl_z: g.scalar(c.kl_z).as_f64(),
        kl_c: g.scalar(c.kl_c).as_f64(),
        elbo: g.scalar(c.elbo).as_f64(),
    }
}

/// Draws one noise seed per cloud, in batch order.
pub fn cloud_seeds<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<u64> {
    (0..n).map(|_| rng.random()).collect()
}

/// Per-cloud noise from a seed.
pub fn cloud_noise<T: Scalar>(seed: u64, samples: usize, dim_z: usize) -> Matrix<T> {
    standard_noise(samples, dim_z, &mut seeded(seed))
}

/// Batch-mean ELBO terms without gradients.
pub fn elbo<T: Scalar, R: Rng + ?Sized>(
    batch: &[PointCloud<T>],
    model: &VamohModel<T>,
    rng: &mut R,
    mc_samples: usize,
) -> Result<ElboTerms> {
    let seeds = cloud_seeds(batch.len(), rng);
    let terms: Result<Vec<ElboTerms>> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(cloud, &seed)| {
            let mut g = Graph::inference(&model.params);
            let noise = cloud_noise(seed, mc_samples, model.dim_z());
            let c = cloud_elbo(&mut g, model, cloud, &noise)?;
            Ok(read_terms(&g, &c))
        })
        .collect();
    let terms = terms?;
    finite_or_error(ElboTerms::mean(&terms))
}

/// Differentiates each term separately to name the one whose gradient is
/// not finite.
fn blame_non_finite<T: Scalar>(g: &Graph<'_, T>, c: &CloudElbo, param: &str) -> VamohError {
    let term = [("recon", c.recon), ("kl_z", c.kl_z), ("kl_c", c.kl_c)]
        .into_iter()
        .find(|&(_, v)| g.backward(v).map_or(true, |gr| gr.first_non_finite().is_some()))
        .map_or("elbo", |(n, _)| n);
    VamohError::NonFinite { term: format!("gradient of {term}"), detail: format!("parameter {param}") }
}

fn finite_or_error(t: ElboTerms) -> Result<ElboTerms> {
    match t.non_finite_term() {
        Some(term) => Err(VamohError::NonFinite { term: term.into(), detail: format!("{t:?}") }),
        None => Ok(t),
    }
}

/// Batch-mean ELBO terms and the gradient of the negative batch-mean ELBO,
/// using the given per-cloud noise seeds.
pub fn neg_elbo_gradients<T: Scalar>(
    batch: &[PointCloud<T>],
    model: &VamohModel<T>,
    seeds: &[u64],
    mc_samples: usize,
) -> Result<(ElboTerms, Gradients<T>)> {
    if batch.is_empty() || seeds.len() != batch.len() {
        return Err(VamohError::InvalidParameter("batch must be non-empty with one seed per cloud".into()));
    }
    let per_cloud: Result<Vec<(ElboTerms, Gradients<T>)>> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(cloud, &seed)| {
            let mut g = Graph::new(&model.params);
            let noise = cloud_noise(seed, mc_samples, model.dim_z());
            let c = cloud_elbo(&mut g, model, cloud, &noise)?;
            let terms = read_terms(&g, &c);
            let loss = g.neg(c.elbo);
            let grads = g.backward(loss)?;
            if let Some(id) = grads.first_non_finite() {
                return Err(blame_non_finite(&g, &c, &model.params.entry(id).name));
            }
            Ok((terms, grads))
        })
        .collect();
    let per_cloud = per_cloud?;
    let mut grads = Gradients::empty(model.params.len());
    let mut terms = Vec::with_capacity(per_cloud.len());
    for (t, gr) in &per_cloud {
        terms.push(*t);
        grads.accumulate(gr);
    }
    grads.scale(T::one() / T::lit(batch.len() as f64));
    Ok((finite_or_error(ElboTerms::mean(&terms))?, grads))
}
