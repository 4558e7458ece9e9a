//! Closed-form gradients of the full objective and a central-difference
//! checker for them.

use rand::seq::index::sample;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, sigmoid};
use crate::losses::{evaluate_loss, nearest_tagged, LossWeights};
use crate::network::{incongruity_pass, IncongruityHead, ModelParams, TaggedBank};
use crate::seed;
use crate::store::EmbeddingRecord;

/// Gradient of the objective, shaped like the trainable part of [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub semantic: Vec<Vec<f64>>,
    pub sentiment: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub bias: f64,
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Grads {
    pub fn zeros_like(p: &ModelParams) -> Self {
        let h = p.hidden();
        Grads {
            semantic: vec![vec![0.0; p.d_s()]; p.k_a()],
            sentiment: vec![vec![0.0; p.d_m()]; p.k_b()],
            theta: vec![0.0; p.head.theta.len()],
            bias: 0.0,
            w1: vec![vec![0.0; h]; p.k_b()],
            b1: vec![0.0; h],
            w2: vec![0.0; h],
            b2: 0.0,
        }
    }

    /// Same ordering as [`ModelParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.semantic.iter().for_each(|v| out.extend_from_slice(v));
        self.sentiment.iter().for_each(|v| out.extend_from_slice(v));
        out.extend_from_slice(&self.theta);
        out.push(self.bias);
        self.w1.iter().for_each(|v| out.extend_from_slice(v));
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
        out
    }
}

/// Backpropagates `g` (dL/dlogit of the incongruity head) and returns dL/dw.
fn inco_backward(w_st: &[f64], head: &IncongruityHead, g: f64, grads: &mut Grads) -> Result<Vec<f64>> {
    let pass = incongruity_pass(w_st, head)?;
    grads.b2 += g;
    let mut g_pre = vec![0.0; pass.pre.len()];
    for (k, &pre) in pass.pre.iter().enumerate() {
        grads.w2[k] += g * pre.max(0.0);
        if pre > 0.0 {
            g_pre[k] = g * head.w2[k];
        }
    }
    let mut g_w = vec![0.0; w_st.len()];
    for (j, (&wj, row)) in w_st.iter().zip(&head.w1).enumerate() {
        for (k, &gp) in g_pre.iter().enumerate() {
            grads.w1[j][k] += gp * wj;
        }
        g_w[j] = dot(row, &g_pre);
    }
    for (b, gp) in grads.b1.iter_mut().zip(&g_pre) {
        *b += gp;
    }
    Ok(g_w)
}

/// Chains dL/dsim_j into the prototypes: dsim_j/dp_j = sim_j * 2 (e - p_j) / sigma^2.
fn rbf_backward(e: &[f64], bank: &TaggedBank, sims: &[f64], g_sim: &[f64], out: &mut [Vec<f64>]) {
    let scale = 2.0 / (bank.sigma * bank.sigma);
    for (j, p) in bank.vectors.iter().enumerate() {
        let c = g_sim[j] * sims[j] * scale;
        if c == 0.0 {
            continue;
        }
        for ((o, &x), &pj) in out[j].iter_mut().zip(e).zip(p) {
            *o += c * (x - pj);
        }
    }
}

/// Clustering/separation gradient for one sample: the nearest same-tag
/// prototype is weighted by `w_cls`, the nearest other-tag one by `w_sep`.
fn cls_sep_backward(e: &[f64], label: u8, bank: &TaggedBank, w_cls: f64, w_sep: f64, out: &mut [Vec<f64>]) {
    for (same, weight) in [(true, w_cls), (false, w_sep)] {
        if weight == 0.0 {
            continue;
        }
        if let Some((j, _)) = nearest_tagged(e, label, bank, same) {
            // d/dp |e - p|^2 = -2 (e - p)
            for ((o, &x), &pj) in out[j].iter_mut().zip(e).zip(&bank.vectors[j]) {
                *o += -2.0 * weight * (x - pj);
            }
        }
    }
}

fn div_backward(bank: &[Vec<f64>], threshold: f64, weight: f64, out: &mut [Vec<f64>]) -> Result<()> {
    if weight == 0.0 {
        return Ok(());
    }
    let norms: Vec<f64> = bank.iter().map(|p| norm(p)).collect();
    for j in 0..bank.len() {
        for q in j + 1..bank.len() {
            let (nj, nq) = (norms[j], norms[q]);
            if nj == 0.0 || nq == 0.0 {
                return Err(Error::Numerical(format!(
                    "zero-norm prototype in pair ({j}, {q}); cosine undefined"
                )));
            }
            let cos = dot(&bank[j], &bank[q]) / (nj * nq);
            if cos <= threshold {
                continue;
            }
            // d cos(a, b) / da = b / (|a||b|) - cos * a / |a|^2
            for d in 0..bank[j].len() {
                let (a, b) = (bank[j][d], bank[q][d]);
                out[j][d] += weight * (b / (nj * nq) - cos * a / (nj * nj));
                out[q][d] += weight * (a / (nj * nq) - cos * b / (nq * nq));
            }
        }
    }
    Ok(())
}

/// Exact gradient of the weighted objective on `batch` with respect to every
/// trainable parameter. The L1 term uses sign(theta) with sign(0) = 0; each
/// min-distance term is differentiated through its argmin.
pub fn gradients(batch: &[&EmbeddingRecord], params: &ModelParams, w: &LossWeights) -> Result<Grads> {
    if batch.is_empty() {
        return Err(Error::Data("gradient of an empty batch".into()));
    }
    let mut g = Grads::zeros_like(params);
    let inv_n = 1.0 / batch.len() as f64;
    let (sem, sent) = (&params.bank.semantic, &params.bank.sentiment);
    let (k_a, k_b) = (params.k_a(), params.k_b());
    let theta = &params.head.theta;
    let sep = w.sep_sign.value();

    for rec in batch {
        let t = params.forward(rec)?;

        let g_logit = (sigmoid(t.logit) - rec.y as f64) * inv_n;
        g.bias += g_logit;
        let x = t.w_ct.iter().chain(&t.w_ep).chain(&t.w_ip);
        for (gt, xi) in g.theta.iter_mut().zip(x) {
            *gt += g_logit * xi;
        }
        let g_ct: Vec<f64> = theta[..k_a].iter().map(|th| g_logit * th).collect();
        let mut g_ep: Vec<f64> = theta[k_a..k_a + k_b].iter().map(|th| g_logit * th).collect();
        let mut g_ip: Vec<f64> = theta[k_a + k_b..].iter().map(|th| g_logit * th).collect();

        if w.inco != 0.0 {
            let head = &params.inco_head;
            let ge = w.inco * inv_n * (sigmoid(t.h_ep_logit) - rec.z_ep as f64);
            let gi = w.inco * inv_n * (sigmoid(t.h_ip_logit) - rec.z_ip as f64);
            for (a, b) in g_ep.iter_mut().zip(inco_backward(&t.w_ep, head, ge, &mut g)?) {
                *a += b;
            }
            for (a, b) in g_ip.iter_mut().zip(inco_backward(&t.w_ip, head, gi, &mut g)?) {
                *a += b;
            }
        }

        rbf_backward(&rec.e_ct, sem, &t.w_ct, &g_ct, &mut g.semantic);
        rbf_backward(&rec.e_st_ep, sent, &t.w_ep, &g_ep, &mut g.sentiment);
        rbf_backward(&rec.e_st_ip, sent, &t.w_ip, &g_ip, &mut g.sentiment);

        let (wc, ws) = (w.cls_sep * inv_n, w.cls_sep * sep * inv_n);
        cls_sep_backward(&rec.e_ct, rec.y, sem, wc, ws, &mut g.semantic);
        cls_sep_backward(&rec.e_st_ep, rec.z_ep, sent, wc, ws, &mut g.sentiment);
        cls_sep_backward(&rec.e_st_ip, rec.z_ip, sent, wc, ws, &mut g.sentiment);
    }

    div_backward(&sem.vectors, w.cos_threshold, w.div, &mut g.semantic)?;
    div_backward(&sent.vectors, w.cos_threshold, w.div, &mut g.sentiment)?;

    if w.l1 != 0.0 {
        for (gt, th) in g.theta.iter_mut().zip(theta) {
            let sign = if *th > 0.0 {
                1.0
            } else if *th < 0.0 {
                -1.0
            } else {
                0.0
            };
            *gt += w.l1 * sign;
        }
    }
    Ok(g)
}

/// Denominator floor for relative error, so entries whose true gradient is
/// (numerically) zero are judged on absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Above this many parameters only a seeded sample of coordinates is checked.
pub const FD_MAX_CHECKED: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub worst_path: String,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub total_params: usize,
    pub step: f64,
}

/// Central differences of `f` at `x` on coordinates `indices`, compared to
/// `analytic`. Returns `(max_rel_err, worst_index, numeric_at_worst)`.
pub fn central_difference_check<F>(
    mut f: F,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
) -> Result<(f64, usize, f64)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut xs = x.to_vec();
    let mut worst = (0.0, indices.first().copied().unwrap_or(0), f64::NAN);
    for &i in indices {
        let orig = xs[i];
        xs[i] = orig + step;
        let up = f(&xs)?;
        xs[i] = orig - step;
        let down = f(&xs)?;
        xs[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss while perturbing coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 || worst.2.is_nan() {
            worst = (err, i, numeric);
        }
    }
    Ok(worst)
}

/// Compares [`gradients`] against central differences of the objective.
pub fn finite_diff_check(
    params: &ModelParams,
    batch: &[&EmbeddingRecord],
    w: &LossWeights,
    step: f64,
    sample_seed: u64,
) -> Result<FdReport> {
    let analytic = gradients(batch, params, w)?.to_flat();
    let x = params.to_flat();
    let total = x.len();
    let indices: Vec<usize> = if total > FD_MAX_CHECKED {
        let mut rng = seed::rng(sample_seed, seed::stream::GRADCHECK);
        let mut idx = sample(&mut rng, total, FD_MAX_CHECKED).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..total).collect()
    };
    let mut probe = params.clone();
    let (max_rel_err, worst_index, numeric) = central_difference_check(
        |flat| {
            probe.set_flat(flat);
            Ok(evaluate_loss(&probe, batch, w)?.total)
        },
        &x,
        &analytic,
        &indices,
        step,
    )?;
    Ok(FdReport {
        max_rel_err,
        worst_index,
        worst_path: params.param_path(worst_index),
        analytic: analytic[worst_index],
        numeric,
        checked: indices.len(),
        total_params: total,
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::SepSign;
    use crate::synth::random_instance;

    #[test]
    fn quadratic_objective_is_exact() {
        // f(x) = sum_i c_i x_i^2 + x_0 x_1, grad = 2 c_i x_i (+ cross terms)
        let c = [1.5, -0.7, 3.0, 0.25];
        let f = |x: &[f64]| -> Result<f64> {
            Ok(x.iter().zip(&c).map(|(xi, ci)| ci * xi * xi).sum::<f64>() + x[0] * x[1])
        };
        let x = [0.3, -1.2, 2.0, 0.9];
        let mut grad: Vec<f64> = x.iter().zip(&c).map(|(xi, ci)| 2.0 * ci * xi).collect();
        grad[0] += x[1];
        grad[1] += x[0];
        let (err, _, _) = central_difference_check(f, &x, &grad, &[0, 1, 2, 3], 1e-5).unwrap();
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn zero_weights_bias_gradient_is_mean_residual() {
        let (mut params, records) = random_instance(3, 6, 4, 4, 3, 5, 3);
        params.head.theta.iter_mut().for_each(|t| *t = 0.0);
        params.head.bias = 0.0;
        let w = LossWeights {
            div: 0.0,
            cls_sep: 0.0,
            inco: 0.0,
            l1: 0.0,
            ..LossWeights::default()
        };
        let batch: Vec<&EmbeddingRecord> = records.iter().collect();
        let g = gradients(&batch, &params, &w).unwrap();
        let expected = records.iter().map(|r| 0.5 - r.y as f64).sum::<f64>() / records.len() as f64;
        assert!((g.bias - expected).abs() < 1e-15);
        assert!(g.semantic.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn inactive_hinge_gives_no_division_gradient() {
        let (params, records) = random_instance(5, 4, 4, 4, 3, 3, 2);
        let only_div = LossWeights {
            div: 1.0,
            cls_sep: 0.0,
            inco: 0.0,
            l1: 0.0,
            cos_threshold: 1.0,
            sep_sign: SepSign::Minus,
        };
        let mut g = Grads::zeros_like(&params);
        div_backward(&params.bank.semantic.vectors, 1.0, 1.0, &mut g.semantic).unwrap();
        assert!(g.semantic.iter().flatten().all(|&x| x == 0.0));
        let batch: Vec<&EmbeddingRecord> = records.iter().collect();
        let full = gradients(&batch, &params, &only_div).unwrap();
        // cosines never exceed 1, so the weighted division term adds nothing
        let mut no_div = only_div;
        no_div.div = 0.0;
        assert_eq!(full, gradients(&batch, &params, &no_div).unwrap());
    }

    #[test]
    fn full_model_matches_finite_differences() {
        for sign in [SepSign::Minus, SepSign::Plus] {
            let (params, records) = random_instance(17, 4, 4, 6, 2, 6, 5);
            let batch: Vec<&EmbeddingRecord> = records.iter().collect();
            let w = LossWeights {
                sep_sign: sign,
                cos_threshold: -0.2,
                ..LossWeights::default()
            };
            let rep = finite_diff_check(&params, &batch, &w, 1e-5, 0).unwrap();
            assert!(rep.max_rel_err <= 1e-4, "{rep:?}");
            assert_eq!(rep.checked, params.n_params());
        }
    }

    #[test]
    fn large_step_degrades_without_failing() {
        let (params, records) = random_instance(2, 4, 4, 6, 2, 6, 5);
        let batch: Vec<&EmbeddingRecord> = records.iter().collect();
        let w = LossWeights::default();
        let fine = finite_diff_check(&params, &batch, &w, 1e-5, 0).unwrap();
        let coarse = finite_diff_check(&params, &batch, &w, 1e-1, 0).unwrap();
        assert!(coarse.max_rel_err.is_finite());
        assert!(coarse.max_rel_err > fine.max_rel_err);
    }
}
