//! Bayesian optimization: Gaussian process with a Matérn-5/2 kernel on
//! log-scaled parameters, log expected improvement, Sobol warm start.

use std::collections::BTreeMap;

use argmin::core::{CostFunction, Error as ArgminError, Executor};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sobol_point, ChatExchange, Evaluation, ParameterUpdate, ProposalContext, Proposer, ProposerError, ProposerKind, SearchSpace};
use crate::seed;

pub const MAX_DIM: usize = 20;
const LOSS_FLOOR: f64 = 1e-12;
const MIN_NOISE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    /// Recorded for provenance; only "matern52" is implemented.
    pub kernel: String,
    /// Recorded for provenance; only "log_ei" is implemented.
    pub acquisition: String,
    /// Warm-start size; twice the dimension when unset.
    pub n_init: Option<usize>,
    pub restarts: usize,
    pub candidates: usize,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self { kernel: "matern52".into(), acquisition: "log_ei".into(), n_init: None, restarts: 64, candidates: 2048 }
    }
}

fn matern52(r: f64) -> f64 {
    let s = 5f64.sqrt() * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Fitted zero-mean GP on standardized targets.
pub struct Gp {
    x: Vec<Vec<f64>>,
    lengthscales: Vec<f64>,
    signal: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
}

impl Gp {
    fn kernel(ls: &[f64], signal: f64, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).zip(ls).map(|((p, q), l)| ((p - q) / l).powi(2)).sum();
        signal * matern52(r2.sqrt())
    }

    fn build(x: &[Vec<f64>], y: &DVector<f64>, ls: Vec<f64>, signal: f64, noise: f64) -> Option<Self> {
        let n = x.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            Self::kernel(&ls, signal, &x[i], &x[j]) + if i == j { noise } else { 0.0 }
        });
        let chol = k.cholesky()?;
        let alpha = chol.solve(y);
        if alpha.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(Self { x: x.to_vec(), lengthscales: ls, signal, chol, alpha })
    }

    fn log_marginal(&self, y: &DVector<f64>) -> f64 {
        let n = y.len() as f64;
        let logdet: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * y.dot(&self.alpha) - logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Fits kernel hyperparameters by maximizing the marginal likelihood.
    /// `jitter` scales the noise floor.
    pub fn fit(x: &[Vec<f64>], y: &[f64], jitter: f64) -> Option<Self> {
        let d = x.first()?.len();
        let yv = DVector::from_column_slice(y);
        let floor = MIN_NOISE * jitter;
        let unpack = |p: &[f64]| -> (Vec<f64>, f64, f64) {
            let ls = p[..d].iter().map(|v| v.clamp(-4.6, 2.3).exp()).collect();
            let signal = p[d].clamp(-4.6, 4.6).exp();
            let noise = p[d + 1].clamp(floor.ln(), 0.0).exp().max(floor);
            (ls, signal, noise)
        };
        struct Nll<'a> {
            x: &'a [Vec<f64>],
            y: &'a DVector<f64>,
            unpack: &'a dyn Fn(&[f64]) -> (Vec<f64>, f64, f64),
        }
        impl CostFunction for Nll<'_> {
            type Param = Vec<f64>;
            type Output = f64;
            fn cost(&self, p: &Vec<f64>) -> Result<f64, ArgminError> {
                let (ls, s, n) = (self.unpack)(p);
                Ok(match Gp::build(self.x, self.y, ls, s, n) {
                    Some(gp) => -gp.log_marginal(self.y),
                    None => 1e10,
                })
            }
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for ls0 in [0.2f64, 0.5, 1.5] {
            let mut start = vec![ls0.ln(); d];
            start.push(0.0);
            start.push((1e-3f64).max(floor).ln());
            let mut simplex = vec![start.clone()];
            for i in 0..start.len() {
                let mut v = start.clone();
                v[i] += 0.7;
                simplex.push(v);
            }
            let problem = Nll { x, y: &yv, unpack: &unpack };
            let solver = NelderMead::new(simplex).with_sd_tolerance(1e-6).ok()?;
            let Ok(res) = Executor::new(problem, solver).configure(|s| s.max_iters(150 * (d as u64 + 2))).run() else {
                continue;
            };
            let state = res.state();
            if let Some(p) = state.best_param.clone() {
                let c = state.best_cost;
                if c.is_finite() && c < 1e9 && best.as_ref().is_none_or(|b| c < b.0) {
                    best = Some((c, p));
                }
            }
        }
        let (_, p) = best?;
        let (ls, s, n) = unpack(&p);
        Self::build(x, &yv, ls, s, n)
    }

    /// Posterior mean and standard deviation.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| Self::kernel(&self.lengthscales, self.signal, xi, q)));
        let mean = ks.dot(&self.alpha);
        let v = self.chol.l_dirty().solve_lower_triangular(&ks).unwrap_or_else(|| DVector::zeros(ks.len()));
        let var = (self.signal - v.dot(&v)).max(1e-18);
        (mean, var.sqrt())
    }
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn norm_pdf_ln(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// ln of E[max(best − f, 0)] for f ~ N(mean, sd²).
pub fn log_expected_improvement(mean: f64, sd: f64, best: f64) -> f64 {
    let z = (best - mean) / sd;
    let h_ln = if z > -3.0 {
        (z * norm_cdf(z) + norm_pdf_ln(z).exp()).ln()
    } else {
        // h = φ(z)·t/(x+t) with t from the continued fraction of the Mills
        // ratio; avoids the cancellation in zΦ(z) + φ(z)
        let x = -z;
        let mut f = x;
        for k in (2..=200).rev() {
            f = x + k as f64 / f;
        }
        let t = 1.0 / f;
        norm_pdf_ln(z) + (t / (x + t)).ln()
    };
    sd.ln() + h_ln
}

pub struct BoProposer {
    cfg: BoConfig,
    space: SearchSpace,
    seed: u64,
    proposed: usize,
}

impl BoProposer {
    pub fn new(cfg: BoConfig, space: SearchSpace, seed: u64) -> Result<Self, ProposerError> {
        if space.dim() > MAX_DIM {
            return Err(ProposerError::Config(format!("BO handles at most {MAX_DIM} search keys, got {}", space.dim())));
        }
        if cfg.kernel != "matern52" || cfg.acquisition != "log_ei" {
            return Err(ProposerError::Config(format!("unsupported BO settings {}/{}", cfg.kernel, cfg.acquisition)));
        }
        Ok(Self { cfg, space, seed, proposed: 0 })
    }

    pub fn n_init(&self) -> usize {
        self.cfg.n_init.unwrap_or(2 * self.space.dim())
    }

    fn sobol(&self, index: usize) -> BTreeMap<String, f64> {
        self.space.from_unit(&sobol_point(index, self.space.dim(), self.seed), true)
    }

    /// Next point given the evaluations so far.
    pub fn next_point(&mut self, history: &[Evaluation]) -> BTreeMap<String, f64> {
        let k = self.proposed;
        self.proposed += 1;
        if k < self.n_init() || history.len() < 2 {
            return self.sobol(k);
        }
        self.acquire(history, k).unwrap_or_else(|| {
            log::debug!("GP fit failed at proposal {k}; using a Sobol point");
            self.sobol(k)
        })
    }

    fn acquire(&self, history: &[Evaluation], k: usize) -> Option<BTreeMap<String, f64>> {
        let x: Vec<Vec<f64>> = history.iter().map(|e| self.space.to_unit(&e.theta, true)).collect();
        let raw: Vec<f64> = history.iter().map(|e| e.total_mape.max(LOSS_FLOOR).ln()).collect();
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let sd = if sd > 1e-12 { sd } else { 1.0 };
        let y: Vec<f64> = raw.iter().map(|v| (v - mean) / sd).collect();
        let best = y.iter().cloned().fold(f64::INFINITY, f64::min);

        let gp = Gp::fit(&x, &y, 1.0).or_else(|| Gp::fit(&x, &y, 100.0))?;
        let d = self.space.dim();
        let acq = |p: &[f64]| -> f64 {
            let q: Vec<f64> = p.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            let (m, s) = gp.predict(&q);
            log_expected_improvement(m, s, best)
        };

        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(self.seed, &format!("bo/{k}")));
        let mut pool: Vec<Vec<f64>> = (0..self.cfg.candidates).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
        let best_i = y.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i)?;
        for _ in 0..16 {
            pool.push(x[best_i].iter().map(|v| (v + 0.05 * (rng.gen::<f64>() - 0.5)).clamp(0.0, 1.0)).collect());
        }
        let mut scored: Vec<(f64, Vec<f64>)> = pool.into_iter().map(|p| (acq(&p), p)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        scored.truncate(self.cfg.restarts.max(1));

        struct NegAcq<'a>(&'a dyn Fn(&[f64]) -> f64);
        impl CostFunction for NegAcq<'_> {
            type Param = Vec<f64>;
            type Output = f64;
            fn cost(&self, p: &Vec<f64>) -> Result<f64, ArgminError> {
                let v = -(self.0)(p);
                Ok(if v.is_finite() { v } else { 1e300 })
            }
        }
        let mut winner: Option<(f64, Vec<f64>)> = None;
        for (score, start) in scored {
            let mut simplex = vec![start.clone()];
            for i in 0..d {
                let mut v = start.clone();
                v[i] = if v[i] > 0.5 { v[i] - 0.05 } else { v[i] + 0.05 };
                simplex.push(v);
            }
            let mut candidate = (score, start);
            if let Ok(solver) = NelderMead::new(simplex).with_sd_tolerance(1e-10) {
                if let Ok(res) = Executor::new(NegAcq(&acq), solver).configure(|s| s.max_iters(60 * d as u64)).run() {
                    if let Some(p) = res.state().best_param.clone() {
                        let p: Vec<f64> = p.iter().map(|v| v.clamp(0.0, 1.0)).collect();
                        let s = acq(&p);
                        if s > candidate.0 {
                            candidate = (s, p);
                        }
                    }
                }
            }
            if winner.as_ref().is_none_or(|w| candidate.0 > w.0) {
                winner = Some(candidate);
            }
        }
        let (score, point) = winner?;
        let duplicate = x.iter().any(|xi| xi.iter().zip(&point).all(|(a, b)| (a - b).abs() < 1e-9));
        if !score.is_finite() || duplicate {
            return None;
        }
        Some(self.space.from_unit(&point, true))
    }
}

impl Proposer for BoProposer {
    fn kind(&self) -> ProposerKind {
        ProposerKind::Bo
    }

    fn propose(&mut self, ctx: &ProposalContext, _log: &mut Vec<ChatExchange>) -> Result<ParameterUpdate, ProposerError> {
        Ok(ParameterUpdate::absolute(&self.next_point(ctx.history)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(d: usize) -> SearchSpace {
        SearchSpace::new((0..d).map(|i| format!("x{i}")).collect(), vec![0.0; d], vec![1.0; d]).unwrap()
    }

    fn run(bo: &mut BoProposer, f: impl Fn(&BTreeMap<String, f64>) -> f64, n: usize) -> Vec<Evaluation> {
        let mut h = Vec::new();
        for _ in 0..n {
            let t = bo.next_point(&h);
            let total_mape = f(&t);
            h.push(Evaluation { theta: t, total_mape });
        }
        h
    }

    #[test]
    fn log_ei_matches_closed_form_and_tail() {
        // z = 0: EI = sd * phi(0)
        let v = log_expected_improvement(0.0, 2.0, 0.0);
        assert!((v - (2.0 * 0.398_942_280_401_432_7f64).ln()).abs() < 1e-12);
        // continuity across the series switch
        let a = log_expected_improvement(3.0 - 1e-12, 1.0, 0.0);
        let b = log_expected_improvement(3.0 + 1e-12, 1.0, 0.0);
        assert!((a - b).abs() < 1e-9, "{a} {b}");
        // high-precision references for ln(zΦ(z) + φ(z))
        for (z, want) in [(-3.0, -7.869_686_059_603_028_5), (-10.0, -55.553_122_036_122_356), (-40.0, -808.298_568_356_619_96)] {
            let got = log_expected_improvement(-z, 1.0, 0.0);
            assert!((got - want).abs() < 1e-9 * want.abs(), "{z}: {got} vs {want}");
        }
    }

    #[test]
    fn warm_start_is_sobol_and_ignores_history() {
        let mut a = BoProposer::new(BoConfig::default(), space(3), 5).unwrap();
        let mut b = BoProposer::new(BoConfig::default(), space(3), 5).unwrap();
        assert_eq!(a.n_init(), 6);
        let junk = vec![Evaluation { theta: BTreeMap::from([("x0".into(), 0.1)]), total_mape: 3.0 }; 4];
        for i in 0..6 {
            let p = a.next_point(&[]);
            assert_eq!(p, b.next_point(&junk));
            assert_eq!(p, space(3).from_unit(&sobol_point(i, 3, 5), true));
        }
    }

    #[test]
    fn finds_minimum_of_1d_quadratic() {
        let mut bo = BoProposer::new(BoConfig::default(), space(1), 1).unwrap();
        let h = run(&mut bo, |t| (t["x0"] - 0.3).powi(2), 25);
        let best = h.iter().min_by(|a, b| a.total_mape.total_cmp(&b.total_mape)).unwrap();
        assert!((best.theta["x0"] - 0.3).abs() < 0.05, "{:?}", best.theta);
    }

    #[test]
    fn same_seed_same_sequence_and_in_bounds() {
        let f = |t: &BTreeMap<String, f64>| (t["x0"] - 0.7).powi(2) + 2.0 * (t["x1"] - 0.2).powi(2) + 1e-3;
        let mut a = BoProposer::new(BoConfig::default(), space(2), 3).unwrap();
        let mut b = BoProposer::new(BoConfig::default(), space(2), 3).unwrap();
        let ha = run(&mut a, f, 14);
        let hb = run(&mut b, f, 14);
        assert_eq!(ha, hb);
        assert!(ha.iter().all(|e| space(2).contains(&e.theta)));
    }

    #[test]
    fn too_many_keys_rejected() {
        assert!(BoProposer::new(BoConfig::default(), space(21), 0).is_err());
    }
}
