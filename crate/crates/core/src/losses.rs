//! Objective terms on model outputs, with their analytic derivatives.
//!
//! Per example, with two augmented views A and B:
//!
//! ```text
//! cl  = (bce(p_A, y) + bce(p_B, y)) / 2
//! sp  = (sum_t lambda_A + sum_t lambda_B) / 2
//! sm  = (sum_t (dlambda_A)^2 + sum_t (dlambda_B)^2) / 2
//! a   = sum_t (lambda_A,t - lambda_B,t)^2
//! total = cl + alpha * sp + beta * sm + gamma * a
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ForwardTrace;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 2e-8,
            beta: 0.002,
            gamma: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cl: f64,
    pub sp: f64,
    pub sm: f64,
    pub a: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(cl: f64, sp: f64, sm: f64, a: f64, w: &LossWeights) -> Self {
        Self {
            cl,
            sp,
            sm,
            a,
            total: cl + w.alpha * sp + w.beta * sm + w.gamma * a,
        }
    }

    /// Component-wise mean; `total` is averaged too, not recomposed.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut acc = LossBreakdown::default();
        for b in items {
            acc.cl += b.cl;
            acc.sp += b.sp;
            acc.sm += b.sm;
            acc.a += b.a;
            acc.total += b.total;
        }
        LossBreakdown {
            cl: acc.cl / n,
            sp: acc.sp / n,
            sm: acc.sm / n,
            a: acc.a / n,
            total: acc.total / n,
        }
    }
}

fn check_prob(prob: f64) -> Result<()> {
    if prob > 0.0 && prob < 1.0 {
        Ok(())
    } else {
        Err(Error::ProbabilityRange(prob))
    }
}

/// Binary cross entropy with the probability clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub fn bce(prob: f64, y: u8) -> Result<f64> {
    check_prob(prob)?;
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    Ok(if y == 1 { -p.ln() } else { -(1.0 - p).ln() })
}

/// d bce / d prob. Zero where the clamp is active.
pub fn bce_grad(prob: f64, y: u8) -> Result<f64> {
    check_prob(prob)?;
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&prob) {
        return Ok(0.0);
    }
    Ok(if y == 1 {
        -1.0 / prob
    } else {
        1.0 / (1.0 - prob)
    })
}

pub fn sparsity(lambda: &[f64]) -> f64 {
    lambda.iter().map(|l| l.abs()).sum()
}

pub fn sparsity_grad(lambda: &[f64]) -> Vec<f64> {
    lambda.iter().map(|l| l.signum()).collect()
}

pub fn smoothness(lambda: &[f64]) -> f64 {
    lambda.windows(2).map(|w| (w[0] - w[1]).powi(2)).sum()
}

pub fn smoothness_grad(lambda: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; lambda.len()];
    for t in 0..lambda.len().saturating_sub(1) {
        let diff = 2.0 * (lambda[t] - lambda[t + 1]);
        g[t] += diff;
        g[t + 1] -= diff;
    }
    g
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

pub fn alignment(lambda_a: &[f64], lambda_b: &[f64]) -> Result<f64> {
    check_lengths(lambda_a, lambda_b)?;
    Ok(lambda_a
        .iter()
        .zip(lambda_b)
        .map(|(a, b)| (a - b).powi(2))
        .sum())
}

/// Gradient of the alignment term w.r.t. `lambda_a`; the `lambda_b` gradient
/// is its negation.
pub fn alignment_grad(lambda_a: &[f64], lambda_b: &[f64]) -> Result<Vec<f64>> {
    check_lengths(lambda_a, lambda_b)?;
    Ok(lambda_a
        .iter()
        .zip(lambda_b)
        .map(|(a, b)| 2.0 * (a - b))
        .collect())
}

/// Outputs of one view that the objective reads.
#[derive(Debug, Clone, Copy)]
pub struct ViewOutputs<'a> {
    pub lambda: &'a [f64],
    pub prob: f64,
}

impl<'a> From<&'a ForwardTrace> for ViewOutputs<'a> {
    fn from(tr: &'a ForwardTrace) -> Self {
        Self {
            lambda: tr.lambda(),
            prob: tr.prob(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub d_lambda_a: Vec<f64>,
    pub d_lambda_b: Vec<f64>,
    pub d_prob_a: f64,
    pub d_prob_b: f64,
}

pub fn objective(a: ViewOutputs, b: ViewOutputs, y: u8, w: &LossWeights) -> Result<LossBreakdown> {
    check_lengths(a.lambda, b.lambda)?;
    let cl = 0.5 * (bce(a.prob, y)? + bce(b.prob, y)?);
    let sp = 0.5 * (sparsity(a.lambda) + sparsity(b.lambda));
    let sm = 0.5 * (smoothness(a.lambda) + smoothness(b.lambda));
    let al = alignment(a.lambda, b.lambda)?;
    Ok(LossBreakdown::compose(cl, sp, sm, al, w))
}

pub fn objective_grads(
    a: ViewOutputs,
    b: ViewOutputs,
    y: u8,
    w: &LossWeights,
) -> Result<LossGrads> {
    let align = alignment_grad(a.lambda, b.lambda)?;
    let view_grad = |lambda: &[f64], sign: f64| -> Vec<f64> {
        let sp = sparsity_grad(lambda);
        let sm = smoothness_grad(lambda);
        (0..lambda.len())
            .map(|t| 0.5 * w.alpha * sp[t] + 0.5 * w.beta * sm[t] + sign * w.gamma * align[t])
            .collect()
    };
    Ok(LossGrads {
        d_lambda_a: view_grad(a.lambda, 1.0),
        d_lambda_b: view_grad(b.lambda, -1.0),
        d_prob_a: 0.5 * bce_grad(a.prob, y)?,
        d_prob_b: 0.5 * bce_grad(b.prob, y)?,
    })
}

pub fn total_loss(
    trace_a: &ForwardTrace,
    trace_b: &ForwardTrace,
    y: u8,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    objective(trace_a.into(), trace_b.into(), y, w)
}

pub fn loss_grads(
    trace_a: &ForwardTrace,
    trace_b: &ForwardTrace,
    y: u8,
    w: &LossWeights,
) -> Result<LossGrads> {
    objective_grads(trace_a.into(), trace_b.into(), y, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bce_closed_forms() {
        assert!((bce(0.5, 1).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce(0.9, 0).unwrap() - std::f64::consts::LN_10).abs() < 1e-9);
        let near = bce(1.0 - 1e-7, 1).unwrap();
        assert!((near - 1e-7).abs() < 1e-12, "{near}");
        assert!(matches!(bce(1.0, 1), Err(Error::ProbabilityRange(_))));
        assert!(bce(0.0, 0).is_err());
        assert!(bce(f64::NAN, 0).is_err());
    }

    #[test]
    fn sparsity_values() {
        assert!((sparsity(&[0.2, 0.3, 0.5]) - 1.0).abs() < 1e-15);
        assert_eq!(sparsity(&[0.5; 8]), 4.0);
        assert!(sparsity(&[1e-12; 4]) < 1e-11);
        assert!(sparsity_grad(&[0.1, 0.9]).iter().all(|&g| g == 1.0));
    }

    #[test]
    fn smoothness_values() {
        assert_eq!(smoothness(&[0.3; 5]), 0.0);
        assert!((smoothness(&[0.1, 0.4, 0.2]) - 0.13).abs() < 1e-12);
        assert_eq!(smoothness(&[0.7]), 0.0);
        assert_eq!(smoothness_grad(&[0.7]), vec![0.0]);
    }

    #[test]
    fn alignment_values() {
        let a = [0.1, 0.8, 0.3];
        assert_eq!(alignment(&a, &a).unwrap(), 0.0);
        assert!((alignment(&[0.5, 0.5], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(
            alignment(&a, &[0.2, 0.2, 0.2]).unwrap(),
            alignment(&[0.2, 0.2, 0.2], &a).unwrap()
        );
        assert!(alignment(&a, &[0.1]).is_err());
    }

    fn view(l: &[f64], p: f64) -> ViewOutputs<'_> {
        ViewOutputs { lambda: l, prob: p }
    }

    #[test]
    fn identical_views_drop_gamma() {
        let l = [0.2, 0.6, 0.4];
        let w1 = LossWeights {
            alpha: 0.1,
            beta: 0.2,
            gamma: 0.0,
        };
        let w2 = LossWeights { gamma: 7.0, ..w1 };
        let b1 = objective(view(&l, 0.3), view(&l, 0.3), 1, &w1).unwrap();
        let b2 = objective(view(&l, 0.3), view(&l, 0.3), 1, &w2).unwrap();
        assert_eq!(b1.a, 0.0);
        assert_eq!(b1.total, b2.total);
        let g = objective_grads(view(&l, 0.3), view(&l, 0.3), 1, &w2).unwrap();
        let g0 = objective_grads(view(&l, 0.3), view(&l, 0.3), 1, &w1).unwrap();
        assert_eq!(g, g0);
    }

    #[test]
    fn zero_weights_leave_cl() {
        let w = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        };
        let b = objective(view(&[0.2, 0.9], 0.4), view(&[0.7, 0.1], 0.6), 0, &w).unwrap();
        assert_eq!(b.total, b.cl);
    }

    #[test]
    fn recomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let t = rng.random_range(1..20);
            let la: Vec<f64> = (0..t).map(|_| rng.random_range(0.01..0.99)).collect();
            let lb: Vec<f64> = (0..t).map(|_| rng.random_range(0.01..0.99)).collect();
            let (pa, pb) = (rng.random_range(0.01..0.99), rng.random_range(0.01..0.99));
            let y = rng.random_range(0..2u8);
            let w = LossWeights {
                alpha: rng.random_range(0.0..1.0),
                beta: rng.random_range(0.0..1.0),
                gamma: rng.random_range(0.0..1.0),
            };
            let b = objective(view(&la, pa), view(&lb, pb), y, &w).unwrap();
            let cl = (bce(pa, y).unwrap() + bce(pb, y).unwrap()) / 2.0;
            let sp = (sparsity(&la) + sparsity(&lb)) / 2.0;
            let sm = (smoothness(&la) + smoothness(&lb)) / 2.0;
            let a = alignment(&la, &lb).unwrap();
            let expect = cl + w.alpha * sp + w.beta * sm + w.gamma * a;
            assert!((b.total - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let eps = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let t = rng.random_range(1..12);
            let la: Vec<f64> = (0..t).map(|_| rng.random_range(0.05..0.95)).collect();
            let lb: Vec<f64> = (0..t).map(|_| rng.random_range(0.05..0.95)).collect();
            let (pa, pb) = (rng.random_range(0.05..0.95), rng.random_range(0.05..0.95));
            let y = rng.random_range(0..2u8);
            let w = LossWeights {
                alpha: 0.7,
                beta: 1.3,
                gamma: 0.9,
            };
            let f = |la: &[f64], lb: &[f64], pa: f64, pb: f64| {
                objective(view(la, pa), view(lb, pb), y, &w).unwrap().total
            };
            let g = objective_grads(view(&la, pa), view(&lb, pb), y, &w).unwrap();
            let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            for i in 0..t {
                let (mut p, mut m) = (la.clone(), la.clone());
                p[i] += eps;
                m[i] -= eps;
                let fd = (f(&p, &lb, pa, pb) - f(&m, &lb, pa, pb)) / (2.0 * eps);
                assert!(rel(fd, g.d_lambda_a[i]) < 1e-6);
                let (mut p, mut m) = (lb.clone(), lb.clone());
                p[i] += eps;
                m[i] -= eps;
                let fd = (f(&la, &p, pa, pb) - f(&la, &m, pa, pb)) / (2.0 * eps);
                assert!(rel(fd, g.d_lambda_b[i]) < 1e-6);
            }
            let fd = (f(&la, &lb, pa + eps, pb) - f(&la, &lb, pa - eps, pb)) / (2.0 * eps);
            assert!(rel(fd, g.d_prob_a) < 1e-6);
            let fd = (f(&la, &lb, pa, pb + eps) - f(&la, &lb, pa, pb - eps)) / (2.0 * eps);
            assert!(rel(fd, g.d_prob_b) < 1e-6);
        }
    }

    fn unit_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..0.999, 1..max_len)
    }

    proptest! {
        #[test]
        fn terms_nonnegative(l in unit_vec(30), p in 0.001f64..0.999, y in 0u8..2) {
            prop_assert!(bce(p, y).unwrap() >= 0.0);
            prop_assert!(sparsity(&l) >= 0.0);
            prop_assert!(smoothness(&l) >= 0.0);
        }

        #[test]
        fn smoothness_shift_invariant(l in unit_vec(30), c in -0.5f64..0.5) {
            let shifted: Vec<f64> = l.iter().map(|v| v + c).collect();
            prop_assert!((smoothness(&l) - smoothness(&shifted)).abs() < 1e-12);
        }

        #[test]
        fn alignment_symmetric(pair in (1usize..30).prop_flat_map(|n| (
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(0.0f64..1.0, n),
        ))) {
            let (a, b) = pair;
            prop_assert_eq!(alignment(&a, &b).unwrap(), alignment(&b, &a).unwrap());
            prop_assert_eq!(alignment(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn total_monotone_in_weights(l in unit_vec(12), p in 0.01f64..0.99, bump in 0.0f64..2.0) {
            let lb: Vec<f64> = l.iter().rev().copied().collect();
            let w = LossWeights { alpha: 0.1, beta: 0.1, gamma: 0.1 };
            let base = objective(view(&l, p), view(&lb, p), 1, &w).unwrap().total;
            for w2 in [
                LossWeights { alpha: w.alpha + bump, ..w },
                LossWeights { beta: w.beta + bump, ..w },
                LossWeights { gamma: w.gamma + bump, ..w },
            ] {
                prop_assert!(objective(view(&l, p), view(&lb, p), 1, &w2).unwrap().total >= base);
            }
        }
    }
}
