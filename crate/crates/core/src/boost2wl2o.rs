//! Second-order boosting with two weak learners.
//!
//! Each outer iteration alternates, for `inner` rounds, between fitting both
//! learners to curvature-corrected targets at the current step estimates and
//! re-searching the steps on the true training risk. The round with the
//! lowest risk is applied.
//!
//! The fitted learners absorb a factor of the step size (their targets scale
//! with `eps` or `delta`), and no rescaling is applied afterwards: the step
//! search works on the fitted functions as they are, so step bounds should be
//! wide enough to compensate.

use serde::{Deserialize, Serialize};

use crate::boost2wl::{derive_seed, Booster, Mode, TwoWlModel};
use crate::domain::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::mcloss::PseudoResiduals;
use crate::metrics::MetricKind;
use crate::scalar::Scalar;
use crate::stepsearch::StepConfig;
use crate::weaklearners::{MlpConfig, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Network on the unstructured modality.
    G,
    /// Tree on the structured modality.
    H,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoWl2oConfig {
    pub outer: usize,
    pub inner: usize,
    pub eps0: f64,
    pub delta0: f64,
    pub mode: Mode,
    pub mlp: MlpConfig,
    pub tree: TreeConfig,
    pub step: StepConfig,
    pub metric: MetricKind,
    pub seed: u64,
}

impl Default for TwoWl2oConfig {
    fn default() -> Self {
        TwoWl2oConfig {
            outer: 20,
            inner: 1,
            eps0: 0.1,
            delta0: 0.1,
            mode: Mode::Both,
            mlp: MlpConfig::default(),
            tree: TreeConfig::default(),
            step: StepConfig::default(),
            metric: MetricKind::F1,
            seed: 0,
        }
    }
}

impl TwoWl2oConfig {
    pub fn validate(&self) -> Result<()> {
        self.step.validate()?;
        if self.inner == 0 {
            return Err(Error::Config("inner iterations must be at least 1".into()));
        }
        if !(0.0..=self.step.eps_max).contains(&self.eps0) || !(0.0..=self.step.delta_max).contains(&self.delta0) {
            return Err(Error::Config(format!(
                "initial steps ({}, {}) must lie within the step bounds",
                self.eps0, self.delta0
            )));
        }
        Ok(())
    }
}

/// Regression targets for one learner family at steps `(eps, delta)`:
/// `eps w - eps^2/4 w~ - eps delta/2 w` for `g`, and the same with the roles of
/// `eps` and `delta` swapped for `h`.
pub fn second_order_targets<T: Scalar>(
    residuals: &PseudoResiduals<T>,
    eps: T,
    delta: T,
    family: Family,
) -> Result<Matrix<T>> {
    if eps < T::zero() || delta < T::zero() {
        return Err(Error::Domain("steps must be nonnegative".into()));
    }
    let own = match family {
        Family::G => eps,
        Family::H => delta,
    };
    let quarter = T::c(0.25);
    let half = T::c(0.5);
    let w_coef = own - half * eps * delta;
    let wt_coef = quarter * own * own;
    let w = &residuals.w;
    let mut out = Matrix::zeros(w.rows(), w.cols());
    for ((o, a), b) in out
        .as_mut_slice()
        .iter_mut()
        .zip(w.as_slice())
        .zip(residuals.w_tilde.as_slice())
    {
        *o = w_coef * *a - wt_coef * *b;
    }
    if !out.is_finite() {
        return Err(Error::Numeric("second-order targets overflowed".into()));
    }
    Ok(out)
}

pub fn train_2wl2o<T: Scalar>(
    train: &Dataset<T>,
    valid: Option<&Dataset<T>>,
    config: &TwoWl2oConfig,
) -> Result<TwoWlModel<T>> {
    config.validate()?;
    let mut b = Booster::new(train, valid, config.mode, config.metric)?;
    let pin = |e: T, d: T| {
        (
            if config.mode.uses_g() { e } else { T::zero() },
            if config.mode.uses_h() { d } else { T::zero() },
        )
    };
    for t in 0..config.outer {
        let outer = |b: &mut Booster<'_, T>| -> Result<()> {
            let res = PseudoResiduals::compute(&b.scores, &b.labels, &b.cb)?;
            let (mut eps, mut delta) = pin(T::c(config.eps0), T::c(config.delta0));
            let mut risks = Vec::with_capacity(config.inner);
            let mut best: Option<(f64, usize, crate::boost2wl::Fitted<T>, T, T)> = None;
            for j in 0..config.inner {
                let g_t = second_order_targets(&res, eps, delta, Family::G)?;
                let h_t = second_order_targets(&res, eps, delta, Family::H)?;
                let fitted = b.fit(&g_t, &h_t, &config.mlp, config.tree, derive_seed(config.seed, t, j))?;
                let (e, d, r) = b.search(&fitted, &config.step, derive_seed(config.seed ^ 0x57e9, t, j))?;
                let r64 = r.to_f64_lossy();
                risks.push(r64);
                if best.as_ref().is_none_or(|(br, ..)| r64 < *br) {
                    best = Some((r64, j, fitted, e, d));
                }
                (eps, delta) = pin(e, d);
            }
            let (_, j_star, fitted, e, d) = best.expect("at least one inner iteration");
            b.model.inner_risks.push(risks);
            b.commit(fitted, e, d, Some(j_star))
        };
        outer(&mut b).map_err(|e| e.at_iteration(t + 1))?;
    }
    Ok(b.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boost2wl::{train_2wl, TwoWlConfig};
    use crate::domain::{BimodalSample, Codebook};
    use crate::mcloss::{compute_w, compute_w_tilde};
    use crate::stepsearch::StepMode;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn residuals(w: &[[f64; 2]], wt: &[[f64; 2]]) -> PseudoResiduals<f64> {
        PseudoResiduals {
            w: Matrix::from_rows(w).unwrap(),
            w_tilde: Matrix::from_rows(wt).unwrap(),
            w_hat: vec![0.0; w.len()],
        }
    }

    #[test]
    fn hand_evaluated_target() {
        let r = residuals(&[[0.5, -0.5]], &[[1.0, -1.0]]);
        let t = second_order_targets(&r, 1.0, 0.0, Family::G).unwrap();
        assert_eq!(t.row(0), &[0.25, -0.25]);
    }

    #[test]
    fn zero_eps_gives_zero_g_targets() {
        let r = residuals(&[[0.5, -0.5], [0.2, 0.1]], &[[1.0, -1.0], [3.0, 4.0]]);
        let t = second_order_targets(&r, 0.0, 0.7, Family::G).unwrap();
        assert!(t.as_slice().iter().all(|&v| v == 0.0));
        assert!(second_order_targets(&r, -0.1, 0.0, Family::G).is_err());
    }

    #[test]
    fn equal_steps_give_equal_targets() {
        let r = residuals(&[[0.5, -0.5], [0.2, 0.1]], &[[1.0, -1.0], [3.0, 4.0]]);
        let g = second_order_targets(&r, 0.3, 0.3, Family::G).unwrap();
        let h = second_order_targets(&r, 0.3, 0.3, Family::H).unwrap();
        assert_eq!(g, h);
    }

    proptest! {
        #[test]
        fn unit_eps_reduces_to_w_minus_quarter_w_tilde(
            scores in prop::collection::vec(-3.0f64..3.0, 6),
            labels in prop::collection::vec(0usize..3, 2),
        ) {
            let cb = Codebook::new(3).unwrap();
            let s = Matrix::from_vec(2, 3, scores).unwrap();
            let res = PseudoResiduals::compute(&s, &labels, &cb).unwrap();
            let t = second_order_targets(&res, 1.0, 0.0, Family::G).unwrap();
            for i in 0..2 {
                let w = compute_w(s.row(i), labels[i], &cb).unwrap();
                let wt = compute_w_tilde(s.row(i), labels[i], &cb).unwrap();
                for k in 0..3 {
                    prop_assert!((t.get(i, k) - (w[k] - 0.25 * wt[k])).abs() < 1e-12);
                }
            }
        }
    }

    fn stump_data(n: usize, seed: u64) -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| {
                let x_s: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                let x_u: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let label = usize::from(x_s[0] > 0.0);
                BimodalSample { x_u, x_s, label }
            })
            .collect();
        Dataset::new(samples, 2, 3, 2).unwrap()
    }

    fn cfg(mode: Mode, outer: usize, inner: usize) -> TwoWl2oConfig {
        TwoWl2oConfig {
            outer,
            inner,
            mode,
            mlp: MlpConfig {
                hidden: vec![8],
                epochs: 3,
                batch_size: 16,
                ..MlpConfig::default()
            },
            tree: TreeConfig {
                max_depth: 1,
                min_samples_leaf: 1,
            },
            step: StepConfig {
                mode: StepMode::Grid,
                eps_max: 20.0,
                delta_max: 20.0,
                grid_points: 41,
                ..StepConfig::default()
            },
            seed: 5,
            ..TwoWl2oConfig::default()
        }
    }

    #[test]
    fn zero_outer_iterations() {
        let d = stump_data(30, 1);
        let m = train_2wl2o(&d, None, &cfg(Mode::Both, 0, 1)).unwrap();
        assert!(m.stages.is_empty());
        assert_eq!(m.initial_risk, 60.0);
    }

    #[test]
    fn one_inner_round_per_outer_iteration() {
        let d = stump_data(60, 2);
        let m = train_2wl2o(&d, None, &cfg(Mode::Both, 3, 1)).unwrap();
        assert_eq!(m.inner_risks.len(), 3);
        assert!(m.inner_risks.iter().all(|r| r.len() == 1));
        assert!(m.history.iter().all(|h| h.inner_j == Some(0)));
    }

    #[test]
    fn selected_inner_round_has_minimal_risk() {
        let d = stump_data(80, 3);
        let m = train_2wl2o(&d, None, &cfg(Mode::Both, 4, 3)).unwrap();
        let mut prev = m.initial_risk;
        for (rec, risks) in m.history.iter().zip(&m.inner_risks) {
            let j = rec.inner_j.unwrap();
            assert!(risks.iter().all(|r| risks[j] <= *r));
            assert!((rec.risk - risks[j]).abs() <= 1e-9 * rec.risk.max(1.0));
            assert!(rec.risk <= prev + 1e-9);
            prev = rec.risk;
        }
    }

    #[test]
    fn stump_rule_is_learned() {
        let d = stump_data(200, 4);
        let m = train_2wl2o(&d, None, &cfg(Mode::OnlyS, 5, 1)).unwrap();
        let f1 = MetricKind::F1.evaluate(&m.predict(&d).unwrap(), &d.labels(), 2).unwrap();
        assert_eq!(f1, 1.0);
    }

    #[test]
    fn second_order_learners_shrink_by_the_initial_step() {
        // At f = 0 with two classes, w~ = 2w, so the h-target is
        // (delta0 - delta0^2 / 2) w and the first stump is that multiple of the
        // first-order stump.
        let d = stump_data(100, 7);
        let c = cfg(Mode::OnlyS, 1, 1);
        let m = train_2wl2o(&d, None, &c).unwrap();
        let first = train_2wl(
            &d,
            None,
            &TwoWlConfig {
                iterations: 1,
                mode: Mode::OnlyS,
                mlp: c.mlp.clone(),
                tree: c.tree,
                step: c.step,
                metric: c.metric,
                seed: c.seed,
            },
        )
        .unwrap();
        let x = d.x_s();
        let h2 = m.stages[0].h.as_ref().unwrap().predict(&x).unwrap();
        let h1 = first.stages[0].h.as_ref().unwrap().predict(&x).unwrap();
        let factor = 0.1 - 0.01 / 2.0;
        for (a, b) in h2.as_slice().iter().zip(h1.as_slice()) {
            assert!((a - factor * b).abs() < 1e-12);
        }
    }

    #[test]
    fn initial_steps_must_be_in_bounds() {
        let mut c = cfg(Mode::Both, 1, 1);
        c.eps0 = 50.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.eps0 = 0.1;
        c.inner = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic() {
        let d = stump_data(50, 6);
        let c = cfg(Mode::Both, 2, 2);
        let a = serde_json::to_string(&train_2wl2o(&d, Some(&d), &c).unwrap()).unwrap();
        let b = serde_json::to_string(&train_2wl2o(&d, Some(&d), &c).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
