//! Multi-class exponential loss over unit codewords, its empirical risk, and
//! the per-sample pseudo-residuals that drive the two-learner boosters.
//!
//! For a score `f` and label `y_i` the loss is
//! `L = sum_k exp(-1/2 <f, y_i - y^k>)`. The residual quantities are
//!
//! * `w_i  = 1/2 sum_k (y_i - y^k) exp(1/2 (<f, y^k> - <f, y_i>))`
//! * `w~_i = sum_k (y_i - y^k) exp(-1/4 <f, y_i - y^k>)`
//! * `w^_i = sum_k ||y_i - y^k||^2 exp(1/2 (<f, y^k> - <f, y_i>))`
//!
//! Every exponent is formed as a single difference of inner products before
//! exponentiation, so `exp(-<f,y_i>/2)` and `exp(<f,y^k>/2)` are never
//! materialised separately and large scores do not overflow spuriously.
//!
//! Risk is the sum of per-sample losses (not the mean); the mean is reported
//! alongside it.

use crate::domain::{Codebook, Matrix};
use crate::error::{Error, Result};
use crate::scalar::{dot, squared_norm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskReport<T> {
    pub total_risk: T,
    pub mean_loss: T,
}

/// `w`, `w~` and `w^` for every sample at the current scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoResiduals<T> {
    /// n x M.
    pub w: Matrix<T>,
    /// n x M.
    pub w_tilde: Matrix<T>,
    pub w_hat: Vec<T>,
}

fn check_input<T: Scalar>(f_x: &[T], label: usize, codebook: &Codebook<T>) -> Result<()> {
    codebook.check_len("score vector", f_x.len())?;
    if label >= codebook.num_classes() {
        return Err(Error::Domain(format!(
            "label {label} out of range for {} classes",
            codebook.num_classes()
        )));
    }
    if f_x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("score vector has non-finite entries".into()));
    }
    Ok(())
}

fn check_finite<T: Scalar>(v: T, what: &str) -> Result<T> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} overflowed")))
    }
}

pub fn loss<T: Scalar>(f_x: &[T], label: usize, codebook: &Codebook<T>) -> Result<T> {
    check_input(f_x, label, codebook)?;
    let half = T::c(0.5);
    let own = dot(f_x, codebook.codeword(label));
    let mut total = T::zero();
    for y_k in codebook.codewords() {
        total += (-half * (own - dot(f_x, y_k))).exp();
    }
    check_finite(total, "loss")
}

/// Empirical risk of an `n x M` score matrix.
pub fn risk<T: Scalar>(
    scores: &Matrix<T>,
    labels: &[usize],
    codebook: &Codebook<T>,
) -> Result<RiskReport<T>> {
    if scores.rows() != labels.len() {
        return Err(Error::dim("risk labels", scores.rows(), labels.len()));
    }
    let mut total = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        total += loss(scores.row(i), y, codebook)?;
    }
    let n = labels.len().max(1);
    Ok(RiskReport {
        total_risk: total,
        mean_loss: total / T::from_usize_lossy(n),
    })
}

pub fn compute_w<T: Scalar>(f_x: &[T], label: usize, codebook: &Codebook<T>) -> Result<Vec<T>> {
    check_input(f_x, label, codebook)?;
    let half = T::c(0.5);
    let y_i = codebook.codeword(label);
    let own = dot(f_x, y_i);
    let mut out = vec![T::zero(); f_x.len()];
    for y_k in codebook.codewords() {
        let weight = half * (half * (dot(f_x, y_k) - own)).exp();
        for ((o, a), b) in out.iter_mut().zip(y_i).zip(y_k) {
            *o += (*a - *b) * weight;
        }
    }
    for v in &out {
        check_finite(*v, "w")?;
    }
    Ok(out)
}

pub fn compute_w_tilde<T: Scalar>(
    f_x: &[T],
    label: usize,
    codebook: &Codebook<T>,
) -> Result<Vec<T>> {
    check_input(f_x, label, codebook)?;
    let quarter = T::c(0.25);
    let y_i = codebook.codeword(label);
    let own = dot(f_x, y_i);
    let mut out = vec![T::zero(); f_x.len()];
    for y_k in codebook.codewords() {
        let weight = (-quarter * (own - dot(f_x, y_k))).exp();
        for ((o, a), b) in out.iter_mut().zip(y_i).zip(y_k) {
            *o += (*a - *b) * weight;
        }
    }
    for v in &out {
        check_finite(*v, "w_tilde")?;
    }
    Ok(out)
}

pub fn compute_w_hat<T: Scalar>(f_x: &[T], label: usize, codebook: &Codebook<T>) -> Result<T> {
    check_input(f_x, label, codebook)?;
    let half = T::c(0.5);
    let y_i = codebook.codeword(label);
    let own = dot(f_x, y_i);
    let mut total = T::zero();
    for y_k in codebook.codewords() {
        let dist: T = y_i
            .iter()
            .zip(y_k)
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum();
        total += dist * (half * (dot(f_x, y_k) - own)).exp();
    }
    check_finite(total, "w_hat")
}

impl<T: Scalar> PseudoResiduals<T> {
    pub fn compute(scores: &Matrix<T>, labels: &[usize], codebook: &Codebook<T>) -> Result<Self> {
        let n = scores.rows();
        let m = codebook.num_classes();
        if labels.len() != n {
            return Err(Error::dim("residual labels", n, labels.len()));
        }
        codebook.check_len("score matrix columns", scores.cols())?;
        let mut w = Matrix::zeros(n, m);
        let mut w_tilde = Matrix::zeros(n, m);
        let mut w_hat = Vec::with_capacity(n);
        for (i, &y) in labels.iter().enumerate() {
            let f = scores.row(i);
            w.row_mut(i).copy_from_slice(&compute_w(f, y, codebook)?);
            w_tilde
                .row_mut(i)
                .copy_from_slice(&compute_w_tilde(f, y, codebook)?);
            w_hat.push(compute_w_hat(f, y, codebook)?);
        }
        Ok(PseudoResiduals { w, w_tilde, w_hat })
    }

    pub fn len(&self) -> usize {
        self.w_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w_hat.is_empty()
    }
}

/// `sum_i <g(x_i), w_i>`: the negated derivative of the risk along a learner's outputs.
pub fn first_order_decrease<T: Scalar>(outputs: &Matrix<T>, w: &Matrix<T>) -> Result<T> {
    if outputs.rows() != w.rows() {
        return Err(Error::dim("learner outputs rows", w.rows(), outputs.rows()));
    }
    if outputs.cols() != w.cols() {
        return Err(Error::dim("learner outputs cols", w.cols(), outputs.cols()));
    }
    Ok(outputs
        .iter_rows()
        .zip(w.iter_rows())
        .fold(T::zero(), |acc, (g, w)| acc + dot(g, w)))
}

/// Quadratic model of `R(f + eps g + delta h)` built from the printed second
/// and mixed partial derivatives (kept as written, including the
/// `<g,g> + 2<g,w~> + w^` expansion and the `<g + h, w/2>` mixed term).
pub fn risk_quadratic_surrogate<T: Scalar>(
    g_outputs: &Matrix<T>,
    h_outputs: &Matrix<T>,
    residuals: &PseudoResiduals<T>,
    base_risk: T,
    eps: T,
    delta: T,
) -> Result<T> {
    let n = residuals.len();
    for (what, m) in [("g outputs", g_outputs), ("h outputs", h_outputs)] {
        if m.rows() != n {
            return Err(Error::dim(what, n, m.rows()));
        }
        if m.cols() != residuals.w.cols() {
            return Err(Error::dim(what, residuals.w.cols(), m.cols()));
        }
    }
    let two = T::c(2.0);
    let quarter = T::c(0.25);
    let half = T::c(0.5);
    let mut gw = T::zero();
    let mut hw = T::zero();
    let mut g_curv = T::zero();
    let mut h_curv = T::zero();
    for i in 0..n {
        let g = g_outputs.row(i);
        let h = h_outputs.row(i);
        let w = residuals.w.row(i);
        let wt = residuals.w_tilde.row(i);
        let wh = residuals.w_hat[i];
        gw += dot(g, w);
        hw += dot(h, w);
        g_curv += squared_norm(g) + two * dot(g, wt) + wh;
        h_curv += squared_norm(h) + two * dot(h, wt) + wh;
    }
    Ok(base_risk - eps * gw - delta * hw
        + eps * eps * half * quarter * g_curv
        + delta * delta * half * quarter * h_curv
        + eps * delta * half * (gw + hw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cb(m: usize) -> Codebook<f64> {
        Codebook::new(m).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn loss_examples() {
        for y in 0..3 {
            assert_eq!(loss(&[0.0, 0.0, 0.0], y, &cb(3)).unwrap(), 3.0);
        }
        close(loss(&[2.0, 0.0], 0, &cb(2)).unwrap(), 1.367_879_441_171_442_2, 1e-12);
        close(loss(&[-2.0, 2.0], 0, &cb(2)).unwrap(), 8.389_056_098_930_65, 1e-12);
        assert!(matches!(
            loss(&[f64::NAN, 0.0], 0, &cb(2)),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn risk_examples() {
        let scores = Matrix::zeros(10, 2);
        let r = risk(&scores, &[0, 1, 0, 1, 1, 0, 0, 1, 1, 1], &cb(2)).unwrap();
        assert_eq!(r.total_risk, 20.0);
        assert_eq!(r.mean_loss, 2.0);
        let one = Matrix::from_rows(&[vec![2.0, 0.0]]).unwrap();
        assert_eq!(
            risk(&one, &[0], &cb(2)).unwrap().total_risk,
            loss(&[2.0, 0.0], 0, &cb(2)).unwrap()
        );
    }

    #[test]
    fn w_examples() {
        assert_eq!(compute_w(&[0.0, 0.0], 0, &cb(2)).unwrap(), vec![0.5, -0.5]);
        assert_eq!(
            compute_w(&[0.0; 3], 1, &cb(3)).unwrap(),
            vec![-0.5, 1.0, -0.5]
        );
        let w = compute_w(&[2.0, 0.0], 0, &cb(2)).unwrap();
        let e = 0.5 * (-1.0f64).exp();
        close(w[0], e, 1e-15);
        close(w[1], -e, 1e-15);
    }

    #[test]
    fn w_tilde_examples() {
        assert_eq!(compute_w_tilde(&[0.0, 0.0], 0, &cb(2)).unwrap(), vec![1.0, -1.0]);
        assert_eq!(
            compute_w_tilde(&[0.0; 3], 0, &cb(3)).unwrap(),
            vec![2.0, -1.0, -1.0]
        );
        let w = compute_w_tilde(&[2.0, 0.0], 0, &cb(2)).unwrap();
        close(w[0], 0.606_530_659_712_633_4, 1e-15);
        close(w[1], -0.606_530_659_712_633_4, 1e-15);
    }

    #[test]
    fn w_hat_examples() {
        assert_eq!(compute_w_hat(&[0.0; 3], 2, &cb(3)).unwrap(), 4.0);
        assert_eq!(compute_w_hat(&[0.0; 2], 1, &cb(2)).unwrap(), 2.0);
        close(
            compute_w_hat(&[2.0, 0.0], 0, &cb(2)).unwrap(),
            0.735_758_882_342_884_7,
            1e-15,
        );
    }

    #[test]
    fn large_scores_do_not_overflow() {
        // exp(-<f,y_i>/2) alone would overflow here; the combined exponent is 0.
        let f = [-1500.0, -1500.0];
        let w = compute_w(&f, 0, &cb(2)).unwrap();
        assert_eq!(w, vec![0.5, -0.5]);
        assert_eq!(compute_w_hat(&f, 0, &cb(2)).unwrap(), 2.0);
    }

    #[test]
    fn first_order_decrease_trivial_cases() {
        let w = Matrix::from_rows(&[vec![0.5, -0.5], vec![-0.25, 0.25]]).unwrap();
        let zero = Matrix::zeros(2, 2);
        assert_eq!(first_order_decrease(&zero, &w).unwrap(), 0.0);
        assert_eq!(first_order_decrease(&w, &w).unwrap(), 0.5 + 0.125);
        assert!(first_order_decrease(&Matrix::zeros(2, 3), &w).is_err());
    }

    #[test]
    fn surrogate_trivial_cases() {
        let scores = Matrix::from_rows(&[vec![0.3, -0.1, 0.2], vec![0.0, 1.0, -1.0]]).unwrap();
        let labels = [2, 0];
        let res = PseudoResiduals::compute(&scores, &labels, &cb(3)).unwrap();
        let g = Matrix::from_rows(&[vec![0.1, 0.2, 0.3], vec![-0.3, 0.0, 0.4]]).unwrap();
        let base = 7.25;
        assert_eq!(
            risk_quadratic_surrogate(&g, &g, &res, base, 0.0, 0.0).unwrap(),
            base
        );
        let zero = Matrix::zeros(2, 3);
        let sum_hat: f64 = res.w_hat.iter().sum();
        close(
            risk_quadratic_surrogate(&zero, &zero, &res, base, 1.0, 1.0).unwrap(),
            base + 0.5 * 0.25 * sum_hat + 0.5 * 0.25 * sum_hat,
            1e-12,
        );
    }

    #[test]
    fn w_sums_to_zero_at_origin() {
        for m in 2..7 {
            for y in 0..m {
                let w = compute_w(&vec![0.0; m], y, &cb(m)).unwrap();
                assert_eq!(w.iter().sum::<f64>(), 0.0);
            }
        }
    }

    #[test]
    fn residuals_in_f32() {
        let c = Codebook::<f32>::new(2).unwrap();
        assert_eq!(compute_w(&[0.0f32, 0.0], 0, &c).unwrap(), vec![0.5f32, -0.5]);
        assert_eq!(compute_w_hat(&[0.0f32, 0.0], 0, &c).unwrap(), 2.0f32);
    }

    proptest::proptest! {
        #[test]
        fn loss_is_at_least_one(
            f in proptest::collection::vec(-20.0f64..20.0, 4),
            y in 0usize..4,
        ) {
            proptest::prop_assert!(loss(&f, y, &cb(4)).unwrap() >= 1.0);
        }
    }

    #[test]
    fn surrogate_linear_coefficients_match_first_order_decrease() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, m) = (12, 3);
        let cbk = cb(m);
        let rand_mat = |rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect();
            Matrix::from_vec(n, m, v).unwrap()
        };
        let scores = rand_mat(&mut rng);
        let g = rand_mat(&mut rng);
        let h = rand_mat(&mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        let res = PseudoResiduals::compute(&scores, &labels, &cbk).unwrap();
        let base = risk(&scores, &labels, &cbk).unwrap().total_risk;
        let s = 1e-3;
        // Odd part in eps isolates the linear coefficient exactly for a quadratic.
        let odd_eps = (risk_quadratic_surrogate(&g, &h, &res, base, s, 0.0).unwrap()
            - risk_quadratic_surrogate(&g, &h, &res, base, -s, 0.0).unwrap())
            / (2.0 * s);
        let odd_delta = (risk_quadratic_surrogate(&g, &h, &res, base, 0.0, s).unwrap()
            - risk_quadratic_surrogate(&g, &h, &res, base, 0.0, -s).unwrap())
            / (2.0 * s);
        close(-odd_eps, first_order_decrease(&g, &res.w).unwrap(), 1e-9);
        close(-odd_delta, first_order_decrease(&h, &res.w).unwrap(), 1e-9);
    }
}
