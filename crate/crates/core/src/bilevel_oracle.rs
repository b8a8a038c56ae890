//! Exact and approximate hypergradients on quadratic bilevel problems.
//!
//! Every task loss is `L(θ) = ½ θᵀAθ − bᵀθ` with `A` symmetric positive
//! semi-definite. The inner problem minimizes `Σ w_i L_i`, so `θ*(w)` solves
//! `A(w) θ = b(w)` and the total Hessian is `A(w)` everywhere. The outer
//! objective is a validation quadratic of the same form.
//!
//! Hypergradients are reported in the implicit-function-theorem sign
//! convention `∂L_val(θ*(w))/∂w_i = −∇L_valᵀ A(w)⁻¹ ∇L_i`, which the
//! finite-difference oracle confirms. The approximations are negated to the
//! same convention so values are directly comparable.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Prng, StreamLabel};

/// Largest accepted condition number of `A(w)`.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTaskSet {
    /// Task matrices, end task first.
    a: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
    a_val: DMatrix<f64>,
    b_val: DVector<f64>,
    weights: Vec<f64>,
}

fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(Error::Shape(format!("{what} is {}x{}", m.nrows(), m.ncols())));
    }
    if (m - m.transpose()).amax() > 1e-12 {
        return Err(Error::Invalid(format!("{what} is not symmetric")));
    }
    let min = SymmetricEigen::new(m.clone()).eigenvalues.min();
    if min < -1e-10 * m.amax().max(1.0) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(())
}

impl QuadraticTaskSet {
    pub fn new(
        a: Vec<DMatrix<f64>>,
        b: Vec<DVector<f64>>,
        a_val: DMatrix<f64>,
        b_val: DVector<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() || a.len() != weights.len() {
            return Err(Error::Invalid(format!(
                "{} matrices, {} vectors, {} weights",
                a.len(),
                b.len(),
                weights.len()
            )));
        }
        let d = a_val.nrows();
        if d == 0 || b_val.len() != d {
            return Err(Error::Shape("validation pair".into()));
        }
        for (i, (ai, bi)) in a.iter().zip(&b).enumerate() {
            if ai.nrows() != d || bi.len() != d {
                return Err(Error::Shape(format!("task {i} has the wrong dimension")));
            }
            check_psd(ai, &format!("A_{i}"))?;
        }
        check_psd(&a_val, "A_val")?;
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Invalid(format!("weights must be positive, got {weights:?}")));
        }
        let q = QuadraticTaskSet { a, b, a_val, b_val, weights };
        condition(&q.total_matrix(&q.weights)?)?;
        Ok(q)
    }

    pub fn dim(&self) -> usize {
        self.a_val.nrows()
    }

    /// End task plus auxiliary tasks.
    pub fn num_tasks(&self) -> usize {
        self.a.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn task(&self, i: usize) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.a[i], &self.b[i])
    }

    pub fn validation(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.a_val, &self.b_val)
    }

    pub fn total_matrix(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        self.check_weights(w)?;
        let d = self.dim();
        Ok(self.a.iter().zip(w).fold(DMatrix::zeros(d, d), |acc, (a, wi)| acc + a * *wi))
    }

    pub fn total_vector(&self, w: &[f64]) -> Result<DVector<f64>> {
        self.check_weights(w)?;
        Ok(self.b.iter().zip(w).fold(DVector::zeros(self.dim()), |acc, (b, wi)| acc + b * *wi))
    }

    fn check_weights(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.a.len() {
            return Err(Error::Invalid(format!("{} weights for {} tasks", w.len(), self.a.len())));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("task weights".into()));
        }
        Ok(())
    }

    pub fn task_grad(&self, i: usize, theta: &DVector<f64>) -> DVector<f64> {
        &self.a[i] * theta - &self.b[i]
    }

    pub fn val_grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.a_val * theta - &self.b_val
    }

    pub fn val_loss(&self, theta: &DVector<f64>) -> f64 {
        0.5 * theta.dot(&(&self.a_val * theta)) - self.b_val.dot(theta)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.a.len() {
            return Err(Error::Unknown(format!("task index {i}")));
        }
        Ok(())
    }
}

/// Condition number of a symmetric matrix, failing when it is not positive
/// definite or too ill-conditioned to solve reliably.
pub fn condition(m: &DMatrix<f64>) -> Result<f64> {
    let ev = SymmetricEigen::new(m.clone()).eigenvalues;
    let (lo, hi) = (ev.min(), ev.max());
    if lo <= 1e-9 {
        return Err(Error::NotPositiveDefinite);
    }
    let c = hi / lo;
    if c > MAX_CONDITION {
        return Err(Error::IllConditioned(c));
    }
    Ok(c)
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    condition(m)?;
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.solve(rhs))
}

/// Minimizer of the weighted inner objective.
pub fn solve_inner(q: &QuadraticTaskSet, w: &[f64]) -> Result<DVector<f64>> {
    solve_spd(&q.total_matrix(w)?, &q.total_vector(w)?)
}

/// `−∇L_val(θ*)ᵀ A(w)⁻¹ ∇L_i(θ*)`.
pub fn exact_hypergradient(q: &QuadraticTaskSet, w: &[f64], i: usize) -> Result<f64> {
    q.check_index(i)?;
    let theta = solve_inner(q, w)?;
    let h = q.total_matrix(w)?;
    let v = solve_spd(&h, &q.task_grad(i, &theta))?;
    Ok(-q.val_grad(&theta).dot(&v))
}

/// Central difference of `L_val(θ*(w))` in `w_i` with step `h`.
pub fn finite_difference_hypergradient(q: &QuadraticTaskSet, w: &[f64], i: usize, h: f64) -> Result<f64> {
    q.check_index(i)?;
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("step {h}")));
    }
    let at = |delta: f64| -> Result<f64> {
        let mut wp = w.to_vec();
        wp[i] += delta;
        Ok(q.val_loss(&solve_inner(q, &wp)?))
    };
    Ok((at(h)? - at(-h)?) / (2.0 * h))
}

/// Point at which the identity-Hessian approximation is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ProxyMode {
    /// The inner optimum itself.
    Exact,
    /// `steps` gradient-descent steps on the inner objective with step size
    /// `1/λ_max`, from a standard normal start drawn from `(seed, oracle, 0)`.
    MetaHead { steps: usize, seed: u64 },
}

/// Partially converged inner iterate used by [`ProxyMode::MetaHead`].
pub fn descent_proxy(q: &QuadraticTaskSet, w: &[f64], steps: usize, seed: u64) -> Result<DVector<f64>> {
    let h = q.total_matrix(w)?;
    let bw = q.total_vector(w)?;
    condition(&h)?;
    let lr = 1.0 / SymmetricEigen::new(h.clone()).eigenvalues.max();
    let mut rng = Prng::new(seed, StreamLabel::Oracle, 0);
    let mut theta = DVector::from_fn(q.dim(), |_, _| rng.normal());
    for _ in 0..steps {
        theta -= (&h * &theta - &bw) * lr;
    }
    Ok(theta)
}

/// `−∇L_val(θp)ᵀ ∇L_i(θp)`: the hypergradient with the inverse Hessian
/// replaced by the identity.
pub fn identity_hessian_approx(q: &QuadraticTaskSet, w: &[f64], i: usize, proxy: ProxyMode) -> Result<f64> {
    q.check_index(i)?;
    let theta = match proxy {
        ProxyMode::Exact => solve_inner(q, w)?,
        ProxyMode::MetaHead { steps, seed } => descent_proxy(q, w, steps, seed)?,
    };
    Ok(-q.val_grad(&theta).dot(&q.task_grad(i, &theta)))
}

/// `−β ∇L_i(θ_t)ᵀ ∇L_val(θ_t)` at an arbitrary iterate.
pub fn one_step_approx(q: &QuadraticTaskSet, theta: &DVector<f64>, i: usize, beta: f64) -> Result<f64> {
    q.check_index(i)?;
    if theta.len() != q.dim() {
        return Err(Error::Shape(format!("iterate of length {}", theta.len())));
    }
    if !(beta > 0.0) {
        return Err(Error::Invalid(format!("beta {beta}")));
    }
    Ok(-beta * q.task_grad(i, theta).dot(&q.val_grad(theta)))
}

/// `Σ_{j=0}^{k} (I − H)^j`.
pub fn neumann_inverse(h: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let d = h.nrows();
    if h.ncols() != d {
        return Err(Error::Shape("square matrix expected".into()));
    }
    if (h - h.transpose()).amax() > 1e-12 {
        return Err(Error::Invalid("matrix is not symmetric".into()));
    }
    let step = DMatrix::identity(d, d) - h;
    let mut term = DMatrix::identity(d, d);
    let mut sum = term.clone();
    for _ in 0..k {
        term = &term * &step;
        sum += &term;
    }
    Ok(sum)
}

/// Frobenius distance between the truncated series and the true inverse.
pub fn neumann_error(h: &DMatrix<f64>, k: usize) -> Result<f64> {
    let inv = h.clone().try_inverse().ok_or(Error::NotPositiveDefinite)?;
    Ok((neumann_inverse(h, k)? - inv).norm())
}

fn random_orthogonal(d: usize, rng: &mut Prng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.normal());
    g.qr().q()
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn sym_power(m: &DMatrix<f64>, p: f64) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let diag = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.powf(p)));
    symmetrize(&e.eigenvectors * diag * e.eigenvectors.transpose())
}

/// Random instance with `1 + n_aux` tasks whose total Hessian at the drawn
/// weights has its spectrum spread over `[lo, hi]` (both ends included).
/// Task matrices are full-rank positive definite, vectors standard normal,
/// weights uniform in `[0.5, 1.5]`. All draws come from `(seed, oracle, 1)`.
pub fn random_instance(seed: u64, d: usize, n_aux: usize, lo: f64, hi: f64) -> Result<QuadraticTaskSet> {
    if d == 0 || !(0.0 < lo && lo <= hi) {
        return Err(Error::Invalid(format!("instance d={d}, spectrum [{lo}, {hi}]")));
    }
    let mut rng = Prng::new(seed, StreamLabel::Oracle, 1);
    let n = 1 + n_aux;
    let weights: Vec<f64> = (0..n).map(|_| rng.uniform(0.5, 1.5)).collect();
    let mut raw = Vec::with_capacity(n);
    for _ in 0..n {
        let g = DMatrix::from_fn(d, d, |_, _| rng.normal());
        raw.push(symmetrize(&g * g.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1));
    }
    let total = raw.iter().zip(&weights).fold(DMatrix::zeros(d, d), |acc, (a, w)| acc + a * *w);
    let spectrum: Vec<f64> = (0..d)
        .map(|k| if d == 1 { lo } else { lo + (hi - lo) * k as f64 / (d - 1) as f64 })
        .collect();
    let q = random_orthogonal(d, &mut rng);
    let target_sqrt = symmetrize(&q * DMatrix::from_diagonal(&DVector::from_iterator(d, spectrum.iter().map(|v| v.sqrt()))) * q.transpose());
    let t = &target_sqrt * sym_power(&total, -0.5);
    let a: Vec<DMatrix<f64>> = raw.into_iter().map(|m| symmetrize(&t * m * t.transpose())).collect();
    let b: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_fn(d, |_, _| rng.normal())).collect();
    let gv = DMatrix::from_fn(d, d, |_, _| rng.normal());
    let a_val = symmetrize(&gv * gv.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1);
    let b_val = DVector::from_fn(d, |_, _| rng.normal());
    QuadraticTaskSet::new(a, b, a_val, b_val, weights)
}

/// The one-dimensional instance `L* = θ²`, `L₁ = (θ−1)²`, `L_val = (θ−1)²`
/// at weights `(½, ½)`, written as `½Aθ² − bθ` up to constants.
pub fn one_dimensional_instance() -> QuadraticTaskSet {
    let s = |v: f64| DMatrix::from_element(1, 1, v);
    let v = |x: f64| DVector::from_element(1, x);
    QuadraticTaskSet::new(vec![s(2.0), s(2.0)], vec![v(0.0), v(2.0)], s(2.0), v(2.0), vec![0.5, 0.5])
        .expect("valid instance")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn identity_system_solves_to_b() {
        let q = QuadraticTaskSet::new(
            vec![DMatrix::identity(2, 2)],
            vec![DVector::from_vec(vec![1.0, 2.0])],
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            vec![1.0],
        )
        .unwrap();
        assert_eq!(solve_inner(&q, &[1.0]).unwrap().as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn one_dimensional_closed_form() {
        let q = one_dimensional_instance();
        assert!((solve_inner(&q, &[0.5, 0.5]).unwrap()[0] - 0.5).abs() < 1e-15);
        assert!((exact_hypergradient(&q, &[0.5, 0.5], 1).unwrap() + 0.5).abs() < 1e-8);
        let fd = finite_difference_hypergradient(&q, &[0.5, 0.5], 1, 1e-5).unwrap();
        assert!((fd + 0.5).abs() < 1e-8);
    }

    #[test]
    fn weight_scaling_keeps_the_optimum() {
        let q = random_instance(4, 5, 2, 0.5, 2.0).unwrap();
        let w = q.weights().to_vec();
        let a = solve_inner(&q, &w).unwrap();
        let b = solve_inner(&q, &w.iter().map(|x| x * 3.7).collect::<Vec<_>>()).unwrap();
        assert!((a - b).amax() < 1e-10);
    }

    #[test]
    fn end_task_alone_at_its_optimum_has_zero_hypergradient() {
        let q0 = random_instance(9, 4, 0, 0.5, 2.0).unwrap();
        let (a, b) = q0.task(0);
        let q = QuadraticTaskSet::new(vec![a.clone()], vec![b.clone()], a.clone(), b.clone(), vec![1.0]).unwrap();
        assert!(exact_hypergradient(&q, &[1.0], 0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn exact_matches_finite_differences_on_random_instances() {
        for seed in 0..40 {
            let d = 1 + (seed as usize % 10);
            let n = seed as usize % 4;
            let q = random_instance(seed, d, n, 0.5, 4.0).unwrap();
            let w = q.weights().to_vec();
            for i in 0..q.num_tasks() {
                let e = exact_hypergradient(&q, &w, i).unwrap();
                let f = finite_difference_hypergradient(&q, &w, i, 1e-5).unwrap();
                assert!(rel(e, f) < 1e-6 || (e - f).abs() < 1e-9, "seed {seed} task {i}: {e} vs {f}");
            }
        }
    }

    #[test]
    fn generated_spectrum_is_as_requested() {
        let q = random_instance(1, 6, 3, 0.5, 2.0).unwrap();
        let ev = SymmetricEigen::new(q.total_matrix(q.weights()).unwrap()).eigenvalues;
        assert!((ev.min() - 0.5).abs() < 1e-9 && (ev.max() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn identity_hessian_is_exact_when_the_hessian_is_identity() {
        let q = random_instance(3, 5, 2, 1.0, 1.0).unwrap();
        let w = q.weights().to_vec();
        for i in 0..3 {
            let e = exact_hypergradient(&q, &w, i).unwrap();
            let a = identity_hessian_approx(&q, &w, i, ProxyMode::Exact).unwrap();
            assert!((e - a).abs() < 1e-12);
            let theta = solve_inner(&q, &w).unwrap();
            assert!((one_step_approx(&q, &theta, i, 1.0).unwrap() - a).abs() < 1e-12);
        }
    }

    #[test]
    fn large_eigenvalue_breaks_the_identity_approximation() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 100.0]));
        let q = QuadraticTaskSet::new(
            vec![h.clone(), DMatrix::zeros(2, 2)],
            vec![DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![0.1, 1.0])],
            h,
            DVector::from_vec(vec![0.2, 3.0]),
            vec![1.0, 1.0],
        )
        .unwrap();
        let e = exact_hypergradient(&q, &[1.0, 1.0], 1).unwrap();
        let a = identity_hessian_approx(&q, &[1.0, 1.0], 1, ProxyMode::Exact).unwrap();
        assert!(rel(a, e) > 0.5, "{a} vs {e}");
    }

    #[test]
    fn one_step_orthogonality_and_linearity() {
        let q = random_instance(5, 3, 1, 0.5, 2.0).unwrap();
        let t = DVector::from_vec(vec![0.3, -0.2, 1.0]);
        let v1 = one_step_approx(&q, &t, 1, 1.0).unwrap();
        assert!((one_step_approx(&q, &t, 1, 2.0).unwrap() - 2.0 * v1).abs() < 1e-12);
        let q2 = QuadraticTaskSet::new(
            vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)],
            vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])],
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![1.0, 0.0]),
            vec![1.0, 1.0],
        )
        .unwrap();
        // at θ = 0: ∇L_1 = (0,-1), ∇L_val = (-1,0)
        assert_eq!(one_step_approx(&q2, &DVector::zeros(2), 1, 1.0).unwrap(), 0.0);
        assert!(one_step_approx(&q2, &t.rows(0, 2).into(), 1, 0.0).is_err());
    }

    #[test]
    fn meta_head_proxy_converges_to_the_exact_proxy() {
        let q = random_instance(8, 4, 2, 0.5, 2.0).unwrap();
        let w = q.weights().to_vec();
        let exact = identity_hessian_approx(&q, &w, 2, ProxyMode::Exact).unwrap();
        let far = identity_hessian_approx(&q, &w, 2, ProxyMode::MetaHead { steps: 2000, seed: 1 }).unwrap();
        assert!((exact - far).abs() < 1e-9);
    }

    #[test]
    fn neumann_series_behaviour() {
        let id = DMatrix::<f64>::identity(3, 3);
        for k in [0, 1, 7] {
            assert_eq!(neumann_inverse(&id, k).unwrap(), id);
        }
        let q = random_instance(2, 6, 1, 0.3, 1.8).unwrap();
        let h = q.total_matrix(q.weights()).unwrap();
        let errs: Vec<f64> = [0, 1, 5, 20].iter().map(|&k| neumann_error(&h, k).unwrap()).collect();
        assert!(errs.windows(2).all(|p| p[1] < p[0]), "{errs:?}");
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.5]));
        let errs: Vec<f64> = [0, 1, 5, 20].iter().map(|&k| neumann_error(&bad, k).unwrap()).collect();
        assert!(errs.windows(2).all(|p| p[1] > p[0]), "{errs:?}");
    }

    #[test]
    fn invalid_instances_are_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let v = DVector::zeros(2);
        assert!(QuadraticTaskSet::new(vec![m], vec![v.clone()], DMatrix::identity(2, 2), v.clone(), vec![1.0]).is_err());
        let sing = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(
            QuadraticTaskSet::new(vec![sing.clone()], vec![v.clone()], sing.clone(), v.clone(), vec![1.0]),
            Err(Error::NotPositiveDefinite)
        ));
        let ill = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-13]));
        assert!(matches!(condition(&(ill * 1e5)), Err(Error::IllConditioned(_))));
        assert!(QuadraticTaskSet::new(vec![DMatrix::identity(2, 2)], vec![v.clone()], DMatrix::identity(2, 2), v, vec![-1.0]).is_err());
    }
}
