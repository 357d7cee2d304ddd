//! Gaussian-process regression on configuration coordinates and the
//! expected hypervolume improvement of a candidate whose bit cost is known.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky, solve_lower, solve_lower_t, Mat};
use crate::scalar::Scalar;

/// First jitter tried when the kernel matrix is not numerically positive
/// definite; it grows tenfold up to [`JITTER_CAP`].
pub const JITTER_START: f64 = 1e-8;
pub const JITTER_CAP: f64 = 1e-4;

/// RBF kernel hyperparameters in standardized-target units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    pub signal_var: f64,
    pub lengthscale: f64,
    pub noise_var: f64,
}

impl GpParams {
    fn to_log(self) -> [f64; 3] {
        [self.signal_var.ln(), self.lengthscale.ln(), self.noise_var.ln()]
    }

    fn from_log(p: [f64; 3]) -> Self {
        Self {
            signal_var: p[0].exp(),
            lengthscale: p[1].exp(),
            noise_var: p[2].exp(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpOptions {
    pub restarts: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Skip the marginal-likelihood search and use these values.
    pub fixed: Option<GpParams>,
    /// Standardize targets to zero mean and unit variance before fitting.
    pub standardize: bool,
    pub seed: u64,
    /// Box constraints on `(signal_var, lengthscale, noise_var)`.
    pub lower: GpParams,
    pub upper: GpParams,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            steps: 100,
            learning_rate: 0.05,
            fixed: None,
            standardize: true,
            seed: 0,
            lower: GpParams {
                signal_var: 1e-2,
                lengthscale: 1e-2,
                noise_var: 1e-6,
            },
            upper: GpParams {
                signal_var: 1e2,
                lengthscale: 1e2,
                noise_var: 1.0,
            },
        }
    }
}

/// Fitted GP with zero prior mean on standardized targets. Constant
/// targets (with standardization on) give a flat model: the constant, with
/// zero variance everywhere.
#[derive(Clone, Debug)]
pub struct GpModel<T> {
    pub train_x: Mat<T>,
    pub train_y: Vec<T>,
    pub params: GpParams,
    pub jitter: f64,
    y_mean: T,
    y_scale: T,
    /// All targets equal: the surrogate is the constant with zero variance.
    flat: bool,
    chol: Mat<T>,
    alpha: Vec<T>,
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + (x - y) * (x - y))
}

fn kernel_matrix<T: Scalar>(x: &Mat<T>, p: &GpParams) -> (Mat<T>, Mat<T>) {
    let m = x.rows();
    let sf2 = T::of(p.signal_var);
    let two_l2 = T::of(2.0 * p.lengthscale * p.lengthscale);
    let mut k = Mat::zeros(m, m);
    let mut d2 = Mat::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let d = sq_dist(x.row(i), x.row(j));
            let v = sf2 * (-d / two_l2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
            d2[(i, j)] = d;
            d2[(j, i)] = d;
        }
    }
    (k, d2)
}

/// Cholesky of `kf + (noise + jitter)·I`, escalating the jitter as needed.
fn factor<T: Scalar>(kf: &Mat<T>, noise: f64) -> Result<(Mat<T>, f64)> {
    let mut jitter = 0.0;
    loop {
        let mut a = kf.clone();
        for i in 0..a.rows() {
            a[(i, i)] += T::of(noise + jitter);
        }
        match cholesky(&a) {
            Ok(l) => return Ok((l, jitter)),
            Err(_) if jitter < JITTER_CAP => {
                jitter = if jitter == 0.0 { JITTER_START } else { jitter * 10.0 };
            }
            Err(e) => {
                return Err(Error::Numeric(format!(
                    "kernel matrix not positive definite with jitter {JITTER_CAP}: {e}"
                )))
            }
        }
    }
}

/// Log marginal likelihood and its gradient with respect to the log
/// hyperparameters.
fn lml_and_grad<T: Scalar>(x: &Mat<T>, y: &[T], p: &GpParams) -> Result<(f64, [f64; 3])> {
    let m = x.rows();
    let (kf, d2) = kernel_matrix(x, p);
    let (l, _) = factor(&kf, p.noise_var)?;
    let alpha = solve_lower_t(&l, &solve_lower(&l, y));
    let fit = y.iter().zip(&alpha).fold(0.0, |s, (&a, &b)| s + a.as_f64() * b.as_f64());
    let logdet: f64 = (0..m).map(|i| l[(i, i)].as_f64().ln()).sum();
    let lml = -0.5 * fit - logdet - 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln();

    let mut kinv = Mat::<T>::zeros(m, m);
    for j in 0..m {
        let mut e = vec![T::zero(); m];
        e[j] = T::one();
        kinv.set_column(j, &solve_lower_t(&l, &solve_lower(&l, &e)));
    }
    let l2 = p.lengthscale * p.lengthscale;
    let mut g = [0.0; 3];
    for i in 0..m {
        for j in 0..m {
            let w = alpha[i].as_f64() * alpha[j].as_f64() - kinv[(i, j)].as_f64();
            let k = kf[(i, j)].as_f64();
            g[0] += w * k;
            g[1] += w * k * d2[(i, j)].as_f64() / l2;
        }
        g[2] += (alpha[i].as_f64().powi(2) - kinv[(i, i)].as_f64()) * p.noise_var;
    }
    Ok((lml, g.map(|v| 0.5 * v)))
}

fn clamp_log(p: &mut [f64; 3], lo: &[f64; 3], hi: &[f64; 3]) {
    for k in 0..3 {
        p[k] = p[k].clamp(lo[k], hi[k]);
    }
}

/// Projected Adam ascent on the log marginal likelihood from several starts;
/// returns the best hyperparameters seen.
fn optimize<T: Scalar>(x: &Mat<T>, y: &[T], opts: &GpOptions) -> Result<GpParams> {
    let lo = opts.lower.to_log();
    let hi = opts.upper.to_log();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(f64, GpParams)> = None;
    for s in 0..opts.restarts.max(1) {
        let mut p = if s == 0 {
            [0.0, (0.3f64).ln(), (1e-2f64).ln()]
        } else {
            [0, 1, 2].map(|k| rng.random_range(lo[k]..=hi[k]))
        };
        clamp_log(&mut p, &lo, &hi);
        let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
        for t in 1..=opts.steps + 1 {
            let params = GpParams::from_log(p);
            let Ok((lml, g)) = lml_and_grad(x, y, &params) else {
                break;
            };
            if lml.is_finite() && best.is_none_or(|(b, _)| lml > b) {
                best = Some((lml, params));
            }
            if t > opts.steps {
                break;
            }
            for k in 0..3 {
                m[k] = 0.9 * m[k] + 0.1 * g[k];
                v[k] = 0.999 * v[k] + 0.001 * g[k] * g[k];
                let mh = m[k] / (1.0 - 0.9f64.powi(t as i32));
                let vh = v[k] / (1.0 - 0.999f64.powi(t as i32));
                p[k] += opts.learning_rate * mh / (vh.sqrt() + 1e-8);
            }
            clamp_log(&mut p, &lo, &hi);
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| Error::Numeric("no hyperparameter start produced a finite likelihood".into()))
}

/// Fits a GP with default options.
pub fn gp_fit<T: Scalar>(x: &Mat<T>, y: &[T]) -> Result<GpModel<T>> {
    gp_fit_with(x, y, &GpOptions::default())
}

pub fn gp_fit_with<T: Scalar>(x: &Mat<T>, y: &[T], opts: &GpOptions) -> Result<GpModel<T>> {
    let m = x.rows();
    if m == 0 || x.cols() == 0 {
        return Err(invalid("GP needs at least one point with at least one coordinate"));
    }
    if y.len() != m {
        return Err(invalid(format!("{} targets for {m} inputs", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) || x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(invalid("GP data must be finite"));
    }
    let flat = y.iter().all(|&v| v == y[0]);
    let (y_mean, y_scale) = if opts.standardize {
        let mean = y.iter().copied().sum::<T>() / T::of_usize(m);
        let var = y.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::of_usize(m);
        let sd = var.sqrt();
        (if flat { y[0] } else { mean }, if sd > T::zero() { sd } else { T::one() })
    } else {
        (T::zero(), T::one())
    };
    let ys: Vec<T> = y.iter().map(|&v| (v - y_mean) / y_scale).collect();
    let params = match opts.fixed {
        Some(p) => p,
        None => optimize(x, &ys, opts)?,
    };
    if !(params.signal_var > 0.0 && params.lengthscale > 0.0 && params.noise_var >= 0.0) {
        return Err(invalid("GP hyperparameters must be positive"));
    }
    let (kf, _) = kernel_matrix(x, &params);
    let (chol, jitter) = factor(&kf, params.noise_var)?;
    let alpha = solve_lower_t(&chol, &solve_lower(&chol, &ys));
    Ok(GpModel {
        train_x: x.clone(),
        train_y: y.to_vec(),
        params,
        jitter,
        y_mean,
        y_scale,
        flat: flat && opts.standardize,
        chol,
        alpha,
    })
}

impl<T: Scalar> GpModel<T> {
    pub fn num_points(&self) -> usize {
        self.train_x.rows()
    }

    pub fn dim(&self) -> usize {
        self.train_x.cols()
    }

    /// Prior mean in target units.
    pub fn prior_mean(&self) -> T {
        self.y_mean
    }

    /// Prior variance in target units.
    pub fn prior_var(&self) -> T {
        if self.flat {
            return T::zero();
        }
        T::of(self.params.signal_var) * self.y_scale * self.y_scale
    }

    /// Noise variance in target units.
    pub fn noise_var(&self) -> T {
        T::of(self.params.noise_var) * self.y_scale * self.y_scale
    }

    /// Posterior mean and latent variance at `x`.
    pub fn predict(&self, x: &[T]) -> (T, T) {
        assert_eq!(x.len(), self.dim(), "query dimension");
        if self.flat {
            return (self.y_mean, T::zero());
        }
        let sf2 = T::of(self.params.signal_var);
        let two_l2 = T::of(2.0 * self.params.lengthscale * self.params.lengthscale);
        let ks: Vec<T> = (0..self.num_points())
            .map(|i| sf2 * (-sq_dist(self.train_x.row(i), x) / two_l2).exp())
            .collect();
        let mu = ks.iter().zip(&self.alpha).fold(T::zero(), |s, (&a, &b)| s + a * b);
        let v = solve_lower(&self.chol, &ks);
        let var = (sf2 - v.iter().fold(T::zero(), |s, &a| s + a * a)).max(T::zero());
        (self.y_mean + mu * self.y_scale, var * self.y_scale * self.y_scale)
    }

    pub fn predict_batch(&self, xs: &Mat<T>) -> Vec<(T, T)> {
        (0..xs.rows()).map(|i| self.predict(xs.row(i))).collect()
    }

    /// Log marginal likelihood of the standardized targets.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        let ys: Vec<T> = self.train_y.iter().map(|&v| (v - self.y_mean) / self.y_scale).collect();
        Ok(lml_and_grad(&self.train_x, &ys, &self.params)?.0)
    }
}

/// Free-function form of [`GpModel::predict`].
pub fn gp_predict<T: Scalar>(model: &GpModel<T>, x: &[T]) -> (T, T) {
    model.predict(x)
}

/// Expected hypervolume improvement of adding `(f1, f2_known)` to `front`
/// when `f1 ~ Normal(mu, var)`.
///
/// The improvement is `∫_{f1}^{ref.0} G(x) dx` with `G(x)` the height of
/// the uncovered strip above `f2_known` at abscissa `x`. `G` is a step
/// function, so the expectation is a sum over its steps of
/// `G_j·(ψ(a_j) − ψ(a_{j−1}))` with `ψ(a) = E[(a − f1)⁺]`.
pub fn ehvi(mu: f64, var: f64, f2_known: f64, front: &[(f64, f64)], reference: (f64, f64)) -> Result<f64> {
    if !(var >= 0.0) || !mu.is_finite() || !var.is_finite() {
        return Err(invalid(format!("predictive moments ({mu}, {var}) must be finite with var >= 0")));
    }
    if !(f2_known < reference.1) {
        return Ok(0.0);
    }
    // Staircase breakpoints below the reference, with the strip height on
    // the interval ending at each breakpoint.
    let mut xs: Vec<f64> = front.iter().filter(|q| q.0 < reference.0).map(|q| q.0).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    xs.dedup();
    xs.push(reference.0);
    let height = |x: f64| {
        let h = front
            .iter()
            .filter(|q| q.0 <= x)
            .map(|q| q.1)
            .fold(reference.1, f64::min);
        (h - f2_known).max(0.0)
    };
    let mut steps = Vec::with_capacity(xs.len());
    let mut prev = f64::NEG_INFINITY;
    for &a in &xs {
        // Height on (prev, a): every front point with q.0 <= prev counts.
        steps.push((a, height(prev)));
        prev = a;
    }

    let sd = var.sqrt();
    let psi: Box<dyn Fn(f64) -> f64> = if sd > 0.0 {
        let n = Normal::new(0.0, 1.0).expect("standard normal");
        Box::new(move |a: f64| {
            let z = (a - mu) / sd;
            (a - mu) * n.cdf(z) + sd * n.pdf(z)
        })
    } else {
        Box::new(move |a: f64| (a - mu).max(0.0))
    };
    let mut total = 0.0;
    let mut lo = 0.0;
    for (a, g) in steps {
        let hi = psi(a);
        if g > 0.0 {
            total += g * (hi - lo);
        }
        lo = hi;
    }
    Ok(total.max(0.0))
}
