//! Derivative-free optimizers: CMA-ES for the coarse global search and a
//! bound-constrained quadratic-model trust region for refinement.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// An objective evaluated a batch of points at a time. The objective may
/// change between iterations (e.g. re-projected patch weights);
/// `begin_iteration` reports whether it did so values can be re-baselined.
pub trait BatchObjective {
    /// Called before each optimizer iteration with the incumbent point.
    /// Returns true if the objective changed.
    fn begin_iteration(&mut self, _incumbent: &[f64], _iteration: usize) -> Result<bool> {
        Ok(false)
    }

    fn evaluate(&mut self, points: &[Vec<f64>]) -> Vec<f64>;
}

/// Adapts a plain function into a [`BatchObjective`].
pub struct FnObjective<F>(pub F);

impl<F: FnMut(&[f64]) -> f64> BatchObjective for FnObjective<F> {
    fn evaluate(&mut self, points: &[Vec<f64>]) -> Vec<f64> {
        points.iter().map(|p| (self.0)(p)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Best objective value known at the end of each iteration.
    pub trace: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CmaesOptions {
    pub population: usize,
    pub max_iter: usize,
    /// Stop once `σ·sqrt(max diag C)` (in units of `sigma0`) falls below this.
    pub tol_x: f64,
    /// Stop once the best values of the last generations span less than this.
    pub tol_fun: f64,
    pub seed: u64,
}

impl Default for CmaesOptions {
    fn default() -> Self {
        Self {
            population: 100,
            max_iter: 300,
            tol_x: 1e-4,
            tol_fun: 1e-12,
            seed: 0,
        }
    }
}

fn sanitize(f: f64) -> f64 {
    if f.is_finite() {
        f
    } else {
        f64::INFINITY
    }
}

/// CMA-ES with weighted recombination, cumulative step-size adaptation and
/// rank-one plus rank-μ covariance updates. Search runs in coordinates
/// normalized by `sigma0` with unit initial step size. Non-finite objective
/// values rank last; a generation with no finite value aborts.
pub fn cmaes_minimize_batch(
    objective: &mut dyn BatchObjective,
    x0: &[f64],
    sigma0: &[f64],
    opts: &CmaesOptions,
) -> Result<OptimResult> {
    let n = x0.len();
    if n == 0 || sigma0.len() != n {
        return Err(Error::invalid("x0 and sigma0 must be non-empty and of equal length"));
    }
    if sigma0.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid("sigma0 entries must be positive"));
    }
    if opts.population < 4 {
        return Err(Error::invalid("population must be >= 4"));
    }
    if !(opts.tol_x > 0.0) || !(opts.tol_fun >= 0.0) {
        return Err(Error::invalid("tolerances must be positive"));
    }
    let lambda = opts.population;
    let mu = lambda / 2;
    let nf = n as f64;
    let raw: Vec<f64> = (0..mu)
        .map(|i| (mu as f64 + 0.5).ln() - ((i + 1) as f64).ln())
        .collect();
    let wsum: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|x| x / wsum).collect();
    let mueff = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
    let cs = (mueff + 2.0) / (nf + mueff + 5.0);
    let ds = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
    let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
    let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let to_x = |y: &DVector<f64>| -> Vec<f64> { (0..n).map(|i| x0[i] + sigma0[i] * y[i]).collect() };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut mean = DVector::<f64>::zeros(n);
    let mut sigma = 1.0f64;
    let mut c = DMatrix::<f64>::identity(n, n);
    let mut b = DMatrix::<f64>::identity(n, n);
    let mut d = DVector::<f64>::from_element(n, 1.0);
    let mut ps = DVector::<f64>::zeros(n);
    let mut pc = DVector::<f64>::zeros(n);

    let mut best_y = mean.clone();
    let mut best_f = f64::INFINITY;
    let mut evaluations = 0usize;
    let mut trace = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    let hist_len = 10 + (30.0 * nf / lambda as f64).ceil() as usize;

    let mut iterations = 0;
    for g in 0..opts.max_iter {
        iterations = g + 1;
        let incumbent = to_x(&best_y);
        if objective.begin_iteration(&incumbent, g)? || g == 0 {
            // rebaseline the incumbent under the (possibly new) objective
            best_f = sanitize(objective.evaluate(&[incumbent])[0]);
            evaluations += 1;
        }

        let zs: Vec<DVector<f64>> = (0..lambda)
            .map(|_| DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let ys: Vec<DVector<f64>> = zs.iter().map(|z| &b * d.component_mul(z)).collect();
        let cand: Vec<DVector<f64>> = ys.iter().map(|y| &mean + y * sigma).collect();
        let points: Vec<Vec<f64>> = cand.iter().map(to_x).collect();
        let fs: Vec<f64> = objective.evaluate(&points).into_iter().map(sanitize).collect();
        evaluations += lambda;
        if fs.iter().all(|f| !f.is_finite()) {
            return Err(Error::OptimizerAbort(format!(
                "generation {g}: no finite objective value"
            )));
        }

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&i, &j| fs[i].total_cmp(&fs[j]).then(i.cmp(&j)));
        if fs[order[0]] < best_f {
            best_f = fs[order[0]];
            best_y = cand[order[0]].clone();
        }
        trace.push(best_f);
        history.push(fs[order[0]]);

        let old_mean = mean.clone();
        mean = DVector::zeros(n);
        for k in 0..mu {
            mean += &cand[order[k]] * w[k];
        }
        let yw = (&mean - &old_mean) / sigma;
        // C^{-1/2} y_w = B D^{-1} Bᵀ y_w
        let inv_sqrt = &b * DMatrix::from_diagonal(&d.map(|x| 1.0 / x)) * b.transpose();
        ps = &ps * (1.0 - cs) + &inv_sqrt * &yw * (cs * (2.0 - cs) * mueff).sqrt();
        let ps_norm = ps.norm();
        let hsig = ps_norm / (1.0 - (1.0 - cs).powi(2 * (g as i32 + 1))).sqrt() < (1.4 + 2.0 / (nf + 1.0)) * chi_n;
        let hs = if hsig { 1.0 } else { 0.0 };
        pc = &pc * (1.0 - cc) + &yw * (hs * (cc * (2.0 - cc) * mueff).sqrt());

        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for k in 0..mu {
            let y = (&cand[order[k]] - &old_mean) / sigma;
            rank_mu += &y * y.transpose() * w[k];
        }
        c = &c * (1.0 - c1 - cmu) + (&pc * pc.transpose() + &c * ((1.0 - hs) * cc * (2.0 - cc))) * c1 + rank_mu * cmu;
        c = (&c + c.transpose()) * 0.5;
        sigma *= ((cs / ds) * (ps_norm / chi_n - 1.0)).exp();

        let eig = SymmetricEigen::new(c.clone());
        b = eig.eigenvectors;
        d = eig.eigenvalues.map(|v| v.max(1e-300).sqrt());

        let max_std = sigma * (0..n).map(|i| c[(i, i)]).fold(0.0f64, f64::max).sqrt();
        if max_std < opts.tol_x || !sigma.is_finite() {
            break;
        }
        if history.len() >= hist_len {
            let recent = &history[history.len() - hist_len..];
            let (lo, hi) = recent.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
            if hi - lo <= opts.tol_fun {
                break;
            }
        }
    }

    Ok(OptimResult {
        x: to_x(&best_y),
        f: best_f,
        iterations,
        evaluations,
        trace,
    })
}

/// CMA-ES on a plain function.
pub fn cmaes_minimize(
    objective: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    sigma0: &[f64],
    population: usize,
    max_iter: usize,
    seed: u64,
) -> Result<OptimResult> {
    let opts = CmaesOptions {
        population,
        max_iter,
        tol_x: 1e-11,
        tol_fun: 0.0,
        seed,
    };
    cmaes_minimize_batch(&mut FnObjective(objective), x0, sigma0, &opts)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineOptions {
    pub max_iter: usize,
    /// Initial trust-region radius, as a fraction of each half-width.
    pub rho_begin: f64,
    /// Stop once the radius falls below this fraction.
    pub rho_end: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            rho_begin: 0.25,
            rho_end: 1e-3,
        }
    }
}

/// Minimizes `m(s) = gᵀs + ½sᵀHs` over the box `lo ≤ s ≤ hi` exactly by
/// examining every face of the box: on each face the free coordinates take
/// their stationary value when the reduced Hessian is positive definite.
fn box_qp(g: &DVector<f64>, h: &DMatrix<f64>, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    let n = g.len();
    let model = |s: &DVector<f64>| g.dot(s) + 0.5 * s.dot(&(h * s));
    let mut best = DVector::zeros(n);
    let mut best_m = 0.0;
    let total = 3usize.pow(n as u32);
    let mut state = vec![0u8; n];
    for code in 0..total {
        let mut c = code;
        for st in state.iter_mut() {
            *st = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        let mut s = DVector::from_fn(n, |i, _| match state[i] {
            1 => lo[i],
            2 => hi[i],
            _ => 0.0,
        });
        if !free.is_empty() {
            let k = free.len();
            let hff = DMatrix::from_fn(k, k, |a, b| h[(free[a], free[b])]);
            let rhs = DVector::from_fn(k, |a, _| {
                let i = free[a];
                let mut v = -g[i];
                for j in 0..n {
                    if state[j] != 0 {
                        v -= h[(i, j)] * s[j];
                    }
                }
                v
            });
            let Some(chol) = hff.cholesky() else {
                continue;
            };
            let sf = chol.solve(&rhs);
            let mut inside = true;
            for (a, &i) in free.iter().enumerate() {
                if sf[a] < lo[i] || sf[a] > hi[i] {
                    inside = false;
                    break;
                }
                s[i] = sf[a];
            }
            if !inside {
                continue;
            }
        }
        let m = model(&s);
        if m < best_m {
            best_m = m;
            best = s;
        }
    }
    best
}

/// Bound-constrained derivative-free minimization. Each iteration fits a
/// full quadratic model from a stencil around the incumbent (axial pairs and
/// one cross point per coordinate pair, all inside the bounds), minimizes it
/// exactly over the trust region intersected with the bounds, and accepts or
/// shrinks by the usual reduction ratio test.
pub fn local_bound_refine_batch(
    objective: &mut dyn BatchObjective,
    x0: &[f64],
    bounds: &[(f64, f64)],
    opts: &RefineOptions,
) -> Result<OptimResult> {
    let n = x0.len();
    if n == 0 || bounds.len() != n {
        return Err(Error::invalid("x0 and bounds must be non-empty and of equal length"));
    }
    for (i, (&x, &(l, u))) in x0.iter().zip(bounds).enumerate() {
        if !(l < u) {
            return Err(Error::invalid(format!("bound {i} is empty: [{l}, {u}]")));
        }
        if !(x >= l && x <= u) {
            return Err(Error::invalid(format!("x0[{i}] = {x} lies outside [{l}, {u}]")));
        }
    }
    if !(opts.rho_begin > 0.0 && opts.rho_end > 0.0 && opts.rho_end <= opts.rho_begin) {
        return Err(Error::invalid("need 0 < rho_end <= rho_begin"));
    }
    // work in u ∈ [-1, 1]^n
    let mid: Vec<f64> = bounds.iter().map(|&(l, u)| 0.5 * (l + u)).collect();
    let half: Vec<f64> = bounds.iter().map(|&(l, u)| 0.5 * (u - l)).collect();
    let to_x = |u: &DVector<f64>| -> Vec<f64> {
        (0..n)
            .map(|i| (mid[i] + half[i] * u[i]).clamp(bounds[i].0, bounds[i].1))
            .collect()
    };
    let mut u = DVector::from_fn(n, |i, _| ((x0[i] - mid[i]) / half[i]).clamp(-1.0, 1.0));
    let mut fu = f64::NAN;
    let mut delta = opts.rho_begin.min(1.0);
    let mut evaluations = 0;
    let mut trace = Vec::new();
    let mut iterations = 0;

    while iterations < opts.max_iter && delta >= opts.rho_end {
        let changed = objective.begin_iteration(&to_x(&u), iterations)?;
        iterations += 1;
        let h_step: Vec<f64> = (0..n).map(|_| delta.min(0.5)).collect();
        // axial offsets (a, b): ±h when both fit, else h and 2h toward the interior
        let offs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let h = h_step[i];
                if u[i] + h <= 1.0 && u[i] - h >= -1.0 {
                    (h, -h)
                } else if u[i] + h > 1.0 {
                    (-h, -2.0 * h)
                } else {
                    (h, 2.0 * h)
                }
            })
            .collect();
        let mut pts: Vec<DVector<f64>> = Vec::new();
        let center_needed = changed || !fu.is_finite();
        if center_needed {
            pts.push(u.clone());
        }
        for i in 0..n {
            for o in [offs[i].0, offs[i].1] {
                let mut p = u.clone();
                p[i] += o;
                pts.push(p);
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let mut p = u.clone();
                p[i] += offs[i].0;
                p[j] += offs[j].0;
                pts.push(p);
            }
        }
        let xs: Vec<Vec<f64>> = pts.iter().map(to_x).collect();
        let fs: Vec<f64> = objective.evaluate(&xs).into_iter().map(sanitize).collect();
        evaluations += fs.len();
        let mut k = 0;
        if center_needed {
            fu = fs[0];
            k = 1;
            if !fu.is_finite() {
                return Err(Error::OptimizerAbort(
                    "objective is not finite at the start point".into(),
                ));
            }
        }
        let axial = &fs[k..k + 2 * n];
        let cross = &fs[k + 2 * n..];

        let mut g = DVector::zeros(n);
        let mut hm = DMatrix::zeros(n, n);
        let usable = axial.iter().chain(cross).all(|f| f.is_finite());
        if usable {
            for i in 0..n {
                let (a, b) = offs[i];
                let (fa, fb) = (axial[2 * i] - fu, axial[2 * i + 1] - fu);
                // fa = g a + ½H a², fb = g b + ½H b²
                let hii = 2.0 * (fa * b - fb * a) / (a * a * b - b * b * a);
                g[i] = (fa - 0.5 * hii * a * a) / a;
                hm[(i, i)] = hii;
            }
            let mut c = 0;
            for i in 0..n {
                for j in i + 1..n {
                    let (ai, aj) = (offs[i].0, offs[j].0);
                    let rest =
                        cross[c] - fu - g[i] * ai - g[j] * aj - 0.5 * hm[(i, i)] * ai * ai - 0.5 * hm[(j, j)] * aj * aj;
                    let hij = rest / (ai * aj);
                    hm[(i, j)] = hij;
                    hm[(j, i)] = hij;
                    c += 1;
                }
            }
        }

        let best_stencil = pts[k..]
            .iter()
            .zip(axial.iter().chain(cross))
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(p, f)| (p.clone(), *f));

        let mut moved = false;
        if usable {
            let lo: Vec<f64> = (0..n).map(|i| (-delta).max(-1.0 - u[i])).collect();
            let hi: Vec<f64> = (0..n).map(|i| delta.min(1.0 - u[i])).collect();
            let s = box_qp(&g, &hm, &lo, &hi);
            let pred = -(g.dot(&s) + 0.5 * s.dot(&(&hm * &s)));
            let snorm = s.amax();
            if pred > 0.0 && snorm > 0.0 {
                let cand = &u + &s;
                let fc = sanitize(objective.evaluate(&[to_x(&cand)])[0]);
                evaluations += 1;
                let rho = (fu - fc) / pred;
                if rho >= 0.1 && fc < fu {
                    u = cand;
                    fu = fc;
                    moved = true;
                    let at_edge = (0..n).any(|i| (s[i].abs() - delta).abs() <= 1e-12 * delta.max(1.0));
                    delta = if rho >= 0.75 {
                        if at_edge {
                            (2.0 * delta).min(1.0)
                        } else {
                            (0.2 * delta).max(2.0 * snorm).min(1.0)
                        }
                    } else {
                        (0.5 * delta).max(snorm).min(1.0)
                    };
                }
            }
        }
        if !moved {
            match best_stencil {
                Some((p, f)) if f < fu => {
                    u = p;
                    fu = f;
                }
                _ => delta *= 0.5,
            }
        }
        trace.push(fu);
    }

    if !fu.is_finite() {
        fu = sanitize(objective.evaluate(&[to_x(&u)])[0]);
        evaluations += 1;
    }
    Ok(OptimResult {
        x: to_x(&u),
        f: fu,
        iterations,
        evaluations,
        trace,
    })
}

/// Bounded refinement of a plain function.
pub fn local_bound_refine(
    objective: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    bounds: &[(f64, f64)],
    max_iter: usize,
) -> Result<OptimResult> {
    let opts = RefineOptions {
        max_iter,
        rho_begin: 0.25,
        rho_end: 1e-9,
    };
    local_bound_refine_batch(&mut FnObjective(objective), x0, bounds, &opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn cmaes_sphere() {
        let r = cmaes_minimize(sphere, &[3.0; 6], &[1.0; 6], 12, 200, 1).unwrap();
        let norm = sphere(&r.x).sqrt();
        assert!(norm < 1e-6, "{norm} after {} iterations", r.iterations);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn cmaes_rosenbrock_in_6d() {
        let f = |x: &[f64]| {
            100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2) + x[2..].iter().map(|v| v * v).sum::<f64>()
        };
        let r = cmaes_minimize(f, &[-1.0, 1.5, 0.5, 0.5, 0.5, 0.5], &[0.5; 6], 20, 1000, 3).unwrap();
        assert!(r.f < 1e-6, "{}", r.f);
    }

    #[test]
    fn cmaes_constant_and_deterministic() {
        let r = cmaes_minimize(|_| 1.0, &[0.0; 6], &[1.0; 6], 8, 50, 1).unwrap();
        assert_eq!(r.f, 1.0);
        assert!(r.x.iter().all(|v| v.is_finite()));
        let a = cmaes_minimize(sphere, &[1.0; 6], &[1.0; 6], 10, 30, 9).unwrap();
        let b = cmaes_minimize(sphere, &[1.0; 6], &[1.0; 6], 10, 30, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cmaes_non_finite() {
        let r = cmaes_minimize(
            |x| if x[0] > 0.0 { f64::NAN } else { sphere(x) },
            &[-1.0; 6],
            &[0.3; 6],
            10,
            100,
            2,
        )
        .unwrap();
        assert!(r.f.is_finite() && r.x[0] <= 0.0);
        assert!(matches!(
            cmaes_minimize(|_| f64::NAN, &[0.0; 6], &[1.0; 6], 10, 5, 1),
            Err(Error::OptimizerAbort(_))
        ));
        assert!(cmaes_minimize(sphere, &[0.0; 6], &[1.0; 6], 3, 5, 1).is_err());
    }

    #[test]
    fn box_qp_matches_enumeration_on_separable_case() {
        let g = DVector::from_vec(vec![-4.0, 1.0]);
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0]));
        let s = box_qp(&g, &h, &[-1.0, -1.0], &[1.0, 1.0]);
        // unconstrained (2, -0.5) clipped to (1, -0.5)
        assert_abs_diff_eq!(s[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], -0.5, epsilon = 1e-12);
        // concave direction goes to a vertex
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 2.0]));
        let s = box_qp(&DVector::from_vec(vec![0.1, 0.0]), &h, &[-1.0, -1.0], &[1.0, 1.0]);
        assert_abs_diff_eq!(s[0], -1.0, epsilon = 1e-12);
    }

    fn quad(c: [f64; 6]) -> impl Fn(&[f64]) -> f64 {
        move |x: &[f64]| {
            let d: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
            // coupled but positive definite
            d.iter().map(|v| v * v).sum::<f64>() + 0.5 * d[0] * d[1] + 0.3 * d[2] * d[5] + 7.0
        }
    }

    #[test]
    fn refine_interior_minimum() {
        let c = [0.3, -0.2, 0.5, 1.0, -1.5, 2.0];
        let bounds = [
            (-1.0, 1.0),
            (-1.0, 1.0),
            (-1.0, 1.0),
            (-3.0, 3.0),
            (-3.0, 3.0),
            (-5.0, 5.0),
        ];
        let r = local_bound_refine(quad(c), &[0.0; 6], &bounds, 200).unwrap();
        for (x, c) in r.x.iter().zip(c) {
            assert_abs_diff_eq!(*x, c, epsilon = 1e-6);
        }
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn refine_exterior_minimum_lands_on_face() {
        let c = [2.0, -0.25, 0.5, -4.0, 0.0, 0.1];
        let f = move |x: &[f64]| x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let r = local_bound_refine(f, &[0.0; 6], &[(-1.0, 1.0); 6], 200).unwrap();
        let want = [1.0, -0.25, 0.5, -1.0, 0.0, 0.1];
        for (x, w) in r.x.iter().zip(want) {
            assert_abs_diff_eq!(*x, w, epsilon = 1e-6);
        }
    }

    #[test]
    fn refine_rejects_outside_start_and_never_worsens() {
        assert!(local_bound_refine(sphere, &[2.0, 0.0], &[(-1.0, 1.0); 2], 10).is_err());
        let f = |x: &[f64]| (x[0] * 3.0).sin() + (x[1] * 5.0).cos() + 0.1 * x[0];
        let x0 = [0.2, -0.4];
        let r = local_bound_refine(f, &x0, &[(-1.0, 1.0); 2], 50).unwrap();
        assert!(r.f <= f(&x0));
        assert!(r.x.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
