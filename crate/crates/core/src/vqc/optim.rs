//! Derivative-free minimizers with a fixed iteration budget.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    pub initial_f: f64,
    /// Best-so-far objective after each iteration.
    pub history: Vec<f64>,
    pub evaluations: usize,
}

struct Counted<F> {
    f: F,
    calls: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.calls += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

/// Nelder-Mead with standard coefficients (reflect 1, expand 2, contract
/// 1/2, shrink 1/2). The initial simplex is `x0` plus `step` along each
/// axis; one iteration is one reflect/expand/contract/shrink step.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step: f64,
    max_iter: usize,
) -> OptimResult {
    let mut f = Counted { f, calls: 0 };
    let n = x0.len();
    assert!(n > 0, "nelder_mead needs at least one coordinate");
    let initial_f = f.eval(x0);
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), initial_f)];
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f.eval(&x);
        simplex.push((x, fx));
    }
    let mut history = Vec::with_capacity(max_iter);

    for _ in 0..max_iter {
        // Stable sort keeps earlier vertices first on ties.
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v.0[k]).sum::<f64>() / n as f64)
            .collect();
        let (worst_x, worst_f) = simplex[n].clone();
        let best_f = simplex[0].1;
        let second_worst_f = simplex[n - 1].1;

        let xr = lerp(&centroid, &worst_x, -1.0);
        let fr = f.eval(&xr);
        if fr < best_f {
            let xe = lerp(&centroid, &worst_x, -2.0);
            let fe = f.eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < second_worst_f {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst_f {
                let xc = lerp(&centroid, &xr, 0.5);
                let fc = f.eval(&xc);
                (xc, fc)
            } else {
                let xc = lerp(&centroid, &worst_x, 0.5);
                let fc = f.eval(&xc);
                (xc, fc)
            };
            if fc < worst_f.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    v.0 = lerp(&best, &v.0, 0.5);
                    v.1 = f.eval(&v.0);
                }
            }
        }
        history.push(simplex.iter().map(|v| v.1).fold(f64::INFINITY, f64::min));
    }

    let (best_x, best_f) = simplex
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("simplex has n + 1 vertices");
    OptimResult {
        best_x,
        best_f,
        initial_f,
        history,
        evaluations: f.calls,
    }
}

/// Simultaneous-perturbation stochastic approximation with the usual gain
/// exponents (0.602, 0.101). `step` sets both the initial learning rate and
/// the perturbation size. Returns the best point evaluated.
pub fn spsa<F: FnMut(&[f64]) -> f64, R: Rng + ?Sized>(
    f: F,
    x0: &[f64],
    step: f64,
    max_iter: usize,
    rng: &mut R,
) -> OptimResult {
    let mut f = Counted { f, calls: 0 };
    let initial_f = f.eval(x0);
    let (mut best_x, mut best_f) = (x0.to_vec(), initial_f);
    let mut x = x0.to_vec();
    let stability = 0.1 * max_iter as f64;
    let mut history = Vec::with_capacity(max_iter);

    for k in 0..max_iter {
        let kf = k as f64 + 1.0;
        let a_k = step / (kf + stability).powf(0.602);
        let c_k = step / kf.powf(0.101);
        let delta: Vec<f64> = x
            .iter()
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let plus: Vec<f64> = x.iter().zip(&delta).map(|(v, d)| v + c_k * d).collect();
        let minus: Vec<f64> = x.iter().zip(&delta).map(|(v, d)| v - c_k * d).collect();
        let (fp, fm) = (f.eval(&plus), f.eval(&minus));
        for (cand, fc) in [(&plus, fp), (&minus, fm)] {
            if fc < best_f {
                best_f = fc;
                best_x = cand.clone();
            }
        }
        let g = (fp - fm) / (2.0 * c_k);
        if g.is_finite() {
            for (v, d) in x.iter_mut().zip(&delta) {
                *v -= a_k * g * d;
            }
        }
        history.push(best_f);
    }
    OptimResult {
        best_x,
        best_f,
        initial_f,
        history,
        evaluations: f.calls,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quadratic(x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - i as f64).powi(2))
            .sum()
    }

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn nelder_mead_converges_on_smooth_problems() {
        let r = nelder_mead(quadratic, &[5.0, 5.0, 5.0], 1.0, 400);
        assert!(r.best_f < 1e-8, "{r:?}");
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], 0.5, 2000);
        assert!((r.best_x[0] - 1.0).abs() < 1e-3 && (r.best_x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn nelder_mead_history_monotone() {
        let r = nelder_mead(quadratic, &[3.0; 4], 0.5, 10);
        assert_eq!(r.history.len(), 10);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.best_f <= r.initial_f);
        assert_eq!(quadratic(&r.best_x), r.best_f);
    }

    #[test]
    fn spsa_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = spsa(quadratic, &[3.0; 4], 0.5, 200, &mut rng);
        assert!(r.best_f < 0.1 * r.initial_f, "{r:?}");
    }

    #[test]
    fn nan_objective_treated_as_worst() {
        let r = nelder_mead(
            |x| if x[0] > 0.5 { f64::NAN } else { x[0].abs() },
            &[0.2],
            0.5,
            20,
        );
        assert!(r.best_f.is_finite());
    }
}
