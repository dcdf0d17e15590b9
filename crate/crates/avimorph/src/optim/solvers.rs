//! Adam and L-BFGS-with-backtracking minimizers over block parameter
//! vectors.

use super::{evaluate, Algorithm, Objective, OptimConfig, ParamVector};
use crate::error::{Error, Result};

/// Minimize `obj` from `start`. Returns the final parameters and the
/// accepted-objective trace (one entry per iterate plus the final value).
///
/// On a non-finite objective/gradient or a render failure mid-run the
/// last finite iterate is preserved inside `Error::Diverged`.
pub fn minimize(
    obj: &dyn Objective,
    start: &ParamVector,
    config: &OptimConfig,
) -> Result<(ParamVector, Vec<f64>)> {
    config.validate()?;
    match config.algorithm {
        Algorithm::Adam => adam(obj, start, config),
        Algorithm::Lbfgs => lbfgs(obj, start, config),
    }
}

fn diverged(err: Error, last: &[f64], trace: Vec<f64>) -> Error {
    match err {
        Error::NonFinite { .. } | Error::BehindCamera { .. } => Error::Diverged {
            last_params: last.to_vec(),
            trace,
        },
        other => other,
    }
}

/// Relative decrease over a 10-iteration window below tolerance?
fn converged(trace: &[f64], tolerance: f64) -> bool {
    let n = trace.len();
    if n < 11 {
        return false;
    }
    let old = trace[n - 11];
    let new = trace[n - 1];
    (old - new) / old.abs().max(1.0) < tolerance
}

fn clip(grad: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
}

fn adam(obj: &dyn Objective, start: &ParamVector, config: &OptimConfig) -> Result<(ParamVector, Vec<f64>)> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    let mut params = start.clone();
    let n = params.data.len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut trace = Vec::with_capacity(config.max_iters + 1);

    for it in 0..config.max_iters {
        let (f, mut g) = match evaluate(obj, &params) {
            Ok(r) => r,
            Err(e) => return Err(diverged(e, &params.data, trace)),
        };
        trace.push(f);
        if converged(&trace, config.tolerance) {
            break;
        }
        clip(&mut g, config.grad_clip);
        let t = (it + 1) as f64;
        let bc1 = 1.0 - B1.powf(t);
        let bc2 = 1.0 - B2.powf(t);
        for i in 0..n {
            m[i] = B1 * m[i] + (1.0 - B1) * g[i];
            v[i] = B2 * v[i] + (1.0 - B2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            params.data[i] -= config.step_size * mhat / (vhat.sqrt() + EPS);
        }
        obj.project(&params.layout, &mut params.data);
    }
    match evaluate(obj, &params) {
        Ok((f, _)) => trace.push(f),
        Err(e) => return Err(diverged(e, &params.data, trace)),
    }
    Ok((params, trace))
}

fn lbfgs(obj: &dyn Objective, start: &ParamVector, config: &OptimConfig) -> Result<(ParamVector, Vec<f64>)> {
    const HISTORY: usize = 8;
    const C1: f64 = 1e-4;
    const MAX_BACKTRACK: usize = 30;

    let mut params = start.clone();
    let n = params.data.len();
    let mut trace = Vec::with_capacity(config.max_iters + 1);
    let (mut f, mut g) = evaluate(obj, &params)?;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();

    for it in 0..config.max_iters {
        trace.push(f);
        if converged(&trace, config.tolerance) {
            break;
        }
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if gnorm < 1e-14 {
            break;
        }

        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|x| -x).collect();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            let a = rho[i] * dot(&s_hist[i], &d);
            alpha[i] = a;
            axpy(&mut d, -a, &y_hist[i]);
        }
        if k > 0 {
            let ys = dot(&y_hist[k - 1], &s_hist[k - 1]);
            let yy = dot(&y_hist[k - 1], &y_hist[k - 1]);
            if yy > 0.0 {
                let scale = ys / yy;
                for x in d.iter_mut() {
                    *x *= scale;
                }
            }
        }
        for i in 0..k {
            let b = rho[i] * dot(&y_hist[i], &d);
            axpy(&mut d, alpha[i] - b, &s_hist[i]);
        }

        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            // Fall back to steepest descent.
            d = g.iter().map(|x| -x).collect();
            slope = -gnorm * gnorm;
        }

        let mut t = if it == 0 {
            (config.step_size / gnorm.max(1e-12)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let mut cand = params.clone();
            for i in 0..n {
                cand.data[i] += t * d[i];
            }
            match evaluate(obj, &cand) {
                Ok((fc, gc)) if fc <= f + C1 * t * slope => {
                    accepted = Some((cand, fc, gc));
                    break;
                }
                _ => t *= 0.5,
            }
        }
        let Some((cand, fc, gc)) = accepted else {
            break; // no descent step found; report the incumbent
        };

        let s: Vec<f64> = cand
            .data
            .iter()
            .zip(&params.data)
            .map(|(a, b)| a - b)
            .collect();
        let y: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if s_hist.len() == HISTORY {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
            rho.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(y);
        }
        params = cand;
        f = fc;
        g = gc;
    }
    trace.push(f);
    Ok((params, trace))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::BlockLayout;

    struct Quadratic;
    impl Objective for Quadratic {
        fn eval(&self, x: &[f64]) -> Result<f64> {
            Ok(x.iter().map(|v| v * v).sum())
        }
        fn eval_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((self.eval(x)?, x.iter().map(|v| 2.0 * v).collect()))
        }
    }

    struct Rosenbrock;
    impl Objective for Rosenbrock {
        fn eval(&self, x: &[f64]) -> Result<f64> {
            let (a, b) = (1.0, 100.0);
            Ok((a - x[0]).powi(2) + b * (x[1] - x[0] * x[0]).powi(2))
        }
        fn eval_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            let (a, b) = (1.0, 100.0);
            let g0 = -2.0 * (a - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] * x[0]);
            let g1 = 2.0 * b * (x[1] - x[0] * x[0]);
            Ok((self.eval(x)?, vec![g0, g1]))
        }
    }

    fn params2(x: f64, y: f64) -> ParamVector {
        ParamVector::new(BlockLayout::new(&[("x", 2)]), vec![x, y]).unwrap()
    }

    #[test]
    fn quadratic_bowl_converges_fast() {
        let cfg = OptimConfig::default().with(Algorithm::Lbfgs, 200, 1.0);
        let (p, trace) = minimize(&Quadratic, &params2(10.0, 10.0), &cfg).unwrap();
        assert!(trace.len() <= 201);
        assert!(p.data[0].abs() < 1e-6 && p.data[1].abs() < 1e-6, "{:?}", p.data);
    }

    #[test]
    fn adam_reaches_quadratic_minimum() {
        let cfg = OptimConfig {
            algorithm: Algorithm::Adam,
            max_iters: 3000,
            step_size: 0.05,
            tolerance: 0.0,
            grad_clip: 0.0,
            stages: vec![],
        };
        let (p, _) = minimize(&Quadratic, &params2(10.0, 10.0), &cfg).unwrap();
        assert!(p.data[0].abs() < 1e-4 && p.data[1].abs() < 1e-4, "{:?}", p.data);
    }

    #[test]
    fn rosenbrock_reaches_known_minimum() {
        let cfg = OptimConfig {
            algorithm: Algorithm::Lbfgs,
            max_iters: 500,
            step_size: 1.0,
            tolerance: 0.0,
            grad_clip: 0.0,
            stages: vec![],
        };
        let (p, trace) = minimize(&Rosenbrock, &params2(-1.2, 1.0), &cfg).unwrap();
        let f = *trace.last().unwrap();
        assert!(f < 1e-6, "final value {f}");
        assert!((p.data[0] - 1.0).abs() < 1e-3 && (p.data[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn lbfgs_accepted_trace_is_monotone() {
        let cfg = OptimConfig::default().with(Algorithm::Lbfgs, 300, 1.0);
        let (_, trace) = minimize(&Rosenbrock, &params2(-1.2, 1.0), &cfg).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "trace increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn frozen_blocks_never_move() {
        let mut layout = BlockLayout::new(&[("a", 1), ("b", 1)]);
        layout.set_active("b", false);
        let start = ParamVector::new(layout, vec![5.0, 7.0]).unwrap();
        for alg in [Algorithm::Adam, Algorithm::Lbfgs] {
            let cfg = OptimConfig::default().with(alg, 500, 0.1);
            let (p, _) = minimize(&Quadratic, &start, &cfg).unwrap();
            assert_eq!(p.data[1].to_bits(), 7.0f64.to_bits(), "{alg:?} moved frozen block");
            assert!(p.data[0].abs() < 0.5, "{alg:?} failed to move active block");
        }
    }

    #[test]
    fn identical_runs_produce_bit_identical_traces() {
        for alg in [Algorithm::Adam, Algorithm::Lbfgs] {
            let cfg = OptimConfig::default().with(alg, 100, 0.05);
            let (_, t1) = minimize(&Rosenbrock, &params2(-1.2, 1.0), &cfg).unwrap();
            let (_, t2) = minimize(&Rosenbrock, &params2(-1.2, 1.0), &cfg).unwrap();
            let b1: Vec<u64> = t1.iter().map(|f| f.to_bits()).collect();
            let b2: Vec<u64> = t2.iter().map(|f| f.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn divergence_reports_last_finite_state() {
        // sqrt(x) turns NaN as soon as the minimizer steps below zero.
        struct SqrtWall;
        impl Objective for SqrtWall {
            fn eval(&self, x: &[f64]) -> Result<f64> {
                Ok(x[0].sqrt())
            }
            fn eval_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
                Ok((x[0].sqrt(), vec![0.5 / x[0].sqrt()]))
            }
        }
        let start = ParamVector::new(BlockLayout::new(&[("x", 1)]), vec![0.25]).unwrap();
        let cfg = OptimConfig {
            algorithm: Algorithm::Adam,
            max_iters: 50,
            step_size: 1.0,
            tolerance: 0.0,
            grad_clip: 0.0,
            stages: vec![],
        };
        match minimize(&SqrtWall, &start, &cfg) {
            Err(Error::Diverged { last_params, trace }) => {
                assert_eq!(last_params.len(), 1);
                assert!(!trace.is_empty());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
