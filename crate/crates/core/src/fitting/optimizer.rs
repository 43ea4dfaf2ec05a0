//! Monotone first-order minimizer: limited-memory quasi-Newton directions with
//! Armijo backtracking.

use std::collections::VecDeque;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub grad_tol: f64,
    pub memory: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { max_iters: 500, rel_tol: 1e-8, grad_tol: 1e-6, memory: 10 }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsOutcome<B> {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// One entry per accepted iterate, starting with the initial point.
    pub log: Vec<B>,
}

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-16;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn two_loop(g: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimize `f`. `eval` returns a value summary `B`, the scalar objective and the gradient;
/// `value` returns only the scalar (used inside the line search).
pub fn minimize<B: Clone>(
    x0: Vec<f64>,
    opts: &LbfgsOptions,
    mut eval: impl FnMut(&[f64]) -> (B, f64, Vec<f64>),
    mut value: impl FnMut(&[f64]) -> f64,
) -> LbfgsOutcome<B> {
    let mut x = x0;
    let (mut summary, mut f, mut g) = eval(&x);
    let mut log = vec![summary.clone()];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        if norm(&g) < opts.grad_tol {
            converged = true;
            break;
        }
        let mut d = two_loop(&g, &mem);
        let mut slope = dot(&g, &d);
        if mem.is_empty() || slope >= 0.0 {
            mem.clear();
            let gn = norm(&g);
            d = g.iter().map(|v| -v / gn.max(1.0)).collect();
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        while step > MIN_STEP {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let ft = value(&trial);
            if ft.is_finite() && ft <= f + ARMIJO_C * step * slope {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        let Some(x_new) = accepted else {
            if mem.is_empty() {
                // no descent possible along the gradient at machine precision
                converged = true;
                break;
            }
            mem.clear();
            continue;
        };

        iterations += 1;
        let (s_new, f_new, g_new) = eval(&x_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let rel = (f - f_new) / f.abs().max(f64::MIN_POSITIVE);
        x = x_new;
        f = f_new;
        g = g_new;
        summary = s_new;
        log.push(summary.clone());
        if rel < opts.rel_tol || f == 0.0 {
            converged = true;
            break;
        }
    }
    if !converged && norm(&g) < opts.grad_tol {
        converged = true;
    }
    LbfgsOutcome { x, value: f, iterations, converged, log }
}
