//! Derivative-free simplex minimization inside an axis-aligned box.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub initial_step: f64,
    /// Stop once every vertex is within this distance of the best one.
    pub diameter_tol: f64,
    pub max_iterations: usize,
    /// Each coordinate is clamped to `[-bound, bound]`.
    pub bound: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            initial_step: 0.25,
            diameter_tol: 1e-3,
            max_iterations: 200,
            bound: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn diameter(simplex: &[Vec<f64>]) -> f64 {
    simplex[1..]
        .iter()
        .map(|v| {
            v.iter()
                .zip(&simplex[0])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Minimize `f` from `x0`. The starting point is a vertex of the initial
/// simplex, so the returned value never exceeds `f(x0)`.
pub fn nelder_mead<F>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let clamp =
        |p: Vec<f64>| -> Vec<f64> { p.into_iter().map(|v| v.clamp(-opts.bound, opts.bound)).collect() };
    let mut simplex: Vec<Vec<f64>> = vec![clamp(x0.to_vec())];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += opts.initial_step;
        if p[i] > opts.bound {
            p[i] = x0[i] - opts.initial_step;
        }
        simplex.push(clamp(p));
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| f(p)).collect();

    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        clamp(a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect())
    };

    let mut iterations = 0;
    let mut converged = false;
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        if diameter(&simplex) < opts.diameter_tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflected = combine(&centroid, &worst, -1.0);
        let fr = f(&reflected);

        if fr < values[0] {
            let expanded = combine(&centroid, &worst, -2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = combine(&centroid, &reflected, 0.5);
            let fc = f(&c);
            (c, fc)
        } else {
            let c = combine(&centroid, &worst, 0.5);
            let fc = f(&c);
            (c, fc)
        };
        if fc < fr.min(values[n]) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        for i in 1..=n {
            simplex[i] = combine(&simplex[0].clone(), &simplex[i], 0.5);
            values[i] = f(&simplex[i]);
        }
    }
    NelderMeadResult {
        x: simplex[0].clone(),
        value: values[0],
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_minimum() {
        let opts = NelderMeadOptions {
            diameter_tol: 1e-8,
            max_iterations: 500,
            ..Default::default()
        };
        let r = nelder_mead(
            |p| (p[0] - 0.7).powi(2) + 3.0 * (p[1] + 1.2).powi(2),
            &[0.0, 0.0],
            &opts,
        );
        assert!(r.converged);
        assert!((r.x[0] - 0.7).abs() < 1e-4 && (r.x[1] + 1.2).abs() < 1e-4);
    }

    #[test]
    fn rosenbrock_in_box() {
        let opts = NelderMeadOptions {
            diameter_tol: 1e-9,
            max_iterations: 2000,
            ..Default::default()
        };
        let r = nelder_mead(
            |p| (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2),
            &[-1.0, 1.5],
            &opts,
        );
        assert!(
            (r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3,
            "{:?}",
            r.x
        );
    }

    #[test]
    fn respects_bound() {
        let r = nelder_mead(|p| -p[0] - p[1], &[0.0, 0.0], &NelderMeadOptions::default());
        assert!(r.x.iter().all(|v| v.abs() <= 2.0));
        assert!((r.value + 4.0).abs() < 1e-2);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |p: &[f64]| (p[0] * 7.0).sin().abs() + (p[1] - 0.1).abs();
        let r = nelder_mead(f, &[0.0, 0.0], &NelderMeadOptions::default());
        assert!(r.value <= f(&[0.0, 0.0]));
        assert!(r.iterations <= 200);
    }
}
