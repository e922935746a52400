//! Derivative-free Nelder-Mead minimization with dimension-adaptive
//! coefficients, used by the stage-schedule solver.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Converged when every vertex is within `xatol` of the best one...
    pub xatol: f64,
    /// ...and every value within `frtol * |f_best|`.
    pub frtol: f64,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
    /// Scale reflection/expansion/contraction with the dimension.
    pub adaptive: bool,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            max_evals: 40_000,
            xatol: 1e-10,
            frtol: 1e-14,
            initial_step: 0.5,
            adaptive: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

impl NelderMead {
    pub fn minimize(&self, mut f: impl FnMut(&[f64]) -> f64, x0: &[f64]) -> Minimum {
        let n = x0.len();
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };
        if n == 0 {
            let v = eval(x0, &mut evals);
            return Minimum {
                x: Vec::new(),
                f: v,
                evals,
                converged: true,
            };
        }
        let nf = n as f64;
        let (alpha, gamma, rho, sigma) = if self.adaptive {
            (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf)
        } else {
            (1.0, 2.0, 0.5, 0.5)
        };

        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        simplex.push(x0.to_vec());
        for i in 0..n {
            let mut v = x0.to_vec();
            v[i] += self.initial_step;
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();
        let mut converged = false;

        while evals < self.max_evals {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let best = &simplex[0];
            let x_spread = simplex[1..]
                .iter()
                .flat_map(|v| v.iter().zip(best).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            let f_spread = values[1..].iter().map(|v| (v - values[0]).abs()).fold(0.0, f64::max);
            if x_spread <= self.xatol && f_spread <= self.frtol * values[0].abs() + f64::MIN_POSITIVE {
                converged = true;
                break;
            }

            let mut centroid = vec![0.0; n];
            for v in &simplex[..n] {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / nf;
                }
            }
            let worst = simplex[n].clone();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&worst)
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };

            let xr = along(alpha);
            let fr = eval(&xr, &mut evals);
            if fr < values[0] {
                let xe = along(alpha * gamma);
                let fe = eval(&xe, &mut evals);
                if fe < fr {
                    simplex[n] = xe;
                    values[n] = fe;
                } else {
                    simplex[n] = xr;
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n] = xr;
                values[n] = fr;
                continue;
            }
            let (xc, fc) = if fr < values[n] {
                let xc = along(alpha * rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(-rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
                continue;
            }
            for i in 1..=n {
                let shrunk: Vec<f64> = simplex[0]
                    .iter()
                    .zip(&simplex[i])
                    .map(|(b, x)| b + sigma * (x - b))
                    .collect();
                values[i] = eval(&shrunk, &mut evals);
                simplex[i] = shrunk;
            }
        }

        let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
        Minimum {
            x: simplex[best].clone(),
            f: values[best],
            evals,
            converged,
        }
    }

    /// Restarts from the incumbent until a restart no longer improves it,
    /// which un-sticks simplices that collapsed in a narrow valley.
    pub fn minimize_polished(&self, mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], restarts: usize) -> Minimum {
        let mut best = self.minimize(&mut f, x0);
        for _ in 0..restarts {
            let next = self.minimize(&mut f, &best.x);
            let improved = next.f < best.f - 1e-13 * best.f.abs();
            let evals = best.evals + next.evals;
            if next.f <= best.f {
                best = Minimum { evals, ..next };
            } else {
                best.evals = evals;
            }
            if !improved {
                break;
            }
        }
        best
    }
}
