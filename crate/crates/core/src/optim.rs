//! Derivative-free minimization: Nelder-Mead and the subspace-searching
//! simplex method (Subplex) built on top of it.
//!
//! Subplex splits the coordinates into small subspaces ordered by how much
//! they moved in the previous cycle and runs a Nelder-Mead search in each,
//! stopping a subspace search once its simplex has shrunk by `psi`. Step
//! sizes are rescaled between cycles from the observed progress. This copes
//! far better than plain Nelder-Mead with the 20-40 coordinates of a
//! fixed-effects likelihood.

use serde::{Deserialize, Serialize};

/// Tuning for [`subplex`] and [`nelder_mead`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubplexOptions {
    /// Stop once the objective changes by at most this relative amount over
    /// three consecutive cycles.
    pub ftol_rel: f64,
    /// Stop once every coordinate moved (and would move) by at most this
    /// relative amount.
    pub xtol_rel: f64,
    pub max_evals: usize,
    /// Simplex reduction factor ending a subspace search.
    pub psi: f64,
    /// Bound on the per-cycle step rescaling.
    pub omega: f64,
    pub ns_min: usize,
    pub ns_max: usize,
}

impl Default for SubplexOptions {
    fn default() -> Self {
        SubplexOptions {
            ftol_rel: 1e-9,
            xtol_rel: 1e-8,
            max_evals: 100_000,
            psi: 0.25,
            omega: 0.1,
            ns_min: 2,
            ns_max: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
    /// Relative objective change over the last cycle.
    pub last_rel_change: f64,
}

/// Counts evaluations and maps non-finite values to +inf.
struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Nelder-Mead over the coordinates `dims` of `x`, the other coordinates
/// held fixed. Stops when the simplex's L1 size falls to `shrink_to` times
/// its initial size or the evaluation budget `budget` is spent. Updates `x`
/// and `fx` in place.
#[allow(clippy::too_many_arguments)]
fn simplex_search<F: FnMut(&[f64]) -> f64>(
    obj: &mut Counted<F>,
    x: &mut [f64],
    fx: &mut f64,
    dims: &[usize],
    steps: &[f64],
    shrink_to: f64,
    budget: usize,
) {
    let k = dims.len();
    let mut verts: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    let mut vals: Vec<f64> = Vec::with_capacity(k + 1);
    let base: Vec<f64> = dims.iter().map(|&d| x[d]).collect();
    verts.push(base.clone());
    vals.push(*fx);
    let mut probe = x.to_vec();
    let eval_at = |obj: &mut Counted<F>, y: &[f64], probe: &mut Vec<f64>| -> f64 {
        for (&d, &v) in dims.iter().zip(y) {
            probe[d] = v;
        }
        obj.eval(probe)
    };
    for j in 0..k {
        let mut v = base.clone();
        v[j] += steps[j];
        let fv = eval_at(obj, &v, &mut probe);
        verts.push(v);
        vals.push(fv);
    }

    let size = |verts: &[Vec<f64>], best: usize| -> f64 {
        verts
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&verts[best])
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    };
    let mut order: Vec<usize> = (0..=k).collect();
    let sort = |order: &mut Vec<usize>, vals: &[f64]| {
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
    };
    sort(&mut order, &vals);
    let initial = size(&verts, order[0]);
    let start = obj.evals;
    let (refl, expand, contract, shrink) = (1.0, 2.0, 0.5, 0.5);
    let mut centroid = vec![0.0; k];

    while obj.evals - start < budget && size(&verts, order[0]) > shrink_to * initial {
        let best = order[0];
        let worst = order[k];
        let second = order[k - 1];
        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..k] {
            for (c, v) in centroid.iter_mut().zip(&verts[i]) {
                *c += v / k as f64;
            }
        }
        let along = |t: f64, from: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(from)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(refl, &verts[worst]);
        let fr = eval_at(obj, &xr, &mut probe);
        if fr < vals[best] {
            let xe = along(expand, &verts[worst]);
            let fe = eval_at(obj, &xe, &mut probe);
            if fe < fr {
                verts[worst] = xe;
                vals[worst] = fe;
            } else {
                verts[worst] = xr;
                vals[worst] = fr;
            }
        } else if fr < vals[second] {
            verts[worst] = xr;
            vals[worst] = fr;
        } else {
            let (xc, fc, accept) = if fr < vals[worst] {
                let xc = along(contract, &verts[worst]);
                let fc = eval_at(obj, &xc, &mut probe);
                let ok = fc <= fr;
                (xc, fc, ok)
            } else {
                let xc = along(-contract, &verts[worst]);
                let fc = eval_at(obj, &xc, &mut probe);
                let ok = fc < vals[worst];
                (xc, fc, ok)
            };
            if accept {
                verts[worst] = xc;
                vals[worst] = fc;
            } else {
                let anchor = verts[best].clone();
                for i in 0..=k {
                    if i == best {
                        continue;
                    }
                    for (v, a) in verts[i].iter_mut().zip(&anchor) {
                        *v = a + shrink * (*v - a);
                    }
                    vals[i] = eval_at(obj, &verts[i].clone(), &mut probe);
                }
            }
        }
        sort(&mut order, &vals);
    }

    let best = order[0];
    if vals[best] < *fx || (vals[best] == *fx && best != 0) {
        for (&d, &v) in dims.iter().zip(&verts[best]) {
            x[d] = v;
        }
        *fx = vals[best];
    }
}

/// Plain Nelder-Mead over all coordinates, restarted internally until the
/// objective stops improving by `ftol_rel`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step: &[f64],
    opts: &SubplexOptions,
) -> Minimum {
    let mut obj = Counted { f, evals: 0 };
    let mut x = x0.to_vec();
    let mut fx = obj.eval(&x);
    let dims: Vec<usize> = (0..x.len()).collect();
    let mut last_rel_change = f64::INFINITY;
    let mut converged = false;
    while obj.evals < opts.max_evals {
        let before = fx;
        let budget = opts.max_evals - obj.evals;
        simplex_search(&mut obj, &mut x, &mut fx, &dims, step, opts.xtol_rel, budget);
        last_rel_change = rel_change(before, fx);
        if last_rel_change <= opts.ftol_rel {
            converged = true;
            break;
        }
    }
    Minimum {
        x,
        value: fx,
        evals: obj.evals,
        converged,
        last_rel_change,
    }
}

fn rel_change(before: f64, after: f64) -> f64 {
    if before == after {
        return 0.0;
    }
    (before - after).abs() / after.abs().max(f64::MIN_POSITIVE)
}

/// Split coordinates (already sorted by decreasing `|v|`) into subspaces.
fn partition(sorted_mag: &[f64], ns_min: usize, ns_max: usize) -> Vec<usize> {
    let n = sorted_mag.len();
    let mut sizes = Vec::new();
    let mut start = 0;
    while start < n {
        let left = n - start;
        let mut best_ns = left.min(ns_max);
        let mut best_crit = f64::NEG_INFINITY;
        for ns in ns_min.min(left)..=ns_max.min(left) {
            let rest = left - ns;
            if rest != 0 && rest < ns_min {
                continue;
            }
            let as1: f64 = sorted_mag[start..start + ns].iter().sum();
            let crit = if rest > 0 {
                let as2: f64 = sorted_mag[start + ns..].iter().sum();
                as1 / ns as f64 - as2 / rest as f64
            } else {
                as1 / ns as f64
            };
            if crit > best_crit {
                best_crit = crit;
                best_ns = ns;
            }
        }
        sizes.push(best_ns);
        start += best_ns;
    }
    sizes
}

/// Minimize `f` from `x0` with initial per-coordinate step sizes `step0`.
pub fn subplex<F: FnMut(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step0: &[f64],
    opts: &SubplexOptions,
) -> Minimum {
    let n = x0.len();
    let mut obj = Counted { f, evals: 0 };
    let mut x = x0.to_vec();
    let mut fx = obj.eval(&x);
    if n == 0 {
        return Minimum {
            x,
            value: fx,
            evals: obj.evals,
            converged: true,
            last_rel_change: 0.0,
        };
    }
    let ns_min = opts.ns_min.clamp(1, n);
    let ns_max = opts.ns_max.clamp(ns_min, n);
    let mut step: Vec<f64> = step0
        .iter()
        .map(|&s| if s == 0.0 { 0.1 } else { s })
        .collect();
    let mut dx = vec![0.0_f64; n];
    let mut first = true;
    let mut flat_cycles = 0;
    let mut last_rel_change = f64::INFINITY;
    let mut converged = false;

    while obj.evals < opts.max_evals {
        let x_prev = x.clone();
        let f_prev = fx;
        let weights: Vec<f64> = if first {
            step.iter().map(|s| s.abs()).collect()
        } else {
            dx.iter().map(|d| d.abs()).collect()
        };
        first = false;
        let mut coords: Vec<usize> = (0..n).collect();
        coords.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
        let sorted: Vec<f64> = coords.iter().map(|&c| weights[c]).collect();
        let sizes = partition(&sorted, ns_min, ns_max);

        let mut offset = 0;
        for &ns in &sizes {
            if obj.evals >= opts.max_evals {
                break;
            }
            let dims = &coords[offset..offset + ns];
            offset += ns;
            let sub_steps: Vec<f64> = dims.iter().map(|&d| step[d]).collect();
            let budget = opts.max_evals - obj.evals;
            simplex_search(&mut obj, &mut x, &mut fx, dims, &sub_steps, opts.psi, budget);
        }

        for i in 0..n {
            dx[i] = x[i] - x_prev[i];
        }
        let dx_norm: f64 = dx.iter().map(|d| d.abs()).sum();
        let step_norm: f64 = step.iter().map(|s| s.abs()).sum();
        let scale = if sizes.len() > 1 {
            (dx_norm / step_norm).clamp(opts.omega, 1.0 / opts.omega)
        } else {
            opts.psi
        };
        for i in 0..n {
            let s = step[i].abs() * scale;
            step[i] = if dx[i] > 0.0 {
                s
            } else if dx[i] < 0.0 {
                -s
            } else {
                -step[i].signum() * s
            };
        }

        last_rel_change = rel_change(f_prev, fx);
        let x_small = (0..n).all(|i| {
            let moved = dx[i].abs().max(step[i].abs() * opts.psi);
            moved / x[i].abs().max(1.0) <= opts.xtol_rel
        });
        if x_small {
            converged = true;
            break;
        }
        if last_rel_change <= opts.ftol_rel {
            flat_cycles += 1;
            if flat_cycles >= 3 {
                converged = true;
                break;
            }
        } else {
            flat_cycles = 0;
        }
    }

    Minimum {
        x,
        value: fx,
        evals: obj.evals,
        converged,
        last_rel_change,
    }
}
