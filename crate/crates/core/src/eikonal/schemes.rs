//! Local update rules for the sweeping solver.
//!
//! Both rules only ever lower a nodal value, so the sweeps are monotone.

/// Value of one neighbour of the node being updated.
#[derive(Clone, Copy, Debug)]
pub(super) struct Neighbor<'a> {
    pub axis: usize,
    /// Signed offset `±h_axis` of the neighbour from the node.
    pub offset: f64,
    pub value: f64,
    /// Metric at the neighbour, `d × d` row-major.
    pub metric: &'a [f64],
}

/// Data of the node being updated.
#[derive(Clone, Copy, Debug)]
pub(super) struct Local<'a> {
    pub dim: usize,
    pub metric: &'a [f64],
    /// Metric frozen at the source.
    pub source_metric: &'a [f64],
    /// Node position relative to the source.
    pub rel: [f64; 3],
}

fn quad(g: &[f64], dim: usize, a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let mut acc = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            acc += g[i * dim + j] * a[i] * b[j];
        }
    }
    acc
}

fn mat_vec(g: &[f64], dim: usize, a: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..dim {
        for j in 0..dim {
            out[i] += g[i * dim + j] * a[j];
        }
    }
    out
}

/// Norm `|w|_g` with its gradient and Hessian projected on the edges `e`.
fn norm_terms(g: &[f64], dim: usize, w: &[f64; 3], e: &[[f64; 3]]) -> (f64, [f64; 2], [[f64; 2]; 2]) {
    let n = quad(g, dim, w, w).max(0.0).sqrt();
    let mut grad = [0.0; 2];
    let mut hess = [[0.0; 2]; 2];
    if n == 0.0 {
        return (n, grad, hess);
    }
    let gw = mat_vec(g, dim, w);
    let dot = |a: &[f64; 3], b: &[f64; 3]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for k in 0..e.len() {
        grad[k] = dot(&gw, &e[k]) / n;
    }
    for k in 0..e.len() {
        for l in 0..e.len() {
            hess[k][l] = (quad(g, dim, &e[k], &e[l]) - grad[k] * grad[l]) / n;
        }
    }
    (n, grad, hess)
}

/// Source-factored Hopf–Lax value over the simplex spanned by `verts`:
///
/// `min_y [ φ₀(y) + u(y) + |x − y|_ḡ ]`, where `φ₀` is the distance under the
/// metric frozen at the source, `u = φ − φ₀` is linear on the simplex and
/// `ḡ` averages the metric of the node and the vertices. Any point of the
/// simplex yields an upper bound, so an inexact minimiser is still safe.
pub(super) fn simplex_update(local: &Local, verts: &[Neighbor]) -> f64 {
    let dim = local.dim;
    let dd = dim * dim;
    let mut gbar = [0.0; 9];
    for i in 0..dd {
        let avg = verts.iter().map(|v| v.metric[i]).sum::<f64>() / verts.len() as f64;
        gbar[i] = 0.5 * (local.metric[i] + avg);
    }
    let gbar = &gbar[..dd];
    let g0 = local.source_metric;
    let pos = |n: &Neighbor| {
        let mut y = [0.0; 3];
        y[n.axis] = n.offset;
        y
    };
    let phi0 = |y: &[f64; 3]| {
        let w = [local.rel[0] + y[0], local.rel[1] + y[1], local.rel[2] + y[2]];
        quad(g0, dim, &w, &w).max(0.0).sqrt()
    };
    if verts.len() == 1 {
        let y = pos(&verts[0]);
        return verts[0].value + quad(gbar, dim, &y, &y).sqrt();
    }
    let m = verts.len() - 1;
    let y0 = pos(&verts[0]);
    let u0 = verts[0].value - phi0(&y0);
    let mut e = [[0.0; 3]; 2];
    let mut du = [0.0; 2];
    for k in 0..m {
        let yk = pos(&verts[k + 1]);
        for i in 0..3 {
            e[k][i] = yk[i] - y0[i];
        }
        du[k] = verts[k + 1].value - phi0(&yk) - u0;
    }
    let e = &e[..m];
    let point = |lam: &[f64; 2]| {
        let mut y = y0;
        for k in 0..m {
            for i in 0..3 {
                y[i] += lam[k] * e[k][i];
            }
        }
        y
    };
    let eval = |lam: &[f64; 2]| {
        let y = point(lam);
        let w = [local.rel[0] + y[0], local.rel[1] + y[1], local.rel[2] + y[2]];
        let (n0, g0v, h0) = norm_terms(g0, dim, &w, e);
        let (n1, g1v, h1) = norm_terms(gbar, dim, &y, e);
        let mut f = n0 + u0 + n1;
        let mut grad = [0.0; 2];
        let mut hess = [[0.0; 2]; 2];
        for k in 0..m {
            f += lam[k] * du[k];
            grad[k] = g0v[k] + g1v[k] + du[k];
            for l in 0..m {
                hess[k][l] = h0[k][l] + h1[k][l];
            }
        }
        (f, grad, hess)
    };
    let project = |lam: [f64; 2]| {
        let mut l = [lam[0].clamp(0.0, 1.0), if m > 1 { lam[1].clamp(0.0, 1.0) } else { 0.0 }];
        let s = l[0] + l[1];
        if s > 1.0 {
            l[0] /= s;
            l[1] /= s;
        }
        l
    };
    let mut lam = unfactored_start(gbar, dim, &y0, e, verts)
        .unwrap_or(if m == 1 { [0.5, 0.0] } else { [1.0 / 3.0, 1.0 / 3.0] });
    let (mut f, mut grad, mut hess) = eval(&lam);
    for _ in 0..20 {
        let step = if m == 1 {
            [-grad[0] / hess[0][0].max(1e-300), 0.0]
        } else {
            let det = hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0];
            if det > 1e-300 {
                [
                    -(hess[1][1] * grad[0] - hess[0][1] * grad[1]) / det,
                    -(hess[0][0] * grad[1] - hess[1][0] * grad[0]) / det,
                ]
            } else {
                [-grad[0], -grad[1]]
            }
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..10 {
            let trial = project([lam[0] + t * step[0], lam[1] + t * step[1]]);
            let shift = (trial[0] - lam[0]).abs() + (trial[1] - lam[1]).abs();
            if shift < 1e-12 {
                break;
            }
            let (ft, gt, ht) = eval(&trial);
            if ft < f {
                lam = trial;
                f = ft;
                grad = gt;
                hess = ht;
                moved = shift > 1e-10;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    f
}

/// Minimiser of the unfactored problem `min_y φ_lin(y) + |y|_ḡ` (closed form),
/// projected onto the simplex; a close starting point for the factored one.
fn unfactored_start(
    g: &[f64],
    dim: usize,
    y0: &[f64; 3],
    e: &[[f64; 3]],
    verts: &[Neighbor],
) -> Option<[f64; 2]> {
    let m = e.len();
    let w0 = [-y0[0], -y0[1], -y0[2]];
    let cc = quad(g, dim, &w0, &w0);
    let mut delta = [0.0; 2];
    let mut bvec = [0.0; 2];
    let mut a = [[0.0; 2]; 2];
    for k in 0..m {
        delta[k] = verts[k + 1].value - verts[0].value;
        bvec[k] = quad(g, dim, &e[k], &w0);
        for l in 0..m {
            a[k][l] = quad(g, dim, &e[k], &e[l]);
        }
    }
    let inv = if m == 1 {
        if !(a[0][0] > 0.0) {
            return None;
        }
        [[1.0 / a[0][0], 0.0], [0.0, 0.0]]
    } else {
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        if !(det > 0.0) {
            return None;
        }
        [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]]
    };
    let apply = |v: [f64; 2]| [inv[0][0] * v[0] + inv[0][1] * v[1], inv[1][0] * v[0] + inv[1][1] * v[1]];
    let ad = apply(delta);
    let q = delta[0] * ad[0] + delta[1] * ad[1];
    if q >= 1.0 {
        return None;
    }
    let ab = apply(bvec);
    let dd = (cc - (bvec[0] * ab[0] + bvec[1] * ab[1])).max(0.0);
    let s = (dd / (1.0 - q)).sqrt();
    let lam = apply([bvec[0] - delta[0] * s, bvec[1] - delta[1] * s]);
    let mut l = [lam[0].clamp(0.0, 1.0), if m > 1 { lam[1].clamp(0.0, 1.0) } else { 0.0 }];
    let sum = l[0] + l[1];
    if sum > 1.0 {
        l[0] /= sum;
        l[1] /= sum;
    }
    Some(l)
}

/// Factored Hopf–Lax candidate over every simplex formed by the node and its
/// known axis neighbours, never above `current`. Simplices whose vertices all
/// exceed the running minimum cannot lower it and are skipped. `nbrs[2 * axis]` is the lower neighbour,
/// `nbrs[2 * axis + 1]` the upper.
pub(super) fn hopf_lax(local: &Local, nbrs: &[Option<Neighbor>; 6], current: f64) -> f64 {
    let dim = local.dim;
    let mut best = current;
    for n in nbrs.iter().take(2 * dim).flatten() {
        best = best.min(simplex_update(local, std::slice::from_ref(n)));
    }
    for i in 0..dim {
        for j in (i + 1)..dim {
            for si in 0..2 {
                for sj in 0..2 {
                    if let (Some(a), Some(b)) = (nbrs[2 * i + si], nbrs[2 * j + sj]) {
                        if a.value.min(b.value) < best {
                            best = best.min(simplex_update(local, &[a, b]));
                        }
                    }
                }
            }
        }
    }
    if dim == 3 {
        for s0 in 0..2 {
            for s1 in 0..2 {
                for s2 in 0..2 {
                    if let (Some(a), Some(b), Some(c)) = (nbrs[s0], nbrs[2 + s1], nbrs[4 + s2]) {
                        if a.value.min(b.value).min(c.value) < best {
                            best = best.min(simplex_update(local, &[a, b, c]));
                        }
                    }
                }
            }
        }
    }
    best
}

/// Lax–Friedrichs update for `H(p) = √(pᵀ G p) = 1` with viscosities `sigma`.
///
/// `pairs[axis] = (u_lower, u_upper)`; `G` is the inverse metric at the node.
pub(super) fn lax_friedrichs(
    ginv: &[f64],
    dim: usize,
    spacing: &[f64],
    sigma: &[f64],
    pairs: &[(f64, f64); 3],
) -> f64 {
    let mut p = [0.0; 3];
    let mut num = 1.0;
    let mut den = 0.0;
    for i in 0..dim {
        let (lo, hi) = pairs[i];
        p[i] = (hi - lo) / (2.0 * spacing[i]);
        num += sigma[i] * (hi + lo) / (2.0 * spacing[i]);
        den += sigma[i] / spacing[i];
    }
    let mut hh = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            hh += ginv[i * dim + j] * p[i] * p[j];
        }
    }
    (num - hh.max(0.0).sqrt()) / den
}
