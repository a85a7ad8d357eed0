//! Dynamic-programming search for the reparameterization minimizing
//! `‖q1 - (q2 ∘ γ) sqrt(γ')‖²` over monotone lattice paths.

/// Local steps `(p, s)`: `p` cells along the `q1` axis, `s` along `q2`.
const MAX_STEP: usize = 4;
/// Fractional positions on the `q2` axis are multiples of `1/12`, the lcm of
/// the step lengths.
const SUB: usize = 12;

/// Optimal lattice path from `(0, 0)` to `(g - 1, g - 1)` on the samples of
/// `q1` and `q2` (both of length `g`, plane-valued).
///
/// Returns the path vertices as index pairs and its discrete cost. Segment
/// costs use the left rectangle rule, which is exact bookkeeping for
/// periodic samples where the last point repeats the first.
pub(crate) fn dp_path(q1: &[[f64; 2]], q2: &[[f64; 2]]) -> (Vec<(usize, usize)>, f64) {
    let g = q1.len();
    assert_eq!(g, q2.len());
    assert!(g >= 2);
    let h = 1.0 / (g - 1) as f64;

    let fine = SUB * (g - 1) + 1;
    let mut table = Vec::with_capacity(fine);
    for u in 0..fine {
        let k = u / SUB;
        let frac = (u % SUB) as f64 / SUB as f64;
        if k + 1 < g {
            let a = q2[k];
            let b = q2[k + 1];
            table.push([a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1])]);
        } else {
            table.push(q2[k]);
        }
    }

    let steps: Vec<(usize, usize, f64)> = (1..=MAX_STEP)
        .flat_map(|p| (1..=MAX_STEP).map(move |s| (p, s, (s as f64 / p as f64).sqrt())))
        .collect();

    let mut energy = vec![f64::INFINITY; g * g];
    let mut back = vec![u8::MAX; g * g];
    energy[0] = 0.0;
    let last = g - 1;
    for i in 1..g {
        for j in 1..g {
            // Cells off every admissible path from the start to the end.
            let (ri, rj) = (last - i, last - j);
            if j > MAX_STEP * i || i > MAX_STEP * j || rj > MAX_STEP * ri || ri > MAX_STEP * rj {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut arg = u8::MAX;
            for (idx, &(p, s, root)) in steps.iter().enumerate() {
                if p > i || s > j {
                    continue;
                }
                let (k, l) = (i - p, j - s);
                let prev = energy[k * g + l];
                if !prev.is_finite() {
                    continue;
                }
                let stride = s * SUB / p;
                let mut seg = 0.0;
                let mut pos = l * SUB;
                for a in &q1[k..i] {
                    let b = table[pos];
                    let dx = a[0] - root * b[0];
                    let dy = a[1] - root * b[1];
                    seg += dx * dx + dy * dy;
                    pos += stride;
                }
                let cand = prev + seg * h;
                if cand < best {
                    best = cand;
                    arg = idx as u8;
                }
            }
            energy[i * g + j] = best;
            back[i * g + j] = arg;
        }
    }

    let mut path = vec![(g - 1, g - 1)];
    let (mut i, mut j) = (g - 1, g - 1);
    while i > 0 || j > 0 {
        let (p, s, _) = steps[back[i * g + j] as usize];
        i -= p;
        j -= s;
        path.push((i, j));
    }
    path.reverse();
    (path, energy[g * g - 1])
}

/// Piecewise-linear warp through the path vertices, evaluated at `m`
/// uniform points of `[0, 1]`.
pub(crate) fn path_to_warp(path: &[(usize, usize)], g: usize, m: usize) -> Vec<f64> {
    let scale = (g - 1) as f64;
    let mut out = Vec::with_capacity(m);
    let mut seg = 0;
    for k in 0..m {
        let t = k as f64 / (m - 1) as f64 * scale;
        while seg + 2 < path.len() && (path[seg + 1].0 as f64) < t {
            seg += 1;
        }
        let (x0, y0) = (path[seg].0 as f64, path[seg].1 as f64);
        let (x1, y1) = (path[seg + 1].0 as f64, path[seg + 1].1 as f64);
        let frac = ((t - x0) / (x1 - x0)).clamp(0.0, 1.0);
        out.push((y0 + frac * (y1 - y0)) / scale);
    }
    out[0] = 0.0;
    out[m - 1] = 1.0;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn circle(g: usize) -> Vec<[f64; 2]> {
        (0..g)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / (g - 1) as f64;
                [-(t.sin()) + 0.3 * (3.0 * t).cos(), t.cos()]
            })
            .collect()
    }

    #[test]
    fn identical_inputs_follow_diagonal() {
        let q = circle(60);
        let (path, cost) = dp_path(&q, &q);
        assert!(cost < 1e-12);
        assert!(path.iter().all(|(i, j)| i == j));
        let w = path_to_warp(&path, 60, 101);
        for (k, v) in w.iter().enumerate() {
            assert!((v - k as f64 / 100.0).abs() < 1e-12);
        }
    }

    #[test]
    fn path_is_monotone_and_anchored() {
        let q1 = circle(50);
        let q2: Vec<[f64; 2]> = circle(50).iter().map(|p| [p[1], -p[0]]).collect();
        let (path, cost) = dp_path(&q1, &q2);
        assert!(cost.is_finite());
        assert_eq!(path[0], (0, 0));
        assert_eq!(*path.last().unwrap(), (49, 49));
        for w in path.windows(2) {
            assert!(w[1].0 > w[0].0 && w[1].1 > w[0].1);
            assert!(w[1].0 - w[0].0 <= MAX_STEP && w[1].1 - w[0].1 <= MAX_STEP);
        }
        let diagonal: f64 = q1
            .iter()
            .zip(&q2)
            .take(49)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)) / 49.0)
            .sum();
        assert!(cost <= diagonal + 1e-12);
    }

    #[test]
    fn brute_force_on_tiny_lattice() {
        // Exhaustive enumeration of all admissible paths on a 6x6 lattice.
        let q1: Vec<[f64; 2]> = (0..6).map(|k| [(k as f64).sin(), (k as f64 * 0.7).cos()]).collect();
        let q2: Vec<[f64; 2]> = (0..6).map(|k| [(k as f64 * 1.3).cos(), (k as f64).sin() + 0.2]).collect();
        let h = 1.0 / 5.0;
        let interp = |x: f64| -> [f64; 2] {
            let k = (x.floor() as usize).min(4);
            let f = x - k as f64;
            [q2[k][0] + f * (q2[k + 1][0] - q2[k][0]), q2[k][1] + f * (q2[k + 1][1] - q2[k][1])]
        };
        fn search(
            i: usize,
            j: usize,
            acc: f64,
            best: &mut f64,
            seg: &dyn Fn(usize, usize, usize, usize) -> f64,
        ) {
            if i == 5 && j == 5 {
                *best = best.min(acc);
                return;
            }
            for p in 1..=4 {
                for s in 1..=4 {
                    if i + p <= 5 && j + s <= 5 {
                        search(i + p, j + s, acc + seg(i, j, p, s), best, seg);
                    }
                }
            }
        }
        let seg = |i: usize, j: usize, p: usize, s: usize| -> f64 {
            let m = s as f64 / p as f64;
            (0..p)
                .map(|u| {
                    let b = interp(j as f64 + u as f64 * m);
                    let a = q1[i + u];
                    ((a[0] - m.sqrt() * b[0]).powi(2) + (a[1] - m.sqrt() * b[1]).powi(2)) * h
                })
                .sum()
        };
        let mut best = f64::INFINITY;
        search(0, 0, 0.0, &mut best, &seg);
        let (_, cost) = dp_path(&q1, &q2);
        assert!((cost - best).abs() < 1e-12, "{cost} vs {best}");
    }
}
