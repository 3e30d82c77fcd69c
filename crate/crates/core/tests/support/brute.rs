//! Slow, direct reference implementations. Nothing here calls into the
//! library's metric code.

pub type Pt = [f64; 2];

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the smallest distance from `z` among `candidates`; ties to the
/// lowest index.
pub fn nearest(z: &[f64], protos: &[Vec<f64>], candidates: &[usize]) -> Option<usize> {
    let mut best = None;
    for &c in candidates {
        let dist = sq_dist(z, &protos[c]);
        match best {
            Some((_, b)) if dist >= b => {}
            _ => best = Some((c, dist)),
        }
    }
    best.map(|(c, _)| c)
}

/// Davies-Bouldin from the definition: assign each point to its nearest
/// active prototype, drop prototypes without members, build the full R
/// matrix and average the row maxima. `None` when fewer than two clusters.
pub fn davies_bouldin(points: &[Vec<f64>], protos: &[Vec<f64>], active: &[bool]) -> Option<f64> {
    let candidates: Vec<usize> = (0..protos.len()).filter(|&p| active[p]).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); protos.len()];
    for (i, z) in points.iter().enumerate() {
        members[nearest(z, protos, &candidates)?].push(i);
    }
    let used: Vec<usize> = candidates
        .into_iter()
        .filter(|&p| !members[p].is_empty())
        .collect();
    let n = used.len();
    if n < 2 {
        return None;
    }
    let scatter: Vec<f64> = used
        .iter()
        .map(|&p| {
            let m = &members[p];
            m.iter()
                .map(|&i| sq_dist(&points[i], &protos[p]).sqrt())
                .sum::<f64>()
                / m.len() as f64
        })
        .collect();
    let mut r = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            if a != b {
                r[a][b] =
                    (scatter[a] + scatter[b]) / sq_dist(&protos[used[a]], &protos[used[b]]).sqrt();
            }
        }
    }
    let sum: f64 = (0..n)
        .map(|a| {
            (0..n)
                .filter(|&b| b != a)
                .map(|b| r[a][b])
                .fold(f64::MIN, f64::max)
        })
        .sum();
    Some(sum / n as f64)
}

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(a: Pt, b: Pt, p: Pt) -> bool {
    p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

/// Hull by testing every ordered pair as a counter-clockwise edge against all
/// other points, O(n³). Returns the sorted vertex set and the area summed
/// over edges. Area is 0 for degenerate input.
pub fn hull(points: &[Pt]) -> (Vec<Pt>, f64) {
    let mut pts: Vec<Pt> = Vec::new();
    for p in points {
        if !pts.contains(p) {
            pts.push(*p);
        }
    }
    let n = pts.len();
    let mut vertices: Vec<Pt> = Vec::new();
    let mut twice = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let edge = (0..n).filter(|&k| k != i && k != j).all(|k| {
                let c = cross(pts[i], pts[j], pts[k]);
                c > 0.0 || (c == 0.0 && on_segment(pts[i], pts[j], pts[k]))
            });
            if edge {
                twice += pts[i][0] * pts[j][1] - pts[j][0] * pts[i][1];
                for v in [pts[i], pts[j]] {
                    if !vertices.contains(&v) {
                        vertices.push(v);
                    }
                }
            }
        }
    }
    let area = 0.5 * twice;
    if n < 3 || area <= 0.0 {
        return (Vec::new(), 0.0);
    }
    vertices.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    (vertices, area)
}

/// `counts[k·M + j]` by scanning every own-class active prototype per point.
pub fn responsibilities(
    points: &[Vec<f64>],
    labels: &[usize],
    protos: &[Vec<f64>],
    active: &[bool],
    m: usize,
) -> Vec<usize> {
    let mut counts = vec![0; protos.len()];
    for (z, &k) in points.iter().zip(labels) {
        let own: Vec<usize> = (k * m..(k + 1) * m).filter(|&p| active[p]).collect();
        counts[nearest(z, protos, &own).expect("class has an active prototype")] += 1;
    }
    counts
}

/// Point `i` is among the `n` nearest to `proto` when fewer than `n` points
/// precede it in (distance, index) order.
pub fn n_nearest(points: &[Vec<f64>], proto: &[f64], n: usize) -> Vec<usize> {
    let d: Vec<f64> = points.iter().map(|z| sq_dist(z, proto)).collect();
    (0..points.len())
        .filter(|&i| {
            (0..points.len())
                .filter(|&o| d[o] < d[i] || (d[o] == d[i] && o < i))
                .count()
                < n
        })
        .collect()
}

/// Group of the nearest point to every active prototype, tallied.
pub fn group_tally(
    points: &[Vec<f64>],
    groups: &[usize],
    protos: &[Vec<f64>],
    active: &[bool],
) -> Vec<usize> {
    let num_groups = groups.iter().max().map_or(0, |g| g + 1);
    let mut counts = vec![0; num_groups];
    let all: Vec<usize> = (0..points.len()).collect();
    for (p, proto) in protos.iter().enumerate() {
        if active[p] {
            let i = nearest(proto, points, &all).expect("points");
            counts[groups[i]] += 1;
        }
    }
    counts
}

/// Laplace cofactor expansion along the first row.
pub fn det(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    if n == 1 {
        return a[0][0];
    }
    (0..n)
        .map(|c| {
            let minor: Vec<Vec<f64>> = a[1..]
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .filter(|&(j, _)| j != c)
                        .map(|(_, v)| *v)
                        .collect()
                })
                .collect();
            let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
            sign * a[0][c] * det(&minor)
        })
        .sum()
}

/// Monte Carlo estimate of `KL(N(mu, diag σ²) ‖ N(c, I))` and its standard
/// error, from `samples` draws of the log density ratio.
pub fn kl_monte_carlo(
    mu: &[f64],
    sigma: &[f64],
    c: &[f64],
    samples: usize,
    rng: &mut impl rand::Rng,
) -> (f64, f64) {
    use rand_distr::{Distribution, StandardNormal};
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let log_sigma: f64 = sigma.iter().map(|s| s.ln()).sum();
    for _ in 0..samples {
        let mut log_ratio = -log_sigma;
        for t in 0..mu.len() {
            let e: f64 = StandardNormal.sample(rng);
            let z = mu[t] + sigma[t] * e;
            // log q - log p; the 2π terms cancel
            log_ratio += -0.5 * e * e + 0.5 * (z - c[t]) * (z - c[t]);
        }
        sum += log_ratio;
        sum_sq += log_ratio * log_ratio;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}
