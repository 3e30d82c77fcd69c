//! Library metrics against the brute-force references, 50 seeds each. Every
//! check panics on the first mismatch.

use panvae::losses::{gramian, kl_diag_gaussian_to_unit};
use panvae::metrics::{
    assign_global, convex_hull, coverage_ratio, db_index, prototype_group_distribution, Point2,
};
use panvae::model::{PosteriorParams, PrototypeBank};
use panvae::pruning::responsibility_counts;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::brute;

pub const SEEDS: u64 = 50;
const EPS: f64 = 1e-4;

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn cloud(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| normals(rng, d).into_iter().map(|v| scale * v).collect())
        .collect()
}

struct RandomBank {
    bank: PrototypeBank,
    protos: Vec<Vec<f64>>,
}

/// Random bank; every class keeps at least one active prototype. With
/// `duplicates`, some prototypes copy an earlier one of their class.
fn random_bank(rng: &mut ChaCha8Rng, k: usize, m: usize, d: usize, duplicates: bool) -> RandomBank {
    let mut protos = cloud(rng, k * m, d, 2.0);
    if duplicates {
        for p in 0..k * m {
            if p % m > 0 && rng.random_bool(0.3) {
                protos[p] = protos[p - 1].clone();
            }
        }
    }
    let mut bank = PrototypeBank::from_vectors(k, m, d, protos.concat()).unwrap();
    for c in 0..k {
        for j in 0..m {
            if rng.random_bool(0.25) && bank.active_in_class(c).len() > 1 {
                bank.active[c * m + j] = false;
            }
        }
    }
    RandomBank { bank, protos }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub fn davies_bouldin() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let d = rng.random_range(1..=6);
        let (k, m) =
            [(1, 2), (2, 1), (2, 2), (1, 4), (4, 1), (1, 3), (3, 1)][rng.random_range(0..7)];
        let RandomBank { bank, protos } = random_bank(&mut rng, k, m, d, false);
        let n = rng.random_range(1..=50);
        let points = cloud(&mut rng, n, d, 2.5);
        let assignment = assign_global(&points, &bank, EPS);
        let got = db_index(&points, &bank, &assignment);
        match brute::davies_bouldin(&points, &protos, &bank.active) {
            Some(want) => {
                let got = got.unwrap_or_else(|e| panic!("seed {seed}: {e}")).value;
                assert!(
                    close(got, want, 1e-12),
                    "seed {seed}: DB {got} vs oracle {want}"
                );
            }
            None => assert!(
                got.is_err(),
                "seed {seed}: oracle has fewer than 2 clusters"
            ),
        }
    }
}

/// Half the seeds use small integer grids, which produce duplicates and
/// collinear boundary points with exact arithmetic.
pub fn convex_hulls() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let n = rng.random_range(1..=200);
        let points: Vec<Point2> = if seed % 2 == 0 {
            let side = rng.random_range(2..=8) as f64;
            (0..n)
                .map(|_| {
                    [
                        rng.random_range(0..=side as i64) as f64,
                        rng.random_range(0..=side as i64) as f64,
                    ]
                })
                .collect()
        } else {
            (0..n)
                .map(|_| {
                    [
                        StandardNormal.sample(&mut rng),
                        StandardNormal.sample(&mut rng),
                    ]
                })
                .collect()
        };
        let (want_vertices, want_area) = brute::hull(&points);
        match convex_hull(&points) {
            Ok(h) => {
                let mut got = h.vertices.clone();
                got.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
                assert_eq!(got, want_vertices, "seed {seed}: vertex sets differ");
                assert!(
                    close(h.area, want_area, 1e-12),
                    "seed {seed}: area {} vs {want_area}",
                    h.area
                );
            }
            Err(_) => assert_eq!(
                want_area, 0.0,
                "seed {seed}: hull rejected a non-degenerate set"
            ),
        }
    }
}

pub fn responsibility() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let (k, m, d) = (
            rng.random_range(1..=4),
            rng.random_range(1..=5),
            rng.random_range(1..=6),
        );
        let RandomBank { bank, protos } = random_bank(&mut rng, k, m, d, true);
        let n = rng.random_range(k..=120);
        let points = cloud(&mut rng, n, d, 2.5);
        let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        labels[..k].iter_mut().enumerate().for_each(|(c, l)| *l = c);
        let got = responsibility_counts(&points, &labels, &bank, EPS).unwrap();
        let want = brute::responsibilities(&points, &labels, &protos, &bank.active, m);
        assert_eq!(got.counts, want, "seed {seed}");
    }
}

pub const KL_SAMPLES: usize = 1_000_000;

pub fn kl_monte_carlo() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        let d = rng.random_range(1..=4);
        let mu = normals(&mut rng, d);
        let sigma: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..1.5)).collect();
        let c = normals(&mut rng, d);
        let closed = kl_diag_gaussian_to_unit(
            &PosteriorParams::new(mu.clone(), sigma.clone()).unwrap(),
            &c,
        );
        let (mc, se) = brute::kl_monte_carlo(&mu, &sigma, &c, KL_SAMPLES, &mut rng);
        assert!(
            (closed - mc).abs() <= 3.0 * se,
            "seed {seed}: closed form {closed} vs Monte Carlo {mc} ± {se}"
        );
    }
}

pub fn gram_determinant() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let (m, d) = (3, 8);
        let phi = normals(&mut rng, m * d);
        let bank = PrototypeBank::from_vectors(1, m, d, phi.clone()).unwrap();
        let g = gramian(&bank, 0, 0.0).unwrap();
        let cols: Vec<&[f64]> = phi.chunks(d).collect();
        let gram: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| cols[i].iter().zip(cols[j]).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect();
        let want = brute::det(&gram).ln();
        assert!(
            (g.log_det - want).abs() <= 1e-8,
            "seed {seed}: {} vs {want}",
            g.log_det
        );
    }
}

pub fn coverage() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(6000 + seed);
        let (k, m, d) = (
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            rng.random_range(2..=5),
        );
        let RandomBank { bank, protos } = random_bank(&mut rng, k, m, d, false);
        let class = rng.random_range(0..k);
        let n = rng.random_range(3..=80);
        let emb = cloud(&mut rng, n, d, 2.0);
        let projected: Vec<Point2> = emb.iter().map(|z| [z[0], z[1]]).collect();
        let n_nearest = rng.random_range(1..=n + 5);
        let mut sample = vec![false; n];
        for j in bank.active_in_class(class) {
            brute::n_nearest(&emb, &protos[class * m + j], n_nearest)
                .into_iter()
                .for_each(|i| sample[i] = true);
        }
        let sample_pts: Vec<Point2> = (0..n)
            .filter(|&i| sample[i])
            .map(|i| projected[i])
            .collect();
        let (_, full) = brute::hull(&projected);
        let (_, part) = brute::hull(&sample_pts);
        match coverage_ratio(&emb, &projected, &bank, class, EPS, n_nearest) {
            Ok(c) => {
                let want: Vec<usize> = (0..n).filter(|&i| sample[i]).collect();
                assert_eq!(c.sample, want, "seed {seed}: neighborhoods");
                assert!(
                    close(c.ratio, part / full, 1e-12),
                    "seed {seed}: {} vs {}",
                    c.ratio,
                    part / full
                );
            }
            Err(_) => assert!(
                full == 0.0 || part == 0.0,
                "seed {seed}: coverage rejected valid hulls"
            ),
        }
    }
}

pub fn group_distribution() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let (k, m, d) = (
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            rng.random_range(1..=5),
        );
        let RandomBank { bank, protos } = random_bank(&mut rng, k, m, d, true);
        let n = rng.random_range(1..=60);
        let emb = cloud(&mut rng, n, d, 2.0);
        let num_groups = rng.random_range(1..=4);
        let mut groups: Vec<usize> = (0..n).map(|_| rng.random_range(0..num_groups)).collect();
        groups[0] = num_groups - 1;
        let got = prototype_group_distribution(&emb, Some(&groups), &bank, EPS).unwrap();
        let counts = brute::group_tally(&emb, &groups, &protos, &bank.active);
        let total: usize = counts.iter().sum();
        let want: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        assert_eq!(got.probabilities, want, "seed {seed}");
    }
}
