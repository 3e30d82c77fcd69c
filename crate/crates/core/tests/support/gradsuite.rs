//! Analytic gradients against central finite differences. Each check panics on mismatch.

use panvae::gradcheck::{central_difference, relative_error, STEP};
use panvae::losses::{
    kl_diag_gaussian_to_unit, kl_diag_gaussian_to_unit_grad, latent_objective, mixture_kl,
    mixture_kl_grad, orthonormality_loss, orthonormality_loss_grad, prediction_loss_logit_grad,
    volumetric_loss, volumetric_loss_grad, LatentBatch, LossWeights, Variant,
};
use panvae::model::{ClassifierHead, PosteriorParams, PrototypeBank, SimilarityMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const INSTANCES: u64 = 20;
const TOL: f64 = 1e-4;

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn sigmas(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.4..1.6)).collect()
}

fn check(what: &str, seed: u64, analytic: &[f64], numeric: &[f64]) {
    let err = relative_error(analytic, numeric);
    assert!(err <= TOL, "{what}, seed {seed}: relative error {err:e}");
}

/// (K, M, d) with K ≤ 3, M ≤ 4, M ≤ d ≤ 8.
fn shape(rng: &mut ChaCha8Rng, min_k: usize, min_m: usize) -> (usize, usize, usize) {
    let k = rng.random_range(min_k..=3);
    let m = rng.random_range(min_m..=4);
    let d = rng.random_range(m.max(2)..=8);
    (k, m, d)
}

fn bank_from(k: usize, m: usize, d: usize, phi: &[f64], active: &[bool]) -> PrototypeBank {
    let mut bank = PrototypeBank::from_vectors(k, m, d, phi.to_vec()).unwrap();
    bank.active = active.to_vec();
    bank
}

/// Every class keeps at least `keep` active prototypes.
fn random_mask(rng: &mut ChaCha8Rng, k: usize, m: usize, keep: usize) -> Vec<bool> {
    let mut mask = vec![true; k * m];
    for c in 0..k {
        if m > keep && rng.random_bool(0.3) {
            mask[c * m + rng.random_range(0..m)] = false;
        }
    }
    mask
}

pub fn cross_entropy_logits() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, b) = (rng.random_range(2..=3), rng.random_range(1..=5));
        let logits: Vec<Vec<f64>> = (0..b).map(|_| normals(&mut rng, k)).collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let (_, grad) = prediction_loss_logit_grad(&logits, &labels);
        let flat: Vec<f64> = logits.concat();
        let numeric = central_difference(
            |x| {
                let rows: Vec<Vec<f64>> = x.chunks(k).map(<[f64]>::to_vec).collect();
                prediction_loss_logit_grad(&rows, &labels).0
            },
            &flat,
            STEP,
        );
        check("cross-entropy", seed, &grad.concat(), &numeric);
    }
}

pub fn closed_form_kl() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(1..=8);
        let (mu, sigma, center) = (
            normals(&mut rng, d),
            sigmas(&mut rng, d),
            normals(&mut rng, d),
        );
        let p = PosteriorParams::new(mu.clone(), sigma.clone()).unwrap();
        let (_, g) = kl_diag_gaussian_to_unit_grad(&p, &center);
        let kl = |m: &[f64], s: &[f64], c: &[f64]| {
            kl_diag_gaussian_to_unit(&PosteriorParams::new(m.to_vec(), s.to_vec()).unwrap(), c)
        };
        check(
            "kl/mu",
            seed,
            &g.mu,
            &central_difference(|x| kl(x, &sigma, &center), &mu, STEP),
        );
        check(
            "kl/sigma",
            seed,
            &g.sigma,
            &central_difference(|x| kl(&mu, x, &center), &sigma, STEP),
        );
        check(
            "kl/center",
            seed,
            &g.center,
            &central_difference(|x| kl(&mu, &sigma, x), &center, STEP),
        );
    }
}

pub fn similarity_weighted_mixture_kl() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (k, m, d) = shape(&mut rng, 1, 1);
        let b = rng.random_range(1..=4);
        let phi = normals(&mut rng, k * m * d);
        let mask = random_mask(&mut rng, k, m, 1);
        let bank = bank_from(k, m, d, &phi, &mask);
        let mu = normals(&mut rng, b * d);
        let sigma = sigmas(&mut rng, b * d);
        let sims: Vec<f64> = (0..b * k * m).map(|_| rng.random_range(0.2..5.0)).collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();

        let eval = |mu: &[f64], sigma: &[f64], sims: &[f64], phi: &[f64]| {
            let posts: Vec<PosteriorParams> = (0..b)
                .map(|i| {
                    PosteriorParams::new(
                        mu[i * d..(i + 1) * d].to_vec(),
                        sigma[i * d..(i + 1) * d].to_vec(),
                    )
                    .unwrap()
                })
                .collect();
            let s: Vec<SimilarityMatrix> = sims
                .chunks(k * m)
                .map(|v| SimilarityMatrix {
                    num_classes: k,
                    per_class: m,
                    values: v.to_vec(),
                })
                .collect();
            let bank = bank_from(k, m, d, phi, &mask);
            (posts, s, bank)
        };
        let (posts, s, _) = eval(&mu, &sigma, &sims, &phi);
        let (_, g) = mixture_kl_grad(&posts, &s, &labels, &bank);
        let value = |mu: &[f64], sigma: &[f64], sims: &[f64], phi: &[f64]| {
            let (p, s, bank) = eval(mu, sigma, sims, phi);
            mixture_kl(&p, &s, &labels, &bank)
        };
        check(
            "mixture/mu",
            seed,
            &g.mu.concat(),
            &central_difference(|x| value(x, &sigma, &sims, &phi), &mu, STEP),
        );
        check(
            "mixture/sigma",
            seed,
            &g.sigma.concat(),
            &central_difference(|x| value(&mu, x, &sims, &phi), &sigma, STEP),
        );
        check(
            "mixture/similarity",
            seed,
            &g.similarity.concat(),
            &central_difference(|x| value(&mu, &sigma, x, &phi), &sims, STEP),
        );
        check(
            "mixture/phi",
            seed,
            &g.phi,
            &central_difference(|x| value(&mu, &sigma, &sims, x), &phi, STEP),
        );
    }
}

pub fn orthonormality() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (k, m, d) = shape(&mut rng, 1, 2);
        let phi = normals(&mut rng, k * m * d);
        let mask = random_mask(&mut rng, k, m, 2);
        let (_, g) = orthonormality_loss_grad(&bank_from(k, m, d, &phi, &mask));
        let numeric = central_difference(
            |x| orthonormality_loss(&bank_from(k, m, d, x, &mask)),
            &phi,
            STEP,
        );
        check("orthonormality", seed, &g, &numeric);
    }
}

pub fn volumetric() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (k, m, d) = shape(&mut rng, 1, 1);
        let phi = normals(&mut rng, k * m * d);
        let mask = random_mask(&mut rng, k, m, 1);
        let (_, _, g) = volumetric_loss_grad(&bank_from(k, m, d, &phi, &mask), 1e-8).unwrap();
        let numeric = central_difference(
            |x| {
                volumetric_loss(&bank_from(k, m, d, x, &mask), 1e-8)
                    .unwrap()
                    .0
            },
            &phi,
            STEP,
        );
        check("volumetric", seed, &g, &numeric);
    }
}

pub fn nearly_collapsed_class_is_pushed_apart() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let base = normals(&mut rng, 4);
    let mut phi = base.clone();
    phi.extend(
        base.iter()
            .zip(normals(&mut rng, 4))
            .map(|(b, e)| b + 1e-3 * e),
    );
    let bank = PrototypeBank::from_vectors(1, 2, 4, phi.clone()).unwrap();
    let (loss, _, g) = volumetric_loss_grad(&bank, 1e-8).unwrap();
    assert!(loss.is_finite() && loss > 100.0);
    let numeric = central_difference(
        |x| {
            volumetric_loss(
                &PrototypeBank::from_vectors(1, 2, 4, x.to_vec()).unwrap(),
                1e-8,
            )
            .unwrap()
            .0
        },
        &phi,
        1e-7,
    );
    check("collapsed volumetric", 7, &g, &numeric);
    // a small step against the gradient increases the separation
    let stepped: Vec<f64> = phi
        .iter()
        .zip(&g)
        .map(|(p, g)| p - 1e-6 * g / loss)
        .collect();
    let sep = |v: &[f64]| (0..4).map(|t| (v[t] - v[4 + t]).powi(2)).sum::<f64>();
    assert!(sep(&stepped) > sep(&phi));
}

pub fn full_latent_objective() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let variant = if seed % 2 == 0 {
            Variant::PanVae
        } else {
            Variant::ProtoVae
        };
        let min_m = if variant == Variant::ProtoVae { 2 } else { 1 };
        let (k, m, d) = shape(&mut rng, 2, min_m);
        let b = rng.random_range(1..=4);
        let phi = normals(&mut rng, k * m * d);
        let mask = random_mask(&mut rng, k, m, min_m);
        let head = normals(&mut rng, k * m * k);
        let mu = normals(&mut rng, b * d);
        let sigma = sigmas(&mut rng, b * d);
        let noise = normals(&mut rng, b * d);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let weights = LossWeights {
            pred: rng.random_range(0.5..2.0),
            vae_recon: 1.0,
            vae_kl: rng.random_range(0.5..2.0),
            diversity: rng.random_range(0.5..2.0),
            jitter: 1e-8,
        };
        let eps = 1e-4;
        let total = |mu: &[f64], sigma: &[f64], phi: &[f64], head: &[f64]| {
            let bank = bank_from(k, m, d, phi, &mask);
            let h = ClassifierHead {
                num_classes: k,
                inputs: k * m,
                weights: head.to_vec(),
            };
            let batch = LatentBatch {
                mu,
                sigma,
                noise: &noise,
                labels: &labels,
            };
            latent_objective(variant, &weights, eps, &bank, &h, &batch, 0.0).unwrap()
        };
        let out = total(&mu, &sigma, &phi, &head);
        let (dmu, dsigma) = out.grads.posterior(None, &noise);
        let value = |mu: &[f64], sigma: &[f64], phi: &[f64], head: &[f64]| {
            total(mu, sigma, phi, head).breakdown.total
        };
        check(
            "objective/mu",
            seed,
            &dmu,
            &central_difference(|x| value(x, &sigma, &phi, &head), &mu, STEP),
        );
        check(
            "objective/sigma",
            seed,
            &dsigma,
            &central_difference(|x| value(&mu, x, &phi, &head), &sigma, STEP),
        );
        check(
            "objective/phi",
            seed,
            &out.grads.phi,
            &central_difference(|x| value(&mu, &sigma, x, &head), &phi, STEP),
        );
        check(
            "objective/head",
            seed,
            &out.grads.head,
            &central_difference(|x| value(&mu, &sigma, &phi, x), &head, STEP),
        );
    }
}
