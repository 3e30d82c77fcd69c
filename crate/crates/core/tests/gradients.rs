//! Analytic gradients against central finite differences.

mod support;

use support::gradsuite;

#[test]
fn cross_entropy_logits() {
    gradsuite::cross_entropy_logits();
}

#[test]
fn closed_form_kl() {
    gradsuite::closed_form_kl();
}

#[test]
fn similarity_weighted_mixture_kl() {
    gradsuite::similarity_weighted_mixture_kl();
}

#[test]
fn orthonormality() {
    gradsuite::orthonormality();
}

#[test]
fn volumetric() {
    gradsuite::volumetric();
}

#[test]
fn nearly_collapsed_class_is_pushed_apart() {
    gradsuite::nearly_collapsed_class_is_pushed_apart();
}

#[test]
fn full_latent_objective() {
    gradsuite::full_latent_objective();
}
