//! Seeded parameter initialization helpers.

use maskvoice_autodiff::{ParamStore, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub(crate) fn normal<R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

pub(crate) fn insert_normal<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    name: &str,
    shape: &[usize],
    std: f64,
) {
    let n = shape.iter().product();
    store.insert(name, Tensor::new(shape, normal(rng, n, std)).expect("shape matches"));
}

pub(crate) fn insert_full(store: &mut ParamStore, name: &str, shape: &[usize], value: f64) {
    store.insert(name, Tensor::full(shape, value));
}
