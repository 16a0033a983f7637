use crate::model::{generate_instance, GenerationConfig, MarketInstance};

pub fn single_user() -> MarketInstance<f64> {
    MarketInstance::homogeneous(1, 30.0, 30.0, 0.0, 3.0, 2.0, 5.0, 5.0).unwrap()
}

pub fn two_user(g12: f64) -> MarketInstance<f64> {
    MarketInstance::homogeneous(2, 30.0, 30.0, g12, 3.0, 2.0, 5.0, 5.0).unwrap()
}

pub fn random_instance(n: usize, seed: u64) -> MarketInstance<f64> {
    generate_instance(&GenerationConfig {
        n,
        seed,
        ..Default::default()
    })
    .unwrap()
}
