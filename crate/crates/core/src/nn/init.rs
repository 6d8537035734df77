//! Seeded weight initialisers. Biases start at zero.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::layers::LayerParams;
use super::{Scalar, Tensor};

fn uniform<T: Scalar, R: Rng>(shape: Vec<usize>, limit: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite init limit");
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// U(−√(6/fan_in), √(6/fan_in)), for layers followed by ReLU.
pub fn he_uniform<T: Scalar, R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor<T> {
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

/// U(−√(6/(fan_in+fan_out)), +…), for layers feeding sigmoid or softmax.
pub fn glorot_uniform<T: Scalar, R: Rng>(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    uniform(shape, (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}

pub fn conv_params<T: Scalar, R: Rng>(kernel: usize, cin: usize, cout: usize, rng: &mut R) -> LayerParams<T> {
    LayerParams {
        weights: he_uniform(vec![kernel, cin, cout], kernel * cin, rng),
        bias: Tensor::zeros(vec![cout]),
        trainable: true,
    }
}

/// Dense parameters; `relu` selects He, otherwise Glorot.
pub fn dense_params<T: Scalar, R: Rng>(inputs: usize, outputs: usize, relu: bool, rng: &mut R) -> LayerParams<T> {
    let weights = if relu {
        he_uniform(vec![inputs, outputs], inputs, rng)
    } else {
        glorot_uniform(vec![inputs, outputs], inputs, outputs, rng)
    };
    LayerParams { weights, bias: Tensor::zeros(vec![outputs]), trainable: true }
}
