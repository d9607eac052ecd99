//! Minimal CPU neural-network kit: flat parameter storage, layers with explicit
//! backward passes, and optimizers.

pub mod conv;
pub mod layers;
pub mod optim;
pub mod params;

pub use conv::Conv2d;
pub use layers::Linear;
pub use optim::{Optimizer, OptimizerKind};
pub use params::{Gradients, Group, ParamId, ParamSet, ParamSpec};

use rand_chacha::ChaCha8Rng;

/// Register a conv layer with fan-in-scaled uniform weights (`sqrt(6 / fan_in)`) and zero bias.
pub fn conv_layer(params: &mut ParamSet, name: &str, cin: usize, cout: usize, k: usize, group: Group, rng: &mut ChaCha8Rng) -> Conv2d {
    let fan_in = cin * k * k;
    let weight = params.add(format!("{name}.weight"), &[cout, fan_in], group, (6.0 / fan_in as f64).sqrt(), rng);
    let bias = params.add(format!("{name}.bias"), &[cout], group, 0.0, rng);
    Conv2d {
        weight,
        bias: Some(bias),
        cin,
        cout,
        k,
    }
}

/// Register a dense layer with fan-in-scaled uniform weights and zero bias.
pub fn linear_layer(params: &mut ParamSet, name: &str, input: usize, output: usize, group: Group, rng: &mut ChaCha8Rng) -> Linear {
    let weight = params.add(format!("{name}.weight"), &[output, input], group, (6.0 / input as f64).sqrt(), rng);
    let bias = params.add(format!("{name}.bias"), &[output], group, 0.0, rng);
    Linear {
        weight,
        bias,
        input,
        output,
    }
}
