//! Finite-difference gradient check shared by the model tests and the
//! acceptance suite.

use rand::Rng;
use trajmatch_core::seed::rng;
use trajmatch_model::network::relu_pattern;
use trajmatch_model::{loss_and_gradients, Example, ModelConfig, NormalizedTrajectory, Transformer};

pub fn tiny() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        d_ffn: 16,
        n_classes: 6,
        dropout: 0.1,
        max_len: 8,
    }
}

pub fn random_batch(seed: u64) -> Vec<Example> {
    let mut r = rng(seed ^ 0xabcdef);
    [5usize, 3, 7]
        .iter()
        .enumerate()
        .map(|(i, &len)| {
            let values = (0..len).map(|_| [r.random::<f64>(), r.random::<f64>()]).collect();
            let mut labels: Vec<usize> = (0..len).map(|_| r.random_range(1..6)).collect();
            let mut input = NormalizedTrajectory::from_values(values);
            if i == 1 {
                input = input.padded(2);
                labels.extend([0, 0]);
            }
            Example { input, labels }
        })
        .collect()
}

fn loss_at(model: &mut Transformer, batch: &[Example], i: usize, value: f64) -> (f64, Vec<bool>) {
    let orig = model.params()[i];
    model.params_mut()[i] = value;
    let loss = loss_and_gradients(model, batch, None).unwrap().0;
    let pattern = relu_pattern(model, batch).unwrap();
    model.params_mut()[i] = orig;
    (loss, pattern)
}

/// Outcome of comparing analytic and central-difference gradients.
pub struct GradCheck {
    pub worst: f64,
    /// Where the worst error occurred.
    pub at: String,
    /// Coordinates whose default stencil crossed a ReLU kink and was narrowed.
    pub narrowed: usize,
    pub checked: usize,
}

/// Checks every parameter of a small model seeded with `seed`.
pub fn check_gradients(seed: u64) -> GradCheck {
    let mut model = Transformer::init(tiny(), &mut rng(seed)).unwrap();
    assert!(model.n_params() <= 5000, "{} parameters", model.n_params());
    let batch = random_batch(seed);
    let (_, analytic) = loss_and_gradients(&model, &batch, None).unwrap();
    let base = relu_pattern(&model, &batch).unwrap();
    let mut worst = (0.0, String::new());
    let mut narrowed = 0;
    let mut checked = 0;
    for spec in model.layout().specs().to_vec() {
        for i in spec.range() {
            let x = model.params()[i];
            let mut h = 1e-5;
            let numeric = loop {
                let (up, pu) = loss_at(&mut model, &batch, i, x + h);
                let (down, pd) = loss_at(&mut model, &batch, i, x - h);
                if (pu == base && pd == base) || h < 1e-9 {
                    break (up - down) / (2.0 * h);
                }
                if h == 1e-5 {
                    narrowed += 1;
                }
                h /= 10.0;
            };
            checked += 1;
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (
                    rel,
                    format!("{}[{}] analytic {a:e} numeric {numeric:e}", spec.name, i - spec.offset),
                );
            }
        }
    }
    GradCheck {
        worst: worst.0,
        at: worst.1,
        narrowed,
        checked,
    }
}
