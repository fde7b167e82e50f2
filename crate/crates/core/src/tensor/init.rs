use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use super::conv::ConvParams;

/// Half-width of the uniform Xavier range, `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_bound(shape: [usize; 4]) -> f64 {
    let [c_out, c_in, kh, kw] = shape;
    let fan_in = c_in * kh * kw;
    let fan_out = c_out * kh * kw;
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Uniform Xavier weights, zero bias.
pub fn xavier_init<R: Rng + ?Sized>(shape: [usize; 4], rng: &mut R) -> ConvParams<f32> {
    let [c_out, c_in, kh, kw] = shape;
    let bound = xavier_bound(shape) as f32;
    let dist = Uniform::new_inclusive(-bound, bound);
    let weights = (0..c_out * c_in * kh * kw)
        .map(|_| dist.sample(rng))
        .collect();
    ConvParams::new(c_out, c_in, kh, kw, weights, vec![0.0; c_out])
        .expect("xavier_init needs an odd kernel")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn within_bounds_and_zero_bias() {
        let shape = [48, 9, 5, 5];
        let p = xavier_init(shape, &mut ChaCha8Rng::seed_from_u64(1));
        let b = xavier_bound(shape) as f32;
        assert!(p.weights.iter().all(|w| w.abs() <= b));
        assert!(p.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = xavier_init([8, 4, 3, 3], &mut ChaCha8Rng::seed_from_u64(42));
        let b = xavier_init([8, 4, 3, 3], &mut ChaCha8Rng::seed_from_u64(42));
        let c = xavier_init([8, 4, 3, 3], &mut ChaCha8Rng::seed_from_u64(43));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn variance_matches_uniform_moment() {
        // Var(U(-a, a)) = a^2 / 3 = 2 / (fan_in + fan_out)
        let shape = [64, 64, 5, 5]; // 102,400 weights
        let p = xavier_init(shape, &mut ChaCha8Rng::seed_from_u64(7));
        assert!(p.weights.len() >= 100_000);
        let n = p.weights.len() as f64;
        let mean = p.weights.iter().map(|&w| w as f64).sum::<f64>() / n;
        let var = p
            .weights
            .iter()
            .map(|&w| (w as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let expected = 2.0 / ((64 + 64) * 25) as f64;
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    }
}
