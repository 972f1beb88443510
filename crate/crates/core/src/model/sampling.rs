use rand::Rng;

use crate::error::{InfiniError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    pub max_new: usize,
    /// 0 selects greedy argmax.
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            max_new: 16,
            temperature: 0.5,
            top_p: 0.95,
            seed: 0,
        }
    }
}

impl GenerateOptions {
    pub fn greedy(max_new: usize) -> Self {
        Self {
            max_new,
            temperature: 0.0,
            top_p: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_new == 0 {
            return Err(InfiniError::Input("max_new must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.top_p) {
            return Err(InfiniError::Input(format!(
                "top_p must lie in [0, 1], got {}",
                self.top_p
            )));
        }
        if !(self.temperature >= 0.0) {
            return Err(InfiniError::Input(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

fn argmax(logits: &[f64]) -> usize {
    logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Temperature-scaled softmax, then nucleus truncation to the smallest
/// prefix (by descending probability) whose mass reaches `top_p`.
pub fn sample_token<R: Rng + ?Sized>(logits: &[f64], temperature: f64, top_p: f64, rng: &mut R) -> usize {
    if temperature == 0.0 {
        return argmax(logits);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<(usize, f64)> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| (i, ((l - max) / temperature).exp()))
        .collect();
    let total: f64 = probs.iter().map(|p| p.1).sum();
    probs.iter_mut().for_each(|p| p.1 /= total);
    probs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut keep = 0;
    let mut mass = 0.0;
    while keep < probs.len() {
        mass += probs[keep].1;
        keep += 1;
        if mass >= top_p {
            break;
        }
    }
    let kept = &probs[..keep];
    let mut u = rng.random::<f64>() * kept.iter().map(|p| p.1).sum::<f64>();
    for &(i, p) in kept {
        if u < p {
            return i;
        }
        u -= p;
    }
    kept[kept.len() - 1].0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_temperature_is_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_token(&[0.1, 3.0, -1.0], 0.0, 0.9, &mut rng), 1);
    }

    #[test]
    fn zero_top_p_keeps_only_the_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            assert_eq!(sample_token(&[0.0, 0.5, 0.2], 1.0, 0.0, &mut rng), 1);
        }
    }

    #[test]
    fn full_softmax_frequencies_within_three_sigma() {
        let logits = [0.0, 1.0, -0.5, 0.3];
        let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
        let p: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        let draws = 10_000;
        let mut counts = [0usize; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..draws {
            counts[sample_token(&logits, 1.0, 1.0, &mut rng)] += 1;
        }
        for (c, &pi) in counts.iter().zip(&p) {
            let sigma = (draws as f64 * pi * (1.0 - pi)).sqrt();
            let expected = draws as f64 * pi;
            assert!((*c as f64 - expected).abs() < 3.0 * sigma, "{counts:?} vs {p:?}");
        }
    }

    #[test]
    fn options_validation() {
        assert!(GenerateOptions { max_new: 0, ..Default::default() }.validate().is_err());
        assert!(GenerateOptions { top_p: 1.5, ..Default::default() }.validate().is_err());
        assert!(GenerateOptions { temperature: -1.0, ..Default::default() }.validate().is_err());
    }
}
