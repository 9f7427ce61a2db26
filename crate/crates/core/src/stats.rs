//! Small sampling helpers over `rand_distr`.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Open01};

/// Gamma(shape, rate).
pub fn gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters must be positive")
        .sample(rng)
}

pub fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    Beta::new(a, b)
        .expect("beta parameters must be positive")
        .sample(rng)
}

pub fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < p
}

/// Uniform on the open interval (0, 1).
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Open01.sample(rng)
}

/// Index drawn proportionally to non-negative `weights`; `None` if they sum
/// to zero.
pub fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return None;
    }
    let mut x = rng.random::<f64>() * total;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if x < w {
                return Some(i);
            }
            x -= w;
            last = Some(i);
        }
    }
    last
}

/// Dirichlet draw via normalised gammas; zero parameters give zero weight.
pub fn dirichlet<R: Rng + ?Sized>(alphas: &[f64], rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = alphas
        .iter()
        .map(|&a| if a > 0.0 { gamma(a, 1.0, rng) } else { 0.0 })
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        for d in &mut draws {
            *d /= total;
        }
    }
    draws
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn categorical_frequencies() {
        let mut rng = seeded(3, 0);
        let w = [0.2, 0.0, 0.5, 0.3];
        let mut hits = [0usize; 4];
        let n = 20_000;
        for _ in 0..n {
            hits[categorical(&w, &mut rng).unwrap()] += 1;
        }
        assert_eq!(hits[1], 0);
        for (i, &p) in w.iter().enumerate() {
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((hits[i] as f64 / n as f64 - p).abs() <= 4.0 * sd + 1e-12);
        }
        assert_eq!(categorical(&[0.0, 0.0], &mut rng), None);
    }

    #[test]
    fn dirichlet_sums_to_one() {
        let mut rng = seeded(1, 0);
        let d = dirichlet(&[1.0, 0.0, 2.5, 0.1], &mut rng);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn lse() {
        let v = log_sum_exp(&[0.5f64.ln(), 0.25f64.ln()]);
        assert!((v - 0.75f64.ln()).abs() < 1e-15);
    }
}
