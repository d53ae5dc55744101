//! Seeded random markets satisfying the standing assumptions.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arbitrage::check_standing_assumptions;
use crate::config::Tolerances;
use crate::market::FiniteMarket;

/// Shape limits for generated markets.
#[derive(Debug, Clone, Copy)]
pub struct MarketShape {
    pub min_states: usize,
    pub max_states: usize,
    pub max_stocks: usize,
    pub claims: usize,
}

impl Default for MarketShape {
    fn default() -> Self {
        Self {
            min_states: 2,
            max_states: 5,
            max_stocks: 2,
            claims: 1,
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A market with an equivalent martingale measure and non-replicable claims.
///
/// A strictly positive measure is drawn first and the stock increments are
/// centered under it. Claims are redrawn until none is replicable.
pub fn random_market(rng: &mut ChaCha8Rng, shape: MarketShape) -> FiniteMarket {
    let tol = Tolerances::default();
    loop {
        let m = rng.random_range(shape.min_states.max(2)..=shape.max_states.max(2));
        // leave room for a non-replicable claim
        let d = rng.random_range(0..=shape.max_stocks.min(m - 2));
        let probs = simplex_point(rng, m);
        let q = simplex_point(rng, m);
        let mut inc = vec![vec![0.0; d]; m];
        for i in 0..d {
            let col: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mean: f64 = col.iter().zip(&q).map(|(a, b)| a * b).sum();
            for w in 0..m {
                inc[w][i] = col[w] - mean;
            }
        }
        let claims: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..shape.claims).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let Ok(mkt) = FiniteMarket::from_matrices(probs, inc, claims) else {
            continue;
        };
        if check_standing_assumptions(&mkt, &tol).is_ok() && well_separated(&mkt) {
            return mkt;
        }
    }
}

/// Reject nearly degenerate draws whose price interval is tiny.
fn well_separated(mkt: &FiniteMarket) -> bool {
    (0..mkt.n()).all(|j| match crate::arbitrage::price_range(mkt, j) {
        Ok((lo, hi)) => hi - lo > 1e-2,
        Err(_) => false,
    })
}

/// Uniform-ish point of the open simplex, bounded away from its faces.
fn simplex_point(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arbitrage::{is_replicable, max_min_martingale};

    #[test]
    fn generated_markets_satisfy_assumptions() {
        let mut r = rng(3);
        for _ in 0..30 {
            let mkt = random_market(&mut r, MarketShape::default());
            assert!(mkt.m() >= 2 && mkt.m() <= 5 && mkt.d() <= 2);
            assert!(!is_replicable(&mkt, 0));
            assert!(max_min_martingale(&mkt, None).unwrap().unwrap().min_mass > 1e-9);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = random_market(&mut rng(9), MarketShape::default());
        let b = random_market(&mut rng(9), MarketShape::default());
        assert_eq!(a, b);
    }
}
