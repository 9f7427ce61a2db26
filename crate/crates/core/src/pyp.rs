//! Pitman-Yor seating: a single restaurant with full table bookkeeping, plus
//! auxiliary-variable samplers for its hyperparameters.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::stats;

/// Discount `d` in [0, 1) and strength `θ` with θ + d > 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PypParams {
    pub discount: f64,
    pub strength: f64,
}

impl PypParams {
    pub fn new(discount: f64, strength: f64) -> Result<Self> {
        let p = PypParams { discount, strength };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(invalid(format!(
                "Pitman-Yor parameters need 0 <= d < 1 and strength > -d, got d={discount} strength={strength}"
            )))
        }
    }

    /// Dirichlet process with concentration `alpha`.
    pub fn dirichlet(alpha: f64) -> Self {
        PypParams {
            discount: 0.0,
            strength: alpha,
        }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..1.0).contains(&self.discount)
            && self.strength.is_finite()
            && self.strength + self.discount > 0.0
    }
}

impl Default for PypParams {
    fn default() -> Self {
        PypParams {
            discount: 0.5,
            strength: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Tables {
    sizes: Vec<u32>,
    customers: u32,
}

/// Seating arrangement of one Pitman-Yor node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Restaurant {
    dishes: BTreeMap<u32, Tables>,
    customers: u32,
    tables: u32,
}

impl Restaurant {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a restaurant from per-dish table sizes.
    pub fn from_tables<I>(dishes: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, Vec<u32>)>,
    {
        let mut r = Restaurant::new();
        for (dish, sizes) in dishes {
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(invalid(format!("dish {dish} has an empty table list or table")));
            }
            let customers: u32 = sizes.iter().sum();
            r.customers += customers;
            r.tables += sizes.len() as u32;
            if r.dishes.insert(dish, Tables { sizes, customers }).is_some() {
                return Err(invalid(format!("dish {dish} listed twice")));
            }
        }
        Ok(r)
    }

    pub fn customers(&self) -> u32 {
        self.customers
    }

    pub fn tables(&self) -> u32 {
        self.tables
    }

    pub fn is_empty(&self) -> bool {
        self.customers == 0
    }

    pub fn dish_customers(&self, dish: u32) -> u32 {
        self.dishes.get(&dish).map_or(0, |t| t.customers)
    }

    pub fn dish_tables(&self, dish: u32) -> u32 {
        self.dishes.get(&dish).map_or(0, |t| t.sizes.len() as u32)
    }

    /// (dish, table sizes) in ascending dish order.
    pub fn dishes(&self) -> impl Iterator<Item = (u32, &[u32])> + '_ {
        self.dishes.iter().map(|(&d, t)| (d, t.sizes.as_slice()))
    }

    /// Every table size, in dish order.
    pub fn table_sizes(&self) -> impl Iterator<Item = u32> + '_ {
        self.dishes.values().flat_map(|t| t.sizes.iter().copied())
    }

    pub fn predictive_prob(&self, p: &PypParams, dish: u32, base_prob: f64) -> f64 {
        if self.customers == 0 {
            return base_prob;
        }
        let denom = p.strength + self.customers as f64;
        let seated = match self.dishes.get(&dish) {
            Some(t) => t.customers as f64 - p.discount * t.sizes.len() as f64,
            None => 0.0,
        };
        seated / denom + (p.strength + p.discount * self.tables as f64) / denom * base_prob
    }

    /// Probability mass the restaurant hands to its base measure.
    pub fn base_weight(&self, p: &PypParams) -> f64 {
        if self.customers == 0 {
            return 1.0;
        }
        (p.strength + p.discount * self.tables as f64) / (p.strength + self.customers as f64)
    }

    /// Seats one customer; returns whether a new table was opened.
    pub fn add_customer<R: Rng + ?Sized>(
        &mut self,
        p: &PypParams,
        dish: u32,
        base_prob: f64,
        rng: &mut R,
    ) -> Result<bool> {
        let new_weight = (p.strength + p.discount * self.tables as f64) * base_prob;
        let entry = self.dishes.entry(dish).or_default();
        let new_table = if entry.sizes.is_empty() {
            if base_prob <= 0.0 {
                self.dishes.remove(&dish);
                return Err(Error::ZeroMassInsertion(dish));
            }
            true
        } else {
            let existing = entry.customers as f64 - p.discount * entry.sizes.len() as f64;
            let mut x = rng.random::<f64>() * (existing + new_weight.max(0.0));
            let mut chosen = None;
            if x < existing {
                for (k, &size) in entry.sizes.iter().enumerate() {
                    let w = size as f64 - p.discount;
                    if x < w {
                        chosen = Some(k);
                        break;
                    }
                    x -= w;
                }
                // Rounding can run past the last table.
                chosen = chosen.or(Some(entry.sizes.len() - 1));
            }
            match chosen {
                Some(k) => {
                    entry.sizes[k] += 1;
                    false
                }
                None => true,
            }
        };
        if new_table {
            entry.sizes.push(1);
            self.tables += 1;
        }
        entry.customers += 1;
        self.customers += 1;
        Ok(new_table)
    }

    /// Removes one customer of `dish` from a table picked proportionally to
    /// its size; returns whether that table was emptied.
    pub fn remove_customer<R: Rng + ?Sized>(&mut self, dish: u32, rng: &mut R) -> Result<bool> {
        let entry = match self.dishes.get_mut(&dish) {
            Some(e) if e.customers > 0 => e,
            _ => return Err(Error::RemoveFromEmptyDish(dish)),
        };
        let mut x = rng.random_range(0..entry.customers);
        let mut k = 0;
        while x >= entry.sizes[k] {
            x -= entry.sizes[k];
            k += 1;
        }
        entry.sizes[k] -= 1;
        entry.customers -= 1;
        self.customers -= 1;
        let emptied = entry.sizes[k] == 0;
        if emptied {
            entry.sizes.swap_remove(k);
            self.tables -= 1;
            if entry.sizes.is_empty() {
                self.dishes.remove(&dish);
            }
        }
        Ok(emptied)
    }

    /// Relabels dishes through `map` (dishes mapped to `None` must be absent).
    pub fn remap_dishes(&mut self, map: &[Option<u32>]) {
        let old = std::mem::take(&mut self.dishes);
        for (dish, t) in old {
            let new = map[dish as usize].expect("remapped dish still has customers");
            self.dishes.insert(new, t);
        }
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        let mut c = 0;
        let mut t = 0;
        for (dish, tables) in &self.dishes {
            if tables.sizes.is_empty() || tables.sizes.contains(&0) {
                return Err(format!("dish {dish} has an empty table"));
            }
            if tables.sizes.iter().sum::<u32>() != tables.customers {
                return Err(format!("dish {dish} customer total disagrees with tables"));
            }
            c += tables.customers;
            t += tables.sizes.len() as u32;
        }
        if c != self.customers || t != self.tables {
            return Err("restaurant totals disagree with tables".into());
        }
        Ok(())
    }
}

/// Resamples (d, θ) shared by `restaurants` with the Beta/Bernoulli/Gamma
/// auxiliary scheme under d ~ Beta(1, 1), θ ~ Gamma(1, 1).
pub fn sample_hyperparameters<'a, I, R>(restaurants: I, p: PypParams, rng: &mut R) -> PypParams
where
    I: IntoIterator<Item = &'a Restaurant>,
    R: Rng + ?Sized,
{
    const D_A: f64 = 1.0;
    const D_B: f64 = 1.0;
    const THETA_SHAPE: f64 = 1.0;
    const THETA_RATE: f64 = 1.0;

    let theta = p.strength.max(1e-8);
    let d = p.discount;
    let mut sum_log_x = 0.0;
    let mut sum_y = 0.0;
    let mut sum_one_minus_y = 0.0;
    let mut sum_one_minus_z = 0.0;
    let mut any = false;
    for r in restaurants {
        if r.customers == 0 {
            continue;
        }
        any = true;
        if r.customers >= 2 {
            sum_log_x += stats::beta(theta + 1.0, r.customers as f64 - 1.0, rng).ln();
        }
        for i in 1..r.tables {
            let y = stats::bernoulli(theta / (theta + d * i as f64), rng);
            if y {
                sum_y += 1.0;
            } else {
                sum_one_minus_y += 1.0;
            }
        }
        for size in r.table_sizes() {
            for j in 1..size {
                let z = stats::bernoulli((j as f64 - 1.0) / (j as f64 - d), rng);
                if !z {
                    sum_one_minus_z += 1.0;
                }
            }
        }
    }
    if !any {
        return p;
    }
    let discount = stats::beta(D_A + sum_one_minus_y, D_B + sum_one_minus_z, rng).clamp(0.0, 1.0 - 1e-9);
    let strength = stats::gamma(THETA_SHAPE + sum_y, THETA_RATE - sum_log_x, rng).max(1e-8);
    PypParams { discount, strength }
}

/// Concentration of Dirichlet-process restaurants sharing one base measure
/// (auxiliary Beta/Bernoulli scheme, Gamma(shape, rate) prior).
pub fn sample_dp_concentration<'a, I, R>(
    restaurants: I,
    alpha: f64,
    shape: f64,
    rate: f64,
    rng: &mut R,
) -> f64
where
    I: IntoIterator<Item = &'a Restaurant>,
    R: Rng + ?Sized,
{
    let mut tables = 0.0;
    let mut sum_log_w = 0.0;
    let mut sum_s = 0.0;
    let mut any = false;
    for r in restaurants {
        if r.customers == 0 {
            continue;
        }
        any = true;
        let n = r.customers as f64;
        tables += r.tables as f64;
        sum_log_w += stats::beta(alpha + 1.0, n, rng).ln();
        if stats::bernoulli(n / (n + alpha), rng) {
            sum_s += 1.0;
        }
    }
    if !any {
        return alpha;
    }
    stats::gamma(shape + tables - sum_s, rate - sum_log_w, rng).max(1e-8)
}

/// Concentration of a single Dirichlet process with `customers` draws that
/// produced `clusters` distinct values (two-component Gamma mixture).
pub fn sample_top_concentration<R: Rng + ?Sized>(
    customers: f64,
    clusters: f64,
    gamma: f64,
    shape: f64,
    rate: f64,
    rng: &mut R,
) -> f64 {
    if customers <= 0.0 || clusters <= 0.0 {
        return gamma;
    }
    let eta = stats::beta(gamma + 1.0, customers, rng);
    let r = rate - eta.ln();
    let odds = (shape + clusters - 1.0) / (customers * r);
    let weight = odds / (1.0 + odds);
    let s = if stats::bernoulli(weight, rng) {
        shape + clusters
    } else {
        shape + clusters - 1.0
    };
    stats::gamma(s.max(1e-8), r, rng).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;
    use proptest::{prop_assert, prop_assert_eq, proptest};

    fn p(d: f64, t: f64) -> PypParams {
        PypParams::new(d, t).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(PypParams::new(1.0, 1.0).is_err());
        assert!(PypParams::new(-0.1, 1.0).is_err());
        assert!(PypParams::new(0.5, -0.5).is_err());
        assert!(PypParams::new(0.5, -0.4).is_ok());
    }

    #[test]
    fn empty_restaurant_returns_base() {
        let r = Restaurant::new();
        assert_eq!(r.predictive_prob(&p(0.3, 2.0), 4, 0.1), 0.1);
    }

    #[test]
    fn one_customer_predictive() {
        let mut rng = seeded(0, 0);
        let mut r = Restaurant::new();
        assert!(r.add_customer(&p(0.5, 1.0), 7, 0.1, &mut rng).unwrap());
        assert_eq!((r.customers(), r.tables()), (1, 1));
        assert_abs_diff_eq!(r.predictive_prob(&p(0.5, 1.0), 7, 0.1), 0.325, epsilon = 1e-15);
        assert_abs_diff_eq!(r.predictive_prob(&p(0.5, 1.0), 8, 0.1), 0.075, epsilon = 1e-15);
    }

    #[test]
    fn add_then_remove_restores_empty() {
        let mut rng = seeded(0, 0);
        let mut r = Restaurant::new();
        r.add_customer(&p(0.5, 1.0), 3, 0.2, &mut rng).unwrap();
        assert!(r.remove_customer(3, &mut rng).unwrap());
        assert_eq!(r, Restaurant::new());
    }

    #[test]
    fn remove_errors() {
        let mut rng = seeded(0, 0);
        let mut r = Restaurant::new();
        assert!(matches!(r.remove_customer(1, &mut rng), Err(Error::RemoveFromEmptyDish(1))));
        r.add_customer(&p(0.5, 1.0), 2, 0.2, &mut rng).unwrap();
        assert!(r.remove_customer(1, &mut rng).is_err());
    }

    #[test]
    fn zero_mass_insertion() {
        let mut rng = seeded(0, 0);
        let mut r = Restaurant::new();
        assert!(matches!(
            r.add_customer(&p(0.5, 1.0), 1, 0.0, &mut rng),
            Err(Error::ZeroMassInsertion(1))
        ));
        assert!(r.is_empty());
        r.add_customer(&p(0.5, 1.0), 1, 0.3, &mut rng).unwrap();
        // existing tables absorb the customer when the base has no mass
        assert!(!r.add_customer(&p(0.5, 1.0), 1, 0.0, &mut rng).unwrap());
        r.check().unwrap();
    }

    #[test]
    fn new_table_probability_matches_analytic() {
        // tables of dish 0: [3, 1]; other dish 1: [2]; d=0.3, θ=1.5, base 0.4
        let params = p(0.3, 1.5);
        let base = 0.4;
        let proto = Restaurant::from_tables([(0, vec![3, 1]), (1, vec![2])]).unwrap();
        let existing = 4.0 - 0.3 * 2.0;
        let fresh = (1.5 + 0.3 * 3.0) * base;
        let analytic = fresh / (existing + fresh);
        let n = 10_000;
        let mut rng = seeded(11, 0);
        let hits = (0..n)
            .filter(|_| proto.clone().add_customer(&params, 0, base, &mut rng).unwrap())
            .count();
        let sd = (analytic * (1.0 - analytic) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - analytic).abs() < 3.0 * sd);
    }

    #[test]
    fn large_strength_forces_new_tables() {
        let params = p(0.0, 1e9);
        let proto = Restaurant::from_tables([(0, vec![5])]).unwrap();
        let mut rng = seeded(2, 0);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| proto.clone().add_customer(&params, 0, 0.5, &mut rng).unwrap())
            .count();
        let analytic = 0.5e9 / (5.0 + 0.5e9);
        let sd = (analytic * (1.0 - analytic) / n as f64).sqrt().max(1.0 / n as f64);
        assert!((hits as f64 / n as f64 - analytic).abs() <= 3.0 * sd);
    }

    #[test]
    fn emptied_table_probability_quarter() {
        let proto = Restaurant::from_tables([(0, vec![3, 1])]).unwrap();
        let mut rng = seeded(5, 0);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| proto.clone().remove_customer(0, &mut rng).unwrap())
            .count();
        let sd = (0.25f64 * 0.75 / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - 0.25).abs() < 3.0 * sd);
    }

    #[test]
    fn hyperparameters_unchanged_when_empty() {
        let mut rng = seeded(0, 0);
        let q = p(0.4, 2.0);
        let empty = [Restaurant::new(), Restaurant::new()];
        assert_eq!(sample_hyperparameters(&empty, q, &mut rng), q);
    }

    /// Seat `n` customers in a PY(d, θ) restaurant whose base never repeats.
    fn synthetic_seating(d: f64, theta: f64, n: usize, rng: &mut impl Rng) -> Restaurant {
        let params = p(d, theta);
        let mut r = Restaurant::new();
        let mut next_dish = 0u32;
        for _ in 0..n {
            let new_w = theta + d * r.tables() as f64;
            let old_w = r.customers() as f64 - d * r.tables() as f64;
            if rng.random::<f64>() * (new_w + old_w) < new_w {
                r.add_customer(&params, next_dish, 1.0, rng).unwrap();
                next_dish += 1;
            } else {
                // join an existing table proportional to size - d
                let sizes: Vec<(u32, f64)> = r
                    .dishes()
                    .map(|(dish, s)| (dish, s[0] as f64 - d))
                    .collect();
                let w: Vec<f64> = sizes.iter().map(|x| x.1).collect();
                let k = stats::categorical(&w, rng).unwrap();
                // each dish has exactly one table here, so base 0 joins it
                r.add_customer(&params, sizes[k].0, 0.0, rng).unwrap();
            }
        }
        r
    }

    #[test]
    fn hyperparameters_recover_discount() {
        let mut rng = seeded(42, 0);
        let rs: Vec<Restaurant> = (0..200).map(|_| synthetic_seating(0.5, 2.0, 60, &mut rng)).collect();
        let mut q = PypParams::default();
        q.discount = 0.2;
        q.strength = 5.0;
        let mut d_sum = 0.0;
        let sweeps = 500;
        let burn = 50;
        for i in 0..sweeps + burn {
            q = sample_hyperparameters(&rs, q, &mut rng);
            assert!(q.is_valid());
            if i >= burn {
                d_sum += q.discount;
            }
        }
        let mean = d_sum / sweeps as f64;
        assert!((mean - 0.5).abs() < 0.15, "posterior mean of d = {mean}");
    }

    #[test]
    fn dp_concentration_posterior_is_sane() {
        // 50 restaurants of 40 customers from DP(α=3); posterior mean near 3.
        let mut rng = seeded(9, 0);
        let rs: Vec<Restaurant> = (0..50).map(|_| synthetic_seating(0.0, 3.0, 40, &mut rng)).collect();
        let mut a = 0.5;
        let mut sum = 0.0;
        for i in 0..600 {
            a = sample_dp_concentration(&rs, a, 1.0, 1.0, &mut rng);
            if i >= 100 {
                sum += a;
            }
        }
        let mean = sum / 500.0;
        assert!((mean - 3.0).abs() < 1.0, "mean α = {mean}");
    }

    proptest! {
        #[test]
        fn predictive_normalises(
            seats in proptest::collection::vec(0u32..6, 0..40),
            d in 0.0f64..0.95,
            theta in 0.05f64..5.0,
            seed in 0u64..1000,
        ) {
            let params = p(d, theta);
            let base = [0.1, 0.2, 0.05, 0.25, 0.15, 0.25];
            let mut rng = seeded(seed, 0);
            let mut r = Restaurant::new();
            for &dish in &seats {
                r.add_customer(&params, dish, base[dish as usize], &mut rng).unwrap();
            }
            r.check().unwrap();
            let total: f64 = (0..6u32).map(|w| r.predictive_prob(&params, w, base[w as usize])).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn add_remove_pairs_conserve_counts(
            seats in proptest::collection::vec(0u32..4, 1..30),
            ops in proptest::collection::vec(0u32..4, 0..30),
            seed in 0u64..1000,
        ) {
            let params = p(0.3, 1.0);
            let mut rng = seeded(seed, 0);
            let mut r = Restaurant::new();
            for &dish in &seats {
                r.add_customer(&params, dish, 0.25, &mut rng).unwrap();
            }
            let per_dish: Vec<u32> = (0..4).map(|d| r.dish_customers(d)).collect();
            let c = r.customers();
            for &dish in &ops {
                r.add_customer(&params, dish, 0.25, &mut rng).unwrap();
                r.remove_customer(dish, &mut rng).unwrap();
                r.check().unwrap();
            }
            prop_assert_eq!(r.customers(), c);
            for d in 0..4 {
                prop_assert_eq!(r.dish_customers(d), per_dish[d as usize]);
            }
        }
    }
}
