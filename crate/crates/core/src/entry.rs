//! Agent entry: the logistic entry-rate curve, entrant counts and budgets.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::config::{EntryConfig, EntryMode};
use crate::domain::Money;

/// Entrants per step for recent transaction volume `volume`:
/// `max / (1 + exp(-rate * (volume - inflection)))`.
pub fn entry_rate(volume: f64, cfg: &EntryConfig) -> f64 {
    cfg.max_entrants / (1.0 + (-cfg.growth_rate * (volume - cfg.inflection)).exp())
}

pub fn round_half_up(value: f64) -> u32 {
    (value + 0.5).floor().max(0.0) as u32
}

/// Number of new agents of one role for this step.
pub fn entrant_count<R: Rng + ?Sized>(volume: f64, cfg: &EntryConfig, rng: &mut R) -> u32 {
    let rate = entry_rate(volume, cfg);
    match cfg.mode {
        EntryMode::Deterministic => round_half_up(rate),
        EntryMode::Poisson => {
            if rate <= 0.0 {
                return 0;
            }
            let draw: f64 = Poisson::new(rate).expect("positive finite rate").sample(rng);
            draw as u32
        }
    }
}

/// Picks one budget level uniformly.
pub fn draw_budget<R: Rng + ?Sized>(rng: &mut R, levels: &[Money]) -> Money {
    levels[rng.random_range(0..levels.len())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn cfg() -> EntryConfig {
        EntryConfig::default()
    }

    #[test]
    fn inflection_point_gives_half_ceiling() {
        assert_eq!(entry_rate(100.0, &cfg()), 25.0);
    }

    #[test]
    fn saturates_at_ceiling() {
        assert!((entry_rate(1e6, &cfg()) - 50.0).abs() < 1e-6);
    }

    #[test]
    fn zero_volume_matches_high_precision_value() {
        // 50 / (1 + e^3) evaluated with 30-digit arithmetic: 2.37129365887833904394240758859
        let expected = 2.371_293_658_878_339_f64;
        assert!((entry_rate(0.0, &cfg()) - expected).abs() < 1e-9);
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_half_up(2.371_29), 2);
        assert_eq!(round_half_up(25.0), 25);
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(0.49), 0);
    }

    #[test]
    fn deterministic_counts() {
        let mut rng = stream(1, "entry");
        assert_eq!(entrant_count(100.0, &cfg(), &mut rng), 25);
        assert_eq!(entrant_count(0.0, &cfg(), &mut rng), 2);
    }

    #[test]
    fn poisson_mode_has_the_sigmoid_as_mean() {
        let c = EntryConfig { mode: EntryMode::Poisson, ..cfg() };
        let mut rng = stream(3, "entry");
        let n = 20_000;
        let total: u64 = (0..n).map(|_| u64::from(entrant_count(100.0, &c, &mut rng))).sum();
        let mean = total as f64 / n as f64;
        // sd of the mean = sqrt(25 / 20000) ~ 0.035
        assert!((mean - 25.0).abs() < 0.15, "{mean}");
    }

    #[test]
    fn budgets_come_from_levels_uniformly() {
        let levels = [Money::from_units(1000), Money::from_units(10_000), Money::from_units(100_000)];
        let mut rng = stream(42, "budgets");
        let n = 30_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let b = draw_budget(&mut rng, &levels);
            let i = levels.iter().position(|l| *l == b).expect("drawn from levels");
            counts[i] += 1;
        }
        let p = 1.0 / 3.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn singleton_budget_level() {
        let mut rng = stream(0, "budgets");
        for _ in 0..10 {
            assert_eq!(draw_budget(&mut rng, &[Money::from_units(7)]), Money::from_units(7));
        }
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(a in 0.0f64..2000.0, b in 0.0f64..2000.0) {
            let c = cfg();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (f_lo, f_hi) = (entry_rate(lo, &c), entry_rate(hi, &c));
            prop_assert!(f_lo <= f_hi);
            prop_assert!(f_lo > 0.0 && f_hi <= c.max_entrants);
        }

        #[test]
        fn half_ceiling_at_inflection(l in 0.1f64..1000.0, k in 0.001f64..5.0, x0 in 0.0f64..1000.0) {
            let c = EntryConfig { max_entrants: l, growth_rate: k, inflection: x0, ..cfg() };
            prop_assert_eq!(entry_rate(x0, &c), l / 2.0);
        }
    }
}
