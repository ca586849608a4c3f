//! Synthetic heteroskedastic regression problems of the form
//! `Y = mean(X) + scale(X) * eps`, `eps ~ N(0, 1)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::base::{Dataset, MiscoverageLevel};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// 50 uniform features on `[0, 1]`; `Y = X1 + eps * X1 / (1 + X1)`.
    Sim,
    /// 21 uniform features on `[0, 7]`;
    /// `Y = sin(X1)^2 + 0.1 + 0.6 eps sin(2 X1)`.
    Toy,
    /// A block indicator `X1` in `{0, 1}` and `X2` uniform on `[0, 1]`;
    /// `Y = X2 + s eps` with `s = 0.1` in block 0 and `1.0` in block 1.
    Blocks,
}

impl Generator {
    pub fn n_features(self) -> usize {
        match self {
            Generator::Sim => 50,
            Generator::Toy => 21,
            Generator::Blocks => 2,
        }
    }

    /// `E[Y | x]`.
    pub fn mean(self, x: &[f64]) -> f64 {
        match self {
            Generator::Sim => x[0],
            Generator::Toy => x[0].sin().powi(2) + 0.1,
            Generator::Blocks => x[1],
        }
    }

    /// Multiplier of the standard normal noise at `x`; may be negative.
    pub fn noise_scale(self, x: &[f64]) -> f64 {
        match self {
            Generator::Sim => x[0] / (1.0 + x[0]),
            Generator::Toy => 0.6 * (2.0 * x[0]).sin(),
            Generator::Blocks => {
                if x[0] >= 0.5 {
                    1.0
                } else {
                    0.1
                }
            }
        }
    }

    fn draw_features<R: Rng>(self, rng: &mut R, out: &mut Vec<f64>) {
        match self {
            Generator::Sim => out.extend((0..50).map(|_| rng.random::<f64>())),
            Generator::Toy => out.extend((0..21).map(|_| 7.0 * rng.random::<f64>())),
            Generator::Blocks => {
                out.push(if rng.random_bool(0.5) { 1.0 } else { 0.0 });
                out.push(rng.random::<f64>());
            }
        }
    }

    /// `n` rows; each row draws its features and then its noise from one
    /// ChaCha20 stream seeded with `seed`.
    pub fn sample(self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::domain("cannot generate an empty dataset"));
        }
        let mut rng = seed::rng(seed);
        let d = self.n_features();
        let mut features = Vec::with_capacity(n * d);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let start = features.len();
            self.draw_features(&mut rng, &mut features);
            let x = &features[start..];
            let eps: f64 = rng.sample(StandardNormal);
            targets.push(self.mean(x) + self.noise_scale(x) * eps);
        }
        Dataset::new(features, d, targets)
    }

    /// Monte-Carlo `(1 - alpha)`-quantile of `|Y - mu_hat|` given `x`.
    pub fn oracle_radius(
        self,
        x: &[f64],
        mu_hat: f64,
        alpha: MiscoverageLevel,
        draws: usize,
        seed: u64,
    ) -> Result<f64> {
        if draws < MIN_ORACLE_DRAWS {
            return Err(Error::domain(format!("oracle needs at least {MIN_ORACLE_DRAWS} draws, got {draws}")));
        }
        if x.len() != self.n_features() {
            return Err(Error::shape(format!("{} features for a {}-feature generator", x.len(), self.n_features())));
        }
        let mut rng = seed::rng(seed);
        let (mean, scale) = (self.mean(x), self.noise_scale(x));
        let mut res: Vec<f64> = (0..draws)
            .map(|_| {
                let eps: f64 = rng.sample(StandardNormal);
                (mean + scale * eps - mu_hat).abs()
            })
            .collect();
        let k = MiscoverageLevel::required_count(alpha, draws).max(1) - 1;
        let (_, q, _) = res.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
        Ok(*q)
    }
}

pub const MIN_ORACLE_DRAWS: usize = 10_000;

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Generator::Sim => "sim",
            Generator::Toy => "toy",
            Generator::Blocks => "blocks",
        })
    }
}

impl FromStr for Generator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" => Ok(Generator::Sim),
            "toy" => Ok(Generator::Toy),
            "blocks" => Ok(Generator::Blocks),
            other => Err(Error::Config(format!("unknown generator {other:?}"))),
        }
    }
}

pub fn gen_sim(n: usize, seed: u64) -> Result<Dataset> {
    Generator::Sim.sample(n, seed)
}

pub fn gen_toy(n: usize, seed: u64) -> Result<Dataset> {
    Generator::Toy.sample(n, seed)
}

pub fn gen_blocks(n: usize, seed: u64) -> Result<Dataset> {
    Generator::Blocks.sample(n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_ranges() {
        let d = gen_sim(200, 1).unwrap();
        assert_eq!(d.n_features(), 50);
        assert!(d.rows().all(|r| r.iter().all(|&v| (0.0..1.0).contains(&v))));
        let d = gen_toy(200, 1).unwrap();
        assert_eq!(d.n_features(), 21);
        assert!(d.rows().all(|r| r.iter().all(|&v| (0.0..7.0).contains(&v))));
        let d = gen_blocks(200, 1).unwrap();
        assert!(d.rows().all(|r| r[0] == 0.0 || r[0] == 1.0));
        assert!(gen_sim(0, 1).is_err());
        assert_eq!(gen_sim(30, 9).unwrap(), gen_sim(30, 9).unwrap());
    }

    #[test]
    fn degenerate_noise_points() {
        let mut x = vec![0.0; 50];
        assert_eq!(Generator::Sim.noise_scale(&x), 0.0);
        x[0] = 0.3;
        assert_eq!(Generator::Sim.mean(&x), 0.3);
        let mut t = vec![0.0; 21];
        t[0] = std::f64::consts::FRAC_PI_2;
        assert!(Generator::Toy.noise_scale(&t).abs() < 1e-15);
        assert!((Generator::Toy.mean(&t) - 1.1).abs() < 1e-15);
        t[0] = 0.0;
        assert!((Generator::Toy.mean(&t) - 0.1).abs() < 1e-15);
        // Spread peaks at pi/4 over a grid on [0, 7].
        let spread = |v: f64| {
            let mut t = vec![0.0; 21];
            t[0] = v;
            Generator::Toy.noise_scale(&t).abs()
        };
        let peak = spread(std::f64::consts::FRAC_PI_4);
        assert!((peak - 0.6).abs() < 1e-15);
        assert!((0..=700).all(|i| spread(i as f64 / 100.0) <= peak));
    }

    #[test]
    fn binned_moments_match_closed_forms() {
        // Within each X_1 bin, y - mean(x) has mean 0 and variance E[s^2];
        // the variance estimate has variance (3 E[s^4] - E[s^2]^2) / n.
        for g in [Generator::Sim, Generator::Toy, Generator::Blocks] {
            let d = g.sample(100_000, 31).unwrap();
            let (lo, hi) = d.rows().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r[0]), b.max(r[0])));
            let mut bins = vec![(0usize, 0.0, 0.0, 0.0, 0.0); 10];
            for (x, &y) in d.rows().zip(d.targets()) {
                let b = (((x[0] - lo) / (hi - lo) * 10.0) as usize).min(9);
                let (e, s2) = (y - g.mean(x), g.noise_scale(x).powi(2));
                let bin = &mut bins[b];
                bin.0 += 1;
                bin.1 += e;
                bin.2 += e * e;
                bin.3 += s2;
                bin.4 += s2 * s2;
            }
            for (k, &(n, e, e2, s2, s4)) in bins.iter().enumerate().filter(|b| b.1 .0 > 100) {
                let n = n as f64;
                let (m2, m4) = (s2 / n, s4 / n);
                let mean_se = (m2 / n).sqrt();
                assert!((e / n).abs() <= 3.0 * mean_se + 1e-12, "{g} bin {k}: mean {}", e / n);
                let var_se = ((3.0 * m4 - m2 * m2) / n).sqrt();
                assert!((e2 / n - m2).abs() <= 3.0 * var_se + 1e-12, "{g} bin {k}: var {} vs {m2}", e2 / n);
            }
        }
    }

    #[test]
    fn oracle_radius_closed_forms() {
        let a = MiscoverageLevel::new(0.1).unwrap();
        let mut x = vec![0.5; 50];
        x[0] = 0.0;
        assert_eq!(Generator::Sim.oracle_radius(&x, -0.25, a, 10_000, 1).unwrap(), 0.25);
        assert!(Generator::Sim.oracle_radius(&x, 0.0, a, 10, 1).is_err());
        x[0] = 1.0;
        // Folded normal: q = z_{0.95} * scale.
        let q = Generator::Sim.oracle_radius(&x, 1.0, a, 100_000, 2).unwrap();
        let exact = 1.644_853_626_951_472_2 * 0.5;
        assert!((q - exact).abs() / exact < 0.01, "{q} vs {exact}");
    }
}
