//! Paired t-tests and Tukey HSD over per-fold scores.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEGENERATE: &str = "zero-variance";

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    regularized_beta(df / (df + t * t), 0.5 * df, 0.5).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub statistic: f64,
    pub df: f64,
    pub p: f64,
    pub mean_diff: f64,
    /// All differences were equal, so the standard error is zero.
    pub degenerate: bool,
}

/// Paired two-sided t-test on `a[i] − b[i]`.
///
/// Identical inputs give `t = 0, p = 1`; constant nonzero differences give an
/// infinite statistic and `p = 0`. Both cases set `degenerate`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::shape("paired_t_test", a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Usage(format!(
            "paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let df = nf - 1.0;
    let all_equal = diffs.iter().all(|&d| d == diffs[0]);
    if all_equal || var == 0.0 {
        let (statistic, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        };
        return Ok(PairedTTest {
            statistic,
            df,
            p,
            mean_diff: mean,
            degenerate: true,
        });
    }
    let t = mean / (var / nf).sqrt();
    Ok(PairedTTest {
        statistic: t,
        df,
        p: student_t_two_sided(t, df),
        mean_diff: mean,
        degenerate: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TukeyConfig {
    pub draws: usize,
    pub seed: u64,
}

impl Default for TukeyConfig {
    fn default() -> Self {
        TukeyConfig {
            draws: 200_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TukeyPair {
    pub first: usize,
    pub second: usize,
    pub mean_diff: f64,
    /// Studentized range statistic `|Δmean| / sqrt(MSE / n)`.
    pub q: f64,
    pub p: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TukeyResult {
    pub df: f64,
    pub mse: f64,
    pub pairs: Vec<TukeyPair>,
}

/// Monte Carlo draws of the studentized range for `m` means and `df` error
/// degrees of freedom, sorted ascending.
pub fn studentized_range_draws(m: usize, df: f64, config: &TukeyConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let chi = ChiSquared::new(df).expect("degrees of freedom are positive");
    let mut out: Vec<f64> = (0..config.draws)
        .map(|_| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for _ in 0..m {
                let z: f64 = StandardNormal.sample(&mut rng);
                lo = lo.min(z);
                hi = hi.max(z);
            }
            let s = (chi.sample(&mut rng) / df).sqrt();
            (hi - lo) / s
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Upper-tail probability of `q` under sorted null draws.
fn upper_tail(sorted: &[f64], q: f64) -> f64 {
    let below = sorted.partition_point(|&x| x < q);
    (sorted.len() - below) as f64 / sorted.len() as f64
}

/// Tukey HSD over equally sized groups (one value per fold per variant).
pub fn tukey_hsd(groups: &[Vec<f64>], config: &TukeyConfig) -> Result<TukeyResult> {
    let m = groups.len();
    if m < 2 {
        return Err(Error::Usage(format!(
            "Tukey HSD needs at least 2 groups, got {m}"
        )));
    }
    let n = groups[0].len();
    if let Some(g) = groups.iter().find(|g| g.len() != n) {
        return Err(Error::shape("tukey_hsd", n, g.len()));
    }
    if n < 2 {
        return Err(Error::Usage(format!(
            "Tukey HSD needs at least 2 observations per group, got {n}"
        )));
    }
    if config.draws == 0 {
        return Err(Error::Usage(
            "Tukey HSD needs a positive number of draws".into(),
        ));
    }
    let means: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().sum::<f64>() / n as f64)
        .collect();
    let df = (m * (n - 1)) as f64;
    let sse: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, mu)| g.iter().map(|x| (x - mu).powi(2)).sum::<f64>())
        .sum();
    let mse = sse / df;
    let se = (mse / n as f64).sqrt();
    let draws = if mse > 0.0 {
        studentized_range_draws(m, df, config)
    } else {
        Vec::new()
    };
    let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            let diff = means[i] - means[j];
            let (q, p, degenerate) = if mse > 0.0 {
                let q = diff.abs() / se;
                (q, upper_tail(&draws, q), false)
            } else if diff == 0.0 {
                (0.0, 1.0, true)
            } else {
                (f64::INFINITY, 0.0, true)
            };
            pairs.push(TukeyPair {
                first: i,
                second: j,
                mean_diff: diff,
                q,
                p,
                degenerate,
            });
        }
    }
    Ok(TukeyResult { df, mse, pairs })
}

/// One line of `stats/*.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatRecord {
    pub test: String,
    pub pair: (String, String),
    /// `None` when the statistic is infinite.
    pub statistic: Option<f64>,
    pub df: f64,
    pub p: f64,
    pub flags: Vec<String>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn paired_record(name_a: &str, a: &[f64], name_b: &str, b: &[f64]) -> Result<StatRecord> {
    let t = paired_t_test(a, b)?;
    Ok(StatRecord {
        test: "paired-t".into(),
        pair: (name_a.into(), name_b.into()),
        statistic: finite(t.statistic),
        df: t.df,
        p: t.p,
        flags: if t.degenerate {
            vec![DEGENERATE.into()]
        } else {
            Vec::new()
        },
    })
}

pub fn tukey_records(
    names: &[String],
    groups: &[Vec<f64>],
    config: &TukeyConfig,
) -> Result<Vec<StatRecord>> {
    if names.len() != groups.len() {
        return Err(Error::shape("tukey_records", groups.len(), names.len()));
    }
    let result = tukey_hsd(groups, config)?;
    Ok(result
        .pairs
        .iter()
        .map(|p| StatRecord {
            test: "tukey-hsd".into(),
            pair: (names[p.first].clone(), names[p.second].clone()),
            statistic: finite(p.q),
            df: result.df,
            p: p.p,
            flags: if p.degenerate {
                vec![DEGENERATE.into()]
            } else {
                Vec::new()
            },
        })
        .collect())
}
