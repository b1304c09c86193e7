//! Spearman rank correlation between per-lemma F1 and word-frequency
//! estimates, with a two-sided p-value from the Student-t approximation.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::Prf;

#[derive(Debug, Error)]
pub enum CorrelationError {
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 paired values, got {0}")]
    TooFew(usize),
    #[error("correlation is undefined: one input is constant")]
    Constant,
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("frequency file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("frequency file I/O failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
    /// Lemmas present in the F1 table but absent from the frequency table.
    pub missing_lemmas: Vec<String>,
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho with average-rank ties and a two-sided p-value from
/// `t = rho * sqrt((n - 2) / (1 - rho^2))` on `n - 2` degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationResult, CorrelationError> {
    if x.len() != y.len() {
        return Err(CorrelationError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(CorrelationError::TooFew(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(CorrelationError::NonFinite);
    }
    let rho = pearson(&average_ranks(x), &average_ranks(y)).ok_or(CorrelationError::Constant)?;
    let n = x.len();
    Ok(CorrelationResult { rho, p_value: rho_p_value(rho, n), n, missing_lemmas: Vec::new() })
}

/// Two-sided p-value of a rank correlation `rho` over `n` pairs.
pub fn rho_p_value(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = rho * (df / denom).sqrt();
    student_t_two_sided(t, df)
}

/// P(|T| >= |t|) for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, df / 2.0, 0.5).clamp(0.0, 1.0)
}

const BETA_EPS: f64 = 1e-10;
const BETA_MAX_ITER: usize = 500;

/// I_x(a, b) by Lentz's continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // the fraction converges quickly for x < (a + 1) / (a + b + 2)
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_MAX_ITER {
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
        if (delta - 1.0).abs() < BETA_EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation (g = 7, n = 9), accurate to ~1e-15 for x > 0.
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
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Lemma → frequency estimate; lookups are case-insensitive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FreqTable {
    entries: HashMap<String, f64>,
}

impl FreqTable {
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self, CorrelationError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: AsRef<str>,
    {
        let mut entries = HashMap::new();
        for (i, (lemma, f)) in pairs.into_iter().enumerate() {
            if !f.is_finite() || f < 0.0 {
                return Err(CorrelationError::Parse { line: i + 1, reason: format!("invalid frequency {f}") });
            }
            entries.insert(lemma.as_ref().trim().to_lowercase(), f);
        }
        Ok(Self { entries })
    }

    /// Reads a `lemma<TAB>frequency` file. A header row whose second
    /// column is not numeric is skipped.
    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self, CorrelationError> {
        let mut entries = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(lemma), Some(freq)) = (cols.next(), cols.next()) else {
                return Err(CorrelationError::Parse { line: line_no, reason: "expected two tab-separated columns".into() });
            };
            let freq: f64 = match freq.trim().parse() {
                Ok(f) => f,
                Err(_) if line_no == 1 => continue,
                Err(e) => return Err(CorrelationError::Parse { line: line_no, reason: e.to_string() }),
            };
            if !freq.is_finite() || freq < 0.0 {
                return Err(CorrelationError::Parse { line: line_no, reason: format!("invalid frequency {freq}") });
            }
            entries.insert(lemma.trim().to_lowercase(), freq);
        }
        Ok(Self { entries })
    }

    pub fn get(&self, lemma: &str) -> Option<f64> {
        self.entries.get(&lemma.to_lowercase()).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Correlates per-lemma F1 with frequency over the lemmas both inputs
/// know; the rest are reported in `missing_lemmas`.
pub fn correlate_f1_frequency(
    per_lemma: &BTreeMap<String, Prf>,
    freqs: &FreqTable,
) -> Result<CorrelationResult, CorrelationError> {
    let mut f1s = Vec::new();
    let mut fs = Vec::new();
    let mut missing = Vec::new();
    for (lemma, prf) in per_lemma {
        match freqs.get(lemma) {
            Some(f) => {
                f1s.push(prf.f1);
                fs.push(f);
            }
            None => missing.push(lemma.clone()),
        }
    }
    if !missing.is_empty() {
        log::warn!("{} lemma(s) have no frequency estimate: {}", missing.len(), missing.join(", "));
    }
    if f1s.len() < 3 {
        return Err(CorrelationError::TooFew(f1s.len()));
    }
    let mut result = spearman(&f1s, &fs)?;
    result.missing_lemmas = missing;
    Ok(result)
}
