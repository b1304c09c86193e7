//! Per-lemma frequency and metaphoricity counts, and the deterministic
//! rankings used for lemma selection.
//!
//! Ratios are kept as exact fractions of counts. Every comparison between
//! ratios is done by integer cross-multiplication, so two lemmas with
//! 9/12 and 3/4 compare equal and rounding never reorders candidates.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;

/// Exact non-negative fraction `num / den` with `den > 0`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        assert!(den > 0, "ratio denominator must be positive");
        Self { num, den }
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `1 - self`, for ratios in [0, 1].
    pub fn complement(self) -> Self {
        debug_assert!(self.num <= self.den);
        Self { num: self.den - self.num, den: self.den }
    }

    /// |self - other| as an exact fraction over u128.
    pub(crate) fn distance(self, other: Ratio) -> WideFrac {
        let a = self.num as u128 * other.den as u128;
        let b = other.num as u128 * self.den as u128;
        WideFrac { num: a.abs_diff(b), den: self.den as u128 * other.den as u128 }
    }
}

impl PartialEq for Ratio {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ratio {}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

/// Fraction with wide terms, used only for distance comparisons.
#[derive(Debug, Clone, Copy)]
pub(crate) struct WideFrac {
    num: u128,
    den: u128,
}

impl WideFrac {
    pub(crate) fn cmp_exact(&self, other: &WideFrac) -> Ordering {
        // products of two u64-derived terms each; counts stay far below 2^32
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

/// Counts for one lemma in a corpus slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaRow {
    pub lemma: String,
    /// Instance count.
    pub n: u64,
    /// Metaphorical instance count.
    pub n_met: u64,
}

impl LemmaRow {
    pub fn new(lemma: impl Into<String>, n: u64, n_met: u64) -> Self {
        assert!(n > 0 && n_met <= n, "invalid lemma counts n={n} n_met={n_met}");
        Self { lemma: lemma.into(), n, n_met }
    }

    pub fn ratio(&self) -> Ratio {
        Ratio::new(self.n_met, self.n)
    }

    /// Global tie-break: higher count first, then lemma ascending.
    pub(crate) fn tie_break(&self, other: &LemmaRow) -> Ordering {
        other.n.cmp(&self.n).then_with(|| self.lemma.cmp(&other.lemma))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaTable {
    pub source_split: String,
    /// One row per distinct lemma, sorted by lemma.
    pub rows: Vec<LemmaRow>,
}

impl LemmaTable {
    pub fn get(&self, lemma: &str) -> Option<&LemmaRow> {
        self.rows
            .binary_search_by(|r| r.lemma.as_str().cmp(lemma))
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn total(&self) -> u64 {
        self.rows.iter().map(|r| r.n).sum()
    }

    /// Writes the table as TSV (`lemma n n_met ratio`, ratio to 6 decimals).
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "lemma\tn\tn_met\tratio")?;
        for r in &self.rows {
            writeln!(w, "{}\t{}\t{}\t{:.6}", r.lemma, r.n, r.n_met, r.ratio().as_f64())?;
        }
        Ok(())
    }
}

pub fn build_lemma_table(corpus: &Corpus) -> LemmaTable {
    let mut counts: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for inst in &corpus.instances {
        let entry = counts.entry(inst.lemma.as_str()).or_default();
        entry.0 += 1;
        if inst.label.is_positive() {
            entry.1 += 1;
        }
    }
    LemmaTable {
        source_split: corpus.split_name.clone(),
        rows: counts
            .into_iter()
            .map(|(lemma, (n, n_met))| LemmaRow::new(lemma, n, n_met))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankOrder {
    DescRatio,
    AscRatio,
    /// Closest to a 50/50 split first.
    NearBalanced,
}

const HALF: Ratio = Ratio { num: 1, den: 2 };

/// Compares two rows under `order`, falling back to the global tie-break.
pub fn compare_rows(a: &LemmaRow, b: &LemmaRow, order: RankOrder) -> Ordering {
    let primary = match order {
        RankOrder::DescRatio => b.ratio().cmp(&a.ratio()),
        RankOrder::AscRatio => a.ratio().cmp(&b.ratio()),
        RankOrder::NearBalanced => a.ratio().distance(HALF).cmp_exact(&b.ratio().distance(HALF)),
    };
    primary.then_with(|| a.tie_break(b))
}

/// Rows with `n >= min_freq`, sorted by `order`.
pub fn rank_candidates(table: &LemmaTable, min_freq: u64, order: RankOrder) -> Vec<LemmaRow> {
    let mut rows: Vec<LemmaRow> = table.rows.iter().filter(|r| r.n >= min_freq).cloned().collect();
    rows.sort_by(|a, b| compare_rows(a, b, order));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Instance, Label, TargetSpan};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn corpus_from(pairs: &[(&str, bool)]) -> Corpus {
        let instances = pairs
            .iter()
            .enumerate()
            .map(|(i, (lemma, met))| {
                Instance::new(
                    format!("i{i}"),
                    vec!["x".into()],
                    TargetSpan::single(0),
                    lemma,
                    Label::from(*met),
                    None,
                )
                .unwrap()
            })
            .collect();
        Corpus::new("train", instances).unwrap()
    }

    #[test]
    fn face_row_matches_published_counts() {
        let mut pairs = vec![("face", true); 10];
        pairs.push(("face", false));
        let table = build_lemma_table(&corpus_from(&pairs));
        let row = table.get("face").unwrap();
        assert_eq!((row.n, row.n_met), (11, 10));
        assert_eq!(row.ratio(), Ratio::new(10, 11));
        assert!((row.ratio().as_f64() - 0.909).abs() < 1e-3);
    }

    #[test]
    fn single_instance_ratio_is_zero_or_one() {
        let t = build_lemma_table(&corpus_from(&[("go", true)]));
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].ratio(), Ratio::new(1, 1));
        let t = build_lemma_table(&corpus_from(&[("go", false)]));
        assert_eq!(t.rows[0].ratio(), Ratio::new(0, 1));
    }

    #[test]
    fn table_matches_hash_count_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let lemmas: Vec<String> = (0..20).map(|i| format!("lemma{i:02}")).collect();
        let pairs: Vec<(String, bool)> = (0..500)
            .map(|_| (lemmas[rng.gen_range(0..20)].clone(), rng.gen_bool(0.4)))
            .collect();
        let borrowed: Vec<(&str, bool)> = pairs.iter().map(|(l, m)| (l.as_str(), *m)).collect();
        let table = build_lemma_table(&corpus_from(&borrowed));

        let mut oracle: HashMap<&str, (u64, u64)> = HashMap::new();
        for (l, m) in &borrowed {
            let e = oracle.entry(l).or_default();
            e.0 += 1;
            e.1 += *m as u64;
        }
        assert_eq!(table.rows.len(), oracle.len());
        for row in &table.rows {
            assert_eq!(oracle[row.lemma.as_str()], (row.n, row.n_met));
        }
        assert_eq!(table.total(), 500);
        assert!(table.rows.windows(2).all(|w| w[0].lemma < w[1].lemma));
    }

    #[test]
    fn desc_ratio_puts_break_before_share() {
        let table = LemmaTable {
            source_split: "train".into(),
            rows: vec![
                LemmaRow::new("break", 25, 23),
                LemmaRow::new("feel", 82, 67),
                LemmaRow::new("share", 21, 18),
            ],
        };
        let ranked = rank_candidates(&table, 20, RankOrder::DescRatio);
        let names: Vec<_> = ranked.iter().map(|r| r.lemma.as_str()).collect();
        assert_eq!(names, ["break", "share", "feel"]);
    }

    #[test]
    fn exact_half_ranks_first_when_near_balanced() {
        let table = LemmaTable {
            source_split: "train".into(),
            rows: vec![
                LemmaRow::new("a", 33, 17),
                LemmaRow::new("b", 40, 20),
                LemmaRow::new("c", 21, 11),
            ],
        };
        let ranked = rank_candidates(&table, 1, RankOrder::NearBalanced);
        assert_eq!(ranked[0].lemma, "b");
    }

    #[test]
    fn ties_prefer_higher_count_then_lemma() {
        let table = LemmaTable {
            source_split: "t".into(),
            rows: vec![
                LemmaRow::new("a", 12, 9),
                LemmaRow::new("b", 4, 3),
                LemmaRow::new("c", 12, 9),
            ],
        };
        let ranked = rank_candidates(&table, 1, RankOrder::DescRatio);
        let names: Vec<_> = ranked.iter().map(|r| r.lemma.as_str()).collect();
        assert_eq!(names, ["a", "c", "b"]);
    }

    #[test]
    fn min_freq_filters_rows() {
        let table = LemmaTable {
            source_split: "t".into(),
            rows: vec![LemmaRow::new("a", 19, 9), LemmaRow::new("b", 20, 3)],
        };
        let ranked = rank_candidates(&table, 20, RankOrder::AscRatio);
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].lemma, "b");
    }

    #[test]
    fn tsv_export_uses_six_decimals() {
        let table = LemmaTable { source_split: "t".into(), rows: vec![LemmaRow::new("set", 12, 9)] };
        let mut out = Vec::new();
        table.write_tsv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "lemma\tn\tn_met\tratio\nset\t12\t9\t0.750000\n");
    }

    fn arb_rows() -> impl Strategy<Value = Vec<LemmaRow>> {
        prop::collection::vec((1u64..40, 0u64..40), 1..50).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (n, m))| LemmaRow::new(format!("w{i:03}"), n, m.min(n)))
                .collect()
        })
    }

    /// Independent sort key in floating point with the same tie-break.
    fn oracle_sort(rows: &[LemmaRow], min_freq: u64, order: RankOrder) -> Vec<String> {
        let mut keyed: Vec<(i64, i64, String)> = rows
            .iter()
            .filter(|r| r.n >= min_freq)
            .map(|r| {
                // scale by lcm-free integer key: ratio * 10^12 is exact enough to
                // separate distinct ratios with denominators < 40
                let ratio = r.n_met as f64 / r.n as f64;
                let key = match order {
                    RankOrder::DescRatio => -ratio,
                    RankOrder::AscRatio => ratio,
                    RankOrder::NearBalanced => (ratio - 0.5).abs(),
                };
                ((key * 1e12).round() as i64, -(r.n as i64), r.lemma.clone())
            })
            .collect();
        keyed.sort();
        keyed.into_iter().map(|k| k.2).collect()
    }

    proptest! {
        #[test]
        fn ranking_matches_brute_force_sort(rows in arb_rows(), min_freq in 1u64..10) {
            let table = LemmaTable { source_split: "t".into(), rows };
            for order in [RankOrder::DescRatio, RankOrder::AscRatio, RankOrder::NearBalanced] {
                let got: Vec<String> = rank_candidates(&table, min_freq, order).into_iter().map(|r| r.lemma).collect();
                prop_assert_eq!(got, oracle_sort(&table.rows, min_freq, order));
            }
        }

        #[test]
        fn ranking_is_an_idempotent_permutation(rows in arb_rows()) {
            let table = LemmaTable { source_split: "t".into(), rows };
            let once = rank_candidates(&table, 3, RankOrder::NearBalanced);
            let again = rank_candidates(&LemmaTable { source_split: "t".into(), rows: once.clone() }, 3, RankOrder::NearBalanced);
            prop_assert_eq!(&once, &again);
            let mut a: Vec<_> = once.iter().map(|r| r.lemma.clone()).collect();
            let mut b: Vec<_> = table.rows.iter().filter(|r| r.n >= 3).map(|r| r.lemma.clone()).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn ratio_times_n_is_n_met(pairs in prop::collection::vec(("[a-e]", any::<bool>()), 1..80)) {
            let borrowed: Vec<(&str, bool)> = pairs.iter().map(|(l, m)| (l.as_str(), *m)).collect();
            let table = build_lemma_table(&corpus_from(&borrowed));
            for r in &table.rows {
                let ratio = r.ratio();
                prop_assert_eq!(ratio.num * r.n / ratio.den, r.n_met);
            }
            prop_assert_eq!(table.total() as usize, pairs.len());
        }

        #[test]
        fn asc_and_desc_reverse_when_ratios_distinct(dens in prop::collection::btree_set(2u64..60, 2..15)) {
            // ratios 1/d for distinct d are pairwise distinct
            let rows: Vec<LemmaRow> = dens.iter().enumerate().map(|(i, &d)| LemmaRow::new(format!("l{i}"), d, 1)).collect();
            let table = LemmaTable { source_split: "t".into(), rows };
            let mut asc = rank_candidates(&table, 1, RankOrder::AscRatio);
            let desc = rank_candidates(&table, 1, RankOrder::DescRatio);
            asc.reverse();
            prop_assert_eq!(asc, desc);
        }
    }
}
