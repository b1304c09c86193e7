//! Held-out / Exposed lemma selection, the filtered training set, seeded
//! stratified downsampling of evaluation sets, masked variants, and the
//! split manifest that records all of it.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, Instance, Label, TargetSpan};
use crate::lemma_stats::{compare_rows, rank_candidates, LemmaRow, LemmaTable, RankOrder, Ratio};

/// Lemmas per category (metaphorical-biased, balanced, literal-biased).
pub const CATEGORY_SIZE: usize = 10;
/// Lemmas per selection.
pub const SELECTION_SIZE: usize = 3 * CATEGORY_SIZE;
pub const DEFAULT_MASK_TOKEN: &str = "\u{27e8}MASK\u{27e9}";
pub const MASKED_ID_SUFFIX: &str = "#masked";

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("{kind} selection needs {required} candidate lemmas but only {available} qualify (short by {})", required - available)]
    InsufficientCandidates { kind: SelectionKind, required: usize, available: usize },
    #[error("cannot stratify lemma `{lemma}`: needs {needed} {class} instances, pool has {available}")]
    StratificationInfeasible { lemma: String, class: ClassName, needed: usize, available: usize },
    #[error("evaluation set is already masked")]
    AlreadyMasked,
    #[error("manifest integrity violated: {0}")]
    ManifestIntegrity(String),
    #[error("manifest (de)serialization failed: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Display helper naming a class in error messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassName(pub Label);

impl fmt::Display for ClassName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Label::Literal => f.write_str("literal"),
            Label::Metaphorical => f.write_str("metaphorical"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    HeldOut,
    Exposed,
}

impl fmt::Display for SelectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionKind::HeldOut => f.write_str("held_out"),
            SelectionKind::Exposed => f.write_str("exposed"),
        }
    }
}

/// Three disjoint lemma categories. Each category is listed by descending
/// ratio. Rows carry the counts the selection was made from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaSelection {
    pub kind: SelectionKind,
    pub met_biased: Vec<LemmaRow>,
    pub balanced: Vec<LemmaRow>,
    pub lit_biased: Vec<LemmaRow>,
}

impl LemmaSelection {
    pub fn empty(kind: SelectionKind) -> Self {
        Self { kind, met_biased: Vec::new(), balanced: Vec::new(), lit_biased: Vec::new() }
    }

    pub fn rows(&self) -> impl Iterator<Item = &LemmaRow> {
        self.met_biased.iter().chain(&self.balanced).chain(&self.lit_biased)
    }

    pub fn lemmas(&self) -> BTreeSet<&str> {
        self.rows().map(|r| r.lemma.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.met_biased.len() + self.balanced.len() + self.lit_biased.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.rows().any(|r| r.lemma == lemma)
    }

    fn check_disjoint(&self) -> Result<(), String> {
        let mut seen = HashSet::new();
        for r in self.rows() {
            if !seen.insert(r.lemma.as_str()) {
                return Err(format!("{} selection lists lemma `{}` twice", self.kind, r.lemma));
            }
        }
        Ok(())
    }
}

/// Applies the category rules to an already filtered candidate list:
/// the top ratios form the metaphorical-biased set, the rows closest to
/// 1/2 among the rest form the balanced set, and each metaphorical-biased
/// ratio `r` (descending) claims the unused row closest to `1 - r`.
pub fn select_from_candidates(
    candidates: &[LemmaRow],
    kind: SelectionKind,
) -> Result<LemmaSelection, SplitError> {
    if candidates.len() < SELECTION_SIZE {
        return Err(SplitError::InsufficientCandidates {
            kind,
            required: SELECTION_SIZE,
            available: candidates.len(),
        });
    }
    let mut pool = candidates.to_vec();
    pool.sort_by(|a, b| compare_rows(a, b, RankOrder::DescRatio));
    let mut rest = pool.split_off(CATEGORY_SIZE);
    let met_biased = pool;

    rest.sort_by(|a, b| compare_rows(a, b, RankOrder::NearBalanced));
    let mut unused = rest.split_off(CATEGORY_SIZE);
    let mut balanced = rest;

    let mut lit_biased = Vec::with_capacity(CATEGORY_SIZE);
    for met in &met_biased {
        let target = met.ratio().complement();
        let (best, _) = unused
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.ratio()
                    .distance(target)
                    .cmp_exact(&b.ratio().distance(target))
                    .then_with(|| a.tie_break(b))
            })
            .expect("at least CATEGORY_SIZE unused candidates remain");
        lit_biased.push(unused.swap_remove(best));
    }

    balanced.sort_by(|a, b| compare_rows(a, b, RankOrder::DescRatio));
    lit_biased.sort_by(|a, b| compare_rows(a, b, RankOrder::DescRatio));
    Ok(LemmaSelection { kind, met_biased, balanced, lit_biased })
}

/// Selects the held-out lemmas from the training table.
pub fn select_held_out(train_table: &LemmaTable, min_freq: u64) -> Result<LemmaSelection, SplitError> {
    let candidates = rank_candidates(train_table, min_freq, RankOrder::DescRatio);
    select_from_candidates(&candidates, SelectionKind::HeldOut)
}

/// Candidate filter for the exposed selection.
#[derive(Debug, Clone, Copy)]
pub struct ExposedCriteria {
    /// Minimum instance count in the training table.
    pub min_freq: u64,
    /// When set, a lemma qualifies only if the test table holds enough
    /// instances of each class for a stratified draw of this size.
    pub n_per_lemma: Option<usize>,
}

impl Default for ExposedCriteria {
    fn default() -> Self {
        Self { min_freq: 10, n_per_lemma: None }
    }
}

/// Selects exposed lemmas: present in both tables, not held out, ratio
/// taken from the training table.
pub fn select_exposed(
    train_table: &LemmaTable,
    test_table: &LemmaTable,
    held_out: &LemmaSelection,
    criteria: ExposedCriteria,
) -> Result<LemmaSelection, SplitError> {
    let excluded = held_out.lemmas();
    let candidates: Vec<LemmaRow> = rank_candidates(train_table, criteria.min_freq, RankOrder::DescRatio)
        .into_iter()
        .filter(|row| !excluded.contains(row.lemma.as_str()))
        .filter(|row| match test_table.get(&row.lemma) {
            None => false,
            Some(test_row) => match criteria.n_per_lemma {
                None => true,
                Some(n) => {
                    let k_met = stratified_met_count(n, row.ratio());
                    test_row.n_met as usize >= k_met && (test_row.n - test_row.n_met) as usize >= n - k_met
                }
            },
        })
        .collect();
    select_from_candidates(&candidates, SelectionKind::Exposed)
}

/// Removes every instance whose lemma is held out. Order is preserved.
pub fn build_filtered_train(train: &Corpus, held_out: &LemmaSelection) -> Corpus {
    let excluded = held_out.lemmas();
    Corpus {
        split_name: format!("{}_filtered", train.split_name),
        instances: train
            .instances
            .iter()
            .filter(|i| !excluded.contains(i.lemma.as_str()))
            .cloned()
            .collect(),
    }
}

/// Number of metaphorical instances drawn for a lemma with exact ratio
/// `ratio`: `n_per_lemma * ratio` rounded half up.
pub fn stratified_met_count(n_per_lemma: usize, ratio: Ratio) -> usize {
    let num = 2 * n_per_lemma as u128 * ratio.num as u128 + ratio.den as u128;
    (num / (2 * ratio.den as u128)) as usize
}

/// A downsampled evaluation set. Instances are ordered by (lemma, id).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSet {
    pub kind: SelectionKind,
    pub instances: Vec<Instance>,
    pub n_per_lemma: usize,
    pub seed: u64,
    pub masked: bool,
}

impl EvalSet {
    pub fn name(&self) -> String {
        let base = match self.kind {
            SelectionKind::HeldOut => "held_out_eval",
            SelectionKind::Exposed => "exposed_eval",
        };
        if self.masked {
            format!("{base}_masked")
        } else {
            base.to_string()
        }
    }

    pub fn to_corpus(&self) -> Corpus {
        Corpus { split_name: self.name(), instances: self.instances.clone() }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.instances.iter().map(|i| i.id.as_str())
    }
}

/// Generator for one lemma's draw; independent of every other lemma.
fn lemma_rng(seed: u64, lemma: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"lexhold/downsample/v1");
    hasher.update(seed.to_le_bytes());
    hasher.update(lemma.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Uniform sample of `k` distinct indices from `0..n` (partial
/// Fisher-Yates with 64-bit draws, so results do not depend on the
/// platform's pointer width).
fn sample_indices(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.gen_range(0..(n - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Draws `n_per_lemma` instances for every selected lemma, preserving the
/// lemma's class distribution (ratio from the selection row).
pub fn stratified_downsample(
    pool: &Corpus,
    selection: &LemmaSelection,
    n_per_lemma: usize,
    seed: u64,
) -> Result<EvalSet, SplitError> {
    let mut rows: Vec<&LemmaRow> = selection.rows().collect();
    rows.sort_by(|a, b| a.lemma.cmp(&b.lemma));

    let mut instances = Vec::with_capacity(rows.len() * n_per_lemma);
    for row in rows {
        let k_met = stratified_met_count(n_per_lemma, row.ratio());
        let mut rng = lemma_rng(seed, &row.lemma);
        let mut drawn: Vec<&Instance> = Vec::with_capacity(n_per_lemma);
        for (label, needed) in [(Label::Metaphorical, k_met), (Label::Literal, n_per_lemma - k_met)] {
            let mut class_pool: Vec<&Instance> = pool
                .instances
                .iter()
                .filter(|i| i.lemma == row.lemma && i.label == label)
                .collect();
            if class_pool.len() < needed {
                return Err(SplitError::StratificationInfeasible {
                    lemma: row.lemma.clone(),
                    class: ClassName(label),
                    needed,
                    available: class_pool.len(),
                });
            }
            class_pool.sort_by(|a, b| a.id.cmp(&b.id));
            drawn.extend(sample_indices(&mut rng, class_pool.len(), needed).into_iter().map(|i| class_pool[i]));
        }
        drawn.sort_by(|a, b| a.id.cmp(&b.id));
        instances.extend(drawn.into_iter().cloned());
    }
    Ok(EvalSet { kind: selection.kind, instances, n_per_lemma, seed, masked: false })
}

/// Replaces each target span with a single placeholder token.
pub fn emit_masked_variant(eval: &EvalSet, mask_token: &str) -> Result<EvalSet, SplitError> {
    if eval.masked {
        return Err(SplitError::AlreadyMasked);
    }
    let instances = eval
        .instances
        .iter()
        .map(|inst| {
            let mut tokens = Vec::with_capacity(inst.tokens.len() + 1 - inst.span.len());
            tokens.extend_from_slice(&inst.tokens[..inst.span.start]);
            tokens.push(mask_token.to_string());
            tokens.extend_from_slice(&inst.tokens[inst.span.end + 1..]);
            Instance {
                id: format!("{}{MASKED_ID_SUFFIX}", inst.id),
                tokens,
                span: TargetSpan::single(inst.span.start),
                lemma: inst.lemma.clone(),
                label: inst.label,
                pos: inst.pos.clone(),
            }
        })
        .collect();
    Ok(EvalSet { instances, masked: true, ..eval.clone() })
}

/// Deterministic record of one split construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub held_out_selection: LemmaSelection,
    pub exposed_selection: LemmaSelection,
    pub filtered_train_ids: Vec<String>,
    pub held_out_eval_ids: Vec<String>,
    pub exposed_eval_ids: Vec<String>,
    pub seed: u64,
    /// Hash of the configuration and inputs the split was built from.
    pub provenance: String,
}

impl SplitManifest {
    pub fn to_json(&self) -> Result<String, SplitError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, SplitError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Everything a manifest is built and checked against.
pub struct ManifestInputs<'a> {
    pub train: &'a Corpus,
    pub test: &'a Corpus,
    pub held_out: &'a LemmaSelection,
    pub exposed: &'a LemmaSelection,
    pub filtered_train: &'a Corpus,
    pub held_out_eval: &'a EvalSet,
    pub exposed_eval: &'a EvalSet,
    pub seed: u64,
    pub provenance: String,
}

pub fn build_manifest(inputs: ManifestInputs<'_>) -> Result<SplitManifest, SplitError> {
    let fail = |msg: String| Err(SplitError::ManifestIntegrity(msg));
    let ManifestInputs { train, test, held_out, exposed, filtered_train, held_out_eval, exposed_eval, seed, provenance } =
        inputs;

    held_out.check_disjoint().map_err(SplitError::ManifestIntegrity)?;
    exposed.check_disjoint().map_err(SplitError::ManifestIntegrity)?;
    if held_out.kind != SelectionKind::HeldOut || exposed.kind != SelectionKind::Exposed {
        return fail("selection kinds are swapped".into());
    }
    let held_lemmas = held_out.lemmas();
    let exposed_lemmas = exposed.lemmas();
    if let Some(l) = held_lemmas.intersection(&exposed_lemmas).next() {
        return fail(format!("lemma `{l}` is both held out and exposed"));
    }

    // filtered train must be exactly train minus held-out lemmas
    let expected: Vec<&str> = train
        .instances
        .iter()
        .filter(|i| !held_lemmas.contains(i.lemma.as_str()))
        .map(|i| i.id.as_str())
        .collect();
    let actual: Vec<&str> = filtered_train.ids().collect();
    if expected != actual {
        return fail("filtered train is not the training split minus held-out lemmas".into());
    }
    if let Some(i) = filtered_train.instances.iter().find(|i| held_lemmas.contains(i.lemma.as_str())) {
        return fail(format!("filtered train contains held-out lemma `{}`", i.lemma));
    }

    let train_ids: HashSet<&str> = train.ids().collect();
    let test_ids: HashSet<&str> = test.ids().collect();
    let filtered_ids: HashSet<&str> = filtered_train.ids().collect();

    for inst in &held_out_eval.instances {
        if filtered_ids.contains(inst.id.as_str()) {
            return fail(format!("held-out eval id `{}` is in the filtered train set", inst.id));
        }
        if !train_ids.contains(inst.id.as_str()) {
            return fail(format!("held-out eval id `{}` is not from the training split", inst.id));
        }
        if !held_lemmas.contains(inst.lemma.as_str()) {
            return fail(format!("held-out eval id `{}` has non-held-out lemma `{}`", inst.id, inst.lemma));
        }
    }
    for inst in &exposed_eval.instances {
        if !test_ids.contains(inst.id.as_str()) {
            return fail(format!("exposed eval id `{}` is not from the test split", inst.id));
        }
        if train_ids.contains(inst.id.as_str()) {
            return fail(format!("exposed eval id `{}` also occurs in the training split", inst.id));
        }
        if !exposed_lemmas.contains(inst.lemma.as_str()) {
            return fail(format!("exposed eval id `{}` has non-exposed lemma `{}`", inst.id, inst.lemma));
        }
    }

    Ok(SplitManifest {
        held_out_selection: held_out.clone(),
        exposed_selection: exposed.clone(),
        filtered_train_ids: actual.into_iter().map(String::from).collect(),
        held_out_eval_ids: held_out_eval.ids().map(String::from).collect(),
        exposed_eval_ids: exposed_eval.ids().map(String::from).collect(),
        seed,
        provenance,
    })
}

/// Parameters of the complete split construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitParams {
    pub min_freq_heldout: u64,
    pub min_freq_exposed: u64,
    pub n_heldout: usize,
    pub n_exposed: usize,
    pub seed: u64,
    pub mask_token: String,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self {
            min_freq_heldout: 20,
            min_freq_exposed: 10,
            n_heldout: 20,
            n_exposed: 10,
            seed: 42,
            mask_token: DEFAULT_MASK_TOKEN.to_string(),
        }
    }
}

/// All artifacts of one split construction.
#[derive(Debug, Clone)]
pub struct SplitOutputs {
    pub held_out: LemmaSelection,
    pub exposed: LemmaSelection,
    pub filtered_train: Corpus,
    pub held_out_eval: EvalSet,
    pub exposed_eval: EvalSet,
    pub held_out_masked: EvalSet,
    pub exposed_masked: EvalSet,
    pub manifest: SplitManifest,
}

/// Runs selection, filtering, downsampling, masking and manifest checks.
pub fn build_splits(
    train: &Corpus,
    test: &Corpus,
    params: &SplitParams,
    provenance: String,
) -> Result<SplitOutputs, SplitError> {
    let train_table = crate::lemma_stats::build_lemma_table(train);
    let test_table = crate::lemma_stats::build_lemma_table(test);

    let held_out = select_held_out(&train_table, params.min_freq_heldout)?;
    let exposed = select_exposed(
        &train_table,
        &test_table,
        &held_out,
        ExposedCriteria { min_freq: params.min_freq_exposed, n_per_lemma: Some(params.n_exposed) },
    )?;
    let filtered_train = build_filtered_train(train, &held_out);
    let held_out_eval = stratified_downsample(train, &held_out, params.n_heldout, params.seed)?;
    let exposed_eval = stratified_downsample(test, &exposed, params.n_exposed, params.seed)?;
    let held_out_masked = emit_masked_variant(&held_out_eval, &params.mask_token)?;
    let exposed_masked = emit_masked_variant(&exposed_eval, &params.mask_token)?;
    let manifest = build_manifest(ManifestInputs {
        train,
        test,
        held_out: &held_out,
        exposed: &exposed,
        filtered_train: &filtered_train,
        held_out_eval: &held_out_eval,
        exposed_eval: &exposed_eval,
        seed: params.seed,
        provenance,
    })?;
    Ok(SplitOutputs {
        held_out,
        exposed,
        filtered_train,
        held_out_eval,
        exposed_eval,
        held_out_masked,
        exposed_masked,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lemma_stats::build_lemma_table;
    use proptest::prelude::*;
    use std::cmp::Ordering;
    use std::collections::BTreeMap;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    /// Corpus with the given (lemma, n, n_met) counts; ids `{prefix}{lemma}-{k}`.
    fn corpus_with_counts(name: &str, prefix: &str, counts: &[(&str, u64, u64)]) -> Corpus {
        let mut instances = Vec::new();
        for (lemma, n, n_met) in counts {
            for k in 0..*n {
                instances.push(
                    Instance::new(
                        format!("{prefix}{lemma}-{k:03}"),
                        toks(&["we", lemma, "it"]),
                        TargetSpan::single(1),
                        lemma,
                        Label::from(k < *n_met),
                        None,
                    )
                    .unwrap(),
                );
            }
        }
        Corpus::new(name, instances).unwrap()
    }

    fn table(rows: Vec<LemmaRow>) -> LemmaTable {
        let mut rows = rows;
        rows.sort_by(|a, b| a.lemma.cmp(&b.lemma));
        LemmaTable { source_split: "train".into(), rows }
    }

    fn names(rows: &[LemmaRow]) -> Vec<&str> {
        rows.iter().map(|r| r.lemma.as_str()).collect()
    }

    #[test]
    fn block_ratios_select_their_own_blocks() {
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push(LemmaRow::new(format!("m{i}"), 20, 18));
            rows.push(LemmaRow::new(format!("b{i}"), 20, 10));
            rows.push(LemmaRow::new(format!("l{i}"), 20, 2));
        }
        let sel = select_held_out(&table(rows), 20).unwrap();
        assert!(sel.met_biased.iter().all(|r| r.lemma.starts_with('m')));
        assert!(sel.balanced.iter().all(|r| r.lemma.starts_with('b')));
        assert!(sel.lit_biased.iter().all(|r| r.lemma.starts_with('l')));
        assert_eq!(sel.len(), SELECTION_SIZE);
    }

    #[test]
    fn too_few_candidates_names_shortfall() {
        let rows: Vec<LemmaRow> = (0..29).map(|i| LemmaRow::new(format!("w{i}"), 25, i % 25)).collect();
        let err = select_held_out(&table(rows), 20).unwrap_err();
        match &err {
            SplitError::InsufficientCandidates { required: 30, available: 29, .. } => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("short by 1"));
    }

    /// Counts from the published held-out lemma list (train split).
    fn published_held_out_rows() -> Vec<LemmaRow> {
        // (lemma, N, percentage shown) -> n_met chosen so that round(ratio) matches
        [
            ("break", 25, 23), ("share", 21, 18), ("feel", 82, 67), ("lose", 29, 23), ("reduce", 38, 30),
            ("regard", 23, 18), ("link", 22, 17), ("add", 44, 34), ("make", 256, 197), ("rise", 26, 20),
            ("change", 33, 18), ("keep", 70, 38), ("manage", 32, 17), ("allow", 42, 22), ("hold", 69, 36),
            ("find", 130, 64), ("bring", 73, 35), ("put", 109, 52), ("offer", 23, 10), ("produce", 37, 16),
            ("play", 45, 11), ("carry", 43, 10), ("call", 65, 15), ("go", 660, 145), ("identify", 25, 5),
            ("look", 196, 39), ("send", 21, 4), ("stay", 38, 7), ("collect", 28, 4), ("expect", 53, 4),
        ]
        .into_iter()
        .map(|(l, n, m)| LemmaRow::new(l, n, m))
        .collect()
    }

    #[test]
    fn published_met_biased_block_ranks_first() {
        // only the published rows: the metaphorical block is exactly the
        // top ten by ratio
        let sel = select_held_out(&table(published_held_out_rows()), 20).unwrap();
        assert_eq!(&names(&sel.met_biased)[..3], ["break", "share", "feel"]);
        let lit = names(&sel.lit_biased);
        assert_eq!(&lit[lit.len() - 2..], ["collect", "expect"]);
    }

    #[test]
    fn disjoint_vocabularies_cannot_give_exposed_lemmas() {
        let train = table((0..40).map(|i| LemmaRow::new(format!("a{i}"), 15, 5)).collect());
        let test = table((0..40).map(|i| LemmaRow::new(format!("b{i}"), 15, 5)).collect());
        let err = select_exposed(&train, &test, &LemmaSelection::empty(SelectionKind::HeldOut), ExposedCriteria::default())
            .unwrap_err();
        assert!(matches!(err, SplitError::InsufficientCandidates { available: 0, .. }));
    }

    #[test]
    fn exposed_excludes_held_out_and_takes_train_ratio() {
        let train_rows: Vec<LemmaRow> = (0..35).map(|i| LemmaRow::new(format!("w{i:02}"), 12, (i % 12) as u64)).collect();
        let test_rows: Vec<LemmaRow> = (0..35).map(|i| LemmaRow::new(format!("w{i:02}"), 30, 15)).collect();
        let mut held = LemmaSelection::empty(SelectionKind::HeldOut);
        held.met_biased = vec![LemmaRow::new("w11", 12, 11), LemmaRow::new("w23", 12, 11)];
        let sel = select_exposed(&table(train_rows.clone()), &table(test_rows), &held, ExposedCriteria::default()).unwrap();
        assert!(!sel.contains("w11") && !sel.contains("w23"));
        for row in sel.rows() {
            let train_row = train_rows.iter().find(|r| r.lemma == row.lemma).unwrap();
            assert_eq!(row, train_row);
        }
    }

    #[test]
    fn exposed_feasibility_filter_uses_test_class_counts() {
        let train_rows: Vec<LemmaRow> = (0..31).map(|i| LemmaRow::new(format!("w{i:02}"), 12, 6)).collect();
        let mut test_rows: Vec<LemmaRow> = (0..31).map(|i| LemmaRow::new(format!("w{i:02}"), 20, 10)).collect();
        // w00 has only 4 metaphorical test instances, needs 5
        test_rows[0] = LemmaRow::new("w00", 20, 4);
        // w01 has only 9 instances overall
        test_rows[1] = LemmaRow::new("w01", 9, 5);
        let criteria = ExposedCriteria { min_freq: 10, n_per_lemma: Some(10) };
        let err = select_exposed(
            &table(train_rows),
            &table(test_rows),
            &LemmaSelection::empty(SelectionKind::HeldOut),
            criteria,
        )
        .unwrap_err();
        assert!(matches!(err, SplitError::InsufficientCandidates { available: 29, .. }));
    }

    #[test]
    fn published_stratified_counts() {
        // (n_per_lemma, n_met, N, expected metaphorical draws)
        let cases = [(10, 9, 12, 8), (10, 45, 99, 5), (20, 145, 660, 4), (10, 3, 32, 1), (10, 10, 11, 9), (20, 4, 53, 2)];
        for (n_per, m, n, expect) in cases {
            assert_eq!(stratified_met_count(n_per, Ratio::new(m, n)), expect, "{m}/{n} at {n_per}");
        }
        assert_eq!(stratified_met_count(10, Ratio::new(0, 7)), 0);
        assert_eq!(stratified_met_count(10, Ratio::new(7, 7)), 10);
    }

    #[test]
    fn downsample_of_set_lemma_draws_eight_metaphorical() {
        let pool = corpus_with_counts("train", "", &[("set", 12, 9)]);
        let mut sel = LemmaSelection::empty(SelectionKind::Exposed);
        sel.met_biased.push(LemmaRow::new("set", 12, 9));
        let eval = stratified_downsample(&pool, &sel, 10, 7).unwrap();
        assert_eq!(eval.instances.len(), 10);
        assert_eq!(eval.instances.iter().filter(|i| i.label.is_positive()).count(), 8);
    }

    #[test]
    fn zero_ratio_draws_only_literal() {
        let pool = corpus_with_counts("train", "", &[("seem", 15, 0)]);
        let mut sel = LemmaSelection::empty(SelectionKind::HeldOut);
        sel.lit_biased.push(LemmaRow::new("seem", 15, 0));
        let eval = stratified_downsample(&pool, &sel, 12, 1).unwrap();
        assert!(eval.instances.iter().all(|i| i.label == Label::Literal));
    }

    #[test]
    fn class_shortfall_names_lemma_and_class() {
        // ratio from the selection says 9/12, pool only has 3 metaphorical
        let pool = corpus_with_counts("test", "", &[("set", 12, 3)]);
        let mut sel = LemmaSelection::empty(SelectionKind::Exposed);
        sel.met_biased.push(LemmaRow::new("set", 12, 9));
        let err = stratified_downsample(&pool, &sel, 10, 1).unwrap_err();
        assert_eq!(
            err.to_string(),
            "cannot stratify lemma `set`: needs 8 metaphorical instances, pool has 3"
        );
    }

    #[test]
    fn masking_single_token_target() {
        let inst = Instance::new(
            "d1",
            toks(&["The", "debate", "unraveled", "into", "chaos"]),
            TargetSpan::single(2),
            "unravel",
            Label::Metaphorical,
            None,
        )
        .unwrap();
        let eval = EvalSet { kind: SelectionKind::HeldOut, instances: vec![inst], n_per_lemma: 1, seed: 0, masked: false };
        let masked = emit_masked_variant(&eval, DEFAULT_MASK_TOKEN).unwrap();
        let m = &masked.instances[0];
        assert_eq!(m.tokens, toks(&["The", "debate", "\u{27e8}MASK\u{27e9}", "into", "chaos"]));
        assert_eq!(m.span, TargetSpan::single(2));
        assert_eq!(m.id, "d1#masked");
        assert!(masked.masked);
        assert!(matches!(emit_masked_variant(&masked, "<mask>"), Err(SplitError::AlreadyMasked)));
    }

    #[test]
    fn masking_multi_token_target_collapses_span() {
        let inst = Instance::new(
            "p1",
            toks(&["They", "gave", "up", "hope"]),
            TargetSpan::new(1, 2),
            "give up",
            Label::Literal,
            None,
        )
        .unwrap();
        let eval = EvalSet { kind: SelectionKind::Exposed, instances: vec![inst], n_per_lemma: 1, seed: 0, masked: false };
        let m = &emit_masked_variant(&eval, "<mask>").unwrap().instances[0];
        assert_eq!(m.tokens, toks(&["They", "<mask>", "hope"]));
        assert_eq!(m.span.len(), 1);
        assert_eq!(m.lemma, "give up");
    }

    #[test]
    fn empty_selections_give_identity_filter_and_valid_manifest() {
        let train = corpus_with_counts("train", "tr-", &[("a", 5, 2), ("b", 3, 1)]);
        let test = corpus_with_counts("test", "te-", &[("a", 5, 2)]);
        let held = LemmaSelection::empty(SelectionKind::HeldOut);
        let exposed = LemmaSelection::empty(SelectionKind::Exposed);
        let filtered = build_filtered_train(&train, &held);
        assert_eq!(filtered.instances, train.instances);
        let empty_eval = |kind| EvalSet { kind, instances: vec![], n_per_lemma: 10, seed: 1, masked: false };
        let manifest = build_manifest(ManifestInputs {
            train: &train,
            test: &test,
            held_out: &held,
            exposed: &exposed,
            filtered_train: &filtered,
            held_out_eval: &empty_eval(SelectionKind::HeldOut),
            exposed_eval: &empty_eval(SelectionKind::Exposed),
            seed: 1,
            provenance: "x".into(),
        })
        .unwrap();
        assert_eq!(manifest.filtered_train_ids, train.ids().map(String::from).collect::<Vec<_>>());
    }

    #[test]
    fn manifest_rejects_exposed_ids_from_train() {
        let train = corpus_with_counts("train", "x-", &[("a", 5, 2)]);
        let test = corpus_with_counts("test", "x-", &[("a", 5, 2)]);
        let held = LemmaSelection::empty(SelectionKind::HeldOut);
        let mut exposed = LemmaSelection::empty(SelectionKind::Exposed);
        exposed.met_biased.push(LemmaRow::new("a", 5, 2));
        let eval = stratified_downsample(&test, &exposed, 2, 0).unwrap();
        let err = build_manifest(ManifestInputs {
            train: &train,
            test: &test,
            held_out: &held,
            exposed: &exposed,
            filtered_train: &train,
            held_out_eval: &EvalSet { kind: SelectionKind::HeldOut, instances: vec![], n_per_lemma: 0, seed: 0, masked: false },
            exposed_eval: &eval,
            seed: 0,
            provenance: String::new(),
        })
        .unwrap_err();
        assert!(matches!(err, SplitError::ManifestIntegrity(_)));
    }

    // ---- brute-force selection oracle -------------------------------------

    /// a/b vs c/d.
    fn frac_cmp(a: i128, b: i128, c: i128, d: i128) -> Ordering {
        (a * d).cmp(&(c * b))
    }

    fn better_tie(a: &LemmaRow, b: &LemmaRow) -> bool {
        a.n > b.n || (a.n == b.n && a.lemma < b.lemma)
    }

    /// Repeated linear scans, no sorting.
    fn oracle_select(cands: &[LemmaRow]) -> Option<(Vec<String>, Vec<String>, Vec<String>)> {
        if cands.len() < SELECTION_SIZE {
            return None;
        }
        let mut used = vec![false; cands.len()];
        let scan = |used: &mut Vec<bool>, better: &dyn Fn(&LemmaRow, &LemmaRow) -> bool| -> usize {
            let mut best: Option<usize> = None;
            for i in 0..cands.len() {
                if used[i] {
                    continue;
                }
                if best.is_none_or(|b| better(&cands[i], &cands[b])) {
                    best = Some(i);
                }
            }
            used[best.unwrap()] = true;
            best.unwrap()
        };
        let mut met = Vec::new();
        for _ in 0..CATEGORY_SIZE {
            let i = scan(&mut used, &|a, b| match frac_cmp(a.n_met as i128, a.n as i128, b.n_met as i128, b.n as i128) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => better_tie(a, b),
            });
            met.push(i);
        }
        let mut bal = Vec::new();
        for _ in 0..CATEGORY_SIZE {
            // |2m - n| / 2n
            let i = scan(&mut used, &|a, b| {
                let da = (2 * a.n_met as i128 - a.n as i128).abs();
                let db = (2 * b.n_met as i128 - b.n as i128).abs();
                match frac_cmp(da, 2 * a.n as i128, db, 2 * b.n as i128) {
                    Ordering::Less => true,
                    Ordering::Greater => false,
                    Ordering::Equal => better_tie(a, b),
                }
            });
            bal.push(i);
        }
        let mut lit = Vec::new();
        for &m in &met {
            let (tn, td) = ((cands[m].n - cands[m].n_met) as i128, cands[m].n as i128);
            let i = scan(&mut used, &|a, b| {
                let da = (a.n_met as i128 * td - tn * a.n as i128).abs();
                let db = (b.n_met as i128 * td - tn * b.n as i128).abs();
                match frac_cmp(da, a.n as i128 * td, db, b.n as i128 * td) {
                    Ordering::Less => true,
                    Ordering::Greater => false,
                    Ordering::Equal => better_tie(a, b),
                }
            });
            lit.push(i);
        }
        let set = |v: Vec<usize>| {
            let mut names: Vec<String> = v.into_iter().map(|i| cands[i].lemma.clone()).collect();
            names.sort();
            names
        };
        Some((set(met), set(bal), set(lit)))
    }

    fn sorted_names(rows: &[LemmaRow]) -> Vec<String> {
        let mut v: Vec<String> = rows.iter().map(|r| r.lemma.clone()).collect();
        v.sort();
        v
    }

    fn arb_table(max_rows: usize) -> impl Strategy<Value = Vec<LemmaRow>> {
        prop::collection::vec((5u64..40, 0u64..=100), 20..max_rows).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (n, pct))| LemmaRow::new(format!("v{i:03}"), n, (n * pct / 100).min(n)))
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn held_out_selection_matches_exhaustive_oracle(rows in arb_table(100), min_freq in 5u64..25) {
            let t = table(rows);
            let cands: Vec<LemmaRow> = t.rows.iter().filter(|r| r.n >= min_freq).cloned().collect();
            match (select_held_out(&t, min_freq), oracle_select(&cands)) {
                (Ok(sel), Some((met, bal, lit))) => {
                    prop_assert_eq!(sorted_names(&sel.met_biased), met);
                    prop_assert_eq!(sorted_names(&sel.balanced), bal);
                    prop_assert_eq!(sorted_names(&sel.lit_biased), lit);
                }
                (Err(SplitError::InsufficientCandidates { .. }), None) => {}
                (got, want) => prop_assert!(false, "mismatch: {:?} vs {:?}", got.map(|s| s.len()), want.is_some()),
            }
        }

        #[test]
        fn exposed_selection_matches_exhaustive_oracle(rows in arb_table(90), test_mask in prop::collection::vec(any::<bool>(), 90)) {
            let train = table(rows.clone());
            let test = table(rows.iter().enumerate().filter(|(i, _)| test_mask[*i]).map(|(_, r)| r.clone()).collect());
            let mut held = LemmaSelection::empty(SelectionKind::HeldOut);
            held.balanced = rows.iter().take(3).cloned().collect();
            let cands: Vec<LemmaRow> = train
                .rows
                .iter()
                .filter(|r| r.n >= 10 && test.get(&r.lemma).is_some() && !held.contains(&r.lemma))
                .cloned()
                .collect();
            match (select_exposed(&train, &test, &held, ExposedCriteria::default()), oracle_select(&cands)) {
                (Ok(sel), Some((met, bal, lit))) => {
                    prop_assert_eq!(sorted_names(&sel.met_biased), met);
                    prop_assert_eq!(sorted_names(&sel.balanced), bal);
                    prop_assert_eq!(sorted_names(&sel.lit_biased), lit);
                }
                (Err(SplitError::InsufficientCandidates { .. }), None) => {}
                (got, want) => prop_assert!(false, "mismatch: {:?} vs {:?}", got.map(|s| s.len()), want.is_some()),
            }
        }

        #[test]
        fn filtered_train_count_matches_recount(counts in prop::collection::vec((1u64..30, 0u64..=100), 40..60), pick in prop::sample::subsequence((0usize..40).collect::<Vec<_>>(), 30)) {
            let spec: Vec<(String, u64, u64)> = counts.iter().enumerate().map(|(i, (n, p))| (format!("q{i:02}"), *n, n * p / 100)).collect();
            let borrowed: Vec<(&str, u64, u64)> = spec.iter().map(|(l, n, m)| (l.as_str(), *n, *m)).collect();
            let train = corpus_with_counts("train", "", &borrowed);
            let mut held = LemmaSelection::empty(SelectionKind::HeldOut);
            held.met_biased = pick.iter().map(|&i| LemmaRow::new(spec[i].0.clone(), spec[i].1, spec[i].2)).collect();
            let filtered = build_filtered_train(&train, &held);
            let removed: u64 = pick.iter().map(|&i| spec[i].1).sum();
            prop_assert_eq!(filtered.len() as u64, train.len() as u64 - removed);
            prop_assert!(filtered.instances.iter().all(|i| !held.contains(&i.lemma)));
        }

        #[test]
        fn downsample_counts_and_replay(counts in prop::collection::vec((10u64..40, 0u64..=100), 1..8), n_per in 1usize..10, seed in any::<u64>(), other_seed in any::<u64>()) {
            let spec: Vec<(String, u64, u64)> = counts.iter().enumerate().map(|(i, (n, p))| (format!("z{i}"), *n, n * p / 100)).collect();
            let borrowed: Vec<(&str, u64, u64)> = spec.iter().map(|(l, n, m)| (l.as_str(), *n, *m)).collect();
            let pool = corpus_with_counts("pool", "", &borrowed);
            let mut sel = LemmaSelection::empty(SelectionKind::HeldOut);
            sel.balanced = spec.iter().map(|(l, n, m)| LemmaRow::new(l.clone(), *n, *m)).collect();

            let a = stratified_downsample(&pool, &sel, n_per, seed).unwrap();
            let b = stratified_downsample(&pool, &sel, n_per, seed).unwrap();
            prop_assert_eq!(&a, &b);

            // recount per lemma and class
            let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
            for i in &a.instances {
                let e = tally.entry(i.lemma.as_str()).or_default();
                e.0 += 1;
                e.1 += i.label.is_positive() as usize;
            }
            for (l, n, m) in &spec {
                let expected_met = ((2 * n_per as u64 * m + n) / (2 * n)) as usize;
                prop_assert_eq!(tally[l.as_str()], (n_per, expected_met));
            }
            let ids: HashSet<&str> = a.ids().collect();
            prop_assert_eq!(ids.len(), a.instances.len());

            // another seed: same class counts
            let c = stratified_downsample(&pool, &sel, n_per, other_seed).unwrap();
            let mut tally_c: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
            for i in &c.instances {
                let e = tally_c.entry(i.lemma.as_str()).or_default();
                e.0 += 1;
                e.1 += i.label.is_positive() as usize;
            }
            prop_assert_eq!(tally, tally_c);
        }

        #[test]
        fn masked_variant_preserves_size_and_labels(counts in prop::collection::vec((10u64..20, 0u64..=100), 1..5), seed in any::<u64>()) {
            let spec: Vec<(String, u64, u64)> = counts.iter().enumerate().map(|(i, (n, p))| (format!("k{i}"), *n, n * p / 100)).collect();
            let borrowed: Vec<(&str, u64, u64)> = spec.iter().map(|(l, n, m)| (l.as_str(), *n, *m)).collect();
            let pool = corpus_with_counts("pool", "", &borrowed);
            let mut sel = LemmaSelection::empty(SelectionKind::Exposed);
            sel.met_biased = spec.iter().map(|(l, n, m)| LemmaRow::new(l.clone(), *n, *m)).collect();
            let eval = stratified_downsample(&pool, &sel, 5, seed).unwrap();
            let masked = emit_masked_variant(&eval, "<mask>").unwrap();
            prop_assert_eq!(eval.instances.len(), masked.instances.len());
            for (u, m) in eval.instances.iter().zip(&masked.instances) {
                prop_assert_eq!(u.label, m.label);
                prop_assert_eq!(&u.lemma, &m.lemma);
                prop_assert_eq!(format!("{}#masked", u.id), m.id.clone());
                prop_assert_eq!(m.tokens[m.span.start].as_str(), "<mask>");
            }
        }
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let mut counts = Vec::new();
        for i in 0..70u64 {
            counts.push((format!("t{i:02}"), 25 + i % 40, (i * 7) % 25));
        }
        let borrowed: Vec<(&str, u64, u64)> = counts.iter().map(|(l, n, m)| (l.as_str(), *n, *m)).collect();
        let train = corpus_with_counts("train", "tr-", &borrowed);
        let test = corpus_with_counts("test", "te-", &borrowed);
        let out = build_splits(&train, &test, &SplitParams::default(), "abc".into()).unwrap();
        let text = out.manifest.to_json().unwrap();
        assert_eq!(SplitManifest::from_json(&text).unwrap(), out.manifest);
        assert_eq!(out.manifest.held_out_eval_ids.len(), 600);
        assert_eq!(out.manifest.exposed_eval_ids.len(), 300);
        let held = out.held_out.lemmas();
        assert!(out.filtered_train.instances.iter().all(|i| !held.contains(i.lemma.as_str())));
        let table = build_lemma_table(&out.filtered_train);
        assert_eq!(table.rows.len(), 40);
    }
}
