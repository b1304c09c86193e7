//! Renders the five result tables from a work directory.
//!
//! Rendering only reads files, so the same work directory always yields
//! byte-identical output. Missing inputs are listed and their cells show
//! `n/a`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::parse_corpus;
use crate::layout::{EvalName, Layout};
use crate::results::{
    mean_std, read_rows_from, select_median, sort_sweep, BenchmarkRow, Condition, CorrelationRow, DatasetRow,
    GeometryRow, ScoreRow, SweepRow,
};
use crate::split::{LemmaSelection, SplitManifest};

pub const GAP: &str = "n/a";

/// Published shared-task scores shown as reference rows: (name, P, R, F1).
pub const SHARED_TASK_REFERENCE: [(&str, f64, f64, f64); 2] =
    [("DeepMet", 0.789, 0.819, 0.804), ("Go Figure!", 0.732, 0.823, 0.775)];

/// Rounds the shortest decimal representation of `x` to `places` digits,
/// ties to even: 0.7165 -> "0.716", 0.7175 -> "0.718".
pub fn round_decimal(x: f64, places: usize) -> String {
    let text = format!("{}", x.abs());
    let (int_part, frac_part) = text.split_once('.').unwrap_or((&text, ""));
    let mut digits: Vec<u8> = int_part.bytes().chain(frac_part.bytes().chain(std::iter::repeat(b'0')).take(places)).collect();
    let tail = frac_part.as_bytes().get(places..).unwrap_or(&[]);
    let round_up = match tail.first() {
        Some(&d) if d > b'5' => true,
        Some(&b'5') => tail[1..].iter().any(|&d| d != b'0') || digits.last().is_some_and(|d| (d - b'0') % 2 == 1),
        _ => false,
    };
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, b'1');
                break;
            }
            i -= 1;
            if digits[i] == b'9' {
                digits[i] = b'0';
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - places;
    let mut out = String::new();
    if x.is_sign_negative() && digits.iter().any(|&d| d != b'0') {
        out.push('-');
    }
    out.push_str(std::str::from_utf8(&digits[..split]).expect("ascii digits"));
    if places > 0 {
        out.push('.');
        out.push_str(std::str::from_utf8(&digits[split..]).expect("ascii digits"));
    }
    out
}

/// Three decimals without the leading zero: `.716`, `-.127`, `1.000`.
pub fn fmt3(x: f64) -> String {
    let s = round_decimal(x, 3);
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        format!("-.{rest}")
    } else {
        s
    }
}

/// Integer percentage of `num/den`, rounded half up: 10/11 -> `91%`.
pub fn fmt_pct(num: u64, den: u64) -> String {
    if den == 0 {
        return GAP.into();
    }
    let pct = (200 * num as u128 + den as u128) / (2 * den as u128);
    format!("{pct}%")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableRow {
    /// Section heading the row belongs to; empty for none.
    pub section: String,
    pub cells: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub number: u8,
    pub title: String,
    /// Column names for the TSV file (without the leading `section`).
    pub tsv_columns: Vec<String>,
    /// Column headings for the text rendering.
    pub headings: Vec<String>,
    pub rows: Vec<TableRow>,
    pub notes: Vec<String>,
    /// All inputs were present.
    pub complete: bool,
}

impl Table {
    fn new(number: u8, title: &str, tsv_columns: &[&str], headings: &[&str]) -> Self {
        Self {
            number,
            title: title.into(),
            tsv_columns: tsv_columns.iter().map(|s| s.to_string()).collect(),
            headings: headings.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
            complete: true,
        }
    }

    fn push(&mut self, section: &str, cells: Vec<String>) {
        self.rows.push(TableRow { section: section.into(), cells });
    }

    pub fn file_name(&self) -> String {
        format!("table{}.tsv", self.number)
    }

    pub fn render_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str("section");
        for c in &self.tsv_columns {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.section);
            for c in &r.cells {
                out.push('\t');
                out.push_str(c);
            }
            out.push('\n');
        }
        out
    }

    /// First column left-aligned, the rest right-aligned; a section line is
    /// printed whenever the section changes.
    pub fn render_text(&self) -> String {
        let ncol = self.headings.len();
        let mut width: Vec<usize> = self.headings.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (i, c) in r.cells.iter().enumerate().take(ncol) {
                width[i] = width[i].max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, c) in cells.iter().enumerate().take(ncol) {
                let pad = width[i].saturating_sub(c.chars().count());
                if i == 0 {
                    s.push_str("  ");
                    s.push_str(c);
                    s.push_str(&" ".repeat(pad));
                } else {
                    s.push_str("  ");
                    s.push_str(&" ".repeat(pad));
                    s.push_str(c);
                }
            }
            s.trim_end().to_string()
        };
        let total: usize = width.iter().map(|w| w + 2).sum();
        let rule = "-".repeat(total);

        let mut out = String::new();
        let _ = writeln!(out, "Table {}. {}", self.number, self.title);
        let _ = writeln!(out, "{rule}");
        let _ = writeln!(out, "{}", line(&self.headings));
        let _ = writeln!(out, "{rule}");
        let mut section: Option<&str> = None;
        for r in &self.rows {
            if section != Some(r.section.as_str()) {
                if section.is_some() {
                    let _ = writeln!(out);
                }
                if !r.section.is_empty() {
                    let _ = writeln!(out, "{}", r.section);
                }
                section = Some(&r.section);
            }
            let _ = writeln!(out, "{}", line(&r.cells));
        }
        let _ = writeln!(out, "{rule}");
        for n in &self.notes {
            let _ = writeln!(out, "{n}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub tables: Vec<Table>,
    /// Root-relative paths of inputs that were absent or unreadable.
    pub missing: Vec<String>,
}

impl Report {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tables.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&t.render_text());
        }
        if !self.missing.is_empty() {
            out.push_str("\nMissing inputs:\n");
            for m in &self.missing {
                let _ = writeln!(out, "  {m}");
            }
        }
        out
    }

    pub fn complete_tables(&self) -> usize {
        self.tables.iter().filter(|t| t.complete).count()
    }

    /// Writes `table<N>.tsv`, `tables.txt` and, when inputs were missing,
    /// `missing.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for t in &self.tables {
            std::fs::write(dir.join(t.file_name()), t.render_tsv())?;
        }
        std::fs::write(dir.join("tables.txt"), self.render_text())?;
        let missing = dir.join("missing.txt");
        if self.missing.is_empty() {
            if missing.exists() {
                std::fs::remove_file(missing)?;
            }
        } else {
            std::fs::write(missing, self.missing.join("\n") + "\n")?;
        }
        Ok(())
    }
}

/// Collects missing or unreadable inputs while tables are built.
struct Inputs<'a> {
    layout: &'a Layout,
    missing: Vec<String>,
}

impl<'a> Inputs<'a> {
    fn note(&mut self, path: &Path, err: Option<String>) {
        let rel = self.layout.relative(path).into_owned();
        match err {
            Some(e) => {
                log::warn!("unreadable report input {rel}: {e}");
                self.missing.push(format!("{rel} (unreadable: {e})"));
            }
            None => self.missing.push(rel),
        }
    }

    fn rows<T: serde::de::DeserializeOwned + crate::results::Checked>(&mut self, path: &Path) -> Option<Vec<T>> {
        if !path.exists() {
            self.note(path, None);
            return None;
        }
        match read_rows_from(path) {
            Ok(rows) => Some(rows),
            Err(e) => {
                self.note(path, Some(e.to_string()));
                None
            }
        }
    }

    fn manifest(&mut self) -> Option<SplitManifest> {
        let path = self.layout.manifest();
        if !path.exists() {
            self.note(&path, None);
            return None;
        }
        let parsed = std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| SplitManifest::from_json(&t).map_err(|e| e.to_string()));
        match parsed {
            Ok(m) => Some(m),
            Err(e) => {
                self.note(&path, Some(e));
                None
            }
        }
    }

    /// Per-lemma (n, n_met) of an evaluation file.
    fn eval_counts(&mut self, set: EvalName) -> Option<BTreeMap<String, (u64, u64)>> {
        let path = self.layout.eval(set, false);
        if !path.exists() {
            self.note(&path, None);
            return None;
        }
        let parsed = std::fs::File::open(&path)
            .map_err(|e| e.to_string())
            .and_then(|f| parse_corpus(std::io::BufReader::new(f), set.as_str()).map_err(|e| e.to_string()));
        match parsed {
            Ok(c) => {
                let mut m: BTreeMap<String, (u64, u64)> = BTreeMap::new();
                for i in &c.instances {
                    let e = m.entry(i.lemma.clone()).or_default();
                    e.0 += 1;
                    e.1 += u64::from(i.label.is_positive());
                }
                Some(m)
            }
            Err(e) => {
                self.note(&path, Some(e));
                None
            }
        }
    }
}

/// Reads the work directory and builds all five tables.
pub fn build_report(layout: &Layout) -> Report {
    let mut inputs = Inputs { layout, missing: Vec::new() };
    let tables = vec![
        table_lemmas(&mut inputs),
        table_datasets(&mut inputs),
        table_sweep(&mut inputs),
        table_performance(&mut inputs),
        table_geometry(&mut inputs),
    ];
    Report { tables, missing: inputs.missing }
}

fn table_lemmas(inputs: &mut Inputs) -> Table {
    let mut t = Table::new(
        1,
        "Target lemmas per evaluation set and category (metaphorical share in the source corpus and in the evaluation set)",
        &[
            "exposed_lemma",
            "exposed_n",
            "exposed_met_pct",
            "exposed_eval_met_pct",
            "held_out_lemma",
            "held_out_n",
            "held_out_met_pct",
            "held_out_eval_met_pct",
        ],
        &["Exposed", "N", "Met%", "Met% eval", "Held-out", "N", "Met%", "Met% eval"],
    );
    let manifest = inputs.manifest();
    let exposed_counts = inputs.eval_counts(EvalName::Exposed);
    let held_out_counts = inputs.eval_counts(EvalName::HeldOut);
    let Some(m) = manifest else {
        t.complete = false;
        t.notes.push(format!("{GAP}: split manifest missing"));
        return t;
    };
    t.complete = exposed_counts.is_some() && held_out_counts.is_some();
    t.notes.push(format!(
        "Exposed lemmas are sampled from the test split, held-out lemmas from the train split; seed {}.",
        m.seed
    ));

    let cells = |sel: &LemmaSelection, counts: &Option<BTreeMap<String, (u64, u64)>>, cat: usize, i: usize| {
        let cat_rows = match cat {
            0 => &sel.met_biased,
            1 => &sel.balanced,
            _ => &sel.lit_biased,
        };
        match cat_rows.get(i) {
            None => vec![String::new(); 4],
            Some(r) => {
                let eval = match counts {
                    Some(c) => c.get(&r.lemma).map_or(GAP.into(), |&(n, k)| fmt_pct(k, n)),
                    None => GAP.into(),
                };
                vec![r.lemma.clone(), r.n.to_string(), fmt_pct(r.n_met, r.n), eval]
            }
        }
    };
    for (cat, name) in ["Metaphorical-biased", "Balanced", "Literal-biased"].iter().enumerate() {
        let len = |s: &LemmaSelection| [s.met_biased.len(), s.balanced.len(), s.lit_biased.len()][cat];
        let n = len(&m.exposed_selection).max(len(&m.held_out_selection));
        for i in 0..n {
            let mut row = cells(&m.exposed_selection, &exposed_counts, cat, i);
            row.extend(cells(&m.held_out_selection, &held_out_counts, cat, i));
            t.push(name, row);
        }
    }
    t
}

fn table_datasets(inputs: &mut Inputs) -> Table {
    let mut t = Table::new(
        2,
        "Dataset statistics",
        &["dataset", "n_samples", "met_pct", "n_lemmas"],
        &["Dataset", "N samples", "Met%", "N lemmas"],
    );
    let path = inputs.layout.dataset_stats();
    let rows: Option<Vec<DatasetRow>> = inputs.rows(&path);
    let by_name: BTreeMap<String, DatasetRow> =
        rows.iter().flatten().map(|r| (r.dataset.clone(), r.clone())).collect();
    t.complete = rows.is_some();
    let layout = [
        ("Standard", "train", "Train"),
        ("Standard", "test", "Test"),
        ("Lexical hold-out", "filtered_train", "Filtered train"),
        ("Lexical hold-out", "exposed_eval", "Exposed eval"),
        ("Lexical hold-out", "held_out_eval", "Held-out eval"),
    ];
    for (section, key, name) in layout {
        let cells = match by_name.get(key) {
            Some(r) => vec![
                name.to_string(),
                r.n_samples.to_string(),
                fmt_pct(r.n_metaphorical as u64, r.n_samples as u64),
                r.n_lemmas.to_string(),
            ],
            None => {
                if rows.is_some() {
                    t.complete = false;
                }
                vec![name.to_string(), GAP.into(), GAP.into(), GAP.into()]
            }
        };
        t.push(section, cells);
    }
    t
}

fn table_sweep(inputs: &mut Inputs) -> Table {
    let mut t = Table::new(
        3,
        "Validation performance across fine-tuning seeds, sorted by F1 (* marks the selected median run)",
        &["seed", "precision", "recall", "f1", "selected"],
        &["Seed", "Prec.", "Rec.", "F1"],
    );
    let path = inputs.layout.sweep();
    let Some(rows) = inputs.rows::<SweepRow>(&path) else {
        t.complete = false;
        t.push("", vec![GAP.into(), GAP.into(), GAP.into(), GAP.into(), String::new()]);
        return t;
    };
    let chosen = select_median(&rows);
    for r in sort_sweep(&rows) {
        let star = chosen == Some(r.seed);
        let seed = if star { format!("*{}", r.seed) } else { r.seed.to_string() };
        t.push("", vec![seed, fmt3(r.precision), fmt3(r.recall), fmt3(r.f1), if star { "*".into() } else { String::new() }]);
    }
    let stats: Vec<_> = [
        rows.iter().map(|r| r.precision).collect::<Vec<_>>(),
        rows.iter().map(|r| r.recall).collect(),
        rows.iter().map(|r| r.f1).collect(),
    ]
    .iter()
    .map(|v| mean_std(v))
    .collect();
    let mut mean = vec!["Mean".to_string()];
    let mut std = vec!["Std".to_string()];
    for s in &stats {
        let (m, sd) = s.expect("sweep rows are non-empty");
        mean.push(fmt3(m));
        std.push(sd.map_or(GAP.into(), fmt3));
    }
    mean.push(String::new());
    std.push(String::new());
    t.push("Summary", mean);
    t.push("Summary", std);
    if let Some(seed) = chosen {
        t.notes.push(format!("Selected seed: {seed}. Std uses the n-1 denominator."));
    }
    t
}

fn prf_cells(name: &str, v: Option<(f64, f64, f64)>) -> Vec<String> {
    match v {
        Some((p, r, f)) => vec![name.into(), fmt3(p), fmt3(r), fmt3(f)],
        None => vec![name.into(), GAP.into(), GAP.into(), GAP.into()],
    }
}

fn table_performance(inputs: &mut Inputs) -> Table {
    let mut t = Table::new(
        4,
        "Benchmark validation on the official test split, and performance on the Exposed and Held-out evaluation sets",
        &["row", "precision", "recall", "f1"],
        &["", "Prec.", "Rec.", "F1"],
    );
    for (name, p, r, f) in SHARED_TASK_REFERENCE {
        t.push("Shared task baselines (published)", prf_cells(name, Some((p, r, f))));
    }
    let bench: Option<Vec<BenchmarkRow>> = inputs.rows(&inputs.layout.benchmark());
    for (model, name) in [("standard", "Ours (Standard)"), ("filtered", "Ours (Filtered)")] {
        let v = bench.as_ref().and_then(|b| b.iter().find(|r| r.model == model)).map(|r| (r.precision, r.recall, r.f1));
        t.complete &= v.is_some();
        t.push("Our models (official test)", prf_cells(name, v));
    }

    let scores: Option<Vec<ScoreRow>> = inputs.rows(&inputs.layout.scores());
    for cond in [Condition::Full, Condition::ContextOnly, Condition::WordOnly, Condition::RandomBaseline] {
        for set in EvalName::ALL {
            let v = scores
                .as_ref()
                .and_then(|s| s.iter().find(|r| r.condition == cond && r.set == set))
                .map(|r| (r.precision, r.recall, r.f1));
            t.complete &= v.is_some();
            t.push(cond.display_name(), prf_cells(set.display_name(), v));
        }
    }

    let corr_path = inputs.layout.correlation();
    if corr_path.exists() {
        match read_rows_from::<CorrelationRow>(&corr_path) {
            Ok(rows) => {
                for r in rows {
                    let mut note = format!(
                        "Spearman correlation of per-lemma F1 with frequency ({}, {}): rho = {}, p = {}, n = {}",
                        r.condition.display_name(),
                        r.set.display_name(),
                        fmt3(r.rho),
                        fmt3(r.p_value),
                        r.n
                    );
                    if !r.missing.is_empty() {
                        let _ = write!(note, "; no frequency for {}", r.missing);
                    }
                    t.notes.push(note);
                }
            }
            Err(e) => inputs.note(&corr_path, Some(e.to_string())),
        }
    } else {
        t.notes.push("Frequency correlation: not computed.".into());
    }
    t
}

fn table_geometry(inputs: &mut Inputs) -> Table {
    let mut t = Table::new(
        5,
        "Neighbourhood purity and k-NN F1 of contextual target representations",
        &["set", "purity", "knn_f1"],
        &["", "Purity", "k-NN F1"],
    );
    let rows: Option<Vec<GeometryRow>> = inputs.rows(&inputs.layout.geometry());
    for cond in [Condition::Full, Condition::ContextOnly] {
        for set in EvalName::ALL {
            let v = rows.as_ref().and_then(|g| g.iter().find(|r| r.condition == cond && r.set == set));
            t.complete &= v.is_some();
            let cells = match v {
                Some(r) => vec![set.display_name().into(), fmt3(r.purity), fmt3(r.knn_f1)],
                None => vec![set.display_name().into(), GAP.into(), GAP.into()],
            };
            t.push(cond.display_name(), cells);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::results::write_rows_to;

    #[test]
    fn three_decimal_formatting() {
        assert_eq!(fmt3(0.7165), ".716");
        assert_eq!(fmt3(0.5), ".500");
        assert_eq!(fmt3(1.0), "1.000");
        assert_eq!(fmt3(-0.127), "-.127");
        assert_eq!(fmt3(-0.0001), ".000");
        assert_eq!(fmt3(0.0), ".000");
        assert_eq!(fmt3(0.7175), ".718");
        assert_eq!(fmt3(0.9995), "1.000");
        assert_eq!(fmt3(0.71650001), ".717");
        assert_eq!(round_decimal(9.5, 0), "10");
    }

    proptest::proptest! {
        // Oracle: half-even rounding of an integer count of ten-thousandths.
        #[test]
        fn rounding_matches_integer_oracle(m in 0u64..2_000_000, neg in proptest::bool::ANY) {
            let x: f64 = format!("{}{}.{:04}", if neg { "-" } else { "" }, m / 10_000, m % 10_000).parse().unwrap();
            let (q, r) = (m / 10, m % 10);
            let q = if r > 5 || (r == 5 && q % 2 == 1) { q + 1 } else { q };
            let body = format!("{}.{:03}", q / 1000, q % 1000);
            let want = if neg && q != 0 { format!("-{body}") } else { body };
            proptest::prop_assert_eq!(round_decimal(x, 3), want);
        }
    }

    #[test]
    fn percentages_round_half_up() {
        assert_eq!(fmt_pct(10, 11), "91%");
        assert_eq!(fmt_pct(45, 99), "45%");
        assert_eq!(fmt_pct(1, 8), "13%");
        assert_eq!(fmt_pct(0, 0), GAP);
    }

    fn seed_sweep_rows() -> Vec<SweepRow> {
        [
            (42, 0.681, 0.755, 0.716),
            (9999, 0.738, 0.676, 0.706),
            (1234, 0.743, 0.718, 0.731),
            (314, 0.760, 0.667, 0.710),
            (777, 0.719, 0.749, 0.734),
            (999, 0.736, 0.689, 0.712),
            (2025, 0.750, 0.692, 0.719),
            (7, 0.706, 0.721, 0.713),
            (5555, 0.674, 0.763, 0.716),
            (8765, 0.740, 0.696, 0.717),
        ]
        .iter()
        .map(|&(seed, precision, recall, f1)| SweepRow { seed, precision, recall, f1 })
        .collect()
    }

    #[test]
    fn sweep_table_sorted_with_footer_and_flagged_median() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        write_rows_to(&layout.sweep(), &seed_sweep_rows()).unwrap();
        let report = build_report(&layout);
        let t = &report.tables[2];
        assert!(t.complete);
        let seeds: Vec<&str> = t.rows.iter().map(|r| r.cells[0].as_str()).collect();
        assert_eq!(seeds, ["9999", "314", "999", "7", "5555", "*42", "8765", "2025", "1234", "777", "Mean", "Std"]);
        // Recall averages to .7126 from three-decimal inputs.
        assert_eq!(t.rows[10].cells[1..4], [".725", ".713", ".717"]);
        assert_eq!(t.rows[11].cells[1..4], [".029", ".034", ".009"]);
        let flagged: Vec<_> = t.rows.iter().filter(|r| r.cells[4] == "*").collect();
        assert_eq!(flagged.len(), 1);
        assert_eq!(flagged[0].cells[..4], ["*42", ".681", ".755", ".716"]);
    }

    #[test]
    fn empty_work_dir_lists_missing_inputs_and_marks_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        let report = build_report(&layout);
        assert_eq!(report.tables.len(), 5);
        assert_eq!(report.complete_tables(), 0);
        for want in ["split/manifest.json", "results/sweep.tsv", "results/scores.tsv", "results/geometry.tsv"] {
            assert!(report.missing.iter().any(|m| m == want), "{want} not in {:?}", report.missing);
        }
        let text = report.render_text();
        assert!(text.contains("Missing inputs:"));
        assert!(text.contains(".804"), "reference rows always render");
        assert!(report.tables[4].rows.iter().all(|r| r.cells[1] == GAP));
    }

    #[test]
    fn rendering_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        write_rows_to(&layout.sweep(), &seed_sweep_rows()).unwrap();
        let a = build_report(&layout);
        a.write(&layout.report_dir()).unwrap();
        let first = std::fs::read(layout.report_dir().join("tables.txt")).unwrap();
        build_report(&layout).write(&layout.report_dir()).unwrap();
        assert_eq!(first, std::fs::read(layout.report_dir().join("tables.txt")).unwrap());
        assert!(layout.report_dir().join("missing.txt").exists());
    }
}
