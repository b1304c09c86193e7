//! Writes the synthetic fixture corpus used by the tests and the example
//! config: `train.jsonl`, `test.jsonl` and `freq.tsv`.
//!
//! Usage: `cargo run -p lexhold-core --example make_fixture -- <out-dir>`
//!
//! Output is a pure function of the constants below.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use lexhold::corpus::{write_corpus, Corpus, Instance, Label, TargetSpan};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_611;

const SUBJECTS: &[&str] = &["she", "the council", "our team", "he", "the company", "they", "the report", "my neighbour"];
const LITERAL_OBJECTS: &[&str] = &["the box", "a cup", "the door", "the car", "a bag", "the table", "some bread", "the window"];
const ABSTRACT_OBJECTS: &[&str] = &["the idea", "a deal", "the market", "hope", "the silence", "a promise", "the debate", "her doubts"];
const TAILS: &[&str] = &["yesterday", "at once", "again", "in the end", "last week", "quietly"];

/// Verb lemmas; the first group is frequent in train, the second moderately
/// frequent and shared with test, the rest are rare fillers.
const FREQUENT: &[&str] = &[
    "break", "share", "feel", "lose", "reduce", "regard", "link", "add", "make", "rise", "change", "keep", "manage",
    "allow", "hold", "find", "bring", "put", "offer", "produce", "play", "carry", "call", "go", "identify", "look",
    "send", "stay", "collect", "expect", "grasp", "build", "drive", "draw", "catch", "fall", "throw", "push", "pull",
    "raise", "spread", "shape", "cross", "lift", "drop",
];
const SHARED: &[&str] = &[
    "face", "base", "consider", "follow", "cover", "set", "show", "give", "take", "assume", "design", "run", "leave",
    "cut", "fail", "see", "move", "turn", "open", "come", "meet", "decide", "include", "work", "involve", "achieve",
    "mean", "talk", "write", "try", "hit", "bear", "feed", "grow", "absorb", "bend", "burn", "dig", "fold", "wash",
];
const RARE: &[&str] = &[
    "unravel", "kindle", "sweep", "anchor", "steer", "harvest", "ignite", "weave", "stitch", "sink", "float", "melt",
    "freeze", "bury", "polish", "sharpen", "tangle", "drain", "flood", "plant", "trim", "mend", "pour", "soak", "stir",
    "wrap", "shrink", "scatter", "sow", "knit",
];

fn inflect(lemma: &str, rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0..3) {
        0 => lemma.to_string(),
        1 => format!("{lemma}s"),
        _ if lemma.ends_with('e') => format!("{lemma}d"),
        _ => format!("{lemma}ed"),
    }
}

/// One sentence; metaphorical uses mostly take abstract objects.
fn sentence(lemma: &str, label: Label, rng: &mut ChaCha8Rng) -> (Vec<String>, usize) {
    let cue_agrees = rng.gen_bool(0.8);
    let abstract_obj = label.is_positive() == cue_agrees;
    let objects = if abstract_obj { ABSTRACT_OBJECTS } else { LITERAL_OBJECTS };
    let mut tokens: Vec<String> = SUBJECTS.choose(rng).unwrap().split(' ').map(String::from).collect();
    let target = tokens.len();
    tokens.push(inflect(lemma, rng));
    tokens.extend(objects.choose(rng).unwrap().split(' ').map(String::from));
    if rng.gen_bool(0.6) {
        tokens.extend(TAILS.choose(rng).unwrap().split(' ').map(String::from));
    }
    tokens.push(".".into());
    (tokens, target)
}

fn emit(out: &mut Vec<Instance>, prefix: &str, lemma: &str, n: usize, ratio: f64, rng: &mut ChaCha8Rng) {
    let n_met = ((n as f64) * ratio).round() as usize;
    let mut labels: Vec<Label> = (0..n).map(|i| Label::from(i < n_met)).collect();
    labels.shuffle(rng);
    for label in labels {
        let (tokens, t) = sentence(lemma, label, rng);
        let id = format!("{prefix}{:05}", out.len());
        out.push(Instance::new(id, tokens, TargetSpan::single(t), lemma, label, Some("VERB".into())).unwrap());
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    std::fs::create_dir_all(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut train = Vec::new();
    let mut test = Vec::new();

    for (i, lemma) in FREQUENT.iter().enumerate() {
        // Ratios spread over (0.05, 0.95) so every selection category fills.
        let ratio = 0.05 + 0.9 * ((i * 17) % FREQUENT.len()) as f64 / (FREQUENT.len() - 1) as f64;
        emit(&mut train, "tr", lemma, rng.gen_range(22..60), ratio, &mut rng);
        if i % 3 == 0 {
            emit(&mut test, "te", lemma, rng.gen_range(6..16), ratio, &mut rng);
        }
    }
    for (i, lemma) in SHARED.iter().enumerate() {
        let ratio = 0.08 + 0.84 * ((i * 11) % SHARED.len()) as f64 / (SHARED.len() - 1) as f64;
        emit(&mut train, "tr", lemma, rng.gen_range(10..20), ratio, &mut rng);
        let test_ratio = (ratio + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0);
        emit(&mut test, "te", lemma, rng.gen_range(14..24), test_ratio, &mut rng);
    }
    for (i, lemma) in RARE.iter().enumerate() {
        let ratio = rng.gen_range(0.1..0.9);
        if i % 2 == 0 {
            emit(&mut train, "tr", lemma, rng.gen_range(1..9), ratio, &mut rng);
        }
        if i % 3 != 1 {
            emit(&mut test, "te", lemma, rng.gen_range(1..6), ratio, &mut rng);
        }
    }

    for (name, instances) in [("train", train), ("test", test)] {
        let corpus = Corpus::new(name, instances)?;
        write_corpus(BufWriter::new(File::create(dir.join(format!("{name}.jsonl")))?), &corpus)?;
        eprintln!("{name}: {} instances", corpus.len());
    }

    // Zipf-style frequency per million words, decreasing with list position.
    let mut freq = BufWriter::new(File::create(dir.join("freq.tsv"))?);
    writeln!(freq, "lemma\tfrequency")?;
    for (rank, lemma) in FREQUENT.iter().chain(SHARED).chain(RARE).enumerate() {
        let f = 2.0e4 / (rank as f64 + 1.0).powf(0.9) * rng.gen_range(0.5..2.0);
        writeln!(freq, "{lemma}\t{f:.3}")?;
    }
    freq.flush()?;
    Ok(())
}
