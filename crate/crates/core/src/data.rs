//! Triple ingestion, vocabularies, splitting, the filter index and the
//! synthetic graph generator.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One `(head, relation, tail)` fact as vocabulary ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }

    pub fn reversed(self) -> Self {
        Self::new(self.tail, self.relation, self.head)
    }
}

/// A triple of names as read from a file, before vocabulary binding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl RawTriple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

/// Parses tab-separated triples. Blank lines and `#` comments are skipped.
pub fn parse_triples(text: &str) -> Result<Vec<RawTriple>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if let Some(pos) = fields.iter().position(|f| f.is_empty()) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("field {} is empty", pos + 1),
            });
        }
        out.push(RawTriple::new(fields[0], fields[1], fields[2]));
    }
    Ok(out)
}

/// Bidirectional name ↔ id maps for entities and relations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    entity_ids: HashMap<String, usize>,
    relation_ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from explicit name lists; duplicates are rejected.
    pub fn from_names(entities: Vec<String>, relations: Vec<String>) -> Result<Self> {
        let mut v = Self::new();
        for e in entities {
            if v.entity_ids.contains_key(&e) {
                return Err(Error::Dataset(format!("duplicate entity name {e:?}")));
            }
            v.intern_entity(&e);
        }
        for r in relations {
            if v.relation_ids.contains_key(&r) {
                return Err(Error::Dataset(format!("duplicate relation name {r:?}")));
            }
            v.intern_relation(&r);
        }
        Ok(v)
    }

    pub fn intern_entity(&mut self, name: &str) -> usize {
        if let Some(&id) = self.entity_ids.get(name) {
            return id;
        }
        let id = self.entity_names.len();
        self.entity_names.push(name.to_owned());
        self.entity_ids.insert(name.to_owned(), id);
        id
    }

    pub fn intern_relation(&mut self, name: &str) -> usize {
        if let Some(&id) = self.relation_ids.get(name) {
            return id;
        }
        let id = self.relation_names.len();
        self.relation_names.push(name.to_owned());
        self.relation_ids.insert(name.to_owned(), id);
        id
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: usize) -> Option<&str> {
        self.entity_names.get(id).map(String::as_str)
    }

    pub fn relation_name(&self, id: usize) -> Option<&str> {
        self.relation_names.get(id).map(String::as_str)
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn n_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_names.len()
    }

    /// Maps raw triples to ids. Unknown names are an error.
    pub fn bind(&self, raw: &[RawTriple]) -> Result<Vec<Triple>> {
        raw.iter()
            .map(|t| {
                let lookup_e = |n: &str| {
                    self.entity_id(n)
                        .ok_or_else(|| Error::Dataset(format!("unknown entity {n:?}")))
                };
                let r = self
                    .relation_id(&t.relation)
                    .ok_or_else(|| Error::Dataset(format!("unknown relation {:?}", t.relation)))?;
                Ok(Triple::new(lookup_e(&t.head)?, r, lookup_e(&t.tail)?))
            })
            .collect()
    }
}

/// Assigns ids in order of first appearance (head, then tail, per line).
pub fn build_vocabulary(triples: &[RawTriple]) -> Vocabulary {
    let mut v = Vocabulary::new();
    for t in triples {
        v.intern_entity(&t.head);
        v.intern_relation(&t.relation);
        v.intern_entity(&t.tail);
    }
    v
}

/// Removes exact duplicates and, within one relation, the reverse of a pair
/// already seen. The first occurrence wins.
pub fn dedup_and_remove_inverses(triples: &[Triple]) -> Vec<Triple> {
    let mut seen: HashSet<Triple> = HashSet::with_capacity(triples.len());
    let mut out = Vec::with_capacity(triples.len());
    for &t in triples {
        if seen.contains(&t) || seen.contains(&t.reversed()) {
            continue;
        }
        seen.insert(t);
        out.push(t);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self> {
        let r = Self { train, valid, test };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config(format!("split ratios must be non-negative: {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1: {parts:?}")));
        }
        Ok(())
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub ratios: SplitRatios,
}

impl DatasetSplits {
    pub fn all(&self) -> impl Iterator<Item = &Triple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split(&self, name: &str) -> Option<&[Triple]> {
        match name {
            "train" => Some(&self.train),
            "valid" => Some(&self.valid),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Seeded shuffle, then contiguous slices of `floor(n·ratio)` for valid and
/// test; train takes the remainder.
pub fn split_dataset(triples: &[Triple], ratios: SplitRatios, seed: u64) -> Result<DatasetSplits> {
    ratios.validate()?;
    let n = triples.len();
    if n < 3 {
        return Err(Error::Dataset(format!(
            "need at least 3 triples to populate train/valid/test, got {n}"
        )));
    }
    let mut shuffled = triples.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n_valid = (n as f64 * ratios.valid).floor() as usize;
    let n_test = (n as f64 * ratios.test).floor() as usize;
    let n_train = n - n_valid - n_test;

    let test = shuffled.split_off(n_train + n_valid);
    let valid = shuffled.split_off(n_train);
    Ok(DatasetSplits {
        train: shuffled,
        valid,
        test,
        ratios,
    })
}

/// Every known triple plus per-`(head, relation)` and per-`(tail, relation)`
/// candidate sets.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    known: HashSet<Triple>,
    tails: HashMap<(usize, usize), HashSet<usize>>,
    heads: HashMap<(usize, usize), HashSet<usize>>,
}

impl FilterIndex {
    pub fn from_triples<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut idx = Self::default();
        for &t in triples {
            idx.insert(t);
        }
        idx
    }

    fn insert(&mut self, t: Triple) {
        if self.known.insert(t) {
            self.tails.entry((t.head, t.relation)).or_default().insert(t.tail);
            self.heads.entry((t.tail, t.relation)).or_default().insert(t.head);
        }
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.known.contains(t)
    }

    /// Known tails of `(head, relation, ·)`.
    pub fn tails(&self, head: usize, relation: usize) -> Option<&HashSet<usize>> {
        self.tails.get(&(head, relation))
    }

    /// Known heads of `(·, relation, tail)`.
    pub fn heads(&self, relation: usize, tail: usize) -> Option<&HashSet<usize>> {
        self.heads.get(&(tail, relation))
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }
}

pub fn build_filter_index(splits: &DatasetSplits) -> FilterIndex {
    FilterIndex::from_triples(splits.all())
}

/// Relation names emitted by the synthetic generator, in id order.
pub const SYNTH_RELATIONS: [&str; 4] = ["HIER", "SYM", "ASYM", "FUNC"];
pub const HIER: usize = 0;
pub const SYM: usize = 1;
pub const ASYM: usize = 2;
pub const FUNC: usize = 3;

/// Parameters of the synthetic mixed-geometry graph.
///
/// Entities are laid out as `n_tree_nodes` tree nodes, then
/// `n_chain_entities` chain entities, then `n_functional_groups` group
/// entities.
///
/// - `HIER`: child → parent edges of the complete `tree_branching`-ary tree.
/// - `SYM`: `n_collab_pairs` distinct sibling pairs of the tree; one direction
///   is emitted per pair.
/// - `ASYM`: a random DAG over the chain entities. They are cut into
///   consecutive segments of 3 to 6 entities and every forward pair `i < j`
///   within a segment is an edge.
/// - `FUNC`: each chain entity maps to exactly one group; all members of a
///   segment share their group, and segments are assigned to groups in
///   contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub n_tree_nodes: usize,
    pub tree_branching: usize,
    pub n_collab_pairs: usize,
    pub n_chain_entities: usize,
    pub n_functional_groups: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_tree_nodes: 255,
            tree_branching: 2,
            n_collab_pairs: 120,
            n_chain_entities: 240,
            n_functional_groups: 8,
            seed: 0,
        }
    }
}

/// Inclusive bounds on the length of a chain segment.
const SEGMENT_LEN: (usize, usize) = (3, 6);

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_tree_nodes", self.n_tree_nodes),
            ("tree_branching", self.tree_branching),
            ("n_collab_pairs", self.n_collab_pairs),
            ("n_chain_entities", self.n_chain_entities),
            ("n_functional_groups", self.n_functional_groups),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_tree_nodes < 2 {
            return Err(Error::Config("n_tree_nodes must be at least 2".into()));
        }
        if self.n_chain_entities < 2 {
            return Err(Error::Config("n_chain_entities must be at least 2".into()));
        }
        Ok(())
    }

    pub fn n_entities(&self) -> usize {
        self.n_tree_nodes + self.n_chain_entities + self.n_functional_groups
    }

    fn parent(&self, node: usize) -> usize {
        (node - 1) / self.tree_branching
    }
}

/// Generates the synthetic graph described by [`SyntheticSpec`].
pub fn generate_synthetic_kg(spec: &SyntheticSpec) -> Result<(Vocabulary, Vec<Triple>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let tree_base = 0;
    let chain_base = spec.n_tree_nodes;
    let group_base = chain_base + spec.n_chain_entities;

    let mut entities = Vec::with_capacity(spec.n_entities());
    entities.extend((0..spec.n_tree_nodes).map(|i| format!("node{i}")));
    entities.extend((0..spec.n_chain_entities).map(|i| format!("item{i}")));
    entities.extend((0..spec.n_functional_groups).map(|i| format!("group{i}")));
    let vocab = Vocabulary::from_names(
        entities,
        SYNTH_RELATIONS.iter().map(|s| s.to_string()).collect(),
    )?;

    let mut triples = Vec::new();

    for child in 1..spec.n_tree_nodes {
        triples.push(Triple::new(tree_base + child, HIER, tree_base + spec.parent(child)));
    }

    // sibling pairs, sampled without replacement
    let mut pairs = Vec::new();
    for parent in 0..spec.n_tree_nodes {
        let first = parent * spec.tree_branching + 1;
        let last = (first + spec.tree_branching).min(spec.n_tree_nodes);
        for a in first..last {
            for b in a + 1..last {
                pairs.push((a, b));
            }
        }
    }
    pairs.shuffle(&mut rng);
    pairs.truncate(spec.n_collab_pairs);
    pairs.sort_unstable();
    for (a, b) in pairs {
        let (u, v) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
        triples.push(Triple::new(tree_base + u, SYM, tree_base + v));
    }

    // consecutive segments of random length; every forward pair inside a
    // segment is an edge, so the DAG is transitively closed
    let mut segments = Vec::new();
    let mut start = 0;
    while start < spec.n_chain_entities {
        let len = rng.gen_range(SEGMENT_LEN.0..=SEGMENT_LEN.1);
        let end = (start + len).min(spec.n_chain_entities);
        segments.push(start..end);
        start = end;
    }
    for seg in &segments {
        for i in seg.clone() {
            for j in i + 1..seg.end {
                triples.push(Triple::new(chain_base + i, ASYM, chain_base + j));
            }
        }
    }

    for (k, seg) in segments.iter().enumerate() {
        let group = k * spec.n_functional_groups / segments.len();
        for i in seg.clone() {
            triples.push(Triple::new(chain_base + i, FUNC, group_base + group));
        }
    }

    Ok((vocab, triples))
}

fn render_triples(vocab: &Vocabulary, triples: &[Triple]) -> String {
    let mut s = String::new();
    for t in triples {
        let _ = writeln!(
            s,
            "{}\t{}\t{}",
            vocab.entity_names[t.head], vocab.relation_names[t.relation], vocab.entity_names[t.tail]
        );
    }
    s
}

fn render_names(names: &[String]) -> String {
    let mut s = String::new();
    for (i, n) in names.iter().enumerate() {
        let _ = writeln!(s, "{i}\t{n}");
    }
    s
}

/// File names of a dataset directory.
pub const SPLIT_FILES: [&str; 3] = ["train.tsv", "valid.tsv", "test.tsv"];
pub const ENTITIES_FILE: &str = "entities.tsv";
pub const RELATIONS_FILE: &str = "relations.tsv";

/// Writes `train.tsv`, `valid.tsv`, `test.tsv`, `entities.tsv` and
/// `relations.tsv`. All contents are rendered before anything is written.
pub fn write_dataset(dir: &Path, vocab: &Vocabulary, splits: &DatasetSplits) -> Result<()> {
    let files = [
        (SPLIT_FILES[0], render_triples(vocab, &splits.train)),
        (SPLIT_FILES[1], render_triples(vocab, &splits.valid)),
        (SPLIT_FILES[2], render_triples(vocab, &splits.test)),
        (ENTITIES_FILE, render_names(&vocab.entity_names)),
        (RELATIONS_FILE, render_names(&vocab.relation_names)),
    ];
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn read_names(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut names = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, name) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("{}: expected id<TAB>name", path.display()),
        })?;
        let id: usize = id.parse().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("{}: bad id {id:?}", path.display()),
        })?;
        if id != names.len() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("{}: ids must be 0..n ascending", path.display()),
            });
        }
        names.push(name.to_owned());
    }
    Ok(names)
}

fn read_split(dir: &Path, file: &str, vocab: &Vocabulary) -> Result<Vec<Triple>> {
    let path = dir.join(file);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let raw = parse_triples(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })?;
    vocab.bind(&raw)
}

/// Reads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<(Vocabulary, DatasetSplits)> {
    let vocab = Vocabulary::from_names(
        read_names(&dir.join(ENTITIES_FILE))?,
        read_names(&dir.join(RELATIONS_FILE))?,
    )?;
    let train = read_split(dir, SPLIT_FILES[0], &vocab)?;
    let valid = read_split(dir, SPLIT_FILES[1], &vocab)?;
    let test = read_split(dir, SPLIT_FILES[2], &vocab)?;
    let n = (train.len() + valid.len() + test.len()).max(1) as f64;
    let ratios = SplitRatios {
        train: train.len() as f64 / n,
        valid: valid.len() as f64 / n,
        test: test.len() as f64 / n,
    };
    Ok((
        vocab,
        DatasetSplits {
            train,
            valid,
            test,
            ratios,
        },
    ))
}
