//! Quadruple ingestion, snapshot indexing, inverse augmentation and the
//! name-derived static graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: {kind} id {id} out of range (vocabulary size {size})")]
    IdOutOfRange {
        path: String,
        line: usize,
        kind: &'static str,
        id: u64,
        size: usize,
    },
    #[error("empty split: {0}")]
    EmptySplit(&'static str),
    #[error("non-monotone split boundaries: {0}")]
    SplitOrder(String),
    #[error("fact store is already augmented with inverse quadruples")]
    AlreadyAugmented,
    #[error("timestamp {t} outside timeline of {len} snapshots")]
    TimestampOutOfRange { t: usize, len: usize },
    #[error("history window length must be at least 1")]
    EmptyWindow,
    #[error("no name given for entity {0}")]
    MissingName(usize),
}

/// One fact `(subject, relation, object, timestamp)`; the timestamp is a
/// snapshot index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quadruple {
    pub subject: u32,
    pub relation: u32,
    pub object: u32,
    pub timestamp: u32,
}

impl Quadruple {
    pub fn new(subject: u32, relation: u32, object: u32, timestamp: u32) -> Self {
        Self {
            subject,
            relation,
            object,
            timestamp,
        }
    }
}

/// All facts of one timestamp with the indices the encoder needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub timestamp: usize,
    pub facts: Vec<Quadruple>,
    /// Number of facts with each entity as object.
    pub in_degree: Vec<u32>,
    /// Relation id to the sorted set of entities it touches at this timestamp.
    pub rel_entities: BTreeMap<u32, Vec<u32>>,
    /// Sorted entities appearing in any fact.
    pub active_entities: Vec<u32>,
}

impl Snapshot {
    pub fn new(timestamp: usize, facts: Vec<Quadruple>, num_entities: usize) -> Self {
        let mut in_degree = vec![0u32; num_entities];
        let mut rel: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        let mut active = BTreeSet::new();
        for f in &facts {
            in_degree[f.object as usize] += 1;
            let set = rel.entry(f.relation).or_default();
            set.insert(f.subject);
            set.insert(f.object);
            active.insert(f.subject);
            active.insert(f.object);
        }
        Self {
            timestamp,
            facts,
            in_degree,
            rel_entities: rel
                .into_iter()
                .map(|(r, s)| (r, s.into_iter().collect()))
                .collect(),
            active_entities: active.into_iter().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn num_entities(&self) -> usize {
        self.in_degree.len()
    }

    /// Whether the entity takes part in any fact of this snapshot.
    pub fn is_active(&self, entity: u32) -> bool {
        self.active_entities.binary_search(&entity).is_ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

/// The whole timeline: train, valid and test snapshots in temporal order.
#[derive(Clone, Debug, PartialEq)]
pub struct FactStore {
    pub num_entities: usize,
    /// Relation vocabulary before inverse augmentation.
    pub num_relations: usize,
    augmented: bool,
    snapshots: Vec<Snapshot>,
    train_end: usize,
    valid_end: usize,
    time_origin: u64,
    time_interval: u64,
}

/// A quadruple with its raw (unnormalized) time value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawFact {
    pub subject: u32,
    pub relation: u32,
    pub object: u32,
    pub time: u64,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn read(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads `|V| |R|` from the first line of a stat file.
pub fn parse_stat(text: &str, path: &str) -> Result<(usize, usize), DataError> {
    let line = text.lines().next().unwrap_or("");
    let nums: Vec<&str> = line.split_whitespace().collect();
    if nums.len() < 2 {
        return Err(DataError::Parse {
            path: path.into(),
            line: 1,
            message: format!("expected '|V| |R|', got '{line}'"),
        });
    }
    let parse = |s: &str| {
        s.parse::<usize>().map_err(|_| DataError::Parse {
            path: path.into(),
            line: 1,
            message: format!("'{s}' is not a non-negative integer"),
        })
    };
    Ok((parse(nums[0])?, parse(nums[1])?))
}

/// Parses tab- or space-separated `s r o time` lines. A fifth column, as
/// shipped by some releases, is ignored.
pub fn parse_quadruples(
    text: &str,
    path: &str,
    num_entities: usize,
    num_relations: usize,
) -> Result<Vec<RawFact>, DataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(DataError::Parse {
                path: path.into(),
                line: lineno,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let mut nums = [0u64; 4];
        for (slot, f) in nums.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| DataError::Parse {
                path: path.into(),
                line: lineno,
                message: format!("'{f}' is not a non-negative integer"),
            })?;
        }
        for (kind, id, size) in [
            ("entity", nums[0], num_entities),
            ("relation", nums[1], num_relations),
            ("entity", nums[2], num_entities),
        ] {
            if id >= size as u64 {
                return Err(DataError::IdOutOfRange {
                    path: path.into(),
                    line: lineno,
                    kind,
                    id,
                    size,
                });
            }
        }
        out.push(RawFact {
            subject: nums[0] as u32,
            relation: nums[1] as u32,
            object: nums[2] as u32,
            time: nums[3],
        });
    }
    Ok(out)
}

/// Loads a dataset directory laid out as `train.txt`, `valid.txt`,
/// `test.txt` and `stat.txt`.
pub fn load_quadruples(train: &Path, valid: &Path, test: &Path, stat: &Path) -> Result<FactStore, DataError> {
    let (num_entities, num_relations) = parse_stat(&read(stat)?, &stat.display().to_string())?;
    let mut splits = Vec::with_capacity(3);
    for path in [train, valid, test] {
        let text = read(path)?;
        splits.push(parse_quadruples(
            &text,
            &path.display().to_string(),
            num_entities,
            num_relations,
        )?);
    }
    let test = splits.pop().unwrap_or_default();
    let valid = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    FactStore::from_raw(num_entities, num_relations, train, valid, test)
}

pub fn load_dataset_dir(dir: &Path) -> Result<FactStore, DataError> {
    load_quadruples(
        &dir.join("train.txt"),
        &dir.join("valid.txt"),
        &dir.join("test.txt"),
        &dir.join("stat.txt"),
    )
}

impl FactStore {
    /// Builds the timeline from raw facts. Raw times are shifted to start at
    /// zero and divided by the GCD of successive distinct time gaps; empty
    /// timestamps in range become empty snapshots.
    pub fn from_raw(
        num_entities: usize,
        num_relations: usize,
        train: Vec<RawFact>,
        valid: Vec<RawFact>,
        test: Vec<RawFact>,
    ) -> Result<Self, DataError> {
        if train.is_empty() {
            return Err(DataError::EmptySplit("train"));
        }
        let bounds = |s: &[RawFact]| {
            s.iter()
                .map(|f| f.time)
                .fold(None, |acc: Option<(u64, u64)>, t| match acc {
                    None => Some((t, t)),
                    Some((lo, hi)) => Some((lo.min(t), hi.max(t))),
                })
        };
        let tb = bounds(&train);
        let vb = bounds(&valid);
        let sb = bounds(&test);
        let mut prev: Option<(&str, (u64, u64))> = None;
        for (name, b) in [("train", tb), ("valid", vb), ("test", sb)] {
            let Some(b) = b else { continue };
            if let Some((pname, p)) = prev {
                if b.0 <= p.1 {
                    return Err(DataError::SplitOrder(format!(
                        "{name} starts at time {} but {pname} ends at {}",
                        b.0, p.1
                    )));
                }
            }
            prev = Some((name, b));
        }

        let times: BTreeSet<u64> = train.iter().chain(&valid).chain(&test).map(|f| f.time).collect();
        let origin = *times.iter().next().expect("train is non-empty");
        let interval = times
            .iter()
            .zip(times.iter().skip(1))
            .fold(0, |g, (a, b)| gcd(g, b - a))
            .max(1);
        let index = |t: u64| ((t - origin) / interval) as usize;

        let last = index(*times.iter().next_back().expect("non-empty"));
        let train_end = index(tb.expect("non-empty").1) + 1;
        let valid_end = vb.map_or(train_end, |b| index(b.1) + 1);
        let len = last + 1;
        let mut buckets: Vec<Vec<Quadruple>> = vec![Vec::new(); len];
        for f in train.iter().chain(&valid).chain(&test) {
            let t = index(f.time);
            buckets[t].push(Quadruple::new(f.subject, f.relation, f.object, t as u32));
        }
        let snapshots = buckets
            .into_iter()
            .enumerate()
            .map(|(t, facts)| Snapshot::new(t, facts, num_entities))
            .collect();
        Ok(Self {
            num_entities,
            num_relations,
            augmented: false,
            snapshots,
            train_end,
            valid_end,
            time_origin: origin,
            time_interval: interval,
        })
    }

    /// Builds a store whose raw times already are consecutive snapshot
    /// indices; the three splits are given by per-timestamp fact lists.
    pub fn from_timeline(
        num_entities: usize,
        num_relations: usize,
        timeline: Vec<Vec<(u32, u32, u32)>>,
        train_len: usize,
        valid_len: usize,
    ) -> Result<Self, DataError> {
        if train_len == 0 {
            return Err(DataError::EmptySplit("train"));
        }
        if train_len + valid_len > timeline.len() {
            return Err(DataError::SplitOrder(format!(
                "split lengths {train_len}+{valid_len} exceed timeline of {}",
                timeline.len()
            )));
        }
        for facts in &timeline {
            for &(s, r, o) in facts {
                if s as usize >= num_entities || o as usize >= num_entities {
                    return Err(DataError::IdOutOfRange {
                        path: "<timeline>".into(),
                        line: 0,
                        kind: "entity",
                        id: s.max(o) as u64,
                        size: num_entities,
                    });
                }
                if r as usize >= num_relations {
                    return Err(DataError::IdOutOfRange {
                        path: "<timeline>".into(),
                        line: 0,
                        kind: "relation",
                        id: r as u64,
                        size: num_relations,
                    });
                }
            }
        }
        let snapshots = timeline
            .into_iter()
            .enumerate()
            .map(|(t, facts)| {
                let quads = facts
                    .into_iter()
                    .map(|(s, r, o)| Quadruple::new(s, r, o, t as u32))
                    .collect();
                Snapshot::new(t, quads, num_entities)
            })
            .collect();
        Ok(Self {
            num_entities,
            num_relations,
            augmented: false,
            snapshots,
            train_end: train_len,
            valid_end: train_len + valid_len,
            time_origin: 0,
            time_interval: 1,
        })
    }

    /// Appends `(o, r + |R|, s, t)` for every fact `(s, r, o, t)`.
    pub fn add_inverse_quadruples(mut self) -> Result<Self, DataError> {
        if self.augmented {
            return Err(DataError::AlreadyAugmented);
        }
        let shift = self.num_relations as u32;
        let n = self.num_entities;
        self.snapshots = self
            .snapshots
            .into_iter()
            .map(|snap| {
                let mut facts = snap.facts;
                let inverse: Vec<Quadruple> = facts
                    .iter()
                    .map(|f| Quadruple::new(f.object, f.relation + shift, f.subject, f.timestamp))
                    .collect();
                facts.extend(inverse);
                Snapshot::new(snap.timestamp, facts, n)
            })
            .collect();
        self.augmented = true;
        Ok(self)
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    /// Size of the relation vocabulary the model sees: `2|R|` once augmented.
    pub fn relation_vocab(&self) -> usize {
        if self.augmented {
            2 * self.num_relations
        } else {
            self.num_relations
        }
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn snapshot(&self, t: usize) -> Option<&Snapshot> {
        self.snapshots.get(t)
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Number of training timestamps.
    pub fn num_train_timestamps(&self) -> usize {
        self.train_end
    }

    pub fn split_range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => 0..self.train_end,
            Split::Valid => self.train_end..self.valid_end,
            Split::Test => self.valid_end..self.snapshots.len(),
        }
    }

    pub fn split_snapshots(&self, split: Split) -> &[Snapshot] {
        &self.snapshots[self.split_range(split)]
    }

    /// Facts in a split; inverse facts are included once augmented.
    pub fn split_fact_count(&self, split: Split) -> usize {
        self.split_snapshots(split).iter().map(|s| s.facts.len()).sum()
    }

    /// Facts in a split excluding inverse quadruples.
    pub fn base_fact_count(&self, split: Split) -> usize {
        let r = self.num_relations as u32;
        self.split_snapshots(split)
            .iter()
            .flat_map(|s| &s.facts)
            .filter(|f| f.relation < r)
            .count()
    }

    pub fn time_interval(&self) -> u64 {
        self.time_interval
    }

    pub fn time_origin(&self) -> u64 {
        self.time_origin
    }

    /// The latest `m` snapshots ending at `t`, truncated at the start of the
    /// timeline.
    pub fn history_window(&self, t: usize, m: usize) -> Result<&[Snapshot], DataError> {
        if m == 0 {
            return Err(DataError::EmptyWindow);
        }
        if t >= self.snapshots.len() {
            return Err(DataError::TimestampOutOfRange {
                t,
                len: self.snapshots.len(),
            });
        }
        let start = (t + 1).saturating_sub(m);
        Ok(&self.snapshots[start..=t])
    }

    /// Serializes the non-inverse facts of a split back to `s\tr\to\ttime`
    /// lines with raw times restored.
    pub fn to_lines(&self, split: Split) -> String {
        let r = self.num_relations as u32;
        let mut out = String::new();
        for snap in self.split_snapshots(split) {
            for f in snap.facts.iter().filter(|f| f.relation < r) {
                let raw = self.time_origin + f.timestamp as u64 * self.time_interval;
                let _ = writeln!(out, "{}\t{}\t{}\t{}", f.subject, f.relation, f.object, raw);
            }
        }
        out
    }

    /// Every `(s, r, o)` triple in the store, ignoring time. Used for the
    /// diagnostic filtered ranking.
    pub fn all_triples(&self) -> BTreeSet<(u32, u32, u32)> {
        self.snapshots
            .iter()
            .flat_map(|s| &s.facts)
            .map(|f| (f.subject, f.relation, f.object))
            .collect()
    }
}

/// Static relation ids.
pub const IS_A: u32 = 0;
pub const COUNTRY: u32 = 1;

/// Entity-to-property graph parsed from names of the form `type (country)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticGraph {
    pub num_entities: usize,
    /// Property entity names; property `j` is addressed by its index here.
    pub properties: Vec<String>,
    pub num_static_relations: usize,
    /// `(entity, static relation, property)` edges, sorted and unique.
    pub edges: Vec<(u32, u32, u32)>,
    /// Per-entity count of static edges, the normalizer `c_i`.
    pub neighbor_count: Vec<u32>,
}

/// Splits `X (Y)` at the outermost parentheses. Returns `(X, Some(Y))`, or
/// the whole name when it has no trailing parenthesized part.
pub fn split_entity_name(name: &str) -> (&str, Option<&str>) {
    let trimmed = name.trim();
    if let (Some(open), true) = (trimmed.find('('), trimmed.ends_with(')')) {
        let head = trimmed[..open].trim();
        let inner = trimmed[open + 1..trimmed.len() - 1].trim();
        if !head.is_empty() && !inner.is_empty() {
            return (head, Some(inner));
        }
    }
    (trimmed, None)
}

impl StaticGraph {
    pub fn from_names(names: &[String]) -> Self {
        let mut ids: HashMap<String, u32> = HashMap::new();
        let mut properties = Vec::new();
        let mut intern = |s: &str| -> u32 {
            if let Some(&id) = ids.get(s) {
                return id;
            }
            let id = properties.len() as u32;
            properties.push(s.to_string());
            ids.insert(s.to_string(), id);
            id
        };
        let mut edges = BTreeSet::new();
        for (e, name) in names.iter().enumerate() {
            let (kind, country) = split_entity_name(name);
            edges.insert((e as u32, IS_A, intern(kind)));
            if let Some(c) = country {
                edges.insert((e as u32, COUNTRY, intern(c)));
            }
        }
        let mut neighbor_count = vec![0u32; names.len()];
        for &(e, _, _) in &edges {
            neighbor_count[e as usize] += 1;
        }
        Self {
            num_entities: names.len(),
            properties,
            num_static_relations: 2,
            edges: edges.into_iter().collect(),
            neighbor_count,
        }
    }

    pub fn num_properties(&self) -> usize {
        self.properties.len()
    }
}

/// Reads an entity name file. Each line holds a name and an integer id
/// separated by a tab, in either order.
pub fn load_entity_names(path: &Path, num_entities: usize) -> Result<Vec<String>, DataError> {
    let text = read(path)?;
    parse_entity_names(&text, &path.display().to_string(), num_entities)
}

pub fn parse_entity_names(text: &str, path: &str, num_entities: usize) -> Result<Vec<String>, DataError> {
    let mut names: Vec<Option<String>> = vec![None; num_entities];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| DataError::Parse {
            path: path.into(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(parse_err(format!(
                "expected 'id<TAB>name', found {} fields",
                fields.len()
            )));
        }
        let (id, name) = match (fields[0].trim().parse::<u64>(), fields[1].trim().parse::<u64>()) {
            (Ok(id), _) => (id, fields[1]),
            (Err(_), Ok(id)) => (id, fields[0]),
            _ => return Err(parse_err("no integer id column".into())),
        };
        if id >= num_entities as u64 {
            return Err(DataError::IdOutOfRange {
                path: path.into(),
                line: i + 1,
                kind: "entity",
                id,
                size: num_entities,
            });
        }
        names[id as usize] = Some(name.to_string());
    }
    names
        .into_iter()
        .enumerate()
        .map(|(i, n)| n.ok_or(DataError::MissingName(i)))
        .collect()
}
