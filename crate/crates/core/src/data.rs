//! Observed-data representation: judges, assessed sets, partial rankings,
//! ratings with missingness, plus CSV loading, validation, and writing.
//!
//! Objects and judges are identified externally by string labels and
//! internally by dense indices assigned in sorted-label order, so runs are
//! deterministic regardless of file row order. Ratings live on the analysis
//! scale `0..=M` with 0 best; raw file values may be recoded affinely at load
//! time (e.g. a 1.0-5.0 scale in 0.1 steps becomes 0..=40).

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::Write as _;
use std::path::Path;

use crate::{Error, Result};

/// Affine recoding from the raw rating scale to the analysis scale:
/// `analysis = (raw - offset) / step`, which must land on an integer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recode {
    pub offset: f64,
    pub step: f64,
}

impl Default for Recode {
    fn default() -> Self {
        Recode {
            offset: 0.0,
            step: 1.0,
        }
    }
}

impl Recode {
    /// Map a raw value to the analysis scale; `None` if it does not land
    /// within 1e-6 of a non-negative integer.
    pub fn apply(&self, raw: f64) -> Option<u32> {
        let x = (raw - self.offset) / self.step;
        let rounded = x.round();
        if (x - rounded).abs() > 1e-6 || rounded < 0.0 || rounded > u32::MAX as f64 {
            None
        } else {
            Some(rounded as u32)
        }
    }

    pub fn invert(&self, analysis: u32) -> f64 {
        self.offset + self.step * analysis as f64
    }
}

/// Coarse shape of a judge's ranking, derived from the record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankingStyle {
    /// No ranking provided; the likelihood uses ratings only.
    Unranked,
    /// Winner of a two-object comparison: a length-1 ranking over an
    /// assessed set of size 2.
    Pairwise,
    /// Best of a larger group: a length-1 ranking over a bigger assessed set.
    Groupwise,
    /// Top-r with r strictly between 1 and the assessed size.
    TopR,
    /// Every assessed object is ranked.
    Complete,
}

/// One judge's assessed set `S_i`, ranking `Pi_i`, and ratings `X_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgeRecord {
    /// Dense judge index.
    pub judge: usize,
    /// Sorted dense object indices the judge may rank or rate.
    pub assessed: Vec<usize>,
    /// Ordered most-preferred-first object indices; possibly empty.
    pub ranking: Vec<usize>,
    /// Observed ratings only; a missing entry contributes nothing to the
    /// likelihood.
    pub ratings: BTreeMap<usize, u32>,
}

impl JudgeRecord {
    pub fn new(
        judge: usize,
        mut assessed: Vec<usize>,
        ranking: Vec<usize>,
        ratings: BTreeMap<usize, u32>,
    ) -> Self {
        assessed.sort_unstable();
        assessed.dedup();
        JudgeRecord {
            judge,
            assessed,
            ranking,
            ratings,
        }
    }

    pub fn assesses(&self, object: usize) -> bool {
        self.assessed.binary_search(&object).is_ok()
    }

    pub fn style(&self) -> RankingStyle {
        match (self.ranking.len(), self.assessed.len()) {
            (0, _) => RankingStyle::Unranked,
            (1, 2) => RankingStyle::Pairwise,
            (1, n) if n > 2 => RankingStyle::Groupwise,
            (r, n) if r == n => RankingStyle::Complete,
            _ => RankingStyle::TopR,
        }
    }
}

/// The full observed dataset: `I` judges assessing `J` objects on a shared
/// rating scale `0..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    pub n_objects: usize,
    pub max_rating: u32,
    pub judges: Vec<JudgeRecord>,
    /// External label for each dense object index.
    pub object_labels: Vec<String>,
    /// External label for each dense judge index.
    pub judge_labels: Vec<String>,
    /// Whether `S_i` came from an assignments file (true) or defaulted to the
    /// union of rated and ranked objects (false).
    pub explicit_assignments: bool,
    /// Recoding applied at load time, recorded for output manifests.
    pub recode: Recode,
}

impl PreferenceDataset {
    pub fn n_judges(&self) -> usize {
        self.judges.len()
    }

    /// Build a dataset from in-memory records with synthetic labels.
    pub fn from_records(n_objects: usize, max_rating: u32, judges: Vec<JudgeRecord>) -> Self {
        let width = n_objects.max(2).to_string().len();
        let object_labels = (0..n_objects).map(|j| format!("o{j:0width$}")).collect();
        let jwidth = judges.len().max(2).to_string().len();
        let judge_labels = (0..judges.len())
            .map(|i| format!("j{i:0jwidth$}"))
            .collect();
        PreferenceDataset {
            n_objects,
            max_rating,
            judges,
            object_labels,
            judge_labels,
            explicit_assignments: true,
            recode: Recode::default(),
        }
    }

    pub fn object_index(&self, label: &str) -> Option<usize> {
        self.object_labels.iter().position(|l| l == label)
    }
}

/// A single invariant violation found by [`validate`]; data, not a failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Dense judge index when the violation is judge-specific.
    pub judge: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.judge {
            Some(i) => write!(f, "judge {}: {}", i, self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Check every structural invariant; an empty list means the dataset is valid.
pub fn validate(ds: &PreferenceDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |judge: Option<usize>, message: String| out.push(Violation { judge, message });

    if ds.n_objects == 0 {
        push(None, "dataset has no objects (J = 0)".into());
    }
    if ds.judges.is_empty() {
        push(None, "dataset has no judges (I = 0)".into());
    }
    if ds.max_rating == 0 {
        push(None, "max rating M must be >= 1".into());
    }
    if ds.object_labels.len() != ds.n_objects {
        push(None, "object label table does not match J".into());
    }
    if ds.judge_labels.len() != ds.judges.len() {
        push(None, "judge label table does not match I".into());
    }

    for (i, rec) in ds.judges.iter().enumerate() {
        if rec.judge != i {
            push(Some(i), format!("record stores judge index {}", rec.judge));
        }
        for &j in &rec.assessed {
            if j >= ds.n_objects {
                push(Some(i), format!("assessed object {j} out of range"));
            }
        }
        let mut seen = BTreeSet::new();
        for &j in &rec.ranking {
            if !seen.insert(j) {
                push(Some(i), format!("duplicate ranked object {j}"));
            }
            if !rec.assesses(j) {
                push(Some(i), format!("ranked object {j} not in assessed set"));
            }
        }
        if rec.ranking.len() > rec.assessed.len() {
            push(Some(i), "ranking longer than assessed set".into());
        }
        for (&j, &x) in &rec.ratings {
            if !rec.assesses(j) {
                push(Some(i), format!("rated object {j} not in assessed set"));
            }
            if x > ds.max_rating {
                push(
                    Some(i),
                    format!("rating {x} for object {j} exceeds M = {}", ds.max_rating),
                );
            }
        }
    }
    out
}

const RATINGS_HEADER: [&str; 3] = ["judge", "object", "rating"];
const RANKINGS_HEADER: [&str; 3] = ["judge", "position", "object"];
const ASSIGNMENTS_HEADER: [&str; 2] = ["judge", "object"];

struct RawRow {
    line: u64,
    fields: Vec<String>,
}

fn read_rows(path: &Path, expect_header: &[&str]) -> Result<Vec<RawRow>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let pathstr = path.display().to_string();
    let mut rows = Vec::new();
    let mut header_seen = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|source| Error::Csv {
            path: pathstr.clone(),
            source,
        })?;
        if rec.is_empty() || (rec.len() == 1 && rec[0].is_empty()) {
            continue;
        }
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let fields: Vec<String> = rec.iter().map(|s| s.to_string()).collect();
        if !header_seen {
            header_seen = true;
            let got: Vec<String> = fields.iter().map(|s| s.to_ascii_lowercase()).collect();
            if got != expect_header {
                return Err(Error::Load(vec![format!(
                    "{pathstr}:{line}: expected header `{}`, found `{}`",
                    expect_header.join(","),
                    fields.join(",")
                )]));
            }
            continue;
        }
        if fields.len() != expect_header.len() {
            return Err(Error::Load(vec![format!(
                "{pathstr}:{line}: expected {} fields, found {}",
                expect_header.len(),
                fields.len()
            )]));
        }
        rows.push(RawRow { line, fields });
    }
    Ok(rows)
}

/// Load a dataset from the ratings, rankings, and optional assignments files.
///
/// When no assignments file is given, each `S_i` defaults to the union of the
/// objects judge `i` rated or ranked and `explicit_assignments` is false.
/// Every problem found is reported together with its file and line number.
pub fn load_dataset(
    ratings_path: &Path,
    rankings_path: &Path,
    assignments_path: Option<&Path>,
    max_rating: u32,
    recode: Recode,
) -> Result<PreferenceDataset> {
    if max_rating == 0 {
        return Err(Error::InvalidConfig("max rating M must be >= 1".into()));
    }
    let rating_rows = read_rows(ratings_path, &RATINGS_HEADER)?;
    let ranking_rows = read_rows(rankings_path, &RANKINGS_HEADER)?;
    let assignment_rows = match assignments_path {
        Some(p) => Some(read_rows(p, &ASSIGNMENTS_HEADER)?),
        None => None,
    };

    // Dense indices are assigned in sorted order of the external labels.
    let mut judge_set: BTreeSet<&str> = BTreeSet::new();
    let mut object_set: BTreeSet<&str> = BTreeSet::new();
    for row in &rating_rows {
        judge_set.insert(&row.fields[0]);
        object_set.insert(&row.fields[1]);
    }
    for row in &ranking_rows {
        judge_set.insert(&row.fields[0]);
        object_set.insert(&row.fields[2]);
    }
    if let Some(rows) = &assignment_rows {
        for row in rows {
            judge_set.insert(&row.fields[0]);
            object_set.insert(&row.fields[1]);
        }
    }
    let judge_labels: Vec<String> = judge_set.iter().map(|s| s.to_string()).collect();
    let object_labels: Vec<String> = object_set.iter().map(|s| s.to_string()).collect();
    let judge_index: BTreeMap<&str, usize> = judge_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let object_index: BTreeMap<&str, usize> = object_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let n_judges = judge_labels.len();
    let mut problems: Vec<String> = Vec::new();

    // Ratings: one row per observed (judge, object).
    let rpath = ratings_path.display().to_string();
    let mut ratings: Vec<BTreeMap<usize, (u32, u64)>> = vec![BTreeMap::new(); n_judges];
    for row in &rating_rows {
        let i = judge_index[row.fields[0].as_str()];
        let j = object_index[row.fields[1].as_str()];
        let raw: f64 = match row.fields[2].parse() {
            Ok(v) => v,
            Err(_) => {
                problems.push(format!(
                    "{rpath}:{}: rating `{}` is not a number",
                    row.line, row.fields[2]
                ));
                continue;
            }
        };
        let value = match recode.apply(raw) {
            Some(v) if v <= max_rating => v,
            _ => {
                problems.push(format!(
                    "{rpath}:{}: rating {raw} is outside the scale 0..={max_rating} \
                     after recoding (offset {}, step {})",
                    row.line, recode.offset, recode.step
                ));
                continue;
            }
        };
        match ratings[i].entry(j) {
            Entry::Vacant(e) => {
                e.insert((value, row.line));
            }
            Entry::Occupied(e) => {
                problems.push(format!(
                    "{rpath}:{}: duplicate rating for judge `{}`, object `{}` (first at line {})",
                    row.line,
                    row.fields[0],
                    row.fields[1],
                    e.get().1
                ));
            }
        }
    }

    // Rankings: 1-based contiguous positions per judge.
    let kpath = rankings_path.display().to_string();
    let mut rank_entries: Vec<Vec<(u32, usize, u64)>> = vec![Vec::new(); n_judges];
    for row in &ranking_rows {
        let i = judge_index[row.fields[0].as_str()];
        let j = object_index[row.fields[2].as_str()];
        let pos: u32 = match row.fields[1].parse() {
            Ok(v) if v >= 1 => v,
            _ => {
                problems.push(format!(
                    "{kpath}:{}: position `{}` is not a positive integer",
                    row.line, row.fields[1]
                ));
                continue;
            }
        };
        rank_entries[i].push((pos, j, row.line));
    }
    let mut rankings: Vec<Vec<usize>> = vec![Vec::new(); n_judges];
    for (i, entries) in rank_entries.iter_mut().enumerate() {
        entries.sort_by_key(|&(pos, _, line)| (pos, line));
        let mut ranking = Vec::with_capacity(entries.len());
        let mut ok = true;
        for (idx, &(pos, j, line)) in entries.iter().enumerate() {
            let expected = idx as u32 + 1;
            if pos != expected {
                let label = &judge_labels[i];
                if idx > 0 && entries[idx - 1].0 == pos {
                    problems.push(format!(
                        "{kpath}:{line}: duplicate rank position {pos} for judge `{label}` \
                         (first at line {})",
                        entries[idx - 1].2
                    ));
                } else {
                    problems.push(format!(
                        "{kpath}:{line}: judge `{label}` rank positions are not contiguous \
                         (expected {expected}, found {pos})"
                    ));
                }
                ok = false;
                break;
            }
            if ranking.contains(&j) {
                problems.push(format!(
                    "{kpath}:{line}: judge `{}` ranks object `{}` more than once",
                    judge_labels[i], object_labels[j]
                ));
                ok = false;
                break;
            }
            ranking.push(j);
        }
        if ok {
            rankings[i] = ranking;
        }
    }

    // Assessed sets.
    let explicit = assignment_rows.is_some();
    let mut assessed: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_judges];
    if let Some(rows) = &assignment_rows {
        for row in rows {
            let i = judge_index[row.fields[0].as_str()];
            let j = object_index[row.fields[1].as_str()];
            assessed[i].insert(j);
        }
        let apath = assignments_path.unwrap().display().to_string();
        for row in &rating_rows {
            let i = judge_index[row.fields[0].as_str()];
            let j = object_index[row.fields[1].as_str()];
            if !assessed[i].contains(&j) {
                problems.push(format!(
                    "{rpath}:{}: judge `{}` rates object `{}` outside their assessed set \
                     (see {apath})",
                    row.line, row.fields[0], row.fields[1]
                ));
            }
        }
        for row in &ranking_rows {
            let i = judge_index[row.fields[0].as_str()];
            let j = object_index[row.fields[2].as_str()];
            if !assessed[i].contains(&j) {
                problems.push(format!(
                    "{kpath}:{}: judge `{}` ranks object `{}` outside their assessed set \
                     (see {apath})",
                    row.line, row.fields[0], row.fields[2]
                ));
            }
        }
    } else {
        for (i, map) in ratings.iter().enumerate() {
            assessed[i].extend(map.keys().copied());
        }
        for (i, ranking) in rankings.iter().enumerate() {
            assessed[i].extend(ranking.iter().copied());
        }
    }

    if !problems.is_empty() {
        return Err(Error::Load(problems));
    }

    let judges: Vec<JudgeRecord> = (0..n_judges)
        .map(|i| {
            JudgeRecord::new(
                i,
                assessed[i].iter().copied().collect(),
                std::mem::take(&mut rankings[i]),
                ratings[i].iter().map(|(&j, &(v, _))| (j, v)).collect(),
            )
        })
        .collect();

    let ds = PreferenceDataset {
        n_objects: object_labels.len(),
        max_rating,
        judges,
        object_labels,
        judge_labels,
        explicit_assignments: explicit,
        recode,
    };
    let violations = validate(&ds);
    if !violations.is_empty() {
        return Err(Error::Invalid(
            violations.iter().map(|v| v.to_string()).collect(),
        ));
    }
    Ok(ds)
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write the dataset back out in the load format, on the analysis scale.
///
/// The assignments file is written only when the dataset carries explicit
/// assessed sets. Reloading the written files with an identity recode
/// reproduces the same logical records.
pub fn write_dataset(
    ds: &PreferenceDataset,
    ratings_path: &Path,
    rankings_path: &Path,
    assignments_path: Option<&Path>,
) -> Result<()> {
    let mut f = create(ratings_path)?;
    writeln!(f, "judge,object,rating").map_err(|e| io_err(ratings_path, e))?;
    for rec in &ds.judges {
        for (&j, &x) in &rec.ratings {
            writeln!(
                f,
                "{},{},{}",
                ds.judge_labels[rec.judge], ds.object_labels[j], x
            )
            .map_err(|e| io_err(ratings_path, e))?;
        }
    }

    let mut f = create(rankings_path)?;
    writeln!(f, "judge,position,object").map_err(|e| io_err(rankings_path, e))?;
    for rec in &ds.judges {
        for (pos, &j) in rec.ranking.iter().enumerate() {
            writeln!(
                f,
                "{},{},{}",
                ds.judge_labels[rec.judge],
                pos + 1,
                ds.object_labels[j]
            )
            .map_err(|e| io_err(rankings_path, e))?;
        }
    }

    if let Some(path) = assignments_path {
        if ds.explicit_assignments {
            let mut f = create(path)?;
            writeln!(f, "judge,object").map_err(|e| io_err(path, e))?;
            for rec in &ds.judges {
                for &j in &rec.assessed {
                    writeln!(f, "{},{}", ds.judge_labels[rec.judge], ds.object_labels[j])
                        .map_err(|e| io_err(path, e))?;
                }
            }
        }
    }
    Ok(())
}
