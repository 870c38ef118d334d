//! Retained MCMC draws and their on-disk representation.
//!
//! Samples are written as four delimited text files plus a small metadata
//! file. Floats are printed with Rust's shortest round-trip formatting, so a
//! re-read reproduces the in-memory values exactly and identical runs produce
//! byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::model::ClassParams;
use crate::num::Real;
use crate::{Error, Result};

/// Full sampler state retained at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord<F> {
    /// 1-based sweep index within the chain.
    pub iter: usize,
    pub k: usize,
    pub kplus: usize,
    pub gamma: F,
    /// Log joint density of the recorded state.
    pub log_post: F,
    /// Mixture weights over all `k` classes.
    pub weights: Vec<F>,
    /// Class label per judge.
    pub labels: Vec<usize>,
    /// Parameters of all `k` classes (occupied first for the MFM sampler).
    pub classes: Vec<ClassParams<F>>,
}

/// Every retained draw of one chain, with enough shape information to
/// replay diagnostics without the original dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples<F> {
    pub n_judges: usize,
    pub n_objects: usize,
    pub max_rating: u32,
    pub records: Vec<SampleRecord<F>>,
}

impl<F: Real> PosteriorSamples<F> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Most frequent number of occupied classes; ties go to the smaller
    /// value. Panics on an empty record set.
    pub fn kplus_mode(&self) -> usize {
        assert!(!self.records.is_empty(), "no retained draws");
        let max = self.records.iter().map(|r| r.kplus).max().unwrap();
        let mut counts = vec![0usize; max + 1];
        for r in &self.records {
            counts[r.kplus] += 1;
        }
        counts
            .iter()
            .enumerate()
            .max_by_key(|&(k, &c)| (c, std::cmp::Reverse(k)))
            .map(|(k, _)| k)
            .unwrap()
    }
}

pub const SCALARS_FILE: &str = "scalars.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const PARAMS_FILE: &str = "params.csv";
pub const META_FILE: &str = "meta.csv";

fn writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|source| {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    })?))
}

fn wio(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

/// Write the sample files into `dir`, returning the paths written.
pub fn write_sample_files<F: Real>(
    samples: &PosteriorSamples<F>,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| wio(dir, e))?;
    let scalars = dir.join(SCALARS_FILE);
    let weights = dir.join(WEIGHTS_FILE);
    let labels = dir.join(LABELS_FILE);
    let params = dir.join(PARAMS_FILE);
    let meta = dir.join(META_FILE);

    let mut w = writer(&scalars)?;
    writeln!(w, "iter,k,kplus,gamma,logpost").map_err(|e| wio(&scalars, e))?;
    for r in &samples.records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.iter, r.k, r.kplus, r.gamma, r.log_post
        )
        .map_err(|e| wio(&scalars, e))?;
    }

    let mut w = writer(&weights)?;
    writeln!(w, "iter,class,weight").map_err(|e| wio(&weights, e))?;
    for r in &samples.records {
        for (k, wk) in r.weights.iter().enumerate() {
            writeln!(w, "{},{},{}", r.iter, k, wk).map_err(|e| wio(&weights, e))?;
        }
    }

    let mut w = writer(&labels)?;
    writeln!(w, "iter,judge,class").map_err(|e| wio(&labels, e))?;
    for r in &samples.records {
        for (i, z) in r.labels.iter().enumerate() {
            writeln!(w, "{},{},{}", r.iter, i, z).map_err(|e| wio(&labels, e))?;
        }
    }

    let mut w = writer(&params)?;
    writeln!(w, "iter,class,param,index,value").map_err(|e| wio(&params, e))?;
    for r in &samples.records {
        for (k, class) in r.classes.iter().enumerate() {
            for (j, pj) in class.p.iter().enumerate() {
                writeln!(w, "{},{},p,{},{}", r.iter, k, j, pj).map_err(|e| wio(&params, e))?;
            }
            writeln!(w, "{},{},theta,0,{}", r.iter, k, class.theta)
                .map_err(|e| wio(&params, e))?;
        }
    }

    let mut w = writer(&meta)?;
    writeln!(w, "key,value").map_err(|e| wio(&meta, e))?;
    writeln!(w, "n_judges,{}", samples.n_judges).map_err(|e| wio(&meta, e))?;
    writeln!(w, "n_objects,{}", samples.n_objects).map_err(|e| wio(&meta, e))?;
    writeln!(w, "max_rating,{}", samples.max_rating).map_err(|e| wio(&meta, e))?;
    writeln!(w, "records,{}", samples.records.len()).map_err(|e| wio(&meta, e))?;

    Ok(vec![scalars, weights, labels, params, meta])
}

fn read_csv(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|source| Error::Csv {
            path: path.display().to_string(),
            source,
        })?;
        rows.push(rec.iter().map(|s| s.to_string()).collect());
    }
    Ok(rows)
}

fn parse<T: std::str::FromStr>(path: &Path, field: &str) -> Result<T> {
    field.parse().map_err(|_| {
        Error::InvalidConfig(format!(
            "{}: cannot parse `{field}`",
            path.display()
        ))
    })
}

/// Read sample files previously written by [`write_sample_files`].
pub fn read_sample_files<F: Real>(dir: &Path) -> Result<PosteriorSamples<F>> {
    let meta_path = dir.join(META_FILE);
    let mut n_judges = None;
    let mut n_objects = None;
    let mut max_rating = None;
    for row in read_csv(&meta_path)? {
        match row[0].as_str() {
            "n_judges" => n_judges = Some(parse::<usize>(&meta_path, &row[1])?),
            "n_objects" => n_objects = Some(parse::<usize>(&meta_path, &row[1])?),
            "max_rating" => max_rating = Some(parse::<u32>(&meta_path, &row[1])?),
            _ => {}
        }
    }
    let (n_judges, n_objects, max_rating) = match (n_judges, n_objects, max_rating) {
        (Some(i), Some(j), Some(m)) => (i, j, m),
        _ => {
            return Err(Error::InvalidConfig(format!(
                "{}: missing n_judges/n_objects/max_rating",
                meta_path.display()
            )))
        }
    };

    let scalars_path = dir.join(SCALARS_FILE);
    let mut records: Vec<SampleRecord<F>> = Vec::new();
    let mut index_of = std::collections::BTreeMap::new();
    for row in read_csv(&scalars_path)? {
        let iter: usize = parse(&scalars_path, &row[0])?;
        let k: usize = parse(&scalars_path, &row[1])?;
        index_of.insert(iter, records.len());
        records.push(SampleRecord {
            iter,
            k,
            kplus: parse(&scalars_path, &row[2])?,
            gamma: F::of(parse::<f64>(&scalars_path, &row[3])?),
            log_post: F::of(parse::<f64>(&scalars_path, &row[4])?),
            weights: vec![F::zero(); k],
            labels: vec![0; n_judges],
            classes: vec![
                ClassParams {
                    p: vec![F::zero(); n_objects],
                    theta: F::one(),
                };
                k
            ],
        });
    }

    let weights_path = dir.join(WEIGHTS_FILE);
    for row in read_csv(&weights_path)? {
        let iter: usize = parse(&weights_path, &row[0])?;
        let k: usize = parse(&weights_path, &row[1])?;
        let idx = *index_of.get(&iter).ok_or_else(|| {
            Error::InvalidConfig(format!("{}: unknown iter {iter}", weights_path.display()))
        })?;
        records[idx].weights[k] = F::of(parse::<f64>(&weights_path, &row[2])?);
    }

    let labels_path = dir.join(LABELS_FILE);
    for row in read_csv(&labels_path)? {
        let iter: usize = parse(&labels_path, &row[0])?;
        let judge: usize = parse(&labels_path, &row[1])?;
        let idx = *index_of.get(&iter).ok_or_else(|| {
            Error::InvalidConfig(format!("{}: unknown iter {iter}", labels_path.display()))
        })?;
        records[idx].labels[judge] = parse(&labels_path, &row[2])?;
    }

    let params_path = dir.join(PARAMS_FILE);
    for row in read_csv(&params_path)? {
        let iter: usize = parse(&params_path, &row[0])?;
        let k: usize = parse(&params_path, &row[1])?;
        let idx = *index_of.get(&iter).ok_or_else(|| {
            Error::InvalidConfig(format!("{}: unknown iter {iter}", params_path.display()))
        })?;
        let value = F::of(parse::<f64>(&params_path, &row[4])?);
        match row[2].as_str() {
            "p" => {
                let j: usize = parse(&params_path, &row[3])?;
                records[idx].classes[k].p[j] = value;
            }
            "theta" => records[idx].classes[k].theta = value,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "{}: unknown param `{other}`",
                    params_path.display()
                )))
            }
        }
    }

    Ok(PosteriorSamples {
        n_judges,
        n_objects,
        max_rating,
        records,
    })
}
