//! Posterior-predictive goodness-of-fit statistics, judge co-clustering,
//! conditional-on-K+ summaries, and plot-ready trace exports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use rand::Rng;

use crate::data::{JudgeRecord, PreferenceDataset};
use crate::model::{consensus_ranking, sample_judge, ClassParams, ConsensusRanking};
use crate::num::Real;
use crate::rng::categorical_from_log_weights;
use crate::samples::PosteriorSamples;
use crate::{Error, Result};

/// Observed versus replicated statistics for goodness-of-fit assessment:
/// per-object rating means and variances, and the pairwise precedence
/// matrices. Matrix entries are `NaN` where no information exists.
#[derive(Debug, Clone)]
pub struct GofReport<F> {
    pub n_objects: usize,
    pub n_rep: usize,
    pub observed_mean: Vec<F>,
    pub observed_var: Vec<F>,
    /// `[replicate][object]`.
    pub rep_mean: Vec<Vec<F>>,
    pub rep_var: Vec<Vec<F>>,
    /// `J x J` row-major: entry `(a, b)` is the fraction of orderings with
    /// `a` preceding `b` among judges whose ranking orders the pair.
    pub observed_pairwise: Vec<F>,
    /// Same statistic averaged over the replicates (per-pair, over the
    /// replicates where the pair was ordered at least once).
    pub replicated_pairwise: Vec<F>,
}

impl<F: Real> GofReport<F> {
    pub fn observed_pair(&self, a: usize, b: usize) -> F {
        self.observed_pairwise[a * self.n_objects + b]
    }

    pub fn replicated_pair(&self, a: usize, b: usize) -> F {
        self.replicated_pairwise[a * self.n_objects + b]
    }
}

/// Per-object mean and sample variance of the observed ratings; `NaN` where
/// fewer than one (mean) or two (variance) ratings exist.
fn rating_stats<F: Real>(judges: &[JudgeRecord], n_objects: usize) -> (Vec<F>, Vec<F>) {
    let mut sums = vec![0.0f64; n_objects];
    let mut sumsq = vec![0.0f64; n_objects];
    let mut counts = vec![0usize; n_objects];
    for rec in judges {
        for (&j, &x) in &rec.ratings {
            sums[j] += x as f64;
            sumsq[j] += (x as f64) * (x as f64);
            counts[j] += 1;
        }
    }
    let mut means = Vec::with_capacity(n_objects);
    let mut vars = Vec::with_capacity(n_objects);
    for j in 0..n_objects {
        if counts[j] == 0 {
            means.push(F::nan());
            vars.push(F::nan());
            continue;
        }
        let n = counts[j] as f64;
        let mean = sums[j] / n;
        means.push(F::of(mean));
        if counts[j] < 2 {
            vars.push(F::nan());
        } else {
            vars.push(F::of((sumsq[j] - n * mean * mean) / (n - 1.0)));
        }
    }
    (means, vars)
}

/// Pairwise precedence proportions from rankings. A judge orders `(a, b)`
/// when both are assessed and at least one is ranked: ranked-before-ranked
/// follows the ranking order, and a ranked object precedes an unranked one.
/// Judges ranking neither contribute nothing.
fn pairwise_precedence<F: Real>(judges: &[JudgeRecord], n_objects: usize) -> Vec<F> {
    let mut wins = vec![0u32; n_objects * n_objects];
    for rec in judges {
        if rec.ranking.is_empty() {
            continue;
        }
        let mut rank_of = vec![usize::MAX; n_objects];
        for (pos, &j) in rec.ranking.iter().enumerate() {
            rank_of[j] = pos;
        }
        for (ai, &a) in rec.assessed.iter().enumerate() {
            for &b in &rec.assessed[ai + 1..] {
                match (rank_of[a] != usize::MAX, rank_of[b] != usize::MAX) {
                    (true, true) => {
                        if rank_of[a] < rank_of[b] {
                            wins[a * n_objects + b] += 1;
                        } else {
                            wins[b * n_objects + a] += 1;
                        }
                    }
                    (true, false) => wins[a * n_objects + b] += 1,
                    (false, true) => wins[b * n_objects + a] += 1,
                    (false, false) => {}
                }
            }
        }
    }
    let mut out = vec![F::nan(); n_objects * n_objects];
    for a in 0..n_objects {
        for b in 0..n_objects {
            if a == b {
                continue;
            }
            let total = wins[a * n_objects + b] + wins[b * n_objects + a];
            if total > 0 {
                out[a * n_objects + b] = F::of(wins[a * n_objects + b] as f64 / total as f64);
            }
        }
    }
    out
}

/// Posterior-predictive replication over `n_rep` evenly spaced retained
/// draws.
///
/// Each replicate keeps the observed design (assessed sets, ranking lengths,
/// rated sets), draws every judge's class from that draw's mixture weights,
/// and simulates the judge from the class parameters.
pub fn posterior_predictive<F: Real, R: Rng>(
    samples: &PosteriorSamples<F>,
    data: &PreferenceDataset,
    n_rep: usize,
    rng: &mut R,
) -> Result<GofReport<F>> {
    if n_rep == 0 || n_rep > samples.len() {
        return Err(Error::NotEnoughDraws {
            requested: n_rep,
            available: samples.len(),
        });
    }
    let n_objects = data.n_objects;
    let (observed_mean, observed_var) = rating_stats(&data.judges, n_objects);
    let observed_pairwise = pairwise_precedence(&data.judges, n_objects);

    let mut rep_mean = Vec::with_capacity(n_rep);
    let mut rep_var = Vec::with_capacity(n_rep);
    let mut pair_sum = vec![F::zero(); n_objects * n_objects];
    let mut pair_n = vec![0u32; n_objects * n_objects];

    for t in 0..n_rep {
        let record = &samples.records[t * samples.len() / n_rep];
        let logw: Vec<F> = record.weights.iter().map(|&w| w.ln()).collect();
        let replicate: Vec<JudgeRecord> = data
            .judges
            .iter()
            .map(|rec| {
                let class = categorical_from_log_weights(&logw, rng)
                    .expect("weights have positive mass");
                let rated: Vec<usize> = rec.ratings.keys().copied().collect();
                sample_judge(
                    rec.judge,
                    &rec.assessed,
                    rec.ranking.len(),
                    &rated,
                    &record.classes[class],
                    data.max_rating,
                    rng,
                )
            })
            .collect();
        let (mean, var) = rating_stats(&replicate, n_objects);
        rep_mean.push(mean);
        rep_var.push(var);
        let pairs = pairwise_precedence::<F>(&replicate, n_objects);
        for (idx, &v) in pairs.iter().enumerate() {
            if !v.is_nan() {
                pair_sum[idx] += v;
                pair_n[idx] += 1;
            }
        }
    }

    let replicated_pairwise = pair_sum
        .iter()
        .zip(&pair_n)
        .map(|(&s, &n)| if n > 0 { s / F::of(n as f64) } else { F::nan() })
        .collect();

    Ok(GofReport {
        n_objects,
        n_rep,
        observed_mean,
        observed_var,
        rep_mean,
        rep_var,
        observed_pairwise,
        replicated_pairwise,
    })
}

/// Posterior co-membership probabilities `P[z_i = z_j | data]`, with a
/// display ordering from the leading principal coordinate of the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<F> {
    pub n_judges: usize,
    /// `I x I` row-major, symmetric with unit diagonal.
    pub matrix: Vec<F>,
    /// Judge ordering that keeps similarly clustered judges adjacent.
    pub order: Vec<usize>,
}

impl<F: Real> SimilarityMatrix<F> {
    pub fn get(&self, i: usize, j: usize) -> F {
        self.matrix[i * self.n_judges + j]
    }
}

/// Fraction of retained draws in which two judges share a class. Invariant
/// to any per-draw relabeling of the classes.
pub fn similarity_matrix<F: Real>(samples: &PosteriorSamples<F>) -> SimilarityMatrix<F> {
    let n = samples.n_judges;
    let draws = samples.len().max(1);
    let mut counts = vec![0u32; n * n];
    for record in &samples.records {
        for i in 0..n {
            for j in i..n {
                if record.labels[i] == record.labels[j] {
                    counts[i * n + j] += 1;
                    counts[j * n + i] += (i != j) as u32;
                }
            }
        }
    }
    for i in 0..n {
        counts[i * n + i] = draws as u32;
    }
    let matrix: Vec<F> = counts
        .iter()
        .map(|&c| F::of(c as f64 / draws as f64))
        .collect();
    let order = principal_coordinate_order(&matrix, n);
    SimilarityMatrix {
        n_judges: n,
        matrix,
        order,
    }
}

/// Order judges by the leading eigenvector of the double-centered similarity
/// matrix (the first principal coordinate), computed by power iteration from
/// a fixed starting vector.
fn principal_coordinate_order<F: Real>(matrix: &[F], n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let matrix: Vec<f64> = matrix.iter().map(|&v| v.as_f64()).collect();
    let mut row_means = vec![0.0f64; n];
    let mut grand = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            row_means[i] += matrix[i * n + j];
        }
        grand += row_means[i];
        row_means[i] /= n as f64;
    }
    grand /= (n * n) as f64;
    let centered = |i: usize, j: usize| matrix[i * n + j] - row_means[i] - row_means[j] + grand;

    let mut v: Vec<f64> = (0..n).map(|i| i as f64 - (n as f64 - 1.0) / 2.0).collect();
    let mut degenerate = false;
    for _ in 0..200 {
        let mut next = vec![0.0f64; n];
        for i in 0..n {
            for j in 0..n {
                next[i] += centered(i, j) * v[j];
            }
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            degenerate = true;
            break;
        }
        next.iter_mut().for_each(|x| *x /= norm);
        v = next;
    }
    let mut order: Vec<usize> = (0..n).collect();
    if !degenerate {
        // Fix the sign so the ordering is deterministic.
        let lead = v
            .iter()
            .cloned()
            .max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
            .unwrap_or(0.0);
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        order.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap().then(i.cmp(&j)));
    }
    order
}

/// Posterior summary of one aligned class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSummary<F> {
    pub weight_mean: F,
    pub weight_ci: (F, F),
    pub theta_mean: F,
    pub theta_ci: (F, F),
    pub p_mean: Vec<F>,
    pub p_ci: Vec<(F, F)>,
    /// Consensus ranking of the posterior-mean quality vector.
    pub consensus: ConsensusRanking,
}

/// Summary of the draws with a given number of occupied classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalSummary<F> {
    pub kplus: usize,
    pub n_draws: usize,
    /// Classes ordered by descending posterior mean weight.
    pub classes: Vec<ClassSummary<F>>,
    /// `I x kplus` row-major membership probabilities; rows sum to one.
    pub membership: Vec<F>,
    /// Mean Euclidean distance of the greedy class matching, a label-
    /// switching diagnostic.
    pub mean_match_distance: F,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn mean_ci<F: Real>(values: &mut Vec<f64>) -> (F, (F, F)) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (
        F::of(mean),
        (
            F::of(quantile(values, 0.025)),
            F::of(quantile(values, 0.975)),
        ),
    )
}

/// Summarize the posterior conditional on `K+ = kplus`.
///
/// Class labels are aligned across draws by greedily matching quality
/// vectors to a reference draw (smallest Euclidean distance first, ties by
/// class index); a warning fires when the average matching distance exceeds
/// `0.5 sqrt(J)`, which signals classes too entangled for greedy alignment.
pub fn conditional_summary<F: Real>(
    samples: &PosteriorSamples<F>,
    kplus: usize,
) -> Result<ConditionalSummary<F>> {
    let selected: Vec<&crate::samples::SampleRecord<F>> = samples
        .records
        .iter()
        .filter(|r| r.kplus == kplus)
        .collect();
    if selected.is_empty() {
        return Err(Error::NoPosteriorMass(kplus));
    }
    let n_judges = samples.n_judges;
    let n_objects = samples.n_objects;

    // Occupied classes per draw, in stable index order.
    let occupied_of = |record: &crate::samples::SampleRecord<F>| -> Vec<usize> {
        let mut counts = vec![0usize; record.k];
        for &z in &record.labels {
            counts[z] += 1;
        }
        (0..record.k).filter(|&c| counts[c] > 0).collect()
    };

    let reference: Vec<Vec<f64>> = occupied_of(selected[0])
        .iter()
        .map(|&c| selected[0].classes[c].p.iter().map(|&x| x.as_f64()).collect())
        .collect();

    let mut weight_draws = vec![Vec::with_capacity(selected.len()); kplus];
    let mut theta_draws = vec![Vec::with_capacity(selected.len()); kplus];
    let mut p_draws = vec![vec![Vec::with_capacity(selected.len()); n_objects]; kplus];
    let mut membership_counts = vec![0u32; n_judges * kplus];
    let mut total_distance = 0.0f64;
    let mut matches = 0usize;

    for record in &selected {
        let occupied = occupied_of(record);
        debug_assert_eq!(occupied.len(), kplus);
        // Greedy assignment of this draw's occupied classes to the
        // reference slots.
        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(kplus * kplus);
        for (slot, &c) in occupied.iter().enumerate() {
            for (ref_slot, ref_p) in reference.iter().enumerate() {
                let d2: f64 = record.classes[c]
                    .p
                    .iter()
                    .zip(ref_p)
                    .map(|(&x, &y)| (x.as_f64() - y) * (x.as_f64() - y))
                    .sum();
                pairs.push((d2.sqrt(), slot, ref_slot));
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut slot_to_ref = vec![usize::MAX; kplus];
        let mut ref_taken = vec![false; kplus];
        for &(d, slot, ref_slot) in &pairs {
            if slot_to_ref[slot] == usize::MAX && !ref_taken[ref_slot] {
                slot_to_ref[slot] = ref_slot;
                ref_taken[ref_slot] = true;
                total_distance += d;
                matches += 1;
            }
        }

        for (slot, &c) in occupied.iter().enumerate() {
            let target = slot_to_ref[slot];
            weight_draws[target].push(record.weights[c].as_f64());
            theta_draws[target].push(record.classes[c].theta.as_f64());
            for (j, &pj) in record.classes[c].p.iter().enumerate() {
                p_draws[target][j].push(pj.as_f64());
            }
        }
        for (i, &z) in record.labels.iter().enumerate() {
            let slot = occupied.iter().position(|&c| c == z).expect("label occupied");
            membership_counts[i * kplus + slot_to_ref[slot]] += 1;
        }
    }

    let mean_match_distance = total_distance / matches.max(1) as f64;
    if mean_match_distance > 0.5 * (n_objects as f64).sqrt() {
        warn!(
            "greedy class alignment distance {mean_match_distance:.3} is large; \
             per-class summaries may mix labels"
        );
    }

    let mut summaries: Vec<ClassSummary<F>> = (0..kplus)
        .map(|slot| {
            let (weight_mean, weight_ci) = mean_ci(&mut weight_draws[slot]);
            let (theta_mean, theta_ci) = mean_ci(&mut theta_draws[slot]);
            let mut p_mean = Vec::with_capacity(n_objects);
            let mut p_ci = Vec::with_capacity(n_objects);
            for j in 0..n_objects {
                let (m, ci) = mean_ci(&mut p_draws[slot][j]);
                p_mean.push(m);
                p_ci.push(ci);
            }
            let consensus = consensus_ranking(&ClassParams {
                p: p_mean.clone(),
                theta: F::one(),
            });
            ClassSummary {
                weight_mean,
                weight_ci,
                theta_mean,
                theta_ci,
                p_mean,
                p_ci,
                consensus,
            }
        })
        .collect();

    // Order classes by descending posterior mean weight and permute the
    // membership columns accordingly.
    let mut order: Vec<usize> = (0..kplus).collect();
    order.sort_by(|&a, &b| {
        summaries[b]
            .weight_mean
            .partial_cmp(&summaries[a].weight_mean)
            .unwrap()
            .then(a.cmp(&b))
    });
    let summaries_ordered: Vec<ClassSummary<F>> =
        order.iter().map(|&s| summaries[s].clone()).collect();
    summaries = summaries_ordered;
    let n_draws = selected.len();
    let mut membership = vec![F::zero(); n_judges * kplus];
    for i in 0..n_judges {
        for (new_slot, &old_slot) in order.iter().enumerate() {
            membership[i * kplus + new_slot] =
                F::of(membership_counts[i * kplus + old_slot] as f64 / n_draws as f64);
        }
    }

    Ok(ConditionalSummary {
        kplus,
        n_draws,
        classes: summaries,
        membership,
        mean_match_distance: F::of(mean_match_distance),
    })
}

fn out_file(path: &Path) -> Result<BufWriter<File>> {
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

/// Write plot-ready trace tables: the label-invariant scalars, the weights
/// sorted descending within each draw (so column means decrease), per-class
/// consensus scales, and all quality parameters of occupied classes.
pub fn trace_export<F: Real>(samples: &PosteriorSamples<F>, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| wio(dir, e))?;
    let scalars = dir.join("trace_scalars.csv");
    let weights = dir.join("trace_weights.csv");
    let theta = dir.join("trace_theta.csv");
    let p = dir.join("trace_p.csv");

    let mut w = out_file(&scalars)?;
    writeln!(w, "iter,k,kplus,gamma").map_err(|e| wio(&scalars, e))?;
    for r in &samples.records {
        writeln!(w, "{},{},{},{}", r.iter, r.k, r.kplus, r.gamma).map_err(|e| wio(&scalars, e))?;
    }

    let max_k = samples.records.iter().map(|r| r.k).max().unwrap_or(0);
    let mut w = out_file(&weights)?;
    let header: Vec<String> = (1..=max_k).map(|c| format!("pi_{c}")).collect();
    writeln!(w, "iter,{}", header.join(",")).map_err(|e| wio(&weights, e))?;
    for r in &samples.records {
        let mut sorted: Vec<F> = r.weights.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        sorted.resize(max_k, F::zero());
        let row: Vec<String> = sorted.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", r.iter, row.join(",")).map_err(|e| wio(&weights, e))?;
    }

    let occupied_of = |r: &crate::samples::SampleRecord<F>| -> Vec<usize> {
        let mut counts = vec![0usize; r.k];
        for &z in &r.labels {
            counts[z] += 1;
        }
        (0..r.k).filter(|&c| counts[c] > 0).collect()
    };

    let mut w = out_file(&theta)?;
    writeln!(w, "iter,class,theta").map_err(|e| wio(&theta, e))?;
    for r in &samples.records {
        for (slot, &c) in occupied_of(r).iter().enumerate() {
            writeln!(w, "{},{},{}", r.iter, slot + 1, r.classes[c].theta)
                .map_err(|e| wio(&theta, e))?;
        }
    }

    let mut w = out_file(&p)?;
    writeln!(w, "iter,class,object,value").map_err(|e| wio(&p, e))?;
    for r in &samples.records {
        for (slot, &c) in occupied_of(r).iter().enumerate() {
            for (j, &pj) in r.classes[c].p.iter().enumerate() {
                writeln!(w, "{},{},{},{}", r.iter, slot + 1, j, pj).map_err(|e| wio(&p, e))?;
            }
        }
    }

    Ok(vec![scalars, weights, theta, p])
}

/// Adjusted Rand index between two label vectors; 1 for identical
/// partitions, about 0 for independent ones.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let ka = a.iter().max().map_or(0, |&m| m + 1);
    let kb = b.iter().max().map_or(0, |&m| m + 1);
    let mut table = vec![0u64; ka * kb];
    let mut rows = vec![0u64; ka];
    let mut cols = vec![0u64; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
        rows[x] += 1;
        cols[y] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().map(|&x| c2(x)).sum();
    let sum_rows: f64 = rows.iter().map(|&x| c2(x)).sum();
    let sum_cols: f64 = cols.iter().map(|&x| c2(x)).sum();
    let total = c2(n as u64);
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (sum_cells - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples::SampleRecord;
    use std::collections::BTreeMap;

    fn record(
        iter: usize,
        weights: Vec<f64>,
        labels: Vec<usize>,
        classes: Vec<ClassParams<f64>>,
    ) -> SampleRecord<f64> {
        let k = classes.len();
        let mut counts = vec![0usize; k];
        for &z in &labels {
            counts[z] += 1;
        }
        let kplus = counts.iter().filter(|&&c| c > 0).count();
        SampleRecord {
            iter,
            k,
            kplus,
            gamma: 1.0,
            log_post: -1.0,
            weights,
            labels,
            classes,
        }
    }

    #[test]
    fn similarity_matrix_matches_hand_count() {
        // 5 draws, 3 judges.
        let c = vec![ClassParams::new(vec![0.5], 1.0), ClassParams::new(vec![0.6], 1.0)];
        let labelsets = [
            vec![0, 0, 1],
            vec![0, 1, 1],
            vec![0, 0, 0],
            vec![1, 1, 0],
            vec![0, 0, 1],
        ];
        let samples = PosteriorSamples {
            n_judges: 3,
            n_objects: 1,
            max_rating: 4,
            records: labelsets
                .iter()
                .enumerate()
                .map(|(t, z)| record(t + 1, vec![0.5, 0.5], z.clone(), c.clone()))
                .collect(),
        };
        let sim = similarity_matrix(&samples);
        // Judges (0,1) share a class in draws 1, 3, 4, 5 -> 4/5.
        assert!((sim.get(0, 1) - 0.8).abs() < 1e-12);
        // Judges (0,2) share in draw 3 only -> 1/5.
        assert!((sim.get(0, 2) - 0.2).abs() < 1e-12);
        // Judges (1,2) share in draws 2, 3 -> 2/5.
        assert!((sim.get(1, 2) - 0.4).abs() < 1e-12);
        for i in 0..3 {
            assert_eq!(sim.get(i, i), 1.0);
            for j in 0..3 {
                assert_eq!(sim.get(i, j), sim.get(j, i));
            }
        }
        let mut order = sim.order.clone();
        order.sort_unstable();
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn conditional_summary_restores_label_swaps() {
        let class_a = ClassParams::new(vec![0.1, 0.9], 10.0);
        let class_b = ClassParams::new(vec![0.8, 0.2], 4.0);
        // Identical information with classes swapped on alternate draws.
        let records = (0..10)
            .map(|t| {
                if t % 2 == 0 {
                    record(
                        t + 1,
                        vec![0.7, 0.3],
                        vec![0, 0, 1],
                        vec![class_a.clone(), class_b.clone()],
                    )
                } else {
                    record(
                        t + 1,
                        vec![0.3, 0.7],
                        vec![1, 1, 0],
                        vec![class_b.clone(), class_a.clone()],
                    )
                }
            })
            .collect();
        let samples = PosteriorSamples {
            n_judges: 3,
            n_objects: 2,
            max_rating: 4,
            records,
        };
        let summary = conditional_summary(&samples, 2).unwrap();
        assert_eq!(summary.n_draws, 10);
        assert!(summary.mean_match_distance < 1e-12);
        // Aligned: the big class has weight 0.7, params of class_a.
        assert!((summary.classes[0].weight_mean - 0.7).abs() < 1e-12);
        assert!((summary.classes[0].p_mean[0] - 0.1).abs() < 1e-12);
        assert!((summary.classes[1].p_mean[0] - 0.8).abs() < 1e-12);
        assert_eq!(summary.classes[0].consensus, vec![0, 1]);
        // Judges 0, 1 always in the class_a cluster.
        assert_eq!(summary.membership[0], 1.0);
        assert_eq!(summary.membership[2], 1.0);
        assert_eq!(summary.membership[2 * 2], 0.0);
        for i in 0..3 {
            let row: f64 = (0..2).map(|c| summary.membership[i * 2 + c]).sum();
            assert!((row - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn conditional_summary_of_constant_draws_is_that_draw() {
        let class_a = ClassParams::new(vec![0.25, 0.5], 7.0);
        let records = (0..4)
            .map(|t| record(t + 1, vec![1.0], vec![0, 0], vec![class_a.clone()]))
            .collect();
        let samples = PosteriorSamples {
            n_judges: 2,
            n_objects: 2,
            max_rating: 4,
            records,
        };
        let summary = conditional_summary(&samples, 1).unwrap();
        assert!((summary.classes[0].weight_mean - 1.0).abs() < 1e-12);
        assert!((summary.classes[0].theta_mean - 7.0).abs() < 1e-12);
        assert_eq!(summary.classes[0].p_mean, vec![0.25, 0.5]);
        assert!(matches!(
            conditional_summary(&samples, 3),
            Err(Error::NoPosteriorMass(3))
        ));
    }

    #[test]
    fn pairwise_precedence_counts_partial_information() {
        // Judge 0 ranks a over b with c assessed but unranked; judge 1 has
        // no ranking and contributes nothing.
        let judges = vec![
            JudgeRecord::new(0, vec![0, 1, 2], vec![0, 1], BTreeMap::new()),
            JudgeRecord::new(1, vec![0, 1, 2], vec![], BTreeMap::from([(0, 1)])),
        ];
        let m = pairwise_precedence::<f64>(&judges, 3);
        assert_eq!(m[0 * 3 + 1], 1.0); // a before b
        assert_eq!(m[1 * 3 + 0], 0.0);
        assert_eq!(m[0 * 3 + 2], 1.0); // ranked a before unranked c
        assert_eq!(m[1 * 3 + 2], 1.0); // ranked b before unranked c
        assert!(m[2 * 3 + 2].is_nan());
    }

    #[test]
    fn adjusted_rand_index_basics() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        let ari = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!(ari < 0.1, "ari = {ari}");
    }
}
