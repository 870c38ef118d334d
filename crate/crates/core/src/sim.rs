//! Simulation harness for review-panel decision studies: balanced random
//! assignment, synthetic data generation over `(R, M, theta)` grids, the
//! ratings-only baseline with random tie-breaking, and the normalized
//! Kendall-tau inaccuracy metric.

use std::collections::BTreeSet;

use log::warn;
use rand::Rng;
use rayon::prelude::*;

use crate::data::{JudgeRecord, PreferenceDataset};
use crate::fixedk::{run_map, MapOptions};
use crate::model::{consensus_ranking, sample_judge, ClassParams, ConsensusRanking};
use crate::num::Real;
use crate::priors::Hyperparams;
use crate::rng::indexed_stream;
use crate::{Error, Result};

/// One cell of the simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario<F> {
    /// Judges (reviewers).
    pub n_judges: usize,
    /// Objects (papers).
    pub n_objects: usize,
    /// Papers per reviewer; each paper then receives `I R / J` reviews.
    pub reviews_per_judge: usize,
    pub max_rating: u32,
    /// True consensus scale of the generating class.
    pub theta: F,
    /// Length of each judge's top-r ranking.
    pub ranking_length: usize,
    pub replications: usize,
    pub seed: u64,
}

impl<F: Real> SimScenario<F> {
    pub fn validate(&self) -> Result<()> {
        if self.reviews_per_judge > self.n_objects {
            return Err(Error::InvalidConfig(format!(
                "R = {} exceeds J = {}",
                self.reviews_per_judge, self.n_objects
            )));
        }
        if self.ranking_length > self.reviews_per_judge {
            return Err(Error::InvalidConfig(format!(
                "ranking length {} exceeds R = {}",
                self.ranking_length, self.reviews_per_judge
            )));
        }
        if self.n_judges * self.reviews_per_judge % self.n_objects != 0 {
            return Err(Error::UnbalancedDesign {
                i: self.n_judges,
                r: self.reviews_per_judge,
                j: self.n_objects,
            });
        }
        if self.max_rating == 0 || self.replications == 0 || !(self.theta > F::zero()) {
            return Err(Error::InvalidConfig(
                "scenario needs M >= 1, replications >= 1, theta > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!(
            "I{}_J{}_R{}_M{}_theta{}",
            self.n_judges, self.n_objects, self.reviews_per_judge, self.max_rating, self.theta
        )
    }
}

/// One replication's truth, estimates, and inaccuracies.
#[derive(Debug, Clone, PartialEq)]
pub struct RepResult<F> {
    pub scenario: String,
    pub reviews_per_judge: usize,
    pub max_rating: u32,
    pub theta_true: F,
    pub rep: usize,
    pub true_p: Vec<F>,
    pub true_ranking: ConsensusRanking,
    pub map_p: Vec<F>,
    pub map_theta: F,
    pub map_ranking: ConsensusRanking,
    pub ratings_ranking: ConsensusRanking,
    /// Normalized Kendall-tau distance of the joint-model estimate.
    pub btlb_inaccuracy: F,
    /// Same for the mean-ratings baseline.
    pub ratings_inaccuracy: F,
}

/// Balanced random assignment: every judge assesses exactly `r` objects and
/// every object is assessed exactly `i r / j` times.
///
/// When `j` divides `i` the array is built column-wise from independent
/// shuffles of the object multiset (each object `i / j` times per column);
/// otherwise a single shuffled multiset is reshaped. Rows containing
/// duplicates are then repaired by swaps that preserve the counts.
pub fn balanced_assignment<R: Rng>(
    i: usize,
    j: usize,
    r: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if i * r % j != 0 {
        return Err(Error::UnbalancedDesign { i, r, j });
    }
    if r > j {
        return Err(Error::InvalidConfig(format!("R = {r} exceeds J = {j}")));
    }
    if r == j {
        return Ok(vec![(0..j).collect(); i]);
    }

    let shuffle = |v: &mut Vec<usize>, rng: &mut R| {
        for idx in (1..v.len()).rev() {
            let other = rng.random_range(0..=idx);
            v.swap(idx, other);
        }
    };

    // rows[i][c]: object in judge i's c-th slot.
    let mut rows: Vec<Vec<usize>> = vec![Vec::with_capacity(r); i];
    if i % j == 0 {
        let per_column = i / j;
        for _ in 0..r {
            let mut column: Vec<usize> = (0..j).flat_map(|o| std::iter::repeat_n(o, per_column)).collect();
            shuffle(&mut column, rng);
            for (row, &obj) in rows.iter_mut().zip(&column) {
                row.push(obj);
            }
        }
    } else {
        let copies = i * r / j;
        let mut flat: Vec<usize> = (0..j).flat_map(|o| std::iter::repeat_n(o, copies)).collect();
        shuffle(&mut flat, rng);
        for (idx, &obj) in flat.iter().enumerate() {
            rows[idx / r].push(obj);
        }
    }

    // Swap-repair rows with duplicate objects; each swap keeps row sizes and
    // total object counts intact.
    let budget = 100 * i * r;
    let mut steps = 0usize;
    loop {
        let mut dirty = false;
        for a in 0..i {
            'slots: for c in 0..r {
                let obj = rows[a][c];
                if rows[a].iter().filter(|&&x| x == obj).count() < 2 {
                    continue;
                }
                dirty = true;
                // Deterministic-random scan offset keeps repair unbiased.
                let start = rng.random_range(0..i);
                for step in 0..i {
                    let b = (start + step) % i;
                    if b == a {
                        continue;
                    }
                    for c2 in 0..r {
                        let other = rows[b][c2];
                        if other != obj
                            && !rows[a].contains(&other)
                            && !rows[b].contains(&obj)
                        {
                            rows[a][c] = other;
                            rows[b][c2] = obj;
                            continue 'slots;
                        }
                    }
                }
                steps += 1;
                assert!(steps < budget, "assignment repair failed to converge");
            }
        }
        if !dirty {
            break;
        }
        steps += 1;
        assert!(steps < budget, "assignment repair failed to converge");
    }

    for row in &mut rows {
        row.sort_unstable();
    }
    Ok(rows)
}

/// Draw a scenario's dataset: true qualities `p_j ~ Uniform[0, 1]`, a
/// balanced assignment, and per judge a top-`ranking_length` ranking plus a
/// rating for every assessed object.
pub fn generate_scenario<F: Real, R: Rng>(
    scenario: &SimScenario<F>,
    rng: &mut R,
) -> Result<(PreferenceDataset, ClassParams<F>)> {
    scenario.validate()?;
    let p: Vec<F> = (0..scenario.n_objects)
        .map(|_| crate::rng::draw_uniform_01(rng))
        .collect();
    let truth = ClassParams::new(p, scenario.theta);
    let assignments = balanced_assignment(
        scenario.n_judges,
        scenario.n_objects,
        scenario.reviews_per_judge,
        rng,
    )?;
    let judges: Vec<JudgeRecord> = assignments
        .iter()
        .enumerate()
        .map(|(i, assessed)| {
            sample_judge(
                i,
                assessed,
                scenario.ranking_length,
                assessed,
                &truth,
                scenario.max_rating,
                rng,
            )
        })
        .collect();
    Ok((
        PreferenceDataset::from_records(scenario.n_objects, scenario.max_rating, judges),
        truth,
    ))
}

/// The standard baseline: order objects by ascending mean observed rating
/// (0 is best), breaking exact ties uniformly at random. Objects without any
/// rating sort last, with a warning.
pub fn ratings_only_estimate<R: Rng>(data: &PreferenceDataset, rng: &mut R) -> ConsensusRanking {
    let n = data.n_objects;
    let mut sums = vec![0u64; n];
    let mut counts = vec![0u64; n];
    for rec in &data.judges {
        for (&j, &x) in &rec.ratings {
            sums[j] += x as u64;
            counts[j] += 1;
        }
    }
    if counts.iter().any(|&c| c == 0) {
        warn!("some objects have no ratings; they are ranked last");
    }

    // Exact rational comparison of means: sum_a / n_a vs sum_b / n_b.
    let cmp_mean = |a: usize, b: usize| -> std::cmp::Ordering {
        match (counts[a], counts[b]) {
            (0, 0) => std::cmp::Ordering::Equal,
            (0, _) => std::cmp::Ordering::Greater,
            (_, 0) => std::cmp::Ordering::Less,
            (na, nb) => (sums[a] as u128 * nb as u128).cmp(&(sums[b] as u128 * na as u128)),
        }
    };

    let mut order: Vec<usize> = (0..n).collect();
    // Random tie-breaking: shuffle first, then stable-sort by mean so tied
    // groups keep the shuffled order.
    for idx in (1..order.len()).rev() {
        let other = rng.random_range(0..=idx);
        order.swap(idx, other);
    }
    order.sort_by(|&a, &b| cmp_mean(a, b));
    order
}

/// Fraction of object pairs ordered discordantly: the normalized Kendall-tau
/// distance, in `[0, 1]`.
pub fn kendall_inaccuracy<F: Real>(estimate: &[usize], truth: &[usize]) -> Result<F> {
    let n = truth.len();
    let same: BTreeSet<usize> = truth.iter().copied().collect();
    let est: BTreeSet<usize> = estimate.iter().copied().collect();
    if estimate.len() != n || est != same || same.len() != n {
        return Err(Error::InvalidConfig(
            "rankings must be permutations of the same object set".into(),
        ));
    }
    if n < 2 {
        return Ok(F::zero());
    }
    let max_obj = *truth.iter().max().unwrap();
    let mut pos = vec![0usize; max_obj + 1];
    for (idx, &obj) in estimate.iter().enumerate() {
        pos[obj] = idx;
    }
    let mut discordant = 0usize;
    for a in 0..n {
        for b in a + 1..n {
            if pos[truth[a]] > pos[truth[b]] {
                discordant += 1;
            }
        }
    }
    Ok(F::of(discordant as f64) / F::of((n * (n - 1) / 2) as f64))
}

/// Estimation settings for [`run_study`].
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig<F> {
    /// Root seed; every (cell, replication) derives its own stream.
    pub seed: u64,
    /// EM restarts per fit.
    pub restarts: usize,
    pub tol: F,
}

impl<F: Real> Default for StudyConfig<F> {
    fn default() -> Self {
        StudyConfig {
            seed: 0,
            restarts: 2,
            tol: F::of(1e-6),
        }
    }
}

/// Run the decision study over a scenario grid: per replication, generate
/// data, fit the single-class joint model by MAP, compute the ratings-only
/// baseline, and score both against the true consensus ranking.
///
/// Replications run in parallel, each on its own derived stream, so the
/// result is reproducible regardless of thread count.
pub fn run_study<F: Real>(
    grid: &[SimScenario<F>],
    hyper: &Hyperparams<F>,
    config: &StudyConfig<F>,
) -> Result<Vec<RepResult<F>>> {
    hyper.validate()?;
    for scenario in grid {
        scenario.validate()?;
    }
    let units: Vec<(usize, usize)> = grid
        .iter()
        .enumerate()
        .flat_map(|(c, sc)| (0..sc.replications).map(move |rep| (c, rep)))
        .collect();

    units
        .into_par_iter()
        .map(|(cell, rep)| {
            let scenario = &grid[cell];
            let unit = (cell as u64) << 32 | rep as u64;
            let mut rng = indexed_stream(config.seed ^ scenario.seed, "sim", unit);
            let (data, truth) = generate_scenario(scenario, &mut rng)?;
            let true_ranking = consensus_ranking(&truth);

            let opts = MapOptions {
                tol: config.tol,
                restarts: config.restarts,
                seed: config.seed ^ scenario.seed ^ (0x9e37_79b9_7f4a_7c15 ^ unit),
                ..MapOptions::default()
            };
            let em = run_map(&data, 1, hyper, &opts)?;
            let map_ranking = consensus_ranking(&em.classes[0]);
            let ratings_ranking = ratings_only_estimate(&data, &mut rng);

            Ok(RepResult {
                scenario: scenario.label(),
                reviews_per_judge: scenario.reviews_per_judge,
                max_rating: scenario.max_rating,
                theta_true: scenario.theta,
                rep,
                true_p: truth.p.clone(),
                true_ranking: true_ranking.clone(),
                map_p: em.classes[0].p.clone(),
                map_theta: em.classes[0].theta,
                map_ranking: map_ranking.clone(),
                ratings_ranking: ratings_ranking.clone(),
                btlb_inaccuracy: kendall_inaccuracy(&map_ranking, &true_ranking)?,
                ratings_inaccuracy: kendall_inaccuracy(&ratings_ranking, &true_ranking)?,
            })
        })
        .collect()
}

/// Mean of a per-replication statistic over one scenario cell.
pub fn mean_by_scenario<F: Real>(
    rows: &[RepResult<F>],
    scenario: &str,
    stat: impl Fn(&RepResult<F>) -> F,
) -> F {
    let selected: Vec<F> = rows
        .iter()
        .filter(|row| row.scenario == scenario)
        .map(stat)
        .collect();
    let n = F::of_usize(selected.len().max(1));
    selected.into_iter().sum::<F>() / n
}
