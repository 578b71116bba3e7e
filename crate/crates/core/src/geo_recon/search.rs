use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::problem::AssignmentProblem;
use crate::error::{Error, Result};
use crate::seeds::{derive_seed, rng, Rng};

const IMPROVEMENT_EPS: f64 = 1e-9;

/// A feasible placement of every substation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// Candidate index for each substation.
    pub location_of: Vec<usize>,
    /// Objective in km².
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    /// Perturbation rounds after the first descent.
    pub restarts: usize,
    /// Non-improving perturbations before a fresh random start.
    pub stagnation: usize,
    /// Hard cap on move evaluations across the whole search.
    pub max_evaluations: u64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            restarts: 200,
            stagnation: 20,
            max_evaluations: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub greedy_objective: f64,
    pub objective: f64,
    pub restarts: usize,
    pub evaluations: u64,
    pub accepted_moves: u64,
    /// (evaluations so far, new best objective) each time the incumbent improves.
    pub improvements: Vec<(u64, f64)>,
}

/// Maximum bipartite matching (augmenting paths). Returns the location of
/// every substation, or `None` when no injective assignment exists.
pub(crate) fn perfect_matching(p: &AssignmentProblem) -> Option<Vec<usize>> {
    let m = p.distances.nrows();
    let mut owner: Vec<Option<usize>> = vec![None; m];

    fn augment(
        p: &AssignmentProblem,
        i: usize,
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for &j in &p.compatible[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none() || augment(p, owner[j].unwrap(), seen, owner) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }

    for i in 0..p.len() {
        let mut seen = vec![false; m];
        if !augment(p, i, &mut seen, &mut owner) {
            return None;
        }
    }
    let mut location_of = vec![0; p.len()];
    for (j, o) in owner.iter().enumerate() {
        if let Some(i) = o {
            location_of[*i] = j;
        }
    }
    Some(location_of)
}

/// Greedy construction: substations in decreasing degree order take the free
/// compatible location with the smallest incremental objective. Returns
/// `None` if some substation finds every compatible location taken.
pub fn greedy(p: &AssignmentProblem) -> Option<Assignment> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(p.degree(i)), i));
    let mut location_of = vec![usize::MAX; p.len()];
    let mut used = vec![false; p.distances.nrows()];
    for &i in &order {
        let mut best: Option<(f64, usize)> = None;
        for &j in &p.compatible[i] {
            if used[j] {
                continue;
            }
            let cost: f64 = p.adjacency[i]
                .iter()
                .filter(|(nb, _)| location_of[*nb] != usize::MAX)
                .map(|&(nb, len)| (p.distances[(j, location_of[nb])] - len).powi(2))
                .sum();
            if best.is_none_or(|(c, _)| cost < c) {
                best = Some((cost, j));
            }
        }
        let (_, j) = best?;
        location_of[i] = j;
        used[j] = true;
    }
    let objective = p.objective(&location_of);
    Some(Assignment {
        location_of,
        objective,
    })
}

struct State<'a> {
    p: &'a AssignmentProblem,
    location_of: Vec<usize>,
    owner: Vec<Option<usize>>,
    objective: f64,
    evaluations: u64,
    accepted: u64,
}

impl<'a> State<'a> {
    fn new(p: &'a AssignmentProblem, location_of: Vec<usize>) -> Self {
        let mut owner = vec![None; p.distances.nrows()];
        for (i, &j) in location_of.iter().enumerate() {
            owner[j] = Some(i);
        }
        let objective = p.objective(&location_of);
        State {
            p,
            location_of,
            owner,
            objective,
            evaluations: 0,
            accepted: 0,
        }
    }

    fn term(&self, a_loc: usize, b_loc: usize, len: f64) -> f64 {
        let d = self.p.distances[(a_loc, b_loc)] - len;
        d * d
    }

    fn relocate_delta(&self, i: usize, j: usize) -> f64 {
        let old = self.location_of[i];
        self.p.adjacency[i]
            .iter()
            .map(|&(nb, len)| {
                let l = self.location_of[nb];
                self.term(j, l, len) - self.term(old, l, len)
            })
            .sum()
    }

    fn swap_delta(&self, i: usize, k: usize) -> f64 {
        let (li, lk) = (self.location_of[i], self.location_of[k]);
        let side = |x: usize, from: usize, to: usize| -> f64 {
            self.p.adjacency[x]
                .iter()
                .filter(|(nb, _)| *nb != i && *nb != k)
                .map(|&(nb, len)| {
                    let l = self.location_of[nb];
                    self.term(to, l, len) - self.term(from, l, len)
                })
                .sum()
        };
        side(i, li, lk) + side(k, lk, li)
    }

    fn relocate(&mut self, i: usize, j: usize, delta: f64) {
        let old = self.location_of[i];
        self.owner[old] = None;
        self.owner[j] = Some(i);
        self.location_of[i] = j;
        self.objective += delta;
        self.accepted += 1;
    }

    fn swap(&mut self, i: usize, k: usize, delta: f64) {
        let (li, lk) = (self.location_of[i], self.location_of[k]);
        self.location_of[i] = lk;
        self.location_of[k] = li;
        self.owner[lk] = Some(i);
        self.owner[li] = Some(k);
        self.objective += delta;
        self.accepted += 1;
    }

    /// First-improvement descent over relocations and swaps until no move
    /// improves or the evaluation budget runs out.
    fn descend(&mut self, rng: &mut Rng, max_evaluations: u64) {
        let p = self.p;
        let mut order: Vec<usize> = (0..p.len()).collect();
        loop {
            order.shuffle(rng);
            let mut improved = false;
            for &i in &order {
                if self.evaluations >= max_evaluations {
                    return;
                }
                let set = &p.compatible[i];
                let offset = rng.random_range(0..set.len());
                for step in 0..set.len() {
                    let j = set[(offset + step) % set.len()];
                    if j == self.location_of[i] {
                        continue;
                    }
                    self.evaluations += 1;
                    match self.owner[j] {
                        None => {
                            let delta = self.relocate_delta(i, j);
                            if delta < -IMPROVEMENT_EPS {
                                self.relocate(i, j, delta);
                                improved = true;
                                break;
                            }
                        }
                        Some(k) if p.is_compatible(k, self.location_of[i]) => {
                            let delta = self.swap_delta(i, k);
                            if delta < -IMPROVEMENT_EPS {
                                self.swap(i, k, delta);
                                improved = true;
                                break;
                            }
                        }
                        Some(_) => {}
                    }
                }
            }
            if !improved {
                // Resynchronize accumulated deltas with an exact evaluation.
                self.objective = p.objective(&self.location_of);
                return;
            }
        }
    }

    /// Random moves regardless of cost.
    fn perturb(&mut self, rng: &mut Rng, moves: usize) {
        let p = self.p;
        for _ in 0..moves {
            let i = rng.random_range(0..p.len());
            let set = &p.compatible[i];
            let j = set[rng.random_range(0..set.len())];
            if j == self.location_of[i] {
                continue;
            }
            match self.owner[j] {
                None => {
                    let d = self.relocate_delta(i, j);
                    self.relocate(i, j, d);
                }
                Some(k) if p.is_compatible(k, self.location_of[i]) => {
                    let d = self.swap_delta(i, k);
                    self.swap(i, k, d);
                }
                Some(_) => {}
            }
        }
        self.objective = p.objective(&self.location_of);
    }
}

/// A random feasible start, falling back to a matching when random
/// placement runs into a dead end.
fn random_start(p: &AssignmentProblem, rng: &mut Rng) -> Option<Vec<usize>> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.shuffle(rng);
    let mut used = vec![false; p.distances.nrows()];
    let mut location_of = vec![0; p.len()];
    for &i in &order {
        let free: Vec<usize> = p.compatible[i].iter().copied().filter(|&j| !used[j]).collect();
        if free.is_empty() {
            return perfect_matching(p);
        }
        let j = free[rng.random_range(0..free.len())];
        used[j] = true;
        location_of[i] = j;
    }
    Some(location_of)
}

/// Iterated local search from the greedy construction. Deterministic for a
/// given (problem, seed, budget).
pub fn local_search(p: &AssignmentProblem, seed: u64, budget: SearchBudget) -> Result<(Assignment, SearchReport)> {
    if p.is_empty() {
        return Ok((
            Assignment {
                location_of: Vec::new(),
                objective: 0.0,
            },
            SearchReport::default(),
        ));
    }
    let start = match greedy(p) {
        Some(a) => a,
        None => {
            let location_of = perfect_matching(p).ok_or_else(|| {
                Error::InfeasibleAssignment(
                    "compatible location sets do not admit distinct locations for every substation".into(),
                )
            })?;
            let objective = p.objective(&location_of);
            Assignment {
                location_of,
                objective,
            }
        }
    };
    let mut report = SearchReport {
        greedy_objective: start.objective,
        ..Default::default()
    };
    let mut rng = rng(seed);
    let mut state = State::new(p, start.location_of.clone());
    let mut best = start;

    let mut evaluations = 0;
    let mut accepted = 0;
    let mut stale = 0;
    for round in 0..=budget.restarts {
        state.descend(&mut rng, budget.max_evaluations.saturating_sub(evaluations));
        evaluations += std::mem::take(&mut state.evaluations);
        accepted += std::mem::take(&mut state.accepted);
        if state.objective < best.objective - IMPROVEMENT_EPS {
            best = Assignment {
                location_of: state.location_of.clone(),
                objective: state.objective,
            };
            report.improvements.push((evaluations, best.objective));
            stale = 0;
        } else {
            stale += 1;
        }
        report.restarts = round;
        if round == budget.restarts || evaluations >= budget.max_evaluations || best.objective <= 0.0 {
            break;
        }
        if stale >= budget.stagnation {
            let fresh = random_start(p, &mut rng).expect("feasibility established above");
            state = State::new(p, fresh);
            stale = 0;
        } else {
            state = State::new(p, best.location_of.clone());
            let strength = rng.random_range(2..=(p.len() / 4).max(2));
            state.perturb(&mut rng, strength);
            state.accepted = 0;
        }
    }
    best.objective = p.objective(&best.location_of);
    report.objective = best.objective;
    report.evaluations = evaluations;
    report.accepted_moves = accepted;
    Ok((best, report))
}

/// Independent searches with seeds derived from `seed`; the best result wins
/// (ties go to the lowest start index), so the thread count never matters.
pub fn local_search_multistart(
    p: &AssignmentProblem,
    seed: u64,
    budget: SearchBudget,
    starts: usize,
) -> Result<(Assignment, SearchReport)> {
    let results: Vec<_> = (0..starts.max(1) as u64)
        .into_par_iter()
        .map(|k| local_search(p, derive_seed(seed, "geo", k), budget))
        .collect::<Result<_>>()?;
    let mut best: Option<(Assignment, SearchReport)> = None;
    for r in results {
        if best.as_ref().is_none_or(|b| r.0.objective < b.0.objective) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one start"))
}
