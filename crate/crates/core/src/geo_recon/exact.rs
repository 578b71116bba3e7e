use super::problem::AssignmentProblem;
use super::search::Assignment;
use crate::error::{Error, Result};

/// Largest instance accepted by [`brute_force`].
pub const BRUTE_FORCE_CAP: usize = 10;

/// Globally optimal assignment by exhaustive enumeration with
/// partial-objective pruning (every term is nonnegative).
pub fn brute_force(p: &AssignmentProblem) -> Result<Assignment> {
    if p.len() > BRUTE_FORCE_CAP {
        return Err(Error::SizeLimit {
            size: p.len(),
            cap: BRUTE_FORCE_CAP,
        });
    }
    let mut search = Enumeration {
        p,
        current: vec![usize::MAX; p.len()],
        used: vec![false; p.distances.nrows()],
        best: None,
    };
    search.visit(0, 0.0);
    let (objective, location_of) = search.best.ok_or_else(|| {
        Error::InfeasibleAssignment("no injective compatible assignment exists".into())
    })?;
    Ok(Assignment {
        // Recomputed in edge order so it compares bit-for-bit with other solvers.
        objective: {
            debug_assert!((p.objective(&location_of) - objective).abs() <= 1e-6 * (1.0 + objective));
            p.objective(&location_of)
        },
        location_of,
    })
}

struct Enumeration<'a> {
    p: &'a AssignmentProblem,
    current: Vec<usize>,
    used: Vec<bool>,
    best: Option<(f64, Vec<usize>)>,
}

impl Enumeration<'_> {
    fn visit(&mut self, i: usize, partial: f64) {
        if let Some((b, _)) = &self.best {
            if partial >= *b {
                return;
            }
        }
        if i == self.p.len() {
            self.best = Some((partial, self.current.clone()));
            return;
        }
        for &j in &self.p.compatible[i] {
            if self.used[j] {
                continue;
            }
            // Terms for edges to already placed (lower-index) substations.
            let added: f64 = self.p.adjacency[i]
                .iter()
                .filter(|(nb, _)| *nb < i)
                .map(|&(nb, len)| (self.p.distances[(j, self.current[nb])] - len).powi(2))
                .sum();
            self.used[j] = true;
            self.current[i] = j;
            self.visit(i + 1, partial + added);
            self.used[j] = false;
            self.current[i] = usize::MAX;
        }
    }
}
