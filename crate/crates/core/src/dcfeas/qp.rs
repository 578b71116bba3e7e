//! Thin assembly layer over the interior-point solver.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

/// Sparse rows `a·x (=|≤) b` collected as triplets.
#[derive(Debug, Default)]
pub(crate) struct Rows {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    pub b: Vec<f64>,
}

impl Rows {
    pub fn push(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        let r = self.b.len();
        for (j, v) in entries {
            if v != 0.0 {
                self.i.push(r);
                self.j.push(j);
                self.v.push(v);
            }
        }
        self.b.push(rhs);
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }
}

/// `min ½xᵀPx + qᵀx` with diagonal `P`, equality rows and `≤` rows.
#[derive(Debug)]
pub(crate) struct Program {
    pub n: usize,
    pub p_diag: Vec<(usize, f64)>,
    pub q: Vec<f64>,
    pub eq: Rows,
    pub le: Rows,
}

pub(crate) enum Outcome {
    Solved(Vec<f64>),
    Infeasible,
    Failed(SolverStatus),
}

impl Program {
    pub fn new(n: usize) -> Self {
        Program {
            n,
            p_diag: Vec::new(),
            q: vec![0.0; n],
            eq: Rows::default(),
            le: Rows::default(),
        }
    }

    pub fn solve(&self, tolerance: f64, max_iter: u32) -> Outcome {
        let (pi, pv): (Vec<usize>, Vec<f64>) = self.p_diag.iter().copied().unzip();
        let p = CscMatrix::new_from_triplets(self.n, self.n, pi.clone(), pi, pv);
        let m_eq = self.eq.len();
        let mut ai = self.eq.i.clone();
        ai.extend(self.le.i.iter().map(|r| r + m_eq));
        let mut aj = self.eq.j.clone();
        aj.extend_from_slice(&self.le.j);
        let mut av = self.eq.v.clone();
        av.extend_from_slice(&self.le.v);
        let a = CscMatrix::new_from_triplets(m_eq + self.le.len(), self.n, ai, aj, av);
        let mut b = self.eq.b.clone();
        b.extend_from_slice(&self.le.b);
        let cones = [
            SupportedConeT::ZeroConeT(m_eq),
            SupportedConeT::NonnegativeConeT(self.le.len()),
        ];
        let settings = DefaultSettings {
            verbose: false,
            max_iter,
            tol_feas: tolerance,
            tol_gap_abs: tolerance,
            tol_gap_rel: tolerance,
            ..DefaultSettings::default()
        };
        let mut solver = match DefaultSolver::new(&p, &self.q, &a, &b, &cones, settings) {
            Ok(s) => s,
            Err(e) => {
                log::error!("solver setup failed: {e}");
                return Outcome::Failed(SolverStatus::NumericalError);
            }
        };
        solver.solve();
        match solver.solution.status {
            SolverStatus::Solved => Outcome::Solved(solver.solution.x),
            SolverStatus::AlmostSolved => {
                log::warn!("solver reached reduced accuracy only");
                Outcome::Solved(solver.solution.x)
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Outcome::Infeasible,
            other => Outcome::Failed(other),
        }
    }
}
