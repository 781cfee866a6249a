//! Recursive feature elimination driven by the random forest ranking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{fit_forest, FeatureRanking, ForestParams};
use crate::linalg::{Matrix, RandomSource};

/// Outcome of an elimination run. All indices refer to columns of the input
/// matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfeResult {
    /// Surviving eliminable columns plus protected columns, ascending.
    pub selected: Vec<usize>,
    pub elimination_order: Vec<usize>,
    pub rounds: Vec<RfeRound>,
}

/// Ranking snapshot of one round, taken before the removal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfeRound {
    /// Columns the forest was fitted on, ascending.
    pub columns: Vec<usize>,
    /// Ranking over `columns` (positions index into `columns`).
    pub ranking: FeatureRanking,
    pub removed: usize,
}

/// Removes one least-important column per round until `k` eliminable
/// columns remain.
pub fn rfe_select(
    x: &Matrix,
    y: &[f64],
    k: usize,
    params: &ForestParams,
    rng: &mut RandomSource,
) -> Result<RfeResult> {
    rfe_select_protected(x, y, k, &[], params, rng)
}

/// Like [`rfe_select`], but `protected` columns take part in every forest
/// fit and are never removed; `k` counts only unprotected columns.
pub fn rfe_select_protected(
    x: &Matrix,
    y: &[f64],
    k: usize,
    protected: &[usize],
    params: &ForestParams,
    rng: &mut RandomSource,
) -> Result<RfeResult> {
    let d = x.cols();
    if protected.iter().any(|&p| p >= d) {
        return Err(Error::Parameter("protected column out of range".into()));
    }
    let eligible = d - protected.iter().collect::<std::collections::BTreeSet<_>>().len();
    if k < 1 || k > eligible {
        return Err(Error::Parameter(format!(
            "k must lie in 1..={eligible}, got {k}"
        )));
    }
    if x.rows() != y.len() {
        return Err(Error::Shape(format!(
            "X has {} rows but y has {} values",
            x.rows(),
            y.len()
        )));
    }

    let mut alive: Vec<usize> = (0..d).collect();
    let mut elimination_order = Vec::with_capacity(eligible - k);
    let mut rounds = Vec::with_capacity(eligible - k);
    let mut round = 0u64;
    while alive.len() - (d - eligible) > k {
        let sub = x.select_columns(&alive);
        let mut round_rng = rng.derive(round);
        let forest = fit_forest(&sub, y, params, &mut round_rng)?;
        let ranking = forest.importance(params.importance);
        // walk from least important; ties already put the highest index last
        let pos = ranking
            .order
            .iter()
            .rev()
            .copied()
            .find(|&p| !protected.contains(&alive[p]))
            .expect("an eliminable column remains while above k");
        let removed = alive[pos];
        rounds.push(RfeRound {
            columns: alive.clone(),
            ranking,
            removed,
        });
        elimination_order.push(removed);
        alive.remove(pos);
        round += 1;
    }
    // advance the caller's stream once so consecutive calls differ
    rng.next_u64();
    Ok(RfeResult {
        selected: alive,
        elimination_order,
        rounds,
    })
}

impl RfeResult {
    /// Human-readable report: selected names, elimination order, and the
    /// importance scores of each round.
    pub fn report(&self, names: &[String]) -> String {
        let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
        let mut out = String::new();
        out.push_str(&format!("selected ({}):\n", self.selected.len()));
        for &s in &self.selected {
            out.push_str(&format!("  {}\n", name(s)));
        }
        out.push_str(&format!(
            "elimination order ({} rounds):\n",
            self.elimination_order.len()
        ));
        for (r, round) in self.rounds.iter().enumerate() {
            out.push_str(&format!("  round {}: removed {}\n", r + 1, name(round.removed)));
            for &p in &round.ranking.order {
                out.push_str(&format!(
                    "    {:<16} {:.6}\n",
                    name(round.columns[p]),
                    round.ranking.importance[p]
                ));
            }
        }
        out
    }
}
