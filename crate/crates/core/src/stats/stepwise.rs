//! Backward elimination from a complete model.

use serde::{Deserialize, Serialize};

use super::formula::{ModelFormula, Term};
use super::ftest::{nested_f_test, FitSummary, ModelComparison};
use super::ols::{fit_ols, FitResult};
use super::table::DataTable;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    /// Drop a term while its F-test against the current model is not
    /// significant at `alpha`.
    FTest { alpha: f64 },
    /// Drop a term while doing so does not raise the AIC.
    Aic,
}

impl Default for Criterion {
    fn default() -> Self {
        Criterion::FTest { alpha: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub term: String,
    pub fit: FitSummary,
    pub f: f64,
    pub p: f64,
    pub aic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub current: FitSummary,
    pub current_aic: f64,
    pub candidates: Vec<Candidate>,
    pub dropped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseResult {
    pub criterion: Criterion,
    pub complete: FitResult,
    pub selected: FitResult,
    /// The selected model minus its least important variable (every term
    /// mentioning it), with the comparison against the selected model.
    pub next_reduced: Option<(FitResult, ModelComparison)>,
    pub trace: Vec<Step>,
}

struct Scored {
    term: Term,
    fit: FitResult,
    cmp: ModelComparison,
}

/// Candidates are ranked by p (F-test) or AIC, ties broken by term order.
fn best_index(scored: &[Scored], criterion: Criterion) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scored.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => match criterion {
                Criterion::FTest { .. } => {
                    s.cmp.p > scored[b].cmp.p || (s.cmp.p == scored[b].cmp.p && s.cmp.f < scored[b].cmp.f)
                }
                Criterion::Aic => s.fit.aic() < scored[b].fit.aic(),
            },
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Remove each variable of `current` in turn and keep the least harmful
/// removal.
fn reduce_by_variable(
    table: &DataTable,
    current: &FitResult,
    complete: &FitResult,
    criterion: Criterion,
) -> Result<Option<(FitResult, ModelComparison)>> {
    let mut scored = Vec::new();
    for var in current.formula.variables() {
        let formula = current.formula.without_variable(var)?;
        let fit = fit_ols(table, &formula)?;
        let cmp = nested_f_test(&fit, current, complete)?;
        let term = Term::new([var]);
        scored.push(Scored { term, fit, cmp });
    }
    Ok(best_index(&scored, criterion).map(|b| {
        let s = scored.swap_remove(b);
        (s.fit, s.cmp)
    }))
}

pub fn stepwise_refine(table: &DataTable, complete: &ModelFormula, criterion: Criterion) -> Result<StepwiseResult> {
    let complete_fit = fit_ols(table, complete)?;
    let mut current = complete_fit.clone();
    let mut trace = Vec::new();
    loop {
        let mut scored = Vec::new();
        for term in current.formula.droppable_terms() {
            let fit = fit_ols(table, &current.formula.without(&term)?)?;
            let cmp = nested_f_test(&fit, &current, &complete_fit)?;
            scored.push(Scored { term, fit, cmp });
        }
        let best = best_index(&scored, criterion);
        let drop = best.filter(|&b| match criterion {
            Criterion::FTest { alpha } => scored[b].cmp.p >= alpha,
            Criterion::Aic => scored[b].fit.aic() <= current.aic() + 1e-7,
        });
        trace.push(Step {
            current: FitSummary::from(&current),
            current_aic: current.aic(),
            candidates: scored
                .iter()
                .map(|s| Candidate {
                    term: s.term.to_string(),
                    fit: FitSummary::from(&s.fit),
                    f: s.cmp.f,
                    p: s.cmp.p,
                    aic: s.fit.aic(),
                })
                .collect(),
            dropped: drop.map(|d| scored[d].term.to_string()),
        });
        match drop {
            Some(d) => current = scored.swap_remove(d).fit,
            None => {
                let next_reduced = reduce_by_variable(table, &current, &complete_fit, criterion)?;
                return Ok(StepwiseResult {
                    criterion,
                    complete: complete_fit,
                    selected: current,
                    next_reduced,
                    trace,
                });
            }
        }
    }
}
