//! Nested-model F-tests and significance labels.

use serde::{Deserialize, Serialize};
use std::fmt;

use super::fdist::f_sf;
use super::ols::FitResult;
use crate::error::{Error, Result};

/// Increments in R² at or below this are treated as exactly zero.
pub const R2_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub formula: String,
    pub r_squared: f64,
    pub residual_df: usize,
    pub n: usize,
}

impl From<&FitResult> for FitSummary {
    fn from(f: &FitResult) -> Self {
        FitSummary {
            formula: f.formula.to_string(),
            r_squared: f.r_squared,
            residual_df: f.residual_df,
            n: f.n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Significance {
    #[serde(rename = "***")]
    P001,
    #[serde(rename = "**")]
    P01,
    #[serde(rename = "*")]
    P05,
    #[serde(rename = "n.s.")]
    NotSignificant,
}

impl Significance {
    pub fn of(p: f64) -> Self {
        if p < 0.001 {
            Significance::P001
        } else if p < 0.01 {
            Significance::P01
        } else if p < 0.05 {
            Significance::P05
        } else {
            Significance::NotSignificant
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Significance::P001 => "***",
            Significance::P01 => "**",
            Significance::P05 => "*",
            Significance::NotSignificant => "n.s.",
        }
    }
}

impl fmt::Display for Significance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Three decimals, with everything below 0.001 shown as `<0.001`.
pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub smaller: FitSummary,
    pub larger: FitSummary,
    pub complete: FitSummary,
    pub delta_df: usize,
    pub f: f64,
    pub p: f64,
    pub significance: Significance,
}

impl ModelComparison {
    pub fn p_label(&self) -> String {
        format_p(self.p)
    }
}

/// Test whether `larger` explains significantly more than `smaller`,
/// scaling by the residual variance of `complete`:
///
/// `F = ((R²_l - R²_s) / Δdf) / ((1 - R²_c) / df_c)` on `(Δdf, df_c)`.
pub fn nested_f_test(smaller: &FitResult, larger: &FitResult, complete: &FitResult) -> Result<ModelComparison> {
    if !smaller.formula.is_nested_in(&larger.formula) {
        return Err(Error::Nesting(format!(
            "`{}` is not nested in `{}`",
            smaller.formula, larger.formula
        )));
    }
    if !larger.formula.is_nested_in(&complete.formula) {
        return Err(Error::Nesting(format!(
            "`{}` is not nested in `{}`",
            larger.formula, complete.formula
        )));
    }
    if smaller.n != larger.n || larger.n != complete.n {
        return Err(Error::Nesting(format!(
            "models were fitted to different rows ({}, {}, {})",
            smaller.n, larger.n, complete.n
        )));
    }
    if smaller.residual_df < larger.residual_df {
        return Err(Error::Nesting(format!(
            "smaller model has fewer residual df ({} < {})",
            smaller.residual_df, larger.residual_df
        )));
    }
    let delta_df = smaller.residual_df - larger.residual_df;
    let summaries = (FitSummary::from(smaller), FitSummary::from(larger), FitSummary::from(complete));
    let (f, p) = if delta_df == 0 {
        if smaller.formula != larger.formula {
            return Err(Error::Nesting(
                "distinct formulas with equal residual df".into(),
            ));
        }
        (0.0, 1.0)
    } else {
        let df_c = complete.residual_df;
        if df_c == 0 {
            return Err(Error::Domain("complete model has no residual df".into()));
        }
        let gain = larger.r_squared - smaller.r_squared;
        let gain = if gain <= R2_EPS { 0.0 } else { gain };
        let resid = (1.0 - complete.r_squared) / df_c as f64;
        if resid <= 0.0 {
            if gain == 0.0 {
                (0.0, 1.0)
            } else {
                (f64::INFINITY, 0.0)
            }
        } else {
            let f = (gain / delta_df as f64) / resid;
            (f, f_sf(f, delta_df as f64, df_c as f64)?)
        }
    };
    Ok(ModelComparison {
        smaller: summaries.0,
        larger: summaries.1,
        complete: summaries.2,
        delta_df,
        f,
        p,
        significance: Significance::of(p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::formula::ModelFormula;
    use approx::assert_relative_eq;

    fn s(formula: &str, r2: f64, df: usize, n: usize) -> FitResult {
        FitResult::from_summary(formula.parse::<ModelFormula>().unwrap(), r2, df, n).unwrap()
    }

    #[test]
    fn p_formatting() {
        assert_eq!(format_p(0.9618), "0.962");
        assert_eq!(format_p(0.00029), "<0.001");
        assert_eq!(format_p(0.001), "0.001");
        assert_eq!(Significance::of(0.04).as_str(), "*");
        assert_eq!(Significance::of(0.0099).as_str(), "**");
        assert_eq!(Significance::of(0.05).as_str(), "n.s.");
    }

    #[test]
    fn f_from_printed_summaries() {
        let cm = s("gva ~ end_depth * environment", 0.0876, 150, 156);
        let fm = s("gva ~ end_depth", 0.0839, 154, 156);
        let rm = s("gva ~ 1", 0.0, 155, 156);
        let a = nested_f_test(&fm, &cm, &cm).unwrap();
        assert_eq!(a.delta_df, 4);
        // ((0.0876 - 0.0839) / 4) / ((1 - 0.0876) / 150)
        assert_relative_eq!(a.f, 0.1520714599, epsilon = 1e-8);
        let b = nested_f_test(&rm, &fm, &cm).unwrap();
        assert_relative_eq!(b.f, 0.0839 / (0.9124 / 150.0), epsilon = 1e-10);
        assert_eq!(b.p_label(), "<0.001");
    }

    #[test]
    fn identical_models_and_bad_nesting() {
        let a = s("y ~ x", 0.3, 10, 12);
        let c = nested_f_test(&a, &a, &a).unwrap();
        assert_eq!((c.f, c.p), (0.0, 1.0));
        let b = s("y ~ z", 0.2, 10, 12);
        assert_eq!(nested_f_test(&b, &a, &a).unwrap_err().kind(), "nesting");
        let other_n = s("y ~ 1", 0.0, 12, 13);
        assert_eq!(nested_f_test(&other_n, &a, &a).unwrap_err().kind(), "nesting");
        let swapped = nested_f_test(&a, &s("y ~ 1", 0.0, 11, 12), &a);
        assert!(swapped.is_err());
    }
}
