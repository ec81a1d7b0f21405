//! Linear models with categorical predictors, nested F-tests, stepwise
//! refinement and the summaries built on them.

pub mod attribution;
pub mod correlation;
pub mod fdist;
pub mod formula;
pub mod ftest;
pub mod logratio;
pub mod ols;
pub mod stepwise;
pub mod table;
pub mod units;

pub use attribution::{variance_attribution, Share, ShareSpec};
pub use correlation::{pearson_r, r_squared_percent, Correlation};
pub use formula::{ModelFormula, Term};
pub use ftest::{format_p, nested_f_test, FitSummary, ModelComparison, Significance};
pub use logratio::{log_ratio_table, mean_log_ratios, ratio_from_log, CellValue, LogRatioRow, Measure};
pub use ols::{fit_ols, FitResult};
pub use stepwise::{stepwise_refine, Criterion, StepwiseResult};
pub use table::{DataTable, Value};
pub use units::{unit_to_meters, LengthUnit};
