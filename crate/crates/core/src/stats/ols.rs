//! Treatment-coded design matrices and least squares via Householder QR.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::formula::{ModelFormula, Term};
use super::table::{Column, DataTable, Value};
use crate::error::{Error, Result};

pub const INTERCEPT: &str = "(Intercept)";

/// Column-major model matrix with R-style column names.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub n: usize,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

type Expanded = Vec<(String, Vec<f64>)>;

fn expand_term(term: &Term, n: usize, var_cols: &dyn Fn(&str) -> Result<Expanded>) -> Result<Expanded> {
    let mut acc: Expanded = vec![(String::new(), vec![1.0; n])];
    for var in term.variables() {
        let parts = var_cols(var)?;
        let mut next = Vec::with_capacity(acc.len() * parts.len());
        for (an, av) in &acc {
            for (pn, pv) in &parts {
                let name = if an.is_empty() { pn.clone() } else { format!("{an}:{pn}") };
                next.push((name, av.iter().zip(pv).map(|(a, b)| a * b).collect()));
            }
        }
        acc = next;
    }
    Ok(acc)
}

fn expand(formula: &ModelFormula, n: usize, var_cols: &dyn Fn(&str) -> Result<Expanded>) -> Result<DesignMatrix> {
    let mut names = vec![INTERCEPT.to_string()];
    let mut columns = vec![vec![1.0; n]];
    for term in formula.terms() {
        for (name, col) in expand_term(term, n, var_cols)? {
            names.push(name);
            columns.push(col);
        }
    }
    Ok(DesignMatrix { n, names, columns })
}

pub fn build_design(table: &DataTable, formula: &ModelFormula) -> Result<DesignMatrix> {
    let n = table.n_rows();
    let var_cols = |var: &str| -> Result<Expanded> {
        Ok(match table.column(var)? {
            Column::Continuous(v) => vec![(var.to_string(), v.clone())],
            Column::Categorical { levels, codes } => levels
                .iter()
                .enumerate()
                .skip(1)
                .map(|(li, l)| {
                    let ind = codes.iter().map(|&c| if c == li { 1.0 } else { 0.0 }).collect();
                    (format!("{var}{l}"), ind)
                })
                .collect(),
        })
    };
    expand(formula, n, &var_cols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub formula: ModelFormula,
    /// Empty when the fit was reconstructed from a printed summary.
    pub coefficients: Vec<Coefficient>,
    pub r_squared: f64,
    pub residual_df: usize,
    pub n: usize,
    pub rss: f64,
    pub tss: f64,
    #[serde(default)]
    pub factor_levels: BTreeMap<String, Vec<String>>,
}

impl FitResult {
    /// A fit known only through its R² and residual degrees of freedom.
    pub fn from_summary(formula: ModelFormula, r_squared: f64, residual_df: usize, n: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&r_squared) {
            return Err(Error::Domain(format!("R² must lie in [0, 1], got {r_squared}")));
        }
        if residual_df >= n {
            return Err(Error::Domain(format!(
                "residual df {residual_df} must be below n = {n}"
            )));
        }
        Ok(FitResult {
            formula,
            coefficients: Vec::new(),
            r_squared,
            residual_df,
            n,
            rss: 1.0 - r_squared,
            tss: 1.0,
            factor_levels: BTreeMap::new(),
        })
    }

    pub fn n_params(&self) -> usize {
        self.n - self.residual_df
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficients.iter().find(|c| c.name == name).map(|c| c.estimate)
    }

    /// `n ln(RSS / n) + 2k`, up to an additive constant shared by all
    /// models fitted to the same rows.
    pub fn aic(&self) -> f64 {
        let n = self.n as f64;
        n * (self.rss / n).ln() + 2.0 * self.n_params() as f64
    }

    pub fn predict(&self, values: &BTreeMap<String, Value>) -> Result<f64> {
        if self.coefficients.is_empty() {
            return Err(Error::InvalidModel(
                "fit carries no coefficients to predict with".into(),
            ));
        }
        let var_cols = |var: &str| -> Result<Expanded> {
            let v = values
                .get(var)
                .ok_or_else(|| Error::Lookup(format!("no value given for `{var}`")))?;
            match (self.factor_levels.get(var), v) {
                (None, Value::Num(x)) => Ok(vec![(var.to_string(), vec![*x])]),
                (Some(levels), Value::Level(l)) => {
                    let idx = levels.iter().position(|x| x == l).ok_or_else(|| Error::UnknownLevel {
                        factor: var.to_string(),
                        level: l.clone(),
                    })?;
                    Ok(levels
                        .iter()
                        .enumerate()
                        .skip(1)
                        .map(|(li, name)| (format!("{var}{name}"), vec![if li == idx { 1.0 } else { 0.0 }]))
                        .collect())
                }
                _ => Err(Error::Formula(format!("wrong value type for `{var}`"))),
            }
        };
        let row = expand(&self.formula, 1, &var_cols)?;
        Ok(row
            .columns
            .iter()
            .zip(&self.coefficients)
            .map(|(c, b)| c[0] * b.estimate)
            .sum())
    }
}

/// Solution of a least-squares problem.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub beta: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub rss: f64,
    pub residual_df: usize,
}

/// Least squares by Householder QR. Fails if the design is singular or
/// leaves no residual degrees of freedom.
pub fn least_squares(x: &DesignMatrix, y: &[f64]) -> Result<LeastSquares> {
    let n = x.n;
    let p = x.columns.len();
    if y.len() != n {
        return Err(Error::Config(format!("response has {} rows, design has {n}", y.len())));
    }
    if n <= p {
        return Err(Error::SingularDesign(format!(
            "{n} observations cannot support {p} parameters"
        )));
    }
    let mut a = x.columns.clone();
    let mut qty = y.to_vec();
    let col_norms: Vec<f64> = a.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();

    for k in 0..p {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if col_norms[k] == 0.0 || norm <= 1e-10 * col_norms[k] {
            return Err(Error::SingularDesign(format!(
                "column `{}` is a linear combination of earlier columns",
                x.names[k]
            )));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        let reflect = |col: &mut [f64]| {
            let s: f64 = v.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            let f = 2.0 * s / vnorm2;
            for (c, vi) in col.iter_mut().zip(&v) {
                *c -= f * vi;
            }
        };
        for col in a.iter_mut().skip(k + 1) {
            reflect(&mut col[k..]);
        }
        reflect(&mut qty[k..]);
        a[k][k] = alpha;
        for r in a[k].iter_mut().skip(k + 1) {
            *r = 0.0;
        }
    }

    // R[i][j] lives in a[j][i].
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = ((i + 1)..p).map(|j| a[j][i] * beta[j]).sum();
        beta[i] = (qty[i] - s) / a[i][i];
    }

    let rss: f64 = (0..n)
        .map(|r| {
            let fit: f64 = x.columns.iter().zip(&beta).map(|(c, b)| c[r] * b).sum();
            (y[r] - fit).powi(2)
        })
        .sum();
    let residual_df = n - p;
    let sigma2 = rss / residual_df as f64;

    // diag((R'R)^-1) is the squared row norms of R^-1.
    let mut rinv = vec![vec![0.0; p]; p];
    for j in 0..p {
        rinv[j][j] = 1.0 / a[j][j];
        for i in (0..j).rev() {
            let s: f64 = ((i + 1)..=j).map(|k| a[k][i] * rinv[k][j]).sum();
            rinv[i][j] = -s / a[i][i];
        }
    }
    let std_errors = (0..p)
        .map(|i| (sigma2 * rinv[i].iter().map(|v| v * v).sum::<f64>()).sqrt())
        .collect();

    Ok(LeastSquares {
        beta,
        std_errors,
        rss,
        residual_df,
    })
}

/// Fit `formula` to `table` by ordinary least squares.
pub fn fit_ols(table: &DataTable, formula: &ModelFormula) -> Result<FitResult> {
    let y = table.continuous(formula.response())?;
    let x = build_design(table, formula)?;
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n.max(1) as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if tss == 0.0 {
        return Err(Error::DegenerateInput(format!(
            "response `{}` is constant",
            formula.response()
        )));
    }
    let ls = least_squares(&x, y)?;
    let r_squared = if formula.n_terms() == 0 {
        0.0
    } else {
        (1.0 - ls.rss / tss).clamp(0.0, 1.0)
    };
    let mut factor_levels = BTreeMap::new();
    for var in formula.variables() {
        if let Column::Categorical { levels, .. } = table.column(var)? {
            factor_levels.insert(var.to_string(), levels.clone());
        }
    }
    Ok(FitResult {
        formula: formula.clone(),
        coefficients: x
            .names
            .into_iter()
            .zip(ls.beta.iter().zip(&ls.std_errors))
            .map(|(name, (&estimate, &std_error))| Coefficient { name, estimate, std_error })
            .collect(),
        r_squared,
        residual_df: ls.residual_df,
        n,
        rss: ls.rss,
        tss,
        factor_levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Solve the normal equations X'X b = X'y by Gauss-Jordan elimination
    /// with partial pivoting.
    fn normal_equations(x: &DesignMatrix, y: &[f64]) -> Vec<f64> {
        let p = x.columns.len();
        let mut m = vec![vec![0.0; p + 1]; p];
        for i in 0..p {
            for j in 0..p {
                m[i][j] = x.columns[i].iter().zip(&x.columns[j]).map(|(a, b)| a * b).sum();
            }
            m[i][p] = x.columns[i].iter().zip(y).map(|(a, b)| a * b).sum();
        }
        for c in 0..p {
            let piv = (c..p).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
            m.swap(c, piv);
            for r in 0..p {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for k in c..=p {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
        (0..p).map(|i| m[i][p] / m[i][i]).collect()
    }

    fn table_from(x: &[f64], env: &[&str], y: &[f64]) -> DataTable {
        let mut t = DataTable::new();
        t.add_continuous("x", x.to_vec()).unwrap();
        t.add_categorical("env", &["Real", "AR", "VR"], env).unwrap();
        t.add_continuous("y", y.to_vec()).unwrap();
        t
    }

    #[test]
    fn column_names_follow_treatment_coding() {
        let t = table_from(&[1.0, 2.0, 3.0], &["Real", "AR", "VR"], &[1.0, 2.0, 4.0]);
        let f: ModelFormula = "y ~ x * env".parse().unwrap();
        let d = build_design(&t, &f).unwrap();
        let expected = ["(Intercept)", "envAR", "envVR", "x", "envAR:x", "envVR:x"];
        assert_eq!(d.names, expected);
        assert_eq!(d.columns[4], vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn matches_normal_equations_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let levels = ["Real", "AR", "VR"];
        let f: ModelFormula = "y ~ x * env".parse().unwrap();
        for _ in 0..100 {
            let n = rng.random_range(12..60);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..4.0)).collect();
            let env: Vec<&str> = (0..n).map(|i| levels[i % 3]).collect();
            let y: Vec<f64> = x.iter().map(|v| 3.0 * v + rng.random_range(-1.0..1.0)).collect();
            let t = table_from(&x, &env, &y);
            let fit = fit_ols(&t, &f).unwrap();
            let oracle = normal_equations(&build_design(&t, &f).unwrap(), &y);
            for (c, o) in fit.coefficients.iter().zip(&oracle) {
                assert!((c.estimate - o).abs() < 1e-8 * o.abs().max(1.0), "{} vs {o}", c.estimate);
            }
        }
    }

    #[test]
    fn exact_line_gives_unit_r_squared() {
        let x = [0.25, 0.5, 1.0, 2.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.5 + 1.5 * v).collect();
        let mut t = DataTable::new();
        t.add_continuous("x", x.to_vec()).unwrap();
        t.add_continuous("y", y).unwrap();
        let fit = fit_ols(&t, &"y ~ x".parse().unwrap()).unwrap();
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert_relative_eq!(fit.coefficient("x").unwrap(), 1.5, epsilon = 1e-12);
        assert_relative_eq!(fit.coefficient(INTERCEPT).unwrap(), 2.5, epsilon = 1e-12);
        assert_eq!(fit.residual_df, 3);
    }

    #[test]
    fn intercept_only_has_zero_r_squared() {
        let mut t = DataTable::new();
        t.add_continuous("y", vec![1.0, 2.0, 6.0]).unwrap();
        let fit = fit_ols(&t, &"y ~ 1".parse().unwrap()).unwrap();
        assert_eq!(fit.r_squared, 0.0);
        assert_relative_eq!(fit.coefficient(INTERCEPT).unwrap(), 3.0, epsilon = 1e-12);
        assert_eq!(fit.residual_df, 2);
    }

    #[test]
    fn standard_error_of_slope_matches_closed_form() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = [1.1, 1.9, 3.2, 3.8, 5.3, 5.9];
        let mut t = DataTable::new();
        t.add_continuous("x", x.to_vec()).unwrap();
        t.add_continuous("y", y.to_vec()).unwrap();
        let fit = fit_ols(&t, &"y ~ x".parse().unwrap()).unwrap();
        let sxx: f64 = x.iter().map(|v| (v - 3.5) * (v - 3.5)).sum();
        let se = (fit.rss / 4.0 / sxx).sqrt();
        assert_relative_eq!(fit.coefficients[1].std_error, se, epsilon = 1e-12);
    }

    #[test]
    fn singular_and_degenerate_designs_are_rejected() {
        let mut t = DataTable::new();
        t.add_continuous("x", vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        t.add_continuous("x2", vec![2.0, 4.0, 6.0, 8.0]).unwrap();
        t.add_continuous("y", vec![1.0, 3.0, 2.0, 5.0]).unwrap();
        t.add_continuous("c", vec![1.0; 4]).unwrap();
        let err = fit_ols(&t, &"y ~ x + x2".parse().unwrap()).unwrap_err();
        assert_eq!(err.kind(), "singular_design");
        assert_eq!(fit_ols(&t, &"c ~ x".parse().unwrap()).unwrap_err().kind(), "degenerate_input");

        let mut small = DataTable::new();
        small.add_continuous("x", vec![1.0, 2.0]).unwrap();
        small.add_continuous("y", vec![1.0, 3.0]).unwrap();
        assert_eq!(
            fit_ols(&small, &"y ~ x".parse().unwrap()).unwrap_err().kind(),
            "singular_design"
        );

        // A level that never occurs produces an all-zero column.
        let mut absent = DataTable::new();
        absent.add_categorical("env", &["Real", "AR", "VR"], &["Real", "AR", "Real", "AR"]).unwrap();
        absent.add_continuous("y", vec![1.0, 2.0, 1.5, 2.5]).unwrap();
        assert!(fit_ols(&absent, &"y ~ env".parse().unwrap()).is_err());
    }

    #[test]
    fn predict_uses_levels_and_rejects_unknown_ones() {
        let x = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let env = ["Real", "Real", "Real", "AR", "AR", "AR"];
        let y: Vec<f64> = x.iter().zip(env).map(|(v, e)| v + if e == "AR" { 0.5 } else { 0.0 }).collect();
        let mut t = DataTable::new();
        t.add_continuous("x", x.to_vec()).unwrap();
        t.add_categorical("env", &["Real", "AR"], &env).unwrap();
        t.add_continuous("y", y).unwrap();
        let fit = fit_ols(&t, &"y ~ x + env".parse().unwrap()).unwrap();
        let mut row = BTreeMap::new();
        row.insert("x".to_string(), Value::Num(2.0));
        row.insert("env".to_string(), Value::Level("AR".into()));
        assert_relative_eq!(fit.predict(&row).unwrap(), 2.5, epsilon = 1e-12);
        row.insert("env".to_string(), Value::Level("VR".into()));
        assert_eq!(fit.predict(&row).unwrap_err().kind(), "unknown_level");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(400))]

        #[test]
        fn adding_a_term_never_lowers_r_squared(
            seed in 0u64..1_000_000,
            n in 10usize..40,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let levels = ["Real", "AR", "VR"];
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.25..4.0)).collect();
            let env: Vec<&str> = (0..n).map(|i| levels[i % 3]).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let t = table_from(&x, &env, &y);
            let chain = ["y ~ 1", "y ~ x", "y ~ x + env", "y ~ x * env"];
            let mut prev = -1.0;
            for f in chain {
                let r2 = fit_ols(&t, &f.parse().unwrap()).unwrap().r_squared;
                prop_assert!(r2 >= prev - 1e-12, "{} dropped to {}", f, r2);
                prev = r2;
            }
        }
    }
}
