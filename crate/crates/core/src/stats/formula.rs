//! R-style model formulas: `y ~ a * b + c`, `y ~ a:b`, `y ~ 1`.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A main effect (one variable) or an interaction (several).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Term(BTreeSet<String>);

impl Term {
    pub fn new<I, S>(vars: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Term(vars.into_iter().map(Into::into).collect())
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, other: &Term) -> bool {
        other.0.is_subset(&self.0)
    }

    pub fn mentions(&self, var: &str) -> bool {
        self.0.contains(var)
    }

    fn proper_subsets(&self) -> Vec<Term> {
        let vars: Vec<&String> = self.0.iter().collect();
        let k = vars.len();
        (1..(1u32 << k) - 1)
            .map(|mask| {
                Term(
                    (0..k)
                        .filter(|i| mask & (1 << i) != 0)
                        .map(|i| vars[i].clone())
                        .collect(),
                )
            })
            .collect()
    }
}

impl Ord for Term {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Term {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.variables().collect();
        f.write_str(&parts.join(":"))
    }
}

/// Response plus a set of terms; the intercept is always present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ModelFormula {
    response: String,
    terms: BTreeSet<Term>,
}

impl ModelFormula {
    /// Build and check marginality: every interaction's lower-order
    /// components must also be present.
    pub fn new(response: impl Into<String>, terms: impl IntoIterator<Item = Term>) -> Result<Self> {
        let f = ModelFormula {
            response: response.into(),
            terms: terms.into_iter().filter(|t| t.order() > 0).collect(),
        };
        f.check_marginality()?;
        Ok(f)
    }

    pub fn intercept_only(response: impl Into<String>) -> Self {
        ModelFormula {
            response: response.into(),
            terms: BTreeSet::new(),
        }
    }

    /// Full factorial: all main effects and every interaction among them.
    pub fn full_factorial(response: impl Into<String>, vars: &[&str]) -> Self {
        let all = Term::new(vars.iter().copied());
        let mut terms: BTreeSet<Term> = all.proper_subsets().into_iter().collect();
        if all.order() > 0 {
            terms.insert(all);
        }
        ModelFormula {
            response: response.into(),
            terms,
        }
    }

    pub fn response(&self) -> &str {
        &self.response
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.terms.iter()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn has_term(&self, t: &Term) -> bool {
        self.terms.contains(t)
    }

    pub fn mentions(&self, var: &str) -> bool {
        self.terms.iter().any(|t| t.mentions(var))
    }

    pub fn variables(&self) -> BTreeSet<&str> {
        self.terms.iter().flat_map(|t| t.variables()).collect()
    }

    fn check_marginality(&self) -> Result<()> {
        for t in &self.terms {
            for sub in t.proper_subsets() {
                if !self.terms.contains(&sub) {
                    return Err(Error::Formula(format!(
                        "term `{t}` requires lower-order term `{sub}`"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Terms not contained in any other term of the formula; removing one
    /// keeps the formula marginal.
    pub fn droppable_terms(&self) -> Vec<Term> {
        self.terms
            .iter()
            .filter(|t| !self.terms.iter().any(|o| o != *t && o.contains(t)))
            .cloned()
            .collect()
    }

    /// Drop every term that mentions `var`; marginality is preserved.
    pub fn without_variable(&self, var: &str) -> Result<Self> {
        if !self.mentions(var) {
            return Err(Error::Formula(format!("`{var}` is not in `{self}`")));
        }
        let terms: BTreeSet<Term> = self.terms.iter().filter(|t| !t.mentions(var)).cloned().collect();
        ModelFormula::new(self.response.clone(), terms)
    }

    pub fn without(&self, term: &Term) -> Result<Self> {
        let mut terms = self.terms.clone();
        if !terms.remove(term) {
            return Err(Error::Formula(format!("`{term}` is not in `{self}`")));
        }
        ModelFormula::new(self.response.clone(), terms)
    }

    /// Same response and a subset of this formula's terms.
    pub fn is_nested_in(&self, larger: &ModelFormula) -> bool {
        self.response == larger.response && self.terms.is_subset(&larger.terms)
    }
}

impl fmt::Display for ModelFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "{} ~ 1", self.response);
        }
        let parts: Vec<String> = self.terms.iter().map(Term::to_string).collect();
        write!(f, "{} ~ {}", self.response, parts.join(" + "))
    }
}

impl FromStr for ModelFormula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (lhs, rhs) = s
            .split_once('~')
            .ok_or_else(|| Error::Formula(format!("missing `~` in `{s}`")))?;
        let response = lhs.trim();
        if !is_name(response) {
            return Err(Error::Formula(format!("bad response name `{response}`")));
        }
        let mut terms = BTreeSet::new();
        for chunk in rhs.split('+').map(str::trim) {
            match chunk {
                "" => return Err(Error::Formula(format!("empty term in `{s}`"))),
                "1" => continue,
                "0" | "-1" => {
                    return Err(Error::Formula("models without intercept are not supported".into()))
                }
                _ => {}
            }
            let factors: Vec<Term> = chunk
                .split('*')
                .map(|f| parse_interaction(f.trim()))
                .collect::<Result<_>>()?;
            // a * b * c expands to every non-empty union of its factors.
            for mask in 1..(1u32 << factors.len()) {
                let mut vars = BTreeSet::new();
                for (i, f) in factors.iter().enumerate() {
                    if mask & (1 << i) != 0 {
                        vars.extend(f.0.iter().cloned());
                    }
                }
                terms.insert(Term(vars));
            }
        }
        ModelFormula::new(response, terms)
    }
}

fn parse_interaction(s: &str) -> Result<Term> {
    let vars: Vec<&str> = s.split(':').map(str::trim).collect();
    if let Some(bad) = vars.iter().find(|v| !is_name(v)) {
        return Err(Error::Formula(format!("bad variable name `{bad}`")));
    }
    Ok(Term::new(vars))
}

fn is_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

impl From<ModelFormula> for String {
    fn from(f: ModelFormula) -> String {
        f.to_string()
    }
}

impl TryFrom<String> for ModelFormula {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn removing_a_variable_takes_its_interactions() {
        let f: ModelFormula = "y ~ a * b * c".parse().unwrap();
        assert_eq!(f.without_variable("b").unwrap().to_string(), "y ~ a + c + a:c");
        assert_eq!(f.without_variable("z").unwrap_err().kind(), "formula");
    }

    #[test]
    fn star_expands_to_main_effects_and_interaction() {
        let f: ModelFormula = "gva ~ end_depth * environment".parse().unwrap();
        assert_eq!(
            f.to_string(),
            "gva ~ end_depth + environment + end_depth:environment"
        );
        let three: ModelFormula = "y ~ a * b * c".parse().unwrap();
        assert_eq!(three.n_terms(), 7);
        assert_eq!(three, ModelFormula::full_factorial("y", &["c", "a", "b"]));
    }

    #[test]
    fn intercept_only_round_trips() {
        let f: ModelFormula = "y ~ 1".parse().unwrap();
        assert_eq!(f.n_terms(), 0);
        assert_eq!(f.to_string(), "y ~ 1");
        assert_eq!(f.to_string().parse::<ModelFormula>().unwrap(), f);
    }

    #[test]
    fn marginality_is_enforced() {
        let err = "y ~ a + a:b".parse::<ModelFormula>().unwrap_err();
        assert_eq!(err.kind(), "formula");
        assert!("y ~ a + b + a:b".parse::<ModelFormula>().is_ok());
    }

    #[test]
    fn droppable_terms_respect_hierarchy() {
        let f: ModelFormula = "y ~ a * b + c".parse().unwrap();
        let d: Vec<String> = f.droppable_terms().iter().map(Term::to_string).collect();
        assert_eq!(d, vec!["c", "a:b"]);
        assert!(f.without(&Term::new(["a"])).is_err());
    }

    #[test]
    fn nesting() {
        let big: ModelFormula = "y ~ a * b".parse().unwrap();
        let small: ModelFormula = "y ~ a".parse().unwrap();
        let other: ModelFormula = "z ~ a".parse().unwrap();
        assert!(small.is_nested_in(&big));
        assert!(!big.is_nested_in(&small));
        assert!(!other.is_nested_in(&big));
    }

    #[test]
    fn parse_errors() {
        for bad in ["y a", "~ a", "y ~ a +", "y ~ 0 + a", "y ~ 3x"] {
            assert!(bad.parse::<ModelFormula>().is_err(), "{bad}");
        }
    }
}
