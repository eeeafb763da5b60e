use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Cell, Column, ColumnKind, DataError, Dataset, Value};

/// Where a raw label goes. In config files this is written as the target
/// level itself, or `@missing` / `@nonresponse`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum RecodeTarget {
    Level(String),
    Missing,
    Nonresponse,
}

impl From<String> for RecodeTarget {
    fn from(s: String) -> Self {
        match s.as_str() {
            "@missing" => RecodeTarget::Missing,
            "@nonresponse" => RecodeTarget::Nonresponse,
            _ => RecodeTarget::Level(s),
        }
    }
}

impl From<RecodeTarget> for String {
    fn from(t: RecodeTarget) -> Self {
        match t {
            RecodeTarget::Level(l) => l,
            RecodeTarget::Missing => "@missing".into(),
            RecodeTarget::Nonresponse => "@nonresponse".into(),
        }
    }
}

/// Mapping for one source column. Raw labels match case-insensitively after
/// trimming; labels that already equal a target level map to themselves, so a
/// rule can be applied to recoded data again without effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecodeRule {
    pub target: ColumnKind,
    pub map: IndexMap<String, RecodeTarget>,
}

impl RecodeRule {
    pub fn new(target: ColumnKind) -> Self {
        RecodeRule {
            target,
            map: IndexMap::new(),
        }
    }

    pub fn level(mut self, raw: &str, level: &str) -> Self {
        self.map.insert(raw.to_string(), RecodeTarget::Level(level.to_string()));
        self
    }

    pub fn nonresponse(mut self, raw: &str) -> Self {
        self.map.insert(raw.to_string(), RecodeTarget::Nonresponse);
        self
    }

    pub fn missing(mut self, raw: &str) -> Self {
        self.map.insert(raw.to_string(), RecodeTarget::Missing);
        self
    }

    fn validate(&self, column: &str) -> Result<(), DataError> {
        self.target.validate(column)?;
        let invalid = |reason: String| DataError::InvalidRule {
            column: column.to_string(),
            reason,
        };
        let mut seen = BTreeSet::new();
        let mut any_level = false;
        for (raw, t) in &self.map {
            if !seen.insert(normalize(raw)) {
                return Err(invalid(format!("raw label `{raw}` is mapped more than once")));
            }
            if let RecodeTarget::Level(l) = t {
                any_level = true;
                if self.target.level_index(l).is_none() {
                    return Err(invalid(format!("`{raw}` maps to undeclared level `{l}`")));
                }
            }
        }
        if !any_level {
            return Err(invalid("no raw label maps to a level".into()));
        }
        Ok(())
    }

    fn lookup(&self, raw: &str) -> Option<RecodeTarget> {
        let key = normalize(raw);
        if let Some((_, t)) = self.map.iter().find(|(k, _)| normalize(k) == key) {
            return Some(t.clone());
        }
        self.target
            .levels()?
            .iter()
            .find(|l| normalize(l) == key)
            .map(|l| RecodeTarget::Level(l.clone()))
    }
}

fn normalize(s: &str) -> String {
    s.trim().replace(['\u{2019}', '\u{2018}'], "'").to_lowercase()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecodeRuleSet {
    pub rules: IndexMap<String, RecodeRule>,
}

impl RecodeRuleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(mut self, column: &str, rule: RecodeRule) -> Self {
        self.rules.insert(column.to_string(), rule);
        self
    }

    /// Merges `other` over `self`; rules in `other` win.
    pub fn merged(mut self, other: &RecodeRuleSet) -> Self {
        for (k, v) in &other.rules {
            self.rules.insert(k.clone(), v.clone());
        }
        self
    }

    /// Rules restricted to columns present in `ds`.
    pub fn restricted_to(&self, ds: &Dataset) -> Self {
        RecodeRuleSet {
            rules: self
                .rules
                .iter()
                .filter(|(k, _)| ds.has_column(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// NHIS 2020-2021 wordings for sexual orientation, depression diagnosis,
    /// social support frequency and change, sex, race and education.
    ///
    /// Sexual orientation: gay/lesbian, bisexual and "something else" are coded
    /// `1`, straight `0`; refusals and "don't know" are non-response.
    pub fn nhis() -> Self {
        let dk = |r: RecodeRule| {
            r.nonresponse("Refused")
                .nonresponse("Don't know")
                .nonresponse("I don't know the answer")
                .nonresponse("I didn't know")
                .nonresponse("I was uncertain")
                .missing("Not ascertained")
        };
        let orientation = dk(RecodeRule::new(ColumnKind::indicator())
            .level("Gay/lesbian", "1")
            .level("Gay", "1")
            .level("Lesbian", "1")
            .level("Bisexual", "1")
            .level("Something else", "1")
            .level("Straight", "0")
            .level("Straight, that is, not gay/lesbian", "0"));
        let depression = dk(RecodeRule::new(ColumnKind::indicator())
            .level("Yes", "1")
            .level("No", "0"));
        let support_freq = dk(RecodeRule::new(ColumnKind::categorical(
            ["Always", "Usually", "Sometimes", "Rarely", "Never"],
            "Always",
        ))
        .level("Always", "Always")
        .level("Usually", "Usually")
        .level("Sometimes", "Sometimes")
        .level("Rarely", "Rarely")
        .level("Never", "Never"));
        const MORE: &str = "More social and emotional support";
        const LESS: &str = "Less social and emotional support";
        const SAME: &str = "About the same";
        let support_change = dk(RecodeRule::new(ColumnKind::categorical([MORE, LESS, SAME], MORE))
            .level("More", MORE)
            .level("More social support", MORE)
            .level("Less", LESS)
            .level("Less social support", LESS)
            .level("Same", SAME)
            .level("About the same", SAME));
        let sex = dk(RecodeRule::new(ColumnKind::categorical(["Male", "Female"], "Male"))
            .level("Male", "Male")
            .level("Female", "Female"));
        const AIAN: &str = "American Indian or Alaska Native";
        const BLACK: &str = "Black or African American";
        let race = dk(RecodeRule::new(ColumnKind::categorical(
            [AIAN, "Asian", BLACK, "Other", "White"],
            "White",
        ))
        .level("AIAN", AIAN)
        .level("Asian", "Asian")
        .level("Black", BLACK)
        .level("Other", "Other")
        .level("White", "White"));
        const HS: &str = "High school graduate or below";
        const BA: &str = "Bachelor's degree";
        const MA: &str = "Master's degree and above";
        let education = dk(RecodeRule::new(ColumnKind::categorical([HS, BA, MA], HS))
            .level("High school or below", HS)
            .level("Bachelor", BA)
            .level("Master or above", MA));
        RecodeRuleSet::new()
            .rule("orientation", orientation)
            .rule("depression", depression)
            .rule("support_freq", support_freq)
            .rule("support_change", support_change)
            .rule("sex", sex)
            .rule("race", race)
            .rule("education", education)
    }
}

/// Applies every rule to its source column, replacing the column in place.
/// Unobserved cells stay as they are.
pub fn recode(ds: &Dataset, rules: &RecodeRuleSet) -> Result<Dataset, DataError> {
    let mut out = ds.clone();
    for (name, rule) in &rules.rules {
        rule.validate(name)?;
        let src = ds.column(name)?;
        let mut unmapped = BTreeSet::new();
        let mut cells = Vec::with_capacity(src.len());
        for r in 0..src.len() {
            let cell = match src.label(r) {
                None => src.cells[r],
                Some(raw) => match rule.lookup(&raw) {
                    Some(RecodeTarget::Level(l)) => {
                        Cell::Observed(Value::Level(rule.target.level_index(&l).unwrap()))
                    }
                    Some(RecodeTarget::Missing) => Cell::Missing,
                    Some(RecodeTarget::Nonresponse) => Cell::Nonresponse,
                    None => {
                        unmapped.insert(raw);
                        Cell::Missing
                    }
                },
            };
            cells.push(cell);
        }
        if !unmapped.is_empty() {
            return Err(DataError::UnmappedLabels {
                column: name.clone(),
                labels: unmapped.into_iter().collect(),
            });
        }
        out = out.with_column(Column::new(name.clone(), rule.target.clone(), cells)?)?;
    }
    Ok(out)
}

impl Dataset {
    pub fn recode(&self, rules: &RecodeRuleSet) -> Result<Dataset, DataError> {
        recode(self, rules)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orientation(labels: &[&str]) -> Dataset {
        let levels = [
            "Gay/lesbian",
            "Straight, that is, not gay/lesbian",
            "bisexual",
            "Something else",
            "straight",
            "Refused",
            "Don't know",
        ];
        let kind = ColumnKind::categorical(levels, "straight");
        let labels: Vec<Option<&str>> = labels.iter().map(|l| Some(*l)).collect();
        Dataset::new(vec![Column::from_labels("orientation", kind, &labels).unwrap()], None).unwrap()
    }

    #[test]
    fn sexual_orientation_coding() {
        let ds = orientation(&["bisexual", "straight", "Refused", "Gay/lesbian", "Something else", "Don't know"]);
        let out = ds.recode(&RecodeRuleSet::nhis().restricted_to(&ds)).unwrap();
        let q = out.column("orientation").unwrap();
        assert_eq!(q.numeric(0), Some(1.0));
        assert_eq!(q.cells[0], Cell::Observed(Value::Level(1)));
        assert_eq!(q.numeric(1), Some(0.0));
        assert_eq!(q.cells[2], Cell::Nonresponse);
        assert_eq!(q.numeric(3), Some(1.0));
        assert_eq!(q.numeric(4), Some(1.0));
        assert_eq!(q.cells[5], Cell::Nonresponse);
    }

    #[test]
    fn recode_is_idempotent() {
        let ds = orientation(&["bisexual", "straight", "Refused"]);
        let rules = RecodeRuleSet::nhis().restricted_to(&ds);
        let once = ds.recode(&rules).unwrap();
        let twice = once.recode(&rules).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn unmapped_label_is_listed() {
        let kind = ColumnKind::categorical(["Yes", "No", "Maybe"], "No");
        let ds = Dataset::new(
            vec![Column::from_labels("depression", kind, &[Some("Yes"), Some("Maybe")]).unwrap()],
            None,
        )
        .unwrap();
        let err = ds.recode(&RecodeRuleSet::nhis().restricted_to(&ds)).unwrap_err();
        match err {
            DataError::UnmappedLabels { column, labels } => {
                assert_eq!(column, "depression");
                assert_eq!(labels, vec!["Maybe".to_string()]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn depression_and_reference_levels() {
        let rules = RecodeRuleSet::nhis();
        let dep = &rules.rules["depression"];
        assert_eq!(dep.lookup("Yes"), Some(RecodeTarget::Level("1".into())));
        assert_eq!(dep.lookup("no"), Some(RecodeTarget::Level("0".into())));
        assert_eq!(rules.rules["support_freq"].target.reference(), Some("Always"));
        assert_eq!(
            rules.rules["support_change"].target.reference(),
            Some("More social and emotional support")
        );
        assert_eq!(rules.rules["race"].target.reference(), Some("White"));
        assert_eq!(rules.rules["sex"].target.reference(), Some("Male"));
    }

    #[test]
    fn row_order_preserved() {
        let ds = orientation(&["straight", "bisexual", "straight", "Gay/lesbian"]);
        let out = ds.recode(&RecodeRuleSet::nhis().restricted_to(&ds)).unwrap();
        let q: Vec<f64> = out.column("orientation").unwrap().numeric_complete().unwrap();
        assert_eq!(q, vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn numeric_codes_can_be_recoded() {
        let ds = Dataset::new(vec![Column::continuous("code", &[1.0, 2.0, 7.0]).unwrap()], None).unwrap();
        let rules = RecodeRuleSet::new().rule(
            "code",
            RecodeRule::new(ColumnKind::binary("No", "Yes"))
                .level("1", "Yes")
                .level("2", "No")
                .nonresponse("7"),
        );
        let out = ds.recode(&rules).unwrap();
        let c = out.column("code").unwrap();
        assert_eq!(c.numeric(0), Some(1.0));
        assert_eq!(c.numeric(1), Some(0.0));
        assert_eq!(c.cells[2], Cell::Nonresponse);
    }

    #[test]
    fn rule_without_levels_rejected() {
        let ds = Dataset::new(vec![Column::continuous("code", &[1.0]).unwrap()], None).unwrap();
        let rules = RecodeRuleSet::new().rule("code", RecodeRule::new(ColumnKind::indicator()).missing("1"));
        assert!(matches!(ds.recode(&rules), Err(DataError::InvalidRule { .. })));
    }
}
