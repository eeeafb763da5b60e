use serde::{Deserialize, Serialize};

use super::{ColumnKind, DataError, Dataset};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DescribeOptions {
    /// Weight percentages, means and SDs by the dataset weights. Counts stay raw.
    pub weighted: bool,
}

/// One line of a stratified descriptive table. Continuous variables carry
/// `mean`/`sd` and no level; categorical variables carry one row per level
/// with `pct` over the stratum's non-missing cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveRow {
    pub variable: String,
    pub level: Option<String>,
    pub stratum: String,
    pub n: usize,
    pub pct: Option<f64>,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

impl DescriptiveRow {
    /// Table-style cell text: `808 (42.96%)` or `42.62 (17.30)`.
    pub fn cell_text(&self) -> String {
        match (self.pct, self.mean, self.sd) {
            (Some(p), _, _) => format!("{} ({:.2}%)", self.n, p),
            (None, Some(m), Some(s)) => format!("{m:.2} ({s:.2})"),
            (None, Some(m), None) => format!("{m:.2}"),
            _ => format!("{}", self.n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveTable {
    pub strata_column: String,
    pub rows: Vec<DescriptiveRow>,
}

impl DescriptiveTable {
    pub fn get(&self, variable: &str, level: Option<&str>, stratum: &str) -> Option<&DescriptiveRow> {
        self.rows
            .iter()
            .find(|r| r.variable == variable && r.level.as_deref() == level && r.stratum == stratum)
    }

    /// CSV with columns `variable,level,stratum,n,pct,mean,sd`; absent values are empty.
    pub fn to_csv(&self) -> Result<String, DataError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| DataError::Csv(e.to_string());
        w.write_record(["variable", "level", "stratum", "n", "pct", "mean", "sd"])
            .map_err(err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.variable.clone(),
                r.level.clone().unwrap_or_default(),
                r.stratum.clone(),
                r.n.to_string(),
                opt(r.pct),
                opt(r.mean),
                opt(r.sd),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| DataError::Csv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn describe(
    ds: &Dataset,
    strata: &str,
    variables: &[&str],
    opts: DescribeOptions,
) -> Result<DescriptiveTable, DataError> {
    let strata_col = ds.column(strata)?;
    let Some(strata_levels) = strata_col.kind.levels() else {
        return Err(DataError::WrongKind {
            column: strata.to_string(),
            expected: "binary or categorical".into(),
        });
    };
    let weights = if opts.weighted { ds.weights() } else { vec![1.0; ds.n_rows()] };
    let mut rows = Vec::new();
    for &var in variables {
        let col = ds.column(var)?;
        for (s_idx, s_label) in strata_levels.iter().enumerate() {
            let in_stratum: Vec<usize> = (0..ds.n_rows())
                .filter(|&r| strata_col.level(r) == Some(s_idx) && col.cells[r].is_observed())
                .collect();
            match &col.kind {
                ColumnKind::Continuous => {
                    let n = in_stratum.len();
                    let (mean, sd) = weighted_mean_sd(
                        in_stratum.iter().map(|&r| (col.numeric(r).unwrap(), weights[r])),
                    );
                    rows.push(DescriptiveRow {
                        variable: var.to_string(),
                        level: None,
                        stratum: s_label.clone(),
                        n,
                        pct: None,
                        mean,
                        sd,
                    });
                }
                kind => {
                    let levels = kind.levels().unwrap();
                    let total_w: f64 = in_stratum.iter().map(|&r| weights[r]).sum();
                    for (l_idx, l_label) in levels.iter().enumerate() {
                        let members = in_stratum.iter().filter(|&&r| col.level(r) == Some(l_idx));
                        let (n, w) = members.fold((0usize, 0.0), |(n, w), &r| (n + 1, w + weights[r]));
                        rows.push(DescriptiveRow {
                            variable: var.to_string(),
                            level: Some(l_label.clone()),
                            stratum: s_label.clone(),
                            n,
                            pct: (total_w > 0.0).then(|| 100.0 * w / total_w),
                            mean: None,
                            sd: None,
                        });
                    }
                }
            }
        }
    }
    Ok(DescriptiveTable {
        strata_column: strata.to_string(),
        rows,
    })
}

// Reliability-weight SD; reduces to the usual n-1 sample SD for unit weights.
fn weighted_mean_sd(values: impl Iterator<Item = (f64, f64)>) -> (Option<f64>, Option<f64>) {
    let vals: Vec<(f64, f64)> = values.collect();
    let sw: f64 = vals.iter().map(|(_, w)| w).sum();
    if vals.is_empty() || sw <= 0.0 {
        return (None, None);
    }
    let mean = vals.iter().map(|(x, w)| x * w).sum::<f64>() / sw;
    if vals.len() < 2 {
        return (Some(mean), None);
    }
    let n = vals.len() as f64;
    let ss = vals.iter().map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / sw;
    (Some(mean), Some((ss * n / (n - 1.0)).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Column;
    use proptest::prelude::*;

    #[test]
    fn continuous_means_by_stratum() {
        let g = Column::from_labels("g", ColumnKind::binary("B", "A"), &[Some("A"), Some("A"), Some("B")]).unwrap();
        let x = Column::continuous("x", &[1.0, 3.0, 5.0]).unwrap();
        let ds = Dataset::new(vec![g, x], None).unwrap();
        let t = describe(&ds, "g", &["x"], DescribeOptions::default()).unwrap();
        assert_eq!(t.get("x", None, "A").unwrap().mean, Some(2.0));
        assert_eq!(t.get("x", None, "B").unwrap().mean, Some(5.0));
        assert!((t.get("x", None, "A").unwrap().sd.unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn all_yes_is_one_hundred_percent() {
        let g = Column::from_labels("g", ColumnKind::binary("B", "A"), &[Some("A"), Some("A"), Some("B")]).unwrap();
        let y = Column::from_labels("y", ColumnKind::binary("No", "Yes"), &[Some("Yes"), Some("Yes"), Some("No")])
            .unwrap();
        let ds = Dataset::new(vec![g, y], None).unwrap();
        let t = describe(&ds, "g", &["y"], DescribeOptions::default()).unwrap();
        assert_eq!(t.get("y", Some("Yes"), "A").unwrap().pct, Some(100.0));
        assert_eq!(t.get("y", Some("No"), "A").unwrap().pct, Some(0.0));
    }

    #[test]
    fn depression_count_renders_like_table_one() {
        // 1881 SGM rows, 808 with depression
        let n = 1881;
        let g: Vec<bool> = vec![true; n];
        let y: Vec<bool> = (0..n).map(|i| i < 808).collect();
        let ds = Dataset::new(
            vec![Column::indicator("sgm", &g).unwrap(), Column::indicator("depression", &y).unwrap()],
            None,
        )
        .unwrap();
        let t = describe(&ds, "sgm", &["depression"], DescribeOptions::default()).unwrap();
        let row = t.get("depression", Some("1"), "1").unwrap();
        assert_eq!(row.cell_text(), "808 (42.96%)");
    }

    #[test]
    fn unknown_column_is_an_error() {
        let g = Column::indicator("g", &[true]).unwrap();
        let ds = Dataset::new(vec![g], None).unwrap();
        assert!(matches!(
            describe(&ds, "g", &["nope"], DescribeOptions::default()),
            Err(DataError::UnknownColumn(_))
        ));
        assert!(matches!(
            describe(&ds, "nope", &["g"], DescribeOptions::default()),
            Err(DataError::UnknownColumn(_))
        ));
    }

    #[test]
    fn csv_has_documented_header() {
        let g = Column::indicator("g", &[true, false]).unwrap();
        let ds = Dataset::new(vec![g.clone(), Column::continuous("x", &[1.0, 2.0]).unwrap()], None).unwrap();
        let csv = describe(&ds, "g", &["x"], DescribeOptions::default()).unwrap().to_csv().unwrap();
        assert!(csv.starts_with("variable,level,stratum,n,pct,mean,sd\n"));
    }

    proptest! {
        #[test]
        fn stratum_percentages_sum_to_100(
            rows in prop::collection::vec((0usize..2, prop::option::of(0usize..4), 0.1f64..10.0), 1..200),
            weighted in any::<bool>(),
        ) {
            let kind = ColumnKind::categorical(["a", "b", "c", "d"], "a");
            let labels = ["a", "b", "c", "d"];
            let g: Vec<bool> = rows.iter().map(|r| r.0 == 1).collect();
            let c: Vec<Option<&str>> = rows.iter().map(|r| r.1.map(|i| labels[i])).collect();
            let w: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let ds = Dataset::new(vec![
                Column::indicator("g", &g).unwrap(),
                Column::from_labels("c", kind, &c).unwrap(),
                Column::continuous("w", &w).unwrap(),
            ], Some("w".into())).unwrap();
            let t = describe(&ds, "g", &["c"], DescribeOptions { weighted }).unwrap();
            for s in ["0", "1"] {
                let pcts: Vec<f64> = t.rows.iter().filter(|r| r.stratum == s).filter_map(|r| r.pct).collect();
                if !pcts.is_empty() {
                    prop_assert!((pcts.iter().sum::<f64>() - 100.0).abs() < 0.01);
                }
            }
        }
    }
}
