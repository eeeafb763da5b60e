//! Synthetic survey extracts in the raw NHIS wording, for fixtures and tests.
//!
//! Rows come from a simple structural model: a latent factor drives the
//! poverty ratio and the exposure, the exposure lowers support after
//! disclosure, and depression depends on exposure, support and covariates.
//! A chosen number of rows are flagged with exactly one non-response or
//! missing cell in a role column, so complete-case filtering keeps
//! `n - flagged` rows.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Cell, Column, ColumnKind, DataError, Dataset, Schema, Value, VariableRoles};
use crate::glm::sigmoid;

pub const ORIENTATION_LEVELS: [&str; 6] = [
    "Straight, that is, not gay/lesbian",
    "Gay/lesbian",
    "Bisexual",
    "Something else",
    "Refused",
    "Don't know",
];
pub const SUPPORT_FREQ_LEVELS: [&str; 6] = ["Always", "Usually", "Sometimes", "Rarely", "Never", "Don't know"];
pub const SUPPORT_CHANGE_LEVELS: [&str; 4] = ["More", "About the same", "Less", "Don't know"];
pub const YES_NO_LEVELS: [&str; 3] = ["No", "Yes", "Refused"];
pub const SEX_LEVELS: [&str; 2] = ["Male", "Female"];
pub const RACE_LEVELS: [&str; 5] = ["White", "Black", "Asian", "AIAN", "Other"];
pub const EDUCATION_LEVELS: [&str; 3] = ["High school or below", "Bachelor", "Master or above"];
pub const YEAR_LEVELS: [&str; 2] = ["2020", "2021"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticOptions {
    pub n: usize,
    /// Rows given exactly one unusable cell.
    pub flagged: usize,
    /// Share of flagged rows whose cell is non-response rather than missing.
    pub nonresponse_share: f64,
    /// Added to the exposure log-odds; 0 gives roughly 4% exposed.
    pub exposure_shift: f64,
    pub seed: u64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            n: 61050,
            flagged: 18719,
            nonresponse_share: 0.5,
            exposure_shift: 0.0,
            seed: 2021,
        }
    }
}

/// Schema for reading the raw extract written by [`nhis_like`].
pub fn raw_schema() -> Schema {
    let cat = |levels: &[&str]| ColumnKind::categorical(levels.iter().copied(), levels[0]);
    Schema::new()
        .column("orientation", cat(&ORIENTATION_LEVELS))
        .column("depression", cat(&YES_NO_LEVELS))
        .column("poverty_ratio", ColumnKind::Continuous)
        .column("support_freq", cat(&SUPPORT_FREQ_LEVELS))
        .column("support_change", cat(&SUPPORT_CHANGE_LEVELS))
        .column("age", ColumnKind::Continuous)
        .column("sex", cat(&SEX_LEVELS))
        .column("race", cat(&RACE_LEVELS))
        .column("education", cat(&EDUCATION_LEVELS))
        .column("year", cat(&YEAR_LEVELS))
        .weight("weight")
}

/// Roles matching the recoded extract.
pub fn nhis_roles() -> VariableRoles {
    VariableRoles {
        exposure: "orientation".into(),
        outcome: "depression".into(),
        baseline: Some("poverty_ratio".into()),
        mediators: vec!["support_freq".into(), "support_change".into()],
        covariates: vec!["age".into(), "sex".into(), "race".into(), "education".into()],
        survey_year: Some("year".into()),
    }
}

fn draw_level(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Ordered category from a latent score, with fixed cut points.
fn ordinal(score: f64, cuts: &[f64]) -> usize {
    cuts.iter().filter(|&&c| score > c).count()
}

pub fn nhis_like(opts: &SyntheticOptions) -> Result<Dataset, DataError> {
    let n = opts.n;
    if n == 0 || opts.flagged > n {
        return Err(DataError::NoRows);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut cols: [Vec<Cell>; 11] = Default::default();
    let num = |v: f64| Cell::Observed(Value::Num(v));
    let lvl = |i: usize| Cell::Observed(Value::Level(i));
    for _ in 0..n {
        let h = normal(&mut rng);
        let age = (18.0 + 62.0 * rng.gen::<f64>() + 5.0 * normal(&mut rng)).clamp(18.0, 85.0).round();
        let sex = usize::from(rng.gen_bool(0.52));
        let race = draw_level(&mut rng, &[0.63, 0.12, 0.06, 0.02, 0.17]);
        let education = draw_level(&mut rng, &[0.55, 0.28, 0.17]);
        let year = usize::from(rng.gen_bool(0.5));
        let poverty = (1.0 + 0.35 * h + 0.2 * education as f64 + 0.4 * normal(&mut rng)).exp().min(11.0);
        let poverty = (poverty * 100.0).round() / 100.0;
        let q = rng.gen_bool(sigmoid(-3.1 + opts.exposure_shift + 0.5 * h - 0.03 * (age - 45.0) + 0.3 * sex as f64));
        let qf = f64::from(u8::from(q));
        let orientation = if q { 1 + draw_level(&mut rng, &[0.4, 0.45, 0.15]) } else { 0 };
        let support_score = 0.2 * poverty.ln() - 0.6 * qf + 0.15 * sex as f64 + normal(&mut rng);
        let support_freq = ordinal(-support_score, &[-0.2, 0.6, 1.2, 1.8]);
        let support_change = ordinal(-support_score + 0.5 * normal(&mut rng), &[-0.9, 0.9]);
        let lp = -2.1 + 1.1 * qf + 0.25 * support_freq as f64 + 0.3 * (support_change == 2) as u8 as f64
            - 0.15 * poverty.ln()
            + 0.4 * sex as f64
            - 0.01 * (age - 45.0)
            - 0.2 * (race == 2) as u8 as f64
            + 0.2 * h;
        let depression = usize::from(rng.gen_bool(sigmoid(lp)));
        let weight = ((8.5 + 0.6 * normal(&mut rng)).exp()).round();
        for (c, cell) in cols.iter_mut().zip([
            lvl(orientation),
            lvl(depression),
            num(poverty),
            lvl(support_freq),
            lvl(support_change),
            num(age),
            lvl(sex),
            lvl(race),
            lvl(education),
            lvl(year),
            num(weight),
        ]) {
            c.push(cell);
        }
    }

    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    for &r in &rows[..opts.flagged] {
        if rng.gen_bool(opts.nonresponse_share) {
            // (column, raw non-response label)
            let (c, level) = [(0, 4), (0, 5), (1, 2), (3, 5), (4, 3)][rng.gen_range(0..5)];
            cols[c][r] = lvl(level);
        } else {
            let c = [1, 2, 3, 4, 8][rng.gen_range(0..5)];
            cols[c][r] = Cell::Missing;
        }
    }

    let schema = raw_schema();
    let mut columns = Vec::with_capacity(11);
    for ((name, kind), cells) in schema.columns.iter().zip(cols) {
        columns.push(Column::new(name.clone(), kind.clone(), cells)?);
    }
    Dataset::new(columns, schema.weight)
}
