use causal_mediation::data::{Cell, Column, ColumnKind, Dataset, Value, VariableRoles};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn level(i: usize) -> Cell {
    Cell::Observed(Value::Level(i))
}

pub fn binary(name: &str, v: &[usize]) -> Column {
    Column::new(name, ColumnKind::binary("0", "1"), v.iter().map(|&i| level(i)).collect()).unwrap()
}

/// Logistic data: Q on (C1, C2), M on (Q, C1), Y on (Q, M, C1, C2).
/// `m_on_q` and `y_on_m` scale the mediator paths.
pub fn mediation_data(n: usize, seed: u64, m_on_q: f64, y_on_m: f64) -> (Dataset, VariableRoles) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = |lp: f64| 1.0 / (1.0 + (-lp).exp());
    let (mut q, mut m, mut y, mut c1, mut c2) = (vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b = rng.gen_range(0..3);
        let qi = usize::from(rng.gen_bool(p(-0.5 + 0.5 * a + [0.0, 0.3, -0.4][b])));
        let mi = usize::from(rng.gen_bool(p(-0.2 + m_on_q * qi as f64 + 0.4 * a)));
        let yi = usize::from(rng.gen_bool(p(-1.0 + 0.8 * qi as f64 + y_on_m * mi as f64 + 0.3 * a - 0.2 * b as f64)));
        q.push(qi);
        m.push(mi);
        y.push(yi);
        c1.push(a);
        c2.push(level(b));
    }
    let ds = Dataset::new(
        vec![
            binary("Q", &q),
            binary("M", &m),
            binary("Y", &y),
            Column::continuous("C1", &c1).unwrap(),
            Column::new("C2", ColumnKind::categorical(["a", "b", "c"], "a"), c2).unwrap(),
        ],
        None,
    )
    .unwrap();
    let roles = VariableRoles {
        exposure: "Q".into(),
        outcome: "Y".into(),
        baseline: Some("C1".into()),
        mediators: vec!["M".into()],
        covariates: vec!["C2".into()],
        survey_year: None,
    };
    (ds, roles)
}
