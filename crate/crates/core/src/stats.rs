//! Reliability and robustness statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::judge::{Aggregation, JudgeRecord, ScaleKind};
use crate::scoring::CompositeScheme;

/// Ratings by several raters over several items; cells may be missing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReliabilityMatrix {
    pub items: Vec<String>,
    pub raters: Vec<String>,
    /// (item index, rater index) -> value
    pub values: BTreeMap<(usize, usize), f64>,
}

impl ReliabilityMatrix {
    pub fn from_triples<I, S, R>(triples: I) -> Self
    where
        I: IntoIterator<Item = (S, R, f64)>,
        S: Into<String>,
        R: Into<String>,
    {
        let mut items: BTreeMap<String, usize> = BTreeMap::new();
        let mut raters: BTreeMap<String, usize> = BTreeMap::new();
        let mut cells = Vec::new();
        for (item, rater, v) in triples {
            let item = item.into();
            let rater = rater.into();
            let n = items.len();
            let i = *items.entry(item).or_insert(n);
            let n = raters.len();
            let r = *raters.entry(rater).or_insert(n);
            cells.push(((i, r), v));
        }
        let by_index = |m: BTreeMap<String, usize>| {
            let mut v: Vec<(usize, String)> = m.into_iter().map(|(k, i)| (i, k)).collect();
            v.sort();
            v.into_iter().map(|(_, k)| k).collect::<Vec<_>>()
        };
        ReliabilityMatrix {
            items: by_index(items),
            raters: by_index(raters),
            values: cells.into_iter().collect(),
        }
    }

    /// Ratings grouped by item, in item order. Items with no ratings are empty.
    pub fn units(&self) -> Vec<Vec<f64>> {
        let mut units = vec![Vec::new(); self.items.len()];
        for (&(i, _), &v) in &self.values {
            units[i].push(v);
        }
        units
    }

    fn check(&self) -> Result<Vec<Vec<f64>>> {
        if self.raters.len() < 2 {
            return Err(Error::TooFew { what: "raters", needed: 2, found: self.raters.len() });
        }
        let usable: Vec<Vec<f64>> = self.units().into_iter().filter(|u| u.len() >= 2).collect();
        if usable.len() < 2 {
            return Err(Error::TooFew { what: "items with two or more ratings", needed: 2, found: usable.len() });
        }
        Ok(usable)
    }
}

/// Interval disagreement.
fn delta(a: f64, b: f64) -> f64 {
    (a - b) * (a - b)
}

fn value_key(v: f64) -> u64 {
    (v + 0.0).to_bits()
}

/// Krippendorff's alpha with the interval metric, via the coincidence matrix.
/// Items with fewer than two ratings are ignored.
pub fn krippendorff_alpha(m: &ReliabilityMatrix) -> Result<f64> {
    let units = m.check()?;

    let mut index: BTreeMap<u64, usize> = BTreeMap::new();
    let mut values: Vec<f64> = Vec::new();
    for &v in units.iter().flatten() {
        index.entry(value_key(v)).or_insert_with(|| {
            values.push(v);
            values.len() - 1
        });
    }
    let k = values.len();
    let mut coincidence = vec![vec![0.0_f64; k]; k];
    for unit in &units {
        let weight = 1.0 / (unit.len() - 1) as f64;
        for (i, &a) in unit.iter().enumerate() {
            for (j, &b) in unit.iter().enumerate() {
                if i != j {
                    coincidence[index[&value_key(a)]][index[&value_key(b)]] += weight;
                }
            }
        }
    }
    let marginals: Vec<f64> = coincidence.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = marginals.iter().sum();

    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..k {
        for d in 0..k {
            let dist = delta(values[c], values[d]);
            observed += coincidence[c][d] * dist;
            expected += marginals[c] * marginals[d] * dist;
        }
    }
    let observed = observed / n;
    let expected = expected / (n * (n - 1.0));
    if expected <= 0.0 {
        return Err(Error::ZeroExpectedDisagreement);
    }
    Ok(1.0 - observed / expected)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftDiagnostic {
    /// Mean squared difference between ratings of the same item.
    pub within_item: f64,
    /// Mean squared difference between ratings of different items.
    pub between_item: f64,
}

impl DriftDiagnostic {
    pub fn ratio(&self) -> Option<f64> {
        (self.between_item > 0.0).then(|| self.within_item / self.between_item)
    }
}

pub fn drift_diagnostic(m: &ReliabilityMatrix) -> Result<DriftDiagnostic> {
    m.check()?;
    let units: Vec<Vec<f64>> = m.units().into_iter().filter(|u| !u.is_empty()).collect();

    let (mut within, mut within_pairs) = (0.0, 0usize);
    for unit in &units {
        for i in 0..unit.len() {
            for j in i + 1..unit.len() {
                within += delta(unit[i], unit[j]);
                within_pairs += 1;
            }
        }
    }
    let (mut between, mut between_pairs) = (0.0, 0usize);
    for (ui, a) in units.iter().enumerate() {
        for b in &units[ui + 1..] {
            for &x in a {
                for &y in b {
                    between += delta(x, y);
                    between_pairs += 1;
                }
            }
        }
    }
    Ok(DriftDiagnostic {
        within_item: within / within_pairs as f64,
        between_item: between / between_pairs as f64,
    })
}

/// Items are (constraint, model) pairs, raters are judges, values are raw
/// (uncapped) scores on `scale`.
pub fn reliability_from_records(records: &[JudgeRecord], scale: ScaleKind) -> ReliabilityMatrix {
    ReliabilityMatrix::from_triples(
        records
            .iter()
            .filter(|r| r.scale == scale)
            .map(|r| (format!("{}|{}", r.constraint_id, r.model_id), r.judge_id.clone(), r.raw)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaReport {
    pub alpha: f64,
    pub n_items: usize,
    pub n_raters: usize,
    pub n_points: usize,
    pub within_item: f64,
    pub between_item: f64,
    pub metric: &'static str,
    pub scale: ScaleKind,
}

pub fn alpha_report(records: &[JudgeRecord], scale: ScaleKind) -> Result<AlphaReport> {
    let m = reliability_from_records(records, scale);
    let alpha = krippendorff_alpha(&m)?;
    let drift = drift_diagnostic(&m)?;
    let usable: Vec<Vec<f64>> = m.units().into_iter().filter(|u| u.len() >= 2).collect();
    Ok(AlphaReport {
        alpha,
        n_items: usable.len(),
        n_raters: m.raters.len(),
        n_points: usable.iter().map(Vec::len).sum(),
        within_item: drift.within_item,
        between_item: drift.between_item,
        metric: "interval",
        scale,
    })
}

/// 1-based ranks; tied values share their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::ConstantSequence);
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

/// One point of the sensitivity grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub scale: ScaleKind,
    pub aggregation: Aggregation,
    pub scheme: CompositeScheme,
}

impl ScoringConfig {
    pub const MAIN: ScoringConfig = ScoringConfig {
        scale: ScaleKind::SixPoint,
        aggregation: Aggregation::SoftMean,
        scheme: CompositeScheme::MAIN,
    };

    pub fn id(&self) -> String {
        self.to_string()
    }

    /// The sensitivity grid used when none is given. The exact set of
    /// configurations behind the published sensitivity study is not known,
    /// so this is a reconstruction.
    pub fn default_grid() -> Vec<ScoringConfig> {
        use Aggregation::*;
        use CompositeScheme as S;
        use ScaleKind::*;
        let mut grid = Vec::new();
        for scale in [SixPoint, ThreeTier] {
            for aggregation in [SoftMean, Bucket] {
                for lambda in [1.0, 0.5, 1.5] {
                    grid.push(ScoringConfig { scale, aggregation, scheme: S::C { lambda } });
                }
            }
        }
        for aggregation in [SoftMean, Bucket] {
            for scheme in [S::A, S::D] {
                grid.push(ScoringConfig { scale: SixPoint, aggregation, scheme });
            }
        }
        grid.push(ScoringConfig { scale: ThreeTier, aggregation: Bucket, scheme: S::B });
        grid
    }

    /// Parses a comma-separated list of ids, or `default`.
    pub fn parse_list(s: &str) -> Result<Vec<ScoringConfig>> {
        if s.trim() == "default" {
            return Ok(Self::default_grid());
        }
        let configs = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<ScoringConfig>>>()?;
        if configs.is_empty() {
            return Err(Error::Config("empty configuration list".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &configs {
            if !seen.insert(c.id()) {
                return Err(Error::Config(format!("configuration {c} listed twice")));
            }
        }
        Ok(configs)
    }
}

impl fmt::Display for ScoringConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let scale = match self.scale {
            ScaleKind::SixPoint => "6pt",
            ScaleKind::ThreeTier => "3tier",
        };
        let agg = match self.aggregation {
            Aggregation::SoftMean => "soft",
            Aggregation::Bucket => "bucket",
        };
        write!(f, "{scale}-{agg}-{}", self.scheme)
    }
}

impl FromStr for ScoringConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad configuration id {s:?}; expected e.g. 6pt-soft-C1.0"));
        let mut parts = s.splitn(3, '-');
        let (Some(scale), Some(agg), Some(scheme)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let aggregation = match agg {
            "soft" | "soft_mean" => Aggregation::SoftMean,
            "bucket" => Aggregation::Bucket,
            _ => return Err(bad()),
        };
        Ok(ScoringConfig { scale: scale.parse()?, aggregation, scheme: scheme.parse()? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessMatrix {
    pub configs: Vec<String>,
    /// Spearman rho between model totals; `None` when undefined (a
    /// configuration gives every model the same total).
    pub cells: Vec<Vec<Option<f64>>>,
}

impl RobustnessMatrix {
    pub fn get(&self, a: usize, b: usize) -> Option<f64> {
        self.cells[a][b]
    }
}

/// Pairwise rank correlation of model totals across configurations.
pub fn robustness_matrix(totals: &[(String, BTreeMap<String, f64>)]) -> Result<RobustnessMatrix> {
    let Some((first_id, first)) = totals.first() else {
        return Err(Error::TooFew { what: "configurations", needed: 1, found: 0 });
    };
    let models: Vec<&String> = first.keys().collect();
    for (id, t) in totals {
        if t.keys().ne(first.keys()) {
            return Err(Error::ModelSetMismatch(first_id.clone(), id.clone()));
        }
    }
    let vectors: Vec<Vec<f64>> = totals
        .iter()
        .map(|(_, t)| models.iter().map(|m| t[*m]).collect())
        .collect();
    let n = totals.len();
    let mut cells = vec![vec![None; n]; n];
    for i in 0..n {
        cells[i][i] = Some(1.0);
        for j in i + 1..n {
            let rho = spearman(&vectors[i], &vectors[j]).ok();
            cells[i][j] = rho;
            cells[j][i] = rho;
        }
    }
    Ok(RobustnessMatrix {
        configs: totals.iter().map(|(id, _)| id.clone()).collect(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pairwise-enumeration alpha, independent of the coincidence matrix.
    fn alpha_by_pairs(units: &[Vec<f64>]) -> Option<f64> {
        let usable: Vec<&Vec<f64>> = units.iter().filter(|u| u.len() >= 2).collect();
        let n: usize = usable.iter().map(|u| u.len()).sum();
        let mut d_o = 0.0;
        for u in &usable {
            let mut s = 0.0;
            for i in 0..u.len() {
                for j in 0..u.len() {
                    if i != j {
                        s += (u[i] - u[j]).powi(2);
                    }
                }
            }
            d_o += s / (u.len() - 1) as f64;
        }
        d_o /= n as f64;
        let all: Vec<f64> = usable.iter().flat_map(|u| u.iter().copied()).collect();
        let mut d_e = 0.0;
        for i in 0..all.len() {
            for j in 0..all.len() {
                if i != j {
                    d_e += (all[i] - all[j]).powi(2);
                }
            }
        }
        d_e /= (n * (n - 1)) as f64;
        (d_e > 0.0).then(|| 1.0 - d_o / d_e)
    }

    fn matrix(rows: &[&[Option<f64>]]) -> ReliabilityMatrix {
        let mut triples = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            for (r, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    triples.push((format!("item{i}"), format!("r{r}"), *v));
                }
            }
        }
        ReliabilityMatrix::from_triples(triples)
    }

    #[test]
    fn hand_matrix_matches_pair_oracle() {
        let m = matrix(&[
            &[Some(0.0), Some(0.0)],
            &[Some(1.0), Some(1.0)],
            &[Some(2.0), Some(3.0)],
            &[Some(5.0), Some(5.0)],
        ]);
        let a = krippendorff_alpha(&m).unwrap();
        let oracle = alpha_by_pairs(&m.units()).unwrap();
        assert!((a - oracle).abs() < 1e-9);
        // D_o = 2/8, D_e = 462/56.
        assert!((a - (1.0 - 0.25 / 8.25)).abs() < 1e-12);
    }

    #[test]
    fn perfect_agreement_is_exactly_one() {
        let rows: Vec<Vec<Option<f64>>> =
            (0..5).map(|i| vec![Some(f64::from(i % 3)); 3]).collect();
        let refs: Vec<&[Option<f64>]> = rows.iter().map(Vec::as_slice).collect();
        assert_eq!(krippendorff_alpha(&matrix(&refs)).unwrap(), 1.0);
    }

    #[test]
    fn constant_matrix_has_no_expected_disagreement() {
        let rows: Vec<Vec<Option<f64>>> = (0..240).map(|_| vec![Some(3.0); 3]).collect();
        let refs: Vec<&[Option<f64>]> = rows.iter().map(Vec::as_slice).collect();
        assert!(matches!(krippendorff_alpha(&matrix(&refs)), Err(Error::ZeroExpectedDisagreement)));
    }

    #[test]
    fn alpha_needs_two_raters_and_two_items() {
        assert!(matches!(
            krippendorff_alpha(&matrix(&[&[Some(1.0)], &[Some(2.0)]])),
            Err(Error::TooFew { what: "raters", .. })
        ));
        assert!(matches!(
            krippendorff_alpha(&matrix(&[&[Some(1.0), Some(2.0)], &[Some(2.0), None]])),
            Err(Error::TooFew { .. })
        ));
    }

    #[test]
    fn drift_examples() {
        let agree = matrix(&[&[Some(1.0), Some(1.0)], &[Some(4.0), Some(4.0)]]);
        assert_eq!(drift_diagnostic(&agree).unwrap().within_item, 0.0);

        // Judge B is judge A shifted by one; judge C agrees with A.
        let a = [0.0, 2.0, 3.0, 1.0];
        let rows: Vec<Vec<Option<f64>>> = a.iter().map(|&x| vec![Some(x), Some(x + 1.0), Some(x)]).collect();
        let refs: Vec<&[Option<f64>]> = rows.iter().map(Vec::as_slice).collect();
        let d = drift_diagnostic(&matrix(&refs)).unwrap();
        assert!((d.within_item - 2.0 / 3.0).abs() < 1e-12);

        // Brute-force oracle for the between-item value.
        let mut s = 0.0;
        let mut n = 0;
        for (i, ri) in rows.iter().enumerate() {
            for rj in &rows[i + 1..] {
                for x in ri.iter().flatten() {
                    for y in rj.iter().flatten() {
                        s += (x - y) * (x - y);
                        n += 1;
                    }
                }
            }
        }
        assert!((d.between_item - s / n as f64).abs() < 1e-12);
    }

    #[test]
    fn drift_needs_two_items() {
        assert!(drift_diagnostic(&matrix(&[&[Some(1.0), Some(2.0)]])).is_err());
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &x).unwrap(), 1.0);
        assert_eq!(spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((spearman(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(spearman(&x, &[1.0, 2.0]), Err(Error::LengthMismatch(4, 2))));
        assert!(matches!(spearman(&x, &[2.0; 4]), Err(Error::ConstantSequence)));
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn robustness_examples() {
        let t = |v: &[f64]| -> BTreeMap<String, f64> {
            v.iter().enumerate().map(|(i, &x)| (format!("m{i}"), x)).collect()
        };
        let m = robustness_matrix(&[("a".into(), t(&[1.0, 2.0, 3.0])), ("b".into(), t(&[1.0, 2.0, 3.0]))]).unwrap();
        assert_eq!(m.get(0, 1), Some(1.0));
        let m = robustness_matrix(&[("a".into(), t(&[1.0, 2.0, 3.0])), ("b".into(), t(&[3.0, 2.0, 1.0]))]).unwrap();
        assert_eq!(m.get(1, 0), Some(-1.0));
        let m = robustness_matrix(&[("a".into(), t(&[1.0, 2.0]))]).unwrap();
        assert_eq!(m.cells, vec![vec![Some(1.0)]]);

        let grid: Vec<(String, BTreeMap<String, f64>)> = (0..14)
            .map(|i| (format!("c{i}"), t(&[1.0, f64::from(i), 7.0, 3.0])))
            .collect();
        let m = robustness_matrix(&grid).unwrap();
        assert_eq!(m.cells.len(), 14);
        let off_diagonal = (0..14).flat_map(|i| (i + 1..14).map(move |j| (i, j))).count();
        assert_eq!(off_diagonal, 91);

        let mut other = t(&[1.0, 2.0, 3.0]);
        other.insert("extra".into(), 1.0);
        assert!(matches!(
            robustness_matrix(&[("a".into(), t(&[1.0, 2.0, 3.0])), ("b".into(), other)]),
            Err(Error::ModelSetMismatch(..))
        ));
    }

    #[test]
    fn default_grid_ids_parse_back() {
        let grid = ScoringConfig::default_grid();
        assert_eq!(grid.len(), 17);
        assert_eq!(grid[0], ScoringConfig::MAIN);
        let ids: Vec<String> = grid.iter().map(ScoringConfig::id).collect();
        assert_eq!(ScoringConfig::parse_list(&ids.join(",")).unwrap(), grid);
        assert!(ids.contains(&"3tier-bucket-B".to_string()));
        assert!(ScoringConfig::parse_list("6pt-soft-C1.0,6pt-soft-C1.0").is_err());
        assert!(ScoringConfig::parse_list("7pt-soft-A").is_err());
    }

    fn fuzzed_matrix() -> impl Strategy<Value = Vec<Vec<Option<u8>>>> {
        proptest::collection::vec(proptest::collection::vec(proptest::option::weighted(0.8, 0u8..=5), 3), 1..=6)
    }

    proptest! {
        #[test]
        fn coincidence_alpha_matches_pair_oracle(rows in fuzzed_matrix()) {
            let rows: Vec<Vec<Option<f64>>> = rows
                .into_iter()
                .map(|r| r.into_iter().map(|v| v.map(f64::from)).collect())
                .collect();
            let refs: Vec<&[Option<f64>]> = rows.iter().map(Vec::as_slice).collect();
            let m = matrix(&refs);
            match krippendorff_alpha(&m) {
                Ok(a) => {
                    let o = alpha_by_pairs(&m.units()).unwrap();
                    prop_assert!((a - o).abs() < 1e-9, "{} vs {}", a, o);
                }
                Err(Error::ZeroExpectedDisagreement) => prop_assert!(alpha_by_pairs(&m.units()).is_none()),
                Err(_) => {}
            }
        }

        #[test]
        fn alpha_ignores_rater_and_item_order(rows in fuzzed_matrix()) {
            let rows: Vec<Vec<Option<f64>>> = rows
                .into_iter()
                .map(|r| r.into_iter().map(|v| v.map(f64::from)).collect())
                .collect();
            let refs: Vec<&[Option<f64>]> = rows.iter().map(Vec::as_slice).collect();
            let a = krippendorff_alpha(&matrix(&refs));
            let shuffled: Vec<Vec<Option<f64>>> = rows
                .iter()
                .rev()
                .map(|r| r.iter().rev().copied().collect())
                .collect();
            let refs: Vec<&[Option<f64>]> = shuffled.iter().map(Vec::as_slice).collect();
            let b = krippendorff_alpha(&matrix(&refs));
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn spearman_is_rank_invariant(
            pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..20)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(r) = spearman(&x, &y) {
                let fx: Vec<f64> = x.iter().map(|v| v * 3.0 + 7.0).collect();
                let gy: Vec<f64> = y.iter().map(|v| v.powi(3)).collect();
                prop_assert!((spearman(&fx, &gy).unwrap() - r).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
