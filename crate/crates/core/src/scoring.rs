//! Composite scores: group satisfy and group surprise are combined per group
//! and summed into a model total.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::testset::GroupId;

/// Composite formula family. `C` is the main scheme; `A`, `B` and `D` are the
/// ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum CompositeScheme {
    /// `s^1.5 * u`
    A,
    /// harmonic mean, zero if either side is zero
    B,
    /// `s * (1 + lambda * u)`
    C { lambda: f64 },
    /// `sqrt(s * u)`
    D,
}

impl CompositeScheme {
    pub const MAIN: CompositeScheme = CompositeScheme::C { lambda: 1.0 };

    pub fn lambda(&self) -> Option<f64> {
        match self {
            CompositeScheme::C { lambda } => Some(*lambda),
            _ => None,
        }
    }
}

impl fmt::Display for CompositeScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompositeScheme::A => f.write_str("A"),
            CompositeScheme::B => f.write_str("B"),
            CompositeScheme::C { lambda } if (lambda * 10.0).fract() == 0.0 => {
                write!(f, "C{lambda:.1}")
            }
            CompositeScheme::C { lambda } => write!(f, "C{lambda}"),
            CompositeScheme::D => f.write_str("D"),
        }
    }
}

impl FromStr for CompositeScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(CompositeScheme::A),
            "B" => Ok(CompositeScheme::B),
            "D" => Ok(CompositeScheme::D),
            "C" => Ok(CompositeScheme::MAIN),
            _ => {
                let lambda: f64 = s
                    .strip_prefix('C')
                    .and_then(|l| l.parse().ok())
                    .ok_or_else(|| Error::Config(format!("unknown composite scheme {s:?}")))?;
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::Config(format!("lambda must be > 0, got {lambda}")));
                }
                Ok(CompositeScheme::C { lambda })
            }
        }
    }
}

impl From<CompositeScheme> for String {
    fn from(s: CompositeScheme) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for CompositeScheme {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Combines satisfy `s` and surprise `u`, both in [0, 1].
///
/// Each formula is written as a chain of individually monotone float
/// operations, so monotonicity holds exactly, not just up to rounding.
pub fn composite(s: f64, u: f64, scheme: CompositeScheme) -> f64 {
    debug_assert!((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&u));
    match scheme {
        CompositeScheme::C { lambda } => s * (1.0 + lambda * u),
        CompositeScheme::A => s * s.sqrt() * u,
        CompositeScheme::B => {
            if s == 0.0 || u == 0.0 {
                0.0
            } else {
                2.0 / (1.0 / s + 1.0 / u)
            }
        }
        CompositeScheme::D => (s * u).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupScore {
    pub model_id: String,
    pub group_id: GroupId,
    pub satisfy: f64,
    pub surprise: f64,
    pub composite: f64,
}

impl GroupScore {
    pub fn new(model_id: &str, group_id: GroupId, satisfy: f64, surprise: f64, scheme: CompositeScheme) -> Self {
        GroupScore {
            model_id: model_id.to_string(),
            group_id,
            satisfy,
            surprise,
            composite: composite(satisfy, surprise, scheme),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelTotal {
    pub model_id: String,
    pub total: f64,
    pub satisfy_mean: f64,
    pub surprise_mean: f64,
    /// 0 until ranked by [`leaderboard`].
    pub rank: usize,
    /// Composite per group, in test-set group order.
    pub groups: Vec<GroupScore>,
}

/// Sums one model's group composites over `groups` (test-set order).
pub fn model_total(model_id: &str, scores: &[GroupScore], groups: &[GroupId]) -> Result<ModelTotal> {
    let mut ordered = Vec::with_capacity(groups.len());
    for &g in groups {
        let s = scores
            .iter()
            .find(|s| s.group_id == g && s.model_id == model_id)
            .ok_or_else(|| Error::MissingGroup { model: model_id.to_string(), group: g })?;
        ordered.push(s.clone());
    }
    let n = ordered.len().max(1) as f64;
    Ok(ModelTotal {
        model_id: model_id.to_string(),
        total: ordered.iter().map(|s| s.composite).sum(),
        satisfy_mean: ordered.iter().map(|s| s.satisfy).sum::<f64>() / n,
        surprise_mean: ordered.iter().map(|s| s.surprise).sum::<f64>() / n,
        rank: 0,
        groups: ordered,
    })
}

fn leaderboard_order(a: &ModelTotal, b: &ModelTotal) -> Ordering {
    b.total
        .total_cmp(&a.total)
        .then_with(|| b.satisfy_mean.total_cmp(&a.satisfy_mean))
        .then_with(|| a.model_id.cmp(&b.model_id))
}

/// Sorts by total (descending), then satisfy mean (descending), then model
/// id, and assigns ranks 1..n.
pub fn leaderboard(mut totals: Vec<ModelTotal>) -> Vec<ModelTotal> {
    totals.sort_by(leaderboard_order);
    for (i, t) in totals.iter_mut().enumerate() {
        t.rank = i + 1;
    }
    totals
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const C1: CompositeScheme = CompositeScheme::MAIN;

    fn total(id: &str, total: f64, satisfy_mean: f64) -> ModelTotal {
        ModelTotal {
            model_id: id.into(),
            total,
            satisfy_mean,
            surprise_mean: 0.0,
            rank: 0,
            groups: vec![],
        }
    }

    #[test]
    fn scheme_c_corners() {
        assert_eq!(composite(1.0, 0.0, C1), 1.0);
        assert_eq!(composite(0.0, 1.0, C1), 0.0);
        assert_eq!(composite(1.0, 1.0, C1), 2.0);
    }

    #[test]
    fn scheme_c_table_cell() {
        assert!((composite(0.92, 0.470, C1) - 1.3524).abs() < 1e-12);
    }

    #[test]
    fn ablation_schemes() {
        assert_eq!(composite(0.5, 0.0, CompositeScheme::B), 0.0);
        assert_eq!(composite(0.25, 1.0, CompositeScheme::D), 0.5);
        assert!((composite(0.25, 1.0, CompositeScheme::A) - 0.125).abs() < 1e-15);
        assert!((composite(0.5, 0.5, CompositeScheme::B) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn scheme_ids_round_trip() {
        for s in ["A", "B", "D", "C0.5", "C1.0", "C1.5"] {
            assert_eq!(s.parse::<CompositeScheme>().unwrap().to_string(), s);
        }
        assert!("C0".parse::<CompositeScheme>().is_err());
        assert!("E".parse::<CompositeScheme>().is_err());
    }

    #[test]
    fn model_total_max_is_two_per_group() {
        let groups: Vec<GroupId> = (1..=7).collect();
        let scores: Vec<_> = groups.iter().map(|&g| GroupScore::new("m", g, 1.0, 1.0, C1)).collect();
        let t = model_total("m", &scores, &groups).unwrap();
        assert_eq!(t.total, 14.0);
        assert_eq!(t.satisfy_mean, 1.0);
    }

    #[test]
    fn model_total_needs_every_group() {
        let scores = vec![GroupScore::new("m", 1, 0.5, 0.5, C1)];
        assert!(matches!(
            model_total("m", &scores, &[1, 2]),
            Err(Error::MissingGroup { group: 2, .. })
        ));
    }

    #[test]
    fn leaderboard_sorts_descending() {
        let lb = leaderboard(vec![total("a", 6.44, 0.5), total("b", 8.69, 0.7), total("c", 8.44, 0.7)]);
        let ids: Vec<_> = lb.iter().map(|t| t.model_id.as_str()).collect();
        assert_eq!(ids, ["b", "c", "a"]);
        assert_eq!(lb.iter().map(|t| t.rank).collect::<Vec<_>>(), [1, 2, 3]);
    }

    #[test]
    fn leaderboard_breaks_ties_by_satisfy_then_id() {
        let lb = leaderboard(vec![
            total("Claude-Kaiku-4.5", 8.03, 0.686),
            total("GPT-5.4-mini", 8.03, 0.726),
        ]);
        assert_eq!(lb[0].model_id, "GPT-5.4-mini");
        let lb = leaderboard(vec![total("b", 1.0, 0.5), total("a", 1.0, 0.5)]);
        assert_eq!(lb[0].model_id, "a");
        assert_eq!(leaderboard(vec![total("solo", 0.0, 0.0)])[0].rank, 1);
    }

    const SCHEMES: [CompositeScheme; 6] = [
        CompositeScheme::A,
        CompositeScheme::B,
        CompositeScheme::C { lambda: 0.5 },
        CompositeScheme::C { lambda: 1.0 },
        CompositeScheme::C { lambda: 1.5 },
        CompositeScheme::D,
    ];

    proptest! {
        #[test]
        fn zero_gating_and_monotonicity(s in 0.0f64..=1.0, u in 0.0f64..=1.0, ds in 0.0f64..=1.0, du in 0.0f64..=1.0) {
            let s2 = (s + ds).min(1.0);
            let u2 = (u + du).min(1.0);
            for scheme in SCHEMES {
                prop_assert_eq!(composite(0.0, u, scheme), 0.0);
                prop_assert!(composite(s2, u, scheme) >= composite(s, u, scheme));
                prop_assert!(composite(s, u2, scheme) >= composite(s, u, scheme));
            }
        }

        #[test]
        fn scheme_c_is_linear_in_lambda(s in 0.0f64..=1.0, u in 0.0f64..=1.0, lambda in 0.01f64..3.0) {
            let c = composite(s, u, CompositeScheme::C { lambda });
            prop_assert!((c - (s + lambda * s * u)).abs() < 1e-12);
            prop_assert_eq!(composite(s, 0.0, CompositeScheme::C { lambda }), s);
            prop_assert!(c <= 1.0 + lambda);
        }
    }
}
