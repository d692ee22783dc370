use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fmt;

use serde::Serialize;

use super::{BlankId, GroupId, StorySegment, TestSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    BlankNumbering,
    DuplicateBlank,
    Alternation,
    DanglingBlank,
    GroupPartition,
    GroupOrder,
    EmptyGroup,
    NoConstraints,
    EmptyConstraint,
    DuplicateId,
    SelfEdge,
    DanglingEdge,
    Cycle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    /// Groups in dependency order; absent when the edge set has a cycle or
    /// dangling endpoints.
    pub topological_order: Option<Vec<GroupId>>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }

    fn push(&mut self, kind: FindingKind, message: String) {
        self.findings.push(Finding { kind, message });
    }
}

pub fn validate(ts: &TestSet) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_skeleton(ts, &mut report);
    check_groups(ts, &mut report);
    let edges_ok = check_edges(ts, &mut report);
    if edges_ok {
        report.topological_order = topological_order(ts);
    }
    report
}

fn check_skeleton(ts: &TestSet, report: &mut ValidationReport) {
    let mut seen = BTreeSet::new();
    let mut expected = 1;
    for seg in &ts.segments {
        let Some(k) = seg.blank_id() else { continue };
        if !seen.insert(k) {
            report.push(
                FindingKind::DuplicateBlank,
                format!("blank {k:02} appears more than once in the skeleton"),
            );
            continue;
        }
        if k != expected {
            report.push(
                FindingKind::BlankNumbering,
                format!("expected blank {expected:02} next in the skeleton, found {k:02}"),
            );
        }
        expected = k + 1;
    }

    for pair in ts.segments.windows(2) {
        let same_kind = matches!(
            (&pair[0], &pair[1]),
            (StorySegment::Blank { .. }, StorySegment::Blank { .. })
                | (StorySegment::Text { .. }, StorySegment::Text { .. })
        );
        if same_kind {
            let what = if pair[0].blank_id().is_some() {
                "two adjacent blanks with no fixed text between them"
            } else {
                "two adjacent fixed-text segments"
            };
            report.push(FindingKind::Alternation, what.to_string());
        }
    }
}

fn check_groups(ts: &TestSet, report: &mut ValidationReport) {
    let skeleton: BTreeSet<BlankId> = ts.blank_ids().into_iter().collect();
    let mut owner: BTreeMap<BlankId, GroupId> = BTreeMap::new();
    let mut group_ids = BTreeSet::new();
    let mut constraint_ids = BTreeSet::new();
    let mut prev_last: Option<BlankId> = None;

    for g in &ts.groups {
        let gid = g.group_id;
        if !group_ids.insert(gid) {
            report.push(FindingKind::DuplicateId, format!("group id {gid} is repeated"));
        }
        if g.blank_ids.is_empty() {
            report.push(FindingKind::EmptyGroup, format!("group {gid} has no blanks"));
        }
        if g.constraints.is_empty() {
            report.push(FindingKind::NoConstraints, format!("group {gid} has no constraints"));
        }
        for c in &g.constraints {
            if c.text.trim().is_empty() {
                report.push(
                    FindingKind::EmptyConstraint,
                    format!("constraint {} in group {gid} has empty text", c.constraint_id),
                );
            }
            if !constraint_ids.insert(c.constraint_id.as_str()) {
                report.push(
                    FindingKind::DuplicateId,
                    format!("constraint id {} is repeated", c.constraint_id),
                );
            }
        }
        for &k in &g.blank_ids {
            if !skeleton.contains(&k) {
                report.push(
                    FindingKind::DanglingBlank,
                    format!("group {gid} references blank {k:02}, which is not in the skeleton"),
                );
            }
            if let Some(other) = owner.insert(k, gid) {
                report.push(
                    FindingKind::GroupPartition,
                    format!("blank {k:02} belongs to both group {other} and group {gid}"),
                );
            }
        }
        let consecutive = g.blank_ids.windows(2).all(|w| w[1] == w[0] + 1);
        if !consecutive {
            report.push(
                FindingKind::GroupOrder,
                format!("group {gid} blanks are not consecutive and ascending"),
            );
        }
        if let (Some(prev), Some(&first)) = (prev_last, g.blank_ids.first()) {
            if first <= prev {
                report.push(
                    FindingKind::GroupOrder,
                    format!("group {gid} starts at blank {first:02}, before the previous group ends"),
                );
            }
        }
        if let Some(&last) = g.blank_ids.last() {
            prev_last = Some(last);
        }
    }

    for k in &skeleton {
        if !owner.contains_key(k) {
            report.push(
                FindingKind::GroupPartition,
                format!("blank {k:02} is not in any group"),
            );
        }
    }
}

/// Returns true when every edge endpoint exists (so a topological sort makes sense).
fn check_edges(ts: &TestSet, report: &mut ValidationReport) -> bool {
    let groups: BTreeSet<GroupId> = ts.group_ids().into_iter().collect();
    let mut endpoints_ok = true;
    for e in &ts.edges {
        if e.from_group == e.to_group {
            report.push(
                FindingKind::SelfEdge,
                format!("edge G{0} -> G{0} is a self-loop", e.from_group),
            );
        }
        for end in [e.from_group, e.to_group] {
            if !groups.contains(&end) {
                endpoints_ok = false;
                report.push(
                    FindingKind::DanglingEdge,
                    format!("edge G{} -> G{} references unknown group {end}", e.from_group, e.to_group),
                );
            }
        }
    }
    if !endpoints_ok {
        return false;
    }

    for component in cyclic_components(ts) {
        let names: Vec<String> = component.iter().map(|g| format!("G{g}")).collect();
        report.push(
            FindingKind::Cycle,
            format!("cascade edges form a cycle through {}", names.join(", ")),
        );
    }
    true
}

fn adjacency(ts: &TestSet) -> BTreeMap<GroupId, BTreeSet<GroupId>> {
    let mut adj: BTreeMap<GroupId, BTreeSet<GroupId>> =
        ts.group_ids().into_iter().map(|g| (g, BTreeSet::new())).collect();
    for e in &ts.edges {
        if e.from_group != e.to_group {
            adj.entry(e.from_group).or_default().insert(e.to_group);
        }
    }
    adj
}

fn reachable(adj: &BTreeMap<GroupId, BTreeSet<GroupId>>, from: GroupId) -> BTreeSet<GroupId> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![from];
    while let Some(n) = stack.pop() {
        for &m in adj.get(&n).into_iter().flatten() {
            if seen.insert(m) {
                stack.push(m);
            }
        }
    }
    seen
}

/// Strongly connected components of size > 1. Group counts are small, so
/// mutual reachability is computed directly.
fn cyclic_components(ts: &TestSet) -> Vec<BTreeSet<GroupId>> {
    let adj = adjacency(ts);
    let reach: BTreeMap<GroupId, BTreeSet<GroupId>> =
        adj.keys().map(|&g| (g, reachable(&adj, g))).collect();
    let mut assigned = BTreeSet::new();
    let mut out = Vec::new();
    for (&g, r) in &reach {
        if assigned.contains(&g) || !r.contains(&g) {
            continue;
        }
        let comp: BTreeSet<GroupId> = r
            .iter()
            .copied()
            .filter(|h| reach[h].contains(&g))
            .collect();
        assigned.extend(comp.iter().copied());
        out.push(comp);
    }
    out
}

/// Kahn's algorithm, smallest group id first among ready nodes.
fn topological_order(ts: &TestSet) -> Option<Vec<GroupId>> {
    let adj = adjacency(ts);
    let mut indegree: BTreeMap<GroupId, usize> = adj.keys().map(|&g| (g, 0)).collect();
    for targets in adj.values() {
        for t in targets {
            *indegree.get_mut(t)? += 1;
        }
    }
    let mut ready: BinaryHeap<Reverse<GroupId>> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&g, _)| Reverse(g))
        .collect();
    let mut order = Vec::with_capacity(adj.len());
    while let Some(Reverse(g)) = ready.pop() {
        order.push(g);
        for t in &adj[&g] {
            let d = indegree.get_mut(t)?;
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(*t));
            }
        }
    }
    (order.len() == adj.len()).then_some(order)
}
