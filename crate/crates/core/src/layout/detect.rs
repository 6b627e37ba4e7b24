use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::graph::{runs, sibling_relation};
use super::{
    BoundingBox, LayoutSnapshot, Relation, ResponsiveLayoutGraph, RlfRecord, RlfType, WidthRange,
    EDGE_TOLERANCE,
};

pub const DEFAULT_SMALL_RANGE_THRESHOLD: u32 = 5;

/// Classifies responsive layout failures from a graph.
///
/// Every non-small-range predicate must be false at the widest sampled width;
/// a relationship that already holds there is taken as the intended design.
/// Output is sorted by type, smallest participant xpath, then range start.
pub fn detect_rlfs(rlg: &ResponsiveLayoutGraph, small_range_threshold: u32) -> Vec<RlfRecord> {
    let widths = rlg.widths();
    let snaps: Vec<&LayoutSnapshot> = widths
        .iter()
        .map(|w| rlg.snapshot(*w).expect("width has a snapshot"))
        .collect();
    let widest = *widths.last().expect("graph has widths");
    let last = widths.len() - 1;
    let mut out = Vec::new();

    // Collisions come straight from overlapping sibling edges.
    let mut overlaps: BTreeMap<(&str, &str), Vec<WidthRange>> = BTreeMap::new();
    for e in rlg.sibling_edges() {
        if e.relation == Relation::Overlapping {
            overlaps
                .entry((e.first.as_str(), e.second.as_str()))
                .or_default()
                .push(e.range);
        }
    }
    for ((a, b), ranges) in overlaps {
        if ranges.iter().any(|r| r.contains(widest)) {
            continue;
        }
        for r in ranges {
            out.push(RlfRecord::new(
                RlfType::ElementCollision,
                vec![a.to_string(), b.to_string()],
                r,
            ));
        }
    }

    // Containment: a parent/child pair present at a width without a
    // containment edge there is a protrusion.
    let mut contained: BTreeMap<(&str, &str), Vec<WidthRange>> = BTreeMap::new();
    for e in rlg.containment_edges() {
        contained
            .entry((e.parent.as_str(), e.child.as_str()))
            .or_default()
            .push(e.range);
    }
    let mut protrusion_hits: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    let mut viewport_hits: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, snap) in snaps.iter().enumerate() {
        let w = widths[i];
        for node in snap.nodes() {
            if is_viewport_protrusion(snap, &node.xpath) {
                viewport_hits.entry(node.xpath.as_str()).or_default().push(i);
            }
        }
        for (child, parent) in snap.parent_map() {
            if snap.visible_box(child).is_none() || snap.visible_box(parent).is_none() {
                continue;
            }
            let inside = contained
                .get(&(parent.as_str(), child.as_str()))
                .is_some_and(|rs| rs.iter().any(|r| r.contains(w)));
            if !inside && !escapes_viewport(snap, child) {
                protrusion_hits
                    .entry((child.as_str(), parent.as_str()))
                    .or_default()
                    .push(i);
            }
        }
    }
    for ((child, parent), hits) in protrusion_hits {
        if hits.last() == Some(&last) {
            continue;
        }
        for r in runs(&hits, widths) {
            out.push(RlfRecord::new(
                RlfType::ElementProtrusion,
                vec![child.to_string(), parent.to_string()],
                r,
            ));
        }
    }
    for (xpath, hits) in viewport_hits {
        if hits.last() == Some(&last) {
            continue;
        }
        for r in runs(&hits, widths) {
            out.push(RlfRecord::new(
                RlfType::ViewportProtrusion,
                vec![xpath.to_string()],
                r,
            ));
        }
    }

    // Small ranges: a sibling relation confined to a short run whose two
    // flanking samples both show the pair in some other relation. The extent
    // is bounded by the flanking samples, so only densely sampled runs
    // qualify.
    for e in rlg.sibling_edges() {
        let i = widths.binary_search(&e.range.min).expect("edge width sampled");
        let j = widths.binary_search(&e.range.max).expect("edge width sampled");
        if i == 0 || j == last {
            continue;
        }
        let (before, after) = (snaps[i - 1], snaps[j + 1]);
        let flank_ok = |s: &LayoutSnapshot| {
            pair_relation(s, &e.first, &e.second).is_some_and(|rel| rel != (e.relation, true))
        };
        if !flank_ok(before) || !flank_ok(after) {
            continue;
        }
        let extent = widths[j + 1] - widths[i - 1] - 1;
        if extent <= small_range_threshold {
            let mut pair = vec![e.first.clone(), e.second.clone()];
            pair.sort();
            out.push(RlfRecord::new(RlfType::SmallRange, pair, e.range));
        }
    }

    // Wrapping: rows are read off the widest snapshot.
    let rows = rows_of(rlg.widest());
    for row in &rows {
        for member in &row.members {
            let hits: Vec<usize> = snaps
                .iter()
                .enumerate()
                .filter(|(_, s)| wrap_drop(s, row, member).is_some())
                .map(|(i, _)| i)
                .collect();
            if hits.last() == Some(&last) {
                continue;
            }
            for r in runs(&hits, widths) {
                out.push(RlfRecord::new(
                    RlfType::WrappingElements,
                    vec![member.clone()],
                    r,
                ));
            }
        }
    }

    out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    out.dedup();
    out
}

/// Relation of an unordered sibling pair at one snapshot. The boolean is true
/// when the relation is oriented `(first, second)` as given.
fn pair_relation(snap: &LayoutSnapshot, first: &str, second: &str) -> Option<(Relation, bool)> {
    let fb = snap.visible_box(first)?;
    let sb = snap.visible_box(second)?;
    let (fp, sp) = (snap.parent_of(first)?, snap.parent_of(second)?);
    if fp != sp || snap.visible_box(fp).is_none() {
        return None;
    }
    let (a, b) = if first <= second {
        (first, second)
    } else {
        (second, first)
    };
    let (ab, bb) = if first <= second { (fb, sb) } else { (sb, fb) };
    let (f, _, rel) = sibling_relation(a, ab, b, bb);
    Some((rel, f == first))
}

fn escapes_viewport(snap: &LayoutSnapshot, xpath: &str) -> bool {
    snap.visible_box(xpath)
        .is_some_and(|b| b.viewport_exceedance(snap.viewport_width() as f64) > 0.0)
}

/// Outermost element that escapes the viewport; descendants dragged along by
/// an escaping ancestor are not reported separately.
fn is_viewport_protrusion(snap: &LayoutSnapshot, xpath: &str) -> bool {
    escapes_viewport(snap, xpath)
        && !snap
            .parent_of(xpath)
            .is_some_and(|p| escapes_viewport(snap, p))
}

#[derive(Debug, Clone)]
pub(crate) struct Row {
    pub parent: String,
    pub members: Vec<String>,
}

fn same_row(a: &BoundingBox, b: &BoundingBox) -> bool {
    let v_overlap = a.bottom().min(b.bottom()) - a.y.max(b.y);
    let h_overlap = a.right().min(b.right()) - a.x.max(b.x);
    v_overlap > EDGE_TOLERANCE && h_overlap <= EDGE_TOLERANCE
}

/// Groups of three or more siblings laid out side by side, as connected
/// components of the "shares a row" relation.
pub(crate) fn rows_of(snap: &LayoutSnapshot) -> Vec<Row> {
    let mut rows = Vec::new();
    for (parent, kids) in snap.sibling_groups() {
        let n = kids.len();
        let mut comp: Vec<usize> = (0..n).collect();
        fn find(c: &mut [usize], i: usize) -> usize {
            let mut r = i;
            while c[r] != r {
                r = c[r];
            }
            c[i] = r;
            r
        }
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (
                    snap.visible_box(kids[i]).unwrap(),
                    snap.visible_box(kids[j]).unwrap(),
                );
                if same_row(a, b) {
                    let (ri, rj) = (find(&mut comp, i), find(&mut comp, j));
                    comp[ri.max(rj)] = ri.min(rj);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for i in 0..n {
            let r = find(&mut comp, i);
            groups.entry(r).or_default().push(kids[i].to_string());
        }
        for members in groups.into_values() {
            if members.len() >= 3 {
                rows.push(Row {
                    parent: parent.to_string(),
                    members,
                });
            }
        }
    }
    rows
}

/// Vertical drop of `member` below its row at this snapshot, if it has
/// wrapped: it sits at least its own height below the row's top while two
/// other row members still share a row.
pub(crate) fn wrap_drop(snap: &LayoutSnapshot, row: &Row, member: &str) -> Option<f64> {
    let present: Vec<(&str, &BoundingBox)> = row
        .members
        .iter()
        .filter(|m| snap.parent_of(m) == Some(row.parent.as_str()))
        .filter_map(|m| snap.visible_box(m).map(|b| (m.as_str(), b)))
        .collect();
    if present.len() < 3 {
        return None;
    }
    let mb = present.iter().find(|(m, _)| *m == member)?.1;
    let row_top = present
        .iter()
        .map(|(_, b)| b.y)
        .fold(f64::INFINITY, f64::min);
    let drop = mb.y - row_top;
    if drop < mb.height - EDGE_TOLERANCE || drop <= 0.0 {
        return None;
    }
    let others: Vec<&BoundingBox> = present
        .iter()
        .filter(|(m, _)| *m != member)
        .map(|(_, b)| *b)
        .collect();
    let still_row = others
        .iter()
        .enumerate()
        .any(|(i, a)| others[i + 1..].iter().any(|b| same_row(a, b)));
    still_row.then_some(drop)
}

/// How strongly `record`'s failure shows in `snapshot` (0 when absent).
///
/// Units depend on the type: overlap area for collisions, overhang in px for
/// protrusions, vertical drop for wrapping, 1 for a small-range relation.
pub fn failure_magnitude(
    record: &RlfRecord,
    snapshot: &LayoutSnapshot,
    rlg: &ResponsiveLayoutGraph,
) -> f64 {
    let p = &record.participants;
    match record.rlf_type {
        RlfType::ElementCollision => {
            match pair_relation(snapshot, &p[0], &p[1]) {
                Some((Relation::Overlapping, _)) => {}
                _ => return 0.0,
            }
            let a = snapshot.visible_box(&p[0]).unwrap();
            let b = snapshot.visible_box(&p[1]).unwrap();
            a.intersection_area(b)
        }
        RlfType::ElementProtrusion => {
            let (child, parent) = (&p[0], &p[1]);
            if snapshot.parent_of(child) != Some(parent.as_str()) || escapes_viewport(snapshot, child)
            {
                return 0.0;
            }
            match (snapshot.visible_box(child), snapshot.visible_box(parent)) {
                (Some(c), Some(pb)) => c.exceedance(pb),
                _ => 0.0,
            }
        }
        RlfType::ViewportProtrusion => snapshot
            .visible_box(&p[0])
            .map(|b| b.viewport_exceedance(snapshot.viewport_width() as f64))
            .unwrap_or(0.0),
        RlfType::SmallRange => {
            let reference = rlg
                .snapshot(record.failure_range.min)
                .and_then(|s| pair_relation(s, &p[0], &p[1]));
            match (reference, pair_relation(snapshot, &p[0], &p[1])) {
                (Some(r), Some(now)) if r == now => 1.0,
                _ => 0.0,
            }
        }
        RlfType::WrappingElements => rows_of(rlg.widest())
            .iter()
            .find(|r| r.members.contains(&p[0]))
            .and_then(|row| wrap_drop(snapshot, row, &p[0]))
            .unwrap_or(0.0),
    }
}

/// Detection-relevant facts at one width: sibling relations plus every
/// per-element failure predicate. Two widths with equal fact sets cannot
/// hide a failure boundary between them other than a transient relation,
/// which is what width refinement bisects for.
pub fn width_facts(snapshot: &LayoutSnapshot, widest: &LayoutSnapshot) -> BTreeSet<String> {
    let mut facts = BTreeSet::new();
    for kids in snapshot.sibling_groups().values() {
        for (i, a) in kids.iter().enumerate() {
            for b in &kids[i + 1..] {
                let (f, s, rel) = sibling_relation(
                    a,
                    snapshot.visible_box(a).unwrap(),
                    b,
                    snapshot.visible_box(b).unwrap(),
                );
                facts.insert(format!("rel {f} {s} {rel:?}"));
            }
        }
    }
    for (child, parent) in snapshot.parent_map() {
        if let (Some(c), Some(p)) = (snapshot.visible_box(child), snapshot.visible_box(parent)) {
            if c.exceedance(p) > 0.0 && !escapes_viewport(snapshot, child) {
                facts.insert(format!("protrudes {child}"));
            }
        }
    }
    for node in snapshot.nodes() {
        if is_viewport_protrusion(snapshot, &node.xpath) {
            facts.insert(format!("viewport {}", node.xpath));
        }
    }
    for row in rows_of(widest) {
        for m in &row.members {
            if wrap_drop(snapshot, &row, m).is_some() {
                facts.insert(format!("wrapped {m}"));
            }
        }
    }
    facts
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RlfDiff {
    pub eliminated: Vec<RlfRecord>,
    pub introduced: Vec<RlfRecord>,
}

/// Records of `baseline` with no match in `current`, and vice versa.
pub fn diff_rlfs(baseline: &[RlfRecord], current: &[RlfRecord]) -> RlfDiff {
    RlfDiff {
        eliminated: baseline
            .iter()
            .filter(|b| !current.iter().any(|c| c.matches(b)))
            .cloned()
            .collect(),
        introduced: current
            .iter()
            .filter(|c| !baseline.iter().any(|b| b.matches(c)))
            .cloned()
            .collect(),
    }
}
