use std::collections::{BTreeMap, BTreeSet};

use super::{
    BoundingBox, ContainmentEdge, LayoutError, LayoutSnapshot, Relation, ResponsiveLayoutGraph,
    SiblingEdge, WidthRange,
};

/// Builds the graph from snapshots taken at distinct widths. Edge ranges are
/// maximal runs of consecutive sampled widths over which a relationship holds.
pub fn build_rlg(snapshots: Vec<LayoutSnapshot>) -> Result<ResponsiveLayoutGraph, LayoutError> {
    if snapshots.len() < 2 {
        return Err(LayoutError::TooFewSnapshots(snapshots.len()));
    }
    let mut by_width = BTreeMap::new();
    for s in snapshots {
        let w = s.viewport_width();
        if by_width.insert(w, s).is_some() {
            return Err(LayoutError::DuplicateWidth(w));
        }
    }
    let widths: Vec<u32> = by_width.keys().copied().collect();

    let mut containment_hits: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    let mut sibling_hits: BTreeMap<(String, String, Relation), Vec<usize>> = BTreeMap::new();

    for (i, snap) in by_width.values().enumerate() {
        for (child, parent) in snap.parent_map() {
            let (Some(cb), Some(pb)) = (snap.visible_box(child), snap.visible_box(parent)) else {
                continue;
            };
            if cb.exceedance(pb) == 0.0 {
                containment_hits
                    .entry((parent.clone(), child.clone()))
                    .or_default()
                    .push(i);
            }
        }
        for kids in snap.sibling_groups().values() {
            for (ai, a) in kids.iter().enumerate() {
                for b in &kids[ai + 1..] {
                    let ab = snap.visible_box(a).expect("grouped nodes are visible");
                    let bb = snap.visible_box(b).expect("grouped nodes are visible");
                    let (first, second, rel) = sibling_relation(a, ab, b, bb);
                    sibling_hits
                        .entry((first.to_string(), second.to_string(), rel))
                        .or_default()
                        .push(i);
                }
            }
        }
    }

    let mut containment = Vec::new();
    for ((parent, child), hits) in containment_hits {
        for range in runs(&hits, &widths) {
            containment.push(ContainmentEdge {
                parent: parent.clone(),
                child: child.clone(),
                range,
            });
        }
    }
    let mut siblings = Vec::new();
    for ((first, second, relation), hits) in sibling_hits {
        for range in runs(&hits, &widths) {
            siblings.push(SiblingEdge {
                first: first.clone(),
                second: second.clone(),
                range,
                relation,
            });
        }
    }

    Ok(ResponsiveLayoutGraph {
        widths,
        snapshots: by_width,
        containment,
        siblings,
    })
}

/// Relation between two siblings, oriented so that `first` is the element on
/// the left (or on top). Overlapping pairs keep the given order.
pub(crate) fn sibling_relation<'a>(
    a: &'a str,
    ab: &BoundingBox,
    b: &'a str,
    bb: &BoundingBox,
) -> (&'a str, &'a str, Relation) {
    if ab.overlaps(bb) {
        return (a, b, Relation::Overlapping);
    }
    let a_left_gap = bb.x - ab.right();
    let b_left_gap = ab.x - bb.right();
    let a_above_gap = bb.y - ab.bottom();
    let b_above_gap = ab.y - bb.bottom();
    let h_sep = a_left_gap.max(b_left_gap);
    let v_sep = a_above_gap.max(b_above_gap);
    if h_sep >= v_sep {
        if a_left_gap >= b_left_gap {
            (a, b, Relation::LeftOf)
        } else {
            (b, a, Relation::LeftOf)
        }
    } else if a_above_gap >= b_above_gap {
        (a, b, Relation::Above)
    } else {
        (b, a, Relation::Above)
    }
}

/// Splits sorted sample indices into maximal consecutive runs.
pub(crate) fn runs(indices: &[usize], widths: &[u32]) -> Vec<WidthRange> {
    let mut out = Vec::new();
    let mut iter = indices.iter().copied().collect::<BTreeSet<_>>().into_iter();
    let Some(mut start) = iter.next() else {
        return out;
    };
    let mut prev = start;
    for i in iter {
        if i != prev + 1 {
            out.push(WidthRange::new(widths[start], widths[prev]));
            start = i;
        }
        prev = i;
    }
    out.push(WidthRange::new(widths[start], widths[prev]));
    out
}
