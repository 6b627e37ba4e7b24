//! Exhaustive pairwise oracle for failure classification.
//!
//! The oracle walks every node, every node pair and every sampled width
//! straight from the snapshots, without going through graph edges, and must
//! agree exactly with `detect_rlfs` on small random layouts.

use std::collections::BTreeMap;

use proptest::prelude::*;
use redefix_core::layout::{BoundingBox, LayoutNode, LayoutSnapshot, RlfRecord, RlfType, WidthRange};

const TOL: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Rel {
    Left(bool),
    Above(bool),
    Overlap,
}

struct View<'a> {
    s: &'a LayoutSnapshot,
}

impl<'a> View<'a> {
    fn vis(&self, x: &str) -> Option<BoundingBox> {
        self.s
            .nodes()
            .iter()
            .find(|n| n.xpath == x && n.visible)
            .map(|n| n.bbox)
    }
    fn parent(&self, x: &str) -> Option<&'a str> {
        self.s.parent_map().get(x).map(|p| p.as_str())
    }
    fn w(&self) -> f64 {
        self.s.viewport_width() as f64
    }
    fn siblings(&self, a: &str, b: &str) -> bool {
        match (self.parent(a), self.parent(b)) {
            (Some(p), Some(q)) if p == q => {
                self.vis(a).is_some() && self.vis(b).is_some() && self.vis(p).is_some()
            }
            _ => false,
        }
    }
    fn escapes(&self, x: &str) -> bool {
        self.vis(x).is_some_and(|b| {
            let l = -b.x;
            let r = b.x + b.width - self.w();
            (if l > TOL { l } else { 0.0 }) + (if r > TOL { r } else { 0.0 }) > 0.0
        })
    }
}

fn inter(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x + a.width).min(b.x + b.width) - a.x.max(b.x);
    let h = (a.y + a.height).min(b.y + b.height) - a.y.max(b.y);
    if w > 0.0 && h > 0.0 {
        w * h
    } else {
        0.0
    }
}

fn exceed(c: &BoundingBox, p: &BoundingBox) -> f64 {
    let d = [
        p.x - c.x,
        (c.x + c.width) - (p.x + p.width),
        p.y - c.y,
        (c.y + c.height) - (p.y + p.height),
    ];
    d.iter().map(|v| if *v > TOL { *v } else { 0.0 }).sum()
}

/// Relation of (a, b) with a < b; the flag says whether `a` is the
/// left/upper element.
fn rel(a: &BoundingBox, b: &BoundingBox) -> Rel {
    if inter(a, b) > 1.0 {
        return Rel::Overlap;
    }
    let ar = a.x + a.width;
    let br = b.x + b.width;
    let ab = a.y + a.height;
    let bb = b.y + b.height;
    let h = (b.x - ar).max(a.x - br);
    let v = (b.y - ab).max(a.y - bb);
    if h >= v {
        Rel::Left(b.x - ar >= a.x - br)
    } else {
        Rel::Above(b.y - ab >= a.y - bb)
    }
}

fn same_row(a: &BoundingBox, b: &BoundingBox) -> bool {
    let v = (a.y + a.height).min(b.y + b.height) - a.y.max(b.y);
    let h = (a.x + a.width).min(b.x + b.width) - a.x.max(b.x);
    v > TOL && h <= TOL
}

fn runs_of(flags: &[bool], widths: &[u32]) -> Vec<WidthRange> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < flags.len() {
        if flags[i] {
            let start = i;
            while i + 1 < flags.len() && flags[i + 1] {
                i += 1;
            }
            out.push(WidthRange::new(widths[start], widths[i]));
        }
        i += 1;
    }
    out
}

pub fn oracle(snaps: &[LayoutSnapshot], threshold: u32) -> Vec<RlfRecord> {
    let mut snaps: Vec<&LayoutSnapshot> = snaps.iter().collect();
    snaps.sort_by_key(|s| s.viewport_width());
    let widths: Vec<u32> = snaps.iter().map(|s| s.viewport_width()).collect();
    let views: Vec<View> = snaps.iter().map(|s| View { s }).collect();
    let last = widths.len() - 1;
    let mut names: Vec<String> = snaps
        .iter()
        .flat_map(|s| s.nodes().iter().map(|n| n.xpath.clone()))
        .collect();
    names.sort();
    names.dedup();
    let mut out = Vec::new();
    let emit = |t: RlfType, parts: Vec<String>, flags: Vec<bool>, out: &mut Vec<RlfRecord>| {
        if flags[last] {
            return;
        }
        for r in runs_of(&flags, &widths) {
            out.push(RlfRecord::new(t, parts.clone(), r));
        }
    };

    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let flags: Vec<bool> = views
                .iter()
                .map(|v| {
                    v.siblings(a, b) && inter(&v.vis(a).unwrap(), &v.vis(b).unwrap()) > 1.0
                })
                .collect();
            emit(
                RlfType::ElementCollision,
                vec![a.clone(), b.clone()],
                flags,
                &mut out,
            );
        }
    }

    for c in &names {
        for p in &names {
            let flags: Vec<bool> = views
                .iter()
                .map(|v| {
                    v.parent(c) == Some(p.as_str())
                        && match (v.vis(c), v.vis(p)) {
                            (Some(cb), Some(pb)) => exceed(&cb, &pb) > 0.0 && !v.escapes(c),
                            _ => false,
                        }
                })
                .collect();
            emit(
                RlfType::ElementProtrusion,
                vec![c.clone(), p.clone()],
                flags,
                &mut out,
            );
        }
    }

    for n in &names {
        let flags: Vec<bool> = views
            .iter()
            .map(|v| v.escapes(n) && !v.parent(n).is_some_and(|p| v.escapes(p)))
            .collect();
        emit(RlfType::ViewportProtrusion, vec![n.clone()], flags, &mut out);
    }

    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let rels: Vec<Option<Rel>> = views
                .iter()
                .map(|v| {
                    v.siblings(a, b)
                        .then(|| rel(&v.vis(a).unwrap(), &v.vis(b).unwrap()))
                })
                .collect();
            let mut k = 0;
            while k < rels.len() {
                let Some(r) = rels[k] else {
                    k += 1;
                    continue;
                };
                let start = k;
                while k + 1 < rels.len() && rels[k + 1] == Some(r) {
                    k += 1;
                }
                if start > 0
                    && k < last
                    && rels[start - 1].is_some()
                    && rels[k + 1].is_some()
                    && widths[k + 1] - widths[start - 1] - 1 <= threshold
                {
                    out.push(RlfRecord::new(
                        RlfType::SmallRange,
                        vec![a.clone(), b.clone()],
                        WidthRange::new(widths[start], widths[k]),
                    ));
                }
                k += 1;
            }
        }
    }

    // Rows at the widest width.
    let top = &views[last];
    let mut by_parent: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for n in &names {
        if let Some(p) = top.parent(n) {
            if top.vis(n).is_some() && top.vis(p).is_some() {
                by_parent.entry(p).or_default().push(n);
            }
        }
    }
    for (parent, kids) in by_parent {
        // Flood fill components.
        let mut label = vec![usize::MAX; kids.len()];
        for s in 0..kids.len() {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = s;
            let mut stack = vec![s];
            while let Some(x) = stack.pop() {
                for y in 0..kids.len() {
                    if label[y] == usize::MAX
                        && same_row(&top.vis(kids[x]).unwrap(), &top.vis(kids[y]).unwrap())
                    {
                        label[y] = s;
                        stack.push(y);
                    }
                }
            }
        }
        let mut comps: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for (i, l) in label.iter().enumerate() {
            comps.entry(*l).or_default().push(kids[i]);
        }
        for row in comps.values().filter(|r| r.len() >= 3) {
            for m in row {
                let flags: Vec<bool> = views
                    .iter()
                    .map(|v| {
                        let present: Vec<(&str, BoundingBox)> = row
                            .iter()
                            .filter(|x| v.parent(x) == Some(parent))
                            .filter_map(|x| v.vis(x).map(|b| (*x, b)))
                            .collect();
                        if present.len() < 3 {
                            return false;
                        }
                        let Some((_, mb)) = present.iter().find(|(x, _)| x == m) else {
                            return false;
                        };
                        let row_y = present.iter().map(|(_, b)| b.y).fold(f64::MAX, f64::min);
                        let drop = mb.y - row_y;
                        if drop <= 0.0 || drop < mb.height - TOL {
                            return false;
                        }
                        let others: Vec<BoundingBox> = present
                            .iter()
                            .filter(|(x, _)| x != m)
                            .map(|(_, b)| *b)
                            .collect();
                        (0..others.len()).any(|i| {
                            (i + 1..others.len()).any(|j| same_row(&others[i], &others[j]))
                        })
                    })
                    .collect();
                emit(
                    RlfType::WrappingElements,
                    vec![m.to_string()],
                    flags,
                    &mut out,
                );
            }
        }
    }

    out.sort_by(|a, b| {
        let key = |r: &RlfRecord| {
            (
                r.rlf_type,
                r.participants.iter().min().cloned(),
                r.failure_range.min,
                r.participants.clone(),
                r.failure_range.max,
            )
        };
        key(a).cmp(&key(b))
    });
    out.dedup();
    out
}

const NAMES: [&str; 5] = ["/r", "/r/a", "/r/b", "/r/c", "/r/d"];

#[derive(Debug, Clone)]
pub struct Case {
    parents: Vec<usize>,
    widths: Vec<u32>,
    boxes: Vec<Vec<Option<(i32, i32, i32, i32, bool)>>>,
}

pub fn case() -> impl Strategy<Value = Case> {
    (2usize..=5, 2usize..=4).prop_flat_map(|(n, nw)| {
        let parents = proptest::collection::vec(0usize..4, n - 1);
        let steps = proptest::collection::vec(prop_oneof![Just(1u32), Just(2), Just(3), Just(40)], nw - 1);
        let cell = proptest::option::weighted(
            0.9,
            (-20i32..100, -10i32..60, 0i32..90, 0i32..50, proptest::bool::weighted(0.9)),
        );
        let boxes = proptest::collection::vec(proptest::collection::vec(cell, n), nw);
        (parents, steps, boxes).prop_map(move |(ps, steps, boxes)| {
            let mut widths = vec![60u32];
            for s in steps {
                widths.push(widths.last().unwrap() + s);
            }
            Case {
                parents: ps.iter().enumerate().map(|(i, p)| p % (i + 1)).collect(),
                widths,
                boxes,
            }
        })
    })
}

pub fn snapshots(c: &Case) -> Vec<LayoutSnapshot> {
    c.widths
        .iter()
        .zip(&c.boxes)
        .map(|(w, cells)| {
            // A node is present only when its whole ancestor chain is.
            let mut present = vec![false; cells.len()];
            for i in 0..cells.len() {
                present[i] = cells[i].is_some() && (i == 0 || present[c.parents[i - 1]]);
            }
            let nodes = (0..cells.len())
                .filter(|i| present[*i])
                .map(|i| {
                    let (x, y, bw, bh, vis) = cells[i].unwrap();
                    LayoutNode {
                        xpath: NAMES[i].to_string(),
                        bbox: BoundingBox::new(x as f64, y as f64, bw as f64, bh as f64).unwrap(),
                        visible: vis,
                    }
                })
                .collect();
            let parent_map = (1..cells.len())
                .filter(|i| present[*i])
                .map(|i| (NAMES[i].to_string(), NAMES[c.parents[i - 1]].to_string()))
                .collect();
            LayoutSnapshot::new(*w, nodes, parent_map).unwrap()
        })
        .collect()
}
