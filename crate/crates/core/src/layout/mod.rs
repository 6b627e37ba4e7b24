//! Page geometry across viewport widths and the responsive layout failure
//! taxonomy.
//!
//! A [`LayoutSnapshot`] is the set of visible element boxes at one viewport
//! width. A [`ResponsiveLayoutGraph`] stitches snapshots together into edges
//! annotated with the width runs where a relationship holds, and
//! [`detect_rlfs`] classifies the failures that show up in those runs.

mod detect;
mod graph;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use detect::{
    detect_rlfs, diff_rlfs, failure_magnitude, width_facts, RlfDiff, DEFAULT_SMALL_RANGE_THRESHOLD,
};
pub use graph::build_rlg;

/// Two boxes count as overlapping only above this intersection area (px²).
pub const OVERLAP_AREA_EPSILON: f64 = 1.0;

/// Slack allowed when testing whether a box escapes its container or the
/// viewport.
pub const EDGE_TOLERANCE: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum LayoutError {
    #[error("bounding box has negative extent ({width} x {height})")]
    NegativeExtent { width: f64, height: f64 },
    #[error("empty xpath in snapshot at width {0}")]
    EmptyXpath(u32),
    #[error("duplicate xpath {xpath} in snapshot at width {width}")]
    DuplicateXpath { xpath: String, width: u32 },
    #[error("parent {parent} of {child} is not part of the snapshot at width {width}")]
    MissingParent {
        child: String,
        parent: String,
        width: u32,
    },
    #[error("parent map contains a cycle through {0}")]
    ParentCycle(String),
    #[error("a responsive layout graph needs at least two snapshots, got {0}")]
    TooFewSnapshots(usize),
    #[error("two snapshots share viewport width {0}")]
    DuplicateWidth(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Result<Self, LayoutError> {
        if !(width >= 0.0 && height >= 0.0) {
            return Err(LayoutError::NegativeExtent { width, height });
        }
        Ok(Self {
            x,
            y,
            width,
            height,
        })
    }

    pub fn right(&self) -> f64 {
        self.x + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.right().min(other.right()) - self.x.max(other.x);
        let h = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn overlaps(&self, other: &BoundingBox) -> bool {
        self.intersection_area(other) > OVERLAP_AREA_EPSILON
    }

    /// Sum of the distances by which `self` sticks out of `container` on each
    /// side, ignoring overhangs up to [`EDGE_TOLERANCE`].
    pub fn exceedance(&self, container: &BoundingBox) -> f64 {
        let sides = [
            container.x - self.x,
            self.right() - container.right(),
            container.y - self.y,
            self.bottom() - container.bottom(),
        ];
        sides
            .iter()
            .filter(|d| **d > EDGE_TOLERANCE)
            .sum::<f64>()
    }

    /// Horizontal overhang beyond a viewport `[0, viewport_width]`.
    pub fn viewport_exceedance(&self, viewport_width: f64) -> f64 {
        let left = -self.x;
        let right = self.right() - viewport_width;
        [left, right]
            .iter()
            .filter(|d| **d > EDGE_TOLERANCE)
            .sum::<f64>()
    }

    /// Smallest box covering every input box.
    pub fn union<'a>(boxes: impl IntoIterator<Item = &'a BoundingBox>) -> Option<BoundingBox> {
        boxes.into_iter().fold(None, |acc, b| {
            Some(match acc {
                None => *b,
                Some(a) => {
                    let x = a.x.min(b.x);
                    let y = a.y.min(b.y);
                    BoundingBox {
                        x,
                        y,
                        width: a.right().max(b.right()) - x,
                        height: a.bottom().max(b.bottom()) - y,
                    }
                }
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutNode {
    pub xpath: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub visible: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawSnapshot", into = "RawSnapshot")]
pub struct LayoutSnapshot {
    viewport_width: u32,
    nodes: Vec<LayoutNode>,
    parent_map: BTreeMap<String, String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct RawSnapshot {
    viewport_width: u32,
    nodes: Vec<LayoutNode>,
    parent_map: BTreeMap<String, String>,
}

impl TryFrom<RawSnapshot> for LayoutSnapshot {
    type Error = LayoutError;

    fn try_from(raw: RawSnapshot) -> Result<Self, Self::Error> {
        LayoutSnapshot::new(raw.viewport_width, raw.nodes, raw.parent_map)
    }
}

impl From<LayoutSnapshot> for RawSnapshot {
    fn from(s: LayoutSnapshot) -> Self {
        RawSnapshot {
            viewport_width: s.viewport_width,
            nodes: s.nodes,
            parent_map: s.parent_map,
        }
    }
}

impl PartialEq for LayoutSnapshot {
    fn eq(&self, other: &Self) -> bool {
        self.viewport_width == other.viewport_width
            && self.nodes == other.nodes
            && self.parent_map == other.parent_map
    }
}

impl LayoutSnapshot {
    pub fn new(
        viewport_width: u32,
        nodes: Vec<LayoutNode>,
        parent_map: BTreeMap<String, String>,
    ) -> Result<Self, LayoutError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if node.xpath.is_empty() {
                return Err(LayoutError::EmptyXpath(viewport_width));
            }
            if node.bbox.width < 0.0 || node.bbox.height < 0.0 {
                return Err(LayoutError::NegativeExtent {
                    width: node.bbox.width,
                    height: node.bbox.height,
                });
            }
            if index.insert(node.xpath.clone(), i).is_some() {
                return Err(LayoutError::DuplicateXpath {
                    xpath: node.xpath.clone(),
                    width: viewport_width,
                });
            }
        }
        for (child, parent) in &parent_map {
            if !index.contains_key(parent) || !index.contains_key(child) {
                return Err(LayoutError::MissingParent {
                    child: child.clone(),
                    parent: parent.clone(),
                    width: viewport_width,
                });
            }
        }
        for start in parent_map.keys() {
            let mut seen = BTreeSet::new();
            let mut cur = start;
            while let Some(p) = parent_map.get(cur) {
                if !seen.insert(cur) {
                    return Err(LayoutError::ParentCycle(start.clone()));
                }
                cur = p;
            }
        }
        Ok(Self {
            viewport_width,
            nodes,
            parent_map,
            index,
        })
    }

    pub fn viewport_width(&self) -> u32 {
        self.viewport_width
    }

    pub fn nodes(&self) -> &[LayoutNode] {
        &self.nodes
    }

    pub fn parent_map(&self) -> &BTreeMap<String, String> {
        &self.parent_map
    }

    pub fn node(&self, xpath: &str) -> Option<&LayoutNode> {
        self.index.get(xpath).map(|&i| &self.nodes[i])
    }

    /// Box of a node that is present and visible at this width.
    pub fn visible_box(&self, xpath: &str) -> Option<&BoundingBox> {
        self.node(xpath).filter(|n| n.visible).map(|n| &n.bbox)
    }

    pub fn parent_of(&self, xpath: &str) -> Option<&str> {
        self.parent_map.get(xpath).map(String::as_str)
    }

    /// Ancestors from nearest to furthest.
    pub fn ancestors(&self, xpath: &str) -> Vec<&str> {
        let mut out = Vec::new();
        let mut cur = xpath;
        while let Some(p) = self.parent_of(cur) {
            out.push(p);
            cur = p;
        }
        out
    }

    /// Visible children grouped by visible parent, both sides sorted by xpath.
    pub fn sibling_groups(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (child, parent) in &self.parent_map {
            if self.visible_box(child).is_some() && self.visible_box(parent).is_some() {
                groups.entry(parent.as_str()).or_default().push(child.as_str());
            }
        }
        for kids in groups.values_mut() {
            kids.sort_unstable();
        }
        groups
    }
}

/// Inclusive range of viewport widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct WidthRange {
    pub min: u32,
    pub max: u32,
}

impl WidthRange {
    pub fn new(min: u32, max: u32) -> Self {
        assert!(min <= max, "inverted width range {min}..{max}");
        Self { min, max }
    }

    pub fn contains(&self, width: u32) -> bool {
        self.min <= width && width <= self.max
    }

    pub fn overlaps(&self, other: &WidthRange) -> bool {
        self.min <= other.max && other.min <= self.max
    }
}

impl From<[u32; 2]> for WidthRange {
    fn from(v: [u32; 2]) -> Self {
        WidthRange {
            min: v[0].min(v[1]),
            max: v[0].max(v[1]),
        }
    }
}

impl From<WidthRange> for [u32; 2] {
    fn from(r: WidthRange) -> Self {
        [r.min, r.max]
    }
}

impl fmt::Display for WidthRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    LeftOf,
    Above,
    Overlapping,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainmentEdge {
    pub parent: String,
    pub child: String,
    pub range: WidthRange,
}

/// `first` stands in `relation` to `second` (e.g. `first` is left of `second`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiblingEdge {
    pub first: String,
    pub second: String,
    pub range: WidthRange,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsiveLayoutGraph {
    widths: Vec<u32>,
    snapshots: BTreeMap<u32, LayoutSnapshot>,
    containment: Vec<ContainmentEdge>,
    siblings: Vec<SiblingEdge>,
}

impl ResponsiveLayoutGraph {
    pub fn widths(&self) -> &[u32] {
        &self.widths
    }

    pub fn snapshot(&self, width: u32) -> Option<&LayoutSnapshot> {
        self.snapshots.get(&width)
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &LayoutSnapshot> {
        self.snapshots.values()
    }

    pub fn widest(&self) -> &LayoutSnapshot {
        self.snapshots
            .values()
            .next_back()
            .expect("graph holds at least two snapshots")
    }

    pub fn containment_edges(&self) -> &[ContainmentEdge] {
        &self.containment
    }

    pub fn sibling_edges(&self) -> &[SiblingEdge] {
        &self.siblings
    }

    pub fn into_snapshots(self) -> Vec<LayoutSnapshot> {
        self.snapshots.into_values().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RlfType {
    ElementCollision,
    ElementProtrusion,
    ViewportProtrusion,
    SmallRange,
    WrappingElements,
}

impl RlfType {
    pub const ALL: [RlfType; 5] = [
        RlfType::ElementCollision,
        RlfType::ElementProtrusion,
        RlfType::ViewportProtrusion,
        RlfType::SmallRange,
        RlfType::WrappingElements,
    ];

    /// Types the repair pipeline attempts; small-range failures are only
    /// reported.
    pub const REPAIRABLE: [RlfType; 4] = [
        RlfType::ElementCollision,
        RlfType::ElementProtrusion,
        RlfType::ViewportProtrusion,
        RlfType::WrappingElements,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RlfType::ElementCollision => "element_collision",
            RlfType::ElementProtrusion => "element_protrusion",
            RlfType::ViewportProtrusion => "viewport_protrusion",
            RlfType::SmallRange => "small_range",
            RlfType::WrappingElements => "wrapping_elements",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            RlfType::ElementCollision => "Element Collision",
            RlfType::ElementProtrusion => "Element Protrusion",
            RlfType::ViewportProtrusion => "Viewport Protrusion",
            RlfType::SmallRange => "Small-Range",
            RlfType::WrappingElements => "Wrapping Elements",
        }
    }

    pub fn is_repairable(&self) -> bool {
        *self != RlfType::SmallRange
    }
}

impl fmt::Display for RlfType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RlfType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RlfType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown RLF type `{s}`"))
    }
}

/// One detected failure.
///
/// Participants: collisions and small-range pairs carry both siblings in
/// xpath order, element protrusions carry `[child, parent]`, viewport
/// protrusions and wrapping carry the single offending element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RlfRecord {
    #[serde(rename = "type")]
    pub rlf_type: RlfType,
    pub participants: Vec<String>,
    #[serde(rename = "range")]
    pub failure_range: WidthRange,
}

impl RlfRecord {
    pub fn new(rlf_type: RlfType, participants: Vec<String>, failure_range: WidthRange) -> Self {
        debug_assert!(match rlf_type {
            RlfType::ElementCollision | RlfType::ElementProtrusion | RlfType::SmallRange =>
                participants.len() == 2,
            RlfType::ViewportProtrusion | RlfType::WrappingElements => participants.len() == 1,
        });
        Self {
            rlf_type,
            participants,
            failure_range,
        }
    }

    pub fn min_participant(&self) -> &str {
        self.participants
            .iter()
            .map(String::as_str)
            .min()
            .unwrap_or("")
    }

    pub fn participant_set(&self) -> BTreeSet<&str> {
        self.participants.iter().map(String::as_str).collect()
    }

    /// Same failure identity: type, participant set, and overlapping ranges.
    pub fn matches(&self, other: &RlfRecord) -> bool {
        self.rlf_type == other.rlf_type
            && self.participant_set() == other.participant_set()
            && self.failure_range.overlaps(&other.failure_range)
    }

    pub(crate) fn sort_key(&self) -> (RlfType, &str, u32, &[String], u32) {
        (
            self.rlf_type,
            self.min_participant(),
            self.failure_range.min,
            &self.participants,
            self.failure_range.max,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_box_rejected() {
        assert!(BoundingBox::new(0.0, 0.0, -1.0, 3.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn intersection_area_needs_positive_overlap() {
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let touching = BoundingBox::new(10.0, 0.0, 10.0, 10.0).unwrap();
        let sliver = BoundingBox::new(9.5, 0.0, 10.0, 1.0).unwrap();
        let real = BoundingBox::new(5.0, 5.0, 10.0, 10.0).unwrap();
        assert_eq!(a.intersection_area(&touching), 0.0);
        assert!(!a.overlaps(&sliver));
        assert_eq!(a.intersection_area(&real), 25.0);
        assert!(a.overlaps(&real));
    }

    #[test]
    fn exceedance_ignores_subpixel_overhang() {
        let parent = BoundingBox::new(0.0, 0.0, 100.0, 100.0).unwrap();
        let inside = BoundingBox::new(0.0, 0.0, 100.4, 50.0).unwrap();
        let out = BoundingBox::new(-5.0, 0.0, 110.0, 50.0).unwrap();
        assert_eq!(inside.exceedance(&parent), 0.0);
        assert_eq!(out.exceedance(&parent), 10.0);
        assert_eq!(out.viewport_exceedance(100.0), 10.0);
    }

    #[test]
    fn snapshot_validation() {
        let n = |x: &str| LayoutNode {
            xpath: x.into(),
            bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            visible: true,
        };
        let dup = LayoutSnapshot::new(400, vec![n("/a"), n("/a")], BTreeMap::new());
        assert!(matches!(dup, Err(LayoutError::DuplicateXpath { .. })));
        let missing = LayoutSnapshot::new(
            400,
            vec![n("/a")],
            BTreeMap::from([("/a".to_string(), "/b".to_string())]),
        );
        assert!(matches!(missing, Err(LayoutError::MissingParent { .. })));
        let cyc = LayoutSnapshot::new(
            400,
            vec![n("/a"), n("/b")],
            BTreeMap::from([
                ("/a".to_string(), "/b".to_string()),
                ("/b".to_string(), "/a".to_string()),
            ]),
        );
        assert!(matches!(cyc, Err(LayoutError::ParentCycle(_))));
        assert!(matches!(
            LayoutSnapshot::new(400, vec![n("")], BTreeMap::new()),
            Err(LayoutError::EmptyXpath(400))
        ));
    }

    #[test]
    fn record_json_shape() {
        let r = RlfRecord::new(
            RlfType::ViewportProtrusion,
            vec!["/html/body/div[1]".into()],
            WidthRange::new(320, 899),
        );
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(
            json,
            r#"{"type":"viewport_protrusion","participants":["/html/body/div[1]"],"range":[320,899]}"#
        );
        let back: RlfRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn five_types() {
        assert_eq!(RlfType::ALL.len(), 5);
        for t in RlfType::ALL {
            assert_eq!(t.as_str().parse::<RlfType>().unwrap(), t);
        }
    }
}
