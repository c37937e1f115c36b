//! Timeline geometry: year to canvas mapping, dynamic range, lanes,
//! semantic zoom and viewport fitting.
//!
//! All functions are pure over a [`CanvasState`] snapshot except
//! [`relayout`], which rewrites scale and unpinned placements in place.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    CanvasState, EdgeKind, EventId, EventType, NodePlacement, ParsedPayload, RecordId,
    TimelineScale, Year,
};

pub const MARGIN_PX: f64 = 40.0;
pub const LANE_HEIGHT_PX: f64 = 70.0;
pub const NODE_WIDTH_PX: f64 = 160.0;
pub const NODE_HEIGHT_PX: f64 = 50.0;
/// Vertical position of lane 0; higher lanes stack upwards.
pub const BASELINE_Y_PX: f64 = 500.0;
pub const DEFAULT_CANVAS_WIDTH: f64 = 1280.0;
pub const MIN_CANVAS_WIDTH: f64 = 100.0;
pub const DIM_OPACITY: f64 = 0.25;
pub const FULL_OPACITY: f64 = 1.0;
pub const MIN_ZOOM: f64 = 0.01;
pub const MAX_ZOOM: f64 = 10.0;
/// At or below this zoom nodes collapse into dots.
pub const DOT_ZOOM_THRESHOLD: f64 = 0.4;
const TARGET_TICKS: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("cannot scale an empty timeline")]
    EmptyTimeline,
    #[error("canvas width must be at least {MIN_CANVAS_WIDTH} px")]
    CanvasTooNarrow,
    #[error("unknown node {0}")]
    UnknownNode(EventId),
    #[error("unknown record {0}")]
    UnknownRecord(RecordId),
    #[error("no nodes to fit")]
    EmptySelection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub center_x: f64,
    pub center_y: f64,
    pub zoom: f64,
    pub width: f64,
    pub height: f64,
}

impl Viewport {
    pub fn new(screen: Screen) -> Self {
        Self {
            center_x: screen.width / 2.0,
            center_y: screen.height / 2.0,
            zoom: 1.0,
            width: screen.width,
            height: screen.height,
        }
    }

    /// Canvas-space rectangle visible at this zoom: (min_x, min_y, max_x, max_y).
    pub fn visible_rect(&self) -> (f64, f64, f64, f64) {
        let hw = self.width / self.zoom / 2.0;
        let hh = self.height / self.zoom / 2.0;
        (
            self.center_x - hw,
            self.center_y - hh,
            self.center_x + hw,
            self.center_y + hh,
        )
    }
}

/// Device pixel size of the view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Screen {
    pub width: f64,
    pub height: f64,
}

impl Default for Screen {
    fn default() -> Self {
        Self {
            width: 1280.0,
            height: 720.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    FullNode,
    Dot,
}

pub fn clamp_zoom(zoom: f64) -> f64 {
    if zoom.is_nan() {
        return 1.0;
    }
    zoom.clamp(MIN_ZOOM, MAX_ZOOM)
}

pub fn render_mode(zoom: f64) -> RenderMode {
    if zoom <= DOT_ZOOM_THRESHOLD {
        RenderMode::Dot
    } else {
        RenderMode::FullNode
    }
}

/// Fits a scale around `years` with a 5% (at least one year) pad on each side.
pub fn recompute_scale(years: &[Year], canvas_width: f64) -> Result<TimelineScale, LayoutError> {
    if canvas_width.is_nan() || canvas_width < MIN_CANVAS_WIDTH {
        return Err(LayoutError::CanvasTooNarrow);
    }
    let min = years
        .iter()
        .min()
        .ok_or(LayoutError::EmptyTimeline)?
        .value() as i64;
    let max = years.iter().max().expect("nonempty").value() as i64;
    let span = max - min;
    // ceil(span / 20) in integers; 0.05 * span in floats can round past an integer.
    let pad = ((span as u64).div_ceil(20) as i64).max(1);
    let bound = Year::MAX_ABS as i64;
    let lo = (min - pad).max(-bound);
    let hi = (max + pad).min(bound);
    let usable = canvas_width - 2.0 * MARGIN_PX;
    Ok(TimelineScale {
        min_year: Year::new(lo).expect("clamped"),
        max_year: Year::new(hi).expect("clamped"),
        pixels_per_year: usable / (hi - lo) as f64,
        zoom: 1.0,
    })
}

pub fn year_to_x(scale: &TimelineScale, year: Year) -> f64 {
    MARGIN_PX + (year.value() as f64 - scale.min_year.value() as f64) * scale.pixels_per_year
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneAssignment {
    pub event_id: EventId,
    pub lane: usize,
    pub y: f64,
}

pub fn lane_y(lane: usize) -> f64 {
    BASELINE_Y_PX - lane as f64 * LANE_HEIGHT_PX
}

/// First-fit interval scheduling of unpinned nodes into horizontal lanes.
///
/// A node occupies `[x - w/2, x + w/2)`. Nodes are taken in x order and put
/// in the lowest lane whose last occupant ends at or before the node's left
/// edge, which uses the minimum number of lanes for interval graphs.
/// Pinned nodes are ignored.
pub fn assign_lanes(placements: &[NodePlacement], node_width: f64) -> Vec<LaneAssignment> {
    let mut order: Vec<&NodePlacement> = placements.iter().filter(|p| !p.pinned).collect();
    order.sort_by(|a, b| {
        a.x.total_cmp(&b.x)
            .then_with(|| a.event_id.cmp(&b.event_id))
    });

    let half = node_width / 2.0;
    let mut lane_ends: Vec<f64> = Vec::new();
    order
        .into_iter()
        .map(|p| {
            let left = p.x - half;
            let lane = match lane_ends.iter().position(|&end| end <= left) {
                Some(l) => l,
                None => {
                    lane_ends.push(f64::NEG_INFINITY);
                    lane_ends.len() - 1
                }
            };
            lane_ends[lane] = p.x + half;
            LaneAssignment {
                event_id: p.event_id.clone(),
                lane,
                y: lane_y(lane),
            }
        })
        .collect()
}

/// Recomputes the scale from the session's events and re-places every
/// unpinned node. Zoom carries over from the previous scale.
pub fn relayout(state: &mut CanvasState, canvas_width: f64) {
    let years: Vec<Year> = state.events.values().map(|e| e.year).collect();
    let zoom = state.scale.map_or(1.0, |s| s.zoom);
    let Ok(mut scale) = recompute_scale(&years, canvas_width.max(MIN_CANVAS_WIDTH)) else {
        state.scale = None;
        return;
    };
    scale.zoom = zoom;
    for (id, placement) in state.placements.iter_mut() {
        if placement.pinned {
            continue;
        }
        if let Some(event) = state.events.get(id) {
            placement.x = year_to_x(&scale, event.year);
        }
    }
    let placements: Vec<NodePlacement> = state.placements.values().cloned().collect();
    for a in assign_lanes(&placements, NODE_WIDTH_PX) {
        if let Some(p) = state.placements.get_mut(&a.event_id) {
            p.y = a.y;
        }
    }
    state.scale = Some(scale);
}

/// Centers on the bounding box of the nodes' boxes and zooms out (never in
/// past 1.0) until it fits with a 10% margin.
pub fn fit_viewport<'a, I>(
    node_ids: I,
    state: &CanvasState,
    screen: Screen,
) -> Result<Viewport, LayoutError>
where
    I: IntoIterator<Item = &'a EventId>,
{
    let mut count = 0;
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for id in node_ids {
        let p = state
            .placements
            .get(id)
            .ok_or_else(|| LayoutError::UnknownNode(id.clone()))?;
        count += 1;
        min_x = min_x.min(p.x - NODE_WIDTH_PX / 2.0);
        max_x = max_x.max(p.x + NODE_WIDTH_PX / 2.0);
        min_y = min_y.min(p.y - NODE_HEIGHT_PX / 2.0);
        max_y = max_y.max(p.y + NODE_HEIGHT_PX / 2.0);
    }
    if count == 0 {
        return Err(LayoutError::EmptySelection);
    }
    let zoom = if count == 1 {
        1.0
    } else {
        let fit = (screen.width / (max_x - min_x)).min(screen.height / (max_y - min_y));
        (0.9 * fit).clamp(MIN_ZOOM, 1.0)
    };
    Ok(Viewport {
        center_x: (min_x + max_x) / 2.0,
        center_y: (min_y + max_y) / 2.0,
        zoom,
        width: screen.width,
        height: screen.height,
    })
}

/// Events a record refers to: its explicit list, resolved relationship
/// spans, and events it generated.
pub fn record_references(state: &CanvasState, record: &RecordId) -> Option<BTreeSet<EventId>> {
    let rec = state.record(record)?;
    let mut ids: BTreeSet<EventId> = rec.event_ids.iter().cloned().collect();
    if let Some(ParsedPayload::Relationship { text }) = &rec.parsed {
        ids.extend(text.resolved_events().cloned());
    }
    ids.extend(
        state
            .events
            .values()
            .filter(|e| matches!(&e.origin, crate::model::Origin::Generation { record: r } if r == record))
            .map(|e| e.id.clone()),
    );
    ids.retain(|id| state.events.contains_key(id));
    Some(ids)
}

/// Full opacity for nodes the record references, dimmed for the rest.
pub fn dim_mask(
    record: &RecordId,
    state: &CanvasState,
) -> Result<BTreeMap<EventId, f64>, LayoutError> {
    let refs = record_references(state, record)
        .ok_or_else(|| LayoutError::UnknownRecord(record.clone()))?;
    Ok(state
        .events
        .keys()
        .map(|id| {
            let opacity = if refs.contains(id) {
                FULL_OPACITY
            } else {
                DIM_OPACITY
            };
            (id.clone(), opacity)
        })
        .collect())
}

/// Highlights every event of type `t` and fits the view to them; with no
/// matches the current view is returned unchanged.
pub fn filter_by_type(
    t: EventType,
    state: &CanvasState,
    screen: Screen,
    current: Viewport,
) -> (BTreeSet<EventId>, Viewport) {
    let matching: BTreeSet<EventId> = state
        .events
        .values()
        .filter(|e| e.event_type == t)
        .map(|e| e.id.clone())
        .collect();
    if matching.is_empty() {
        return (matching, current);
    }
    let view = fit_viewport(&matching, state, screen).unwrap_or(current);
    (matching, view)
}

pub fn format_year_label(year: Year) -> String {
    let y = year.value();
    if y < 0 {
        format!("{} BC", -(y as i64))
    } else {
        y.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisTick {
    pub year: i32,
    pub x: f64,
    pub label: String,
}

/// Axis ticks at a 1/2/5 x 10^k year step, aiming for about eight ticks.
pub fn axis_ticks(scale: &TimelineScale) -> Vec<AxisTick> {
    let lo = scale.min_year.value() as i64;
    let hi = scale.max_year.value() as i64;
    let span = (hi - lo).max(1) as f64;
    let raw = span / TARGET_TICKS;
    let magnitude = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * magnitude)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * magnitude)
        .max(1.0) as i64;
    let first = lo.div_euclid(step) * step + if lo.rem_euclid(step) == 0 { 0 } else { step };
    (0..)
        .map(|k| first + k * step)
        .take_while(|y| *y <= hi)
        .filter_map(|y| Year::new(y).ok())
        .map(|y| AxisTick {
            year: y.value(),
            x: year_to_x(scale, y),
            label: format_year_label(y),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub event_id: EventId,
    pub x: f64,
    pub y: f64,
    pub mode: RenderMode,
    pub opacity: f64,
    pub label: String,
    pub name: String,
    pub year: Year,
    pub event_type: EventType,
    pub pinned: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub short_summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeView {
    pub id: String,
    pub kind: EdgeKind,
    pub from_node: EventId,
    pub to_node: EventId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSnapshot {
    pub zoom: f64,
    pub mode: RenderMode,
    pub scale: Option<TimelineScale>,
    pub nodes: Vec<NodeView>,
    pub edges: Vec<EdgeView>,
    pub ticks: Vec<AxisTick>,
}

/// Everything a client needs to draw the canvas at `zoom`. `opacity`
/// overrides per-node opacity (defaults to full).
pub fn layout_snapshot(
    state: &CanvasState,
    zoom: f64,
    opacity: Option<&BTreeMap<EventId, f64>>,
) -> LayoutSnapshot {
    let zoom = clamp_zoom(zoom);
    let mode = render_mode(zoom);
    let nodes = state
        .events
        .values()
        .filter_map(|e| {
            let p = state.placements.get(&e.id)?;
            Some(NodeView {
                event_id: e.id.clone(),
                x: p.x,
                y: p.y,
                mode,
                opacity: opacity
                    .and_then(|m| m.get(&e.id).copied())
                    .unwrap_or(FULL_OPACITY),
                label: format!("{} ({})", e.name, format_year_label(e.year)),
                name: e.name.clone(),
                year: e.year,
                event_type: e.event_type,
                pinned: p.pinned,
                short_summary: e.short_summary.clone(),
            })
        })
        .collect();
    let edges = state
        .edges
        .iter()
        .map(|e| EdgeView {
            id: e.id.to_string(),
            kind: e.kind,
            from_node: e.from_node.clone(),
            to_node: e.to_node.clone(),
        })
        .collect();
    LayoutSnapshot {
        zoom,
        mode,
        scale: state.scale,
        nodes,
        edges,
        ticks: state.scale.as_ref().map(axis_ticks).unwrap_or_default(),
    }
}
