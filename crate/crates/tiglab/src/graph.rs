//! Event streams and the queries the models need from them.
//!
//! A [`TemporalGraph`] is an ordered list of timestamped source→destination
//! interactions over a bipartite node set (users first, then items), plus
//! per-node and per-event feature tables. Two auxiliary structures serve the
//! hot paths: [`NeighborIndex`] answers "the K most recent interactions of
//! node v before time t" and [`LastInteractionTracker`] remembers each node's
//! most recent event time as a stream is consumed.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Feature dimension substituted when a data source carries no features.
pub const FALLBACK_FEATURE_DIM: usize = 172;

// ============================================================================
// Events and feature tables
// ============================================================================

/// One timestamped interaction. `idx` is the event's position in the
/// chronologically ordered stream and doubles as its row in the edge-feature
/// table, so filtered views of the stream keep their features aligned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionEvent {
    /// Position in the ordered stream; also the edge-feature row.
    pub idx: usize,
    /// Source node (user partition).
    pub src: usize,
    /// Destination node (item partition, already offset by `n_users`).
    pub dst: usize,
    /// Event timestamp.
    pub t: f64,
    /// Per-event label of the source node (0 when the source has none).
    pub label: u32,
}

/// Dense or implicitly-zero feature matrix.
///
/// Data sources without features still need well-shaped tensors downstream;
/// [`FeatureTable::Zero`] represents an all-zero table without storing it.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureTable {
    /// All-zero features of the given width.
    Zero { rows: usize, dim: usize },
    /// Explicit row-per-entity features.
    Dense(Array2<f64>),
}

impl FeatureTable {
    /// Number of rows.
    pub fn rows(&self) -> usize {
        match self {
            FeatureTable::Zero { rows, .. } => *rows,
            FeatureTable::Dense(m) => m.nrows(),
        }
    }

    /// Feature width.
    pub fn dim(&self) -> usize {
        match self {
            FeatureTable::Zero { dim, .. } => *dim,
            FeatureTable::Dense(m) => m.ncols(),
        }
    }

    /// Single row as an owned vector.
    pub fn row(&self, i: usize) -> Array1<f64> {
        match self {
            FeatureTable::Zero { dim, .. } => Array1::zeros(*dim),
            FeatureTable::Dense(m) => m.row(i).to_owned(),
        }
    }

    /// Stack the requested rows into a matrix (len(ids) × dim).
    pub fn gather(&self, ids: &[usize]) -> Array2<f64> {
        match self {
            FeatureTable::Zero { dim, .. } => Array2::zeros((ids.len(), *dim)),
            FeatureTable::Dense(m) => {
                let mut out = Array2::zeros((ids.len(), m.ncols()));
                for (k, &i) in ids.iter().enumerate() {
                    out.row_mut(k).assign(&m.row(i));
                }
                out
            }
        }
    }
}

// ============================================================================
// TemporalGraph
// ============================================================================

/// Chronologically ordered interaction stream with its feature tables.
#[derive(Debug, Clone)]
pub struct TemporalGraph {
    /// Events sorted by `(t, original order)`; `events[i].idx == i`.
    pub events: Vec<InteractionEvent>,
    /// Size of the user partition (node ids `0..n_users`).
    pub n_users: usize,
    /// Size of the item partition (node ids `n_users..n_users + n_items`).
    pub n_items: usize,
    /// Per-node features (`n_users + n_items` rows).
    pub node_feats: FeatureTable,
    /// Per-event features (`events.len()` rows, row = event idx).
    pub edge_feats: FeatureTable,
    /// Earliest timestamp in the stream.
    pub t_min: f64,
    /// Latest timestamp in the stream.
    pub t_max: f64,
}

impl TemporalGraph {
    /// Total node count across both partitions.
    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    /// Number of events.
    pub fn n_events(&self) -> usize {
        self.events.len()
    }

    /// Whether a node id belongs to the item partition.
    pub fn is_item(&self, node: usize) -> bool {
        node >= self.n_users
    }
}

/// Assemble a graph from raw events and optional feature tables.
///
/// Events are stably sorted by timestamp (input order breaks ties) and
/// re-indexed `0..n`; edge features must therefore arrive in the same order
/// as `events`. Missing tables are replaced by all-zero tables of width
/// [`FALLBACK_FEATURE_DIM`]. Errors when the stream is empty, when a feature
/// table has the wrong number of rows, or when an endpoint is out of range.
pub fn build_graph(
    mut events: Vec<InteractionEvent>,
    n_users: usize,
    n_items: usize,
    node_feats: Option<Array2<f64>>,
    edge_feats: Option<Array2<f64>>,
) -> Result<TemporalGraph> {
    if events.is_empty() {
        return Err(Error::EmptyStream("no events to build a graph from".into()));
    }
    let n_nodes = n_users + n_items;
    for e in &events {
        if e.src >= n_users || e.dst < n_users || e.dst >= n_nodes {
            return Err(Error::InvalidRequest(format!(
                "event at t={} has endpoints ({}, {}) outside partitions [0,{}) / [{},{})",
                e.t, e.src, e.dst, n_users, n_users, n_nodes
            )));
        }
        if !e.t.is_finite() {
            return Err(Error::InvalidRequest(format!(
                "non-finite timestamp {} on event ({}, {})",
                e.t, e.src, e.dst
            )));
        }
    }
    // Stable sort: equal timestamps keep their input order, and the fresh
    // idx values reflect that order (used for tie-breaking everywhere else).
    // Edge features are carried along via the pre-sort position.
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| events[a].t.partial_cmp(&events[b].t).unwrap());
    let reordered: Vec<InteractionEvent> = order.iter().map(|&i| events[i]).collect();
    events = reordered;
    let edge_feats = match edge_feats {
        Some(m) => {
            if m.nrows() != events.len() {
                return Err(Error::DimensionMismatch {
                    context: "build_graph edge features".into(),
                    expected: format!("{} rows", events.len()),
                    got: format!("{} rows", m.nrows()),
                });
            }
            let mut out = Array2::zeros((events.len(), m.ncols()));
            for (new_row, &old_row) in order.iter().enumerate() {
                out.row_mut(new_row).assign(&m.row(old_row));
            }
            FeatureTable::Dense(out)
        }
        None => FeatureTable::Zero {
            rows: events.len(),
            dim: FALLBACK_FEATURE_DIM,
        },
    };
    for (i, e) in events.iter_mut().enumerate() {
        e.idx = i;
    }
    let node_feats = match node_feats {
        Some(m) => {
            if m.nrows() != n_nodes {
                return Err(Error::DimensionMismatch {
                    context: "build_graph node features".into(),
                    expected: format!("{n_nodes} rows"),
                    got: format!("{} rows", m.nrows()),
                });
            }
            FeatureTable::Dense(m)
        }
        None => FeatureTable::Zero {
            rows: n_nodes,
            dim: FALLBACK_FEATURE_DIM,
        },
    };
    let t_min = events.first().unwrap().t;
    let t_max = events.last().unwrap().t;
    Ok(TemporalGraph {
        events,
        n_users,
        n_items,
        node_feats,
        edge_feats,
        t_min,
        t_max,
    })
}

// ============================================================================
// Neighbor index
// ============================================================================

/// One past interaction as seen from a query node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborHit {
    /// The other endpoint of the interaction.
    pub node: usize,
    /// Interaction timestamp.
    pub t: f64,
    /// Event index (also the edge-feature row).
    pub event_idx: usize,
}

/// Per-node chronological adjacency for "most recent K before t" queries.
///
/// Each node's list is sorted ascending by `(t, event_idx)`, so a query is a
/// binary search for the cut point followed by taking a suffix.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    lists: Vec<Vec<NeighborHit>>,
}

impl NeighborIndex {
    /// Build the index from every event in the graph. O(|E|) because events
    /// are already chronological.
    pub fn build(graph: &TemporalGraph) -> Self {
        Self::build_from_events(graph.n_nodes(), &graph.events)
    }

    /// Build from an explicit (chronological) event slice; used for filtered
    /// training views where masked nodes' events are absent.
    pub fn build_from_events(n_nodes: usize, events: &[InteractionEvent]) -> Self {
        let mut lists = vec![Vec::new(); n_nodes];
        for e in events {
            lists[e.src].push(NeighborHit {
                node: e.dst,
                t: e.t,
                event_idx: e.idx,
            });
            lists[e.dst].push(NeighborHit {
                node: e.src,
                t: e.t,
                event_idx: e.idx,
            });
        }
        NeighborIndex { lists }
    }

    /// The `k` most recent interactions of `v` strictly before time `t`,
    /// newest first. Equal timestamps rank the higher event index first.
    /// Nodes with no qualifying history return an empty vector.
    pub fn recent_neighbors(&self, v: usize, t: f64, k: usize) -> Vec<NeighborHit> {
        let list = &self.lists[v];
        let cut = list.partition_point(|h| h.t < t);
        Self::take_recent(&list[..cut], k)
    }

    /// Like [`Self::recent_neighbors`] but bounded by event position instead
    /// of time alone: interactions with the same timestamp as the query event
    /// are visible only if they precede it in the stream. This is what batch
    /// processing uses so an event never attends to itself.
    pub fn recent_before_event(
        &self,
        v: usize,
        t: f64,
        event_idx: usize,
        k: usize,
    ) -> Vec<NeighborHit> {
        let list = &self.lists[v];
        let cut = list.partition_point(|h| (h.t, h.event_idx) < (t, event_idx));
        Self::take_recent(&list[..cut], k)
    }

    fn take_recent(prefix: &[NeighborHit], k: usize) -> Vec<NeighborHit> {
        let start = prefix.len().saturating_sub(k);
        let mut out: Vec<NeighborHit> = prefix[start..].to_vec();
        out.reverse();
        out
    }
}

// ============================================================================
// Last-interaction tracker
// ============================================================================

/// Running "when did I last see this node" state over a consumed stream.
///
/// `observe` keeps the maximum timestamp per node, so the state equals the
/// prefix maximum of each node's event times regardless of feed order.
#[derive(Debug, Clone)]
pub struct LastInteractionTracker {
    last: Vec<Option<f64>>,
}

impl LastInteractionTracker {
    /// Fresh tracker over `n_nodes` nodes, all unseen.
    pub fn new(n_nodes: usize) -> Self {
        LastInteractionTracker {
            last: vec![None; n_nodes],
        }
    }

    /// Record that `node` interacted at time `t`.
    pub fn observe(&mut self, node: usize, t: f64) {
        let slot = &mut self.last[node];
        *slot = Some(match *slot {
            Some(prev) => prev.max(t),
            None => t,
        });
    }

    /// Record both endpoints of an event.
    pub fn observe_event(&mut self, e: &InteractionEvent) {
        self.observe(e.src, e.t);
        self.observe(e.dst, e.t);
    }

    /// Most recent observed time for `node`, if any.
    pub fn last_seen(&self, node: usize) -> Option<f64> {
        self.last[node]
    }

    /// Time since `node` was last seen, with never-seen nodes measured from
    /// the stream origin `t_min`.
    pub fn delta_since(&self, node: usize, t: f64, t_min: f64) -> f64 {
        t - self.last[node].unwrap_or(t_min)
    }
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ev(src: usize, dst: usize, t: f64) -> InteractionEvent {
        InteractionEvent {
            idx: 0,
            src,
            dst,
            t,
            label: 0,
        }
    }

    #[test]
    fn test_build_graph_orders_events_and_reindexes() {
        let events = vec![ev(0, 2, 5.0), ev(1, 2, 1.0), ev(0, 3, 3.0)];
        let g = build_graph(events, 2, 2, None, None).unwrap();
        let ts: Vec<f64> = g.events.iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![1.0, 3.0, 5.0]);
        let idxs: Vec<usize> = g.events.iter().map(|e| e.idx).collect();
        assert_eq!(idxs, vec![0, 1, 2]);
        assert_eq!((g.t_min, g.t_max), (1.0, 5.0));
    }

    #[test]
    fn test_build_graph_stable_on_timestamp_ties() {
        let events = vec![ev(0, 2, 1.0), ev(1, 3, 1.0), ev(0, 3, 1.0)];
        let g = build_graph(events, 2, 2, None, None).unwrap();
        // Same timestamps: input order preserved.
        assert_eq!(g.events[0].src, 0);
        assert_eq!(g.events[0].dst, 2);
        assert_eq!(g.events[1].src, 1);
        assert_eq!(g.events[2].dst, 3);
    }

    #[test]
    fn test_build_graph_keeps_edge_features_aligned_after_sort() {
        let events = vec![ev(0, 2, 5.0), ev(1, 2, 1.0)];
        let feats = array![[50.0, 50.5], [10.0, 10.5]];
        let g = build_graph(events, 2, 1, None, Some(feats)).unwrap();
        // Event at t=1 sorted first and must keep its [10.0, 10.5] row.
        assert_eq!(g.events[0].t, 1.0);
        assert_eq!(g.edge_feats.row(g.events[0].idx), array![10.0, 10.5]);
        assert_eq!(g.edge_feats.row(g.events[1].idx), array![50.0, 50.5]);
    }

    #[test]
    fn test_build_graph_missing_features_fall_back_to_zero_tables() {
        let g = build_graph(vec![ev(0, 1, 1.0)], 1, 1, None, None).unwrap();
        assert_eq!(g.node_feats.dim(), FALLBACK_FEATURE_DIM);
        assert_eq!(g.edge_feats.dim(), FALLBACK_FEATURE_DIM);
        assert!(g.node_feats.row(0).iter().all(|&x| x == 0.0));
        assert_eq!(g.edge_feats.rows(), 1);
    }

    #[test]
    fn test_build_graph_rejects_bad_feature_rows() {
        let feats = array![[1.0], [2.0], [3.0]];
        let err = build_graph(vec![ev(0, 1, 1.0)], 1, 1, Some(feats), None).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn test_build_graph_rejects_empty_stream() {
        let err = build_graph(vec![], 1, 1, None, None).unwrap_err();
        assert!(matches!(err, Error::EmptyStream(_)));
    }

    #[test]
    fn test_build_graph_rejects_endpoints_outside_partitions() {
        // dst inside the user partition is invalid.
        let err = build_graph(vec![ev(0, 0, 1.0)], 2, 2, None, None).unwrap_err();
        assert!(matches!(err, Error::InvalidRequest(_)));
    }

    #[test]
    fn test_recent_neighbors_strictly_before_query_time() {
        let events = vec![ev(0, 2, 1.0), ev(0, 3, 2.0), ev(1, 2, 3.0)];
        let g = build_graph(events, 2, 2, None, None).unwrap();
        let index = NeighborIndex::build(&g);
        // Query exactly at an event time: that event is excluded.
        let hits = index.recent_neighbors(0, 2.0, 10);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].node, 2);
        assert_eq!(hits[0].t, 1.0);
    }

    #[test]
    fn test_recent_neighbors_newest_first_and_truncated() {
        let events = vec![
            ev(0, 2, 1.0),
            ev(0, 3, 2.0),
            ev(0, 2, 3.0),
            ev(0, 3, 4.0),
        ];
        let g = build_graph(events, 1, 3, None, None).unwrap();
        let index = NeighborIndex::build(&g);
        let hits = index.recent_neighbors(0, 10.0, 2);
        let ts: Vec<f64> = hits.iter().map(|h| h.t).collect();
        assert_eq!(ts, vec![4.0, 3.0], "two most recent, newest first");
    }

    #[test]
    fn test_recent_neighbors_tie_broken_by_higher_event_idx() {
        let events = vec![ev(0, 2, 1.0), ev(0, 3, 1.0), ev(0, 4, 1.0)];
        let g = build_graph(events, 1, 4, None, None).unwrap();
        let index = NeighborIndex::build(&g);
        let hits = index.recent_neighbors(0, 2.0, 2);
        let idxs: Vec<usize> = hits.iter().map(|h| h.event_idx).collect();
        assert_eq!(idxs, vec![2, 1], "equal times rank later events first");
    }

    #[test]
    fn test_recent_neighbors_matches_brute_force() {
        // Deterministic pseudo-random stream, checked against the obvious
        // filter/sort/truncate implementation.
        let mut events = Vec::new();
        let mut state = 42u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            state >> 33
        };
        for _ in 0..300 {
            let src = (next() % 5) as usize;
            let dst = 5 + (next() % 7) as usize;
            let t = (next() % 50) as f64 * 0.5;
            events.push(ev(src, dst, t));
        }
        let g = build_graph(events, 5, 7, None, None).unwrap();
        let index = NeighborIndex::build(&g);
        for v in 0..12 {
            for &t in &[0.0, 3.25, 10.0, 24.5, 100.0] {
                for &k in &[1usize, 3, 10, 500] {
                    let got = index.recent_neighbors(v, t, k);
                    let mut expect: Vec<NeighborHit> = g
                        .events
                        .iter()
                        .filter(|e| (e.src == v || e.dst == v) && e.t < t)
                        .map(|e| NeighborHit {
                            node: if e.src == v { e.dst } else { e.src },
                            t: e.t,
                            event_idx: e.idx,
                        })
                        .collect();
                    expect.sort_by(|a, b| {
                        (b.t, b.event_idx)
                            .partial_cmp(&(a.t, a.event_idx))
                            .unwrap()
                    });
                    expect.truncate(k);
                    assert_eq!(got, expect, "v={v} t={t} k={k}");
                }
            }
        }
    }

    #[test]
    fn test_recent_before_event_includes_same_time_earlier_events() {
        let events = vec![ev(0, 2, 1.0), ev(0, 3, 1.0)];
        let g = build_graph(events, 1, 3, None, None).unwrap();
        let index = NeighborIndex::build(&g);
        // From the viewpoint of event idx=1 (same timestamp), event idx=0 is
        // in its past even though the timestamps tie.
        let hits = index.recent_before_event(0, 1.0, 1, 10);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].event_idx, 0);
        // The plain time query sees nothing at t=1.0.
        assert!(index.recent_neighbors(0, 1.0, 10).is_empty());
    }

    #[test]
    fn test_tracker_prefix_max_and_origin_fallback() {
        let mut tracker = LastInteractionTracker::new(3);
        assert_eq!(tracker.last_seen(0), None);
        assert_eq!(tracker.delta_since(0, 7.0, 2.0), 5.0, "unseen measures from t_min");
        tracker.observe(0, 4.0);
        tracker.observe(0, 3.0); // late arrival must not move time backwards
        assert_eq!(tracker.last_seen(0), Some(4.0));
        assert_eq!(tracker.delta_since(0, 10.0, 0.0), 6.0);
    }
}
