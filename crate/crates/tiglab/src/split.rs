//! Chronological stage splits and inductive node masking.
//!
//! Stages are contiguous index ranges over the ordered event stream. The
//! four-stage layout (pretrain / prompt / val / test) drives the prompting
//! protocol; a three-stage layout (train / val / test) is the classic
//! baseline protocol without a prompt stage.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::graph::{InteractionEvent, TemporalGraph};

/// Contiguous, disjoint stage ranges covering `0..n_events`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageBounds {
    /// One range per stage, in chronological order.
    pub stages: Vec<Range<usize>>,
}

impl StageBounds {
    /// Range of the first (training) stage.
    pub fn pretrain(&self) -> Range<usize> {
        self.stages[0].clone()
    }

    /// Prompt stage — only present in the four-stage layout.
    pub fn prompt(&self) -> Option<Range<usize>> {
        if self.stages.len() == 4 {
            Some(self.stages[1].clone())
        } else {
            None
        }
    }

    /// Validation stage (second-to-last).
    pub fn val(&self) -> Range<usize> {
        self.stages[self.stages.len() - 2].clone()
    }

    /// Test stage (last).
    pub fn test(&self) -> Range<usize> {
        self.stages[self.stages.len() - 1].clone()
    }
}

/// Split the stream at `round(n_events · cumulative_fraction)` boundaries.
///
/// Fractions must be strictly positive and sum to 1 within 1e-9; every stage
/// must receive at least one event. Event order is untouched — stages are
/// just index ranges.
pub fn chronological_split(graph: &TemporalGraph, fractions: &[f64]) -> Result<StageBounds> {
    if fractions.len() < 2 {
        return Err(Error::InvalidSplit(format!(
            "need at least 2 fractions, got {}",
            fractions.len()
        )));
    }
    if fractions.iter().any(|&f| f <= 0.0) {
        return Err(Error::InvalidSplit(format!(
            "fractions must be strictly positive, got {fractions:?}"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSplit(format!(
            "fractions must sum to 1, got {sum}"
        )));
    }
    let n = graph.n_events();
    let mut stages = Vec::with_capacity(fractions.len());
    let mut cumulative = 0.0;
    let mut start = 0usize;
    for (k, &f) in fractions.iter().enumerate() {
        cumulative += f;
        let end = if k + 1 == fractions.len() {
            n // last boundary is exact regardless of rounding drift
        } else {
            (n as f64 * cumulative).round() as usize
        };
        if end <= start {
            return Err(Error::InvalidSplit(format!(
                "stage {k} is empty ({start}..{end}) for {n} events"
            )));
        }
        stages.push(start..end);
        start = end;
    }
    Ok(StageBounds { stages })
}

// ============================================================================
// Inductive masking
// ============================================================================

/// Nodes withheld from training so evaluation can measure generalization to
/// unseen nodes.
#[derive(Debug, Clone)]
pub struct InductiveSpec {
    /// Masked node ids, ascending.
    pub masked: Vec<usize>,
    /// Fast membership lookup, indexed by node id.
    is_masked: Vec<bool>,
    /// Seed the sample was drawn with.
    pub seed: u64,
}

impl InductiveSpec {
    /// No masking at all (pure transductive runs).
    pub fn none(n_nodes: usize) -> Self {
        InductiveSpec {
            masked: Vec::new(),
            is_masked: vec![false; n_nodes],
            seed: 0,
        }
    }

    /// Whether a node is withheld from training.
    pub fn is_masked(&self, node: usize) -> bool {
        self.is_masked[node]
    }

    /// True when either endpoint of the event is masked.
    pub fn touches_masked(&self, e: &InteractionEvent) -> bool {
        self.is_masked(e.src) || self.is_masked(e.dst)
    }
}

/// Sample `round(node_fraction · n_nodes)` nodes (at least one, at most the
/// candidate count) from the nodes that appear in the val/test stages, using
/// a dedicated seeded generator. Masked nodes' events are later removed from
/// training; errors if that removal would empty the training stage.
pub fn mask_inductive_nodes(
    graph: &TemporalGraph,
    bounds: &StageBounds,
    node_fraction: f64,
    seed: u64,
) -> Result<InductiveSpec> {
    if !(0.0..1.0).contains(&node_fraction) {
        return Err(Error::InvalidRequest(format!(
            "inductive node_fraction must be in [0, 1), got {node_fraction}"
        )));
    }
    if node_fraction == 0.0 {
        return Ok(InductiveSpec::none(graph.n_nodes()));
    }
    let mut appears = vec![false; graph.n_nodes()];
    for range in [bounds.val(), bounds.test()] {
        for e in &graph.events[range] {
            appears[e.src] = true;
            appears[e.dst] = true;
        }
    }
    let mut candidates: Vec<usize> = (0..graph.n_nodes()).filter(|&v| appears[v]).collect();
    let target = ((graph.n_nodes() as f64 * node_fraction).round() as usize)
        .max(1)
        .min(candidates.len());
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    let mut masked: Vec<usize> = candidates.into_iter().take(target).collect();
    masked.sort_unstable();
    let mut is_masked = vec![false; graph.n_nodes()];
    for &v in &masked {
        is_masked[v] = true;
    }
    let spec = InductiveSpec {
        masked,
        is_masked,
        seed,
    };
    let train_left = graph.events[bounds.pretrain()]
        .iter()
        .any(|e| !spec.touches_masked(e));
    if !train_left {
        return Err(Error::InvalidSplit(
            "inductive masking removed every training event".into(),
        ));
    }
    Ok(spec)
}

/// Training view of a stage: every event whose endpoints are both unmasked.
/// Events keep their original indices, so feature lookups stay valid.
pub fn filter_training_events(
    events: &[InteractionEvent],
    inductive: &InductiveSpec,
) -> Vec<InteractionEvent> {
    events
        .iter()
        .filter(|e| !inductive.touches_masked(e))
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    fn line_graph(n_events: usize, n_users: usize, n_items: usize) -> TemporalGraph {
        let events = (0..n_events)
            .map(|i| InteractionEvent {
                idx: 0,
                src: i % n_users,
                dst: n_users + (i % n_items),
                t: i as f64,
                label: 0,
            })
            .collect();
        build_graph(events, n_users, n_items, None, None).unwrap()
    }

    #[test]
    fn test_split_boundaries_are_rounded_cumulative_fractions() {
        let g = line_graph(100, 4, 4);
        let b = chronological_split(&g, &[0.5, 0.2, 0.15, 0.15]).unwrap();
        assert_eq!(b.stages, vec![0..50, 50..70, 70..85, 85..100]);
        assert_eq!(b.pretrain(), 0..50);
        assert_eq!(b.prompt(), Some(50..70));
        assert_eq!(b.val(), 70..85);
        assert_eq!(b.test(), 85..100);
    }

    #[test]
    fn test_split_rounds_half_away_from_zero() {
        let g = line_graph(10, 2, 2);
        let b = chronological_split(&g, &[0.5, 0.2, 0.15, 0.15]).unwrap();
        // cumulative 0.85 of 10 events = 8.5 → boundary 9
        assert_eq!(b.stages, vec![0..5, 5..7, 7..9, 9..10]);
    }

    #[test]
    fn test_split_three_way_baseline_layout() {
        let g = line_graph(100, 4, 4);
        let b = chronological_split(&g, &[0.7, 0.15, 0.15]).unwrap();
        assert_eq!(b.stages, vec![0..70, 70..85, 85..100]);
        assert_eq!(b.prompt(), None);
        assert_eq!(b.val(), 70..85);
        assert_eq!(b.test(), 85..100);
    }

    #[test]
    fn test_split_rejects_bad_fractions() {
        let g = line_graph(20, 2, 2);
        assert!(matches!(
            chronological_split(&g, &[0.5, 0.5, 0.1]).unwrap_err(),
            Error::InvalidSplit(_)
        ));
        assert!(matches!(
            chronological_split(&g, &[0.9, -0.1, 0.2]).unwrap_err(),
            Error::InvalidSplit(_)
        ));
        assert!(matches!(
            chronological_split(&g, &[1.0]).unwrap_err(),
            Error::InvalidSplit(_)
        ));
    }

    #[test]
    fn test_split_rejects_empty_stage() {
        let g = line_graph(3, 2, 2);
        // 3 events cannot fill 4 stages.
        let err = chronological_split(&g, &[0.5, 0.2, 0.15, 0.15]).unwrap_err();
        assert!(matches!(err, Error::InvalidSplit(_)));
    }

    #[test]
    fn test_mask_is_deterministic_and_sampled_from_eval_nodes() {
        let g = line_graph(200, 10, 10);
        let b = chronological_split(&g, &[0.5, 0.2, 0.15, 0.15]).unwrap();
        let m1 = mask_inductive_nodes(&g, &b, 0.1, 7).unwrap();
        let m2 = mask_inductive_nodes(&g, &b, 0.1, 7).unwrap();
        assert_eq!(m1.masked, m2.masked, "same seed, same mask");
        let m3 = mask_inductive_nodes(&g, &b, 0.1, 8).unwrap();
        assert_ne!(m1.masked, m3.masked, "different seed should differ");
        assert_eq!(m1.masked.len(), 2, "round(0.1 * 20 nodes)");
        let mut eval_nodes = vec![false; g.n_nodes()];
        for e in &g.events[70..200] {
            eval_nodes[e.src] = true;
            eval_nodes[e.dst] = true;
        }
        for &v in &m1.masked {
            assert!(eval_nodes[v], "masked node {v} must appear in val/test");
        }
    }

    #[test]
    fn test_filter_matches_brute_force_endpoint_check() {
        let g = line_graph(40, 4, 4);
        let b = chronological_split(&g, &[0.5, 0.2, 0.15, 0.15]).unwrap();
        let spec = mask_inductive_nodes(&g, &b, 0.2, 3).unwrap();
        let filtered = filter_training_events(&g.events[b.pretrain()], &spec);
        for e in &filtered {
            assert!(!spec.is_masked(e.src) && !spec.is_masked(e.dst));
        }
        let brute: Vec<_> = g.events[b.pretrain()]
            .iter()
            .filter(|e| !spec.masked.contains(&e.src) && !spec.masked.contains(&e.dst))
            .copied()
            .collect();
        assert_eq!(filtered, brute);
        assert!(
            filtered.len() < b.pretrain().len(),
            "masking should remove something in this construction"
        );
    }

    #[test]
    fn test_mask_zero_fraction_is_noop() {
        let g = line_graph(40, 4, 4);
        let b = chronological_split(&g, &[0.7, 0.15, 0.15]).unwrap();
        let spec = mask_inductive_nodes(&g, &b, 0.0, 3).unwrap();
        assert!(spec.masked.is_empty());
        assert_eq!(filter_training_events(&g.events, &spec).len(), 40);
    }
}
