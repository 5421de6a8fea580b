//! Weighted-mean aggregation shared by all three tiers, and keyframe choice.

use crate::error::{D3aError, Result};
use crate::model::{merge_directions, ClusterAggregate, Embedding, KeyframeRef, ObjectObservation, Point2};

/// Keeps the more confident keyframe; equal probabilities go to the earlier
/// frame.
pub fn select_keyframe(a: &KeyframeRef, b: &KeyframeRef) -> KeyframeRef {
    if b.prob > a.prob || (b.prob == a.prob && b.frame_id < a.frame_id) {
        *b
    } else {
        *a
    }
}

/// Keyframe for the union of two aggregates.
pub fn select_aggregate_keyframe(a: &ClusterAggregate, b: &ClusterAggregate) -> KeyframeRef {
    select_keyframe(&a.keyframe, &b.keyframe)
}

/// Builds one aggregate from cluster members with unit weights.
pub fn aggregate_members(instance_id: u64, members: &[&ObjectObservation]) -> Result<ClusterAggregate> {
    let first = members
        .first()
        .ok_or_else(|| D3aError::Invalid("cannot aggregate an empty cluster".into()))?;
    let n = members.len() as f64;
    let dim = first.embedding.dim();
    let mut mean = vec![0.0; dim];
    let (mut x, mut y) = (0.0, 0.0);
    let mut keyframe = first.keyframe();
    let (mut t_first, mut t_last) = (first.t, first.t);
    for m in members {
        if m.embedding.dim() != dim {
            return Err(D3aError::DimensionMismatch {
                expected: dim,
                got: m.embedding.dim(),
            });
        }
        for (acc, v) in mean.iter_mut().zip(m.embedding.as_slice()) {
            *acc += v / n;
        }
        x += m.world_pos.x;
        y += m.world_pos.y;
        keyframe = select_keyframe(&keyframe, &m.keyframe());
        t_first = t_first.min(m.t);
        t_last = t_last.max(m.t);
    }
    let resultant = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    let embedding = if resultant > 0.0 {
        Embedding::new(mean)?
    } else {
        first.embedding.clone()
    };
    Ok(ClusterAggregate {
        instance_id,
        category: first.category.clone(),
        embedding,
        resultant,
        world_pos: Point2::new(x / n, y / n),
        weight: n,
        keyframe,
        t_first,
        t_last,
        member_count: members.len() as u64,
    })
}

/// Weight-carrying merge of `incoming` into `target`; `target` keeps its id.
pub fn merge_aggregates(target: &ClusterAggregate, incoming: &ClusterAggregate) -> Result<ClusterAggregate> {
    let (embedding, resultant) = merge_directions(
        &target.embedding,
        target.resultant,
        target.weight,
        &incoming.embedding,
        incoming.resultant,
        incoming.weight,
    )?;
    Ok(ClusterAggregate {
        instance_id: target.instance_id,
        category: target.category.clone(),
        embedding,
        resultant,
        world_pos: Point2::weighted_mean(&target.world_pos, target.weight, &incoming.world_pos, incoming.weight),
        weight: target.weight + incoming.weight,
        keyframe: select_aggregate_keyframe(target, incoming),
        t_first: target.t_first.min(incoming.t_first),
        t_last: target.t_last.max(incoming.t_last),
        member_count: target.member_count + incoming.member_count,
    })
}
