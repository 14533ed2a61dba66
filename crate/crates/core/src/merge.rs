//! Fusing the per-clip sub-models of one video into a shared coordinate frame.
//!
//! Sub-models become nodes of an overlap graph; two nodes are joined when they
//! register at least `min_shared` common frames. Each connected component is
//! traversed depth-first from its lowest model id, and every child is mapped
//! into its parent's frame by a similarity fit on the camera centers of the
//! shared frames. Transforms compose along the DFS tree.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colmap::{CameraIntrinsics, CameraPose, FrameIndex, SubModel};
use crate::geometry::{umeyama_align, view_state, SimilarityTransform, Vec3};

pub const DEFAULT_MIN_SHARED_FRAMES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MergeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapEdge {
    /// Lower model id.
    pub a: u32,
    /// Higher model id.
    pub b: u32,
    pub shared: BTreeSet<FrameIndex>,
    /// Maps `b`'s frame into `a`'s frame once resolved.
    pub alignment: Option<SimilarityTransform>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OverlapGraph {
    pub nodes: Vec<u32>,
    pub edges: Vec<OverlapEdge>,
}

impl OverlapGraph {
    pub fn neighbors(&self, node: u32) -> impl Iterator<Item = u32> + '_ {
        self.edges.iter().filter_map(move |e| {
            if e.a == node {
                Some(e.b)
            } else if e.b == node {
                Some(e.a)
            } else {
                None
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeResidual {
    pub a: u32,
    pub b: u32,
    pub shared_frames: usize,
    pub rms: f64,
    pub tree_edge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedEdge {
    pub a: u32,
    pub b: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedModel {
    pub component_id: usize,
    pub root_model_id: u32,
    pub model_ids: Vec<u32>,
    pub poses: BTreeMap<FrameIndex, CameraPose>,
    pub intrinsics: BTreeMap<u32, CameraIntrinsics>,
    /// Source sub-model of every merged pose.
    pub source: BTreeMap<FrameIndex, u32>,
    /// Transform taking each member sub-model into the root's frame.
    pub transforms: BTreeMap<u32, SimilarityTransform>,
    pub alignment_residuals: Vec<EdgeResidual>,
    pub dropped_edges: Vec<DroppedEdge>,
    pub clip_span: (f64, f64),
}

impl MergedModel {
    /// The merged poses as a sub-model rooted at the component's root id,
    /// with image ids renumbered in frame order.
    pub fn to_submodel(&self) -> SubModel {
        let poses = self
            .poses
            .values()
            .enumerate()
            .map(|(i, p)| {
                let mut pose = p.clone();
                pose.image_id = i as u32 + 1;
                (pose.frame_index, pose)
            })
            .collect();
        SubModel {
            model_id: self.root_model_id,
            poses,
            intrinsics: self.intrinsics.clone(),
            clip_span: self.clip_span,
        }
    }
}

fn index_by_id(submodels: &[SubModel]) -> Result<BTreeMap<u32, &SubModel>, MergeError> {
    let mut by_id = BTreeMap::new();
    for m in submodels {
        if by_id.insert(m.model_id, m).is_some() {
            return Err(MergeError::InvalidInput(format!(
                "duplicate model id {}",
                m.model_id
            )));
        }
    }
    Ok(by_id)
}

/// Joins every pair of sub-models that share at least `min_shared` frames.
pub fn build_overlap_graph(
    submodels: &[SubModel],
    min_shared: usize,
) -> Result<OverlapGraph, MergeError> {
    let by_id = index_by_id(submodels)?;
    let models: Vec<&SubModel> = by_id.values().copied().collect();
    let mut edges = Vec::new();
    for (i, ma) in models.iter().enumerate() {
        for mb in &models[i + 1..] {
            let shared: BTreeSet<FrameIndex> = ma
                .poses
                .keys()
                .filter(|f| mb.poses.contains_key(f))
                .copied()
                .collect();
            if shared.len() >= min_shared.max(1) {
                edges.push(OverlapEdge {
                    a: ma.model_id,
                    b: mb.model_id,
                    shared,
                    alignment: None,
                });
            }
        }
    }
    Ok(OverlapGraph {
        nodes: by_id.keys().copied().collect(),
        edges,
    })
}

fn centers(model: &SubModel, frames: &BTreeSet<FrameIndex>) -> Vec<Vec3> {
    frames
        .iter()
        .map(|f| view_state(&model.poses[f]).position)
        .collect()
}

/// Merges each connected component of `graph` into one model.
///
/// Edges whose alignment cannot be estimated are dropped with a warning,
/// which may split a component.
pub fn merge_components(
    graph: &OverlapGraph,
    submodels: &[SubModel],
) -> Result<Vec<MergedModel>, MergeError> {
    let by_id = index_by_id(submodels)?;
    for node in &graph.nodes {
        if !by_id.contains_key(node) {
            return Err(MergeError::InvalidInput(format!(
                "graph node {node} has no sub-model"
            )));
        }
    }

    let mut resolved = OverlapGraph {
        nodes: graph.nodes.clone(),
        edges: Vec::new(),
    };
    let mut dropped = Vec::new();
    for edge in &graph.edges {
        let (ma, mb) = match (by_id.get(&edge.a), by_id.get(&edge.b)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(MergeError::InvalidInput(format!(
                    "edge {}-{} references a missing sub-model",
                    edge.a, edge.b
                )))
            }
        };
        let fit = edge.alignment.map(Ok).unwrap_or_else(|| {
            umeyama_align(&centers(mb, &edge.shared), &centers(ma, &edge.shared))
        });
        match fit {
            Ok(t) => resolved.edges.push(OverlapEdge {
                alignment: Some(t),
                ..edge.clone()
            }),
            Err(err) => {
                tracing::warn!(a = edge.a, b = edge.b, %err, "dropping overlap edge");
                dropped.push(DroppedEdge {
                    a: edge.a,
                    b: edge.b,
                    reason: err.to_string(),
                });
            }
        }
    }

    let mut adjacency: BTreeMap<u32, BTreeMap<u32, SimilarityTransform>> =
        graph.nodes.iter().map(|&n| (n, BTreeMap::new())).collect();
    for e in &resolved.edges {
        let t = e.alignment.expect("resolved edge");
        adjacency.entry(e.a).or_default().insert(e.b, t);
        adjacency.entry(e.b).or_default().insert(e.a, t.inverse());
    }

    let mut visited = BTreeSet::new();
    let mut merged = Vec::new();
    for &root in &resolved.nodes {
        if visited.contains(&root) {
            continue;
        }
        let mut transforms = BTreeMap::new();
        let mut tree_edges = BTreeSet::new();
        transforms.insert(root, SimilarityTransform::identity());
        visited.insert(root);
        // Explicit stack of (node, neighbours still to try) keeps recursive DFS order.
        let mut stack: Vec<(u32, Vec<u32>)> = vec![(root, adjacency[&root].keys().rev().copied().collect())];
        while let Some((node, pending)) = stack.last_mut() {
            let node = *node;
            match pending.pop() {
                Some(next) if !visited.contains(&next) => {
                    visited.insert(next);
                    let to_parent = adjacency[&node][&next];
                    let to_root = transforms[&node].compose(&to_parent);
                    transforms.insert(next, to_root);
                    tree_edges.insert((node.min(next), node.max(next)));
                    stack.push((next, adjacency[&next].keys().rev().copied().collect()));
                }
                Some(_) => {}
                None => {
                    stack.pop();
                }
            }
        }
        merged.push(assemble(
            merged.len(),
            root,
            &transforms,
            &tree_edges,
            &resolved,
            &by_id,
            &dropped,
        ));
    }
    Ok(merged)
}

fn assemble(
    component_id: usize,
    root: u32,
    transforms: &BTreeMap<u32, SimilarityTransform>,
    tree_edges: &BTreeSet<(u32, u32)>,
    graph: &OverlapGraph,
    by_id: &BTreeMap<u32, &SubModel>,
    dropped: &[DroppedEdge],
) -> MergedModel {
    // Larger sub-models win frame conflicts; ties go to the lower id.
    let mut priority: Vec<u32> = transforms.keys().copied().collect();
    priority.sort_by_key(|id| (std::cmp::Reverse(by_id[id].poses.len()), *id));

    let mut intrinsics: BTreeMap<u32, CameraIntrinsics> = BTreeMap::new();
    let mut poses = BTreeMap::new();
    let mut source = BTreeMap::new();
    let mut span = (f64::INFINITY, f64::NEG_INFINITY);
    for id in &priority {
        let model = by_id[id];
        span.0 = span.0.min(model.clip_span.0);
        span.1 = span.1.max(model.clip_span.1);
        let mut camera_map = BTreeMap::new();
        for (cam_id, cam) in &model.intrinsics {
            let target = match intrinsics.get(cam_id) {
                None => *cam_id,
                Some(existing) if existing.model == cam.model
                    && existing.params == cam.params
                    && existing.width == cam.width
                    && existing.height == cam.height =>
                {
                    *cam_id
                }
                Some(_) => intrinsics.keys().next_back().map_or(1, |m| m + 1),
            };
            intrinsics.entry(target).or_insert_with(|| CameraIntrinsics {
                camera_id: target,
                ..cam.clone()
            });
            camera_map.insert(*cam_id, target);
        }
        let t = &transforms[id];
        for (frame, pose) in &model.poses {
            if poses.contains_key(frame) {
                continue;
            }
            let mut moved = t.apply_pose(pose);
            moved.camera_id = camera_map.get(&pose.camera_id).copied().unwrap_or(pose.camera_id);
            poses.insert(*frame, moved);
            source.insert(*frame, *id);
        }
    }

    let mut residuals = Vec::new();
    for e in &graph.edges {
        let (Some(ta), Some(tb)) = (transforms.get(&e.a), transforms.get(&e.b)) else {
            continue;
        };
        let (ma, mb) = (by_id[&e.a], by_id[&e.b]);
        let sum: f64 = e
            .shared
            .iter()
            .map(|f| {
                let ca = ta.apply_point(&view_state(&ma.poses[f]).position);
                let cb = tb.apply_point(&view_state(&mb.poses[f]).position);
                (ca - cb).norm_squared()
            })
            .sum();
        residuals.push(EdgeResidual {
            a: e.a,
            b: e.b,
            shared_frames: e.shared.len(),
            rms: (sum / e.shared.len() as f64).sqrt(),
            tree_edge: tree_edges.contains(&(e.a, e.b)),
        });
    }

    let members: BTreeSet<u32> = transforms.keys().copied().collect();
    MergedModel {
        component_id,
        root_model_id: root,
        model_ids: members.iter().copied().collect(),
        poses,
        intrinsics,
        source,
        transforms: transforms.clone(),
        alignment_residuals: residuals,
        dropped_edges: dropped
            .iter()
            .filter(|d| members.contains(&d.a) || members.contains(&d.b))
            .cloned()
            .collect(),
        clip_span: if span.0.is_finite() { span } else { (0.0, 0.0) },
    }
}

/// Builds the overlap graph and merges it in one call.
pub fn merge_submodels(
    submodels: &[SubModel],
    min_shared: usize,
) -> Result<Vec<MergedModel>, MergeError> {
    let graph = build_overlap_graph(submodels, min_shared)?;
    merge_components(&graph, submodels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colmap::{default_image_name, CameraModel};
    use crate::geometry::yaw_camera_rotation;
    use nalgebra::UnitQuaternion;

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics {
            camera_id: 1,
            model: CameraModel::PINHOLE,
            width: 640,
            height: 360,
            params: vec![400.0, 400.0, 320.0, 180.0],
        }
    }

    /// Sub-model whose camera centers are `center(f)` after `world_to_model`.
    fn model_from(
        id: u32,
        frames: impl IntoIterator<Item = u32>,
        world_to_model: &SimilarityTransform,
    ) -> SubModel {
        let mut m = SubModel::empty(id);
        m.intrinsics.insert(1, camera());
        for f in frames {
            let c = Vec3::new(f as f64 * 0.5, (f as f64 * 0.3).sin(), f as f64 * 0.1);
            let rotation = yaw_camera_rotation(f as f64 * 7.0);
            let world_pose = CameraPose {
                image_id: f + 1,
                frame_index: f,
                rotation,
                translation: -(rotation * c),
                camera_id: 1,
                name: default_image_name(f),
            };
            m.poses.insert(f, world_to_model.apply_pose(&world_pose));
        }
        m.clip_span = m.frame_span(3.0);
        m
    }

    fn shifted(x: f64) -> SimilarityTransform {
        SimilarityTransform::new(1.0, UnitQuaternion::identity(), Vec3::new(x, 0.0, 0.0))
    }

    #[test]
    fn single_model_graph() {
        let g = build_overlap_graph(&[model_from(0, 0..5, &shifted(0.0))], 3).unwrap();
        assert_eq!(g.nodes, vec![0]);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn three_shared_frames_make_an_edge_two_do_not() {
        let id = SimilarityTransform::identity();
        let a = model_from(0, 0..33, &id);
        let b = model_from(1, 30..60, &id);
        let g = build_overlap_graph(&[a.clone(), b], 3).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].shared, BTreeSet::from([30, 31, 32]));

        let c = model_from(1, 31..60, &id);
        let g = build_overlap_graph(&[a, c], 3).unwrap();
        assert!(g.edges.is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let m = model_from(4, 0..3, &shifted(0.0));
        assert!(matches!(
            build_overlap_graph(&[m.clone(), m], 3),
            Err(MergeError::InvalidInput(_))
        ));
    }

    #[test]
    fn empty_input_gives_empty_output() {
        assert!(merge_submodels(&[], 3).unwrap().is_empty());
    }

    #[test]
    fn translated_second_model_is_shifted_back() {
        let a = model_from(0, 0..33, &SimilarityTransform::identity());
        let b = model_from(1, 30..60, &shifted(1.0));
        let merged = merge_submodels(&[a.clone(), b.clone()], 3).unwrap();
        assert_eq!(merged.len(), 1);
        let m = &merged[0];
        assert_eq!(m.poses.len(), 60);
        for f in 33..60 {
            let got = view_state(&m.poses[&f]).position;
            let in_b = view_state(&b.poses[&f]).position;
            assert!((got - (in_b - Vec3::x())).norm() < 1e-6, "frame {f}");
            assert_eq!(m.source[&f], 1);
        }
        assert!(m.alignment_residuals.iter().all(|r| r.rms <= 1e-6));
        // a has 33 frames, b 30: a wins the shared frames.
        assert_eq!(m.source[&31], 0);
    }

    #[test]
    fn chain_composes_edge_transforms() {
        let t1 = SimilarityTransform::new(
            2.0,
            UnitQuaternion::from_euler_angles(0.1, 0.5, -0.2),
            Vec3::new(1.0, 2.0, 3.0),
        );
        let t2 = SimilarityTransform::new(
            0.7,
            UnitQuaternion::from_euler_angles(-0.3, 0.2, 0.9),
            Vec3::new(-4.0, 0.0, 1.0),
        );
        let a = model_from(0, 0..20, &SimilarityTransform::identity());
        let b = model_from(1, 15..40, &t1);
        let c = model_from(2, 35..60, &t2);
        let merged = merge_submodels(&[c, a, b], 3).unwrap();
        assert_eq!(merged.len(), 1);
        let m = &merged[0];
        assert_eq!(m.poses.len(), 60);
        let edge_ab = t1.inverse();
        let edge_bc = t1.compose(&t2.inverse());
        let expected_c = edge_ab.compose(&edge_bc);
        let got_c = m.transforms[&2];
        let p = Vec3::new(0.3, 1.0, -2.0);
        assert!((got_c.apply_point(&p) - expected_c.apply_point(&p)).norm() < 1e-9);
        for f in 0..60 {
            let c = Vec3::new(f as f64 * 0.5, (f as f64 * 0.3).sin(), f as f64 * 0.1);
            assert!((view_state(&m.poses[&f]).position - c).norm() < 1e-9);
        }
    }

    #[test]
    fn disjoint_models_stay_separate() {
        let a = model_from(3, 0..10, &shifted(0.0));
        let b = model_from(1, 20..30, &shifted(5.0));
        let merged = merge_submodels(&[a, b], 3).unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].root_model_id, 1);
        assert_eq!(merged[1].root_model_id, 3);
    }

    #[test]
    fn degenerate_overlap_drops_edge() {
        // Shared frames with coincident centers cannot be aligned.
        let mut a = model_from(0, 0..10, &shifted(0.0));
        let mut b = model_from(1, 7..20, &shifted(2.0));
        for f in 7..10 {
            for m in [&mut a, &mut b] {
                let p = m.poses.get_mut(&f).unwrap();
                p.translation = -(p.rotation * Vec3::new(1.0, 1.0, 1.0));
            }
        }
        let merged = merge_submodels(&[a, b], 3).unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].dropped_edges.len(), 1);
    }

    #[test]
    fn input_order_does_not_matter() {
        let t = SimilarityTransform::new(
            1.3,
            UnitQuaternion::from_euler_angles(0.2, 0.1, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        );
        let a = model_from(0, 0..20, &SimilarityTransform::identity());
        let b = model_from(1, 15..40, &t);
        let c = model_from(2, 100..120, &t);
        let one = merge_submodels(&[a.clone(), b.clone(), c.clone()], 3).unwrap();
        let two = merge_submodels(&[c, b, a], 3).unwrap();
        assert_eq!(one, two);
    }
}
