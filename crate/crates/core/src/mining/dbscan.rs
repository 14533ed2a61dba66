//! Density-based clustering over 3-D positions.

use crate::geometry::Vec3;

pub const NOISE: i32 = -1;
const UNVISITED: i32 = -2;

/// Labels each point with a cluster id (`0, 1, ...`) or [`NOISE`].
///
/// Points are scanned in input order, so cluster ids follow the index of each
/// cluster's first core point and a border point reachable from several
/// clusters joins the one expanded first. Neighbourhoods are closed balls of
/// radius `eps` and include the point itself when counting `min_pts`.
pub fn dbscan(points: &[Vec3], eps: f64, min_pts: usize) -> Vec<i32> {
    assert!(eps > 0.0, "eps must be positive");
    let min_pts = min_pts.max(1);
    let eps2 = eps * eps;
    let region = |i: usize| -> Vec<usize> {
        points
            .iter()
            .enumerate()
            .filter(|(_, q)| (*q - points[i]).norm_squared() <= eps2)
            .map(|(j, _)| j)
            .collect()
    };

    let mut labels = vec![UNVISITED; points.len()];
    let mut next_cluster = 0;
    for i in 0..points.len() {
        if labels[i] != UNVISITED {
            continue;
        }
        let neighbors = region(i);
        if neighbors.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[i] = cluster;
        let mut queue: std::collections::VecDeque<usize> = neighbors.into();
        while let Some(q) = queue.pop_front() {
            if labels[q] == NOISE {
                labels[q] = cluster;
                continue;
            }
            if labels[q] != UNVISITED {
                continue;
            }
            labels[q] = cluster;
            let expansion = region(q);
            if expansion.len() >= min_pts {
                queue.extend(expansion);
            }
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input() {
        assert!(dbscan(&[], 1.0, 2).is_empty());
    }

    #[test]
    fn isolated_point_is_noise() {
        assert_eq!(dbscan(&[Vec3::zeros()], 1.0, 2), vec![NOISE]);
        assert_eq!(dbscan(&[Vec3::zeros()], 1.0, 1), vec![0]);
    }

    #[test]
    fn two_separated_groups() {
        let eps = 0.5;
        let mut pts = Vec::new();
        for base in [0.0, 10.0 * eps] {
            for k in 0..5 {
                pts.push(Vec3::new(base + 0.05 * k as f64, 0.0, 0.0));
            }
        }
        let labels = dbscan(&pts, eps, 2);
        assert_eq!(labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn border_point_goes_to_first_cluster() {
        // 2 is within eps of both 1 (core of cluster 0) and 3 (core of cluster 1)
        // but has only those two neighbours plus itself below min_pts = 4.
        let pts = vec![
            Vec3::new(-0.5, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.9, 0.0, 0.0),
            Vec3::new(1.8, 0.0, 0.0),
            Vec3::new(2.3, 0.0, 0.0),
            Vec3::new(-0.4, 0.1, 0.0),
            Vec3::new(2.2, 0.1, 0.0),
        ];
        let labels = dbscan(&pts, 1.0, 4);
        assert_eq!(labels[1], labels[0]);
        assert_eq!(labels[3], labels[4]);
        assert_ne!(labels[0], labels[3]);
        assert_eq!(labels[2], labels[1]);
    }
}
