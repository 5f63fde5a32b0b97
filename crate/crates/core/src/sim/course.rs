//! Topological course: an ordered list of goal poses, optionally closed into a loop.

use crate::geometry::{dist, point_segment_distance, Point2, Pose2};
use serde::{Deserialize, Serialize};

/// Upper bound on the gap between consecutive nodes.
pub const MAX_NODE_SPACING: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopoCourse {
    pub nodes: Vec<Pose2>,
    /// When set the last node is followed by node 0.
    pub looped: bool,
}

impl TopoCourse {
    pub fn new(nodes: Vec<Pose2>, looped: bool) -> Self {
        Self { nodes, looped }
    }

    /// Samples nodes evenly along a polyline; headings follow the path tangent.
    pub fn from_path(path: &[Point2], looped: bool, spacing: f64) -> Self {
        let mut pts = path.to_vec();
        if looped && pts.len() > 1 && pts.first() != pts.last() {
            pts.push(pts[0]);
        }
        let total = polyline_length(&pts);
        let count = (total / spacing.min(MAX_NODE_SPACING)).ceil().max(1.0) as usize;
        let step = total / count as f64;
        let n = if looped { count } else { count + 1 };
        let nodes = (0..n)
            .map(|k| {
                let (p, heading) = point_at(&pts, k as f64 * step);
                Pose2::new(p[0], p[1], heading)
            })
            .collect();
        Self { nodes, looped }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node index that follows `i`, or `i` itself at the end of an open course.
    pub fn successor(&self, i: usize) -> usize {
        if i + 1 < self.nodes.len() {
            i + 1
        } else if self.looped {
            0
        } else {
            i
        }
    }

    /// Nearest node, ties broken toward the larger index.
    pub fn nearest(&self, p: Point2) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = dist(n.position(), p);
            if d <= best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Closed (if looped) node polyline.
    pub fn polyline(&self) -> Vec<Point2> {
        let mut pts: Vec<Point2> = self.nodes.iter().map(Pose2::position).collect();
        if self.looped && !pts.is_empty() {
            pts.push(pts[0]);
        }
        pts
    }

    pub fn lateral_deviation(&self, p: Point2) -> f64 {
        let line = self.polyline();
        if line.len() == 1 {
            return dist(p, line[0]);
        }
        line.windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Shortest path length of one traversal along the nodes.
    pub fn length(&self) -> f64 {
        polyline_length(&self.polyline())
    }

    /// Cumulative path length at each node.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut s = vec![0.0];
        for w in self.nodes.windows(2) {
            s.push(s.last().unwrap() + w[0].distance_to(&w[1]));
        }
        s
    }

    /// Pose on the node polyline at path length `s` (wrapped on loops).
    pub fn pose_at(&self, s: f64) -> Pose2 {
        let line = self.polyline();
        let total = polyline_length(&line);
        let s = if self.looped { s.rem_euclid(total) } else { s.clamp(0.0, total) };
        let (p, h) = point_at(&line, s);
        Pose2::new(p[0], p[1], h)
    }

    /// Signed forward progress from node `from` to node `to`, in node counts.
    pub fn progress(&self, from: usize, to: usize) -> i64 {
        let n = self.nodes.len() as i64;
        let d = to as i64 - from as i64;
        if !self.looped || n == 0 {
            return d;
        }
        let d = d.rem_euclid(n);
        if d > n / 2 {
            d - n
        } else {
            d
        }
    }
}

/// Current node and subgoal for a position.
pub fn advance_subgoal(course: &TopoCourse, p: Point2) -> (usize, usize) {
    let i_c = course.nearest(p);
    (i_c, course.successor(i_c))
}

pub fn polyline_length(pts: &[Point2]) -> f64 {
    pts.windows(2).map(|w| dist(w[0], w[1])).sum()
}

fn point_at(pts: &[Point2], s: f64) -> (Point2, f64) {
    if pts.len() < 2 {
        return (pts.first().copied().unwrap_or([0.0, 0.0]), 0.0);
    }
    let mut rem = s.max(0.0);
    for w in pts.windows(2) {
        let l = dist(w[0], w[1]);
        let heading = (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]);
        if rem <= l || l == 0.0 && rem == 0.0 {
            let t = if l > 0.0 { rem / l } else { 0.0 };
            return ([w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])], heading);
        }
        rem -= l;
    }
    let w = &pts[pts.len() - 2..];
    (w[1], (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_course() -> TopoCourse {
        TopoCourse::new((0..6).map(|i| Pose2::new(i as f64, 0.0, 0.0)).collect(), false)
    }

    #[test]
    fn exact_hit_on_node_three() {
        let (i, g) = advance_subgoal(&line_course(), [3.0, 0.0]);
        assert_eq!((i, g), (3, 4));
    }

    #[test]
    fn midway_nearer_four() {
        assert_eq!(advance_subgoal(&line_course(), [3.6, 0.1]).0, 4);
    }

    #[test]
    fn exact_midpoint_ties_forward() {
        assert_eq!(advance_subgoal(&line_course(), [3.5, 0.0]).0, 4);
    }

    #[test]
    fn loop_wraps_to_first_node() {
        let sq = [[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]];
        let c = TopoCourse::from_path(&sq, true, 1.5);
        let last = c.len() - 1;
        let (i, g) = advance_subgoal(&c, c.nodes[last].position());
        assert_eq!((i, g), (last, 0));
        assert_eq!(c.pose_at(c.length()).position(), c.nodes[0].position());
    }

    #[test]
    fn generated_spacing_is_bounded() {
        let sq = [[0.0, 0.0], [10.0, 0.0], [10.0, 6.0], [0.0, 6.0]];
        let c = TopoCourse::from_path(&sq, true, 1.5);
        for k in 0..c.len() {
            let d = c.nodes[k].distance_to(&c.nodes[c.successor(k)]);
            assert!(d <= MAX_NODE_SPACING + 1e-12);
        }
        assert!((c.length() - 32.0).abs() < 1.0);
    }

    #[test]
    fn open_course_end_is_absorbing() {
        let c = line_course();
        assert_eq!(c.successor(5), 5);
    }

    #[test]
    fn progress_wraps() {
        let sq = [[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]];
        let c = TopoCourse::from_path(&sq, true, 1.0);
        let n = c.len();
        assert_eq!(c.progress(n - 1, 0), 1);
        assert_eq!(c.progress(0, n - 1), -1);
    }
}
