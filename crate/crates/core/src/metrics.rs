//! Target-centric tracking metrics.
//!
//! M1 is the fraction of annotated frames in which the target is tracked,
//! M2 the inverse of the number of distinct ids the target was tracked
//! under, M3 the mean planar localization error over tracked frames.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::WorldPoint;
use crate::sim::GroundTruthFrame;
use crate::tracker::TrackFrame;

pub const DEFAULT_MATCH_RADIUS: f64 = 0.5;

/// Outcome for one annotated frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMatch {
    pub frame: u64,
    pub matched: bool,
    pub track_id: Option<u64>,
    pub gt_pos: WorldPoint,
    pub est_pos: Option<WorldPoint>,
}

impl FrameMatch {
    /// Planar error of a matched frame.
    pub fn error(&self) -> Option<f64> {
        match (self.matched, self.est_pos) {
            (true, Some(e)) => Some(e.planar_distance(&self.gt_pos)),
            _ => None,
        }
    }
}

/// Pairs each annotated frame with the target-flagged track.
///
/// Every ground-truth frame must appear in the track stream; track frames
/// without annotation are ignored. Ground-truth frames without a target
/// agent are skipped.
pub fn match_frames(gt: &[GroundTruthFrame], tracks: &[TrackFrame], match_radius: f64) -> Result<Vec<FrameMatch>> {
    if !(match_radius > 0.0) {
        return Err(Error::Config("match radius must be positive".into()));
    }
    let by_frame: HashMap<u64, &TrackFrame> = tracks.iter().map(|t| (t.frame, t)).collect();
    let mut out = Vec::with_capacity(gt.len());
    for g in gt {
        let Some(target) = g.target() else {
            continue;
        };
        let tf = by_frame
            .get(&g.frame)
            .ok_or_else(|| Error::Input(format!("frame {} has ground truth but no tracks", g.frame)))?;
        let gt_pos = WorldPoint::new(target.x, target.y, 0.0);
        let est = tf.tracks.iter().find(|t| t.is_target);
        let m = match est {
            Some(t) => {
                let est_pos = WorldPoint::new(t.x, t.y, 0.0);
                let matched = est_pos.planar_distance(&gt_pos) <= match_radius;
                FrameMatch {
                    frame: g.frame,
                    matched,
                    track_id: matched.then_some(t.id),
                    gt_pos,
                    est_pos: matched.then_some(est_pos),
                }
            }
            None => FrameMatch {
                frame: g.frame,
                matched: false,
                track_id: None,
                gt_pos,
                est_pos: None,
            },
        };
        out.push(m);
    }
    Ok(out)
}

pub fn m1(matches: &[FrameMatch]) -> Result<f64> {
    if matches.is_empty() {
        return Err(Error::UndefinedMetric("m1 needs at least one annotated frame"));
    }
    Ok(matches.iter().filter(|m| m.matched).count() as f64 / matches.len() as f64)
}

/// Number of distinct track ids over matched frames.
pub fn fragments(matches: &[FrameMatch]) -> usize {
    matches
        .iter()
        .filter(|m| m.matched)
        .filter_map(|m| m.track_id)
        .collect::<BTreeSet<_>>()
        .len()
}

/// `1 / fragments`, or 0 when the target was never tracked.
pub fn m2(matches: &[FrameMatch]) -> Result<f64> {
    if matches.is_empty() {
        return Err(Error::UndefinedMetric("m2 needs at least one annotated frame"));
    }
    Ok(match fragments(matches) {
        0 => 0.0,
        n => 1.0 / n as f64,
    })
}

pub fn m3(matches: &[FrameMatch]) -> Result<f64> {
    let errs: Vec<f64> = matches.iter().filter_map(FrameMatch::error).collect();
    if errs.is_empty() {
        return Err(Error::UndefinedMetric("m3 needs at least one matched frame"));
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// One range bin of the error curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    pub bin_center_m: f64,
    /// Mean error over matched frames; absent when none matched.
    pub mean_error_m: Option<f64>,
    /// Matched frames.
    pub count: usize,
    /// All annotated frames in the bin.
    pub total: usize,
    pub miss_rate: f64,
}

/// Localization error and miss rate binned by ground-truth range.
///
/// Bin `i` covers `[i w, (i + 1) w)`; only bins with at least one frame are
/// reported, in increasing range.
pub fn error_vs_distance(matches: &[FrameMatch], bin_width: f64) -> Result<Vec<DistanceBin>> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::Config("bin width must be positive".into()));
    }
    // (error sum, matched, total)
    let mut bins: BTreeMap<u64, (f64, usize, usize)> = BTreeMap::new();
    for m in matches {
        let idx = (m.gt_pos.ground_range() / bin_width).floor() as u64;
        let b = bins.entry(idx).or_default();
        b.2 += 1;
        if let Some(e) = m.error() {
            b.0 += e;
            b.1 += 1;
        }
    }
    Ok(bins
        .into_iter()
        .map(|(i, (sum, count, total))| DistanceBin {
            bin_center_m: (i as f64 + 0.5) * bin_width,
            mean_error_m: (count > 0).then(|| sum / count as f64),
            count,
            total,
            miss_rate: (total - count) as f64 / total as f64,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub m1: f64,
    pub m2: f64,
    /// Absent when the target was never tracked.
    pub m3: Option<f64>,
    pub fragments: usize,
    pub annotated_frames: usize,
    pub matched_frames: usize,
    pub match_radius: f64,
    pub matches: Vec<FrameMatch>,
    pub error_vs_distance: Vec<DistanceBin>,
}

pub fn evaluate(gt: &[GroundTruthFrame], tracks: &[TrackFrame], match_radius: f64, bin_width: f64) -> Result<EvalReport> {
    let matches = match_frames(gt, tracks, match_radius)?;
    if matches.is_empty() {
        return Err(Error::Input("ground truth contains no annotated target".into()));
    }
    Ok(EvalReport {
        m1: m1(&matches)?,
        m2: m2(&matches)?,
        m3: m3(&matches).ok(),
        fragments: fragments(&matches),
        annotated_frames: matches.len(),
        matched_frames: matches.iter().filter(|m| m.matched).count(),
        match_radius,
        error_vs_distance: error_vs_distance(&matches, bin_width)?,
        matches,
    })
}

/// CSV rendering of an error curve; empty bins have an empty error field.
pub fn curve_csv(bins: &[DistanceBin]) -> String {
    let mut s = String::from("bin_center_m,mean_error_m,count,miss_rate\n");
    for b in bins {
        let err = b.mean_error_m.map(|e| e.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{},{}", b.bin_center_m, err, b.count, b.miss_rate).expect("writing to a String");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::GroundTruthAgent;
    use crate::tracker::{TrackRecord, TrackStatus};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn gt(frame: u64, x: f64, y: f64) -> GroundTruthFrame {
        GroundTruthFrame {
            frame,
            t: frame as f64 / 30.0,
            agents: vec![GroundTruthAgent { id: 0, x, y, joints: Default::default(), is_target: true }],
        }
    }

    fn tf(frame: u64, est: Option<(u64, f64, f64)>) -> TrackFrame {
        TrackFrame {
            frame,
            t: frame as f64 / 30.0,
            tracks: est
                .map(|(id, x, y)| TrackRecord {
                    id,
                    x,
                    y,
                    h: 1.45,
                    img_x: 0.0,
                    img_y: 0.0,
                    status: TrackStatus::Confirmed,
                    is_target: true,
                })
                .into_iter()
                .collect(),
        }
    }

    fn fm(frame: u64, id: Option<u64>, range: f64, err: f64) -> FrameMatch {
        FrameMatch {
            frame,
            matched: id.is_some(),
            track_id: id,
            gt_pos: WorldPoint::new(range, 0.0, 0.0),
            est_pos: id.map(|_| WorldPoint::new(range + err, 0.0, 0.0)),
        }
    }

    #[test]
    fn matching_examples() {
        let g: Vec<_> = (0..5).map(|k| gt(k, 2.0, 0.0)).collect();
        let perfect: Vec<_> = (0..5).map(|k| tf(k, Some((1, 2.0, 0.0)))).collect();
        assert!(match_frames(&g, &perfect, 0.5).unwrap().iter().all(|m| m.matched));
        let empty: Vec<_> = (0..5).map(|k| tf(k, None)).collect();
        assert!(match_frames(&g, &empty, 0.5).unwrap().iter().all(|m| !m.matched));
        let off: Vec<_> = (0..5).map(|k| tf(k, Some((1, 2.6, 0.0)))).collect();
        assert!(match_frames(&g, &off, 0.5).unwrap().iter().all(|m| !m.matched));
    }

    #[test]
    fn sparse_annotations_and_mismatch() {
        let g = vec![gt(0, 2.0, 0.0), gt(10, 2.0, 0.0)];
        let tracks: Vec<_> = (0..20).map(|k| tf(k, Some((1, 2.0, 0.0)))).collect();
        assert_eq!(match_frames(&g, &tracks, 0.5).unwrap().len(), 2);
        assert!(matches!(match_frames(&g, &tracks[..5], 0.5), Err(Error::Input(_))));
    }

    #[test]
    fn metric_examples() {
        let all: Vec<_> = (0..10).map(|k| fm(k, Some(1), 2.0, 0.3)).collect();
        assert_eq!(m1(&all).unwrap(), 1.0);
        assert_eq!(m2(&all).unwrap(), 1.0);
        assert_abs_diff_eq!(m3(&all).unwrap(), 0.3, epsilon = 1e-12);

        let half: Vec<_> = (0..10).map(|k| fm(k, (k < 5).then_some(1), 2.0, 0.0)).collect();
        assert_eq!(m1(&half).unwrap(), 0.5);

        let none: Vec<_> = (0..10).map(|k| fm(k, None, 2.0, 0.0)).collect();
        assert_eq!(m1(&none).unwrap(), 0.0);
        assert_eq!(m2(&none).unwrap(), 0.0);
        assert!(matches!(m3(&none), Err(Error::UndefinedMetric(_))));

        let two: Vec<_> = (0..10).map(|k| fm(k, Some(1 + k / 5), 2.0, 0.0)).collect();
        assert_eq!(m2(&two).unwrap(), 0.5);
        let three: Vec<_> = (0..9).map(|k| fm(k, Some(k / 3), 2.0, 0.0)).collect();
        assert_abs_diff_eq!(m2(&three).unwrap(), 1.0 / 3.0);

        let mixed = vec![fm(0, Some(1), 2.0, 0.1), fm(1, Some(1), 2.0, 0.3)];
        assert_abs_diff_eq!(m3(&mixed).unwrap(), 0.2, epsilon = 1e-12);
        assert!(m1(&[]).is_err());
    }

    #[test]
    fn curve_examples() {
        let all: Vec<_> = (0..10).map(|k| fm(k, Some(1), 2.0, 0.1)).collect();
        let c = error_vs_distance(&all, 0.5).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].bin_center_m, 2.25);
        assert_eq!(c[0].count, 10);

        let mixed = vec![fm(0, Some(1), 1.25, 0.25), fm(1, None, 5.3, 0.0)];
        let c = error_vs_distance(&mixed, 1.0).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].miss_rate, 1.0);
        assert_eq!(c[1].mean_error_m, None);
        assert_eq!(curve_csv(&c), "bin_center_m,mean_error_m,count,miss_rate\n1.5,0.25,1,0\n5.5,,0,1\n");
        assert!(error_vs_distance(&mixed, 0.0).is_err());
    }

    #[test]
    fn report_serializes_missing_m3_as_null() {
        let g = vec![gt(0, 2.0, 0.0)];
        let r = evaluate(&g, &[tf(0, None)], 0.5, 0.5).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert!(v["m3"].is_null());
        assert_eq!(v["m1"], 0.0);
    }

    fn arb_matches() -> impl Strategy<Value = Vec<FrameMatch>> {
        prop::collection::vec((prop::option::of(0u64..4), 0.5..9.0f64, 0.0..1.0f64), 1..60)
            .prop_map(|v| v.into_iter().enumerate().map(|(k, (id, r, e))| fm(k as u64, id, r, e)).collect())
    }

    proptest! {
        #[test]
        fn metric_ranges(ms in arb_matches()) {
            let a = m1(&ms).unwrap();
            let b = m2(&ms).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((0.0..=1.0).contains(&b));
            if let Ok(c) = m3(&ms) {
                prop_assert!(c >= 0.0);
            }
            prop_assert_eq!(b == 1.0, fragments(&ms) == 1);
        }

        #[test]
        fn m3_concatenation_is_weighted_mean(a in arb_matches(), b in arb_matches()) {
            let na = a.iter().filter(|m| m.matched).count() as f64;
            let nb = b.iter().filter(|m| m.matched).count() as f64;
            prop_assume!(na > 0.0 && nb > 0.0);
            let both: Vec<_> = a.iter().chain(b.iter()).copied().collect();
            let want = (m3(&a).unwrap() * na + m3(&b).unwrap() * nb) / (na + nb);
            prop_assert!((m3(&both).unwrap() - want).abs() < 1e-12);
        }

        #[test]
        fn curve_recomposes_m3(ms in arb_matches(), w in 0.1..3.0f64) {
            let curve = error_vs_distance(&ms, w).unwrap();
            prop_assert_eq!(curve.iter().map(|b| b.total).sum::<usize>(), ms.len());
            if let Ok(total) = m3(&ms) {
                let n: usize = curve.iter().map(|b| b.count).sum();
                let s: f64 = curve.iter().filter_map(|b| b.mean_error_m.map(|e| e * b.count as f64)).sum();
                prop_assert!((s / n as f64 - total).abs() < 1e-12);
            }
        }
    }
}
