//! Room-type vocabulary and temporal smoothing.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::AnnotateError;
use crate::colmap::FrameIndex;

/// Upper bound on smoothing passes; real sequences settle in a handful.
const MAX_SMOOTHING_PASSES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RoomType {
    Bathroom,
    Kitchen,
    Bedroom,
    LivingRoom,
    Hallway,
    Office,
    DiningRoom,
    Foyer,
    LaundryRoom,
    Outside,
    Porch,
    Garage,
    Front,
    Patio,
    Driveway,
    Backyard,
}

impl RoomType {
    pub const ALL: [RoomType; 16] = [
        RoomType::Bathroom,
        RoomType::Kitchen,
        RoomType::Bedroom,
        RoomType::LivingRoom,
        RoomType::Hallway,
        RoomType::Office,
        RoomType::DiningRoom,
        RoomType::Foyer,
        RoomType::LaundryRoom,
        RoomType::Outside,
        RoomType::Porch,
        RoomType::Garage,
        RoomType::Front,
        RoomType::Patio,
        RoomType::Driveway,
        RoomType::Backyard,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RoomType::Bathroom => "bathroom",
            RoomType::Kitchen => "kitchen",
            RoomType::Bedroom => "bedroom",
            RoomType::LivingRoom => "living room",
            RoomType::Hallway => "hallway",
            RoomType::Office => "office",
            RoomType::DiningRoom => "dining room",
            RoomType::Foyer => "foyer",
            RoomType::LaundryRoom => "laundry room",
            RoomType::Outside => "outside",
            RoomType::Porch => "porch",
            RoomType::Garage => "garage",
            RoomType::Front => "front",
            RoomType::Patio => "patio",
            RoomType::Driveway => "driveway",
            RoomType::Backyard => "backyard",
        }
    }
}

impl fmt::Display for RoomType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoomType {
    type Err = AnnotateError;

    /// Case-insensitive; underscores and runs of whitespace count as one space.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s
            .replace('_', " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase();
        RoomType::ALL
            .into_iter()
            .find(|r| r.as_str() == norm)
            .ok_or_else(|| AnnotateError::Vocabulary(s.to_string()))
    }
}

impl Serialize for RoomType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RoomType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSequence {
    pub labels: Vec<(FrameIndex, RoomType)>,
    pub smoothed: bool,
}

impl RoomSequence {
    /// Room at `frame`, falling back to the nearest labeled frame (earlier on ties).
    pub fn room_at(&self, frame: FrameIndex) -> Option<RoomType> {
        match self.labels.binary_search_by_key(&frame, |(f, _)| *f) {
            Ok(i) => Some(self.labels[i].1),
            Err(i) => {
                let before = i.checked_sub(1).map(|j| self.labels[j]);
                let after = self.labels.get(i).copied();
                match (before, after) {
                    (Some(b), Some(a)) => {
                        if frame - b.0 <= a.0 - frame {
                            Some(b.1)
                        } else {
                            Some(a.1)
                        }
                    }
                    (Some(b), None) => Some(b.1),
                    (None, Some(a)) => Some(a.1),
                    (None, None) => None,
                }
            }
        }
    }
}

/// Centered majority vote over `window` frames, truncated at the ends.
///
/// A tie keeps the previous smoothed label (the raw label for the first
/// frame). Passes repeat until nothing changes so the result is a fixed point
/// and smoothing it again is a no-op.
pub fn smooth_room_labels(raw: &[(FrameIndex, &str)], window: usize) -> Result<RoomSequence, AnnotateError> {
    if window == 0 || window % 2 == 0 {
        return Err(AnnotateError::InvalidWindow(window));
    }
    let mut labels: Vec<(FrameIndex, RoomType)> = raw
        .iter()
        .map(|(f, r)| r.parse().map(|room| (*f, room)))
        .collect::<Result<_, _>>()?;
    labels.sort_by_key(|(f, _)| *f);
    let mut rooms: Vec<RoomType> = labels.iter().map(|(_, r)| *r).collect();
    for _ in 0..MAX_SMOOTHING_PASSES {
        let next = smoothing_pass(&rooms, window);
        if next == rooms {
            break;
        }
        rooms = next;
    }
    Ok(RoomSequence {
        labels: labels.iter().map(|(f, _)| *f).zip(rooms).collect(),
        smoothed: true,
    })
}

fn smoothing_pass(rooms: &[RoomType], window: usize) -> Vec<RoomType> {
    let half = window / 2;
    let mut out: Vec<RoomType> = Vec::with_capacity(rooms.len());
    for i in 0..rooms.len() {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(rooms.len());
        let mut counts: BTreeMap<RoomType, usize> = BTreeMap::new();
        for r in &rooms[lo..hi] {
            *counts.entry(*r).or_default() += 1;
        }
        let best = counts.values().copied().max().unwrap_or(0);
        let winners: Vec<RoomType> = counts.iter().filter(|(_, c)| **c == best).map(|(r, _)| *r).collect();
        let label = if winners.len() == 1 {
            winners[0]
        } else {
            let keep = out.last().copied().unwrap_or(rooms[i]);
            if winners.contains(&keep) {
                keep
            } else if winners.contains(&rooms[i]) {
                rooms[i]
            } else {
                winners[0]
            }
        };
        out.push(label);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(names: &[&'static str]) -> Vec<(FrameIndex, &'static str)> {
        names.iter().enumerate().map(|(i, n)| (i as FrameIndex, *n)).collect()
    }

    fn rooms(s: &RoomSequence) -> Vec<RoomType> {
        s.labels.iter().map(|(_, r)| *r).collect()
    }

    #[test]
    fn vocabulary_has_sixteen_distinct_names() {
        let mut names: Vec<_> = RoomType::ALL.iter().map(|r| r.as_str()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 16);
        assert_eq!("Living_Room".parse::<RoomType>().unwrap(), RoomType::LivingRoom);
    }

    #[test]
    fn constant_sequence_unchanged() {
        let s = smooth_room_labels(&seq(&["kitchen"; 10]), 5).unwrap();
        assert_eq!(rooms(&s), vec![RoomType::Kitchen; 10]);
        assert!(s.smoothed);
    }

    #[test]
    fn isolated_outlier_removed() {
        let s = smooth_room_labels(&seq(&["kitchen", "kitchen", "bathroom", "kitchen", "kitchen"]), 5).unwrap();
        assert_eq!(rooms(&s), vec![RoomType::Kitchen; 5]);
    }

    #[test]
    fn unknown_room_named_in_error() {
        let err = smooth_room_labels(&seq(&["kitchen", "spaceship"]), 5).unwrap_err();
        assert!(matches!(&err, AnnotateError::Vocabulary(name) if name == "spaceship"));
        assert!(err.to_string().contains("spaceship"));
    }

    #[test]
    fn even_window_rejected() {
        assert!(matches!(
            smooth_room_labels(&seq(&["kitchen"]), 4),
            Err(AnnotateError::InvalidWindow(4))
        ));
    }

    #[test]
    fn first_frame_tie_keeps_raw() {
        // Window of 3 at frame 0 sees [bedroom, office]: a tie.
        let s = smooth_room_labels(&seq(&["office", "bedroom"]), 3).unwrap();
        assert_eq!(rooms(&s)[0], RoomType::Office);
    }

    #[test]
    fn room_at_uses_nearest_label() {
        let s = RoomSequence {
            labels: vec![(0, RoomType::Kitchen), (10, RoomType::Hallway)],
            smoothed: true,
        };
        assert_eq!(s.room_at(4), Some(RoomType::Kitchen));
        assert_eq!(s.room_at(5), Some(RoomType::Kitchen));
        assert_eq!(s.room_at(6), Some(RoomType::Hallway));
        assert_eq!(s.room_at(99), Some(RoomType::Hallway));
    }

    proptest! {
        #[test]
        fn smoothing_is_idempotent(
            idx in proptest::collection::vec(0usize..4, 0..40),
            half in 0usize..4,
        ) {
            let window = 2 * half + 1;
            let names: Vec<&'static str> = idx.iter().map(|i| RoomType::ALL[*i].as_str()).collect();
            let once = smooth_room_labels(&seq(&names), window).unwrap();
            let again_in: Vec<(FrameIndex, &str)> =
                once.labels.iter().map(|(f, r)| (*f, r.as_str())).collect();
            let twice = smooth_room_labels(&again_in, window).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
