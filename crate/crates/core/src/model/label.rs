use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// The six cry categories. Ids are fixed: `awake = 0` through `uncomfortable = 5`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmotionLabel {
    Awake,
    Diaper,
    Hug,
    Hungry,
    Sleepy,
    Uncomfortable,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 6] = [
        EmotionLabel::Awake,
        EmotionLabel::Diaper,
        EmotionLabel::Hug,
        EmotionLabel::Hungry,
        EmotionLabel::Sleepy,
        EmotionLabel::Uncomfortable,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Awake => "awake",
            EmotionLabel::Diaper => "diaper",
            EmotionLabel::Hug => "hug",
            EmotionLabel::Hungry => "hungry",
            EmotionLabel::Sleepy => "sleepy",
            EmotionLabel::Uncomfortable => "uncomfortable",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let t = s.trim();
        Self::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::UnknownLabel(t.to_string()))
    }
}
