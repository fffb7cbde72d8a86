use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PolicyGenError;

macro_rules! text_enum {
    ($name:ident, $field:literal { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$(Self::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $(Self::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = PolicyGenError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok(Self::$variant),)+
                    other => Err(PolicyGenError::InvalidField {
                        field: $field,
                        value: other.to_string(),
                    }),
                }
            }
        }
    };
}

text_enum!(Weather, "weather" { Sunny => "sunny", Rain => "rain", Fog => "fog", Snow => "snow", Night => "night" });
text_enum!(Traffic, "traffic" { Free => "free", Moderate => "moderate", Dense => "dense" });
text_enum!(Road, "road" { Straight => "straight", Curve => "curve", Intersection => "intersection" });

impl Weather {
    /// Conditions that call for a more conservative policy.
    pub fn is_adverse(&self) -> bool {
        !matches!(self, Self::Sunny)
    }
}

/// Structured stand-in for the camera view.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub weather: Weather,
    pub traffic: Traffic,
    pub road: Road,
    #[serde(default)]
    pub notes: String,
}

impl SceneDescriptor {
    pub fn new(weather: Weather, traffic: Traffic, road: Road) -> Self {
        Self {
            weather,
            traffic,
            road,
            notes: String::new(),
        }
    }

    /// One-line description; notes are JSON-quoted so they cannot break the line.
    pub fn render(&self) -> String {
        let mut s = format!("weather={}; traffic={}; road={}", self.weather, self.traffic, self.road);
        if !self.notes.is_empty() {
            s.push_str("; notes=");
            s.push_str(&serde_json::to_string(&self.notes).expect("string serialization cannot fail"));
        }
        s
    }
}

impl fmt::Display for SceneDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}
