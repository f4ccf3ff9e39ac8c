//! Document-local identifiers.
//!
//! Every identifier is a prefixed sequence number (`s3`, `c1`, `v2`, ...)
//! allocated by the owning session in creation order, so replaying an event
//! log reproduces the same identifiers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid identifier {0:?}")]
pub struct InvalidId(pub String);

macro_rules! local_id {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(pub u64);

        impl $name {
            pub const PREFIX: &'static str = $prefix;
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}{}", $prefix, self.0)
            }
        }

        impl FromStr for $name {
            type Err = InvalidId;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                s.strip_prefix($prefix)
                    .and_then(|n| n.parse().ok())
                    .map($name)
                    .ok_or_else(|| InvalidId(s.to_owned()))
            }
        }

        impl TryFrom<String> for $name {
            type Error = InvalidId;

            fn try_from(s: String) -> Result<Self, Self::Error> {
                s.parse()
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.to_string()
            }
        }
    };
}

local_id!(
    /// Identifies one suggestion record (one bound instance of an edit).
    SuggestionId,
    "s"
);
local_id!(CommentId, "c");
local_id!(BrainstormId, "b");
local_id!(MarkerId, "m");
local_id!(VerificationId, "v");

/// Engine-assigned time in milliseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn now() -> Self {
        let ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Timestamp(ms)
    }

    pub fn millis_since(self, earlier: Timestamp) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_and_parse() {
        assert_eq!(SuggestionId(12).to_string(), "s12");
        assert_eq!("v3".parse::<VerificationId>().unwrap(), VerificationId(3));
        assert!("s3".parse::<CommentId>().is_err());
        assert!("c".parse::<CommentId>().is_err());
    }

    #[test]
    fn serde_as_string() {
        let json = serde_json::to_string(&MarkerId(4)).unwrap();
        assert_eq!(json, "\"m4\"");
        let back: MarkerId = serde_json::from_str(&json).unwrap();
        assert_eq!(back, MarkerId(4));
    }
}
