use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! opaque_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

opaque_id!(
    /// Identifies a child's avatar. The avatar id doubles as the child id.
    AvatarId
);
opaque_id!(FrameworkId);
opaque_id!(EpisodeId);
opaque_id!(PageId);
opaque_id!(RecordId);
opaque_id!(SessionId);
opaque_id!(EventId);
opaque_id!(JobId);
opaque_id!(
    /// Content address of a stored media blob (hex sha-256).
    AssetId
);

/// Children are identified by their avatar.
pub type ChildId = AvatarId;
