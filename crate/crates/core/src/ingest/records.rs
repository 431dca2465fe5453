//! Domain records produced by the parsers.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};

use crate::geo::{GeoPoint, Polygon};

/// Lowercases, trims and collapses internal whitespace.
pub fn normalize_species(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal $(| $alias:literal)*),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                let key = s.trim().to_ascii_lowercase();
                match key.as_str() {
                    $($text $(| $alias)* => Ok($name::$variant),)+
                    _ => Err(format!(concat!("unknown ", stringify!($name), " '{}'"), s.trim())),
                }
            }
        }
    };
}

string_enum!(
    TreeStatus {
        Alive => "alive",
        Dead => "dead",
        Stump => "stump",
    }
);

string_enum!(
    /// Closed set of tree-related 311 complaint categories.
    ComplaintCategory {
        DeadTree => "dead_tree" | "dead tree",
        DamagedTree => "damaged_tree" | "damaged tree",
        Overgrown => "overgrown" | "overgrown tree",
        NewTreeRequest => "new_tree_request" | "new tree request",
        Other => "other",
    }
);

string_enum!(
    /// Allergen severity. Ordered so that `None < Low < Moderate < High`.
    Severity {
        None => "none",
        Low => "low",
        Moderate => "moderate",
        High => "high",
    }
);

string_enum!(
    Season {
        Winter => "winter",
        Spring => "spring",
        Summer => "summer",
        Fall => "fall" | "autumn",
    }
);

impl Season {
    /// Meteorological season of a calendar month (Dec-Feb is winter).
    pub fn of_month(month: u32) -> Season {
        match month {
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            9..=11 => Season::Fall,
            _ => Season::Winter,
        }
    }

    pub fn of_timestamp(ts: &DateTime<Utc>) -> Season {
        Season::of_month(ts.month())
    }
}

string_enum!(
    RegionKind {
        Nta => "nta",
        Zip => "zip",
        Uhf => "uhf",
    }
);

/// Bit set over the four seasons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SeasonSet(u8);

impl SeasonSet {
    pub fn empty() -> Self {
        SeasonSet(0)
    }

    fn bit(s: Season) -> u8 {
        1 << (s as u8)
    }

    pub fn insert(&mut self, s: Season) {
        self.0 |= Self::bit(s);
    }

    pub fn contains(&self, s: Season) -> bool {
        self.0 & Self::bit(s) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Season> + '_ {
        Season::ALL.iter().copied().filter(|s| self.contains(*s))
    }
}

impl FromIterator<Season> for SeasonSet {
    fn from_iter<T: IntoIterator<Item = Season>>(iter: T) -> Self {
        let mut set = SeasonSet::empty();
        for s in iter {
            set.insert(s);
        }
        set
    }
}

impl fmt::Display for SeasonSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(|s| s.as_str()).collect();
        f.write_str(&names.join(";"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeRecord {
    pub tree_id: String,
    pub location: GeoPoint,
    pub species: String,
    /// Diameter at breast height, inches.
    pub dbh: f64,
    pub status: TreeStatus,
    pub nta_id: String,
    pub zip: String,
}

impl TreeRecord {
    pub fn is_alive(&self) -> bool {
        self.status == TreeStatus::Alive
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplaintRecord {
    pub complaint_id: String,
    pub location: GeoPoint,
    pub created: DateTime<Utc>,
    pub category: ComplaintCategory,
    pub zip: String,
    pub borough: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesAttributes {
    pub species: String,
    pub allergic_pollen: bool,
    pub severity: Severity,
    pub active_seasons: SeasonSet,
}

impl SpeciesAttributes {
    /// Attributes assigned to species missing from the taxonomy.
    pub fn unknown(species: &str) -> Self {
        SpeciesAttributes {
            species: species.to_string(),
            allergic_pollen: false,
            severity: Severity::None,
            active_seasons: SeasonSet::empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub region_id: String,
    pub kind: RegionKind,
    pub name: Option<String>,
    pub borough: Option<String>,
    pub geometry: Vec<Polygon>,
    pub total_population: u64,
    /// Residents aged under 14 or over 60.
    pub vulnerable_population: u64,
    /// Asthma ED visits per 10,000 residents.
    pub asthma_ed_rate: Option<f64>,
    /// Raw asthma ED visit count.
    pub asthma_ed_visits: Option<f64>,
    /// PM2.5, µg/m³.
    pub pm25: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorObservation {
    pub sensor_id: String,
    pub location: GeoPoint,
    pub year: i32,
    pub season: Season,
    pub pm25: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LotDensity {
    pub lot_id: String,
    pub location: GeoPoint,
    /// Built floor area, square feet.
    pub floor_area: f64,
    pub land_use: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn species_normalization() {
        assert_eq!(normalize_species("  Honey   Locust\t"), "honey locust");
        assert_eq!(normalize_species(""), "");
    }

    #[test]
    fn enums_parse_aliases() {
        assert_eq!("Dead Tree".parse::<ComplaintCategory>(), Ok(ComplaintCategory::DeadTree));
        assert_eq!(" autumn".parse::<Season>(), Ok(Season::Fall));
        assert!("sometimes".parse::<Season>().is_err());
        assert!(Severity::High > Severity::Moderate && Severity::Low > Severity::None);
    }

    #[test]
    fn season_set_display_is_canonical() {
        let set: SeasonSet = [Season::Fall, Season::Spring].into_iter().collect();
        assert_eq!(set.to_string(), "spring;fall");
        assert_eq!(Season::of_month(12), Season::Winter);
        assert_eq!(Season::of_month(4), Season::Spring);
    }
}
