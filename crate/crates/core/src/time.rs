//! Second-resolution timestamps and the truncation granularity used for
//! public release times.

use std::fmt;
use std::num::NonZeroU32;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const SECONDS_PER_DAY: u32 = 86_400;

/// Unix time in whole seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid timestamp {0:?}: expected YYYY-MM-DD or RFC 3339")]
pub struct TimestampParseError(pub String);

impl Timestamp {
    pub const fn from_unix(secs: i64) -> Self {
        Self(secs)
    }

    pub const fn unix(self) -> i64 {
        self.0
    }

    pub fn now() -> Self {
        Self(Utc::now().timestamp())
    }

    pub fn from_date(date: NaiveDate) -> Self {
        Self(date.and_time(NaiveTime::MIN).and_utc().timestamp())
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp(self.0, 0).unwrap_or(DateTime::UNIX_EPOCH)
    }

    /// Whole days plus seconds, as a fractional day count since the epoch.
    pub fn as_days(self) -> f64 {
        self.0 as f64 / f64::from(SECONDS_PER_DAY)
    }
}

/// Dates at midnight render as `YYYY-MM-DD`; anything finer as RFC 3339.
impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dt = self.to_datetime();
        if self.0.rem_euclid(i64::from(SECONDS_PER_DAY)) == 0 {
            write!(f, "{}", dt.format("%Y-%m-%d"))
        } else {
            write!(f, "{}", dt.format("%Y-%m-%dT%H:%M:%SZ"))
        }
    }
}

impl FromStr for Timestamp {
    type Err = TimestampParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(date) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            return Ok(Self::from_date(date));
        }
        DateTime::parse_from_rfc3339(s)
            .map(|dt| Self(dt.timestamp()))
            .map_err(|_| TimestampParseError(s.to_owned()))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Bucket width that release times are truncated to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Granularity(NonZeroU32);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GranularityError {
    #[error("granularity must be positive")]
    Zero,
    #[error("unknown granularity {0:?}: expected day, hour, minute or a number of seconds")]
    Unknown(String),
}

impl Granularity {
    pub const DAY: Granularity = Granularity(NonZeroU32::new(SECONDS_PER_DAY).unwrap());
    pub const HOUR: Granularity = Granularity(NonZeroU32::new(3_600).unwrap());
    pub const MINUTE: Granularity = Granularity(NonZeroU32::new(60).unwrap());

    pub fn from_secs(secs: u32) -> Result<Self, GranularityError> {
        NonZeroU32::new(secs).map(Self).ok_or(GranularityError::Zero)
    }

    pub fn secs(self) -> u32 {
        self.0.get()
    }

    /// Floors `ts` to the start of its bucket.
    pub fn truncate(self, ts: Timestamp) -> Timestamp {
        let width = i64::from(self.secs());
        Timestamp(ts.0.div_euclid(width) * width)
    }

    /// Number of whole buckets between two truncated instants.
    pub fn units_between(self, earlier: Timestamp, later: Timestamp) -> u32 {
        let delta = self.truncate(later).0 - self.truncate(earlier).0;
        u32::try_from(delta.max(0) / i64::from(self.secs())).unwrap_or(u32::MAX)
    }
}

impl Default for Granularity {
    fn default() -> Self {
        Self::DAY
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::DAY => f.write_str("day"),
            Self::HOUR => f.write_str("hour"),
            Self::MINUTE => f.write_str("minute"),
            other => write!(f, "{}", other.secs()),
        }
    }
}

impl FromStr for Granularity {
    type Err = GranularityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "day" | "daily" => Ok(Self::DAY),
            "hour" | "hourly" => Ok(Self::HOUR),
            "minute" => Ok(Self::MINUTE),
            other => other
                .parse::<u32>()
                .map_err(|_| GranularityError::Unknown(s.to_owned()))
                .and_then(Self::from_secs),
        }
    }
}

impl Serialize for Granularity {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Granularity {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Secs(u32),
            Name(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Secs(s) => Granularity::from_secs(s),
            Raw::Name(n) => n.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_floors_to_bucket() {
        let ts = Timestamp::from_unix(86_400 * 3 + 5_000);
        assert_eq!(Granularity::DAY.truncate(ts), Timestamp::from_unix(86_400 * 3));
        assert_eq!(Granularity::HOUR.truncate(ts).unix(), 86_400 * 3 + 3_600);
        // before the epoch still floors downward
        assert_eq!(Granularity::DAY.truncate(Timestamp::from_unix(-1)).unix(), -86_400);
    }

    #[test]
    fn display_and_parse() {
        let day: Timestamp = "2014-02-14".parse().unwrap();
        assert_eq!(day.to_string(), "2014-02-14");
        let precise = Timestamp::from_unix(day.unix() + 61);
        assert_eq!(precise.to_string(), "2014-02-14T00:01:01Z");
        assert_eq!(precise.to_string().parse::<Timestamp>().unwrap(), precise);
        assert!("yesterday".parse::<Timestamp>().is_err());
    }

    #[test]
    fn granularity_names() {
        assert_eq!("day".parse::<Granularity>().unwrap(), Granularity::DAY);
        assert_eq!("900".parse::<Granularity>().unwrap().secs(), 900);
        assert_eq!("0".parse::<Granularity>(), Err(GranularityError::Zero));
        let g: Granularity = serde_json::from_str("3600").unwrap();
        assert_eq!(g, Granularity::HOUR);
    }

    #[test]
    fn units_between_counts_bucket_boundaries() {
        let g = Granularity::DAY;
        let a = Timestamp::from_unix(86_400 - 1);
        let b = Timestamp::from_unix(86_400);
        assert_eq!(g.units_between(a, b), 1);
        assert_eq!(g.units_between(b, a), 0);
    }
}
