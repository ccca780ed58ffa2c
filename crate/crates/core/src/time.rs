//! Calendar times at year/month/day granularity and intervals over them.
//!
//! Every time occupies a span of days: `2010` covers 2010-01-01..=2010-12-31,
//! `2010-10` covers the whole of October. All comparisons performed by the
//! temporal operators are phrased in terms of these spans, which is what makes
//! mixed-granularity data totally comparable.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator between the endpoints of an interval in text form (`1956/1960`).
pub const INTERVAL_SEPARATOR: char = '/';

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimeParseError {
    #[error("empty time")]
    Empty,
    #[error("invalid year '{0}'")]
    InvalidYear(String),
    #[error("invalid month {0}")]
    InvalidMonth(String),
    #[error("invalid day {0}")]
    InvalidDay(String),
    #[error("malformed time '{0}'")]
    Malformed(String),
    #[error("interval end {end} precedes start {start}")]
    Reversed { start: String, end: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Year,
    Month,
    Day,
}

/// A single calendar position with optional month and day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CalendarDate {
    year: i32,
    month: Option<u32>,
    day: Option<u32>,
}

impl CalendarDate {
    pub fn year_only(year: i32) -> Result<Self, TimeParseError> {
        Self::new(year, None, None)
    }

    pub fn new(year: i32, month: Option<u32>, day: Option<u32>) -> Result<Self, TimeParseError> {
        if !(0..=9999).contains(&year) {
            return Err(TimeParseError::InvalidYear(year.to_string()));
        }
        if let Some(m) = month {
            if !(1..=12).contains(&m) {
                return Err(TimeParseError::InvalidMonth(m.to_string()));
            }
        }
        match (month, day) {
            (None, Some(d)) => return Err(TimeParseError::InvalidDay(d.to_string())),
            (Some(m), Some(d)) if NaiveDate::from_ymd_opt(year, m, d).is_none() => {
                return Err(TimeParseError::InvalidDay(d.to_string()))
            }
            _ => {}
        }
        Ok(Self { year, month, day })
    }

    pub fn from_naive(date: NaiveDate) -> Self {
        Self { year: date.year(), month: Some(date.month()), day: Some(date.day()) }
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn month(&self) -> Option<u32> {
        self.month
    }

    pub fn day(&self) -> Option<u32> {
        self.day
    }

    pub fn granularity(&self) -> Granularity {
        match (self.month, self.day) {
            (_, Some(_)) => Granularity::Day,
            (Some(_), None) => Granularity::Month,
            _ => Granularity::Year,
        }
    }

    /// First day covered by this date.
    pub fn first_day(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month.unwrap_or(1), self.day.unwrap_or(1))
            .expect("validated on construction")
    }

    /// Last day covered by this date.
    pub fn last_day(&self) -> NaiveDate {
        match (self.month, self.day) {
            (Some(m), Some(d)) => NaiveDate::from_ymd_opt(self.year, m, d).expect("validated"),
            (Some(m), None) => last_day_of_month(self.year, m),
            _ => NaiveDate::from_ymd_opt(self.year, 12, 31).expect("valid year"),
        }
    }

    pub fn span(&self) -> Span {
        Span::new(self.first_day(), self.last_day())
    }

    /// Drops parts finer than `granularity`; coarser dates are returned as-is.
    pub fn truncate(&self, granularity: Granularity) -> Self {
        match granularity {
            Granularity::Year => Self { year: self.year, month: None, day: None },
            Granularity::Month => Self { year: self.year, month: self.month, day: None },
            Granularity::Day => *self,
        }
    }
}

fn last_day_of_month(year: i32, month: u32) -> NaiveDate {
    let (ny, nm) = if month == 12 { (year + 1, 1) } else { (year, month + 1) };
    match NaiveDate::from_ymd_opt(ny, nm, 1) {
        Some(next) => next.pred_opt().expect("not the minimum date"),
        // year 9999 December
        None => NaiveDate::from_ymd_opt(year, 12, 31).expect("valid"),
    }
}

impl fmt::Display for CalendarDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}", self.year)?;
        if let Some(m) = self.month {
            write!(f, "-{m:02}")?;
        }
        if let Some(d) = self.day {
            write!(f, "-{d:02}")?;
        }
        Ok(())
    }
}

impl FromStr for CalendarDate {
    type Err = TimeParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(TimeParseError::Empty);
        }
        let mut parts = s.split('-');
        let year_txt = parts.next().unwrap_or_default();
        if year_txt.len() != 4 || !year_txt.bytes().all(|b| b.is_ascii_digit()) {
            return Err(TimeParseError::InvalidYear(year_txt.to_string()));
        }
        let year: i32 = year_txt.parse().map_err(|_| TimeParseError::InvalidYear(year_txt.into()))?;
        let month = parts
            .next()
            .map(|m| parse_two_digits(m).ok_or_else(|| TimeParseError::InvalidMonth(m.to_string())))
            .transpose()?;
        let day = parts
            .next()
            .map(|d| parse_two_digits(d).ok_or_else(|| TimeParseError::InvalidDay(d.to_string())))
            .transpose()?;
        if parts.next().is_some() {
            return Err(TimeParseError::Malformed(s.to_string()));
        }
        Self::new(year, month, day)
    }
}

fn parse_two_digits(s: &str) -> Option<u32> {
    if s.len() == 2 && s.bytes().all(|b| b.is_ascii_digit()) {
        s.parse().ok()
    } else {
        None
    }
}

/// Closed range of days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Span {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    /// Entirely before `other` begins.
    pub fn precedes(&self, other: &Span) -> bool {
        self.end < other.start
    }

    /// Entirely after `other` ends.
    pub fn follows(&self, other: &Span) -> bool {
        self.start > other.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

/// A time point or an interval. Intervals may be open-ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimeValue {
    Point(CalendarDate),
    Interval { start: CalendarDate, end: Option<CalendarDate> },
}

/// Default horizon substituted for the end of open intervals.
pub fn default_horizon() -> NaiveDate {
    NaiveDate::from_ymd_opt(9999, 12, 31).expect("valid")
}

impl TimeValue {
    pub fn point(date: CalendarDate) -> Self {
        TimeValue::Point(date)
    }

    pub fn interval(start: CalendarDate, end: Option<CalendarDate>) -> Result<Self, TimeParseError> {
        if let Some(e) = end {
            if e.last_day() < start.first_day() {
                return Err(TimeParseError::Reversed { start: start.to_string(), end: e.to_string() });
            }
        }
        Ok(TimeValue::Interval { start, end })
    }

    pub fn start(&self) -> CalendarDate {
        match self {
            TimeValue::Point(d) => *d,
            TimeValue::Interval { start, .. } => *start,
        }
    }

    /// Explicit end; `None` for points and for open intervals.
    pub fn end(&self) -> Option<CalendarDate> {
        match self {
            TimeValue::Point(_) => None,
            TimeValue::Interval { end, .. } => *end,
        }
    }

    pub fn is_interval(&self) -> bool {
        matches!(self, TimeValue::Interval { .. })
    }

    pub fn granularity(&self) -> Granularity {
        self.start().granularity()
    }

    /// Days covered; open intervals extend to `horizon`.
    pub fn span_with_horizon(&self, horizon: NaiveDate) -> Span {
        match self {
            TimeValue::Point(d) => d.span(),
            TimeValue::Interval { start, end } => {
                let lo = start.first_day();
                let hi = end.map(|e| e.last_day()).unwrap_or(horizon).max(lo);
                Span::new(lo, hi)
            }
        }
    }

    pub fn span(&self) -> Span {
        self.span_with_horizon(default_horizon())
    }

    /// Interval form: points become degenerate `[t, t]` intervals.
    pub fn as_interval(&self) -> TimeValue {
        match self {
            TimeValue::Point(d) => TimeValue::Interval { start: *d, end: Some(*d) },
            iv => *iv,
        }
    }

    /// Truncates to `granularity`; intervals are represented by their start.
    pub fn truncate(&self, granularity: Granularity) -> TimeValue {
        TimeValue::Point(self.start().truncate(granularity))
    }
}

impl fmt::Display for TimeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeValue::Point(d) => write!(f, "{d}"),
            TimeValue::Interval { start, end: Some(end) } => write!(f, "{start}{INTERVAL_SEPARATOR}{end}"),
            TimeValue::Interval { start, end: None } => write!(f, "{start}{INTERVAL_SEPARATOR}"),
        }
    }
}

impl FromStr for TimeValue {
    type Err = TimeParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s.split_once(INTERVAL_SEPARATOR) {
            None => Ok(TimeValue::Point(s.parse()?)),
            Some((a, b)) => {
                let start: CalendarDate = a.parse()?;
                let end = if b.trim().is_empty() { None } else { Some(b.parse()?) };
                TimeValue::interval(start, end)
            }
        }
    }
}

impl Ord for TimeValue {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.span(), other.span());
        a.start.cmp(&b.start).then(a.end.cmp(&b.end)).then_with(|| self.to_string().cmp(&other.to_string()))
    }
}

impl PartialOrd for TimeValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for TimeValue {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TimeValue {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// True when `token` reads as a canonical time or interval.
pub fn looks_like_time(token: &str) -> bool {
    token.parse::<TimeValue>().is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: &str) -> TimeValue {
        s.parse().unwrap()
    }

    #[test]
    fn granularity_follows_populated_parts() {
        assert_eq!(t("2010").granularity(), Granularity::Year);
        assert_eq!(t("2010-10").granularity(), Granularity::Month);
        assert_eq!(t("2010-10-05").granularity(), Granularity::Day);
    }

    #[test]
    fn rejects_out_of_range_parts() {
        assert_eq!("2010-13-01".parse::<TimeValue>(), Err(TimeParseError::InvalidMonth("13".into())));
        assert_eq!("2010-02-30".parse::<TimeValue>(), Err(TimeParseError::InvalidDay("30".into())));
        assert!("10-01".parse::<TimeValue>().is_err());
        assert!("2010-1-01".parse::<TimeValue>().is_err());
        assert!("".parse::<TimeValue>().is_err());
        assert!("1960/1950".parse::<TimeValue>().is_err());
    }

    #[test]
    fn month_span_covers_whole_month() {
        let s = t("2012-02").span();
        assert_eq!(s.start, NaiveDate::from_ymd_opt(2012, 2, 1).unwrap());
        assert_eq!(s.end, NaiveDate::from_ymd_opt(2012, 2, 29).unwrap());
        let s = t("9999-12").span();
        assert_eq!(s.end, NaiveDate::from_ymd_opt(9999, 12, 31).unwrap());
    }

    #[test]
    fn intervals_render_with_separator() {
        assert_eq!(t("1956/1960").to_string(), "1956/1960");
        assert_eq!(t("2005-05-19/").to_string(), "2005-05-19/");
        assert_eq!(t("2005-05-19/").end(), None);
        assert_eq!(t("2010-01-12").as_interval().to_string(), "2010-01-12/2010-01-12");
    }

    #[test]
    fn open_interval_extends_to_horizon() {
        let h = NaiveDate::from_ymd_opt(2020, 6, 30).unwrap();
        assert_eq!(t("2015/").span_with_horizon(h).end, h);
    }

    #[test]
    fn truncation_never_refines() {
        assert_eq!(t("2010-01-12").truncate(Granularity::Month).to_string(), "2010-01");
        assert_eq!(t("2010").truncate(Granularity::Day).to_string(), "2010");
    }

    fn day_point() -> impl Strategy<Value = TimeValue> {
        (0i32..=9999, 1u32..=12, 1u32..=28)
            .prop_map(|(y, m, d)| TimeValue::Point(CalendarDate::new(y, Some(m), Some(d)).unwrap()))
    }

    fn any_point() -> impl Strategy<Value = String> {
        prop_oneof![
            (0i32..=9999).prop_map(|y| format!("{y:04}")),
            (0i32..=9999, 1u32..=12).prop_map(|(y, m)| format!("{y:04}-{m:02}")),
            (0i32..=9999, 1u32..=12, 1u32..=28).prop_map(|(y, m, d)| format!("{y:04}-{m:02}-{d:02}")),
        ]
    }

    proptest! {
        #[test]
        fn parse_render_identity(s in any_point()) {
            prop_assert_eq!(s.parse::<TimeValue>().unwrap().to_string(), s);
        }

        #[test]
        fn day_order_matches_lexicographic(a in day_point(), b in day_point()) {
            let by_value = a.cmp(&b);
            let by_text = a.to_string().cmp(&b.to_string());
            prop_assert_eq!(by_value, by_text);
        }
    }
}
