use std::collections::BTreeMap;

use chrono::NaiveDate;
use log::warn;

use super::{CitationEvent, PaperId};
use crate::error::{Error, Result};

/// Parsed citation corpus with publication days relative to `epoch`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CitationData {
    pub events: Vec<CitationEvent>,
    /// Publication day of every dated paper.
    pub publication: BTreeMap<PaperId, i64>,
    /// Edges whose citing paper has no date.
    pub dropped_undated: usize,
}

fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            None
        } else {
            Some((i + 1, line.split(['\t', ' ']).filter(|f| !f.is_empty()).collect()))
        }
    })
}

fn two_fields<'a>(line: usize, fields: &[&'a str]) -> Result<(&'a str, &'a str)> {
    match fields {
        [a, b] => Ok((a, b)),
        _ => Err(Error::Parse {
            line,
            message: format!("expected 2 tab-separated fields, found {}", fields.len()),
        }),
    }
}

/// Parses an edge list (`citing<TAB>cited`) and a date list
/// (`paper<TAB>YYYY-MM-DD`). The epoch is the earliest date in the date list;
/// a paper listed twice keeps its earliest date.
pub fn parse_citation_files(edges: &str, dates: &str) -> Result<(CitationData, Option<NaiveDate>)> {
    let mut raw_dates: BTreeMap<PaperId, NaiveDate> = BTreeMap::new();
    for (line, fields) in records(dates) {
        let (id, date) = two_fields(line, &fields)?;
        let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            message: format!("bad date `{date}`: {e}"),
        })?;
        let id = PaperId::new(id).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        raw_dates
            .entry(id)
            .and_modify(|d| *d = (*d).min(date))
            .or_insert(date);
    }
    let epoch = raw_dates.values().min().copied();
    let publication: BTreeMap<PaperId, i64> = match epoch {
        Some(e) => raw_dates
            .into_iter()
            .map(|(id, d)| (id, (d - e).num_days()))
            .collect(),
        None => BTreeMap::new(),
    };

    let mut events = Vec::new();
    let mut dropped_undated = 0;
    let mut dropped_self = 0;
    for (line, fields) in records(edges) {
        let (citing, cited) = two_fields(line, &fields)?;
        if citing == cited {
            dropped_self += 1;
            continue;
        }
        let citing = PaperId::new(citing)?;
        let Some(&time) = publication.get(&citing) else {
            dropped_undated += 1;
            continue;
        };
        events.push(CitationEvent {
            citing,
            cited: PaperId::new(cited)?,
            time,
        });
    }
    if dropped_undated > 0 {
        warn!("dropped {dropped_undated} citations whose citing paper has no date");
    }
    if dropped_self > 0 {
        warn!("dropped {dropped_self} self-citations");
    }
    Ok((
        CitationData {
            events,
            publication,
            dropped_undated,
        },
        epoch,
    ))
}

/// Writes `data` back out as an edge list and a date list, with day 0 at `epoch`.
pub fn format_citation_files(data: &CitationData, epoch: NaiveDate) -> Result<(String, String)> {
    let mut edges = String::from("# FromNodeId\tToNodeId\n");
    for e in &data.events {
        edges.push_str(&format!("{}\t{}\n", e.citing, e.cited));
    }
    let mut dates = String::from("# paper\tdate\n");
    for (id, &day) in &data.publication {
        let date = epoch
            .checked_add_signed(chrono::Duration::days(day))
            .ok_or_else(|| Error::Contract(format!("day {day} of {id} is out of the calendar range")))?;
        dates.push_str(&format!("{id}\t{}\n", date.format("%Y-%m-%d")));
    }
    Ok((edges, dates))
}
