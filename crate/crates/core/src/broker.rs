//! Resource selection: symmetric matchmaking, data-locality policy and rank argmax.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::jdl::{attribute_string, attribute_value, match_ads, rank_detailed, Ad, Role, Value};
use crate::lb::JobId;
use crate::time::{Span, Timestamp};

pub const ID_ATTR: &str = "Id";
pub const CLOSE_SES_ATTR: &str = "CloseSEs";
pub const INPUT_DATA_ATTR: &str = "InputData";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SnapshotError {
    MissingId { index: usize },
    DuplicateId(String),
    WrongRole { index: usize },
}

impl fmt::Display for SnapshotError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SnapshotError::MissingId { index } => write!(f, "resource ad #{index} has no string Id"),
            SnapshotError::DuplicateId(id) => write!(f, "duplicate resource id {id}"),
            SnapshotError::WrongRole { index } => write!(f, "ad #{index} is not a resource ad"),
        }
    }
}

impl core::error::Error for SnapshotError {}

#[derive(Debug, Clone, PartialEq)]
pub struct Resource {
    pub id: String,
    pub ad: Ad,
}

/// Computing-element status as published by the information system at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoSnapshot {
    resources: Vec<Resource>,
    pub taken_at: Timestamp,
    pub ttl: Span,
}

impl InfoSnapshot {
    pub fn new(ads: Vec<Ad>, taken_at: Timestamp, ttl: Span) -> Result<InfoSnapshot, SnapshotError> {
        let mut seen = BTreeSet::new();
        let mut resources = Vec::with_capacity(ads.len());
        for (index, mut ad) in ads.into_iter().enumerate() {
            match ad.role() {
                None => ad.set_role(Role::Resource),
                Some(Role::Resource) => {}
                Some(Role::Job) => return Err(SnapshotError::WrongRole { index }),
            }
            let id = attribute_string(&ad, ID_ATTR).ok_or(SnapshotError::MissingId { index })?;
            if !seen.insert(id.clone()) {
                return Err(SnapshotError::DuplicateId(id));
            }
            resources.push(Resource { id, ad });
        }
        Ok(InfoSnapshot { resources, taken_at, ttl })
    }

    pub fn resources(&self) -> &[Resource] {
        &self.resources
    }

    pub fn get(&self, id: &str) -> Option<&Resource> {
        self.resources.iter().find(|r| r.id == id)
    }

    pub fn is_fresh(&self, now: Timestamp) -> bool {
        now.saturating_since(self.taken_at) <= self.ttl
    }
}

/// Logical file name → storage elements holding a replica.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReplicaCatalog {
    entries: BTreeMap<String, Vec<String>>,
}

impl ReplicaCatalog {
    pub fn new() -> ReplicaCatalog {
        ReplicaCatalog::default()
    }

    /// Adds replicas for `lfn`; an empty list leaves the catalog unchanged.
    pub fn insert(&mut self, lfn: impl Into<String>, ses: Vec<String>) {
        if ses.is_empty() {
            return;
        }
        let slot = self.entries.entry(lfn.into()).or_default();
        for se in ses {
            if !slot.contains(&se) {
                slot.push(se);
            }
        }
    }

    pub fn lookup(&self, lfn: &str) -> Option<&[String]> {
        self.entries.get(lfn).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DataPolicy {
    /// Every input file needs a replica on one of the CE's close storage elements.
    #[default]
    RequireCloseReplica,
    IgnoreData,
}

impl DataPolicy {
    pub fn name(self) -> &'static str {
        match self {
            DataPolicy::RequireCloseReplica => "require-close-replica",
            DataPolicy::IgnoreData => "ignore-data",
        }
    }

    pub fn from_name(name: &str) -> Option<DataPolicy> {
        match name {
            "require-close-replica" => Some(DataPolicy::RequireCloseReplica),
            "ignore-data" => Some(DataPolicy::IgnoreData),
            _ => None,
        }
    }
}

/// Logical file names the job declares in `InputData`. A single string is accepted as a one-element list.
pub fn input_data(job: &Ad) -> Vec<String> {
    match attribute_value(job, INPUT_DATA_ATTR) {
        Value::Str(s) => alloc::vec![s],
        v => v.as_string_list().unwrap_or_default(),
    }
}

/// Maps every declared input file to its replica locations (empty when the catalog has none).
pub fn resolve_data(job: &Ad, catalog: &ReplicaCatalog) -> BTreeMap<String, Vec<String>> {
    input_data(job)
        .into_iter()
        .map(|lfn| {
            let ses = catalog.lookup(&lfn).map(<[String]>::to_vec).unwrap_or_default();
            (lfn, ses)
        })
        .collect()
}

fn close_ses(resource: &Ad) -> Vec<String> {
    match attribute_value(resource, CLOSE_SES_ATTR) {
        Value::Str(s) => alloc::vec![s],
        v => v.as_string_list().unwrap_or_default(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub resource: String,
    pub rank: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Choice {
    Resource(String),
    NoMatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub job: JobId,
    pub chosen: Choice,
    /// Sorted best-first: rank descending, then resource id ascending.
    pub candidates: Vec<Candidate>,
    pub warnings: Vec<String>,
}

impl MatchResult {
    pub fn chosen_resource(&self) -> Option<&str> {
        match &self.chosen {
            Choice::Resource(id) => Some(id),
            Choice::NoMatch(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BrokerError {
    StaleSnapshot { age: Span, ttl: Span },
}

impl fmt::Display for BrokerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BrokerError::StaleSnapshot { age, ttl } => {
                write!(f, "information snapshot is stale (age {}s > ttl {}s)", age.0 / 1_000_000, ttl.0 / 1_000_000)
            }
        }
    }
}

impl core::error::Error for BrokerError {}

/// Best-first ordering used for `candidates` and for picking `chosen`.
pub fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.rank.total_cmp(&a.rank).then_with(|| a.resource.cmp(&b.resource))
}

/// Selects a computing element for `job`.
///
/// Candidates are the resources that match symmetrically and satisfy `policy`;
/// the chosen one has the highest rank, ties going to the smallest id.
pub fn match_job(
    job_id: &JobId,
    job: &Ad,
    snapshot: &InfoSnapshot,
    catalog: &ReplicaCatalog,
    policy: DataPolicy,
    now: Timestamp,
) -> Result<MatchResult, BrokerError> {
    if !snapshot.is_fresh(now) {
        return Err(BrokerError::StaleSnapshot { age: now.saturating_since(snapshot.taken_at), ttl: snapshot.ttl });
    }
    let mut warnings = Vec::new();
    let data = resolve_data(job, catalog);

    if policy == DataPolicy::RequireCloseReplica {
        if let Some((lfn, _)) = data.iter().find(|(_, ses)| ses.is_empty()) {
            return Ok(MatchResult {
                job: job_id.clone(),
                chosen: Choice::NoMatch(format!("no replica for {lfn}")),
                candidates: Vec::new(),
                warnings,
            });
        }
    }

    let mut candidates = Vec::new();
    for res in snapshot.resources() {
        if !match_ads(job, &res.ad) {
            continue;
        }
        if policy == DataPolicy::RequireCloseReplica && !data.is_empty() {
            let close = close_ses(&res.ad);
            let all_close = data.values().all(|ses| ses.iter().any(|se| close.contains(se)));
            if !all_close {
                continue;
            }
        }
        let r = rank_detailed(job, &res.ad);
        if let Some(w) = r.warning {
            warnings.push(format!("{}: {w}", res.id));
        }
        // `+ 0.0` folds -0.0 into 0.0 so total_cmp treats them as a tie
        candidates.push(Candidate { resource: res.id.clone(), rank: r.value + 0.0 });
    }
    candidates.sort_by(candidate_order);

    let chosen = match candidates.first() {
        Some(best) => Choice::Resource(best.resource.clone()),
        None if data.is_empty() || policy == DataPolicy::IgnoreData => Choice::NoMatch("no matching resource".into()),
        None => Choice::NoMatch("no matching resource with close replicas".into()),
    };
    Ok(MatchResult { job: job_id.clone(), chosen, candidates, warnings })
}
