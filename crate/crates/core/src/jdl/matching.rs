use alloc::format;
use alloc::string::String;

use super::ad::Ad;
use super::eval::evaluate;

/// Symmetric match: both sides' `Requirements` must evaluate to exactly `true`
/// against the other ad. A side without `Requirements` accepts anything.
pub fn match_ads(job: &Ad, resource: &Ad) -> bool {
    side_accepts(job, resource) && side_accepts(resource, job)
}

fn side_accepts(owner: &Ad, candidate: &Ad) -> bool {
    match owner.requirements() {
        None => true,
        Some(req) => evaluate(req, owner, candidate).is_true(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankOutcome {
    pub value: f64,
    /// Set when the job had a `Rank` that did not produce a usable number.
    pub warning: Option<String>,
}

/// Numeric value of the job's `Rank` against `resource`; 0.0 when absent or unusable.
pub fn rank(job: &Ad, resource: &Ad) -> f64 {
    rank_detailed(job, resource).value
}

pub fn rank_detailed(job: &Ad, resource: &Ad) -> RankOutcome {
    let Some(expr) = job.rank_expr() else {
        return RankOutcome { value: 0.0, warning: None };
    };
    let v = evaluate(expr, job, resource);
    match v.as_f64() {
        Some(x) if x.is_finite() => RankOutcome { value: x, warning: None },
        _ => RankOutcome { value: 0.0, warning: Some(format!("rank evaluated to {v}, using 0.0")) },
    }
}
