//! Closed-form results for the uncoupled, timeout-free network.

use alloc::vec::Vec;

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mm1 {
    pub utilisation: f64,
    pub mean_in_system: f64,
    pub mean_sojourn: f64,
}

/// M/M/1: ρ = λ/μ, N = ρ/(1−ρ), W = 1/(μ−λ).
pub fn mm1_theory(arrival_rate: f64, service_rate: f64) -> Result<Mm1, SimError> {
    if !(arrival_rate >= 0.0) || !(service_rate > 0.0) {
        return Err(SimError::InvalidConfig("rates must be non-negative and the service rate positive".into()));
    }
    if arrival_rate >= service_rate {
        return Err(SimError::UnstableRegime { arrival_rate, service_rate });
    }
    let rho = arrival_rate / service_rate;
    Ok(Mm1 { utilisation: rho, mean_in_system: rho / (1.0 - rho), mean_sojourn: 1.0 / (service_rate - arrival_rate) })
}

/// Single-server tandem with Poisson input: by Burke's theorem every station
/// sees Poisson(λ) input and behaves as an independent M/M/1.
pub fn tandem_theory(arrival_rate: f64, service_rates: &[f64]) -> Result<Vec<Mm1>, SimError> {
    service_rates.iter().map(|mu| mm1_theory(arrival_rate, *mu)).collect()
}
