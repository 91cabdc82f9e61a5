//! Coarse trace ingestion, interrupted-Poisson traffic fitting and
//! generation, and hidden-Markov re-estimation of the traffic rates.

mod baum_welch;
mod generate;
mod ipp;
mod trace;

pub use baum_welch::{baum_welch, BaumWelchResult, DEFAULT_INTERVAL};
pub use generate::{bin_counts, generate_arrivals, Arrival, ArrivalStream};
pub use ipp::{
    aggregate_moments, count_moments, feasibility_map, fit_ipp, DemandDistribution, FeasibilityGrid,
    FitOptions, IppParams,
};
pub use trace::{ingest_trace, slot_statistics, IngestReport, SlotStats, TraceSample, TrafficTrace};
