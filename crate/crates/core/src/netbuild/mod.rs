//! Co-authorship networks and scholar covariates from publication records.

mod covariates;
mod network;
mod records;

pub(crate) use covariates::profiles_by_roster;
pub use covariates::{
    build_covariates, default_fields, scholar_features, BucketConfig, BucketSpec, CovariateOptions,
    Covariates, ScholarFeatures,
};
pub use network::{row_normalize, Adjacency, InteractionNetwork, ROW_SUM_TOL};
pub use records::{
    build_adjacency, covid_index, filter_to_roster, publication_counts, PeriodSpec,
    PublicationRecord, RankingBucket, Roster, ScholarProfile,
};
