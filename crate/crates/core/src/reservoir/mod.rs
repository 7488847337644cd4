//! The live test reservoir, cohort evaluation windows and publication.

mod bundle;
mod cohort;
mod live;

pub use bundle::{
    build_bundle, verify_bundle, BundleError, BundleSummary, Manifest, PublicationBundle,
    PublicationInput, PublishError, PublishedReview, MANIFEST_FILE, MANIFEST_SIG_FILE,
};
pub use cohort::{
    earliest_open_window, next_windows, CohortError, CohortWindow, EvaluationOrder, WindowState,
};
pub use live::{route_lane, Admission, LiveEntry, Reservoir, ReservoirError};
