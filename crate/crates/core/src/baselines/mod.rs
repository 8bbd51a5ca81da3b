//! Comparison methods. Each one emits [`RankingTable`](crate::detector::RankingTable)s
//! oriented like the detector's: ascending score = more anomalous. Methods
//! whose native score grows with anomaly (LOF, TransE distance) store the
//! negated value.

pub mod lof;
pub mod nb;
pub mod transe;

pub use lof::{lof_rank, lof_scores, LofConfig};
pub use nb::{nb_rank, nb_train, NbModel};
pub use transe::{transe_rank, transe_train, Norm, TranseConfig, TranseModel};
