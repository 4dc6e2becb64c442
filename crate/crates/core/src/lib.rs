pub mod entity;
pub mod features;
pub mod providers;
pub mod scoring;
pub mod catalog;
pub mod reports;
pub mod store;
pub mod useragent;
pub mod footprint;
pub mod engine;
pub mod assistant;
pub mod eval;

pub type LabeledExample = eval::LabeledExample<f64>;
pub type MetricsReport = eval::MetricsReport<f64>;
pub type PercentileReport = eval::PercentileReport<f64>;
