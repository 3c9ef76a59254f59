pub mod analyze;
pub mod build_graph;
pub mod discriminator_data;
pub mod optimize;
pub mod refactor_data;
pub mod serve;
pub mod simulate;
