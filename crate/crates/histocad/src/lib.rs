//! One dependency for the whole toolkit: slide tiling, the classifier,
//! training, voting, metrics and visualisation.

pub use histocad_core as core;
pub use histocad_metriq as metriq;
pub use histocad_mavit as mavit;
pub use histocad_slidekit as slidekit;
pub use histocad_trainkit as trainkit;
pub use histocad_verdict as verdict;
pub use histocad_visio as visio;
