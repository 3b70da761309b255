//! Room acoustics simulation: image-source RIRs, scenario sampling, scene
//! rendering and anechoic probes.

pub mod probe;
pub mod render;
pub mod rir;
pub mod scenario;

pub use probe::{angle_grid, anechoic_probe, probe_array, probe_set};
pub use render::{render_scene, Scene};
pub use rir::{image_source_rir, Point, RirGenerator, Room, SPEED_OF_SOUND};
pub use scenario::{sample_scenario, ArrayPose, Scenario, ScenarioConfig};
