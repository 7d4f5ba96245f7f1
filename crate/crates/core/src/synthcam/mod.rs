//! Procedural driving scenes with weather, night degradation and events.

pub mod dataset;
pub mod scene;
pub mod weather;

pub use dataset::{
    generate_dataset, generate_sample, load_sample, DatasetConfig, DatasetManifest, GeneratedSample, Sample,
    SampleRecord, Split,
};
pub use scene::{render_scene, SceneKind, SceneSpec};
pub use weather::{apply_fog, apply_night, apply_rain, WeatherKind, WeatherTag};
