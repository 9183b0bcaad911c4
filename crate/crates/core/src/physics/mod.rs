//! Photon emission, transport, and interaction physics.

pub mod attenuation;
pub mod compton;
pub mod generate;
pub mod source;
pub mod transport;

pub use attenuation::{interaction_probability, AttenuationError, AttenuationTable};
pub use compton::{
    compton_edge, electron_energy as compton_electron_energy, klein_nishina_unnormalized,
    sample_compton, ComptonError, ComptonSample,
};
pub use generate::{
    deposit_in_depletion, EventGenerator, GenerateError, GenerationStats, InteractionEvent,
    SceneParams,
};
pub use source::{EmissionLine, Isotope, PointSource, SourceError};
pub use transport::{
    incidence_angle, rectangle_solid_angle_on_axis, transport_to_pixel, EmissionCone, Photon,
    PixelHit,
};
