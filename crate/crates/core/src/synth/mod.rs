//! Synthetic deformable palms with exact landmarks, masks and identities.

mod render;
mod texture;

pub use render::{
    native_roi_side, render_canonical, render_random, render_sample, roi_round_trip_ncc, rotate,
    Nuisance, NuisanceRanges, SyntheticSample,
};
pub use texture::{in_hand, Background, PalmIdentity};
