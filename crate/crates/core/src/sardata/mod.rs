//! Dual-polarization chip ingestion and synthetic data.

pub mod channels;
pub mod chip;
pub mod manifest;
pub mod synth;

pub use channels::{
    derive_channels, derive_selected, normalize_and_resize, prepare, BranchMask, GuidedTriple,
    RawTriple, ALL_BRANCHES,
};
pub use chip::{decode_chip, encode_chip, read_chip, write_chip, ComplexChipPair};
pub use manifest::{DatasetManifest, ManifestEntry, ManifestRecord, Split};
pub use synth::{synth_chip, ShipGeometry, SynthConfig};

use crate::error::Result;
use crate::par;

/// Reads and preprocesses every chip of a manifest, in manifest order.
pub fn load_manifest(
    manifest: &DatasetManifest,
    target: usize,
    mask: BranchMask,
) -> Result<Vec<GuidedTriple>> {
    par::map_range(manifest.len(), |i| {
        let e = &manifest.entries[i];
        let pair = read_chip(&e.path)?.with_label(e.label);
        prepare(&pair, target, mask)
    })
    .into_iter()
    .collect()
}
