//! Stage glue shared by the CLI and tests: CT preprocessing into network
//! inputs, and turning stitched predictions into airway masks.

use crate::connectivity::decode_connectivity;
use crate::error::{Error, Result};
use crate::fuzzy::{consolidate_candidates, AffinityParams, ConsolidationStatus};
use crate::preprocess::{clip_normalize, distance_transform, extract_lung_mask, HuWindow, LungParams};
use crate::tiler::{AuxContext, ChannelGrid};
use crate::voxel::{BinaryMask, Volume, CHANNELS};

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub lung: BinaryMask,
    /// Euclidean distance (voxels) from each lung voxel to the lung border.
    pub distance: Volume,
    /// CT windowed to `[0, 255]`.
    pub normalized: Volume,
}

pub fn preprocess_ct(ct: &Volume, window: &HuWindow, lung: &LungParams) -> Result<Preprocessed> {
    let mask = extract_lung_mask(ct, lung)?;
    let distance = distance_transform(&mask).to_volume().with_spacing(ct.spacing())?;
    let normalized = clip_normalize(ct, window)?;
    Ok(Preprocessed {
        lung: mask,
        distance,
        normalized,
    })
}

impl Preprocessed {
    pub fn aux_context(&self) -> Result<AuxContext> {
        let bbox = self.lung.bounding_box().ok_or_else(|| Error::EmptyResult("lung mask is empty".into()))?;
        Ok(AuxContext::new(bbox, self.distance.clone()))
    }
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    /// Decoded (or thresholded, for 1-channel models) prediction.
    pub decoded: BinaryMask,
    /// `decoded` restricted to the lung mask.
    pub masked: BinaryMask,
    /// After fuzzy-connectedness consolidation, when enabled.
    pub consolidated: Option<(BinaryMask, ConsolidationStatus)>,
}

impl Segmentation {
    pub fn final_mask(&self) -> &BinaryMask {
        self.consolidated.as_ref().map_or(&self.masked, |c| &c.0)
    }
}

/// Decodes a stitched prediction, multiplies it with the lung mask and,
/// unless `fc` is `None`, consolidates it over `image`.
pub fn segment(
    prob: &ChannelGrid,
    lung: &BinaryMask,
    image: &Volume,
    threshold: f32,
    fc: Option<&AffinityParams>,
) -> Result<Segmentation> {
    if prob.shape != lung.shape() || image.shape() != lung.shape() {
        return Err(Error::invalid("prediction, lung mask and image must share a shape"));
    }
    let decoded = match prob.channels {
        CHANNELS => decode_connectivity(&prob.clone().into_cube()?, threshold)?,
        1 => {
            if !(threshold > 0.0 && threshold < 1.0) {
                return Err(Error::invalid(format!("threshold {threshold} outside (0, 1)")));
            }
            BinaryMask::new(prob.shape, prob.data.iter().map(|p| *p >= threshold).collect())?
        }
        c => return Err(Error::invalid(format!("cannot segment a {c}-channel prediction"))),
    };
    let masked = decoded.and(lung)?;
    let consolidated = fc
        .map(|p| consolidate_candidates(&masked, image, lung, p))
        .transpose()?;
    Ok(Segmentation {
        decoded,
        masked,
        consolidated,
    })
}
