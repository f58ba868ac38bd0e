//! Sliding-window inference over the lung bounding box.

use rayon::prelude::*;

use super::net::{forward, Mode, ModelParams};
use super::tensor::Tensor;
use super::train::INTENSITY_SCALE;
use crate::error::{Error, Result};
use crate::tiler::{crop_volume, plan_tiles, stitch_predictions, AuxContext, ChannelGrid, TileSpec, AUX_CHANNELS};
use crate::voxel::Volume;

/// Predicts every tile over the context's lung box (evaluation-mode batch
/// norm, so batching does not change any value) and averages the overlaps.
pub fn predict_volume(
    params: &ModelParams<f32>,
    image: &Volume,
    aux: &AuxContext,
    spec: &TileSpec,
    batch: usize,
) -> Result<ChannelGrid> {
    if batch == 0 {
        return Err(Error::invalid("inference batch size must be positive"));
    }
    let s = image.shape();
    let size = spec.cube_shape();
    params.config.check_input(size)?;
    let bbox = aux.bbox();
    let origins = plan_tiles(s, &bbox, spec)?;
    let out_c = params.config.out_channels;
    let chunks: Vec<&[[usize; 3]]> = origins.chunks(batch).collect();
    let results: Vec<Result<Vec<([usize; 3], ChannelGrid)>>> = chunks
        .par_iter()
        .map(|chunk| {
            let n = chunk.len();
            let mut img = Vec::with_capacity(n * size.len());
            let mut ctx = Vec::with_capacity(n * AUX_CHANNELS * size.len());
            for o in chunk.iter() {
                img.extend(crop_volume(image, *o, size).data().iter().map(|v| v * INTENSITY_SCALE));
                ctx.extend(aux.tile(*o, size));
            }
            let img = Tensor::from_vec(n, 1, size, img)?;
            let ctx = Tensor::from_vec(n, AUX_CHANNELS, size, ctx)?;
            let (tape, _) = forward(params, &img, &ctx, Mode::Eval)?;
            chunk
                .iter()
                .enumerate()
                .map(|(i, o)| Ok((*o, ChannelGrid::new(out_c, size, tape.probs.sample(i).to_vec())?)))
                .collect()
        })
        .collect();
    let mut tiles = Vec::with_capacity(origins.len());
    for r in results {
        tiles.extend(r?);
    }
    stitch_predictions(&tiles, s, &bbox)
}
