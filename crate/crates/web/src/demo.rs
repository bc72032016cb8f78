use stegnet_core::data::{embed_simulate, synthetic_cover as cover, GrayImage, Payload, Texture};
use stegnet_core::nnops::{SppConfig, SppLevelGeometry};
use stegnet_core::srm::{preprocess_forward, PreprocessingLayer};
use stegnet_core::zhunet::BLOCK_POOL;
use stegnet_core::{Result, Tensor};

pub fn synthetic_cover(size: usize, grain: f64, seed: u64) -> Result<Vec<u8>> {
    let texture = Texture { grain, ..Texture::default() };
    Ok(cover(size, size, &texture, seed)?.into_pixels())
}

pub fn srm_residuals(pixels: &[u8], width: usize, height: usize) -> Result<Vec<f32>> {
    let data = pixels.iter().map(|&v| v as f64).collect();
    let image = Tensor::from_data(&[1, 1, height, width], data)?;
    let (maps, _) = preprocess_forward(&image, &PreprocessingLayer::<f64>::srm(false))?;
    Ok(maps.data().iter().map(|&v| v as f32).collect())
}

pub fn srm_filter_names() -> Vec<String> {
    PreprocessingLayer::<f32>::srm(false).names
}

pub fn change_map(pixels: &[u8], width: usize, height: usize, payload: f64, seed: u64) -> Result<Vec<i8>> {
    let cover = GrayImage::new(width, height, pixels.to_vec())?;
    let stego = embed_simulate(&cover, Payload::new(payload)?, seed);
    Ok(cover.pixels().iter().zip(stego.pixels()).map(|(&c, &s)| (s as i16 - c as i16) as i8).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SppLayout {
    /// Side of the block-4 feature map the pyramid pools over.
    pub map_side: usize,
    pub levels: Vec<SppLevelGeometry>,
}

/// Follows a square input through the three pooling stages and lays out the
/// pyramid over the resulting map.
pub fn spp_layout(input_size: usize, levels: &[usize]) -> Result<SppLayout> {
    let mut side = input_size;
    for _ in 0..3 {
        side = BLOCK_POOL.output_size(side, side)?.0;
    }
    let cfg = SppConfig { levels: levels.to_vec() };
    cfg.validate()?;
    Ok(SppLayout { map_side: side, levels: cfg.geometry(side)? })
}
