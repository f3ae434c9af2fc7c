//! One module per subcommand. Each exposes its clap arguments and a `run`
//! function; the heavy lifting lives in plain functions usable without the
//! command line.

pub mod ablate;
pub mod denoise;
pub mod eval;
pub mod gradcheck;
pub mod synth;
pub mod train;

use nfcnn_core::data::{from_unit, to_unit};
use nfcnn_core::model::Parameters;
use nfcnn_core::Tensor;

/// Eval-phase denoising of one `[C, H, W]` image in pixel units.
pub fn denoise_image(params: &Parameters<f32>, image: &Tensor<f32>) -> nfcnn_core::Result<Tensor<f32>> {
    let shape = image.shape().to_vec();
    let batch = to_unit(image).reshape(&[1, shape[0], shape[1], shape[2]])?;
    let out = params.denoise(&batch)?;
    from_unit(&out).reshape(&shape)
}
