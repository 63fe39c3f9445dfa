use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use anyhow::{Context, Result};
use mapconv::io::{load_pfm, load_vtxt, VTXT_MAGIC};
use mapconv::{ConvParams, Tensor};
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// A `(c, n)` signal, plus the image `(h, w)` when it came from a PFM.
pub type Signal = (Tensor<f64>, Option<(usize, usize)>);

/// Reads a VTXT tensor or a PFM image, told apart by the first bytes. Images
/// are flattened row-major.
pub fn load_signal(path: &Path) -> Result<Signal> {
    let mut head = [0u8; 4];
    let n = File::open(path)
        .and_then(|f| BufReader::new(f).read(&mut head))
        .with_context(|| format!("cannot read {}", path.display()))?;
    if n == 4 && &head == VTXT_MAGIC {
        return Ok((load_vtxt(path)?, None));
    }
    if n >= 2 && (&head[..2] == b"PF" || &head[..2] == b"Pf") {
        let img = load_pfm(path)?;
        let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
        return Ok((img.reshape(vec![c, h * w])?, Some((h, w))));
    }
    Err(UsageError(format!("{}: neither a VTXT tensor nor a PFM image", path.display())).into())
}

/// Convolution weights as JSON: `weights` is `(c_out, c_in, k)` row-major.
#[derive(Debug, Serialize, Deserialize)]
pub struct WeightsFile {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn load_weights(path: &Path) -> Result<ConvParams<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let w: WeightsFile = serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("{}: invalid weights JSON: {e}", path.display())))?;
    Ok(ConvParams::new(w.c_in, w.c_out, w.k, w.weights, w.bias)?)
}
