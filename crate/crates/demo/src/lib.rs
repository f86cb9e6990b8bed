//! Browser bindings for three interactive views: the subband mosaic of a
//! synthetic real/fake image, an ROC/AUC explorer, and a CMC curve.

use wasm_bindgen::prelude::*;
use wpad::data::synth_dataset;
use wpad::metrics::{cmc, roc_curve};
use wpad::wavelet::{dwt2d, FilterKind};
use wpad::Tensor;

/// A sampled curve plus one summary number (AUC, or the rank-1 rate).
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    xs: Vec<f64>,
    ys: Vec<f64>,
    value: f64,
}

#[wasm_bindgen]
impl Curve {
    #[wasm_bindgen(getter)]
    pub fn xs(&self) -> Vec<f64> {
        self.xs.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn ys(&self) -> Vec<f64> {
        self.ys.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn value(&self) -> f64 {
        self.value
    }
}

/// One real and one fake synthetic image, `size x size` each, concatenated.
pub fn synth_images(seed: u64, size: usize) -> Result<Vec<f64>, String> {
    let ds = synth_dataset(1, (size, size), seed).map_err(|e| e.to_string())?;
    Ok(ds
        .samples
        .iter()
        .flat_map(|s| s.image.data().to_vec())
        .collect())
}

/// RGBA mosaic `[LL LH; HL HH]`, each band shown as |coef| / max|coef|.
/// Returns the mosaic width, height and pixels.
pub fn mosaic(image: &Tensor, filter: &str) -> Result<(usize, usize, Vec<u8>), String> {
    let kind: FilterKind = filter.parse().map_err(|e| format!("{e}"))?;
    let sub = dwt2d(image, &kind.filters()).map_err(|e| e.to_string())?;
    let (bh, bw) = sub.ll.dims2().map_err(|e| e.to_string())?;
    let (w, h) = (2 * bw, 2 * bh);
    let mut rgba = vec![255u8; w * h * 4];
    for (i, (_, band)) in sub.bands().iter().enumerate() {
        let (oy, ox) = ((i / 2) * bh, (i % 2) * bw);
        let peak = band.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for r in 0..bh {
            for c in 0..bw {
                let v = if peak > 0.0 {
                    band.at2(r, c).abs() / peak
                } else {
                    0.0
                };
                let px = ((oy + r) * w + ox + c) * 4;
                let g = (v * 255.0).round() as u8;
                rgba[px..px + 3].fill(g);
            }
        }
    }
    Ok((w, h, rgba))
}

/// Mean squared coefficient of LL, LH, HL and HH.
pub fn band_energies(image: &Tensor, filter: &str) -> Result<Vec<f64>, String> {
    let kind: FilterKind = filter.parse().map_err(|e| format!("{e}"))?;
    let sub = dwt2d(image, &kind.filters()).map_err(|e| e.to_string())?;
    Ok(sub
        .bands()
        .iter()
        .map(|(_, b)| b.sum_squares() / b.len() as f64)
        .collect())
}

/// `score,label` per line (label 1 = attack); blank lines and `#` comments skipped.
pub fn parse_scores(text: &str) -> Result<Vec<(f64, usize)>, String> {
    data_lines(text)
        .map(|(n, line)| {
            let (s, l) = line
                .split_once([',', ' ', '\t'])
                .ok_or_else(|| format!("line {n}: expected `score,label`"))?;
            let score = s
                .trim()
                .parse()
                .map_err(|_| format!("line {n}: bad score `{s}`"))?;
            let label = l
                .trim()
                .parse()
                .map_err(|_| format!("line {n}: bad label `{l}`"))?;
            Ok((score, label))
        })
        .collect()
}

/// `true_class: s0 s1 ...` per line.
pub fn parse_probes(text: &str) -> Result<(Vec<Vec<f64>>, Vec<usize>), String> {
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (n, line) in data_lines(text) {
        let (t, scores) = line
            .split_once(':')
            .ok_or_else(|| format!("line {n}: expected `class: scores...`"))?;
        truth.push(
            t.trim()
                .parse()
                .map_err(|_| format!("line {n}: bad class `{t}`"))?,
        );
        rows.push(
            scores
                .split([',', ' ', '\t'])
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| format!("line {n}: bad score `{s}`")))
                .collect::<Result<Vec<f64>, _>>()?,
        );
    }
    Ok((rows, truth))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or_default().trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn roc_from_text(text: &str) -> Result<Curve, String> {
    let roc = roc_curve(&parse_scores(text)?).map_err(|e| e.to_string())?;
    Ok(Curve {
        xs: roc.points.iter().map(|p| p.fpr).collect(),
        ys: roc.points.iter().map(|p| p.tpr).collect(),
        value: roc.auc,
    })
}

pub fn cmc_from_text(text: &str) -> Result<Curve, String> {
    let (rows, truth) = parse_probes(text)?;
    let curve = cmc(&rows, &truth).map_err(|e| e.to_string())?;
    Ok(Curve {
        xs: curve.iter().map(|c| c.0 as f64).collect(),
        ys: curve.iter().map(|c| c.1).collect(),
        value: curve[0].1,
    })
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

fn image(pixels: Vec<f64>, width: usize, height: usize) -> Result<Tensor, String> {
    Tensor::from_values(&[height, width], pixels).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = synthImages)]
pub fn synth_images_js(seed: u32, size: u32) -> Result<Vec<f64>, JsError> {
    synth_images(u64::from(seed), size as usize).map_err(js)
}

/// RGBA pixels of the mosaic; its size is twice the (rounded-up) half size.
#[wasm_bindgen(js_name = subbandMosaic)]
pub fn subband_mosaic_js(
    pixels: Vec<f64>,
    width: u32,
    height: u32,
    filter: &str,
) -> Result<Vec<u8>, JsError> {
    let img = image(pixels, width as usize, height as usize).map_err(js)?;
    Ok(mosaic(&img, filter).map_err(js)?.2)
}

#[wasm_bindgen(js_name = bandEnergies)]
pub fn band_energies_js(
    pixels: Vec<f64>,
    width: u32,
    height: u32,
    filter: &str,
) -> Result<Vec<f64>, JsError> {
    let img = image(pixels, width as usize, height as usize).map_err(js)?;
    band_energies(&img, filter).map_err(js)
}

#[wasm_bindgen(js_name = rocCurve)]
pub fn roc_curve_js(text: &str) -> Result<Curve, JsError> {
    roc_from_text(text).map_err(js)
}

#[wasm_bindgen(js_name = cmcCurve)]
pub fn cmc_curve_js(text: &str) -> Result<Curve, JsError> {
    cmc_from_text(text).map_err(js)
}
