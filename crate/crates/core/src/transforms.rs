//! Patch-based reconstruction and effect transfer.
//!
//! Each query position is replaced by a payload looked up through its match
//! and overlapping placements are averaged uniformly. Payloads for luminance
//! output are stored relative to the unit-norm representative and are scaled
//! by the query patch's original magnitude when placed.

use rayon::prelude::*;

use crate::color::YCbCrFrame;
use crate::engine::AnnField;
use crate::error::{Error, Result};
use crate::model::{elementwise_median, ReferenceModel};
use crate::patch::{extract_patches, l2_norm, Frame, PatchShape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PayloadKind {
    /// The unit-norm representative itself.
    Reconstruction,
    /// Two chroma planes per pixel (Cb patch followed by Cr patch), absolute.
    ChromaPair,
    /// A transformed luminance patch, relative to the representative's scale.
    FullPatch,
}

/// Per-reference payloads aligned with the model's indices.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectTable {
    pub kind: PayloadKind,
    pub shape: PatchShape,
    payload_dim: usize,
    payloads: Vec<f32>,
}

impl EffectTable {
    pub fn reconstruction(model: &ReferenceModel) -> Self {
        EffectTable {
            kind: PayloadKind::Reconstruction,
            shape: model.shape,
            payload_dim: model.dim(),
            payloads: model.references().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.payloads.len() / self.payload_dim
    }

    pub fn is_empty(&self) -> bool {
        self.payloads.is_empty()
    }

    pub fn payload_dim(&self) -> usize {
        self.payload_dim
    }

    pub fn payload(&self, i: usize) -> &[f32] {
        &self.payloads[i * self.payload_dim..(i + 1) * self.payload_dim]
    }
}

/// The already-transformed companion of the model's source frame.
#[derive(Clone, Copy, Debug)]
pub enum Transformed<'a> {
    /// A transformed luminance frame (denoised, stylised, ...).
    Luma(&'a Frame),
    /// Chroma planes of the coloured source.
    Chroma { cb: &'a Frame, cr: &'a Frame },
}

/// Build payloads from a keyframe pair. `membership[i]` lists the source
/// frame's patch positions (stride-1 grid, row-major) in reference `i`'s
/// cluster; each payload is the element-wise median over those members.
pub fn build_effect_table(
    model: &ReferenceModel,
    membership: Option<&[Vec<usize>]>,
    source_raw: &Frame,
    transformed: Transformed<'_>,
) -> Result<EffectTable> {
    let membership = membership.ok_or(Error::MissingMembership)?;
    if membership.len() != model.n() {
        return Err(Error::Dimension(format!("{} membership lists for {} references", membership.len(), model.n())));
    }
    let shape = model.shape;
    let dim = shape.dim();
    let raw = extract_patches(source_raw, shape, 1)?;
    let check = |f: &Frame| -> Result<()> {
        if f.same_geometry(source_raw) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "transformed keyframe {}x{} does not match raw keyframe {}x{}",
                f.width, f.height, source_raw.width, source_raw.height
            )))
        }
    };
    if let Some(&bad) = membership.iter().flatten().find(|&&m| m >= raw.len()) {
        return Err(Error::IndexOutOfRange { index: bad, n: raw.len() });
    }

    let (kind, payload_dim, payloads) = match transformed {
        Transformed::Luma(fx) => {
            check(fx)?;
            let fx = extract_patches(fx, shape, 1)?;
            let payloads: Vec<Vec<f32>> = membership
                .par_iter()
                .map(|members| {
                    let scale = l2_norm(&elementwise_median(&raw.values, dim, members));
                    let mut p = elementwise_median(&fx.values, dim, members);
                    if scale > 0.0 {
                        p.iter_mut().for_each(|v| *v /= scale);
                    }
                    p
                })
                .collect();
            (PayloadKind::FullPatch, dim, payloads.concat())
        }
        Transformed::Chroma { cb, cr } => {
            check(cb)?;
            check(cr)?;
            let cb = extract_patches(cb, shape, 1)?;
            let cr = extract_patches(cr, shape, 1)?;
            let payloads: Vec<Vec<f32>> = membership
                .par_iter()
                .map(|members| {
                    let mut p = elementwise_median(&cb.values, dim, members);
                    p.extend(elementwise_median(&cr.values, dim, members));
                    p
                })
                .collect();
            (PayloadKind::ChromaPair, 2 * dim, payloads.concat())
        }
    };
    Ok(EffectTable { kind, shape, payload_dim, payloads })
}

/// Output of [`apply_effect`].
#[derive(Clone, Debug, PartialEq)]
pub enum EffectOutput {
    Luma(Frame),
    Color(YCbCrFrame),
}

impl EffectOutput {
    pub fn into_luma(self) -> Option<Frame> {
        match self {
            EffectOutput::Luma(f) => Some(f),
            EffectOutput::Color(_) => None,
        }
    }

    pub fn into_color(self) -> Option<YCbCrFrame> {
        match self {
            EffectOutput::Color(c) => Some(c),
            EffectOutput::Luma(_) => None,
        }
    }
}

/// Place the payload of each position's match and average overlaps.
/// `norms` are the query patches' original magnitudes (grid order).
pub fn apply_effect_with_norms(
    frame: &Frame,
    norms: &[f32],
    field: &AnnField,
    table: &EffectTable,
) -> Result<EffectOutput> {
    let shape = table.shape;
    let (pw, ph) = (shape.width, shape.height);
    if frame.width < pw || frame.height < ph {
        return Err(Error::Dimension("frame smaller than patch".into()));
    }
    let (gw, gh) = (frame.width - pw + 1, frame.height - ph + 1);
    if field.width != gw || field.height != gh || norms.len() != gw * gh {
        return Err(Error::Dimension(format!(
            "field {}x{} does not fit a {}x{} frame with {}x{} patches",
            field.width, field.height, frame.width, frame.height, pw, ph
        )));
    }
    if let Some(&bad) = field.indices.iter().find(|&&i| i as usize >= table.len()) {
        return Err(Error::IndexOutOfRange { index: bad as usize, n: table.len() });
    }
    let dim = shape.dim();

    // Gather formulation: each output pixel sums the payload samples of every
    // window covering it, so rows can be computed independently.
    let planes = if table.kind == PayloadKind::ChromaPair { 2 } else { 1 };
    let width = frame.width;
    let rows: Vec<Vec<f32>> = (0..frame.height)
        .into_par_iter()
        .map(|py| {
            let mut row = vec![0f32; width * planes];
            let gy_lo = py.saturating_sub(ph - 1);
            let gy_hi = py.min(gh - 1);
            for px in 0..width {
                let gx_lo = px.saturating_sub(pw - 1);
                let gx_hi = px.min(gw - 1);
                let mut acc = [0f32; 2];
                let mut count = 0u32;
                for gy in gy_lo..=gy_hi {
                    for gx in gx_lo..=gx_hi {
                        let k = gy * gw + gx;
                        let payload = table.payload(field.indices[k] as usize);
                        let off = (py - gy) * pw + (px - gx);
                        match table.kind {
                            PayloadKind::ChromaPair => {
                                acc[0] += payload[off];
                                acc[1] += payload[dim + off];
                            }
                            _ => acc[0] += payload[off] * norms[k],
                        }
                        count += 1;
                    }
                }
                let inv = 1.0 / count as f32;
                for c in 0..planes {
                    row[c * width + px] = acc[c] * inv;
                }
            }
            row
        })
        .collect();

    let plane = |c: usize| Frame {
        width,
        height: frame.height,
        data: rows.iter().flat_map(|r| r[c * width..(c + 1) * width].iter().copied()).collect(),
    };
    Ok(match table.kind {
        PayloadKind::ChromaPair => EffectOutput::Color(YCbCrFrame { y: frame.clone(), cb: plane(0), cr: plane(1) }),
        _ => EffectOutput::Luma(plane(0)),
    })
}

pub fn apply_effect(frame: &Frame, field: &AnnField, table: &EffectTable) -> Result<EffectOutput> {
    let grid = extract_patches(frame, table.shape, 1)?;
    apply_effect_with_norms(frame, &grid.norms, field, table)
}

/// Replace each patch with its (rescaled) match and average overlaps.
pub fn reconstruct_frame(frame: &Frame, field: &AnnField, model: &ReferenceModel) -> Result<Frame> {
    let out = apply_effect(frame, field, &EffectTable::reconstruction(model))?;
    Ok(out.into_luma().expect("reconstruction payloads are luminance"))
}

/// `‖gt − rec‖₂ / ‖gt‖₂` over all pixels.
pub fn reconstruction_error(gt: &Frame, rec: &Frame) -> Result<f64> {
    if !gt.same_geometry(rec) {
        return Err(Error::Dimension("ground truth and reconstruction differ in size".into()));
    }
    let (mut num, mut den) = (0f64, 0f64);
    for (&g, &r) in gt.data.iter().zip(&rec.data) {
        let d = g as f64 - r as f64;
        num += d * d;
        den += g as f64 * g as f64;
    }
    if den == 0.0 {
        return Err(Error::InvalidParam("ground truth has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

/// 3×3 box blur with edge clamping; a patch-level Lipschitz transform used in tests and demos.
pub fn box_blur3(frame: &Frame) -> Frame {
    let (w, h) = (frame.width, frame.height);
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0f32;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    s += frame.data[yy * w + xx];
                }
            }
            out[y * w + x] = s / 9.0;
        }
    }
    Frame { width: w, height: h, data: out }
}
