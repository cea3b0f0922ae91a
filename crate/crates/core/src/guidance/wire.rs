//! `gdp/1` message framing.
//!
//! Every body is the 8-byte magic `GDPROTO1`, a little-endian `u32` JSON header
//! length, the JSON header, then raw little-endian `f32` tensors of `h·w·3`
//! values in row-major RGB order.

use serde::{Deserialize, Serialize};

use super::{GuidanceError, GuidanceRequest, GuidanceResponse, GuidanceSpace};
use crate::image::Image;

pub const MAGIC: &[u8; 8] = b"GDPROTO1";
pub const MAX_HEADER_LEN: usize = 1 << 20;
/// Upper bound on `h·w` accepted from a peer.
pub const MAX_PIXELS: usize = 8192 * 8192;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestHeader {
    pub h: usize,
    pub w: usize,
    pub noise_fraction: f64,
    pub seed: u64,
    pub prompt: String,
    pub guidance_scale: f64,
    pub space: GuidanceSpace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_id: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseHeader {
    pub h: usize,
    pub w: usize,
    pub has_preview: bool,
}

fn protocol(msg: impl Into<String>) -> GuidanceError {
    GuidanceError::Protocol(msg.into())
}

fn frame<H: Serialize>(header: &H, tensors: &[&Image]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("headers serialize");
    let floats: usize = tensors.iter().map(|t| t.data.len()).sum();
    let mut out = Vec::with_capacity(12 + json.len() + 4 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors {
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Splits a body into its parsed header and the tensor payload.
fn unframe<H: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<(H, &[u8]), GuidanceError> {
    if body.len() < 12 {
        return Err(protocol(format!("body of {} bytes is shorter than the frame prefix", body.len())));
    }
    if &body[..8] != MAGIC {
        return Err(protocol("bad magic"));
    }
    let len = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
    if len > MAX_HEADER_LEN {
        return Err(protocol(format!("header length {len} exceeds {MAX_HEADER_LEN}")));
    }
    let rest = &body[12..];
    if rest.len() < len {
        return Err(protocol(format!(
            "header truncated: declared {len} bytes, {} available",
            rest.len()
        )));
    }
    let header = serde_json::from_slice(&rest[..len])
        .map_err(|e| protocol(format!("malformed JSON header: {e}")))?;
    Ok((header, &rest[len..]))
}

fn tensor_len(h: usize, w: usize) -> Result<usize, GuidanceError> {
    let pixels = h
        .checked_mul(w)
        .filter(|&p| p <= MAX_PIXELS)
        .ok_or_else(|| protocol(format!("tensor shape {h}x{w} too large")))?;
    Ok(pixels * 3)
}

fn read_tensor(bytes: &[u8], w: usize, h: usize) -> Image {
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Image::from_data(w, h, data).expect("length checked by caller")
}

pub fn encode_request(request: &GuidanceRequest) -> Vec<u8> {
    let header = RequestHeader {
        h: request.image.height,
        w: request.image.width,
        noise_fraction: request.noise_fraction,
        seed: request.seed,
        prompt: request.prompt.clone(),
        guidance_scale: request.guidance_scale,
        space: request.space,
        view_id: request.view_id,
    };
    frame(&header, &[&request.image])
}

pub fn decode_request(body: &[u8]) -> Result<GuidanceRequest, GuidanceError> {
    let (header, payload): (RequestHeader, _) = unframe(body)?;
    let n = tensor_len(header.h, header.w)?;
    if payload.len() != 4 * n {
        return Err(protocol(format!(
            "image payload is {} bytes, expected {}",
            payload.len(),
            4 * n
        )));
    }
    Ok(GuidanceRequest {
        image: read_tensor(payload, header.w, header.h),
        noise_fraction: header.noise_fraction,
        seed: header.seed,
        prompt: header.prompt,
        guidance_scale: header.guidance_scale,
        space: header.space,
        view_id: header.view_id,
    })
}

pub fn encode_response(response: &GuidanceResponse) -> Vec<u8> {
    let g = &response.grad_image;
    let header = ResponseHeader {
        h: g.height,
        w: g.width,
        has_preview: response.x_hat_preview.is_some(),
    };
    match &response.x_hat_preview {
        Some(p) => frame(&header, &[g, p]),
        None => frame(&header, &[g]),
    }
}

/// Decodes a response and checks it against the request's `(width, height)`.
/// A non-finite gradient is a protocol error; the preview is clipped to `[0, 1]`.
pub fn decode_response(body: &[u8], expected: (usize, usize)) -> Result<GuidanceResponse, GuidanceError> {
    let (header, payload): (ResponseHeader, _) = unframe(body)?;
    if (header.w, header.h) != expected {
        return Err(GuidanceError::ShapeMismatch {
            expected: (expected.1, expected.0),
            found: (header.h, header.w),
        });
    }
    let n = tensor_len(header.h, header.w)?;
    let want = 4 * n * if header.has_preview { 2 } else { 1 };
    if payload.len() != want {
        return Err(protocol(format!(
            "response payload is {} bytes, expected {want}",
            payload.len()
        )));
    }
    let grad_image = read_tensor(&payload[..4 * n], header.w, header.h);
    if !grad_image.is_finite() {
        return Err(protocol("gradient contains non-finite values"));
    }
    let x_hat_preview = if header.has_preview {
        let p = read_tensor(&payload[4 * n..], header.w, header.h);
        if !p.is_finite() {
            return Err(protocol("preview contains non-finite values"));
        }
        Some(p.clamped())
    } else {
        None
    };
    Ok(GuidanceResponse {
        grad_image,
        x_hat_preview,
    })
}
