use crate::gateway::{Gateway, GatewayError};

use super::EvalError;

/// Cosine similarity clamped to [-1, 1]. `None` for a zero vector or a
/// dimension mismatch.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Similarity of two texts through the Embedder role, in [0, 1] (negative
/// cosines report as 0).
pub fn cosine_sts(a: &str, b: &str, gateway: &Gateway) -> Result<f64, EvalError> {
    if a.trim().is_empty() || b.trim().is_empty() {
        return Err(EvalError::Gateway(GatewayError::EmptyText));
    }
    if a == b {
        // Still embed once so an unassigned Embedder is reported.
        let v = gateway.embed(a)?;
        return cosine(&v, &v).map(|_| 1.0).ok_or(EvalError::ZeroVector);
    }
    let va = gateway.embed(a)?;
    let vb = gateway.embed(b)?;
    cosine(&va, &vb).map(|c| c.max(0.0)).ok_or(EvalError::ZeroVector)
}
