//! Moving through the embedding space: along the aggression gradient of the
//! style head, and around it on the plane that keeps the predicted score fixed.

use crate::error::{Error, Result};
use crate::learn::{Model, StyleEmbedding, EMBED_DIM};
use crate::personas::{ADB_MAX, ADB_MIN};

type Vec3 = [f64; EMBED_DIM];

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(w: &Vec3, s: f64, d: &Vec3) -> Vec3 {
    std::array::from_fn(|i| w[i] + s * d[i])
}

/// ∇_w of the predicted score and its norm. Constant because the style head
/// is affine.
fn raw_gradient(model: &Model) -> Result<(Vec3, f64)> {
    let g = model.style_gradient();
    let n = norm(&g);
    if !(n > 1e-12) || !n.is_finite() {
        return Err(Error::DegenerateStyleHead);
    }
    Ok((g, n))
}

/// Unit direction of increasing aggression.
pub fn aggression_gradient(model: &Model) -> Result<Vec3> {
    let (g, n) = raw_gradient(model)?;
    Ok(g.map(|x| x / n))
}

/// Moves `w` along the gradient so that the predicted score changes by
/// `delta_adb`, clamped to the ADB range.
pub fn shift_style(model: &Model, w: &Vec3, delta_adb: f64) -> Result<Vec3> {
    let (g, n) = raw_gradient(model)?;
    let s = model.predict_style(w);
    let target = (s + delta_adb).clamp(ADB_MIN, ADB_MAX);
    // Moving by t·g/‖g‖ changes the score by t·‖g‖.
    Ok(axpy(w, (target - s) / (n * n), &g))
}

/// Orthonormal basis of the plane perpendicular to the unit vector `g`:
/// `u1` is the projection of e1 onto the plane, or of e2 when e1 is nearly
/// parallel to `g`.
pub fn perpendicular_basis(g: &Vec3) -> (Vec3, Vec3) {
    let project = |e: Vec3| axpy(&e, -dot(&e, g), g);
    let mut u1 = project([1.0, 0.0, 0.0]);
    if norm(&u1) < 1e-6 {
        u1 = project([0.0, 1.0, 0.0]);
    }
    let n1 = norm(&u1);
    let u1 = u1.map(|x| x / n1);
    let u2 = [g[1] * u1[2] - g[2] * u1[1], g[2] * u1[0] - g[0] * u1[2], g[0] * u1[1] - g[1] * u1[0]];
    (u1, u2)
}

/// Point on the one-standard-deviation ellipse around `w` in the plane
/// perpendicular to the gradient. The axes are the standard deviations of the
/// training embeddings projected onto the plane basis.
pub fn perpendicular_sample(model: &Model, w: &Vec3, training: &[StyleEmbedding], angle: f64) -> Result<Vec3> {
    if training.len() < 3 {
        return Err(Error::InsufficientSpread);
    }
    let g = aggression_gradient(model)?;
    let (u1, u2) = perpendicular_basis(&g);
    let std_along = |u: &Vec3| {
        let p: Vec<f64> = training.iter().map(|e| dot(&e.w, u)).collect();
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        (p.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (p.len() - 1) as f64).sqrt()
    };
    let (s1, s2) = (std_along(&u1), std_along(&u2));
    if !(s1 > 1e-9 && s2 > 1e-9) {
        return Err(Error::InsufficientSpread);
    }
    let step = axpy(&axpy(&[0.0; EMBED_DIM], s1 * angle.cos(), &u1), s2 * angle.sin(), &u2);
    // Remove the last rounding residue along g so the score is unchanged.
    let step = axpy(&step, -dot(&step, &g), &g);
    Ok(axpy(w, 1.0, &step))
}

/// Coordinate of `w` along the unit aggression gradient.
pub fn project_on_gradient(model: &Model, w: &Vec3) -> Result<f64> {
    Ok(dot(w, &aggression_gradient(model)?))
}
