//! Procedurally drawn cartoon faces whose eight attributes are visible in the
//! pixels. Used for hermetic tests, the runnable examples and desk-scale runs
//! where no real face corpus is available.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{normalize, AttributeVector, Corpus, Sample, ATTRIBUTE_DIM};
use crate::error::Result;

const BUSHY_EYEBROWS: usize = 0;
const MOUTH_OPEN: usize = 1;
const BIG_LIPS: usize = 2;
const MALE: usize = 3;
const MUSTACHE: usize = 4;
const SMILING: usize = 5;
const LIPSTICK: usize = 6;
const NO_BEARD: usize = 7;

struct Face {
    attrs: [bool; ATTRIBUTE_DIM],
    skin: [f64; 3],
    hair: [f64; 3],
    background: [f64; 3],
    center: (f64, f64),
    radii: (f64, f64),
}

/// Renders one `resolution`² RGB face (row-major `H×W×3`) for the given attributes.
pub fn render_face(resolution: usize, attrs: &AttributeVector, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let on = attrs.0.map(|v| v >= 0.5);
    let skin_tones = [
        [0.96, 0.80, 0.69],
        [0.87, 0.67, 0.52],
        [0.68, 0.49, 0.36],
        [0.45, 0.32, 0.24],
    ];
    let hair_tones = [
        [0.10, 0.08, 0.06],
        [0.35, 0.22, 0.12],
        [0.75, 0.62, 0.35],
        [0.55, 0.20, 0.10],
    ];
    let face = Face {
        attrs: on,
        skin: skin_tones[rng.random_range(0..skin_tones.len())],
        hair: hair_tones[rng.random_range(0..hair_tones.len())],
        background: [
            rng.random_range(0.2..0.9),
            rng.random_range(0.2..0.9),
            rng.random_range(0.2..0.9),
        ],
        center: (rng.random_range(0.48..0.54), rng.random_range(0.47..0.53)),
        radii: (rng.random_range(0.34..0.40), rng.random_range(0.26..0.31)),
    };
    let mut out = Vec::with_capacity(resolution * resolution * 3);
    for y in 0..resolution {
        for x in 0..resolution {
            let v = (y as f64 + 0.5) / resolution as f64;
            let u = (x as f64 + 0.5) / resolution as f64;
            let rgb = face.shade(u, v);
            out.extend(rgb.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
    }
    out
}

impl Face {
    fn inside_face(&self, u: f64, v: f64) -> bool {
        let dy = (v - self.center.0) / self.radii.0;
        let dx = (u - self.center.1) / self.radii.1;
        dx * dx + dy * dy <= 1.0
    }

    fn shade(&self, u: f64, v: f64) -> [f64; 3] {
        let (cy, cx) = self.center;
        let (ry, rx) = self.radii;
        let rel_x = u - cx;
        let rel_y = v - cy;
        let a = &self.attrs;

        // long hair frames the face unless male
        let hair_band = if a[MALE] { 0.03 } else { 0.09 };
        let hair_bottom = if a[MALE] { cy - 0.15 } else { cy + 0.25 };
        let dy = rel_y / (ry + hair_band);
        let dx = rel_x / (rx + hair_band);
        let in_hair_shell = dx * dx + dy * dy <= 1.0 && v < hair_bottom;

        if !self.inside_face(u, v) {
            if in_hair_shell {
                return self.hair;
            }
            let shade = 0.85 + 0.15 * v;
            return self.background.map(|c| c * shade);
        }
        if v < cy - ry * 0.72 {
            return self.hair;
        }

        let dark = [0.12, 0.09, 0.08];
        let eye_y = cy - 0.07;
        for side in [-1.0, 1.0] {
            let ex = cx + side * 0.11;
            if ((u - ex) / 0.045).powi(2) + ((v - eye_y) / 0.025).powi(2) <= 1.0 {
                return if ((u - ex) / 0.018).powi(2) + ((v - eye_y) / 0.018).powi(2) <= 1.0 {
                    dark
                } else {
                    [0.97, 0.97, 0.97]
                };
            }
            let brow_half = if a[BUSHY_EYEBROWS] { 0.022 } else { 0.008 };
            if (u - ex).abs() <= 0.06 && (v - (eye_y - 0.06)).abs() <= brow_half {
                return self.hair.map(|c| c * 0.8);
            }
        }

        if rel_x.abs() <= 0.02 && (v - (cy + 0.04)).abs() <= 0.05 {
            return self.skin.map(|c| c * 0.85);
        }

        let mouth_y = cy + 0.17;
        let mouth_half_w = 0.09;
        let curve = if a[SMILING] { -0.04 } else { 0.0 };
        let mouth_line = mouth_y + curve * (1.0 - (rel_x / mouth_half_w).powi(2));
        let lip_half = if a[BIG_LIPS] { 0.022 } else { 0.011 };
        let opening = if a[MOUTH_OPEN] { 0.022 } else { 0.0 };
        if rel_x.abs() <= mouth_half_w {
            let d = v - mouth_line;
            if d.abs() <= opening * 0.8 {
                return [0.25, 0.05, 0.07];
            }
            if d.abs() <= opening + lip_half {
                return if a[LIPSTICK] {
                    [0.80, 0.08, 0.15]
                } else {
                    [0.72, 0.45, 0.42]
                };
            }
        }

        if a[MUSTACHE] && rel_x.abs() <= 0.085 && (v - (mouth_y - 0.05)).abs() <= 0.015 {
            return self.hair.map(|c| c * 0.7);
        }
        if !a[NO_BEARD] && v > mouth_y + 0.05 {
            return self.hair.map(|c| c * 0.75 + 0.05);
        }
        // soft cheek shading keeps the face from being flat
        let shade = 1.0 - 0.25 * ((rel_x / rx).powi(2) + (rel_y / ry).powi(2));
        self.skin.map(|c| c * shade)
    }
}

/// Draws attributes with each entry Bernoulli(0.5).
pub fn random_attributes(rng: &mut impl Rng) -> AttributeVector {
    let mut v = [0.0; ATTRIBUTE_DIM];
    for x in &mut v {
        *x = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
    }
    AttributeVector(v)
}

/// `count` faces with ids `face_00000`, … and random binary attributes.
pub fn corpus(count: usize, resolution: usize, seed: u64) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..count)
        .map(|i| {
            let attrs = random_attributes(&mut rng);
            let face_seed: u64 = rng.random();
            let pixels = render_face(resolution, &attrs, face_seed);
            Ok(Sample {
                id: format!("face_{i:05}"),
                image: normalize(&pixels, resolution, resolution, 3)?,
                attributes: attrs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::from_samples(resolution, samples)
}
