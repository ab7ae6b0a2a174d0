//! Procedural toy-face renderer.
//!
//! Renders 32x32 faces as a pure function of a [`ToyFaceSpec`]: two
//! identity parameters (face width, eye spacing) plus eleven attribute
//! parameters in `[0, 1]`. Every attribute maps to a local image region,
//! so exact region masks are available as ground truth for channel
//! discovery and for locality checks on the renderer itself.

use crate::generator::Image;
use crate::{Error, Result};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Canonical attribute order used across catalogs, masks, and reports.
pub const ATTRIBUTE_NAMES: [&str; 11] = [
    "pale_skin",
    "hair_color",
    "hairstyle",
    "mouth_open",
    "wearing_lipstick",
    "bushy_eyebrow",
    "eyebrow_shape",
    "earring",
    "eyeball_position",
    "eye_close",
    "eyeglasses",
];

/// Identity and attribute parameters of one rendered face, all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyFaceSpec {
    pub face_width: f64,
    pub eye_spacing: f64,
    pub pale_skin: f64,
    pub hair_color: f64,
    pub hairstyle: f64,
    pub mouth_open: f64,
    pub wearing_lipstick: f64,
    pub bushy_eyebrow: f64,
    pub eyebrow_shape: f64,
    pub earring: f64,
    pub eyeball_position: f64,
    pub eye_close: f64,
    pub eyeglasses: f64,
}

impl ToyFaceSpec {
    /// Neutral mid-range face.
    pub fn neutral() -> Self {
        Self {
            face_width: 0.5,
            eye_spacing: 0.5,
            pale_skin: 0.5,
            hair_color: 0.5,
            hairstyle: 0.5,
            mouth_open: 0.5,
            wearing_lipstick: 0.5,
            bushy_eyebrow: 0.5,
            eyebrow_shape: 0.5,
            earring: 0.5,
            eyeball_position: 0.5,
            eye_close: 0.5,
            eyeglasses: 0.5,
        }
    }

    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let mut u = || rng.random_range(0.0..1.0);
        Self {
            face_width: u(),
            eye_spacing: u(),
            pale_skin: u(),
            hair_color: u(),
            hairstyle: u(),
            mouth_open: u(),
            wearing_lipstick: u(),
            bushy_eyebrow: u(),
            eyebrow_shape: u(),
            earring: u(),
            eyeball_position: u(),
            eye_close: u(),
            eyeglasses: u(),
        }
    }

    pub fn attribute(&self, name: &str) -> Result<f64> {
        Ok(match name {
            "pale_skin" => self.pale_skin,
            "hair_color" => self.hair_color,
            "hairstyle" => self.hairstyle,
            "mouth_open" => self.mouth_open,
            "wearing_lipstick" => self.wearing_lipstick,
            "bushy_eyebrow" => self.bushy_eyebrow,
            "eyebrow_shape" => self.eyebrow_shape,
            "earring" => self.earring,
            "eyeball_position" => self.eyeball_position,
            "eye_close" => self.eye_close,
            "eyeglasses" => self.eyeglasses,
            _ => return Err(Error::InvalidInput(format!("unknown attribute {name}"))),
        })
    }

    pub fn set_attribute(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "pale_skin" => &mut self.pale_skin,
            "hair_color" => &mut self.hair_color,
            "hairstyle" => &mut self.hairstyle,
            "mouth_open" => &mut self.mouth_open,
            "wearing_lipstick" => &mut self.wearing_lipstick,
            "bushy_eyebrow" => &mut self.bushy_eyebrow,
            "eyebrow_shape" => &mut self.eyebrow_shape,
            "earring" => &mut self.earring,
            "eyeball_position" => &mut self.eyeball_position,
            "eye_close" => &mut self.eye_close,
            "eyeglasses" => &mut self.eyeglasses,
            _ => return Err(Error::InvalidInput(format!("unknown attribute {name}"))),
        };
        *slot = value.clamp(0.0, 1.0);
        Ok(())
    }

    /// Identity closeness in parameter space (used by the contrastive
    /// identity-model training).
    pub fn identity_distance(&self, other: &Self) -> f64 {
        (self.face_width - other.face_width).abs() + (self.eye_spacing - other.eye_spacing).abs()
    }
}

/// Binary image mask naming the pixels one attribute may touch.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub mask: Array2<bool>,
}

impl RegionMask {
    pub fn empty(size: usize) -> Self {
        Self {
            mask: Array2::from_elem((size, size), false),
        }
    }

    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.mask[[y, x]]
    }

    pub fn size(&self) -> usize {
        self.mask.dim().0
    }

    pub fn is_disjoint(&self, other: &RegionMask) -> bool {
        self.mask
            .iter()
            .zip(other.mask.iter())
            .all(|(&a, &b)| !(a && b))
    }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Soft ellipse coverage: 1 inside, 0 outside, ~1px feathered edge.
fn ellipse_alpha(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64, feather: f64) -> f64 {
    let d = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt();
    1.0 - smoothstep(1.0 - feather, 1.0 + feather, d)
}

fn mix(dst: &mut [f64; 3], src: [f64; 3], alpha: f64) {
    for c in 0..3 {
        dst[c] = dst[c] * (1.0 - alpha) + src[c] * alpha;
    }
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

// Layout constants in 32x32 reference coordinates; everything scales
// linearly with the requested size.
const FACE_CX: f64 = 16.0;
const FACE_CY: f64 = 17.5;
const FACE_RY: f64 = 10.5;
const EYE_Y: f64 = 13.5;
const BROW_Y: f64 = 10.0;
const MOUTH_Y: f64 = 23.0;

fn face_rx(spec: &ToyFaceSpec) -> f64 {
    8.0 + 3.0 * spec.face_width
}

fn eye_offset(spec: &ToyFaceSpec) -> f64 {
    3.5 + 2.0 * spec.eye_spacing
}

/// Render a face at the given square size. Pure and deterministic.
pub fn render_sized(spec: &ToyFaceSpec, size: usize) -> Image {
    let s = size as f64 / 32.0;
    let mut data = Array3::<f64>::zeros((size, size, 3));
    let skin = lerp3([0.82, 0.62, 0.50], [0.97, 0.91, 0.86], spec.pale_skin);
    let hair = lerp3([0.15, 0.10, 0.07], [0.85, 0.72, 0.35], spec.hair_color);
    let lip = lerp3([0.72, 0.45, 0.40], [0.85, 0.10, 0.25], spec.wearing_lipstick);
    let rx = face_rx(spec);
    let eye_dx = eye_offset(spec);
    let feather = 0.08;

    for py in 0..size {
        for px in 0..size {
            // Work in the 32x32 reference frame.
            let x = (px as f64 + 0.5) / s;
            let y = (py as f64 + 0.5) / s;
            let mut c = [0.32, 0.36, 0.44]; // backdrop
            // Face.
            let face_a = ellipse_alpha(x, y, FACE_CX, FACE_CY, rx, FACE_RY, feather);
            mix(&mut c, skin, face_a);
            // Hair cap: upper ellipse band clipped above a fixed
            // hairline; hairstyle only drives the side strands below.
            let hair_a = ellipse_alpha(x, y, FACE_CX, 11.0, rx + 1.5, 8.0, feather);
            let hairline = 9.0;
            let cap = hair_a * smoothstep(hairline + 1.0, hairline - 1.0, y);
            mix(&mut c, hair, cap);
            // Side hair strands, length set by hairstyle.
            let strand_len = 4.0 + 9.0 * spec.hairstyle;
            for side in [-1.0, 1.0] {
                let sx = FACE_CX + side * (rx + 0.8);
                let strand = ellipse_alpha(x, y, sx, 10.0 + strand_len / 2.0, 1.6, strand_len / 2.0 + 2.0, feather);
                mix(&mut c, hair, strand * 0.95);
            }
            // Eyebrows: thickness from bushy_eyebrow, arch from eyebrow_shape.
            for side in [-1.0, 1.0] {
                let bx = FACE_CX + side * eye_dx;
                let arch = 1.5 * spec.eyebrow_shape * (1.0 - ((x - bx) / 2.4).powi(2)).max(0.0);
                let by = BROW_Y - arch;
                let thick = 0.45 + 0.9 * spec.bushy_eyebrow;
                let brow = ellipse_alpha(x, y, bx, by, 2.4, thick, feather * 2.0);
                mix(&mut c, [0.12, 0.08, 0.06], brow * face_a);
            }
            // Eyes: white, iris, pupil; eye_close lowers the visible slit.
            for side in [-1.0, 1.0] {
                let ex = FACE_CX + side * eye_dx;
                let open = 1.0 - 0.8 * spec.eye_close;
                let white_a = ellipse_alpha(x, y, ex, EYE_Y, 2.1, 1.25 * open, feather);
                mix(&mut c, [0.95, 0.95, 0.97], white_a * face_a);
                let look = (spec.eyeball_position - 0.5) * 1.8;
                let iris_a = ellipse_alpha(x, y, ex + look, EYE_Y, 0.95, 0.95 * open, feather);
                mix(&mut c, [0.25, 0.35, 0.55], iris_a * white_a);
                let pupil_a = ellipse_alpha(x, y, ex + look, EYE_Y, 0.42, 0.42 * open, feather);
                mix(&mut c, [0.05, 0.05, 0.05], pupil_a * white_a);
            }
            // Eyeglasses: rings around both eyes plus a bridge; alpha
            // scales with the attribute so the frame fades in.
            if spec.eyeglasses > 0.0 {
                let ga = spec.eyeglasses;
                for side in [-1.0, 1.0] {
                    let ex = FACE_CX + side * eye_dx;
                    let outer = ellipse_alpha(x, y, ex, EYE_Y, 3.0, 2.2, feather);
                    let inner = ellipse_alpha(x, y, ex, EYE_Y, 2.4, 1.6, feather);
                    let ring = (outer - inner).max(0.0);
                    mix(&mut c, [0.08, 0.08, 0.10], ring * ga);
                }
                // Bridge between the two inner rims.
                let bridge = ellipse_alpha(x, y, FACE_CX, EYE_Y, eye_dx - 2.2, 0.35, feather * 2.0);
                mix(&mut c, [0.08, 0.08, 0.10], bridge * ga);
            }
            // Mouth: lip band plus a dark opening that grows with
            // mouth_open. Both stay inside the mouth region box.
            let lip_a = ellipse_alpha(x, y, FACE_CX, MOUTH_Y, 3.4, 1.1, feather);
            mix(&mut c, lip, lip_a * face_a);
            let open_ry = 0.15 + 2.1 * spec.mouth_open;
            let open_a = ellipse_alpha(x, y, FACE_CX, MOUTH_Y + 0.2, 2.6, open_ry, feather);
            mix(&mut c, [0.10, 0.04, 0.05], open_a * lip_a);
            // Earrings: small bright studs under each ear.
            if spec.earring > 0.0 {
                for side in [-1.0, 1.0] {
                    let ax = FACE_CX + side * (rx + 0.6);
                    let stud = ellipse_alpha(x, y, ax, 20.5, 0.8, 0.8, feather);
                    mix(&mut c, [0.95, 0.83, 0.25], stud * spec.earring);
                }
            }
            data[[py, px, 0]] = c[0];
            data[[py, px, 1]] = c[1];
            data[[py, px, 2]] = c[2];
        }
    }
    Image::new(data).expect("renderer output is finite")
}

/// Render at the default 32x32 toy size.
pub fn render(spec: &ToyFaceSpec) -> Image {
    render_sized(spec, 32)
}

fn box_mask(size: usize, y0: f64, y1: f64, x0: f64, x1: f64) -> RegionMask {
    let s = size as f64 / 32.0;
    let mask = Array2::from_shape_fn((size, size), |(py, px)| {
        let x = (px as f64 + 0.5) / s;
        let y = (py as f64 + 0.5) / s;
        y >= y0 && y <= y1 && x >= x0 && x <= x1
    });
    RegionMask { mask }
}

fn union(a: RegionMask, b: RegionMask) -> RegionMask {
    let mask = Array2::from_shape_fn(a.mask.dim(), |idx| a.mask[idx] || b.mask[idx]);
    RegionMask { mask }
}

fn difference(a: RegionMask, b: &RegionMask) -> RegionMask {
    let mask = Array2::from_shape_fn(a.mask.dim(), |idx| a.mask[idx] && !b.mask[idx]);
    RegionMask { mask }
}

/// Ground-truth attribute regions, sized to cover each attribute's
/// effect across the whole identity range.
pub fn region_masks_sized(size: usize) -> BTreeMap<String, RegionMask> {
    let mut masks = BTreeMap::new();
    // Skin tone touches the entire face ellipse (its rim feather
    // included), so its region is the full face box. Regions are
    // annotations and may overlap; catalog assignment disambiguates.
    masks.insert("pale_skin".into(), box_mask(size, 6.0, 29.0, 3.5, 28.5));
    // Hair color tints both the cap and the side strands.
    let cap = box_mask(size, 0.0, 10.5, 3.0, 29.0);
    let strands = union(
        box_mask(size, 7.5, 25.5, 1.5, 9.0),
        box_mask(size, 7.5, 25.5, 23.0, 30.5),
    );
    masks.insert("hair_color".into(), union(cap, strands.clone()));
    masks.insert("hairstyle".into(), strands);
    masks.insert("mouth_open".into(), box_mask(size, 20.0, 26.5, 10.5, 21.5));
    masks.insert(
        "wearing_lipstick".into(),
        box_mask(size, 21.0, 25.0, 11.5, 20.5),
    );
    // Brow band: full bushiness plus full arch reaches y ~ 7.
    let brows = union(
        box_mask(size, 6.8, 11.8, 7.5, 15.2),
        box_mask(size, 6.8, 11.8, 16.8, 24.5),
    );
    masks.insert("bushy_eyebrow".into(), brows.clone());
    masks.insert("eyebrow_shape".into(), brows);
    masks.insert(
        "earring".into(),
        union(
            box_mask(size, 19.0, 22.5, 1.5, 8.5),
            box_mask(size, 19.0, 22.5, 23.5, 30.5),
        ),
    );
    let eyes = union(
        box_mask(size, 11.5, 15.5, 8.0, 15.2),
        box_mask(size, 11.5, 15.5, 16.8, 24.0),
    );
    masks.insert("eyeball_position".into(), eyes.clone());
    masks.insert("eye_close".into(), eyes);
    masks.insert("eyeglasses".into(), box_mask(size, 10.5, 17.0, 6.0, 26.0));
    masks
}

pub fn region_masks() -> BTreeMap<String, RegionMask> {
    region_masks_sized(32)
}

/// Deterministically render `n` random faces with their specs.
pub fn generate_toy_dataset(n: usize, seed: u64) -> (Vec<Image>, Vec<ToyFaceSpec>) {
    generate_toy_dataset_sized(n, seed, 32)
}

pub fn generate_toy_dataset_sized(
    n: usize,
    seed: u64,
    size: usize,
) -> (Vec<Image>, Vec<ToyFaceSpec>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<ToyFaceSpec> = (0..n).map(|_| ToyFaceSpec::sample(&mut rng)).collect();
    let images = crate::parallel::map_batch(&specs, |spec| render_sized(spec, size));
    (images, specs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_deterministic() {
        let (im1, sp1) = generate_toy_dataset(5, 42);
        let (im2, sp2) = generate_toy_dataset(5, 42);
        assert_eq!(sp1, sp2);
        for (a, b) in im1.iter().zip(&im2) {
            assert_eq!(a.digest(), b.digest());
        }
    }

    #[test]
    fn dataset_has_requested_length() {
        let (images, specs) = generate_toy_dataset(100, 7);
        assert_eq!(images.len(), 100);
        assert_eq!(specs.len(), 100);
    }

    #[test]
    fn mouth_changes_stay_inside_mouth_region() {
        let masks = region_masks();
        let mouth = &masks["mouth_open"];
        let mut closed = ToyFaceSpec::neutral();
        closed.mouth_open = 0.0;
        let mut open = closed.clone();
        open.mouth_open = 1.0;
        let a = render(&closed);
        let b = render(&open);
        // Allow a 2px anti-aliasing fringe around the mask.
        let fringe = 2i64;
        for y in 0..32usize {
            for x in 0..32usize {
                let mut near_mask = false;
                for dy in -fringe..=fringe {
                    for dx in -fringe..=fringe {
                        let ny = y as i64 + dy;
                        let nx = x as i64 + dx;
                        if (0..32).contains(&ny)
                            && (0..32).contains(&nx)
                            && mouth.contains(ny as usize, nx as usize)
                        {
                            near_mask = true;
                        }
                    }
                }
                if !near_mask {
                    for c in 0..3 {
                        let d = (a.data()[[y, x, c]] - b.data()[[y, x, c]]).abs();
                        assert!(
                            d < 1e-12,
                            "pixel ({y},{x},{c}) changed by {d} outside the mouth region"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn every_attribute_changes_only_pixels_inside_its_region_or_fringe() {
        // Weaker locality sweep across all attributes: the bulk of the
        // change must land inside the declared region.
        let masks = region_masks();
        for name in ATTRIBUTE_NAMES {
            let mut low = ToyFaceSpec::neutral();
            low.set_attribute(name, 0.0).unwrap();
            let mut high = low.clone();
            high.set_attribute(name, 1.0).unwrap();
            let a = render(&low);
            let b = render(&high);
            let mask = &masks[name];
            let mut inside = 0.0;
            let mut outside = 0.0;
            for y in 0..32 {
                for x in 0..32 {
                    let d: f64 = (0..3)
                        .map(|c| (a.data()[[y, x, c]] - b.data()[[y, x, c]]).abs())
                        .sum();
                    if mask.contains(y, x) {
                        inside += d;
                    } else {
                        outside += d;
                    }
                }
            }
            assert!(inside > 0.0, "{name} has no effect inside its region");
            assert!(
                outside <= 0.25 * inside + 1e-9,
                "{name} leaks {outside:.3} outside vs {inside:.3} inside"
            );
        }
    }

    #[test]
    fn identity_params_change_geometry() {
        let mut narrow = ToyFaceSpec::neutral();
        narrow.face_width = 0.0;
        let mut wide = narrow.clone();
        wide.face_width = 1.0;
        assert!(render(&narrow).mse(&render(&wide)).unwrap() > 1e-4);
    }

    #[test]
    fn unknown_attribute_is_rejected() {
        let spec = ToyFaceSpec::neutral();
        assert!(spec.attribute("nose_size").is_err());
    }

    #[test]
    fn region_masks_cover_expected_pairs() {
        let masks = region_masks();
        assert_eq!(masks.len(), 11);
        assert!(masks["mouth_open"].is_disjoint(&masks["earring"]));
        assert!(masks["mouth_open"].is_disjoint(&masks["hair_color"]));
        assert!(masks["pale_skin"].area() > masks["mouth_open"].area());
    }
}
