//! Procedural scene rendering.
//!
//! A scene is 1–3 colored shapes placed on a 4×4 cell grid over a textured
//! background. The motion word of each object is rendered as a coarse
//! decoration of its cell so that every caption token has a visual footprint.

use serde::{Deserialize, Serialize};

use super::lexicon::{Lexicon, COLOR_RGB};
use crate::error::{Error, Result};
use crate::Tensor;

/// Placement grid is fixed at 4×4 cells.
pub const GRID: usize = 4;

/// Background texture family; corpus flavors use different families and the
/// benign set uses a third one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureFamily {
    /// Soft vertical gradient with a column ripple.
    VerticalWash,
    /// Horizontal tone bands.
    HorizontalBands,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub family: TextureFamily,
    pub variant: u8,
}

/// One placed object: token ids into the lexicon plus its grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: u32,
    pub color: u32,
    pub motion: u32,
    pub cell: (u8, u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub objects: Vec<SceneObject>,
    pub background: BackgroundSpec,
}

/// Muted background tone pairs per variant, kept in a narrow band well away
/// from object colors so scenes share a common low-saturation signature.
const BG_TONES: [([f64; 3], [f64; 3]); 5] = [
    ([76.0, 80.0, 86.0], [102.0, 106.0, 112.0]),
    ([72.0, 84.0, 80.0], [98.0, 110.0, 106.0]),
    ([84.0, 78.0, 74.0], [110.0, 104.0, 100.0]),
    ([74.0, 74.0, 90.0], [100.0, 100.0, 116.0]),
    ([80.0, 84.0, 72.0], [106.0, 110.0, 98.0]),
];

pub fn render_scene(spec: &SceneSpec, height: usize, width: usize) -> Result<Tensor> {
    if height < 32 || width < 32 {
        return Err(Error::Config(format!(
            "scene size must be at least 32x32, got {height}x{width}"
        )));
    }
    let mut seen = [[false; GRID]; GRID];
    for obj in &spec.objects {
        let (r, c) = (obj.cell.0 as usize, obj.cell.1 as usize);
        if r >= GRID || c >= GRID {
            return Err(Error::Config(format!("object cell {:?} outside grid", obj.cell)));
        }
        if seen[r][c] {
            return Err(Error::Config(format!("overlapping cells at {:?}", obj.cell)));
        }
        seen[r][c] = true;
    }
    if spec.objects.len() > GRID * GRID {
        return Err(Error::Config("too many objects for the grid".into()));
    }

    let mut image = Tensor::zeros(vec![height, width, 3]);
    paint_background(&mut image, spec.background, height, width);

    let lex = Lexicon::build();
    for obj in &spec.objects {
        paint_object(&mut image, &lex, obj, height, width)?;
    }
    Ok(image)
}

fn paint_background(image: &mut Tensor, bg: BackgroundSpec, height: usize, width: usize) {
    let (lo, hi) = BG_TONES[bg.variant as usize % BG_TONES.len()];
    for y in 0..height {
        for x in 0..width {
            let t = match bg.family {
                TextureFamily::VerticalWash => {
                    let base = y as f64 / (height - 1) as f64;
                    let ripple = 0.08 * ((x as f64) * std::f64::consts::TAU / 16.0).sin();
                    (base + ripple).clamp(0.0, 1.0)
                }
                TextureFamily::HorizontalBands => {
                    if (y / 8) % 2 == 0 {
                        0.15
                    } else {
                        0.85
                    }
                }
            };
            for ch in 0..3 {
                image.set3(y, x, ch, lo[ch] + t * (hi[ch] - lo[ch]));
            }
        }
    }
}

fn cell_bounds(index: usize, total_cells: usize, extent: usize) -> (usize, usize) {
    let lo = (index * extent) / total_cells;
    let hi = ((index + 1) * extent) / total_cells;
    (lo, hi)
}

fn paint_object(
    image: &mut Tensor,
    lex: &Lexicon,
    obj: &SceneObject,
    height: usize,
    width: usize,
) -> Result<()> {
    let color_idx = lex
        .color_index(obj.color)
        .ok_or_else(|| Error::Vocabulary(format!("token {} is not a color", obj.color)))?;
    let shape_idx = lex
        .shape_index(obj.shape)
        .ok_or_else(|| Error::Vocabulary(format!("token {} is not a shape", obj.shape)))?;
    let verb_idx = lex
        .verb_index(obj.motion)
        .ok_or_else(|| Error::Vocabulary(format!("token {} is not a verb", obj.motion)))?;
    let rgb = COLOR_RGB[color_idx];

    let (y0, y1) = cell_bounds(obj.cell.0 as usize, GRID, height);
    let (x0, x1) = cell_bounds(obj.cell.1 as usize, GRID, width);
    let ch_cell = (y1 - y0) as f64;
    let cw_cell = (x1 - x0) as f64;

    // Shape fill, then the motion decoration over the whole cell.
    for y in y0..y1 {
        for x in x0..x1 {
            let u = (x - x0) as f64 / cw_cell + 0.5 / cw_cell - 0.5;
            let v = (y - y0) as f64 / ch_cell + 0.5 / ch_cell - 0.5;
            if shape_mask(shape_idx, u, v) {
                let fade = verb_idx == 6;
                for ch in 0..3 {
                    let bg = image.at3(y, x, ch);
                    let val = if fade { bg + 0.55 * (rgb[ch] - bg) } else { rgb[ch] };
                    image.set3(y, x, ch, val);
                }
            }
        }
    }
    for y in y0..y1 {
        for x in x0..x1 {
            let u = (x - x0) as f64 / cw_cell + 0.5 / cw_cell - 0.5;
            let v = (y - y0) as f64 / ch_cell + 0.5 / ch_cell - 0.5;
            let border = y - y0 < 2 || y1 - 1 - y < 2 || x - x0 < 2 || x1 - 1 - x < 2;
            apply_decoration(image, verb_idx, y, x, u, v, border);
        }
    }
    Ok(())
}

/// Shape masks in cell-centered coordinates `u, v` in `[-0.5, 0.5)`.
fn shape_mask(shape_idx: usize, u: f64, v: f64) -> bool {
    match shape_idx {
        0 => true,                           // square fills the cell
        1 => u * u + v * v <= 0.25,          // circle
        2 => {
            // triangle: apex up
            let t = (v + 0.42) / 0.84;
            (0.0..=1.0).contains(&t) && u.abs() <= 0.46 * t
        }
        3 => u.abs() + v.abs() <= 0.5,       // diamond
        4 => u.abs() <= 0.16 || v.abs() <= 0.16, // cross
        5 => {
            let r2 = u * u + v * v;
            (0.11..=0.25).contains(&r2)      // ring
        }
        6 => {
            // four-pointed star
            u.abs() + v.abs() <= 0.22
                || (u.abs() <= 0.12 && v.abs() <= 0.5)
                || (v.abs() <= 0.12 && u.abs() <= 0.5)
        }
        7 => v.abs() <= 0.18,                // horizontal bar
        _ => false,
    }
}

/// Motion decorations; deliberately coarse so they survive average pooling,
/// and gentle so object colors remain recognizable.
fn apply_decoration(
    image: &mut Tensor,
    verb_idx: usize,
    y: usize,
    x: usize,
    u: f64,
    v: f64,
    cell_border: bool,
) {
    // (factor, mix): multiply toward black, then blend toward white.
    let effect: Option<(f64, f64)> = match verb_idx {
        // spinning: two opposite quadrants darkened
        0 if (u < 0.0) == (v < 0.0) => Some((0.82, 0.0)),
        // glowing: bright cell border
        1 if cell_border => Some((1.0, 0.45)),
        // falling: bottom quarter darkened
        2 if v >= 0.25 => Some((0.72, 0.0)),
        // rising: top quarter brightened
        3 if v < -0.25 => Some((1.0, 0.35)),
        // drifting: left half darkened
        4 if u < 0.0 => Some((0.85, 0.0)),
        // shaking: two vertical bands darkened
        5 if (-0.25..0.0).contains(&u) || (0.25..0.5).contains(&u) => Some((0.80, 0.0)),
        // fading is handled at shape fill
        // blinking: bright center block
        7 if u.abs() <= 0.22 && v.abs() <= 0.22 => Some((1.0, 0.55)),
        _ => None,
    };
    if let Some((factor, mix)) = effect {
        for ch in 0..3 {
            let val = image.at3(y, x, ch) * factor;
            image.set3(y, x, ch, val + mix * (255.0 - val));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Lexicon {
        Lexicon::build()
    }

    fn bg() -> BackgroundSpec {
        BackgroundSpec {
            family: TextureFamily::VerticalWash,
            variant: 0,
        }
    }

    #[test]
    fn empty_scene_is_pure_background() {
        let spec = SceneSpec {
            seed: 0,
            objects: vec![],
            background: bg(),
        };
        let image = render_scene(&spec, 64, 64).unwrap();
        let mut copy = Tensor::zeros(vec![64, 64, 3]);
        paint_background(&mut copy, bg(), 64, 64);
        assert_eq!(image, copy);
    }

    #[test]
    fn red_square_cell_mean_is_close_to_red() {
        let l = lex();
        let spec = SceneSpec {
            seed: 0,
            objects: vec![SceneObject {
                shape: l.shape_id(0),
                color: l.color_id(0),
                motion: l.verb_id(0), // spinning: the gentlest decoration
                cell: (1, 1),
            }],
            background: bg(),
        };
        let image = render_scene(&spec, 64, 64).unwrap();
        // Mean over the object's cell, per channel.
        let mut mean = [0.0f64; 3];
        for y in 16..32 {
            for x in 16..32 {
                for ch in 0..3 {
                    mean[ch] += image.at3(y, x, ch);
                }
            }
        }
        for ch in 0..3 {
            mean[ch] /= 256.0;
            let diff = (mean[ch] - COLOR_RGB[0][ch]).abs();
            assert!(diff <= 30.0, "channel {ch} off by {diff}");
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let l = lex();
        let spec = SceneSpec {
            seed: 9,
            objects: vec![
                SceneObject {
                    shape: l.shape_id(2),
                    color: l.color_id(3),
                    motion: l.verb_id(5),
                    cell: (0, 0),
                },
                SceneObject {
                    shape: l.shape_id(5),
                    color: l.color_id(1),
                    motion: l.verb_id(7),
                    cell: (3, 2),
                },
            ],
            background: BackgroundSpec {
                family: TextureFamily::HorizontalBands,
                variant: 2,
            },
        };
        assert_eq!(
            render_scene(&spec, 64, 64).unwrap(),
            render_scene(&spec, 64, 64).unwrap()
        );
    }

    #[test]
    fn overlapping_cells_are_rejected() {
        let l = lex();
        let obj = SceneObject {
            shape: l.shape_id(0),
            color: l.color_id(0),
            motion: l.verb_id(0),
            cell: (2, 2),
        };
        let spec = SceneSpec {
            seed: 0,
            objects: vec![obj, obj],
            background: bg(),
        };
        assert!(matches!(render_scene(&spec, 64, 64), Err(Error::Config(_))));
    }

    #[test]
    fn tiny_sizes_are_rejected() {
        let spec = SceneSpec {
            seed: 0,
            objects: vec![],
            background: bg(),
        };
        assert!(render_scene(&spec, 16, 64).is_err());
    }

    #[test]
    fn pixels_stay_in_range() {
        let l = lex();
        for verb in 0..8 {
            let spec = SceneSpec {
                seed: 0,
                objects: vec![SceneObject {
                    shape: l.shape_id(verb % 8),
                    color: l.color_id(6), // white, the brightest
                    motion: l.verb_id(verb),
                    cell: (1, 2),
                }],
                background: bg(),
            };
            let image = render_scene(&spec, 64, 64).unwrap();
            for &v in image.data() {
                assert!((0.0..=255.0).contains(&v), "value {v} out of range");
            }
        }
    }
}
