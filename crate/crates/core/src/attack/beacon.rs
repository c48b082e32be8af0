//! Parity-checked binary beacon code: the decodable stand-in for a printed
//! machine-readable code on the patch.
//!
//! Layout on a K×K grid: two fixed 2×2 orientation corners (top-left all
//! dark, bottom-right diagonal), one even-parity cell per row, payload bits
//! row-major in the remaining cells.

use crate::error::{Error, Result};
use crate::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct BeaconCode {
    pub k: usize,
    /// Row-major cell bits; `true` renders dark.
    pub grid: Vec<bool>,
    pub payload_bits: Vec<bool>,
    pub parity_bits: Vec<bool>,
    /// Patch-sized `[side, side, 3]` rendering with uniform 0/255 blocks.
    pub rendered: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CellRole {
    Orientation(bool),
    Parity,
    Payload,
}

fn cell_role(k: usize, row: usize, col: usize) -> CellRole {
    if row < 2 && col < 2 {
        return CellRole::Orientation(true);
    }
    if row >= k - 2 && col >= k - 2 {
        return CellRole::Orientation((row + 2 - k) == (col + 2 - k));
    }
    let parity_col = if row >= k - 2 { k - 3 } else { k - 1 };
    if col == parity_col {
        return CellRole::Parity;
    }
    CellRole::Payload
}

/// Payload bits a K×K beacon can carry (cells minus parity and orientation).
pub fn payload_capacity(k: usize) -> usize {
    k * k - k - 8
}

/// Pixel boundaries of cell `i` of `k` over a side of `extent` pixels.
fn cell_bounds(i: usize, k: usize, extent: usize) -> (usize, usize) {
    ((i * extent) / k, ((i + 1) * extent) / k)
}

pub fn make_beacon(payload: &[bool], k: usize, patch_side: usize) -> Result<BeaconCode> {
    if k < 5 {
        return Err(Error::Config(format!(
            "beacon grid must be at least 5x5 to fit orientation and parity cells, got {k}"
        )));
    }
    if patch_side < 2 * k {
        return Err(Error::Config(format!(
            "patch side {patch_side} too small for a {k}x{k} beacon (need >= {})",
            2 * k
        )));
    }
    let capacity = payload_capacity(k);
    if payload.len() > capacity {
        return Err(Error::Config(format!(
            "payload of {} bits exceeds beacon capacity {capacity}",
            payload.len()
        )));
    }
    let mut padded = payload.to_vec();
    padded.resize(capacity, false);

    let mut grid = vec![false; k * k];
    let mut payload_iter = padded.iter().copied();
    for row in 0..k {
        for col in 0..k {
            grid[row * k + col] = match cell_role(k, row, col) {
                CellRole::Orientation(bit) => bit,
                CellRole::Payload => payload_iter.next().expect("capacity checked"),
                CellRole::Parity => false, // filled below
            };
        }
    }
    let mut parity_bits = Vec::with_capacity(k);
    for row in 0..k {
        let mut parity = false;
        let mut parity_cell = None;
        for col in 0..k {
            match cell_role(k, row, col) {
                CellRole::Parity => parity_cell = Some(col),
                _ => parity ^= grid[row * k + col],
            }
        }
        let col = parity_cell.expect("every row has a parity cell");
        grid[row * k + col] = parity;
        parity_bits.push(parity);
    }

    let mut rendered = Tensor::zeros(vec![patch_side, patch_side, 3]);
    for row in 0..k {
        let (y0, y1) = cell_bounds(row, k, patch_side);
        for col in 0..k {
            let (x0, x1) = cell_bounds(col, k, patch_side);
            let value = if grid[row * k + col] { 0.0 } else { 255.0 };
            for y in y0..y1 {
                for x in x0..x1 {
                    for ch in 0..3 {
                        rendered.set3(y, x, ch, value);
                    }
                }
            }
        }
    }
    Ok(BeaconCode {
        k,
        grid,
        payload_bits: padded,
        parity_bits,
        rendered,
    })
}

/// Outcome of reading a (possibly distorted) beacon from a patch.
#[derive(Debug, Clone, PartialEq)]
pub struct BeaconReadout {
    pub grid: Vec<bool>,
    pub payload_bits: Vec<bool>,
    pub parity_ok: bool,
    /// Fraction of cells matching the reference grid, when one is supplied.
    pub cell_accuracy: Option<f64>,
    pub payload_match: Option<bool>,
    /// Every row parity holds, and the payload matches the reference if given.
    pub scannable: bool,
}

pub fn decode_beacon(
    patch: &Tensor,
    k: usize,
    reference: Option<&BeaconCode>,
) -> Result<BeaconReadout> {
    let shape = patch.shape();
    if patch.rank() != 3 || shape[0] != shape[1] || shape[2] != 3 {
        return Err(Error::shape(
            "decode_beacon",
            "[side, side, 3]",
            format!("{shape:?}"),
        ));
    }
    let side = shape[0];
    if side < k {
        return Err(Error::shape(
            "decode_beacon",
            format!("side >= {k}"),
            format!("{side}"),
        ));
    }
    let mut grid = vec![false; k * k];
    for row in 0..k {
        let (y0, y1) = cell_bounds(row, k, side);
        for col in 0..k {
            let (x0, x1) = cell_bounds(col, k, side);
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    for ch in 0..3 {
                        sum += patch.at3(y, x, ch);
                    }
                }
            }
            let mean = sum / ((y1 - y0) * (x1 - x0) * 3) as f64;
            grid[row * k + col] = mean < 127.5;
        }
    }

    let mut parity_ok = true;
    let mut payload_bits = Vec::with_capacity(payload_capacity(k));
    for row in 0..k {
        let mut xor = false;
        for col in 0..k {
            xor ^= grid[row * k + col];
            if cell_role(k, row, col) == CellRole::Payload {
                payload_bits.push(grid[row * k + col]);
            }
        }
        if xor {
            parity_ok = false;
        }
    }

    let cell_accuracy = reference.map(|r| {
        let matches = grid.iter().zip(r.grid.iter()).filter(|(a, b)| a == b).count();
        matches as f64 / grid.len() as f64
    });
    let payload_match = reference.map(|r| payload_bits == r.payload_bits);
    let scannable = parity_ok && payload_match.unwrap_or(true);
    Ok(BeaconReadout {
        grid,
        payload_bits,
        parity_ok,
        cell_accuracy,
        payload_match,
        scannable,
    })
}

/// Parses a hex string into MSB-first payload bits.
pub fn payload_from_hex(hex: &str) -> Result<Vec<bool>> {
    let mut bits = Vec::with_capacity(hex.len() * 4);
    for ch in hex.chars() {
        let nibble = ch
            .to_digit(16)
            .ok_or_else(|| Error::Config(format!("invalid hex digit {ch:?} in beacon payload")))?;
        for shift in (0..4).rev() {
            bits.push((nibble >> shift) & 1 == 1);
        }
    }
    Ok(bits)
}
