//! Frame-unique synchronization markers.
//!
//! A marker is a 6×6 grid of black/white cells (2×2 px each) written into
//! the top-left corner of a frame: a fixed header row, 20 data bits with a
//! per-row parity column, and a column-parity row. The header plus parity
//! make accidental decodes from scene content vanishingly unlikely, so a
//! decoder can scan a stream and recover exactly the embedded prefix.

use crate::error::{Error, Result};

pub const GRID: usize = 6;
pub const CELL_PX: usize = 2;
/// Edge length of the reserved corner region in pixels.
pub const BLOCK_PX: usize = GRID * CELL_PX;
pub const DATA_BITS: u32 = 20;
/// Largest representable id plus one.
pub const CAPACITY: u32 = 1 << DATA_BITS;

const HEADER: [bool; GRID] = [true, false, true, false, true, false];

fn cell_layout(marker_id: u32) -> [[bool; GRID]; GRID] {
    let mut cells = [[false; GRID]; GRID];
    cells[0] = HEADER;
    // Rows 1..=4 carry five data bits each, most significant first, plus a
    // row-parity cell in the last column.
    for row in 0..4 {
        let mut parity = false;
        for col in 0..5 {
            let bit_index = DATA_BITS - 1 - (row * 5 + col) as u32;
            let bit = (marker_id >> bit_index) & 1 == 1;
            cells[row + 1][col] = bit;
            parity ^= bit;
        }
        cells[row + 1][5] = parity;
    }
    for col in 0..GRID {
        let mut parity = false;
        for row in 0..GRID - 1 {
            parity ^= cells[row][col];
        }
        cells[GRID - 1][col] = parity;
    }
    cells
}

/// Write the marker block for `marker_id` into the top-left corner of a
/// grayscale frame. Cells are exactly 0.0 or 1.0, so decoding is lossless.
pub fn embed_sync_marker(frame: &mut [f32], w: usize, h: usize, marker_id: u32) -> Result<()> {
    if marker_id >= CAPACITY {
        return Err(Error::MarkerOverflow {
            id: marker_id,
            capacity: CAPACITY,
        });
    }
    if w < BLOCK_PX || h < BLOCK_PX {
        return Err(Error::ShapeMismatch(format!(
            "frame {w}x{h} smaller than marker block {BLOCK_PX}x{BLOCK_PX}"
        )));
    }
    let cells = cell_layout(marker_id);
    for (row, row_cells) in cells.iter().enumerate() {
        for (col, &bit) in row_cells.iter().enumerate() {
            let v = if bit { 1.0 } else { 0.0 };
            for dy in 0..CELL_PX {
                let y = row * CELL_PX + dy;
                let x0 = col * CELL_PX;
                frame[y * w + x0..y * w + x0 + CELL_PX].fill(v);
            }
        }
    }
    Ok(())
}

/// Decode a marker from a frame, or `None` when no valid marker block is
/// present (bad header or parity).
pub fn decode_sync_marker(frame: &[f32], w: usize, h: usize) -> Option<u32> {
    if w < BLOCK_PX || h < BLOCK_PX {
        return None;
    }
    let mut cells = [[false; GRID]; GRID];
    for (row, row_cells) in cells.iter_mut().enumerate() {
        for (col, cell) in row_cells.iter_mut().enumerate() {
            *cell = frame[row * CELL_PX * w + col * CELL_PX] > 0.5;
        }
    }
    if cells[0] != HEADER {
        return None;
    }
    let mut id: u32 = 0;
    for row in 0..4 {
        let mut parity = false;
        for col in 0..5 {
            let bit = cells[row + 1][col];
            id = (id << 1) | bit as u32;
            parity ^= bit;
        }
        if cells[row + 1][5] != parity {
            return None;
        }
    }
    for col in 0..GRID {
        let mut parity = false;
        for row in 0..GRID - 1 {
            parity ^= cells[row][col];
        }
        if cells[GRID - 1][col] != parity {
            return None;
        }
    }
    Some(id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_id_zero() {
        let mut frame = vec![0.5f32; 64 * 64];
        embed_sync_marker(&mut frame, 64, 64, 0).unwrap();
        assert_eq!(decode_sync_marker(&frame, 64, 64), Some(0));
    }

    #[test]
    fn round_trip_all_small_ids() {
        let mut frame = vec![0.0f32; 64 * 64];
        for id in 0..4096 {
            embed_sync_marker(&mut frame, 64, 64, id).unwrap();
            assert_eq!(decode_sync_marker(&frame, 64, 64), Some(id));
        }
    }

    #[test]
    fn overflow_rejected() {
        let mut frame = vec![0.0f32; 64 * 64];
        let err = embed_sync_marker(&mut frame, 64, 64, 1 << 24).unwrap_err();
        assert!(matches!(
            err,
            crate::error::Error::MarkerOverflow { capacity: CAPACITY, .. }
        ));
        assert!(embed_sync_marker(&mut frame, 64, 64, CAPACITY - 1).is_ok());
    }

    #[test]
    fn plain_scene_does_not_decode() {
        let frame = vec![0.0f32; 64 * 64];
        assert_eq!(decode_sync_marker(&frame, 64, 64), None);
        let bright = vec![1.0f32; 64 * 64];
        assert_eq!(decode_sync_marker(&bright, 64, 64), None);
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(id in 0u32..CAPACITY) {
            let mut frame = vec![0.3f32; 32 * 32];
            embed_sync_marker(&mut frame, 32, 32, id).unwrap();
            prop_assert_eq!(decode_sync_marker(&frame, 32, 32), Some(id));
        }

        #[test]
        fn corrupting_one_cell_never_misdecodes(id in 0u32..CAPACITY, cell in 0usize..36) {
            let mut frame = vec![0.0f32; 32 * 32];
            embed_sync_marker(&mut frame, 32, 32, id).unwrap();
            let (row, col) = (cell / GRID, cell % GRID);
            let px = row * CELL_PX * 32 + col * CELL_PX;
            frame[px] = 1.0 - frame[px];
            // A single flipped cell must be caught by parity, not decoded
            // as a different id.
            prop_assert_eq!(decode_sync_marker(&frame, 32, 32), None);
        }
    }
}
