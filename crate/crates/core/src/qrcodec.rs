//! QR-lite matrix codec.
//!
//! A deliberately simplified stand-in for real QR: a 25x25 module grid
//! with the three standard finder patterns, carrying a length-prefixed
//! payload protected by CRC-32. There is no error correction — any
//! corruption fails the decode, which is exactly the behaviour the
//! denial-of-service scenario relies on. Bit order and traversal are
//! fixed (row-major, MSB-first) so the format is bit-exact across
//! implementations.

use std::fmt;

use thiserror::Error;

/// Modules per side.
pub const GRID_SIZE: usize = 25;
/// Implied light modules around the grid.
pub const QUIET_ZONE: usize = 2;
/// Cells per side once the quiet zone is included.
pub const CELLS_WITH_QUIET: usize = GRID_SIZE + 2 * QUIET_ZONE;
/// Maximum payload bytes: 1 length byte + 48 data + 4 checksum = 424 bits,
/// which fits the 433 data modules.
pub const MAX_PAYLOAD_LEN: usize = 48;
/// Modules outside the finder and separator zones.
pub const DATA_MODULE_COUNT: usize = 433;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QrError {
    #[error("payload of {len} bytes exceeds the {MAX_PAYLOAD_LEN}-byte capacity")]
    PayloadTooLarge { len: usize },
    #[error("finder or separator modules do not match the required pattern")]
    FinderNotFound,
    #[error("length byte {len} is out of range")]
    LengthOutOfRange { len: u8 },
    #[error("payload checksum mismatch")]
    ChecksumMismatch,
    #[error("text form must be {GRID_SIZE} lines of {GRID_SIZE} '#'/'.' characters")]
    BadTextFormat,
}

/// Square module grid; `true` is a dark module.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct QrMatrix {
    modules: [[bool; GRID_SIZE]; GRID_SIZE],
}

/// Structural role of a grid position.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Zone {
    Finder,
    Separator,
    Data,
}

/// Zone of the module at `(row, col)`.
pub fn zone(row: usize, col: usize) -> Zone {
    debug_assert!(row < GRID_SIZE && col < GRID_SIZE);
    let in_finder = |r0: usize, c0: usize| {
        row >= r0 && row < r0 + 7 && col >= c0 && col < c0 + 7
    };
    if in_finder(0, 0) || in_finder(0, GRID_SIZE - 7) || in_finder(GRID_SIZE - 7, 0) {
        return Zone::Finder;
    }
    // L-shaped one-module light bands around each finder.
    let top_left = (row == 7 && col <= 7) || (col == 7 && row <= 7);
    let top_right = (row == 7 && col >= 17) || (col == 17 && row <= 7);
    let bottom_left = (row == 17 && col <= 7) || (col == 7 && row >= 17);
    if top_left || top_right || bottom_left {
        return Zone::Separator;
    }
    Zone::Data
}

/// Expected value of a structural (finder or separator) module.
fn structural_value(row: usize, col: usize) -> Option<bool> {
    match zone(row, col) {
        Zone::Separator => Some(false),
        Zone::Data => None,
        Zone::Finder => {
            let (r0, c0) = if row < 7 && col < 7 {
                (0, 0)
            } else if row < 7 {
                (0, GRID_SIZE - 7)
            } else {
                (GRID_SIZE - 7, 0)
            };
            let (r, c) = (row - r0, col - c0);
            // 7x7 dark ring, light ring, 3x3 dark core.
            let dark = r == 0 || r == 6 || c == 0 || c == 6 || ((2..=4).contains(&r) && (2..=4).contains(&c));
            Some(dark)
        }
    }
}

/// Data-region positions in row-major order.
pub fn data_positions() -> impl Iterator<Item = (usize, usize)> {
    (0..GRID_SIZE)
        .flat_map(|r| (0..GRID_SIZE).map(move |c| (r, c)))
        .filter(|&(r, c)| zone(r, c) == Zone::Data)
}

impl QrMatrix {
    /// All-light grid with the structural patterns stamped in.
    fn template() -> Self {
        let mut modules = [[false; GRID_SIZE]; GRID_SIZE];
        for (r, row) in modules.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                if let Some(v) = structural_value(r, c) {
                    *cell = v;
                }
            }
        }
        QrMatrix { modules }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.modules[row][col]
    }

    /// Flip one module; used by corruption scenarios and flip sweeps.
    pub fn toggle(&mut self, row: usize, col: usize) {
        self.modules[row][col] = !self.modules[row][col];
    }

    /// Rebuild a matrix from raw module values (e.g. a screen capture).
    pub fn from_modules(modules: [[bool; GRID_SIZE]; GRID_SIZE]) -> Self {
        QrMatrix { modules }
    }

    /// Parse the 25-line '#'/'.' text form.
    pub fn from_text(text: &str) -> Result<Self, QrError> {
        let mut modules = [[false; GRID_SIZE]; GRID_SIZE];
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() != GRID_SIZE {
            return Err(QrError::BadTextFormat);
        }
        for (r, line) in lines.iter().enumerate() {
            let chars: Vec<char> = line.chars().collect();
            if chars.len() != GRID_SIZE {
                return Err(QrError::BadTextFormat);
            }
            for (c, ch) in chars.iter().enumerate() {
                modules[r][c] = match ch {
                    '#' => true,
                    '.' => false,
                    _ => return Err(QrError::BadTextFormat),
                };
            }
        }
        Ok(QrMatrix { modules })
    }
}

impl fmt::Display for QrMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (r, row) in self.modules.iter().enumerate() {
            if r > 0 {
                writeln!(f)?;
            }
            for &dark in row {
                write!(f, "{}", if dark { '#' } else { '.' })?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for QrMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "QrMatrix({} dark)", self.modules.iter().flatten().filter(|&&d| d).count())
    }
}

const fn build_crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u32;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ 0xEDB8_8320
            } else {
                crc >> 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

static CRC_TABLE: [u32; 256] = build_crc_table();

/// CRC-32: reflected polynomial 0xEDB88320, init and final XOR 0xFFFFFFFF.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = (crc >> 8) ^ CRC_TABLE[((crc ^ b as u32) & 0xFF) as usize];
    }
    crc ^ 0xFFFF_FFFF
}

/// Encode `data` into a fresh matrix. The frame is one length byte, the
/// data bytes, and a big-endian CRC-32 over length byte + data; bits go
/// MSB-first into the data region in row-major order, trailing modules
/// stay light.
pub fn encode(data: &[u8]) -> Result<QrMatrix, QrError> {
    if data.len() > MAX_PAYLOAD_LEN {
        return Err(QrError::PayloadTooLarge { len: data.len() });
    }
    let mut frame = Vec::with_capacity(1 + data.len() + 4);
    frame.push(data.len() as u8);
    frame.extend_from_slice(data);
    let checksum = crc32(&frame);
    frame.extend_from_slice(&checksum.to_be_bytes());

    let mut matrix = QrMatrix::template();
    let mut positions = data_positions();
    for byte in &frame {
        for bit in (0..8).rev() {
            let (r, c) = positions.next().expect("frame fits the data region");
            matrix.modules[r][c] = (byte >> bit) & 1 == 1;
        }
    }
    Ok(matrix)
}

/// Decode a matrix, validating structure and checksum.
pub fn decode(matrix: &QrMatrix) -> Result<Vec<u8>, QrError> {
    for r in 0..GRID_SIZE {
        for c in 0..GRID_SIZE {
            if let Some(expected) = structural_value(r, c) {
                if matrix.modules[r][c] != expected {
                    return Err(QrError::FinderNotFound);
                }
            }
        }
    }

    let bits: Vec<bool> = data_positions()
        .map(|(r, c)| matrix.modules[r][c])
        .collect();
    let read_byte = |index: usize| -> u8 {
        let mut byte = 0u8;
        for bit in 0..8 {
            byte = (byte << 1) | bits[index * 8 + bit] as u8;
        }
        byte
    };

    let len = read_byte(0);
    if len as usize > MAX_PAYLOAD_LEN {
        return Err(QrError::LengthOutOfRange { len });
    }
    let mut frame = Vec::with_capacity(1 + len as usize);
    frame.push(len);
    for i in 0..len as usize {
        frame.push(read_byte(1 + i));
    }
    let stored = u32::from_be_bytes([
        read_byte(1 + len as usize),
        read_byte(2 + len as usize),
        read_byte(3 + len as usize),
        read_byte(4 + len as usize),
    ]);
    if crc32(&frame) != stored {
        return Err(QrError::ChecksumMismatch);
    }
    Ok(frame[1..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::SimRng;
    use proptest::prelude::*;

    // Bitwise reference, independent of the table-driven path.
    fn crc32_reference(bytes: &[u8]) -> u32 {
        let mut crc = 0xFFFF_FFFFu32;
        for &b in bytes {
            crc ^= b as u32;
            for _ in 0..8 {
                crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
            }
        }
        crc ^ 0xFFFF_FFFF
    }

    #[test]
    fn crc32_of_empty_input_is_zero() {
        assert_eq!(crc32(b""), 0x0000_0000);
    }

    #[test]
    fn crc32_standard_check_value() {
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32_reference(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn crc32_is_deterministic_and_matches_reference() {
        let mut rng = SimRng::new(5);
        for _ in 0..200 {
            let len = rng.uniform_u64(0, 64) as usize;
            let data: Vec<u8> = (0..len).map(|_| rng.next_u64() as u8).collect();
            let a = crc32(&data);
            assert_eq!(a, crc32(&data));
            assert_eq!(a, crc32_reference(&data));
        }
    }

    #[test]
    fn data_region_has_exactly_433_modules() {
        assert_eq!(data_positions().count(), DATA_MODULE_COUNT);
    }

    #[test]
    fn zones_partition_the_grid() {
        let mut finder = 0;
        let mut separator = 0;
        let mut data = 0;
        for r in 0..GRID_SIZE {
            for c in 0..GRID_SIZE {
                match zone(r, c) {
                    Zone::Finder => finder += 1,
                    Zone::Separator => separator += 1,
                    Zone::Data => data += 1,
                }
            }
        }
        assert_eq!(finder, 3 * 49);
        assert_eq!(separator, 45);
        assert_eq!(data, DATA_MODULE_COUNT);
    }

    #[test]
    fn encode_places_length_byte_first() {
        let addr = [b'A'; 34];
        let matrix = encode(&addr).unwrap();
        let mut bits = data_positions().take(8);
        let mut byte = 0u8;
        for _ in 0..8 {
            let (r, c) = bits.next().unwrap();
            byte = (byte << 1) | matrix.get(r, c) as u8;
        }
        assert_eq!(byte, 34);
    }

    #[test]
    fn encode_empty_payload_is_length_zero_and_zero_crc() {
        let matrix = encode(b"").unwrap();
        let bits: Vec<bool> = data_positions().map(|(r, c)| matrix.get(r, c)).collect();
        // Length byte 0, CRC-32 of [0x00] next, everything after stays light.
        assert!(bits[..8].iter().all(|&b| !b));
        let crc_of_len = crc32(&[0]);
        for (i, &bit) in bits[8..40].iter().enumerate() {
            let expected = (crc_of_len >> (31 - i)) & 1 == 1;
            assert_eq!(bit, expected);
        }
        assert!(bits[40..].iter().all(|&b| !b));
        assert_eq!(decode(&matrix).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn oversized_payload_is_rejected() {
        let too_big = [0u8; MAX_PAYLOAD_LEN + 1];
        assert_eq!(encode(&too_big), Err(QrError::PayloadTooLarge { len: 49 }));
    }

    #[test]
    fn single_flip_in_data_region_fails_checksum() {
        let matrix = encode(b"payments-are-final").unwrap();
        for (r, c) in data_positions() {
            let mut corrupted = matrix.clone();
            corrupted.toggle(r, c);
            match decode(&corrupted) {
                Ok(payload) => assert_eq!(payload, b"payments-are-final", "flip at ({r},{c})"),
                Err(QrError::ChecksumMismatch | QrError::LengthOutOfRange { .. }) => {}
                Err(e) => panic!("unexpected error {e:?} for flip at ({r},{c})"),
            }
        }
    }

    #[test]
    fn single_flip_in_structural_zone_fails_finder_check() {
        let matrix = encode(b"x").unwrap();
        for r in 0..GRID_SIZE {
            for c in 0..GRID_SIZE {
                if zone(r, c) == Zone::Data {
                    continue;
                }
                let mut corrupted = matrix.clone();
                corrupted.toggle(r, c);
                assert_eq!(decode(&corrupted), Err(QrError::FinderNotFound));
            }
        }
    }

    #[test]
    fn text_form_roundtrips_and_is_25_lines() {
        let matrix = encode(b"hello").unwrap();
        let text = matrix.to_string();
        assert_eq!(text.lines().count(), GRID_SIZE);
        assert!(text.lines().all(|l| l.len() == GRID_SIZE));
        assert_eq!(QrMatrix::from_text(&text).unwrap(), matrix);
        assert_eq!(QrMatrix::from_text("junk"), Err(QrError::BadTextFormat));
    }

    #[test]
    fn finder_corners_render_as_expected() {
        let matrix = encode(b"").unwrap();
        let text = matrix.to_string();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("#######."));
        assert!(first.ends_with(".#######"));
    }

    proptest! {
        #[test]
        fn roundtrip_any_payload(data in proptest::collection::vec(any::<u8>(), 0..=MAX_PAYLOAD_LEN)) {
            let matrix = encode(&data).unwrap();
            prop_assert_eq!(decode(&matrix).unwrap(), data);
        }

        #[test]
        fn encoding_is_canonical(data in proptest::collection::vec(any::<u8>(), 0..=MAX_PAYLOAD_LEN)) {
            prop_assert_eq!(encode(&data).unwrap(), encode(&data).unwrap());
        }
    }
}
