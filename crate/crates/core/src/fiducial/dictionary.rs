//! The built-in 4×4 marker dictionary and its plain-text exchange format.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FiducialError;

/// Payload cells per side.
pub const PAYLOAD: usize = 4;
/// Cells per side including the one-cell black border.
pub const GRID: usize = PAYLOAD + 2;

/// Version tag of [`BUILTIN_CODES`]; bump whenever the table changes.
pub const DICTIONARY_VERSION: u32 = 1;
/// Minimum Hamming distance between any two codes under any rotation.
pub const MIN_DISTANCE: u32 = 4;
pub const GENERATOR_SEED: u64 = 0x6269_6465_6d6f;

/// Output of [`generate_codes`]`(50, MIN_DISTANCE, GENERATOR_SEED)`, frozen
/// so that printed markers stay valid.
pub const BUILTIN_CODES: [u16; 50] = [
    0x3f71, 0x3f98, 0xd224, 0xe430, 0xc41f, 0xd8ea, 0xdcd6, 0xc185,
    0x848b, 0x7ba3, 0xc6c4, 0x6135, 0x6bd3, 0xc858, 0x16a0, 0x7448,
    0x2a35, 0xca1b, 0xf300, 0x8079, 0x63cc, 0x9527, 0x0915, 0x7d43,
    0xf917, 0x3a3a, 0x06d6, 0xb297, 0x705b, 0xd43a, 0x8feb, 0xbb22,
    0xe1e7, 0xb56d, 0xd0d0, 0x8d77, 0x6258, 0xc559, 0x4b88, 0x6dea,
    0x90de, 0xb6c0, 0x1c91, 0xacf2, 0xb951, 0x9492, 0x25ef, 0x3511,
    0x4628, 0xb672,
];

/// Payload bit `(row, col)`; bit set means a white cell.
pub fn bit(code: u16, row: usize, col: usize) -> bool {
    code >> (15 - (row * PAYLOAD + col)) & 1 == 1
}

fn with_bit(code: u16, row: usize, col: usize, value: bool) -> u16 {
    let mask = 1 << (15 - (row * PAYLOAD + col));
    if value {
        code | mask
    } else {
        code & !mask
    }
}

/// The payload as seen after rotating the marker 90° clockwise.
pub fn rotate_cw(code: u16) -> u16 {
    let mut out = 0;
    for r in 0..PAYLOAD {
        for c in 0..PAYLOAD {
            out = with_bit(out, r, c, bit(code, PAYLOAD - 1 - c, r));
        }
    }
    out
}

/// `rotations(c)[k]` is `c` rotated by `k · 90°` clockwise.
pub fn rotations(code: u16) -> [u16; 4] {
    let r1 = rotate_cw(code);
    let r2 = rotate_cw(r1);
    [code, r1, r2, rotate_cw(r2)]
}

/// Greedy seeded search for `count` codes whose rotations are pairwise at
/// least `min_distance` apart, including a code's own rotations.
pub fn generate_codes(count: usize, min_distance: u32, seed: u64) -> Vec<u16> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<u16> = Vec::with_capacity(count);
    let mut attempts = 0u64;
    while out.len() < count && attempts < 10_000_000 {
        attempts += 1;
        let c: u16 = rng.random();
        let ones = c.count_ones();
        if !(5..=11).contains(&ones) {
            continue;
        }
        let rots = rotations(c);
        if rots[1..].iter().any(|r| (r ^ c).count_ones() < min_distance) {
            continue;
        }
        let clash = out
            .iter()
            .any(|a| rots.iter().any(|r| (r ^ a).count_ones() < min_distance));
        if !clash {
            out.push(c);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerDescriptor {
    pub id: u32,
    /// Payload bits, row-major from the top-left cell, MSB first.
    pub code: u16,
    /// Outer side length of the black border, meters.
    pub physical_size: f64,
}

impl MarkerDescriptor {
    /// Full cell grid including the border; `true` is white.
    pub fn grid(&self) -> [[bool; GRID]; GRID] {
        let mut g = [[false; GRID]; GRID];
        for r in 0..PAYLOAD {
            for c in 0..PAYLOAD {
                g[r + 1][c + 1] = bit(self.code, r, c);
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub version: u32,
    markers: Vec<MarkerDescriptor>,
}

impl Dictionary {
    /// The built-in 50-marker dictionary, every marker `physical_size` wide.
    pub fn builtin(physical_size: f64) -> Self {
        let markers = BUILTIN_CODES
            .iter()
            .enumerate()
            .map(|(i, code)| MarkerDescriptor {
                id: i as u32,
                code: *code,
                physical_size,
            })
            .collect();
        Self {
            version: DICTIONARY_VERSION,
            markers,
        }
    }

    /// Builds a dictionary, checking that ids are unique and that no two
    /// rotations of any codes coincide.
    pub fn new(version: u32, markers: Vec<MarkerDescriptor>) -> Result<Self, FiducialError> {
        for (i, a) in markers.iter().enumerate() {
            let rots = rotations(a.code);
            if rots[1..].contains(&a.code) {
                return Err(FiducialError::InvalidDictionary(format!(
                    "marker {} is rotationally symmetric",
                    a.id
                )));
            }
            for b in &markers[i + 1..] {
                if a.id == b.id {
                    return Err(FiducialError::InvalidDictionary(format!(
                        "duplicate id {}",
                        a.id
                    )));
                }
                if rots.contains(&b.code) {
                    return Err(FiducialError::InvalidDictionary(format!(
                        "markers {} and {} are rotations of each other",
                        a.id, b.id
                    )));
                }
            }
        }
        Ok(Self { version, markers })
    }

    pub fn markers(&self) -> &[MarkerDescriptor] {
        &self.markers
    }

    pub fn get(&self, id: u32) -> Option<&MarkerDescriptor> {
        self.markers.iter().find(|m| m.id == id)
    }

    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }

    /// Best match of an observed payload over all markers and rotations:
    /// `(marker index, rotation k, distance)`, where the observed payload is
    /// the marker's code rotated by `k · 90°` clockwise.
    pub fn identify(&self, observed: u16) -> Option<(usize, usize, u32)> {
        let mut best: Option<(usize, usize, u32)> = None;
        for (i, m) in self.markers.iter().enumerate() {
            for (k, r) in rotations(m.code).iter().enumerate() {
                let d = (r ^ observed).count_ones();
                if best.is_none_or(|b| d < b.2) {
                    best = Some((i, k, d));
                }
            }
        }
        best
    }

    /// Plain-text form:
    ///
    /// ```text
    /// dictionary 1
    /// marker 0 0.02
    /// 1011
    /// ...
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = format!("dictionary {}\n", self.version);
        for m in &self.markers {
            let _ = writeln!(s, "marker {} {}", m.id, m.physical_size);
            for r in 0..PAYLOAD {
                for c in 0..PAYLOAD {
                    s.push(if bit(m.code, r, c) { '1' } else { '0' });
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, FiducialError> {
        let err = |line: usize, msg: &str| FiducialError::Parse {
            line: line + 1,
            message: msg.to_string(),
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hl, header) = lines.next().ok_or_else(|| err(0, "empty file"))?;
        let version = header
            .strip_prefix("dictionary ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| err(hl, "expected `dictionary <version>`"))?;
        let mut markers = Vec::new();
        while let Some((ml, line)) = lines.next() {
            let mut parts = line.split_whitespace();
            if parts.next() != Some("marker") {
                return Err(err(ml, "expected `marker <id> <size>`"));
            }
            let id = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err(ml, "bad marker id"))?;
            let physical_size = match parts.next() {
                Some(v) => v.parse().map_err(|_| err(ml, "bad marker size"))?,
                None => 0.0,
            };
            let mut code = 0u16;
            for r in 0..PAYLOAD {
                let (rl, row) = lines.next().ok_or_else(|| err(ml, "truncated marker"))?;
                if row.len() != PAYLOAD {
                    return Err(err(rl, "payload rows must have 4 cells"));
                }
                for (c, ch) in row.chars().enumerate() {
                    let v = match ch {
                        '0' => false,
                        '1' => true,
                        _ => return Err(err(rl, "payload cells must be 0 or 1")),
                    };
                    code = with_bit(code, r, c, v);
                }
            }
            markers.push(MarkerDescriptor {
                id,
                code,
                physical_size,
            });
        }
        Self::new(version, markers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_table_matches_generator() {
        let generated = generate_codes(50, MIN_DISTANCE, GENERATOR_SEED);
        assert_eq!(generated, BUILTIN_CODES.to_vec());
    }
}
