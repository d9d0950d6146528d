//! Unscrambled Sobol points from the Joe–Kuo direction numbers.
//!
//! A point is computed directly from its Gray-code rank, so any index can be
//! produced without replaying its predecessors.

use std::sync::OnceLock;

use crate::{Error, Result};

pub const MAX_DIMENSION: usize = 64;
const BITS: usize = 32;

static TABLE: OnceLock<Vec<[u32; BITS]>> = OnceLock::new();

fn table() -> &'static [[u32; BITS]] {
    TABLE.get_or_init(|| parse_table(include_str!("joe_kuo_64.txt")))
}

fn parse_table(text: &str) -> Vec<[u32; BITS]> {
    let mut dims = Vec::with_capacity(MAX_DIMENSION);
    let mut first = [0u32; BITS];
    for (i, v) in first.iter_mut().enumerate() {
        *v = 1 << (BITS - 1 - i);
    }
    dims.push(first);
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let nums: Vec<u32> = line.split_whitespace().map(|t| t.parse().expect("direction table")).collect();
        let (s, a, m) = (nums[1] as usize, nums[2], &nums[3..]);
        let mut v = [0u32; BITS];
        for i in 0..BITS {
            if i < s {
                v[i] = m[i] << (BITS - 1 - i);
            } else {
                let mut x = v[i - s] ^ (v[i - s] >> s);
                for k in 1..s {
                    if (a >> (s - 1 - k)) & 1 == 1 {
                        x ^= v[i - k];
                    }
                }
                v[i] = x;
            }
        }
        dims.push(v);
    }
    dims
}

pub fn check_dimension(d: usize) -> Result<()> {
    if d == 0 || d > MAX_DIMENSION {
        return Err(Error::Invalid(format!(
            "sobol dimension {d} outside the built-in direction table (1..={MAX_DIMENSION})"
        )));
    }
    Ok(())
}

/// Point with standard sequence index `index` (index 0 is the origin).
pub fn point_at(index: u64, d: usize) -> Result<Vec<f64>> {
    check_dimension(d)?;
    if index >= 1 << BITS {
        return Err(Error::Invalid(format!("sobol index {index} exceeds 2^{BITS}")));
    }
    let gray = index ^ (index >> 1);
    let t = table();
    let scale = 1.0 / (1u64 << BITS) as f64;
    Ok((0..d)
        .map(|k| {
            let mut x = 0u32;
            let mut g = gray;
            let mut bit = 0;
            while g != 0 {
                if g & 1 == 1 {
                    x ^= t[k][bit];
                }
                g >>= 1;
                bit += 1;
            }
            x as f64 * scale
        })
        .collect())
}
