//! Sobol sequences in Gray-code order with optional nested-uniform scrambling.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const BITS: usize = 32;
const TABLE: &str = include_str!("../../data/new-joe-kuo-6.21201");

/// Direction numbers for every supported dimension, first dimension included.
fn directions() -> Result<&'static [[u32; BITS]]> {
    static DIRS: OnceLock<std::result::Result<Vec<[u32; BITS]>, String>> = OnceLock::new();
    let dirs = DIRS.get_or_init(|| {
        let text = match std::env::var("SAABO_SOBOL_TABLE") {
            Ok(path) => std::fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?,
            Err(_) => TABLE.to_string(),
        };
        parse_table(&text)
    });
    dirs.as_deref().map_err(|e| Error::SobolTable(e.clone()))
}

fn parse_table(text: &str) -> std::result::Result<Vec<[u32; BITS]>, String> {
    let mut out = Vec::new();
    let mut first = [0u32; BITS];
    for (k, v) in first.iter_mut().enumerate() {
        *v = 1 << (BITS - 1 - k);
    }
    out.push(first);
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<u64> = line
            .split_whitespace()
            .map(|f| f.parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 3 {
            return Err(format!("line {}: too few fields", lineno + 1));
        }
        let s = fields[1] as usize;
        let a = fields[2];
        let m_init = &fields[3..];
        if s == 0 || m_init.len() != s {
            return Err(format!("line {}: expected {s} initial direction numbers", lineno + 1));
        }
        let mut m = vec![0u64; BITS.max(s)];
        m[..s].copy_from_slice(m_init);
        for k in s..BITS {
            let mut val = m[k - s] ^ (m[k - s] << s);
            for j in 1..s {
                if (a >> (s - 1 - j)) & 1 == 1 {
                    val ^= m[k - j] << j;
                }
            }
            m[k] = val;
        }
        let mut v = [0u32; BITS];
        for k in 0..BITS {
            v[k] = (m[k] << (BITS - 1 - k)) as u32;
        }
        out.push(v);
    }
    Ok(out)
}

/// Number of dimensions available from the direction-number table.
pub fn max_dimension() -> Result<usize> {
    Ok(directions()?.len())
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn hash4(seed: u64, dim: u64, level: u64, prefix: u64) -> u64 {
    let h = mix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let h = mix64(h ^ dim.wrapping_mul(0xd6e8_feb8_6659_fd93));
    let h = mix64(h ^ level.wrapping_mul(0xa076_1d64_78bd_642f));
    mix64(h ^ prefix)
}

/// Scrambled stream generator for `dimension` coordinates.
#[derive(Debug, Clone)]
pub struct SobolEngine {
    dimension: usize,
    scramble_seed: u64,
    index: u64,
    state: Vec<u32>,
    dirs: &'static [[u32; BITS]],
}

impl SobolEngine {
    /// `scramble_seed = 0` yields the plain sequence starting at the origin.
    pub fn new(dimension: usize, scramble_seed: u64) -> Result<Self> {
        let dirs = directions()?;
        if dimension == 0 {
            return Err(Error::Domain("sobol dimension must be >= 1".into()));
        }
        if dimension > dirs.len() {
            return Err(Error::SobolDimension {
                requested: dimension,
                available: dirs.len(),
            });
        }
        Ok(SobolEngine {
            dimension,
            scramble_seed,
            index: 0,
            state: vec![0; dimension],
            dirs: &dirs[..dimension],
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }
    pub fn scramble_seed(&self) -> u64 {
        self.scramble_seed
    }
    /// Index of the next point.
    pub fn index(&self) -> u64 {
        self.index
    }

    fn advance(&mut self) {
        self.index += 1;
        let c = self.index.trailing_zeros() as usize;
        if c >= BITS {
            // sequence exhausted; wrap around
            self.index = 0;
            self.state.iter_mut().for_each(|s| *s = 0);
            return;
        }
        for (s, v) in self.state.iter_mut().zip(self.dirs) {
            *s ^= v[c];
        }
    }

    /// Skips `n` points.
    pub fn fast_forward(&mut self, n: u64) {
        for _ in 0..n {
            self.advance();
        }
    }

    fn scramble(&self, dim: usize, x: u32) -> f64 {
        let seed = self.scramble_seed;
        let mut out = 0u32;
        for level in 0..BITS {
            let prefix = if level == 0 { 0 } else { (x >> (BITS - level)) as u64 };
            let flip = (hash4(seed, dim as u64, level as u64, prefix) >> 63) as u32;
            let bit = ((x >> (BITS - 1 - level)) & 1) ^ flip;
            out |= bit << (BITS - 1 - level);
        }
        // fill the digits below 2^-32 uniformly, keeping the value inside (0, 1)
        let tail = hash4(seed, dim as u64, BITS as u64, x as u64 | 1 << 32) >> 11;
        let frac = (tail as f64 + 0.5) / (1u64 << 53) as f64;
        (out as f64 + frac) / 4_294_967_296.0
    }

    fn current(&self, out: &mut [f64]) {
        for (d, (o, s)) in out.iter_mut().zip(&self.state).enumerate() {
            *o = if self.scramble_seed == 0 {
                *s as f64 / 4_294_967_296.0
            } else {
                self.scramble(d, *s)
            };
        }
    }

    /// Next `n` points as rows of an `n × dimension` matrix.
    pub fn draw(&mut self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, self.dimension);
        let mut row = vec![0.0; self.dimension];
        for i in 0..n {
            self.current(&mut row);
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
            self.advance();
        }
        m
    }
}

/// Draws `n` points after checking `n >= 1`.
pub fn sobol_draw(engine: &mut SobolEngine, n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::Domain("sobol_draw needs n >= 1".into()));
    }
    Ok(engine.draw(n))
}
