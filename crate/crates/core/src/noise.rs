//! Truncated cylindrical Wiener noise.
//!
//! A [`NoisePath`] holds the Gaussian increments of `n_modes` independent
//! Brownian motions on a uniform grid over `[0, T]`, together with the running
//! sum of the first mode (`w_t`), which is what random coefficients such as
//! `|w_t|` are evaluated from.
//!
//! Every `(seed, replica, mode)` triple owns its own ChaCha stream, so paths
//! are reproducible regardless of how replicas are scheduled across threads.
//! Increments are stored on a dyadic lattice of spacing 2^-40; sums of lattice
//! values below 2^12 in magnitude are exact in `f64`, which makes Brownian-bridge
//! refinement and coarse aggregation bit-exact inverses of each other.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Magic prefix of the binary increment dump.
pub const NOISE_MAGIC: [u8; 8] = *b"STEVNOIS";

const LATTICE_SCALE: f64 = 1_099_511_627_776.0; // 2^40
const LATTICE_LIMIT: f64 = 4096.0; // 2^12
const MAX_HORIZON: f64 = 1.0e4;

fn to_lattice(x: f64) -> f64 {
    (x * LATTICE_SCALE).round() / LATTICE_SCALE
}

/// Deterministic generator for one `(seed, replica, stream)` triple.
pub fn stream_rng(seed: u64, replica: u64, stream: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replica.to_le_bytes());
    let mut rng = ChaCha12Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    seed: u64,
    replica: u64,
    level: u32,
    t_final: f64,
    n_modes: usize,
    times: Vec<f64>,
    /// Row-major `n_steps x n_modes`.
    increments: Vec<f64>,
    scalar_path: Vec<f64>,
}

impl NoisePath {
    /// Samples replica 0 of `seed`.
    pub fn sample(seed: u64, t_final: f64, n_steps: usize, n_modes: usize) -> Result<Self> {
        Self::sample_replica(seed, 0, t_final, n_steps, n_modes)
    }

    pub fn sample_replica(
        seed: u64,
        replica: u64,
        t_final: f64,
        n_steps: usize,
        n_modes: usize,
    ) -> Result<Self> {
        validate_grid(t_final, n_steps, n_modes)?;
        let dt = t_final / n_steps as f64;
        let sd = dt.sqrt();
        let mut increments = vec![0.0; n_steps * n_modes];
        for mode in 0..n_modes {
            let mut rng = stream_rng(seed, replica, mode as u64);
            for k in 0..n_steps {
                let z: f64 = StandardNormal.sample(&mut rng);
                increments[k * n_modes + mode] = to_lattice(sd * z);
            }
        }
        Self::from_parts(seed, replica, 0, t_final, n_modes, increments)
    }

    /// Builds a path from explicit increments (row-major `n_steps x n_modes`).
    ///
    /// Values are snapped to the storage lattice.
    pub fn from_increments(
        seed: u64,
        t_final: f64,
        n_modes: usize,
        increments: Vec<f64>,
    ) -> Result<Self> {
        if n_modes == 0 || increments.len() % n_modes != 0 || increments.is_empty() {
            return Err(Error::Config(format!(
                "{} increments cannot be split into rows of {} modes",
                increments.len(),
                n_modes
            )));
        }
        validate_grid(t_final, increments.len() / n_modes, n_modes)?;
        crate::error::check_finite("noise increments", &increments)?;
        let increments = increments.into_iter().map(to_lattice).collect();
        Self::from_parts(seed, 0, 0, t_final, n_modes, increments)
    }

    fn from_parts(
        seed: u64,
        replica: u64,
        level: u32,
        t_final: f64,
        n_modes: usize,
        increments: Vec<f64>,
    ) -> Result<Self> {
        let n_steps = increments.len() / n_modes;
        if let Some(big) = increments.iter().find(|x| x.abs() >= LATTICE_LIMIT) {
            return Err(Error::OutOfRange {
                what: "noise increment",
                detail: format!("|{big}| exceeds the exact-summation range"),
            });
        }
        let times = (0..=n_steps)
            .map(|k| k as f64 * t_final / n_steps as f64)
            .collect();
        let mut scalar_path = Vec::with_capacity(n_steps + 1);
        let mut w = 0.0;
        scalar_path.push(w);
        for k in 0..n_steps {
            w += increments[k * n_modes];
            scalar_path.push(w);
        }
        Ok(Self {
            seed,
            replica,
            level,
            t_final,
            n_modes,
            times,
            increments,
            scalar_path,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replica(&self) -> u64 {
        self.replica
    }

    /// Number of refinements applied since sampling.
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps() as f64
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Increments of all modes over `[t_k, t_{k+1}]`.
    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.n_modes..(k + 1) * self.n_modes]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn mode_increments(&self, mode: usize) -> impl Iterator<Item = f64> + '_ {
        self.increments.iter().skip(mode).step_by(self.n_modes).copied()
    }

    /// `w_t` at grid points: the running sum of mode-0 increments.
    pub fn scalar_path(&self) -> &[f64] {
        &self.scalar_path
    }

    /// Cumulative value of every mode at grid index `k`.
    pub fn value(&self, k: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.n_modes];
        for j in 0..k {
            for (m, wm) in w.iter_mut().enumerate() {
                *wm += self.increments[j * self.n_modes + m];
            }
        }
        w
    }

    /// Halves the step, filling midpoints with a Brownian bridge.
    ///
    /// Fine increments `2k` and `2k+1` sum exactly to the coarse increment `k`.
    pub fn refine(&self) -> Result<Self> {
        let n_steps = self.n_steps();
        let level = self.level + 1;
        let half_sd = (self.dt() / 4.0).sqrt();
        let mut fine = vec![0.0; 2 * n_steps * self.n_modes];
        for mode in 0..self.n_modes {
            let stream = ((level as u64) << 32) | mode as u64;
            let mut rng = stream_rng(self.seed, self.replica, stream);
            for k in 0..n_steps {
                let coarse = self.increments[k * self.n_modes + mode];
                let z: f64 = StandardNormal.sample(&mut rng);
                let first = to_lattice(0.5 * coarse + half_sd * z);
                let second = coarse - first;
                fine[2 * k * self.n_modes + mode] = first;
                fine[(2 * k + 1) * self.n_modes + mode] = second;
            }
        }
        Self::from_parts(
            self.seed,
            self.replica,
            level,
            self.t_final,
            self.n_modes,
            fine,
        )
    }

    /// Sums blocks of `factor` consecutive increments (exact on the lattice).
    pub fn aggregate(&self, factor: usize) -> Result<Self> {
        let n_steps = self.n_steps();
        if factor == 0 || n_steps % factor != 0 {
            return Err(Error::Config(format!(
                "cannot aggregate {n_steps} steps in blocks of {factor}"
            )));
        }
        let coarse_steps = n_steps / factor;
        let mut coarse = vec![0.0; coarse_steps * self.n_modes];
        for k in 0..coarse_steps {
            for mode in 0..self.n_modes {
                coarse[k * self.n_modes + mode] = (0..factor)
                    .map(|j| self.increments[(k * factor + j) * self.n_modes + mode])
                    .sum();
            }
        }
        Self::from_parts(
            self.seed,
            self.replica,
            self.level.saturating_sub(factor.trailing_zeros()),
            self.t_final,
            self.n_modes,
            coarse,
        )
    }

    /// Writes the little-endian increment dump:
    /// magic, `N`, `n_modes`, seed (each 8 bytes), then `N x n_modes` f64 row-major.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&NOISE_MAGIC)?;
        out.write_all(&(self.n_steps() as u64).to_le_bytes())?;
        out.write_all(&(self.n_modes as u64).to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        for x in &self.increments {
            out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a dump produced by [`NoisePath::write_binary`]. The horizon is not
    /// part of the format and has to be supplied.
    pub fn read_binary<R: Read>(mut input: R, t_final: f64) -> Result<Self> {
        let mut word = [0u8; 8];
        input.read_exact(&mut word)?;
        if word != NOISE_MAGIC {
            return Err(Error::Config("not a noise dump (bad magic)".into()));
        }
        let mut read_u64 = |input: &mut R| -> Result<u64> {
            input.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let n_steps = read_u64(&mut input)? as usize;
        let n_modes = read_u64(&mut input)? as usize;
        let seed = read_u64(&mut input)?;
        validate_grid(t_final, n_steps, n_modes)?;
        let mut increments = Vec::with_capacity(n_steps * n_modes);
        let mut buf = [0u8; 8];
        for _ in 0..n_steps * n_modes {
            input.read_exact(&mut buf)?;
            increments.push(f64::from_le_bytes(buf));
        }
        crate::error::check_finite("noise increments", &increments)?;
        Self::from_parts(seed, 0, 0, t_final, n_modes, increments)
    }
}

fn validate_grid(t_final: f64, n_steps: usize, n_modes: usize) -> Result<()> {
    if !(t_final > 0.0 && t_final <= MAX_HORIZON) {
        return Err(Error::Config(format!(
            "noise horizon must lie in (0, {MAX_HORIZON}], got {t_final}"
        )));
    }
    if n_steps == 0 {
        return Err(Error::Config("noise path needs at least one step".into()));
    }
    if n_modes == 0 {
        return Err(Error::Config("noise path needs at least one mode".into()));
    }
    Ok(())
}
