use std::fmt;
use std::ops::Range;

use crate::exact;
use crate::field::Grid;

/// How the adjoint updates of the reverse pass are protected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, clap::ValueEnum)]
pub enum AdjointConfig {
    /// No annotations: every adjoint update is atomic.
    Atomic,
    /// Classical updates, atomic on the two rows next to a neighbouring
    /// block.
    AccessControl,
    /// Twice as many blocks, swept in two interleaved passes separated by
    /// a reverse barrier; no atomics at all.
    Classical,
}

impl AdjointConfig {
    pub const ALL: [AdjointConfig; 3] = [
        AdjointConfig::Atomic,
        AdjointConfig::AccessControl,
        AdjointConfig::Classical,
    ];

    pub fn blocks_per_thread(self) -> usize {
        match self {
            AdjointConfig::Classical => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AdjointConfig::Atomic => "atomic",
            AdjointConfig::AccessControl => "access-control",
            AdjointConfig::Classical => "classical",
        }
    }
}

impl fmt::Display for AdjointConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Granularity of the recording.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum Taping {
    /// One statement per cell update with hand-derived partials.
    #[default]
    Statement,
    /// One statement per arithmetic operation.
    Operator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub nx: usize,
    pub ny: usize,
    /// Edge length of the square domain `[0, L]²`.
    pub length: f64,
    pub dt: f64,
    pub steps: usize,
    pub reynolds: f64,
    pub threads: usize,
    pub adjoint: AdjointConfig,
    pub taping: Taping,
}

/// Safety factor applied to the explicit stability bounds.
pub const SAFETY: f64 = 0.9;

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            nx: 64,
            ny: 64,
            length: 1.0,
            // 1e-4 exceeds the diffusion bound on this grid
            dt: 5e-5,
            steps: 10,
            reynolds: 1.0,
            threads: 1,
            adjoint: AdjointConfig::Atomic,
            taping: Taping::Statement,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("grid needs at least one cell per axis")]
    EmptyGrid,
    #[error("thread count must be positive")]
    NoThreads,
    #[error("{rows} interior rows cannot hold {blocks} blocks of at least {min} rows")]
    TooManyBlocks {
        rows: usize,
        blocks: usize,
        min: usize,
    },
    #[error("dt, domain size and Reynolds number must be positive and finite")]
    BadParameter,
    #[error(
        "dt={dt:e} exceeds the stability limit {limit:e} \
         (convective {convective:e}, diffusive {diffusive:e}, safety {SAFETY})"
    )]
    Unstable {
        dt: f64,
        limit: f64,
        convective: f64,
        diffusive: f64,
    },
    #[error("final time {0} reaches the singularity of the exact solution")]
    Singular(f64),
}

impl ConfigError {
    pub fn is_stability(&self) -> bool {
        matches!(
            self,
            ConfigError::Unstable { .. } | ConfigError::Singular(_)
        )
    }
}

impl SolverConfig {
    /// Full-size reference setup: R=1 on [0,50]², 2000² cells, 20 steps.
    pub fn paper_scale() -> Self {
        SolverConfig {
            nx: 2000,
            ny: 2000,
            length: 50.0,
            dt: 1e-4,
            steps: 20,
            reynolds: 1.0,
            ..SolverConfig::default()
        }
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.nx, self.ny, self.length)
    }

    pub fn blocks(&self) -> usize {
        self.threads * self.adjoint.blocks_per_thread()
    }

    pub fn decomposition(&self) -> BlockDecomposition {
        BlockDecomposition::new(self.ny, self.blocks())
    }

    pub fn final_time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Largest stable step: `SAFETY · min(h/umax, h²R/4)` with `h` the
    /// smaller cell width and `umax` the largest velocity of the exact
    /// solution on the grid over the simulated interval.
    pub fn stability_limit(&self) -> (f64, f64, f64) {
        let grid = self.grid();
        let h = grid.dx.min(grid.dy);
        let umax = [0.0, self.final_time()]
            .into_iter()
            .flat_map(|t| {
                grid.corners().map(move |(x, y)| {
                    let (u, v) = exact::velocity(x, y, t);
                    u.abs().max(v.abs())
                })
            })
            .fold(0.0, f64::max);
        let convective = if umax > 0.0 { h / umax } else { f64::INFINITY };
        let diffusive = h * h * self.reynolds / 4.0;
        (SAFETY * convective.min(diffusive), convective, diffusive)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.nx == 0 || self.ny == 0 {
            return Err(ConfigError::EmptyGrid);
        }
        if self.threads == 0 {
            return Err(ConfigError::NoThreads);
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.dt) || !positive(self.length) || !positive(self.reynolds) {
            return Err(ConfigError::BadParameter);
        }
        let min = match self.adjoint {
            AdjointConfig::Classical => 2,
            _ => 1,
        };
        if self.ny < min * self.blocks() {
            return Err(ConfigError::TooManyBlocks {
                rows: self.ny,
                blocks: self.blocks(),
                min,
            });
        }
        if !exact::defined(self.final_time()) {
            return Err(ConfigError::Singular(self.final_time()));
        }
        let (limit, convective, diffusive) = self.stability_limit();
        if self.dt > limit {
            return Err(ConfigError::Unstable {
                dt: self.dt,
                limit,
                convective,
                diffusive,
            });
        }
        Ok(())
    }
}

/// Contiguous blocks of interior rows (`1..=ny`) of equal height, up to one
/// row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockDecomposition {
    blocks: Vec<Range<usize>>,
}

impl BlockDecomposition {
    pub fn new(ny: usize, count: usize) -> Self {
        let blocks = (0..count)
            .map(|b| 1 + b * ny / count..1 + (b + 1) * ny / count)
            .collect();
        BlockDecomposition { blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn rows(&self, block: usize) -> Range<usize> {
        self.blocks[block].clone()
    }

    pub fn iter(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.blocks.iter().cloned()
    }

    /// Whether a cell update in `row` of `block` reads a row that another
    /// block also reads.
    pub fn near_boundary(&self, block: usize, row: usize) -> bool {
        let r = &self.blocks[block];
        let above = block > 0 && row < r.start + 2;
        let below = block + 1 < self.blocks.len() && row + 2 >= r.end;
        above || below
    }

    /// Number of interior rows read by the stencils of more than one block.
    pub fn shared_rows(&self) -> usize {
        2 * self.blocks.len().saturating_sub(1)
    }
}
