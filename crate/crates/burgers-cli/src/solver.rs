use std::sync::Mutex;

use partape::{AccessMode, Logic64, Runtime64, Schedule, Team, Tool64};

use crate::config::{AdjointConfig, BlockDecomposition, SolverConfig, Taping};
use crate::field::{Field, Grid};
use crate::stencil::{self, Coeffs, Component, Star, StencilScalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("non-finite value after step {step}; reduce dt below {limit:e}")]
    Unstable { step: usize, limit: f64 },
    #[error(transparent)]
    Runtime(#[from] partape::runtime::RuntimeError),
    #[error(transparent)]
    Tape(#[from] partape::tape::TapeError),
}

/// What the ring is refreshed with after each step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Boundary {
    /// Exact solution at the new time.
    #[default]
    Exact,
    /// Ring values carried over unchanged.
    Frozen,
}

/// Time stepper running each step as one parallel region.
pub struct Solver<'a> {
    cfg: &'a SolverConfig,
    grid: Grid,
    coeffs: Coeffs,
    blocks: BlockDecomposition,
    runtime: &'a Runtime64,
    boundary: Boundary,
}

impl<'a> Solver<'a> {
    pub fn new(cfg: &'a SolverConfig, runtime: &'a Runtime64) -> Result<Self, SolverError> {
        cfg.validate()?;
        let grid = cfg.grid();
        Ok(Solver {
            cfg,
            grid,
            coeffs: Coeffs::new(cfg.dt, grid.dx, grid.dy, cfg.reynolds),
            blocks: cfg.decomposition(),
            runtime,
            boundary: Boundary::Exact,
        })
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn logic(&self) -> &Logic64 {
        self.runtime.logic()
    }

    pub fn run<S: StencilScalar>(&self, mut field: Field<S>) -> Result<Field<S>, SolverError> {
        for step in 0..self.cfg.steps {
            field = self.advance(&field, step)?;
        }
        Ok(field)
    }

    /// One explicit step from `step·Δt` to `(step+1)·Δt`.
    pub fn advance<S: StencilScalar>(
        &self,
        old: &Field<S>,
        step: usize,
    ) -> Result<Field<S>, SolverError> {
        let grid = &self.grid;
        let mut next = match self.boundary {
            Boundary::Exact => Field::with_boundary(grid, (step + 1) as f64 * self.cfg.dt),
            Boundary::Frozen => old.clone(),
        };
        {
            let u_rows: Vec<Mutex<&mut [S]>> =
                next.u.chunks_mut(grid.stride).map(Mutex::new).collect();
            let v_rows: Vec<Mutex<&mut [S]>> =
                next.v.chunks_mut(grid.stride).map(Mutex::new).collect();
            let rows = Rows {
                old,
                u: &u_rows,
                v: &v_rows,
            };
            self.runtime
                .parallel(self.cfg.threads, |team| self.task(team, &rows))?;
        }
        let finite = grid
            .interior()
            .all(|k| next.u[k].value().is_finite() && next.v[k].value().is_finite());
        if !finite {
            return Err(SolverError::Unstable {
                step,
                limit: self.cfg.stability_limit().0,
            });
        }
        Ok(next)
    }

    fn task<S: StencilScalar>(&self, team: &Team<'_, Tool64>, rows: &Rows<'_, '_, S>) {
        let threads = self.cfg.threads;
        match self.cfg.adjoint {
            AdjointConfig::Atomic => {
                team.for_loop(0..threads, Schedule::Static(1), false, |b| {
                    self.sweep(b, rows, false)
                });
            }
            AdjointConfig::AccessControl => {
                self.set_mode::<S>(AccessMode::Classical);
                team.for_loop(0..threads, Schedule::Static(1), false, |b| {
                    self.sweep(b, rows, true)
                });
            }
            AdjointConfig::Classical => {
                self.set_mode::<S>(AccessMode::Classical);
                for sweep in 0..2 {
                    team.for_loop(0..threads, Schedule::Static(1), true, |k| {
                        self.sweep(2 * k + sweep, rows, false)
                    });
                    if sweep == 0 && S::ACTIVE {
                        self.logic().add_reverse_barrier();
                    }
                }
            }
        }
    }

    fn set_mode<S: StencilScalar>(&self, mode: AccessMode) {
        if S::ACTIVE {
            self.logic().set_adjoint_access_mode(mode);
        }
    }

    fn sweep<S: StencilScalar>(&self, block: usize, rows: &Rows<'_, '_, S>, access_control: bool) {
        let grid = &self.grid;
        let old = rows.old;
        let mut atomic = false;
        for j in self.blocks.rows(block) {
            if access_control {
                let near = self.blocks.near_boundary(block, j);
                if near != atomic {
                    atomic = near;
                    self.set_mode::<S>(if near {
                        AccessMode::Atomic
                    } else {
                        AccessMode::Classical
                    });
                }
            }
            let mut u_row = rows.u[j].lock().expect("row owned by one task");
            let mut v_row = rows.v[j].lock().expect("row owned by one task");
            for i in 1..=grid.nx {
                let c = grid.index(i, j);
                let star = |q: &[S]| Star {
                    c: q[c],
                    w: q[c - 1],
                    e: q[c + 1],
                    s: q[c - grid.stride],
                    n: q[c + grid.stride],
                };
                let (su, sv) = (star(&old.u), star(&old.v));
                let (nu, nv) = match self.cfg.taping {
                    Taping::Statement => (
                        stencil::update(su, old.v[c], Component::U, &self.coeffs),
                        stencil::update(sv, old.u[c], Component::V, &self.coeffs),
                    ),
                    Taping::Operator => (
                        stencil::update_operators(su, old.v[c], Component::U, &self.coeffs),
                        stencil::update_operators(sv, old.u[c], Component::V, &self.coeffs),
                    ),
                };
                u_row[i] = nu;
                v_row[i] = nv;
            }
        }
        if access_control && atomic {
            self.set_mode::<S>(AccessMode::Classical);
        }
    }
}

struct Rows<'r, 'd, S> {
    old: &'r Field<S>,
    u: &'r [Mutex<&'d mut [S]>],
    v: &'r [Mutex<&'d mut [S]>],
}

/// `J = sqrt(ΔxΔy Σ (u² + v²))` over the interior, recorded as one
/// statement.
pub fn objective<S: StencilScalar>(grid: &Grid, field: &Field<S>) -> S {
    let weight = grid.dx * grid.dy;
    let sum: f64 = grid
        .interior()
        .map(|k| {
            let (u, v) = (field.u[k].value(), field.v[k].value());
            u * u + v * v
        })
        .sum();
    let j = (weight * sum).sqrt();
    if !S::ACTIVE {
        return S::constant(j);
    }
    let n = grid.interior_len();
    let mut args = Vec::with_capacity(2 * n);
    let mut partials = Vec::with_capacity(2 * n);
    // at J = 0 the zero subgradient is used
    let scale = if j > 0.0 { weight / j } else { 0.0 };
    for k in grid.interior() {
        for q in [field.u[k], field.v[k]] {
            args.push(q);
            partials.push(scale * q.value());
        }
    }
    S::statement(j, &args, &partials)
}

/// Initial data from the exact solution; interior cells go through
/// `input` (e.g. to register them), ring cells stay passive.
pub fn initial_field<S: StencilScalar>(grid: &Grid, mut input: impl FnMut(f64) -> S) -> Field<S> {
    let exact = Field::exact(grid, 0.0);
    let mut field = Field::with_boundary(grid, 0.0);
    for k in grid.interior() {
        field.u[k] = input(exact.u[k]);
    }
    for k in grid.interior() {
        field.v[k] = input(exact.v[k]);
    }
    field
}

/// Primal run, returning the final field.
pub fn simulate(cfg: &SolverConfig, initial: Field<f64>) -> Result<Field<f64>, SolverError> {
    let runtime = passive_runtime();
    Solver::new(cfg, &runtime)?.run(initial)
}

/// Runtime whose regions record nothing.
pub fn passive_runtime() -> Runtime64 {
    let logic = Logic64::new(Tool64::initialized(), partape::LogicConfig::new());
    Runtime64::new(logic, partape::RuntimeConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_of_zero_field() {
        let g = Grid::new(4, 4, 1.0);
        assert_eq!(objective(&g, &Field::<f64>::zeros(&g)), 0.0);
    }

    #[test]
    fn objective_of_unit_flow() {
        let g = Grid::new(8, 5, 3.0);
        let mut f = Field::<f64>::zeros(&g);
        for k in g.interior() {
            f.u[k] = 1.0;
        }
        assert!((objective(&g, &f) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn objective_matches_resummation() {
        let g = Grid::new(4, 4, 1.0);
        let mut f = Field::<f64>::zeros(&g);
        let mut seed = 1u64;
        let mut next = || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut sum = 0.0;
        for j in 1..=4 {
            for i in 1..=4 {
                let (u, v) = (next(), next());
                f.u[g.index(i, j)] = u;
                f.v[g.index(i, j)] = v;
                sum += u * u + v * v;
            }
        }
        // ring values must not contribute
        f.u[0] = 100.0;
        let expected = (sum / 16.0).sqrt();
        assert!((objective(&g, &f) - expected).abs() < 1e-15);
    }
}
