//! Finite-difference oracle for the reverse gradient.

use rand::rngs::StdRng;
use rand::seq::index;
use rand::SeedableRng;

use crate::adjoint::Gradient;
use crate::config::SolverConfig;
use crate::field::Field;
use crate::solver::{initial_field, objective, passive_runtime, Solver, SolverError};

/// Relative error below which a sampled entry passes.
pub const TOLERANCE: f64 = 1e-4;

/// Absolute floor of the relative error denominator.
const FLOOR: f64 = 1e-12;

/// An interior initial-data entry: index into `du ++ dv`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Sample(pub usize);

impl Sample {
    pub fn describe(self, nx: usize, ny: usize) -> String {
        let n = nx * ny;
        let (comp, k) = if self.0 < n {
            ("u", self.0)
        } else {
            ("v", self.0 - n)
        };
        format!("{comp}[{},{}]", 1 + k % nx, 1 + k / nx)
    }
}

/// `count` distinct entries drawn with a seeded generator.
pub fn sample_indices(cfg: &SolverConfig, count: usize, seed: u64) -> Vec<Sample> {
    let total = 2 * cfg.nx * cfg.ny;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut picked: Vec<Sample> = index::sample(&mut rng, total, count.min(total))
        .into_iter()
        .map(Sample)
        .collect();
    picked.sort_unstable();
    picked
}

/// Central difference `(f(x+h) − f(x−h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Step for an entry of magnitude `x`: `h_rel · max(1, |x|)`.
pub fn step_size(h_rel: f64, x: f64) -> f64 {
    h_rel * x.abs().max(1.0)
}

pub fn relative_error(reference: f64, approx: f64) -> f64 {
    (reference - approx).abs() / reference.abs().max(approx.abs()).max(FLOOR)
}

/// Primal objective for perturbed initial data.
pub struct PrimalObjective<'a> {
    cfg: &'a SolverConfig,
    initial: Field<f64>,
    cells: Vec<usize>,
}

impl<'a> PrimalObjective<'a> {
    pub fn new(cfg: &'a SolverConfig) -> Result<Self, SolverError> {
        cfg.validate()?;
        let grid = cfg.grid();
        let initial = initial_field(&grid, |v| v);
        Ok(PrimalObjective {
            cfg,
            initial,
            cells: grid.interior().collect(),
        })
    }

    pub fn initial_value(&self, sample: Sample) -> f64 {
        let n = self.cells.len();
        if sample.0 < n {
            self.initial.u[self.cells[sample.0]]
        } else {
            self.initial.v[self.cells[sample.0 - n]]
        }
    }

    /// `J` with the sampled entry set to `value`.
    pub fn eval(&self, sample: Sample, value: f64) -> Result<f64, SolverError> {
        let mut field = self.initial.clone();
        let n = self.cells.len();
        if sample.0 < n {
            field.u[self.cells[sample.0]] = value;
        } else {
            field.v[self.cells[sample.0 - n]] = value;
        }
        let runtime = passive_runtime();
        let solver = Solver::new(self.cfg, &runtime)?;
        let fin = solver.run(field)?;
        Ok(objective(solver.grid(), &fin))
    }

    pub fn derivative(&self, sample: Sample, h_rel: f64) -> Result<f64, SolverError> {
        let x = self.initial_value(sample);
        let h = step_size(h_rel, x);
        let plus = self.eval(sample, x + h)?;
        let minus = self.eval(sample, x - h)?;
        Ok((plus - minus) / (2.0 * h))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub sample: Sample,
    pub reverse: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub rows: Vec<CheckRow>,
}

impl GradientCheck {
    pub fn max_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.relative_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.rows.iter().all(|r| r.relative_error < tolerance)
    }
}

/// Compares the sampled entries of `gradient` with central differences.
pub fn check_gradient(
    cfg: &SolverConfig,
    gradient: &Gradient,
    samples: &[Sample],
    h_rel: f64,
) -> Result<GradientCheck, SolverError> {
    let primal = PrimalObjective::new(cfg)?;
    let flat: Vec<f64> = gradient.flat().collect();
    let rows = samples
        .iter()
        .map(|&sample| {
            let fd = primal.derivative(sample, h_rel)?;
            let reverse = flat[sample.0];
            Ok(CheckRow {
                sample,
                reverse,
                finite_difference: fd,
                relative_error: relative_error(reverse, fd),
            })
        })
        .collect::<Result<_, SolverError>>()?;
    Ok(GradientCheck { rows })
}
