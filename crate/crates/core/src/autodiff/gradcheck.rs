//! Finite-difference verification of the reverse-mode gradients, always in
//! f64 to keep the central-difference truncation error below the tolerance.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BoundParams, Graph, ParamSet, Scalar, Tid};
use crate::error::Result;

const FD_STEP: f64 = 1e-5;
/// Below this, both analytic and numeric values are treated as zero and the
/// relative error is not formed. Central differences carry an absolute
/// rounding noise of roughly `eps * |loss| / (2 * FD_STEP)` (~1e-10 for
/// typical losses), so on coordinates this small the quotient would measure
/// that noise rather than the gradient.
const ABS_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Coordinates actually compared.
    pub checked: usize,
    pub max_rel_err: f64,
    /// `name[flat_index]` of the worst coordinate.
    pub worst_param: String,
    /// Coordinates whose relative error exceeded the tolerance.
    pub failures: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn rel_err(analytic: f64, numeric: f64) -> Option<f64> {
    if analytic.abs() < ABS_FLOOR && numeric.abs() < ABS_FLOOR {
        return None;
    }
    Some((analytic - numeric).abs() / analytic.abs().max(numeric.abs()))
}

/// Sampled coordinates: at least one per tensor, remainder uniform without
/// replacement across all scalars.
fn sample_coords<F: Scalar>(
    params: &ParamSet<F>,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let mut coords: Vec<(usize, usize)> = Vec::new();
    let mut all: Vec<(usize, usize)> = Vec::new();
    for (i, e) in params.entries().iter().enumerate() {
        coords.push((i, rng.gen_range(0..e.data.len())));
        all.extend((0..e.data.len()).map(|j| (i, j)));
    }
    all.shuffle(rng);
    coords.extend(all.into_iter().take(n_samples.saturating_sub(coords.len())));
    coords.sort_unstable();
    coords.dedup();
    coords
}

/// Compares a supplied per-entry gradient against central differences of
/// `loss`, which must be a pure deterministic function of the parameters.
/// `analytic[i][j]` pairs with flat coordinate `j` of entry `i`.
pub fn compare_to_finite_differences<F, L>(
    params: &ParamSet<F>,
    analytic: &[Vec<f64>],
    mut loss: L,
    n_samples: usize,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Scalar,
    L: FnMut(&ParamSet<F>) -> Result<f64>,
{
    assert_eq!(analytic.len(), params.len(), "gradient/param layout mismatch");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = sample_coords(params, n_samples, &mut rng);

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst_param: String::new(),
        failures: 0,
        tolerance,
    };
    let mut work = params.clone();
    for (i, j) in coords {
        let orig = work.entries()[i].data[j];
        work.entries_mut()[i].data[j] = F::of(orig.to_f64() + FD_STEP);
        let up = loss(&work)?;
        work.entries_mut()[i].data[j] = F::of(orig.to_f64() - FD_STEP);
        let down = loss(&work)?;
        work.entries_mut()[i].data[j] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let Some(err) = rel_err(analytic[i][j], numeric) else {
            continue;
        };
        report.checked += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_param = format!("{}[{}]", params.entries()[i].name, j);
        }
        if err > tolerance {
            report.failures += 1;
        }
    }
    Ok(report)
}

/// Full check: the closure builds a loss on a fresh tape given bound
/// parameters; the analytic gradient is taken from that tape's backward pass
/// and compared against central differences of the same construction.
pub fn finite_difference_check<F, B>(
    params: &ParamSet<F>,
    mut build: B,
    n_samples: usize,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Scalar,
    B: FnMut(&mut Graph<F>, &BoundParams) -> Result<Tid>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut g: Graph<F> = Graph::eval();
        let bound = params.bind(&mut g);
        let loss = build(&mut g, &bound)?;
        let grads = g.backward(loss)?;
        bound
            .ordered()
            .iter()
            .map(|&t| grads.of(t).iter().map(|v| v.to_f64()).collect())
            .collect()
    };
    compare_to_finite_differences(
        params,
        &analytic,
        move |p| {
            let mut g: Graph<F> = Graph::eval();
            let bound = p.bind(&mut g);
            let loss = build(&mut g, &bound)?;
            Ok(g.scalar_value(loss).to_f64())
        },
        n_samples,
        tolerance,
        seed,
    )
}
