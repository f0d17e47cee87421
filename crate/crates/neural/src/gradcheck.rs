//! Central-difference gradient checking against analytic gradients.

use rand::seq::index::sample;

use crate::optim::{GradMap, ParamSet};
use crate::rng::named_stream;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Cap on probed coordinates per parameter; the rest are sampled.
    pub max_coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_coords_per_param: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_coord: usize,
    pub coords_checked: usize,
}

/// Compare `analytic` gradients of the scalar function `f` against
/// central differences. Relative error per coordinate is
/// |a − n| / max(1e-8, |a| + |n|); the report carries the worst one.
/// Non-finite analytic or numeric values abort: a gradient check that
/// silently skips NaNs checks nothing.
pub fn grad_check(
    mut f: impl FnMut(&ParamSet) -> f64,
    params: &ParamSet,
    analytic: &GradMap,
    opts: &GradCheckOptions,
) -> GradCheckReport {
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_coord: 0,
        coords_checked: 0,
    };

    for (name, grads) in analytic {
        let numel = params.get(name).numel();
        assert_eq!(grads.len(), numel, "analytic gradient shape mismatch for {name:?}");
        let coords: Vec<usize> = if numel <= opts.max_coords_per_param {
            (0..numel).collect()
        } else {
            let mut rng = named_stream(opts.seed, &format!("gradcheck.{name}"));
            let mut picked = sample(&mut rng, numel, opts.max_coords_per_param).into_vec();
            picked.sort_unstable();
            picked
        };

        for coord in coords {
            let original = params.get(name).data[coord];
            work.get_mut(name).data[coord] = original + opts.step;
            let plus = f(&work);
            work.get_mut(name).data[coord] = original - opts.step;
            let minus = f(&work);
            work.get_mut(name).data[coord] = original;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = grads[coord];
            assert!(
                a.is_finite() && numeric.is_finite(),
                "non-finite gradient at {name:?}[{coord}]: analytic {a}, numeric {numeric}"
            );
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_coord = coord;
            }
        }
    }
    report
}
