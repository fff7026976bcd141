//! Central finite-difference checks of analytic gradients.

use crate::error::Result;
use crate::numerics::store::{Gradients, ParamId, ParamStore};

/// Default finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Magnitudes below this, times `max(1, |loss|)`, are compared on an absolute
/// scale, so rounding noise in near-zero gradients does not register as a
/// large relative error. The loss factor tracks finite-difference roundoff,
/// which grows with the loss value.
pub const DEFAULT_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Worst probe for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub name: String,
    pub probes: usize,
    pub worst: Probe,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub params: Vec<ParamReport>,
}

impl Report {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.worst.rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.params.iter().all(|p| p.worst.rel_error <= tolerance)
    }

    pub fn failures(&self, tolerance: f64) -> impl Iterator<Item = &ParamReport> {
        self.params.iter().filter(move |p| p.worst.rel_error > tolerance)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Options {
    pub step: f64,
    pub floor: f64,
    /// Probe at most this many entries per parameter, evenly spaced.
    pub max_probes: Option<usize>,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            floor: DEFAULT_FLOOR,
            max_probes: None,
        }
    }
}

/// Compares `analytic` with central differences of `loss` for every
/// trainable parameter. `store` is perturbed in place and restored.
pub fn check<F>(store: &mut ParamStore, analytic: &Gradients, mut loss: F, opts: Options) -> Result<Report>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.param(id).trainable).collect();
    let floor = opts.floor * loss(store)?.abs().max(1.0);
    let mut report = Report::default();
    for id in ids {
        let g = analytic.dense(store, id);
        let n = g.len();
        if n == 0 {
            continue;
        }
        let stride = opts.max_probes.map_or(1, |m| n.div_ceil(m.max(1)));
        let mut worst: Option<Probe> = None;
        let mut probes = 0;
        for index in (0..n).step_by(stride) {
            let orig = store.value(id).data()[index];
            store.value_mut(id).data_mut()[index] = orig + opts.step;
            let up = loss(store);
            store.value_mut(id).data_mut()[index] = orig - opts.step;
            let down = loss(store);
            store.value_mut(id).data_mut()[index] = orig;
            let numeric = (up? - down?) / (2.0 * opts.step);
            let analytic = g.data()[index];
            let rel_error = relative_error(analytic, numeric, floor);
            probes += 1;
            if worst.as_ref().is_none_or(|w| rel_error > w.rel_error) {
                worst = Some(Probe {
                    index,
                    analytic,
                    numeric,
                    rel_error,
                });
            }
        }
        report.params.push(ParamReport {
            name: store.param(id).name.clone(),
            probes,
            worst: worst.expect("at least one probe"),
        });
    }
    Ok(report)
}
