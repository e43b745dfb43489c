//! Central finite-difference verification of analytic gradients.

use super::{Parameter, Prng};

/// Which coordinates of each parameter to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// Up to `per_param` distinct coordinates per tensor, chosen by `seed`.
    Sample {
        per_param: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub checked: usize,
    /// Coordinates where the widest step disagreed with the next, so a
    /// narrower step was used.
    pub kinks: usize,
    pub analytic_norm: f64,
    pub fd_norm: f64,
    /// Norm of the rounding bounds of the chosen estimates: discrepancies
    /// below this cannot be resolved by differencing.
    pub fd_noise: f64,
    pub rel_error: f64,
}

impl GradCheckEntry {
    pub fn abs_error(&self) -> f64 {
        self.rel_error * self.analytic_norm.max(self.fd_norm).max(1e-12)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.rel_error < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| e.rel_error >= self.tolerance)
    }
}

/// Central-difference steps, widest first.
pub const FD_STEPS: [f64; 5] = [1e-4, 1e-5, 1e-6, 1e-7, 1e-8];

/// Relative disagreement tolerated between estimates at neighbouring steps,
/// on top of their rounding noise.
const AGREE_REL: f64 = 1e-5;
/// Rounding noise of a central difference at step `h`, in units of
/// `ε·|L| / h`.
const NOISE_ULPS: f64 = 16.0;

struct Estimate {
    slope: f64,
    noise: f64,
}

fn central<F: FnMut(&[Parameter]) -> f64>(
    params: &mut [Parameter],
    pi: usize,
    k: usize,
    h: f64,
    loss: &mut F,
) -> Estimate {
    let original = params[pi].value.data()[k];
    params[pi].value.data_mut()[k] = original + h;
    let plus = loss(params);
    params[pi].value.data_mut()[k] = original - h;
    let minus = loss(params);
    params[pi].value.data_mut()[k] = original;
    Estimate {
        slope: (plus - minus) / (2.0 * h),
        noise: NOISE_ULPS * f64::EPSILON * plus.abs().max(minus.abs()) / h,
    }
}

fn agree(a: &Estimate, b: &Estimate) -> bool {
    (a.slope - b.slope).abs() <= AGREE_REL * a.slope.abs().max(b.slope.abs()) + a.noise + b.noise
}

/// Compares each parameter's stored `grad` with central differences of `loss`.
///
/// Each coordinate is differenced down [`FD_STEPS`] until two neighbouring
/// steps agree, and the wider of that pair is used: wide steps carry the least
/// rounding error, and disagreement means the loss is not smooth within the
/// stencil (typically a ReLU kink nearby). With no agreeing pair the narrowest
/// estimate is used. The choice never looks at the analytic gradient.
///
/// Per parameter the error is `‖g_analytic − g_fd‖ / max(‖g_analytic‖, ‖g_fd‖, 1e-12)`
/// over the checked coordinates. Values are restored afterwards.
pub fn grad_check<F>(params: &mut [Parameter], coords: Coords, tolerance: f64, mut loss: F) -> GradCheckReport
where
    F: FnMut(&[Parameter]) -> f64,
{
    let mut entries = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let n = params[pi].value.len();
        let indices: Vec<usize> = match coords {
            Coords::All => (0..n).collect(),
            Coords::Sample { per_param, seed } => {
                let mut idx: Vec<usize> = (0..n).collect();
                Prng::stream(seed, pi as u64).shuffle(&mut idx);
                idx.truncate(per_param.min(n));
                idx.sort_unstable();
                idx
            }
        };
        let (mut diff2, mut an2, mut fd2, mut noise2) = (0.0, 0.0, 0.0, 0.0);
        let mut kinks = 0;
        for &k in &indices {
            let mut wider = central(params, pi, k, FD_STEPS[0], &mut loss);
            let mut first_pair = true;
            for &h in &FD_STEPS[1..] {
                let narrower = central(params, pi, k, h, &mut loss);
                if agree(&wider, &narrower) {
                    break;
                }
                first_pair = false;
                wider = narrower;
            }
            if !first_pair {
                kinks += 1;
            }
            let an = params[pi].grad.data()[k];
            diff2 += (an - wider.slope) * (an - wider.slope);
            an2 += an * an;
            fd2 += wider.slope * wider.slope;
            noise2 += wider.noise * wider.noise;
        }
        let rel_error = diff2.sqrt() / an2.sqrt().max(fd2.sqrt()).max(1e-12);
        entries.push(GradCheckEntry {
            name: params[pi].name.clone(),
            checked: indices.len(),
            kinks,
            analytic_norm: an2.sqrt(),
            fd_norm: fd2.sqrt(),
            fd_noise: noise2.sqrt(),
            rel_error,
        });
    }
    GradCheckReport { tolerance, entries }
}
