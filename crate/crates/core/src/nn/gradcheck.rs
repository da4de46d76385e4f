use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Network, SeqBatch};
use crate::error::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Parameter coordinates to probe (all of them if the network is smaller).
    pub coordinates: usize,
    pub step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { coordinates: 200, step: 1e-5, floor: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub parameters_checked: usize,
    pub inputs_checked: usize,
}

fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares analytic gradients of `loss(network(input))` against central
/// differences, over a random subset of parameters and every input coordinate.
/// `loss` maps the network output to the loss value and its output gradient.
pub fn grad_check(
    net: &mut Network,
    input: &SeqBatch,
    loss: impl Fn(&SeqBatch) -> (f64, SeqBatch),
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NnError> {
    net.zero_grad();
    let (out, cache) = net.forward(input, None)?;
    let (_, d_out) = loss(&out);
    let d_in = net.backward(&cache, &d_out)?;
    let analytic: Vec<f64> = net.blocks().iter().flat_map(|(_, p)| p.grad.iter().copied()).collect();
    let sizes: Vec<usize> = net.blocks().iter().map(|(_, p)| p.value.len()).collect();

    let eval = |net: &Network, x: &SeqBatch| -> Result<f64, NnError> { Ok(loss(&net.forward(x, None)?.0).0) };
    let h = opts.step;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let total = analytic.len();
    let picks = sample(&mut rng, total, opts.coordinates.min(total)).into_vec();
    let mut worst: f64 = 0.0;
    for &flat in &picks {
        let (mut block, mut idx) = (0, flat);
        while idx >= sizes[block] {
            idx -= sizes[block];
            block += 1;
        }
        let original = net.blocks()[block].1.value[idx];
        net.blocks_mut()[block].1.value[idx] = original + h;
        let plus = eval(net, input)?;
        net.blocks_mut()[block].1.value[idx] = original - h;
        let minus = eval(net, input)?;
        net.blocks_mut()[block].1.value[idx] = original;
        worst = worst.max(rel_error(analytic[flat], (plus - minus) / (2.0 * h), opts.floor));
    }
    let mut x = input.clone();
    for i in 0..x.data.len() {
        let original = x.data[i];
        x.data[i] = original + h;
        let plus = eval(net, &x)?;
        x.data[i] = original - h;
        let minus = eval(net, &x)?;
        x.data[i] = original;
        worst = worst.max(rel_error(d_in.data[i], (plus - minus) / (2.0 * h), opts.floor));
    }
    net.zero_grad();
    Ok(GradCheckReport { max_rel_error: worst, parameters_checked: picks.len(), inputs_checked: x.data.len() })
}
