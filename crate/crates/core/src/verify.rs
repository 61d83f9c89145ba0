//! Finite-difference gradient checking over randomly generated networks.

use serde::Serialize;

use crate::error::Result;
use crate::nn::{loss_value, Activation, LayerKind, LayerSpec, LossKind, Network, Padding};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Relative error `|a - n| / max(|a|, |n|, floor)`. The floor keeps
/// gradients that are zero up to rounding from dominating.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub floor: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            floor: 1e-6,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates whose ±step straddled a ReLU kink or a pooling tie.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// `(layer, "kernel" | "bias" | "input", flat index)` of the worst entry.
    pub worst: Option<(usize, &'static str, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// Compare every analytic parameter gradient (and the input gradient when
/// the first layer is not an embedding) with central differences.
pub fn gradient_check(
    net: &Network<f64>,
    x: &Tensor<f64>,
    target: &Tensor<f64>,
    loss: LossKind,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let embedded = matches!(net.layers()[0].spec.kind, LayerKind::Embedding { .. });
    let (_, grads) = net.loss_gradients(x, target, loss, !embedded)?;
    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let mut probe = net.clone();
    let eval = |n: &Network<f64>, x: &Tensor<f64>| -> Result<(f64, Vec<usize>)> {
        let trace = n.forward_trace(x)?;
        Ok((loss_value(trace.logits(), target, loss)?, trace.branch_pattern(n)))
    };
    let mut record = |analytic: f64, plus: (f64, Vec<usize>), minus: (f64, Vec<usize>), at| {
        if plus.1 != minus.1 {
            report.skipped += 1;
            return;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * cfg.step);
        let err = relative_error(analytic, numeric, cfg.floor);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some(at);
        }
    };
    for (li, g) in grads.layers.iter().enumerate() {
        for (which, grad) in [("kernel", &g.kernel), ("bias", &g.bias)] {
            let Some(grad) = grad else { continue };
            // A frozen padding row is a constant, not a parameter.
            let frozen = match net.layers()[li].spec.kind {
                LayerKind::Embedding { dim, freeze_padding: true, .. } => dim,
                _ => 0,
            };
            for j in frozen..grad.len() {
                let orig = *param(&mut probe, li, which, j);
                *param(&mut probe, li, which, j) = orig + cfg.step;
                let plus = eval(&probe, x)?;
                *param(&mut probe, li, which, j) = orig - cfg.step;
                let minus = eval(&probe, x)?;
                *param(&mut probe, li, which, j) = orig;
                record(grad.data()[j], plus, minus, (li, which, j));
            }
        }
    }
    if let Some(gx) = &grads.input {
        let mut xp = x.clone();
        for j in 0..gx.len() {
            let orig = xp.data()[j];
            xp.data_mut()[j] = orig + cfg.step;
            let plus = eval(net, &xp)?;
            xp.data_mut()[j] = orig - cfg.step;
            let minus = eval(net, &xp)?;
            xp.data_mut()[j] = orig;
            record(gx.data()[j], plus, minus, (0, "input", j));
        }
    }
    Ok(report)
}

fn param<'a>(n: &'a mut Network<f64>, li: usize, which: &str, j: usize) -> &'a mut f64 {
    let layer = &mut n.layers_mut()[li];
    let t = if which == "kernel" { &mut layer.kernel } else { &mut layer.bias };
    &mut t.as_mut().expect("gradient implies parameter").data_mut()[j]
}

/// A small random network with a matching random batch and target.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub net: Network<f64>,
    pub x: Tensor<f64>,
    pub target: Tensor<f64>,
    pub loss: LossKind,
}

pub const MAX_CASE_PARAMS: usize = 10_000;

fn pick<T: Copy>(rng: &mut Rng, items: &[T]) -> T {
    items[rng.below(items.len())]
}

fn range(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn uniform_tensor(rng: &mut Rng, dims: Vec<usize>, lo: f64, hi: f64) -> Result<Tensor<f64>> {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.uniform(lo, hi)).collect())
}

/// Draw a dense, convolutional or embedding network of at most
/// [`MAX_CASE_PARAMS`] parameters with a batch of 1 to 8 samples.
pub fn random_case(rng: &mut Rng) -> Result<GradCase> {
    loop {
        let case = draw_case(rng)?;
        if case.net.param_count() <= MAX_CASE_PARAMS {
            return Ok(case);
        }
    }
}

fn draw_case(rng: &mut Rng) -> Result<GradCase> {
    let batch = range(rng, 1, 8);
    let hidden_act = || [Activation::Relu, Activation::Identity];
    let mut specs = Vec::new();
    let (input, x) = match rng.below(3) {
        0 => {
            let d = range(rng, 1, 12);
            for _ in 0..range(rng, 0, 2) {
                specs.push(LayerSpec::dense(range(rng, 1, 16), pick(rng, &hidden_act())));
            }
            (vec![d], uniform_tensor(rng, vec![batch, d], -1.0, 1.0)?)
        }
        1 => {
            let (h, w, c) = (range(rng, 4, 8), range(rng, 4, 8), range(rng, 1, 3));
            let size = [range(rng, 1, 3), range(rng, 1, 3)];
            let padding = pick(rng, &[Padding::Valid, Padding::Same]);
            specs.push(LayerSpec::conv2d(range(rng, 1, 4), size, padding, pick(rng, &hidden_act())));
            if rng.below(2) == 0 {
                specs.push(LayerSpec::maxpool());
            }
            if rng.below(2) == 0 {
                specs.push(LayerSpec::conv2d(range(rng, 1, 3), [range(rng, 1, 2), range(rng, 1, 2)], Padding::Same, pick(rng, &hidden_act())));
            }
            specs.push(LayerSpec::flatten());
            (vec![h, w, c], uniform_tensor(rng, vec![batch, h, w, c], -1.0, 1.0)?)
        }
        _ => {
            let (vocab, dim, len) = (range(rng, 3, 30), range(rng, 1, 4), range(rng, 2, 6));
            let mut emb = LayerSpec::embedding(vocab, dim);
            if let LayerKind::Embedding { freeze_padding, .. } = &mut emb.kind {
                *freeze_padding = rng.below(2) == 0;
            }
            specs.push(emb);
            specs.push(LayerSpec::flatten());
            if rng.below(2) == 0 {
                specs.push(LayerSpec::dense(range(rng, 1, 8), pick(rng, &hidden_act())));
            }
            let ids = (0..batch * len).map(|_| rng.below(vocab) as f64).collect();
            (vec![len], Tensor::new(vec![batch, len], ids)?)
        }
    };
    let loss = pick(
        rng,
        &[LossKind::MeanSquaredError, LossKind::CategoricalCrossEntropy, LossKind::BinaryCrossEntropy],
    );
    let classes = range(rng, if loss == LossKind::CategoricalCrossEntropy { 2 } else { 1 }, 5);
    let out_act = if loss == LossKind::CategoricalCrossEntropy {
        Activation::Softmax
    } else {
        Activation::Identity
    };
    specs.push(LayerSpec::dense(classes, out_act));
    let mut net = Network::init(&specs, &input, rng)?;
    // Non-zero biases so that no unit starts exactly at a kink.
    for layer in net.layers_mut() {
        if let Some(b) = layer.bias.as_mut() {
            b.data_mut().iter_mut().for_each(|v| *v = rng.uniform(-0.1, 0.1));
        }
    }
    let target = match loss {
        LossKind::CategoricalCrossEntropy => {
            Tensor::new(vec![batch], (0..batch).map(|_| rng.below(classes) as f64).collect())?
        }
        LossKind::BinaryCrossEntropy => Tensor::new(
            vec![batch, classes],
            (0..batch * classes).map(|_| rng.below(2) as f64).collect(),
        )?,
        LossKind::MeanSquaredError => uniform_tensor(rng, vec![batch, classes], -1.0, 1.0)?,
    };
    Ok(GradCase { net, x, target, loss })
}

/// Run `count` random cases from `seed` and merge their reports.
pub fn gradient_suite(seed: u64, count: usize, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut total = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for i in 0..count {
        let mut rng = Rng::new(seed).derive(i as u64);
        let case = random_case(&mut rng)?;
        let r = gradient_check(&case.net, &case.x, &case.target, case.loss, cfg)?;
        log::debug!("grad case {i}: {} checked, max rel {:.2e}", r.checked, r.max_rel_error);
        total.merge(&r);
    }
    Ok(total)
}
