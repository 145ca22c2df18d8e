//! Oracle suite shared by the `verify` command and the test targets.
//!
//! Every check compares the pipeline against an independent reference:
//! a direct DFT, the closed form `cos(t1) cos(t2)`, central differences,
//! and brute-force confusion counts.

use std::f64::consts::PI;
use std::fmt;
use std::time::Instant;

use num_complex::Complex64;

use crate::dataset::AnswerVocabulary;
use crate::embeddings::{hash_embed, init_answer_table, AnswerEmbeddingTable};
use crate::error::Result;
use crate::evaluation::metrics::{self, Cell};
use crate::fusion::{self, FusionParams};
use crate::model::{forward, init_params, Example, ForwardOptions, ModelConfig, OpinionXfParams};
use crate::numerics::{fft, grad_check, ifft, GradCheckReport, Graph, Tensor};
use crate::quantum;
use crate::rng::SeededRng;
use crate::training::loss_on_graph;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{status}  {:<26} {}", self.name, self.detail)
    }
}

/// Largest deviation of the circuit from `cos(t1) cos(t2)` on an `n x n`
/// grid over `[0, 2 pi]`.
pub fn quantum_grid_error(n: usize) -> f64 {
    let step = 2.0 * PI / (n - 1) as f64;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let (t1, t2) = (i as f64 * step, j as f64 * step);
            let e = quantum::circuit_expectation(t1, t2);
            worst = worst.max((e - t1.cos() * t2.cos()).abs());
        }
    }
    worst
}

/// Textbook `O(d^2)` DFT, kept independent of the library transform.
pub fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, &v)| {
                    let angle = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
                    Complex64::from_polar(v, angle)
                })
                .sum()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FftErrors {
    pub vs_dft: f64,
    pub round_trip: f64,
    pub parseval: f64,
}

/// Worst errors over `trials` random vectors for each length in `dims`.
/// Parseval is compared relative to the signal energy.
pub fn fft_oracle_errors(dims: &[usize], trials: usize, seed: u64) -> Result<FftErrors> {
    let mut rng = SeededRng::derived(seed, "fft-oracle");
    let mut out = FftErrors::default();
    for &d in dims {
        for _ in 0..trials {
            let x: Vec<f64> = (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let spec = fft(&x);
            let reference = naive_dft(&x);
            for (a, b) in spec.iter().zip(&reference) {
                out.vs_dft = out.vs_dft.max((a - b).norm());
            }
            let back = ifft(&spec)?;
            for (a, b) in x.iter().zip(&back) {
                out.round_trip = out.round_trip.max((a - b).abs());
            }
            let time: f64 = x.iter().map(|v| v * v).sum();
            let freq: f64 = spec.iter().map(|z| z.norm_sqr()).sum::<f64>() / d as f64;
            out.parseval = out.parseval.max((time - freq).abs() / time.max(1.0));
        }
    }
    Ok(out)
}

/// Tiny model used by the gradient checks: `d_model = 8`, two questions,
/// one layer, one head, `K = 2`.
pub fn tiny_setup(use_fusion: bool, use_quantum: bool) -> Result<(OpinionXfParams, Vec<Example>)> {
    let config = ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 1,
        vocab_sizes: vec![3, 2],
        embedding_dim: 8,
        use_fusion,
        use_quantum,
        use_contrastive: use_fusion,
        fusion_bands: Some(2),
        ..ModelConfig::default()
    };
    let vocab = AnswerVocabulary::from_answers(vec![
        vec!["agree".into(), "disagree".into(), "neutral".into()],
        vec!["no".into(), "yes".into()],
    ])?;
    let table: AnswerEmbeddingTable = init_answer_table(&vocab, |_, s| hash_embed(s, 8))?;
    let params = init_params(&config, &table, 11)?;
    let mut rng = SeededRng::derived(11, "tiny-examples");
    let examples = (0..3)
        .map(|i| Example {
            pre_ids: vec![i % 3, i % 2],
            post_ids: vec![(i + 1) % 3, (i + 1) % 2],
            deck: (0..8).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
            topic: "tiny".into(),
        })
        .collect();
    Ok((params, examples))
}

fn loss_and_grads(
    params: &OpinionXfParams,
    examples: &[Example],
    lambda: f64,
    pinned: Option<&[f64]>,
) -> Result<(f64, Vec<Tensor>, Option<Vec<f64>>)> {
    let refs: Vec<&Example> = examples.iter().collect();
    let mut g = Graph::new();
    let pass = forward(
        &mut g,
        params,
        &refs,
        ForwardOptions {
            dropout_rng: None,
            pinned_quantum: pinned,
        },
    )?;
    let root = loss_on_graph(&mut g, params, &pass, &refs, lambda, refs.len() as f64)?;
    let grads = g.backward(root).params(&g, &params.shapes());
    Ok((g.value(root).item(), grads, pass.quantum_expectations))
}

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Reverse-mode gradients of the total loss (alignment weight `lambda`)
/// against central differences for every trainable tensor. Circuit
/// expectations are held at their unperturbed values, matching the
/// stop-gradient the model applies to the angles.
pub fn model_grad_check(use_fusion: bool, use_quantum: bool, lambda: f64) -> Result<GradCheckReport> {
    let (params, examples) = tiny_setup(use_fusion, use_quantum)?;
    let (_, grads, pinned) = loss_and_grads(&params, &examples, lambda, None)?;
    let mask = params.trainable_mask();
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let names: Vec<String> = idx.iter().map(|&i| params.names()[i].clone()).collect();
    let values: Vec<Tensor> = idx.iter().map(|&i| params.tensors()[i].clone()).collect();
    let analytic: Vec<Tensor> = idx.iter().map(|&i| grads[i].clone()).collect();
    let objective = |moved: &[Tensor]| -> Result<f64> {
        let mut p = params.clone();
        for (&i, t) in idx.iter().zip(moved) {
            p.tensors_mut()[i] = t.clone();
        }
        Ok(loss_and_grads(&p, &examples, lambda, pinned.as_deref())?.0)
    };
    grad_check(objective, &names, &values, &analytic, GRAD_EPS, GRAD_TOLERANCE)
}

/// Largest difference between gradients computed with live circuit
/// expectations and with the same expectations supplied as constants.
/// Zero means nothing flows back through the angles.
pub fn quantum_angle_gradient_leak() -> Result<f64> {
    let (params, examples) = tiny_setup(true, true)?;
    let (_, live, e) = loss_and_grads(&params, &examples, 1.0, None)?;
    let e = e.expect("quantum variant reports expectations");
    let (_, pinned, _) = loss_and_grads(&params, &examples, 1.0, Some(&e))?;
    Ok(live
        .iter()
        .zip(&pinned)
        .map(|(a, b)| a.max_abs_diff(b))
        .fold(0.0, f64::max))
}

/// Fuse a token whose low bands are large enough that GELU and softplus
/// act as the identity, with the band MLP wired to copy the presentation
/// magnitudes. Returns the largest coordinate change.
pub fn fusion_identity_error(d: usize, bands: usize, seed: u64) -> Result<f64> {
    let mut rng = SeededRng::derived(seed, "fusion-identity");
    let mut spectrum = vec![Complex64::new(0.0, 0.0); d];
    spectrum[0] = Complex64::new(rng.uniform_in(30.0, 60.0), 0.0);
    for k in 1..=d / 2 {
        let mag = if k < bands {
            rng.uniform_in(30.0, 60.0)
        } else {
            rng.uniform_in(0.0, 2.0)
        };
        let phase = if k == d / 2 { 0.0 } else { rng.uniform_in(-PI, PI) };
        spectrum[k] = Complex64::from_polar(mag, phase);
        spectrum[d - k] = spectrum[k].conj();
    }
    let p = ifft(&spectrum)?;
    let q: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
        .collect();
    let mut params = FusionParams::zeros(bands);
    for i in 0..2 * bands {
        params.w1.set(i, i, 1.0);
    }
    for k in 0..bands {
        params.w2.set(k, k, 1.0);
    }
    let (fused, _) = fusion::fuse(&p, &q, &params)?;
    Ok(p.iter().zip(&fused).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Macro-F1 and accuracy from explicit per-question confusion matrices.
pub fn brute_force_metrics(preds: &[Cell], targets: &[Cell], classes: usize) -> (f64, f64) {
    let questions = targets.iter().map(|c| c.0).max().map_or(0, |q| q + 1);
    let mut f1_sum = 0.0;
    for q in 0..questions {
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (p, t) in preds.iter().zip(targets).filter(|(p, _)| p.0 == q) {
            confusion[t.1][p.1] += 1;
        }
        let mut f1s = Vec::new();
        for c in 0..classes {
            let tp = confusion[c][c];
            let predicted: usize = (0..classes).map(|t| confusion[t][c]).sum();
            let actual: usize = confusion[c].iter().sum();
            if predicted == 0 && actual == 0 {
                continue;
            }
            let p = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
            let r = if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
            f1s.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        }
        f1_sum += f1s.iter().sum::<f64>() / f1s.len() as f64;
    }
    let correct = preds.iter().zip(targets).filter(|(p, t)| p == t).count();
    (f1_sum / questions as f64, correct as f64 / preds.len() as f64)
}

/// Random fixtures of at most 50 cells: worst absolute disagreement
/// between the library metrics and [`brute_force_metrics`].
pub fn metric_fixture_error(fixtures: usize, seed: u64) -> Result<f64> {
    let mut rng = SeededRng::derived(seed, "metric-fixtures");
    let mut worst = 0.0f64;
    for _ in 0..fixtures {
        let questions = 1 + rng.below(3);
        let classes = 2 + rng.below(3);
        let per_q = 1 + rng.below(50 / questions);
        let mut preds = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..per_q {
            for q in 0..questions {
                preds.push((q, rng.below(classes)));
                targets.push((q, rng.below(classes)));
            }
        }
        let (f1, acc) = brute_force_metrics(&preds, &targets, classes);
        worst = worst
            .max((metrics::macro_f1(&preds, &targets)? - f1).abs())
            .max((metrics::micro_accuracy(&preds, &targets)? - acc).abs());
    }
    Ok(worst)
}

fn check_result(name: &str, r: Result<(bool, String)>) -> Check {
    match r {
        Ok((pass, detail)) => Check::new(name, pass, detail),
        Err(e) => Check::new(name, false, format!("error: {e}")),
    }
}

/// Run every oracle; the suite passes when all checks pass.
pub fn run_suite() -> Vec<Check> {
    let mut checks = Vec::new();

    let t = Instant::now();
    let err = quantum_grid_error(21);
    checks.push(Check::new(
        "quantum closed form",
        err <= 1e-12,
        format!("21x21 grid, max error {err:.2e} in {:.3}s", t.elapsed().as_secs_f64()),
    ));

    checks.push(check_result(
        "fft oracle",
        fft_oracle_errors(&[4, 8, 16, 128], 100, 7).map(|e| {
            (
                e.vs_dft <= 1e-10 && e.round_trip <= 1e-9 && e.parseval <= 1e-9,
                format!(
                    "dft {:.1e}, round trip {:.1e}, parseval {:.1e}",
                    e.vs_dft, e.round_trip, e.parseval
                ),
            )
        }),
    ));

    for (name, fusion, quantum) in [
        ("grad check base", false, false),
        ("grad check fusion", true, false),
        ("grad check quantum", true, true),
    ] {
        checks.push(check_result(
            name,
            model_grad_check(fusion, quantum, 1.0).map(|r| {
                (r.pass, format!("max rel error {:.2e} over {} tensors", r.max_error(), r.per_param.len()))
            }),
        ));
    }

    checks.push(check_result(
        "quantum angle gradient",
        quantum_angle_gradient_leak().map(|d| (d == 0.0, format!("max difference {d:e}"))),
    ));

    checks.push(check_result(
        "fusion identity",
        fusion_identity_error(16, 4, 5).map(|e| (e <= 1e-9, format!("max change {e:.2e}"))),
    ));

    let hand = metrics::macro_f1(&[(0, 0), (0, 0), (0, 1)], &[(0, 0), (0, 1), (0, 1)]);
    checks.push(check_result(
        "metric hand fixture",
        hand.map(|v| (v == 2.0 / 3.0, format!("macro-F1 {v}"))),
    ));
    checks.push(check_result(
        "metric brute force",
        metric_fixture_error(50, 3).map(|e| (e == 0.0, format!("50 fixtures, max diff {e:e}"))),
    ));
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let checks = run_suite();
        for c in &checks {
            assert!(c.pass, "{c}");
        }
    }
}
