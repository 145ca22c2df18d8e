//! Frequency-spectrum fusion of the presentation token with the mean
//! question token.
//!
//! The lowest `K` frequency bins of both signals are reduced to magnitudes,
//! a small MLP produces `K` new non-negative magnitudes, and those replace
//! the presentation spectrum's magnitudes while keeping its phases. Bins at
//! and above `K` pass through, and the bins mirrored at `d - k` are set to
//! the conjugates so the inverse transform stays real.
//!
//! The reverse-mode adjoints are derived in `docs/fusion_gradients.md`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::fft::{fft, ifft};
use crate::numerics::graph::{CustomOp, Graph, Var};
use crate::numerics::{ops, Tensor};

/// Magnitudes below this have no defined phase; the phase is taken as 0.
const PHASE_FLOOR: f64 = 1e-300;

/// Band MLP: `2K -> 2K (GELU) -> K (softplus)`, row-vector convention.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub bands: usize,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl FusionParams {
    pub fn zeros(bands: usize) -> Self {
        Self {
            bands,
            w1: Tensor::zeros(2 * bands, 2 * bands),
            b1: Tensor::zeros(1, 2 * bands),
            w2: Tensor::zeros(2 * bands, bands),
            b2: Tensor::zeros(1, bands),
        }
    }

    pub fn check(&self, d_model: usize) -> Result<()> {
        check_bands(self.bands, d_model)?;
        let k = self.bands;
        let shapes = [
            (self.w1.shape(), [2 * k, 2 * k]),
            (self.b1.shape(), [1, 2 * k]),
            (self.w2.shape(), [2 * k, k]),
            (self.b2.shape(), [1, k]),
        ];
        if shapes.iter().any(|(a, b)| a != b) {
            return Err(Error::Config(format!("band MLP shapes do not match K={k}")));
        }
        Ok(())
    }

    /// Evaluate the band MLP on one `2K` input.
    pub fn compress(&self, input: &[f64]) -> Vec<f64> {
        let x = Tensor::row_vector(input);
        let mut h = x.matmul(&self.w1);
        h.add_assign(&self.b1);
        let h = h.map(ops::gelu);
        let mut o = h.matmul(&self.w2);
        o.add_assign(&self.b2);
        o.map(ops::softplus).into_data()
    }
}

pub fn check_bands(bands: usize, d_model: usize) -> Result<()> {
    if !d_model.is_power_of_two() {
        return Err(Error::Config(format!(
            "fusion needs a power-of-two d_model, got {d_model}"
        )));
    }
    if bands == 0 || bands > d_model / 2 {
        return Err(Error::Config(format!(
            "fusion bands K={bands} outside 1..={} (disable fusion instead of K=0)",
            d_model / 2
        )));
    }
    Ok(())
}

/// `|X_k|` for `k < bands`.
pub fn band_magnitudes(x: &[f64], bands: usize) -> Vec<f64> {
    fft(x)[..bands].iter().map(|z| z.norm()).collect()
}

fn unit_phase(z: Complex64) -> Complex64 {
    let r = z.norm();
    if r < PHASE_FLOOR {
        Complex64::new(1.0, 0.0)
    } else {
        z / r
    }
}

/// Spectrum of `p` with bins `k < K` set to `m_k` times the original phase
/// and mirrored to `d - k`, inverse-transformed.
pub fn reconstruct(p: &[f64], magnitudes: &[f64]) -> Result<Vec<f64>> {
    let d = p.len();
    let mut spec = fft(p);
    for (k, &m) in magnitudes.iter().enumerate() {
        let f = if k == 0 {
            // DC of a real signal is real; keep it exactly real.
            let sign = if spec[0].re < 0.0 { -1.0 } else { 1.0 };
            Complex64::new(sign * m, 0.0)
        } else {
            unit_phase(spec[k]) * m
        };
        spec[k] = f;
        if k != 0 && d - k != k {
            spec[d - k] = f.conj();
        }
    }
    ifft(&spec)
}

/// Fuse one presentation token with its question tokens.
///
/// Returns the fused presentation token and the question tokens with the
/// fused token added to each.
pub fn fuse(
    p: &[f64],
    q_tokens: &[Vec<f64>],
    params: &FusionParams,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    params.check(p.len())?;
    let q_mean = mean_rows(q_tokens, p.len())?;
    let mut input = band_magnitudes(p, params.bands);
    input.extend(band_magnitudes(&q_mean, params.bands));
    let m = params.compress(&input);
    let fused = reconstruct(p, &m)?;
    let augmented = q_tokens
        .iter()
        .map(|q| q.iter().zip(&fused).map(|(a, b)| a + b).collect())
        .collect();
    Ok((fused, augmented))
}

/// `(u, v)` = (fused token, mean of the fused-augmented question tokens).
pub fn fusion_summaries(fused_p: &[f64], q_tokens: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mean = mean_rows(q_tokens, fused_p.len())?;
    let v = mean.iter().zip(fused_p).map(|(a, b)| a + b).collect();
    Ok((fused_p.to_vec(), v))
}

fn mean_rows(rows: &[Vec<f64>], width: usize) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no question tokens".into()));
    }
    let mut mean = vec![0.0; width];
    for r in rows {
        if r.len() != width {
            return Err(Error::Numeric("question token width mismatch".into()));
        }
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    let n = rows.len() as f64;
    Ok(mean.into_iter().map(|m| m / n).collect())
}

fn cos_sin(k: usize, n: usize, d: usize) -> (f64, f64) {
    let angle = 2.0 * PI * ((k * n) % d) as f64 / d as f64;
    (angle.cos(), angle.sin())
}

/// Row-wise `band_magnitudes` on the tape.
struct BandMagnitudes {
    bands: usize,
}

impl CustomOp for BandMagnitudes {
    fn name(&self) -> &'static str {
        "band_magnitudes"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let x = inputs[0];
        let d = x.cols();
        let mut gx = Tensor::zeros(x.rows(), d);
        for r in 0..x.rows() {
            let spec = fft(x.row(r));
            let out = gx.row_mut(r);
            for k in 0..self.bands {
                let z = spec[k];
                let mag = z.norm();
                if mag < PHASE_FLOOR {
                    continue;
                }
                let g = grad.get(r, k);
                for (n, o) in out.iter_mut().enumerate() {
                    let (c, s) = cos_sin(k, n, d);
                    *o += g * (z.re * c - z.im * s) / mag;
                }
            }
        }
        vec![gx]
    }
}

/// Row-wise `reconstruct(p, m)` on the tape.
struct SpectralReconstruct {
    bands: usize,
}

impl CustomOp for SpectralReconstruct {
    fn name(&self) -> &'static str {
        "spectral_reconstruct"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let (p, m) = (inputs[0], inputs[1]);
        let d = p.cols();
        let mut gp = grad.clone();
        let mut gm = Tensor::zeros(m.rows(), m.cols());
        for r in 0..p.rows() {
            let spec = fft(p.row(r));
            let g = grad.row(r);
            let gspec = fft(g);
            for k in 0..self.bands {
                let weight = if k == 0 { 1.0 } else { 2.0 } / d as f64;
                // Z_k = sum_n g[n] e^{+i theta_k n}
                let z = gspec[k].conj();
                let u = unit_phase(spec[k]);
                gm.set(r, k, weight * (u * z).re);
                // Adjoint of the high-pass part p - lowpass(p).
                for (n, o) in gp.row_mut(r).iter_mut().enumerate() {
                    let (c, s) = cos_sin(k, n, d);
                    *o -= weight * (gspec[k].re * c - gspec[k].im * s);
                }
                // Phase dependence on p, through u = P / |P|.
                let mag = spec[k].norm();
                if k == 0 || mag < PHASE_FLOOR {
                    continue;
                }
                let (a, b) = (spec[k].re, spec[k].im);
                let h = (a * z.re - b * z.im) / mag;
                let da = z.re / mag - a * h / (mag * mag);
                let db = -z.im / mag - b * h / (mag * mag);
                let scale = weight * m.get(r, k);
                for (n, o) in gp.row_mut(r).iter_mut().enumerate() {
                    let (c, s) = cos_sin(k, n, d);
                    *o += scale * (da * c - db * s);
                }
            }
        }
        vec![gp, gm]
    }
}

/// Tape handles for the band MLP weights.
#[derive(Clone, Copy, Debug)]
pub struct FusionVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Batched fusion on the tape: `p` and `q_mean` are `B x d`; returns the
/// fused `B x d` tokens.
pub fn fuse_on_graph(
    graph: &mut Graph,
    p: Var,
    q_mean: Var,
    vars: FusionVars,
    bands: usize,
) -> Result<Var> {
    let mag = |graph: &mut Graph, x: Var| {
        let xv = graph.value(x);
        let data: Vec<Vec<f64>> = (0..xv.rows()).map(|r| band_magnitudes(xv.row(r), bands)).collect();
        let out = Tensor::from_rows(&data)?;
        Ok::<_, Error>(graph.custom(Box::new(BandMagnitudes { bands }), vec![x], out))
    };
    let mp = mag(graph, p)?;
    let mq = mag(graph, q_mean)?;
    let input = graph.concat_cols(vec![mp, mq]);
    let h = graph.linear(input, vars.w1, vars.b1);
    let h = graph.gelu(h);
    let o = graph.linear(h, vars.w2, vars.b2);
    let m = graph.softplus(o);
    let (pv, mv) = (graph.value(p), graph.value(m));
    let rows = (0..pv.rows())
        .map(|r| reconstruct(pv.row(r), mv.row(r)))
        .collect::<Result<Vec<_>>>()?;
    let out = Tensor::from_rows(&rows)?;
    Ok(graph.custom(Box::new(SpectralReconstruct { bands }), vec![p, m], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random(d: usize, seed: u64) -> Vec<f64> {
        let mut rng = SeededRng::new(seed);
        (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect()
    }

    #[test]
    fn rejects_bad_band_counts() {
        assert!(check_bands(0, 8).is_err());
        assert!(check_bands(5, 8).is_err());
        assert!(check_bands(2, 12).is_err());
        assert!(check_bands(4, 8).is_ok());
    }

    #[test]
    fn reconstruct_with_original_magnitudes_is_identity() {
        let p = random(16, 3);
        let m = band_magnitudes(&p, 8);
        let back = reconstruct(&p, &m).unwrap();
        for (a, b) in p.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn high_bands_pass_through() {
        let p = random(16, 4);
        let fused = reconstruct(&p, &[0.3, 1.2, 0.0]).unwrap();
        let (sp, sf) = (fft(&p), fft(&fused));
        for k in 3..=13 {
            assert!((sp[k] - sf[k]).norm() < 1e-12, "bin {k}");
        }
        assert!((sf[1].norm() - 1.2).abs() < 1e-12);
        assert!((sf[15].norm() - 1.2).abs() < 1e-12);
        // Phase of bin 1 retained.
        assert!((sf[1].arg() - sp[1].arg()).abs() < 1e-12);
    }

    #[test]
    fn summaries_of_identical_tokens() {
        let fused = vec![1.0, -2.0];
        let t = vec![0.5, 0.5];
        let (u, v) = fusion_summaries(&fused, &[t.clone(), t.clone(), t]).unwrap();
        assert_eq!(u, fused);
        assert_eq!(v, vec![1.5, -1.5]);
        let (_, v1) = fusion_summaries(&fused, &[vec![3.0, 4.0]]).unwrap();
        assert_eq!(v1, vec![4.0, 2.0]);
    }

    #[test]
    fn fused_graph_gradients_match_central_differences() {
        use crate::numerics::grad_check;
        let (d, k, rows) = (16, 4, 2);
        let mut rng = SeededRng::new(21);
        let mut t = |r: usize, c: usize, scale: f64| {
            Tensor::new(r, c, (0..r * c).map(|_| rng.uniform_in(-scale, scale)).collect()).unwrap()
        };
        let values = vec![
            t(rows, d, 1.0),
            t(rows, d, 1.0),
            t(2 * k, 2 * k, 0.5),
            t(1, 2 * k, 0.1),
            t(2 * k, k, 0.5),
            t(1, k, 0.1),
        ];
        let weights = t(rows, d, 1.0);
        let objective = |v: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
            let mut g = Graph::new();
            let vars: Vec<Var> = v.iter().enumerate().map(|(i, x)| g.param(i, x.clone())).collect();
            let fv = FusionVars {
                w1: vars[2],
                b1: vars[3],
                w2: vars[4],
                b2: vars[5],
            };
            let y = fuse_on_graph(&mut g, vars[0], vars[1], fv, k)?;
            let y = g.mul_const(y, weights.clone());
            let col = g.input(Tensor::new(d, 1, vec![1.0; d])?);
            let row = g.input(Tensor::new(1, rows, vec![1.0; rows])?);
            let s = g.matmul(y, col);
            let root = g.matmul(row, s);
            let shapes: Vec<[usize; 2]> = v.iter().map(Tensor::shape).collect();
            Ok((g.value(root).item(), g.backward(root).params(&g, &shapes)))
        };
        let (_, analytic) = objective(&values).unwrap();
        let names: Vec<String> = ["p", "q_mean", "w1", "b1", "w2", "b2"].map(String::from).to_vec();
        let report = grad_check(|v| Ok(objective(v)?.0), &names, &values, &analytic, 1e-6, 1e-6).unwrap();
        assert!(report.pass, "{report}");
    }
}
