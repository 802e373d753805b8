//! Full-sequence forward and backward pass with the weighted loss.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::block::{block_backward, block_forward, BlockCache, Geometry};
use super::config::LossWeights;
use super::ops::{log_sum_exp, position_encoding, rms_norm, rms_norm_backward, row_sum};
use super::params::{Head, Params};
use super::Model;
use crate::error::{Error, Result};
use crate::token_grid::{StreamRole, StreamSpec, TokenGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct StreamLoss {
    pub name: String,
    pub role: StreamRole,
    /// Unweighted negative log-likelihood summed over counted tokens.
    pub nll_sum: f64,
    pub weighted_nll: f64,
    pub weight_sum: f64,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// `weighted_nll / weight_sum`, or 0 when nothing is counted.
    pub total: f64,
    pub weighted_nll: f64,
    pub weight_sum: f64,
    pub streams: Vec<StreamLoss>,
}

impl LossReport {
    fn empty(specs: &[StreamSpec]) -> Self {
        LossReport {
            total: 0.0,
            weighted_nll: 0.0,
            weight_sum: 0.0,
            streams: specs
                .iter()
                .map(|s| StreamLoss {
                    name: s.name.clone(),
                    role: s.role,
                    nll_sum: 0.0,
                    weighted_nll: 0.0,
                    weight_sum: 0.0,
                    tokens: 0,
                })
                .collect(),
        }
    }

    fn finish(mut self) -> Self {
        self.weighted_nll = self.streams.iter().map(|s| s.weighted_nll).sum();
        self.weight_sum = self.streams.iter().map(|s| s.weight_sum).sum();
        self.total = if self.weight_sum > 0.0 {
            self.weighted_nll / self.weight_sum
        } else {
            0.0
        };
        self
    }

    /// Combine reports over the same schema.
    pub fn merge(reports: &[LossReport]) -> LossReport {
        let mut out = reports[0].clone();
        for r in &reports[1..] {
            for (a, b) in out.streams.iter_mut().zip(&r.streams) {
                a.nll_sum += b.nll_sum;
                a.weighted_nll += b.weighted_nll;
                a.weight_sum += b.weight_sum;
                a.tokens += b.tokens;
            }
        }
        out.finish()
    }

    /// Share of the total loss contributed by streams of `role`.
    pub fn role_component(&self, role: StreamRole) -> f64 {
        if self.weight_sum == 0.0 {
            return 0.0;
        }
        self.streams
            .iter()
            .filter(|s| s.role == role)
            .map(|s| s.weighted_nll)
            .sum::<f64>()
            / self.weight_sum
    }

    /// Mean unweighted NLL per counted token over streams of `role`.
    pub fn role_mean_nll(&self, role: StreamRole) -> f64 {
        let (nll, n) = self
            .streams
            .iter()
            .filter(|s| s.role == role)
            .fold((0.0, 0usize), |(a, n), s| (a + s.nll_sum, n + s.tokens));
        if n == 0 { 0.0 } else { nll / n as f64 }
    }
}

/// Sum of loss weights over every counted target of `grid`.
pub fn weight_total(grid: &TokenGrid, weights: &LossWeights) -> f64 {
    let specs = &grid.schema().streams;
    grid.frames()
        .map(|frame| {
            frame
                .iter()
                .zip(specs)
                .filter_map(|(&tok, spec)| weights.token_weight(spec, tok))
                .sum::<f64>()
        })
        .sum()
}

struct HeadOut {
    dfeat: Option<Array2<f64>>,
}

/// Cross-entropy of one output head over `targets`. With gradients
/// requested, accumulates head gradients scaled by `1 / normalizer` and
/// returns the gradient on the features.
#[allow(clippy::too_many_arguments)]
fn head_loss(
    p: &Params,
    head: &Head,
    feats: &Array2<f64>,
    targets: &[u32],
    spec: &StreamSpec,
    weights: &LossWeights,
    stat: &mut StreamLoss,
    grads: Option<(&mut Params, f64)>,
) -> HeadOut {
    let mut logits = feats.dot(&p[head.weight]);
    logits += &p[head.bias];
    let want_grad = grads.is_some();
    let normalizer = grads.as_ref().map_or(1.0, |g| g.1);
    for (mut row, &tok) in logits.rows_mut().into_iter().zip(targets) {
        let Some(w) = weights.token_weight(spec, tok) else {
            if want_grad {
                row.fill(0.0);
            }
            continue;
        };
        let lse = log_sum_exp(row.view());
        let nll = lse - row[tok as usize];
        stat.nll_sum += nll;
        stat.weighted_nll += w * nll;
        stat.weight_sum += w;
        stat.tokens += 1;
        if want_grad {
            let scale = w / normalizer;
            row.mapv_inplace(|x| (x - lse).exp() * scale);
            row[tok as usize] -= scale;
        }
    }
    match grads {
        None => HeadOut { dfeat: None },
        Some((g, _)) => {
            g[head.weight] += &feats.t().dot(&logits);
            g[head.bias] += &row_sum(&logits);
            HeadOut {
                dfeat: Some(logits.dot(&p[head.weight].t())),
            }
        }
    }
}

impl Model {
    fn check_grid(&self, grid: &TokenGrid) -> Result<()> {
        if grid.schema() != &self.config.schema {
            return Err(Error::Schema("grid schema does not match the model".into()));
        }
        if grid.len() < 2 {
            return Err(Error::Grid(format!("loss needs at least 2 frames, grid has {}", grid.len())));
        }
        if grid.len() > self.config.max_frames {
            return Err(Error::Grid(format!(
                "grid has {} frames, model supports {}",
                grid.len(),
                self.config.max_frames
            )));
        }
        Ok(())
    }

    /// Temporal inputs for the first `len` positions: the start embedding at
    /// 0, then the summed embeddings of the previous frame.
    fn temporal_inputs(&self, grid: &TokenGrid, len: usize) -> Array2<f64> {
        let p = &self.params;
        let l = &self.layout;
        let d = self.config.d_model;
        let mut x = Array2::zeros((len, d));
        for t in 0..len {
            let mut row = x.row_mut(t);
            row.assign(&position_encoding(t, d));
            if t == 0 {
                row += &p[l.start].row(0);
            } else {
                for (s, &tok) in grid.frame(t - 1).iter().enumerate() {
                    row += &p[l.stream_emb[s]].row(tok as usize);
                }
            }
        }
        x
    }

    fn temporal_stack(&self, x: Array2<f64>, keep: bool) -> (Array2<f64>, Vec<BlockCache>) {
        let geo = Geometry {
            seqs: 1,
            seq_len: x.nrows(),
            heads: self.config.n_heads,
        };
        let mut caches = Vec::new();
        let mut h = x;
        for ids in &self.layout.temporal {
            let (out, cache) = block_forward(&self.params, ids, h, geo);
            h = out;
            if keep {
                caches.push(cache);
            }
        }
        (h, caches)
    }

    /// Temporal context vectors for frames `0..upto`: row `t` summarizes
    /// frames before `t` and conditions the prediction of frame `t`.
    pub fn temporal_forward(&self, grid: &TokenGrid, upto: usize) -> Result<Array2<f64>> {
        if grid.schema() != &self.config.schema {
            return Err(Error::Schema("grid schema does not match the model".into()));
        }
        if upto == 0 || upto > grid.len() || upto > self.config.max_frames {
            return Err(Error::Invalid(format!(
                "temporal_forward upto {upto} outside 1..={}",
                grid.len().min(self.config.max_frames)
            )));
        }
        let x = self.temporal_inputs(grid, upto);
        let (h, _) = self.temporal_stack(x, false);
        Ok(rms_norm(&h, &self.params[self.layout.temporal_norm]).0)
    }

    /// Text logits of the first text stream given a context vector.
    pub fn text_logits(&self, z: ArrayView1<f64>) -> Array1<f64> {
        self.text_logits_for(0, z)
    }

    /// Text logits of text stream `index` (in schema order of text streams).
    pub fn text_logits_for(&self, index: usize, z: ArrayView1<f64>) -> Array1<f64> {
        let head = &self.layout.text_heads[index];
        z.dot(&self.params[head.weight]) + self.params[head.bias].row(0)
    }

    /// Loss of one grid without gradients.
    pub fn loss(&self, grid: &TokenGrid, weights: &LossWeights) -> Result<LossReport> {
        self.pass(grid, weights, None)
    }

    /// Forward and backward pass over one grid. Gradients are scaled by
    /// `1 / normalizer` and added to `grads`.
    pub fn loss_and_grad(
        &self,
        grid: &TokenGrid,
        weights: &LossWeights,
        normalizer: f64,
        grads: &mut Params,
    ) -> Result<LossReport> {
        if !(normalizer > 0.0) {
            return self.loss(grid, weights);
        }
        self.pass(grid, weights, Some((grads, normalizer)))
    }

    fn pass(
        &self,
        grid: &TokenGrid,
        weights: &LossWeights,
        mut grads: Option<(&mut Params, f64)>,
    ) -> Result<LossReport> {
        self.check_grid(grid)?;
        let p = &self.params;
        let l = &self.layout;
        let specs = &self.config.schema.streams;
        let want_grad = grads.is_some();
        let t_len = grid.len();
        let d = self.config.d_model;
        let n_text = l.text_streams.len();
        let n_audio = l.audio_streams.len();
        let positions = n_text + n_audio;
        let mut report = LossReport::empty(specs);

        // temporal transformer
        let x0 = self.temporal_inputs(grid, t_len);
        let (hl, t_caches) = self.temporal_stack(x0, want_grad);
        let (z, z_inv) = rms_norm(&hl, &p[l.temporal_norm]);

        // text heads
        let mut dz = want_grad.then(|| Array2::<f64>::zeros((t_len, d)));
        for (j, &s) in l.text_streams.iter().enumerate() {
            let targets = grid.stream(s);
            let out = head_loss(
                p,
                &l.text_heads[j],
                &z,
                &targets,
                &specs[s],
                weights,
                &mut report.streams[s],
                grads.as_mut().map(|(g, n)| (&mut **g, *n)),
            );
            if let (Some(dz), Some(df)) = (dz.as_mut(), out.dfeat) {
                *dz += &df;
            }
        }

        // depth transformer over every frame at once
        let zin = z.dot(&p[l.depth_in]);
        let pos = &p[l.depth_pos];
        let mut d0 = Array2::zeros((t_len * positions, d));
        for t in 0..t_len {
            let frame = grid.frame(t);
            let base = t * positions;
            let mut row = d0.row_mut(base);
            row.assign(&zin.row(t));
            row += &pos.row(0);
            for (j, &s) in l.text_streams.iter().enumerate() {
                let mut row = d0.row_mut(base + 1 + j);
                row.assign(&p[l.depth_text_emb[j]].row(frame[s] as usize));
                row += &pos.row(1 + j);
            }
            for (k, &s) in l.audio_streams[..n_audio - 1].iter().enumerate() {
                let mut row = d0.row_mut(base + 1 + n_text + k);
                row.assign(&p[l.depth_audio_emb[k]].row(frame[s] as usize));
                row += &pos.row(1 + n_text + k);
            }
        }
        let geo = Geometry {
            seqs: t_len,
            seq_len: positions,
            heads: self.config.n_heads,
        };
        let mut d_caches = Vec::new();
        let mut h = d0;
        for ids in &l.depth {
            let (out, cache) = block_forward(p, ids, h, geo);
            h = out;
            if want_grad {
                d_caches.push(cache);
            }
        }
        let (y, y_inv) = rms_norm(&h, &p[l.depth_norm]);

        let mut dy = want_grad.then(|| Array2::<f64>::zeros(y.raw_dim()));
        for (k, &s) in l.audio_streams.iter().enumerate() {
            let rows: Vec<usize> = (0..t_len).map(|t| t * positions + n_text + k).collect();
            let feats = y.select(Axis(0), &rows);
            let targets = grid.stream(s);
            let out = head_loss(
                p,
                &l.audio_heads[k],
                &feats,
                &targets,
                &specs[s],
                weights,
                &mut report.streams[s],
                grads.as_mut().map(|(g, n)| (&mut **g, *n)),
            );
            if let (Some(dy), Some(df)) = (dy.as_mut(), out.dfeat) {
                for (i, &r) in rows.iter().enumerate() {
                    let mut row = dy.row_mut(r);
                    row += &df.row(i);
                }
            }
        }
        let report = report.finish();
        let (Some((g, _)), Some(dy), Some(mut dz)) = (grads, dy, dz) else {
            return Ok(report);
        };

        // depth backward
        let mut dh = rms_norm_backward(&dy, &h, &y_inv, &p[l.depth_norm], &mut g[l.depth_norm]);
        for (ids, cache) in l.depth.iter().zip(&d_caches).rev() {
            dh = block_backward(p, ids, cache, dh, g, geo);
        }
        let mut dzin = Array2::zeros((t_len, d));
        for t in 0..t_len {
            let frame = grid.frame(t);
            let base = t * positions;
            dzin.row_mut(t).assign(&dh.row(base));
            for q in 0..positions {
                let mut gp = g[l.depth_pos].row_mut(q);
                gp += &dh.row(base + q);
            }
            for (j, &s) in l.text_streams.iter().enumerate() {
                let mut ge = g[l.depth_text_emb[j]].row_mut(frame[s] as usize);
                ge += &dh.row(base + 1 + j);
            }
            for (k, &s) in l.audio_streams[..n_audio - 1].iter().enumerate() {
                let mut ge = g[l.depth_audio_emb[k]].row_mut(frame[s] as usize);
                ge += &dh.row(base + 1 + n_text + k);
            }
        }
        g[l.depth_in] += &z.t().dot(&dzin);
        dz += &dzin.dot(&p[l.depth_in].t());

        // temporal backward
        let mut dx = rms_norm_backward(&dz, &hl, &z_inv, &p[l.temporal_norm], &mut g[l.temporal_norm]);
        for (ids, cache) in l.temporal.iter().zip(&t_caches).rev() {
            dx = block_backward(
                p,
                ids,
                cache,
                dx,
                g,
                Geometry {
                    seqs: 1,
                    seq_len: t_len,
                    heads: self.config.n_heads,
                },
            );
        }
        {
            let mut gs = g[l.start].row_mut(0);
            gs += &dx.row(0);
        }
        for t in 1..t_len {
            for (s, &tok) in grid.frame(t - 1).iter().enumerate() {
                let mut ge = g[l.stream_emb[s]].row_mut(tok as usize);
                ge += &dx.row(t);
            }
        }
        Ok(report)
    }
}
