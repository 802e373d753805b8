//! A deliberately naive re-implementation of the model, written against
//! parameter names only, used as an oracle for the optimized code paths.

mod common;

use common::{random_grid, tiny_schema};
use jmlab::model::{LossWeights, Model, ModelConfig};
use jmlab::{StreamRole, TokenGrid};

type Vector = Vec<f64>;

struct Oracle<'a> {
    model: &'a Model,
}

impl Oracle<'_> {
    fn w(&self, name: &str) -> Vec<Vector> {
        let t = self
            .model
            .param(name)
            .unwrap_or_else(|| panic!("missing {name}"));
        t.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    fn matvec(x: &[f64], w: &[Vector]) -> Vector {
        let cols = w[0].len();
        (0..cols)
            .map(|j| x.iter().zip(w).map(|(xi, row)| xi * row[j]).sum())
            .collect()
    }

    fn norm(x: &[f64], gain: &[f64]) -> Vector {
        let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let r = 1.0 / (ms + 1e-6).sqrt();
        x.iter().zip(gain).map(|(v, g)| v * r * g).collect()
    }

    fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
    }

    fn pe(pos: usize, d: usize) -> Vector {
        (0..d)
            .map(|i| {
                let a = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
                if i % 2 == 0 { a.sin() } else { a.cos() }
            })
            .collect()
    }

    fn add(a: &[f64], b: &[f64]) -> Vector {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    /// One transformer stack over a full sequence, position by position.
    fn stack(&self, prefix: &str, layers: usize, xs: Vec<Vector>) -> Vec<Vector> {
        let heads = self.model.config().n_heads;
        let mut xs = xs;
        for l in 0..layers {
            let p = format!("{prefix}.block{l}");
            let g1 = &self.w(&format!("{p}.attn_norm"))[0];
            let (wq, wk, wv, wo) = (
                self.w(&format!("{p}.wq")),
                self.w(&format!("{p}.wk")),
                self.w(&format!("{p}.wv")),
                self.w(&format!("{p}.wo")),
            );
            let g2 = &self.w(&format!("{p}.mlp_norm"))[0];
            let (w1, w2) = (self.w(&format!("{p}.w1")), self.w(&format!("{p}.w2")));
            let normed: Vec<Vector> = xs.iter().map(|x| Self::norm(x, g1)).collect();
            let q: Vec<Vector> = normed.iter().map(|n| Self::matvec(n, &wq)).collect();
            let k: Vec<Vector> = normed.iter().map(|n| Self::matvec(n, &wk)).collect();
            let v: Vec<Vector> = normed.iter().map(|n| Self::matvec(n, &wv)).collect();
            let d = xs[0].len();
            let dh = d / heads;
            let mut next = Vec::new();
            for i in 0..xs.len() {
                let mut attn = vec![0.0; d];
                for h in 0..heads {
                    let r = h * dh..(h + 1) * dh;
                    let scores: Vector = (0..=i)
                        .map(|j| {
                            q[i][r.clone()].iter().zip(&k[j][r.clone()]).map(|(a, b)| a * b).sum::<f64>()
                                / (dh as f64).sqrt()
                        })
                        .collect();
                    let max = scores.iter().cloned().fold(f64::MIN, f64::max);
                    let e: Vector = scores.iter().map(|s| (s - max).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for (j, ej) in e.iter().enumerate() {
                        for c in r.clone() {
                            attn[c] += ej / z * v[j][c];
                        }
                    }
                }
                let x1 = Self::add(&xs[i], &Self::matvec(&attn, &wo));
                let hdn: Vector = Self::matvec(&Self::norm(&x1, g2), &w1).into_iter().map(Self::gelu).collect();
                next.push(Self::add(&x1, &Self::matvec(&hdn, &w2)));
            }
            xs = next;
        }
        xs
    }

    fn temporal(&self, grid: &TokenGrid) -> Vec<Vector> {
        let cfg = self.model.config();
        let d = cfg.d_model;
        let mut xs = Vec::new();
        for t in 0..grid.len() {
            let mut x = Self::pe(t, d);
            if t == 0 {
                x = Self::add(&x, &self.w("temporal.start")[0]);
            } else {
                for (spec, &tok) in cfg.schema.streams.iter().zip(grid.frame(t - 1)) {
                    x = Self::add(&x, &self.w(&format!("temporal.emb.{}", spec.name))[tok as usize]);
                }
            }
            xs.push(x);
        }
        let g = self.w("temporal.norm")[0].clone();
        self.stack("temporal", cfg.temporal_layers, xs)
            .iter()
            .map(|x| Self::norm(x, &g))
            .collect()
    }

    /// Logits of every stream of one frame, in schema order.
    fn frame_logits(&self, z: &[f64], frame: &[u32]) -> Vec<Vector> {
        let cfg = self.model.config();
        let specs = &cfg.schema.streams;
        let text: Vec<usize> = (0..specs.len()).filter(|&s| specs[s].role == StreamRole::Text).collect();
        let audio: Vec<usize> = (0..specs.len()).filter(|&s| specs[s].role != StreamRole::Text).collect();
        let mut out = vec![Vec::new(); specs.len()];
        let head = |prefix: &str, name: &str, x: &[f64]| {
            let b = &self.w(&format!("{prefix}.{name}.bias"))[0];
            Self::add(&Self::matvec(x, &self.w(&format!("{prefix}.{name}.weight"))), b)
        };
        for &s in &text {
            out[s] = head("text_linear", &specs[s].name, z);
        }
        let pos = self.w("depth.pos");
        let mut xs = vec![Self::add(&Self::matvec(z, &self.w("depth.in_proj")), &pos[0])];
        for &s in text.iter().chain(&audio[..audio.len() - 1]) {
            let e = &self.w(&format!("depth.emb.{}", specs[s].name))[frame[s] as usize];
            xs.push(Self::add(e, &pos[xs.len()]));
        }
        let ys = self.stack("depth", cfg.depth_layers, xs);
        let g = self.w("depth.norm")[0].clone();
        for (k, &s) in audio.iter().enumerate() {
            out[s] = head("depth.head", &specs[s].name, &Self::norm(&ys[text.len() + k], &g));
        }
        out
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{x} vs {y}");
    }
}

fn reference_model() -> Model {
    Model::new(ModelConfig {
        d_model: 12,
        n_heads: 3,
        temporal_layers: 2,
        depth_layers: 2,
        max_frames: 32,
        schema: tiny_schema(),
        seed: 21,
    })
    .unwrap()
}

#[test]
fn temporal_forward_matches_reference() {
    let model = reference_model();
    let grid = random_grid(&model.config().schema, 9, 8);
    let oracle = Oracle { model: &model };
    let expected = oracle.temporal(&grid);
    let got = model.temporal_forward(&grid, 9).unwrap();
    for t in 0..9 {
        close(got.row(t).as_slice().unwrap(), &expected[t], 1e-10);
    }
}

#[test]
fn head_logits_match_reference() {
    let model = reference_model();
    let schema = model.config().schema.clone();
    let grid = random_grid(&schema, 6, 13);
    let oracle = Oracle { model: &model };
    let zs = oracle.temporal(&grid);
    let text = schema.text_streams();
    let audio = schema.audio_streams();
    for t in 0..6 {
        let frame = grid.frame(t);
        let expected = oracle.frame_logits(&zs[t], frame);
        let z = ndarray::Array1::from(zs[t].clone());
        close(model.text_logits(z.view()).as_slice().unwrap(), &expected[text[0]], 1e-10);
        let mut prefix: Vec<u32> = text.iter().map(|&s| frame[s]).collect();
        for &s in &audio {
            let got = model.depth_logits(z.view(), &prefix).unwrap();
            close(got.as_slice().unwrap(), &expected[s], 1e-10);
            prefix.push(frame[s]);
        }
    }
}

#[test]
fn weighted_loss_matches_reference() {
    let model = reference_model();
    let schema = model.config().schema.clone();
    let grid = random_grid(&schema, 7, 17);
    let oracle = Oracle { model: &model };
    let zs = oracle.temporal(&grid);
    let weights = LossWeights::default();
    let (mut num, mut den) = (0.0, 0.0);
    for t in 0..grid.len() {
        let frame = grid.frame(t);
        let logits = oracle.frame_logits(&zs[t], frame);
        for (s, spec) in schema.streams.iter().enumerate() {
            let tok = frame[s];
            if tok == spec.initial_id {
                continue;
            }
            let w = match spec.role {
                StreamRole::Text if Some(tok) == spec.pad_id => 100.0 * 0.5,
                StreamRole::Text => 100.0,
                StreamRole::SemanticAudio => 100.0,
                StreamRole::AcousticAudio => 1.0,
            };
            let l = &logits[s];
            let max = l.iter().cloned().fold(f64::MIN, f64::max);
            let lse = max + l.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            num += w * (lse - l[tok as usize]);
            den += w;
        }
    }
    let got = model.loss(&grid, &weights).unwrap();
    assert!((got.total - num / den).abs() < 1e-10, "{} vs {}", got.total, num / den);
}

#[test]
fn parameter_count_matches_formula() {
    let model = reference_model();
    let cfg = model.config();
    let d = cfg.d_model;
    let schema = &cfg.schema;
    let vocab: Vec<usize> = schema.streams.iter().map(|s| s.vocab_size as usize).collect();
    let text: usize = schema.text_streams().iter().map(|&s| vocab[s]).sum();
    let audio: Vec<usize> = schema.audio_streams().iter().map(|&s| vocab[s]).collect();
    let block = 4 * d * d + 8 * d * d + 2 * d;
    let temporal = vocab.iter().sum::<usize>() * d + d + cfg.temporal_layers * block + d + text * (d + 1);
    let positions = schema.text_streams().len() + audio.len();
    let depth = d * d
        + positions * d
        + text * d
        + audio[..audio.len() - 1].iter().sum::<usize>() * d
        + cfg.depth_layers * block
        + d
        + audio.iter().map(|v| v * (d + 1)).sum::<usize>();
    assert_eq!(model.param_count(), temporal + depth);
}
