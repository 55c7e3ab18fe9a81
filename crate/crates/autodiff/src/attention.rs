use crate::graph::softmax_in_place;
use crate::tensor::dot;
use crate::{Error, Result, Tensor};

/// Contiguous block of key/value rows belonging to one query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug)]
pub(crate) struct AttentionSaved {
    segments: Vec<Segment>,
    heads: usize,
    head_dim: usize,
    /// Softmax weights before dropout, `[row][head]`.
    pub(crate) weights: Vec<f64>,
    mask: Option<Vec<f64>>,
}

pub(crate) struct AttentionGrads {
    pub dq: Vec<f64>,
    pub dk: Vec<f64>,
    pub dv: Vec<f64>,
}

pub(crate) fn forward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    segments: &[Segment],
    heads: usize,
    mask: Option<Vec<f64>>,
) -> Result<(Tensor, AttentionSaved)> {
    let width = q.cols();
    if heads == 0 || !width.is_multiple_of(heads) {
        return Err(Error::Segments(format!(
            "width {width} is not divisible into {heads} heads"
        )));
    }
    if k.cols() != width || v.cols() != width || k.rows() != v.rows() {
        return Err(Error::Shape {
            op: "query_attention",
            lhs: k.shape().to_vec(),
            rhs: v.shape().to_vec(),
        });
    }
    if segments.len() != q.rows() {
        return Err(Error::Segments(format!(
            "{} segments for {} queries",
            segments.len(),
            q.rows()
        )));
    }
    let rows = k.rows();
    for s in segments {
        if s.len == 0 {
            return Err(Error::Segments("empty segment".into()));
        }
        if s.start + s.len > rows {
            return Err(Error::Segments(format!(
                "segment {}..{} exceeds {rows} rows",
                s.start,
                s.start + s.len
            )));
        }
    }
    if let Some(m) = &mask {
        if m.len() != rows * heads {
            return Err(Error::Segments(format!(
                "mask has {} entries, expected {}",
                m.len(),
                rows * heads
            )));
        }
    }
    let head_dim = width / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut weights = vec![0.0; rows * heads];
    let mut out = vec![0.0; q.rows() * width];
    let mut scores = Vec::new();
    for (b, seg) in segments.iter().enumerate() {
        let qrow = q.row_slice(b);
        for h in 0..heads {
            let cols = h * head_dim..(h + 1) * head_dim;
            let qh = &qrow[cols.clone()];
            scores.clear();
            for t in seg.start..seg.start + seg.len {
                scores.push(dot(qh, &k.row_slice(t)[cols.clone()]) * scale);
            }
            softmax_in_place(&mut scores);
            let out_h = &mut out[b * width + h * head_dim..b * width + (h + 1) * head_dim];
            for (i, &w) in scores.iter().enumerate() {
                let t = seg.start + i;
                weights[t * heads + h] = w;
                let wd = match &mask {
                    Some(m) => w * m[t * heads + h],
                    None => w,
                };
                if wd == 0.0 {
                    continue;
                }
                for (o, &vv) in out_h.iter_mut().zip(&v.row_slice(t)[cols.clone()]) {
                    *o += wd * vv;
                }
            }
        }
    }
    let out = Tensor::matrix(q.rows(), width, out);
    Ok((
        out,
        AttentionSaved {
            segments: segments.to_vec(),
            heads,
            head_dim,
            weights,
            mask,
        },
    ))
}

pub(crate) fn backward(g: &[f64], q: &Tensor, k: &Tensor, v: &Tensor, saved: &AttentionSaved) -> AttentionGrads {
    let heads = saved.heads;
    let hd = saved.head_dim;
    let width = heads * hd;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dq = vec![0.0; q.numel()];
    let mut dk = vec![0.0; k.numel()];
    let mut dv = vec![0.0; v.numel()];
    let mut dw = Vec::new();
    for (b, seg) in saved.segments.iter().enumerate() {
        let qrow = q.row_slice(b);
        for h in 0..heads {
            let off = h * hd;
            let gp = &g[b * width + off..b * width + off + hd];
            dw.clear();
            for t in seg.start..seg.start + seg.len {
                let m = saved.mask.as_ref().map_or(1.0, |m| m[t * heads + h]);
                let w = saved.weights[t * heads + h];
                let vrow = &v.row_slice(t)[off..off + hd];
                // value path
                let wd = w * m;
                if wd != 0.0 {
                    for (o, &gv) in dv[t * width + off..t * width + off + hd].iter_mut().zip(gp) {
                        *o += wd * gv;
                    }
                }
                dw.push(dot(gp, vrow) * m);
            }
            let s: f64 = dw
                .iter()
                .enumerate()
                .map(|(i, d)| d * saved.weights[(seg.start + i) * heads + h])
                .sum();
            for (i, &d) in dw.iter().enumerate() {
                let t = seg.start + i;
                let ds = saved.weights[t * heads + h] * (d - s) * scale;
                if ds == 0.0 {
                    continue;
                }
                let krow = &k.row_slice(t)[off..off + hd];
                for (o, &kv) in dq[b * width + off..b * width + off + hd].iter_mut().zip(krow) {
                    *o += ds * kv;
                }
                for (o, &qv) in dk[t * width + off..t * width + off + hd]
                    .iter_mut()
                    .zip(&qrow[off..off + hd])
                {
                    *o += ds * qv;
                }
            }
        }
    }
    AttentionGrads { dq, dk, dv }
}
