//! Graph evaluation: forward pass, reverse-mode gradients, and
//! Hessian-vector products via forward-over-reverse differentiation.

use crate::error::{CoreError, Result};
use crate::gradcore::graph::{Graph, NodeId, Op, Padding, Reduction};
use crate::gradcore::param::ParamVector;
use crate::gradcore::scalar::{Dual, Scalar};
use crate::gradcore::tensor::Tensor;

/// Per-batch targets for the loss node.
#[derive(Debug, Clone)]
pub enum Targets {
    /// Class indices for `CrossEntropyLoss`.
    Classes(Vec<u32>),
    /// Real-valued targets for `SquaredErrorLoss`.
    Values(Tensor),
    /// No targets (parameter-only losses, or pure prediction passes).
    None,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Tensor,
    pub targets: Targets,
}

impl Batch {
    pub fn empty() -> Self {
        Batch {
            features: Tensor::zeros(vec![0]),
            targets: Targets::None,
        }
    }

    pub fn rows(&self) -> usize {
        self.features.rows()
    }
}

/// Generic dense buffer holding one node's forward value.
struct Buf<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Buf<S> {
    fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Buf {
            shape,
            data: vec![S::zero(); n],
        }
    }

    fn from_f64(shape: Vec<usize>, src: &[f64]) -> Self {
        Buf {
            shape,
            data: src.iter().map(|&v| S::from_f64(v)).collect(),
        }
    }

    fn scalar(v: S) -> Self {
        Buf {
            shape: vec![1],
            data: vec![v],
        }
    }
}

fn shape_err(node: NodeId, op: &Op, detail: String) -> CoreError {
    CoreError::ShapeMismatch {
        node,
        op: op.name().to_string(),
        detail,
    }
}

fn conv_geometry(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    padding: Padding,
) -> (usize, usize, isize, isize) {
    match padding {
        Padding::Valid => (h - kh + 1, w - kw + 1, 0, 0),
        Padding::Same => (h, w, ((kh - 1) / 2) as isize, ((kw - 1) / 2) as isize),
    }
}

/// Evaluates nodes `0..=upto` and returns their buffers.
fn forward_values<S: Scalar>(
    graph: &Graph,
    params: &[S],
    batch: &Batch,
    upto: NodeId,
) -> Result<Vec<Buf<S>>> {
    let mut values: Vec<Buf<S>> = Vec::with_capacity(upto + 1);
    for (id, op) in graph.ops.iter().enumerate().take(upto + 1) {
        let buf = match op {
            Op::Input => Buf::from_f64(batch.features.shape().to_vec(), batch.features.data()),
            Op::Param { offset, shape } => {
                let len: usize = shape.iter().product();
                Buf {
                    shape: shape.clone(),
                    data: params[*offset..*offset + len].to_vec(),
                }
            }
            Op::Constant(t) => Buf::from_f64(t.shape().to_vec(), t.data()),
            Op::MatMul { a, b } => {
                let (av, bv) = (&values[*a], &values[*b]);
                if av.shape.len() != 2 || bv.shape.len() != 2 || av.shape[1] != bv.shape[0] {
                    return Err(shape_err(
                        id,
                        op,
                        format!("{:?} @ {:?}", av.shape, bv.shape),
                    ));
                }
                let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
                let mut out = Buf::zeros(vec![m, n]);
                for i in 0..m {
                    let arow = &av.data[i * k..(i + 1) * k];
                    let orow = &mut out.data[i * n..(i + 1) * n];
                    for (kk, &aik) in arow.iter().enumerate() {
                        let brow = &bv.data[kk * n..(kk + 1) * n];
                        for (o, &b) in orow.iter_mut().zip(brow) {
                            *o = *o + aik * b;
                        }
                    }
                }
                out
            }
            Op::AddBias { x, bias } => {
                let (xv, bv) = (&values[*x], &values[*bias]);
                let channels = match xv.shape.len() {
                    2 => xv.shape[1],
                    4 => xv.shape[1],
                    r => {
                        return Err(shape_err(id, op, format!("rank {} input", r)));
                    }
                };
                if bv.shape != vec![channels] {
                    return Err(shape_err(
                        id,
                        op,
                        format!("bias {:?} for input {:?}", bv.shape, xv.shape),
                    ));
                }
                let mut out = Buf {
                    shape: xv.shape.clone(),
                    data: xv.data.clone(),
                };
                if xv.shape.len() == 2 {
                    for row in out.data.chunks_mut(channels) {
                        for (o, &b) in row.iter_mut().zip(&bv.data) {
                            *o = *o + b;
                        }
                    }
                } else {
                    let plane = xv.shape[2] * xv.shape[3];
                    for sample in out.data.chunks_mut(channels * plane) {
                        for (c, chunk) in sample.chunks_mut(plane).enumerate() {
                            let b = bv.data[c];
                            for o in chunk {
                                *o = *o + b;
                            }
                        }
                    }
                }
                out
            }
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                let (av, bv) = (&values[*a], &values[*b]);
                if av.shape != bv.shape {
                    return Err(shape_err(
                        id,
                        op,
                        format!("{:?} vs {:?}", av.shape, bv.shape),
                    ));
                }
                let mut out = Buf::zeros(av.shape.clone());
                match op {
                    Op::Add { .. } => {
                        for ((o, &x), &y) in out.data.iter_mut().zip(&av.data).zip(&bv.data) {
                            *o = x + y;
                        }
                    }
                    Op::Sub { .. } => {
                        for ((o, &x), &y) in out.data.iter_mut().zip(&av.data).zip(&bv.data) {
                            *o = x - y;
                        }
                    }
                    _ => {
                        for ((o, &x), &y) in out.data.iter_mut().zip(&av.data).zip(&bv.data) {
                            *o = x * y;
                        }
                    }
                }
                out
            }
            Op::Scale { x, factor } => {
                let xv = &values[*x];
                let c = S::from_f64(*factor);
                Buf {
                    shape: xv.shape.clone(),
                    data: xv.data.iter().map(|&v| v * c).collect(),
                }
            }
            Op::Relu { x } => {
                let xv = &values[*x];
                let zero = S::zero();
                Buf {
                    shape: xv.shape.clone(),
                    data: xv
                        .data
                        .iter()
                        .map(|&v| if v.gt_primal(zero) { v } else { zero })
                        .collect(),
                }
            }
            Op::Conv2d { x, kernel, padding } => {
                let (xv, kv) = (&values[*x], &values[*kernel]);
                if xv.shape.len() != 4 || kv.shape.len() != 4 || xv.shape[1] != kv.shape[1] {
                    return Err(shape_err(
                        id,
                        op,
                        format!("x {:?} kernel {:?}", xv.shape, kv.shape),
                    ));
                }
                let (n, cin, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
                let (cout, kh, kw) = (kv.shape[0], kv.shape[2], kv.shape[3]);
                if matches!(padding, Padding::Valid) && (kh > h || kw > w) {
                    return Err(shape_err(
                        id,
                        op,
                        format!("kernel {}x{} larger than input {}x{}", kh, kw, h, w),
                    ));
                }
                let (oh, ow, pt, pl) = conv_geometry(h, w, kh, kw, *padding);
                let mut out = Buf::zeros(vec![n, cout, oh, ow]);
                for s in 0..n {
                    for co in 0..cout {
                        let obase = (s * cout + co) * oh * ow;
                        for ci in 0..cin {
                            let xbase = (s * cin + ci) * h * w;
                            let kbase = (co * cin + ci) * kh * kw;
                            for dkh in 0..kh {
                                for dkw in 0..kw {
                                    let kvv = kv.data[kbase + dkh * kw + dkw];
                                    let (r0, r1, c0, c1) =
                                        window(oh, ow, h, w, dkh, dkw, pt, pl);
                                    for r in r0..r1 {
                                        let ih = (r as isize + dkh as isize - pt) as usize;
                                        let xrow = xbase + ih * w;
                                        let orow = obase + r * ow;
                                        for c in c0..c1 {
                                            let iw =
                                                (c as isize + dkw as isize - pl) as usize;
                                            out.data[orow + c] = out.data[orow + c]
                                                + kvv * xv.data[xrow + iw];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                out
            }
            Op::MaxPool2x2 { x } => {
                let xv = &values[*x];
                if xv.shape.len() != 4 || xv.shape[2] % 2 != 0 || xv.shape[3] % 2 != 0 {
                    return Err(shape_err(id, op, format!("input {:?}", xv.shape)));
                }
                let (n, c, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
                let (oh, ow) = (h / 2, w / 2);
                let mut out = Buf::zeros(vec![n, c, oh, ow]);
                for plane in 0..n * c {
                    let xb = plane * h * w;
                    let ob = plane * oh * ow;
                    for r in 0..oh {
                        for col in 0..ow {
                            let i = xb + 2 * r * w + 2 * col;
                            let mut best = xv.data[i];
                            for &cand in &[xv.data[i + 1], xv.data[i + w], xv.data[i + w + 1]] {
                                if cand.gt_primal(best) {
                                    best = cand;
                                }
                            }
                            out.data[ob + r * ow + col] = best;
                        }
                    }
                }
                out
            }
            Op::Flatten { x } => {
                let xv = &values[*x];
                if xv.shape.is_empty() {
                    return Err(shape_err(id, op, "rank-0 input".into()));
                }
                Buf {
                    shape: vec![xv.shape[0], xv.shape[1..].iter().product()],
                    data: xv.data.clone(),
                }
            }
            Op::Sum { x } => {
                let xv = &values[*x];
                let mut acc = S::zero();
                for &v in &xv.data {
                    acc = acc + v;
                }
                Buf::scalar(acc)
            }
            Op::CrossEntropyLoss { logits } => {
                let lv = &values[*logits];
                if lv.shape.len() != 2 {
                    return Err(shape_err(id, op, format!("logits {:?}", lv.shape)));
                }
                let (n, c) = (lv.shape[0], lv.shape[1]);
                let labels = match &batch.targets {
                    Targets::Classes(l) => l,
                    _ => {
                        return Err(CoreError::Data(
                            "cross-entropy loss requires class targets".into(),
                        ))
                    }
                };
                if labels.len() != n {
                    return Err(shape_err(
                        id,
                        op,
                        format!("{} logit rows vs {} labels", n, labels.len()),
                    ));
                }
                let mut total = S::zero();
                for (r, &y) in labels.iter().enumerate() {
                    if y as usize >= c {
                        return Err(CoreError::Data(format!(
                            "label {} out of range for {} classes",
                            y, c
                        )));
                    }
                    let row = &lv.data[r * c..(r + 1) * c];
                    let lse = log_sum_exp(row);
                    total = total + lse - row[y as usize];
                }
                Buf::scalar(total)
            }
            Op::SquaredErrorLoss { pred } => {
                let pv = &values[*pred];
                let targets = match &batch.targets {
                    Targets::Values(t) => t,
                    _ => {
                        return Err(CoreError::Data(
                            "squared-error loss requires value targets".into(),
                        ))
                    }
                };
                if targets.len() != pv.data.len() {
                    return Err(shape_err(
                        id,
                        op,
                        format!(
                            "{} predictions vs {} targets",
                            pv.data.len(),
                            targets.len()
                        ),
                    ));
                }
                let mut total = S::zero();
                for (&p, &y) in pv.data.iter().zip(targets.data()) {
                    let d = p - S::from_f64(y);
                    total = total + d * d;
                }
                Buf::scalar(total)
            }
        };
        if let Some(bad) = buf.data.iter().position(|v| !v.is_finite()) {
            let _ = bad;
            return Err(CoreError::Overflow {
                node: id,
                op: op.name().to_string(),
            });
        }
        values.push(buf);
    }
    Ok(values)
}

/// Row/column window over which `(oh + dkh - pt, ow + dkw - pl)` stays in
/// bounds of the `h x w` input.
#[inline]
fn window(
    oh: usize,
    ow: usize,
    h: usize,
    w: usize,
    dkh: usize,
    dkw: usize,
    pt: isize,
    pl: isize,
) -> (usize, usize, usize, usize) {
    let r0 = (pt - dkh as isize).max(0) as usize;
    let r1 = ((h as isize + pt - dkh as isize).min(oh as isize)).max(0) as usize;
    let c0 = (pl - dkw as isize).max(0) as usize;
    let c1 = ((w as isize + pl - dkw as isize).min(ow as isize)).max(0) as usize;
    (r0, r1.max(r0), c0, c1.max(c0))
}

fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let mut m = row[0];
    for &v in &row[1..] {
        if v.gt_primal(m) {
            m = v;
        }
    }
    let mut acc = S::zero();
    for &v in row {
        acc = acc + (v - m).exp();
    }
    m + acc.ln()
}

/// Reverse pass from the loss node; returns the flat parameter adjoint.
/// `seed` is the adjoint of the loss (1/den applies the reduction).
fn backward_params<S: Scalar>(
    graph: &Graph,
    values: &[Buf<S>],
    batch: &Batch,
    seed: S,
) -> Result<Vec<S>> {
    let loss = graph.loss;
    let mut adj: Vec<Option<Buf<S>>> = Vec::with_capacity(loss + 1);
    adj.resize_with(loss + 1, || None);
    adj[loss] = Some(Buf::scalar(seed));
    let mut grads = vec![S::zero(); graph.param_len()];

    for id in (0..=loss).rev() {
        let Some(a) = adj[id].take() else { continue };
        match &graph.ops[id] {
            Op::Input | Op::Constant(_) => {}
            Op::Param { offset, .. } => {
                for (g, &d) in grads[*offset..*offset + a.data.len()]
                    .iter_mut()
                    .zip(&a.data)
                {
                    *g = *g + d;
                }
            }
            Op::MatMul { a: ia, b: ib } => {
                let (av, bv) = (&values[*ia], &values[*ib]);
                let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
                {
                    let da = acc(&mut adj, *ia, &av.shape);
                    for i in 0..m {
                        let drow = &a.data[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let brow = &bv.data[kk * n..(kk + 1) * n];
                            let mut s = S::zero();
                            for (&d, &b) in drow.iter().zip(brow) {
                                s = s + d * b;
                            }
                            da.data[i * k + kk] = da.data[i * k + kk] + s;
                        }
                    }
                }
                {
                    let db = acc(&mut adj, *ib, &bv.shape);
                    for i in 0..m {
                        let drow = &a.data[i * n..(i + 1) * n];
                        let arow = &av.data[i * k..(i + 1) * k];
                        for (kk, &aik) in arow.iter().enumerate() {
                            let dbrow = &mut db.data[kk * n..(kk + 1) * n];
                            for (o, &d) in dbrow.iter_mut().zip(drow) {
                                *o = *o + aik * d;
                            }
                        }
                    }
                }
            }
            Op::AddBias { x, bias } => {
                let xshape = values[*x].shape.clone();
                let channels = values[*bias].shape[0];
                {
                    let dx = acc(&mut adj, *x, &xshape);
                    for (o, &d) in dx.data.iter_mut().zip(&a.data) {
                        *o = *o + d;
                    }
                }
                {
                    let db = acc(&mut adj, *bias, &[channels]);
                    if xshape.len() == 2 {
                        for row in a.data.chunks(channels) {
                            for (o, &d) in db.data.iter_mut().zip(row) {
                                *o = *o + d;
                            }
                        }
                    } else {
                        let plane = xshape[2] * xshape[3];
                        for sample in a.data.chunks(channels * plane) {
                            for (c, chunk) in sample.chunks(plane).enumerate() {
                                let mut s = S::zero();
                                for &d in chunk {
                                    s = s + d;
                                }
                                db.data[c] = db.data[c] + s;
                            }
                        }
                    }
                }
            }
            Op::Add { a: ia, b: ib } => {
                add_into(&mut adj, *ia, &values[*ia].shape, &a.data, None);
                add_into(&mut adj, *ib, &values[*ib].shape, &a.data, None);
            }
            Op::Sub { a: ia, b: ib } => {
                add_into(&mut adj, *ia, &values[*ia].shape, &a.data, None);
                let neg: Vec<S> = a.data.iter().map(|&d| -d).collect();
                add_into(&mut adj, *ib, &values[*ib].shape, &neg, None);
            }
            Op::Mul { a: ia, b: ib } => {
                // clone the factor values to avoid overlapping borrows when ia == ib
                let bvals: Vec<S> = values[*ib].data.clone();
                add_into(&mut adj, *ia, &values[*ia].shape, &a.data, Some(&bvals));
                let avals: Vec<S> = values[*ia].data.clone();
                add_into(&mut adj, *ib, &values[*ib].shape, &a.data, Some(&avals));
            }
            Op::Scale { x, factor } => {
                let c = S::from_f64(*factor);
                let scaled: Vec<S> = a.data.iter().map(|&d| d * c).collect();
                add_into(&mut adj, *x, &values[*x].shape, &scaled, None);
            }
            Op::Relu { x } => {
                let zero = S::zero();
                let gated: Vec<S> = values[*x]
                    .data
                    .iter()
                    .zip(&a.data)
                    .map(|(&v, &d)| if v.gt_primal(zero) { d } else { zero })
                    .collect();
                add_into(&mut adj, *x, &values[*x].shape, &gated, None);
            }
            Op::Conv2d { x, kernel, padding } => {
                let xv = &values[*x];
                let kv = &values[*kernel];
                let (n, cin, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
                let (cout, kh, kw) = (kv.shape[0], kv.shape[2], kv.shape[3]);
                let (oh, ow, pt, pl) = conv_geometry(h, w, kh, kw, *padding);
                {
                    let kdata: Vec<S> = kv.data.clone();
                    let dx = acc(&mut adj, *x, &xv.shape);
                    for s in 0..n {
                        for co in 0..cout {
                            let obase = (s * cout + co) * oh * ow;
                            for ci in 0..cin {
                                let xbase = (s * cin + ci) * h * w;
                                let kbase = (co * cin + ci) * kh * kw;
                                for dkh in 0..kh {
                                    for dkw in 0..kw {
                                        let kvv = kdata[kbase + dkh * kw + dkw];
                                        let (r0, r1, c0, c1) =
                                            window(oh, ow, h, w, dkh, dkw, pt, pl);
                                        for r in r0..r1 {
                                            let ih =
                                                (r as isize + dkh as isize - pt) as usize;
                                            let xrow = xbase + ih * w;
                                            let orow = obase + r * ow;
                                            for c in c0..c1 {
                                                let iw = (c as isize + dkw as isize - pl)
                                                    as usize;
                                                dx.data[xrow + iw] = dx.data[xrow + iw]
                                                    + kvv * a.data[orow + c];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                {
                    let dk = acc(&mut adj, *kernel, &kv.shape);
                    for s in 0..n {
                        for co in 0..cout {
                            let obase = (s * cout + co) * oh * ow;
                            for ci in 0..cin {
                                let xbase = (s * cin + ci) * h * w;
                                let kbase = (co * cin + ci) * kh * kw;
                                for dkh in 0..kh {
                                    for dkw in 0..kw {
                                        let (r0, r1, c0, c1) =
                                            window(oh, ow, h, w, dkh, dkw, pt, pl);
                                        let mut acc_k = S::zero();
                                        for r in r0..r1 {
                                            let ih =
                                                (r as isize + dkh as isize - pt) as usize;
                                            let xrow = xbase + ih * w;
                                            let orow = obase + r * ow;
                                            for c in c0..c1 {
                                                let iw = (c as isize + dkw as isize - pl)
                                                    as usize;
                                                acc_k = acc_k
                                                    + a.data[orow + c] * xv.data[xrow + iw];
                                            }
                                        }
                                        dk.data[kbase + dkh * kw + dkw] =
                                            dk.data[kbase + dkh * kw + dkw] + acc_k;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxPool2x2 { x } => {
                let xv = &values[*x];
                let (n, c, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
                let (oh, ow) = (h / 2, w / 2);
                let dx = acc(&mut adj, *x, &xv.shape);
                for plane in 0..n * c {
                    let xb = plane * h * w;
                    let ob = plane * oh * ow;
                    for r in 0..oh {
                        for col in 0..ow {
                            let i = xb + 2 * r * w + 2 * col;
                            // first maximum in scan order receives the adjoint
                            let idxs = [i, i + 1, i + w, i + w + 1];
                            let mut best = 0usize;
                            for (j, &cand) in idxs.iter().enumerate().skip(1) {
                                if xv.data[cand].gt_primal(xv.data[idxs[best]]) {
                                    best = j;
                                }
                            }
                            dx.data[idxs[best]] =
                                dx.data[idxs[best]] + a.data[ob + r * ow + col];
                        }
                    }
                }
            }
            Op::Flatten { x } => {
                add_into(&mut adj, *x, &values[*x].shape, &a.data, None);
            }
            Op::Sum { x } => {
                let d = a.data[0];
                let xshape = values[*x].shape.clone();
                let dx = acc(&mut adj, *x, &xshape);
                for o in &mut dx.data {
                    *o = *o + d;
                }
            }
            Op::CrossEntropyLoss { logits } => {
                let lv = &values[*logits];
                let (n, c) = (lv.shape[0], lv.shape[1]);
                let labels = match &batch.targets {
                    Targets::Classes(l) => l,
                    _ => unreachable!("validated in forward"),
                };
                let d = a.data[0];
                let dl = acc(&mut adj, *logits, &lv.shape);
                for r in 0..n {
                    let row = &lv.data[r * c..(r + 1) * c];
                    let lse = log_sum_exp(row);
                    let y = labels[r] as usize;
                    let drow = &mut dl.data[r * c..(r + 1) * c];
                    for (j, (&l, o)) in row.iter().zip(drow.iter_mut()).enumerate() {
                        let mut g = (l - lse).exp();
                        if j == y {
                            g = g - S::one();
                        }
                        *o = *o + d * g;
                    }
                }
            }
            Op::SquaredErrorLoss { pred } => {
                let pv = &values[*pred];
                let targets = match &batch.targets {
                    Targets::Values(t) => t,
                    _ => unreachable!("validated in forward"),
                };
                let d = a.data[0];
                let two = S::from_f64(2.0);
                let dp = acc(&mut adj, *pred, &pv.shape);
                for ((o, &p), &y) in dp.data.iter_mut().zip(&pv.data).zip(targets.data()) {
                    *o = *o + d * two * (p - S::from_f64(y));
                }
            }
        }
    }
    Ok(grads)
}

fn acc<'a, S: Scalar>(
    adj: &'a mut [Option<Buf<S>>],
    id: NodeId,
    shape: &[usize],
) -> &'a mut Buf<S> {
    if adj[id].is_none() {
        adj[id] = Some(Buf::zeros(shape.to_vec()));
    }
    adj[id].as_mut().unwrap()
}

fn add_into<S: Scalar>(
    adj: &mut [Option<Buf<S>>],
    id: NodeId,
    shape: &[usize],
    contrib: &[S],
    factor: Option<&[S]>,
) {
    let buf = acc(adj, id, shape);
    match factor {
        None => {
            for (o, &d) in buf.data.iter_mut().zip(contrib) {
                *o = *o + d;
            }
        }
        Some(f) => {
            for ((o, &d), &m) in buf.data.iter_mut().zip(contrib).zip(f) {
                *o = *o + d * m;
            }
        }
    }
}

fn check_params(graph: &Graph, params: &ParamVector) -> Result<()> {
    if params.len() != graph.param_len() {
        return Err(CoreError::Config(format!(
            "graph expects {} parameters, got {}",
            graph.param_len(),
            params.len()
        )));
    }
    Ok(())
}

fn reduction_den(graph: &Graph, rows: usize) -> f64 {
    match graph.reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => rows.max(1) as f64,
    }
}

/// Mean- or sum-reduced loss (per the graph's reduction) over one batch.
pub fn forward(graph: &Graph, params: &ParamVector, batch: &Batch) -> Result<f64> {
    check_params(graph, params)?;
    Ok(loss_sum(graph, params.values(), batch)? / reduction_den(graph, batch.rows()))
}

/// Unreduced (summed) loss over one batch.
pub(crate) fn loss_sum(graph: &Graph, params: &[f64], batch: &Batch) -> Result<f64> {
    let values = forward_values::<f64>(graph, params, batch, graph.loss)?;
    Ok(values[graph.loss].data[0])
}

/// Forward value of an arbitrary node (e.g. logits for prediction).
pub fn forward_node(
    graph: &Graph,
    params: &ParamVector,
    batch: &Batch,
    node: NodeId,
) -> Result<Tensor> {
    check_params(graph, params)?;
    let values = forward_values::<f64>(graph, params.values(), batch, node)?;
    let buf = &values[node];
    Tensor::new(buf.shape.clone(), buf.data.clone())
}

/// dL/dθ over one batch, reduced per the graph's reduction.
pub fn grad(graph: &Graph, params: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    check_params(graph, params)?;
    let g = grad_sum(graph, params.values(), batch)?;
    let mut out = ParamVector::new(g, graph.partition().clone())?;
    out.scale(1.0 / reduction_den(graph, batch.rows()));
    Ok(out)
}

/// Sum-reduced gradient as a flat vector.
pub(crate) fn grad_sum(graph: &Graph, params: &[f64], batch: &Batch) -> Result<Vec<f64>> {
    let values = forward_values::<f64>(graph, params, batch, graph.loss)?;
    let g = backward_params::<f64>(graph, &values, batch, 1.0)?;
    if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
        return Err(CoreError::Numerical(format!(
            "non-finite gradient at parameter {}",
            bad
        )));
    }
    Ok(g)
}

/// Hessian-vector product `H(θ)·v` over one batch, reduced per the graph's
/// reduction. Computed by running the full forward and reverse passes in
/// dual-number arithmetic with the parameters seeded by `v`
/// (forward-over-reverse), never by finite differences.
pub fn hvp(
    graph: &Graph,
    params: &ParamVector,
    batch: &Batch,
    v: &ParamVector,
) -> Result<ParamVector> {
    check_params(graph, params)?;
    check_params(graph, v)?;
    let h = hvp_sum(graph, params.values(), v.values(), batch)?;
    let mut out = ParamVector::new(h, graph.partition().clone())?;
    out.scale(1.0 / reduction_den(graph, batch.rows()));
    Ok(out)
}

/// Sum-reduced Hessian-vector product as a flat vector.
pub(crate) fn hvp_sum(
    graph: &Graph,
    params: &[f64],
    tangent: &[f64],
    batch: &Batch,
) -> Result<Vec<f64>> {
    let dual_params: Vec<Dual> = params
        .iter()
        .zip(tangent)
        .map(|(&v, &t)| Dual::new(v, t))
        .collect();
    let values = forward_values::<Dual>(graph, &dual_params, batch, graph.loss)?;
    let g = backward_params::<Dual>(graph, &values, batch, Dual::new(1.0, 0.0))?;
    let out: Vec<f64> = g.iter().map(|d| d.t).collect();
    if let Some(bad) = out.iter().position(|v| !v.is_finite()) {
        return Err(CoreError::Numerical(format!(
            "non-finite Hessian-vector product at parameter {}",
            bad
        )));
    }
    Ok(out)
}
