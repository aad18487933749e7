//! Batch forward pass and exact reverse-mode gradients of the batch loss.
//!
//! The batch objective is
//!
//! ```text
//! γ · [ mean_t (1 − s⁺_{j(t)} + s⁻_t)² + ½ Σ_{W1..W4} λ‖W‖² ]
//! + (1 − γ) · [ mean_e ½ (CE(c_a, b_a ∘ b_b) + CE(c_b, b_a ∘ b_b)) + ½ Σ_{W1,W2,W3,W5} λ‖W‖² ]
//! ```
//!
//! where negative `t` is paired with positive `j(t) = t / m` and `m` is the
//! number of negatives per positive. Relu subgradients at 0 are 0. A branch
//! whose weight is exactly zero is skipped, so its exclusive parameters get
//! exactly zero gradient.

use rand::RngCore;

use crate::error::{PsgError, Result};
use crate::graph::Graph;
use crate::losses::{
    combine_logits, cross_entropy, margin_term, regularizer, softmax, total_loss, Lambdas,
    CONTRASTIVE_GROUPS, PAIRWISE_GROUPS,
};
use crate::matrix::Matrix;
use crate::model::{
    encode_nodes, predict_label_traced, predict_link_traced, Aggregator, EncoderTrace,
    ForwardMode, InputEncoding, LabelTrace, LinkTrace, ModelParams, ParamGroup,
};
use crate::path_features::EdgeFeatureStore;
use crate::scalar::{relu_grad, Scalar};

/// Positive pairs and their negatives; negative `t` pairs with positive
/// `t / (negatives.len() / positives.len())`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

impl Batch {
    pub fn negatives_per_positive(&self) -> Result<usize> {
        let p = self.positives.len();
        let n = self.negatives.len();
        if p == 0 || n == 0 || !n.is_multiple_of(p) {
            return Err(PsgError::Precondition(format!(
                "batch needs a positive multiple of {p} negatives, got {n}"
            )));
        }
        Ok(n / p)
    }
}

/// How the batch terms are weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComposition<T = f64> {
    pub gamma: T,
    pub lambdas: Lambdas<T>,
    /// Multiplier on every pair's data term (not on the regularizers).
    pub pair_weight: T,
}

impl<T: Scalar> LossComposition<T> {
    pub fn new(gamma: T, lambdas: Lambdas<T>) -> Self {
        LossComposition {
            gamma,
            lambdas,
            pair_weight: T::one(),
        }
    }

    fn pairwise_weight(&self) -> T {
        self.gamma
    }

    fn contrastive_weight(&self) -> T {
        T::one() - self.gamma
    }
}

/// Everything recorded by [`forward_batch`].
#[derive(Debug, Clone)]
pub struct BatchForward<T = f64> {
    pub encoder: EncoderTrace<T>,
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    pub pos_links: Vec<LinkTrace<T>>,
    pub neg_links: Vec<LinkTrace<T>>,
    /// Per positive edge, label traces of both endpoints and their content labels.
    pub labels: Vec<(LabelTrace<T>, LabelTrace<T>, usize, usize)>,
    /// `L_h`, including its regularizer.
    pub pairwise: T,
    /// `L_c`, including its regularizer (data term 0 without content labels).
    pub contrastive: T,
    pub total: T,
}

impl<T: Scalar> BatchForward<T> {
    pub fn pos_scores(&self) -> Vec<T> {
        self.pos_links.iter().map(|t| t.score).collect()
    }

    pub fn neg_scores(&self) -> Vec<T> {
        self.neg_links.iter().map(|t| t.score).collect()
    }

    /// Relu on/off pattern of every activation in the pass, plus max-aggregator
    /// winners. Two passes with equal patterns lie on the same linear piece.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let on = |x: T| usize::from(x > T::zero());
        for layer in &self.encoder.layers {
            out.extend(layer.message_pre.as_slice().iter().map(|&x| on(x)));
            out.extend(layer.pre.as_slice().iter().map(|&x| on(x)));
            out.extend(layer.argmax.iter().copied());
        }
        for link in self.pos_links.iter().chain(&self.neg_links) {
            for pre in &link.pre {
                out.extend(pre.iter().map(|&x| on(x)));
            }
        }
        for (a, b, _, _) in &self.labels {
            out.extend(a.pre.iter().chain(&b.pre).map(|&x| on(x)));
        }
        out
    }
}

/// Runs the encoder once over every endpoint in the batch, then the link
/// predictor on each pair and, when content labels are given, the label
/// predictor on both endpoints of each positive.
#[allow(clippy::too_many_arguments)]
pub fn forward_batch<T: Scalar>(
    g: &Graph<T>,
    params: &ModelParams<T>,
    feats: &EdgeFeatureStore<T>,
    content_labels: Option<&[usize]>,
    batch: &Batch,
    comp: &LossComposition<T>,
    mode: ForwardMode,
    rng: &mut dyn RngCore,
) -> Result<BatchForward<T>> {
    let m = batch.negatives_per_positive()?;
    if comp.gamma < T::one() && content_labels.is_none() {
        return Err(PsgError::Precondition(
            "content labels are required when gamma < 1".into(),
        ));
    }
    if let Some(labels) = content_labels {
        if labels.len() != g.num_nodes() {
            return Err(PsgError::Dimension(format!(
                "{} content labels for {} nodes",
                labels.len(),
                g.num_nodes()
            )));
        }
        let c = params.config.num_classes;
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(PsgError::Precondition(format!(
                "content label {bad} out of range for {c} classes"
            )));
        }
    }

    let targets: Vec<usize> = batch
        .positives
        .iter()
        .chain(&batch.negatives)
        .flat_map(|&(a, b)| [a, b])
        .collect();
    let encoder = encode_nodes(g, params, feats, &targets, mode, rng)?;
    let emb = |v: usize| {
        encoder
            .embedding(v)
            .ok_or_else(|| PsgError::Internal(format!("node {v} missing from encoder trace")))
    };

    let mut pos_links = Vec::with_capacity(batch.positives.len());
    for &(a, b) in &batch.positives {
        pos_links.push(predict_link_traced(params, emb(a)?, emb(b)?, mode.dropout, rng)?);
    }
    let mut neg_links = Vec::with_capacity(batch.negatives.len());
    for &(a, b) in &batch.negatives {
        neg_links.push(predict_link_traced(params, emb(a)?, emb(b)?, mode.dropout, rng)?);
    }

    let pw = comp.pair_weight;
    let margin_sum: T = neg_links
        .iter()
        .enumerate()
        .map(|(t, neg)| margin_term(pos_links[t / m].score, neg.score))
        .sum();
    let pairwise = pw * margin_sum / T::from_count(neg_links.len())
        + regularizer(params, &comp.lambdas, &PAIRWISE_GROUPS);

    let mut labels = Vec::new();
    let mut ce_sum = T::zero();
    if let Some(content) = content_labels {
        let half = T::lit(0.5);
        for &(a, b) in &batch.positives {
            let la = predict_label_traced(params, emb(a)?)?;
            let lb = predict_label_traced(params, emb(b)?)?;
            let z = combine_logits(&la.logits, &lb.logits)?;
            ce_sum += half * (cross_entropy(content[a], &z)? + cross_entropy(content[b], &z)?);
            labels.push((la, lb, content[a], content[b]));
        }
    }
    let ce_mean = if labels.is_empty() {
        T::zero()
    } else {
        pw * ce_sum / T::from_count(labels.len())
    };
    let contrastive = ce_mean + regularizer(params, &comp.lambdas, &CONTRASTIVE_GROUPS);
    let total = total_loss(pairwise, contrastive, comp.gamma)?;

    Ok(BatchForward {
        encoder,
        positives: batch.positives.clone(),
        negatives: batch.negatives.clone(),
        pos_links,
        neg_links,
        labels,
        pairwise,
        contrastive,
        total,
    })
}

/// Gradients shaped exactly like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape<T = f64> {
    pub grads: ModelParams<T>,
}

impl<T: Scalar> GradientTape<T> {
    pub fn zeros_for(params: &ModelParams<T>) -> Self {
        GradientTape {
            grads: params.zeros_like(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.is_finite()
    }

    /// Gradient matrix by checkpoint name (e.g. `encoder.0.w2`).
    pub fn get(&self, name: &str) -> Option<&Matrix<T>> {
        self.grads
            .tensors()
            .into_iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, _, m)| m)
    }
}

fn link_backward<T: Scalar>(
    params: &ModelParams<T>,
    trace: &LinkTrace<T>,
    d_score: T,
    tape: &mut ModelParams<T>,
) -> Vec<T> {
    let mut g = vec![d_score];
    for i in (0..params.readout.len()).rev() {
        tape.readout[i].add_outer(&g, &trace.inputs[i]);
        let mut dx = vec![T::zero(); trace.inputs[i].len()];
        params.readout[i].matvec_t_acc(&g, &mut dx);
        if i > 0 {
            let pre = &trace.pre[i - 1];
            let mask = trace.masks[i - 1].as_deref();
            for (c, d) in dx.iter_mut().enumerate() {
                *d *= relu_grad(pre[c]) * mask.map_or(T::one(), |m| m[c]);
            }
        }
        g = dx;
    }
    g
}

fn label_backward<T: Scalar>(
    params: &ModelParams<T>,
    trace: &LabelTrace<T>,
    d_logits: &[T],
    tape: &mut ModelParams<T>,
    dh: &mut [T],
) {
    let d_pre: Vec<T> = d_logits
        .iter()
        .zip(&trace.pre)
        .map(|(&d, &p)| d * relu_grad(p))
        .collect();
    tape.label_head.add_outer(&d_pre, &trace.input);
    params.label_head.matvec_t_acc(&d_pre, dh);
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
}

/// Exact gradient of the batch loss recorded in `fwd`.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    fwd: &BatchForward<T>,
    comp: &LossComposition<T>,
) -> Result<GradientTape<T>> {
    let npos = fwd.positives.len();
    let nneg = fwd.negatives.len();
    if fwd.pos_links.len() != npos || fwd.neg_links.len() != nneg || npos == 0 || !nneg.is_multiple_of(npos) {
        return Err(PsgError::Internal(
            "batch trace does not match its pair lists".into(),
        ));
    }
    if !fwd.labels.is_empty() && fwd.labels.len() != npos {
        return Err(PsgError::Internal(
            "label traces do not cover every positive edge".into(),
        ));
    }
    let m = nneg / npos;
    let enc = &fwd.encoder;
    let cfg = &params.config;
    let mut tape = params.zeros_like();
    let mut d_top = Matrix::zeros(enc.targets().len(), cfg.output_dim());
    let row = |v: usize| {
        enc.target_row(v)
            .ok_or_else(|| PsgError::Internal(format!("node {v} missing from encoder trace")))
    };

    let w_h = comp.pairwise_weight();
    if w_h != T::zero() {
        let coef = w_h * comp.pair_weight * T::lit(2.0) / T::from_count(nneg);
        let mut d_pos = vec![T::zero(); npos];
        for (t, neg) in fwd.neg_links.iter().enumerate() {
            let j = t / m;
            let r = T::one() - fwd.pos_links[j].score + neg.score;
            d_pos[j] -= coef * r;
            let d_prod = link_backward(params, neg, coef * r, &mut tape);
            let (a, b) = fwd.negatives[t];
            accumulate_pair(&mut d_top, row(a)?, row(b)?, &d_prod, neg);
        }
        for (j, pos) in fwd.pos_links.iter().enumerate() {
            let d_prod = link_backward(params, pos, d_pos[j], &mut tape);
            let (a, b) = fwd.positives[j];
            accumulate_pair(&mut d_top, row(a)?, row(b)?, &d_prod, pos);
        }
    }

    let w_c = comp.contrastive_weight();
    if w_c != T::zero() && !fwd.labels.is_empty() {
        let coef = w_c * comp.pair_weight / T::from_count(fwd.labels.len());
        let half = T::lit(0.5);
        for (e, (la, lb, ca, cb)) in fwd.labels.iter().enumerate() {
            let z = combine_logits(&la.logits, &lb.logits)?;
            let mut dz = softmax(&z);
            dz[*ca] -= half;
            dz[*cb] -= half;
            dz.iter_mut().for_each(|d| *d *= coef);
            let db_a: Vec<T> = dz.iter().zip(&lb.logits).map(|(&d, &x)| d * x).collect();
            let db_b: Vec<T> = dz.iter().zip(&la.logits).map(|(&d, &x)| d * x).collect();
            let (a, b) = fwd.positives[e];
            let (ra, rb) = (row(a)?, row(b)?);
            label_backward(params, la, &db_a, &mut tape, d_top.row_mut(ra));
            label_backward(params, lb, &db_b, &mut tape, d_top.row_mut(rb));
        }
    }

    encoder_backward(params, enc, d_top, &mut tape)?;

    let in_pairwise = |g: ParamGroup| PAIRWISE_GROUPS.contains(&g);
    let in_contrastive = |g: ParamGroup| CONTRASTIVE_GROUPS.contains(&g);
    let groups: Vec<ParamGroup> = params.tensors().into_iter().map(|(_, g, _)| g).collect();
    for ((group, grad), (_, _, w)) in groups
        .into_iter()
        .zip(tape.tensors_mut())
        .zip(params.tensors())
    {
        let lambda = comp.lambdas.get(group);
        if lambda == T::zero() {
            continue;
        }
        let mut coef = T::zero();
        if in_pairwise(group) && w_h != T::zero() {
            coef += w_h;
        }
        if in_contrastive(group) && w_c != T::zero() {
            coef += w_c;
        }
        if coef != T::zero() {
            grad.add_scaled(w, coef * lambda);
        }
    }

    Ok(GradientTape { grads: tape })
}

fn accumulate_pair<T: Scalar>(
    d_top: &mut Matrix<T>,
    row_a: usize,
    row_b: usize,
    d_prod: &[T],
    trace: &LinkTrace<T>,
) {
    let da: Vec<T> = d_prod.iter().zip(&trace.right).map(|(&d, &x)| d * x).collect();
    let db: Vec<T> = d_prod.iter().zip(&trace.left).map(|(&d, &x)| d * x).collect();
    add_into(d_top.row_mut(row_a), &da);
    add_into(d_top.row_mut(row_b), &db);
}

fn encoder_backward<T: Scalar>(
    params: &ModelParams<T>,
    enc: &EncoderTrace<T>,
    d_top: Matrix<T>,
    tape: &mut ModelParams<T>,
) -> Result<()> {
    let cfg = &params.config;
    let mut d_above = d_top;
    for l in (0..cfg.num_layers).rev() {
        let layer = &params.layers[l];
        let trace = &enc.layers[l];
        let below = &enc.hidden[l];
        let d_in = cfg.layer_input_dim(l);
        let mut d_below = Matrix::zeros(enc.levels[l].len(), d_in);
        let (w1_grad, w2_grad, w3_grad) = {
            let tl = &mut tape.layers[l];
            (&mut tl.w1, &mut tl.w2, tl.w3.as_mut())
        };
        let mut w3_grad = w3_grad;

        for i in 0..enc.levels[l + 1].len() {
            let mask = trace.mask.as_ref().map(|mk| mk.row(i));
            let dz: Vec<T> = d_above
                .row(i)
                .iter()
                .zip(trace.pre.row(i))
                .enumerate()
                .map(|(c, (&d, &p))| d * relu_grad(p) * mask.map_or(T::one(), |mk| mk[c]))
                .collect();
            if dz.iter().all(|&x| x == T::zero()) {
                continue;
            }
            w1_grad.add_outer(&dz, below.row(i));
            layer.w1.matvec_t_acc(&dz, d_below.row_mut(i));
            w2_grad.add_outer(&dz, trace.aggregate.row(i));
            let mut d_agg = vec![T::zero(); d_in];
            layer.w2.matvec_t_acc(&dz, &mut d_agg);

            let (start, end) = (trace.message_offsets[i], trace.message_offsets[i + 1]);
            if start == end {
                continue;
            }
            let mut d_msg = vec![T::zero(); d_in];
            for msg in start..end {
                match cfg.aggregator {
                    Aggregator::Mean => {
                        let n = T::from_count(end - start);
                        d_msg.iter_mut().zip(&d_agg).for_each(|(d, &a)| *d = a / n);
                    }
                    Aggregator::Sum => d_msg.copy_from_slice(&d_agg),
                    Aggregator::Max => {
                        for c in 0..d_in {
                            d_msg[c] = if trace.argmax[i * d_in + c] == msg {
                                d_agg[c]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
                let pre = trace.message_pre.row(msg);
                d_msg
                    .iter_mut()
                    .zip(pre)
                    .for_each(|(d, &p)| *d *= relu_grad(p));
                add_into(d_below.row_mut(trace.message_rows[msg]), &d_msg);
                if let Some(w3) = w3_grad.as_deref_mut() {
                    w3.add_outer(&d_msg, trace.edge_inputs.row(msg));
                }
            }
        }
        d_above = d_below;
    }

    match &mut tape.input {
        InputEncoding::Embedding(table) => {
            for (i, &v) in enc.levels[0].iter().enumerate() {
                add_into(table.row_mut(v), d_above.row(i));
            }
        }
        InputEncoding::Projection(p) => {
            let x = enc.input_features.as_ref().ok_or_else(|| {
                PsgError::Internal("projection input without recorded features".into())
            })?;
            for i in 0..enc.levels[0].len() {
                p.add_outer(d_above.row(i), x.row(i));
            }
        }
    }
    Ok(())
}
