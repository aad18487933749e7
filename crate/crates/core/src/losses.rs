//! Pairwise ranking loss, contrastive label loss and their weighted sum.

use crate::error::{PsgError, Result};
use crate::model::{ModelParams, ParamGroup};
use crate::scalar::Scalar;

/// L2 weights `λ₁..λ₅`, indexed by [`ParamGroup::index`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambdas<T = f64>(pub [T; 5]);

impl<T: Scalar> Lambdas<T> {
    pub fn zero() -> Self {
        Lambdas([T::zero(); 5])
    }

    pub fn uniform(value: T) -> Self {
        Lambdas([value; 5])
    }

    #[inline]
    pub fn get(&self, group: ParamGroup) -> T {
        self.0[group.index()]
    }
}

/// Groups regularized inside the pairwise term (`W1..W4`).
pub const PAIRWISE_GROUPS: [ParamGroup; 4] = [
    ParamGroup::SelfWeight,
    ParamGroup::NeighborWeight,
    ParamGroup::EdgeWeight,
    ParamGroup::Readout,
];

/// Groups regularized inside the contrastive term (`W1, W2, W3, W5`).
pub const CONTRASTIVE_GROUPS: [ParamGroup; 4] = [
    ParamGroup::SelfWeight,
    ParamGroup::NeighborWeight,
    ParamGroup::EdgeWeight,
    ParamGroup::LabelHead,
];

/// `½ Σ λ_g ‖W‖²_F` over every matrix whose group is in `groups`.
pub fn regularizer<T: Scalar>(params: &ModelParams<T>, lambdas: &Lambdas<T>, groups: &[ParamGroup]) -> T {
    let half = T::lit(0.5);
    params
        .tensors()
        .into_iter()
        .filter(|(_, g, _)| groups.contains(g))
        .map(|(_, g, m)| {
            let lambda = lambdas.get(g);
            if lambda == T::zero() {
                T::zero()
            } else {
                half * lambda * m.frobenius_sq()
            }
        })
        .sum()
}

/// `(1 - s⁺ + s⁻)²`.
#[inline]
pub fn margin_term<T: Scalar>(pos: T, neg: T) -> T {
    let r = T::one() - pos + neg;
    r * r
}

/// Mean squared margin over aligned positive/negative score pairs plus the
/// `W1..W4` regularizer.
pub fn pairwise_loss<T: Scalar>(
    pos_scores: &[T],
    neg_scores: &[T],
    params: &ModelParams<T>,
    lambdas: &Lambdas<T>,
) -> Result<T> {
    if pos_scores.len() != neg_scores.len() {
        return Err(PsgError::Precondition(format!(
            "{} positive scores but {} negative scores",
            pos_scores.len(),
            neg_scores.len()
        )));
    }
    if pos_scores.is_empty() {
        return Err(PsgError::Precondition("no score pairs".into()));
    }
    let data: T = pos_scores
        .iter()
        .zip(neg_scores)
        .map(|(&p, &n)| margin_term(p, n))
        .sum::<T>()
        / T::from_count(pos_scores.len());
    Ok(data + regularizer(params, lambdas, &PAIRWISE_GROUPS))
}

/// Numerically stable `ln Σ exp(x)`.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

pub fn softmax<T: Scalar>(xs: &[T]) -> Vec<T> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|&x| (x - lse).exp()).collect()
}

/// Hard-target cross-entropy `-ln softmax(logits)[target]`.
pub fn cross_entropy<T: Scalar>(target: usize, logits: &[T]) -> Result<T> {
    if target >= logits.len() {
        return Err(PsgError::Precondition(format!(
            "class {target} out of range for {} logits",
            logits.len()
        )));
    }
    Ok(log_sum_exp(logits) - logits[target])
}

/// Hadamard combination `b_i ∘ b_j` of two endpoints' label logits.
pub fn combine_logits<T: Scalar>(b_i: &[T], b_j: &[T]) -> Result<Vec<T>> {
    if b_i.len() != b_j.len() {
        return Err(PsgError::Dimension(format!(
            "label logits of length {} and {}",
            b_i.len(),
            b_j.len()
        )));
    }
    Ok(b_i.iter().zip(b_j).map(|(&a, &b)| a * b).collect())
}

/// `CE(c_i, b_i ∘ b_j)` plus the `W1, W2, W3, W5` regularizer.
pub fn contrastive_loss<T: Scalar>(
    content_label: usize,
    logits_i: &[T],
    logits_j: &[T],
    params: &ModelParams<T>,
    lambdas: &Lambdas<T>,
) -> Result<T> {
    let combined = combine_logits(logits_i, logits_j)?;
    Ok(cross_entropy(content_label, &combined)? + regularizer(params, lambdas, &CONTRASTIVE_GROUPS))
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(PsgError::Config(format!("gamma {gamma} outside [0, 1]")))
    }
}

/// `γ·L_h + (1 − γ)·L_c`. The endpoints return the selected term unchanged.
pub fn total_loss<T: Scalar>(pairwise: T, contrastive: T, gamma: T) -> Result<T> {
    check_gamma(gamma.as_f64())?;
    if gamma == T::one() {
        Ok(pairwise)
    } else if gamma == T::zero() {
        Ok(contrastive)
    } else {
        Ok(gamma * pairwise + (T::one() - gamma) * contrastive)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::model::{InputKind, ModelConfig};

    fn params() -> ModelParams {
        let g: Graph = Graph::from_edges(3, [(0, 1)]).unwrap();
        let cfg = ModelConfig {
            embed_dim: 2,
            hidden_dim: 2,
            num_classes: 2,
            edge_dim: 1,
            ..ModelConfig::default()
        };
        let mut p = ModelParams::zeros(&cfg, InputKind::for_graph(&g)).unwrap();
        for (i, m) in p.tensors_mut().into_iter().enumerate() {
            m.as_mut_slice().iter_mut().for_each(|x| *x = (i + 1) as f64);
        }
        p
    }

    #[test]
    fn pairwise_examples() {
        let p = params();
        let zero = Lambdas::zero();
        assert_eq!(pairwise_loss(&[1.0], &[0.0], &p, &zero).unwrap(), 0.0);
        assert_eq!(pairwise_loss(&[0.4, -2.0], &[0.4, -2.0], &p, &zero).unwrap(), 1.0);
        assert!(pairwise_loss(&[1.0], &[0.0, 1.0], &p, &zero).is_err());
    }

    #[test]
    fn regularizer_groups() {
        let p = params();
        let mut lambdas = Lambdas::zero();
        lambdas.0[ParamGroup::LabelHead.index()] = 2.0;
        // pairwise term ignores W5
        assert_eq!(pairwise_loss(&[1.0], &[0.0], &p, &lambdas).unwrap(), 0.0);
        let w5 = p.label_head.frobenius_sq();
        assert_eq!(regularizer(&p, &lambdas, &CONTRASTIVE_GROUPS), w5);
    }

    #[test]
    fn cross_entropy_cases() {
        let uniform = vec![0.7; 50];
        assert!((cross_entropy(3, &uniform).unwrap() - 50f64.ln()).abs() < 1e-12);
        let peaked = [800.0, 0.0, -3.0];
        assert!(cross_entropy(0, &peaked).unwrap() < 1e-300);
        assert!(cross_entropy(3, &peaked).is_err());
        let p = params();
        assert!(contrastive_loss(2, &[1.0, 1.0], &[1.0, 1.0], &p, &Lambdas::zero()).is_err());
        let lse = log_sum_exp(&[1000.0, 1000.0]);
        assert!((lse - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn total_loss_weighting() {
        assert_eq!(total_loss(0.37, 9.0, 1.0).unwrap(), 0.37);
        assert_eq!(total_loss(4.0, 2.1, 0.0).unwrap(), 2.1);
        assert_eq!(total_loss(1.0, 3.0, 0.5).unwrap(), 2.0);
        assert!(matches!(total_loss(1.0, 3.0, 1.5), Err(PsgError::Config(_))));
        assert!(total_loss(1.0, 3.0, -0.1).is_err());
    }
}
